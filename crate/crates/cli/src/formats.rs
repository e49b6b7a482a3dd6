//! Bit-exact file formats: material sequences, SPAMM records, weight
//! checkpoints, and ASCII PLY export. Every write goes through a temporary
//! file that is renamed into place.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use vndm_core::geometry::QuadMesh;
use vndm_core::sim::clip::{ImagingPlane, LineType, SpammKey, SpammSequence, View};
use vndm_core::vec3::Vec3;
use vndm_core::{Error, GridDims, MaterialGrid, MotionSequence, NormMeta, Result};
use vndm_tape::Matrix;

pub const SEQUENCE_MAGIC: &[u8] = b"VNDM1\n";
pub const SPAMM_MAGIC: &[u8] = b"VNDMS1\n";
pub const CHECKPOINT_MAGIC: &[u8] = b"VNDMW1";

/// Writes `bytes` to `path` via a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::Data(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Reads a file, naming it in the error.
pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], what: &'static str) -> Self {
        Self { buf, pos: 0, what }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format(format!(
                "{} truncated at byte {} (needed {n} more)",
                self.what, self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn expect(&mut self, magic: &[u8]) -> Result<()> {
        if self.take(magic.len()).ok() != Some(magic) {
            return Err(Error::Format(format!("{}: bad magic", self.what)));
        }
        Ok(())
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn line(&mut self) -> Result<&'a str> {
        let rest = &self.buf[self.pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Format(format!("{}: unterminated header line", self.what)))?;
        let s = std::str::from_utf8(&rest[..end])
            .map_err(|_| Error::Format(format!("{}: header is not UTF-8", self.what)))?;
        self.pos += end + 1;
        Ok(s)
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format(format!(
                "{}: {} trailing bytes",
                self.what,
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

/// Ordered `key=value` header lines terminated by `end`.
struct Header<'a> {
    fields: Vec<(&'a str, &'a str)>,
    what: &'static str,
}

impl<'a> Header<'a> {
    fn read(r: &mut Reader<'a>) -> Result<Self> {
        let mut fields = Vec::new();
        loop {
            let line = r.line()?;
            if line == "end" {
                break;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("{}: malformed header line {line:?}", r.what)))?;
            fields.push((k, v));
        }
        Ok(Self { fields, what: r.what })
    }

    fn get(&self, key: &str) -> Result<&'a str> {
        self.fields
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| *v)
            .ok_or_else(|| Error::Format(format!("{}: missing header field {key}", self.what)))
    }

    fn all<'k>(&'k self, key: &'k str) -> impl Iterator<Item = &'a str> + 'k {
        self.fields.iter().filter(move |(k, _)| *k == key).map(|(_, v)| *v)
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.get(key)?;
        v.parse()
            .map_err(|_| Error::Format(format!("{}: header field {key} has bad value {v:?}", self.what)))
    }
}

fn parse_list<T: std::str::FromStr>(v: &str, what: &str) -> Result<Vec<T>> {
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',')
        .map(|s| s.parse().map_err(|_| Error::Format(format!("{what}: bad list entry {s:?}"))))
        .collect()
}

fn join<T: std::fmt::Display>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn check_label(s: &str) -> Result<()> {
    if s.contains('\n') || s.contains('\r') {
        return Err(Error::Data(format!("label {s:?} contains a line break")));
    }
    Ok(())
}

pub fn encode_sequence(seq: &MotionSequence) -> Result<Vec<u8>> {
    check_label(&seq.subject_id)?;
    let d = seq.dims();
    let mut head = String::new();
    writeln!(head, "subject_id={}", seq.subject_id).unwrap();
    writeln!(head, "n_u={}\nn_v={}\nn_w={}\nframes={}", d.n_u, d.n_v, d.n_w, seq.len()).unwrap();
    writeln!(head, "layers={}", join(&seq.layers)).unwrap();
    writeln!(head, "es_index={}", seq.es_index).unwrap();
    writeln!(head, "norm_center={}", join(&seq.norm.center)).unwrap();
    writeln!(head, "norm_scales={}", join(&seq.norm.scales)).unwrap();
    head.push_str("end\n");
    let mut out = Vec::with_capacity(SEQUENCE_MAGIC.len() + head.len() + seq.len() * d.len() * 24);
    out.extend_from_slice(SEQUENCE_MAGIC);
    out.extend_from_slice(head.as_bytes());
    for f in &seq.frames {
        for p in &f.points {
            for c in p {
                out.extend_from_slice(&c.to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn decode_sequence(bytes: &[u8]) -> Result<MotionSequence> {
    let mut r = Reader::new(bytes, "sequence file");
    r.expect(SEQUENCE_MAGIC)?;
    let h = Header::read(&mut r)?;
    let dims = GridDims::new(h.parse("n_u")?, h.parse("n_v")?, h.parse("n_w")?)?;
    let frames: usize = h.parse("frames")?;
    let layers: Vec<usize> = parse_list(h.get("layers")?, "layers")?;
    let center: Vec<f64> = parse_list(h.get("norm_center")?, "norm_center")?;
    let scales: Vec<f64> = parse_list(h.get("norm_scales")?, "norm_scales")?;
    if center.len() != 3 || scales.len() != 3 {
        return Err(Error::Format("normalization metadata needs 3 components".into()));
    }
    let expected = frames * dims.len() * 3 * 8;
    if bytes.len() - r.pos != expected {
        return Err(Error::Format(format!(
            "sequence payload is {} bytes, expected {expected} for {frames} frames of {dims:?}",
            bytes.len() - r.pos
        )));
    }
    let mut grids = Vec::with_capacity(frames);
    for _ in 0..frames {
        let mut pts = Vec::with_capacity(dims.len());
        for _ in 0..dims.len() {
            pts.push([r.f64()?, r.f64()?, r.f64()?]);
        }
        grids.push(MaterialGrid::new(dims, pts)?);
    }
    r.finish()?;
    let mut seq = MotionSequence::new(h.get("subject_id")?, grids, layers, h.parse("es_index")?)?;
    seq.norm = NormMeta {
        center: [center[0], center[1], center[2]],
        scales: [scales[0], scales[1], scales[2]],
    };
    Ok(seq)
}

pub fn write_sequence(path: &Path, seq: &MotionSequence) -> Result<()> {
    write_atomic(path, &encode_sequence(seq)?)
}

pub fn read_sequence(path: &Path) -> Result<MotionSequence> {
    decode_sequence(&read_file(path)?).map_err(|e| in_file(e, path))
}

fn in_file(e: Error, path: &Path) -> Error {
    match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        Error::Data(m) => Error::Data(format!("{}: {m}", path.display())),
        other => other,
    }
}

/// SPAMM file: textual header (frames, N_s, planes), then binary records of
/// key fields followed by a presence flag and three coordinates per frame.
pub fn encode_spamm(s: &SpammSequence) -> Vec<u8> {
    let mut head = String::new();
    writeln!(head, "frames={}\nn_s={}\nrecords={}", s.frames, s.n_s, s.records.len()).unwrap();
    for p in &s.planes {
        writeln!(
            head,
            "plane={},{},{},{},{}",
            p.id,
            p.view.code(),
            join(&p.origin),
            join(&p.normal),
            p.param
        )
        .unwrap();
    }
    head.push_str("end\n");
    let mut out = Vec::new();
    out.extend_from_slice(SPAMM_MAGIC);
    out.extend_from_slice(head.as_bytes());
    for (k, v) in &s.records {
        out.extend_from_slice(&k.plane.to_le_bytes());
        out.push(k.view.code());
        out.extend_from_slice(&k.w.to_le_bytes());
        out.push(k.line.code());
        out.extend_from_slice(&k.line_index.to_le_bytes());
        out.extend_from_slice(&k.ordinal.to_le_bytes());
        for p in v {
            out.push(p.is_some() as u8);
            for c in p.unwrap_or([0.0; 3]) {
                out.extend_from_slice(&c.to_le_bytes());
            }
        }
    }
    out
}

pub fn decode_spamm(bytes: &[u8]) -> Result<SpammSequence> {
    let mut r = Reader::new(bytes, "SPAMM file");
    r.expect(SPAMM_MAGIC)?;
    let h = Header::read(&mut r)?;
    let frames: usize = h.parse("frames")?;
    let n_s: usize = h.parse("n_s")?;
    let count: usize = h.parse("records")?;
    let mut planes = Vec::new();
    for v in h.all("plane") {
        let f: Vec<f64> = parse_list(v, "plane")?;
        if f.len() != 9 {
            return Err(Error::Format(format!("plane entry {v:?} needs 9 fields")));
        }
        let view = View::from_code(f[1] as u8).ok_or_else(|| Error::Format(format!("bad view in plane {v:?}")))?;
        planes.push(ImagingPlane {
            id: f[0] as u32,
            view,
            origin: [f[2], f[3], f[4]],
            normal: [f[5], f[6], f[7]],
            param: f[8],
        });
    }
    let mut records = BTreeMap::new();
    for n in 0..count {
        let plane = r.u32()?;
        let view = View::from_code(r.u8()?).ok_or_else(|| Error::Format(format!("record {n}: bad view code")))?;
        let w = r.u32()?;
        let line = LineType::from_code(r.u8()?).ok_or_else(|| Error::Format(format!("record {n}: bad line code")))?;
        let line_index = r.u32()?;
        let ordinal = r.u32()?;
        let mut v: Vec<Option<Vec3>> = Vec::with_capacity(frames);
        for _ in 0..frames {
            let flag = r.u8()?;
            let p = [r.f64()?, r.f64()?, r.f64()?];
            v.push(match flag {
                0 => None,
                1 => Some(p),
                f => return Err(Error::Format(format!("record {n}: presence flag {f}"))),
            });
        }
        let key = SpammKey {
            plane,
            view,
            w,
            line,
            line_index,
            ordinal,
        };
        if records.insert(key, v).is_some() {
            return Err(Error::Format(format!("record {n}: duplicate key {key:?}")));
        }
    }
    r.finish()?;
    SpammSequence::from_records(frames, planes, n_s, records)
}

pub fn write_spamm(path: &Path, s: &SpammSequence) -> Result<()> {
    write_atomic(path, &encode_spamm(s))
}

pub fn read_spamm(path: &Path) -> Result<SpammSequence> {
    decode_spamm(&read_file(path)?).map_err(|e| in_file(e, path))
}

/// Named tensors, in order.
pub type Tensors = Vec<(String, Matrix)>;

/// `VNDMW1`, a u64 tensor count, then per tensor: name length (u32), name,
/// rank (u32), dims (u64 each), row-major f64 payload.
pub fn encode_checkpoint(tensors: &[(String, Matrix)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(tensors.len() as u64).to_le_bytes());
    for (name, m) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&2u32.to_le_bytes());
        out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
        out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
        for v in m.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Tensors> {
    let mut r = Reader::new(bytes, "checkpoint");
    r.expect(CHECKPOINT_MAGIC)?;
    let count = r.u64()? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for n in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Format(format!("tensor {n}: name is not UTF-8")))?
            .to_string();
        let rank = r.u32()? as usize;
        let dims: Vec<usize> = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<_>>()?;
        let (rows, cols) = match dims[..] {
            [] => (1, 1),
            [c] => (1, c),
            [rows, cols] => (rows, cols),
            _ => return Err(Error::Format(format!("tensor {name}: rank {rank} is not supported"))),
        };
        let total = rows
            .checked_mul(cols)
            .filter(|t| t.checked_mul(8).is_some_and(|b| b <= bytes.len()))
            .ok_or_else(|| Error::Format(format!("tensor {name}: implausible shape {dims:?}")))?;
        let data = (0..total).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        out.push((name, Matrix::from_vec(rows, cols, data)));
    }
    r.finish()?;
    Ok(out)
}

pub fn write_checkpoint(path: &Path, tensors: &[(String, Matrix)]) -> Result<()> {
    write_atomic(path, &encode_checkpoint(tensors))
}

pub fn read_checkpoint(path: &Path) -> Result<Tensors> {
    decode_checkpoint(&read_file(path)?).map_err(|e| in_file(e, path))
}

/// ASCII PLY with one quad face per mesh face.
pub fn encode_ply(mesh: &QuadMesh) -> String {
    let mut s = String::new();
    writeln!(s, "ply\nformat ascii 1.0").unwrap();
    writeln!(s, "comment layer {}", mesh.layer).unwrap();
    writeln!(s, "element vertex {}", mesh.vertices.len()).unwrap();
    writeln!(s, "property double x\nproperty double y\nproperty double z").unwrap();
    writeln!(s, "element face {}", mesh.faces.len()).unwrap();
    writeln!(s, "property list uchar int vertex_indices\nend_header").unwrap();
    for p in &mesh.vertices {
        writeln!(s, "{} {} {}", p[0], p[1], p[2]).unwrap();
    }
    for f in &mesh.faces {
        writeln!(s, "4 {} {} {} {}", f[0], f[1], f[2], f[3]).unwrap();
    }
    s
}
