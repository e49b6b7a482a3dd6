//! Fixed imaging planes, mesh-plane clipping along material lines, and
//! SPAMM datapoint sequences with persistent correspondence keys.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::MaterialGrid;
use crate::sequence::MotionSequence;
use crate::vec3::{self, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum View {
    Sax,
    Lax,
}

impl View {
    pub fn code(self) -> u8 {
        match self {
            View::Sax => 0,
            View::Lax => 1,
        }
    }

    pub fn from_code(c: u8) -> Option<View> {
        match c {
            0 => Some(View::Sax),
            1 => Some(View::Lax),
            _ => None,
        }
    }
}

/// Longitude lines run along `u` at fixed `(v, w)`; latitude lines run
/// along `v` at fixed `(u, w)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LineType {
    Longitude,
    Latitude,
}

impl LineType {
    pub fn code(self) -> u8 {
        match self {
            LineType::Longitude => 0,
            LineType::Latitude => 1,
        }
    }

    pub fn from_code(c: u8) -> Option<LineType> {
        match c {
            0 => Some(LineType::Longitude),
            1 => Some(LineType::Latitude),
            _ => None,
        }
    }
}

/// A plane fixed over the whole cycle. SAX planes are `z = offset`; LAX
/// planes contain the long axis through `origin` at azimuth `angle`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImagingPlane {
    pub id: u32,
    pub view: View,
    pub origin: Vec3,
    pub normal: Vec3,
    /// z offset (SAX, mm) or azimuth (LAX, radians).
    pub param: f64,
}

impl ImagingPlane {
    pub fn sax(id: u32, z: f64) -> Self {
        Self {
            id,
            view: View::Sax,
            origin: [0.0, 0.0, z],
            normal: [0.0, 0.0, 1.0],
            param: z,
        }
    }

    pub fn lax(id: u32, azimuth: f64, axis_xy: [f64; 2]) -> Self {
        Self {
            id,
            view: View::Lax,
            origin: [axis_xy[0], axis_xy[1], 0.0],
            normal: [-azimuth.sin(), azimuth.cos(), 0.0],
            param: azimuth,
        }
    }

    #[inline]
    pub fn signed_distance(&self, p: Vec3) -> f64 {
        match self.view {
            View::Sax => p[2] - self.param,
            View::Lax => vec3::dot(self.normal, vec3::sub(p, self.origin)),
        }
    }

    /// Orthogonal projection onto the plane.
    #[inline]
    pub fn project(&self, p: Vec3) -> Vec3 {
        match self.view {
            View::Sax => [p[0], p[1], self.param],
            View::Lax => vec3::sub(p, vec3::scale(self.normal, self.signed_distance(p))),
        }
    }
}

/// Plane layout: SAX planes at interior uniform positions across the ED
/// long-axis extent, LAX planes through the ED axis at azimuths `k·π/n_lax`.
pub fn place_planes(ed: &MaterialGrid, n_sax: usize, n_lax: usize) -> Result<Vec<ImagingPlane>> {
    if n_sax + n_lax == 0 {
        return Err(Error::Config("at least one imaging plane is required".into()));
    }
    let (zmin, zmax) = ed
        .points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p[2]), hi.max(p[2])));
    let c = vec3::centroid(&ed.points);
    let mut planes = Vec::with_capacity(n_sax + n_lax);
    for i in 0..n_sax {
        let z = zmin + (zmax - zmin) * (i + 1) as f64 / (n_sax + 1) as f64;
        planes.push(ImagingPlane::sax(i as u32, z));
    }
    for k in 0..n_lax {
        let phi = k as f64 * PI / n_lax as f64;
        planes.push(ImagingPlane::lax((n_sax + k) as u32, phi, [c[0], c[1]]));
    }
    Ok(planes)
}

/// Persistent identity of a SPAMM datapoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SpammKey {
    pub plane: u32,
    pub view: View,
    pub w: u32,
    pub line: LineType,
    pub line_index: u32,
    /// `2 · (earlier crossings in the same direction) + direction`, where
    /// direction 1 means the line passes from the negative to the positive side.
    pub ordinal: u32,
}

/// Zero signed distance counts as the positive side.
#[inline]
fn positive(d: f64) -> bool {
    d >= 0.0
}

fn clip_line(
    plane: &ImagingPlane,
    pts: &[Vec3],
    closed: bool,
    mut emit: impl FnMut(u32, Vec3),
) {
    let n = pts.len();
    let segs = if closed { n } else { n.saturating_sub(1) };
    let d: Vec<f64> = pts.iter().map(|&p| plane.signed_distance(p)).collect();
    let mut counts = [0u32; 2];
    for s in 0..segs {
        let (a, b) = (s, (s + 1) % n);
        if positive(d[a]) == positive(d[b]) {
            continue;
        }
        let t = d[a] / (d[a] - d[b]);
        let p = vec3::add(pts[a], vec3::scale(vec3::sub(pts[b], pts[a]), t));
        let dir = usize::from(!positive(d[a]));
        emit(2 * counts[dir] + dir as u32, plane.project(p));
        counts[dir] += 1;
    }
}

/// Crossings of the material lines of `layers` with `plane`: longitude
/// lines for SAX planes, periodic latitude lines for LAX planes.
pub fn clip_plane(
    grid: &MaterialGrid,
    plane: &ImagingPlane,
    layers: &[usize],
) -> Result<Vec<(SpammKey, Vec3)>> {
    let d = grid.dims;
    if layers.is_empty() {
        return Err(Error::Config("clipping needs at least one layer".into()));
    }
    if let Some(&w) = layers.iter().find(|&&w| w >= d.n_w) {
        return Err(Error::Domain(format!("layer {w} outside 0..{}", d.n_w)));
    }
    let mut out = Vec::new();
    for &w in layers {
        match plane.view {
            View::Sax => {
                for j in 0..d.n_v {
                    let line: Vec<Vec3> = (0..d.n_u).map(|i| grid.at(i, j, w)).collect();
                    clip_line(plane, &line, false, |ordinal, p| {
                        out.push((key(plane, w, LineType::Longitude, j, ordinal), p))
                    });
                }
            }
            View::Lax => {
                for i in 0..d.n_u {
                    let line: Vec<Vec3> = (0..d.n_v).map(|j| grid.at(i, j, w)).collect();
                    clip_line(plane, &line, true, |ordinal, p| {
                        out.push((key(plane, w, LineType::Latitude, i, ordinal), p))
                    });
                }
            }
        }
    }
    Ok(out)
}

fn key(plane: &ImagingPlane, w: usize, line: LineType, index: usize, ordinal: u32) -> SpammKey {
    SpammKey {
        plane: plane.id,
        view: plane.view,
        w: w as u32,
        line,
        line_index: index as u32,
        ordinal,
    }
}

/// Greedy farthest point sampling of `n` indices starting from `seed`.
/// Distance ties go to the lower index.
pub fn farthest_point_sampling(points: &[Vec3], n: usize, seed: usize) -> Result<Vec<usize>> {
    if n > points.len() {
        return Err(Error::Data(format!(
            "cannot sample {n} of {} points",
            points.len()
        )));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    if seed >= points.len() {
        return Err(Error::Domain(format!("seed {seed} outside {} points", points.len())));
    }
    let mut chosen = Vec::with_capacity(n);
    let mut dist = vec![f64::INFINITY; points.len()];
    let mut taken = vec![false; points.len()];
    let mut next = seed;
    for _ in 0..n {
        chosen.push(next);
        taken[next] = true;
        let p = points[next];
        let mut best = (f64::NEG_INFINITY, usize::MAX);
        for (i, q) in points.iter().enumerate() {
            if taken[i] {
                continue;
            }
            let d = dist[i].min(vec3::dist_sq(p, *q));
            dist[i] = d;
            if d > best.0 {
                best = (d, i);
            }
        }
        next = best.1;
    }
    Ok(chosen)
}

/// Corresponding SPAMM datapoint pairs `(S(t_q), S(t_{q+1}))` per view.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ApparentMotionCues {
    pub sax: Vec<[Vec3; 2]>,
    pub lax: Vec<[Vec3; 2]>,
}

impl ApparentMotionCues {
    pub fn len(&self) -> usize {
        self.sax.len() + self.lax.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sax.is_empty() && self.lax.is_empty()
    }

    pub fn map_points(&self, f: impl Fn(Vec3) -> Vec3) -> Self {
        let m = |v: &Vec<[Vec3; 2]>| v.iter().map(|[a, b]| [f(*a), f(*b)]).collect();
        Self {
            sax: m(&self.sax),
            lax: m(&self.lax),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.sax
            .iter()
            .chain(&self.lax)
            .all(|[a, b]| vec3::is_finite(*a) && vec3::is_finite(*b))
    }
}

/// Clipped positions per key and frame, and the sampled active pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct SpammSequence {
    pub frames: usize,
    pub planes: Vec<ImagingPlane>,
    pub n_s: usize,
    pub records: BTreeMap<SpammKey, Vec<Option<Vec3>>>,
    /// Sampled keys per frame pair `(q, q + 1)`, in sampling order.
    pub selected: Vec<Vec<SpammKey>>,
}

impl SpammSequence {
    /// Builds a sequence from clipped records and samples each pair.
    pub fn from_records(
        frames: usize,
        planes: Vec<ImagingPlane>,
        n_s: usize,
        records: BTreeMap<SpammKey, Vec<Option<Vec3>>>,
    ) -> Result<Self> {
        if let Some((k, _)) = records.iter().find(|(_, v)| v.len() != frames) {
            return Err(Error::Dimension(format!("record {k:?} does not span {frames} frames")));
        }
        let mut seq = Self {
            frames,
            planes,
            n_s,
            records,
            selected: Vec::new(),
        };
        seq.selected = (0..frames.saturating_sub(1))
            .map(|q| seq.sample_pair(q))
            .collect::<Result<_>>()?;
        Ok(seq)
    }

    /// Keys with positions at both `q` and `q + 1`, in key order.
    pub fn active(&self, q: usize) -> Vec<SpammKey> {
        self.records
            .iter()
            .filter(|(_, v)| v[q].is_some() && v[q + 1].is_some())
            .map(|(k, _)| *k)
            .collect()
    }

    fn sample_pair(&self, q: usize) -> Result<Vec<SpammKey>> {
        let keys = self.active(q);
        if keys.len() < self.n_s {
            return Err(Error::Data(format!(
                "frame pair ({q}, {}) has {} active SPAMM pairs, {} requested",
                q + 1,
                keys.len(),
                self.n_s
            )));
        }
        let pts: Vec<Vec3> = keys.iter().map(|k| self.records[k][q].expect("active")).collect();
        let picks = farthest_point_sampling(&pts, self.n_s, 0)?;
        Ok(picks.into_iter().map(|i| keys[i]).collect())
    }

    /// Sampled cue pairs for transition `q -> q + 1`.
    pub fn cues(&self, q: usize) -> Result<ApparentMotionCues> {
        let keys = self.selected.get(q).ok_or_else(|| {
            Error::Data(format!("no SPAMM cues for transition ({q}, {})", q + 1))
        })?;
        let mut cues = ApparentMotionCues::default();
        for k in keys {
            let r = &self.records[k];
            let pair = [r[q].expect("active"), r[q + 1].expect("active")];
            match k.view {
                View::Sax => cues.sax.push(pair),
                View::Lax => cues.lax.push(pair),
            }
        }
        Ok(cues)
    }

    pub fn plane(&self, id: u32) -> Option<&ImagingPlane> {
        self.planes.iter().find(|p| p.id == id)
    }
}

/// Clips every frame on every plane over `layers` and samples `n_s` active
/// pairs per transition.
pub fn compute_spamm_sequence(
    seq: &MotionSequence,
    planes: &[ImagingPlane],
    layers: &[usize],
    n_s: usize,
) -> Result<SpammSequence> {
    let t = seq.len();
    let mut records: BTreeMap<SpammKey, Vec<Option<Vec3>>> = BTreeMap::new();
    for (q, frame) in seq.frames.iter().enumerate() {
        for plane in planes {
            for (k, p) in clip_plane(frame, plane, layers)? {
                records.entry(k).or_insert_with(|| vec![None; t])[q] = Some(p);
            }
        }
    }
    SpammSequence::from_records(t, planes.to_vec(), n_s, records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{eval_model, GridDims, ParameterFunctions};

    fn line_grid(zs: &[f64]) -> MaterialGrid {
        // n_v = 3 copies of one longitude line.
        let dims = GridDims::new(zs.len(), 3, 1).unwrap();
        let pts = (0..dims.len())
            .map(|idx| {
                let (i, j, _) = dims.node(idx);
                [j as f64, 0.5, zs[i]]
            })
            .collect();
        MaterialGrid::new(dims, pts).unwrap()
    }

    #[test]
    fn crossing_at_midpoint() {
        let g = line_grid(&[1.0, 3.0]);
        let out = clip_plane(&g, &ImagingPlane::sax(0, 2.0), &[0]).unwrap();
        assert_eq!(out.len(), 3);
        assert_eq!(out[0].1, [0.0, 0.5, 2.0]);
    }

    #[test]
    fn line_above_plane_is_silent() {
        let g = line_grid(&[1.0, 3.0]);
        assert!(clip_plane(&g, &ImagingPlane::sax(0, 0.5), &[0]).unwrap().is_empty());
    }

    #[test]
    fn touching_endpoint_emitted_once() {
        let g = line_grid(&[1.0, 2.0, 3.0]);
        let out = clip_plane(&g, &ImagingPlane::sax(0, 2.0), &[0]).unwrap();
        assert_eq!(out.len(), 3);
        assert_eq!(out[0].1, [0.0, 0.5, 2.0]);
        // Both neighbours on the positive side: no crossing at all.
        let g = line_grid(&[3.0, 2.0, 3.0]);
        assert!(clip_plane(&g, &ImagingPlane::sax(0, 2.0), &[0]).unwrap().is_empty());
    }

    #[test]
    fn latitude_ring_has_one_crossing_per_direction() {
        let pf = ParameterFunctions::uniform(6, 1, 10.0, [1.0; 3]);
        let dims = GridDims::new(6, 16, 1).unwrap();
        let g = eval_model(&pf, dims, None).unwrap();
        let plane = ImagingPlane::lax(3, 0.3, [0.0, 0.0]);
        let out = clip_plane(&g, &plane, &[0]).unwrap();
        // Apex ring is a single point: no crossings there.
        assert_eq!(out.len(), 2 * 5);
        for (k, p) in &out {
            assert!(k.ordinal < 2 && k.line_index > 0);
            assert!(plane.signed_distance(*p).abs() < 1e-9);
        }
    }

    #[test]
    fn fps_takes_all_when_n_equals_len() {
        let pts: Vec<Vec3> = (0..7).map(|i| [i as f64, (i * i) as f64, 0.0]).collect();
        let mut s = farthest_point_sampling(&pts, 7, 0).unwrap();
        assert_eq!(s[0], 0);
        s.sort_unstable();
        assert_eq!(s, (0..7).collect::<Vec<_>>());
        assert!(farthest_point_sampling(&pts, 8, 0).is_err());
    }

    #[test]
    fn fps_picks_the_far_end_first() {
        let pts = vec![[0.0; 3], [1.0, 0.0, 0.0], [5.0, 0.0, 0.0], [5.0, 0.0, 0.0]];
        assert_eq!(farthest_point_sampling(&pts, 2, 0).unwrap(), vec![0, 2]);
    }
}
