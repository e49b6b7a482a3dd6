//! Point-wise error and per-frame evaluation reports.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::geometry::build_layer_mesh;
use crate::recover::si::si_ratio;
use crate::sequence::MotionSequence;
use crate::vec3;

/// Mean over frames `1..T` of the mean point distance; also the per-frame values.
pub fn mae(predicted: &MotionSequence, truth: &MotionSequence) -> Result<(f64, Vec<f64>)> {
    if predicted.dims() != truth.dims() || predicted.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "prediction has {} frames of {:?}, truth {} frames of {:?}",
            predicted.len(),
            predicted.dims(),
            truth.len(),
            truth.dims()
        )));
    }
    let per_frame: Vec<f64> = (1..truth.len())
        .map(|q| {
            let (a, b) = (&predicted.frames[q].points, &truth.frames[q].points);
            a.iter().zip(b).map(|(&p, &t)| vec3::dist(p, t)).sum::<f64>() / a.len() as f64
        })
        .collect();
    let mean = if per_frame.is_empty() {
        0.0
    } else {
        per_frame.iter().sum::<f64>() / per_frame.len() as f64
    };
    Ok((mean, per_frame))
}

/// Which stored layers the SI ratio is computed on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SiLayers {
    Middle,
    All,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameMetrics {
    pub frame: usize,
    pub abs_err_mm: f64,
    pub si_ratio: f64,
    pub runtime_s: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub subject_id: String,
    /// Frames `1..T`.
    pub frames: Vec<FrameMetrics>,
    pub mae: f64,
    pub mean_si: f64,
    /// Zero-area triangles seen across all evaluated meshes.
    pub degenerate_triangles: usize,
}

/// Pooled SI ratio of frame `q` over the selected layers.
pub fn frame_si(seq: &MotionSequence, q: usize, layers: SiLayers) -> Result<(f64, usize)> {
    let grid = &seq.frames[q];
    let ws: Vec<usize> = match layers {
        SiLayers::Middle => vec![grid.dims.n_w / 2],
        SiLayers::All => (0..grid.dims.n_w).collect(),
    };
    let (mut hit, mut total, mut degenerate) = (0, 0, 0);
    for w in ws {
        let r = si_ratio(&build_layer_mesh(grid, w)?);
        hit += r.intersecting;
        total += r.triangles;
        degenerate += r.degenerate;
    }
    Ok((if total == 0 { 0.0 } else { hit as f64 / total as f64 }, degenerate))
}

/// Errors, SI ratios and runtimes for frames `1..T`. `runtime_s[q - 1]`
/// belongs to frame `q`; missing entries are reported as zero.
pub fn evaluate(
    predicted: &MotionSequence,
    truth: &MotionSequence,
    runtime_s: &[f64],
    layers: SiLayers,
) -> Result<EvalReport> {
    let (mae, per_frame) = mae(predicted, truth)?;
    let mut frames = Vec::with_capacity(per_frame.len());
    let mut degenerate_triangles = 0;
    for (n, &err) in per_frame.iter().enumerate() {
        let q = n + 1;
        let (si, deg) = frame_si(predicted, q, layers)?;
        degenerate_triangles += deg;
        frames.push(FrameMetrics {
            frame: q,
            abs_err_mm: err,
            si_ratio: si,
            runtime_s: runtime_s.get(n).copied().unwrap_or(0.0),
        });
    }
    let mean_si = if frames.is_empty() {
        0.0
    } else {
        frames.iter().map(|f| f.si_ratio).sum::<f64>() / frames.len() as f64
    };
    if degenerate_triangles > 0 {
        log::warn!(
            "{}: {degenerate_triangles} zero-area triangles counted as non-intersecting",
            predicted.subject_id
        );
    }
    Ok(EvalReport {
        subject_id: truth.subject_id.clone(),
        frames,
        mae,
        mean_si,
        degenerate_triangles,
    })
}

pub const CSV_HEADER: &str = "subject_id,frame,abs_err_mm,si_ratio,runtime_s";

impl EvalReport {
    /// CSV rows without the header: one per frame, then a summary row whose
    /// frame field is `MAE`, error is the MAE, SI is the mean and runtime
    /// the total.
    pub fn csv_rows(&self) -> String {
        let mut out = String::new();
        for f in &self.frames {
            writeln!(
                out,
                "{},{},{:e},{:e},{:e}",
                self.subject_id, f.frame, f.abs_err_mm, f.si_ratio, f.runtime_s
            )
            .unwrap();
        }
        let total: f64 = self.frames.iter().map(|f| f.runtime_s).sum();
        writeln!(out, "{},MAE,{:e},{:e},{:e}", self.subject_id, self.mae, self.mean_si, total).unwrap();
        out
    }

    pub fn to_csv(&self) -> String {
        format!("{CSV_HEADER}\n{}", self.csv_rows())
    }
}
