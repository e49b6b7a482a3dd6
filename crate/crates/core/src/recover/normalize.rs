//! Per-axis linear normalization anchored at the first frame.

use crate::error::{Error, Result};
use crate::sequence::{MotionSequence, NormMeta};
use crate::sim::clip::{ApparentMotionCues, SpammSequence};
use crate::vec3::{self, Vec3};

/// Largest absolute centered coordinate after normalization.
pub const TARGET_EXTENT: f64 = 1.5;

/// Center at the centroid of `m0` and scale each axis so the centered `m0`
/// spans exactly `[-1.5, 1.5]` in its largest absolute coordinate.
pub fn norm_meta(m0: &[Vec3]) -> Result<NormMeta> {
    if m0.is_empty() {
        return Err(Error::Data("cannot normalize an empty frame".into()));
    }
    let center = vec3::centroid(m0);
    let mut scales = [0.0f64; 3];
    for p in m0 {
        for c in 0..3 {
            scales[c] = scales[c].max((p[c] - center[c]).abs());
        }
    }
    for (c, axis) in ["x", "y", "z"].iter().enumerate() {
        if !(scales[c] > 0.0 && scales[c].is_finite()) {
            return Err(Error::Data(format!("frame 0 has zero extent along {axis}")));
        }
        scales[c] /= TARGET_EXTENT;
    }
    Ok(NormMeta { center, scales })
}

/// Normalized copies of a material sequence and its SPAMM cues.
pub fn normalize(seq: &MotionSequence, spamm: &SpammSequence) -> Result<(MotionSequence, Vec<ApparentMotionCues>, NormMeta)> {
    let meta = norm_meta(&seq.frames[0].points)?;
    let mut out = seq.clone();
    for f in &mut out.frames {
        for p in &mut f.points {
            *p = meta.apply(*p);
        }
    }
    out.norm = meta;
    let cues = (0..spamm.frames.saturating_sub(1))
        .map(|q| Ok(spamm.cues(q)?.map_points(|p| meta.apply(p))))
        .collect::<Result<Vec<_>>>()?;
    Ok((out, cues, meta))
}

/// Undoes [`normalize`] on a sequence carrying its own metadata.
pub fn denormalize(seq: &MotionSequence) -> MotionSequence {
    let mut out = seq.clone();
    for f in &mut out.frames {
        for p in &mut f.points {
            *p = seq.norm.invert(*p);
        }
    }
    out.norm = NormMeta::IDENTITY;
    out
}
