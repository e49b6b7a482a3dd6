//! Whole-cycle inference: each predicted frame is the input of the next step.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::geometry::{GridDims, MaterialGrid};
use crate::net::{ModeFlags, Psi};
use crate::recover::normalize::norm_meta;
use crate::sequence::{MotionSequence, NormMeta};
use crate::sim::clip::{ApparentMotionCues, SpammSequence};
use crate::vec3::Vec3;

/// One-step motion model working in millimetres.
pub trait MotionPredictor {
    /// Called with `M(t_0)` before the first step.
    fn begin(&mut self, m0: &[Vec3], dims: GridDims) -> Result<()>;

    /// `M̂(t_{q+1})` from `M̂(t_q)` and the cues of transition `q`.
    fn step(&mut self, q: usize, m: &[Vec3], cues: &ApparentMotionCues) -> Result<Vec<Vec3>>;
}

/// The learned network. Inputs and cues are normalized with the metadata of
/// `M(t_0)`; the normalized prediction is carried forward between steps so
/// repeated normalization round trips do not accumulate.
#[derive(Debug)]
pub struct NetworkPredictor<'a> {
    psi: &'a Psi,
    flags: ModeFlags,
    meta: NormMeta,
    dims: Option<GridDims>,
    carried: Option<Vec<Vec3>>,
}

impl<'a> NetworkPredictor<'a> {
    pub fn new(psi: &'a Psi, flags: ModeFlags) -> Self {
        Self {
            psi,
            flags,
            meta: NormMeta::IDENTITY,
            dims: None,
            carried: None,
        }
    }
}

impl MotionPredictor for NetworkPredictor<'_> {
    fn begin(&mut self, m0: &[Vec3], dims: GridDims) -> Result<()> {
        self.meta = norm_meta(m0)?;
        self.dims = Some(dims);
        self.carried = Some(self.meta.apply_all(m0));
        Ok(())
    }

    fn step(&mut self, _q: usize, m: &[Vec3], cues: &ApparentMotionCues) -> Result<Vec<Vec3>> {
        let dims = self.dims.ok_or_else(|| Error::Data("predictor used before begin".into()))?;
        let input = match self.carried.take() {
            Some(c) => c,
            None => self.meta.apply_all(m),
        };
        let meta = self.meta;
        let cues = cues.map_points(|p| meta.apply(p));
        let pred = self.psi.predict(&input, dims, &cues, self.flags)?;
        let out = self.meta.invert_all(&pred.points);
        self.carried = Some(pred.points);
        Ok(out)
    }
}

/// Replays a known sequence; recovery with it is exact.
#[derive(Clone, Debug)]
pub struct OraclePredictor {
    pub truth: MotionSequence,
}

impl MotionPredictor for OraclePredictor {
    fn begin(&mut self, _m0: &[Vec3], dims: GridDims) -> Result<()> {
        if dims != self.truth.dims() {
            return Err(Error::Dimension(format!(
                "oracle sequence has grid {:?}, input {dims:?}",
                self.truth.dims()
            )));
        }
        Ok(())
    }

    fn step(&mut self, q: usize, _m: &[Vec3], _cues: &ApparentMotionCues) -> Result<Vec<Vec3>> {
        self.truth
            .frames
            .get(q + 1)
            .map(|f| f.points.clone())
            .ok_or_else(|| Error::Data(format!("oracle sequence has no frame {}", q + 1)))
    }
}

/// Predicted sequence with per-transition forward-pass time.
#[derive(Clone, Debug)]
pub struct Recovery {
    pub sequence: MotionSequence,
    /// Seconds spent in `step` for transitions `0..T-1`.
    pub step_seconds: Vec<f64>,
    /// Wall time including cue extraction.
    pub total_seconds: f64,
}

/// `M̂(t_1) = Ψ(M(t_0), A(t_0, t_1))`, then `M̂(t_{q+1}) = Ψ(M̂(t_q), A(t_q, t_{q+1}))`.
pub fn sequential_recover(
    predictor: &mut dyn MotionPredictor,
    m0: &MaterialGrid,
    spamm: &SpammSequence,
    subject_id: &str,
    layers: Vec<usize>,
    es_index: usize,
) -> Result<Recovery> {
    let start = Instant::now();
    let dims = m0.dims;
    predictor.begin(&m0.points, dims)?;
    let mut frames = vec![m0.clone()];
    let mut step_seconds = Vec::with_capacity(spamm.frames.saturating_sub(1));
    for q in 0..spamm.frames.saturating_sub(1) {
        let cues = spamm.cues(q)?;
        if cues.is_empty() {
            return Err(Error::Data(format!("no active SPAMM pairs for transition {q} -> {}", q + 1)));
        }
        let t = Instant::now();
        let next = predictor.step(q, &frames[q].points, &cues)?;
        step_seconds.push(t.elapsed().as_secs_f64());
        let grid = MaterialGrid::new(dims, next)?;
        if !grid.is_finite() {
            return Err(Error::Numerical(format!("frame {} of {subject_id} is not finite", q + 1)));
        }
        frames.push(grid);
    }
    let es_index = es_index.min(frames.len() - 1);
    let sequence = MotionSequence::new(subject_id, frames, layers, es_index)?;
    Ok(Recovery {
        sequence,
        step_seconds,
        total_seconds: start.elapsed().as_secs_f64(),
    })
}

/// [`sequential_recover`] on a known material sequence, starting from its first frame.
pub fn recover_like(
    predictor: &mut dyn MotionPredictor,
    truth: &MotionSequence,
    spamm: &SpammSequence,
) -> Result<Recovery> {
    if spamm.frames != truth.len() {
        return Err(Error::Data(format!(
            "SPAMM sequence has {} frames, material sequence {}",
            spamm.frames,
            truth.len()
        )));
    }
    sequential_recover(
        predictor,
        &truth.frames[0],
        spamm,
        &truth.subject_id,
        truth.layers.clone(),
        truth.es_index,
    )
}
