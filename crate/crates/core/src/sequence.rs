//! Material-point sequences over a cardiac cycle.

use crate::error::{Error, Result};
use crate::geometry::{GridDims, MaterialGrid};
use crate::vec3::Vec3;

/// Centering and per-axis scaling applied before recovery.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormMeta {
    pub center: Vec3,
    pub scales: Vec3,
}

impl NormMeta {
    pub const IDENTITY: NormMeta = NormMeta {
        center: [0.0; 3],
        scales: [1.0; 3],
    };

    #[inline]
    pub fn apply(&self, p: Vec3) -> Vec3 {
        [
            (p[0] - self.center[0]) / self.scales[0],
            (p[1] - self.center[1]) / self.scales[1],
            (p[2] - self.center[2]) / self.scales[2],
        ]
    }

    #[inline]
    pub fn invert(&self, p: Vec3) -> Vec3 {
        [
            p[0] * self.scales[0] + self.center[0],
            p[1] * self.scales[1] + self.center[1],
            p[2] * self.scales[2] + self.center[2],
        ]
    }

    pub fn apply_all(&self, pts: &[Vec3]) -> Vec<Vec3> {
        pts.iter().map(|&p| self.apply(p)).collect()
    }

    pub fn invert_all(&self, pts: &[Vec3]) -> Vec<Vec3> {
        pts.iter().map(|&p| self.invert(p)).collect()
    }
}

/// `T` frames of one material grid. Node `k` of every frame is the same
/// material point.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionSequence {
    pub subject_id: String,
    pub frames: Vec<MaterialGrid>,
    /// Original layer index of each stored layer.
    pub layers: Vec<usize>,
    pub es_index: usize,
    pub norm: NormMeta,
}

impl MotionSequence {
    pub fn new(
        subject_id: impl Into<String>,
        frames: Vec<MaterialGrid>,
        layers: Vec<usize>,
        es_index: usize,
    ) -> Result<Self> {
        let seq = Self {
            subject_id: subject_id.into(),
            frames,
            layers,
            es_index,
            norm: NormMeta::IDENTITY,
        };
        seq.validate()?;
        Ok(seq)
    }

    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.frames.first() else {
            return Err(Error::Data("motion sequence has no frames".into()));
        };
        let dims = first.dims;
        if let Some(q) = self.frames.iter().position(|f| f.dims != dims) {
            return Err(Error::Dimension(format!(
                "frame {q} has dims {:?}, frame 0 has {dims:?}",
                self.frames[q].dims
            )));
        }
        if self.layers.len() != dims.n_w {
            return Err(Error::Dimension(format!(
                "{} layer labels for {} layers",
                self.layers.len(),
                dims.n_w
            )));
        }
        if self.es_index >= self.frames.len() {
            return Err(Error::Data(format!(
                "ES index {} outside {} frames",
                self.es_index,
                self.frames.len()
            )));
        }
        if let Some(q) = self.frames.iter().position(|f| !f.is_finite()) {
            return Err(Error::Data(format!("frame {q} has non-finite coordinates")));
        }
        Ok(())
    }

    pub fn dims(&self) -> GridDims {
        self.frames[0].dims
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Restriction to the given stored layers (by original index).
    pub fn select_layers(&self, original: &[usize]) -> Result<MotionSequence> {
        let local: Vec<usize> = original
            .iter()
            .map(|w| {
                self.layers.iter().position(|l| l == w).ok_or_else(|| {
                    Error::Data(format!("layer {w} not present in sequence {:?}", self.layers))
                })
            })
            .collect::<Result<_>>()?;
        let frames = self
            .frames
            .iter()
            .map(|f| f.select_layers(&local))
            .collect::<Result<Vec<_>>>()?;
        Ok(MotionSequence {
            subject_id: self.subject_id.clone(),
            frames,
            layers: original.to_vec(),
            es_index: self.es_index,
            norm: self.norm,
        })
    }

    /// Layers with even original index: the tracked material points.
    pub fn material_layers(&self) -> Result<MotionSequence> {
        let even: Vec<usize> = self.layers.iter().copied().filter(|w| w % 2 == 0).collect();
        self.select_layers(&even)
    }
}
