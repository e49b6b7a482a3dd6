//! End-to-end subject simulation: clouds, two-layer fits, volumetric cycle
//! and SPAMM datapoints.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{eval_model, interpolate_layers, GridDims, MaterialGrid, ParameterFunctions};
use crate::sequence::MotionSequence;
use crate::sim::clip::{compute_spamm_sequence, place_planes, SpammSequence};
use crate::sim::cycle::{clear_twist, set_es_twist, synthesize_cycle, TemporalScalars, TwistProfile};
use crate::sim::fit::{fit_two_layer, FitConfig};
use crate::sim::subject::{generate_subject, ShapeRanges, SubjectCloud, SubjectTruth};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub n_u: usize,
    pub n_v: usize,
    pub n_w: usize,
    pub frames: usize,
    pub n_sax: usize,
    pub n_lax: usize,
    /// SPAMM pairs kept per transition, over both views.
    pub n_s: usize,
    pub fit_iters: usize,
    pub fit_lr: f64,
    pub fit_patience: usize,
    /// ES twist at the apex and at the base (radians).
    pub twist_apex: f64,
    pub twist_base: f64,
    pub ranges: ShapeRanges,
}

impl SimConfig {
    pub fn desk() -> Self {
        Self {
            n_u: 16,
            n_v: 16,
            n_w: 5,
            frames: 8,
            n_sax: 4,
            n_lax: 2,
            n_s: 192,
            fit_iters: 300,
            fit_lr: 0.01,
            fit_patience: 100,
            twist_apex: 0.21,
            twist_base: -0.09,
            ranges: ShapeRanges::default(),
        }
    }

    pub fn paper() -> Self {
        Self {
            n_u: 50,
            n_v: 50,
            n_w: 9,
            frames: 20,
            n_sax: 10,
            n_lax: 3,
            n_s: 3200,
            fit_iters: 1000,
            ..Self::desk()
        }
    }

    pub fn dims(&self) -> Result<GridDims> {
        GridDims::new(self.n_u, self.n_v, self.n_w)
    }

    pub fn validate(&self) -> Result<()> {
        self.dims().map_err(|e| Error::Config(e.to_string()))?;
        if self.n_w < 3 {
            return Err(Error::Config(format!(
                "n_w = {} leaves no odd layer for clipping; need at least 3",
                self.n_w
            )));
        }
        if self.frames < 2 {
            return Err(Error::Config(format!("frames = {} must be at least 2", self.frames)));
        }
        if self.n_sax + self.n_lax == 0 {
            return Err(Error::Config("n_sax + n_lax must be positive".into()));
        }
        if self.n_s == 0 {
            return Err(Error::Config("n_s must be positive".into()));
        }
        if !(self.fit_lr > 0.0 && self.fit_lr.is_finite()) {
            return Err(Error::Config(format!("fit_lr = {} must be positive", self.fit_lr)));
        }
        self.ranges.validate()
    }

    pub fn twist(&self) -> TwistProfile {
        TwistProfile::Linear {
            apex: self.twist_apex,
            base: self.twist_base,
        }
    }

    pub fn odd_layers(&self) -> Vec<usize> {
        (0..self.n_w).filter(|w| w % 2 == 1).collect()
    }

    pub fn even_layers(&self) -> Vec<usize> {
        (0..self.n_w).filter(|w| w % 2 == 0).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulatedSubject {
    pub cloud: SubjectCloud,
    pub truth: SubjectTruth,
    pub fit_ed: ParameterFunctions,
    pub fit_es: ParameterFunctions,
    /// All layers, every frame.
    pub sequence: MotionSequence,
    pub spamm: SpammSequence,
}

impl SimulatedSubject {
    /// Ground-truth material points (even layers).
    pub fn material(&self) -> Result<MotionSequence> {
        self.sequence.material_layers()
    }
}

/// Evaluates a fitted two-layer model and fills in `n_w` layers.
pub fn volumetric_frame(pf: &ParameterFunctions, n_v: usize, n_w: usize) -> Result<MaterialGrid> {
    let two = eval_model(pf, GridDims::new(pf.n_u, n_v, 2)?, None)?;
    interpolate_layers(&two.layer(0)?, &two.layer(1)?, n_w)
}

pub fn simulate_subject(seed: u64, cfg: &SimConfig) -> Result<SimulatedSubject> {
    cfg.validate()?;
    let (cloud, truth) = generate_subject(seed, &cfg.ranges)?;
    let fit_cfg = FitConfig {
        n_u: cfg.n_u,
        n_v: cfg.n_v,
        iters: cfg.fit_iters,
        lr: cfg.fit_lr,
        patience: cfg.fit_patience,
        offset_unlock: 0.5,
    };
    let ed_fit = fit_two_layer(&cloud.ed_inner, &cloud.ed_outer, &fit_cfg, None)?;
    let es_fit = fit_two_layer(&cloud.es_inner, &cloud.es_outer, &fit_cfg, Some(&ed_fit.params))?;
    let fit_ed = clear_twist(&ed_fit.params);
    let fit_es = set_es_twist(&es_fit.params, &cfg.twist(), cfg.n_v)?;

    let ed = volumetric_frame(&fit_ed, cfg.n_v, cfg.n_w)?;
    let es = volumetric_frame(&fit_es, cfg.n_v, cfg.n_w)?;
    let scalars = TemporalScalars::for_frames(cfg.frames)?;
    let sequence = synthesize_cycle(&cloud.subject_id, &ed, &es, &scalars, (0..cfg.n_w).collect())?;
    let planes = place_planes(&sequence.frames[0], cfg.n_sax, cfg.n_lax)?;
    let spamm = compute_spamm_sequence(&sequence, &planes, &cfg.odd_layers(), cfg.n_s)?;
    Ok(SimulatedSubject {
        cloud,
        truth,
        fit_ed,
        fit_es,
        sequence,
        spamm,
    })
}
