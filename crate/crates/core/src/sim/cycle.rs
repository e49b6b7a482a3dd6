//! ES twist assignment and whole-cycle synthesis from the ED and ES models.

use crate::error::{Error, Result};
use crate::geometry::{GridDims, MaterialGrid, ParameterFunctions, U_MAX, U_MIN};
use crate::sequence::MotionSequence;

/// Per-axis interpolation weights for a 20-frame cycle; ED at 0, ES at 6.
pub const REFERENCE_SX: [f64; 20] = [
    0.000, 0.090, 0.150, 0.350, 0.550, 0.750, 1.000, 0.920, 0.780, 0.650, 0.580, 0.540, 0.410,
    0.370, 0.240, 0.210, 0.180, 0.160, 0.120, 0.080,
];
pub const REFERENCE_SY: [f64; 20] = [
    0.000, 0.080, 0.180, 0.380, 0.580, 0.780, 1.000, 0.980, 0.740, 0.620, 0.550, 0.520, 0.480,
    0.350, 0.220, 0.190, 0.180, 0.160, 0.110, 0.080,
];
pub const REFERENCE_SZ: [f64; 20] = [
    0.000, 0.100, 0.200, 0.400, 0.600, 0.800, 1.000, 0.920, 0.880, 0.650, 0.380, 0.335, 0.325,
    0.315, 0.3000, 0.290, 0.280, 0.220, 0.090, 0.070,
];
pub const REFERENCE_ES: usize = 6;

/// Interpolation weights `s_x, s_y, s_z` per frame.
#[derive(Clone, Debug, PartialEq)]
pub struct TemporalScalars {
    pub sx: Vec<f64>,
    pub sy: Vec<f64>,
    pub sz: Vec<f64>,
    pub es_index: usize,
}

impl TemporalScalars {
    pub fn reference() -> Self {
        Self {
            sx: REFERENCE_SX.to_vec(),
            sy: REFERENCE_SY.to_vec(),
            sz: REFERENCE_SZ.to_vec(),
            es_index: REFERENCE_ES,
        }
    }

    /// Weights for a `t`-frame cycle. Twenty frames give the reference
    /// arrays; other lengths resample them piecewise linearly, mapping the
    /// systolic frames onto reference frames `0..=6` and the diastolic frames
    /// onto `6..=19`.
    pub fn for_frames(t: usize) -> Result<Self> {
        if t < 2 {
            return Err(Error::Config(format!("a cycle needs at least 2 frames, got {t}")));
        }
        let last = (REFERENCE_SX.len() - 1) as f64;
        let es = ((REFERENCE_ES as f64 * (t - 1) as f64 / last).round() as usize).clamp(1, t - 1);
        let pos = |q: usize| -> f64 {
            if q <= es {
                q as f64 * REFERENCE_ES as f64 / es as f64
            } else {
                REFERENCE_ES as f64
                    + (q - es) as f64 * (last - REFERENCE_ES as f64) / (t - 1 - es) as f64
            }
        };
        let sample = |arr: &[f64; 20], p: f64| -> f64 {
            let lo = p.floor() as usize;
            let frac = p - lo as f64;
            if frac == 0.0 || lo + 1 >= arr.len() {
                arr[lo.min(arr.len() - 1)]
            } else {
                arr[lo] + frac * (arr[lo + 1] - arr[lo])
            }
        };
        let build = |arr: &[f64; 20]| (0..t).map(|q| sample(arr, pos(q))).collect::<Vec<_>>();
        Ok(Self {
            sx: build(&REFERENCE_SX),
            sy: build(&REFERENCE_SY),
            sz: build(&REFERENCE_SZ),
            es_index: es,
        })
    }

    pub fn len(&self) -> usize {
        self.sx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sx.is_empty()
    }
}

/// ES twist as a function of `u`.
#[derive(Clone, Debug, PartialEq)]
pub enum TwistProfile {
    /// Linear in `u` from `apex` (at `u = -π/2`) to `base` (at `u = π/6`),
    /// constant across layers.
    Linear { apex: f64, base: f64 },
    /// One value per `u` sample.
    Samples(Vec<f64>),
}

impl Default for TwistProfile {
    /// Configurable stand-in for normal-subject torsion.
    fn default() -> Self {
        TwistProfile::Linear {
            apex: 0.21,
            base: -0.09,
        }
    }
}

impl TwistProfile {
    pub fn zero() -> Self {
        TwistProfile::Linear {
            apex: 0.0,
            base: 0.0,
        }
    }

    pub fn at(&self, u: f64, i: usize) -> f64 {
        match self {
            TwistProfile::Linear { apex, base } => {
                apex + (base - apex) * (u - U_MIN) / (U_MAX - U_MIN)
            }
            TwistProfile::Samples(s) => s[i],
        }
    }
}

/// Returns ES parameters with `τ(u, w)` set from `profile`.
pub fn set_es_twist(
    pf_es: &ParameterFunctions,
    profile: &TwistProfile,
    n_v: usize,
) -> Result<ParameterFunctions> {
    if let TwistProfile::Samples(s) = profile {
        if s.len() != pf_es.n_u {
            return Err(Error::Dimension(format!(
                "twist profile has {} samples for {} u values",
                s.len(),
                pf_es.n_u
            )));
        }
    }
    let dims = GridDims::new(pf_es.n_u, n_v, pf_es.n_w)?;
    let mut out = pf_es.clone();
    for i in 0..pf_es.n_u {
        let tau = profile.at(dims.u(i), i);
        for w in 0..pf_es.n_w {
            out.tau[pf_es.at(i, w)] = tau;
        }
    }
    Ok(out)
}

/// ED parameters always carry zero twist.
pub fn clear_twist(pf: &ParameterFunctions) -> ParameterFunctions {
    let mut out = pf.clone();
    out.tau.iter_mut().for_each(|t| *t = 0.0);
    out
}

/// Per-axis interpolation between ED and ES for every frame.
pub fn synthesize_cycle(
    subject_id: &str,
    ed: &MaterialGrid,
    es: &MaterialGrid,
    scalars: &TemporalScalars,
    layers: Vec<usize>,
) -> Result<MotionSequence> {
    if ed.dims != es.dims {
        return Err(Error::Dimension(format!(
            "ED grid {:?} and ES grid {:?} differ",
            ed.dims, es.dims
        )));
    }
    let t = scalars.len();
    if scalars.sy.len() != t || scalars.sz.len() != t {
        return Err(Error::Dimension(format!(
            "scalar arrays have lengths {}, {}, {}",
            t,
            scalars.sy.len(),
            scalars.sz.len()
        )));
    }
    let frames = (0..t)
        .map(|q| {
            let s = [scalars.sx[q], scalars.sy[q], scalars.sz[q]];
            let points = ed
                .points
                .iter()
                .zip(&es.points)
                .map(|(a, b)| {
                    [
                        s[0] * b[0] + (1.0 - s[0]) * a[0],
                        s[1] * b[1] + (1.0 - s[1]) * a[1],
                        s[2] * b[2] + (1.0 - s[2]) * a[2],
                    ]
                })
                .collect();
            MaterialGrid::new(ed.dims, points)
        })
        .collect::<Result<Vec<_>>>()?;
    MotionSequence::new(subject_id, frames, layers, scalars.es_index)
}
