//! Randomized synthetic subjects: hidden two-layer ED/ES models with smooth
//! local bumps, observed only through sparse noisy point clouds.

use std::f64::consts::{PI, TAU};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{eval_model, GridDims, MaterialGrid, ParameterFunctions, U_MAX, U_MIN};
use crate::vec3::{self, Vec3};

/// Sampling ranges for synthetic subjects (lengths in mm).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeRanges {
    pub inner_a0: (f64, f64),
    /// Outer scale as a multiple of the inner scale.
    pub wall_ratio: (f64, f64),
    pub inner_radial: (f64, f64),
    pub outer_radial: (f64, f64),
    pub axial: (f64, f64),
    /// Relative amplitude of the smooth per-u aspect variation.
    pub aspect_jitter: f64,
    pub offset_mm: f64,
    pub center_mm: f64,
    /// Radial ES contraction of the inner and outer layer.
    pub contraction_inner: (f64, f64),
    pub contraction_outer: (f64, f64),
    /// Basal descent at ES.
    pub shortening_mm: (f64, f64),
    pub bump_mm: f64,
    pub bumps: usize,
    pub noise_mm: f64,
    /// Cloud points per layer and phase.
    pub cloud_points: usize,
    /// Dense sampling grid (n_u, n_v) the clouds are drawn from.
    pub sampling_grid: (usize, usize),
}

impl Default for ShapeRanges {
    fn default() -> Self {
        Self {
            inner_a0: (40.0, 48.0),
            wall_ratio: (1.15, 1.25),
            inner_radial: (0.55, 0.65),
            outer_radial: (0.62, 0.70),
            axial: (0.92, 0.98),
            aspect_jitter: 0.03,
            offset_mm: 1.0,
            center_mm: 5.0,
            contraction_inner: (0.22, 0.30),
            contraction_outer: (0.10, 0.15),
            shortening_mm: (8.0, 12.0),
            bump_mm: 1.0,
            bumps: 3,
            noise_mm: 0.3,
            cloud_points: 600,
            sampling_grid: (40, 48),
        }
    }
}

impl ShapeRanges {
    pub fn validate(&self) -> Result<()> {
        let ranges = [
            ("inner_a0", self.inner_a0),
            ("wall_ratio", self.wall_ratio),
            ("inner_radial", self.inner_radial),
            ("outer_radial", self.outer_radial),
            ("axial", self.axial),
            ("contraction_inner", self.contraction_inner),
            ("contraction_outer", self.contraction_outer),
            ("shortening_mm", self.shortening_mm),
        ];
        for (name, (lo, hi)) in ranges {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::Config(format!("range {name} = ({lo}, {hi}) is degenerate")));
            }
        }
        if self.inner_a0.0 <= 0.0 || self.wall_ratio.0 < 1.0 {
            return Err(Error::Config("scales must be positive with outer >= inner".into()));
        }
        for (name, (lo, hi)) in [
            ("inner_radial", self.inner_radial),
            ("outer_radial", self.outer_radial),
            ("axial", self.axial),
        ] {
            if lo <= 0.0 || hi > 1.0 {
                return Err(Error::Config(format!(
                    "aspect range {name} = ({lo}, {hi}) must lie in (0, 1]"
                )));
            }
        }
        for (name, (lo, hi)) in [
            ("contraction_inner", self.contraction_inner),
            ("contraction_outer", self.contraction_outer),
        ] {
            if lo < 0.0 || hi >= 1.0 {
                return Err(Error::Config(format!("{name} = ({lo}, {hi}) must lie in [0, 1)")));
            }
        }
        if self.shortening_mm.1 >= self.inner_a0.0 * self.axial.0 {
            return Err(Error::Config("shortening exceeds the long-axis extent".into()));
        }
        for (name, v) in [
            ("aspect_jitter", self.aspect_jitter),
            ("offset_mm", self.offset_mm),
            ("center_mm", self.center_mm),
            ("bump_mm", self.bump_mm),
            ("noise_mm", self.noise_mm),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} = {v} must be a finite non-negative value")));
            }
        }
        if self.cloud_points == 0 || self.sampling_grid.0 < 2 || self.sampling_grid.1 < 3 {
            return Err(Error::Config("cloud sampling needs points and a 2x3 grid at least".into()));
        }
        if self.cloud_points > self.sampling_grid.0 * self.sampling_grid.1 {
            return Err(Error::Config(format!(
                "{} cloud points requested from a {}x{} sampling grid",
                self.cloud_points, self.sampling_grid.0, self.sampling_grid.1
            )));
        }
        Ok(())
    }
}

/// Sparse inner/outer wall clouds at ED and ES.
#[derive(Clone, Debug, PartialEq)]
pub struct SubjectCloud {
    pub subject_id: String,
    pub seed: u64,
    pub ed_inner: Vec<Vec3>,
    pub ed_outer: Vec<Vec3>,
    pub es_inner: Vec<Vec3>,
    pub es_outer: Vec<Vec3>,
}

/// One smooth radial bump in `(u, v)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bump {
    pub u: f64,
    pub v: f64,
    pub width: f64,
    pub amplitude_ed: f64,
    pub amplitude_es: f64,
}

/// Hidden generating model of a subject.
#[derive(Clone, Debug, PartialEq)]
pub struct SubjectTruth {
    pub ed: ParameterFunctions,
    pub es: ParameterFunctions,
    pub bumps: Vec<Bump>,
}

impl SubjectTruth {
    /// Radial bump displacement at material coordinate `(u, v)`.
    pub fn bump_field(&self, u: f64, v: f64, es: bool) -> Vec3 {
        let mut r = 0.0;
        for b in &self.bumps {
            let dv = wrap_angle(v - b.v);
            let d2 = ((u - b.u) / b.width).powi(2) + (dv / b.width).powi(2);
            let amp = if es { b.amplitude_es } else { b.amplitude_ed };
            r += amp * (-0.5 * d2).exp();
        }
        // Fades to zero at the apex so the pole stays a single point.
        let fade = (u - U_MIN) / (U_MAX - U_MIN);
        let r = r * fade.min(1.0);
        [r * v.cos(), r * v.sin(), 0.0]
    }

    /// Evaluates the hidden model, bumps included.
    pub fn eval(&self, dims: GridDims, es: bool) -> Result<MaterialGrid> {
        let d: Vec<Vec3> = (0..dims.len())
            .map(|idx| {
                let c = dims.coords(idx);
                self.bump_field(c.u, c.v, es)
            })
            .collect();
        let pf = if es { &self.es } else { &self.ed };
        eval_model(pf, dims, Some(&d))
    }
}

fn wrap_angle(a: f64) -> f64 {
    let mut a = (a + PI) % TAU;
    if a < 0.0 {
        a += TAU;
    }
    a - PI
}

/// Deterministic subject id for a seed.
pub fn subject_id(seed: u64) -> String {
    format!("subject-{seed:06}")
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Smooth random variation over `u`: a short cosine series scaled to `amp`.
fn smooth_series(rng: &mut ChaCha8Rng, amp: f64) -> [f64; 3] {
    [
        rng.random_range(-1.0..1.0) * amp,
        rng.random_range(-1.0..1.0) * amp * 0.5,
        rng.random_range(0.0..TAU),
    ]
}

fn eval_series(c: [f64; 3], u: f64) -> f64 {
    let t = (u - U_MIN) / (U_MAX - U_MIN);
    c[0] * (PI * t + c[2]).cos() + c[1] * (2.0 * PI * t + c[2]).cos()
}

/// Samples a subject's hidden ED/ES model and its observed clouds. The
/// hidden parameter functions live on the dense sampling grid.
pub fn generate_subject(seed: u64, ranges: &ShapeRanges) -> Result<(SubjectCloud, SubjectTruth)> {
    ranges.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (su, sv) = ranges.sampling_grid;
    let n_u = su;
    let dims = GridDims::new(n_u, sv, 2)?;

    let a0_in = uniform(&mut rng, ranges.inner_a0);
    let a0_out = a0_in * uniform(&mut rng, ranges.wall_ratio);
    let mut ed = ParameterFunctions::uniform(n_u, 2, 1.0, [1.0; 3]);
    ed.a0 = vec![a0_in, a0_out];
    let center = [
        rng.random_range(-1.0..=1.0) * ranges.center_mm,
        rng.random_range(-1.0..=1.0) * ranges.center_mm,
        rng.random_range(-1.0..=1.0) * ranges.center_mm,
    ];
    ed.center = center;

    let radial = [ranges.inner_radial, ranges.outer_radial];
    let ellipticity = rng.random_range(-0.04..0.04);
    let jitter: Vec<[f64; 3]> = (0..6)
        .map(|_| smooth_series(&mut rng, ranges.aspect_jitter))
        .collect();
    let offs = [
        smooth_series(&mut rng, ranges.offset_mm),
        smooth_series(&mut rng, ranges.offset_mm),
    ];
    let base_radial = [uniform(&mut rng, radial[0]), uniform(&mut rng, radial[1])];
    let base_axial = [uniform(&mut rng, ranges.axial), uniform(&mut rng, ranges.axial)];
    for i in 0..n_u {
        let u = dims.u(i);
        for w in 0..2 {
            let k = ed.at(i, w);
            let j = |n: usize| 1.0 + eval_series(jitter[n], u);
            ed.a1[k] = (base_radial[w] * (1.0 + ellipticity) * j(0)).clamp(0.05, 1.0);
            ed.a2[k] = (base_radial[w] * (1.0 - ellipticity) * j(1)).clamp(0.05, 1.0);
            ed.a3[k] = (base_axial[w] * j(2)).clamp(0.05, 1.0);
            // Offsets vanish at the apex row, keeping the pole on the axis.
            let fade = (u - U_MIN) / (U_MAX - U_MIN);
            ed.e_xo[k] = eval_series(offs[0], u) * fade;
            ed.e_yo[k] = eval_series(offs[1], u) * fade;
        }
    }

    // ES: radial contraction that fades toward the apex, and basal descent
    // with the apex held fixed.
    let contraction = [
        uniform(&mut rng, ranges.contraction_inner),
        uniform(&mut rng, ranges.contraction_outer),
    ];
    let shortening = uniform(&mut rng, ranges.shortening_mm);
    let center_drop = 0.5 * shortening;
    let mut es = ed.clone();
    es.center = [center[0], center[1], center[2] - center_drop];
    for i in 0..n_u {
        let u = dims.u(i);
        let f = (u - U_MIN) / (U_MAX - U_MIN);
        for w in 0..2 {
            let k = ed.at(i, w);
            let a0 = ed.a0[w];
            let radial_scale = 1.0 - contraction[w] * (0.35 + 0.65 * f);
            es.a1[k] = ed.a1[k] * radial_scale;
            es.a2[k] = ed.a2[k] * radial_scale;
            let delta = (center_drop + (shortening - center_drop) * f) / a0;
            es.a3[k] = (ed.a3[k] - delta).max(0.05);
            es.e_xo[k] = ed.e_xo[k] * 0.8;
            es.e_yo[k] = ed.e_yo[k] * 0.8;
        }
    }

    let bumps = (0..ranges.bumps)
        .map(|_| {
            let amp = rng.random_range(-1.0..=1.0) * ranges.bump_mm;
            Bump {
                u: rng.random_range(U_MIN + 0.3..U_MAX),
                v: rng.random_range(-PI..PI),
                width: rng.random_range(0.25..0.5),
                amplitude_ed: amp,
                amplitude_es: amp * rng.random_range(0.5..1.5),
            }
        })
        .collect();
    let truth = SubjectTruth { ed, es, bumps };

    let dense = dims;
    let noise = Normal::new(0.0, ranges.noise_mm.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::Config(e.to_string()))?;
    let cloud = |es_phase: bool, w: usize, rng: &mut ChaCha8Rng| -> Result<Vec<Vec3>> {
        let model = truth.eval(dense, es_phase)?;
        let picks = sample(rng, su * sv, ranges.cloud_points);
        let mut idx: Vec<usize> = picks.into_iter().collect();
        idx.sort_unstable();
        Ok(idx
            .into_iter()
            .map(|n| {
                let p = model.at(n / sv, n % sv, w);
                if ranges.noise_mm > 0.0 {
                    [
                        p[0] + noise.sample(rng),
                        p[1] + noise.sample(rng),
                        p[2] + noise.sample(rng),
                    ]
                } else {
                    p
                }
            })
            .collect())
    };
    let ed_inner = cloud(false, 0, &mut rng)?;
    let ed_outer = cloud(false, 1, &mut rng)?;
    let es_inner = cloud(true, 0, &mut rng)?;
    let es_outer = cloud(true, 1, &mut rng)?;
    let cloud = SubjectCloud {
        subject_id: subject_id(seed),
        seed,
        ed_inner,
        ed_outer,
        es_inner,
        es_outer,
    };
    debug_assert!(cloud.ed_inner.iter().all(|&p| vec3::is_finite(p)));
    Ok((cloud, truth))
}
