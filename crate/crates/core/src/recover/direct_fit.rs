//! Optimization baseline without learned weights: fit one step's global and
//! local deformation directly to the cues.

use std::rc::Rc;

use serde::{Deserialize, Serialize};
use vndm_tape::{Adam, AdamConfig, Graph, Matrix, ParamStore, RowMix, Var};

use crate::error::{Error, Result};
use crate::geometry::GridDims;
use crate::net::knn::knn;
use crate::net::{apply_global, apply_global_on_tape, Topology};
use crate::recover::normalize::norm_meta;
use crate::recover::sequential::MotionPredictor;
use crate::sequence::NormMeta;
use crate::sim::clip::ApparentMotionCues;
use crate::vec3::{self, Vec3};

/// Interpolation stencil size.
pub const STENCIL: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirectFitConfig {
    pub iters: usize,
    pub lr: f64,
    pub lambda_d: f64,
    pub lambda_s: f64,
}

impl Default for DirectFitConfig {
    fn default() -> Self {
        Self {
            iters: 300,
            lr: 1e-3,
            lambda_d: 0.1,
            lambda_s: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DirectFit {
    pub points: Vec<Vec3>,
    /// Multiplicative axis updates and twist per ring.
    pub scale: Vec<[f64; 3]>,
    pub twist: Vec<f64>,
    pub q_d: Vec<Vec3>,
    /// Objective before each iteration, then after the last.
    pub losses: Vec<f64>,
    /// Mean penalized cue mismatch of the result (x, y for SAX; z for LAX).
    pub residual: f64,
}

/// Inverse-distance weights of the `STENCIL` nearest material points.
fn stencil(m: &[Vec3], starts: &[Vec3]) -> Result<RowMix> {
    let k = STENCIL.min(m.len());
    let nn = knn(starts, m, k)?;
    let mut mix = RowMix::new(m.len());
    for (i, &s) in starts.iter().enumerate() {
        let idx = &nn[i * k..(i + 1) * k];
        if let Some(&j) = idx.iter().find(|&&j| vec3::dist_sq(s, m[j]) == 0.0) {
            mix.push_row([(j, 1.0)]);
            continue;
        }
        let w: Vec<f64> = idx.iter().map(|&j| 1.0 / vec3::dist(s, m[j])).collect();
        let total: f64 = w.iter().sum();
        mix.push_row(idx.iter().zip(&w).map(|(&j, &wj)| (j, wj / total)));
    }
    Ok(mix)
}

struct Problem {
    m: Matrix,
    topo: Topology,
    sax: Option<(Rc<RowMix>, Matrix, Matrix)>,
    lax: Option<(Rc<RowMix>, Matrix, Matrix)>,
    cues: usize,
}

impl Problem {
    fn new(m: &[Vec3], dims: GridDims, cues: &ApparentMotionCues) -> Result<Self> {
        let view = |pairs: &[[Vec3; 2]]| -> Result<Option<(Rc<RowMix>, Matrix, Matrix)>> {
            if pairs.is_empty() {
                return Ok(None);
            }
            let starts: Vec<Vec3> = pairs.iter().map(|p| p[0]).collect();
            let ends: Vec<Vec3> = pairs.iter().map(|p| p[1]).collect();
            Ok(Some((
                Rc::new(stencil(m, &starts)?),
                Matrix::from_points(&starts),
                Matrix::from_points(&ends),
            )))
        };
        Ok(Self {
            m: Matrix::from_points(m),
            topo: Topology::new(dims),
            sax: view(&cues.sax)?,
            lax: view(&cues.lax)?,
            cues: cues.len(),
        })
    }

    /// Mean penalized cue mismatch for the displacement field `disp`.
    fn data_term(&self, g: &mut Graph, disp: Var) -> Var {
        let mut terms = Vec::new();
        for (view, cols) in [(&self.sax, (0, 2)), (&self.lax, (2, 1))] {
            let Some((mix, starts, ends)) = view else { continue };
            let d = g.mix_rows(disp, mix.clone());
            let s = g.constant(starts.clone());
            let e = g.constant(ends.clone());
            let pred = g.add(s, d);
            let r = g.sub(pred, e);
            let r = g.slice_cols(r, cols.0, cols.1);
            let n = starts.rows() as f64;
            let msq = g.mean_sq_rows(r);
            terms.push(g.scale(msq, n / self.cues as f64));
        }
        let mut total = terms[0];
        for &t in &terms[1..] {
            total = g.add(total, t);
        }
        total
    }
}

/// Fits `(q_g, q_d)` for one transition by gradient descent (Adam). `m`
/// and `cues` are in normalized units.
pub fn direct_fit(
    m: &[Vec3],
    dims: GridDims,
    cues: &ApparentMotionCues,
    config: &DirectFitConfig,
) -> Result<DirectFit> {
    if cues.is_empty() {
        return Err(Error::Data("direct fit needs at least one cue pair".into()));
    }
    if m.len() != dims.len() {
        return Err(Error::Dimension(format!("{} points for grid {dims:?}", m.len())));
    }
    let problem = Problem::new(m, dims, cues)?;
    let rings = dims.ring_count();
    let mut store = ParamStore::new();
    let ls = store.add("log_scale", Matrix::zeros(rings, 3), 0);
    let tw = store.add("twist", Matrix::zeros(rings, 1), 0);
    let qd = store.add("q_d", Matrix::zeros(dims.len(), 3), 0);
    let mut adam = Adam::new(AdamConfig::with_lr(config.lr), &store);

    let objective = |store: &ParamStore, live: bool| -> (Graph, Var, Vec<Option<Matrix>>) {
        let mut g = Graph::new();
        let p = store.bind(&mut g, |_| live);
        let m0 = g.constant(problem.m.clone());
        let moved = apply_global_on_tape(&mut g, m0, p.var(ls), p.var(tw), &problem.topo);
        let out = g.add(moved, p.var(qd));
        let disp = g.sub(out, m0);
        let data = problem.data_term(&mut g, disp);
        let l_d = g.mean_sq_rows(p.var(qd));
        let a = g.gather_rows(p.var(qd), problem.topo.edge_a.clone());
        let b = g.gather_rows(p.var(qd), problem.topo.edge_b.clone());
        let e = g.sub(a, b);
        let l_s = g.mean_sq_rows(e);
        let wd = g.scale(l_d, config.lambda_d);
        let ws = g.scale(l_s, config.lambda_s);
        let t = g.add(data, wd);
        let total = g.add(t, ws);
        let grads = if live {
            let mut raw = g.backward(total).expect("scalar objective");
            p.collect(store, &mut raw)
        } else {
            Vec::new()
        };
        (g, total, grads)
    };

    let mut losses = Vec::with_capacity(config.iters + 1);
    for it in 0..config.iters {
        let (g, total, grads) = objective(&store, true);
        let value = g.value(total).item();
        if !value.is_finite() {
            return Err(Error::Numerical(format!("direct fit objective is {value} at iteration {it}")));
        }
        if let Some(&first) = losses.first() {
            if value > 10.0 * first && value > f64::MIN_POSITIVE {
                return Err(Error::Numerical(format!(
                    "direct fit diverged at iteration {it}: objective {value:e} exceeds 10x initial {first:e}"
                )));
            }
        }
        losses.push(value);
        adam.step(&mut store, &grads);
    }
    let (g, total, _) = objective(&store, false);
    losses.push(g.value(total).item());

    let scale: Vec<[f64; 3]> = store.get(ls).to_points().into_iter().map(|r| r.map(f64::exp)).collect();
    let twist = store.get(tw).data().to_vec();
    let q_d = store.get(qd).to_points();
    let moved = apply_global(m, &scale, &twist, dims)?;
    let points: Vec<Vec3> = moved.iter().zip(&q_d).map(|(&a, &b)| vec3::add(a, b)).collect();
    let residual = cue_residual(m, &points, cues)?;
    Ok(DirectFit {
        points,
        scale,
        twist,
        q_d,
        losses,
        residual,
    })
}

/// Mean over cues of the penalized-component distance between the
/// interpolated prediction and `S(t_{q+1})`.
pub fn cue_residual(m: &[Vec3], predicted: &[Vec3], cues: &ApparentMotionCues) -> Result<f64> {
    if cues.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for (pairs, sax) in [(&cues.sax, true), (&cues.lax, false)] {
        if pairs.is_empty() {
            continue;
        }
        let starts: Vec<Vec3> = pairs.iter().map(|p| p[0]).collect();
        let mix = stencil(m, &starts)?;
        for (r, pair) in pairs.iter().enumerate() {
            let mut pred = pair[0];
            for (j, w) in mix.row_terms(r) {
                let d = vec3::sub(predicted[j], m[j]);
                pred = vec3::add(pred, vec3::scale(d, w));
            }
            let e = vec3::sub(pred, pair[1]);
            sum += if sax { e[0].hypot(e[1]) } else { e[2].abs() };
        }
    }
    Ok(sum / cues.len() as f64)
}

/// The baseline as a step-by-step predictor, in normalized units of `M(t_0)`.
#[derive(Clone, Debug)]
pub struct DirectFitPredictor {
    pub config: DirectFitConfig,
    meta: NormMeta,
    dims: Option<GridDims>,
    carried: Option<Vec<Vec3>>,
}

impl DirectFitPredictor {
    pub fn new(config: DirectFitConfig) -> Self {
        Self {
            config,
            meta: NormMeta::IDENTITY,
            dims: None,
            carried: None,
        }
    }
}

impl MotionPredictor for DirectFitPredictor {
    fn begin(&mut self, m0: &[Vec3], dims: GridDims) -> Result<()> {
        self.meta = norm_meta(m0)?;
        self.dims = Some(dims);
        self.carried = Some(self.meta.apply_all(m0));
        Ok(())
    }

    fn step(&mut self, q: usize, m: &[Vec3], cues: &ApparentMotionCues) -> Result<Vec<Vec3>> {
        let dims = self.dims.ok_or_else(|| Error::Data("predictor used before begin".into()))?;
        let input = self.carried.take().unwrap_or_else(|| self.meta.apply_all(m));
        let meta = self.meta;
        let cues = cues.map_points(|p| meta.apply(p));
        let fit = direct_fit(&input, dims, &cues, &self.config)
            .map_err(|e| Error::Numerical(format!("transition {q}: {e}")))?;
        let out = self.meta.invert_all(&fit.points);
        self.carried = Some(fit.points);
        Ok(out)
    }
}
