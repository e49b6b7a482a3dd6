//! Two-layer model fitting to wall point clouds by Adam descent on the
//! symmetric Chamfer distance. Twist stays inactive; the axis offsets are
//! unlocked halfway through.

use std::rc::Rc;

use log::warn;
use vndm_tape::{Adam, AdamConfig, Graph, Matrix, ParamStore, Var};

use crate::error::{Error, Result};
use crate::geometry::{GridDims, ParameterFunctions};
use crate::msl::{group_live, msl_schedule, UnlockFractions, GROUP_LOCAL, GROUP_SCALE};
use crate::vec3::{self, Vec3};

#[derive(Clone, Debug, PartialEq)]
pub struct FitConfig {
    pub n_u: usize,
    pub n_v: usize,
    pub iters: usize,
    pub lr: f64,
    /// Iterations without improvement before giving up.
    pub patience: usize,
    /// Fraction of `iters` after which the offsets become trainable.
    pub offset_unlock: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            n_u: 16,
            n_v: 16,
            iters: 300,
            lr: 0.01,
            patience: 100,
            offset_unlock: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitOutcome {
    pub params: ParameterFunctions,
    /// Symmetric Chamfer distance (mean squared, fit-frame units) per iteration.
    pub losses: Vec<f64>,
    /// Chamfer distance of the returned parameters, fit-frame units.
    pub chamfer: f64,
    /// Length unit of the fit frame in mm.
    pub frame_scale: f64,
    pub converged: bool,
}

/// Normalizing frame: cloud centroid and RMS radius.
fn fit_frame(clouds: [&[Vec3]; 2]) -> Result<(Vec3, f64)> {
    let all: Vec<Vec3> = clouds.iter().flat_map(|c| c.iter().copied()).collect();
    if clouds.iter().any(|c| c.is_empty()) {
        return Err(Error::Data("fitting needs non-empty inner and outer clouds".into()));
    }
    if all.iter().any(|&p| !vec3::is_finite(p)) {
        return Err(Error::Data("cloud has non-finite coordinates".into()));
    }
    let c = vec3::centroid(&all);
    let rms = (all.iter().map(|&p| vec3::dist_sq(p, c)).sum::<f64>() / all.len() as f64).sqrt();
    if rms <= 0.0 {
        return Err(Error::Data("cloud has zero extent".into()));
    }
    Ok((c, rms))
}

/// Extent-based starting shape for one layer.
fn initial_layer(cloud: &[Vec3], center: Vec3) -> (f64, [f64; 3]) {
    let mut rx: f64 = 0.0;
    let mut ry: f64 = 0.0;
    let (mut zmin, mut zmax) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in cloud {
        rx = rx.max((p[0] - center[0]).abs());
        ry = ry.max((p[1] - center[1]).abs());
        zmin = zmin.min(p[2]);
        zmax = zmax.max(p[2]);
    }
    let rz = (zmax - zmin) / 1.5;
    let a0 = rx.max(ry).max(rz).max(1e-6);
    (a0, [rx / a0, ry / a0, rz / a0].map(|a| a.clamp(0.05, 1.0)))
}

struct FitModel {
    dims: GridDims,
    trig: Rc<Matrix>,
    ring_of_node: Rc<Vec<usize>>,
    layer_of_ring: Rc<Vec<usize>>,
    nodes_of_layer: [Rc<Vec<usize>>; 2],
}

impl FitModel {
    fn new(n_u: usize, n_v: usize) -> Result<Self> {
        let dims = GridDims::new(n_u, n_v, 2)?;
        let mut trig = Matrix::zeros(dims.len(), 3);
        for idx in 0..dims.len() {
            let c = dims.coords(idx);
            let cu = if c.u == crate::geometry::U_MIN { 0.0 } else { c.u.cos() };
            trig.set(idx, 0, cu * c.v.cos());
            trig.set(idx, 1, cu * c.v.sin());
            trig.set(idx, 2, c.u.sin());
        }
        let ring_of_node = (0..dims.len()).map(|i| dims.ring_of(i)).collect();
        let layer_of_ring = (0..dims.ring_count()).map(|r| r % 2).collect();
        let layer = |w: usize| Rc::new((0..dims.len()).filter(|i| i % 2 == w).collect::<Vec<_>>());
        Ok(Self {
            dims,
            trig: Rc::new(trig),
            ring_of_node: Rc::new(ring_of_node),
            layer_of_ring: Rc::new(layer_of_ring),
            nodes_of_layer: [layer(0), layer(1)],
        })
    }

    /// Model points (N x 3) from center (1x3), log a0 (2x1), log aspects
    /// (R x 3) and offsets (R x 2).
    fn points(&self, g: &mut Graph, center: Var, log_a0: Var, log_a: Var, offs: Var) -> Var {
        let a0 = g.exp(log_a0);
        let a0_ring = g.gather_rows(a0, self.layer_of_ring.clone());
        let a0_ring3 = g.concat_cols(&[a0_ring, a0_ring, a0_ring]);
        let aspects = g.exp(log_a);
        let scale = g.mul(aspects, a0_ring3);
        let per_node = g.gather_rows(scale, self.ring_of_node.clone());
        let trig = g.constant((*self.trig).clone());
        let e = g.mul(per_node, trig);
        let o = g.gather_rows(offs, self.ring_of_node.clone());
        let zero = g.constant(Matrix::zeros(self.dims.len(), 1));
        let o3 = g.concat_cols(&[o, zero]);
        let s = g.add(e, o3);
        g.add_row(s, center)
    }
}

fn nearest(points: &[Vec3], targets: &[Vec3]) -> Vec<usize> {
    points
        .iter()
        .map(|&p| {
            let mut best = (f64::INFINITY, 0);
            for (j, &q) in targets.iter().enumerate() {
                let d = vec3::dist_sq(p, q);
                if d < best.0 {
                    best = (d, j);
                }
            }
            best.1
        })
        .collect()
}

/// Symmetric Chamfer distance: half the sum of the mean squared
/// nearest-neighbour distances in both directions.
pub fn chamfer(a: &[Vec3], b: &[Vec3]) -> f64 {
    let one = |x: &[Vec3], y: &[Vec3]| {
        let nn = nearest(x, y);
        x.iter().zip(nn).map(|(&p, j)| vec3::dist_sq(p, y[j])).sum::<f64>() / x.len() as f64
    };
    0.5 * (one(a, b) + one(b, a))
}

/// Chamfer loss of both layers on the tape, with nearest neighbours frozen
/// at the current positions.
fn chamfer_on_tape(g: &mut Graph, model: &FitModel, pts: Var, clouds: [&[Vec3]; 2]) -> Var {
    let current = g.value(pts).to_points();
    let mut terms = Vec::with_capacity(2);
    for w in 0..2 {
        let nodes = &model.nodes_of_layer[w];
        let layer_pts: Vec<Vec3> = nodes.iter().map(|&i| current[i]).collect();
        let cloud = clouds[w];
        let layer = g.gather_rows(pts, nodes.clone());

        let to_cloud = nearest(&layer_pts, cloud);
        let target = Matrix::from_points(&to_cloud.iter().map(|&j| cloud[j]).collect::<Vec<_>>());
        let target = g.constant(target);
        let d = g.sub(layer, target);
        let m2c = g.mean_sq_rows(d);

        let to_model = nearest(cloud, &layer_pts);
        let picked = g.gather_rows(layer, Rc::new(to_model));
        let c = g.constant(Matrix::from_points(cloud));
        let d = g.sub(picked, c);
        let c2m = g.mean_sq_rows(d);

        let s = g.add(m2c, c2m);
        terms.push(g.scale(s, 0.25));
    }
    g.add(terms[0], terms[1])
}

/// Fits inner/outer layer parameters (twist zero, identity rotation) to a
/// pair of clouds. `init`, when given, warm-starts the fit.
pub fn fit_two_layer(
    inner: &[Vec3],
    outer: &[Vec3],
    config: &FitConfig,
    init: Option<&ParameterFunctions>,
) -> Result<FitOutcome> {
    if !(config.lr > 0.0 && config.lr.is_finite()) {
        return Err(Error::Config(format!("fit learning rate {} must be positive", config.lr)));
    }
    let (origin, scale) = fit_frame([inner, outer])?;
    let model = FitModel::new(config.n_u, config.n_v)?;
    let dims = model.dims;
    let to_frame = |p: Vec3| vec3::scale(vec3::sub(p, origin), 1.0 / scale);
    let clouds_f: [Vec<Vec3>; 2] = [
        inner.iter().map(|&p| to_frame(p)).collect(),
        outer.iter().map(|&p| to_frame(p)).collect(),
    ];
    let rings = dims.ring_count();

    let mut store = ParamStore::new();
    let (c0, la0, la, off) = match init {
        Some(pf) => {
            if pf.n_u != config.n_u || pf.n_w != 2 {
                return Err(Error::Dimension(format!(
                    "warm start sampled on ({}, {}), fit grid is ({}, 2)",
                    pf.n_u, pf.n_w, config.n_u
                )));
            }
            let c = to_frame(pf.center);
            let la0 = pf.a0.iter().map(|a| (a / scale).ln()).collect::<Vec<_>>();
            let mut la = Vec::with_capacity(rings * 3);
            let mut off = Vec::with_capacity(rings * 2);
            for r in 0..rings {
                for a in [pf.a1[r], pf.a2[r], pf.a3[r]] {
                    la.push(a.max(1e-6).ln());
                }
                off.push(pf.e_xo[r] / scale);
                off.push(pf.e_yo[r] / scale);
            }
            (c, la0, la, off)
        }
        None => {
            let all: Vec<Vec3> = clouds_f.iter().flatten().copied().collect();
            let mut c = vec3::centroid(&all);
            let zmax = clouds_f[1].iter().map(|p| p[2]).fold(f64::NEG_INFINITY, f64::max);
            let zmin = clouds_f[1].iter().map(|p| p[2]).fold(f64::INFINITY, f64::min);
            c[2] = zmax - (zmax - zmin) / 3.0;
            let layers = [initial_layer(&clouds_f[0], c), initial_layer(&clouds_f[1], c)];
            let la0 = layers.iter().map(|(a0, _)| a0.ln()).collect();
            let la = (0..rings)
                .flat_map(|r| layers[r % 2].1.map(f64::ln))
                .collect();
            (c, la0, la, vec![0.0; rings * 2])
        }
    };
    let p_center = store.add("center", Matrix::from_vec(1, 3, c0.to_vec()), GROUP_SCALE);
    let p_a0 = store.add("log_a0", Matrix::from_vec(2, 1, la0), GROUP_SCALE);
    let p_a = store.add("log_aspect", Matrix::from_vec(rings, 3, la), GROUP_SCALE);
    let p_off = store.add("offset", Matrix::from_vec(rings, 2, off), GROUP_LOCAL);
    let fractions = UnlockFractions([0.0, 1.0, config.offset_unlock.clamp(0.0, 1.0)]);

    let clouds = [clouds_f[0].as_slice(), clouds_f[1].as_slice()];
    let mut adam = Adam::new(AdamConfig::with_lr(config.lr), &store);
    let mut losses = Vec::with_capacity(config.iters);
    let mut best = (f64::INFINITY, store.clone());
    let mut since_best = 0;
    let mut converged = true;
    for it in 0..config.iters {
        let mask = msl_schedule(it, config.iters, fractions);
        let mut g = Graph::new();
        let b = store.bind(&mut g, |grp| group_live(mask, grp));
        let pts = model.points(&mut g, b.var(p_center), b.var(p_a0), b.var(p_a), b.var(p_off));
        let loss = chamfer_on_tape(&mut g, &model, pts, clouds);
        let value = g.value(loss).item();
        if !value.is_finite() {
            return Err(Error::Numerical(format!("fit loss became {value} at iteration {it}")));
        }
        losses.push(value);
        if value < best.0 {
            best = (value, store.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if config.patience > 0 && since_best >= config.patience {
                warn!("fit stalled for {since_best} iterations at loss {}; keeping best", best.0);
                converged = false;
                break;
            }
        }
        let mut grads = g.backward(loss).expect("scalar loss");
        let grads = b.collect(&store, &mut grads);
        adam.step(&mut store, &grads);
    }
    // The final update has not been scored yet.
    if converged && config.iters > 0 {
        let mut g = Graph::new();
        let b = store.bind(&mut g, |_| false);
        let pts = model.points(&mut g, b.var(p_center), b.var(p_a0), b.var(p_a), b.var(p_off));
        let loss = chamfer_on_tape(&mut g, &model, pts, clouds);
        let value = g.value(loss).item();
        if value < best.0 {
            best = (value, store.clone());
        }
    }
    let (chamfer_best, store) = if config.iters == 0 {
        let mut g = Graph::new();
        let b = store.bind(&mut g, |_| false);
        let pts = model.points(&mut g, b.var(p_center), b.var(p_a0), b.var(p_a), b.var(p_off));
        let loss = chamfer_on_tape(&mut g, &model, pts, clouds);
        (g.value(loss).item(), store)
    } else {
        best
    };

    // Back to mm, folding any aspect above 1 into the layer scale.
    let mut pf = ParameterFunctions::uniform(config.n_u, 2, 1.0, [1.0; 3]);
    let c = store.get(p_center).data();
    pf.center = vec3::add(origin, vec3::scale([c[0], c[1], c[2]], scale));
    let la = store.get(p_a);
    let off = store.get(p_off);
    for w in 0..2 {
        let mut a0 = store.get(p_a0).data()[w].exp() * scale;
        let peak = (0..rings)
            .filter(|r| r % 2 == w)
            .flat_map(|r| la.row(r).iter().map(|x| x.exp()))
            .fold(0.0, f64::max);
        let fold = peak.max(1.0);
        a0 *= fold;
        pf.a0[w] = a0;
        for r in (0..rings).filter(|r| r % 2 == w) {
            pf.a1[r] = la.get(r, 0).exp() / fold;
            pf.a2[r] = la.get(r, 1).exp() / fold;
            pf.a3[r] = la.get(r, 2).exp() / fold;
            pf.e_xo[r] = off.get(r, 0) * scale;
            pf.e_yo[r] = off.get(r, 1) * scale;
        }
    }
    if init.is_some() && config.iters == 0 {
        // Unchanged warm start, without any round-off from the frame change.
        pf = init.cloned().expect("checked");
    }
    pf.validate()?;
    Ok(FitOutcome {
        params: pf,
        losses,
        chamfer: chamfer_best,
        frame_scale: scale,
        converged,
    })
}
