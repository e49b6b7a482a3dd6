//! The recovery network: cue cross-attention, a point self-attention
//! backbone, a per-ring global deformation head and a latent-conditioned
//! velocity field integrated with unrolled RK4.

pub mod backbone;
pub mod knn;
pub mod layers;

use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use vndm_tape::{Bound, Graph, Matrix, ParamStore, RowMix, Var};

use crate::error::{Error, Result};
use crate::flow::{rk4, OdeSystem};
use crate::geometry::GridDims;
use crate::msl::{GROUP_LOCAL, GROUP_SCALE, GROUP_SHARED, GROUP_TWIST};
use crate::sim::clip::ApparentMotionCues;
use crate::vec3::Vec3;

use backbone::{Backbone, Hierarchy};
use knn::knn;
use layers::{Linear, Mlp, Neighbourhood, VectorAttention};

/// What the value features of cue attention carry.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueMode {
    /// `S(t_{q+1})` coordinates.
    #[default]
    Coordinates,
    /// `S(t_{q+1}) - S(t_q)`.
    Displacement,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    /// Cue neighbours per material point and view.
    pub k: usize,
    /// Cue attention channels.
    pub channels: usize,
    /// Hint width after fusion.
    pub hint: usize,
    pub widths: Vec<usize>,
    pub ratio: usize,
    pub k_backbone: usize,
    pub latent: usize,
    pub global_hidden: usize,
    pub flow_hidden: usize,
    pub flow_steps: usize,
    pub value_mode: ValueMode,
    pub init_seed: u64,
}

impl NetConfig {
    pub fn desk() -> Self {
        Self {
            k: 16,
            channels: 32,
            hint: 32,
            widths: vec![32, 64, 128],
            ratio: 4,
            k_backbone: 8,
            latent: 64,
            global_hidden: 32,
            flow_hidden: 64,
            flow_steps: 8,
            value_mode: ValueMode::Displacement,
            init_seed: 0,
        }
    }

    pub fn paper() -> Self {
        Self {
            k: 64,
            value_mode: ValueMode::Coordinates,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("k", self.k),
            ("channels", self.channels),
            ("hint", self.hint),
            ("ratio", self.ratio),
            ("k_backbone", self.k_backbone),
            ("latent", self.latent),
            ("global_hidden", self.global_hidden),
            ("flow_hidden", self.flow_hidden),
            ("flow_steps", self.flow_steps),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("network field {name} must be positive")));
        }
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::Config(format!("backbone widths {:?} invalid", self.widths)));
        }
        if self.widths.len() > 1 && self.ratio < 2 {
            return Err(Error::Config("downsample ratio must be at least 2".into()));
        }
        Ok(())
    }
}

/// Ablation switches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeFlags {
    pub global: bool,
    pub local: bool,
    /// SAX values keep x, y only; LAX values keep z only.
    pub separated: bool,
}

impl ModeFlags {
    pub const FULL: ModeFlags = ModeFlags {
        global: true,
        local: true,
        separated: false,
    };

    pub fn global_only() -> Self {
        Self {
            local: false,
            ..Self::FULL
        }
    }

    pub fn local_only() -> Self {
        Self {
            global: false,
            ..Self::FULL
        }
    }
}

impl Default for ModeFlags {
    fn default() -> Self {
        Self::FULL
    }
}

/// Grid index structure shared by every forward pass on one grid shape.
#[derive(Clone, Debug)]
pub struct Topology {
    pub dims: GridDims,
    pub ring_mean: Rc<RowMix>,
    pub ring_of_node: Rc<Vec<usize>>,
    pub edge_a: Rc<Vec<usize>>,
    pub edge_b: Rc<Vec<usize>>,
}

impl Topology {
    pub fn new(dims: GridDims) -> Self {
        let mut ring_mean = RowMix::new(dims.len());
        let inv = 1.0 / dims.n_v as f64;
        for i in 0..dims.n_u {
            for w in 0..dims.n_w {
                ring_mean.push_row((0..dims.n_v).map(|j| (dims.index(i, j, w), inv)));
            }
        }
        let (edge_a, edge_b) = dims.edges().into_iter().unzip();
        Self {
            dims,
            ring_mean: Rc::new(ring_mean),
            ring_of_node: Rc::new((0..dims.len()).map(|i| dims.ring_of(i)).collect()),
            edge_a: Rc::new(edge_a),
            edge_b: Rc::new(edge_b),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GlobalHead {
    pub hidden: Linear,
    pub scale: Linear,
    pub twist: Linear,
}

#[derive(Clone, Copy, Debug)]
pub struct FlowHead {
    pub w_x: vndm_tape::ParamId,
    pub w_h: vndm_tape::ParamId,
    pub z_in: Linear,
    pub mid: Linear,
    pub out: Linear,
}

/// The network and its parameters.
#[derive(Clone, Debug)]
pub struct Psi {
    pub config: NetConfig,
    pub store: ParamStore,
    pub cross: [VectorAttention; 2],
    pub fuse: Mlp,
    pub backbone: Backbone,
    pub global: GlobalHead,
    pub flow: FlowHead,
}

/// Tape handles of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Forward {
    /// `M̂(t_{q+1})`, N x 3.
    pub points: Var,
    /// Points after the global deformation only.
    pub global_points: Var,
    /// `ln a` per ring (R x 3) and twist per ring (R x 1).
    pub log_scale: Option<Var>,
    pub twist: Option<Var>,
    /// Local displacement, N x 3.
    pub q_d: Option<Var>,
    pub latent: Var,
}

/// Plain-value result of a forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub points: Vec<Vec3>,
    /// Multiplicative axis updates per ring.
    pub scale: Vec<[f64; 3]>,
    pub twist: Vec<f64>,
    pub q_d: Vec<Vec3>,
}

impl Psi {
    /// Fresh network. The final global and velocity layers start at zero, so
    /// an untrained network is the identity map.
    pub fn new(config: NetConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut store = ParamStore::new();
        let c = config.channels;
        let cross = [
            VectorAttention::new(&mut store, &mut rng, "cross.sax", [3, 3, 3], c, GROUP_SHARED),
            VectorAttention::new(&mut store, &mut rng, "cross.lax", [3, 3, 3], c, GROUP_SHARED),
        ];
        let fuse = Mlp::new(&mut store, &mut rng, "fuse", [2 * c, config.hint, config.hint], GROUP_SHARED);
        let backbone = Backbone::new(
            &mut store,
            &mut rng,
            config.hint + 3,
            &config.widths,
            config.latent,
            GROUP_SHARED,
        );
        let gh = config.global_hidden;
        let global = GlobalHead {
            hidden: Linear::new(&mut store, &mut rng, "global.hidden", config.latent, gh, GROUP_SHARED),
            scale: Linear::zeros(&mut store, "global.scale", gh, 3, GROUP_SCALE),
            twist: Linear::zeros(&mut store, "global.twist", gh, 1, GROUP_TWIST),
        };
        let f = config.flow_hidden;
        let bound = 1.0 / ((3 + 1 + config.latent) as f64).sqrt();
        let mut uniform = |rows: usize, cols: usize| {
            use rand::Rng;
            Matrix::from_vec(
                rows,
                cols,
                (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect(),
            )
        };
        let w_x = store.add("flow.in.x", uniform(3, f), GROUP_LOCAL);
        let w_h = store.add("flow.in.h", uniform(1, f), GROUP_LOCAL);
        let mut rng2 = ChaCha8Rng::seed_from_u64(config.init_seed.wrapping_add(1));
        let flow = FlowHead {
            w_x,
            w_h,
            z_in: Linear::new(&mut store, &mut rng2, "flow.in.z", config.latent, f, GROUP_LOCAL),
            mid: Linear::new(&mut store, &mut rng2, "flow.mid", f, f, GROUP_LOCAL),
            out: Linear::zeros(&mut store, "flow.out", f, 3, GROUP_LOCAL),
        };
        Ok(Self {
            config,
            store,
            cross,
            fuse,
            backbone,
            global,
            flow,
        })
    }

    /// Replaces parameter values by name; every tensor must be present with
    /// its expected shape.
    pub fn load(&mut self, tensors: &[(String, Matrix)]) -> Result<()> {
        if tensors.len() != self.store.len() {
            return Err(Error::Format(format!(
                "checkpoint has {} tensors, network has {}",
                tensors.len(),
                self.store.len()
            )));
        }
        for (name, m) in tensors {
            let id = self
                .store
                .find(name)
                .ok_or_else(|| Error::Format(format!("unknown tensor {name}")))?;
            let cur = self.store.get(id);
            if cur.shape() != m.shape() {
                return Err(Error::Format(format!(
                    "tensor {name} has shape {:?}, network expects {:?}",
                    m.shape(),
                    cur.shape()
                )));
            }
            *self.store.get_mut(id) = m.clone();
        }
        Ok(())
    }

    fn view_hints(
        &self,
        g: &mut Graph,
        p: &Bound,
        view: usize,
        m: Var,
        pairs: &[[Vec3; 2]],
        flags: ModeFlags,
    ) -> Result<Var> {
        let n = g.value(m).rows();
        let c = self.config.channels;
        if pairs.is_empty() {
            return Ok(g.constant(Matrix::zeros(n, c)));
        }
        let k = self.config.k;
        if k > pairs.len() {
            return Err(Error::Domain(format!(
                "k = {k} exceeds the {} cue pairs of the {} view",
                pairs.len(),
                if view == 0 { "SAX" } else { "LAX" }
            )));
        }
        let from: Vec<Vec3> = pairs.iter().map(|p| p[0]).collect();
        let keep: [f64; 3] = match (flags.separated, view) {
            (false, _) => [1.0; 3],
            (true, 0) => [1.0, 1.0, 0.0],
            (true, _) => [0.0, 0.0, 1.0],
        };
        let values: Vec<Vec3> = pairs
            .iter()
            .map(|[a, b]| {
                let v = match self.config.value_mode {
                    ValueMode::Coordinates => *b,
                    ValueMode::Displacement => crate::vec3::sub(*b, *a),
                };
                [v[0] * keep[0], v[1] * keep[1], v[2] * keep[2]]
            })
            .collect();
        let queries = g.value(m).to_points();
        let hood = Neighbourhood::new(knn(&queries, &from, k)?, k);
        let kpos = g.constant(Matrix::from_points(&from));
        let vals = g.constant(Matrix::from_points(&values));
        Ok(self.cross[view].apply(g, p, m, m, kpos, vals, kpos, &hood))
    }

    /// Hints `H` (N x hint) from both cue views.
    pub fn hints(
        &self,
        g: &mut Graph,
        p: &Bound,
        m: Var,
        cues: &ApparentMotionCues,
        flags: ModeFlags,
    ) -> Result<Var> {
        if cues.is_empty() {
            return Err(Error::Data("no apparent-motion cues for this transition".into()));
        }
        if !cues.is_finite() {
            return Err(Error::Data("apparent-motion cues have non-finite coordinates".into()));
        }
        let sax = self.view_hints(g, p, 0, m, &cues.sax, flags)?;
        let lax = self.view_hints(g, p, 1, m, &cues.lax, flags)?;
        let cat = g.concat_cols(&[sax, lax]);
        Ok(self.fuse.apply(g, p, cat))
    }

    /// Per-ring `(ln a, τ)` from ring-pooled latent codes.
    pub fn global_params(&self, g: &mut Graph, p: &Bound, z: Var, topo: &Topology) -> (Var, Var) {
        let pooled = g.mix_rows(z, topo.ring_mean.clone());
        let h = self.global.hidden.apply(g, p, pooled);
        let h = g.silu(h);
        let log_scale = self.global.scale.apply(g, p, h);
        let twist = self.global.twist.apply(g, p, h);
        (log_scale, twist)
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        p: &Bound,
        m: Var,
        topo: &Topology,
        cues: &ApparentMotionCues,
        flags: ModeFlags,
    ) -> Result<Forward> {
        let n = g.value(m).rows();
        if n != topo.dims.len() || g.value(m).cols() != 3 {
            return Err(Error::Dimension(format!(
                "{} x {} material points for a grid of {}",
                n,
                g.value(m).cols(),
                topo.dims.len()
            )));
        }
        let hints = self.hints(g, p, m, cues, flags)?;
        let points = g.value(m).to_points();
        let hier = Hierarchy::build(
            &points,
            self.config.widths.len(),
            self.config.ratio,
            self.config.k_backbone,
        )?;
        let feats = g.concat_cols(&[hints, m]);
        let z = self.backbone.apply(g, p, feats, m, &hier);

        let (global_points, log_scale, twist) = if flags.global {
            let (ls, tw) = self.global_params(g, p, z, topo);
            (apply_global_on_tape(g, m, ls, tw, topo), Some(ls), Some(tw))
        } else {
            (m, None, None)
        };
        let (out, q_d) = if flags.local {
            let (x, d) = self.integrate(g, p, global_points, z)?;
            (x, Some(d))
        } else {
            (global_points, None)
        };
        if !g.value(out).is_finite() {
            return Err(Error::Numerical("network produced non-finite points".into()));
        }
        Ok(Forward {
            points: out,
            global_points,
            log_scale,
            twist,
            q_d,
            latent: z,
        })
    }

    /// Unrolled RK4 of the latent-conditioned velocity field from `x0`.
    fn integrate(&self, g: &mut Graph, p: &Bound, x0: Var, z: Var) -> Result<(Var, Var)> {
        let zc = self.flow.z_in.apply(g, p, z);
        let mut sys = TapeFlow {
            g,
            p,
            head: &self.flow,
            zc,
        };
        let steps = self.config.flow_steps;
        let (x, acc) = rk4(&mut sys, &x0, 0.0, 1.0, steps)?;
        let q_d = sys.g.scale(acc, 1.0 / steps as f64);
        Ok((x, q_d))
    }

    /// Evaluates the network on plain values with all parameters constant.
    pub fn predict(
        &self,
        m: &[Vec3],
        dims: GridDims,
        cues: &ApparentMotionCues,
        flags: ModeFlags,
    ) -> Result<Prediction> {
        let topo = Topology::new(dims);
        let mut g = Graph::new();
        let p = self.store.bind(&mut g, |_| false);
        let mv = g.constant(Matrix::from_points(m));
        let f = self.forward(&mut g, &p, mv, &topo, cues, flags)?;
        let rings = dims.ring_count();
        let scale = match f.log_scale {
            Some(v) => g.value(v).to_points().into_iter().map(|r| r.map(f64::exp)).collect(),
            None => vec![[1.0; 3]; rings],
        };
        let twist = match f.twist {
            Some(v) => g.value(v).data().to_vec(),
            None => vec![0.0; rings],
        };
        let q_d = match f.q_d {
            Some(v) => g.value(v).to_points(),
            None => vec![[0.0; 3]; dims.len()],
        };
        Ok(Prediction {
            points: g.value(f.points).to_points(),
            scale,
            twist,
            q_d,
        })
    }
}

struct TapeFlow<'a> {
    g: &'a mut Graph,
    p: &'a Bound,
    head: &'a FlowHead,
    zc: Var,
}

impl OdeSystem for TapeFlow<'_> {
    type State = Var;

    fn velocity(&mut self, x: &Var, h: f64, step: usize) -> Result<Var> {
        let g = &mut *self.g;
        let xw = g.matmul(*x, self.p.var(self.head.w_x));
        let pre = g.add(xw, self.zc);
        let hw = g.scale(self.p.var(self.head.w_h), h);
        let pre = g.add_row(pre, hw);
        let a = g.silu(pre);
        let a = self.head.mid.apply(g, self.p, a);
        let a = g.silu(a);
        let v = self.head.out.apply(g, self.p, a);
        if !g.value(v).is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite velocity in integration step {step} (h = {h})"
            )));
        }
        Ok(v)
    }

    fn shift(&mut self, x: &Var, a: f64, k: &Var) -> Var {
        let s = self.g.scale(*k, a);
        self.g.add(*x, s)
    }

    fn accumulate(&mut self, acc: Option<&Var>, k: [&Var; 4]) -> Var {
        let g = &mut *self.g;
        let ends = g.add(*k[0], *k[3]);
        let mid = g.add(*k[1], *k[2]);
        let mid = g.scale(mid, 2.0);
        let s = g.add(ends, mid);
        let s = g.scale(s, 1.0 / 6.0);
        match acc {
            Some(a) => g.add(*a, s),
            None => s,
        }
    }

    fn advance(&mut self, x0: &Var, acc: &Var, span: f64, steps: usize) -> Var {
        let d = self.g.scale(*acc, span / steps as f64);
        self.g.add(*x0, d)
    }
}

/// Per ring: `M' = Rot_z(τ) · diag(a) · M` with `a = exp(ln a)`.
pub fn apply_global_on_tape(g: &mut Graph, m: Var, log_scale: Var, twist: Var, topo: &Topology) -> Var {
    let a = g.exp(log_scale);
    let a_node = g.gather_rows(a, topo.ring_of_node.clone());
    let t_node = g.gather_rows(twist, topo.ring_of_node.clone());
    let s = g.mul(a_node, m);
    let (c, sn) = (g.cos(t_node), g.sin(t_node));
    let sx = g.slice_cols(s, 0, 1);
    let sy = g.slice_cols(s, 1, 1);
    let sz = g.slice_cols(s, 2, 1);
    let xc = g.mul(sx, c);
    let ys = g.mul(sy, sn);
    let xs = g.mul(sx, sn);
    let yc = g.mul(sy, c);
    let x = g.sub(xc, ys);
    let y = g.add(xs, yc);
    g.concat_cols(&[x, y, sz])
}

/// Plain-value global deformation: per ring `(a, τ)`.
pub fn apply_global(points: &[Vec3], scale: &[[f64; 3]], twist: &[f64], dims: GridDims) -> Result<Vec<Vec3>> {
    if points.len() != dims.len() || scale.len() != dims.ring_count() || twist.len() != dims.ring_count() {
        return Err(Error::Dimension(format!(
            "{} points, {} scales, {} twists for grid {dims:?}",
            points.len(),
            scale.len(),
            twist.len()
        )));
    }
    Ok(points
        .iter()
        .enumerate()
        .map(|(idx, &p)| {
            let r = dims.ring_of(idx);
            let a = scale[r];
            let (sn, c) = twist[r].sin_cos();
            let s = [a[0] * p[0], a[1] * p[1], a[2] * p[2]];
            [s[0] * c - s[1] * sn, s[0] * sn + s[1] * c, s[2]]
        })
        .collect())
}
