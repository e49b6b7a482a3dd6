//! Parameterized building blocks recorded on a tape: linear maps, two-layer
//! MLPs and subtraction-relation vector attention.

use std::rc::Rc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use vndm_tape::{Bound, Graph, Matrix, ParamId, ParamStore, Var};

/// `x · W + b`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    /// Uniform `±1/sqrt(fan_in)` weights, zero bias.
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        inputs: usize,
        outputs: usize,
        group: usize,
    ) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let data = (0..inputs * outputs).map(|_| rng.random_range(-bound..bound)).collect();
        Self {
            w: store.add(format!("{name}.w"), Matrix::from_vec(inputs, outputs, data), group),
            b: store.add(format!("{name}.b"), Matrix::zeros(1, outputs), group),
        }
    }

    /// All-zero weights and bias.
    pub fn zeros(store: &mut ParamStore, name: &str, inputs: usize, outputs: usize, group: usize) -> Self {
        Self {
            w: store.add(format!("{name}.w"), Matrix::zeros(inputs, outputs), group),
            b: store.add(format!("{name}.b"), Matrix::zeros(1, outputs), group),
        }
    }

    #[inline]
    pub fn apply(&self, g: &mut Graph, p: &Bound, x: Var) -> Var {
        g.linear(x, p.var(self.w), p.var(self.b))
    }
}

/// `Linear → SiLU → Linear`.
#[derive(Clone, Copy, Debug)]
pub struct Mlp {
    pub l1: Linear,
    pub l2: Linear,
}

impl Mlp {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        dims: [usize; 3],
        group: usize,
    ) -> Self {
        Self {
            l1: Linear::new(store, rng, &format!("{name}.0"), dims[0], dims[1], group),
            l2: Linear::new(store, rng, &format!("{name}.1"), dims[1], dims[2], group),
        }
    }

    pub fn apply(&self, g: &mut Graph, p: &Bound, x: Var) -> Var {
        let h = self.l1.apply(g, p, x);
        let h = g.silu(h);
        self.l2.apply(g, p, h)
    }
}

/// Neighbourhood structure for one attention call: `rep[r] = r / k` repeats
/// each query `k` times and `nbr` lists the key index of every
/// (query, neighbour) row.
#[derive(Clone, Debug)]
pub struct Neighbourhood {
    pub k: usize,
    pub rep: Rc<Vec<usize>>,
    pub nbr: Rc<Vec<usize>>,
}

impl Neighbourhood {
    pub fn new(nbr: Vec<usize>, k: usize) -> Self {
        let rep = (0..nbr.len()).map(|r| r / k).collect();
        Self {
            k,
            rep: Rc::new(rep),
            nbr: Rc::new(nbr),
        }
    }

    pub fn queries(&self) -> usize {
        self.nbr.len() / self.k
    }
}

/// Vector attention with the subtraction relation:
/// `Y_i = Σ_j softmax_j(γ(φ(Q_i) − ψ(K_j) + δ_ij)) ⊙ (α(V_j) + δ_ij)` with
/// `δ_ij = δ(p_i − p_j)` and a per-channel softmax over the neighbours.
#[derive(Clone, Copy, Debug)]
pub struct VectorAttention {
    pub phi: Linear,
    pub psi: Linear,
    pub alpha: Linear,
    pub delta: Mlp,
    pub gamma: Mlp,
}

impl VectorAttention {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        inputs: [usize; 3],
        channels: usize,
        group: usize,
    ) -> Self {
        let c = channels;
        Self {
            phi: Linear::new(store, rng, &format!("{name}.phi"), inputs[0], c, group),
            psi: Linear::new(store, rng, &format!("{name}.psi"), inputs[1], c, group),
            alpha: Linear::new(store, rng, &format!("{name}.alpha"), inputs[2], c, group),
            delta: Mlp::new(store, rng, &format!("{name}.delta"), [3, c, c], group),
            gamma: Mlp::new(store, rng, &format!("{name}.gamma"), [c, c, c], group),
        }
    }

    /// `q`, `q_pos`: query features and positions; `k`, `v`, `k_pos`: key
    /// features, value features and key positions.
    #[allow(clippy::too_many_arguments)]
    pub fn apply(
        &self,
        g: &mut Graph,
        p: &Bound,
        q: Var,
        q_pos: Var,
        k: Var,
        v: Var,
        k_pos: Var,
        hood: &Neighbourhood,
    ) -> Var {
        let qf = self.phi.apply(g, p, q);
        let kf = self.psi.apply(g, p, k);
        let vf = self.alpha.apply(g, p, v);
        let qp = g.gather_rows(q_pos, hood.rep.clone());
        let kp = g.gather_rows(k_pos, hood.nbr.clone());
        let rel = g.sub(qp, kp);
        let delta = self.delta.apply(g, p, rel);
        let qg = g.gather_rows(qf, hood.rep.clone());
        let kg = g.gather_rows(kf, hood.nbr.clone());
        let vg = g.gather_rows(vf, hood.nbr.clone());
        let rel_feat = g.sub(qg, kg);
        let rel_feat = g.add(rel_feat, delta);
        let logits = self.gamma.apply(g, p, rel_feat);
        let weights = g.group_softmax(logits, hood.k);
        let values = g.add(vg, delta);
        let weighted = g.mul(weights, values);
        g.group_sum(weighted, hood.k)
    }
}
