//! U-shaped point self-attention encoder-decoder producing per-point latent
//! motion codes.

use std::rc::Rc;

use rand_chacha::ChaCha8Rng;
use vndm_tape::{Bound, Graph, ParamStore, RowMix, Var};

use crate::error::{Error, Result};
use crate::net::knn::knn;
use crate::net::layers::{Linear, Neighbourhood, VectorAttention};
use crate::sim::clip::farthest_point_sampling;
use crate::vec3::{self, Vec3};

/// Residual vector self-attention: `x + W · VA(x)`.
#[derive(Clone, Copy, Debug)]
pub struct PointBlock {
    pub attn: VectorAttention,
    pub proj: Linear,
}

impl PointBlock {
    fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, c: usize, group: usize) -> Self {
        Self {
            attn: VectorAttention::new(store, rng, &format!("{name}.attn"), [c; 3], c, group),
            proj: Linear::new(store, rng, &format!("{name}.proj"), c, c, group),
        }
    }

    fn apply(&self, g: &mut Graph, p: &Bound, x: Var, pos: Var, hood: &Neighbourhood) -> Var {
        let y = self.attn.apply(g, p, x, pos, x, x, pos, hood);
        let y = self.proj.apply(g, p, y);
        g.add(x, y)
    }
}

/// Index structure of the point hierarchy, derived from level-0 positions.
#[derive(Clone, Debug)]
pub struct Hierarchy {
    /// Rows of level `l - 1` kept at level `l` (entry 0 is unused).
    pub samples: Vec<Rc<Vec<usize>>>,
    /// Self-attention neighbourhoods per level.
    pub hoods: Vec<Neighbourhood>,
    /// Pooling neighbourhoods: level `l` queries over level `l - 1` keys.
    pub pools: Vec<Neighbourhood>,
    /// Inverse-distance interpolation from level `l` to level `l - 1`.
    pub lifts: Vec<Rc<RowMix>>,
}

impl Hierarchy {
    pub fn build(points: &[Vec3], levels: usize, ratio: usize, k: usize) -> Result<Self> {
        let mut pos: Vec<Vec<Vec3>> = vec![points.to_vec()];
        let mut samples = vec![Rc::new(Vec::new())];
        for l in 1..levels {
            let prev = &pos[l - 1];
            let n = prev.len() / ratio.max(1);
            if n < k || n == 0 {
                return Err(Error::Config(format!(
                    "backbone level {l} would keep {n} of {} points, fewer than k = {k}",
                    prev.len()
                )));
            }
            let keep = farthest_point_sampling(prev, n, 0)?;
            pos.push(keep.iter().map(|&i| prev[i]).collect());
            samples.push(Rc::new(keep));
        }
        if points.len() < k {
            return Err(Error::Config(format!(
                "backbone needs at least k = {k} points, got {}",
                points.len()
            )));
        }
        let mut hoods = Vec::with_capacity(levels);
        let mut pools = vec![Neighbourhood::new(Vec::new(), k)];
        let mut lifts = vec![Rc::new(RowMix::new(0))];
        for l in 0..levels {
            hoods.push(Neighbourhood::new(knn(&pos[l], &pos[l], k)?, k));
            if l > 0 {
                pools.push(Neighbourhood::new(knn(&pos[l], &pos[l - 1], k)?, k));
                let three = 3.min(pos[l].len());
                let nn = knn(&pos[l - 1], &pos[l], three)?;
                let mut mix = RowMix::new(pos[l].len());
                for (i, &p) in pos[l - 1].iter().enumerate() {
                    let idx = &nn[i * three..(i + 1) * three];
                    let w: Vec<f64> = idx
                        .iter()
                        .map(|&j| 1.0 / (vec3::dist_sq(p, pos[l][j]) + 1e-8))
                        .collect();
                    let total: f64 = w.iter().sum();
                    mix.push_row(idx.iter().zip(&w).map(|(&j, &wj)| (j, wj / total)));
                }
                lifts.push(Rc::new(mix));
            }
        }
        Ok(Self {
            samples,
            hoods,
            pools,
            lifts,
        })
    }
}

#[derive(Clone, Debug)]
pub struct Backbone {
    pub input: Linear,
    pub blocks: Vec<PointBlock>,
    pub downs: Vec<Linear>,
    pub ups: Vec<(Linear, Linear)>,
    pub up_blocks: Vec<PointBlock>,
    pub output: Linear,
}

impl Backbone {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        inputs: usize,
        widths: &[usize],
        latent: usize,
        group: usize,
    ) -> Self {
        let input = Linear::new(store, rng, "backbone.in", inputs, widths[0], group);
        let mut blocks = vec![PointBlock::new(store, rng, "backbone.enc0", widths[0], group)];
        let mut downs = Vec::new();
        for l in 1..widths.len() {
            downs.push(Linear::new(
                store,
                rng,
                &format!("backbone.down{l}"),
                widths[l - 1] + 3,
                widths[l],
                group,
            ));
            blocks.push(PointBlock::new(store, rng, &format!("backbone.enc{l}"), widths[l], group));
        }
        let mut ups = Vec::new();
        let mut up_blocks = Vec::new();
        for l in (1..widths.len()).rev() {
            let (c, f) = (widths[l], widths[l - 1]);
            ups.push((
                Linear::new(store, rng, &format!("backbone.up{l}.coarse"), c, f, group),
                Linear::new(store, rng, &format!("backbone.up{l}.skip"), f, f, group),
            ));
            up_blocks.push(PointBlock::new(store, rng, &format!("backbone.dec{l}"), f, group));
        }
        let output = Linear::new(store, rng, "backbone.out", widths[0], latent, group);
        Self {
            input,
            blocks,
            downs,
            ups,
            up_blocks,
            output,
        }
    }

    /// `features`: N x inputs, `pos`: N x 3. Returns N x latent.
    pub fn apply(&self, g: &mut Graph, p: &Bound, features: Var, pos: Var, h: &Hierarchy) -> Var {
        let levels = self.blocks.len();
        let mut x = self.input.apply(g, p, features);
        x = self.blocks[0].apply(g, p, x, pos, &h.hoods[0]);
        let mut feats = vec![x];
        let mut positions = vec![pos];
        for l in 1..levels {
            let prev_x = feats[l - 1];
            let prev_p = positions[l - 1];
            let here_p = g.gather_rows(prev_p, h.samples[l].clone());
            let pool = &h.pools[l];
            let nx = g.gather_rows(prev_x, pool.nbr.clone());
            let np = g.gather_rows(prev_p, pool.nbr.clone());
            let cp = g.gather_rows(here_p, pool.rep.clone());
            let rel = g.sub(np, cp);
            let cat = g.concat_cols(&[nx, rel]);
            let y = self.downs[l - 1].apply(g, p, cat);
            let y = g.silu(y);
            let y = g.group_max(y, pool.k);
            let y = self.blocks[l].apply(g, p, y, here_p, &h.hoods[l]);
            feats.push(y);
            positions.push(here_p);
        }
        let mut x = feats[levels - 1];
        for (step, l) in (1..levels).rev().enumerate() {
            let (coarse, skip) = &self.ups[step];
            let c = coarse.apply(g, p, x);
            let lifted = g.mix_rows(c, h.lifts[l].clone());
            let s = skip.apply(g, p, feats[l - 1]);
            let y = g.add(lifted, s);
            x = self.up_blocks[step].apply(g, p, y, positions[l - 1], &h.hoods[l - 1]);
        }
        self.output.apply(g, p, x)
    }
}
