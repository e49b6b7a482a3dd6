//! Small synthetic problems shared by the integration tests.
#![allow(dead_code)]

use vndm_core::geometry::{eval_model, GridDims, MaterialGrid, ParameterFunctions};
use vndm_core::net::{NetConfig, ValueMode};
use vndm_core::sequence::MotionSequence;
use vndm_core::sim::clip::ApparentMotionCues;
use vndm_core::train::TrainSample;
use vndm_core::vec3::Vec3;

pub fn tiny_net() -> NetConfig {
    NetConfig {
        k: 4,
        channels: 4,
        hint: 4,
        widths: vec![8, 12],
        ratio: 4,
        k_backbone: 4,
        latent: 8,
        global_hidden: 4,
        flow_hidden: 8,
        flow_steps: 2,
        value_mode: ValueMode::Displacement,
        init_seed: 3,
    }
}

pub fn shell(dims: GridDims) -> MaterialGrid {
    let mut pf = ParameterFunctions::uniform(dims.n_u, dims.n_w, 0.8, [0.9, 0.8, 1.2]);
    let last = dims.n_w - 1;
    pf.a0[last] = 1.0;
    eval_model(&pf, dims, None).unwrap()
}

/// Frame `t` of a contracting, slowly twisting shell.
pub fn frame(base: &MaterialGrid, t: usize) -> MaterialGrid {
    let s = 1.0 - 0.04 * t as f64;
    let a = 0.03 * t as f64;
    let points = base
        .points
        .iter()
        .map(|p| {
            let (si, c) = (a * (1.0 + p[2])).sin_cos();
            [s * (p[0] * c - p[1] * si), s * (p[0] * si + p[1] * c), p[2] * (1.0 - 0.02 * t as f64)]
        })
        .collect();
    MaterialGrid::new(base.dims, points).unwrap()
}

/// Cue pairs near every fifth node, alternating views. Offsets vary per
/// cue so no two cues are equidistant from a node.
pub fn cues_between(a: &MaterialGrid, b: &MaterialGrid) -> ApparentMotionCues {
    let mut cues = ApparentMotionCues::default();
    for (n, (p, q)) in a.points.iter().zip(&b.points).enumerate().filter(|(n, _)| n % 5 == 0) {
        let x = n as f64;
        let off: Vec3 = [0.013 + 0.005 * (1.7 * x).sin(), -0.007 + 0.005 * (2.3 * x).cos(), 0.011 + 0.004 * (0.9 * x).sin()];
        let p = [p[0] + off[0], p[1] + off[1], p[2] + off[2]];
        let q = [q[0] + off[0], q[1] + off[1], q[2] + off[2]];
        if (n / 5) % 2 == 0 {
            cues.sax.push([p, [q[0], q[1], p[2]]]);
        } else {
            cues.lax.push([p, q]);
        }
    }
    cues
}

pub fn sample(id: &str, frames: usize) -> TrainSample {
    let dims = GridDims::new(6, 8, 2).unwrap();
    let base = shell(dims);
    let grids: Vec<MaterialGrid> = (0..frames).map(|t| frame(&base, t)).collect();
    let cues = grids.windows(2).map(|w| cues_between(&w[0], &w[1])).collect();
    let material = MotionSequence::new(id, grids, vec![0, 2], frames / 3).unwrap();
    TrainSample { material, cues }
}
