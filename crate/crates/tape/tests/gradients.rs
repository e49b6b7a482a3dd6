//! Reverse-mode gradients against central finite differences.

use std::rc::Rc;

use proptest::prelude::*;
use vndm_tape::{Graph, Matrix, RowMix, TapeError, Var};

const STEP: f64 = 1e-5;

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-4 * a.abs().max(b.abs()).max(1e-6)
}

/// Checks d f / d inputs for a scalar function built on a fresh graph.
fn check(inputs: &[Matrix], f: impl Fn(&mut Graph, &[Var]) -> Var) {
    let eval = |vals: &[Matrix]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|m| g.leaf(m.clone())).collect();
        let out = f(&mut g, &vars);
        g.value(out).item()
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|m| g.leaf(m.clone())).collect();
    let out = f(&mut g, &vars);
    let grads = g.backward(out).unwrap();
    for (i, m) in inputs.iter().enumerate() {
        for e in 0..m.len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[e] += STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[e] -= STEP;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * STEP);
            let ad = grads.get(vars[i]).map_or(0.0, |g| g.data()[e]);
            assert!(close(ad, fd), "input {i} entry {e}: reverse {ad} vs fd {fd}");
        }
    }
}

fn mat(rows: usize, cols: usize, seed: u64) -> Matrix {
    // Small deterministic pseudo-random fill.
    let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    let data = (0..rows * cols)
        .map(|_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
        .collect();
    Matrix::from_vec(rows, cols, data)
}

#[test]
fn square_at_three_has_slope_six() {
    let mut g = Graph::new();
    let x = g.leaf(Matrix::scalar(3.0));
    let y = g.mul(x, x);
    assert_eq!(g.backward(y).unwrap().get(x).unwrap().item(), 6.0);
}

#[test]
fn non_scalar_output_is_rejected() {
    let mut g = Graph::new();
    let x = g.leaf(mat(2, 2, 1));
    assert_eq!(
        g.backward(x).err(),
        Some(TapeError::NonScalarOutput { rows: 2, cols: 2 })
    );
}

#[test]
fn softmax_rows_annihilate_the_ones_direction() {
    // Σ_j ∂y_j/∂x_i = 0 for every i, i.e. J·1 = 0 (shift invariance).
    let k = 4;
    let x = mat(3 * k, 2, 9);
    for target in 0..x.len() {
        let mut g = Graph::new();
        let xv = g.leaf(x.clone());
        let y = g.group_softmax(xv, k);
        let mut pick = Matrix::zeros(3 * k, 2);
        pick.data_mut()[target] = 1.0;
        let p = g.constant(pick);
        let sel = g.mul(y, p);
        let out = g.sum_all(sel);
        let grads = g.backward(out).unwrap();
        let gx = grads.get(xv).unwrap();
        let (row, col) = (target / 2, target % 2);
        let grp = row / k;
        let total: f64 = (0..k).map(|j| gx.get(grp * k + j, col)).sum();
        assert!(total.abs() < 1e-15, "row sum {total}");
    }
    let mut g = Graph::new();
    let xv = g.constant(x);
    let y = g.group_softmax(xv, k);
    let sums = g.group_sum(y, k);
    for v in g.value(sums).data() {
        assert!((v - 1.0).abs() < 1e-12);
    }
}

#[test]
fn elementwise_ops_match_finite_differences() {
    let a = mat(3, 4, 1);
    let b = mat(3, 4, 2);
    check(&[a.clone(), b.clone()], |g, v| {
        let s = g.add(v[0], v[1]);
        let d = g.sub(s, v[1]);
        let m = g.mul(d, v[1]);
        let e = g.exp(m);
        let si = g.sin(e);
        let c = g.cos(v[0]);
        let t = g.mul(si, c);
        let u = g.silu(t);
        let w = g.scale(u, -1.7);
        g.sum_all(w)
    });
}

#[test]
fn matmul_and_bias_match_finite_differences() {
    check(&[mat(5, 3, 3), mat(3, 4, 4), mat(1, 4, 5)], |g, v| {
        let y = g.linear(v[0], v[1], v[2]);
        let y = g.silu(y);
        g.mean_sq_rows(y)
    });
}

#[test]
fn structural_ops_match_finite_differences() {
    let idx = Rc::new(vec![2, 0, 0, 1, 2, 2]);
    let mut mix = RowMix::new(3);
    mix.push_row([(0, 0.5), (2, -1.0)]);
    mix.push_row([(1, 2.0)]);
    let mix = Rc::new(mix);
    check(&[mat(3, 4, 6), mat(3, 2, 7)], move |g, v| {
        let ga = g.gather_rows(v[0], idx.clone());
        let sm = g.group_softmax(ga, 3);
        let gm = g.group_max(ga, 2);
        let gs = g.group_sum(sm, 3);
        let cat = g.concat_cols(&[v[0], v[1]]);
        let sl = g.slice_cols(cat, 3, 2);
        let mx = g.mix_rows(sl, mix.clone());
        let a = g.mean_sq_rows(gs);
        let b = g.mean_all(gm);
        let c = g.mean_sq_rows(mx);
        let ab = g.add(a, b);
        g.add(ab, c)
    });
}

#[test]
fn constants_receive_no_gradient() {
    let mut g = Graph::new();
    let c = g.constant(mat(2, 2, 1));
    let x = g.leaf(mat(2, 2, 2));
    let y = g.mul(c, x);
    let s = g.sum_all(y);
    let grads = g.backward(s).unwrap();
    assert!(grads.get(c).is_none());
    assert_eq!(grads.get(x).unwrap(), g.value(c));
}

proptest! {
    #[test]
    fn group_softmax_columns_sum_to_one(
        vals in proptest::collection::vec(-30.0f64..30.0, 12),
        k in prop_oneof![Just(1usize), Just(2), Just(3), Just(6)],
    ) {
        let mut g = Graph::new();
        let x = g.constant(Matrix::from_vec(6, 2, vals));
        let y = g.group_softmax(x, k);
        let s = g.group_sum(y, k);
        for v in g.value(s).data() {
            prop_assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_layer_gradient_agrees_with_fd(seed in 0u64..1000) {
        let x = mat(4, 3, seed);
        let w = mat(3, 2, seed + 1);
        let b = mat(1, 2, seed + 2);
        check(&[x, w, b], |g, v| {
            let y = g.linear(v[0], v[1], v[2]);
            let y = g.exp(y);
            g.sum_all(y)
        });
    }
}
