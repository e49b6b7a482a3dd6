mod common;

use common::{sample, tiny_net};
use vndm_core::net::{ModeFlags, Psi, Topology};
use vndm_core::sim::clip::ApparentMotionCues;
use vndm_tape::{Graph, Matrix};

#[test]
fn untrained_network_is_the_identity_in_every_mode() {
    let s = sample("id", 3);
    let psi = Psi::new(tiny_net()).unwrap();
    let m = &s.material.frames[0];
    for flags in [ModeFlags::FULL, ModeFlags::global_only(), ModeFlags::local_only()] {
        let out = psi.predict(&m.points, m.dims, &s.cues[0], flags).unwrap();
        assert_eq!(out.points, m.points);
        assert_eq!(out.points.len(), m.dims.len());
        assert_eq!(out.scale.len(), m.dims.ring_count());
        assert_eq!(out.twist.len(), m.dims.ring_count());
        assert_eq!(out.q_d.len(), m.dims.len());
    }
}

fn perturbed() -> Psi {
    let mut psi = Psi::new(tiny_net()).unwrap();
    let ids: Vec<_> = psi.store.ids().collect();
    let mut k = 0.0f64;
    for id in ids {
        for v in psi.store.get_mut(id).data_mut() {
            k += 1.0;
            *v += 0.1 * (k * 0.731).sin();
        }
    }
    psi
}

#[test]
fn trained_weights_move_points() {
    let s = sample("mv", 3);
    let psi = perturbed();
    let m = &s.material.frames[0];
    let out = psi.predict(&m.points, m.dims, &s.cues[0], ModeFlags::FULL).unwrap();
    assert_ne!(out.points, m.points);
    assert!(out.points.iter().flatten().all(|v| v.is_finite()));
}

fn hints(psi: &Psi, m: &[[f64; 3]], cues: &ApparentMotionCues) -> Matrix {
    let mut g = Graph::new();
    let p = psi.store.bind(&mut g, |_| false);
    let mv = g.constant(Matrix::from_points(m));
    let h = psi.hints(&mut g, &p, mv, cues, ModeFlags::FULL).unwrap();
    g.value(h).clone()
}

#[test]
fn hints_ignore_cue_order() {
    let s = sample("perm", 3);
    let psi = perturbed();
    let m = &s.material.frames[0].points;
    let a = hints(&psi, m, &s.cues[0]);
    let mut shuffled = s.cues[0].clone();
    shuffled.sax.reverse();
    shuffled.lax.rotate_left(3);
    let b = hints(&psi, m, &shuffled);
    let worst = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(worst <= 1e-9, "{worst:e}");
}

#[test]
fn too_few_cues_for_k_is_a_domain_error() {
    let s = sample("k", 3);
    let mut cfg = tiny_net();
    cfg.k = s.cues[0].sax.len() + 1;
    let psi = Psi::new(cfg).unwrap();
    let m = &s.material.frames[0];
    let err = psi.predict(&m.points, m.dims, &s.cues[0], ModeFlags::FULL).unwrap_err();
    assert!(matches!(err, vndm_core::Error::Domain(_)), "{err}");
}

#[test]
fn global_head_gradient_matches_finite_differences() {
    let s = sample("fd", 3);
    let mut psi = perturbed();
    let m = &s.material.frames[0];
    let topo = Topology::new(m.dims);
    let objective = |psi: &Psi, g: &mut Graph| {
        let p = psi.store.bind(g, |_| true);
        let mv = g.constant(Matrix::from_points(&m.points));
        let f = psi.forward(g, &p, mv, &topo, &s.cues[0], ModeFlags::global_only()).unwrap();
        let d = g.sub(f.global_points, mv);
        (g.mean_sq_rows(d), p)
    };
    let mut g = Graph::new();
    let (l, p) = objective(&psi, &mut g);
    let mut grads = g.backward(l).unwrap();
    let grads = p.collect(&psi.store, &mut grads);
    let eps = 1e-5;
    for name in ["global.scale.w", "global.twist.w", "global.hidden.w"] {
        let id = psi.store.find(name).unwrap_or_else(|| panic!("no tensor {name}"));
        let n = psi.store.get(id).len();
        for i in 0..n {
            let orig = psi.store.get(id).data()[i];
            let at = |v: f64, psi: &mut Psi| {
                psi.store.get_mut(id).data_mut()[i] = v;
                let mut g = Graph::new();
                let (l, _) = objective(psi, &mut g);
                g.value(l).item()
            };
            let up = at(orig + eps, &mut psi);
            let down = at(orig - eps, &mut psi);
            psi.store.get_mut(id).data_mut()[i] = orig;
            let num = (up - down) / (2.0 * eps);
            let ana = grads[id_index(&psi, name)].as_ref().unwrap().data()[i];
            let rel = (ana - num).abs() / ana.abs().max(num.abs()).max(1e-6);
            assert!(rel <= 1e-4, "{name}[{i}]: analytic {ana:e}, numeric {num:e}");
        }
    }
}

fn id_index(psi: &Psi, name: &str) -> usize {
    psi.store.entries().iter().position(|e| e.name == name).unwrap()
}
