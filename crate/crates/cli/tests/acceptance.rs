//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the test fails if any criterion fails.

use std::f64::consts::PI;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use vndm_cli::commands::{sequence_path, spamm_path};
use vndm_cli::config::{Cohort, Profile, RunConfig};
use vndm_core::flow::{integrate_flow, invert_flow, Latent};
use vndm_core::geometry::{
    apply_twist_offset, build_layer_mesh, eval_ellipsoid, eval_model, interpolate_layers, GridDims,
    MaterialCoordinates, MaterialGrid, ParameterFunctions, Quaternion, U_MIN,
};
use vndm_core::net::{ModeFlags, NetConfig, Psi, Topology, ValueMode};
use vndm_core::recover::ablation::{ablation_harness, cells, CueUse, EvalSubject, Mode};
use vndm_core::recover::direct_fit::{direct_fit, DirectFitConfig};
use vndm_core::recover::metrics::{evaluate, SiLayers};
use vndm_core::recover::normalize::normalize;
use vndm_core::recover::sequential::{recover_like, NetworkPredictor};
use vndm_core::recover::si::si_ratio;
use vndm_core::sim::clip::ApparentMotionCues;
use vndm_core::sim::cohort::{simulate_subject, volumetric_frame, SimConfig, SimulatedSubject};
use vndm_core::sim::cycle::{synthesize_cycle, TemporalScalars};
use vndm_core::train::{loss, loss_on_tape, train, TrainSample, TrainState};
use vndm_core::vec3::{self, Vec3};
use vndm_tape::{Graph, Matrix};

type Check = Result<String, String>;

struct Outcome {
    id: usize,
    name: &'static str,
    passed: bool,
    detail: String,
}

fn run(id: usize, name: &'static str, budget: Duration, f: impl FnOnce() -> Check) -> Outcome {
    let start = Instant::now();
    let result = f();
    let took = start.elapsed();
    let (passed, mut detail) = match result {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    let in_budget = took <= budget;
    if !in_budget {
        detail.push_str(&format!("; over the {budget:?} budget"));
    }
    let passed = passed && in_budget;
    println!(
        "[{}] criterion {id:>2} {name}: {detail} ({:.2}s)",
        if passed { "PASS" } else { "FAIL" },
        took.as_secs_f64()
    );
    Outcome {
        id,
        name,
        passed,
        detail,
    }
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn max_dist(a: &[Vec3], b: &[Vec3]) -> f64 {
    a.iter().zip(b).map(|(p, q)| vec3::norm(vec3::sub(*p, *q))).fold(0.0, f64::max)
}

fn geometry() -> Check {
    let tol = 1e-12;
    // Apex collapse: u = -π/2 maps every v to one point.
    for w in 0..3 {
        let ref_pt = eval_ellipsoid(2.5, [0.3, 0.9, 0.8], MaterialCoordinates { u: U_MIN, v: 0.0, w }, 3)
            .map_err(|e| e.to_string())?;
        for k in 0..64 {
            let v = -PI + k as f64 * 2.0 * PI / 64.0;
            let p = eval_ellipsoid(2.5, [0.3, 0.9, 0.8], MaterialCoordinates { u: U_MIN, v, w }, 3)
                .map_err(|e| e.to_string())?;
            ensure(vec3::norm(vec3::sub(p, ref_pt)) <= tol, || format!("apex differs at v = {v}"))?;
        }
    }
    // Twist is a rotation about z.
    for k in 0..200 {
        let x = k as f64;
        let p = [(x * 0.37).sin() * 3.0, (x * 0.91).cos() * 2.0, x * 0.01 - 1.0];
        let tau = (x * 1.3).sin() * PI;
        let q = apply_twist_offset(p, tau, 0.0, 0.0);
        let r0 = (p[0] * p[0] + p[1] * p[1]).sqrt();
        let r1 = (q[0] * q[0] + q[1] * q[1]).sqrt();
        ensure((r0 - r1).abs() <= tol && q[2] == p[2], || format!("twist moves radius at {p:?}"))?;
    }
    // Pose is a rigid motion: pairwise distances are kept.
    let dims = GridDims::new(6, 8, 2).map_err(|e| e.to_string())?;
    let mut pf = ParameterFunctions::uniform(6, 2, 1.0, [0.8, 0.7, 1.1]);
    pf.a0[1] = 1.3;
    let base = eval_model(&pf, dims, None).map_err(|e| e.to_string())?;
    pf.center = [3.0, -1.5, 7.25];
    pf.rotation = Quaternion::from_axis_angle([1.0, 2.0, -0.5], 0.83);
    let posed = eval_model(&pf, dims, None).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for a in 0..dims.len() {
        for b in a + 1..dims.len() {
            let d0 = vec3::norm(vec3::sub(base.points[a], base.points[b]));
            let d1 = vec3::norm(vec3::sub(posed.points[a], posed.points[b]));
            worst = worst.max((d0 - d1).abs());
        }
    }
    ensure(worst <= tol, || format!("pose changes a distance by {worst:e}"))?;
    // Layer interpolation reproduces both end layers.
    let inner = base.layer(0).map_err(|e| e.to_string())?;
    let outer = base.layer(1).map_err(|e| e.to_string())?;
    let vol = interpolate_layers(&inner, &outer, 5).map_err(|e| e.to_string())?;
    let e0 = max_dist(&vol.layer(0).map_err(|e| e.to_string())?.points, &inner.points);
    let e4 = max_dist(&vol.layer(4).map_err(|e| e.to_string())?.points, &outer.points);
    ensure(e0 <= tol && e4 <= tol, || format!("layer endpoints off by {e0:e}, {e4:e}"))?;
    Ok(format!("apex, twist, pose (max {worst:.1e}), layer endpoints within {tol:e}"))
}

fn simulate_cohort(cfg: &SimConfig, seeds: std::ops::Range<u64>) -> Result<Vec<SimulatedSubject>, String> {
    seeds.map(|s| simulate_subject(s, cfg).map_err(|e| e.to_string())).collect()
}

fn clipping(cohort: &[SimulatedSubject], rerun: &[SimulatedSubject]) -> Check {
    let mut points = 0usize;
    let mut worst: f64 = 0.0;
    for s in cohort {
        for (key, frames) in &s.spamm.records {
            let plane = s.spamm.plane(key.plane).ok_or_else(|| format!("unknown plane {}", key.plane))?;
            for p in frames.iter().flatten() {
                points += 1;
                worst = worst.max(plane.signed_distance(*p).abs());
            }
        }
    }
    ensure(worst <= 1e-9, || format!("a SPAMM point lies {worst:e} mm off its plane"))?;
    for (a, b) in cohort.iter().zip(rerun) {
        ensure(a.spamm == b.spamm, || format!("{}: SPAMM records differ on rerun", a.sequence.subject_id))?;
        let ka: Vec<_> = a.spamm.records.keys().collect();
        let kb: Vec<_> = b.spamm.records.keys().collect();
        ensure(ka == kb && a.spamm.selected == b.spamm.selected, || {
            format!("{}: correspondence keys differ on rerun", a.sequence.subject_id)
        })?;
    }
    Ok(format!(
        "{} subjects, {points} SPAMM points on their planes (max {worst:.1e} mm), keys stable",
        cohort.len()
    ))
}

fn temporal(subject: &SimulatedSubject, cfg: &SimConfig) -> Check {
    let ed = volumetric_frame(&subject.fit_ed, cfg.n_v, cfg.n_w).map_err(|e| e.to_string())?;
    let es = volumetric_frame(&subject.fit_es, cfg.n_v, cfg.n_w).map_err(|e| e.to_string())?;
    let seq = &subject.sequence;
    ensure(seq.frames[0] == ed, || "frame 0 is not ED".into())?;
    ensure(seq.frames[seq.es_index] == es, || format!("frame {} is not ES", seq.es_index))?;

    let dims = GridDims::new(2, 3, 1).map_err(|e| e.to_string())?;
    let zero = MaterialGrid::new(dims, vec![[0.0; 3]; 6]).map_err(|e| e.to_string())?;
    let one = MaterialGrid::new(dims, vec![[1.0; 3]; 6]).map_err(|e| e.to_string())?;
    let r = synthesize_cycle("ref", &zero, &one, &TemporalScalars::reference(), vec![0])
        .map_err(|e| e.to_string())?;
    let p = r.frames[1].points[0];
    ensure(p == [0.090, 0.080, 0.100], || format!("t_1 interpolation gives {p:?}"))?;
    Ok(format!("ED/ES bit-exact at frames 0/{}, t_1 scalars {p:?}", seq.es_index))
}

fn flow(subject: &SimulatedSubject) -> Check {
    let constant = |pts: &[Vec3], _h: f64, _z: Option<&Latent>| vec![[0.25, -0.5, 1.0]; pts.len()];
    let pts = &subject.sequence.frames[0].points;
    let r = integrate_flow(&constant, pts, 8, None).map_err(|e| e.to_string())?;
    let c_err = r
        .displacement
        .iter()
        .map(|d| vec3::norm(vec3::sub(*d, [0.25, -0.5, 1.0])))
        .fold(0.0, f64::max);
    ensure(c_err <= 4.0 * f64::EPSILON, || format!("constant field error {c_err:e}"))?;

    let a = [0.3, -0.7, 1.1];
    let linear = move |pts: &[Vec3], _h: f64, _z: Option<&Latent>| {
        pts.iter().map(|p| [a[0] * p[0], a[1] * p[1], a[2] * p[2]]).collect::<Vec<_>>()
    };
    let r = integrate_flow(&linear, pts, 8, None).map_err(|e| e.to_string())?;
    let mut l_err: f64 = 0.0;
    for (out, p) in r.displaced.iter().zip(pts) {
        for c in 0..3 {
            let exact = p[c] * a[c].exp();
            if exact != 0.0 {
                l_err = l_err.max((out[c] - exact).abs() / exact.abs());
            }
        }
    }
    ensure(l_err <= 1e-5, || format!("linear field relative error {l_err:e}"))?;

    // Smooth field with |v| <= 0.1 in normalized units.
    let (norm_seq, _, meta) = normalize(&subject.material().map_err(|e| e.to_string())?, &subject.spamm)
        .map_err(|e| e.to_string())?;
    let grid = &norm_seq.frames[0];
    let smooth = |pts: &[Vec3], h: f64, _z: Option<&Latent>| {
        let s = 0.1 / 3f64.sqrt();
        pts.iter()
            .map(|p| {
                [
                    s * (2.0 * p[1] + h).sin(),
                    s * (1.5 * p[2] - p[0]).cos(),
                    s * (p[0] + p[1]).sin(),
                ]
            })
            .collect::<Vec<_>>()
    };
    let fwd = integrate_flow(&smooth, &grid.points, 8, None).map_err(|e| e.to_string())?;
    let back = invert_flow(&smooth, &fwd.displaced, 8, None).map_err(|e| e.to_string())?;
    let rt = max_dist(&meta.invert_all(&back), &meta.invert_all(&grid.points));
    ensure(rt < 1e-6, || format!("round trip error {rt:e} mm"))?;
    let moved = MaterialGrid::new(grid.dims, fwd.displaced).map_err(|e| e.to_string())?;
    let mut si = 0.0;
    for w in 0..grid.dims.n_w {
        si += si_ratio(&build_layer_mesh(&moved, w).map_err(|e| e.to_string())?).ratio;
    }
    ensure(si == 0.0, || format!("SI ratio {si} after a small flow"))?;
    Ok(format!(
        "constant {c_err:.1e}, linear rel {l_err:.1e}, round trip {rt:.1e} mm, SI 0"
    ))
}

fn tiny_config() -> NetConfig {
    NetConfig {
        k: 8,
        channels: 4,
        hint: 4,
        widths: vec![8, 12],
        ratio: 4,
        k_backbone: 4,
        latent: 6,
        global_hidden: 4,
        flow_hidden: 6,
        flow_steps: 2,
        value_mode: ValueMode::Displacement,
        init_seed: 5,
    }
}

fn tiny_problem() -> (Vec<Vec3>, Vec<Vec3>, GridDims, ApparentMotionCues) {
    let dims = GridDims::new(6, 8, 2).unwrap();
    let mut pf = ParameterFunctions::uniform(6, 2, 0.8, [0.9, 0.8, 1.2]);
    pf.a0[1] = 1.0;
    let m = eval_model(&pf, dims, None).unwrap().points;
    let target: Vec<Vec3> = m
        .iter()
        .map(|p| [p[0] * 0.97 + 0.01, p[1] * 0.98 - 0.02 * p[2], p[2] * 1.02])
        .collect();
    let mut cues = ApparentMotionCues::default();
    for (n, (a, b)) in m.iter().zip(&target).enumerate().filter(|(n, _)| n % 5 == 0) {
        let a = [a[0] + 0.013, a[1] - 0.007, a[2] + 0.011];
        let b = [b[0] + 0.013, b[1] - 0.007, b[2] + 0.011];
        if n % 2 == 0 {
            cues.sax.push([a, [b[0], b[1], a[2]]]);
        } else {
            cues.lax.push([a, b]);
        }
    }
    (m, target, dims, cues)
}

fn pseudo_noise(k: usize) -> f64 {
    ((k as f64 * 12.9898 + 78.233).sin() * 43758.5453).fract() - 0.5
}

fn gradients() -> Check {
    let (m, target, dims, cues) = tiny_problem();
    let mut psi = Psi::new(tiny_config()).map_err(|e| e.to_string())?;
    // Move off the zero-initialized heads so every gradient is non-trivial.
    let mut k = 0;
    let ids: Vec<_> = psi.store.ids().collect();
    for id in &ids {
        for v in psi.store.get_mut(*id).data_mut() {
            *v += 0.2 * pseudo_noise(k);
            k += 1;
        }
    }
    let (ld, ls) = (0.1, 0.05);
    let topo = Topology::new(dims);
    let mut g = Graph::new();
    let p = psi.store.bind(&mut g, |_| true);
    let mv = g.constant(Matrix::from_points(&m));
    let tv = g.constant(Matrix::from_points(&target));
    let f = psi.forward(&mut g, &p, mv, &topo, &cues, ModeFlags::FULL).map_err(|e| e.to_string())?;
    let l = loss_on_tape(&mut g, f.points, tv, f.q_d, &topo, ld, ls);
    let mut grads = g.backward(l.total).map_err(|e| e.to_string())?;
    let grads = p.collect(&psi.store, &mut grads);

    let eval = |psi: &Psi| -> f64 {
        let pr = psi.predict(&m, dims, &cues, ModeFlags::FULL).unwrap();
        loss(&pr.points, &target, &pr.q_d, dims, ld, ls).unwrap()
    };
    let eps = 1e-5;
    let (mut checked, mut worst, mut worst_at) = (0usize, 0.0f64, String::new());
    for (n, id) in ids.iter().enumerate() {
        let analytic = grads[n].as_ref().ok_or("missing gradient")?;
        for i in 0..analytic.len() {
            let orig = psi.store.get(*id).data()[i];
            psi.store.get_mut(*id).data_mut()[i] = orig + eps;
            let up = eval(&psi);
            psi.store.get_mut(*id).data_mut()[i] = orig - eps;
            let down = eval(&psi);
            psi.store.get_mut(*id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic.data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            if rel > worst {
                worst = rel;
                worst_at = format!("{}[{i}] analytic {a:e} numeric {numeric:e}", psi.store.entry(*id).name);
            }
            checked += 1;
        }
    }
    ensure(worst <= 1e-4, || format!("{checked} gradients, worst relative error {worst:e} at {worst_at}"))?;
    Ok(format!("{checked} parameter gradients on {} points, worst relative error {worst:.1e}", m.len()))
}

fn identity(subject: &SimulatedSubject) -> Check {
    let sample = TrainSample::new(&subject.material().map_err(|e| e.to_string())?, &subject.spamm)
        .map_err(|e| e.to_string())?;
    let psi = Psi::new(NetConfig::desk()).map_err(|e| e.to_string())?;
    let m = &sample.material.frames[0];
    for flags in [ModeFlags::FULL, ModeFlags::global_only(), ModeFlags::local_only()] {
        let out = psi.predict(&m.points, m.dims, &sample.cues[0], flags).map_err(|e| e.to_string())?;
        ensure(out.points == m.points, || format!("untrained network moves points under {flags:?}"))?;
    }
    Ok(format!("{} material points returned bit-exact", m.points.len()))
}

fn samples(cohort: &[SimulatedSubject], seeds: &[u64]) -> Result<Vec<TrainSample>, String> {
    seeds
        .iter()
        .map(|&s| {
            let sub = &cohort[s as usize];
            TrainSample::new(&sub.material().map_err(|e| e.to_string())?, &sub.spamm).map_err(|e| e.to_string())
        })
        .collect()
}

fn eval_subjects(cohort: &[SimulatedSubject], seeds: &[u64]) -> Result<Vec<EvalSubject>, String> {
    seeds
        .iter()
        .map(|&s| {
            let sub = &cohort[s as usize];
            Ok(EvalSubject {
                truth: sub.material().map_err(|e| e.to_string())?,
                spamm: sub.spamm.clone(),
            })
        })
        .collect()
}

fn mean_metrics(psi: &Psi, held_out: &[EvalSubject]) -> Result<(f64, f64), String> {
    let (mut mae, mut si) = (0.0, 0.0);
    for s in held_out {
        let mut p = NetworkPredictor::new(psi, ModeFlags::FULL);
        let rec = recover_like(&mut p, &s.truth, &s.spamm).map_err(|e| e.to_string())?;
        let r = evaluate(&rec.sequence, &s.truth, &rec.step_seconds, SiLayers::Middle).map_err(|e| e.to_string())?;
        mae += r.mae;
        si += r.mean_si;
    }
    let n = held_out.len() as f64;
    Ok((mae / n, si / n))
}

fn end_to_end(cohort: &[SimulatedSubject], cfg: &RunConfig) -> Check {
    let train_set = samples(cohort, &cfg.cohort.train)?;
    let held_out = eval_subjects(cohort, &cfg.cohort.eval)?;
    let untrained = Psi::new(cfg.net.clone()).map_err(|e| e.to_string())?;
    let (base_mae, _) = mean_metrics(&untrained, &held_out)?;
    let state = TrainState::new(untrained, &cfg.train);
    let state = train(&train_set, &cfg.train, ModeFlags::FULL, state).map_err(|e| e.to_string())?;
    let (mae, si) = mean_metrics(&state.psi, &held_out)?;
    let ratio = mae / base_mae;
    let detail = format!(
        "E1={} E2={}: MAE {mae:.3} mm vs identity {base_mae:.3} mm (ratio {ratio:.3}), mean SI {si:.4}",
        cfg.train.e1, cfg.train.e2
    );
    ensure(ratio <= 0.5 && si < 0.05, || detail.clone())?;
    Ok(detail)
}

fn direct_fit_check(subject: &SimulatedSubject) -> Check {
    let (seq, cues, _) = normalize(&subject.material().map_err(|e| e.to_string())?, &subject.spamm)
        .map_err(|e| e.to_string())?;
    let t = [0.03, -0.02, 0.04];
    let cfg = DirectFitConfig {
        iters: 600,
        lr: 2e-3,
        lambda_d: 0.0,
        lambda_s: 0.05,
    };
    let moved = |c: &ApparentMotionCues, f: &dyn Fn(Vec3) -> Vec3| ApparentMotionCues {
        sax: c.sax.iter().map(|[a, _]| [*a, f(*a)]).collect(),
        lax: c.lax.iter().map(|[a, _]| [*a, f(*a)]).collect(),
    };
    let mut worst: f64 = 0.0;
    for (q, c) in cues.iter().enumerate() {
        let m = &seq.frames[q];
        let fit = direct_fit(&m.points, m.dims, &moved(c, &|p| vec3::add(p, t)), &cfg).map_err(|e| e.to_string())?;
        worst = worst.max(fit.residual);
    }
    ensure(worst < 1e-3, || format!("translation residual {worst:e}"))?;
    let m = &seq.frames[0];
    let fit = direct_fit(&m.points, m.dims, &moved(&cues[0], &|p| p), &DirectFitConfig::default())
        .map_err(|e| e.to_string())?;
    let mean = fit.q_d.iter().map(|&d| vec3::norm(d)).sum::<f64>() / m.points.len() as f64;
    ensure(mean < 1e-3, || format!("null motion mean |q_d| {mean:e}"))?;
    Ok(format!(
        "translation residual {worst:.1e} over {} transitions, null-motion mean |q_d| {mean:.1e}",
        cues.len()
    ))
}

fn ablation(cohort: &[SimulatedSubject], cfg: &RunConfig) -> Check {
    let ab = &cfg.ablation;
    let train_set = samples(cohort, &ab.cohort.train)?;
    let held_out = eval_subjects(cohort, &ab.cohort.eval)?;
    let mut tc = cfg.train.clone();
    tc.e1 = ab.e1;
    tc.e2 = ab.e2;
    let matrix = cells(
        &[8, 16, 24],
        &[Mode::Full, Mode::GlobalOnly, Mode::LocalOnly],
        &[CueUse::Mixed, CueUse::Separated],
        &[true],
    );
    let rows = ablation_harness(&train_set, &held_out, &cfg.net, &tc, &matrix, SiLayers::Middle)
        .map_err(|e| e.to_string())?;
    ensure(rows.len() == 18, || format!("{} cells", rows.len()))?;
    ensure(
        rows.iter().all(|r| r.mae.is_finite() && r.mean_si.is_finite() && r.final_loss.is_finite()),
        || "non-finite metrics".into(),
    )?;
    let mut notes = Vec::new();
    let mut ok = true;
    for k in [8, 16, 24] {
        let of_k: Vec<_> = rows.iter().filter(|r| r.cell.k == k).collect();
        let full = of_k
            .iter()
            .find(|r| r.cell.mode == Mode::Full && r.cell.cues == CueUse::Mixed)
            .ok_or("missing full+mixed cell")?;
        let best_other = of_k
            .iter()
            .filter(|r| r.cell.mode != Mode::Full)
            .map(|r| r.mae)
            .fold(f64::INFINITY, f64::min);
        ok &= full.mae <= best_other;
        notes.push(format!("k={k}: full+mixed {:.3} vs best ablated {best_other:.3}", full.mae));
    }
    let detail = format!("18 cells finite; {}", notes.join(", "));
    ensure(ok, || detail.clone())?;
    Ok(detail)
}

fn tagtool(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_tagtool"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("tagtool {} failed: {}", args[0], String::from_utf8_lossy(&out.stderr))
    })
}

fn pipeline(dir: &Path, config: &Path) -> Result<(), String> {
    let s = |p: &Path| p.to_str().unwrap().to_owned();
    let data = dir.join("data");
    let c = s(config);
    tagtool(&["simulate", "--config", &c, "--out", &s(&data)])?;
    let ck = dir.join("model.ckpt");
    tagtool(&["train", "--config", &c, "--data", &s(&data), "--out", &s(&ck)])?;
    let rec = dir.join("recovered.seq");
    tagtool(&[
        "recover",
        "--config",
        &c,
        "--checkpoint",
        &s(&ck),
        "--spamm",
        &s(&spamm_path(&data, 1)),
        "--m0",
        &s(&sequence_path(&data, 1)),
        "--out",
        &s(&rec),
    ])?;
    tagtool(&[
        "eval",
        "--config",
        &c,
        "--pred",
        &s(&rec),
        "--truth",
        &s(&sequence_path(&data, 1)),
        "--out",
        &s(&dir.join("metrics.csv")),
    ])
}

fn files(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(files(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

fn determinism() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cfg = RunConfig::profile(Profile::Desk);
    cfg.cohort = Cohort {
        train: vec![0],
        eval: vec![1],
    };
    cfg.train.e1 = 4;
    cfg.train.e2 = 2;
    let config = tmp.path().join("run.json");
    std::fs::write(&config, cfg.to_json()).map_err(|e| e.to_string())?;
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    pipeline(&a, &config)?;
    pipeline(&b, &config)?;
    let fa = files(&a);
    let fb = files(&b);
    ensure(fa.len() == fb.len() && !fa.is_empty(), || "runs wrote different file sets".into())?;
    for (x, y) in fa.iter().zip(&fb) {
        ensure(x.strip_prefix(&a).ok() == y.strip_prefix(&b).ok(), || format!("{} unmatched", x.display()))?;
        let (bx, by) = (std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
        ensure(bx == by, || format!("{} differs between runs", x.strip_prefix(&a).unwrap().display()))?;
    }
    Ok(format!("{} files byte-identical across two runs", fa.len()))
}

#[test]
fn acceptance() {
    let cfg = RunConfig::profile(Profile::Desk);
    let sim = &cfg.sim;
    let mut outcomes = Vec::new();
    outcomes.push(run(1, "geometry exactness", Duration::from_secs(1), geometry));

    let start = Instant::now();
    let cohort = simulate_cohort(sim, 0..8).expect("desk cohort simulates");
    let sim_time = start.elapsed();
    let rerun = simulate_cohort(sim, 0..8).expect("desk cohort simulates");
    outcomes.push(run(2, "clipping soundness", Duration::MAX, || {
        let detail = clipping(&cohort, &rerun)?;
        ensure(sim_time <= Duration::from_secs(30), || format!("{detail}; simulation took {sim_time:?}"))?;
        Ok(format!("{detail}; simulated in {:.2}s", sim_time.as_secs_f64()))
    }));

    outcomes.push(run(3, "temporal scalars", Duration::from_secs(1), || temporal(&cohort[0], sim)));
    outcomes.push(run(4, "flow correctness", Duration::from_secs(10), || flow(&cohort[0])));
    outcomes.push(run(5, "gradient correctness", Duration::from_secs(300), gradients));
    outcomes.push(run(6, "identity initialization", Duration::MAX, || identity(&cohort[0])));
    outcomes.push(run(7, "toy end-to-end", Duration::from_secs(7200), || end_to_end(&cohort, &cfg)));
    outcomes.push(run(8, "direct-fit baseline", Duration::MAX, || direct_fit_check(&cohort[0])));
    outcomes.push(run(9, "ablation harness", Duration::MAX, || ablation(&cohort, &cfg)));
    outcomes.push(run(10, "determinism", Duration::MAX, determinism));

    let failed: Vec<String> = outcomes
        .iter()
        .filter(|o| !o.passed)
        .map(|o| format!("{} {}: {}", o.id, o.name, o.detail))
        .collect();
    println!("{} of {} criteria passed", outcomes.len() - failed.len(), outcomes.len());
    assert!(failed.is_empty(), "failed criteria:\n{}", failed.join("\n"));
}
