use vndm_core::sim::cohort::{simulate_subject, SimConfig};
use vndm_core::sim::qc::quality_check;

#[test]
fn desk_subject_passes_quality_control() {
    let cfg = SimConfig::desk();
    let s = simulate_subject(3, &cfg).unwrap();
    assert_eq!(s.sequence.len(), cfg.frames);
    assert_eq!(s.sequence.layers, (0..cfg.n_w).collect::<Vec<_>>());
    assert!(s.sequence.frames.iter().all(|f| f.is_finite()));
    let qc = quality_check(&s.sequence).unwrap();
    assert!(qc.passed(), "{qc}");
}

#[test]
fn every_transition_has_enough_cues_on_both_views() {
    let cfg = SimConfig::desk();
    let s = simulate_subject(1, &cfg).unwrap();
    for q in 0..cfg.frames - 1 {
        let cues = s.spamm.cues(q).unwrap();
        assert_eq!(cues.len(), cfg.n_s);
        assert!(!cues.sax.is_empty() && !cues.lax.is_empty(), "transition {q}");
        assert!(s.spamm.active(q).len() >= cfg.n_s);
    }
}

#[test]
fn spamm_points_lie_on_planes_and_keys_repeat() {
    let cfg = SimConfig::desk();
    let a = simulate_subject(5, &cfg).unwrap();
    for (key, frames) in &a.spamm.records {
        let plane = a.spamm.plane(key.plane).unwrap();
        for p in frames.iter().flatten() {
            assert!(plane.signed_distance(*p).abs() <= 1e-9);
        }
        // Tag surfaces sit on odd layers only.
        assert_eq!(key.w % 2, 1);
    }
    let b = simulate_subject(5, &cfg).unwrap();
    assert_eq!(a.spamm, b.spamm);
    assert_eq!(a.sequence, b.sequence);
}

#[test]
fn subjects_differ_by_seed() {
    let cfg = SimConfig::desk();
    let a = simulate_subject(0, &cfg).unwrap();
    let b = simulate_subject(1, &cfg).unwrap();
    assert_ne!(a.sequence.subject_id, b.sequence.subject_id);
    assert_ne!(a.sequence.frames[0], b.sequence.frames[0]);
}
