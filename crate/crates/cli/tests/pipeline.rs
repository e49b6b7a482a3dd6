use std::path::Path;
use std::process::{Command, Output};

use vndm_cli::config::{Profile, RunConfig};
use vndm_cli::formats::{
    decode_checkpoint, decode_sequence, decode_spamm, encode_checkpoint, encode_sequence, encode_spamm,
    write_sequence, write_spamm,
};
use vndm_cli::state::{restore_state, state_tensors};
use vndm_core::net::{ModeFlags, Psi};
use vndm_core::sim::cohort::{simulate_subject, SimConfig};
use vndm_core::train::{train, TrainSample, TrainState};

fn tagtool(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tagtool")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulated_files_round_trip_bit_exact() {
    let sub = simulate_subject(2, &SimConfig::desk()).unwrap();
    let spamm = decode_spamm(&encode_spamm(&sub.spamm)).unwrap();
    assert_eq!(spamm, sub.spamm);
    let seq = decode_sequence(&encode_sequence(&sub.sequence).unwrap()).unwrap();
    assert_eq!(seq, sub.sequence);
}

#[test]
fn checkpoint_restores_training_bit_identically() {
    let mut cfg = RunConfig::profile(Profile::Desk);
    cfg.train.e1 = 2;
    cfg.train.e2 = 1;
    let sub = simulate_subject(4, &cfg.sim).unwrap();
    let batch = [TrainSample::new(&sub.material().unwrap(), &sub.spamm).unwrap()];

    let fresh = || TrainState::new(Psi::new(cfg.net.clone()).unwrap(), &cfg.train);
    let straight = train(&batch, &cfg.train, ModeFlags::FULL, fresh()).unwrap();

    let mut first = cfg.train.clone();
    first.e1 = 2;
    first.e2 = 0;
    let partial = train(&batch, &first, ModeFlags::FULL, fresh()).unwrap();
    let bytes = encode_checkpoint(&state_tensors(&partial));
    let restored = restore_state(&cfg.net, &cfg.train, &decode_checkpoint(&bytes).unwrap()).unwrap();
    assert_eq!(restored.epoch, 2);
    assert_eq!(restored.log, partial.log);
    let resumed = train(&batch, &cfg.train, ModeFlags::FULL, restored).unwrap();
    assert_eq!(state_tensors(&resumed), state_tensors(&straight));
}

#[test]
fn exit_codes_follow_error_kinds() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(tagtool(&[]).status.code(), Some(1));
    assert_eq!(tagtool(&["simulate", "--bogus"]).status.code(), Some(1));

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"profile": "desk", "seeed": 1}"#).unwrap();
    let out = tagtool(&["simulate", "--config", s(&bad), "--seed", "0"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("seeed"));

    let missing = dir.path().join("none.seq");
    assert_eq!(tagtool(&["qc", "--input", s(&missing)]).status.code(), Some(2));
    let garbage = dir.path().join("garbage.seq");
    std::fs::write(&garbage, b"not a sequence").unwrap();
    assert_eq!(tagtool(&["qc", "--input", s(&garbage)]).status.code(), Some(2));
}

#[test]
fn oracle_recovery_and_mesh_export_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = RunConfig::profile(Profile::Desk);
    let config = d.join("run.json");
    std::fs::write(&config, cfg.to_json()).unwrap();
    let sub = simulate_subject(6, &cfg.sim).unwrap();
    write_sequence(&d.join("s.seq"), &sub.sequence).unwrap();
    write_spamm(&d.join("s.spamm"), &sub.spamm).unwrap();

    let out = tagtool(&[
        "recover", "--config", s(&config), "--oracle", s(&d.join("s.seq")), "--spamm", s(&d.join("s.spamm")),
        "--m0", s(&d.join("s.seq")), "--out", s(&d.join("r.seq")), "--timings", s(&d.join("t.csv")),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = tagtool(&[
        "eval", "--config", s(&config), "--pred", s(&d.join("r.seq")), "--truth", s(&d.join("s.seq")),
        "--timings", s(&d.join("t.csv")), "--out", s(&d.join("m.csv")),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(d.join("m.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "subject_id,frame,abs_err_mm,si_ratio,runtime_s");
    assert_eq!(lines.len(), 1 + (cfg.sim.frames - 1) + 1);
    assert!(lines[1..cfg.sim.frames].iter().all(|l| l.split(',').nth(2) == Some("0e0")), "{csv}");

    let out = tagtool(&["export-mesh", "--input", s(&d.join("r.seq")), "--frame", "3", "--out", s(&d.join("m.ply"))]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let ply = std::fs::read_to_string(d.join("m.ply")).unwrap();
    let verts = cfg.sim.n_u * cfg.sim.n_v;
    assert!(ply.contains(&format!("element vertex {verts}")), "{}", &ply[..200]);

    let out = tagtool(&["qc", "--input", s(&d.join("s.seq")), "--strict"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
