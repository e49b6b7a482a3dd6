//! Subcommand implementations.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use clap::{Args, Subcommand, ValueEnum};
use vndm_core::geometry::build_layer_mesh;
use vndm_core::net::ModeFlags;
use vndm_core::recover::ablation::{ablation_csv, ablation_harness, ablation_runtime_csv, cells, EvalSubject};
use vndm_core::recover::direct_fit::DirectFitPredictor;
use vndm_core::recover::metrics::{evaluate, SiLayers};
use vndm_core::recover::sequential::{sequential_recover, MotionPredictor, NetworkPredictor, OraclePredictor};
use vndm_core::sim::clip::{compute_spamm_sequence, place_planes, SpammSequence};
use vndm_core::sim::cohort::simulate_subject;
use vndm_core::sim::subject::subject_id;
use vndm_core::sim::qc::quality_check;
use vndm_core::train::{train_observed, TrainSample, TrainState};
use vndm_core::{Error, MotionSequence, Result};

use crate::config::{RunConfig, SiLayersConfig};
use crate::formats::{
    encode_ply, read_checkpoint, read_sequence, read_spamm, write_atomic, write_checkpoint, write_sequence,
    write_spamm,
};
use crate::state::{load_network, log_csv, restore_state, state_tensors};

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate subjects: sequence and SPAMM files per subject.
    Simulate(SimulateArgs),
    /// Clip a sequence on fresh imaging planes into a SPAMM file.
    Clip(ClipArgs),
    /// Quality-control report of a sequence.
    Qc(QcArgs),
    /// Train the recovery network on the configured cohort.
    Train(TrainArgs),
    /// Recover a whole cycle from M(t_0) and SPAMM cues.
    Recover(RecoverArgs),
    /// Compare a predicted sequence with ground truth.
    Eval(EvalArgs),
    /// Run the ablation matrix.
    Ablate(AblateArgs),
    /// Write one layer of one frame as an ASCII PLY mesh.
    ExportMesh(ExportMeshArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Simulate only this subject seed instead of the configured cohort.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ClipArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct QcArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Treat a failed rule as a data error.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Directory with `<subject>.seq` and `<subject>.spamm` files.
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint path; rewritten after every epoch.
    #[arg(long)]
    pub out: PathBuf,
    /// Training log CSV (default: checkpoint path with `.log.csv`).
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Full,
    GlobalOnly,
    LocalOnly,
}

#[derive(Debug, Args)]
pub struct RecoverArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Network weights.
    #[arg(long, conflicts_with_all = ["oracle", "direct_fit"])]
    pub checkpoint: Option<PathBuf>,
    /// Replay this sequence instead of predicting.
    #[arg(long)]
    pub oracle: Option<PathBuf>,
    /// Use the optimization baseline instead of a network.
    #[arg(long)]
    pub direct_fit: bool,
    #[arg(long)]
    pub spamm: PathBuf,
    /// Sequence whose first frame (material layers) is M(t_0).
    #[arg(long)]
    pub m0: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-frame forward-pass seconds, CSV.
    #[arg(long)]
    pub timings: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "full")]
    pub mode: ModeArg,
    #[arg(long)]
    pub separated: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    /// Timings CSV from `recover`; runtimes are reported as 0 without it.
    #[arg(long)]
    pub timings: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Metrics CSV; wall times go to `<out>.runtime.csv`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExportMeshArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub frame: usize,
    /// Stored layer index (default: middle).
    #[arg(long)]
    pub layer: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Simulate(a) => simulate(&a),
        Command::Clip(a) => clip(&a),
        Command::Qc(a) => qc(&a),
        Command::Train(a) => train_cmd(&a),
        Command::Recover(a) => recover(&a),
        Command::Eval(a) => eval(&a),
        Command::Ablate(a) => ablate(&a),
        Command::ExportMesh(a) => export_mesh(&a),
    }
}

pub fn sequence_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("{}.seq", subject_id(seed)))
}

pub fn spamm_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("{}.spamm", subject_id(seed)))
}

fn simulate(a: &SimulateArgs) -> Result<()> {
    let cfg = RunConfig::load(&a.config)?;
    let out = a.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.out_dir).join("data"));
    let seeds: BTreeSet<u64> = match a.seed {
        Some(s) => [s].into(),
        None => cfg.cohort.train.iter().chain(&cfg.cohort.eval).copied().collect(),
    };
    for seed in seeds {
        let s = simulate_subject(seed, &cfg.sim)?;
        let report = quality_check(&s.sequence)?;
        if !report.passed() {
            log::warn!("{} fails quality control:\n{report}", s.sequence.subject_id);
        }
        write_sequence(&sequence_path(&out, seed), &s.sequence)?;
        write_spamm(&spamm_path(&out, seed), &s.spamm)?;
        log::info!("simulated {}", s.sequence.subject_id);
    }
    Ok(())
}

/// SPAMM sequence of a stored sequence: planes placed on frame 0, tag
/// surfaces on the odd layers.
pub fn clip_sequence(seq: &MotionSequence, cfg: &RunConfig) -> Result<SpammSequence> {
    let planes = place_planes(&seq.frames[0], cfg.sim.n_sax, cfg.sim.n_lax)?;
    let odd: Vec<usize> = seq
        .layers
        .iter()
        .enumerate()
        .filter(|(_, &w)| w % 2 == 1)
        .map(|(i, _)| i)
        .collect();
    if odd.is_empty() {
        return Err(Error::Data(format!(
            "sequence {} stores no odd layers to clip (layers {:?})",
            seq.subject_id, seq.layers
        )));
    }
    compute_spamm_sequence(seq, &planes, &odd, cfg.sim.n_s)
}

fn clip(a: &ClipArgs) -> Result<()> {
    let cfg = RunConfig::load(&a.config)?;
    let seq = read_sequence(&a.input)?;
    write_spamm(&a.out, &clip_sequence(&seq, &cfg)?)
}

fn qc(a: &QcArgs) -> Result<()> {
    let seq = read_sequence(&a.input)?;
    let report = quality_check(&seq)?;
    let text = report.to_string();
    match &a.out {
        Some(p) => write_atomic(p, text.as_bytes())?,
        None => print!("{text}"),
    }
    if a.strict && !report.passed() {
        let failed: Vec<&str> = report.rules.iter().filter(|r| !r.passed).map(|r| r.name).collect();
        return Err(Error::Data(format!("{} fails rules {failed:?}", seq.subject_id)));
    }
    Ok(())
}

/// Training samples for the given seeds from a data directory.
pub fn load_samples(dir: &Path, seeds: &[u64]) -> Result<Vec<TrainSample>> {
    seeds
        .iter()
        .map(|&s| {
            let seq = read_sequence(&sequence_path(dir, s))?.material_layers()?;
            let spamm = read_spamm(&spamm_path(dir, s))?;
            TrainSample::new(&seq, &spamm)
        })
        .collect()
}

pub fn load_eval_subjects(dir: &Path, seeds: &[u64]) -> Result<Vec<EvalSubject>> {
    seeds
        .iter()
        .map(|&s| {
            Ok(EvalSubject {
                truth: read_sequence(&sequence_path(dir, s))?.material_layers()?,
                spamm: read_spamm(&spamm_path(dir, s))?,
            })
        })
        .collect()
}

fn train_cmd(a: &TrainArgs) -> Result<()> {
    let cfg = RunConfig::load(&a.config)?;
    let samples = load_samples(&a.data, &cfg.cohort.train)?;
    let state = match &a.resume {
        Some(p) => restore_state(&cfg.net, &cfg.train, &read_checkpoint(p)?)?,
        None => TrainState::new(vndm_core::net::Psi::new(cfg.net.clone())?, &cfg.train),
    };
    let log_path = a.log.clone().unwrap_or_else(|| a.out.with_extension("log.csv"));
    let mut save = |s: &TrainState| -> Result<()> {
        write_checkpoint(&a.out, &state_tensors(s))?;
        write_atomic(&log_path, log_csv(&s.log).as_bytes())?;
        if let Some(r) = s.log.last() {
            log::info!("epoch {} stage {} loss {:.6e}", r.epoch, r.stage, r.loss);
        }
        Ok(())
    };
    let state = train_observed(&samples, &cfg.train, ModeFlags::FULL, state, &mut |_| {}, &mut save)?;
    save(&state)
}

fn flags(mode: ModeArg, separated: bool) -> ModeFlags {
    ModeFlags {
        global: mode != ModeArg::LocalOnly,
        local: mode != ModeArg::GlobalOnly,
        separated,
    }
}

fn recover(a: &RecoverArgs) -> Result<()> {
    let cfg = RunConfig::load(&a.config)?;
    let spamm = read_spamm(&a.spamm)?;
    let m0_seq = read_sequence(&a.m0)?.material_layers()?;
    let psi;
    let mut predictor: Box<dyn MotionPredictor + '_> = if let Some(p) = &a.oracle {
        Box::new(OraclePredictor {
            truth: read_sequence(p)?.material_layers()?,
        })
    } else if a.direct_fit {
        Box::new(DirectFitPredictor::new(cfg.direct_fit.clone()))
    } else {
        let ck = a
            .checkpoint
            .as_ref()
            .ok_or_else(|| Error::Config("recover needs --checkpoint, --oracle or --direct-fit".into()))?;
        psi = load_network(&cfg.net, &read_checkpoint(ck)?)?;
        Box::new(NetworkPredictor::new(&psi, flags(a.mode, a.separated)))
    };
    if spamm.frames != m0_seq.len() {
        log::info!(
            "SPAMM sequence has {} frames; recovering that many from M(t_0)",
            spamm.frames
        );
    }
    let rec = sequential_recover(
        predictor.as_mut(),
        &m0_seq.frames[0],
        &spamm,
        &m0_seq.subject_id,
        m0_seq.layers.clone(),
        m0_seq.es_index,
    )?;
    write_sequence(&a.out, &rec.sequence)?;
    if let Some(t) = &a.timings {
        let mut s = String::from("frame,runtime_s\n");
        for (n, v) in rec.step_seconds.iter().enumerate() {
            s.push_str(&format!("{},{v:e}\n", n + 1));
        }
        s.push_str(&format!("total,{:e}\n", rec.total_seconds));
        write_atomic(t, s.as_bytes())?;
    }
    Ok(())
}

fn read_timings(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    text.lines()
        .skip(1)
        .filter(|l| !l.starts_with("total,"))
        .map(|l| {
            l.split_once(',')
                .and_then(|(_, v)| v.parse().ok())
                .ok_or_else(|| Error::Data(format!("{}: bad timing row {l:?}", path.display())))
        })
        .collect()
}

fn si_layers(cfg: &RunConfig) -> SiLayers {
    match cfg.si_layers {
        SiLayersConfig::Middle => SiLayers::Middle,
        SiLayersConfig::All => SiLayers::All,
    }
}

fn eval(a: &EvalArgs) -> Result<()> {
    let cfg = RunConfig::load(&a.config)?;
    let pred = read_sequence(&a.pred)?;
    let truth = read_sequence(&a.truth)?.select_layers(&pred.layers)?;
    let timings = match &a.timings {
        Some(p) => read_timings(p)?,
        None => Vec::new(),
    };
    let report = evaluate(&pred, &truth, &timings, si_layers(&cfg))?;
    write_atomic(&a.out, report.to_csv().as_bytes())
}

fn ablate(a: &AblateArgs) -> Result<()> {
    let cfg = RunConfig::load(&a.config)?;
    let ab = &cfg.ablation;
    let samples = load_samples(&a.data, &ab.cohort.train)?;
    let held_out = load_eval_subjects(&a.data, &ab.cohort.eval)?;
    let mut tc = cfg.train.clone();
    tc.e1 = ab.e1;
    tc.e2 = ab.e2;
    let matrix = cells(&ab.k, &ab.modes, &ab.cues, &ab.stage2);
    let rows = ablation_harness(&samples, &held_out, &cfg.net, &tc, &matrix, si_layers(&cfg))?;
    write_atomic(&a.out, ablation_csv(&rows).as_bytes())?;
    let mut side = a.out.clone().into_os_string();
    side.push(".runtime.csv");
    write_atomic(Path::new(&side), ablation_runtime_csv(&rows).as_bytes())
}

fn export_mesh(a: &ExportMeshArgs) -> Result<()> {
    let seq = read_sequence(&a.input)?;
    let grid = seq
        .frames
        .get(a.frame)
        .ok_or_else(|| Error::Data(format!("frame {} outside 0..{}", a.frame, seq.len())))?;
    let w = a.layer.unwrap_or(grid.dims.n_w / 2);
    let mesh = build_layer_mesh(grid, w)?;
    write_atomic(&a.out, encode_ply(&mesh).as_bytes())
}
