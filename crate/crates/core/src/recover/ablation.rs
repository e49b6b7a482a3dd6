//! Train-and-evaluate over a matrix of ablation switches.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::net::{ModeFlags, NetConfig, Psi};
use crate::recover::metrics::{evaluate, SiLayers};
use crate::recover::sequential::{recover_like, NetworkPredictor};
use crate::sequence::MotionSequence;
use crate::sim::clip::SpammSequence;
use crate::train::{train, TrainConfig, TrainSample, TrainState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Full,
    GlobalOnly,
    LocalOnly,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Full => "full",
            Mode::GlobalOnly => "global-only",
            Mode::LocalOnly => "local-only",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CueUse {
    Mixed,
    Separated,
}

impl CueUse {
    pub fn name(self) -> &'static str {
        match self {
            CueUse::Mixed => "mixed",
            CueUse::Separated => "separated",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Cell {
    pub k: usize,
    pub mode: Mode,
    pub cues: CueUse,
    pub stage2: bool,
}

impl Cell {
    pub fn flags(&self) -> ModeFlags {
        ModeFlags {
            global: self.mode != Mode::LocalOnly,
            local: self.mode != Mode::GlobalOnly,
            separated: self.cues == CueUse::Separated,
        }
    }
}

/// Cartesian product in the order k, mode, cues, stage2.
pub fn cells(k: &[usize], modes: &[Mode], cues: &[CueUse], stage2: &[bool]) -> Vec<Cell> {
    let mut out = Vec::new();
    for &k in k {
        for &mode in modes {
            for &c in cues {
                for &s in stage2 {
                    out.push(Cell {
                        k,
                        mode,
                        cues: c,
                        stage2: s,
                    });
                }
            }
        }
    }
    out
}

/// A held-out subject: material ground truth and its SPAMM sequence.
#[derive(Clone, Debug)]
pub struct EvalSubject {
    pub truth: MotionSequence,
    pub spamm: SpammSequence,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellResult {
    pub cell: Cell,
    pub mae: f64,
    pub mean_si: f64,
    pub final_loss: f64,
    /// Training plus evaluation wall time.
    pub runtime_s: f64,
}

/// Trains one network per cell from the same initialization seed and
/// evaluates it on every held-out subject.
pub fn ablation_harness(
    cohort: &[TrainSample],
    held_out: &[EvalSubject],
    net: &NetConfig,
    train_cfg: &TrainConfig,
    matrix: &[Cell],
    si_layers: SiLayers,
) -> Result<Vec<CellResult>> {
    let mut out = Vec::with_capacity(matrix.len());
    for &cell in matrix {
        let start = Instant::now();
        let mut nc = net.clone();
        nc.k = cell.k;
        let mut tc = train_cfg.clone();
        if !cell.stage2 {
            tc.e2 = 0;
        }
        let flags = cell.flags();
        let state = TrainState::new(Psi::new(nc)?, &tc);
        let state = train(cohort, &tc, flags, state)?;
        let (mut mae, mut si) = (0.0, 0.0);
        for s in held_out {
            let mut p = NetworkPredictor::new(&state.psi, flags);
            let rec = recover_like(&mut p, &s.truth, &s.spamm)?;
            let report = evaluate(&rec.sequence, &s.truth, &rec.step_seconds, si_layers)?;
            mae += report.mae;
            si += report.mean_si;
        }
        let n = held_out.len().max(1) as f64;
        let result = CellResult {
            cell,
            mae: mae / n,
            mean_si: si / n,
            final_loss: state.log.last().map_or(f64::NAN, |r| r.loss),
            runtime_s: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "ablation k={} {} {} stage2={}: MAE {:.4} mm, SI {:.4}",
            cell.k,
            cell.mode.name(),
            cell.cues.name(),
            cell.stage2,
            result.mae,
            result.mean_si
        );
        out.push(result);
    }
    Ok(out)
}

pub const ABLATION_HEADER: &str = "k,mode,cues,stage2,mae_mm,si_ratio,final_loss";

/// Deterministic CSV (runtimes are kept out so identical runs give identical bytes).
pub fn ablation_csv(rows: &[CellResult]) -> String {
    let mut s = format!("{ABLATION_HEADER}\n");
    for r in rows {
        writeln!(
            s,
            "{},{},{},{},{:e},{:e},{:e}",
            r.cell.k,
            r.cell.mode.name(),
            r.cell.cues.name(),
            r.cell.stage2,
            r.mae,
            r.mean_si,
            r.final_loss
        )
        .unwrap();
    }
    s
}

/// Per-cell wall times, one `k,mode,cues,stage2,runtime_s` row each.
pub fn ablation_runtime_csv(rows: &[CellResult]) -> String {
    let mut s = String::from("k,mode,cues,stage2,runtime_s\n");
    for r in rows {
        writeln!(
            s,
            "{},{},{},{},{:.3}",
            r.cell.k,
            r.cell.mode.name(),
            r.cell.cues.name(),
            r.cell.stage2,
            r.runtime_s
        )
        .unwrap();
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_order_and_flags() {
        let c = cells(&[8, 16], &[Mode::Full, Mode::GlobalOnly, Mode::LocalOnly], &[CueUse::Mixed], &[true]);
        assert_eq!(c.len(), 6);
        assert_eq!((c[0].k, c[0].mode), (8, Mode::Full));
        assert_eq!((c[3].k, c[3].mode), (16, Mode::Full));
        assert_eq!(c[1].flags(), ModeFlags::global_only());
        assert_eq!(c[2].flags(), ModeFlags::local_only());
        let sep = Cell {
            cues: CueUse::Separated,
            ..c[0]
        };
        assert!(sep.flags().separated);
    }

    #[test]
    fn one_cell_gives_one_row() {
        let r = CellResult {
            cell: cells(&[8], &[Mode::Full], &[CueUse::Mixed], &[false])[0],
            mae: 1.5,
            mean_si: 0.0,
            final_loss: 0.25,
            runtime_s: 3.0,
        };
        let csv = ablation_csv(&[r]);
        assert_eq!(csv, format!("{ABLATION_HEADER}\n8,full,mixed,false,1.5e0,0e0,2.5e-1\n"));
    }
}
