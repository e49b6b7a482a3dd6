//! JSON run configuration. Sections left out are filled from the chosen
//! scale profile; unknown keys anywhere are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use vndm_core::net::NetConfig;
use vndm_core::recover::ablation::{CueUse, Mode};
use vndm_core::recover::direct_fit::DirectFitConfig;
use vndm_core::sim::cohort::SimConfig;
use vndm_core::train::TrainConfig;
use vndm_core::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Desk,
    Paper,
}

/// Subject seeds used for training and held out for evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cohort {
    pub train: Vec<u64>,
    pub eval: Vec<u64>,
}

/// Cells are the product of all lists; each cell trains on `train`
/// subjects with `e1`/`e2` epochs and is evaluated on `eval`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationConfig {
    pub k: Vec<usize>,
    pub modes: Vec<Mode>,
    pub cues: Vec<CueUse>,
    pub stage2: Vec<bool>,
    pub e1: usize,
    pub e2: usize,
    pub cohort: Cohort,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SiLayersConfig {
    Middle,
    All,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub profile: Profile,
    pub seed: u64,
    pub sim: SimConfig,
    pub net: NetConfig,
    pub train: TrainConfig,
    pub direct_fit: DirectFitConfig,
    pub cohort: Cohort,
    pub ablation: AblationConfig,
    pub si_layers: SiLayersConfig,
    /// Default output directory for commands given no explicit path.
    pub out_dir: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    profile: Profile,
    seed: Option<u64>,
    sim: Option<SimConfig>,
    net: Option<NetConfig>,
    train: Option<TrainConfig>,
    direct_fit: Option<DirectFitConfig>,
    cohort: Option<Cohort>,
    ablation: Option<AblationConfig>,
    si_layers: Option<SiLayersConfig>,
    out_dir: Option<String>,
}

impl RunConfig {
    pub fn profile(profile: Profile) -> Self {
        match profile {
            Profile::Desk => Self {
                profile,
                seed: 0,
                sim: SimConfig::desk(),
                net: NetConfig::desk(),
                train: TrainConfig::desk(),
                direct_fit: DirectFitConfig::default(),
                cohort: Cohort {
                    train: (0..6).collect(),
                    eval: vec![6, 7],
                },
                ablation: AblationConfig {
                    k: vec![8, 16, 24],
                    modes: vec![Mode::Full, Mode::GlobalOnly, Mode::LocalOnly],
                    cues: vec![CueUse::Mixed, CueUse::Separated],
                    stage2: vec![true],
                    e1: 40,
                    e2: 4,
                    cohort: Cohort {
                        train: (0..3).collect(),
                        eval: vec![6],
                    },
                },
                si_layers: SiLayersConfig::Middle,
                out_dir: "out".into(),
            },
            Profile::Paper => Self {
                profile,
                seed: 0,
                sim: SimConfig::paper(),
                net: NetConfig::paper(),
                train: TrainConfig::paper(),
                direct_fit: DirectFitConfig::default(),
                cohort: Cohort {
                    train: (0..200).collect(),
                    eval: (200..250).collect(),
                },
                ablation: AblationConfig {
                    k: vec![16, 32, 64],
                    modes: vec![Mode::Full, Mode::GlobalOnly, Mode::LocalOnly],
                    cues: vec![CueUse::Mixed, CueUse::Separated],
                    stage2: vec![true, false],
                    e1: 1000,
                    e2: 300,
                    cohort: Cohort {
                        train: (0..200).collect(),
                        eval: (200..250).collect(),
                    },
                },
                si_layers: SiLayersConfig::Middle,
                out_dir: "out".into(),
            },
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: RawConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid run config: {e}")))?;
        let base = Self::profile(raw.profile);
        let cfg = Self {
            profile: raw.profile,
            seed: raw.seed.unwrap_or(base.seed),
            sim: raw.sim.unwrap_or(base.sim),
            net: raw.net.unwrap_or(base.net),
            train: raw.train.unwrap_or(base.train),
            direct_fit: raw.direct_fit.unwrap_or(base.direct_fit),
            cohort: raw.cohort.unwrap_or(base.cohort),
            ablation: raw.ablation.unwrap_or(base.ablation),
            si_layers: raw.si_layers.unwrap_or(base.si_layers),
            out_dir: raw.out_dir.unwrap_or(base.out_dir),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Canonical JSON text of the fully resolved configuration.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.net.validate()?;
        self.train.validate()?;
        if !(self.direct_fit.lr > 0.0 && self.direct_fit.lambda_d >= 0.0 && self.direct_fit.lambda_s >= 0.0) {
            return Err(Error::Config(
                "direct_fit: lr must be positive and lambda_d, lambda_s non-negative".into(),
            ));
        }
        if self.net.k > self.sim.n_s {
            return Err(Error::Config(format!(
                "net.k = {} exceeds sim.n_s = {}",
                self.net.k, self.sim.n_s
            )));
        }
        if self.cohort.train.is_empty() {
            return Err(Error::Config("cohort.train is empty".into()));
        }
        if let Some(s) = self.cohort.eval.iter().find(|s| self.cohort.train.contains(s)) {
            return Err(Error::Config(format!("cohort: subject seed {s} is in both train and eval")));
        }
        let a = &self.ablation;
        if a.k.is_empty() || a.modes.is_empty() || a.cues.is_empty() || a.stage2.is_empty() {
            return Err(Error::Config("ablation: every axis needs at least one value".into()));
        }
        if let Some(k) = a.k.iter().find(|&&k| k == 0 || k > self.sim.n_s) {
            return Err(Error::Config(format!("ablation.k = {k} outside 1..={}", self.sim.n_s)));
        }
        if a.cohort.train.is_empty() || a.cohort.eval.is_empty() {
            return Err(Error::Config("ablation.cohort needs train and eval subjects".into()));
        }
        Ok(())
    }
}
