//! Training loss and the two-stage training loop: teacher-forced single
//! transitions with staged unlocking, then windows where the network is fed
//! its own predictions.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use vndm_tape::{Adam, AdamConfig, Graph, Matrix, Var};

use crate::error::{Error, Result};
use crate::flow::regularizers;
use crate::geometry::GridDims;
use crate::msl::{group_live, msl_schedule, UnlockFractions};
use crate::net::{ModeFlags, Psi, Topology};
use crate::recover::normalize::normalize;
use crate::sequence::MotionSequence;
use crate::sim::clip::{ApparentMotionCues, SpammSequence};
use crate::vec3::{self, Vec3};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda_d: f64,
    pub lambda_s: f64,
    pub lr: f64,
    pub e1: usize,
    pub e2: usize,
    /// Frames per Stage II window.
    pub window: usize,
    pub unlock: UnlockFractions,
    pub seed: u64,
}

impl TrainConfig {
    pub fn paper() -> Self {
        Self {
            lambda_d: 0.1,
            lambda_s: 0.05,
            lr: 1e-4,
            e1: 1000,
            e2: 300,
            window: 5,
            unlock: UnlockFractions::default(),
            seed: 0,
        }
    }

    pub fn desk() -> Self {
        Self {
            lr: 1e-3,
            e1: 200,
            e2: 50,
            ..Self::paper()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_d >= 0.0 && self.lambda_s >= 0.0) {
            return Err(Error::Config(format!(
                "lambda_d = {}, lambda_s = {} must be non-negative",
                self.lambda_d, self.lambda_s
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr = {} must be positive", self.lr)));
        }
        if self.window < 2 {
            return Err(Error::Config(format!("window = {} must be at least 2", self.window)));
        }
        self.unlock.validate()
    }
}

/// Symbolic loss terms of one transition.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub data: Var,
    pub l_d: Option<Var>,
    pub l_s: Option<Var>,
}

/// `mean ‖M̂ − M‖² + λ_d L_d + λ_s L_s` on the tape.
pub fn loss_on_tape(
    g: &mut Graph,
    pred: Var,
    target: Var,
    q_d: Option<Var>,
    topo: &Topology,
    lambda_d: f64,
    lambda_s: f64,
) -> LossVars {
    let diff = g.sub(pred, target);
    let data = g.mean_sq_rows(diff);
    let Some(q) = q_d else {
        return LossVars {
            total: data,
            data,
            l_d: None,
            l_s: None,
        };
    };
    let l_d = g.mean_sq_rows(q);
    let a = g.gather_rows(q, topo.edge_a.clone());
    let b = g.gather_rows(q, topo.edge_b.clone());
    let e = g.sub(a, b);
    let l_s = g.mean_sq_rows(e);
    let wd = g.scale(l_d, lambda_d);
    let ws = g.scale(l_s, lambda_s);
    let t = g.add(data, wd);
    let total = g.add(t, ws);
    LossVars {
        total,
        data,
        l_d: Some(l_d),
        l_s: Some(l_s),
    }
}

/// Plain-value loss.
pub fn loss(
    pred: &[Vec3],
    truth: &[Vec3],
    q_d: &[Vec3],
    dims: GridDims,
    lambda_d: f64,
    lambda_s: f64,
) -> Result<f64> {
    if pred.len() != truth.len() || pred.len() != dims.len() {
        return Err(Error::Dimension(format!(
            "{} predictions, {} targets, grid of {}",
            pred.len(),
            truth.len(),
            dims.len()
        )));
    }
    let data = pred.iter().zip(truth).map(|(&a, &b)| vec3::dist_sq(a, b)).sum::<f64>() / pred.len() as f64;
    let (l_d, l_s) = regularizers(q_d, dims)?;
    Ok(data + lambda_d * l_d + lambda_s * l_s)
}

/// One subject in normalized coordinates: material frames and per-transition cues.
#[derive(Clone, Debug)]
pub struct TrainSample {
    pub material: MotionSequence,
    pub cues: Vec<ApparentMotionCues>,
}

impl TrainSample {
    pub fn new(material: &MotionSequence, spamm: &SpammSequence) -> Result<Self> {
        if spamm.frames != material.len() {
            return Err(Error::Data(format!(
                "SPAMM sequence has {} frames, material sequence {}",
                spamm.frames,
                material.len()
            )));
        }
        let (material, cues, _) = normalize(material, spamm)?;
        Ok(Self { material, cues })
    }

    fn frame(&self, q: usize) -> Matrix {
        Matrix::from_points(&self.material.frames[q].points)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub epoch: usize,
    pub stage: u8,
    pub loss: f64,
    pub data: f64,
    pub l_d: f64,
    pub l_s: f64,
}

/// Everything needed to continue training bit-identically.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub psi: Psi,
    pub adam: Adam,
    /// Epochs completed so far (Stage I epochs first).
    pub epoch: usize,
    pub log: Vec<LogRow>,
}

impl TrainState {
    pub fn new(psi: Psi, config: &TrainConfig) -> Self {
        let adam = Adam::new(AdamConfig::with_lr(config.lr), &psi.store);
        Self {
            psi,
            adam,
            epoch: 0,
            log: Vec::new(),
        }
    }
}

/// What the training loop fed the network at one transition.
#[derive(Clone, Debug)]
pub struct StepEvent<'a> {
    pub epoch: usize,
    pub stage: u8,
    pub subject: &'a str,
    pub q: usize,
    pub from_prediction: bool,
    pub input: &'a Matrix,
    pub output: &'a Matrix,
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    rng
}

/// Runs the remaining epochs of both stages.
pub fn train(
    cohort: &[TrainSample],
    config: &TrainConfig,
    flags: ModeFlags,
    state: TrainState,
) -> Result<TrainState> {
    train_observed(cohort, config, flags, state, &mut |_| {}, &mut |_| Ok(()))
}

/// [`train`] with a per-transition observer and a per-epoch hook (called
/// with the state after every completed epoch).
pub fn train_observed(
    cohort: &[TrainSample],
    config: &TrainConfig,
    flags: ModeFlags,
    mut state: TrainState,
    observe: &mut dyn FnMut(&StepEvent<'_>),
    after_epoch: &mut dyn FnMut(&TrainState) -> Result<()>,
) -> Result<TrainState> {
    config.validate()?;
    let total = config.e1 + config.e2;
    if state.epoch >= total {
        return Ok(state);
    }
    if cohort.is_empty() {
        return Err(Error::Data("training cohort is empty".into()));
    }
    let dims = cohort[0].material.dims();
    if let Some(s) = cohort.iter().find(|s| s.material.dims() != dims) {
        return Err(Error::Dimension(format!(
            "subject {} has grid {:?}, expected {dims:?}",
            s.material.subject_id,
            s.material.dims()
        )));
    }
    if let Some(s) = cohort.iter().find(|s| s.material.len() < 2 || s.cues.len() + 1 != s.material.len()) {
        return Err(Error::Data(format!(
            "subject {} has {} frames and {} cue sets",
            s.material.subject_id,
            s.material.len(),
            s.cues.len()
        )));
    }
    let topo = Topology::new(dims);
    state.adam.config.lr = config.lr;

    while state.epoch < total {
        let epoch = state.epoch;
        let stage: u8 = if epoch < config.e1 { 1 } else { 2 };
        let mask = if stage == 1 {
            msl_schedule(epoch, config.e1, config.unlock)
        } else {
            [true; 3]
        };
        let mut rng = epoch_rng(config.seed, epoch);
        let mut order: Vec<usize> = (0..cohort.len()).collect();
        order.shuffle(&mut rng);
        let mut sums = [0.0f64; 4];
        for (step, &si) in order.iter().enumerate() {
            let sample = &cohort[si];
            let t = sample.material.len();
            let (start, len) = if stage == 1 {
                (rng.random_range(0..t - 1), 2)
            } else {
                let len = config.window.min(t);
                (rng.random_range(0..=t - len), len)
            };
            let mut g = Graph::new();
            let p = state.psi.store.bind(&mut g, |grp| group_live(mask, grp));
            let mut input = g.constant(sample.frame(start));
            let mut terms: Vec<LossVars> = Vec::with_capacity(len - 1);
            for q in start..start + len - 1 {
                let f = state.psi.forward(&mut g, &p, input, &topo, &sample.cues[q], flags)?;
                let target = g.constant(sample.frame(q + 1));
                terms.push(loss_on_tape(&mut g, f.points, target, f.q_d, &topo, config.lambda_d, config.lambda_s));
                observe(&StepEvent {
                    epoch,
                    stage,
                    subject: &sample.material.subject_id,
                    q,
                    from_prediction: q > start,
                    input: g.value(input),
                    output: g.value(f.points),
                });
                input = f.points;
            }
            let mut total_loss = terms[0].total;
            for t in &terms[1..] {
                total_loss = g.add(total_loss, t.total);
            }
            let value = g.value(total_loss).item();
            if !value.is_finite() {
                return Err(Error::Numerical(format!(
                    "loss is {value} at epoch {epoch}, step {step} (subject {}, frames {start}..{})",
                    sample.material.subject_id,
                    start + len - 1
                )));
            }
            sums[0] += value;
            for t in &terms {
                sums[1] += g.value(t.data).item();
                sums[2] += t.l_d.map_or(0.0, |v| g.value(v).item());
                sums[3] += t.l_s.map_or(0.0, |v| g.value(v).item());
            }
            let mut grads = g.backward(total_loss).map_err(|e| Error::Numerical(e.to_string()))?;
            let grads = p.collect(&state.psi.store, &mut grads);
            state.adam.step(&mut state.psi.store, &grads);
        }
        let n = cohort.len() as f64;
        state.log.push(LogRow {
            epoch,
            stage,
            loss: sums[0] / n,
            data: sums[1] / n,
            l_d: sums[2] / n,
            l_s: sums[3] / n,
        });
        state.epoch += 1;
        after_epoch(&state)?;
    }
    Ok(state)
}
