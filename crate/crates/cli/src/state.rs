//! Mapping between training state and checkpoint tensors. Network tensors
//! keep their parameter names; optimizer moments, the epoch counter and the
//! training log live under the `adam/` and `train/` prefixes.

use vndm_core::net::{NetConfig, Psi};
use vndm_core::train::{LogRow, TrainConfig, TrainState};
use vndm_core::{Error, Result};
use vndm_tape::{Adam, AdamConfig, Matrix};

use crate::formats::Tensors;

const EPOCH: &str = "train/epoch";
const LOG: &str = "train/log";

fn is_state(name: &str) -> bool {
    name.starts_with("adam/") || name.starts_with("train/")
}

pub fn state_tensors(state: &TrainState) -> Tensors {
    let mut out: Tensors = state
        .psi
        .store
        .entries()
        .iter()
        .map(|e| (e.name.clone(), e.value.clone()))
        .collect();
    for (e, mo) in state.psi.store.entries().iter().zip(&state.adam.moments) {
        out.push((format!("adam/m/{}", e.name), mo.m.clone()));
        out.push((format!("adam/v/{}", e.name), mo.v.clone()));
        out.push((format!("adam/step/{}", e.name), Matrix::from_vec(1, 1, vec![mo.step as f64])));
    }
    out.push((EPOCH.into(), Matrix::from_vec(1, 1, vec![state.epoch as f64])));
    let rows: Vec<f64> = state
        .log
        .iter()
        .flat_map(|r| [r.epoch as f64, r.stage as f64, r.loss, r.data, r.l_d, r.l_s])
        .collect();
    out.push((LOG.into(), Matrix::from_vec(state.log.len(), 6, rows)));
    out
}

/// Network with the weights of a checkpoint; training-state tensors are ignored.
pub fn load_network(net: &NetConfig, tensors: &Tensors) -> Result<Psi> {
    let mut psi = Psi::new(net.clone())?;
    let weights: Tensors = tensors.iter().filter(|(n, _)| !is_state(n)).cloned().collect();
    psi.load(&weights)?;
    Ok(psi)
}

fn find<'a>(tensors: &'a Tensors, name: &str) -> Result<&'a Matrix> {
    tensors
        .iter()
        .find(|(n, _)| n == name)
        .map(|(_, m)| m)
        .ok_or_else(|| Error::Format(format!("checkpoint has no tensor {name}")))
}

/// Full training state for resuming. A weights-only checkpoint restarts the
/// optimizer at epoch 0.
pub fn restore_state(net: &NetConfig, train: &TrainConfig, tensors: &Tensors) -> Result<TrainState> {
    let psi = load_network(net, tensors)?;
    if !tensors.iter().any(|(n, _)| n == EPOCH) {
        return Ok(TrainState::new(psi, train));
    }
    let mut adam = Adam::new(AdamConfig::with_lr(train.lr), &psi.store);
    for (e, mo) in psi.store.entries().iter().zip(adam.moments.iter_mut()) {
        mo.m = find(tensors, &format!("adam/m/{}", e.name))?.clone();
        mo.v = find(tensors, &format!("adam/v/{}", e.name))?.clone();
        mo.step = find(tensors, &format!("adam/step/{}", e.name))?.item() as u64;
        if mo.m.shape() != e.value.shape() || mo.v.shape() != e.value.shape() {
            return Err(Error::Format(format!("optimizer moments of {} have the wrong shape", e.name)));
        }
    }
    let epoch = find(tensors, EPOCH)?.item() as usize;
    let log_m = find(tensors, LOG)?;
    if log_m.rows() > 0 && log_m.cols() != 6 {
        return Err(Error::Format(format!("{LOG} has {} columns, expected 6", log_m.cols())));
    }
    let log = (0..log_m.rows())
        .map(|r| {
            let v = log_m.row(r);
            LogRow {
                epoch: v[0] as usize,
                stage: v[1] as u8,
                loss: v[2],
                data: v[3],
                l_d: v[4],
                l_s: v[5],
            }
        })
        .collect();
    Ok(TrainState { psi, adam, epoch, log })
}

pub const LOG_HEADER: &str = "epoch,stage,loss,data,l_d,l_s";

pub fn log_csv(rows: &[LogRow]) -> String {
    let mut s = format!("{LOG_HEADER}\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{:e},{:e},{:e},{:e}\n",
            r.epoch, r.stage, r.loss, r.data, r.l_d, r.l_s
        ));
    }
    s
}
