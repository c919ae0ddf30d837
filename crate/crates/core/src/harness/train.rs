use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use hima_tensor::serialize::{self, BlobEntry};
use hima_tensor::{Real, Tape, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{Augment, TrainSample};
use super::metrics::l1_dual_loss;
use crate::error::{CoreError, Result};
use crate::net::{Model, ModelConfig};

/// Cosine decay from `max` at step 0 to `min` at step `total − 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CosineSchedule {
    pub max: f64,
    pub min: f64,
    pub total: usize,
}

impl CosineSchedule {
    pub fn lr(&self, step: usize) -> f64 {
        if self.total <= 1 {
            return self.max;
        }
        let p = step.min(self.total - 1) as f64 / (self.total - 1) as f64;
        self.min + 0.5 * (self.max - self.min) * (1.0 + (PI * p).cos())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub augment: bool,
    /// Write a checkpoint every this many steps (0 disables).
    pub checkpoint_every: usize,
    /// Directory for checkpoints and failure snapshots.
    pub out_dir: Option<PathBuf>,
    /// Return once this many steps are done, keeping the `steps`-long schedule.
    pub stop_at: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            lr_max: 2e-4,
            lr_min: 2e-5,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.0,
            seed: 0,
            augment: true,
            checkpoint_every: 0,
            out_dir: None,
            stop_at: None,
        }
    }
}

impl TrainConfig {
    pub fn schedule(&self) -> CosineSchedule {
        CosineSchedule {
            max: self.lr_max,
            min: self.lr_min,
            total: self.steps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub lr: f64,
    /// `None` when the model has no RAW output.
    pub loss_raw: Option<f64>,
    pub loss_srgb: f64,
    pub total: f64,
}

/// Optimizer and progress state; together with the parameters it fully
/// determines the rest of a run.
#[derive(Debug, Clone)]
pub struct TrainState<T: Real> {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub seed: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub history: Vec<LossRecord>,
}

impl<T: Real> TrainState<T> {
    pub fn new(model: &Model<T>, seed: u64) -> Self {
        let zeros: Vec<Tensor<T>> = model
            .params
            .tensors()
            .iter()
            .map(|t| Tensor::zeros(t.shape()))
            .collect();
        Self {
            step: 0,
            epoch: 0,
            lr: 0.0,
            seed,
            m: zeros.clone(),
            v: zeros,
            history: Vec::new(),
        }
    }
}

/// Stream ids separating the per-epoch shuffles from per-step augmentation.
const SHUFFLE_STREAM: u64 = 1 << 40;

fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SHUFFLE_STREAM + epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

fn step_augment(seed: u64, step: usize) -> Augment {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step as u64);
    Augment::from_bits(rng.random_range(0..8))
}

/// Forward pass and loss of one sample; returns the records and, when
/// `grads` is set, the parameter gradients.
pub fn sample_loss<T: Real>(
    model: &Model<T>,
    s: &TrainSample<T>,
    grads: bool,
) -> Result<(Option<f64>, f64, f64, Option<Vec<Tensor<T>>>)> {
    let tape = Tape::new();
    let bound = model.params.bind(&tape, grads);
    let out = model.forward(&bound, tape.constant(s.input.clone()))?;
    let raw = out.rhat.map(|r| (r, tape.constant(s.gt_raw.clone())));
    let (total, lr, ls) = l1_dual_loss(
        raw,
        (out.srgb, tape.constant(s.gt_srgb.clone())),
        model.config.alpha,
        model.config.beta,
    )?;
    let rec = (lr.map(|v| v.value().item().f64()), ls.value().item().f64(), total.value().item().f64());
    if !grads || !rec.2.is_finite() {
        return Ok((rec.0, rec.1, rec.2, None));
    }
    let mut g = tape.backward(total)?;
    let gs = bound
        .vars()
        .iter()
        .zip(model.params.tensors())
        .map(|(v, p)| g.take(*v).unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect();
    Ok((rec.0, rec.1, rec.2, Some(gs)))
}

fn write_snapshot(dir: &Path, step: usize, lr: f64, sample: usize, rec: &(Option<f64>, f64, f64)) {
    let snap = serde_json::json!({
        "step": step,
        "lr": lr,
        "sample": sample,
        "loss_raw": rec.0,
        "loss_srgb": rec.1,
        "total": rec.2,
    });
    let _ = fs::create_dir_all(dir);
    let _ = fs::write(dir.join("nan_snapshot.json"), snap.to_string());
}

/// AdamW with bias correction.
fn adam_update<T: Real>(cfg: &TrainConfig, state: &mut TrainState<T>, params: &mut [Tensor<T>], grads: &[Tensor<T>], lr: f64) {
    let t = (state.step + 1) as i32;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let (b1t, b2t, eps) = (T::of(b1), T::of(b2), T::of(cfg.adam_eps));
    let (one, lr_t, decay) = (T::one(), T::of(lr), T::of(1.0 - lr * cfg.weight_decay));
    let (c1t, c2t) = (T::of(c1), T::of(c2));
    for i in 0..params.len() {
        let p = params[i].data_mut();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (j, &g) in grads[i].data().iter().enumerate() {
            m[j] = b1t * m[j] + (one - b1t) * g;
            v[j] = b2t * v[j] + (one - b2t) * g * g;
            let mhat = m[j] / c1t;
            let vhat = v[j] / c2t;
            p[j] = p[j] * decay - lr_t * mhat / (vhat.sqrt() + eps);
        }
    }
}

/// Trains `model` on `data` until `cfg.steps`, resuming from `resume` when
/// given. Each epoch visits every sample once in a seeded order; each step
/// draws its flip/transpose from a generator keyed on `(seed, step)`.
/// `on_step` sees every loss record as it is produced.
pub fn train<T: Real>(
    model: &mut Model<T>,
    data: &[TrainSample<T>],
    cfg: &TrainConfig,
    resume: Option<TrainState<T>>,
    mut on_step: impl FnMut(&LossRecord),
) -> Result<TrainState<T>> {
    if data.is_empty() {
        return Err(CoreError::Data("training set is empty".into()));
    }
    let mut state = resume.unwrap_or_else(|| TrainState::new(model, cfg.seed));
    if state.m.len() != model.params.len() {
        return Err(CoreError::Data("optimizer state does not match the model".into()));
    }
    let sched = cfg.schedule();
    let n = data.len();
    let mut order = epoch_order(state.seed, state.step / n, n);
    let end = cfg.stop_at.map_or(cfg.steps, |s| s.min(cfg.steps));
    while state.step < end {
        let step = state.step;
        let epoch = step / n;
        if step % n == 0 {
            order = epoch_order(state.seed, epoch, n);
        }
        let idx = order[step % n];
        let sample = if cfg.augment {
            step_augment(state.seed, step).sample(&data[idx])
        } else {
            data[idx].clone()
        };
        let lr = sched.lr(step);
        let (lraw, lsrgb, total, grads) = sample_loss(model, &sample, true)?;
        let grads = match grads {
            Some(g) if g.iter().all(|t| t.all_finite()) => g,
            _ => {
                if let Some(dir) = &cfg.out_dir {
                    write_snapshot(dir, step, lr, idx, &(lraw, lsrgb, total));
                }
                return Err(CoreError::Numerical {
                    step,
                    msg: format!("non-finite loss or gradient on sample {idx} (loss {total}, lr {lr:e})"),
                });
            }
        };
        adam_update(cfg, &mut state, model.params.tensors_mut(), &grads, lr);
        let rec = LossRecord {
            step,
            lr,
            loss_raw: lraw,
            loss_srgb: lsrgb,
            total,
        };
        on_step(&rec);
        state.history.push(rec);
        state.step += 1;
        state.epoch = state.step / n;
        state.lr = lr;
        if let Some(dir) = &cfg.out_dir {
            if cfg.checkpoint_every > 0 && state.step % cfg.checkpoint_every == 0 {
                save_checkpoint(&dir.join("checkpoint"), model, &state)?;
            }
        }
    }
    Ok(state)
}

/// Loss curve as CSV: `step,lr,loss_raw,loss_srgb`.
pub fn loss_csv(history: &[LossRecord]) -> String {
    let mut s = String::from("step,lr,loss_raw,loss_srgb\n");
    for r in history {
        let raw = r.loss_raw.map(|v| v.to_string()).unwrap_or_default();
        s.push_str(&format!("{},{},{},{}\n", r.step, r.lr, raw, r.loss_srgb));
    }
    s
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointMeta {
    step: usize,
    epoch: usize,
    lr: f64,
    seed: u64,
    dtype: String,
    config: ModelConfig,
    history: Vec<LossRecord>,
    tensors: Vec<BlobEntry>,
}

const STATE_JSON: &str = "state.json";
const STATE_BLOB: &str = "state.blob";

/// Writes parameters and optimizer state at full precision of `T`.
pub fn save_checkpoint<T: Real>(dir: &Path, model: &Model<T>, state: &TrainState<T>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
    let names = model.params.names();
    let mut items: Vec<(String, &Tensor<T>)> = Vec::new();
    for (i, name) in names.iter().enumerate() {
        items.push((format!("param:{name}"), &model.params.tensors()[i]));
        items.push((format!("m:{name}"), &state.m[i]));
        items.push((format!("v:{name}"), &state.v[i]));
    }
    let (blob, tensors) = serialize::encode(items.iter().map(|(n, t)| (n.as_str(), *t)));
    let meta = CheckpointMeta {
        step: state.step,
        epoch: state.epoch,
        lr: state.lr,
        seed: state.seed,
        dtype: T::DTYPE.name().into(),
        config: model.config.clone(),
        history: state.history.clone(),
        tensors,
    };
    let bp = dir.join(STATE_BLOB);
    fs::write(&bp, blob).map_err(|e| CoreError::io(&bp, e))?;
    let jp = dir.join(STATE_JSON);
    fs::write(&jp, serde_json::to_string(&meta).expect("checkpoint serializes")).map_err(|e| CoreError::io(&jp, e))
}

pub fn load_checkpoint<T: Real>(dir: &Path) -> Result<(Model<T>, TrainState<T>)> {
    let jp = dir.join(STATE_JSON);
    let text = fs::read_to_string(&jp).map_err(|e| CoreError::io(&jp, e))?;
    let meta: CheckpointMeta =
        serde_json::from_str(&text).map_err(|e| CoreError::Weights(format!("checkpoint: {e}")))?;
    if meta.dtype != T::DTYPE.name() {
        return Err(CoreError::Weights(format!(
            "checkpoint holds {} values, requested {}",
            meta.dtype,
            T::DTYPE.name()
        )));
    }
    let bp = dir.join(STATE_BLOB);
    let blob = fs::read(&bp).map_err(|e| CoreError::io(&bp, e))?;
    let tensors = serialize::decode::<T>(&blob, &meta.tensors)?;
    let mut model = Model::<T>::build(&meta.config, 0)?;
    let mut params = Vec::new();
    let mut m = Vec::new();
    let mut v = Vec::new();
    for (e, t) in meta.tensors.iter().zip(tensors) {
        let (kind, name) = e
            .name
            .split_once(':')
            .ok_or_else(|| CoreError::Weights(format!("bad checkpoint entry `{}`", e.name)))?;
        match kind {
            "param" => params.push((name.to_string(), t)),
            "m" => m.push(t),
            "v" => v.push(t),
            _ => return Err(CoreError::Weights(format!("bad checkpoint entry `{}`", e.name))),
        }
    }
    model.params.load(params)?;
    if m.len() != model.params.len() || v.len() != m.len() {
        return Err(CoreError::Weights("optimizer state is incomplete".into()));
    }
    let state = TrainState {
        step: meta.step,
        epoch: meta.epoch,
        lr: meta.lr,
        seed: meta.seed,
        m,
        v,
        history: meta.history,
    };
    Ok((model, state))
}
