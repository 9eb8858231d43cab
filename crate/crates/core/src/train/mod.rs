//! Pretraining, fine-tuning, validation and early stopping.

pub mod optim;
pub mod schedule;

use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use laglm_tensor::{Graph, Tensor, TensorError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{make_splits, CorpusSampler, Dataset, DatasetSplits, SplitMode, Window};
use crate::distribution::{constrain, weighted_nll};
use crate::error::{Error, Result};
use crate::featurize::{augmentation_registry, encode_window, scaler_registry, Augmentation, Scaler};
use crate::model::{Checkpoint, Model, ModelConfig, TrainingMeta};

pub use optim::Adam;
pub use schedule::{schedule_registry, LrSchedule};

/// ChaCha stream ids derived from the run seed.
const AUG_STREAM: u64 = 1;
const DROPOUT_STREAM: u64 = 2;
const EVAL_CHUNK: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub windows_per_epoch: usize,
    pub early_stop_patience: usize,
    pub max_epochs: usize,
    pub weight_decay: f64,
    /// Probability that a window is augmented at all.
    pub aug_prob: f64,
    pub freq_mask_rate: f64,
    pub freq_mix_rate: f64,
    pub lr_schedule: String,
    /// Also train on positions whose lags reach into left padding.
    pub loss_on_padded: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 256,
            learning_rate: 1e-4,
            windows_per_epoch: 100,
            early_stop_patience: 50,
            max_epochs: 1000,
            weight_decay: 0.0,
            aug_prob: 0.5,
            freq_mask_rate: 0.5,
            freq_mix_rate: 0.25,
            lr_schedule: "constant".into(),
            loss_on_padded: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.windows_per_epoch == 0 || self.early_stop_patience == 0 {
            return Err(Error::Config(
                "batch_size, windows_per_epoch and early_stop_patience must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        for (name, r) in [
            ("aug_prob", self.aug_prob),
            ("freq_mask_rate", self.freq_mask_rate),
            ("freq_mix_rate", self.freq_mix_rate),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Config(format!("{name} {r} not in [0, 1]")));
            }
        }
        schedule_registry().get(&self.lr_schedule)?;
        Ok(())
    }
}

/// Per-window augmentation gate followed by every augmentation with a
/// positive rate. Uses its own RNG stream so toggling augmentation leaves
/// window sampling unchanged.
pub struct AugmentationPolicy {
    prob: f64,
    steps: Vec<(Arc<dyn Augmentation>, f64)>,
    rng: ChaCha8Rng,
}

impl AugmentationPolicy {
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        let reg = augmentation_registry();
        let mut steps = Vec::new();
        for (name, rate) in [("freq-mask", cfg.freq_mask_rate), ("freq-mix", cfg.freq_mix_rate)] {
            if rate > 0.0 {
                steps.push((reg.get(name)?, rate));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(AUG_STREAM);
        Ok(Self {
            prob: cfg.aug_prob,
            steps,
            rng,
        })
    }

    /// Augments the observed suffix of each window in place; partners for
    /// mixing come from the same batch. Returns the number of windows that
    /// passed the gate.
    pub fn apply(&mut self, batch: &mut [Window]) -> Result<usize> {
        let originals: Vec<Vec<f64>> = batch.iter().map(|w| w.values.clone()).collect();
        let mut gated = 0;
        for i in 0..batch.len() {
            if self.rng.random::<f64>() >= self.prob {
                continue;
            }
            gated += 1;
            if self.steps.is_empty() {
                continue;
            }
            let partner_idx = if batch.len() > 1 {
                let j = self.rng.random_range(0..batch.len() - 1);
                if j >= i {
                    j + 1
                } else {
                    j
                }
            } else {
                i
            };
            let w = &mut batch[i];
            let first = w.observed.iter().position(|&o| o).unwrap_or(w.len());
            let n = w.len() - first;
            if n < 2 {
                continue;
            }
            let partner = &originals[partner_idx][originals[partner_idx].len() - n..];
            let mut values = w.values[first..].to_vec();
            for (aug, rate) in &self.steps {
                values = aug.apply(&values, partner, *rate, &mut self.rng)?;
            }
            w.values[first..].copy_from_slice(&values);
        }
        Ok(gated)
    }
}

/// Outcome of one early-stopping observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Progress {
    Improved,
    Stalled,
    Stop,
}

#[derive(Debug, Clone)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: f64,
    pub best_epoch: usize,
    pub since_improvement: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            since_improvement: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, loss: f64) -> Progress {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = epoch;
            self.since_improvement = 0;
            Progress::Improved
        } else {
            self.since_improvement += 1;
            if self.since_improvement >= self.patience {
                Progress::Stop
            } else {
                Progress::Stalled
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub per_dataset: Vec<(String, f64)>,
    /// Unweighted mean over datasets.
    pub mean: f64,
}

/// Mean over datasets of the mean per-window NLL, each window's NLL being the
/// average over its `P` target steps in standardized space.
pub fn validation_loss(model: &Model, splits: &[DatasetSplits]) -> Result<ValidationReport> {
    let cfg = model.config();
    let scaler = scaler_registry().get(&cfg.scaler)?;
    let (l, c) = (cfg.lag_set.max_lag(), cfg.context_length);
    let mut per_dataset = Vec::new();
    for split in splits {
        if split.validation.is_empty() {
            log::warn!("{}: no validation windows; skipped", split.name);
            continue;
        }
        let p = split.prediction_length;
        let t = c + p;
        let mut total = 0.0;
        for chunk in split.validation.chunks(EVAL_CHUNK) {
            let mut feats = Vec::new();
            let mut targets = Vec::new();
            for w in chunk {
                let window = Window::ending_at(&split.series[w.item], w.end, l + t);
                let enc = encode_window(&window, &cfg.lag_set, c, scaler.as_ref())?;
                feats.extend(model.features(&enc.tokens));
                targets.extend(enc.tokens.iter().map(|tok| tok.target));
            }
            let g = Graph::new();
            let params = model.bind_constants(&g);
            let inputs = g.constant(Tensor::new([chunk.len(), t, cfg.token_dim()], feats)?);
            let raw = model.forward(&g, &params, inputs, None)?.value();
            for (k, row) in raw.data().chunks(3 * t).enumerate() {
                let nll: f64 = (c..t)
                    .map(|i| {
                        let r = &row[3 * i..3 * i + 3];
                        constrain([r[0], r[1], r[2]]).nll(targets[k * t + i])
                    })
                    .sum();
                total += nll / p as f64;
            }
        }
        per_dataset.push((split.name.clone(), total / split.validation.len() as f64));
    }
    if per_dataset.is_empty() {
        return Err(Error::InvalidArgument("no dataset has validation windows".into()));
    }
    let mean = per_dataset.iter().map(|(_, v)| v).sum::<f64>() / per_dataset.len() as f64;
    Ok(ValidationReport { per_dataset, mean })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_nll: f64,
    pub validation: ValidationReport,
    pub wall_time_s: f64,
}

pub fn write_log_header(out: &mut dyn Write, datasets: &[String]) -> std::io::Result<()> {
    let cols: Vec<String> = datasets.iter().map(|d| format!("val_nll[{d}]")).collect();
    writeln!(out, "epoch,train_nll,{},val_nll_mean,wall_time_s", cols.join(","))
}

impl EpochRecord {
    pub fn write_csv(&self, out: &mut dyn Write) -> std::io::Result<()> {
        let vals: Vec<String> = self
            .validation
            .per_dataset
            .iter()
            .map(|(_, v)| format!("{v:.6}"))
            .collect();
        writeln!(
            out,
            "{},{:.6},{},{:.6},{:.3}",
            self.epoch,
            self.train_nll,
            vals.join(","),
            self.validation.mean,
            self.wall_time_s
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochRecord>,
}

struct Batch {
    features: Vec<f64>,
    targets: Vec<f64>,
    weights: Vec<f64>,
    size: usize,
}

fn encode_batch(
    model: &Model,
    windows: &[Window],
    scaler: &dyn Scaler,
    loss_on_padded: bool,
) -> Result<Batch> {
    let cfg = model.config();
    let mut batch = Batch {
        features: Vec::new(),
        targets: Vec::new(),
        weights: Vec::new(),
        size: windows.len(),
    };
    for w in windows {
        let enc = encode_window(w, &cfg.lag_set, cfg.context_length, scaler)?;
        batch.features.extend(model.features(&enc.tokens));
        for (tok, i) in enc.tokens.iter().zip(cfg.lag_set.max_lag()..) {
            batch.targets.push(tok.target);
            let usable = if loss_on_padded { w.observed[i] } else { tok.fully_observed };
            batch.weights.push(if usable { 1.0 } else { 0.0 });
        }
    }
    Ok(batch)
}

fn non_finite(err: Error, epoch: usize, batch: usize, windows: &[Window], names: &[String]) -> Error {
    match err {
        Error::Tensor(TensorError::NonFinite { .. }) | Error::Tensor(TensorError::Domain { .. }) => {
            let mut ds: Vec<&str> = windows.iter().map(|w| names[w.dataset].as_str()).collect();
            ds.sort_unstable();
            ds.dedup();
            Error::NonFinite {
                what: "loss",
                epoch,
                batch,
                datasets: ds.join(","),
            }
        }
        other => other,
    }
}

/// One optimizer step; returns the summed NLL and the number of positions.
fn train_step(
    model: &mut Model,
    opt: &mut Adam,
    batch: &Batch,
    lr: f64,
    dropout_rng: &mut ChaCha8Rng,
) -> Result<(f64, f64)> {
    let weight: f64 = batch.weights.iter().sum();
    if weight == 0.0 {
        return Ok((0.0, 0.0));
    }
    let din = model.config().token_dim();
    let t = batch.targets.len() / batch.size;
    let g = Graph::new();
    let params = model.bind(&g);
    let inputs = g.constant(Tensor::new([batch.size, t, din], batch.features.clone())?);
    let raw = model
        .forward(&g, &params, inputs, Some(dropout_rng))?
        .reshape(&[batch.size * t, 3])?;
    let total = weighted_nll(&g, raw, &batch.targets, &batch.weights)?;
    let summed = total.value().item();
    let loss = total.mul_scalar(1.0 / weight)?;
    let grads = g.backward(loss)?;
    let grads: Vec<Tensor> = params
        .iter()
        .map(|p| grads.get(*p).cloned().expect("every parameter has a gradient"))
        .collect();
    opt.step(model.params_mut(), &grads, lr).map_err(|_| {
        Error::Tensor(TensorError::NonFinite { op: "gradient" })
    })?;
    Ok((summed, weight))
}

struct RunSpec<'a> {
    mode: &'static str,
    tokens: usize,
    sampler: CorpusSampler,
    splits: &'a [DatasetSplits],
    names: Vec<String>,
}

fn run(mut model: Model, spec: RunSpec<'_>, cfg: &TrainConfig, mut log: Option<&mut dyn Write>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let RunSpec {
        mode,
        tokens,
        mut sampler,
        splits,
        names,
    } = spec;
    let mcfg = model.config().clone();
    let scaler = scaler_registry().get(&mcfg.scaler)?;
    let schedule = schedule_registry().get(&cfg.lr_schedule)?;
    let mut policy = AugmentationPolicy::new(cfg)?;
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    dropout_rng.set_stream(DROPOUT_STREAM);
    let mut opt = Adam::new(model.params(), cfg.weight_decay);
    let mut stopper = EarlyStopping::new(cfg.early_stop_patience);
    let history_len = mcfg.lag_set.max_lag();
    let window_len = history_len + tokens;
    let started = Instant::now();

    if let Some(out) = log.as_deref_mut() {
        let val_names: Vec<String> = splits
            .iter()
            .filter(|s| !s.validation.is_empty())
            .map(|s| s.name.clone())
            .collect();
        write_log_header(out, &val_names).map_err(|e| Error::io("training log", e))?;
    }

    let mut best = model.clone();
    let mut history = Vec::new();
    for epoch in 1..=cfg.max_epochs {
        let lr = schedule.lr(cfg.learning_rate, epoch - 1, cfg.max_epochs);
        let (mut nll_sum, mut weight_sum) = (0.0, 0.0);
        let mut remaining = cfg.windows_per_epoch;
        let mut batch_idx = 0;
        while remaining > 0 {
            let size = remaining.min(cfg.batch_size);
            remaining -= size;
            batch_idx += 1;
            let mut windows = (0..size)
                .map(|_| sampler.sample_window(window_len, history_len))
                .collect::<Result<Vec<_>>>()?;
            policy.apply(&mut windows)?;
            let batch = encode_batch(&model, &windows, scaler.as_ref(), cfg.loss_on_padded)?;
            let (s, w) = train_step(&mut model, &mut opt, &batch, lr, &mut dropout_rng)
                .map_err(|e| non_finite(e, epoch, batch_idx, &windows, &names))?;
            if !s.is_finite() {
                return Err(non_finite(
                    Error::Tensor(TensorError::NonFinite { op: "loss" }),
                    epoch,
                    batch_idx,
                    &windows,
                    &names,
                ));
            }
            nll_sum += s;
            weight_sum += w;
        }
        let validation = validation_loss(&model, splits)?;
        let record = EpochRecord {
            epoch,
            train_nll: if weight_sum > 0.0 { nll_sum / weight_sum } else { f64::NAN },
            validation,
            wall_time_s: started.elapsed().as_secs_f64(),
        };
        if let Some(out) = log.as_deref_mut() {
            record.write_csv(out).map_err(|e| Error::io("training log", e))?;
        }
        log::info!(
            "{mode} epoch {epoch}: train {:.4} val {:.4}",
            record.train_nll,
            record.validation.mean
        );
        let progress = stopper.observe(epoch, record.validation.mean);
        history.push(record);
        match progress {
            Progress::Improved => best = model.clone(),
            Progress::Stalled => {}
            Progress::Stop => break,
        }
    }
    let training = TrainingMeta {
        mode: mode.into(),
        seed: cfg.seed,
        epochs_run: history.len(),
        best_epoch: stopper.best_epoch,
        best_val_loss: stopper.best.is_finite().then_some(stopper.best),
        datasets: names,
    };
    Ok(TrainOutcome {
        checkpoint: Checkpoint { model: best, training },
        history,
    })
}

/// Pretrains a freshly initialised model on the training splits of `datasets`,
/// early-stopping on the mean validation loss over all of them.
pub fn pretrain(
    model_config: &ModelConfig,
    datasets: &[Dataset],
    cfg: &TrainConfig,
    log: Option<&mut dyn Write>,
) -> Result<TrainOutcome> {
    let model = Model::init(model_config.clone(), cfg.seed)?;
    let splits: Vec<DatasetSplits> = datasets.iter().map(|d| make_splits(d, SplitMode::Pretrain)).collect();
    let sampler = CorpusSampler::new(splits.iter().map(|s| s.train.clone()).collect(), cfg.seed)?;
    let spec = RunSpec {
        mode: "pretrain",
        tokens: model_config.context_length,
        sampler,
        splits: &splits,
        names: datasets.iter().map(|d| d.name.clone()).collect(),
    };
    run(model, spec, cfg, log)
}

/// Continues training `checkpoint` on one dataset with windows of `L + C + P`
/// points. With `max_epochs == 0` the checkpoint is returned unchanged.
pub fn finetune(
    checkpoint: &Checkpoint,
    dataset: &Dataset,
    cfg: &TrainConfig,
    log: Option<&mut dyn Write>,
) -> Result<TrainOutcome> {
    if cfg.max_epochs == 0 {
        return Ok(TrainOutcome {
            checkpoint: checkpoint.clone(),
            history: Vec::new(),
        });
    }
    let splits = vec![make_splits(dataset, SplitMode::Finetune)];
    let sampler = CorpusSampler::new(vec![splits[0].train.clone()], cfg.seed)?;
    let spec = RunSpec {
        mode: "finetune",
        tokens: checkpoint.model.config().context_length + dataset.prediction_length,
        sampler,
        splits: &splits,
        names: vec![dataset.name.clone()],
    };
    run(checkpoint.model.clone(), spec, cfg, log)
}
