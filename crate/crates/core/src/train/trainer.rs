use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::metrics::{metrics_from_confusion, rmse_clamped, Confusion, Metrics};
use super::optim::{adamw_step, lr_at, AdamState, AdamWParams};
use super::splits::{holdout_split, make_splits, Protocol};
use crate::alignment::{AlignedPair, Label};
use crate::error::{Error, Result};
use crate::model::{softmax, FusionModel, ModelConfig, Task, Trace};
use crate::rng::{derive_indexed, indexed_rng};
use crate::tensor::Tape;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr_peak: f64,
    pub weight_decay: f64,
    pub warmup_epochs: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    /// Epochs without validation improvement before stopping; `None`
    /// disables early stopping.
    pub early_stop_patience: Option<usize>,
    /// Share of each training fold held out for early stopping.
    pub val_fraction: f64,
    /// Fixed schedule length under leave-one-subject-out.
    pub loso_epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::full_scale()
    }
}

impl TrainConfig {
    pub fn full_scale() -> Self {
        TrainConfig {
            lr_peak: 2e-5,
            weight_decay: 0.1,
            warmup_epochs: 20,
            max_epochs: 200,
            batch_size: 32,
            early_stop_patience: Some(15),
            val_fraction: 0.15,
            loso_epochs: 60,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
        }
    }

    /// Short schedule for the desk-scale model. The larger peak rate
    /// compensates for training from scratch rather than on frozen
    /// pretrained features.
    pub fn desk() -> Self {
        TrainConfig {
            lr_peak: 1e-3,
            warmup_epochs: 4,
            max_epochs: 40,
            batch_size: 16,
            loso_epochs: 40,
            ..TrainConfig::full_scale()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 || self.batch_size == 0 || self.loso_epochs == 0 {
            return Err(Error::contract("max_epochs, loso_epochs and batch_size must be positive"));
        }
        if self.warmup_epochs >= self.max_epochs {
            return Err(Error::contract(format!(
                "warmup_epochs {} must be below max_epochs {}",
                self.warmup_epochs, self.max_epochs
            )));
        }
        if !(self.lr_peak >= 0.0 && self.weight_decay >= 0.0 && self.eps > 0.0) {
            return Err(Error::contract("learning rate, weight decay and eps must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::contract("betas must lie in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::contract("val_fraction must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn adamw(&self) -> AdamWParams {
        AdamWParams {
            weight_decay: self.weight_decay,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_accuracy: Option<f64>,
}

pub struct TrainOutcome {
    pub model: FusionModel<f32>,
    pub history: Vec<EpochRecord>,
    /// Epoch whose weights were returned.
    pub best_epoch: usize,
}

/// Trains on `data[train_idx]` for up to `epochs` epochs with a per-step
/// warmup-then-cosine schedule. With a non-empty `val_idx` and a patience
/// configured, the weights of the best validation epoch are returned
/// (accuracy first, then lower loss); otherwise the final weights.
pub fn train(
    mut model: FusionModel<f32>,
    data: &[AlignedPair],
    train_idx: &[usize],
    val_idx: &[usize],
    epochs: usize,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_idx.is_empty() {
        return Err(Error::contract("empty training split"));
    }
    if epochs == 0 {
        return Err(Error::contract("training for zero epochs"));
    }
    if let Some(&bad) = train_idx.iter().chain(val_idx).find(|&&i| i >= data.len()) {
        return Err(Error::contract(format!("split index {bad} outside {} subjects", data.len())));
    }
    if val_idx.iter().any(|v| train_idx.contains(v)) {
        return Err(Error::contract("training and validation splits overlap"));
    }
    let hp = cfg.adamw();
    let warmup = (cfg.warmup_epochs as f64).min(epochs as f64 - 1.0).max(0.0);
    let mut state = AdamState::new(model.params().tensors());
    let steps_per_epoch = train_idx.len().div_ceil(cfg.batch_size);
    let early = cfg.early_stop_patience.filter(|_| !val_idx.is_empty());

    let mut history = Vec::with_capacity(epochs);
    let mut best: Option<(f64, f64, usize, FusionModel<f32>)> = None;
    let mut order = train_idx.to_vec();
    let mut global_step: u64 = 0;
    for epoch in 0..epochs {
        order.copy_from_slice(train_idx);
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut indexed_rng(cfg.seed, "shuffle", epoch as u64));
        let mut loss_sum = 0.0;
        let mut lr = 0.0;
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            let t = epoch as f64 + (step as f64 + 0.5) / steps_per_epoch as f64;
            lr = lr_at(t, cfg.lr_peak, warmup, epochs as f64);
            let mut tape = Tape::<f32>::new();
            tape.set_dropout_seed(derive_indexed(cfg.seed, "dropout", global_step));
            let bound = model.bind(&mut tape, true);
            let mut losses = Vec::with_capacity(batch.len());
            for &i in batch {
                let out = model.forward_pair(&mut tape, &bound, &data[i], true, &mut Trace::default())?;
                losses.push(model.sample_loss(&mut tape, out, &data[i])?);
            }
            let stacked = tape.concat_rows(&losses)?;
            let loss = tape.mean_all(stacked)?;
            let value = tape.value(loss).item() as f64;
            if !value.is_finite() {
                return Err(Error::Numerical(format!("loss is {value} at epoch {epoch}, step {step}")));
            }
            loss_sum += value * batch.len() as f64;
            let grads = tape.backward(loss)?;
            let g: Vec<_> = bound.vars.iter().map(|&v| grads.wrt(v)).collect();
            adamw_step(model.params_mut().tensors_mut(), &g, &mut state, lr, &hp).map_err(|e| match e {
                Error::Numerical(m) => Error::Numerical(format!("epoch {epoch}, step {step}: {m}")),
                other => other,
            })?;
            global_step += 1;
        }
        let mut rec = EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum / train_idx.len() as f64,
            val_loss: None,
            val_accuracy: None,
        };
        if let Some(patience) = early {
            let ev = evaluate(&model, data, val_idx)?;
            let acc = match model.config().task {
                Task::Classify => ev.metrics.accuracy,
                Task::Regress => 0.0,
            };
            rec.val_loss = Some(ev.loss);
            rec.val_accuracy = Some(acc);
            let improved = match &best {
                None => true,
                Some((ba, bl, _, _)) => acc > *ba || (acc == *ba && ev.loss < *bl),
            };
            if improved {
                best = Some((acc, ev.loss, epoch, model.clone()));
            }
            history.push(rec);
            let best_epoch = best.as_ref().map_or(epoch, |b| b.2);
            if epoch - best_epoch >= patience {
                break;
            }
        } else {
            history.push(rec);
        }
    }
    Ok(match best {
        Some((_, _, best_epoch, m)) => TrainOutcome {
            model: m,
            history,
            best_epoch,
        },
        None => TrainOutcome {
            model,
            best_epoch: history.len() - 1,
            history,
        },
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub subject_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted: Option<Label>,
    /// Probability of the AD class.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prob_ad: Option<f64>,
    /// Regression output clamped to [0, 30].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mmse_pred: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mmse: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub predictions: Vec<Prediction>,
    pub confusion: Confusion,
    pub metrics: Metrics,
    /// Mean task loss over the labelled subjects.
    pub loss: f64,
}

/// Trains one model on every subject, as a deployable final model: seed
/// `seed` initializes it, and a stratified validation holdout is used for
/// early stopping when a patience is configured.
pub fn fit(data: &[AlignedPair], model_cfg: &ModelConfig, train_cfg: &TrainConfig, seed: u64) -> Result<TrainOutcome> {
    let all: Vec<usize> = (0..data.len()).collect();
    let labels: Vec<Option<Label>> = data.iter().map(|p| p.label).collect();
    let tcfg = TrainConfig {
        seed: derive_indexed(seed, "final", 0),
        ..train_cfg.clone()
    };
    let (tr, val) = if tcfg.early_stop_patience.is_some() && tcfg.val_fraction > 0.0 {
        holdout_split(&all, &labels, tcfg.val_fraction, tcfg.seed)
    } else {
        (all, Vec::new())
    };
    let model = FusionModel::new(ModelConfig {
        seed,
        ..model_cfg.clone()
    })?;
    train(model, data, &tr, &val, tcfg.max_epochs, &tcfg)
}

/// Eval-mode predictions and metrics for `data[idx]`.
pub fn evaluate(model: &FusionModel<f32>, data: &[AlignedPair], idx: &[usize]) -> Result<Evaluation> {
    if idx.is_empty() {
        return Err(Error::contract("empty evaluation set"));
    }
    let task = model.config().task;
    let mut predictions = Vec::with_capacity(idx.len());
    let mut confusion = Confusion::default();
    let mut reg = Vec::new();
    let (mut loss, mut counted) = (0.0, 0usize);
    for &i in idx {
        let pair = data
            .get(i)
            .ok_or_else(|| Error::contract(format!("evaluation index {i} outside {} subjects", data.len())))?;
        let out = model.predict(pair)?;
        let mut p = Prediction {
            subject_id: pair.subject_id.clone(),
            label: pair.label,
            predicted: None,
            prob_ad: None,
            mmse_pred: None,
            mmse: pair.mmse,
        };
        match task {
            Task::Classify => {
                let probs = softmax(&out);
                let predicted = if out[1] > out[0] {
                    Label::Alzheimers
                } else {
                    Label::HealthyControl
                };
                p.predicted = Some(predicted);
                p.prob_ad = Some(probs[1]);
                if let Some(l) = pair.label {
                    confusion.record(l, predicted);
                    loss -= probs[l.index()].max(f64::MIN_POSITIVE).ln();
                    counted += 1;
                }
            }
            Task::Regress => {
                p.mmse_pred = Some(out[0].clamp(0.0, 30.0));
                if let Some(m) = pair.mmse {
                    reg.push((out[0], m));
                    loss += (out[0] - m).powi(2);
                    counted += 1;
                }
            }
        }
        predictions.push(p);
    }
    let mut metrics = metrics_from_confusion(&confusion);
    metrics.rmse = rmse_clamped(&reg);
    if task == Task::Regress {
        metrics.n = reg.len();
    }
    Ok(Evaluation {
        predictions,
        confusion,
        metrics,
        loss: if counted == 0 { 0.0 } else { loss / counted as f64 },
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub seed: u64,
    pub fold: usize,
    pub test_subjects: Vec<String>,
    pub metrics: Metrics,
    pub confusion: Confusion,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub train_loss: Vec<f64>,
    pub predictions: Vec<Prediction>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub fold_accuracy: Vec<f64>,
    pub metrics: Metrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: Protocol,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub folds: Vec<FoldResult>,
    pub per_seed: Vec<SeedSummary>,
    /// Metrics of the confusion matrix pooled over every fold and seed.
    pub aggregate: Metrics,
}

impl EvalReport {
    /// Fold accuracies of all seeds in (seed, fold) order, the sample
    /// used by the paired significance test.
    pub fn accuracy_samples(&self) -> Vec<f64> {
        self.folds.iter().map(|f| f.metrics.accuracy).collect()
    }
}

/// Maximum number of folds trained concurrently: `CGNA_THREADS` if set,
/// otherwise the available parallelism.
pub fn fold_threads() -> usize {
    std::env::var("CGNA_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs the protocol once per seed. Each fold re-initializes the model from
/// its seed, so folds are independent and may run concurrently; results
/// are collected in (seed, fold) order.
pub fn cross_validate(
    data: &[AlignedPair],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    protocol: Protocol,
    seeds: &[u64],
) -> Result<EvalReport> {
    model_cfg.validate()?;
    train_cfg.validate()?;
    if seeds.is_empty() {
        return Err(Error::contract("no seeds given"));
    }
    let roster: Vec<(String, Option<Label>)> = data.iter().map(|p| (p.subject_id.clone(), p.label)).collect();
    let labels: Vec<Option<Label>> = roster.iter().map(|r| r.1).collect();
    let mut jobs = Vec::new();
    for &seed in seeds {
        let plan = make_splits(&roster, protocol, seed)?;
        plan.check_isolation()?;
        for fold in 0..plan.n_folds {
            jobs.push((seed, fold, plan.train(fold), plan.test(fold)));
        }
    }

    let run = |seed: u64, fold: usize, train_all: &[usize], test: &[usize]| -> Result<FoldResult> {
        let mcfg = ModelConfig {
            seed,
            ..model_cfg.clone()
        };
        let tcfg = TrainConfig {
            seed: derive_indexed(seed, "fold", fold as u64),
            ..train_cfg.clone()
        };
        let (tr, val, epochs) = match protocol {
            Protocol::KFold(_) if tcfg.early_stop_patience.is_some() && tcfg.val_fraction > 0.0 => {
                let (tr, val) = holdout_split(train_all, &labels, tcfg.val_fraction, tcfg.seed);
                (tr, val, tcfg.max_epochs)
            }
            Protocol::KFold(_) => (train_all.to_vec(), Vec::new(), tcfg.max_epochs),
            Protocol::Loso => (train_all.to_vec(), Vec::new(), tcfg.loso_epochs),
        };
        let outcome = train(FusionModel::new(mcfg)?, data, &tr, &val, epochs, &tcfg)?;
        let ev = evaluate(&outcome.model, data, test)?;
        Ok(FoldResult {
            seed,
            fold,
            test_subjects: test.iter().map(|&i| data[i].subject_id.clone()).collect(),
            metrics: ev.metrics,
            confusion: ev.confusion,
            epochs_run: outcome.history.len(),
            best_epoch: outcome.best_epoch,
            train_loss: outcome.history.iter().map(|h| h.train_loss).collect(),
            predictions: ev.predictions,
        })
    };

    let results: Vec<Mutex<Option<Result<FoldResult>>>> = jobs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let threads = fold_threads().min(jobs.len()).max(1);
    std::thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(|| loop {
                let j = next.fetch_add(1, Ordering::SeqCst);
                let Some((seed, fold, tr, te)) = jobs.get(j) else { break };
                let r = run(*seed, *fold, tr, te).map_err(|e| match e {
                    Error::Numerical(m) => Error::Numerical(format!("seed {seed}, fold {fold}: {m}")),
                    other => other,
                });
                *results[j].lock().expect("result slot") = Some(r);
            });
        }
    });
    let folds = results
        .into_iter()
        .map(|m| m.into_inner().expect("result slot").expect("every job ran"))
        .collect::<Result<Vec<_>>>()?;

    let summarize = |fs: &[&FoldResult]| -> Metrics {
        let mut c = Confusion::default();
        let mut reg = Vec::new();
        for f in fs {
            c.merge(&f.confusion);
            reg.extend(f.predictions.iter().filter_map(|p| Some((p.mmse_pred?, p.mmse?))));
        }
        let mut m = metrics_from_confusion(&c);
        m.rmse = rmse_clamped(&reg);
        m
    };
    let per_seed = seeds
        .iter()
        .map(|&seed| {
            let fs: Vec<&FoldResult> = folds.iter().filter(|f| f.seed == seed).collect();
            SeedSummary {
                seed,
                fold_accuracy: fs.iter().map(|f| f.metrics.accuracy).collect(),
                metrics: summarize(&fs),
            }
        })
        .collect();
    let aggregate = summarize(&folds.iter().collect::<Vec<_>>());
    Ok(EvalReport {
        protocol,
        model: model_cfg.clone(),
        train: train_cfg.clone(),
        folds,
        per_seed,
        aggregate,
    })
}
