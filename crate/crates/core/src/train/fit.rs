use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::one_hot;
use crate::nn::{checkpoint, Mode, Network, NetworkSpec};
use crate::tensor::Tensor;
use crate::train::adam::{AdamConfig, AdamState};
use crate::train::data::{augment, split_dataset, Sample};
use crate::train::loss::{weighted_cross_entropy, ClassWeights};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Training-to-validation ratio.
    pub split_ratio: [u32; 2],
    pub class_weights: ClassWeights,
    pub augment: bool,
    /// Stop after this many optimizer steps, if set.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            lr: 1e-4,
            epochs: 10,
            seed: 0,
            split_ratio: [3, 1],
            class_weights: ClassWeights::default(),
            augment: true,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.split_ratio.contains(&0) {
            return Err(Error::Config("split_ratio components must be positive".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("invalid learning rate {}", self.lr)));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml(s: &str) -> Result<TrainConfig> {
        let cfg: TrainConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-pixel loss over the epoch's training batches.
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub train_acc: f64,
    pub val_acc: Option<f64>,
}

pub struct TrainOutcome {
    /// Best-validation network, or the final one without a validation set.
    pub network: Network,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
    pub steps: usize,
}

/// Mean per-pixel loss and pixel accuracy in evaluation mode.
pub fn evaluate(net: &Network, samples: &[Sample], weights: &ClassWeights, batch_size: usize) -> Result<(f64, f64)> {
    let mut sum = 0.0;
    let mut correct = 0;
    let mut pixels = 0;
    let classes = net.spec().classes;
    for chunk in samples.chunks(batch_size.max(1)) {
        let batch: Vec<&Sample> = chunk.iter().collect();
        let (x, y) = assemble(&batch, classes)?;
        let probs = net.predict(&x)?;
        let out = weighted_cross_entropy(&probs, &y, weights)?;
        sum += out.sum;
        correct += out.correct;
        pixels += out.pixels;
    }
    if pixels == 0 {
        return Ok((0.0, 0.0));
    }
    Ok((sum / pixels as f64, correct as f64 / pixels as f64))
}

fn assemble(samples: &[&Sample], classes: usize) -> Result<(Tensor, Tensor)> {
    let images: Vec<&Tensor> = samples.iter().map(|s| &s.image).collect();
    let onehots = samples
        .iter()
        .map(|s| one_hot(&s.labels, classes))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Tensor> = onehots.iter().collect();
    Ok((Tensor::stack_batch(&images)?, Tensor::stack_batch(&refs)?))
}

/// Trains `net` on `train` with Adam, evaluating on `val` after each epoch.
/// The best-validation model is written to `checkpoint_dir` when given.
pub fn fit(
    config: &TrainConfig,
    mut net: Network,
    train: &[Sample],
    val: &[Sample],
    checkpoint_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let classes = net.spec().classes;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0f_ba7c4);
    let adam_cfg = AdamConfig {
        lr: config.lr,
        ..AdamConfig::default()
    };
    let mut adam = AdamState::new(adam_cfg, &net.params());
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, Network)> = None;
    let mut steps = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();
    'epochs: for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        net.set_mode(Mode::Train);
        let (mut loss_sum, mut correct, mut pixels) = (0.0, 0usize, 0usize);
        for chunk in order.chunks(config.batch_size) {
            if config.max_steps.is_some_and(|m| steps >= m) {
                break;
            }
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &train[i]).collect();
            let (x, y) = assemble(&batch, classes)?;
            let probs = net.forward(&x)?;
            let out = weighted_cross_entropy(&probs, &y, &config.class_weights)?;
            if !out.sum.is_finite() {
                return Err(Error::NonFinite(format!("training loss at epoch {epoch}")));
            }
            let grad = out.grad.mul(1.0 / out.pixels as f64)?;
            net.backward_logits(&grad)?;
            adam.step(&mut net.params_mut())?;
            steps += 1;
            loss_sum += out.sum;
            correct += out.correct;
            pixels += out.pixels;
        }
        if pixels == 0 {
            break 'epochs;
        }
        let (val_loss, val_acc) = if val.is_empty() {
            (None, None)
        } else {
            let (l, a) = evaluate(&net, val, &config.class_weights, config.batch_size)?;
            (Some(l), Some(a))
        };
        let record = EpochRecord {
            epoch: epoch + 1,
            train_loss: loss_sum / pixels as f64,
            val_loss,
            train_acc: correct as f64 / pixels as f64,
            val_acc,
        };
        log::info!(
            "epoch {:>3}  train_loss {:.5}  train_acc {:.4}  val_loss {}  val_acc {}",
            record.epoch,
            record.train_loss,
            record.train_acc,
            val_loss.map_or("-".into(), |v| format!("{v:.5}")),
            val_acc.map_or("-".into(), |v| format!("{v:.4}")),
        );
        history.push(record);
        if let Some(vl) = val_loss {
            if best.as_ref().is_none_or(|(b, _, _)| vl < *b) {
                let mut snapshot = net.clone();
                snapshot.set_mode(Mode::Eval);
                if let Some(dir) = checkpoint_dir {
                    checkpoint::save(&snapshot, dir)?;
                }
                best = Some((vl, epoch + 1, snapshot));
            }
        }
    }
    net.set_mode(Mode::Eval);
    let (network, best_epoch) = match best {
        Some((_, e, n)) => (n, e),
        None => {
            if let Some(dir) = checkpoint_dir {
                checkpoint::save(&net, dir)?;
            }
            (net, history.len())
        }
    };
    Ok(TrainOutcome {
        network,
        best_epoch,
        history,
        steps,
    })
}

/// Splits `dataset`, augments the training part when enabled, initializes a
/// network from `spec` and trains it.
pub fn train_loop(
    config: &TrainConfig,
    spec: &NetworkSpec,
    dataset: Vec<Sample>,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let (train, val) = split_dataset(dataset, (config.split_ratio[0], config.split_ratio[1]), config.seed)?;
    let train = if config.augment {
        let mut out = Vec::with_capacity(train.len() * 4);
        for s in &train {
            out.extend(augment(s)?);
        }
        out
    } else {
        train
    };
    log::info!("training on {} patches, validating on {}", train.len(), val.len());
    let net = Network::build(spec, config.seed)?;
    fit(config, net, &train, &val, checkpoint_dir)
}

/// Writes `epoch,train_loss,val_loss,train_acc,val_acc` rows; missing
/// validation values are left empty.
pub fn write_history_csv(history: &[EpochRecord], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(["epoch", "train_loss", "val_loss", "train_acc", "val_acc"])
        .map_err(csv_err)?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
    for r in history {
        w.write_record([
            r.epoch.to_string(),
            r.train_loss.to_string(),
            opt(r.val_loss),
            r.train_acc.to_string(),
            opt(r.val_acc),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
