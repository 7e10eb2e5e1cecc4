//! Batch-size-1 Adam training with per-epoch validation and the three
//! retained checkpoints.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{loss_from_logits, LossWeights};
use super::net::Net;
use super::optim::Adam;
use super::{probabilities, sequence_inputs, ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::metrics::{dsc_from_counts, mean_std, MeanStd, EPSILON_SMOOTH};
use crate::reconstruct::threshold_slice;
use crate::sequence::{SliceSequence, SEQ_LEN};
use crate::volume::Slice2D;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub loss_weights: LossWeights,
    pub val_eval_threshold: f64,
    pub checkpoint_warmup_epoch: usize,
    pub shuffle_seed: u64,
}

impl TrainConfig {
    pub fn full() -> Self {
        TrainConfig {
            epochs: 150,
            batch_size: 1,
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            loss_weights: LossWeights::default(),
            val_eval_threshold: 0.5,
            checkpoint_warmup_epoch: 40,
            shuffle_seed: 0,
        }
    }

    pub fn desk() -> Self {
        TrainConfig {
            epochs: 30,
            checkpoint_warmup_epoch: 8,
            ..Self::full()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Parameter("epochs must be at least 1".into()));
        }
        if self.batch_size != 1 {
            return Err(Error::Parameter("only batch_size 1 is supported".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Parameter("learning rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Parameter("Adam betas must lie in [0, 1)".into()));
        }
        if !(self.val_eval_threshold > 0.0 && self.val_eval_threshold < 1.0) {
            return Err(Error::Parameter("validation threshold must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_dsc_mean: f64,
    pub val_dsc_std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    /// 1-based epoch after which the parameters were taken.
    pub epoch: usize,
    pub val_dsc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointSet {
    pub last: Checkpoint,
    pub best_val: Checkpoint,
    pub second_best_post_warmup: Checkpoint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub checkpoints: CheckpointSet,
    pub history: Vec<EpochRecord>,
    /// The runner-up checkpoint came from all epochs because fewer than two
    /// epochs followed the warm-up.
    pub second_best_fallback: bool,
}

/// Anything that maps a sequence to three probability maps.
pub trait Predictor {
    fn predict(&self, seq: &SliceSequence) -> Result<[Slice2D; SEQ_LEN]>;
}

fn sequence_dsc(maps: &[Slice2D], seq: &SliceSequence, th: f64) -> Result<f64> {
    let mut sum = 0.0;
    for (m, g) in maps.iter().zip(&seq.gtv) {
        let c = crate::metrics::counts(&threshold_slice(m, th), g)?;
        sum += dsc_from_counts(&c, EPSILON_SMOOTH);
    }
    Ok(sum / maps.len() as f64)
}

/// Mean ± std over sequences of the per-sequence DSC, itself the mean over
/// the three slices of `prob > th`.
pub fn validation_dsc(model: &impl Predictor, val: &[SliceSequence], th: f64) -> Result<MeanStd> {
    if val.is_empty() {
        return Err(Error::Empty("validation set".into()));
    }
    let per_seq = val
        .iter()
        .map(|s| sequence_dsc(&model.predict(s)?, s, th))
        .collect::<Result<Vec<f64>>>()?;
    Ok(mean_std(&per_seq).expect("nonempty"))
}

/// Keeps the two highest-scoring checkpoints; ties go to the earlier epoch.
#[derive(Default)]
struct TopTwo {
    best: Option<Checkpoint>,
    second: Option<Checkpoint>,
}

impl TopTwo {
    fn offer(&mut self, c: &Checkpoint) {
        let beats = |slot: &Option<Checkpoint>| slot.as_ref().is_none_or(|s| c.val_dsc > s.val_dsc);
        if beats(&self.best) {
            self.second = self.best.take();
            self.best = Some(c.clone());
        } else if beats(&self.second) {
            self.second = Some(c.clone());
        }
    }
}

pub fn train(
    train_seqs: &[SliceSequence],
    val_seqs: &[SliceSequence],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_seqs.is_empty() {
        return Err(Error::Empty("training set".into()));
    }
    if val_seqs.is_empty() {
        return Err(Error::Empty("validation set".into()));
    }
    let mut params = ModelParams::init(model_cfg)?;
    let net = Net::new(model_cfg);
    let size = model_cfg.image_size;
    let train_inputs = train_seqs
        .iter()
        .map(|s| sequence_inputs(s, size))
        .collect::<Result<Vec<_>>>()?;
    let val_inputs = val_seqs
        .iter()
        .map(|s| sequence_inputs(s, size))
        .collect::<Result<Vec<_>>>()?;

    let mut adam = Adam::new(net.n_params, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.shuffle_seed);
    let mut order: Vec<usize> = (0..train_seqs.len()).collect();
    let mut grad = vec![0.0; net.n_params];
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut overall = TopTwo::default();
    let mut post_warmup = TopTwo::default();
    let mut post_warmup_epochs = 0;
    let mut last = None;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut train_loss = 0.0;
        for &i in &order {
            let trace = net.forward(&params.values, &train_inputs[i]);
            let (l, dlogits) = loss_from_logits(&trace.logits, &train_seqs[i].gtv, cfg.loss_weights)?;
            if !l.total.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            train_loss += l.total;
            grad.iter_mut().for_each(|g| *g = 0.0);
            net.backward(&params.values, &mut grad, &trace, &dlogits);
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence { epoch });
            }
            adam.step(&mut params.values, &grad);
        }
        train_loss /= order.len() as f64;

        let mut val_loss = 0.0;
        let mut dsc = Vec::with_capacity(val_seqs.len());
        for (seq, inputs) in val_seqs.iter().zip(&val_inputs) {
            let trace = net.forward(&params.values, inputs);
            val_loss += loss_from_logits(&trace.logits, &seq.gtv, cfg.loss_weights)?.0.total;
            dsc.push(sequence_dsc(&probabilities(&trace.logits), seq, cfg.val_eval_threshold)?);
        }
        val_loss /= val_seqs.len() as f64;
        if !val_loss.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        let ms = mean_std(&dsc).expect("nonempty");
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_dsc_mean: ms.mean,
            val_dsc_std: ms.std,
        });

        let ck = Checkpoint {
            params: params.clone(),
            epoch,
            val_dsc: ms.mean,
        };
        overall.offer(&ck);
        if epoch > cfg.checkpoint_warmup_epoch {
            post_warmup.offer(&ck);
            post_warmup_epochs += 1;
        }
        last = Some(ck);
    }

    let last = last.expect("at least one epoch");
    let best_val = overall.best.clone().expect("at least one epoch");
    let (second, fallback) = if post_warmup_epochs >= 2 {
        (post_warmup.second, false)
    } else {
        (overall.second.or(overall.best), true)
    };
    Ok(TrainOutcome {
        checkpoints: CheckpointSet {
            last,
            best_val,
            second_best_post_warmup: second.expect("at least one epoch"),
        },
        history,
        second_best_fallback: fallback,
    })
}

pub const HISTORY_CSV_HEADER: &str = "epoch,train_loss,val_loss,val_dsc_mean,val_dsc_std";

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from(HISTORY_CSV_HEADER);
    out.push('\n');
    for r in history {
        let _ = writeln!(
            out,
            "{},{:.8},{:.8},{:.8},{:.8}",
            r.epoch, r.train_loss, r.val_loss, r.val_dsc_mean, r.val_dsc_std
        );
    }
    out
}
