use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::corpus::{EncodedShard, MaskingConfig, MlmBatch};
use crate::error::{Error, Result};
use crate::rng;

use super::flops::flops_estimate;
use super::{FreezeMask, LayeredLm};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub steps_per_epoch: usize,
    pub context_radius: usize,
    pub mask_rate: f64,
    /// Seed of the batch-sampling stream.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.5,
            local_epochs: 1,
            batch_size: 32,
            steps_per_epoch: 25,
            context_radius: 8,
            mask_rate: 0.15,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!(
                "learning_rate {} must be positive",
                self.learning_rate
            )));
        }
        if self.local_epochs == 0 || self.batch_size == 0 || self.steps_per_epoch == 0 {
            return Err(Error::invalid(
                "local_epochs, batch_size and steps_per_epoch must be at least 1",
            ));
        }
        self.masking().validate()
    }

    pub fn masking(&self) -> MaskingConfig {
        MaskingConfig {
            context_radius: self.context_radius,
            mask_rate: self.mask_rate,
            ..MaskingConfig::default()
        }
    }

    pub fn window(&self) -> usize {
        2 * self.context_radius + 1
    }

    pub fn total_steps(&self) -> usize {
        self.local_epochs * self.steps_per_epoch
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalTrainStats {
    /// Seconds.
    pub wall_time: f64,
    pub forward_flops: u64,
    pub backward_flops: u64,
    pub mean_loss: f64,
    pub steps: usize,
}

/// Run `local_epochs × steps_per_epoch` SGD steps on a copy of `model`.
pub fn train_local(
    model: &LayeredLm,
    shard: &EncodedShard,
    mask: &FreezeMask,
    config: &TrainConfig,
) -> Result<(LayeredLm, LocalTrainStats)> {
    config.validate()?;
    mask.validate(model.dims().layers)?;
    if shard.vocab_size() != model.dims().vocab {
        return Err(Error::ShapeMismatch(format!(
            "shard encoded for vocab {}, model has {}",
            shard.vocab_size(),
            model.dims().vocab
        )));
    }
    let started = Instant::now();
    let mut model = model.clone();
    let mut stream = rng::stream(config.seed);
    let masking = config.masking();
    let steps = config.total_steps();
    let mut loss_sum = 0.0;
    let mut backward_flops = 0;
    for _ in 0..steps {
        let batch = shard.sample_batch(&mut stream, config.batch_size, &masking)?;
        let (loss, cache) = model.forward(&batch)?;
        let grads = model.backward(&cache, mask)?;
        model.apply_update(&grads, mask, config.learning_rate)?;
        loss_sum += loss;
        backward_flops += grads.backward_flops;
    }
    let forward_flops = flops_estimate(
        model.dims(),
        config.window(),
        mask,
        config.batch_size,
        steps,
    )
    .forward;
    Ok((
        model,
        LocalTrainStats {
            wall_time: started.elapsed().as_secs_f64(),
            forward_flops,
            backward_flops,
            mean_loss: loss_sum / steps as f64,
            steps,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub batches: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub context_radius: usize,
    pub mask_rate: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            batches: 8,
            batch_size: 256,
            seed: 20_231_004,
            context_radius: 8,
            mask_rate: 0.15,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub mean_loss: f64,
    pub perplexity: f64,
}

/// Held-out batches drawn once from a fixed seed, so every evaluation of a
/// run sees identical masks.
#[derive(Debug, Clone)]
pub struct EvalSet {
    batches: Vec<MlmBatch>,
}

impl EvalSet {
    pub fn new(heldout: &EncodedShard, config: &EvalConfig) -> Result<Self> {
        if config.batches == 0 || config.batch_size == 0 {
            return Err(Error::invalid(
                "eval batches and batch_size must be positive",
            ));
        }
        let masking = MaskingConfig {
            context_radius: config.context_radius,
            mask_rate: config.mask_rate,
            ..MaskingConfig::default()
        };
        let mut stream = rng::stream(config.seed);
        let batches = (0..config.batches)
            .map(|_| heldout.sample_batch(&mut stream, config.batch_size, &masking))
            .collect::<Result<_>>()?;
        Ok(EvalSet { batches })
    }

    pub fn evaluate(&self, model: &LayeredLm) -> Result<EvalResult> {
        let mut total = 0.0;
        for b in &self.batches {
            total += model.forward(b)?.0;
        }
        let mean_loss = total / self.batches.len() as f64;
        Ok(EvalResult {
            mean_loss,
            perplexity: mean_loss.exp(),
        })
    }
}

/// Convenience wrapper building the [`EvalSet`] on the fly.
pub fn eval_loss(
    model: &LayeredLm,
    heldout: &EncodedShard,
    config: &EvalConfig,
) -> Result<EvalResult> {
    EvalSet::new(heldout, config)?.evaluate(model)
}
