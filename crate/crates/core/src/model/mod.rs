//! A layered masked-language model small enough to train by hand.
//!
//! Group 1 is a `V × d` embedding table, groups `2..N-1` are residual tanh
//! blocks `h ← h + tanh(W h + b)`, and group `N` projects to vocabulary
//! logits. The context window is mean-pooled (PAD excluded) into `h₀`.
//!
//! Group indices are 1-based everywhere in the public API, matching the
//! freeze schedule.

mod checkpoint;
mod flops;
mod nn;
mod train;

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub use flops::{flops_estimate, FlopCount};
pub use nn::{ForwardCache, Gradients};
pub use train::{
    eval_loss, train_local, EvalConfig, EvalResult, EvalSet, LocalTrainStats, TrainConfig,
};

const INIT_SCALE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelDims {
    /// Number of parameter groups `N` (≥ 3).
    pub layers: usize,
    pub dim: usize,
    pub vocab: usize,
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        if self.layers < 3 {
            return Err(Error::invalid(format!("layers {} < 3", self.layers)));
        }
        if self.dim < 1 {
            return Err(Error::invalid("dim must be at least 1"));
        }
        if self.vocab < 4 {
            return Err(Error::invalid(format!("vocab {} < 4", self.vocab)));
        }
        Ok(())
    }

    pub fn hidden_blocks(&self) -> usize {
        self.layers - 2
    }

    pub fn kind(&self, group: usize) -> GroupKind {
        if group == 1 {
            GroupKind::Embedding
        } else if group == self.layers {
            GroupKind::Output
        } else {
            GroupKind::Hidden
        }
    }

    /// `(weight_len, bias_len)` of a 1-based group.
    pub fn group_shape(&self, group: usize) -> (usize, usize) {
        match self.kind(group) {
            GroupKind::Embedding => (self.vocab * self.dim, 0),
            GroupKind::Hidden => (self.dim * self.dim, self.dim),
            GroupKind::Output => (self.dim * self.vocab, self.vocab),
        }
    }

    pub fn param_count(&self) -> usize {
        (1..=self.layers)
            .map(|g| {
                let (w, b) = self.group_shape(g);
                w + b
            })
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupKind {
    Embedding,
    Hidden,
    Output,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamGroup {
    /// Row-major weight matrix.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ParamGroup {
    fn zeros((w, b): (usize, usize)) -> Self {
        ParamGroup {
            weight: vec![0.0; w],
            bias: vec![0.0; b],
        }
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.weight.iter().chain(&self.bias)
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weight.iter_mut().chain(self.bias.iter_mut())
    }

    pub fn len(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Bitwise equality, distinguishing `0.0` from `-0.0`.
    pub fn bit_eq(&self, other: &ParamGroup) -> bool {
        self.len() == other.len()
            && self
                .values()
                .zip(other.values())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Set of frozen 1-based group indices.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FreezeMask(BTreeSet<usize>);

impl FreezeMask {
    pub fn none() -> Self {
        FreezeMask::default()
    }

    pub fn from_indices(ix: impl IntoIterator<Item = usize>) -> Self {
        FreezeMask(ix.into_iter().collect())
    }

    pub fn contains(&self, group: usize) -> bool {
        self.0.contains(&group)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    /// Indices must lie in `1..=N` and at least one group must stay trainable.
    pub fn validate(&self, layers: usize) -> Result<()> {
        if let Some(&bad) = self.0.iter().find(|&&g| g == 0 || g > layers) {
            return Err(Error::invalid(format!(
                "frozen group {bad} outside 1..={layers}"
            )));
        }
        if self.len() >= layers {
            return Err(Error::invalid(format!(
                "freezing {} of {layers} groups leaves nothing to train",
                self.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayeredLm {
    dims: ModelDims,
    groups: Vec<ParamGroup>,
}

impl LayeredLm {
    /// Weights uniform in `(-0.05, 0.05)`, biases zero.
    pub fn init(dims: ModelDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut rng = rng::stream(rng::derive_seed(&[seed, 0x1417]));
        let groups = (1..=dims.layers)
            .map(|g| {
                let mut p = ParamGroup::zeros(dims.group_shape(g));
                for w in &mut p.weight {
                    *w = rng.random_range(-INIT_SCALE..INIT_SCALE);
                }
                p
            })
            .collect();
        Ok(LayeredLm { dims, groups })
    }

    pub fn zeros(dims: ModelDims) -> Result<Self> {
        dims.validate()?;
        Ok(LayeredLm {
            dims,
            groups: (1..=dims.layers)
                .map(|g| ParamGroup::zeros(dims.group_shape(g)))
                .collect(),
        })
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    pub fn group(&self, group: usize) -> &ParamGroup {
        &self.groups[group - 1]
    }

    pub fn group_mut(&mut self, group: usize) -> &mut ParamGroup {
        &mut self.groups[group - 1]
    }

    pub fn groups(&self) -> &[ParamGroup] {
        &self.groups
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.groups
            .iter()
            .flat_map(|g| g.values().copied())
            .collect()
    }

    pub fn unflatten(dims: ModelDims, flat: &[f64]) -> Result<Self> {
        dims.validate()?;
        if flat.len() != dims.param_count() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} parameters, got {}",
                dims.param_count(),
                flat.len()
            )));
        }
        let mut model = LayeredLm::zeros(dims)?;
        for (dst, &src) in model
            .groups
            .iter_mut()
            .flat_map(|g| g.values_mut())
            .zip(flat)
        {
            *dst = src;
        }
        Ok(model)
    }

    pub fn bit_eq(&self, other: &LayeredLm) -> bool {
        self.dims == other.dims
            && self
                .groups
                .iter()
                .zip(&other.groups)
                .all(|(a, b)| a.bit_eq(b))
    }

    pub fn is_finite(&self) -> bool {
        self.groups
            .iter()
            .all(|g| g.values().all(|v| v.is_finite()))
    }

    fn check_same_shape(&self, other: &LayeredLm) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::ShapeMismatch(format!(
                "{:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        Ok(())
    }

    /// Plain SGD on the groups not in `mask`; frozen groups are left
    /// untouched even if `grads` carries values for them.
    pub fn apply_update(
        &mut self,
        grads: &Gradients,
        mask: &FreezeMask,
        learning_rate: f64,
    ) -> Result<()> {
        if grads.dims() != self.dims {
            return Err(Error::ShapeMismatch(format!(
                "gradients {:?} vs model {:?}",
                grads.dims(),
                self.dims
            )));
        }
        if !(learning_rate >= 0.0 && learning_rate.is_finite()) {
            return Err(Error::invalid(format!("learning rate {learning_rate}")));
        }
        for g in 1..=self.dims.layers {
            if let Some(grad) = grads.group(g) {
                if grad.values().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!("gradient of group {g}")));
                }
            }
        }
        if learning_rate == 0.0 {
            return Ok(());
        }
        for g in 1..=self.dims.layers {
            if mask.contains(g) {
                continue;
            }
            if let Some(grad) = grads.group(g) {
                for (w, d) in self.groups[g - 1].values_mut().zip(grad.values()) {
                    *w -= learning_rate * d;
                }
            }
        }
        Ok(())
    }
}

/// Fixed-order weighted sum `Σ_k weights[k] · models[k]`, evaluated as
/// `x₁ + Σ_k w_k (x_k − x₁)` so a parameter equal across all models comes
/// back bit-identical.
pub(crate) fn weighted_combination(models: &[&LayeredLm], weights: &[f64]) -> Result<LayeredLm> {
    let first = models
        .first()
        .ok_or_else(|| Error::invalid("no models to combine"))?;
    for m in &models[1..] {
        first.check_same_shape(m)?;
    }
    let mut out = (*first).clone();
    for (gi, group) in out.groups.iter_mut().enumerate() {
        for (pi, dst) in group.values_mut().enumerate() {
            let anchor = *dst;
            let mut acc = 0.0;
            for (m, &w) in models.iter().zip(weights) {
                let g = &m.groups[gi];
                let x = if pi < g.weight.len() {
                    g.weight[pi]
                } else {
                    g.bias[pi - g.weight.len()]
                };
                acc += w * (x - anchor);
            }
            *dst = anchor + acc;
        }
    }
    Ok(out)
}
