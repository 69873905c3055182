//! Closed-form operation counts.
//!
//! One unit is one multiply-add, or one element of an elementwise vector
//! update. Transcendentals (`tanh`, `exp`, `ln`) are not counted. Embedding
//! pooling and its gradient are charged for the full window, PAD included,
//! so counts depend only on shapes.

use serde::{Deserialize, Serialize};

use super::{FreezeMask, GroupKind, ModelDims};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopCount {
    pub forward: u64,
    pub backward: u64,
}

impl std::ops::Add for FlopCount {
    type Output = FlopCount;
    fn add(self, o: FlopCount) -> FlopCount {
        FlopCount {
            forward: self.forward + o.forward,
            backward: self.backward + o.backward,
        }
    }
}

/// Per-example backward work, split by term.
#[derive(Debug, Clone, Copy)]
pub(crate) struct BackwardTerms {
    /// `p − onehot`, scaled.
    pub loss: u64,
    /// `Wₒ · g` into the top hidden state.
    pub output_input_grad: u64,
    pub output_param_grad: u64,
    /// `g ⊙ (1 − t²)` then `Wᵀ g`, for one block.
    pub hidden_input_grad: u64,
    pub hidden_param_grad: u64,
    pub embedding_param_grad: u64,
}

impl BackwardTerms {
    pub fn new(dims: ModelDims, window: usize) -> Self {
        let (d, v, w) = (dims.dim as u64, dims.vocab as u64, window as u64);
        BackwardTerms {
            loss: v,
            output_input_grad: d * v,
            output_param_grad: d * v + v,
            hidden_input_grad: d * d + d,
            hidden_param_grad: d * d + d,
            embedding_param_grad: w * d,
        }
    }

    fn param_grad(&self, kind: GroupKind) -> u64 {
        match kind {
            GroupKind::Embedding => self.embedding_param_grad,
            GroupKind::Hidden => self.hidden_param_grad,
            GroupKind::Output => self.output_param_grad,
        }
    }
}

fn forward_per_example(dims: ModelDims, window: usize) -> u64 {
    let (d, v, w) = (dims.dim as u64, dims.vocab as u64, window as u64);
    w * d + dims.hidden_blocks() as u64 * (d * d + d) + d * v + v
}

/// Work for `steps` optimizer steps of `batch` examples with context window
/// `window` (= 2·radius + 1) and the given groups frozen.
pub fn flops_estimate(
    dims: ModelDims,
    window: usize,
    mask: &FreezeMask,
    batch: usize,
    steps: usize,
) -> FlopCount {
    let terms = BackwardTerms::new(dims, window);
    let blocks = dims.hidden_blocks() as u64;
    let mut backward = terms.loss + terms.output_input_grad + blocks * terms.hidden_input_grad;
    for g in (1..=dims.layers).filter(|&g| !mask.contains(g)) {
        backward += terms.param_grad(dims.kind(g));
    }
    let examples = (batch * steps) as u64;
    FlopCount {
        forward: forward_per_example(dims, window) * examples,
        backward: backward * examples,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims() -> ModelDims {
        ModelDims {
            layers: 6,
            dim: 16,
            vocab: 100,
        }
    }

    #[test]
    fn empty_mask_is_full_model_count() {
        let (d, v, w) = (16u64, 100u64, 5u64);
        let full = v + d * v + (d * v + v) + 4 * 2 * (d * d + d) + w * d;
        assert_eq!(
            flops_estimate(dims(), 5, &FreezeMask::none(), 1, 1).backward,
            full
        );
    }

    #[test]
    fn freezing_two_of_four_hidden_blocks_halves_their_param_term() {
        let full = flops_estimate(dims(), 5, &FreezeMask::none(), 1, 1).backward;
        let part = flops_estimate(dims(), 5, &FreezeMask::from_indices([3, 4]), 1, 1).backward;
        let hidden_param_term = 4 * (16 * 16 + 16);
        assert_eq!(full - part, hidden_param_term * 2 / 4);
    }

    #[test]
    fn counts_are_linear_in_steps_and_batch() {
        let m = FreezeMask::from_indices([1, 6]);
        let one = flops_estimate(dims(), 7, &m, 3, 1);
        let two = flops_estimate(dims(), 7, &m, 3, 2);
        assert_eq!(two.forward, 2 * one.forward);
        assert_eq!(two.backward, 2 * one.backward);
        assert_eq!(flops_estimate(dims(), 7, &m, 6, 1), two);
    }

    #[test]
    fn any_frozen_group_reduces_backward() {
        let full = flops_estimate(dims(), 5, &FreezeMask::none(), 2, 3).backward;
        for g in 1..=6 {
            let f = flops_estimate(dims(), 5, &FreezeMask::from_indices([g]), 2, 3);
            assert!(f.backward < full, "group {g}");
            assert_eq!(
                f.forward,
                flops_estimate(dims(), 5, &FreezeMask::none(), 2, 3).forward
            );
        }
    }
}
