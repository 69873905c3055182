use crate::corpus::{MlmBatch, PAD};
use crate::error::{Error, Result};

use super::flops;
use super::{FreezeMask, LayeredLm, ModelDims, ParamGroup};

/// Activations retained by [`LayeredLm::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    dims: ModelDims,
    batch: usize,
    window: usize,
    input_ids: Vec<u32>,
    target_ids: Vec<u32>,
    /// Non-PAD tokens per row.
    counts: Vec<usize>,
    /// `h_0 ..= h_H`, each `batch × dim`.
    hidden: Vec<Vec<f64>>,
    /// `tanh(W h + b)` per hidden block, each `batch × dim`.
    activations: Vec<Vec<f64>>,
    /// Softmax probabilities, `batch × vocab`.
    probs: Vec<f64>,
}

impl ForwardCache {
    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    pub fn batch_size(&self) -> usize {
        self.batch
    }

    pub fn window(&self) -> usize {
        self.window
    }
}

/// Parameter gradients; `None` marks a frozen group whose gradient is exactly
/// zero and was never computed.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    dims: ModelDims,
    groups: Vec<Option<ParamGroup>>,
    /// Work done by the backward pass that produced these gradients.
    pub backward_flops: u64,
}

impl Gradients {
    pub fn zeros(dims: ModelDims) -> Self {
        Gradients {
            dims,
            groups: (1..=dims.layers)
                .map(|g| Some(ParamGroup::zeros(dims.group_shape(g))))
                .collect(),
            backward_flops: 0,
        }
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    pub fn group(&self, group: usize) -> Option<&ParamGroup> {
        self.groups[group - 1].as_ref()
    }

    pub fn group_mut(&mut self, group: usize) -> Option<&mut ParamGroup> {
        self.groups[group - 1].as_mut()
    }

    /// The gradient of a group, materializing zeros for frozen ones.
    pub fn dense(&self, group: usize) -> ParamGroup {
        self.group(group)
            .cloned()
            .unwrap_or_else(|| ParamGroup::zeros(self.dims.group_shape(group)))
    }

    pub fn is_zero(&self, group: usize) -> bool {
        self.group(group)
            .is_none_or(|g| g.values().all(|&v| v == 0.0))
    }

    pub fn flatten(&self) -> Vec<f64> {
        (1..=self.dims.layers)
            .flat_map(|g| self.dense(g).values().copied().collect::<Vec<_>>())
            .collect()
    }
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Eight independent partial sums so the loop vectorizes.
#[inline]
fn dot(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len().min(y.len());
    let (x, y) = (&x[..n], &y[..n]);
    let mut acc = [0.0f64; 8];
    let xs = x.chunks_exact(8);
    let ys = y.chunks_exact(8);
    let tail: f64 = xs
        .remainder()
        .iter()
        .zip(ys.remainder())
        .map(|(a, b)| a * b)
        .sum();
    for (cx, cy) in xs.zip(ys) {
        for i in 0..8 {
            acc[i] += cx[i] * cy[i];
        }
    }
    acc.iter().sum::<f64>() + tail
}

impl LayeredLm {
    /// Mean cross-entropy of the batch targets, plus the cache for
    /// [`LayeredLm::backward`].
    pub fn forward(&self, batch: &MlmBatch) -> Result<(f64, ForwardCache)> {
        let ModelDims { dim, vocab, .. } = self.dims;
        let (bs, window) = (batch.batch_size, batch.window);
        if batch.input_ids.len() != bs * window || batch.target_ids.len() != bs || bs == 0 {
            return Err(Error::ShapeMismatch("malformed batch".into()));
        }
        if let Some(&bad) = batch
            .input_ids
            .iter()
            .chain(&batch.target_ids)
            .find(|&&id| id as usize >= vocab)
        {
            return Err(Error::ShapeMismatch(format!(
                "token id {bad} ≥ vocab {vocab}"
            )));
        }

        let emb = &self.groups[0].weight;
        let mut h = vec![0.0; bs * dim];
        let mut counts = Vec::with_capacity(bs);
        for (b, h_row) in h.chunks_exact_mut(dim).enumerate() {
            let row = batch.row(b);
            let mut n = 0;
            for &tok in row.iter().filter(|&&t| t != PAD) {
                let t = tok as usize;
                axpy(1.0, &emb[t * dim..(t + 1) * dim], h_row);
                n += 1;
            }
            if n == 0 {
                return Err(Error::AllPadContext(b));
            }
            let inv = 1.0 / n as f64;
            h_row.iter_mut().for_each(|v| *v *= inv);
            counts.push(n);
        }

        let blocks = self.dims.hidden_blocks();
        let mut hidden = Vec::with_capacity(blocks + 1);
        let mut activations = Vec::with_capacity(blocks);
        for block in &self.groups[1..=blocks] {
            let mut t = vec![0.0; bs * dim];
            let mut next = h.clone();
            for b in 0..bs {
                let h_in = &h[b * dim..(b + 1) * dim];
                for i in 0..dim {
                    let a = dot(&block.weight[i * dim..(i + 1) * dim], h_in) + block.bias[i];
                    let ti = a.tanh();
                    t[b * dim + i] = ti;
                    next[b * dim + i] += ti;
                }
            }
            hidden.push(std::mem::replace(&mut h, next));
            activations.push(t);
        }
        hidden.push(h);

        let out = &self.groups[self.dims.layers - 1];
        let h_top = hidden.last().expect("at least h0");
        let mut probs = vec![0.0; bs * vocab];
        let mut loss = 0.0;
        for b in 0..bs {
            let logits = &mut probs[b * vocab..(b + 1) * vocab];
            logits.copy_from_slice(&out.bias);
            for (j, &hj) in h_top[b * dim..(b + 1) * dim].iter().enumerate() {
                axpy(hj, &out.weight[j * vocab..(j + 1) * vocab], logits);
            }
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for l in logits.iter_mut() {
                *l = (*l - max).exp();
                z += *l;
            }
            let inv = 1.0 / z;
            logits.iter_mut().for_each(|p| *p *= inv);
            let target = batch.target_ids[b] as usize;
            loss -= logits[target].ln();
        }
        let loss = loss / bs as f64;

        Ok((
            loss,
            ForwardCache {
                dims: self.dims,
                batch: bs,
                window,
                input_ids: batch.input_ids.clone(),
                target_ids: batch.target_ids.clone(),
                counts,
                hidden,
                activations,
                probs,
            },
        ))
    }

    /// Reverse-mode gradients of the mean loss.
    ///
    /// Parameter gradients of frozen groups are skipped outright, but the
    /// activation gradient still flows through every hidden block. The work
    /// done is tallied in [`Gradients::backward_flops`].
    pub fn backward(&self, cache: &ForwardCache, mask: &FreezeMask) -> Result<Gradients> {
        if cache.dims != self.dims {
            return Err(Error::ShapeMismatch(format!(
                "cache for {:?}, model {:?}",
                cache.dims, self.dims
            )));
        }
        mask.validate(self.dims.layers)?;
        let ModelDims { layers, dim, vocab } = self.dims;
        let blocks = self.dims.hidden_blocks();
        let bs = cache.batch;
        let per_ex = flops::BackwardTerms::new(self.dims, cache.window);
        let mut ops = 0u64;

        let mut groups: Vec<Option<ParamGroup>> = (1..=layers)
            .map(|g| (!mask.contains(g)).then(|| ParamGroup::zeros(self.dims.group_shape(g))))
            .collect();

        // dL/dlogits = (p - onehot) / B
        let scale = 1.0 / bs as f64;
        let mut g_logits = cache.probs.clone();
        for b in 0..bs {
            let row = &mut g_logits[b * vocab..(b + 1) * vocab];
            row[cache.target_ids[b] as usize] -= 1.0;
            row.iter_mut().for_each(|v| *v *= scale);
        }
        ops += per_ex.loss * bs as u64;

        let out = &self.groups[layers - 1];
        let h_top = &cache.hidden[blocks];
        let mut dh = vec![0.0; bs * dim];
        for b in 0..bs {
            let g = &g_logits[b * vocab..(b + 1) * vocab];
            for (j, d) in dh[b * dim..(b + 1) * dim].iter_mut().enumerate() {
                *d = dot(&out.weight[j * vocab..(j + 1) * vocab], g);
            }
        }
        ops += per_ex.output_input_grad * bs as u64;
        if let Some(grad) = groups[layers - 1].as_mut() {
            for b in 0..bs {
                let g = &g_logits[b * vocab..(b + 1) * vocab];
                for (j, &hj) in h_top[b * dim..(b + 1) * dim].iter().enumerate() {
                    axpy(hj, g, &mut grad.weight[j * vocab..(j + 1) * vocab]);
                }
                axpy(1.0, g, &mut grad.bias);
            }
            ops += per_ex.output_param_grad * bs as u64;
        }

        let mut g_pre = vec![0.0; dim];
        for l in (0..blocks).rev() {
            let group = l + 2;
            let w = &self.groups[group - 1].weight;
            let t = &cache.activations[l];
            let h_in = &cache.hidden[l];
            let mut grad = groups[group - 1].as_mut();
            for b in 0..bs {
                let dh_b = &mut dh[b * dim..(b + 1) * dim];
                for i in 0..dim {
                    let ti = t[b * dim + i];
                    g_pre[i] = dh_b[i] * (1.0 - ti * ti);
                }
                if let Some(grad) = grad.as_deref_mut() {
                    let h_b = &h_in[b * dim..(b + 1) * dim];
                    for (i, &gi) in g_pre.iter().enumerate() {
                        axpy(gi, h_b, &mut grad.weight[i * dim..(i + 1) * dim]);
                    }
                    axpy(1.0, &g_pre, &mut grad.bias);
                }
                for (i, &gi) in g_pre.iter().enumerate() {
                    axpy(gi, &w[i * dim..(i + 1) * dim], dh_b);
                }
            }
            ops += per_ex.hidden_input_grad * bs as u64;
            if grad.is_some() {
                ops += per_ex.hidden_param_grad * bs as u64;
            }
        }

        if let Some(grad) = groups[0].as_mut() {
            for b in 0..bs {
                let row = &cache.input_ids[b * cache.window..(b + 1) * cache.window];
                let inv = 1.0 / cache.counts[b] as f64;
                let dh_b = &dh[b * dim..(b + 1) * dim];
                for &tok in row.iter().filter(|&&t| t != PAD) {
                    let t = tok as usize;
                    axpy(inv, dh_b, &mut grad.weight[t * dim..(t + 1) * dim]);
                }
            }
            ops += per_ex.embedding_param_grad * bs as u64;
        }

        Ok(Gradients {
            dims: self.dims,
            groups,
            backward_flops: ops,
        })
    }
}
