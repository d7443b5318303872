//! Reverse-mode gradients of the batch-mean MSE loss.
//!
//! Loss convention everywhere: L = sum over samples and output dims of
//! squared error, divided by (n_samples * output_dim).

use crate::error::{Error, Result};

use super::{ModelState, Scratch};

/// Streaming gradient accumulation over a batch, reusing buffers.
pub struct GradientAccumulator {
    scratch: Scratch,
    grads: Vec<f64>,
    sq_err: f64,
    count: usize,
}

impl GradientAccumulator {
    pub fn new(model: &ModelState) -> Self {
        GradientAccumulator {
            scratch: Scratch::new(&model.spec),
            grads: vec![0.0; model.param_count()],
            sq_err: 0.0,
            count: 0,
        }
    }

    pub fn reset(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = 0.0);
        self.sq_err = 0.0;
        self.count = 0;
    }

    /// Add one sample's gradient contribution (unscaled squared-error
    /// gradient; scaling happens in [`finish`](Self::finish)).
    pub fn add_sample(&mut self, model: &ModelState, input: &[f64], target: &[f64]) -> Result<()> {
        let spec = &model.spec;
        if target.len() != spec.output_dim() {
            return Err(Error::Dimension(format!(
                "target has {} values, network outputs {}",
                target.len(),
                spec.output_dim()
            )));
        }
        if target.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("training target".into()));
        }
        // forward_with validates the input (size, finiteness)
        model.forward_with(&mut self.scratch, input)?;

        let depth = spec.depth();
        let out = &self.scratch.acts[depth];
        let out_delta = &mut self.scratch.deltas[depth - 1];
        for o in 0..spec.output_dim() {
            let err = out[o] - target[o];
            self.sq_err += err * err;
            // d(sq err)/dz through the output activation
            out_delta[o] = 2.0 * err * spec.activations[depth - 1].derivative(self.scratch.zs[depth - 1][o]);
        }

        for l in (0..depth).rev() {
            let n_in = spec.layer_sizes[l];
            let n_out = spec.layer_sizes[l + 1];
            let base = self.scratch.layer_starts[l];
            // weight and bias gradients for layer l
            {
                let a_in = &self.scratch.acts[l];
                let delta = &self.scratch.deltas[l];
                for o in 0..n_out {
                    let d = delta[o];
                    let grow = &mut self.grads[base + o * n_in..base + (o + 1) * n_in];
                    for (g, a) in grow.iter_mut().zip(a_in.iter()) {
                        *g += d * a;
                    }
                }
                let gbias = &mut self.grads[base + n_in * n_out..base + (n_in + 1) * n_out];
                for (g, d) in gbias.iter_mut().zip(delta.iter()) {
                    *g += d;
                }
            }
            // propagate delta to the previous non-input layer
            if l > 0 {
                let w = &model.params.values[base..base + n_in * n_out];
                let (prev_deltas, curr_deltas) = self.scratch.deltas.split_at_mut(l);
                let delta = &curr_deltas[0];
                let prev = &mut prev_deltas[l - 1];
                let act = spec.activations[l - 1];
                let zs_prev = &self.scratch.zs[l - 1];
                for i in 0..n_in {
                    let mut sum = 0.0;
                    for o in 0..n_out {
                        sum += w[o * n_in + i] * delta[o];
                    }
                    prev[i] = sum * act.derivative(zs_prev[i]);
                }
            }
        }
        self.count += 1;
        Ok(())
    }

    /// Finalize: divide by (n * output_dim), zero gradients of masked
    /// (non-trainable) parameters, and return (gradient, batch loss).
    /// The accumulator is reset for reuse.
    pub fn finish(&mut self, model: &ModelState) -> (Vec<f64>, f64) {
        let denom = (self.count.max(1) * model.spec.output_dim()) as f64;
        let mut grads = vec![0.0; self.grads.len()];
        for (dst, (g, &trainable)) in grads
            .iter_mut()
            .zip(self.grads.iter().zip(model.trainable_mask.iter()))
        {
            *dst = if trainable { g / denom } else { 0.0 };
        }
        let loss = self.sq_err / denom;
        self.reset();
        (grads, loss)
    }
}

/// Gradient of the batch-mean MSE over `batch`, with masked parameters
/// zeroed. Returns (gradient, loss).
pub fn backward(model: &ModelState, batch: &[(&[f64], &[f64])]) -> Result<(Vec<f64>, f64)> {
    if batch.is_empty() {
        return Err(Error::Dimension("empty batch".into()));
    }
    let mut acc = GradientAccumulator::new(model);
    for (x, y) in batch {
        acc.add_sample(model, x, y)?;
    }
    Ok(acc.finish(model))
}
