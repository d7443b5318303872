//! Minimal dense feed-forward networks with exactly reproducible
//! initialization, gradients, and training.
//!
//! Parameters live in one flat vector per model (layer by layer: weight
//! matrix row-major, then biases), which is what the sensitivity and
//! regression stages operate on.

mod backward;
mod checkpoint;
mod optim;
mod train;

pub use backward::{backward, GradientAccumulator};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use optim::{OptimizerKind, OptimizerState};
pub use train::{evaluate_loss, train, TrainConfig, TrainReport};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use rand::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Elu,
    Linear,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Elu => {
                if x >= 0.0 {
                    x
                } else {
                    x.exp() - 1.0
                }
            }
            Activation::Linear => x,
        }
    }

    /// Derivative as a function of the pre-activation value.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Elu => {
                if x >= 0.0 {
                    1.0
                } else {
                    x.exp()
                }
            }
            Activation::Linear => 1.0,
        }
    }
}

/// Weight initialization scheme tag (kept as an enum so checkpoints stay
/// self-describing if more schemes are added).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightInit {
    /// Uniform on ±sqrt(6 / (fan_in + fan_out)), biases zero.
    ScaledUniform,
}

impl Default for WeightInit {
    fn default() -> Self {
        WeightInit::ScaledUniform
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// Input width, hidden widths, output width.
    pub layer_sizes: Vec<usize>,
    /// One per non-input layer.
    pub activations: Vec<Activation>,
    pub seed: u64,
    #[serde(default)]
    pub weight_init: WeightInit,
}

/// Position of one scalar parameter: `input = Some(i)` is the weight from
/// input `i` to `unit`, `input = None` is the unit's bias. `layer` counts
/// non-input layers from zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamIndex {
    pub layer: usize,
    pub unit: usize,
    pub input: Option<usize>,
}

impl NetworkSpec {
    pub fn new(layer_sizes: Vec<usize>, activations: Vec<Activation>, seed: u64) -> Self {
        NetworkSpec {
            layer_sizes,
            activations,
            seed,
            weight_init: WeightInit::ScaledUniform,
        }
    }

    /// Hidden layers all-ELU, linear output: the shape used everywhere here.
    pub fn elu_stack(input: usize, hidden: &[usize], output: usize, seed: u64) -> Self {
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(input);
        sizes.extend_from_slice(hidden);
        sizes.push(output);
        let mut acts = vec![Activation::Elu; hidden.len()];
        acts.push(Activation::Linear);
        NetworkSpec::new(sizes, acts, seed)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(Error::Config(
                "network needs at least an input and an output layer".into(),
            ));
        }
        if self.layer_sizes.iter().any(|&s| s == 0) {
            return Err(Error::Config("zero-width layer".into()));
        }
        if self.activations.len() != self.layer_sizes.len() - 1 {
            return Err(Error::Config(format!(
                "expected {} activations for {} layers, got {}",
                self.layer_sizes.len() - 1,
                self.layer_sizes.len(),
                self.activations.len()
            )));
        }
        Ok(())
    }

    /// Number of non-input layers.
    pub fn depth(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    /// Total parameter count: sum over layers of (fan_in + 1) * fan_out.
    pub fn param_count(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| (w[0] + 1) * w[1])
            .sum()
    }

    /// Flat-vector range holding layer `l`'s weights and biases.
    pub fn layer_range(&self, layer: usize) -> std::ops::Range<usize> {
        let mut start = 0;
        for l in 0..layer {
            start += (self.layer_sizes[l] + 1) * self.layer_sizes[l + 1];
        }
        let len = (self.layer_sizes[layer] + 1) * self.layer_sizes[layer + 1];
        start..start + len
    }

    pub fn final_layer_range(&self) -> std::ops::Range<usize> {
        self.layer_range(self.depth() - 1)
    }

    /// Flat index of a structural position, if it exists.
    pub fn flat_index(&self, idx: ParamIndex) -> Option<usize> {
        if idx.layer >= self.depth() {
            return None;
        }
        let n_in = self.layer_sizes[idx.layer];
        let n_out = self.layer_sizes[idx.layer + 1];
        if idx.unit >= n_out {
            return None;
        }
        let base = self.layer_range(idx.layer).start;
        match idx.input {
            Some(i) if i < n_in => Some(base + idx.unit * n_in + i),
            Some(_) => None,
            None => Some(base + n_in * n_out + idx.unit),
        }
    }

    /// Structural position of every flat index, in flat order.
    pub fn index_map(&self) -> Vec<ParamIndex> {
        let mut map = Vec::with_capacity(self.param_count());
        for layer in 0..self.depth() {
            let n_in = self.layer_sizes[layer];
            let n_out = self.layer_sizes[layer + 1];
            for unit in 0..n_out {
                for input in 0..n_in {
                    map.push(ParamIndex {
                        layer,
                        unit,
                        input: Some(input),
                    });
                }
            }
            for unit in 0..n_out {
                map.push(ParamIndex {
                    layer,
                    unit,
                    input: None,
                });
            }
        }
        map
    }
}

/// Flat parameter vector; layout is defined by the owning model's spec.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParameterVector {
    pub values: Vec<f64>,
}

impl ParameterVector {
    pub fn new(values: Vec<f64>) -> Self {
        ParameterVector { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// One layer's parameters in structured form, for building and
/// inspecting models in tests and tools.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    /// `weights[unit][input]`
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
}

impl NetworkSpec {
    pub fn unflatten(&self, params: &ParameterVector) -> Result<Vec<LayerParams>> {
        if params.len() != self.param_count() {
            return Err(Error::Dimension(format!(
                "parameter vector has {} values, spec needs {}",
                params.len(),
                self.param_count()
            )));
        }
        let mut layers = Vec::with_capacity(self.depth());
        for l in 0..self.depth() {
            let n_in = self.layer_sizes[l];
            let n_out = self.layer_sizes[l + 1];
            let range = self.layer_range(l);
            let chunk = &params.values[range];
            let weights = (0..n_out)
                .map(|o| chunk[o * n_in..(o + 1) * n_in].to_vec())
                .collect();
            let biases = chunk[n_in * n_out..].to_vec();
            layers.push(LayerParams { weights, biases });
        }
        Ok(layers)
    }

    pub fn flatten(&self, layers: &[LayerParams]) -> Result<ParameterVector> {
        if layers.len() != self.depth() {
            return Err(Error::Dimension(format!(
                "{} layer blocks for a depth-{} network",
                layers.len(),
                self.depth()
            )));
        }
        let mut values = Vec::with_capacity(self.param_count());
        for (l, lp) in layers.iter().enumerate() {
            let n_in = self.layer_sizes[l];
            let n_out = self.layer_sizes[l + 1];
            if lp.weights.len() != n_out
                || lp.weights.iter().any(|r| r.len() != n_in)
                || lp.biases.len() != n_out
            {
                return Err(Error::Dimension(format!("layer {l} block shape mismatch")));
            }
            for row in &lp.weights {
                values.extend_from_slice(row);
            }
            values.extend_from_slice(&lp.biases);
        }
        Ok(ParameterVector::new(values))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub spec: NetworkSpec,
    pub params: ParameterVector,
    pub trainable_mask: Vec<bool>,
}

/// Deterministically initialize a network from its spec: weights uniform
/// on ±sqrt(6/(fan_in+fan_out)) drawn from a ChaCha8 stream seeded by
/// `spec.seed`, biases zero, everything trainable.
pub fn build_network(spec: &NetworkSpec) -> Result<ModelState> {
    spec.validate()?;
    let mut rng = rng_from_seed(spec.seed);
    let k = spec.param_count();
    let mut values = vec![0.0; k];
    for l in 0..spec.depth() {
        let n_in = spec.layer_sizes[l];
        let n_out = spec.layer_sizes[l + 1];
        let limit = (6.0 / (n_in + n_out) as f64).sqrt();
        let range = spec.layer_range(l);
        // weights first; biases stay zero
        for v in &mut values[range.start..range.start + n_in * n_out] {
            let u: f64 = rng.random();
            *v = (2.0 * u - 1.0) * limit;
        }
    }
    Ok(ModelState {
        spec: spec.clone(),
        params: ParameterVector::new(values),
        trainable_mask: vec![true; k],
    })
}

/// Reusable per-layer buffers for forward/backward passes.
#[derive(Clone, Debug)]
pub struct Scratch {
    /// Activations per layer, index 0 = input copy.
    pub(crate) acts: Vec<Vec<f64>>,
    /// Pre-activations per non-input layer.
    pub(crate) zs: Vec<Vec<f64>>,
    pub(crate) deltas: Vec<Vec<f64>>,
    pub(crate) layer_starts: Vec<usize>,
}

impl Scratch {
    pub fn new(spec: &NetworkSpec) -> Self {
        let acts = spec.layer_sizes.iter().map(|&s| vec![0.0; s]).collect();
        let zs = spec.layer_sizes[1..].iter().map(|&s| vec![0.0; s]).collect();
        let deltas = spec.layer_sizes[1..].iter().map(|&s| vec![0.0; s]).collect();
        let layer_starts = (0..spec.depth()).map(|l| spec.layer_range(l).start).collect();
        Scratch { acts, zs, deltas, layer_starts }
    }
}

impl ModelState {
    /// Forward pass; validates input size and finiteness.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let mut scratch = Scratch::new(&self.spec);
        self.forward_with(&mut scratch, input)?;
        Ok(scratch.acts.last().unwrap().clone())
    }

    /// Forward pass into caller-owned buffers; the output lands in
    /// `scratch.acts.last()`. Use this in per-sample loops.
    pub fn forward_with(&self, scratch: &mut Scratch, input: &[f64]) -> Result<()> {
        let spec = &self.spec;
        if input.len() != spec.input_dim() {
            return Err(Error::Dimension(format!(
                "input has {} values, network expects {}",
                input.len(),
                spec.input_dim()
            )));
        }
        if input.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network input".into()));
        }
        scratch.acts[0].copy_from_slice(input);
        for l in 0..spec.depth() {
            let n_in = spec.layer_sizes[l];
            let n_out = spec.layer_sizes[l + 1];
            let base = scratch.layer_starts[l];
            let w = &self.params.values[base..base + n_in * n_out];
            let b = &self.params.values[base + n_in * n_out..base + (n_in + 1) * n_out];
            let act = spec.activations[l];
            let (lower, upper) = scratch.acts.split_at_mut(l + 1);
            let a_in = &lower[l];
            let a_out = &mut upper[0];
            let z = &mut scratch.zs[l];
            for o in 0..n_out {
                let mut sum = b[o];
                let row = &w[o * n_in..(o + 1) * n_in];
                for (wv, av) in row.iter().zip(a_in.iter()) {
                    sum += wv * av;
                }
                z[o] = sum;
                a_out[o] = act.apply(sum);
            }
        }
        Ok(())
    }

    /// Convenience for scalar-output networks.
    pub fn forward_scalar(&self, scratch: &mut Scratch, input: &[f64]) -> Result<f64> {
        self.forward_with(scratch, input)?;
        Ok(scratch.acts.last().unwrap()[0])
    }

    pub fn output<'a>(&self, scratch: &'a Scratch) -> &'a [f64] {
        scratch.acts.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Replace the trainable mask (length-checked).
    pub fn with_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.params.len() {
            return Err(Error::Dimension(format!(
                "mask has {} entries for {} parameters",
                mask.len(),
                self.params.len()
            )));
        }
        self.trainable_mask = mask;
        Ok(self)
    }
}
