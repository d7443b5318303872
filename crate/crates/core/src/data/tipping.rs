//! Synthetic regime-collapse series: a scalar strength that drifts down
//! slowly and then drops through a smooth step around `tip_center`, plus
//! a high-dimensional observable field driven by that strength through
//! two fixed orthonormal spatial patterns (one linear, one quadratic).

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

use super::{Dataset, DatasetMeta, Sample};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TippingConfig {
    /// Series length; one sample per integer step in [1, t_max].
    pub t_max: usize,
    /// Center of the collapse.
    pub tip_center: f64,
    pub field_dim: usize,
    /// Starting strength.
    pub baseline: f64,
    /// Linear drift amplitude over [0, tip_center].
    pub drift: f64,
    /// Collapse step height.
    pub collapse_depth: f64,
    /// Collapse step width (logistic time scale).
    pub collapse_width: f64,
    /// Gaussian noise on the strength series.
    pub noise_y: f64,
    /// Per-component Gaussian noise on the field.
    pub noise_field: f64,
    pub seed: u64,
}

impl Default for TippingConfig {
    fn default() -> Self {
        TippingConfig {
            t_max: 2200,
            tip_center: 1800.0,
            field_dim: 40,
            baseline: 17.0,
            drift: 4.0,
            collapse_depth: 10.0,
            collapse_width: 25.0,
            noise_y: 0.3,
            noise_field: 0.05,
            seed: 0,
        }
    }
}

impl TippingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tip_center > 0.0 && self.tip_center < self.t_max as f64) {
            return Err(Error::Config(format!(
                "tip_center {} must lie strictly inside (0, {})",
                self.tip_center, self.t_max
            )));
        }
        if self.collapse_width <= 0.0 {
            return Err(Error::Config("collapse_width must be positive".into()));
        }
        if self.field_dim == 0 {
            return Err(Error::Config("field_dim must be at least 1".into()));
        }
        if self.noise_y < 0.0 || self.noise_field < 0.0 {
            return Err(Error::Config("noise amplitudes must be non-negative".into()));
        }
        Ok(())
    }
}

fn logistic(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

/// Noise-free strength at step `t`.
pub fn latent_signal(cfg: &TippingConfig, t: f64) -> f64 {
    cfg.baseline
        - cfg.drift * (t / cfg.tip_center)
        - cfg.collapse_depth * logistic((t - cfg.tip_center) / cfg.collapse_width)
}

/// Two orthonormal unit patterns drawn from the seed stream: Gaussian
/// vectors run through Gram-Schmidt.
fn seed_patterns<R: Rng>(rng: &mut R, dim: usize) -> (Vec<f64>, Vec<f64>) {
    fn draw<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
        (0..dim)
            .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
            .collect()
    }
    let mut p1 = draw(rng, dim);
    let mut p2 = draw(rng, dim);
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let n1 = norm(&p1);
    p1.iter_mut().for_each(|x| *x /= n1);
    let dot: f64 = p1.iter().zip(&p2).map(|(a, b)| a * b).sum();
    p2.iter_mut().zip(&p1).for_each(|(b, a)| *b -= dot * a);
    let n2 = norm(&p2);
    p2.iter_mut().for_each(|x| *x /= n2);
    (p1, p2)
}

pub fn gen_tipping(cfg: &TippingConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = rng_from_seed(cfg.seed);
    let (p1, p2) = seed_patterns(&mut rng, cfg.field_dim);
    let noise_y = Normal::new(0.0, cfg.noise_y.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::Config(e.to_string()))?;
    let noise_f = Normal::new(0.0, cfg.noise_field.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::Config(e.to_string()))?;

    let mut samples = Vec::with_capacity(cfg.t_max);
    for step in 1..=cfg.t_max {
        let t = step as f64;
        let eps_y = if cfg.noise_y > 0.0 { noise_y.sample(&mut rng) } else { 0.0 };
        let y = latent_signal(cfg, t) + eps_y;
        let y2 = 0.05 * y * y;
        let input: Vec<f64> = (0..cfg.field_dim)
            .map(|i| {
                let eps = if cfg.noise_field > 0.0 { noise_f.sample(&mut rng) } else { 0.0 };
                y * p1[i] + y2 * p2[i] + eps
            })
            .collect();
        samples.push(Sample {
            input,
            target: vec![y],
            key: t,
            aux: BTreeMap::new(),
        });
    }

    Ok(Dataset { samples, meta: tipping_meta(cfg) })
}

/// Column layout of a tipping dataset, without generating one.
pub fn tipping_meta(cfg: &TippingConfig) -> DatasetMeta {
    DatasetMeta {
        feature_names: (0..cfg.field_dim).map(|i| format!("f{i:02}")).collect(),
        target_names: vec!["y".into()],
        key_name: "t".into(),
        ordered: true,
    }
}
