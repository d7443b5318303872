//! Toy equation-of-state grid: temperature and salinity profiles over a
//! lat/lon/depth box, with density given by a fixed quadratic polynomial
//! in (S, T, P). Pressure is a linear proxy of depth.

use std::collections::BTreeMap;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

use super::{Dataset, DatasetMeta, Sample};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EosCoefficients {
    pub constant: f64,
    pub s: f64,
    pub t: f64,
    pub t2: f64,
    pub p: f64,
    pub p2: f64,
    pub st: f64,
    pub tp: f64,
}

impl Default for EosCoefficients {
    fn default() -> Self {
        EosCoefficients {
            constant: 1000.0,
            s: 0.8,
            t: -0.12,
            t2: -0.0045,
            p: 0.045,
            p2: -2.0e-5,
            st: 3.0e-4,
            tp: -1.5e-4,
        }
    }
}

/// Density from the toy polynomial.
pub fn density(c: &EosCoefficients, s: f64, t: f64, p: f64) -> f64 {
    c.constant
        + c.s * s
        + c.t * t
        + c.t2 * t * t
        + c.p * p
        + c.p2 * p * p
        + c.st * s * t
        + c.tp * t * p
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EosConfig {
    pub n_lat: usize,
    pub n_lon: usize,
    pub n_depth: usize,
    pub depth_max: f64,
    /// Training/extrapolation boundary along depth.
    pub cutoff: f64,
    /// Gaussian noise added to the T and S fields.
    pub noise: f64,
    pub seed: u64,
    pub coefficients: EosCoefficients,
}

impl Default for EosConfig {
    fn default() -> Self {
        EosConfig {
            n_lat: 36,
            n_lon: 72,
            n_depth: 102,
            depth_max: 4500.0,
            cutoff: 2000.0,
            noise: 0.0,
            seed: 0,
            coefficients: EosCoefficients::default(),
        }
    }
}

impl EosConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_lat == 0 || self.n_lon == 0 || self.n_depth == 0 {
            return Err(Error::Config("grid sizes must be positive".into()));
        }
        if !(self.depth_max > 0.0) {
            return Err(Error::Config("depth_max must be positive".into()));
        }
        if !(self.cutoff >= 0.0 && self.cutoff <= self.depth_max) {
            return Err(Error::Config(format!(
                "cutoff {} outside the depth range [0, {}]",
                self.cutoff, self.depth_max
            )));
        }
        if self.noise < 0.0 {
            return Err(Error::Config("noise must be non-negative".into()));
        }
        Ok(())
    }

    /// Cell-centered latitudes over [-90, 90], degrees.
    pub fn lats(&self) -> Vec<f64> {
        let step = 180.0 / self.n_lat as f64;
        (0..self.n_lat).map(|i| -90.0 + (i as f64 + 0.5) * step).collect()
    }

    /// Cell-centered longitudes over [0, 360), degrees.
    pub fn lons(&self) -> Vec<f64> {
        let step = 360.0 / self.n_lon as f64;
        (0..self.n_lon).map(|i| (i as f64 + 0.5) * step).collect()
    }

    /// Depth levels: linear from 0 to depth_max inclusive.
    pub fn depths(&self) -> Vec<f64> {
        if self.n_depth == 1 {
            return vec![0.0];
        }
        (0..self.n_depth)
            .map(|i| self.depth_max * i as f64 / (self.n_depth - 1) as f64)
            .collect()
    }
}

pub fn temperature(z: f64, lat_deg: f64) -> f64 {
    let c = lat_deg.to_radians().cos();
    2.0 + 22.0 * (-z / 700.0).exp() * c * c
}

pub fn salinity(z: f64) -> f64 {
    34.5 + 0.7 * (-z / 1000.0).exp()
}

pub fn pressure(z: f64) -> f64 {
    0.1 * z
}

/// Generate the full grid. Iteration order (and hence sample order) is
/// latitude-major, then longitude, then depth.
pub fn gen_toy_eos(cfg: &EosConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = rng_from_seed(cfg.seed);
    let noise = Normal::new(0.0, cfg.noise.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::Config(e.to_string()))?;
    let mut draw = |on: bool| -> f64 {
        if on {
            noise.sample(&mut rng)
        } else {
            0.0
        }
    };
    let noisy = cfg.noise > 0.0;

    let lats = cfg.lats();
    let lons = cfg.lons();
    let depths = cfg.depths();
    let mut samples = Vec::with_capacity(lats.len() * lons.len() * depths.len());
    for &lat in &lats {
        for &lon in &lons {
            for &z in &depths {
                let t = temperature(z, lat) + draw(noisy);
                let s = salinity(z) + draw(noisy);
                let p = pressure(z);
                let rho = density(&cfg.coefficients, s, t, p);
                samples.push(Sample {
                    input: vec![s, t, p, lat, lon, z],
                    target: vec![rho],
                    key: z,
                    aux: BTreeMap::new(),
                });
            }
        }
    }

    Ok(Dataset { samples, meta: eos_meta() })
}

/// Column layout of a toy-EOS dataset, without generating one.
pub fn eos_meta() -> DatasetMeta {
    DatasetMeta {
        feature_names: vec![
            "sal".into(),
            "temp".into(),
            "pres".into(),
            "lat".into(),
            "lon".into(),
            "depth".into(),
        ],
        target_names: vec!["rho".into()],
        key_name: "depth".into(),
        ordered: false,
    }
}
