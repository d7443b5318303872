//! Keyed datasets: synthetic generators, ordering-aware splits,
//! stratified subsampling, and CSV interchange.

mod csvio;
mod eos;
mod sample;
mod tipping;

pub use csvio::{load_csv, write_csv, CsvSchema};
pub use eos::{density, eos_meta, gen_toy_eos, EosCoefficients, EosConfig};
pub use sample::{Dataset, DatasetMeta, Sample};
pub use tipping::{gen_tipping, latent_signal, tipping_meta, TippingConfig};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use crate::stats::quantile_sorted;

/// Which side of the key threshold counts as "inside" (the training side).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitDirection {
    /// inside: key <= threshold
    LessEq,
    /// inside: key >= threshold
    GreaterEq,
}

/// Partition a dataset on its key. Returns (inside, beyond); both keep
/// the source ordering and together hold every sample exactly once.
pub fn split_by_key(ds: &Dataset, threshold: f64, direction: SplitDirection) -> (Dataset, Dataset) {
    let mut inside = Vec::new();
    let mut beyond = Vec::new();
    for s in &ds.samples {
        let is_inside = match direction {
            SplitDirection::LessEq => s.key <= threshold,
            SplitDirection::GreaterEq => s.key >= threshold,
        };
        if is_inside {
            inside.push(s.clone());
        } else {
            beyond.push(s.clone());
        }
    }
    if inside.is_empty() {
        log::warn!("split at {threshold} leaves no samples inside");
    }
    if beyond.is_empty() {
        log::warn!("split at {threshold} leaves no samples beyond");
    }
    (
        Dataset { samples: inside, meta: ds.meta.clone() },
        Dataset { samples: beyond, meta: ds.meta.clone() },
    )
}

/// Indices of `ds` selected by per-column quantile stratification.
///
/// For each listed column, values are binned into `q` quantile bins
/// (value boundaries, so a constant column collapses to one bin), and up
/// to `m_per_bin` indices are drawn from every non-empty bin without
/// replacement. The union over columns is deduplicated and returned
/// sorted. Deterministic for a given seed.
pub fn stratified_quantile_sample(
    ds: &Dataset,
    columns: &[String],
    q: usize,
    m_per_bin: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    if q == 0 {
        return Err(Error::Config("quantile bin count must be at least 1".into()));
    }
    if ds.is_empty() {
        return Err(Error::Config("cannot subsample an empty dataset".into()));
    }
    if columns.is_empty() {
        return Err(Error::Config("no stratification columns listed".into()));
    }
    if q > ds.len() {
        log::warn!(
            "{q} quantile bins over {} samples: most bins will hold at most one index",
            ds.len()
        );
    }
    let mut rng = rng_from_seed(seed);
    let mut picked = Vec::new();
    for col in columns {
        let values = ds.column(col)?;
        // upper bin edges at probabilities j/q, j = 1..=q
        let mut sorted = values.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("NaN in stratification column"));
        let edges: Vec<f64> = (1..=q)
            .map(|j| quantile_sorted(&sorted, j as f64 / q as f64))
            .collect();
        // value -> first bin whose upper edge reaches it; duplicate edges
        // (ties, constant columns) leave the duplicates' bins empty
        let mut bins: Vec<Vec<usize>> = vec![Vec::new(); q];
        for (i, &v) in values.iter().enumerate() {
            let b = edges.partition_point(|&e| e < v).min(q - 1);
            bins[b].push(i);
        }
        for bin in bins.iter_mut() {
            if bin.is_empty() {
                continue;
            }
            if m_per_bin >= bin.len() {
                picked.extend_from_slice(bin);
            } else {
                // partial Fisher-Yates: draw m_per_bin without replacement
                for d in 0..m_per_bin {
                    let j = d + uniform_index(&mut rng, bin.len() - d);
                    bin.swap(d, j);
                    picked.push(bin[d]);
                }
            }
        }
    }
    picked.sort_unstable();
    picked.dedup();
    Ok(picked)
}

/// Uniform index in 0..n from explicit 64-bit draws (keeps draw sequences
/// stable regardless of rand's internal range strategy).
fn uniform_index(rng: &mut impl rand::RngCore, n: usize) -> usize {
    debug_assert!(n > 0);
    // rejection sampling on the top multiple of n to avoid modulo bias
    let n = n as u64;
    let zone = u64::MAX - (u64::MAX % n);
    loop {
        let x = rng.next_u64();
        if x < zone {
            return (x % n) as usize;
        }
    }
}
