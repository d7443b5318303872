//! Empirical orthogonal functions: principal components of a set of
//! field snapshots, used as the low-dimensional predictors for the
//! tipping experiment. The basis is fitted once on training fields and
//! reused frozen for out-of-distribution projection.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EofBasis {
    pub mean_field: Vec<f64>,
    /// Orthonormal components, strongest first; `components[j][d]`.
    pub components: Vec<Vec<f64>>,
    /// Covariance eigenvalue of each kept component.
    pub explained_variance: Vec<f64>,
    /// Sum of all covariance eigenvalues (trace), for explained fractions.
    pub total_variance: f64,
}

/// Fit an EOF basis with `k` leading components.
///
/// Covariance uses the n-1 denominator. Components are sorted by
/// descending eigenvalue and sign-fixed so each component's
/// largest-magnitude entry is positive (ties broken by lowest index).
/// If `k` exceeds the covariance rank, the basis is truncated with a
/// warning.
pub fn fit_eof(fields: &[Vec<f64>], k: usize) -> Result<EofBasis> {
    if fields.len() < 2 {
        return Err(Error::Config(format!(
            "EOF fit needs at least 2 fields, got {}",
            fields.len()
        )));
    }
    if k == 0 {
        return Err(Error::Config("k_leading must be at least 1".into()));
    }
    let dim = fields[0].len();
    if dim == 0 || fields.iter().any(|f| f.len() != dim) {
        return Err(Error::Dimension("ragged or empty field snapshots".into()));
    }
    if fields.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("EOF input fields".into()));
    }

    let n = fields.len();
    let mut mean_field = vec![0.0; dim];
    for f in fields {
        for (m, v) in mean_field.iter_mut().zip(f) {
            *m += v;
        }
    }
    mean_field.iter_mut().for_each(|m| *m /= n as f64);

    // covariance of the centered fields
    let mut cov = DMatrix::<f64>::zeros(dim, dim);
    let mut centered = vec![0.0; dim];
    for f in fields {
        for (c, (v, m)) in centered.iter_mut().zip(f.iter().zip(&mean_field)) {
            *c = v - m;
        }
        for a in 0..dim {
            let ca = centered[a];
            for b in a..dim {
                cov[(a, b)] += ca * centered[b];
            }
        }
    }
    let denom = (n - 1) as f64;
    for a in 0..dim {
        for b in a..dim {
            let v = cov[(a, b)] / denom;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .expect("non-finite eigenvalue")
    });
    let total_variance: f64 = eig.eigenvalues.iter().map(|&l| l.max(0.0)).sum();
    let lead = eig.eigenvalues[order[0]].max(0.0);
    // numerical rank: eigenvalues that are meaningfully positive
    let rank = order
        .iter()
        .take_while(|&&i| eig.eigenvalues[i] > lead * 1e-12 && eig.eigenvalues[i] > 0.0)
        .count();
    if rank == 0 {
        return Err(Error::Config(
            "EOF fit failed: covariance is all zero (identical fields?)".into(),
        ));
    }
    let kept = if k > rank {
        log::warn!("requested {k} EOF components but covariance rank is {rank}; truncating");
        rank
    } else {
        k
    };

    let mut components = Vec::with_capacity(kept);
    let mut explained = Vec::with_capacity(kept);
    for &i in order.iter().take(kept) {
        let col = eig.eigenvectors.column(i);
        let mut comp: Vec<f64> = col.iter().copied().collect();
        // sign convention: largest-magnitude entry positive
        let mut arg = 0usize;
        for (d, v) in comp.iter().enumerate() {
            if v.abs() > comp[arg].abs() {
                arg = d;
            }
        }
        if comp[arg] < 0.0 {
            comp.iter_mut().for_each(|v| *v = -*v);
        }
        components.push(comp);
        explained.push(eig.eigenvalues[i]);
    }

    Ok(EofBasis { mean_field, components, explained_variance: explained, total_variance })
}

impl EofBasis {
    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.mean_field.len()
    }

    /// Fraction of total variance carried by each kept component.
    pub fn explained_fraction(&self) -> Vec<f64> {
        self.explained_variance
            .iter()
            .map(|&l| if self.total_variance > 0.0 { l / self.total_variance } else { 0.0 })
            .collect()
    }

    /// Principal components of a (possibly out-of-sample) field:
    /// inner products of the centered field with each component.
    pub fn project(&self, field: &[f64]) -> Result<Vec<f64>> {
        if field.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "field has {} entries, basis expects {}",
                field.len(),
                self.dim()
            )));
        }
        Ok(self
            .components
            .iter()
            .map(|comp| {
                field
                    .iter()
                    .zip(&self.mean_field)
                    .zip(comp)
                    .map(|((v, m), c)| (v - m) * c)
                    .sum()
            })
            .collect())
    }

    /// Mean field plus the component expansion of `pcs`.
    pub fn reconstruct(&self, pcs: &[f64]) -> Result<Vec<f64>> {
        if pcs.len() != self.k() {
            return Err(Error::Dimension(format!(
                "{} principal components for a basis of {}",
                pcs.len(),
                self.k()
            )));
        }
        let mut field = self.mean_field.clone();
        for (pc, comp) in pcs.iter().zip(&self.components) {
            for (f, c) in field.iter_mut().zip(comp) {
                *f += pc * c;
            }
        }
        Ok(field)
    }
}
