//! Polynomial feature maps over predictor rows.
//!
//! Layout for p predictors: intercept first, then for each total degree
//! g = 1..=degree the pure powers r_i^g in column order, then (when
//! interactions are on) every mixed monomial of degree g in
//! lexicographic index order. For (r1, r2) at degree 2 with interactions:
//! 1, r1, r2, r1^2, r2^2, r1*r2.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureMapSpec {
    pub degree: usize,
    pub include_interactions: bool,
    /// Standardize predictor rows (with the frozen training stats)
    /// before expansion.
    pub standardize_before: bool,
}

impl Default for FeatureMapSpec {
    fn default() -> Self {
        FeatureMapSpec { degree: 1, include_interactions: true, standardize_before: true }
    }
}

impl FeatureMapSpec {
    pub fn validate(&self) -> Result<()> {
        if self.degree == 0 {
            return Err(Error::Config("feature map degree must be at least 1".into()));
        }
        Ok(())
    }

    /// Emit the degree->stability warning once per fit; extrapolating
    /// high-order fits amplifies noise in the slopes far outside the
    /// training range.
    pub fn warn_if_high_degree(&self) {
        if self.degree > 2 {
            log::warn!(
                "polynomial degree {} regression: high-order terms can chase noise and \
                 blow up when evaluated outside the training range",
                self.degree
            );
        }
    }
}

/// Monomial exponent tuples (as non-decreasing index multisets) for
/// degree g over p variables, mixed terms only, lexicographic order.
fn mixed_monomials(p: usize, g: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut stack = vec![0usize; g];
    fn rec(p: usize, g: usize, level: usize, start: usize, stack: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if level == g {
            // skip pure powers (all indices equal); they are emitted separately
            if stack.windows(2).any(|w| w[0] != w[1]) {
                out.push(stack.clone());
            }
            return;
        }
        for i in start..p {
            stack[level] = i;
            rec(p, g, level + 1, i, stack, out);
        }
    }
    rec(p, g, 0, 0, &mut stack, &mut out);
    out
}

/// Number of output features for `p` predictors under `spec`.
pub fn poly_feature_len(p: usize, spec: &FeatureMapSpec) -> usize {
    let mut n = 1; // intercept
    for g in 1..=spec.degree {
        n += p; // pure powers
        if spec.include_interactions && g > 1 {
            n += mixed_monomials(p, g).len();
        }
    }
    n
}

/// Expand one predictor row. The intercept is always the first feature.
pub fn poly_features(r: &[f64], spec: &FeatureMapSpec) -> Vec<f64> {
    let p = r.len();
    let mut out = Vec::with_capacity(poly_feature_len(p, spec));
    out.push(1.0);
    for g in 1..=spec.degree {
        for &v in r {
            out.push(v.powi(g as i32));
        }
        if spec.include_interactions && g > 1 {
            for mono in mixed_monomials(p, g) {
                out.push(mono.iter().map(|&i| r[i]).product());
            }
        }
    }
    out
}

/// Human-readable names for the expanded features, aligned with
/// [`poly_features`] output.
pub fn feature_names(names: &[String], spec: &FeatureMapSpec) -> Vec<String> {
    let p = names.len();
    let mut out = Vec::with_capacity(poly_feature_len(p, spec));
    out.push("1".to_string());
    for g in 1..=spec.degree {
        for n in names {
            out.push(if g == 1 { n.clone() } else { format!("{n}^{g}") });
        }
        if spec.include_interactions && g > 1 {
            for mono in mixed_monomials(p, g) {
                let mut label = String::new();
                for (j, &i) in mono.iter().enumerate() {
                    if j > 0 {
                        label.push('*');
                    }
                    label.push_str(&names[i]);
                }
                out.push(label);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degree_one_is_intercept_plus_identity() {
        let spec = FeatureMapSpec { degree: 1, ..FeatureMapSpec::default() };
        assert_eq!(poly_features(&[5.0, -3.0], &spec), vec![1.0, 5.0, -3.0]);
        assert_eq!(poly_feature_len(2, &spec), 3);
    }

    #[test]
    fn degree_two_with_interactions_matches_reference_order() {
        let spec = FeatureMapSpec { degree: 2, ..FeatureMapSpec::default() };
        assert_eq!(
            poly_features(&[2.0, 3.0], &spec),
            vec![1.0, 2.0, 3.0, 4.0, 9.0, 6.0]
        );
        let names: Vec<String> = vec!["r1".into(), "r2".into()];
        assert_eq!(
            feature_names(&names, &spec),
            vec!["1", "r1", "r2", "r1^2", "r2^2", "r1*r2"]
        );
    }

    #[test]
    fn four_predictors_degree_two_has_fifteen_features() {
        let spec = FeatureMapSpec { degree: 2, ..FeatureMapSpec::default() };
        assert_eq!(poly_feature_len(4, &spec), 15);
        let r = [1.0, 2.0, 3.0, 4.0];
        let f = poly_features(&r, &spec);
        assert_eq!(f.len(), 15);
        // spot-check block order: intercept, linear, squares, then pairs
        assert_eq!(&f[1..5], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(&f[5..9], &[1.0, 4.0, 9.0, 16.0]);
        assert_eq!(&f[9..], &[2.0, 3.0, 4.0, 6.0, 8.0, 12.0]);
    }

    #[test]
    fn no_interactions_drops_mixed_terms() {
        let spec = FeatureMapSpec {
            degree: 2,
            include_interactions: false,
            ..FeatureMapSpec::default()
        };
        assert_eq!(
            poly_features(&[2.0, 3.0], &spec),
            vec![1.0, 2.0, 3.0, 4.0, 9.0]
        );
    }

    #[test]
    fn higher_degrees_nest_consistently() {
        // degree 3, 2 vars: 1 | r1 r2 | r1^2 r2^2 r1r2 | r1^3 r2^3 r1^2r2 r1r2^2
        let spec = FeatureMapSpec { degree: 3, ..FeatureMapSpec::default() };
        let f = poly_features(&[2.0, 3.0], &spec);
        assert_eq!(f, vec![1.0, 2.0, 3.0, 4.0, 9.0, 6.0, 8.0, 27.0, 12.0, 18.0]);
        assert_eq!(poly_feature_len(2, &spec), f.len());
        // lengths follow the multiset formula when interactions are on:
        // 1 + sum_g C(p+g-1, g)
        let spec4 = FeatureMapSpec { degree: 4, ..FeatureMapSpec::default() };
        assert_eq!(poly_feature_len(3, &spec4), 1 + 3 + 6 + 10 + 15);
    }

    #[test]
    fn zero_degree_rejected() {
        assert!(FeatureMapSpec { degree: 0, ..FeatureMapSpec::default() }
            .validate()
            .is_err());
    }
}
