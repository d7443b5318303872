//! Independent oracles shared by the oracle suite and the acceptance
//! gate. Everything here recomputes results from first principles
//! (finite differences, Gauss-Jordan normal equations, sort-based
//! quantiles) without touching the library's solvers.

use rand::Rng;

use weightcast::eval::{box_stats, BoxStats};
use weightcast::net::{
    backward, build_network, evaluate_loss, load_checkpoint, save_checkpoint, Checkpoint,
    ModelState, NetworkSpec,
};
use weightcast::predictors::{fit_eof, poly_features, FeatureMapSpec, PredictorMatrix};
use weightcast::rng;
use weightcast::sensitivity::{SensitivityMatrix, SensitivityMode};
use weightcast::weightreg::{fit_linear, PruneConfig, RegressionFamily};

// -------------------------------------------------------------------
// (a) analytic gradients vs central finite differences

/// Largest relative gradient error over `n_nets` random networks with
/// random parameters and batches. Relative error floors its denominator
/// at 1e-3 so finite-difference noise on near-zero components (absolute
/// error ~1e-10 at h = 1e-5) cannot masquerade as gradient error.
pub fn fd_gradient_max_rel_err(n_nets: usize, h: f64) -> f64 {
    let mut r = rng::rng_from_seed(42);
    let mut worst = 0.0f64;
    for t in 0..n_nets {
        let input = 1 + (r.random::<u64>() % 4) as usize;
        let output = 1 + (r.random::<u64>() % 2) as usize;
        let n_hidden = (r.random::<u64>() % 3) as usize;
        let hidden: Vec<usize> =
            (0..n_hidden).map(|_| 2 + (r.random::<u64>() % 5) as usize).collect();
        let spec = NetworkSpec::elu_stack(input, &hidden, output, t as u64);
        let mut model = build_network(&spec).unwrap();
        for v in &mut model.params.values {
            *v = r.random::<f64>() * 2.0 - 1.0;
        }
        let batch_in: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..input).map(|_| r.random::<f64>() * 2.0 - 1.0).collect())
            .collect();
        let batch_tg: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..output).map(|_| r.random::<f64>() * 2.0 - 1.0).collect())
            .collect();
        let batch: Vec<(&[f64], &[f64])> = batch_in
            .iter()
            .zip(&batch_tg)
            .map(|(x, y)| (x.as_slice(), y.as_slice()))
            .collect();
        let (grad, _) = backward(&model, &batch).unwrap();

        for k in 0..model.param_count() {
            let orig = model.params.values[k];
            let mut probe = model.clone();
            probe.params.values[k] = orig + h;
            let up = evaluate_loss(&probe, &batch_in, &batch_tg).unwrap();
            probe.params.values[k] = orig - h;
            let down = evaluate_loss(&probe, &batch_in, &batch_tg).unwrap();
            let fd = (up - down) / (2.0 * h);
            let rel = (grad[k] - fd).abs() / grad[k].abs().max(fd.abs()).max(1e-3);
            worst = worst.max(rel);
        }
    }
    worst
}

// -------------------------------------------------------------------
// (b) per-parameter OLS vs hand-rolled normal equations

/// Gauss-Jordan with partial pivoting; None on a (near-)singular system.
pub fn solve_gauss_jordan(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())?;
        if a[pivot_row][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot_row);
        b.swap(col, pivot_row);
        let d = a[col][col];
        for x in a[col].iter_mut() {
            *x /= d;
        }
        b[col] /= d;
        for row in 0..n {
            if row == col {
                continue;
            }
            let f = a[row][col];
            if f == 0.0 {
                continue;
            }
            for k in 0..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    Some(b)
}

/// Fit the library's per-parameter regression on a random problem and
/// re-derive every coefficient vector by explicitly solving
/// (XᵀX + λD) β = Xᵀy with Gauss-Jordan. Returns the worst relative
/// coefficient discrepancy over both λ = 0 and λ = 0.5.
pub fn ols_vs_normal_equations_max_rel_err() -> f64 {
    let mut r = rng::rng_from_seed(7);
    let n = 48;
    let p = 3;
    let spec = NetworkSpec::elu_stack(2, &[3], 1, 5);
    let parent = build_network(&spec).unwrap();
    let k = parent.param_count();

    let pred_rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..p).map(|_| r.random::<f64>() * 4.0 - 2.0).collect())
        .collect();
    let feature_spec =
        FeatureMapSpec { degree: 2, include_interactions: true, standardize_before: false };
    // per-parameter targets: smooth in the predictors plus decorrelated jitter
    let rows: Vec<Vec<f64>> = pred_rows
        .iter()
        .map(|row| {
            (0..k)
                .map(|j| {
                    let jf = j as f64;
                    parent.params.values[j]
                        + 0.3 * row[0]
                        + 0.1 * jf.sin() * row[1] * row[2]
                        + 0.05 * (jf + row[0] * 7.0).cos()
                })
                .collect()
        })
        .collect();
    let sens = SensitivityMatrix {
        mode: SensitivityMode::Reset,
        store_anomalies: false,
        episode_indices: (0..n).collect(),
        episode_keys: (0..n).map(|i| i as f64).collect(),
        rows,
        baseline: parent.params.clone(),
        failed: Vec::new(),
    };

    let mut worst = 0.0f64;
    for lambda in [0.0, 0.5] {
        let predictors = PredictorMatrix::from_rows(
            pred_rows.clone(),
            (0..p).map(|i| format!("r{i}")).collect(),
            false,
        )
        .unwrap();
        let model = fit_linear(
            &sens,
            &predictors,
            vec![true; k],
            feature_spec.clone(),
            lambda,
            PruneConfig::default(),
        )
        .unwrap();
        let family = match &model.family {
            RegressionFamily::Linear(f) => f,
            RegressionFamily::SharedNn(_) => unreachable!("linear fit"),
        };

        let x: Vec<Vec<f64>> =
            pred_rows.iter().map(|row| poly_features(row, &feature_spec)).collect();
        let nf = x[0].len();
        let mut xtx = vec![vec![0.0; nf]; nf];
        for row in &x {
            for i in 0..nf {
                for j in 0..nf {
                    xtx[i][j] += row[i] * row[j];
                }
            }
        }
        for (j, diag) in xtx.iter_mut().enumerate().skip(1) {
            diag[j] += lambda;
        }
        for (pos, &param) in family.predicted.iter().enumerate() {
            let y = sens.total_column(param);
            let mut xty = vec![0.0; nf];
            for (row, &yi) in x.iter().zip(&y) {
                for j in 0..nf {
                    xty[j] += row[j] * yi;
                }
            }
            let oracle = solve_gauss_jordan(xtx.clone(), xty).expect("well-conditioned");
            for (a, b) in family.coefficients[pos].iter().zip(&oracle) {
                let rel = (a - b).abs() / a.abs().max(b.abs()).max(1e-6);
                worst = worst.max(rel);
            }
        }
    }
    worst
}

// -------------------------------------------------------------------
// (c) EOF orthonormality

/// Largest deviation of the fitted components' Gram matrix from the
/// identity, over a batch of random field collections.
pub fn eof_max_orthonormality_dev() -> f64 {
    let mut r = rng::rng_from_seed(11);
    let mut worst = 0.0f64;
    for trial in 0..10 {
        let d = 6 + trial;
        let n = 40 + 3 * trial;
        let fields: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| r.random::<f64>() * 3.0 - 1.5).collect())
            .collect();
        let k = 2 + trial % 4;
        let basis = fit_eof(&fields, k).unwrap();
        for i in 0..basis.k() {
            for j in 0..basis.k() {
                let dot: f64 = basis.components[i]
                    .iter()
                    .zip(&basis.components[j])
                    .map(|(a, b)| a * b)
                    .sum();
                let expected = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot - expected).abs());
            }
        }
    }
    worst
}

// -------------------------------------------------------------------
// (d) flatten/unflatten and checkpoint round-trips

/// Bit-exact layer/flat and disk round-trips over random networks whose
/// parameters include negative zero, subnormals, and extreme magnitudes.
pub fn roundtrips_bit_exact(n_nets: usize) -> Result<(), String> {
    let mut r = rng::rng_from_seed(23);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    for t in 0..n_nets {
        let input = 1 + (r.random::<u64>() % 4) as usize;
        let output = 1 + (r.random::<u64>() % 3) as usize;
        let hidden: Vec<usize> = (0..(r.random::<u64>() % 3) as usize)
            .map(|_| 1 + (r.random::<u64>() % 6) as usize)
            .collect();
        let spec = NetworkSpec::elu_stack(input, &hidden, output, t as u64);
        let mut model = build_network(&spec).unwrap();
        let specials = [-0.0, 5e-324, f64::MIN_POSITIVE, -1e300, 1e-300];
        for (j, v) in model.params.values.iter_mut().enumerate() {
            *v = if j % 7 == 0 {
                specials[j % specials.len()]
            } else {
                r.random::<f64>() * 2.0 - 1.0
            };
        }

        let layers = spec.unflatten(&model.params).map_err(|e| e.to_string())?;
        let back = spec.flatten(&layers).map_err(|e| e.to_string())?;
        for (k, (a, b)) in model.params.values.iter().zip(&back.values).enumerate() {
            if a.to_bits() != b.to_bits() {
                return Err(format!("net {t}: flatten round-trip changed parameter {k}: {a:?} -> {b:?}"));
            }
        }

        let path = dir.path().join(format!("m{t}.json"));
        let ckpt = Checkpoint::from_model(&model, None, None, Default::default());
        save_checkpoint(&path, &ckpt).map_err(|e| e.to_string())?;
        let loaded = load_checkpoint(&path).map_err(|e| e.to_string())?;
        let restored: ModelState = loaded.into_model().map_err(|e| e.to_string())?;
        if restored.spec != model.spec || restored.trainable_mask != model.trainable_mask {
            return Err(format!("net {t}: checkpoint changed spec or mask"));
        }
        for (k, (a, b)) in
            model.params.values.iter().zip(&restored.params.values).enumerate()
        {
            if a.to_bits() != b.to_bits() {
                return Err(format!("net {t}: checkpoint changed parameter {k}: {a:?} -> {b:?}"));
            }
        }
    }
    Ok(())
}

// -------------------------------------------------------------------
// (e) box statistics vs a sort-based oracle

fn oracle_quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (sorted[hi] - sorted[lo]) * (h - lo as f64)
    }
}

fn oracle_box(values: &[f64]) -> BoxStats {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    BoxStats {
        min: sorted[0],
        q1: oracle_quantile(&sorted, 0.25),
        median: oracle_quantile(&sorted, 0.5),
        q3: oracle_quantile(&sorted, 0.75),
        max: sorted[n - 1],
        mean: sorted.iter().sum::<f64>() / n as f64,
        n,
    }
}

/// Exact agreement (bitwise on every field) between the library's box
/// statistics and the sort-based oracle, over assorted lengths
/// including ties, negatives, and single elements.
pub fn box_stats_exact_vs_oracle() -> Result<(), String> {
    let mut r = rng::rng_from_seed(31);
    let mut cases: Vec<Vec<f64>> = vec![
        vec![1.0],
        vec![2.0, 1.0],
        vec![3.0, 1.0, 2.0, 4.0],
        vec![5.0; 9],
        vec![-1.5, 0.0, -0.0, 2.5, -3.0, 2.5],
    ];
    for len in [3usize, 7, 10, 25, 101] {
        cases.push((0..len).map(|_| (r.random::<f64>() * 20.0 - 10.0).round() / 2.0).collect());
    }
    for values in &cases {
        let got = box_stats(values).map_err(|e| e.to_string())?;
        let want = oracle_box(values);
        let pairs = [
            ("min", got.min, want.min),
            ("q1", got.q1, want.q1),
            ("median", got.median, want.median),
            ("q3", got.q3, want.q3),
            ("max", got.max, want.max),
            ("mean", got.mean, want.mean),
        ];
        for (name, a, b) in pairs {
            if a.to_bits() != b.to_bits() {
                return Err(format!("{name} differs on {values:?}: {a:?} vs oracle {b:?}"));
            }
        }
        if got.n != want.n {
            return Err(format!("n differs on {values:?}"));
        }
    }
    Ok(())
}
