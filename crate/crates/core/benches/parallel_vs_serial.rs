//! Parallel vs serial dispatch over the pipeline's three hot loops:
//! fine-tuning episodes, per-parameter regression fitting, and per-target
//! child synthesis. "parallel" goes through `exec::map_indices` (rayon
//! under the default `parallel` feature), "serial" through
//! `exec::map_indices_seq`. `fit` has no in-process twin because its
//! dispatch is internal — compare `cargo bench` against
//! `cargo bench --no-default-features` for that one.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::Rng;

use weightcast::exec;
use weightcast::net::{build_network, ModelState, NetworkSpec};
use weightcast::predictors::{FeatureMapSpec, PredictorMatrix};
use weightcast::rng;
use weightcast::sensitivity::{run_episode, FocusSetConfig, SensitivityMatrix, SensitivityMode, TrainSet};
use weightcast::weightreg::{fit_linear, predict_child, PruneConfig, WeightRegressionModel};

const N_SAMPLES: usize = 128;
const N_EPISODES: usize = 64;
const N_TARGETS: usize = 256;

struct Fixture {
    parent: ModelState,
    inputs: Vec<Vec<f64>>,
    targets: Vec<Vec<f64>>,
    keys: Vec<f64>,
    focus: FocusSetConfig,
}

fn fixture() -> Fixture {
    let spec = NetworkSpec::elu_stack(4, &[16], 1, 7);
    let parent = build_network(&spec).unwrap();
    let mut r = rng::rng_from_seed(1);
    let inputs: Vec<Vec<f64>> = (0..N_SAMPLES)
        .map(|_| (0..4).map(|_| r.random::<f64>() * 2.0 - 1.0).collect())
        .collect();
    let targets: Vec<Vec<f64>> = (0..N_SAMPLES).map(|_| vec![r.random::<f64>()]).collect();
    let keys: Vec<f64> = (0..N_SAMPLES).map(|i| i as f64).collect();
    let focus = FocusSetConfig { n: 20, ..FocusSetConfig::default() };
    Fixture { parent, inputs, targets, keys, focus }
}

fn episode_collection(c: &mut Criterion) {
    let f = fixture();
    let mut g = c.benchmark_group("episode_collection");
    g.bench_function("parallel", |b| {
        b.iter(|| {
            let train = TrainSet::new(&f.inputs, &f.targets, &f.keys).unwrap();
            black_box(exec::map_indices(N_EPISODES, |i| {
                run_episode(&f.parent, &train, i, &f.focus).unwrap().params.values[0]
            }))
        })
    });
    g.bench_function("serial", |b| {
        b.iter(|| {
            let train = TrainSet::new(&f.inputs, &f.targets, &f.keys).unwrap();
            black_box(exec::map_indices_seq(N_EPISODES, |i| {
                run_episode(&f.parent, &train, i, &f.focus).unwrap().params.values[0]
            }))
        })
    });
    g.finish();
}

fn synthetic_sensitivities(parent: &ModelState) -> (SensitivityMatrix, PredictorMatrix) {
    let k = parent.param_count();
    let mut r = rng::rng_from_seed(2);
    let rows: Vec<Vec<f64>> = (0..N_EPISODES)
        .map(|_| {
            parent
                .params
                .values
                .iter()
                .map(|v| v + 0.01 * (r.random::<f64>() - 0.5))
                .collect()
        })
        .collect();
    assert_eq!(rows[0].len(), k);
    let sens = SensitivityMatrix {
        mode: SensitivityMode::Reset,
        store_anomalies: false,
        episode_indices: (0..N_EPISODES).collect(),
        episode_keys: (0..N_EPISODES).map(|i| i as f64).collect(),
        rows,
        baseline: parent.params.clone(),
        failed: Vec::new(),
    };
    let pred_rows: Vec<Vec<f64>> =
        (0..N_EPISODES).map(|_| (0..4).map(|_| r.random::<f64>()).collect()).collect();
    let names = (1..=4).map(|i| format!("pc{i}")).collect();
    let predictors = PredictorMatrix::from_rows(pred_rows, names, true).unwrap();
    (sens, predictors)
}

fn regression_fit(c: &mut Criterion) {
    let f = fixture();
    let (sens, predictors) = synthetic_sensitivities(&f.parent);
    let mask = vec![true; f.parent.param_count()];
    let mut g = c.benchmark_group("regression_fit");
    // dispatch is internal to the fit; rebuild without default features
    // to get the serial number
    g.bench_function("fit_linear", |b| {
        b.iter(|| {
            black_box(
                fit_linear(
                    &sens,
                    &predictors,
                    mask.clone(),
                    FeatureMapSpec::default(),
                    0.0,
                    PruneConfig::default(),
                )
                .unwrap(),
            )
        })
    });
    g.finish();
}

fn child_model(f: &Fixture) -> (WeightRegressionModel, Vec<Vec<f64>>) {
    let (sens, predictors) = synthetic_sensitivities(&f.parent);
    let mask = vec![true; f.parent.param_count()];
    let model = fit_linear(
        &sens,
        &predictors,
        mask,
        FeatureMapSpec::default(),
        0.0,
        PruneConfig::default(),
    )
    .unwrap();
    let mut r = rng::rng_from_seed(3);
    let rows: Vec<Vec<f64>> =
        (0..N_TARGETS).map(|_| (0..4).map(|_| r.random::<f64>() * 1.5).collect()).collect();
    (model, rows)
}

fn child_synthesis(c: &mut Criterion) {
    let f = fixture();
    let (model, rows) = child_model(&f);
    let mut g = c.benchmark_group("child_synthesis");
    g.bench_function("parallel", |b| {
        b.iter(|| {
            black_box(exec::map_indices(N_TARGETS, |i| {
                let child = predict_child(&model, &f.parent, &rows[i]).unwrap();
                child.forward(&f.inputs[i % N_SAMPLES]).unwrap()[0]
            }))
        })
    });
    g.bench_function("serial", |b| {
        b.iter(|| {
            black_box(exec::map_indices_seq(N_TARGETS, |i| {
                let child = predict_child(&model, &f.parent, &rows[i]).unwrap();
                child.forward(&f.inputs[i % N_SAMPLES]).unwrap()[0]
            }))
        })
    });
    g.finish();
}

criterion_group!(benches, episode_collection, regression_fit, child_synthesis);
criterion_main!(benches);
