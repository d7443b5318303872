//! Evaluation harness: run parent and per-target child models over a
//! target set, compute windowed RMSEs and pairwise parent-minus-child
//! differences, and summarize ensembles with box statistics.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write as _};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::ModelState;
use crate::stats;

/// Half-open or closed interval of ordering keys. `None` bounds are
/// unbounded; `exclusive_lo`/`exclusive_hi` turn a bound into a strict
/// inequality (used for "strictly beyond end of training").
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalWindow {
    pub name: String,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    #[serde(default)]
    pub exclusive_lo: bool,
    #[serde(default)]
    pub exclusive_hi: bool,
}

pub const WINDOW_FULL: &str = "full_period";
pub const WINDOW_WITHIN: &str = "within_training";
pub const WINDOW_BEYOND_EOT: &str = "beyond_eot";
pub const WINDOW_FIXED_TAIL: &str = "fixed_tail";

impl EvalWindow {
    pub fn range(name: impl Into<String>, lo: f64, hi: f64) -> Result<Self> {
        if !(lo <= hi) {
            return Err(Error::Config(format!(
                "window bounds out of order: [{lo}, {hi}]"
            )));
        }
        Ok(EvalWindow {
            name: name.into(),
            lo: Some(lo),
            hi: Some(hi),
            exclusive_lo: false,
            exclusive_hi: false,
        })
    }

    /// Everything.
    pub fn full_period() -> Self {
        EvalWindow {
            name: WINDOW_FULL.into(),
            lo: None,
            hi: None,
            exclusive_lo: false,
            exclusive_hi: false,
        }
    }

    /// Keys strictly greater than the end of training.
    pub fn beyond_eot(eot: f64) -> Self {
        EvalWindow {
            name: WINDOW_BEYOND_EOT.into(),
            lo: Some(eot),
            hi: None,
            exclusive_lo: true,
            exclusive_hi: false,
        }
    }

    pub fn fixed_tail(lo: f64, hi: f64) -> Result<Self> {
        let mut w = EvalWindow::range(WINDOW_FIXED_TAIL, lo, hi)?;
        w.name = WINDOW_FIXED_TAIL.into();
        Ok(w)
    }

    pub fn contains(&self, key: f64) -> bool {
        let lo_ok = match self.lo {
            Some(lo) if self.exclusive_lo => key > lo,
            Some(lo) => key >= lo,
            None => true,
        };
        let hi_ok = match self.hi {
            Some(hi) if self.exclusive_hi => key < hi,
            Some(hi) => key <= hi,
            None => true,
        };
        lo_ok && hi_ok
    }

    pub fn validate(&self) -> Result<()> {
        if let (Some(lo), Some(hi)) = (self.lo, self.hi) {
            if !(lo <= hi) {
                return Err(Error::Config(format!(
                    "window {:?} bounds out of order: [{lo}, {hi}]",
                    self.name
                )));
            }
        }
        Ok(())
    }
}

/// Aligned per-target series: ordering key, truth, parent prediction and
/// child prediction for every target sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedSeries {
    pub keys: Vec<f64>,
    pub target: Vec<Vec<f64>>,
    pub parent: Vec<Vec<f64>>,
    pub child: Vec<Vec<f64>>,
}

impl PairedSeries {
    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }
}

/// Run the parent over every target and each target's own child over just
/// that target. `child_at(i)` supplies the child for sample `i`; pass a
/// closure returning the same model every time for a shared child.
pub fn apply_models(
    parent: &ModelState,
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
    keys: &[f64],
    mut child_at: impl FnMut(usize) -> Result<ModelState>,
) -> Result<PairedSeries> {
    if inputs.len() != targets.len() || inputs.len() != keys.len() {
        return Err(Error::Dimension(format!(
            "target set slices disagree: {} inputs, {} targets, {} keys",
            inputs.len(),
            targets.len(),
            keys.len()
        )));
    }
    let out_dim = parent.spec.output_dim();
    let mut series = PairedSeries {
        keys: keys.to_vec(),
        target: targets.to_vec(),
        parent: Vec::with_capacity(inputs.len()),
        child: Vec::with_capacity(inputs.len()),
    };
    for (i, (input, target)) in inputs.iter().zip(targets).enumerate() {
        if target.len() != out_dim {
            return Err(Error::Dimension(format!(
                "target {i} has {} values, model outputs {out_dim}",
                target.len()
            )));
        }
        series.parent.push(parent.forward(input)?);
        let child = child_at(i)?;
        let child_out = child.forward(input)?;
        if child_out.len() != out_dim {
            return Err(Error::Dimension(format!(
                "child {i} outputs {} values, parent outputs {out_dim}",
                child_out.len()
            )));
        }
        series.child.push(child_out);
    }
    Ok(series)
}

/// RMSE of one model's series over the samples a window selects; `None`
/// when the window is empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowResult {
    pub window: String,
    pub n: usize,
    pub parent_rmse: Option<f64>,
    pub child_rmse: Option<f64>,
    /// parent_rmse - child_rmse; positive means the child improved.
    pub diff: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub windows: Vec<WindowResult>,
    pub eot: Option<f64>,
    /// Free-form run metadata (seeds, feature description, ...).
    pub meta: BTreeMap<String, String>,
}

impl EvalReport {
    pub fn window(&self, name: &str) -> Option<&WindowResult> {
        self.windows.iter().find(|w| w.window == name)
    }
}

/// Windowed parent/child RMSEs with pairwise differences. Multi-output
/// models pool squared errors across output components.
pub fn rmse_windows(series: &PairedSeries, windows: &[EvalWindow]) -> Result<EvalReport> {
    if series.target.len() != series.len()
        || series.parent.len() != series.len()
        || series.child.len() != series.len()
    {
        return Err(Error::Dimension("paired series lengths disagree".into()));
    }
    let mut report = EvalReport::default();
    for w in windows {
        w.validate()?;
        let mut n = 0usize;
        let mut dims = 0usize;
        let mut sq_parent = 0.0;
        let mut sq_child = 0.0;
        for (i, &key) in series.keys.iter().enumerate() {
            if !w.contains(key) {
                continue;
            }
            n += 1;
            dims += series.target[i].len();
            for ((t, p), c) in series.target[i]
                .iter()
                .zip(&series.parent[i])
                .zip(&series.child[i])
            {
                sq_parent += (p - t) * (p - t);
                sq_child += (c - t) * (c - t);
            }
        }
        let (parent_rmse, child_rmse, diff) = if n == 0 {
            (None, None, None)
        } else {
            let p = (sq_parent / dims as f64).sqrt();
            let c = (sq_child / dims as f64).sqrt();
            (Some(p), Some(c), Some(p - c))
        };
        report.windows.push(WindowResult {
            window: w.name.clone(),
            n,
            parent_rmse,
            child_rmse,
            diff,
        });
    }
    Ok(report)
}

/// How `grouped_rmse` buckets the grouping values.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum GroupBins {
    /// One bin per distinct value (exact equality), ascending.
    Unique,
    /// `n_bins` equal-width bins over [lo, hi]; values outside are dropped.
    Uniform { n_bins: usize, lo: f64, hi: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupRmse {
    /// Distinct value (Unique) or bin center (Uniform).
    pub label: f64,
    pub n: usize,
    pub parent_rmse: f64,
    pub child_rmse: f64,
}

/// Per-bin RMSE over a grouping variable with every sample weighted
/// equally. Empty bins are omitted.
pub fn grouped_rmse(
    series: &PairedSeries,
    group: &[f64],
    bins: &GroupBins,
) -> Result<Vec<GroupRmse>> {
    if group.len() != series.len() {
        return Err(Error::Dimension(format!(
            "{} group values for {} samples",
            group.len(),
            series.len()
        )));
    }
    if group.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("grouping values".into()));
    }
    // bin id per sample, or None to drop
    let assign: Vec<Option<usize>> = match bins {
        GroupBins::Unique => {
            let mut sorted: Vec<f64> = group.to_vec();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            sorted.dedup();
            let idx = |v: f64| sorted.partition_point(|&s| s < v);
            group.iter().map(|&g| Some(idx(g))).collect()
        }
        GroupBins::Uniform { n_bins, lo, hi } => {
            if *n_bins == 0 || !(lo < hi) {
                return Err(Error::Config(format!(
                    "uniform bins need n_bins >= 1 and lo < hi, got {n_bins} over [{lo}, {hi}]"
                )));
            }
            group
                .iter()
                .map(|&g| {
                    if g < *lo || g > *hi {
                        None
                    } else {
                        let f = (g - lo) / (hi - lo) * *n_bins as f64;
                        Some((f as usize).min(n_bins - 1))
                    }
                })
                .collect()
        }
    };
    let n_bins = match bins {
        GroupBins::Unique => assign.iter().flatten().max().map_or(0, |m| m + 1),
        GroupBins::Uniform { n_bins, .. } => *n_bins,
    };
    let mut count = vec![0usize; n_bins];
    let mut dims = vec![0usize; n_bins];
    let mut sq_parent = vec![0.0; n_bins];
    let mut sq_child = vec![0.0; n_bins];
    for (i, bin) in assign.iter().enumerate() {
        let Some(b) = *bin else { continue };
        count[b] += 1;
        dims[b] += series.target[i].len();
        for ((t, p), c) in series.target[i]
            .iter()
            .zip(&series.parent[i])
            .zip(&series.child[i])
        {
            sq_parent[b] += (p - t) * (p - t);
            sq_child[b] += (c - t) * (c - t);
        }
    }
    let labels: Vec<f64> = match bins {
        GroupBins::Unique => {
            let mut sorted: Vec<f64> = group.to_vec();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            sorted.dedup();
            sorted
        }
        GroupBins::Uniform { n_bins, lo, hi } => (0..*n_bins)
            .map(|b| lo + (b as f64 + 0.5) * (hi - lo) / *n_bins as f64)
            .collect(),
    };
    Ok((0..n_bins)
        .filter(|&b| count[b] > 0)
        .map(|b| GroupRmse {
            label: labels[b],
            n: count[b],
            parent_rmse: (sq_parent[b] / dims[b] as f64).sqrt(),
            child_rmse: (sq_child[b] / dims[b] as f64).sqrt(),
        })
        .collect())
}

/// Five-number summary plus mean, quartiles by linear interpolation
/// between order statistics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
    pub n: usize,
}

pub fn box_stats(values: &[f64]) -> Result<BoxStats> {
    if values.is_empty() {
        return Err(Error::Config("box statistics need at least one value".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("box statistics input".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(BoxStats {
        min: sorted[0],
        q1: stats::quantile_sorted(&sorted, 0.25),
        median: stats::quantile_sorted(&sorted, 0.5),
        q3: stats::quantile_sorted(&sorted, 0.75),
        max: sorted[sorted.len() - 1],
        mean: stats::mean(&sorted),
        n: sorted.len(),
    })
}

/// Pairwise diffs for one named window across many reports; absent
/// windows are skipped.
pub fn window_diffs(reports: &[EvalReport], window: &str) -> Vec<f64> {
    reports
        .iter()
        .filter_map(|r| r.window(window).and_then(|w| w.diff))
        .collect()
}

pub fn fraction_positive(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().filter(|&&v| v > 0.0).count() as f64 / values.len() as f64
}

// ---------------------------------------------------------------------
// CSV exports for external plotting.

fn fmt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One row per (report, window).
pub fn write_reports_csv(path: &Path, reports: &[EvalReport]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "run,window,n,parent_rmse,child_rmse,diff,eot")?;
    for (run, report) in reports.iter().enumerate() {
        for win in &report.windows {
            writeln!(
                w,
                "{run},{},{},{},{},{},{}",
                win.window,
                win.n,
                fmt(win.parent_rmse),
                fmt(win.child_rmse),
                fmt(win.diff),
                fmt(report.eot),
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Plot-data series: key, truth, parent, child (one column per output
/// component when the model has several).
pub fn write_series_csv(path: &Path, series: &PairedSeries) -> Result<()> {
    let dim = series.target.first().map_or(0, Vec::len);
    let mut w = BufWriter::new(File::create(path)?);
    let cols = |base: &str| -> String {
        if dim == 1 {
            base.to_string()
        } else {
            (0..dim).map(|d| format!("{base}{d}")).collect::<Vec<_>>().join(",")
        }
    };
    writeln!(w, "key,{},{},{}", cols("target"), cols("parent"), cols("child"))?;
    for i in 0..series.len() {
        let row = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
        writeln!(
            w,
            "{},{},{},{}",
            series.keys[i],
            row(&series.target[i]),
            row(&series.parent[i]),
            row(&series.child[i]),
        )?;
    }
    w.flush()?;
    Ok(())
}

/// One row per labeled box (window name, EOT bucket, ...).
pub fn write_box_csv(path: &Path, rows: &[(String, BoxStats)]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "label,n,min,q1,median,q3,max,mean")?;
    for (label, b) in rows {
        writeln!(
            w,
            "{label},{},{},{},{},{},{},{}",
            b.n, b.min, b.q1, b.median, b.q3, b.max, b.mean
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_grouped_csv(path: &Path, rows: &[GroupRmse]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "group,n,parent_rmse,child_rmse,diff")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.label,
            r.n,
            r.parent_rmse,
            r.child_rmse,
            r.parent_rmse - r.child_rmse
        )?;
    }
    w.flush()?;
    Ok(())
}
