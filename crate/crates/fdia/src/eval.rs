//! Detection metrics and inference latency benchmarking.

use crate::dataset::{Sample, Scaler};
use crate::nn::{predict, Model};
use crate::{FdiaError, Result};
use std::time::Instant;

/// Confusion counts at a fixed threshold; the attacked class is positive.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Metrics {
    pub threshold: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    pub accuracy: f64,
    /// Detection rate TP / (TP + FN); `None` when no attacked samples exist.
    pub detection_rate: Option<f64>,
    /// False-alarm rate FP / (FP + TN); `None` when no clean samples exist.
    pub false_alarm_rate: Option<f64>,
}

impl Metrics {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Score every sample and tally the confusion matrix at `threshold`
/// (probabilities strictly above it are flagged as attacks).
pub fn evaluate(
    model: &Model,
    scaler: &Scaler,
    samples: &[Sample],
    threshold: f64,
) -> Result<Metrics> {
    if samples.is_empty() {
        return Err(FdiaError::Config("evaluation split is empty".into()));
    }
    if !threshold.is_finite() {
        return Err(FdiaError::Config(format!(
            "threshold must be finite, got {threshold}"
        )));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    for s in samples {
        let p = predict(model, scaler, &s.features)?;
        let flagged = p > threshold;
        match (s.label, flagged) {
            (true, true) => tp += 1,
            (true, false) => fn_ += 1,
            (false, true) => fp += 1,
            (false, false) => tn += 1,
        }
    }
    let total = samples.len() as f64;
    Ok(Metrics {
        threshold,
        tp,
        fp,
        tn,
        fn_,
        accuracy: (tp + tn) as f64 / total,
        detection_rate: if tp + fn_ > 0 {
            Some(tp as f64 / (tp + fn_) as f64)
        } else {
            None
        },
        false_alarm_rate: if fp + tn > 0 {
            Some(fp as f64 / (fp + tn) as f64)
        } else {
            None
        },
    })
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct LatencyReport {
    pub repeats: usize,
    pub warmup: usize,
    pub mean_us: f64,
    pub median_us: f64,
    pub p95_us: f64,
    pub min_us: f64,
    pub max_us: f64,
}

/// Time single-sample inference over `repeats` timed passes, cycling through
/// `samples`. The first `warmup` passes are excluded from the statistics.
pub fn benchmark_inference(
    model: &Model,
    scaler: &Scaler,
    samples: &[Sample],
    repeats: usize,
    warmup: usize,
) -> Result<LatencyReport> {
    if samples.is_empty() {
        return Err(FdiaError::Config("benchmark needs at least one sample".into()));
    }
    if repeats == 0 {
        return Err(FdiaError::Config("benchmark needs at least one repeat".into()));
    }
    let mut times_us = Vec::with_capacity(repeats);
    for pass in 0..warmup + repeats {
        let s = &samples[pass % samples.len()];
        let start = Instant::now();
        let p = predict(model, scaler, &s.features)?;
        let elapsed = start.elapsed().as_secs_f64() * 1e6;
        std::hint::black_box(p);
        if pass >= warmup {
            times_us.push(elapsed);
        }
    }
    times_us.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mean = times_us.iter().sum::<f64>() / times_us.len() as f64;
    let quantile = |q: f64| -> f64 {
        let idx = ((times_us.len() - 1) as f64 * q).round() as usize;
        times_us[idx]
    };
    Ok(LatencyReport {
        repeats,
        warmup,
        mean_us: mean,
        median_us: quantile(0.5),
        p95_us: quantile(0.95),
        min_us: times_us[0],
        max_us: *times_us.last().unwrap(),
    })
}
