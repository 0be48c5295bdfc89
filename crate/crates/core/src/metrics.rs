//! Evaluation metrics: attitude propagation, label alignment, action
//! frequencies and questionnaire distribution statistics. All functions are pure.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{attitude_of, ActionKind, Stance};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("step {0} has no attitude values")]
    EmptyStep(usize),
    #[error("series is empty")]
    EmptySeries,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("at least {needed} values required, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("zero variance")]
    DegenerateVariance,
    #[error("at least 2 respondents required, got {0}")]
    TooFewRespondents(usize),
    #[error("empty input")]
    EmptyInput,
    #[error("label `{0}` is not in the label set")]
    UnknownLabel(String),
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Absolute deviation of the mean attitude from the neutral baseline.
pub fn bias(values: &[f64]) -> Result<f64, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::EmptyStep(0));
    }
    Ok(mean(values).abs())
}

/// Population standard deviation of attitudes.
pub fn diversity(values: &[f64]) -> Result<f64, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::EmptyStep(0));
    }
    let m = mean(values);
    let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / values.len() as f64;
    Ok(var.sqrt())
}

/// Per-step attitude values, one per active agent.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AttitudeSeries {
    pub steps: Vec<Vec<f64>>,
}

impl AttitudeSeries {
    pub fn new(steps: Vec<Vec<f64>>) -> Self {
        Self { steps }
    }

    pub fn from_stances(steps: &[Vec<Stance>]) -> Self {
        Self {
            steps: steps
                .iter()
                .map(|s| s.iter().map(|&st| f64::from(attitude_of(st))).collect())
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Mean attitude per step; empty steps give an error.
    pub fn mean_series(&self) -> Result<Vec<f64>, MetricsError> {
        self.steps
            .iter()
            .enumerate()
            .map(|(t, v)| {
                if v.is_empty() {
                    Err(MetricsError::EmptyStep(t))
                } else {
                    Ok(mean(v))
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaSeries {
    pub delta_bias: Vec<f64>,
    pub delta_div: Vec<f64>,
    pub mean_delta_bias: f64,
    pub mean_delta_div: f64,
    pub final_delta_bias: f64,
    pub final_delta_div: f64,
}

pub fn delta_series(sim: &AttitudeSeries, real: &AttitudeSeries) -> Result<DeltaSeries, MetricsError> {
    if sim.len() != real.len() {
        return Err(MetricsError::LengthMismatch {
            left: sim.len(),
            right: real.len(),
        });
    }
    if sim.is_empty() {
        return Err(MetricsError::EmptySeries);
    }
    let mut delta_bias = Vec::with_capacity(sim.len());
    let mut delta_div = Vec::with_capacity(sim.len());
    for (t, (s, r)) in sim.steps.iter().zip(&real.steps).enumerate() {
        let step_err = |_| MetricsError::EmptyStep(t);
        delta_bias.push((bias(s).map_err(step_err)? - bias(r).map_err(step_err)?).abs());
        delta_div.push((diversity(s).map_err(step_err)? - diversity(r).map_err(step_err)?).abs());
    }
    Ok(DeltaSeries {
        mean_delta_bias: mean(&delta_bias),
        mean_delta_div: mean(&delta_div),
        final_delta_bias: *delta_bias.last().expect("non-empty"),
        final_delta_div: *delta_div.last().expect("non-empty"),
        delta_bias,
        delta_div,
    })
}

/// Dynamic time warping with absolute-difference cost and no window.
pub fn dtw(x: &[f64], y: &[f64]) -> Result<f64, MetricsError> {
    if x.is_empty() || y.is_empty() {
        return Err(MetricsError::EmptySeries);
    }
    let m = y.len();
    let mut prev = vec![f64::INFINITY; m + 1];
    let mut cur = vec![f64::INFINITY; m + 1];
    prev[0] = 0.0;
    for xi in x {
        cur[0] = f64::INFINITY;
        for j in 1..=m {
            let best = prev[j].min(cur[j - 1]).min(prev[j - 1]);
            cur[j] = (xi - y[j - 1]).abs() + best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m])
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    /// `counts[true][predicted]`
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(labels: Vec<String>) -> Self {
        let n = labels.len();
        Self {
            labels,
            counts: vec![vec![0; n]; n],
        }
    }

    pub fn from_pairs<'a>(
        labels: Vec<String>,
        pairs: impl IntoIterator<Item = (&'a str, &'a str)>,
    ) -> Result<Self, MetricsError> {
        let mut cm = Self::new(labels);
        for (t, p) in pairs {
            cm.add(t, p)?;
        }
        Ok(cm)
    }

    fn index(&self, label: &str) -> Result<usize, MetricsError> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| MetricsError::UnknownLabel(label.to_string()))
    }

    pub fn add(&mut self, truth: &str, predicted: &str) -> Result<(), MetricsError> {
        let t = self.index(truth)?;
        let p = self.index(predicted)?;
        self.counts[t][p] += 1;
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.labels.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn accuracy(&self) -> Option<f64> {
        let total = self.total();
        (total > 0).then(|| self.correct() as f64 / total as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Number of true instances.
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrfReport {
    pub per_class: Vec<ClassScores>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub micro_precision: f64,
    pub micro_recall: f64,
    pub micro_f1: f64,
    pub accuracy: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Per-class and averaged precision/recall/F1. Macro averages run over
/// classes that occur in the true labels.
pub fn macro_prf(cm: &ConfusionMatrix) -> Result<PrfReport, MetricsError> {
    let total = cm.total();
    if total == 0 {
        return Err(MetricsError::EmptyInput);
    }
    let n = cm.labels.len();
    let mut per_class = Vec::with_capacity(n);
    for i in 0..n {
        let tp = cm.counts[i][i];
        let predicted: u64 = (0..n).map(|t| cm.counts[t][i]).sum();
        let actual: u64 = cm.counts[i].iter().sum();
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, actual);
        per_class.push(ClassScores {
            label: cm.labels[i].clone(),
            precision,
            recall,
            f1: harmonic(precision, recall),
            support: actual,
        });
    }
    let present: Vec<&ClassScores> = per_class.iter().filter(|c| c.support > 0).collect();
    let k = present.len() as f64;
    let avg = |f: fn(&ClassScores) -> f64| present.iter().map(|c| f(c)).sum::<f64>() / k;
    // single-label multiclass: micro precision = micro recall = accuracy
    let accuracy = ratio(cm.correct(), total);
    Ok(PrfReport {
        macro_precision: avg(|c| c.precision),
        macro_recall: avg(|c| c.recall),
        macro_f1: avg(|c| c.f1),
        micro_precision: accuracy,
        micro_recall: accuracy,
        micro_f1: accuracy,
        accuracy,
        per_class,
    })
}

/// Normalized frequency of each action kind, in `ActionKind::ALL` order.
pub fn action_histogram(actions: &[ActionKind]) -> Result<[f64; 5], MetricsError> {
    if actions.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut h = [0.0; 5];
    for a in actions {
        h[a.index()] += 1.0;
    }
    let n = actions.len() as f64;
    Ok(h.map(|c| c / n))
}

/// L1 distance between two normalized histograms, in `[0, 2]`.
pub fn histogram_l1(a: &[f64; 5], b: &[f64; 5]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

pub fn action_frequency_divergence(sim: &[ActionKind], real: &[ActionKind]) -> Result<f64, MetricsError> {
    Ok(histogram_l1(&action_histogram(sim)?, &action_histogram(real)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionStats {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (n - 1); absent for n < 2.
    pub std: Option<f64>,
    pub skewness: Option<f64>,
    pub excess_kurtosis: Option<f64>,
    pub raw_kurtosis: Option<f64>,
    /// True when all values are equal, so the shape moments are undefined.
    pub degenerate: bool,
}

/// Moments of a sample. Panics on an empty sample.
pub fn distribution_stats(sample: &[f64]) -> DistributionStats {
    assert!(!sample.is_empty(), "distribution_stats needs at least one value");
    let n = sample.len();
    let nf = n as f64;
    let m = mean(sample);
    let central = |k: i32| sample.iter().map(|v| (v - m).powi(k)).sum::<f64>() / nf;
    let m2 = central(2);
    let degenerate = m2 == 0.0;
    let std = (n >= 2).then(|| (m2 * nf / (nf - 1.0)).sqrt());
    let (skewness, raw_kurtosis) = if degenerate {
        (None, None)
    } else {
        (Some(central(3) / m2.powf(1.5)), Some(central(4) / (m2 * m2)))
    };
    DistributionStats {
        n,
        mean: m,
        std,
        skewness,
        excess_kurtosis: raw_kurtosis.map(|k| k - 3.0),
        raw_kurtosis,
        degenerate,
    }
}

/// Product-moment correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, MetricsError> {
    if x.len() != y.len() {
        return Err(MetricsError::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(MetricsError::TooShort {
            needed: 2,
            got: x.len(),
        });
    }
    let mx = mean(x);
    let my = mean(y);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricsError::DegenerateVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Symmetric matrix of pairwise correlations; `None` marks degenerate pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub labels: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
}

/// Column-wise correlations over respondent rows.
pub fn correlation_matrix(rows: &[Vec<f64>], labels: Vec<String>) -> Result<CorrelationMatrix, MetricsError> {
    if rows.len() < 2 {
        return Err(MetricsError::TooFewRespondents(rows.len()));
    }
    let width = labels.len();
    if let Some(bad) = rows.iter().find(|r| r.len() != width) {
        return Err(MetricsError::LengthMismatch {
            left: bad.len(),
            right: width,
        });
    }
    let columns: Vec<Vec<f64>> = (0..width).map(|c| rows.iter().map(|r| r[c]).collect()).collect();
    let mut values = vec![vec![None; width]; width];
    for i in 0..width {
        for j in i..width {
            let r = pearson(&columns[i], &columns[j]).ok();
            values[i][j] = r;
            values[j][i] = r;
        }
    }
    Ok(CorrelationMatrix { labels, values })
}

/// Stage index (0..5) of each of the 13 questionnaire items.
pub const STAGE_OF_ITEM: [usize; 13] = [0, 1, 1, 1, 2, 2, 2, 3, 3, 3, 4, 4, 4];

pub const STAGE_LABELS: [&str; 5] = [
    "encoding_of_cues",
    "interpretation_of_cues",
    "classification_of_goals",
    "response_access",
    "response_evaluation",
];

/// Mean of the items belonging to each stage, per respondent.
pub fn stage_aggregate(rows: &[Vec<f64>]) -> Result<Vec<[f64; 5]>, MetricsError> {
    rows.iter()
        .map(|r| {
            if r.len() != 13 {
                return Err(MetricsError::LengthMismatch {
                    left: r.len(),
                    right: 13,
                });
            }
            let mut sums = [0.0; 5];
            let mut counts = [0.0; 5];
            for (v, &s) in r.iter().zip(&STAGE_OF_ITEM) {
                sums[s] += v;
                counts[s] += 1.0;
            }
            Ok(std::array::from_fn(|s| sums[s] / counts[s]))
        })
        .collect()
}

pub fn stage_matrix(rows: &[Vec<f64>]) -> Result<CorrelationMatrix, MetricsError> {
    let staged: Vec<Vec<f64>> = stage_aggregate(rows)?.into_iter().map(|a| a.to_vec()).collect();
    correlation_matrix(&staged, STAGE_LABELS.map(String::from).to_vec())
}
