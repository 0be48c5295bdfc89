//! Comparison of a simulation trace against a real event: attitude
//! propagation over time and per-agent label and behavior alignment.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::EventCorpus;
use crate::domain::{attitude_of, ActionKind, ContentItem, LabelSet, Labels, Stance};
use crate::engine::{SimulationTrace, TraceRecord};
use crate::metrics::{
    action_frequency_divergence, bias, delta_series, diversity, dtw, macro_prf, AttitudeSeries, ConfusionMatrix,
    MetricsError, PrfReport,
};
use crate::siptest::{
    cohort_stats, improvement_over_baseline, Cohort, CohortStats, ItemImprovement, QuestionnaireItem, ResponseRecord,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("trace has no decision records")]
    EmptyTrace,
    #[error("{source_name} uses label `{label}` outside the configured {dimension} taxonomy")]
    TaxonomyMismatch {
        source_name: &'static str,
        dimension: &'static str,
        label: String,
    },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub content_types: LabelSet,
    pub emotions: LabelSet,
    /// Step count for the comparison; defaults to the steps covered by the trace.
    pub steps: Option<u64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            content_types: LabelSet::default_content_types(),
            emotions: LabelSet::default_emotions(),
            steps: None,
        }
    }
}

/// How real items were placed on simulation steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepMapping {
    /// Items carry their own step; items without one are seeds and are ignored.
    Recorded,
    /// Equal-width time bins over the event's span.
    TimeBins { start: DateTime<Utc>, width_seconds: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagationReport {
    /// Steps with attitudes on both sides; deltas are indexed like this list.
    pub compared_steps: Vec<u64>,
    pub skipped_steps: Vec<u64>,
    pub sim_bias: Vec<f64>,
    pub real_bias: Vec<f64>,
    pub sim_diversity: Vec<f64>,
    pub real_diversity: Vec<f64>,
    pub sim_mean_attitude: Vec<f64>,
    pub real_mean_attitude: Vec<f64>,
    pub delta_bias: Vec<f64>,
    pub delta_div: Vec<f64>,
    pub mean_delta_bias: f64,
    pub mean_delta_div: f64,
    pub final_delta_bias: f64,
    pub final_delta_div: f64,
    /// Over the mean-attitude series.
    pub dtw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelAlignment {
    pub confusion: ConfusionMatrix,
    pub scores: PrfReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    /// (agent, step) slots where both sides produced labeled content.
    pub labeled_pairs: usize,
    pub stance: Option<LabelAlignment>,
    pub content: Option<LabelAlignment>,
    pub emotion: Option<LabelAlignment>,
    /// Action kind per (agent, step) decision slot.
    pub behavior: LabelAlignment,
    pub action_frequency_divergence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionnaireReport {
    pub cohorts: Vec<CohortStats>,
    /// Present when human, baseline and SIP cohorts are all available.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub improvement: Option<Vec<ItemImprovement>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub steps: u64,
    pub step_mapping: StepMapping,
    /// Absent when no step has attitudes on both sides.
    pub propagation: Option<PropagationReport>,
    pub alignment: AlignmentReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub questionnaire: Option<QuestionnaireReport>,
}

type Slot<'a> = (&'a str, u64);

fn item_kind(item: &ContentItem) -> ActionKind {
    if item.retweet_of.is_some() {
        ActionKind::Retweet
    } else if item.parent_id.is_some() {
        ActionKind::Reply
    } else {
        ActionKind::Post
    }
}

/// Step of each real item under the chosen mapping.
pub fn real_steps(corpus: &EventCorpus, steps: u64) -> (StepMapping, Vec<(&ContentItem, u64)>) {
    if corpus.has_steps() {
        let placed = corpus
            .items
            .iter()
            .filter_map(|i| i.step.filter(|s| *s < steps).map(|s| (i, s)))
            .collect();
        return (StepMapping::Recorded, placed);
    }
    let Some(start) = corpus.items.first().map(|i| i.timestamp) else {
        return (
            StepMapping::TimeBins {
                start: DateTime::<Utc>::UNIX_EPOCH,
                width_seconds: 0.0,
            },
            Vec::new(),
        );
    };
    let end = corpus.items.last().map(|i| i.timestamp).unwrap_or(start);
    let span = (end - start).num_milliseconds() as f64 / 1000.0;
    let width = span / steps as f64;
    let placed = corpus
        .items
        .iter()
        .map(|i| {
            let offset = (i.timestamp - start).num_milliseconds() as f64 / 1000.0;
            let bin = if width > 0.0 {
                (offset / width).floor() as u64
            } else {
                0
            };
            (i, bin.min(steps - 1))
        })
        .collect();
    (
        StepMapping::TimeBins {
            start,
            width_seconds: width,
        },
        placed,
    )
}

fn stances<'a>(m: &BTreeMap<Slot<'a>, &Labels>) -> BTreeMap<Slot<'a>, Stance> {
    m.iter().map(|(k, l)| (*k, l.stance)).collect()
}

fn check_labels(labels: &Labels, cfg: &EvalConfig, source_name: &'static str) -> Result<(), EvalError> {
    if !cfg.content_types.contains(labels.content_type.as_str()) {
        return Err(EvalError::TaxonomyMismatch {
            source_name,
            dimension: "content type",
            label: labels.content_type.0.clone(),
        });
    }
    if !cfg.emotions.contains(labels.emotion.as_str()) {
        return Err(EvalError::TaxonomyMismatch {
            source_name,
            dimension: "emotion",
            label: labels.emotion.0.clone(),
        });
    }
    Ok(())
}

fn align(labels: &LabelSet, pairs: &[(&str, &str)]) -> Result<Option<LabelAlignment>, EvalError> {
    if pairs.is_empty() {
        return Ok(None);
    }
    let confusion = ConfusionMatrix::from_pairs(labels.labels().to_vec(), pairs.iter().copied())?;
    let scores = macro_prf(&confusion)?;
    Ok(Some(LabelAlignment { confusion, scores }))
}

fn propagation(
    steps: u64,
    sim: &BTreeMap<Slot<'_>, Stance>,
    real: &BTreeMap<Slot<'_>, Stance>,
) -> Result<Option<PropagationReport>, EvalError> {
    let per_step = |m: &BTreeMap<Slot<'_>, Stance>| {
        let mut v = vec![Vec::new(); steps as usize];
        for ((_, step), stance) in m {
            v[*step as usize].push(f64::from(attitude_of(*stance)));
        }
        v
    };
    let (sim_steps, real_steps) = (per_step(sim), per_step(real));
    let (mut compared, mut skipped) = (Vec::new(), Vec::new());
    let (mut s_vals, mut r_vals) = (Vec::new(), Vec::new());
    for t in 0..steps {
        let (s, r) = (&sim_steps[t as usize], &real_steps[t as usize]);
        if s.is_empty() || r.is_empty() {
            skipped.push(t);
        } else {
            compared.push(t);
            s_vals.push(s.clone());
            r_vals.push(r.clone());
        }
    }
    if compared.is_empty() {
        return Ok(None);
    }
    let (s_series, r_series) = (AttitudeSeries::new(s_vals), AttitudeSeries::new(r_vals));
    let deltas = delta_series(&s_series, &r_series)?;
    let sim_mean = s_series.mean_series()?;
    let real_mean = r_series.mean_series()?;
    let collect = |series: &AttitudeSeries, f: fn(&[f64]) -> Result<f64, MetricsError>| {
        series.steps.iter().map(|v| f(v)).collect::<Result<Vec<_>, _>>()
    };
    Ok(Some(PropagationReport {
        compared_steps: compared,
        skipped_steps: skipped,
        sim_bias: collect(&s_series, bias)?,
        real_bias: collect(&r_series, bias)?,
        sim_diversity: collect(&s_series, diversity)?,
        real_diversity: collect(&r_series, diversity)?,
        dtw: dtw(&sim_mean, &real_mean)?,
        sim_mean_attitude: sim_mean,
        real_mean_attitude: real_mean,
        delta_bias: deltas.delta_bias,
        delta_div: deltas.delta_div,
        mean_delta_bias: deltas.mean_delta_bias,
        mean_delta_div: deltas.mean_delta_div,
        final_delta_bias: deltas.final_delta_bias,
        final_delta_div: deltas.final_delta_div,
    }))
}

/// Scores a trace against the real event it simulates.
pub fn evaluate(trace: &SimulationTrace, corpus: &EventCorpus, cfg: &EvalConfig) -> Result<EvalReport, EvalError> {
    if trace.records.is_empty() {
        return Err(EvalError::EmptyTrace);
    }
    for l in trace.records.iter().filter_map(|r| r.labels.as_ref()) {
        check_labels(l, cfg, "trace")?;
    }
    for l in corpus.items.iter().filter_map(|i| i.labels.as_ref()) {
        check_labels(l, cfg, "event")?;
    }
    let steps = cfg.steps.unwrap_or_else(|| trace.steps()).max(1);

    // First record per slot on the simulated side.
    let mut sim_slots: BTreeMap<Slot<'_>, &TraceRecord> = BTreeMap::new();
    for r in trace.records.iter().filter(|r| r.step < steps) {
        sim_slots.entry((r.agent_id.as_str(), r.step)).or_insert(r);
    }
    let sim_labels: BTreeMap<Slot<'_>, &Labels> = sim_slots
        .iter()
        .filter_map(|(k, r)| r.labels.as_ref().map(|l| (*k, l)))
        .collect();

    // Earliest item and earliest labeled item per slot on the real side.
    let (mapping, placed) = real_steps(corpus, steps);
    let mut real_first: HashMap<Slot<'_>, &ContentItem> = HashMap::new();
    let mut real_labels: BTreeMap<Slot<'_>, &Labels> = BTreeMap::new();
    for (item, step) in &placed {
        let slot = (item.author_id.as_str(), *step);
        real_first.entry(slot).or_insert(item);
        if let Some(l) = &item.labels {
            real_labels.entry(slot).or_insert(l);
        }
    }

    let propagation = propagation(steps, &stances(&sim_labels), &stances(&real_labels))?;

    let both: Vec<(&Labels, &Labels)> = sim_labels
        .iter()
        .filter_map(|(k, s)| real_labels.get(k).map(|r| (*r, *s)))
        .collect();
    let stance_pairs: Vec<(&str, &str)> = both
        .iter()
        .map(|(r, s)| (r.stance.as_str(), s.stance.as_str()))
        .collect();
    let content_pairs: Vec<(&str, &str)> = both
        .iter()
        .map(|(r, s)| (r.content_type.as_str(), s.content_type.as_str()))
        .collect();
    let emotion_pairs: Vec<(&str, &str)> = both
        .iter()
        .map(|(r, s)| (r.emotion.as_str(), s.emotion.as_str()))
        .collect();

    let sim_kinds: Vec<ActionKind> = sim_slots.values().map(|r| r.kind).collect();
    let real_kinds: Vec<ActionKind> = sim_slots
        .keys()
        .map(|k| real_first.get(k).map_or(ActionKind::Nothing, |i| item_kind(i)))
        .collect();
    let kind_labels = LabelSet::new(ActionKind::ALL.iter().map(|k| k.as_str().to_string()).collect())
        .expect("action kinds are distinct");
    let behavior_pairs: Vec<(&str, &str)> = real_kinds
        .iter()
        .zip(&sim_kinds)
        .map(|(r, s)| (r.as_str(), s.as_str()))
        .collect();

    let alignment = AlignmentReport {
        labeled_pairs: both.len(),
        stance: align(&LabelSet::stances(), &stance_pairs)?,
        content: align(&cfg.content_types, &content_pairs)?,
        emotion: align(&cfg.emotions, &emotion_pairs)?,
        behavior: align(&kind_labels, &behavior_pairs)?.expect("trace is non-empty"),
        action_frequency_divergence: action_frequency_divergence(&sim_kinds, &real_kinds)?,
    };
    Ok(EvalReport {
        steps,
        step_mapping: mapping,
        propagation,
        alignment,
        questionnaire: None,
    })
}

/// Per-cohort statistics of questionnaire responses, with the improvement of
/// the SIP cohort over the baseline when a human cohort is present.
pub fn questionnaire_report(
    records: &[ResponseRecord],
    items: &[QuestionnaireItem],
) -> Result<QuestionnaireReport, EvalError> {
    let cohorts: Vec<CohortStats> = Cohort::ALL
        .iter()
        .filter(|c| records.iter().any(|r| r.cohort == **c))
        .map(|c| cohort_stats(records, *c, items))
        .collect();
    let find = |c: Cohort| cohorts.iter().find(|s| s.cohort == c);
    let improvement = match (find(Cohort::AgentBaseline), find(Cohort::AgentSip), find(Cohort::Human)) {
        (Some(b), Some(s), Some(h)) => {
            Some(improvement_over_baseline(b, s, h).map_err(|e| EvalError::Io(e.to_string()))?)
        }
        _ => None,
    };
    Ok(QuestionnaireReport { cohorts, improvement })
}

fn csv_err(e: impl std::fmt::Display) -> EvalError {
    EvalError::Io(e.to_string())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One row per compared step.
    pub fn write_propagation_csv<W: Write>(&self, w: W) -> Result<(), EvalError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "step",
            "sim_bias",
            "real_bias",
            "delta_bias",
            "sim_diversity",
            "real_diversity",
            "delta_div",
            "sim_mean_attitude",
            "real_mean_attitude",
        ])
        .map_err(csv_err)?;
        if let Some(p) = &self.propagation {
            for (i, step) in p.compared_steps.iter().enumerate() {
                out.write_record([
                    step.to_string(),
                    p.sim_bias[i].to_string(),
                    p.real_bias[i].to_string(),
                    p.delta_bias[i].to_string(),
                    p.sim_diversity[i].to_string(),
                    p.real_diversity[i].to_string(),
                    p.delta_div[i].to_string(),
                    p.sim_mean_attitude[i].to_string(),
                    p.real_mean_attitude[i].to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
        out.flush().map_err(csv_err)
    }

    /// One row per (dimension, class) plus macro and micro rows.
    pub fn write_alignment_csv<W: Write>(&self, w: W) -> Result<(), EvalError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["dimension", "class", "precision", "recall", "f1", "support"])
            .map_err(csv_err)?;
        let a = &self.alignment;
        let dims = [
            ("stance", a.stance.as_ref()),
            ("content", a.content.as_ref()),
            ("emotion", a.emotion.as_ref()),
            ("behavior", Some(&a.behavior)),
        ];
        for (name, dim) in dims {
            let Some(d) = dim else { continue };
            let s = &d.scores;
            for c in &s.per_class {
                out.write_record([
                    name.to_string(),
                    c.label.clone(),
                    c.precision.to_string(),
                    c.recall.to_string(),
                    c.f1.to_string(),
                    c.support.to_string(),
                ])
                .map_err(csv_err)?;
            }
            let total = d.confusion.total().to_string();
            for (class, p, r, f) in [
                ("macro", s.macro_precision, s.macro_recall, s.macro_f1),
                ("micro", s.micro_precision, s.micro_recall, s.micro_f1),
            ] {
                out.write_record([name, class, &p.to_string(), &r.to_string(), &f.to_string(), &total])
                    .map_err(csv_err)?;
            }
        }
        out.flush().map_err(csv_err)
    }

    /// One row per (cohort, item); only the header when there is no questionnaire section.
    pub fn write_questionnaire_csv<W: Write>(&self, w: W) -> Result<(), EvalError> {
        match &self.questionnaire {
            Some(q) => q.write_csv(w),
            None => QuestionnaireReport {
                cohorts: Vec::new(),
                improvement: None,
            }
            .write_csv(w),
        }
    }
}

impl QuestionnaireReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One row per (cohort, item).
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), EvalError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "cohort",
            "item_id",
            "n",
            "mean",
            "std",
            "skewness",
            "excess_kurtosis",
            "raw_kurtosis",
            "degenerate",
            "missing",
        ])
        .map_err(csv_err)?;
        for c in &self.cohorts {
            for item in &c.per_item {
                let row = match &item.stats {
                    Some(s) => [
                        s.n.to_string(),
                        s.mean.to_string(),
                        opt(s.std),
                        opt(s.skewness),
                        opt(s.excess_kurtosis),
                        opt(s.raw_kurtosis),
                        s.degenerate.to_string(),
                    ],
                    None => [
                        "0".into(),
                        String::new(),
                        String::new(),
                        String::new(),
                        String::new(),
                        String::new(),
                        "true".into(),
                    ],
                };
                let mut rec = vec![c.cohort.as_str().to_string(), item.item_id.clone()];
                rec.extend(row);
                rec.push(item.missing.to_string());
                out.write_record(&rec).map_err(csv_err)?;
            }
        }
        out.flush().map_err(csv_err)
    }
}
