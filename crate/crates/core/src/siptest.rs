//! Questionnaire harness: scenario packs, the 13-item instrument, response
//! records, cohort statistics and cohort comparison.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::agent::{answer_questionnaire, AgentError, QuestionnaireSettings};
use crate::backend::ChatBackend;
use crate::domain::AgentProfile;
use crate::metrics::{correlation_matrix, distribution_stats, stage_matrix, CorrelationMatrix, DistributionStats};
use crate::prompts::TemplateSet;

#[derive(Debug, Error)]
pub enum SipTestError {
    #[error("row {row}: {message}")]
    Schema { row: u64, message: String },
    #[error("duplicate response for respondent `{respondent}`, scenario `{scenario}`, item `{item}`")]
    DuplicateResponse {
        respondent: String,
        scenario: String,
        item: String,
    },
    #[error("cohorts cover different item sets")]
    ItemSetMismatch,
    #[error("{failed} of {total} responses failed at the backend")]
    SystemicFailure { failed: usize, total: usize },
    #[error("nothing to administer: {0}")]
    EmptyInput(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    EncodingOfCues,
    InterpretationOfCues,
    ClassificationOfGoals,
    ResponseAccess,
    ResponseEvaluation,
}

impl Phase {
    pub const ALL: [Phase; 5] = [
        Phase::EncodingOfCues,
        Phase::InterpretationOfCues,
        Phase::ClassificationOfGoals,
        Phase::ResponseAccess,
        Phase::ResponseEvaluation,
    ];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionnaireItem {
    pub item_id: String,
    pub phase: Phase,
    pub question_type: String,
    /// Question text with `{SITUATION}` and `{PERSON}` placeholders.
    #[serde(rename = "prompt")]
    pub prompt_template: String,
    pub anchors: (String, String),
}

impl QuestionnaireItem {
    /// Scale line shown under the question, e.g. `1 (Not at all) - 5 (Very much)`.
    pub fn anchor_line(&self) -> String {
        format!("1 ({}) - 5 ({})", self.anchors.0, self.anchors.1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionnairePack {
    /// Item wording from the questionnaire table.
    #[default]
    Appendix,
    /// Item wording used with the main-text stories.
    Main,
}

#[derive(Deserialize)]
struct ItemFile {
    items: Vec<QuestionnaireItem>,
}

impl QuestionnairePack {
    pub fn items(self) -> Vec<QuestionnaireItem> {
        let text = match self {
            QuestionnairePack::Appendix => include_str!("../assets/questionnaire/appendix.json"),
            QuestionnairePack::Main => include_str!("../assets/questionnaire/main.json"),
        };
        let file: ItemFile = serde_json::from_str(text).expect("bundled questionnaire is valid");
        file.items
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioPack {
    #[default]
    MainText,
    AppendixVignettes,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub scenario_id: String,
    pub title: String,
    pub situation_text: String,
    pub person_label: String,
    #[serde(default)]
    pub pack: ScenarioPack,
}

#[derive(Deserialize)]
struct ScenarioFile {
    scenarios: Vec<Scenario>,
}

impl ScenarioPack {
    pub fn scenarios(self) -> Vec<Scenario> {
        let text = match self {
            ScenarioPack::MainText => include_str!("../assets/scenarios/main_text.json"),
            ScenarioPack::AppendixVignettes => include_str!("../assets/scenarios/appendix_vignettes.json"),
        };
        let file: ScenarioFile = serde_json::from_str(text).expect("bundled scenarios are valid");
        file.scenarios
            .into_iter()
            .map(|mut s| {
                s.pack = self;
                s
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cohort {
    Human,
    AgentBaseline,
    AgentSip,
}

impl Cohort {
    pub const ALL: [Cohort; 3] = [Cohort::Human, Cohort::AgentBaseline, Cohort::AgentSip];

    pub fn as_str(self) -> &'static str {
        match self {
            Cohort::Human => "human",
            Cohort::AgentBaseline => "agent_baseline",
            Cohort::AgentSip => "agent_sip",
        }
    }
}

impl fmt::Display for Cohort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Cohort {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "human" => Ok(Cohort::Human),
            "agent_baseline" => Ok(Cohort::AgentBaseline),
            "agent_sip" => Ok(Cohort::AgentSip),
            other => Err(format!("unknown cohort `{other}`")),
        }
    }
}

/// Added to the role description of SIP-enhanced respondents.
pub const SIP_FRAMING: &str = "When you judge a social situation, you work through five stages: \
notice the cues, interpret them, clarify your goal, recall possible responses, and evaluate those responses before acting.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub respondent_id: String,
    pub cohort: Cohort,
    pub scenario_id: String,
    pub item_id: String,
    pub rating: Option<u8>,
    #[serde(default)]
    pub raw_text: Option<String>,
}

/// Queries every (agent, scenario, item) once. Invalid answers are kept as
/// missing ratings with their raw text.
#[allow(clippy::too_many_arguments)]
pub fn administer(
    agents: &[AgentProfile],
    cohort: Cohort,
    scenarios: &[Scenario],
    items: &[QuestionnaireItem],
    backend: &dyn ChatBackend,
    templates: &TemplateSet,
    settings: &QuestionnaireSettings,
    max_parallel: usize,
) -> Result<Vec<ResponseRecord>, SipTestError> {
    if agents.is_empty() {
        return Err(SipTestError::EmptyInput("no respondents".into()));
    }
    if scenarios.is_empty() || items.is_empty() {
        return Err(SipTestError::EmptyInput("no scenarios or items".into()));
    }
    let framing = (cohort == Cohort::AgentSip).then_some(SIP_FRAMING);
    let tasks: Vec<(&AgentProfile, &Scenario)> = agents
        .iter()
        .flat_map(|a| scenarios.iter().map(move |s| (a, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(max_parallel.max(1))
        .build()
        .expect("thread pool");
    let results: Vec<Vec<(ResponseRecord, bool)>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|(agent, scenario)| {
                items
                    .iter()
                    .map(|item| {
                        let (rating, raw_text, backend_failed) =
                            match answer_questionnaire(agent, framing, scenario, item, backend, templates, settings) {
                                Ok(r) => (Some(r), None, false),
                                Err(AgentError::InvalidResponse { raw, .. }) => (None, Some(raw), false),
                                Err(e) => {
                                    warn!(agent = %agent.agent_id, item = %item.item_id, error = %e, "questionnaire failure");
                                    (None, None, matches!(e, AgentError::Backend(_)))
                                }
                            };
                        (
                            ResponseRecord {
                                respondent_id: agent.agent_id.clone(),
                                cohort,
                                scenario_id: scenario.scenario_id.clone(),
                                item_id: item.item_id.clone(),
                                rating,
                                raw_text,
                            },
                            backend_failed,
                        )
                    })
                    .collect()
            })
            .collect()
    });
    let flat: Vec<(ResponseRecord, bool)> = results.into_iter().flatten().collect();
    let failed = flat.iter().filter(|(_, f)| *f).count();
    if failed * 2 > flat.len() {
        return Err(SipTestError::SystemicFailure {
            failed,
            total: flat.len(),
        });
    }
    Ok(flat.into_iter().map(|(r, _)| r).collect())
}

#[derive(Debug, Deserialize)]
struct CsvRow {
    respondent_id: String,
    cohort: String,
    scenario_id: String,
    item_id: String,
    rating: String,
    #[serde(default)]
    raw_text: Option<String>,
}

fn is_item_id(s: &str) -> bool {
    s.strip_prefix('Q')
        .and_then(|n| n.parse::<u8>().ok())
        .is_some_and(|n| (1..=13).contains(&n))
}

/// Reads response records from CSV (`respondent_id,cohort,scenario_id,item_id,rating[,raw_text]`).
/// An empty rating is a missing answer.
pub fn read_records<R: Read>(reader: R) -> Result<Vec<ResponseRecord>, SipTestError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for row in rdr.deserialize::<CsvRow>() {
        let row = row.map_err(|e| SipTestError::Schema {
            row: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = out.len() as u64 + 2;
        let schema = |message: String| SipTestError::Schema { row: line, message };
        let cohort: Cohort = row.cohort.parse().map_err(schema)?;
        if row.respondent_id.trim().is_empty() || row.scenario_id.trim().is_empty() {
            return Err(schema("empty respondent_id or scenario_id".into()));
        }
        if !is_item_id(&row.item_id) {
            return Err(schema(format!("unknown item `{}`", row.item_id)));
        }
        let rating = match row.rating.trim() {
            "" => None,
            r => match r.parse::<u8>() {
                Ok(v @ 1..=5) => Some(v),
                _ => return Err(schema(format!("rating `{r}` outside 1..5"))),
            },
        };
        let key = (row.respondent_id.clone(), row.scenario_id.clone(), row.item_id.clone());
        if !seen.insert(key) {
            return Err(SipTestError::DuplicateResponse {
                respondent: row.respondent_id,
                scenario: row.scenario_id,
                item: row.item_id,
            });
        }
        out.push(ResponseRecord {
            respondent_id: row.respondent_id,
            cohort,
            scenario_id: row.scenario_id,
            item_id: row.item_id,
            rating,
            raw_text: row.raw_text.filter(|s| !s.is_empty()),
        });
    }
    Ok(out)
}

/// Human responses from a CSV file; every row must be in the `human` cohort.
pub fn import_human(path: &Path) -> Result<Vec<ResponseRecord>, SipTestError> {
    let file = std::fs::File::open(path).map_err(|source| SipTestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let records = read_records(file)?;
    if let Some((i, r)) = records.iter().enumerate().find(|(_, r)| r.cohort != Cohort::Human) {
        return Err(SipTestError::Schema {
            row: i as u64 + 2,
            message: format!("cohort `{}` is not human", r.cohort),
        });
    }
    Ok(records)
}

pub fn write_records<W: Write>(writer: W, records: &[ResponseRecord]) -> Result<(), SipTestError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "respondent_id",
        "cohort",
        "scenario_id",
        "item_id",
        "rating",
        "raw_text",
    ])?;
    for r in records {
        w.write_record([
            r.respondent_id.as_str(),
            r.cohort.as_str(),
            r.scenario_id.as_str(),
            r.item_id.as_str(),
            &r.rating.map(|v| v.to_string()).unwrap_or_default(),
            r.raw_text.as_deref().unwrap_or(""),
        ])?;
    }
    w.flush().map_err(|source| SipTestError::Io {
        path: "<csv writer>".into(),
        source,
    })?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemStats {
    pub item_id: String,
    /// Pooled over respondents and scenarios; absent when no rating was given.
    pub stats: Option<DistributionStats>,
    pub missing: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortStats {
    pub cohort: Cohort,
    pub respondents: usize,
    /// Respondents with a rating for every item in every scenario they saw.
    pub complete_respondents: usize,
    pub per_item: Vec<ItemStats>,
    pub matrix13: Option<CorrelationMatrix>,
    pub matrix5: Option<CorrelationMatrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix_error: Option<String>,
}

pub fn cohort_stats(records: &[ResponseRecord], cohort: Cohort, items: &[QuestionnaireItem]) -> CohortStats {
    let mine: Vec<&ResponseRecord> = records.iter().filter(|r| r.cohort == cohort).collect();
    let per_item = items
        .iter()
        .map(|item| {
            let answers: Vec<&&ResponseRecord> = mine.iter().filter(|r| r.item_id == item.item_id).collect();
            let ratings: Vec<f64> = answers.iter().filter_map(|r| r.rating).map(f64::from).collect();
            ItemStats {
                item_id: item.item_id.clone(),
                stats: (!ratings.is_empty()).then(|| distribution_stats(&ratings)),
                missing: answers.len() - ratings.len(),
            }
        })
        .collect();

    let mut by_respondent: BTreeMap<&str, Vec<&ResponseRecord>> = BTreeMap::new();
    for r in &mine {
        by_respondent.entry(r.respondent_id.as_str()).or_default().push(r);
    }
    let mut rows = Vec::new();
    for recs in by_respondent.values() {
        if recs.iter().any(|r| r.rating.is_none()) {
            continue;
        }
        let row: Option<Vec<f64>> = items
            .iter()
            .map(|item| {
                let v: Vec<f64> = recs
                    .iter()
                    .filter(|r| r.item_id == item.item_id)
                    .filter_map(|r| r.rating)
                    .map(f64::from)
                    .collect();
                (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
            })
            .collect();
        if let Some(row) = row {
            rows.push(row);
        }
    }

    let labels: Vec<String> = items.iter().map(|i| i.item_id.clone()).collect();
    let (matrix13, matrix5, matrix_error) = match correlation_matrix(&rows, labels) {
        Ok(m13) => {
            let m5 = if items.len() == 13 {
                stage_matrix(&rows).ok()
            } else {
                None
            };
            (Some(m13), m5, None)
        }
        Err(e) => (None, None, Some(e.to_string())),
    };
    CohortStats {
        cohort,
        respondents: by_respondent.len(),
        complete_respondents: rows.len(),
        per_item,
        matrix13,
        matrix5,
        matrix_error,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemGap {
    pub item_id: String,
    pub mean_gap: Option<f64>,
    pub std_gap: Option<f64>,
    pub skewness_gap: Option<f64>,
    pub kurtosis_gap: Option<f64>,
}

fn stat_fields(s: &Option<DistributionStats>) -> [Option<f64>; 4] {
    match s {
        None => [None; 4],
        Some(d) => [Some(d.mean), d.std, d.skewness, d.excess_kurtosis],
    }
}

fn gap(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    Some((a? - b?).abs())
}

fn check_items(a: &CohortStats, b: &CohortStats) -> Result<(), SipTestError> {
    let ids = |c: &CohortStats| c.per_item.iter().map(|i| i.item_id.clone()).collect::<Vec<_>>();
    if ids(a) != ids(b) {
        return Err(SipTestError::ItemSetMismatch);
    }
    Ok(())
}

/// Absolute per-item differences of the distribution statistics.
pub fn compare_cohorts(a: &CohortStats, b: &CohortStats) -> Result<Vec<ItemGap>, SipTestError> {
    check_items(a, b)?;
    Ok(a.per_item
        .iter()
        .zip(&b.per_item)
        .map(|(x, y)| {
            let (fx, fy) = (stat_fields(&x.stats), stat_fields(&y.stats));
            ItemGap {
                item_id: x.item_id.clone(),
                mean_gap: gap(fx[0], fy[0]),
                std_gap: gap(fx[1], fy[1]),
                skewness_gap: gap(fx[2], fy[2]),
                kurtosis_gap: gap(fx[3], fy[3]),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Improvement {
    pub baseline_gap: Option<f64>,
    pub candidate_gap: Option<f64>,
    /// `(|B-H| - |C-H|) / |B-H|` as a percentage.
    pub percent: Option<f64>,
    /// Set when the baseline already matches the reference, so the ratio is undefined.
    pub undefined: bool,
}

pub fn improvement_ratio(baseline: f64, candidate: f64, human: f64) -> Improvement {
    let b = (baseline - human).abs();
    let c = (candidate - human).abs();
    Improvement {
        baseline_gap: Some(b),
        candidate_gap: Some(c),
        percent: (b != 0.0).then(|| (b - c) / b * 100.0),
        undefined: b == 0.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemImprovement {
    pub item_id: String,
    pub mean: Improvement,
    pub std: Improvement,
    pub skewness: Improvement,
    pub kurtosis: Improvement,
}

/// How much closer the candidate cohort sits to the human cohort than the baseline does, per item.
pub fn improvement_over_baseline(
    baseline: &CohortStats,
    candidate: &CohortStats,
    human: &CohortStats,
) -> Result<Vec<ItemImprovement>, SipTestError> {
    check_items(baseline, candidate)?;
    check_items(baseline, human)?;
    let one = |b: Option<f64>, c: Option<f64>, h: Option<f64>| match (b, c, h) {
        (Some(b), Some(c), Some(h)) => improvement_ratio(b, c, h),
        _ => Improvement {
            baseline_gap: None,
            candidate_gap: None,
            percent: None,
            undefined: true,
        },
    };
    Ok(baseline
        .per_item
        .iter()
        .zip(&candidate.per_item)
        .zip(&human.per_item)
        .map(|((b, c), h)| {
            let (fb, fc, fh) = (stat_fields(&b.stats), stat_fields(&c.stats), stat_fields(&h.stats));
            ItemImprovement {
                item_id: b.item_id.clone(),
                mean: one(fb[0], fc[0], fh[0]),
                std: one(fb[1], fc[1], fh[1]),
                skewness: one(fb[2], fc[2], fh[2]),
                kurtosis: one(fb[3], fc[3], fh[3]),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{MockBackend, MockRecord};
    use crate::prompts::TemplateId;

    fn settings() -> QuestionnaireSettings {
        QuestionnaireSettings::default()
    }

    fn agents(n: usize) -> Vec<AgentProfile> {
        (0..n)
            .map(|i| AgentProfile::new(format!("a{i}"), format!("Agent {i}")))
            .collect()
    }

    #[test]
    fn packs_have_thirteen_items_and_five_scenarios() {
        for pack in [QuestionnairePack::Appendix, QuestionnairePack::Main] {
            let items = pack.items();
            assert_eq!(items.len(), 13);
            let sizes: Vec<usize> = Phase::ALL
                .iter()
                .map(|p| items.iter().filter(|i| i.phase == *p).count())
                .collect();
            assert_eq!(sizes, vec![1, 3, 3, 3, 3]);
            for (i, item) in items.iter().enumerate() {
                assert_eq!(item.item_id, format!("Q{}", i + 1));
                assert_eq!(item.phase, Phase::ALL[crate::metrics::STAGE_OF_ITEM[i]]);
            }
        }
        for pack in [ScenarioPack::MainText, ScenarioPack::AppendixVignettes] {
            let s = pack.scenarios();
            assert_eq!(s.len(), 5);
            assert!(s
                .iter()
                .all(|s| !s.situation_text.is_empty() && !s.person_label.is_empty() && s.pack == pack));
        }
    }

    #[test]
    fn administer_cardinality_and_constant() {
        let backend = MockBackend::constant("4");
        let recs = administer(
            &agents(2),
            Cohort::AgentSip,
            &ScenarioPack::MainText.scenarios(),
            &QuestionnairePack::Appendix.items(),
            &backend,
            &TemplateSet::defaults(),
            &settings(),
            3,
        )
        .unwrap();
        assert_eq!(recs.len(), 130);
        assert!(recs.iter().all(|r| r.rating == Some(4)));
        // scenarios outer, items inner
        assert_eq!(recs[0].item_id, "Q1");
        assert_eq!(recs[12].item_id, "Q13");
        assert_eq!(recs[13].scenario_id, recs[13].scenario_id);
        assert_ne!(recs[13].scenario_id, recs[0].scenario_id);
    }

    #[test]
    fn invalid_answers_become_missing() {
        let mut backend = MockBackend::constant("3");
        backend.push(MockRecord {
            agent_id: "*".into(),
            step: None,
            template_id: TemplateId::Questionnaire,
            item_id: Some("Q7".into()),
            response: "maybe".into(),
            labels: None,
        });
        let recs = administer(
            &agents(1),
            Cohort::AgentBaseline,
            &ScenarioPack::MainText.scenarios(),
            &QuestionnairePack::Appendix.items(),
            &backend,
            &TemplateSet::defaults(),
            &settings(),
            1,
        )
        .unwrap();
        for r in &recs {
            if r.item_id == "Q7" {
                assert_eq!(r.rating, None);
                assert_eq!(r.raw_text.as_deref(), Some("maybe"));
            } else {
                assert_eq!(r.rating, Some(3));
            }
        }
    }

    #[test]
    fn backend_outage_aborts() {
        let backend = MockBackend::new(vec![]);
        let err = administer(
            &agents(1),
            Cohort::AgentSip,
            &ScenarioPack::MainText.scenarios(),
            &QuestionnairePack::Appendix.items(),
            &backend,
            &TemplateSet::defaults(),
            &settings(),
            1,
        )
        .unwrap_err();
        assert!(matches!(err, SipTestError::SystemicFailure { failed: 65, total: 65 }));
    }

    const HEADER: &str = "respondent_id,cohort,scenario_id,item_id,rating\n";

    #[test]
    fn csv_import() {
        let ok = format!("{HEADER}h1,human,s1,Q1,3\nh1,human,s1,Q2,5\nh2,human,s1,Q1,1\n");
        assert_eq!(read_records(ok.as_bytes()).unwrap().len(), 3);

        let bad = format!("{HEADER}h1,human,s1,Q1,3\nh1,human,s1,Q2,6\n");
        match read_records(bad.as_bytes()) {
            Err(SipTestError::Schema { row, .. }) => assert_eq!(row, 3),
            other => panic!("{other:?}"),
        }
        let dup = format!("{HEADER}h1,human,s1,Q1,3\nh1,human,s1,Q1,4\n");
        assert!(matches!(
            read_records(dup.as_bytes()),
            Err(SipTestError::DuplicateResponse { .. })
        ));
        let bad_item = format!("{HEADER}h1,human,s1,Q14,3\n");
        assert!(read_records(bad_item.as_bytes()).is_err());
    }

    #[test]
    fn csv_roundtrip_keeps_missing() {
        let recs = vec![
            ResponseRecord {
                respondent_id: "a".into(),
                cohort: Cohort::AgentSip,
                scenario_id: "s".into(),
                item_id: "Q1".into(),
                rating: None,
                raw_text: Some("maybe, \"not sure\"".into()),
            },
            ResponseRecord {
                respondent_id: "a".into(),
                cohort: Cohort::AgentSip,
                scenario_id: "s".into(),
                item_id: "Q2".into(),
                rating: Some(2),
                raw_text: None,
            },
        ];
        let mut buf = Vec::new();
        write_records(&mut buf, &recs).unwrap();
        assert_eq!(read_records(buf.as_slice()).unwrap(), recs);
    }

    fn records_from(ratings: &[(&str, &str, &str, Option<u8>)]) -> Vec<ResponseRecord> {
        ratings
            .iter()
            .map(|(r, s, i, v)| ResponseRecord {
                respondent_id: r.to_string(),
                cohort: Cohort::Human,
                scenario_id: s.to_string(),
                item_id: i.to_string(),
                rating: *v,
                raw_text: None,
            })
            .collect()
    }

    #[test]
    fn constant_and_single_respondent_stats() {
        let items = QuestionnairePack::Appendix.items();
        let mut rows = Vec::new();
        for r in ["a", "b", "c"] {
            for s in ["s1", "s2"] {
                for i in &items {
                    rows.push((r, s, i.item_id.as_str(), Some(2)));
                }
            }
        }
        let stats = cohort_stats(&records_from(&rows), Cohort::Human, &items);
        assert!(stats
            .per_item
            .iter()
            .all(|i| i.stats.as_ref().unwrap().std == Some(0.0)));
        assert!(stats
            .matrix13
            .as_ref()
            .unwrap()
            .values
            .iter()
            .flatten()
            .all(Option::is_none));

        let single: Vec<_> = rows.iter().filter(|r| r.0 == "a").cloned().collect();
        let stats = cohort_stats(&records_from(&single), Cohort::Human, &items);
        assert_eq!(stats.per_item[0].stats.as_ref().unwrap().n, 2);
        assert!(stats.matrix13.is_none());
        assert!(stats.matrix_error.is_some());
    }

    #[test]
    fn pooled_mean_matches_naive_and_incomplete_excluded() {
        let items = QuestionnairePack::Appendix.items();
        let mut rows = Vec::new();
        for (k, r) in ["a", "b", "c"].iter().enumerate() {
            for (j, s) in ["s1", "s2"].iter().enumerate() {
                for (n, i) in items.iter().enumerate() {
                    let v = ((k + j + n) % 5 + 1) as u8;
                    let missing = *r == "c" && n == 4 && j == 1;
                    rows.push((*r, *s, i.item_id.as_str(), (!missing).then_some(v)));
                }
            }
        }
        let recs = records_from(&rows);
        let stats = cohort_stats(&recs, Cohort::Human, &items);
        for (n, item) in items.iter().enumerate() {
            let vals: Vec<f64> = rows
                .iter()
                .filter(|r| r.2 == item.item_id)
                .filter_map(|r| r.3)
                .map(f64::from)
                .collect();
            let naive = vals.iter().sum::<f64>() / vals.len() as f64;
            assert!((stats.per_item[n].stats.as_ref().unwrap().mean - naive).abs() < 1e-12);
        }
        assert_eq!(stats.per_item[4].missing, 1);
        assert_eq!(stats.respondents, 3);
        assert_eq!(stats.complete_respondents, 2);
    }

    #[test]
    fn comparison_and_improvement() {
        let items = QuestionnairePack::Appendix.items();
        let mk = |v: u8| {
            let rows: Vec<_> = ["a", "b"]
                .iter()
                .flat_map(|r| items.iter().map(move |i| (*r, "s", i.item_id.as_str(), Some(v))))
                .collect();
            cohort_stats(&records_from(&rows), Cohort::Human, &items)
        };
        let a = mk(3);
        assert!(compare_cohorts(&a, &a).unwrap().iter().all(|g| g.mean_gap == Some(0.0)));
        let b = mk(5);
        let ab = compare_cohorts(&a, &b).unwrap();
        let ba = compare_cohorts(&b, &a).unwrap();
        assert_eq!(ab, ba);
        assert_eq!(ab[0].mean_gap, Some(2.0));

        let imp = improvement_ratio(4.0, 3.0, 2.5);
        assert!((imp.percent.unwrap() - 100.0 * (1.5 - 0.5) / 1.5).abs() < 1e-9);
        let undef = improvement_ratio(2.5, 3.0, 2.5);
        assert!(undef.undefined && undef.percent.is_none());

        let mut fewer = a.clone();
        fewer.per_item.pop();
        assert!(matches!(
            compare_cohorts(&a, &fewer),
            Err(SipTestError::ItemSetMismatch)
        ));
    }
}
