use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use sipsim_core::backend::BackendError;
use sipsim_core::dataset::{compute_stats, CorpusStats};
use sipsim_core::engine::{LlmAnnotator, NoAnnotator, ScriptedAnnotator};
use sipsim_core::eval::{questionnaire_report, EvalError, QuestionnaireReport};
use sipsim_core::siptest::{administer, import_human, read_records, write_records, SipTestError};
use sipsim_core::synth::synth_agent_id;
use sipsim_core::{
    build_backend, construct_environment, initialize, load_event, AgentProfile, Annotator, BackendKind, ChatBackend,
    Cohort, DatasetError, EngineError, EvalReport, EventCorpus, FieldPolicy, MockBackend, Simulation, SimulationTrace,
};
use tracing::{info, warn};

use crate::config::{AnnotatorKind, RunConfig};
use crate::CliError;

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn engine_err(e: EngineError) -> CliError {
    match e {
        EngineError::SystemicFailure { .. } => CliError::Backend(e.to_string()),
        EngineError::Config(_) | EngineError::InvalidSteps => CliError::Config(e.to_string()),
        EngineError::Io { .. } => CliError::Data(e.to_string()),
        EngineError::EmptyCorpus | EngineError::Dataset(_) | EngineError::Domain(_) | EngineError::UnknownAgent(_) => {
            CliError::Data(e.to_string())
        }
    }
}

fn eval_err(e: EvalError) -> CliError {
    match e {
        EvalError::Io(m) => CliError::Io(m),
        other => CliError::Data(other.to_string()),
    }
}

fn siptest_err(e: SipTestError) -> CliError {
    match e {
        SipTestError::SystemicFailure { .. } => CliError::Backend(e.to_string()),
        SipTestError::EmptyInput(_) => CliError::Config(e.to_string()),
        other => CliError::Data(other.to_string()),
    }
}

fn backend_err(e: BackendError) -> CliError {
    CliError::Config(e.to_string())
}

fn data_err(e: DatasetError) -> CliError {
    CliError::Data(e.to_string())
}

/// Creates the output directory, refusing to reuse a non-empty one unless forced.
pub fn prepare_output(dir: &Path, force: bool) -> Result<(), CliError> {
    if dir.exists() {
        let non_empty = fs::read_dir(dir).map_err(|e| io_err(dir, e))?.next().is_some();
        if non_empty && !force {
            return Err(CliError::Config(format!(
                "output directory {} is not empty; pass --force to overwrite",
                dir.display()
            )));
        }
    }
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<String, CliError> {
    let bytes = bytes.as_ref();
    fs::write(path, bytes).map_err(|e| io_err(path, e))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> Result<(), EvalError>) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    f(&mut buf).map_err(eval_err)?;
    Ok(buf)
}

fn load_corpus(path: &Path) -> Result<EventCorpus, CliError> {
    let (corpus, warnings) = load_event(path, FieldPolicy::Lenient).map_err(data_err)?;
    for w in warnings {
        warn!("{}: {w}", path.display());
    }
    Ok(corpus)
}

fn required<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path, CliError> {
    p.as_deref()
        .ok_or_else(|| CliError::Config(format!("{what} is not set")))
}

type Pair = (Box<dyn ChatBackend>, Box<dyn Annotator>);

fn backend_and_annotator(cfg: &RunConfig) -> Result<Pair, CliError> {
    let mock = match cfg.backend.kind {
        BackendKind::Mock => {
            Some(MockBackend::load(required(&cfg.backend.script, "backend.script")?).map_err(backend_err)?)
        }
        BackendKind::Http => None,
    };
    let annotator: Box<dyn Annotator> = match (cfg.annotator, &mock) {
        (AnnotatorKind::None, _) => Box::new(NoAnnotator),
        (AnnotatorKind::Auto | AnnotatorKind::Scripted, Some(m)) => Box::new(ScriptedAnnotator::new(m.clone())),
        (AnnotatorKind::Scripted, None) => {
            return Err(CliError::Config(
                "annotator = \"scripted\" needs the mock backend".into(),
            ))
        }
        (AnnotatorKind::Auto | AnnotatorKind::Llm, None) | (AnnotatorKind::Llm, Some(_)) => Box::new(LlmAnnotator {
            templates: cfg.templates()?,
            model: cfg.agent.model.clone(),
            content_types: cfg.labels.content_types.clone(),
            emotions: cfg.labels.emotions.clone(),
        }),
    };
    let backend: Box<dyn ChatBackend> = match mock {
        Some(m) => Box::new(m),
        None => build_backend(&cfg.backend).map_err(backend_err)?,
    };
    Ok((backend, annotator))
}

#[derive(Debug, Clone, Default)]
pub struct SimulateArgs {
    pub config: PathBuf,
    pub output: Option<PathBuf>,
    pub force: bool,
    pub seed: Option<u64>,
    pub steps: Option<u64>,
    pub event: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct SimulateOutcome {
    pub output_dir: PathBuf,
    pub records: usize,
    pub trace_sha256: String,
}

/// Builds the world from the event, runs the configured number of steps and
/// writes `trace.jsonl`, `checkpoint.json` and `manifest.json`.
pub fn simulate(args: &SimulateArgs) -> Result<SimulateOutcome, CliError> {
    let mut cfg = RunConfig::load(&args.config)?;
    let cwd = std::env::current_dir().map_err(|e| CliError::Io(e.to_string()))?;
    if let Some(seed) = args.seed {
        cfg.simulation.seed = seed;
    }
    if let Some(steps) = args.steps {
        cfg.steps = steps;
    }
    if let Some(event) = &args.event {
        cfg.event_path = Some(cwd.join(event));
    }
    if let Some(out) = &args.output {
        cfg.output_dir = Some(cwd.join(out));
    }
    cfg.validate()?;
    let out = required(&cfg.output_dir, "output directory (--output or output_dir)")?.to_path_buf();
    let corpus = load_corpus(required(&cfg.event_path, "event_path")?)?;
    let templates = cfg.templates()?;
    let (backend, annotator) = backend_and_annotator(&cfg)?;

    let mut world = construct_environment(&corpus, &cfg.simulation).map_err(engine_err)?;
    initialize(&mut world, &cfg.simulation).map_err(engine_err)?;
    let mut sim =
        Simulation::new(world, cfg.simulation.clone(), cfg.agent.clone(), templates, annotator).map_err(engine_err)?;
    prepare_output(&out, args.force)?;

    let mut trace = SimulationTrace::default();
    let mut failure = None;
    for t in 0..cfg.steps {
        match sim.step(backend.as_ref()) {
            Ok(records) => trace.records.extend(records),
            Err(e) => {
                failure = Some(engine_err(e));
                break;
            }
        }
        if cfg.checkpoint_every > 0 && (t + 1) % cfg.checkpoint_every == 0 {
            let dir = out.join("checkpoints");
            fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
            let json = serde_json::to_string(&sim.checkpoint()).expect("checkpoint serializes");
            write_file(&dir.join(format!("step-{:04}.json", t + 1)), json)?;
        }
    }

    let mut outputs = BTreeMap::new();
    let trace_sha256 = write_file(&out.join("trace.jsonl"), trace.to_jsonl())?;
    outputs.insert("trace.jsonl".to_string(), trace_sha256.clone());
    let checkpoint = serde_json::to_string(&sim.checkpoint()).expect("checkpoint serializes");
    outputs.insert(
        "checkpoint.json".into(),
        write_file(&out.join("checkpoint.json"), checkpoint)?,
    );
    let manifest = cfg.manifest("simulate", outputs)?;
    write_file(
        &out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )?;
    if let Some(e) = failure {
        return Err(e);
    }
    info!(records = trace.records.len(), dir = %out.display(), "simulation written");
    Ok(SimulateOutcome {
        output_dir: out,
        records: trace.records.len(),
        trace_sha256,
    })
}

#[derive(Debug, Clone, Default)]
pub struct EvaluateArgs {
    pub trace: PathBuf,
    pub event: PathBuf,
    pub config: Option<PathBuf>,
    pub steps: Option<u64>,
    /// Questionnaire responses CSV to summarize alongside.
    pub responses: Option<PathBuf>,
    pub output: PathBuf,
    pub force: bool,
}

/// Writes `report.json`, `propagation.csv`, `alignment.csv` and `questionnaire.csv`.
pub fn evaluate(args: &EvaluateArgs) -> Result<EvalReport, CliError> {
    let cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let trace = SimulationTrace::load(&args.trace).map_err(|e| CliError::Data(e.to_string()))?;
    let corpus = load_corpus(&args.event)?;
    let mut eval_cfg = cfg.eval_config();
    eval_cfg.steps = args.steps;
    let mut report = sipsim_core::evaluate(&trace, &corpus, &eval_cfg).map_err(eval_err)?;
    if let Some(path) = &args.responses {
        let file = fs::File::open(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let records = read_records(file).map_err(siptest_err)?;
        let items = cfg.questionnaire.pack.items();
        report.questionnaire = Some(questionnaire_report(&records, &items).map_err(eval_err)?);
    }
    prepare_output(&args.output, args.force)?;
    write_file(&args.output.join("report.json"), report.to_json())?;
    write_file(
        &args.output.join("propagation.csv"),
        csv_bytes(|b| report.write_propagation_csv(b))?,
    )?;
    write_file(
        &args.output.join("alignment.csv"),
        csv_bytes(|b| report.write_alignment_csv(b))?,
    )?;
    if report.questionnaire.is_some() {
        write_file(
            &args.output.join("questionnaire.csv"),
            csv_bytes(|b| report.write_questionnaire_csv(b))?,
        )?;
    }
    Ok(report)
}

#[derive(Debug, Clone, Default)]
pub struct SipTestArgs {
    pub config: PathBuf,
    pub output: Option<PathBuf>,
    pub force: bool,
    pub respondents: Option<usize>,
    pub human: Option<PathBuf>,
}

fn respondents(cfg: &RunConfig, n: usize) -> Result<Vec<AgentProfile>, CliError> {
    match &cfg.event_path {
        Some(path) => {
            let corpus = load_corpus(path)?;
            if corpus.users.len() < n {
                return Err(CliError::Config(format!(
                    "questionnaire.respondents = {n} but the event has {} users",
                    corpus.users.len()
                )));
            }
            Ok(corpus.users.into_iter().take(n).collect())
        }
        None => Ok((0..n)
            .map(|i| AgentProfile::new(synth_agent_id(i), format!("Respondent {}", i + 1)))
            .collect()),
    }
}

/// Administers the questionnaire to each configured cohort and writes
/// `responses.csv`, `siptest.json` and `questionnaire.csv`.
pub fn sip_test(args: &SipTestArgs) -> Result<QuestionnaireReport, CliError> {
    let mut cfg = RunConfig::load(&args.config)?;
    let cwd = std::env::current_dir().map_err(|e| CliError::Io(e.to_string()))?;
    if let Some(n) = args.respondents {
        cfg.questionnaire.respondents = n;
    }
    if let Some(h) = &args.human {
        cfg.questionnaire.human_responses = Some(cwd.join(h));
        if !cfg.questionnaire.cohorts.contains(&Cohort::Human) {
            cfg.questionnaire.cohorts.push(Cohort::Human);
        }
    }
    if let Some(out) = &args.output {
        cfg.output_dir = Some(cwd.join(out));
    }
    cfg.validate()?;
    let out = required(&cfg.output_dir, "output directory (--output or output_dir)")?.to_path_buf();
    let templates = cfg.templates()?;
    let items = cfg.questionnaire.pack.items();
    let scenarios = cfg.questionnaire.scenarios.scenarios();
    let agents = respondents(&cfg, cfg.questionnaire.respondents)?;
    let needs_backend = cfg.questionnaire.cohorts.iter().any(|c| *c != Cohort::Human);
    let backend: Option<Box<dyn ChatBackend>> = if needs_backend {
        Some(match cfg.backend.kind {
            BackendKind::Mock => {
                Box::new(MockBackend::load(required(&cfg.backend.script, "backend.script")?).map_err(backend_err)?)
            }
            BackendKind::Http => build_backend(&cfg.backend).map_err(backend_err)?,
        })
    } else {
        None
    };
    prepare_output(&out, args.force)?;

    let mut records = Vec::new();
    for cohort in &cfg.questionnaire.cohorts {
        match cohort {
            Cohort::Human => {
                let path = required(&cfg.questionnaire.human_responses, "questionnaire.human_responses")?;
                records.extend(import_human(path).map_err(siptest_err)?);
            }
            agent_cohort => {
                let backend = backend.as_deref().expect("backend built for agent cohorts");
                let got = administer(
                    &agents,
                    *agent_cohort,
                    &scenarios,
                    &items,
                    backend,
                    &templates,
                    &cfg.questionnaire.settings,
                    cfg.backend.max_parallel,
                )
                .map_err(siptest_err)?;
                records.extend(got);
            }
        }
    }
    let mut buf = Vec::new();
    write_records(&mut buf, &records).map_err(siptest_err)?;
    let mut outputs = BTreeMap::new();
    outputs.insert(
        "responses.csv".to_string(),
        write_file(&out.join("responses.csv"), buf)?,
    );
    let report = questionnaire_report(&records, &items).map_err(eval_err)?;
    outputs.insert(
        "siptest.json".into(),
        write_file(&out.join("siptest.json"), report.to_json())?,
    );
    outputs.insert(
        "questionnaire.csv".into(),
        write_file(&out.join("questionnaire.csv"), csv_bytes(|b| report.write_csv(b))?)?,
    );
    let manifest = cfg.manifest("sip-test", outputs)?;
    write_file(
        &out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )?;
    Ok(report)
}

/// Structural statistics of one event file.
pub fn dataset_stats(path: &Path, strict: bool) -> Result<CorpusStats, CliError> {
    let policy = if strict {
        FieldPolicy::Strict
    } else {
        FieldPolicy::Lenient
    };
    let (corpus, warnings) = load_event(path, policy).map_err(data_err)?;
    for w in warnings {
        warn!("{}: {w}", path.display());
    }
    compute_stats(&corpus).map_err(data_err)
}

#[derive(Debug, Clone, Default)]
pub struct ReportArgs {
    /// `run_id=path` or `path`; a path may be a report file or a directory holding `report.json`.
    pub inputs: Vec<String>,
    pub output: PathBuf,
    pub force: bool,
}

fn parse_input(input: &str) -> (String, PathBuf) {
    let (id, path) = match input.split_once('=') {
        Some((id, p)) if !id.is_empty() => (Some(id.to_string()), PathBuf::from(p)),
        _ => (None, PathBuf::from(input)),
    };
    let file = if path.is_dir() { path.join("report.json") } else { path };
    let id = id.unwrap_or_else(|| {
        let dir = file.parent().and_then(|p| p.file_name());
        dir.map(|d| d.to_string_lossy().into_owned())
            .filter(|d| !d.is_empty())
            .unwrap_or_else(|| file.display().to_string())
    });
    (id, file)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Prefixes every row of a CSV produced by `write` with a `run_id` column.
fn with_run_id(
    out: &mut csv::Writer<Vec<u8>>,
    run_id: &str,
    header_written: &mut bool,
    bytes: &[u8],
) -> Result<(), CliError> {
    let mut rdr = csv::Reader::from_reader(bytes);
    let csv_err = |e: csv::Error| CliError::Io(e.to_string());
    if !*header_written {
        let mut header = vec!["run_id".to_string()];
        header.extend(rdr.headers().map_err(csv_err)?.iter().map(String::from));
        out.write_record(&header).map_err(csv_err)?;
        *header_written = true;
    }
    for row in rdr.records() {
        let row = row.map_err(csv_err)?;
        let mut rec = vec![run_id.to_string()];
        rec.extend(row.iter().map(String::from));
        out.write_record(&rec).map_err(csv_err)?;
    }
    Ok(())
}

/// Merges evaluation reports into `summary.csv`, `propagation.csv` and
/// `alignment.csv`, each with a leading `run_id` column.
pub fn report(args: &ReportArgs) -> Result<Vec<String>, CliError> {
    if args.inputs.is_empty() {
        return Err(CliError::Config("report needs at least one input".into()));
    }
    let mut runs = Vec::new();
    for input in &args.inputs {
        let (id, path) = parse_input(input);
        let text = fs::read_to_string(&path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let report: EvalReport =
            serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        if runs.iter().any(|(r, _): &(String, EvalReport)| *r == id) {
            return Err(CliError::Config(format!("duplicate run id `{id}`")));
        }
        runs.push((id, report));
    }
    prepare_output(&args.output, args.force)?;

    let csv_err = |e: csv::Error| CliError::Io(e.to_string());
    let mut summary = csv::Writer::from_writer(Vec::new());
    summary
        .write_record([
            "run_id",
            "steps",
            "compared_steps",
            "mean_delta_bias",
            "mean_delta_div",
            "final_delta_bias",
            "final_delta_div",
            "dtw",
            "stance_macro_f1",
            "content_macro_f1",
            "emotion_macro_f1",
            "stance_accuracy",
            "behavior_accuracy",
            "action_frequency_divergence",
        ])
        .map_err(csv_err)?;
    let mut propagation = csv::Writer::from_writer(Vec::new());
    let mut alignment = csv::Writer::from_writer(Vec::new());
    let (mut ph, mut ah) = (false, false);
    for (id, r) in &runs {
        let p = r.propagation.as_ref();
        let a = &r.alignment;
        let f1 = |d: &Option<sipsim_core::eval::LabelAlignment>| d.as_ref().map(|x| x.scores.macro_f1);
        summary
            .write_record([
                id.clone(),
                r.steps.to_string(),
                p.map_or(0, |p| p.compared_steps.len()).to_string(),
                fmt_opt(p.map(|p| p.mean_delta_bias)),
                fmt_opt(p.map(|p| p.mean_delta_div)),
                fmt_opt(p.map(|p| p.final_delta_bias)),
                fmt_opt(p.map(|p| p.final_delta_div)),
                fmt_opt(p.map(|p| p.dtw)),
                fmt_opt(f1(&a.stance)),
                fmt_opt(f1(&a.content)),
                fmt_opt(f1(&a.emotion)),
                fmt_opt(a.stance.as_ref().map(|s| s.scores.accuracy)),
                a.behavior.scores.accuracy.to_string(),
                a.action_frequency_divergence.to_string(),
            ])
            .map_err(csv_err)?;
        with_run_id(
            &mut propagation,
            id,
            &mut ph,
            &csv_bytes(|b| r.write_propagation_csv(b))?,
        )?;
        with_run_id(&mut alignment, id, &mut ah, &csv_bytes(|b| r.write_alignment_csv(b))?)?;
    }
    for (name, w) in [
        ("summary.csv", summary),
        ("propagation.csv", propagation),
        ("alignment.csv", alignment),
    ] {
        let bytes = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
        write_file(&args.output.join(name), bytes)?;
    }
    Ok(runs.into_iter().map(|(id, _)| id).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_guard() {
        let dir = tempfile::tempdir().unwrap();
        prepare_output(dir.path(), false).unwrap();
        fs::write(dir.path().join("x"), "1").unwrap();
        let err = prepare_output(dir.path(), false).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        prepare_output(dir.path(), true).unwrap();
    }

    #[test]
    fn input_specs() {
        let (id, path) = parse_input("base=runs/a/report.json");
        assert_eq!(id, "base");
        assert_eq!(path, PathBuf::from("runs/a/report.json"));
        let (id, _) = parse_input("runs/b/report.json");
        assert_eq!(id, "b");
    }
}
