//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails. Uses only mock backends.

mod common;

use std::collections::BTreeSet;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config as PtConfig, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{sha256_file, sipsim, Fixture};
use sipsim_cli::commands::{EvaluateArgs, SimulateArgs};
use sipsim_core::backend::{BackendError, ChatRequest};
use sipsim_core::engine::{Activity, NoAnnotator, ScriptedAnnotator};
use sipsim_core::memory::{BufferSource, CognitiveKind, StoreKind};
use sipsim_core::metrics::{
    action_frequency_divergence, bias, correlation_matrix, delta_series, distribution_stats, diversity, dtw, macro_prf,
    pearson, stage_matrix, AttitudeSeries, ConfusionMatrix,
};
use sipsim_core::parser::parse_sip_analysis;
use sipsim_core::replay::{relabel, replay_script};
use sipsim_core::siptest::{administer, cohort_stats, Cohort};
use sipsim_core::synth::{synth_event, SynthScript};
use sipsim_core::{
    construct_environment, evaluate, initialize, parse_action_call, render_action, ActionKind, AgentAction,
    AgentConfig, AgentProfile, ChatBackend, EngineConfig, EvalConfig, EventCorpus, MemoryConfig, MockBackend,
    MockRecord, ParseStatus, QuestionnairePack, QuestionnaireSettings, ScenarioPack, Simulation, SocialMemory, Stance,
    TemplateId, TemplateSet,
};

type Outcome = Result<String, String>;
type Criterion = (u32, &'static str, fn() -> Outcome);

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn close(got: f64, want: f64, tol: f64, what: &str) -> Result<(), String> {
    check((got - want).abs() <= tol, || {
        format!("{what}: got {got}, want {want} (tol {tol})")
    })
}

fn within(elapsed: Duration, limit_secs: u64) -> Result<(), String> {
    check(elapsed < Duration::from_secs(limit_secs), || {
        format!("took {:.2}s, limit {limit_secs}s", elapsed.as_secs_f64())
    })
}

// ---------------------------------------------------------------- criterion 1

fn any_text() -> impl Strategy<Value = String> {
    prop::collection::vec(
        prop_oneof![
            Just('"'),
            Just('\\'),
            Just('\n'),
            Just('('),
            Just(')'),
            Just(','),
            Just('='),
            any::<char>()
        ],
        0..30,
    )
    .prop_map(|v| v.into_iter().collect())
}

fn non_empty() -> impl Strategy<Value = String> {
    any_text().prop_filter("content must be non-empty", |s| !s.is_empty())
}

fn actions() -> impl Strategy<Value = AgentAction> {
    prop_oneof![
        Just(AgentAction::DoNothing),
        non_empty().prop_map(|content| AgentAction::Post { content }),
        (non_empty(), any_text(), any_text(), any_text()).prop_map(|(content, author, id, orig)| {
            AgentAction::Retweet {
                content,
                author,
                original_tweet_id: id,
                original_tweet: orig,
            }
        }),
        (non_empty(), any_text(), any_text()).prop_map(|(content, author, id)| AgentAction::Reply {
            content,
            author,
            original_tweet_id: id,
        }),
        any_text().prop_map(|item_id| AgentAction::Like { item_id }),
    ]
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut runner = TestRunner::new(PtConfig {
        cases: 1000,
        failure_persistence: None,
        ..PtConfig::default()
    });
    let cases = std::sync::atomic::AtomicUsize::new(0);
    runner
        .run(&actions(), |a| {
            cases.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
            let back = parse_action_call(&render_action(&a));
            prop_assert_eq!(back, Ok(a));
            Ok(())
        })
        .map_err(|e| format!("round-trip: {e}"))?;
    let cases = cases.into_inner();
    check(cases >= 1000, || format!("only {cases} cases ran"))?;

    let appendix = [
        ("do_nothing()", AgentAction::DoNothing),
        (
            r#"post(content="Stop this farce!")"#,
            AgentAction::Post {
                content: "Stop this farce!".into(),
            },
        ),
        (
            r#"retweet(content="I agree with you", author="zzz", original_tweet_id="0", original_tweet="kkk")"#,
            AgentAction::Retweet {
                content: "I agree with you".into(),
                author: "zzz".into(),
                original_tweet_id: "0".into(),
                original_tweet: "kkk".into(),
            },
        ),
        (
            r#"reply(content="yyy", author="zzz", original_tweet_id="0")"#,
            AgentAction::Reply {
                content: "yyy".into(),
                author: "zzz".into(),
                original_tweet_id: "0".into(),
            },
        ),
    ];
    for (text, want) in appendix {
        check(parse_action_call(text).as_ref() == Ok(&want), || {
            format!("{text} parsed to {:?}", parse_action_call(text))
        })?;
    }
    within(start.elapsed(), 10)?;
    Ok(format!("{cases} generated actions, 4 template calls"))
}

// ---------------------------------------------------------------- criterion 2

/// Minimum cost over every monotone warping path, by explicit enumeration.
fn brute_dtw(x: &[f64], y: &[f64]) -> f64 {
    fn walk(x: &[f64], y: &[f64], i: usize, j: usize, acc: f64, best: &mut f64) {
        let acc = acc + (x[i] - y[j]).abs();
        if i == x.len() - 1 && j == y.len() - 1 {
            *best = best.min(acc);
            return;
        }
        if i + 1 < x.len() {
            walk(x, y, i + 1, j, acc, best);
        }
        if j + 1 < y.len() {
            walk(x, y, i, j + 1, acc, best);
        }
        if i + 1 < x.len() && j + 1 < y.len() {
            walk(x, y, i + 1, j + 1, acc, best);
        }
    }
    let mut best = f64::INFINITY;
    walk(x, y, 0, 0, 0.0, &mut best);
    best
}

fn all_series(max_len: usize) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::new();
    let mut layer: Vec<Vec<f64>> = vec![Vec::new()];
    for _ in 0..max_len {
        layer = layer
            .iter()
            .flat_map(|s| (0..3).map(move |v| [s.clone(), vec![f64::from(v)]].concat()))
            .collect();
        out.extend(layer.iter().cloned());
    }
    out
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut pairs = 0usize;
    // every pair of series up to length 3, values in {0,1,2}
    let short = all_series(3);
    for x in &short {
        for y in &short {
            let got = dtw(x, y).map_err(|e| e.to_string())?;
            close(got, brute_dtw(x, y), 0.0, &format!("dtw({x:?}, {y:?})"))?;
            pairs += 1;
        }
    }
    // seeded sample of longer pairs up to length 6
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let series = |rng: &mut ChaCha8Rng| {
        let n = rng.random_range(1..=6);
        (0..n)
            .map(|_| f64::from(rng.random_range(0..3u8)))
            .collect::<Vec<f64>>()
    };
    for _ in 0..500 {
        let (x, y) = (series(&mut rng), series(&mut rng));
        let got = dtw(&x, &y).map_err(|e| e.to_string())?;
        close(got, brute_dtw(&x, &y), 0.0, &format!("dtw({x:?}, {y:?})"))?;
        pairs += 1;
    }
    for _ in 0..500 {
        let n = rng.random_range(1..=20);
        let m = rng.random_range(1..=20);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        close(dtw(&x, &x).unwrap(), 0.0, 0.0, "dtw(x, x)")?;
        close(dtw(&x, &y).unwrap(), dtw(&y, &x).unwrap(), 1e-12, "dtw symmetry")?;
        check(dtw(&x, &y).unwrap() >= 0.0, || "negative dtw".into())?;
    }
    within(start.elapsed(), 30)?;
    Ok(format!("{pairs} oracle pairs, 500 identity/symmetry pairs"))
}

// ---------------------------------------------------------------- criterion 3

fn oracle_mean(v: &[f64]) -> f64 {
    let mut s = 0.0;
    for x in v {
        s += x;
    }
    s / v.len() as f64
}

fn oracle_pop_std(v: &[f64]) -> f64 {
    let m = oracle_mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt()
}

/// Macro P/R/F1 straight from (truth, predicted) pairs.
fn oracle_prf(pairs: &[(&str, &str)], labels: &[&str]) -> (f64, f64, f64) {
    let present: Vec<&str> = labels
        .iter()
        .copied()
        .filter(|l| pairs.iter().any(|(t, _)| t == l))
        .collect();
    let (mut p_sum, mut r_sum, mut f_sum) = (0.0, 0.0, 0.0);
    for l in &present {
        let tp = pairs.iter().filter(|(t, p)| t == l && p == l).count() as f64;
        let pred = pairs.iter().filter(|(_, p)| p == l).count() as f64;
        let truth = pairs.iter().filter(|(t, _)| t == l).count() as f64;
        let p = if pred > 0.0 { tp / pred } else { 0.0 };
        let r = if truth > 0.0 { tp / truth } else { 0.0 };
        let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        p_sum += p;
        r_sum += r;
        f_sum += f;
    }
    let n = present.len() as f64;
    (p_sum / n, r_sum / n, f_sum / n)
}

fn oracle_pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let (mx, my) = (oracle_mean(x), oracle_mean(y));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for i in 0..x.len() {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx).powi(2);
        syy += (y[i] - my).powi(2);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

fn criterion_3() -> Outcome {
    let mut checked = 0usize;
    let mut ok = |r: Result<(), String>| -> Result<(), String> {
        checked += 1;
        r
    };
    // bias and diversity
    for v in [
        vec![0.0, 0.0, 0.0],
        vec![1.0, -1.0],
        vec![1.0, 1.0, 0.0, -1.0],
        vec![1.0, 1.0, 1.0],
    ] {
        ok(close(
            bias(&v).unwrap(),
            oracle_mean(&v).abs(),
            1e-9,
            &format!("bias {v:?}"),
        ))?;
        ok(close(
            diversity(&v).unwrap(),
            oracle_pop_std(&v),
            1e-9,
            &format!("diversity {v:?}"),
        ))?;
    }
    ok(close(bias(&[1.0, 1.0, 0.0, -1.0]).unwrap(), 0.25, 1e-9, "bias example"))?;
    ok(close(
        diversity(&[1.0, -1.0]).unwrap(),
        1.0,
        1e-9,
        "diversity two-point",
    ))?;
    ok(close(
        diversity(&[1.0, 1.0, 0.0, -1.0]).unwrap(),
        0.82916,
        1e-5,
        "diversity example",
    ))?;

    // delta series: identity, extremes, 3-step hand fixture
    let sim = AttitudeSeries::new(vec![vec![1.0, 0.0, -1.0], vec![1.0, 1.0], vec![0.0, -1.0, -1.0, 1.0]]);
    let real = AttitudeSeries::new(vec![vec![0.0, 0.0], vec![1.0, -1.0, 0.0], vec![-1.0, -1.0]]);
    let same = delta_series(&sim, &sim).unwrap();
    ok(check(
        same.delta_bias.iter().chain(&same.delta_div).all(|d| *d == 0.0),
        || "self deltas".into(),
    ))?;
    let ext = delta_series(
        &AttitudeSeries::new(vec![vec![1.0; 4]]),
        &AttitudeSeries::new(vec![vec![0.0; 4]]),
    )
    .unwrap();
    ok(close(ext.delta_bias[0], 1.0, 1e-9, "extreme delta_bias"))?;
    ok(close(ext.delta_div[0], 0.0, 1e-9, "extreme delta_div"))?;
    let d = delta_series(&sim, &real).unwrap();
    let (mut sb, mut sd) = (0.0, 0.0);
    for t in 0..3 {
        let db = (oracle_mean(&sim.steps[t]).abs() - oracle_mean(&real.steps[t]).abs()).abs();
        let dd = (oracle_pop_std(&sim.steps[t]) - oracle_pop_std(&real.steps[t])).abs();
        ok(close(d.delta_bias[t], db, 1e-9, "delta_bias step"))?;
        ok(close(d.delta_div[t], dd, 1e-9, "delta_div step"))?;
        sb += db;
        sd += dd;
    }
    ok(close(d.mean_delta_bias, sb / 3.0, 1e-6, "mean delta_bias"))?;
    ok(close(d.mean_delta_div, sd / 3.0, 1e-6, "mean delta_div"))?;
    ok(close(d.final_delta_bias, d.delta_bias[2], 1e-9, "final delta_bias"))?;

    // macro P/R/F1
    let labels = ["A", "B", "C"];
    let owned = || labels.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let cases: Vec<Vec<(&str, &str)>> = vec![
        vec![("A", "A"), ("B", "B"), ("C", "C")],
        vec![("A", "A"), ("B", "A"), ("C", "A")],
        vec![("A", "A"), ("A", "A"), ("A", "B"), ("B", "B")],
        vec![
            ("A", "B"),
            ("B", "C"),
            ("C", "C"),
            ("C", "A"),
            ("A", "A"),
            ("B", "B"),
            ("B", "A"),
        ],
    ];
    for pairs in &cases {
        let cm = ConfusionMatrix::from_pairs(owned(), pairs.iter().copied()).unwrap();
        let r = macro_prf(&cm).unwrap();
        let (p, rc, f) = oracle_prf(pairs, &labels);
        ok(close(r.macro_precision, p, 1e-9, "macro precision"))?;
        ok(close(r.macro_recall, rc, 1e-9, "macro recall"))?;
        ok(close(r.macro_f1, f, 1e-9, "macro f1"))?;
    }
    let one_class = macro_prf(&ConfusionMatrix::from_pairs(owned(), cases[1].iter().copied()).unwrap()).unwrap();
    ok(close(one_class.macro_recall, 1.0 / 3.0, 1e-9, "one-class macro recall"))?;
    let perfect = macro_prf(&ConfusionMatrix::from_pairs(owned(), cases[0].iter().copied()).unwrap()).unwrap();
    ok(close(perfect.macro_f1, 1.0, 0.0, "perfect f1"))?;

    // distribution stats
    let s = distribution_stats(&[1.0, 2.0, 3.0]);
    ok(close(s.mean, 2.0, 1e-9, "mean [1,2,3]"))?;
    ok(close(s.skewness.unwrap(), 0.0, 1e-9, "skew [1,2,3]"))?;
    ok(close(
        distribution_stats(&[-1.0, 1.0]).excess_kurtosis.unwrap(),
        -2.0,
        1e-9,
        "kurtosis [-1,1]",
    ))?;
    let v = [1.0, 1.0, 2.0, 5.0];
    let m = oracle_mean(&v);
    let m2 = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 4.0;
    let m3 = v.iter().map(|x| (x - m).powi(3)).sum::<f64>() / 4.0;
    let m4 = v.iter().map(|x| (x - m).powi(4)).sum::<f64>() / 4.0;
    ok(close(m2, 2.6875, 1e-12, "oracle m2"))?;
    ok(close(m3, 4.21875, 1e-12, "oracle m3"))?;
    let s = distribution_stats(&v);
    ok(close(s.skewness.unwrap(), m3 / m2.powf(1.5), 1e-9, "skew [1,1,2,5]"))?;
    ok(close(s.skewness.unwrap(), 0.9575, 1e-4, "skew [1,1,2,5] rounded"))?;
    ok(close(
        s.excess_kurtosis.unwrap(),
        m4 / (m2 * m2) - 3.0,
        1e-9,
        "kurtosis [1,1,2,5]",
    ))?;
    ok(close(
        s.std.unwrap(),
        (m2 * 4.0 / 3.0).sqrt(),
        1e-9,
        "sample std [1,1,2,5]",
    ))?;

    // pearson
    let x = [1.0, 2.0, 3.0, 4.0];
    ok(close(pearson(&x, &x).unwrap(), 1.0, 1e-9, "pearson identity"))?;
    let neg: Vec<f64> = x.iter().map(|v| -v).collect();
    ok(close(pearson(&x, &neg).unwrap(), -1.0, 1e-9, "pearson reflection"))?;
    let y = [1.0, 3.0, 2.0, 4.0];
    ok(close(
        pearson(&x, &y).unwrap(),
        oracle_pearson(&x, &y).unwrap(),
        1e-9,
        "pearson oracle",
    ))?;
    ok(close(pearson(&x, &y).unwrap(), 0.8, 1e-9, "pearson example"))?;

    // action frequencies
    let sim = [ActionKind::Post, ActionKind::Reply];
    let real = [
        ActionKind::Post,
        ActionKind::Reply,
        ActionKind::Reply,
        ActionKind::Reply,
    ];
    ok(close(
        action_frequency_divergence(&sim, &real).unwrap(),
        0.5,
        1e-9,
        "frequency L1",
    ))?;
    Ok(format!("{checked} oracle comparisons"))
}

// ---------------------------------------------------------------- criteria 4, 5

fn replay_run(corpus: &EventCorpus, script: Vec<MockRecord>, steps: u64) -> sipsim_core::SimulationTrace {
    let backend = MockBackend::new(script);
    let cfg = EngineConfig::default();
    let mut world = construct_environment(corpus, &cfg).unwrap();
    initialize(&mut world, &cfg).unwrap();
    let mut sim = Simulation::new(
        world,
        cfg,
        AgentConfig::default(),
        TemplateSet::defaults(),
        Box::new(ScriptedAnnotator::new(backend.clone())),
    )
    .unwrap();
    sim.run(&backend, steps).unwrap()
}

fn criterion_4() -> Outcome {
    // through the command layer: simulate, then evaluate
    let steps = 7;
    let f = Fixture::replay(42, 12, steps);
    let run = f.path("run");
    sipsim_cli::simulate(&SimulateArgs {
        config: f.path("config.toml"),
        output: Some(run.clone()),
        ..SimulateArgs::default()
    })
    .map_err(|e| e.to_string())?;
    let report = sipsim_cli::evaluate(&EvaluateArgs {
        trace: run.join("trace.jsonl"),
        event: f.path("event.jsonl"),
        config: Some(f.path("config.toml")),
        output: f.path("eval"),
        ..EvaluateArgs::default()
    })
    .map_err(|e| e.to_string())?;
    let p = report.propagation.ok_or("no comparable steps")?;
    check(p.compared_steps.len() == steps as usize, || {
        format!("compared {:?}", p.compared_steps)
    })?;
    check(p.delta_bias.iter().all(|d| *d == 0.0), || {
        format!("delta_bias {:?}", p.delta_bias)
    })?;
    check(p.delta_div.iter().all(|d| *d == 0.0), || {
        format!("delta_div {:?}", p.delta_div)
    })?;
    check(p.dtw == 0.0, || format!("dtw {}", p.dtw))?;
    let a = &report.alignment;
    for (name, dim) in [("stance", &a.stance), ("content", &a.content), ("emotion", &a.emotion)] {
        let f1 = dim.as_ref().map(|d| d.scores.macro_f1);
        check(f1 == Some(1.0), || format!("{name} macro-F1 {f1:?}"))?;
    }
    Ok(format!("{} labeled pairs over {steps} steps", a.labeled_pairs))
}

fn flip(s: Stance) -> Stance {
    match s {
        Stance::Support => Stance::Oppose,
        Stance::Oppose => Stance::Neutral,
        Stance::Neutral => Stance::Support,
    }
}

fn criterion_5() -> Outcome {
    let steps = 6;
    // a corpus whose labeled slot count is a multiple of 5
    let (corpus, script) = (0..100)
        .map(|seed| {
            let c = synth_event(seed, 15, steps, &SynthScript::random_activity(3, 0.5, 0.5)).unwrap();
            let s = replay_script(&c);
            (c, s)
        })
        .find(|(_, s)| {
            let n = s.iter().filter(|r| r.labels.is_some()).count();
            n >= 20 && n % 5 == 0
        })
        .ok_or("no suitable corpus")?;
    let flipped = relabel(&script, |i, r| {
        (i % 5 == 0).then(|| {
            let mut l = r.labels.clone().unwrap();
            l.stance = flip(l.stance);
            l
        })
    });
    // confusion matrix implied by the flip script
    let mut expected: Vec<(&str, &str)> = Vec::new();
    let mut i = 0;
    for r in &script {
        if let Some(l) = &r.labels {
            let pred = if i % 5 == 0 { flip(l.stance) } else { l.stance };
            expected.push((l.stance.as_str(), pred.as_str()));
            i += 1;
        }
    }
    let trace = replay_run(&corpus, flipped, steps);
    let report = evaluate(&trace, &corpus, &EvalConfig::default()).map_err(|e| e.to_string())?;
    let st = report.alignment.stance.ok_or("no stance alignment")?;
    check(st.confusion.total() as usize == expected.len(), || {
        format!("{} pairs compared, {} scripted", st.confusion.total(), expected.len())
    })?;
    check(st.scores.accuracy == 0.8, || format!("accuracy {}", st.scores.accuracy))?;
    let (p, r, f) = oracle_prf(&expected, &["support", "neutral", "oppose"]);
    close(st.scores.macro_precision, p, 1e-9, "macro precision")?;
    close(st.scores.macro_recall, r, 1e-9, "macro recall")?;
    close(st.scores.macro_f1, f, 1e-9, "macro f1")?;
    Ok(format!("{} pairs, accuracy 0.8, macro-F1 {:.6}", expected.len(), f))
}

// ---------------------------------------------------------------- criterion 6

fn criterion_6() -> Outcome {
    let f = Fixture::replay(6, 10, 11);
    let start = Instant::now();
    let dir = f.dir.path();
    for (args, name) in [
        (vec!["simulate", "-c", "config.toml", "-o", "a"], "a"),
        (vec!["simulate", "-c", "config.toml", "-o", "b"], "b"),
        (vec!["simulate", "-c", "a/manifest.json", "-o", "c"], "c"),
    ] {
        let o = sipsim(&args, dir);
        check(o.status.success(), || {
            format!("run {name} failed: {}", String::from_utf8_lossy(&o.stderr))
        })?;
    }
    let elapsed = start.elapsed();
    let h: Vec<String> = ["a", "b", "c"]
        .iter()
        .map(|d| sha256_file(&f.path(&format!("{d}/trace.jsonl"))))
        .collect();
    check(h[0] == h[1] && h[1] == h[2], || format!("trace hashes differ: {h:?}"))?;
    let records = std::fs::read_to_string(f.path("a/trace.jsonl"))
        .unwrap()
        .lines()
        .count();
    check(records == 110, || format!("{records} records"))?;
    within(elapsed / 3, 10)?;
    Ok(format!(
        "3 runs, sha256 {}…, {:.2}s per run",
        &h[0][..12],
        elapsed.as_secs_f64() / 3.0
    ))
}

// ---------------------------------------------------------------- criterion 7

fn criterion_7() -> Outcome {
    let items = QuestionnairePack::Appendix.items();
    let scenarios = ScenarioPack::MainText.scenarios();
    let agents = vec![AgentProfile::new("r1", "R1"), AgentProfile::new("r2", "R2")];
    let settings = QuestionnaireSettings::default();
    let templates = TemplateSet::defaults();
    // varied answers: rating depends on respondent and item
    let mut varied = Vec::new();
    for (ai, a) in agents.iter().enumerate() {
        for (ii, it) in items.iter().enumerate() {
            varied.push(MockRecord {
                agent_id: a.agent_id.clone(),
                step: None,
                template_id: TemplateId::Questionnaire,
                item_id: Some(it.item_id.clone()),
                response: format!("{}", 1 + (ai + ii) % 5),
                labels: None,
            });
        }
    }
    let recs = administer(
        &agents,
        Cohort::AgentSip,
        &scenarios,
        &items,
        &MockBackend::new(varied),
        &templates,
        &settings,
        4,
    )
    .map_err(|e| e.to_string())?;
    check(recs.len() == 130, || format!("{} records", recs.len()))?;
    check(recs.iter().all(|r| r.rating.is_some()), || "missing ratings".into())?;

    let constant = administer(
        &agents,
        Cohort::AgentBaseline,
        &scenarios,
        &items,
        &MockBackend::constant("4"),
        &templates,
        &settings,
        4,
    )
    .map_err(|e| e.to_string())?;
    let stats = cohort_stats(&constant, Cohort::AgentBaseline, &items);
    for it in &stats.per_item {
        let s = it.stats.as_ref().ok_or("no stats")?;
        check(s.std == Some(0.0) && s.degenerate, || format!("{}: {s:?}", it.item_id))?;
    }
    let all_missing = |m: &Option<sipsim_core::metrics::CorrelationMatrix>| {
        m.as_ref()
            .is_some_and(|m| m.values.iter().flatten().all(Option::is_none))
    };
    check(all_missing(&stats.matrix13) && all_missing(&stats.matrix5), || {
        "constant responders must give all-missing matrices".into()
    })?;

    // 5-respondent fixture against pairwise oracle
    let rows: Vec<Vec<f64>> = vec![
        vec![1., 2., 3., 4., 5., 1., 2., 3., 4., 5., 3., 3., 2.],
        vec![2., 2., 4., 4., 4., 2., 1., 3., 5., 4., 2., 3., 3.],
        vec![3., 3., 3., 5., 2., 3., 3., 4., 4., 3., 4., 3., 1.],
        vec![4., 5., 2., 1., 3., 4., 5., 2., 3., 1., 5., 3., 4.],
        vec![5., 4., 1., 2., 1., 5., 4., 1., 2., 2., 1., 3., 5.],
    ];
    let labels: Vec<String> = (1..=13).map(|i| format!("Q{i}")).collect();
    let m = correlation_matrix(&rows, labels).map_err(|e| e.to_string())?;
    let col = |c: usize| rows.iter().map(|r| r[c]).collect::<Vec<f64>>();
    let mut compared = 0;
    for i in 0..13 {
        for j in 0..13 {
            let want = oracle_pearson(&col(i), &col(j));
            match (m.values[i][j], want) {
                (Some(g), Some(w)) => close(g, w, 1e-9, &format!("r[{i}][{j}]"))?,
                (None, None) => {}
                (g, w) => return Err(format!("r[{i}][{j}]: got {g:?}, want {w:?}")),
            }
            compared += 1;
        }
    }
    // Q12 is constant in the fixture, so its row must be missing
    check(m.values[11].iter().all(Option::is_none), || {
        "constant item not flagged".into()
    })?;
    let stages = [0..1, 1..4, 4..7, 7..10, 10..13];
    let agg: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| stages.iter().map(|s| oracle_mean(&r[s.clone()])).collect())
        .collect();
    let m5 = stage_matrix(&rows).map_err(|e| e.to_string())?;
    for i in 0..5 {
        for j in 0..5 {
            let a: Vec<f64> = agg.iter().map(|r| r[i]).collect();
            let b: Vec<f64> = agg.iter().map(|r| r[j]).collect();
            match (m5.values[i][j], oracle_pearson(&a, &b)) {
                (Some(g), Some(w)) => close(g, w, 1e-9, &format!("stage r[{i}][{j}]"))?,
                (None, None) => {}
                (g, w) => return Err(format!("stage r[{i}][{j}]: got {g:?}, want {w:?}")),
            }
        }
    }
    Ok(format!(
        "130 records, constant responder degenerate, {compared}+25 matrix cells"
    ))
}

// ---------------------------------------------------------------- criterion 8

const WORDS: [&str; 12] = [
    "policy",
    "school",
    "vote",
    "rights",
    "protest",
    "council",
    "funding",
    "community",
    "angry",
    "calm",
    "news",
    "rumor",
];

fn phrase(rng: &mut ChaCha8Rng) -> String {
    let n = rng.random_range(1..6);
    (0..n)
        .map(|_| WORDS[rng.random_range(0..WORDS.len())])
        .collect::<Vec<_>>()
        .join(" ")
}

fn oracle_tokens(text: &str) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let mut cur = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() {
            cur.extend(c.to_lowercase());
        } else if !cur.is_empty() {
            out.insert(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.insert(cur);
    }
    out
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let analysis = parse_sip_analysis(
        "[Cue] a\n[Interpret] b\n[Goal] c\n[Retrieve] d\n[Evaluate] e",
        sipsim_core::parser::TagDialect::SipTags,
    )
    .map_err(|e| e.to_string())?;
    let mut ops = 0usize;
    for capacity in [1usize, 5, 20] {
        let cfg = MemoryConfig {
            capacity,
            ..MemoryConfig::default()
        };
        let mut mem = SocialMemory::seeded(&AgentProfile::new("a", "A"), cfg);
        for step in 0..10_000u64 {
            match rng.random_range(0..5) {
                0 => {
                    let src = [BufferSource::Grounded, BufferSource::Reasoned, BufferSource::Retrieved]
                        [rng.random_range(0..3)];
                    mem.buffer.push(src, phrase(&mut rng), step);
                }
                1 => {
                    let store = if rng.random_bool(0.5) {
                        StoreKind::Cognitive
                    } else {
                        StoreKind::Behavior
                    };
                    let k = rng.random_range(1..6);
                    mem.retrieve(&phrase(&mut rng), store, k, step)
                        .map_err(|e| e.to_string())?;
                }
                2 => mem.learn(&analysis, &AgentAction::DoNothing, "none", None, step),
                3 => {
                    mem.add_cognitive(CognitiveKind::Schema, phrase(&mut rng), BTreeSet::new(), step);
                }
                _ => {
                    let feed: Vec<_> = (0..rng.random_range(0..15))
                        .map(|i| sipsim_core::ContentItem {
                            item_id: format!("i{step}-{i}"),
                            author_id: "b".into(),
                            parent_id: None,
                            text: phrase(&mut rng),
                            timestamp: sipsim_core::synth::synth_origin(),
                            step: Some(step),
                            labels: None,
                            retweet_of: None,
                        })
                        .collect();
                    mem.ground(&[], &feed, step);
                }
            }
            ops += 1;
            check(mem.buffer.len() <= capacity, || {
                format!("buffer {} > capacity {capacity} after op {step}", mem.buffer.len())
            })?;
        }
    }

    // ranking against brute-force rescoring
    for store_no in 0..100 {
        let cfg = MemoryConfig::default();
        let mut mem = SocialMemory::new(cfg.clone());
        let now = 50;
        for _ in 0..rng.random_range(1..40) {
            let tags: BTreeSet<String> = (0..rng.random_range(0..3))
                .map(|_| WORDS[rng.random_range(0..12)].to_string())
                .collect();
            mem.add_cognitive(CognitiveKind::Norm, phrase(&mut rng), tags, rng.random_range(0..=now));
        }
        let query = phrase(&mut rng);
        let k = rng.random_range(1..8);
        let q = oracle_tokens(&query);
        let mut want: Vec<(f64, String)> = mem
            .cognitive
            .iter()
            .map(|e| {
                let mut t = oracle_tokens(&e.text);
                t.extend(e.tags.iter().cloned());
                let union = q.union(&t).count();
                let rel = if union == 0 {
                    0.0
                } else {
                    q.intersection(&t).count() as f64 / union as f64
                };
                let rec = cfg.decay.powi((now - e.created_step) as i32);
                (cfg.w_rel * rel + cfg.w_rec * rec, e.entry_id.clone())
            })
            .collect();
        want.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then_with(|| a.1.cmp(&b.1)));
        want.truncate(k);
        let got = mem
            .rank(&query, StoreKind::Cognitive, k, now)
            .map_err(|e| e.to_string())?;
        check(got.len() == want.len(), || {
            format!("store {store_no}: {} vs {}", got.len(), want.len())
        })?;
        for (g, (score, id)) in got.iter().zip(&want) {
            check(&g.entry_id == id, || {
                format!("store {store_no}: got {}, want {id}", g.entry_id)
            })?;
            close(g.score, *score, 1e-12, "retrieval score")?;
        }
    }
    Ok(format!("{ops} random ops over 3 capacities, 100 ranked stores"))
}

// ---------------------------------------------------------------- criterion 9

const PROBE: &str = "probe";

fn marker(step: u64, agent: &str) -> String {
    format!("MARK<{step}>{agent}")
}

/// Others post a marker each step; the probe tries to reply to a same-step
/// item and records every prompt it is shown.
struct ProbeBackend {
    seen: Mutex<Vec<(u64, String)>>,
    target: String,
}

impl ChatBackend for ProbeBackend {
    fn complete(&self, req: &ChatRequest) -> Result<String, BackendError> {
        let tag = req
            .tag
            .as_ref()
            .ok_or_else(|| BackendError::InvalidRequest("untagged request".into()))?;
        let step = tag.step.unwrap_or(0);
        if tag.agent_id == PROBE {
            let text: String = req
                .messages
                .iter()
                .map(|m| m.content.as_str())
                .collect::<Vec<_>>()
                .join("\n");
            self.seen.lock().unwrap().push((step, text));
        }
        Ok(match (tag.template_id, tag.agent_id == PROBE) {
            (TemplateId::SipAnalysis, _) => "[Cue] c\n[Interpret] i\n[Goal] g\n[Retrieve] r\n[Evaluate] e".into(),
            (TemplateId::ActionSelect, true) => format!(
                "[OPTION 4] Thought: [Goal] respond. Action: reply(content=\"seen\", author=\"{}\", original_tweet_id=\"s{step}-{}\")",
                self.target, self.target
            ),
            (TemplateId::ActionSelect, false) => format!(
                "[OPTION 2] Thought: [Goal] share. Action: post(content=\"{} says hi\")",
                marker(step, &tag.agent_id)
            ),
            (t, _) => return Err(BackendError::InvalidRequest(format!("unexpected template {t}"))),
        })
    }
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut earlier_seen = 0usize;
    let mut probe_decisions = 0usize;
    for run in 0..100 {
        let n = rng.random_range(2..7);
        let steps = rng.random_range(2..6);
        let mut users: Vec<AgentProfile> = (0..n)
            .map(|i| AgentProfile::new(format!("u{i}"), format!("U{i}")))
            .collect();
        users.push(AgentProfile::new(PROBE, "Probe"));
        let follows: Vec<(String, String)> = (0..n)
            .filter(|_| rng.random_bool(0.8))
            .map(|i| (PROBE.to_string(), format!("u{i}")))
            .chain(std::iter::once((PROBE.to_string(), "u0".to_string())))
            .collect();
        let corpus = EventCorpus::new(format!("probe-{run}"), vec![], users, follows).map_err(|e| e.to_string())?;
        let cfg = EngineConfig {
            seed: rng.random(),
            activity: if rng.random_bool(0.5) {
                Activity::All
            } else {
                Activity::Fraction(0.8)
            },
            ..EngineConfig::default()
        };
        let mut world = construct_environment(&corpus, &cfg).map_err(|e| e.to_string())?;
        initialize(&mut world, &cfg).map_err(|e| e.to_string())?;
        let mut sim = Simulation::new(
            world,
            cfg,
            AgentConfig::default(),
            TemplateSet::defaults(),
            Box::new(NoAnnotator),
        )
        .map_err(|e| e.to_string())?;
        let backend = ProbeBackend {
            seen: Mutex::new(Vec::new()),
            target: "u0".into(),
        };
        let trace = sim.run(&backend, steps).map_err(|e| e.to_string())?;
        for (step, text) in backend.seen.lock().unwrap().iter() {
            if text.contains(&format!("MARK<{step}>")) {
                return Err(format!("run {run}: probe saw step-{step} content during step {step}"));
            }
            earlier_seen += (0..*step).filter(|s| text.contains(&format!("MARK<{s}>"))).count();
        }
        for r in trace.records.iter().filter(|r| r.agent_id == PROBE) {
            probe_decisions += 1;
            check(matches!(r.parse_status, ParseStatus::Rejected(_)), || {
                format!("run {run}: probe reply to a same-step item was {:?}", r.parse_status)
            })?;
        }
        check(!sim.world.items.values().any(|i| i.author_id == PROBE), || {
            format!("run {run}: probe created an item")
        })?;
    }
    // the probe must actually see earlier-step content, or the check is vacuous
    check(earlier_seen > 0, || "probe never saw any content".into())?;
    Ok(format!(
        "100 runs, {probe_decisions} probe decisions, {earlier_seen} earlier-step sightings"
    ))
}

// ---------------------------------------------------------------- driver

fn main() {
    let criteria: [Criterion; 9] = [
        (1, "parser round-trip", criterion_1),
        (2, "DTW oracle", criterion_2),
        (3, "metric oracles", criterion_3),
        (4, "closed-loop ground truth", criterion_4),
        (5, "controlled degradation", criterion_5),
        (6, "determinism", criterion_6),
        (7, "SIP-test cardinality and stats", criterion_7),
        (8, "memory properties", criterion_8),
        (9, "snapshot isolation", criterion_9),
    ];
    let suite = Instant::now();
    let mut failed = 0;
    for (n, name, f) in criteria {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {n:>2}: PASS  {name} ({secs:.2}s) {detail}"),
            Err(e) => {
                failed += 1;
                println!("criterion {n:>2}: FAIL  {name} ({secs:.2}s) {e}");
            }
        }
    }
    let total = suite.elapsed();
    let ok10 = failed == 0 && total < Duration::from_secs(300);
    println!(
        "criterion 10: {}  full offline suite ({:.2}s, limit 300s, mock backends only)",
        if ok10 { "PASS" } else { "FAIL" },
        total.as_secs_f64()
    );
    if !ok10 {
        std::process::exit(1);
    }
}
