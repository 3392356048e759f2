//! Baseline (sampled-response) runs end to end against a scripted backend:
//! record live, replay offline, and compare.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use mcqa_eval::dataset::{load_dataset, McqItem};
use mcqa_eval::gateway::http::network_calls;
use mcqa_eval::gateway::scripted::ScriptedBackend;
use mcqa_eval::gateway::{sha256_hex, BackendKind, Gateway, RecordStore};
use mcqa_eval::methods::Method;
use mcqa_eval::metrics::{EvalMode, Origin};
use mcqa_eval::studies::pipeline::open_gateways;
use mcqa_eval::studies::report::MethodStatus;
use mcqa_eval::studies::{run_with_gateways, RunConfig, StudyError, StudyUnit};

fn items_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/offline/items.jsonl")
}

fn unit(key: &str) -> f64 {
    u32::from_str_radix(&sha256_hex(key)[..8], 16).unwrap() as f64 / u32::MAX as f64
}

fn config(dir: &Path, extra: &str) -> RunConfig {
    let text = format!(
        r#"
schema_version = 1
mode = "baseline"
methods = ["deg_j", "ecc_j", "sl", "perplexity", "token_sar", "csl", "csl_next", "p_true"]
max_failed_fraction = 0.0

[dataset]
path = "{items}"
name = "fixture"
template = "reading"

[generation]
backend = "replay"
model = "scripted-7b"
n_samples = 5
temperature = 1.0
request_seed = 3

[records]
root = "{records}"

[metrics]
hist_bins = 4
ece_bins = 4
rce_bins = 5
{extra}
"#,
        items = items_path().display(),
        records = dir.join("records").display(),
    );
    RunConfig::from_toml(&text).unwrap()
}

fn find<'a>(items: &'a [McqItem], prompt: &str) -> &'a McqItem {
    items.iter().find(|i| prompt.contains(&i.question)).unwrap()
}

/// Samples are the gold option, a wordier paraphrase of it, or a distractor.
fn backend(items: Arc<Vec<McqItem>>) -> ScriptedBackend {
    ScriptedBackend::named("scripted-7b").with_sampler(move |prompt, params| {
        let item = find(&items, prompt);
        (0..params.n)
            .map(|k| {
                let u = unit(&format!("{}:{k}", item.id));
                let other = &item.options[(item.correct_index + 1) % item.options.len()];
                match u {
                    u if u < 0.4 => item.correct_option().to_string(),
                    u if u < 0.6 => format!("maybe {}", item.correct_option()),
                    _ => other.clone(),
                }
            })
            .collect()
    })
}

fn live(cfg: &RunConfig, root: &Path, backend: ScriptedBackend) -> Gateway {
    let mut g = cfg.generation.clone();
    g.backend = BackendKind::Sidecar;
    let store = RecordStore::open(root, &cfg.dataset.name, &g.model, &g.digest(), false).unwrap();
    Gateway::new(g, Some(Box::new(backend)), store).unwrap()
}

#[test]
fn similarity_labels_give_one_block_per_threshold_and_replay_exactly() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "[baseline]\ntaus = [0.9, 0.5]\n");
    let items = Arc::new(load_dataset(&items_path(), "fixture").unwrap());

    let gw = live(&cfg, &cfg.records.root, backend(Arc::clone(&items)));
    let (set, report) = run_with_gateways(&cfg, &items, &gw, None, &tmp.path().join("live")).unwrap();
    drop(gw);

    assert_eq!(set.mode, EvalMode::Baseline);
    assert!(set.labels.iter().all(|l| l.origin == Origin::SampledResponse && l.continuous.is_some()));
    assert_eq!(set.labels.len(), items.len() * 5);
    let taus: Vec<Option<f64>> = report.blocks.iter().map(|b| b.tau).collect();
    assert_eq!(taus, [Some(0.5), Some(0.9)]);
    for block in &report.blocks {
        for m in &block.methods {
            assert_eq!(m.status, MethodStatus::Ok, "{}", m.method);
            assert_eq!(m.n_scored, items.len() * 5);
        }
    }
    // "maybe <gold>" clears 0.5 only for single-word gold answers, so the
    // stricter threshold has fewer positives.
    let positives = |i: usize| report.blocks[i].method(Method::DegJ).unwrap().n_correct;
    assert!(positives(1) < positives(0));

    let units = StudyUnit::from_score_set(&set);
    assert_eq!(units.len(), items.len() * 5);

    let before = network_calls();
    let (replay, _) = open_gateways(&cfg).unwrap();
    let (_, again) = run_with_gateways(&cfg, &items, &replay, None, &tmp.path().join("replay")).unwrap();
    assert_eq!(network_calls(), before);
    assert_eq!(again.to_json().unwrap(), report.to_json().unwrap());
}

#[test]
fn judge_labels_are_binary_and_indeterminate_replies_exclude_units() {
    let tmp = tempfile::tempdir().unwrap();
    let judge_cfg = "[baseline]\ncorrectness = \"judge\"\n\n[judge]\nbackend = \"replay\"\nmodel = \"judge-1b\"\n";
    let cfg = config(tmp.path(), judge_cfg);
    let items = Arc::new(load_dataset(&items_path(), "fixture").unwrap());

    let gw = live(&cfg, &cfg.records.root, backend(Arc::clone(&items)));
    let judge_spec = cfg.judge.clone().unwrap();
    let mut j = judge_spec.clone();
    j.backend = BackendKind::Sidecar;
    let store = RecordStore::open(&cfg.records.root.join("judge"), "fixture", &j.model, &j.digest(), false).unwrap();
    let judge_backend = ScriptedBackend::named("judge-1b").with_sampler(|prompt, _| {
        let reply = if prompt.contains("Proposed answer: maybe") { "Unsure" } else { "No" };
        vec![reply.to_string()]
    });
    let judge = Gateway::new(j, Some(Box::new(judge_backend)), store).unwrap();

    let (set, report) = run_with_gateways(&cfg, &items, &gw, Some(&judge), &tmp.path().join("out")).unwrap();
    assert_eq!(report.blocks.len(), 1);
    assert_eq!(report.blocks[0].tau, None);
    assert!(set.labels.iter().all(|l| l.continuous.is_none() && l.correctness.is_some()));
    let hedged = set.exclusions.iter().filter(|e| e.reason.contains("indeterminate")).count();
    assert!(hedged > 0);
    assert_eq!(set.labels.len() + hedged, items.len() * 5);
    // Verbatim gold answers are judged correct without asking the judge.
    assert!(set.labels.iter().any(|l| l.correctness == Some(1)));
}

#[test]
fn judge_mode_rejects_thresholds() {
    let tmp = tempfile::tempdir().unwrap();
    let text = format!(
        "schema_version = 1\nmode = \"baseline\"\n[dataset]\npath = \"{}\"\nname = \"fixture\"\ntemplate = \"reading\"\n\
         [baseline]\ntaus = [0.5]\ncorrectness = \"judge\"\n[judge]\nmodel = \"j\"\n",
        tmp.path().join("x.jsonl").display()
    );
    assert!(matches!(RunConfig::from_toml(&text), Err(StudyError::Config(_))));
}
