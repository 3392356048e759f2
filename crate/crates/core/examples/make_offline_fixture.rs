//! Regenerate the offline fixture under `tests/fixtures/offline`.
//!
//! A scripted backend stands in for the model: samples lean towards the gold
//! option, teacher-forced logprobs and P(true) favour it, and NLI matrices
//! come from a deterministic word-overlap score. Everything is recorded
//! through the normal gateway path, then the pipeline is replayed once to
//! pin the golden report.
//!
//! ```text
//! cargo run --example make_offline_fixture
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use mcqa_eval::dataset::McqItem;
use mcqa_eval::gateway::scripted::{word_pieces, ScriptedBackend};
use mcqa_eval::gateway::{
    sha256_hex, BackendKind, Gateway, RecordStore, TokenLogprob, TokenLogprobSeq,
};
use mcqa_eval::similarity::matrix_file::write_matrix;
use mcqa_eval::similarity::{jaccard, SimilarityKind, SimilarityMatrix};
use mcqa_eval::studies::pipeline::{collect, load_items, open_gateways, run_with_gateways};
use mcqa_eval::studies::RunConfig;

fn unit(key: &str) -> f64 {
    let h = sha256_hex(key);
    u32::from_str_radix(&h[..8], 16).expect("hex prefix") as f64 / u32::MAX as f64
}

fn find<'a>(items: &'a [McqItem], prompt: &str) -> &'a McqItem {
    items
        .iter()
        .find(|i| prompt.contains(&i.question))
        .expect("prompt belongs to a fixture item")
}

fn sample(item: &McqItem, k: usize) -> String {
    let u = unit(&format!("sample\u{0}{}\u{0}{k}", item.id));
    let gold = item.correct_option();
    let others: Vec<&String> = item
        .options
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != item.correct_index)
        .map(|(_, o)| o)
        .collect();
    let pick = others[(u * 1000.0) as usize % others.len()];
    match u {
        u if u < 0.45 => gold.to_string(),
        u if u < 0.6 => format!("I think {gold}"),
        u if u < 0.85 => pick.clone(),
        _ => format!("probably {pick}"),
    }
}

fn backend(items: Arc<Vec<McqItem>>) -> ScriptedBackend {
    let for_sampler = Arc::clone(&items);
    let for_scorer = Arc::clone(&items);
    ScriptedBackend::named("scripted-7b")
        .with_sampler(move |prompt, params| {
            let item = find(&for_sampler, prompt);
            (0..params.n).map(|k| sample(item, k)).collect()
        })
        .with_scorer(move |prompt, completion, channel| {
            let item = find(&for_scorer, prompt);
            let boost = if completion == item.correct_option() { 0.5 } else { 0.0 };
            let tokens = word_pieces(completion)
                .into_iter()
                .enumerate()
                .map(|(i, piece)| {
                    let u = unit(&format!("lp\u{0}{}\u{0}{completion}\u{0}{i}", item.id));
                    let mut t = TokenLogprob::new(piece, (-0.05 - 1.8 * u + boost).min(-0.01));
                    if let Some(ch) = channel {
                        t.attention_weight = Some(0.2 + unit(&format!("{ch}\u{0}{completion}\u{0}{i}")));
                    }
                    t
                })
                .collect();
            TokenLogprobSeq {
                tokens,
                channel: channel.map(|c| format!("scripted/{c}")),
            }
        })
        .with_truth(move |prompt| {
            let item = find(&items, prompt);
            let candidate = prompt
                .lines()
                .find_map(|l| l.strip_prefix("Possible Answer: "))
                .unwrap_or_default();
            let base = if candidate == item.correct_option() { 0.65 } else { 0.35 };
            let p = (base + 0.4 * (unit(&format!("pt\u{0}{prompt}")) - 0.5)).clamp(0.01, 0.99);
            Ok((0.9 * p, 0.9 * (1.0 - p)))
        })
}

fn entailment(a: &str, b: &str) -> f64 {
    if a == b {
        return 1.0;
    }
    let (x, y) = if a < b { (a, b) } else { (b, a) };
    (0.1 + 0.8 * jaccard(a, b) + 0.08 * unit(&format!("e\u{0}{x}\u{0}{y}"))).min(0.99)
}

fn contradiction(a: &str, b: &str) -> f64 {
    if a == b {
        return 0.0;
    }
    let (x, y) = if a < b { (a, b) } else { (b, a) };
    0.9 * (1.0 - jaccard(a, b)) * (0.5 + 0.5 * unit(&format!("c\u{0}{x}\u{0}{y}")))
}

fn write_matrices(dir: &Path, item: &McqItem, texts: &[String], context: Option<&str>) {
    let n = texts.len();
    for (kind, f) in [
        (SimilarityKind::NliEntailment, entailment as fn(&str, &str) -> f64),
        (SimilarityKind::NliContradiction, contradiction),
    ] {
        let values: Vec<f64> = (0..n * n).map(|k| f(&texts[k / n], &texts[k % n])).collect();
        let m = SimilarityMatrix::from_values(n, kind, values, context.map(sha256_hex), 1e-12)
            .expect("valid matrix");
        write_matrix(&m, &dir.join(format!("{}.{kind}.txt", item.id))).expect("write matrix");
    }
}

fn main() {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/offline");
    let cfg_path = root.join("config.toml");
    let cfg = RunConfig::load(&cfg_path).expect("fixture config");
    let items = Arc::new(load_items(&cfg).expect("fixture items"));

    let _ = fs::remove_dir_all(&cfg.records.root);
    let _ = fs::remove_dir_all(root.join("nli"));
    fs::create_dir_all(root.join("nli")).expect("nli dir");

    let mut live = cfg.generation.clone();
    live.backend = BackendKind::Sidecar;
    let store = RecordStore::open(&cfg.records.root, &cfg.dataset.name, &live.model, &live.digest(), false)
        .expect("record store");
    let gateway = Gateway::new(live, Some(Box::new(backend(Arc::clone(&items)))), store).expect("gateway");

    let template = cfg.template().expect("template");
    for item in items.iter() {
        let prompt = template.render(item).expect("render").prompt;
        let mut texts: Vec<String> = gateway
            .sample_responses(&item.id, &prompt)
            .expect("samples")
            .into_iter()
            .map(|r| r.text)
            .collect();
        texts.extend(item.options.iter().cloned());
        let ctx = cfg.similarity.contextualize.then_some(item.question.as_str());
        write_matrices(&root.join("nli"), item, &texts, ctx);
    }
    let set = collect(&cfg, &items, &gateway, None).expect("collect");
    assert!(set.failed_items.is_empty(), "failed: {:?}", set.failed_items);
    assert!(set.unavailable.is_empty(), "unavailable: {:?}", set.unavailable);
    drop(gateway);

    let (replay, _) = open_gateways(&cfg).expect("replay gateway");
    let out = tempfile_dir();
    let (_, report) = run_with_gateways(&cfg, &items, &replay, None, &out).expect("replay run");
    fs::create_dir_all(root.join("golden")).expect("golden dir");
    fs::write(root.join("golden/report.json"), report.to_json().expect("json")).expect("write golden");
    fs::remove_dir_all(&out).expect("cleanup");
    println!("{}", report.to_markdown());
}

fn tempfile_dir() -> PathBuf {
    std::env::temp_dir().join(format!("mcqa-fixture-{}", std::process::id()))
}
