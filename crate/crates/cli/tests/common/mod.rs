#![allow(dead_code)]

use std::path::{Path, PathBuf};

use efpc_core::eval::ExtractiveAnswerer;
use efpc_core::{jsonl, synth};
use efpc_cli::commands::QaItem;

pub const FAST_CONFIG: &str = r#"
seed = 7

[provider]
mock = true
concurrency = 4

[distill]
max_units = 40

[model]
embed_dim = 16
num_layers = 2
num_heads = 2
ffn_dim = 32
max_seq_len = 64

[train]
loss = "mask"
learning_rate = 0.003
epochs = 3
batch_size = 10

[compress]
ratio = 0.5
"#;

/// Runs the CLI in-process, returning (exit code, stdout, stderr).
pub fn run(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("efpc").chain(args.iter().copied());
    let code = efpc_cli::run_cli_with(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes a corpus, QA set and config into `dir`.
pub fn write_inputs(dir: &Path) {
    let docs = synth::documents(24, 6, 11);
    std::fs::write(dir.join("corpus.jsonl"), jsonl::to_string(&docs)).unwrap();
    // gold: what the target answers from the uncompressed context
    let qa: Vec<QaItem> = docs
        .iter()
        .map(|d| QaItem {
            context: d.text.clone(),
            question: d.instruction.clone(),
            gold_answers: vec![ExtractiveAnswerer::answer(&d.text, &d.instruction)],
        })
        .filter(|q| !q.gold_answers[0].is_empty())
        .collect();
    std::fs::write(dir.join("qa.jsonl"), jsonl::to_string(&qa)).unwrap();
    std::fs::write(dir.join("efpc.toml"), FAST_CONFIG).unwrap();
    std::fs::write(dir.join("doc.txt"), &docs[0].text).unwrap();
}

fn ok(args: &[&str]) -> String {
    let (code, out, err) = run(args);
    assert_eq!(code, 0, "efpc {args:?} failed: {err}");
    out
}

/// distill -> label -> train -> compress -> eval -> stats in `dir`.
/// Returns the artifact paths.
pub fn full_pipeline(dir: &Path) -> Vec<PathBuf> {
    write_inputs(dir);
    let p = |n: &str| dir.join(n);
    let cfg = p("efpc.toml");
    ok(&["distill", "--config", s(&cfg), "--corpus", s(&p("corpus.jsonl")), "--out", s(&p("pairs.jsonl"))]);
    ok(&["label", "--config", s(&cfg), "--dataset", s(&p("pairs.jsonl")), "--out", s(&p("labeled.jsonl"))]);
    ok(&["train", "--config", s(&cfg), "--data", s(&p("labeled.jsonl")), "--out", s(&p("model.ckpt"))]);
    ok(&[
        "compress", "--config", s(&cfg), "--checkpoint", s(&p("model.ckpt")), "--input", s(&p("doc.txt")),
        "--instruction", "What about the river?", "--out", s(&p("compressed.json")),
    ]);
    ok(&[
        "eval", "--config", s(&cfg), "--checkpoint", s(&p("model.ckpt")), "--qa", s(&p("qa.jsonl")),
        "--out", s(&p("report.json")),
    ]);
    ok(&[
        "eval", "--config", s(&cfg), "--checkpoint", s(&p("model.ckpt")), "--labeled", s(&p("labeled.jsonl")),
        "--out", s(&p("labeled_report.json")),
    ]);
    ok(&["stats", "--config", s(&cfg), "--dataset", s(&p("pairs.jsonl")), "--out", s(&p("stats.tsv"))]);
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    files.sort();
    files
}
