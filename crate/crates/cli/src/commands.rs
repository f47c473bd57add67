use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::Context;
use efpc_core::align::{label_record, mix_datasets, validate_example, LabeledExample};
use efpc_core::compressor::{compress, compress_batch, CompressError, CompressionRequest};
use efpc_core::distill::{
    distill_corpus, ratio_histogram, DistillError, DistilledRecord, Document, HttpChatProvider,
    LlmProvider, MockCompressor, ProviderError, RetryPolicy,
};
use efpc_core::encoder::checkpoint::{from_bytes, to_bytes};
use efpc_core::encoder::{build_vocab, train, ModelError, TrainError};
use efpc_core::eval::{
    alpha_mixing_sweep, data_efficiency_sweep, evaluate_downstream, evaluate_labeled, EvalError,
    ExtractiveAnswerer, MetricsReport, QARecord, SweepReport,
};
use efpc_core::{jsonl, Model32};
use serde::{Deserialize, Serialize};

use crate::config::{ConfigError, RunConfig};
use crate::manifest::{to_pretty, ReportFile, RunRecorder};
use crate::{CliError, Command};

type Result<T> = std::result::Result<T, CliError>;

fn user(msg: impl std::fmt::Display) -> CliError {
    CliError::Input(msg.to_string())
}

fn runtime(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Runtime(e.into())
}

fn required<'a>(path: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    let p = path
        .as_deref()
        .ok_or_else(|| user(format!("{flag} is required (or set it under [paths] in the config)")))?;
    if !p.is_file() {
        return Err(user(format!("{}: no such file", p.display())));
    }
    Ok(p)
}

fn existing(path: &Path) -> Result<&Path> {
    if !path.is_file() {
        return Err(user(format!("{}: no such file", path.display())));
    }
    Ok(path)
}

fn read_jsonl<T: serde::de::DeserializeOwned>(rec: &mut RunRecorder, path: &Path) -> Result<Vec<T>> {
    let bytes = rec.input(path).map_err(|e| user(format!("{}: {e}", path.display())))?;
    let text = String::from_utf8(bytes).map_err(|_| user(format!("{}: not UTF-8", path.display())))?;
    jsonl::parse(&path.display().to_string(), &text).map_err(user)
}

fn read_checkpoint(rec: &mut RunRecorder, path: &Path) -> Result<Model32> {
    let bytes = rec.input(path).map_err(|e| user(format!("{}: {e}", path.display())))?;
    from_bytes(&bytes).map_err(|e| user(format!("{}: {e}", path.display())))
}

fn write(rec: &mut RunRecorder, path: &Path, bytes: &[u8]) -> Result<()> {
    rec.write_output(path, bytes)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(CliError::Runtime)
}

fn finish(rec: RunRecorder, primary: &Path) -> Result<()> {
    rec.finish(primary)
        .with_context(|| format!("writing manifest for {}", primary.display()))
        .map_err(CliError::Runtime)?;
    Ok(())
}

fn live_provider(config: &RunConfig) -> Result<HttpChatProvider> {
    let p = &config.provider;
    HttpChatProvider::from_env(&p.base_url, &p.model_name, Duration::from_secs(p.timeout_secs)).map_err(|e| match e {
        ProviderError::MissingKey(_) => user(e),
        other => runtime(other),
    })
}

fn model_error(e: ModelError) -> CliError {
    match e {
        ModelError::InstructionTooLong { .. } | ModelError::EmptyInput => user(e),
        other => runtime(other),
    }
}

fn compress_error(e: CompressError) -> CliError {
    match e {
        CompressError::Model(m) => model_error(m),
        other => user(other),
    }
}

fn train_error(e: TrainError) -> CliError {
    match e {
        TrainError::EmptyDataset => user(e),
        TrainError::Model(m) => model_error(m),
        other => runtime(other),
    }
}

fn eval_error(e: EvalError) -> CliError {
    match e {
        EvalError::Train(t) => train_error(t),
        EvalError::Model(m) => model_error(m),
        other => user(other),
    }
}

/// Runs a parsed command and writes its line-oriented summary to `out`.
pub fn run(command: &Command, config: &RunConfig, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Distill(a) => distill(config, &a.out),
        Command::Label(a) => label(config, &a.out),
        Command::Train(a) => train_cmd(config, a),
        Command::Compress(a) => compress_cmd(config, a),
        Command::Eval(a) => eval_cmd(config, a),
        Command::Sweep(a) => sweep(config, a),
        Command::Stats(a) => stats(config, a.out.as_deref()),
    }
    .and_then(|lines| out.write_all(lines.as_bytes()).map_err(runtime))
}

fn distill(config: &RunConfig, dest: &Path) -> Result<String> {
    let corpus = required(&config.paths.corpus, "--corpus")?;
    let mut rec = RunRecorder::new("distill", config);
    let docs: Vec<Document> = read_jsonl(&mut rec, corpus)?;
    let provider: Box<dyn LlmProvider> = if config.provider.mock {
        Box::new(MockCompressor)
    } else {
        Box::new(live_provider(config)?)
    };
    let data = distill_corpus(provider.as_ref(), &docs, &config.distill_config()).map_err(|e| match e {
        DistillError::EmptyCorpus => user(e),
        other => runtime(other),
    })?;
    write(&mut rec, dest, jsonl::to_string(&data.records).as_bytes())?;
    finish(rec, dest)?;
    let mut s = format!("records\t{}\nfailures\t{}\n", data.records.len(), data.failures.len());
    if let Ok(h) = ratio_histogram(&data.records, config.eval.bin_width) {
        s.push_str(&format!("mean_ratio\t{:.6}\n", h.mean));
    }
    Ok(s)
}

fn label(config: &RunConfig, dest: &Path) -> Result<String> {
    let dataset = required(&config.paths.dataset, "--dataset")?;
    let mut rec = RunRecorder::new("label", config);
    let records: Vec<DistilledRecord> = read_jsonl(&mut rec, dataset)?;
    let mut examples = Vec::with_capacity(records.len());
    let mut match_sum = 0.0;
    let mut flags: BTreeMap<&str, usize> = BTreeMap::new();
    for r in &records {
        let (ex, diag) = label_record(r).map_err(user)?;
        match_sum += diag.match_rate;
        for f in validate_example(&ex) {
            *flags.entry(f.as_str()).or_default() += 1;
        }
        examples.push(ex);
    }
    write(&mut rec, dest, jsonl::to_string(&examples).as_bytes())?;
    finish(rec, dest)?;
    let mut s = format!("examples\t{}\n", examples.len());
    if !records.is_empty() {
        s.push_str(&format!("mean_match_rate\t{:.6}\n", match_sum / records.len() as f64));
    }
    for (f, n) in flags {
        s.push_str(&format!("flagged\t{f}\t{n}\n"));
    }
    Ok(s)
}

fn train_cmd(config: &RunConfig, a: &crate::TrainArgs) -> Result<String> {
    let data_path = required(&config.paths.labeled, "--data")?;
    let mut rec = RunRecorder::new("train", config);
    let aware: Vec<LabeledExample> = read_jsonl(&mut rec, data_path)?;

    let dataset = match (&a.mix_agnostic, config.train.alpha) {
        (Some(path), Some(alpha)) => {
            let agnostic: Vec<LabeledExample> = read_jsonl(&mut rec, existing(path)?)?;
            let agnostic: Vec<_> = agnostic.iter().map(LabeledExample::without_instruction).collect();
            let total = config.train.total.unwrap_or(aware.len());
            mix_datasets(&aware, &agnostic, alpha, total, config.seed).map_err(user)?
        }
        (Some(_), None) => {
            return Err(ConfigError::Validation("joint training needs alpha (--alpha or train.alpha)".into()).into())
        }
        (None, Some(_)) => {
            return Err(ConfigError::Validation("alpha is only meaningful with --mix-agnostic".into()).into())
        }
        (None, None) => aware,
    };

    let model = match &a.init {
        Some(path) => read_checkpoint(&mut rec, existing(path)?)?,
        None => {
            let vocab = build_vocab(&dataset).map_err(|_| user("no training examples"))?;
            Model32::new(config.model_config(), vocab).map_err(runtime)?
        }
    };
    let (trained, report) = train(&model, &dataset, &config.train_config()).map_err(train_error)?;
    write(&mut rec, &a.out, &to_bytes(&trained))?;
    finish(rec, &a.out)?;

    let mut s = format!(
        "examples\t{}\nwindows\t{}\nskipped_degenerate\t{}\n",
        report.examples, report.windows, report.skipped_degenerate
    );
    for e in &report.epochs {
        s.push_str(&format!("epoch\t{}\tloss\t{:.6}\taccuracy\t{:.6}\n", e.epoch, e.mean_loss, e.token_accuracy));
    }
    Ok(s)
}

fn compress_cmd(config: &RunConfig, a: &crate::CompressArgs) -> Result<String> {
    let target = config.compression_target()?;
    let ckpt = required(&config.paths.checkpoint, "--checkpoint")?;
    let mut rec = RunRecorder::new("compress", config);
    let model = read_checkpoint(&mut rec, ckpt)?;
    let input = rec
        .input(existing(&a.input)?)
        .map_err(|e| user(format!("{}: {e}", a.input.display())))?;
    let original = String::from_utf8(input).map_err(|_| user("input is not UTF-8"))?;
    rec.input_value("instruction", a.instruction.as_bytes());
    let result = compress(&model, &CompressionRequest::new(a.instruction.clone(), original, target))
        .map_err(compress_error)?;
    let mut line = serde_json::to_vec(&result.record()).map_err(runtime)?;
    line.push(b'\n');
    match &a.out {
        Some(dest) => {
            write(&mut rec, dest, &line)?;
            finish(rec, dest)?;
            Ok(format!("kept\t{}\t{}\n", result.kept_indices.len(), result.n_original))
        }
        None => Ok(String::from_utf8(line).unwrap()),
    }
}

/// Downstream QA item: a context to compress and a question about it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaItem {
    pub context: String,
    pub question: String,
    pub gold_answers: Vec<String>,
}

fn report_lines(report: &MetricsReport) -> String {
    let mut s = String::new();
    for (k, v) in &report.metrics {
        s.push_str(&format!("metric\t{k}\t{v:.6}\n"));
    }
    if let Some(t) = report.tokens {
        s.push_str(&format!(
            "tokens\t{:.6}\t{:.6}\t{:.6}\n",
            t.mean_original_units, t.mean_kept_units, t.mean_inverse_ratio
        ));
    }
    s.push_str(&format!("items\t{}\tscored\t{}\tfailed\t{}\n", report.n_items, report.n_scored, report.n_failed));
    s
}

fn eval_cmd(config: &RunConfig, a: &crate::EvalArgs) -> Result<String> {
    let ckpt = required(&config.paths.checkpoint, "--checkpoint")?;
    let mut rec = RunRecorder::new("eval", config);
    let model = read_checkpoint(&mut rec, ckpt)?;
    let with_instruction = !a.no_instruction;

    let report = if let Some(path) = &a.labeled {
        let examples: Vec<LabeledExample> = read_jsonl(&mut rec, existing(path)?)?;
        evaluate_labeled(&model, &examples, with_instruction).map_err(model_error)?
    } else {
        let path = a.qa.as_ref().expect("clap enforces one of --labeled/--qa");
        let target = config.compression_target()?;
        let items: Vec<QaItem> = read_jsonl(&mut rec, existing(path)?)?;
        if items.iter().any(|q| q.gold_answers.is_empty()) {
            return Err(user("every QA item needs at least one gold answer"));
        }
        let requests: Vec<CompressionRequest> = items
            .iter()
            .map(|q| {
                let instruction = if with_instruction { q.question.clone() } else { String::new() };
                CompressionRequest::new(instruction, q.context.clone(), target)
            })
            .collect();
        let mut pairs = Vec::with_capacity(items.len());
        for (r, q) in compress_batch(&model, &requests).into_iter().zip(&items) {
            let qa = QARecord {
                question: q.question.clone(),
                gold_answers: q.gold_answers.clone(),
                predicted: String::new(),
            };
            pairs.push((r.map_err(compress_error)?, qa));
        }
        let retry = RetryPolicy {
            max_attempts: config.provider.max_attempts,
            ..Default::default()
        };
        if config.provider.mock {
            evaluate_downstream(&ExtractiveAnswerer, &pairs, &retry)
        } else {
            evaluate_downstream(&live_provider(config)?, &pairs, &retry)
        }
    };

    let file = to_pretty(&ReportFile::new(&rec, &report));
    write(&mut rec, &a.out, &file)?;
    finish(rec, &a.out)?;
    Ok(report_lines(&report))
}

fn sweep(config: &RunConfig, a: &crate::SweepArgs) -> Result<String> {
    let mut rec = RunRecorder::new("sweep", config);
    let eval_set: Vec<LabeledExample> = read_jsonl(&mut rec, existing(&a.eval)?)?;
    let train_cfg = config.train_config();

    let report: SweepReport = match (&a.extra, &a.aware, &a.agnostic) {
        (Some(extra), None, None) => {
            let base_path = required(&config.paths.checkpoint, "--base")?;
            let base = read_checkpoint(&mut rec, base_path)?;
            let extra: Vec<LabeledExample> = read_jsonl(&mut rec, existing(extra)?)?;
            data_efficiency_sweep(&base, &extra, &config.eval.fractions, &eval_set, &train_cfg).map_err(eval_error)?
        }
        (None, Some(aware), Some(agnostic)) => {
            let aware: Vec<LabeledExample> = read_jsonl(&mut rec, existing(aware)?)?;
            let agnostic: Vec<LabeledExample> = read_jsonl(&mut rec, existing(agnostic)?)?;
            let agnostic: Vec<_> = agnostic.iter().map(LabeledExample::without_instruction).collect();
            let init = match &config.paths.checkpoint {
                Some(p) => read_checkpoint(&mut rec, existing(p)?)?,
                None => {
                    let all: Vec<_> = aware.iter().chain(&agnostic).chain(&eval_set).cloned().collect();
                    let vocab = build_vocab(&all).map_err(|_| user("no examples"))?;
                    Model32::new(config.model_config(), vocab).map_err(runtime)?
                }
            };
            let total = config.train.total.unwrap_or(aware.len());
            alpha_mixing_sweep(&init, &aware, &agnostic, &config.eval.alphas, total, &eval_set, &train_cfg)
                .map_err(eval_error)?
        }
        _ => return Err(user("sweep needs either --extra (with --base) or both --aware and --agnostic")),
    };

    for (i, cell) in report.cells.iter().enumerate() {
        let file = serde_json::json!({
            report.parameter.clone(): cell.value,
            "n_train": cell.n_train,
            "report": ReportFile::new(&rec, &cell.report),
        });
        write(&mut rec, &a.out_dir.join(format!("cell_{i:02}.json")), &to_pretty(&file))?;
    }
    let summary = report.summary_tsv();
    let summary_path = a.out_dir.join("summary.tsv");
    write(&mut rec, &summary_path, summary.as_bytes())?;
    finish(rec, &summary_path)?;
    Ok(summary)
}

fn stats(config: &RunConfig, dest: Option<&Path>) -> Result<String> {
    let dataset = required(&config.paths.dataset, "--dataset")?;
    let mut rec = RunRecorder::new("stats", config);
    let records: Vec<DistilledRecord> = read_jsonl(&mut rec, dataset)?;
    let summary = ratio_histogram(&records, config.eval.bin_width)
        .map_err(|e| user(format!("{}: {e}", dataset.display())))?
        .summary();
    if let Some(dest) = dest {
        write(&mut rec, dest, summary.as_bytes())?;
        finish(rec, dest)?;
    }
    Ok(summary)
}
