//! Evaluation: token-F1, ROUGE-1/2/L and BLEU on word tokens, a downstream
//! QA harness against a target LLM, and training-data sweeps.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::align::{mix_datasets, AlignError, LabeledExample};
use crate::compressor::CompressionResult;
use crate::distill::{is_stopword, LlmProvider, Message, ProviderError, RetryPolicy};
use crate::encoder::model::preserve_probs;
use crate::encoder::train::{predicted_label, train, TrainError};
use crate::encoder::{Model, ModelError, TrainConfig};
use crate::scalar::Scalar;
use crate::text::{ends_sentence, normalize_word, split_words};

/// Lowercased whitespace tokens; the unit for every metric here.
pub fn metric_tokens(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn counts<'a, I: IntoIterator<Item = &'a [String]>>(grams: I) -> HashMap<&'a [String], usize> {
    let mut m = HashMap::new();
    for g in grams {
        *m.entry(g).or_insert(0) += 1;
    }
    m
}

/// Bag-of-words F1. Both empty scores 1, one empty scores 0.
pub fn token_f1(predicted: &str, gold: &str) -> f64 {
    let p = metric_tokens(predicted);
    let g = metric_tokens(gold);
    match (p.is_empty(), g.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let pc = counts(p.chunks(1));
    let gc = counts(g.chunks(1));
    let common: usize = pc.iter().map(|(w, &c)| c.min(*gc.get(w).unwrap_or(&0))).sum();
    f1(common as f64 / p.len() as f64, common as f64 / g.len() as f64)
}

/// Best token-F1 against any gold answer.
pub fn max_token_f1(predicted: &str, golds: &[String]) -> f64 {
    golds.iter().map(|g| token_f1(predicted, g)).fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    const ZERO: Prf = Prf {
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
    };

    fn new(precision: f64, recall: f64) -> Self {
        Self {
            precision,
            recall,
            f1: f1(precision, recall),
        }
    }
}

/// N-gram overlap. All zeros when either side has no n-grams.
pub fn rouge_n(candidate: &str, reference: &str, n: usize) -> Prf {
    assert!(n >= 1, "n must be at least 1");
    let c = metric_tokens(candidate);
    let r = metric_tokens(reference);
    if c.len() < n || r.len() < n {
        return Prf::ZERO;
    }
    let cc = counts(c.windows(n));
    let rc = counts(r.windows(n));
    let overlap: usize = cc.iter().map(|(g, &k)| k.min(*rc.get(g).unwrap_or(&0))).sum();
    Prf::new(
        overlap as f64 / (c.len() - n + 1) as f64,
        overlap as f64 / (r.len() - n + 1) as f64,
    )
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Longest-common-subsequence precision, recall and F1.
pub fn rouge_l(candidate: &str, reference: &str) -> Prf {
    let c = metric_tokens(candidate);
    let r = metric_tokens(reference);
    if c.is_empty() || r.is_empty() {
        return Prf::ZERO;
    }
    let l = lcs_len(&c, &r) as f64;
    Prf::new(l / c.len() as f64, l / r.len() as f64)
}

/// Corpus-free sentence BLEU: geometric mean of clipped n-gram precisions
/// for n in 1..=max_n times the brevity penalty `exp(1 - r/c)` (applied
/// only when the candidate is shorter than the closest reference).
/// Orders n >= 2 with zero matches use `1 / (total + 1)`.
pub fn bleu<S: AsRef<str>>(candidate: &str, references: &[S], max_n: usize) -> f64 {
    assert!(max_n >= 1, "max_n must be at least 1");
    let c = metric_tokens(candidate);
    let refs: Vec<Vec<String>> = references.iter().map(|r| metric_tokens(r.as_ref())).collect();
    if c.is_empty() || refs.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let total = c.len().saturating_sub(n - 1);
        let cc = counts(c.windows(n));
        let mut max_ref: HashMap<&[String], usize> = HashMap::new();
        for r in &refs {
            for (g, k) in counts(r.windows(n)) {
                let e = max_ref.entry(g).or_insert(0);
                *e = (*e).max(k);
            }
        }
        let matches: usize = cc.iter().map(|(g, &k)| k.min(*max_ref.get(g).unwrap_or(&0))).sum();
        let p = if matches > 0 {
            matches as f64 / total as f64
        } else if n == 1 {
            return 0.0;
        } else {
            1.0 / (total as f64 + 1.0)
        };
        log_sum += p.ln();
    }
    let c_len = c.len() as f64;
    let r_len = refs
        .iter()
        .map(|r| r.len())
        .min_by_key(|&l| ((l as i64 - c.len() as i64).abs(), l))
        .unwrap() as f64;
    let bp = if c_len >= r_len { 1.0 } else { (1.0 - r_len / c_len).exp() };
    bp * (log_sum / max_n as f64).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QARecord {
    pub question: String,
    pub gold_answers: Vec<String>,
    #[serde(default)]
    pub predicted: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleScores {
    pub index: usize,
    pub scores: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenStats {
    pub mean_original_units: f64,
    pub mean_kept_units: f64,
    pub mean_inverse_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Mean of each metric over the scored examples.
    pub metrics: BTreeMap<String, f64>,
    pub per_example: Vec<ExampleScores>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub tokens: Option<TokenStats>,
    pub n_items: usize,
    pub n_scored: usize,
    pub n_failed: usize,
}

impl MetricsReport {
    /// Aggregates per-example rows; failed rows are counted but not averaged.
    pub fn from_examples(per_example: Vec<ExampleScores>, tokens: Option<TokenStats>) -> Self {
        let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        let mut n_failed = 0;
        for ex in &per_example {
            if ex.error.is_some() {
                n_failed += 1;
                continue;
            }
            for (k, &v) in &ex.scores {
                let e = sums.entry(k.clone()).or_insert((0.0, 0));
                e.0 += v;
                e.1 += 1;
            }
        }
        Self {
            metrics: sums.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect(),
            n_items: per_example.len(),
            n_scored: per_example.len() - n_failed,
            n_failed,
            per_example,
            tokens,
        }
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).copied()
    }
}

pub const QA_INSTRUCTION: &str = "Answer the question using only the context. Reply with the answer alone.";
pub const CONTEXT_HEADER: &str = "Context:\n";
pub const QUESTION_HEADER: &str = "Question:\n";

pub fn build_qa_request(context: &str, question: &str) -> Vec<Message> {
    vec![Message::user(format!(
        "{QA_INSTRUCTION}\n\n{CONTEXT_HEADER}{context}\n\n{QUESTION_HEADER}{question}\n\nAnswer:"
    ))]
}

pub fn parse_qa_request(content: &str) -> Option<(String, String)> {
    let c = content.find(CONTEXT_HEADER)? + CONTEXT_HEADER.len();
    let q_marker = format!("\n\n{QUESTION_HEADER}");
    let q = content.rfind(&q_marker)?;
    let end = content.rfind("\n\nAnswer:")?;
    if c > q || q > end {
        return None;
    }
    Some((
        content[c..q].to_string(),
        content[q + q_marker.len()..end].to_string(),
    ))
}

/// Deterministic stand-in for a target LLM answering extractive questions:
/// picks the context sentence sharing the most content words with the
/// question and answers with its remaining content words.
#[derive(Debug, Clone, Default)]
pub struct ExtractiveAnswerer;

impl ExtractiveAnswerer {
    pub fn answer(context: &str, question: &str) -> String {
        let q: HashSet<String> = split_words(question)
            .words
            .iter()
            .filter(|w| !is_stopword(w))
            .map(|w| normalize_word(w))
            .collect();
        let mut sentences: Vec<Vec<String>> = vec![Vec::new()];
        for w in split_words(context).words {
            let end = ends_sentence(&w);
            sentences.last_mut().unwrap().push(w);
            if end {
                sentences.push(Vec::new());
            }
        }
        let mut best: Option<(usize, &Vec<String>)> = None;
        for s in &sentences {
            let overlap = s.iter().filter(|w| q.contains(&normalize_word(w))).count();
            if overlap > 0 && best.is_none_or(|(b, _)| overlap > b) {
                best = Some((overlap, s));
            }
        }
        best.map(|(_, s)| {
            s.iter()
                .filter(|w| !is_stopword(w))
                .map(|w| normalize_word(w))
                .filter(|w| !q.contains(w))
                .collect::<Vec<_>>()
                .join(" ")
        })
        .unwrap_or_default()
    }
}

impl LlmProvider for ExtractiveAnswerer {
    fn provider_id(&self) -> &str {
        "mock:extractive-answerer"
    }

    fn complete(&self, messages: &[Message]) -> Result<String, ProviderError> {
        let content = &messages
            .last()
            .ok_or_else(|| ProviderError::Malformed("no messages".into()))?
            .content;
        let (context, question) =
            parse_qa_request(content).ok_or_else(|| ProviderError::Malformed("unrecognized request".into()))?;
        Ok(Self::answer(&context, &question))
    }
}

/// Scores one answer against the gold answers: QA token-F1 plus ROUGE and
/// BLEU against the best-matching gold.
pub fn answer_scores(answer: &str, golds: &[String]) -> BTreeMap<String, f64> {
    let best = |f: &dyn Fn(&str) -> f64| golds.iter().map(|g| f(g)).fold(0.0, f64::max);
    BTreeMap::from([
        ("qa_f1".to_string(), max_token_f1(answer, golds)),
        ("rouge1".to_string(), best(&|g| rouge_n(answer, g, 1).f1)),
        ("rouge2".to_string(), best(&|g| rouge_n(answer, g, 2).f1)),
        ("rougeL".to_string(), best(&|g| rouge_l(answer, g).f1)),
        ("bleu".to_string(), bleu(answer, golds, 4)),
    ])
}

/// Sends each compressed context with its question to `target` and scores
/// the answers. Items whose request fails are recorded and excluded from
/// the means.
pub fn evaluate_downstream(
    target: &dyn LlmProvider,
    items: &[(CompressionResult, QARecord)],
    retry: &RetryPolicy,
) -> MetricsReport {
    let mut rows = Vec::with_capacity(items.len());
    for (index, (compressed, qa)) in items.iter().enumerate() {
        let request = build_qa_request(&compressed.kept_text(), &qa.question);
        match retry.run(|| target.complete(&request)) {
            Ok(answer) => rows.push(ExampleScores {
                index,
                scores: answer_scores(answer.trim(), &qa.gold_answers),
                error: None,
            }),
            Err(e) => {
                log::warn!("item {index}: {e}");
                rows.push(ExampleScores {
                    index,
                    scores: BTreeMap::new(),
                    error: Some(e.to_string()),
                });
            }
        }
    }
    let n = items.len().max(1) as f64;
    let tokens = (!items.is_empty()).then(|| TokenStats {
        mean_original_units: items.iter().map(|(c, _)| c.n_original as f64).sum::<f64>() / n,
        mean_kept_units: items.iter().map(|(c, _)| c.kept_indices.len() as f64).sum::<f64>() / n,
        mean_inverse_ratio: items.iter().map(|(c, _)| c.achieved_inverse_ratio).sum::<f64>() / n,
    });
    MetricsReport::from_examples(rows, tokens)
}

/// Per-example token accuracy of a model on labeled data.
pub fn evaluate_labeled<T: Scalar>(
    model: &Model<T>,
    examples: &[LabeledExample],
    with_instruction: bool,
) -> Result<MetricsReport, ModelError> {
    let mut rows = Vec::with_capacity(examples.len());
    for (index, e) in examples.iter().enumerate() {
        let (mut correct, mut total) = (0usize, 0usize);
        for w in model.tokenize(std::slice::from_ref(e), with_instruction)? {
            for (p, &y) in preserve_probs(&model.params, &w)?.iter().zip(&w.labels) {
                correct += usize::from(predicted_label(*p) == y);
                total += 1;
            }
        }
        let acc = if total == 0 { 0.0 } else { correct as f64 / total as f64 };
        rows.push(ExampleScores {
            index,
            scores: BTreeMap::from([("token_accuracy".to_string(), acc)]),
            error: None,
        });
    }
    Ok(MetricsReport::from_examples(rows, None))
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("sweep values must lie in [0, 1] and be strictly increasing")]
    InvalidFractions,
    #[error("no extra data to sample from")]
    InsufficientData,
    #[error(transparent)]
    Align(#[from] AlignError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    /// Extra-data fraction or mixing alpha.
    pub value: f64,
    pub n_train: usize,
    pub report: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub parameter: String,
    pub cells: Vec<SweepCell>,
}

impl SweepReport {
    /// Tab-separated summary, one row per cell.
    pub fn summary_tsv(&self) -> String {
        let names: Vec<String> = self
            .cells
            .first()
            .map(|c| c.report.metrics.keys().cloned().collect())
            .unwrap_or_default();
        let mut s = format!("{}\tn_train", self.parameter);
        for n in &names {
            s.push('\t');
            s.push_str(n);
        }
        s.push('\n');
        for c in &self.cells {
            s.push_str(&format!("{}\t{}", c.value, c.n_train));
            for n in &names {
                s.push_str(&format!("\t{:.6}", c.report.metrics.get(n).copied().unwrap_or(f64::NAN)));
            }
            s.push('\n');
        }
        s
    }
}

fn check_values(values: &[f64]) -> Result<(), EvalError> {
    let in_range = values.iter().all(|v| (0.0..=1.0).contains(v));
    let increasing = values.windows(2).all(|w| w[0] < w[1]);
    if values.is_empty() || !in_range || !increasing {
        return Err(EvalError::InvalidFractions);
    }
    Ok(())
}

/// Incremental training with growing amounts of extra data.
///
/// Subsets are nested prefixes of one seeded permutation of `extra`. Each
/// cell trains a fresh copy of `base` with the same `config`; fraction 0
/// evaluates `base` untouched.
pub fn data_efficiency_sweep<T: Scalar>(
    base: &Model<T>,
    extra: &[LabeledExample],
    fractions: &[f64],
    eval_set: &[LabeledExample],
    config: &TrainConfig,
) -> Result<SweepReport, EvalError> {
    check_values(fractions)?;
    if extra.is_empty() && fractions.iter().any(|&f| f > 0.0) {
        return Err(EvalError::InsufficientData);
    }
    let with_instruction = config.loss_variant.uses_instruction();
    let mut order: Vec<usize> = (0..extra.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed));
    let mut cells = Vec::new();
    for &f in fractions {
        let k = ((f * extra.len() as f64) + 0.5).floor() as usize;
        let report = if k == 0 {
            evaluate_labeled(base, eval_set, with_instruction)?
        } else {
            let subset: Vec<LabeledExample> = order[..k].iter().map(|&i| extra[i].clone()).collect();
            let (model, _) = train(base, &subset, config)?;
            evaluate_labeled(&model, eval_set, with_instruction)?
        };
        cells.push(SweepCell {
            value: f,
            n_train: k,
            report,
        });
    }
    Ok(SweepReport {
        parameter: "fraction".into(),
        cells,
    })
}

/// Joint training at a fixed total size, varying the task-aware share.
pub fn alpha_mixing_sweep<T: Scalar>(
    init: &Model<T>,
    task_aware: &[LabeledExample],
    task_agnostic: &[LabeledExample],
    alphas: &[f64],
    total: usize,
    eval_set: &[LabeledExample],
    config: &TrainConfig,
) -> Result<SweepReport, EvalError> {
    check_values(alphas)?;
    let with_instruction = config.loss_variant.uses_instruction();
    let mut cells = Vec::new();
    for &alpha in alphas {
        let mix = mix_datasets(task_aware, task_agnostic, alpha, total, config.seed)?;
        let (model, _) = train(init, &mix, config)?;
        cells.push(SweepCell {
            value: alpha,
            n_train: mix.len(),
            report: evaluate_labeled(&model, eval_set, with_instruction)?,
        });
    }
    Ok(SweepReport {
        parameter: "alpha".into(),
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compressor::{select, Target};

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-9
    }

    #[test]
    fn token_f1_examples() {
        assert_eq!(token_f1("cat", "cat"), 1.0);
        assert!(close(token_f1("the cat", "cat"), 2.0 / 3.0));
        assert_eq!(token_f1("", "cat"), 0.0);
        assert_eq!(token_f1("cat", ""), 0.0);
        assert_eq!(token_f1("", "  "), 1.0);
        assert_eq!(token_f1("Cat", "cat"), 1.0);
        assert_eq!(max_token_f1("a b", &["x".into(), "a b".into()]), 1.0);
    }

    #[test]
    fn rouge_examples() {
        let r = rouge_n("the cat sat", "the cat", 1);
        assert!(close(r.recall, 1.0) && close(r.precision, 2.0 / 3.0) && close(r.f1, 0.8));
        assert_eq!(rouge_n("a b c", "a b c", 2).f1, 1.0);
        assert_eq!(rouge_n("a b", "a b", 3), Prf::ZERO);
        let l = rouge_l("a b c d", "a c d");
        assert!(close(l.recall, 1.0) && close(l.precision, 0.75) && close(l.f1, 6.0 / 7.0));
        assert_eq!(rouge_l("x y", "x y").f1, 1.0);
        assert_eq!(rouge_l("x y", "z w").f1, 0.0);
    }

    #[test]
    fn bleu_examples() {
        assert!(close(bleu("the cat sat on the mat", &["the cat sat on the mat"], 4), 1.0));
        assert_eq!(bleu("", &["a"], 4), 0.0);
        // clipped unigram precision 1/3; candidate longer than reference, so no penalty
        assert!(close(bleu("the the the", &["the cat"], 1), 1.0 / 3.0));
    }

    #[test]
    fn extractive_answerer() {
        let ctx = "The council met on Monday. The budget was 5 million dollars.";
        assert_eq!(ExtractiveAnswerer::answer(ctx, "What was the budget?"), "5 million dollars");
        assert_eq!(ExtractiveAnswerer::answer(ctx, "Who won?"), "");
        let msgs = build_qa_request(ctx, "What was the budget?");
        assert_eq!(parse_qa_request(&msgs[0].content), Some((ctx.to_string(), "What was the budget?".to_string())));
    }

    fn item(text: &str, q: &str, gold: &str) -> (CompressionResult, QARecord) {
        let seq = split_words(text);
        let n = seq.len();
        (
            select(seq, vec![1.0; n], Target::KeepRatio(1.0)),
            QARecord {
                question: q.into(),
                gold_answers: vec![gold.into()],
                predicted: String::new(),
            },
        )
    }

    #[test]
    fn downstream_with_mocks() {
        let items = vec![item("alpha beta", "q1", "gold one"), item("gamma", "q2", "gold two")];
        let golds: HashMap<String, String> =
            [("q1".to_string(), "gold one".to_string()), ("q2".to_string(), "gold two".to_string())].into();
        let echo = crate::distill::FnProvider::new("echo", move |m: &[Message]| {
            let (_, q) = parse_qa_request(&m[0].content).unwrap();
            Ok(golds[&q].clone())
        });
        let r = evaluate_downstream(&echo, &items, &RetryPolicy::no_wait(1));
        assert_eq!(r.metric("qa_f1"), Some(1.0));
        assert_eq!(r.n_scored, 2);
        assert_eq!(r.tokens.unwrap().mean_original_units, 1.5);

        let empty = crate::distill::FnProvider::new("empty", |_: &[Message]| Ok(String::new()));
        assert_eq!(evaluate_downstream(&empty, &items, &RetryPolicy::no_wait(1)).metric("qa_f1"), Some(0.0));

        let flaky = crate::distill::FnProvider::new("flaky", |m: &[Message]| {
            if m[0].content.contains("q2") {
                Err(ProviderError::Transport("down".into()))
            } else {
                Ok("gold one".into())
            }
        });
        let r = evaluate_downstream(&flaky, &items, &RetryPolicy::no_wait(2));
        assert_eq!((r.n_items, r.n_scored, r.n_failed), (2, 1, 1));
        assert_eq!(r.metric("qa_f1"), Some(1.0));
        assert!(r.per_example[1].error.is_some());
    }

    #[test]
    fn sweep_value_validation() {
        assert!(check_values(&[0.0, 0.5, 1.0]).is_ok());
        assert!(check_values(&[0.5, 0.5]).is_err());
        assert!(check_values(&[0.0, 1.5]).is_err());
        assert!(check_values(&[]).is_err());
    }
}
