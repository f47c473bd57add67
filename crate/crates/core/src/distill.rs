//! Instruction-aware distillation: send chunks (plus an optional user
//! instruction) to an LLM, collect the compressed text, and summarize the
//! resulting compression ratios.

use std::collections::HashSet;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use log::{debug, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::{chunk_document, count_words, ends_sentence, normalize_word, split_words, Chunk};

/// Environment variable holding the bearer credential for live providers.
pub const API_KEY_ENV: &str = "EFPC_API_KEY";

pub const DIRECTIVE: &str = "Shorten the original text by deleting words so that the result still contains everything needed to carry out the user instruction. Only delete words: do not reorder, rewrite or add any. Keep as few words as possible.";
pub const INSTRUCTION_HEADER: &str = "User instruction:\n";
pub const ORIGINAL_HEADER: &str = "Original text:\n";
pub const ANSWER_HEADER: &str = "Compressed text:";

/// Function words removed by the mock compressor.
pub const STOPWORDS: &[&str] = &[
    "a", "an", "the", "and", "or", "but", "of", "on", "in", "at", "to", "for", "from", "by",
    "with", "as", "is", "are", "was", "were", "be", "been", "being", "it", "its", "this",
    "that", "these", "those", "there", "then", "so", "very", "just", "also", "which", "who",
    "whom", "has", "have", "had", "do", "does", "did", "will", "would", "should", "can", "could",
    "may", "might", "um", "uh", "okay", "well", "we", "our", "you", "your", "they", "their",
];

pub fn is_stopword(word: &str) -> bool {
    let w = normalize_word(word);
    w.is_empty() || STOPWORDS.contains(&w.as_str())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: String,
    pub content: String,
}

impl Message {
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: "user".into(),
            content: content.into(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProviderError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("request timed out")]
    Timeout,
    #[error("http status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("missing credential: set {0}")]
    MissingKey(&'static str),
}

impl ProviderError {
    /// Network errors, timeouts, rate limits and server errors are retried.
    pub fn is_transient(&self) -> bool {
        match self {
            ProviderError::Transport(_) | ProviderError::Timeout => true,
            ProviderError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

/// A chat-completion backend.
pub trait LlmProvider: Send + Sync {
    fn provider_id(&self) -> &str;
    fn request_timeout(&self) -> Duration {
        Duration::from_secs(60)
    }
    fn complete(&self, messages: &[Message]) -> Result<String, ProviderError>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            initial_backoff: Duration::from_secs(1),
        }
    }
}

impl RetryPolicy {
    pub fn no_wait(max_attempts: u32) -> Self {
        Self {
            max_attempts,
            initial_backoff: Duration::ZERO,
        }
    }

    /// Calls `f` until it succeeds, fails permanently, or attempts run out.
    /// Backoff doubles after each failed attempt.
    pub fn run<T>(
        &self,
        mut f: impl FnMut() -> Result<T, ProviderError>,
    ) -> Result<T, ProviderError> {
        let mut delay = self.initial_backoff;
        let mut attempt = 1;
        loop {
            match f() {
                Ok(v) => return Ok(v),
                Err(e) if e.is_transient() && attempt < self.max_attempts.max(1) => {
                    debug!("attempt {attempt} failed ({e}), retrying in {delay:?}");
                    if !delay.is_zero() {
                        thread::sleep(delay);
                    }
                    delay *= 2;
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}

/// Provider backed by a closure; handy for tests and custom mocks.
pub struct FnProvider<F> {
    id: String,
    f: F,
}

impl<F> FnProvider<F>
where
    F: Fn(&[Message]) -> Result<String, ProviderError> + Send + Sync,
{
    pub fn new(id: impl Into<String>, f: F) -> Self {
        Self { id: id.into(), f }
    }
}

impl<F> LlmProvider for FnProvider<F>
where
    F: Fn(&[Message]) -> Result<String, ProviderError> + Send + Sync,
{
    fn provider_id(&self) -> &str {
        &self.id
    }

    fn complete(&self, messages: &[Message]) -> Result<String, ProviderError> {
        (self.f)(messages)
    }
}

/// OpenAI-compatible chat-completion endpoint.
#[derive(Debug, Clone)]
pub struct HttpChatProvider {
    id: String,
    endpoint: String,
    model: String,
    api_key: String,
    timeout: Duration,
    client: reqwest::blocking::Client,
}

impl HttpChatProvider {
    /// `base_url` is the API root; requests go to `{base_url}/chat/completions`.
    pub fn new(
        base_url: &str,
        model: &str,
        api_key: impl Into<String>,
        timeout: Duration,
    ) -> Result<Self, ProviderError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        Ok(Self {
            id: format!("http:{model}"),
            endpoint: format!("{}/chat/completions", base_url.trim_end_matches('/')),
            model: model.to_string(),
            api_key: api_key.into(),
            timeout,
            client,
        })
    }

    /// Reads the key from `EFPC_API_KEY`.
    pub fn from_env(base_url: &str, model: &str, timeout: Duration) -> Result<Self, ProviderError> {
        let key = std::env::var(API_KEY_ENV).map_err(|_| ProviderError::MissingKey(API_KEY_ENV))?;
        Self::new(base_url, model, key, timeout)
    }

    pub fn request_body(&self, messages: &[Message]) -> serde_json::Value {
        serde_json::json!({
            "model": self.model,
            "messages": messages,
            "temperature": 0,
        })
    }
}

impl LlmProvider for HttpChatProvider {
    fn provider_id(&self) -> &str {
        &self.id
    }

    fn request_timeout(&self) -> Duration {
        self.timeout
    }

    fn complete(&self, messages: &[Message]) -> Result<String, ProviderError> {
        let resp = self
            .client
            .post(&self.endpoint)
            .bearer_auth(&self.api_key)
            .json(&self.request_body(messages))
            .send()
            .map_err(|e| {
                if e.is_timeout() {
                    ProviderError::Timeout
                } else {
                    ProviderError::Transport(e.to_string())
                }
            })?;
        let status = resp.status();
        let body = resp
            .text()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(ProviderError::Status {
                status: status.as_u16(),
                body,
            });
        }
        parse_chat_response(&body)
    }
}

/// Extracts `choices[0].message.content` from a chat-completion response.
pub fn parse_chat_response(body: &str) -> Result<String, ProviderError> {
    let v: serde_json::Value =
        serde_json::from_str(body).map_err(|e| ProviderError::Malformed(e.to_string()))?;
    v.pointer("/choices/0/message/content")
        .and_then(|c| c.as_str())
        .map(str::to_string)
        .ok_or_else(|| ProviderError::Malformed("no choices[0].message.content".into()))
}

/// Splits a compression request built by [`build_compression_request`]
/// back into `(instruction, original_text)`.
pub fn parse_compression_request(content: &str) -> Option<(String, String)> {
    let orig_marker = format!("\n\n{ORIGINAL_HEADER}");
    let end_marker = format!("\n\n{ANSWER_HEADER}");
    let end = content.rfind(&end_marker)?;
    let inst_marker = format!("\n\n{INSTRUCTION_HEADER}");
    let (instruction, orig_start) = match content.find(&inst_marker) {
        Some(i) => {
            let start = i + inst_marker.len();
            let j = start + content[start..].find(&orig_marker)?;
            (content[start..j].to_string(), j + orig_marker.len())
        }
        None => (String::new(), content.find(&orig_marker)? + orig_marker.len()),
    };
    if orig_start > end {
        return None;
    }
    Some((instruction, content[orig_start..end].to_string()))
}

/// Deterministic rule-based compressor standing in for a live LLM.
///
/// Always drops stopwords. When the request carries an instruction it also
/// drops whole sentences sharing no content word with the instruction,
/// unless that would drop every sentence.
#[derive(Debug, Clone, Default)]
pub struct MockCompressor;

impl MockCompressor {
    pub fn compress(instruction: &str, original: &str) -> String {
        let words = split_words(original).words;
        let mut sentences: Vec<Vec<&str>> = vec![Vec::new()];
        for w in &words {
            sentences.last_mut().unwrap().push(w.as_str());
            if ends_sentence(w) {
                sentences.push(Vec::new());
            }
        }
        sentences.retain(|s| !s.is_empty());

        let query: HashSet<String> = split_words(instruction)
            .words
            .iter()
            .filter(|w| !is_stopword(w))
            .map(|w| normalize_word(w))
            .collect();
        if !query.is_empty() {
            let relevant: Vec<_> = sentences
                .iter()
                .filter(|s| s.iter().any(|w| query.contains(&normalize_word(w))))
                .cloned()
                .collect();
            if !relevant.is_empty() {
                sentences = relevant;
            }
        }
        sentences
            .into_iter()
            .flatten()
            .filter(|w| !is_stopword(w))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

impl LlmProvider for MockCompressor {
    fn provider_id(&self) -> &str {
        "mock:stopword"
    }

    fn complete(&self, messages: &[Message]) -> Result<String, ProviderError> {
        let content = &messages
            .last()
            .ok_or_else(|| ProviderError::Malformed("no messages".into()))?
            .content;
        let (instruction, original) = parse_compression_request(content)
            .ok_or_else(|| ProviderError::Malformed("unrecognized request".into()))?;
        Ok(Self::compress(&instruction, &original))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistillError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("provider returned no usable compressed text")]
    EmptyCompression,
    #[error("no documents to distill")]
    EmptyCorpus,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("{failed} of {total} chunks failed, above the {threshold} failure threshold")]
    TooManyFailures {
        failed: usize,
        total: usize,
        threshold: f64,
    },
}

/// One chunk and its LLM-compressed counterpart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistilledPair {
    pub instruction: String,
    #[serde(rename = "original")]
    pub chunk_text: String,
    #[serde(rename = "compressed")]
    pub compressed_text: String,
    pub ratio: f64,
}

impl DistilledPair {
    pub fn new(
        instruction: &str,
        chunk_text: &str,
        compressed_text: &str,
    ) -> Result<Self, DistillError> {
        let ratio = compression_ratio(chunk_text, compressed_text)?;
        Ok(Self {
            instruction: instruction.to_string(),
            chunk_text: chunk_text.to_string(),
            compressed_text: compressed_text.to_string(),
            ratio,
        })
    }
}

/// Dataset line: `{"doc_id","chunk_idx","instruction","original","compressed","ratio"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistilledRecord {
    pub doc_id: String,
    pub chunk_idx: usize,
    #[serde(flatten)]
    pub pair: DistilledPair,
}

/// Corpus line: `{"doc_id","text","instruction"}`; the instruction is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub text: String,
    #[serde(default)]
    pub instruction: String,
}

/// Where each document's instruction comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InstructionSource {
    /// Task-agnostic collection: every request goes out without an instruction.
    None,
    #[default]
    PerDocument,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistillConfig {
    pub max_units: usize,
    pub max_failure_fraction: f64,
    pub concurrency: usize,
    pub retry: RetryPolicy,
    pub instructions: InstructionSource,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            max_units: 512,
            max_failure_fraction: 0.1,
            concurrency: 4,
            retry: RetryPolicy::default(),
            instructions: InstructionSource::PerDocument,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChunkFailure {
    pub doc_id: String,
    pub chunk_idx: usize,
    pub error: DistillError,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DistilledDataset {
    pub records: Vec<DistilledRecord>,
    pub failures: Vec<ChunkFailure>,
}

/// A single user message: directive, optional instruction block, chunk.
pub fn build_compression_request(instruction: &str, chunk: &Chunk) -> Vec<Message> {
    let mut content = String::from(DIRECTIVE);
    if !instruction.is_empty() {
        content.push_str("\n\n");
        content.push_str(INSTRUCTION_HEADER);
        content.push_str(instruction);
    }
    content.push_str("\n\n");
    content.push_str(ORIGINAL_HEADER);
    content.push_str(&chunk.text);
    content.push_str("\n\n");
    content.push_str(ANSWER_HEADER);
    vec![Message::user(content)]
}

pub fn compress_chunk_via_llm(
    provider: &dyn LlmProvider,
    retry: &RetryPolicy,
    instruction: &str,
    chunk: &Chunk,
) -> Result<DistilledPair, DistillError> {
    let messages = build_compression_request(instruction, chunk);
    let text = retry.run(|| provider.complete(&messages))?;
    let text = text.trim();
    DistilledPair::new(instruction, &chunk.text, text)
}

/// Chunks every document and compresses all chunks, up to
/// `config.concurrency` requests in flight. Output is in (doc, chunk) order.
pub fn distill_corpus(
    provider: &dyn LlmProvider,
    docs: &[Document],
    config: &DistillConfig,
) -> Result<DistilledDataset, DistillError> {
    if docs.is_empty() {
        return Err(DistillError::EmptyCorpus);
    }
    let mut jobs = Vec::new();
    for doc in docs {
        let instruction = match config.instructions {
            InstructionSource::None => "",
            InstructionSource::PerDocument => doc.instruction.as_str(),
        };
        for (idx, chunk) in chunk_document(&doc.text, config.max_units).into_iter().enumerate() {
            jobs.push((doc.doc_id.as_str(), idx, instruction, chunk));
        }
    }

    let results: Mutex<Vec<Option<Result<DistilledPair, DistillError>>>> =
        Mutex::new(vec![None; jobs.len()]);
    let next = AtomicUsize::new(0);
    let workers = config.concurrency.clamp(1, jobs.len().max(1));
    thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= jobs.len() {
                    break;
                }
                let (_, _, instruction, chunk) = &jobs[i];
                let r = compress_chunk_via_llm(provider, &config.retry, instruction, chunk);
                results.lock().unwrap()[i] = Some(r);
            });
        }
    });

    let mut out = DistilledDataset::default();
    for ((doc_id, chunk_idx, _, _), r) in jobs.iter().zip(results.into_inner().unwrap()) {
        match r.expect("every job ran") {
            Ok(pair) => out.records.push(DistilledRecord {
                doc_id: doc_id.to_string(),
                chunk_idx: *chunk_idx,
                pair,
            }),
            Err(error) => {
                warn!("doc {doc_id} chunk {chunk_idx}: {error}");
                out.failures.push(ChunkFailure {
                    doc_id: doc_id.to_string(),
                    chunk_idx: *chunk_idx,
                    error,
                });
            }
        }
    }
    let total = jobs.len();
    let failed = out.failures.len();
    if total > 0 && failed as f64 / total as f64 > config.max_failure_fraction {
        return Err(DistillError::TooManyFailures {
            failed,
            total,
            threshold: config.max_failure_fraction,
        });
    }
    Ok(out)
}

/// Word count before compression divided by word count after.
pub fn compression_ratio(original: &str, compressed: &str) -> Result<f64, DistillError> {
    let after = count_words(compressed);
    if after == 0 {
        return Err(DistillError::EmptyCompression);
    }
    Ok(count_words(original) as f64 / after as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioHistogram {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub mean: f64,
    pub n: usize,
}

impl RatioHistogram {
    /// Fixed-width bins starting at 1.0. Ratios below 1.0 land in the first bin.
    pub fn from_ratios(ratios: &[f64], bin_width: f64) -> Result<Self, DistillError> {
        assert!(bin_width > 0.0, "bin_width must be positive");
        if ratios.is_empty() {
            return Err(DistillError::EmptyDataset);
        }
        let bin_of = |r: f64| (((r - 1.0) / bin_width).floor().max(0.0)) as usize;
        let nbins = ratios.iter().map(|&r| bin_of(r)).max().unwrap() + 1;
        let mut counts = vec![0; nbins];
        for &r in ratios {
            counts[bin_of(r)] += 1;
        }
        let bin_edges = (0..=nbins).map(|i| 1.0 + i as f64 * bin_width).collect();
        let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
        Ok(Self {
            bin_edges,
            counts,
            mean,
            n: ratios.len(),
        })
    }

    /// Stable line-oriented summary: header lines then one `lo\thi\tcount` per non-empty bin.
    pub fn summary(&self) -> String {
        let mut s = format!("n\t{}\nmean_ratio\t{:.6}\n", self.n, self.mean);
        for (i, &c) in self.counts.iter().enumerate() {
            if c > 0 {
                s.push_str(&format!(
                    "bin\t{:.3}\t{:.3}\t{}\n",
                    self.bin_edges[i],
                    self.bin_edges[i + 1],
                    c
                ));
            }
        }
        s
    }
}

pub fn ratio_histogram(
    dataset: &[DistilledRecord],
    bin_width: f64,
) -> Result<RatioHistogram, DistillError> {
    let ratios: Vec<f64> = dataset.iter().map(|r| r.pair.ratio).collect();
    RatioHistogram::from_ratios(&ratios, bin_width)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicU32;

    fn chunk(text: &str) -> Chunk {
        chunk_document(text, 512).remove(0)
    }

    #[test]
    fn request_contains_instruction_and_chunk() {
        let c = chunk("The council approved the budget.");
        let msgs = build_compression_request("What was approved?", &c);
        assert_eq!(msgs.len(), 1);
        assert_eq!(msgs[0].role, "user");
        assert!(msgs[0].content.contains("What was approved?"));
        assert!(msgs[0].content.contains("The council approved the budget."));
        assert!(msgs[0].content.starts_with(DIRECTIVE));
        assert_eq!(msgs, build_compression_request("What was approved?", &c));
    }

    #[test]
    fn request_without_instruction_has_no_block() {
        let msgs = build_compression_request("", &chunk("a b."));
        assert!(!msgs[0].content.contains(INSTRUCTION_HEADER));
        assert_eq!(
            parse_compression_request(&msgs[0].content),
            Some((String::new(), "a b.".to_string()))
        );
    }

    #[test]
    fn request_parses_back() {
        let msgs = build_compression_request("Who spoke?\nAnd when?", &chunk("x y z."));
        assert_eq!(
            parse_compression_request(&msgs[0].content),
            Some(("Who spoke?\nAnd when?".to_string(), "x y z.".to_string()))
        );
    }

    #[test]
    fn mock_drops_stopwords() {
        let p = compress_chunk_via_llm(
            &MockCompressor,
            &RetryPolicy::no_wait(1),
            "",
            &chunk("the cat sat on the mat"),
        )
        .unwrap();
        assert_eq!(p.compressed_text, "cat sat mat");
        assert_eq!(p.ratio, 2.0);

        let p = compress_chunk_via_llm(&MockCompressor, &RetryPolicy::no_wait(1), "", &chunk("cat sat"))
            .unwrap();
        assert_eq!(p.compressed_text, "cat sat");
        assert_eq!(p.ratio, 1.0);
    }

    #[test]
    fn mock_all_stopwords_is_empty_compression() {
        let err = compress_chunk_via_llm(
            &MockCompressor,
            &RetryPolicy::no_wait(1),
            "",
            &chunk("the of and the"),
        )
        .unwrap_err();
        assert_eq!(err, DistillError::EmptyCompression);
    }

    #[test]
    fn mock_drops_irrelevant_sentences_with_instruction() {
        let text = "The council approved the budget. The weather was sunny today.";
        assert_eq!(
            MockCompressor::compress("What did the council approve?", text),
            "council approved budget."
        );
        assert_eq!(
            MockCompressor::compress("", text),
            "council approved budget. weather sunny today."
        );
        // nothing relevant: fall back to all sentences
        assert_eq!(
            MockCompressor::compress("zebra?", text),
            MockCompressor::compress("", text)
        );
    }

    struct Flaky {
        fail_first: u32,
        calls: AtomicU32,
        error: ProviderError,
    }

    impl LlmProvider for Flaky {
        fn provider_id(&self) -> &str {
            "flaky"
        }
        fn complete(&self, m: &[Message]) -> Result<String, ProviderError> {
            if self.calls.fetch_add(1, Ordering::SeqCst) < self.fail_first {
                Err(self.error.clone())
            } else {
                MockCompressor.complete(m)
            }
        }
    }

    #[test]
    fn retries_transient_failures() {
        let p = Flaky {
            fail_first: 2,
            calls: AtomicU32::new(0),
            error: ProviderError::Timeout,
        };
        let r = compress_chunk_via_llm(&p, &RetryPolicy::no_wait(3), "", &chunk("cat sat"));
        assert!(r.is_ok());
        assert_eq!(p.calls.load(Ordering::SeqCst), 3);

        let p = Flaky {
            fail_first: 3,
            calls: AtomicU32::new(0),
            error: ProviderError::Transport("reset".into()),
        };
        let r = compress_chunk_via_llm(&p, &RetryPolicy::no_wait(3), "", &chunk("cat sat"));
        assert_eq!(r, Err(DistillError::Provider(ProviderError::Transport("reset".into()))));
    }

    #[test]
    fn does_not_retry_client_errors() {
        let p = Flaky {
            fail_first: 5,
            calls: AtomicU32::new(0),
            error: ProviderError::Status {
                status: 400,
                body: String::new(),
            },
        };
        assert!(compress_chunk_via_llm(&p, &RetryPolicy::no_wait(3), "", &chunk("a")).is_err());
        assert_eq!(p.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn ratio_examples() {
        let ten = "a b c d e f g h i j";
        assert_eq!(compression_ratio(ten, "a b c d e").unwrap(), 2.0);
        assert_eq!(compression_ratio(ten, ten).unwrap(), 1.0);
        assert_eq!(compression_ratio("a b c d e f", "a f").unwrap(), 3.0);
        assert_eq!(compression_ratio("a", "  "), Err(DistillError::EmptyCompression));
    }

    #[test]
    fn histogram_examples() {
        let h = RatioHistogram::from_ratios(&[2.0, 2.0, 4.0], 1.0).unwrap();
        assert_eq!(h.counts, vec![0, 2, 0, 1]);
        assert_eq!(h.bin_edges, vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        assert!((h.mean - 8.0 / 3.0).abs() < 1e-12);
        assert_eq!(h.n, 3);

        let h = RatioHistogram::from_ratios(&[1.0], 1.0).unwrap();
        assert_eq!(h.counts, vec![1]);
        assert_eq!(h.mean, 1.0);

        assert_eq!(RatioHistogram::from_ratios(&[], 1.0), Err(DistillError::EmptyDataset));
    }

    #[test]
    fn chat_response_parsing() {
        let body = r#"{"choices":[{"message":{"role":"assistant","content":"hi"}}]}"#;
        assert_eq!(parse_chat_response(body).unwrap(), "hi");
        assert!(matches!(parse_chat_response("{}"), Err(ProviderError::Malformed(_))));
    }

    #[test]
    fn http_body_shape() {
        let p = HttpChatProvider::new("http://localhost:1/v1/", "gpt-4", "k", Duration::from_secs(1))
            .unwrap();
        let body = p.request_body(&[Message::user("x")]);
        assert_eq!(body["model"], "gpt-4");
        assert_eq!(body["temperature"], 0);
        assert_eq!(body["messages"][0]["role"], "user");
        assert_eq!(body["messages"][0]["content"], "x");
        assert_eq!(p.endpoint, "http://localhost:1/v1/chat/completions");
    }
}
