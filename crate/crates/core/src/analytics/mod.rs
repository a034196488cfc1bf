//! Evaluation analytics: pass@1 / cons@16 accuracy, derived inference
//! efficiency metrics, token-shift tables, confidence intervals, and
//! pairwise LLM judging with position-swap debiasing.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::gateway::{ChatRequest, Gateway, GatewayError, ProviderProfile};
use crate::prompts::{self, ParseError, TemplateId, TemplateStore};

pub mod answers;

use answers::{cluster_answers, extract_final_answer, plurality_cluster, rel_close};

/// Grading tolerance, shared with the answer-adherence checks.
pub const GRADING_REL_TOL: f64 = 1e-3;

#[derive(Debug, thiserror::Error)]
pub enum AnalyticsError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] prompts::PromptError),
    #[error("item `{id}` carries {got} answers, the protocol needs {expected}")]
    AnswerCount {
        id: String,
        expected: usize,
        got: usize,
    },
    #[error("no items to grade")]
    NoItems,
    #[error("gold answer for `{0}` is not finite")]
    BadGold(String),
    #[error("pass@1 must be positive to derive per-correct metrics")]
    ZeroPassRate,
    #[error("efficiency inputs must be strictly positive: {0}")]
    NonPositiveInput(&'static str),
    #[error("corpus `{0}` is empty")]
    EmptyCorpus(&'static str),
    #[error("confidence intervals need at least 3 values, got {0}")]
    TooFewValues(usize),
    #[error("judge output unparseable after retry: {0}")]
    JudgeUnparseable(ParseError),
    #[error("cannot read efficiency log: {0}")]
    Csv(String),
}

/// One evaluation question with the model's answers (1 for pass@1, 16 for
/// cons@16).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalItem {
    pub question_id: String,
    pub gold_answer: f64,
    pub model_answers: Vec<String>,
    pub run_seed: u64,
}

/// Decoding parameters for an evaluation protocol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalParams {
    pub temperature: f64,
    pub top_p: f64,
    pub top_k: Option<u32>,
    pub max_tokens: u32,
    pub enable_thinking: bool,
    pub samples: usize,
}

/// Deterministic single-attempt decoding.
pub fn pass1_params(enable_thinking: bool) -> EvalParams {
    EvalParams {
        temperature: 0.0,
        top_p: 0.01,
        top_k: None,
        max_tokens: 32_768,
        enable_thinking,
        samples: 1,
    }
}

/// Sampled decoding for 16-way majority voting.
pub fn cons16_params(enable_thinking: bool) -> EvalParams {
    EvalParams {
        temperature: 0.6,
        top_p: 0.95,
        top_k: Some(20),
        max_tokens: 32_768,
        enable_thinking,
        samples: 16,
    }
}

/// Generate answers for every question under the given protocol.
pub fn generate_eval_items(
    questions: &[(String, String, f64)], // (id, question, gold)
    model: &ProviderProfile,
    gateway: &Gateway,
    params: &EvalParams,
    run_seed: u64,
) -> Result<Vec<EvalItem>, AnalyticsError> {
    let mut items = Vec::with_capacity(questions.len());
    for (id, question, gold) in questions {
        let mut model_answers = Vec::with_capacity(params.samples);
        for sample_idx in 0..params.samples {
            let request = ChatRequest {
                messages: vec![crate::gateway::ChatMessage::user(question.clone())],
                temperature: params.temperature,
                top_p: params.top_p,
                top_k: params.top_k,
                max_tokens: params.max_tokens,
                enable_thinking: params.enable_thinking,
                seed: Some(run_seed.wrapping_add(sample_idx as u64)),
            };
            let response = gateway.chat_complete(model, &request)?;
            model_answers.push(response.text);
        }
        items.push(EvalItem {
            question_id: id.clone(),
            gold_answer: *gold,
            model_answers,
            run_seed,
        });
    }
    Ok(items)
}

/// Fraction of items whose single answer matches gold within the grading
/// tolerance. An unextractable answer counts as wrong, never as an error.
pub fn pass_at_1(items: &[EvalItem]) -> Result<f64, AnalyticsError> {
    if items.is_empty() {
        return Err(AnalyticsError::NoItems);
    }
    let mut correct = 0usize;
    for item in items {
        if !item.gold_answer.is_finite() {
            return Err(AnalyticsError::BadGold(item.question_id.clone()));
        }
        if item.model_answers.len() != 1 {
            return Err(AnalyticsError::AnswerCount {
                id: item.question_id.clone(),
                expected: 1,
                got: item.model_answers.len(),
            });
        }
        if extract_final_answer(&item.model_answers[0])
            .is_some_and(|a| rel_close(a, item.gold_answer, GRADING_REL_TOL))
        {
            correct += 1;
        }
    }
    Ok(correct as f64 / items.len() as f64)
}

/// Majority voting over 16 sampled answers: answers are normalized to
/// numbers, clustered with relative tolerance, and the plurality cluster's
/// representative is graded against gold.
pub fn cons_at_16(items: &[EvalItem]) -> Result<f64, AnalyticsError> {
    if items.is_empty() {
        return Err(AnalyticsError::NoItems);
    }
    let mut correct = 0usize;
    for item in items {
        if !item.gold_answer.is_finite() {
            return Err(AnalyticsError::BadGold(item.question_id.clone()));
        }
        if item.model_answers.len() != 16 {
            return Err(AnalyticsError::AnswerCount {
                id: item.question_id.clone(),
                expected: 16,
                got: item.model_answers.len(),
            });
        }
        let extracted: Vec<Option<f64>> = item
            .model_answers
            .iter()
            .map(|a| extract_final_answer(a))
            .collect();
        let clusters = cluster_answers(&extracted, GRADING_REL_TOL);
        if let Some(cluster) = plurality_cluster(&clusters) {
            if cluster
                .representative
                .is_some_and(|rep| rel_close(rep, item.gold_answer, GRADING_REL_TOL))
            {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / items.len() as f64)
}

/// Measured inference efficiency for one model configuration.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EfficiencyInput {
    /// Joules per generated output token.
    pub energy_per_token: f64,
    /// Seconds per sample, enqueue to last token.
    pub latency: f64,
    /// Steady-state decode rate, tokens per second.
    pub throughput: f64,
    /// Single-attempt accuracy in (0, 1].
    pub pass1: f64,
}

/// The derived efficiency columns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyReport {
    pub tokens_per_sample: f64,
    pub edp: f64,
    pub energy_per_sample: f64,
    pub time_per_correct: f64,
    pub energy_per_correct: f64,
}

/// Derive the combined efficiency metrics from the measured inputs.
pub fn derived_metrics(e: &EfficiencyInput) -> Result<EfficiencyReport, AnalyticsError> {
    for (value, name) in [
        (e.energy_per_token, "energy_per_token"),
        (e.latency, "latency"),
        (e.throughput, "throughput"),
    ] {
        if !(value > 0.0) || !value.is_finite() {
            return Err(AnalyticsError::NonPositiveInput(name));
        }
    }
    if !(e.pass1 > 0.0 && e.pass1 <= 1.0) {
        return Err(AnalyticsError::ZeroPassRate);
    }
    let tokens_per_sample = e.throughput * e.latency;
    let energy_per_sample = e.energy_per_token * tokens_per_sample;
    Ok(EfficiencyReport {
        tokens_per_sample,
        edp: e.energy_per_token * e.latency,
        energy_per_sample,
        time_per_correct: e.latency / e.pass1,
        energy_per_correct: energy_per_sample / e.pass1,
    })
}

/// One row of the efficiency measurement log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EfficiencyRow {
    pub model: String,
    pub thinking: String,
    pub energy_j_per_token: f64,
    pub latency_s: f64,
    pub throughput_tok_s: f64,
}

/// Read the measurement CSV (`model,thinking,energy_j_per_token,latency_s,
/// throughput_tok_s`).
pub fn read_efficiency_csv(path: &Path) -> Result<Vec<EfficiencyRow>, AnalyticsError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| AnalyticsError::Csv(e.to_string()))?;
    let mut rows = Vec::new();
    for record in reader.deserialize() {
        rows.push(record.map_err(|e| AnalyticsError::Csv(e.to_string()))?);
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenCategory {
    LogicalStructural,
    DomainSpecific,
    Content,
}

/// Frequency/rank movement of one token between two corpora.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TokenShiftRow {
    pub token: String,
    pub baseline_freq: f64,
    pub target_freq: f64,
    pub baseline_rank: usize,
    pub target_rank: usize,
    /// `ln((target_freq + 1/N_t) / (baseline_freq + 1/N_b))`.
    pub shift: f64,
    pub rank_delta: i64,
    pub category: TokenCategory,
}

/// Token category lexicons; editable resource files, with built-in defaults.
#[derive(Debug, Clone, Default)]
pub struct Lexicons {
    logical: HashSet<String>,
    domain: HashSet<String>,
}

impl Lexicons {
    pub fn builtin() -> Self {
        Lexicons {
            logical: parse_lexicon(include_str!("lexicons/logical_structural.txt")),
            domain: parse_lexicon(include_str!("lexicons/telecom_terms.txt")),
        }
    }

    pub fn from_files(logical: Option<&Path>, domain: Option<&Path>) -> std::io::Result<Self> {
        let mut lex = Self::builtin();
        if let Some(path) = logical {
            lex.logical = parse_lexicon(&std::fs::read_to_string(path)?);
        }
        if let Some(path) = domain {
            lex.domain = parse_lexicon(&std::fs::read_to_string(path)?);
        }
        Ok(lex)
    }

    pub fn categorize(&self, token: &str) -> TokenCategory {
        if self.logical.contains(token) {
            TokenCategory::LogicalStructural
        } else if self.domain.contains(token) {
            TokenCategory::DomainSpecific
        } else {
            TokenCategory::Content
        }
    }
}

fn parse_lexicon(text: &str) -> HashSet<String> {
    text.lines()
        .map(|l| l.trim().to_lowercase())
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .collect()
}

/// Whitespace + punctuation tokenizer, case-folded.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

fn count_tokens(corpus: &str) -> (BTreeMap<String, u64>, u64) {
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    let mut total = 0u64;
    for token in tokenize(corpus) {
        *counts.entry(token).or_default() += 1;
        total += 1;
    }
    (counts, total)
}

/// Ranks (1-based) by descending count, ties by token; unseen tokens share
/// the rank one past the seen vocabulary.
fn ranks(counts: &BTreeMap<String, u64>) -> BTreeMap<String, usize> {
    let mut ordered: Vec<(&String, &u64)> = counts.iter().collect();
    ordered.sort_by(|a, b| b.1.cmp(a.1).then_with(|| a.0.cmp(b.0)));
    ordered
        .into_iter()
        .enumerate()
        .map(|(i, (token, _))| (token.clone(), i + 1))
        .collect()
}

/// Per-token frequency and rank movement between corpora, sorted by
/// |shift| descending. Exchanging the corpora negates every shift.
pub fn token_shift(
    baseline_corpus: &str,
    target_corpus: &str,
    lexicons: &Lexicons,
) -> Result<Vec<TokenShiftRow>, AnalyticsError> {
    let (baseline_counts, baseline_total) = count_tokens(baseline_corpus);
    let (target_counts, target_total) = count_tokens(target_corpus);
    if baseline_total == 0 {
        return Err(AnalyticsError::EmptyCorpus("baseline"));
    }
    if target_total == 0 {
        return Err(AnalyticsError::EmptyCorpus("target"));
    }
    let baseline_ranks = ranks(&baseline_counts);
    let target_ranks = ranks(&target_counts);
    let baseline_unseen_rank = baseline_counts.len() + 1;
    let target_unseen_rank = target_counts.len() + 1;
    let alpha_b = 1.0 / baseline_total as f64;
    let alpha_t = 1.0 / target_total as f64;

    let vocabulary: BTreeMap<&String, ()> = baseline_counts
        .keys()
        .chain(target_counts.keys())
        .map(|k| (k, ()))
        .collect();

    let mut rows: Vec<TokenShiftRow> = vocabulary
        .keys()
        .map(|token| {
            let bf = *baseline_counts.get(*token).unwrap_or(&0) as f64 / baseline_total as f64;
            let tf = *target_counts.get(*token).unwrap_or(&0) as f64 / target_total as f64;
            let baseline_rank = baseline_ranks
                .get(*token)
                .copied()
                .unwrap_or(baseline_unseen_rank);
            let target_rank = target_ranks
                .get(*token)
                .copied()
                .unwrap_or(target_unseen_rank);
            TokenShiftRow {
                token: (*token).clone(),
                baseline_freq: bf,
                target_freq: tf,
                baseline_rank,
                target_rank,
                shift: ((tf + alpha_t) / (bf + alpha_b)).ln(),
                rank_delta: baseline_rank as i64 - target_rank as i64,
                category: lexicons.categorize(token),
            }
        })
        .collect();
    rows.sort_by(|a, b| {
        b.shift
            .abs()
            .total_cmp(&a.shift.abs())
            .then_with(|| a.token.cmp(&b.token))
    });
    Ok(rows)
}

/// Two judge calls, original and swapped order, averaged per answer after
/// un-swapping. A judge's constant positional preference cancels exactly.
pub fn pairwise_judge(
    question: &str,
    answer_a: &str,
    answer_b: &str,
    judge: &ProviderProfile,
    gateway: &Gateway,
    store: &TemplateStore,
) -> Result<(f64, f64), AnalyticsError> {
    let ask = |first: &str, second: &str| -> Result<(u8, u8), AnalyticsError> {
        let prompt = store.render(
            TemplateId::Pairwise,
            &prompts::bindings([
                ("question", question),
                ("answer_a", first),
                ("answer_b", second),
            ]),
        )?;
        let mut request = ChatRequest::user(prompt.clone());
        request.max_tokens = 8192;
        let response = gateway.chat_complete(judge, &request)?;
        match prompts::parse_pairwise_json(&response.text) {
            Ok(verdict) => Ok((verdict.score_a, verdict.score_b)),
            Err(_) => {
                let retry = ChatRequest {
                    messages: vec![
                        crate::gateway::ChatMessage::user(prompt),
                        crate::gateway::ChatMessage::assistant(response.text),
                        crate::gateway::ChatMessage::user(
                            "Return only the JSON object, with no other text.",
                        ),
                    ],
                    ..ChatRequest::user(String::new())
                };
                let second_try = gateway.chat_complete(judge, &retry)?;
                let verdict = prompts::parse_pairwise_json(&second_try.text)
                    .map_err(AnalyticsError::JudgeUnparseable)?;
                Ok((verdict.score_a, verdict.score_b))
            }
        }
    };
    let (a_first, b_first) = ask(answer_a, answer_b)?;
    let (b_swapped, a_swapped) = ask(answer_b, answer_a)?;
    Ok((
        (f64::from(a_first) + f64::from(a_swapped)) / 2.0,
        (f64::from(b_first) + f64::from(b_swapped)) / 2.0,
    ))
}

/// Mean with a t-based 95% confidence interval.
pub fn mean_ci(values: &[f64]) -> Result<(f64, f64, f64), AnalyticsError> {
    let n = values.len();
    if n < 3 {
        return Err(AnalyticsError::TooFewValues(n));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let variance = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sd = variance.sqrt();
    if sd == 0.0 {
        return Ok((mean, mean, mean));
    }
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .expect("valid t distribution")
        .inverse_cdf(0.975);
    let half = t * sd / (n as f64).sqrt();
    Ok((mean, mean - half, mean + half))
}
