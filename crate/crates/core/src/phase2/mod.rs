//! Phase-two trajectory alignment: induce the student's answer style,
//! rewrite every solution into it per teacher, score candidates by student
//! reflection and reward judging, fuse the scores via within-question
//! z-scores, and select the winning rewrite.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::analytics::answers::{extract_final_answer, rel_close};
use crate::gateway::{ChatMessage, ChatRequest, Gateway, GatewayError, ProviderProfile};
use crate::phase1::{GenParams, TrainCandidate};
use crate::prompts::{self, ParseError, RewardScores, TemplateId, TemplateStore};

#[derive(Debug, thiserror::Error)]
pub enum Phase2Error {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] prompts::PromptError),
    #[error("style corpus is empty")]
    EmptyStyleCorpus,
    #[error("style response is missing the `{0}` section")]
    MissingStyleSection(&'static str),
    #[error("rewrite discarded: {reason}")]
    RewriteDiscarded { reason: &'static str },
    #[error("reward judge output unparseable after re-ask: {0}")]
    RewardUnparseable(ParseError),
    #[error("no candidate survived rewriting for question `{0}`")]
    NoCandidate(String),
}

/// The induced, prescriptive description of the student's answer style.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StyleGuide {
    pub language_tone_detail_rules: Vec<String>,
    pub structure_rules: Vec<String>,
    pub induced_from: usize,
    pub summarizer_id: String,
    /// The summarizer's response, verbatim.
    pub raw_markdown: String,
}

/// One teacher's scored rewrite of one question.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlignedCandidate {
    pub candidate_id: String,
    pub teacher_id: String,
    pub y_aligned: String,
    pub r_student: f64,
    pub reward_scores: RewardScores,
    pub r_reward: f64,
    pub z_student: f64,
    pub z_reward: f64,
    pub r_total: f64,
}

/// The selected exemplar for one question.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlignedSample {
    pub candidate_id: String,
    pub x_train: String,
    pub y_star: String,
    pub winning_teacher: String,
    pub selection_margin: f64,
}

/// Answers the student gives to the curated questions, the style evidence.
pub fn collect_style_corpus(
    questions: &[TrainCandidate],
    student: &ProviderProfile,
    gateway: &Gateway,
    params: &GenParams,
) -> Result<Vec<(String, String)>, Phase2Error> {
    let mut corpus = Vec::with_capacity(questions.len());
    for candidate in questions {
        let mut request = params.request(candidate.x_train.clone(), None);
        request.enable_thinking = false;
        let response = gateway.chat_complete(student, &request)?;
        corpus.push((candidate.x_train.clone(), response.text));
    }
    Ok(corpus)
}

const LANGUAGE_HEADING: &str = "language, tone, and level of detail";
const STRUCTURE_HEADING: &str = "answer structure and organization";

/// Summarize the style corpus into the two-section guide. The corpus is
/// subsampled to `cap` pairs with the run seed so the prompt stays within
/// context limits.
pub fn induce_style(
    corpus: &[(String, String)],
    summarizer: &ProviderProfile,
    gateway: &Gateway,
    store: &TemplateStore,
    params: &GenParams,
    cap: usize,
    run_seed: u64,
) -> Result<StyleGuide, Phase2Error> {
    if corpus.is_empty() {
        return Err(Phase2Error::EmptyStyleCorpus);
    }
    let mut indices: Vec<usize> = (0..corpus.len()).collect();
    if corpus.len() > cap {
        let mut rng = ChaCha20Rng::seed_from_u64(run_seed);
        indices.shuffle(&mut rng);
        indices.truncate(cap);
        indices.sort_unstable();
    }
    let examples = indices
        .iter()
        .map(|&i| format!("Q: {}\nA: {}", corpus[i].0, corpus[i].1))
        .collect::<Vec<_>>()
        .join("\n\n");
    let prompt = store.render(
        TemplateId::SummarizeStyle,
        &prompts::bindings([("examples", examples.as_str())]),
    )?;
    let response = gateway.chat_complete(summarizer, &params.request(prompt, None))?;
    let (language_rules, structure_rules) = parse_style_sections(&response.text)?;
    Ok(StyleGuide {
        language_tone_detail_rules: language_rules,
        structure_rules,
        induced_from: indices.len(),
        summarizer_id: summarizer.id.clone(),
        raw_markdown: response.text,
    })
}

/// Split the two-section markdown into its rule lists.
pub fn parse_style_sections(text: &str) -> Result<(Vec<String>, Vec<String>), Phase2Error> {
    let mut language_rules = Vec::new();
    let mut structure_rules = Vec::new();
    let mut current: Option<&mut Vec<String>> = None;
    for line in text.lines() {
        let lower = line.to_lowercase();
        if lower.contains(LANGUAGE_HEADING) {
            current = Some(&mut language_rules);
            continue;
        }
        if lower.contains(STRUCTURE_HEADING) {
            current = Some(&mut structure_rules);
            continue;
        }
        let trimmed = line.trim();
        let is_rule = trimmed.starts_with('-')
            || trimmed.starts_with('*')
            || trimmed.starts_with('•')
            || trimmed
                .chars()
                .next()
                .is_some_and(|c| c.is_ascii_digit());
        if is_rule {
            if let Some(rules) = current.as_deref_mut() {
                let rule = trimmed
                    .trim_start_matches(['-', '*', '•'])
                    .trim_start_matches(|c: char| c.is_ascii_digit() || c == '.' || c == ')')
                    .trim()
                    .to_string();
                if !rule.is_empty() {
                    rules.push(rule);
                }
            }
        }
    }
    if language_rules.is_empty() {
        return Err(Phase2Error::MissingStyleSection(
            "Language, Tone, and Level of Detail",
        ));
    }
    if structure_rules.is_empty() {
        return Err(Phase2Error::MissingStyleSection(
            "Answer Structure and Organization",
        ));
    }
    Ok((language_rules, structure_rules))
}

/// Grading tolerance for the answer-adherence check.
pub const ANSWER_REL_TOL: f64 = 1e-3;

/// Rewrite one solution in the induced style. The rewrite must preserve the
/// final numeric answer or it is discarded as answer drift.
pub fn rewrite_trajectory(
    sample: &TrainCandidate,
    style: &StyleGuide,
    teacher: &ProviderProfile,
    gateway: &Gateway,
    store: &TemplateStore,
    params: &GenParams,
) -> Result<String, Phase2Error> {
    let style_rules = style
        .language_tone_detail_rules
        .iter()
        .map(|r| format!("- {r}"))
        .collect::<Vec<_>>()
        .join("\n");
    let structure_rules = style
        .structure_rules
        .iter()
        .map(|r| format!("- {r}"))
        .collect::<Vec<_>>()
        .join("\n");
    let prompt = store.render(
        TemplateId::Align,
        &prompts::bindings([
            ("style_rules", style_rules.as_str()),
            ("structure_rules", structure_rules.as_str()),
            ("question", sample.x_train.as_str()),
            ("answer", sample.y_train.as_str()),
        ]),
    )?;
    let response = gateway.chat_complete(teacher, &params.request(prompt, None))?;
    match extract_final_answer(&response.text) {
        Some(answer) if rel_close(answer, sample.final_answer, ANSWER_REL_TOL) => {
            Ok(response.text)
        }
        Some(_) => Err(Phase2Error::RewriteDiscarded {
            reason: "answer-drift",
        }),
        None => Err(Phase2Error::RewriteDiscarded {
            reason: "no-final-answer",
        }),
    }
}

/// Student-reflection score: how much easier the question becomes to predict
/// once the response is shown, `log ppl(x) - log ppl(x | y')`, where `y'`
/// wraps the rewrite in the instruction-guessing preamble.
pub fn score_student_reflection(
    x_train: &str,
    y_aligned: &str,
    student: &ProviderProfile,
    gateway: &Gateway,
    store: &TemplateStore,
) -> Result<f64, Phase2Error> {
    let wrapped = store.render(
        TemplateId::GuessInstruction,
        &prompts::bindings([("response", y_aligned)]),
    )?;
    let unconditional = gateway.perplexity(student, "", x_train)?;
    let conditional = gateway.perplexity(student, &wrapped, x_train)?;
    Ok(unconditional.perplexity.ln() - conditional.perplexity.ln())
}

/// Reward-judge score: weighted sum of the four criterion scores. One re-ask
/// with a JSON reminder is allowed before giving up.
pub fn score_reward(
    x_train: &str,
    y_aligned: &str,
    judge: &ProviderProfile,
    gateway: &Gateway,
    store: &TemplateStore,
    params: &GenParams,
    weights: &[f64; 4],
) -> Result<(RewardScores, f64), Phase2Error> {
    let prompt = store.render(
        TemplateId::Reward,
        &prompts::bindings([("question", x_train), ("answer", y_aligned)]),
    )?;
    let first = gateway.chat_complete(judge, &params.request(prompt.clone(), None))?;
    let scores = match prompts::parse_reward_json(&first.text) {
        Ok(scores) => scores,
        Err(_) => {
            let retry = ChatRequest {
                messages: vec![
                    ChatMessage::user(prompt),
                    ChatMessage::assistant(first.text.clone()),
                    ChatMessage::user("Return only the JSON object, with no other text."),
                ],
                ..params.request(String::new(), None)
            };
            let second = gateway.chat_complete(judge, &retry)?;
            prompts::parse_reward_json(&second.text).map_err(Phase2Error::RewardUnparseable)?
        }
    };
    let r_reward = scores.weighted(weights);
    Ok((scores, r_reward))
}

/// Population z-scores; a zero-variance or singleton set maps to all zeros.
pub fn z_scores(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    if n == 0 {
        return Vec::new();
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let variance = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    let sigma = variance.sqrt();
    if sigma == 0.0 {
        return vec![0.0; n];
    }
    values.iter().map(|v| (v - mean) / sigma).collect()
}

/// A rewritten candidate with its raw scores, before fusion.
#[derive(Debug, Clone)]
pub struct ScoredRewrite {
    pub teacher_id: String,
    pub y_aligned: String,
    pub r_student: f64,
    pub reward_scores: RewardScores,
    pub r_reward: f64,
}

/// Standardize both scores within the question's candidate set, sum them,
/// and select the arg-max. Ties break by teacher priority order.
pub fn fuse_and_select(
    question: &TrainCandidate,
    rewrites: &[ScoredRewrite],
    teacher_priority: &[String],
) -> Result<(AlignedSample, Vec<AlignedCandidate>), Phase2Error> {
    if rewrites.is_empty() {
        return Err(Phase2Error::NoCandidate(question.id.clone()));
    }
    let z_student = z_scores(&rewrites.iter().map(|r| r.r_student).collect::<Vec<_>>());
    let z_reward = z_scores(&rewrites.iter().map(|r| r.r_reward).collect::<Vec<_>>());
    let priority = |teacher: &str| {
        teacher_priority
            .iter()
            .position(|t| t == teacher)
            .unwrap_or(usize::MAX)
    };

    let candidates: Vec<AlignedCandidate> = rewrites
        .iter()
        .zip(z_student.iter().zip(z_reward.iter()))
        .map(|(r, (&zs, &zr))| AlignedCandidate {
            candidate_id: question.id.clone(),
            teacher_id: r.teacher_id.clone(),
            y_aligned: r.y_aligned.clone(),
            r_student: r.r_student,
            reward_scores: r.reward_scores.clone(),
            r_reward: r.r_reward,
            z_student: zs,
            z_reward: zr,
            r_total: zs + zr,
        })
        .collect();

    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        candidates[b]
            .r_total
            .total_cmp(&candidates[a].r_total)
            .then_with(|| priority(&candidates[a].teacher_id).cmp(&priority(&candidates[b].teacher_id)))
    });
    let winner = &candidates[order[0]];
    let selection_margin = if order.len() > 1 {
        winner.r_total - candidates[order[1]].r_total
    } else {
        0.0
    };
    let sample = AlignedSample {
        candidate_id: question.id.clone(),
        x_train: question.x_train.clone(),
        y_star: winner.y_aligned.clone(),
        winning_teacher: winner.teacher_id.clone(),
        selection_margin,
    };
    Ok((sample, candidates))
}
