//! Phase-one synthesis: detailed seed solutions, knowledge/skill extraction
//! and merging, per-teacher problem generation, and peer-review filtering.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::gateway::{ChatRequest, Gateway, GatewayError, ProviderProfile};
use crate::prompts::{self, ParseError, TemplateId, TemplateStore};

#[derive(Debug, thiserror::Error)]
pub enum Phase1Error {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] prompts::PromptError),
    #[error("provider returned an empty rewrite for seed `{0}`")]
    EmptyRewrite(String),
    #[error("cannot parse knowledge extraction: {0}")]
    Knowledge(String),
    #[error("cannot merge an empty set of knowledge lists")]
    NoKnowledge,
    #[error("all {0} generations were unparseable")]
    AllUnparseable(usize),
    #[error("reviewer set is empty for candidate `{0}`")]
    NoReviewers(String),
    #[error("generator `{generator}` may not review its own candidate `{candidate}`")]
    GeneratorInReviewerSet { generator: String, candidate: String },
    #[error("no reviewer produced a parseable score for candidate `{0}`")]
    ReviewUnavailable(String),
    #[error("record/candidate mismatch at position {position}: `{record}` vs `{candidate}`")]
    RecordMismatch {
        position: usize,
        record: String,
        candidate: String,
    },
    #[error("candidate count {candidates} does not match record count {records}")]
    RecordCount { candidates: usize, records: usize },
}

/// A seed question/answer pair, the pipeline's raw input.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedSample {
    pub id: String,
    pub x_seed: String,
    pub y_seed: String,
    pub domain: String,
    #[serde(default)]
    pub is_detailed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgePoint {
    pub description: String,
    pub relevance: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skills {
    pub strategy: String,
    pub decomposition: String,
    pub formula_applications: String,
}

/// One teacher's view of the knowledge a seed exercises.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TeacherKnowledge {
    pub teacher_id: String,
    pub points: Vec<KnowledgePoint>,
    pub skills: Skills,
}

/// The merged, deduplicated knowledge summary driving problem generation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KnowledgeSummary {
    pub knowledge_points: Vec<KnowledgePoint>,
    pub skills: Skills,
    pub source_teachers: Vec<String>,
    pub merged_by: String,
}

/// A generated training candidate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainCandidate {
    pub id: String,
    pub x_train: String,
    pub y_train: String,
    pub final_answer: f64,
    pub generator_id: String,
    pub provenance: String,
}

/// Per-candidate review outcome; `consensus` is always the arithmetic mean
/// of `reviewer_scores`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReviewRecord {
    pub candidate_id: String,
    pub reviewer_scores: BTreeMap<String, f64>,
    pub consensus: f64,
    pub kept: bool,
}

/// Stable candidate id so manifests reproduce across runs.
pub fn candidate_id(generator_id: &str, x_train: &str, y_train: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(generator_id.as_bytes());
    hasher.update([0]);
    hasher.update(x_train.as_bytes());
    hasher.update([0]);
    hasher.update(y_train.as_bytes());
    let digest = hasher.finalize();
    digest.iter().take(12).map(|b| format!("{b:02x}")).collect()
}

/// Sampling parameters for synthesis calls (not evaluation).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GenParams {
    pub temperature: f64,
    pub top_p: f64,
    #[serde(default)]
    pub top_k: Option<u32>,
    pub max_tokens: u32,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams {
            temperature: 0.7,
            top_p: 0.95,
            top_k: None,
            max_tokens: 4096,
        }
    }
}

impl GenParams {
    pub fn request(&self, prompt: String, seed: Option<u64>) -> ChatRequest {
        ChatRequest {
            messages: vec![crate::gateway::ChatMessage::user(prompt)],
            temperature: self.temperature,
            top_p: self.top_p,
            top_k: self.top_k,
            max_tokens: self.max_tokens,
            enable_thinking: false,
            seed,
        }
    }
}

/// Return the seed answer untouched when it is already detailed; otherwise
/// ask the teacher for a step-by-step rewrite.
pub fn ensure_detailed(
    seed: &SeedSample,
    teacher: &ProviderProfile,
    gateway: &Gateway,
    store: &TemplateStore,
    params: &GenParams,
) -> Result<String, Phase1Error> {
    if seed.is_detailed {
        return Ok(seed.y_seed.clone());
    }
    let prompt = store.render(
        TemplateId::Detail,
        &prompts::bindings([
            ("domain", seed.domain.as_str()),
            ("question", seed.x_seed.as_str()),
            ("answer", seed.y_seed.as_str()),
        ]),
    )?;
    let response = gateway.chat_complete(teacher, &params.request(prompt, None))?;
    if response.text.trim().is_empty() {
        return Err(Phase1Error::EmptyRewrite(seed.id.clone()));
    }
    Ok(response.text)
}

/// Extract one teacher's knowledge points and skills for a detailed seed.
pub fn extract_knowledge(
    seed: &SeedSample,
    detailed_solution: &str,
    teacher: &ProviderProfile,
    gateway: &Gateway,
    store: &TemplateStore,
    params: &GenParams,
) -> Result<TeacherKnowledge, Phase1Error> {
    let prompt = store.render(
        TemplateId::Extract,
        &prompts::bindings([
            ("domain", seed.domain.as_str()),
            ("question", seed.x_seed.as_str()),
            ("answer", detailed_solution),
        ]),
    )?;
    let response = gateway.chat_complete(teacher, &params.request(prompt, None))?;
    let (points, skills) = parse_knowledge(&response.text).map_err(Phase1Error::Knowledge)?;
    Ok(TeacherKnowledge {
        teacher_id: teacher.id.clone(),
        points,
        skills,
    })
}

/// Parse the labeled knowledge/skills output format.
pub fn parse_knowledge(text: &str) -> Result<(Vec<KnowledgePoint>, Skills), String> {
    let lower = text.to_lowercase();
    let kp_heading = lower
        .find("core knowledge points assessed")
        .or_else(|| lower.find("knowledge points"))
        .ok_or("missing `Core Knowledge Points Assessed` heading")?;
    let skills_heading = lower
        .find("problem-solving skills")
        .ok_or("missing `Problem-Solving Skills` heading")?;

    let kp_region = if kp_heading < skills_heading {
        &text[kp_heading..skills_heading]
    } else {
        &text[kp_heading..]
    };
    let skills_region = if skills_heading > kp_heading {
        &text[skills_heading..]
    } else {
        &text[skills_heading..kp_heading]
    };

    let mut points = Vec::new();
    for line in kp_region.lines() {
        let clean = strip_decor(line);
        let lower_line = clean.to_lowercase();
        if let Some(pos) = lower_line.find("knowledge point") {
            let after = match clean[pos..].find(':') {
                Some(colon) => clean[pos + colon + 1..].trim(),
                None => continue,
            };
            let (description, relevance) = match after.to_lowercase().find("relevance:") {
                Some(rel) => (
                    after[..rel].trim().trim_end_matches('.').to_string(),
                    after[rel + "relevance:".len()..].trim().to_string(),
                ),
                None => (after.trim_end_matches('.').to_string(), String::new()),
            };
            if !description.is_empty() {
                points.push(KnowledgePoint {
                    description,
                    relevance,
                });
            }
        }
    }
    if points.is_empty() {
        return Err("no knowledge points found".into());
    }

    let mut skills = Skills::default();
    for line in skills_region.lines() {
        let clean = strip_decor(line);
        let lower_line = clean.to_lowercase();
        for (label, slot) in [
            ("strategy:", 0usize),
            ("decomposing:", 1),
            ("formula application", 2),
        ] {
            if let Some(pos) = lower_line.find(label) {
                let value = match clean[pos..].find(':') {
                    Some(colon) => clean[pos + colon + 1..].trim().to_string(),
                    None => continue,
                };
                match slot {
                    0 => skills.strategy = value,
                    1 => skills.decomposition = value,
                    _ => skills.formula_applications = value,
                }
            }
        }
    }
    Ok((points, skills))
}

fn strip_decor(line: &str) -> String {
    line.trim()
        .trim_start_matches(['-', '*', '•', '#'])
        .replace("**", "")
        .trim()
        .to_string()
}

/// Merge per-teacher knowledge lists into one summary: the union of points
/// deduplicated by normalized description (set-union semantics), skills
/// merged by joining distinct entries. `merged_by` records the integrating
/// teacher.
pub fn summarize_knowledge(
    per_teacher: &[TeacherKnowledge],
    integrator: &ProviderProfile,
) -> Result<KnowledgeSummary, Phase1Error> {
    if per_teacher.is_empty() {
        return Err(Phase1Error::NoKnowledge);
    }
    let mut seen = std::collections::BTreeSet::new();
    let mut knowledge_points = Vec::new();
    for tk in per_teacher {
        for point in &tk.points {
            let key = normalize_description(&point.description);
            if seen.insert(key) {
                knowledge_points.push(point.clone());
            }
        }
    }
    let join = |f: fn(&Skills) -> &String| -> String {
        let mut parts: Vec<&str> = Vec::new();
        for tk in per_teacher {
            let v = f(&tk.skills).trim();
            if !v.is_empty() && !parts.contains(&v) {
                parts.push(v);
            }
        }
        parts.join(" ")
    };
    Ok(KnowledgeSummary {
        knowledge_points,
        skills: Skills {
            strategy: join(|s| &s.strategy),
            decomposition: join(|s| &s.decomposition),
            formula_applications: join(|s| &s.formula_applications),
        },
        source_teachers: per_teacher.iter().map(|t| t.teacher_id.clone()).collect(),
        merged_by: integrator.id.clone(),
    })
}

pub fn normalize_description(s: &str) -> String {
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Ask one teacher for `n` new problems; unparseable generations are dropped
/// and counted. Erring only when nothing parses keeps a flaky teacher from
/// sinking the stage.
pub fn generate_problems(
    summary: &KnowledgeSummary,
    teacher: &ProviderProfile,
    gateway: &Gateway,
    store: &TemplateStore,
    params: &GenParams,
    domain: &str,
    n: usize,
    seed_base: u64,
    provenance: &str,
) -> Result<(Vec<TrainCandidate>, u64), Phase1Error> {
    let knowledge_text = summary
        .knowledge_points
        .iter()
        .map(|p| {
            if p.relevance.is_empty() {
                format!("- {}", p.description)
            } else {
                format!("- {}. Relevance: {}", p.description, p.relevance)
            }
        })
        .collect::<Vec<_>>()
        .join("\n");
    let skills_text = format!(
        "- Strategy: {}\n- Decomposing: {}\n- Formula Application & Mathematical Tools: {}",
        summary.skills.strategy, summary.skills.decomposition, summary.skills.formula_applications
    );
    let prompt = store.render(
        TemplateId::Generate,
        &prompts::bindings([
            ("domain", domain),
            ("knowledge_points", knowledge_text.as_str()),
            ("skills", skills_text.as_str()),
        ]),
    )?;

    let mut candidates = Vec::new();
    let mut dropped = 0u64;
    for i in 0..n {
        // Distinct seeds keep requests distinguishable in the replay cache.
        let request = params.request(prompt.clone(), Some(seed_base.wrapping_add(i as u64)));
        let response = gateway.chat_complete(teacher, &request)?;
        match prompts::parse_generated_problem(&response.text) {
            Ok(problem) => {
                let y_train = if problem.solution_steps.to_lowercase().contains("final answer") {
                    problem.solution_steps.clone()
                } else {
                    format!(
                        "{}\nFinal Answer: {}",
                        problem.solution_steps, problem.final_answer
                    )
                };
                candidates.push(TrainCandidate {
                    id: candidate_id(&teacher.id, &problem.statement, &y_train),
                    x_train: problem.statement,
                    y_train,
                    final_answer: problem.final_answer,
                    generator_id: teacher.id.clone(),
                    provenance: provenance.to_string(),
                });
            }
            Err(_) => dropped += 1,
        }
    }
    if candidates.is_empty() && n > 0 {
        return Err(Phase1Error::AllUnparseable(n));
    }
    Ok((candidates, dropped))
}

/// Collect boxed credibility scores from the reviewer committee and average
/// them. A reviewer whose response does not parse is excluded from the mean;
/// if every reviewer fails the candidate is unreviewable.
pub fn peer_review(
    candidate: &TrainCandidate,
    reviewers: &[&ProviderProfile],
    gateway: &Gateway,
    store: &TemplateStore,
    params: &GenParams,
    tau: f64,
) -> Result<ReviewRecord, Phase1Error> {
    if reviewers.is_empty() {
        return Err(Phase1Error::NoReviewers(candidate.id.clone()));
    }
    if let Some(gen) = reviewers.iter().find(|r| r.id == candidate.generator_id) {
        return Err(Phase1Error::GeneratorInReviewerSet {
            generator: gen.id.clone(),
            candidate: candidate.id.clone(),
        });
    }
    let prompt = store.render(
        TemplateId::PeerReview,
        &prompts::bindings([
            ("question", candidate.x_train.as_str()),
            ("answer", candidate.y_train.as_str()),
        ]),
    )?;
    let mut reviewer_scores = BTreeMap::new();
    for reviewer in reviewers {
        let response = gateway.chat_complete(reviewer, &params.request(prompt.clone(), None))?;
        match prompts::parse_boxed_score(&response.text) {
            Ok(score) => {
                reviewer_scores.insert(reviewer.id.clone(), score);
            }
            Err(ParseError::MissingBox | ParseError::BoxNotNumeric(_) | ParseError::ScoreOutOfRange(_)) => {
                // Parse failure is transport noise, not a verdict.
            }
            Err(_) => {}
        }
    }
    if reviewer_scores.is_empty() {
        return Err(Phase1Error::ReviewUnavailable(candidate.id.clone()));
    }
    let consensus =
        reviewer_scores.values().sum::<f64>() / reviewer_scores.len() as f64;
    Ok(ReviewRecord {
        candidate_id: candidate.id.clone(),
        reviewer_scores,
        consensus,
        kept: consensus >= tau,
    })
}

/// Keep the candidates whose records passed review, order-stable. Returns
/// the survivors and the per-teacher drop counts.
pub fn filter_reviewed(
    candidates: &[TrainCandidate],
    records: &[ReviewRecord],
) -> Result<(Vec<TrainCandidate>, BTreeMap<String, u64>), Phase1Error> {
    if candidates.len() != records.len() {
        return Err(Phase1Error::RecordCount {
            candidates: candidates.len(),
            records: records.len(),
        });
    }
    let mut kept = Vec::new();
    let mut dropped_per_teacher: BTreeMap<String, u64> = BTreeMap::new();
    for (position, (candidate, record)) in candidates.iter().zip(records).enumerate() {
        if candidate.id != record.candidate_id {
            return Err(Phase1Error::RecordMismatch {
                position,
                record: record.candidate_id.clone(),
                candidate: candidate.id.clone(),
            });
        }
        if record.kept {
            kept.push(candidate.clone());
        } else {
            *dropped_per_teacher
                .entry(candidate.generator_id.clone())
                .or_default() += 1;
        }
    }
    Ok((kept, dropped_per_teacher))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{
        Backend, ChatResponse, FinishReason, PerplexityResult, ProviderRole, ReplayMode,
    };

    fn teacher(id: &str) -> ProviderProfile {
        ProviderProfile {
            id: id.into(),
            endpoint: "mock://teacher".into(),
            model_name: format!("model-{id}"),
            role: ProviderRole::Teacher,
            max_concurrent: 4,
            request_timeout_secs: 5,
            api_key_env: None,
            embedding_dim: None,
            supports_logprobs: false,
        }
    }

    /// Echoes a fixed string for every chat call.
    struct Scripted(&'static str);

    impl Backend for Scripted {
        fn chat(
            &self,
            _p: &ProviderProfile,
            _r: &ChatRequest,
        ) -> Result<ChatResponse, GatewayError> {
            Ok(ChatResponse {
                text: self.0.to_string(),
                prompt_tokens: 1,
                output_tokens: 1,
                finish_reason: FinishReason::Stop,
            })
        }
        fn embed(&self, _p: &ProviderProfile, _t: &str) -> Result<Vec<f64>, GatewayError> {
            unimplemented!()
        }
        fn perplexity(
            &self,
            _p: &ProviderProfile,
            _c: &str,
            _t: &str,
        ) -> Result<PerplexityResult, GatewayError> {
            unimplemented!()
        }
    }

    fn gw(script: &'static str) -> Gateway {
        Gateway::with_backend(Box::new(Scripted(script)), ReplayMode::Off, None).unwrap()
    }

    fn seed(detailed: bool) -> SeedSample {
        SeedSample {
            id: "s1".into(),
            x_seed: "What is the path loss?".into(),
            y_seed: "The loss is 120 dB.".into(),
            domain: "telecom".into(),
            is_detailed: detailed,
        }
    }

    #[test]
    fn detailed_seed_passes_through_byte_for_byte() {
        let gateway = gw("SHOULD NOT BE USED");
        let out = ensure_detailed(
            &seed(true),
            &teacher("a"),
            &gateway,
            &TemplateStore::builtin(),
            &GenParams::default(),
        )
        .unwrap();
        assert_eq!(out, "The loss is 120 dB.");
    }

    #[test]
    fn undetailed_seed_goes_through_the_teacher() {
        let gateway = gw("STEP: The loss is 120 dB.");
        let out = ensure_detailed(
            &seed(false),
            &teacher("a"),
            &gateway,
            &TemplateStore::builtin(),
            &GenParams::default(),
        )
        .unwrap();
        assert_eq!(out, "STEP: The loss is 120 dB.");
    }

    #[test]
    fn empty_rewrite_is_an_error() {
        let gateway = gw("   ");
        assert!(matches!(
            ensure_detailed(
                &seed(false),
                &teacher("a"),
                &gateway,
                &TemplateStore::builtin(),
                &GenParams::default(),
            ),
            Err(Phase1Error::EmptyRewrite(_))
        ));
    }

    #[test]
    fn knowledge_parsing_extracts_points_and_skills() {
        let text = "Core Knowledge Points Assessed\n\
            - **Knowledge Point 1:** Free-space path loss. Relevance: governs the budget.\n\
            - **Knowledge Point 2:** dB arithmetic. Relevance: unit discipline.\n\
            Problem-Solving Skills\n\
            - **Strategy:** work in dB.\n\
            - **Decomposing:** split into gains and losses. Relevance: additive.\n\
            - **Formula Application & Mathematical Tools:** FSPL formula.";
        let (points, skills) = parse_knowledge(text).unwrap();
        assert_eq!(points.len(), 2);
        assert_eq!(points[0].description, "Free-space path loss");
        assert_eq!(skills.strategy, "work in dB.");
        assert!(skills.formula_applications.contains("FSPL"));
    }

    #[test]
    fn knowledge_parsing_requires_skills_heading() {
        let text = "Core Knowledge Points Assessed\n- Knowledge Point 1: a. Relevance: b.";
        assert!(parse_knowledge(text).is_err());
    }

    #[test]
    fn merge_is_union_dedup_by_normalized_description() {
        let a = TeacherKnowledge {
            teacher_id: "a".into(),
            points: vec![
                KnowledgePoint {
                    description: "Path Loss".into(),
                    relevance: "r1".into(),
                },
                KnowledgePoint {
                    description: "SNR".into(),
                    relevance: "r2".into(),
                },
            ],
            skills: Skills {
                strategy: "s".into(),
                decomposition: "d".into(),
                formula_applications: "f".into(),
            },
        };
        let b = TeacherKnowledge {
            teacher_id: "b".into(),
            points: vec![
                KnowledgePoint {
                    description: "path  loss".into(),
                    relevance: "dup".into(),
                },
                KnowledgePoint {
                    description: "Capacity".into(),
                    relevance: "r3".into(),
                },
            ],
            skills: Skills {
                strategy: "s".into(),
                decomposition: "d2".into(),
                formula_applications: "f".into(),
            },
        };
        let merged = summarize_knowledge(&[a.clone(), b], &teacher("a")).unwrap();
        let descriptions: Vec<&str> = merged
            .knowledge_points
            .iter()
            .map(|p| p.description.as_str())
            .collect();
        assert_eq!(descriptions, ["Path Loss", "SNR", "Capacity"]);
        assert_eq!(merged.merged_by, "a");
        assert_eq!(merged.source_teachers, ["a", "b"]);

        let single = summarize_knowledge(std::slice::from_ref(&a), &teacher("z")).unwrap();
        assert_eq!(single.knowledge_points, a.points);
    }

    #[test]
    fn merge_of_nothing_is_an_error() {
        assert!(matches!(
            summarize_knowledge(&[], &teacher("a")),
            Err(Phase1Error::NoKnowledge)
        ));
    }

    fn summary() -> KnowledgeSummary {
        KnowledgeSummary {
            knowledge_points: vec![KnowledgePoint {
                description: "x".into(),
                relevance: "y".into(),
            }],
            skills: Skills::default(),
            source_teachers: vec!["a".into()],
            merged_by: "a".into(),
        }
    }

    #[test]
    fn generation_collects_parseable_candidates() {
        let gateway = gw("Problem Statement: q\nSolution Steps: s\nFinal Answer: 5");
        let (candidates, dropped) = generate_problems(
            &summary(),
            &teacher("a"),
            &gateway,
            &TemplateStore::builtin(),
            &GenParams::default(),
            "telecom",
            4,
            0,
            "seed-1",
        )
        .unwrap();
        assert_eq!(candidates.len(), 4);
        assert_eq!(dropped, 0);
        assert!(candidates.iter().all(|c| c.final_answer == 5.0));
        assert!(candidates.iter().all(|c| c.generator_id == "a"));
        assert!(candidates[0].y_train.contains("Final Answer: 5"));
    }

    #[test]
    fn garbage_generation_errors_after_n_failures() {
        let gateway = gw("no sections at all");
        let err = generate_problems(
            &summary(),
            &teacher("a"),
            &gateway,
            &TemplateStore::builtin(),
            &GenParams::default(),
            "telecom",
            3,
            0,
            "seed-1",
        )
        .unwrap_err();
        assert!(matches!(err, Phase1Error::AllUnparseable(3)));
    }

    fn cand(id: &str, generator: &str) -> TrainCandidate {
        TrainCandidate {
            id: id.into(),
            x_train: "q".into(),
            y_train: "a".into(),
            final_answer: 1.0,
            generator_id: generator.into(),
            provenance: "s".into(),
        }
    }

    #[test]
    fn boundary_consensus_is_inclusive() {
        // Scores 0.9 and 0.7 under tau = 0.8: mean exactly 0.8, kept.
        let record = ReviewRecord {
            candidate_id: "c".into(),
            reviewer_scores: [("r1".to_string(), 0.9), ("r2".to_string(), 0.7)].into(),
            consensus: 0.8,
            kept: true,
        };
        let mean = record.reviewer_scores.values().sum::<f64>()
            / record.reviewer_scores.len() as f64;
        assert!((mean - record.consensus).abs() < 1e-15);
        assert_eq!(record.kept, mean >= 0.8);
    }

    #[test]
    fn peer_review_excludes_generator() {
        let gateway = gw("\\box{0.90}");
        let t_a = teacher("a");
        let t_b = teacher("b");
        let candidate = cand("c1", "a");
        let err = peer_review(
            &candidate,
            &[&t_a, &t_b],
            &gateway,
            &TemplateStore::builtin(),
            &GenParams::default(),
            0.75,
        )
        .unwrap_err();
        assert!(matches!(err, Phase1Error::GeneratorInReviewerSet { .. }));

        let record = peer_review(
            &candidate,
            &[&t_b],
            &gateway,
            &TemplateStore::builtin(),
            &GenParams::default(),
            0.75,
        )
        .unwrap();
        assert!(!record.reviewer_scores.contains_key("a"));
        assert!(record.kept);
    }

    #[test]
    fn unparseable_reviews_drop_with_reason() {
        let gateway = gw("I refuse to answer in the required format");
        let t_b = teacher("b");
        let err = peer_review(
            &cand("c1", "a"),
            &[&t_b],
            &gateway,
            &TemplateStore::builtin(),
            &GenParams::default(),
            0.75,
        )
        .unwrap_err();
        assert!(matches!(err, Phase1Error::ReviewUnavailable(_)));
    }

    #[test]
    fn filter_is_order_stable_and_counts_drops() {
        let candidates = vec![cand("c1", "a"), cand("c2", "b"), cand("c3", "a")];
        let record = |id: &str, kept: bool| ReviewRecord {
            candidate_id: id.into(),
            reviewer_scores: [("r".to_string(), if kept { 1.0 } else { 0.0 })].into(),
            consensus: if kept { 1.0 } else { 0.0 },
            kept,
        };
        let records = vec![record("c1", true), record("c2", false), record("c3", true)];
        let (kept, drops) = filter_reviewed(&candidates, &records).unwrap();
        assert_eq!(
            kept.iter().map(|c| c.id.as_str()).collect::<Vec<_>>(),
            ["c1", "c3"]
        );
        assert_eq!(drops.get("b"), Some(&1));
        assert_eq!(drops.get("a"), None);

        // id mismatch is a typed error
        let bad = vec![record("cX", true), record("c2", false), record("c3", true)];
        assert!(matches!(
            filter_reviewed(&candidates, &bad),
            Err(Phase1Error::RecordMismatch { .. })
        ));
    }
}
