//! Benchmark decontamination: MinHash/LSH lexical near-duplicate removal,
//! then a semantic sieve (canonicalization, dual-view embeddings,
//! cross-verification). The pipeline order is fixed: lexical first, then
//! semantic, both before any training-data use.

use serde::{Deserialize, Serialize};

use crate::gateway::{cosine, Gateway, GatewayError, ProviderProfile};
use crate::prompts::{self, TemplateId, TemplateStore};

pub mod canon;
pub mod formula;
pub mod minhash;

pub use canon::{canonicalize, normalize_text, parse_quantity, slot_abstract_doc, CanonicalDoc, RawDoc};
pub use formula::{
    canonical_formula, numeric_equivalence, slot_abstract, DomainRanges, EquivalenceError,
};
pub use minhash::{
    estimate_jaccard, exact_jaccard, minhash_signature, shingle, HashFamily, LshIndex,
    MinHashError, MinHashSignature,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContaminationReason {
    Lexical,
    SemanticEntailment,
    NumericEquivalence,
}

/// A candidate flagged as contaminated against one benchmark item.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContaminationFlag {
    pub candidate_id: String,
    pub benchmark_id: String,
    pub reason: ContaminationReason,
    pub score: f64,
}

/// Lexical-filter knobs; defaults are the reference values.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LexicalParams {
    pub shingle_k: usize,
    pub num_hashes: usize,
    pub bands: usize,
    pub rows: usize,
    pub tau_jac: f64,
}

impl Default for LexicalParams {
    fn default() -> Self {
        LexicalParams {
            shingle_k: 5,
            num_hashes: 128,
            bands: 32,
            rows: 4,
            tau_jac: 0.8,
        }
    }
}

/// Build an LSH index over the benchmark and flag candidates whose estimated
/// Jaccard similarity to any colliding benchmark item reaches `tau_jac`.
/// Returns surviving candidate indices (order-stable) and the flags.
pub fn lexical_filter(
    candidates: &[CanonicalDoc],
    benchmark: &[CanonicalDoc],
    family: &HashFamily,
    params: &LexicalParams,
) -> Result<(Vec<usize>, Vec<ContaminationFlag>), MinHashError> {
    let mut bench_sigs = Vec::new();
    let mut bench_ids = Vec::new();
    for doc in benchmark {
        let shingles = shingle(&doc.norm_text, params.shingle_k);
        if shingles.is_empty() {
            continue;
        }
        bench_sigs.push(minhash_signature(family, &shingles, params.shingle_k, &doc.doc_id)?);
        bench_ids.push(doc.doc_id.clone());
    }
    let index = LshIndex::build(&bench_sigs, params.bands, params.rows)?;

    let mut survivors = Vec::new();
    let mut flags = Vec::new();
    for (idx, doc) in candidates.iter().enumerate() {
        let shingles = shingle(&doc.norm_text, params.shingle_k);
        if shingles.is_empty() {
            // Nothing to compare; an empty text cannot collide.
            survivors.push(idx);
            continue;
        }
        let sig = minhash_signature(family, &shingles, params.shingle_k, &doc.doc_id)?;
        let mut contaminated = false;
        for bench_idx in index.candidates(&sig)? {
            let estimate = estimate_jaccard(&sig, &bench_sigs[bench_idx])?;
            if estimate >= params.tau_jac {
                contaminated = true;
                flags.push(ContaminationFlag {
                    candidate_id: doc.doc_id.clone(),
                    benchmark_id: bench_ids[bench_idx].clone(),
                    reason: ContaminationReason::Lexical,
                    score: estimate,
                });
            }
        }
        if !contaminated {
            survivors.push(idx);
        }
    }
    Ok((survivors, flags))
}

/// Dual-view embeddings of a canonical document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DocEmbeddings {
    pub doc_id: String,
    pub text_vec: Vec<f64>,
    pub form_vec: Option<Vec<f64>>,
}

/// Embed the text view (question + prose) and, when a formula is present,
/// the structure view (canonical formula + SI parameters).
pub fn embed_views(
    doc: &CanonicalDoc,
    gateway: &Gateway,
    embedder: &ProviderProfile,
) -> Result<DocEmbeddings, GatewayError> {
    let text_vec = gateway.embed(embedder, &doc.norm_text)?;
    let form_vec = match &doc.canonical_formula {
        Some(formula) => {
            let params = doc
                .si_params
                .iter()
                .map(|(k, v)| format!("{k}={v}"))
                .collect::<Vec<_>>()
                .join(" ");
            Some(gateway.embed(embedder, &format!("formula={formula} params: {params}"))?)
        }
        None => None,
    };
    Ok(DocEmbeddings {
        doc_id: doc.doc_id.clone(),
        text_vec,
        form_vec,
    })
}

/// Semantic-sieve knobs; defaults are the reference values.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SemanticParams {
    pub top_k: usize,
    pub tau_txt: f64,
    pub tau_form: f64,
    pub tau_xenc: f64,
    pub epsilon: f64,
    pub eq_samples: usize,
    #[serde(default)]
    pub entailment_aggregation: EntailmentAggregation,
}

impl Default for SemanticParams {
    fn default() -> Self {
        SemanticParams {
            top_k: 50,
            tau_txt: 0.86,
            tau_form: 0.90,
            tau_xenc: 0.60,
            epsilon: 1e-3,
            eq_samples: 20,
            entailment_aggregation: EntailmentAggregation::Min,
        }
    }
}

/// How the two entailment directions combine into one score.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntailmentAggregation {
    #[default]
    Min,
    Mean,
}

/// A benchmark pair that passed the similarity sieve and must be verified.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticCandidate {
    pub benchmark_index: usize,
    pub cos_txt: f64,
    pub cos_form: Option<f64>,
}

/// Retrieve top-K benchmark neighbors in each view and keep pairs where any
/// view clears its own threshold (the max rule).
pub fn semantic_candidates(
    candidate: &DocEmbeddings,
    benchmark: &[DocEmbeddings],
    params: &SemanticParams,
) -> Vec<SemanticCandidate> {
    let mut txt_scores: Vec<(usize, f64)> = benchmark
        .iter()
        .enumerate()
        .map(|(i, b)| (i, cosine(&candidate.text_vec, &b.text_vec)))
        .collect();
    txt_scores.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    txt_scores.truncate(params.top_k);

    let mut form_scores: Vec<(usize, f64)> = Vec::new();
    if let Some(cand_form) = &candidate.form_vec {
        form_scores = benchmark
            .iter()
            .enumerate()
            .filter_map(|(i, b)| {
                b.form_vec
                    .as_ref()
                    .map(|f| (i, cosine(cand_form, f)))
            })
            .collect();
        form_scores.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        form_scores.truncate(params.top_k);
    }

    let mut out: Vec<SemanticCandidate> = Vec::new();
    let mut push = |benchmark_index: usize, cos_txt: f64, cos_form: Option<f64>| {
        if let Some(existing) = out.iter_mut().find(|c| c.benchmark_index == benchmark_index) {
            if existing.cos_form.is_none() {
                existing.cos_form = cos_form;
            }
            return;
        }
        out.push(SemanticCandidate {
            benchmark_index,
            cos_txt,
            cos_form,
        });
    };
    for (i, cos_txt) in &txt_scores {
        if *cos_txt >= params.tau_txt {
            let cos_form = form_scores
                .iter()
                .find(|(j, _)| j == i)
                .map(|(_, c)| *c);
            push(*i, *cos_txt, cos_form);
        }
    }
    for (i, cos_form) in &form_scores {
        if *cos_form >= params.tau_form {
            let cos_txt = txt_scores
                .iter()
                .find(|(j, _)| j == i)
                .map(|(_, c)| *c)
                .unwrap_or_else(|| {
                    cosine(&candidate.text_vec, &benchmark[*i].text_vec)
                });
            push(*i, cos_txt, Some(*cos_form));
        }
    }
    out.sort_by(|a, b| a.benchmark_index.cmp(&b.benchmark_index));
    out
}

/// Outcome of verifying a retrieved pair. Judge failures quarantine the pair
/// for manual review; contamination false-negatives are the costly error.
#[derive(Debug, Clone)]
pub enum VerifyOutcome {
    Flagged(ContaminationFlag),
    Clear,
    Quarantined { reason: String },
}

/// Cross-verify a candidate/benchmark pair: bidirectional entailment via the
/// judge, plus the numeric-equivalence check when both formulas parse.
/// Flagged iff the entailment score reaches `tau_xenc` or the numeric check
/// confirms equivalence.
#[allow(clippy::too_many_arguments)]
pub fn cross_verify(
    candidate: &CanonicalDoc,
    benchmark: &CanonicalDoc,
    gateway: &Gateway,
    judge: &ProviderProfile,
    store: &TemplateStore,
    params: &SemanticParams,
    ranges: &DomainRanges,
    seed: u64,
) -> VerifyOutcome {
    // Numeric equivalence is decisive on its own when executable.
    let numeric = match (&candidate.canonical_formula, &benchmark.canonical_formula) {
        (Some(f1), Some(f2)) => {
            numeric_equivalence(f1, f2, params.eq_samples, ranges, params.epsilon, seed).ok()
        }
        _ => None,
    };
    if numeric == Some(true) {
        return VerifyOutcome::Flagged(ContaminationFlag {
            candidate_id: candidate.doc_id.clone(),
            benchmark_id: benchmark.doc_id.clone(),
            reason: ContaminationReason::NumericEquivalence,
            score: 1.0,
        });
    }

    let direction = |src: &CanonicalDoc, dst: &CanonicalDoc| -> Result<f64, String> {
        let prompt = store
            .render(
                TemplateId::Entailment,
                &prompts::bindings([
                    ("source_question", src.norm_text.as_str()),
                    ("source_answer", render_struct(src).as_str()),
                    ("target_question", dst.norm_text.as_str()),
                    ("target_answer", render_struct(dst).as_str()),
                ]),
            )
            .map_err(|e| e.to_string())?;
        let response = gateway
            .chat_complete(judge, &crate::gateway::ChatRequest::user(prompt))
            .map_err(|e| e.to_string())?;
        prompts::parse_boxed_score(&response.text).map_err(|e| e.to_string())
    };

    let forward = direction(candidate, benchmark);
    let backward = direction(benchmark, candidate);
    match (forward, backward) {
        (Ok(f), Ok(b)) => {
            let s_xenc = match params.entailment_aggregation {
                EntailmentAggregation::Min => f.min(b),
                EntailmentAggregation::Mean => (f + b) / 2.0,
            };
            if s_xenc >= params.tau_xenc {
                VerifyOutcome::Flagged(ContaminationFlag {
                    candidate_id: candidate.doc_id.clone(),
                    benchmark_id: benchmark.doc_id.clone(),
                    reason: ContaminationReason::SemanticEntailment,
                    score: s_xenc,
                })
            } else {
                VerifyOutcome::Clear
            }
        }
        (Err(e), _) | (_, Err(e)) => VerifyOutcome::Quarantined { reason: e },
    }
}

fn render_struct(doc: &CanonicalDoc) -> String {
    let mut out = String::new();
    if let Some(f) = &doc.canonical_formula {
        out.push_str("formula: ");
        out.push_str(f);
        out.push('\n');
    }
    for (k, v) in &doc.si_params {
        out.push_str(&format!("{k} = {v}\n"));
    }
    if out.is_empty() {
        out.push_str("(prose only)");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{
        Backend, ChatRequest, ChatResponse, FinishReason, PerplexityResult, ProviderRole,
        ReplayMode,
    };

    fn doc(id: &str, text: &str, formula: Option<&str>) -> CanonicalDoc {
        let (doc, _) = canonicalize(&RawDoc {
            id: id.into(),
            text: text.into(),
            params: vec![],
            formula: formula.map(String::from),
        });
        doc
    }

    #[test]
    fn verbatim_copy_is_flagged_lexically_with_score_one() {
        let family = HashFamily::new(5, 128);
        let text = "a receiver sees minus ninety dbm with a ten db noise figure compute the snr margin now";
        let bench = vec![doc("b1", text, None)];
        let cands = vec![doc("c1", text, None), doc("c2", "totally different words about compression", None)];
        let (survivors, flags) =
            lexical_filter(&cands, &bench, &family, &LexicalParams::default()).unwrap();
        assert_eq!(survivors, vec![1]);
        assert_eq!(flags.len(), 1);
        assert_eq!(flags[0].reason, ContaminationReason::Lexical);
        assert_eq!(flags[0].score, 1.0);
        assert_eq!(flags[0].benchmark_id, "b1");
    }

    #[test]
    fn lexical_flag_score_respects_threshold_invariant() {
        let family = HashFamily::new(5, 128);
        let bench = vec![doc("b1", "one two three four five six seven eight nine ten", None)];
        let cands = vec![doc(
            "c1",
            "one two three four five six seven eight nine ten eleven",
            None,
        )];
        let (_, flags) = lexical_filter(&cands, &bench, &family, &LexicalParams::default()).unwrap();
        for flag in flags {
            assert!(flag.score >= 0.8);
        }
    }

    struct FixedEmbedder;
    impl Backend for FixedEmbedder {
        fn chat(&self, _p: &ProviderProfile, _r: &ChatRequest) -> Result<ChatResponse, GatewayError> {
            unimplemented!()
        }
        fn embed(&self, _p: &ProviderProfile, text: &str) -> Result<Vec<f64>, GatewayError> {
            // Orthogonal unit vectors keyed by first token.
            let mut v = vec![0.0; 8];
            let slot = match text.split_whitespace().next().unwrap_or("") {
                "alpha" => 0,
                "beta" => 1,
                _ => 2,
            };
            v[slot] = 1.0;
            Ok(v)
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

    fn embedder_profile() -> ProviderProfile {
        ProviderProfile {
            id: "e".into(),
            endpoint: "mock://embed".into(),
            model_name: "embed".into(),
            role: ProviderRole::Embedder,
            max_concurrent: 2,
            request_timeout_secs: 5,
            api_key_env: None,
            embedding_dim: Some(8),
            supports_logprobs: false,
        }
    }

    #[test]
    fn identical_docs_have_unit_cosine_in_both_views() {
        let gw = Gateway::with_backend(Box::new(FixedEmbedder), ReplayMode::Off, None).unwrap();
        let d = doc("d", "alpha beam analysis", Some("2*x"));
        let e1 = embed_views(&d, &gw, &embedder_profile()).unwrap();
        let e2 = embed_views(&d, &gw, &embedder_profile()).unwrap();
        assert!((cosine(&e1.text_vec, &e2.text_vec) - 1.0).abs() < 1e-12);
        assert!(
            (cosine(e1.form_vec.as_ref().unwrap(), e2.form_vec.as_ref().unwrap()) - 1.0).abs()
                < 1e-12
        );
        let plain = doc("p", "beta beam analysis", None);
        let ep = embed_views(&plain, &gw, &embedder_profile()).unwrap();
        assert!(ep.form_vec.is_none());
        assert!(cosine(&e1.text_vec, &ep.text_vec).abs() < 1e-12);
    }

    fn emb(id: &str, txt: Vec<f64>, form: Option<Vec<f64>>) -> DocEmbeddings {
        DocEmbeddings {
            doc_id: id.into(),
            text_vec: txt,
            form_vec: form,
        }
    }

    #[test]
    fn threshold_logic_is_per_view() {
        let params = SemanticParams::default();
        // candidate text vec = [1,0], form vec = [1,0]
        let cand = emb("c", vec![1.0, 0.0], Some(vec![1.0, 0.0]));
        // bench0: cos_txt = 0.87, cos_form = 0.5 → enters via text view
        let bench0 = emb(
            "b0",
            vec![0.87, (1.0f64 - 0.87 * 0.87).sqrt()],
            Some(vec![0.5, (1.0f64 - 0.25).sqrt()]),
        );
        // bench1: cos_txt = 0.80, cos_form = 0.89 → neither view passes
        let bench1 = emb(
            "b1",
            vec![0.80, 0.6],
            Some(vec![0.89, (1.0f64 - 0.89 * 0.89).sqrt()]),
        );
        // bench2: cos_form = 0.91 alone → enters
        let bench2 = emb(
            "b2",
            vec![0.0, 1.0],
            Some(vec![0.91, (1.0f64 - 0.91 * 0.91).sqrt()]),
        );
        let bench = vec![bench0, bench1, bench2];
        let hits = semantic_candidates(&cand, &bench, &params);
        let indices: Vec<usize> = hits.iter().map(|h| h.benchmark_index).collect();
        assert_eq!(indices, vec![0, 2]);
    }

    struct EntailmentJudge(f64, f64);
    impl Backend for EntailmentJudge {
        fn chat(&self, _p: &ProviderProfile, r: &ChatRequest) -> Result<ChatResponse, GatewayError> {
            // Direction is recoverable from which doc appears first.
            let text = &r.messages[0].content;
            let fwd = text.find("first doc").unwrap_or(0) < text.find("second doc").unwrap_or(1);
            let score = if fwd { self.0 } else { self.1 };
            Ok(ChatResponse {
                text: format!("\\box{{{score:.2}}}"),
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

    fn judge_profile() -> ProviderProfile {
        ProviderProfile {
            id: "j".into(),
            endpoint: "mock://judge".into(),
            model_name: "judge".into(),
            role: ProviderRole::Judge,
            max_concurrent: 2,
            request_timeout_secs: 5,
            api_key_env: None,
            embedding_dim: None,
            supports_logprobs: false,
        }
    }

    #[test]
    fn equivalent_formulas_are_flagged_numerically() {
        let gw = Gateway::with_backend(Box::new(EntailmentJudge(0.0, 0.0)), ReplayMode::Off, None)
            .unwrap();
        let cand = doc("c", "first doc scale things", Some("2*x"));
        let bench = doc("b", "second doc double items", Some("x+x"));
        let outcome = cross_verify(
            &cand,
            &bench,
            &gw,
            &judge_profile(),
            &TemplateStore::builtin(),
            &SemanticParams::default(),
            &DomainRanges::default(),
            3,
        );
        match outcome {
            VerifyOutcome::Flagged(flag) => {
                assert_eq!(flag.reason, ContaminationReason::NumericEquivalence);
            }
            other => panic!("expected flag, got {other:?}"),
        }
    }

    #[test]
    fn entailment_aggregation_min_vs_mean() {
        let gw = Gateway::with_backend(Box::new(EntailmentJudge(0.8, 0.5)), ReplayMode::Off, None)
            .unwrap();
        let cand = doc("c", "first doc one thing", None);
        let bench = doc("b", "second doc another", None);
        let mut params = SemanticParams::default();

        // min(0.8, 0.5) = 0.5 < 0.60 → clear
        params.entailment_aggregation = EntailmentAggregation::Min;
        let outcome = cross_verify(
            &cand,
            &bench,
            &gw,
            &judge_profile(),
            &TemplateStore::builtin(),
            &params,
            &DomainRanges::default(),
            3,
        );
        assert!(matches!(outcome, VerifyOutcome::Clear));

        // mean(0.8, 0.5) = 0.65 ≥ 0.60 → flagged
        params.entailment_aggregation = EntailmentAggregation::Mean;
        let outcome = cross_verify(
            &cand,
            &bench,
            &gw,
            &judge_profile(),
            &TemplateStore::builtin(),
            &params,
            &DomainRanges::default(),
            3,
        );
        match outcome {
            VerifyOutcome::Flagged(flag) => {
                assert_eq!(flag.reason, ContaminationReason::SemanticEntailment);
                assert!((flag.score - 0.65).abs() < 1e-12);
            }
            other => panic!("expected flag, got {other:?}"),
        }
    }

    struct BrokenJudge;
    impl Backend for BrokenJudge {
        fn chat(&self, _p: &ProviderProfile, _r: &ChatRequest) -> Result<ChatResponse, GatewayError> {
            Ok(ChatResponse {
                text: "no box in sight".into(),
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

    #[test]
    fn judge_failure_quarantines_instead_of_clearing() {
        let gw = Gateway::with_backend(Box::new(BrokenJudge), ReplayMode::Off, None).unwrap();
        let cand = doc("c", "one thing", None);
        let bench = doc("b", "another", None);
        let outcome = cross_verify(
            &cand,
            &bench,
            &gw,
            &judge_profile(),
            &TemplateStore::builtin(),
            &SemanticParams::default(),
            &DomainRanges::default(),
            3,
        );
        assert!(matches!(outcome, VerifyOutcome::Quarantined { .. }));
    }
}
