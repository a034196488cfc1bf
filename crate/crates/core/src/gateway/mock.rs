//! Deterministic built-in provider for `mock://` endpoints.
//!
//! Responses are pure functions of (model name, messages, seed, run seed),
//! so desk-scale runs are reproducible with or without the replay cache.
//! Dispatch keys off distinctive phrases in the rendered prompt, and each
//! response is shaped to satisfy the parser that will consume it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::{
    Backend, ChatRequest, ChatResponse, FinishReason, GatewayError, PerplexityResult,
    ProviderProfile,
};

pub struct DeterministicMock {
    run_seed: u64,
}

impl DeterministicMock {
    pub fn new(run_seed: u64) -> Self {
        DeterministicMock { run_seed }
    }

    fn request_hash(&self, profile: &ProviderProfile, req: &ChatRequest) -> u64 {
        let mut h = fnv1a_str(&profile.model_name) ^ self.run_seed;
        for m in &req.messages {
            h = mix(h ^ fnv1a_str(&m.content));
        }
        if let Some(seed) = req.seed {
            h = mix(h ^ seed);
        }
        h
    }
}

fn fnv1a_str(s: &str) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in s.as_bytes() {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn unit_fraction(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Section of the prompt following `marker`, up to the next `**` heading.
fn section_after<'a>(prompt: &'a str, marker: &str) -> Option<&'a str> {
    let start = prompt.find(marker)? + marker.len();
    let rest = &prompt[start..];
    let end = rest.find("\n**").unwrap_or(rest.len());
    Some(rest[..end].trim())
}

fn response(text: String, prompt_len: usize) -> ChatResponse {
    ChatResponse {
        output_tokens: (text.len() / 4).max(1) as u64,
        prompt_tokens: (prompt_len / 4).max(1) as u64,
        text,
        finish_reason: FinishReason::Stop,
    }
}

impl Backend for DeterministicMock {
    fn chat(
        &self,
        profile: &ProviderProfile,
        req: &ChatRequest,
    ) -> Result<ChatResponse, GatewayError> {
        let prompt: String = req
            .messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n");
        let h = self.request_hash(profile, req);

        let text = if prompt.contains("rewrite the answer into detailed solution") {
            let answer = section_after(&prompt, "**The Correct Answer**").unwrap_or("");
            format!(
                "Step 1: Restate the given quantities.\n\
                 Step 2: Apply the governing relation and track units.\n\
                 Step 3: Conclude.\n{answer}"
            )
        } else if prompt.contains("extract and summarize two key components") {
            format!(
                "Core Knowledge Points Assessed\n\
                 - **Knowledge Point 1:** principle-{:04x}. Relevance: it governs the main computation.\n\
                 - **Knowledge Point 2:** conversion-{:04x}. Relevance: required to keep units consistent.\n\
                 Problem-Solving Skills\n\
                 - **Strategy:** isolate the requested quantity, then substitute known values.\n\
                 - **Decomposing:** split the scenario into conversion and evaluation steps. Relevance: keeps each step checkable.\n\
                 - **Formula Application & Mathematical Tools:** relation-{:04x} applied once.",
                h & 0xffff,
                mix(h) & 0xffff,
                mix(mix(h)) & 0xffff,
            )
        } else if prompt.contains("expert educational content creator") {
            let a = 2 + (h % 17);
            let b = 3 + (mix(h) % 23);
            format!(
                "Problem Statement: A node processes {a} batches of {b} frames each; \
                 compute the total frame count for scenario {:06x}.\n\
                 Solution Steps: 1. Each batch holds {b} frames, so multiply the batch count by the batch size. \
                 2. Evaluate {a} * {b}.\n\
                 Final Answer: {}",
                h & 0xff_ffff,
                a * b
            )
        } else if prompt.contains("semantic-equivalence judge") {
            let score = (unit_fraction(h) * 0.40 * 100.0).round() / 100.0;
            format!("The items share terminology but differ in substance. \\box{{{score:.2}}}")
        } else if prompt.contains("You are an impartial grader. Your task is to evaluate") {
            let u = unit_fraction(h);
            let score = if u < 0.80 {
                1.00
            } else if u < 0.92 {
                0.75
            } else {
                0.25
            };
            format!("Recomputing each step confirms the result. \\box{{{score:.2}}}")
        } else if prompt.contains("You are a style inducer") {
            format!(
                "- Language, Tone, and Level of Detail — Requirements\n\
                 - Use direct declarative sentences.\n\
                 - State every unit conversion explicitly.\n\
                 - Keep hedging out of final statements (profile {:04x}).\n\
                 - Answer Structure and Organization — Requirements\n\
                 - Open with a one-sentence restatement of the goal.\n\
                 - Number the computation steps.\n\
                 - Close with a line of the form `Final Answer: <value>`.",
                h & 0xffff
            )
        } else if prompt.contains("rewrite the solution in details") {
            let answer = section_after(&prompt, "**The Correct Answer**").unwrap_or("");
            format!("Goal: produce the required value.\n{answer}")
        } else if prompt.contains("strictly by the rubric") {
            let mut rng = ChaCha20Rng::seed_from_u64(h);
            let scores: Vec<u8> = (0..4).map(|_| rng.gen_range(5..=10)).collect();
            format!(
                "{{\"correctness\": {{\"score\": {}, \"explanation\": \"checked\"}},\n\
                  \"completeness\": {{\"score\": {}, \"explanation\": \"covered\"}},\n\
                  \"clarity\": {{\"score\": {}, \"explanation\": \"ordered\"}},\n\
                  \"conciseness\": {{\"score\": {}, \"explanation\": \"tight\"}}}}",
                scores[0], scores[1], scores[2], scores[3]
            )
        } else if prompt.contains("two provided answers") {
            let mut rng = ChaCha20Rng::seed_from_u64(h);
            let a: u8 = rng.gen_range(4..=9);
            let b: u8 = rng.gen_range(4..=9);
            format!(
                "{{\"evaluation\": {{\"answer_a\": {{\"score\": {a}, \"justification\": \"j\"}},\n\
                   \"answer_b\": {{\"score\": {b}, \"justification\": \"j\"}},\n\
                   \"summary\": \"compared\"}}}}"
            )
        } else {
            // Plain question (student style-corpus collection and similar).
            let head: String = prompt.chars().take(96).collect();
            format!(
                "Goal: answer the question directly.\n\
                 1. Identify the requested quantity.\n\
                 2. Apply the relevant relation.\n\
                 Final Answer: {}\n[context {head}]",
                (h % 1000) as f64 / 10.0
            )
        };
        Ok(response(text, prompt.len()))
    }

    fn embed(&self, profile: &ProviderProfile, text: &str) -> Result<Vec<f64>, GatewayError> {
        let dim = profile.embedding_dim.unwrap_or(64);
        let mut rng = ChaCha20Rng::seed_from_u64(mix(fnv1a_str(text) ^ self.run_seed));
        let mut v: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for x in &mut v {
                *x /= norm;
            }
        }
        Ok(v)
    }

    fn perplexity(
        &self,
        profile: &ProviderProfile,
        context: &str,
        target: &str,
    ) -> Result<PerplexityResult, GatewayError> {
        let h = mix(fnv1a_str(&profile.model_name) ^ fnv1a_str(context) ^ mix(fnv1a_str(target)))
            ^ self.run_seed;
        let perplexity = 1.2 + 1.3 * unit_fraction(mix(h));
        Ok(PerplexityResult {
            perplexity,
            target_token_count: target.split_whitespace().count().max(1) as u64,
        })
    }
}

/// Test helper: every token of the target gets the same probability.
pub struct ConstantTokenProbability(pub f64);

impl Backend for ConstantTokenProbability {
    fn chat(
        &self,
        _profile: &ProviderProfile,
        _req: &ChatRequest,
    ) -> Result<ChatResponse, GatewayError> {
        Ok(ChatResponse {
            text: String::new(),
            prompt_tokens: 0,
            output_tokens: 0,
            finish_reason: FinishReason::Stop,
        })
    }

    fn embed(&self, _profile: &ProviderProfile, _text: &str) -> Result<Vec<f64>, GatewayError> {
        Err(GatewayError::NoBackend("constant-probability mock".into()))
    }

    fn perplexity(
        &self,
        _profile: &ProviderProfile,
        _context: &str,
        target: &str,
    ) -> Result<PerplexityResult, GatewayError> {
        let n = target.split_whitespace().count().max(1) as u64;
        // ppl = exp(-mean ln p) = 1/p for a constant per-token probability.
        Ok(PerplexityResult {
            perplexity: 1.0 / self.0,
            target_token_count: n,
        })
    }
}

/// Test helper: distinct strings embed to orthogonal unit vectors.
pub struct OrthogonalEmbedder;

impl Backend for OrthogonalEmbedder {
    fn chat(
        &self,
        _profile: &ProviderProfile,
        _req: &ChatRequest,
    ) -> Result<ChatResponse, GatewayError> {
        Err(GatewayError::NoBackend("orthogonal embedder".into()))
    }

    fn embed(&self, profile: &ProviderProfile, text: &str) -> Result<Vec<f64>, GatewayError> {
        let dim = profile.embedding_dim.unwrap_or(64);
        let mut v = vec![0.0; dim];
        v[(fnv1a_str(text) % dim as u64) as usize] = 1.0;
        Ok(v)
    }

    fn perplexity(
        &self,
        _profile: &ProviderProfile,
        _context: &str,
        _target: &str,
    ) -> Result<PerplexityResult, GatewayError> {
        Err(GatewayError::NoBackend("orthogonal embedder".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{cosine, ProviderRole};

    fn profile() -> ProviderProfile {
        ProviderProfile {
            id: "mock".into(),
            endpoint: "mock://teacher".into(),
            model_name: "mock-a".into(),
            role: ProviderRole::Teacher,
            max_concurrent: 1,
            request_timeout_secs: 1,
            api_key_env: None,
            embedding_dim: Some(32),
            supports_logprobs: true,
        }
    }

    #[test]
    fn responses_are_deterministic() {
        let mock = DeterministicMock::new(42);
        let req = ChatRequest::user("expert educational content creator ...");
        let a = mock.chat(&profile(), &req).unwrap();
        let b = mock.chat(&profile(), &req).unwrap();
        assert_eq!(a, b);
        let mut seeded = req.clone();
        seeded.seed = Some(1);
        let c = mock.chat(&profile(), &seeded).unwrap();
        assert_ne!(a.text, c.text);
    }

    #[test]
    fn generation_output_is_parseable() {
        let mock = DeterministicMock::new(7);
        let req = ChatRequest::user(
            "You are an expert educational content creator with a deep specialization in x.",
        );
        let resp = mock.chat(&profile(), &req).unwrap();
        let parsed = crate::prompts::parse_generated_problem(&resp.text).unwrap();
        assert!(parsed.final_answer > 0.0);
    }

    #[test]
    fn embeddings_are_unit_length_and_deterministic() {
        let mock = DeterministicMock::new(7);
        let a = mock.embed(&profile(), "some text").unwrap();
        let b = mock.embed(&profile(), "some text").unwrap();
        assert_eq!(a, b);
        assert!((cosine(&a, &b) - 1.0).abs() < 1e-12);
        let c = mock.embed(&profile(), "different text").unwrap();
        assert!(cosine(&a, &c).abs() < 0.9);
    }

    #[test]
    fn constant_probability_mock_matches_closed_form() {
        let backend = ConstantTokenProbability(0.5);
        let ppl = backend.perplexity(&profile(), "", "a b c").unwrap();
        assert!((ppl.perplexity - 2.0).abs() < 1e-12);
        assert_eq!(ppl.target_token_count, 3);
    }

    #[test]
    fn orthogonal_embedder_contract() {
        let e = OrthogonalEmbedder;
        let a = e.embed(&profile(), "alpha").unwrap();
        let b = e.embed(&profile(), "alpha").unwrap();
        assert!((cosine(&a, &b) - 1.0).abs() < 1e-12);
    }
}
