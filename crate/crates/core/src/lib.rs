//! Two-phase training-data curation engine.
//!
//! The pipeline turns a small seed set of question/answer pairs into an
//! aligned training corpus in four file-to-file stages:
//!
//! 1. **phase1** — teacher-ensemble synthesis: seed solutions are expanded,
//!    knowledge and skills are extracted and merged, each teacher generates
//!    new problems, and a peer-review committee filters them by consensus.
//! 2. **decontam** — candidates lexically or semantically equivalent to
//!    benchmark items are flagged and removed (MinHash/LSH, then a
//!    canonicalization + dual-view embedding sieve with cross-verification).
//! 3. **phase2** — the student model's answer style is induced and every
//!    surviving solution is rewritten into it; candidates are scored by
//!    student reflection and a reward judge, fused via within-question
//!    z-scores, and the best rewrite per question is selected.
//! 4. **analyze** — evaluation analytics: pass@1 / cons@16 grading,
//!    token-shift tables, derived efficiency metrics, and pairwise judging
//!    with position-swap debiasing.
//!
//! All model access goes through [`gateway`], which supports OpenAI-compatible
//! HTTP providers, deterministic mock providers, and a record/replay cache so
//! the whole pipeline runs hermetically.

pub mod analytics;
pub mod config;
pub mod decontam;
pub mod gateway;
pub mod jsonl;
pub mod manifest;
pub mod phase1;
pub mod phase2;
pub mod pipeline;
pub mod prompts;
