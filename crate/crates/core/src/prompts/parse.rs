//! Parsers for the structured responses the prompt templates elicit.
//!
//! All parsers are total: any input yields a value or a typed error, never a
//! panic. Judges routinely wrap JSON in prose despite instructions, so JSON
//! extraction scans for the outermost balanced object with string-literal
//! awareness rather than trusting the whole response to `serde_json`.

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ParseError {
    #[error("no \\box{{...}} found in response")]
    MissingBox,
    #[error("boxed content `{0}` is not numeric")]
    BoxNotNumeric(String),
    #[error("boxed score {0} outside [0, 1]")]
    ScoreOutOfRange(f64),
    #[error("no JSON object found in response")]
    NoJsonObject,
    #[error("JSON object is missing key `{0}`")]
    MissingKey(String),
    #[error("`{criterion}` score {value} outside 0-10")]
    CriterionOutOfRange { criterion: String, value: f64 },
    #[error("`{criterion}` score {value} is not a whole number")]
    CriterionNotIntegral { criterion: String, value: f64 },
    #[error("`{criterion}` score is not a number")]
    CriterionNotNumeric { criterion: String },
    #[error("response is missing the `{0}` section")]
    MissingSection(String),
    #[error("final answer `{0}` is not a single numeric value")]
    AnswerNotNumeric(String),
}

/// One criterion's score and short justification from the reward judge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionScore {
    pub score: u8,
    pub explanation: String,
}

/// The four-criterion verdict of the reward judge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardScores {
    pub correctness: CriterionScore,
    pub completeness: CriterionScore,
    pub clarity: CriterionScore,
    pub conciseness: CriterionScore,
}

impl RewardScores {
    /// Weighted sum of the four criterion scores.
    pub fn weighted(&self, weights: &[f64; 4]) -> f64 {
        weights[0] * f64::from(self.correctness.score)
            + weights[1] * f64::from(self.completeness.score)
            + weights[2] * f64::from(self.clarity.score)
            + weights[3] * f64::from(self.conciseness.score)
    }
}

/// Parsed head-to-head judgment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseVerdict {
    pub score_a: u8,
    pub score_b: u8,
    pub summary: String,
}

/// A generated training problem split into its three labeled sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedProblem {
    pub statement: String,
    pub solution_steps: String,
    pub final_answer: f64,
}

/// Parse the numeric content of the final `\box{...}` (or `\boxed{...}`)
/// occurrence. Graders that self-correct end with the final verdict, so the
/// last box wins.
pub fn parse_boxed_score(text: &str) -> Result<f64, ParseError> {
    let content = last_box_content(text).ok_or(ParseError::MissingBox)?;
    let value: f64 = content
        .trim()
        .parse()
        .map_err(|_| ParseError::BoxNotNumeric(content.trim().to_string()))?;
    if !(0.0..=1.0).contains(&value) || !value.is_finite() {
        return Err(ParseError::ScoreOutOfRange(value));
    }
    Ok(value)
}

fn last_box_content(text: &str) -> Option<&str> {
    let mut best: Option<(usize, &str)> = None;
    for marker in ["\\box{", "\\boxed{"] {
        let mut from = 0;
        while let Some(pos) = text[from..].find(marker) {
            let start = from + pos + marker.len();
            match text[start..].find('}') {
                Some(len) => {
                    if best.map_or(true, |(s, _)| start > s) {
                        best = Some((start, &text[start..start + len]));
                    }
                    from = start + len + 1;
                }
                None => break,
            }
        }
    }
    best.map(|(_, content)| content)
}

/// Render a score the way the grading prompt requests it; inverse of
/// `parse_boxed_score` for two-decimal scores.
pub fn format_boxed_score(score: f64) -> String {
    format!("\\box{{{score:.2}}}")
}

/// Locate the outermost balanced JSON object in `text`, tolerating
/// surrounding prose and trailing commas, and parse it.
pub fn extract_json_object(text: &str) -> Result<serde_json::Value, ParseError> {
    let bytes = text.as_bytes();
    let mut search = 0;
    while let Some(rel) = text[search..].find('{') {
        let start = search + rel;
        if let Some(end) = balanced_object_end(bytes, start) {
            let candidate = strip_trailing_commas(&text[start..=end]);
            if let Ok(value) = serde_json::from_str::<serde_json::Value>(&candidate) {
                if value.is_object() {
                    return Ok(value);
                }
            }
            // Not valid JSON; resume the scan inside this span.
            search = start + 1;
        } else {
            search = start + 1;
        }
    }
    Err(ParseError::NoJsonObject)
}

/// Byte index of the `}` closing the object opened at `start`, honoring
/// string literals and escapes; `None` if unbalanced.
fn balanced_object_end(bytes: &[u8], start: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i);
                }
            }
            _ => {}
        }
    }
    None
}

/// Remove `,` immediately preceding `}` or `]` outside string literals.
fn strip_trailing_commas(text: &str) -> String {
    let bytes = text.as_bytes();
    let mut out = String::with_capacity(text.len());
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate() {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            out.push(b as char);
            continue;
        }
        match b {
            b'"' => {
                in_string = true;
                out.push('"');
            }
            b',' => {
                let next = bytes[i + 1..]
                    .iter()
                    .find(|&&c| !(c as char).is_whitespace());
                if !matches!(next, Some(b'}') | Some(b']')) {
                    out.push(',');
                }
            }
            _ => out.push(b as char),
        }
    }
    out
}

fn criterion_score(
    obj: &serde_json::Value,
    key: &str,
) -> Result<CriterionScore, ParseError> {
    let entry = obj.get(key).ok_or_else(|| ParseError::MissingKey(key.to_string()))?;
    // Accept both {"score": n, "explanation": "..."} and a bare number.
    let (raw, explanation) = match entry {
        serde_json::Value::Object(map) => {
            let raw = map
                .get("score")
                .and_then(|v| v.as_f64())
                .ok_or_else(|| ParseError::CriterionNotNumeric {
                    criterion: key.to_string(),
                })?;
            let explanation = map
                .get("explanation")
                .and_then(|v| v.as_str())
                .unwrap_or_default()
                .to_string();
            (raw, explanation)
        }
        serde_json::Value::Number(n) => (
            n.as_f64().ok_or_else(|| ParseError::CriterionNotNumeric {
                criterion: key.to_string(),
            })?,
            String::new(),
        ),
        _ => {
            return Err(ParseError::CriterionNotNumeric {
                criterion: key.to_string(),
            })
        }
    };
    if !(0.0..=10.0).contains(&raw) || !raw.is_finite() {
        return Err(ParseError::CriterionOutOfRange {
            criterion: key.to_string(),
            value: raw,
        });
    }
    if raw.fract() != 0.0 {
        return Err(ParseError::CriterionNotIntegral {
            criterion: key.to_string(),
            value: raw,
        });
    }
    Ok(CriterionScore {
        score: raw as u8,
        explanation,
    })
}

/// Parse the reward judge's four-criterion JSON verdict.
pub fn parse_reward_json(text: &str) -> Result<RewardScores, ParseError> {
    let value = extract_json_object(text)?;
    Ok(RewardScores {
        correctness: criterion_score(&value, "correctness")?,
        completeness: criterion_score(&value, "completeness")?,
        clarity: criterion_score(&value, "clarity")?,
        conciseness: criterion_score(&value, "conciseness")?,
    })
}

/// Parse the pairwise judge's JSON verdict. The `summary` field is optional;
/// an absent summary is accepted as empty.
pub fn parse_pairwise_json(text: &str) -> Result<PairwiseVerdict, ParseError> {
    let value = extract_json_object(text)?;
    // The schema nests scores under "evaluation"; tolerate a flat object too.
    let root = value.get("evaluation").unwrap_or(&value);
    let score_a = pairwise_score(root, "answer_a")?;
    let score_b = pairwise_score(root, "answer_b")?;
    let summary = root
        .get("summary")
        .and_then(|v| v.as_str())
        .unwrap_or_default()
        .to_string();
    Ok(PairwiseVerdict {
        score_a,
        score_b,
        summary,
    })
}

fn pairwise_score(root: &serde_json::Value, key: &str) -> Result<u8, ParseError> {
    let entry = root.get(key).ok_or_else(|| ParseError::MissingKey(key.to_string()))?;
    let raw = match entry {
        serde_json::Value::Object(map) => map.get("score").and_then(|v| v.as_f64()),
        serde_json::Value::Number(n) => n.as_f64(),
        _ => None,
    }
    .ok_or_else(|| ParseError::CriterionNotNumeric {
        criterion: key.to_string(),
    })?;
    if !(0.0..=10.0).contains(&raw) || !raw.is_finite() {
        return Err(ParseError::CriterionOutOfRange {
            criterion: key.to_string(),
            value: raw,
        });
    }
    if raw.fract() != 0.0 {
        return Err(ParseError::CriterionNotIntegral {
            criterion: key.to_string(),
            value: raw,
        });
    }
    Ok(raw as u8)
}

const PROBLEM_LABELS: [&str; 3] = ["problem statement", "solution steps", "final answer"];

/// Split a generated problem into its three labeled sections. Parsing is
/// label-driven and case-insensitive, so reordered sections are accepted.
pub fn parse_generated_problem(text: &str) -> Result<GeneratedProblem, ParseError> {
    let matches = label_positions(text);
    let section = |label: &str| -> Result<String, ParseError> {
        let (_, content_start) = matches
            .iter()
            .find(|(l, _)| l == label)
            .copied()
            .map(|(_, span)| span)
            .ok_or_else(|| ParseError::MissingSection(title_case(label)))?;
        let end = matches
            .iter()
            .map(|(_, (start, _))| *start)
            .filter(|&s| s > content_start.1)
            .min()
            .unwrap_or(text.len());
        Ok(text[content_start.1..end].trim().to_string())
    };

    let statement = section("problem statement")?;
    let solution_steps = section("solution steps")?;
    let answer_text = section("final answer")?;
    let final_answer = parse_single_number(&answer_text)
        .ok_or_else(|| ParseError::AnswerNotNumeric(answer_text.clone()))?;
    Ok(GeneratedProblem {
        statement,
        solution_steps,
        final_answer,
    })
}

/// For each known label, the byte span of its first occurrence:
/// `(label, (label_start, content_start))`.
fn label_positions(text: &str) -> Vec<(String, (usize, usize))> {
    let lower = text.to_lowercase();
    let mut found = Vec::new();
    for label in PROBLEM_LABELS {
        if let Some(pos) = lower.find(label) {
            let mut content = pos + label.len();
            // Skip decoration between the label and its content.
            let bytes = text.as_bytes();
            while content < bytes.len()
                && matches!(bytes[content], b':' | b'*' | b']' | b'-' | b' ' | b'\t')
            {
                content += 1;
            }
            found.push((label.to_string(), (pos, content)));
        }
    }
    found
}

fn title_case(label: &str) -> String {
    label
        .split(' ')
        .map(|w| {
            let mut c = w.chars();
            match c.next() {
                Some(f) => f.to_uppercase().collect::<String>() + c.as_str(),
                None => String::new(),
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Parse a section that must contain exactly one numeric value (scientific
/// notation accepted, thousands separators stripped).
fn parse_single_number(text: &str) -> Option<f64> {
    let cleaned: String = text
        .trim()
        .trim_matches(|c: char| matches!(c, '[' | ']' | '`' | '*' | '$' | '\'' | '"'))
        .trim()
        .trim_end_matches('.')
        .replace(',', "");
    let value: f64 = cleaned.parse().ok()?;
    value.is_finite().then_some(value)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boxed_score_takes_the_last_box() {
        assert_eq!(parse_boxed_score("reasoning... \\box{0.83}"), Ok(0.83));
        assert_eq!(
            parse_boxed_score("\\box{0.50} ...revised... \\box{1.00}"),
            Ok(1.00)
        );
        assert_eq!(parse_boxed_score("final: \\boxed{0.25}"), Ok(0.25));
    }

    #[test]
    fn boxed_score_rejects_bad_inputs() {
        assert_eq!(
            parse_boxed_score("\\box{1.37}"),
            Err(ParseError::ScoreOutOfRange(1.37))
        );
        assert_eq!(parse_boxed_score("no box here"), Err(ParseError::MissingBox));
        assert!(matches!(
            parse_boxed_score("\\box{high}"),
            Err(ParseError::BoxNotNumeric(_))
        ));
    }

    #[test]
    fn boxed_round_trip_identity() {
        for i in 0..=100 {
            let score = f64::from(i) / 100.0;
            let rendered = format_boxed_score(score);
            assert_eq!(parse_boxed_score(&rendered), Ok(score));
        }
    }

    #[test]
    fn reward_json_parses_wrapped_in_prose() {
        let text = r#"Sure, here is my evaluation:
        {"correctness": {"score": 8, "explanation": "solid"},
         "completeness": {"score": 6, "explanation": "gaps"},
         "clarity": {"score": 7, "explanation": "ok"},
         "conciseness": {"score": 9, "explanation": "tight"}}
        Hope this helps!"#;
        let scores = parse_reward_json(text).unwrap();
        assert_eq!(scores.correctness.score, 8);
        assert_eq!(scores.conciseness.score, 9);
        assert_eq!(scores.weighted(&[0.5, 0.2, 0.2, 0.1]), 7.5);
    }

    #[test]
    fn reward_json_tolerates_trailing_comma() {
        let text = r#"{"correctness": {"score": 10, "explanation": ""},
            "completeness": {"score": 10, "explanation": ""},
            "clarity": {"score": 10, "explanation": ""},
            "conciseness": {"score": 10, "explanation": ""},}"#;
        let scores = parse_reward_json(text).unwrap();
        assert_eq!(scores.weighted(&[0.5, 0.2, 0.2, 0.1]), 10.0);
    }

    #[test]
    fn reward_json_missing_key_is_typed() {
        let text = r#"{"correctness": {"score": 10}, "completeness": {"score": 10},
                       "conciseness": {"score": 10}}"#;
        assert_eq!(
            parse_reward_json(text),
            Err(ParseError::MissingKey("clarity".into()))
        );
    }

    #[test]
    fn reward_json_range_checked() {
        let text = r#"{"correctness": {"score": 11}, "completeness": {"score": 10},
                       "clarity": {"score": 10}, "conciseness": {"score": 10}}"#;
        assert!(matches!(
            parse_reward_json(text),
            Err(ParseError::CriterionOutOfRange { ref criterion, value }) if criterion == "correctness" && value == 11.0
        ));
    }

    #[test]
    fn json_extraction_ignores_braces_inside_strings() {
        let text = r#"note {not json} then {"correctness": {"score": 5, "explanation": "uses { and } and \" freely"},
            "completeness": 5, "clarity": 5, "conciseness": 5}"#;
        let scores = parse_reward_json(text).unwrap();
        assert_eq!(scores.correctness.score, 5);
        assert_eq!(scores.completeness.explanation, "");
    }

    #[test]
    fn pairwise_json_parses_and_defaults_summary() {
        let text = r#"{"evaluation": {"answer_a": {"score": 8, "justification": "x"},
                        "answer_b": {"score": 6, "justification": "y"},
                        "summary": "A is better"}}"#;
        let v = parse_pairwise_json(text).unwrap();
        assert_eq!((v.score_a, v.score_b), (8, 6));
        assert_eq!(v.summary, "A is better");

        let text = r#"{"evaluation": {"answer_a": {"score": 8}, "answer_b": {"score": 6}}}"#;
        let v = parse_pairwise_json(text).unwrap();
        assert_eq!(v.summary, "");
    }

    #[test]
    fn pairwise_score_range_checked() {
        let text = r#"{"evaluation": {"answer_a": {"score": 11}, "answer_b": {"score": 6}}}"#;
        assert!(matches!(
            parse_pairwise_json(text),
            Err(ParseError::CriterionOutOfRange { .. })
        ));
    }

    #[test]
    fn generated_problem_parses_in_order() {
        let text = "Problem Statement: A link runs at 2 GHz.\nHow far?\n\
                    Solution Steps: 1. Apply the formula.\n\
                    Final Answer: 42.0";
        let p = parse_generated_problem(text).unwrap();
        assert_eq!(p.final_answer, 42.0);
        assert!(p.statement.contains("2 GHz"));
        assert!(p.solution_steps.starts_with("1."));
    }

    #[test]
    fn generated_problem_sections_parsed_by_label_not_position() {
        let text = "Final Answer: 7\n\
                    Problem Statement: count the steps\n\
                    Solution Steps: just count";
        let p = parse_generated_problem(text).unwrap();
        assert_eq!(p.final_answer, 7.0);
        assert_eq!(p.statement, "count the steps");
        assert_eq!(p.solution_steps, "just count");
    }

    #[test]
    fn generated_problem_rejects_non_numeric_answer() {
        let text = "Problem Statement: x\nSolution Steps: y\nFinal Answer: about 42";
        assert!(matches!(
            parse_generated_problem(text),
            Err(ParseError::AnswerNotNumeric(_))
        ));
    }

    #[test]
    fn generated_problem_missing_section_is_typed() {
        let text = "Problem Statement: x\nFinal Answer: 3";
        assert_eq!(
            parse_generated_problem(text),
            Err(ParseError::MissingSection("Solution Steps".into()))
        );
    }

    #[test]
    fn generated_problem_accepts_scientific_notation() {
        let text = "Problem Statement: x\nSolution Steps: y\nFinal Answer: 4.2e1";
        assert_eq!(parse_generated_problem(text).unwrap().final_answer, 42.0);
    }
}
