//! Document canonicalization: casing/whitespace/numeric normalization,
//! SI unit conversion for parameter tables, and formula canonicalization.

use serde::{Deserialize, Serialize};

use super::formula;

/// A candidate or benchmark item before canonicalization.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RawDoc {
    pub id: String,
    /// Question plus prose solution.
    pub text: String,
    /// Optional parameter table, values as written (e.g. `"30 dBm"`).
    #[serde(default)]
    pub params: Vec<(String, String)>,
    /// Optional governing formula in infix or canonical prefix notation.
    #[serde(default)]
    pub formula: Option<String>,
}

/// The stable, comparison-ready form of a document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanonicalDoc {
    pub doc_id: String,
    /// Case-folded, punctuation-stripped, single-spaced text.
    pub norm_text: String,
    /// Stable prefix-notation formula, absent when none parsed.
    pub canonical_formula: Option<String>,
    /// Parameters converted to SI units, sorted by key.
    pub si_params: Vec<(String, f64)>,
}

/// Canonicalize a raw document. A formula that fails to parse keeps the doc
/// alive with `canonical_formula` absent; the error is reported alongside so
/// the stage can log it.
pub fn canonicalize(raw: &RawDoc) -> (CanonicalDoc, Vec<String>) {
    let mut issues = Vec::new();
    let canonical_formula = match &raw.formula {
        Some(src) if !src.trim().is_empty() => match formula::canonical_formula(src) {
            Ok(canon) => Some(canon),
            Err(err) => {
                issues.push(format!("doc {}: formula dropped: {err}", raw.id));
                None
            }
        },
        _ => None,
    };
    let mut si_params: Vec<(String, f64)> = raw
        .params
        .iter()
        .filter_map(|(key, value)| match parse_quantity(value) {
            Some(si) => Some((key.trim().to_lowercase(), si)),
            None => {
                issues.push(format!("doc {}: unparseable parameter `{key}={value}`", raw.id));
                None
            }
        })
        .collect();
    si_params.sort_by(|a, b| a.0.cmp(&b.0));
    si_params.dedup_by(|a, b| a.0 == b.0);
    (
        CanonicalDoc {
            doc_id: raw.id.clone(),
            norm_text: normalize_text(&raw.text),
            canonical_formula,
            si_params,
        },
        issues,
    )
}

/// Rename the formula's variables to canonical slots; identity for docs
/// without a formula.
pub fn slot_abstract_doc(doc: &CanonicalDoc) -> CanonicalDoc {
    let canonical_formula = doc
        .canonical_formula
        .as_deref()
        .and_then(|f| formula::slot_abstract(f).ok());
    CanonicalDoc {
        canonical_formula: canonical_formula.or_else(|| doc.canonical_formula.clone()),
        ..doc.clone()
    }
}

/// Case-fold, strip punctuation, and collapse whitespace. Decimal points and
/// exponent markers inside numbers survive so numeric tokens stay intact;
/// thousands separators are removed.
pub fn normalize_text(text: &str) -> String {
    let chars: Vec<char> = text.chars().collect();
    let mut out = String::with_capacity(text.len());
    let mut last_space = true;
    for (i, &c) in chars.iter().enumerate() {
        let keep = if c.is_alphanumeric() {
            true
        } else if c == '.' {
            // keep only between digits: "3.5" stays, sentence periods go
            i > 0
                && i + 1 < chars.len()
                && chars[i - 1].is_ascii_digit()
                && chars[i + 1].is_ascii_digit()
        } else if c == ',' {
            // thousands separator: drop without inserting a break
            if i > 0
                && i + 1 < chars.len()
                && chars[i - 1].is_ascii_digit()
                && chars[i + 1].is_ascii_digit()
            {
                continue;
            }
            false
        } else {
            false
        };
        if keep {
            for lc in c.to_lowercase() {
                out.push(lc);
            }
            last_space = false;
        } else if !last_space {
            out.push(' ');
            last_space = true;
        }
    }
    while out.ends_with(' ') {
        out.pop();
    }
    out
}

/// Parse `"<number> [unit]"` into an SI value. Decibel units convert through
/// the log rule (`x dBm` is `10^((x-30)/10)` W); linear units scale.
/// A bare number passes through; `None` if the value is not numeric or the
/// unit is unknown.
pub fn parse_quantity(s: &str) -> Option<f64> {
    let trimmed = s.trim();
    let split = trimmed
        .find(|c: char| !(c.is_ascii_digit() || matches!(c, '-' | '+' | '.' | 'e' | 'E')))
        .unwrap_or(trimmed.len());
    // Walk back if the numeric prefix ends in a dangling exponent marker.
    let (mut num_part, mut unit_part) = trimmed.split_at(split);
    while num_part.ends_with(['e', 'E', '+', '-', '.']) && !num_part.is_empty() {
        let cut = num_part.len() - 1;
        unit_part = &trimmed[cut..];
        num_part = &trimmed[..cut];
    }
    let value: f64 = num_part.trim().replace(',', "").parse().ok()?;
    let unit = unit_part.trim().to_lowercase();
    if unit.is_empty() {
        return Some(value);
    }
    match unit.as_str() {
        // decibel family
        "dbm" => Some(10f64.powf((value - 30.0) / 10.0)),
        "dbw" => Some(10f64.powf(value / 10.0)),
        "db" | "dbi" | "dbd" => Some(10f64.powf(value / 10.0)),
        _ => linear_scale(&unit).map(|scale| value * scale),
    }
}

fn linear_scale(unit: &str) -> Option<f64> {
    // Case-folded units; in telecom text "mw" is milliwatt by convention.
    let scale = match unit {
        "w" | "hz" | "m" | "s" | "j" | "v" | "a" | "bps" | "bit/s" | "ohm" | "k" => 1.0,
        "mw" => 1e-3,
        "uw" | "µw" => 1e-6,
        "kw" => 1e3,
        "khz" => 1e3,
        "mhz" => 1e6,
        "ghz" => 1e9,
        "km" => 1e3,
        "cm" => 1e-2,
        "mm" => 1e-3,
        "ms" => 1e-3,
        "us" | "µs" => 1e-6,
        "ns" => 1e-9,
        "kbps" | "kbit/s" => 1e3,
        "mbps" | "mbit/s" => 1e6,
        "gbps" | "gbit/s" => 1e9,
        "kj" => 1e3,
        "mv" => 1e-3,
        "kv" => 1e3,
        "ma" => 1e-3,
        "%" | "percent" => 1e-2,
        _ => return None,
    };
    Some(scale)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dbm_converts_to_watts() {
        assert!((parse_quantity("30 dBm").unwrap() - 1.0).abs() < 1e-12);
        assert!((parse_quantity("0 dBm").unwrap() - 1e-3).abs() < 1e-15);
        assert!((parse_quantity("20 dBW").unwrap() - 100.0).abs() < 1e-9);
        assert!((parse_quantity("3 dB").unwrap() - 1.9952623149688795).abs() < 1e-12);
    }

    #[test]
    fn linear_units_scale() {
        assert_eq!(parse_quantity("2 GHz"), Some(2e9));
        assert_eq!(parse_quantity("5 km"), Some(5e3));
        assert_eq!(parse_quantity("250 mW"), Some(0.25));
        assert_eq!(parse_quantity("42"), Some(42.0));
        assert_eq!(parse_quantity("1e3 Hz"), Some(1e3));
        assert_eq!(parse_quantity("12 furlongs"), None);
    }

    #[test]
    fn text_normalization_is_idempotent() {
        let cases = [
            "The TX power is 30 dBm, i.e. 1,000 mW!",
            "  Multiple   spaces\tand\nnewlines  ",
            "SNR = 10*log10(P/N) [dB]",
        ];
        for case in cases {
            let once = normalize_text(case);
            let twice = normalize_text(&once);
            assert_eq!(once, twice, "case `{case}`");
            assert!(!once.contains("  "));
            assert_eq!(once, once.to_lowercase());
        }
    }

    #[test]
    fn text_normalization_keeps_numbers_whole() {
        assert_eq!(normalize_text("power 3.5 W"), "power 3.5 w");
        assert_eq!(normalize_text("1,000 users"), "1000 users");
        assert_eq!(normalize_text("End. Start"), "end start");
    }

    #[test]
    fn canonicalize_populates_all_views() {
        let raw = RawDoc {
            id: "d1".into(),
            text: "A base station transmits at 30 dBm.".into(),
            params: vec![("tx_power".into(), "30 dBm".into())],
            formula: Some("P_rx = ".into()),
        };
        let (doc, issues) = canonicalize(&raw);
        assert_eq!(doc.norm_text, "a base station transmits at 30 dbm");
        assert_eq!(doc.si_params, vec![("tx_power".into(), 1.0)]);
        // Broken formula keeps the doc, drops the view, logs the issue.
        assert!(doc.canonical_formula.is_none());
        assert_eq!(issues.len(), 1);
    }

    #[test]
    fn canonicalize_is_idempotent_at_doc_level() {
        let raw = RawDoc {
            id: "d2".into(),
            text: "Compute SNR, given P = 2 W and N = 0.5 W.".into(),
            params: vec![
                ("noise".into(), "0.5 W".into()),
                ("power".into(), "2 W".into()),
            ],
            formula: Some("10*log10(p/n)".into()),
        };
        let (once, _) = canonicalize(&raw);
        let again = RawDoc {
            id: once.doc_id.clone(),
            text: once.norm_text.clone(),
            params: once
                .si_params
                .iter()
                .map(|(k, v)| (k.clone(), v.to_string()))
                .collect(),
            formula: once.canonical_formula.clone(),
        };
        let (twice, issues) = canonicalize(&again);
        assert_eq!(once, twice);
        assert!(issues.is_empty());
    }

    #[test]
    fn slot_abstract_doc_is_identity_without_formula() {
        let (doc, _) = canonicalize(&RawDoc {
            id: "d3".into(),
            text: "plain text".into(),
            params: vec![],
            formula: None,
        });
        assert_eq!(slot_abstract_doc(&doc), doc);
    }
}
