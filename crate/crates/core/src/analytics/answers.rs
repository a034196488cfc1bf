//! Numeric answer extraction and tolerance-based comparison/clustering.

/// Relative closeness with a floor so zero-valued references stay defined:
/// `|a - reference| <= tol * max(|reference|, 1e-9)`.
pub fn rel_close(a: f64, reference: f64, tol: f64) -> bool {
    (a - reference).abs() <= tol * reference.abs().max(1e-9)
}

/// Extract the model's final numeric answer: prefer the last line labeled
/// "final answer", otherwise take the last number in the response.
pub fn extract_final_answer(text: &str) -> Option<f64> {
    for line in text.lines().rev() {
        if line.to_lowercase().contains("final answer") {
            if let Some(v) = last_number(line) {
                return Some(v);
            }
        }
    }
    last_number(text)
}

/// The last number in `text`; thousands separators are stripped, scientific
/// notation accepted.
pub fn last_number(text: &str) -> Option<f64> {
    let mut best: Option<f64> = None;
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_digit()
            || (matches!(c, '-' | '+' | '.')
                && i + 1 < bytes.len()
                && (bytes[i + 1] as char).is_ascii_digit())
        {
            let start = i;
            i += 1;
            let mut seen_dot = c == '.';
            let mut seen_exp = false;
            while i < bytes.len() {
                let d = bytes[i] as char;
                if d.is_ascii_digit() {
                    i += 1;
                } else if d == ',' && i + 1 < bytes.len() && (bytes[i + 1] as char).is_ascii_digit()
                {
                    i += 1;
                } else if d == '.' && !seen_dot && !seen_exp {
                    seen_dot = true;
                    i += 1;
                } else if matches!(d, 'e' | 'E')
                    && !seen_exp
                    && i + 1 < bytes.len()
                    && ((bytes[i + 1] as char).is_ascii_digit()
                        || (matches!(bytes[i + 1], b'+' | b'-')
                            && i + 2 < bytes.len()
                            && (bytes[i + 2] as char).is_ascii_digit()))
                {
                    seen_exp = true;
                    i += 1;
                    if matches!(bytes[i], b'+' | b'-') {
                        i += 1;
                    }
                } else {
                    break;
                }
            }
            let token: String = text[start..i].replace(',', "");
            if let Ok(v) = token.parse::<f64>() {
                if v.is_finite() {
                    best = Some(v);
                }
            }
        } else {
            i += 1;
        }
    }
    best
}

/// A cluster of numerically equal answers (within relative tolerance).
#[derive(Debug, Clone, PartialEq)]
pub struct AnswerCluster {
    /// Smallest member, used as the representative; `None` for an
    /// unparseable sample's singleton cluster.
    pub representative: Option<f64>,
    pub size: usize,
}

/// Cluster extracted answers with relative tolerance `tol`. Parseable values
/// are sorted and grouped greedily against each cluster's smallest member;
/// every unparseable sample forms its own singleton cluster.
pub fn cluster_answers(answers: &[Option<f64>], tol: f64) -> Vec<AnswerCluster> {
    let mut values: Vec<f64> = answers.iter().flatten().copied().collect();
    values.sort_by(f64::total_cmp);
    let mut clusters: Vec<AnswerCluster> = Vec::new();
    for v in values {
        match clusters.last_mut() {
            Some(cluster)
                if cluster
                    .representative
                    .is_some_and(|rep| rel_close(v, rep, tol)) =>
            {
                cluster.size += 1;
            }
            _ => clusters.push(AnswerCluster {
                representative: Some(v),
                size: 1,
            }),
        }
    }
    for _ in answers.iter().filter(|a| a.is_none()) {
        clusters.push(AnswerCluster {
            representative: None,
            size: 1,
        });
    }
    clusters
}

/// The plurality cluster; ties break toward the smallest numeric
/// representative, and numeric clusters beat unparseable ones.
pub fn plurality_cluster(clusters: &[AnswerCluster]) -> Option<&AnswerCluster> {
    clusters.iter().max_by(|a, b| {
        a.size.cmp(&b.size).then_with(|| {
            match (a.representative, b.representative) {
                (Some(x), Some(y)) => y.total_cmp(&x), // smaller value wins
                (Some(_), None) => std::cmp::Ordering::Greater,
                (None, Some(_)) => std::cmp::Ordering::Less,
                (None, None) => std::cmp::Ordering::Equal,
            }
        })
    })
}
