use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::eval::qrels::{JudgmentSet, QueryJudgments};
use crate::eval::run::{RankedRun, Scored};

/// Smoothing constant of the inferred-AP precision estimate.
pub const INFAP_EPSILON: f64 = 1e-5;

/// Items after their first occurrence are ignored.
fn distinct(ranking: &[Scored]) -> impl Iterator<Item = &str> {
    let mut seen = HashSet::new();
    ranking
        .iter()
        .map(|(id, _)| id.as_str())
        .filter(move |id| seen.insert(*id))
}

/// `(1/R) Σ_{relevant hits at rank k} hits_through_k / k`, with `R` the number
/// of relevant judged items (retrieved or not).
pub fn average_precision(ranking: &[Scored], judgments: &QueryJudgments) -> Result<f64> {
    let r = judgments.num_relevant();
    if r == 0 {
        return Err(Error::UndefinedMetric(judgments.query_id.clone()));
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, id) in distinct(ranking).enumerate() {
        if judgments.is_relevant(id) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Ok(sum / r as f64)
}

/// Inferred AP under a uniformly sampled judgment pool.
///
/// For each judged-relevant item retrieved at rank `k`, the expected precision
/// at `k` is estimated as
/// `1/k + ((k−1)/k) · (d/(k−1)) · ((r+ε)/(r+n+2ε))`, where `d` counts judged
/// items above `k` and `r`/`n` the relevant/non-relevant ones among them
/// (`1` at `k = 1`). The sum is divided by the judged-relevant count.
pub fn inf_ap(ranking: &[Scored], judgments: &QueryJudgments) -> Result<f64> {
    let r_s = judgments.num_relevant();
    if r_s == 0 {
        return Err(Error::UndefinedMetric(judgments.query_id.clone()));
    }
    let (mut rel_above, mut nonrel_above) = (0usize, 0usize);
    let mut sum = 0.0;
    for (i, id) in distinct(ranking).enumerate() {
        let k = (i + 1) as f64;
        let judged = judgments.judgment(id);
        if judged == Some(true) {
            sum += if i == 0 {
                1.0
            } else {
                let d = (rel_above + nonrel_above) as f64;
                let r = rel_above as f64;
                let n = nonrel_above as f64;
                1.0 / k
                    + ((k - 1.0) / k)
                        * (d / (k - 1.0))
                        * ((r + INFAP_EPSILON) / (r + n + 2.0 * INFAP_EPSILON))
            };
        }
        match judged {
            Some(true) => rel_above += 1,
            Some(false) => nonrel_above += 1,
            None => {}
        }
    }
    Ok(sum / r_s as f64)
}

/// Fraction of relevant items found in the top `k`.
pub fn recall_at(ranking: &[Scored], judgments: &QueryJudgments, k: usize) -> Result<f64> {
    let r = judgments.num_relevant();
    if r == 0 {
        return Err(Error::UndefinedMetric(judgments.query_id.clone()));
    }
    let found = distinct(ranking)
        .take(k)
        .filter(|id| judgments.is_relevant(id))
        .count();
    Ok(found as f64 / r as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryScores {
    pub query_id: String,
    pub ap: f64,
    pub inf_ap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub per_query: Vec<QueryScores>,
    pub map: f64,
    pub mean_inf_ap: f64,
    /// Run queries without judgments or without relevant items.
    pub skipped: Vec<String>,
}

/// Scores every run query that has at least one relevant judgment.
pub fn evaluate_run(run: &RankedRun, judgments: &JudgmentSet) -> Result<EvalSummary> {
    let mut per_query = Vec::new();
    let mut skipped = Vec::new();
    for (q, entries) in run.iter() {
        match judgments.get(q) {
            Some(j) if j.num_relevant() > 0 => per_query.push(QueryScores {
                query_id: q.to_string(),
                ap: average_precision(entries, j)?,
                inf_ap: inf_ap(entries, j)?,
            }),
            _ => skipped.push(q.to_string()),
        }
    }
    if per_query.is_empty() {
        return Err(Error::Empty("run queries with relevant judgments"));
    }
    let n = per_query.len() as f64;
    Ok(EvalSummary {
        map: per_query.iter().map(|s| s.ap).sum::<f64>() / n,
        mean_inf_ap: per_query.iter().map(|s| s.inf_ap).sum::<f64>() / n,
        per_query,
        skipped,
    })
}
