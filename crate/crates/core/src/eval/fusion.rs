use std::collections::BTreeSet;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::eval::run::{RankedRun, Scored};

#[derive(Debug, Clone, PartialEq)]
pub struct FuseOptions {
    /// Min-max normalize each run's scores per query before weighting.
    pub normalize: bool,
    pub tag: String,
}

impl Default for FuseOptions {
    fn default() -> Self {
        Self {
            normalize: true,
            tag: "fused".into(),
        }
    }
}

/// Maps scores to `[0, 1]`. A constant list maps to all ones.
pub fn min_max_normalize(scores: &[f64]) -> Vec<f64> {
    let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    if !(range > 0.0) {
        return vec![1.0; scores.len()];
    }
    scores.iter().map(|s| (s - min) / range).collect()
}

/// Weighted average fusion. Per query and item the fused score is
/// `Σ w_i · s_i`, where `s_i` is the item's (normalized) score in run `i`, or
/// that run's minimum for the query when the item is absent. Runs with zero
/// weight are ignored. Ties are broken by the item's ranks in the
/// contributing runs (in run order), then by item id.
pub fn late_fuse(runs: &[RankedRun], weights: &[f64], opts: &FuseOptions) -> Result<RankedRun> {
    if runs.is_empty() {
        return Err(Error::Empty("no runs to fuse"));
    }
    if weights.len() != runs.len() {
        return Err(Error::Dimension {
            context: "fusion weights",
            expected: runs.len(),
            got: weights.len(),
        });
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || weights.iter().sum::<f64>() <= 0.0 {
        return Err(Error::Config(format!(
            "fusion weights must be non-negative with a positive sum, got {weights:?}"
        )));
    }
    let first: BTreeSet<&str> = runs[0].query_ids().collect();
    for (i, r) in runs.iter().enumerate().skip(1) {
        let ids: BTreeSet<&str> = r.query_ids().collect();
        if ids != first {
            let diff: Vec<&&str> = ids.symmetric_difference(&first).take(5).collect();
            return Err(Error::QueryMismatch(format!(
                "run {i} (`{}`) differs from run 0 on {diff:?}",
                r.tag
            )));
        }
    }
    let active: Vec<(&RankedRun, f64)> = runs
        .iter()
        .zip(weights)
        .filter(|(_, w)| **w > 0.0)
        .map(|(r, w)| (r, *w))
        .collect();

    let mut out = RankedRun::new(opts.tag.clone());
    for q in runs[0].query_ids() {
        // item -> (fused score, rank per active run)
        let mut items: IndexMap<&str, (f64, Vec<usize>)> = IndexMap::new();
        let mut per_run = Vec::with_capacity(active.len());
        for (run, _) in &active {
            let entries = run.get(q).unwrap_or_default();
            let raw: Vec<f64> = entries.iter().map(|(_, s)| *s).collect();
            let scores = if opts.normalize { min_max_normalize(&raw) } else { raw };
            let floor = scores.iter().copied().fold(f64::INFINITY, f64::min);
            let floor = if floor.is_finite() { floor } else { 0.0 };
            for (id, _) in entries {
                items
                    .entry(id.as_str())
                    .or_insert_with(|| (0.0, vec![usize::MAX; active.len()]));
            }
            per_run.push((entries, scores, floor));
        }
        for (r, ((entries, scores, floor), (_, w))) in per_run.iter().zip(&active).enumerate() {
            let lookup: IndexMap<&str, (usize, f64)> = entries
                .iter()
                .zip(scores)
                .enumerate()
                .map(|(rank, ((id, _), s))| (id.as_str(), (rank, *s)))
                .collect();
            for (id, (score, ranks)) in items.iter_mut() {
                match lookup.get(id) {
                    Some((rank, s)) => {
                        *score += w * s;
                        ranks[r] = *rank;
                    }
                    None => *score += w * floor,
                }
            }
        }
        let mut fused: Vec<(&str, f64, Vec<usize>)> =
            items.into_iter().map(|(id, (s, r))| (id, s, r)).collect();
        fused.sort_by(|a, b| {
            b.1.total_cmp(&a.1)
                .then_with(|| a.2.cmp(&b.2))
                .then_with(|| a.0.cmp(b.0))
        });
        let list: Vec<Scored> = fused.into_iter().map(|(id, s, _)| (id.to_string(), s)).collect();
        out.insert(q, list)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(tag: &str, q: &[(&str, &[(&str, f64)])]) -> RankedRun {
        let mut r = RankedRun::new(tag);
        for (qid, entries) in q {
            r.insert(*qid, entries.iter().map(|(i, s)| (i.to_string(), *s)).collect()).unwrap();
        }
        r
    }

    fn order(r: &RankedRun, q: &str) -> Vec<String> {
        r.get(q).unwrap().iter().map(|(i, _)| i.clone()).collect()
    }

    #[test]
    fn identical_runs_keep_order() {
        let a = run("a", &[("q", &[("x", 3.0), ("y", 3.0), ("z", 1.0)])]);
        let f = late_fuse(&[a.clone(), a.clone()], &[0.5, 0.5], &FuseOptions::default()).unwrap();
        assert_eq!(order(&f, "q"), order(&a, "q"));
        let f = late_fuse(&[a.clone()], &[1.0], &FuseOptions::default()).unwrap();
        assert_eq!(order(&f, "q"), order(&a, "q"));
    }

    #[test]
    fn zero_weight_run_is_ignored() {
        let a = run("a", &[("q", &[("x", 0.9), ("y", 0.5), ("z", 0.1)])]);
        let b = run("b", &[("q", &[("w", 9.0), ("z", 5.0), ("x", 1.0)])]);
        let f = late_fuse(&[a.clone(), b], &[1.0, 0.0], &FuseOptions::default()).unwrap();
        assert_eq!(order(&f, "q"), order(&a, "q"));
    }

    #[test]
    fn hand_computed_fusion() {
        // a normalized: x 1, y 0.5, z 0 ; b normalized: z 1, y 0.75, x 0
        let a = run("a", &[("q", &[("x", 0.9), ("y", 0.5), ("z", 0.1)])]);
        let b = run("b", &[("q", &[("z", 8.0), ("y", 7.0), ("x", 4.0)])]);
        let f = late_fuse(&[a, b], &[0.5, 0.5], &FuseOptions::default()).unwrap();
        let got = f.get("q").unwrap();
        assert_eq!(order(&f, "q"), vec!["y", "x", "z"]);
        assert!((got[0].1 - 0.625).abs() < 1e-12);
        assert!((got[1].1 - 0.5).abs() < 1e-12);
        assert!((got[2].1 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn missing_items_take_run_minimum() {
        let a = run("a", &[("q", &[("x", 2.0), ("y", 1.0)])]);
        let b = run("b", &[("q", &[("z", 5.0), ("x", 3.0)])]);
        let opts = FuseOptions { normalize: false, ..FuseOptions::default() };
        let f = late_fuse(&[a, b], &[1.0, 1.0], &opts).unwrap();
        let got: Vec<(String, f64)> = f.get("q").unwrap().to_vec();
        assert_eq!(got, vec![("z".into(), 6.0), ("x".into(), 5.0), ("y".into(), 4.0)]);
    }

    #[test]
    fn rejects_bad_inputs() {
        let a = run("a", &[("q1", &[("x", 1.0)])]);
        let b = run("b", &[("q2", &[("x", 1.0)])]);
        assert!(matches!(
            late_fuse(&[a.clone(), b], &[1.0, 1.0], &FuseOptions::default()),
            Err(Error::QueryMismatch(_))
        ));
        assert!(late_fuse(&[a.clone()], &[0.0], &FuseOptions::default()).is_err());
        assert!(late_fuse(&[a.clone()], &[-1.0], &FuseOptions::default()).is_err());
        assert!(late_fuse(&[a], &[1.0, 1.0], &FuseOptions::default()).is_err());
    }
}
