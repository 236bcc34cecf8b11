use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use indexmap::IndexMap;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::laff::{Embedding, FeatureBundle, LaffModel};

/// `(item_id, score)`
pub type Scored = (String, f64);

/// Per-query ranked lists, in TREC run form.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedRun {
    pub tag: String,
    queries: IndexMap<String, Vec<Scored>>,
}

impl RankedRun {
    pub fn new(tag: impl Into<String>) -> Self {
        Self {
            tag: tag.into(),
            queries: IndexMap::new(),
        }
    }

    /// Adds a query's list. Scores must be finite and non-increasing, items
    /// unique.
    pub fn insert(&mut self, query_id: impl Into<String>, entries: Vec<Scored>) -> Result<()> {
        let query_id = query_id.into();
        validate_entries(&query_id, &entries)?;
        if self.queries.contains_key(&query_id) {
            return Err(Error::Config(format!("query `{query_id}` already in run")));
        }
        self.queries.insert(query_id, entries);
        Ok(())
    }

    pub fn get(&self, query_id: &str) -> Option<&[Scored]> {
        self.queries.get(query_id).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[Scored])> {
        self.queries.iter().map(|(q, e)| (q.as_str(), e.as_slice()))
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.queries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }
}

fn validate_entries(query_id: &str, entries: &[Scored]) -> Result<()> {
    let mut seen = HashSet::with_capacity(entries.len());
    for (i, (item, score)) in entries.iter().enumerate() {
        if !score.is_finite() {
            return Err(Error::NonFinite(format!("score of `{item}` for query `{query_id}`")));
        }
        if i > 0 && *score > entries[i - 1].1 {
            return Err(Error::Config(format!(
                "scores for query `{query_id}` increase at rank {}",
                i + 1
            )));
        }
        if !seen.insert(item.as_str()) {
            return Err(Error::Config(format!("item `{item}` repeated for query `{query_id}`")));
        }
    }
    Ok(())
}

fn sort_desc(results: &mut [Scored]) {
    results.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
}

/// Video embeddings computed once for repeated ranking.
pub fn embed_corpus(model: &LaffModel, corpus: &[FeatureBundle]) -> Result<Vec<(String, Embedding)>> {
    corpus
        .par_iter()
        .map(|v| Ok((v.item_id.clone(), model.embed_video(v)?)))
        .collect()
}

/// Sorted by similarity descending, ties by item id ascending, cut to `top_k`.
pub fn rank_embedded(query: &Embedding, corpus: &[(String, Embedding)], top_k: usize) -> Result<Vec<Scored>> {
    if corpus.is_empty() {
        return Err(Error::Empty("corpus"));
    }
    if top_k == 0 {
        return Err(Error::Config("top_k must be ≥ 1".into()));
    }
    let mut results = corpus
        .par_iter()
        .map(|(id, e)| Ok((id.clone(), e.similarity(query)?)))
        .collect::<Result<Vec<_>>>()?;
    sort_desc(&mut results);
    results.truncate(top_k);
    Ok(results)
}

pub fn rank(model: &LaffModel, query: &FeatureBundle, corpus: &[FeatureBundle], top_k: usize) -> Result<Vec<Scored>> {
    if corpus.is_empty() {
        return Err(Error::Empty("corpus"));
    }
    let embedded = embed_corpus(model, corpus)?;
    rank_embedded(&model.embed_text(query)?, &embedded, top_k)
}

/// Ranks the corpus for every query bundle; query ids come from the bundles.
pub fn search(
    model: &LaffModel,
    queries: &[FeatureBundle],
    corpus: &[FeatureBundle],
    top_k: usize,
    tag: &str,
) -> Result<RankedRun> {
    let embedded = embed_corpus(model, corpus)?;
    let mut run = RankedRun::new(tag);
    for q in queries {
        let ranking = rank_embedded(&model.embed_text(q)?, &embedded, top_k)?;
        run.insert(q.item_id.clone(), ranking)?;
    }
    Ok(run)
}

/// Serializes as `query_id Q0 item_id rank score run_tag` lines, scores with
/// six decimals.
pub fn format_run(run: &RankedRun) -> String {
    let mut out = String::new();
    for (q, entries) in run.iter() {
        for (rank, (item, score)) in entries.iter().enumerate() {
            writeln!(out, "{q} Q0 {item} {} {score:.6} {}", rank + 1, run.tag).unwrap();
        }
    }
    out
}

pub fn write_run(path: &Path, run: &RankedRun) -> Result<()> {
    std::fs::write(path, format_run(run)).map_err(|e| Error::io(path, e))
}

pub fn parse_run(path: &Path, text: &str) -> Result<RankedRun> {
    let mut tag: Option<String> = None;
    let mut queries: IndexMap<String, Vec<(usize, usize, Scored)>> = IndexMap::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let fields: Vec<&str> = line.split(' ').collect();
        if fields.len() != 6 {
            return Err(Error::parse(path, lineno, format!("expected 6 space-separated fields, got {}", fields.len())));
        }
        if fields.iter().any(|f| f.is_empty()) {
            return Err(Error::parse(path, lineno, "empty field"));
        }
        if fields[1] != "Q0" {
            return Err(Error::parse(path, lineno, format!("second field must be Q0, got `{}`", fields[1])));
        }
        let rank: usize = fields[3]
            .parse()
            .ok()
            .filter(|r| *r >= 1)
            .ok_or_else(|| Error::parse(path, lineno, format!("bad rank `{}`", fields[3])))?;
        let score: f64 = fields[4]
            .parse()
            .ok()
            .filter(|s: &f64| s.is_finite())
            .ok_or_else(|| Error::parse(path, lineno, format!("bad score `{}`", fields[4])))?;
        match &tag {
            None => tag = Some(fields[5].to_string()),
            Some(t) if t != fields[5] => {
                return Err(Error::parse(path, lineno, format!("run tag `{}` differs from `{t}`", fields[5])));
            }
            Some(_) => {}
        }
        queries
            .entry(fields[0].to_string())
            .or_default()
            .push((rank, lineno, (fields[2].to_string(), score)));
    }
    let mut run = RankedRun::new(tag.unwrap_or_default());
    for (q, mut entries) in queries {
        entries.sort_by_key(|(rank, _, _)| *rank);
        if let Some(w) = entries.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::parse(path, w[1].1, format!("duplicate rank {} for query `{q}`", w[1].0)));
        }
        let line_of = entries.iter().map(|(_, l, _)| *l).collect::<Vec<_>>();
        let list: Vec<Scored> = entries.into_iter().map(|(_, _, s)| s).collect();
        if let Err(e) = validate_entries(&q, &list) {
            // point at the first offending line
            let mut seen = HashSet::new();
            let bad = list
                .iter()
                .enumerate()
                .position(|(i, (item, s))| !seen.insert(item.as_str()) || (i > 0 && *s > list[i - 1].1))
                .unwrap_or(0);
            return Err(Error::parse(path, line_of[bad], e.to_string()));
        }
        run.insert(q, list)?;
    }
    Ok(run)
}

pub fn read_run(path: &Path) -> Result<RankedRun> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_run(path, &text)
}
