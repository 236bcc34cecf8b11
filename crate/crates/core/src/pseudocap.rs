//! Pseudo-caption selection for unlabeled videos from per-frame captions.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use indexmap::IndexMap;

use crate::error::{Error, Result};

pub const DEFAULT_TOP_K: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Candidate {
    pub frame_index: u32,
    pub text: String,
}

/// Frame captions generated for one video.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateSet {
    pub video_id: String,
    pub candidates: Vec<Candidate>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selected {
    pub text: String,
    pub frame_index: u32,
    pub score: f64,
}

/// Lowercased with runs of whitespace collapsed to one space.
pub fn dedup_key(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Drops duplicate captions (keeping the earliest frame), scores the rest and
/// keeps the top `k` by score, ties by frame index.
pub fn select_pseudo_captions<F>(cands: &CandidateSet, mut score: F, k: usize) -> Result<Vec<Selected>>
where
    F: FnMut(&Candidate) -> Result<f64>,
{
    if cands.candidates.is_empty() {
        return Err(Error::Empty("candidate caption set"));
    }
    if k == 0 {
        return Err(Error::Config("k must be ≥ 1".into()));
    }
    let mut by_frame: Vec<&Candidate> = cands.candidates.iter().collect();
    by_frame.sort_by_key(|c| c.frame_index);
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for c in by_frame {
        if !seen.insert(dedup_key(&c.text)) {
            continue;
        }
        let s = score(c)?;
        if s.is_nan() {
            return Err(Error::NonFinite(format!(
                "score of caption `{}` for video `{}`",
                c.text, cands.video_id
            )));
        }
        out.push(Selected {
            text: c.text.clone(),
            frame_index: c.frame_index,
            score: s,
        });
    }
    out.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.frame_index.cmp(&b.frame_index)));
    out.truncate(k);
    Ok(out)
}

/// Reads `video_id<TAB>frame_index<TAB>caption` lines, grouped by video in
/// first-seen order.
pub fn parse_candidates(path: &Path, text: &str) -> Result<Vec<CandidateSet>> {
    let mut sets: IndexMap<String, Vec<Candidate>> = IndexMap::new();
    for (i, line) in text.lines().enumerate() {
        let mut parts = line.splitn(3, '\t');
        let (Some(video), Some(frame), Some(caption)) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::parse(path, i + 1, "expected `video_id<TAB>frame_index<TAB>caption`"));
        };
        if video.is_empty() || caption.trim().is_empty() {
            return Err(Error::parse(path, i + 1, "empty video id or caption"));
        }
        let frame_index = frame
            .parse()
            .map_err(|_| Error::parse(path, i + 1, format!("bad frame index `{frame}`")))?;
        sets.entry(video.to_string()).or_default().push(Candidate {
            frame_index,
            text: caption.to_string(),
        });
    }
    Ok(sets
        .into_iter()
        .map(|(video_id, candidates)| CandidateSet { video_id, candidates })
        .collect())
}

pub fn read_candidates(path: &Path) -> Result<Vec<CandidateSet>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_candidates(path, &text)
}

/// `video_id<TAB>rank<TAB>score<TAB>caption`, ranks from 1.
pub fn format_selections(selections: &[(String, Vec<Selected>)]) -> String {
    let mut out = String::new();
    for (video, sel) in selections {
        for (r, s) in sel.iter().enumerate() {
            writeln!(out, "{video}\t{}\t{:.6}\t{}", r + 1, s.score, s.text).unwrap();
        }
    }
    out
}
