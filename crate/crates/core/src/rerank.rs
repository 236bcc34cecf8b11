//! Frame-level reranking of a top-ranked list: max-pooled frame/query
//! cosine fused linearly with the (normalized) original score.

use std::collections::HashMap;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::eval::{min_max_normalize, Scored};
use crate::numeric::cosine_sim;

/// Default depth of the list handed to the reranker.
pub const DEFAULT_DEPTH: usize = 5000;

/// Per-frame vectors of one video, all in a single feature space.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameFeatures {
    pub item_id: String,
    frames: Vec<Vec<f64>>,
}

impl FrameFeatures {
    pub fn new(item_id: impl Into<String>, frames: Vec<Vec<f64>>) -> Result<Self> {
        let item_id = item_id.into();
        let first = frames.first().ok_or(Error::Empty("video with no frames"))?;
        let dim = first.len();
        if let Some(bad) = frames.iter().find(|f| f.len() != dim) {
            return Err(Error::Dimension {
                context: "frame vector",
                expected: dim,
                got: bad.len(),
            });
        }
        Ok(Self { item_id, frames })
    }

    pub fn frames(&self) -> &[Vec<f64>] {
        &self.frames
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn dim(&self) -> usize {
        self.frames[0].len()
    }
}

/// Groups records with ids `item_id#frame_index` into per-item frame lists
/// ordered by frame index.
pub fn group_frames<'a>(records: impl IntoIterator<Item = (&'a str, &'a [f64])>) -> Result<IndexMap<String, FrameFeatures>> {
    let mut grouped: IndexMap<String, Vec<(u64, Vec<f64>)>> = IndexMap::new();
    for (id, v) in records {
        let (item, idx) = id
            .rsplit_once('#')
            .and_then(|(item, idx)| Some((item, idx.parse::<u64>().ok()?)))
            .ok_or_else(|| Error::Config(format!("frame id `{id}` is not of the form item#index")))?;
        grouped.entry(item.to_string()).or_default().push((idx, v.to_vec()));
    }
    grouped
        .into_iter()
        .map(|(item, mut frames)| {
            frames.sort_by_key(|(i, _)| *i);
            if frames.windows(2).any(|w| w[0].0 == w[1].0) {
                return Err(Error::Config(format!("duplicate frame index for `{item}`")));
            }
            let f = FrameFeatures::new(item.clone(), frames.into_iter().map(|(_, v)| v).collect())?;
            Ok((item, f))
        })
        .collect()
}

/// Max over frames of `cos(frame, query)`.
pub fn frame_query_score(frames: &FrameFeatures, query: &[f64]) -> Result<f64> {
    let mut best = f64::NEG_INFINITY;
    for f in &frames.frames {
        let s = cosine_sim(f, query)?;
        if s > best {
            best = s;
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RerankWeights {
    pub new: f64,
    pub old: f64,
    /// Min-max normalize the original scores before fusion.
    pub normalize: bool,
}

impl Default for RerankWeights {
    fn default() -> Self {
        Self {
            new: 0.6,
            old: 0.4,
            normalize: true,
        }
    }
}

/// Rescores `list` as `new · frame_query_score + old · norm(original)` and
/// re-sorts descending; equal scores keep their input order.
pub fn rerank(
    list: &[Scored],
    frames: &HashMap<String, FrameFeatures>,
    query: &[f64],
    w: &RerankWeights,
) -> Result<Vec<Scored>> {
    if !(w.new >= 0.0 && w.old >= 0.0 && w.new + w.old > 0.0) || !(w.new.is_finite() && w.old.is_finite()) {
        return Err(Error::Config(format!(
            "rerank weights must be non-negative with a positive sum, got ({}, {})",
            w.new, w.old
        )));
    }
    let raw: Vec<f64> = list.iter().map(|(_, s)| *s).collect();
    let old = if w.normalize { min_max_normalize(&raw) } else { raw };
    let mut out = list
        .iter()
        .zip(old)
        .map(|((id, _), o)| {
            let f = frames.get(id).ok_or_else(|| Error::MissingFrames(id.clone()))?;
            if f.dim() != query.len() {
                return Err(Error::Dimension {
                    context: "rerank query vector",
                    expected: f.dim(),
                    got: query.len(),
                });
            }
            Ok((id.clone(), w.new * frame_query_score(f, query)? + w.old * o))
        })
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| b.1.total_cmp(&a.1));
    Ok(out)
}
