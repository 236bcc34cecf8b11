//! Mini-batch SGD under the negation-aware objective, with per-epoch
//! validation and best-epoch model selection.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{self, JudgmentSet};
use crate::laff::{FeatureBundle, LaffModel};
use crate::negation::{bnl_loss, Margins, Triplet};
use crate::numeric::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValidationMetric {
    Map,
    RecallAt(usize),
}

impl fmt::Display for ValidationMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValidationMetric::Map => f.write_str("map"),
            ValidationMetric::RecallAt(k) => write!(f, "recall@{k}"),
        }
    }
}

impl FromStr for ValidationMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        if lower == "map" {
            return Ok(ValidationMetric::Map);
        }
        lower
            .strip_prefix("recall@")
            .and_then(|k| k.parse().ok())
            .filter(|k| *k >= 1)
            .map(ValidationMetric::RecallAt)
            .ok_or_else(|| Error::Config(format!("unknown validation metric `{s}` (use map or recall@K)")))
    }
}

impl TryFrom<String> for ValidationMetric {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ValidationMetric> for String {
    fn from(m: ValidationMetric) -> Self {
        m.to_string()
    }
}

impl Serialize for ValidationMetric {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for ValidationMetric {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Multiplicative per-epoch decay of the learning rate.
    pub lr_decay: f64,
    /// Global gradient-norm clip; `0` disables clipping.
    pub clip_norm: f64,
    pub seed: u64,
    pub margins: Margins,
    pub validation_metric: ValidationMetric,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            learning_rate: 0.5,
            lr_decay: 0.99,
            clip_norm: 5.0,
            seed: 0,
            margins: Margins::default(),
            validation_metric: ValidationMetric::Map,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be ≥ 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be ≥ 2".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be finite and ≥ 0".into()));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay.is_finite()) {
            return Err(Error::Config("lr_decay must be finite and > 0".into()));
        }
        if !(self.clip_norm >= 0.0) {
            return Err(Error::Config("clip_norm must be ≥ 0".into()));
        }
        self.margins.validate()
    }

    pub fn learning_rate_at(&self, epoch_index: usize) -> f64 {
        self.learning_rate * self.lr_decay.powi(epoch_index as i32)
    }
}

/// Index of the largest value among positions accepted by `keep`; ties go
/// to the lowest index.
pub fn argmax_where(values: impl Iterator<Item = f64>, keep: impl Fn(usize) -> bool) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.enumerate() {
        if !keep(i) {
            continue;
        }
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// Most similar non-positive video (row) for a query (column) of a
/// `videos × queries` similarity matrix.
pub fn hardest_negative(sim: &Matrix, query: usize, positive: usize) -> Result<usize> {
    if sim.rows() < 2 {
        return Err(Error::BatchTooSmall(sim.rows()));
    }
    if query >= sim.cols() || positive >= sim.rows() {
        return Err(Error::Dimension {
            context: "hardest-negative index",
            expected: sim.rows().min(sim.cols()),
            got: query.max(positive),
        });
    }
    argmax_where((0..sim.rows()).map(|r| sim.get(r, query)), |r| r != positive)
        .ok_or(Error::BatchTooSmall(sim.rows()))
}

fn epoch_seed(seed: u64, epoch_index: usize) -> u64 {
    seed ^ (epoch_index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Shuffled batches; a trailing singleton is folded into the previous batch.
fn batches(n: usize, batch_size: usize, seed: u64, epoch_index: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed(seed, epoch_index)));
    let mut out: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() < 2) {
        let last = out.pop().unwrap();
        out.last_mut().unwrap().extend(last);
    }
    out
}

/// One SGD pass; returns the triplet-weighted mean batch loss.
pub fn train_epoch(
    model: &mut LaffModel,
    data: &[Triplet],
    cfg: &TrainConfig,
    epoch_index: usize,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if data.len() < 2 {
        return Err(Error::BatchTooSmall(data.len()));
    }
    let lr = cfg.learning_rate_at(epoch_index);
    let mut total = 0.0;
    for (b, idx) in batches(data.len(), cfg.batch_size, cfg.seed, epoch_index)
        .into_iter()
        .enumerate()
    {
        let batch: Vec<Triplet> = idx.iter().map(|&i| data[i].clone()).collect();
        let mut out = bnl_loss(model, &batch, &cfg.margins)?;
        let grad_norm = out.grad.norm();
        if !out.loss.is_finite() || !grad_norm.is_finite() {
            return Err(Error::Diverged {
                epoch: epoch_index,
                batch: b,
            });
        }
        if cfg.clip_norm > 0.0 && grad_norm > cfg.clip_norm {
            out.grad.scale(cfg.clip_norm / grad_norm);
        }
        model.sgd_step(&out.grad, lr)?;
        total += out.loss * batch.len() as f64;
    }
    if !model.params_finite() {
        return Err(Error::NonFinite(format!("parameters after epoch {epoch_index}")));
    }
    Ok(total / data.len() as f64)
}

/// Held-out videos, queries and the judgments pairing them.
#[derive(Debug, Clone)]
pub struct ValidationSet {
    pub videos: Vec<FeatureBundle>,
    pub queries: Vec<FeatureBundle>,
    pub judgments: JudgmentSet,
}

impl ValidationSet {
    /// Mean of the metric over queries with at least one relevant video.
    pub fn score(&self, model: &LaffModel, metric: ValidationMetric) -> Result<f64> {
        if self.videos.is_empty() || self.queries.is_empty() {
            return Err(Error::Empty("validation set"));
        }
        let corpus = eval::embed_corpus(model, &self.videos)?;
        let mut total = 0.0;
        let mut counted = 0usize;
        for q in &self.queries {
            let Some(j) = self.judgments.get(&q.item_id) else {
                continue;
            };
            if j.num_relevant() == 0 {
                continue;
            }
            let ranking = eval::rank_embedded(&model.embed_text(q)?, &corpus, corpus.len())?;
            total += match metric {
                ValidationMetric::Map => eval::average_precision(&ranking, j)?,
                ValidationMetric::RecallAt(k) => eval::recall_at(&ranking, j, k)?,
            };
            counted += 1;
        }
        if counted == 0 {
            return Err(Error::Empty("validation queries with relevant judgments"));
        }
        Ok(total / counted as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch with the highest validation score (earliest on ties).
    pub best_epoch: usize,
    pub best_score: f64,
}

impl TrainReport {
    pub fn from_records(epochs: Vec<EpochRecord>) -> Result<Self> {
        let best = epochs
            .iter()
            .fold(None::<&EpochRecord>, |best, r| match best {
                Some(b) if b.validation_score >= r.validation_score => Some(b),
                _ => Some(r),
            })
            .ok_or(Error::Empty("training report with no epochs"))?;
        Ok(Self {
            best_epoch: best.epoch,
            best_score: best.validation_score,
            epochs,
        })
    }

    /// Lines `epoch<TAB>loss<TAB>val_score`.
    pub fn log_lines(&self) -> impl Iterator<Item = String> + '_ {
        self.epochs
            .iter()
            .map(|r| format!("{}\t{:.6}\t{:.6}", r.epoch, r.train_loss, r.validation_score))
    }
}

/// Trains for `cfg.epochs`, returning the model of the best validation epoch.
pub fn fit(
    model: LaffModel,
    train: &[Triplet],
    validation: &ValidationSet,
    cfg: &TrainConfig,
) -> Result<(LaffModel, TrainReport)> {
    fit_with(model, train, validation, cfg, |_| {})
}

/// [`fit`] with a per-epoch callback.
pub fn fit_with(
    mut model: LaffModel,
    train: &[Triplet],
    validation: &ValidationSet,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(LaffModel, TrainReport)> {
    cfg.validate()?;
    if validation.queries.is_empty() || validation.videos.is_empty() {
        return Err(Error::Empty("validation set"));
    }
    let mut best: Option<(f64, LaffModel)> = None;
    let mut records = Vec::with_capacity(cfg.epochs);
    for e in 0..cfg.epochs {
        let train_loss = train_epoch(&mut model, train, cfg, e)?;
        let validation_score = validation.score(&model, cfg.validation_metric)?;
        let record = EpochRecord {
            epoch: e + 1,
            train_loss,
            validation_score,
        };
        on_epoch(&record);
        records.push(record);
        if best.as_ref().is_none_or(|(s, _)| validation_score > *s) {
            best = Some((validation_score, model.clone()));
        }
    }
    let report = TrainReport::from_records(records)?;
    Ok((best.expect("at least one epoch").1, report))
}

/// Fraction of negated triplets whose gap `s(x⁺,q) − s(x⁺,q⁻)` lies in
/// `[m1, m2]`.
pub fn negation_gap_fraction(model: &LaffModel, data: &[Triplet], m: &Margins) -> Result<f64> {
    let mut inside = 0usize;
    let mut total = 0usize;
    for t in data {
        let Some((_, neg)) = &t.negated else { continue };
        let v = model.embed_video(&t.video)?;
        let gap = v.similarity(&model.embed_text(&t.text)?)? - v.similarity(&model.embed_text(neg)?)?;
        if gap >= m.m1 && gap <= m.m2 {
            inside += 1;
        }
        total += 1;
    }
    if total == 0 {
        return Err(Error::Empty("triplets with negated captions"));
    }
    Ok(inside as f64 / total as f64)
}
