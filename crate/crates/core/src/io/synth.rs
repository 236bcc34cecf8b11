//! Synthetic retrieval data with a known latent structure.
//!
//! Each video draws a latent `z ~ N(0, I)`. Every feature space `s` has a
//! fixed random projection `P_s`; video features and the features of each of
//! the video's captions are `P_s z + σ_s ε` with independent noise. Negated
//! captions add a fixed per-space direction `n_s` to their text features.

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use indexmap::IndexMap;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::eval::{average_precision, JudgmentSet, Scored};
use crate::io::manifest::Dataset;
use crate::laff::{FeatureBundle, Modality};
use crate::negation::{negate_caption, Caption};
use crate::numeric::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpace {
    pub name: String,
    pub dim: usize,
    pub noise: f64,
}

impl SynthSpace {
    pub fn new(name: impl Into<String>, dim: usize, noise: f64) -> Self {
        Self {
            name: name.into(),
            dim,
            noise,
        }
    }
}

/// `name:dim:noise`
impl FromStr for SynthSpace {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("space `{s}` is not `name:dim:noise`"));
        let mut it = s.split(':');
        let (Some(name), Some(dim), Some(noise), None) = (it.next(), it.next(), it.next(), it.next()) else {
            return Err(bad());
        };
        if name.is_empty() {
            return Err(bad());
        }
        Ok(Self::new(
            name,
            dim.parse().map_err(|_| bad())?,
            noise.parse().map_err(|_| bad())?,
        ))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_videos: usize,
    pub captions_per_video: usize,
    pub latent_dim: usize,
    pub video_spaces: Vec<SynthSpace>,
    pub text_spaces: Vec<SynthSpace>,
    /// Probability that a caption also gets a negated form.
    pub negate_fraction: f64,
    /// Scale of the negation direction relative to unit-variance features.
    pub negation_strength: f64,
    /// Share of videos held out for validation.
    pub val_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_videos: 200,
            captions_per_video: 1,
            latent_dim: 8,
            video_spaces: vec![SynthSpace::new("vis_a", 32, 0.05), SynthSpace::new("vis_b", 16, 0.05)],
            text_spaces: vec![SynthSpace::new("txt_a", 24, 0.05), SynthSpace::new("txt_b", 16, 0.05)],
            negate_fraction: 0.0,
            negation_strength: 1.0,
            val_fraction: 0.2,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim < 2 {
            return Err(Error::Config("latent_dim must be ≥ 2".into()));
        }
        if self.captions_per_video == 0 {
            return Err(Error::Config("captions_per_video must be ≥ 1".into()));
        }
        let n_val = self.n_val();
        if n_val == 0 || self.n_videos < n_val + 2 {
            return Err(Error::Config(format!(
                "{} videos with val_fraction {} leaves no usable train/validation split",
                self.n_videos, self.val_fraction
            )));
        }
        for (label, spaces) in [("video", &self.video_spaces), ("text", &self.text_spaces)] {
            if spaces.is_empty() {
                return Err(Error::Config(format!("no {label} spaces")));
            }
            for (i, s) in spaces.iter().enumerate() {
                if s.dim < self.latent_dim {
                    return Err(Error::Config(format!(
                        "space `{}` has dim {} < latent_dim {}",
                        s.name, s.dim, self.latent_dim
                    )));
                }
                if !(s.noise >= 0.0 && s.noise.is_finite()) {
                    return Err(Error::Config(format!("space `{}` needs finite noise ≥ 0", s.name)));
                }
                if spaces[..i].iter().any(|o| o.name == s.name) {
                    return Err(Error::Config(format!("{label} space `{}` listed twice", s.name)));
                }
            }
        }
        for (k, v) in [
            ("negate_fraction", self.negate_fraction),
            ("val_fraction", self.val_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{k} must lie in [0, 1]")));
            }
        }
        if !self.negation_strength.is_finite() {
            return Err(Error::Config("negation_strength must be finite".into()));
        }
        Ok(())
    }

    fn n_val(&self) -> usize {
        (self.n_videos as f64 * self.val_fraction).round() as usize
    }
}

/// A generated dataset together with the ground truth behind it.
#[derive(Debug, Clone)]
pub struct SynthData {
    pub config: SynthConfig,
    /// Per video, in generation order (train videos first).
    pub latents: Vec<Vec<f64>>,
    pub projections: IndexMap<String, Matrix>,
    pub train: Dataset,
    pub val: Dataset,
}

const NOUNS: [&str; 8] = ["man", "woman", "dog", "cat", "child", "horse", "bird", "car"];
const ADJS: [&str; 8] = ["red", "small", "old", "young", "happy", "tall", "dark", "white"];
const VERBS: [&str; 8] = [
    "running", "jumping", "eating", "dancing", "singing", "swimming", "driving", "cooking",
];
const PLACES: [&str; 8] = [
    "outside",
    "at home",
    "in a park",
    "on a street",
    "near the water",
    "in a kitchen",
    "on a stage",
    "in the snow",
];

fn bucket(x: f64) -> usize {
    (x * 1.5 + 4.0).floor().clamp(0.0, 7.0) as usize
}

/// Templated caption whose words are read off the latent.
fn caption_text(z: &[f64], j: usize) -> String {
    let w = |k: usize| bucket(z[(k + j) % z.len()]);
    let (noun, adj, verb, place) = (NOUNS[w(0)], ADJS[w(1)], VERBS[w(2)], PLACES[w(3)]);
    match j % 4 {
        0 => format!("a {adj} {noun} is {verb} {place}"),
        1 => format!("two people are {verb} with a {noun}"),
        2 => format!("someone is {verb} next to a {adj} {noun}"),
        _ => format!("the {noun} was {verb} {place}"),
    }
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Rounded through f32 so that the in-memory data equals what a feature file
/// round trip yields.
fn observe(p: &Matrix, z: &[f64], offset: Option<&[f64]>, noise: f64, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let mut v = p.matvec(z)?;
    if let Some(o) = offset {
        for (x, d) in v.iter_mut().zip(o) {
            *x += d;
        }
    }
    for x in v.iter_mut() {
        *x += noise * rng.sample::<f64, _>(StandardNormal);
        *x = *x as f32 as f64;
    }
    Ok(v)
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let scale = 1.0 / (cfg.latent_dim as f64).sqrt();
    let mut projections = IndexMap::new();
    for s in cfg.video_spaces.iter().chain(&cfg.text_spaces) {
        let data = gaussian(&mut rng, s.dim * cfg.latent_dim, scale);
        projections.insert(s.name.clone(), Matrix::from_vec(s.dim, cfg.latent_dim, data)?);
    }
    let directions: Vec<Vec<f64>> = cfg
        .text_spaces
        .iter()
        .map(|s| gaussian(&mut rng, s.dim, cfg.negation_strength))
        .collect();
    let latents: Vec<Vec<f64>> = (0..cfg.n_videos)
        .map(|_| gaussian(&mut rng, cfg.latent_dim, 1.0))
        .collect();

    let n_train = cfg.n_videos - cfg.n_val();
    let mut splits = [Dataset::default(), Dataset::default()];
    for (i, z) in latents.iter().enumerate() {
        let ds = &mut splits[usize::from(i >= n_train)];
        let vid = format!("v{i:04}");
        let mut video = FeatureBundle::new(vid.clone());
        for s in &cfg.video_spaces {
            video.insert(s.name.clone(), observe(&projections[&s.name], z, None, s.noise, &mut rng)?)?;
        }
        ds.videos.push(Arc::new(video));
        for j in 0..cfg.captions_per_video {
            let cid = format!("{vid}_c{j}");
            let text = caption_text(z, j);
            let mut feats = FeatureBundle::new(cid.clone());
            for s in &cfg.text_spaces {
                feats.insert(s.name.clone(), observe(&projections[&s.name], z, None, s.noise, &mut rng)?)?;
            }
            let draw: f64 = rng.random();
            let neg_seed: u64 = rng.random();
            if draw < cfg.negate_fraction {
                let neg = negate_caption(&Caption::from_text(cid.clone(), &text), neg_seed)?;
                let mut nf = FeatureBundle::new(cid.clone());
                for (s, n) in cfg.text_spaces.iter().zip(&directions) {
                    nf.insert(
                        s.name.clone(),
                        observe(&projections[&s.name], z, Some(n), s.noise, &mut rng)?,
                    )?;
                }
                ds.negated.insert(cid.clone(), (neg.caption.text(), nf));
            }
            ds.captions.insert(cid.clone(), text);
            ds.texts.insert(cid.clone(), feats);
            ds.pairs.push((vid.clone(), cid));
        }
    }
    let [train, mut val] = splits;
    let mut qrels = JudgmentSet::new(true);
    for (v, c) in &val.pairs {
        qrels.insert(c, v.clone(), 1)?;
    }
    val.qrels = Some(qrels);
    Ok(SynthData {
        config: cfg.clone(),
        latents,
        projections,
        train,
        val,
    })
}

impl SynthData {
    /// Writes `train/` and `val/` under `dir`; returns both manifest paths.
    pub fn write(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        Ok((self.train.write(&dir.join("train"))?, self.val.write(&dir.join("val"))?))
    }

    /// mAP on the validation split of ranking videos by the distance between
    /// least-squares latent estimates of query and video.
    pub fn nearest_latent_oracle(&self) -> Result<f64> {
        let video = LatentSolver::new(self, Modality::Video)?;
        let text = LatentSolver::new(self, Modality::Text)?;
        let videos: Vec<(String, DVector<f64>)> = self
            .val
            .videos
            .iter()
            .map(|v| Ok((v.item_id.clone(), video.solve(v)?)))
            .collect::<Result<_>>()?;
        let val = self.val.validation_set()?;
        let mut total = 0.0;
        let mut n = 0usize;
        for q in &val.queries {
            let Some(j) = val.judgments.get(&q.item_id) else {
                continue;
            };
            let zq = text.solve(q)?;
            let mut ranking: Vec<Scored> = videos
                .iter()
                .map(|(id, zv)| (id.clone(), -(zv - &zq).norm()))
                .collect();
            ranking.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            total += average_precision(&ranking, j)?;
            n += 1;
        }
        if n == 0 {
            return Err(Error::Empty("oracle queries"));
        }
        Ok(total / n as f64)
    }
}

/// Pseudo-inverse of the stacked projections of one modality.
struct LatentSolver {
    spaces: Vec<String>,
    pinv: DMatrix<f64>,
}

impl LatentSolver {
    fn new(data: &SynthData, m: Modality) -> Result<Self> {
        let spaces = match m {
            Modality::Video => &data.config.video_spaces,
            Modality::Text => &data.config.text_spaces,
        };
        let k = data.config.latent_dim;
        let rows: usize = spaces.iter().map(|s| s.dim).sum();
        let mut a = DMatrix::zeros(rows, k);
        let mut r0 = 0;
        for s in spaces {
            let p = &data.projections[&s.name];
            for r in 0..p.rows() {
                for c in 0..k {
                    a[(r0 + r, c)] = p.get(r, c);
                }
            }
            r0 += p.rows();
        }
        let pinv = a
            .pseudo_inverse(1e-12)
            .map_err(|e| Error::Config(format!("projection pseudo-inverse failed: {e}")))?;
        Ok(Self {
            spaces: spaces.iter().map(|s| s.name.clone()).collect(),
            pinv,
        })
    }

    fn solve(&self, b: &FeatureBundle) -> Result<DVector<f64>> {
        let mut f = Vec::new();
        for s in &self.spaces {
            f.extend_from_slice(b.get(s).ok_or_else(|| Error::BundleMismatch {
                item: b.item_id.clone(),
                reason: format!("no feature space `{s}`"),
            })?);
        }
        Ok(&self.pinv * DVector::from_vec(f))
    }
}

/// [`generate`] followed by [`SynthData::write`].
pub fn synth_dataset(cfg: &SynthConfig, dir: &Path) -> Result<(SynthData, PathBuf, PathBuf)> {
    let data = generate(cfg)?;
    let (train, val) = data.write(dir)?;
    Ok((data, train, val))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::negation::detect_negation;

    fn small(noise: f64) -> SynthConfig {
        SynthConfig {
            n_videos: 40,
            captions_per_video: 2,
            latent_dim: 4,
            video_spaces: vec![SynthSpace::new("va", 8, noise)],
            text_spaces: vec![SynthSpace::new("ta", 6, noise), SynthSpace::new("tb", 4, noise)],
            negate_fraction: 0.5,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn noiseless_oracle_is_perfect() {
        let d = generate(&small(0.0)).unwrap();
        assert_eq!(d.nearest_latent_oracle().unwrap(), 1.0);
    }

    #[test]
    fn captions_negate_cleanly() {
        let d = generate(&small(0.1)).unwrap();
        assert_eq!(d.train.videos.len(), 32);
        assert_eq!(d.val.videos.len(), 8);
        assert_eq!(d.train.pairs.len(), 64);
        assert!(!d.train.negated.is_empty());
        for (c, text) in &d.train.captions {
            assert!(!detect_negation(&Caption::from_text(c.clone(), text)).has_negation, "{text}");
        }
        for (neg, _) in d.train.negated.values() {
            assert!(detect_negation(&Caption::from_text("x", neg)).has_negation);
        }
    }

    #[test]
    fn deterministic_bytes() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        synth_dataset(&small(0.1), a.path()).unwrap();
        synth_dataset(&small(0.1), b.path()).unwrap();
        for rel in ["train/video/va.avsf", "train/text/tb.avsf", "val/qrels.txt", "train/negated.tsv", "val/manifest.toml"] {
            assert_eq!(
                std::fs::read(a.path().join(rel)).unwrap(),
                std::fs::read(b.path().join(rel)).unwrap(),
                "{rel}"
            );
        }
        let (_, train, _) = synth_dataset(&small(0.1), a.path()).unwrap();
        let loaded = Dataset::load(&train).unwrap();
        assert_eq!(loaded.texts, generate(&small(0.1)).unwrap().train.texts);
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = small(0.1);
        c.latent_dim = 1;
        assert!(generate(&c).is_err());
        let mut c = small(0.1);
        c.video_spaces[0].dim = 2;
        assert!(generate(&c).is_err());
        let mut c = small(0.1);
        c.n_videos = 2;
        assert!(generate(&c).is_err());
        assert!("a:3".parse::<SynthSpace>().is_err());
        assert_eq!("a:3:0.5".parse::<SynthSpace>().unwrap(), SynthSpace::new("a", 3, 0.5));
    }
}
