//! Dataset manifests: a flat TOML file naming the feature files per modality,
//! the caption and pairing files and optional negations and qrels. Relative
//! paths resolve against the manifest's directory.
//!
//! ```toml
//! video_features = ["video/clip.avsf", "video/wsl.avsf"]
//! text_features = ["text/clip.avsf"]
//! captions = "captions.tsv"
//! pairs = "pairs.tsv"
//! negated = "negated.tsv"
//! qrels = "qrels.txt"
//! ```
//!
//! Text feature files hold one record per caption and, for negated captions,
//! a second record with id `{caption_id}#neg`.

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{read_qrels, write_qrels, JudgmentSet};
use crate::io::features::{bundles_from_files, FeatureFile};
use crate::io::tsv;
use crate::laff::{FeatureBundle, Modality, SpaceSpec};
use crate::negation::{Caption, Triplet};
use crate::train::ValidationSet;

pub const NEGATED_SUFFIX: &str = "#neg";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub video_features: Vec<PathBuf>,
    pub text_features: Vec<PathBuf>,
    pub captions: PathBuf,
    pub pairs: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub negated: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qrels: Option<PathBuf>,
}

impl Manifest {
    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start].matches('\n').count() + 1)
                .unwrap_or(0);
            Error::parse(path, line, e.message().to_string())
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(path, &text)
    }
}

/// Captions with their text features, paired with videos.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub videos: Vec<Arc<FeatureBundle>>,
    /// caption id → text.
    pub captions: IndexMap<String, String>,
    /// caption id → text features.
    pub texts: IndexMap<String, FeatureBundle>,
    /// `(video_id, caption_id)`.
    pub pairs: Vec<(String, String)>,
    /// caption id → (negated text, its features).
    pub negated: IndexMap<String, (String, FeatureBundle)>,
    pub qrels: Option<JudgmentSet>,
}

fn spaces_of<'a>(bundles: impl IntoIterator<Item = &'a FeatureBundle>) -> Vec<SpaceSpec> {
    let mut out: Vec<SpaceSpec> = bundles
        .into_iter()
        .next()
        .map(|b| b.iter().map(|(s, v)| SpaceSpec::new(s, v.len())).collect())
        .unwrap_or_default();
    out.sort();
    out
}

fn subset(b: &FeatureBundle, keep: &[String]) -> Result<FeatureBundle> {
    let mut out = FeatureBundle::new(b.item_id.clone());
    for s in keep {
        let v = b.get(s).ok_or_else(|| Error::BundleMismatch {
            item: b.item_id.clone(),
            reason: format!("no feature space `{s}`"),
        })?;
        out.insert(s.clone(), v.to_vec())?;
    }
    Ok(out)
}

impl Dataset {
    /// Checks that every paired id resolves and every negation belongs to a
    /// known caption.
    pub fn validate(&self) -> Result<()> {
        let videos: HashSet<&str> = self.videos.iter().map(|v| v.item_id.as_str()).collect();
        if videos.len() != self.videos.len() {
            return Err(Error::Config("duplicate video ids".into()));
        }
        for (v, c) in &self.pairs {
            if !videos.contains(v.as_str()) {
                return Err(Error::Config(format!("pair references unknown video `{v}`")));
            }
            if !self.captions.contains_key(c) {
                return Err(Error::Config(format!("pair references unknown caption `{c}`")));
            }
            if !self.texts.contains_key(c) {
                return Err(Error::Config(format!("caption `{c}` has no text features")));
            }
        }
        for c in self.negated.keys() {
            if !self.captions.contains_key(c) {
                return Err(Error::Config(format!("negation for unknown caption `{c}`")));
            }
        }
        Ok(())
    }

    pub fn video_spaces(&self) -> Vec<SpaceSpec> {
        spaces_of(self.videos.iter().map(|v| v.as_ref()))
    }

    pub fn text_spaces(&self) -> Vec<SpaceSpec> {
        spaces_of(self.texts.values())
    }

    pub fn spaces(&self, m: Modality) -> Vec<SpaceSpec> {
        match m {
            Modality::Video => self.video_spaces(),
            Modality::Text => self.text_spaces(),
        }
    }

    pub fn video_bundles(&self) -> Vec<FeatureBundle> {
        self.videos.iter().map(|v| v.as_ref().clone()).collect()
    }

    /// One triplet per pair, carrying the caption's negation when present.
    pub fn triplets(&self) -> Result<Vec<Triplet>> {
        let by_id: HashMap<&str, &Arc<FeatureBundle>> =
            self.videos.iter().map(|v| (v.item_id.as_str(), v)).collect();
        self.pairs
            .iter()
            .map(|(v, c)| {
                let video = by_id
                    .get(v.as_str())
                    .ok_or_else(|| Error::Config(format!("unknown video `{v}`")))?;
                let text = self
                    .texts
                    .get(c)
                    .ok_or_else(|| Error::Config(format!("caption `{c}` has no text features")))?;
                let caption = Caption::from_text(c.clone(), &self.captions[c]);
                let negated = self
                    .negated
                    .get(c)
                    .map(|(t, f)| (Caption::from_text(c.clone(), t), f.clone()));
                Ok(Triplet {
                    video: Arc::clone(video),
                    caption,
                    text: text.clone(),
                    negated,
                })
            })
            .collect()
    }

    /// Every paired caption as a query; judgments from qrels when present,
    /// otherwise complete judgments derived from the pairs.
    pub fn validation_set(&self) -> Result<ValidationSet> {
        let judgments = match &self.qrels {
            Some(q) => q.clone(),
            None => {
                let mut j = JudgmentSet::new(true);
                for (v, c) in &self.pairs {
                    j.insert(c, v.clone(), 1)?;
                }
                j
            }
        };
        let mut seen = HashSet::new();
        let queries = self
            .pairs
            .iter()
            .filter(|(_, c)| seen.insert(c.as_str()))
            .map(|(_, c)| self.texts[c].clone())
            .collect();
        Ok(ValidationSet {
            videos: self.video_bundles(),
            queries,
            judgments,
        })
    }

    /// Keeps only the named spaces; an empty list keeps all of that modality.
    pub fn select_spaces(&self, video: &[String], text: &[String]) -> Result<Dataset> {
        let mut out = self.clone();
        if !video.is_empty() {
            out.videos = self
                .videos
                .iter()
                .map(|v| subset(v, video).map(Arc::new))
                .collect::<Result<_>>()?;
        }
        if !text.is_empty() {
            for b in out.texts.values_mut() {
                *b = subset(b, text)?;
            }
            for (_, b) in out.negated.values_mut() {
                *b = subset(b, text)?;
            }
        }
        Ok(out)
    }

    pub fn load(manifest_path: &Path) -> Result<Dataset> {
        let m = Manifest::load(manifest_path)?;
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &Path| base.join(p);
        if m.video_features.is_empty() || m.text_features.is_empty() {
            return Err(Error::Config(format!(
                "{}: needs at least one video and one text feature file",
                manifest_path.display()
            )));
        }
        let video_files = read_feature_files(&m.video_features, &resolve)?;
        let text_files = read_feature_files(&m.text_features, &resolve)?;
        let videos = bundles_from_files(&video_files)?
            .into_iter()
            .map(Arc::new)
            .collect();
        let all_text = bundles_from_files(&text_files)?;
        let captions: IndexMap<String, String> = tsv::read_texts(&resolve(&m.captions))?.into_iter().collect();
        let pairs = tsv::read_pairs(&resolve(&m.pairs))?;
        let mut texts = IndexMap::new();
        let mut neg_features = HashMap::new();
        for b in all_text {
            match b.item_id.strip_suffix(NEGATED_SUFFIX) {
                Some(c) => {
                    neg_features.insert(c.to_string(), b);
                }
                None => {
                    texts.insert(b.item_id.clone(), b);
                }
            }
        }
        let mut negated = IndexMap::new();
        if let Some(p) = &m.negated {
            let path = resolve(p);
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            for (i, (c, _, neg)) in tsv::parse_negations(&path, &text)?.into_iter().enumerate() {
                let mut f = neg_features.remove(&c).ok_or_else(|| {
                    Error::parse(&path, i + 1, format!("no text features with id `{c}{NEGATED_SUFFIX}`"))
                })?;
                f.item_id = c.clone();
                negated.insert(c, (neg, f));
            }
        }
        let qrels = m.qrels.as_ref().map(|p| read_qrels(&resolve(p))).transpose()?;
        let ds = Dataset {
            videos,
            captions,
            texts,
            pairs,
            negated,
            qrels,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Writes feature files, TSVs and `manifest.toml` into `dir`; returns the
    /// manifest path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        self.validate()?;
        for sub in ["video", "text"] {
            std::fs::create_dir_all(dir.join(sub)).map_err(|e| Error::io(dir.join(sub), e))?;
        }
        let mut manifest = Manifest::default();
        for s in self.video_spaces() {
            let mut f = FeatureFile::new(s.name.clone(), s.dim)?;
            for v in &self.videos {
                f.insert(v.item_id.clone(), feature(v, &s.name)?)?;
            }
            let rel = PathBuf::from("video").join(format!("{}.avsf", s.name));
            f.write(&dir.join(&rel))?;
            manifest.video_features.push(rel);
        }
        for s in self.text_spaces() {
            let mut f = FeatureFile::new(s.name.clone(), s.dim)?;
            for b in self.texts.values() {
                f.insert(b.item_id.clone(), feature(b, &s.name)?)?;
            }
            for (c, (_, b)) in &self.negated {
                f.insert(format!("{c}{NEGATED_SUFFIX}"), feature(b, &s.name)?)?;
            }
            let rel = PathBuf::from("text").join(format!("{}.avsf", s.name));
            f.write(&dir.join(&rel))?;
            manifest.text_features.push(rel);
        }
        manifest.captions = "captions.tsv".into();
        tsv::write_texts(
            &dir.join(&manifest.captions),
            self.captions.iter().map(|(a, b)| (a.as_str(), b.as_str())),
        )?;
        manifest.pairs = "pairs.tsv".into();
        tsv::write_pairs(
            &dir.join(&manifest.pairs),
            self.pairs.iter().map(|(a, b)| (a.as_str(), b.as_str())),
        )?;
        if !self.negated.is_empty() {
            let rel = PathBuf::from("negated.tsv");
            let text = tsv::format_negations(
                self.negated
                    .iter()
                    .map(|(c, (n, _))| (c.as_str(), self.captions[c].as_str(), n.as_str())),
            );
            std::fs::write(dir.join(&rel), text).map_err(|e| Error::io(dir.join(&rel), e))?;
            manifest.negated = Some(rel);
        }
        if let Some(q) = &self.qrels {
            let rel = PathBuf::from("qrels.txt");
            write_qrels(&dir.join(&rel), q)?;
            manifest.qrels = Some(rel);
        }
        let path = dir.join("manifest.toml");
        let text = toml::to_string(&manifest).expect("manifest serializes");
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

fn feature(b: &FeatureBundle, space: &str) -> Result<Vec<f64>> {
    b.get(space).map(<[f64]>::to_vec).ok_or_else(|| Error::BundleMismatch {
        item: b.item_id.clone(),
        reason: format!("no feature space `{space}`"),
    })
}

fn read_feature_files(paths: &[PathBuf], resolve: &(impl Fn(&Path) -> PathBuf + Sync)) -> Result<Vec<FeatureFile>> {
    use rayon::prelude::*;
    let files: Vec<FeatureFile> = paths.par_iter().map(|p| FeatureFile::read(&resolve(p))).collect::<Result<_>>()?;
    let mut seen = HashSet::new();
    for f in &files {
        if !seen.insert(f.space.as_str()) {
            return Err(Error::Config(format!("feature space `{}` listed twice", f.space)));
        }
    }
    Ok(files)
}
