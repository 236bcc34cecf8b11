//! Negative-cue detection and partial negation of captions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Tokens treated as negation cues, besides anything starting with `non`.
pub const NEGATION_CUES: &[&str] = &[
    "no", "not", "none", "never", "nobody", "nothing", "nowhere", "without", "n't",
];

pub const AUXILIARIES: &[&str] = &[
    "is", "are", "was", "were", "am", "be", "been", "being", "do", "does", "did", "has", "have",
    "had", "can", "could", "will", "would", "shall", "should", "may", "might", "must",
];

pub const DEFAULT_CUE: &str = "not";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PosTag {
    Verb,
    Aux,
    Noun,
    Adj,
    Other,
}

impl PosTag {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s.to_ascii_uppercase().as_str() {
            "VERB" => PosTag::Verb,
            "AUX" => PosTag::Aux,
            "NOUN" => PosTag::Noun,
            "ADJ" => PosTag::Adj,
            "OTHER" => PosTag::Other,
            _ => return None,
        })
    }
}

/// A tokenized sentence. Tokens are lowercase.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Caption {
    pub item_id: String,
    tokens: Vec<String>,
    pos_tags: Option<Vec<PosTag>>,
}

impl Caption {
    pub fn new(
        item_id: impl Into<String>,
        tokens: Vec<String>,
        pos_tags: Option<Vec<PosTag>>,
    ) -> Result<Self> {
        if let Some(tags) = &pos_tags {
            if tags.len() != tokens.len() {
                return Err(Error::Dimension {
                    context: "caption POS tags",
                    expected: tokens.len(),
                    got: tags.len(),
                });
            }
        }
        let tokens = tokens.into_iter().map(|t| t.to_lowercase()).collect();
        Ok(Self {
            item_id: item_id.into(),
            tokens,
            pos_tags,
        })
    }

    /// Lowercases, splits on whitespace, strips surrounding punctuation and
    /// splits `n't` contractions into their own token.
    pub fn from_text(item_id: impl Into<String>, text: &str) -> Self {
        let mut tokens = Vec::new();
        for raw in text.split_whitespace() {
            let t = raw
                .trim_matches(|c: char| c.is_ascii_punctuation() && c != '\'' && c != '-')
                .to_lowercase();
            if t.is_empty() {
                continue;
            }
            match t.strip_suffix("n't") {
                Some(stem) if !stem.is_empty() => {
                    tokens.push(stem.to_string());
                    tokens.push("n't".to_string());
                }
                _ => tokens.push(t),
            }
        }
        Self {
            item_id: item_id.into(),
            tokens,
            pos_tags: None,
        }
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn pos_tags(&self) -> Option<&[PosTag]> {
        self.pos_tags.as_deref()
    }

    /// Tokens joined by single spaces.
    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

pub fn is_negation_cue(token: &str) -> bool {
    NEGATION_CUES.contains(&token) || token.starts_with("non")
}

fn is_auxiliary(token: &str) -> bool {
    AUXILIARIES.contains(&token)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NegationCues {
    pub has_negation: bool,
    /// Ascending token positions of detected cues.
    pub positions: Vec<usize>,
}

pub fn detect_negation(caption: &Caption) -> NegationCues {
    let positions: Vec<usize> = caption
        .tokens
        .iter()
        .enumerate()
        .filter(|(_, t)| is_negation_cue(t))
        .map(|(i, _)| i)
        .collect();
    NegationCues {
        has_negation: !positions.is_empty(),
        positions,
    }
}

/// Distinct insertion indices, ascending: right after every auxiliary and
/// right before every non-auxiliary verb. Uses POS tags when present;
/// otherwise auxiliaries come from [`AUXILIARIES`] and verbs are tokens
/// ending in `-ing` or `-ed`.
pub fn candidate_positions(caption: &Caption) -> Vec<usize> {
    let mut out = Vec::new();
    for (i, tok) in caption.tokens.iter().enumerate() {
        let (aux, verb) = match &caption.pos_tags {
            Some(tags) => (tags[i] == PosTag::Aux, tags[i] == PosTag::Verb),
            None => {
                let aux = is_auxiliary(tok);
                let verb = !aux && tok.len() > 3 && (tok.ends_with("ing") || tok.ends_with("ed"));
                (aux, verb)
            }
        };
        if aux {
            out.push(i + 1);
        }
        if verb {
            out.push(i);
        }
    }
    out.sort_unstable();
    out.dedup();
    out
}

/// A partially negated caption and where its cue was inserted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Negation {
    pub caption: Caption,
    pub position: usize,
}

impl Negation {
    /// Removes the inserted cue, recovering the original tokens.
    pub fn restore(&self) -> Vec<String> {
        let mut t = self.caption.tokens.clone();
        t.remove(self.position);
        t
    }
}

pub fn negate_caption(caption: &Caption, seed: u64) -> Result<Negation> {
    negate_caption_with(caption, DEFAULT_CUE, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Inserts `cue` at a candidate position drawn uniformly from `rng`.
pub fn negate_caption_with<R: Rng + ?Sized>(caption: &Caption, cue: &str, rng: &mut R) -> Result<Negation> {
    if caption.tokens.is_empty() {
        return Err(Error::Empty("caption with no tokens"));
    }
    if detect_negation(caption).has_negation {
        return Err(Error::AlreadyNegated(caption.item_id.clone()));
    }
    let candidates = candidate_positions(caption);
    if candidates.is_empty() {
        return Err(Error::NotNegatable(caption.item_id.clone()));
    }
    let position = candidates[rng.random_range(0..candidates.len())];
    let mut tokens = caption.tokens.clone();
    tokens.insert(position, cue.to_lowercase());
    let pos_tags = caption.pos_tags.clone().map(|mut t| {
        t.insert(position, PosTag::Other);
        t
    });
    Ok(Negation {
        caption: Caption {
            item_id: caption.item_id.clone(),
            tokens,
            pos_tags,
        },
        position,
    })
}
