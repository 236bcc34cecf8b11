//! Lightweight attentional feature fusion.
//!
//! A branch maps each of its `k` input features through its own
//! `tanh(W·f + b)` layer into a shared `d`-dimensional space, scores each
//! transformed feature against a learned attention vector `u`, and returns the
//! softmax-weighted (convex) combination. A model pairs `h` video branches with
//! `h` text branches; cross-modal similarity is the mean cosine over heads.
//!
//! Slots inside a branch are kept sorted by space name, which fixes the
//! summation order regardless of how the caller listed the spaces.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numeric::{
    self, axpy, cosine_sim, cosine_sim_vjp, dot, linear_tanh, linear_tanh_vjp_with_output,
    softmax, LinearTanhGrad, LinearTanhParams,
};

/// Named per-space feature vectors for one item (video, frame or sentence).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBundle {
    pub item_id: String,
    features: Vec<(String, Vec<f64>)>,
}

impl FeatureBundle {
    pub fn new(item_id: impl Into<String>) -> Self {
        Self {
            item_id: item_id.into(),
            features: Vec::new(),
        }
    }

    /// Adds a feature vector; space names must be unique within a bundle.
    pub fn with(mut self, space: impl Into<String>, vector: Vec<f64>) -> Result<Self> {
        self.insert(space, vector)?;
        Ok(self)
    }

    pub fn insert(&mut self, space: impl Into<String>, vector: Vec<f64>) -> Result<()> {
        let space = space.into();
        if self.get(&space).is_some() {
            return Err(Error::BundleMismatch {
                item: self.item_id.clone(),
                reason: format!("duplicate space `{space}`"),
            });
        }
        self.features.push((space, vector));
        Ok(())
    }

    pub fn get(&self, space: &str) -> Option<&[f64]> {
        self.features
            .iter()
            .find(|(s, _)| s == space)
            .map(|(_, v)| v.as_slice())
    }

    pub fn get_mut(&mut self, space: &str) -> Option<&mut Vec<f64>> {
        self.features
            .iter_mut()
            .find(|(s, _)| s == space)
            .map(|(_, v)| v)
    }

    pub fn spaces(&self) -> impl Iterator<Item = &str> {
        self.features.iter().map(|(s, _)| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.features.iter().map(|(s, v)| (s.as_str(), v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

/// A feature space and its dimensionality.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SpaceSpec {
    pub name: String,
    pub dim: usize,
}

impl SpaceSpec {
    pub fn new(name: impl Into<String>, dim: usize) -> Self {
        Self {
            name: name.into(),
            dim,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    Video,
    Text,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchSlot {
    pub space: String,
    pub linear: LinearTanhParams,
}

/// One LAFF: per-space `linear+tanh` transforms plus an attention vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LaffBranch {
    slots: Vec<BranchSlot>,
    attention: Vec<f64>,
}

/// Cached forward pass of a branch. Vectors are in slot (space-name) order.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchForward {
    pub transformed: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub fused: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchGrad {
    pub slots: Vec<LinearTanhGrad>,
    pub attention: Vec<f64>,
}

impl LaffBranch {
    pub fn new(mut slots: Vec<BranchSlot>, attention: Vec<f64>) -> Result<Self> {
        if slots.is_empty() {
            return Err(Error::Empty("branch with no feature spaces"));
        }
        slots.sort_by(|a, b| a.space.cmp(&b.space));
        if let Some(w) = slots.windows(2).find(|w| w[0].space == w[1].space) {
            return Err(Error::Config(format!(
                "space `{}` appears twice in one branch",
                w[0].space
            )));
        }
        let d = attention.len();
        for s in &slots {
            if s.linear.out_dim() != d {
                return Err(Error::Dimension {
                    context: "branch slot output",
                    expected: d,
                    got: s.linear.out_dim(),
                });
            }
        }
        Ok(Self { slots, attention })
    }

    /// Uniform-initialised transforms and a zero attention vector.
    pub fn init<R: rand::Rng + ?Sized>(spaces: &[SpaceSpec], d: usize, rng: &mut R) -> Result<Self> {
        let mut sorted = spaces.to_vec();
        sorted.sort();
        let slots = sorted
            .iter()
            .map(|s| BranchSlot {
                space: s.name.clone(),
                linear: LinearTanhParams::init(d, s.dim, rng),
            })
            .collect();
        Self::new(slots, vec![0.0; d])
    }

    pub fn d(&self) -> usize {
        self.attention.len()
    }

    pub fn arity(&self) -> usize {
        self.slots.len()
    }

    pub fn slots(&self) -> &[BranchSlot] {
        &self.slots
    }

    pub fn slots_mut(&mut self) -> &mut [BranchSlot] {
        &mut self.slots
    }

    pub fn attention(&self) -> &[f64] {
        &self.attention
    }

    pub fn attention_mut(&mut self) -> &mut [f64] {
        &mut self.attention
    }

    pub fn space_names(&self) -> impl Iterator<Item = &str> {
        self.slots.iter().map(|s| s.space.as_str())
    }

    fn inputs<'a>(&self, bundle: &'a FeatureBundle) -> Result<Vec<&'a [f64]>> {
        if bundle.len() != self.slots.len() {
            let expected: Vec<&str> = self.space_names().collect();
            let got: Vec<&str> = bundle.spaces().collect();
            return Err(Error::BundleMismatch {
                item: bundle.item_id.clone(),
                reason: format!("expected spaces {expected:?}, got {got:?}"),
            });
        }
        self.slots
            .iter()
            .map(|slot| {
                let f = bundle.get(&slot.space).ok_or_else(|| Error::BundleMismatch {
                    item: bundle.item_id.clone(),
                    reason: format!("missing space `{}`", slot.space),
                })?;
                if f.len() != slot.linear.in_dim() {
                    return Err(Error::BundleMismatch {
                        item: bundle.item_id.clone(),
                        reason: format!(
                            "space `{}` has dim {}, expected {}",
                            slot.space,
                            f.len(),
                            slot.linear.in_dim()
                        ),
                    });
                }
                Ok(f)
            })
            .collect()
    }

    pub fn forward(&self, bundle: &FeatureBundle) -> Result<BranchForward> {
        let inputs = self.inputs(bundle)?;
        let transformed = self
            .slots
            .iter()
            .zip(&inputs)
            .map(|(slot, f)| linear_tanh(&slot.linear, f))
            .collect::<Result<Vec<_>>>()?;
        let scores: Vec<f64> = transformed.iter().map(|e| dot(&self.attention, e)).collect();
        let weights = softmax(&scores)?;
        let mut fused = vec![0.0; self.d()];
        for (a, e) in weights.iter().zip(&transformed) {
            axpy(*a, e, &mut fused);
        }
        Ok(BranchForward {
            transformed,
            weights,
            fused,
        })
    }

    /// Backward pass given `upstream = ∂L/∂fused`. Returns parameter
    /// gradients and input gradients (slot order).
    pub fn vjp(&self, bundle: &FeatureBundle, upstream: &[f64]) -> Result<(BranchGrad, Vec<Vec<f64>>)> {
        let fwd = self.forward(bundle)?;
        self.vjp_cached(bundle, &fwd, upstream)
    }

    pub fn vjp_cached(
        &self,
        bundle: &FeatureBundle,
        fwd: &BranchForward,
        upstream: &[f64],
    ) -> Result<(BranchGrad, Vec<Vec<f64>>)> {
        if upstream.len() != self.d() {
            return Err(Error::Dimension {
                context: "fused upstream gradient",
                expected: self.d(),
                got: upstream.len(),
            });
        }
        let inputs = self.inputs(bundle)?;
        // ∂L/∂s_i = a_i (g·e_i − g·fused)
        let g_fused = dot(upstream, &fwd.fused);
        let d_scores: Vec<f64> = fwd
            .weights
            .iter()
            .zip(&fwd.transformed)
            .map(|(a, e)| a * (dot(upstream, e) - g_fused))
            .collect();

        let mut attention = vec![0.0; self.d()];
        let mut slots = Vec::with_capacity(self.slots.len());
        let mut input_grads = Vec::with_capacity(self.slots.len());
        for (i, slot) in self.slots.iter().enumerate() {
            axpy(d_scores[i], &fwd.transformed[i], &mut attention);
            let mut d_e: Vec<f64> = upstream.iter().map(|g| fwd.weights[i] * g).collect();
            axpy(d_scores[i], &self.attention, &mut d_e);
            let (g, df) =
                linear_tanh_vjp_with_output(&slot.linear, inputs[i], &fwd.transformed[i], &d_e)?;
            slots.push(g);
            input_grads.push(df);
        }
        Ok((BranchGrad { slots, attention }, input_grads))
    }

    pub fn num_params(&self) -> usize {
        self.slots.iter().map(|s| s.linear.num_params()).sum::<usize>() + self.attention.len()
    }

    pub(crate) fn write_params(&self, out: &mut Vec<f64>) {
        for s in &self.slots {
            s.linear.write_params(out);
        }
        out.extend_from_slice(&self.attention);
    }

    pub(crate) fn read_params(&mut self, src: &mut &[f64]) {
        for s in &mut self.slots {
            s.linear.read_params(src);
        }
        let (u, rest) = src.split_at(self.attention.len());
        self.attention.copy_from_slice(u);
        *src = rest;
    }

    /// Each slot's `W` (row-major) and `b`, then `u`.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.write_params(&mut out);
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::Dimension {
                context: "flat branch parameter vector",
                expected: self.num_params(),
                got: params.len(),
            });
        }
        let mut src = params;
        self.read_params(&mut src);
        Ok(())
    }
}

impl BranchGrad {
    pub fn zeros_like(branch: &LaffBranch) -> Self {
        Self {
            slots: branch
                .slots
                .iter()
                .map(|s| LinearTanhGrad::zeros_like(&s.linear))
                .collect(),
            attention: vec![0.0; branch.d()],
        }
    }

    pub fn accumulate(&mut self, other: &BranchGrad) {
        for (a, b) in self.slots.iter_mut().zip(&other.slots) {
            a.accumulate(b);
        }
        axpy(1.0, &other.attention, &mut self.attention);
    }

    pub(crate) fn write_params(&self, out: &mut Vec<f64>) {
        for s in &self.slots {
            s.write_params(out);
        }
        out.extend_from_slice(&self.attention);
    }

    /// Same ordering as [`LaffBranch::params`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.write_params(&mut out);
        out
    }
}

/// Runs one branch: returns the fused vector and its attention weights.
pub fn laff_forward(branch: &LaffBranch, bundle: &FeatureBundle) -> Result<(Vec<f64>, Vec<f64>)> {
    let f = branch.forward(bundle)?;
    Ok((f.fused, f.weights))
}

/// Gradients of `upstream · fused` with respect to branch parameters and inputs.
pub fn laff_vjp(
    branch: &LaffBranch,
    bundle: &FeatureBundle,
    upstream: &[f64],
) -> Result<(BranchGrad, Vec<Vec<f64>>)> {
    branch.vjp(bundle, upstream)
}

/// A paired video/text branch.
#[derive(Debug, Clone, PartialEq)]
pub struct LaffHead {
    pub video: LaffBranch,
    pub text: LaffBranch,
}

impl LaffHead {
    pub fn branch(&self, modality: Modality) -> &LaffBranch {
        match modality {
            Modality::Video => &self.video,
            Modality::Text => &self.text,
        }
    }
}

/// Per-head fused vectors of one item.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub heads: Vec<Vec<f64>>,
}

impl Embedding {
    /// Mean cosine over heads.
    pub fn similarity(&self, other: &Embedding) -> Result<f64> {
        if self.heads.len() != other.heads.len() {
            return Err(Error::Dimension {
                context: "embedding head count",
                expected: self.heads.len(),
                got: other.heads.len(),
            });
        }
        let mut total = 0.0;
        for (a, b) in self.heads.iter().zip(&other.heads) {
            total += cosine_sim(a, b)?;
        }
        Ok(total / self.heads.len() as f64)
    }
}

/// `h` paired heads sharing a fused dimension `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct LaffModel {
    d: usize,
    video_spaces: Vec<SpaceSpec>,
    text_spaces: Vec<SpaceSpec>,
    heads: Vec<LaffHead>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrad {
    pub video: BranchGrad,
    pub text: BranchGrad,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrad {
    pub heads: Vec<HeadGrad>,
}

impl LaffModel {
    /// Fresh model: independent transforms per head, `W ~ U(±1/√d_in)`,
    /// zero biases and zero attention vectors.
    pub fn new(
        video_spaces: &[SpaceSpec],
        text_spaces: &[SpaceSpec],
        d: usize,
        num_heads: usize,
        seed: u64,
    ) -> Result<Self> {
        if d == 0 {
            return Err(Error::Config("fused dimension d must be ≥ 1".into()));
        }
        if num_heads == 0 {
            return Err(Error::Config("number of heads must be ≥ 1".into()));
        }
        for s in video_spaces.iter().chain(text_spaces) {
            if s.dim == 0 {
                return Err(Error::Config(format!("space `{}` has dim 0", s.name)));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let heads = (0..num_heads)
            .map(|_| {
                Ok(LaffHead {
                    video: LaffBranch::init(video_spaces, d, &mut rng)?,
                    text: LaffBranch::init(text_spaces, d, &mut rng)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_heads(heads)
    }

    pub fn from_heads(heads: Vec<LaffHead>) -> Result<Self> {
        let first = heads.first().ok_or(Error::Empty("model with no heads"))?;
        let d = first.video.d();
        let spaces = |b: &LaffBranch| -> Vec<SpaceSpec> {
            b.slots
                .iter()
                .map(|s| SpaceSpec::new(s.space.clone(), s.linear.in_dim()))
                .collect()
        };
        let video_spaces = spaces(&first.video);
        let text_spaces = spaces(&first.text);
        for h in &heads {
            if h.video.d() != d || h.text.d() != d {
                return Err(Error::Dimension {
                    context: "head fused dimension",
                    expected: d,
                    got: if h.video.d() != d { h.video.d() } else { h.text.d() },
                });
            }
            if spaces(&h.video) != video_spaces || spaces(&h.text) != text_spaces {
                return Err(Error::Config("heads disagree on their feature spaces".into()));
            }
        }
        Ok(Self {
            d,
            video_spaces,
            text_spaces,
            heads,
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn num_heads(&self) -> usize {
        self.heads.len()
    }

    pub fn heads(&self) -> &[LaffHead] {
        &self.heads
    }

    pub fn heads_mut(&mut self) -> &mut [LaffHead] {
        &mut self.heads
    }

    /// Sorted by name.
    pub fn video_spaces(&self) -> &[SpaceSpec] {
        &self.video_spaces
    }

    /// Sorted by name.
    pub fn text_spaces(&self) -> &[SpaceSpec] {
        &self.text_spaces
    }

    pub fn spaces(&self, modality: Modality) -> &[SpaceSpec] {
        match modality {
            Modality::Video => &self.video_spaces,
            Modality::Text => &self.text_spaces,
        }
    }

    pub fn forward(&self, bundle: &FeatureBundle, modality: Modality) -> Result<Vec<BranchForward>> {
        self.heads
            .iter()
            .map(|h| h.branch(modality).forward(bundle))
            .collect()
    }

    pub fn embed(&self, bundle: &FeatureBundle, modality: Modality) -> Result<Embedding> {
        Ok(Embedding {
            heads: self
                .forward(bundle, modality)?
                .into_iter()
                .map(|f| f.fused)
                .collect(),
        })
    }

    pub fn embed_video(&self, bundle: &FeatureBundle) -> Result<Embedding> {
        self.embed(bundle, Modality::Video)
    }

    pub fn embed_text(&self, bundle: &FeatureBundle) -> Result<Embedding> {
        self.embed(bundle, Modality::Text)
    }

    /// `s(x, q) = (1/h) Σ_j cos(f̄_{v,j}, f̄_{t,j})`
    pub fn similarity(&self, video: &FeatureBundle, text: &FeatureBundle) -> Result<f64> {
        self.embed_video(video)?.similarity(&self.embed_text(text)?)
    }

    /// Sentence-sentence similarity through the text branches of every head.
    pub fn text_text_similarity(&self, q1: &FeatureBundle, q2: &FeatureBundle) -> Result<f64> {
        self.embed_text(q1)?.similarity(&self.embed_text(q2)?)
    }

    /// Gradient of `upstream · similarity(video, text)`.
    pub fn similarity_vjp(
        &self,
        video: &FeatureBundle,
        text: &FeatureBundle,
        upstream: f64,
    ) -> Result<ModelGrad> {
        self.pair_vjp(video, Modality::Video, text, upstream)
    }

    /// Gradient of `upstream · text_text_similarity(q1, q2)`.
    pub fn text_text_similarity_vjp(
        &self,
        q1: &FeatureBundle,
        q2: &FeatureBundle,
        upstream: f64,
    ) -> Result<ModelGrad> {
        self.pair_vjp(q1, Modality::Text, q2, upstream)
    }

    fn pair_vjp(
        &self,
        left: &FeatureBundle,
        left_modality: Modality,
        right: &FeatureBundle,
        upstream: f64,
    ) -> Result<ModelGrad> {
        let mut grad = ModelGrad::zeros_like(self);
        let scale = upstream / self.heads.len() as f64;
        for (head, hg) in self.heads.iter().zip(&mut grad.heads) {
            let lb = head.branch(left_modality);
            let rb = &head.text;
            let lf = lb.forward(left)?;
            let rf = rb.forward(right)?;
            let (dl, dr) = cosine_sim_vjp(&lf.fused, &rf.fused, scale)?;
            let (gl, _) = lb.vjp_cached(left, &lf, &dl)?;
            let (gr, _) = rb.vjp_cached(right, &rf, &dr)?;
            hg.branch_mut(left_modality).accumulate(&gl);
            hg.text.accumulate(&gr);
        }
        Ok(grad)
    }

    pub fn num_params(&self) -> usize {
        self.heads
            .iter()
            .map(|h| h.video.num_params() + h.text.num_params())
            .sum()
    }

    /// All parameters in a fixed order: per head, video branch then text
    /// branch; per branch, each slot's `W` (row-major) and `b`, then `u`.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for h in &self.heads {
            h.video.write_params(&mut out);
            h.text.write_params(&mut out);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::Dimension {
                context: "flat parameter vector",
                expected: self.num_params(),
                got: params.len(),
            });
        }
        let mut src = params;
        for h in &mut self.heads {
            h.video.read_params(&mut src);
            h.text.read_params(&mut src);
        }
        Ok(())
    }

    /// `θ ← θ − lr · g`
    pub fn sgd_step(&mut self, grad: &ModelGrad, lr: f64) -> Result<()> {
        let mut p = self.params();
        axpy(-lr, &grad.flatten(), &mut p);
        self.set_params(&p)
    }

    pub fn params_finite(&self) -> bool {
        numeric::all_finite(&self.params())
    }
}

impl HeadGrad {
    fn branch_mut(&mut self, modality: Modality) -> &mut BranchGrad {
        match modality {
            Modality::Video => &mut self.video,
            Modality::Text => &mut self.text,
        }
    }
}

impl ModelGrad {
    pub fn zeros_like(model: &LaffModel) -> Self {
        Self {
            heads: model
                .heads
                .iter()
                .map(|h| HeadGrad {
                    video: BranchGrad::zeros_like(&h.video),
                    text: BranchGrad::zeros_like(&h.text),
                })
                .collect(),
        }
    }

    pub fn accumulate(&mut self, other: &ModelGrad) {
        for (a, b) in self.heads.iter_mut().zip(&other.heads) {
            a.video.accumulate(&b.video);
            a.text.accumulate(&b.text);
        }
    }

    pub(crate) fn accumulate_branch(&mut self, head: usize, modality: Modality, g: &BranchGrad) {
        self.heads[head].branch_mut(modality).accumulate(g);
    }

    /// Same ordering as [`LaffModel::params`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for h in &self.heads {
            h.video.write_params(&mut out);
            h.text.write_params(&mut out);
        }
        out
    }

    pub fn norm(&self) -> f64 {
        numeric::norm(&self.flatten())
    }

    pub fn scale(&mut self, c: f64) {
        for h in &mut self.heads {
            for b in [&mut h.video, &mut h.text] {
                for s in &mut b.slots {
                    s.weight.as_mut_slice().iter_mut().for_each(|x| *x *= c);
                    s.bias.iter_mut().for_each(|x| *x *= c);
                }
                b.attention.iter_mut().for_each(|x| *x *= c);
            }
        }
    }
}

/// Mean attention weight per space over every (item, head), sorted descending.
/// Ties keep space-name order.
pub fn feature_importance(
    model: &LaffModel,
    dataset: &[FeatureBundle],
    modality: Modality,
) -> Result<Vec<(String, f64)>> {
    if dataset.is_empty() {
        return Err(Error::Empty("feature importance over an empty dataset"));
    }
    let spaces = model.spaces(modality);
    let mut totals = vec![0.0; spaces.len()];
    for item in dataset {
        for head in model.heads() {
            let f = head.branch(modality).forward(item)?;
            axpy(1.0, &f.weights, &mut totals);
        }
    }
    let n = (dataset.len() * model.num_heads()) as f64;
    let mut out: Vec<(String, f64)> = spaces
        .iter()
        .zip(totals)
        .map(|(s, t)| (s.name.clone(), t / n))
        .collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1));
    Ok(out)
}
