use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::laff::{BranchForward, FeatureBundle, LaffModel, Modality, ModelGrad};
use crate::negation::text::Caption;
use crate::numeric::{axpy, cosine_sim, cosine_sim_vjp};
use crate::train::argmax_where;

/// Margins of the hardest-negative hinge (`m0`), the video-anchored
/// bounded loss (`m1 < m2`), the text-anchored bounded loss (`m3 < m4`) and
/// the weight `lambda1` of the two bounded terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Margins {
    pub m0: f64,
    pub m1: f64,
    pub m2: f64,
    pub m3: f64,
    pub m4: f64,
    pub lambda1: f64,
}

impl Default for Margins {
    fn default() -> Self {
        Self {
            m0: 0.2,
            m1: 0.2,
            m2: 1.0,
            m3: 0.2,
            m4: 1.0,
            lambda1: 0.1,
        }
    }
}

impl Margins {
    pub fn validate(&self) -> Result<()> {
        let all = [self.m0, self.m1, self.m2, self.m3, self.m4, self.lambda1];
        if all.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidMargins("margins must be finite".into()));
        }
        if !(0.0 < self.m1 && self.m1 < self.m2 && self.m2 < 2.0) {
            return Err(Error::InvalidMargins(format!(
                "need 0 < m1 < m2 < 2, got m1={} m2={}",
                self.m1, self.m2
            )));
        }
        if !(0.0 < self.m3 && self.m3 < self.m4 && self.m4 < 2.0) {
            return Err(Error::InvalidMargins(format!(
                "need 0 < m3 < m4 < 2, got m3={} m4={}",
                self.m3, self.m4
            )));
        }
        if self.m0 < 0.0 {
            return Err(Error::InvalidMargins(format!("m0 must be ≥ 0, got {}", self.m0)));
        }
        if self.lambda1 < 0.0 {
            return Err(Error::InvalidMargins(format!(
                "lambda1 must be ≥ 0, got {}",
                self.lambda1
            )));
        }
        Ok(())
    }
}

fn bounded_hinge(lower: f64, upper: f64, pos: f64, neg: f64) -> f64 {
    (lower + neg - pos).max(0.0) + (-upper - neg + pos).max(0.0)
}

/// Subgradient `(∂/∂pos, ∂/∂neg)` of the bounded hinge. Exactly zero while
/// the gap `pos − neg` lies in `[lower, upper]`.
pub fn bcl_grad(lower: f64, upper: f64, pos: f64, neg: f64) -> (f64, f64) {
    let mut d = (0.0, 0.0);
    if lower + neg - pos > 0.0 {
        d.0 -= 1.0;
        d.1 += 1.0;
    }
    if -upper - neg + pos > 0.0 {
        d.0 += 1.0;
        d.1 -= 1.0;
    }
    d
}

/// `max(0, m1 + s(x⁺,q⁻) − s(x⁺,q)) + max(0, −m2 − s(x⁺,q⁻) + s(x⁺,q))`
pub fn bcl_video_anchor(s_pos: f64, s_neg: f64, m: &Margins) -> Result<f64> {
    m.validate()?;
    Ok(bounded_hinge(m.m1, m.m2, s_pos, s_neg))
}

/// `max(0, m3 + s(q,q⁻) − s(q,x⁺)) + max(0, −m4 − s(q,q⁻) + s(q,x⁺))`
pub fn bcl_text_anchor(s_qx: f64, s_qq: f64, m: &Margins) -> Result<f64> {
    m.validate()?;
    Ok(bounded_hinge(m.m3, m.m4, s_qx, s_qq))
}

/// A training video, one of its captions and optionally the caption's
/// partially negated form.
#[derive(Debug, Clone)]
pub struct Triplet {
    pub video: Arc<FeatureBundle>,
    pub caption: Caption,
    pub text: FeatureBundle,
    pub negated: Option<(Caption, FeatureBundle)>,
}

#[derive(Debug, Clone)]
pub struct BnlOutput {
    /// Mean over the batch.
    pub loss: f64,
    pub grad: ModelGrad,
    /// Hardest in-batch negative per triplet; `None` when every other
    /// triplet shares the positive video.
    pub hardest: Vec<Option<usize>>,
}

fn mean_cos(a: &[BranchForward], b: &[BranchForward]) -> Result<f64> {
    let mut total = 0.0;
    for (x, y) in a.iter().zip(b) {
        total += cosine_sim(&x.fused, &y.fused)?;
    }
    Ok(total / a.len() as f64)
}

fn add_pair_grad(
    a: &[BranchForward],
    b: &[BranchForward],
    upstream: f64,
    da: &mut [Vec<f64>],
    db: &mut [Vec<f64>],
) -> Result<()> {
    if upstream == 0.0 {
        return Ok(());
    }
    let scale = upstream / a.len() as f64;
    for j in 0..a.len() {
        let (ga, gb) = cosine_sim_vjp(&a[j].fused, &b[j].fused, scale)?;
        axpy(1.0, &ga, &mut da[j]);
        axpy(1.0, &gb, &mut db[j]);
    }
    Ok(())
}

struct Side {
    forward: Vec<BranchForward>,
    grad: Vec<Vec<f64>>,
}

impl Side {
    fn new(model: &LaffModel, bundle: &FeatureBundle, modality: Modality) -> Result<Self> {
        let forward = model.forward(bundle, modality)?;
        let grad = vec![vec![0.0; model.d()]; forward.len()];
        Ok(Self { forward, grad })
    }

    fn backprop(&self, model: &LaffModel, bundle: &FeatureBundle, modality: Modality, out: &mut ModelGrad) -> Result<()> {
        for (j, head) in model.heads().iter().enumerate() {
            if self.grad[j].iter().all(|g| *g == 0.0) {
                continue;
            }
            let (g, _) = head
                .branch(modality)
                .vjp_cached(bundle, &self.forward[j], &self.grad[j])?;
            out.accumulate_branch(j, modality, &g);
        }
        Ok(())
    }
}

fn check_batch(batch: &[Triplet], m: &Margins) -> Result<()> {
    if batch.len() < 2 {
        return Err(Error::BatchTooSmall(batch.len()));
    }
    m.validate()
}

/// Batch-mean loss
/// `max(0, m0 + s(x#,q) − s(x⁺,q)) + λ1 (bcl(x⁺,q,q⁻) + bcl(q,x⁺,q⁻))`
/// with its gradient. `x#` is the most similar in-batch video other than the
/// positive (videos with the positive's id are skipped, ties go to the lowest
/// index) and is held fixed during differentiation. The bounded terms apply
/// only to triplets with a negated caption.
pub fn bnl_loss(model: &LaffModel, batch: &[Triplet], m: &Margins) -> Result<BnlOutput> {
    check_batch(batch, m)?;
    let n = batch.len();
    let mut videos = batch
        .iter()
        .map(|t| Side::new(model, &t.video, Modality::Video))
        .collect::<Result<Vec<_>>>()?;
    let mut texts = batch
        .iter()
        .map(|t| Side::new(model, &t.text, Modality::Text))
        .collect::<Result<Vec<_>>>()?;
    let mut negs = batch
        .iter()
        .map(|t| {
            t.negated
                .as_ref()
                .map(|(_, b)| Side::new(model, b, Modality::Text))
                .transpose()
        })
        .collect::<Result<Vec<_>>>()?;

    // sim[v][q]
    let mut sim = vec![vec![0.0; n]; n];
    for v in 0..n {
        for q in 0..n {
            sim[v][q] = mean_cos(&videos[v].forward, &texts[q].forward)?;
        }
    }

    let inv_n = 1.0 / n as f64;
    let mut loss = 0.0;
    let mut hardest = Vec::with_capacity(n);
    for i in 0..n {
        let s_pos = sim[i][i];
        let mut d_pos = 0.0;

        let positive_id = &batch[i].video.item_id;
        let hn = argmax_where(sim.iter().map(|row| row[i]), |v| {
            v != i && &batch[v].video.item_id != positive_id
        });
        hardest.push(hn);
        if let Some(h) = hn {
            let t = m.m0 + sim[h][i] - s_pos;
            if t > 0.0 {
                loss += t;
                d_pos -= 1.0;
                let (vh, ti) = (&mut videos[h], &mut texts[i]);
                add_pair_grad(&vh.forward, &ti.forward, inv_n, &mut vh.grad, &mut ti.grad)?;
            }
        }

        if let Some(neg) = negs[i].as_mut() {
            if m.lambda1 > 0.0 {
                let s_xn = mean_cos(&videos[i].forward, &neg.forward)?;
                let s_qq = mean_cos(&texts[i].forward, &neg.forward)?;
                loss += m.lambda1
                    * (bounded_hinge(m.m1, m.m2, s_pos, s_xn) + bounded_hinge(m.m3, m.m4, s_pos, s_qq));
                let (dp1, dxn) = bcl_grad(m.m1, m.m2, s_pos, s_xn);
                let (dp2, dqq) = bcl_grad(m.m3, m.m4, s_pos, s_qq);
                d_pos += m.lambda1 * (dp1 + dp2);
                let vi = &mut videos[i];
                add_pair_grad(&vi.forward, &neg.forward, m.lambda1 * dxn * inv_n, &mut vi.grad, &mut neg.grad)?;
                let ti = &mut texts[i];
                add_pair_grad(&ti.forward, &neg.forward, m.lambda1 * dqq * inv_n, &mut ti.grad, &mut neg.grad)?;
            }
        }

        let (vi, ti) = (&mut videos[i], &mut texts[i]);
        add_pair_grad(&vi.forward, &ti.forward, d_pos * inv_n, &mut vi.grad, &mut ti.grad)?;
    }

    let mut grad = ModelGrad::zeros_like(model);
    for (t, side) in batch.iter().zip(&videos) {
        side.backprop(model, &t.video, Modality::Video, &mut grad)?;
    }
    for (t, side) in batch.iter().zip(&texts) {
        side.backprop(model, &t.text, Modality::Text, &mut grad)?;
    }
    for (t, side) in batch.iter().zip(&negs) {
        if let (Some((_, b)), Some(side)) = (&t.negated, side) {
            side.backprop(model, b, Modality::Text, &mut grad)?;
        }
    }

    Ok(BnlOutput {
        loss: loss * inv_n,
        grad,
        hardest,
    })
}

/// Loss value only, recomputed through the public similarity functions.
pub fn bnl_loss_value(model: &LaffModel, batch: &[Triplet], m: &Margins) -> Result<f64> {
    check_batch(batch, m)?;
    let n = batch.len();
    let videos = batch
        .iter()
        .map(|t| model.embed_video(&t.video))
        .collect::<Result<Vec<_>>>()?;
    let texts = batch
        .iter()
        .map(|t| model.embed_text(&t.text))
        .collect::<Result<Vec<_>>>()?;
    let mut loss = 0.0;
    for i in 0..n {
        let column = videos
            .iter()
            .map(|v| v.similarity(&texts[i]))
            .collect::<Result<Vec<_>>>()?;
        let s_pos = column[i];
        let positive_id = &batch[i].video.item_id;
        if let Some(h) = argmax_where(column.iter().copied(), |v| {
            v != i && &batch[v].video.item_id != positive_id
        }) {
            loss += (m.m0 + column[h] - s_pos).max(0.0);
        }
        if let Some((_, neg)) = &batch[i].negated {
            let neg = model.embed_text(neg)?;
            let s_xn = videos[i].similarity(&neg)?;
            let s_qq = texts[i].similarity(&neg)?;
            loss += m.lambda1 * (bcl_video_anchor(s_pos, s_xn, m)? + bcl_text_anchor(s_pos, s_qq, m)?);
        }
    }
    Ok(loss / n as f64)
}
