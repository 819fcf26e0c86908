//! Bridge-text alignment objectives with hand-derived gradients.
//!
//! Three losses combine into the overall objective:
//! * head-tail matching: softplus hinge on the head/tail cosine,
//! * bridge contrastive: softmax over bridge distances against hard negative
//!   middle states,
//! * bridge-text contrastive: cross-entropy of the bridge center against a
//!   frozen category bank.
//!
//! Hard negatives are selected with the anchor's own endpoints and times,
//! while each negative's loss term uses that negative's own endpoints and
//! times; both follow the written formulas even though they disagree.
//!
//! All gradients are analytic; `finite_difference_check` is the independent
//! verifier.

use crate::bridge::{
    bridge_center, bridge_deviation_vec, bridge_distance, bridge_variance, TimeTriple,
};
use crate::error::{Error, Result};
use crate::exec;
use crate::linalg::{
    axpy, check_same_dim, dot, normalize, normalize_jacobian_apply, softmax_inplace,
};
use crate::simulator::CategoryBank;
use crate::Embedding;

/// One instance's (head, middle, tail) embeddings at frame times (s, t, e).
#[derive(Debug, Clone)]
pub struct BridgeTriplet {
    pub head: Embedding,
    pub mid: Embedding,
    pub tail: Embedding,
    pub times: TimeTriple,
    pub instance_id: usize,
    pub category_id: usize,
}

/// Flat batch of triplets (batch and instance axes already flattened).
#[derive(Debug, Clone)]
pub struct TripletBatch {
    pub triplets: Vec<BridgeTriplet>,
}

impl TripletBatch {
    pub fn dim(&self) -> usize {
        self.triplets.first().map_or(0, |t| t.head.len())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Head,
    Mid,
    Tail,
}

/// Gradients for one triplet's three embeddings.
#[derive(Debug, Clone)]
pub struct TripletGrads {
    pub head: Vec<f64>,
    pub mid: Vec<f64>,
    pub tail: Vec<f64>,
}

impl TripletGrads {
    fn zeros(d: usize) -> Self {
        TripletGrads {
            head: vec![0.0; d],
            mid: vec![0.0; d],
            tail: vec![0.0; d],
        }
    }

    fn slot_mut(&mut self, slot: Slot) -> &mut Vec<f64> {
        match slot {
            Slot::Head => &mut self.head,
            Slot::Mid => &mut self.mid,
            Slot::Tail => &mut self.tail,
        }
    }
}

/// Scalar components plus gradients with respect to every batch embedding.
/// Components are batch averages; `total = htm + bc + btc`.
#[derive(Debug, Clone)]
pub struct LossReport {
    pub total: f64,
    pub htm: f64,
    pub bc: f64,
    pub btc: f64,
    pub grads: Vec<TripletGrads>,
}

/// Loss hyper-parameters: similarity bound 0.5, top-5 negatives, unit
/// temperature, renormalized center.
#[derive(Debug, Clone, Copy)]
pub struct BtaParams {
    pub delta: f64,
    pub k: usize,
    pub temperature: f64,
    pub renormalize_center: bool,
}

impl Default for BtaParams {
    fn default() -> Self {
        BtaParams {
            delta: 0.5,
            k: 5,
            temperature: 1.0,
            renormalize_center: true,
        }
    }
}

/// Softplus log(1 + e^z), overflow-safe on both tails.
pub fn smooth_relu(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// d/dz softplus = logistic sigmoid, computed without overflow.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Head-tail matching loss log(1 + e^(delta - h.t)) on l2-normalized inputs.
/// Inputs are raw; gradients returned are with respect to the raw inputs and
/// include the normalization Jacobian.
pub fn head_tail_matching_loss(
    head: &[f64],
    tail: &[f64],
    delta: f64,
) -> Result<(f64, (Vec<f64>, Vec<f64>))> {
    check_same_dim(head, tail)?;
    let hn = normalize(head)?;
    let tn = normalize(tail)?;
    let z = delta - dot(&hn, &tn);
    let loss = smooth_relu(z);
    let dl_ddot = -sigmoid(z);
    let g_head =
        normalize_jacobian_apply(head, &tn.iter().map(|x| dl_ddot * x).collect::<Vec<_>>())?;
    let g_tail =
        normalize_jacobian_apply(tail, &hn.iter().map(|x| dl_ddot * x).collect::<Vec<_>>())?;
    Ok((loss, (g_head, g_tail)))
}

/// Indices of the k hardest negatives for the anchor: foreign middles scored
/// with the anchor's endpoints and times, largest distance first, ties broken
/// by ascending index.
pub fn select_hard_negatives(anchor: usize, batch: &TripletBatch, k: usize) -> Result<Vec<usize>> {
    if anchor >= batch.triplets.len() {
        return Err(Error::InvalidConfig(format!(
            "anchor index {anchor} out of range"
        )));
    }
    let a = &batch.triplets[anchor];
    let mut scored: Vec<(usize, f64)> = Vec::with_capacity(batch.triplets.len().saturating_sub(1));
    for (j, t) in batch.triplets.iter().enumerate() {
        if j == anchor {
            continue;
        }
        let d = bridge_distance(&a.head, &t.mid, &a.tail, a.times)?;
        scored.push((j, d));
    }
    scored.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap().then(x.0.cmp(&y.0)));
    scored.truncate(k);
    Ok(scored.into_iter().map(|(j, _)| j).collect())
}

/// Gradients of `bridge_distance` with respect to (head, mid, tail).
fn distance_grads(t: &BridgeTriplet) -> (f64, TripletGrads) {
    let beta = t.times.beta();
    let sigma2 = bridge_variance(t.times);
    let dev = bridge_deviation_vec(&t.head, &t.mid, &t.tail, beta);
    let dev2: f64 = dev.iter().map(|x| x * x).sum();
    let d = -dev2 / (2.0 * sigma2);
    let g = TripletGrads {
        head: dev.iter().map(|x| x * (1.0 - beta) / sigma2).collect(),
        mid: dev.iter().map(|x| -x / sigma2).collect(),
        tail: dev.iter().map(|x| x * beta / sigma2).collect(),
    };
    (d, g)
}

/// Bridge contrastive loss for one anchor against its negative set.
/// Each negative's distance term uses that negative's own endpoints/times.
/// Returns the loss, the anchor's gradients, and one gradient set per
/// negative (in the order given).
pub fn bridge_contrastive_loss(
    anchor: &BridgeTriplet,
    negatives: &[&BridgeTriplet],
) -> Result<(f64, TripletGrads, Vec<TripletGrads>)> {
    let d = anchor.head.len();
    if negatives.is_empty() {
        return Ok((0.0, TripletGrads::zeros(d), Vec::new()));
    }
    for n in negatives {
        check_same_dim(&anchor.head, &n.head)?;
    }
    let (da, ga) = distance_grads(anchor);
    let neg: Vec<(f64, TripletGrads)> = negatives.iter().map(|n| distance_grads(n)).collect();

    // loss = logsumexp(da, d1..dm) - da; softmax p over the m+1 terms
    let mut logits: Vec<f64> = Vec::with_capacity(neg.len() + 1);
    logits.push(da);
    logits.extend(neg.iter().map(|(dj, _)| *dj));
    let lse = {
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        m + logits.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
    };
    let loss = lse - da;
    let mut p = logits.clone();
    softmax_inplace(&mut p);

    let scale_anchor = p[0] - 1.0;
    let anchor_grads = TripletGrads {
        head: ga.head.iter().map(|x| x * scale_anchor).collect(),
        mid: ga.mid.iter().map(|x| x * scale_anchor).collect(),
        tail: ga.tail.iter().map(|x| x * scale_anchor).collect(),
    };
    let neg_grads = neg
        .into_iter()
        .enumerate()
        .map(|(j, (_, g))| TripletGrads {
            head: g.head.iter().map(|x| x * p[j + 1]).collect(),
            mid: g.mid.iter().map(|x| x * p[j + 1]).collect(),
            tail: g.tail.iter().map(|x| x * p[j + 1]).collect(),
        })
        .collect();
    Ok((loss, anchor_grads, neg_grads))
}

/// Bridge-text contrastive loss: cross-entropy of the (optionally
/// renormalized) bridge center against the frozen category bank.
/// Gradients flow to head and tail only.
pub fn bridge_text_contrastive_loss(
    head: &[f64],
    tail: &[f64],
    bank: &CategoryBank,
    positive: usize,
    temperature: f64,
    renormalize: bool,
) -> Result<(f64, (Vec<f64>, Vec<f64>))> {
    if bank.is_empty() {
        return Err(Error::Empty("category bank".into()));
    }
    if positive >= bank.len() {
        return Err(Error::InvalidConfig(format!(
            "positive category {positive} out of range"
        )));
    }
    if temperature <= 0.0 {
        return Err(Error::InvalidConfig("temperature must be > 0".into()));
    }
    let center_raw = bridge_center(head, tail, false)?;
    let center = if renormalize {
        normalize(&center_raw)?
    } else {
        center_raw.clone()
    };
    let mut scores: Vec<f64> = bank
        .embeddings
        .iter()
        .map(|c| dot(&center, c) / temperature)
        .collect();
    softmax_inplace(&mut scores);
    let p = scores; // now probabilities
    let loss = -p[positive].max(1e-300).ln();

    // dL/dscores = p - onehot; dscores_k/dcenter = bank_k / temperature
    let d = head.len();
    let mut g_center = vec![0.0; d];
    for (k, c) in bank.embeddings.iter().enumerate() {
        let coef = (p[k] - if k == positive { 1.0 } else { 0.0 }) / temperature;
        axpy(coef, c, &mut g_center);
    }
    let g_center = if renormalize {
        normalize_jacobian_apply(&center_raw, &g_center)?
    } else {
        g_center
    };
    let g_half: Vec<f64> = g_center.iter().map(|x| x * 0.5).collect();
    Ok((loss, (g_half.clone(), g_half)))
}

struct AnchorContribution {
    htm: f64,
    bc: f64,
    btc: f64,
    // (triplet index, slot, gradient), unscaled by 1/(B N)
    grads: Vec<(usize, Slot, Vec<f64>)>,
}

fn anchor_contribution(
    a_idx: usize,
    batch: &TripletBatch,
    bank: &CategoryBank,
    params: &BtaParams,
) -> Result<AnchorContribution> {
    let a = &batch.triplets[a_idx];
    let (htm, (gh, gt)) = head_tail_matching_loss(&a.head, &a.tail, params.delta)?;

    let neg_idx = select_hard_negatives(a_idx, batch, params.k)?;
    let negs: Vec<&BridgeTriplet> = neg_idx.iter().map(|&j| &batch.triplets[j]).collect();
    let (bc, bc_anchor, bc_negs) = bridge_contrastive_loss(a, &negs)?;

    let (btc, (bh, bt)) = bridge_text_contrastive_loss(
        &a.head,
        &a.tail,
        bank,
        a.category_id,
        params.temperature,
        params.renormalize_center,
    )?;

    let mut grads: Vec<(usize, Slot, Vec<f64>)> = vec![
        (a_idx, Slot::Head, gh),
        (a_idx, Slot::Tail, gt),
        (a_idx, Slot::Head, bc_anchor.head),
        (a_idx, Slot::Mid, bc_anchor.mid),
        (a_idx, Slot::Tail, bc_anchor.tail),
    ];
    for (j, g) in neg_idx.iter().zip(bc_negs) {
        grads.push((*j, Slot::Head, g.head));
        grads.push((*j, Slot::Mid, g.mid));
        grads.push((*j, Slot::Tail, g.tail));
    }
    grads.push((a_idx, Slot::Head, bh));
    grads.push((a_idx, Slot::Tail, bt));

    Ok(AnchorContribution {
        htm,
        bc,
        btc,
        grads,
    })
}

/// Overall objective: per-anchor htm + bc + btc, averaged over the batch.
/// Per-anchor contributions are evaluated in parallel and merged in anchor
/// order, so the accumulated gradients are deterministic.
pub fn bta_loss(
    batch: &TripletBatch,
    bank: &CategoryBank,
    params: &BtaParams,
) -> Result<LossReport> {
    let contributions = exec::map_range(batch.triplets.len(), |a| {
        anchor_contribution(a, batch, bank, params)
    });
    merge_contributions(batch, contributions)
}

/// Always-sequential evaluation path; same result as [`bta_loss`].
pub fn bta_loss_sequential(
    batch: &TripletBatch,
    bank: &CategoryBank,
    params: &BtaParams,
) -> Result<LossReport> {
    let contributions: Vec<_> = (0..batch.triplets.len())
        .map(|a| anchor_contribution(a, batch, bank, params))
        .collect();
    merge_contributions(batch, contributions)
}

fn merge_contributions(
    batch: &TripletBatch,
    contributions: Vec<Result<AnchorContribution>>,
) -> Result<LossReport> {
    let n = batch.triplets.len();
    if n == 0 {
        return Err(Error::Empty("triplet batch".into()));
    }
    let d = batch.dim();
    let inv = 1.0 / n as f64;
    let mut htm = 0.0;
    let mut bc = 0.0;
    let mut btc = 0.0;
    let mut grads: Vec<TripletGrads> = (0..n).map(|_| TripletGrads::zeros(d)).collect();
    for c in contributions {
        let c = c?;
        htm += c.htm;
        bc += c.bc;
        btc += c.btc;
        for (idx, slot, g) in c.grads {
            axpy(inv, &g, grads[idx].slot_mut(slot));
        }
    }
    htm *= inv;
    bc *= inv;
    btc *= inv;
    let total = htm + bc + btc;
    if !total.is_finite() {
        return Err(Error::NonFinite("bta loss".into()));
    }
    Ok(LossReport {
        total,
        htm,
        bc,
        btc,
        grads,
    })
}

/// Central-difference gradient verification. Returns the maximum over
/// coordinates of |analytic - numeric| / max(1, |analytic|, |numeric|).
pub fn finite_difference_check<F>(f: &F, point: &[f64], analytic: &[f64], eps: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    if eps <= 0.0 {
        return Err(Error::InvalidConfig("eps must be > 0".into()));
    }
    check_same_dim(point, analytic)?;
    let mut x = point.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + eps;
        let fp = f(&x)?;
        x[i] = orig - eps;
        let fm = f(&x)?;
        x[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite("perturbed loss".into()));
        }
        let numeric = (fp - fm) / (2.0 * eps);
        let a = analytic[i];
        let rel = (a - numeric).abs() / 1.0_f64.max(a.abs()).max(numeric.abs());
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// Flatten all batch embeddings (head, mid, tail per triplet) into one vector.
pub fn flatten_batch(batch: &TripletBatch) -> Vec<f64> {
    let mut v = Vec::new();
    for t in &batch.triplets {
        v.extend_from_slice(&t.head);
        v.extend_from_slice(&t.mid);
        v.extend_from_slice(&t.tail);
    }
    v
}

/// Rebuild a batch from flattened embedding values, keeping the template's
/// times, ids, and categories.
pub fn batch_with_values(template: &TripletBatch, values: &[f64]) -> TripletBatch {
    let d = template.dim();
    let mut triplets = Vec::with_capacity(template.triplets.len());
    for (i, t) in template.triplets.iter().enumerate() {
        let base = i * 3 * d;
        triplets.push(BridgeTriplet {
            head: values[base..base + d].to_vec(),
            mid: values[base + d..base + 2 * d].to_vec(),
            tail: values[base + 2 * d..base + 3 * d].to_vec(),
            times: t.times,
            instance_id: t.instance_id,
            category_id: t.category_id,
        });
    }
    TripletBatch { triplets }
}

/// Flatten a report's gradients in the same layout as [`flatten_batch`].
pub fn flatten_grads(report: &LossReport) -> Vec<f64> {
    let mut v = Vec::new();
    for g in &report.grads {
        v.extend_from_slice(&g.head);
        v.extend_from_slice(&g.mid);
        v.extend_from_slice(&g.tail);
    }
    v
}
