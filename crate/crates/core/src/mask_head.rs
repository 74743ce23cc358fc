//! Class-agnostic mask generation, object / mask-quality score heads, the
//! weighted training loss with analytic gradients, and the class-agnostic
//! prediction-to-ground-truth assignment used during training.

use crate::error::{Error, Result};
use crate::matcher;
use crate::tensor::{MlpParams, Tensor};

/// Column of the object-score matrix holding the "is an object"
/// probability; column 1 is "no object".
pub const OBJECT_COLUMN: usize = 0;

/// Cost used to pad rectangular assignment problems up to a square.
const PAD_COST: f32 = 1e9;

/// Clamp bound keeping `ln` finite on degenerate probabilities.
const PROB_EPS: f64 = 1e-7;

/// Smoothing term in the dice denominator.
const DICE_EPS: f64 = 1e-6;

/// Per-query mask probabilities plus the two quality scores.
#[derive(Debug, Clone)]
pub struct MaskSet {
    /// N x h x w probabilities in [0, 1].
    pub probs: Tensor<f32>,
    /// N x 2 rows summing to 1; column [`OBJECT_COLUMN`] is "is object".
    pub obj_scores: Tensor<f32>,
    /// N x 1 nonnegative predicted mask-overlap quality.
    pub iou_scores: Tensor<f32>,
}

impl MaskSet {
    pub fn new(
        probs: Tensor<f32>,
        obj_scores: Tensor<f32>,
        iou_scores: Tensor<f32>,
    ) -> Result<Self> {
        let (n, _, _) = probs.dims3()?;
        let (no, co) = obj_scores.dims2()?;
        let (ni, ci) = iou_scores.dims2()?;
        if no != n || co != 2 || ni != n || ci != 1 {
            return Err(Error::shape(format!(
                "mask set expects obj {n}x2 and iou {n}x1, got {no}x{co} and {ni}x{ci}"
            )));
        }
        if probs.data().iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::input("mask probabilities must lie in [0, 1]".to_string()));
        }
        for i in 0..n {
            let s = obj_scores.at2(i, 0) + obj_scores.at2(i, 1);
            if (s - 1.0).abs() > 1e-6 {
                return Err(Error::input(format!(
                    "object-score row {i} sums to {s}, expected 1"
                )));
            }
        }
        if iou_scores.data().iter().any(|&v| v < 0.0) {
            return Err(Error::input("iou scores must be nonnegative".to_string()));
        }
        Ok(MaskSet {
            probs,
            obj_scores,
            iou_scores,
        })
    }

    pub fn num_queries(&self) -> usize {
        self.probs.shape()[0]
    }
}

/// Weighting factors of the training loss; defaults to (2, 2, 5, 5).
#[derive(Debug, Clone, Copy)]
pub struct LossWeights {
    pub obj: f64,
    pub iou: f64,
    pub mask: f64,
    pub dice: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            obj: 2.0,
            iou: 2.0,
            mask: 5.0,
            dice: 5.0,
        }
    }
}

/// Value of the training loss and its unweighted components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Loss {
    pub total: f64,
    pub obj: f64,
    pub iou: f64,
    pub mask: f64,
    pub dice: f64,
}

/// Predicts per-query masks: `sigmoid(emb x feat)` with the feature map
/// flattened over space and the product reshaped back to N x h x w.
pub fn predict_masks(emb: &Tensor<f32>, feat: &Tensor<f32>) -> Result<Tensor<f32>> {
    let (n, d) = emb.dims2()?;
    let (c, h, w) = feat.dims3()?;
    if d != c {
        return Err(Error::shape(format!(
            "query dimension {d} does not match feature channels {c}"
        )));
    }
    let flat = feat.clone().reshape(vec![c, h * w])?;
    let logits = emb.matmul(&flat)?;
    logits.sigmoid().reshape(vec![n, h, w])
}

/// Runs the object and mask-quality heads on the query embeddings:
/// softmax over two object logits, rectified scalar for quality.
pub fn predict_scores(
    emb: &Tensor<f32>,
    obj_params: &MlpParams<f32>,
    iou_params: &MlpParams<f32>,
) -> Result<(Tensor<f32>, Tensor<f32>)> {
    if obj_params.output_dim() != 2 {
        return Err(Error::shape(format!(
            "object head must emit 2 logits, emits {}",
            obj_params.output_dim()
        )));
    }
    if iou_params.output_dim() != 1 {
        return Err(Error::shape(format!(
            "iou head must emit 1 value, emits {}",
            iou_params.output_dim()
        )));
    }
    let obj = obj_params.forward(emb)?.softmax_rows()?;
    let iou = iou_params.forward(emb)?.rectify();
    Ok((obj, iou))
}

fn bce_mean(pred: &[f32], gt: &[f32]) -> f64 {
    let mut acc = 0.0f64;
    for (&p, &g) in pred.iter().zip(gt) {
        let p = (p as f64).clamp(PROB_EPS, 1.0 - PROB_EPS);
        let g = g as f64;
        acc -= g * p.ln() + (1.0 - g) * (1.0 - p).ln();
    }
    acc / pred.len() as f64
}

fn dice_loss(pred: &[f32], gt: &[f32]) -> f64 {
    let mut inter = 0.0f64;
    let mut psum = 0.0f64;
    let mut gsum = 0.0f64;
    for (&p, &g) in pred.iter().zip(gt) {
        inter += p as f64 * g as f64;
        psum += p as f64;
        gsum += g as f64;
    }
    1.0 - 2.0 * inter / (psum + gsum + DICE_EPS)
}

fn plane(t: &Tensor<f32>, i: usize) -> &[f32] {
    let hw = t.shape()[1] * t.shape()[2];
    &t.data()[i * hw..(i + 1) * hw]
}

/// Class-agnostic one-to-one assignment of queries to ground-truth masks,
/// minimising the weighted BCE + dice pairwise cost with the exact
/// Hungarian solver. Rectangular problems (G < N) are padded with dummy
/// columns of large constant cost.
///
/// Returns `(query_index, gt_index)` pairs sorted by query index.
pub fn training_assignment(
    pred: &MaskSet,
    gt_masks: &Tensor<f32>,
    weights: &LossWeights,
) -> Result<Vec<(usize, usize)>> {
    let (n, h, w) = pred.probs.dims3()?;
    let (g, gh, gw) = gt_masks.dims3()?;
    if gh != h || gw != w {
        return Err(Error::shape(format!(
            "ground-truth grid {gh}x{gw} does not match predictions {h}x{w}"
        )));
    }
    if g > n {
        return Err(Error::Capacity { got: g, max: n });
    }
    let mut cost = vec![PAD_COST; n * n];
    for q in 0..n {
        let p = plane(&pred.probs, q);
        for t in 0..g {
            let gt = plane(gt_masks, t);
            cost[q * n + t] =
                (weights.mask * bce_mean(p, gt) + weights.dice * dice_loss(p, gt)) as f32;
        }
    }
    let assignment = matcher::hungarian(&Tensor::new(vec![n, n], cost)?)?;
    let mut pairs: Vec<(usize, usize)> = assignment
        .ids()
        .iter()
        .enumerate()
        .filter(|&(_, &col)| col < g)
        .map(|(q, &col)| (q, col))
        .collect();
    pairs.sort_unstable();
    Ok(pairs)
}

/// Overall training loss: weighted sum of object cross-entropy, quality L1,
/// per-pixel BCE, and dice, with the mask terms averaged over matched
/// pairs. With no matched pairs only the object term remains.
pub fn loss_total(
    pred: &MaskSet,
    assignment: &[(usize, usize)],
    gt_masks: &Tensor<f32>,
    weights: &LossWeights,
) -> Result<Loss> {
    let (n, h, w) = pred.probs.dims3()?;
    let (g, gh, gw) = gt_masks.dims3()?;
    if gh != h || gw != w {
        return Err(Error::shape(format!(
            "ground-truth grid {gh}x{gw} does not match predictions {h}x{w}"
        )));
    }
    let mut matched = vec![false; n];
    for &(q, t) in assignment {
        if q >= n || t >= g {
            return Err(Error::input(format!("assignment pair ({q}, {t}) out of range")));
        }
        if matched[q] {
            return Err(Error::input(format!("query {q} assigned twice")));
        }
        matched[q] = true;
    }

    // Object cross-entropy over every query.
    let mut obj_loss = 0.0f64;
    for q in 0..n {
        let col = if matched[q] { OBJECT_COLUMN } else { 1 - OBJECT_COLUMN };
        let p = (pred.obj_scores.at2(q, col) as f64).clamp(PROB_EPS, 1.0 - PROB_EPS);
        obj_loss -= p.ln();
    }
    obj_loss /= n as f64;

    let mut iou_loss = 0.0f64;
    let mut mask_loss = 0.0f64;
    let mut dice_total = 0.0f64;
    for &(q, t) in assignment {
        let p = plane(&pred.probs, q);
        let gt = plane(gt_masks, t);
        mask_loss += bce_mean(p, gt);
        dice_total += dice_loss(p, gt);
        iou_loss += (pred.iou_scores.at2(q, 0) as f64 - binary_iou(p, gt)).abs();
    }
    if !assignment.is_empty() {
        let k = assignment.len() as f64;
        iou_loss /= k;
        mask_loss /= k;
        dice_total /= k;
    }

    Ok(Loss {
        total: weights.obj * obj_loss
            + weights.iou * iou_loss
            + weights.mask * mask_loss
            + weights.dice * dice_total,
        obj: obj_loss,
        iou: iou_loss,
        mask: mask_loss,
        dice: dice_total,
    })
}

/// IoU of the binarised prediction (`> 0.5`) against a binary target;
/// an empty union yields 0.
pub fn binary_iou(pred: &[f32], gt: &[f32]) -> f64 {
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&p, &g) in pred.iter().zip(gt) {
        let pb = p > 0.5;
        let gb = g > 0.5;
        inter += usize::from(pb && gb);
        union += usize::from(pb || gb);
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Weighted mask + dice loss on logits with its analytic gradient, both in
/// f64. This is the differentiation surface for gradient checks: the loss
/// is evaluated through a numerically stable logits formulation and the
/// gradient covers every logit (zero on unmatched queries).
pub fn mask_loss_with_grad(
    logits: &Tensor<f64>,
    gt_masks: &Tensor<f64>,
    assignment: &[(usize, usize)],
    weights: &LossWeights,
) -> Result<(f64, Tensor<f64>)> {
    let (n, h, w) = logits.dims3()?;
    let (g, gh, gw) = gt_masks.dims3()?;
    if gh != h || gw != w {
        return Err(Error::shape(format!(
            "ground-truth grid {gh}x{gw} does not match logits {h}x{w}"
        )));
    }
    let hw = h * w;
    let mut grad = vec![0.0f64; n * hw];
    if assignment.is_empty() {
        return Ok((0.0, Tensor::new(vec![n, h, w], grad)?));
    }
    let pairs = assignment.len() as f64;
    let mut mask_loss = 0.0f64;
    let mut dice_total = 0.0f64;
    for &(q, t) in assignment {
        if q >= n || t >= g {
            return Err(Error::input(format!("assignment pair ({q}, {t}) out of range")));
        }
        let z = &logits.data()[q * hw..(q + 1) * hw];
        let gt = &gt_masks.data()[t * hw..(t + 1) * hw];
        let probs: Vec<f64> = z.iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect();

        // Stable BCE on logits: max(z,0) - z*g + ln(1 + exp(-|z|)).
        let mut bce = 0.0f64;
        for (&zv, &gv) in z.iter().zip(gt) {
            bce += zv.max(0.0) - zv * gv + (-zv.abs()).exp().ln_1p();
        }
        mask_loss += bce / hw as f64;

        let mut inter = 0.0f64;
        let mut psum = 0.0f64;
        let mut gsum = 0.0f64;
        for (&p, &gv) in probs.iter().zip(gt) {
            inter += p * gv;
            psum += p;
            gsum += gv;
        }
        let denom = psum + gsum + DICE_EPS;
        dice_total += 1.0 - 2.0 * inter / denom;

        let mask_scale = weights.mask / (pairs * hw as f64);
        let dice_scale = weights.dice / pairs;
        for (k, (&p, &gv)) in probs.iter().zip(gt).enumerate() {
            let d_bce = (p - gv) * mask_scale;
            // d(dice)/dp = -2 g / denom + 2 inter / denom^2, then chain
            // through sigmoid'(z) = p (1 - p).
            let d_dice =
                (-2.0 * gv / denom + 2.0 * inter / (denom * denom)) * p * (1.0 - p) * dice_scale;
            grad[q * hw + k] += d_bce + d_dice;
        }
    }
    let value = weights.mask * mask_loss / pairs + weights.dice * dice_total / pairs;
    Ok((value, Tensor::new(vec![n, h, w], grad)?))
}
