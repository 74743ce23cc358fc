//! Video instance segmentation metrics: spatio-temporal IoU, average
//! precision over IoU thresholds 0.5:0.05:0.95 (101-point interpolation),
//! AP over a declared novel-category subset, and a track-consistency
//! (identity switch) count used by the strategy ablation.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;

/// Binary mask on a fixed grid.
///
/// Serialises as row-major run-length counts alternating zero/one runs,
/// starting with zeros: `{"size": [h, w], "counts": [...]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "MaskRepr", into = "MaskRepr")]
pub struct Mask {
    h: usize,
    w: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(h: usize, w: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != h * w {
            return Err(Error::input(format!(
                "mask data length {} does not fill {h}x{w}",
                data.len()
            )));
        }
        Ok(Mask { h, w, data })
    }

    pub fn empty(h: usize, w: usize) -> Self {
        Mask {
            h,
            w,
            data: vec![false; h * w],
        }
    }

    /// Binarises a probability plane with the strict `> 0.5` rule.
    pub fn from_probs(h: usize, w: usize, probs: &[f32]) -> Result<Self> {
        if probs.len() != h * w {
            return Err(Error::input(format!(
                "probability plane length {} does not fill {h}x{w}",
                probs.len()
            )));
        }
        Ok(Mask {
            h,
            w,
            data: probs.iter().map(|&p| p > 0.5).collect(),
        })
    }

    pub fn size(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn area(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_blank(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    /// Pixel counts of `(intersection, union)` with another mask.
    pub fn overlap(&self, other: &Mask) -> Result<(usize, usize)> {
        if (self.h, self.w) != (other.h, other.w) {
            return Err(Error::input(format!(
                "mask grids disagree: {}x{} vs {}x{}",
                self.h, self.w, other.h, other.w
            )));
        }
        let mut inter = 0usize;
        let mut union = 0usize;
        for (&a, &b) in self.data.iter().zip(&other.data) {
            inter += usize::from(a && b);
            union += usize::from(a || b);
        }
        Ok((inter, union))
    }
}

#[derive(Serialize, Deserialize)]
struct MaskRepr {
    size: [usize; 2],
    counts: Vec<u32>,
}

impl From<Mask> for MaskRepr {
    fn from(m: Mask) -> Self {
        let mut counts = Vec::new();
        let mut current = false;
        let mut run = 0u32;
        for &b in &m.data {
            if b == current {
                run += 1;
            } else {
                counts.push(run);
                current = b;
                run = 1;
            }
        }
        counts.push(run);
        MaskRepr {
            size: [m.h, m.w],
            counts,
        }
    }
}

impl TryFrom<MaskRepr> for Mask {
    type Error = String;

    fn try_from(r: MaskRepr) -> std::result::Result<Self, String> {
        let [h, w] = r.size;
        let total: u64 = r.counts.iter().map(|&c| c as u64).sum();
        if total != (h * w) as u64 {
            return Err(format!("mask run lengths cover {total} pixels, expected {}", h * w));
        }
        let mut data = Vec::with_capacity(h * w);
        let mut value = false;
        for &c in &r.counts {
            data.extend(std::iter::repeat_n(value, c as usize));
            value = !value;
        }
        Ok(Mask { h, w, data })
    }
}

/// Mask present at one frame of a track or ground-truth instance; frames
/// without an entry are empty.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameMask {
    pub frame: usize,
    pub mask: Mask,
}

/// A tracked instance prediction over a video.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VideoInstancePrediction {
    pub track_id: u64,
    pub category: usize,
    pub confidence: f64,
    pub masks: Vec<FrameMask>,
}

/// One ground-truth instance: its category and per-frame masks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GtInstance {
    pub category: usize,
    pub masks: Vec<FrameMask>,
}

/// Ground truth for a whole video.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VideoGroundTruth {
    pub video_length: usize,
    pub instances: Vec<GtInstance>,
}

impl VideoGroundTruth {
    pub fn validate(&self) -> Result<()> {
        for (i, inst) in self.instances.iter().enumerate() {
            if inst.masks.iter().all(|fm| fm.mask.is_blank()) {
                return Err(Error::input(format!(
                    "ground-truth instance {i} has no nonempty frame"
                )));
            }
            for fm in &inst.masks {
                if fm.frame >= self.video_length {
                    return Err(Error::input(format!(
                        "ground-truth instance {i} references frame {} beyond video length {}",
                        fm.frame, self.video_length
                    )));
                }
            }
        }
        Ok(())
    }
}

/// One video's predictions paired with its ground truth.
#[derive(Debug, Clone)]
pub struct VideoPair {
    pub predictions: Vec<VideoInstancePrediction>,
    pub ground_truth: VideoGroundTruth,
}

fn frame_map(masks: &[FrameMask]) -> BTreeMap<usize, &Mask> {
    masks.iter().map(|fm| (fm.frame, &fm.mask)).collect()
}

/// Spatio-temporal IoU between a predicted track and a ground-truth
/// instance: intersection summed over frames divided by union summed over
/// frames; an empty union (both tracks empty) yields 0.
pub fn st_iou(
    pred: &VideoInstancePrediction,
    gt: &GtInstance,
    video_length: usize,
) -> Result<f64> {
    let pm = frame_map(&pred.masks);
    let gm = frame_map(&gt.masks);
    for &f in pm.keys().chain(gm.keys()) {
        if f >= video_length {
            return Err(Error::input(format!(
                "frame {f} outside video of length {video_length}"
            )));
        }
    }
    let mut inter = 0usize;
    let mut union = 0usize;
    for f in 0..video_length {
        match (pm.get(&f), gm.get(&f)) {
            (Some(p), Some(g)) => {
                let (i, u) = p.overlap(g)?;
                inter += i;
                union += u;
            }
            (Some(p), None) => union += p.area(),
            (None, Some(g)) => union += g.area(),
            (None, None) => {}
        }
    }
    if union == 0 {
        Ok(0.0)
    } else {
        Ok(inter as f64 / union as f64)
    }
}

/// Default IoU thresholds: 0.50, 0.55, ..., 0.95.
pub fn default_thresholds() -> Vec<f64> {
    (0..10).map(|i| 0.50 + 0.05 * i as f64).collect()
}

/// Average-precision evaluation result with per-threshold and
/// per-category breakdowns.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ApResult {
    pub ap: f64,
    /// AP restricted to novel categories; absent when no novel category
    /// appears in the ground truth.
    pub ap_n: Option<f64>,
    pub per_threshold: Vec<ThresholdAp>,
    pub per_category: Vec<CategoryAp>,
    pub num_gt_instances: usize,
    pub num_predictions: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThresholdAp {
    pub threshold: f64,
    pub ap: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CategoryAp {
    pub category: usize,
    pub novel: bool,
    pub ap: f64,
}

/// Evaluates predictions against ground truth over a set of videos.
///
/// Per category and threshold, predictions (pooled across videos) are
/// sorted by confidence (ties: video order, then smaller track id) and
/// greedily matched one-to-one to same-video, same-category ground truth
/// by highest spatio-temporal IoU at or above the threshold. The
/// precision-recall curve is integrated with 101-point interpolation.
/// The headline AP averages over categories present in the ground truth,
/// then over thresholds; `ap_n` restricts to novel categories.
pub fn evaluate(
    videos: &[VideoPair],
    novel: &BTreeSet<usize>,
    thresholds: &[f64],
) -> Result<ApResult> {
    if thresholds.is_empty() {
        return Err(Error::input("need at least one IoU threshold".to_string()));
    }
    for pair in videos {
        pair.ground_truth.validate()?;
        for p in &pair.predictions {
            if !p.confidence.is_finite() {
                return Err(Error::input(format!(
                    "track {} has non-finite confidence",
                    p.track_id
                )));
            }
        }
    }
    let num_gt_instances: usize = videos.iter().map(|p| p.ground_truth.instances.len()).sum();
    if num_gt_instances == 0 {
        return Err(Error::UndefinedMetric);
    }
    let num_predictions: usize = videos.iter().map(|p| p.predictions.len()).sum();

    let categories: BTreeSet<usize> = videos
        .iter()
        .flat_map(|p| p.ground_truth.instances.iter().map(|g| g.category))
        .collect();
    let categories: Vec<usize> = categories.into_iter().collect();

    // ap_grid[c][t] for category index c, threshold index t.
    let ap_grid: Vec<Result<Vec<f64>>> = par::map_collect(&categories, |&cat| {
        category_ap(videos, cat, thresholds)
    });
    let ap_grid: Vec<Vec<f64>> = ap_grid.into_iter().collect::<Result<_>>()?;

    let per_category: Vec<CategoryAp> = categories
        .iter()
        .zip(&ap_grid)
        .map(|(&category, aps)| CategoryAp {
            category,
            novel: novel.contains(&category),
            ap: mean(aps),
        })
        .collect();
    let per_threshold: Vec<ThresholdAp> = thresholds
        .iter()
        .enumerate()
        .map(|(t, &threshold)| ThresholdAp {
            threshold,
            ap: mean(&ap_grid.iter().map(|aps| aps[t]).collect::<Vec<_>>()),
        })
        .collect();

    let ap = mean(&per_category.iter().map(|c| c.ap).collect::<Vec<_>>());
    let novel_aps: Vec<f64> = per_category
        .iter()
        .filter(|c| c.novel)
        .map(|c| c.ap)
        .collect();
    let ap_n = if novel_aps.is_empty() {
        None
    } else {
        Some(mean(&novel_aps))
    };

    Ok(ApResult {
        ap,
        ap_n,
        per_threshold,
        per_category,
        num_gt_instances,
        num_predictions,
    })
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn category_ap(videos: &[VideoPair], category: usize, thresholds: &[f64]) -> Result<Vec<f64>> {
    // Collect this category's predictions and ground truths, remembering
    // the video each came from.
    struct Det {
        video: usize,
        track_id: u64,
        confidence: f64,
        ious: Vec<(usize, f64)>, // (global gt index, st-iou)
    }
    let mut gt_count = 0usize;
    let mut gt_index_base = Vec::with_capacity(videos.len());
    for pair in videos {
        gt_index_base.push(gt_count);
        gt_count += pair
            .ground_truth
            .instances
            .iter()
            .filter(|g| g.category == category)
            .count();
    }

    let mut dets = Vec::new();
    for (v, pair) in videos.iter().enumerate() {
        let gts: Vec<(usize, &GtInstance)> = pair
            .ground_truth
            .instances
            .iter()
            .filter(|g| g.category == category)
            .enumerate()
            .map(|(k, g)| (gt_index_base[v] + k, g))
            .collect();
        for pred in &pair.predictions {
            if pred.category != category {
                continue;
            }
            let mut ious = Vec::with_capacity(gts.len());
            for &(gid, gt) in &gts {
                ious.push((gid, st_iou(pred, gt, pair.ground_truth.video_length)?));
            }
            dets.push(Det {
                video: v,
                track_id: pred.track_id,
                confidence: pred.confidence,
                ious,
            });
        }
    }
    // Confidence descending; ties by video order then smaller track id.
    dets.sort_by(|a, b| {
        b.confidence
            .partial_cmp(&a.confidence)
            .expect("finite confidences")
            .then(a.video.cmp(&b.video))
            .then(a.track_id.cmp(&b.track_id))
    });

    let mut aps = Vec::with_capacity(thresholds.len());
    for &thr in thresholds {
        let mut gt_matched = vec![false; gt_count];
        let mut tp_flags = Vec::with_capacity(dets.len());
        for det in &dets {
            let mut best: Option<(usize, f64)> = None;
            for &(gid, iou) in &det.ious {
                if gt_matched[gid] || iou < thr {
                    continue;
                }
                // Highest IoU wins; ties keep the earlier (smaller) index.
                if best.is_none_or(|(_, b)| iou > b) {
                    best = Some((gid, iou));
                }
            }
            match best {
                Some((gid, _)) => {
                    gt_matched[gid] = true;
                    tp_flags.push(true);
                }
                None => tp_flags.push(false),
            }
        }
        aps.push(ap_101(&tp_flags, gt_count));
    }
    Ok(aps)
}

/// 101-point interpolated average precision from ranked match flags.
fn ap_101(tp_flags: &[bool], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return 0.0;
    }
    if tp_flags.is_empty() {
        return 0.0;
    }
    let nd = tp_flags.len();
    let mut precision = Vec::with_capacity(nd);
    let mut recall = Vec::with_capacity(nd);
    let mut tp = 0usize;
    for (i, &is_tp) in tp_flags.iter().enumerate() {
        tp += usize::from(is_tp);
        precision.push(tp as f64 / (i + 1) as f64);
        recall.push(tp as f64 / n_gt as f64);
    }
    // Precision envelope: monotone non-increasing from the right.
    for i in (0..nd - 1).rev() {
        if precision[i + 1] > precision[i] {
            precision[i] = precision[i + 1];
        }
    }
    let mut total = 0.0f64;
    for s in 0..=100 {
        let r = s as f64 / 100.0;
        // First ranked detection reaching recall r.
        let idx = recall.partition_point(|&rc| rc < r);
        if idx < nd {
            total += precision[idx];
        }
    }
    total / 101.0
}

/// Counts identity switches of the predicted tracks against ground truth.
///
/// For each ground-truth instance, frames with a nonempty mask are matched
/// to the predicted track whose frame mask overlaps it best (IoU > 0.5,
/// ties to the smaller track id); every change of matched track id across
/// successive matched frames counts as one switch.
pub fn count_id_switches(
    predictions: &[VideoInstancePrediction],
    gt: &VideoGroundTruth,
) -> Result<usize> {
    gt.validate()?;
    let mut track_frames: Vec<(u64, BTreeMap<usize, &Mask>)> = predictions
        .iter()
        .map(|p| (p.track_id, frame_map(&p.masks)))
        .collect();
    // Ascending track ids make the equal-IoU tie-break deterministic.
    track_frames.sort_by_key(|(tid, _)| *tid);
    let mut switches = 0usize;
    for inst in &gt.instances {
        let mut last: Option<u64> = None;
        for fm in &inst.masks {
            if fm.mask.is_blank() {
                continue;
            }
            let mut best: Option<(u64, f64)> = None;
            for (tid, frames) in &track_frames {
                let Some(mask) = frames.get(&fm.frame) else {
                    continue;
                };
                let (inter, union) = mask.overlap(&fm.mask)?;
                if union == 0 {
                    continue;
                }
                let iou = inter as f64 / union as f64;
                if iou > 0.5 && best.is_none_or(|(_, b)| iou > b) {
                    best = Some((*tid, iou));
                }
            }
            if let Some((tid, _)) = best {
                if let Some(prev) = last {
                    if prev != tid {
                        switches += 1;
                    }
                }
                last = Some(tid);
            }
        }
    }
    Ok(switches)
}
