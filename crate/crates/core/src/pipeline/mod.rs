//! Per-video orchestration (matching, classification, prediction export),
//! bundle discovery, and the strategy-ablation harness.

pub mod bundle;
pub mod synth;
pub mod tensor_file;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::classifier::classify_frame;
use crate::error::{Error, Result};
use crate::evaluator::{
    count_id_switches, default_thresholds, evaluate, FrameMask, Mask, VideoInstancePrediction,
    VideoPair,
};
use crate::mask_head::{predict_masks, MaskSet};
use crate::matcher::{Strategy, Tracker};
use crate::par;

pub use bundle::{
    BundleManifest, CategoryEntry, FrameEntry, GroundTruthFile, NovelFile, PredictionsFile,
    VideoBundle,
};
pub use synth::{synth_generate, ScenarioKind, ScenarioSpec};

/// Runs one video bundle through matching and classification.
///
/// Per frame: obtain mask probabilities (given, or derived from pixel
/// features), step the tracker on the query embeddings, reorder masks and
/// scores into slot order, then mask-pool, classify, and refine. Each
/// track's category and confidence come from its refined scores averaged
/// over the frames where its mask is nonempty; tracks that never surface
/// a mask are omitted.
pub fn run_video(bundle: &VideoBundle, strategy: Strategy) -> Result<PredictionsFile> {
    let text = bundle.text_embeddings()?;
    let num_categories = text.num_categories();
    let text_dim = text.embeddings().shape()[1];
    let mut tracker = Tracker::new(strategy)?;

    struct SlotAcc {
        refined_sum: Vec<f64>,
        frames_with_mask: usize,
        masks: Vec<FrameMask>,
    }
    let mut slots: Vec<SlotAcc> = Vec::new();
    let mut expected: Option<(usize, usize, usize)> = None; // (n, h, w)

    for f in 0..bundle.num_frames() {
        let frame = bundle.load_frame(f)?;
        let (n, _) = frame.query_embeddings.dims2()?;

        let probs = match (&frame.mask_probs, &frame.pixel_features) {
            (Some(p), _) => p.clone(),
            (None, Some(feat)) => predict_masks(&frame.query_embeddings, feat)?,
            (None, None) => unreachable!("manifest validation requires a mask source"),
        };
        let pred = MaskSet::new(probs, frame.object_scores, frame.iou_scores)?;
        let (pn, h, w) = pred.probs.dims3()?;
        if pn != n {
            return Err(Error::input(format!(
                "frame {f}: {pn} masks for {n} queries"
            )));
        }
        match expected {
            None => {
                expected = Some((n, h, w));
                slots = (0..n)
                    .map(|_| SlotAcc {
                        refined_sum: vec![0.0; num_categories],
                        frames_with_mask: 0,
                        masks: Vec::new(),
                    })
                    .collect();
            }
            Some((n0, h0, w0)) => {
                if n0 != n {
                    return Err(Error::input(format!(
                        "frame {f}: query count changed from {n0} to {n}"
                    )));
                }
                if (h0, w0) != (h, w) {
                    return Err(Error::input(format!(
                        "frame {f}: mask grid changed from {h0}x{w0} to {h}x{w}"
                    )));
                }
            }
        }
        let (clip_d, _, _) = frame.clip_features.dims3()?;
        if clip_d != text_dim {
            return Err(Error::input(format!(
                "frame {f}: classification features have {clip_d} channels but text embeddings have {text_dim}"
            )));
        }

        let step = tracker.step(&frame.query_embeddings)?;
        let probs_slots = step.assignment.permute_rows(&pred.probs)?;
        let obj_slots = step.assignment.permute_rows(&pred.obj_scores)?;
        let iou_slots = step.assignment.permute_rows(&pred.iou_scores)?;

        let scores = classify_frame(&frame.clip_features, &probs_slots, &obj_slots, &iou_slots, &text)?;

        let hw = h * w;
        for (slot, acc) in slots.iter_mut().enumerate() {
            let plane = &probs_slots.data()[slot * hw..(slot + 1) * hw];
            let mask = Mask::from_probs(h, w, plane)?;
            if mask.is_blank() {
                continue;
            }
            acc.masks.push(FrameMask { frame: f, mask });
            acc.frames_with_mask += 1;
            for (sum, &v) in acc.refined_sum.iter_mut().zip(scores.refined.row(slot)) {
                *sum += v as f64;
            }
        }
    }

    let mut predictions = Vec::new();
    for (slot, acc) in slots.into_iter().enumerate() {
        if acc.frames_with_mask == 0 {
            continue;
        }
        let avg: Vec<f64> = acc
            .refined_sum
            .iter()
            .map(|s| s / acc.frames_with_mask as f64)
            .collect();
        let mut category = 0usize;
        for (c, &v) in avg.iter().enumerate() {
            if v > avg[category] {
                category = c;
            }
        }
        predictions.push(VideoInstancePrediction {
            track_id: slot as u64,
            category,
            confidence: avg[category],
            masks: acc.masks,
        });
    }

    Ok(PredictionsFile {
        video: bundle.name().to_string(),
        video_length: bundle.num_frames(),
        predictions,
    })
}

/// Opens a bundle directory, runs it, and writes the predictions JSON.
pub fn run_video_to_file(bundle_dir: &Path, strategy: Strategy, out: &Path) -> Result<()> {
    let bundle = VideoBundle::open(bundle_dir)?;
    let preds = run_video(&bundle, strategy)?;
    bundle::write_json_atomic(out, &preds)
}

/// One line of the strategy-ablation table.
#[derive(Debug, Clone)]
pub struct AblationRow {
    pub strategy: &'static str,
    pub memory: Option<usize>,
    pub k: Option<usize>,
    pub ap: f64,
    pub ap_n: Option<f64>,
    pub id_switches: usize,
    pub runtime_ms: u128,
}

/// Default strategy grid: adjacent, long-term, and top-K over
/// T in {3,5,7,9,11} x K in {1,3,5,7} with K <= T.
pub fn default_strategy_grid() -> Vec<Strategy> {
    let mut out = vec![Strategy::Adjacent, Strategy::LongTerm];
    for &t in &[3usize, 5, 7, 9, 11] {
        for &k in &[1usize, 3, 5, 7] {
            if k <= t {
                out.push(Strategy::TopK { memory: t, k });
            }
        }
    }
    out
}

/// Subdirectories of `dir` containing a `manifest.json`, sorted by name.
pub fn discover_bundles(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut found = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_dir() && path.join("manifest.json").is_file() {
            found.push(path);
        }
    }
    found.sort();
    if found.is_empty() {
        return Err(Error::input(format!(
            "no bundle directories with manifest.json under {}",
            dir.display()
        )));
    }
    Ok(found)
}

/// Runs every strategy over every bundle and aggregates AP and identity
/// switches per strategy. All bundles must carry ground truth and agree
/// on the category list.
pub fn ablate(bundle_dirs: &[PathBuf], strategies: &[Strategy]) -> Result<Vec<AblationRow>> {
    if bundle_dirs.is_empty() {
        return Err(Error::input("ablation needs at least one bundle".to_string()));
    }
    let bundles: Vec<VideoBundle> = bundle_dirs
        .iter()
        .map(|d| VideoBundle::open(d))
        .collect::<Result<_>>()?;
    let ground_truths: Vec<GroundTruthFile> = bundles
        .iter()
        .map(|b| {
            b.ground_truth()?.ok_or_else(|| {
                Error::input(format!("bundle {} has no ground truth", b.name()))
            })
        })
        .collect::<Result<_>>()?;
    let novel: BTreeSet<usize> = bundles[0].novel_set();
    for b in &bundles[1..] {
        if b.novel_set() != novel
            || b.manifest().categories.len() != bundles[0].manifest().categories.len()
        {
            return Err(Error::input(format!(
                "bundle {} disagrees with {} on categories",
                b.name(),
                bundles[0].name()
            )));
        }
    }

    // Independent (strategy, bundle) runs, fanned out in fixed order.
    let tasks: Vec<(usize, usize)> = (0..strategies.len())
        .flat_map(|s| (0..bundles.len()).map(move |b| (s, b)))
        .collect();
    let runs: Vec<Result<(PredictionsFile, u128)>> = par::map_collect(&tasks, |&(s, b)| {
        let start = Instant::now();
        let preds = run_video(&bundles[b], strategies[s])?;
        Ok((preds, start.elapsed().as_millis()))
    });
    let runs: Vec<(PredictionsFile, u128)> = runs.into_iter().collect::<Result<_>>()?;

    let thresholds = default_thresholds();
    let mut rows = Vec::with_capacity(strategies.len());
    for (s, strategy) in strategies.iter().enumerate() {
        let mut pairs = Vec::with_capacity(bundles.len());
        let mut id_switches = 0usize;
        let mut runtime_ms = 0u128;
        for b in 0..bundles.len() {
            let (preds, ms) = &runs[s * bundles.len() + b];
            let gt = ground_truths[b].to_ground_truth();
            id_switches += count_id_switches(&preds.predictions, &gt)?;
            runtime_ms += ms;
            pairs.push(VideoPair {
                predictions: preds.predictions.clone(),
                ground_truth: gt,
            });
        }
        let ap = evaluate(&pairs, &novel, &thresholds)?;
        let (memory, k) = match strategy {
            Strategy::TopK { memory, k } => (Some(*memory), Some(*k)),
            _ => (None, None),
        };
        rows.push(AblationRow {
            strategy: strategy.label(),
            memory,
            k,
            ap: ap.ap,
            ap_n: ap.ap_n,
            id_switches,
            runtime_ms,
        });
    }
    Ok(rows)
}

/// Writes the ablation table as CSV with the fixed column order
/// `strategy,T,K,AP,AP_n,id_switches,runtime_ms`.
pub fn write_ablation_csv(rows: &[AblationRow], path: &Path) -> Result<()> {
    let mut out = String::from("strategy,T,K,AP,AP_n,id_switches,runtime_ms\n");
    for r in rows {
        let t = r.memory.map_or_else(|| "-".to_string(), |v| v.to_string());
        let k = r.k.map_or_else(|| "-".to_string(), |v| v.to_string());
        let ap_n = r
            .ap_n
            .map_or_else(|| "-".to_string(), |v| format!("{v:.6}"));
        out.push_str(&format!(
            "{},{},{},{:.6},{},{},{}\n",
            r.strategy, t, k, r.ap, ap_n, r.id_switches, r.runtime_ms
        ));
    }
    tensor_file::write_atomic(path, out.as_bytes())
}

/// Discovers bundles, runs the ablation, and writes the CSV.
pub fn ablate_to_csv(bundles_dir: &Path, strategies: &[Strategy], out: &Path) -> Result<()> {
    let dirs = discover_bundles(bundles_dir)?;
    let rows = ablate(&dirs, strategies)?;
    write_ablation_csv(&rows, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stable_bundle(dir: &Path, frames: usize, seed: u64) -> VideoBundle {
        let mut spec = ScenarioSpec::new(ScenarioKind::Stable, seed);
        spec.frames = frames;
        spec.num_instances = 4;
        synth_generate(&spec, dir).unwrap()
    }

    #[test]
    fn single_frame_bundle_gets_identity_tracks_and_right_categories() {
        let dir = tempfile::tempdir().unwrap();
        let bundle = stable_bundle(dir.path(), 1, 5);
        let preds = run_video(&bundle, Strategy::Adjacent).unwrap();
        assert_eq!(preds.predictions.len(), 4);
        for (slot, p) in preds.predictions.iter().enumerate() {
            assert_eq!(p.track_id, slot as u64);
            // Anchors double as text embeddings, so each instance's
            // pooled feature names its own category.
            assert_eq!(p.category, slot);
            assert!(p.confidence > 0.5);
            assert_eq!(p.masks.len(), 1);
        }
    }

    #[test]
    fn identical_frames_stay_under_one_track_each() {
        let dir = tempfile::tempdir().unwrap();
        let bundle = stable_bundle(dir.path(), 2, 6);
        let preds = run_video(&bundle, Strategy::top_k(3, 1).unwrap()).unwrap();
        assert_eq!(preds.predictions.len(), 4);
        for p in &preds.predictions {
            assert_eq!(p.masks.len(), 2);
            assert_eq!(p.masks[0].mask, p.masks[1].mask);
        }
    }

    #[test]
    fn run_video_output_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let bundle = stable_bundle(dir.path(), 3, 7);
        let a = serde_json::to_vec(&run_video(&bundle, Strategy::LongTerm).unwrap()).unwrap();
        let b = serde_json::to_vec(&run_video(&bundle, Strategy::LongTerm).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ablation_rows_are_ordered_and_stable_suite_is_flat() {
        let root = tempfile::tempdir().unwrap();
        for seed in [1u64, 2] {
            let mut spec = ScenarioSpec::new(ScenarioKind::Stable, seed);
            spec.frames = 4;
            spec.num_instances = 4;
            synth_generate(&spec, &root.path().join(format!("b{seed}"))).unwrap();
        }
        let dirs = discover_bundles(root.path()).unwrap();
        let strategies = vec![
            Strategy::Adjacent,
            Strategy::LongTerm,
            Strategy::top_k(3, 1).unwrap(),
            Strategy::top_k(9, 5).unwrap(),
        ];
        let rows = ablate(&dirs, &strategies).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[0].strategy, "adjacent");
        assert_eq!(rows[1].strategy, "longterm");
        assert_eq!(rows[2].memory, Some(3));
        assert_eq!(rows[3].memory, Some(9));
        // A stable scene is perfectly tracked by every strategy.
        for row in &rows {
            assert_eq!(row.ap, 1.0);
            assert_eq!(row.ap_n, Some(1.0));
            assert_eq!(row.id_switches, 0);
        }

        let csv_path = root.path().join("table.csv");
        write_ablation_csv(&rows, &csv_path).unwrap();
        let csv = std::fs::read_to_string(&csv_path).unwrap();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "strategy,T,K,AP,AP_n,id_switches,runtime_ms"
        );
        assert!(lines.next().unwrap().starts_with("adjacent,-,-,1.000000,1.000000,0,"));
    }

    #[test]
    fn ablate_requires_ground_truth() {
        let dir = tempfile::tempdir().unwrap();
        let bundle_dir = dir.path().join("b");
        stable_bundle(&bundle_dir, 2, 8);
        // Strip the ground truth from the manifest.
        let manifest_path = bundle_dir.join("manifest.json");
        let mut manifest: BundleManifest = bundle::read_json(&manifest_path).unwrap();
        manifest.ground_truth = None;
        bundle::write_json_atomic(&manifest_path, &manifest).unwrap();
        assert!(matches!(
            ablate(&[bundle_dir], &[Strategy::Adjacent]),
            Err(Error::Input(_))
        ));
    }
}
