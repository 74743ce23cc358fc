//! Deterministic synthetic video bundles for exercising the matching
//! strategies at desk scale.
//!
//! Each scenario lays out one instance per grid cell as an axis-aligned
//! rectangle on a 64x64 mask grid, gives every instance a random unit
//! anchor embedding (pairwise cosine below 0.3 by rejection), and emits
//! per-frame embeddings as `anchor + noise`. The classification feature
//! map is the sum of each anchor spread over its instance's mask, and the
//! text embeddings are the anchors themselves, so ground-truth categories
//! are recoverable by mask pooling. The seed fully determines all bytes.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::classifier::resize_masks_nearest;
use crate::error::{Error, Result};
use crate::evaluator::{FrameMask, GtInstance, Mask};
use crate::tensor::Tensor;

use super::bundle::{
    write_json_atomic, BundleManifest, CategoryEntry, FrameEntry, GroundTruthFile, VideoBundle,
};
use super::tensor_file;

/// Mask grid side length.
pub const MASK_GRID: usize = 64;
/// Classification feature-map grid side length.
pub const CLIP_GRID: usize = 16;

const MAX_ANCHOR_ATTEMPTS: usize = 10_000;
const ANCHOR_MAX_COSINE: f32 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioKind {
    /// Every instance persists unchanged.
    Stable,
    /// Two instances' queries emit junk for a window, then recover.
    DisappearReappear,
    /// Two instances slide together, merge, and separate again.
    OcclusionSwap,
    /// One frame where every query emits junk.
    NoisyFrame,
}

impl ScenarioKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ScenarioKind::Stable => "stable",
            ScenarioKind::DisappearReappear => "disappear_reappear",
            ScenarioKind::OcclusionSwap => "occlusion_swap",
            ScenarioKind::NoisyFrame => "noisy_frame",
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stable" => Ok(ScenarioKind::Stable),
            "disappear_reappear" => Ok(ScenarioKind::DisappearReappear),
            "occlusion_swap" => Ok(ScenarioKind::OcclusionSwap),
            "noisy_frame" => Ok(ScenarioKind::NoisyFrame),
            other => Err(Error::input(format!(
                "unknown scenario kind '{other}' (expected stable, disappear_reappear, occlusion_swap, or noisy_frame)"
            ))),
        }
    }
}

/// Everything that determines a synthetic bundle.
#[derive(Debug, Clone, Copy)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    pub num_instances: usize,
    pub frames: usize,
    pub embedding_dim: usize,
    pub noise: f32,
    /// Disappearance window length (disappear_reappear only).
    pub window: usize,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn new(kind: ScenarioKind, seed: u64) -> Self {
        ScenarioSpec {
            kind,
            num_instances: 8,
            frames: 15,
            embedding_dim: 64,
            noise: 0.0,
            window: 2,
            seed,
        }
    }

    pub fn bundle_name(&self) -> String {
        format!("{}_s{}", self.kind, self.seed)
    }

    fn validate(&self) -> Result<()> {
        if self.num_instances == 0 || self.frames == 0 || self.embedding_dim == 0 {
            return Err(Error::input(
                "scenario needs at least one instance, frame, and embedding dimension".to_string(),
            ));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(Error::input("noise scale must be finite and >= 0".to_string()));
        }
        match self.kind {
            ScenarioKind::DisappearReappear => {
                if self.num_instances < 2 {
                    return Err(Error::input(
                        "disappear_reappear needs at least two instances".to_string(),
                    ));
                }
                if self.window == 0 || self.window + 2 > self.frames {
                    return Err(Error::input(format!(
                        "window {} does not fit in {} frames with room to reappear",
                        self.window, self.frames
                    )));
                }
            }
            ScenarioKind::OcclusionSwap => {
                if self.num_instances < 2 {
                    return Err(Error::input(
                        "occlusion_swap needs at least two instances".to_string(),
                    ));
                }
                if self.frames < 5 {
                    return Err(Error::input(
                        "occlusion_swap needs at least five frames".to_string(),
                    ));
                }
            }
            ScenarioKind::Stable | ScenarioKind::NoisyFrame => {}
        }
        let cells = cells_per_row(self.num_instances);
        if MASK_GRID / cells < 5 {
            return Err(Error::Generation(format!(
                "{} instances do not fit on the {MASK_GRID}x{MASK_GRID} grid",
                self.num_instances
            )));
        }
        Ok(())
    }
}

fn cells_per_row(n: usize) -> usize {
    let mut c = 1;
    while c * c < n {
        c += 1;
    }
    c
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    loop {
        let v: Vec<f32> = (0..dim).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        if norm > 1e-6 {
            return v.iter().map(|x| x / norm).collect();
        }
    }
}

fn cosine(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Draws `n` unit anchors with pairwise cosine below the cap.
fn sample_anchors(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Result<Vec<Vec<f32>>> {
    let mut anchors: Vec<Vec<f32>> = Vec::with_capacity(n);
    let mut attempts = 0;
    while anchors.len() < n {
        attempts += 1;
        if attempts > MAX_ANCHOR_ATTEMPTS {
            return Err(Error::Generation(format!(
                "could not place {n} anchors with pairwise cosine < {ANCHOR_MAX_COSINE} in dimension {dim}"
            )));
        }
        let cand = unit_vector(rng, dim);
        if anchors.iter().all(|a| cosine(a, &cand) < ANCHOR_MAX_COSINE) {
            anchors.push(cand);
        }
    }
    Ok(anchors)
}

/// Axis-aligned rectangle on the mask grid.
#[derive(Debug, Clone, Copy)]
struct Rect {
    y: usize,
    x: usize,
    side: usize,
}

impl Rect {
    fn paint(&self, plane: &mut [f32]) {
        for y in self.y..self.y + self.side {
            for x in self.x..self.x + self.side {
                plane[y * MASK_GRID + x] = 1.0;
            }
        }
    }
}

fn base_rect(instance: usize, cells: usize) -> Rect {
    let cell = MASK_GRID / cells;
    let margin = cell / 5;
    let side = cell - 2 * margin;
    let row = instance / cells;
    let col = instance % cells;
    Rect {
        y: row * cell + margin,
        x: col * cell + margin,
        side,
    }
}

/// Triangle profile peaking at 1.0 on the occlusion midpoint frame.
fn occlusion_alpha(frame: usize, frames: usize) -> f64 {
    let mid = frames / 2;
    let half = (frames / 5).max(2);
    let dist = frame.abs_diff(mid);
    if dist >= half {
        0.0
    } else {
        1.0 - dist as f64 / half as f64
    }
}

struct FrameState {
    embeddings: Vec<Vec<f32>>,
    /// One rect per instance; None means not visible this frame.
    rects: Vec<Option<Rect>>,
}

fn build_frame(spec: &ScenarioSpec, anchors: &[Vec<f32>], frame: usize, rng: &mut ChaCha8Rng) -> FrameState {
    let n = spec.num_instances;
    let dim = spec.embedding_dim;
    let cells = cells_per_row(n);

    // Base embeddings: anchor plus isotropic noise, drawn in instance
    // order to keep the stream deterministic.
    let mut embeddings: Vec<Vec<f32>> = Vec::with_capacity(n);
    for anchor in anchors {
        let mut e = anchor.clone();
        for v in e.iter_mut() {
            let g: f32 = rng.sample(StandardNormal);
            *v += spec.noise * g;
        }
        embeddings.push(e);
    }
    let mut rects: Vec<Option<Rect>> = (0..n).map(|i| Some(base_rect(i, cells))).collect();

    match spec.kind {
        ScenarioKind::Stable => {}
        ScenarioKind::DisappearReappear => {
            let start = (spec.frames - spec.window) / 2;
            if frame >= start && frame < start + spec.window {
                for i in 0..2 {
                    embeddings[i] = unit_vector(rng, dim);
                    rects[i] = None;
                }
            }
        }
        ScenarioKind::OcclusionSwap => {
            let alpha = occlusion_alpha(frame, spec.frames);
            if alpha > 0.0 {
                let r0 = base_rect(0, cells);
                let r1 = base_rect(1, cells);
                let mid_y = (r0.y + r1.y) as f64 / 2.0;
                let mid_x = (r0.x + r1.x) as f64 / 2.0;
                let lerp = |from: usize, to: f64| -> usize {
                    (from as f64 + alpha * (to - from as f64)).round() as usize
                };
                rects[0] = Some(Rect {
                    y: lerp(r0.y, mid_y),
                    x: lerp(r0.x, mid_x),
                    side: r0.side,
                });
                rects[1] = Some(Rect {
                    y: lerp(r1.y, mid_y),
                    x: lerp(r1.x, mid_x),
                    side: r1.side,
                });
            }
            if alpha >= 0.999 {
                // Fully merged: both queries see the union and emit the
                // blended embedding (plus fresh noise).
                let mut blend = vec![0.0f32; dim];
                for c in 0..dim {
                    blend[c] = 0.5 * (anchors[0][c] + anchors[1][c]);
                }
                for i in 0..2 {
                    let mut e = blend.clone();
                    for v in e.iter_mut() {
                        let g: f32 = rng.sample(StandardNormal);
                        *v += spec.noise * g;
                    }
                    embeddings[i] = e;
                }
            }
        }
        ScenarioKind::NoisyFrame => {
            if frame == spec.frames / 2 {
                for e in embeddings.iter_mut() {
                    *e = unit_vector(rng, dim);
                }
            }
        }
    }

    FrameState { embeddings, rects }
}

/// Generates a bundle on disk and returns it opened.
pub fn synth_generate(spec: &ScenarioSpec, out_dir: &Path) -> Result<VideoBundle> {
    spec.validate()?;
    let n = spec.num_instances;
    let dim = spec.embedding_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let anchors = sample_anchors(&mut rng, n, dim)?;

    std::fs::create_dir_all(out_dir.join("frames")).map_err(|e| Error::io(out_dir, e))?;

    let mut frame_entries = Vec::with_capacity(spec.frames);
    let mut gt_masks: Vec<Vec<FrameMask>> = vec![Vec::new(); n];

    for f in 0..spec.frames {
        let state = build_frame(spec, &anchors, f, &mut rng);

        let emb = Tensor::new(vec![n, dim], state.embeddings.concat())?;

        let mut mask_data = vec![0.0f32; n * MASK_GRID * MASK_GRID];
        for (i, rect) in state.rects.iter().enumerate() {
            if let Some(r) = rect {
                r.paint(&mut mask_data[i * MASK_GRID * MASK_GRID..(i + 1) * MASK_GRID * MASK_GRID]);
            }
        }
        let masks = Tensor::new(vec![n, MASK_GRID, MASK_GRID], mask_data)?;

        // Classification features on the coarse grid: each anchor spread
        // over its instance's (downsampled) mask.
        let down = resize_masks_nearest(&masks, CLIP_GRID, CLIP_GRID)?;
        let mut clip = vec![0.0f32; dim * CLIP_GRID * CLIP_GRID];
        for i in 0..n {
            for y in 0..CLIP_GRID {
                for x in 0..CLIP_GRID {
                    if down.at3(i, y, x) > 0.5 {
                        for c in 0..dim {
                            clip[(c * CLIP_GRID + y) * CLIP_GRID + x] += anchors[i][c];
                        }
                    }
                }
            }
        }
        let clip = Tensor::new(vec![dim, CLIP_GRID, CLIP_GRID], clip)?;

        let obj = Tensor::new(vec![n, 2], [0.9f32, 0.1].repeat(n))?;
        let iou = Tensor::new(vec![n, 1], vec![0.9f32; n])?;

        let rel = |suffix: &str| format!("frames/f{f:03}_{suffix}.tnsr");
        tensor_file::save_f32(&out_dir.join(rel("emb")), &emb)?;
        tensor_file::save_f32(&out_dir.join(rel("masks")), &masks)?;
        tensor_file::save_f32(&out_dir.join(rel("obj")), &obj)?;
        tensor_file::save_f32(&out_dir.join(rel("iou")), &iou)?;
        tensor_file::save_f32(&out_dir.join(rel("clip")), &clip)?;
        frame_entries.push(FrameEntry {
            query_embeddings: rel("emb"),
            mask_probs: Some(rel("masks")),
            pixel_features: None,
            object_scores: rel("obj"),
            iou_scores: rel("iou"),
            clip_features: rel("clip"),
        });

        for (i, rect) in state.rects.iter().enumerate() {
            if rect.is_some() {
                let plane = &masks.data()[i * MASK_GRID * MASK_GRID..(i + 1) * MASK_GRID * MASK_GRID];
                gt_masks[i].push(FrameMask {
                    frame: f,
                    mask: Mask::from_probs(MASK_GRID, MASK_GRID, plane)?,
                });
            }
        }
    }

    let text = Tensor::new(vec![n, dim], anchors.concat())?;
    tensor_file::save_f32(&out_dir.join("text_embeddings.tnsr"), &text)?;

    let gt = GroundTruthFile {
        video: spec.bundle_name(),
        video_length: spec.frames,
        instances: gt_masks
            .into_iter()
            .enumerate()
            .map(|(i, masks)| GtInstance { category: i, masks })
            .collect(),
    };
    write_json_atomic(&out_dir.join("ground_truth.json"), &gt)?;

    let manifest = BundleManifest {
        name: spec.bundle_name(),
        categories: (0..n)
            .map(|i| CategoryEntry {
                name: format!("cat_{i:02}"),
                novel: i >= n / 2,
            })
            .collect(),
        text_embeddings: "text_embeddings.tnsr".to_string(),
        frames: frame_entries,
        ground_truth: Some("ground_truth.json".to_string()),
    };
    write_json_atomic(&out_dir.join("manifest.json"), &manifest)?;

    VideoBundle::open(out_dir)
}
