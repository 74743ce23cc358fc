//! Weighted open-vocabulary mask classification: mask pooling of a
//! classification feature map, cosine scores against category text
//! embeddings, refinement by object and mask-quality scores, and the
//! final per-query category choice.

use crate::error::{Error, Result};
use crate::mask_head::OBJECT_COLUMN;
use crate::tensor::Tensor;

/// Mask binarisation threshold (strict `>`).
pub const MASK_THRESHOLD: f32 = 0.5;

/// Category text embeddings, one row per category name.
#[derive(Debug, Clone)]
pub struct TextEmbeddings {
    embeddings: Tensor<f32>,
    names: Vec<String>,
}

impl TextEmbeddings {
    pub fn new(embeddings: Tensor<f32>, names: Vec<String>) -> Result<Self> {
        let (l, _) = embeddings.dims2()?;
        if l == 0 || names.len() != l {
            return Err(Error::input(format!(
                "need one name per embedding row, got {l} rows and {} names",
                names.len()
            )));
        }
        for i in 0..l {
            if embeddings.row(i).iter().all(|&x| x == 0.0) {
                return Err(Error::input(format!("text embedding {i} has zero norm")));
            }
        }
        Ok(TextEmbeddings { embeddings, names })
    }

    pub fn embeddings(&self) -> &Tensor<f32> {
        &self.embeddings
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn num_categories(&self) -> usize {
        self.names.len()
    }
}

/// Raw and refined classification scores with the chosen categories.
#[derive(Debug, Clone)]
pub struct ClassScores {
    pub raw: Tensor<f32>,
    pub refined: Tensor<f32>,
    pub categories: Vec<usize>,
    pub confidences: Vec<f32>,
}

/// Nearest-neighbour resize of a mask stack onto a new grid. Preserves
/// thresholded values exactly, which is why it is used instead of any
/// interpolating resample.
pub fn resize_masks_nearest(masks: &Tensor<f32>, h: usize, w: usize) -> Result<Tensor<f32>> {
    let (n, mh, mw) = masks.dims3()?;
    if mh == h && mw == w {
        return Ok(masks.clone());
    }
    let mut out = vec![0.0f32; n * h * w];
    for q in 0..n {
        for y in 0..h {
            let sy = y * mh / h;
            for x in 0..w {
                let sx = x * mw / w;
                out[(q * h + y) * w + x] = masks.at3(q, sy, sx);
            }
        }
    }
    Tensor::new(vec![n, h, w], out)
}

/// Mask pooling: the mean feature vector over the pixels where each mask
/// exceeds 0.5. A mask with no pixel above threshold pools to the zero
/// vector. Masks on a different grid are nearest-neighbour resized onto
/// the feature grid first.
pub fn mask_pool(feat: &Tensor<f32>, masks: &Tensor<f32>) -> Result<Tensor<f32>> {
    let (d, h, w) = feat.dims3()?;
    let (n, mh, mw) = masks.dims3()?;
    let masks = if (mh, mw) == (h, w) {
        masks.clone()
    } else {
        resize_masks_nearest(masks, h, w)?
    };
    let mut out = vec![0.0f32; n * d];
    for q in 0..n {
        let mut count = 0usize;
        let mut sums = vec![0.0f64; d];
        for y in 0..h {
            for x in 0..w {
                if masks.at3(q, y, x) > MASK_THRESHOLD {
                    count += 1;
                    for (c, sum) in sums.iter_mut().enumerate() {
                        *sum += feat.at3(c, y, x) as f64;
                    }
                }
            }
        }
        if count > 0 {
            for c in 0..d {
                out[q * d + c] = (sums[c] / count as f64) as f32;
            }
        }
    }
    Tensor::new(vec![n, d], out)
}

/// Cosine classification scores between pooled visual features and text
/// embeddings. Zero visual rows (empty masks) score 0 everywhere.
pub fn classify(visual: &Tensor<f32>, text: &TextEmbeddings) -> Result<Tensor<f32>> {
    let (_, dv) = visual.dims2()?;
    let (_, dt) = text.embeddings().dims2()?;
    if dv != dt {
        return Err(Error::shape(format!(
            "visual dimension {dv} does not match text dimension {dt}"
        )));
    }
    visual.cosine_rows(text.embeddings())
}

/// Refines raw scores per query by the "is object" probability and the
/// predicted mask quality: `refined(n, l) = raw(n, l) * obj(n) * iou(n)`.
pub fn refine(raw: &Tensor<f32>, obj: &Tensor<f32>, iou: &Tensor<f32>) -> Result<Tensor<f32>> {
    let (n, l) = raw.dims2()?;
    let (no, co) = obj.dims2()?;
    let (ni, ci) = iou.dims2()?;
    if no != n || co != 2 || ni != n || ci != 1 {
        return Err(Error::shape(format!(
            "refine expects obj {n}x2 and iou {n}x1, got {no}x{co} and {ni}x{ci}"
        )));
    }
    if iou.data().iter().any(|&v| v < 0.0) {
        return Err(Error::input("iou scores must be nonnegative".to_string()));
    }
    let mut out = vec![0.0f32; n * l];
    for q in 0..n {
        let weight = obj.at2(q, OBJECT_COLUMN) * iou.at2(q, 0);
        for c in 0..l {
            out[q * l + c] = raw.at2(q, c) * weight;
        }
    }
    Tensor::new(vec![n, l], out)
}

/// Picks each query's category by arg-max over the refined row; ties go to
/// the smallest index. Returns (category indices, confidences).
pub fn assign_categories(refined: &Tensor<f32>) -> Result<(Vec<usize>, Vec<f32>)> {
    let (n, l) = refined.dims2()?;
    if l == 0 {
        return Err(Error::input("need at least one category".to_string()));
    }
    let mut categories = Vec::with_capacity(n);
    let mut confidences = Vec::with_capacity(n);
    for q in 0..n {
        let row = refined.row(q);
        let mut best = 0usize;
        for (c, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = c;
            }
        }
        categories.push(best);
        confidences.push(row[best]);
    }
    Ok((categories, confidences))
}

/// Full classification of one frame's queries: pool, score, refine, pick.
pub fn classify_frame(
    feat: &Tensor<f32>,
    masks: &Tensor<f32>,
    obj: &Tensor<f32>,
    iou: &Tensor<f32>,
    text: &TextEmbeddings,
) -> Result<ClassScores> {
    let visual = mask_pool(feat, masks)?;
    let raw = classify(&visual, text)?;
    let refined = refine(&raw, obj, iou)?;
    let (categories, confidences) = assign_categories(&refined)?;
    Ok(ClassScores {
        raw,
        refined,
        categories,
        confidences,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn text(rows: &[&[f32]]) -> TextEmbeddings {
        let t = Tensor::new(vec![rows.len(), rows[0].len()], rows.concat()).unwrap();
        let names = (0..rows.len()).map(|i| format!("cat_{i}")).collect();
        TextEmbeddings::new(t, names).unwrap()
    }

    #[test]
    fn mask_pool_constant_field_returns_constant() {
        let feat = Tensor::new(vec![3, 2, 2], vec![7.5; 12]).unwrap();
        let masks = Tensor::new(vec![1, 2, 2], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let pooled = mask_pool(&feat, &masks).unwrap();
        assert_eq!(pooled.data(), &[7.5, 7.5, 7.5]);
    }

    #[test]
    fn mask_pool_full_mask_is_spatial_mean() {
        let feat = Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 6.0]).unwrap();
        let masks = Tensor::new(vec![1, 2, 2], vec![1.0; 4]).unwrap();
        let pooled = mask_pool(&feat, &masks).unwrap();
        assert_eq!(pooled.data(), &[3.0]);
    }

    #[test]
    fn mask_pool_empty_mask_gives_zero_vector() {
        let feat = Tensor::new(vec![2, 2, 2], vec![5.0; 8]).unwrap();
        let masks = Tensor::new(vec![1, 2, 2], vec![0.5; 4]).unwrap(); // 0.5 is not > 0.5
        let pooled = mask_pool(&feat, &masks).unwrap();
        assert_eq!(pooled.data(), &[0.0, 0.0]);
    }

    #[test]
    fn mask_pool_is_pixel_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let d = 3;
        let (h, w) = (2, 3);
        let feat_data: Vec<f32> = (0..d * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mask_data: Vec<f32> = (0..h * w).map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }).collect();
        let feat = Tensor::new(vec![d, h, w], feat_data.clone()).unwrap();
        let masks = Tensor::new(vec![1, h, w], mask_data.clone()).unwrap();
        let base = mask_pool(&feat, &masks).unwrap();

        // Apply one fixed pixel permutation to both tensors.
        let perm = [3usize, 1, 5, 0, 4, 2];
        let mut feat_p = vec![0.0f32; d * h * w];
        let mut mask_p = vec![0.0f32; h * w];
        for (dst, &src) in perm.iter().enumerate() {
            mask_p[dst] = mask_data[src];
            for c in 0..d {
                feat_p[c * h * w + dst] = feat_data[c * h * w + src];
            }
        }
        let out = mask_pool(
            &Tensor::new(vec![d, h, w], feat_p).unwrap(),
            &Tensor::new(vec![1, h, w], mask_p).unwrap(),
        )
        .unwrap();
        for (a, b) in base.data().iter().zip(out.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn mask_pool_resizes_mismatched_grids() {
        // 2x2 feature grid, 4x4 mask covering the top-left quadrant.
        let feat = Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut mask = vec![0.0f32; 16];
        for y in 0..2 {
            for x in 0..2 {
                mask[y * 4 + x] = 1.0;
            }
        }
        let masks = Tensor::new(vec![1, 4, 4], mask).unwrap();
        let pooled = mask_pool(&feat, &masks).unwrap();
        assert_eq!(pooled.data(), &[1.0]);
    }

    #[test]
    fn classify_exact_and_orthogonal_rows() {
        let t = text(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]]);
        let visual = Tensor::new(vec![2, 3], vec![2.0, 0.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let raw = classify(&visual, &t).unwrap();
        assert!((raw.at2(0, 0) - 1.0).abs() < 1e-6);
        assert!(raw.at2(0, 1).abs() < 1e-6);
        assert_eq!(raw.row(1), &[0.0, 0.0]); // orthogonal to both
    }

    #[test]
    fn classify_zero_rows_score_zero() {
        let t = text(&[&[1.0, 1.0]]);
        let visual = Tensor::new(vec![1, 2], vec![0.0, 0.0]).unwrap();
        let raw = classify(&visual, &t).unwrap();
        assert_eq!(raw.data(), &[0.0]);
    }

    #[test]
    fn classify_matches_pairwise_cosine_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let visual = Tensor::new(
            vec![3, 4],
            (0..12).map(|_| rng.gen_range(-1.0f32..1.0)).collect(),
        )
        .unwrap();
        let text_rows: Vec<Vec<f32>> = (0..4)
            .map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let refs: Vec<&[f32]> = text_rows.iter().map(|r| r.as_slice()).collect();
        let t = text(&refs);
        let raw = classify(&visual, &t).unwrap();
        for q in 0..3 {
            for c in 0..4 {
                let v = visual.row(q);
                let tr = &text_rows[c];
                let dot: f32 = v.iter().zip(tr).map(|(a, b)| a * b).sum();
                let nv = v.iter().map(|x| x * x).sum::<f32>().sqrt();
                let nt = tr.iter().map(|x| x * x).sum::<f32>().sqrt();
                assert!((raw.at2(q, c) - dot / (nv * nt)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn classify_is_invariant_to_per_row_text_rescaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        let visual = Tensor::new(
            vec![2, 3],
            (0..6).map(|_| rng.gen_range(-1.0f32..1.0)).collect(),
        )
        .unwrap();
        let rows: Vec<Vec<f32>> = (0..3)
            .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let refs: Vec<&[f32]> = rows.iter().map(|r| r.as_slice()).collect();
        let base = classify(&visual, &text(&refs)).unwrap();

        let scaled_rows: Vec<Vec<f32>> = rows
            .iter()
            .map(|r| {
                let s = rng.gen_range(0.1f32..10.0);
                r.iter().map(|&x| x * s).collect()
            })
            .collect();
        let scaled_refs: Vec<&[f32]> = scaled_rows.iter().map(|r| r.as_slice()).collect();
        let scaled = classify(&visual, &text(&scaled_refs)).unwrap();
        for (a, b) in base.data().iter().zip(scaled.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn refine_multiplies_by_object_and_quality() {
        let raw = Tensor::new(vec![1, 2], vec![0.2, 0.6]).unwrap();
        let obj = Tensor::new(vec![1, 2], vec![0.5, 0.5]).unwrap();
        let iou = Tensor::new(vec![1, 1], vec![0.8]).unwrap();
        let refined = refine(&raw, &obj, &iou).unwrap();
        assert!((refined.at2(0, 0) - 0.08).abs() < 1e-6);
        assert!((refined.at2(0, 1) - 0.24).abs() < 1e-6);
    }

    #[test]
    fn refine_identity_and_suppression() {
        let raw = Tensor::new(vec![2, 2], vec![0.3, -0.4, 0.9, 0.1]).unwrap();
        let obj = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let iou = Tensor::new(vec![2, 1], vec![1.0, 1.0]).unwrap();
        let refined = refine(&raw, &obj, &iou).unwrap();
        assert_eq!(refined.row(0), raw.row(0)); // obj = 1, iou = 1
        assert_eq!(refined.row(1), &[0.0, 0.0]); // obj = 0
    }

    #[test]
    fn refine_rejects_negative_iou() {
        let raw = Tensor::new(vec![1, 1], vec![0.5]).unwrap();
        let obj = Tensor::new(vec![1, 2], vec![0.5, 0.5]).unwrap();
        let iou = Tensor::new(vec![1, 1], vec![-0.2]).unwrap();
        assert!(matches!(refine(&raw, &obj, &iou), Err(Error::Input(_))));
    }

    #[test]
    fn refine_preserves_per_query_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        for _ in 0..200 {
            let n = rng.gen_range(1..6);
            let l = rng.gen_range(2..8);
            let raw = Tensor::new(
                vec![n, l],
                (0..n * l).map(|_| rng.gen_range(-1.0f32..1.0)).collect(),
            )
            .unwrap();
            let obj_rows: Vec<f32> = (0..n)
                .flat_map(|_| {
                    let p = rng.gen_range(0.01f32..0.99);
                    vec![p, 1.0 - p]
                })
                .collect();
            let obj = Tensor::new(vec![n, 2], obj_rows).unwrap();
            let iou = Tensor::new(vec![n, 1], (0..n).map(|_| rng.gen_range(0.01f32..1.0)).collect()).unwrap();
            let refined = refine(&raw, &obj, &iou).unwrap();
            let (cats_raw, _) = assign_categories(&raw).unwrap();
            let (cats_ref, _) = assign_categories(&refined).unwrap();
            assert_eq!(cats_raw, cats_ref);
        }
    }

    #[test]
    fn refine_is_monotone_in_iou_for_nonnegative_raw() {
        let raw = Tensor::new(vec![1, 3], vec![0.1, 0.5, 0.0]).unwrap();
        let obj = Tensor::new(vec![1, 2], vec![0.7, 0.3]).unwrap();
        let low = refine(&raw, &obj, &Tensor::new(vec![1, 1], vec![0.2]).unwrap()).unwrap();
        let high = refine(&raw, &obj, &Tensor::new(vec![1, 1], vec![0.9]).unwrap()).unwrap();
        for (l, h) in low.data().iter().zip(high.data()) {
            assert!(h >= l);
        }
    }

    #[test]
    fn assign_categories_argmax_and_ties() {
        let refined = Tensor::new(vec![1, 2], vec![0.1, 0.9]).unwrap();
        let (cats, confs) = assign_categories(&refined).unwrap();
        assert_eq!(cats, vec![1]);
        assert_eq!(confs, vec![0.9]);

        let tied = Tensor::new(vec![1, 3], vec![0.4, 0.4, 0.4]).unwrap();
        let (cats, _) = assign_categories(&tied).unwrap();
        assert_eq!(cats, vec![0]);
    }

    #[test]
    fn assign_categories_matches_linear_scan_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let refined = Tensor::new(
            vec![5, 7],
            (0..35).map(|_| rng.gen_range(-1.0f32..1.0)).collect(),
        )
        .unwrap();
        let (cats, confs) = assign_categories(&refined).unwrap();
        for q in 0..5 {
            let row = refined.row(q);
            let mut best = 0;
            let mut best_v = row[0];
            for (c, &v) in row.iter().enumerate() {
                if v > best_v {
                    best = c;
                    best_v = v;
                }
            }
            assert_eq!(cats[q], best);
            assert_eq!(confs[q], best_v);
        }
    }
}
