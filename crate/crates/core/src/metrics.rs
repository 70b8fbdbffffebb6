//! Artifact-reduction metrics over final outputs.
//!
//! A cell counts as an artifact when its probability is `>= threshold`
//! (0.5 by default); MAF, APR and the MAE region split all share that rule.

use serde::{Deserialize, Serialize};

use crate::detector::{binarize, ArtifactMask};
use crate::error::{input, Result};
use crate::grid::Grid;

/// Percentage of masks with at least one artifact cell.
pub fn mean_artifact_freq(masks: &[ArtifactMask], threshold: f64) -> Result<f64> {
    if masks.is_empty() {
        return Err(input("mean artifact frequency of an empty batch"));
    }
    let flagged = masks.iter().filter(|m| has_artifact(m, threshold)).count();
    Ok(100.0 * flagged as f64 / masks.len() as f64)
}

pub fn has_artifact(mask: &ArtifactMask, threshold: f64) -> bool {
    mask.values().iter().any(|v| *v >= threshold)
}

/// Percentage of artifact cells in one mask.
pub fn artifact_pixel_ratio(mask: &ArtifactMask, threshold: f64) -> f64 {
    let flagged = mask.values().iter().filter(|v| **v >= threshold).count();
    100.0 * flagged as f64 / mask.len() as f64
}

/// Mean APR over a batch.
pub fn artifact_pixel_ratio_mean(masks: &[ArtifactMask], threshold: f64) -> Result<f64> {
    if masks.is_empty() {
        return Err(input("artifact pixel ratio of an empty batch"));
    }
    Ok(masks.iter().map(|m| artifact_pixel_ratio(m, threshold)).sum::<f64>() / masks.len() as f64)
}

/// Mean absolute error against the baseline, split by the baseline's mask.
/// An empty region reports `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaeSplit {
    pub mae: f64,
    pub mae_a: Option<f64>,
    pub mae_na: Option<f64>,
    pub cells_a: usize,
    pub cells_na: usize,
}

pub fn mae_split(image: &Grid, base_image: &Grid, base_mask: &ArtifactMask, threshold: f64) -> Result<MaeSplit> {
    image.check_shape(base_image, "mae_split")?;
    if base_mask.shape() != image.shape() {
        return Err(input("mae_split: mask shape mismatch"));
    }
    let artifact = binarize(base_mask, threshold);
    let (mut sum_a, mut sum_na, mut n_a, mut n_na) = (0.0, 0.0, 0usize, 0usize);
    for ((u, b), a) in image.values.iter().zip(&base_image.values).zip(&artifact) {
        let d = (u - b).abs();
        if *a {
            sum_a += d;
            n_a += 1;
        } else {
            sum_na += d;
            n_na += 1;
        }
    }
    let mean = |s: f64, n: usize| (n > 0).then(|| s / n as f64);
    Ok(MaeSplit {
        mae: (sum_a + sum_na) / image.len() as f64,
        mae_a: mean(sum_a, n_a),
        mae_na: mean(sum_na, n_na),
        cells_a: n_a,
        cells_na: n_na,
    })
}

/// Final outputs of a batch of runs, optionally paired with baselines.
#[derive(Debug, Clone, Default)]
pub struct EvalBatch {
    pub images: Vec<Grid>,
    pub masks: Vec<ArtifactMask>,
    pub base_images: Option<Vec<Grid>>,
    pub base_masks: Option<Vec<ArtifactMask>>,
}

/// Batch summary; MAE fields average only over outputs where the region exists.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchMetrics {
    pub n: usize,
    pub maf: f64,
    pub apr_mean: f64,
    pub mae: Option<f64>,
    pub mae_a: Option<f64>,
    pub mae_na: Option<f64>,
}

impl EvalBatch {
    pub fn validate(&self) -> Result<()> {
        if self.images.len() != self.masks.len() {
            return Err(input("images and masks differ in length"));
        }
        for (img, m) in self.images.iter().zip(&self.masks) {
            if img.shape() != m.shape() {
                return Err(input("image and mask shapes differ"));
            }
        }
        match (&self.base_images, &self.base_masks) {
            (None, None) => Ok(()),
            (Some(bi), Some(bm)) if bi.len() == self.images.len() && bm.len() == self.images.len() => Ok(()),
            _ => Err(input("baseline lists must both be present and parallel to the batch")),
        }
    }

    pub fn evaluate(&self, threshold: f64) -> Result<BatchMetrics> {
        self.validate()?;
        let maf = mean_artifact_freq(&self.masks, threshold)?;
        let apr_mean = artifact_pixel_ratio_mean(&self.masks, threshold)?;
        let (mut mae, mut mae_a, mut mae_na) = (None, None, None);
        if let (Some(bi), Some(bm)) = (&self.base_images, &self.base_masks) {
            let splits = self
                .images
                .iter()
                .zip(bi)
                .zip(bm)
                .map(|((img, base), mask)| mae_split(img, base, mask, threshold))
                .collect::<Result<Vec<_>>>()?;
            mae = mean_of(splits.iter().map(|s| Some(s.mae)));
            mae_a = mean_of(splits.iter().map(|s| s.mae_a));
            mae_na = mean_of(splits.iter().map(|s| s.mae_na));
        }
        Ok(BatchMetrics {
            n: self.images.len(),
            maf,
            apr_mean,
            mae,
            mae_a,
            mae_na,
        })
    }
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let present: Vec<f64> = values.flatten().collect();
    (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mask(values: Vec<f64>) -> ArtifactMask {
        let n = values.len();
        ArtifactMask::from_values(1, n, values).unwrap()
    }

    #[test]
    fn maf_examples() {
        assert_eq!(mean_artifact_freq(&[mask(vec![0.0; 3]), mask(vec![0.0; 3])], 0.5).unwrap(), 0.0);
        assert_eq!(mean_artifact_freq(&[mask(vec![0.9, 0.0]), mask(vec![0.1, 0.9])], 0.5).unwrap(), 100.0);
        let m = mean_artifact_freq(&[mask(vec![0.5]), mask(vec![0.49]), mask(vec![0.7])], 0.5).unwrap();
        assert!((m - 200.0 / 3.0).abs() < 1e-12);
        assert!(mean_artifact_freq(&[], 0.5).is_err());
    }

    #[test]
    fn apr_examples() {
        assert_eq!(artifact_pixel_ratio(&mask(vec![0.0; 4]), 0.5), 0.0);
        assert_eq!(artifact_pixel_ratio(&mask(vec![0.5, 0.6, 1.0, 0.9]), 0.5), 100.0);
        assert_eq!(artifact_pixel_ratio(&mask(vec![0.1, 0.6, 0.2, 0.3]), 0.5), 25.0);
    }

    #[test]
    fn mae_split_examples() {
        let base = Grid::new(1, 2, vec![0.0, 0.0]).unwrap();
        let img = Grid::new(1, 2, vec![1.0, -3.0]).unwrap();
        let s = mae_split(&img, &base, &mask(vec![0.9, 0.1]), 0.5).unwrap();
        assert_eq!((s.mae, s.mae_a, s.mae_na), (2.0, Some(1.0), Some(3.0)));

        let same = mae_split(&img, &img, &mask(vec![0.9, 0.1]), 0.5).unwrap();
        assert_eq!((same.mae, same.mae_a, same.mae_na), (0.0, Some(0.0), Some(0.0)));

        let clean = mae_split(&img, &base, &mask(vec![0.0, 0.0]), 0.5).unwrap();
        assert_eq!(clean.mae_a, None);
        assert_eq!(clean.mae_na, Some(clean.mae));
        assert!(mae_split(&img, &Grid::zeros(2, 1), &mask(vec![0.0, 0.0]), 0.5).is_err());
    }

    #[test]
    fn batch_evaluation() {
        let batch = EvalBatch {
            images: vec![Grid::new(1, 2, vec![1.0, 1.0]).unwrap(), Grid::new(1, 2, vec![0.0, 2.0]).unwrap()],
            masks: vec![mask(vec![0.6, 0.0]), mask(vec![0.0, 0.0])],
            base_images: Some(vec![Grid::zeros(1, 2), Grid::zeros(1, 2)]),
            base_masks: Some(vec![mask(vec![0.0, 0.0]), mask(vec![1.0, 0.0])]),
        };
        let m = batch.evaluate(0.5).unwrap();
        assert_eq!(m.maf, 50.0);
        assert_eq!(m.apr_mean, 25.0);
        assert_eq!(m.mae, Some(1.0));
        assert_eq!(m.mae_a, Some(0.0));
        assert_eq!(m.mae_na, Some(1.5));
        let bad = EvalBatch { base_images: None, ..batch };
        assert!(bad.evaluate(0.5).is_err());
    }

    proptest! {
        #[test]
        fn mae_is_the_weighted_mean_of_its_regions(
            img in prop::collection::vec(-5.0..5.0f64, 12),
            base in prop::collection::vec(-5.0..5.0f64, 12),
            probs in prop::collection::vec(0.0..=1.0f64, 12),
        ) {
            let img = Grid::new(3, 4, img).unwrap();
            let base = Grid::new(3, 4, base).unwrap();
            let m = ArtifactMask::from_values(3, 4, probs).unwrap();
            let s = mae_split(&img, &base, &m, 0.5).unwrap();
            if let (Some(a), Some(na)) = (s.mae_a, s.mae_na) {
                let w = (a * s.cells_a as f64 + na * s.cells_na as f64) / 12.0;
                prop_assert!((w - s.mae).abs() < 1e-12);
            }
        }

        #[test]
        fn batch_metrics_ignore_order(probs in prop::collection::vec(prop::collection::vec(0.0..=1.0f64, 4), 1..8)) {
            let masks: Vec<ArtifactMask> = probs.into_iter().map(mask).collect();
            let mut rev = masks.clone();
            rev.reverse();
            prop_assert_eq!(mean_artifact_freq(&masks, 0.5).unwrap(), mean_artifact_freq(&rev, 0.5).unwrap());
            let a = artifact_pixel_ratio_mean(&masks, 0.5).unwrap();
            let b = artifact_pixel_ratio_mean(&rev, 0.5).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
            for m in &masks {
                prop_assert_eq!(artifact_pixel_ratio(m, 0.5) == 0.0, !has_artifact(m, 0.5));
            }
        }
    }
}
