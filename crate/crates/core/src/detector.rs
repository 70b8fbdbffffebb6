//! Synthetic differentiable artifact detectors.
//!
//! A detector maps a decoded grid to per-cell artifact probabilities. Three
//! built-in kinds are provided:
//!
//! * `radial`: a smooth ball around each center. A center with one entry per
//!   cell is a point in decoded space and yields one probability shared by all
//!   cells; a center with a single entry is a value-space point tested cell
//!   by cell. Several centers are combined as a probabilistic union.
//! * `patch`: a cell is flagged when the RMS deviation of its 3x3
//!   neighbourhood from a reference grid exceeds the radius.
//! * `composite`: a weighted mean of member masks.
//!
//! Logits are quadratic in the distance, `z = k (r^2 - d^2) / (2 r)`, so the
//! 0.5 level set is the radius boundary and `k` is the logit slope there.

use serde::{Deserialize, Serialize};

use crate::error::{input, Result};
use crate::grid::Grid;

/// Sharpness times radius when `sharpness` is left unset.
pub const DEFAULT_SHARPNESS_RADIUS: f64 = 10.0;

/// Half-width of the patch neighbourhood (1 gives 3x3).
pub const PATCH_HALF_WIDTH: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorKind {
    Radial,
    Patch,
    Composite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorSpec {
    pub kind: DetectorKind,
    #[serde(default)]
    pub centers: Vec<Vec<f64>>,
    #[serde(default)]
    pub radii: Vec<f64>,
    /// Logit slope at the radius boundary; defaults to `10 / radius`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sharpness: Option<f64>,
    /// Mix weights of a composite detector.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub weights: Vec<f64>,
    /// Members of a composite detector.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub members: Vec<DetectorSpec>,
}

/// Per-cell artifact probabilities, all within `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Grid", into = "Grid")]
pub struct ArtifactMask(Grid);

impl ArtifactMask {
    pub fn new(grid: Grid) -> Result<Self> {
        if grid.values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(input("artifact probabilities must lie in [0, 1]"));
        }
        Ok(Self(grid))
    }

    pub fn from_values(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        Self::new(Grid::new(height, width, values)?)
    }

    pub fn grid(&self) -> &Grid {
        &self.0
    }

    pub fn values(&self) -> &[f64] {
        &self.0.values
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.shape()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.values().iter().cloned().fold(0.0, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.values().iter().sum::<f64>() / self.len() as f64
    }
}

impl TryFrom<Grid> for ArtifactMask {
    type Error = crate::Error;

    fn try_from(grid: Grid) -> Result<Self> {
        Self::new(grid)
    }
}

impl From<ArtifactMask> for Grid {
    fn from(mask: ArtifactMask) -> Grid {
        mask.0
    }
}

/// Cellwise `value >= threshold`.
pub fn binarize(mask: &ArtifactMask, threshold: f64) -> Vec<bool> {
    mask.values().iter().map(|v| *v >= threshold).collect()
}

impl DetectorSpec {
    pub fn radial(centers: Vec<Vec<f64>>, radii: Vec<f64>, sharpness: Option<f64>) -> Result<Self> {
        let spec = Self {
            kind: DetectorKind::Radial,
            centers,
            radii,
            sharpness,
            weights: Vec::new(),
            members: Vec::new(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn patch(reference: Vec<f64>, radius: f64, sharpness: Option<f64>) -> Result<Self> {
        let spec = Self {
            kind: DetectorKind::Patch,
            centers: vec![reference],
            radii: vec![radius],
            sharpness,
            weights: Vec::new(),
            members: Vec::new(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn composite(members: Vec<DetectorSpec>, weights: Vec<f64>) -> Result<Self> {
        let spec = Self {
            kind: DetectorKind::Composite,
            centers: Vec::new(),
            radii: Vec::new(),
            sharpness: None,
            weights,
            members,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(k) = self.sharpness {
            if !(k > 0.0) || !k.is_finite() {
                return Err(input("detector sharpness must be positive"));
            }
        }
        match self.kind {
            DetectorKind::Radial | DetectorKind::Patch => {
                if self.centers.is_empty() || self.centers.len() != self.radii.len() {
                    return Err(input("detector needs one radius per center"));
                }
                if self.radii.iter().any(|r| !(*r > 0.0) || !r.is_finite()) {
                    return Err(input("detector radii must be positive"));
                }
                if self.centers.iter().flatten().any(|c| !c.is_finite()) {
                    return Err(input("detector centers must be finite"));
                }
                if self.kind == DetectorKind::Patch && self.centers.len() != 1 {
                    return Err(input("patch detector takes exactly one reference grid"));
                }
                Ok(())
            }
            DetectorKind::Composite => {
                if self.members.is_empty() || self.members.len() != self.weights.len() {
                    return Err(input("composite detector needs one weight per member"));
                }
                if self.weights.iter().any(|w| !(*w >= 0.0)) {
                    return Err(input("composite weights must be non-negative"));
                }
                let total: f64 = self.weights.iter().sum();
                if (total - 1.0).abs() > 1e-12 {
                    return Err(input(format!("composite weights sum to {total}, expected 1")));
                }
                self.members.iter().try_for_each(DetectorSpec::validate)
            }
        }
    }

    fn slope(&self, j: usize) -> f64 {
        self.sharpness.unwrap_or(DEFAULT_SHARPNESS_RADIUS / self.radii[j])
    }

    fn check_centers(&self, cells: usize) -> Result<()> {
        for c in &self.centers {
            let ok = match self.kind {
                DetectorKind::Radial => c.len() == cells || c.len() == 1,
                _ => c.len() == cells,
            };
            if !ok {
                return Err(input(format!(
                    "detector center of length {} does not fit a grid of {cells} cells",
                    c.len()
                )));
            }
        }
        Ok(())
    }

    /// Per-cell logits of center `j`.
    fn radial_logits(&self, j: usize, decoded: &Grid) -> Vec<f64> {
        let c = &self.centers[j];
        let r = self.radii[j];
        let k = self.slope(j);
        if c.len() == 1 {
            decoded
                .values
                .iter()
                .map(|u| k * (r * r - (u - c[0]).powi(2)) / (2.0 * r))
                .collect()
        } else {
            let d2: f64 = decoded.values.iter().zip(c).map(|(u, m)| (u - m).powi(2)).sum();
            vec![k * (r * r - d2) / (2.0 * r); decoded.len()]
        }
    }

    /// Local mean squared deviation from the reference over each cell's
    /// neighbourhood, with the neighbourhood sizes.
    fn patch_deviation(&self, decoded: &Grid) -> (Vec<f64>, Vec<f64>) {
        let reference = &self.centers[0];
        let (h, w) = decoded.shape();
        let sq: Vec<f64> = decoded.values.iter().zip(reference).map(|(u, c)| (u - c).powi(2)).collect();
        let mut mean = vec![0.0; h * w];
        let mut count = vec![0.0; h * w];
        for row in 0..h {
            for col in 0..w {
                let (acc, n) = neighbourhood(row, col, h, w).fold((0.0, 0.0), |(a, n), idx| (a + sq[idx], n + 1.0));
                mean[row * w + col] = acc / n;
                count[row * w + col] = n;
            }
        }
        (mean, count)
    }

    fn probabilities(&self, decoded: &Grid) -> Result<Vec<f64>> {
        match self.kind {
            DetectorKind::Radial => {
                self.check_centers(decoded.len())?;
                let mut keep = vec![1.0; decoded.len()];
                for j in 0..self.centers.len() {
                    for (q, z) in keep.iter_mut().zip(self.radial_logits(j, decoded)) {
                        *q *= 1.0 - sigmoid(z);
                    }
                }
                Ok(keep.into_iter().map(|q| 1.0 - q).collect())
            }
            DetectorKind::Patch => {
                self.check_centers(decoded.len())?;
                let r = self.radii[0];
                let k = self.slope(0);
                let (dev, _) = self.patch_deviation(decoded);
                Ok(dev.iter().map(|m| sigmoid(k * (m - r * r) / (2.0 * r))).collect())
            }
            DetectorKind::Composite => {
                let mut out = vec![0.0; decoded.len()];
                for (member, w) in self.members.iter().zip(&self.weights) {
                    for (o, p) in out.iter_mut().zip(member.probabilities(decoded)?) {
                        *o += w * p;
                    }
                }
                // guard against rounding just above 1
                Ok(out.into_iter().map(|p| p.min(1.0)).collect())
            }
        }
    }

    fn vjp(&self, decoded: &Grid, cotangent: &[f64]) -> Result<Vec<f64>> {
        let n = decoded.len();
        match self.kind {
            DetectorKind::Radial => {
                self.check_centers(n)?;
                let probs: Vec<Vec<f64>> = (0..self.centers.len())
                    .map(|j| self.radial_logits(j, decoded).into_iter().map(sigmoid).collect())
                    .collect();
                let mut out = vec![0.0; n];
                for (j, pj) in probs.iter().enumerate() {
                    let c = &self.centers[j];
                    let factor = self.slope(j) / self.radii[j];
                    // d(union)/d(p_j) = prod_{l != j} (1 - p_l), per cell
                    let others: Vec<f64> = (0..n)
                        .map(|i| {
                            probs
                                .iter()
                                .enumerate()
                                .filter(|(l, _)| *l != j)
                                .map(|(_, pl)| 1.0 - pl[i])
                                .product()
                        })
                        .collect();
                    if c.len() == 1 {
                        for i in 0..n {
                            let dp = -pj[i] * (1.0 - pj[i]) * factor * (decoded.values[i] - c[0]);
                            out[i] += cotangent[i] * others[i] * dp;
                        }
                    } else {
                        let p = pj[0];
                        let weight: f64 = cotangent.iter().zip(&others).map(|(g, o)| g * o).sum();
                        let coef = -weight * p * (1.0 - p) * factor;
                        for ((o, u), m) in out.iter_mut().zip(&decoded.values).zip(c) {
                            *o += coef * (u - m);
                        }
                    }
                }
                Ok(out)
            }
            DetectorKind::Patch => {
                self.check_centers(n)?;
                let r = self.radii[0];
                let k = self.slope(0);
                let reference = &self.centers[0];
                let (h, w) = decoded.shape();
                let (dev, count) = self.patch_deviation(decoded);
                let mut out = vec![0.0; n];
                for row in 0..h {
                    for col in 0..w {
                        let i = row * w + col;
                        let p = sigmoid(k * (dev[i] - r * r) / (2.0 * r));
                        let g = cotangent[i] * p * (1.0 - p) * k / (2.0 * r) * 2.0 / count[i];
                        if g == 0.0 {
                            continue;
                        }
                        for idx in neighbourhood(row, col, h, w) {
                            out[idx] += g * (decoded.values[idx] - reference[idx]);
                        }
                    }
                }
                Ok(out)
            }
            DetectorKind::Composite => {
                let mut out = vec![0.0; n];
                for (member, wt) in self.members.iter().zip(&self.weights) {
                    for (o, v) in out.iter_mut().zip(member.vjp(decoded, cotangent)?) {
                        *o += wt * v;
                    }
                }
                Ok(out)
            }
        }
    }
}

fn neighbourhood(row: usize, col: usize, h: usize, w: usize) -> impl Iterator<Item = usize> {
    let r0 = row.saturating_sub(PATCH_HALF_WIDTH);
    let r1 = (row + PATCH_HALF_WIDTH).min(h - 1);
    let c0 = col.saturating_sub(PATCH_HALF_WIDTH);
    let c1 = (col + PATCH_HALF_WIDTH).min(w - 1);
    (r0..=r1).flat_map(move |r| (c0..=c1).map(move |c| r * w + c))
}

/// Logistic function evaluated without overflow; the result never leaves [0, 1].
pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Artifact mask of a decoded grid.
pub fn eval_mask(decoded: &Grid, spec: &DetectorSpec) -> Result<ArtifactMask> {
    let values = spec.probabilities(decoded)?;
    ArtifactMask::from_values(decoded.height, decoded.width, values)
}

/// `J^T cotangent` with `J = d mask / d decoded`.
pub fn mask_jacobian_action(decoded: &Grid, spec: &DetectorSpec, cotangent: &Grid) -> Result<Grid> {
    decoded.check_shape(cotangent, "mask_jacobian_action")?;
    let values = spec.vjp(decoded, &cotangent.values)?;
    Grid::new(decoded.height, decoded.width, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fd_check(spec: &DetectorSpec, decoded: &Grid, cot: &Grid) {
        let got = mask_jacobian_action(decoded, spec, cot).unwrap();
        let h = 1e-5;
        for i in 0..decoded.len() {
            let mut p = decoded.clone();
            let mut m = decoded.clone();
            p.values[i] += h;
            m.values[i] -= h;
            let fp = eval_mask(&p, spec).unwrap();
            let fm = eval_mask(&m, spec).unwrap();
            let fd: f64 = fp
                .values()
                .iter()
                .zip(fm.values())
                .zip(&cot.values)
                .map(|((a, b), c)| (a - b) / (2.0 * h) * c)
                .sum();
            let want = got.values[i];
            assert!((want - fd).abs() <= 1e-4 * want.abs().max(1e-3), "cell {i}: {want} vs {fd}");
        }
    }

    #[test]
    fn radial_center_and_far_field() {
        let spec = DetectorSpec::radial(vec![vec![1.0, 2.0]], vec![0.5], None).unwrap();
        let at = Grid::new(1, 2, vec![1.0, 2.0]).unwrap();
        assert!(eval_mask(&at, &spec).unwrap().values().iter().all(|p| *p > 0.5));
        let far = Grid::new(1, 2, vec![10.0, -8.0]).unwrap();
        assert!(eval_mask(&far, &spec).unwrap().values().iter().all(|p| *p < 0.01));
        let boundary = Grid::new(1, 2, vec![1.5, 2.0]).unwrap();
        assert!((eval_mask(&boundary, &spec).unwrap().values()[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn radial_value_mode_is_cellwise() {
        let spec = DetectorSpec::radial(vec![vec![1.0]], vec![0.2], None).unwrap();
        let g = Grid::new(1, 3, vec![1.0, 0.0, 1.1]).unwrap();
        let m = eval_mask(&g, &spec).unwrap();
        assert!(m.values()[0] > 0.5 && m.values()[1] < 0.01 && m.values()[2] > 0.5);
    }

    #[test]
    fn composite_of_constant_masks_is_their_mean() {
        // Logit at zero deviation is +-k r / 2, giving exactly 0.8 and 0.2.
        let z8 = (0.8f64 / 0.2).ln();
        let k = 2.0 * z8;
        let high = DetectorSpec::radial(vec![vec![0.0; 4]], vec![1.0], Some(k)).unwrap();
        let low = DetectorSpec::patch(vec![0.0; 4], 1.0, Some(k)).unwrap();
        let grid = Grid::zeros(2, 2);
        let pl = eval_mask(&grid, &low).unwrap();
        let ph = eval_mask(&grid, &high).unwrap();
        assert!(pl.values().iter().all(|v| (v - 0.2).abs() < 1e-12));
        assert!(ph.values().iter().all(|v| (v - 0.8).abs() < 1e-12));
        let comp = DetectorSpec::composite(vec![low, high], vec![0.5, 0.5]).unwrap();
        assert!(eval_mask(&grid, &comp).unwrap().values().iter().all(|v| (v - 0.5).abs() < 1e-12));
    }

    #[test]
    fn binarize_is_inclusive() {
        let m = ArtifactMask::from_values(1, 3, vec![0.4, 0.5, 0.6]).unwrap();
        assert_eq!(binarize(&m, 0.5), vec![false, true, true]);
        let zeros = ArtifactMask::from_values(2, 2, vec![0.0; 4]).unwrap();
        assert!(binarize(&zeros, 0.5).iter().all(|b| !b));
        let full = ArtifactMask::from_values(1, 2, vec![1.0, 1.0]).unwrap();
        assert!(binarize(&full, 0.0).iter().all(|b| *b));
        assert!(binarize(&full, f64::from_bits(1.0f64.to_bits() + 1)).iter().all(|b| !b));
    }

    #[test]
    fn mask_rejects_out_of_range_values() {
        assert!(ArtifactMask::from_values(1, 1, vec![1.5]).is_err());
        assert!(serde_json::from_str::<ArtifactMask>(r#"{"height":1,"width":1,"values":[-0.1]}"#).is_err());
    }

    #[test]
    fn validation_errors() {
        assert!(DetectorSpec::radial(vec![vec![0.0]], vec![0.0], None).is_err());
        assert!(DetectorSpec::radial(vec![vec![0.0]], vec![], None).is_err());
        assert!(DetectorSpec::composite(vec![], vec![]).is_err());
        let r = DetectorSpec::radial(vec![vec![0.0]], vec![1.0], None).unwrap();
        assert!(DetectorSpec::composite(vec![r.clone(), r], vec![0.6, 0.6]).is_err());
        let wrong = DetectorSpec::radial(vec![vec![0.0, 0.0, 0.0]], vec![1.0], None).unwrap();
        assert!(eval_mask(&Grid::zeros(2, 2), &wrong).is_err());
    }

    #[test]
    fn jacobian_vanishes_for_zero_cotangent_and_far_field() {
        let spec = DetectorSpec::radial(vec![vec![0.0, 0.0]], vec![0.5], None).unwrap();
        let g = Grid::new(1, 2, vec![0.3, 0.1]).unwrap();
        let zero = mask_jacobian_action(&g, &spec, &Grid::zeros(1, 2)).unwrap();
        assert!(zero.values.iter().all(|v| *v == 0.0));
        let far = Grid::new(1, 2, vec![6.0, 6.0]).unwrap();
        let ones = Grid::filled(1, 2, 1.0);
        let j = mask_jacobian_action(&far, &spec, &ones).unwrap();
        assert!(j.values.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-6);
    }

    #[test]
    fn jacobians_match_finite_differences_near_boundaries() {
        let cot = Grid::new(2, 2, vec![0.7, -0.3, 1.1, 0.4]).unwrap();
        let near = Grid::new(2, 2, vec![0.45, 0.1, -0.2, 0.3]).unwrap();
        let radial = DetectorSpec::radial(vec![vec![0.0; 4], vec![1.0, 0.5, 0.0, 0.0]], vec![0.7, 0.9], None).unwrap();
        fd_check(&radial, &near, &cot);
        let cellwise = DetectorSpec::radial(vec![vec![0.3]], vec![0.2], None).unwrap();
        fd_check(&cellwise, &near, &cot);
        let patch = DetectorSpec::patch(vec![0.0, 0.2, 0.0, 0.2], 0.3, None).unwrap();
        fd_check(&patch, &near, &cot);
        let comp = DetectorSpec::composite(vec![radial, patch], vec![0.3, 0.7]).unwrap();
        fd_check(&comp, &near, &cot);
    }

    proptest! {
        #[test]
        fn masks_stay_in_unit_interval(values in prop::collection::vec(-1e6..1e6f64, 9)) {
            let g = Grid::new(3, 3, values).unwrap();
            let radial = DetectorSpec::radial(vec![vec![0.0; 9], vec![0.5]], vec![1.0, 0.3], None).unwrap();
            let patch = DetectorSpec::patch(vec![0.1; 9], 0.4, None).unwrap();
            let comp = DetectorSpec::composite(vec![radial.clone(), patch.clone()], vec![0.25, 0.75]).unwrap();
            for spec in [&radial, &patch, &comp] {
                let m = eval_mask(&g, spec).unwrap();
                prop_assert!(m.values().iter().all(|p| (0.0..=1.0).contains(p)));
            }
            let a = eval_mask(&g, &radial).unwrap();
            let b = eval_mask(&g, &patch).unwrap();
            let c = eval_mask(&g, &comp).unwrap();
            for ((x, y), z) in a.values().iter().zip(b.values()).zip(c.values()) {
                prop_assert!((0.25 * x + 0.75 * y - z).abs() < 1e-12);
            }
        }
    }
}
