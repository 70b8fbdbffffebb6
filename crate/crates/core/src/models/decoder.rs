use serde::{Deserialize, Serialize};

use crate::error::{input, Result};
use crate::grid::Grid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecoderKind {
    Identity,
    Linear,
}

/// Maps a latent vector to a `height x width` grid.
///
/// The linear kind stores an `(height * width) x D` matrix, one row per cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderSpec {
    pub kind: DecoderKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<Vec<Vec<f64>>>,
    pub height: usize,
    pub width: usize,
}

impl DecoderSpec {
    pub fn identity(height: usize, width: usize) -> Self {
        Self {
            kind: DecoderKind::Identity,
            matrix: None,
            height,
            width,
        }
    }

    pub fn linear(height: usize, width: usize, matrix: Vec<Vec<f64>>) -> Result<Self> {
        let spec = Self {
            kind: DecoderKind::Linear,
            matrix: Some(matrix),
            height,
            width,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    /// Latent dimension this decoder accepts.
    pub fn latent_dim(&self) -> usize {
        match self.kind {
            DecoderKind::Identity => self.cells(),
            DecoderKind::Linear => self
                .matrix
                .as_ref()
                .and_then(|m| m.first())
                .map_or(0, Vec::len),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(input("decoder grid dimensions must be positive"));
        }
        match (self.kind, &self.matrix) {
            (DecoderKind::Identity, None) => Ok(()),
            (DecoderKind::Identity, Some(_)) => Err(input("identity decoder takes no matrix")),
            (DecoderKind::Linear, None) => Err(input("linear decoder needs a matrix")),
            (DecoderKind::Linear, Some(m)) => {
                if m.len() != self.cells() {
                    return Err(input(format!(
                        "linear decoder matrix has {} rows, grid has {} cells",
                        m.len(),
                        self.cells()
                    )));
                }
                let d = m[0].len();
                if d == 0 || m.iter().any(|row| row.len() != d) {
                    return Err(input("linear decoder rows must share one positive width"));
                }
                if m.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(input("linear decoder entries must be finite"));
                }
                Ok(())
            }
        }
    }

    pub fn decode(&self, latent: &[f64]) -> Result<Grid> {
        if latent.len() != self.latent_dim() {
            return Err(input(format!(
                "decoder expects a {}-vector, got {}",
                self.latent_dim(),
                latent.len()
            )));
        }
        let values = match &self.matrix {
            None => latent.to_vec(),
            Some(m) => m
                .iter()
                .map(|row| row.iter().zip(latent).map(|(a, b)| a * b).sum())
                .collect(),
        };
        Grid::new(self.height, self.width, values)
    }

    /// Transpose action `D^T g` of the (linear) decoder on a cell-space cotangent.
    pub fn transpose_apply(&self, cotangent: &Grid) -> Result<Vec<f64>> {
        if cotangent.shape() != (self.height, self.width) {
            return Err(input("decoder cotangent shape mismatch"));
        }
        Ok(match &self.matrix {
            None => cotangent.values.clone(),
            Some(m) => {
                let mut out = vec![0.0; self.latent_dim()];
                for (row, g) in m.iter().zip(&cotangent.values) {
                    if *g == 0.0 {
                        continue;
                    }
                    for (o, a) in out.iter_mut().zip(row) {
                        *o += a * g;
                    }
                }
                out
            }
        })
    }
}
