use serde::{Deserialize, Serialize};

use crate::error::{input, Result};

/// A row-major `height x width` grid of reals in decoded ("image") space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl Grid {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(input("grid dimensions must be positive"));
        }
        if values.len() != height * width {
            return Err(input(format!(
                "grid of shape {height}x{width} needs {} values, got {}",
                height * width,
                values.len()
            )));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            values: vec![0.0; height * width],
        }
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self {
            height,
            width,
            values: vec![value; height * width],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn same_shape(&self, other: &Grid) -> bool {
        self.shape() == other.shape()
    }

    pub(crate) fn check_shape(&self, other: &Grid, what: &str) -> Result<()> {
        if !self.same_shape(other) {
            return Err(input(format!(
                "{what}: shape mismatch ({}x{} vs {}x{})",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(())
    }

    /// Rows as nested vectors, mostly for display and JSON dumps.
    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.values.chunks(self.width).map(<[f64]>::to_vec).collect()
    }
}
