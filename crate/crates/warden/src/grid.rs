//! Uniform quantization of bounded boxes.
//!
//! The state partition covers a box with a uniform grid per dimension plus
//! one off-grid pseudo-state (the sink) for everything outside. Cells are
//! addressed row-major; each cell is represented by its center. Points on an
//! interior cell boundary belong to the lower-index cell, the box edges
//! belong to their adjacent cells, so membership is total and deterministic.
//!
//! The input grid is the same construction without a sink: quantized inputs
//! are only ever produced by index, never located.

use crate::error::{Error, Result};

/// Uniform cell partition of a state box plus a sink for the outside.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPartition {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub counts: Vec<usize>,
    widths: Vec<f64>,
}

impl GridPartition {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, counts: Vec<usize>, location: &str) -> Result<Self> {
        if lo.len() != hi.len() || lo.len() != counts.len() || lo.is_empty() {
            return Err(Error::dimension(
                location,
                format!("bounds/counts lengths {} / {} / {} differ or are zero", lo.len(), hi.len(), counts.len()),
            ));
        }
        for d in 0..lo.len() {
            if !(lo[d] < hi[d]) {
                return Err(Error::validation(
                    location,
                    format!("empty range [{}, {}] in dimension {d}", lo[d], hi[d]),
                ));
            }
            if counts[d] == 0 {
                return Err(Error::validation(location, format!("zero cells in dimension {d}")));
            }
        }
        let widths = (0..lo.len()).map(|d| (hi[d] - lo[d]) / counts[d] as f64).collect();
        Ok(GridPartition { lo, hi, counts, widths })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    /// Number of grid cells, sink excluded.
    pub fn ncells(&self) -> usize {
        self.counts.iter().product()
    }

    /// Total abstract states: cells plus the sink.
    pub fn nstates(&self) -> usize {
        self.ncells() + 1
    }

    /// Index of the off-grid pseudo-state.
    pub fn sink(&self) -> usize {
        self.ncells()
    }

    pub fn width(&self, d: usize) -> f64 {
        self.widths[d]
    }

    /// Half cell widths, the quantization error corner.
    pub fn half_widths(&self) -> Vec<f64> {
        self.widths.iter().map(|w| 0.5 * w).collect()
    }

    /// Row-major index of per-dimension cell coordinates.
    pub fn index_of(&self, coords: &[usize]) -> usize {
        let mut idx = 0;
        for (d, &c) in coords.iter().enumerate() {
            idx = idx * self.counts[d] + c;
        }
        idx
    }

    /// Per-dimension cell coordinates of a cell index.
    pub fn coords_of(&self, mut idx: usize) -> Vec<usize> {
        let mut coords = vec![0; self.dim()];
        for d in (0..self.dim()).rev() {
            coords[d] = idx % self.counts[d];
            idx /= self.counts[d];
        }
        coords
    }

    /// Cell containing x, or the sink when x leaves the box. Interior
    /// boundary points go to the lower cell.
    pub fn locate(&self, x: &[f64]) -> usize {
        debug_assert_eq!(x.len(), self.dim());
        let mut coords = vec![0; self.dim()];
        for d in 0..self.dim() {
            if x[d] < self.lo[d] || x[d] > self.hi[d] {
                return self.sink();
            }
            let t = (x[d] - self.lo[d]) / self.widths[d];
            let mut c = t.floor() as usize;
            // Exact boundary hits move down one cell; the box edges stay in
            // their single adjacent cell.
            if t == c as f64 && c > 0 {
                c -= 1;
            }
            coords[d] = c.min(self.counts[d] - 1);
        }
        self.index_of(&coords)
    }

    /// Center of a cell; must not be called with the sink.
    pub fn center(&self, idx: usize) -> Vec<f64> {
        assert!(idx < self.ncells(), "sink has no representative point");
        self.coords_of(idx)
            .iter()
            .enumerate()
            .map(|(d, &c)| self.lo[d] + (c as f64 + 0.5) * self.widths[d])
            .collect()
    }

    /// Cell bounds along one dimension; must not be called with the sink.
    pub fn cell_bounds(&self, idx: usize, d: usize) -> (f64, f64) {
        assert!(idx < self.ncells(), "sink has no bounds");
        let c = self.coords_of(idx)[d];
        (self.lo[d] + c as f64 * self.widths[d], self.lo[d] + (c as f64 + 1.0) * self.widths[d])
    }
}

/// Uniform quantization of the input box; representative points are the cell
/// centers, addressed by row-major index.
#[derive(Debug, Clone, PartialEq)]
pub struct InputGrid {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub counts: Vec<usize>,
    widths: Vec<f64>,
}

impl InputGrid {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, counts: Vec<usize>, location: &str) -> Result<Self> {
        let grid = GridPartition::new(lo, hi, counts, location)?;
        Ok(InputGrid { lo: grid.lo, hi: grid.hi, counts: grid.counts, widths: grid.widths })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn width(&self, d: usize) -> f64 {
        self.widths[d]
    }

    pub fn center(&self, idx: usize) -> Vec<f64> {
        assert!(idx < self.len());
        let mut coords = vec![0; self.dim()];
        let mut rem = idx;
        for d in (0..self.dim()).rev() {
            coords[d] = rem % self.counts[d];
            rem /= self.counts[d];
        }
        coords
            .iter()
            .enumerate()
            .map(|(d, &c)| self.lo[d] + (c as f64 + 0.5) * self.widths[d])
            .collect()
    }
}
