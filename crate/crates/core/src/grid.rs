//! Raster types: per-cell class distributions, labels, depths, and plain
//! real-valued images.
//!
//! All grids are row-major. A semantic cell with zero mass is *unobserved*;
//! the observed mask of any map is therefore recoverable from the data alone.

use alloc::vec;
use alloc::vec::Vec;

use crate::catalog::ClassCatalog;
use crate::error::Error;
use crate::Result;

/// Tolerance for "this distribution sums to one".
pub const NORMALIZATION_TOL: f64 = 1e-6;

/// 2D raster of per-cell class probability distributions.
///
/// Channel count is either the full catalog or a prefix of it (background
/// classes only for BEV maps). Cells with zero mass are unobserved.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticGrid {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl SemanticGrid {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self { height, width, channels, data: vec![0.0; height * width * channels] }
    }

    /// Wraps row-major data. Entries must be finite and nonnegative;
    /// normalization is not required here (see [`normalize_cells`]).
    pub fn from_data(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::ShapeMismatch {
                what: "semantic grid data",
                expected: (height, width, channels),
                found: (data.len(), 1, 1),
            });
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidValue(alloc::format!(
                "semantic grid entries must be finite and nonnegative, found {bad}"
            )));
        }
        Ok(Self { height, width, channels, data })
    }

    /// One-hot grid from labels; ids at or past `channels` (e.g. unknown)
    /// become zero-mass cells.
    pub fn one_hot(labels: &LabelGrid, channels: usize) -> Self {
        let mut g = Self::zeros(labels.height, labels.width, channels);
        for r in 0..labels.height {
            for c in 0..labels.width {
                let id = labels.label(r, c) as usize;
                if id < channels {
                    g.cell_mut(r, c)[id] = 1.0;
                }
            }
        }
        g
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn cell(&self, row: usize, col: usize) -> &[f64] {
        let base = (row * self.width + col) * self.channels;
        &self.data[base..base + self.channels]
    }

    #[inline]
    pub fn cell_mut(&mut self, row: usize, col: usize) -> &mut [f64] {
        let base = (row * self.width + col) * self.channels;
        &mut self.data[base..base + self.channels]
    }

    /// Total mass of a cell; zero means unobserved.
    #[inline]
    pub fn cell_mass(&self, row: usize, col: usize) -> f64 {
        self.cell(row, col).iter().sum()
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    /// Checks the emission invariant: every cell with positive mass sums to
    /// one within [`NORMALIZATION_TOL`].
    pub fn validate_normalized(&self) -> Result<()> {
        for r in 0..self.height {
            for c in 0..self.width {
                let mass = self.cell_mass(r, c);
                if mass > 0.0 && (mass - 1.0).abs() > NORMALIZATION_TOL {
                    return Err(Error::InvalidValue(alloc::format!(
                        "cell ({r}, {c}) has mass {mass}, expected 0 or 1"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Argmax view of a [`SemanticGrid`]: one class id per cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelGrid {
    height: usize,
    width: usize,
    labels: Vec<u8>,
}

impl LabelGrid {
    pub fn new(height: usize, width: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::ShapeMismatch {
                what: "label grid data",
                expected: (height, width, 1),
                found: (labels.len(), 1, 1),
            });
        }
        Ok(Self { height, width, labels })
    }

    pub fn filled(height: usize, width: usize, label: u8) -> Self {
        Self { height, width, labels: vec![label; height * width] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    #[inline]
    pub fn label(&self, row: usize, col: usize) -> u8 {
        self.labels[row * self.width + col]
    }

    #[inline]
    pub fn set_label(&mut self, row: usize, col: usize, label: u8) {
        self.labels[row * self.width + col] = label;
    }

    /// Checks every label against the catalog.
    pub fn validate(&self, catalog: &ClassCatalog) -> Result<()> {
        match self.labels.iter().find(|&&l| (l as usize) >= catalog.num_classes()) {
            Some(bad) => Err(Error::InvalidValue(alloc::format!(
                "label {bad} outside catalog of {} classes",
                catalog.num_classes()
            ))),
            None => Ok(()),
        }
    }
}

/// Metric depths with a per-cell validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    height: usize,
    width: usize,
    depth: Vec<f64>,
    valid: Vec<bool>,
}

impl DepthMap {
    /// Depth must be strictly positive and finite wherever `valid` is set.
    pub fn new(height: usize, width: usize, depth: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        if depth.len() != height * width || valid.len() != height * width {
            return Err(Error::ShapeMismatch {
                what: "depth map data",
                expected: (height, width, 1),
                found: (depth.len(), valid.len(), 1),
            });
        }
        for (i, (&d, &v)) in depth.iter().zip(&valid).enumerate() {
            if v && !(d.is_finite() && d > 0.0) {
                return Err(Error::NonPositiveDepth { row: i / width, col: i % width, depth: d });
            }
        }
        Ok(Self { height, width, depth, valid })
    }

    /// All-invalid map.
    pub fn invalid(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            depth: vec![f64::NAN; height * width],
            valid: vec![false; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn depth(&self, row: usize, col: usize) -> f64 {
        self.depth[row * self.width + col]
    }

    #[inline]
    pub fn is_valid(&self, row: usize, col: usize) -> bool {
        self.valid[row * self.width + col]
    }

    /// Depth at a cell, `None` when invalid.
    #[inline]
    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        self.is_valid(row, col).then(|| self.depth(row, col))
    }

    pub fn set(&mut self, row: usize, col: usize, depth: f64) -> Result<()> {
        if !(depth.is_finite() && depth > 0.0) {
            return Err(Error::NonPositiveDepth { row, col, depth });
        }
        let i = row * self.width + col;
        self.depth[i] = depth;
        self.valid[i] = true;
        Ok(())
    }

    pub fn invalidate(&mut self, row: usize, col: usize) {
        let i = row * self.width + col;
        self.depth[i] = f64::NAN;
        self.valid[i] = false;
    }

    pub fn num_valid(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    pub fn depths(&self) -> &[f64] {
        &self.depth
    }

    pub fn valid_mask(&self) -> &[bool] {
        &self.valid
    }
}

/// Plain real-valued raster (any channel count, no distribution invariant);
/// stands in for images when masking.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Raster {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::ShapeMismatch {
                what: "raster data",
                expected: (height, width, channels),
                found: (data.len(), 1, 1),
            });
        }
        Ok(Self { height, width, channels, data })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self { height, width, channels, data: vec![value; height * width * channels] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn cell(&self, row: usize, col: usize) -> &[f64] {
        let base = (row * self.width + col) * self.channels;
        &self.data[base..base + self.channels]
    }

    #[inline]
    pub fn cell_mut(&mut self, row: usize, col: usize) -> &mut [f64] {
        let base = (row * self.width + col) * self.channels;
        &mut self.data[base..base + self.channels]
    }
}

/// Per-cell argmax. Zero-mass (unobserved) cells map to the catalog's
/// unknown id; ties go to the lower class id.
pub fn argmax_labels(grid: &SemanticGrid, catalog: &ClassCatalog) -> Result<LabelGrid> {
    catalog.check_channels(grid.channels())?;
    let mut labels = Vec::with_capacity(grid.height() * grid.width());
    for r in 0..grid.height() {
        for c in 0..grid.width() {
            let cell = grid.cell(r, c);
            let mass: f64 = cell.iter().sum();
            if mass <= 0.0 {
                labels.push(catalog.unknown_id());
                continue;
            }
            let mut best = 0usize;
            for (i, &v) in cell.iter().enumerate().skip(1) {
                if v > cell[best] {
                    best = i;
                }
            }
            labels.push(best as u8);
        }
    }
    LabelGrid::new(grid.height(), grid.width(), labels)
}

/// Rescales every positive-mass cell to sum to one; zero-mass cells are left
/// untouched (they stay unobserved).
pub fn normalize_cells(grid: &SemanticGrid) -> SemanticGrid {
    let mut out = grid.clone();
    for r in 0..out.height() {
        for c in 0..out.width() {
            let mass: f64 = out.cell(r, c).iter().sum();
            if mass > 0.0 {
                for v in out.cell_mut(r, c) {
                    *v /= mass;
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn catalog() -> ClassCatalog {
        ClassCatalog::default_road_scene()
    }

    #[test]
    fn argmax_one_hot_identity() {
        let labels = LabelGrid::new(2, 2, vec![0, 1, 2, 1]).unwrap();
        let grid = SemanticGrid::one_hot(&labels, 3);
        let back = argmax_labels(&grid, &catalog()).unwrap();
        assert_eq!(back.labels(), labels.labels());
    }

    #[test]
    fn argmax_strict_maximum() {
        // (road, sidewalk) = (0.2, 0.8) -> sidewalk
        let grid = SemanticGrid::from_data(1, 1, 3, vec![0.2, 0.8, 0.0]).unwrap();
        let labels = argmax_labels(&grid, &catalog()).unwrap();
        assert_eq!(labels.label(0, 0), 1);
    }

    #[test]
    fn argmax_tie_takes_lower_id() {
        let grid = SemanticGrid::from_data(1, 1, 3, vec![0.5, 0.5, 0.0]).unwrap();
        let labels = argmax_labels(&grid, &catalog()).unwrap();
        assert_eq!(labels.label(0, 0), 0);
    }

    #[test]
    fn argmax_unobserved_is_unknown() {
        let grid = SemanticGrid::zeros(1, 2, 3);
        let labels = argmax_labels(&grid, &catalog()).unwrap();
        assert_eq!(labels.label(0, 0), catalog().unknown_id());
    }

    #[test]
    fn normalize_examples() {
        let grid = SemanticGrid::from_data(1, 3, 2, vec![2.0, 2.0, 0.0, 0.0, 1.0, 3.0]).unwrap();
        let out = normalize_cells(&grid);
        assert_eq!(out.cell(0, 0), &[0.5, 0.5]);
        assert_eq!(out.cell(0, 1), &[0.0, 0.0]); // stays unobserved
        assert_eq!(out.cell(0, 2), &[0.25, 0.75]);
        out.validate_normalized().unwrap();
        assert_eq!(out.cell_mass(0, 1), 0.0);
    }

    #[test]
    fn from_data_rejects_negative_and_nan() {
        assert!(SemanticGrid::from_data(1, 1, 2, vec![0.5, -0.1]).is_err());
        assert!(SemanticGrid::from_data(1, 1, 2, vec![f64::NAN, 0.0]).is_err());
        assert!(SemanticGrid::from_data(1, 1, 2, vec![0.5]).is_err());
    }

    #[test]
    fn depth_map_rejects_nonpositive_valid_depth() {
        assert!(DepthMap::new(1, 2, vec![1.0, -1.0], vec![true, true]).is_err());
        assert!(DepthMap::new(1, 2, vec![1.0, 0.0], vec![true, true]).is_err());
        // invalid cells may hold anything
        let d = DepthMap::new(1, 2, vec![1.0, f64::NAN], vec![true, false]).unwrap();
        assert_eq!(d.get(0, 0), Some(1.0));
        assert_eq!(d.get(0, 1), None);
    }
}
