//! Perspective-to-BEV geometry: pinhole unprojection through depth, top-view
//! accumulation, and 2D bounding-box lifting.
//!
//! Grid convention: row `k-1` is nearest the camera, the camera sits at the
//! bottom-center of the grid, columns grow to the right. A 3D point maps to
//! `row = k-1-floor(z/res_z)`, `col = floor((x + extent_x/2)/res_x)`; points
//! exactly on the far or side boundary are dropped.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::error::Error;
use crate::grid::{DepthMap, SemanticGrid};
use crate::mask::PixelBox;
use crate::Result;

/// Pinhole camera parameters in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        if !(fx.is_finite() && fy.is_finite() && fx > 0.0 && fy > 0.0) {
            return Err(Error::InvalidValue(alloc::format!(
                "focal lengths must be positive, got fx={fx}, fy={fy}"
            )));
        }
        if !(cx.is_finite() && cy.is_finite()) {
            return Err(Error::InvalidValue("principal point must be finite".into()));
        }
        Ok(Self { fx, fy, cx, cy })
    }
}

/// BEV grid dimensions and metric extent.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BevConfig {
    /// Grid rows (forward axis).
    #[cfg_attr(feature = "serde", serde(rename = "k"))]
    pub rows: usize,
    /// Grid columns (lateral axis).
    #[cfg_attr(feature = "serde", serde(rename = "l"))]
    pub cols: usize,
    /// Metres covered forward of the camera.
    pub extent_z_m: f64,
    /// Metres covered laterally, centred on the camera.
    pub extent_x_m: f64,
}

impl BevConfig {
    pub fn new(rows: usize, cols: usize, extent_z_m: f64, extent_x_m: f64) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidValue("BEV grid must have nonzero dimensions".into()));
        }
        if !(extent_z_m > 0.0 && extent_x_m > 0.0)
            || !extent_z_m.is_finite()
            || !extent_x_m.is_finite()
        {
            return Err(Error::InvalidValue("BEV extents must be positive".into()));
        }
        Ok(Self { rows, cols, extent_z_m, extent_x_m })
    }

    /// 128 x 64 cells covering 60 x 30 metres (0.46875 m per cell).
    pub fn paper_default() -> Self {
        Self { rows: 128, cols: 64, extent_z_m: 60.0, extent_x_m: 30.0 }
    }

    /// Metres per cell along the forward axis.
    pub fn res_z(&self) -> f64 {
        self.extent_z_m / self.rows as f64
    }

    /// Metres per cell along the lateral axis.
    pub fn res_x(&self) -> f64 {
        self.extent_x_m / self.cols as f64
    }

    /// Cell containing a metric point, `None` outside the extent.
    pub fn cell_of(&self, x: f64, z: f64) -> Option<(usize, usize)> {
        if !(x.is_finite() && z.is_finite()) || z < 0.0 {
            return None;
        }
        let zi = (z / self.res_z()).floor();
        let xi = ((x + self.extent_x_m / 2.0) / self.res_x()).floor();
        if zi < 0.0 || zi >= self.rows as f64 || xi < 0.0 || xi >= self.cols as f64 {
            return None;
        }
        Some((self.rows - 1 - zi as usize, xi as usize))
    }

    /// Metric coordinates of a cell centre.
    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        let z = (self.rows - 1 - row) as f64 + 0.5;
        let x = col as f64 + 0.5;
        (x * self.res_x() - self.extent_x_m / 2.0, z * self.res_z())
    }

    pub fn num_cells(&self) -> usize {
        self.rows * self.cols
    }
}

/// A BEV semantic map: per-cell class distribution plus the observed mask.
///
/// For maps built by projection or simulation, `observed` is exactly the set
/// of positive-mass cells. Warped maps keep the two as independent fields.
#[derive(Debug, Clone, PartialEq)]
pub struct BevMap {
    pub grid: SemanticGrid,
    pub observed: Vec<bool>,
}

impl BevMap {
    pub fn new(grid: SemanticGrid, observed: Vec<bool>) -> Result<Self> {
        if observed.len() != grid.height() * grid.width() {
            return Err(Error::ShapeMismatch {
                what: "BEV observed mask",
                expected: (grid.height(), grid.width(), 1),
                found: (observed.len(), 1, 1),
            });
        }
        Ok(Self { grid, observed })
    }

    /// Derives the observed mask from cell mass (positive mass = observed).
    pub fn from_grid(grid: SemanticGrid) -> Self {
        let observed = (0..grid.height() * grid.width())
            .map(|i| grid.cell_mass(i / grid.width(), i % grid.width()) > 0.0)
            .collect();
        Self { grid, observed }
    }

    /// Fully observed map; every cell must carry positive, normalized mass.
    pub fn fully_observed(grid: SemanticGrid) -> Result<Self> {
        grid.validate_normalized()?;
        for r in 0..grid.height() {
            for c in 0..grid.width() {
                if grid.cell_mass(r, c) <= 0.0 {
                    return Err(Error::InvalidValue(alloc::format!(
                        "cell ({r}, {c}) has zero mass in a fully observed map"
                    )));
                }
            }
        }
        let n = grid.height() * grid.width();
        Ok(Self { grid, observed: vec![true; n] })
    }

    pub fn rows(&self) -> usize {
        self.grid.height()
    }

    pub fn cols(&self) -> usize {
        self.grid.width()
    }

    pub fn channels(&self) -> usize {
        self.grid.channels()
    }

    #[inline]
    pub fn is_observed(&self, row: usize, col: usize) -> bool {
        self.observed[row * self.grid.width() + col]
    }

    pub fn num_observed(&self) -> usize {
        self.observed.iter().filter(|o| **o).count()
    }

    pub fn observed_fraction(&self) -> f64 {
        self.num_observed() as f64 / self.observed.len() as f64
    }

    /// Checks projection-grade invariants: normalized cells and observed
    /// exactly where mass is positive.
    pub fn validate_strict(&self) -> Result<()> {
        self.grid.validate_normalized()?;
        for r in 0..self.rows() {
            for c in 0..self.cols() {
                let mass = self.grid.cell_mass(r, c);
                if self.is_observed(r, c) != (mass > 0.0) {
                    return Err(Error::InvalidValue(alloc::format!(
                        "cell ({r}, {c}): observed={} but mass={mass}",
                        self.is_observed(r, c)
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Mean metric footprint used to lift 2D detections into the top view.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BoxPrior {
    pub length_m: f64,
    pub width_m: f64,
}

impl BoxPrior {
    pub fn new(length_m: f64, width_m: f64) -> Result<Self> {
        if !(length_m > 0.0 && width_m > 0.0) {
            return Err(Error::InvalidValue("box prior dimensions must be positive".into()));
        }
        Ok(Self { length_m, width_m })
    }
}

/// Axis-aligned cell rectangle, half-open on both axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BevRect {
    pub row0: usize,
    pub col0: usize,
    pub row1: usize,
    pub col1: usize,
}

impl BevRect {
    pub fn num_rows(&self) -> usize {
        self.row1 - self.row0
    }

    pub fn num_cols(&self) -> usize {
        self.col1 - self.col0
    }

    pub fn is_empty(&self) -> bool {
        self.row0 >= self.row1 || self.col0 >= self.col1
    }
}

/// Where projected pixels went.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ProjectionStats {
    pub used: usize,
    pub skipped_invalid_depth: usize,
    pub skipped_out_of_extent: usize,
    pub skipped_unobserved: usize,
}

/// Camera-frame pinhole unprojection of pixel `(u, v)` at depth `d`:
/// `x = (u-cx)d/fx`, `y = (v-cy)d/fy`, `z = d`.
pub fn unproject(u: f64, v: f64, d: f64, intrinsics: &CameraIntrinsics) -> Result<(f64, f64, f64)> {
    if !(d.is_finite() && d > 0.0) {
        return Err(Error::NonPositiveDepth { row: 0, col: 0, depth: d });
    }
    let x = (u - intrinsics.cx) * d / intrinsics.fx;
    let y = (v - intrinsics.cy) * d / intrinsics.fy;
    Ok((x, y, d))
}

/// Forward pinhole projection of a camera-frame point; the inverse of
/// [`unproject`] for `z > 0`.
pub fn project_point(x: f64, y: f64, z: f64, intrinsics: &CameraIntrinsics) -> Result<(f64, f64)> {
    if !(z.is_finite() && z > 0.0) {
        return Err(Error::NonPositiveDepth { row: 0, col: 0, depth: z });
    }
    Ok((x * intrinsics.fx / z + intrinsics.cx, y * intrinsics.fy / z + intrinsics.cy))
}

/// Maps every valid pixel through its depth into the top view, dropping the
/// height axis, and averages the class distributions landing in each cell.
pub fn project_to_bev(
    seg_bg: &SemanticGrid,
    depth: &DepthMap,
    intrinsics: &CameraIntrinsics,
    cfg: &BevConfig,
) -> Result<(BevMap, ProjectionStats)> {
    if seg_bg.height() != depth.height() || seg_bg.width() != depth.width() {
        return Err(Error::ShapeMismatch {
            what: "segmentation vs depth",
            expected: (depth.height(), depth.width(), seg_bg.channels()),
            found: (seg_bg.height(), seg_bg.width(), seg_bg.channels()),
        });
    }
    let channels = seg_bg.channels();
    let mut sums = vec![0.0f64; cfg.num_cells() * channels];
    let mut counts = vec![0u32; cfg.num_cells()];
    let mut stats = ProjectionStats::default();

    for v in 0..depth.height() {
        for u in 0..depth.width() {
            let Some(d) = depth.get(v, u) else {
                stats.skipped_invalid_depth += 1;
                continue;
            };
            let src = seg_bg.cell(v, u);
            let mass: f64 = src.iter().sum();
            if mass <= 0.0 {
                stats.skipped_unobserved += 1;
                continue;
            }
            let (x, _y, z) = unproject(u as f64, v as f64, d, intrinsics)?;
            let Some((row, col)) = cfg.cell_of(x, z) else {
                stats.skipped_out_of_extent += 1;
                continue;
            };
            let idx = row * cfg.cols + col;
            for ch in 0..channels {
                sums[idx * channels + ch] += src[ch];
            }
            counts[idx] += 1;
            stats.used += 1;
        }
    }

    let mut data = vec![0.0f64; cfg.num_cells() * channels];
    let mut observed = vec![false; cfg.num_cells()];
    for idx in 0..cfg.num_cells() {
        if counts[idx] > 0 {
            observed[idx] = true;
            let n = counts[idx] as f64;
            for ch in 0..channels {
                data[idx * channels + ch] = sums[idx * channels + ch] / n;
            }
        }
    }
    let grid = SemanticGrid::from_data(cfg.rows, cfg.cols, channels, data)?;
    Ok((BevMap { grid, observed }, stats))
}

/// Cell rectangle of `length x width` metres centred on `(x, z)`: the centre
/// cell is found by the grid binning rule and the rectangle spans
/// `ceil(length/res)` by `ceil(width/res)` cells around it, clipped to the
/// grid. Returns `None` when nothing of the rectangle remains in view.
pub fn rect_at(cfg: &BevConfig, x: f64, z: f64, length_m: f64, width_m: f64) -> Option<BevRect> {
    if !(x.is_finite() && z.is_finite()) {
        return None;
    }
    let zi = (z / cfg.res_z()).floor().clamp(-1e9, 1e9) as i64;
    let xi = ((x + cfg.extent_x_m / 2.0) / cfg.res_x()).floor().clamp(-1e9, 1e9) as i64;
    let crow = cfg.rows as i64 - 1 - zi;
    let n_rows = (length_m / cfg.res_z()).ceil().max(1.0) as i64;
    let n_cols = (width_m / cfg.res_x()).ceil().max(1.0) as i64;
    let r0 = crow - (n_rows - 1) / 2;
    let c0 = xi - (n_cols - 1) / 2;
    let row0 = r0.clamp(0, cfg.rows as i64) as usize;
    let col0 = c0.clamp(0, cfg.cols as i64) as usize;
    let row1 = (r0 + n_rows).clamp(0, cfg.rows as i64) as usize;
    let col1 = (c0 + n_cols).clamp(0, cfg.cols as i64) as usize;
    (row0 < row1 && col0 < col1).then_some(BevRect { row0, col0, row1, col1 })
}

/// Lifts a 2D detection box into the top view: unprojects the box's bottom
/// centre through the depth map and places a rectangle of the prior's
/// footprint at `(x, z + length/2)` (the prior extends away from the camera).
pub fn lift_bbox_to_bev(
    bbox: &PixelBox,
    depth: &DepthMap,
    intrinsics: &CameraIntrinsics,
    prior: &BoxPrior,
    cfg: &BevConfig,
) -> Result<BevRect> {
    if bbox.y1 == 0 || bbox.y1 as usize > depth.height() || bbox.x1 as usize > depth.width() {
        return Err(Error::InvalidValue(alloc::format!(
            "bbox ({}, {})..({}, {}) outside a {}x{} image",
            bbox.x0,
            bbox.y0,
            bbox.x1,
            bbox.y1,
            depth.width(),
            depth.height()
        )));
    }
    let u = (bbox.x0 + bbox.x1) as f64 / 2.0;
    let v_px = (bbox.y1 - 1) as usize;
    let u_px = (u.floor() as usize).min(depth.width() - 1);
    let d = depth.get(v_px, u_px).ok_or_else(|| {
        Error::InvalidValue(alloc::format!("no valid depth at bbox bottom-centre ({v_px}, {u_px})"))
    })?;
    let (x, _y, z) = unproject(u, v_px as f64, d, intrinsics)?;
    let center_z = z + prior.length_m / 2.0;
    if cfg.cell_of(x, center_z).is_none() {
        return Err(Error::OutOfExtent { x, z: center_z });
    }
    rect_at(cfg, x, center_z, prior.length_m, prior.width_m)
        .ok_or(Error::OutOfExtent { x, z: center_z })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::LabelGrid;

    fn intr() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 100.0, 32.0, 24.0).unwrap()
    }

    #[test]
    fn unproject_principal_point() {
        let k = intr();
        let (x, y, z) = unproject(k.cx, k.cy, 5.0, &k).unwrap();
        assert_eq!((x, y, z), (0.0, 0.0, 5.0));
    }

    #[test]
    fn unproject_hand_example() {
        // fx=100, cx=32: (u, v) = (42, cy), d = 10 -> x = 1.0
        let k = intr();
        let (x, y, z) = unproject(42.0, k.cy, 10.0, &k).unwrap();
        assert!((x - 1.0).abs() < 1e-15);
        assert_eq!(y, 0.0);
        assert_eq!(z, 10.0);
    }

    #[test]
    fn unproject_symmetry_and_errors() {
        let k = intr();
        let (xp, ..) = unproject(k.cx + 7.0, k.cy, 4.0, &k).unwrap();
        let (xm, ..) = unproject(k.cx - 7.0, k.cy, 4.0, &k).unwrap();
        assert_eq!(xp, -xm);
        assert!(unproject(10.0, 10.0, 0.0, &k).is_err());
        assert!(unproject(10.0, 10.0, -1.0, &k).is_err());
    }

    #[test]
    fn unproject_reproject_roundtrip() {
        let k = intr();
        for (u, v, d) in [(0.3, 7.9, 0.5), (63.7, 41.2, 29.0), (12.0, 5.0, 3.25)] {
            let (x, y, z) = unproject(u, v, d, &k).unwrap();
            let (u2, v2) = project_point(x, y, z, &k).unwrap();
            assert!((u2 - u).abs() < 1e-9 && (v2 - v).abs() < 1e-9);
        }
    }

    #[test]
    fn doubling_fx_halves_x() {
        let k = intr();
        let k2 = CameraIntrinsics::new(2.0 * k.fx, k.fy, k.cx, k.cy).unwrap();
        let (x1, ..) = unproject(k.cx + 10.0, 0.0, 6.0, &k).unwrap();
        let (x2, ..) = unproject(k.cx + 10.0, 0.0, 6.0, &k2).unwrap();
        assert!((x2 - x1 / 2.0).abs() < 1e-15);
    }

    #[test]
    fn paper_grid_resolution_and_fixture() {
        let cfg = BevConfig::paper_default();
        assert_eq!(cfg.res_z(), 0.46875);
        assert_eq!(cfg.res_x(), 0.46875);
        assert_eq!(cfg.cell_of(0.0, 5.0), Some((117, 32)));
        // boundary points are dropped
        assert_eq!(cfg.cell_of(0.0, 60.0), None);
        assert_eq!(cfg.cell_of(15.0, 5.0), None);
        assert_eq!(cfg.cell_of(-15.0, 5.0), Some((117, 0)));
    }

    #[test]
    fn project_empty_depth_gives_unobserved_map() {
        let seg = SemanticGrid::zeros(4, 4, 3);
        let depth = DepthMap::invalid(4, 4);
        let cfg = BevConfig::paper_default();
        let (bev, stats) = project_to_bev(&seg, &depth, &intr(), &cfg).unwrap();
        assert_eq!(bev.num_observed(), 0);
        assert_eq!(stats.used, 0);
        assert_eq!(stats.skipped_invalid_depth, 16);
        bev.validate_strict().unwrap();
    }

    #[test]
    fn project_averages_collisions() {
        // two neighbouring pixels with one-hot distributions (1,0) and (0,1)
        // mapped through equal depth near the principal point land in the
        // same cell and average to (0.5, 0.5)
        let k = CameraIntrinsics::new(1000.0, 1000.0, -39.0, 0.0).unwrap();
        let mut seg = SemanticGrid::zeros(1, 2, 2);
        seg.cell_mut(0, 0)[0] = 1.0;
        seg.cell_mut(0, 1)[1] = 1.0;
        let depth = DepthMap::new(1, 2, vec![5.0, 5.0], vec![true, true]).unwrap();
        let cfg = BevConfig::paper_default();
        let (bev, stats) = project_to_bev(&seg, &depth, &k, &cfg).unwrap();
        assert_eq!(stats.used, 2);
        assert_eq!(bev.num_observed(), 1);
        // both pixels land at x close to 0.2 m, five metres out
        let (row, col) = cfg.cell_of(0.2, 5.0).unwrap();
        assert_eq!(bev.grid.cell(row, col), &[0.5, 0.5]);
        bev.validate_strict().unwrap();
    }

    #[test]
    fn observed_cells_bounded_by_valid_pixels() {
        let labels = LabelGrid::filled(8, 8, 0);
        let seg = SemanticGrid::one_hot(&labels, 3);
        let mut depth = DepthMap::invalid(8, 8);
        for v in 0..8 {
            for u in 0..8 {
                if (u + v) % 2 == 0 {
                    depth.set(v, u, 1.0 + (u as f64) + 8.0 * v as f64).unwrap();
                }
            }
        }
        let cfg = BevConfig::paper_default();
        let (bev, stats) = project_to_bev(&seg, &depth, &intr(), &cfg).unwrap();
        assert!(bev.num_observed() <= depth.num_valid());
        assert_eq!(
            stats.used + stats.skipped_out_of_extent + stats.skipped_invalid_depth,
            64
        );
        bev.validate_strict().unwrap();
    }

    #[test]
    fn lift_bbox_hand_example() {
        // bottom-centre at the principal point, d = 10, prior 4 x 2 m:
        // laterally centred at col 32, spanning z in [10, 14] m
        let k = intr();
        let mut depth = DepthMap::invalid(48, 64);
        depth.set(40, 32, 10.0).unwrap();
        let bbox = PixelBox { x0: 28, y0: 30, x1: 36, y1: 41 };
        let prior = BoxPrior::new(4.0, 2.0).unwrap();
        let cfg = BevConfig::paper_default();
        let rect = lift_bbox_to_bev(&bbox, &depth, &k, &prior, &cfg).unwrap();
        // z in [10, 14]: rows 98..=106; x in [-1, 1]: cols 30..=34
        assert_eq!(rect, BevRect { row0: 98, col0: 30, row1: 107, col1: 35 });
        assert_eq!(rect.num_rows(), 9); // ceil(4 / 0.46875)
        assert_eq!(rect.num_cols(), 5); // ceil(2 / 0.46875)
    }

    #[test]
    fn lift_bbox_out_of_extent_and_invalid_depth() {
        let k = intr();
        let mut depth = DepthMap::invalid(48, 64);
        depth.set(40, 32, 70.0).unwrap(); // beyond the 60 m extent
        let bbox = PixelBox { x0: 28, y0: 30, x1: 36, y1: 41 };
        let prior = BoxPrior::new(4.0, 2.0).unwrap();
        let cfg = BevConfig::paper_default();
        assert!(matches!(
            lift_bbox_to_bev(&bbox, &depth, &k, &prior, &cfg),
            Err(Error::OutOfExtent { .. })
        ));
        let no_depth = DepthMap::invalid(48, 64);
        assert!(lift_bbox_to_bev(&bbox, &no_depth, &k, &prior, &cfg).is_err());
    }

    #[test]
    fn mirrored_boxes_lift_to_mirrored_rects() {
        let k = intr();
        let mut depth = DepthMap::invalid(48, 64);
        for u in 0..64 {
            depth.set(40, u, 12.0).unwrap();
        }
        let prior = BoxPrior::new(4.0, 2.0).unwrap();
        let cfg = BevConfig::paper_default();
        // centres at cx +- 9.5 pixels
        let right = PixelBox { x0: 37, y0: 30, x1: 46, y1: 41 };
        let left = PixelBox { x0: 18, y0: 30, x1: 27, y1: 41 };
        let rr = lift_bbox_to_bev(&right, &depth, &k, &prior, &cfg).unwrap();
        let rl = lift_bbox_to_bev(&left, &depth, &k, &prior, &cfg).unwrap();
        assert_eq!(rr.row0, rl.row0);
        assert_eq!(rr.row1, rl.row1);
        assert_eq!(rl.col0, cfg.cols - rr.col1);
        assert_eq!(rl.col1, cfg.cols - rr.col0);
    }
}
