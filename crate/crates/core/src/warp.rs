//! Differentiable warping of BEV maps: a similarity transform composed with
//! a coarse flow field, realized by bilinear sampling, plus the smoothness
//! and squared-norm regularizers.
//!
//! Sampling uses the inverse convention throughout: each output cell fetches
//! from a source coordinate, so positive parameters displace *content* in
//! the positive direction. Flow entries share that convention with the box
//! translation (a constant flow equals a translation), which means the
//! source coordinate subtracts the upsampled flow.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;


use crate::error::Error;
use crate::grid::SemanticGrid;
use crate::project::BevMap;
use crate::Result;

/// Similarity-transform parameters: translation in cells, rotation about the
/// grid centre, log of the isotropic scale.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BoxParams {
    /// Column translation in cells.
    pub tx: f64,
    /// Row translation in cells.
    pub ty: f64,
    #[cfg_attr(feature = "serde", serde(rename = "rot"))]
    pub rotation: f64,
    pub log_scale: f64,
}

impl BoxParams {
    pub fn identity() -> Self {
        Self { tx: 0.0, ty: 0.0, rotation: 0.0, log_scale: 0.0 }
    }

    pub fn scale(&self) -> f64 {
        self.log_scale.exp()
    }

    pub fn is_finite(&self) -> bool {
        self.tx.is_finite()
            && self.ty.is_finite()
            && self.rotation.is_finite()
            && self.log_scale.is_finite()
    }
}

/// Coarse displacement field, bilinearly upsampled to full resolution.
/// Node (i, j) holds `(du, dv)` = (row, column) content displacement in
/// cells; `data` interleaves them row-major: `[du0, dv0, du1, dv1, ..]`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FlowField {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl FlowField {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols * 2] }
    }

    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols * 2 {
            return Err(Error::ShapeMismatch {
                what: "flow field data",
                expected: (rows, cols, 2),
                found: (data.len(), 1, 1),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidValue("flow entries must be finite".into()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn num_nodes(&self) -> usize {
        self.rows * self.cols
    }

    #[inline]
    pub fn du(&self, node: usize) -> f64 {
        self.data[2 * node]
    }

    #[inline]
    pub fn dv(&self, node: usize) -> f64 {
        self.data[2 * node + 1]
    }

    /// Bilinear (align-corners) interpolation weights of the flow nodes for
    /// one full-resolution cell. At most four taps, weights sum to one.
    pub fn upsample_taps(&self, row: usize, col: usize, full_rows: usize, full_cols: usize) -> [(usize, f64); 4] {
        let pos = |i: usize, n_nodes: usize, n_full: usize| -> f64 {
            if n_nodes <= 1 || n_full <= 1 {
                0.0
            } else {
                i as f64 * (n_nodes - 1) as f64 / (n_full - 1) as f64
            }
        };
        let fi = pos(row, self.rows, full_rows);
        let fj = pos(col, self.cols, full_cols);
        let i0 = (fi.floor() as usize).min(self.rows.saturating_sub(1));
        let j0 = (fj.floor() as usize).min(self.cols.saturating_sub(1));
        let i1 = (i0 + 1).min(self.rows - 1);
        let j1 = (j0 + 1).min(self.cols - 1);
        let wi = fi - i0 as f64;
        let wj = fj - j0 as f64;
        [
            (i0 * self.cols + j0, (1.0 - wi) * (1.0 - wj)),
            (i0 * self.cols + j1, (1.0 - wi) * wj),
            (i1 * self.cols + j0, wi * (1.0 - wj)),
            (i1 * self.cols + j1, wi * wj),
        ]
    }

    /// Full-resolution displacement at a cell.
    pub fn upsampled_at(&self, row: usize, col: usize, full_rows: usize, full_cols: usize) -> (f64, f64) {
        let mut du = 0.0;
        let mut dv = 0.0;
        for (node, w) in self.upsample_taps(row, col, full_rows, full_cols) {
            du += w * self.du(node);
            dv += w * self.dv(node);
        }
        (du, dv)
    }
}

/// Full warp state: similarity transform plus flow field.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct WarpParams {
    #[cfg_attr(feature = "serde", serde(rename = "box"))]
    pub similarity: BoxParams,
    pub flow: FlowField,
}

/// Default flow grid resolution (rows, cols).
pub const DEFAULT_FLOW_DIMS: (usize, usize) = (8, 4);

impl WarpParams {
    pub fn identity(flow_rows: usize, flow_cols: usize) -> Self {
        Self { similarity: BoxParams::identity(), flow: FlowField::zeros(flow_rows, flow_cols) }
    }

    /// Number of scalar parameters: four box entries plus the flow.
    pub fn dim(&self) -> usize {
        4 + self.flow.data.len()
    }

    /// Packs `[tx, ty, rotation, log_scale, flow..]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim());
        v.extend_from_slice(&[
            self.similarity.tx,
            self.similarity.ty,
            self.similarity.rotation,
            self.similarity.log_scale,
        ]);
        v.extend_from_slice(&self.flow.data);
        v
    }

    pub fn from_vec(v: &[f64], flow_rows: usize, flow_cols: usize) -> Result<Self> {
        if v.len() != 4 + flow_rows * flow_cols * 2 {
            return Err(Error::ShapeMismatch {
                what: "warp parameter vector",
                expected: (4 + flow_rows * flow_cols * 2, 1, 1),
                found: (v.len(), 1, 1),
            });
        }
        Ok(Self {
            similarity: BoxParams { tx: v[0], ty: v[1], rotation: v[2], log_scale: v[3] },
            flow: FlowField::new(flow_rows, flow_cols, v[4..].to_vec())?,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.similarity.is_finite() && self.flow.data.iter().all(|v| v.is_finite())
    }
}

/// One bilinear read with derivatives with respect to the coordinate.
#[derive(Debug, Clone)]
pub struct BilinearTap {
    pub value: Vec<f64>,
    pub d_row: Vec<f64>,
    pub d_col: Vec<f64>,
}

#[inline]
fn fetch(grid: &SemanticGrid, r: i64, c: i64, ch: usize) -> f64 {
    if r < 0 || c < 0 || r >= grid.height() as i64 || c >= grid.width() as i64 {
        0.0
    } else {
        grid.cell(r as usize, c as usize)[ch]
    }
}

/// Four-neighbour bilinear read at a real coordinate; cells outside the grid
/// contribute zero, so values fade out across the border.
pub fn bilinear_point(grid: &SemanticGrid, row: f64, col: f64) -> Vec<f64> {
    bilinear_point_with_grad(grid, row, col).value
}

/// [`bilinear_point`] plus the analytic derivative of every channel with
/// respect to the sampling coordinate.
pub fn bilinear_point_with_grad(grid: &SemanticGrid, row: f64, col: f64) -> BilinearTap {
    let ch = grid.channels();
    let mut tap = BilinearTap {
        value: vec![0.0; ch],
        d_row: vec![0.0; ch],
        d_col: vec![0.0; ch],
    };
    if !(row.is_finite() && col.is_finite()) {
        return tap;
    }
    // all four taps out of range: zero value, zero gradient
    if row <= -1.0 || col <= -1.0 || row >= grid.height() as f64 || col >= grid.width() as f64 {
        return tap;
    }
    let r0 = row.floor();
    let c0 = col.floor();
    let fr = row - r0;
    let fc = col - c0;
    let (r0, c0) = (r0 as i64, c0 as i64);
    for k in 0..ch {
        let v00 = fetch(grid, r0, c0, k);
        let v01 = fetch(grid, r0, c0 + 1, k);
        let v10 = fetch(grid, r0 + 1, c0, k);
        let v11 = fetch(grid, r0 + 1, c0 + 1, k);
        tap.value[k] = (1.0 - fr) * ((1.0 - fc) * v00 + fc * v01) + fr * ((1.0 - fc) * v10 + fc * v11);
        tap.d_row[k] = ((1.0 - fc) * v10 + fc * v11) - ((1.0 - fc) * v00 + fc * v01);
        tap.d_col[k] = (1.0 - fr) * (v01 - v00) + fr * (v11 - v10);
    }
    tap
}

/// Samples a whole grid at per-cell coordinates (row-major, one coordinate
/// per output cell).
pub fn bilinear_sample(grid: &SemanticGrid, coords: &[(f64, f64)]) -> Result<SemanticGrid> {
    if coords.len() != grid.height() * grid.width() {
        return Err(Error::ShapeMismatch {
            what: "bilinear sample coordinates",
            expected: (grid.height(), grid.width(), 1),
            found: (coords.len(), 1, 1),
        });
    }
    let mut out = SemanticGrid::zeros(grid.height(), grid.width(), grid.channels());
    for (i, &(r, c)) in coords.iter().enumerate() {
        let v = bilinear_point(grid, r, c);
        let row = i / grid.width();
        let col = i % grid.width();
        out.cell_mut(row, col)[..].copy_from_slice(&v);
    }
    Ok(out)
}

/// Inverse similarity map about the grid centre, with per-parameter
/// coordinate derivatives. For an output cell `p`, the source coordinate is
/// `R(-rot) (p - centre - t) / s + centre`.
#[derive(Debug, Clone, Copy)]
pub struct BoxMapper {
    center_r: f64,
    center_c: f64,
    sin_a: f64,
    cos_a: f64,
    inv_s: f64,
    tx: f64,
    ty: f64,
}

/// Source coordinate plus its derivatives with respect to
/// `(tx, ty, rotation, log_scale)`.
#[derive(Debug, Clone, Copy)]
pub struct BoxCoord {
    pub row: f64,
    pub col: f64,
    /// Derivative pairs `(d row, d col)` for tx, ty, rotation, log_scale.
    pub d_params: [(f64, f64); 4],
}

impl BoxMapper {
    pub fn new(params: &BoxParams, rows: usize, cols: usize) -> Self {
        Self {
            center_r: (rows as f64 - 1.0) / 2.0,
            center_c: (cols as f64 - 1.0) / 2.0,
            sin_a: params.rotation.sin(),
            cos_a: params.rotation.cos(),
            inv_s: (-params.log_scale).exp(),
            tx: params.tx,
            ty: params.ty,
        }
    }

    /// Source coordinate for an output cell.
    #[inline]
    pub fn source(&self, row: f64, col: f64) -> (f64, f64) {
        let qr = row - self.center_r - self.ty;
        let qc = col - self.center_c - self.tx;
        (
            (self.cos_a * qr + self.sin_a * qc) * self.inv_s + self.center_r,
            (-self.sin_a * qr + self.cos_a * qc) * self.inv_s + self.center_c,
        )
    }

    /// Source coordinate and its derivatives with respect to the box
    /// parameters.
    pub fn source_with_grad(&self, row: f64, col: f64) -> BoxCoord {
        let qr = row - self.center_r - self.ty;
        let qc = col - self.center_c - self.tx;
        let rot_r = (self.cos_a * qr + self.sin_a * qc) * self.inv_s;
        let rot_c = (-self.sin_a * qr + self.cos_a * qc) * self.inv_s;
        BoxCoord {
            row: rot_r + self.center_r,
            col: rot_c + self.center_c,
            d_params: [
                // d/d tx: dq = (0, -1)
                (-self.sin_a * self.inv_s, -self.cos_a * self.inv_s),
                // d/d ty: dq = (-1, 0)
                (-self.cos_a * self.inv_s, self.sin_a * self.inv_s),
                // d/d rotation: dR(-a)/da q / s
                (
                    (-self.sin_a * qr + self.cos_a * qc) * self.inv_s,
                    (-self.cos_a * qr - self.sin_a * qc) * self.inv_s,
                ),
                // d/d log_scale
                (-rot_r, -rot_c),
            ],
        }
    }
}

/// Per-cell source coordinates of the inverse similarity transform.
pub fn box_coordinate_map(params: &BoxParams, rows: usize, cols: usize) -> Vec<(f64, f64)> {
    let mapper = BoxMapper::new(params, rows, cols);
    let mut coords = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            coords.push(mapper.source(r as f64, c as f64));
        }
    }
    coords
}

/// Per-cell source coordinates of the full warp: box map minus upsampled
/// flow (flow entries displace content, like the translation).
pub fn warp_coordinates(theta: &WarpParams, rows: usize, cols: usize) -> Vec<(f64, f64)> {
    let mapper = BoxMapper::new(&theta.similarity, rows, cols);
    let mut coords = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let (pr, pc) = mapper.source(r as f64, c as f64);
            let (du, dv) = theta.flow.upsampled_at(r, c, rows, cols);
            coords.push((pr - du, pc - dv));
        }
    }
    coords
}

/// Warps a map's distribution and observed mask by the composed transform;
/// mask values are bilinearly warped and re-binarized at one half.
pub fn compose_and_warp(map: &BevMap, theta: &WarpParams) -> Result<BevMap> {
    if !theta.is_finite() {
        return Err(Error::InvalidValue("warp parameters must be finite".into()));
    }
    let rows = map.rows();
    let cols = map.cols();
    let coords = warp_coordinates(theta, rows, cols);
    let grid = bilinear_sample(&map.grid, &coords)?;

    let mask_grid = SemanticGrid::from_data(
        rows,
        cols,
        1,
        map.observed.iter().map(|&o| if o { 1.0 } else { 0.0 }).collect(),
    )?;
    let warped_mask = bilinear_sample(&mask_grid, &coords)?;
    let observed = warped_mask.data().iter().map(|&v| v >= 0.5).collect();
    BevMap::new(grid, observed)
}

/// Smoothness penalty: mean squared first difference of the flow, both grid
/// directions, both components. Returns the value and its gradient aligned
/// with `flow.data`.
pub fn lowpass_regularizer(flow: &FlowField) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; flow.data.len()];
    let n_diffs = 2 * ((flow.rows.saturating_sub(1)) * flow.cols
        + flow.rows * (flow.cols.saturating_sub(1)));
    if n_diffs == 0 {
        return (0.0, grad);
    }
    let inv_n = 1.0 / n_diffs as f64;
    let mut value = 0.0;
    let idx = |i: usize, j: usize| i * flow.cols + j;
    for comp in 0..2 {
        for i in 0..flow.rows {
            for j in 0..flow.cols {
                let a = 2 * idx(i, j) + comp;
                if i + 1 < flow.rows {
                    let b = 2 * idx(i + 1, j) + comp;
                    let d = flow.data[b] - flow.data[a];
                    value += d * d;
                    grad[b] += 2.0 * d * inv_n;
                    grad[a] -= 2.0 * d * inv_n;
                }
                if j + 1 < flow.cols {
                    let b = 2 * idx(i, j + 1) + comp;
                    let d = flow.data[b] - flow.data[a];
                    value += d * d;
                    grad[b] += 2.0 * d * inv_n;
                    grad[a] -= 2.0 * d * inv_n;
                }
            }
        }
    }
    (value * inv_n, grad)
}

/// Squared norm of all warp parameters; the gradient is `2 theta`, aligned
/// with [`WarpParams::to_vec`].
pub fn l2_regularizer(theta: &WarpParams) -> (f64, Vec<f64>) {
    let v = theta.to_vec();
    let value = v.iter().map(|x| x * x).sum();
    let grad = v.iter().map(|x| 2.0 * x).collect();
    (value, grad)
}
