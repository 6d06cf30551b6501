//! Error type shared by all modules.

use alloc::string::String;
use core::fmt;

/// Everything that can go wrong inside the core pipeline.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Two rasters/grids that must agree in shape do not.
    ShapeMismatch {
        what: &'static str,
        expected: (usize, usize, usize),
        found: (usize, usize, usize),
    },
    /// A class catalog violates its construction rules.
    InvalidCatalog(String),
    /// A grid's channel count does not fit the catalog it is used with.
    CatalogMismatch { channels: usize, expected: String },
    /// A numeric field is NaN, infinite, negative where it must not be, etc.
    InvalidValue(String),
    /// Depth must be strictly positive at valid cells.
    NonPositiveDepth { row: usize, col: usize, depth: f64 },
    /// A masked loss was asked for with no observed cell to average over.
    EmptyObservedMask,
    /// Rejection sampling exhausted its attempt budget.
    NoAdmissiblePlacement { placed: usize, attempts: usize },
    /// A lifted object lands outside the BEV extent.
    OutOfExtent { x: f64, z: f64 },
    /// Layout parameters produced a map without a single road cell.
    NoRoadCells,
    /// A way references a node id that is not in the graph.
    DanglingNodeRef { way: i64, node: i64 },
    /// A way has fewer than two nodes.
    DegenerateWay { way: i64 },
    /// Latitude/longitude/heading outside their legal ranges.
    InvalidPose(String),
    /// Toy-scale guard: training entry points refuse full-size grids.
    ScaleGuard { rows: usize, cols: usize, max_rows: usize, max_cols: usize },
    /// Metric computation had nothing to evaluate.
    NoEvaluableClass,
    /// A dataset or batch that must be nonempty is empty.
    EmptyBatch(&'static str),
}

impl Error {
    /// True for failures of the numerics themselves (as opposed to malformed
    /// inputs); the CLI maps these to a distinct exit code.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::EmptyObservedMask
                | Error::NoAdmissiblePlacement { .. }
                | Error::OutOfExtent { .. }
                | Error::NoRoadCells
                | Error::NoEvaluableClass
        )
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { what, expected, found } => write!(
                f,
                "{what}: shape mismatch, expected {}x{}x{}, found {}x{}x{}",
                expected.0, expected.1, expected.2, found.0, found.1, found.2
            ),
            Error::InvalidCatalog(msg) => write!(f, "invalid class catalog: {msg}"),
            Error::CatalogMismatch { channels, expected } => {
                write!(f, "grid has {channels} channels, catalog expects {expected}")
            }
            Error::InvalidValue(msg) => write!(f, "invalid value: {msg}"),
            Error::NonPositiveDepth { row, col, depth } => {
                write!(f, "non-positive depth {depth} at valid cell ({row}, {col})")
            }
            Error::EmptyObservedMask => write!(f, "observed mask has no set cell"),
            Error::NoAdmissiblePlacement { placed, attempts } => write!(
                f,
                "no admissible box placement after {attempts} attempts ({placed} boxes placed)"
            ),
            Error::OutOfExtent { x, z } => {
                write!(f, "lifted point (x={x:.3} m, z={z:.3} m) outside BEV extent")
            }
            Error::NoRoadCells => write!(f, "layout parameters leave no road cell in the grid"),
            Error::DanglingNodeRef { way, node } => {
                write!(f, "way {way} references missing node {node}")
            }
            Error::DegenerateWay { way } => write!(f, "way {way} has fewer than two nodes"),
            Error::InvalidPose(msg) => write!(f, "invalid pose: {msg}"),
            Error::ScaleGuard { rows, cols, max_rows, max_cols } => write!(
                f,
                "grid {rows}x{cols} exceeds the toy-scale limit {max_rows}x{max_cols}"
            ),
            Error::NoEvaluableClass => write!(f, "no class with any support in either map"),
            Error::EmptyBatch(what) => write!(f, "empty batch: {what}"),
        }
    }
}
