//! Evaluation measures: mean intersection-over-union for label maps and the
//! standard single-image depth error set.

use alloc::vec::Vec;

use num_traits::Float;

use crate::error::Error;
use crate::grid::{DepthMap, LabelGrid};
use crate::Result;

/// Depth-accuracy ratio threshold.
pub const DELTA_THRESHOLD: f64 = 1.25;

/// Per-class IoU; `iou` is `None` for classes absent from both maps.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ClassIou {
    pub class_id: u8,
    pub iou: Option<f64>,
}

/// IoU per evaluated class plus their mean.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct IouReport {
    pub per_class: Vec<ClassIou>,
    /// Mean over classes present in at least one map.
    pub mean: f64,
}

/// Depth error summary over jointly valid cells.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DepthMetricReport {
    /// Mean absolute relative difference `|pred - gt| / gt`.
    pub ard: f64,
    pub rmse: f64,
    pub rmse_log: f64,
    /// Fraction of cells with `max(pred/gt, gt/pred)` below 1.25.
    pub delta_acc: f64,
    pub num_cells: usize,
}

/// Intersection-over-union per class, restricted to cells where the ground
/// truth is not `ignore_label`. Classes with empty union in both maps are
/// excluded from the mean.
pub fn mean_iou(
    pred: &LabelGrid,
    gt: &LabelGrid,
    eval_classes: &[u8],
    ignore_label: Option<u8>,
) -> Result<IouReport> {
    if pred.height() != gt.height() || pred.width() != gt.width() {
        return Err(Error::ShapeMismatch {
            what: "IoU operands",
            expected: (gt.height(), gt.width(), 1),
            found: (pred.height(), pred.width(), 1),
        });
    }
    if eval_classes.is_empty() {
        return Err(Error::NoEvaluableClass);
    }
    let mut per_class = Vec::with_capacity(eval_classes.len());
    let mut sum = 0.0;
    let mut counted = 0usize;
    for &class in eval_classes {
        let mut intersection = 0usize;
        let mut union = 0usize;
        for (p, g) in pred.labels().iter().zip(gt.labels()) {
            if ignore_label == Some(*g) {
                continue;
            }
            let in_p = *p == class;
            let in_g = *g == class;
            intersection += (in_p && in_g) as usize;
            union += (in_p || in_g) as usize;
        }
        let iou = (union > 0).then(|| intersection as f64 / union as f64);
        if let Some(v) = iou {
            sum += v;
            counted += 1;
        }
        per_class.push(ClassIou { class_id: class, iou });
    }
    if counted == 0 {
        return Err(Error::NoEvaluableClass);
    }
    Ok(IouReport { per_class, mean: sum / counted as f64 })
}

/// ARD, RMSE, RMSE-log and delta accuracy over the cells valid in both maps.
pub fn depth_metrics(pred: &DepthMap, gt: &DepthMap) -> Result<DepthMetricReport> {
    if pred.height() != gt.height() || pred.width() != gt.width() {
        return Err(Error::ShapeMismatch {
            what: "depth metric operands",
            expected: (gt.height(), gt.width(), 1),
            found: (pred.height(), pred.width(), 1),
        });
    }
    let mut n = 0usize;
    let mut ard = 0.0;
    let mut sq = 0.0;
    let mut sq_log = 0.0;
    let mut within = 0usize;
    for r in 0..gt.height() {
        for c in 0..gt.width() {
            let (Some(p), Some(g)) = (pred.get(r, c), gt.get(r, c)) else {
                continue;
            };
            if p <= 0.0 || g <= 0.0 {
                return Err(Error::NonPositiveDepth { row: r, col: c, depth: p.min(g) });
            }
            n += 1;
            ard += (p - g).abs() / g;
            sq += (p - g) * (p - g);
            let dl = p.ln() - g.ln();
            sq_log += dl * dl;
            if (p / g).max(g / p) < DELTA_THRESHOLD {
                within += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::EmptyObservedMask);
    }
    let nf = n as f64;
    Ok(DepthMetricReport {
        ard: ard / nf,
        rmse: (sq / nf).sqrt(),
        rmse_log: (sq_log / nf).sqrt(),
        delta_acc: within as f64 / nf,
        num_cells: n,
    })
}
