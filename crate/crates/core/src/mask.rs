//! Foreground masking and the random-box sampling strategies used to build
//! self-supervised hallucination training pairs.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::catalog::{ClassCatalog, ClassRole};
use crate::error::Error;
use crate::grid::{argmax_labels, DepthMap, Raster, SemanticGrid};
use crate::Result;

/// Binary occluder mask: 1 where the segmentation argmax is a foreground
/// class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForegroundMask {
    height: usize,
    width: usize,
    mask: Vec<bool>,
}

impl ForegroundMask {
    pub fn new(height: usize, width: usize, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != height * width {
            return Err(Error::ShapeMismatch {
                what: "foreground mask",
                expected: (height, width, 1),
                found: (mask.len(), 1, 1),
            });
        }
        Ok(Self { height, width, mask })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn is_masked(&self, row: usize, col: usize) -> bool {
        self.mask[row * self.width + col]
    }

    pub fn num_masked(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.mask
    }
}

/// Per-foreground-class occupancy stack; channel `f` marks cells whose
/// argmax class is the catalog's `f`-th foreground class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMaskStack {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ClassMaskStack {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn cell(&self, row: usize, col: usize) -> &[f64] {
        let base = (row * self.width + col) * self.channels;
        &self.data[base..base + self.channels]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Axis-aligned pixel box, half-open: `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PixelBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl PixelBox {
    pub fn width(&self) -> u32 {
        self.x1.saturating_sub(self.x0)
    }

    pub fn height(&self) -> u32 {
        self.y1.saturating_sub(self.y0)
    }

    pub fn area(&self) -> u64 {
        self.width() as u64 * self.height() as u64
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x0 + self.x1) as f64 / 2.0, (self.y0 + self.y1) as f64 / 2.0)
    }
}

/// Whether sampled box sizes shrink toward the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum BoxGeometry {
    None,
    Perspective,
}

/// Where sampled boxes must land.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum PlacementClass {
    /// Significant overlap with road pixels.
    Road,
    /// Significant overlap with any background class.
    Background,
}

/// A box sampling strategy in the `geometry - background class - object size
/// - object count` taxonomy, e.g. `persp-road-150-3`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BoxSamplingStrategy {
    pub geometry: BoxGeometry,
    pub placement: PlacementClass,
    /// Box height in pixels for a box at the bottom image row.
    pub object_size: u32,
    pub object_count: usize,
    /// Row at which perspective scaling bottoms out at a quarter of
    /// `object_size`; rows above it keep that minimum size.
    pub horizon_row: usize,
}

/// Required overlap between a box and its placement region.
pub const PLACEMENT_OVERLAP: f64 = 0.5;

/// Rejection-sampling attempt budget per box.
pub const MAX_PLACEMENT_ATTEMPTS: usize = 1000;

impl BoxSamplingStrategy {
    pub fn new(
        geometry: BoxGeometry,
        placement: PlacementClass,
        object_size: u32,
        object_count: usize,
        horizon_row: usize,
    ) -> Result<Self> {
        if object_size == 0 {
            return Err(Error::InvalidValue("object_size must be positive".into()));
        }
        if object_count == 0 {
            return Err(Error::InvalidValue("object_count must be at least 1".into()));
        }
        Ok(Self { geometry, placement, object_size, object_count, horizon_row })
    }

    /// Parses the taxonomy shorthand, e.g. `persp-bg-100-5` or
    /// `none-road-150-3`. The horizon row is not part of the shorthand and
    /// defaults to 40% of the image height once the image is known; callers
    /// can override it afterwards.
    pub fn parse(spec: &str, image_height: usize) -> Result<Self> {
        let parts: Vec<&str> = spec.split('-').collect();
        if parts.len() != 4 {
            return Err(Error::InvalidValue(alloc::format!(
                "strategy '{spec}' is not of the form geometry-class-size-count"
            )));
        }
        let geometry = match parts[0] {
            "none" => BoxGeometry::None,
            "persp" | "perspective" => BoxGeometry::Perspective,
            other => {
                return Err(Error::InvalidValue(alloc::format!("unknown geometry '{other}'")))
            }
        };
        let placement = match parts[1] {
            "road" => PlacementClass::Road,
            "bg" => PlacementClass::Background,
            other => {
                return Err(Error::InvalidValue(alloc::format!("unknown placement '{other}'")))
            }
        };
        let object_size: u32 = parts[2]
            .parse()
            .map_err(|_| Error::InvalidValue(alloc::format!("bad size '{}'", parts[2])))?;
        let object_count: usize = parts[3]
            .parse()
            .map_err(|_| Error::InvalidValue(alloc::format!("bad count '{}'", parts[3])))?;
        Self::new(geometry, placement, object_size, object_count, image_height * 2 / 5)
    }

    /// Box height in pixels for a box centered at row `v`: linear from the
    /// full size at the bottom row down to a quarter at the horizon row.
    pub fn height_at_row(&self, v: f64, image_height: usize) -> f64 {
        let full = self.object_size as f64;
        match self.geometry {
            BoxGeometry::None => full,
            BoxGeometry::Perspective => {
                let bottom = (image_height - 1) as f64;
                let horizon = self.horizon_row as f64;
                if bottom <= horizon {
                    return full;
                }
                let t = ((v - horizon) / (bottom - horizon)).clamp(0.0, 1.0);
                full * (0.25 + 0.75 * t)
            }
        }
    }
}

/// Marks every pixel whose argmax class has the foreground role.
pub fn foreground_mask(seg: &SemanticGrid, catalog: &ClassCatalog) -> Result<ForegroundMask> {
    if seg.channels() != catalog.num_classes() {
        return Err(Error::CatalogMismatch {
            channels: seg.channels(),
            expected: alloc::format!("{} (full catalog)", catalog.num_classes()),
        });
    }
    let labels = argmax_labels(seg, catalog)?;
    let mask = labels
        .labels()
        .iter()
        .map(|&id| catalog.role_of(id) == Some(ClassRole::Foreground))
        .collect();
    ForegroundMask::new(seg.height(), seg.width(), mask)
}

/// Replaces masked cells (all channels) with `fill`; everything else is
/// untouched.
pub fn apply_mask(image: &Raster, mask: &ForegroundMask, fill: f64) -> Result<Raster> {
    if image.height() != mask.height() || image.width() != mask.width() {
        return Err(Error::ShapeMismatch {
            what: "apply_mask image vs mask",
            expected: (mask.height(), mask.width(), image.channels()),
            found: (image.height(), image.width(), image.channels()),
        });
    }
    let mut out = image.clone();
    for r in 0..out.height() {
        for c in 0..out.width() {
            if mask.is_masked(r, c) {
                out.cell_mut(r, c).fill(fill);
            }
        }
    }
    Ok(out)
}

/// Invalidates masked cells of a depth map; the standard companion of
/// [`apply_mask`] when fabricating hallucination pairs.
pub fn mask_depth(depth: &DepthMap, mask: &ForegroundMask) -> Result<DepthMap> {
    if depth.height() != mask.height() || depth.width() != mask.width() {
        return Err(Error::ShapeMismatch {
            what: "mask_depth depth vs mask",
            expected: (mask.height(), mask.width(), 1),
            found: (depth.height(), depth.width(), 1),
        });
    }
    let mut out = depth.clone();
    for r in 0..out.height() {
        for c in 0..out.width() {
            if mask.is_masked(r, c) {
                out.invalidate(r, c);
            }
        }
    }
    Ok(out)
}

/// Per-foreground-class one-hot stack; channel sums reproduce
/// [`foreground_mask`] exactly.
pub fn class_mask_stack(seg: &SemanticGrid, catalog: &ClassCatalog) -> Result<ClassMaskStack> {
    if seg.channels() != catalog.num_classes() {
        return Err(Error::CatalogMismatch {
            channels: seg.channels(),
            expected: alloc::format!("{} (full catalog)", catalog.num_classes()),
        });
    }
    let labels = argmax_labels(seg, catalog)?;
    let fg_ids = catalog.foreground_ids();
    let channels = fg_ids.len();
    let mut data = vec![0.0; seg.height() * seg.width() * channels];
    for (i, &id) in labels.labels().iter().enumerate() {
        if let Some(f) = fg_ids.iter().position(|&fg| fg == id) {
            data[i * channels + f] = 1.0;
        }
    }
    Ok(ClassMaskStack { height: seg.height(), width: seg.width(), channels, data })
}

/// Samples `object_count` boxes whose overlap with the strategy's placement
/// region is at least [`PLACEMENT_OVERLAP`] of the box area. Deterministic
/// per seed; fails if any box exhausts [`MAX_PLACEMENT_ATTEMPTS`].
pub fn sample_random_boxes(
    strategy: &BoxSamplingStrategy,
    seg: &SemanticGrid,
    catalog: &ClassCatalog,
    rng_seed: u64,
) -> Result<Vec<PixelBox>> {
    if seg.channels() != catalog.num_classes() {
        return Err(Error::CatalogMismatch {
            channels: seg.channels(),
            expected: alloc::format!("{} (full catalog)", catalog.num_classes()),
        });
    }
    let labels = argmax_labels(seg, catalog)?;
    let road_id = catalog
        .id_of("road")
        .ok_or_else(|| Error::InvalidValue(String::from("catalog has no 'road' class")))?;
    let region: Vec<bool> = labels
        .labels()
        .iter()
        .map(|&id| match strategy.placement {
            PlacementClass::Road => id == road_id,
            PlacementClass::Background => catalog.role_of(id) == Some(ClassRole::Background),
        })
        .collect();

    let (h, w) = (seg.height(), seg.width());
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut boxes = Vec::with_capacity(strategy.object_count);
    for _ in 0..strategy.object_count {
        let mut placed = None;
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let cu = rng.gen_range(0.0..w as f64);
            let cv = rng.gen_range(0.0..h as f64);
            let box_h = strategy.height_at_row(cv, h).round().max(1.0);
            let box_w = box_h; // square boxes
            let x0 = (cu - box_w / 2.0).floor().max(0.0) as u32;
            let y0 = (cv - box_h / 2.0).floor().max(0.0) as u32;
            let x1 = ((cu + box_w / 2.0).ceil() as u32).min(w as u32);
            let y1 = ((cv + box_h / 2.0).ceil() as u32).min(h as u32);
            let candidate = PixelBox { x0, y0, x1, y1 };
            if candidate.area() == 0 {
                continue;
            }
            if region_overlap(&candidate, &region, w) >= PLACEMENT_OVERLAP {
                placed = Some(candidate);
                break;
            }
        }
        match placed {
            Some(b) => boxes.push(b),
            None => {
                return Err(Error::NoAdmissiblePlacement {
                    placed: boxes.len(),
                    attempts: MAX_PLACEMENT_ATTEMPTS,
                })
            }
        }
    }
    Ok(boxes)
}

/// Fraction of a box covered by region pixels.
fn region_overlap(b: &PixelBox, region: &[bool], width: usize) -> f64 {
    let mut hit = 0u64;
    for y in b.y0..b.y1 {
        for x in b.x0..b.x1 {
            if region[y as usize * width + x as usize] {
                hit += 1;
            }
        }
    }
    hit as f64 / b.area() as f64
}

/// Burns boxes into a segmentation as one-hot foreground cells; used to
/// fabricate occluded scenes.
pub fn burn_boxes(
    seg: &SemanticGrid,
    boxes: &[PixelBox],
    class_id: u8,
    catalog: &ClassCatalog,
) -> Result<SemanticGrid> {
    if seg.channels() != catalog.num_classes() {
        return Err(Error::CatalogMismatch {
            channels: seg.channels(),
            expected: alloc::format!("{} (full catalog)", catalog.num_classes()),
        });
    }
    if catalog.role_of(class_id) != Some(ClassRole::Foreground) {
        return Err(Error::InvalidValue(alloc::format!(
            "class {class_id} is not a foreground class"
        )));
    }
    let mut out = seg.clone();
    for b in boxes {
        for y in b.y0..b.y1.min(out.height() as u32) {
            for x in b.x0..b.x1.min(out.width() as u32) {
                let cell = out.cell_mut(y as usize, x as usize);
                cell.fill(0.0);
                cell[class_id as usize] = 1.0;
            }
        }
    }
    Ok(out)
}
