//! Procedural generator of top-view road layouts: straight and curved roads,
//! T- and X-intersections, lanes, sidewalks, and rendered foreground objects.
//!
//! Maps are rendered by classifying every cell centre against the layout's
//! centreline set, with hard label edges and no anti-aliasing.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::catalog::{ClassCatalog, ClassRole};
use crate::error::Error;
use crate::grid::SemanticGrid;
use crate::project::{rect_at, BevConfig, BevMap};
use crate::Result;

/// Road-network shape. Variants carry the parameters that only make sense
/// for them.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Topology {
    Straight,
    Curved { radius_m: f64, to_right: bool },
    /// Side road branching off at `branch_z_m` metres ahead.
    TIntersection { branch_z_m: f64, to_right: bool },
    /// Crossing road through the grid centre (keeps the layout symmetric
    /// under quarter turns on square grids).
    XIntersection,
}

/// Full parameter set of one sampled layout.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LayoutParams {
    pub topology: Topology,
    pub lanes_per_direction: u32,
    pub lane_width_m: f64,
    pub sidewalk: bool,
    pub sidewalk_width_m: f64,
    pub heading_jitter_deg: f64,
}

impl LayoutParams {
    /// Total paved width: lanes in both directions.
    pub fn road_width_m(&self) -> f64 {
        2.0 * self.lanes_per_direction as f64 * self.lane_width_m
    }

    fn validate(&self, cfg: &BevConfig) -> Result<()> {
        if self.lanes_per_direction < 1 {
            return Err(Error::InvalidValue("need at least one lane per direction".into()));
        }
        if !(self.lane_width_m > 0.0) {
            return Err(Error::InvalidValue("lane width must be positive".into()));
        }
        if self.sidewalk && !(self.sidewalk_width_m > 0.0) {
            return Err(Error::InvalidValue("sidewalk width must be positive".into()));
        }
        if let Topology::Curved { radius_m, .. } = self.topology {
            if !(radius_m > cfg.extent_x_m) {
                return Err(Error::InvalidValue(alloc::format!(
                    "curve radius {radius_m} m must exceed the lateral extent {} m",
                    cfg.extent_x_m
                )));
            }
        }
        Ok(())
    }
}

/// Prior over [`LayoutParams`]; every field is a closed sampling range.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LayoutPrior {
    pub topologies: Vec<TopologyKind>,
    pub lanes_min: u32,
    pub lanes_max: u32,
    pub lane_width_range_m: (f64, f64),
    pub sidewalk_prob: f64,
    pub sidewalk_width_m: f64,
    pub jitter_max_deg: f64,
    pub curve_radius_range_m: (f64, f64),
    /// T-intersection branch position as a fraction of the forward extent.
    pub branch_range: (f64, f64),
}

/// Topology without its sampled parameters, for prior configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum TopologyKind {
    Straight,
    Curved,
    TIntersection,
    XIntersection,
}

impl Default for LayoutPrior {
    fn default() -> Self {
        Self {
            topologies: vec![
                TopologyKind::Straight,
                TopologyKind::Curved,
                TopologyKind::TIntersection,
                TopologyKind::XIntersection,
            ],
            lanes_min: 1,
            lanes_max: 3,
            lane_width_range_m: (2.5, 3.5),
            sidewalk_prob: 0.7,
            sidewalk_width_m: 2.0,
            jitter_max_deg: 15.0,
            curve_radius_range_m: (90.0, 240.0),
            branch_range: (0.25, 0.75),
        }
    }
}

impl LayoutPrior {
    pub fn sample(&self, cfg: &BevConfig, rng: &mut ChaCha8Rng) -> Result<LayoutParams> {
        if self.topologies.is_empty() {
            return Err(Error::InvalidValue("prior admits no topology".into()));
        }
        let kind = self.topologies[rng.gen_range(0..self.topologies.len())];
        let topology = match kind {
            TopologyKind::Straight => Topology::Straight,
            TopologyKind::Curved => Topology::Curved {
                radius_m: rng.gen_range(self.curve_radius_range_m.0..=self.curve_radius_range_m.1),
                to_right: rng.gen_bool(0.5),
            },
            TopologyKind::TIntersection => Topology::TIntersection {
                branch_z_m: cfg.extent_z_m * rng.gen_range(self.branch_range.0..=self.branch_range.1),
                to_right: rng.gen_bool(0.5),
            },
            TopologyKind::XIntersection => Topology::XIntersection,
        };
        Ok(LayoutParams {
            topology,
            lanes_per_direction: rng.gen_range(self.lanes_min..=self.lanes_max),
            lane_width_m: rng
                .gen_range(self.lane_width_range_m.0..=self.lane_width_range_m.1),
            sidewalk: rng.gen_bool(self.sidewalk_prob),
            sidewalk_width_m: self.sidewalk_width_m,
            heading_jitter_deg: rng.gen_range(-self.jitter_max_deg..=self.jitter_max_deg),
        })
    }
}

/// An object to stamp into a layout.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ObjectSpec {
    /// Centre in metres, lateral then forward.
    pub center_x_m: f64,
    pub center_z_m: f64,
    /// Footprint in metres: extent along the forward axis, then lateral.
    pub length_m: f64,
    pub width_m: f64,
    /// Foreground class id.
    pub class_id: u8,
}

impl ObjectSpec {
    pub fn new(center_x_m: f64, center_z_m: f64, length_m: f64, width_m: f64, class_id: u8) -> Result<Self> {
        if !(length_m > 0.0 && width_m > 0.0) {
            return Err(Error::InvalidValue("object footprint must be positive".into()));
        }
        Ok(Self { center_x_m, center_z_m, length_m, width_m, class_id })
    }
}

/// Signed distance from a point to the layout's road centreline set, minus
/// nothing; the caller subtracts half-widths.
fn centerline_distance(topology: &Topology, x: f64, z: f64) -> f64 {
    match *topology {
        Topology::Straight => x.abs(),
        Topology::Curved { radius_m, to_right } => {
            let cx = if to_right { radius_m } else { -radius_m };
            let dx = x - cx;
            ((dx * dx + z * z).sqrt() - radius_m).abs()
        }
        Topology::TIntersection { branch_z_m, to_right } => {
            let main = x.abs();
            // branch: ray from (0, branch_z_m) sideways
            let along = if to_right { x } else { -x };
            let branch = if along >= 0.0 {
                (z - branch_z_m).abs()
            } else {
                (x * x + (z - branch_z_m) * (z - branch_z_m)).sqrt()
            };
            main.min(branch)
        }
        Topology::XIntersection => x.abs(),
    }
}

/// Distance for the crossing road of an X-intersection (kept separate so the
/// cross sits at the grid centre, which depends on the config).
fn cross_distance(cfg: &BevConfig, z: f64) -> f64 {
    (z - cfg.extent_z_m / 2.0).abs()
}

/// Renders a parameter set into a fully observed one-hot map over
/// `{road, sidewalk, background}` channels.
pub fn render_layout(params: &LayoutParams, cfg: &BevConfig, catalog: &ClassCatalog) -> Result<BevMap> {
    params.validate(cfg)?;
    let channels = catalog.num_background();
    let road = catalog
        .id_of("road")
        .ok_or_else(|| Error::InvalidValue("catalog has no 'road' class".into()))? as usize;
    let sidewalk = catalog
        .id_of("sidewalk")
        .ok_or_else(|| Error::InvalidValue("catalog has no 'sidewalk' class".into()))?
        as usize;
    let background = catalog
        .id_of("background")
        .ok_or_else(|| Error::InvalidValue("catalog has no 'background' class".into()))?
        as usize;

    let jitter = params.heading_jitter_deg.to_radians();
    let (sin_j, cos_j) = (jitter.sin(), jitter.cos());
    let half_road = params.road_width_m() / 2.0;

    let mut grid = SemanticGrid::zeros(cfg.rows, cfg.cols, channels);
    let mut road_cells = 0usize;
    for r in 0..cfg.rows {
        for c in 0..cfg.cols {
            let (x, z) = cfg.cell_center(r, c);
            // rotate into the layout's canonical frame (jitter turns the
            // camera, so the scene rotates the opposite way)
            let xr = x * cos_j + z * sin_j;
            let zr = -x * sin_j + z * cos_j;
            let mut dist = centerline_distance(&params.topology, xr, zr);
            if params.topology == Topology::XIntersection {
                dist = dist.min(cross_distance(cfg, zr));
            }
            let label = if dist <= half_road {
                road_cells += 1;
                road
            } else if params.sidewalk && dist <= half_road + params.sidewalk_width_m {
                sidewalk
            } else {
                background
            };
            grid.cell_mut(r, c)[label] = 1.0;
        }
    }
    if road_cells == 0 {
        return Err(Error::NoRoadCells);
    }
    BevMap::fully_observed(grid)
}

/// Samples layout parameters from the prior and renders them. Deterministic
/// per seed.
pub fn sample_layout(
    prior: &LayoutPrior,
    cfg: &BevConfig,
    catalog: &ClassCatalog,
    rng_seed: u64,
) -> Result<(BevMap, LayoutParams)> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    // a layout can degenerate to zero road cells under extreme jitter;
    // resample a few times before giving up
    let mut last_err = Error::NoRoadCells;
    for _ in 0..8 {
        let params = prior.sample(cfg, &mut rng)?;
        match render_layout(&params, cfg, catalog) {
            Ok(map) => return Ok((map, params)),
            Err(e @ Error::NoRoadCells) => last_err = e,
            Err(e) => return Err(e),
        }
    }
    Err(last_err)
}

/// Stamps objects into a fully observed map as one-hot rectangles; later
/// objects overwrite earlier ones. The output carries background plus
/// foreground channels. Returns the indices of objects that fell entirely
/// outside the extent.
pub fn render_objects(
    base: &BevMap,
    objects: &[ObjectSpec],
    cfg: &BevConfig,
    catalog: &ClassCatalog,
) -> Result<(BevMap, Vec<usize>)> {
    if base.rows() != cfg.rows || base.cols() != cfg.cols {
        return Err(Error::ShapeMismatch {
            what: "render_objects base vs config",
            expected: (cfg.rows, cfg.cols, base.channels()),
            found: (base.rows(), base.cols(), base.channels()),
        });
    }
    if base.num_observed() != base.observed.len() {
        return Err(Error::InvalidValue("render_objects expects a fully observed base".into()));
    }
    let channels = catalog.num_background() + catalog.num_foreground();
    if base.channels() > channels {
        return Err(Error::CatalogMismatch {
            channels: base.channels(),
            expected: alloc::format!("at most {channels}"),
        });
    }

    let mut grid = SemanticGrid::zeros(cfg.rows, cfg.cols, channels);
    for r in 0..cfg.rows {
        for c in 0..cfg.cols {
            grid.cell_mut(r, c)[..base.channels()].copy_from_slice(base.grid.cell(r, c));
        }
    }

    let mut skipped = Vec::new();
    for (i, obj) in objects.iter().enumerate() {
        if catalog.role_of(obj.class_id) != Some(ClassRole::Foreground) {
            return Err(Error::InvalidValue(alloc::format!(
                "object class {} is not a foreground class",
                obj.class_id
            )));
        }
        match rect_at(cfg, obj.center_x_m, obj.center_z_m, obj.length_m, obj.width_m) {
            Some(rect) => {
                for r in rect.row0..rect.row1 {
                    for c in rect.col0..rect.col1 {
                        let cell = grid.cell_mut(r, c);
                        cell.fill(0.0);
                        cell[obj.class_id as usize] = 1.0;
                    }
                }
            }
            None => skipped.push(i),
        }
    }
    Ok((BevMap::fully_observed(grid)?, skipped))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn catalog() -> ClassCatalog {
        ClassCatalog::default_road_scene()
    }

    fn straight(lanes: u32, lane_width: f64, sidewalk: bool) -> LayoutParams {
        LayoutParams {
            topology: Topology::Straight,
            lanes_per_direction: lanes,
            lane_width_m: lane_width,
            sidewalk,
            sidewalk_width_m: 2.0,
            heading_jitter_deg: 0.0,
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let cfg = BevConfig::paper_default();
        let prior = LayoutPrior::default();
        let (a, pa) = sample_layout(&prior, &cfg, &catalog(), 42).unwrap();
        let (b, pb) = sample_layout(&prior, &cfg, &catalog(), 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(pa, pb);
        let (c, _) = sample_layout(&prior, &cfg, &catalog(), 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn straight_band_width_and_position() {
        let cfg = BevConfig::paper_default();
        let params = straight(1, 3.0, false);
        let map = render_layout(&params, &cfg, &catalog()).unwrap();
        map.validate_strict().unwrap();
        // brute-force oracle: cell centres within 3 m of the centreline
        for r in 0..cfg.rows {
            let mut band = Vec::new();
            for c in 0..cfg.cols {
                let (x, _) = cfg.cell_center(r, c);
                let expect_road = x.abs() <= 3.0;
                let is_road = map.grid.cell(r, c)[0] == 1.0;
                assert_eq!(is_road, expect_road, "row {r} col {c}");
                if is_road {
                    band.push(c);
                }
            }
            // 6 m at 0.46875 m/cell: 12 or 13 contiguous cells centred at l/2
            assert!(band.len() == 12 || band.len() == 13, "band width {}", band.len());
            assert_eq!(band.last().unwrap() - band.first().unwrap() + 1, band.len());
            let mid = (band.first().unwrap() + band.last().unwrap()) as f64 / 2.0;
            assert!((mid - (cfg.cols as f64 - 1.0) / 2.0).abs() <= 0.5);
        }
    }

    #[test]
    fn band_width_stable_across_seeds() {
        // straight roads with fixed widths keep their band width for any
        // jitter-free seed-dependent leftovers
        let cfg = BevConfig::paper_default();
        for lanes in 1..=3u32 {
            let params = straight(lanes, 3.0, false);
            let map = render_layout(&params, &cfg, &catalog()).unwrap();
            let width_m = params.road_width_m();
            let expected = (width_m / cfg.res_x()).round();
            for r in 0..cfg.rows {
                let n = (0..cfg.cols).filter(|&c| map.grid.cell(r, c)[0] == 1.0).count();
                assert!((n as f64 - expected).abs() <= 1.0);
            }
        }
    }

    #[test]
    fn sidewalks_flank_the_road() {
        let cfg = BevConfig::paper_default();
        let params = straight(1, 3.0, true);
        let map = render_layout(&params, &cfg, &catalog()).unwrap();
        // adjacency scan: every row's road band is bracketed by sidewalk runs
        // of the configured width
        let sidewalk_cells = (params.sidewalk_width_m / cfg.res_x()).floor() as usize;
        for r in 0..cfg.rows {
            let labels: Vec<usize> = (0..cfg.cols)
                .map(|c| {
                    let cell = map.grid.cell(r, c);
                    (0..3).find(|&i| cell[i] == 1.0).unwrap()
                })
                .collect();
            let first_road = labels.iter().position(|&l| l == 0).unwrap();
            let last_road = labels.iter().rposition(|&l| l == 0).unwrap();
            for d in 1..=sidewalk_cells {
                assert_eq!(labels[first_road - d], 1, "row {r} left sidewalk");
                assert_eq!(labels[last_road + d], 1, "row {r} right sidewalk");
            }
        }
    }

    #[test]
    fn x_intersection_square_grid_quarter_turn_invariance() {
        // square grid, square extent, no jitter: label counts survive a 90
        // degree rotation
        let cfg = BevConfig::new(64, 64, 30.0, 30.0).unwrap();
        let params = LayoutParams {
            topology: Topology::XIntersection,
            lanes_per_direction: 1,
            lane_width_m: 3.0,
            sidewalk: true,
            sidewalk_width_m: 2.0,
            heading_jitter_deg: 0.0,
        };
        let map = render_layout(&params, &cfg, &catalog()).unwrap();
        let label_at = |r: usize, c: usize| -> usize {
            let cell = map.grid.cell(r, c);
            (0..3).find(|&i| cell[i] == 1.0).unwrap()
        };
        let mut counts = [0usize; 3];
        let mut rotated = [0usize; 3];
        for r in 0..64 {
            for c in 0..64 {
                counts[label_at(r, c)] += 1;
                rotated[label_at(c, 63 - r)] += 1;
            }
        }
        assert_eq!(counts, rotated);
        assert!(counts[0] > 0 && counts[1] > 0 && counts[2] > 0);
    }

    #[test]
    fn curved_radius_must_clear_extent() {
        let cfg = BevConfig::paper_default();
        let params = LayoutParams {
            topology: Topology::Curved { radius_m: 20.0, to_right: true },
            lanes_per_direction: 1,
            lane_width_m: 3.0,
            sidewalk: false,
            sidewalk_width_m: 2.0,
            heading_jitter_deg: 0.0,
        };
        assert!(render_layout(&params, &cfg, &catalog()).is_err());
    }

    #[test]
    fn t_intersection_has_branch_band() {
        let cfg = BevConfig::paper_default();
        let params = LayoutParams {
            topology: Topology::TIntersection { branch_z_m: 30.0, to_right: true },
            lanes_per_direction: 1,
            lane_width_m: 3.0,
            sidewalk: false,
            sidewalk_width_m: 2.0,
            heading_jitter_deg: 0.0,
        };
        let map = render_layout(&params, &cfg, &catalog()).unwrap();
        // at z = 30 the entire right half row is road, the far left is not
        let (row, _) = cfg.cell_of(0.0, 30.0).unwrap();
        let right = map.grid.cell(row, cfg.cols - 1)[0];
        let left = map.grid.cell(row, 0)[0];
        assert_eq!(right, 1.0);
        assert_eq!(left, 0.0);
    }

    #[test]
    fn objects_overwrite_in_list_order() {
        let cfg = BevConfig::paper_default();
        let cat = catalog();
        let base = render_layout(&straight(1, 3.0, false), &cfg, &cat).unwrap();

        // empty object list: base unchanged (up to channel widening)
        let (same, skipped) = render_objects(&base, &[], &cfg, &cat).unwrap();
        assert!(skipped.is_empty());
        for r in 0..cfg.rows {
            for c in 0..cfg.cols {
                assert_eq!(&same.grid.cell(r, c)[..3], base.grid.cell(r, c));
            }
        }

        let car = ObjectSpec::new(0.0, 10.0, 4.0, 2.0, 3).unwrap();
        let person = ObjectSpec::new(0.0, 10.0, 4.0, 2.0, 4).unwrap();
        let (out, skipped) = render_objects(&base, &[car, person], &cfg, &cat).unwrap();
        assert!(skipped.is_empty());
        let (row, col) = cfg.cell_of(0.0, 10.0).unwrap();
        assert_eq!(out.grid.cell(row, col)[4], 1.0); // later object wins
        assert_eq!(out.grid.cell(row, col)[3], 0.0);
    }

    #[test]
    fn object_footprint_cell_count() {
        let cfg = BevConfig::paper_default();
        let cat = catalog();
        let base = render_layout(&straight(1, 3.0, false), &cfg, &cat).unwrap();
        let car = ObjectSpec::new(0.0, 10.0, 4.0, 2.0, 3).unwrap();
        let (out, _) = render_objects(&base, &[car], &cfg, &cat).unwrap();
        let mut rows = Vec::new();
        let mut cols = Vec::new();
        for r in 0..cfg.rows {
            for c in 0..cfg.cols {
                if out.grid.cell(r, c)[3] == 1.0 {
                    rows.push(r);
                    cols.push(c);
                }
            }
        }
        let n_rows = rows.iter().max().unwrap() - rows.iter().min().unwrap() + 1;
        let n_cols = cols.iter().max().unwrap() - cols.iter().min().unwrap() + 1;
        assert_eq!(n_rows, (4.0f64 / cfg.res_z()).ceil() as usize); // 9
        assert_eq!(n_cols, (2.0f64 / cfg.res_x()).ceil() as usize); // 5
        assert_eq!(rows.len(), n_rows * n_cols);
    }

    #[test]
    fn fully_outside_objects_are_reported() {
        let cfg = BevConfig::paper_default();
        let cat = catalog();
        let base = render_layout(&straight(1, 3.0, false), &cfg, &cat).unwrap();
        let gone = ObjectSpec::new(100.0, 100.0, 4.0, 2.0, 3).unwrap();
        let (out, skipped) = render_objects(&base, &[gone], &cfg, &cat).unwrap();
        assert_eq!(skipped, vec![0]);
        assert!(out.grid.data().iter().enumerate().all(|(i, &v)| {
            let ch = i % 5;
            ch < 3 || v == 0.0
        }));
    }
}
