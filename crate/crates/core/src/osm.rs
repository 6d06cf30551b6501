//! Road graphs extracted from OpenStreetMap data and their rasterization
//! into a camera-aligned BEV map.
//!
//! Projection is local equirectangular about the pose: one degree of
//! latitude is [`METERS_PER_DEGREE`] metres, one degree of longitude that
//! times `cos(latitude)`. Plenty accurate at the 60 m scale of a map crop.

use alloc::string::String;
use alloc::vec::Vec;

use num_traits::Float;

use crate::catalog::ClassCatalog;
use crate::error::Error;
use crate::grid::SemanticGrid;
use crate::project::{BevConfig, BevMap};
use crate::Result;

/// Metres per degree of great-circle arc (WGS84 equatorial radius).
pub const METERS_PER_DEGREE: f64 = 111_319.490_793_273_58;

/// A map node: id plus WGS84 position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OsmNode {
    pub id: i64,
    pub lat: f64,
    pub lon: f64,
}

/// Stroke class of a way.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WayKind {
    Road,
    Sidewalk,
}

/// An ordered run of nodes with its classification and tags.
#[derive(Debug, Clone, PartialEq)]
pub struct OsmWay {
    pub id: i64,
    pub node_ids: Vec<i64>,
    pub tags: Vec<(String, String)>,
}

impl OsmWay {
    pub fn tag(&self, key: &str) -> Option<&str> {
        self.tags.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// Footways, paths, pedestrian ways and anything tagged as a sidewalk
    /// stroke as sidewalks; every other highway is a road.
    pub fn kind(&self) -> WayKind {
        match self.tag("highway") {
            Some("footway") | Some("path") | Some("pedestrian") | Some("steps") => {
                WayKind::Sidewalk
            }
            _ => {
                if self.tag("footway").is_some() || self.tag("sidewalk").is_some() {
                    WayKind::Sidewalk
                } else {
                    WayKind::Road
                }
            }
        }
    }
}

/// Validated node/way soup: every way resolves and has at least two nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct RoadGraph {
    nodes: Vec<OsmNode>,
    ways: Vec<OsmWay>,
}

impl RoadGraph {
    pub fn new(nodes: Vec<OsmNode>, ways: Vec<OsmWay>) -> Result<Self> {
        for way in &ways {
            if way.node_ids.len() < 2 {
                return Err(Error::DegenerateWay { way: way.id });
            }
            for &nid in &way.node_ids {
                if !nodes.iter().any(|n| n.id == nid) {
                    return Err(Error::DanglingNodeRef { way: way.id, node: nid });
                }
            }
        }
        Ok(Self { nodes, ways })
    }

    pub fn empty() -> Self {
        Self { nodes: Vec::new(), ways: Vec::new() }
    }

    pub fn nodes(&self) -> &[OsmNode] {
        &self.nodes
    }

    pub fn ways(&self) -> &[OsmWay] {
        &self.ways
    }

    fn node(&self, id: i64) -> &OsmNode {
        self.nodes.iter().find(|n| n.id == id).expect("validated at construction")
    }
}

/// Camera position and driving direction.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GeoPose {
    pub lat: f64,
    pub lon: f64,
    /// Degrees clockwise from north.
    pub heading_deg: f64,
}

impl GeoPose {
    pub fn new(lat: f64, lon: f64, heading_deg: f64) -> Result<Self> {
        if !(-90.0..=90.0).contains(&lat) {
            return Err(Error::InvalidPose(alloc::format!("latitude {lat} outside [-90, 90]")));
        }
        if !(-180.0..=180.0).contains(&lon) {
            return Err(Error::InvalidPose(alloc::format!("longitude {lon} outside [-180, 180]")));
        }
        if !heading_deg.is_finite() {
            return Err(Error::InvalidPose("heading must be finite".into()));
        }
        Ok(Self { lat, lon, heading_deg })
    }
}

/// Stroke widths used when OSM carries no usable width information.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct WidthDefaults {
    /// Metres per road lane.
    pub lane_width_m: f64,
    /// Lane count assumed when a way has no `lanes` tag.
    pub default_lanes: u32,
    pub sidewalk_width_m: f64,
}

impl Default for WidthDefaults {
    fn default() -> Self {
        Self { lane_width_m: 3.5, default_lanes: 2, sidewalk_width_m: 2.0 }
    }
}

impl WidthDefaults {
    fn stroke_width(&self, way: &OsmWay) -> f64 {
        match way.kind() {
            WayKind::Sidewalk => self.sidewalk_width_m,
            WayKind::Road => {
                let lanes = way
                    .tag("lanes")
                    .and_then(|v| v.parse::<u32>().ok())
                    .filter(|&n| n >= 1)
                    .unwrap_or(self.default_lanes);
                lanes as f64 * self.lane_width_m
            }
        }
    }
}

/// Distance from a point to a segment.
fn segment_distance(px: f64, pz: f64, ax: f64, az: f64, bx: f64, bz: f64) -> f64 {
    let dx = bx - ax;
    let dz = bz - az;
    let len2 = dx * dx + dz * dz;
    let t = if len2 > 0.0 { (((px - ax) * dx + (pz - az) * dz) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let qx = ax + t * dx;
    let qz = az + t * dz;
    ((px - qx) * (px - qx) + (pz - qz) * (pz - qz)).sqrt()
}

/// Renders the graph around `pose` into a fully observed one-hot map over
/// `{road, sidewalk, background}`, heading pointing up-grid. Ways are stroked
/// as polylines of their class width; road beats sidewalk where they meet.
pub fn rasterize_osm(
    graph: &RoadGraph,
    pose: &GeoPose,
    cfg: &BevConfig,
    widths: &WidthDefaults,
) -> Result<BevMap> {
    let channels = ClassCatalog::default_road_scene().num_background();
    let catalog = ClassCatalog::default_road_scene();
    let road = catalog.id_of("road").expect("default catalog") as usize;
    let sidewalk = catalog.id_of("sidewalk").expect("default catalog") as usize;
    let background = catalog.id_of("background").expect("default catalog") as usize;

    // project node positions to camera-aligned metres: east/north first,
    // then rotate so the heading points forward (+z), right hand to +x
    let meters_per_deg_lon = METERS_PER_DEGREE * pose.lat.to_radians().cos();
    let h = pose.heading_deg.to_radians();
    let (sin_h, cos_h) = (h.sin(), h.cos());
    let project = |node: &OsmNode| -> (f64, f64) {
        let east = (node.lon - pose.lon) * meters_per_deg_lon;
        let north = (node.lat - pose.lat) * METERS_PER_DEGREE;
        let x = east * cos_h - north * sin_h;
        let z = east * sin_h + north * cos_h;
        (x, z)
    };

    // collect strokes per class
    let mut segments: Vec<(WayKind, f64, (f64, f64), (f64, f64))> = Vec::new();
    for way in graph.ways() {
        let half_width = widths.stroke_width(way) / 2.0;
        let pts: Vec<(f64, f64)> = way.node_ids.iter().map(|&id| project(graph.node(id))).collect();
        for pair in pts.windows(2) {
            segments.push((way.kind(), half_width, pair[0], pair[1]));
        }
    }

    let mut grid = SemanticGrid::zeros(cfg.rows, cfg.cols, channels);
    for r in 0..cfg.rows {
        for c in 0..cfg.cols {
            let (x, z) = cfg.cell_center(r, c);
            let mut label = background;
            let mut on_sidewalk = false;
            for &(kind, half, (ax, az), (bx, bz)) in &segments {
                if segment_distance(x, z, ax, az, bx, bz) <= half {
                    match kind {
                        WayKind::Road => {
                            label = road;
                            break;
                        }
                        WayKind::Sidewalk => on_sidewalk = true,
                    }
                }
            }
            if label != road && on_sidewalk {
                label = sidewalk;
            }
            grid.cell_mut(r, c)[label] = 1.0;
        }
    }
    BevMap::fully_observed(grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Offsets in metres around a reference point, converted to lat/lon.
    fn node_at(id: i64, east_m: f64, north_m: f64, origin: &GeoPose) -> OsmNode {
        let lat = origin.lat + north_m / METERS_PER_DEGREE;
        let lon =
            origin.lon + east_m / (METERS_PER_DEGREE * origin.lat.to_radians().cos());
        OsmNode { id, lat, lon }
    }

    fn highway(id: i64, node_ids: Vec<i64>, lanes: Option<&str>) -> OsmWay {
        let mut tags = alloc::vec![(String::from("highway"), String::from("residential"))];
        if let Some(l) = lanes {
            tags.push((String::from("lanes"), String::from(l)));
        }
        OsmWay { id, node_ids, tags }
    }

    fn label_of(map: &BevMap, r: usize, c: usize) -> usize {
        let cell = map.grid.cell(r, c);
        (0..cell.len()).find(|&i| cell[i] == 1.0).unwrap()
    }

    #[test]
    fn graph_validation() {
        let pose = GeoPose::new(49.0, 8.4, 0.0).unwrap();
        let nodes = alloc::vec![node_at(1, 0.0, -100.0, &pose), node_at(2, 0.0, 100.0, &pose)];
        assert!(RoadGraph::new(nodes.clone(), alloc::vec![highway(10, alloc::vec![1, 2], None)]).is_ok());
        assert!(matches!(
            RoadGraph::new(nodes.clone(), alloc::vec![highway(10, alloc::vec![1, 3], None)]),
            Err(Error::DanglingNodeRef { way: 10, node: 3 })
        ));
        assert!(matches!(
            RoadGraph::new(nodes, alloc::vec![highway(10, alloc::vec![1], None)]),
            Err(Error::DegenerateWay { way: 10 })
        ));
    }

    #[test]
    fn pose_validation() {
        assert!(GeoPose::new(91.0, 0.0, 0.0).is_err());
        assert!(GeoPose::new(0.0, 181.0, 0.0).is_err());
        assert!(GeoPose::new(0.0, 0.0, f64::NAN).is_err());
    }

    #[test]
    fn empty_graph_is_all_background() {
        let pose = GeoPose::new(49.0, 8.4, 0.0).unwrap();
        let cfg = BevConfig::paper_default();
        let map =
            rasterize_osm(&RoadGraph::empty(), &pose, &cfg, &WidthDefaults::default()).unwrap();
        map.validate_strict().unwrap();
        for r in 0..cfg.rows {
            for c in 0..cfg.cols {
                assert_eq!(label_of(&map, r, c), 2);
            }
        }
    }

    /// A single way through the pose point, 6 m wide, aligned with heading.
    fn single_way_graph(pose: &GeoPose, heading_of_way_deg: f64) -> RoadGraph {
        let rad = heading_of_way_deg.to_radians();
        let (e, n) = (rad.sin(), rad.cos());
        let nodes = alloc::vec![
            node_at(1, -500.0 * e, -500.0 * n, pose),
            node_at(2, 500.0 * e, 500.0 * n, pose),
        ];
        // lanes=2 at 3 m per lane = 6 m stroke
        RoadGraph::new(nodes, alloc::vec![highway(7, alloc::vec![1, 2], Some("2"))]).unwrap()
    }

    fn widths_3m() -> WidthDefaults {
        WidthDefaults { lane_width_m: 3.0, default_lanes: 2, sidewalk_width_m: 2.0 }
    }

    #[test]
    fn aligned_way_gives_vertical_band() {
        let pose = GeoPose::new(49.0, 8.4, 30.0).unwrap();
        let cfg = BevConfig::paper_default();
        let graph = single_way_graph(&pose, 30.0); // same direction as heading
        let map = rasterize_osm(&graph, &pose, &cfg, &widths_3m()).unwrap();
        // brute-force oracle: road iff |x| <= 3 m
        for r in 0..cfg.rows {
            let mut band = 0usize;
            for c in 0..cfg.cols {
                let (x, _) = cfg.cell_center(r, c);
                let expected = if x.abs() <= 3.0 { 0 } else { 2 };
                assert_eq!(label_of(&map, r, c), expected, "row {r} col {c}");
                band += (label_of(&map, r, c) == 0) as usize;
            }
            assert!((12..=13).contains(&band));
        }
    }

    #[test]
    fn heading_rotation_turns_band_horizontal() {
        let pose = GeoPose::new(49.0, 8.4, 30.0).unwrap();
        let cfg = BevConfig::paper_default();
        let graph = single_way_graph(&pose, 30.0);
        // rotate the pose by 90 degrees: the way now crosses left-right
        let pose_rot = GeoPose::new(pose.lat, pose.lon, pose.heading_deg + 90.0).unwrap();
        let map = rasterize_osm(&graph, &pose_rot, &cfg, &widths_3m()).unwrap();
        for r in 0..cfg.rows {
            for c in 0..cfg.cols {
                let (_, z) = cfg.cell_center(r, c);
                let expected = if z.abs() <= 3.0 { 0 } else { 2 };
                assert_eq!(label_of(&map, r, c), expected);
            }
        }
        // camera row (z just above 0) carries the band
        assert_eq!(label_of(&map, cfg.rows - 1, 0), 0);
    }

    #[test]
    fn rasterization_is_rotation_equivariant() {
        // a way parallel to the heading, offset 5 m to the right; rotating
        // the pose heading by phi must rotate the rendered field by -phi
        // about the camera. Checked against the analytic field at 90/180.
        let pose = GeoPose::new(49.0, 8.4, 10.0).unwrap();
        let cfg = BevConfig::new(64, 64, 30.0, 30.0).unwrap();
        let rad = pose.heading_deg.to_radians();
        let (e, n) = (rad.sin(), rad.cos());
        let (re, rn) = (rad.cos(), -rad.sin());
        let nodes = alloc::vec![
            node_at(1, -500.0 * e + 5.0 * re, -500.0 * n + 5.0 * rn, &pose),
            node_at(2, 500.0 * e + 5.0 * re, 500.0 * n + 5.0 * rn, &pose),
        ];
        let graph = RoadGraph::new(nodes, alloc::vec![highway(7, alloc::vec![1, 2], Some("2"))]).unwrap();

        // base field: road iff |x - 5| <= 3
        let base = rasterize_osm(&graph, &pose, &cfg, &widths_3m()).unwrap();
        for r in 0..cfg.rows {
            for c in 0..cfg.cols {
                let (x, _) = cfg.cell_center(r, c);
                assert_eq!(label_of(&base, r, c) == 0, (x - 5.0).abs() <= 3.0);
            }
        }
        for quarter_turns in [1usize, 2] {
            let phi = (90.0 * quarter_turns as f64).to_radians();
            let rotated_pose =
                GeoPose::new(pose.lat, pose.lon, pose.heading_deg + 90.0 * quarter_turns as f64)
                    .unwrap();
            let rotated = rasterize_osm(&graph, &rotated_pose, &cfg, &widths_3m()).unwrap();
            for r in 0..cfg.rows {
                for c in 0..cfg.cols {
                    let (x, z) = cfg.cell_center(r, c);
                    // pull the cell centre back by -phi into the base frame
                    let xs = x * phi.cos() + z * phi.sin();
                    let expect_road = (xs - 5.0).abs() <= 3.0;
                    assert_eq!(
                        label_of(&rotated, r, c) == 0,
                        expect_road,
                        "turns {quarter_turns} cell ({r}, {c})"
                    );
                }
            }
        }
    }

    #[test]
    fn translating_the_pose_shifts_the_band() {
        let pose = GeoPose::new(49.0, 8.4, 0.0).unwrap();
        let cfg = BevConfig::paper_default();
        // way crossing left-right 30 m ahead
        let nodes = alloc::vec![node_at(1, -500.0, 30.0, &pose), node_at(2, 500.0, 30.0, &pose)];
        let graph = RoadGraph::new(nodes, alloc::vec![highway(7, alloc::vec![1, 2], Some("2"))]).unwrap();
        let base = rasterize_osm(&graph, &pose, &cfg, &widths_3m()).unwrap();

        // move the camera 9.375 m (20 cells) along heading: the band slides
        // 20 rows toward the camera
        let delta = 20.0 * cfg.res_z();
        let pose2 = GeoPose::new(pose.lat + delta / METERS_PER_DEGREE, pose.lon, 0.0).unwrap();
        let shifted = rasterize_osm(&graph, &pose2, &cfg, &widths_3m()).unwrap();

        let band_center = |map: &BevMap| -> f64 {
            let rows: Vec<usize> = (0..cfg.rows)
                .filter(|&r| label_of(map, r, cfg.cols / 2) == 0)
                .collect();
            (rows[0] + rows[rows.len() - 1]) as f64 / 2.0
        };
        let moved = band_center(&shifted) - band_center(&base);
        assert!((moved - 20.0).abs() <= 1.0, "band moved {moved} rows");
    }

    #[test]
    fn sidewalk_ways_render_thinner_and_lose_to_roads() {
        let pose = GeoPose::new(49.0, 8.4, 0.0).unwrap();
        let cfg = BevConfig::paper_default();
        let nodes = alloc::vec![
            node_at(1, 0.0, -500.0, &pose),
            node_at(2, 0.0, 500.0, &pose),
        ];
        let footway = OsmWay {
            id: 9,
            node_ids: alloc::vec![1, 2],
            tags: alloc::vec![(String::from("highway"), String::from("footway"))],
        };
        let graph = RoadGraph::new(nodes.clone(), alloc::vec![footway.clone()]).unwrap();
        let map = rasterize_osm(&graph, &pose, &cfg, &widths_3m()).unwrap();
        let mid_row = cfg.rows / 2;
        assert_eq!(label_of(&map, mid_row, cfg.cols / 2), 1);

        // overlay a road on the same line: road wins
        let graph2 =
            RoadGraph::new(nodes, alloc::vec![footway, highway(7, alloc::vec![1, 2], Some("2"))]).unwrap();
        let map2 = rasterize_osm(&graph2, &pose, &cfg, &widths_3m()).unwrap();
        assert_eq!(label_of(&map2, mid_row, cfg.cols / 2), 0);
    }
}
