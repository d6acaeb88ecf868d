//! Procedural 2.5D city and road-graph traffic.
//!
//! The city is a Manhattan grid: streets of constant width separate rectangular
//! blocks, each block holds exactly one convex (rectangular) building, and the
//! street centerlines form the road graph vehicles drive on. Everything here is
//! a pure function of `(seed, params)`.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use nalgebra::{Point2, Point3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::ArrayConfig;
use crate::error::{Error, Result};
use crate::seeds;

/// Height of the transmitting antenna above the vehicle roof, m.
pub const ANTENNA_ABOVE_ROOF: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Material {
    Concrete,
    Glass,
    VehicleBody,
}

impl Material {
    pub fn name(self) -> &'static str {
        match self {
            Material::Concrete => "concrete",
            Material::Glass => "glass",
            Material::VehicleBody => "vehicle_body",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "concrete" => Ok(Material::Concrete),
            "glass" => Ok(Material::Glass),
            "vehicle_body" => Ok(Material::VehicleBody),
            _ => Err(Error::Data(format!("unknown material '{s}'"))),
        }
    }
}

/// Axis-aligned rectangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub min: Point2<f64>,
    pub max: Point2<f64>,
}

impl Rect {
    pub fn contains(&self, p: &Point2<f64>) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    pub fn contains_strictly(&self, p: &Point2<f64>) -> bool {
        p.x > self.min.x && p.x < self.max.x && p.y > self.min.y && p.y < self.max.y
    }

    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }

    pub fn diagonal(&self) -> f64 {
        self.width().hypot(self.height())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Building {
    /// Counterclockwise vertices of a convex footprint, m.
    pub footprint: Vec<Point2<f64>>,
    pub height: f64,
    pub material: Material,
}

impl Building {
    /// Point-in-polygon for the convex footprint (boundary counts as inside).
    pub fn footprint_contains(&self, p: &Point2<f64>) -> bool {
        let n = self.footprint.len();
        (0..n).all(|i| {
            let a = self.footprint[i];
            let b = self.footprint[(i + 1) % n];
            let e = b - a;
            let r = p - a;
            e.x * r.y - e.y * r.x >= 0.0
        })
    }

    /// Point-in-solid test against the extruded footprint.
    pub fn contains(&self, p: &Point3<f64>) -> bool {
        p.z >= 0.0 && p.z <= self.height && self.footprint_contains(&Point2::new(p.x, p.y))
    }

    fn signed_area(&self) -> f64 {
        let n = self.footprint.len();
        (0..n)
            .map(|i| {
                let a = self.footprint[i];
                let b = self.footprint[(i + 1) % n];
                a.x * b.y - b.x * a.y
            })
            .sum::<f64>()
            / 2.0
    }

    pub fn is_valid(&self) -> bool {
        self.footprint.len() >= 3
            && self.signed_area() > 0.0
            && self.height > 0.0
            && self.height <= 200.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoadEdge {
    pub a: usize,
    pub b: usize,
    /// Corridor width, m.
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RoadGraph {
    pub nodes: Vec<Point2<f64>>,
    pub edges: Vec<RoadEdge>,
}

impl RoadGraph {
    /// Edge indices incident to each node.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for (i, e) in self.edges.iter().enumerate() {
            adj[e.a].push(i);
            adj[e.b].push(i);
        }
        adj
    }

    pub fn is_connected(&self) -> bool {
        if self.nodes.is_empty() {
            return false;
        }
        let adj = self.adjacency();
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(n) = stack.pop() {
            for &e in &adj[n] {
                let other = if self.edges[e].a == n {
                    self.edges[e].b
                } else {
                    self.edges[e].a
                };
                if !seen[other] {
                    seen[other] = true;
                    stack.push(other);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Distance from `p` to the nearest edge centerline, with that edge's half width.
    pub fn nearest_edge(&self, p: &Point2<f64>) -> Option<(usize, f64)> {
        self.edges
            .iter()
            .enumerate()
            .map(|(i, e)| (i, point_segment_distance(p, &self.nodes[e.a], &self.nodes[e.b])))
            .min_by(|x, y| x.1.total_cmp(&y.1))
    }

    /// True if `p` lies inside some road corridor.
    pub fn on_corridor(&self, p: &Point2<f64>) -> bool {
        self.edges.iter().any(|e| {
            point_segment_distance(p, &self.nodes[e.a], &self.nodes[e.b]) <= e.width / 2.0 + 1e-9
        })
    }
}

pub(crate) fn point_segment_distance(p: &Point2<f64>, a: &Point2<f64>, b: &Point2<f64>) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return (p - a).norm();
    }
    let t = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaseStation {
    pub position: Point3<f64>,
    pub array: ArrayConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub bounds: Rect,
    pub buildings: Vec<Building>,
    pub roads: RoadGraph,
    pub bs: BaseStation,
}

/// Parameters of the procedural city.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioParams {
    /// Scene extent along x, m.
    pub width: f64,
    /// Scene extent along y, m.
    pub height: f64,
    /// Side of a square block cell, m.
    pub block_size: f64,
    pub street_width: f64,
    pub building_height_min: f64,
    pub building_height_max: f64,
    /// Probability that a building is glass-clad rather than concrete.
    pub glass_fraction: f64,
    /// Range of the building side length as a fraction of the block side.
    pub fill_min: f64,
    pub fill_max: f64,
    pub bs_height: f64,
    /// Base-station location as a fraction of the bounds; snapped to the nearest intersection.
    pub bs_anchor: [f64; 2],
    /// Boresight azimuth of the base-station array, rad.
    pub bs_boresight: f64,
    pub bs_rows: usize,
    pub bs_cols: usize,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        Self {
            width: 550.0,
            height: 670.0,
            block_size: 60.0,
            street_width: 20.0,
            building_height_min: 10.0,
            building_height_max: 30.0,
            glass_fraction: 0.3,
            fill_min: 0.55,
            fill_max: 0.9,
            bs_height: 21.7,
            bs_anchor: [0.5, 0.3],
            bs_boresight: std::f64::consts::FRAC_PI_2,
            bs_rows: 4,
            bs_cols: 8,
        }
    }
}

impl ScenarioParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("width", self.width),
            ("height", self.height),
            ("block_size", self.block_size),
            ("street_width", self.street_width),
            ("bs_height", self.bs_height),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("scene.{name} must be positive, got {v}")));
            }
        }
        if self.street_width > self.block_size {
            return Err(Error::Config(format!(
                "street width {} exceeds block size {}",
                self.street_width, self.block_size
            )));
        }
        if !(self.building_height_min > 0.0
            && self.building_height_min <= self.building_height_max
            && self.building_height_max <= 200.0)
        {
            return Err(Error::Config(
                "building heights must satisfy 0 < min <= max <= 200".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.glass_fraction) {
            return Err(Error::Config("glass_fraction must be in [0, 1]".into()));
        }
        if !(self.fill_min > 0.0 && self.fill_min <= self.fill_max && self.fill_max < 1.0) {
            return Err(Error::Config("fill range must satisfy 0 < min <= max < 1".into()));
        }
        if self.bs_rows == 0 || self.bs_cols == 0 {
            return Err(Error::Config("base-station array must have elements".into()));
        }
        Ok(())
    }

    fn grid_counts(&self) -> (usize, usize) {
        let pitch = self.block_size + self.street_width;
        let nx = ((self.width - self.street_width) / pitch).floor().max(0.0) as usize;
        let ny = ((self.height - self.street_width) / pitch).floor().max(0.0) as usize;
        (nx, ny)
    }
}

/// Builds the Manhattan-grid city.
pub fn generate_city(seed: u64, params: &ScenarioParams) -> Result<Scene> {
    params.validate()?;
    let (nx, ny) = params.grid_counts();
    if nx == 0 || ny == 0 {
        return Err(Error::Config(format!(
            "bounds {}x{} m cannot hold one {} m block with {} m streets",
            params.width, params.height, params.block_size, params.street_width
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(seed, "city"));
    let pitch = params.block_size + params.street_width;
    let margin_x = (params.width - (nx as f64 * pitch + params.street_width)) / 2.0;
    let margin_y = (params.height - (ny as f64 * pitch + params.street_width)) / 2.0;
    let street_x = |i: usize| margin_x + params.street_width / 2.0 + i as f64 * pitch;
    let street_y = |j: usize| margin_y + params.street_width / 2.0 + j as f64 * pitch;

    let mut buildings = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let x0 = street_x(i) + params.street_width / 2.0;
            let y0 = street_y(j) + params.street_width / 2.0;
            let w = params.block_size * rng.random_range(params.fill_min..=params.fill_max);
            let h = params.block_size * rng.random_range(params.fill_min..=params.fill_max);
            // Keep a small setback so no vertex touches a road corridor.
            let (mx, my) = (0.05 * (params.block_size - w), 0.05 * (params.block_size - h));
            let ox = x0 + mx + rng.random_range(0.0..=1.0) * (params.block_size - w - 2.0 * mx);
            let oy = y0 + my + rng.random_range(0.0..=1.0) * (params.block_size - h - 2.0 * my);
            let height = if params.building_height_max > params.building_height_min {
                rng.random_range(params.building_height_min..params.building_height_max)
            } else {
                params.building_height_min
            };
            let material = if rng.random_bool(params.glass_fraction) {
                Material::Glass
            } else {
                Material::Concrete
            };
            buildings.push(Building {
                footprint: vec![
                    Point2::new(ox, oy),
                    Point2::new(ox + w, oy),
                    Point2::new(ox + w, oy + h),
                    Point2::new(ox, oy + h),
                ],
                height,
                material,
            });
        }
    }

    let mut roads = RoadGraph::default();
    for j in 0..=ny {
        for i in 0..=nx {
            roads.nodes.push(Point2::new(street_x(i), street_y(j)));
        }
    }
    let node = |i: usize, j: usize| j * (nx + 1) + i;
    for j in 0..=ny {
        for i in 0..=nx {
            if i < nx {
                roads.edges.push(RoadEdge {
                    a: node(i, j),
                    b: node(i + 1, j),
                    width: params.street_width,
                });
            }
            if j < ny {
                roads.edges.push(RoadEdge {
                    a: node(i, j),
                    b: node(i, j + 1),
                    width: params.street_width,
                });
            }
        }
    }

    let anchor = Point2::new(
        params.bs_anchor[0] * params.width,
        params.bs_anchor[1] * params.height,
    );
    let bs_node = roads
        .nodes
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - anchor).norm().total_cmp(&(b.1 - anchor).norm()))
        .map(|(i, _)| i)
        .expect("grid has nodes");
    let p = roads.nodes[bs_node];
    let bs = BaseStation {
        position: Point3::new(p.x, p.y, params.bs_height),
        array: ArrayConfig {
            rows: params.bs_rows,
            cols: params.bs_cols,
            spacing: 0.5,
            orientation: params.bs_boresight,
        },
    };

    Ok(Scene {
        bounds: Rect {
            min: Point2::new(0.0, 0.0),
            max: Point2::new(params.width, params.height),
        },
        buildings,
        roads,
        bs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VehicleClass {
    Sedan,
    Hatchback,
    Truck,
    Bus,
}

impl VehicleClass {
    pub const ALL: [VehicleClass; 4] = [
        VehicleClass::Sedan,
        VehicleClass::Hatchback,
        VehicleClass::Truck,
        VehicleClass::Bus,
    ];

    pub fn name(self) -> &'static str {
        match self {
            VehicleClass::Sedan => "sedan",
            VehicleClass::Hatchback => "hatchback",
            VehicleClass::Truck => "truck",
            VehicleClass::Bus => "bus",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        VehicleClass::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Data(format!("unknown vehicle class '{s}'")))
    }

    /// Roof height above ground, m.
    pub fn rooftop_height(self) -> f64 {
        match self {
            VehicleClass::Sedan => 1.67,
            VehicleClass::Hatchback => 1.80,
            VehicleClass::Truck => 2.76,
            VehicleClass::Bus => 4.41,
        }
    }

    /// Body length × width × height, m.
    pub fn body_extent(self) -> [f64; 3] {
        match self {
            VehicleClass::Sedan => [4.7, 1.8, 1.67],
            VehicleClass::Hatchback => [4.1, 1.8, 1.80],
            VehicleClass::Truck => [7.5, 2.4, 2.76],
            VehicleClass::Bus => [12.0, 2.55, 4.41],
        }
    }

    /// Speed cap, m/s.
    pub fn max_speed(self) -> f64 {
        match self {
            VehicleClass::Sedan | VehicleClass::Hatchback => 14.0,
            VehicleClass::Truck => 11.0,
            VehicleClass::Bus => 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleState {
    pub vehicle_id: u64,
    pub class: VehicleClass,
    pub position: Point2<f64>,
    /// Direction of travel, rad.
    pub heading: f64,
    /// m/s.
    pub speed: f64,
    pub time_index: u64,
}

impl VehicleState {
    pub fn velocity(&self) -> nalgebra::Vector3<f64> {
        nalgebra::Vector3::new(
            self.speed * self.heading.cos(),
            self.speed * self.heading.sin(),
            0.0,
        )
    }
}

/// Position of the vehicle-mounted antenna, 0.2 m above the roof.
pub fn ve_antenna_position(v: &VehicleState) -> Point3<f64> {
    Point3::new(
        v.position.x,
        v.position.y,
        v.class.rooftop_height() + ANTENNA_ABOVE_ROOF,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub time_index: u64,
    pub vehicles: Vec<VehicleState>,
}

/// Knobs of the random-waypoint traffic model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrafficParams {
    /// Relative frequency of sedan, hatchback, truck and bus.
    pub class_mix: [f64; 4],
    /// Each vehicle cruises at a constant fraction of its class speed cap, drawn from this range.
    pub speed_fraction: [f64; 2],
}

impl Default for TrafficParams {
    fn default() -> Self {
        Self {
            class_mix: [0.45, 0.35, 0.12, 0.08],
            speed_fraction: [0.5, 1.0],
        }
    }
}

impl TrafficParams {
    pub fn validate(&self) -> Result<()> {
        if self.class_mix.iter().any(|w| *w < 0.0) || self.class_mix.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config("class_mix weights must be non-negative with a positive sum".into()));
        }
        let [lo, hi] = self.speed_fraction;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(Error::Config("speed_fraction must satisfy 0 <= lo <= hi <= 1".into()));
        }
        Ok(())
    }
}

struct Walker {
    id: u64,
    class: VehicleClass,
    speed: f64,
    edge: usize,
    /// Node the vehicle is driving away from.
    from: usize,
    /// Distance travelled along the current edge, m.
    offset: f64,
}

/// Random-waypoint traffic with default [`TrafficParams`].
pub fn simulate_traffic(
    scene: &Scene,
    seed: u64,
    n_steps: usize,
    dt: f64,
    n_vehicles: usize,
) -> Result<Vec<Snapshot>> {
    simulate_traffic_with(scene, &TrafficParams::default(), seed, n_steps, dt, n_vehicles)
}

/// Random-waypoint walks on the road graph: vehicles drive along edges at constant
/// speed and pick a seeded random outgoing edge at every intersection, avoiding
/// U-turns unless the node is a dead end.
pub fn simulate_traffic_with(
    scene: &Scene,
    params: &TrafficParams,
    seed: u64,
    n_steps: usize,
    dt: f64,
    n_vehicles: usize,
) -> Result<Vec<Snapshot>> {
    params.validate()?;
    let roads = &scene.roads;
    if roads.edges.is_empty() || roads.nodes.is_empty() {
        return Err(Error::Config("road graph is empty".into()));
    }
    if n_steps == 0 {
        return Err(Error::Config("n_steps must be at least 1".into()));
    }
    if !(dt > 0.0) {
        return Err(Error::Config(format!("dt must be positive, got {dt}")));
    }
    let adj = roads.adjacency();
    let edge_len = |e: usize| (roads.nodes[roads.edges[e].b] - roads.nodes[roads.edges[e].a]).norm();
    let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(seed, "traffic"));
    let mix_total: f64 = params.class_mix.iter().sum();

    let mut walkers: Vec<Walker> = (0..n_vehicles)
        .map(|id| {
            let mut u = rng.random_range(0.0..mix_total);
            let mut class = VehicleClass::Bus;
            for (c, w) in VehicleClass::ALL.iter().zip(params.class_mix) {
                if u < w {
                    class = *c;
                    break;
                }
                u -= w;
            }
            let [lo, hi] = params.speed_fraction;
            let frac = if hi > lo { rng.random_range(lo..=hi) } else { lo };
            let edge = rng.random_range(0..roads.edges.len());
            let from = if rng.random_bool(0.5) {
                roads.edges[edge].a
            } else {
                roads.edges[edge].b
            };
            let offset = rng.random_range(0.0..1.0) * edge_len(edge);
            Walker {
                id: id as u64,
                class,
                speed: frac * class.max_speed(),
                edge,
                from,
                offset,
            }
        })
        .collect();

    let state = |w: &Walker, t: u64| {
        let e = roads.edges[w.edge];
        let to = if e.a == w.from { e.b } else { e.a };
        let a = roads.nodes[w.from];
        let b = roads.nodes[to];
        let dir = (b - a) / (b - a).norm();
        VehicleState {
            vehicle_id: w.id,
            class: w.class,
            position: a + dir * w.offset,
            heading: dir.y.atan2(dir.x),
            speed: w.speed,
            time_index: t,
        }
    };

    let mut snapshots = Vec::with_capacity(n_steps);
    for t in 0..n_steps as u64 {
        if t > 0 {
            for w in &mut walkers {
                let mut remaining = w.speed * dt;
                loop {
                    let len = edge_len(w.edge);
                    if w.offset + remaining <= len {
                        w.offset += remaining;
                        break;
                    }
                    remaining -= len - w.offset;
                    let e = roads.edges[w.edge];
                    let node = if e.a == w.from { e.b } else { e.a };
                    let options: Vec<usize> =
                        adj[node].iter().copied().filter(|&x| x != w.edge).collect();
                    w.edge = if options.is_empty() {
                        w.edge
                    } else {
                        options[rng.random_range(0..options.len())]
                    };
                    w.from = node;
                    w.offset = 0.0;
                }
            }
        }
        snapshots.push(Snapshot {
            time_index: t,
            vehicles: walkers.iter().map(|w| state(w, t)).collect(),
        });
    }
    Ok(snapshots)
}

// ---------------------------------------------------------------------------
// Text persistence

fn fmt_f(v: f64) -> String {
    format!("{v:.12}")
}

/// Writes the scene as one record per line.
///
/// ```text
/// bounds <xmin> <ymin> <xmax> <ymax>
/// basestation <x> <y> <z> <rows> <cols> <spacing> <orientation>
/// building <index> <material> <height> <n_vertices> <x0> <y0> ...
/// node <index> <x> <y>
/// edge <index> <a> <b> <width>
/// ```
pub fn write_scene<W: Write>(scene: &Scene, mut out: W) -> std::io::Result<()> {
    writeln!(out, "# chartlab scene v1")?;
    let b = &scene.bounds;
    writeln!(
        out,
        "bounds {} {} {} {}",
        fmt_f(b.min.x),
        fmt_f(b.min.y),
        fmt_f(b.max.x),
        fmt_f(b.max.y)
    )?;
    let bs = &scene.bs;
    writeln!(
        out,
        "basestation {} {} {} {} {} {} {}",
        fmt_f(bs.position.x),
        fmt_f(bs.position.y),
        fmt_f(bs.position.z),
        bs.array.rows,
        bs.array.cols,
        fmt_f(bs.array.spacing),
        fmt_f(bs.array.orientation)
    )?;
    for (i, bld) in scene.buildings.iter().enumerate() {
        let mut line = format!(
            "building {i} {} {} {}",
            bld.material.name(),
            fmt_f(bld.height),
            bld.footprint.len()
        );
        for v in &bld.footprint {
            let _ = write!(line, " {} {}", fmt_f(v.x), fmt_f(v.y));
        }
        writeln!(out, "{line}")?;
    }
    for (i, n) in scene.roads.nodes.iter().enumerate() {
        writeln!(out, "node {i} {} {}", fmt_f(n.x), fmt_f(n.y))?;
    }
    for (i, e) in scene.roads.edges.iter().enumerate() {
        writeln!(out, "edge {i} {} {} {}", e.a, e.b, fmt_f(e.width))?;
    }
    Ok(())
}

fn field<T: std::str::FromStr>(tokens: &[&str], i: usize, line: usize) -> Result<T> {
    tokens
        .get(i)
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::Data(format!("line {line}: bad or missing field {i}")))
}

pub fn read_scene<R: BufRead>(input: R) -> Result<Scene> {
    let mut bounds = None;
    let mut bs = None;
    let mut buildings = Vec::new();
    let mut roads = RoadGraph::default();
    for (ln, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::Data(format!("line {}: {e}", ln + 1)))?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        let ln = ln + 1;
        match tokens.first().copied() {
            None => continue,
            Some(t) if t.starts_with('#') => continue,
            Some("bounds") => {
                bounds = Some(Rect {
                    min: Point2::new(field(&tokens, 1, ln)?, field(&tokens, 2, ln)?),
                    max: Point2::new(field(&tokens, 3, ln)?, field(&tokens, 4, ln)?),
                })
            }
            Some("basestation") => {
                bs = Some(BaseStation {
                    position: Point3::new(
                        field(&tokens, 1, ln)?,
                        field(&tokens, 2, ln)?,
                        field(&tokens, 3, ln)?,
                    ),
                    array: ArrayConfig {
                        rows: field(&tokens, 4, ln)?,
                        cols: field(&tokens, 5, ln)?,
                        spacing: field(&tokens, 6, ln)?,
                        orientation: field(&tokens, 7, ln)?,
                    },
                })
            }
            Some("building") => {
                let material = Material::parse(tokens.get(2).copied().unwrap_or(""))?;
                let height = field(&tokens, 3, ln)?;
                let n: usize = field(&tokens, 4, ln)?;
                let footprint = (0..n)
                    .map(|k| Ok(Point2::new(field(&tokens, 5 + 2 * k, ln)?, field(&tokens, 6 + 2 * k, ln)?)))
                    .collect::<Result<Vec<_>>>()?;
                buildings.push(Building {
                    footprint,
                    height,
                    material,
                });
            }
            Some("node") => roads
                .nodes
                .push(Point2::new(field(&tokens, 2, ln)?, field(&tokens, 3, ln)?)),
            Some("edge") => roads.edges.push(RoadEdge {
                a: field(&tokens, 2, ln)?,
                b: field(&tokens, 3, ln)?,
                width: field(&tokens, 4, ln)?,
            }),
            Some(other) => return Err(Error::Data(format!("line {ln}: unknown record '{other}'"))),
        }
    }
    let bounds = bounds.ok_or_else(|| Error::Data("scene has no bounds record".into()))?;
    let bs = bs.ok_or_else(|| Error::Data("scene has no basestation record".into()))?;
    if roads.edges.iter().any(|e| e.a >= roads.nodes.len() || e.b >= roads.nodes.len()) {
        return Err(Error::Data("edge references a missing node".into()));
    }
    Ok(Scene {
        bounds,
        buildings,
        roads,
        bs,
    })
}

/// One `vehicle <t> <id> <class> <x> <y> <heading> <speed>` line per vehicle and step.
pub fn write_snapshots<W: Write>(snapshots: &[Snapshot], mut out: W) -> std::io::Result<()> {
    writeln!(out, "# chartlab traffic v1")?;
    for s in snapshots {
        for v in &s.vehicles {
            writeln!(
                out,
                "vehicle {} {} {} {} {} {} {}",
                s.time_index,
                v.vehicle_id,
                v.class.name(),
                fmt_f(v.position.x),
                fmt_f(v.position.y),
                fmt_f(v.heading),
                fmt_f(v.speed)
            )?;
        }
    }
    Ok(())
}

pub fn read_snapshots<R: BufRead>(input: R) -> Result<Vec<Snapshot>> {
    let mut out: Vec<Snapshot> = Vec::new();
    for (ln, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::Data(format!("line {}: {e}", ln + 1)))?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        let ln = ln + 1;
        match tokens.first().copied() {
            None => continue,
            Some(t) if t.starts_with('#') => continue,
            Some("vehicle") => {
                let t: u64 = field(&tokens, 1, ln)?;
                let v = VehicleState {
                    time_index: t,
                    vehicle_id: field(&tokens, 2, ln)?,
                    class: VehicleClass::parse(tokens.get(3).copied().unwrap_or(""))?,
                    position: Point2::new(field(&tokens, 4, ln)?, field(&tokens, 5, ln)?),
                    heading: field(&tokens, 6, ln)?,
                    speed: field(&tokens, 7, ln)?,
                };
                match out.last_mut() {
                    Some(s) if s.time_index == t => s.vehicles.push(v),
                    _ => out.push(Snapshot {
                        time_index: t,
                        vehicles: vec![v],
                    }),
                }
            }
            Some(other) => return Err(Error::Data(format!("line {ln}: unknown record '{other}'"))),
        }
    }
    for s in &out {
        let mut ids = HashSet::new();
        if !s.vehicles.iter().all(|v| ids.insert(v.vehicle_id)) {
            return Err(Error::Data(format!("duplicate vehicle id at t={}", s.time_index)));
        }
    }
    Ok(out)
}
