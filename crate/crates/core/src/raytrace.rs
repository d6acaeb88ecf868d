//! Image-method ray tracing over the procedural city.
//!
//! Paths are specular reflection chains off vertical building faces (and,
//! optionally, the ground and vehicle sides). Each candidate sequence of
//! reflectors is unfolded with mirror images, folded back from the receiver, and
//! kept only if every reflection point lies on its face and every leg is clear.
//! In dynamic mode the vehicle bodies act as blockers.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{Point2, Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Direction, SPEED_OF_LIGHT};
use crate::scene::{Material, Rect, Scene, VehicleState};

/// Legs that overlap a solid by less than this are treated as touching, m.
const CLEARANCE: f64 = 1e-6;
/// Points closer than this to a reflecting plane count as on it, m.
const PLANE_EPS: f64 = 1e-9;

/// A planar reflecting surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Surface {
    /// Vertical face over the segment `a → b`, from the ground up to `top`.
    /// The front side is to the right of `a → b` (outward for a counterclockwise
    /// footprint).
    Wall { a: Point2<f64>, b: Point2<f64>, top: f64 },
    /// The `z = 0` plane restricted to a rectangle.
    Ground { bounds: Rect },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reflector {
    pub surface: Surface,
    pub material: Material,
}

impl Reflector {
    pub fn wall(a: Point2<f64>, b: Point2<f64>, top: f64, material: Material) -> Self {
        Self {
            surface: Surface::Wall { a, b, top },
            material,
        }
    }

    pub fn ground(bounds: Rect) -> Self {
        Self {
            surface: Surface::Ground { bounds },
            material: Material::Concrete,
        }
    }

    fn is_degenerate(&self) -> bool {
        match self.surface {
            Surface::Wall { a, b, top } => (b - a).norm() <= 0.0 || !(top > 0.0),
            Surface::Ground { bounds } => !(bounds.width() > 0.0 && bounds.height() > 0.0),
        }
    }

    /// Unit normal pointing to the front side.
    pub fn normal(&self) -> Vector3<f64> {
        match self.surface {
            Surface::Wall { a, b, .. } => {
                let e = (b - a).normalize();
                Vector3::new(e.y, -e.x, 0.0)
            }
            Surface::Ground { .. } => Vector3::z(),
        }
    }

    fn anchor(&self) -> Point3<f64> {
        match self.surface {
            Surface::Wall { a, .. } => Point3::new(a.x, a.y, 0.0),
            Surface::Ground { bounds } => Point3::new(bounds.min.x, bounds.min.y, 0.0),
        }
    }

    /// Signed distance of `p` from the infinite plane, positive on the front side.
    pub fn signed_distance(&self, p: &Point3<f64>) -> f64 {
        self.normal().dot(&(p - self.anchor()))
    }

    /// Whether a point on the plane lies within the bounded face.
    pub fn face_contains(&self, p: &Point3<f64>, tol: f64) -> bool {
        if self.signed_distance(p).abs() > tol.max(PLANE_EPS) {
            return false;
        }
        match self.surface {
            Surface::Wall { a, b, top } => {
                let e = b - a;
                let len = e.norm();
                let s = e.dot(&(Point2::new(p.x, p.y) - a)) / len;
                s >= -tol && s <= len + tol && p.z >= -tol && p.z <= top + tol
            }
            Surface::Ground { bounds } => {
                p.x >= bounds.min.x - tol
                    && p.x <= bounds.max.x + tol
                    && p.y >= bounds.min.y - tol
                    && p.y <= bounds.max.y + tol
            }
        }
    }

    fn mirror_unchecked(&self, p: &Point3<f64>) -> Point3<f64> {
        p - self.normal() * (2.0 * self.signed_distance(p))
    }

    /// Whether some part of `other` lies strictly in front of this face.
    fn sees(&self, other: &Reflector) -> bool {
        match other.surface {
            Surface::Wall { a, b, .. } => {
                self.signed_distance(&Point3::new(a.x, a.y, 0.0)) > PLANE_EPS
                    || self.signed_distance(&Point3::new(b.x, b.y, 0.0)) > PLANE_EPS
            }
            Surface::Ground { .. } => true,
        }
    }
}

/// Reflects `p` across the infinite plane of `reflector`.
pub fn mirror_image(p: &Point3<f64>, reflector: &Reflector) -> Result<Point3<f64>> {
    if reflector.is_degenerate() {
        return Err(Error::Geometry("degenerate reflector".into()));
    }
    Ok(reflector.mirror_unchecked(p))
}

/// A vehicle body as an oriented box standing on the ground.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Blocker {
    pub vehicle_id: u64,
    /// Ground-level center of the footprint.
    pub center: Point2<f64>,
    pub heading: f64,
    /// Length, width, height, m.
    pub extents: [f64; 3],
}

impl Blocker {
    pub fn from_vehicle(v: &VehicleState) -> Self {
        Self {
            vehicle_id: v.vehicle_id,
            center: v.position,
            heading: v.heading,
            extents: v.class.body_extent(),
        }
    }

    fn to_local(&self, p: &Point3<f64>) -> Point3<f64> {
        let (s, c) = self.heading.sin_cos();
        let dx = p.x - self.center.x;
        let dy = p.y - self.center.y;
        Point3::new(c * dx + s * dy, -s * dx + c * dy, p.z)
    }

    pub fn contains(&self, p: &Point3<f64>) -> bool {
        let q = self.to_local(p);
        q.x.abs() <= self.extents[0] / 2.0
            && q.y.abs() <= self.extents[1] / 2.0
            && q.z >= 0.0
            && q.z <= self.extents[2]
    }

    /// Footprint corners, counterclockwise.
    fn corners(&self) -> [Point2<f64>; 4] {
        let (s, c) = self.heading.sin_cos();
        let (hl, hw) = (self.extents[0] / 2.0, self.extents[1] / 2.0);
        [(-hl, -hw), (hl, -hw), (hl, hw), (-hl, hw)]
            .map(|(x, y)| Point2::new(self.center.x + c * x - s * y, self.center.y + s * x + c * y))
    }

    /// The four side faces as reflectors.
    pub fn faces(&self) -> [Reflector; 4] {
        let k = self.corners();
        [0, 1, 2, 3].map(|i| Reflector::wall(k[i], k[(i + 1) % 4], self.extents[2], Material::VehicleBody))
    }

    fn clearance_overlap(&self, a: &Point3<f64>, b: &Point3<f64>) -> f64 {
        let la = self.to_local(a);
        let lb = self.to_local(b);
        let d = lb - la;
        let (hl, hw, h) = (self.extents[0] / 2.0, self.extents[1] / 2.0, self.extents[2]);
        let mut clip = Clip::new();
        clip.half_space(la.x + hl, d.x);
        clip.half_space(hl - la.x, -d.x);
        clip.half_space(la.y + hw, d.y);
        clip.half_space(hw - la.y, -d.y);
        clip.half_space(la.z, d.z);
        clip.half_space(h - la.z, -d.z);
        clip.length() * d.norm()
    }
}

/// Parametric clipping of a segment `a + t d`, `t ∈ [0, 1]`, by half-spaces
/// `g0 + t g1 ≥ 0`.
struct Clip {
    t0: f64,
    t1: f64,
}

impl Clip {
    fn new() -> Self {
        Self { t0: 0.0, t1: 1.0 }
    }

    fn half_space(&mut self, g0: f64, g1: f64) {
        if g1 == 0.0 {
            if g0 < 0.0 {
                self.t1 = f64::NEG_INFINITY;
            }
        } else if g1 > 0.0 {
            self.t0 = self.t0.max(-g0 / g1);
        } else {
            self.t1 = self.t1.min(-g0 / g1);
        }
    }

    fn length(&self) -> f64 {
        (self.t1 - self.t0).max(0.0)
    }
}

/// Length of segment `a–b` inside the extruded building, m.
fn building_overlap(footprint: &[Point2<f64>], height: f64, a: &Point3<f64>, b: &Point3<f64>) -> f64 {
    let d = b - a;
    let mut clip = Clip::new();
    clip.half_space(a.z, d.z);
    clip.half_space(height - a.z, -d.z);
    let n = footprint.len();
    for i in 0..n {
        let p = footprint[i];
        let e = footprint[(i + 1) % n] - p;
        clip.half_space(e.x * (a.y - p.y) - e.y * (a.x - p.x), e.x * d.y - e.y * d.x);
        if clip.length() == 0.0 {
            return 0.0;
        }
    }
    clip.length() * d.norm()
}

/// Whether the open segment `a–b` passes through a building or a vehicle body.
///
/// Bodies that contain either endpoint (the endpoint's own vehicle) are ignored,
/// and contact shorter than a micrometre (a leg leaving a face) does not count.
pub fn los_blocked(scene: &Scene, a: &Point3<f64>, b: &Point3<f64>, blockers: &[Blocker]) -> bool {
    let (lo, hi) = (
        Point2::new(a.x.min(b.x), a.y.min(b.y)),
        Point2::new(a.x.max(b.x), a.y.max(b.y)),
    );
    let low_z = a.z.min(b.z);
    for building in &scene.buildings {
        if low_z > building.height {
            continue;
        }
        let outside = building.footprint.iter().all(|p| p.x < lo.x)
            || building.footprint.iter().all(|p| p.x > hi.x)
            || building.footprint.iter().all(|p| p.y < lo.y)
            || building.footprint.iter().all(|p| p.y > hi.y);
        if outside {
            continue;
        }
        if building_overlap(&building.footprint, building.height, a, b) > CLEARANCE {
            return true;
        }
    }
    blockers.iter().any(|blk| {
        if low_z > blk.extents[2] || blk.contains(a) || blk.contains(b) {
            return false;
        }
        let reach = blk.extents[0].hypot(blk.extents[1]) / 2.0;
        if blk.center.x + reach < lo.x
            || blk.center.x - reach > hi.x
            || blk.center.y + reach < lo.y
            || blk.center.y - reach > hi.y
        {
            return false;
        }
        blk.clearance_overlap(a, b) > CLEARANCE
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceMode {
    /// Buildings only.
    Static,
    /// Buildings plus vehicle bodies as blockers.
    Dynamic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaterialLosses {
    pub concrete: f64,
    pub glass: f64,
    pub vehicle_body: f64,
}

impl Default for MaterialLosses {
    fn default() -> Self {
        Self {
            concrete: 6.0,
            glass: 2.0,
            vehicle_body: 3.0,
        }
    }
}

impl MaterialLosses {
    pub fn loss_db(&self, m: Material) -> f64 {
        match m {
            Material::Concrete => self.concrete,
            Material::Glass => self.glass,
            Material::VehicleBody => self.vehicle_body,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceConfig {
    pub max_order: usize,
    /// Carrier frequency, Hz.
    pub f0: f64,
    /// Per-bounce reflection loss, dB.
    pub losses: MaterialLosses,
    pub mode: TraceMode,
    pub ground_reflection: bool,
    /// First-order reflections off vehicle sides (dynamic mode only).
    pub vehicle_reflections: bool,
}

impl Default for TraceConfig {
    fn default() -> Self {
        Self {
            max_order: 2,
            f0: 28e9,
            losses: MaterialLosses::default(),
            mode: TraceMode::Dynamic,
            ground_reflection: true,
            vehicle_reflections: false,
        }
    }
}

impl TraceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_order > 3 {
            return Err(Error::Config(format!("max_order {} exceeds 3", self.max_order)));
        }
        if !(self.f0 > 0.0) {
            return Err(Error::Config("carrier frequency must be positive".into()));
        }
        let l = &self.losses;
        if [l.concrete, l.glass, l.vehicle_body].iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::Config("material losses must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// One reflection along a path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interaction {
    pub point: Point3<f64>,
    pub reflector: Reflector,
}

/// Parameters of one propagation path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathTuple {
    /// Departure direction at the transmitter.
    pub dod: Direction,
    /// Arrival direction at the receiver (pointing back toward the last interaction).
    pub doa: Direction,
    /// s.
    pub delay: f64,
    /// Hz.
    pub doppler: f64,
    /// Linear power gain `|β|²`.
    pub power: f64,
    pub bounce_count: usize,
    /// m.
    pub path_length: f64,
    pub interactions: Vec<Interaction>,
}

/// Geometric Doppler shift for a transmitter moving with `tx_velocity`.
pub fn doppler_shift(departure: &Vector3<f64>, tx_velocity: &Vector3<f64>, f0: f64) -> f64 {
    f0 / SPEED_OF_LIGHT * tx_velocity.dot(&departure.normalize())
}

/// Free-space gain times the per-bounce material losses.
pub fn path_gain(path_length: f64, materials: &[Material], cfg: &TraceConfig) -> Result<f64> {
    if !(path_length > 0.0) {
        return Err(Error::Domain(format!("path length {path_length} must be positive")));
    }
    let fspl = (SPEED_OF_LIGHT / (4.0 * PI * path_length * cfg.f0)).powi(2);
    let loss_db: f64 = materials.iter().map(|&m| cfg.losses.loss_db(m)).sum();
    Ok(fspl * 10f64.powf(-loss_db / 10.0))
}

/// Precomputed reflector set of a scene.
///
/// Building the wall list and the mutual visibility table once lets many
/// transmitter positions be traced against the same scene cheaply.
pub struct Tracer<'a> {
    scene: &'a Scene,
    cfg: TraceConfig,
    walls: Vec<Reflector>,
    /// For each wall, the walls partly in front of it that also face it back.
    facing: Vec<Vec<usize>>,
}

impl<'a> Tracer<'a> {
    pub fn new(scene: &'a Scene, cfg: &TraceConfig) -> Result<Self> {
        cfg.validate()?;
        let mut walls = Vec::new();
        for b in &scene.buildings {
            let n = b.footprint.len();
            for i in 0..n {
                // Counterclockwise footprint: walking a → b, the outside is to the right.
                walls.push(Reflector::wall(b.footprint[i], b.footprint[(i + 1) % n], b.height, b.material));
            }
        }
        let facing = (0..walls.len())
            .map(|i| {
                (0..walls.len())
                    .filter(|&j| j != i && walls[i].sees(&walls[j]) && walls[j].sees(&walls[i]))
                    .collect()
            })
            .collect();
        Ok(Self {
            scene,
            cfg: cfg.clone(),
            walls,
            facing,
        })
    }

    pub fn config(&self) -> &TraceConfig {
        &self.cfg
    }

    /// All paths from `tx` to `rx`, sorted by delay.
    pub fn trace(
        &self,
        tx: &Point3<f64>,
        tx_velocity: &Vector3<f64>,
        rx: &Point3<f64>,
        blockers: &[Blocker],
    ) -> Result<Vec<PathTuple>> {
        for (name, p) in [("transmitter", tx), ("receiver", rx)] {
            if !self.scene.bounds.contains(&Point2::new(p.x, p.y)) || p.z < 0.0 {
                return Err(Error::Geometry(format!("{name} at {p} is outside the scene")));
            }
        }
        if (tx - rx).norm() == 0.0 {
            return Err(Error::Geometry("transmitter and receiver coincide".into()));
        }
        let blockers = match self.cfg.mode {
            TraceMode::Static => &[][..],
            TraceMode::Dynamic => blockers,
        };
        let mut paths = Vec::new();
        let mut emit = |seq: &[&Reflector]| {
            if let Some(p) = self.resolve(tx, tx_velocity, rx, seq, blockers) {
                paths.push(p);
            }
        };
        emit(&[]);
        if self.cfg.max_order >= 1 {
            if self.cfg.ground_reflection {
                emit(&[&Reflector::ground(self.scene.bounds)]);
            }
            if self.cfg.mode == TraceMode::Dynamic && self.cfg.vehicle_reflections {
                for blk in blockers {
                    if blk.contains(tx) || blk.contains(rx) {
                        continue;
                    }
                    for face in blk.faces() {
                        emit(&[&face]);
                    }
                }
            }
        }
        let front = |r: &Reflector, p: &Point3<f64>| r.signed_distance(p) > PLANE_EPS;
        let first: Vec<usize> = (0..self.walls.len()).filter(|&i| front(&self.walls[i], tx)).collect();
        let mut seq = Vec::with_capacity(3);
        for &i in &first {
            seq.clear();
            seq.push(i);
            self.extend(&mut seq, rx, &mut emit);
        }
        paths.sort_by(|a, b| a.delay.total_cmp(&b.delay).then(a.bounce_count.cmp(&b.bounce_count)));
        Ok(paths)
    }

    fn extend(&self, seq: &mut Vec<usize>, rx: &Point3<f64>, emit: &mut impl FnMut(&[&Reflector])) {
        let last = *seq.last().expect("non-empty sequence");
        if self.walls[last].signed_distance(rx) > PLANE_EPS {
            let refs: Vec<&Reflector> = seq.iter().map(|&i| &self.walls[i]).collect();
            emit(&refs);
        }
        if seq.len() == self.cfg.max_order {
            return;
        }
        for &j in &self.facing[last] {
            seq.push(j);
            self.extend(seq, rx, emit);
            seq.pop();
        }
    }

    /// Unfolds one reflector sequence into a path, or `None` if it is not realizable.
    fn resolve(
        &self,
        tx: &Point3<f64>,
        tx_velocity: &Vector3<f64>,
        rx: &Point3<f64>,
        seq: &[&Reflector],
        blockers: &[Blocker],
    ) -> Option<PathTuple> {
        let mut images = Vec::with_capacity(seq.len() + 1);
        images.push(*tx);
        for r in seq {
            let prev = *images.last().unwrap();
            images.push(r.mirror_unchecked(&prev));
        }
        let mut points = vec![Point3::origin(); seq.len()];
        let mut target = *rx;
        for k in (0..seq.len()).rev() {
            let r = seq[k];
            let src = images[k + 1];
            let ds = r.signed_distance(&src);
            let dt = r.signed_distance(&target);
            if !(dt > PLANE_EPS && ds < -PLANE_EPS) {
                return None;
            }
            let t = ds / (ds - dt);
            let p = src + (target - src) * t;
            if !r.face_contains(&p, 1e-9) {
                return None;
            }
            points[k] = p;
            target = p;
        }
        let mut chain = Vec::with_capacity(seq.len() + 2);
        chain.push(*tx);
        chain.extend_from_slice(&points);
        chain.push(*rx);
        let mut length = 0.0;
        for w in chain.windows(2) {
            let leg = (w[1] - w[0]).norm();
            if leg <= 0.0 || los_blocked(self.scene, &w[0], &w[1], blockers) {
                return None;
            }
            length += leg;
        }
        let departure = chain[1] - chain[0];
        let arrival = chain[chain.len() - 2] - chain[chain.len() - 1];
        let materials: Vec<Material> = seq.iter().map(|r| r.material).collect();
        Some(PathTuple {
            dod: Direction::from_vector(&departure),
            doa: Direction::from_vector(&arrival),
            delay: length / SPEED_OF_LIGHT,
            doppler: doppler_shift(&departure, tx_velocity, self.cfg.f0),
            power: path_gain(length, &materials, &self.cfg).ok()?,
            bounce_count: seq.len(),
            path_length: length,
            interactions: seq
                .iter()
                .zip(&points)
                .map(|(r, p)| Interaction {
                    point: *p,
                    reflector: **r,
                })
                .collect(),
        })
    }
}

/// Traces all paths from a (possibly moving) transmitter to a static receiver.
pub fn trace_paths(
    scene: &Scene,
    tx: &Point3<f64>,
    tx_velocity: &Vector3<f64>,
    rx: &Point3<f64>,
    blockers: &[Blocker],
    cfg: &TraceConfig,
) -> Result<Vec<PathTuple>> {
    Tracer::new(scene, cfg)?.trace(tx, tx_velocity, rx, blockers)
}

pub const PATH_DUMP_HEADER: &str = "t,vehicle_id,dod_az,dod_el,doa_az,doa_el,delay,doppler,power,bounces";

/// Writes one CSV row per path.
pub fn write_paths<W: Write>(mut out: W, t: u64, vehicle_id: u64, paths: &[PathTuple]) -> std::io::Result<()> {
    for p in paths {
        writeln!(
            out,
            "{t},{vehicle_id},{:.12},{:.12},{:.12},{:.12},{:.15e},{:.9},{:.9e},{}",
            p.dod.azimuth, p.dod.elevation, p.doa.azimuth, p.doa.elevation, p.delay, p.doppler, p.power, p.bounce_count
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ArrayConfig;
    use crate::scene::{BaseStation, Building, RoadGraph};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn empty_scene(size: f64) -> Scene {
        Scene {
            bounds: Rect {
                min: Point2::new(-size, -size),
                max: Point2::new(size, size),
            },
            buildings: Vec::new(),
            roads: RoadGraph {
                nodes: Vec::new(),
                edges: Vec::new(),
            },
            bs: BaseStation {
                position: Point3::new(0.0, 0.0, 20.0),
                array: ArrayConfig::base_station(),
            },
        }
    }

    fn block(x0: f64, y0: f64, x1: f64, y1: f64, h: f64) -> Building {
        Building {
            footprint: vec![
                Point2::new(x0, y0),
                Point2::new(x1, y0),
                Point2::new(x1, y1),
                Point2::new(x0, y1),
            ],
            height: h,
            material: Material::Concrete,
        }
    }

    fn bare() -> TraceConfig {
        TraceConfig {
            ground_reflection: false,
            ..TraceConfig::default()
        }
    }

    #[test]
    fn mirror_examples() {
        let wall = Reflector::wall(Point2::new(0.0, 5.0), Point2::new(0.0, -5.0), 10.0, Material::Concrete);
        let p = Point3::new(1.0, 1.0, 2.0);
        let q = mirror_image(&p, &wall).unwrap();
        assert!((q - Point3::new(-1.0, 1.0, 2.0)).norm() < 1e-15);
        assert!((mirror_image(&q, &wall).unwrap() - p).norm() < 1e-12);
        let flat = Reflector::wall(Point2::new(1.0, 1.0), Point2::new(1.0, 1.0), 3.0, Material::Glass);
        assert!(matches!(mirror_image(&p, &flat), Err(Error::Geometry(_))));
    }

    #[test]
    fn mirror_matches_plane_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let a = Point2::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0));
            let b = Point2::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0));
            let wall = Reflector::wall(a, b, 10.0, Material::Concrete);
            let p = Point3::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0), rng.random_range(0.0..30.0));
            let q = mirror_image(&p, &wall).unwrap();
            // Oracle: the foot of the perpendicular is the midpoint of p and its image.
            let e = b - a;
            let t = e.dot(&(Point2::new(p.x, p.y) - a)) / e.norm_squared();
            let foot = a + e * t;
            let expect = Point3::new(2.0 * foot.x - p.x, 2.0 * foot.y - p.y, p.z);
            assert!((q - expect).norm() < 1e-9);
            assert!((wall.signed_distance(&p) + wall.signed_distance(&q)).abs() < 1e-9);
        }
    }

    #[test]
    fn open_square_is_clear_and_building_blocks() {
        let mut scene = empty_scene(100.0);
        let a = Point3::new(-50.0, 0.0, 2.0);
        let b = Point3::new(50.0, 0.0, 2.0);
        assert!(!los_blocked(&scene, &a, &b, &[]));
        scene.buildings.push(block(-5.0, -5.0, 5.0, 5.0, 10.0));
        assert!(los_blocked(&scene, &a, &b, &[]));
        let high = Point3::new(50.0, 0.0, 30.0);
        assert!(!los_blocked(&scene, &Point3::new(-50.0, 0.0, 30.0), &high, &[]));
    }

    #[test]
    fn blocked_agrees_with_dense_sampling() {
        let mut scene = empty_scene(60.0);
        scene.buildings.push(block(-20.0, -10.0, -5.0, 15.0, 12.0));
        scene.buildings.push(block(10.0, 5.0, 30.0, 25.0, 25.0));
        let blockers = [
            Blocker {
                vehicle_id: 1,
                center: Point2::new(0.0, -20.0),
                heading: 0.7,
                extents: [12.0, 2.55, 4.41],
            },
            Blocker {
                vehicle_id: 2,
                center: Point2::new(20.0, -25.0),
                heading: -1.2,
                extents: [4.7, 1.8, 1.67],
            },
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut checked = 0;
        while checked < 100 {
            let mut pick = || {
                Point3::new(
                    rng.random_range(-60.0..60.0),
                    rng.random_range(-60.0..60.0),
                    rng.random_range(0.0..30.0),
                )
            };
            let (a, b) = (pick(), pick());
            let inside = |p: &Point3<f64>| {
                scene.buildings.iter().any(|bd| bd.contains(p)) || blockers.iter().any(|k| k.contains(p))
            };
            if inside(&a) || inside(&b) {
                continue;
            }
            let sampled = (1..10_000).any(|i| inside(&(a + (b - a) * (i as f64 / 10_000.0))));
            assert_eq!(los_blocked(&scene, &a, &b, &blockers), sampled, "{a} -> {b}");
            checked += 1;
        }
    }

    #[test]
    fn own_vehicle_body_is_ignored() {
        let scene = empty_scene(50.0);
        let blk = Blocker {
            vehicle_id: 7,
            center: Point2::new(0.0, 0.0),
            heading: 0.0,
            extents: [4.7, 1.8, 1.67],
        };
        let inside = Point3::new(0.0, 0.0, 1.0);
        assert!(!los_blocked(&scene, &inside, &Point3::new(30.0, 0.0, 1.0), &[blk]));
        assert!(los_blocked(
            &scene,
            &Point3::new(-30.0, 0.0, 1.0),
            &Point3::new(30.0, 0.0, 1.0),
            &[blk]
        ));
    }

    #[test]
    fn free_space_single_path() {
        let scene = empty_scene(400.0);
        let tx = Point3::new(-150.0, 0.0, 5.0);
        let rx = Point3::new(150.0, 0.0, 5.0);
        let paths = trace_paths(&scene, &tx, &Vector3::zeros(), &rx, &[], &bare()).unwrap();
        assert_eq!(paths.len(), 1);
        assert_eq!(paths[0].bounce_count, 0);
        assert!((paths[0].delay - 300.0 / SPEED_OF_LIGHT).abs() < 1e-18);
        assert!((paths[0].delay - 1.0007e-6).abs() < 1e-10);
    }

    #[test]
    fn single_wall_image_length() {
        let mut scene = empty_scene(200.0);
        // A long thin building whose south face is the plane y = 0.
        scene.buildings.push(block(-150.0, 0.0, 150.0, 1.0, 50.0));
        let tx = Point3::new(-20.0, -10.0, 5.0);
        let rx = Point3::new(20.0, -10.0, 5.0);
        let paths = trace_paths(&scene, &tx, &Vector3::zeros(), &rx, &[], &bare()).unwrap();
        let first: Vec<_> = paths.iter().filter(|p| p.bounce_count == 1).collect();
        assert_eq!(first.len(), 1);
        assert!((first[0].path_length - (40.0f64.powi(2) + 20.0f64.powi(2)).sqrt()).abs() < 1e-9);
    }

    #[test]
    fn doppler_examples() {
        let toward = Vector3::new(1.0, 0.0, 0.0);
        assert_eq!(doppler_shift(&toward, &Vector3::zeros(), 28e9), 0.0);
        let nu = doppler_shift(&toward, &Vector3::new(30.0, 0.0, 0.0), 28e9);
        assert!((nu - 28e9 * 30.0 / SPEED_OF_LIGHT).abs() < 1e-6);
        assert!((nu - 2802.0).abs() < 1.0);
        assert!(doppler_shift(&toward, &Vector3::new(0.0, 30.0, 0.0), 28e9).abs() < 1e-9);
    }

    #[test]
    fn gain_examples() {
        let cfg = TraceConfig::default();
        // Oracle: FSPL(dB) = 20 log10(d) + 20 log10(f) − 147.55.
        let fspl_db = 20.0 * 28e9f64.log10() - 20.0 * (SPEED_OF_LIGHT / (4.0 * PI)).log10();
        let g = path_gain(1.0, &[], &cfg).unwrap();
        assert!((10.0 * g.log10() + fspl_db).abs() < 1e-9);
        assert!((g - 7.26e-7).abs() < 0.01e-7);
        assert!((path_gain(2.0, &[], &cfg).unwrap() - g / 4.0).abs() < 1e-22);
        let bounced = path_gain(1.0, &[Material::Concrete], &cfg).unwrap();
        assert!((bounced - g * 10f64.powf(-0.6)).abs() < 1e-20);
        assert!(matches!(path_gain(0.0, &[], &cfg), Err(Error::Domain(_))));
    }

    #[test]
    fn config_rejects_high_order() {
        let cfg = TraceConfig {
            max_order: 4,
            ..TraceConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
