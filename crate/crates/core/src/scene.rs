//! Scene domain types, procedural room generation and force sampling.
//!
//! Coordinates are z-up meters. Rooms are axis-aligned rectangles centred on the origin,
//! bodies are boxes with a fixed yaw about the vertical axis, and the camera is a pinhole
//! looking from a room corner towards the centre.

use std::f64::consts::TAU;
use std::fmt;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{seed, Error, Result};

/// Slack allowed when checking that generated bodies touch without overlapping.
pub const CONTACT_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);
    pub const Z: Vec3 = Vec3::new(0.0, 0.0, 1.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// Unit vector in the same direction, or `None` for the zero vector.
    pub fn normalized(self) -> Option<Vec3> {
        let n = self.norm();
        (n > 0.0 && n.is_finite()).then(|| self / n)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Div<f64> for Vec3 {
    type Output = Vec3;
    fn div(self, s: f64) -> Vec3 {
        Vec3::new(self.x / s, self.y / s, self.z / s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl SubAssign for Vec3 {
    fn sub_assign(&mut self, o: Vec3) {
        *self = *self - o;
    }
}

/// Object categories. The first ten are movable; the last two are fixtures.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Chair,
    Table,
    Desk,
    Pillow,
    Sofa,
    Bed,
    Box,
    GarbageBin,
    Shelf,
    Lamp,
    Cabinet,
    Toilet,
}

impl Category {
    pub const ALL: [Category; 12] = [
        Category::Chair,
        Category::Table,
        Category::Desk,
        Category::Pillow,
        Category::Sofa,
        Category::Bed,
        Category::Box,
        Category::GarbageBin,
        Category::Shelf,
        Category::Lamp,
        Category::Cabinet,
        Category::Toilet,
    ];

    pub const MOVABLE: [Category; 10] = [
        Category::Chair,
        Category::Table,
        Category::Desk,
        Category::Pillow,
        Category::Sofa,
        Category::Bed,
        Category::Box,
        Category::GarbageBin,
        Category::Shelf,
        Category::Lamp,
    ];

    pub const STATIC: [Category; 2] = [Category::Cabinet, Category::Toilet];

    pub fn name(self) -> &'static str {
        match self {
            Category::Chair => "chair",
            Category::Table => "table",
            Category::Desk => "desk",
            Category::Pillow => "pillow",
            Category::Sofa => "sofa",
            Category::Bed => "bed",
            Category::Box => "box",
            Category::GarbageBin => "garbage_bin",
            Category::Shelf => "shelf",
            Category::Lamp => "lamp",
            Category::Cabinet => "cabinet",
            Category::Toilet => "toilet",
        }
    }

    /// Parses a category name; spaces and underscores are interchangeable.
    pub fn from_name(name: &str) -> Result<Category> {
        let norm = name.trim().to_ascii_lowercase().replace([' ', '-'], "_");
        Category::ALL
            .into_iter()
            .find(|c| c.name() == norm)
            .ok_or_else(|| Error::UnknownCategory(name.to_string()))
    }

    pub fn index(self) -> usize {
        Category::ALL.iter().position(|&c| c == self).unwrap()
    }

    pub fn is_static(self) -> bool {
        matches!(self, Category::Cabinet | Category::Toilet)
    }

    /// Typical half-extents in meters.
    pub fn half_extent_prior(self) -> Vec3 {
        match self {
            Category::Chair => Vec3::new(0.25, 0.25, 0.45),
            Category::Table => Vec3::new(0.6, 0.4, 0.38),
            Category::Desk => Vec3::new(0.6, 0.35, 0.38),
            Category::Pillow => Vec3::new(0.25, 0.15, 0.08),
            Category::Sofa => Vec3::new(0.9, 0.45, 0.4),
            Category::Bed => Vec3::new(1.0, 0.8, 0.3),
            Category::Box => Vec3::new(0.15, 0.15, 0.15),
            Category::GarbageBin => Vec3::new(0.15, 0.15, 0.2),
            Category::Shelf => Vec3::new(0.4, 0.2, 0.5),
            Category::Lamp => Vec3::new(0.1, 0.1, 0.25),
            Category::Cabinet => Vec3::new(0.4, 0.3, 0.5),
            Category::Toilet => Vec3::new(0.2, 0.3, 0.4),
        }
    }

    /// Whether other objects may be generated resting on top of this one.
    pub fn is_support(self) -> bool {
        matches!(
            self,
            Category::Table | Category::Desk | Category::Bed | Category::Shelf | Category::Cabinet
        )
    }

    /// Whether this object may be generated on top of a support.
    pub fn is_stackable(self) -> bool {
        matches!(
            self,
            Category::Pillow | Category::Box | Category::Lamp | Category::GarbageBin
        )
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigidBodySpec {
    pub id: u32,
    pub category: Category,
    pub half_extents: Vec3,
    /// Centre of mass.
    pub position: Vec3,
    /// Rotation about +z, radians in `[0, 2π)`.
    pub yaw: f64,
    pub is_static: bool,
    pub mass: f64,
}

impl RigidBodySpec {
    /// Box local x and y axes in world coordinates.
    pub fn axes(&self) -> (Vec3, Vec3) {
        yaw_axes(self.yaw)
    }

    pub fn to_world(&self, local: Vec3) -> Vec3 {
        let (ax, ay) = self.axes();
        self.position + ax * local.x + ay * local.y + Vec3::Z * local.z
    }

    pub fn to_local(&self, world: Vec3) -> Vec3 {
        let (ax, ay) = self.axes();
        let d = world - self.position;
        Vec3::new(d.dot(ax), d.dot(ay), d.z)
    }

    pub fn bottom(&self) -> f64 {
        self.position.z - self.half_extents.z
    }

    pub fn top(&self) -> f64 {
        self.position.z + self.half_extents.z
    }

    pub fn corners(&self) -> [Vec3; 8] {
        let h = self.half_extents;
        let mut out = [Vec3::ZERO; 8];
        for (i, c) in out.iter_mut().enumerate() {
            let sx = if i & 1 == 0 { -1.0 } else { 1.0 };
            let sy = if i & 2 == 0 { -1.0 } else { 1.0 };
            let sz = if i & 4 == 0 { -1.0 } else { 1.0 };
            *c = self.to_world(Vec3::new(sx * h.x, sy * h.y, sz * h.z));
        }
        out
    }

    pub fn obb(&self) -> Obb {
        Obb::new(self.position, self.half_extents, self.yaw)
    }
}

pub fn yaw_axes(yaw: f64) -> (Vec3, Vec3) {
    let (s, c) = yaw.sin_cos();
    (Vec3::new(c, s, 0.0), Vec3::new(-s, c, 0.0))
}

/// Box with a yaw-only orientation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Obb {
    pub center: Vec3,
    pub half: Vec3,
    pub ax: Vec3,
    pub ay: Vec3,
}

/// Minimum-penetration contact between two boxes. `normal` points from the second box
/// towards the first.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Contact {
    pub normal: Vec3,
    /// Positive when overlapping, negative for a gap.
    pub depth: f64,
}

impl Obb {
    pub fn new(center: Vec3, half: Vec3, yaw: f64) -> Self {
        let (ax, ay) = yaw_axes(yaw);
        Self {
            center,
            half,
            ax,
            ay,
        }
    }

    /// Half-width of the box projected on a horizontal unit axis.
    pub fn horizontal_radius(&self, axis: Vec3) -> f64 {
        self.half.x * self.ax.dot(axis).abs() + self.half.y * self.ay.dot(axis).abs()
    }

    /// Separating-axis test over both boxes' horizontal axes and the vertical axis.
    /// Returns the axis of least penetration (or the largest gap when separated).
    pub fn contact(&self, other: &Obb) -> Contact {
        let d = self.center - other.center;
        let mut best = Contact {
            normal: if d.z >= 0.0 { Vec3::Z } else { -Vec3::Z },
            depth: self.half.z + other.half.z - d.z.abs(),
        };
        for axis in [self.ax, self.ay, other.ax, other.ay] {
            let depth =
                self.horizontal_radius(axis) + other.horizontal_radius(axis) - d.dot(axis).abs();
            let normal = if d.dot(axis) >= 0.0 { axis } else { -axis };
            if depth < best.depth {
                best = Contact { normal, depth };
            }
        }
        best
    }
}

/// Vertical wall constraint. Points `p` inside the room satisfy `normal · p >= offset`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Wall {
    /// Horizontal unit normal pointing into the room.
    pub normal: Vec3,
    pub offset: f64,
    /// Extent of the wall along its tangent `(-n.y, n.x, 0)`.
    pub lateral_min: f64,
    pub lateral_max: f64,
    pub height: f64,
}

impl Wall {
    pub fn tangent(&self) -> Vec3 {
        Vec3::new(-self.normal.y, self.normal.x, 0.0)
    }

    /// Signed distance of a point from the wall plane (positive inside the room).
    pub fn distance(&self, p: Vec3) -> f64 {
        self.normal.dot(p) - self.offset
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoomBounds {
    pub min_x: f64,
    pub max_x: f64,
    pub min_y: f64,
    pub max_y: f64,
}

impl RoomBounds {
    pub fn contains_xy(&self, p: Vec3, margin: f64) -> bool {
        p.x >= self.min_x + margin
            && p.x <= self.max_x - margin
            && p.y >= self.min_y + margin
            && p.y <= self.max_y - margin
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pixel {
    pub u: f64,
    pub v: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub eye: Vec3,
    pub target: Vec3,
    pub focal_px: f64,
    pub image_width: u32,
    pub image_height: u32,
}

/// Orthonormal camera frame: `forward` along the optical axis, `right` and `up` spanning
/// the image plane (image v grows along `-up`).
#[derive(Clone, Copy, Debug)]
pub struct CameraBasis {
    pub forward: Vec3,
    pub right: Vec3,
    pub up: Vec3,
}

impl Camera {
    pub fn validate(&self) -> Result<()> {
        if !(self.focal_px > 0.0) {
            return Err(Error::Config(format!("focal_px must be > 0, got {}", self.focal_px)));
        }
        if self.eye == self.target {
            return Err(Error::Config("camera eye equals target".into()));
        }
        if self.image_width == 0 || self.image_height == 0 {
            return Err(Error::Config("camera image size must be positive".into()));
        }
        Ok(())
    }

    pub fn basis(&self) -> CameraBasis {
        let forward = (self.target - self.eye)
            .normalized()
            .expect("camera eye equals target");
        let right = forward
            .cross(Vec3::Z)
            .normalized()
            .unwrap_or(Vec3::new(1.0, 0.0, 0.0));
        let up = right.cross(forward);
        CameraBasis { forward, right, up }
    }

    pub fn center(&self) -> Pixel {
        Pixel {
            u: self.image_width as f64 / 2.0,
            v: self.image_height as f64 / 2.0,
        }
    }

    /// Depth of a point along the optical axis.
    pub fn depth(&self, point: Vec3) -> f64 {
        (point - self.eye).dot(self.basis().forward)
    }

    /// Pinhole projection to continuous pixel coordinates.
    pub fn project(&self, point: Vec3) -> Result<Pixel> {
        let b = self.basis();
        let d = point - self.eye;
        let depth = d.dot(b.forward);
        if depth <= 1e-9 {
            return Err(Error::BehindCamera(depth));
        }
        let c = self.center();
        Ok(Pixel {
            u: c.u + self.focal_px * d.dot(b.right) / depth,
            v: c.v - self.focal_px * d.dot(b.up) / depth,
        })
    }

    /// Direction of the ray through pixel `(u, v)`, scaled so that its optical-axis
    /// component is 1 (so `eye + ray * depth` lies at that depth).
    pub fn ray_at_unit_depth(&self, u: f64, v: f64) -> Vec3 {
        let b = self.basis();
        let c = self.center();
        b.forward + b.right * ((u - c.u) / self.focal_px) - b.up * ((v - c.v) / self.focal_px)
    }

    /// Inverse of [`Camera::project`] for a known depth.
    pub fn unproject(&self, px: Pixel, depth: f64) -> Vec3 {
        self.eye + self.ray_at_unit_depth(px.u, px.v) * depth
    }

    pub fn in_image(&self, px: Pixel) -> bool {
        px.u >= 0.0
            && px.v >= 0.0
            && px.u <= (self.image_width - 1) as f64
            && px.v <= (self.image_height - 1) as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub bodies: Vec<RigidBodySpec>,
    pub floor_height: f64,
    pub walls: Vec<Wall>,
    pub room: RoomBounds,
    pub camera: Camera,
    pub seed: u64,
}

impl SceneSpec {
    pub fn body(&self, id: u32) -> Result<&RigidBodySpec> {
        self.bodies
            .iter()
            .find(|b| b.id == id)
            .ok_or(Error::UnknownBody(id))
    }

    pub fn body_mut(&mut self, id: u32) -> Result<&mut RigidBodySpec> {
        self.bodies
            .iter_mut()
            .find(|b| b.id == id)
            .ok_or(Error::UnknownBody(id))
    }

    /// Nearest intersection of a ray with any body, wall or the floor.
    pub fn cast_ray(&self, origin: Vec3, dir: Vec3) -> Option<RayHit> {
        let mut best: Option<RayHit> = None;
        let mut consider = |hit: Option<RayHit>| {
            if let Some(h) = hit {
                if best.is_none_or(|b| h.t < b.t) {
                    best = Some(h);
                }
            }
        };
        for body in &self.bodies {
            consider(ray_box(origin, dir, body).map(|(t, normal)| RayHit {
                t,
                normal,
                surface: Surface::Body(body.id),
            }));
        }
        for (i, wall) in self.walls.iter().enumerate() {
            consider(ray_wall(origin, dir, wall, self.floor_height).map(|t| RayHit {
                t,
                normal: wall.normal,
                surface: Surface::Wall(i),
            }));
        }
        if dir.z < 0.0 {
            let t = (self.floor_height - origin.z) / dir.z;
            if t > 0.0 {
                consider(Some(RayHit {
                    t,
                    normal: Vec3::Z,
                    surface: Surface::Floor,
                }));
            }
        }
        best
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Surface {
    Body(u32),
    Wall(usize),
    Floor,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayHit {
    /// Ray parameter: hit point is `origin + dir * t`.
    pub t: f64,
    pub normal: Vec3,
    pub surface: Surface,
}

/// Slab test in the box's local frame. Returns the entry parameter and world normal.
pub fn ray_box(origin: Vec3, dir: Vec3, body: &RigidBodySpec) -> Option<(f64, Vec3)> {
    let (ax, ay) = body.axes();
    let o = body.to_local(origin);
    let d = Vec3::new(dir.dot(ax), dir.dot(ay), dir.z);
    let h = body.half_extents.to_array();
    let o = o.to_array();
    let d = d.to_array();
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    let mut near_axis = 0usize;
    let mut near_sign = 0.0;
    for k in 0..3 {
        if d[k].abs() < 1e-15 {
            if o[k].abs() > h[k] {
                return None;
            }
            continue;
        }
        let t1 = (-h[k] - o[k]) / d[k];
        let t2 = (h[k] - o[k]) / d[k];
        let (lo, hi, sign) = if t1 < t2 { (t1, t2, -1.0) } else { (t2, t1, 1.0) };
        if lo > t_near {
            t_near = lo;
            near_axis = k;
            near_sign = sign;
        }
        t_far = t_far.min(hi);
    }
    if t_near > t_far || t_far <= 0.0 || t_near <= 0.0 {
        return None;
    }
    let normal = match near_axis {
        0 => ax * near_sign,
        1 => ay * near_sign,
        _ => Vec3::Z * near_sign,
    };
    Some((t_near, normal))
}

fn ray_wall(origin: Vec3, dir: Vec3, wall: &Wall, floor: f64) -> Option<f64> {
    let denom = wall.normal.dot(dir);
    if denom >= 0.0 {
        return None;
    }
    let t = -wall.distance(origin) / denom;
    if t <= 0.0 {
        return None;
    }
    let p = origin + dir * t;
    let lat = wall.tangent().dot(p);
    (lat >= wall.lateral_min
        && lat <= wall.lateral_max
        && p.z >= floor
        && p.z <= floor + wall.height)
        .then_some(t)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneGenConfig {
    /// Range of each room side length in meters.
    pub room_size: (f64, f64),
    /// Inclusive range of the number of bodies.
    pub body_count: (usize, usize),
    /// Probability that a body is drawn from the static categories.
    pub static_probability: f64,
    /// Probability that a stackable body is placed on top of a support.
    pub stack_probability: f64,
    /// Inclusive range of the number of walls (out of 4 sides).
    pub wall_count: (usize, usize),
    pub wall_height: f64,
    pub camera_height: f64,
    pub camera_target_height: f64,
    pub fov_deg: f64,
    pub image_width: u32,
    pub image_height: u32,
    /// Relative jitter applied to category half-extent priors.
    pub extent_jitter: f64,
    pub max_placement_attempts: usize,
}

impl Default for SceneGenConfig {
    fn default() -> Self {
        Self {
            room_size: (3.0, 5.0),
            body_count: (2, 6),
            static_probability: 0.15,
            stack_probability: 0.4,
            wall_count: (2, 4),
            wall_height: 2.5,
            camera_height: 1.6,
            camera_target_height: 0.3,
            fov_deg: 75.0,
            image_width: 64,
            image_height: 64,
            extent_jitter: 0.2,
            max_placement_attempts: 1000,
        }
    }
}

impl SceneGenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.room_size.0 > 0.0 && self.room_size.0 <= self.room_size.1) {
            return bad("room_size must satisfy 0 < min <= max");
        }
        if self.body_count.0 > self.body_count.1 {
            return bad("body_count min exceeds max");
        }
        if self.wall_count.0 > self.wall_count.1 || self.wall_count.1 > 4 {
            return bad("wall_count must be within 0..=4 with min <= max");
        }
        if !(0.0..=1.0).contains(&self.static_probability)
            || !(0.0..=1.0).contains(&self.stack_probability)
        {
            return bad("probabilities must lie in [0, 1]");
        }
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return bad("fov_deg must lie in (0, 180)");
        }
        if self.image_width == 0 || self.image_height == 0 {
            return bad("image size must be positive");
        }
        if !(0.0..1.0).contains(&self.extent_jitter) {
            return bad("extent_jitter must lie in [0, 1)");
        }
        Ok(())
    }
}

const CATEGORY_REDRAWS: usize = 8;

/// Builds a random non-interpenetrating room. Identical `(seed, config)` yields an
/// identical scene.
pub fn generate_scene(seed: u64, config: &SceneGenConfig) -> Result<SceneSpec> {
    config.validate()?;
    let mut rng = seed::rng(seed);
    let lx = rng.random_range(config.room_size.0..=config.room_size.1);
    let ly = rng.random_range(config.room_size.0..=config.room_size.1);
    let room = RoomBounds {
        min_x: -lx / 2.0,
        max_x: lx / 2.0,
        min_y: -ly / 2.0,
        max_y: ly / 2.0,
    };
    let floor_height = 0.0;

    let mut sides = [0usize, 1, 2, 3];
    sides.shuffle(&mut rng);
    let n_walls = rng.random_range(config.wall_count.0..=config.wall_count.1);
    let mut chosen: Vec<usize> = sides[..n_walls].to_vec();
    chosen.sort_unstable();
    let walls = chosen
        .into_iter()
        .map(|side| side_wall(side, &room, config.wall_height))
        .collect();

    let sx = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let sy = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let inset = 0.15;
    let eye = Vec3::new(
        sx * (lx / 2.0 - inset),
        sy * (ly / 2.0 - inset),
        floor_height + config.camera_height,
    );
    let target = Vec3::new(0.0, 0.0, floor_height + config.camera_target_height);
    let focal_px =
        (config.image_width as f64 / 2.0) / (config.fov_deg.to_radians() / 2.0).tan();
    let camera = Camera {
        eye,
        target,
        focal_px,
        image_width: config.image_width,
        image_height: config.image_height,
    };

    let n_bodies = rng.random_range(config.body_count.0..=config.body_count.1);
    let mut bodies: Vec<RigidBodySpec> = Vec::with_capacity(n_bodies);
    for id in 0..n_bodies as u32 {
        // A body that does not fit is redrawn (category and size) a few times.
        let mut placed = None;
        let mut last_category = Category::Box;
        for _ in 0..CATEGORY_REDRAWS {
            let category = if rng.random_bool(config.static_probability) {
                *Category::STATIC.choose(&mut rng).unwrap()
            } else {
                *Category::MOVABLE.choose(&mut rng).unwrap()
            };
            let prior = category.half_extent_prior();
            let j = config.extent_jitter;
            let half_extents = Vec3::new(
                prior.x * rng.random_range(1.0 - j..=1.0 + j),
                prior.y * rng.random_range(1.0 - j..=1.0 + j),
                prior.z * rng.random_range(1.0 - j..=1.0 + j),
            );
            let yaw = rng.random_range(0.0..TAU);
            let supports: Vec<usize> = bodies
                .iter()
                .enumerate()
                .filter(|(_, b)| b.category.is_support())
                .map(|(i, _)| i)
                .collect();
            let stack = category.is_stackable()
                && !supports.is_empty()
                && rng.random_bool(config.stack_probability);

            for _ in 0..config.max_placement_attempts {
                let position = if stack {
                    let s = &bodies[*supports.choose(&mut rng).unwrap()];
                    let lx = rng.random_range(-s.half_extents.x..=s.half_extents.x);
                    let ly = rng.random_range(-s.half_extents.y..=s.half_extents.y);
                    let mut p = s.to_world(Vec3::new(lx, ly, 0.0));
                    p.z = s.top() + half_extents.z;
                    p
                } else {
                    Vec3::new(
                        rng.random_range(room.min_x..=room.max_x),
                        rng.random_range(room.min_y..=room.max_y),
                        floor_height + half_extents.z,
                    )
                };
                let candidate = RigidBodySpec {
                    id,
                    category,
                    half_extents,
                    position,
                    yaw,
                    is_static: category.is_static(),
                    mass: 1.0,
                };
                if placement_ok(&candidate, &bodies, &room, stack) {
                    placed = Some(candidate);
                    break;
                }
            }
            last_category = category;
            if placed.is_some() {
                break;
            }
        }
        match placed {
            Some(b) => bodies.push(b),
            None => {
                return Err(Error::Generation(format!(
                    "could not place body {id} ({last_category}) after {} attempts",
                    config.max_placement_attempts
                )))
            }
        }
    }

    Ok(SceneSpec {
        bodies,
        floor_height,
        walls,
        room,
        camera,
        seed,
    })
}

fn side_wall(side: usize, room: &RoomBounds, height: f64) -> Wall {
    let (normal, offset) = match side {
        0 => (Vec3::new(1.0, 0.0, 0.0), room.min_x),
        1 => (Vec3::new(-1.0, 0.0, 0.0), -room.max_x),
        2 => (Vec3::new(0.0, 1.0, 0.0), room.min_y),
        _ => (Vec3::new(0.0, -1.0, 0.0), -room.max_y),
    };
    let tangent = Vec3::new(-normal.y, normal.x, 0.0);
    let corners = [
        Vec3::new(room.min_x, room.min_y, 0.0),
        Vec3::new(room.max_x, room.max_y, 0.0),
    ];
    let a = tangent.dot(corners[0]);
    let b = tangent.dot(corners[1]);
    Wall {
        normal,
        offset,
        lateral_min: a.min(b),
        lateral_max: a.max(b),
        height,
    }
}

fn placement_ok(
    candidate: &RigidBodySpec,
    others: &[RigidBodySpec],
    room: &RoomBounds,
    stacked: bool,
) -> bool {
    let footprint_inside = candidate
        .corners()
        .iter()
        .all(|c| room.contains_xy(*c, 0.0));
    if !footprint_inside {
        return false;
    }
    let obb = candidate.obb();
    if others
        .iter()
        .any(|o| obb.contact(&o.obb()).depth > CONTACT_TOLERANCE)
    {
        return false;
    }
    if stacked {
        // Centre of mass must sit over the support so a translation-only box stays put.
        let below = Vec3::new(
            candidate.position.x,
            candidate.position.y,
            candidate.bottom() - 1e-6,
        );
        return others.iter().any(|o| {
            let l = o.to_local(below);
            l.x.abs() <= o.half_extents.x
                && l.y.abs() <= o.half_extents.y
                && l.z.abs() <= o.half_extents.z
        });
    }
    true
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MagnitudeBand {
    Small,
    Medium,
    Large,
}

impl MagnitudeBand {
    pub const ALL: [MagnitudeBand; 3] =
        [MagnitudeBand::Small, MagnitudeBand::Medium, MagnitudeBand::Large];
}

/// Force magnitude ranges in Newtons, half-open `[lo, hi)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandConfig {
    pub small: (f64, f64),
    pub medium: (f64, f64),
    pub large: (f64, f64),
}

impl Default for BandConfig {
    fn default() -> Self {
        Self {
            small: (2.0, 6.0),
            medium: (6.0, 14.0),
            large: (14.0, 30.0),
        }
    }
}

impl BandConfig {
    pub fn range(&self, band: MagnitudeBand) -> (f64, f64) {
        match band {
            MagnitudeBand::Small => self.small,
            MagnitudeBand::Medium => self.medium,
            MagnitudeBand::Large => self.large,
        }
    }

    /// Upper edge of the large band; used as the colour-wheel saturation scale.
    pub fn f_max(&self) -> f64 {
        self.large.1
    }

    pub fn validate(&self) -> Result<()> {
        for band in MagnitudeBand::ALL {
            let (lo, hi) = self.range(band);
            if !(lo >= 0.0 && lo < hi && hi.is_finite()) {
                return Err(Error::Config(format!("invalid {band:?} band [{lo}, {hi})")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForceApplication {
    pub body_id: u32,
    pub impact_point_3d: Vec3,
    pub impact_point_2d: Pixel,
    /// Newtons; the vertical component is always exactly zero.
    pub force: Vec3,
    pub magnitude_band: MagnitudeBand,
}

impl ForceApplication {
    pub fn magnitude(&self) -> f64 {
        self.force.norm()
    }

    /// Force azimuth in `[0, 2π)`.
    pub fn azimuth(&self) -> f64 {
        let a = self.force.y.atan2(self.force.x);
        if a < 0.0 {
            a + TAU
        } else {
            a
        }
    }

    /// Same impact point and direction with a magnitude redrawn in `band`.
    pub fn with_band(&self, band: MagnitudeBand, rng_seed: u64, bands: &BandConfig) -> Self {
        let mut rng = seed::rng(rng_seed);
        let (lo, hi) = bands.range(band);
        let m = rng.random_range(lo..hi);
        let a = self.azimuth();
        Self {
            force: Vec3::new(m * a.cos(), m * a.sin(), 0.0),
            magnitude_band: band,
            ..self.clone()
        }
    }
}

const SURFACE_ATTEMPTS: usize = 256;

/// Picks a camera-visible point on the target's faces and a random horizontal force.
pub fn sample_force(
    scene: &SceneSpec,
    body_id: u32,
    rng_seed: u64,
    bands: &BandConfig,
) -> Result<ForceApplication> {
    bands.validate()?;
    let body = scene.body(body_id)?;
    let mut rng = seed::rng(rng_seed);
    let cam = &scene.camera;
    let h = body.half_extents;
    let (ax, ay) = body.axes();

    // (local axis, sign, world normal); the bottom face rests on a support.
    let faces: Vec<(usize, f64, Vec3)> = [
        (0, 1.0, ax),
        (0, -1.0, -ax),
        (1, 1.0, ay),
        (1, -1.0, -ay),
        (2, 1.0, Vec3::Z),
    ]
    .into_iter()
    .filter(|&(axis, sign, n)| {
        let mut c = [0.0; 3];
        c[axis] = sign * h.to_array()[axis];
        let center = body.to_world(Vec3::new(c[0], c[1], c[2]));
        n.dot(cam.eye - center) > 0.0
    })
    .collect();
    if faces.is_empty() {
        return Err(Error::NoVisibleSurface(body_id));
    }

    let mut impact = None;
    for _ in 0..SURFACE_ATTEMPTS {
        let (axis, sign, _) = faces[rng.random_range(0..faces.len())];
        let ha = h.to_array();
        let mut local = [0.0; 3];
        for k in 0..3 {
            local[k] = if k == axis {
                sign * ha[k]
            } else {
                rng.random_range(-ha[k]..=ha[k])
            };
        }
        let p = body.to_world(Vec3::new(local[0], local[1], local[2]));
        let Ok(px) = cam.project(p) else { continue };
        if !cam.in_image(px) {
            continue;
        }
        let to_p = p - cam.eye;
        let dist = to_p.norm();
        let dir = to_p / dist;
        let visible = match scene.cast_ray(cam.eye, dir) {
            Some(hit) => hit.surface == Surface::Body(body_id) && (hit.t - dist).abs() <= 1e-6 * dist.max(1.0),
            None => false,
        };
        if visible {
            impact = Some((p, px));
            break;
        }
    }
    let (impact_point_3d, impact_point_2d) = impact.ok_or(Error::NoVisibleSurface(body_id))?;

    let azimuth = rng.random_range(0.0..TAU);
    let band = MagnitudeBand::ALL[rng.random_range(0..3)];
    let (lo, hi) = bands.range(band);
    let magnitude = rng.random_range(lo..hi);
    Ok(ForceApplication {
        body_id,
        impact_point_3d,
        impact_point_2d,
        force: Vec3::new(magnitude * azimuth.cos(), magnitude * azimuth.sin(), 0.0),
        magnitude_band: band,
    })
}

/// Angle between two vectors in radians.
pub fn angle_between(a: Vec3, b: Vec3) -> f64 {
    let c = a.dot(b) / (a.norm() * b.norm());
    c.clamp(-1.0, 1.0).acos()
}
