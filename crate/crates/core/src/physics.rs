//! Translation-only box simulator.
//!
//! Bodies keep their generated yaw and never rotate, so the state of each body is its
//! centre-of-mass position and linear velocity. Each macro-step of `dt` seconds is split
//! into `substeps` semi-implicit Euler substeps. Within a substep:
//!
//! 1. gravity is added to every movable body,
//! 2. contacts (box–floor, box–wall, box–box) are gathered and resolved with sequential
//!    normal impulses (restitution above a speed threshold) and Coulomb friction clamped
//!    to `μ` times the accumulated normal impulse,
//! 3. positions are integrated and residual penetration is projected out, with the
//!    floor and walls applied last.
//!
//! The force is applied once, as an impulse `J = F · dt` on the target at the start of
//! macro-step 0.

use serde::{Deserialize, Serialize};

use crate::scene::{ForceApplication, Obb, SceneSpec, Vec3, Wall};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Seconds per macro-step.
    pub dt: f64,
    pub substeps: usize,
    pub gravity: f64,
    pub friction_mu: f64,
    pub restitution: f64,
    /// Approach speed below which contacts do not bounce.
    pub restitution_threshold: f64,
    pub stop_speed: f64,
    pub max_macro_steps: usize,
    pub sample_stride: usize,
    pub solver_iterations: usize,
    pub projection_passes: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            substeps: 10,
            gravity: 9.81,
            friction_mu: 0.5,
            restitution: 0.2,
            restitution_threshold: 1.0,
            stop_speed: 0.05,
            max_macro_steps: 32,
            sample_stride: 6,
            solver_iterations: 8,
            projection_passes: 4,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.dt > 0.0) {
            return bad("dt must be > 0");
        }
        if self.substeps == 0 {
            return bad("substeps must be >= 1");
        }
        if !(0.0..1.0).contains(&self.restitution) {
            return bad("restitution must lie in [0, 1)");
        }
        if !(self.friction_mu >= 0.0) || !(self.stop_speed > 0.0) {
            return bad("friction_mu must be >= 0 and stop_speed > 0");
        }
        if self.sample_stride == 0 {
            return bad("sample_stride must be >= 1");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BodyState {
    pub position: Vec3,
    pub velocity: Vec3,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimTrace {
    pub target_id: u32,
    /// Target state after each macro-step `0..=n`.
    pub states: Vec<BodyState>,
    pub stable_step: Option<usize>,
    pub converged: bool,
}

pub fn is_stable(state: &BodyState, cfg: &SimConfig) -> bool {
    state.velocity.norm() < cfg.stop_speed
}

/// Contact slop: touching bodies within this gap still exchange impulses.
const CONTACT_MARGIN: f64 = 1e-6;

#[derive(Clone, Debug)]
struct SimBody {
    half: Vec3,
    yaw: f64,
    inv_mass: f64,
    position: Vec3,
    velocity: Vec3,
}

impl SimBody {
    fn obb(&self) -> Obb {
        Obb::new(self.position, self.half, self.yaw)
    }

    fn movable(&self) -> bool {
        self.inv_mass > 0.0
    }
}

#[derive(Clone, Copy, Debug)]
enum Other {
    Body(usize),
    Static,
}

#[derive(Clone, Copy, Debug)]
struct ContactPoint {
    a: usize,
    b: Other,
    /// Points from `b` to `a`.
    normal: Vec3,
    target_vn: f64,
    acc_n: f64,
    acc_t: Vec3,
}

/// Full-scene state; exposed so callers can inspect every body (not only the target).
#[derive(Clone, Debug)]
pub struct World {
    bodies: Vec<SimBody>,
    floor: f64,
    walls: Vec<Wall>,
    cfg: SimConfig,
}

impl World {
    pub fn new(scene: &SceneSpec, cfg: &SimConfig) -> Self {
        let bodies = scene
            .bodies
            .iter()
            .map(|b| SimBody {
                half: b.half_extents,
                yaw: b.yaw,
                inv_mass: if b.is_static { 0.0 } else { 1.0 / b.mass },
                position: b.position,
                velocity: Vec3::ZERO,
            })
            .collect();
        Self {
            bodies,
            floor: scene.floor_height,
            walls: scene.walls.clone(),
            cfg: cfg.clone(),
        }
    }

    pub fn state(&self, index: usize) -> BodyState {
        let b = &self.bodies[index];
        BodyState {
            position: b.position,
            velocity: b.velocity,
        }
    }

    pub fn len(&self) -> usize {
        self.bodies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bodies.is_empty()
    }

    pub fn apply_impulse(&mut self, index: usize, impulse: Vec3) {
        let b = &mut self.bodies[index];
        b.velocity += impulse * b.inv_mass;
    }

    /// Advances one macro-step.
    pub fn step(&mut self) {
        let h = self.cfg.dt / self.cfg.substeps as f64;
        for _ in 0..self.cfg.substeps {
            self.substep(h);
        }
    }

    /// Penetration depth of a body into the floor and walls (0 when clear).
    pub fn static_penetration(&self, index: usize) -> f64 {
        let b = &self.bodies[index];
        let mut worst = (self.floor - (b.position.z - b.half.z)).max(0.0);
        let obb = b.obb();
        for w in &self.walls {
            if let Some(d) = wall_depth(&obb, w, self.floor) {
                worst = worst.max(d);
            }
        }
        worst
    }

    fn substep(&mut self, h: f64) {
        let g = self.cfg.gravity;
        for b in self.bodies.iter_mut().filter(|b| b.movable()) {
            b.velocity.z -= g * h;
        }

        let mut contacts = self.gather_contacts();
        for _ in 0..self.cfg.solver_iterations {
            for c in contacts.iter_mut() {
                self.solve_contact(c);
            }
        }

        for b in self.bodies.iter_mut().filter(|b| b.movable()) {
            b.position += b.velocity * h;
        }

        for _ in 0..self.cfg.projection_passes {
            self.project_pairs();
            self.project_static();
        }
    }

    fn new_contact(&self, a: usize, b: Other, normal: Vec3) -> ContactPoint {
        let vb = match b {
            Other::Body(j) => self.bodies[j].velocity,
            Other::Static => Vec3::ZERO,
        };
        let approach = (self.bodies[a].velocity - vb).dot(normal);
        let target_vn = if approach < -self.cfg.restitution_threshold {
            -self.cfg.restitution * approach
        } else {
            0.0
        };
        ContactPoint {
            a,
            b,
            normal,
            target_vn,
            acc_n: 0.0,
            acc_t: Vec3::ZERO,
        }
    }

    fn gather_contacts(&self) -> Vec<ContactPoint> {
        let mut out = Vec::new();
        for (i, body) in self.bodies.iter().enumerate() {
            if !body.movable() {
                continue;
            }
            if self.floor - (body.position.z - body.half.z) >= -CONTACT_MARGIN {
                out.push(self.new_contact(i, Other::Static, Vec3::Z));
            }
            let obb = body.obb();
            for w in &self.walls {
                if wall_depth_signed(&obb, w, self.floor).is_some_and(|d| d >= -CONTACT_MARGIN) {
                    out.push(self.new_contact(i, Other::Static, w.normal));
                }
            }
        }
        for i in 0..self.bodies.len() {
            for j in (i + 1)..self.bodies.len() {
                let (bi, bj) = (&self.bodies[i], &self.bodies[j]);
                if !bi.movable() && !bj.movable() {
                    continue;
                }
                let c = bi.obb().contact(&bj.obb());
                if c.depth < -CONTACT_MARGIN {
                    continue;
                }
                if bi.movable() {
                    out.push(self.new_contact(i, Other::Body(j), c.normal));
                } else {
                    out.push(self.new_contact(j, Other::Body(i), -c.normal));
                }
            }
        }
        out
    }

    fn solve_contact(&mut self, c: &mut ContactPoint) {
        let wa = self.bodies[c.a].inv_mass;
        let (vb, wb) = match c.b {
            Other::Body(j) => (self.bodies[j].velocity, self.bodies[j].inv_mass),
            Other::Static => (Vec3::ZERO, 0.0),
        };
        let w = wa + wb;
        let rel = self.bodies[c.a].velocity - vb;
        let vn = rel.dot(c.normal);
        let new_acc = (c.acc_n + (c.target_vn - vn) / w).max(0.0);
        let applied_n = new_acc - c.acc_n;
        c.acc_n = new_acc;
        let mut impulse = c.normal * applied_n;

        let rel = rel + c.normal * (applied_n * w);
        let vt = rel - c.normal * rel.dot(c.normal);
        let mut new_t = c.acc_t - vt / w;
        let limit = self.cfg.friction_mu * c.acc_n;
        let mag = new_t.norm();
        if mag > limit {
            new_t = if mag > 0.0 { new_t * (limit / mag) } else { Vec3::ZERO };
        }
        impulse += new_t - c.acc_t;
        c.acc_t = new_t;

        self.bodies[c.a].velocity += impulse * wa;
        if let Other::Body(j) = c.b {
            self.bodies[j].velocity -= impulse * wb;
        }
    }

    fn project_pairs(&mut self) {
        for i in 0..self.bodies.len() {
            for j in (i + 1)..self.bodies.len() {
                let (wi, wj) = (self.bodies[i].inv_mass, self.bodies[j].inv_mass);
                if wi + wj == 0.0 {
                    continue;
                }
                let c = self.bodies[i].obb().contact(&self.bodies[j].obb());
                if c.depth <= 0.0 {
                    continue;
                }
                let push = c.normal * (c.depth / (wi + wj));
                self.bodies[i].position += push * wi;
                self.bodies[j].position -= push * wj;
            }
        }
    }

    fn project_static(&mut self) {
        let floor = self.floor;
        for b in self.bodies.iter_mut().filter(|b| b.movable()) {
            let min_z = floor + b.half.z;
            if b.position.z < min_z {
                b.position.z = min_z;
            }
            for w in &self.walls {
                if let Some(d) = wall_depth(&b.obb(), w, floor) {
                    b.position += w.normal * d;
                }
            }
        }
    }
}

/// Signed penetration of a box into a wall, or `None` when the box is beyond the wall's
/// lateral or vertical extent.
fn wall_depth_signed(obb: &Obb, wall: &Wall, floor: f64) -> Option<f64> {
    let t = wall.tangent();
    let rt = obb.horizontal_radius(t);
    let lat = t.dot(obb.center);
    if lat + rt < wall.lateral_min || lat - rt > wall.lateral_max {
        return None;
    }
    if obb.center.z - obb.half.z > floor + wall.height {
        return None;
    }
    Some(obb.horizontal_radius(wall.normal) - wall.distance(obb.center))
}

fn wall_depth(obb: &Obb, wall: &Wall, floor: f64) -> Option<f64> {
    wall_depth_signed(obb, wall, floor).filter(|&d| d > 0.0)
}

/// Simulates the scene after applying `force` and records the target's motion.
pub fn simulate(scene: &SceneSpec, force: &ForceApplication, cfg: &SimConfig) -> Result<SimTrace> {
    cfg.validate()?;
    let target = scene
        .bodies
        .iter()
        .position(|b| b.id == force.body_id)
        .ok_or(Error::UnknownBody(force.body_id))?;
    let mut world = World::new(scene, cfg);
    world.apply_impulse(target, force.force * cfg.dt);

    let mut states = Vec::with_capacity(cfg.max_macro_steps + 1);
    let mut stable_step = None;
    for step in 0..=cfg.max_macro_steps {
        world.step();
        let s = world.state(target);
        states.push(s);
        if is_stable(&s, cfg) {
            stable_step = Some(step);
            break;
        }
    }
    Ok(SimTrace {
        target_id: force.body_id,
        states,
        converged: stable_step.is_some(),
        stable_step,
    })
}

/// Kinetic plus potential energy of a unit-mass body relative to the floor.
pub fn mechanical_energy(state: &BodyState, floor: f64, cfg: &SimConfig, mass: f64) -> f64 {
    0.5 * mass * state.velocity.norm_sq() + mass * cfg.gravity * (state.position.z - floor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{
        Camera, Category, MagnitudeBand, Pixel, RigidBodySpec, RoomBounds,
    };

    fn room_scene(bodies: Vec<RigidBodySpec>) -> SceneSpec {
        SceneSpec {
            bodies,
            floor_height: 0.0,
            walls: vec![],
            room: RoomBounds {
                min_x: -5.0,
                max_x: 5.0,
                min_y: -5.0,
                max_y: 5.0,
            },
            camera: Camera {
                eye: Vec3::new(-4.0, -4.0, 1.6),
                target: Vec3::new(0.0, 0.0, 0.3),
                focal_px: 40.0,
                image_width: 64,
                image_height: 64,
            },
            seed: 0,
        }
    }

    fn cube(id: u32, category: Category, position: Vec3) -> RigidBodySpec {
        RigidBodySpec {
            id,
            category,
            half_extents: Vec3::new(0.2, 0.2, 0.2),
            position,
            yaw: 0.0,
            is_static: category.is_static(),
            mass: 1.0,
        }
    }

    fn push(id: u32, force: Vec3) -> ForceApplication {
        ForceApplication {
            body_id: id,
            impact_point_3d: Vec3::ZERO,
            impact_point_2d: Pixel { u: 0.0, v: 0.0 },
            force,
            magnitude_band: MagnitudeBand::Medium,
        }
    }

    #[test]
    fn is_stable_is_strict() {
        let cfg = SimConfig::default();
        let at = |v: f64| BodyState {
            position: Vec3::ZERO,
            velocity: Vec3::new(v, 0.0, 0.0),
        };
        assert!(is_stable(&at(0.0), &cfg));
        assert!(!is_stable(&at(cfg.stop_speed), &cfg));
        assert!(is_stable(&at(cfg.stop_speed / 2.0), &cfg));
    }

    #[test]
    fn static_target_never_moves() {
        let scene = room_scene(vec![cube(0, Category::Cabinet, Vec3::new(0.0, 0.0, 0.2))]);
        let trace = simulate(&scene, &push(0, Vec3::new(25.0, 0.0, 0.0)), &SimConfig::default())
            .unwrap();
        assert_eq!(trace.stable_step, Some(0));
        assert!(trace.states.iter().all(|s| s.velocity == Vec3::ZERO));
    }

    #[test]
    fn free_fall_first_step() {
        let cfg = SimConfig::default();
        let scene = room_scene(vec![cube(0, Category::Box, Vec3::new(0.0, 0.0, 1.2))]);
        let trace = simulate(&scene, &push(0, Vec3::ZERO), &cfg).unwrap();
        let v = trace.states[0].velocity;
        assert!(v.x == 0.0 && v.y == 0.0);
        assert!((v.z + cfg.gravity * cfg.dt).abs() < 1e-9, "{v:?}");
    }

    #[test]
    fn resting_box_stays_put() {
        let scene = room_scene(vec![cube(0, Category::Box, Vec3::new(0.0, 0.0, 0.2))]);
        let trace = simulate(&scene, &push(0, Vec3::ZERO), &SimConfig::default()).unwrap();
        assert_eq!(trace.stable_step, Some(0));
        assert_eq!(trace.states[0].velocity.norm(), 0.0);
    }

    #[test]
    fn sliding_box_decelerates() {
        let cfg = SimConfig::default();
        let scene = room_scene(vec![cube(0, Category::Box, Vec3::new(0.0, 0.0, 0.2))]);
        let trace = simulate(&scene, &push(0, Vec3::new(10.0, 0.0, 0.0)), &cfg).unwrap();
        assert!(trace.converged);
        let v0 = trace.states[0].velocity;
        assert!(v0.x > 0.0 && v0.y.abs() < 1e-12);
        for w in trace.states.windows(2) {
            assert!(w[1].velocity.norm() < w[0].velocity.norm());
        }
    }

    #[test]
    fn unknown_target_is_error() {
        let scene = room_scene(vec![]);
        assert!(simulate(&scene, &push(3, Vec3::ZERO), &SimConfig::default()).is_err());
    }
}
