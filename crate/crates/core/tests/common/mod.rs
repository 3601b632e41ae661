//! Constructed scenes shared by the integration tests.
#![allow(dead_code)]

use force_effect::physics::{is_stable, mechanical_energy, simulate, SimConfig, World};
use force_effect::quantize::{build_vocabulary, extract_sequence};
use force_effect::scene::{
    generate_scene, sample_force, BandConfig, Camera, Category, ForceApplication, MagnitudeBand,
    Pixel, RigidBodySpec, RoomBounds, SceneGenConfig, SceneSpec, Vec3, Wall,
};
use force_effect::seed;

pub fn camera() -> Camera {
    Camera {
        eye: Vec3::new(-4.0, -4.0, 1.6),
        target: Vec3::new(0.0, 0.0, 0.3),
        focal_px: 40.0,
        image_width: 64,
        image_height: 64,
    }
}

pub fn room(bodies: Vec<RigidBodySpec>, walls: Vec<Wall>) -> SceneSpec {
    SceneSpec {
        bodies,
        floor_height: 0.0,
        walls,
        room: RoomBounds {
            min_x: -5.0,
            max_x: 5.0,
            min_y: -5.0,
            max_y: 5.0,
        },
        camera: camera(),
        seed: 0,
    }
}

pub fn body(id: u32, category: Category, half: Vec3, position: Vec3) -> RigidBodySpec {
    RigidBodySpec {
        id,
        category,
        half_extents: half,
        position,
        yaw: 0.0,
        is_static: category.is_static(),
        mass: 1.0,
    }
}

pub fn cube(id: u32, category: Category, half: f64, x: f64, y: f64, bottom: f64) -> RigidBodySpec {
    body(id, category, Vec3::new(half, half, half), Vec3::new(x, y, bottom + half))
}

/// Wall keeping points at `x <= at` inside the room.
pub fn wall_at_x(at: f64) -> Wall {
    Wall {
        normal: Vec3::new(-1.0, 0.0, 0.0),
        offset: -at,
        lateral_min: -5.0,
        lateral_max: 5.0,
        height: 2.5,
    }
}

pub fn push(id: u32, force: Vec3) -> ForceApplication {
    ForceApplication {
        body_id: id,
        impact_point_3d: Vec3::ZERO,
        impact_point_2d: Pixel { u: 0.0, v: 0.0 },
        force,
        magnitude_band: MagnitudeBand::Medium,
    }
}

/// Box driven into a fixture standing against a wall; rebounds under a 30 N push along +x.
pub fn bounce_scene() -> (SceneSpec, SimConfig) {
    let scene = room(
        vec![
            cube(0, Category::Box, 0.2, 0.0, 0.0, 0.0),
            cube(1, Category::Cabinet, 0.3, 0.9, 0.0, 0.0),
        ],
        vec![wall_at_x(1.2)],
    );
    let cfg = SimConfig {
        restitution: 0.9,
        friction_mu: 0.2,
        ..SimConfig::default()
    };
    (scene, cfg)
}

/// Allowed growth of mechanical energy between consecutive macro-steps.
pub const ENERGY_SLACK: f64 = 1.01;

#[derive(Debug, Default)]
pub struct Audit {
    pub simulations: usize,
    pub converged: usize,
    pub static_moved: usize,
    pub worst_penetration: f64,
    pub energy_violations: usize,
    /// Converged traces whose stable step or final speed contradicts the trace.
    pub bad_convergence: usize,
    /// Non-converged traces from which a label could still be extracted.
    pub leaked_labels: usize,
}

/// Replays `simulate` step by step while observing every body, not just the target.
fn audit_one(scene: &SceneSpec, target: usize, impulse: Vec3, cfg: &SimConfig, a: &mut Audit) {
    let mut world = World::new(scene, cfg);
    let statics: Vec<(usize, Vec3)> = scene
        .bodies
        .iter()
        .enumerate()
        .filter(|(_, b)| b.is_static)
        .map(|(i, b)| (i, b.position))
        .collect();
    world.apply_impulse(target, impulse);
    let mut energies = Vec::new();
    for _ in 0..=cfg.max_macro_steps {
        world.step();
        for &(i, p0) in &statics {
            let s = world.state(i);
            if s.position != p0 || s.velocity != Vec3::ZERO {
                a.static_moved += 1;
            }
        }
        a.worst_penetration = a.worst_penetration.max(world.static_penetration(target));
        let s = world.state(target);
        energies.push(mechanical_energy(&s, scene.floor_height, cfg, 1.0));
        if is_stable(&s, cfg) {
            break;
        }
    }
    a.energy_violations += energies
        .windows(2)
        .filter(|w| w[1] > ENERGY_SLACK * w[0] + 1e-12)
        .count();
}

/// Runs at least `min_simulations` seeded pushes over generated scenes.
pub fn invariant_audit(min_simulations: usize) -> Audit {
    let cfg = SimConfig::default();
    let gen = SceneGenConfig::default();
    let bands = BandConfig::default();
    let vocab = build_vocabulary();
    let mut a = Audit::default();
    let mut scene_seed = 0u64;
    while a.simulations < min_simulations {
        let Ok(scene) = generate_scene(scene_seed, &gen) else {
            scene_seed += 1;
            continue;
        };
        for (i, b) in scene.bodies.iter().enumerate() {
            let Ok(force) = sample_force(&scene, b.id, seed::derive(scene_seed, i as u64), &bands)
            else {
                continue;
            };
            a.simulations += 1;
            audit_one(&scene, i, force.force * cfg.dt, &cfg, &mut a);
            let trace = simulate(&scene, &force, &cfg).unwrap();
            if trace.converged {
                a.converged += 1;
                let ok = trace.stable_step.is_some_and(|k| {
                    k <= cfg.max_macro_steps
                        && k < trace.states.len()
                        && trace.states[k].velocity.norm() < cfg.stop_speed
                });
                a.bad_convergence += usize::from(!ok);
            } else if extract_sequence(&trace, &vocab, &cfg).is_ok() {
                a.leaked_labels += 1;
            }
        }
        scene_seed += 1;
    }
    a
}
