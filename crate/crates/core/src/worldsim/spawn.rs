use rand::Rng;

use super::sensor::{virtual_gate, GATE_Z};
use super::{collides, DroneState, Gate, Rect, SimConfig, WorldKind, WorldSpec};
use crate::error::{Error, Result};
use crate::rng::stream;

/// Corridor length before the first gate and after the last one.
const CORRIDOR_LEAD_IN: f64 = 2.0;
const CORRIDOR_RUN_OUT: f64 = 6.0;
const MAX_GATE_YAW: f64 = 30.0;
/// Clear radius kept around a real world's start position.
const START_CLEARANCE: f64 = 1.5;
const START_MARGIN: f64 = 3.0;
const OBSTACLE_SIDE: (f64, f64) = (0.5, 2.5);
const START_ALTITUDE: f64 = 1.5;

/// Gate corridor along +x. Gates are `gate_spacing_min..max` apart along
/// the corridor with random lateral offsets and yaw deviations; the
/// corridor walls are the world bounds.
pub fn spawn_fake_world(seed: u64, n_gates: usize, cfg: &SimConfig) -> Result<WorldSpec> {
    if n_gates == 0 {
        return Err(Error::contract("a fake world needs at least one gate"));
    }
    let mut rng = stream(seed, "fake-world", 0);
    let max_yaw = MAX_GATE_YAW.to_radians();
    let mut x = CORRIDOR_LEAD_IN;
    let gates: Vec<Gate> = (0..n_gates)
        .map(|_| {
            x += rng.random_range(cfg.gate_spacing_min..=cfg.gate_spacing_max);
            Gate {
                center: [x, rng.random_range(-cfg.offset_max..=cfg.offset_max), GATE_Z],
                yaw: rng.random_range(-max_yaw..=max_yaw),
                half_width: cfg.gate_half_width,
                frame_thickness: cfg.gate_frame,
            }
        })
        .collect();
    let h = cfg.corridor_half_width;
    Ok(WorldSpec {
        kind: WorldKind::Fake,
        bounds: Rect::new(0.0, -h, x + CORRIDOR_RUN_OUT, h),
        obstacles: Vec::new(),
        gates,
        seed,
    })
}

/// Square room with random rectangular clutter. The start position always
/// keeps a clear disc around it. With `with_gates`, a chain of gates is
/// laid through free gaps starting from the start pose.
pub fn spawn_real_world(
    seed: u64,
    clutter_density: f64,
    with_gates: bool,
    cfg: &SimConfig,
) -> Result<WorldSpec> {
    if !(0.0..=1.0).contains(&clutter_density) {
        return Err(Error::contract(format!(
            "clutter density {clutter_density} outside [0, 1]"
        )));
    }
    let size = cfg.room_size;
    let bounds = Rect::new(0.0, 0.0, size, size);
    let mut world = WorldSpec {
        kind: WorldKind::Real,
        bounds,
        obstacles: Vec::new(),
        gates: Vec::new(),
        seed,
    };
    let start = start_state(&world);
    let sp = start.planar();

    let mut rng = stream(seed, "real-world", 0);
    let target = (clutter_density * cfg.max_obstacles as f64).round() as usize;
    let mut attempts = 0;
    while world.obstacles.len() < target && attempts < 50 * target.max(1) {
        attempts += 1;
        let w = rng.random_range(OBSTACLE_SIDE.0..=OBSTACLE_SIDE.1);
        let h = rng.random_range(OBSTACLE_SIDE.0..=OBSTACLE_SIDE.1);
        let x = rng.random_range(0.0..=size - w);
        let y = rng.random_range(0.0..=size - h);
        let o = Rect::new(x, y, x + w, y + h);
        if super::geometry::point_rect_distance(sp, &o) < START_CLEARANCE {
            continue;
        }
        world.obstacles.push(o);
    }

    if with_gates {
        let mut pose = start;
        for _ in 0..cfg.n_gates {
            let Some(g) = virtual_gate(&world, &pose, cfg)? else { break };
            pose = DroneState::at(g.center[0], g.center[1], START_ALTITUDE, g.yaw);
            world.gates.push(g);
        }
    }
    Ok(world)
}

/// Deterministic start pose of a world, derived from its seed.
///
/// Fake worlds start at the corridor entrance with up to 0.5 m of lateral
/// jitter, heading down the corridor; real worlds start anywhere at least
/// `START_MARGIN` from the walls, facing a random direction.
pub fn start_state(world: &WorldSpec) -> DroneState {
    let mut rng = stream(world.seed, "start", 0);
    match world.kind {
        WorldKind::Fake => {
            let y = rng.random_range(-0.5..=0.5);
            DroneState::at(world.bounds.min_x + CORRIDOR_LEAD_IN, y, START_ALTITUDE, 0.0)
        }
        WorldKind::Real => {
            let b = &world.bounds;
            let m = START_MARGIN.min((b.max_x - b.min_x) / 2.0).min((b.max_y - b.min_y) / 2.0);
            let x = rng.random_range(b.min_x + m..=b.max_x - m);
            let y = rng.random_range(b.min_y + m..=b.max_y - m);
            let yaw = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            DroneState::at(x, y, START_ALTITUDE, yaw)
        }
    }
}

/// Uniform collision-free pose in a world, or `None` after `tries` misses.
pub(crate) fn sample_free_pose<R: Rng>(
    world: &WorldSpec,
    rng: &mut R,
    clearance: f64,
    tries: usize,
    cfg: &SimConfig,
) -> Option<DroneState> {
    let b = &world.bounds;
    for _ in 0..tries {
        let x = rng.random_range(b.min_x..=b.max_x);
        let y = rng.random_range(b.min_y..=b.max_y);
        let yaw = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let s = DroneState::at(x, y, START_ALTITUDE, yaw);
        let inflated = SimConfig {
            collision_radius: cfg.collision_radius + clearance,
            ..cfg.clone()
        };
        if !collides(world, s.position, &inflated) {
            return Some(s);
        }
    }
    None
}
