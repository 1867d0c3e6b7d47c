use super::geometry::{point_rect_distance, wrap_angle};
use super::{Action, DroneState, SimConfig, WorldSpec};
use crate::error::{Error, Result};

pub const Z_MIN: f64 = 0.5;
pub const Z_MAX: f64 = 2.5;

/// Whether a drone body centered at `position` touches a wall, an obstacle
/// or a gate post.
pub fn collides(world: &WorldSpec, position: [f64; 3], cfg: &SimConfig) -> bool {
    let r = cfg.collision_radius;
    let p = [position[0], position[1]];
    let b = &world.bounds;
    if p[0] - b.min_x < r || b.max_x - p[0] < r || p[1] - b.min_y < r || b.max_y - p[1] < r {
        return true;
    }
    if world.obstacles.iter().any(|o| point_rect_distance(p, o) < r) {
        return true;
    }
    world.gates.iter().any(|g| {
        let pr = g.post_radius();
        g.posts()
            .iter()
            .any(|c| (p[0] - c[0]).hypot(p[1] - c[1]) < r + pr)
    })
}

/// Integrates one step: clamp the command, turn, then translate along the
/// new heading. A state that ends in collision is marked crashed and is
/// terminal.
pub fn step_dynamics(
    world: &WorldSpec,
    s: &DroneState,
    a: Action,
    dt: f64,
    cfg: &SimConfig,
) -> Result<DroneState> {
    if !(dt > 0.0 && dt <= 0.2) {
        return Err(Error::contract(format!("dt must lie in (0, 0.2], got {dt}")));
    }
    if s.crashed {
        return Err(Error::contract("cannot step a crashed drone"));
    }
    let a = a.clamped(cfg);
    let yaw = wrap_angle(s.yaw + dt * a.yaw_rate);
    let (sin, cos) = yaw.sin_cos();
    let dx = dt * (cos * a.vx - sin * a.vy);
    let dy = dt * (sin * a.vx + cos * a.vy);
    let z = (s.position[2] + dt * a.vz).clamp(Z_MIN, Z_MAX);
    let position = [s.position[0] + dx, s.position[1] + dy, z];
    Ok(DroneState {
        position,
        yaw,
        odometer: s.odometer + dx.hypot(dy),
        crashed: collides(world, position, cfg),
    })
}
