use std::f64::consts::FRAC_PI_2;

use super::geometry::{ray_circle, ray_exit, ray_rect, wrap_angle};
use super::{DroneState, Gate, Observation, Rect, SimConfig, WorldKind, WorldSpec};
use crate::error::{Error, Result};

/// Altitude of every gate center.
pub const GATE_Z: f64 = 1.5;

/// Rays in the virtual-gate scan, spread over the forward half-plane.
const GAP_SCAN_RAYS: usize = 181;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum ObsClass {
    Free = 0,
    GateFrame = 1,
    Solid = 2,
}

/// First hit along a ray. `inflate` grows walls and obstacles by that
/// margin; gates are skipped unless `with_gates`.
fn cast(
    world: &WorldSpec,
    origin: [f64; 2],
    dir: [f64; 2],
    inflate: f64,
    with_gates: bool,
) -> Option<(f64, ObsClass)> {
    let b = &world.bounds;
    let inner = Rect::new(b.min_x + inflate, b.min_y + inflate, b.max_x - inflate, b.max_y - inflate);
    let wall = if inner.contains(origin) {
        ray_exit(origin, dir, &inner)
    } else {
        0.0
    };
    let mut best = (wall, ObsClass::Solid);
    for o in &world.obstacles {
        if let Some(t) = ray_rect(origin, dir, &o.inflate(inflate)) {
            if t < best.0 {
                best = (t, ObsClass::Solid);
            }
        }
    }
    if with_gates {
        for g in &world.gates {
            for post in g.posts() {
                if let Some(t) = ray_circle(origin, dir, post, g.post_radius() + inflate) {
                    if t < best.0 {
                        best = (t, ObsClass::GateFrame);
                    }
                }
            }
        }
    }
    best.0.is_finite().then_some(best)
}

/// Segmented scanline seen from `s`: one ray per column across the field of
/// view, first hit among walls, obstacles and gate posts. Gate apertures
/// are open.
pub fn render_observation(world: &WorldSpec, s: &DroneState, cfg: &SimConfig) -> Observation {
    let origin = s.planar();
    let mut obs = Observation::empty(cfg.width);
    for j in 0..cfg.width {
        let angle = s.yaw + cfg.column_angle(j);
        let dir = [angle.cos(), angle.sin()];
        if let Some((d, class)) = cast(world, origin, dir, 0.0, true) {
            let depth = 1.0 - d / cfg.d_max;
            if d < cfg.d_max && depth > 0.0 {
                obs.class[j] = class as u8;
                obs.depth[j] = depth.min(1.0);
            }
        }
    }
    obs
}

/// Places a gate in the widest free gap ahead of the drone.
///
/// The forward half-plane is scanned with rays against walls and obstacles
/// inflated by the collision radius. A ray is free when nothing lies within
/// `d_gate`. The widest run of free rays wins (ties go to the run closer to
/// the heading); the gate sits at `d_gate` on the run's bisector, facing
/// the drone. Returns `None` when no run is at least a body width across.
pub fn virtual_gate(world: &WorldSpec, s: &DroneState, cfg: &SimConfig) -> Result<Option<Gate>> {
    if world.kind != WorldKind::Real {
        return Err(Error::contract("virtual gates are only placed in real worlds"));
    }
    let origin = s.planar();
    let step = std::f64::consts::PI / (GAP_SCAN_RAYS - 1) as f64;
    let offsets: Vec<f64> = (0..GAP_SCAN_RAYS).map(|i| -FRAC_PI_2 + i as f64 * step).collect();
    let free: Vec<bool> = offsets
        .iter()
        .map(|off| {
            let a = s.yaw + off;
            match cast(world, origin, [a.cos(), a.sin()], cfg.collision_radius, false) {
                Some((d, _)) => d > cfg.d_gate,
                None => true,
            }
        })
        .collect();

    // (length, |bisector offset|, start)
    let mut best: Option<(usize, f64, usize)> = None;
    let mut i = 0;
    while i < free.len() {
        if !free[i] {
            i += 1;
            continue;
        }
        let start = i;
        while i < free.len() && free[i] {
            i += 1;
        }
        let len = i - start;
        let mid = 0.5 * (offsets[start] + offsets[i - 1]);
        let better = match best {
            None => true,
            Some((bl, bm, _)) => len > bl || (len == bl && mid.abs() < bm),
        };
        if better {
            best = Some((len, mid.abs(), start));
        }
    }

    let Some((len, _, start)) = best else {
        return Ok(None);
    };
    let chord = 2.0 * cfg.d_gate * (len as f64 * step / 2.0).sin();
    if chord < 2.0 * cfg.collision_radius {
        return Ok(None);
    }
    let heading = wrap_angle(s.yaw + 0.5 * (offsets[start] + offsets[start + len - 1]));
    Ok(Some(Gate {
        center: [
            origin[0] + cfg.d_gate * heading.cos(),
            origin[1] + cfg.d_gate * heading.sin(),
            GATE_Z,
        ],
        yaw: heading,
        half_width: cfg.gate_half_width,
        frame_thickness: cfg.gate_frame,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::worldsim::WorldKind;

    fn room(obstacles: Vec<Rect>) -> WorldSpec {
        WorldSpec {
            kind: WorldKind::Real,
            bounds: Rect::new(0.0, 0.0, 60.0, 60.0),
            obstacles,
            gates: vec![],
            seed: 0,
        }
    }

    #[test]
    fn open_space_renders_empty() {
        let cfg = SimConfig::default();
        let obs = render_observation(&room(vec![]), &DroneState::at(30.0, 30.0, 1.5, 0.0), &cfg);
        assert!(obs.class.iter().all(|&c| c == 0));
        assert!(obs.depth.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn wall_five_meters_ahead() {
        let cfg = SimConfig::default();
        let w = room(vec![Rect::new(35.0, 0.0, 36.0, 60.0)]);
        let obs = render_observation(&w, &DroneState::at(30.0, 30.0, 1.5, 0.0), &cfg);
        let c = cfg.width / 2;
        assert_eq!(obs.class[c], 2);
        assert!((obs.depth[c] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn gate_ahead_shows_posts_around_open_aperture() {
        let cfg = SimConfig::default();
        let mut w = room(vec![]);
        w.gates.push(Gate {
            center: [35.0, 30.0, GATE_Z],
            yaw: 0.0,
            half_width: 1.0,
            frame_thickness: 0.2,
        });
        let obs = render_observation(&w, &DroneState::at(30.0, 30.0, 1.5, 0.0), &cfg);
        // Analytic oracle: posts at (5, ±1) subtend bearings atan2(±1, 5)
        // with angular radius asin(0.1 / |(5, 1)|).
        let center = (1.0f64).atan2(5.0);
        let half = (0.1 / 26f64.sqrt()).asin();
        for j in 0..cfg.width {
            let a = cfg.column_angle(j);
            let on_post = (a.abs() - center).abs() < half;
            let expect = if on_post { 1 } else { 0 };
            assert_eq!(obs.class[j], expect, "column {j} at {a}");
        }
        let gate_cols: Vec<usize> = (0..cfg.width).filter(|&j| obs.class[j] == 1).collect();
        assert!(!gate_cols.is_empty());
        assert_eq!(obs.class[cfg.width / 2], 0);
    }

    #[test]
    fn virtual_gate_in_empty_room_is_straight_ahead() {
        let cfg = SimConfig::default();
        let s = DroneState::at(30.0, 30.0, 1.5, 0.4);
        let g = virtual_gate(&room(vec![]), &s, &cfg).unwrap().unwrap();
        assert!((g.yaw - 0.4).abs() < 1e-12);
        assert!((g.center[0] - (30.0 + cfg.d_gate * 0.4f64.cos())).abs() < 1e-9);
        assert!((g.center[1] - (30.0 + cfg.d_gate * 0.4f64.sin())).abs() < 1e-9);
    }

    #[test]
    fn virtual_gate_walled_in_is_none() {
        let cfg = SimConfig::default();
        let w = WorldSpec {
            bounds: Rect::new(0.0, 0.0, 2.0, 2.0),
            ..room(vec![])
        };
        let s = DroneState::at(1.0, 1.0, 1.5, 0.0);
        assert_eq!(virtual_gate(&w, &s, &cfg).unwrap(), None);
    }

    #[test]
    fn virtual_gate_rejects_fake_world() {
        let cfg = SimConfig::default();
        let mut w = room(vec![]);
        w.kind = WorldKind::Fake;
        assert!(virtual_gate(&w, &DroneState::at(1.0, 1.0, 1.5, 0.0), &cfg).is_err());
    }
}
