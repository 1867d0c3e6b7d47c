//! Planar world with an altitude band: procedurally spawned gate corridors
//! ("fake" worlds) and cluttered rooms ("real" worlds), point-mass drone
//! kinematics, collision checks and a segmented raycast scanline.
//!
//! Everything here is a pure function of its inputs. Randomness comes from
//! streams derived from the world seed (see [`crate::rng`]).
//!
//! Coordinates: x forward along the fake corridor, y to the left, yaw
//! counter-clockwise from +x. Obstacles are axis-aligned rectangles
//! extruded over all altitudes, so collisions are decided in the plane.

mod dynamics;
pub mod geometry;
mod sensor;
mod spawn;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use dynamics::{collides, step_dynamics};
pub use sensor::{render_observation, virtual_gate, ObsClass};
pub use spawn::{spawn_fake_world, spawn_real_world, start_state};
pub(crate) use spawn::sample_free_pose;

/// Geometry and vehicle limits shared by every world.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Scanline columns.
    pub width: usize,
    pub fov_deg: f64,
    /// Sensor range in meters.
    pub d_max: f64,
    pub dt: f64,
    pub v_max: f64,
    pub omega_max: f64,
    pub collision_radius: f64,
    /// Gates per fake world.
    pub n_gates: usize,
    /// Distance at which virtual gates are placed.
    pub d_gate: f64,
    pub gate_half_width: f64,
    pub gate_frame: f64,
    /// Largest lateral gate offset in fake corridors.
    pub offset_max: f64,
    pub gate_spacing_min: f64,
    pub gate_spacing_max: f64,
    pub corridor_half_width: f64,
    /// Side length of the square real-world room.
    pub room_size: f64,
    /// Obstacle count at clutter density 1.
    pub max_obstacles: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            width: 64,
            fov_deg: 90.0,
            d_max: 20.0,
            dt: 0.05,
            v_max: 2.0,
            omega_max: 1.5,
            collision_radius: 0.3,
            n_gates: 5,
            d_gate: 4.0,
            gate_half_width: 1.5,
            gate_frame: 0.2,
            offset_max: 1.5,
            gate_spacing_min: 5.0,
            gate_spacing_max: 7.0,
            corridor_half_width: 15.0,
            room_size: 24.0,
            max_obstacles: 30,
        }
    }
}

impl SimConfig {
    pub fn fov(&self) -> f64 {
        self.fov_deg.to_radians()
    }

    /// Bearing of column `j` relative to the heading. Column 0 is the
    /// leftmost ray and column `width / 2` looks straight ahead.
    pub fn column_angle(&self, j: usize) -> f64 {
        let fov = self.fov();
        fov / 2.0 - j as f64 * fov / self.width as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WorldKind {
    Fake,
    Real,
}

impl std::fmt::Display for WorldKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            WorldKind::Fake => "fake",
            WorldKind::Real => "real",
        })
    }
}

impl std::str::FromStr for WorldKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fake" => Ok(WorldKind::Fake),
            "real" => Ok(WorldKind::Real),
            other => Err(Error::contract(format!("unknown world kind `{other}`"))),
        }
    }
}

/// Axis-aligned rectangle in the x–y plane.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

/// Obstacles are rectangles extruded over all altitudes.
pub type Obstacle = Rect;

impl Rect {
    pub fn new(min_x: f64, min_y: f64, max_x: f64, max_y: f64) -> Self {
        Rect {
            min_x,
            min_y,
            max_x,
            max_y,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.min_x < self.max_x && self.min_y < self.max_y
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.min_x && p[0] <= self.max_x && p[1] >= self.min_y && p[1] <= self.max_y
    }

    pub fn inflate(&self, r: f64) -> Rect {
        Rect::new(self.min_x - r, self.min_y - r, self.max_x + r, self.max_y + r)
    }
}

/// A gate: two vertical posts around an aperture. `yaw` is the direction
/// of the aperture normal, i.e. the direction of travel through the gate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gate {
    pub center: [f64; 3],
    pub yaw: f64,
    /// Distance from the center to each post's axis.
    pub half_width: f64,
    /// Post diameter.
    pub frame_thickness: f64,
}

impl Gate {
    pub fn normal(&self) -> [f64; 2] {
        [self.yaw.cos(), self.yaw.sin()]
    }

    /// Unit vector along the aperture, pointing to the gate's left.
    pub fn lateral(&self) -> [f64; 2] {
        [-self.yaw.sin(), self.yaw.cos()]
    }

    pub fn post_radius(&self) -> f64 {
        self.frame_thickness / 2.0
    }

    pub fn posts(&self) -> [[f64; 2]; 2] {
        let l = self.lateral();
        let [cx, cy, _] = self.center;
        [
            [cx + self.half_width * l[0], cy + self.half_width * l[1]],
            [cx - self.half_width * l[0], cy - self.half_width * l[1]],
        ]
    }

    /// Signed distance of a point past the gate plane (negative before it).
    pub fn plane_distance(&self, p: [f64; 2]) -> f64 {
        let n = self.normal();
        (p[0] - self.center[0]) * n[0] + (p[1] - self.center[1]) * n[1]
    }

    /// Offset of a point along the aperture.
    pub fn lateral_offset(&self, p: [f64; 2]) -> f64 {
        let l = self.lateral();
        (p[0] - self.center[0]) * l[0] + (p[1] - self.center[1]) * l[1]
    }
}

/// World geometry. Walls are the edges of `bounds`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub kind: WorldKind,
    pub bounds: Rect,
    pub obstacles: Vec<Obstacle>,
    pub gates: Vec<Gate>,
    pub seed: u64,
}

impl WorldSpec {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("world specs always serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::format("world spec", e.to_string()))
    }

    /// Checks the structural invariants every spawned world must satisfy.
    pub fn validate(&self, cfg: &SimConfig) -> Result<()> {
        let fail = |m: String| Err(Error::Generation(format!("world {}: {m}", self.seed)));
        if !self.bounds.is_valid() {
            return fail("degenerate bounds".into());
        }
        for (i, o) in self.obstacles.iter().enumerate() {
            if !o.is_valid() {
                return fail(format!("obstacle {i} is degenerate"));
            }
            if !(self.bounds.contains([o.min_x, o.min_y]) && self.bounds.contains([o.max_x, o.max_y])) {
                return fail(format!("obstacle {i} leaves the bounds"));
            }
        }
        for (i, g) in self.gates.iter().enumerate() {
            if g.half_width <= cfg.collision_radius || g.frame_thickness <= 0.0 {
                return fail(format!("gate {i} is not passable"));
            }
            if !self.bounds.contains([g.center[0], g.center[1]]) {
                return fail(format!("gate {i} lies outside the bounds"));
            }
        }
        if self.kind == WorldKind::Fake {
            if self.gates.is_empty() {
                return fail("fake world without gates".into());
            }
            for (i, pair) in self.gates.windows(2).enumerate() {
                let (a, b) = (pair[0].center, pair[1].center);
                if b[0] <= a[0] {
                    return fail(format!("gate {} is not ahead of gate {i}", i + 1));
                }
                if (b[0] - a[0]).hypot(b[1] - a[1]) < 4.0 {
                    return fail(format!("gates {i} and {} closer than 4 m", i + 1));
                }
            }
        }
        let start = start_state(self);
        if collides(self, start.position, cfg) {
            return fail("start pose is in collision".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DroneState {
    pub position: [f64; 3],
    pub yaw: f64,
    /// Cumulative planar path length in meters.
    pub odometer: f64,
    pub crashed: bool,
}

impl DroneState {
    pub fn at(x: f64, y: f64, z: f64, yaw: f64) -> Self {
        DroneState {
            position: [x, y, z],
            yaw,
            odometer: 0.0,
            crashed: false,
        }
    }

    pub fn planar(&self) -> [f64; 2] {
        [self.position[0], self.position[1]]
    }
}

/// Body-frame velocity command plus yaw rate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub vx: f64,
    pub vy: f64,
    pub vz: f64,
    pub yaw_rate: f64,
}

impl Action {
    pub const ZERO: Action = Action {
        vx: 0.0,
        vy: 0.0,
        vz: 0.0,
        yaw_rate: 0.0,
    };

    pub fn new(vx: f64, vy: f64, vz: f64, yaw_rate: f64) -> Self {
        Action { vx, vy, vz, yaw_rate }
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Action::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.vx, self.vy, self.vz, self.yaw_rate]
    }

    pub fn clamped(self, cfg: &SimConfig) -> Action {
        let v = cfg.v_max;
        let w = cfg.omega_max;
        Action {
            vx: self.vx.clamp(-v, v),
            vy: self.vy.clamp(-v, v),
            vz: self.vz.clamp(-v, v),
            yaw_rate: self.yaw_rate.clamp(-w, w),
        }
    }

    pub fn within_bounds(&self, cfg: &SimConfig) -> bool {
        [self.vx, self.vy, self.vz].iter().all(|c| c.abs() <= cfg.v_max)
            && self.yaw_rate.abs() <= cfg.omega_max
    }
}

/// One segmented scanline: a class and a nearness value per column.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub class: Vec<u8>,
    /// `1 - d / d_max` of the first hit, 0 when nothing is within range.
    pub depth: Vec<f64>,
}

impl Observation {
    pub fn empty(width: usize) -> Self {
        Observation {
            class: vec![0; width],
            depth: vec![0.0; width],
        }
    }

    pub fn width(&self) -> usize {
        self.class.len()
    }

    /// Network input: the class channel scaled to {0, 0.5, 1} followed by
    /// the depth channel.
    pub fn to_input(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(2 * self.width());
        v.extend(self.class.iter().map(|&c| c as f64 / 2.0));
        v.extend_from_slice(&self.depth);
        v
    }

    pub fn satisfies_invariants(&self) -> bool {
        self.class.len() == self.depth.len()
            && self
                .class
                .iter()
                .zip(&self.depth)
                .all(|(&c, &d)| c <= 2 && (0.0..=1.0).contains(&d) && ((c == 0) == (d == 0.0)))
    }
}

/// Tracks gate passages along a trajectory, in gate order.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct GateProgress {
    /// Index of the next gate to be crossed.
    pub next: usize,
    /// Gates crossed inside their aperture.
    pub passed: usize,
}

impl GateProgress {
    /// Accounts for the move `from → to`. Crossing the next gate's plane
    /// advances to the following gate; it counts as passed only when the
    /// crossing point leaves the drone body clear of both posts.
    pub fn update(&mut self, world: &WorldSpec, from: [f64; 2], to: [f64; 2], cfg: &SimConfig) {
        while let Some(g) = world.gates.get(self.next) {
            let (d0, d1) = (g.plane_distance(from), g.plane_distance(to));
            if !(d0 < 0.0 && d1 >= 0.0) {
                break;
            }
            let s = d0 / (d0 - d1);
            let cross = [from[0] + s * (to[0] - from[0]), from[1] + s * (to[1] - from[1])];
            if g.lateral_offset(cross).abs() < g.half_width - g.post_radius() - cfg.collision_radius
            {
                self.passed += 1;
            }
            self.next += 1;
        }
    }

    pub fn finished(&self, world: &WorldSpec) -> bool {
        !world.gates.is_empty() && self.next >= world.gates.len()
    }
}
