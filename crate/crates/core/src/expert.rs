//! Scripted pure-pursuit pilot and the trajectory datasets it produces.
//!
//! In fake worlds the expert chases the center of the next gate whose
//! plane it has not yet crossed. In real worlds it chases the virtual gate
//! placed in the widest free gap ahead, and spins in place when there is
//! none.

use std::path::Path;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::autodiff::Tensor;
use crate::container::{decode_dataset, encode_dataset, write_atomic};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream};
use crate::worldsim::geometry::wrap_angle;
use crate::worldsim::{
    render_observation, spawn_fake_world, spawn_real_world, start_state, step_dynamics,
    virtual_gate, Action, DroneState, GateProgress, Observation, SimConfig, WorldKind, WorldSpec,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpertConfig {
    /// Yaw-rate gain on the bearing error.
    pub k_omega: f64,
    /// Cruise speed.
    pub v_nom: f64,
    /// Standard deviation of Gaussian noise added to the executed command
    /// while recording (the stored label stays noise-free).
    pub action_noise: f64,
    /// Clutter density of real worlds used for real-world datasets.
    pub real_density: f64,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        ExpertConfig {
            k_omega: 2.0,
            v_nom: 1.5,
            action_noise: 0.0,
            real_density: 0.4,
        }
    }
}

/// Steering law shared by both world kinds.
pub fn pursue(s: &DroneState, target: [f64; 2], cfg: &ExpertConfig, sim: &SimConfig) -> Action {
    let bearing = (target[1] - s.position[1]).atan2(target[0] - s.position[0]);
    let err = wrap_angle(bearing - s.yaw);
    Action::new(cfg.v_nom * err.cos().max(0.0), 0.0, 0.0, cfg.k_omega * err).clamped(sim)
}

/// Index of the first gate whose plane the drone has not crossed.
pub fn next_gate(world: &WorldSpec, s: &DroneState) -> Option<usize> {
    let p = s.planar();
    world.gates.iter().position(|g| g.plane_distance(p) < 0.0)
}

pub fn expert_action(
    world: &WorldSpec,
    s: &DroneState,
    cfg: &ExpertConfig,
    sim: &SimConfig,
) -> Result<Action> {
    if s.crashed {
        return Err(Error::contract("the expert cannot fly a crashed drone"));
    }
    match world.kind {
        WorldKind::Fake => Ok(match next_gate(world, s) {
            Some(i) => {
                let c = world.gates[i].center;
                pursue(s, [c[0], c[1]], cfg, sim)
            }
            None => Action::ZERO,
        }),
        WorldKind::Real => Ok(match virtual_gate(world, s, sim)? {
            Some(g) => pursue(s, [g.center[0], g.center[1]], cfg, sim),
            None => Action::new(0.0, 0.0, 0.0, sim.omega_max),
        }),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryStep {
    pub observation: Observation,
    pub expert_action: Action,
    pub state: DroneState,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub world_seed: u64,
    pub steps: Vec<TrajectoryStep>,
    pub crashed: bool,
    pub gates_passed: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub episodes: Vec<Episode>,
    pub world_kind: WorldKind,
    pub generator_seed: u64,
    /// Free-form echo of the generating configuration.
    pub config: Value,
}

impl Dataset {
    pub fn total_steps(&self) -> usize {
        self.episodes.iter().map(|e| e.steps.len()).sum()
    }

    pub fn crashed_episodes(&self) -> usize {
        self.episodes.iter().filter(|e| e.crashed).count()
    }

    pub fn observations(&self) -> impl Iterator<Item = &Observation> {
        self.episodes
            .iter()
            .flat_map(|e| e.steps.iter().map(|s| &s.observation))
    }

    pub fn width(&self) -> usize {
        self.observations().next().map_or(0, Observation::width)
    }

    /// Keeps the first `n` steps in episode order; episodes left empty are
    /// dropped. Cut episodes keep their recorded crash and gate counts.
    pub fn truncated(mut self, n: usize) -> Self {
        let mut left = n;
        self.episodes.retain_mut(|e| {
            e.steps.truncate(left);
            left -= e.steps.len();
            !e.steps.is_empty()
        });
        self
    }

    pub fn manifest(&self) -> Value {
        json!({
            "format": "cheatlab-dataset",
            "version": crate::container::FORMAT_VERSION,
            "world_kind": self.world_kind.to_string(),
            "generator_seed": self.generator_seed,
            "episodes": self.episodes.len(),
            "steps_per_episode": self.episodes.iter().map(|e| e.steps.len()).collect::<Vec<_>>(),
            "world_seeds": self.episodes.iter().map(|e| e.world_seed).collect::<Vec<_>>(),
            "crashed": self.episodes.iter().map(|e| e.crashed).collect::<Vec<_>>(),
            "gates_passed": self.episodes.iter().map(|e| e.gates_passed).collect::<Vec<_>>(),
            "total_steps": self.total_steps(),
            "crashed_episodes": self.crashed_episodes(),
            "width": self.width(),
            "config": self.config,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let w = self.width();
        let mut records = Vec::with_capacity(4 * self.episodes.len());
        for (i, ep) in self.episodes.iter().enumerate() {
            let t = ep.steps.len();
            let class = ep
                .steps
                .iter()
                .flat_map(|s| s.observation.class.iter().map(|&c| c as f64))
                .collect();
            let depth = ep
                .steps
                .iter()
                .flat_map(|s| s.observation.depth.iter().copied())
                .collect();
            let action = ep
                .steps
                .iter()
                .flat_map(|s| s.expert_action.to_array())
                .collect();
            let state = ep
                .steps
                .iter()
                .flat_map(|s| {
                    let p = s.state.position;
                    [p[0], p[1], p[2], s.state.yaw, s.state.odometer, s.state.crashed as u8 as f64]
                })
                .collect();
            let m = |c, d| Tensor::matrix(t, c, d).expect("episode tensors are rectangular");
            records.push((format!("episode.{i}.class"), m(w, class)));
            records.push((format!("episode.{i}.depth"), m(w, depth)));
            records.push((format!("episode.{i}.action"), m(4, action)));
            records.push((format!("episode.{i}.state"), m(6, state)));
        }
        encode_dataset(&self.manifest(), &records)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (manifest, records) = decode_dataset(bytes)?;
        let bad = |m: &str| Error::format("dataset manifest", m.to_string());
        let get_u64 = |k: &str| manifest.get(k).and_then(Value::as_u64).ok_or_else(|| bad(k));
        let world_kind: WorldKind = manifest
            .get("world_kind")
            .and_then(Value::as_str)
            .ok_or_else(|| bad("world_kind"))?
            .parse()
            .map_err(|_| bad("world_kind"))?;
        let generator_seed = get_u64("generator_seed")?;
        let n_episodes = get_u64("episodes")? as usize;
        let width = get_u64("width")? as usize;
        let arr = |k: &str| -> Result<Vec<Value>> {
            manifest
                .get(k)
                .and_then(Value::as_array)
                .cloned()
                .ok_or_else(|| bad(k))
        };
        let steps = arr("steps_per_episode")?;
        let seeds = arr("world_seeds")?;
        let crashed = arr("crashed")?;
        let gates = arr("gates_passed")?;
        let integrity = |m: String| Error::Integrity(format!("dataset: {m}"));
        if [steps.len(), seeds.len(), crashed.len(), gates.len()]
            .iter()
            .any(|&l| l != n_episodes)
            || records.len() != 4 * n_episodes
        {
            return Err(integrity(format!(
                "manifest declares {n_episodes} episodes but the file holds {} records",
                records.len()
            )));
        }

        let mut episodes = Vec::with_capacity(n_episodes);
        for i in 0..n_episodes {
            let t = steps[i].as_u64().ok_or_else(|| bad("steps_per_episode"))? as usize;
            if t == 0 {
                return Err(integrity(format!("episode {i} is empty")));
            }
            let rec = |j: usize, suffix: &str, cols: usize| -> Result<&Tensor> {
                let (name, tensor) = &records[4 * i + j];
                if name != &format!("episode.{i}.{suffix}") {
                    return Err(Error::format("dataset records", format!("unexpected record `{name}`")));
                }
                if tensor.dims() != [t, cols] {
                    return Err(integrity(format!(
                        "record `{name}` has shape {:?}, manifest implies [{t}, {cols}]",
                        tensor.dims()
                    )));
                }
                Ok(tensor)
            };
            let (class, depth) = (rec(0, "class", width)?, rec(1, "depth", width)?);
            let (action, state) = (rec(2, "action", 4)?, rec(3, "state", 6)?);
            let steps_vec = (0..t)
                .map(|k| {
                    let cls = &class.data()[k * width..(k + 1) * width];
                    let st = &state.data()[k * 6..(k + 1) * 6];
                    let a = &action.data()[k * 4..(k + 1) * 4];
                    TrajectoryStep {
                        observation: Observation {
                            class: cls.iter().map(|&c| c as u8).collect(),
                            depth: depth.data()[k * width..(k + 1) * width].to_vec(),
                        },
                        expert_action: Action::new(a[0], a[1], a[2], a[3]),
                        state: DroneState {
                            position: [st[0], st[1], st[2]],
                            yaw: st[3],
                            odometer: st[4],
                            crashed: st[5] != 0.0,
                        },
                    }
                })
                .collect();
            episodes.push(Episode {
                world_seed: seeds[i].as_u64().ok_or_else(|| bad("world_seeds"))?,
                steps: steps_vec,
                crashed: crashed[i].as_bool().ok_or_else(|| bad("crashed"))?,
                gates_passed: gates[i].as_u64().ok_or_else(|| bad("gates_passed"))? as usize,
            });
        }
        let ds = Dataset {
            episodes,
            world_kind,
            generator_seed,
            config: manifest.get("config").cloned().unwrap_or(Value::Null),
        };
        if get_u64("total_steps")? as usize != ds.total_steps()
            || get_u64("crashed_episodes")? as usize != ds.crashed_episodes()
        {
            return Err(integrity("manifest totals disagree with the episodes".into()));
        }
        Ok(ds)
    }
}

pub fn write_dataset(d: &Dataset, path: &Path) -> Result<()> {
    write_atomic(path, &d.to_bytes())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Dataset::from_bytes(&bytes)
}

/// Flies the expert once from the world's start pose.
///
/// Stops at a crash, after `max_steps`, or (fake worlds) once every gate
/// has been crossed.
pub fn fly_expert(
    world: &WorldSpec,
    max_steps: usize,
    noise_seed: u64,
    cfg: &ExpertConfig,
    sim: &SimConfig,
) -> Result<Episode> {
    let mut s = start_state(world);
    let mut progress = GateProgress::default();
    let mut steps = Vec::new();
    let mut rng = stream(noise_seed, "expert-noise", 0);
    let noise = Normal::new(0.0, cfg.action_noise.max(0.0)).map_err(|e| Error::contract(e.to_string()))?;
    for _ in 0..max_steps {
        if world.kind == WorldKind::Fake && progress.finished(world) {
            break;
        }
        let observation = render_observation(world, &s, sim);
        let a = expert_action(world, &s, cfg, sim)?;
        let executed = if cfg.action_noise > 0.0 {
            let mut v = a.to_array();
            v[0] += noise.sample(&mut rng);
            v[3] += noise.sample(&mut rng);
            Action::from_array(v)
        } else {
            a
        };
        steps.push(TrajectoryStep {
            observation,
            expert_action: a,
            state: s,
        });
        let next = step_dynamics(world, &s, executed, sim.dt, sim)?;
        progress.update(world, s.planar(), next.planar(), sim);
        s = next;
        if s.crashed {
            break;
        }
    }
    Ok(Episode {
        world_seed: world.seed,
        steps,
        crashed: s.crashed,
        gates_passed: progress.passed,
    })
}

/// Expert rollouts in freshly spawned worlds, one world per episode.
///
/// Crashed fake-world episodes are discarded and replaced by a new world;
/// more than `10 × n_episodes` rejections is a generation error.
pub fn collect_trajectories(
    kind: WorldKind,
    n_episodes: usize,
    max_steps: usize,
    seed: u64,
    cfg: &ExpertConfig,
    sim: &SimConfig,
) -> Result<Dataset> {
    if n_episodes == 0 || max_steps == 0 {
        return Err(Error::contract("need at least one episode of at least one step"));
    }
    let mut episodes = Vec::with_capacity(n_episodes);
    let mut attempt = 0u64;
    let mut rejected = 0usize;
    while episodes.len() < n_episodes {
        let world_seed = derive_seed(seed, "episode-world", attempt);
        let world = match kind {
            WorldKind::Fake => spawn_fake_world(world_seed, sim.n_gates, sim)?,
            WorldKind::Real => spawn_real_world(world_seed, cfg.real_density, false, sim)?,
        };
        let ep = fly_expert(&world, max_steps, world_seed, cfg, sim)?;
        attempt += 1;
        if ep.steps.is_empty() || (kind == WorldKind::Fake && ep.crashed) {
            rejected += 1;
            if rejected > 10 * n_episodes {
                return Err(Error::Generation(format!(
                    "{rejected} {kind}-world episodes rejected while collecting {n_episodes}"
                )));
            }
            continue;
        }
        episodes.push(ep);
    }
    Ok(Dataset {
        episodes,
        world_kind: kind,
        generator_seed: seed,
        config: json!({
            "n_episodes": n_episodes,
            "max_steps": max_steps,
            "expert": cfg,
            "sim": sim,
        }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::worldsim::{Gate, Rect};

    fn one_gate(center: [f64; 3]) -> WorldSpec {
        WorldSpec {
            kind: WorldKind::Fake,
            bounds: Rect::new(0.0, -15.0, 40.0, 15.0),
            obstacles: vec![],
            gates: vec![Gate {
                center,
                yaw: 0.0,
                half_width: 1.0,
                frame_thickness: 0.2,
            }],
            seed: 0,
        }
    }

    #[test]
    fn gate_dead_ahead_goes_straight_at_cruise() {
        let (e, sim) = (ExpertConfig::default(), SimConfig::default());
        let a = expert_action(&one_gate([10.0, 0.0, 1.5]), &DroneState::at(2.0, 0.0, 1.5, 0.0), &e, &sim)
            .unwrap();
        assert_eq!(a.yaw_rate, 0.0);
        assert_eq!(a.vx, e.v_nom);
    }

    #[test]
    fn gate_to_the_left_turns_left() {
        let (e, sim) = (ExpertConfig::default(), SimConfig::default());
        let y = 8.0 * 30f64.to_radians().tan();
        let a = expert_action(&one_gate([10.0, y, 1.5]), &DroneState::at(2.0, 0.0, 1.5, 0.0), &e, &sim)
            .unwrap();
        assert!(a.yaw_rate > 0.0);
        assert!((a.yaw_rate - 2.0 * 30f64.to_radians()).abs() < 1e-12);
    }

    #[test]
    fn crashed_state_is_refused() {
        let (e, sim) = (ExpertConfig::default(), SimConfig::default());
        let mut s = DroneState::at(2.0, 0.0, 1.5, 0.0);
        s.crashed = true;
        assert!(expert_action(&one_gate([10.0, 0.0, 1.5]), &s, &e, &sim).is_err());
    }

    #[test]
    fn degenerate_collection_is_rejected() {
        let (e, sim) = (ExpertConfig::default(), SimConfig::default());
        assert!(collect_trajectories(WorldKind::Fake, 1, 0, 0, &e, &sim).is_err());
        assert!(collect_trajectories(WorldKind::Fake, 0, 10, 0, &e, &sim).is_err());
    }

    #[test]
    fn dataset_roundtrip_and_corruption() {
        let (e, sim) = (ExpertConfig::default(), SimConfig::default());
        let d = collect_trajectories(WorldKind::Fake, 2, 30, 11, &e, &sim).unwrap();
        let bytes = d.to_bytes();
        assert_eq!(Dataset::from_bytes(&bytes).unwrap(), d);
        assert_eq!(collect_trajectories(WorldKind::Fake, 2, 30, 11, &e, &sim).unwrap().to_bytes(), bytes);

        for cut in [3usize, 10, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(Dataset::from_bytes(&bytes[..cut]), Err(Error::Format { .. })));
        }

        let needle = b"\"episodes\":2";
        let at = bytes.windows(needle.len()).position(|w| w == needle).unwrap() + needle.len() - 1;
        let mut bad = bytes.clone();
        bad[at] = b'3';
        assert!(matches!(Dataset::from_bytes(&bad), Err(Error::Integrity(_))));
    }

    #[test]
    fn truncation_keeps_a_prefix() {
        let (e, sim) = (ExpertConfig::default(), SimConfig::default());
        let d = collect_trajectories(WorldKind::Fake, 3, 20, 5, &e, &sim).unwrap();
        let t = d.clone().truncated(25);
        assert_eq!(t.total_steps(), 25);
        assert_eq!(t.episodes.len(), 2);
        assert_eq!(t.episodes[1].steps[..], d.episodes[1].steps[..5]);
        assert_eq!(d.clone().truncated(1000), d);
    }
}
