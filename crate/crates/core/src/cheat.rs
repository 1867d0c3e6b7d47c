//! Perception transfer with everything downstream frozen.
//!
//! A fresh encoder is trained to map real-world observations onto the VAE
//! mean of a matched fake scene: the same pose looking at a single gate,
//! with no walls or clutter. The VAE and controller are only read; their
//! digests are taken before and after training and must agree.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::autodiff::{Adam, AdamConfig, ParamSet, Tape, Tensor};
use crate::container::{decode_dataset, encode_dataset, params_digest as digest_of};
use crate::error::{Error, Result};
use crate::nn::{forward, forward_tape, init_stack, shuffled, stack_sizes};
use crate::policy::ControllerParams;
use crate::rng::{derive_seed, stream};
use crate::vae::{encode_mu, VaeParams};
use crate::worldsim::{
    render_observation, sample_free_pose, spawn_real_world, virtual_gate, DroneState, Gate,
    Observation, Rect, SimConfig, WorldKind, WorldSpec,
};

pub use crate::container::params_digest;

/// Dense stack `cheat.*`: `2W → hidden → k`, linear output.
#[derive(Clone, Debug, PartialEq)]
pub struct CheatEncoderParams {
    params: ParamSet,
    width: usize,
    k: usize,
    layers: usize,
}

impl CheatEncoderParams {
    pub fn init(width: usize, hidden: &[usize], k: usize, seed: u64) -> Result<Self> {
        let mut sizes = vec![2 * width];
        sizes.extend_from_slice(hidden);
        sizes.push(k);
        let mut params = ParamSet::new();
        init_stack(&mut params, "cheat", &sizes, &mut stream(seed, "cheat-init", 0))?;
        Self::from_params(params)
    }

    pub fn from_params(params: ParamSet) -> Result<Self> {
        let sizes = stack_sizes(&params, "cheat")?;
        if sizes[0] % 2 != 0 {
            return Err(Error::dim(format!("cheat encoder input {} is odd", sizes[0])));
        }
        if params.len() != 2 * (sizes.len() - 1) {
            return Err(Error::contract("cheat encoder parameter set has extra tensors"));
        }
        Ok(CheatEncoderParams {
            width: sizes[0] / 2,
            k: *sizes.last().unwrap(),
            layers: sizes.len() - 1,
            params,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn into_params(self) -> ParamSet {
        self.params
    }
}

pub(crate) fn cheat_encode_input(p: &CheatEncoderParams, x: &[f64]) -> Vec<f64> {
    forward(&p.params, "cheat", p.layers, x, x.len() / (2 * p.width), None)
}

/// Predicted fake-world latent mean for a real observation.
pub fn cheat_encode(p: &CheatEncoderParams, obs: &Observation) -> Result<Vec<f64>> {
    if obs.width() != p.width {
        return Err(Error::dim(format!(
            "observation width {}, cheat encoder expects {}",
            obs.width(),
            p.width
        )));
    }
    Ok(cheat_encode_input(p, &obs.to_input()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairMode {
    /// Gates are laid into the real world and appear in its rendering.
    GatesVisible,
    /// The gate is the widest-gap virtual gate and is never rendered.
    VirtualGate,
}

impl std::str::FromStr for PairMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "gates_visible" => Ok(PairMode::GatesVisible),
            "virtual_gate" => Ok(PairMode::VirtualGate),
            other => Err(format!("unknown pair mode `{other}` (gates_visible|virtual_gate)")),
        }
    }
}

impl std::fmt::Display for PairMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PairMode::GatesVisible => "gates_visible",
            PairMode::VirtualGate => "virtual_gate",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairedSample {
    pub real_obs: Observation,
    /// Rendering of the matched single-gate fake scene.
    pub fake_obs: Observation,
    pub target_mu: Vec<f64>,
    pub pose: DroneState,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairConfig {
    pub n_poses: usize,
    pub poses_per_world: usize,
    pub density: f64,
    /// Extra clearance beyond the collision radius for sampled poses.
    pub clearance: f64,
    pub mode: PairMode,
}

impl Default for PairConfig {
    fn default() -> Self {
        PairConfig {
            n_poses: 2000,
            poses_per_world: 20,
            density: 0.4,
            clearance: 0.2,
            mode: PairMode::VirtualGate,
        }
    }
}

/// The fake scene a frozen VAE should see from `pose`: `gate` alone, with
/// the bounds pushed out of sensor range.
pub fn matched_fake_scene(pose: &DroneState, gate: &Gate, sim: &SimConfig) -> WorldSpec {
    let r = 2.0 * sim.d_max;
    let [x, y] = pose.planar();
    WorldSpec {
        kind: WorldKind::Fake,
        bounds: Rect::new(x - r, y - r, x + r, y + r),
        obstacles: Vec::new(),
        gates: vec![*gate],
        seed: 0,
    }
}

/// Nearest placed gate in front of `pose` and within sensor range.
fn visible_gate(world: &WorldSpec, pose: &DroneState, sim: &SimConfig) -> Option<Gate> {
    let p = pose.planar();
    world
        .gates
        .iter()
        .filter_map(|g| {
            let (dx, dy) = (g.center[0] - p[0], g.center[1] - p[1]);
            let d = dx.hypot(dy);
            let bearing = crate::worldsim::geometry::wrap_angle(dy.atan2(dx) - pose.yaw);
            (d < sim.d_max && bearing.abs() < 0.5 * sim.fov()).then_some((d, *g))
        })
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, g)| g)
}

/// Supervised pairs from random collision-free poses in seeded real
/// worlds. World `j` has seed `derive_seed(real_seed, "pair-world", j)`
/// and hosts `poses_per_world` consecutive poses.
pub fn build_pairs(
    real_seed: u64,
    vae: &VaeParams,
    cfg: &PairConfig,
    sim: &SimConfig,
) -> Result<Vec<PairedSample>> {
    if cfg.n_poses == 0 || cfg.poses_per_world == 0 {
        return Err(Error::contract("need at least one pose and one pose per world"));
    }
    if vae.width() != sim.width {
        return Err(Error::dim(format!(
            "VAE width {}, sensor width {}",
            vae.width(),
            sim.width
        )));
    }
    let with_gates = cfg.mode == PairMode::GatesVisible;
    let mut pairs = Vec::with_capacity(cfg.n_poses);
    let mut rejected = 0usize;
    let mut world_index = 0u64;
    while pairs.len() < cfg.n_poses {
        let world = spawn_real_world(
            derive_seed(real_seed, "pair-world", world_index),
            cfg.density,
            with_gates,
            sim,
        )?;
        let mut rng = stream(real_seed, "pair-poses", world_index);
        world_index += 1;
        let mut taken = 0;
        while taken < cfg.poses_per_world && pairs.len() < cfg.n_poses {
            let gate = sample_free_pose(&world, &mut rng, cfg.clearance, 1000, sim)
                .map(|pose| {
                    let g = match cfg.mode {
                        PairMode::VirtualGate => virtual_gate(&world, &pose, sim)?,
                        PairMode::GatesVisible => visible_gate(&world, &pose, sim),
                    };
                    Ok::<_, Error>(g.map(|g| (pose, g)))
                })
                .transpose()?
                .flatten();
            let Some((pose, gate)) = gate else {
                rejected += 1;
                if rejected > 10 * cfg.n_poses {
                    return Err(Error::Generation(format!(
                        "{rejected} poses rejected while building {} pairs",
                        cfg.n_poses
                    )));
                }
                continue;
            };
            let fake_obs = render_observation(&matched_fake_scene(&pose, &gate, sim), &pose, sim);
            let target_mu = encode_mu(vae, &fake_obs)?;
            pairs.push(PairedSample {
                real_obs: render_observation(&world, &pose, sim),
                fake_obs,
                target_mu,
                pose,
            });
            taken += 1;
        }
    }
    Ok(pairs)
}

/// Pairs in the dataset container. Records are `real.class`, `real.depth`,
/// `fake.class`, `fake.depth` (`[N, W]`), `target_mu` (`[N, k]`) and
/// `pose` (`[N, 4]`: x, y, z, yaw).
pub fn pairs_to_bytes(pairs: &[PairedSample], manifest_extra: Value) -> Result<Vec<u8>> {
    let first = pairs
        .first()
        .ok_or_else(|| Error::contract("cannot store an empty pair list"))?;
    let (n, w, k) = (pairs.len(), first.real_obs.width(), first.target_mu.len());
    if pairs
        .iter()
        .any(|p| p.real_obs.width() != w || p.fake_obs.width() != w || p.target_mu.len() != k)
    {
        return Err(Error::dim("pairs have inconsistent widths or latent sizes"));
    }
    let cat = |f: &dyn Fn(&PairedSample) -> Vec<f64>| pairs.iter().flat_map(f).collect::<Vec<_>>();
    let class = |o: &Observation| o.class.iter().map(|&c| c as f64).collect::<Vec<_>>();
    let records = vec![
        ("real.class".to_string(), Tensor::matrix(n, w, cat(&|p| class(&p.real_obs)))?),
        ("real.depth".to_string(), Tensor::matrix(n, w, cat(&|p| p.real_obs.depth.clone()))?),
        ("fake.class".to_string(), Tensor::matrix(n, w, cat(&|p| class(&p.fake_obs)))?),
        ("fake.depth".to_string(), Tensor::matrix(n, w, cat(&|p| p.fake_obs.depth.clone()))?),
        ("target_mu".to_string(), Tensor::matrix(n, k, cat(&|p| p.target_mu.clone()))?),
        (
            "pose".to_string(),
            Tensor::matrix(
                n,
                4,
                cat(&|p| {
                    let q = p.pose.position;
                    vec![q[0], q[1], q[2], p.pose.yaw]
                }),
            )?,
        ),
    ];
    let manifest = json!({
        "format": "cheatlab-pairs",
        "pairs": n,
        "width": w,
        "k": k,
        "config": manifest_extra,
    });
    Ok(encode_dataset(&manifest, &records))
}

pub fn pairs_from_bytes(bytes: &[u8]) -> Result<Vec<PairedSample>> {
    let (manifest, records) = decode_dataset(bytes)?;
    let field = |key: &str| {
        manifest
            .get(key)
            .and_then(Value::as_u64)
            .map(|v| v as usize)
            .ok_or_else(|| Error::format("pairs manifest", format!("missing `{key}`")))
    };
    if manifest.get("format").and_then(Value::as_str) != Some("cheatlab-pairs") {
        return Err(Error::format("pairs manifest", "not a pair file"));
    }
    let (n, w, k) = (field("pairs")?, field("width")?, field("k")?);
    let get = |name: &str, cols: usize| -> Result<&Tensor> {
        let t = records
            .iter()
            .find(|(r, _)| r == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Integrity(format!("pairs: record `{name}` missing")))?;
        if t.dims() != [n, cols] {
            return Err(Error::Integrity(format!(
                "pairs: record `{name}` has shape {:?}, manifest implies [{n}, {cols}]",
                t.dims()
            )));
        }
        Ok(t)
    };
    let obs = |class: &Tensor, depth: &Tensor, i: usize| -> Result<Observation> {
        let o = Observation {
            class: class.data()[i * w..(i + 1) * w].iter().map(|&c| c as u8).collect(),
            depth: depth.data()[i * w..(i + 1) * w].to_vec(),
        };
        if !o.satisfies_invariants() {
            return Err(Error::Integrity(format!("pairs: observation {i} is invalid")));
        }
        Ok(o)
    };
    let (rc, rd, fc, fd) = (get("real.class", w)?, get("real.depth", w)?, get("fake.class", w)?, get("fake.depth", w)?);
    let (mu, pose) = (get("target_mu", k)?, get("pose", 4)?);
    (0..n)
        .map(|i| {
            let q = &pose.data()[i * 4..(i + 1) * 4];
            Ok(PairedSample {
                real_obs: obs(rc, rd, i)?,
                fake_obs: obs(fc, fd, i)?,
                target_mu: mu.data()[i * k..(i + 1) * k].to_vec(),
                pose: DroneState::at(q[0], q[1], q[2], q[3]),
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheatConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for CheatConfig {
    fn default() -> Self {
        CheatConfig {
            epochs: 200,
            batch: 64,
            lr: 1e-3,
            hidden: vec![128, 64],
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrozenDigests {
    pub vae: String,
    pub controller: String,
}

impl FrozenDigests {
    pub fn of(vae: &VaeParams, controller: &ControllerParams) -> Self {
        FrozenDigests {
            vae: digest_of(vae.params()),
            controller: digest_of(controller.params()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainedCheat {
    pub encoder: CheatEncoderParams,
    /// Mean minibatch loss of each epoch.
    pub history: Vec<f64>,
    pub before: FrozenDigests,
    pub after: FrozenDigests,
}

/// Mean over pairs of `‖cheat_encode(real_obs) − target_mu‖²`.
pub fn cheat_loss(p: &CheatEncoderParams, pairs: &[PairedSample]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::contract("no pairs"));
    }
    let mut total = 0.0;
    for s in pairs {
        let mu = cheat_encode(p, &s.real_obs)?;
        total += mu.iter().zip(&s.target_mu).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    }
    Ok(total / pairs.len() as f64)
}

/// Minibatch Adam on the squared latent error. The frozen sets are only
/// digested, before and after.
pub fn train_cheat(
    pairs: &[PairedSample],
    frozen: (&VaeParams, &ControllerParams),
    cfg: &CheatConfig,
) -> Result<TrainedCheat> {
    let before = FrozenDigests::of(frozen.0, frozen.1);
    let first = pairs
        .first()
        .ok_or_else(|| Error::contract("cannot train the cheat encoder without pairs"))?;
    if cfg.batch == 0 {
        return Err(Error::contract("batch size must be at least 1"));
    }
    let (w, k) = (first.real_obs.width(), frozen.0.k());
    if pairs.iter().any(|p| p.real_obs.width() != w || p.target_mu.len() != k) {
        return Err(Error::dim("pairs disagree with the frozen VAE's latent size"));
    }
    let mut enc = CheatEncoderParams::init(w, &cfg.hidden, k, cfg.seed)?;
    let inputs: Vec<Vec<f64>> = pairs.iter().map(|p| p.real_obs.to_input()).collect();
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.lr));
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut t = 0u64;
    for epoch in 0..cfg.epochs as u64 {
        let order = shuffled(pairs.len(), &mut stream(cfg.seed, "cheat-shuffle", epoch));
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch) {
            let b = chunk.len();
            let x: Vec<f64> = chunk.iter().flat_map(|&i| inputs[i].iter().copied()).collect();
            let y: Vec<f64> = chunk.iter().flat_map(|&i| pairs[i].target_mu.iter().copied()).collect();
            let mut tape = Tape::new();
            let bound = enc.params.bind(&mut tape)?;
            let xv = tape.leaf(Tensor::matrix(b, 2 * w, x)?);
            let yv = tape.leaf(Tensor::matrix(b, k, y)?);
            let pred = forward_tape(&mut tape, &bound, "cheat", enc.layers, xv, None)?;
            // mse averages over b·k entries; scaling by k gives the per-pair squared norm.
            let mse = tape.mse(pred, yv)?;
            let loss = tape.scale(mse, k as f64)?;
            let value = tape.value(loss).item()?;
            if !value.is_finite() {
                return Err(Error::contract(format!(
                    "cheat loss became non-finite in epoch {}",
                    epoch + 1
                )));
            }
            total += value * b as f64;
            let grads = tape.backward(loss)?.into_named();
            t += 1;
            adam.step(&mut enc.params, &grads, t)?;
        }
        history.push(total / pairs.len() as f64);
    }
    let after = FrozenDigests::of(frozen.0, frozen.1);
    if after != before {
        return Err(Error::FrozenViolation(format!(
            "digests changed during cheat training: {before:?} -> {after:?}"
        )));
    }
    Ok(TrainedCheat {
        encoder: enc,
        history,
        before,
        after,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vae::vae_init;

    fn small_cfg() -> PairConfig {
        PairConfig {
            n_poses: 12,
            poses_per_world: 4,
            ..Default::default()
        }
    }

    #[test]
    fn zero_encoder_outputs_zero() {
        let mut p = CheatEncoderParams::init(6, &[5], 3, 0).unwrap();
        let n = p.params.scalar_count();
        p.params.load_flat(&vec![0.0; n]).unwrap();
        let o = Observation::empty(6);
        assert_eq!(cheat_encode(&p, &o).unwrap(), vec![0.0; 3]);
        assert!(cheat_encode(&p, &Observation::empty(5)).is_err());
    }

    #[test]
    fn pairs_are_reproducible_and_recomputable() {
        let sim = SimConfig::default();
        let vae = vae_init(4, &[16], sim.width, 1).unwrap();
        let a = build_pairs(3, &vae, &small_cfg(), &sim).unwrap();
        assert_eq!(a, build_pairs(3, &vae, &small_cfg(), &sim).unwrap());
        assert_eq!(a.len(), 12);
        for p in &a {
            assert_eq!(encode_mu(&vae, &p.fake_obs).unwrap(), p.target_mu);
            assert!(p.real_obs.class.iter().all(|&c| c != 1));
        }
        let bytes = pairs_to_bytes(&a, json!({})).unwrap();
        assert_eq!(pairs_from_bytes(&bytes).unwrap(), a);
    }

    #[test]
    fn gates_visible_mode_renders_gates() {
        let sim = SimConfig::default();
        let vae = vae_init(4, &[16], sim.width, 1).unwrap();
        let cfg = PairConfig {
            mode: PairMode::GatesVisible,
            density: 0.1,
            ..small_cfg()
        };
        let pairs = build_pairs(5, &vae, &cfg, &sim).unwrap();
        assert!(pairs.iter().any(|p| p.real_obs.class.contains(&1)));
    }

    #[test]
    fn empty_room_target_is_centered_gate() {
        let sim = SimConfig::default();
        let vae = vae_init(4, &[16], sim.width, 1).unwrap();
        let cfg = PairConfig {
            density: 0.0,
            n_poses: 6,
            poses_per_world: 6,
            clearance: sim.d_gate + 0.5,
            ..Default::default()
        };
        for p in build_pairs(9, &vae, &cfg, &sim).unwrap() {
            let [x, y] = p.pose.planar();
            let yaw = p.pose.yaw;
            let gate = Gate {
                center: [x + sim.d_gate * yaw.cos(), y + sim.d_gate * yaw.sin(), 1.5],
                yaw,
                half_width: sim.gate_half_width,
                frame_thickness: sim.gate_frame,
            };
            let expect = render_observation(&matched_fake_scene(&p.pose, &gate, &sim), &p.pose, &sim);
            // The scan bisector equals the heading up to rounding.
            assert_eq!(p.fake_obs.class, expect.class);
            let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-9);
            assert!(close(&p.fake_obs.depth, &expect.depth));
            assert!(close(&p.target_mu, &encode_mu(&vae, &expect).unwrap()));
        }
    }

    #[test]
    fn train_cheat_identity_and_frozen() {
        let sim = SimConfig::default();
        let vae = vae_init(4, &[16], sim.width, 1).unwrap();
        let ctrl = ControllerParams::init(4, 3, [4, 4], 0).unwrap();
        let pairs = build_pairs(3, &vae, &small_cfg(), &sim).unwrap();
        let cfg = CheatConfig {
            epochs: 0,
            hidden: vec![8],
            ..Default::default()
        };
        let r = train_cheat(&pairs, (&vae, &ctrl), &cfg).unwrap();
        assert_eq!(r.encoder, CheatEncoderParams::init(sim.width, &[8], 4, 0).unwrap());
        assert_eq!(r.before, r.after);
        assert!(train_cheat(&[], (&vae, &ctrl), &cfg).is_err());
        let r = train_cheat(&pairs, (&vae, &ctrl), &CheatConfig { epochs: 30, ..cfg }).unwrap();
        assert!(r.history.iter().all(|v| v.is_finite()));
        assert!(r.history.last() < r.history.first());
        assert_eq!(r.before, FrozenDigests::of(&vae, &ctrl));
    }
}
