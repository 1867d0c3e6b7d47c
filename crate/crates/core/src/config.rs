//! Flat, line-oriented run configuration.
//!
//! Every tunable has exactly one `section.name` key. A config file is
//! `key = value` lines with `#` comments; values are layered as
//! defaults, then the file, then `--set` overrides, and the result is
//! validated before any stage runs.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};

use serde_json::Value;

use crate::cheat::{CheatConfig, PairConfig, PairMode};
use crate::error::{Error, Result};
use crate::evalviz::{BaselineConfig, EvalConfig};
use crate::expert::ExpertConfig;
use crate::policy::{EvolutionConfig, FitnessKind, RewardConfig};
use crate::vae::VaeConfig;
use crate::worldsim::SimConfig;

/// Expert dataset generation settings.
#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub episodes: usize,
    pub max_steps: usize,
    pub action_noise: f64,
    /// Cap on stored steps; 0 keeps everything.
    pub max_observations: usize,
    /// Clutter density (real worlds only).
    pub density: f64,
}

/// Controller architecture and the held-out check run after evolution.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyConfig {
    pub h_dim: usize,
    pub mlp: [usize; 2],
    pub heldout_worlds: usize,
    pub heldout_max_steps: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VizConfig {
    /// Which evaluation seed to fly for the strip.
    pub episode: usize,
    pub max_steps: usize,
    pub stride: usize,
    pub band_height: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub sim: SimConfig,
    pub expert: ExpertConfig,
    pub fake_data: DataConfig,
    pub vae: VaeConfig,
    pub expert_data: DataConfig,
    pub policy: PolicyConfig,
    pub evo: EvolutionConfig,
    pub reward: RewardConfig,
    pub reward_worlds: usize,
    pub pairs: PairConfig,
    pub cheat: CheatConfig,
    pub real_data: DataConfig,
    pub baseline: BaselineConfig,
    pub eval: EvalConfig,
    pub eval_seeds: usize,
    pub viz: VizConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
            sim: SimConfig::default(),
            expert: ExpertConfig::default(),
            fake_data: DataConfig {
                episodes: 8,
                max_steps: 250,
                action_noise: 0.3,
                max_observations: 2000,
                density: 0.0,
            },
            vae: VaeConfig::default(),
            expert_data: DataConfig {
                episodes: 10,
                max_steps: 600,
                action_noise: 0.3,
                max_observations: 0,
                density: 0.0,
            },
            policy: PolicyConfig {
                h_dim: 16,
                mlp: [32, 16],
                heldout_worlds: 20,
                heldout_max_steps: 2000,
            },
            evo: EvolutionConfig::default(),
            reward: RewardConfig::default(),
            reward_worlds: 4,
            pairs: PairConfig::default(),
            cheat: CheatConfig::default(),
            real_data: DataConfig {
                episodes: 10,
                max_steps: 200,
                action_noise: 0.3,
                max_observations: 0,
                density: 0.4,
            },
            baseline: BaselineConfig::default(),
            eval: EvalConfig::default(),
            eval_seeds: 50,
            viz: VizConfig {
                episode: 0,
                max_steps: 400,
                stride: 20,
                band_height: 8,
            },
        }
    }
}

/// A value that can live in the flat config.
trait ConfigValue: Sized {
    fn parse_value(s: &str) -> Result<Self, String>;
    fn render(&self) -> String;
}

macro_rules! via_from_str {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn parse_value(s: &str) -> Result<Self, String> {
                s.parse().map_err(|e| format!("cannot parse `{s}`: {e}"))
            }
            fn render(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

via_from_str!(usize, u64, PairMode, FitnessKind);

impl ConfigValue for f64 {
    fn parse_value(s: &str) -> Result<Self, String> {
        let v: f64 = s.parse().map_err(|e| format!("cannot parse `{s}`: {e}"))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(format!("`{s}` is not a finite number"))
        }
    }
    fn render(&self) -> String {
        format!("{self:?}")
    }
}

impl ConfigValue for PathBuf {
    fn parse_value(s: &str) -> Result<Self, String> {
        if s.is_empty() {
            Err("path must not be empty".into())
        } else {
            Ok(PathBuf::from(s))
        }
    }
    fn render(&self) -> String {
        self.display().to_string()
    }
}

fn parse_list(s: &str) -> Result<Vec<usize>, String> {
    s.split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("cannot parse `{p}`: {e}")))
        .collect()
}

fn render_list(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

impl ConfigValue for Vec<usize> {
    fn parse_value(s: &str) -> Result<Self, String> {
        parse_list(s)
    }
    fn render(&self) -> String {
        render_list(self)
    }
}

impl ConfigValue for [usize; 2] {
    fn parse_value(s: &str) -> Result<Self, String> {
        let v = parse_list(s)?;
        <[usize; 2]>::try_from(v).map_err(|v| format!("expected 2 sizes, got {}", v.len()))
    }
    fn render(&self) -> String {
        render_list(self)
    }
}

type Check<T> = fn(&T) -> Result<(), String>;

fn any<T>(_: &T) -> Result<(), String> {
    Ok(())
}

fn positive<T: PartialOrd + Default + Display>(v: &T) -> Result<(), String> {
    if *v > T::default() {
        Ok(())
    } else {
        Err(format!("{v} must be > 0"))
    }
}

fn non_negative(v: &f64) -> Result<(), String> {
    if *v >= 0.0 {
        Ok(())
    } else {
        Err(format!("{v} must be >= 0"))
    }
}

fn unit(v: &f64) -> Result<(), String> {
    if (0.0..=1.0).contains(v) {
        Ok(())
    } else {
        Err(format!("{v} must lie in [0, 1]"))
    }
}

fn sizes(v: &Vec<usize>) -> Result<(), String> {
    if v.is_empty() || v.contains(&0) {
        Err("need at least one size and every size must be > 0".into())
    } else {
        Ok(())
    }
}

fn pair_sizes(v: &[usize; 2]) -> Result<(), String> {
    if v.contains(&0) {
        Err("sizes must be > 0".into())
    } else {
        Ok(())
    }
}

fn fov(v: &f64) -> Result<(), String> {
    if *v > 0.0 && *v < 180.0 {
        Ok(())
    } else {
        Err(format!("{v} must lie in (0, 180)"))
    }
}

fn width(v: &usize) -> Result<(), String> {
    if (2..=4096).contains(v) {
        Ok(())
    } else {
        Err(format!("{v} must lie in [2, 4096]"))
    }
}

struct Key {
    name: &'static str,
    help: &'static str,
    get: fn(&RunConfig) -> String,
    set: fn(&mut RunConfig, &str) -> Result<(), String>,
}

macro_rules! keys {
    ($($name:literal => $($field:ident).+ : $t:ty, $check:expr, $help:literal;)*) => {
        const KEYS: &[Key] = &[$(
            Key {
                name: $name,
                help: $help,
                get: |c| ConfigValue::render(&c.$($field).+),
                set: |c, s| {
                    let v = <$t as ConfigValue>::parse_value(s)?;
                    let check: Check<$t> = $check;
                    check(&v)?;
                    c.$($field).+ = v;
                    Ok(())
                },
            },
        )*];
    };
}

keys! {
    "seed" => seed: u64, any, "global seed; every stage derives its randomness from it";
    "out_dir" => out_dir: PathBuf, any, "directory holding all artifacts";

    "sim.width" => sim.width: usize, width, "scanline columns";
    "sim.fov_deg" => sim.fov_deg: f64, fov, "horizontal field of view in degrees";
    "sim.d_max" => sim.d_max: f64, positive, "sensor range in meters";
    "sim.dt" => sim.dt: f64, positive, "integration step in seconds";
    "sim.v_max" => sim.v_max: f64, positive, "speed limit per axis in m/s";
    "sim.omega_max" => sim.omega_max: f64, positive, "yaw-rate limit in rad/s";
    "sim.collision_radius" => sim.collision_radius: f64, positive, "drone radius in meters";
    "sim.n_gates" => sim.n_gates: usize, positive, "gates per fake world";
    "sim.d_gate" => sim.d_gate: f64, positive, "virtual gate distance in meters";
    "sim.gate_half_width" => sim.gate_half_width: f64, positive, "gate opening half-width in meters";
    "sim.gate_frame" => sim.gate_frame: f64, positive, "gate frame thickness in meters";
    "sim.offset_max" => sim.offset_max: f64, non_negative, "largest lateral gate offset in meters";
    "sim.gate_spacing_min" => sim.gate_spacing_min: f64, positive, "smallest gate spacing in meters";
    "sim.gate_spacing_max" => sim.gate_spacing_max: f64, positive, "largest gate spacing in meters";
    "sim.corridor_half_width" => sim.corridor_half_width: f64, positive, "fake corridor half-width in meters";
    "sim.room_size" => sim.room_size: f64, positive, "real room side length in meters";
    "sim.max_obstacles" => sim.max_obstacles: usize, any, "obstacle count at clutter density 1";

    "expert.k_omega" => expert.k_omega: f64, positive, "expert yaw gain";
    "expert.v_nom" => expert.v_nom: f64, positive, "expert cruise speed in m/s";

    "fake_data.episodes" => fake_data.episodes: usize, positive, "fake episodes flown for VAE data";
    "fake_data.max_steps" => fake_data.max_steps: usize, positive, "step cap per fake episode";
    "fake_data.action_noise" => fake_data.action_noise: f64, non_negative, "executed-action noise std";
    "fake_data.observations" => fake_data.max_observations: usize, any, "observations kept (0 keeps all)";

    "vae.epochs" => vae.epochs: usize, positive, "VAE training epochs";
    "vae.batch" => vae.batch: usize, positive, "VAE minibatch size";
    "vae.lr" => vae.lr: f64, positive, "VAE Adam learning rate";
    "vae.beta" => vae.beta: f64, non_negative, "KL weight in the ELBO";
    "vae.k" => vae.k: usize, positive, "latent dimension";
    "vae.hidden" => vae.hidden: Vec<usize>, sizes, "encoder hidden sizes, mirrored by the decoder";

    "expert_data.episodes" => expert_data.episodes: usize, positive, "fake expert episodes for imitation";
    "expert_data.max_steps" => expert_data.max_steps: usize, positive, "step cap per expert episode";
    "expert_data.action_noise" => expert_data.action_noise: f64, non_negative, "executed-action noise std";

    "policy.h_dim" => policy.h_dim: usize, positive, "LSTM hidden size";
    "policy.mlp" => policy.mlp: [usize; 2], pair_sizes, "controller MLP hidden sizes";
    "policy.heldout_worlds" => policy.heldout_worlds: usize, any, "held-out fake worlds flown after training";
    "policy.heldout_max_steps" => policy.heldout_max_steps: usize, positive, "step cap per held-out flight";

    "evo.population" => evo.population: usize, positive, "genomes per generation";
    "evo.elites" => evo.elites: usize, positive, "genomes kept unchanged";
    "evo.mutation_sigma" => evo.mutation_sigma: f64, positive, "Gaussian mutation std";
    "evo.init_sigma" => evo.init_sigma: f64, non_negative, "initial population std";
    "evo.generations" => evo.generations: usize, positive, "generations";
    "evo.fitness" => evo.fitness_kind: FitnessKind, any, "imitation or reward";

    "reward.max_steps" => reward.max_steps: usize, positive, "step cap per reward episode";
    "reward.gate_bonus" => reward.gate_bonus: f64, non_negative, "reward per gate passed";
    "reward.worlds" => reward_worlds: usize, positive, "fake worlds per reward evaluation";

    "pairs.n_poses" => pairs.n_poses: usize, positive, "paired samples";
    "pairs.poses_per_world" => pairs.poses_per_world: usize, positive, "poses sampled per real world";
    "pairs.density" => pairs.density: f64, unit, "real-world clutter density";
    "pairs.clearance" => pairs.clearance: f64, non_negative, "extra pose clearance in meters";
    "pairs.mode" => pairs.mode: PairMode, any, "virtual_gate or gates_visible";

    "cheat.epochs" => cheat.epochs: usize, positive, "cheat encoder epochs";
    "cheat.batch" => cheat.batch: usize, positive, "cheat encoder minibatch size";
    "cheat.lr" => cheat.lr: f64, positive, "cheat encoder learning rate";
    "cheat.hidden" => cheat.hidden: Vec<usize>, sizes, "cheat encoder hidden sizes";

    "real_data.episodes" => real_data.episodes: usize, positive, "real expert episodes for the baseline";
    "real_data.max_steps" => real_data.max_steps: usize, positive, "step cap per real episode";
    "real_data.action_noise" => real_data.action_noise: f64, non_negative, "executed-action noise std";
    "real_data.density" => real_data.density: f64, unit, "real-world clutter density";

    "baseline.epochs" => baseline.epochs: usize, positive, "baseline epochs";
    "baseline.batch" => baseline.batch: usize, positive, "baseline minibatch size";
    "baseline.lr" => baseline.lr: f64, positive, "baseline learning rate";
    "baseline.hidden" => baseline.hidden: Vec<usize>, sizes, "baseline hidden sizes";

    "eval.seeds" => eval_seeds: usize, positive, "real worlds in the evaluation suite";
    "eval.density" => eval.density: f64, unit, "evaluation clutter density";
    "eval.max_steps" => eval.max_steps: usize, positive, "step cap per evaluation episode";

    "viz.episode" => viz.episode: usize, any, "evaluation seed index flown for the belief strip";
    "viz.max_steps" => viz.max_steps: usize, positive, "step cap for the belief-strip rollout";
    "viz.stride" => viz.stride: usize, positive, "rollout steps between strip tiles";
    "viz.band_height" => viz.band_height: usize, positive, "pixel rows per band";
}

fn find(key: &str) -> Option<&'static Key> {
    KEYS.iter().find(|k| k.name == key)
}

fn config_error(key: &str, line: Option<usize>, message: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_string(),
        line,
        message: message.into(),
    }
}

impl RunConfig {
    /// Every key in documentation order.
    pub fn keys() -> impl Iterator<Item = &'static str> {
        KEYS.iter().map(|k| k.name)
    }

    pub fn get(&self, key: &str) -> Option<String> {
        find(key).map(|k| (k.get)(self))
    }

    /// Sets one key from its text form, checking its range.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        self.set_at(key, value, None)
    }

    fn set_at(&mut self, key: &str, value: &str, line: Option<usize>) -> Result<()> {
        let k = find(key).ok_or_else(|| config_error(key, line, "unknown key"))?;
        (k.set)(self, value.trim()).map_err(|m| config_error(key, line, m))
    }

    /// Applies `key = value` text on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| config_error(line, Some(i + 1), "expected `key = value`"))?;
            self.set_at(key.trim(), value, Some(i + 1))?;
        }
        Ok(())
    }

    /// Applies `key=value` overrides in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (key, value) = o
                .split_once('=')
                .ok_or_else(|| config_error(o, None, "override must look like `key=value`"))?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    /// Checks constraints that span several keys.
    pub fn validate(&self) -> Result<()> {
        let s = &self.sim;
        if s.gate_spacing_min > s.gate_spacing_max {
            return Err(config_error("sim.gate_spacing_min", None, "exceeds sim.gate_spacing_max"));
        }
        if s.gate_frame >= s.gate_half_width {
            return Err(config_error("sim.gate_frame", None, "must be smaller than sim.gate_half_width"));
        }
        if s.gate_half_width + s.offset_max >= s.corridor_half_width {
            return Err(config_error("sim.offset_max", None, "gates would touch the corridor walls"));
        }
        if self.evo.elites >= self.evo.population {
            return Err(config_error("evo.elites", None, "must be smaller than evo.population"));
        }
        if self.viz.episode >= self.eval_seeds {
            return Err(config_error("viz.episode", None, "must index one of the eval.seeds worlds"));
        }
        Ok(())
    }

    /// The documented `key = value` dump of every setting.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut section = "";
        for k in KEYS {
            let head = k.name.split_once('.').map(|(s, _)| s).unwrap_or("");
            if head != section {
                out.push('\n');
                section = head;
            }
            out.push_str(&format!("# {}\n{} = {}\n", k.help, k.name, (k.get)(self)));
        }
        out.trim_start().to_string()
    }

    /// Every setting except `out_dir`, so echoes stay identical across
    /// output locations.
    pub fn echo(&self) -> Value {
        let map: BTreeMap<String, Value> = KEYS
            .iter()
            .filter(|k| k.name != "out_dir")
            .map(|k| (k.name.to_string(), Value::String((k.get)(self))))
            .collect();
        serde_json::to_value(map).expect("string map serializes")
    }
}

/// Defaults, then the optional file, then overrides; validated.
pub fn load_config<S: AsRef<str>>(path: Option<&Path>, overrides: &[S]) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(p) = path {
        let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        cfg.apply_text(&text)?;
    }
    cfg.apply_overrides(overrides)?;
    cfg.validate()?;
    Ok(cfg)
}
