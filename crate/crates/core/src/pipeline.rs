//! Stage orchestration over an output directory.
//!
//! Every stage reads its prerequisites from `out_dir`, writes its artifact
//! there, and records a `<command>.summary.json` summary holding the digests of
//! what it read and wrote plus headline metrics. Paths in summaries and
//! checkpoints are bare file names so two runs in different directories
//! produce identical bytes.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::cheat::{build_pairs, pairs_from_bytes, pairs_to_bytes, train_cheat, CheatEncoderParams, FrozenDigests};
use crate::config::{DataConfig, RunConfig};
use crate::container::{file_digest, params_digest, write_atomic, Checkpoint};
use crate::error::{Error, Result};
use crate::evalviz::{
    comparison_report, eval_mean_distance, eval_seeds, render_belief_strip, train_baseline,
    BaselineParams, EvalModels, PipelineKind,
};
use crate::expert::{collect_trajectories, read_dataset, Dataset, ExpertConfig};
use crate::policy::{
    evolve, fitness_reward, history_csv, rollout, ControllerParams, Encoder, EvolutionConfig,
    FitnessKind, ImitationTask,
};
use crate::rng::derive_seed;
use crate::vae::{depth_reconstruction_mse, train_vae, VaeConfig, VaeParams};
use crate::worldsim::{spawn_fake_world, spawn_real_world, WorldKind};

/// Artifact file names inside the output directory.
pub mod artifact {
    pub const FAKE_DATA: &str = "fake_data.lcld";
    pub const VAE: &str = "vae.lclb";
    pub const EXPERT_DATA: &str = "expert_data.lcld";
    pub const CONTROLLER: &str = "controller.lclb";
    pub const EVOLUTION: &str = "evolution.csv";
    pub const PAIRS: &str = "pairs.lcld";
    pub const CHEAT: &str = "cheat.lclb";
    pub const REAL_DATA: &str = "real_data.lcld";
    pub const BASELINE: &str = "baseline.lclb";
    pub const EVAL_CSV: &str = "eval.csv";
    pub const EVAL_TEXT: &str = "eval.txt";
    pub const EVAL_JSON: &str = "eval.json";
    pub const BELIEF: &str = "belief.pgm";
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    GenFakeData,
    TrainVae,
    GenExpert,
    TrainPolicy,
    BuildPairs,
    TrainCheat,
    GenRealData,
    TrainBaseline,
    Eval,
    Viz,
    Pipeline,
}

impl Command {
    /// Stages in pipeline order.
    pub const STAGES: [Command; 10] = [
        Command::GenFakeData,
        Command::TrainVae,
        Command::GenExpert,
        Command::TrainPolicy,
        Command::BuildPairs,
        Command::TrainCheat,
        Command::GenRealData,
        Command::TrainBaseline,
        Command::Eval,
        Command::Viz,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::GenFakeData => "gen-fake-data",
            Command::TrainVae => "train-vae",
            Command::GenExpert => "gen-expert",
            Command::TrainPolicy => "train-policy",
            Command::BuildPairs => "build-pairs",
            Command::TrainCheat => "train-cheat",
            Command::GenRealData => "gen-real-data",
            Command::TrainBaseline => "train-baseline",
            Command::Eval => "eval",
            Command::Viz => "viz",
            Command::Pipeline => "pipeline",
        }
    }

    /// File name of the stage's summary.
    pub fn summary_file(self) -> String {
        format!("{}.summary.json", self.name())
    }
}

impl std::fmt::Display for Command {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Command {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Command::STAGES
            .into_iter()
            .chain([Command::Pipeline])
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown command `{s}`"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileRef {
    pub path: String,
    pub digest: String,
}

/// Machine-readable record of one stage run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: String,
    pub seed: u64,
    pub inputs: Vec<FileRef>,
    pub outputs: Vec<FileRef>,
    pub metrics: Value,
}

impl StageSummary {
    pub fn metric(&self, key: &str) -> Option<f64> {
        self.metrics.get(key).and_then(Value::as_f64)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format("stage summary", e.to_string()))
    }
}

struct Stage<'a> {
    command: Command,
    cfg: &'a RunConfig,
    inputs: Vec<FileRef>,
    outputs: Vec<FileRef>,
}

impl<'a> Stage<'a> {
    fn new(command: Command, cfg: &'a RunConfig) -> Self {
        Stage {
            command,
            cfg,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.cfg.out_dir.join(name)
    }

    /// Digest of a prerequisite, recorded as an input.
    fn require(&mut self, name: &str) -> Result<PathBuf> {
        let p = self.path(name);
        if !p.is_file() {
            return Err(Error::Dependency(p));
        }
        self.inputs.push(FileRef {
            path: name.to_string(),
            digest: file_digest(&p)?,
        });
        Ok(p)
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        write_atomic(&self.path(name), bytes)?;
        self.outputs.push(FileRef {
            path: name.to_string(),
            digest: crate::container::bytes_digest(bytes),
        });
        Ok(())
    }

    fn checkpoint(&mut self, name: &str, ckpt: Checkpoint) -> Result<()> {
        let ckpt = ckpt
            .with("config", self.cfg.echo())
            .with("seed", json!(self.cfg.seed))
            .with("inputs", serde_json::to_value(&self.inputs).expect("file refs serialize"));
        self.write(name, &ckpt.to_bytes())
    }

    fn dataset(&mut self, name: &str, d: &Dataset) -> Result<()> {
        self.write(name, &d.to_bytes())
    }

    fn finish(self, metrics: Value) -> Result<StageSummary> {
        let summary = StageSummary {
            stage: self.command.name().to_string(),
            seed: self.cfg.seed,
            inputs: self.inputs,
            outputs: self.outputs,
            metrics,
        };
        let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
        write_atomic(&self.cfg.out_dir.join(self.command.summary_file()), text.as_bytes())?;
        Ok(summary)
    }
}

fn load_stage(path: &Path, stage: &str) -> Result<Checkpoint> {
    let c = Checkpoint::load(path)?;
    if c.stage != stage {
        return Err(Error::contract(format!(
            "{} holds stage `{}`, expected `{stage}`",
            path.display(),
            c.stage
        )));
    }
    Ok(c)
}

fn load_vae(p: &Path) -> Result<VaeParams> {
    VaeParams::from_params(load_stage(p, "vae")?.params)
}

fn load_controller(p: &Path) -> Result<ControllerParams> {
    ControllerParams::from_params(load_stage(p, "controller")?.params)
}

fn load_cheat(p: &Path) -> Result<CheatEncoderParams> {
    CheatEncoderParams::from_params(load_stage(p, "cheat")?.params)
}

fn load_baseline(p: &Path) -> Result<BaselineParams> {
    BaselineParams::from_params(load_stage(p, "baseline")?.params)
}

fn expert_cfg(base: &ExpertConfig, d: &DataConfig) -> ExpertConfig {
    ExpertConfig {
        action_noise: d.action_noise,
        real_density: d.density,
        ..base.clone()
    }
}

fn collect(stage: &Stage<'_>, kind: WorldKind, d: &DataConfig, tag: &str) -> Result<Dataset> {
    let cfg = stage.cfg;
    let data = collect_trajectories(
        kind,
        d.episodes,
        d.max_steps,
        derive_seed(cfg.seed, tag, 0),
        &expert_cfg(&cfg.expert, d),
        &cfg.sim,
    )?;
    Ok(if d.max_observations > 0 {
        data.truncated(d.max_observations)
    } else {
        data
    })
}

fn data_metrics(d: &Dataset) -> Value {
    json!({
        "episodes": d.episodes.len(),
        "total_steps": d.total_steps(),
        "crashed_episodes": d.crashed_episodes(),
    })
}

fn loss_metrics(history: &[f64]) -> Value {
    let first = history.first().copied().unwrap_or(f64::NAN);
    let last = history.last().copied().unwrap_or(f64::NAN);
    json!({
        "epochs": history.len(),
        "first_epoch_loss": first,
        "final_epoch_loss": last,
        "loss_ratio": last / first,
    })
}

fn merge(mut a: Value, b: Value) -> Value {
    if let (Some(a), Value::Object(b)) = (a.as_object_mut(), b) {
        a.extend(b);
    }
    a
}

fn gen_fake_data(cfg: &RunConfig) -> Result<StageSummary> {
    let mut s = Stage::new(Command::GenFakeData, cfg);
    let d = collect(&s, WorldKind::Fake, &cfg.fake_data, "fake-data")?;
    s.dataset(artifact::FAKE_DATA, &d)?;
    s.finish(data_metrics(&d))
}

fn train_vae_stage(cfg: &RunConfig) -> Result<StageSummary> {
    let mut s = Stage::new(Command::TrainVae, cfg);
    let data = read_dataset(&s.require(artifact::FAKE_DATA)?)?;
    let vcfg = VaeConfig {
        seed: cfg.seed,
        ..cfg.vae.clone()
    };
    let trained = train_vae(&data, &vcfg)?;
    let recon = depth_reconstruction_mse(&trained.vae, data.observations())?;
    let metrics = merge(loss_metrics(&trained.history), json!({ "depth_mse": recon }));
    s.checkpoint(
        artifact::VAE,
        Checkpoint::new("vae", trained.vae.into_params()).with("loss_history", json!(trained.history)),
    )?;
    s.finish(metrics)
}

fn gen_expert(cfg: &RunConfig) -> Result<StageSummary> {
    let mut s = Stage::new(Command::GenExpert, cfg);
    let d = collect(&s, WorldKind::Fake, &cfg.expert_data, "expert-data")?;
    s.dataset(artifact::EXPERT_DATA, &d)?;
    s.finish(data_metrics(&d))
}

/// Seeds of the held-out fake worlds flown after evolution.
pub fn heldout_seeds(seed: u64, n: usize) -> Vec<u64> {
    (0..n as u64).map(|i| derive_seed(seed, "heldout-fake", i)).collect()
}

fn train_policy(cfg: &RunConfig) -> Result<StageSummary> {
    let mut s = Stage::new(Command::TrainPolicy, cfg);
    let vae = load_vae(&s.require(artifact::VAE)?)?;
    let sim = &cfg.sim;
    let template = ControllerParams::init(vae.k(), cfg.policy.h_dim, cfg.policy.mlp, cfg.seed)?;
    let dim = template.to_genome().values.len();
    let ecfg = EvolutionConfig {
        seed: cfg.seed,
        ..cfg.evo.clone()
    };
    let (result, zero_error) = match ecfg.fitness_kind {
        FitnessKind::Imitation => {
            let data = read_dataset(&s.require(artifact::EXPERT_DATA)?)?;
            let task = ImitationTask::new(&vae, &data)?;
            let r = evolve(&ecfg, dim, |g| task.fitness(&template.with_values(g)?.compile(), sim))?;
            (r, Some(task.zero_action_error()))
        }
        FitnessKind::Reward => {
            let seeds: Vec<u64> =
                (0..cfg.reward_worlds as u64).map(|i| derive_seed(cfg.seed, "reward-world", i)).collect();
            let r = evolve(&ecfg, dim, |g| {
                fitness_reward(&template.with_values(g)?, &vae, &seeds, &cfg.reward, sim)
            })?;
            (r, None)
        }
    };
    let controller = template.with_genome(&result.best)?;

    let mut gates = 0usize;
    let mut crashes = 0usize;
    for world_seed in heldout_seeds(cfg.seed, cfg.policy.heldout_worlds) {
        let world = spawn_fake_world(world_seed, sim.n_gates, sim)?;
        let r = rollout(&world, Encoder::Vae(&vae), &controller, cfg.policy.heldout_max_steps, sim)?;
        gates += r.gates_passed;
        crashes += r.crashed as usize;
    }
    let n = cfg.policy.heldout_worlds.max(1) as f64;
    let best = result
        .best
        .fitness
        .ok_or_else(|| Error::contract("evolution returned an unevaluated genome"))?;
    let mut metrics = json!({
        "fitness": ecfg.fitness_kind.to_string(),
        "best_fitness": best,
        "evaluations": result.evaluations,
        "genome_length": dim,
        "heldout_worlds": cfg.policy.heldout_worlds,
        "heldout_mean_gates": gates as f64 / n,
        "heldout_crashes": crashes,
    });
    if let Some(z) = zero_error {
        metrics = merge(
            metrics,
            json!({ "zero_genome_error": z, "best_error": -best, "error_ratio": -best / z }),
        );
    }
    s.write(artifact::EVOLUTION, history_csv(&result.history).as_bytes())?;
    s.checkpoint(
        artifact::CONTROLLER,
        Checkpoint::new("controller", controller.into_params()).with("best_fitness", json!(best)),
    )?;
    s.finish(metrics)
}

fn build_pairs_stage(cfg: &RunConfig) -> Result<StageSummary> {
    let mut s = Stage::new(Command::BuildPairs, cfg);
    let vae = load_vae(&s.require(artifact::VAE)?)?;
    let pairs = build_pairs(derive_seed(cfg.seed, "pairs", 0), &vae, &cfg.pairs, &cfg.sim)?;
    let extra = json!({ "seed": cfg.seed, "vae_digest": params_digest(vae.params()) });
    s.write(artifact::PAIRS, &pairs_to_bytes(&pairs, extra)?)?;
    s.finish(json!({ "pairs": pairs.len(), "mode": cfg.pairs.mode.to_string() }))
}

fn train_cheat_stage(cfg: &RunConfig) -> Result<StageSummary> {
    let mut s = Stage::new(Command::TrainCheat, cfg);
    let pairs_path = s.require(artifact::PAIRS)?;
    let vae = load_vae(&s.require(artifact::VAE)?)?;
    let controller = load_controller(&s.require(artifact::CONTROLLER)?)?;
    let bytes = std::fs::read(&pairs_path).map_err(|e| Error::io(&pairs_path, e))?;
    let pairs = pairs_from_bytes(&bytes)?;
    let ccfg = crate::cheat::CheatConfig {
        seed: cfg.seed,
        ..cfg.cheat.clone()
    };
    let trained = train_cheat(&pairs, (&vae, &controller), &ccfg)?;
    let metrics = merge(
        loss_metrics(&trained.history),
        json!({
            "frozen_before": trained.before,
            "frozen_after": trained.after,
        }),
    );
    s.checkpoint(
        artifact::CHEAT,
        Checkpoint::new("cheat", trained.encoder.into_params())
            .with("frozen_digests", serde_json::to_value(&trained.after).expect("digests serialize")),
    )?;
    s.finish(metrics)
}

fn gen_real_data(cfg: &RunConfig) -> Result<StageSummary> {
    let mut s = Stage::new(Command::GenRealData, cfg);
    let d = collect(&s, WorldKind::Real, &cfg.real_data, "real-data")?;
    s.dataset(artifact::REAL_DATA, &d)?;
    s.finish(data_metrics(&d))
}

fn train_baseline_stage(cfg: &RunConfig) -> Result<StageSummary> {
    let mut s = Stage::new(Command::TrainBaseline, cfg);
    let data = read_dataset(&s.require(artifact::REAL_DATA)?)?;
    let bcfg = crate::evalviz::BaselineConfig {
        seed: cfg.seed,
        ..cfg.baseline.clone()
    };
    let trained = train_baseline(&data, &bcfg, &cfg.sim)?;
    let metrics = loss_metrics(&trained.history);
    s.checkpoint(artifact::BASELINE, Checkpoint::new("baseline", trained.baseline.into_params()))?;
    s.finish(metrics)
}

/// The untrained controller flown by the `random` pipeline.
pub fn random_controller(cfg: &RunConfig, k: usize) -> Result<ControllerParams> {
    ControllerParams::init(k, cfg.policy.h_dim, cfg.policy.mlp, derive_seed(cfg.seed, "random-policy", 0))
}

/// Frozen checkpoints must still carry the digests the cheat stage
/// recorded.
fn check_frozen(cheat: &Checkpoint, vae: &VaeParams, controller: &ControllerParams) -> Result<()> {
    let recorded: FrozenDigests = cheat
        .metadata
        .get("frozen_digests")
        .cloned()
        .and_then(|v| serde_json::from_value(v).ok())
        .ok_or_else(|| Error::format("cheat checkpoint", "missing frozen_digests"))?;
    let now = FrozenDigests::of(vae, controller);
    if recorded != now {
        return Err(Error::FrozenViolation(format!(
            "checkpoints changed since the cheat encoder was trained: recorded {recorded:?}, found {now:?}"
        )));
    }
    Ok(())
}

fn eval_stage(cfg: &RunConfig) -> Result<StageSummary> {
    let mut s = Stage::new(Command::Eval, cfg);
    let controller = load_controller(&s.require(artifact::CONTROLLER)?)?;
    let vae = load_vae(&s.require(artifact::VAE)?)?;
    let cheat_ckpt = load_stage(&s.require(artifact::CHEAT)?, "cheat")?;
    let baseline = load_baseline(&s.require(artifact::BASELINE)?)?;
    check_frozen(&cheat_ckpt, &vae, &controller)?;
    let cheat = CheatEncoderParams::from_params(cheat_ckpt.params)?;
    let random = random_controller(cfg, controller.k())?;
    let models = EvalModels {
        cheat: Some(&cheat),
        controller: Some(&controller),
        random_controller: Some(&random),
        baseline: Some(&baseline),
    };
    let seeds = eval_seeds(cfg.seed, cfg.eval_seeds);
    let reports = PipelineKind::ALL
        .into_iter()
        .map(|k| eval_mean_distance(k, &models, &seeds, &cfg.eval, &cfg.sim))
        .collect::<Result<Vec<_>>>()?;
    let table = comparison_report(&reports)?;
    s.write(artifact::EVAL_CSV, table.to_csv().as_bytes())?;
    s.write(artifact::EVAL_TEXT, table.to_text().as_bytes())?;
    let detail = serde_json::to_string_pretty(&reports).expect("reports serialize");
    s.write(artifact::EVAL_JSON, detail.as_bytes())?;
    let mut metrics = Map::new();
    for r in &table.rows {
        metrics.insert(format!("{}_mean_distance_m", r.method), json!(r.mean_distance_m));
        metrics.insert(format!("{}_crash_rate", r.method), json!(r.crash_rate));
    }
    metrics.insert("episodes".into(), json!(seeds.len()));
    s.finish(Value::Object(metrics))
}

fn viz_stage(cfg: &RunConfig) -> Result<StageSummary> {
    let mut s = Stage::new(Command::Viz, cfg);
    let vae = load_vae(&s.require(artifact::VAE)?)?;
    let controller = load_controller(&s.require(artifact::CONTROLLER)?)?;
    let cheat = load_cheat(&s.require(artifact::CHEAT)?)?;
    let before = FrozenDigests::of(&vae, &controller);
    let cheat_digest = params_digest(cheat.params());
    let world_seed = eval_seeds(cfg.seed, cfg.viz.episode + 1)[cfg.viz.episode];
    let world = spawn_real_world(world_seed, cfg.eval.density, false, &cfg.sim)?;
    let trace = rollout(&world, Encoder::Cheat(&cheat), &controller, cfg.viz.max_steps, &cfg.sim)?;
    let path = s.path(artifact::BELIEF);
    let geom = render_belief_strip(&trace, &cheat, &vae, cfg.viz.stride, cfg.viz.band_height, &path)?;
    s.outputs.push(FileRef {
        path: artifact::BELIEF.to_string(),
        digest: file_digest(&path)?,
    });
    let after = FrozenDigests::of(&vae, &controller);
    if before != after || cheat_digest != params_digest(cheat.params()) {
        return Err(Error::FrozenViolation("model digests changed while rendering".into()));
    }
    s.finish(json!({
        "width": geom.width,
        "height": geom.height,
        "tiles": geom.tiles,
        "rollout_steps": trace.steps.len(),
        "odometer": trace.odometer,
        "crashed": trace.crashed,
        "world_seed": world_seed,
        "frozen": after,
        "cheat_digest": cheat_digest,
    }))
}

fn run_stage(command: Command, cfg: &RunConfig) -> Result<StageSummary> {
    let out = match command {
        Command::GenFakeData => gen_fake_data(cfg),
        Command::TrainVae => train_vae_stage(cfg),
        Command::GenExpert => gen_expert(cfg),
        Command::TrainPolicy => train_policy(cfg),
        Command::BuildPairs => build_pairs_stage(cfg),
        Command::TrainCheat => train_cheat_stage(cfg),
        Command::GenRealData => gen_real_data(cfg),
        Command::TrainBaseline => train_baseline_stage(cfg),
        Command::Eval => eval_stage(cfg),
        Command::Viz => viz_stage(cfg),
        Command::Pipeline => unreachable!("pipeline is expanded by run_command"),
    };
    out.map_err(|e| e.in_stage(command.name()))
}

/// Runs one command; `pipeline` runs every stage in order and stops at the
/// first failure. Returns the summaries written.
pub fn run_command(command: Command, cfg: &RunConfig) -> Result<Vec<StageSummary>> {
    cfg.validate()?;
    match command {
        Command::Pipeline => Command::STAGES.into_iter().map(|c| run_stage(c, cfg)).collect(),
        c => run_stage(c, cfg).map(|s| vec![s]),
    }
}
