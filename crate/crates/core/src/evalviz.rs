//! Mean distance before crash, the direct-regression baseline, and belief
//! strips.
//!
//! Distance before crash is the odometer (path length) at the first
//! collision, or at `max_steps` for episodes that never crash. Each seed
//! is one gate-free real world; all methods see the same worlds.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::autodiff::{Adam, AdamConfig, ParamSet, Tape, Tensor};
use crate::cheat::{cheat_encode, CheatEncoderParams};
use crate::container::write_atomic;
use crate::error::{Error, Result};
use crate::expert::Dataset;
use crate::nn::{forward, forward_tape, init_stack, shuffled, stack_sizes};
use crate::policy::{fly, ControllerParams, Encoder, Rollout};
use crate::rng::stream;
use crate::vae::{decode, VaeParams};
use crate::worldsim::{spawn_real_world, Action, Observation, SimConfig, WorldKind, WorldSpec};

/// Direct observation → action regressor, dense stack `base.*`
/// (`2W → hidden → 4`), output scaled like the controller's.
#[derive(Clone, Debug, PartialEq)]
pub struct BaselineParams {
    params: ParamSet,
    width: usize,
    layers: usize,
}

impl BaselineParams {
    pub fn init(width: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        let mut sizes = vec![2 * width];
        sizes.extend_from_slice(hidden);
        sizes.push(4);
        let mut params = ParamSet::new();
        init_stack(&mut params, "base", &sizes, &mut stream(seed, "baseline-init", 0))?;
        Self::from_params(params)
    }

    pub fn from_params(params: ParamSet) -> Result<Self> {
        let sizes = stack_sizes(&params, "base")?;
        if sizes[0] % 2 != 0 || *sizes.last().unwrap() != 4 {
            return Err(Error::dim(format!("baseline sizes {sizes:?}, expected [2W, ..., 4]")));
        }
        if params.len() != 2 * (sizes.len() - 1) {
            return Err(Error::contract("baseline parameter set has extra tensors"));
        }
        Ok(BaselineParams {
            width: sizes[0] / 2,
            layers: sizes.len() - 1,
            params,
        })
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

    pub fn act(&self, obs: &Observation, sim: &SimConfig) -> Result<Action> {
        if obs.width() != self.width {
            return Err(Error::dim(format!(
                "observation width {}, baseline expects {}",
                obs.width(),
                self.width
            )));
        }
        let raw = forward(&self.params, "base", self.layers, &obs.to_input(), 1, None);
        let s = action_scale(sim);
        Ok(Action::new(raw[0] * s[0], raw[1] * s[1], raw[2] * s[2], raw[3] * s[3]).clamped(sim))
    }
}

fn action_scale(sim: &SimConfig) -> [f64; 4] {
    [sim.v_max, sim.v_max, sim.v_max, sim.omega_max]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            epochs: 200,
            batch: 64,
            lr: 1e-3,
            hidden: vec![128, 64],
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainedBaseline {
    pub baseline: BaselineParams,
    /// Mean minibatch loss of each epoch.
    pub history: Vec<f64>,
}

/// Behavioral cloning on real-world expert steps: minibatch Adam on the
/// MSE between the unclamped network output and the expert action divided
/// by the action scale.
pub fn train_baseline(data: &Dataset, cfg: &BaselineConfig, sim: &SimConfig) -> Result<TrainedBaseline> {
    if data.world_kind != WorldKind::Real {
        return Err(Error::contract("the baseline is trained on real-world data only"));
    }
    let n = data.total_steps();
    if n == 0 {
        return Err(Error::contract("cannot train the baseline on an empty dataset"));
    }
    if cfg.batch == 0 {
        return Err(Error::contract("batch size must be at least 1"));
    }
    let w = data.width();
    let scale = action_scale(sim);
    let steps: Vec<(Vec<f64>, [f64; 4])> = data
        .episodes
        .iter()
        .flat_map(|e| e.steps.iter())
        .map(|s| {
            let a = s.expert_action.to_array();
            (s.observation.to_input(), std::array::from_fn(|i| a[i] / scale[i]))
        })
        .collect();
    let mut base = BaselineParams::init(w, &cfg.hidden, cfg.seed)?;
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.lr));
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut t = 0u64;
    for epoch in 0..cfg.epochs as u64 {
        let order = shuffled(n, &mut stream(cfg.seed, "baseline-shuffle", epoch));
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch) {
            let b = chunk.len();
            let x: Vec<f64> = chunk.iter().flat_map(|&i| steps[i].0.iter().copied()).collect();
            let y: Vec<f64> = chunk.iter().flat_map(|&i| steps[i].1).collect();
            let mut tape = Tape::new();
            let bound = base.params.bind(&mut tape)?;
            let xv = tape.leaf(Tensor::matrix(b, 2 * w, x)?);
            let yv = tape.leaf(Tensor::matrix(b, 4, y)?);
            let pred = forward_tape(&mut tape, &bound, "base", base.layers, xv, None)?;
            let loss = tape.mse(pred, yv)?;
            let value = tape.value(loss).item()?;
            if !value.is_finite() {
                return Err(Error::contract(format!(
                    "baseline loss became non-finite in epoch {}",
                    epoch + 1
                )));
            }
            total += value * b as f64;
            let grads = tape.backward(loss)?.into_named();
            t += 1;
            adam.step(&mut base.params, &grads, t)?;
        }
        history.push(total / n as f64);
    }
    Ok(TrainedBaseline { baseline: base, history })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PipelineKind {
    /// Cheat encoder feeding the frozen controller.
    Cheat,
    /// Direct regressor.
    Baseline,
    /// Cheat encoder feeding an untrained, randomly initialized controller.
    Random,
    /// Always hover.
    Zero,
}

impl PipelineKind {
    pub const ALL: [PipelineKind; 4] = [
        PipelineKind::Cheat,
        PipelineKind::Baseline,
        PipelineKind::Random,
        PipelineKind::Zero,
    ];
}

impl std::fmt::Display for PipelineKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PipelineKind::Cheat => "cheat",
            PipelineKind::Baseline => "baseline",
            PipelineKind::Random => "random",
            PipelineKind::Zero => "zero",
        })
    }
}

impl std::str::FromStr for PipelineKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        PipelineKind::ALL
            .into_iter()
            .find(|k| k.to_string() == s)
            .ok_or_else(|| format!("unknown pipeline `{s}` (cheat|baseline|random|zero)"))
    }
}

/// Models available to [`eval_mean_distance`]; each pipeline uses a
/// subset.
#[derive(Clone, Copy, Debug, Default)]
pub struct EvalModels<'a> {
    pub cheat: Option<&'a CheatEncoderParams>,
    pub controller: Option<&'a ControllerParams>,
    pub random_controller: Option<&'a ControllerParams>,
    pub baseline: Option<&'a BaselineParams>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub density: f64,
    pub max_steps: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            density: 0.4,
            max_steps: 2000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub seeds: Vec<u64>,
    pub odometers: Vec<f64>,
    pub crashed: Vec<bool>,
    pub mean_distance: f64,
    pub episodes: usize,
    pub config: Value,
}

impl EvalReport {
    pub fn crash_rate(&self) -> f64 {
        self.crashed.iter().filter(|&&c| c).count() as f64 / self.episodes.max(1) as f64
    }
}

/// Runs a closed loop with an arbitrary observation → action policy from
/// the world's start pose.
pub fn fly_policy<F>(world: &WorldSpec, max_steps: usize, sim: &SimConfig, mut policy: F) -> Result<Rollout>
where
    F: FnMut(&Observation) -> Result<Action>,
{
    fly(world, max_steps, sim, |obs, _| Ok((Vec::new(), policy(obs)?)), 0)
}

fn need<'a, T>(m: Option<&'a T>, what: &str, kind: PipelineKind) -> Result<&'a T> {
    m.ok_or_else(|| Error::contract(format!("the {kind} pipeline needs a {what}")))
}

/// One episode per seed in gate-free real worlds.
pub fn run_pipeline_episode(
    kind: PipelineKind,
    models: &EvalModels<'_>,
    world: &WorldSpec,
    max_steps: usize,
    sim: &SimConfig,
) -> Result<Rollout> {
    match kind {
        PipelineKind::Cheat | PipelineKind::Random => {
            let cheat = need(models.cheat, "cheat encoder", kind)?;
            let c = if kind == PipelineKind::Cheat {
                need(models.controller, "trained controller", kind)?
            } else {
                need(models.random_controller, "random controller", kind)?
            };
            crate::policy::rollout(world, Encoder::Cheat(cheat), c, max_steps, sim)
        }
        PipelineKind::Baseline => {
            let b = need(models.baseline, "baseline regressor", kind)?;
            fly_policy(world, max_steps, sim, |o| b.act(o, sim))
        }
        PipelineKind::Zero => fly_policy(world, max_steps, sim, |_| Ok(Action::ZERO)),
    }
}

pub fn eval_mean_distance(
    kind: PipelineKind,
    models: &EvalModels<'_>,
    seeds: &[u64],
    cfg: &EvalConfig,
    sim: &SimConfig,
) -> Result<EvalReport> {
    if seeds.is_empty() {
        return Err(Error::contract("evaluation needs at least one seed"));
    }
    let mut odometers = Vec::with_capacity(seeds.len());
    let mut crashed = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let world = spawn_real_world(seed, cfg.density, false, sim)?;
        let r = run_pipeline_episode(kind, models, &world, cfg.max_steps, sim)?;
        odometers.push(r.odometer);
        crashed.push(r.crashed);
    }
    Ok(EvalReport {
        method: kind.to_string(),
        mean_distance: odometers.iter().sum::<f64>() / odometers.len() as f64,
        episodes: seeds.len(),
        seeds: seeds.to_vec(),
        odometers,
        crashed,
        config: serde_json::json!({ "eval": cfg, "sim": sim }),
    })
}

/// The standard evaluation seeds: `derive_seed(seed, "eval-world", i)`.
pub fn eval_seeds(seed: u64, n: usize) -> Vec<u64> {
    (0..n as u64).map(|i| crate::rng::derive_seed(seed, "eval-world", i)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: String,
    pub mean_distance_m: f64,
    pub crash_rate: f64,
    pub episodes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

pub const CSV_HEADER: &str = "method,mean_distance_m,crash_rate,episodes";

impl ComparisonTable {
    /// Values use the shortest representation that parses back exactly.
    pub fn to_csv(&self) -> String {
        let mut s = format!("{CSV_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{:?},{:?},{}", r.method, r.mean_distance_m, r.crash_rate, r.episodes);
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |line: usize, m: &str| Error::format("comparison csv", format!("line {line}: {m}"));
        let mut lines = text.lines();
        if lines.next() != Some(CSV_HEADER) {
            return Err(bad(1, "unexpected header"));
        }
        let rows = lines
            .enumerate()
            .map(|(i, l)| {
                let f: Vec<&str> = l.split(',').collect();
                if f.len() != 4 {
                    return Err(bad(i + 2, "expected 4 fields"));
                }
                Ok(ComparisonRow {
                    method: f[0].to_string(),
                    mean_distance_m: f[1].parse().map_err(|_| bad(i + 2, "mean_distance_m"))?,
                    crash_rate: f[2].parse().map_err(|_| bad(i + 2, "crash_rate"))?,
                    episodes: f[3].parse().map_err(|_| bad(i + 2, "episodes"))?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(ComparisonTable { rows })
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{:<10} {:>22} {:>11} {:>9}\n",
            "method", "mean distance (m)", "crash rate", "episodes"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<10} {:>22.3} {:>11.3} {:>9}",
                r.method, r.mean_distance_m, r.crash_rate, r.episodes
            );
        }
        s
    }

    pub fn row(&self, method: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.method == method)
    }
}

/// One row per report, sorted by method name. All reports must share the
/// same seed list.
pub fn comparison_report(reports: &[EvalReport]) -> Result<ComparisonTable> {
    let first = reports
        .first()
        .ok_or_else(|| Error::contract("no reports to compare"))?;
    if let Some(r) = reports.iter().find(|r| r.seeds != first.seeds) {
        return Err(Error::contract(format!(
            "`{}` and `{}` were evaluated on different seeds",
            first.method, r.method
        )));
    }
    let mut rows: Vec<ComparisonRow> = reports
        .iter()
        .map(|r| ComparisonRow {
            method: r.method.clone(),
            mean_distance_m: r.mean_distance,
            crash_rate: r.crash_rate(),
            episodes: r.episodes,
        })
        .collect();
    rows.sort_by(|a, b| a.method.cmp(&b.method));
    Ok(ComparisonTable { rows })
}

/// Gray level of a column: `255 · depth · level(class)` with levels
/// free 0, solid 0.5, gate 1.
fn gray(class_level: f64, depth: f64) -> u8 {
    let class = (2.0 * class_level).round().clamp(0.0, 2.0) as u8;
    let level = match class {
        0 => 0.0,
        1 => 1.0,
        _ => 0.5,
    };
    (255.0 * depth.clamp(0.0, 1.0) * level).round() as u8
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StripGeometry {
    pub width: usize,
    pub height: usize,
    pub tiles: usize,
}

/// Belief strip as a binary PGM.
///
/// Every `stride`-th step becomes a tile `W` pixels wide: the top
/// `band_height` rows show the real observation, the bottom `band_height`
/// rows `decode(cheat_encode(real))`. Tiles are laid left to right, so the
/// image is `tiles · W` wide and `2 · band_height` tall.
pub fn belief_strip_bytes(
    trace: &Rollout,
    cheat: &CheatEncoderParams,
    vae: &VaeParams,
    stride: usize,
    band_height: usize,
) -> Result<(Vec<u8>, StripGeometry)> {
    if stride == 0 || band_height == 0 {
        return Err(Error::contract("stride and band height must be at least 1"));
    }
    if trace.steps.is_empty() {
        return Err(Error::contract("cannot draw an empty trace"));
    }
    let w = vae.width();
    let picked: Vec<&Observation> = trace.steps.iter().step_by(stride).map(|s| &s.observation).collect();
    let mut top = Vec::with_capacity(picked.len() * w);
    let mut bottom = Vec::with_capacity(picked.len() * w);
    for obs in &picked {
        if obs.width() != w {
            return Err(Error::dim(format!("observation width {}, VAE width {w}", obs.width())));
        }
        top.extend(obs.class.iter().zip(&obs.depth).map(|(&c, &d)| gray(c as f64 / 2.0, d)));
        let r = decode(vae, &cheat_encode(cheat, obs)?)?;
        bottom.extend(r.class.iter().zip(&r.depth).map(|(&c, &d)| gray(c, d)));
    }
    let geom = StripGeometry {
        width: picked.len() * w,
        height: 2 * band_height,
        tiles: picked.len(),
    };
    let mut out = format!(
        "P5\n# belief strip: {} tiles of {w} columns, one every {stride} steps; \
         rows 0..{band_height} real, rows {band_height}..{} decoded; \
         gray = 255*depth*(free 0, solid 0.5, gate 1)\n{} {}\n255\n",
        geom.tiles, geom.height, geom.width, geom.height
    )
    .into_bytes();
    for band in [&top, &bottom] {
        for _ in 0..band_height {
            out.extend_from_slice(band);
        }
    }
    Ok((out, geom))
}

pub fn render_belief_strip(
    trace: &Rollout,
    cheat: &CheatEncoderParams,
    vae: &VaeParams,
    stride: usize,
    band_height: usize,
    path: &Path,
) -> Result<StripGeometry> {
    let (bytes, geom) = belief_strip_bytes(trace, cheat, vae, stride, band_height)?;
    write_atomic(path, &bytes)?;
    Ok(geom)
}

/// Parsed PGM header and pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub max: u32,
    pub pixels: Vec<u8>,
}

/// Reads a binary PGM with optional `#` comment lines in the header.
pub fn parse_pgm(bytes: &[u8]) -> Result<Pgm> {
    let bad = |m: &str| Error::format("pgm", m.to_string());
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header is not ASCII"))?);
    }
    if fields[0] != "P5" {
        return Err(bad("not a binary PGM"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
    let (width, height, max) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if max == 0 || max > 255 {
        return Err(bad("only 8-bit PGM is supported"));
    }
    let pixels = bytes.get(pos + 1..).ok_or_else(|| bad("missing pixel data"))?.to_vec();
    if pixels.len() != width * height {
        return Err(bad("pixel count does not match the header"));
    }
    Ok(Pgm {
        width,
        height,
        max: max as u32,
        pixels,
    })
}
