//! Recurrent controller and the genetic algorithm that trains it.
//!
//! A single LSTM cell consumes the latent `z` each step; the MLP reads
//! `[z; h']` and emits `(vx, vy, vz, yaw_rate)`, scaled by
//! `(v_max, v_max, v_max, omega_max)` and clamped to the action bounds.
//!
//! Parameter order, which is also the genome layout:
//!
//! ```text
//! lstm.w_i lstm.w_f lstm.w_o lstm.w_g   h × k
//! lstm.u_i lstm.u_f lstm.u_o lstm.u_g   h × h
//! lstm.b_i lstm.b_f lstm.b_o lstm.b_g   h
//! mlp.0.w mlp.0.b                       m1 × (k + h), m1
//! mlp.1.w mlp.1.b                       m2 × m1, m2
//! mlp.2.w mlp.2.b                       4 × m2, 4
//! ```

use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::kernels::{affine_rows, dot, sigmoid};
use crate::autodiff::{ParamSet, Tensor};
use crate::cheat::{cheat_encode_input, CheatEncoderParams};
use crate::error::{Error, Result};
use crate::expert::Dataset;
use crate::nn::{init_stack, stack_sizes, HIDDEN};
use crate::rng::stream;
use crate::vae::{encode_inputs, VaeParams};
use crate::worldsim::{
    render_observation, spawn_fake_world, start_state, step_dynamics, Action, DroneState,
    GateProgress, Observation, SimConfig, WorldKind, WorldSpec,
};

const GATES: [&str; 4] = ["i", "f", "o", "g"];

#[derive(Clone, Debug, PartialEq)]
pub struct ControllerParams {
    params: ParamSet,
    k: usize,
    h_dim: usize,
    mlp: [usize; 2],
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(h_dim: usize) -> Self {
        LstmState {
            h: vec![0.0; h_dim],
            c: vec![0.0; h_dim],
        }
    }
}

/// Flat controller parameters in the documented order.
#[derive(Clone, Debug, PartialEq)]
pub struct Genome {
    pub values: Vec<f64>,
    pub fitness: Option<f64>,
}

/// Total scalar count of a controller with these dimensions.
pub fn parameter_count(k: usize, h_dim: usize, m1: usize, m2: usize) -> usize {
    4 * (h_dim * k + h_dim * h_dim + h_dim) + (k + h_dim) * m1 + m1 + m1 * m2 + m2 + m2 * 4 + 4
}

impl ControllerParams {
    /// Weights `N(0, 1/fan_in)`, biases zero.
    pub fn init(k: usize, h_dim: usize, mlp: [usize; 2], seed: u64) -> Result<Self> {
        if k == 0 || h_dim == 0 || mlp.contains(&0) {
            return Err(Error::contract(format!(
                "controller dimensions must be positive: k {k}, h {h_dim}, mlp {mlp:?}"
            )));
        }
        let mut rng = stream(seed, "controller-init", 0);
        let mut params = ParamSet::new();
        for (shape, fan_in) in [("w", k), ("u", h_dim)] {
            for g in GATES {
                let scale = 1.0 / (fan_in as f64).sqrt();
                let data = (0..h_dim * fan_in)
                    .map(|_| rng.sample::<f64, _>(StandardNormal) * scale)
                    .collect();
                params.insert(
                    &format!("lstm.{shape}_{g}"),
                    Tensor::matrix(h_dim, fan_in, data)?,
                    true,
                )?;
            }
        }
        for g in GATES {
            params.insert(&format!("lstm.b_{g}"), Tensor::zeros(&[h_dim]), true)?;
        }
        init_stack(&mut params, "mlp", &[k + h_dim, mlp[0], mlp[1], 4], &mut rng)?;
        Self::from_params(params)
    }

    pub fn from_params(params: ParamSet) -> Result<Self> {
        let w = params
            .get("lstm.w_i")
            .ok_or_else(|| Error::contract("controller is missing `lstm.w_i`"))?;
        if w.rank() != 2 {
            return Err(Error::dim("`lstm.w_i` must be a matrix"));
        }
        let (h_dim, k) = (w.dims()[0], w.dims()[1]);
        for (shape, dims) in [("w", vec![h_dim, k]), ("u", vec![h_dim, h_dim]), ("b", vec![h_dim])] {
            for g in GATES {
                let name = format!("lstm.{shape}_{g}");
                match params.get(&name) {
                    Some(t) if t.dims() == dims.as_slice() => {}
                    Some(t) => {
                        return Err(Error::dim(format!(
                            "`{name}` has shape {:?}, expected {dims:?}",
                            t.dims()
                        )))
                    }
                    None => return Err(Error::contract(format!("controller is missing `{name}`"))),
                }
            }
        }
        let sizes = stack_sizes(&params, "mlp")?;
        if sizes.len() != 4 || sizes[0] != k + h_dim || sizes[3] != 4 {
            return Err(Error::dim(format!(
                "controller MLP sizes {sizes:?}, expected [{}, m1, m2, 4]",
                k + h_dim
            )));
        }
        let mlp = [sizes[1], sizes[2]];
        if params.len() != 12 + 6 || params.scalar_count() != parameter_count(k, h_dim, mlp[0], mlp[1]) {
            return Err(Error::contract("controller parameter set has extra tensors"));
        }
        Ok(ControllerParams {
            params,
            k,
            h_dim,
            mlp,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn h_dim(&self) -> usize {
        self.h_dim
    }

    pub fn mlp_sizes(&self) -> [usize; 2] {
        self.mlp
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn into_params(self) -> ParamSet {
        self.params
    }

    pub fn to_genome(&self) -> Genome {
        Genome {
            values: self.params.flatten(),
            fitness: None,
        }
    }

    /// A controller with this one's shapes and the genome's values.
    pub fn with_genome(&self, g: &Genome) -> Result<Self> {
        self.with_values(&g.values)
    }

    pub fn with_values(&self, values: &[f64]) -> Result<Self> {
        let mut out = self.clone();
        out.params.load_flat(values)?;
        Ok(out)
    }

    pub fn compile(&self) -> CompiledController {
        let stack = |shape: &str| {
            let mut v = Vec::new();
            for g in GATES {
                v.extend_from_slice(self.params.expect(&format!("lstm.{shape}_{g}")).data());
            }
            v
        };
        CompiledController {
            w: stack("w"),
            u: stack("u"),
            b: stack("b"),
            mlp: (0..3)
                .map(|i| {
                    let w = self.params.expect(&format!("mlp.{i}.w"));
                    let b = self.params.expect(&format!("mlp.{i}.b"));
                    (w.data().to_vec(), b.data().to_vec(), w.dims()[0], w.dims()[1])
                })
                .collect(),
            k: self.k,
            h_dim: self.h_dim,
        }
    }
}

/// Controller with the four gate matrices stacked for fast evaluation.
#[derive(Clone, Debug)]
pub struct CompiledController {
    w: Vec<f64>,
    u: Vec<f64>,
    b: Vec<f64>,
    /// `(W, b, rows, cols)` per MLP layer.
    mlp: Vec<(Vec<f64>, Vec<f64>, usize, usize)>,
    k: usize,
    h_dim: usize,
}

impl CompiledController {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn h_dim(&self) -> usize {
        self.h_dim
    }

    /// Raw MLP output before scaling and clamping.
    fn step_raw(&self, z: &[f64], st: &mut LstmState) -> [f64; 4] {
        let (h, k) = (self.h_dim, self.k);
        let mut pre = vec![0.0; 4 * h];
        for (r, p) in pre.iter_mut().enumerate() {
            *p = dot(&self.w[r * k..(r + 1) * k], z)
                + dot(&self.u[r * h..(r + 1) * h], &st.h)
                + self.b[r];
        }
        for j in 0..h {
            let i = sigmoid(pre[j]);
            let f = sigmoid(pre[h + j]);
            let o = sigmoid(pre[2 * h + j]);
            let g = pre[3 * h + j].tanh();
            st.c[j] = f * st.c[j] + i * g;
            st.h[j] = o * st.c[j].tanh();
        }
        let mut cur = z.to_vec();
        cur.extend_from_slice(&st.h);
        for (i, (w, b, m, n)) in self.mlp.iter().enumerate() {
            let mut next = vec![0.0; *m];
            affine_rows(w, b, *m, *n, &cur, &mut next);
            if i < 2 {
                next.iter_mut().for_each(|v| *v = HIDDEN.apply(*v));
            }
            cur = next;
        }
        [cur[0], cur[1], cur[2], cur[3]]
    }

    pub fn step(&self, z: &[f64], st: &mut LstmState, sim: &SimConfig) -> Result<Action> {
        if z.len() != self.k {
            return Err(Error::dim(format!("latent has length {}, controller expects {}", z.len(), self.k)));
        }
        if st.h.len() != self.h_dim || st.c.len() != self.h_dim {
            return Err(Error::dim(format!(
                "LSTM state has sizes ({}, {}), controller expects {}",
                st.h.len(),
                st.c.len(),
                self.h_dim
            )));
        }
        let raw = self.step_raw(z, st);
        Ok(scale_action(raw, sim))
    }
}

fn scale_action(raw: [f64; 4], sim: &SimConfig) -> Action {
    Action::new(
        raw[0] * sim.v_max,
        raw[1] * sim.v_max,
        raw[2] * sim.v_max,
        raw[3] * sim.omega_max,
    )
    .clamped(sim)
}

/// One pure controller update: standard LSTM cell, then the MLP over
/// `[z; h']`.
pub fn controller_step(
    p: &ControllerParams,
    z: &[f64],
    st: &LstmState,
    sim: &SimConfig,
) -> Result<(Action, LstmState)> {
    let mut next = st.clone();
    let a = p.compile().step(z, &mut next, sim)?;
    Ok((a, next))
}

/// Teacher-forced imitation problem: encoder means and expert actions of
/// every step, grouped by episode.
#[derive(Clone, Debug)]
pub struct ImitationTask {
    episodes: Vec<(Vec<f64>, Vec<[f64; 4]>)>,
    k: usize,
    steps: usize,
}

impl ImitationTask {
    pub fn new(vae: &VaeParams, data: &Dataset) -> Result<Self> {
        if data.world_kind != WorldKind::Fake {
            return Err(Error::contract("imitation fitness uses fake-world trajectories"));
        }
        if data.total_steps() == 0 {
            return Err(Error::contract("imitation fitness needs a nonempty dataset"));
        }
        if data.width() != vae.width() {
            return Err(Error::dim(format!(
                "dataset width {}, VAE width {}",
                data.width(),
                vae.width()
            )));
        }
        let k = vae.k();
        let episodes = data
            .episodes
            .iter()
            .map(|ep| {
                let x: Vec<f64> = ep.steps.iter().flat_map(|s| s.observation.to_input()).collect();
                let enc = encode_inputs(vae, &x, ep.steps.len());
                let mus = enc.chunks(2 * k).flat_map(|row| row[..k].to_vec()).collect();
                let actions = ep.steps.iter().map(|s| s.expert_action.to_array()).collect();
                (mus, actions)
            })
            .collect();
        Ok(ImitationTask {
            episodes,
            k,
            steps: data.total_steps(),
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Mean squared action error of the all-zero command.
    pub fn zero_action_error(&self) -> f64 {
        let s: f64 = self
            .episodes
            .iter()
            .flat_map(|(_, a)| a.iter())
            .map(|a| a.iter().map(|v| v * v).sum::<f64>())
            .sum();
        s / (4 * self.steps) as f64
    }

    /// `-(mean squared action error)` over all steps and components, LSTM
    /// state reset at each episode start.
    pub fn fitness(&self, c: &CompiledController, sim: &SimConfig) -> Result<f64> {
        if c.k != self.k {
            return Err(Error::dim(format!("controller k {}, task k {}", c.k, self.k)));
        }
        let mut sum = 0.0;
        for (mus, actions) in &self.episodes {
            let mut st = LstmState::zeros(c.h_dim);
            for (z, target) in mus.chunks(self.k).zip(actions) {
                let a = scale_action(c.step_raw(z, &mut st), sim).to_array();
                sum += a.iter().zip(target).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
            }
        }
        Ok(-sum / (4 * self.steps) as f64)
    }
}

pub fn fitness_imitation(
    g: &Genome,
    template: &ControllerParams,
    vae: &VaeParams,
    data: &Dataset,
    sim: &SimConfig,
) -> Result<f64> {
    let task = ImitationTask::new(vae, data)?;
    task.fitness(&template.with_genome(g)?.compile(), sim)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub max_steps: usize,
    pub gate_bonus: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            max_steps: 600,
            gate_bonus: 10.0,
        }
    }
}

/// Mean over fake worlds of `odometer + gate_bonus · gates passed`.
pub fn fitness_reward(
    c: &ControllerParams,
    vae: &VaeParams,
    seeds: &[u64],
    cfg: &RewardConfig,
    sim: &SimConfig,
) -> Result<f64> {
    if seeds.is_empty() {
        return Err(Error::contract("reward fitness needs at least one seed"));
    }
    let mut total = 0.0;
    for &seed in seeds {
        let world = spawn_fake_world(seed, sim.n_gates, sim)?;
        let r = rollout(&world, Encoder::Vae(vae), c, cfg.max_steps, sim)?;
        total += r.odometer + cfg.gate_bonus * r.gates_passed as f64;
    }
    Ok(total / seeds.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitnessKind {
    Imitation,
    Reward,
}

impl std::str::FromStr for FitnessKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "imitation" => Ok(FitnessKind::Imitation),
            "reward" => Ok(FitnessKind::Reward),
            other => Err(format!("unknown fitness kind `{other}` (imitation|reward)")),
        }
    }
}

impl std::fmt::Display for FitnessKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FitnessKind::Imitation => "imitation",
            FitnessKind::Reward => "reward",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvolutionConfig {
    pub population: usize,
    pub elites: usize,
    pub mutation_sigma: f64,
    pub init_sigma: f64,
    pub generations: usize,
    pub seed: u64,
    pub fitness_kind: FitnessKind,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        EvolutionConfig {
            population: 64,
            elites: 8,
            mutation_sigma: 0.02,
            init_sigma: 0.1,
            generations: 150,
            seed: 0,
            fitness_kind: FitnessKind::Imitation,
        }
    }
}

impl EvolutionConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::contract(m));
        if self.population < 2 {
            return bad(format!("population {} < 2", self.population));
        }
        if self.elites < 1 || self.elites >= self.population {
            return bad(format!(
                "elites {} must be in [1, population = {})",
                self.elites, self.population
            ));
        }
        if !(self.mutation_sigma > 0.0 && self.mutation_sigma.is_finite()) {
            return bad(format!("mutation_sigma {} must be > 0", self.mutation_sigma));
        }
        if !(self.init_sigma > 0.0 && self.init_sigma.is_finite()) {
            return bad(format!("init_sigma {} must be > 0", self.init_sigma));
        }
        if self.generations < 1 {
            return bad("generations must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub generation: usize,
    pub best: f64,
    pub mean: f64,
}

#[derive(Clone, Debug)]
pub struct EvolutionResult {
    pub best: Genome,
    pub history: Vec<GenerationStats>,
    /// Fitness evaluations actually performed.
    pub evaluations: usize,
}

/// Elitist genetic algorithm maximizing `fitness` over vectors of length
/// `dim`.
///
/// Generation 0 is drawn from `N(0, init_sigma²)`. Every generation is
/// evaluated, ranked by fitness (ties to the lower index), and its elites
/// are carried over unchanged with their cached fitness. The rest of the
/// next population are mutants `parent + N(0, mutation_sigma²)` of
/// uniformly chosen elites. The last generation's top genome is returned.
pub fn evolve<F>(cfg: &EvolutionConfig, dim: usize, mut fitness: F) -> Result<EvolutionResult>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    cfg.validate()?;
    let init = Normal::new(0.0, cfg.init_sigma).map_err(|e| Error::contract(e.to_string()))?;
    let mutation = Normal::new(0.0, cfg.mutation_sigma).map_err(|e| Error::contract(e.to_string()))?;
    let mut rng = stream(cfg.seed, "evolve-init", 0);
    let mut pop: Vec<Vec<f64>> = (0..cfg.population)
        .map(|_| (0..dim).map(|_| init.sample(&mut rng)).collect())
        .collect();
    let mut scores: Vec<Option<f64>> = vec![None; cfg.population];
    let mut history = Vec::with_capacity(cfg.generations);
    let mut evaluations = 0;
    for generation in 0..cfg.generations {
        for (i, genome) in pop.iter().enumerate() {
            if scores[i].is_none() {
                let value = fitness(genome)?;
                evaluations += 1;
                if !value.is_finite() {
                    return Err(Error::Evolution {
                        generation,
                        genome: i,
                        value,
                    });
                }
                scores[i] = Some(value);
            }
        }
        let f: Vec<f64> = scores.iter().map(|s| s.unwrap()).collect();
        let mut order: Vec<usize> = (0..pop.len()).collect();
        order.sort_by(|&a, &b| f[b].total_cmp(&f[a]).then(a.cmp(&b)));
        history.push(GenerationStats {
            generation,
            best: f[order[0]],
            mean: f.iter().sum::<f64>() / f.len() as f64,
        });
        if generation + 1 == cfg.generations {
            return Ok(EvolutionResult {
                best: Genome {
                    values: pop.swap_remove(order[0]),
                    fitness: Some(f[order[0]]),
                },
                history,
                evaluations,
            });
        }
        let mut rng = stream(cfg.seed, "evolve-mutate", generation as u64);
        let elites: Vec<(Vec<f64>, f64)> = order[..cfg.elites]
            .iter()
            .map(|&i| (pop[i].clone(), f[i]))
            .collect();
        let mut next = Vec::with_capacity(cfg.population);
        let mut next_scores = Vec::with_capacity(cfg.population);
        for (g, s) in &elites {
            next.push(g.clone());
            next_scores.push(Some(*s));
        }
        while next.len() < cfg.population {
            let parent = &elites[rng.random_range(0..cfg.elites)].0;
            next.push(parent.iter().map(|v| v + mutation.sample(&mut rng)).collect());
            next_scores.push(None);
        }
        pop = next;
        scores = next_scores;
    }
    unreachable!("the final generation returns")
}

/// `generation,best,mean` with a header row.
pub fn history_csv(history: &[GenerationStats]) -> String {
    let mut s = String::from("generation,best,mean\n");
    for h in history {
        s.push_str(&format!("{},{:?},{:?}\n", h.generation, h.best, h.mean));
    }
    s
}

/// Perception stage feeding the controller.
#[derive(Clone, Copy, Debug)]
pub enum Encoder<'a> {
    /// Frozen VAE mean; fake worlds only.
    Vae(&'a VaeParams),
    /// Retrained encoder; real worlds only.
    Cheat(&'a CheatEncoderParams),
}

impl Encoder<'_> {
    pub fn k(&self) -> usize {
        match self {
            Encoder::Vae(v) => v.k(),
            Encoder::Cheat(c) => c.k(),
        }
    }

    pub fn width(&self) -> usize {
        match self {
            Encoder::Vae(v) => v.width(),
            Encoder::Cheat(c) => c.width(),
        }
    }

    pub fn latent(&self, obs: &Observation) -> Result<Vec<f64>> {
        if obs.width() != self.width() {
            return Err(Error::dim(format!(
                "observation width {}, encoder expects {}",
                obs.width(),
                self.width()
            )));
        }
        let x = obs.to_input();
        Ok(match self {
            Encoder::Vae(v) => {
                let mut out = encode_inputs(v, &x, 1);
                out.truncate(v.k());
                out
            }
            Encoder::Cheat(c) => cheat_encode_input(c, &x),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RolloutStep {
    pub state: DroneState,
    pub observation: Observation,
    pub latent: Vec<f64>,
    pub action: Action,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    pub steps: Vec<RolloutStep>,
    pub final_state: DroneState,
    pub odometer: f64,
    pub crashed: bool,
    pub gates_passed: usize,
}

/// Closed loop render → encode → control → integrate from the world's
/// start pose, until a crash, `max_steps`, or (fake worlds) the last gate.
pub fn rollout(
    world: &WorldSpec,
    encoder: Encoder<'_>,
    controller: &ControllerParams,
    max_steps: usize,
    sim: &SimConfig,
) -> Result<Rollout> {
    match (&encoder, world.kind) {
        (Encoder::Vae(_), WorldKind::Fake) | (Encoder::Cheat(_), WorldKind::Real) => {}
        (Encoder::Vae(_), WorldKind::Real) => {
            return Err(Error::contract("the VAE encoder runs in fake worlds only"))
        }
        (Encoder::Cheat(_), WorldKind::Fake) => {
            return Err(Error::contract("the cheat encoder runs in real worlds only"))
        }
    }
    if encoder.k() != controller.k() {
        return Err(Error::dim(format!(
            "encoder produces k = {}, controller expects {}",
            encoder.k(),
            controller.k()
        )));
    }
    let c = controller.compile();
    fly(world, max_steps, sim, |obs, st| {
        let z = encoder.latent(obs)?;
        let a = c.step(&z, st, sim)?;
        Ok((z, a))
    }, controller.h_dim())
}

/// Shared closed loop for any observation → action pipeline.
pub(crate) fn fly<F>(
    world: &WorldSpec,
    max_steps: usize,
    sim: &SimConfig,
    mut policy: F,
    h_dim: usize,
) -> Result<Rollout>
where
    F: FnMut(&Observation, &mut LstmState) -> Result<(Vec<f64>, Action)>,
{
    let mut s = start_state(world);
    let mut st = LstmState::zeros(h_dim);
    let mut progress = GateProgress::default();
    let mut steps = Vec::new();
    for _ in 0..max_steps {
        if world.kind == WorldKind::Fake && progress.finished(world) {
            break;
        }
        let observation = render_observation(world, &s, sim);
        let (latent, action) = policy(&observation, &mut st)?;
        let next = step_dynamics(world, &s, action, sim.dt, sim)?;
        progress.update(world, s.planar(), next.planar(), sim);
        steps.push(RolloutStep {
            state: s,
            observation,
            latent,
            action,
        });
        s = next;
        if s.crashed {
            break;
        }
    }
    Ok(Rollout {
        steps,
        final_state: s,
        odometer: s.odometer,
        crashed: s.crashed,
        gates_passed: progress.passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vae::vae_init;

    fn zeroed(mut c: ControllerParams) -> ControllerParams {
        let n = c.params.scalar_count();
        c.params.load_flat(&vec![0.0; n]).unwrap();
        c
    }

    #[test]
    fn zero_controller_hovers() {
        let sim = SimConfig::default();
        let c = zeroed(ControllerParams::init(3, 4, [5, 6], 0).unwrap());
        let (a, st) = controller_step(&c, &[0.3, -1.0, 2.0], &LstmState::zeros(4), &sim).unwrap();
        assert_eq!(a, Action::ZERO);
        assert_eq!(st.h, vec![0.0; 4]);
        assert!(controller_step(&c, &[0.0; 2], &LstmState::zeros(4), &sim).is_err());
    }

    #[test]
    fn hand_computed_cell() {
        let sim = SimConfig::default();
        let mut c = zeroed(ControllerParams::init(1, 1, [1, 1], 0).unwrap());
        let set = |c: &mut ControllerParams, n: &str, v: f64| {
            c.params.get_mut(n).unwrap().data_mut()[0] = v;
        };
        for (n, v) in [
            ("lstm.w_i", 0.5), ("lstm.w_f", -0.3), ("lstm.w_o", 0.8), ("lstm.w_g", 1.2),
            ("lstm.u_i", 0.1), ("lstm.u_f", 0.2), ("lstm.u_o", -0.4), ("lstm.u_g", 0.7),
            ("lstm.b_i", 0.05), ("lstm.b_f", 1.0), ("lstm.b_o", -0.1), ("lstm.b_g", 0.0),
            ("mlp.0.b", 0.1), ("mlp.1.w", 2.0), ("mlp.1.b", -0.2),
        ] {
            set(&mut c, n, v);
        }
        c.params.get_mut("mlp.0.w").unwrap().data_mut().copy_from_slice(&[0.6, -0.9]);
        c.params
            .get_mut("mlp.2.w")
            .unwrap()
            .data_mut()
            .copy_from_slice(&[0.3, 0.0, 0.0, -0.5]);
        let (z, h0, c0) = (0.7f64, 0.2f64, -0.5f64);
        let sg = |x: f64| 1.0 / (1.0 + (-x).exp());
        let i = sg(0.5 * z + 0.1 * h0 + 0.05);
        let f = sg(-0.3 * z + 0.2 * h0 + 1.0);
        let o = sg(0.8 * z - 0.4 * h0 - 0.1);
        let g = (1.2 * z + 0.7 * h0).tanh();
        let c1 = f * c0 + i * g;
        let h1 = o * c1.tanh();
        let m0 = (0.6 * z - 0.9 * h1 + 0.1).tanh();
        let m1 = (2.0 * m0 - 0.2).tanh();
        let expect = [0.3 * m1 * sim.v_max, 0.0, 0.0, -0.5 * m1 * sim.omega_max];
        let st = LstmState { h: vec![h0], c: vec![c0] };
        let (a, st1) = controller_step(&c, &[z], &st, &sim).unwrap();
        assert!((st1.c[0] - c1).abs() < 1e-15 && (st1.h[0] - h1).abs() < 1e-15);
        for (x, y) in a.to_array().iter().zip(expect) {
            assert!((x - y).abs() < 1e-14, "{x} vs {y}");
        }
    }

    #[test]
    fn genome_roundtrip_and_count() {
        let c = ControllerParams::init(8, 16, [32, 16], 1).unwrap();
        let g = c.to_genome();
        assert_eq!(g.values.len(), parameter_count(8, 16, 32, 16));
        assert_eq!(c.with_genome(&g).unwrap(), c);
        assert!(c.with_values(&g.values[1..]).is_err());
    }

    #[test]
    fn genome_index_touches_one_entry() {
        let c = ControllerParams::init(2, 3, [2, 2], 1).unwrap();
        let base = c.to_genome();
        let mut seen = std::collections::HashSet::new();
        for j in 0..base.values.len() {
            let mut v = base.values.clone();
            v[j] += 1.0;
            let d = c.with_values(&v).unwrap();
            let mut changed = vec![];
            for (a, b) in c.params().iter().zip(d.params().iter()) {
                for (idx, (x, y)) in a.tensor.data().iter().zip(b.tensor.data()).enumerate() {
                    if x != y {
                        changed.push((a.name.clone(), idx));
                    }
                }
            }
            assert_eq!(changed.len(), 1, "index {j}");
            assert!(seen.insert(changed.pop().unwrap()));
        }
    }

    #[test]
    fn evolve_degenerate_and_errors() {
        let cfg = EvolutionConfig {
            population: 2,
            elites: 1,
            generations: 1,
            ..Default::default()
        };
        let mut seen = vec![];
        let r = evolve(&cfg, 3, |g| {
            seen.push(g.to_vec());
            Ok(g[0])
        })
        .unwrap();
        assert_eq!(seen.len(), 2);
        let best = if seen[0][0] >= seen[1][0] { &seen[0] } else { &seen[1] };
        assert_eq!(&r.best.values, best);

        let bad = EvolutionConfig { elites: 2, ..cfg.clone() };
        assert!(bad.validate().is_err());
        let mut calls = 0;
        let err = evolve(&cfg, 3, |_| {
            calls += 1;
            Ok(if calls == 2 { f64::INFINITY } else { 0.0 })
        });
        assert!(matches!(
            err,
            Err(Error::Evolution { generation: 0, genome: 1, value }) if value == f64::INFINITY
        ));
    }

    #[test]
    fn evolve_sphere() {
        let cfg = EvolutionConfig {
            population: 32,
            elites: 4,
            generations: 50,
            ..Default::default()
        };
        let r = evolve(&cfg, 4, |g| Ok(-g.iter().map(|v| v * v).sum::<f64>())).unwrap();
        assert!(r.history.windows(2).all(|w| w[1].best >= w[0].best));
        assert!(r.best.fitness.unwrap() > -0.01, "{:?}", r.best.fitness);
        assert_eq!(r.evaluations, 32 + 49 * 28);
        let csv = history_csv(&r.history);
        assert_eq!(csv.lines().count(), 51);
    }

    #[test]
    fn rollout_mode_checks_and_zero_controller() {
        let sim = SimConfig::default();
        let vae = vae_init(3, &[8], sim.width, 0).unwrap();
        let c = zeroed(ControllerParams::init(3, 4, [5, 5], 0).unwrap());
        let fake = spawn_fake_world(1, 2, &sim).unwrap();
        let r = rollout(&fake, Encoder::Vae(&vae), &c, 50, &sim).unwrap();
        assert_eq!(r.steps.len(), 50);
        assert_eq!(r.odometer, 0.0);
        assert!(!r.crashed);
        assert_eq!(r, rollout(&fake, Encoder::Vae(&vae), &c, 50, &sim).unwrap());
        let real = crate::worldsim::spawn_real_world(1, 0.2, false, &sim).unwrap();
        assert!(rollout(&real, Encoder::Vae(&vae), &c, 5, &sim).is_err());
    }
}
