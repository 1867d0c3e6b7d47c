//! Acceptance suite: runs every criterion and prints one PASS/FAIL line
//! each. Criteria 4-9 share two full default pipeline runs (same seed,
//! separate directories); each is charged the wall time of the first
//! run's stages it depends on.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use cheatlab::autodiff::{Activation, Tape, Tensor, Var};
use cheatlab::cheat::{cheat_encode, CheatEncoderParams, FrozenDigests};
use cheatlab::config::RunConfig;
use cheatlab::container::{params_digest, Checkpoint};
use cheatlab::evalviz::{belief_strip_bytes, eval_seeds, parse_pgm, ComparisonTable};
use cheatlab::expert::{fly_expert, read_dataset, ExpertConfig};
use cheatlab::pipeline::{artifact, run_command, Command, StageSummary};
use cheatlab::policy::{rollout, ControllerParams, Encoder};
use cheatlab::rng::{derive_seed, stream};
use cheatlab::vae::{encode_mu, VaeParams};
use cheatlab::worldsim::{
    render_observation, spawn_fake_world, spawn_real_world, step_dynamics, Action, DroneState, Observation,
    SimConfig, WorldKind, WorldSpec,
};
use rand::Rng;

type Verdict = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn report(id: usize, name: &str, budget: Duration, f: impl FnOnce() -> Verdict) -> bool {
    report_with(id, name, budget, Duration::ZERO, f)
}

/// `prior` is time already spent on this criterion elsewhere (training
/// stages run up front) and counts against the budget.
fn report_with(id: usize, name: &str, budget: Duration, prior: Duration, f: impl FnOnce() -> Verdict) -> bool {
    let t0 = Instant::now();
    let verdict = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    let took = prior + t0.elapsed();
    let (pass, detail) = match verdict {
        Ok(d) if took <= budget => (true, d),
        Ok(d) => (false, format!("{d}; over the {}s budget", budget.as_secs())),
        Err(d) => (false, d),
    };
    println!(
        "[{}] criterion {id}: {name}: {detail} ({:.1}s)",
        if pass { "PASS" } else { "FAIL" },
        took.as_secs_f64()
    );
    pass
}

// ---------------------------------------------------------------- gradients

/// Reduces any output to a scalar with fixed, non-uniform weights so every
/// output element reaches the loss.
fn to_loss(tape: &mut Tape, out: Var) -> Var {
    let n = tape.value(out).len();
    if n == 1 {
        return tape.sum(out).unwrap();
    }
    let dims = tape.value(out).dims().to_vec();
    let w: Vec<f64> = (0..n).map(|i| (1.3 * i as f64 + 0.7).sin() + 0.2).collect();
    let w = tape.leaf(Tensor::new(dims, w).unwrap());
    let m = tape.mul(out, w).unwrap();
    tape.sum(m).unwrap()
}

type Build = dyn Fn(&mut Tape, &[Var], &[Tensor]) -> Var;

/// Largest relative error between backward() and central differences over
/// the differentiable inputs.
fn grad_error(params: &[Tensor], consts: &[Tensor], build: &Build) -> f64 {
    let eval = |ps: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().enumerate().map(|(i, t)| tape.param(&format!("p{i}"), t.clone()).unwrap()).collect();
        let out = build(&mut tape, &vars, consts);
        let loss = to_loss(&mut tape, out);
        tape.value(loss).data()[0]
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().enumerate().map(|(i, t)| tape.param(&format!("p{i}"), t.clone()).unwrap()).collect();
    let out = build(&mut tape, &vars, consts);
    let loss = to_loss(&mut tape, out);
    let grads = tape.backward(loss).unwrap().into_named();

    let h = 1e-5;
    let (mut diff, mut scale) = (0.0f64, 0.0f64);
    for (i, p) in params.iter().enumerate() {
        let analytic = grads.get(&format!("p{i}")).unwrap().data().to_vec();
        for j in 0..p.len() {
            let mut plus = params.to_vec();
            plus[i].data_mut()[j] += h;
            let mut minus = params.to_vec();
            minus[i].data_mut()[j] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            diff += (analytic[j] - numeric).powi(2);
            scale += analytic[j].powi(2).max(numeric.powi(2));
        }
    }
    diff.sqrt() / scale.sqrt().max(1e-12)
}

fn criterion_gradients() -> Verdict {
    let mut worst: Vec<(&str, f64)> = Vec::new();
    type Case = (&'static str, fn(&mut rand_chacha::ChaCha8Rng) -> (Vec<Tensor>, Vec<Tensor>), Box<Build>);
    fn t(rng: &mut rand_chacha::ChaCha8Rng, dims: &[usize], lo: f64, hi: f64) -> Tensor {
        let n = dims.iter().product();
        Tensor::new(dims.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
    }
    fn away_from_zero(rng: &mut rand_chacha::ChaCha8Rng, dims: &[usize]) -> Tensor {
        let mut x = t(rng, dims, -2.0, 2.0);
        for v in x.data_mut() {
            *v = v.signum() * (0.05 + v.abs());
        }
        x
    }
    fn d(rng: &mut rand_chacha::ChaCha8Rng) -> usize {
        rng.random_range(1..5)
    }
    let cases: Vec<Case> = vec![
        ("affine", |r| {
            let (m, n) = (d(r), d(r));
            (vec![t(r, &[m, n], -1.0, 1.0), t(r, &[n], -1.0, 1.0), t(r, &[m], -1.0, 1.0)], vec![])
        }, Box::new(|tp, v, _| tp.affine(v[0], v[1], v[2]).unwrap())),
        ("affine batched", |r| {
            let (m, n, b) = (d(r), d(r), d(r));
            (vec![t(r, &[m, n], -1.0, 1.0), t(r, &[b, n], -1.0, 1.0), t(r, &[m], -1.0, 1.0)], vec![])
        }, Box::new(|tp, v, _| tp.affine(v[0], v[1], v[2]).unwrap())),
        ("tanh", |r| { let s = [d(r), d(r)]; (vec![t(r, &s, -2.0, 2.0)], vec![]) }, Box::new(|tp, v, _| tp.activation(Activation::Tanh, v[0]).unwrap())),
        ("sigmoid", |r| { let s = [d(r), d(r)]; (vec![t(r, &s, -3.0, 3.0)], vec![]) }, Box::new(|tp, v, _| tp.activation(Activation::Sigmoid, v[0]).unwrap())),
        ("relu", |r| { let n = d(r); (vec![away_from_zero(r, &[n, 3])], vec![]) }, Box::new(|tp, v, _| tp.activation(Activation::Relu, v[0]).unwrap())),
        ("exp", |r| { let s = [d(r)]; (vec![t(r, &s, -2.0, 2.0)], vec![]) }, Box::new(|tp, v, _| tp.activation(Activation::Exp, v[0]).unwrap())),
        ("concat", |r| { let (a, b) = ([d(r)], [d(r)]); (vec![t(r, &a, -1.0, 1.0), t(r, &b, -1.0, 1.0)], vec![]) }, Box::new(|tp, v, _| tp.concat(v[0], v[1]).unwrap())),
        ("slice", |r| { let s = [d(r), 6]; (vec![t(r, &s, -1.0, 1.0)], vec![]) }, Box::new(|tp, v, _| tp.slice(v[0], 2, 3).unwrap())),
        ("add", |r| { let s = [d(r), d(r)]; (vec![t(r, &s, -1.0, 1.0), t(r, &s, -1.0, 1.0)], vec![]) }, Box::new(|tp, v, _| tp.add(v[0], v[1]).unwrap())),
        ("mul", |r| { let s = [d(r), d(r)]; (vec![t(r, &s, -1.0, 1.0), t(r, &s, -1.0, 1.0)], vec![]) }, Box::new(|tp, v, _| tp.mul(v[0], v[1]).unwrap())),
        ("scale", |r| { let s = [d(r), d(r)]; (vec![t(r, &s, -1.0, 1.0)], vec![]) }, Box::new(|tp, v, _| tp.scale(v[0], -1.7).unwrap())),
        ("sum", |r| { let s = [d(r), d(r)]; (vec![t(r, &s, -1.0, 1.0)], vec![]) }, Box::new(|tp, v, _| tp.sum(v[0]).unwrap())),
        ("mse", |r| { let s = [d(r), d(r)]; (vec![t(r, &s, -1.0, 1.0)], vec![t(r, &s, -1.0, 1.0)]) }, Box::new(|tp, v, c| {
            let target = tp.leaf(c[0].clone());
            tp.mse(v[0], target).unwrap()
        })),
        ("gaussian_kl", |r| { let s = [d(r), d(r)]; (vec![t(r, &s, -1.0, 1.0), t(r, &s, -1.5, 1.0)], vec![]) }, Box::new(|tp, v, _| tp.gaussian_kl(v[0], v[1]).unwrap())),
    ];
    for (i, (name, gen, build)) in cases.iter().enumerate() {
        let mut max = 0.0f64;
        for sample in 0..100 {
            let mut rng = stream(i as u64, "acceptance-gradients", sample);
            let (params, consts) = gen(&mut rng);
            max = max.max(grad_error(&params, &consts, build.as_ref()));
        }
        worst.push((name, max));
    }
    let (name, err) = worst.iter().cloned().fold(("", 0.0), |a, b| if b.1 > a.1 { b } else { a });
    ensure(
        worst.iter().all(|(_, e)| *e < 1e-6),
        format!("{} primitives x 100 inputs, worst relative error {err:.2e} ({name})", worst.len()),
    )
}

// ---------------------------------------------------------------- simulator

/// Independent of the simulator's own collision test.
fn inside_inflated_obstacle(world: &WorldSpec, p: [f64; 2], r: f64) -> bool {
    let rect_hit = world.obstacles.iter().any(|o| {
        let dx = (o.min_x - p[0]).max(0.0).max(p[0] - o.max_x);
        let dy = (o.min_y - p[1]).max(0.0).max(p[1] - o.max_y);
        dx.hypot(dy) < r
    });
    let post_hit = world.gates.iter().any(|g| {
        let (s, c) = g.yaw.sin_cos();
        let (lx, ly) = (-s, c);
        let pr = g.frame_thickness / 2.0;
        // Post axes sit `half_width` either side of the center.
        [-1.0, 1.0].iter().any(|side: &f64| {
            let off = side * g.half_width;
            let q = [g.center[0] + off * lx, g.center[1] + off * ly];
            (p[0] - q[0]).hypot(p[1] - q[1]) < r + pr
        })
    });
    rect_hit || post_hit
}

fn observation_ok(o: &Observation, width: usize) -> bool {
    o.class.len() == width
        && o.depth.len() == width
        && o.class.iter().zip(&o.depth).all(|(&c, &d)| c <= 2 && (0.0..=1.0).contains(&d) && ((c == 0) == (d == 0.0)))
        && o.satisfies_invariants()
}

fn random_world(rng: &mut impl Rng, i: u64, sim: &SimConfig) -> WorldSpec {
    if i % 3 == 0 {
        spawn_fake_world(derive_seed(7, "audit-fake", i), sim.n_gates, sim).unwrap()
    } else {
        let density = rng.random_range(0.0..1.0);
        spawn_real_world(derive_seed(7, "audit-real", i), density, i % 3 == 1, sim).unwrap()
    }
}

fn random_pose(rng: &mut impl Rng, w: &WorldSpec) -> DroneState {
    let b = &w.bounds;
    let (x, y) = match w.obstacles.len() {
        n if n > 0 && rng.random_bool(0.5) => {
            let o = &w.obstacles[rng.random_range(0..n)];
            (rng.random_range(o.min_x - 0.5..o.max_x + 0.5), rng.random_range(o.min_y - 0.5..o.max_y + 0.5))
        }
        _ => (rng.random_range(b.min_x..b.max_x), rng.random_range(b.min_y..b.max_y)),
    };
    DroneState::at(x, y, rng.random_range(0.5..2.5), rng.random_range(-3.2..3.2))
}

fn criterion_simulator() -> Verdict {
    let sim = SimConfig::default();
    let mut rng = stream(7, "acceptance-audit", 0);
    let worlds: Vec<WorldSpec> = (0..60).map(|i| random_world(&mut rng, i, &sim)).collect();
    let (mut inside, mut missed) = (0, 0);
    for i in 0..10_000 {
        let w = &worlds[i % worlds.len()];
        let s = random_pose(&mut rng, w);
        let a = Action::new(
            rng.random_range(-3.0..3.0),
            rng.random_range(-3.0..3.0),
            rng.random_range(-3.0..3.0),
            rng.random_range(-2.0..2.0),
        );
        let next = step_dynamics(w, &s, a, sim.dt, &sim).unwrap();
        if inside_inflated_obstacle(w, [next.position[0], next.position[1]], sim.collision_radius) {
            inside += 1;
            missed += !next.crashed as usize;
        }
    }
    let mut bad_obs = 0;
    for i in 0..10_000 {
        let w = &worlds[i % worlds.len()];
        let s = random_pose(&mut rng, w);
        bad_obs += !observation_ok(&render_observation(w, &s, &sim), sim.width) as usize;
    }
    ensure(
        missed == 0 && bad_obs == 0 && inside > 0,
        format!("{inside} of 10000 steps ended inside an inflated obstacle, {missed} not crashed; {bad_obs} of 10000 renders broke an invariant"),
    )
}

// ---------------------------------------------------------------- expert

fn criterion_expert() -> Verdict {
    let sim = SimConfig::default();
    let cfg = ExpertConfig::default();
    let (mut crashes, mut gates) = (0, 0);
    for i in 0..100 {
        let world = spawn_fake_world(derive_seed(11, "acceptance-expert", i), sim.n_gates, &sim).unwrap();
        let ep = fly_expert(&world, 2000, 0, &cfg, &sim).unwrap();
        crashes += ep.crashed as usize;
        gates += ep.gates_passed;
    }
    let mean = gates as f64 / 100.0;
    ensure(
        crashes == 0 && mean >= sim.n_gates as f64,
        format!("100 fake worlds, {crashes} crashes, mean gates {mean:.2} of {}", sim.n_gates),
    )
}

// ---------------------------------------------------------------- pipeline

struct Runs {
    a: tempfile::TempDir,
    b: tempfile::TempDir,
    cfg: RunConfig,
    /// Wall time of each stage in the first run.
    stage_time: Vec<(Command, Duration)>,
    outcome: Result<(), String>,
}

impl Runs {
    fn time_of(&self, stages: &[Command]) -> Duration {
        self.stage_time.iter().filter(|(c, _)| stages.contains(c)).map(|(_, t)| *t).sum()
    }
}

fn pipeline_runs() -> Runs {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = RunConfig::default();
    let mut stage_time = Vec::new();
    let outcome = [a.path(), b.path()].iter().enumerate().try_for_each(|(run, dir)| {
        let mut c = cfg.clone();
        c.out_dir = dir.to_path_buf();
        let t0 = Instant::now();
        for stage in Command::STAGES {
            let t = Instant::now();
            run_command(stage, &c).map_err(|e| e.to_string())?;
            if run == 0 {
                stage_time.push((stage, t.elapsed()));
            }
        }
        println!("pipeline run {} in {:.0}s", run + 1, t0.elapsed().as_secs_f64());
        Ok::<(), String>(())
    });
    Runs { a, b, cfg, stage_time, outcome }
}

fn summary(dir: &Path, c: Command) -> StageSummary {
    StageSummary::load(&dir.join(c.summary_file())).unwrap()
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut r = vec![0.0; v.len()];
    let mut k = 0;
    while k < idx.len() {
        let mut e = k;
        while e + 1 < idx.len() && v[idx[e + 1]] == v[idx[k]] {
            e += 1;
        }
        for &i in &idx[k..=e] {
            r[i] = (k + e) as f64 / 2.0;
        }
        k = e + 1;
    }
    r
}

fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn load_vae(dir: &Path) -> VaeParams {
    VaeParams::from_params(Checkpoint::load(&dir.join(artifact::VAE)).unwrap().params).unwrap()
}

fn load_controller(dir: &Path) -> ControllerParams {
    ControllerParams::from_params(Checkpoint::load(&dir.join(artifact::CONTROLLER)).unwrap().params).unwrap()
}

fn load_cheat(dir: &Path) -> Checkpoint {
    Checkpoint::load(&dir.join(artifact::CHEAT)).unwrap()
}

fn criterion_vae(r: &Runs) -> Verdict {
    let dir = r.a.path();
    let data = read_dataset(&dir.join(artifact::FAKE_DATA)).unwrap();
    let s = summary(dir, Command::TrainVae);
    let ratio = s.metric("loss_ratio").unwrap();
    let vae = load_vae(dir);
    let obs: Vec<&Observation> = data.observations().collect();
    let mut rng = stream(4, "acceptance-pairs", 0);
    let (mut dz, mut dx) = (Vec::new(), Vec::new());
    for _ in 0..100 {
        let (a, b) = (obs[rng.random_range(0..obs.len())], obs[rng.random_range(0..obs.len())]);
        dz.push(l2(&encode_mu(&vae, a).unwrap(), &encode_mu(&vae, b).unwrap()));
        dx.push(l2(&a.to_input(), &b.to_input()));
    }
    let rho = spearman(&dz, &dx);
    ensure(
        obs.len() == 2000 && vae.k() == 8 && s.metric("epochs") == Some(200.0) && ratio <= 0.5 && rho > 0.3,
        format!("{} observations, final/epoch-1 loss {ratio:.3}, Spearman {rho:.3}", obs.len()),
    )
}

fn criterion_policy(r: &Runs) -> Verdict {
    let dir = r.a.path();
    let csv = std::fs::read_to_string(dir.join(artifact::EVOLUTION)).unwrap();
    let best: Vec<f64> = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    let monotone = best.windows(2).all(|w| w[1] >= w[0]);
    let s = summary(dir, Command::TrainPolicy);
    let ratio = s.metric("error_ratio").unwrap();

    let (vae, controller, sim) = (load_vae(dir), load_controller(dir), &r.cfg.sim);
    let mut gates = 0;
    let mut crashes = 0;
    for i in 0..20 {
        let world = spawn_fake_world(derive_seed(5, "acceptance-heldout", i), sim.n_gates, sim).unwrap();
        let ro = rollout(&world, Encoder::Vae(&vae), &controller, 2000, sim).unwrap();
        gates += ro.gates_passed;
        crashes += ro.crashed as usize;
    }
    let mean = gates as f64 / 20.0;
    ensure(
        best.len() == r.cfg.evo.generations && monotone && ratio <= 0.25 && mean >= 2.0,
        format!(
            "{} generations, best-so-far nondecreasing: {monotone}, error {ratio:.3} of zero genome, held-out mean gates {mean:.2} ({crashes}/20 crashed)",
            best.len()
        ),
    )
}

fn criterion_frozen(r: &Runs) -> Verdict {
    let mut lines = Vec::new();
    for dir in [r.a.path(), r.b.path()] {
        let s = summary(dir, Command::TrainCheat);
        let before: FrozenDigests = serde_json::from_value(s.metrics["frozen_before"].clone()).unwrap();
        let after: FrozenDigests = serde_json::from_value(s.metrics["frozen_after"].clone()).unwrap();
        let on_disk = FrozenDigests::of(&load_vae(dir), &load_controller(dir));
        let recorded: FrozenDigests = serde_json::from_value(load_cheat(dir).metadata["frozen_digests"].clone()).unwrap();
        // The files the cheat stage read are the ones the training stages wrote.
        let produced = |c: Command, name: &str| summary(dir, c).outputs.into_iter().find(|o| o.path == name).unwrap().digest;
        let read = |name: &str| s.inputs.iter().find(|o| o.path == name).unwrap().digest.clone();
        let chain = read(artifact::VAE) == produced(Command::TrainVae, artifact::VAE)
            && read(artifact::CONTROLLER) == produced(Command::TrainPolicy, artifact::CONTROLLER);
        lines.push(before == after && after == on_disk && on_disk == recorded && chain);
    }
    ensure(lines.iter().all(|&ok| ok), format!("digests equal before/after/on disk per run: {lines:?}"))
}

/// Mean distances in the reference results table of the source write-up,
/// read from the document itself.
fn reference_distances() -> Option<(f64, f64)> {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../paper.md")).ok()?;
    let value = |row: &str| -> Option<f64> {
        let line = text.lines().find(|l| l.trim_start().starts_with(row))?;
        line.split('&').nth(1)?.trim().trim_end_matches("\\\\").trim().parse().ok()
    };
    Some((value("{Ours}")?, value("{Regression}")?))
}

fn criterion_transfer(r: &Runs) -> Verdict {
    let (ours, regression) = reference_distances().ok_or("reference table not found")?;
    let reference = ours / regression;
    let table = ComparisonTable::from_csv(&std::fs::read_to_string(r.a.path().join(artifact::EVAL_CSV)).unwrap()).unwrap();
    let m = |k: &str| table.row(k).unwrap().mean_distance_m;
    let (cheat, base, random) = (m("cheat"), m("baseline"), m("random"));
    let episodes = table.row("cheat").unwrap().episodes;
    ensure(
        (ours, regression) == (14.86, 15.43)
            && reference >= 0.6
            && episodes == 50
            && cheat >= 0.6 * base
            && cheat >= 2.0 * random
            && base >= 2.0 * random,
        format!(
            "{episodes} real worlds: cheat {cheat:.2} m, baseline {base:.2} m (ratio {:.2}, reference {reference:.3}), random {random:.2} m",
            cheat / base
        ),
    )
}

fn criterion_determinism(r: &Runs) -> Verdict {
    let mut names: Vec<String> = std::fs::read_dir(r.a.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".lclb") || n.ends_with(".csv") || n.ends_with(".lcld"))
        .collect();
    names.sort();
    let differing: Vec<&String> = names
        .iter()
        .filter(|n| std::fs::read(r.a.path().join(n)).unwrap() != std::fs::read(r.b.path().join(n)).unwrap())
        .collect();
    ensure(
        names.iter().any(|n| n == artifact::EVAL_CSV) && differing.is_empty(),
        format!("{} checkpoints, datasets and CSVs compared, differing: {differing:?}", names.len()),
    )
}

fn criterion_belief(r: &Runs) -> Verdict {
    let (dir, cfg) = (r.a.path(), &r.cfg);
    let bytes = std::fs::read(dir.join(artifact::BELIEF)).unwrap();
    let stable = bytes == std::fs::read(r.b.path().join(artifact::BELIEF)).unwrap();
    let pgm = parse_pgm(&bytes).unwrap();
    let viz = summary(dir, Command::Viz);
    let steps = viz.metric("rollout_steps").unwrap() as usize;
    let tiles = steps.div_ceil(cfg.viz.stride);
    let dims_ok = pgm.width == tiles * cfg.sim.width && pgm.height == 2 * cfg.viz.band_height && pgm.pixels.len() == pgm.width * pgm.height;

    // Re-render from the checkpoints and confirm emission leaves every
    // model untouched.
    let (vae, controller) = (load_vae(dir), load_controller(dir));
    let cheat = CheatEncoderParams::from_params(load_cheat(dir).params).unwrap();
    let before = (FrozenDigests::of(&vae, &controller), params_digest(cheat.params()));
    let seed = eval_seeds(cfg.seed, cfg.viz.episode + 1)[cfg.viz.episode];
    let world = spawn_real_world(seed, cfg.eval.density, false, &cfg.sim).unwrap();
    let trace = rollout(&world, Encoder::Cheat(&cheat), &controller, cfg.viz.max_steps, &cfg.sim).unwrap();
    let (again, _) = belief_strip_bytes(&trace, &cheat, &vae, cfg.viz.stride, cfg.viz.band_height).unwrap();
    let after = (FrozenDigests::of(&vae, &controller), params_digest(cheat.params()));
    let _ = cheat_encode(&cheat, &trace.steps[0].observation).unwrap();
    ensure(
        stable && dims_ok && again == bytes && before == after && world.kind == WorldKind::Real,
        format!(
            "{}x{} PGM with {tiles} tiles, byte-stable across runs: {stable}, re-render identical: {}, digests unchanged: {}",
            pgm.width,
            pgm.height,
            again == bytes,
            before == after
        ),
    )
}

fn main() {
    let min = |m: u64| Duration::from_secs(60 * m);
    let mut all = Vec::new();
    all.push(report(1, "gradient integrity", min(1), criterion_gradients));
    all.push(report(2, "simulator audit", min(1), criterion_simulator));
    all.push(report(3, "expert validity", min(2), criterion_expert));

    let runs = pipeline_runs();
    let needs_runs = |f: fn(&Runs) -> Verdict| {
        let runs = &runs;
        move || match &runs.outcome {
            Ok(()) => f(runs),
            Err(e) => Err(format!("pipeline failed: {e}")),
        }
    };
    use Command::*;
    let spent = |stages: &[Command]| runs.time_of(stages);
    all.push(report_with(4, "VAE training", min(10), spent(&[GenFakeData, TrainVae]), needs_runs(criterion_vae)));
    all.push(report_with(5, "policy training", min(20), spent(&[GenExpert, TrainPolicy]), needs_runs(criterion_policy)));
    all.push(report_with(6, "frozen-weight contract", min(1), Duration::ZERO, needs_runs(criterion_frozen)));
    let transfer = spent(&[BuildPairs, TrainCheat, GenRealData, TrainBaseline, Eval]);
    all.push(report_with(7, "transfer headline", min(15), transfer, needs_runs(criterion_transfer)));
    all.push(report_with(8, "determinism", min(1), Duration::ZERO, needs_runs(criterion_determinism)));
    all.push(report_with(9, "belief strip", min(1), spent(&[Viz]), needs_runs(criterion_belief)));

    let passed = all.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} criteria passed", all.len());
    if passed != all.len() {
        std::process::exit(1);
    }
}
