use std::collections::HashMap;
use std::path::Path;

use cheatlab::config::RunConfig;
use cheatlab::container::{file_digest, Checkpoint};
use cheatlab::evalviz::{parse_pgm, ComparisonTable};
use cheatlab::pipeline::{artifact, run_command, Command, StageSummary};
use cheatlab::Error;

const TINY: &[&str] = &[
    "sim.width=16",
    "fake_data.episodes=2",
    "fake_data.max_steps=40",
    "fake_data.observations=60",
    "vae.epochs=3",
    "vae.hidden=16",
    "vae.k=4",
    "expert_data.episodes=2",
    "expert_data.max_steps=40",
    "policy.h_dim=4",
    "policy.mlp=8,8",
    "policy.heldout_worlds=2",
    "policy.heldout_max_steps=100",
    "evo.population=6",
    "evo.elites=2",
    "evo.generations=3",
    "pairs.n_poses=20",
    "pairs.poses_per_world=10",
    "cheat.epochs=3",
    "cheat.hidden=16",
    "real_data.episodes=2",
    "real_data.max_steps=30",
    "baseline.epochs=3",
    "baseline.hidden=16",
    "eval.seeds=3",
    "eval.max_steps=100",
    "viz.max_steps=50",
    "viz.stride=10",
];

fn tiny(out: &Path) -> RunConfig {
    let mut c = RunConfig::default();
    c.apply_overrides(TINY).unwrap();
    c.set("out_dir", out.to_str().unwrap()).unwrap();
    c.validate().unwrap();
    c
}

const CHECKPOINTS: [&str; 4] = [artifact::VAE, artifact::CONTROLLER, artifact::CHEAT, artifact::BASELINE];

#[test]
fn pipeline_chain_and_determinism() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let summaries = run_command(Command::Pipeline, &tiny(a.path())).unwrap();
    assert_eq!(summaries.len(), Command::STAGES.len());

    // Every recorded input digest equals the digest the producing stage
    // recorded for that file, and the file on disk still has it.
    let mut produced: HashMap<String, String> = HashMap::new();
    for s in &summaries {
        for i in &s.inputs {
            assert_eq!(produced.get(&i.path), Some(&i.digest), "{} input {}", s.stage, i.path);
        }
        for o in &s.outputs {
            produced.insert(o.path.clone(), o.digest.clone());
        }
    }
    for (path, digest) in &produced {
        assert_eq!(&file_digest(&a.path().join(path)).unwrap(), digest, "{path}");
    }
    for c in Command::STAGES {
        let s = StageSummary::load(&a.path().join(c.summary_file())).unwrap();
        assert_eq!(s.stage, c.name());
    }

    run_command(Command::Pipeline, &tiny(b.path())).unwrap();
    for name in CHECKPOINTS.iter().chain(&[artifact::EVAL_CSV, artifact::BELIEF, artifact::PAIRS]) {
        let x = std::fs::read(a.path().join(name)).unwrap();
        let y = std::fs::read(b.path().join(name)).unwrap();
        assert!(x == y, "{name} differs between runs");
    }

    let table = ComparisonTable::from_csv(&std::fs::read_to_string(a.path().join(artifact::EVAL_CSV)).unwrap()).unwrap();
    assert_eq!(table.rows.len(), 4);
    assert!(table.rows.iter().all(|r| r.episodes == 3));

    let pgm = parse_pgm(&std::fs::read(a.path().join(artifact::BELIEF)).unwrap()).unwrap();
    let viz = summaries.last().unwrap();
    assert_eq!(pgm.width as f64, viz.metric("width").unwrap());
    assert_eq!(pgm.height, 2 * 8);

    let cheat = Checkpoint::load(&a.path().join(artifact::CHEAT)).unwrap();
    assert!(cheat.metadata.contains_key("frozen_digests"));
    let config = cheat.metadata["config"].as_object().unwrap();
    assert!(!config.contains_key("out_dir"));
}

#[test]
fn stages_refuse_missing_prerequisites() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    for (cmd, missing) in [
        (Command::Eval, artifact::CONTROLLER),
        (Command::TrainVae, artifact::FAKE_DATA),
        (Command::TrainPolicy, artifact::VAE),
        (Command::TrainCheat, artifact::PAIRS),
        (Command::TrainBaseline, artifact::REAL_DATA),
        (Command::Viz, artifact::VAE),
    ] {
        let err = run_command(cmd, &cfg).unwrap_err();
        match err.root() {
            Error::Dependency(p) => assert!(p.ends_with(missing), "{cmd}: {}", p.display()),
            other => panic!("{cmd}: {other}"),
        }
        assert!(err.to_string().starts_with(cmd.name()), "{err}");
    }
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn tampered_frozen_checkpoint_stops_eval() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    for c in &Command::STAGES[..8] {
        run_command(*c, &cfg).unwrap();
    }
    // Retrain the controller with a different seed; the cheat encoder's
    // recorded digests no longer match.
    let mut other = cfg.clone();
    other.seed = 99;
    run_command(Command::TrainPolicy, &other).unwrap();
    let err = run_command(Command::Eval, &cfg).unwrap_err();
    assert!(matches!(err.root(), Error::FrozenViolation(_)), "{err}");
}

#[test]
fn invalid_config_runs_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    cfg.evo.elites = cfg.evo.population;
    assert!(matches!(run_command(Command::GenFakeData, &cfg), Err(Error::Config { .. })));
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}
