use std::path::Path;
use std::process::{Command, Output};

use goal_cli::Profile;
use goal_core::instance::{generate_instance, GeneratorConfig, ProblemKind};
use goal_core::model::{list_checkpoints, TrainedModel};
use goal_core::oracle::{read_dataset, Split};
use goal_core::schedule::is_feasible;
use goal_service::SolveResponse;

fn goal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_goal"))
        .args(args)
        .env_remove("GOAL_DATA_DIR")
        .env_remove("GOAL_CHECKPOINT_DIR")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = goal(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn profiles_match_documented_settings() {
    let desk = Profile::Desk.spec();
    assert_eq!((desk.model.denoiser.hidden, desk.model.denoiser.layers, desk.model.horizon), (32, 4, 200));
    assert_eq!((desk.train.epochs, desk.train.batch_size), (40, 32));
    let paper = Profile::Paper.spec();
    assert_eq!((paper.model.denoiser.hidden, paper.model.denoiser.layers, paper.model.horizon), (128, 12, 1000));
    assert_eq!((paper.train.epochs, paper.train.batch_size), (25, 64));
    assert_eq!(paper.train.lr, 1e-4);
}

#[test]
fn help_lists_flags_and_usage_errors_exit_2() {
    let help = ok(&["gen", "--help"]);
    for flag in ["--kind", "--jobs", "--machines", "--instances", "--test-instances", "--limit", "--seed", "--out"] {
        assert!(help.contains(flag), "missing {flag}");
    }
    let help = ok(&["sample", "--help"]);
    for flag in ["--checkpoint", "--instance", "--cmax", "--resilience", "--candidates", "--guidance", "--steps", "--schedule", "--seed"] {
        assert!(help.contains(flag), "missing {flag}");
    }
    assert!(ok(&["serve", "--help"]).contains("--port"));
    let out = goal(&["gen", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(goal(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(goal(&["gen", "--kind", "tsp"]).status.code(), Some(2));
}

#[test]
fn runtime_failures_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = goal(&["train", "--data", s(&dir.path().join("missing"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    let out = goal(&["gen", "--jobs", "50", "--instances", "1", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn gen_writes_expected_sample_count_reproducibly() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = |out: &Path| {
        ["gen", "--kind", "jsp", "--jobs", "5", "--machines", "3", "--instances", "10", "--limit", "50", "--seed", "1", "--out"]
            .iter()
            .map(|x| x.to_string())
            .chain([s(out).to_string()])
            .collect::<Vec<_>>()
    };
    let run = |out: &Path| ok(&args(out).iter().map(String::as_str).collect::<Vec<_>>());
    run(a.path());
    run(b.path());
    let shard = read_dataset(a.path(), Split::Train).unwrap();
    assert_eq!(shard.len(), 500);
    assert_eq!(shard.instances.len(), 10);
    for name in ["manifest.json", "instances-train.jsonl", "samples-train.jsonl"] {
        assert_eq!(std::fs::read(a.path().join(name)).unwrap(), std::fs::read(b.path().join(name)).unwrap(), "{name}");
    }
}

#[test]
fn gen_train_sample_eval_bench_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let ckpts = dir.path().join("ckpt");
    ok(&["gen", "--kind", "jsp,fsp", "--jobs", "3", "--machines", "3", "--instances", "4", "--test-instances", "2", "--limit", "8", "--seed", "3", "--out", s(&data)]);
    let train = read_dataset(&data, Split::Train).unwrap();
    assert_eq!(train.instances.len(), 8);
    assert_eq!(read_dataset(&data, Split::Test).unwrap().instances.len(), 4);

    let printed = ok(&["train", "--data", s(&data), "--profile", "desk", "--epochs", "1", "--seed", "5", "--out", s(&ckpts)]);
    let path = Path::new(printed.trim()).to_path_buf();
    assert_eq!(list_checkpoints(&ckpts).unwrap(), vec![path.clone()]);
    let model = TrainedModel::load(&path).unwrap();
    assert_eq!((model.config.denoiser.hidden, model.config.denoiser.layers, model.config.horizon), (32, 4, 200));
    assert_eq!(model.meta.kinds, vec![ProblemKind::Fsp, ProblemKind::Jsp]);
    assert_eq!(model.meta.sizes, vec!["3x3".to_string()]);
    assert_eq!(model.meta.epoch_loss.len(), 1);
    assert!(path.file_name().unwrap().to_str().unwrap().contains(&model.id));
    let loss = std::fs::read_to_string(path.with_extension("loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 2);

    // same seed, same checkpoint
    let again = dir.path().join("again");
    let printed = ok(&["train", "--data", s(&data), "--epochs", "1", "--seed", "5", "--out", s(&again)]);
    assert_eq!(TrainedModel::load(Path::new(printed.trim())).unwrap().id, model.id);

    let inst = generate_instance(&GeneratorConfig::new(ProblemKind::Jsp, 3, 3, 8), 0).unwrap();
    let inst_path = dir.path().join("inst.json");
    std::fs::write(&inst_path, serde_json::to_string(&inst).unwrap()).unwrap();
    let args = ["sample", "--checkpoint", s(&path), "--instance", s(&inst_path), "--cmax", "12", "--resilience", "0.3", "--candidates", "32", "--steps", "5"];
    let resp: SolveResponse = serde_json::from_str(&ok(&args)).unwrap();
    assert_eq!(resp.candidates.len(), 32);
    assert_eq!(resp.checkpoint_id, model.id);
    assert!(resp.candidates.iter().all(|c| is_feasible(&c.schedule, &inst).feasible));
    let again: SolveResponse = serde_json::from_str(&ok(&args)).unwrap();
    let key = |r: &SolveResponse| r.candidates.iter().map(|c| c.schedule.clone()).collect::<Vec<_>>();
    assert_eq!(key(&again), key(&resp));

    let fjsp = generate_instance(&GeneratorConfig::new(ProblemKind::Fjsp, 3, 3, 8), 0).unwrap();
    std::fs::write(&inst_path, serde_json::to_string(&fjsp).unwrap()).unwrap();
    assert_eq!(goal(&args).status.code(), Some(1));

    let report = dir.path().join("report");
    ok(&["eval", "--checkpoint-dir", s(&ckpts), "--kind", "jsp,fsp", "--sizes", "3x3", "--instances", "2", "--limit", "8", "--candidates", "4", "--steps", "4", "--out", s(&report)]);
    let csv = std::fs::read_to_string(report.join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2);
    assert!(report.join("records.json").exists() && report.join("time_to_target.csv").exists());

    let bench = dir.path().join("bench");
    ok(&[
        "bench", "--checkpoint", s(&path), "--sizes", "3x3", "--instances", "2", "--limit", "8", "--candidates", "4", "--steps", "4", "--population", "8",
        "--generations", "5", "--out", s(&bench),
    ]);
    let csv = std::fs::read_to_string(bench.join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3);
    assert!(csv.contains("nsga2") && csv.contains("moead") && csv.contains("goal"));
}

#[test]
fn env_var_overrides_directories() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_goal"))
        .args(["gen", "--jobs", "2", "--machines", "2", "--instances", "2", "--limit", "3"])
        .env("GOAL_DATA_DIR", dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(read_dataset(dir.path(), Split::Train).unwrap().instances.len(), 2);
}
