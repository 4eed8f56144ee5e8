//! Command-line driver: dataset generation, training, sampling, evaluation
//! and the HTTP service.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use goal_core::denoiser::DenoiserConfig;
use goal_core::diffusion::{train, SamplerConfig, TauKind, TrainConfig};
use goal_core::eval::{plot_data, run_benchmark, size_label, write_records_json, write_rows, BenchmarkConfig, Method, REPORT_EPSILONS};
use goal_core::instance::{GeneratorConfig, Instance, ProblemKind, ValueSet};
use goal_core::numerics::content_id;
use goal_core::model::{list_checkpoints, ModelConfig, ModelMeta, TrainedModel, CHECKPOINT_EXT};
use goal_core::oracle::{build_split, read_dataset, write_dataset, DatasetShard, Split};
use goal_core::schedule::ObjectiveVector;
use goal_service::{solve_blocking, AppState, SolveRequest, DEFAULT_PORT};

#[derive(Debug, Parser)]
#[command(name = "goal", version, about = "Target-conditioned diffusion scheduler", propagate_version = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate instances and label them with oracle schedules.
    Gen(GenArgs),
    /// Train a denoiser checkpoint on a generated dataset.
    Train(TrainArgs),
    /// Sample schedules for one instance and target.
    Sample(SampleArgs),
    /// Evaluate checkpoints on held-out (instance, target) pairs.
    Eval(EvalArgs),
    /// Compare checkpoints against the search baselines.
    Bench(EvalArgs),
    /// Serve the JSON API.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Profile {
    Desk,
    Paper,
}

/// Architecture and optimizer settings of a named profile.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileSpec {
    pub name: &'static str,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Profile {
    pub fn spec(self) -> ProfileSpec {
        match self {
            Profile::Desk => ProfileSpec {
                name: "desk",
                model: ModelConfig {
                    denoiser: DenoiserConfig::desk(),
                    horizon: 200,
                },
                train: TrainConfig {
                    epochs: 40,
                    batch_size: 32,
                    lr: DESK_LR,
                    ..TrainConfig::default()
                },
            },
            Profile::Paper => ProfileSpec {
                name: "paper",
                model: ModelConfig {
                    denoiser: DenoiserConfig::paper(),
                    horizon: 1000,
                },
                train: TrainConfig {
                    epochs: 25,
                    batch_size: 64,
                    ..TrainConfig::default()
                },
            },
        }
    }
}

/// The small model tolerates a larger step than the full-size one.
pub const DESK_LR: f64 = 1e-3;

fn default_data_dir() -> PathBuf {
    PathBuf::from("data")
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Problem kinds; one shard per kind.
    #[arg(long, value_delimiter = ',', default_value = "jsp")]
    pub kind: Vec<ProblemKind>,
    /// Job count or set, e.g. `5`, `4..6`, `4,6`.
    #[arg(long, default_value = "5")]
    pub jobs: ValueSet,
    /// Machine count or set, e.g. `3`, `4,5,6,8,10`.
    #[arg(long, default_value = "3")]
    pub machines: ValueSet,
    /// Training instances per kind.
    #[arg(long, default_value_t = 200)]
    pub instances: usize,
    /// Held-out instances per kind.
    #[arg(long, default_value_t = 0)]
    pub test_instances: usize,
    /// Oracle schedules per instance.
    #[arg(long, default_value_t = 50)]
    pub limit: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long, env = "GOAL_DATA_DIR", default_value_os_t = default_data_dir())]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory written by `gen`.
    #[arg(long, env = "GOAL_DATA_DIR", default_value_os_t = default_data_dir())]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = Profile::Desk)]
    pub profile: Profile,
    /// Overrides the profile's epoch count.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Overrides the profile's batch size.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Overrides the profile's learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Checkpoint directory; the file is named after the profile and content id.
    #[arg(long, env = "GOAL_CHECKPOINT_DIR", default_value = "checkpoints")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SamplerArgs {
    /// Candidates per query.
    #[arg(long, default_value_t = 32)]
    pub candidates: usize,
    /// Guidance weight; 1 disables the unconditional pass.
    #[arg(long, default_value_t = 2.0)]
    pub guidance: f64,
    /// Reverse steps.
    #[arg(long, default_value_t = 20)]
    pub steps: usize,
    /// Timestep subsequence: `linear` or `cosine`.
    #[arg(long, default_value = "cosine")]
    pub schedule: TauKind,
}

impl SamplerArgs {
    fn sampler(&self) -> SamplerConfig {
        SamplerConfig {
            steps: self.steps,
            schedule: self.schedule,
            guidance: self.guidance,
            ..SamplerConfig::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Instance JSON file.
    #[arg(long)]
    pub instance: PathBuf,
    /// Target makespan.
    #[arg(long)]
    pub cmax: f64,
    /// Target resilience.
    #[arg(long)]
    pub resilience: f64,
    #[command(flatten)]
    pub sampler: SamplerArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint files; every checkpoint in `--checkpoint-dir` when absent.
    #[arg(long, value_delimiter = ',')]
    pub checkpoint: Vec<PathBuf>,
    #[arg(long, env = "GOAL_CHECKPOINT_DIR", default_value = "checkpoints")]
    pub checkpoint_dir: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "jsp")]
    pub kind: Vec<ProblemKind>,
    /// Sizes as `JxM`, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "5x3")]
    pub sizes: Vec<String>,
    /// Methods; `eval` defaults to goal, `bench` to all three.
    #[arg(long, value_delimiter = ',')]
    pub methods: Vec<Method>,
    /// Evaluation instances per (kind, size).
    #[arg(long, default_value_t = 50)]
    pub instances: usize,
    #[arg(long, default_value_t = 1)]
    pub targets_per_instance: usize,
    /// Generator seed shared with the training data.
    #[arg(long, default_value_t = 0)]
    pub generator_seed: u64,
    /// Generator index of the first evaluation instance.
    #[arg(long, default_value_t = 1_000_000)]
    pub first_index: u64,
    /// Oracle schedules per instance from which targets are drawn.
    #[arg(long, default_value_t = 50)]
    pub limit: usize,
    #[command(flatten)]
    pub sampler: SamplerArgs,
    #[arg(long, default_value_t = 100)]
    pub population: usize,
    #[arg(long, default_value_t = 500)]
    pub generations: usize,
    /// Stop search baselines once every tracked tolerance is hit.
    #[arg(long)]
    pub stop_when_hit: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Report directory.
    #[arg(long, default_value = "report")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = DEFAULT_PORT)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: std::net::IpAddr,
    /// Checkpoint files; every checkpoint in `--checkpoint-dir` when absent.
    #[arg(long, value_delimiter = ',')]
    pub checkpoint: Vec<PathBuf>,
    #[arg(long, env = "GOAL_CHECKPOINT_DIR", default_value = "checkpoints")]
    pub checkpoint_dir: PathBuf,
    /// Directory of static UI assets served outside `/api`.
    #[arg(long = "static")]
    pub static_dir: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(a) => gen(&a).map(|_| ()),
        Command::Train(a) => train_cmd(&a).map(|_| ()),
        Command::Sample(a) => sample_cmd(&a),
        Command::Eval(a) => eval_cmd(&a, &[Method::Goal]),
        Command::Bench(a) => eval_cmd(&a, &[Method::Goal, Method::Nsga2, Method::Moead]),
        Command::Serve(a) => serve_cmd(&a),
    }
}

/// Writes one train shard per kind (plus test shards when requested);
/// returns the manifest path.
pub fn gen(a: &GenArgs) -> Result<PathBuf> {
    let mut shards = Vec::new();
    let mut tests = Vec::new();
    for &kind in &a.kind {
        let cfg = GeneratorConfig {
            jobs: a.jobs.clone(),
            machines: a.machines.clone(),
            ..GeneratorConfig::new(kind, 1, 1, a.seed)
        };
        cfg.check_padding()?;
        let (train_shard, test_shard) = build_split(&cfg, a.instances, a.test_instances, a.limit, a.seed)?;
        eprintln!("{kind}: {} train samples over {} instances", train_shard.len(), train_shard.instances.len());
        shards.push(train_shard);
        if a.test_instances > 0 {
            tests.push(test_shard);
        }
    }
    shards.extend(tests);
    Ok(write_dataset(&a.out, &shards)?)
}

/// Kinds and `JxM` sizes present in a shard, sorted.
pub fn coverage(data: &DatasetShard) -> (Vec<ProblemKind>, Vec<String>) {
    let mut kinds: Vec<ProblemKind> = data.instances.iter().map(|i| i.kind).collect();
    kinds.sort_by_key(|k| *k as u8);
    kinds.dedup();
    let mut sizes: Vec<String> = data.instances.iter().map(|i| size_label(i.n_jobs, i.n_machines)).collect();
    sizes.sort();
    sizes.dedup();
    (kinds, sizes)
}

/// Trains on `data` and returns the model with its metadata filled in.
pub fn train_model(spec: &ProfileSpec, cfg: &TrainConfig, data: &DatasetShard) -> Result<TrainedModel> {
    let (kinds, sizes) = coverage(data);
    let mut model_cfg = spec.model.clone();
    model_cfg.denoiser.seed = cfg.seed;
    let meta = ModelMeta {
        profile: spec.name.into(),
        kinds,
        sizes,
        epochs: cfg.epochs,
        train_samples: data.len(),
        epoch_loss: Vec::new(),
    };
    let mut tm = TrainedModel::new(model_cfg, meta)?;
    let mut progress = |epoch: usize, loss: f64| eprintln!("epoch {:>3}/{} loss {loss:.5}", epoch + 1, cfg.epochs);
    let report = train(&mut tm.model, data, &tm.noise, cfg, Some(&mut progress))?;
    tm.meta.epoch_loss = report.epoch_loss;
    Ok(tm)
}

/// Trains, saves `<profile>-<id>.ckpt` plus a `.loss.csv` log, and returns
/// the checkpoint path.
pub fn train_cmd(a: &TrainArgs) -> Result<PathBuf> {
    let spec = a.profile.spec();
    let mut cfg = spec.train.clone();
    cfg.epochs = a.epochs.unwrap_or(cfg.epochs);
    cfg.batch_size = a.batch_size.unwrap_or(cfg.batch_size);
    cfg.lr = a.lr.unwrap_or(cfg.lr);
    cfg.seed = a.seed;
    let data = read_dataset(&a.data, Split::Train).with_context(|| format!("reading dataset in {}", a.data.display()))?;
    if data.is_empty() {
        bail!("no training samples in {}", a.data.display());
    }
    let mut tm = train_model(&spec, &cfg, &data)?;
    std::fs::create_dir_all(&a.out)?;
    let id = content_id(&tm.to_bytes()?);
    let path = a.out.join(format!("{}-{id}.{CHECKPOINT_EXT}", spec.name));
    tm.save(&path)?;
    let mut log = BufWriter::new(File::create(path.with_extension("loss.csv"))?);
    writeln!(log, "epoch,loss")?;
    for (e, l) in tm.meta.epoch_loss.iter().enumerate() {
        writeln!(log, "{e},{l}")?;
    }
    log.flush()?;
    println!("{}", path.display());
    Ok(path)
}

pub fn load_models(files: &[PathBuf], dir: &Path) -> Result<Vec<TrainedModel>> {
    let files = if files.is_empty() { list_checkpoints(dir)? } else { files.to_vec() };
    files
        .iter()
        .map(|p| TrainedModel::load(p).with_context(|| format!("loading {}", p.display())))
        .collect()
}

pub fn sample_cmd(a: &SampleArgs) -> Result<()> {
    let model = TrainedModel::load(&a.checkpoint).with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let inst: Instance = serde_json::from_str(&std::fs::read_to_string(&a.instance)?).context("parsing instance")?;
    let problems = inst.validate();
    if !problems.is_empty() {
        bail!("invalid instance: {}", problems.join("; "));
    }
    if !model.covers(inst.kind) {
        bail!("checkpoint {} was not trained on {}", model.id, inst.kind);
    }
    let sampler = a.sampler.sampler();
    let req = SolveRequest {
        instance: None,
        instance_id: None,
        target: ObjectiveVector::new(a.cmax, a.resilience),
        candidates: a.sampler.candidates,
        guidance: sampler.guidance,
        steps: sampler.steps,
        schedule: sampler.schedule,
        seed: Some(a.seed),
    };
    let resp = solve_blocking(&model, &inst, &req).map_err(|e| anyhow::anyhow!("{e:?}"))?;
    let text = serde_json::to_string_pretty(&resp)?;
    match &a.out {
        Some(p) => std::fs::write(p, text)?,
        None => println!("{text}"),
    }
    Ok(())
}

fn parse_size(s: &str) -> Result<(usize, usize)> {
    let (j, m) = s.split_once(['x', 'X']).with_context(|| format!("size `{s}` is not JxM"))?;
    Ok((j.trim().parse()?, m.trim().parse()?))
}

pub fn benchmark_config(a: &EvalArgs, default_methods: &[Method]) -> Result<BenchmarkConfig> {
    Ok(BenchmarkConfig {
        methods: if a.methods.is_empty() { default_methods.to_vec() } else { a.methods.clone() },
        sizes: a.sizes.iter().map(|s| parse_size(s)).collect::<Result<_>>()?,
        kinds: a.kind.clone(),
        n_instances: a.instances,
        targets_per_instance: a.targets_per_instance,
        first_index: a.first_index,
        generator_seed: a.generator_seed,
        oracle_limit: a.limit,
        candidates: a.sampler.candidates,
        sampler: a.sampler.sampler(),
        population: a.population,
        generations: a.generations,
        stop_when_hit: a.stop_when_hit,
        seed: a.seed,
    })
}

/// Writes `report.csv`, `time_to_target.csv` and `records.json` into `a.out`.
pub fn eval_cmd(a: &EvalArgs, default_methods: &[Method]) -> Result<()> {
    let cfg = benchmark_config(a, default_methods)?;
    let models = if cfg.methods.contains(&Method::Goal) { load_models(&a.checkpoint, &a.checkpoint_dir)? } else { Vec::new() };
    let mut done = 0usize;
    let mut progress = |r: &goal_core::eval::TrialRecord| {
        done += 1;
        if done % 10 == 0 {
            eprintln!("{done} trials ({} {} {})", r.method.as_str(), r.kind, r.size);
        }
    };
    let (report, records) = run_benchmark(&cfg, &models, Some(&mut progress))?;
    std::fs::create_dir_all(&a.out)?;
    report.write_csv(File::create(a.out.join("report.csv"))?)?;
    write_rows(File::create(a.out.join("time_to_target.csv"))?, &plot_data(&records, &REPORT_EPSILONS))?;
    write_records_json(&a.out.join("records.json"), &records)?;
    report.write_csv(std::io::stdout().lock())?;
    Ok(())
}

pub fn serve_cmd(a: &ServeArgs) -> Result<()> {
    let models = load_models(&a.checkpoint, &a.checkpoint_dir)?;
    if models.is_empty() {
        eprintln!("warning: no checkpoints loaded; /api/solve will answer 409");
    }
    let state = Arc::new(AppState::new(models));
    let addr = SocketAddr::new(a.host, a.port);
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(goal_service::serve(addr, state, a.static_dir.clone()))?;
    Ok(())
}
