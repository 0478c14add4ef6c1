mod config;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use hb0::episodes::reach::sample_reach_problem;
use hb0::episodes::{generate_reach_dataset, generate_reach_episodes, integrity_check, load_dataset, read_episode, write_episode};
use hb0::kinematics::fixtures::PLANAR2_URDF;
use hb0::kinematics::{end_effector_position, forward_kinematics, parse_urdf, KinematicChain};
use hb0::projection::{validate_episode, CameraModel, ValidationConfig, Verdict};
use hb0::runtime::{run_client, ExecutionMode, Policy, Server, ServerConfig};
use hb0::simplant::{benchmark_suite, write_csv, ExpertDenoiser};
use hb0::simplertc::Decay;
use hb0::training::{train_reach_policy, ToyDenoiser};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use config::RunConfig;

#[derive(Parser)]
#[command(name = "hb0", version, about = "Action-chunk streaming runtime, toy trainer and data tools")]
struct Cli {
    /// JSON configuration file; environment variables HB0_SECTION__KEY and flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic reach episodes and a manifest.
    GenData(GenDataArgs),
    /// Train the toy reach policy.
    TrainToy(TrainArgs),
    /// Serve chunks over TCP.
    Serve(ServeArgs),
    /// Drive the simulated arm from a remote server in real time.
    Client(ClientArgs),
    /// Run the closed-loop ablation grid and write a CSV.
    BenchRtc(BenchArgs),
    /// Check recorded keypoints against FK and camera calibration.
    Validate(ValidateArgs),
    /// Decode an episode and check its timestamps.
    CheckEpisode(CheckArgs),
    /// Print joint poses for a configuration.
    Fk(FkArgs),
    /// Print the version.
    Version,
}

#[derive(Args)]
struct ChainArg {
    /// URDF file; defaults to the built-in two-link planar arm.
    #[arg(long)]
    urdf: Option<PathBuf>,
}

impl ChainArg {
    fn load(&self) -> Result<KinematicChain<f64>> {
        let text = match &self.urdf {
            Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
            None => PLANAR2_URDF.to_string(),
        };
        Ok(parse_urdf(&text)?)
    }
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Start straight and pick either elbow branch.
    #[arg(long)]
    bimodal: bool,
    /// Skip synthetic camera keypoints.
    #[arg(long)]
    no_annotate: bool,
    #[command(flatten)]
    chain: ChainArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum Task {
    Reach2d,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_enum, default_value = "reach2d")]
    task: Task,
    /// Episode directory from `gen-data`; generated in memory when absent.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    bimodal: bool,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    tf_ratio: Option<f64>,
    /// Candidates per sample.
    #[arg(long)]
    wtm: Option<usize>,
    #[arg(long)]
    winner_weight: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    chain: ChainArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, required_unless_present = "expert")]
    model: Option<PathBuf>,
    /// Serve the scripted expert instead of a model.
    #[arg(long)]
    expert: bool,
    #[arg(long, default_value = "127.0.0.1:7878")]
    bind: String,
    #[arg(long, value_enum)]
    rtc: Option<OnOff>,
    #[arg(long)]
    decay: Option<Decay>,
    #[arg(long)]
    fusion_window: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    chain: ChainArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Sync,
    Async,
}

#[derive(Args)]
struct ClientArgs {
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Rows executed per chunk in sync mode.
    #[arg(long, default_value_t = 16)]
    effective_steps: usize,
    #[arg(long)]
    server: String,
    /// Milliseconds added to every round trip.
    #[arg(long)]
    delay_inject: Option<f64>,
    #[arg(long)]
    record: Option<PathBuf>,
    /// Seed of the reach task.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    max_ticks: Option<usize>,
    #[arg(long)]
    timeout_ms: Option<u64>,
    #[command(flatten)]
    chain: ChainArg,
}

#[derive(Args)]
struct BenchArgs {
    /// Grid JSON (cells, rollouts, seed, ...).
    #[arg(long)]
    grid: Option<PathBuf>,
    #[arg(long)]
    rollouts: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    /// Model per teacher-forcing ratio, as `RATIO=PATH`.
    #[arg(long = "model", value_parser = parse_model_arg)]
    models: Vec<(f64, PathBuf)>,
    /// Use the scripted expert for every cell.
    #[arg(long)]
    expert: bool,
    /// Train missing models with the `train` configuration.
    #[arg(long)]
    train: bool,
    /// Injected latency in milliseconds for every cell.
    #[arg(long)]
    delay: Option<f64>,
    #[arg(long)]
    fusion_window: Option<usize>,
    #[arg(long)]
    decay: Option<Decay>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    chain: ChainArg,
}

fn parse_model_arg(s: &str) -> Result<(f64, PathBuf), String> {
    let (r, p) = s.split_once('=').ok_or("expected RATIO=PATH")?;
    let r: f64 = r.parse().map_err(|e| format!("ratio '{r}': {e}"))?;
    Ok((r, PathBuf::from(p)))
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    episode: PathBuf,
    /// JSON list of cameras; the episode's own cameras when absent.
    #[arg(long)]
    cameras: Option<PathBuf>,
    #[arg(long)]
    threshold: Option<f64>,
    #[command(flatten)]
    chain: ChainArg,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long)]
    episode: PathBuf,
    #[arg(long)]
    gap_factor: Option<f64>,
}

#[derive(Args)]
struct FkArgs {
    /// Comma-separated joint values.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    q: Vec<f64>,
    #[command(flatten)]
    chain: ChainArg,
}

/// Failure that should exit with status 1 after printing the report.
#[derive(Debug)]
struct Rejected;

impl std::fmt::Display for Rejected {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("check failed")
    }
}

impl std::error::Error for Rejected {}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("HB0_LOG", "info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let cfg = match config::load(cli.config.as_deref(), std::env::vars()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    match run(cli.command, cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<Rejected>() => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(command: Command, cfg: RunConfig) -> Result<()> {
    match command {
        Command::GenData(a) => gen_data(cfg, a),
        Command::TrainToy(a) => train_toy(cfg, a),
        Command::Serve(a) => serve(cfg, a),
        Command::Client(a) => client(cfg, a),
        Command::BenchRtc(a) => bench(cfg, a),
        Command::Validate(a) => validate(cfg, a),
        Command::CheckEpisode(a) => check_episode(cfg, a),
        Command::Fk(a) => fk(a),
        Command::Version => {
            println!("hb0 {}", env!("CARGO_PKG_VERSION"));
            Ok(())
        }
    }
}

fn print_json(v: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn gen_data(cfg: RunConfig, a: GenDataArgs) -> Result<()> {
    let chain = a.chain.load()?;
    let mut data = cfg.data;
    data.episodes = a.episodes.unwrap_or(data.episodes);
    data.seed = a.seed.unwrap_or(data.seed);
    data.bimodal |= a.bimodal;
    data.annotate &= !a.no_annotate;
    let t = Instant::now();
    let manifest = generate_reach_dataset(&chain, &data, &a.out)?;
    log::info!("wrote {} episodes to {} in {:.1?}", manifest.files.len(), a.out.display(), t.elapsed());
    print_json(&json!({ "dir": a.out, "episodes": manifest.files.len(), "chain_hash": manifest.chain_hash }))
}

fn train_toy(cfg: RunConfig, a: TrainArgs) -> Result<()> {
    let Task::Reach2d = a.task;
    let chain = a.chain.load()?;
    let mut train = cfg.train;
    train.trainer.steps = a.steps.unwrap_or(train.trainer.steps);
    train.teacher_forcing.ratio = a.tf_ratio.unwrap_or(train.teacher_forcing.ratio);
    train.wtm.candidates = a.wtm.unwrap_or(train.wtm.candidates);
    train.wtm.winner_weight = a.winner_weight.unwrap_or(train.wtm.winner_weight);
    train.seed = a.seed.unwrap_or(train.seed);
    if !(0.0..=1.0).contains(&train.teacher_forcing.ratio) {
        bail!("teacher-forcing ratio {} outside [0, 1]", train.teacher_forcing.ratio);
    }
    if train.wtm.candidates == 0 {
        bail!("--wtm needs at least one candidate");
    }
    let episodes = match &a.data {
        Some(dir) => load_dataset(dir)?.1,
        None => {
            let mut data = cfg.data;
            data.episodes = a.episodes.unwrap_or(data.episodes);
            data.bimodal |= a.bimodal;
            data.annotate = false;
            data.seed = train.seed;
            generate_reach_episodes(&chain, &data)?
        }
    };
    let t = Instant::now();
    let every = (train.trainer.steps / 20).max(1);
    let mut window = 0.0;
    let model = train_reach_policy(&chain, &episodes, &train, |step, s| {
        window += s.loss;
        if (step + 1) % every == 0 {
            log::info!("step {} loss {:.4} ({:.0?})", step + 1, window / every as f64, t.elapsed());
            window = 0.0;
        }
    })?;
    model.save_path(&a.out)?;
    print_json(&json!({
        "model": a.out,
        "episodes": episodes.len(),
        "steps": train.trainer.steps,
        "tf_ratio": train.teacher_forcing.ratio,
        "candidates": train.wtm.candidates,
        "parameters": model.n_params(),
        "seconds": t.elapsed().as_secs_f64(),
    }))
}

fn expert_policy(chain: &KinematicChain<f64>, horizon: usize) -> Policy {
    ExpertDenoiser::policy(chain.clone(), horizon, 0.04)
}

fn load_policy(path: &Path, chain: &KinematicChain<f64>) -> Result<Policy> {
    let model = ToyDenoiser::<f64>::load_path(path).with_context(|| format!("loading {}", path.display()))?;
    Ok(Policy::from_model(model, chain.clone())?)
}

fn serve(cfg: RunConfig, a: ServeArgs) -> Result<()> {
    let chain = a.chain.load()?;
    let policy = match &a.model {
        Some(p) if !a.expert => load_policy(p, &chain)?,
        _ => expert_policy(&chain, cfg.train.horizon),
    };
    let server_cfg = ServerConfig {
        rtc: a.rtc.map_or(cfg.server.rtc, |r| matches!(r, OnOff::On)),
        decay: a.decay.unwrap_or(cfg.server.decay),
        window: a.fusion_window.unwrap_or(cfg.server.window),
        steps: a.steps.unwrap_or(cfg.server.steps),
        seed: a.seed.unwrap_or(cfg.server.seed),
        ..cfg.server
    };
    let server = Server::bind(a.bind.as_str(), Arc::new(policy), server_cfg)?;
    let addr = server.local_addr()?;
    log::info!("listening on {addr}");
    println!("{}", json!({ "listening": addr.to_string() }));
    server.run()?;
    Ok(())
}

fn client(cfg: RunConfig, a: ClientArgs) -> Result<()> {
    let chain = a.chain.load()?;
    let mut c = cfg.client;
    if let Some(m) = a.mode {
        c.mode = match m {
            Mode::Sync => ExecutionMode::Sync {
                effective_steps: a.effective_steps,
            },
            Mode::Async => ExecutionMode::Async,
        };
    }
    c.inject_delay_ms = a.delay_inject.unwrap_or(c.inject_delay_ms);
    c.max_ticks = a.max_ticks.unwrap_or(c.max_ticks);
    c.timeout_ms = a.timeout_ms.unwrap_or(c.timeout_ms);
    let problem = sample_reach_problem(&chain, false, &mut ChaCha8Rng::seed_from_u64(a.seed))?;
    let (metrics, episode) = run_client(&a.server, &chain, &problem, &c)?;
    if let Some(p) = &a.record {
        write_episode(p, &episode)?;
    }
    print_json(&metrics)
}

fn bench(cfg: RunConfig, a: BenchArgs) -> Result<()> {
    let chain = a.chain.load()?;
    let mut grid = match &a.grid {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let de = &mut serde_json::Deserializer::from_str(&text);
            serde_path_to_error::deserialize(de)
                .map_err(|e| anyhow::anyhow!("invalid grid at `{}`: {}", e.path(), e.inner()))?
        }
        None => cfg.bench,
    };
    grid.rollouts = a.rollouts.unwrap_or(grid.rollouts);
    grid.seed = a.seed.unwrap_or(grid.seed);
    for cell in &mut grid.cells {
        cell.latency_ms = a.delay.unwrap_or(cell.latency_ms);
        cell.window = a.fusion_window.unwrap_or(cell.window);
        cell.decay = a.decay.unwrap_or(cell.decay);
    }
    let mut policies: BTreeMap<String, Arc<Policy>> = BTreeMap::new();
    for (r, p) in &a.models {
        policies.insert(r.to_string(), Arc::new(load_policy(p, &chain)?));
    }
    let expert = a.expert.then(|| Arc::new(expert_policy(&chain, cfg.train.horizon)));
    let mut failure = None;
    let t = Instant::now();
    let rows = benchmark_suite(
        &grid,
        &chain,
        |ratio| {
            if let Some(e) = &expert {
                return Some(e.clone());
            }
            let key = ratio.to_string();
            if let Some(p) = policies.get(&key) {
                return Some(p.clone());
            }
            if !a.train {
                return None;
            }
            let mut train = cfg.train.clone();
            train.teacher_forcing.ratio = ratio;
            log::info!("training model for tf ratio {ratio}");
            let result = generate_reach_episodes(
                &chain,
                &hb0::episodes::ReachConfig {
                    annotate: false,
                    seed: train.seed,
                    ..cfg.data.clone()
                },
            )
            .map_err(anyhow::Error::from)
            .and_then(|eps| Ok(train_reach_policy(&chain, &eps, &train, |_, _| {})?))
            .and_then(|m| Ok(Policy::from_model(m, chain.clone())?));
            match result {
                Ok(p) => {
                    let p = Arc::new(p);
                    policies.insert(key, p.clone());
                    Some(p)
                }
                Err(e) => {
                    failure = Some(e);
                    None
                }
            }
        },
        |s| log::info!("{}: success {:.2}, completion {:.3} s ({:.0?})", s.cell, s.success_rate, s.completion_s_mean, t.elapsed()),
    );
    if let Some(e) = failure {
        return Err(e);
    }
    let rows = rows.map_err(|e| match e {
        hb0::simplant::SimError::MissingModel(r) => {
            anyhow::anyhow!("no model for tf ratio {r}; pass --model {r}=PATH, --train or --expert")
        }
        other => other.into(),
    })?;
    write_csv(&rows, std::fs::File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?)?;
    print_json(&json!({ "out": a.out, "cells": rows.len(), "rollouts": grid.rollouts }))
}

fn validate(cfg: RunConfig, a: ValidateArgs) -> Result<()> {
    let chain = a.chain.load()?;
    let episode = read_episode(&a.episode)?;
    let cameras: Vec<CameraModel<f64>> = match &a.cameras {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing cameras {}", p.display()))?
        }
        None => episode.header.cameras.clone(),
    };
    let vc = ValidationConfig {
        threshold_px: a.threshold.unwrap_or(cfg.validation.threshold_px),
        max_outside_fraction: cfg.validation.max_outside_fraction,
    };
    let report = validate_episode(&episode, &chain, &cameras, vc)?;
    println!("{}", serde_json::to_string(&report)?);
    println!(
        "{} mean {:.3} px, max {:.3} px, outside {:.1}%",
        verdict_word(report.verdict),
        report.mean_error_px,
        report.max_error_px,
        100.0 * report.outside_fraction
    );
    if report.verdict == Verdict::Fail {
        return Err(Rejected.into());
    }
    Ok(())
}

fn verdict_word(v: Verdict) -> &'static str {
    match v {
        Verdict::Pass => "PASS",
        Verdict::Fail => "FAIL",
    }
}

fn check_episode(cfg: RunConfig, a: CheckArgs) -> Result<()> {
    let episode = read_episode(&a.episode)?;
    episode.validate()?;
    let report = integrity_check(&episode, a.gap_factor.unwrap_or(cfg.validation.gap_factor))?;
    println!("{}", serde_json::to_string(&report)?);
    println!(
        "{} {} frames, {} gaps, {} non-monotonic",
        verdict_word(report.verdict),
        report.frames,
        report.gaps.len(),
        report.non_monotonic
    );
    if report.verdict == Verdict::Fail {
        return Err(Rejected.into());
    }
    Ok(())
}

fn fk(a: FkArgs) -> Result<()> {
    let chain = a.chain.load()?;
    let poses = forward_kinematics(&chain, &a.q)?;
    let joints: Vec<_> = chain
        .movable
        .iter()
        .zip(&poses)
        .map(|(&j, p)| json!({ "joint": chain.joints[j].name, "pose": p }))
        .collect();
    let ee = end_effector_position(&chain, &a.q)?;
    print_json(&json!({ "q": a.q, "joints": joints, "end_effector": ee }))
}
