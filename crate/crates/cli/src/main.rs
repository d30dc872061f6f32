//! `lpac` command-line front end.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use lpac::action::PolicyWeights;
use lpac::arch::Architecture;
use lpac::gnn_comms::{
    aggregated_message_floats, bandwidth_report, ccvt_upload_floats, lpac_centralized_upload_floats, MessageLog,
    MessageSchedule, DCVT_FLOATS_PER_NEIGHBOR,
};
use lpac::harness::{
    comm_range_sweep, evaluate_batch, generate_dataset, make_environment, noise_sweep, run_episode, run_episode_in,
    BatchConfig, BatchSummary, Controller, DatasetConfig, EpisodeOptions, NOISE_LEVELS,
};
use lpac::io::{
    load_weights, policy_tensors, save_snapshot, save_weights, write_csv, write_metrics, DatasetWriter, RunConfig,
};
use lpac::rng::{substream, Stream};
use lpac::voronoi::compute_partition;
use lpac::world::{ingest_feature_file, WorldParams};

#[derive(Parser)]
#[command(name = "lpac", version, about = "Multi-robot coverage control: CVT baselines and the LPAC policy runtime")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an environment and write its snapshot and feature list.
    GenWorld(GenWorldArgs),
    /// Run one episode and write its metrics CSV.
    Run(RunArgs),
    /// Generate an imitation-learning dataset with the clairvoyant expert.
    GenDataset(GenDatasetArgs),
    /// Evaluate controllers over a batch of environments.
    Eval(EvalArgs),
    /// Report per-robot message sizes of an LPAC episode.
    Bandwidth(BandwidthArgs),
    /// Print the header and tensor table of a weight file.
    InspectWeights(InspectArgs),
    /// Write untrained weights with the given architecture.
    InitWeights(InitWeightsArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Paper,
    Desk,
}

/// World parameters; each flag overrides the config file value.
#[derive(Args, Clone, Default)]
struct WorldFlags {
    #[arg(long)]
    side_length: Option<usize>,
    #[arg(long)]
    n_robots: Option<usize>,
    #[arg(long)]
    sensor_side: Option<usize>,
    #[arg(long)]
    comm_range: Option<f64>,
    #[arg(long)]
    max_speed: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Use a disk field of view inscribed in the square footprint.
    #[arg(long)]
    disk_fov: bool,
}

impl WorldFlags {
    fn apply(&self, w: &mut WorldParams) {
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { w.$f = v; } )* };
        }
        set!(side_length, n_robots, sensor_side, comm_range, max_speed, dt, seed);
        if self.disk_fov {
            w.disk_fov = true;
        }
    }
}

fn preset_world(preset: Preset) -> WorldParams {
    match preset {
        Preset::Paper => WorldParams::default(),
        Preset::Desk => WorldParams::desk(),
    }
}

#[derive(Args)]
struct GenWorldArgs {
    #[arg(long, value_enum, default_value = "desk")]
    preset: Preset,
    #[command(flatten)]
    world: WorldFlags,
    #[arg(long, default_value_t = 0)]
    env_id: usize,
    #[arg(long)]
    n_features: Option<usize>,
    /// CSV of `x,y[,sigma,scale]` feature centers instead of random features.
    #[arg(long)]
    features: Option<PathBuf>,
    /// Snapshot output (tensor container).
    #[arg(long)]
    out: PathBuf,
    /// Also write the feature list as CSV.
    #[arg(long)]
    features_out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    world: WorldFlags,
    #[arg(long)]
    controller: Option<String>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    env_id: Option<usize>,
    #[arg(long)]
    n_features: Option<usize>,
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Metrics CSV output; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON dump of the true positions at every step.
    #[arg(long)]
    trajectory: Option<PathBuf>,
}

#[derive(Args)]
struct GenDatasetArgs {
    #[arg(long, value_enum, default_value = "desk")]
    preset: Preset,
    /// JSON dataset configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    world: WorldFlags,
    #[arg(long)]
    n_envs: Option<usize>,
    #[arg(long)]
    env_offset: Option<usize>,
    #[arg(long)]
    n_features: Option<usize>,
    #[arg(long)]
    max_iterations: Option<usize>,
    #[arg(long)]
    window_size: Option<usize>,
    #[arg(long)]
    channel_size: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, value_enum, default_value = "desk")]
    preset: Preset,
    /// JSON batch configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    world: WorldFlags,
    /// Comma-separated controller names.
    #[arg(long, value_delimiter = ',')]
    controllers: Option<Vec<String>>,
    #[arg(long)]
    n_envs: Option<usize>,
    #[arg(long)]
    env_offset: Option<usize>,
    #[arg(long)]
    n_features: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Repeat the batch for σ ∈ {5, 10, 15, 20} m.
    #[arg(long)]
    noise_sweep: bool,
    /// Repeat the batch for each communication range.
    #[arg(long, value_delimiter = ',')]
    comm_sweep: Option<Vec<f64>>,
    /// Summary CSV output; stdout when omitted.
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Per-step mean/std/best-count CSV.
    #[arg(long)]
    series: Option<PathBuf>,
    /// Every episode's metrics rows in one CSV.
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Args)]
struct BandwidthArgs {
    #[arg(long, value_enum, default_value = "desk")]
    preset: Preset,
    #[command(flatten)]
    world: WorldFlags,
    /// Weight file; untrained weights of the default architecture otherwise.
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    env_id: usize,
    #[arg(long)]
    n_features: Option<usize>,
    #[arg(long, default_value_t = 20)]
    horizon: usize,
    /// Send diffused inputs instead of projected partial sums.
    #[arg(long)]
    diffusion: bool,
    /// Per-message CSV log.
    #[arg(long)]
    message_log: Option<PathBuf>,
}

#[derive(Args)]
struct InspectArgs {
    path: PathBuf,
}

#[derive(Args)]
struct InitWeightsArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Zero every tensor (batch-norm variances stay 1).
    #[arg(long)]
    zeros: bool,
    #[arg(long)]
    window_size: Option<usize>,
    #[arg(long)]
    channel_size: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("cannot create {}", path.display()))?))
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("invalid configuration {}", path.display()))
}

fn load_policy(path: Option<&Path>) -> Result<Option<PolicyWeights>> {
    path.map(|p| load_weights(p).with_context(|| format!("cannot load weights {}", p.display()))).transpose()
}

fn gen_world(a: GenWorldArgs) -> Result<()> {
    let mut params = preset_world(a.preset);
    a.world.apply(&mut params);
    params.validate()?;
    let features = match &a.features {
        Some(p) => Some(ingest_feature_file(p, params.side_length, &mut substream(params.seed, Stream::Features, a.env_id as u64))?),
        None => None,
    };
    let n_features = a.n_features.unwrap_or(if params.side_length >= 1024 { 32 } else { 8 });
    let env = make_environment(&params, a.env_id, n_features, features)?;
    let world = lpac::WorldState::new(params.clone(), env.idf.clone(), &env.initial_positions)?;
    let partition = compute_partition(&world.positions(), params.side_length)?;
    save_snapshot(&a.out, &world, Some(&partition))?;
    if let Some(p) = &a.features_out {
        let mut w = create(p)?;
        writeln!(w, "x,y,sigma,scale")?;
        for f in &env.features {
            writeln!(w, "{},{},{},{}", f.center.x, f.center.y, f.sigma, f.scale)?;
        }
        w.flush()?;
    }
    eprintln!("env {}: {} features, snapshot {}", a.env_id, env.features.len(), a.out.display());
    Ok(())
}

fn run(a: RunArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => read_json::<RunConfig>(p)?,
        None => RunConfig { world: WorldParams::desk(), n_features: 8, ..RunConfig::default() },
    };
    a.world.apply(&mut cfg.world);
    if let Some(c) = &a.controller {
        cfg.controller = c.parse()?;
    }
    macro_rules! set {
        ($($f:ident),*) => { $( if let Some(v) = a.$f.clone() { cfg.$f = v; } )* };
    }
    set!(horizon, env_id, n_features, noise_sigma, epsilon);
    if a.features.is_some() {
        cfg.features = a.features.clone();
    }
    if a.weights.is_some() {
        cfg.weights = a.weights.clone();
    }
    cfg.world.validate()?;
    let policy = load_policy(cfg.weights.as_deref())?;
    let result = if a.trajectory.is_some() {
        let features = match &cfg.features {
            Some(p) => Some(ingest_feature_file(
                p,
                cfg.world.side_length,
                &mut substream(cfg.world.seed, Stream::Features, cfg.env_id as u64),
            )?),
            None => None,
        };
        let env = make_environment(&cfg.world, cfg.env_id, cfg.n_features, features)?;
        let opts = EpisodeOptions {
            horizon: cfg.horizon,
            noise_sigma: cfg.noise_sigma,
            epsilon: cfg.epsilon,
            record_trajectory: true,
            ..EpisodeOptions::default()
        };
        run_episode_in(&env, cfg.controller, &opts, policy.as_ref())?
    } else {
        run_episode(&cfg, policy.as_ref())?
    };
    write_metrics(output(a.out.as_deref())?, &result.rows)?;
    if let (Some(p), Some(t)) = (&a.trajectory, &result.trajectory) {
        serde_json::to_writer(create(p)?, t)?;
    }
    let last = result.final_row();
    eprintln!(
        "{} env {}: {} steps{}, normalized cost {:.4}, observed {:.2}%",
        cfg.controller,
        cfg.env_id,
        result.steps_executed,
        result.converged_at.map_or(String::new(), |s| format!(" (converged at {s})")),
        last.normalized_cost,
        last.observed_area_pct
    );
    Ok(())
}

fn gen_dataset(a: GenDatasetArgs) -> Result<()> {
    let mut cfg = match (&a.config, a.preset) {
        (Some(p), _) => read_json::<DatasetConfig>(p)?,
        (None, Preset::Desk) => DatasetConfig::desk(),
        (None, Preset::Paper) => DatasetConfig::default(),
    };
    a.world.apply(&mut cfg.world);
    macro_rules! set {
        ($($f:ident),*) => { $( if let Some(v) = a.$f { cfg.$f = v; } )* };
    }
    set!(n_envs, env_offset, n_features, max_iterations);
    if let Some(v) = a.window_size {
        cfg.arch.window_size = v;
    }
    if let Some(v) = a.channel_size {
        cfg.arch.channel_size = v;
    }
    cfg.world.validate()?;
    cfg.arch.validate().map_err(anyhow::Error::msg)?;
    let mut writer = DatasetWriter::create(&a.out, cfg.world.n_robots, cfg.arch.channel_size)?;
    let logs = generate_dataset(&cfg, &mut writer)?;
    let (header, _) = writer.finish()?;
    for l in &logs {
        eprintln!("env {}: {} steps, converged {}, {} samples", l.env_id, l.steps, l.converged, l.samples);
    }
    eprintln!("{} samples × {} robots written to {}", header.n_samples, header.n_robots, a.out.display());
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let mut cfg = match (&a.config, a.preset) {
        (Some(p), _) => read_json::<BatchConfig>(p)?,
        (None, Preset::Desk) => BatchConfig::desk(),
        (None, Preset::Paper) => BatchConfig::paper(),
    };
    a.world.apply(&mut cfg.world);
    if let Some(names) = &a.controllers {
        cfg.controllers = names.iter().map(|n| n.parse()).collect::<Result<_, _>>()?;
    }
    macro_rules! set {
        ($($f:ident),*) => { $( if let Some(v) = a.$f { cfg.$f = v; } )* };
    }
    set!(n_envs, env_offset, n_features, horizon, noise_sigma);
    cfg.world.validate()?;
    let policy = load_policy(a.weights.as_deref())?;
    if cfg.controllers.contains(&Controller::Lpac) && policy.is_none() {
        bail!("the lpac controller needs --weights");
    }
    let batches: Vec<BatchSummary> = if a.noise_sweep {
        noise_sweep(&cfg, &NOISE_LEVELS, policy.as_ref())?
    } else if let Some(ranges) = &a.comm_sweep {
        comm_range_sweep(&cfg, ranges, policy.as_ref())?
    } else {
        vec![evaluate_batch(&cfg, policy.as_ref())?]
    };
    let summary: Vec<_> = batches.iter().flat_map(BatchSummary::table).collect();
    write_csv(output(a.summary.as_deref())?, &summary)?;
    if let Some(p) = &a.series {
        let series: Vec<_> = batches.iter().flat_map(BatchSummary::series).collect();
        write_csv(create(p)?, &series)?;
    }
    if let Some(p) = &a.metrics {
        let rows: Vec<_> = batches.iter().flat_map(|b| b.episodes.iter().flat_map(|e| e.rows.clone())).collect();
        write_metrics(create(p)?, &rows)?;
    }
    Ok(())
}

fn bandwidth(a: BandwidthArgs) -> Result<()> {
    let mut params = preset_world(a.preset);
    a.world.apply(&mut params);
    params.validate()?;
    let policy = match load_policy(a.weights.as_deref())? {
        Some(p) => p,
        None => PolicyWeights::random(Architecture::default(), &mut substream(params.seed, Stream::Weights, 0)),
    };
    let schedule = if a.diffusion { MessageSchedule::Diffusion } else { MessageSchedule::Projected };
    let n_features = a.n_features.unwrap_or(if params.side_length >= 1024 { 32 } else { 8 });
    let env = make_environment(&params, a.env_id, n_features, None)?;
    let opts = EpisodeOptions { horizon: a.horizon, record_messages: true, schedule, ..EpisodeOptions::default() };
    let ep = run_episode_in(&env, Controller::Lpac, &opts, Some(&policy))?;
    let log = ep.messages.unwrap_or_else(MessageLog::default);
    let report = bandwidth_report(&log, params.n_robots, ep.steps_executed);
    let arch = policy.arch;
    let dims = policy.gnn.dims();
    println!("schedule: {schedule:?}");
    println!("lpac floats per robot per step (message size): {}", aggregated_message_floats(&dims, arch.gnn_hops, schedule));
    println!("lpac centralized upload per robot: {}", lpac_centralized_upload_floats(&arch));
    println!("c-cvt upload per robot: {}", ccvt_upload_floats(arch.window_size));
    println!("d-cvt floats per neighbor: {DCVT_FLOATS_PER_NEIGHBOR}");
    println!("steps: {}", report.steps);
    println!("aggregate floats per step: broadcast {} peer-to-peer {}", report.total_floats_per_step, report.total_p2p_floats_per_step);
    println!("neighbors: mean {:.4} std {:.4}", report.mean_neighbors, report.std_neighbors);
    println!("robot,floats_per_step,p2p_floats_per_step");
    for (i, (b, p)) in report.per_robot_floats.iter().zip(&report.per_robot_p2p_floats).enumerate() {
        println!("{i},{b},{p}");
    }
    if let Some(p) = &a.message_log {
        let mut w = create(p)?;
        w.write_all(log.to_csv().as_bytes())?;
        w.flush()?;
    }
    Ok(())
}

fn inspect_weights(a: InspectArgs) -> Result<()> {
    let policy = load_weights(&a.path).with_context(|| format!("invalid weight file {}", a.path.display()))?;
    let arch = policy.arch;
    println!("leaky_slope {} bn_eps {}", arch.leaky_slope, arch.bn_eps);
    println!(
        "gnn L={} K={} d0={} d={}; channel {} window {}; cnn channels {}; mlp hidden {}",
        arch.gnn_layers, arch.gnn_hops, arch.gnn_input, arch.gnn_hidden, arch.channel_size, arch.window_size,
        arch.cnn_channels, arch.mlp_hidden
    );
    let tensors = policy_tensors(&policy);
    let mut total = 0;
    for t in &tensors {
        let n: usize = t.dims.iter().product();
        total += n;
        println!("{:32} {:?}", t.name, t.dims);
    }
    println!("{} tensors, {} parameters", tensors.len(), total);
    Ok(())
}

fn init_weights(a: InitWeightsArgs) -> Result<()> {
    let mut arch = Architecture::default();
    if let Some(v) = a.window_size {
        arch.window_size = v;
    }
    if let Some(v) = a.channel_size {
        arch.channel_size = v;
    }
    arch.validate().map_err(anyhow::Error::msg)?;
    let policy = if a.zeros {
        PolicyWeights::zeros(arch)
    } else {
        PolicyWeights::random(arch, &mut substream(a.seed, Stream::Weights, 0))
    };
    save_weights(&a.out, &policy)?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenWorld(a) => gen_world(a),
        Command::Run(a) => run(a),
        Command::GenDataset(a) => gen_dataset(a),
        Command::Eval(a) => eval(a),
        Command::Bandwidth(a) => bandwidth(a),
        Command::InspectWeights(a) => inspect_weights(a),
        Command::InitWeights(a) => init_weights(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
