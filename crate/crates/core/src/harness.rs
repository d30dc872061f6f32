//! Episode runner, dataset generator and batch evaluator.
//!
//! Random streams are keyed so that an environment (features and start
//! positions) depends only on `(seed, env_id)` and position noise only on
//! `(seed, env_id, controller)`. Adding a controller to a batch never changes
//! another controller's trajectory.

use std::fmt;
use std::io::{Seek, Write};
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::{lpac_step, PolicyWeights};
use crate::arch::{Architecture, ShapeError};
use crate::cvt::{converged, cvt_step, CvtKind, CvtVariant, DEFAULT_EPSILON};
use crate::geom::Vec2;
use crate::gnn_comms::{bandwidth_report, build_comm_graph, BandwidthReport, MessageLog, MessageSchedule};
use crate::io::{DatasetSample, DatasetWriter, FormatError, MetricsRow, RunConfig};
use crate::perception::build_local_maps;
use crate::rng::{substream, Stream};
use crate::voronoi::global_cost;
use crate::world::{
    clamp_speed, generate_features, generate_idf, FeatureSpec, ImportanceField, WorldError, WorldParams, WorldState,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Controller {
    Clairvoyant,
    CCvt,
    DCvt,
    Lpac,
}

impl Controller {
    pub const ALL: [Controller; 4] = [Controller::Clairvoyant, Controller::CCvt, Controller::DCvt, Controller::Lpac];

    pub fn name(self) -> &'static str {
        match self {
            Controller::Clairvoyant => "clairvoyant",
            Controller::CCvt => "c-cvt",
            Controller::DCvt => "d-cvt",
            Controller::Lpac => "lpac",
        }
    }

    pub fn cvt_kind(self) -> Option<CvtKind> {
        match self {
            Controller::Clairvoyant => Some(CvtKind::Clairvoyant),
            Controller::CCvt => Some(CvtKind::Centralized),
            Controller::DCvt => Some(CvtKind::Decentralized),
            Controller::Lpac => None,
        }
    }

    fn stream_index(self) -> u64 {
        self as u64
    }
}

impl fmt::Display for Controller {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Controller {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Controller::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| HarnessError::UnknownController(s.to_string()))
    }
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("unknown controller `{0}` (expected clairvoyant, c-cvt, d-cvt or lpac)")]
    UnknownController(String),
    #[error("the lpac controller needs a weight file")]
    MissingWeights,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Shape(#[from] ShapeError),
}

/// Importance field and start positions shared by every controller on one environment.
#[derive(Debug, Clone)]
pub struct Environment {
    pub env_id: usize,
    pub params: WorldParams,
    pub features: Vec<FeatureSpec>,
    pub idf: Arc<ImportanceField>,
    pub initial_positions: Vec<Vec2>,
}

/// Environment `env_id` for the run seed in `params`. `features` replaces the
/// random features when given.
pub fn make_environment(
    params: &WorldParams,
    env_id: usize,
    n_features: usize,
    features: Option<Vec<FeatureSpec>>,
) -> Result<Environment, HarnessError> {
    params.validate()?;
    let features = features
        .unwrap_or_else(|| generate_features(params, n_features, &mut substream(params.seed, Stream::Features, env_id as u64)));
    let idf = Arc::new(generate_idf(&features, params));
    let mut rng = substream(params.seed, Stream::RobotInit, env_id as u64);
    let side = params.side_length as f64;
    let initial_positions =
        (0..params.n_robots).map(|_| Vec2::new(rng.random_range(0.0..side), rng.random_range(0.0..side))).collect();
    Ok(Environment { env_id, params: params.clone(), features, idf, initial_positions })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeOptions {
    pub horizon: usize,
    pub noise_sigma: f64,
    pub epsilon: f64,
    pub record_trajectory: bool,
    pub record_messages: bool,
    pub schedule: MessageSchedule,
}

impl Default for EpisodeOptions {
    fn default() -> Self {
        Self {
            horizon: 900,
            noise_sigma: 0.0,
            epsilon: DEFAULT_EPSILON,
            record_trajectory: false,
            record_messages: false,
            schedule: MessageSchedule::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    pub controller: Controller,
    pub env_id: usize,
    /// True positions per executed step, starting with the initial configuration.
    pub positions: Vec<Vec<Vec2>>,
}

#[derive(Debug, Clone)]
pub struct EpisodeResult {
    pub controller: Controller,
    pub env_id: usize,
    /// `horizon + 1` rows; CVT runs are extended flat after convergence.
    pub rows: Vec<MetricsRow>,
    /// Steps actually simulated.
    pub steps_executed: usize,
    pub converged_at: Option<usize>,
    pub trajectory: Option<Trajectory>,
    pub messages: Option<MessageLog>,
}

impl EpisodeResult {
    pub fn final_row(&self) -> &MetricsRow {
        self.rows.last().expect("episodes have at least one row")
    }
}

fn metrics_row(world: &WorldState, controller: Controller, env_id: usize, j0: f64) -> MetricsRow {
    let cost = global_cost(&world.positions(), world.idf()).expect("world has robots");
    MetricsRow {
        step: world.step_count(),
        controller: controller.name().to_string(),
        env_id,
        cost,
        normalized_cost: if j0 > 0.0 { cost / j0 } else { 1.0 },
        observed_area_pct: world.observed_area_pct(),
    }
}

/// Runs one controller on one environment.
pub fn run_episode_in(
    env: &Environment,
    controller: Controller,
    options: &EpisodeOptions,
    policy: Option<&PolicyWeights>,
) -> Result<EpisodeResult, HarnessError> {
    if controller == Controller::Lpac && policy.is_none() {
        return Err(HarnessError::MissingWeights);
    }
    if !(options.noise_sigma >= 0.0 && options.noise_sigma.is_finite()) {
        return Err(HarnessError::InvalidConfig(format!("noise sigma {} must be finite and non-negative", options.noise_sigma)));
    }
    let mut world = WorldState::new(env.params.clone(), Arc::clone(&env.idf), &env.initial_positions)?;
    if options.noise_sigma > 0.0 {
        let key = env.env_id as u64 * Controller::ALL.len() as u64 + controller.stream_index();
        world.enable_position_noise(options.noise_sigma, substream(env.params.seed, Stream::Noise, key));
    }
    let j0 = global_cost(&world.positions(), world.idf()).expect("world has robots");
    let mut rows = vec![metrics_row(&world, controller, env.env_id, j0)];
    let mut trajectory = options.record_trajectory.then(|| vec![world.positions()]);
    let mut messages = options.record_messages.then(MessageLog::default);
    let mut converged_at = None;

    while world.step_count() < options.horizon {
        let velocities = match controller.cvt_kind() {
            Some(kind) => cvt_step(CvtVariant::new(kind), &world),
            None => {
                let trace = lpac_step(&world, policy.expect("checked above"), options.schedule)?;
                if let Some(log) = messages.as_mut() {
                    log.extend(trace.log);
                }
                trace.velocities
            }
        };
        let before = world.positions();
        world.step(&velocities)?;
        rows.push(metrics_row(&world, controller, env.env_id, j0));
        if let Some(t) = trajectory.as_mut() {
            t.push(world.positions());
        }
        if controller.cvt_kind().is_some() && converged(&before, &world.positions(), options.epsilon) {
            converged_at = Some(world.step_count());
            break;
        }
    }
    let steps_executed = world.step_count();
    let last = rows.last().cloned().expect("initial row");
    for step in (steps_executed + 1)..=options.horizon {
        rows.push(MetricsRow { step, ..last.clone() });
    }
    Ok(EpisodeResult {
        controller,
        env_id: env.env_id,
        rows,
        steps_executed,
        converged_at,
        trajectory: trajectory.map(|positions| Trajectory { controller, env_id: env.env_id, positions }),
        messages,
    })
}

/// Runs the episode described by a run configuration.
pub fn run_episode(config: &RunConfig, policy: Option<&PolicyWeights>) -> Result<EpisodeResult, HarnessError> {
    let features = match &config.features {
        Some(path) => Some(crate::world::ingest_feature_file(
            path,
            config.world.side_length,
            &mut substream(config.world.seed, Stream::Features, config.env_id as u64),
        )?),
        None => None,
    };
    let env = make_environment(&config.world, config.env_id, config.n_features, features)?;
    let options = EpisodeOptions {
        horizon: config.horizon,
        noise_sigma: config.noise_sigma,
        epsilon: config.epsilon,
        ..EpisodeOptions::default()
    };
    run_episode_in(&env, config.controller, &options, policy)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub world: WorldParams,
    pub n_envs: usize,
    pub env_offset: usize,
    pub n_features: usize,
    pub max_iterations: usize,
    pub cadence: usize,
    pub epsilon: f64,
    /// Only the channel and window sizes matter here.
    pub arch: Architecture,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            world: WorldParams::default(),
            n_envs: 100,
            env_offset: 0,
            n_features: 32,
            max_iterations: 1000,
            cadence: 5,
            epsilon: DEFAULT_EPSILON,
            arch: Architecture::default(),
        }
    }
}

impl DatasetConfig {
    pub fn desk() -> Self {
        Self { world: WorldParams::desk(), n_envs: 5, n_features: 8, ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DatasetEpisodeLog {
    pub env_id: usize,
    pub steps: usize,
    pub converged: bool,
    pub samples: usize,
}

fn capture_sample(world: &WorldState, arch: &Architecture, env_id: usize, targets: &[Vec2], converged: bool) -> DatasetSample {
    let side = world.params().side_length as f32;
    let maps: Vec<Vec<f32>> =
        (0..world.n_robots()).into_par_iter().map(|i| build_local_maps(world, i, arch).data().to_vec()).collect();
    let positions = world.positions();
    let to_f32 = |p: &Vec2| [p.x as f32, p.y as f32];
    DatasetSample {
        env_id: env_id as u32,
        step: world.step_count() as u32,
        converged,
        maps: maps.concat(),
        positions: positions.iter().map(to_f32).collect(),
        normalized_positions: positions.iter().map(|p| [p.x as f32 / side, p.y as f32 / side]).collect(),
        targets: targets.iter().map(to_f32).collect(),
        edges: build_comm_graph(&positions, world.params().comm_range)
            .edges()
            .into_iter()
            .map(|(i, j)| (i as u32, j as u32))
            .collect(),
    }
}

/// Runs clairvoyant episodes and streams state-action pairs into `writer`:
/// every `cadence`-th step, plus one record at the converged state.
pub fn generate_dataset<W: Write + Seek>(
    config: &DatasetConfig,
    writer: &mut DatasetWriter<W>,
) -> Result<Vec<DatasetEpisodeLog>, HarnessError> {
    if config.cadence == 0 {
        return Err(HarnessError::InvalidConfig("cadence must be positive".into()));
    }
    let mut logs = Vec::with_capacity(config.n_envs);
    for env_id in config.env_offset..config.env_offset + config.n_envs {
        let env = make_environment(&config.world, env_id, config.n_features, None)?;
        let mut world = WorldState::new(env.params.clone(), Arc::clone(&env.idf), &env.initial_positions)?;
        let mut samples = 0;
        let mut is_converged = false;
        loop {
            let targets: Vec<Vec2> = cvt_step(CvtVariant::new(CvtKind::Clairvoyant), &world)
                .into_iter()
                .map(|u| clamp_speed(u, world.params()))
                .collect();
            let step = world.step_count();
            if step > 0 && step % config.cadence == 0 {
                writer.push(&capture_sample(&world, &config.arch, env_id, &targets, false))?;
                samples += 1;
            }
            if is_converged {
                writer.push(&capture_sample(&world, &config.arch, env_id, &targets, true))?;
                samples += 1;
                break;
            }
            if step >= config.max_iterations {
                break;
            }
            let before = world.positions();
            world.step(&targets)?;
            is_converged = converged(&before, &world.positions(), config.epsilon);
        }
        log::debug!("dataset env {env_id}: {} steps, {samples} samples", world.step_count());
        logs.push(DatasetEpisodeLog { env_id, steps: world.step_count(), converged: is_converged, samples });
    }
    Ok(logs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BatchConfig {
    pub world: WorldParams,
    pub controllers: Vec<Controller>,
    pub n_envs: usize,
    pub env_offset: usize,
    pub n_features: usize,
    pub horizon: usize,
    pub noise_sigma: f64,
    pub epsilon: f64,
    pub schedule: MessageSchedule,
}

impl Default for BatchConfig {
    fn default() -> Self {
        Self::paper()
    }
}

impl BatchConfig {
    /// 1024 m workspace, 32 robots, 100 environments, 900 steps.
    pub fn paper() -> Self {
        Self {
            world: WorldParams::default(),
            controllers: vec![Controller::Clairvoyant, Controller::CCvt, Controller::DCvt, Controller::Lpac],
            n_envs: 100,
            env_offset: 0,
            n_features: 32,
            horizon: 900,
            noise_sigma: 0.0,
            epsilon: DEFAULT_EPSILON,
            schedule: MessageSchedule::default(),
        }
    }

    /// 256 m workspace, 8 robots, 8 features, 20 environments, 300 steps.
    pub fn desk() -> Self {
        Self {
            world: WorldParams::desk(),
            controllers: vec![Controller::Clairvoyant, Controller::CCvt, Controller::DCvt],
            n_envs: 20,
            n_features: 8,
            horizon: 300,
            ..Self::paper()
        }
    }
}

/// Aggregates of one controller over a batch.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControllerSummary {
    pub controller: Controller,
    pub mean_normalized: Vec<f64>,
    pub std_normalized: Vec<f64>,
    /// Environments where this controller had the lowest cost, per step; ties credit every tied controller.
    pub best_counts: Vec<usize>,
    pub mean_final_cost: f64,
    pub std_final_cost: f64,
    pub mean_final_normalized: f64,
    pub mean_final_observed_pct: f64,
    /// `(J̄_dcvt − J̄) / J̄_dcvt × 100` on mean final cost.
    pub improvement_vs_dcvt_pct: Option<f64>,
    /// `J̄ / J̄_clairvoyant` on mean final cost.
    pub ratio_vs_clairvoyant: Option<f64>,
    pub bandwidth: Option<BandwidthReport>,
}

#[derive(Debug, Clone)]
pub struct BatchSummary {
    pub config: BatchConfig,
    pub controllers: Vec<ControllerSummary>,
    pub episodes: Vec<EpisodeResult>,
}

impl BatchSummary {
    pub fn get(&self, c: Controller) -> Option<&ControllerSummary> {
        self.controllers.iter().find(|s| s.controller == c)
    }

    /// One row per controller, for the summary CSV.
    pub fn table(&self) -> Vec<SummaryRow> {
        self.controllers
            .iter()
            .map(|s| SummaryRow {
                controller: s.controller.name().to_string(),
                n_envs: self.config.n_envs,
                comm_range: self.config.world.comm_range,
                noise_sigma: self.config.noise_sigma,
                mean_final_cost: s.mean_final_cost,
                std_final_cost: s.std_final_cost,
                mean_final_normalized: s.mean_final_normalized,
                mean_final_observed_pct: s.mean_final_observed_pct,
                best_count_total: s.best_counts.iter().skip(1).sum(),
                improvement_vs_dcvt_pct: s.improvement_vs_dcvt_pct,
                ratio_vs_clairvoyant: s.ratio_vs_clairvoyant,
                floats_per_robot_step: s.bandwidth.as_ref().map(|b| {
                    b.per_robot_floats.iter().sum::<f64>() / b.per_robot_floats.len().max(1) as f64
                }),
                mean_neighbors: s.bandwidth.as_ref().map(|b| b.mean_neighbors),
            })
            .collect()
    }

    /// Per step and controller: mean and std of normalized cost and best count.
    pub fn series(&self) -> Vec<SeriesRow> {
        let mut out = Vec::new();
        for s in &self.controllers {
            for (step, ((m, sd), b)) in s.mean_normalized.iter().zip(&s.std_normalized).zip(&s.best_counts).enumerate() {
                out.push(SeriesRow {
                    step,
                    controller: s.controller.name().to_string(),
                    mean_normalized_cost: *m,
                    std_normalized_cost: *sd,
                    best_count: *b,
                });
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub controller: String,
    pub n_envs: usize,
    pub comm_range: f64,
    pub noise_sigma: f64,
    pub mean_final_cost: f64,
    pub std_final_cost: f64,
    pub mean_final_normalized: f64,
    pub mean_final_observed_pct: f64,
    pub best_count_total: usize,
    pub improvement_vs_dcvt_pct: Option<f64>,
    pub ratio_vs_clairvoyant: Option<f64>,
    pub floats_per_robot_step: Option<f64>,
    pub mean_neighbors: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    pub step: usize,
    pub controller: String,
    pub mean_normalized_cost: f64,
    pub std_normalized_cost: f64,
    pub best_count: usize,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    if n == 0.0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Runs every controller on every environment and aggregates.
pub fn evaluate_batch(config: &BatchConfig, policy: Option<&PolicyWeights>) -> Result<BatchSummary, HarnessError> {
    if config.controllers.is_empty() || config.n_envs == 0 {
        return Err(HarnessError::InvalidConfig("need at least one controller and one environment".into()));
    }
    if config.controllers.contains(&Controller::Lpac) && policy.is_none() {
        return Err(HarnessError::MissingWeights);
    }
    let envs: Vec<Environment> = (config.env_offset..config.env_offset + config.n_envs)
        .map(|e| make_environment(&config.world, e, config.n_features, None))
        .collect::<Result<_, _>>()?;
    let options = EpisodeOptions {
        horizon: config.horizon,
        noise_sigma: config.noise_sigma,
        epsilon: config.epsilon,
        record_messages: true,
        schedule: config.schedule,
        ..EpisodeOptions::default()
    };
    let jobs: Vec<(usize, Controller)> =
        (0..envs.len()).flat_map(|e| config.controllers.iter().map(move |c| (e, *c))).collect();
    let episodes: Vec<EpisodeResult> = jobs
        .par_iter()
        .map(|(e, c)| run_episode_in(&envs[*e], *c, &options, policy))
        .collect::<Result<_, _>>()?;

    let n_steps = config.horizon + 1;
    let n_ctrl = config.controllers.len();
    // episodes[e * n_ctrl + c]
    let mut best = vec![vec![0usize; n_steps]; n_ctrl];
    for per_env in episodes.chunks(n_ctrl) {
        for t in 1..n_steps {
            let min = per_env.iter().map(|ep| ep.rows[t].cost).fold(f64::INFINITY, f64::min);
            for (counts, ep) in best.iter_mut().zip(per_env) {
                if ep.rows[t].cost == min {
                    counts[t] += 1;
                }
            }
        }
    }

    let mut controllers: Vec<ControllerSummary> = config
        .controllers
        .iter()
        .enumerate()
        .map(|(ci, c)| {
            let mine: Vec<&EpisodeResult> = (0..envs.len()).map(|e| &episodes[e * n_ctrl + ci]).collect();
            let (mean_normalized, std_normalized) = (0..n_steps)
                .map(|t| mean_std(mine.iter().map(move |ep| ep.rows[t].normalized_cost)))
                .unzip();
            let (mean_final_cost, std_final_cost) = mean_std(mine.iter().map(|ep| ep.final_row().cost));
            let bandwidth = (*c == Controller::Lpac).then(|| {
                let mut log = MessageLog::default();
                let mut steps = 0;
                for ep in &mine {
                    if let Some(m) = &ep.messages {
                        log.extend(m.clone());
                    }
                    steps += ep.steps_executed;
                }
                bandwidth_report(&log, config.world.n_robots, steps)
            });
            ControllerSummary {
                controller: *c,
                mean_normalized,
                std_normalized,
                best_counts: best[ci].clone(),
                mean_final_cost,
                std_final_cost,
                mean_final_normalized: mean_std(mine.iter().map(|ep| ep.final_row().normalized_cost)).0,
                mean_final_observed_pct: mean_std(mine.iter().map(|ep| ep.final_row().observed_area_pct)).0,
                improvement_vs_dcvt_pct: None,
                ratio_vs_clairvoyant: None,
                bandwidth,
            }
        })
        .collect();

    let reference = |c: Controller, cs: &[ControllerSummary]| cs.iter().find(|s| s.controller == c).map(|s| s.mean_final_cost);
    let dcvt = reference(Controller::DCvt, &controllers);
    let clair = reference(Controller::Clairvoyant, &controllers);
    for s in &mut controllers {
        s.improvement_vs_dcvt_pct = dcvt.map(|d| (d - s.mean_final_cost) / d * 100.0);
        s.ratio_vs_clairvoyant = clair.map(|c| s.mean_final_cost / c);
    }
    let mut episodes = episodes;
    for ep in &mut episodes {
        ep.messages = None;
    }
    Ok(BatchSummary { config: config.clone(), controllers, episodes })
}

/// Repeats the batch with position-noise levels `sigmas`.
pub fn noise_sweep(config: &BatchConfig, sigmas: &[f64], policy: Option<&PolicyWeights>) -> Result<Vec<BatchSummary>, HarnessError> {
    sigmas.iter().map(|s| evaluate_batch(&BatchConfig { noise_sigma: *s, ..config.clone() }, policy)).collect()
}

/// Repeats the batch with communication ranges `ranges`.
pub fn comm_range_sweep(config: &BatchConfig, ranges: &[f64], policy: Option<&PolicyWeights>) -> Result<Vec<BatchSummary>, HarnessError> {
    ranges
        .iter()
        .map(|r| {
            let world = WorldParams { comm_range: *r, ..config.world.clone() };
            evaluate_batch(&BatchConfig { world, ..config.clone() }, policy)
        })
        .collect()
}

/// Noise levels of the position-noise experiment, meters.
pub const NOISE_LEVELS: [f64; 4] = [5.0, 10.0, 15.0, 20.0];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::metrics_to_string;

    fn tiny_params() -> WorldParams {
        WorldParams { side_length: 96, n_robots: 3, sensor_side: 16, comm_range: 40.0, seed: 11, ..WorldParams::default() }
    }

    #[test]
    fn controller_names_round_trip() {
        for c in Controller::ALL {
            assert_eq!(c.name().parse::<Controller>().unwrap(), c);
            assert_eq!(serde_json::to_string(&c).unwrap(), format!("\"{}\"", c.name()));
        }
        assert!(matches!("cvt".parse::<Controller>(), Err(HarnessError::UnknownController(_))));
    }

    #[test]
    fn lpac_without_weights_is_rejected() {
        let env = make_environment(&tiny_params(), 0, 3, None).unwrap();
        let err = run_episode_in(&env, Controller::Lpac, &EpisodeOptions::default(), None).unwrap_err();
        assert!(matches!(err, HarnessError::MissingWeights));
    }

    #[test]
    fn zero_weight_lpac_is_stationary() {
        let params = tiny_params();
        let env = make_environment(&params, 0, 3, None).unwrap();
        let arch = Architecture { window_size: 32, channel_size: 8, gnn_hidden: 16, cnn_channels: 4, mlp_hidden: 8, ..Architecture::default() };
        let policy = PolicyWeights::zeros(arch);
        let opts = EpisodeOptions { horizon: 12, ..EpisodeOptions::default() };
        let ep = run_episode_in(&env, Controller::Lpac, &opts, Some(&policy)).unwrap();
        assert_eq!(ep.rows.len(), 13);
        assert!(ep.rows.iter().all(|r| r.normalized_cost == 1.0 && r.cost == ep.rows[0].cost));
    }

    #[test]
    fn flat_extension_after_convergence() {
        let env = make_environment(&tiny_params(), 1, 3, None).unwrap();
        let opts = EpisodeOptions { horizon: 400, ..EpisodeOptions::default() };
        let ep = run_episode_in(&env, Controller::Clairvoyant, &opts, None).unwrap();
        let at = ep.converged_at.expect("small world converges");
        assert_eq!(ep.rows.len(), 401);
        assert_eq!(ep.steps_executed, at);
        for (t, r) in ep.rows.iter().enumerate() {
            assert_eq!(r.step, t);
        }
        assert!(ep.rows[at..].iter().all(|r| r.cost == ep.rows[at].cost));
        assert_eq!(ep.rows[0].normalized_cost, 1.0);
    }

    #[test]
    fn seed_isolation_across_batches() {
        let base = BatchConfig {
            world: tiny_params(),
            controllers: vec![Controller::DCvt],
            n_envs: 2,
            n_features: 3,
            horizon: 30,
            noise_sigma: 2.0,
            ..BatchConfig::desk()
        };
        let alone = evaluate_batch(&base, None).unwrap();
        let both = evaluate_batch(&BatchConfig { controllers: vec![Controller::Clairvoyant, Controller::DCvt], ..base.clone() }, None)
            .unwrap();
        let pick = |s: &BatchSummary| {
            s.episodes.iter().filter(|e| e.controller == Controller::DCvt).flat_map(|e| e.rows.clone()).collect::<Vec<_>>()
        };
        assert_eq!(metrics_to_string(&pick(&alone)), metrics_to_string(&pick(&both)));
    }

    #[test]
    fn self_comparisons() {
        let cfg = BatchConfig {
            world: tiny_params(),
            controllers: vec![Controller::Clairvoyant],
            n_envs: 2,
            n_features: 3,
            horizon: 20,
            ..BatchConfig::desk()
        };
        let s = evaluate_batch(&cfg, None).unwrap();
        let c = s.get(Controller::Clairvoyant).unwrap();
        assert_eq!(c.ratio_vs_clairvoyant, Some(1.0));
        assert_eq!(c.improvement_vs_dcvt_pct, None);
        assert_eq!(c.best_counts[0], 0);
        assert!(c.best_counts[1..].iter().all(|b| *b == 2));

        let cfg = BatchConfig { controllers: vec![Controller::DCvt], ..cfg };
        let s = evaluate_batch(&cfg, None).unwrap();
        assert_eq!(s.get(Controller::DCvt).unwrap().improvement_vs_dcvt_pct, Some(0.0));
    }
}
