//! Grid environment: importance field generation, robot kinematics and sensing.
//!
//! The workspace is the square `[0, side]²` discretized into 1 m² cells. Cell
//! `(col, row)` has its center at `(col + 0.5, row + 0.5)` and is stored at
//! `row * side + col`. Region membership (sensor footprint, truncation disc,
//! Voronoi cell) is always decided by the cell center.

use std::path::Path;
use std::sync::Arc;

use log::warn;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{cell_center, cells_in_interval, Vec2};

pub const SIGMA_RANGE: (f64, f64) = (40.0, 60.0);
pub const SCALE_RANGE: (f64, f64) = (6.0, 10.0);

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("invalid world parameters: {0}")]
    InvalidParams(String),
    #[error("expected {expected} velocities, got {got}")]
    VelocityCount { expected: usize, got: usize },
    #[error("robot {robot} was given a non-finite velocity")]
    NonFiniteVelocity { robot: usize },
    #[error("expected {expected} robot positions, got {got}")]
    PositionCount { expected: usize, got: usize },
    #[error("robot {robot} starts outside the workspace")]
    PositionOutOfBounds { robot: usize },
    #[error("feature file: {0}")]
    Io(#[from] std::io::Error),
    #[error("feature file line {line}: {msg}")]
    MalformedLine { line: usize, msg: String },
    #[error("feature file line {line}: center ({x}, {y}) lies outside the workspace")]
    FeatureOutOfBounds { line: usize, x: f64, y: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldParams {
    /// Side of the square workspace in meters (= cells).
    pub side_length: usize,
    pub n_robots: usize,
    /// Side of the square sensor footprint in meters.
    pub sensor_side: usize,
    pub comm_range: f64,
    pub max_speed: f64,
    pub dt: f64,
    pub seed: u64,
    /// Keep only the inscribed disk of the square footprint.
    pub disk_fov: bool,
}

impl Default for WorldParams {
    fn default() -> Self {
        Self {
            side_length: 1024,
            n_robots: 32,
            sensor_side: 64,
            comm_range: 128.0,
            max_speed: 5.0,
            dt: 0.2,
            seed: 0,
            disk_fov: false,
        }
    }
}

impl WorldParams {
    /// 256 m workspace with 8 robots, otherwise the default robot parameters.
    pub fn desk() -> Self {
        Self { side_length: 256, n_robots: 8, ..Self::default() }
    }

    pub fn n_cells(&self) -> usize {
        self.side_length * self.side_length
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        let bad = |m: &str| Err(WorldError::InvalidParams(m.to_string()));
        if self.side_length == 0 {
            return bad("side_length must be positive");
        }
        if self.n_robots == 0 {
            return bad("n_robots must be positive");
        }
        if !self.sensor_side.is_multiple_of(2) || self.sensor_side == 0 {
            return bad("sensor_side must be a positive even number");
        }
        if self.sensor_side >= self.side_length {
            return bad("sensor_side must be smaller than side_length");
        }
        if !(self.comm_range > 0.0 && self.comm_range.is_finite()) {
            return bad("comm_range must be positive");
        }
        if !(self.max_speed >= 0.0 && self.max_speed.is_finite()) {
            return bad("max_speed must be non-negative");
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt must be positive");
        }
        if self.max_speed * self.dt > self.sensor_side as f64 / 2.0 {
            return bad("max_speed * dt exceeds half the sensor footprint");
        }
        Ok(())
    }

    pub fn contains(&self, p: Vec2) -> bool {
        let s = self.side_length as f64;
        (0.0..=s).contains(&p.x) && (0.0..=s).contains(&p.y)
    }
}

/// One Gaussian feature of interest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub center: Vec2,
    pub sigma: f64,
    pub scale: f64,
}

pub fn generate_features(params: &WorldParams, n_features: usize, rng: &mut ChaCha8Rng) -> Vec<FeatureSpec> {
    let side = params.side_length as f64;
    (0..n_features)
        .map(|_| {
            let center = Vec2::new(rng.random_range(0.0..side), rng.random_range(0.0..side));
            let (sigma, scale) = random_shape(rng);
            FeatureSpec { center, sigma, scale }
        })
        .collect()
}

fn random_shape(rng: &mut ChaCha8Rng) -> (f64, f64) {
    let sigma = rng.random_range(SIGMA_RANGE.0..=SIGMA_RANGE.1);
    let scale = rng.random_range(SCALE_RANGE.0..=SCALE_RANGE.1);
    (sigma, scale)
}

/// Normal CDF.
fn std_normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Probability mass of `N(mean, sigma²)` on `[a, b]`.
pub fn gaussian_interval_mass(a: f64, b: f64, mean: f64, sigma: f64) -> f64 {
    let za = (a - mean) / sigma;
    let zb = (b - mean) / sigma;
    // Subtract in the tail that keeps the most precision.
    if za >= 0.0 {
        std_normal_cdf(-za) - std_normal_cdf(-zb)
    } else {
        std_normal_cdf(zb) - std_normal_cdf(za)
    }
}

/// Importance density over the grid, max value 1 unless identically zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceField {
    side: usize,
    values: Vec<f64>,
}

impl ImportanceField {
    pub fn zeros(side: usize) -> Self {
        Self { side, values: vec![0.0; side * side] }
    }

    pub fn uniform(side: usize, value: f64) -> Self {
        Self { side, values: vec![value; side * side] }
    }

    /// Wraps raw values. Panics if `values.len() != side²` or any value is negative.
    pub fn from_values(side: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), side * side, "field has wrong number of cells");
        assert!(values.iter().all(|v| *v >= 0.0), "importance must be non-negative");
        Self { side, values }
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> f64 {
        self.values[row * self.side + col]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn total(&self) -> f64 {
        self.values.chunks(self.side).map(|r| r.iter().sum::<f64>()).sum()
    }
}

/// Sums the truncated per-cell Gaussian integrals of every feature, before normalization.
pub fn unnormalized_idf(features: &[FeatureSpec], side: usize) -> ImportanceField {
    let mut values = vec![0.0; side * side];
    for f in features {
        let reach = 2.0 * f.sigma;
        let cols = cells_in_interval(f.center.x - reach, f.center.x + reach + 1.0, side);
        let rows = cells_in_interval(f.center.y - reach, f.center.y + reach + 1.0, side);
        let gx: Vec<f64> =
            cols.clone().map(|c| gaussian_interval_mass(c as f64, c as f64 + 1.0, f.center.x, f.sigma)).collect();
        for row in rows {
            let gy = gaussian_interval_mass(row as f64, row as f64 + 1.0, f.center.y, f.sigma);
            for (col, gxc) in cols.clone().zip(&gx) {
                if cell_center(col, row).dist(f.center) <= reach {
                    values[row * side + col] += f.scale * gxc * gy;
                }
            }
        }
    }
    ImportanceField { side, values }
}

/// Builds the importance field and normalizes it so the largest cell is exactly 1.
pub fn generate_idf(features: &[FeatureSpec], params: &WorldParams) -> ImportanceField {
    let mut field = unnormalized_idf(features, params.side_length);
    let max = field.max();
    if max > 0.0 {
        field.values.iter_mut().for_each(|v| *v /= max);
    }
    field
}

/// Parses `x,y[,sigma,scale]` lines. Blank lines and `#` comments are skipped.
pub fn parse_feature_csv(text: &str, side: usize, rng: &mut ChaCha8Rng) -> Result<Vec<FeatureSpec>, WorldError> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let fields: Result<Vec<f64>, _> = body.split(',').map(|s| s.trim().parse::<f64>()).collect();
        let fields = fields.map_err(|e| WorldError::MalformedLine { line, msg: e.to_string() })?;
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(WorldError::MalformedLine { line, msg: "non-finite value".into() });
        }
        let (x, y) = match fields.as_slice() {
            [x, y] | [x, y, _, _] => (*x, *y),
            _ => {
                return Err(WorldError::MalformedLine {
                    line,
                    msg: format!("expected 2 or 4 fields, found {}", fields.len()),
                })
            }
        };
        let s = side as f64;
        if !(0.0..=s).contains(&x) || !(0.0..=s).contains(&y) {
            return Err(WorldError::FeatureOutOfBounds { line, x, y });
        }
        let (sigma, scale) = match fields.as_slice() {
            [_, _, sigma, scale] => {
                if *sigma <= 0.0 || *scale <= 0.0 {
                    return Err(WorldError::MalformedLine { line, msg: "sigma and scale must be positive".into() });
                }
                (*sigma, *scale)
            }
            _ => random_shape(rng),
        };
        out.push(FeatureSpec { center: Vec2::new(x, y), sigma, scale });
    }
    if out.is_empty() {
        warn!("feature file contains no features");
    }
    Ok(out)
}

pub fn ingest_feature_file(path: &Path, side: usize, rng: &mut ChaCha8Rng) -> Result<Vec<FeatureSpec>, WorldError> {
    let text = std::fs::read_to_string(path)?;
    parse_feature_csv(&text, side, rng)
}

/// Returns `p + ε` with `ε ~ N(0, sigma²)` per axis.
pub fn noisy_positions(positions: &[Vec2], sigma: f64, rng: &mut ChaCha8Rng) -> Vec<Vec2> {
    if sigma == 0.0 {
        return positions.to_vec();
    }
    let normal = Normal::new(0.0, sigma).expect("noise sigma must be finite and non-negative");
    positions.iter().map(|p| Vec2::new(p.x + normal.sample(rng), p.y + normal.sample(rng))).collect()
}

/// Inclusive bounding box of observed cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellBox {
    pub col_min: usize,
    pub col_max: usize,
    pub row_min: usize,
    pub row_max: usize,
}

impl CellBox {
    fn extend(&mut self, col: usize, row: usize) {
        self.col_min = self.col_min.min(col);
        self.col_max = self.col_max.max(col);
        self.row_min = self.row_min.min(row);
        self.row_max = self.row_max.max(row);
    }
}

#[derive(Debug, Clone)]
pub struct RobotState {
    pub position: Vec2,
    observed_mask: Vec<bool>,
    observed_count: usize,
    observed_box: Option<CellBox>,
    pub trajectory: Vec<Vec2>,
}

impl RobotState {
    fn new(position: Vec2, n_cells: usize) -> Self {
        Self {
            position,
            observed_mask: vec![false; n_cells],
            observed_count: 0,
            observed_box: None,
            trajectory: vec![position],
        }
    }

    pub fn observed_mask(&self) -> &[bool] {
        &self.observed_mask
    }

    pub fn observed_count(&self) -> usize {
        self.observed_count
    }

    pub fn observed_box(&self) -> Option<CellBox> {
        self.observed_box
    }

    /// Sensed importance at a cell, 0 where never observed.
    #[inline]
    pub fn observed_importance(&self, field: &ImportanceField, col: usize, row: usize) -> f64 {
        let i = row * field.side() + col;
        if self.observed_mask[i] {
            field.values[i]
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone)]
struct PositionNoise {
    sigma: f64,
    rng: ChaCha8Rng,
}

#[derive(Debug, Clone)]
pub struct WorldState {
    params: WorldParams,
    idf: Arc<ImportanceField>,
    robots: Vec<RobotState>,
    team_mask: Vec<bool>,
    team_count: usize,
    step_count: usize,
    noise: Option<PositionNoise>,
    estimates: Vec<Vec2>,
}

impl WorldState {
    /// Places robots at `positions` and performs the initial sensing pass.
    pub fn new(params: WorldParams, idf: Arc<ImportanceField>, positions: &[Vec2]) -> Result<Self, WorldError> {
        params.validate()?;
        if idf.side() != params.side_length {
            return Err(WorldError::InvalidParams(format!(
                "field side {} does not match side_length {}",
                idf.side(),
                params.side_length
            )));
        }
        if positions.len() != params.n_robots {
            return Err(WorldError::PositionCount { expected: params.n_robots, got: positions.len() });
        }
        if let Some(robot) = positions.iter().position(|p| !p.is_finite() || !params.contains(*p)) {
            return Err(WorldError::PositionOutOfBounds { robot });
        }
        let n_cells = params.n_cells();
        let robots = positions.iter().map(|p| RobotState::new(*p, n_cells)).collect();
        let mut world = Self {
            params,
            idf,
            robots,
            team_mask: vec![false; n_cells],
            team_count: 0,
            step_count: 0,
            noise: None,
            estimates: positions.to_vec(),
        };
        for i in 0..world.robots.len() {
            world.sense(i);
        }
        Ok(world)
    }

    /// Uniformly random start positions from `rng`.
    pub fn with_random_robots(
        params: WorldParams,
        idf: Arc<ImportanceField>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, WorldError> {
        let side = params.side_length as f64;
        let positions: Vec<Vec2> = (0..params.n_robots)
            .map(|_| Vec2::new(rng.random_range(0.0..side), rng.random_range(0.0..side)))
            .collect();
        Self::new(params, idf, &positions)
    }

    /// Enables noisy position estimates for every downstream consumer.
    pub fn enable_position_noise(&mut self, sigma: f64, rng: ChaCha8Rng) {
        assert!(sigma >= 0.0 && sigma.is_finite(), "noise sigma must be finite and non-negative");
        self.noise = Some(PositionNoise { sigma, rng });
        self.refresh_estimates();
    }

    fn refresh_estimates(&mut self) {
        let truth: Vec<Vec2> = self.robots.iter().map(|r| r.position).collect();
        self.estimates = match &mut self.noise {
            Some(n) => noisy_positions(&truth, n.sigma, &mut n.rng),
            None => truth,
        };
    }

    pub fn params(&self) -> &WorldParams {
        &self.params
    }

    pub fn idf(&self) -> &ImportanceField {
        &self.idf
    }

    pub fn idf_arc(&self) -> Arc<ImportanceField> {
        Arc::clone(&self.idf)
    }

    pub fn robots(&self) -> &[RobotState] {
        &self.robots
    }

    pub fn n_robots(&self) -> usize {
        self.robots.len()
    }

    pub fn step_count(&self) -> usize {
        self.step_count
    }

    pub fn positions(&self) -> Vec<Vec2> {
        self.robots.iter().map(|r| r.position).collect()
    }

    /// Positions as perceived by the robots (true positions unless noise is enabled).
    pub fn estimated_positions(&self) -> &[Vec2] {
        &self.estimates
    }

    /// Union of every robot's observed cells.
    pub fn team_mask(&self) -> &[bool] {
        &self.team_mask
    }

    pub fn observed_area_pct(&self) -> f64 {
        100.0 * self.team_count as f64 / self.team_mask.len() as f64
    }

    /// Marks the cells in robot `index`'s footprint as observed. Returns how many were new.
    pub fn sense(&mut self, index: usize) -> usize {
        let side = self.params.side_length;
        let half = self.params.sensor_side as f64 / 2.0;
        let disk = self.params.disk_fov;
        let robot = &mut self.robots[index];
        let p = robot.position;
        let cols = cells_in_interval(p.x - half, p.x + half, side);
        let rows = cells_in_interval(p.y - half, p.y + half, side);
        let mut fresh = 0;
        for row in rows {
            for col in cols.clone() {
                if disk && cell_center(col, row).dist(p) > half {
                    continue;
                }
                let i = row * side + col;
                if !robot.observed_mask[i] {
                    robot.observed_mask[i] = true;
                    robot.observed_count += 1;
                    match &mut robot.observed_box {
                        Some(b) => b.extend(col, row),
                        None => {
                            robot.observed_box = Some(CellBox { col_min: col, col_max: col, row_min: row, row_max: row })
                        }
                    }
                    fresh += 1;
                }
                if !self.team_mask[i] {
                    self.team_mask[i] = true;
                    self.team_count += 1;
                }
            }
        }
        fresh
    }

    /// Advances one control step: speed clamp, move, workspace clamp, sense.
    pub fn step(&mut self, velocities: &[Vec2]) -> Result<(), WorldError> {
        if velocities.len() != self.robots.len() {
            return Err(WorldError::VelocityCount { expected: self.robots.len(), got: velocities.len() });
        }
        if let Some(robot) = velocities.iter().position(|v| !v.is_finite()) {
            return Err(WorldError::NonFiniteVelocity { robot });
        }
        let side = self.params.side_length as f64;
        for (robot, v) in self.robots.iter_mut().zip(velocities) {
            let v = v.clamp_norm(self.params.max_speed);
            robot.position = (robot.position + v * self.params.dt).clamp_box(0.0, side);
            robot.trajectory.push(robot.position);
        }
        self.step_count += 1;
        for i in 0..self.robots.len() {
            self.sense(i);
        }
        self.refresh_estimates();
        Ok(())
    }
}

/// Limits a commanded velocity to the robot's top speed.
pub fn clamp_speed(v: Vec2, params: &WorldParams) -> Vec2 {
    v.clamp_norm(params.max_speed)
}
