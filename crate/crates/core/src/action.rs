//! Action MLP and the full perception → communication → action policy.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::arch::{Architecture, ShapeError};
use crate::geom::Vec2;
use crate::gnn_comms::{build_comm_graph, gnn_forward_distributed, CommGraph, GnnWeights, MessageLog, MessageSchedule};
use crate::perception::{build_local_maps, cnn_forward, CnnWeights};
use crate::world::WorldState;

/// Two hidden ReLU layers and a linear 2-D output. Weights are `[out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpWeights {
    pub fc1_weight: Array2<f32>,
    pub fc1_bias: Array1<f32>,
    pub fc2_weight: Array2<f32>,
    pub fc2_bias: Array1<f32>,
    pub out_weight: Array2<f32>,
    pub out_bias: Array1<f32>,
}

impl MlpWeights {
    pub fn zeros(arch: &Architecture) -> Self {
        let (d, h) = (arch.gnn_hidden, arch.mlp_hidden);
        Self {
            fc1_weight: Array2::zeros((h, d)),
            fc1_bias: Array1::zeros(h),
            fc2_weight: Array2::zeros((h, h)),
            fc2_bias: Array1::zeros(h),
            out_weight: Array2::zeros((2, h)),
            out_bias: Array1::zeros(2),
        }
    }

    pub fn random(arch: &Architecture, rng: &mut ChaCha8Rng) -> Self {
        let mut w = Self::zeros(arch);
        for (m, b) in [
            (&mut w.fc1_weight, &mut w.fc1_bias),
            (&mut w.fc2_weight, &mut w.fc2_bias),
            (&mut w.out_weight, &mut w.out_bias),
        ] {
            let a = (3.0 / m.ncols() as f32).sqrt();
            m.mapv_inplace(|_| rng.random_range(-a..a));
            b.mapv_inplace(|_| rng.random_range(-0.1..0.1));
        }
        w
    }

    pub fn validate(&self, arch: &Architecture) -> Result<(), ShapeError> {
        let (d, h) = (arch.gnn_hidden, arch.mlp_hidden);
        ShapeError::check("mlp.fc1.weight", &[h, d], self.fc1_weight.shape())?;
        ShapeError::check("mlp.fc1.bias", &[h], self.fc1_bias.shape())?;
        ShapeError::check("mlp.fc2.weight", &[h, h], self.fc2_weight.shape())?;
        ShapeError::check("mlp.fc2.bias", &[h], self.fc2_bias.shape())?;
        ShapeError::check("mlp.out.weight", &[2, h], self.out_weight.shape())?;
        ShapeError::check("mlp.out.bias", &[2], self.out_bias.shape())
    }
}

fn linear(x: &[f64], w: &Array2<f32>, b: &Array1<f32>) -> Vec<f64> {
    w.rows()
        .into_iter()
        .zip(b)
        .map(|(row, bias)| row.iter().zip(x).fold(f64::from(*bias), |acc, (w, x)| acc + f64::from(*w) * x))
        .collect()
}

/// Maps one robot's GNN output to a velocity command.
pub fn mlp_forward(x: &[f64], w: &MlpWeights) -> Result<Vec2, ShapeError> {
    ShapeError::check("mlp.input", &[w.fc1_weight.ncols()], &[x.len()])?;
    let h = linear(x, &w.fc1_weight, &w.fc1_bias).into_iter().map(|v| v.max(0.0)).collect::<Vec<_>>();
    let h = linear(&h, &w.fc2_weight, &w.fc2_bias).into_iter().map(|v| v.max(0.0)).collect::<Vec<_>>();
    let out = linear(&h, &w.out_weight, &w.out_bias);
    Ok(Vec2::new(out[0], out[1]))
}

/// All learned parameters of the policy.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyWeights {
    pub arch: Architecture,
    pub cnn: CnnWeights,
    pub gnn: GnnWeights,
    pub mlp: MlpWeights,
}

impl PolicyWeights {
    pub fn zeros(arch: Architecture) -> Self {
        Self { cnn: CnnWeights::zeros(&arch), gnn: GnnWeights::zeros(&arch), mlp: MlpWeights::zeros(&arch), arch }
    }

    /// Untrained weights; the sections draw from the given generator in order CNN, GNN, MLP.
    pub fn random(arch: Architecture, rng: &mut ChaCha8Rng) -> Self {
        let cnn = CnnWeights::random(&arch, rng);
        let gnn = GnnWeights::random(&arch, rng);
        let mlp = MlpWeights::random(&arch, rng);
        Self { arch, cnn, gnn, mlp }
    }

    pub fn validate(&self) -> Result<(), ShapeError> {
        self.cnn.validate(&self.arch)?;
        self.gnn.validate(&self.arch)?;
        self.mlp.validate(&self.arch)
    }
}

/// Intermediate products of one policy evaluation.
#[derive(Debug, Clone)]
pub struct LpacTrace {
    /// Commanded velocities before the speed clamp.
    pub velocities: Vec<Vec2>,
    /// Rows are the GNN inputs: CNN features then the normalized position estimate.
    pub gnn_inputs: Array2<f64>,
    pub gnn_outputs: Vec<Vec<f64>>,
    pub graph: CommGraph,
    pub log: MessageLog,
}

/// GNN input rows: each robot's CNN features followed by `p̄ / side`.
pub fn gnn_inputs(world: &WorldState, policy: &PolicyWeights) -> Result<Array2<f64>, ShapeError> {
    let arch = &policy.arch;
    let side = world.params().side_length as f64;
    let rows: Vec<Vec<f64>> = (0..world.n_robots())
        .into_par_iter()
        .map(|i| {
            let maps = build_local_maps(world, i, arch);
            let mut row = cnn_forward(&maps, &policy.cnn, arch)?;
            let p = world.estimated_positions()[i];
            row.push(p.x / side);
            row.push(p.y / side);
            Ok(row)
        })
        .collect::<Result<_, ShapeError>>()?;
    let mut x = Array2::zeros((rows.len(), arch.gnn_input));
    for (i, r) in rows.iter().enumerate() {
        x.row_mut(i).assign(&Array1::from(r.clone()));
    }
    Ok(x)
}

/// One decentralized policy step. The GNN runs as message-passing robots on the
/// graph induced by the position estimates.
pub fn lpac_step(world: &WorldState, policy: &PolicyWeights, schedule: MessageSchedule) -> Result<LpacTrace, ShapeError> {
    policy.validate()?;
    let x = gnn_inputs(world, policy)?;
    let graph = build_comm_graph(world.estimated_positions(), world.params().comm_range);
    let inputs: Vec<Vec<f64>> = x.rows().into_iter().map(|r| r.to_vec()).collect();
    let gnn = gnn_forward_distributed(&inputs, &graph, &policy.gnn, schedule, world.step_count(), false)?;
    let velocities = gnn.outputs.par_iter().map(|h| mlp_forward(h, &policy.mlp)).collect::<Result<Vec<_>, _>>()?;
    Ok(LpacTrace { velocities, gnn_inputs: x, gnn_outputs: gnn.outputs, graph, log: gnn.log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gnn_comms::{gnn_forward_centralized, shift_operator};
    use crate::rng::{substream, Stream};
    use crate::world::{generate_features, generate_idf, ImportanceField, WorldParams};
    use std::sync::Arc;

    #[test]
    fn mlp_hand_computed() {
        let arch = Architecture { gnn_hidden: 2, mlp_hidden: 2, ..Architecture::default() };
        let mut w = MlpWeights::zeros(&arch);
        w.fc1_weight = ndarray::arr2(&[[1.0, 0.0], [0.0, -1.0]]);
        w.fc1_bias = ndarray::arr1(&[0.5, 0.0]);
        w.fc2_weight = ndarray::arr2(&[[2.0, 0.0], [1.0, 1.0]]);
        w.out_weight = ndarray::arr2(&[[1.0, 0.0], [0.0, 1.0]]);
        w.out_bias = ndarray::arr1(&[0.0, -1.0]);
        // h1 = relu([1.5, -2]) = [1.5, 0]; h2 = relu([3, 1.5]); out = [3, 0.5]
        assert_eq!(mlp_forward(&[1.0, 2.0], &w).unwrap(), Vec2::new(3.0, 0.5));
    }

    #[test]
    fn mlp_rejects_wrong_width() {
        let w = MlpWeights::zeros(&Architecture::default());
        assert_eq!(mlp_forward(&[0.0; 3], &w).unwrap_err().tensor, "mlp.input");
    }

    #[test]
    fn zero_policy_outputs_zero() {
        let params = WorldParams::desk();
        let idf = Arc::new(ImportanceField::uniform(params.side_length, 1.0));
        let world = WorldState::with_random_robots(params, idf, &mut substream(3, Stream::RobotInit, 0)).unwrap();
        let trace = lpac_step(&world, &PolicyWeights::zeros(Architecture::default()), MessageSchedule::Projected).unwrap();
        assert!(trace.velocities.iter().all(|v| *v == Vec2::ZERO));
    }

    #[test]
    fn pipeline_matches_centralized_oracle() {
        let params = WorldParams { comm_range: 100.0, ..WorldParams::desk() };
        let features = generate_features(&params, 8, &mut substream(5, Stream::Features, 0));
        let idf = Arc::new(generate_idf(&features, &params));
        let world = WorldState::with_random_robots(params.clone(), idf, &mut substream(5, Stream::RobotInit, 0)).unwrap();
        let policy = PolicyWeights::random(Architecture::default(), &mut substream(5, Stream::Weights, 0));
        let trace = lpac_step(&world, &policy, MessageSchedule::Projected).unwrap();

        let s = shift_operator(&build_comm_graph(world.estimated_positions(), params.comm_range));
        let central = gnn_forward_centralized(&trace.gnn_inputs, &s, &policy.gnn).unwrap();
        for (i, v) in trace.velocities.iter().enumerate() {
            let expect = mlp_forward(&central.row(i).to_vec(), &policy.mlp).unwrap();
            assert!(v.dist(expect) <= 1e-9 * (1.0 + expect.norm()), "robot {i}: {v:?} vs {expect:?}");
        }
        let side = params.side_length as f64;
        for (i, p) in world.estimated_positions().iter().enumerate() {
            assert_eq!(trace.gnn_inputs[[i, 32]], p.x / side);
            assert_eq!(trace.gnn_inputs[[i, 33]], p.y / side);
        }
    }
}
