//! Communication graph, graph-convolution GNN and its distributed executor.
//!
//! A graph convolution layer computes `Z = Σ_{k=0..K} S^k X H_k`, `X' = relu(Z)`
//! with `S = D^{-1/2} A D^{-1/2}`. The centralized forward evaluates this on the
//! whole team at once. The distributed executor runs one [`RobotNode`] per robot:
//! in each of the `K` synchronous rounds of a layer every robot transmits one
//! vector to its neighbors and folds the weighted sum of what it received into
//! its local state. Nodes share nothing but the immutable payloads.
//!
//! Two message schedules compute the same filter:
//!
//! * [`MessageSchedule::Projected`] (default) evaluates the polynomial in Horner
//!   form, `Z = X H_0 + S(X H_1 + S(… + S X H_K))`. The first round of a layer sends
//!   whichever of the raw input `x` or `x H_K` is shorter and every later round
//!   sends a `d_out`-wide partial sum. With the default architecture a robot sends
//!   `34 + 14·256 = 3618` floats per control step.
//! * [`MessageSchedule::Diffusion`] sends the diffused inputs `(S^k X)_i` for
//!   `k = 0..K-1`, each `d_in` wide.

use std::fmt::Write as _;
use std::sync::Arc;

use ndarray::{Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arch::{Architecture, ShapeError};
use crate::geom::Vec2;

/// Undirected communication graph; `i ~ j` iff `‖p_i − p_j‖ ≤ r_c`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommGraph {
    neighbors: Vec<Vec<usize>>,
}

impl CommGraph {
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut neighbors = vec![Vec::new(); n];
        for &(i, j) in edges {
            assert!(i != j && i < n && j < n, "invalid edge ({i}, {j})");
            neighbors[i].push(j);
            neighbors[j].push(i);
        }
        for list in &mut neighbors {
            list.sort_unstable();
            list.dedup();
        }
        Self { neighbors }
    }

    pub fn n(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.neighbors.iter().map(Vec::len).collect()
    }

    /// Edges `(i, j)` with `i < j`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.neighbors
            .iter()
            .enumerate()
            .flat_map(|(i, ns)| ns.iter().filter(move |j| **j > i).map(move |j| (i, *j)))
            .collect()
    }

    pub fn mean_degree(&self) -> f64 {
        if self.n() == 0 {
            return 0.0;
        }
        self.neighbors.iter().map(Vec::len).sum::<usize>() as f64 / self.n() as f64
    }
}

pub fn build_comm_graph(positions: &[Vec2], comm_range: f64) -> CommGraph {
    let r2 = comm_range * comm_range;
    let n = positions.len();
    let mut neighbors = vec![Vec::new(); n];
    for i in 0..n {
        for j in (i + 1)..n {
            if positions[i].dist_sq(positions[j]) <= r2 {
                neighbors[i].push(j);
                neighbors[j].push(i);
            }
        }
    }
    for list in &mut neighbors {
        list.sort_unstable();
    }
    CommGraph { neighbors }
}

/// Sparse normalized adjacency, `s_ij = 1 / sqrt(d_i d_j)` on edges.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftOperator {
    rows: Vec<Vec<(usize, f64)>>,
}

pub fn shift_operator(graph: &CommGraph) -> ShiftOperator {
    let deg = graph.degrees();
    let rows = (0..graph.n())
        .map(|i| graph.neighbors(i).iter().map(|&j| (j, 1.0 / ((deg[i] * deg[j]) as f64).sqrt())).collect())
        .collect();
    ShiftOperator { rows }
}

impl ShiftOperator {
    pub fn n(&self) -> usize {
        self.rows.len()
    }

    /// Non-zero entries of row `i`, ascending column.
    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let n = self.n();
        let mut s = Array2::zeros((n, n));
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, v) in row {
                s[[i, j]] = v;
            }
        }
        s
    }

    /// `S · Y` for a row-per-node matrix `Y`.
    pub fn apply(&self, y: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros(y.raw_dim());
        for (i, row) in self.rows.iter().enumerate() {
            let mut dst = out.row_mut(i);
            for &(j, s) in row {
                dst.scaled_add(s, &y.row(j));
            }
        }
        out
    }
}

/// Filter taps `H_lk`, `layers[l - 1][k]` with shape `[d_(l-1), d_l]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GnnWeights {
    pub layers: Vec<Vec<Array2<f32>>>,
}

impl GnnWeights {
    fn with_dims(dims: &[usize], hops: usize, mut fill: impl FnMut(usize, usize) -> f32) -> Self {
        let layers = dims
            .windows(2)
            .map(|w| {
                (0..=hops)
                    .map(|_| {
                        let mut h = Array2::zeros((w[0], w[1]));
                        h.mapv_inplace(|_: f32| fill(w[0], hops));
                        h
                    })
                    .collect()
            })
            .collect();
        Self { layers }
    }

    pub fn zeros(arch: &Architecture) -> Self {
        Self::with_dims(&Self::arch_dims(arch), arch.gnn_hops, |_, _| 0.0)
    }

    pub fn random(arch: &Architecture, rng: &mut ChaCha8Rng) -> Self {
        Self::random_dims(&Self::arch_dims(arch), arch.gnn_hops, rng)
    }

    /// Random taps for layer widths `dims = [d_0, d_1, …, d_L]`, scaled so
    /// activations stay of order one.
    pub fn random_dims(dims: &[usize], hops: usize, rng: &mut ChaCha8Rng) -> Self {
        assert!(dims.len() >= 2, "need at least one layer");
        Self::with_dims(dims, hops, |fan_in, k| {
            let a = (6.0 / (fan_in * (k + 1)) as f32).sqrt();
            rng.random_range(-a..a)
        })
    }

    fn arch_dims(arch: &Architecture) -> Vec<usize> {
        std::iter::once(arch.gnn_input).chain(std::iter::repeat_n(arch.gnn_hidden, arch.gnn_layers)).collect()
    }

    pub fn hops(&self) -> usize {
        self.layers[0].len() - 1
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    /// `[d_0, …, d_L]`.
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.layers[0][0].nrows()).chain(self.layers.iter().map(|l| l[0].ncols())).collect()
    }

    /// Checks that the taps chain correctly.
    pub fn check_chain(&self) -> Result<(), ShapeError> {
        if self.layers.is_empty() {
            return Err(ShapeError { tensor: "gnn".into(), expected: vec![1], found: vec![0] });
        }
        let hops = self.hops();
        let mut d_in = self.layers[0][0].nrows();
        for (l, taps) in self.layers.iter().enumerate() {
            ShapeError::check(&format!("gnn.layer{}", l + 1), &[hops + 1], &[taps.len()])?;
            let d_out = taps[0].ncols();
            for (k, h) in taps.iter().enumerate() {
                ShapeError::check(&tap_name(l + 1, k), &[d_in, d_out], h.shape())?;
            }
            d_in = d_out;
        }
        Ok(())
    }

    pub fn validate(&self, arch: &Architecture) -> Result<(), ShapeError> {
        ShapeError::check("gnn.layers", &[arch.gnn_layers], &[self.layers.len()])?;
        for (l, taps) in self.layers.iter().enumerate() {
            ShapeError::check(&format!("gnn.layer{}", l + 1), &[arch.gnn_hops + 1], &[taps.len()])?;
            for (k, h) in taps.iter().enumerate() {
                ShapeError::check(&tap_name(l + 1, k), &[arch.layer_input(l + 1), arch.gnn_hidden], h.shape())?;
            }
        }
        Ok(())
    }
}

/// Weight-file name of tap `H_lk` (`l` is 1-based).
pub fn tap_name(l: usize, k: usize) -> String {
    format!("gnn.layer{l}.hop{k}.weight")
}

fn relu(x: f64) -> f64 {
    x.max(0.0)
}

/// Centralized forward: row `i` of the result is robot `i`'s GNN output.
pub fn gnn_forward_centralized(x0: &Array2<f64>, s: &ShiftOperator, weights: &GnnWeights) -> Result<Array2<f64>, ShapeError> {
    weights.check_chain()?;
    ShapeError::check("gnn.input", &[s.n(), weights.dims()[0]], x0.shape())?;
    let mut x = x0.clone();
    for taps in &weights.layers {
        let h: Vec<Array2<f64>> = taps.iter().map(|h| h.mapv(f64::from)).collect();
        let mut y = x.clone();
        let mut z = x.dot(&h[0]);
        for hk in &h[1..] {
            y = s.apply(&y);
            z += &y.dot(hk);
        }
        z.mapv_inplace(relu);
        x = z;
    }
    Ok(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum MessageSchedule {
    /// Horner-form partial sums; raw input on the first round when it is narrower.
    #[default]
    Projected,
    /// Diffused inputs `(S^k X)_i`.
    Diffusion,
}

/// Floats one robot transmits per control step (per neighbor set, counted once).
pub fn aggregated_message_floats(dims: &[usize], hops: usize, schedule: MessageSchedule) -> usize {
    if hops == 0 {
        return 0;
    }
    dims.windows(2)
        .map(|w| match schedule {
            MessageSchedule::Projected => w[0].min(w[1]) + (hops - 1) * w[1],
            MessageSchedule::Diffusion => hops * w[0],
        })
        .sum()
}

/// One vector put on the air by one robot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageRecord {
    pub step: usize,
    /// 1-based GNN layer.
    pub layer: usize,
    /// 0-based round within the layer.
    pub hop: usize,
    pub sender: usize,
    pub n_receivers: usize,
    pub floats: usize,
}

/// A payload as seen by its receiver.
#[derive(Debug, Clone, PartialEq)]
pub struct Received {
    pub layer: usize,
    pub hop: usize,
    pub sender: usize,
    pub payload: Arc<[f64]>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MessageLog {
    pub records: Vec<MessageRecord>,
    /// Neighbor count of every robot at every logged step.
    pub degree_samples: Vec<usize>,
}

impl MessageLog {
    pub fn extend(&mut self, other: MessageLog) {
        self.records.extend(other.records);
        self.degree_samples.extend(other.degree_samples);
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,layer,hop,sender,n_receivers,floats\n");
        for r in &self.records {
            writeln!(out, "{},{},{},{},{},{}", r.step, r.layer, r.hop, r.sender, r.n_receivers, r.floats).unwrap();
        }
        out
    }
}

fn vec_mat(v: &[f64], h: &Array2<f32>) -> Vec<f64> {
    let mut out = vec![0.0; h.ncols()];
    for (vr, hrow) in v.iter().zip(h.axis_iter(Axis(0))) {
        if *vr == 0.0 {
            continue;
        }
        for (o, w) in out.iter_mut().zip(hrow) {
            *o += vr * f64::from(*w);
        }
    }
    out
}

fn add_into(acc: &mut [f64], v: &[f64]) {
    acc.iter_mut().zip(v).for_each(|(a, b)| *a += b);
}

/// GNN state held by one robot.
#[derive(Debug, Clone)]
pub struct RobotNode {
    /// Row of the shift operator: the robot's neighbors and their weights.
    s_row: Vec<(usize, f64)>,
    schedule: MessageSchedule,
    x: Vec<f64>,
    carry: Vec<f64>,
    acc: Vec<f64>,
}

impl RobotNode {
    pub fn new(input: Vec<f64>, s_row: Vec<(usize, f64)>, schedule: MessageSchedule) -> Self {
        Self { s_row, schedule, x: input, carry: Vec::new(), acc: Vec::new() }
    }

    fn begin_layer(&mut self, taps: &[Array2<f32>]) {
        let k = taps.len() - 1;
        match self.schedule {
            MessageSchedule::Diffusion => {
                self.carry = self.x.clone();
                self.acc = vec_mat(&self.x, &taps[0]);
            }
            MessageSchedule::Projected => {
                if k == 0 {
                    self.acc = vec_mat(&self.x, &taps[0]);
                } else if self.sends_raw_first(taps) {
                    self.carry = self.x.clone();
                } else {
                    self.carry = vec_mat(&self.x, &taps[k]);
                }
            }
        }
    }

    fn sends_raw_first(&self, taps: &[Array2<f32>]) -> bool {
        taps[0].nrows() <= taps[0].ncols()
    }

    /// Vector this robot transmits in the current round.
    fn outgoing(&self) -> Arc<[f64]> {
        Arc::from(self.carry.as_slice())
    }

    /// Folds round `round` (1-based) of the layer. `inbox` follows the order of `s_row`.
    fn absorb(&mut self, round: usize, inbox: &[&[f64]], taps: &[Array2<f32>]) {
        let k = taps.len() - 1;
        let width = inbox.first().map_or(self.carry.len(), |m| m.len());
        let mut agg = vec![0.0; width];
        for (&(_, s), msg) in self.s_row.iter().zip(inbox) {
            agg.iter_mut().zip(msg.iter()).for_each(|(a, m)| *a += s * m);
        }
        match self.schedule {
            MessageSchedule::Diffusion => {
                add_into(&mut self.acc, &vec_mat(&agg, &taps[round]));
                self.carry = agg;
            }
            MessageSchedule::Projected => {
                let diffused = if round == 1 && self.sends_raw_first(taps) { vec_mat(&agg, &taps[k]) } else { agg };
                let mut next = vec_mat(&self.x, &taps[k - round]);
                add_into(&mut next, &diffused);
                self.carry = next;
            }
        }
    }

    fn finish_layer(&mut self, hops: usize) {
        let z = match self.schedule {
            MessageSchedule::Projected if hops > 0 => std::mem::take(&mut self.carry),
            _ => std::mem::take(&mut self.acc),
        };
        self.x = z.into_iter().map(relu).collect();
        self.carry.clear();
        self.acc.clear();
    }

    pub fn output(&self) -> &[f64] {
        &self.x
    }
}

#[derive(Debug, Clone)]
pub struct DistributedOutput {
    pub outputs: Vec<Vec<f64>>,
    pub log: MessageLog,
    /// Per robot, every payload it received, when requested.
    pub inboxes: Option<Vec<Vec<Received>>>,
}

/// Runs the GNN as `n` independent robots exchanging messages in barriered rounds.
pub fn gnn_forward_distributed(
    inputs: &[Vec<f64>],
    graph: &CommGraph,
    weights: &GnnWeights,
    schedule: MessageSchedule,
    step: usize,
    record_inboxes: bool,
) -> Result<DistributedOutput, ShapeError> {
    weights.check_chain()?;
    ShapeError::check("gnn.robots", &[graph.n()], &[inputs.len()])?;
    let d0 = weights.dims()[0];
    for (i, x) in inputs.iter().enumerate() {
        ShapeError::check(&format!("gnn.input[{i}]"), &[d0], &[x.len()])?;
    }
    let s = shift_operator(graph);
    let mut nodes: Vec<RobotNode> =
        inputs.iter().enumerate().map(|(i, x)| RobotNode::new(x.clone(), s.row(i).to_vec(), schedule)).collect();
    let mut log = MessageLog { records: Vec::new(), degree_samples: graph.degrees() };
    let mut inboxes = record_inboxes.then(|| vec![Vec::new(); nodes.len()]);
    let hops = weights.hops();

    for (l, taps) in weights.layers.iter().enumerate() {
        let layer = l + 1;
        nodes.par_iter_mut().for_each(|n| n.begin_layer(taps));
        for round in 1..=hops {
            let payloads: Vec<Arc<[f64]>> = nodes.iter().map(RobotNode::outgoing).collect();
            for (i, p) in payloads.iter().enumerate() {
                let receivers = graph.degree(i);
                if receivers > 0 {
                    log.records.push(MessageRecord {
                        step,
                        layer,
                        hop: round - 1,
                        sender: i,
                        n_receivers: receivers,
                        floats: p.len(),
                    });
                }
            }
            nodes.par_iter_mut().for_each(|node| {
                let inbox: Vec<&[f64]> = node.s_row.iter().map(|(j, _)| &*payloads[*j]).collect();
                node.absorb(round, &inbox, taps);
            });
            if let Some(boxes) = inboxes.as_mut() {
                for (i, b) in boxes.iter_mut().enumerate() {
                    for &j in graph.neighbors(i) {
                        b.push(Received { layer, hop: round - 1, sender: j, payload: Arc::clone(&payloads[j]) });
                    }
                }
            }
        }
        nodes.par_iter_mut().for_each(|n| n.finish_layer(hops));
    }
    Ok(DistributedOutput { outputs: nodes.into_iter().map(|n| n.x).collect(), log, inboxes })
}

/// Recomputes one robot's GNN output from its own input, its row of the shift
/// operator and the payloads it received.
pub fn replay_robot(
    input: Vec<f64>,
    s_row: &[(usize, f64)],
    received: &[Received],
    weights: &GnnWeights,
    schedule: MessageSchedule,
) -> Vec<f64> {
    let mut node = RobotNode::new(input, s_row.to_vec(), schedule);
    let hops = weights.hops();
    for (l, taps) in weights.layers.iter().enumerate() {
        node.begin_layer(taps);
        for round in 1..=hops {
            let inbox: Vec<&[f64]> = s_row
                .iter()
                .map(|(j, _)| {
                    received
                        .iter()
                        .find(|r| r.layer == l + 1 && r.hop == round - 1 && r.sender == *j)
                        .map(|r| &*r.payload)
                        .expect("missing payload in replay")
                })
                .collect();
            node.absorb(round, &inbox, taps);
        }
        node.finish_layer(hops);
    }
    node.x
}

/// Bandwidth summary of an episode's message log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandwidthReport {
    pub steps: usize,
    /// Floats each robot put on the air per step (broadcast counted once).
    pub per_robot_floats: Vec<f64>,
    /// Floats each robot delivered per step, counted once per receiver.
    pub per_robot_p2p_floats: Vec<f64>,
    pub total_floats_per_step: f64,
    pub total_p2p_floats_per_step: f64,
    pub mean_neighbors: f64,
    pub std_neighbors: f64,
}

pub fn bandwidth_report(log: &MessageLog, n_robots: usize, steps: usize) -> BandwidthReport {
    let mut sent = vec![0usize; n_robots];
    let mut delivered = vec![0usize; n_robots];
    for r in &log.records {
        sent[r.sender] += r.floats;
        delivered[r.sender] += r.floats * r.n_receivers;
    }
    let per_step = |v: &[usize]| -> Vec<f64> {
        v.iter().map(|x| if steps == 0 { 0.0 } else { *x as f64 / steps as f64 }).collect()
    };
    let per_robot_floats = per_step(&sent);
    let per_robot_p2p_floats = per_step(&delivered);
    let n = log.degree_samples.len() as f64;
    let (mean, std) = if log.degree_samples.is_empty() {
        (0.0, 0.0)
    } else {
        let mean = log.degree_samples.iter().sum::<usize>() as f64 / n;
        let var = log.degree_samples.iter().map(|d| (*d as f64 - mean).powi(2)).sum::<f64>() / n;
        (mean, var.sqrt())
    };
    BandwidthReport {
        steps,
        total_floats_per_step: per_robot_floats.iter().sum(),
        total_p2p_floats_per_step: per_robot_p2p_floats.iter().sum(),
        per_robot_floats,
        per_robot_p2p_floats,
        mean_neighbors: mean,
        std_neighbors: std,
    }
}

/// Upload of one robot to a central server running C-CVT: local map plus position.
pub fn ccvt_upload_floats(window: usize) -> usize {
    window * window + 2
}

/// Upload of one robot when the GNN runs on a central server: its GNN input row.
pub fn lpac_centralized_upload_floats(arch: &Architecture) -> usize {
    arch.gnn_input
}

/// D-CVT exchanges positions only.
pub const DCVT_FLOATS_PER_NEIGHBOR: usize = 2;
