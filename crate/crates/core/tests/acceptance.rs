//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use lpac::action::PolicyWeights;
use lpac::arch::Architecture;
use lpac::gnn_comms::{
    aggregated_message_floats, bandwidth_report, build_comm_graph, gnn_forward_centralized, gnn_forward_distributed,
    shift_operator, CommGraph, GnnWeights, MessageSchedule,
};
use lpac::harness::{evaluate_batch, make_environment, run_episode_in, BatchConfig, Controller, EpisodeOptions, EpisodeResult};
use lpac::io::metrics_to_string;
use lpac::perception::{build_local_maps, neighbor_channels};
use lpac::rng::{substream, Stream};
use lpac::voronoi::{cell_moments, compute_partition, cost_gradient, decomposed_cost, global_cost, Domain, Partition};
use lpac::world::{generate_features, generate_idf, ImportanceField, WorldParams, WorldState};
use lpac::Vec2;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 20240611;

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn rng(i: u64) -> ChaCha8Rng {
    substream(SEED, Stream::Scratch, i)
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

fn random_inputs(r: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| r.random_range(-1.0..1.0)).collect()).collect()
}

fn random_graph(r: &mut ChaCha8Rng, n: usize) -> CommGraph {
    let p = r.random_range(0.0..1.0);
    let edges: Vec<(usize, usize)> =
        (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).filter(|_| r.random_bool(p)).collect();
    CommGraph::from_edges(n, &edges)
}

fn gnn_equivalence() -> Outcome {
    let start = Instant::now();
    let arch = Architecture::default();
    let mut worst: f64 = 0.0;
    for t in 0..200 {
        let mut r = rng(1000 + t);
        let n = r.random_range(1..=32);
        let graph = random_graph(&mut r, n);
        let w = GnnWeights::random(&arch, &mut r);
        let inputs = random_inputs(&mut r, n, arch.gnn_input);
        let x = Array2::from_shape_fn((n, arch.gnn_input), |(i, j)| inputs[i][j]);
        let central = gnn_forward_centralized(&x, &shift_operator(&graph), &w).unwrap();
        let dist = gnn_forward_distributed(&inputs, &graph, &w, MessageSchedule::default(), 0, false).unwrap();
        for i in 0..n {
            for (j, v) in dist.outputs[i].iter().enumerate() {
                worst = worst.max((v - central[[i, j]]).abs());
            }
        }
    }
    let elapsed = start.elapsed();
    Outcome {
        name: "distributed/centralized GNN equivalence",
        pass: worst <= 1e-5 && elapsed < Duration::from_secs(60),
        detail: format!("200 triples, n <= 32, max |dev| = {worst:.3e} (<= 1e-5), {:.1}s (< 60s)", secs(elapsed)),
    }
}

fn message_size() -> Outcome {
    let arch = Architecture::default();
    let w = GnnWeights::zeros(&arch);
    let formula = aggregated_message_floats(&w.dims(), arch.gnn_hops, MessageSchedule::default());
    // measured on the executor: a connected ring of 6 robots, one step
    let n = 6;
    let edges: Vec<(usize, usize)> = (0..n).map(|i| (i.min((i + 1) % n), i.max((i + 1) % n))).collect();
    let inputs = random_inputs(&mut rng(2), n, arch.gnn_input);
    let out = gnn_forward_distributed(&inputs, &CommGraph::from_edges(n, &edges), &w, MessageSchedule::default(), 0, false)
        .unwrap();
    let report = bandwidth_report(&out.log, n, 1);
    let measured_ok = report.per_robot_floats.iter().all(|f| *f == 3618.0);
    Outcome {
        name: "message-size constant",
        pass: formula == 3618 && measured_ok,
        detail: format!("formula {formula}, executor per-robot floats {:?} (== 3618)", report.per_robot_floats),
    }
}

fn expected_degree() -> Outcome {
    let start = Instant::now();
    let (n, side, r_c, trials) = (32usize, 1024.0, 128.0, 100_000u64);
    let mut r = rng(3);
    let mut total = 0.0;
    for _ in 0..trials {
        let pts: Vec<Vec2> = (0..n).map(|_| Vec2::new(r.random_range(0.0..side), r.random_range(0.0..side))).collect();
        total += build_comm_graph(&pts, r_c).mean_degree();
    }
    let mean = total / trials as f64;
    let elapsed = start.elapsed();
    // P(|U - V| <= r) for two uniform points in a square of side L
    let a = r_c / side;
    let p = std::f64::consts::PI * a * a - 8.0 / 3.0 * a * a * a + 0.5 * a.powi(4);
    Outcome {
        name: "expected-degree Monte Carlo",
        pass: (mean - 1.41).abs() <= 0.02 && elapsed < Duration::from_secs(60),
        detail: format!(
            "mean degree {mean:.4} over {trials} trials (target 1.41 +- 0.02; closed form (n-1)p = {:.4}, n p = {:.4}), {:.1}s",
            (n - 1) as f64 * p,
            n as f64 * p,
            secs(elapsed)
        ),
    }
}

fn desk_batch(controllers: Vec<Controller>) -> BatchConfig {
    BatchConfig { controllers, world: WorldParams { seed: SEED, ..WorldParams::desk() }, ..BatchConfig::desk() }
}

fn lloyd_descent(series: &mut Vec<EpisodeResult>) -> Outcome {
    let start = Instant::now();
    let cfg = desk_batch(vec![Controller::Clairvoyant]);
    let options = EpisodeOptions { horizon: cfg.horizon, ..EpisodeOptions::default() };
    let mut worst_rise = f64::NEG_INFINITY;
    let mut steps = 0;
    for e in 0..20 {
        let env = make_environment(&cfg.world, e, cfg.n_features, None).unwrap();
        let ep = run_episode_in(&env, Controller::Clairvoyant, &options, None).unwrap();
        for w in ep.rows[..=ep.steps_executed].windows(2) {
            worst_rise = worst_rise.max(w[1].cost - w[0].cost);
        }
        steps += ep.steps_executed;
        series.push(ep);
    }
    let elapsed = start.elapsed();
    Outcome {
        name: "Lloyd descent",
        pass: worst_rise <= 1e-9 && elapsed < Duration::from_secs(120),
        detail: format!(
            "20 desk envs, {steps} steps, max J(t+1) - J(t) = {worst_rise:.3e} (<= 1e-9), {:.1}s (< 120s)",
            secs(elapsed)
        ),
    }
}

fn random_config(r: &mut ChaCha8Rng, side: usize) -> (Vec<Vec2>, ImportanceField) {
    let n = r.random_range(1..=32);
    let params = WorldParams { side_length: side, n_robots: n, ..WorldParams::desk() };
    let features = generate_features(&params, r.random_range(1..=8), r);
    let field = generate_idf(&features, &params);
    let s = side as f64;
    let sites = (0..n).map(|_| Vec2::new(r.random_range(0.0..s), r.random_range(0.0..s))).collect();
    (sites, field)
}

fn decomposition() -> Outcome {
    let mut worst: f64 = 0.0;
    for t in 0..100 {
        let mut r = rng(4000 + t);
        let (sites, field) = random_config(&mut r, 128);
        let direct = global_cost(&sites, &field).unwrap();
        let part = compute_partition(&sites, 128).unwrap();
        let m = cell_moments(&part, &field, Domain::Full).unwrap();
        let dec = decomposed_cost(&sites, &m);
        worst = worst.max((dec - direct).abs() / direct);
    }
    Outcome {
        name: "cost-decomposition identity",
        pass: worst <= 1e-10,
        detail: format!("100 configs, max relative deviation {worst:.3e} (<= 1e-10)"),
    }
}

/// Cost with the partition held fixed while robot `i` sits at `p`.
fn frozen_cost(part: &Partition, field: &ImportanceField, sites: &[Vec2], i: usize, p: Vec2) -> f64 {
    let side = part.side();
    let mut j = 0.0;
    for row in 0..side {
        for col in 0..side {
            let o = part.owner(col, row);
            let site = if o == i { p } else { sites[o] };
            let q = Vec2::new(col as f64 + 0.5, row as f64 + 0.5);
            j += site.dist_sq(q) * field.get(col, row);
        }
    }
    j
}

fn gradient_check() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut configs = 0;
    let mut t = 0;
    while configs < 50 {
        t += 1;
        let mut r = rng(5000 + t);
        let (sites, field) = random_config(&mut r, 96);
        let part = compute_partition(&sites, 96).unwrap();
        let m = cell_moments(&part, &field, Domain::Full).unwrap();
        if m.iter().zip(&sites).any(|(m, p)| m.mass <= 1e-3 || p.dist(m.centroid) < 0.5) {
            continue;
        }
        configs += 1;
        let grad = cost_gradient(&sites, &m);
        let h = 1e-2;
        for (i, g) in grad.iter().enumerate() {
            let p = sites[i];
            let fx = (frozen_cost(&part, &field, &sites, i, p + Vec2::new(h, 0.0))
                - frozen_cost(&part, &field, &sites, i, p + Vec2::new(-h, 0.0)))
                / (2.0 * h);
            let fy = (frozen_cost(&part, &field, &sites, i, p + Vec2::new(0.0, h))
                - frozen_cost(&part, &field, &sites, i, p + Vec2::new(0.0, -h)))
                / (2.0 * h);
            worst = worst.max(Vec2::new(fx, fy).dist(*g) / g.norm());
        }
    }
    Outcome {
        name: "gradient check",
        pass: worst <= 1e-3,
        detail: format!("50 non-degenerate configs ({t} drawn), max relative error {worst:.3e} (<= 1e-3)"),
    }
}

fn information_ordering(series: &mut Vec<EpisodeResult>) -> Outcome {
    let start = Instant::now();
    let cfg = desk_batch(vec![Controller::Clairvoyant, Controller::CCvt, Controller::DCvt]);
    let summary = evaluate_batch(&cfg, None).unwrap();
    let mean = |c| summary.get(c).unwrap().mean_final_cost;
    let (a, b, c) = (mean(Controller::Clairvoyant), mean(Controller::CCvt), mean(Controller::DCvt));
    series.extend(summary.episodes);
    Outcome {
        name: "information ordering",
        pass: a <= b && b <= c,
        detail: format!(
            "{} desk envs, mean final cost clairvoyant {a:.6e} <= c-cvt {b:.6e} <= d-cvt {c:.6e}, {:.1}s",
            cfg.n_envs,
            secs(start.elapsed())
        ),
    }
}

fn perception_invariants() -> Outcome {
    let mut map_ok = true;
    for t in 0..200 {
        let mut r = rng(6000 + t);
        let n = r.random_range(0..32);
        let r_c = r.random_range(10.0..200.0);
        let offsets: Vec<Vec2> = (0..n).map(|_| Vec2::new(r.random_range(-r_c..r_c), r.random_range(-r_c..r_c))).collect();
        let mut shuffled = offsets.clone();
        shuffled.shuffle(&mut r);
        let (ax, ay) = neighbor_channels(&offsets, r_c, 32);
        let (bx, by) = neighbor_channels(&shuffled, r_c, 32);
        map_ok &= ax.iter().chain(&ay).zip(bx.iter().chain(&by)).all(|(a, b)| a.to_bits() == b.to_bits());
    }
    // whole local maps of the same physical robot under a relabeling of the team
    let arch = Architecture::default();
    for t in 0..5 {
        let mut r = rng(6500 + t);
        let params = WorldParams { seed: SEED, n_robots: 12, comm_range: 100.0, ..WorldParams::desk() };
        let features = generate_features(&params, 8, &mut r);
        let idf = Arc::new(generate_idf(&features, &params));
        let pos: Vec<Vec2> = (0..12).map(|_| Vec2::new(r.random_range(0.0..256.0), r.random_range(0.0..256.0))).collect();
        let mut perm: Vec<usize> = (0..12).collect();
        perm.shuffle(&mut r);
        let mut pos_p = vec![Vec2::ZERO; 12];
        for i in 0..12 {
            pos_p[perm[i]] = pos[i];
        }
        let a = WorldState::new(params.clone(), idf.clone(), &pos).unwrap();
        let b = WorldState::new(params.clone(), idf, &pos_p).unwrap();
        for (i, &pi) in perm.iter().enumerate() {
            let ma = build_local_maps(&a, i, &arch);
            let mb = build_local_maps(&b, pi, &arch);
            map_ok &= ma.data().iter().zip(mb.data()).all(|(x, y)| x.to_bits() == y.to_bits());
        }
    }

    let mut worst: f64 = 0.0;
    for t in 0..50 {
        let mut r = rng(7000 + t);
        let n = r.random_range(1..=32);
        let graph = random_graph(&mut r, n);
        let w = GnnWeights::random(&arch, &mut r);
        let inputs = random_inputs(&mut r, n, arch.gnn_input);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut r);
        let mut inputs_p = vec![Vec::new(); n];
        for i in 0..n {
            inputs_p[perm[i]] = inputs[i].clone();
        }
        let edges_p: Vec<(usize, usize)> =
            graph.edges().iter().map(|&(i, j)| (perm[i].min(perm[j]), perm[i].max(perm[j]))).collect();
        let a = gnn_forward_distributed(&inputs, &graph, &w, MessageSchedule::default(), 0, false).unwrap();
        let b = gnn_forward_distributed(&inputs_p, &CommGraph::from_edges(n, &edges_p), &w, MessageSchedule::default(), 0, false)
            .unwrap();
        for (out, &pi) in a.outputs.iter().zip(&perm) {
            for (u, v) in out.iter().zip(&b.outputs[pi]) {
                worst = worst.max((u - v).abs());
            }
        }
    }
    Outcome {
        name: "perception invariants",
        pass: map_ok && worst <= 1e-6,
        detail: format!(
            "neighbor maps bit-exact under permutation: {map_ok} (200 offset sets, 60 robots); GNN equivariance max |dev| {worst:.3e} (<= 1e-6, 50 cases)"
        ),
    }
}

fn determinism(series: &mut Vec<EpisodeResult>) -> Outcome {
    let params = WorldParams { seed: SEED, ..WorldParams::desk() };
    let arch = Architecture { window_size: 64, ..Architecture::default() };
    let policy = PolicyWeights::random(arch, &mut substream(SEED, Stream::Weights, 0));
    let mut identical = true;
    let mut runs = 0;
    for (controller, sigma, horizon) in [
        (Controller::Clairvoyant, 0.0, 150),
        (Controller::CCvt, 5.0, 150),
        (Controller::DCvt, 10.0, 150),
        (Controller::Lpac, 5.0, 8),
    ] {
        let env = make_environment(&params, 3, 8, None).unwrap();
        let opts = EpisodeOptions { horizon, noise_sigma: sigma, ..EpisodeOptions::default() };
        let a = run_episode_in(&env, controller, &opts, Some(&policy)).unwrap();
        let env = make_environment(&params, 3, 8, None).unwrap();
        let b = run_episode_in(&env, controller, &opts, Some(&policy)).unwrap();
        identical &= metrics_to_string(&a.rows).as_bytes() == metrics_to_string(&b.rows).as_bytes();
        runs += 1;
        series.push(a);
    }
    // parallel batch evaluation twice
    let cfg = BatchConfig { n_envs: 4, horizon: 60, noise_sigma: 5.0, ..desk_batch(vec![Controller::DCvt, Controller::CCvt]) };
    let flat = |c: &BatchConfig| {
        let s = evaluate_batch(c, None).unwrap();
        metrics_to_string(&s.episodes.iter().flat_map(|e| e.rows.clone()).collect::<Vec<_>>())
    };
    identical &= flat(&cfg) == flat(&cfg);
    Outcome {
        name: "determinism",
        pass: identical,
        detail: format!("{runs} seeded episodes (incl. noise and lpac) plus a parallel batch, metrics CSV bit-identical: {identical}"),
    }
}

fn normalization_anchor(series: &[EpisodeResult]) -> Outcome {
    let mut bad = series.iter().filter(|e| e.rows[0].normalized_cost != 1.0).count();
    // a field with no importance has zero initial cost
    let params = WorldParams { side_length: 32, n_robots: 2, sensor_side: 8, ..WorldParams::desk() };
    let env = make_environment(&params, 0, 0, None).unwrap();
    let ep = run_episode_in(&env, Controller::Clairvoyant, &EpisodeOptions { horizon: 5, ..EpisodeOptions::default() }, None)
        .unwrap();
    bad += usize::from(ep.rows[0].normalized_cost != 1.0);
    Outcome {
        name: "normalization anchor",
        pass: bad == 0,
        detail: format!("{} series (plus a zero-importance world), {bad} not starting at exactly 1.0", series.len()),
    }
}

fn main() -> ExitCode {
    let start = Instant::now();
    let mut series = Vec::new();
    let outcomes = vec![
        gnn_equivalence(),
        message_size(),
        expected_degree(),
        lloyd_descent(&mut series),
        decomposition(),
        gradient_check(),
        information_ordering(&mut series),
        perception_invariants(),
        determinism(&mut series),
        normalization_anchor(&series),
    ];
    println!();
    for o in &outcomes {
        println!("{} {}: {}", if o.pass { "PASS" } else { "FAIL" }, o.name, o.detail);
    }
    let failed = outcomes.iter().filter(|o| !o.pass).count();
    println!("acceptance: {} passed, {failed} failed, {:.1}s", outcomes.len() - failed, secs(start.elapsed()));
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
