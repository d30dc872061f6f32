use std::io::Cursor;
use std::sync::Arc;

use lpac::action::PolicyWeights;
use lpac::arch::Architecture;
use lpac::cvt::{cvt_step, CvtKind, CvtVariant};
use lpac::gnn_comms::{gnn_forward_distributed, CommGraph, GnnWeights, MessageSchedule};
use lpac::io::{parse_weights, write_weights, DatasetReader, DatasetSample, DatasetWriter};
use lpac::perception::{build_local_maps, neighbor_channels};
use lpac::rng::{substream, Stream};
use lpac::voronoi::{cell_moments, compute_partition, decomposed_cost, global_cost, Domain};
use lpac::world::{generate_features, generate_idf, ImportanceField, WorldParams, WorldState};
use lpac::Vec2;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

fn small_world(seed: u64, side: usize, n: usize) -> WorldState {
    let params = WorldParams { side_length: side, n_robots: n, sensor_side: 16, comm_range: 40.0, seed, ..WorldParams::default() };
    let features = generate_features(&params, 4, &mut substream(seed, Stream::Features, 0));
    let idf = Arc::new(generate_idf(&features, &params));
    WorldState::with_random_robots(params, idf, &mut substream(seed, Stream::RobotInit, 0)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, .. ProptestConfig::default() })]

    #[test]
    fn neighbor_maps_ignore_order(seed in any::<u64>(), n in 0usize..12) {
        let mut r = substream(seed, Stream::Scratch, 0);
        let offsets: Vec<Vec2> = (0..n).map(|_| Vec2::new(r.random_range(-130.0..130.0), r.random_range(-130.0..130.0))).collect();
        let mut shuffled = offsets.clone();
        shuffled.shuffle(&mut r);
        let (ax, ay) = neighbor_channels(&offsets, 128.0, 32);
        let (bx, by) = neighbor_channels(&shuffled, 128.0, 32);
        prop_assert!(ax.iter().zip(&bx).all(|(a, b)| a.to_bits() == b.to_bits()));
        prop_assert!(ay.iter().zip(&by).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn gnn_is_permutation_equivariant(seed in any::<u64>(), n in 1usize..10, p in 0.0f64..1.0) {
        let mut r = substream(seed, Stream::Scratch, 1);
        let edges: Vec<(usize, usize)> = (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).filter(|_| r.random_bool(p)).collect();
        let w = GnnWeights::random_dims(&[4, 6, 5], 2, &mut r);
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..4).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut r);
        // robot i becomes robot perm[i]
        let mut xp = vec![Vec::new(); n];
        for i in 0..n {
            xp[perm[i]] = x[i].clone();
        }
        let ep: Vec<(usize, usize)> = edges.iter().map(|&(i, j)| (perm[i].min(perm[j]), perm[i].max(perm[j]))).collect();
        let a = gnn_forward_distributed(&x, &CommGraph::from_edges(n, &edges), &w, MessageSchedule::Projected, 0, false).unwrap();
        let b = gnn_forward_distributed(&xp, &CommGraph::from_edges(n, &ep), &w, MessageSchedule::Projected, 0, false).unwrap();
        for (out, &pi) in a.outputs.iter().zip(&perm) {
            for (u, v) in out.iter().zip(&b.outputs[pi]) {
                prop_assert!((u - v).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn weights_round_trip(seed in any::<u64>(), hops in 0usize..3, layers in 1usize..3) {
        let arch = Architecture { gnn_layers: layers, gnn_hops: hops, gnn_hidden: 6, channel_size: 4, window_size: 8, cnn_channels: 2, mlp_hidden: 3, ..Architecture::default() };
        let p = PolicyWeights::random(arch, &mut substream(seed, Stream::Weights, 0));
        let mut a = Vec::new();
        write_weights(&mut a, &p).unwrap();
        let q = parse_weights(&a).unwrap();
        let mut b = Vec::new();
        write_weights(&mut b, &q).unwrap();
        prop_assert_eq!(a, b);
        prop_assert_eq!(p, q);
    }

    #[test]
    fn dataset_round_trip(seed in any::<u64>(), n in 1usize..5, count in 0usize..6) {
        let mut r = substream(seed, Stream::Scratch, 2);
        let c = 3;
        let samples: Vec<DatasetSample> = (0..count).map(|k| DatasetSample {
            env_id: r.random(),
            step: 5 * k as u32,
            converged: r.random(),
            maps: (0..n * 4 * c * c).map(|_| r.random()).collect(),
            positions: (0..n).map(|_| [r.random(), r.random()]).collect(),
            normalized_positions: (0..n).map(|_| [r.random(), r.random()]).collect(),
            targets: (0..n).map(|_| [r.random(), r.random()]).collect(),
            edges: (0..n as u32).flat_map(|i| ((i + 1)..n as u32).map(move |j| (i, j))).filter(|_| r.random_bool(0.5)).collect(),
        }).collect();
        let mut w = DatasetWriter::new(Cursor::new(Vec::new()), n, c).unwrap();
        for s in &samples {
            w.push(s).unwrap();
        }
        let (_, sink) = w.finish().unwrap();
        let bytes = sink.into_inner();
        let back: Vec<DatasetSample> = DatasetReader::new(bytes.as_slice()).unwrap().collect::<Result<_, _>>().unwrap();
        prop_assert_eq!(back, samples);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, .. ProptestConfig::default() })]

    #[test]
    fn cell_masses_sum_to_field_mass(seed in any::<u64>(), n in 1usize..9) {
        let side = 40;
        let mut r = substream(seed, Stream::Scratch, 3);
        let sites: Vec<Vec2> = (0..n).map(|_| Vec2::new(r.random_range(0.0..40.0), r.random_range(0.0..40.0))).collect();
        let values: Vec<f64> = (0..side * side).map(|_| r.random_range(0.0..1.0)).collect();
        let mask: Vec<bool> = (0..side * side).map(|_| r.random_bool(0.4)).collect();
        let field = ImportanceField::from_values(side, values.clone());
        let part = compute_partition(&sites, side).unwrap();
        let full: f64 = cell_moments(&part, &field, Domain::Full).unwrap().iter().map(|m| m.mass).sum();
        prop_assert!((full - values.iter().sum::<f64>()).abs() <= 1e-9 * full);
        let observed: f64 = cell_moments(&part, &field, Domain::Observed(&mask)).unwrap().iter().map(|m| m.mass).sum();
        let expect: f64 = values.iter().zip(&mask).filter(|(_, m)| **m).map(|(v, _)| v).sum();
        prop_assert!((observed - expect).abs() <= 1e-9 * (1.0 + expect));
    }

    #[test]
    fn lloyd_step_never_increases_cost(seed in any::<u64>(), n in 1usize..7) {
        let mut world = small_world(seed, 64, n);
        for _ in 0..5 {
            let before = global_cost(&world.positions(), world.idf()).unwrap();
            let u = cvt_step(CvtVariant::new(CvtKind::Clairvoyant), &world);
            world.step(&u).unwrap();
            let after = global_cost(&world.positions(), world.idf()).unwrap();
            prop_assert!(after <= before + 1e-9 * (1.0 + before), "{after} > {before}");
        }
    }

    #[test]
    fn decomposition_identity(seed in any::<u64>(), n in 1usize..9) {
        let world = small_world(seed, 48, n);
        let sites = world.positions();
        let part = compute_partition(&sites, 48).unwrap();
        let m = cell_moments(&part, world.idf(), Domain::Full).unwrap();
        let direct = global_cost(&sites, world.idf()).unwrap();
        prop_assert!((decomposed_cost(&sites, &m) - direct).abs() <= 1e-10 * direct.max(1e-300));
    }

    #[test]
    fn team_coverage_grows_and_speed_is_bounded(seed in any::<u64>(), kind in 0usize..3) {
        let mut world = small_world(seed, 64, 4);
        let kinds = [CvtKind::Clairvoyant, CvtKind::Centralized, CvtKind::Decentralized];
        let mut area = world.observed_area_pct();
        for _ in 0..8 {
            let before = world.positions();
            let mut u = cvt_step(CvtVariant::new(kinds[kind]), &world);
            u.iter_mut().for_each(|v| *v = *v * 50.0);
            world.step(&u).unwrap();
            for (a, b) in before.iter().zip(world.positions()) {
                prop_assert!(a.dist(b) <= world.params().max_speed * world.params().dt + 1e-12);
            }
            let now = world.observed_area_pct();
            prop_assert!(now >= area);
            area = now;
            let union: usize = (0..64 * 64).filter(|&c| world.robots().iter().any(|r| r.observed_mask()[c])).count();
            prop_assert_eq!(union, world.team_mask().iter().filter(|b| **b).count());
        }
    }

    #[test]
    fn local_maps_follow_translation(seed in any::<u64>(), dx in 0usize..16, dy in 0usize..16, n in 1usize..6) {
        let side = 96;
        let mut r = substream(seed, Stream::Scratch, 4);
        let values: Vec<f64> = (0..side * side).map(|_| r.random_range(0.0..1.0)).collect();
        let mut shifted = vec![0.0; side * side];
        for row in 0..side - dy {
            for col in 0..side - dx {
                shifted[(row + dy) * side + col + dx] = values[row * side + col];
            }
        }
        let pos: Vec<Vec2> = (0..n).map(|_| Vec2::new(r.random_range(32.0..48.0), r.random_range(32.0..48.0))).collect();
        let moved: Vec<Vec2> = pos.iter().map(|p| *p + Vec2::new(dx as f64, dy as f64)).collect();
        // the sensor footprint covers every window
        let params = WorldParams { side_length: side, n_robots: n, sensor_side: 94, comm_range: 20.0, seed, ..WorldParams::default() };
        let arch = Architecture { window_size: 32, channel_size: 16, ..Architecture::default() };
        let a = WorldState::new(params.clone(), Arc::new(ImportanceField::from_values(side, values)), &pos).unwrap();
        let b = WorldState::new(params, Arc::new(ImportanceField::from_values(side, shifted)), &moved).unwrap();
        for i in 0..n {
            let (ma, mb) = (build_local_maps(&a, i, &arch), build_local_maps(&b, i, &arch));
            for c in [0, 2, 3] {
                for (u, v) in ma.channel(c).iter().zip(mb.channel(c)) {
                    prop_assert!((u - v).abs() <= 1e-6, "channel {c}: {u} vs {v}");
                }
            }
        }
    }
}
