//! Lloyd-style CVT controllers.
//!
//! All three variants apply `u_i = -k (p_i - c_i)` and differ only in which
//! positions and which part of the importance field they see.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geom::Vec2;
use crate::voronoi::{cell_moments, compute_partition, masked_cell_moments, CellMoments, Domain};
use crate::world::WorldState;

pub const DEFAULT_GAIN: f64 = 1.0;
pub const DEFAULT_EPSILON: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CvtKind {
    /// Exact partition, full importance field.
    Clairvoyant,
    /// Exact partition, field restricted to the union of all observations.
    Centralized,
    /// Partition from neighbors in range, field restricted to own observations.
    Decentralized,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CvtVariant {
    pub kind: CvtKind,
    pub gain: f64,
}

impl CvtVariant {
    pub fn new(kind: CvtKind) -> Self {
        Self { kind, gain: DEFAULT_GAIN }
    }
}

/// Per-robot cell moments as seen by `variant`.
pub fn variant_moments(variant: CvtKind, world: &WorldState) -> Vec<CellMoments> {
    let sites = world.estimated_positions();
    let side = world.params().side_length;
    match variant {
        CvtKind::Clairvoyant | CvtKind::Centralized => {
            let clamped: Vec<Vec2> = sites.iter().map(|p| p.clamp_box(0.0, side as f64)).collect();
            let partition = compute_partition(&clamped, side).expect("world always has at least one robot");
            let domain = match variant {
                CvtKind::Clairvoyant => Domain::Full,
                _ => Domain::Observed(world.team_mask()),
            };
            let mut moments = cell_moments(&partition, world.idf(), domain).expect("field matches world");
            // Degenerate cells hold position, even when the site was clamped.
            for (m, p) in moments.iter_mut().zip(sites) {
                if m.mass == 0.0 {
                    m.centroid = *p;
                }
            }
            moments
        }
        CvtKind::Decentralized => {
            let r_c = world.params().comm_range;
            (0..sites.len())
                .into_par_iter()
                .map(|i| {
                    let mut owner = 0;
                    let mut local = Vec::new();
                    for (j, p) in sites.iter().enumerate() {
                        if j == i {
                            owner = local.len();
                            local.push(*p);
                        } else if p.dist(sites[i]) <= r_c {
                            local.push(*p);
                        }
                    }
                    let robot = &world.robots()[i];
                    masked_cell_moments(&local, owner, world.idf(), robot.observed_mask(), robot.observed_box())
                })
                .collect()
        }
    }
}

/// Commanded velocities before the speed clamp applied by the world.
pub fn cvt_step(variant: CvtVariant, world: &WorldState) -> Vec<Vec2> {
    let moments = variant_moments(variant.kind, world);
    world
        .estimated_positions()
        .iter()
        .zip(&moments)
        .map(|(p, m)| -(*p - m.centroid) * variant.gain)
        .collect()
}

/// True when every robot moved less than `epsilon` between the two snapshots.
pub fn converged(prev: &[Vec2], current: &[Vec2], epsilon: f64) -> bool {
    prev.iter().zip(current).all(|(a, b)| a.dist(*b) < epsilon)
}
