//! Grid Voronoi partitions and coverage-cost integrals.
//!
//! Integrals are Riemann sums over 1 m² cells evaluated at cell centers, with
//! the cost kernel fixed to the squared Euclidean distance.

use std::str::FromStr;

use thiserror::Error;

use crate::geom::{cell_center, cells_in_interval, Vec2};
use crate::world::{CellBox, ImportanceField};

#[derive(Debug, Error, PartialEq)]
pub enum VoronoiError {
    #[error("a partition needs at least one site")]
    NoSites,
    #[error("site {0} lies outside the workspace")]
    SiteOutOfBounds(usize),
    #[error("unknown cost mode `{0}` (expected global, fov or observed)")]
    UnknownMode(String),
    #[error("grid size mismatch: partition side {partition}, field side {field}")]
    SizeMismatch { partition: usize, field: usize },
}

/// Nearest-site labeling of every grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    side: usize,
    assignment: Vec<u32>,
    sites: Vec<Vec2>,
}

impl Partition {
    pub fn side(&self) -> usize {
        self.side
    }

    pub fn sites(&self) -> &[Vec2] {
        &self.sites
    }

    pub fn assignment(&self) -> &[u32] {
        &self.assignment
    }

    #[inline]
    pub fn owner(&self, col: usize, row: usize) -> usize {
        self.assignment[row * self.side + col] as usize
    }
}

/// Index of the site closest to `q`; the lowest index wins ties.
#[inline]
pub fn nearest_site(sites: &[Vec2], q: Vec2) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, s) in sites.iter().enumerate() {
        let d = s.dist_sq(q);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

pub fn compute_partition(sites: &[Vec2], side: usize) -> Result<Partition, VoronoiError> {
    if sites.is_empty() {
        return Err(VoronoiError::NoSites);
    }
    let s = side as f64;
    if let Some(i) = sites.iter().position(|p| !(p.is_finite() && (0.0..=s).contains(&p.x) && (0.0..=s).contains(&p.y))) {
        return Err(VoronoiError::SiteOutOfBounds(i));
    }
    let mut assignment = vec![0u32; side * side];
    let mut dy2 = vec![0.0; sites.len()];
    for (row, out) in assignment.chunks_mut(side).enumerate() {
        let y = row as f64 + 0.5;
        for (d, p) in dy2.iter_mut().zip(sites) {
            *d = (p.y - y) * (p.y - y);
        }
        for (col, slot) in out.iter_mut().enumerate() {
            let x = col as f64 + 0.5;
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (i, p) in sites.iter().enumerate() {
                let dx = p.x - x;
                let d = dx * dx + dy2[i];
                if d < best_d {
                    best_d = d;
                    best = i;
                }
            }
            *slot = best as u32;
        }
    }
    Ok(Partition { side, assignment, sites: sites.to_vec() })
}

/// Which cells an integral ranges over.
#[derive(Debug, Clone, Copy)]
pub enum Domain<'a> {
    Full,
    Observed(&'a [bool]),
}

impl Domain<'_> {
    #[inline]
    fn contains(&self, i: usize) -> bool {
        match self {
            Domain::Full => true,
            Domain::Observed(mask) => mask[i],
        }
    }
}

/// Generalized mass, centroid and polar moment of inertia of one cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellMoments {
    pub mass: f64,
    /// Equals the site position when `mass == 0`.
    pub centroid: Vec2,
    pub inertia: f64,
}

#[derive(Default, Clone, Copy)]
struct FirstMoments {
    mass: f64,
    mx: f64,
    my: f64,
}

pub fn cell_moments(partition: &Partition, field: &ImportanceField, domain: Domain<'_>) -> Result<Vec<CellMoments>, VoronoiError> {
    let side = partition.side;
    if field.side() != side {
        return Err(VoronoiError::SizeMismatch { partition: side, field: field.side() });
    }
    let n = partition.sites.len();
    let values = field.values();
    let mut first = vec![FirstMoments::default(); n];
    for row in 0..side {
        for col in 0..side {
            let i = row * side + col;
            let phi = values[i];
            if phi == 0.0 || !domain.contains(i) {
                continue;
            }
            let q = cell_center(col, row);
            let acc = &mut first[partition.assignment[i] as usize];
            acc.mass += phi;
            acc.mx += q.x * phi;
            acc.my += q.y * phi;
        }
    }
    let centroids: Vec<Vec2> = first
        .iter()
        .zip(&partition.sites)
        .map(|(f, site)| if f.mass > 0.0 { Vec2::new(f.mx / f.mass, f.my / f.mass) } else { *site })
        .collect();
    let mut inertia = vec![0.0; n];
    for row in 0..side {
        for col in 0..side {
            let i = row * side + col;
            let phi = values[i];
            if phi == 0.0 || !domain.contains(i) {
                continue;
            }
            let owner = partition.assignment[i] as usize;
            inertia[owner] += cell_center(col, row).dist_sq(centroids[owner]) * phi;
        }
    }
    Ok((0..n)
        .map(|k| CellMoments {
            mass: first[k].mass,
            centroid: centroids[k],
            inertia: if first[k].mass > 0.0 { inertia[k] } else { 0.0 },
        })
        .collect())
}

/// Moments of site `owner`'s cell for a partition of `sites`, restricted to the
/// cells of `mask` inside `bounds`. Cells outside `bounds` must be unobserved.
pub fn masked_cell_moments(
    sites: &[Vec2],
    owner: usize,
    field: &ImportanceField,
    mask: &[bool],
    bounds: Option<CellBox>,
) -> CellMoments {
    let own = sites[owner];
    let degenerate = CellMoments { mass: 0.0, centroid: own, inertia: 0.0 };
    let Some(b) = bounds else { return degenerate };
    let side = field.side();
    let values = field.values();
    let cells = || {
        (b.row_min..=b.row_max).flat_map(move |row| (b.col_min..=b.col_max).map(move |col| (col, row))).filter(
            move |&(col, row)| {
                let i = row * side + col;
                mask[i] && values[i] != 0.0 && nearest_site(sites, cell_center(col, row)) == owner
            },
        )
    };
    let mut acc = FirstMoments::default();
    let mut members = Vec::new();
    for (col, row) in cells() {
        let phi = field.get(col, row);
        let q = cell_center(col, row);
        acc.mass += phi;
        acc.mx += q.x * phi;
        acc.my += q.y * phi;
        members.push((q, phi));
    }
    if acc.mass <= 0.0 {
        return degenerate;
    }
    let centroid = Vec2::new(acc.mx / acc.mass, acc.my / acc.mass);
    let inertia = members.iter().map(|(q, phi)| q.dist_sq(centroid) * phi).sum();
    CellMoments { mass: acc.mass, centroid, inertia }
}

/// Integration domain of the coverage cost.
#[derive(Debug, Clone, Copy)]
pub enum CostMode<'a> {
    /// Whole workspace.
    Global,
    /// Each robot's cell intersected with its current square footprint.
    CurrentFov { sensor_side: usize },
    /// Each robot's cell intersected with the observed workspace.
    CumulativeObserved(&'a [bool]),
}

/// Name-only form of [`CostMode`], for configuration parsing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostModeKind {
    Global,
    CurrentFov,
    CumulativeObserved,
}

impl FromStr for CostModeKind {
    type Err = VoronoiError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "global" => Ok(Self::Global),
            "fov" | "current-fov" => Ok(Self::CurrentFov),
            "observed" | "cumulative-observed" => Ok(Self::CumulativeObserved),
            other => Err(VoronoiError::UnknownMode(other.to_string())),
        }
    }
}

/// Sum over robots of ∫ ‖p_i − q‖² Φ(q) over each robot's cell within the mode's domain.
pub fn coverage_cost(sites: &[Vec2], field: &ImportanceField, mode: CostMode<'_>) -> Result<f64, VoronoiError> {
    let partition = compute_partition(sites, field.side())?;
    let side = field.side();
    let half = match mode {
        CostMode::CurrentFov { sensor_side } => sensor_side as f64 / 2.0,
        _ => 0.0,
    };
    let footprints: Vec<(std::ops::Range<usize>, std::ops::Range<usize>)> = match mode {
        CostMode::CurrentFov { .. } => sites
            .iter()
            .map(|p| (cells_in_interval(p.x - half, p.x + half, side), cells_in_interval(p.y - half, p.y + half, side)))
            .collect(),
        _ => Vec::new(),
    };
    let values = field.values();
    let mut total = 0.0;
    for row in 0..side {
        let mut row_sum = 0.0;
        for col in 0..side {
            let i = row * side + col;
            let phi = values[i];
            if phi == 0.0 {
                continue;
            }
            let owner = partition.assignment[i] as usize;
            let inside = match mode {
                CostMode::Global => true,
                CostMode::CurrentFov { .. } => {
                    let (cols, rows) = &footprints[owner];
                    cols.contains(&col) && rows.contains(&row)
                }
                CostMode::CumulativeObserved(mask) => mask[i],
            };
            if inside {
                row_sum += sites[owner].dist_sq(cell_center(col, row)) * phi;
            }
        }
        total += row_sum;
    }
    Ok(total)
}

/// Global coverage cost.
pub fn global_cost(sites: &[Vec2], field: &ImportanceField) -> Result<f64, VoronoiError> {
    coverage_cost(sites, field, CostMode::Global)
}

/// `Σ I_i + Σ m_i ‖p_i − c_i‖²`.
pub fn decomposed_cost(sites: &[Vec2], moments: &[CellMoments]) -> f64 {
    sites.iter().zip(moments).map(|(p, m)| m.inertia + m.mass * p.dist_sq(m.centroid)).sum()
}

/// Gradient of the cost with respect to each site, `2 m_i (p_i − c_i)`.
pub fn cost_gradient(sites: &[Vec2], moments: &[CellMoments]) -> Vec<Vec2> {
    sites.iter().zip(moments).map(|(p, m)| (*p - m.centroid) * (2.0 * m.mass)).collect()
}
