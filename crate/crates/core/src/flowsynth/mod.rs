//! Random region motion initialization, the smoothing energy over the region
//! graph, its minimization, and rasterization to a dense flow field.
//!
//! Conventions: `u` is the horizontal (column) displacement, `v` the
//! vertical (row) displacement; motions are stored as `[u, v]`.
//!
//! The energy minimized per flow component is
//!
//! ```text
//! E(x) = Σ_i λ_i (x_i − x⁰_i)² + Σ_{(i,j) ∈ edges} w_ij (x_i − x_j)²
//! ```
//!
//! with each unordered edge counted once. Its minimizer solves
//! `(Λ + L_w) x = Λ x⁰`, where `L_w` is the weighted graph Laplacian.

mod solver;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::superpix::{RegionClass, RegionGraph, RegionStats, Segmentation};
use solver::Block;

/// Unary weight of foreground and seed regions.
pub const ANCHOR_WEIGHT: f64 = 1.0;
/// Unary weight of every other background region.
pub const FREE_WEIGHT: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionFlowInit {
    /// Initial `[u, v]` per region.
    pub init_motion: Vec<[f64; 2]>,
    /// Background regions drawn as motion seeds, ascending.
    pub seed_set: Vec<usize>,
    /// Main foreground motion `[m_u, m_v]`.
    pub main_motion: [f64; 2],
    /// `d`: seeds draw from `[-d, d]`, foreground from `[m - d/10, m + d/10]`
    /// intersected with `[-d, d]`.
    pub displacement_bound: f64,
}

impl RegionFlowInit {
    pub fn is_seed(&self, region: usize) -> bool {
        self.seed_set.binary_search(&region).is_ok()
    }
}

/// Number of background seeds for `background` candidate regions.
pub fn seed_count(background: usize, seed_fraction: f64) -> usize {
    if background == 0 {
        return 0;
    }
    ((seed_fraction * background as f64).round() as usize).clamp(1, background)
}

/// Draws the initial region motions and returns them with `graph` augmented
/// by a clique over the selected background seeds.
///
/// Draw order from a ChaCha8 stream seeded with `rng_seed`: the seed subset,
/// then `(u, v)` for each seed in ascending region order, then the main
/// motion `(m_u, m_v)`, then `(u, v)` for each foreground region ascending.
pub fn init_region_motion(
    class: &RegionClass,
    graph: &RegionGraph,
    image_height: usize,
    seed_fraction: f64,
    rng_seed: u64,
) -> Result<(RegionFlowInit, RegionGraph)> {
    let k = class.len();
    if k == 0 {
        return Err(Error::InvalidArgument("empty region set".into()));
    }
    if graph.region_count != k {
        return Err(Error::RegionCountMismatch {
            expected: k,
            got: graph.region_count,
        });
    }
    if !(seed_fraction > 0.0 && seed_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "seed_fraction {seed_fraction} outside (0, 1]"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let d = image_height as f64 / 10.0;
    let jitter = d / 10.0;

    let background: Vec<usize> = class.background().collect();
    let n_seeds = seed_count(background.len(), seed_fraction);
    let mut seed_set: Vec<usize> = index::sample(&mut rng, background.len(), n_seeds)
        .into_iter()
        .map(|i| background[i])
        .collect();
    seed_set.sort_unstable();

    let mut init_motion = vec![[0.0; 2]; k];
    for &s in &seed_set {
        let u = rng.random_range(-d..=d);
        let v = rng.random_range(-d..=d);
        init_motion[s] = [u, v];
    }
    let main_motion = [rng.random_range(-d..=d), rng.random_range(-d..=d)];
    // The jitter band is intersected with [-d, d] so no component leaves
    // the displacement bound when m sits near it.
    let band = |m: f64| (m - jitter).max(-d)..=(m + jitter).min(d);
    for f in class.foreground() {
        let u = rng.random_range(band(main_motion[0]));
        let v = rng.random_range(band(main_motion[1]));
        init_motion[f] = [u, v];
    }

    let mut augmented = graph.clone();
    for (a, &i) in seed_set.iter().enumerate() {
        for &j in &seed_set[a + 1..] {
            augmented.add_edge(i, j);
        }
    }
    augmented.clique_augmented = true;

    Ok((
        RegionFlowInit {
            init_motion,
            seed_set,
            main_motion,
            displacement_bound: d,
        },
        augmented,
    ))
}

/// The two per-component linear systems `(Λ + L_w) x = Λ x⁰` sharing one
/// matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergySystem {
    /// Unary weights λ_i.
    pub lambda: Vec<f64>,
    /// Unordered edges `(i, j, w_ij)` with `i < j`, in graph order.
    pub edges: Vec<(usize, usize, f64)>,
    /// Initial motions x⁰.
    pub anchor: Vec<[f64; 2]>,
    /// Right-hand sides `λ_i x⁰_i`, one vector per component (u, v).
    pub rhs: [Vec<f64>; 2],
}

impl EnergySystem {
    pub fn len(&self) -> usize {
        self.lambda.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambda.is_empty()
    }

    /// Diagonal of `Λ + L_w`.
    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = self.lambda.clone();
        for &(i, j, w) in &self.edges {
            d[i] += w;
            d[j] += w;
        }
        d
    }

    /// `(Λ + L_w) x`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = self.lambda.iter().zip(x).map(|(l, x)| l * x).collect();
        for &(i, j, w) in &self.edges {
            let diff = w * (x[i] - x[j]);
            out[i] += diff;
            out[j] -= diff;
        }
        out
    }

    /// Dense row-major `Λ + L_w`, for inspection and small-instance checks.
    pub fn dense_matrix(&self) -> Vec<Vec<f64>> {
        let n = self.len();
        let mut a = vec![vec![0.0; n]; n];
        for (i, row) in a.iter_mut().enumerate() {
            row[i] = self.lambda[i];
        }
        for &(i, j, w) in &self.edges {
            a[i][i] += w;
            a[j][j] += w;
            a[i][j] -= w;
            a[j][i] -= w;
        }
        a
    }

    /// Energy of `motion` summed over both components.
    pub fn energy(&self, motion: &[[f64; 2]]) -> f64 {
        let unary: f64 = self
            .lambda
            .iter()
            .zip(motion.iter().zip(&self.anchor))
            .map(|(l, (m, a))| l * ((m[0] - a[0]).powi(2) + (m[1] - a[1]).powi(2)))
            .sum();
        let smooth: f64 = self
            .edges
            .iter()
            .map(|&(i, j, w)| {
                w * ((motion[i][0] - motion[j][0]).powi(2) + (motion[i][1] - motion[j][1]).powi(2))
            })
            .sum();
        unary + smooth
    }
}

/// Similarity weight between two mean colors at scale `sigma`.
#[inline]
pub fn color_weight(a: [f64; 3], b: [f64; 3], sigma: f64) -> f64 {
    let d2: f64 = (0..3).map(|q| (a[q] - b[q]).powi(2)).sum();
    (-d2 / (sigma * sigma)).exp()
}

/// Builds the energy system: λ_i = 1 on foreground and seed regions and 1e-4
/// elsewhere; `w_ij = exp(-‖C_i − C_j‖² / σ²)` for same-class edges and 0 for
/// edges crossing the foreground/background boundary.
pub fn assemble_energy(
    init: &RegionFlowInit,
    class: &RegionClass,
    graph: &RegionGraph,
    stats: &RegionStats,
    color_scale: f64,
) -> Result<EnergySystem> {
    let k = class.len();
    for got in [init.init_motion.len(), graph.region_count, stats.len()] {
        if got != k {
            return Err(Error::RegionCountMismatch { expected: k, got });
        }
    }
    if !(color_scale > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "color scale must be positive, got {color_scale}"
        )));
    }

    let lambda: Vec<f64> = (0..k)
        .map(|i| {
            if class.is_foreground(i) || init.is_seed(i) {
                ANCHOR_WEIGHT
            } else {
                FREE_WEIGHT
            }
        })
        .collect();
    let edges = graph
        .edges
        .iter()
        .map(|&(i, j)| {
            let w = if class.classes[i] == class.classes[j] {
                color_weight(stats.mean_color[i], stats.mean_color[j], color_scale)
            } else {
                0.0
            };
            (i, j, w)
        })
        .collect();
    let rhs = [0, 1].map(|c| {
        lambda
            .iter()
            .zip(&init.init_motion)
            .map(|(l, m)| l * m[c])
            .collect()
    });
    Ok(EnergySystem {
        lambda,
        edges,
        anchor: init.init_motion.clone(),
        rhs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Absolute tolerance on the 2-norm of the CG residual.
    pub tolerance: f64,
    /// CG iteration cap as a multiple of the block size.
    pub max_iter_factor: usize,
    /// Blocks up to this size are solved by dense Cholesky.
    pub dense_threshold: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iter_factor: 10,
            dense_threshold: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionFlowField {
    /// Solved `[u, v]` per region.
    pub motions: Vec<[f64; 2]>,
    pub achieved_energy: f64,
    pub initial_energy: f64,
    /// Largest `‖A x − b‖∞` over both components.
    pub residual: f64,
    /// Total CG iterations (0 when every block was solved directly).
    pub iterations: usize,
}

/// Minimizes the smoothing energy.
///
/// The matrix is block diagonal over connected components of the
/// positive-weight edges, so each block is solved on its own: isolated
/// regions keep their initial motion, small blocks use dense Cholesky, larger
/// ones Jacobi-preconditioned CG. Blocks never influence each other
/// numerically, which keeps e.g. foreground solutions bit-stable under any
/// change confined to the background.
pub fn solve_flow(system: &EnergySystem, init: &RegionFlowInit, config: &SolverConfig) -> Result<RegionFlowField> {
    let k = system.len();
    if init.init_motion.len() != k {
        return Err(Error::RegionCountMismatch {
            expected: k,
            got: init.init_motion.len(),
        });
    }

    let mut adjacency: Vec<Vec<(usize, f64)>> = vec![Vec::new(); k];
    for &(i, j, w) in &system.edges {
        if w > 0.0 {
            adjacency[i].push((j, w));
            adjacency[j].push((i, w));
        }
    }

    let mut motions = vec![[0.0; 2]; k];
    let mut block_of = vec![usize::MAX; k];
    let mut local = vec![0usize; k];
    let mut iterations = 0;
    let mut stack = Vec::new();
    for start in 0..k {
        if block_of[start] != usize::MAX {
            continue;
        }
        let mut members = Vec::new();
        block_of[start] = start;
        stack.push(start);
        while let Some(i) = stack.pop() {
            members.push(i);
            for &(j, _) in &adjacency[i] {
                if block_of[j] == usize::MAX {
                    block_of[j] = start;
                    stack.push(j);
                }
            }
        }
        members.sort_unstable();

        if members.len() == 1 {
            motions[start] = init.init_motion[start];
            continue;
        }

        for (li, &g) in members.iter().enumerate() {
            local[g] = li;
        }
        let block = Block {
            diag: members
                .iter()
                .map(|&g| system.lambda[g] + adjacency[g].iter().map(|&(_, w)| w).sum::<f64>())
                .collect(),
            neighbors: members
                .iter()
                .map(|&g| adjacency[g].iter().map(|&(j, w)| (local[j], w)).collect())
                .collect(),
        };
        let rhs: [Vec<f64>; 2] = [0, 1].map(|c| members.iter().map(|&g| system.rhs[c][g]).collect());

        let solutions = if members.len() <= config.dense_threshold {
            solver::solve_dense(&block, &[&rhs[0], &rhs[1]]).ok_or(Error::NonConvergence {
                iterations: 0,
                residual: f64::NAN,
            })?
        } else {
            let cap = config.max_iter_factor * members.len();
            let mut out = Vec::with_capacity(2);
            for (c, b) in rhs.iter().enumerate() {
                let x0: Vec<f64> = members.iter().map(|&g| init.init_motion[g][c]).collect();
                let outcome = solver::solve_pcg(&block, b, &x0, config.tolerance, cap);
                iterations += outcome.iterations;
                if !outcome.converged && !residual_ok(&block, &outcome.x, b) {
                    let mut ax = vec![0.0; b.len()];
                    block.apply(&outcome.x, &mut ax);
                    return Err(Error::NonConvergence {
                        iterations: outcome.iterations,
                        residual: max_abs_diff(&ax, b),
                    });
                }
                out.push(outcome.x);
            }
            out
        };
        for (li, &g) in members.iter().enumerate() {
            motions[g] = [solutions[0][li], solutions[1][li]];
        }
    }

    let mut residual: f64 = 0.0;
    for c in 0..2 {
        let x: Vec<f64> = motions.iter().map(|m| m[c]).collect();
        let ax = system.apply(&x);
        let r = max_abs_diff(&ax, &system.rhs[c]);
        let scale = system.rhs[c].iter().fold(1.0f64, |m, v| m.max(v.abs()));
        if !(r <= 1e-8 * scale) {
            return Err(Error::NonConvergence { iterations, residual: r });
        }
        residual = residual.max(r);
    }

    Ok(RegionFlowField {
        achieved_energy: system.energy(&motions),
        initial_energy: system.energy(&init.init_motion),
        motions,
        residual,
        iterations,
    })
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

fn residual_ok(block: &Block, x: &[f64], b: &[f64]) -> bool {
    let mut ax = vec![0.0; b.len()];
    block.apply(x, &mut ax);
    let scale = b.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    max_abs_diff(&ax, b) <= 1e-8 * scale
}

/// Dense per-pixel displacement field, `[u, v]` per pixel in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelFlowField {
    height: usize,
    width: usize,
    data: Vec<[f64; 2]>,
}

impl PixelFlowField {
    pub fn new(height: usize, width: usize, data: Vec<[f64; 2]>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width {
            return Err(Error::InvalidArgument(format!(
                "flow buffer of {} vectors does not match {height}x{width}",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn constant(height: usize, width: usize, uv: [f64; 2]) -> Result<Self> {
        Self::new(height, width, vec![uv; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[[f64; 2]] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> [f64; 2] {
        self.data[row * self.width + col]
    }
}

/// Assigns every pixel its region's solved motion.
pub fn rasterize_flow(field: &RegionFlowField, seg: &Segmentation) -> Result<PixelFlowField> {
    if field.motions.len() != seg.region_count() {
        return Err(Error::RegionCountMismatch {
            expected: seg.region_count(),
            got: field.motions.len(),
        });
    }
    let data = seg
        .labels()
        .iter()
        .map(|&l| field.motions[l as usize])
        .collect();
    PixelFlowField::new(seg.height(), seg.width(), data)
}
