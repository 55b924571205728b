//! Shared fixtures and independent oracles for the integration tests.
#![allow(dead_code)]

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use saliencyforge::imgcore::{save_image, save_mask};
use saliencyforge::pipeline::SampleSpec;
use saliencyforge::{Class, GrayMask, RasterImage, RegionClass, RegionGraph, RegionStats};

/// Smooth colored background with sensor-like noise and one elliptical
/// object of a distinct color. The mask marks the ellipse.
pub fn scene(height: usize, width: usize, seed: u64) -> (RasterImage, GrayMask) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phase: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..std::f64::consts::TAU));
    let freq: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.02..0.08));
    let (cy, cx) = (
        rng.random_range(0.35..0.65) * height as f64,
        rng.random_range(0.35..0.65) * width as f64,
    );
    let (ay, ax) = (
        rng.random_range(0.15..0.3) * height as f64,
        rng.random_range(0.15..0.3) * width as f64,
    );
    let object: [f64; 3] = std::array::from_fn(|_| rng.random_range(30.0..225.0));

    let mut img = vec![0u8; height * width * 3];
    let mut mask = vec![0u8; height * width];
    for r in 0..height {
        for c in 0..width {
            let (y, x) = (r as f64, c as f64);
            let inside = ((y - cy) / ay).powi(2) + ((x - cx) / ax).powi(2) < 1.0;
            let base = if inside {
                object
            } else {
                [
                    128.0 + 60.0 * (x * freq[0] + phase[0]).sin(),
                    128.0 + 60.0 * (y * freq[1] + phase[1]).cos(),
                    128.0 + 40.0 * ((x + y) * freq[2] + phase[2]).sin(),
                ]
            };
            for q in 0..3 {
                let noisy = base[q] + rng.random_range(-12.0..12.0);
                img[(r * width + c) * 3 + q] = noisy.round().clamp(0.0, 255.0) as u8;
            }
            mask[r * width + c] = inside as u8;
        }
    }
    (
        RasterImage::new(height, width, img).unwrap(),
        GrayMask::new(height, width, mask).unwrap(),
    )
}

/// Writes `count` scenes as PNG image/mask pairs under `dir` and returns
/// their specs.
pub fn write_dataset(dir: &Path, count: usize, height: usize, width: usize, seed: u64) -> Vec<SampleSpec> {
    std::fs::create_dir_all(dir.join("images")).unwrap();
    std::fs::create_dir_all(dir.join("masks")).unwrap();
    (0..count)
        .map(|i| {
            let (img, mask) = scene(height, width, seed.wrapping_mul(1000).wrapping_add(i as u64));
            let id = format!("sample{i:03}");
            let image = dir.join("images").join(format!("{id}.png"));
            let mask_path = dir.join("masks").join(format!("{id}.png"));
            save_image(&img, &image).unwrap();
            save_mask(&mask, &mask_path).unwrap();
            SampleSpec {
                id,
                image,
                mask: mask_path,
            }
        })
        .collect()
}

/// Random region classes, graph and mean colors over `k` regions.
pub fn random_regions(
    rng: &mut impl Rng,
    k: usize,
    fg_prob: f64,
    edge_prob: f64,
    color_range: f64,
) -> (RegionClass, RegionGraph, RegionStats) {
    let classes = (0..k)
        .map(|_| {
            if rng.random_bool(fg_prob) {
                Class::Foreground
            } else {
                Class::Background
            }
        })
        .collect();
    let mut graph = RegionGraph::new(k);
    for i in 0..k {
        for j in i + 1..k {
            if rng.random_bool(edge_prob) {
                graph.add_edge(i, j);
            }
        }
    }
    let stats = RegionStats {
        pixel_count: vec![1; k],
        centroid: vec![[0.0; 2]; k],
        mean_color: (0..k)
            .map(|_| std::array::from_fn(|_| rng.random_range(0.0..color_range)))
            .collect(),
    };
    (RegionClass { classes }, graph, stats)
}

/// Unary weights and pairwise weights written out from the model
/// definition, independent of the library's assembly.
pub fn oracle_weights(
    classes: &RegionClass,
    seeds: &[usize],
    graph: &RegionGraph,
    stats: &RegionStats,
    sigma: f64,
) -> (Vec<f64>, Vec<(usize, usize, f64)>) {
    let lambda = (0..classes.len())
        .map(|i| {
            if classes.classes[i] == Class::Foreground || seeds.contains(&i) {
                1.0
            } else {
                1e-4
            }
        })
        .collect();
    let edges = graph
        .edges
        .iter()
        .map(|&(i, j)| {
            let w = if classes.classes[i] != classes.classes[j] {
                0.0
            } else {
                let a = stats.mean_color[i];
                let b = stats.mean_color[j];
                let d2 = (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2);
                (-d2 / (sigma * sigma)).exp()
            };
            (i, j, w)
        })
        .collect();
    (lambda, edges)
}

/// Minimizer of the quadratic energy by dense LU on `(Λ + L_w)`.
pub fn dense_minimizer(lambda: &[f64], edges: &[(usize, usize, f64)], anchor: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let k = lambda.len();
    let mut a = DMatrix::<f64>::zeros(k, k);
    for i in 0..k {
        a[(i, i)] = lambda[i];
    }
    for &(i, j, w) in edges {
        a[(i, i)] += w;
        a[(j, j)] += w;
        a[(i, j)] -= w;
        a[(j, i)] -= w;
    }
    let lu = a.lu();
    let cols: Vec<DVector<f64>> = (0..2)
        .map(|c| {
            let b = DVector::from_iterator(k, (0..k).map(|i| lambda[i] * anchor[i][c]));
            lu.solve(&b).expect("Λ + L_w is nonsingular")
        })
        .collect();
    (0..k).map(|i| [cols[0][i], cols[1][i]]).collect()
}

/// Σ λ_i ‖x_i − x⁰_i‖² + Σ_edges w_ij ‖x_i − x_j‖².
pub fn oracle_energy(
    lambda: &[f64],
    edges: &[(usize, usize, f64)],
    anchor: &[[f64; 2]],
    x: &[[f64; 2]],
) -> f64 {
    let sq = |a: [f64; 2], b: [f64; 2]| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);
    let unary: f64 = (0..lambda.len()).map(|i| lambda[i] * sq(x[i], anchor[i])).sum();
    let pair: f64 = edges.iter().map(|&(i, j, w)| w * sq(x[i], x[j])).sum();
    unary + pair
}

/// Largest componentwise error relative to the reference's magnitude.
pub fn relative_error(x: &[[f64; 2]], reference: &[[f64; 2]]) -> f64 {
    let scale = reference
        .iter()
        .flat_map(|v| v.iter().map(|c| c.abs()))
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    x.iter()
        .zip(reference)
        .flat_map(|(a, b)| [(a[0] - b[0]).abs(), (a[1] - b[1]).abs()])
        .fold(0.0, f64::max)
        / scale
}
