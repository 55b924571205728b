//! Library results against small independent re-computations.

#![allow(clippy::needless_range_loop)]

mod common;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use saliencyforge::imgcore::{rgb_pixel_to_lab, rgb_to_lab};
use saliencyforge::metrics::{f_measure, mae, pr_curve, weighted_bce, Aggregation, LossConfig, LossFixture};
use saliencyforge::pipeline::frame_seed;
use saliencyforge::warp::{warp_image, warp_mask};
use saliencyforge::{
    assemble_energy, build_adjacency, init_region_motion, oversegment, rasterize_flow, region_stats, solve_flow,
    EnergySystem, GrayMask, PixelFlowField, ProbMap, RasterImage, RegionFlowField, RegionFlowInit, Segmentation,
    SolverConfig,
};

use common::{dense_minimizer, oracle_energy, oracle_weights, random_regions};

/// Straight transcription of the sRGB → XYZ (D65) → CIELAB formulas.
fn lab_oracle(rgb: [u8; 3]) -> [f64; 3] {
    let lin = |c: u8| {
        let c = c as f64 / 255.0;
        if c <= 0.04045 {
            c / 12.92
        } else {
            ((c + 0.055) / 1.055).powf(2.4)
        }
    };
    let (r, g, b) = (lin(rgb[0]), lin(rgb[1]), lin(rgb[2]));
    let x = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b;
    let y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
    let z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b;
    let (xn, yn, zn) = (
        0.4124564 + 0.3575761 + 0.1804375,
        0.2126729 + 0.7151522 + 0.0721750,
        0.0193339 + 0.1191920 + 0.9503041,
    );
    let f = |t: f64| {
        let eps = 216.0 / 24389.0;
        let kappa = 24389.0 / 27.0;
        if t > eps {
            t.cbrt()
        } else {
            (kappa * t + 16.0) / 116.0
        }
    };
    let (fx, fy, fz) = (f(x / xn), f(y / yn), f(z / zn));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

#[test]
fn lab_matches_formula_transcription() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..2000 {
        let rgb: [u8; 3] = rng.random();
        let (a, b) = (rgb_pixel_to_lab(rgb), lab_oracle(rgb));
        for q in 0..3 {
            assert!((a[q] - b[q]).abs() < 1e-9, "{rgb:?}: {a:?} vs {b:?}");
        }
    }
    assert_eq!(rgb_pixel_to_lab([0, 0, 0]), [0.0, 0.0, 0.0]);
    let white = rgb_pixel_to_lab([255, 255, 255]);
    assert!((white[0] - 100.0).abs() < 1e-3 && white[1].abs() < 1e-3 && white[2].abs() < 1e-3);
}

#[test]
fn uniform_image_splits_into_quadrants() {
    let img = RasterImage::filled(100, 100, [90, 140, 60]).unwrap();
    let seg = oversegment(&rgb_to_lab(&img), 4, 10.0, 10).unwrap();
    assert_eq!(seg.region_count(), 4);
    let stats = region_stats(&seg, &rgb_to_lab(&img)).unwrap();
    for &n in &stats.pixel_count {
        assert!((2250..=2750).contains(&n), "{:?}", stats.pixel_count);
    }
}

#[test]
fn tiny_image_respects_target() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let img = RasterImage::new(10, 10, (0..300).map(|_| rng.random()).collect()).unwrap();
    let seg = oversegment(&rgb_to_lab(&img), 100, 10.0, 10).unwrap();
    assert!(seg.region_count() <= 100);
    let stats = region_stats(&seg, &rgb_to_lab(&img)).unwrap();
    assert!(stats.pixel_count.iter().all(|&n| n >= 1));
}

#[test]
fn region_means_match_pixel_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let img = RasterImage::new(6, 6, (0..108).map(|_| rng.random()).collect()).unwrap();
    let lab = rgb_to_lab(&img);
    let labels: Vec<u32> = (0..36).map(|_| rng.random_range(0..4)).collect();
    let seg = Segmentation::from_labels(6, 6, &labels).unwrap();
    let stats = region_stats(&seg, &lab).unwrap();

    let k = seg.region_count();
    let mut sum = vec![[0.0; 3]; k];
    let mut count = vec![0usize; k];
    for r in 0..6 {
        for c in 0..6 {
            let l = seg.label(r, c);
            let px = lab_oracle(img.pixel(r, c));
            for q in 0..3 {
                sum[l][q] += px[q];
            }
            count[l] += 1;
        }
    }
    for l in 0..k {
        assert_eq!(stats.pixel_count[l], count[l]);
        for q in 0..3 {
            let mean = sum[l][q] / count[l] as f64;
            assert!((stats.mean_color[l][q] - mean).abs() < 1e-9, "region {l}");
        }
    }
}

#[test]
fn adjacency_matches_neighbor_enumeration() {
    // 2x2 arrangement of 4x4 blocks: rook adjacency only.
    let labels: Vec<u32> = (0..64).map(|i| ((i / 8) / 4 * 2 + (i % 8) / 4) as u32).collect();
    let seg = Segmentation::from_labels(8, 8, &labels).unwrap();
    let graph = build_adjacency(&seg);
    assert_eq!(graph.edges.len(), 4);
    assert!(!graph.contains(0, 3) && !graph.contains(1, 2));

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let img = RasterImage::new(30, 40, (0..3600).map(|_| rng.random()).collect()).unwrap();
    let seg = oversegment(&rgb_to_lab(&img), 25, 10.0, 10).unwrap();
    let mut expected = std::collections::BTreeSet::new();
    for r in 0..30 {
        for c in 0..40 {
            let a = seg.label(r, c);
            for (rr, cc) in [(r + 1, c), (r, c + 1)] {
                if rr < 30 && cc < 40 {
                    let b = seg.label(rr, cc);
                    if a != b {
                        expected.insert((a.min(b), a.max(b)));
                    }
                }
            }
        }
    }
    assert_eq!(build_adjacency(&seg).edges, expected);
}

#[test]
fn chain_solution_matches_exact_rational_solve() {
    // λ = (1, 1e-4, 1e-4), unit weights on 0-1 and 1-2, u⁰ = (10, 0, 0):
    // solved exactly in rationals, then rounded.
    let frozen = [9.998_000_899_590_187, 9.996_001_799_180_373, 9.995_002_298_950_478];
    let lambda = [1.0, 1e-4, 1e-4];
    let edges = [(0, 1, 1.0), (1, 2, 1.0)];
    let anchor = [[10.0, 0.0], [0.0, 0.0], [0.0, 0.0]];
    let x = dense_minimizer(&lambda, &edges, &anchor);
    for i in 0..3 {
        assert!((x[i][0] - frozen[i]).abs() < 1e-12, "{:?}", x);
    }

    let system = EnergySystem {
        lambda: lambda.to_vec(),
        edges: edges.to_vec(),
        anchor: anchor.to_vec(),
        rhs: [vec![10.0, 0.0, 0.0], vec![0.0; 3]],
    };
    let init = RegionFlowInit {
        init_motion: anchor.to_vec(),
        seed_set: vec![0],
        main_motion: [0.0; 2],
        displacement_bound: 10.0,
    };
    for dense_threshold in [64, 0] {
        let config = SolverConfig {
            dense_threshold,
            ..SolverConfig::default()
        };
        let solved = solve_flow(&system, &init, &config).unwrap();
        for i in 0..3 {
            assert!((solved.motions[i][0] - frozen[i]).abs() < 1e-10, "{:?}", solved.motions);
            assert_eq!(solved.motions[i][1], 0.0);
        }
    }
}

#[test]
fn energy_matrix_is_positive_definite() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for n in 0..50 {
        let k = rng.random_range(1..=40);
        let (classes, graph, stats) = random_regions(&mut rng, k, 0.4, 0.3, 2.0);
        let (init, graph) = init_region_motion(&classes, &graph, 240, 0.2, n).unwrap();
        let system = assemble_energy(&init, &classes, &graph, &stats, 1.0).unwrap();
        let dense = system.dense_matrix();
        let m = DMatrix::from_fn(k, k, |i, j| dense[i][j]);
        assert_eq!(m, m.transpose());
        let eig = SymmetricEigen::new(m);
        assert!(eig.eigenvalues.min() > 0.0, "instance {n}: {}", eig.eigenvalues.min());
    }
}

#[test]
fn solution_zeroes_energy_gradient() {
    // First-order optimality, with the gradient written out from the energy
    // definition rather than taken from the library's operator.
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for n in 0..40 {
        let k = rng.random_range(2..=200);
        let (classes, graph, stats) = random_regions(&mut rng, k, 0.3, (6.0 / k as f64).min(1.0), 1.0);
        let (init, graph) = init_region_motion(&classes, &graph, 300, 0.2, n).unwrap();
        let system = assemble_energy(&init, &classes, &graph, &stats, 1.0).unwrap();
        let solved = solve_flow(&system, &init, &SolverConfig::default()).unwrap();

        let (lambda, edges) = oracle_weights(&classes, &init.seed_set, &graph, &stats, 1.0);
        let x = &solved.motions;
        let mut g = vec![[0.0; 2]; k];
        for i in 0..k {
            for c in 0..2 {
                g[i][c] = lambda[i] * (x[i][c] - init.init_motion[i][c]);
            }
        }
        for &(i, j, w) in &edges {
            for c in 0..2 {
                let d = w * (x[i][c] - x[j][c]);
                g[i][c] += d;
                g[j][c] -= d;
            }
        }
        let worst = g.iter().flat_map(|v| v.iter()).fold(0.0f64, |a, b| a.max(b.abs()));
        assert!(worst <= 1e-8 * init.displacement_bound, "instance {n}: gradient {worst:e}");
        let e = oracle_energy(&lambda, &edges, &init.init_motion, x);
        assert!((e - solved.achieved_energy).abs() <= 1e-9 * e.max(1.0));
    }
}

#[test]
fn rasterized_flow_is_label_lookup() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let labels: Vec<u32> = (0..20 * 15).map(|_| rng.random_range(0..6)).collect();
    let seg = Segmentation::from_labels(20, 15, &labels).unwrap();
    let k = seg.region_count();
    let field = RegionFlowField {
        motions: (0..k).map(|_| [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)]).collect(),
        achieved_energy: 0.0,
        initial_energy: 0.0,
        residual: 0.0,
        iterations: 0,
    };
    let flow = rasterize_flow(&field, &seg).unwrap();
    for r in 0..20 {
        for c in 0..15 {
            assert_eq!(flow.get(r, c), field.motions[seg.label(r, c)]);
        }
    }
}

#[test]
fn integer_shift_replicates_edges() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let img = RasterImage::new(10, 10, (0..300).map(|_| rng.random()).collect()).unwrap();
    let out = warp_image(&img, &PixelFlowField::constant(10, 10, [3.0, 0.0]).unwrap()).unwrap();
    for r in 0..10 {
        for c in 0..10 {
            assert_eq!(out.pixel(r, c), img.pixel(r, (c + 3).min(9)));
        }
    }
}

#[test]
fn half_pixel_shift_averages() {
    let img = RasterImage::new(1, 2, vec![0, 0, 0, 100, 100, 100]).unwrap();
    let out = warp_image(&img, &PixelFlowField::constant(1, 2, [0.5, 0.0]).unwrap()).unwrap();
    assert_eq!(out.pixel(0, 0), [50, 50, 50]);
}

#[test]
fn mask_shift_and_out_of_bounds() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mask = GrayMask::new(12, 9, (0..108).map(|_| rng.random_range(0..2)).collect()).unwrap();
    let out = warp_mask(&mask, &PixelFlowField::constant(12, 9, [2.0, 1.0]).unwrap()).unwrap();
    for r in 0..12 {
        for c in 0..9 {
            let expected = if r + 1 < 12 && c + 2 < 9 { mask.get(r + 1, c + 2) } else { 0 };
            assert_eq!(out.get(r, c), expected, "({r}, {c})");
        }
    }
    let gone = warp_mask(&mask, &PixelFlowField::constant(12, 9, [50.0, -50.0]).unwrap()).unwrap();
    assert_eq!(gone.salient_count(), 0);
}

#[test]
fn reference_loss_fixture() {
    // Same format other implementations of the loss exchange fixtures in.
    let fixture = LossFixture::load(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/loss_2x2.json")).unwrap();
    let (pred, gt) = fixture.maps().unwrap();
    let out = weighted_bce(&pred, &gt, &fixture.config()).unwrap();
    assert!((out.loss - fixture.loss.unwrap()).abs() <= 1e-6);
    assert!((out.loss - 1.5 * std::f64::consts::LN_2).abs() < 1e-12);
}

#[test]
fn loss_and_metric_hand_cases() {
    let cfg = LossConfig::default();
    let gt = GrayMask::new(2, 2, vec![1, 0, 0, 0]).unwrap();
    let out = weighted_bce(&ProbMap::filled(2, 2, 0.5).unwrap(), &gt, &cfg).unwrap();
    assert!((out.loss - 1.5 * std::f64::consts::LN_2).abs() < 1e-12);
    assert_eq!(out.alpha, 0.25);

    let perfect = weighted_bce(&ProbMap::from_mask(&gt), &gt, &cfg).unwrap().loss;
    assert!(perfect <= 4.0 * cfg.epsilon * cfg.epsilon.ln().abs());

    assert!((mae(&ProbMap::filled(2, 2, 0.25).unwrap(), &gt).unwrap() - 0.375).abs() < 1e-15);
    let inverse = ProbMap::new(2, 2, vec![0.0, 1.0, 1.0, 1.0]).unwrap();
    assert_eq!(mae(&inverse, &gt).unwrap(), 1.0);

    assert!((f_measure(0.8, 0.4, 0.3) - 0.65).abs() < 1e-15);
    assert_eq!(f_measure(1.0, 1.0, 0.3), 1.0);
    assert_eq!(f_measure(0.0, 0.0, 0.3), 0.0);
}

#[test]
fn pr_curve_hand_case() {
    let pred = ProbMap::new(2, 2, vec![1.0, 0.6, 0.4, 0.0]).unwrap();
    let gt = GrayMask::new(2, 2, vec![1, 1, 0, 0]).unwrap();
    let curve = pr_curve(&[pred], std::slice::from_ref(&gt), Aggregation::Micro, 0.3).unwrap();
    let at = |t: usize| (curve.points[t].precision, curve.points[t].recall);
    assert_eq!(at(128), (1.0, 1.0));
    assert_eq!(at(255), (1.0, 0.5));
    // q(0.6) = 153, q(0.4) = 102.
    assert_eq!(at(153), (1.0, 1.0));
    assert_eq!(at(154), (1.0, 0.5));
    assert_eq!(at(102), (2.0 / 3.0, 1.0));

    let ones = ProbMap::filled(2, 2, 1.0).unwrap();
    let curve = pr_curve(&[ones], &[gt], Aggregation::Micro, 0.3).unwrap();
    for p in &curve.points[1..] {
        assert_eq!((p.precision, p.recall), (0.5, 1.0));
    }
}

#[test]
fn frame_seed_matches_sha256_layout() {
    for (master, id, idx) in [(0u64, "a", 1usize), (7, "sample_042", 10), (u64::MAX, "ünï", 3)] {
        let mut h = Sha256::new();
        h.update(master.to_le_bytes());
        h.update((id.len() as u64).to_le_bytes());
        h.update(id.as_bytes());
        h.update((idx as u64).to_le_bytes());
        let digest = h.finalize();
        let expected = u64::from_le_bytes(digest[..8].try_into().unwrap());
        assert_eq!(frame_seed(master, id, idx), expected);
    }
}
