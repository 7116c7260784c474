use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use spherelets::datasets::{euler_spiral, random_frame, sphere_sample, Sampling};
use spherelets::numeric::{row_vec, seeded_gaussian, seeded_rng, select_rows};
use spherelets::partition::{split_cell, PartitionNode, Piece};
use spherelets::{fit_sphere, DataMatrix, Fitter, SphereletModel, TreeConfig};

fn noisy_sphere(n: usize, d: usize, ambient: usize, noise: f64, seed: u64) -> DataMatrix {
    let center = DVector::from_fn(ambient, |i, _| (i as f64 * 0.7).sin() * 3.0);
    let s = sphere_sample(n, d, ambient, &center, 2.0, seed).unwrap();
    s.points + seeded_gaussian(n, ambient, noise, seed ^ 0xabcd).unwrap()
}

fn rigid_motion(ambient: usize, seed: u64) -> (DMatrix<f64>, DVector<f64>) {
    let mut rng = seeded_rng(seed);
    let q = random_frame(ambient, ambient, &mut rng);
    let t = seeded_gaussian(1, ambient, 2.0, seed + 1).unwrap().row(0).transpose();
    (q, t)
}

fn transform(x: &DataMatrix, q: &DMatrix<f64>, t: &DVector<f64>, scale: f64) -> DataMatrix {
    let mut out = x * q.transpose() * scale;
    for mut row in out.row_iter_mut() {
        row += t.transpose();
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn sphere_projection_is_idempotent(seed in 0u64..10_000, d in 1usize..3, extra in 1usize..4) {
        let ambient = d + extra;
        let x = noisy_sphere(30, d, ambient, 0.1, seed);
        let (s, _) = fit_sphere(&x, d).unwrap();
        prop_assume!(!s.degenerate);
        let probe = seeded_gaussian(5, ambient, 3.0, seed + 7).unwrap();
        for row in probe.row_iter() {
            let Ok(p) = s.project(&row.transpose()) else { continue };
            let pp = s.project(&p).unwrap();
            prop_assert!((&pp - &p).norm() <= 1e-10 * (1.0 + p.norm()));
            prop_assert!(s.residual_sq(&p).unwrap() <= 1e-18 * (1.0 + s.radius * s.radius));
        }
    }

    #[test]
    fn sphere_fit_commutes_with_rigid_motions_and_scaling(
        seed in 0u64..10_000,
        d in 1usize..3,
        extra in 1usize..4,
        scale in 0.1f64..10.0,
    ) {
        let ambient = d + extra;
        let x = noisy_sphere(40, d, ambient, 0.05, seed);
        let (q, t) = rigid_motion(ambient, seed + 3);
        let (s, _) = fit_sphere(&x, d).unwrap();
        let (moved, _) = fit_sphere(&transform(&x, &q, &t, scale), d).unwrap();
        prop_assume!(!s.degenerate && !moved.degenerate);
        let expected_center = &q * &s.center * scale + &t;
        prop_assert!((moved.radius - scale * s.radius).abs() <= 1e-8 * scale * s.radius);
        prop_assert!((&moved.center - &expected_center).norm() <= 1e-8 * (1.0 + expected_center.norm()));
        // projections move with the data
        let probe = seeded_gaussian(4, ambient, 2.0, seed + 9).unwrap();
        for row in probe.row_iter() {
            let p = row.transpose();
            let (Ok(a), Ok(b)) = (s.project(&p), moved.project(&(&q * &p * scale + &t))) else { continue };
            let mapped = &q * a * scale + &t;
            prop_assert!((b - &mapped).norm() <= 1e-7 * (1.0 + mapped.norm()));
        }
    }

    #[test]
    fn training_points_route_to_their_own_leaf(seed in 0u64..1_000, eps_exp in 3i32..8) {
        let x = euler_spiral(300, 2.0, seed, Sampling::Random).unwrap().points;
        for fitter in [Fitter::Spca, Fitter::Pca] {
            let model = SphereletModel::fit(&x, &TreeConfig::new(1, 10f64.powi(-eps_exp), fitter)).unwrap();
            let leaves = model.tree.leaves();
            let mut seen = vec![false; x.nrows()];
            for (id, members) in &leaves {
                for &i in members.iter() {
                    prop_assert!(!seen[i], "row {} in two leaves", i);
                    seen[i] = true;
                    prop_assert_eq!(model.route(&row_vec(&x, i)).unwrap(), *id);
                }
            }
            prop_assert!(seen.iter().all(|&s| s));
            prop_assert_eq!(leaves.len(), model.pieces_count());
        }
    }

    #[test]
    fn leaves_stop_for_a_reason(seed in 0u64..1_000, eps_exp in 3i32..9, n_min in 4usize..25) {
        let x = euler_spiral(250, 2.0, seed, Sampling::Random).unwrap().points;
        let eps = 10f64.powi(-eps_exp);
        for fitter in [Fitter::Spca, Fitter::Pca] {
            let cfg = TreeConfig { d: 1, eps, n_min, fitter };
            let model = SphereletModel::fit(&x, &cfg).unwrap();
            for (id, members) in model.tree.leaves() {
                let cell = select_rows(&x, members);
                let piece = Piece::fit(&cell, 1, fitter).unwrap();
                prop_assert_eq!(&piece, &model.pieces[id]);
                let mse = piece.mse(&cell).unwrap();
                let too_small_to_split = members.len() <= n_min;
                let split_undershoots = match split_cell(&cell) {
                    Ok((_, l, r)) => l.len() < n_min || r.len() < n_min,
                    Err(_) => true,
                };
                prop_assert!(mse <= eps || too_small_to_split || split_undershoots);
            }
        }
    }
}

#[test]
fn coarser_eps_never_gives_more_leaves() {
    let x = euler_spiral(800, 2.0, 5, Sampling::Random).unwrap().points;
    for fitter in [Fitter::Spca, Fitter::Pca] {
        let counts: Vec<usize> = [1e-2, 1e-4, 1e-6, 1e-8]
            .iter()
            .map(|&eps| SphereletModel::fit(&x, &TreeConfig::new(1, eps, fitter)).unwrap().pieces_count())
            .collect();
        assert!(counts.windows(2).all(|w| w[0] <= w[1]), "{counts:?}");
    }
}

#[test]
fn internal_nodes_split_through_cell_mean() {
    let x = euler_spiral(400, 2.0, 9, Sampling::Random).unwrap().points;
    let model = SphereletModel::fit(&x, &TreeConfig::new(1, 1e-7, Fitter::Pca)).unwrap();
    let PartitionNode::Internal { rule, .. } = &model.tree else {
        panic!("expected the root to split");
    };
    let mean = x.row_mean().transpose();
    assert!((&rule.mu - mean).amax() < 1e-12);
    assert!((rule.direction.norm() - 1.0).abs() < 1e-12);
}
