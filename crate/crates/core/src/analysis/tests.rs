use super::*;
use crate::numerics::rotation::{axis_angle, sample_rotation_uniform};
use ndarray::Array3;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn random_rotations(n: usize, seed: u64) -> Vec<Matrix3<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| sample_rotation_uniform(&mut rng)).collect()
}

fn gaussian_clusters(n: usize, centers: &[[f64; 3]], spread: f64, seed: u64) -> (Array2<f64>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<usize> = (0..n).map(|i| i % centers.len()).collect();
    let x = Array2::from_shape_fn((n, 3), |(i, j)| {
        let g: f64 = StandardNormal.sample(&mut rng);
        centers[labels[i]][j] + spread * g
    });
    (x, labels)
}

#[test]
fn identical_poses_align_to_identity() {
    let r = random_rotations(50, 1);
    let al = align_poses_global(&r, &r).unwrap();
    assert!((al.r_global - Matrix3::identity()).norm() < 1e-9);
    assert!((al.r_frame - Matrix3::identity()).norm() < 1e-9);
    assert!(!al.mirror);
    assert!(rotation_error_median(&r, &r, &al) < 1e-18);
}

#[test]
fn left_offset_recovers_transpose() {
    let truth = random_rotations(60, 2);
    let q = axis_angle([0.3, -1.0, 0.4], 1.1);
    let pred: Vec<_> = truth.iter().map(|r| q * r).collect();
    let al = align_poses_global(&pred, &truth).unwrap();
    assert!((al.r_global - q.transpose()).norm() < 1e-4);
    assert!((al.r_frame - Matrix3::identity()).norm() < 1e-4);
    assert!(rotation_error_median(&pred, &truth, &al) < 1e-10);
}

#[test]
fn right_offset_and_mirror_are_absorbed() {
    let truth = random_rotations(60, 3);
    let g = axis_angle([1.0, 0.2, 0.0], 0.7);
    let pred: Vec<_> = truth.iter().map(|r| MIRROR * (r * g.transpose()) * MIRROR).collect();
    let al = align_poses_global(&pred, &truth).unwrap();
    assert!(al.mirror);
    assert!((al.r_frame - g).norm() < 1e-4);
    assert!((al.r_global - Matrix3::identity()).norm() < 1e-4);
    assert!(rotation_error_median(&pred, &truth, &al) < 1e-10);
}

#[test]
fn alignment_needs_three_poses() {
    let r = random_rotations(2, 4);
    assert!(matches!(align_poses_global(&r, &r), Err(HetemError::InsufficientData(_))));
}

#[test]
fn alignment_ignores_pose_order() {
    let truth = random_rotations(40, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let pred: Vec<_> = truth
        .iter()
        .map(|r| r * axis_angle([0.0, 0.0, 1.0], 0.05 * normal(&mut rng)))
        .collect();
    let a = align_poses_global(&pred, &truth).unwrap();
    let mut perm: Vec<usize> = (0..40).collect();
    perm.shuffle(&mut rng);
    let p2: Vec<_> = perm.iter().map(|&i| pred[i]).collect();
    let t2: Vec<_> = perm.iter().map(|&i| truth[i]).collect();
    let b = align_poses_global(&p2, &t2).unwrap();
    assert!((a.r_global - b.r_global).norm() < 1e-9);
    assert!((a.r_frame - b.r_frame).norm() < 1e-9);
    assert_eq!(a.mirror, b.mirror);
}

#[test]
fn half_turn_residual_is_eight() {
    let truth = random_rotations(7, 6);
    let flip = axis_angle([0.0, 0.0, 1.0], std::f64::consts::PI);
    let pred: Vec<_> = truth.iter().map(|r| flip * r).collect();
    let al = PoseAlignment::identity();
    assert!((rotation_error_median(&pred, &truth, &al) - 8.0).abs() < 1e-9);
}

#[test]
fn translation_median_examples() {
    let t = vec![[0.5, -1.0], [2.0, 0.0], [0.0, 0.0]];
    assert_eq!(translation_error_median(&t, &t), 0.0);
    let shifted: Vec<_> = t.iter().map(|v| [v[0] + 1.0, v[1]]).collect();
    assert!((translation_error_median(&shifted, &t) - 1.0).abs() < 1e-12);
}

#[test]
fn separated_clusters_classify_perfectly() {
    let (x, labels) = gaussian_clusters(400, &[[0.0, 0.0, 0.0], [6.0, -3.0, 1.0]], 0.5, 7);
    assert_eq!(classification_error(&x, &labels, 2).unwrap(), 0.0);
}

#[test]
fn shuffled_labels_give_chance_error() {
    let n = 10_000;
    let (x, mut labels) = gaussian_clusters(n, &[[0.0, 0.0, 0.0], [6.0, 0.0, 0.0]], 0.5, 8);
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(10));
    let e = classification_error(&x, &labels, 2).unwrap();
    assert!((e - 0.5).abs() < 0.05, "{e}");
}

#[test]
fn identical_latents_are_degenerate() {
    let x = Array2::from_elem((10, 2), 0.3);
    let labels: Vec<usize> = (0..10).map(|i| i % 2).collect();
    assert!(classification_error(&x, &labels, 2).is_err());
}

#[test]
fn spearman_examples() {
    let labels: Vec<f64> = (0..50).map(|i| (i % 10) as f64).collect();
    let x = Array2::from_shape_fn((50, 3), |(i, j)| labels[i] * [1.0, -2.0, 0.5][j]);
    assert!((spearman_pc1(&x, &labels).unwrap() - 1.0).abs() < 1e-12);

    let n = 4000;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = Array2::from_shape_fn((n, 2), |_| StandardNormal.sample(&mut rng));
    let labels: Vec<f64> = (0..n).map(|i| (i % 7) as f64).collect();
    let r = spearman_pc1(&x, &labels).unwrap();
    assert!(r < 3.0 / (n as f64).sqrt(), "{r}");

    let flat = Array2::from_elem((10, 2), 1.0);
    let lab: Vec<f64> = (0..10).map(|i| i as f64).collect();
    assert!(spearman_pc1(&flat, &lab).is_err());
}

fn blob_volume(l: usize, shift: f64) -> Volume {
    let c = l as f64 / 2.0;
    let data = Array3::from_shape_fn((l, l, l), |(z, y, x)| {
        let r2 = (x as f64 - c - shift).powi(2) + (y as f64 - c).powi(2) + (z as f64 - c + 1.0).powi(2);
        (-r2 / 6.0).exp() + 0.3 * (-(x as f64 - c + 3.0).powi(2) / 2.0 - r2 / 40.0).exp()
    });
    Volume::new(data, 1.5).unwrap()
}

#[test]
fn fsc_of_identical_volumes() {
    let v = blob_volume(16, 0.0);
    let curve = fsc_curve(&v, &v).unwrap();
    assert_eq!(curve.shells.len(), 9);
    assert!(curve.shells.iter().all(|&(_, c)| (c - 1.0).abs() < 1e-12));
    assert_eq!(fsc_resolution(&curve, 0.5), 2.0);
    let scaled = Volume::new(v.data() * 2.0, 1.5).unwrap();
    let c2 = fsc_curve(&v, &scaled).unwrap();
    for (a, b) in curve.shells.iter().zip(&c2.shells) {
        assert!((a.1 - b.1).abs() < 1e-12);
    }
}

#[test]
fn fsc_resolution_interpolates() {
    let curve = FscCurve {
        shells: vec![(0.0, 1.0), (0.125, 0.9), (0.25, 0.3), (0.375, 0.1), (0.5, 0.0)],
    };
    // Crossing at 0.125 + (0.4 / 0.6) · 0.125.
    let f = 0.125 + 0.4 / 0.6 * 0.125;
    assert!((fsc_resolution(&curve, 0.5) - 1.0 / f).abs() < 1e-12);
}

#[test]
fn overlap_examples() {
    assert!((latent_overlap(&[(0.3, 1.0), (0.3, 2.0)]).unwrap() - 1.0).abs() < 1e-15);
    assert!((latent_overlap(&[(0.0, 1.0), (1.0, 1.0)]).unwrap() - (-1.0f64).exp()).abs() < 1e-15);
    // Three classes average over three pairs.
    let three = latent_overlap(&[(0.0, 1.0), (0.0, 1.0), (1.0, 1.0)]).unwrap();
    assert!((three - (1.0 + 2.0 * (-1.0f64).exp()) / 3.0).abs() < 1e-15);
}

#[test]
fn zero_spread_class_is_degenerate() {
    let x = Array2::from_shape_fn((6, 2), |(i, j)| if i < 3 { 1.0 + j as f64 } else { i as f64 });
    let labels = vec![0, 0, 0, 1, 1, 1];
    assert!(matches!(pc1_class_stats(&x, &labels), Err(HetemError::DegenerateStatistics(_))));
}

#[test]
fn entanglement_totals() {
    let truth = random_rotations(30, 12);
    let (x, labels) = gaussian_clusters(30, &[[0.0, 0.0, 0.0], [3.0, 0.0, 0.0]], 0.4, 13);
    let t: Vec<[f64; 2]> = (0..30).map(|i| [i as f64 * 0.1, 0.0]).collect();
    let rep = entanglement(&x, &labels, &truth, &t, &truth, &t).unwrap();
    assert!(rep.e_rot < 1e-12 && rep.e_trans == 0.0);
    assert!(rep.e_z > 0.0 && rep.e_z <= 1.0);
    assert!((rep.e_total - (rep.e_rot + rep.e_trans + rep.e_z)).abs() < 1e-15);
}

#[test]
fn representative_latent_cases() {
    // A point mass returns its own location.
    let x = Array2::from_shape_fn((20, 2), |(_, j)| [0.7, -0.2][j]);
    let labels = vec![4; 20];
    let reps = representative_latents(&x, &labels).unwrap();
    assert_eq!(reps.len(), 1);
    assert!((reps[0].1[0] - 0.7).abs() < 1e-12 && (reps[0].1[1] + 0.2).abs() < 1e-12);

    // A symmetric two-mode class picks a mode, not the midpoint.
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let x = Array2::from_shape_fn((400, 2), |(i, j)| {
        let g: f64 = StandardNormal.sample(&mut rng);
        let centre = if i % 2 == 0 { 3.0 } else { -3.0 };
        if j == 0 { centre + 0.3 * g } else { 0.1 * g }
    });
    let reps = representative_latents(&x, &vec![0; 400]).unwrap();
    assert!((reps[0].1[0].abs() - 3.0).abs() < 0.5, "{:?}", reps[0].1);

    // Small classes fall back to the mean.
    let x = Array2::from_shape_fn((5, 1), |(i, _)| i as f64);
    let reps = representative_latents(&x, &[1, 1, 1, 1, 1]).unwrap();
    assert_eq!(reps[0].1, vec![2.0]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn fsc_symmetric_and_scale_invariant(shift in -2.0f64..2.0, scale in 0.1f64..10.0) {
        let a = blob_volume(12, 0.0);
        let b = blob_volume(12, shift);
        let ab = fsc_curve(&a, &b).unwrap();
        let ba = fsc_curve(&b, &a).unwrap();
        let sb = fsc_curve(&a, &Volume::new(b.data() * scale, 1.5).unwrap()).unwrap();
        for ((x, y), z) in ab.shells.iter().zip(&ba.shells).zip(&sb.shells) {
            prop_assert!((x.1 - y.1).abs() < 1e-12);
            prop_assert!((x.1 - z.1).abs() < 1e-10);
        }
    }

    #[test]
    fn classification_invariant_to_rotation(seed in 0u64..1000) {
        let (x, labels) = gaussian_clusters(120, &[[0.0, 0.0, 0.0], [2.0, 1.0, 0.0]], 0.8, seed);
        let q = random_rotations(1, seed + 1)[0];
        let xq = Array2::from_shape_fn((120, 3), |(i, j)| (0..3).map(|c| q[(j, c)] * x[[i, c]]).sum());
        let a = classification_error(&x, &labels, 2).unwrap();
        let b = classification_error(&xq, &labels, 2).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn overlap_decreases_with_separation(d1 in 0.0f64..3.0, extra in 0.01f64..3.0, s in 0.2f64..2.0) {
        let near = latent_overlap(&[(0.0, s), (d1, s)]).unwrap();
        let far = latent_overlap(&[(0.0, s), (d1 + extra, s)]).unwrap();
        prop_assert!(near > far);
        prop_assert!(far > 0.0 && near <= 1.0);
    }

    #[test]
    fn rotation_error_absorbs_global_rotation(seed in 0u64..1000, angle in 0.0f64..3.0) {
        let truth = random_rotations(25, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 77);
        let pred: Vec<_> = truth
            .iter()
            .map(|r| r * axis_angle([1.0, 0.0, 0.0], 0.1 * normal(&mut rng)))
            .collect();
        let g = axis_angle([0.2, 0.5, -1.0], angle);
        let e0 = rotation_error_median(&pred, &truth, &align_poses_global(&pred, &truth).unwrap());
        for moved in [
            pred.iter().map(|r| g * r).collect::<Vec<_>>(),
            pred.iter().map(|r| r * g).collect::<Vec<_>>(),
        ] {
            let e1 = rotation_error_median(&moved, &truth, &align_poses_global(&moved, &truth).unwrap());
            prop_assert!((e0 - e1).abs() < 1e-6, "{e0} {e1}");
        }
    }

    #[test]
    fn spearman_invariant_to_monotone_relabel(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<f64> = (0..60).map(|i| (i % 6) as f64).collect();
        let x = Array2::from_shape_fn((60, 2), |(i, j)| {
            let g: f64 = StandardNormal.sample(&mut rng);
            labels[i] * [1.0, 0.4][j] + 0.5 * g
        });
        let relabelled: Vec<f64> = labels.iter().map(|l| (l * 0.7).exp() - 3.0).collect();
        let a = spearman_pc1(&x, &labels).unwrap();
        let b = spearman_pc1(&x, &relabelled).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }
}
