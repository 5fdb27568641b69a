use nalgebra::{DMatrix, DVector};
use num_rational::Ratio;
use proptest::prelude::*;

use plrnn_dyn::inversion::{backtrack, BacktrackContext};
use plrnn_dyn::manifold::{hausdorff, sample_counts};
use plrnn_dyn::metrics::{d_stsp, prediction_error};
use plrnn_dyn::pl2d::{border_collision_h1, degeneracy_scalar, invert_2d, matrix_power_closed_form};
use plrnn_dyn::{orbit_closed_form, Map2D, PlModel, RegionCode};

fn map2d() -> impl Strategy<Value = Map2D<f64>> {
    (-2.0..2.0f64, -2.0..2.0f64, -1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64).prop_map(
        |(a_l, a_r, b_l, b_r, c, d, h1, h2)| Map2D { a_l, a_r, b_l, b_r, c, d, h1, h2 },
    )
}

fn invertible_map2d() -> impl Strategy<Value = Map2D<f64>> {
    map2d().prop_filter("D_L D_R well away from zero", |m| {
        m.det_l().abs() > 0.05 && m.det_r().abs() > 0.05 && m.det_l() * m.det_r() > 0.0
    })
}

fn mat_mul_pow(m: &DMatrix<f64>, n: u32) -> DMatrix<f64> {
    let mut acc = DMatrix::identity(2, 2);
    for _ in 0..n {
        acc = &acc * m;
    }
    acc
}

fn points(n: usize) -> impl Strategy<Value = Vec<DVector<f64>>> {
    prop::collection::vec((-3.0..3.0f64, -3.0..3.0f64), 1..n).prop_map(|v| v.into_iter().map(|(x, y)| DVector::from_vec(vec![x, y])).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn analytic_inverse_undoes_the_map(m in invertible_map2d(), x in -3.0..3.0f64, y in -3.0..3.0f64) {
        let (u, v) = m.apply(x, y);
        let (px, py) = invert_2d(&m, u, v).unwrap();
        let scale = 1.0 + x.abs() + y.abs();
        prop_assert!((px - x).abs() < 1e-8 * scale / m.det_l().abs().min(m.det_r().abs()));
        prop_assert!((py - y).abs() < 1e-8 * scale / m.det_l().abs().min(m.det_r().abs()));
    }

    #[test]
    fn backtrack_agrees_with_the_analytic_inverse(m in invertible_map2d(), x in -3.0..3.0f64, y in -3.0..3.0f64) {
        let model = PlModel::general_2d(m);
        let z = DVector::from_vec(vec![x, y]);
        let next = model.step(&z).unwrap();
        let mut ctx = BacktrackContext::default();
        let b = backtrack(&model, &next, &mut ctx).unwrap();
        let (px, py) = invert_2d(&m, next[0], next[1]).unwrap();
        prop_assert!((b.predecessor[0] - px).abs() < 1e-9 * (1.0 + px.abs()));
        prop_assert!((b.predecessor[1] - py).abs() < 1e-9 * (1.0 + py.abs()));
    }

    #[test]
    fn closed_form_power_matches_multiplication(
        a in -1.2..1.2f64, b in -1.2..1.2f64, c in -1.2..1.2f64, d in -1.2..1.2f64, n in 0u32..20, zero_b in any::<bool>()
    ) {
        let b = if zero_b { 0.0 } else { b };
        let m = DMatrix::from_row_slice(2, 2, &[a, c, b, d]);
        let disc = (a - d).powi(2) + 4.0 * b * c;
        prop_assume!(disc.abs() > 1e-3);
        let want = mat_mul_pow(&m, n);
        let got = matrix_power_closed_form(&m, n).unwrap();
        let err = (&got - &want).norm() / want.norm().max(1e-300);
        prop_assert!(err < 1e-9, "relative error {err}");
    }

    #[test]
    fn affine_orbit_closed_form_matches_iteration(m in map2d(), x in -2.0..2.0f64, y in -2.0..2.0f64, t in 0u32..15) {
        let model = PlModel::general_2d(m);
        let z0 = DVector::from_vec(vec![x, y]);
        let region = RegionCode(vec![false]);
        let piece = model.affine_piece(&region).unwrap();
        let disc = (m.a_l - m.d).powi(2) + 4.0 * m.b_l * m.c;
        prop_assume!(disc.abs() > 1e-3);
        let mut z = z0.clone();
        for _ in 0..t {
            z = piece.apply(&z);
        }
        let got = orbit_closed_form(&piece, &z0, t).unwrap();
        prop_assert!((got - &z).norm() <= 1e-8 * (1.0 + z.norm()));
    }

    #[test]
    fn border_collision_root_is_exact(c in -50i64..50, d in -50i64..50, h2 in -50i64..50) {
        let (c, d, h2) = (Ratio::new(c, 10), Ratio::new(d, 10), Ratio::new(h2, 10));
        match border_collision_h1(c, d, h2) {
            Some(h1) => prop_assert_eq!(degeneracy_scalar(c, d, h1, h2), Ratio::from_integer(0)),
            None => prop_assert_eq!(d, Ratio::from_integer(1)),
        }
    }

    #[test]
    fn d_stsp_is_nonnegative_and_order_free(a in points(60), b in points(60), bins in 1usize..12) {
        let k = d_stsp(&a, &b, bins).unwrap();
        prop_assert!(k >= 0.0 && k.is_finite());
        let mut ra = a.clone();
        ra.reverse();
        let mut rb = b.clone();
        rb.rotate_left(b.len() / 2);
        prop_assert!((d_stsp(&ra, &rb, bins).unwrap() - k).abs() <= 1e-12 * (1.0 + k));
        prop_assert_eq!(d_stsp(&a, &a, bins).unwrap(), 0.0);
    }

    #[test]
    fn prediction_error_vanishes_on_model_orbits(m in map2d(), x in -1.0..1.0f64, y in -1.0..1.0f64, n in 0usize..5) {
        let model = PlModel::general_2d(m);
        let mut traj = vec![DVector::from_vec(vec![x, y])];
        for _ in 0..20 {
            let z = model.step(traj.last().unwrap()).unwrap();
            prop_assume!(z.norm() < 1e6);
            traj.push(z);
        }
        prop_assert_eq!(prediction_error(&traj, &model, n).unwrap(), 0.0);
    }

    #[test]
    fn hausdorff_is_a_symmetric_distance(a in points(40), b in points(40)) {
        let h = hausdorff(&a, &b);
        prop_assert_eq!(h, hausdorff(&b, &a));
        prop_assert_eq!(hausdorff(&a, &a), 0.0);
        // brute-force oracle
        let dir = |p: &[DVector<f64>], q: &[DVector<f64>]| {
            p.iter().map(|x| q.iter().map(|y| (x - y).norm()).fold(f64::INFINITY, f64::min)).fold(0.0, f64::max)
        };
        prop_assert!((h - dir(&a, &b).max(dir(&b, &a))).abs() < 1e-12);
    }

    #[test]
    fn sample_density_follows_inverse_moduli(m1 in 0.05..5.0f64, m2 in 0.05..5.0f64, n in 10usize..2000) {
        let counts = sample_counts(&[m1, m2], 2, n);
        prop_assert_eq!(counts.len(), 2);
        if m1 < m2 {
            prop_assert!(counts[0] >= counts[1]);
        } else if m2 < m1 {
            prop_assert!(counts[1] >= counts[0]);
        }
        // before rounding the product is exactly n
        let s = (n as f64 * m1 * m2).sqrt();
        prop_assert_eq!(counts[0], ((s / m1).round() as usize).max(1));
        prop_assert_eq!(counts[1], ((s / m2).round() as usize).max(1));
    }

    #[test]
    fn region_codes_roundtrip_through_text(index in 0u64..1024, n in 10usize..16) {
        let r = RegionCode::from_index(index, n);
        let back: RegionCode = r.to_string().parse().unwrap();
        prop_assert_eq!(back, r);
    }
}
