use nalgebra::{DMatrix, DVector};

use plrnn_dyn::dynamics::{basin_grid, bifurcation_sweep, simulate, Attractor, BasinLabel, BasinSpec, InitPolicy, SweepSpec};
use plrnn_dyn::manifold::{build_manifold, build_manifold_fallback, ManifoldConfig, ManifoldSide, SegmentKind};
use plrnn_dyn::pl2d::{homoclinic_analysis, inverse_piece, HomoclinicVerdict, Side};
use plrnn_dyn::scyfi::{find_cycles, solve_cycle_candidate, Stability};
use plrnn_dyn::{Map2D, PlModel, RegionCode};

const TOL: f64 = 5e-4;

fn chaotic() -> Map2D<f64> {
    Map2D { a_l: -1.77, a_r: 1.5, b_l: -0.9, b_r: -0.75, c: 0.6, d: 0.15, h1: -0.7, h2: -0.4 }
}

fn contracting() -> Map2D<f64> {
    Map2D { a_l: 0.5, a_r: 0.4, b_l: -0.1, b_r: -0.1, c: 0.1, d: 0.2, h1: -0.3, h2: 0.1 }
}

fn close(got: [f64; 2], want: [f64; 2], tol: f64) -> bool {
    (got[0] - want[0]).abs() < tol && (got[1] - want[1]).abs() < tol
}

#[test]
fn chaotic_fold_points_and_case_ii() {
    let m = chaotic();
    let r = homoclinic_analysis(&m, Side::Left, 50).unwrap();
    assert!(close(r.saddle, [-0.28848, -0.16514], TOL));
    assert!(close(r.p0, [0.0, -0.000582], TOL));
    assert!(close(r.p1, [-0.70035, -0.40009], TOL));
    assert!(close(r.p2, [0.29957, 0.1703], TOL));
    // P1 and P2 are images of P0 and P1
    let (x1, y1) = m.apply(r.p0[0], r.p0[1]);
    assert!(close(r.p1, [x1, y1], 1e-12));
    let (x2, y2) = m.apply(x1, y1);
    assert!(close(r.p2, [x2, y2], 1e-12));
    let c2 = r.case_ii.expect("case II evaluated");
    assert!(close(c2.p0_tilde, [0.0, 0.59343], TOL));
    assert!((c2.phi + 1.7889).abs() < TOL);
    assert!(close(c2.p_minus1_tilde, [-1.7889, -4.1106], TOL));
    // P̃_{-1} is the left preimage of P̃0
    let pre = inverse_piece(&m, Side::Left, c2.p0_tilde[0], c2.p0_tilde[1]).unwrap();
    assert!(close(c2.p_minus1_tilde, [pre.0, pre.1], 1e-12));
    assert!((c2.product + 1.0269).abs() < TOL);
    assert!((c2.side_product.unwrap() - 0.51606).abs() < TOL);
    assert!(c2.certified);
    assert_eq!(r.verdict, HomoclinicVerdict::IntersectionCaseI);
}

#[test]
fn chaotic_recursive_test_also_finds_an_intersection() {
    let r = homoclinic_analysis(&chaotic(), Side::Left, 50).unwrap();
    let rec = r.recursive.expect("recursive evaluated");
    assert!(rec.certified);
    assert!(rec.product.unwrap() < 0.0);
}

#[test]
fn sweep_columns_settle_on_fixed_points() {
    let model = PlModel::general_2d(contracting());
    let spec = SweepSpec {
        param: "h1".into(),
        lo: -0.5,
        hi: 0.5,
        count: 11,
        transient: 500,
        record: 20,
        init: InitPolicy::Fixed(vec![0.3, -0.2]),
        seed: 0,
    };
    let cols = bifurcation_sweep(&model, &spec).unwrap();
    assert_eq!(cols.len(), 11);
    for col in &cols {
        let mut m = model.clone();
        m.set_param("h1", col.value).unwrap();
        assert_eq!(col.period, Some(1));
        assert!(col.largest_le.unwrap() < 0.0);
        for s in &col.samples {
            assert!((m.step(s).unwrap() - s).norm() < 1e-9);
        }
    }
}

#[test]
fn single_attractor_owns_the_whole_grid() {
    let model = PlModel::general_2d(contracting());
    let cycles = find_cycles(&model, 2, 10_000, 0);
    let att: Vec<_> = cycles.into_iter().filter(|c| c.stability == Some(Stability::Attractor) && !c.is_virtual).collect();
    assert_eq!(att.len(), 1);
    let spec = BasinSpec::new([-3.0, -3.0], [3.0, 3.0], [40, 40], 500);
    let grid = basin_grid(&model, &[Attractor::Cycle(att[0].clone())], &spec).unwrap();
    assert_eq!(grid.distinct_labels(), vec![BasinLabel::Attractor(0)]);
    assert!(grid.boundary_cells().is_empty());
}

#[test]
fn fallback_without_seeds_is_empty() {
    let model = PlModel::general_2d(chaotic());
    let cyc = solve_cycle_candidate(&model, &[RegionCode(vec![false])]).unwrap();
    let cfg = ManifoldConfig::new(vec![-5.0, -5.0], vec![5.0, 5.0]);
    let man = build_manifold_fallback(&model, &cyc, ManifoldSide::Stable, 0, 5, 0, &cfg).unwrap();
    assert_eq!(man.point_count(), 0);
    assert!(man.segments.is_empty());
}

#[test]
fn fallback_single_region_gives_one_segment() {
    // z' = diag(0.5, 2) z + (0.5, -1): saddle at (1, 1), stable manifold y = 1,
    // all inside the positive quadrant.
    let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 2.0]);
    let model = PlModel::standard(a, DMatrix::zeros(2, 2), DVector::from_vec(vec![0.5, -1.0])).unwrap();
    let cyc = solve_cycle_candidate(&model, &[RegionCode::ones(2)]).unwrap();
    let cfg = ManifoldConfig::new(vec![0.5, 0.5], vec![1.5, 1.5]);
    let man = build_manifold_fallback::<f64>(&model, &cyc, ManifoldSide::Stable, 300, 4, 3, &cfg).unwrap();
    assert_eq!(man.segments.len(), 1);
    for p in man.points() {
        assert!((p[1] - 1.0_f64).abs() < 1e-12);
    }
}

/// 3-D network whose all-on region has a spiralling stable pair
/// (modulus 0.5, angle 0.7) and one unstable direction (eigenvalue 2),
/// with the saddle at (1, 1, 1).
fn spiral_saddle() -> PlModel<f64> {
    let (r, th) = (0.5f64, 0.7f64);
    let j = DMatrix::from_row_slice(3, 3, &[r * th.cos(), -r * th.sin(), 0.0, r * th.sin(), r * th.cos(), 0.0, 0.0, 0.0, 2.0]);
    let a = DMatrix::from_diagonal(&DVector::from_vec(vec![0.2, 0.2, 0.2]));
    let w = &j - &a;
    let z = DVector::from_vec(vec![1.0, 1.0, 1.0]);
    let h = &z - &j * &z;
    PlModel::standard(a, w, h).unwrap()
}

#[test]
fn complex_stable_pair_gives_a_curved_segment() {
    let model = spiral_saddle();
    let cyc = solve_cycle_candidate(&model, &[RegionCode::ones(3)]).unwrap();
    assert!((cyc.points[0].clone() - DVector::from_vec(vec![1.0, 1.0, 1.0])).norm() < 1e-12);
    let cfg = ManifoldConfig::new(vec![-5.0; 3], vec![5.0; 3]);
    let man = build_manifold(&model, &cyc, ManifoldSide::Stable, &cfg).unwrap();
    let seg = &man.segments[0];
    let SegmentKind::Curved(p) = seg.kind else { panic!("expected a curved segment, got {:?}", seg.kind) };
    assert!((p.modulus - 0.5).abs() < 1e-12);
    assert!((p.angle.abs() - 0.7).abs() < 1e-12);
    // spiral_point follows the true orbit
    let mut z = seg.spiral_point(0.1, -0.05, 0).unwrap();
    for t in 1..10 {
        z = model.step(&z).unwrap();
        let s = seg.spiral_point(0.1, -0.05, t).unwrap();
        assert!((&s - &z).norm() < 1e-12, "t = {t}");
    }
    // every sampled point converges forward onto the saddle
    for p in man.points() {
        let tr = simulate(&model, p, 200, 0).unwrap();
        assert!((tr.states.last().unwrap() - &cyc.points[0]).norm() < 1e-4);
    }
}
