use nalgebra::DVector;
use plrnn_dyn::manifold::*;
use plrnn_dyn::scyfi::solve_cycle_candidate;
use plrnn_dyn::{Map2D, PlModel, RegionCode};

fn chaotic() -> PlModel<f64> {
    PlModel::general_2d(Map2D { a_l: -1.77, a_r: 1.5, b_l: -0.9, b_r: -0.75, c: 0.6, d: 0.15, h1: -0.7, h2: -0.4 })
}

fn left() -> RegionCode {
    "0".parse().unwrap()
}

fn ends(s: &ManifoldSegment<f64>) -> [DVector<f64>; 2] {
    [s.point_at(&s.lo), s.point_at(&s.hi)]
}

#[test]
fn chaotic_stable_folds_on_consecutive_segments() {
    let m = chaotic();
    let cyc = solve_cycle_candidate(&m, &[left()]).unwrap();
    let mut cfg = ManifoldConfig::new(vec![-5.0, -5.0], vec![5.0, 5.0]);
    cfg.max_iters = 12;
    cfg.local_extent = Some(1e-4);
    let man = build_manifold(&m, &cyc, ManifoldSide::Stable, &cfg).unwrap();
    let fold = DVector::from_vec(vec![0.0, 0.59343]);
    let pre = DVector::from_vec(vec![-1.78892, -4.11065]);
    let near = |s: &ManifoldSegment<f64>, p: &DVector<f64>| ends(s).iter().any(|e| (e - p).norm() < 5e-4);
    let found = man.segments.iter().any(|s| {
        near(s, &fold) && man.segments.iter().any(|c| c.parent == Some(s.id) && near(c, &pre))
    });
    assert!(found);
}

#[test]
fn chaotic_fallback_agrees_with_primary() {
    let m = chaotic();
    let cyc = solve_cycle_candidate(&m, &[left()]).unwrap();
    let mut cfg = ManifoldConfig::new(vec![-5.0, -5.0], vec![5.0, 5.0]);
    cfg.max_iters = 5;
    cfg.samples = 2000;
    cfg.local_extent = Some(1e-4 * (1.0 + cyc.points[0].norm()));
    let prim = build_manifold(&m, &cyc, ManifoldSide::Stable, &cfg).unwrap();
    let fb = build_manifold_fallback(&m, &cyc, ManifoldSide::Stable, 4000, 5, 0, &cfg).unwrap();
    let a: Vec<_> = prim.points().cloned().collect();
    let b: Vec<_> = fb.points().cloned().collect();
    let h = hausdorff(&a, &b);
    println!("segments {} {} pts {} {} h {h} diags {:?}", prim.segments.len(), fb.segments.len(), a.len(), b.len(), fb.diagnostics);
    assert!(h < 1e-2);
}
