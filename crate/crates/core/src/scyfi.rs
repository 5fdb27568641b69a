//! Fixed-point and cycle search by solving per-region-sequence linear
//! systems with iterative region corrections.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::eigen::{eigen_structure, EigClass, EigenStructure};
use crate::error::{Error, Result};
use crate::model::{PlModel, RegionCode};
use crate::scalar::Real;

pub const DEDUP_TOL: f64 = 1e-6;
pub const DISTINCT_TOL: f64 = 1e-7;
pub const RESIDUAL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stability {
    Attractor,
    Repeller,
    Saddle,
}

/// A period-m orbit together with its region sequence and the eigen
/// structure of the cycle Jacobian `J_{m-1} ... J_0`.
#[derive(Debug, Clone, PartialEq)]
pub struct CyclePoint<T: Real> {
    pub points: Vec<DVector<T>>,
    pub regions: Vec<RegionCode>,
    pub jacobian: DMatrix<T>,
    pub eigen: EigenStructure<T>,
    /// `None` when some eigenvalue is marginal.
    pub stability: Option<Stability>,
    pub is_virtual: bool,
}

impl<T: Real> CyclePoint<T> {
    pub fn period(&self) -> usize {
        self.points.len()
    }

    pub fn is_saddle(&self) -> bool {
        self.stability == Some(Stability::Saddle)
    }

    /// Smallest distance from `z` to any point of the orbit.
    pub fn distance_to(&self, z: &DVector<T>) -> T {
        self.points.iter().map(|p| (p - z).norm()).fold(T::max_value().unwrap(), |a, b| a.min(b))
    }

    /// Same orbit started at point `k`.
    pub fn rotated(&self, model: &PlModel<T>, k: usize) -> Result<CyclePoint<T>> {
        let m = self.period();
        let regions: Vec<RegionCode> = (0..m).map(|i| self.regions[(i + k) % m].clone()).collect();
        solve_cycle_candidate(model, &regions)
    }
}

pub fn classify_eigen<T: Real>(es: &EigenStructure<T>) -> Result<Stability> {
    if let Some(k) = es.classes.iter().position(|c| *c == EigClass::Marginal) {
        return Err(Error::Marginal(crate::scalar::Real::as_f64(nalgebra::ComplexField::modulus(es.eigenvalues[k]))));
    }
    let s = es.count(EigClass::Stable);
    let u = es.count(EigClass::Unstable);
    Ok(if u == 0 {
        Stability::Attractor
    } else if s == 0 {
        Stability::Repeller
    } else {
        Stability::Saddle
    })
}

pub fn classify<T: Real>(cycle: &CyclePoint<T>) -> Result<Stability> {
    classify_eigen(&cycle.eigen)
}

/// Unique fixed point of the composed affine map for the region sequence.
pub fn solve_cycle_candidate<T: Real>(model: &PlModel<T>, regions: &[RegionCode]) -> Result<CyclePoint<T>> {
    if regions.is_empty() {
        return Err(Error::InvalidArgument("empty region sequence".into()));
    }
    let n = model.dim();
    let pieces = regions.iter().map(|r| model.affine_piece(r)).collect::<Result<Vec<_>>>()?;
    let mut a = DMatrix::<T>::identity(n, n);
    let mut c = DVector::<T>::zeros(n);
    for p in &pieces {
        a = &p.jacobian * a;
        c = &p.jacobian * c + &p.offset;
    }
    let lhs = DMatrix::<T>::identity(n, n) - &a;
    let lu = lhs.clone().lu();
    let scale = lhs.iter().fold(T::one(), |m, x| m.max(x.abs()));
    if lu.determinant().abs() <= T::lit(1e-12) * scale.powi(n as i32) {
        return Err(Error::NoCandidate);
    }
    let z0 = lu.solve(&c).ok_or(Error::NoCandidate)?;
    let mut points = Vec::with_capacity(pieces.len());
    let mut z = z0;
    for p in &pieces {
        points.push(z.clone());
        z = p.apply(&z);
    }
    let is_virtual = points.iter().zip(regions).any(|(p, r)| model.region_of(p).map(|q| &q != r).unwrap_or(true));
    let eigen = eigen_structure(&a)?;
    let stability = classify_eigen(&eigen).ok();
    Ok(CyclePoint { points, regions: regions.to_vec(), jacobian: a, eigen, stability, is_virtual })
}

fn min_pairwise<T: Real>(pts: &[DVector<T>]) -> T {
    let mut best = T::max_value().unwrap();
    for i in 0..pts.len() {
        for k in (i + 1)..pts.len() {
            best = best.min((&pts[i] - &pts[k]).norm());
        }
    }
    best
}

fn residual_ok<T: Real>(model: &PlModel<T>, c: &CyclePoint<T>) -> bool {
    let mut z = c.points[0].clone();
    for _ in 0..c.period() {
        match model.step(&z) {
            Ok(n) => z = n,
            Err(_) => return false,
        }
    }
    (z - &c.points[0]).norm() <= T::lit(RESIDUAL_TOL) * (T::one() + c.points[0].norm())
}

/// Whether two cycles are the same orbit up to a cyclic shift.
pub fn same_cycle<T: Real>(a: &CyclePoint<T>, b: &CyclePoint<T>, tol: T) -> bool {
    let m = a.period();
    if m != b.period() {
        return false;
    }
    (0..m).any(|s| (0..m).all(|i| (&a.points[i] - &b.points[(i + s) % m]).amax() < tol))
}

fn canonical<T: Real>(model: &PlModel<T>, c: CyclePoint<T>) -> CyclePoint<T> {
    let m = c.period();
    let key = |k: usize| -> (Vec<RegionCode>, Vec<f64>) {
        let regs = (0..m).map(|i| c.regions[(i + k) % m].clone()).collect();
        (regs, c.points[k].iter().map(|x| x.as_f64()).collect())
    };
    let best = (0..m)
        .min_by(|&x, &y| key(x).partial_cmp(&key(y)).unwrap_or(std::cmp::Ordering::Equal))
        .unwrap_or(0);
    if best == 0 {
        return c;
    }
    c.rotated(model, best).unwrap_or(c)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScyfiConfig {
    pub max_period: usize,
    /// Maximum number of candidate linear solves.
    pub budget: usize,
    pub seed: u64,
    /// Region-correction iterations per restart.
    pub max_corrections: usize,
    /// Enumerate all sequences of a period when there are at most this many.
    pub exhaustive_cap: usize,
    pub pilot_steps: usize,
}

impl Default for ScyfiConfig {
    fn default() -> Self {
        ScyfiConfig { max_period: 5, budget: 100_000, seed: 0, max_corrections: 50, exhaustive_cap: 4096, pilot_steps: 2000 }
    }
}

struct Search<'a, T: Real> {
    model: &'a PlModel<T>,
    budget: usize,
    used: usize,
    found: Vec<CyclePoint<T>>,
}

impl<T: Real> Search<'_, T> {
    fn exhausted(&self) -> bool {
        self.used >= self.budget
    }

    fn solve(&mut self, seq: &[RegionCode]) -> Option<CyclePoint<T>> {
        if self.exhausted() {
            return None;
        }
        self.used += 1;
        solve_cycle_candidate(self.model, seq).ok()
    }

    fn accept(&mut self, c: CyclePoint<T>) {
        if c.is_virtual || !c.points.iter().all(|p| p.iter().all(|x| x.is_finite_val())) {
            return;
        }
        if c.period() > 1 && min_pairwise(&c.points) <= T::lit(DISTINCT_TOL) {
            return;
        }
        if !residual_ok(self.model, &c) {
            return;
        }
        if self.found.iter().any(|f| same_cycle(f, &c, T::lit(DEDUP_TOL))) {
            return;
        }
        let c = canonical(self.model, c);
        self.found.push(c);
    }

    /// Solve, then repeatedly replace the sequence by the regions the
    /// solution actually visits until it is consistent or repeats.
    fn corrected(&mut self, start: Vec<RegionCode>, max_corrections: usize) {
        let mut seq = start;
        let mut seen: Vec<Vec<RegionCode>> = Vec::new();
        for _ in 0..=max_corrections {
            let Some(c) = self.solve(&seq) else { return };
            if !c.is_virtual {
                self.accept(c);
                return;
            }
            seen.push(seq.clone());
            let next: Option<Vec<RegionCode>> = c.points.iter().map(|p| self.model.region_of(p).ok()).collect();
            match next {
                Some(n) if !seen.contains(&n) => seq = n,
                _ => return,
            }
        }
    }
}

fn random_code<T: Real>(model: &PlModel<T>, rng: &mut ChaCha8Rng) -> RegionCode {
    let mut c = match model {
        PlModel::AlmostLinear { .. } => RegionCode::ones(model.code_len()),
        _ => RegionCode::zeros(model.code_len()),
    };
    for b in model.free_bits() {
        c.0[b] = rng.random::<bool>();
    }
    c
}

fn pilot<T: Real>(model: &PlModel<T>, steps: usize, rng: &mut ChaCha8Rng) -> Vec<RegionCode> {
    let n = model.dim();
    let mut z = DVector::from_fn(n, |_, _| T::lit(rng.random_range(-1.0..1.0)));
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        let Ok(r) = model.region_of(&z) else { break };
        out.push(r);
        match model.step(&z) {
            Ok(next) if next.norm() < T::lit(1e8) => z = next,
            _ => break,
        }
    }
    out
}

/// Deduplicated non-virtual cycles of period `1..=max_period`, ordered by
/// (period, region sequence).
pub fn find_cycles_with<T: Real>(model: &PlModel<T>, cfg: &ScyfiConfig) -> Vec<CyclePoint<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut search = Search { model, budget: cfg.budget, used: 0, found: Vec::new() };
    let regions = model.all_regions(cfg.exhaustive_cap);
    let pilot_codes = pilot(model, cfg.pilot_steps, &mut rng);
    let mut pilot_set: Vec<RegionCode> = pilot_codes.clone();
    pilot_set.sort();
    pilot_set.dedup();

    for period in 1..=cfg.max_period {
        if search.exhausted() {
            break;
        }
        let total = regions.as_ref().and_then(|r| (r.len() as u128).checked_pow(period as u32));
        if let (Some(regs), Some(total)) = (regions.as_ref(), total) {
            if total <= cfg.exhaustive_cap as u128 {
                for idx in 0..total as usize {
                    let mut rest = idx;
                    let mut seq = vec![RegionCode::default(); period];
                    for slot in (0..period).rev() {
                        seq[slot] = regs[rest % regs.len()].clone();
                        rest /= regs.len();
                    }
                    if let Some(c) = search.solve(&seq) {
                        search.accept(c);
                    }
                }
                continue;
            }
        }
        // Windows of the pilot trajectory first.
        let mut starts: Vec<Vec<RegionCode>> = Vec::new();
        for w in pilot_codes.windows(period).step_by(period.max(1)) {
            let w = w.to_vec();
            if !starts.contains(&w) {
                starts.push(w);
            }
            if starts.len() >= 64 {
                break;
            }
        }
        for s in starts {
            search.corrected(s, cfg.max_corrections);
        }
        let per_period = (cfg.budget / cfg.max_period).max(1);
        let stop_at = (search.used + per_period).min(cfg.budget);
        let mut k = 0usize;
        while search.used < stop_at {
            let from_pilot = !pilot_set.is_empty() && k % 2 == 0;
            let seq: Vec<RegionCode> = (0..period)
                .map(|_| if from_pilot { pilot_set[rng.random_range(0..pilot_set.len())].clone() } else { random_code(model, &mut rng) })
                .collect();
            search.corrected(seq, cfg.max_corrections);
            k += 1;
        }
    }
    let mut found = search.found;
    found.sort_by(|a, b| {
        (a.period(), &a.regions)
            .cmp(&(b.period(), &b.regions))
            .then_with(|| {
                let ka: Vec<f64> = a.points[0].iter().map(|x| x.as_f64()).collect();
                let kb: Vec<f64> = b.points[0].iter().map(|x| x.as_f64()).collect();
                ka.partial_cmp(&kb).unwrap_or(std::cmp::Ordering::Equal)
            })
    });
    log::debug!("cycle search used {} of {} solves, found {}", search.used, cfg.budget, found.len());
    found
}

pub fn find_cycles<T: Real>(model: &PlModel<T>, max_period: usize, budget: usize, seed: u64) -> Vec<CyclePoint<T>> {
    find_cycles_with(model, &ScyfiConfig { max_period, budget, seed, ..ScyfiConfig::default() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Map2D;

    #[test]
    fn constant_map_fixed_point() {
        let h = DVector::from_row_slice(&[0.3, -0.2]);
        let m = PlModel::<f64>::standard(DMatrix::zeros(2, 2), DMatrix::zeros(2, 2), h.clone()).unwrap();
        let c = solve_cycle_candidate(&m, &[RegionCode::zeros(2)]).unwrap();
        assert!((&c.points[0] - &h).norm() < 1e-15);
        assert!(c.is_virtual);
        let c = solve_cycle_candidate(&m, &[RegionCode(vec![true, false])]).unwrap();
        assert!(!c.is_virtual);
        assert_eq!(c.stability, Some(Stability::Attractor));
    }

    #[test]
    fn chaotic_saddle() {
        let m = PlModel::<f64>::general_2d(Map2D { a_l: -1.77, a_r: 1.5, b_l: -0.9, b_r: -0.75, c: 0.6, d: 0.15, h1: -0.7, h2: -0.4 });
        let c = solve_cycle_candidate(&m, &[RegionCode(vec![false])]).unwrap();
        assert!(!c.is_virtual);
        assert!((c.points[0][0] + 0.28848).abs() < 5e-5 && (c.points[0][1] + 0.16514).abs() < 5e-5);
        assert_eq!(classify(&c).unwrap(), Stability::Saddle);
    }

    #[test]
    fn marginal_rejected() {
        let m = PlModel::<f64>::standard(DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 0.5]), DMatrix::zeros(2, 2), DVector::zeros(2)).unwrap();
        let c = solve_cycle_candidate(&m, &[RegionCode::zeros(2)]).unwrap();
        assert!(c.stability.is_none());
        assert!(matches!(classify(&c), Err(Error::Marginal(_))));
    }

    #[test]
    fn deterministic() {
        let m = PlModel::general_2d(Map2D { a_l: -1.67, a_r: 1.5, b_l: -0.9, b_r: -1.58, c: 0.6, d: 0.1, h1: -0.13, h2: -0.1 });
        let cfg = ScyfiConfig { max_period: 5, exhaustive_cap: 4, budget: 3000, ..ScyfiConfig::default() };
        let a = find_cycles_with(&m, &cfg);
        let b = find_cycles_with(&m, &cfg);
        assert_eq!(a, b);
        assert!(a.iter().any(|c| c.period() == 5));
    }
}
