//! Backward steps of piecewise-affine maps.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{PlModel, RegionCode};
use crate::scalar::Real;

pub const DEFAULT_BITFLIP_DEPTH: usize = 3;
pub const POOL_SIZE: usize = 64;
/// Relative residual accepted as a self-consistent predecessor.
pub const SELF_CONSISTENCY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    InitialRegion,
    CandidateRegion,
    PreviousPool,
    Bitflip(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktrackResult<T: Real> {
    pub predecessor: DVector<T>,
    pub region: RegionCode,
    pub strategy: Strategy,
    pub residual: T,
    /// Set when some Hamming-1 neighbour of `region` has a Jacobian
    /// determinant of different sign (or zero), so the preimage may not be
    /// unique.
    pub sign_condition_violated: bool,
}

fn singular_scale<T: Real>(j: &DMatrix<T>) -> T {
    let n = j.nrows() as i32;
    let m = j.iter().fold(T::one(), |a, x| a.max(x.abs()));
    T::lit(1e-12) * m.powi(n)
}

/// Solves `J_r z = z_next - b_r`. The result is a candidate predecessor and
/// need not lie in `region`.
pub fn invert_in_region<T: Real>(model: &PlModel<T>, region: &RegionCode, z_next: &DVector<T>) -> Result<DVector<T>> {
    if z_next.len() != model.dim() {
        return Err(Error::Dimension { expected: model.dim(), got: z_next.len() });
    }
    let piece = model.affine_piece(region)?;
    let lu = piece.jacobian.clone().lu();
    if lu.determinant().abs() < singular_scale(&piece.jacobian) {
        return Err(Error::SingularJacobian(region.clone()));
    }
    lu.solve(&(z_next - &piece.offset)).ok_or_else(|| Error::SingularJacobian(region.clone()))
}

/// Search state carried between consecutive backward steps: the pool of
/// recently successful regions and an optional trace of every region tried.
#[derive(Debug, Clone)]
pub struct BacktrackContext {
    pub max_bitflip_depth: usize,
    pool: VecDeque<RegionCode>,
    pub record_trace: bool,
    pub trace: Vec<(Strategy, RegionCode)>,
}

impl Default for BacktrackContext {
    fn default() -> Self {
        Self::new(DEFAULT_BITFLIP_DEPTH)
    }
}

impl BacktrackContext {
    pub fn new(max_bitflip_depth: usize) -> Self {
        BacktrackContext { max_bitflip_depth, pool: VecDeque::new(), record_trace: false, trace: Vec::new() }
    }

    pub fn pool(&self) -> impl Iterator<Item = &RegionCode> {
        self.pool.iter()
    }

    fn remember(&mut self, r: &RegionCode) {
        if let Some(pos) = self.pool.iter().position(|x| x == r) {
            self.pool.remove(pos);
        }
        self.pool.push_front(r.clone());
        self.pool.truncate(POOL_SIZE);
    }
}

struct Attempt<T: Real> {
    candidate: Option<DVector<T>>,
    accepted: Option<(DVector<T>, RegionCode, T)>,
}

fn attempt<T: Real>(model: &PlModel<T>, region: &RegionCode, z_next: &DVector<T>) -> Attempt<T> {
    let Ok(cand) = invert_in_region(model, region, z_next) else {
        return Attempt { candidate: None, accepted: None };
    };
    let Ok(img) = model.step(&cand) else {
        return Attempt { candidate: None, accepted: None };
    };
    let residual = (img - z_next).norm() / (T::one() + z_next.norm());
    let ok = residual <= T::lit(SELF_CONSISTENCY_TOL) && cand.iter().all(|x| x.is_finite_val());
    let accepted = if ok { model.region_of(&cand).ok().map(|r| (cand.clone(), r, residual)) } else { None };
    Attempt { candidate: Some(cand), accepted }
}

fn combinations(items: &[usize], k: usize) -> Vec<Vec<usize>> {
    fn rec(items: &[usize], k: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..items.len() {
            cur.push(items[i]);
            rec(items, k, i + 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(items, k, 0, &mut Vec::new(), &mut out);
    out
}

fn det_violation<T: Real>(model: &PlModel<T>, region: &RegionCode) -> bool {
    let Ok(j) = model.jacobian(region) else { return false };
    let d0 = j.determinant();
    model.free_bits().iter().any(|&b| {
        let nb = region.flipped(&[b]);
        match model.jacobian(&nb) {
            Ok(jn) => {
                let d1 = jn.determinant();
                d0 == T::zero() || d1 == T::zero() || (d0 > T::zero()) != (d1 > T::zero())
            }
            Err(_) => false,
        }
    })
}

/// One self-consistent backward step.
///
/// Regions are tried in order: the region of `z_next` itself, the region
/// of the first candidate, the pool of recently used regions (most recent
/// first), then bit flips of the candidate region by increasing Hamming
/// distance up to `ctx.max_bitflip_depth`.
pub fn backtrack<T: Real>(model: &PlModel<T>, z_next: &DVector<T>, ctx: &mut BacktrackContext) -> Result<BacktrackResult<T>> {
    let initial = model.region_of(z_next)?;
    let mut tried: Vec<RegionCode> = Vec::new();
    let finish = |ctx: &mut BacktrackContext, acc: (DVector<T>, RegionCode, T), strategy: Strategy| {
        ctx.remember(&acc.1);
        let violated = det_violation(model, &acc.1);
        BacktrackResult { predecessor: acc.0, region: acc.1, strategy, residual: acc.2, sign_condition_violated: violated }
    };

    let try_region = |ctx: &mut BacktrackContext, tried: &mut Vec<RegionCode>, r: &RegionCode, s: Strategy| -> Option<Attempt<T>> {
        if tried.contains(r) {
            return None;
        }
        tried.push(r.clone());
        if ctx.record_trace {
            ctx.trace.push((s, r.clone()));
        }
        Some(attempt(model, r, z_next))
    };

    let first = try_region(ctx, &mut tried, &initial, Strategy::InitialRegion).expect("first attempt");
    if let Some(acc) = first.accepted {
        return Ok(finish(ctx, acc, Strategy::InitialRegion));
    }
    let mut base = initial.clone();
    if let Some(c) = first.candidate.as_ref().and_then(|c| model.region_of(c).ok()) {
        base = c.clone();
        if let Some(a) = try_region(ctx, &mut tried, &c, Strategy::CandidateRegion) {
            if let Some(acc) = a.accepted {
                return Ok(finish(ctx, acc, Strategy::CandidateRegion));
            }
        }
    }
    let pool: Vec<RegionCode> = ctx.pool.iter().cloned().collect();
    for r in &pool {
        if let Some(a) = try_region(ctx, &mut tried, r, Strategy::PreviousPool) {
            if let Some(acc) = a.accepted {
                return Ok(finish(ctx, acc, Strategy::PreviousPool));
            }
        }
    }
    let free = model.free_bits();
    for depth in 1..=ctx.max_bitflip_depth.min(free.len()) {
        for bits in combinations(&free, depth) {
            let r = base.flipped(&bits);
            if let Some(a) = try_region(ctx, &mut tried, &r, Strategy::Bitflip(depth)) {
                if let Some(acc) = a.accepted {
                    return Ok(finish(ctx, acc, Strategy::Bitflip(depth)));
                }
            }
        }
    }
    Err(Error::PredecessorNotFound { depth: ctx.max_bitflip_depth })
}

/// Backward trajectory of up to `steps` predecessors. Stops early (and
/// reports the error) when no self-consistent predecessor exists.
pub fn backtrack_trajectory<T: Real>(
    model: &PlModel<T>,
    z_end: &DVector<T>,
    steps: usize,
    ctx: &mut BacktrackContext,
) -> (Vec<DVector<T>>, Option<Error>) {
    let mut out = Vec::with_capacity(steps);
    let mut z = z_end.clone();
    for _ in 0..steps {
        match backtrack(model, &z, ctx) {
            Ok(r) => {
                z = r.predecessor;
                out.push(z.clone());
            }
            Err(e) => return (out, Some(e)),
        }
    }
    (out, None)
}

/// `λ · mean_i max(0, -det J_i)` over the given regions.
pub fn invertibility_regularizer<T: Real>(model: &PlModel<T>, regions: &[RegionCode], lambda: T) -> Result<T> {
    if regions.is_empty() {
        return Err(Error::InvalidArgument("empty region set".into()));
    }
    if lambda < T::zero() {
        return Err(Error::InvalidArgument("lambda must be non-negative".into()));
    }
    let mut sum = T::zero();
    for r in regions {
        let d = model.jacobian(r)?.determinant();
        sum += (-d).max(T::zero());
    }
    Ok(lambda * sum / T::from_usize_lossy(regions.len()))
}

/// Subgradient of the regularizer with respect to each region's Jacobian:
/// `-(λ/n) cof(J_i)` where the hinge is active, zero elsewhere.
pub fn invertibility_regularizer_subgradient<T: Real>(
    model: &PlModel<T>,
    regions: &[RegionCode],
    lambda: T,
) -> Result<Vec<DMatrix<T>>> {
    if regions.is_empty() {
        return Err(Error::InvalidArgument("empty region set".into()));
    }
    let scale = lambda / T::from_usize_lossy(regions.len());
    regions
        .iter()
        .map(|r| {
            let j = model.jacobian(r)?;
            let n = j.nrows();
            let d = j.determinant();
            if d >= T::zero() {
                return Ok(DMatrix::zeros(n, n));
            }
            let cof = DMatrix::from_fn(n, n, |i, k| {
                let minor = j.clone().remove_row(i).remove_column(k);
                let s = if (i + k) % 2 == 0 { T::one() } else { -T::one() };
                s * if n == 1 { T::one() } else { minor.determinant() }
            });
            Ok(cof * (-scale))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct OffendingPair<T: Real> {
    pub a: RegionCode,
    pub b: RegionCode,
    pub det_a: T,
    pub det_b: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignConditionReport<T: Real> {
    pub holds: bool,
    pub offending: Vec<OffendingPair<T>>,
}

/// Checks that Jacobians of all neighbouring (Hamming distance 1) regions
/// in `regions` have determinants of the same, nonzero sign.
pub fn sign_condition<T: Real>(model: &PlModel<T>, regions: &[RegionCode]) -> Result<SignConditionReport<T>> {
    let dets = regions.iter().map(|r| model.jacobian(r).map(|j| j.determinant())).collect::<Result<Vec<T>>>()?;
    let mut offending = Vec::new();
    if regions.len() == 1 && dets[0] == T::zero() {
        offending.push(OffendingPair { a: regions[0].clone(), b: regions[0].clone(), det_a: dets[0], det_b: dets[0] });
    }
    for i in 0..regions.len() {
        for k in (i + 1)..regions.len() {
            if regions[i].hamming(&regions[k]) != 1 {
                continue;
            }
            let (da, db) = (dets[i], dets[k]);
            if da == T::zero() || db == T::zero() || (da > T::zero()) != (db > T::zero()) {
                offending.push(OffendingPair { a: regions[i].clone(), b: regions[k].clone(), det_a: da, det_b: db });
            }
        }
    }
    Ok(SignConditionReport { holds: offending.is_empty(), offending })
}
