//! Stable and unstable manifolds of saddle cycles.
//!
//! The primary construction starts from the linear eigenspace at the cycle
//! point and repeatedly maps sampled segments into the regions they reach
//! (forward for unstable, backward for stable manifolds), fitting a new
//! flat segment to each region slice. The fallback perturbs seeds along
//! the local eigenspace, iterates them, and clusters the resulting point
//! cloud per region.

use std::collections::{BTreeMap, VecDeque};

use hdbscan::{Hdbscan, HdbscanHyperParams};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::eigen::EigClass;
use crate::error::{Error, Result};
use crate::inversion::{backtrack, BacktrackContext, DEFAULT_BITFLIP_DEPTH};
use crate::model::{PlModel, RegionCode};
use crate::scalar::Real;
use crate::scyfi::{CyclePoint, Stability};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ManifoldSide {
    Stable,
    Unstable,
}

impl ManifoldSide {
    fn class(self) -> EigClass {
        match self {
            ManifoldSide::Stable => EigClass::Stable,
            ManifoldSide::Unstable => EigClass::Unstable,
        }
    }
}

/// Parameters of a segment whose local dynamics rotate (complex pair) or
/// shear (Jordan block). Points `anchor + J^t (α u + β w)` of a complex
/// pair are available through [`ManifoldSegment::spiral_point`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvedParam {
    pub modulus: f64,
    pub angle: f64,
    pub jordan: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum SegmentKind {
    LinearHyperplane,
    Curved(CurvedParam),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifoldSegment<T: Real> {
    pub id: usize,
    pub region: RegionCode,
    pub kind: SegmentKind,
    pub anchor: DVector<T>,
    pub basis: Vec<DVector<T>>,
    /// Coordinate range along each basis vector.
    pub lo: Vec<T>,
    pub hi: Vec<T>,
    /// `|λ|` per basis vector for eigen-spanned segments, empty otherwise.
    pub moduli: Vec<T>,
    pub support: Vec<DVector<T>>,
    pub parent: Option<usize>,
    pub depth: usize,
    /// Set when some point could not be propagated further.
    pub truncated: bool,
}

impl<T: Real> ManifoldSegment<T> {
    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn point_at(&self, coords: &[T]) -> DVector<T> {
        let mut p = self.anchor.clone();
        for (v, &c) in self.basis.iter().zip(coords) {
            p += v * c;
        }
        p
    }

    /// Distance from `z` to the affine span of the segment.
    pub fn span_distance(&self, z: &DVector<T>) -> T {
        let (_, res) = self.coordinates(z);
        res
    }

    /// Least-squares coordinates of `z` in the basis and the residual norm.
    pub fn coordinates(&self, z: &DVector<T>) -> (Vec<T>, T) {
        let n = self.anchor.len();
        let k = self.basis.len();
        if k == 0 {
            return (Vec::new(), (z - &self.anchor).norm());
        }
        let b = DMatrix::from_fn(n, k, |i, j| self.basis[j][i]);
        let rhs = z - &self.anchor;
        let svd = b.clone().svd(true, true);
        let c = svd.solve(&rhs, T::lit(1e-14)).unwrap_or_else(|_| DVector::zeros(k));
        let res = (&b * &c - rhs).norm();
        (c.iter().copied().collect(), res)
    }

    /// `anchor + J^t (α u + β w)` for a curved segment spanned by the real
    /// and imaginary parts `u`, `w` of a complex eigenvector with
    /// eigenvalue `r e^{iθ}`.
    pub fn spiral_point(&self, alpha: T, beta: T, t: i32) -> Option<DVector<T>> {
        let SegmentKind::Curved(p) = self.kind else { return None };
        if p.jordan || self.basis.len() < 2 {
            return None;
        }
        let r = T::lit(p.modulus).powi(t);
        let th = T::lit(p.angle) * T::lit(t as f64);
        let (s, c) = th.sin_cos();
        let cu = r * (alpha * c + beta * s);
        let cw = r * (beta * c - alpha * s);
        Some(&self.anchor + &self.basis[0] * cu + &self.basis[1] * cw)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifold<T: Real> {
    pub side: ManifoldSide,
    pub origin: CyclePoint<T>,
    pub segments: Vec<ManifoldSegment<T>>,
    /// Sampled points per segment.
    pub samples: Vec<Vec<DVector<T>>>,
    pub diagnostics: Vec<String>,
}

impl<T: Real> Manifold<T> {
    pub fn points(&self) -> impl Iterator<Item = &DVector<T>> {
        self.samples.iter().flatten()
    }

    pub fn point_count(&self) -> usize {
        self.samples.iter().map(|s| s.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifoldConfig<T: Real> {
    pub lower: Vec<T>,
    pub upper: Vec<T>,
    /// Maximum segment depth.
    pub max_iters: usize,
    pub max_segments: usize,
    /// Target number of sample points per segment.
    pub samples: usize,
    /// Optional cap on the half-width of the local segment.
    pub local_extent: Option<T>,
    pub bitflip_depth: usize,
}

impl<T: Real> ManifoldConfig<T> {
    pub fn new(lower: Vec<T>, upper: Vec<T>) -> Self {
        ManifoldConfig {
            lower,
            upper,
            max_iters: 30,
            max_segments: 500,
            samples: 200,
            local_extent: None,
            bitflip_depth: DEFAULT_BITFLIP_DEPTH,
        }
    }

    pub fn in_box(&self, z: &DVector<T>) -> bool {
        z.iter().zip(self.lower.iter().zip(&self.upper)).all(|(x, (l, u))| *x >= *l && *x <= *u)
    }

    fn diameter(&self) -> T {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| (*u - *l) * (*u - *l))
            .fold(T::zero(), |a, b| a + b)
            .sqrt()
    }

    fn check(&self, n: usize) -> Result<()> {
        if self.lower.len() != n || self.upper.len() != n {
            return Err(Error::Dimension { expected: n, got: self.lower.len().min(self.upper.len()) });
        }
        if self.lower.iter().zip(&self.upper).any(|(l, u)| !(*l < *u)) {
            return Err(Error::InvalidArgument("empty bounding box".into()));
        }
        Ok(())
    }

    /// Interval of `t` with `p + t v` inside the box.
    fn line_clip(&self, p: &DVector<T>, v: &DVector<T>) -> Option<(T, T)> {
        let mut lo = T::lit(f64::NEG_INFINITY);
        let mut hi = T::lit(f64::INFINITY);
        for i in 0..p.len() {
            if v[i] == T::zero() {
                if p[i] < self.lower[i] || p[i] > self.upper[i] {
                    return None;
                }
                continue;
            }
            let a = (self.lower[i] - p[i]) / v[i];
            let b = (self.upper[i] - p[i]) / v[i];
            lo = lo.max(a.min(b));
            hi = hi.min(a.max(b));
        }
        if lo <= hi {
            Some((lo, hi))
        } else {
            None
        }
    }
}

fn check_saddle<T: Real>(cycle: &CyclePoint<T>) -> Result<()> {
    match cycle.stability {
        Some(Stability::Saddle) => Ok(()),
        Some(_) => Err(Error::NotSaddle),
        None => {
            let m = cycle
                .eigen
                .classes
                .iter()
                .zip(cycle.eigen.moduli())
                .find(|(c, _)| **c == EigClass::Marginal)
                .map(|(_, m)| m.as_f64())
                .unwrap_or(1.0);
            Err(Error::Marginal(m))
        }
    }
}

/// Periods checked when extending the local segment.
const LOCAL_PERIODS: usize = 200;

/// Does the orbit of `z` on the local affine dynamics follow the cycle's
/// region sequence until it has collapsed onto the cycle point? Stable
/// points are iterated forward, unstable points backward through the
/// inverse pieces.
///
/// After every period the state is projected back onto the span of
/// `basis` (through the cycle point) to keep rounding errors in the
/// transverse, expanding directions from growing.
fn follows_sequence<T: Real>(
    model: &PlModel<T>,
    cycle: &CyclePoint<T>,
    side: ManifoldSide,
    basis: &[DVector<T>],
    z: &DVector<T>,
) -> bool {
    let m = cycle.period();
    let Ok(pieces) = cycle.regions.iter().map(|r| model.affine_piece(r)).collect::<Result<Vec<_>>>() else {
        return false;
    };
    let p0 = &cycle.points[0];
    let start = (z - p0).norm();
    let mut z = z.clone();
    for _ in 0..LOCAL_PERIODS {
        match side {
            ManifoldSide::Stable => {
                for (r, piece) in cycle.regions.iter().zip(&pieces) {
                    if model.region_of(&z).map(|q| &q != r).unwrap_or(true) {
                        return false;
                    }
                    z = piece.apply(&z);
                }
            }
            ManifoldSide::Unstable => {
                if model.region_of(&z).map(|q| q != cycle.regions[0]).unwrap_or(true) {
                    return false;
                }
                for k in (0..m).rev() {
                    let piece = &pieces[k];
                    let Some(prev) = piece.jacobian.clone().lu().solve(&(&z - &piece.offset)) else { return false };
                    z = prev;
                    if model.region_of(&z).map(|q| q != cycle.regions[k]).unwrap_or(true) {
                        return false;
                    }
                }
            }
        }
        z = project_onto(p0, basis, &z);
        if (&z - p0).norm() <= T::lit(1e-9) * (T::lit(1e-6) + start) {
            return true;
        }
    }
    true
}

/// Orthogonal projection of `z` onto `p0 + span(basis)`.
fn project_onto<T: Real>(p0: &DVector<T>, basis: &[DVector<T>], z: &DVector<T>) -> DVector<T> {
    let n = p0.len();
    let b = DMatrix::from_fn(n, basis.len(), |i, j| basis[j][i]);
    let rhs = z - p0;
    match b.clone().svd(true, true).solve(&rhs, T::lit(1e-14)) {
        Ok(c) => p0 + b * c,
        Err(_) => z.clone(),
    }
}

/// Eigen-spanned real basis of one side, together with the kind and the
/// moduli used for density control.
fn side_basis<T: Real>(cycle: &CyclePoint<T>, side: ManifoldSide) -> Result<(Vec<DVector<T>>, Vec<T>, SegmentKind)> {
    let class = side.class();
    let es = &cycle.eigen;
    let (mut basis, moduli) = es.real_basis(class);
    if basis.is_empty() {
        return Err(Error::EmptySide);
    }
    let jordan = es
        .blocks
        .iter()
        .any(|b| b.size > 1 && es.classes[b.start] == class);
    let complex = es.eigenvalues.iter().zip(&es.classes).find(|(l, c)| **c == class && l.im > T::zero());
    let kind = if jordan || complex.is_some() {
        let (modulus, angle) = complex
            .map(|(l, _)| (nalgebra::ComplexField::modulus(*l).as_f64(), l.im.as_f64().atan2(l.re.as_f64())))
            .unwrap_or((moduli[0].as_f64(), 0.0));
        SegmentKind::Curved(CurvedParam { modulus, angle, jordan })
    } else {
        SegmentKind::LinearHyperplane
    };
    // Normalize; the (Re, Im) pair of a complex vector shares one scale so
    // that the pair still spans an invariant rotation.
    let mut i = 0;
    let mut k = 0;
    while i < basis.len() {
        let lam = es.eigenvalues.iter().zip(&es.classes).filter(|(_, c)| **c == class).nth(k).map(|(l, _)| *l);
        let pair = lam.map(|l| l.im != T::zero()).unwrap_or(false) && i + 1 < basis.len();
        if pair {
            let s = (basis[i].norm_squared() + basis[i + 1].norm_squared()).sqrt();
            if s > T::zero() {
                basis[i] /= s;
                basis[i + 1] /= s;
            }
            i += 2;
            k += 2;
        } else {
            let s = basis[i].norm();
            if s > T::zero() {
                basis[i] /= s;
            }
            i += 1;
            k += 1;
        }
    }
    Ok((basis, moduli, kind))
}

/// Depth-0 segment: the side's eigenspace at the cycle point, extended
/// along each direction as far as the cycle's region sequence stays valid
/// and the box allows.
pub fn local_manifold<T: Real>(
    model: &PlModel<T>,
    cycle: &CyclePoint<T>,
    side: ManifoldSide,
    cfg: &ManifoldConfig<T>,
) -> Result<ManifoldSegment<T>> {
    check_saddle(cycle)?;
    cfg.check(model.dim())?;
    let (basis, moduli, kind) = side_basis(cycle, side)?;
    let p0 = cycle.points[0].clone();
    let diam = cfg.diameter();
    let mut lo = Vec::with_capacity(basis.len());
    let mut hi = Vec::with_capacity(basis.len());
    for v in &basis {
        let clip = cfg.line_clip(&p0, v).unwrap_or((T::zero(), T::zero()));
        let mut ext = [T::zero(); 2];
        for (e, sgn) in ext.iter_mut().zip([-T::one(), T::one()]) {
            let ok = |t: T| follows_sequence(model, cycle, side, &basis, &(&p0 + v * (sgn * t)));
            let limit = if sgn < T::zero() { -clip.0 } else { clip.1 };
            let limit = cfg.local_extent.map(|c| c.min(limit)).unwrap_or(limit).max(T::zero());
            let mut good = T::zero();
            let mut bad = T::lit(1e-6) * (T::one() + p0.norm());
            while ok(bad) && bad < limit {
                good = bad;
                bad = bad * T::lit(2.0);
                if bad > diam * T::lit(4.0) {
                    break;
                }
            }
            if ok(bad) {
                good = bad;
            } else {
                for _ in 0..80 {
                    let mid = (good + bad) / T::lit(2.0);
                    if ok(mid) {
                        good = mid;
                    } else {
                        bad = mid;
                    }
                    if bad - good <= T::lit(1e-12) * (T::one() + good) {
                        break;
                    }
                }
            }
            *e = good.min(limit);
        }
        lo.push(-ext[0]);
        hi.push(ext[1]);
    }
    Ok(ManifoldSegment {
        id: 0,
        region: cycle.regions[0].clone(),
        kind,
        anchor: p0.clone(),
        basis,
        lo,
        hi,
        moduli,
        support: vec![p0],
        parent: None,
        depth: 0,
        truncated: false,
    })
}

/// Per-direction sample counts. With moduli the density along direction
/// `i` is proportional to `1/|λ_i|`, with the product of counts close to
/// `n`; otherwise counts are balanced.
pub fn sample_counts<T: Real>(moduli: &[T], k: usize, n: usize) -> Vec<usize> {
    if k == 0 {
        return Vec::new();
    }
    let n = n.max(1) as f64;
    if moduli.len() == k && moduli.iter().all(|m| *m > T::zero()) {
        let prod: f64 = moduli.iter().map(|m| m.as_f64()).product();
        let s = (n * prod).powf(1.0 / k as f64);
        moduli.iter().map(|m| ((s / m.as_f64()).round() as usize).max(1)).collect()
    } else {
        vec![(n.powf(1.0 / k as f64).round() as usize).max(1); k]
    }
}

/// Grid of sample points over the segment's coordinate box. Points outside
/// the segment's region are dropped; segments of dimension above one that
/// carry no eigen moduli return their support points.
pub fn sample_segment<T: Real>(model: &PlModel<T>, seg: &ManifoldSegment<T>, n: usize) -> (Vec<DVector<T>>, Vec<String>) {
    let k = seg.dim();
    let mut diags = Vec::new();
    let candidates: Vec<DVector<T>> = if k > 1 && seg.moduli.is_empty() {
        seg.support.clone()
    } else {
        let counts = sample_counts(&seg.moduli, k, n);
        let total: usize = counts.iter().product();
        let mut out = Vec::with_capacity(total);
        let mut idx = vec![0usize; k];
        for _ in 0..total {
            let coords: Vec<T> = (0..k)
                .map(|i| {
                    if counts[i] == 1 {
                        if seg.lo[i] <= T::zero() && seg.hi[i] >= T::zero() {
                            T::zero()
                        } else {
                            (seg.lo[i] + seg.hi[i]) / T::lit(2.0)
                        }
                    } else {
                        seg.lo[i] + (seg.hi[i] - seg.lo[i]) * T::from_usize_lossy(idx[i]) / T::from_usize_lossy(counts[i] - 1)
                    }
                })
                .collect();
            out.push(seg.point_at(&coords));
            for i in (0..k).rev() {
                idx[i] += 1;
                if idx[i] < counts[i] {
                    break;
                }
                idx[i] = 0;
            }
        }
        out
    };
    let pts: Vec<DVector<T>> = candidates
        .into_iter()
        .filter(|p| model.region_of(p).map(|r| r == seg.region).unwrap_or(false))
        .collect();
    if pts.is_empty() {
        diags.push(format!("segment {}: empty region slice", seg.id));
    }
    (pts, diags)
}

struct Mapper<'a, T: Real> {
    model: &'a PlModel<T>,
    side: ManifoldSide,
    ctx: BacktrackContext,
}

impl<T: Real> Mapper<'_, T> {
    fn map(&mut self, z: &DVector<T>) -> Result<DVector<T>> {
        match self.side {
            ManifoldSide::Unstable => self.model.step(z),
            ManifoldSide::Stable => backtrack(self.model, z, &mut self.ctx).map(|r| r.predecessor),
        }
    }
}

/// Principal axes of a point set: centroid, the first `k` axes, and the
/// numerical rank.
fn pca<T: Real>(points: &[DVector<T>], k: usize) -> Result<(DVector<T>, Vec<DVector<T>>)> {
    let n = points[0].len();
    let m = T::from_usize_lossy(points.len());
    let mut cen = DVector::<T>::zeros(n);
    for p in points {
        cen += p;
    }
    cen /= m;
    let mut cov = DMatrix::<T>::zeros(n, n);
    for p in points {
        let d = p - &cen;
        cov += &d * d.transpose();
    }
    let eig = cov.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap_or(std::cmp::Ordering::Equal));
    let top = eig.eigenvalues[order[0]].max(T::zero());
    let rank = order
        .iter()
        .filter(|&&i| top > T::zero() && eig.eigenvalues[i] > T::lit(1e-20) * top)
        .count();
    if rank < k {
        return Err(Error::DegeneratePca {
            rank,
            required: k,
            points: points.iter().map(|p| p.iter().map(|x| x.as_f64()).collect()).collect(),
        });
    }
    let axes = order[..k].iter().map(|&i| eig.eigenvectors.column(i).into_owned()).collect();
    Ok((cen, axes))
}

fn fit_segment<T: Real>(region: RegionCode, points: Vec<DVector<T>>, k: usize, cfg: &ManifoldConfig<T>) -> Result<Option<ManifoldSegment<T>>> {
    let (anchor, basis) = pca(&points, k)?;
    let mut seg = ManifoldSegment {
        id: 0,
        region,
        kind: SegmentKind::LinearHyperplane,
        anchor,
        basis,
        lo: vec![T::zero(); k],
        hi: vec![T::zero(); k],
        moduli: Vec::new(),
        support: Vec::new(),
        parent: None,
        depth: 0,
        truncated: false,
    };
    let inside: Vec<DVector<T>> = points.into_iter().filter(|p| cfg.in_box(p)).collect();
    if k == 1 {
        let ts: Vec<T> = inside.iter().map(|p| seg.coordinates(p).0[0]).collect();
        let (mut lo, mut hi) = (T::lit(f64::INFINITY), T::lit(f64::NEG_INFINITY));
        for t in &ts {
            lo = lo.min(*t);
            hi = hi.max(*t);
        }
        // A slice that leaves the box is cut at the box face.
        let all: Vec<T> = ts;
        if let Some((cl, ch)) = cfg.line_clip(&seg.anchor, &seg.basis[0]) {
            lo = lo.max(cl);
            hi = hi.min(ch);
        }
        if all.is_empty() || !(lo <= hi) {
            return Ok(None);
        }
        seg.lo = vec![lo];
        seg.hi = vec![hi];
    } else {
        if inside.len() < k + 1 {
            return Ok(None);
        }
        for i in 0..k {
            let cs: Vec<T> = inside.iter().map(|p| seg.coordinates(p).0[i]).collect();
            seg.lo[i] = cs.iter().copied().fold(T::lit(f64::INFINITY), |a, b| a.min(b));
            seg.hi[i] = cs.iter().copied().fold(T::lit(f64::NEG_INFINITY), |a, b| a.max(b));
        }
    }
    seg.support = inside;
    Ok(Some(seg))
}

/// Maps one sampled segment and fits a segment to every contiguous slice
/// of the image that falls into a single region. Along one-dimensional
/// segments, region changes between consecutive samples are located by
/// bisection so that each slice reaches the border.
pub fn propagate_segment<T: Real>(
    model: &PlModel<T>,
    seg: &ManifoldSegment<T>,
    samples: &[DVector<T>],
    side: ManifoldSide,
    cfg: &ManifoldConfig<T>,
) -> (Vec<ManifoldSegment<T>>, bool, Vec<String>) {
    let mut mapper = Mapper { model, side, ctx: BacktrackContext::new(cfg.bitflip_depth) };
    propagate_with(&mut mapper, seg, samples, cfg)
}

fn propagate_with<T: Real>(
    mapper: &mut Mapper<'_, T>,
    seg: &ManifoldSegment<T>,
    samples: &[DVector<T>],
    cfg: &ManifoldConfig<T>,
) -> (Vec<ManifoldSegment<T>>, bool, Vec<String>) {
    let model = mapper.model;
    let k = seg.dim();
    let mut diags = Vec::new();
    let mut truncated = false;
    let images: Vec<Option<(DVector<T>, RegionCode)>> = samples
        .iter()
        .map(|s| match mapper.map(s) {
            Ok(z) if z.iter().all(|x| x.is_finite_val()) => model.region_of(&z).ok().map(|r| (z, r)),
            _ => None,
        })
        .collect();
    if images.iter().any(|i| i.is_none()) {
        truncated = true;
        diags.push(format!("segment {}: some points have no image", seg.id));
    }
    let mut groups: Vec<(RegionCode, Vec<DVector<T>>)> = Vec::new();
    if k == 1 {
        let mut current: Option<(RegionCode, Vec<DVector<T>>)> = None;
        for i in 0..images.len() {
            let Some((z, r)) = images[i].clone() else {
                if let Some(g) = current.take() {
                    groups.push(g);
                }
                continue;
            };
            match current.as_mut() {
                Some((cr, pts)) if *cr == r => pts.push(z),
                Some((cr, pts)) => {
                    // crossing between samples i-1 and i
                    let (a, b) = (&samples[i - 1], &samples[i]);
                    let mut lo = T::zero();
                    let mut hi = T::one();
                    let mut zl = pts.last().cloned();
                    let mut zh = Some(z.clone());
                    let len = (b - a).norm();
                    while (hi - lo) * len > T::lit(1e-10) {
                        let mid = (lo + hi) / T::lit(2.0);
                        let p = a + (b - a) * mid;
                        match mapper.map(&p).ok().and_then(|q| model.region_of(&q).ok().map(|rq| (q, rq))) {
                            Some((q, rq)) if rq == *cr => {
                                lo = mid;
                                zl = Some(q);
                            }
                            Some((q, _)) => {
                                hi = mid;
                                zh = Some(q);
                            }
                            None => break,
                        }
                    }
                    if let Some(q) = zl {
                        pts.push(q);
                    }
                    let done = current.take().unwrap();
                    groups.push(done);
                    let mut start = Vec::new();
                    if let Some(q) = zh {
                        if q != z {
                            start.push(q);
                        }
                    }
                    start.push(z);
                    current = Some((r, start));
                }
                None => current = Some((r, vec![z])),
            }
        }
        if let Some(g) = current.take() {
            groups.push(g);
        }
    } else {
        let mut by_region: BTreeMap<RegionCode, Vec<DVector<T>>> = BTreeMap::new();
        for (z, r) in images.into_iter().flatten() {
            by_region.entry(r).or_default().push(z);
        }
        groups = by_region.into_iter().collect();
    }
    let mut out = Vec::new();
    for (r, pts) in groups {
        if pts.len() < k + 1 {
            continue;
        }
        match fit_segment(r, pts, k, cfg) {
            Ok(Some(mut s)) => {
                s.parent = Some(seg.id);
                s.depth = seg.depth + 1;
                out.push(s);
            }
            Ok(None) => {}
            Err(e) => diags.push(format!("segment {}: {e}", seg.id)),
        }
    }
    (out, truncated, diags)
}

/// Whether `new` lies inside the span and coordinate box of an existing
/// segment of the same region.
fn covered<T: Real>(new: &ManifoldSegment<T>, existing: &[ManifoldSegment<T>]) -> bool {
    let probes: Vec<DVector<T>> = if new.dim() == 1 {
        vec![new.point_at(&new.lo), new.point_at(&new.hi)]
    } else {
        new.support.clone()
    };
    existing.iter().any(|s| {
        if s.region != new.region || s.dim() != new.dim() {
            return false;
        }
        probes.iter().all(|p| {
            let (c, res) = s.coordinates(p);
            let tol = T::lit(1e-7) * (T::one() + p.norm());
            res <= tol && c.iter().enumerate().all(|(i, x)| *x >= s.lo[i] - tol && *x <= s.hi[i] + tol)
        })
    })
}

/// Breadth-first construction of the global manifold. Errors in individual
/// segments are recorded as diagnostics.
pub fn build_manifold<T: Real>(
    model: &PlModel<T>,
    cycle: &CyclePoint<T>,
    side: ManifoldSide,
    cfg: &ManifoldConfig<T>,
) -> Result<Manifold<T>> {
    let root = local_manifold(model, cycle, side, cfg)?;
    let mut diagnostics = Vec::new();
    if side == ManifoldSide::Stable {
        if let Some(regions) = model.all_regions(1 << 12) {
            if let Ok(rep) = crate::inversion::sign_condition(model, &regions) {
                if !rep.holds {
                    diagnostics.push("sign condition violated: backward steps may be ambiguous".to_string());
                }
            }
        }
    }
    let mut mapper = Mapper { model, side, ctx: BacktrackContext::new(cfg.bitflip_depth) };
    let mut segments = vec![root];
    let mut samples = Vec::new();
    let (s0, d0) = sample_segment(model, &segments[0], cfg.samples);
    diagnostics.extend(d0);
    samples.push(s0);
    let mut queue = VecDeque::from([0usize]);
    let mut capped = false;
    while let Some(id) = queue.pop_front() {
        if segments[id].depth >= cfg.max_iters {
            continue;
        }
        let (children, truncated, d) = propagate_with(&mut mapper, &segments[id], &samples[id], cfg);
        diagnostics.extend(d);
        segments[id].truncated |= truncated;
        for mut c in children {
            if covered(&c, &segments) {
                continue;
            }
            if segments.len() >= cfg.max_segments {
                capped = true;
                break;
            }
            c.id = segments.len();
            let (s, d) = sample_segment(model, &c, cfg.samples);
            diagnostics.extend(d);
            segments.push(c);
            samples.push(s);
            queue.push_back(segments.len() - 1);
        }
        if capped {
            diagnostics.push(format!("segment cap {} reached", cfg.max_segments));
            break;
        }
    }
    Ok(Manifold { side, origin: cycle.clone(), segments, samples, diagnostics })
}

/// Largest bucket handed to the clusterer; larger buckets are thinned
/// deterministically and the remaining points join the cluster of their
/// nearest retained point.
pub const CLUSTER_CAP: usize = 3000;

/// Seeds `cycle point + ε Σ u_i v_i` with `u_i` uniform in `[-1, 1]` and
/// `ε = 1e-4 (1 + ‖p‖)`, iterated `horizon` times (forward for unstable,
/// backward for stable) while they stay in the box. Points are bucketed by
/// region, split into folds by HDBSCAN and each cluster is fitted by PCA.
pub fn build_manifold_fallback<T: Real>(
    model: &PlModel<T>,
    cycle: &CyclePoint<T>,
    side: ManifoldSide,
    n_seeds: usize,
    horizon: usize,
    seed: u64,
    cfg: &ManifoldConfig<T>,
) -> Result<Manifold<T>> {
    check_saddle(cycle)?;
    cfg.check(model.dim())?;
    let (basis, _, _) = side_basis(cycle, side)?;
    let k = basis.len();
    let p0 = &cycle.points[0];
    let eps = T::lit(1e-4) * (T::one() + p0.norm());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mapper = Mapper { model, side, ctx: BacktrackContext::new(cfg.bitflip_depth) };
    let mut buckets: BTreeMap<RegionCode, Vec<DVector<T>>> = BTreeMap::new();
    let mut diagnostics = Vec::new();
    for _ in 0..n_seeds {
        let mut z = p0.clone();
        for v in &basis {
            z += v * (eps * T::lit(rng.random_range(-1.0..=1.0)));
        }
        for step in 0..=horizon {
            if !cfg.in_box(&z) || !z.iter().all(|x| x.is_finite_val()) {
                break;
            }
            if let Ok(r) = model.region_of(&z) {
                buckets.entry(r).or_default().push(z.clone());
            }
            if step == horizon {
                break;
            }
            match mapper.map(&z) {
                Ok(n) => z = n,
                Err(_) => break,
            }
        }
    }
    let mut fitted: Vec<ManifoldSegment<T>> = Vec::new();
    for (region, pts) in buckets {
        if pts.len() < k + 1 {
            diagnostics.push(format!("region {region}: {} points, dropped", pts.len()));
            continue;
        }
        for cluster in cluster_points(&pts, k + 1, &mut diagnostics, &region) {
            if cluster.len() < k + 1 {
                diagnostics.push(format!("region {region}: cluster of {} points dropped", cluster.len()));
                continue;
            }
            match fit_segment(region.clone(), cluster, k, cfg) {
                Ok(Some(s)) => fitted.push(s),
                Ok(None) => {}
                Err(e) => diagnostics.push(format!("region {region}: {e}")),
            }
        }
    }
    // The cluster closest to the cycle point goes first.
    let dist = |s: &ManifoldSegment<T>| s.support.iter().map(|p| (p - p0).norm()).fold(T::lit(f64::INFINITY), |a, b| a.min(b));
    if let Some(first) = (0..fitted.len()).min_by(|&a, &b| dist(&fitted[a]).partial_cmp(&dist(&fitted[b])).unwrap_or(std::cmp::Ordering::Equal)) {
        fitted.swap(0, first);
    }
    let mut samples = Vec::with_capacity(fitted.len());
    for (i, s) in fitted.iter_mut().enumerate() {
        s.id = i;
        samples.push(s.support.clone());
    }
    Ok(Manifold { side, origin: cycle.clone(), segments: fitted, samples, diagnostics })
}

fn cluster_points<T: Real>(pts: &[DVector<T>], min_size: usize, diags: &mut Vec<String>, region: &RegionCode) -> Vec<Vec<DVector<T>>> {
    let stride = pts.len().div_ceil(CLUSTER_CAP).max(1);
    let kept: Vec<usize> = (0..pts.len()).step_by(stride).collect();
    let data: Vec<Vec<f64>> = kept.iter().map(|&i| pts[i].iter().map(|x| x.as_f64()).collect()).collect();
    let min_cluster = min_size.max(5);
    if data.len() < min_cluster {
        return vec![pts.to_vec()];
    }
    let hp = HdbscanHyperParams::builder().min_cluster_size(min_cluster).allow_single_cluster(true).build();
    let labels = match Hdbscan::new(&data, hp).cluster() {
        Ok(l) => l,
        Err(e) => {
            diags.push(format!("region {region}: clustering failed ({e:?}), bucket kept whole"));
            return vec![pts.to_vec()];
        }
    };
    let mut full = vec![-1i32; pts.len()];
    for (j, &i) in kept.iter().enumerate() {
        full[i] = labels[j];
    }
    if stride > 1 {
        for i in 0..pts.len() {
            if i % stride == 0 {
                continue;
            }
            let (mut best, mut bd) = (-1, f64::INFINITY);
            for (j, &ki) in kept.iter().enumerate() {
                let d = (&pts[i] - &pts[ki]).norm().as_f64();
                if d < bd {
                    bd = d;
                    best = labels[j];
                }
            }
            full[i] = best;
        }
    }
    // Noise points (typically the sparse tail of a geometric sequence of
    // iterates) join the cluster of their nearest clustered point.
    let labelled: Vec<usize> = (0..pts.len()).filter(|&i| full[i] >= 0).collect();
    if labelled.is_empty() {
        return vec![pts.to_vec()];
    }
    let noise: Vec<usize> = (0..pts.len()).filter(|&i| full[i] < 0).collect();
    if !noise.is_empty() {
        diags.push(format!("region {region}: {} noise points reassigned", noise.len()));
    }
    for i in noise {
        let j = labelled
            .iter()
            .copied()
            .min_by(|&a, &b| {
                let da = (&pts[i] - &pts[a]).norm_squared();
                let db = (&pts[i] - &pts[b]).norm_squared();
                da.partial_cmp(&db).unwrap_or(std::cmp::Ordering::Equal)
            })
            .unwrap();
        full[i] = full[j];
    }
    let mut by: BTreeMap<i32, Vec<DVector<T>>> = BTreeMap::new();
    for (i, l) in full.into_iter().enumerate() {
        by.entry(l).or_default().push(pts[i].clone());
    }
    merge_coplanar(by.into_values().collect(), min_size - 1)
}

/// Joins clusters that lie on one common flat of dimension `k`: density
/// splits along a single fold are undone, distinct folds stay apart.
fn merge_coplanar<T: Real>(clusters: Vec<Vec<DVector<T>>>, k: usize) -> Vec<Vec<DVector<T>>> {
    let mut out: Vec<Vec<DVector<T>>> = Vec::new();
    for c in clusters {
        let mut merged = false;
        for o in out.iter_mut() {
            let mut joint = o.clone();
            joint.extend(c.iter().cloned());
            if flat_residual(&joint, k) {
                *o = joint;
                merged = true;
                break;
            }
        }
        if !merged {
            out.push(c);
        }
    }
    out
}

fn flat_residual<T: Real>(pts: &[DVector<T>], k: usize) -> bool {
    let Ok((cen, axes)) = pca(pts, k) else { return true };
    let scale = pts.iter().map(|p| p.norm()).fold(T::one(), |a, b| a.max(b));
    pts.iter().all(|p| {
        let mut d = p - &cen;
        for a in &axes {
            let c = a.dot(&d);
            d -= a * c;
        }
        d.norm() <= T::lit(1e-7) * scale
    })
}

/// Symmetric Hausdorff distance between two point clouds.
pub fn hausdorff<T: Real>(a: &[DVector<T>], b: &[DVector<T>]) -> f64 {
    directed_hausdorff(a, b).max(directed_hausdorff(b, a))
}

/// `max_{p in a} min_{q in b} ‖p - q‖`, using a sweep along the first
/// coordinate.
pub fn directed_hausdorff<T: Real>(a: &[DVector<T>], b: &[DVector<T>]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    if b.is_empty() {
        return f64::INFINITY;
    }
    let conv = |p: &DVector<T>| p.iter().map(|x| x.as_f64()).collect::<Vec<f64>>();
    let mut bs: Vec<Vec<f64>> = b.iter().map(conv).collect();
    bs.sort_by(|x, y| x[0].partial_cmp(&y[0]).unwrap_or(std::cmp::Ordering::Equal));
    let keys: Vec<f64> = bs.iter().map(|q| q[0]).collect();
    let dist = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let mut worst: f64 = 0.0;
    for p in a.iter().map(conv) {
        let start = keys.partition_point(|k| *k < p[0]);
        let mut best = f64::INFINITY;
        let mut i = start;
        while i < bs.len() && keys[i] - p[0] < best {
            best = best.min(dist(&p, &bs[i]));
            i += 1;
        }
        let mut i = start;
        while i > 0 && p[0] - keys[i - 1] < best {
            best = best.min(dist(&p, &bs[i - 1]));
            i -= 1;
        }
        worst = worst.max(best);
    }
    worst
}

/// CSV rows `segment,depth,region,x0,...` for every sampled point.
pub fn manifold_csv<T: Real>(m: &Manifold<T>) -> String {
    let n = m.origin.points[0].len();
    let mut s = String::from("segment,depth,region");
    for i in 0..n {
        s.push_str(&format!(",x{i}"));
    }
    s.push('\n');
    for (seg, pts) in m.segments.iter().zip(&m.samples) {
        for p in pts {
            s.push_str(&format!("{},{},{}", seg.id, seg.depth, seg.region));
            for x in p.iter() {
                s.push_str(&format!(",{}", x.as_f64()));
            }
            s.push('\n');
        }
    }
    s
}

/// Segment metadata (kind, basis, anchor, parent) as JSON.
pub fn manifold_metadata<T: Real>(m: &Manifold<T>) -> serde_json::Value {
    let v = |x: &DVector<T>| x.iter().map(|c| c.as_f64()).collect::<Vec<f64>>();
    let segs: Vec<serde_json::Value> = m
        .segments
        .iter()
        .map(|s| {
            serde_json::json!({
                "id": s.id,
                "region": s.region.to_string(),
                "kind": s.kind,
                "anchor": v(&s.anchor),
                "basis": s.basis.iter().map(v).collect::<Vec<_>>(),
                "lo": s.lo.iter().map(|x| x.as_f64()).collect::<Vec<_>>(),
                "hi": s.hi.iter().map(|x| x.as_f64()).collect::<Vec<_>>(),
                "parent": s.parent,
                "depth": s.depth,
                "truncated": s.truncated,
            })
        })
        .collect();
    serde_json::json!({
        "side": m.side,
        "origin": m.origin.points.iter().map(v).collect::<Vec<_>>(),
        "segments": segs,
        "diagnostics": m.diagnostics,
    })
}
