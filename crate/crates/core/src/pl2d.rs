//! Closed-form analysis of the two-piece planar map [`Map2D`]: inverses,
//! fold points of the saddle manifolds, homoclinic tests, matrix powers and
//! existence/stability regions of low-period orbits.

use nalgebra::{ComplexField, DMatrix, DVector};
use num_complex::Complex;
use num_traits::Num;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Map2D;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn of<T: Real>(x: T) -> Side {
        if x <= T::zero() {
            Side::Left
        } else {
            Side::Right
        }
    }
}

/// `(1 - d) h1 + c h2`, the numerator of both fixed-point abscissae. Its
/// zero marks the parameter value where the fixed points hit the border.
pub fn degeneracy_scalar<N: Num + Clone>(c: N, d: N, h1: N, h2: N) -> N {
    (N::one() - d) * h1 + c * h2
}

/// The `h1` at which [`degeneracy_scalar`] vanishes.
pub fn border_collision_h1<N: Num + Clone>(c: N, d: N, h2: N) -> Option<N> {
    let den = N::one() - d;
    if den.is_zero() {
        return None;
    }
    Some(N::zero() - c * h2 / den)
}

/// Fixed point of the affine piece with entries `a`, `b` (shared `c`, `d`).
/// `None` when the piece has eigenvalue one.
pub fn piece_fixed_point<N: Num + Clone>(a: N, b: N, c: N, d: N, h1: N, h2: N) -> Option<(N, N)> {
    let den = (N::one() - d.clone()) * (N::one() - a.clone()) - b.clone() * c.clone();
    if den.is_zero() {
        return None;
    }
    let x = degeneracy_scalar(c, d, h1.clone(), h2.clone()) / den.clone();
    let y = (b * h1 + (N::one() - a) * h2) / den;
    Some((x, y))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedPoint2D<T> {
    pub x: T,
    pub y: T,
    pub admissible: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedPoints2D<T> {
    pub left: FixedPoint2D<T>,
    pub right: FixedPoint2D<T>,
}

/// Both candidate fixed points; `O_L` is admissible iff `x < 0`, `O_R` iff `x > 0`.
pub fn fixed_points_2d<T: Real>(map: &Map2D<T>) -> Result<FixedPoints2D<T>> {
    let l = piece_fixed_point(map.a_l, map.b_l, map.c, map.d, map.h1, map.h2)
        .ok_or_else(|| Error::EigenvalueOne("left piece (1 - d)(1 - a_l) - b_l c = 0".into()))?;
    let r = piece_fixed_point(map.a_r, map.b_r, map.c, map.d, map.h1, map.h2)
        .ok_or_else(|| Error::EigenvalueOne("right piece (1 - d)(1 - a_r) - b_r c = 0".into()))?;
    Ok(FixedPoints2D {
        left: FixedPoint2D { x: l.0, y: l.1, admissible: l.0 < T::zero() },
        right: FixedPoint2D { x: r.0, y: r.1, admissible: r.0 > T::zero() },
    })
}

fn piece<T: Real>(map: &Map2D<T>, side: Side) -> (T, T, T) {
    match side {
        Side::Left => (map.a_l, map.b_l, map.det_l()),
        Side::Right => (map.a_r, map.b_r, map.det_r()),
    }
}

/// Preimage under one piece: `A_side^{-1} (z - h)`.
pub fn inverse_piece<T: Real>(map: &Map2D<T>, side: Side, x: T, y: T) -> Result<(T, T)> {
    let (a, b, det) = piece(map, side);
    if det == T::zero() {
        return Err(Error::NotInvertible(0.0));
    }
    let xi = (map.d * x - map.c * y + map.c * map.h2 - map.d * map.h1) / det;
    let yi = (-b * x + a * y + b * map.h1 - a * map.h2) / det;
    Ok((xi, yi))
}

/// `Φ = φᵀ (z - h) / D` with `φᵀ = (d, -c)`, using `D_L` or `D_R`.
pub fn phi<T: Real>(map: &Map2D<T>, side: Side, x: T, y: T) -> T {
    let det = match side {
        Side::Left => map.det_l(),
        Side::Right => map.det_r(),
    };
    (map.d * (x - map.h1) - map.c * (y - map.h2)) / det
}

/// Branch of the inverse selected by the sign of Φ.
pub fn inverse_branch<T: Real>(map: &Map2D<T>, x: T, y: T) -> Result<Side> {
    let prod = map.det_l() * map.det_r();
    if prod <= T::zero() {
        return Err(Error::NotInvertible(prod.as_f64()));
    }
    Ok(if phi(map, Side::Left, x, y) <= T::zero() { Side::Left } else { Side::Right })
}

/// Unique preimage of an invertible map.
pub fn invert_2d<T: Real>(map: &Map2D<T>, x: T, y: T) -> Result<(T, T)> {
    let side = inverse_branch(map, x, y)?;
    inverse_piece(map, side, x, y)
}

/// All self-consistent preimages (zero, one or two) of a possibly
/// non-invertible map.
pub fn preimages_2d<T: Real>(map: &Map2D<T>, x: T, y: T) -> Vec<(T, T)> {
    let mut out = Vec::new();
    for side in [Side::Left, Side::Right] {
        if let Ok((px, py)) = inverse_piece(map, side, x, y) {
            if Side::of(px) == side && !out.iter().any(|q: &(T, T)| q.0 == px && q.1 == py) {
                out.push((px, py));
            }
        }
    }
    out
}

#[derive(Clone, Copy, PartialEq)]
enum Sgn {
    P,
    N,
}

fn sgn<T: Real>(v: T) -> Option<Sgn> {
    if v > T::zero() {
        Some(Sgn::P)
    } else if v < T::zero() {
        Some(Sgn::N)
    } else {
        None
    }
}

use Sgn::{N, P};
use Side::{Left as L, Right as R};

// (D, c, d, y - d (x - h1) / c - h2) -> branch, for c d != 0.
const TABLE_CD: [(Sgn, Sgn, Sgn, Sgn, Side); 16] = [
    (P, P, P, N, R), (P, P, N, N, R), (P, N, N, P, R), (P, N, P, P, R),
    (N, P, P, P, R), (N, P, N, P, R), (N, N, N, N, R), (N, N, P, N, R),
    (P, P, P, P, L), (P, P, N, P, L), (P, N, N, N, L), (P, N, P, N, L),
    (N, P, P, N, L), (N, P, N, N, L), (N, N, N, P, L), (N, N, P, P, L),
];
// (D, d, x - h1) -> branch, for c = 0.
const TABLE_C0: [(Sgn, Sgn, Sgn, Side); 8] = [
    (P, P, P, R), (P, N, N, R), (N, P, N, R), (N, N, P, R),
    (P, P, N, L), (P, N, P, L), (N, N, N, L), (N, P, P, L),
];
// (D, c, y - h2) -> branch, for d = 0.
const TABLE_D0: [(Sgn, Sgn, Sgn, Side); 8] = [
    (P, P, N, R), (P, N, P, R), (N, P, P, R), (N, N, N, R),
    (P, P, P, L), (P, N, N, L), (N, N, P, L), (N, P, N, L),
];

/// Inverse branch looked up from the sign tables. `None` when the point
/// lies on the inverse's switching line (both branches agree there), or
/// when the sign pattern is not covered.
pub fn inverse_branch_table<T: Real>(map: &Map2D<T>, x: T, y: T) -> Result<Option<Side>> {
    let prod = map.det_l() * map.det_r();
    if prod <= T::zero() {
        return Err(Error::NotInvertible(prod.as_f64()));
    }
    let ds = sgn(map.det_l()).expect("nonzero det");
    let (c, d) = (map.c, map.d);
    let found = match (sgn(c), sgn(d)) {
        (Some(cs), Some(dsg)) => sgn(y - d * (x - map.h1) / c - map.h2)
            .and_then(|s| TABLE_CD.iter().find(|r| r.0 == ds && r.1 == cs && r.2 == dsg && r.3 == s).map(|r| r.4)),
        (None, Some(dsg)) => sgn(x - map.h1).and_then(|s| TABLE_C0.iter().find(|r| r.0 == ds && r.1 == dsg && r.2 == s).map(|r| r.3)),
        (Some(cs), None) => sgn(y - map.h2).and_then(|s| TABLE_D0.iter().find(|r| r.0 == ds && r.1 == cs && r.2 == s).map(|r| r.3)),
        (None, None) => None,
    };
    Ok(found)
}

/// Image line of the border: points with `c y = d x - d h1 + c h2`.
pub fn on_border_image<T: Real>(map: &Map2D<T>, x: T, y: T) -> T {
    map.c * y - (map.d * x - map.d * map.h1 + map.c * map.h2)
}

/// `(λ1, λ2)` of a 2x2 matrix given trace and determinant.
fn eig2<T: Real>(tr: T, det: T) -> (Complex<T>, Complex<T>) {
    let two = T::lit(2.0);
    let disc = tr * tr - T::lit(4.0) * det;
    if disc >= T::zero() {
        let s = disc.sqrt();
        (Complex::new((tr + s) / two, T::zero()), Complex::new((tr - s) / two, T::zero()))
    } else {
        let s = (-disc).sqrt();
        (Complex::new(tr / two, s / two), Complex::new(tr / two, -s / two))
    }
}

fn cpowi<T: Real>(l: Complex<T>, n: i32) -> Complex<T> {
    if n >= 0 {
        if n == 0 {
            Complex::new(T::one(), T::zero())
        } else {
            l.powu(n as u32)
        }
    } else {
        Complex::new(T::one(), T::zero()) / l.powu((-n) as u32)
    }
}

/// `A_n = (λ1^n - λ2^n) / (λ1 - λ2)`.
pub fn a_n<T: Real>(l1: Complex<T>, l2: Complex<T>, n: i32) -> T {
    ((cpowi(l1, n) - cpowi(l2, n)) / (l1 - l2)).re
}

/// `M^n` for a 2x2 matrix with distinct eigenvalues, via
/// `M^n = [[A_{n+1} - d A_n, c A_n], [b A_n, d A_n - D A_{n-1}]]`, or the
/// upper-triangular form when `b = 0`.
pub fn matrix_power_closed_form<T: Real>(m: &DMatrix<T>, n: u32) -> Result<DMatrix<T>> {
    if m.nrows() != 2 || m.ncols() != 2 {
        return Err(Error::Dimension { expected: 2, got: m.nrows() });
    }
    let (a, c, b, d) = (m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]);
    let scale = m.iter().fold(T::one(), |s, x| s.max(x.abs()));
    let tol = T::lit(1e-10) * scale;
    if b == T::zero() {
        if (a - d).abs() <= tol {
            return Err(Error::RepeatedEigenvalues);
        }
        let an = a.powi(n as i32);
        let dn = d.powi(n as i32);
        return Ok(DMatrix::from_row_slice(2, 2, &[an, c * (an - dn) / (a - d), T::zero(), dn]));
    }
    let det = a * d - b * c;
    let (l1, l2) = eig2(a + d, det);
    if (l1 - l2).modulus() <= tol {
        return Err(Error::RepeatedEigenvalues);
    }
    let n = n as i32;
    let an = a_n(l1, l2, n);
    let an1 = a_n(l1, l2, n + 1);
    // A_{n-1}: for n = 0 this is -1/D, which only enters multiplied by D.
    let d_an_m1 = if n == 0 { -T::one() } else { det * a_n(l1, l2, n - 1) };
    Ok(DMatrix::from_row_slice(2, 2, &[an1 - d * an, c * an, b * an, d * an - d_an_m1]))
}

/// `T_R^n (p)` for a point whose first `n` iterates are all computed
/// with the right piece: `A_R^n p + (A_R - I)^{-1} (A_R^n - I) h`.
pub fn right_orbit_closed_form<T: Real>(map: &Map2D<T>, p: (T, T), n: u32) -> Result<(T, T)> {
    let ar = map.right();
    let amn = matrix_power_closed_form(&ar, n)?;
    let eye = DMatrix::<T>::identity(2, 2);
    let shifted = &ar - &eye;
    if shifted.determinant().abs() <= T::lit(1e-12) {
        return Err(Error::EigenvalueOne("A_R has eigenvalue one".into()));
    }
    let inv = shifted.try_inverse().ok_or_else(|| Error::EigenvalueOne("A_R has eigenvalue one".into()))?;
    let pv = DVector::from_row_slice(&[p.0, p.1]);
    let out = &amn * pv + inv * (&amn - eye) * map.bias();
    Ok((out[0], out[1]))
}

/// Saddle of one piece with real eigenvalues and its eigenlines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Saddle2D<T: Real> {
    pub side: Side,
    pub x: T,
    pub y: T,
    pub lambda_s: T,
    pub lambda_u: T,
    pub v_s: (T, T),
    pub v_u: (T, T),
}

fn eigvec<T: Real>(a: T, b: T, c: T, d: T, l: T) -> (T, T) {
    if b != T::zero() {
        return ((l - d) / b, T::one());
    }
    // rows of (A - λI): (a - λ, c) and (0, d - λ); kernel candidates
    let c1 = (c, l - a);
    let c2 = (l - d, b);
    let n1 = c1.0.abs() + c1.1.abs();
    let n2 = c2.0.abs() + c2.1.abs();
    if n1 >= n2 {
        c1
    } else {
        c2
    }
}

pub fn saddle_2d<T: Real>(map: &Map2D<T>, side: Side) -> Result<Saddle2D<T>> {
    let fps = fixed_points_2d(map)?;
    let fp = match side {
        Side::Left => fps.left,
        Side::Right => fps.right,
    };
    if !fp.admissible {
        return Err(Error::InvalidArgument(format!("{side:?} fixed point is virtual")));
    }
    let (a, b, det) = piece(map, side);
    let (l1, l2) = eig2(a + map.d, det);
    if l1.im != T::zero() {
        return Err(Error::NotSaddle);
    }
    let (l1, l2) = (l1.re, l2.re);
    let (ls, lu) = if l1.abs() < T::one() && l2.abs() > T::one() {
        (l1, l2)
    } else if l2.abs() < T::one() && l1.abs() > T::one() {
        (l2, l1)
    } else {
        return Err(Error::NotSaddle);
    };
    Ok(Saddle2D {
        side,
        x: fp.x,
        y: fp.y,
        lambda_s: ls,
        lambda_u: lu,
        v_s: eigvec(a, b, map.c, map.d, ls),
        v_u: eigvec(a, b, map.c, map.d, lu),
    })
}

/// Where the eigenline with direction `v` through the saddle meets `x = 0`.
/// Uses the closed form in `λ` when `b != 0`.
fn border_hit<T: Real>(map: &Map2D<T>, s: &Saddle2D<T>, lambda: T, v: (T, T)) -> Result<T> {
    let (a, b, det) = piece(map, s.side);
    if b != T::zero() {
        let den = (lambda - map.d) * (T::one() - (a + map.d) + det);
        if den == T::zero() {
            return Err(Error::NoBorderHit);
        }
        let num = (b * map.h1 + (T::one() - a) * map.h2) * (lambda - map.d)
            - b * (map.c * map.h2 + (T::one() - map.d) * map.h1);
        return Ok(num / den);
    }
    if v.0 == T::zero() {
        return Err(Error::NoBorderHit);
    }
    Ok(s.y - s.x * v.1 / v.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnstableFolds<T: Real> {
    pub y0: T,
    pub p0: (T, T),
    pub p1: (T, T),
    pub p2: (T, T),
}

/// First border hit `P0` of the unstable eigenline and its two images.
pub fn unstable_fold_points<T: Real>(map: &Map2D<T>, s: &Saddle2D<T>) -> Result<UnstableFolds<T>> {
    let y0 = border_hit(map, s, s.lambda_u, s.v_u)?;
    let p1 = (map.c * y0 + map.h1, map.d * y0 + map.h2);
    // P2 per side of P1 (x1 = 0 falls on the left by convention).
    let p2 = map.apply(p1.0, p1.1);
    Ok(UnstableFolds { y0, p0: (T::zero(), y0), p1, p2 })
}

/// Stable eigenline `L(x, y) = s (y - y*) - (x - x*)`, `s = v1 / v2`, or
/// `y - y*` when the stable direction is horizontal.
pub fn stable_line<T: Real>(s: &Saddle2D<T>, x: T, y: T) -> T {
    let (v1, v2) = s.v_s;
    if v2 == T::zero() {
        return y - s.y;
    }
    (v1 / v2) * (y - s.y) - (x - s.x)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaseIResult {
    pub l_p1: f64,
    pub l_p2: f64,
    pub product: f64,
    pub beta: Option<f64>,
    pub p_hom: Option<[f64; 2]>,
    pub side_product: Option<f64>,
    /// The crossing coincides with the saddle itself.
    pub at_saddle: bool,
    pub certified: bool,
}

fn near<T: Real>(p: (T, T), q: (T, T)) -> bool {
    let scale = T::one() + q.0.abs() + q.1.abs();
    (p.0 - q.0).abs() + (p.1 - q.1).abs() <= T::lit(1e-8) * scale
}

/// Do `P1`, `P2` lie on opposite sides of (or on) the stable eigenline?
pub fn homoclinic_case_i<T: Real>(s: &Saddle2D<T>, f: &UnstableFolds<T>) -> CaseIResult {
    let l1 = stable_line(s, f.p1.0, f.p1.1);
    let l2 = stable_line(s, f.p2.0, f.p2.1);
    let product = l1 * l2;
    let mut out = CaseIResult {
        l_p1: l1.as_f64(),
        l_p2: l2.as_f64(),
        product: product.as_f64(),
        beta: None,
        p_hom: None,
        side_product: None,
        at_saddle: false,
        certified: false,
    };
    if product <= T::zero() {
        let beta = if l1 == l2 { T::zero() } else { l1 / (l1 - l2) };
        let ph = (f.p1.0 + beta * (f.p2.0 - f.p1.0), f.p1.1 + beta * (f.p2.1 - f.p1.1));
        let side = ph.0 * s.x;
        out.beta = Some(beta.as_f64());
        out.p_hom = Some([ph.0.as_f64(), ph.1.as_f64()]);
        out.side_product = Some(side.as_f64());
        out.at_saddle = near(ph, (s.x, s.y));
        out.certified = side > T::zero();
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaseIIResult {
    pub y0_tilde: f64,
    pub p0_tilde: [f64; 2],
    pub phi: f64,
    pub inverse_side: Side,
    pub p_minus1_tilde: [f64; 2],
    pub l_p1: f64,
    pub l_p2: f64,
    pub product: f64,
    pub beta: Option<f64>,
    pub p_hom: Option<[f64; 2]>,
    pub side_product: Option<f64>,
    pub at_saddle: bool,
    pub certified: bool,
}

/// Tests `P1`, `P2` against the stable-manifold segment joining its first
/// fold `P̃0` on the border and that fold's preimage `P̃_{-1}`.
pub fn homoclinic_case_ii<T: Real>(map: &Map2D<T>, s: &Saddle2D<T>, f: &UnstableFolds<T>) -> Result<CaseIIResult> {
    let y0t = border_hit(map, s, s.lambda_s, s.v_s)?;
    let phi_l = phi(map, Side::Left, T::zero(), y0t);
    let (side, phi_v) = if phi_l <= T::zero() {
        (Side::Left, phi_l)
    } else {
        let phi_r = phi(map, Side::Right, T::zero(), y0t);
        if phi_r < T::zero() {
            return Err(Error::NotInvertible((map.det_l() * map.det_r()).as_f64()));
        }
        (Side::Right, phi_r)
    };
    let (a, b, det) = piece(map, side);
    let xm = (-map.c * y0t + map.c * map.h2 - map.d * map.h1) / det;
    let ym = (a * y0t + b * map.h1 - a * map.h2) / det;
    if xm == T::zero() {
        return Err(Error::ZeroDenominator("x̃_{-1} = 0".into()));
    }
    let k = (ym - y0t) / xm;
    let lt = |x: T, y: T| y - y0t - k * x;
    let l1 = lt(f.p1.0, f.p1.1);
    let l2 = lt(f.p2.0, f.p2.1);
    let product = l1 * l2;
    let mut out = CaseIIResult {
        y0_tilde: y0t.as_f64(),
        p0_tilde: [0.0, y0t.as_f64()],
        phi: phi_v.as_f64(),
        inverse_side: side,
        p_minus1_tilde: [xm.as_f64(), ym.as_f64()],
        l_p1: l1.as_f64(),
        l_p2: l2.as_f64(),
        product: product.as_f64(),
        beta: None,
        p_hom: None,
        side_product: None,
        at_saddle: false,
        certified: false,
    };
    if product < T::zero() {
        let (x1, y1) = f.p1;
        let (x2, y2) = f.p2;
        let den = (y2 - y1) * xm - (ym - y0t) * (x2 - x1);
        if den != T::zero() {
            let beta = ((y0t - y1) * xm + (ym - y0t) * x1) / den;
            let ph = ((x2 - x1) * beta + x1, (y2 - y1) * beta + y1);
            let side_p = ph.0 * xm;
            out.beta = Some(beta.as_f64());
            out.p_hom = Some([ph.0.as_f64(), ph.1.as_f64()]);
            out.side_product = Some(side_p.as_f64());
            out.at_saddle = near(ph, (s.x, s.y));
            out.certified = side_p > T::zero();
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecursiveResult {
    /// Index `k0` of the orbit point of `P0` the right-piece excursion
    /// starts from (0 when `P1` is already on the right).
    pub start_index: usize,
    /// Border return time `n` (1 when `P1` stays on the left and the
    /// first test already decides).
    pub return_time: Option<usize>,
    pub p_n: Option<[f64; 2]>,
    pub p_n1: Option<[f64; 2]>,
    pub product: Option<f64>,
    pub certified: bool,
}

/// Follows the unstable fold `P0` through its excursion to the right
/// (computed in closed form with matrix powers) until it returns to the
/// left, then tests the return point and its image against the stable
/// eigenline.
pub fn homoclinic_recursive<T: Real>(
    map: &Map2D<T>,
    s: &Saddle2D<T>,
    f: &UnstableFolds<T>,
    max_return_time: usize,
) -> Result<RecursiveResult> {
    let test = |pn: (T, T), pn1: (T, T), start: usize, n: usize| {
        let prod = stable_line(s, pn.0, pn.1) * stable_line(s, pn1.0, pn1.1);
        RecursiveResult {
            start_index: start,
            return_time: Some(n),
            p_n: Some([pn.0.as_f64(), pn.1.as_f64()]),
            p_n1: Some([pn1.0.as_f64(), pn1.1.as_f64()]),
            product: Some(prod.as_f64()),
            certified: prod <= T::zero(),
        }
    };
    let none = |start| RecursiveResult { start_index: start, return_time: None, p_n: None, p_n1: None, product: None, certified: false };

    // Start of the right excursion.
    let (start_index, start) = if f.p1.0 > T::zero() {
        (0usize, f.p0)
    } else {
        let first = test(f.p1, f.p2, 0, 1);
        if first.certified {
            return Ok(first);
        }
        let mut p = f.p1;
        let mut k = 1;
        loop {
            if k >= max_return_time {
                return Ok(none(0));
            }
            p = map.apply(p.0, p.1);
            k += 1;
            if !(p.0.is_finite_val() && p.1.is_finite_val()) {
                return Ok(none(0));
            }
            if p.0 > T::zero() {
                break (k, p);
            }
        }
    };
    for n in 1..=max_return_time {
        let pn = right_orbit_closed_form(map, start, n as u32)?;
        if pn.0 <= T::zero() {
            if start_index == 0 && n == 1 {
                continue;
            }
            let pn1 = map.apply(pn.0, pn.1);
            return Ok(test(pn, pn1, start_index, n));
        }
    }
    Ok(none(start_index))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HomoclinicVerdict {
    IntersectionCaseI,
    IntersectionCaseII,
    IntersectionRecursive(usize),
    NoneWithinBudget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomoclinicReport {
    pub verdict: HomoclinicVerdict,
    pub saddle_side: Side,
    pub saddle: [f64; 2],
    pub lambda_s: f64,
    pub lambda_u: f64,
    pub det_product: f64,
    pub y0: f64,
    pub p0: [f64; 2],
    pub p1: [f64; 2],
    pub p2: [f64; 2],
    pub case_i: CaseIResult,
    pub case_ii: Option<CaseIIResult>,
    pub case_ii_error: Option<String>,
    pub recursive: Option<RecursiveResult>,
    pub recursive_error: Option<String>,
}

/// Case I, then Case II, then the recursive border-return test; the
/// verdict is the first certified one. All three are evaluated for audit.
pub fn homoclinic_analysis<T: Real>(map: &Map2D<T>, side: Side, max_return_time: usize) -> Result<HomoclinicReport> {
    let prod = map.det_l() * map.det_r();
    if prod <= T::zero() {
        return Err(Error::NotInvertible(prod.as_f64()));
    }
    let s = saddle_2d(map, side)?;
    let f = unstable_fold_points(map, &s)?;
    let case_i = homoclinic_case_i(&s, &f);
    let (case_ii, case_ii_error) = match homoclinic_case_ii(map, &s, &f) {
        Ok(r) => (Some(r), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let (recursive, recursive_error) = match homoclinic_recursive(map, &s, &f, max_return_time) {
        Ok(r) => (Some(r), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let verdict = if case_i.certified {
        HomoclinicVerdict::IntersectionCaseI
    } else if case_ii.map(|c| c.certified).unwrap_or(false) {
        HomoclinicVerdict::IntersectionCaseII
    } else if let Some(RecursiveResult { certified: true, return_time: Some(n), .. }) = recursive {
        HomoclinicVerdict::IntersectionRecursive(n)
    } else {
        HomoclinicVerdict::NoneWithinBudget
    };
    let pt = |p: (T, T)| [p.0.as_f64(), p.1.as_f64()];
    Ok(HomoclinicReport {
        verdict,
        saddle_side: side,
        saddle: [s.x.as_f64(), s.y.as_f64()],
        lambda_s: s.lambda_s.as_f64(),
        lambda_u: s.lambda_u.as_f64(),
        det_product: prod.as_f64(),
        y0: f.y0.as_f64(),
        p0: pt(f.p0),
        p1: pt(f.p1),
        p2: pt(f.p2),
        case_i,
        case_ii,
        case_ii_error,
        recursive,
        recursive_error,
    })
}

/// Membership of one basic orbit in its existence and stability regions.
/// `None` marks an inequality whose denominator vanished.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrbitRegion {
    pub orbit: String,
    pub exists: Option<bool>,
    pub stable: Option<bool>,
    pub flags: Vec<String>,
}

fn ratio_sign<N: Num + Clone + PartialOrd>(num: N, den: N) -> Option<i8> {
    if den.is_zero() {
        return None;
    }
    let z = N::zero();
    let pos = (num > z && den > z) || (num < z && den < z);
    let neg = (num > z && den < z) || (num < z && den > z);
    Some(if pos { 1 } else if neg { -1 } else { 0 })
}

/// Existence and stability regions of the basic orbits of period `k`:
/// `O_L` and `O_R` for `k = 1`, the 2-cycle `RL` for `k = 2` and the
/// 3-cycle `RL²` for `k = 3`.
pub fn existence_stability_regions<N: Num + Clone + PartialOrd>(m: &Map2D<N>, k: usize) -> Result<Vec<OrbitRegion>> {
    let one = N::one();
    let (al, ar, bl, br, c, d) = (m.a_l.clone(), m.a_r.clone(), m.b_l.clone(), m.b_r.clone(), m.c.clone(), m.d.clone());
    let q = degeneracy_scalar(c.clone(), d.clone(), m.h1.clone(), m.h2.clone());
    let det_l = al.clone() * d.clone() - bl.clone() * c.clone();
    let det_r = ar.clone() * d.clone() - br.clone() * c.clone();
    let z = N::zero();
    match k {
        1 => {
            let mut out = Vec::new();
            for (name, a, b, det, want) in [("L", al, bl, det_l, -1i8), ("R", ar, br, det_r, 1i8)] {
                let den = (one.clone() - d.clone()) * (one.clone() - a.clone()) - b.clone() * c.clone();
                let mut flags = Vec::new();
                let exists = match ratio_sign(q.clone(), den) {
                    Some(s) => Some(s == want),
                    None => {
                        flags.push("fixed-point denominator is zero".to_string());
                        None
                    }
                };
                let tr = a.clone() + d.clone();
                let cond = det.clone() < one.clone()
                    && one.clone() + tr.clone() + det.clone() > z
                    && one.clone() - tr + det > z;
                let stable = exists.map(|e| e && cond);
                out.push(OrbitRegion { orbit: name.into(), exists, stable, flags });
            }
            Ok(out)
        }
        2 => {
            let prod = det_r.clone() * det_l.clone();
            let tr = c.clone() * (bl.clone() + br.clone()) + d.clone() * d.clone() + al.clone() * ar.clone();
            let den = prod.clone() - tr.clone() + one.clone();
            let fl = al.clone() + d.clone() + det_l + one.clone();
            let fr = ar.clone() + d.clone() + det_r + one.clone();
            let mut flags = Vec::new();
            let e1 = ratio_sign(q.clone() * fl, den.clone());
            let e2 = ratio_sign(q * fr, den);
            let exists = match (e1, e2) {
                (Some(a), Some(b)) => Some(a > 0 && b < 0),
                _ => {
                    flags.push("2-cycle denominator is zero".to_string());
                    None
                }
            };
            let neg_one = z.clone() - one.clone();
            let cond = neg_one.clone() < prod.clone()
                && prod.clone() < one.clone()
                && (neg_one - prod.clone()) < tr
                && tr < prod + one;
            Ok(vec![OrbitRegion { orbit: "RL".into(), exists, stable: exists.map(|e| e && cond), flags }])
        }
        3 => {
            let dd = d.clone() * d.clone();
            let ddd = dd.clone() * d.clone();
            let two = one.clone() + one.clone();
            let prod = det_l.clone() * det_l.clone() * det_r.clone();
            let tr = al.clone() * al.clone() * ar.clone()
                + ddd.clone()
                + c.clone()
                    * (al.clone() * bl.clone() + al.clone() * br.clone() + ar.clone() * bl.clone()
                        + d.clone() * (two * bl.clone() + br.clone()));
            let g = one.clone() - tr.clone() + prod.clone();
            let g1 = al.clone() * al.clone() * dd.clone() + al.clone() * al.clone() * d.clone() + al.clone() * al.clone()
                - (one.clone() + one.clone()) * al.clone() * bl.clone() * c.clone() * d.clone()
                - al.clone() * bl.clone() * c.clone()
                + al.clone() * dd.clone()
                + al.clone() * d.clone()
                + al.clone()
                + bl.clone() * bl.clone() * c.clone() * c.clone()
                - bl.clone() * c.clone() * d.clone()
                + bl.clone() * c.clone()
                + dd.clone()
                + d.clone()
                + one.clone();
            let common = al.clone() * ar.clone() + dd.clone() + al.clone() * ar.clone() * d.clone()
                + al.clone() * ar.clone() * dd.clone()
                + bl.clone() * br.clone() * c.clone() * c.clone()
                - al.clone() * br.clone() * c.clone() * d.clone()
                - ar.clone() * bl.clone() * c.clone() * d.clone()
                + one.clone();
            let k1 = ar.clone() + d.clone() + bl.clone() * c.clone() + ar.clone() * d.clone() + ar.clone() * dd.clone()
                - al.clone() * br.clone() * c.clone()
                - br.clone() * c.clone() * d.clone()
                + common.clone();
            let h1 = al.clone() + d.clone() + al.clone() * d.clone() + br.clone() * c.clone() + al.clone() * dd.clone()
                - ar.clone() * bl.clone() * c.clone()
                - bl.clone() * c.clone() * d.clone()
                + common;
            let mut flags = Vec::new();
            let s1 = ratio_sign(q.clone() * g1, g.clone());
            let s2 = ratio_sign(q.clone() * k1, g.clone());
            let s3 = ratio_sign(q * h1, g);
            let exists = match (s1, s2, s3) {
                (Some(a), Some(b), Some(cc)) => Some(a > 0 && b < 0 && cc < 0),
                _ => {
                    flags.push("3-cycle denominator G is zero".to_string());
                    None
                }
            };
            let neg_one = z - one.clone();
            let cond = neg_one.clone() < prod.clone()
                && prod.clone() < one.clone()
                && (neg_one - prod.clone()) < tr
                && tr < prod + one;
            Ok(vec![OrbitRegion { orbit: "RLL".into(), exists, stable: exists.map(|e| e && cond), flags }])
        }
        _ => Err(Error::InvalidArgument(format!("period {k} not supported (1, 2 or 3)"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::Ratio;

    fn chaotic() -> Map2D<f64> {
        Map2D { a_l: -1.77, a_r: 1.5, b_l: -0.9, b_r: -0.75, c: 0.6, d: 0.15, h1: -0.7, h2: -0.4 }
    }

    #[test]
    fn degeneracy_is_exact_with_rationals() {
        let r = |n: i64, d: i64| Ratio::new(n, d);
        let h1 = border_collision_h1(r(6, 10), r(15, 100), r(-4, 10)).unwrap();
        assert_eq!(h1, r(24, 85));
        assert_eq!(degeneracy_scalar(r(6, 10), r(15, 100), h1, r(-4, 10)), r(0, 1));
    }

    #[test]
    fn chaotic_fixed_points_and_saddle() {
        let m = chaotic();
        let fp = fixed_points_2d(&m).unwrap();
        assert!(fp.left.admissible);
        assert!((fp.left.x + 0.28848).abs() < 5e-4);
        let s = saddle_2d(&m, Side::Left).unwrap();
        assert!((s.lambda_u + 1.4277).abs() < 5e-4 && (s.lambda_s + 0.1922).abs() < 5e-4);
    }

    #[test]
    fn general_border_hit_matches_closed_form() {
        let m = chaotic();
        let s = saddle_2d(&m, Side::Left).unwrap();
        let closed = border_hit(&m, &s, s.lambda_u, s.v_u).unwrap();
        let general = s.y - s.x * s.v_u.1 / s.v_u.0;
        assert!((closed - general).abs() < 1e-12);
    }

    #[test]
    fn b_zero_fold_points() {
        // lower-triangular-free left piece: b_l = 0
        let m = Map2D { a_l: 0.2, a_r: -0.5, b_l: 0.0, b_r: 0.4, c: 0.5, d: 2.0, h1: -1.0, h2: 0.3 };
        let s = saddle_2d(&m, Side::Left).unwrap();
        let f = unstable_fold_points(&m, &s).unwrap();
        let along = (f.p0.0 - s.x) * s.v_u.1 - (f.p0.1 - s.y) * s.v_u.0;
        assert!(along.abs() < 1e-12);
        let p1 = m.apply(f.p0.0, f.p0.1);
        assert!((p1.0 - f.p1.0).abs() < 1e-12 && (p1.1 - f.p1.1).abs() < 1e-12);
    }

    #[test]
    fn table_branch_c0_right() {
        let m = Map2D { a_l: 0.5, a_r: 0.8, b_l: 0.3, b_r: -0.2, c: 0.0, d: 0.4, h1: 0.1, h2: 0.0 };
        assert_eq!(inverse_branch_table(&m, 0.5, 0.2).unwrap(), Some(Side::Right));
        assert_eq!(inverse_branch(&m, 0.5, 0.2).unwrap(), Side::Right);
    }

    #[test]
    fn power_base_cases() {
        let m = DMatrix::from_row_slice(2, 2, &[0.3, 0.7, -0.4, 1.1]);
        let p1 = matrix_power_closed_form(&m, 1).unwrap();
        assert!((p1 - &m).amax() < 1e-14);
        let p0 = matrix_power_closed_form(&m, 0).unwrap();
        assert!((p0 - DMatrix::identity(2, 2)).amax() < 1e-14);
        let dg = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 3.0]);
        let p4 = matrix_power_closed_form(&dg, 4).unwrap();
        assert_eq!(p4, DMatrix::from_row_slice(2, 2, &[16.0, 0.0, 0.0, 81.0]));
        let rep = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        assert!(matches!(matrix_power_closed_form(&rep, 3), Err(Error::RepeatedEigenvalues)));
    }

    #[test]
    fn regions_for_contracting_map() {
        let m = Map2D { a_l: 0.2, a_r: 0.3, b_l: 0.1, b_r: -0.1, c: 0.2, d: 0.1, h1: 0.5, h2: 0.1 };
        let r = existence_stability_regions(&m, 1).unwrap();
        assert_eq!(r[1].exists, Some(true));
        assert_eq!(r[1].stable, Some(true));
        assert_eq!(r[0].exists, Some(false));
        assert!(existence_stability_regions(&m, 4).is_err());
    }
}
