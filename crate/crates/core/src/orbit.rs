//! Closed-form iterates of an affine map within one linear subregion.

use nalgebra::{ComplexField, DMatrix, DVector};
use num_complex::Complex;

use crate::eigen::{eigen_structure, EigenStructure};
use crate::error::{Error, Result};
use crate::model::AffinePiece;
use crate::scalar::Real;

fn binom<T: Real>(t: u32, i: u32) -> T {
    if i > t {
        return T::zero();
    }
    let mut acc = T::one();
    for k in 0..i {
        acc = acc * T::from_u32(t - k).unwrap() / T::from_u32(k + 1).unwrap();
    }
    acc
}

fn cpow<T: Real>(l: Complex<T>, e: u32) -> Complex<T> {
    if e == 0 {
        Complex::new(T::one(), T::zero())
    } else {
        l.powu(e)
    }
}

/// `J^t x` via the Jordan decomposition of `J`.
pub fn power_apply<T: Real>(es: &EigenStructure<T>, x: &DVector<T>, t: u32) -> Result<DVector<T>> {
    let basis = es.basis_matrix();
    let xc = x.map(|v| Complex::new(v, T::zero()));
    let coeff = basis.lu().solve(&xc).ok_or(Error::DegenerateBasis)?;
    let n = x.len();
    let mut acc = DVector::<Complex<T>>::zeros(n);
    for b in &es.blocks {
        for r in 0..b.size {
            let c = coeff[b.start + r];
            // J^t w_{r+1} = sum_i C(t, i) λ^{t-i} w_{r+1-i}
            for i in 0..=r {
                let e = t as i64 - i as i64;
                if e < 0 {
                    break;
                }
                let f = cpow(b.eigenvalue, e as u32) * Complex::new(binom::<T>(t, i as u32), T::zero());
                acc += &es.vectors[b.start + r - i] * (c * f);
            }
        }
    }
    Ok(acc.map(|c| c.re))
}

/// State after `t` applications of `piece` starting from `z0`, evaluated
/// from the eigen decomposition rather than by iteration. The caller is
/// responsible for the orbit staying inside the piece's region.
pub fn orbit_closed_form<T: Real>(piece: &AffinePiece<T>, z0: &DVector<T>, t: u32) -> Result<DVector<T>> {
    let j = &piece.jacobian;
    let n = j.nrows();
    if z0.len() != n {
        return Err(Error::Dimension { expected: n, got: z0.len() });
    }
    let es = eigen_structure(j)?;
    let homogeneous = power_apply(&es, z0, t)?;
    let b = &piece.offset;
    let near_one = es
        .eigenvalues
        .iter()
        .any(|l| (*l - Complex::new(T::one(), T::zero())).modulus() <= T::lit(1e-9));
    let forced = if !near_one {
        let jt_b = power_apply(&es, b, t)?;
        let lhs = DMatrix::<T>::identity(n, n) - j;
        lhs.lu().solve(&(b - jt_b)).ok_or(Error::DegenerateBasis)?
    } else {
        // Eigenvalue one: the geometric-series shortcut is unavailable.
        let mut sum = DVector::<T>::zeros(n);
        let mut term = b.clone();
        for _ in 0..t {
            sum += &term;
            term = j * term;
        }
        sum
    };
    Ok(homogeneous + forced)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::RegionCode;

    fn piece(j: &[f64], b: &[f64]) -> AffinePiece<f64> {
        let n = b.len();
        AffinePiece { jacobian: DMatrix::from_row_slice(n, n, j), offset: DVector::from_row_slice(b), region: RegionCode::zeros(n) }
    }

    fn iterate(p: &AffinePiece<f64>, z0: &DVector<f64>, t: u32) -> DVector<f64> {
        (0..t).fold(z0.clone(), |z, _| p.apply(&z))
    }

    #[test]
    fn distinct_real_eigenvalues() {
        let p = piece(&[0.9, 0.3, -0.2, 0.4], &[0.0, 0.0]);
        let z0 = DVector::from_row_slice(&[1.0, -2.0]);
        assert!((orbit_closed_form(&p, &z0, 5).unwrap() - iterate(&p, &z0, 5)).norm() < 1e-9);
    }

    #[test]
    fn identity_accumulates_bias() {
        let p = piece(&[1.0, 0.0, 0.0, 1.0], &[0.3, -0.1]);
        let z = orbit_closed_form(&p, &DVector::zeros(2), 3).unwrap();
        assert!((z - DVector::from_row_slice(&[0.9, -0.3])).norm() < 1e-12);
    }

    #[test]
    fn spiral_modulus() {
        let (r, th) = (0.85f64, 0.4f64);
        let p = piece(&[r * th.cos(), -r * th.sin(), r * th.sin(), r * th.cos()], &[0.0, 0.0]);
        let z0 = DVector::from_row_slice(&[1.0, 0.5]);
        for t in 0..30 {
            let z = orbit_closed_form(&p, &z0, t).unwrap();
            assert!((z.norm() - r.powi(t as i32) * z0.norm()).abs() < 1e-9);
        }
    }

    #[test]
    fn jordan_block_orbit() {
        let p = piece(&[0.7, 1.0, 0.0, 0.7], &[0.2, 0.1]);
        let z0 = DVector::from_row_slice(&[0.3, -1.0]);
        for t in [0, 1, 2, 7, 20, 50] {
            let d = orbit_closed_form(&p, &z0, t).unwrap() - iterate(&p, &z0, t);
            assert!(d.norm() < 1e-8, "t={t}: {d}");
        }
    }
}
