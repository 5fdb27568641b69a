//! Eigen-decomposition with explicit Jordan-chain handling for repeated
//! eigenvalues.

use nalgebra::{ComplexField, DMatrix, DVector};
use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Relative distance below which two eigenvalues count as repeated.
pub const REPEATED_TOL: f64 = 1e-8;
/// Half-width of the band around the unit circle treated as marginal.
pub const MARGINAL_BAND: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EigClass {
    Stable,
    Unstable,
    Marginal,
}

pub fn classify_modulus<T: Real>(modulus: T) -> EigClass {
    let m = modulus.as_f64();
    if m < 1.0 - MARGINAL_BAND {
        EigClass::Stable
    } else if m > 1.0 + MARGINAL_BAND {
        EigClass::Unstable
    } else {
        EigClass::Marginal
    }
}

/// One Jordan block: basis columns `start..start + size`, ordered so that
/// `(J - λI) w_1 = 0` and `(J - λI) w_r = w_{r-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct JordanBlock<T: Real> {
    pub eigenvalue: Complex<T>,
    pub start: usize,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenStructure<T: Real> {
    /// Eigenvalue attached to each basis column (repeated per multiplicity).
    pub eigenvalues: Vec<Complex<T>>,
    /// Eigenvectors and generalized eigenvectors, one per column.
    pub vectors: Vec<DVector<Complex<T>>>,
    pub blocks: Vec<JordanBlock<T>>,
    pub classes: Vec<EigClass>,
}

impl<T: Real> EigenStructure<T> {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn count(&self, class: EigClass) -> usize {
        self.classes.iter().filter(|c| **c == class).count()
    }

    pub fn is_defective(&self) -> bool {
        self.blocks.iter().any(|b| b.size > 1)
    }

    pub fn has_complex(&self, class: EigClass) -> bool {
        self.eigenvalues
            .iter()
            .zip(&self.classes)
            .any(|(l, c)| *c == class && l.im != T::zero())
    }

    pub fn moduli(&self) -> Vec<T> {
        self.eigenvalues.iter().map(|l| l.modulus()).collect()
    }

    /// Basis matrix with the (generalized) eigenvectors as columns.
    pub fn basis_matrix(&self) -> DMatrix<Complex<T>> {
        let n = self.dim();
        DMatrix::from_fn(n, n, |i, j| self.vectors[j][i])
    }

    /// Real spanning vectors of the invariant subspace belonging to `class`.
    ///
    /// Real eigenvalues contribute their (real) vector, a complex pair
    /// contributes the real and imaginary parts of the vector with positive
    /// imaginary eigenvalue. The accompanying moduli repeat |λ| per vector.
    pub fn real_basis(&self, class: EigClass) -> (Vec<DVector<T>>, Vec<T>) {
        let mut out = Vec::new();
        let mut mods = Vec::new();
        for (k, lam) in self.eigenvalues.iter().enumerate() {
            if self.classes[k] != class {
                continue;
            }
            let v = &self.vectors[k];
            if lam.im == T::zero() {
                out.push(v.map(|c| c.re));
                mods.push(lam.modulus());
            } else if lam.im > T::zero() {
                out.push(v.map(|c| c.re));
                out.push(v.map(|c| c.im));
                mods.push(lam.modulus());
                mods.push(lam.modulus());
            }
        }
        (out, mods)
    }
}

fn cmp_eigen<T: Real>(a: &Complex<T>, b: &Complex<T>) -> std::cmp::Ordering {
    let key = |l: &Complex<T>| (-l.modulus().as_f64(), -l.re.as_f64(), -l.im.as_f64());
    key(a).partial_cmp(&key(b)).unwrap_or(std::cmp::Ordering::Equal)
}

fn to_complex<T: Real>(m: &DMatrix<T>) -> DMatrix<Complex<T>> {
    m.map(|x| Complex::new(x, T::zero()))
}

fn null_space<T: Real>(m: &DMatrix<Complex<T>>, tol: T) -> Vec<DVector<Complex<T>>> {
    let n = m.ncols();
    let svd = m.clone().svd(false, true);
    let vt = svd.v_t.expect("requested v_t");
    let scale = svd.singular_values.iter().fold(T::one(), |a, s| a.max(*s));
    let mut out = Vec::new();
    for i in 0..n {
        let s = if i < svd.singular_values.len() { svd.singular_values[i] } else { T::zero() };
        if s <= tol * scale {
            out.push(DVector::from_fn(n, |k, _| vt[(i, k)].conj()));
        }
    }
    out
}

fn rank<T: Real>(cols: &[DVector<Complex<T>>]) -> usize {
    if cols.is_empty() {
        return 0;
    }
    let n = cols[0].len();
    let m = DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i]);
    let sv = m.singular_values();
    let smax = sv.iter().fold(T::zero(), |a, s| a.max(*s));
    if smax == T::zero() {
        return 0;
    }
    let tol = smax * T::lit(1e-8);
    sv.iter().filter(|s| **s > tol).count()
}

fn normalize<T: Real>(v: &mut DVector<Complex<T>>) {
    let n = v.norm();
    if n > T::zero() {
        v.iter_mut().for_each(|c| *c = c.unscale(n));
    }
}

/// Rotates a complex vector so that its largest component is real positive,
/// then drops the (numerically zero) imaginary parts.
fn realify<T: Real>(v: &DVector<Complex<T>>) -> DVector<Complex<T>> {
    let mut best = 0;
    for i in 0..v.len() {
        if v[i].modulus() > v[best].modulus() {
            best = i;
        }
    }
    let p = v[best];
    let phase = if p.modulus() > T::zero() { p.conj().unscale(p.modulus()) } else { Complex::new(T::one(), T::zero()) };
    let mut w = v.map(|c| Complex::new((c * phase).re, T::zero()));
    normalize(&mut w);
    w
}

struct Group<T: Real> {
    value: Complex<T>,
    mult: usize,
}

fn group_eigenvalues<T: Real>(vals: &[Complex<T>]) -> Vec<Group<T>> {
    let tol = T::lit(REPEATED_TOL);
    let n = vals.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], i: usize) -> usize {
        let mut r = i;
        while p[r] != r {
            r = p[r];
        }
        p[i] = r;
        r
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let scale = T::one().max(vals[i].modulus()).max(vals[j].modulus());
            if (vals[i] - vals[j]).modulus() <= tol * scale {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[b] = a;
                }
            }
        }
    }
    let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
    for i in 0..n {
        let r = find(&mut parent, i);
        match groups.iter_mut().find(|g| g.0 == r) {
            Some(g) => g.1.push(i),
            None => groups.push((r, vec![i])),
        }
    }
    groups
        .into_iter()
        .map(|(_, idx)| {
            let sum = idx.iter().fold(Complex::new(T::zero(), T::zero()), |a, &i| a + vals[i]);
            Group { value: sum.unscale(T::from_usize_lossy(idx.len())), mult: idx.len() }
        })
        .collect()
}

/// Jordan chains for one eigenvalue group of algebraic multiplicity `mult`.
fn chains<T: Real>(
    j: &DMatrix<Complex<T>>,
    lam: Complex<T>,
    mult: usize,
) -> Result<Vec<Vec<DVector<Complex<T>>>>> {
    let n = j.nrows();
    let nmat = j - DMatrix::<Complex<T>>::identity(n, n) * lam;
    let tol = T::lit(1e-7);
    let mut kernels: Vec<Vec<DVector<Complex<T>>>> = vec![Vec::new()];
    let mut power = DMatrix::<Complex<T>>::identity(n, n);
    for _ in 0..mult {
        power = &nmat * &power;
        let ker = null_space(&power, tol);
        let done = ker.len() >= mult;
        kernels.push(ker);
        if done {
            break;
        }
    }
    if kernels.last().map(|k| k.len()).unwrap_or(0) < mult {
        // Could not resolve the full generalized eigenspace numerically.
        return Err(Error::DegenerateBasis);
    }
    let top = kernels.len() - 1;
    let mut chosen: Vec<DVector<Complex<T>>> = Vec::new();
    let mut out = Vec::new();
    for level in (1..=top).rev() {
        for cand in kernels[level].clone() {
            if chosen.len() >= mult {
                break;
            }
            let mut reference = chosen.clone();
            reference.extend(kernels[level - 1].iter().cloned());
            let before = rank(&reference);
            reference.push(cand.clone());
            if rank(&reference) <= before {
                continue;
            }
            let mut chain = vec![cand];
            for _ in 1..level {
                let next = &nmat * chain.last().unwrap();
                chain.push(next);
            }
            chain.reverse();
            chosen.extend(chain.iter().cloned());
            out.push(chain);
        }
    }
    if chosen.len() != mult {
        return Err(Error::DegenerateBasis);
    }
    Ok(out)
}

/// Full eigenstructure of a real square matrix.
pub fn eigen_structure<T: Real>(j: &DMatrix<T>) -> Result<EigenStructure<T>> {
    let n = j.nrows();
    if j.ncols() != n {
        return Err(Error::Dimension { expected: n, got: j.ncols() });
    }
    if n == 0 {
        return Ok(EigenStructure { eigenvalues: vec![], vectors: vec![], blocks: vec![], classes: vec![] });
    }
    let raw: Vec<Complex<T>> = j.complex_eigenvalues().iter().cloned().collect();
    let mut groups = group_eigenvalues(&raw);
    let jscale = j.iter().fold(T::one(), |a, x| a.max(x.abs()));
    for g in groups.iter_mut() {
        if g.value.im.abs() <= T::lit(1e-12) * jscale {
            g.value.im = T::zero();
        }
    }
    groups.sort_by(|a, b| cmp_eigen(&a.value, &b.value));
    let jc = to_complex(j);

    let mut eigenvalues = Vec::with_capacity(n);
    let mut vectors = Vec::with_capacity(n);
    let mut blocks = Vec::new();
    // Chains for positive-imaginary groups are reused (conjugated) for their partner.
    let mut cache: Vec<(Complex<T>, Vec<Vec<DVector<Complex<T>>>>)> = Vec::new();
    for g in groups.iter() {
        let mut chs = if g.value.im < T::zero() {
            let partner = cache.iter().find(|(v, _)| (v.conj() - g.value).modulus() <= T::lit(REPEATED_TOL) * T::one().max(v.modulus()));
            match partner {
                Some((_, c)) => c.iter().map(|ch| ch.iter().map(|v| v.map(|x| x.conj())).collect()).collect(),
                None => chains(&jc, g.value, g.mult)?,
            }
        } else {
            chains(&jc, g.value, g.mult)?
        };
        if g.value.im == T::zero() {
            for ch in chs.iter_mut() {
                // Real generalized eigenvectors: rotate the chain by the phase of its top vector.
                let top = ch.last().unwrap().clone();
                let real_top = realify(&top);
                let idx = (0..top.len()).fold(0, |b, i| if top[i].modulus() > top[b].modulus() { i } else { b });
                let ratio = if top[idx].modulus() > T::zero() { real_top[idx] / top[idx] } else { Complex::new(T::one(), T::zero()) };
                for v in ch.iter_mut() {
                    *v = v.map(|x| Complex::new((x * ratio).re, T::zero()));
                }
            }
        } else if g.value.im > T::zero() {
            cache.push((g.value, chs.clone()));
        }
        if chs.iter().all(|c| c.len() == 1) {
            for c in chs.iter_mut() {
                normalize(&mut c[0]);
            }
        }
        for ch in chs {
            blocks.push(JordanBlock { eigenvalue: g.value, start: vectors.len(), size: ch.len() });
            for v in ch {
                eigenvalues.push(g.value);
                vectors.push(v);
            }
        }
    }
    let classes = eigenvalues.iter().map(|l| classify_modulus(l.modulus())).collect();
    let es = EigenStructure { eigenvalues, vectors, blocks, classes };
    let basis = es.basis_matrix();
    let sv = basis.singular_values();
    let smax = sv.iter().fold(T::zero(), |a, s| a.max(*s));
    let smin = sv.iter().fold(smax, |a, s| a.min(*s));
    if smax == T::zero() || smin <= T::lit(1e-12) * smax {
        return Err(Error::DegenerateBasis);
    }
    Ok(es)
}
