//! Piecewise-affine model variants, region codes and per-region affine maps.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Binary code selecting a linear subregion. Bit `i` is set iff the `i`-th
/// pre-activation is strictly positive.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct RegionCode(pub Vec<bool>);

impl RegionCode {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn zeros(n: usize) -> Self {
        RegionCode(vec![false; n])
    }

    pub fn ones(n: usize) -> Self {
        RegionCode(vec![true; n])
    }

    pub fn hamming(&self, other: &RegionCode) -> usize {
        self.0.iter().zip(&other.0).filter(|(a, b)| a != b).count()
    }

    pub fn flipped(&self, bits: &[usize]) -> RegionCode {
        let mut c = self.clone();
        for &b in bits {
            c.0[b] = !c.0[b];
        }
        c
    }

    pub fn from_index(index: u64, n: usize) -> Self {
        RegionCode((0..n).map(|i| (index >> (n - 1 - i)) & 1 == 1).collect())
    }
}

impl fmt::Display for RegionCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.0 {
            f.write_str(if *b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl FromStr for RegionCode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::Parse(format!("invalid region bit '{other}'"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(RegionCode)
    }
}

impl Serialize for RegionCode {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for RegionCode {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Affine map `z -> J z + b` valid on one linear subregion.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinePiece<T: Real> {
    pub jacobian: DMatrix<T>,
    pub offset: DVector<T>,
    pub region: RegionCode,
}

impl<T: Real> AffinePiece<T> {
    pub fn apply(&self, z: &DVector<T>) -> DVector<T> {
        &self.jacobian * z + &self.offset
    }

    pub fn dim(&self) -> usize {
        self.offset.len()
    }
}

/// General 2D piecewise-linear map switching on the sign of `x`:
/// `T(x, y) = A_{L/R} (x, y) + (h1, h2)` with
/// `A_L = [[a_l, c], [b_l, d]]` for `x <= 0` and `A_R = [[a_r, c], [b_r, d]]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Map2D<T> {
    pub a_l: T,
    pub a_r: T,
    pub b_l: T,
    pub b_r: T,
    pub c: T,
    pub d: T,
    pub h1: T,
    pub h2: T,
}

impl<T: Real> Map2D<T> {
    pub fn left(&self) -> DMatrix<T> {
        DMatrix::from_row_slice(2, 2, &[self.a_l, self.c, self.b_l, self.d])
    }

    pub fn right(&self) -> DMatrix<T> {
        DMatrix::from_row_slice(2, 2, &[self.a_r, self.c, self.b_r, self.d])
    }

    pub fn bias(&self) -> DVector<T> {
        DVector::from_row_slice(&[self.h1, self.h2])
    }

    pub fn det_l(&self) -> T {
        self.a_l * self.d - self.b_l * self.c
    }

    pub fn det_r(&self) -> T {
        self.a_r * self.d - self.b_r * self.c
    }

    pub fn trace_l(&self) -> T {
        self.a_l + self.d
    }

    pub fn trace_r(&self) -> T {
        self.a_r + self.d
    }

    pub fn apply(&self, x: T, y: T) -> (T, T) {
        if x <= T::zero() {
            (self.a_l * x + self.c * y + self.h1, self.b_l * x + self.d * y + self.h2)
        } else {
            (self.a_r * x + self.c * y + self.h1, self.b_r * x + self.d * y + self.h2)
        }
    }

    pub fn get(&self, name: &str) -> Option<T> {
        Some(match name {
            "a_l" => self.a_l,
            "a_r" => self.a_r,
            "b_l" => self.b_l,
            "b_r" => self.b_r,
            "c" => self.c,
            "d" => self.d,
            "h1" => self.h1,
            "h2" => self.h2,
            _ => return None,
        })
    }

    pub fn set(&mut self, name: &str, v: T) -> bool {
        let slot = match name {
            "a_l" => &mut self.a_l,
            "a_r" => &mut self.a_r,
            "b_l" => &mut self.b_l,
            "b_r" => &mut self.b_r,
            "c" => &mut self.c,
            "d" => &mut self.d,
            "h1" => &mut self.h1,
            "h2" => &mut self.h2,
            _ => return false,
        };
        *slot = v;
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Standard,
    Shallow,
    AlmostLinear,
    #[serde(rename = "general-2d")]
    General2d,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Standard => "standard",
            Variant::Shallow => "shallow",
            Variant::AlmostLinear => "almost-linear",
            Variant::General2d => "general-2d",
        })
    }
}

/// A piecewise-affine recurrent model.
///
/// * `Standard`: `z' = A z + W relu(z) + h`
/// * `AlmostLinear`: as standard, but only the last `p` units pass through
///   the ReLU; the first `M - p` are linear.
/// * `Shallow`: `z' = A z + W1 relu(W2 z + h2) + h1`
/// * `General2d`: the two-piece planar map [`Map2D`].
#[derive(Debug, Clone, PartialEq)]
pub enum PlModel<T: Real> {
    Standard { a: DMatrix<T>, w: DMatrix<T>, h: DVector<T> },
    AlmostLinear { a: DMatrix<T>, w: DMatrix<T>, h: DVector<T>, p: usize },
    Shallow { a: DMatrix<T>, w1: DMatrix<T>, w2: DMatrix<T>, h1: DVector<T>, h2: DVector<T> },
    General2d(Map2D<T>),
}

fn check_square<T: Real>(name: &str, m: &DMatrix<T>, n: usize) -> Result<()> {
    if m.nrows() != n || m.ncols() != n {
        return Err(Error::InvalidModel(format!("{name} must be {n}x{n}, got {}x{}", m.nrows(), m.ncols())));
    }
    Ok(())
}

fn relu<T: Real>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        T::zero()
    }
}

impl<T: Real> PlModel<T> {
    /// Standard PLRNN. `A` and `W` may be dense; see [`PlModel::is_canonical`].
    pub fn standard(a: DMatrix<T>, w: DMatrix<T>, h: DVector<T>) -> Result<Self> {
        let m = h.len();
        check_square("A", &a, m)?;
        check_square("W", &w, m)?;
        Ok(PlModel::Standard { a, w, h })
    }

    pub fn almost_linear(a: DMatrix<T>, w: DMatrix<T>, h: DVector<T>, p: usize) -> Result<Self> {
        let m = h.len();
        check_square("A", &a, m)?;
        check_square("W", &w, m)?;
        if p > m {
            return Err(Error::InvalidModel(format!("P = {p} exceeds M = {m}")));
        }
        Ok(PlModel::AlmostLinear { a, w, h, p })
    }

    pub fn shallow(a: DMatrix<T>, w1: DMatrix<T>, w2: DMatrix<T>, h1: DVector<T>, h2: DVector<T>) -> Result<Self> {
        let m = h1.len();
        let hh = h2.len();
        check_square("A", &a, m)?;
        if hh == 0 {
            return Err(Error::InvalidModel("shallow model needs H >= 1".into()));
        }
        if w1.nrows() != m || w1.ncols() != hh {
            return Err(Error::InvalidModel(format!("W1 must be {m}x{hh}, got {}x{}", w1.nrows(), w1.ncols())));
        }
        if w2.nrows() != hh || w2.ncols() != m {
            return Err(Error::InvalidModel(format!("W2 must be {hh}x{m}, got {}x{}", w2.nrows(), w2.ncols())));
        }
        Ok(PlModel::Shallow { a, w1, w2, h1, h2 })
    }

    pub fn general_2d(map: Map2D<T>) -> Self {
        PlModel::General2d(map)
    }

    pub fn variant(&self) -> Variant {
        match self {
            PlModel::Standard { .. } => Variant::Standard,
            PlModel::AlmostLinear { .. } => Variant::AlmostLinear,
            PlModel::Shallow { .. } => Variant::Shallow,
            PlModel::General2d(_) => Variant::General2d,
        }
    }

    pub fn as_map2d(&self) -> Option<&Map2D<T>> {
        match self {
            PlModel::General2d(m) => Some(m),
            _ => None,
        }
    }

    /// State dimension M.
    pub fn dim(&self) -> usize {
        match self {
            PlModel::Standard { h, .. } | PlModel::AlmostLinear { h, .. } => h.len(),
            PlModel::Shallow { h1, .. } => h1.len(),
            PlModel::General2d(_) => 2,
        }
    }

    /// Length of a region code.
    pub fn code_len(&self) -> usize {
        match self {
            PlModel::Shallow { h2, .. } => h2.len(),
            PlModel::General2d(_) => 1,
            _ => self.dim(),
        }
    }

    /// Indices of bits that can take both values.
    pub fn free_bits(&self) -> Vec<usize> {
        match self {
            PlModel::AlmostLinear { h, p, .. } => (h.len() - p..h.len()).collect(),
            _ => (0..self.code_len()).collect(),
        }
    }

    /// True when `A` is diagonal and `W` has a zero diagonal (standard and
    /// almost-linear variants); always true for the other variants.
    pub fn is_canonical(&self) -> bool {
        match self {
            PlModel::Standard { a, w, .. } | PlModel::AlmostLinear { a, w, .. } => {
                let n = a.nrows();
                (0..n).all(|i| (0..n).all(|j| i == j || a[(i, j)] == T::zero())) && (0..n).all(|i| w[(i, i)] == T::zero())
            }
            PlModel::Shallow { a, .. } => {
                let n = a.nrows();
                (0..n).all(|i| (0..n).all(|j| i == j || a[(i, j)] == T::zero()))
            }
            PlModel::General2d(_) => true,
        }
    }

    fn check_dim(&self, z: &DVector<T>) -> Result<()> {
        if z.len() != self.dim() {
            return Err(Error::Dimension { expected: self.dim(), got: z.len() });
        }
        Ok(())
    }

    pub fn check_region(&self, r: &RegionCode) -> Result<()> {
        if r.len() != self.code_len() {
            return Err(Error::InvalidRegion { code: r.to_string(), reason: format!("expected {} bits", self.code_len()) });
        }
        if let PlModel::AlmostLinear { h, p, .. } = self {
            if r.0[..h.len() - p].iter().any(|b| !b) {
                return Err(Error::InvalidRegion { code: r.to_string(), reason: "linear units must have bit 1".into() });
            }
        }
        Ok(())
    }

    pub fn region_of(&self, z: &DVector<T>) -> Result<RegionCode> {
        self.check_dim(z)?;
        Ok(match self {
            PlModel::Standard { .. } => RegionCode(z.iter().map(|x| *x > T::zero()).collect()),
            PlModel::AlmostLinear { p, .. } => {
                let lin = z.len() - p;
                RegionCode(z.iter().enumerate().map(|(i, x)| i < lin || *x > T::zero()).collect())
            }
            PlModel::Shallow { w2, h2, .. } => {
                let pre = w2 * z + h2;
                RegionCode(pre.iter().map(|x| *x > T::zero()).collect())
            }
            PlModel::General2d(_) => RegionCode(vec![z[0] > T::zero()]),
        })
    }

    pub fn affine_piece(&self, r: &RegionCode) -> Result<AffinePiece<T>> {
        self.check_region(r)?;
        let diag = |n: usize| DMatrix::from_fn(n, n, |i, j| if i == j && r.0[i] { T::one() } else { T::zero() });
        let (jacobian, offset) = match self {
            PlModel::Standard { a, w, h } | PlModel::AlmostLinear { a, w, h, .. } => (a + w * diag(h.len()), h.clone()),
            PlModel::Shallow { a, w1, w2, h1, h2 } => {
                let dm = diag(h2.len());
                let wd = w1 * dm;
                (a + &wd * w2, &wd * h2 + h1)
            }
            PlModel::General2d(m) => (if r.0[0] { m.right() } else { m.left() }, m.bias()),
        };
        Ok(AffinePiece { jacobian, offset, region: r.clone() })
    }

    pub fn jacobian(&self, r: &RegionCode) -> Result<DMatrix<T>> {
        Ok(self.affine_piece(r)?.jacobian)
    }

    pub fn step(&self, z: &DVector<T>) -> Result<DVector<T>> {
        self.check_dim(z)?;
        Ok(match self {
            PlModel::Standard { a, w, h } => a * z + w * z.map(relu) + h,
            PlModel::AlmostLinear { a, w, h, p } => {
                let lin = z.len() - p;
                let phi = DVector::from_fn(z.len(), |i, _| if i < lin { z[i] } else { relu(z[i]) });
                a * z + w * phi + h
            }
            PlModel::Shallow { a, w1, w2, h1, h2 } => a * z + w1 * (w2 * z + h2).map(relu) + h1,
            PlModel::General2d(m) => {
                let (x, y) = m.apply(z[0], z[1]);
                DVector::from_row_slice(&[x, y])
            }
        })
    }

    /// All valid region codes, or `None` when there are more than `cap`.
    pub fn all_regions(&self, cap: usize) -> Option<Vec<RegionCode>> {
        let free = self.free_bits();
        if free.len() >= 63 || (1usize << free.len()) > cap {
            return None;
        }
        let base = match self {
            PlModel::AlmostLinear { .. } => RegionCode::ones(self.code_len()),
            _ => RegionCode::zeros(self.code_len()),
        };
        let k = free.len();
        Some(
            (0..(1u64 << k))
                .map(|idx| {
                    let mut c = base.clone();
                    for (pos, &bit) in free.iter().enumerate() {
                        c.0[bit] = (idx >> (k - 1 - pos)) & 1 == 1;
                    }
                    c
                })
                .collect(),
        )
    }

    /// Equivalent standard two-unit PLRNN of a general 2D map.
    ///
    /// The linear part carries the full left matrix and the ReLU of `x` adds
    /// the jump to the right matrix, so `A` is dense here.
    pub fn to_plrnn(&self) -> Result<PlModel<T>> {
        let m = self.as_map2d().ok_or_else(|| Error::InvalidArgument("to_plrnn needs a general-2d model".into()))?;
        let a = m.left();
        let w = DMatrix::from_row_slice(2, 2, &[m.a_r - m.a_l, T::zero(), m.b_r - m.b_l, T::zero()]);
        PlModel::standard(a, w, m.bias())
    }

    /// Reads a named scalar parameter. General-2d models use the map's
    /// names (`a_l`, `h1`, ...); others use `h[i]` (alias `h1[i]`), `h2[i]`,
    /// `A[i][j]`, `W[i][j]`, `W1[i][j]`, `W2[i][j]`.
    pub fn param(&self, name: &str) -> Option<T> {
        let mut copy = self.clone();
        copy.param_slot(name).map(|s| *s)
    }

    pub fn set_param(&mut self, name: &str, v: T) -> Result<()> {
        match self.param_slot(name) {
            Some(s) => {
                *s = v;
                Ok(())
            }
            None => Err(Error::InvalidArgument(format!("unknown parameter '{name}' for {} model", self.variant()))),
        }
    }

    fn param_slot(&mut self, name: &str) -> Option<&mut T> {
        if let PlModel::General2d(m) = self {
            return match name {
                "a_l" => Some(&mut m.a_l),
                "a_r" => Some(&mut m.a_r),
                "b_l" => Some(&mut m.b_l),
                "b_r" => Some(&mut m.b_r),
                "c" => Some(&mut m.c),
                "d" => Some(&mut m.d),
                "h1" => Some(&mut m.h1),
                "h2" => Some(&mut m.h2),
                _ => None,
            };
        }
        let (base, idx) = parse_indexed(name)?;
        match (self, base) {
            (PlModel::Standard { a, .. } | PlModel::AlmostLinear { a, .. } | PlModel::Shallow { a, .. }, "A") => mat_slot(a, &idx),
            (PlModel::Standard { w, .. } | PlModel::AlmostLinear { w, .. }, "W") => mat_slot(w, &idx),
            (PlModel::Standard { h, .. } | PlModel::AlmostLinear { h, .. }, "h" | "h1") => vec_slot(h, &idx),
            (PlModel::Shallow { w1, .. }, "W1") => mat_slot(w1, &idx),
            (PlModel::Shallow { w2, .. }, "W2") => mat_slot(w2, &idx),
            (PlModel::Shallow { h1, .. }, "h" | "h1") => vec_slot(h1, &idx),
            (PlModel::Shallow { h2, .. }, "h2") => vec_slot(h2, &idx),
            _ => None,
        }
    }
}

fn vec_slot<'a, T: Real>(v: &'a mut DVector<T>, idx: &[usize]) -> Option<&'a mut T> {
    match idx {
        [i] if *i < v.len() => Some(&mut v[*i]),
        _ => None,
    }
}

fn mat_slot<'a, T: Real>(m: &'a mut DMatrix<T>, idx: &[usize]) -> Option<&'a mut T> {
    match idx {
        [i, j] if *i < m.nrows() && *j < m.ncols() => Some(&mut m[(*i, *j)]),
        _ => None,
    }
}

fn parse_indexed(name: &str) -> Option<(&str, Vec<usize>)> {
    let open = name.find('[')?;
    let base = &name[..open];
    let mut idx = Vec::new();
    for part in name[open..].split('[').skip(1) {
        idx.push(part.strip_suffix(']')?.trim().parse().ok()?);
    }
    Some((base, idx))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn region_code_roundtrip() {
        let r: RegionCode = "0110".parse().unwrap();
        assert_eq!(r.to_string(), "0110");
        assert_eq!(r.hamming(&RegionCode::zeros(4)), 2);
        assert_eq!(RegionCode::from_index(6, 4), r);
        assert!("01x".parse::<RegionCode>().is_err());
    }

    #[test]
    fn param_access() {
        let mut m = PlModel::<f64>::standard(DMatrix::identity(2, 2), DMatrix::zeros(2, 2), DVector::zeros(2)).unwrap();
        m.set_param("h[1]", 0.5).unwrap();
        m.set_param("W[0][1]", 0.25).unwrap();
        assert_eq!(m.param("h1[1]"), Some(0.5));
        assert_eq!(m.param("W[0][1]"), Some(0.25));
        assert!(m.set_param("W1[0][0]", 1.0).is_err());
        assert!(m.set_param("h[7]", 1.0).is_err());
    }

    #[test]
    fn alrnn_regions_have_forced_bits() {
        let m = PlModel::<f64>::almost_linear(DMatrix::identity(3, 3), DMatrix::zeros(3, 3), DVector::zeros(3), 1).unwrap();
        let all = m.all_regions(16).unwrap();
        assert_eq!(all.len(), 2);
        assert!(all.iter().all(|r| r.0[0] && r.0[1]));
        assert!(m.check_region(&"011".parse().unwrap()).is_err());
    }
}
