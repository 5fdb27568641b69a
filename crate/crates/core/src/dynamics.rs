//! Simulation, Lyapunov spectra, parameter sweeps and grid basins.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::PlModel;
use crate::scalar::Real;
use crate::scyfi::CyclePoint;

pub const DIVERGENCE_NORM: f64 = 1e8;
pub const REORTHO_PERIOD: usize = 10;
pub const DEFAULT_TRANSIENT: usize = 1000;
pub const BASIN_TOL: f64 = 1e-4;

fn diverged<T: Real>(z: &DVector<T>) -> bool {
    !z.iter().all(|x| x.is_finite_val()) || z.norm() > T::lit(DIVERGENCE_NORM)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T: Real> {
    pub states: Vec<DVector<T>>,
    /// Step index at which the state left the finite range.
    pub diverged_at: Option<usize>,
}

/// States `z_transient, ..., z_{t-1}` of the orbit started at `z_0 = z0`.
pub fn simulate<T: Real>(model: &PlModel<T>, z0: &DVector<T>, t: usize, transient: usize) -> Result<Trajectory<T>> {
    if t <= transient {
        return Err(Error::InvalidArgument(format!("T = {t} must exceed transient = {transient}")));
    }
    if z0.len() != model.dim() {
        return Err(Error::Dimension { expected: model.dim(), got: z0.len() });
    }
    let mut states = Vec::with_capacity(t - transient);
    let mut z = z0.clone();
    for k in 0..t {
        if diverged(&z) {
            return Ok(Trajectory { states, diverged_at: Some(k) });
        }
        if k >= transient {
            states.push(z.clone());
        }
        if k + 1 < t {
            z = model.step(&z)?;
        }
    }
    Ok(Trajectory { states, diverged_at: None })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovSpectrum {
    /// Descending.
    pub exponents: Vec<f64>,
    /// Mean of `ln |det J|` along the same steps.
    pub mean_log_det: f64,
    pub steps: usize,
}

/// Lyapunov spectrum over `t` steps after `transient` steps, from exact
/// per-region Jacobians with QR re-orthonormalization every
/// [`REORTHO_PERIOD`] steps.
pub fn lyapunov_exponents<T: Real>(model: &PlModel<T>, z0: &DVector<T>, t: usize, transient: usize) -> Result<LyapunovSpectrum> {
    if t == 0 {
        return Err(Error::InvalidArgument("T must be positive".into()));
    }
    let n = model.dim();
    let mut z = z0.clone();
    for k in 0..transient {
        z = model.step(&z)?;
        if diverged(&z) {
            return Err(Error::Diverged { step: k, partial: Vec::new() });
        }
    }
    let mut q = DMatrix::<T>::identity(n, n);
    let mut sums = vec![0.0f64; n];
    let mut log_det = 0.0f64;
    let absorb = |q: &mut DMatrix<T>, sums: &mut [f64]| {
        let qr = q.clone().qr();
        let r = qr.r();
        let mut qm = qr.q();
        for i in 0..n {
            let d = r[(i, i)];
            sums[i] += d.abs().as_f64().ln();
            if d < T::zero() {
                qm.column_mut(i).neg_mut();
            }
        }
        *q = qm;
    };
    for k in 0..t {
        let j = model.jacobian(&model.region_of(&z)?)?;
        log_det += j.determinant().abs().as_f64().ln();
        q = &j * &q;
        z = model.step(&z)?;
        if diverged(&z) || !q.iter().all(|x| x.is_finite_val()) {
            let partial = sums.iter().map(|s| s / (k.max(1) as f64)).collect();
            return Err(Error::Diverged { step: k, partial });
        }
        if (k + 1) % REORTHO_PERIOD == 0 || k + 1 == t {
            absorb(&mut q, &mut sums);
        }
    }
    let mut exponents: Vec<f64> = sums.iter().map(|s| s / t as f64).collect();
    exponents.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    Ok(LyapunovSpectrum { exponents, mean_log_det: log_det / t as f64, steps: t })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitPolicy {
    Fixed(Vec<f64>),
    /// Start each value from the last state of the previous one.
    FollowAttractor(Vec<f64>),
    /// Uniform in `[lo, hi]` per coordinate, drawn from the sweep seed.
    Random { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub param: String,
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub transient: usize,
    pub record: usize,
    pub init: InitPolicy,
    pub seed: u64,
}

impl SweepSpec {
    pub fn values(&self) -> Vec<f64> {
        (0..self.count).map(|i| self.lo + (self.hi - self.lo) * i as f64 / (self.count - 1) as f64).collect()
    }

    fn validate(&self) -> Result<()> {
        if !(self.lo < self.hi) {
            return Err(Error::InvalidArgument("sweep requires lo < hi".into()));
        }
        if self.count < 2 {
            return Err(Error::InvalidArgument("sweep requires count >= 2".into()));
        }
        if self.record == 0 {
            return Err(Error::InvalidArgument("sweep requires record >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepColumn<T: Real> {
    pub value: f64,
    pub samples: Vec<DVector<T>>,
    pub largest_le: Option<f64>,
    /// Smallest `k` with the recorded tail closing up after `k` steps.
    pub period: Option<usize>,
    pub diverged: bool,
}

/// Smallest period (up to `max_k`) of the tail of a recorded orbit.
pub fn detect_period<T: Real>(samples: &[DVector<T>], max_k: usize) -> Option<usize> {
    let n = samples.len();
    if n < 2 {
        return None;
    }
    let tail = n.min(4 * max_k + 4);
    let base = n - tail;
    (1..=max_k.min(tail - 1)).find(|&k| {
        (base..n - k).all(|i| {
            let a = &samples[i];
            (&samples[i + k] - a).norm() <= T::lit(1e-9) * (T::one() + a.norm())
        })
    })
}

/// One column per parameter value: post-transient samples, largest
/// Lyapunov exponent and detected period. Divergence is recorded and the
/// sweep continues.
pub fn bifurcation_sweep<T: Real>(model: &PlModel<T>, spec: &SweepSpec) -> Result<Vec<SweepColumn<T>>> {
    spec.validate()?;
    let n = model.dim();
    if model.param(&spec.param).is_none() {
        return Err(Error::InvalidArgument(format!("unknown parameter {}", spec.param)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let to_vec = |v: &[f64]| -> Result<DVector<T>> {
        if v.len() != n {
            return Err(Error::Dimension { expected: n, got: v.len() });
        }
        Ok(DVector::from_iterator(n, v.iter().map(|x| T::lit(*x))))
    };
    let mut carry: Option<DVector<T>> = None;
    let mut out = Vec::with_capacity(spec.count);
    for value in spec.values() {
        let mut m = model.clone();
        m.set_param(&spec.param, T::lit(value))?;
        let z0 = match &spec.init {
            InitPolicy::Fixed(v) => to_vec(v)?,
            InitPolicy::FollowAttractor(v) => match carry.take() {
                Some(z) => z,
                None => to_vec(v)?,
            },
            InitPolicy::Random { lo, hi } => DVector::from_iterator(n, (0..n).map(|_| T::lit(rng.random_range(*lo..=*hi)))),
        };
        let traj = simulate(&m, &z0, spec.transient + spec.record, spec.transient)?;
        let div = traj.diverged_at.is_some();
        let largest_le = if div || traj.states.is_empty() {
            None
        } else {
            lyapunov_exponents(&m, &traj.states[0], spec.record, 0).ok().map(|s| s.exponents[0])
        };
        let period = if div { None } else { detect_period(&traj.states, 64) };
        if let Some(last) = traj.states.last() {
            if !div {
                carry = Some(last.clone());
            }
        }
        out.push(SweepColumn { value, samples: traj.states, largest_le, period, diverged: div });
    }
    Ok(out)
}

/// Midpoints between consecutive columns whose regime (detected period,
/// sign of the largest exponent, divergence) differs.
pub fn regime_changes<T: Real>(cols: &[SweepColumn<T>]) -> Vec<f64> {
    let sig = |c: &SweepColumn<T>| (c.diverged, c.period, c.period.is_none() && c.largest_le.map(|l| l > 0.0).unwrap_or(false));
    cols.windows(2)
        .filter(|w| sig(&w[0]) != sig(&w[1]))
        .map(|w| 0.5 * (w[0].value + w[1].value))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum Attractor<T: Real> {
    Cycle(CyclePoint<T>),
    /// Point cloud of a non-periodic attractor; reached when within
    /// `radius` of a sample.
    Sampled { points: Vec<DVector<T>>, radius: T },
}

struct Detector<T: Real> {
    cycle: Option<Vec<DVector<T>>>,
    tol: T,
    hash: HashMap<Vec<i64>, Vec<usize>>,
    points: Vec<DVector<T>>,
    radius: T,
}

impl<T: Real> Detector<T> {
    fn new(a: &Attractor<T>, tol: T) -> Self {
        match a {
            Attractor::Cycle(c) => Detector { cycle: Some(c.points.clone()), tol, hash: HashMap::new(), points: Vec::new(), radius: T::zero() },
            Attractor::Sampled { points, radius } => {
                let mut hash: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
                for (i, p) in points.iter().enumerate() {
                    hash.entry(key(p, *radius)).or_default().push(i);
                }
                Detector { cycle: None, tol, hash, points: points.clone(), radius: *radius }
            }
        }
    }

    fn hit(&self, z: &DVector<T>) -> bool {
        if let Some(c) = &self.cycle {
            return c.iter().any(|p| (p - z).norm() < self.tol);
        }
        let k = key(z, self.radius);
        let n = k.len();
        let total = 3usize.pow(n as u32);
        for code in 0..total {
            let mut c = code;
            let nb: Vec<i64> = k
                .iter()
                .map(|x| {
                    let off = (c % 3) as i64 - 1;
                    c /= 3;
                    x + off
                })
                .collect();
            if let Some(ix) = self.hash.get(&nb) {
                if ix.iter().any(|&i| (&self.points[i] - z).norm() < self.radius) {
                    return true;
                }
            }
        }
        false
    }
}

fn key<T: Real>(p: &DVector<T>, r: T) -> Vec<i64> {
    p.iter().map(|x| (x.as_f64() / r.as_f64()).floor() as i64).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasinLabel {
    Attractor(usize),
    Divergent,
    Undecided,
}

impl std::fmt::Display for BasinLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BasinLabel::Attractor(i) => write!(f, "{i}"),
            BasinLabel::Divergent => write!(f, "divergent"),
            BasinLabel::Undecided => write!(f, "undecided"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BasinSpec<T: Real> {
    /// Box over the first two state coordinates.
    pub lower: [T; 2],
    pub upper: [T; 2],
    pub resolution: [usize; 2],
    pub max_iters: usize,
    pub tol: T,
    pub threads: usize,
    /// Remaining coordinates for models of dimension above two.
    pub base: Option<DVector<T>>,
}

impl<T: Real> BasinSpec<T> {
    pub fn new(lower: [T; 2], upper: [T; 2], resolution: [usize; 2], max_iters: usize) -> Self {
        BasinSpec { lower, upper, resolution, max_iters, tol: T::lit(BASIN_TOL), threads: 1, base: None }
    }

    pub fn cell_size(&self) -> [T; 2] {
        [
            (self.upper[0] - self.lower[0]) / T::from_usize_lossy(self.resolution[0]),
            (self.upper[1] - self.lower[1]) / T::from_usize_lossy(self.resolution[1]),
        ]
    }

    /// Center of cell `(ix, iy)`.
    pub fn center(&self, ix: usize, iy: usize) -> [T; 2] {
        let h = self.cell_size();
        let half = T::lit(0.5);
        [
            self.lower[0] + h[0] * (T::from_usize_lossy(ix) + half),
            self.lower[1] + h[1] * (T::from_usize_lossy(iy) + half),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BasinGrid<T: Real> {
    pub spec: BasinSpec<T>,
    /// Row-major, `labels[iy * nx + ix]`.
    pub labels: Vec<BasinLabel>,
}

impl<T: Real> BasinGrid<T> {
    pub fn label(&self, ix: usize, iy: usize) -> BasinLabel {
        self.labels[iy * self.spec.resolution[0] + ix]
    }

    /// Cells with a 4-neighbour of different label.
    pub fn boundary_cells(&self) -> Vec<(usize, usize)> {
        let [nx, ny] = self.spec.resolution;
        let mut out = Vec::new();
        for iy in 0..ny {
            for ix in 0..nx {
                let l = self.label(ix, iy);
                let diff = (ix > 0 && self.label(ix - 1, iy) != l)
                    || (ix + 1 < nx && self.label(ix + 1, iy) != l)
                    || (iy > 0 && self.label(ix, iy - 1) != l)
                    || (iy + 1 < ny && self.label(ix, iy + 1) != l);
                if diff {
                    out.push((ix, iy));
                }
            }
        }
        out
    }

    pub fn distinct_labels(&self) -> Vec<BasinLabel> {
        let mut v: Vec<BasinLabel> = Vec::new();
        for l in &self.labels {
            if !v.contains(l) {
                v.push(*l);
            }
        }
        v
    }

    /// `x,y,label` rows.
    pub fn to_csv(&self) -> String {
        let [nx, ny] = self.spec.resolution;
        let mut s = String::from("x,y,label\n");
        for iy in 0..ny {
            for ix in 0..nx {
                let c = self.spec.center(ix, iy);
                s.push_str(&format!("{},{},{}\n", c[0].as_f64(), c[1].as_f64(), self.label(ix, iy)));
            }
        }
        s
    }
}

/// Labels every cell center by the first attractor whose neighbourhood its
/// orbit enters within `max_iters` steps.
pub fn basin_grid<T: Real>(model: &PlModel<T>, attractors: &[Attractor<T>], spec: &BasinSpec<T>) -> Result<BasinGrid<T>> {
    if attractors.is_empty() {
        return Err(Error::InvalidArgument("basin_grid needs at least one attractor".into()));
    }
    let n = model.dim();
    if n < 2 {
        return Err(Error::Dimension { expected: 2, got: n });
    }
    let base = match &spec.base {
        Some(b) if b.len() == n => b.clone(),
        Some(b) => return Err(Error::Dimension { expected: n, got: b.len() }),
        None => DVector::zeros(n),
    };
    let detectors: Vec<Detector<T>> = attractors.iter().map(|a| Detector::new(a, spec.tol)).collect();
    let [nx, ny] = spec.resolution;
    let label_cell = |ix: usize, iy: usize| -> BasinLabel {
        let c = spec.center(ix, iy);
        let mut z = base.clone();
        z[0] = c[0];
        z[1] = c[1];
        for _ in 0..=spec.max_iters {
            if diverged(&z) {
                return BasinLabel::Divergent;
            }
            if let Some(i) = detectors.iter().position(|d| d.hit(&z)) {
                return BasinLabel::Attractor(i);
            }
            z = match model.step(&z) {
                Ok(v) => v,
                Err(_) => return BasinLabel::Divergent,
            };
        }
        BasinLabel::Undecided
    };
    let threads = spec.threads.max(1).min(ny.max(1));
    let mut labels = vec![BasinLabel::Undecided; nx * ny];
    if threads == 1 {
        for iy in 0..ny {
            for ix in 0..nx {
                labels[iy * nx + ix] = label_cell(ix, iy);
            }
        }
    } else {
        let rows_per = ny.div_ceil(threads);
        std::thread::scope(|s| {
            for (chunk_ix, chunk) in labels.chunks_mut(rows_per * nx).enumerate() {
                let label_cell = &label_cell;
                s.spawn(move || {
                    for (k, slot) in chunk.iter_mut().enumerate() {
                        let iy = chunk_ix * rows_per + k / nx;
                        *slot = label_cell(k % nx, iy);
                    }
                });
            }
        });
    }
    Ok(BasinGrid { spec: spec.clone(), labels })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn contraction() -> PlModel<f64> {
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.2]);
        PlModel::standard(a, DMatrix::zeros(2, 2), DVector::from_vec(vec![0.1, -0.3])).unwrap()
    }

    #[test]
    fn constant_jacobian_exponents() {
        let s = lyapunov_exponents(&contraction(), &DVector::from_vec(vec![1.0, 1.0]), 2000, 0).unwrap();
        assert!((s.exponents[0] - 0.5f64.ln()).abs() < 1e-6);
        assert!((s.exponents[1] - 0.2f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn simulate_counts_and_matches_step() {
        let m = contraction();
        let z0 = DVector::from_vec(vec![2.0, -1.0]);
        let tr = simulate(&m, &z0, 10, 3).unwrap();
        assert_eq!(tr.states.len(), 7);
        let mut z = z0;
        for _ in 0..3 {
            z = m.step(&z).unwrap();
        }
        assert_eq!(tr.states[0], z);
        assert!(simulate(&m, &DVector::zeros(2), 3, 3).is_err());
    }

    #[test]
    fn divergence_flagged() {
        let a = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 3.0]);
        let m = PlModel::standard(a, DMatrix::zeros(2, 2), DVector::zeros(2)).unwrap();
        let tr = simulate(&m, &DVector::from_vec(vec![1.0, 1.0]), 100, 0).unwrap();
        assert!(tr.diverged_at.is_some());
        assert!(matches!(lyapunov_exponents(&m, &DVector::from_vec(vec![1.0, 1.0]), 100, 0), Err(Error::Diverged { .. })));
    }

    #[test]
    fn period_detection() {
        let pts: Vec<DVector<f64>> = (0..30).map(|i| DVector::from_vec(vec![(i % 3) as f64, 0.0])).collect();
        assert_eq!(detect_period(&pts, 10), Some(3));
    }
}
