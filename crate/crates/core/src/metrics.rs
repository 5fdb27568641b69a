//! Reconstruction metrics: state-space divergence and n-step prediction error.

use std::collections::HashMap;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::model::PlModel;
use crate::scalar::Real;

pub const DEFAULT_BINS: usize = 30;
pub const SMOOTHING: f64 = 1e-12;
pub const BOX_MARGIN: f64 = 0.05;

fn check_dims<T: Real>(a: &[DVector<T>], b: &[DVector<T>]) -> Result<usize> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument("trajectories must be nonempty".into()));
    }
    let n = a[0].len();
    for p in a.iter().chain(b) {
        if p.len() != n {
            return Err(Error::Dimension { expected: n, got: p.len() });
        }
    }
    Ok(n)
}

/// Binned KL divergence `Σ p log(p / q)` of the true-trajectory occupancy
/// `p` against the model occupancy `q`.
///
/// Bins tile the bounding box of the true trajectory, widened by 5% per
/// axis, with `bins` per dimension. Model states outside the box are not
/// counted. Both histograms get `ε = 1e-12` added per bin and are then
/// renormalized.
pub fn d_stsp<T: Real>(true_traj: &[DVector<T>], model_traj: &[DVector<T>], bins: usize) -> Result<f64> {
    let n = check_dims(true_traj, model_traj)?;
    if bins == 0 {
        return Err(Error::InvalidArgument("bins must be positive".into()));
    }
    let mut lo = vec![f64::INFINITY; n];
    let mut hi = vec![f64::NEG_INFINITY; n];
    for p in true_traj {
        for i in 0..n {
            let x = p[i].as_f64();
            lo[i] = lo[i].min(x);
            hi[i] = hi[i].max(x);
        }
    }
    for i in 0..n {
        let r = hi[i] - lo[i];
        let pad = if r > 0.0 { BOX_MARGIN * r } else { 0.5 };
        lo[i] -= pad;
        hi[i] += pad;
    }
    let bin_of = |p: &DVector<T>| -> Option<Vec<usize>> {
        (0..n)
            .map(|i| {
                let x = p[i].as_f64();
                if x < lo[i] || x > hi[i] {
                    return None;
                }
                let k = ((x - lo[i]) / (hi[i] - lo[i]) * bins as f64).floor() as usize;
                Some(k.min(bins - 1))
            })
            .collect()
    };
    let histogram = |traj: &[DVector<T>]| {
        let mut h: HashMap<Vec<usize>, f64> = HashMap::new();
        let mut total = 0.0;
        for p in traj {
            if let Some(b) = bin_of(p) {
                *h.entry(b).or_default() += 1.0;
                total += 1.0;
            }
        }
        (h, total)
    };
    let (hp, tp) = histogram(true_traj);
    let (hq, tq) = histogram(model_traj);
    let k = (bins as f64).powi(n as i32);
    let norm = 1.0 + k * SMOOTHING;
    let prob = |h: &HashMap<Vec<usize>, f64>, t: f64, b: &Vec<usize>| {
        let raw = if t > 0.0 { h.get(b).copied().unwrap_or(0.0) / t } else { 0.0 };
        (raw + SMOOTHING) / norm
    };
    // Bins empty in both histograms contribute p log(p/p) = 0.
    let mut keys: Vec<&Vec<usize>> = hp.keys().chain(hq.keys()).collect();
    keys.sort();
    keys.dedup();
    let mut kl = 0.0;
    for b in keys {
        let p = prob(&hp, tp, b);
        let q = prob(&hq, tq, b);
        kl += p * (p / q).ln();
    }
    Ok(kl.max(0.0))
}

/// `1/(N (T-n)) Σ_t ‖x_{t+n} - F^n(x_t)‖²` over the true trajectory.
pub fn prediction_error<T: Real>(true_traj: &[DVector<T>], model: &PlModel<T>, n: usize) -> Result<f64> {
    let t = true_traj.len();
    if t <= n {
        return Err(Error::InvalidArgument(format!("trajectory length {t} must exceed horizon {n}")));
    }
    let dim = model.dim();
    if let Some(p) = true_traj.iter().find(|p| p.len() != dim) {
        return Err(Error::Dimension { expected: dim, got: p.len() });
    }
    if n == 0 {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for s in 0..t - n {
        let mut z = true_traj[s].clone();
        for _ in 0..n {
            z = model.step(&z)?;
        }
        sum += (&true_traj[s + n] - z).norm_squared().as_f64();
    }
    Ok(sum / (dim as f64 * (t - n) as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: f64) -> DVector<f64> {
        DVector::from_vec(vec![x])
    }

    #[test]
    fn identical_is_zero() {
        let a: Vec<_> = (0..50).map(|i| v((i as f64 * 0.37).sin())).collect();
        assert_eq!(d_stsp(&a, &a, 30).unwrap(), 0.0);
    }

    #[test]
    fn dimension_mismatch() {
        let a = vec![v(0.0)];
        let b = vec![DVector::from_vec(vec![0.0, 1.0])];
        assert!(d_stsp(&a, &b, 4).is_err());
    }
}
