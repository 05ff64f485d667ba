//! Transition probabilities: Nelson–Aalen / Aalen–Johansen with Greenwood
//! covariance, and model-based product integrals.

mod parametric;

use std::collections::BTreeSet;

use nalgebra::DMatrix;

use crate::domain::TransitionTopology;
use crate::msprep::TransitionRow;
use crate::numerics::{product_integral, StepFunctionMatrix};
use crate::{Error, Real, Result};

pub use parametric::{
    generator_matrix, parametric_path, parametric_transprob_average, parametric_transprob_individual,
    BSource,
};

/// Risk sets and transition counts at every distinct observed transition time.
#[derive(Debug, Clone, PartialEq)]
pub struct CountingProcessPanel<T: Real> {
    pub n_states: usize,
    pub times: Vec<T>,
    /// `ΔN_hk(t)` (off-diagonal; the diagonal is zero).
    pub dn: Vec<DMatrix<T>>,
    /// `Y_h(t)`, the number in state `h` just before `t`.
    pub at_risk: Vec<Vec<T>>,
}

impl<T: Real> CountingProcessPanel<T> {
    /// `N_hk(t)`, cumulative direct `h → k` transitions up to `t`.
    pub fn cumulative_count(&self, h: usize, k: usize, t: T) -> T {
        let mut n = T::zero();
        for (u, d) in self.times.iter().zip(&self.dn) {
            if *u > t {
                break;
            }
            n += d[(h, k)];
        }
        n
    }

    /// Total observed transitions out of `h` at event index `j`.
    pub fn dn_out(&self, j: usize, h: usize) -> T {
        (0..self.n_states).filter(|&k| k != h).map(|k| self.dn[j][(h, k)]).sum()
    }
}

/// Builds the counting-process panel from transition-at-risk rows.
///
/// A subject occupies `h` on `(t_start, t_stop]`; rows sharing a sojourn are
/// counted once for the risk set. Tied times are a single jump.
pub fn counting_panel<T: Real>(rows: &[TransitionRow], topology: &TransitionTopology) -> CountingProcessPanel<T> {
    let m = topology.n_states();
    let mut sojourns: BTreeSet<(usize, usize, u64, u64)> = BTreeSet::new();
    let mut events: Vec<(f64, usize, usize)> = Vec::new();
    for r in rows {
        sojourns.insert((r.subject, r.from, r.t_start.to_bits(), r.t_stop.to_bits()));
        if r.status {
            events.push((r.t_stop, r.from, r.to));
        }
    }
    let mut starts = vec![Vec::new(); m];
    let mut stops = vec![Vec::new(); m];
    for &(_, h, a, b) in &sojourns {
        starts[h].push(f64::from_bits(a));
        stops[h].push(f64::from_bits(b));
    }
    for v in starts.iter_mut().chain(stops.iter_mut()) {
        v.sort_by(|a, b| a.total_cmp(b));
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut times: Vec<T> = Vec::new();
    let mut dn: Vec<DMatrix<T>> = Vec::new();
    let mut at_risk = Vec::new();
    let mut last = f64::NAN;
    for (t, h, k) in events {
        if t != last {
            last = t;
            times.push(T::lit(t));
            dn.push(DMatrix::zeros(m, m));
            // in state h just before t: started before t and not stopped before t
            at_risk.push(
                (0..m)
                    .map(|s| {
                        let a = starts[s].partition_point(|&u| u < t);
                        let b = stops[s].partition_point(|&u| u < t);
                        T::lit((a - b) as f64)
                    })
                    .collect(),
            );
        }
        let d = dn.last_mut().unwrap();
        d[(h, k)] += T::one();
    }
    CountingProcessPanel { n_states: m, times, dn, at_risk }
}

/// Nelson–Aalen increments `ΔN_hk / Y_h` with diagonal `−Σ_k`.
pub fn nelson_aalen<T: Real>(panel: &CountingProcessPanel<T>) -> Result<StepFunctionMatrix<T>> {
    let m = panel.n_states;
    let mut incs = Vec::with_capacity(panel.times.len());
    for (j, d) in panel.dn.iter().enumerate() {
        let mut inc = DMatrix::zeros(m, m);
        for h in 0..m {
            let out = panel.dn_out(j, h);
            if out == T::zero() {
                continue;
            }
            let y = panel.at_risk[j][h];
            if y < out {
                return Err(Error::Numerical(format!(
                    "risk set of state {h} smaller than its transition count at {}",
                    panel.times[j]
                )));
            }
            for k in 0..m {
                if k != h {
                    inc[(h, k)] = d[(h, k)] / y;
                }
            }
            inc[(h, h)] = -out / y;
        }
        incs.push(inc);
    }
    StepFunctionMatrix::new(m, panel.times.clone(), incs)
}

/// Aalen–Johansen estimate `Π_{(s,t]} (I + ΔΛ)`.
pub fn aalen_johansen<T: Real>(steps: &StepFunctionMatrix<T>, s: T, t: T) -> Result<DMatrix<T>> {
    product_integral(steps, s, t)
}

/// Covariance of the increments `vec(ΔΛ(t_j))` (column-major) at event index `j`.
fn increment_cov<T: Real>(panel: &CountingProcessPanel<T>, j: usize) -> DMatrix<T> {
    let m = panel.n_states;
    let mut c = DMatrix::zeros(m * m, m * m);
    let idx = |h: usize, k: usize| h + k * m;
    for h in 0..m {
        let y = panel.at_risk[j][h];
        let out = panel.dn_out(j, h);
        if out == T::zero() || y == T::zero() {
            continue;
        }
        let y3 = y * y * y;
        let d = |k: usize| if k == h { out } else { panel.dn[j][(h, k)] };
        for k in 0..m {
            for k2 in 0..m {
                let v = if k == h && k2 == h {
                    (y - out) * out / y3
                } else if k == h {
                    -(y - out) * d(k2) / y3
                } else if k2 == h {
                    -(y - out) * d(k) / y3
                } else {
                    let delta = if k == k2 { y } else { T::zero() };
                    (delta - d(k)) * d(k2) / y3
                };
                c[(idx(h, k), idx(h, k2))] = v;
            }
        }
    }
    c
}

fn kron<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>) -> DMatrix<T> {
    a.kronecker(b)
}

/// Aalen–Johansen matrix and Greenwood covariance of `vec(P̂(s,t))`
/// (column-major), updated by the recursion
/// `cov ← A cov Aᵀ + B cov(ΔΛ) Bᵀ`, `A = (I+ΔΛ)ᵀ ⊗ I`, `B = I ⊗ P̂(s,t−)`.
pub fn aalen_johansen_with_cov<T: Real>(
    panel: &CountingProcessPanel<T>,
    steps: &StepFunctionMatrix<T>,
    s: T,
    t: T,
) -> Result<(DMatrix<T>, DMatrix<T>)> {
    if t < s {
        return Err(Error::Validation("Aalen–Johansen requires s <= t".into()));
    }
    let m = panel.n_states;
    if steps.jump_times().len() != panel.times.len() {
        return Err(Error::Dimension("step function and panel disagree".into()));
    }
    let eye = DMatrix::<T>::identity(m, m);
    let mut p = eye.clone();
    let mut cov = DMatrix::<T>::zeros(m * m, m * m);
    for j in steps.jumps_in(s, t) {
        let inc = &steps.increments()[j];
        if (0..m).any(|h| inc[(h, h)] < -T::one()) {
            return Err(Error::DiagonalBelowMinusOne(panel.times[j].to_f64().unwrap_or(f64::NAN)));
        }
        let f = &eye + inc;
        let a = kron(&f.transpose(), &eye);
        let b = kron(&eye, &p);
        cov = &a * &cov * a.transpose() + &b * increment_cov(panel, j) * b.transpose();
        p = &p * &f;
    }
    Ok((p, cov))
}

/// Greenwood-type covariance of `vec(P̂(s,t))`, column-major: the variance of
/// `P̂_hk` sits at diagonal index `h + k·m`.
pub fn greenwood_cov<T: Real>(
    panel: &CountingProcessPanel<T>,
    steps: &StepFunctionMatrix<T>,
    s: T,
    t: T,
) -> Result<DMatrix<T>> {
    Ok(aalen_johansen_with_cov(panel, steps, s, t)?.1)
}

/// Log-scale 95% interval `exp(log p ± 1.96·√var / p)`; `None` when `p = 0`.
pub fn aj_confidence_interval<T: Real>(p: T, var: T) -> Option<(T, T)> {
    if !(p > T::zero()) {
        return None;
    }
    let half = T::lit(1.96) * var.max(T::zero()).sqrt() / p;
    let lp = p.ln();
    Some(((lp - half).exp(), (lp + half).exp()))
}

/// One point of an Aalen–Johansen curve.
#[derive(Debug, Clone, PartialEq)]
pub struct AjPoint<T: Real> {
    pub t: T,
    pub p: DMatrix<T>,
    pub cov: DMatrix<T>,
}

/// `P̂(s, t)` with Greenwood covariance at each of `times` (ascending, ≥ s),
/// in a single pass over the event times.
pub fn aalen_johansen_path<T: Real>(
    panel: &CountingProcessPanel<T>,
    steps: &StepFunctionMatrix<T>,
    s: T,
    times: &[T],
) -> Result<Vec<AjPoint<T>>> {
    if times.windows(2).any(|w| w[1] < w[0]) || times.first().is_some_and(|&t| t < s) {
        return Err(Error::Validation("curve times must be ascending and not before s".into()));
    }
    let m = panel.n_states;
    let eye = DMatrix::<T>::identity(m, m);
    let mut p = eye.clone();
    let mut cov = DMatrix::<T>::zeros(m * m, m * m);
    let mut out = Vec::with_capacity(times.len());
    let mut j = steps.jumps_in(s, s).end;
    for &t in times {
        while j < panel.times.len() && panel.times[j] <= t {
            let inc = &steps.increments()[j];
            if (0..m).any(|h| inc[(h, h)] < -T::one()) {
                return Err(Error::DiagonalBelowMinusOne(panel.times[j].to_f64().unwrap_or(f64::NAN)));
            }
            let f = &eye + inc;
            let a = kron(&f.transpose(), &eye);
            let b = kron(&eye, &p);
            cov = &a * &cov * a.transpose() + &b * increment_cov(panel, j) * b.transpose();
            p = &p * &f;
            j += 1;
        }
        out.push(AjPoint { t, p: p.clone(), cov: cov.clone() });
    }
    Ok(out)
}
