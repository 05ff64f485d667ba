use nalgebra::DMatrix;

use crate::{Error, Real, Result};

/// Matrix-valued right-continuous step function: a jump matrix at each time.
#[derive(Debug, Clone, PartialEq)]
pub struct StepFunctionMatrix<T: Real> {
    dim: usize,
    times: Vec<T>,
    increments: Vec<DMatrix<T>>,
}

impl<T: Real> StepFunctionMatrix<T> {
    pub fn new(dim: usize, times: Vec<T>, increments: Vec<DMatrix<T>>) -> Result<Self> {
        if times.len() != increments.len() {
            return Err(Error::Dimension("one increment per jump time".into()));
        }
        if times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Validation("jump times must be strictly increasing".into()));
        }
        if increments.iter().any(|m| m.nrows() != dim || m.ncols() != dim) {
            return Err(Error::Dimension(format!("increments must be {dim}x{dim}")));
        }
        Ok(Self { dim, times, increments })
    }

    pub fn empty(dim: usize) -> Self {
        Self { dim, times: Vec::new(), increments: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn jump_times(&self) -> &[T] {
        &self.times
    }

    pub fn increments(&self) -> &[DMatrix<T>] {
        &self.increments
    }

    /// Cumulative value `Σ_{u <= t} ΔΛ(u)`.
    pub fn cumulative(&self, t: T) -> DMatrix<T> {
        let mut acc = DMatrix::zeros(self.dim, self.dim);
        for (u, inc) in self.times.iter().zip(&self.increments) {
            if *u > t {
                break;
            }
            acc += inc;
        }
        acc
    }

    /// Indices of jumps inside `(s, t]`.
    pub fn jumps_in(&self, s: T, t: T) -> std::ops::Range<usize> {
        let start = self.times.partition_point(|&u| u <= s);
        let end = self.times.partition_point(|&u| u <= t);
        start..end.max(start)
    }
}

/// Ordered product `Π_{u ∈ (s,t]} (I + ΔΛ(u))`.
pub fn product_integral<T: Real>(steps: &StepFunctionMatrix<T>, s: T, t: T) -> Result<DMatrix<T>> {
    if t < s {
        return Err(Error::Validation("product_integral requires s <= t".into()));
    }
    let mut p = DMatrix::<T>::identity(steps.dim, steps.dim);
    for j in steps.jumps_in(s, t) {
        let inc = &steps.increments[j];
        if (0..steps.dim).any(|h| inc[(h, h)] < -T::one()) {
            return Err(Error::DiagonalBelowMinusOne(
                steps.times[j].to_f64().unwrap_or(f64::NAN),
            ));
        }
        let factor = DMatrix::<T>::identity(steps.dim, steps.dim) + inc;
        p = &p * &factor;
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m2(a: [f64; 4]) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &a)
    }

    #[test]
    fn no_jumps_gives_identity() {
        let s = StepFunctionMatrix::new(2, vec![5.0], vec![m2([-0.5, 0.5, 0.0, 0.0])]).unwrap();
        assert_eq!(product_integral(&s, 0.0, 4.0).unwrap(), DMatrix::identity(2, 2));
        assert_eq!(product_integral(&s, 5.0, 9.0).unwrap(), DMatrix::identity(2, 2));
    }

    #[test]
    fn single_jump() {
        let s = StepFunctionMatrix::new(2, vec![1.0], vec![m2([-0.5, 0.5, 0.0, 0.0])]).unwrap();
        assert_eq!(product_integral(&s, 0.0, 1.0).unwrap(), m2([0.5, 0.5, 0.0, 1.0]));
    }

    #[test]
    fn chapman_kolmogorov_split() {
        let s = StepFunctionMatrix::new(
            2,
            vec![1.0, 2.0],
            vec![m2([-0.5, 0.5, 0.1, -0.1]), m2([-0.2, 0.2, 0.3, -0.3])],
        )
        .unwrap();
        let whole = product_integral(&s, 0.0, 3.0).unwrap();
        let split =
            product_integral(&s, 0.0, 1.5).unwrap() * product_integral(&s, 1.5, 3.0).unwrap();
        assert!((whole - split).abs().max() < 1e-15);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(StepFunctionMatrix::new(2, vec![1.0, 1.0], vec![m2([0.0; 4]), m2([0.0; 4])]).is_err());
        let s = StepFunctionMatrix::new(2, vec![1.0], vec![m2([-1.5, 1.5, 0.0, 0.0])]).unwrap();
        assert!(matches!(
            product_integral(&s, 0.0, 2.0),
            Err(Error::DiagonalBelowMinusOne(_))
        ));
    }

    fn generator_increment(vals: &[f64], m: usize) -> DMatrix<f64> {
        // off-diagonal rates scaled so each row total stays <= 1
        let mut inc = DMatrix::zeros(m, m);
        for h in 0..m {
            let mut row = 0.0;
            for k in 0..m {
                if h != k {
                    inc[(h, k)] = vals[h * m + k] / m as f64;
                    row += inc[(h, k)];
                }
            }
            inc[(h, h)] = -row;
        }
        inc
    }

    proptest! {
        #[test]
        fn stochastic_and_refinement_invariant(
            vals in proptest::collection::vec(0.0f64..1.0, 27),
            gaps in proptest::collection::vec(0.1f64..1.0, 3),
        ) {
            let m = 3;
            let mut times = Vec::new();
            let mut t = 0.0;
            for g in &gaps { t += g; times.push(t); }
            let incs: Vec<_> = (0..3).map(|j| generator_increment(&vals[j * 9..(j + 1) * 9], m)).collect();
            let s = StepFunctionMatrix::new(m, times.clone(), incs.clone()).unwrap();
            let p = product_integral(&s, 0.0, t).unwrap();
            for h in 0..m {
                let rs: f64 = p.row(h).iter().sum();
                prop_assert!((rs - 1.0).abs() < 1e-12);
                prop_assert!(p.row(h).iter().all(|&x| (-1e-12..=1.0 + 1e-12).contains(&x)));
            }
            // inserting zero jumps changes nothing
            let mut t2 = Vec::new();
            let mut i2 = Vec::new();
            for (u, inc) in times.iter().zip(&incs) {
                t2.push(u - 0.05);
                i2.push(DMatrix::zeros(m, m));
                t2.push(*u);
                i2.push(inc.clone());
            }
            let refined = StepFunctionMatrix::new(m, t2, i2).unwrap();
            let p2 = product_integral(&refined, 0.0, t).unwrap();
            prop_assert!((p - p2).abs().max() < 1e-15);
        }
    }
}
