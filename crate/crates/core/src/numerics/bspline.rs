use crate::{Error, Real, Result};

/// B-spline basis on a clamped knot vector (boundary knots repeated `degree + 1` times).
#[derive(Debug, Clone, PartialEq)]
pub struct BSplineBasis<T> {
    degree: usize,
    knots: Vec<T>,
}

impl<T: Real> BSplineBasis<T> {
    /// Builds the clamped basis on `[lo, hi]` with the given internal knots.
    pub fn new(degree: usize, lo: T, hi: T, internal: &[T]) -> Result<Self> {
        if !(lo < hi) {
            return Err(Error::Validation(format!(
                "spline boundary knots must satisfy lo < hi (got {lo}, {hi})"
            )));
        }
        if internal.iter().any(|&k| k < lo || k > hi || !k.is_finite()) {
            return Err(Error::Validation("internal knot outside boundary".into()));
        }
        if internal.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Validation("internal knots must be non-decreasing".into()));
        }
        let mut knots = Vec::with_capacity(internal.len() + 2 * (degree + 1));
        knots.extend(std::iter::repeat_n(lo, degree + 1));
        knots.extend_from_slice(internal);
        knots.extend(std::iter::repeat_n(hi, degree + 1));
        Ok(Self { degree, knots })
    }

    /// Builds a basis from a full knot vector, which must already be clamped.
    pub fn from_knots(degree: usize, knots: Vec<T>) -> Result<Self> {
        let m = degree + 1;
        if knots.len() < 2 * m {
            return Err(Error::Validation("knot vector too short".into()));
        }
        if knots.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Validation("knots must be non-decreasing".into()));
        }
        let lo = knots[0];
        let hi = knots[knots.len() - 1];
        if knots[..m].iter().any(|&k| k != lo) || knots[knots.len() - m..].iter().any(|&k| k != hi)
        {
            return Err(Error::Validation(format!(
                "boundary knots must have multiplicity {m}"
            )));
        }
        if !(lo < hi) {
            return Err(Error::Validation("degenerate knot span".into()));
        }
        Ok(Self { degree, knots })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn knots(&self) -> &[T] {
        &self.knots
    }

    /// Internal knots only.
    pub fn internal_knots(&self) -> &[T] {
        &self.knots[self.degree + 1..self.knots.len() - self.degree - 1]
    }

    pub fn n_basis(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    pub fn lower(&self) -> T {
        self.knots[0]
    }

    pub fn upper(&self) -> T {
        self.knots[self.knots.len() - 1]
    }

    /// Clamps `t` to the knot span; the flag reports whether clamping happened.
    pub fn clamp(&self, t: T) -> (T, bool) {
        if t < self.lower() {
            (self.lower(), true)
        } else if t > self.upper() {
            (self.upper(), true)
        } else {
            (t, false)
        }
    }

    /// Full vector of basis values at `t`. Errors outside the knot span.
    pub fn eval(&self, t: T) -> Result<Vec<T>> {
        if !(t >= self.lower() && t <= self.upper()) {
            return Err(Error::OutsideKnotRange {
                t: t.to_f64().unwrap_or(f64::NAN),
                lo: self.lower().to_f64().unwrap_or(f64::NAN),
                hi: self.upper().to_f64().unwrap_or(f64::NAN),
            });
        }
        let mut out = vec![T::zero(); self.n_basis()];
        let mut local = vec![T::zero(); self.degree + 1];
        let first = self.eval_nonzero(t, &mut local);
        out[first..first + self.degree + 1].copy_from_slice(&local);
        Ok(out)
    }

    /// Basis values after clamping `t` into the knot span.
    pub fn eval_clamped(&self, t: T) -> (Vec<T>, bool) {
        let (tc, clamped) = self.clamp(t);
        (self.eval(tc).expect("clamped time lies in span"), clamped)
    }

    /// Writes the `degree + 1` possibly non-zero values into `out` and returns the
    /// index of the first one. `t` must lie in the knot span.
    pub fn eval_nonzero(&self, t: T, out: &mut [T]) -> usize {
        let p = self.degree;
        let span = self.find_span(t);
        let mut left = vec![T::zero(); p + 1];
        let mut right = vec![T::zero(); p + 1];
        out[0] = T::one();
        for j in 1..=p {
            left[j] = t - self.knots[span + 1 - j];
            right[j] = self.knots[span + j] - t;
            let mut saved = T::zero();
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let temp = if denom > T::zero() { out[r] / denom } else { T::zero() };
                out[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            out[j] = saved;
        }
        span - p
    }

    /// Index `i` with `knots[i] <= t < knots[i+1]`; the right boundary maps to the
    /// last non-empty span.
    fn find_span(&self, t: T) -> usize {
        let p = self.degree;
        let n = self.n_basis();
        if t >= self.knots[n] {
            return n - 1;
        }
        if t <= self.knots[p] {
            return p;
        }
        // upper_bound on knots[p..=n]
        let (mut lo, mut hi) = (p, n);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if t < self.knots[mid] {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        lo
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // Textbook Cox–de Boor recursion, kept independent of the triangular scheme above.
    fn cox_de_boor(knots: &[f64], i: usize, p: usize, t: f64, last_span: usize) -> f64 {
        if p == 0 {
            let inside = knots[i] <= t && t < knots[i + 1];
            let right_edge = i == last_span && t == knots[i + 1];
            return if inside || right_edge { 1.0 } else { 0.0 };
        }
        let mut v = 0.0;
        let d1 = knots[i + p] - knots[i];
        if d1 > 0.0 {
            v += (t - knots[i]) / d1 * cox_de_boor(knots, i, p - 1, t, last_span);
        }
        let d2 = knots[i + p + 1] - knots[i + 1];
        if d2 > 0.0 {
            v += (knots[i + p + 1] - t) / d2 * cox_de_boor(knots, i + 1, p - 1, t, last_span);
        }
        v
    }

    fn paper_basis() -> BSplineBasis<f64> {
        BSplineBasis::new(3, 0.004, 18.201, &[4.120, 7.455, 10.908]).unwrap()
    }

    #[test]
    fn degree_zero_is_indicator() {
        let b = BSplineBasis::new(0, 0.0, 2.0, &[1.0]).unwrap();
        assert_eq!(b.eval(0.5).unwrap(), vec![1.0, 0.0]);
        assert_eq!(b.eval(1.5).unwrap(), vec![0.0, 1.0]);
        assert_eq!(b.eval(2.0).unwrap(), vec![0.0, 1.0]);
    }

    #[test]
    fn matches_recursive_oracle_at_internal_knot() {
        let b = paper_basis();
        assert_eq!(b.n_basis(), 7);
        let last_span = b.knots().len() - b.degree() - 2;
        for &t in &[7.455, 0.004, 18.201, 3.3, 12.0] {
            let v = b.eval(t).unwrap();
            for (i, &vi) in v.iter().enumerate() {
                let oracle = cox_de_boor(b.knots(), i, 3, t, last_span);
                assert!((vi - oracle).abs() < 1e-12, "t={t} i={i}: {vi} vs {oracle}");
            }
        }
    }

    #[test]
    fn outside_range_errors_and_clamps() {
        let b = paper_basis();
        assert!(matches!(b.eval(0.0), Err(Error::OutsideKnotRange { .. })));
        let (v, clamped) = b.eval_clamped(25.0);
        assert!(clamped);
        assert_eq!(v, b.eval(18.201).unwrap());
    }

    #[test]
    fn f32_basis_sums_to_one() {
        let b = BSplineBasis::<f32>::new(3, 0.0, 1.0, &[0.25, 0.5]).unwrap();
        let s: f32 = b.eval(0.3).unwrap().iter().sum();
        assert!((s - 1.0).abs() < 1e-6);
    }

    #[test]
    fn from_knots_rejects_unclamped() {
        assert!(BSplineBasis::from_knots(1, vec![0.0, 0.5, 1.0, 1.0]).is_err());
        assert!(BSplineBasis::from_knots(1, vec![0.0, 0.0, 1.0, 1.0]).is_ok());
    }

    proptest! {
        #[test]
        fn partition_of_unity_and_nonnegative(t in 0.004f64..=18.201) {
            let v = paper_basis().eval(t).unwrap();
            let s: f64 = v.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            prop_assert!(v.iter().all(|&x| x >= 0.0));
            prop_assert!(v.iter().filter(|&&x| x != 0.0).count() <= 4);
        }
    }
}
