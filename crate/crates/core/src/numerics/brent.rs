use crate::{Error, Real, Result};

pub const DEFAULT_BRENT_TOL: f64 = 1e-8;

const MAX_ITER: usize = 200;

/// Brent's bracketing root finder (inverse quadratic interpolation with bisection
/// safeguard). Stops when the bracket is narrower than `tol` or `|f| <= tol`.
pub fn brent_root<T: Real, F: FnMut(T) -> T>(mut f: F, lo: T, hi: T, tol: T) -> Result<T> {
    let two = T::lit(2.0);
    let half = T::lit(0.5);
    let (mut a, mut b) = (lo, hi);
    let (mut fa, mut fb) = (f(a), f(b));
    if !fa.is_finite() || !fb.is_finite() {
        return Err(Error::NonFinite("brent_root bracket evaluation".into()));
    }
    if fa == T::zero() {
        return Ok(a);
    }
    if fb == T::zero() {
        return Ok(b);
    }
    if (fa > T::zero()) == (fb > T::zero()) {
        return Err(Error::NoSignChange {
            lo: lo.to_f64().unwrap_or(f64::NAN),
            hi: hi.to_f64().unwrap_or(f64::NAN),
        });
    }
    let (mut c, mut fc) = (b, fb);
    let (mut d, mut e) = (b - a, b - a);
    for _ in 0..MAX_ITER {
        if (fb > T::zero()) == (fc > T::zero()) {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol1 = two * T::epsilon() * b.abs() + half * tol;
        let xm = half * (c - b);
        if xm.abs() <= tol1 || fb == T::zero() || fb.abs() <= tol && xm.abs() <= tol {
            return Ok(b);
        }
        if e.abs() >= tol1 && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = two * xm * s;
                q = T::one() - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                p = s * (two * xm * qq * (qq - r) - (b - a) * (r - T::one()));
                q = (qq - T::one()) * (r - T::one()) * (s - T::one());
            }
            if p > T::zero() {
                q = -q;
            }
            p = p.abs();
            let min1 = T::lit(3.0) * xm * q - (tol1 * q).abs();
            let min2 = (e * q).abs();
            if two * p < min1.min(min2) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        if d.abs() > tol1 {
            b += d;
        } else {
            b += if xm > T::zero() { tol1 } else { -tol1 };
        }
        fb = f(b);
        if !fb.is_finite() {
            return Err(Error::NonFinite("brent_root iterate".into()));
        }
    }
    Err(Error::Numerical("brent_root did not converge".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gauss_kronrod_15;

    #[test]
    fn sqrt_two() {
        let r = brent_root(|x: f64| x * x - 2.0, 1.0, 2.0, DEFAULT_BRENT_TOL).unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-7);
    }

    #[test]
    fn identity_root() {
        let r = brent_root(|x: f64| x, -1.0, 1.0, DEFAULT_BRENT_TOL).unwrap();
        assert!(r.abs() < 1e-8);
    }

    #[test]
    fn exponential_inversion() {
        let (lam, u) = (0.5f64, 0.3f64);
        let f = |t: f64| gauss_kronrod_15(|_| lam, 0.0, t).unwrap().0 + u.ln();
        let r = brent_root(f, 1e-10, 50.0, 1e-10).unwrap();
        assert!((r - (-u.ln() / lam)).abs() < 1e-9);
        assert!((r - 2.4079456).abs() < 1e-6);
    }

    #[test]
    fn no_sign_change() {
        assert!(matches!(
            brent_root(|x: f64| x * x + 1.0, -1.0, 1.0, 1e-8),
            Err(Error::NoSignChange { .. })
        ));
    }
}
