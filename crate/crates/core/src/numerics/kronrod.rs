use crate::{Error, Real, Result};

// Gauss–Kronrod 15/7 abscissae and weights on [-1, 1] (positive half, centre last).
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
// 7-point Gauss weights at XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// 15-point Kronrod integral of `f` on `[a, b]` with `|K15 − G7|` as error estimate.
pub fn gauss_kronrod_15<T: Real, F: FnMut(T) -> T>(mut f: F, a: T, b: T) -> Result<(T, T)> {
    if b < a {
        return Err(Error::Validation("gauss_kronrod_15 requires a <= b".into()));
    }
    if a == b {
        return Ok((T::zero(), T::zero()));
    }
    let half = (b - a) / T::lit(2.0);
    let centre = (a + b) / T::lit(2.0);
    let mut check = |x: T| -> Result<T> {
        let v = f(x);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite(format!(
                "integrand at {}",
                x.to_f64().unwrap_or(f64::NAN)
            )))
        }
    };
    let fc = check(centre)?;
    let mut kron = T::lit(WGK[7]) * fc;
    let mut gauss = T::lit(WG[3]) * fc;
    for i in 0..7 {
        let dx = half * T::lit(XGK[i]);
        let s = check(centre - dx)? + check(centre + dx)?;
        kron += T::lit(WGK[i]) * s;
        if i % 2 == 1 {
            gauss += T::lit(WG[i / 2]) * s;
        }
    }
    Ok((kron * half, ((kron - gauss) * half).abs()))
}

/// Kronrod-15 nodes and weights mapped to `[a, b]`.
pub fn kronrod15_panel<T: Real>(a: T, b: T) -> ([T; 15], [T; 15]) {
    let half = (b - a) / T::lit(2.0);
    let centre = (a + b) / T::lit(2.0);
    let mut x = [T::zero(); 15];
    let mut w = [T::zero(); 15];
    for i in 0..7 {
        let dx = half * T::lit(XGK[i]);
        x[2 * i] = centre - dx;
        x[2 * i + 1] = centre + dx;
        w[2 * i] = T::lit(WGK[i]) * half;
        w[2 * i + 1] = T::lit(WGK[i]) * half;
    }
    x[14] = centre;
    w[14] = T::lit(WGK[7]) * half;
    (x, w)
}

/// The embedded 7-point Gauss–Legendre nodes and weights mapped to `[a, b]`.
pub fn gauss7_panel<T: Real>(a: T, b: T) -> ([T; 7], [T; 7]) {
    let half = (b - a) / T::lit(2.0);
    let centre = (a + b) / T::lit(2.0);
    let mut x = [T::zero(); 7];
    let mut w = [T::zero(); 7];
    for k in 0..3 {
        let dx = half * T::lit(XGK[2 * k + 1]);
        x[2 * k] = centre - dx;
        x[2 * k + 1] = centre + dx;
        w[2 * k] = T::lit(WG[k]) * half;
        w[2 * k + 1] = T::lit(WG[k]) * half;
    }
    x[6] = centre;
    w[6] = T::lit(WG[3]) * half;
    (x, w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn square_on_unit_interval() {
        let (v, _) = gauss_kronrod_15(|x: f64| x * x, 0.0, 1.0).unwrap();
        assert!((v - 1.0 / 3.0).abs() < 4.0 * f64::EPSILON);
    }

    #[test]
    fn empty_interval() {
        assert_eq!(gauss_kronrod_15(|x: f64| x, 2.0, 2.0).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn exponential() {
        let (v, err) = gauss_kronrod_15(|x: f64| x.exp(), 0.0, 1.0).unwrap();
        assert!((v - (1f64.exp() - 1.0)).abs() < 1e-12);
        assert!(err < 1e-6);
    }

    #[test]
    fn non_finite_integrand_rejected() {
        let r = gauss_kronrod_15(|x: f64| 1.0 / (x - 0.5), 0.0, 1.0);
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }

    #[test]
    fn panels_match_rule() {
        let (x, w) = kronrod15_panel(1.0f64, 3.0);
        let direct: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(5)).sum();
        let (v, _) = gauss_kronrod_15(|x: f64| x.powi(5), 1.0, 3.0).unwrap();
        assert!((direct - v).abs() < 1e-12);
        let (x7, w7) = gauss7_panel(1.0f64, 3.0);
        let g: f64 = x7.iter().zip(&w7).map(|(x, w)| w * x.powi(13)).sum();
        let exact = (3f64.powi(14) - 1.0) / 14.0;
        assert!((g - exact).abs() < 1e-12 * exact);
    }

    proptest! {
        #[test]
        fn exact_to_degree_23(a in -3.0f64..3.0, len in 0.01f64..4.0, k in 0u32..=23) {
            let b = a + len;
            let (v, _) = gauss_kronrod_15(|x: f64| x.powi(k as i32), a, b).unwrap();
            let exact = (b.powi(k as i32 + 1) - a.powi(k as i32 + 1)) / (k as f64 + 1.0);
            let scale = a.abs().max(b.abs()).powi(k as i32 + 1).max(1.0);
            prop_assert!((v - exact).abs() <= 1e-12 * scale, "{} vs {}", v, exact);
        }
    }

    #[test]
    fn degree_24_is_not_exact() {
        let (v, _) = gauss_kronrod_15(|x: f64| x.powi(24), -1.0, 1.0).unwrap();
        assert!((v - 2.0 / 25.0).abs() > 1e-10);
    }
}
