use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationStat {
    pub r: f64,
    pub p_two_sided: f64,
    pub n: usize,
    pub df: usize,
}

/// Sample Pearson correlation with a two-sided Student-t p-value on
/// `n - 2` degrees of freedom.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<CorrelationStat> {
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch {
            expected: xs.len(),
            got: ys.len(),
        });
    }
    let n = xs.len();
    if n < 3 {
        return Err(Error::DegenerateSample(format!("need at least 3 pairs, got {n}")));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("correlation input"));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n as f64;
    let (mx, my) = (mean(xs), mean(ys));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::DegenerateSample("zero variance".into()));
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    let df = n - 2;
    let one_minus = 1.0 - r * r;
    let t = if one_minus <= 0.0 {
        f64::INFINITY.copysign(r)
    } else {
        r * (df as f64 / one_minus).sqrt()
    };
    Ok(CorrelationStat {
        r,
        p_two_sided: student_t_two_sided_p(t, df as f64),
        n,
        df,
    })
}

/// `2 P(T >= |t|)` for Student's t with `df` degrees of freedom, via
/// `I_{df/(df+t^2)}(df/2, 1/2)`.
pub fn student_t_two_sided_p(t: f64, df: f64) -> f64 {
    assert!(df > 0.0, "degrees of freedom must be positive");
    if t.is_nan() {
        return f64::NAN;
    }
    if t == 0.0 {
        return 1.0;
    }
    if t.is_infinite() {
        return 0.0;
    }
    let x = df / (df + t * t);
    beta_reg(df / 2.0, 0.5, x).clamp(0.0, 1.0)
}

/// Exact two-sided sign test: probability under `Binomial(n, 1/2)` of a
/// split at least as lopsided as `positives : negatives`.
pub fn sign_test_p(positives: usize, negatives: usize) -> f64 {
    let n = positives + negatives;
    if n == 0 {
        return 1.0;
    }
    let m = positives.min(negatives);
    if 2 * m == n {
        return 1.0;
    }
    // P(X <= m) = I_{1/2}(n - m, m + 1)
    let tail = beta_reg((n - m) as f64, (m + 1) as f64, 0.5);
    (2.0 * tail).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Independent oracle: Simpson integration of the Student-t density
    /// from |t| to a far cutoff, with log-gamma from the Lanczos series.
    fn t_tail_by_quadrature(t: f64, df: f64) -> f64 {
        fn ln_gamma(x: f64) -> f64 {
            const G: [f64; 9] = [
                0.999_999_999_999_809_9,
                676.520_368_121_885_1,
                -1_259.139_216_722_402_8,
                771.323_428_777_653_1,
                -176.615_029_162_140_6,
                12.507_343_278_686_905,
                -0.138_571_095_265_720_12,
                9.984_369_578_019_572e-6,
                1.505_632_735_149_311_6e-7,
            ];
            let x = x - 1.0;
            let mut a = G[0];
            let t = x + 7.5;
            for (i, g) in G.iter().enumerate().skip(1) {
                a += g / (x + i as f64);
            }
            0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
        }
        let c = (ln_gamma((df + 1.0) / 2.0) - ln_gamma(df / 2.0)).exp() / (df * std::f64::consts::PI).sqrt();
        let density = |x: f64| c * (1.0 + x * x / df).powf(-(df + 1.0) / 2.0);
        let (a, b, steps) = (t.abs(), 400.0, 400_000);
        let h = (b - a) / steps as f64;
        let mut sum = density(a) + density(b);
        for k in 1..steps {
            let w = if k % 2 == 1 { 4.0 } else { 2.0 };
            sum += w * density(a + k as f64 * h);
        }
        2.0 * sum * h / 3.0
    }

    #[test]
    fn perfect_correlations() {
        let up = pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap();
        assert!((up.r - 1.0).abs() < 1e-15);
        assert!(up.p_two_sided < 1e-6);
        assert_eq!(up.df, 1);
        let down = pearson(&[1.0, 2.0, 3.0], &[6.0, 4.0, 2.0]).unwrap();
        assert!((down.r + 1.0).abs() < 1e-15);
    }

    #[test]
    fn r_half_n_twelve_matches_quadrature() {
        let (r, n) = (0.5f64, 12.0);
        let t = r * ((n - 2.0) / (1.0 - r * r)).sqrt();
        assert!((t - 1.825742).abs() < 1e-6);
        let oracle = t_tail_by_quadrature(t, 10.0);
        assert!((oracle - 0.0976).abs() < 1e-3, "oracle {oracle}");
        let p = student_t_two_sided_p(t, 10.0);
        assert!((p - oracle).abs() < 1e-8, "p {p} oracle {oracle}");
    }

    #[test]
    fn cauchy_closed_form() {
        let expected = 2.0 * (0.5 - 1f64.atan() / std::f64::consts::PI);
        assert!((student_t_two_sided_p(1.0, 1.0) - expected).abs() < 1e-12);
        assert!((student_t_two_sided_p(1.0, 1.0) - 0.5).abs() < 1e-6);
    }

    #[test]
    fn large_df_matches_normal_tail() {
        assert!((student_t_two_sided_p(1.959964, 1e6) - 0.05).abs() < 1e-4);
    }

    #[test]
    fn zero_t_is_one() {
        for df in [1.0, 2.0, 7.0, 30.0, 1e4] {
            assert_eq!(student_t_two_sided_p(0.0, df), 1.0);
        }
    }

    #[test]
    fn tiny_p_values_survive() {
        // Large samples with weak correlations give p-values far below 1e-100.
        let p = student_t_two_sided_p(-21.9, 28_000.0);
        assert!(p > 0.0 && p < 1e-100, "p {p}");
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(Error::DegenerateSample(_))));
        assert!(matches!(pearson(&[1.0, 2.0], &[1.0, 2.0]), Err(Error::DegenerateSample(_))));
        assert!(pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn sign_test_values() {
        assert_eq!(sign_test_p(5, 5), 1.0);
        assert_eq!(sign_test_p(0, 0), 1.0);
        // 2 * (1/2)^10
        assert!((sign_test_p(10, 0) - 2.0 / 1024.0).abs() < 1e-15);
        // 2 * (1 + 10) / 1024
        assert!((sign_test_p(1, 9) - 22.0 / 1024.0).abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn p_non_increasing_in_abs_t(a in 0.0f64..50.0, b in 0.0f64..50.0, df in 1u32..200) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let df = df as f64;
            prop_assert!(student_t_two_sided_p(hi, df) <= student_t_two_sided_p(lo, df) + 1e-15);
            prop_assert_eq!(student_t_two_sided_p(-hi, df), student_t_two_sided_p(hi, df));
        }

        #[test]
        fn pearson_affine_invariance(
            pairs in proptest::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 3..40),
            scale in 0.01f64..100.0,
            shift in -100.0f64..100.0,
        ) {
            let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let Ok(base) = pearson(&xs, &ys) else { return Ok(()) };
            let moved: Vec<f64> = xs.iter().map(|x| scale * x + shift).collect();
            let flipped: Vec<f64> = xs.iter().map(|x| -scale * x + shift).collect();
            prop_assert!((pearson(&moved, &ys).unwrap().r - base.r).abs() <= 1e-12);
            prop_assert!((pearson(&flipped, &ys).unwrap().r + base.r).abs() <= 1e-12);
        }
    }
}
