//! Special functions backing the distribution layer: log-gamma, digamma,
//! log-beta, the regularized incomplete beta function and its inverse, and
//! Beta sampling with a pathwise parameter gradient.
//!
//! Everything here is 64-bit and pure. Accuracy contracts are enforced by
//! tests against extended-precision fixtures.

// Coefficient tables and test fixtures keep their published digits
// even where f64 rounds them.
#![allow(clippy::excessive_precision)]

use crate::error::{Error, Result};
use rand::Rng;

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_74;

/// Max iterations for the incomplete-beta continued fraction.
const CF_MAX_ITER: usize = 1000;
/// Combined iteration cap for the inverse-CDF root finder.
const INV_MAX_ITER: usize = 200;

/// log Γ(x) for x > 0.
///
/// Lanczos approximation (g = 7, 9 terms); arguments below 1/2 are lifted
/// with the recurrence log Γ(x) = log Γ(x+1) − log x.
pub fn log_gamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::Domain {
            what: "log_gamma",
            value: x,
            constraint: "x > 0",
        });
    }
    Ok(log_gamma_unchecked(x))
}

fn log_gamma_unchecked(x: f64) -> f64 {
    if x < 0.5 {
        return log_gamma_unchecked(x + 1.0) - x.ln();
    }
    let z = x - 1.0;
    let mut acc = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (z + i as f64);
    }
    let t = z + LANCZOS_G + 0.5;
    LN_SQRT_2PI + (z + 0.5) * t.ln() - t + acc.ln()
}

/// Digamma ψ(x) for x > 0: recurrence up to x ≥ 10, then the asymptotic
/// Bernoulli series.
pub fn digamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::Domain {
            what: "digamma",
            value: x,
            constraint: "x > 0",
        });
    }
    let mut x = x;
    let mut acc = 0.0;
    while x < 10.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // psi(x) ~ ln x - 1/(2x) - sum B_2n / (2n x^2n)
    let series = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0 - inv2 * (1.0 / 252.0 - inv2 * (1.0 / 240.0 - inv2 / 132.0))));
    Ok(acc + x.ln() - 0.5 * inv - series)
}

/// Trigamma psi'(x) for x > 0. Recurrence lift to x >= 10, then the
/// asymptotic Bernoulli series.
pub fn trigamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::Domain {
            what: "trigamma",
            value: x,
            constraint: "x > 0",
        });
    }
    let mut x = x;
    let mut acc = 0.0;
    while x < 10.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // psi'(x) ~ 1/x + 1/(2x^2) + sum B_2n / x^(2n+1)
    let series = inv
        * (1.0
            + inv * (0.5 + inv * (1.0 / 6.0 - inv2 * (1.0 / 30.0 - inv2 * (1.0 / 42.0 - inv2 / 30.0)))));
    Ok(acc + series)
}

/// log B(a, b) = log Γ(a) + log Γ(b) − log Γ(a+b).
pub fn log_beta(a: f64, b: f64) -> Result<f64> {
    Ok(log_gamma(a)? + log_gamma(b)? - log_gamma_unchecked(a + b))
}

/// Shape parameters of a Beta distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaParams {
    pub alpha: f64,
    pub beta: f64,
}

impl BetaParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::Domain {
                what: "BetaParams.alpha",
                value: alpha,
                constraint: "alpha > 0 and finite",
            });
        }
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(Error::Domain {
                what: "BetaParams.beta",
                value: beta,
                constraint: "beta > 0 and finite",
            });
        }
        Ok(Self { alpha, beta })
    }

    /// Beta density at t.
    pub fn pdf(&self, t: f64) -> Result<f64> {
        Ok(self.log_pdf(t)?.exp())
    }

    /// log density; −inf at the support edges where the density vanishes.
    pub fn log_pdf(&self, t: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Domain {
                what: "beta log_pdf t",
                value: t,
                constraint: "t in [0, 1]",
            });
        }
        let lb = log_beta(self.alpha, self.beta)?;
        Ok((self.alpha - 1.0) * t.ln() + (self.beta - 1.0) * (1.0 - t).ln() - lb)
    }
}

/// Regularized incomplete beta I_t(α, β), i.e. the Beta CDF at t.
///
/// Continued fraction (modified Lentz), with the symmetry flip
/// I_t(a,b) = 1 − I_{1−t}(b,a) for the fast-converging branch.
pub fn beta_cdf(p: BetaParams, t: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&t) || t.is_nan() {
        return Err(Error::Domain {
            what: "beta_cdf t",
            value: t,
            constraint: "t in [0, 1]",
        });
    }
    if t == 0.0 {
        return Ok(0.0);
    }
    if t == 1.0 {
        return Ok(1.0);
    }
    let (a, b) = (p.alpha, p.beta);
    // log of t^a (1-t)^b / (a B(a,b)) prefactor
    let front = (log_gamma_unchecked(a + b)
        - log_gamma_unchecked(a)
        - log_gamma_unchecked(b)
        + a * t.ln()
        + b * (1.0 - t).ln())
    .exp();
    let v = if t < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, t)? / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - t)? / b
    };
    Ok(v.clamp(0.0, 1.0))
}

fn beta_cf(a: f64, b: f64, x: f64) -> Result<f64> {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=CF_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            return Ok(h);
        }
    }
    Err(Error::NoConvergence {
        what: "incomplete beta continued fraction",
        iterations: CF_MAX_ITER,
    })
}

/// Inverse of [`beta_cdf`] in t: returns t with |I_t(α,β) − q| ≤ 1e−9.
///
/// Bisection bracket refined by safeguarded Newton steps.
pub fn beta_inverse_cdf(p: BetaParams, q: f64) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Domain {
            what: "beta_inverse_cdf q",
            value: q,
            constraint: "q in (0, 1)",
        });
    }
    let log_bt = log_beta(p.alpha, p.beta)?;
    let mut lo = 0.0f64;
    let mut hi = 1.0f64;
    let mut t = 0.5f64;
    for _ in 0..INV_MAX_ITER {
        let f = beta_cdf(p, t)? - q;
        if f.abs() <= 1e-12 {
            return Ok(t);
        }
        if f > 0.0 {
            hi = t;
        } else {
            lo = t;
        }
        // Newton step from the density; fall back to bisection when it
        // leaves the bracket or the density underflows.
        let ld = (p.alpha - 1.0) * t.ln() + (p.beta - 1.0) * (1.0 - t).ln() - log_bt;
        let mut next = f64::NAN;
        if ld > -700.0 {
            let cand = t - f / ld.exp();
            if cand > lo && cand < hi {
                next = cand;
            }
        }
        if !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        if (hi - lo) < 1e-17 {
            return Ok(t);
        }
        t = next;
    }
    // The bracket is tight enough for the contract in practice well before
    // the cap; reaching it signals pathological parameters.
    let f = beta_cdf(p, t)? - q;
    if f.abs() <= 1e-9 {
        Ok(t)
    } else {
        Err(Error::NoConvergence {
            what: "beta_inverse_cdf",
            iterations: INV_MAX_ITER,
        })
    }
}

/// A Beta draw together with the pathwise derivative of the draw with
/// respect to α, obtained by implicit differentiation of the CDF:
/// ∂y/∂α = −(∂I_y/∂α) / pdf(y).
#[derive(Debug, Clone, Copy)]
pub struct BetaSample {
    pub y: f64,
    pub dy_dalpha: f64,
}

/// Step for the central finite difference of I_t in α.
const DIDA_STEP: f64 = 1e-5;

/// ∂I_t(α,β)/∂α by central finite difference.
pub fn beta_cdf_dalpha(p: BetaParams, t: f64) -> Result<f64> {
    let h = DIDA_STEP.min(0.5 * p.alpha);
    let hi = beta_cdf(BetaParams::new(p.alpha + h, p.beta)?, t)?;
    let lo = beta_cdf(BetaParams::new(p.alpha - h, p.beta)?, t)?;
    Ok((hi - lo) / (2.0 * h))
}

/// Inverse-transform Beta draw carrying ∂y/∂α.
pub fn sample_beta<R: Rng + ?Sized>(p: BetaParams, rng: &mut R) -> Result<BetaSample> {
    let u = loop {
        let u: f64 = rng.gen();
        if u > 0.0 && u < 1.0 {
            break u;
        }
    };
    sample_beta_from_uniform(p, u)
}

/// Deterministic part of [`sample_beta`]: maps a fixed uniform draw through
/// the inverse CDF. Exposed so callers can reuse a common random number.
pub fn sample_beta_from_uniform(p: BetaParams, u: f64) -> Result<BetaSample> {
    let y = beta_inverse_cdf(p, u)?;
    let pdf = p.pdf(y)?;
    let dy_dalpha = if pdf > 1e-290 {
        -beta_cdf_dalpha(p, y)? / pdf
    } else {
        0.0
    };
    Ok(BetaSample { y, dy_dalpha })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    // Extended-precision fixtures (mpmath, 40 digits).
    const LGAMMA_FIXTURES: &[(f64, f64)] = &[
        (0.001, 6.907178885383853682512),
        (0.01, 4.599479878042021722514),
        (0.1, 2.25271265173420595987),
        (0.3, 1.095797994818075521677),
        (0.5, 0.5723649429247000870717),
        (1.0, 0.0),
        (1.5, -0.1207822376352452223455),
        (2.0, 0.0),
        (3.7, 1.428072326665387921872),
        (5.0, 3.178053830347945619647),
        (10.0, 12.80182748008146961121),
        (33.5, 83.30242550295005344289),
        (37.5, 97.52177522288820419751),
        (64.0, 201.0093163992815266793),
        (93.5, 329.4502433708052665886),
        (100.0, 359.134205369575398776),
        (157.0, 635.2219378550597328635),
        (1000.0, 5905.220423209181211826),
        (10000.0, 82099.71749644237727265),
    ];

    const DIGAMMA_FIXTURES: &[(f64, f64)] = &[
        (0.01, -100.5608854578686744975),
        (0.1, -10.42375494041107679517),
        (0.5, -1.963510026021423479441),
        (1.0, -0.5772156649015328606065),
        (2.0, 0.4227843350984671393935),
        (5.0, 1.506117668431800472727),
        (10.0, 2.251752589066721107647),
        (37.5, 3.610948344596338412047),
        (100.0, 4.600161852738087400199),
        (1000.0, 6.90725519564881205205),
        (10000.0, 9.210290371142849403572),
    ];

    const BETAINC_FIXTURES: &[(f64, f64, f64, f64)] = &[
        (2.0, 3.0, 0.5, 0.6875),
        (33.5, 3.5, 0.9, 0.3965970210466661625581),
        (33.5, 3.5, 0.99, 0.9983494828399410715405),
        (0.5, 0.5, 0.3, 0.3690101195655453827554),
        (5.0, 1.0, 0.7, 0.16807),
        (1.0, 8.0, 0.11, 0.6063411194297919),
        (103.5, 1.5, 0.995, 0.7915510885812884829054),
        (12.0, 34.0, 0.2, 0.174119477670788293526),
    ];

    #[test]
    fn log_gamma_matches_extended_precision() {
        for &(x, want) in LGAMMA_FIXTURES {
            let got = log_gamma(x).unwrap();
            let tol = 1e-12 * want.abs().max(1.0);
            assert!(
                (got - want).abs() <= tol,
                "lgamma({x}): got {got}, want {want}"
            );
        }
    }

    #[test]
    fn log_gamma_rejects_nonpositive() {
        assert!(log_gamma(0.0).is_err());
        assert!(log_gamma(-3.0).is_err());
        assert!(log_gamma(f64::NAN).is_err());
    }

    #[test]
    fn log_gamma_recurrence_property() {
        for &x in &[1e-3, 0.4, 1.0, 2.5, 17.0, 300.0, 5000.0] {
            let lhs = log_gamma(x + 1.0).unwrap() - log_gamma(x).unwrap();
            let rhs = x.ln();
            assert!(
                (lhs - rhs).abs() <= 1e-10 * rhs.abs().max(1.0),
                "lgamma recurrence at {x}: {lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn digamma_matches_extended_precision() {
        for &(x, want) in DIGAMMA_FIXTURES {
            let got = digamma(x).unwrap();
            assert!(
                (got - want).abs() <= 1e-10 * want.abs().max(1.0),
                "digamma({x}): got {got}, want {want}"
            );
        }
    }

    #[test]
    fn digamma_recurrence_property() {
        for &x in &[0.5, 1.0, 5.0, 50.0] {
            let lhs = digamma(x + 1.0).unwrap() - digamma(x).unwrap();
            assert!((lhs - 1.0 / x).abs() < 1e-9, "digamma recurrence at {x}");
        }
    }

    #[test]
    fn digamma_matches_log_gamma_finite_difference() {
        let h = 1e-5;
        let x = 37.5;
        let fd = (log_gamma(x + h).unwrap() - log_gamma(x - h).unwrap()) / (2.0 * h);
        assert!((digamma(x).unwrap() - fd).abs() < 1e-6);
    }

    #[test]
    fn trigamma_closed_form_anchors() {
        let pi2 = std::f64::consts::PI * std::f64::consts::PI;
        assert!((trigamma(1.0).unwrap() - pi2 / 6.0).abs() < 1e-12);
        assert!((trigamma(0.5).unwrap() - pi2 / 2.0).abs() < 1e-12);
        assert!((trigamma(2.0).unwrap() - (pi2 / 6.0 - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn trigamma_recurrence_and_digamma_derivative() {
        for &x in &[0.3, 1.7, 8.0, 120.0] {
            let lhs = trigamma(x).unwrap() - trigamma(x + 1.0).unwrap();
            assert!((lhs - 1.0 / (x * x)).abs() < 1e-10, "recurrence at {x}");
        }
        let h = 1e-5;
        for &x in &[0.8, 4.5, 33.0] {
            let fd = (digamma(x + h).unwrap() - digamma(x - h).unwrap()) / (2.0 * h);
            assert!((trigamma(x).unwrap() - fd).abs() < 1e-5, "derivative at {x}");
        }
    }

    #[test]
    fn beta_cdf_fixtures() {
        for &(a, b, t, want) in BETAINC_FIXTURES {
            let got = beta_cdf(BetaParams::new(a, b).unwrap(), t).unwrap();
            assert!(
                (got - want).abs() <= 1e-10,
                "I_{t}({a},{b}): got {got}, want {want}"
            );
        }
    }

    #[test]
    fn beta_cdf_endpoints_and_uniform() {
        let p = BetaParams::new(1.0, 1.0).unwrap();
        assert_eq!(beta_cdf(p, 0.0).unwrap(), 0.0);
        assert_eq!(beta_cdf(p, 1.0).unwrap(), 1.0);
        assert!((beta_cdf(p, 0.3).unwrap() - 0.3).abs() < 1e-14);
        // alpha=2, beta=3: CDF 6t^2 - 8t^3 + 3t^4
        let p = BetaParams::new(2.0, 3.0).unwrap();
        let t = 0.5f64;
        let exact = 6.0 * t.powi(2) - 8.0 * t.powi(3) + 3.0 * t.powi(4);
        assert!((beta_cdf(p, t).unwrap() - exact).abs() < 1e-14);
        assert!((exact - 0.6875).abs() < 1e-15);
    }

    #[test]
    fn beta_cdf_monotone_in_t() {
        let mut rng = rng_from_seed(11);
        for _ in 0..20 {
            let a = 0.5 + 50.0 * rng.gen::<f64>();
            let b = 0.5 + 50.0 * rng.gen::<f64>();
            let p = BetaParams::new(a, b).unwrap();
            let mut prev = -1.0;
            for i in 0..=40 {
                let t = i as f64 / 40.0;
                let v = beta_cdf(p, t).unwrap();
                assert!(v >= prev, "non-monotone at a={a} b={b} t={t}");
                prev = v;
            }
        }
    }

    #[test]
    fn beta_inverse_cdf_round_trip() {
        let mut rng = rng_from_seed(5);
        for _ in 0..50 {
            let a = 0.5 + 80.0 * rng.gen::<f64>();
            let b = 0.5 + 20.0 * rng.gen::<f64>();
            let q = 0.001 + 0.998 * rng.gen::<f64>();
            let p = BetaParams::new(a, b).unwrap();
            let t = beta_inverse_cdf(p, q).unwrap();
            let back = beta_cdf(p, t).unwrap();
            assert!(
                (back - q).abs() <= 1e-8,
                "round trip a={a} b={b} q={q}: got {back}"
            );
        }
    }

    #[test]
    fn beta_inverse_cdf_uniform_identity() {
        let p = BetaParams::new(1.0, 1.0).unwrap();
        let t = beta_inverse_cdf(p, 0.25).unwrap();
        assert!((t - 0.25).abs() < 1e-12);
    }

    #[test]
    fn beta_inverse_cdf_median_fixture() {
        // kappa=30, d=8 case: alpha = 33.5, beta = 3.5; mpmath median.
        let p = BetaParams::new(33.5, 3.5).unwrap();
        let med = beta_inverse_cdf(p, 0.5).unwrap();
        assert!((med - 0.91268256981398183293).abs() < 1e-9);
    }

    #[test]
    fn beta_median_matches_mc_median() {
        // Sampler median against the analytic inverse CDF at the 0.5 quantile.
        let p = BetaParams::new(33.5, 3.5).unwrap();
        let mut rng = rng_from_seed(123);
        let n = 200_000usize;
        let mut draws: Vec<f64> = Vec::with_capacity(n);
        for _ in 0..n {
            draws.push(sample_beta(p, &mut rng).unwrap().y);
        }
        draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mc_median = 0.5 * (draws[n / 2 - 1] + draws[n / 2]);
        let analytic = beta_inverse_cdf(p, 0.5).unwrap();
        assert!(
            (mc_median - analytic).abs() < 1e-3,
            "MC median {mc_median} vs analytic {analytic}"
        );
    }

    #[test]
    fn sample_beta_uniform_case_is_identity() {
        let p = BetaParams::new(1.0, 1.0).unwrap();
        let mut rng = rng_from_seed(7);
        let u: f64 = rng.gen();
        let s = sample_beta_from_uniform(p, u).unwrap();
        assert_eq!(s.y, u);
    }

    #[test]
    fn sample_beta_mean_matches_formula() {
        // alpha/(alpha+beta) = 33.5/37 = 0.90540..., within 4 SE at n = 1e5.
        let p = BetaParams::new(33.5, 3.5).unwrap();
        let mut rng = rng_from_seed(99);
        let n = 100_000usize;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let y = sample_beta(p, &mut rng).unwrap().y;
            sum += y;
            sumsq += y * y;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        let se = (var / n as f64).sqrt();
        let want = 33.5 / 37.0;
        assert!(
            (mean - want).abs() < 4.0 * se,
            "mean {mean} vs {want}, se {se}"
        );
    }

    #[test]
    fn sample_beta_gradient_matches_common_random_fd() {
        // d/dkappa E[y] via dy_dalpha against CRN finite difference, h = 0.1.
        let kappa = 30.0;
        let (d, h) = (8.0f64, 0.1f64);
        let beta = (d - 1.0) / 2.0;
        let n = 50_000usize;
        let mut us = Vec::with_capacity(n);
        let mut rng = rng_from_seed(2024);
        for _ in 0..n {
            let u: f64 = rng.gen();
            us.push(u.clamp(1e-12, 1.0 - 1e-12));
        }
        let mean_at = |k: f64| -> f64 {
            let p = BetaParams::new(k + beta, beta).unwrap();
            us.iter()
                .map(|&u| sample_beta_from_uniform(p, u).unwrap().y)
                .sum::<f64>()
                / n as f64
        };
        let p = BetaParams::new(kappa + beta, beta).unwrap();
        let grad: f64 = us
            .iter()
            .map(|&u| sample_beta_from_uniform(p, u).unwrap().dy_dalpha)
            .sum::<f64>()
            / n as f64;
        let fd = (mean_at(kappa + h) - mean_at(kappa - h)) / (2.0 * h);
        let rel = (grad - fd).abs() / fd.abs();
        assert!(rel <= 0.02, "pathwise {grad} vs fd {fd}, rel {rel}");
    }

    #[test]
    fn sample_beta_seed_reproducible() {
        let p = BetaParams::new(12.5, 3.5).unwrap();
        let a: Vec<f64> = {
            let mut rng = rng_from_seed(31);
            (0..32).map(|_| sample_beta(p, &mut rng).unwrap().y).collect()
        };
        let b: Vec<f64> = {
            let mut rng = rng_from_seed(31);
            (0..32).map(|_| sample_beta(p, &mut rng).unwrap().y).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_params() {
        assert!(BetaParams::new(0.0, 1.0).is_err());
        assert!(BetaParams::new(1.0, -1.0).is_err());
        assert!(BetaParams::new(f64::INFINITY, 1.0).is_err());
        let p = BetaParams::new(1.0, 1.0).unwrap();
        assert!(beta_cdf(p, -0.1).is_err());
        assert!(beta_cdf(p, 1.1).is_err());
        assert!(beta_inverse_cdf(p, 0.0).is_err());
        assert!(beta_inverse_cdf(p, 1.0).is_err());
    }
}
