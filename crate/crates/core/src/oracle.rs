//! Independent verification oracles. Everything here deliberately avoids the
//! closed forms it checks: normalizers are re-derived by adaptive quadrature
//! of the unnormalized density, entropies and divergences by Monte Carlo over
//! the sampler, uniformity by a chi-squared histogram test.

use crate::error::{Error, Result};
use crate::power_spherical::{log_prob, rsample, uniform_log_prob, PowerSphericalParams};
use crate::rng::rng_from_seed;
use crate::sphere::{log_surface_area, SpherePoint};

/// Adaptive Simpson integration on [a, b] to absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        ((b - a) / 6.0 * (fa + 4.0 * fm + fb), m, fm)
    }
    // the argument list is the full recursion state; a struct would
    // just rename the same ten values
    #[allow(clippy::too_many_arguments)]
    fn recurse<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        whole: f64,
        m: f64,
        fm: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (left, lm, flm) = simpson(f, a, fa, m, fm);
        let (right, rm, frm) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, fa, m, fm, left, lm, flm, 0.5 * tol, depth - 1)
            + recurse(f, m, fm, b, fb, right, rm, frm, 0.5 * tol, depth - 1)
    }
    let fa = f(a);
    let fb = f(b);
    let (whole, m, fm) = simpson(f, a, fa, b, fb);
    recurse(f, a, fa, b, fb, whole, m, fm, tol, 48)
}

/// Normalizer by quadrature: C_d(kappa) = S_{d-2} Int_0^pi (1+cos phi)^kappa
/// sin^{d-2} phi d phi, returned as a log. The substitution t = cos phi that
/// produces this form removes the endpoint singularity of the t-integral at
/// d = 2, so it is valid for every d >= 2.
pub fn log_normalizer_quadrature(d: usize, kappa: f64) -> Result<f64> {
    if d < 2 {
        return Err(Error::InvalidDimension { d });
    }
    if !kappa.is_finite() || kappa < 0.0 {
        return Err(Error::Domain {
            what: "log_normalizer_quadrature kappa",
            value: kappa,
            constraint: "kappa >= 0 and finite",
        });
    }
    let log_s_lower = if d == 2 {
        std::f64::consts::LN_2
    } else {
        log_surface_area(d - 1)?
    };
    // log-integrand, peak-normalized before exponentiation so the adaptive
    // tolerance is meaningful for arbitrarily large kappa
    let log_f = move |phi: f64| {
        let c: f64 = 1.0 + phi.cos();
        let s: f64 = phi.sin();
        let lc = if kappa == 0.0 { 0.0 } else { kappa * c.ln() };
        let ls = if d == 2 { 0.0 } else { (d as f64 - 2.0) * s.ln() };
        lc + ls
    };
    let peak = (0..=4096)
        .map(|i| log_f(std::f64::consts::PI * i as f64 / 4096.0))
        .fold(f64::NEG_INFINITY, f64::max);
    if !peak.is_finite() {
        return Err(Error::Domain {
            what: "log_normalizer_quadrature peak",
            value: peak,
            constraint: "finite",
        });
    }
    let scaled = move |phi: f64| {
        let l = log_f(phi) - peak;
        if l < -745.0 {
            0.0
        } else {
            l.exp()
        }
    };
    // scaled integrand is <= 1, so an absolute tolerance is a relative one
    let integral = adaptive_simpson(&scaled, 0.0, std::f64::consts::PI, 1e-13);
    if integral <= 0.0 || !integral.is_finite() {
        return Err(Error::Domain {
            what: "log_normalizer_quadrature integral",
            value: integral,
            constraint: "positive finite",
        });
    }
    Ok(log_s_lower + peak + integral.ln())
}

/// Integral of exp(log_prob) over the whole sphere by the same angular
/// reduction; 1.0 for a correctly normalized density.
pub fn density_integral(p: &PowerSphericalParams) -> Result<f64> {
    let d = p.dim();
    let log_s_lower = if d == 2 {
        std::f64::consts::LN_2
    } else {
        log_surface_area(d - 1)?
    };
    let log_c = crate::power_spherical::log_normalizer(d, p.kappa())?;
    let kappa = p.kappa();
    let log_f = move |phi: f64| {
        let c: f64 = 1.0 + phi.cos();
        let s: f64 = phi.sin();
        let lc = if kappa == 0.0 { 0.0 } else { kappa * c.ln() };
        let ls = if d == 2 { 0.0 } else { (d as f64 - 2.0) * s.ln() };
        lc - log_c + ls
    };
    let peak = (0..=4096)
        .map(|i| log_f(std::f64::consts::PI * i as f64 / 4096.0))
        .fold(f64::NEG_INFINITY, f64::max);
    let scaled = move |phi: f64| {
        let l = log_f(phi) - peak;
        if l < -745.0 {
            0.0
        } else {
            l.exp()
        }
    };
    let integral = adaptive_simpson(&scaled, 0.0, std::f64::consts::PI, 1e-13);
    Ok((log_s_lower + peak + integral.ln()).exp())
}

/// Monte Carlo entropy and KL-to-uniform estimates sharing one draw stream.
#[derive(Debug, Clone, Copy)]
pub struct McDivergences {
    pub entropy: f64,
    pub kl_to_uniform: f64,
    pub n: usize,
}

pub fn mc_divergences(p: &PowerSphericalParams, n: usize, seed: u64) -> Result<McDivergences> {
    if n == 0 {
        return Err(Error::InsufficientSamples { got: 0, need: 1 });
    }
    let mut rng = rng_from_seed(seed);
    let u_lp = uniform_log_prob(p.dim())?;
    let mut acc = 0.0;
    for _ in 0..n {
        let tr = rsample(p, &mut rng)?;
        acc += log_prob(p, &tr.z)?;
    }
    let mean_lp = acc / n as f64;
    Ok(McDivergences {
        entropy: -mean_lp,
        kl_to_uniform: mean_lp - u_lp,
        n,
    })
}

/// Empirical mean resultant against the kappa/(kappa+d-1) law.
#[derive(Debug, Clone, Copy)]
pub struct MeanResultantCheck {
    pub empirical: f64,
    pub analytic: f64,
    pub std_error: f64,
    /// |empirical - analytic| in units of the standard error.
    pub sigmas: f64,
}

pub fn mc_mean_resultant(
    p: &PowerSphericalParams,
    n: usize,
    seed: u64,
) -> Result<MeanResultantCheck> {
    if n < 2 {
        return Err(Error::InsufficientSamples { got: n, need: 2 });
    }
    let mut rng = rng_from_seed(seed);
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    for _ in 0..n {
        let tr = rsample(p, &mut rng)?;
        let d = p.mu().dot(&tr.z)?;
        sum += d;
        sumsq += d * d;
    }
    let mean = sum / n as f64;
    let var = (sumsq / n as f64 - mean * mean).max(0.0);
    let se = (var / n as f64).sqrt().max(1e-300);
    let analytic = p.mean_resultant();
    Ok(MeanResultantCheck {
        empirical: mean,
        analytic,
        std_error: se,
        sigmas: (mean - analytic).abs() / se,
    })
}

/// Chi-squared statistic for angular uniformity of kappa = 0 samples on the
/// circle, with its 99th-percentile critical value.
#[derive(Debug, Clone, Copy)]
pub struct CircleUniformity {
    pub chi_squared: f64,
    pub dof: usize,
    pub critical_99: f64,
}

impl CircleUniformity {
    pub fn passes(&self) -> bool {
        self.chi_squared < self.critical_99
    }
}

/// Wilson-Hilferty approximation to the chi-squared 0.99 quantile; within
/// 0.1% of tabulated values for dof >= 10.
pub fn chi_squared_critical_99(dof: usize) -> f64 {
    let k = dof as f64;
    let z99 = 2.326_347_874_040_841; // standard normal 0.99 quantile
    let c = 2.0 / (9.0 * k);
    k * (1.0 - c + z99 * c.sqrt()).powi(3)
}

pub fn circle_uniformity(n: usize, bins: usize, seed: u64) -> Result<CircleUniformity> {
    if bins < 2 || n < 10 * bins {
        return Err(Error::InsufficientSamples {
            got: n,
            need: 10 * bins,
        });
    }
    let mu = SpherePoint::north_pole(2)?;
    let p = PowerSphericalParams::new(mu, 0.0)?;
    let mut rng = rng_from_seed(seed);
    let mut counts = vec![0usize; bins];
    for _ in 0..n {
        let tr = rsample(&p, &mut rng)?;
        let c = tr.z.coords();
        let mut angle = c[1].atan2(c[0]);
        if angle < 0.0 {
            angle += 2.0 * std::f64::consts::PI;
        }
        let b = ((angle / (2.0 * std::f64::consts::PI) * bins as f64) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let expected = n as f64 / bins as f64;
    let chi_squared = counts
        .iter()
        .map(|&c| {
            let d = c as f64 - expected;
            d * d / expected
        })
        .sum();
    Ok(CircleUniformity {
        chi_squared,
        dof: bins - 1,
        critical_99: chi_squared_critical_99(bins - 1),
    })
}
