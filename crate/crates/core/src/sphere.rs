//! Deterministic geometry on unit hyperspheres: validated points, Householder
//! reflections, geodesic interpolation, uniform sampling, and log surface
//! areas. All arithmetic is 64-bit; unit tolerance is the global 1e-6.

use crate::error::{Error, Result};
use crate::util::{dot, norm2};
use rand::Rng;
use rand_distr::StandardNormal;

/// Global unit-norm tolerance for constructed sphere points.
pub const UNIT_TOL: f64 = 1e-6;

/// Below this norm a vector is treated as zero and cannot be projected.
pub const ZERO_NORM_TOL: f64 = 1e-12;

/// ‖e1 − μ‖ threshold under which the Householder map degenerates to the
/// identity.
pub const HOUSEHOLDER_DEGENERATE_TOL: f64 = 1e-7;

/// A point on S^(d-1) ⊂ R^d with d ≥ 2, unit within [`UNIT_TOL`].
#[derive(Debug, Clone, PartialEq)]
pub struct SpherePoint {
    coords: Vec<f64>,
}

impl SpherePoint {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.len() < 2 {
            return Err(Error::InvalidDimension { d: coords.len() });
        }
        let n = norm2(&coords);
        if n <= ZERO_NORM_TOL {
            return Err(Error::ZeroVector { norm: n });
        }
        if (n - 1.0).abs() > UNIT_TOL {
            return Err(Error::Domain {
                what: "SpherePoint norm",
                value: n,
                constraint: "within 1e-6 of 1",
            });
        }
        Ok(Self { coords })
    }

    /// First basis vector e1 of R^d.
    pub fn north_pole(d: usize) -> Result<Self> {
        if d < 2 {
            return Err(Error::InvalidDimension { d });
        }
        let mut coords = vec![0.0; d];
        coords[0] = 1.0;
        Ok(Self { coords })
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.coords
    }

    pub fn dot(&self, other: &SpherePoint) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        Ok(dot(&self.coords, &other.coords))
    }
}

/// Radial projection v ↦ v/‖v‖; idempotent on unit vectors.
pub fn project_to_sphere(v: &[f64]) -> Result<SpherePoint> {
    if v.len() < 2 {
        return Err(Error::InvalidDimension { d: v.len() });
    }
    let n = norm2(v);
    if n <= ZERO_NORM_TOL {
        return Err(Error::ZeroVector { norm: n });
    }
    Ok(SpherePoint {
        coords: v.iter().map(|x| x / n).collect(),
    })
}

/// log S_{d-1} for S^{d-1} ⊂ R^d, i.e. log(2 π^{d/2} / Γ(d/2)), evaluated
/// fully in log-space so it stays finite for d in the thousands.
pub fn log_surface_area(d: usize) -> Result<f64> {
    if d < 2 {
        return Err(Error::InvalidDimension { d });
    }
    let half = d as f64 / 2.0;
    Ok(std::f64::consts::LN_2 + half * std::f64::consts::PI.ln()
        - crate::special::log_gamma(half)?)
}

/// The reflection H = I − 2uuᵀ taking e1 to a given mean direction.
/// Degenerate (μ ≈ e1) reflectors act as the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct HouseholderReflector {
    u: Vec<f64>,
    degenerate: bool,
}

impl HouseholderReflector {
    pub fn dim(&self) -> usize {
        self.u.len()
    }

    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    /// Unit normal of the reflection hyperplane; zero vector when degenerate.
    pub fn u(&self) -> &[f64] {
        &self.u
    }
}

/// Reflector with u = (e1 − μ)/‖e1 − μ‖, so that H e1 = μ.
pub fn make_householder(mu: &SpherePoint) -> HouseholderReflector {
    let d = mu.dim();
    let mut u: Vec<f64> = mu.coords().iter().map(|x| -x).collect();
    u[0] += 1.0;
    let n = norm2(&u);
    if n < HOUSEHOLDER_DEGENERATE_TOL {
        return HouseholderReflector {
            u: vec![0.0; d],
            degenerate: true,
        };
    }
    for x in &mut u {
        *x /= n;
    }
    HouseholderReflector { u, degenerate: false }
}

/// v ↦ v − 2u(uᵀv); the identity for degenerate reflectors.
pub fn apply_householder(r: &HouseholderReflector, v: &[f64]) -> Result<Vec<f64>> {
    if v.len() != r.dim() {
        return Err(Error::DimensionMismatch {
            expected: r.dim(),
            got: v.len(),
        });
    }
    if r.degenerate {
        return Ok(v.to_vec());
    }
    let proj = 2.0 * dot(&r.u, v);
    Ok(v.iter().zip(&r.u).map(|(x, u)| x - proj * u).collect())
}

/// Dot-product margin inside which two points count as antipodal (geodesic
/// not unique) or parallel (slerp denominator ill-conditioned).
pub const SLERP_PARALLEL_TOL: f64 = 1e-7;

/// Geodesic interpolation on the sphere. Endpoints are returned exactly;
/// near-parallel inputs fall back to normalized linear interpolation;
/// antipodal inputs are an error.
pub fn slerp(x: &SpherePoint, y: &SpherePoint, t: f64) -> Result<SpherePoint> {
    if x.dim() != y.dim() {
        return Err(Error::DimensionMismatch {
            expected: x.dim(),
            got: y.dim(),
        });
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Domain {
            what: "slerp t",
            value: t,
            constraint: "t in [0, 1]",
        });
    }
    if t == 0.0 {
        return Ok(x.clone());
    }
    if t == 1.0 {
        return Ok(y.clone());
    }
    if x.coords() == y.coords() {
        return Ok(x.clone());
    }
    let d = x.dot(y)?.clamp(-1.0, 1.0);
    if d < -1.0 + SLERP_PARALLEL_TOL {
        return Err(Error::AntipodalPoints { dot: d });
    }
    if d > 1.0 - SLERP_PARALLEL_TOL {
        let mix: Vec<f64> = x
            .coords()
            .iter()
            .zip(y.coords())
            .map(|(a, b)| (1.0 - t) * a + t * b)
            .collect();
        return project_to_sphere(&mix);
    }
    let omega = d.acos();
    let s = omega.sin();
    let (wx, wy) = (((1.0 - t) * omega).sin() / s, (t * omega).sin() / s);
    let mix: Vec<f64> = x
        .coords()
        .iter()
        .zip(y.coords())
        .map(|(a, b)| wx * a + wy * b)
        .collect();
    project_to_sphere(&mix)
}

/// Uniform draw on S^(d-1) as raw coordinates. d = 1 yields ±1 with equal
/// probability (the S^0 case consumed by the sampler); d ≥ 2 normalizes a
/// standard Gaussian vector. Returned coords are always unit.
pub fn sample_uniform_coords<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Result<Vec<f64>> {
    if d == 0 {
        return Err(Error::InvalidDimension { d });
    }
    if d == 1 {
        return Ok(vec![if rng.gen::<bool>() { 1.0 } else { -1.0 }]);
    }
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let n = norm2(&v);
        if n > ZERO_NORM_TOL {
            return Ok(v.into_iter().map(|x| x / n).collect());
        }
    }
}

/// Uniform draw on S^(d-1) as a validated [`SpherePoint`] (d ≥ 2).
pub fn sample_uniform_sphere<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Result<SpherePoint> {
    if d < 2 {
        return Err(Error::InvalidDimension { d });
    }
    Ok(SpherePoint {
        coords: sample_uniform_coords(d, rng)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use proptest::prelude::*;

    fn assert_close(a: f64, b: f64, tol: f64, label: &str) {
        assert!((a - b).abs() <= tol, "{label}: {a} vs {b}");
    }

    #[test]
    fn project_examples() {
        let p = project_to_sphere(&[3.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(p.coords(), &[1.0, 0.0, 0.0, 0.0]);
        let q = project_to_sphere(&[1.0, 1.0]).unwrap();
        assert_close(q.coords()[0], std::f64::consts::FRAC_1_SQRT_2, 1e-12, "proj x");
        assert_close(q.coords()[1], std::f64::consts::FRAC_1_SQRT_2, 1e-12, "proj y");
        // idempotent on unit input up to one rounding of the norm
        let r = project_to_sphere(q.coords()).unwrap();
        for (a, b) in r.coords().iter().zip(q.coords()) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(matches!(
            project_to_sphere(&[0.0, 0.0]),
            Err(Error::ZeroVector { .. })
        ));
    }

    #[test]
    fn sphere_point_validation() {
        assert!(SpherePoint::new(vec![1.0]).is_err());
        assert!(SpherePoint::new(vec![0.5, 0.5]).is_err());
        assert!(SpherePoint::new(vec![1.0, 0.0]).is_ok());
        let almost = vec![1.0 + 5e-7, 0.0];
        assert!(SpherePoint::new(almost).is_ok());
    }

    #[test]
    fn log_surface_area_anchors() {
        assert_close(
            log_surface_area(2).unwrap(),
            (2.0 * std::f64::consts::PI).ln(),
            1e-12,
            "S1",
        );
        assert_close(
            log_surface_area(3).unwrap(),
            (4.0 * std::f64::consts::PI).ln(),
            1e-12,
            "S2",
        );
        // extended-precision fixtures
        assert_close(
            log_surface_area(128).unwrap(),
            -127.0534565243599702246855,
            1e-10,
            "S127",
        );
        assert_close(
            log_surface_area(8).unwrap(),
            3.480307254729491005178464,
            1e-12,
            "S7",
        );
        assert!(log_surface_area(4096).unwrap().is_finite());
        assert!(log_surface_area(1).is_err());
    }

    #[test]
    fn log_surface_area_decays_past_peak() {
        let mut prev = log_surface_area(8).unwrap();
        for d in 9..=512 {
            let cur = log_surface_area(d).unwrap();
            assert!(cur < prev, "surface area not decreasing at d={d}");
            prev = cur;
        }
    }

    #[test]
    fn householder_identity_on_north_pole() {
        let mu = SpherePoint::north_pole(5).unwrap();
        let h = make_householder(&mu);
        assert!(h.is_degenerate());
        let v = vec![0.3, -1.0, 2.0, 0.5, 0.1];
        assert_eq!(apply_householder(&h, &v).unwrap(), v);
    }

    #[test]
    fn householder_antipodal_case() {
        let mu = SpherePoint::new(vec![-1.0, 0.0, 0.0]).unwrap();
        let h = make_householder(&mu);
        assert!(!h.is_degenerate());
        assert_close(h.u()[0], 1.0, 1e-12, "u = e1");
        let img = apply_householder(&h, &[1.0, 2.0, 3.0]).unwrap();
        assert_close(img[0], -1.0, 1e-12, "reflect x");
        assert_close(img[1], 2.0, 1e-12, "keep y");
        assert_close(img[2], 3.0, 1e-12, "keep z");
    }

    #[test]
    fn householder_maps_pole_to_mu_and_back() {
        let mu = SpherePoint::new(vec![0.0, 1.0, 0.0]).unwrap();
        let h = make_householder(&mu);
        let e1 = vec![1.0, 0.0, 0.0];
        let img = apply_householder(&h, &e1).unwrap();
        for (a, b) in img.iter().zip(mu.coords()) {
            assert_close(*a, *b, 1e-12, "H e1 = mu");
        }
        let back = apply_householder(&h, mu.coords()).unwrap();
        for (a, b) in back.iter().zip(&e1) {
            assert_close(*a, *b, 1e-12, "H mu = e1");
        }
    }

    #[test]
    fn householder_dimension_mismatch() {
        let mu = SpherePoint::new(vec![0.0, 1.0]).unwrap();
        let h = make_householder(&mu);
        assert!(matches!(
            apply_householder(&h, &[1.0, 2.0, 3.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn slerp_examples() {
        let x = SpherePoint::new(vec![1.0, 0.0]).unwrap();
        let y = SpherePoint::new(vec![0.0, 1.0]).unwrap();
        assert_eq!(slerp(&x, &y, 0.0).unwrap(), x);
        assert_eq!(slerp(&x, &y, 1.0).unwrap(), y);
        let mid = slerp(&x, &y, 0.5).unwrap();
        let inv_sqrt2 = 1.0 / 2.0f64.sqrt();
        assert_close(mid.coords()[0], inv_sqrt2, 1e-12, "mid x");
        assert_close(mid.coords()[1], inv_sqrt2, 1e-12, "mid y");
    }

    #[test]
    fn slerp_antipodal_errors_and_parallel_falls_back() {
        let x = SpherePoint::new(vec![1.0, 0.0, 0.0]).unwrap();
        let y = SpherePoint::new(vec![-1.0, 0.0, 0.0]).unwrap();
        assert!(matches!(
            slerp(&x, &y, 0.5),
            Err(Error::AntipodalPoints { .. })
        ));
        let near = project_to_sphere(&[1.0, 1e-9, 0.0]).unwrap();
        let mid = slerp(&x, &near, 0.5).unwrap();
        assert_close(norm2(mid.coords()), 1.0, 1e-9, "nlerp output unit");
        assert!(mid.coords()[0] > 0.999999);
    }

    #[test]
    fn slerp_traverses_constant_speed() {
        // equal angular increments along the path
        let mut rng = rng_from_seed(3);
        let x = sample_uniform_sphere(6, &mut rng).unwrap();
        let y = sample_uniform_sphere(6, &mut rng).unwrap();
        let omega = x.dot(&y).unwrap().acos();
        let steps = 8;
        for i in 0..steps {
            let a = slerp(&x, &y, i as f64 / steps as f64).unwrap();
            let b = slerp(&x, &y, (i + 1) as f64 / steps as f64).unwrap();
            let step = a.dot(&b).unwrap().clamp(-1.0, 1.0).acos();
            assert_close(step, omega / steps as f64, 1e-9, "step angle");
        }
    }

    #[test]
    fn uniform_sphere_d1_is_balanced_sign() {
        let mut rng = rng_from_seed(17);
        let n = 100_000;
        let mut pos = 0usize;
        for _ in 0..n {
            let v = sample_uniform_coords(1, &mut rng).unwrap();
            assert!(v[0] == 1.0 || v[0] == -1.0);
            if v[0] == 1.0 {
                pos += 1;
            }
        }
        // binomial(n, 1/2): 4 sigma band
        let sigma = (n as f64 * 0.25).sqrt();
        assert!((pos as f64 - n as f64 / 2.0).abs() < 4.0 * sigma);
    }

    #[test]
    fn uniform_sphere_coordinate_means() {
        let mut rng = rng_from_seed(29);
        let n = 100_000usize;
        let d = 3;
        let mut sums = vec![0.0; d];
        for _ in 0..n {
            let p = sample_uniform_sphere(d, &mut rng).unwrap();
            assert_close(norm2(p.coords()), 1.0, 1e-9, "unit draw");
            for (s, c) in sums.iter_mut().zip(p.coords()) {
                *s += c;
            }
        }
        // coordinate variance is 1/d, so the mean has sigma = 1/sqrt(d n)
        let sigma = 1.0 / ((d * n) as f64).sqrt();
        for s in &sums {
            assert!(
                (s / n as f64).abs() < 4.0 * sigma,
                "coordinate mean {} vs 4 sigma {}",
                s / n as f64,
                4.0 * sigma
            );
        }
    }

    #[test]
    fn uniform_circle_angle_histogram_chi_squared() {
        let mut rng = rng_from_seed(41);
        let n = 100_000usize;
        let bins = 16usize;
        let mut counts = vec![0usize; bins];
        for _ in 0..n {
            let p = sample_uniform_sphere(2, &mut rng).unwrap();
            let mut angle = p.coords()[1].atan2(p.coords()[0]);
            if angle < 0.0 {
                angle += 2.0 * std::f64::consts::PI;
            }
            let b = ((angle / (2.0 * std::f64::consts::PI) * bins as f64) as usize).min(bins - 1);
            counts[b] += 1;
        }
        let expected = n as f64 / bins as f64;
        let chi2: f64 = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        // chi-squared critical value, df = 15, alpha = 0.01
        assert!(chi2 < 30.5779, "chi2 = {chi2}");
    }

    proptest! {
        #[test]
        fn householder_is_involution(
            raw in proptest::collection::vec(-3.0f64..3.0, 3..12),
            v in proptest::collection::vec(-5.0f64..5.0, 3..12),
        ) {
            let d = raw.len().min(v.len());
            let Ok(mu) = project_to_sphere(&raw[..d]) else { return Ok(()) };
            let h = make_householder(&mu);
            let once = apply_householder(&h, &v[..d]).unwrap();
            let twice = apply_householder(&h, &once).unwrap();
            for (a, b) in twice.iter().zip(&v[..d]) {
                prop_assert!((a - b).abs() < 1e-9);
            }
            // norm preservation
            prop_assert!((norm2(&once) - norm2(&v[..d])).abs() < 1e-9);
        }

        #[test]
        fn slerp_stays_on_sphere(
            xs in proptest::collection::vec(-2.0f64..2.0, 4),
            ys in proptest::collection::vec(-2.0f64..2.0, 4),
            t in 0.0f64..=1.0,
        ) {
            let Ok(x) = project_to_sphere(&xs) else { return Ok(()) };
            let Ok(y) = project_to_sphere(&ys) else { return Ok(()) };
            match slerp(&x, &y, t) {
                Ok(p) => prop_assert!((norm2(p.coords()) - 1.0).abs() < 1e-6),
                Err(Error::AntipodalPoints { .. }) => {}
                Err(e) => prop_assert!(false, "unexpected error {e}"),
            }
        }

        #[test]
        fn householder_sends_pole_to_mean(
            raw in proptest::collection::vec(-3.0f64..3.0, 2..10),
        ) {
            let Ok(mu) = project_to_sphere(&raw) else { return Ok(()) };
            let h = make_householder(&mu);
            let mut e1 = vec![0.0; mu.dim()];
            e1[0] = 1.0;
            let img = apply_householder(&h, &e1).unwrap();
            for (a, b) in img.iter().zip(mu.coords()) {
                prop_assert!((a - b).abs() < 1e-6);
            }
        }
    }
}
