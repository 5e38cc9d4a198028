//! C ABI over the Power Spherical distribution layer: opaque
//! parameter handles, status codes instead of unwinding, and
//! caller-provided output buffers. The header is generated into
//! `include/hsvae.h` at build time.
//!
//! Thread safety: handles are immutable after construction and may be
//! shared across threads; sampling takes an explicit seed instead of
//! carrying RNG state.

use std::os::raw::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};

use hsvae::power_spherical::{
    entropy, kl_to_uniform, log_normalizer, log_prob, rsample, PowerSphericalParams,
};
use hsvae::rng::rng_from_seed;
use hsvae::sphere::{slerp, SpherePoint};
use hsvae::Error;

/// Status code returned by every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HsvaeStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// Sizes or flags are structurally invalid (dimension < 2, length
    /// mismatch, zero samples).
    InvalidArgument = 2,
    /// Values are outside the mathematical domain (non-unit direction,
    /// negative concentration, antipodal interpolation endpoints).
    DomainError = 3,
    /// The output buffer is smaller than the documented requirement.
    BufferTooSmall = 4,
    /// Unexpected internal failure; never expected in normal use.
    InternalError = 5,
}

fn map_error(e: &Error) -> HsvaeStatus {
    match e {
        Error::InvalidDimension { .. } | Error::DimensionMismatch { .. } => {
            HsvaeStatus::InvalidArgument
        }
        Error::ZeroVector { .. }
        | Error::ZeroChunk { .. }
        | Error::AntipodalPoints { .. }
        | Error::Domain { .. } => HsvaeStatus::DomainError,
        _ => HsvaeStatus::InternalError,
    }
}

/// Opaque Power Spherical parameter handle (direction plus
/// concentration).
pub struct HsvaePowerSpherical {
    params: PowerSphericalParams,
}

fn guarded(f: impl FnOnce() -> HsvaeStatus) -> HsvaeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => HsvaeStatus::InternalError,
    }
}

/// Creates a distribution handle from a unit direction of length `dim`
/// and concentration `kappa >= 0`. On success writes the handle to
/// `out`; free it with `hsvae_power_spherical_free`.
///
/// # Safety
/// `mu` must point to `dim` readable doubles and `out` to a writable
/// pointer slot.
#[no_mangle]
pub unsafe extern "C" fn hsvae_power_spherical_new(
    mu: *const f64,
    dim: usize,
    kappa: f64,
    out: *mut *mut HsvaePowerSpherical,
) -> HsvaeStatus {
    guarded(|| {
        if mu.is_null() || out.is_null() {
            return HsvaeStatus::NullPointer;
        }
        let coords = std::slice::from_raw_parts(mu, dim).to_vec();
        let point = match SpherePoint::new(coords) {
            Ok(p) => p,
            Err(e) => return map_error(&e),
        };
        match PowerSphericalParams::new(point, kappa) {
            Ok(params) => {
                *out = Box::into_raw(Box::new(HsvaePowerSpherical { params }));
                HsvaeStatus::Ok
            }
            Err(e) => map_error(&e),
        }
    })
}

/// Frees a handle; a null pointer is a no-op.
///
/// # Safety
/// `p` must be null or a pointer previously returned by
/// `hsvae_power_spherical_new` that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn hsvae_power_spherical_free(p: *mut HsvaePowerSpherical) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Ambient dimension of the handle's sphere.
///
/// # Safety
/// `p` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hsvae_dim(p: *const HsvaePowerSpherical, out: *mut usize) -> HsvaeStatus {
    guarded(|| {
        if p.is_null() || out.is_null() {
            return HsvaeStatus::NullPointer;
        }
        *out = (*p).params.dim();
        HsvaeStatus::Ok
    })
}

/// log C_d(kappa), the log normalizing constant, without a handle.
///
/// # Safety
/// `out` must point to a writable double.
#[no_mangle]
pub unsafe extern "C" fn hsvae_log_normalizer(dim: usize, kappa: f64, out: *mut f64) -> HsvaeStatus {
    guarded(|| {
        if out.is_null() {
            return HsvaeStatus::NullPointer;
        }
        match log_normalizer(dim, kappa) {
            Ok(v) => {
                *out = v;
                HsvaeStatus::Ok
            }
            Err(e) => map_error(&e),
        }
    })
}

/// Log density at a unit point `z` of length `dim` (must match the
/// handle's dimension).
///
/// # Safety
/// `p` must be a live handle, `z` must point to `dim` readable
/// doubles, `out` to a writable double.
#[no_mangle]
pub unsafe extern "C" fn hsvae_log_prob(
    p: *const HsvaePowerSpherical,
    z: *const f64,
    dim: usize,
    out: *mut f64,
) -> HsvaeStatus {
    guarded(|| {
        if p.is_null() || z.is_null() || out.is_null() {
            return HsvaeStatus::NullPointer;
        }
        let params = &(*p).params;
        if dim != params.dim() {
            return HsvaeStatus::InvalidArgument;
        }
        let point = match SpherePoint::new(std::slice::from_raw_parts(z, dim).to_vec()) {
            Ok(pt) => pt,
            Err(e) => return map_error(&e),
        };
        match log_prob(params, &point) {
            Ok(v) => {
                *out = v;
                HsvaeStatus::Ok
            }
            Err(e) => map_error(&e),
        }
    })
}

/// Differential entropy of the distribution.
///
/// # Safety
/// `p` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hsvae_entropy(p: *const HsvaePowerSpherical, out: *mut f64) -> HsvaeStatus {
    guarded(|| {
        if p.is_null() || out.is_null() {
            return HsvaeStatus::NullPointer;
        }
        match entropy(&(*p).params) {
            Ok(v) => {
                *out = v;
                HsvaeStatus::Ok
            }
            Err(e) => map_error(&e),
        }
    })
}

/// KL divergence to the uniform distribution on the same sphere.
///
/// # Safety
/// `p` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hsvae_kl_to_uniform(
    p: *const HsvaePowerSpherical,
    out: *mut f64,
) -> HsvaeStatus {
    guarded(|| {
        if p.is_null() || out.is_null() {
            return HsvaeStatus::NullPointer;
        }
        match kl_to_uniform(&(*p).params) {
            Ok(v) => {
                *out = v;
                HsvaeStatus::Ok
            }
            Err(e) => map_error(&e),
        }
    })
}

/// Expected alignment E[mu . z] = kappa / (kappa + d - 1).
///
/// # Safety
/// `p` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hsvae_mean_resultant(
    p: *const HsvaePowerSpherical,
    out: *mut f64,
) -> HsvaeStatus {
    guarded(|| {
        if p.is_null() || out.is_null() {
            return HsvaeStatus::NullPointer;
        }
        *out = (*p).params.mean_resultant();
        HsvaeStatus::Ok
    })
}

/// Draws `n` reparameterized samples into `out` (row-major, `n x dim`
/// doubles). `out_len` is the buffer length in doubles and must be at
/// least `n * dim`. The stream is fully determined by `seed`.
///
/// # Safety
/// `p` must be a live handle; `out` must point to `out_len` writable
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn hsvae_sample(
    p: *const HsvaePowerSpherical,
    seed: u64,
    n: usize,
    out: *mut f64,
    out_len: usize,
) -> HsvaeStatus {
    guarded(|| {
        if p.is_null() || out.is_null() {
            return HsvaeStatus::NullPointer;
        }
        if n == 0 {
            return HsvaeStatus::InvalidArgument;
        }
        let params = &(*p).params;
        let dim = params.dim();
        let need = match n.checked_mul(dim) {
            Some(v) => v,
            None => return HsvaeStatus::InvalidArgument,
        };
        if out_len < need {
            return HsvaeStatus::BufferTooSmall;
        }
        let dest = std::slice::from_raw_parts_mut(out, need);
        let mut rng = rng_from_seed(seed);
        for i in 0..n {
            match rsample(params, &mut rng) {
                Ok(tr) => dest[i * dim..(i + 1) * dim].copy_from_slice(tr.z.coords()),
                Err(e) => return map_error(&e),
            }
        }
        HsvaeStatus::Ok
    })
}

/// Spherical linear interpolation between unit vectors `x` and `y` of
/// length `dim` at parameter `t` in [0, 1]; writes `dim` doubles to
/// `out`. Fails with a domain error for antipodal endpoints.
///
/// # Safety
/// `x` and `y` must point to `dim` readable doubles; `out` must point
/// to `out_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn hsvae_slerp(
    x: *const f64,
    y: *const f64,
    dim: usize,
    t: f64,
    out: *mut f64,
    out_len: usize,
) -> HsvaeStatus {
    guarded(|| {
        if x.is_null() || y.is_null() || out.is_null() {
            return HsvaeStatus::NullPointer;
        }
        if out_len < dim {
            return HsvaeStatus::BufferTooSmall;
        }
        if !(0.0..=1.0).contains(&t) {
            return HsvaeStatus::InvalidArgument;
        }
        let px = match SpherePoint::new(std::slice::from_raw_parts(x, dim).to_vec()) {
            Ok(p) => p,
            Err(e) => return map_error(&e),
        };
        let py = match SpherePoint::new(std::slice::from_raw_parts(y, dim).to_vec()) {
            Ok(p) => p,
            Err(e) => return map_error(&e),
        };
        match slerp(&px, &py, t) {
            Ok(z) => {
                std::slice::from_raw_parts_mut(out, dim).copy_from_slice(z.coords());
                HsvaeStatus::Ok
            }
            Err(e) => map_error(&e),
        }
    })
}

/// Static, null-terminated description of a status code.
#[no_mangle]
pub extern "C" fn hsvae_status_message(status: HsvaeStatus) -> *const c_char {
    let msg: &'static [u8] = match status {
        HsvaeStatus::Ok => b"ok\0",
        HsvaeStatus::NullPointer => b"null pointer argument\0",
        HsvaeStatus::InvalidArgument => b"invalid argument\0",
        HsvaeStatus::DomainError => b"value outside mathematical domain\0",
        HsvaeStatus::BufferTooSmall => b"output buffer too small\0",
        HsvaeStatus::InternalError => b"internal error\0",
    };
    msg.as_ptr() as *const c_char
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit4() -> Vec<f64> {
        let v = [0.5f64, -0.5, 0.5, 0.5];
        v.to_vec()
    }

    fn new_handle(mu: &[f64], kappa: f64) -> *mut HsvaePowerSpherical {
        let mut h: *mut HsvaePowerSpherical = std::ptr::null_mut();
        let st = unsafe { hsvae_power_spherical_new(mu.as_ptr(), mu.len(), kappa, &mut h) };
        assert_eq!(st, HsvaeStatus::Ok);
        assert!(!h.is_null());
        h
    }

    #[test]
    fn create_query_free_round_trip() {
        let mu = unit4();
        let h = new_handle(&mu, 10.0);
        let mut dim = 0usize;
        assert_eq!(unsafe { hsvae_dim(h, &mut dim) }, HsvaeStatus::Ok);
        assert_eq!(dim, 4);

        let mut ent = 0.0;
        let mut kl = 0.0;
        let mut mr = 0.0;
        unsafe {
            assert_eq!(hsvae_entropy(h, &mut ent), HsvaeStatus::Ok);
            assert_eq!(hsvae_kl_to_uniform(h, &mut kl), HsvaeStatus::Ok);
            assert_eq!(hsvae_mean_resultant(h, &mut mr), HsvaeStatus::Ok);
        }
        let p = PowerSphericalParams::new(SpherePoint::new(mu).unwrap(), 10.0).unwrap();
        assert!((ent - entropy(&p).unwrap()).abs() < 1e-12);
        assert!((kl - kl_to_uniform(&p).unwrap()).abs() < 1e-12);
        assert!((mr - 10.0 / 13.0).abs() < 1e-12);
        unsafe { hsvae_power_spherical_free(h) };
        unsafe { hsvae_power_spherical_free(std::ptr::null_mut()) };
    }

    #[test]
    fn log_prob_matches_core() {
        let mu = unit4();
        let h = new_handle(&mu, 7.5);
        let z = [1.0f64, 0.0, 0.0, 0.0];
        let mut got = 0.0;
        assert_eq!(
            unsafe { hsvae_log_prob(h, z.as_ptr(), 4, &mut got) },
            HsvaeStatus::Ok
        );
        let p = PowerSphericalParams::new(SpherePoint::new(mu).unwrap(), 7.5).unwrap();
        let want = log_prob(&p, &SpherePoint::new(z.to_vec()).unwrap()).unwrap();
        assert_eq!(got, want);
        unsafe { hsvae_power_spherical_free(h) };
    }

    #[test]
    fn log_normalizer_matches_core() {
        let mut v = 0.0;
        assert_eq!(
            unsafe { hsvae_log_normalizer(8, 30.0, &mut v) },
            HsvaeStatus::Ok
        );
        assert_eq!(v, log_normalizer(8, 30.0).unwrap());
        assert_eq!(
            unsafe { hsvae_log_normalizer(1, 30.0, &mut v) },
            HsvaeStatus::InvalidArgument
        );
    }

    #[test]
    fn sampling_is_seeded_and_on_sphere() {
        let mu = unit4();
        let h = new_handle(&mu, 25.0);
        let n = 256;
        let mut a = vec![0.0f64; n * 4];
        let mut b = vec![0.0f64; n * 4];
        unsafe {
            assert_eq!(hsvae_sample(h, 9, n, a.as_mut_ptr(), a.len()), HsvaeStatus::Ok);
            assert_eq!(hsvae_sample(h, 9, n, b.as_mut_ptr(), b.len()), HsvaeStatus::Ok);
        }
        assert_eq!(a, b);
        let mut mean_dot = 0.0;
        for row in a.chunks(4) {
            let norm: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-12);
            mean_dot += row.iter().zip(&mu).map(|(s, m)| s * m).sum::<f64>() / n as f64;
        }
        // E[mu . z] = kappa/(kappa+d-1) = 25/28 with a loose MC margin
        assert!((mean_dot - 25.0 / 28.0).abs() < 0.05, "mean dot {mean_dot}");
        unsafe { hsvae_power_spherical_free(h) };
    }

    #[test]
    fn buffer_and_argument_errors() {
        let mu = unit4();
        let h = new_handle(&mu, 1.0);
        let mut buf = vec![0.0f64; 7];
        unsafe {
            assert_eq!(
                hsvae_sample(h, 1, 2, buf.as_mut_ptr(), buf.len()),
                HsvaeStatus::BufferTooSmall
            );
            assert_eq!(
                hsvae_sample(h, 1, 0, buf.as_mut_ptr(), buf.len()),
                HsvaeStatus::InvalidArgument
            );
            assert_eq!(
                hsvae_sample(std::ptr::null(), 1, 1, buf.as_mut_ptr(), buf.len()),
                HsvaeStatus::NullPointer
            );
        }
        unsafe { hsvae_power_spherical_free(h) };

        let bad = [0.0f64; 4];
        let mut h2: *mut HsvaePowerSpherical = std::ptr::null_mut();
        assert_eq!(
            unsafe { hsvae_power_spherical_new(bad.as_ptr(), 4, 1.0, &mut h2) },
            HsvaeStatus::DomainError
        );
        let mu = unit4();
        assert_eq!(
            unsafe { hsvae_power_spherical_new(mu.as_ptr(), 4, -1.0, &mut h2) },
            HsvaeStatus::DomainError
        );
    }

    #[test]
    fn slerp_endpoints_and_antipodal_error() {
        let x = [1.0f64, 0.0, 0.0];
        let y = [0.0f64, 1.0, 0.0];
        let mut out = [0.0f64; 3];
        unsafe {
            assert_eq!(
                hsvae_slerp(x.as_ptr(), y.as_ptr(), 3, 0.0, out.as_mut_ptr(), 3),
                HsvaeStatus::Ok
            );
            assert_eq!(out, x);
            assert_eq!(
                hsvae_slerp(x.as_ptr(), y.as_ptr(), 3, 1.0, out.as_mut_ptr(), 3),
                HsvaeStatus::Ok
            );
            assert_eq!(out, y);
            assert_eq!(
                hsvae_slerp(x.as_ptr(), y.as_ptr(), 3, 0.5, out.as_mut_ptr(), 3),
                HsvaeStatus::Ok
            );
        }
        let norm: f64 = out.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);

        let neg = [-1.0f64, 0.0, 0.0];
        unsafe {
            assert_eq!(
                hsvae_slerp(x.as_ptr(), neg.as_ptr(), 3, 0.5, out.as_mut_ptr(), 3),
                HsvaeStatus::DomainError
            );
            assert_eq!(
                hsvae_slerp(x.as_ptr(), y.as_ptr(), 3, 1.5, out.as_mut_ptr(), 3),
                HsvaeStatus::InvalidArgument
            );
            assert_eq!(
                hsvae_slerp(x.as_ptr(), y.as_ptr(), 3, 0.5, out.as_mut_ptr(), 2),
                HsvaeStatus::BufferTooSmall
            );
        }
    }

    #[test]
    fn status_messages_are_null_terminated_statics() {
        for s in [
            HsvaeStatus::Ok,
            HsvaeStatus::NullPointer,
            HsvaeStatus::InvalidArgument,
            HsvaeStatus::DomainError,
            HsvaeStatus::BufferTooSmall,
            HsvaeStatus::InternalError,
        ] {
            let ptr = hsvae_status_message(s);
            assert!(!ptr.is_null());
            let text = unsafe { std::ffi::CStr::from_ptr(ptr) }.to_str().unwrap();
            assert!(!text.is_empty());
        }
    }

    #[test]
    fn generated_header_exists_with_expected_symbols() {
        let header = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("include/hsvae.h");
        let text = std::fs::read_to_string(&header).expect("header generated at build time");
        for sym in [
            "hsvae_power_spherical_new",
            "hsvae_power_spherical_free",
            "hsvae_log_prob",
            "hsvae_entropy",
            "hsvae_kl_to_uniform",
            "hsvae_log_normalizer",
            "hsvae_sample",
            "hsvae_slerp",
            "hsvae_status_message",
            "HsvaeStatus",
        ] {
            assert!(text.contains(sym), "missing {sym} in header");
        }
    }
}
