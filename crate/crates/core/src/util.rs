//! Small shared utilities: deterministic parallel map, thread-count
//! configuration, and slice statistics.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Env var that overrides the worker thread count for parallel sections.
pub const THREADS_ENV: &str = "HSVAE_THREADS";

/// Number of worker threads to use: `HSVAE_THREADS` if set, otherwise the
/// available parallelism, capped at 8.
pub fn thread_count() -> usize {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        if let Ok(n) = v.parse::<usize>() {
            return n.max(1);
        }
    }
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(8)
}

/// Apply `f` to every index in `0..n` and collect results in index order.
///
/// `f` must be a pure function of its index (seed anything random from the
/// index), so the output is identical for any thread count.
pub fn parallel_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let workers = thread_count().min(n.max(1));
    if workers <= 1 || n <= 1 {
        return (0..n).map(f).collect();
    }
    let mut out: Vec<Option<T>> = Vec::with_capacity(n);
    out.resize_with(n, || None);
    let chunk = n.div_ceil(workers);
    std::thread::scope(|scope| {
        for (w, slot) in out.chunks_mut(chunk).enumerate() {
            let f = &f;
            scope.spawn(move || {
                for (j, s) in slot.iter_mut().enumerate() {
                    *s = Some(f(w * chunk + j));
                }
            });
        }
    });
    out.into_iter().map(|x| x.expect("worker filled slot")).collect()
}

/// Mean of a slice.
pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population variance of a slice.
pub fn variance_population(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance (n-1 denominator).
pub fn variance_sample(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Euclidean norm.
pub fn norm2(xs: &[f64]) -> f64 {
    xs.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Dot product; panics on length mismatch (internal use).
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Ridge weights solving (X^T X + lambda I) w = X^T y, `x` being n x d.
/// Include a constant column in `x` if an intercept is wanted.
pub fn ridge_regression(x: &Tensor, y: &[f64], lambda: f64) -> Result<Vec<f64>> {
    let w = ridge_regression_multi(x, &Tensor::from_vec(y.len(), 1, y.to_vec())?, lambda)?;
    Ok(w.data().to_vec())
}

/// Multi-target ridge: solves (X^T X + lambda I) W = X^T Y for Y with k
/// columns, factoring the Gram matrix once. Returns W as d x k.
pub fn ridge_regression_multi(x: &Tensor, y: &Tensor, lambda: f64) -> Result<Tensor> {
    let (n, d) = (x.rows(), x.cols());
    let k = y.cols();
    if y.rows() != n {
        return Err(Error::DimensionMismatch { expected: n, got: y.rows() });
    }
    if !(lambda > 0.0) {
        return Err(Error::Domain {
            what: "ridge lambda",
            value: lambda,
            constraint: "> 0",
        });
    }
    let mut gram = vec![0.0; d * d];
    let mut rhs = x.transposed_matmul(y)?;
    for i in 0..n {
        let row = x.row(i);
        for a in 0..d {
            for b in a..d {
                gram[a * d + b] += row[a] * row[b];
            }
        }
    }
    for a in 0..d {
        gram[a * d + a] += lambda;
        for b in 0..a {
            gram[a * d + b] = gram[b * d + a];
        }
    }
    cholesky_factor(&mut gram, d)?;
    let mut col = vec![0.0; d];
    for j in 0..k {
        for (i, c) in col.iter_mut().enumerate() {
            *c = rhs.get(i, j);
        }
        cholesky_solve_factored(&gram, &mut col, d);
        for (i, &c) in col.iter().enumerate() {
            rhs.set(i, j, c);
        }
    }
    Ok(rhs)
}

/// In-place LL^T factorization of the lower triangle of `a` (d x d,
/// row-major). Requires positive definiteness.
fn cholesky_factor(a: &mut [f64], d: usize) -> Result<()> {
    for j in 0..d {
        let mut s = a[j * d + j];
        for k in 0..j {
            s -= a[j * d + k] * a[j * d + k];
        }
        if !(s > 0.0) {
            return Err(Error::Domain {
                what: "cholesky pivot",
                value: s,
                constraint: "> 0",
            });
        }
        let l = s.sqrt();
        a[j * d + j] = l;
        for i in (j + 1)..d {
            let mut s = a[i * d + j];
            for k in 0..j {
                s -= a[i * d + k] * a[j * d + k];
            }
            a[i * d + j] = s / l;
        }
    }
    Ok(())
}

/// Forward and back substitution against a factored lower triangle.
fn cholesky_solve_factored(a: &[f64], b: &mut [f64], d: usize) {
    for i in 0..d {
        let mut s = b[i];
        for k in 0..i {
            s -= a[i * d + k] * b[k];
        }
        b[i] = s / a[i * d + i];
    }
    for i in (0..d).rev() {
        let mut s = b[i];
        for k in (i + 1)..d {
            s -= a[k * d + i] * b[k];
        }
        b[i] = s / a[i * d + i];
    }
}
