//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Graph`] owns a flat arena of nodes; [`Var`] is an index into it.
//! Graphs are rebuilt per evaluation (define-by-run) and backward walks the
//! arena in reverse topological order, which is creation order. Node count is
//! small (hundreds per scene), tensors carry the bulk.

use crate::error::{Error, Result};
use crate::power_spherical::{rsample_from_draws, PowerSphericalParams, SampleTrace};
use crate::special::{sample_beta_from_uniform, BetaParams};
use crate::sphere::{sample_uniform_coords, SpherePoint};
use crate::tensor::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Parent values, own value, and upstream gradient for a backward step.
pub struct BackwardArgs<'a> {
    pub parents: Vec<&'a Tensor>,
    pub value: &'a Tensor,
    pub grad: &'a Tensor,
}

type BackwardFn = Box<dyn Fn(&BackwardArgs) -> Result<Vec<Tensor>>>;

struct Node {
    value: Tensor,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
}

/// Accumulated gradients keyed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, parents: Vec<usize>, backward: Option<BackwardFn>) -> Var {
        self.nodes.push(Node {
            value,
            parents,
            backward,
        });
        Var(self.nodes.len() - 1)
    }

    /// Inserts a tensor with no history. Gradients accumulate here and stop.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, vec![], None)
    }

    /// Copies a value out of the graph flow: forward identity, no gradient
    /// to the source.
    pub fn detach(&mut self, x: Var) -> Var {
        let t = self.value(x).clone();
        self.push(t, vec![], None)
    }

    /// Elementwise op from a value map `f` and a local derivative `df`
    /// evaluated at (input, output). Building block for the named ops below
    /// and for domain-specific scalar functions elsewhere in the crate.
    pub fn unary(
        &mut self,
        x: Var,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Var {
        let value = self.value(x).map(f);
        self.push(
            value,
            vec![x.0],
            Some(Box::new(move |args| {
                let x = args.parents[0];
                let mut g = args.grad.clone();
                for ((g, &xv), &yv) in g.data_mut().iter_mut().zip(x.data()).zip(args.value.data())
                {
                    *g *= df(xv, yv);
                }
                Ok(vec![g])
            })),
        )
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.unary(x, |v| -v, |_, _| -1.0)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, move |v| c * v, move |_, _| c)
    }

    pub fn add_const(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, move |v| v + c, |_, _| 1.0)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, |_, y| y)
    }

    /// Natural log; caller guarantees positivity (checked, returns error on
    /// non-positive entries).
    pub fn ln(&mut self, x: Var) -> Result<Var> {
        if self.value(x).data().iter().any(|&v| v <= 0.0) {
            return Err(Error::Domain {
                what: "graph ln",
                value: self
                    .value(x)
                    .data()
                    .iter()
                    .copied()
                    .fold(f64::INFINITY, f64::min),
                constraint: "all entries > 0",
            });
        }
        Ok(self.unary(x, f64::ln, |x, _| 1.0 / x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, |x, _| 2.0 * x)
    }

    /// Square root; entries must be strictly positive so the derivative
    /// stays finite.
    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        if self.value(x).data().iter().any(|&v| v <= 0.0) {
            return Err(Error::Domain {
                what: "graph sqrt",
                value: self
                    .value(x)
                    .data()
                    .iter()
                    .copied()
                    .fold(f64::INFINITY, f64::min),
                constraint: "all entries > 0",
            });
        }
        Ok(self.unary(x, f64::sqrt, |_, y| 0.5 / y))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(
            x,
            f64::abs,
            |x, _| {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            },
        )
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, softplus, |x, _| sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, |_, y| 1.0 - y * y)
    }

    /// Gaussian error linear unit, tanh form.
    pub fn gelu(&mut self, x: Var) -> Var {
        self.unary(x, gelu, |x, _| gelu_derivative(x))
    }

    /// Identity inside [lo, hi], clamped outside; gradient passes only
    /// through the strict interior.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(
            x,
            move |v| v.clamp(lo, hi),
            move |x, _| if x > lo && x < hi { 1.0 } else { 0.0 },
        )
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
        backward: BackwardFn,
    ) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), f).map_err(|_| {
            Error::ShapeMismatch {
                op,
                detail: format!(
                    "{}x{} vs {}x{}",
                    self.value(a).rows(),
                    self.value(a).cols(),
                    self.value(b).rows(),
                    self.value(b).cols()
                ),
            }
        })?;
        Ok(self.push(value, vec![a.0, b.0], Some(backward)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(
            a,
            b,
            "add",
            |x, y| x + y,
            Box::new(|args| Ok(vec![args.grad.clone(), args.grad.clone()])),
        )
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(
            a,
            b,
            "sub",
            |x, y| x - y,
            Box::new(|args| Ok(vec![args.grad.clone(), args.grad.map(|g| -g)])),
        )
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(
            a,
            b,
            "mul",
            |x, y| x * y,
            Box::new(|args| {
                Ok(vec![
                    args.grad.zip_map(args.parents[1], |g, b| g * b)?,
                    args.grad.zip_map(args.parents[0], |g, a| g * a)?,
                ])
            }),
        )
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(
            a,
            b,
            "div",
            |x, y| x / y,
            Box::new(|args| {
                let ga = args.grad.zip_map(args.parents[1], |g, b| g / b)?;
                let mut gb = args.grad.zip_map(args.parents[0], |g, a| g * a)?;
                for (g, &b) in gb.data_mut().iter_mut().zip(args.parents[1].data()) {
                    *g /= -b * b;
                }
                Ok(vec![ga, gb])
            }),
        )
    }

    /// Matrix (rows x cols) plus a 1 x cols bias row broadcast over rows.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let xv = self.value(x);
        let bv = self.value(bias);
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(Error::ShapeMismatch {
                op: "add_bias",
                detail: format!(
                    "{}x{} + {}x{}",
                    xv.rows(),
                    xv.cols(),
                    bv.rows(),
                    bv.cols()
                ),
            });
        }
        let mut out = xv.clone();
        for r in 0..out.rows() {
            for (o, &b) in out.row_mut(r).iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        Ok(self.push(
            out,
            vec![x.0, bias.0],
            Some(Box::new(|args| {
                let g = args.grad;
                let mut gb = Tensor::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (s, &v) in gb.data_mut().iter_mut().zip(g.row(r)) {
                        *s += v;
                    }
                }
                Ok(vec![g.clone(), gb])
            })),
        ))
    }

    /// Matrix (rows x cols) times a 1 x cols gain row broadcast over rows.
    pub fn mul_row(&mut self, x: Var, gain: Var) -> Result<Var> {
        let xv = self.value(x);
        let gv = self.value(gain);
        if gv.rows() != 1 || gv.cols() != xv.cols() {
            return Err(Error::ShapeMismatch {
                op: "mul_row",
                detail: format!(
                    "{}x{} * {}x{}",
                    xv.rows(),
                    xv.cols(),
                    gv.rows(),
                    gv.cols()
                ),
            });
        }
        let mut out = xv.clone();
        for r in 0..out.rows() {
            for (o, &g) in out.row_mut(r).iter_mut().zip(gv.data()) {
                *o *= g;
            }
        }
        Ok(self.push(
            out,
            vec![x.0, gain.0],
            Some(Box::new(|args| {
                let x = args.parents[0];
                let gain = args.parents[1];
                let mut gx = args.grad.clone();
                let mut gg = Tensor::zeros(1, gain.cols());
                for r in 0..gx.rows() {
                    for ((v, &g), (&xv, slot)) in gx
                        .row_mut(r)
                        .iter_mut()
                        .zip(gain.data())
                        .zip(x.row(r).iter().zip(gg.data_mut().iter_mut()))
                    {
                        *slot += *v * xv;
                        *v *= g;
                    }
                }
                Ok(vec![gx, gg])
            })),
        ))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(
            value,
            vec![a.0, b.0],
            Some(Box::new(|args| {
                let ga = args.grad.matmul_transposed(args.parents[1])?;
                let gb = args.parents[0].transposed_matmul(args.grad)?;
                Ok(vec![ga, gb])
            })),
        ))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let value = self.value(x).transpose();
        self.push(
            value,
            vec![x.0],
            Some(Box::new(|args| Ok(vec![args.grad.transpose()]))),
        )
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        self.push(
            value,
            vec![x.0],
            Some(Box::new(|args| {
                let g = args.grad.item()?;
                let p = args.parents[0];
                Ok(vec![Tensor::filled(p.rows(), p.cols(), g)])
            })),
        )
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s = self.sum_all(x);
        self.scale(s, 1.0 / n)
    }

    /// Column sums: rows x cols -> 1 x cols.
    pub fn sum_axis0(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let mut out = Tensor::zeros(1, xv.cols());
        for r in 0..xv.rows() {
            for (o, &v) in out.data_mut().iter_mut().zip(xv.row(r)) {
                *o += v;
            }
        }
        self.push(
            out,
            vec![x.0],
            Some(Box::new(|args| {
                let p = args.parents[0];
                let mut g = Tensor::zeros(p.rows(), p.cols());
                for r in 0..p.rows() {
                    g.row_mut(r).copy_from_slice(args.grad.data());
                }
                Ok(vec![g])
            })),
        )
    }

    pub fn mean_axis0(&mut self, x: Var) -> Var {
        let rows = self.value(x).rows() as f64;
        let s = self.sum_axis0(x);
        self.scale(s, 1.0 / rows)
    }

    /// Row sums: rows x cols -> rows x 1.
    pub fn sum_axis1(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data: Vec<f64> = (0..xv.rows()).map(|r| xv.row(r).iter().sum()).collect();
        let out = Tensor::from_vec(xv.rows(), 1, data).expect("shape by construction");
        self.push(
            out,
            vec![x.0],
            Some(Box::new(|args| {
                let p = args.parents[0];
                let mut g = Tensor::zeros(p.rows(), p.cols());
                for r in 0..p.rows() {
                    let gr = args.grad.get(r, 0);
                    for slot in g.row_mut(r) {
                        *slot = gr;
                    }
                }
                Ok(vec![g])
            })),
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::ShapeMismatch {
                op: "concat_cols",
                detail: "empty part list".into(),
            });
        }
        let rows = self.value(parts[0]).rows();
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
        let total: usize = widths.iter().sum();
        let mut out = Tensor::zeros(rows, total);
        let mut offset = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let pv = self.value(p);
            if pv.rows() != rows {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    detail: format!("row mismatch {} vs {}", pv.rows(), rows),
                });
            }
            for r in 0..rows {
                out.row_mut(r)[offset..offset + w].copy_from_slice(pv.row(r));
            }
            offset += w;
        }
        Ok(self.push(
            out,
            parts.iter().map(|v| v.0).collect(),
            Some(Box::new(move |args| {
                let mut grads = Vec::with_capacity(widths.len());
                let mut offset = 0;
                for &w in &widths {
                    let mut g = Tensor::zeros(args.grad.rows(), w);
                    for r in 0..args.grad.rows() {
                        g.row_mut(r).copy_from_slice(&args.grad.row(r)[offset..offset + w]);
                    }
                    grads.push(g);
                    offset += w;
                }
                Ok(grads)
            })),
        ))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if start + len > xv.cols() {
            return Err(Error::ShapeMismatch {
                op: "slice_cols",
                detail: format!("[{start}, {}) of {} cols", start + len, xv.cols()),
            });
        }
        let mut out = Tensor::zeros(xv.rows(), len);
        for r in 0..xv.rows() {
            out.row_mut(r).copy_from_slice(&xv.row(r)[start..start + len]);
        }
        Ok(self.push(
            out,
            vec![x.0],
            Some(Box::new(move |args| {
                let p = args.parents[0];
                let mut g = Tensor::zeros(p.rows(), p.cols());
                for r in 0..p.rows() {
                    g.row_mut(r)[start..start + len].copy_from_slice(args.grad.row(r));
                }
                Ok(vec![g])
            })),
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::ShapeMismatch {
                op: "concat_rows",
                detail: "empty part list".into(),
            });
        }
        let cols = self.value(parts[0]).cols();
        let heights: Vec<usize> = parts.iter().map(|&p| self.value(p).rows()).collect();
        let mut data = Vec::new();
        for &p in parts {
            let pv = self.value(p);
            if pv.cols() != cols {
                return Err(Error::ShapeMismatch {
                    op: "concat_rows",
                    detail: format!("col mismatch {} vs {}", pv.cols(), cols),
                });
            }
            data.extend_from_slice(pv.data());
        }
        let total: usize = heights.iter().sum();
        let out = Tensor::from_vec(total, cols, data)?;
        Ok(self.push(
            out,
            parts.iter().map(|v| v.0).collect(),
            Some(Box::new(move |args| {
                let mut grads = Vec::with_capacity(heights.len());
                let mut row = 0;
                for &h in &heights {
                    let mut g = Tensor::zeros(h, args.grad.cols());
                    for r in 0..h {
                        g.row_mut(r).copy_from_slice(args.grad.row(row + r));
                    }
                    grads.push(g);
                    row += h;
                }
                Ok(grads)
            })),
        ))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if start + len > xv.rows() {
            return Err(Error::ShapeMismatch {
                op: "slice_rows",
                detail: format!("[{start}, {}) of {} rows", start + len, xv.rows()),
            });
        }
        let mut out = Tensor::zeros(len, xv.cols());
        for r in 0..len {
            out.row_mut(r).copy_from_slice(xv.row(start + r));
        }
        Ok(self.push(
            out,
            vec![x.0],
            Some(Box::new(move |args| {
                let p = args.parents[0];
                let mut g = Tensor::zeros(p.rows(), p.cols());
                for r in 0..len {
                    g.row_mut(start + r).copy_from_slice(args.grad.row(r));
                }
                Ok(vec![g])
            })),
        ))
    }

    /// Row-wise softmax with the max subtracted before exponentiation.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let mut out = xv.clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        self.push(
            out,
            vec![x.0],
            Some(Box::new(|args| {
                let y = args.value;
                let mut g = args.grad.clone();
                for r in 0..y.rows() {
                    let dot: f64 = args.grad.row(r).iter().zip(y.row(r)).map(|(a, b)| a * b).sum();
                    for (gv, &yv) in g.row_mut(r).iter_mut().zip(y.row(r)) {
                        *gv = yv * (*gv - dot);
                    }
                }
                Ok(vec![g])
            })),
        )
    }

    /// Per-row standardization (mean 0, variance 1 up to eps), no affine.
    pub fn layer_norm_rows(&mut self, x: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let n = xv.cols() as f64;
        let mut out = xv.clone();
        let mut inv_stds = Vec::with_capacity(xv.rows());
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let inv = 1.0 / (var + eps).sqrt();
            inv_stds.push(inv);
            for v in row.iter_mut() {
                *v = (*v - mean) * inv;
            }
        }
        self.push(
            out,
            vec![x.0],
            Some(Box::new(move |args| {
                let y = args.value;
                let n = y.cols() as f64;
                let mut g = args.grad.clone();
                for (r, &inv) in inv_stds.iter().enumerate().take(y.rows()) {
                    let gr_mean: f64 = args.grad.row(r).iter().sum::<f64>() / n;
                    let gy_mean: f64 = args
                        .grad
                        .row(r)
                        .iter()
                        .zip(y.row(r))
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
                        / n;
                    for ((gv, &g0), &yv) in
                        g.row_mut(r).iter_mut().zip(args.grad.row(r)).zip(y.row(r))
                    {
                        *gv = inv * (g0 - gr_mean - yv * gy_mean);
                    }
                }
                Ok(vec![g])
            })),
        )
    }

    /// L2 row normalization; errors on rows with norm <= 1e-12.
    pub fn normalize_rows(&mut self, x: Var) -> Result<Var> {
        let cols = self.value(x).cols();
        self.normalize_row_chunks(x, cols)
    }

    /// Independently L2-normalizes each contiguous `chunk` of every row
    /// (the per-sphere mean-direction head).
    pub fn normalize_row_chunks(&mut self, x: Var, chunk: usize) -> Result<Var> {
        let xv = self.value(x);
        if chunk == 0 || !xv.cols().is_multiple_of(chunk) {
            return Err(Error::ShapeMismatch {
                op: "normalize_row_chunks",
                detail: format!("{} cols not divisible by chunk {}", xv.cols(), chunk),
            });
        }
        let mut out = xv.clone();
        let mut inv_norms = Vec::with_capacity(xv.rows() * (xv.cols() / chunk));
        for r in 0..out.rows() {
            for piece in out.row_mut(r).chunks_exact_mut(chunk) {
                let norm = piece.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm <= 1e-12 {
                    return Err(Error::ZeroChunk { index: r });
                }
                let inv = 1.0 / norm;
                inv_norms.push(inv);
                for v in piece.iter_mut() {
                    *v *= inv;
                }
            }
        }
        Ok(self.push(
            out,
            vec![x.0],
            Some(Box::new(move |args| {
                let y = args.value;
                let mut g = args.grad.clone();
                let per_row = y.cols() / chunk;
                for r in 0..y.rows() {
                    for ci in 0..per_row {
                        let s = ci * chunk;
                        let inv = inv_norms[r * per_row + ci];
                        let yr = &y.row(r)[s..s + chunk];
                        let gr = &args.grad.row(r)[s..s + chunk];
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for ((gv, &g0), &yv) in
                            g.row_mut(r)[s..s + chunk].iter_mut().zip(gr).zip(yr)
                        {
                            *gv = inv * (g0 - dot * yv);
                        }
                    }
                }
                Ok(vec![g])
            })),
        ))
    }

    /// Euclidean norm of each row: rows x cols -> rows x 1. A tiny epsilon
    /// inside the square root keeps the all-zero row differentiable.
    pub fn row_norms(&mut self, x: Var) -> Var {
        const EPS: f64 = 1e-24;
        let xv = self.value(x);
        let data: Vec<f64> = (0..xv.rows())
            .map(|r| (xv.row(r).iter().map(|v| v * v).sum::<f64>() + EPS).sqrt())
            .collect();
        let out = Tensor::from_vec(xv.rows(), 1, data).expect("shape by construction");
        self.push(
            out,
            vec![x.0],
            Some(Box::new(|args| {
                let p = args.parents[0];
                let mut g = Tensor::zeros(p.rows(), p.cols());
                for r in 0..p.rows() {
                    let scale = args.grad.get(r, 0) / args.value.get(r, 0);
                    for (gv, &xv) in g.row_mut(r).iter_mut().zip(p.row(r)) {
                        *gv = scale * xv;
                    }
                }
                Ok(vec![g])
            })),
        )
    }

    /// Sum of elementwise Huber penalties: quadratic r^2/2 within
    /// |r| <= delta, linear delta(|r| - delta/2) beyond.
    pub fn huber_sum(&mut self, x: Var, delta: f64) -> Result<Var> {
        if delta <= 0.0 {
            return Err(Error::Domain {
                what: "huber delta",
                value: delta,
                constraint: "> 0",
            });
        }
        let total: f64 = self
            .value(x)
            .data()
            .iter()
            .map(|&r| {
                if r.abs() <= delta {
                    0.5 * r * r
                } else {
                    delta * (r.abs() - 0.5 * delta)
                }
            })
            .sum();
        Ok(self.push(
            Tensor::scalar(total),
            vec![x.0],
            Some(Box::new(move |args| {
                let g = args.grad.item()?;
                Ok(vec![args.parents[0].map(|r| g * r.clamp(-delta, delta))])
            })),
        ))
    }

    /// Reparameterized draw from a per-row product of Power Spherical
    /// distributions. `mu` is rows x (N*d') with unit chunks of size
    /// `sphere_dim`; `kappa` is rows x N, strictly positive. Gradients flow
    /// to both through the sampling path.
    pub fn product_rsample<R: rand::Rng + ?Sized>(
        &mut self,
        mu: Var,
        kappa: Var,
        sphere_dim: usize,
        rng: &mut R,
    ) -> Result<Var> {
        let muv = self.value(mu);
        let kv = self.value(kappa);
        if sphere_dim < 2 || !muv.cols().is_multiple_of(sphere_dim) {
            return Err(Error::ShapeMismatch {
                op: "product_rsample",
                detail: format!("mu cols {} vs sphere dim {}", muv.cols(), sphere_dim),
            });
        }
        let n_spheres = muv.cols() / sphere_dim;
        if kv.rows() != muv.rows() || kv.cols() != n_spheres {
            return Err(Error::ShapeMismatch {
                op: "product_rsample",
                detail: format!(
                    "kappa {}x{} vs expected {}x{}",
                    kv.rows(),
                    kv.cols(),
                    muv.rows(),
                    n_spheres
                ),
            });
        }
        let mut out = Tensor::zeros(muv.rows(), muv.cols());
        let mut traces: Vec<SampleTrace> = Vec::with_capacity(muv.rows() * n_spheres);
        for r in 0..muv.rows() {
            for s in 0..n_spheres {
                let chunk = &muv.row(r)[s * sphere_dim..(s + 1) * sphere_dim];
                let mu_pt = SpherePoint::new(chunk.to_vec())?;
                let params = PowerSphericalParams::new(mu_pt, kv.get(r, s))?;
                let bp = BetaParams::new(params.alpha(), params.beta())?;
                let u = loop {
                    let u: f64 = rng.gen();
                    if u > 0.0 && u < 1.0 {
                        break u;
                    }
                };
                let bs = sample_beta_from_uniform(bp, u)?;
                let v = sample_uniform_coords(sphere_dim - 1, rng)?;
                let tr = rsample_from_draws(&params, bs.y, bs.dy_dalpha, v)?;
                out.row_mut(r)[s * sphere_dim..(s + 1) * sphere_dim]
                    .copy_from_slice(tr.z.coords());
                traces.push(tr);
            }
        }
        Ok(self.push(
            out,
            vec![mu.0, kappa.0],
            Some(Box::new(move |args| {
                let rows = args.value.rows();
                let mut gmu = Tensor::zeros(rows, n_spheres * sphere_dim);
                let mut gk = Tensor::zeros(rows, n_spheres);
                for r in 0..rows {
                    for s in 0..n_spheres {
                        let tr = &traces[r * n_spheres + s];
                        let gz = &args.grad.row(r)[s * sphere_dim..(s + 1) * sphere_dim];
                        gk.set(r, s, tr.backprop_kappa(gz)?);
                        let gm = tr.backprop_mu(gz)?;
                        gmu.row_mut(r)[s * sphere_dim..(s + 1) * sphere_dim]
                            .copy_from_slice(&gm);
                    }
                }
                Ok(vec![gmu, gk])
            })),
        ))
    }

    /// Reparameterized Gaussian draw z = mu + exp(log_var/2) * eps with
    /// log_var clamped to [-12, 12]; `noise` supplies the standard normal
    /// draws as a constant.
    pub fn gaussian_rsample(&mut self, mu: Var, log_var: Var, noise: Tensor) -> Result<Var> {
        let lv = self.clamp(log_var, -12.0, 12.0);
        let half = self.scale(lv, 0.5);
        let std = self.exp(half);
        let eps = self.leaf(noise);
        let scaled = self.mul(std, eps)?;
        self.add(mu, scaled)
    }

    /// Reverse accumulation from a scalar root. Returns gradients for every
    /// node reached by the sweep.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let rv = &self.nodes[root.0].value;
        if rv.rows() != 1 || rv.cols() != 1 {
            return Err(Error::ShapeMismatch {
                op: "backward",
                detail: format!("root must be scalar, got {}x{}", rv.rows(), rv.cols()),
            });
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::scalar(1.0));
        for id in (0..=root.0).rev() {
            let Some(grad) = grads[id].take() else {
                continue;
            };
            let node = &self.nodes[id];
            if let Some(backward) = &node.backward {
                let args = BackwardArgs {
                    parents: node.parents.iter().map(|&p| &self.nodes[p].value).collect(),
                    value: &node.value,
                    grad: &grad,
                };
                let parent_grads = backward(&args)?;
                debug_assert_eq!(parent_grads.len(), node.parents.len());
                for (&pid, pg) in node.parents.iter().zip(parent_grads) {
                    match &mut grads[pid] {
                        Some(acc) => acc.add_scaled(&pg, 1.0)?,
                        slot => *slot = Some(pg),
                    }
                }
            }
            grads[id] = Some(grad);
        }
        Ok(Gradients { grads })
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of softplus on (0, inf).
pub fn softplus_inverse(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

const GELU_C: f64 = 0.7978845608028654; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

#[inline]
fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

#[inline]
fn gelu_derivative(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Result of a finite-difference audit: per-leaf relative errors between
/// analytic and central-difference gradients.
#[derive(Debug, Clone)]
pub struct GradAudit {
    pub per_leaf: Vec<f64>,
    pub max_rel_err: f64,
}

/// Rebuilds the graph through `build` and compares analytic gradients of its
/// scalar output against central finite differences for every leaf entry.
/// Relative error per leaf is measured in the L2 norm.
pub fn finite_difference_check<F>(build: F, leaves: &[Tensor], h: f64) -> Result<GradAudit>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |tensors: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = tensors.iter().map(|t| g.leaf(t.clone())).collect();
        let root = build(&mut g, &vars)?;
        g.value(root).item()
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = leaves.iter().map(|t| g.leaf(t.clone())).collect();
    let root = build(&mut g, &vars)?;
    let grads = g.backward(root)?;

    let mut per_leaf = Vec::with_capacity(leaves.len());
    let mut max_rel = 0.0f64;
    for (li, leaf) in leaves.iter().enumerate() {
        let analytic = grads
            .get(vars[li])
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(leaf.rows(), leaf.cols()));
        let mut fd = Tensor::zeros(leaf.rows(), leaf.cols());
        for idx in 0..leaf.len() {
            let mut plus = leaves.to_vec();
            plus[li].data_mut()[idx] += h;
            let mut minus = leaves.to_vec();
            minus[li].data_mut()[idx] -= h;
            fd.data_mut()[idx] = (eval(&plus)? - eval(&minus)?) / (2.0 * h);
        }
        let diff: f64 = analytic
            .data()
            .iter()
            .zip(fd.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let denom: f64 = fd
            .data()
            .iter()
            .map(|b| b * b)
            .sum::<f64>()
            .sqrt()
            .max(1e-10);
        let rel = diff / denom;
        per_leaf.push(rel);
        max_rel = max_rel.max(rel);
    }
    Ok(GradAudit {
        per_leaf,
        max_rel_err: max_rel,
    })
}
