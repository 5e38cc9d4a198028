//! Training losses over graph nodes.
//!
//! Feature arguments come as slices of per-layer token-matrix nodes so every
//! loss stays differentiable end to end. Scalar losses return 1x1 nodes;
//! [`total_loss`] combines them with their weights and snapshots a
//! [`LossReport`].

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::special::{digamma, log_gamma, trigamma};
use crate::sphere::log_surface_area;
use serde::{Deserialize, Serialize};

/// Loss term weights and the two loss-shape constants (Huber width, ln-sigma
/// regularizer strength). All weights are >= 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    #[serde(default = "default_w_mse")]
    pub w_mse: f64,
    #[serde(default = "default_w_sim")]
    pub w_sim: f64,
    #[serde(default = "default_w_gram")]
    pub w_gram: f64,
    #[serde(default = "default_w_var")]
    pub w_var: f64,
    #[serde(default = "default_w_norm")]
    pub w_norm: f64,
    #[serde(default = "default_w_kl")]
    pub w_kl: f64,
    #[serde(default)]
    pub w_camera: f64,
    #[serde(default)]
    pub w_depth: f64,
    #[serde(default = "default_huber_eps")]
    pub huber_eps: f64,
    #[serde(default = "default_alpha_reg")]
    pub alpha_reg: f64,
}

fn default_w_mse() -> f64 {
    1.0
}
fn default_w_sim() -> f64 {
    0.25
}
fn default_w_gram() -> f64 {
    0.5
}
fn default_w_var() -> f64 {
    0.1
}
fn default_w_norm() -> f64 {
    0.1
}
fn default_w_kl() -> f64 {
    1e-4
}
fn default_huber_eps() -> f64 {
    0.1
}
fn default_alpha_reg() -> f64 {
    0.1
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w_mse: default_w_mse(),
            w_sim: default_w_sim(),
            w_gram: default_w_gram(),
            w_var: default_w_var(),
            w_norm: default_w_norm(),
            w_kl: default_w_kl(),
            w_camera: 0.0,
            w_depth: 0.0,
            huber_eps: default_huber_eps(),
            alpha_reg: default_alpha_reg(),
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("w_mse", self.w_mse),
            ("w_sim", self.w_sim),
            ("w_gram", self.w_gram),
            ("w_var", self.w_var),
            ("w_norm", self.w_norm),
            ("w_kl", self.w_kl),
            ("w_camera", self.w_camera),
            ("w_depth", self.w_depth),
        ];
        for (name, v) in named {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::ConfigError(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if !(self.huber_eps > 0.0) {
            return Err(Error::ConfigError("huber_eps must be > 0".into()));
        }
        if !(self.alpha_reg >= 0.0) {
            return Err(Error::ConfigError("alpha_reg must be >= 0".into()));
        }
        Ok(())
    }
}

/// One weighted term inside a [`LossReport`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossTerm {
    pub name: String,
    pub value: f64,
    pub weight: f64,
}

/// Per-term values plus the weighted total for one step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossReport {
    pub terms: Vec<LossTerm>,
    pub total: f64,
}

impl LossReport {
    pub fn term(&self, name: &str) -> Option<&LossTerm> {
        self.terms.iter().find(|t| t.name == name)
    }

    /// Recomputed weighted sum, for the total-consistency invariant.
    pub fn weighted_sum(&self) -> f64 {
        self.terms.iter().map(|t| t.weight * t.value).sum()
    }
}

fn check_layer_lists(g: &Graph, x: &[Var], xhat: &[Var]) -> Result<()> {
    if x.is_empty() || x.len() != xhat.len() {
        return Err(Error::ShapeMismatch {
            op: "feature loss",
            detail: format!("{} vs {} layers", x.len(), xhat.len()),
        });
    }
    for (&a, &b) in x.iter().zip(xhat) {
        let (av, bv) = (g.value(a), g.value(b));
        if !av.same_shape(bv) {
            return Err(Error::ShapeMismatch {
                op: "feature loss",
                detail: format!(
                    "{}x{} vs {}x{}",
                    av.rows(),
                    av.cols(),
                    bv.rows(),
                    bv.cols()
                ),
            });
        }
    }
    Ok(())
}

fn mean_over_layers(g: &mut Graph, parts: Vec<Var>) -> Result<Var> {
    let n = parts.len() as f64;
    let mut acc = parts[0];
    for &p in &parts[1..] {
        acc = g.add(acc, p)?;
    }
    Ok(g.scale(acc, 1.0 / n))
}

/// Mean squared error and mean per-token cosine distance (1 - cos), both
/// averaged over every layer.
pub fn feature_recon_terms(g: &mut Graph, x: &[Var], xhat: &[Var]) -> Result<(Var, Var)> {
    check_layer_lists(g, x, xhat)?;
    let total_elems: usize = x.iter().map(|&v| g.value(v).len()).sum();
    let mut sq_sum = None;
    let mut sims = Vec::with_capacity(x.len());
    for (&a, &b) in x.iter().zip(xhat) {
        let diff = g.sub(b, a)?;
        let sq = g.square(diff);
        let s = g.sum_all(sq);
        sq_sum = Some(match sq_sum {
            None => s,
            Some(acc) => g.add(acc, s)?,
        });
        let prod = g.mul(a, b)?;
        let dots = g.sum_axis1(prod);
        let na = g.row_norms(a);
        let nb = g.row_norms(b);
        let denom = g.mul(na, nb)?;
        let cos = g.div(dots, denom)?;
        let neg = g.scale(cos, -1.0);
        let dist = g.add_const(neg, 1.0);
        sims.push(g.mean_all(dist));
    }
    let mse = g.scale(sq_sum.expect("nonempty layer list"), 1.0 / total_elems as f64);
    let sim = mean_over_layers(g, sims)?;
    Ok((mse, sim))
}

/// MSE + w_sim * cosine-distance term.
pub fn feature_recon_loss(g: &mut Graph, x: &[Var], xhat: &[Var], w: &LossWeights) -> Result<Var> {
    let (mse, sim) = feature_recon_terms(g, x, xhat)?;
    let sim_w = g.scale(sim, w.w_sim);
    g.add(mse, sim_w)
}

/// Cosine distance between row-normalized Gram matrices, averaged over
/// layers.
pub fn gram_loss(g: &mut Graph, x: &[Var], xhat: &[Var]) -> Result<Var> {
    check_layer_lists(g, x, xhat)?;
    let mut parts = Vec::with_capacity(x.len());
    for (&a, &b) in x.iter().zip(xhat) {
        let an = g.normalize_rows(a)?;
        let bn = g.normalize_rows(b)?;
        let at = g.transpose(an);
        let ga = g.matmul(an, at)?;
        let bt = g.transpose(bn);
        let gb = g.matmul(bn, bt)?;
        let prod = g.mul(ga, gb)?;
        let dot = g.sum_all(prod);
        let ga2 = g.square(ga);
        let na2 = g.sum_all(ga2);
        let na = g.sqrt(na2)?;
        let gb2 = g.square(gb);
        let nb2 = g.sum_all(gb2);
        let nb = g.sqrt(nb2)?;
        let denom = g.mul(na, nb)?;
        let cos = g.div(dot, denom)?;
        let neg = g.scale(cos, -1.0);
        parts.push(g.add_const(neg, 1.0));
    }
    mean_over_layers(g, parts)
}

/// L1 distance between per-dimension variances, averaged over dimensions and
/// layers. Variances are population variances over tokens.
pub fn variance_preservation_loss(g: &mut Graph, x: &[Var], xhat: &[Var]) -> Result<Var> {
    check_layer_lists(g, x, xhat)?;
    let var_of = |g: &mut Graph, v: Var| -> Result<Var> {
        let sq = g.square(v);
        let msq = g.mean_axis0(sq);
        let m = g.mean_axis0(v);
        let m2 = g.square(m);
        g.sub(msq, m2)
    };
    let mut parts = Vec::with_capacity(x.len());
    for (&a, &b) in x.iter().zip(xhat) {
        let va = var_of(g, a)?;
        let vb = var_of(g, b)?;
        let diff = g.sub(va, vb)?;
        let ab = g.abs(diff);
        parts.push(g.mean_all(ab));
    }
    mean_over_layers(g, parts)
}

/// L1 distance between per-token norms, averaged over tokens and layers.
pub fn norm_preservation_loss(g: &mut Graph, x: &[Var], xhat: &[Var]) -> Result<Var> {
    check_layer_lists(g, x, xhat)?;
    let mut parts = Vec::with_capacity(x.len());
    for (&a, &b) in x.iter().zip(xhat) {
        let na = g.row_norms(a);
        let nb = g.row_norms(b);
        let diff = g.sub(na, nb)?;
        let ab = g.abs(diff);
        parts.push(g.mean_all(ab));
    }
    mean_over_layers(g, parts)
}

/// KL(N(mu, sigma^2) || N(0, I)) = -1/2 sum(1 + log sigma^2 - mu^2 - sigma^2),
/// summed over every entry. `log_var` is clamped to [-12, 12] first.
pub fn gaussian_kl(g: &mut Graph, mu: Var, log_var: Var) -> Result<Var> {
    let lv = g.clamp(log_var, -12.0, 12.0);
    let sq = g.square(mu);
    let ex = g.exp(lv);
    let t = g.add_const(lv, 1.0);
    let t = g.sub(t, sq)?;
    let t = g.sub(t, ex)?;
    let s = g.sum_all(t);
    Ok(g.scale(s, -0.5))
}

/// Sum over entries of KL(PowerSpherical(d', kappa) || Uniform(S^(d'-1))).
/// The KL depends on kappa alone for fixed sphere dimension; the gradient is
/// kappa (psi'(alpha) - psi'(alpha + beta)).
pub fn spherical_kl(g: &mut Graph, kappa: Var, sphere_dim: usize) -> Result<Var> {
    if sphere_dim < 2 {
        return Err(Error::InvalidDimension { d: sphere_dim });
    }
    if let Some(&bad) = g.value(kappa).data().iter().find(|&&k| !(k >= 0.0) || !k.is_finite()) {
        return Err(Error::Domain {
            what: "spherical_kl kappa",
            value: bad,
            constraint: "kappa >= 0 and finite",
        });
    }
    let log_s = log_surface_area(sphere_dim)?;
    let b = (sphere_dim as f64 - 1.0) / 2.0;
    let ln2 = std::f64::consts::LN_2;
    let ln_pi = std::f64::consts::PI.ln();
    let per = g.unary(
        kappa,
        move |k| {
            let a = k + b;
            let log_c = (a + b) * ln2 + b * ln_pi + log_gamma(a).expect("a > 0")
                - log_gamma(a + b).expect("a + b > 0");
            let h = log_c - k * (ln2 + digamma(a).expect("a > 0") - digamma(a + b).expect("a + b > 0"));
            (log_s - h).max(0.0)
        },
        move |k, _| {
            let a = k + b;
            k * (trigamma(a).expect("a > 0") - trigamma(a + b).expect("a + b > 0"))
        },
    );
    Ok(g.sum_all(per))
}

/// Elementwise Huber penalty of the pose residual, summed.
pub fn camera_huber_loss(g: &mut Graph, ghat: Var, gt: Var, eps_huber: f64) -> Result<Var> {
    let r = g.sub(ghat, gt)?;
    g.huber_sum(r, eps_huber)
}

/// Aleatoric depth loss: |sigma (Dhat - D)| summed, plus the same on forward
/// spatial differences, minus alpha_reg * sum(log sigma). Border rows and
/// columns contribute no difference term.
pub fn aleatoric_depth_loss(
    g: &mut Graph,
    dhat: Var,
    d: Var,
    sigma: Var,
    alpha_reg: f64,
) -> Result<Var> {
    let (dv, sv) = (g.value(d), g.value(sigma));
    let (rows, cols) = (dv.rows(), dv.cols());
    if !g.value(dhat).same_shape(dv) || !sv.same_shape(dv) {
        return Err(Error::ShapeMismatch {
            op: "aleatoric_depth_loss",
            detail: "depth, prediction and uncertainty maps must share one shape".into(),
        });
    }
    if let Some((index, &value)) = sv.data().iter().enumerate().find(|(_, &v)| !(v > 0.0)) {
        return Err(Error::NonPositiveUncertainty { index, value });
    }

    let resid = g.sub(dhat, d)?;
    let wres = g.mul(sigma, resid)?;
    let awres = g.abs(wres);
    let mut total = g.sum_all(awres);

    let fwd_diff_cols = |g: &mut Graph, v: Var| -> Result<Var> {
        let hi = g.slice_cols(v, 1, cols - 1)?;
        let lo = g.slice_cols(v, 0, cols - 1)?;
        g.sub(hi, lo)
    };
    if cols >= 2 {
        let gx_hat = fwd_diff_cols(g, dhat)?;
        let gx = fwd_diff_cols(g, d)?;
        let gdiff = g.sub(gx_hat, gx)?;
        let sx = g.slice_cols(sigma, 0, cols - 1)?;
        let w = g.mul(sx, gdiff)?;
        let aw = g.abs(w);
        let s = g.sum_all(aw);
        total = g.add(total, s)?;
    }
    let fwd_diff_rows = |g: &mut Graph, v: Var| -> Result<Var> {
        let hi = g.slice_rows(v, 1, rows - 1)?;
        let lo = g.slice_rows(v, 0, rows - 1)?;
        g.sub(hi, lo)
    };
    if rows >= 2 {
        let gy_hat = fwd_diff_rows(g, dhat)?;
        let gy = fwd_diff_rows(g, d)?;
        let gdiff = g.sub(gy_hat, gy)?;
        let sy = g.slice_rows(sigma, 0, rows - 1)?;
        let w = g.mul(sy, gdiff)?;
        let aw = g.abs(w);
        let s = g.sum_all(aw);
        total = g.add(total, s)?;
    }

    if alpha_reg != 0.0 {
        let ls = g.ln(sigma)?;
        let sls = g.sum_all(ls);
        let reg = g.scale(sls, -alpha_reg);
        total = g.add(total, reg)?;
    }
    Ok(total)
}

/// Weighted sum of named scalar terms plus the matching report.
pub fn total_loss(
    g: &mut Graph,
    terms: &[(&'static str, Var, f64)],
) -> Result<(Var, LossReport)> {
    let mut report = Vec::with_capacity(terms.len());
    let mut acc: Option<Var> = None;
    for &(name, var, weight) in terms {
        let value = g.value(var).item()?;
        report.push(LossTerm {
            name: name.to_string(),
            value,
            weight,
        });
        let scaled = g.scale(var, weight);
        acc = Some(match acc {
            None => scaled,
            Some(a) => g.add(a, scaled)?,
        });
    }
    let total = match acc {
        Some(t) => t,
        None => g.leaf(crate::tensor::Tensor::scalar(0.0)),
    };
    let report = LossReport {
        terms: report,
        total: g.value(total).item()?,
    };
    Ok((total, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_difference_check;
    use crate::power_spherical::{kl_to_uniform, PowerSphericalParams};
    use crate::rng::rng_from_seed;
    use crate::sphere::SpherePoint;
    use crate::tensor::Tensor;
    use rand::Rng as _;

    fn random_tensor(rows: usize, cols: usize, rng: &mut crate::rng::Rng) -> Tensor {
        Tensor::from_vec(
            rows,
            cols,
            (0..rows * cols).map(|_| rng.gen_range(-1.5..1.5)).collect(),
        )
        .unwrap()
    }

    fn two_layers(rng: &mut crate::rng::Rng) -> Vec<Tensor> {
        vec![random_tensor(4, 6, rng), random_tensor(4, 5, rng)]
    }

    #[test]
    fn feature_recon_anchors() {
        let mut rng = rng_from_seed(50);
        let layers = two_layers(&mut rng);
        let w = LossWeights::default();
        let total_elems: usize = layers.iter().map(Tensor::len).sum();
        let mean_sq: f64 =
            layers.iter().flat_map(|l| l.data()).map(|v| v * v).sum::<f64>() / total_elems as f64;

        // xhat = x
        let mut g = Graph::new();
        let xs: Vec<Var> = layers.iter().map(|l| g.leaf(l.clone())).collect();
        let loss = feature_recon_loss(&mut g, &xs, &xs, &w).unwrap();
        assert!(g.value(loss).item().unwrap().abs() < 1e-12);

        // xhat = 2x: MSE = mean(x^2), cosine term zero
        let mut g = Graph::new();
        let xs: Vec<Var> = layers.iter().map(|l| g.leaf(l.clone())).collect();
        let xh: Vec<Var> = xs.iter().map(|&v| g.scale(v, 2.0)).collect();
        let (mse, sim) = feature_recon_terms(&mut g, &xs, &xh).unwrap();
        assert!((g.value(mse).item().unwrap() - mean_sq).abs() < 1e-10);
        assert!(g.value(sim).item().unwrap().abs() < 1e-10);

        // xhat = -x: cosine distance 2, MSE 4 mean(x^2)
        let mut g = Graph::new();
        let xs: Vec<Var> = layers.iter().map(|l| g.leaf(l.clone())).collect();
        let xh: Vec<Var> = xs.iter().map(|&v| g.scale(v, -1.0)).collect();
        let loss = feature_recon_loss(&mut g, &xs, &xh, &w).unwrap();
        let want = 4.0 * mean_sq + w.w_sim * 2.0;
        assert!((g.value(loss).item().unwrap() - want).abs() < 1e-9);
    }

    #[test]
    fn gram_loss_anchors() {
        let mut rng = rng_from_seed(51);
        let layers = two_layers(&mut rng);
        let mut g = Graph::new();
        let xs: Vec<Var> = layers.iter().map(|l| g.leaf(l.clone())).collect();
        let loss = gram_loss(&mut g, &xs, &xs).unwrap();
        assert!(g.value(loss).item().unwrap().abs() < 1e-12);

        // per-token positive rescaling is invisible to the Gram loss
        let mut g = Graph::new();
        let xs: Vec<Var> = layers.iter().map(|l| g.leaf(l.clone())).collect();
        let xh: Vec<Var> = layers
            .iter()
            .map(|l| {
                let mut scaled = l.clone();
                for r in 0..scaled.rows() {
                    let c = 0.5 + r as f64;
                    for v in scaled.row_mut(r) {
                        *v *= c;
                    }
                }
                g.leaf(scaled)
            })
            .collect();
        let loss = gram_loss(&mut g, &xs, &xh).unwrap();
        assert!(g.value(loss).item().unwrap().abs() < 1e-10);

        // orthonormal rows produce the identity Gram matrix
        let mut g = Graph::new();
        let eye = Tensor::from_vec(3, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let x = g.leaf(eye);
        let xn = g.normalize_rows(x).unwrap();
        let xt = g.transpose(xn);
        let gram = g.matmul(xn, xt).unwrap();
        for r in 0..3 {
            for c in 0..3 {
                let want = if r == c { 1.0 } else { 0.0 };
                assert!((g.value(gram).get(r, c) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn variance_and_norm_preservation_anchors() {
        let mut rng = rng_from_seed(52);
        let layers = two_layers(&mut rng);
        let mut g = Graph::new();
        let xs: Vec<Var> = layers.iter().map(|l| g.leaf(l.clone())).collect();
        let v = variance_preservation_loss(&mut g, &xs, &xs).unwrap();
        let n = norm_preservation_loss(&mut g, &xs, &xs).unwrap();
        assert!(g.value(v).item().unwrap().abs() < 1e-12);
        assert!(g.value(n).item().unwrap().abs() < 1e-12);

        // adding a constant row vector shifts norms but not variances
        let mut g = Graph::new();
        let xs: Vec<Var> = layers.iter().map(|l| g.leaf(l.clone())).collect();
        let xh: Vec<Var> = layers
            .iter()
            .map(|l| {
                let mut shifted = l.clone();
                for r in 0..shifted.rows() {
                    for v in shifted.row_mut(r) {
                        *v += 0.7;
                    }
                }
                g.leaf(shifted)
            })
            .collect();
        let v = variance_preservation_loss(&mut g, &xs, &xh).unwrap();
        let n = norm_preservation_loss(&mut g, &xs, &xh).unwrap();
        assert!(g.value(v).item().unwrap().abs() < 1e-10);
        assert!(g.value(n).item().unwrap() > 1e-3);

        // zero reconstruction: norm loss equals the mean token norm
        let mut g = Graph::new();
        let xs: Vec<Var> = layers.iter().map(|l| g.leaf(l.clone())).collect();
        let zeros: Vec<Var> = layers
            .iter()
            .map(|l| g.leaf(Tensor::zeros(l.rows(), l.cols())))
            .collect();
        let n = norm_preservation_loss(&mut g, &xs, &zeros).unwrap();
        let want: f64 = layers
            .iter()
            .map(|l| {
                (0..l.rows())
                    .map(|r| l.row(r).iter().map(|v| v * v).sum::<f64>().sqrt())
                    .sum::<f64>()
                    / l.rows() as f64
            })
            .sum::<f64>()
            / layers.len() as f64;
        assert!((g.value(n).item().unwrap() - want).abs() < 1e-9);
    }

    #[test]
    fn gaussian_kl_anchors() {
        let mut g = Graph::new();
        let mu = g.leaf(Tensor::zeros(1, 3));
        let lv = g.leaf(Tensor::zeros(1, 3));
        let kl = gaussian_kl(&mut g, mu, lv).unwrap();
        assert!(g.value(kl).item().unwrap().abs() < 1e-12);

        let mut g = Graph::new();
        let mu = g.leaf(Tensor::from_vec(1, 2, vec![1.0, 0.0]).unwrap());
        let lv = g.leaf(Tensor::zeros(1, 2));
        let kl = gaussian_kl(&mut g, mu, lv).unwrap();
        assert!((g.value(kl).item().unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn gaussian_kl_matches_monte_carlo() {
        let mut rng = rng_from_seed(53);
        let d = 3;
        let mu: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let lv: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..0.5)).collect();

        let mut g = Graph::new();
        let muv = g.leaf(Tensor::from_vec(1, d, mu.clone()).unwrap());
        let lvv = g.leaf(Tensor::from_vec(1, d, lv.clone()).unwrap());
        let kl = gaussian_kl(&mut g, muv, lvv).unwrap();
        let analytic = g.value(kl).item().unwrap();

        let n = 200_000;
        let mut acc = 0.0;
        for _ in 0..n {
            for j in 0..d {
                let sigma = (0.5 * lv[j]).exp();
                let eps: f64 = rng.sample(rand_distr::StandardNormal);
                let z = mu[j] + sigma * eps;
                // log q(z) - log p(z)
                acc += -0.5 * lv[j] - 0.5 * eps * eps + 0.5 * z * z;
            }
        }
        let mc = acc / n as f64;
        assert!(
            (analytic - mc).abs() < 1e-2,
            "analytic {analytic} vs mc {mc}"
        );
    }

    #[test]
    fn spherical_kl_matches_distribution_formula() {
        let d = 8;
        let mu = SpherePoint::north_pole(d).unwrap();
        for &k in &[0.0, 0.5, 5.0, 30.0, 400.0] {
            let mut g = Graph::new();
            let kv = g.leaf(Tensor::scalar(k));
            let kl = spherical_kl(&mut g, kv, d).unwrap();
            let p = PowerSphericalParams::new(mu.clone(), k).unwrap();
            let want = kl_to_uniform(&p).unwrap();
            let got = g.value(kl).item().unwrap();
            assert!(
                (got - want).abs() < 1e-10 * want.max(1.0),
                "kappa {k}: got {got}, want {want}"
            );
        }
        // additivity over entries
        let mut g = Graph::new();
        let kv = g.leaf(Tensor::from_vec(2, 2, vec![1.0, 5.0, 30.0, 100.0]).unwrap());
        let kl = spherical_kl(&mut g, kv, d).unwrap();
        let mut want = 0.0;
        for &k in &[1.0, 5.0, 30.0, 100.0] {
            want += kl_to_uniform(&PowerSphericalParams::new(mu.clone(), k).unwrap()).unwrap();
        }
        assert!((g.value(kl).item().unwrap() - want).abs() < 1e-9);
    }

    #[test]
    fn spherical_kl_gradient_matches_finite_differences() {
        for &d in &[4usize, 8, 32] {
            let audit = finite_difference_check(
                |g, vars| spherical_kl(g, vars[0], d),
                &[Tensor::from_vec(1, 3, vec![2.0, 17.0, 90.0]).unwrap()],
                1e-4,
            )
            .unwrap();
            assert!(audit.max_rel_err < 1e-6, "d={d}: {:?}", audit.per_leaf);
        }
    }

    #[test]
    fn camera_huber_anchors() {
        let eps = 0.1;
        let n = 7;
        let gt = Tensor::zeros(1, n);

        let mut g = Graph::new();
        let a = g.leaf(gt.clone());
        let b = g.leaf(gt.clone());
        let l = camera_huber_loss(&mut g, a, b, eps).unwrap();
        assert_eq!(g.value(l).item().unwrap(), 0.0);

        // quadratic branch
        let mut g = Graph::new();
        let a = g.leaf(Tensor::filled(1, n, 0.5 * eps));
        let b = g.leaf(gt.clone());
        let l = camera_huber_loss(&mut g, a, b, eps).unwrap();
        let want = 0.5 * (0.5 * eps) * (0.5 * eps) * n as f64;
        assert!((g.value(l).item().unwrap() - want).abs() < 1e-12);

        // linear branch
        let mut g = Graph::new();
        let a = g.leaf(Tensor::filled(1, n, 10.0 * eps));
        let b = g.leaf(gt);
        let l = camera_huber_loss(&mut g, a, b, eps).unwrap();
        let want = eps * (10.0 * eps - 0.5 * eps) * n as f64;
        assert!((g.value(l).item().unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn aleatoric_depth_anchors() {
        let p = 4;
        let mut rng = rng_from_seed(54);
        let depth = Tensor::from_vec(
            p,
            p,
            (0..p * p).map(|_| rng.gen_range(0.5..2.0)).collect(),
        )
        .unwrap();

        // perfect prediction, unit uncertainty
        let mut g = Graph::new();
        let d = g.leaf(depth.clone());
        let dh = g.leaf(depth.clone());
        let s = g.leaf(Tensor::filled(p, p, 1.0));
        let l = aleatoric_depth_loss(&mut g, dh, d, s, 1.0).unwrap();
        assert!(g.value(l).item().unwrap().abs() < 1e-12);

        // sigma = e leaves only the regularizer: -P
        let mut g = Graph::new();
        let d = g.leaf(depth.clone());
        let dh = g.leaf(depth.clone());
        let s = g.leaf(Tensor::filled(p, p, std::f64::consts::E));
        let l = aleatoric_depth_loss(&mut g, dh, d, s, 1.0).unwrap();
        assert!((g.value(l).item().unwrap() + (p * p) as f64).abs() < 1e-9);

        // constant offset on constant fields: value term only, P * |c|
        let c = -0.3;
        let mut g = Graph::new();
        let d = g.leaf(Tensor::filled(p, p, 1.0));
        let dh = g.leaf(Tensor::filled(p, p, 1.0 + c));
        let s = g.leaf(Tensor::filled(p, p, 1.0));
        let l = aleatoric_depth_loss(&mut g, dh, d, s, 0.5).unwrap();
        assert!((g.value(l).item().unwrap() - (p * p) as f64 * c.abs()).abs() < 1e-9);

        // non-positive uncertainty rejected
        let mut g = Graph::new();
        let d = g.leaf(depth.clone());
        let dh = g.leaf(depth);
        let mut bad = Tensor::filled(p, p, 1.0);
        bad.set(1, 2, 0.0);
        let s = g.leaf(bad);
        assert!(matches!(
            aleatoric_depth_loss(&mut g, dh, d, s, 1.0),
            Err(Error::NonPositiveUncertainty { index: 6, .. })
        ));
    }

    #[test]
    fn total_loss_report_consistency() {
        let mut rng = rng_from_seed(55);
        let layers = two_layers(&mut rng);
        let mut g = Graph::new();
        let xs: Vec<Var> = layers.iter().map(|l| g.leaf(l.clone())).collect();
        let xh: Vec<Var> = layers
            .iter()
            .map(|l| {
                let t = random_tensor(l.rows(), l.cols(), &mut rng);
                g.leaf(t)
            })
            .collect();
        let (mse, sim) = feature_recon_terms(&mut g, &xs, &xh).unwrap();
        let gram = gram_loss(&mut g, &xs, &xh).unwrap();
        let (total, report) = total_loss(
            &mut g,
            &[("mse", mse, 1.0), ("sim", sim, 0.25), ("gram", gram, 0.5)],
        )
        .unwrap();
        assert!((report.total - report.weighted_sum()).abs() < 1e-9);
        assert!((g.value(total).item().unwrap() - report.total).abs() < 1e-12);

        // all weights zero
        let (_, zero_report) = total_loss(
            &mut g,
            &[("mse", mse, 0.0), ("sim", sim, 0.0)],
        )
        .unwrap();
        assert_eq!(zero_report.total, 0.0);

        // single weight
        let (_, single) = total_loss(&mut g, &[("gram", gram, 0.7)]).unwrap();
        let gram_value = g.value(gram).item().unwrap();
        assert!((single.total - 0.7 * gram_value).abs() < 1e-12);
    }

    #[test]
    fn all_losses_pass_gradient_audit() {
        let mut rng = rng_from_seed(56);
        let x1 = random_tensor(4, 6, &mut rng);
        let x2 = random_tensor(4, 5, &mut rng);
        let h1 = random_tensor(4, 6, &mut rng);
        let h2 = random_tensor(4, 5, &mut rng);
        let w = LossWeights::default();
        let audit = finite_difference_check(
            |g, vars| {
                let xs = [vars[0], vars[1]];
                let hs = [vars[2], vars[3]];
                let recon = feature_recon_loss(g, &xs, &hs, &w)?;
                let gram = gram_loss(g, &xs, &hs)?;
                let var = variance_preservation_loss(g, &xs, &hs)?;
                let norm = norm_preservation_loss(g, &xs, &hs)?;
                let a = g.add(recon, gram)?;
                let b = g.add(var, norm)?;
                g.add(a, b)
            },
            &[x1, x2, h1, h2],
            1e-6,
        )
        .unwrap();
        assert!(audit.max_rel_err < 0.02, "feature losses {:?}", audit.per_leaf);

        let mu = random_tensor(2, 4, &mut rng);
        let lv = random_tensor(2, 4, &mut rng);
        let audit = finite_difference_check(
            |g, vars| gaussian_kl(g, vars[0], vars[1]),
            &[mu, lv],
            1e-5,
        )
        .unwrap();
        assert!(audit.max_rel_err < 0.02, "gaussian kl {:?}", audit.per_leaf);

        let ghat = random_tensor(1, 7, &mut rng);
        let gt = random_tensor(1, 7, &mut rng);
        let audit = finite_difference_check(
            |g, vars| camera_huber_loss(g, vars[0], vars[1], 0.1),
            &[ghat, gt],
            1e-6,
        )
        .unwrap();
        assert!(audit.max_rel_err < 0.02, "camera {:?}", audit.per_leaf);

        let p = 5;
        let d = Tensor::from_vec(p, p, (0..p * p).map(|_| rng.gen_range(0.5..2.0)).collect()).unwrap();
        let dh = Tensor::from_vec(p, p, (0..p * p).map(|_| rng.gen_range(0.5..2.0)).collect()).unwrap();
        let s = Tensor::from_vec(p, p, (0..p * p).map(|_| rng.gen_range(0.7..1.4)).collect()).unwrap();
        let audit = finite_difference_check(
            |g, vars| aleatoric_depth_loss(g, vars[0], vars[1], vars[2], 0.1),
            &[dh, d, s],
            1e-6,
        )
        .unwrap();
        assert!(audit.max_rel_err < 0.02, "aleatoric {:?}", audit.per_leaf);
    }

    #[test]
    fn weight_validation() {
        let mut w = LossWeights::default();
        assert!(w.validate().is_ok());
        w.w_kl = -1.0;
        assert!(w.validate().is_err());
        let w = LossWeights {
            huber_eps: 0.0,
            ..LossWeights::default()
        };
        assert!(w.validate().is_err());
    }
}
