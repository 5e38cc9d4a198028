//! Analysis procedures over trained models and synthetic data: active
//! latent dimensions, norm CV profiles, the layer-norm shell bound, a
//! decoder Lipschitz probe, Spearman/mutual-information specialization
//! reports, a depth probe on frozen latents, and slerp interpolation
//! sweeps.

use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::nn::{Bottleneck, Model, ParamStore};
use crate::opt::{optimizer_step, OptimizerConfig, OptimizerState};
use crate::product::{slerp_product, ProductLatent};
use crate::rng::rng_from_seed;
use crate::sphere::SpherePoint;
use crate::synthetic::{Dataset, FeatureBatch, SyntheticScene};
use crate::tensor::Tensor;
use crate::train::{depth_metrics, scene_mean_latent};
use crate::util::{mean, variance_population, variance_sample};
use rand::Rng as _;
use serde::Serialize;

/// Per-dimension variance summary over a latent batch.
#[derive(Debug, Clone, Serialize)]
pub struct DimensionReport {
    pub per_dimension_variance: Vec<f64>,
    pub active_count: usize,
    pub threshold: f64,
    pub min_variance: f64,
    pub max_variance: f64,
}

/// Counts dimensions whose sample variance over the rows of `latents`
/// reaches `threshold`.
pub fn active_dimensions(latents: &Tensor, threshold: f64) -> Result<DimensionReport> {
    let (n, d) = (latents.rows(), latents.cols());
    if n < 2 {
        return Err(Error::InsufficientSamples { got: n, need: 2 });
    }
    let mut per_dim = Vec::with_capacity(d);
    for c in 0..d {
        let col: Vec<f64> = (0..n).map(|r| latents.get(r, c)).collect();
        per_dim.push(variance_sample(&col));
    }
    let active_count = per_dim.iter().filter(|&&v| v >= threshold).count();
    let min_variance = per_dim.iter().cloned().fold(f64::INFINITY, f64::min);
    let max_variance = per_dim.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(DimensionReport {
        per_dimension_variance: per_dim,
        active_count,
        threshold,
        min_variance,
        max_variance,
    })
}

/// Per-layer coefficient of variation of token norms.
pub fn norm_cv_profile(features: &FeatureBatch) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(features.layers.len());
    for (i, layer) in features.layers.iter().enumerate() {
        if layer.rows() < 2 {
            return Err(Error::InsufficientSamples {
                got: layer.rows(),
                need: 2,
            });
        }
        let norms: Vec<f64> = (0..layer.rows())
            .map(|r| crate::util::norm2(layer.row(r)))
            .collect();
        let m = mean(&norms);
        if m < 1e-12 {
            return Err(Error::DegenerateLayer {
                index: i,
                mean_norm: m,
            });
        }
        out.push(variance_population(&norms).sqrt() / m);
    }
    Ok(out)
}

/// Closed-form shell half-width for layer-norm outputs: sqrt(d) * eps /
/// (2 * sigma_min), with sigma_min a lower bound on per-dimension token
/// variance.
pub fn shell_thickness_bound(d: usize, eps: f64, sigma_min: f64) -> Result<f64> {
    if d == 0 {
        return Err(Error::InvalidDimension { d });
    }
    if !(eps >= 0.0) {
        return Err(Error::Domain {
            what: "layer norm eps",
            value: eps,
            constraint: ">= 0",
        });
    }
    if !(sigma_min > 0.0) {
        return Err(Error::Domain {
            what: "sigma_min",
            value: sigma_min,
            constraint: "> 0",
        });
    }
    Ok((d as f64).sqrt() * eps / (2.0 * sigma_min))
}

/// Empirical companion to [`shell_thickness_bound`]: the fraction of rows
/// (restricted to rows with per-dimension variance >= sigma_min) whose
/// layer-norm output norm deviates from sqrt(d) by more than `slack` times
/// the bound.
pub fn shell_outside_fraction(
    tokens: &Tensor,
    eps: f64,
    sigma_min: f64,
    slack: f64,
) -> Result<f64> {
    let d = tokens.cols();
    let bound = shell_thickness_bound(d, eps, sigma_min)?;
    let target = (d as f64).sqrt();
    let mut kept = 0usize;
    let mut outside = 0usize;
    for r in 0..tokens.rows() {
        let row = tokens.row(r);
        let v = variance_population(row);
        if v < sigma_min {
            continue;
        }
        kept += 1;
        let m = mean(row);
        let inv = 1.0 / (v + eps).sqrt();
        let norm = row
            .iter()
            .map(|x| {
                let y = (x - m) * inv;
                y * y
            })
            .sum::<f64>()
            .sqrt();
        if (norm - target).abs() > slack * bound {
            outside += 1;
        }
    }
    if kept == 0 {
        return Err(Error::DegenerateInput(
            "no rows reach the sigma_min variance floor",
        ));
    }
    Ok(outside as f64 / kept as f64)
}

/// Largest observed output/input distance ratio over latent pairs; a lower
/// bound on the decoder's Lipschitz constant. Pairs with coincident
/// latents are skipped.
pub fn lipschitz_probe<F>(decode: F, pairs: &[(Tensor, Tensor)]) -> Result<f64>
where
    F: Fn(&Tensor) -> Result<Vec<Tensor>>,
{
    let mut best: Option<f64> = None;
    for (a, b) in pairs {
        if !a.same_shape(b) {
            return Err(Error::ShapeMismatch {
                op: "lipschitz_probe",
                detail: format!(
                    "{}x{} vs {}x{}",
                    a.rows(),
                    a.cols(),
                    b.rows(),
                    b.cols()
                ),
            });
        }
        let dz: f64 = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        if dz == 0.0 {
            continue;
        }
        let oa = decode(a)?;
        let ob = decode(b)?;
        let mut sq = 0.0;
        for (ta, tb) in oa.iter().zip(&ob) {
            for (x, y) in ta.data().iter().zip(tb.data()) {
                sq += (x - y) * (x - y);
            }
        }
        let ratio = sq.sqrt() / dz;
        best = Some(best.map_or(ratio, |b| b.max(ratio)));
    }
    best.ok_or(Error::DegenerateInput("no distinct latent pairs"))
}

fn average_ranks(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(a.cmp(&b)));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        // ranks are 1-based; ties share the average of their span
        let avg = (i + j + 2) as f64 / 2.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average-rank tie handling.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.len() < 3 {
        return Err(Error::InsufficientSamples {
            got: a.len(),
            need: 3,
        });
    }
    if a.iter().any(|v| !v.is_finite()) || b.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateInput("non-finite values"));
    }
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    let (ma, mb) = (mean(&ra), mean(&rb));
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return Err(Error::DegenerateInput("constant input"));
    }
    Ok(cov / (va * vb).sqrt())
}

fn equal_frequency_bins(x: &[f64], bins: usize) -> Vec<usize> {
    let n = x.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(a.cmp(&b)));
    let mut out = vec![0usize; n];
    for (pos, &i) in idx.iter().enumerate() {
        out[i] = pos * bins / n;
    }
    out
}

/// Plug-in mutual information (nats) on equal-frequency bins.
pub fn mutual_information(a: &[f64], b: &[f64], bins: usize) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    if bins < 2 {
        return Err(Error::InvalidDimension { d: bins });
    }
    let n = a.len();
    if n < 10 * bins {
        return Err(Error::InsufficientSamples {
            got: n,
            need: 10 * bins,
        });
    }
    if a.iter().any(|v| !v.is_finite()) || b.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateInput("non-finite values"));
    }
    let constant = |x: &[f64]| x.iter().all(|&v| v == x[0]);
    if constant(a) || constant(b) {
        return Err(Error::DegenerateInput("constant input"));
    }
    let ba = equal_frequency_bins(a, bins);
    let bb = equal_frequency_bins(b, bins);
    let mut joint = vec![0.0f64; bins * bins];
    let mut pa = vec![0.0f64; bins];
    let mut pb = vec![0.0f64; bins];
    let inv = 1.0 / n as f64;
    for (&i, &j) in ba.iter().zip(&bb) {
        joint[i * bins + j] += inv;
        pa[i] += inv;
        pb[j] += inv;
    }
    let mut mi = 0.0;
    for i in 0..bins {
        for j in 0..bins {
            let p = joint[i * bins + j];
            if p > 0.0 {
                mi += p * (p / (pa[i] * pb[j])).ln();
            }
        }
    }
    Ok(mi.max(0.0))
}

/// Per-sphere, per-task dependence summary.
#[derive(Debug, Clone, Serialize)]
pub struct SpecializationReport {
    pub task_names: Vec<String>,
    /// n_spheres x n_tasks.
    pub spearman_abs: Vec<Vec<f64>>,
    pub mutual_info: Vec<Vec<f64>>,
    /// True where a sphere's MI reaches twice the per-task average.
    pub specialized: Vec<Vec<bool>>,
    /// Per-task averages over spheres.
    pub mean_abs_rho: Vec<f64>,
    pub mean_mi: Vec<f64>,
}

/// Scalar task variables read off a scene: depth summary, translation
/// components, rotation angle.
pub fn task_values(scene: &SyntheticScene) -> Vec<(&'static str, f64)> {
    let log_depth_mean = mean(
        &scene
            .depth_map
            .data()
            .iter()
            .map(|d| d.ln())
            .collect::<Vec<_>>(),
    );
    let qw = scene.pose[3].clamp(-1.0, 1.0);
    vec![
        ("log_depth_mean", log_depth_mean),
        ("trans_x", scene.pose[0]),
        ("trans_y", scene.pose[1]),
        ("trans_z", scene.pose[2]),
        ("rot_angle", 2.0 * qw.acos()),
    ]
}

/// First-principal-coordinate scores of the rows of `parts` (n x d),
/// computed by power iteration on the centered data. Deterministic; a
/// zero-variance input yields all-zero scores.
fn principal_scores(parts: &Tensor) -> Vec<f64> {
    let (n, d) = (parts.rows(), parts.cols());
    let mut x = parts.clone();
    for c in 0..d {
        let m: f64 = (0..n).map(|r| x.get(r, c)).sum::<f64>() / n as f64;
        for r in 0..n {
            x.set(r, c, x.get(r, c) - m);
        }
    }
    let mut v = vec![1.0 / (d as f64).sqrt(); d];
    for _ in 0..100 {
        let mut u = vec![0.0; n];
        for (r, ur) in u.iter_mut().enumerate() {
            *ur = crate::util::dot(x.row(r), &v);
        }
        let mut w = vec![0.0; d];
        for (r, &ur) in u.iter().enumerate().take(n) {
            for (c, wc) in w.iter_mut().enumerate() {
                *wc += ur * x.get(r, c);
            }
        }
        let norm = crate::util::norm2(&w);
        if norm < 1e-300 {
            return vec![0.0; n];
        }
        for (vc, wc) in v.iter_mut().zip(&w) {
            *vc = wc / norm;
        }
    }
    (0..n).map(|r| crate::util::dot(x.row(r), &v)).collect()
}

const MI_BINS: usize = 8;

/// Correlates each sub-sphere's principal score with each task variable
/// over the given scenes. Requires a product (spherical) bottleneck.
pub fn sphere_specialization(
    model: &Model,
    dataset: &Dataset,
    indices: &[usize],
) -> Result<SpecializationReport> {
    let (n_spheres, sphere_dim) = match model.config().bottleneck {
        Bottleneck::Spherical {
            n_spheres,
            sphere_dim,
        } => (n_spheres, sphere_dim),
        Bottleneck::Gaussian { .. } => {
            return Err(Error::ConfigError(
                "sphere specialization requires a spherical bottleneck".into(),
            ))
        }
    };
    let n = indices.len();
    if n < 10 * MI_BINS {
        return Err(Error::InsufficientSamples {
            got: n,
            need: 10 * MI_BINS,
        });
    }

    let rows = crate::util::parallel_map(n, |i| -> Result<(Vec<f64>, Vec<f64>)> {
        let scene = dataset.scene(indices[i]);
        let latent = scene_mean_latent(model, &scene)?;
        // average latent tokens into one product point per scene
        let d = latent.cols();
        let mut flat = vec![0.0; d];
        for r in 0..latent.rows() {
            for (acc, v) in flat.iter_mut().zip(latent.row(r)) {
                *acc += v / latent.rows() as f64;
            }
        }
        let tasks: Vec<f64> = task_values(&scene).into_iter().map(|(_, v)| v).collect();
        Ok((flat, tasks))
    });

    let mut latents = Tensor::zeros(n, n_spheres * sphere_dim);
    let mut tasks: Vec<Vec<f64>> = Vec::with_capacity(n);
    for (i, row) in rows.into_iter().enumerate() {
        let (flat, t) = row?;
        latents.row_mut(i).copy_from_slice(&flat);
        tasks.push(t);
    }
    let task_names: Vec<String> = task_values(&dataset.scene(indices[0]))
        .iter()
        .map(|(n, _)| n.to_string())
        .collect();
    let n_tasks = task_names.len();
    let task_cols: Vec<Vec<f64>> = (0..n_tasks)
        .map(|t| tasks.iter().map(|row| row[t]).collect())
        .collect();

    let mut spearman_abs = vec![vec![0.0; n_tasks]; n_spheres];
    let mut mutual_info = vec![vec![0.0; n_tasks]; n_spheres];
    for s in 0..n_spheres {
        let mut part = Tensor::zeros(n, sphere_dim);
        for r in 0..n {
            for c in 0..sphere_dim {
                part.set(r, c, latents.get(r, s * sphere_dim + c));
            }
        }
        let scores = principal_scores(&part);
        let degenerate = variance_population(&scores) < 1e-18;
        for t in 0..n_tasks {
            if degenerate {
                continue;
            }
            spearman_abs[s][t] = spearman(&scores, &task_cols[t])?.abs();
            mutual_info[s][t] = mutual_information(&scores, &task_cols[t], MI_BINS)?;
        }
    }

    let mean_over_spheres = |m: &Vec<Vec<f64>>, t: usize| -> f64 {
        m.iter().map(|row| row[t]).sum::<f64>() / n_spheres as f64
    };
    let mean_abs_rho: Vec<f64> = (0..n_tasks)
        .map(|t| mean_over_spheres(&spearman_abs, t))
        .collect();
    let mean_mi: Vec<f64> = (0..n_tasks)
        .map(|t| mean_over_spheres(&mutual_info, t))
        .collect();
    let specialized = mutual_info
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .map(|(t, &v)| v >= 2.0 * mean_mi[t] && v > 0.0)
                .collect()
        })
        .collect();
    Ok(SpecializationReport {
        task_names,
        spearman_abs,
        mutual_info,
        specialized,
        mean_abs_rho,
        mean_mi,
    })
}

/// Two-layer MLP depth probe configuration.
#[derive(Debug, Clone, Serialize)]
pub struct ProbeConfig {
    pub hidden: usize,
    pub steps: usize,
    pub lr: f64,
    /// Decoupled decay on the weight matrices only; biases are exempt so
    /// the output bias can hold the target mean.
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            steps: 300,
            lr: 3e-3,
            weight_decay: 2.0,
            seed: 17,
        }
    }
}

pub const PROBE_PARAM_BUDGET: usize = 500_000;

#[derive(Debug, Clone, Serialize)]
pub struct ProbeMetrics {
    pub param_count: usize,
    /// AbsRel on the held-out tail of the provided scenes.
    pub abs_rel: f64,
    /// AbsRel on the fitted scenes.
    pub train_abs_rel: f64,
    pub final_train_loss: f64,
}

/// Trains a two-layer MLP from flattened latents to log depth maps and
/// reports held-out AbsRel. Latents arrive as plain tensors, so no
/// gradient can reach the model that produced them. The last 20% of the
/// pairs are held out for the metric.
pub fn probe_latents(
    latents: &[Tensor],
    depth_maps: &[Tensor],
    cfg: &ProbeConfig,
) -> Result<ProbeMetrics> {
    if latents.len() != depth_maps.len() {
        return Err(Error::DimensionMismatch {
            expected: latents.len(),
            got: depth_maps.len(),
        });
    }
    if latents.len() < 10 {
        return Err(Error::InsufficientSamples {
            got: latents.len(),
            need: 10,
        });
    }
    if cfg.hidden == 0 || cfg.steps == 0 || !(cfg.lr > 0.0) {
        return Err(Error::ConfigError("probe hidden/steps/lr must be positive".into()));
    }
    let in_dim = latents[0].rows() * latents[0].cols();
    let out_dim = depth_maps[0].rows() * depth_maps[0].cols();
    let param_count = (in_dim + 1) * cfg.hidden + (cfg.hidden + 1) * out_dim;
    if param_count > PROBE_PARAM_BUDGET {
        return Err(Error::ConfigError(format!(
            "probe has {param_count} parameters, budget is {PROBE_PARAM_BUDGET}"
        )));
    }

    let n = latents.len();
    let n_eval = (n / 5).max(1);
    let n_train = n - n_eval;
    let stack = |items: &[Tensor], take: std::ops::Range<usize>, cols: usize| -> Result<Tensor> {
        let mut out = Tensor::zeros(take.len(), cols);
        for (r, i) in take.enumerate() {
            if items[i].rows() * items[i].cols() != cols {
                return Err(Error::ShapeMismatch {
                    op: "probe stack",
                    detail: format!("item {i} size differs"),
                });
            }
            out.row_mut(r).copy_from_slice(items[i].data());
        }
        Ok(out)
    };
    let x_train = stack(latents, 0..n_train, in_dim)?;
    let x_eval = stack(latents, n_train..n, in_dim)?;
    let mut y_train = stack(depth_maps, 0..n_train, out_dim)?;
    for v in y_train.data_mut() {
        if !(*v > 0.0) {
            return Err(Error::Domain {
                what: "depth target",
                value: *v,
                constraint: "> 0",
            });
        }
        *v = v.ln();
    }

    let mut store = ParamStore::new();
    let mut rng = rng_from_seed(cfg.seed);
    let init = |rows: usize, cols: usize, fan_in: usize, rng: &mut crate::rng::Rng| {
        let bound = 1.0 / (fan_in as f64).sqrt();
        Tensor::from_vec(
            rows,
            cols,
            (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect(),
        )
        .expect("shape by construction")
    };
    store.register("probe.w1", init(in_dim, cfg.hidden, in_dim, &mut rng))?;
    store.register("probe.b1", Tensor::zeros(1, cfg.hidden))?;
    // zero-initialized output layer: the probe fits the target mean first
    store.register("probe.w2", Tensor::zeros(cfg.hidden, out_dim))?;
    store.register("probe.b2", Tensor::zeros(1, out_dim))?;
    let opt_cfg = OptimizerConfig {
        peak_lr: cfg.lr,
        weight_decay: 0.0,
        warmup_frac: 0.05,
        ..OptimizerConfig::default()
    };
    let mut state = OptimizerState::new(opt_cfg, cfg.steps, &store)?;

    let forward = |g: &mut Graph, store: &ParamStore, x: &Tensor| -> Result<(Vec<crate::autodiff::Var>, crate::autodiff::Var)> {
        let vars: Vec<_> = store.tensors().iter().map(|t| g.leaf(t.clone())).collect();
        let xv = g.leaf(x.clone());
        let h = g.matmul(xv, vars[0])?;
        let h = g.add_bias(h, vars[1])?;
        let h = g.gelu(h);
        let y = g.matmul(h, vars[2])?;
        let y = g.add_bias(y, vars[3])?;
        Ok((vars, y))
    };

    let weight_ids = [
        store.lookup("probe.w1").expect("registered above"),
        store.lookup("probe.w2").expect("registered above"),
    ];
    let mut final_train_loss = f64::INFINITY;
    for _ in 0..cfg.steps {
        let mut g = Graph::new();
        let (vars, yhat) = forward(&mut g, &store, &x_train)?;
        let target = g.leaf(y_train.clone());
        let diff = g.sub(yhat, target)?;
        let sq = g.square(diff);
        let loss = g.mean_all(sq);
        final_train_loss = g.value(loss).item()?;
        let mut grads = g.backward(loss)?;
        let grad_tensors: Vec<Tensor> = vars
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                grads.take(v).unwrap_or_else(|| {
                    let p = &store.tensors()[i];
                    Tensor::zeros(p.rows(), p.cols())
                })
            })
            .collect();
        let lr = state.next_lr();
        optimizer_step(&mut state, &mut store, &grad_tensors)?;
        let shrink = 1.0 - lr * cfg.weight_decay;
        for id in weight_ids {
            for v in store.tensor_mut(id).data_mut() {
                *v *= shrink;
            }
        }
    }

    let score = |x: &Tensor, rows: std::ops::Range<usize>| -> Result<f64> {
        let mut g = Graph::new();
        let (_, yhat) = forward(&mut g, &store, x)?;
        let pred = g.value(yhat);
        let mut abs_rels = Vec::with_capacity(rows.len());
        for (r, i) in rows.enumerate() {
            let dhat: Vec<f64> = pred.row(r).iter().map(|v| v.exp()).collect();
            let errs = depth_metrics(&dhat, depth_maps[i].data())?;
            abs_rels.push(errs.abs_rel);
        }
        Ok(mean(&abs_rels))
    };
    Ok(ProbeMetrics {
        param_count,
        abs_rel: score(&x_eval, n_train..n)?,
        train_abs_rel: score(&x_train, 0..n_train)?,
        final_train_loss,
    })
}

/// Interpolation sweep artifact: latents, per-layer reconstructions, and
/// the adjacent-step smoothness summary.
#[derive(Debug)]
pub struct SlerpSweep {
    pub ts: Vec<f64>,
    /// Latents per step, rows = latent tokens.
    pub latents: Vec<Tensor>,
    /// Reconstructions per step, one tensor per feature layer.
    pub recons: Vec<Vec<Tensor>>,
    /// Euclidean distance between consecutive reconstructions.
    pub adjacent_distances: Vec<f64>,
    /// max / median adjacent distance; 1 when all steps coincide.
    pub smoothness_ratio: f64,
}

fn decode_latent(model: &Model, latent: &Tensor) -> Result<Vec<Tensor>> {
    let mut g = Graph::new();
    let vars = model.param_vars(&mut g);
    let z = g.leaf(latent.clone());
    let xhat = model.decode(&mut g, &vars, z)?;
    Ok(xhat.into_iter().map(|v| g.value(v).clone()).collect())
}

fn recon_distance(a: &[Tensor], b: &[Tensor]) -> f64 {
    let mut sq = 0.0;
    for (ta, tb) in a.iter().zip(b) {
        for (x, y) in ta.data().iter().zip(tb.data()) {
            sq += (x - y) * (x - y);
        }
    }
    sq.sqrt()
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Encodes two scenes, interpolates each latent token along the product
/// geodesic at t = k/steps, and decodes every intermediate latent.
pub fn slerp_sweep(
    model: &Model,
    scene_a: &SyntheticScene,
    scene_b: &SyntheticScene,
    steps: usize,
) -> Result<SlerpSweep> {
    if steps < 2 {
        return Err(Error::InvalidDimension { d: steps });
    }
    let spec = model.config().bottleneck.spec().ok_or_else(|| {
        Error::ConfigError("slerp sweep requires a spherical bottleneck".into())
    })?;
    let la = scene_mean_latent(model, scene_a)?;
    let lb = scene_mean_latent(model, scene_b)?;

    let mut ts = Vec::with_capacity(steps + 1);
    let mut latents = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let t = k as f64 / steps as f64;
        // endpoints keep the encoder's latents verbatim; intermediate
        // points go through the per-part geodesic
        let z = if k == 0 {
            la.clone()
        } else if k == steps {
            lb.clone()
        } else {
            let mut z = Tensor::zeros(la.rows(), la.cols());
            for r in 0..la.rows() {
                let part_points = |row: &[f64]| -> Result<ProductLatent> {
                    ProductLatent::new(
                        row.chunks(spec.sphere_dim())
                            .map(|c| SpherePoint::new(c.to_vec()))
                            .collect::<Result<Vec<_>>>()?,
                    )
                };
                let pa = part_points(la.row(r))?;
                let pb = part_points(lb.row(r))?;
                let pt = slerp_product(&pa, &pb, t)?;
                z.row_mut(r).copy_from_slice(&pt.flat());
            }
            z
        };
        ts.push(t);
        latents.push(z);
    }

    let recons: Vec<Vec<Tensor>> = latents
        .iter()
        .map(|z| decode_latent(model, z))
        .collect::<Result<_>>()?;
    let adjacent: Vec<f64> = recons
        .windows(2)
        .map(|w| recon_distance(&w[0], &w[1]))
        .collect();
    let max = adjacent.iter().cloned().fold(0.0, f64::max);
    let med = median(&adjacent);
    let smoothness_ratio = if max == 0.0 { 1.0 } else { max / med };
    Ok(SlerpSweep {
        ts,
        latents,
        recons,
        adjacent_distances: adjacent,
        smoothness_ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::EncoderConfig;
    use crate::synthetic::{generate_scene, DataConfig};
    use rand_distr::StandardNormal;

    #[test]
    fn active_dimensions_anchors() {
        let constant = Tensor::from_vec(4, 3, vec![2.0; 12]).unwrap();
        let rep = active_dimensions(&constant, 0.1).unwrap();
        assert_eq!(rep.active_count, 0);
        let rep = active_dimensions(&constant, 0.0).unwrap();
        assert_eq!(rep.active_count, 3);
        assert!(active_dimensions(&Tensor::zeros(1, 3), 0.1).is_err());
    }

    #[test]
    fn active_dimensions_standard_normal_all_active() {
        let mut rng = rng_from_seed(5);
        let n = 10_000;
        let d = 16;
        let data: Vec<f64> = (0..n * d).map(|_| rng.sample(StandardNormal)).collect();
        let latents = Tensor::from_vec(n, d, data).unwrap();
        let rep = active_dimensions(&latents, 0.1).unwrap();
        assert_eq!(rep.active_count, d);
        assert!(rep.min_variance > 0.9 && rep.max_variance < 1.1);
    }

    #[test]
    fn norm_cv_anchors() {
        let equal = Tensor::from_vec(2, 2, vec![3.0, 4.0, -4.0, 3.0]).unwrap();
        let batch = FeatureBatch {
            layers: vec![equal],
            layer_radii: vec![5.0],
            factors: vec![],
        };
        let cv = norm_cv_profile(&batch).unwrap();
        assert!(cv[0].abs() < 1e-15);

        // norms 1 and 3: population std 1, mean 2
        let two = Tensor::from_vec(2, 2, vec![1.0, 0.0, 0.0, 3.0]).unwrap();
        let batch = FeatureBatch {
            layers: vec![two],
            layer_radii: vec![2.0],
            factors: vec![],
        };
        let cv = norm_cv_profile(&batch).unwrap();
        assert!((cv[0] - 0.5).abs() < 1e-15);

        let zero = Tensor::zeros(3, 4);
        let batch = FeatureBatch {
            layers: vec![zero],
            layer_radii: vec![1.0],
            factors: vec![],
        };
        match norm_cv_profile(&batch) {
            Err(Error::DegenerateLayer { index: 0, .. }) => {}
            other => panic!("expected DegenerateLayer, got {other:?}"),
        }
    }

    #[test]
    fn generator_default_cv_under_limit() {
        let cfg = DataConfig::default();
        for seed in 0..5 {
            let scene = generate_scene(seed, &cfg).unwrap();
            for cv in norm_cv_profile(&scene.features).unwrap() {
                assert!(cv <= 0.15, "cv {cv}");
            }
        }
    }

    #[test]
    fn shell_bound_anchors() {
        assert_eq!(shell_thickness_bound(64, 0.0, 0.5).unwrap(), 0.0);
        let b = shell_thickness_bound(64, 1e-5, 0.5).unwrap();
        assert!((b - 8e-5).abs() < 1e-18);
        assert!(shell_thickness_bound(64, 1e-5, 0.0).is_err());
    }

    #[test]
    fn shell_bound_holds_empirically() {
        let mut rng = rng_from_seed(11);
        let (n, d) = (2000, 64);
        let data: Vec<f64> = (0..n * d)
            .map(|_| 1.5 * rng.sample::<f64, _>(StandardNormal) + 0.3)
            .collect();
        let tokens = Tensor::from_vec(n, d, data).unwrap();
        let outside = shell_outside_fraction(&tokens, 1e-5, 0.5, 2.0).unwrap();
        assert!(outside < 0.01, "{outside} of tokens left the shell");
    }

    #[test]
    fn lipschitz_probe_anchors() {
        let identity = |z: &Tensor| Ok(vec![z.clone()]);
        let pairs: Vec<(Tensor, Tensor)> = (0..5)
            .map(|i| {
                let a = Tensor::from_vec(1, 2, vec![i as f64, 1.0]).unwrap();
                let b = Tensor::from_vec(1, 2, vec![i as f64 + 0.1, 0.9]).unwrap();
                (a, b)
            })
            .collect();
        let est = lipschitz_probe(identity, &pairs).unwrap();
        assert!((est - 1.0).abs() < 1e-9);

        let zero = |z: &Tensor| Ok(vec![Tensor::zeros(z.rows(), z.cols())]);
        assert_eq!(lipschitz_probe(zero, &pairs).unwrap(), 0.0);

        // diag(3, 1): spectral norm 3, met along e1
        let m = Tensor::from_vec(2, 2, vec![3.0, 0.0, 0.0, 1.0]).unwrap();
        let linear = move |z: &Tensor| Ok(vec![z.matmul(&m)?]);
        let mut pairs: Vec<(Tensor, Tensor)> = (0..20)
            .map(|i| {
                let th = i as f64 * 0.3;
                let a = Tensor::from_vec(1, 2, vec![th.cos(), th.sin()]).unwrap();
                (a, Tensor::zeros(1, 2))
            })
            .collect();
        pairs.push((
            Tensor::from_vec(1, 2, vec![1.0, 0.0]).unwrap(),
            Tensor::zeros(1, 2),
        ));
        let est = lipschitz_probe(linear, &pairs).unwrap();
        assert!(est <= 3.0 + 1e-12 && est > 2.999, "estimate {est}");

        let same = vec![(Tensor::zeros(1, 2), Tensor::zeros(1, 2))];
        assert!(lipschitz_probe(identity, &same).is_err());
    }

    #[test]
    fn spearman_anchors() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let up = [10.0, 20.0, 25.0, 100.0];
        assert!((spearman(&a, &up).unwrap() - 1.0).abs() < 1e-12);
        let down: Vec<f64> = a.iter().map(|v| -v).collect();
        assert!((spearman(&a, &down).unwrap() + 1.0).abs() < 1e-12);

        let x = [1.0, 2.0, 3.0];
        let y = [3.0, 1.0, 2.0];
        assert!((spearman(&x, &y).unwrap() + 0.5).abs() < 1e-12);

        let c = [2.0, 2.0, 2.0];
        assert!(matches!(
            spearman(&x, &c),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn spearman_tie_handling_is_average_rank() {
        // a has a tie; ranks (1.5, 1.5, 3, 4)
        let a = [5.0, 5.0, 7.0, 9.0];
        let b = [1.0, 2.0, 3.0, 4.0];
        let rho = spearman(&a, &b).unwrap();
        // hand computation: ranks b = (1,2,3,4); cov = 2.5/..., rho = 5/sqrt(5*5)... direct:
        // ra = (1.5,1.5,3,4), mean 2.5; rb mean 2.5
        // cov = (-1)(-1.5)+(-1)(-0.5)+(0.5)(0.5)+(1.5)(1.5) = 1.5+0.5+0.25+2.25 = 4.5
        // va = 1+1+0.25+2.25 = 4.5 ; vb = 2.25+0.25+0.25+2.25 = 5
        let expected = 4.5 / (4.5f64 * 5.0).sqrt();
        assert!((rho - expected).abs() < 1e-12);
    }

    #[test]
    fn mutual_information_properties() {
        let mut rng = rng_from_seed(23);
        let n = 10_000;
        let a: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let null = mutual_information(&a, &b, 8).unwrap();
        assert!((0.0..0.05).contains(&null), "null MI {null}");

        let ab = mutual_information(&a, &b, 8).unwrap();
        let ba = mutual_information(&b, &a, 8).unwrap();
        assert!((ab - ba).abs() < 1e-12);

        let n = 800;
        let a: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let perfect = mutual_information(&a, &a, 8).unwrap();
        assert!((perfect - (8.0f64).ln()).abs() < 1e-12, "{perfect}");

        assert!(mutual_information(&a[..50], &a[..50], 8).is_err());
        let c = vec![1.0; 800];
        assert!(matches!(
            mutual_information(&a, &c, 8),
            Err(Error::DegenerateInput(_))
        ));
    }

    fn tiny_model() -> (Model, Dataset) {
        let dcfg = DataConfig {
            layer_dims: vec![32, 32],
            layer_radii: vec![1.0, 1.5],
            tokens: 8,
            depth_resolution: 8,
            ..DataConfig::default()
        };
        let ecfg = EncoderConfig {
            layer_dims: vec![32, 32],
            tokens: 8,
            hidden: 32,
            n_layers: 1,
            n_heads: 2,
            registers: None,
            bottleneck: Bottleneck::Spherical {
                n_spheres: 4,
                sphere_dim: 8,
            },
            kappa_init: 30.0,
            learned_positions: false,
            ln_eps: 1e-5,
        };
        let dataset = Dataset::new(150, dcfg, 31).unwrap();
        let model = Model::new(ecfg, 7).unwrap();
        (model, dataset)
    }

    #[test]
    fn specialization_report_shape_on_untrained_model() {
        let (model, dataset) = tiny_model();
        let indices: Vec<usize> = (0..100).collect();
        let rep = sphere_specialization(&model, &dataset, &indices).unwrap();
        assert_eq!(rep.spearman_abs.len(), 4);
        assert_eq!(rep.mutual_info.len(), 4);
        assert_eq!(rep.task_names.len(), 5);
        for row in &rep.spearman_abs {
            assert_eq!(row.len(), 5);
            for &v in row {
                assert!((0.0..=1.0).contains(&v));
            }
        }
        for row in &rep.mutual_info {
            for &v in row {
                assert!(v >= 0.0);
            }
        }
    }

    #[test]
    fn probe_learns_constant_target() {
        let mut rng = rng_from_seed(3);
        let n = 40;
        let latents: Vec<Tensor> = (0..n)
            .map(|_| {
                Tensor::from_vec(1, 8, (0..8).map(|_| rng.sample(StandardNormal)).collect())
                    .unwrap()
            })
            .collect();
        let maps: Vec<Tensor> = (0..n)
            .map(|_| {
                let mut t = Tensor::zeros(2, 2);
                for v in t.data_mut() {
                    *v = 2.0;
                }
                t
            })
            .collect();
        let cfg = ProbeConfig {
            hidden: 16,
            steps: 400,
            lr: 1e-2,
            ..ProbeConfig::default()
        };
        let m = probe_latents(&latents, &maps, &cfg).unwrap();
        assert!(
            m.abs_rel < 0.01,
            "held-out AbsRel {}, train AbsRel {}, final train loss {}",
            m.abs_rel,
            m.train_abs_rel,
            m.final_train_loss
        );
        assert!(m.train_abs_rel < 0.01, "train AbsRel {}", m.train_abs_rel);
    }

    #[test]
    fn probe_budget_is_enforced() {
        let latents: Vec<Tensor> = (0..12).map(|_| Tensor::zeros(1, 600)).collect();
        let maps: Vec<Tensor> = (0..12).map(|_| Tensor::from_vec(2, 2, vec![1.0; 4]).unwrap()).collect();
        let cfg = ProbeConfig {
            hidden: 1000,
            steps: 1,
            lr: 1e-2,
            ..ProbeConfig::default()
        };
        assert!(probe_latents(&latents, &maps, &cfg).is_err());
    }

    #[test]
    fn slerp_sweep_endpoints_and_unit_parts() {
        let (model, dataset) = tiny_model();
        let a = dataset.scene(0);
        let b = dataset.scene(1);
        let sweep = slerp_sweep(&model, &a, &b, 6).unwrap();
        assert_eq!(sweep.ts.len(), 7);

        // endpoints must match the non-interpolated reconstructions exactly
        let la = scene_mean_latent(&model, &a).unwrap();
        let direct = decode_latent(&model, &la).unwrap();
        for (s, d) in sweep.recons[0].iter().zip(&direct) {
            assert_eq!(s.data(), d.data());
        }

        for z in &sweep.latents {
            for r in 0..z.rows() {
                for chunk in z.row(r).chunks(8) {
                    let norm = crate::util::norm2(chunk);
                    assert!((norm - 1.0).abs() < 1e-6, "part norm {norm}");
                }
            }
        }
        assert!(sweep.smoothness_ratio >= 1.0);
    }

    #[test]
    fn slerp_sweep_identical_scenes_is_constant() {
        let (model, dataset) = tiny_model();
        let a = dataset.scene(2);
        let sweep = slerp_sweep(&model, &a, &a, 4).unwrap();
        for d in &sweep.adjacent_distances {
            assert_eq!(*d, 0.0);
        }
        assert_eq!(sweep.smoothness_ratio, 1.0);
    }
}
