//! Deterministic training loop over synthetic scenes, ridge-probe
//! evaluation on the depth and pose tasks, and the bottleneck ablation
//! harness.
//!
//! Each batch builds one graph per scene (workers own their graphs), sums
//! gradients in fixed scene order, clips at a global-norm cap, and applies
//! a single-writer optimizer step. Identical (seed, config) replays the
//! metric history exactly at any thread count.

use std::path::{Path, PathBuf};

use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::losses::{
    feature_recon_terms, gaussian_kl, gram_loss, norm_preservation_loss, spherical_kl,
    total_loss, variance_preservation_loss, LossReport, LossWeights,
};
use crate::nn::{Bottleneck, BottleneckVars, EncoderConfig, Model};
use crate::opt::{clip_global_norm, optimizer_step, OptimizerConfig, OptimizerState};
use crate::rng::{derive_seed, rng_from_seed, sub_rng};
use crate::synthetic::{Dataset, Split, SyntheticScene};
use crate::tensor::Tensor;
use crate::util::{mean, parallel_map, ridge_regression_multi};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

const BATCH_TAG: u64 = 0x62617463;
const RSAMPLE_TAG: u64 = 0x72736d70;

/// Loop budget and cadences. Zero cadences mean "once at the end".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub eval_every: usize,
    #[serde(default)]
    pub checkpoint_every: usize,
    /// Upper edge of the concentration audit interval (0, cap).
    #[serde(default = "default_kappa_cap")]
    pub kappa_cap: f64,
    #[serde(default)]
    pub eval: EvalConfig,
}

fn default_batch_size() -> usize {
    16
}
fn default_kappa_cap() -> f64 {
    1e4
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            batch_size: default_batch_size(),
            eval_every: 0,
            checkpoint_every: 0,
            kappa_cap: default_kappa_cap(),
            eval: EvalConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::ConfigError("steps must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::ConfigError("batch_size must be >= 1".into()));
        }
        if !(self.kappa_cap > 0.0) {
            return Err(Error::ConfigError("kappa_cap must be positive".into()));
        }
        self.eval.validate()
    }
}

/// Evaluation budget: probe fitting uses train-split scenes, metrics use
/// the requested split. `max_scenes == 0` disables evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(default = "default_max_scenes")]
    pub max_scenes: usize,
    #[serde(default = "default_probe_scenes")]
    pub probe_scenes: usize,
    #[serde(default = "default_ridge_lambda")]
    pub ridge_lambda: f64,
}

fn default_max_scenes() -> usize {
    64
}
fn default_probe_scenes() -> usize {
    200
}
fn default_ridge_lambda() -> f64 {
    1e-2
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            max_scenes: default_max_scenes(),
            probe_scenes: default_probe_scenes(),
            ridge_lambda: default_ridge_lambda(),
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ridge_lambda > 0.0) {
            return Err(Error::ConfigError("ridge_lambda must be positive".into()));
        }
        Ok(())
    }
}

/// One optimizer step's log line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    /// Pre-clip global gradient norm.
    pub grad_norm: f64,
    /// Reconstruction component: weighted MSE + weighted cosine distance.
    pub recon: f64,
    pub kappa_min: Option<f64>,
    pub kappa_max: Option<f64>,
    pub report: LossReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: usize,
    pub split: Split,
    pub metrics: EvalMetrics,
}

/// Synthetic-task evaluation record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub abs_rel: f64,
    pub delta1: f64,
    pub sq_rel: f64,
    pub rmse_log: f64,
    /// Translation error after removing the mean offset.
    pub ate: f64,
    /// Mean per-token cosine similarity of eval-mode reconstructions.
    pub feature_cos: f64,
}

/// Everything a run produced: step history, eval records, checkpoint
/// paths, and the concentration audit summary.
#[derive(Debug, Serialize)]
pub struct TrainRun {
    pub seed: u64,
    pub history: Vec<StepRecord>,
    pub evals: Vec<EvalRecord>,
    pub checkpoints: Vec<PathBuf>,
    /// Per-scene gradient norms of the concentration head, for the
    /// instability probe; empty for Gaussian bottlenecks.
    pub kappa_grad_norms: Vec<f64>,
    /// True when every step kept kappa inside (0, kappa_cap).
    pub kappa_audit_ok: bool,
}

impl TrainRun {
    pub fn initial_recon(&self) -> Option<f64> {
        self.history.first().map(|r| r.recon)
    }

    pub fn final_recon(&self) -> Option<f64> {
        self.history.last().map(|r| r.recon)
    }
}

struct SceneOutcome {
    grads: Vec<Tensor>,
    report: LossReport,
    kappa: Option<(f64, f64)>,
}

fn tensor_min_max(t: &Tensor) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in t.data() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (lo, hi)
}

/// Forward, loss, and backward for one scene on a private graph. Returns
/// parameter gradients in store order.
fn scene_pass(
    model: &Model,
    scene: &SyntheticScene,
    weights: &LossWeights,
    step: usize,
    sample_seed: u64,
) -> Result<SceneOutcome> {
    let mut g = Graph::new();
    let vars = model.param_vars(&mut g);
    let bn = model.encode(&mut g, &vars, &scene.features.layers)?;

    let mut rng = rng_from_seed(sample_seed);
    let (z, kl, kappa) = match &bn {
        BottleneckVars::Spherical { mu, kappa } => {
            let spec = model
                .config()
                .bottleneck
                .spec()
                .expect("spherical bottleneck has a spec");
            if !g.value(*mu).is_finite() || !g.value(*kappa).is_finite() {
                return Err(Error::NonFiniteLoss {
                    step,
                    term: "encoder".into(),
                });
            }
            let stats = tensor_min_max(g.value(*kappa));
            let z = g.product_rsample(*mu, *kappa, spec.sphere_dim(), &mut rng)?;
            let kl = spherical_kl(&mut g, *kappa, spec.sphere_dim())?;
            (z, kl, Some(stats))
        }
        BottleneckVars::Gaussian { mu, log_var } => {
            if !g.value(*mu).is_finite() || !g.value(*log_var).is_finite() {
                return Err(Error::NonFiniteLoss {
                    step,
                    term: "encoder".into(),
                });
            }
            let (r, c) = (g.value(*mu).rows(), g.value(*mu).cols());
            let noise = Tensor::from_vec(
                r,
                c,
                (0..r * c)
                    .map(|_| rng.sample::<f64, _>(StandardNormal))
                    .collect(),
            )?;
            let z = g.gaussian_rsample(*mu, *log_var, noise)?;
            let kl = gaussian_kl(&mut g, *mu, *log_var)?;
            (z, kl, None)
        }
    };

    let xhat = model.decode(&mut g, &vars, z)?;
    for &v in &xhat {
        if !g.value(v).is_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                term: "decoder".into(),
            });
        }
    }
    let x: Vec<_> = scene
        .features
        .layers
        .iter()
        .map(|t| g.leaf(t.clone()))
        .collect();

    let (mse, cosd) = feature_recon_terms(&mut g, &x, &xhat)?;
    let gram = gram_loss(&mut g, &x, &xhat)?;
    let varp = variance_preservation_loss(&mut g, &x, &xhat)?;
    let normp = norm_preservation_loss(&mut g, &x, &xhat)?;
    let terms = [
        ("recon_mse", mse, weights.w_mse),
        ("recon_cos", cosd, weights.w_sim),
        ("gram", gram, weights.w_gram),
        ("var_pres", varp, weights.w_var),
        ("norm_pres", normp, weights.w_norm),
        ("kl", kl, weights.w_kl),
    ];
    for &(name, var, _) in &terms {
        if !g.value(var).item()?.is_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                term: name.into(),
            });
        }
    }
    let (total, report) = total_loss(&mut g, &terms)?;
    let mut grads = g.backward(total)?;
    let grad_tensors = vars
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            grads.take(v).unwrap_or_else(|| {
                let p = &model.store().tensors()[i];
                Tensor::zeros(p.rows(), p.cols())
            })
        })
        .collect();
    Ok(SceneOutcome {
        grads: grad_tensors,
        report,
        kappa,
    })
}

fn average_reports(reports: &[LossReport]) -> LossReport {
    let n = reports.len() as f64;
    let mut terms = reports[0].terms.clone();
    for t in &mut terms {
        t.value = 0.0;
    }
    let mut total = 0.0;
    for r in reports {
        for (acc, t) in terms.iter_mut().zip(&r.terms) {
            acc.value += t.value / n;
        }
        total += r.total / n;
    }
    LossReport { terms, total }
}

fn recon_component(report: &LossReport) -> f64 {
    ["recon_mse", "recon_cos"]
        .iter()
        .filter_map(|n| report.term(n))
        .map(|t| t.weight * t.value)
        .sum()
}

fn write_checkpoint(model: &Model, dir: &Path, name: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    let tmp = dir.join(format!("{name}.tmp"));
    model.save(&tmp)?;
    std::fs::rename(&tmp, &path)?;
    Ok(path)
}

struct MetricsCsv {
    file: std::io::BufWriter<std::fs::File>,
    wrote_header: bool,
}

impl MetricsCsv {
    fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let file = std::fs::File::create(dir.join("metrics.csv"))?;
        Ok(Self {
            file: std::io::BufWriter::new(file),
            wrote_header: false,
        })
    }

    fn log(&mut self, rec: &StepRecord) -> Result<()> {
        use std::io::Write as _;
        if !self.wrote_header {
            let term_cols: Vec<&str> = rec.report.terms.iter().map(|t| t.name.as_str()).collect();
            writeln!(
                self.file,
                "step,lr,grad_norm,kappa_min,kappa_max,{},total",
                term_cols.join(",")
            )?;
            self.wrote_header = true;
        }
        let kmin = rec.kappa_min.map_or(String::new(), |v| format!("{v:.6e}"));
        let kmax = rec.kappa_max.map_or(String::new(), |v| format!("{v:.6e}"));
        let vals: Vec<String> = rec
            .report
            .terms
            .iter()
            .map(|t| format!("{:.9e}", t.value))
            .collect();
        writeln!(
            self.file,
            "{},{:.9e},{:.9e},{},{},{},{:.9e}",
            rec.step,
            rec.lr,
            rec.grad_norm,
            kmin,
            kmax,
            vals.join(","),
            rec.report.total
        )?;
        Ok(())
    }

    fn flush(&mut self) -> Result<()> {
        use std::io::Write as _;
        self.file.flush()?;
        Ok(())
    }
}

/// Runs the full loop: batch sampling, per-scene passes, fixed-order
/// gradient reduction, clipping, optimizer step, periodic eval and
/// checkpointing. A non-finite loss aborts with the most recent checkpoint
/// left on disk.
pub fn train(
    model: &mut Model,
    dataset: &Dataset,
    weights: &LossWeights,
    opt_cfg: &OptimizerConfig,
    tcfg: &TrainConfig,
    seed: u64,
    out_dir: Option<&Path>,
) -> Result<TrainRun> {
    weights.validate()?;
    tcfg.validate()?;
    let train_idx = dataset.split_indices(Split::Train);
    if train_idx.is_empty() {
        return Err(Error::InsufficientSamples { got: 0, need: 1 });
    }
    let mut state = OptimizerState::new(opt_cfg.clone(), tcfg.steps, model.store())?;
    let kappa_head: Vec<usize> = ["enc.head.scale.w", "enc.head.scale.b"]
        .iter()
        .filter_map(|n| model.store().lookup(n))
        .map(|id| id.0)
        .collect();
    let spherical = matches!(model.config().bottleneck, Bottleneck::Spherical { .. });

    let mut csv = out_dir.map(MetricsCsv::create).transpose()?;
    let mut checkpoints = Vec::new();
    if let Some(dir) = out_dir {
        checkpoints.push(write_checkpoint(model, dir, "checkpoint_last.bin")?);
    }

    let mut history = Vec::with_capacity(tcfg.steps);
    let mut evals = Vec::new();
    let mut kappa_grad_norms = Vec::new();
    let mut kappa_audit_ok = true;

    for step in 0..tcfg.steps {
        let mut brng = sub_rng(seed, &[BATCH_TAG, step as u64]);
        let batch: Vec<usize> = (0..tcfg.batch_size)
            .map(|_| train_idx[brng.gen_range(0..train_idx.len())])
            .collect();

        let outcomes: Vec<Result<SceneOutcome>> = parallel_map(batch.len(), |slot| {
            let scene = dataset.scene(batch[slot]);
            let s = derive_seed(seed, &[RSAMPLE_TAG, step as u64, slot as u64]);
            scene_pass(model, &scene, weights, step, s)
        });
        let outcomes: Vec<SceneOutcome> = outcomes.into_iter().collect::<Result<_>>()?;

        let inv = 1.0 / outcomes.len() as f64;
        let mut grads: Vec<Tensor> = outcomes[0]
            .grads
            .iter()
            .map(|t| {
                let mut z = Tensor::zeros(t.rows(), t.cols());
                z.add_scaled(t, inv).expect("same shape");
                z
            })
            .collect();
        for o in &outcomes[1..] {
            for (acc, t) in grads.iter_mut().zip(&o.grads) {
                acc.add_scaled(t, inv)?;
            }
        }
        if spherical {
            for o in &outcomes {
                let sq: f64 = kappa_head
                    .iter()
                    .map(|&i| o.grads[i].data().iter().map(|v| v * v).sum::<f64>())
                    .sum();
                kappa_grad_norms.push(sq.sqrt());
            }
        }

        let reports: Vec<LossReport> = outcomes.iter().map(|o| o.report.clone()).collect();
        let report = average_reports(&reports);
        if !report.total.is_finite() {
            let term = report
                .terms
                .iter()
                .find(|t| !t.value.is_finite())
                .map_or("total".to_string(), |t| t.name.clone());
            if let Some(c) = csv.as_mut() {
                c.flush()?;
            }
            return Err(Error::NonFiniteLoss { step, term });
        }
        let kappa = outcomes
            .iter()
            .filter_map(|o| o.kappa)
            .reduce(|a, b| (a.0.min(b.0), a.1.max(b.1)));
        if let Some((kmin, kmax)) = kappa {
            if !(kmin > 0.0 && kmax < tcfg.kappa_cap) {
                kappa_audit_ok = false;
            }
        }

        let grad_norm = clip_global_norm(&mut grads, opt_cfg.clip_norm);
        let lr = optimizer_step(&mut state, model.store_mut(), &grads)?;

        let rec = StepRecord {
            step,
            lr,
            grad_norm,
            recon: recon_component(&report),
            kappa_min: kappa.map(|k| k.0),
            kappa_max: kappa.map(|k| k.1),
            report,
        };
        if let Some(c) = csv.as_mut() {
            c.log(&rec)?;
        }
        history.push(rec);

        let last = step + 1 == tcfg.steps;
        if tcfg.eval.max_scenes > 0
            && (last || (tcfg.eval_every > 0 && (step + 1) % tcfg.eval_every == 0))
        {
            let metrics = evaluate(model, dataset, Split::Val, &tcfg.eval)?;
            evals.push(EvalRecord {
                step,
                split: Split::Val,
                metrics,
            });
        }
        if let Some(dir) = out_dir {
            if last || (tcfg.checkpoint_every > 0 && (step + 1) % tcfg.checkpoint_every == 0) {
                checkpoints.push(write_checkpoint(model, dir, "checkpoint_last.bin")?);
            }
        }
    }
    if let Some(c) = csv.as_mut() {
        c.flush()?;
    }
    checkpoints.dedup();
    Ok(TrainRun {
        seed,
        history,
        evals,
        checkpoints,
        kappa_grad_norms,
        kappa_audit_ok,
    })
}

/// Eval-mode latent (mean directions / mean) for one scene, rows = latent
/// tokens.
pub fn scene_mean_latent(model: &Model, scene: &SyntheticScene) -> Result<Tensor> {
    let mut g = Graph::new();
    let vars = model.param_vars(&mut g);
    let bn = model.encode(&mut g, &vars, &scene.features.layers)?;
    Ok(g.value(bn.mean_latent()).clone())
}

/// Sampled latent for one scene under the trained posterior, rows = latent
/// tokens.
pub fn scene_sampled_latent(model: &Model, scene: &SyntheticScene, seed: u64) -> Result<Tensor> {
    let mut g = Graph::new();
    let vars = model.param_vars(&mut g);
    let bn = model.encode(&mut g, &vars, &scene.features.layers)?;
    let mut rng = rng_from_seed(seed);
    let z = match &bn {
        BottleneckVars::Spherical { mu, kappa } => {
            let spec = model
                .config()
                .bottleneck
                .spec()
                .expect("spherical bottleneck has a spec");
            g.product_rsample(*mu, *kappa, spec.sphere_dim(), &mut rng)?
        }
        BottleneckVars::Gaussian { mu, log_var } => {
            let (r, c) = (g.value(*mu).rows(), g.value(*mu).cols());
            let noise = Tensor::from_vec(
                r,
                c,
                (0..r * c)
                    .map(|_| rng.sample::<f64, _>(StandardNormal))
                    .collect(),
            )?;
            g.gaussian_rsample(*mu, *log_var, noise)?
        }
    };
    Ok(g.value(z).clone())
}

/// Eval-mode reconstruction quality: mean per-token cosine similarity
/// between decoded and original features, averaged over layers.
pub fn scene_recon_cosine(model: &Model, scene: &SyntheticScene) -> Result<f64> {
    let mut g = Graph::new();
    let vars = model.param_vars(&mut g);
    let bn = model.encode(&mut g, &vars, &scene.features.layers)?;
    let z = bn.mean_latent();
    let xhat = model.decode(&mut g, &vars, z)?;
    let mut acc = 0.0;
    let mut count = 0usize;
    for (&v, x) in xhat.iter().zip(&scene.features.layers) {
        let rec = g.value(v);
        for r in 0..x.rows() {
            let xr = x.row(r);
            let hr = rec.row(r);
            let nx = crate::util::norm2(xr);
            let nh = crate::util::norm2(hr);
            if nx > 0.0 && nh > 0.0 {
                acc += crate::util::dot(xr, hr) / (nx * nh);
            }
            count += 1;
        }
    }
    Ok(acc / count as f64)
}

/// Pixelwise depth metrics; both inputs must be strictly positive.
pub struct DepthErrors {
    pub abs_rel: f64,
    pub delta1: f64,
    pub sq_rel: f64,
    pub rmse_log: f64,
}

pub fn depth_metrics(dhat: &[f64], d: &[f64]) -> Result<DepthErrors> {
    if dhat.len() != d.len() || d.is_empty() {
        return Err(Error::DimensionMismatch {
            expected: d.len(),
            got: dhat.len(),
        });
    }
    let n = d.len() as f64;
    let (mut abs_rel, mut delta1, mut sq_rel, mut log_sq) = (0.0, 0.0, 0.0, 0.0);
    for (&p, &t) in dhat.iter().zip(d) {
        if !(p > 0.0 && t > 0.0) {
            return Err(Error::Domain {
                what: "depth",
                value: if p > 0.0 { t } else { p },
                constraint: "> 0",
            });
        }
        abs_rel += (p - t).abs() / t;
        sq_rel += (p - t) * (p - t) / t;
        if (p / t).max(t / p) < 1.25 {
            delta1 += 1.0;
        }
        let dl = p.ln() - t.ln();
        log_sq += dl * dl;
    }
    Ok(DepthErrors {
        abs_rel: abs_rel / n,
        delta1: delta1 / n,
        sq_rel: sq_rel / n,
        rmse_log: (log_sq / n).sqrt(),
    })
}

/// Mean translation error after subtracting the mean offset between
/// predictions and ground truth.
pub fn translation_ate(pred: &[[f64; 3]], gt: &[[f64; 3]]) -> Result<f64> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(Error::DimensionMismatch {
            expected: gt.len(),
            got: pred.len(),
        });
    }
    let n = pred.len() as f64;
    let mut offset = [0.0; 3];
    for (p, t) in pred.iter().zip(gt) {
        for a in 0..3 {
            offset[a] += (p[a] - t[a]) / n;
        }
    }
    let mut acc = 0.0;
    for (p, t) in pred.iter().zip(gt) {
        let mut sq = 0.0;
        for a in 0..3 {
            let e = p[a] - t[a] - offset[a];
            sq += e * e;
        }
        acc += sq.sqrt();
    }
    Ok(acc / n)
}

fn flat_latent_row(latent: &Tensor) -> Vec<f64> {
    let mut row = latent.data().to_vec();
    row.push(1.0);
    row
}

/// Ridge task probes on flattened eval-mode latents: depth is predicted in
/// log space (per pixel), pose directly. Probes are fitted on train-split
/// scenes, metrics computed on `split`.
pub fn evaluate(
    model: &Model,
    dataset: &Dataset,
    split: Split,
    ecfg: &EvalConfig,
) -> Result<EvalMetrics> {
    ecfg.validate()?;
    let probe_idx: Vec<usize> = dataset
        .split_indices(Split::Train)
        .into_iter()
        .take(ecfg.probe_scenes)
        .collect();
    let eval_idx: Vec<usize> = dataset
        .split_indices(split)
        .into_iter()
        .take(ecfg.max_scenes)
        .collect();
    if probe_idx.len() < 8 {
        return Err(Error::InsufficientSamples {
            got: probe_idx.len(),
            need: 8,
        });
    }
    if eval_idx.is_empty() {
        return Err(Error::InsufficientSamples { got: 0, need: 1 });
    }

    let latent_dim = model.config().latent_tokens() * model.config().bottleneck.latent_dim();
    let p = dataset.config().depth_resolution;

    let probe_rows = parallel_map(probe_idx.len(), |i| -> Result<(Vec<f64>, Vec<f64>, [f64; 7])> {
        let scene = dataset.scene(probe_idx[i]);
        let latent = scene_mean_latent(model, &scene)?;
        let depth_log: Vec<f64> = scene.depth_map.data().iter().map(|d| d.ln()).collect();
        Ok((flat_latent_row(&latent), depth_log, scene.pose))
    });
    let mut xs = Tensor::zeros(probe_idx.len(), latent_dim + 1);
    let mut y_depth = Tensor::zeros(probe_idx.len(), p * p);
    let mut y_pose = Tensor::zeros(probe_idx.len(), 7);
    for (i, row) in probe_rows.into_iter().enumerate() {
        let (x, dl, pose) = row?;
        xs.row_mut(i).copy_from_slice(&x);
        y_depth.row_mut(i).copy_from_slice(&dl);
        y_pose.row_mut(i).copy_from_slice(&pose);
    }
    let w_depth = ridge_regression_multi(&xs, &y_depth, ecfg.ridge_lambda)?;
    let w_pose = ridge_regression_multi(&xs, &y_pose, ecfg.ridge_lambda)?;

    let eval_rows = parallel_map(eval_idx.len(), |i| -> Result<(DepthErrors, [f64; 3], [f64; 3], f64)> {
        let scene = dataset.scene(eval_idx[i]);
        let latent = scene_mean_latent(model, &scene)?;
        let x = Tensor::from_vec(1, latent_dim + 1, flat_latent_row(&latent))?;
        let dhat: Vec<f64> = x.matmul(&w_depth)?.data().iter().map(|v| v.exp()).collect();
        let errs = depth_metrics(&dhat, scene.depth_map.data())?;
        let pose_hat = x.matmul(&w_pose)?;
        let t_pred = [pose_hat.get(0, 0), pose_hat.get(0, 1), pose_hat.get(0, 2)];
        let t_gt = [scene.pose[0], scene.pose[1], scene.pose[2]];
        let cos = scene_recon_cosine(model, &scene)?;
        Ok((errs, t_pred, t_gt, cos))
    });
    let mut abs_rel = Vec::new();
    let mut delta1 = Vec::new();
    let mut sq_rel = Vec::new();
    let mut rmse_log = Vec::new();
    let mut t_pred = Vec::new();
    let mut t_gt = Vec::new();
    let mut cos = Vec::new();
    for row in eval_rows {
        let (e, tp, tg, c) = row?;
        abs_rel.push(e.abs_rel);
        delta1.push(e.delta1);
        sq_rel.push(e.sq_rel);
        rmse_log.push(e.rmse_log);
        t_pred.push(tp);
        t_gt.push(tg);
        cos.push(c);
    }
    Ok(EvalMetrics {
        abs_rel: mean(&abs_rel),
        delta1: mean(&delta1),
        sq_rel: mean(&sq_rel),
        rmse_log: mean(&rmse_log),
        ate: translation_ate(&t_pred, &t_gt)?,
        feature_cos: mean(&cos),
    })
}

/// One row of the bottleneck comparison.
#[derive(Debug, Serialize)]
pub struct AblationArm {
    pub name: String,
    pub bottleneck: Bottleneck,
    pub metrics: Option<EvalMetrics>,
    pub final_recon: Option<f64>,
    pub kappa_audit_ok: bool,
    /// Variance of per-scene concentration-head gradient norms; None for
    /// arms without a concentration head.
    pub kappa_grad_variance: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct AblationTable {
    pub arms: Vec<AblationArm>,
}

impl AblationTable {
    pub fn arm(&self, name: &str) -> Option<&AblationArm> {
        self.arms.iter().find(|a| a.name == name)
    }
}

/// Trains the product-of-spheres, Gaussian, and single-sphere arms under
/// matched seed/budget and evaluates each on the validation split. A
/// failing arm is recorded and the others continue.
pub fn run_ablation(
    base: &EncoderConfig,
    dataset: &Dataset,
    weights: &LossWeights,
    opt_cfg: &OptimizerConfig,
    tcfg: &TrainConfig,
    seed: u64,
    out_dir: Option<&Path>,
) -> Result<AblationTable> {
    let (n_spheres, sphere_dim) = match base.bottleneck {
        Bottleneck::Spherical {
            n_spheres,
            sphere_dim,
        } => (n_spheres, sphere_dim),
        Bottleneck::Gaussian { .. } => {
            return Err(Error::ConfigError(
                "ablation base config must use the spherical bottleneck".into(),
            ))
        }
    };
    let latent = n_spheres * sphere_dim;
    let arms: Vec<(&str, Bottleneck)> = vec![
        (
            "product",
            Bottleneck::Spherical {
                n_spheres,
                sphere_dim,
            },
        ),
        ("gaussian", Bottleneck::Gaussian { dim: latent }),
        (
            "single_sphere",
            Bottleneck::Spherical {
                n_spheres: 1,
                sphere_dim: latent,
            },
        ),
    ];

    let mut rows = Vec::with_capacity(arms.len());
    for (name, bottleneck) in arms {
        let mut cfg = base.clone();
        cfg.bottleneck = bottleneck.clone();
        let arm_dir = out_dir.map(|d| d.join(name));
        let outcome = (|| -> Result<(TrainRun, EvalMetrics)> {
            let mut model = Model::new(cfg.clone(), seed)?;
            let run = train(
                &mut model,
                dataset,
                weights,
                opt_cfg,
                tcfg,
                seed,
                arm_dir.as_deref(),
            )?;
            let metrics = evaluate(&model, dataset, Split::Val, &tcfg.eval)?;
            Ok((run, metrics))
        })();
        rows.push(match outcome {
            Ok((run, metrics)) => AblationArm {
                name: name.to_string(),
                bottleneck,
                metrics: Some(metrics),
                final_recon: run.final_recon(),
                kappa_audit_ok: run.kappa_audit_ok,
                kappa_grad_variance: if run.kappa_grad_norms.is_empty() {
                    None
                } else {
                    Some(crate::util::variance_population(&run.kappa_grad_norms))
                },
                error: None,
            },
            Err(e) => AblationArm {
                name: name.to_string(),
                bottleneck,
                metrics: None,
                final_recon: None,
                kappa_audit_ok: false,
                kappa_grad_variance: None,
                error: Some(e.to_string()),
            },
        });
    }
    Ok(AblationTable { arms: rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::DataConfig;

    fn smoke_data_config() -> DataConfig {
        DataConfig {
            layer_dims: vec![64, 64],
            layer_radii: vec![1.0, 1.5],
            tokens: 16,
            depth_resolution: 8,
            ..DataConfig::default()
        }
    }

    fn smoke_encoder_config() -> EncoderConfig {
        EncoderConfig {
            layer_dims: vec![64, 64],
            tokens: 16,
            hidden: 64,
            n_layers: 2,
            n_heads: 4,
            registers: None,
            bottleneck: Bottleneck::Spherical {
                n_spheres: 4,
                sphere_dim: 8,
            },
            kappa_init: 30.0,
            learned_positions: false,
            ln_eps: 1e-5,
        }
    }

    fn tiny_train_config(steps: usize, batch: usize) -> TrainConfig {
        TrainConfig {
            steps,
            batch_size: batch,
            eval_every: 0,
            checkpoint_every: 0,
            kappa_cap: 1e4,
            eval: EvalConfig {
                max_scenes: 0,
                probe_scenes: 16,
                ridge_lambda: 1e-2,
            },
        }
    }

    #[test]
    fn depth_metric_anchors() {
        let d = vec![1.0, 2.0, 4.0];
        let same = depth_metrics(&d, &d).unwrap();
        assert_eq!(same.abs_rel, 0.0);
        assert_eq!(same.delta1, 1.0);
        assert_eq!(same.sq_rel, 0.0);
        assert_eq!(same.rmse_log, 0.0);

        let over: Vec<f64> = d.iter().map(|v| 1.3 * v).collect();
        let m = depth_metrics(&over, &d).unwrap();
        assert!((m.abs_rel - 0.3).abs() < 1e-12);
        assert_eq!(m.delta1, 0.0);

        let near: Vec<f64> = d.iter().map(|v| 1.2 * v).collect();
        let m = depth_metrics(&near, &d).unwrap();
        assert_eq!(m.delta1, 1.0);
    }

    #[test]
    fn ate_removes_constant_offset() {
        let gt = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 2.0, 0.0]];
        let shifted: Vec<[f64; 3]> = gt.iter().map(|t| [t[0] + 0.5, t[1] - 1.0, t[2]]).collect();
        assert!(translation_ate(&shifted, &gt).unwrap() < 1e-12);

        let noisy = vec![[0.1, 0.0, 0.0], [1.0, 0.1, 0.0], [0.0, 2.0, 0.1]];
        assert!(translation_ate(&noisy, &gt).unwrap() > 0.05);
    }

    #[test]
    fn smoke_training_halves_reconstruction_loss() {
        let dcfg = smoke_data_config();
        let dataset = Dataset::new(64, dcfg, 41).unwrap();
        let mut model = Model::new(smoke_encoder_config(), 42).unwrap();
        let weights = LossWeights::default();
        let opt = OptimizerConfig {
            peak_lr: 3e-4,
            ..OptimizerConfig::default()
        };
        let tcfg = tiny_train_config(200, 8);
        let run = train(&mut model, &dataset, &weights, &opt, &tcfg, 7, None).unwrap();

        let initial = run.initial_recon().unwrap();
        let final_ = run.final_recon().unwrap();
        assert!(
            final_ <= 0.5 * initial,
            "recon {initial:.4} -> {final_:.4} did not halve"
        );
        assert!(run.kappa_audit_ok, "kappa left (0, cap) during smoke run");
        for rec in &run.history {
            assert!(
                (rec.report.total - rec.report.weighted_sum()).abs() <= 1e-9,
                "total drifted from weighted sum at step {}",
                rec.step
            );
        }
        assert_eq!(run.kappa_grad_norms.len(), 200 * 8);
    }

    #[test]
    fn identical_seed_replays_identical_history() {
        let dcfg = smoke_data_config();
        let dataset = Dataset::new(24, dcfg, 51).unwrap();
        let mut cfg = smoke_encoder_config();
        cfg.hidden = 32;
        cfg.n_layers = 1;
        cfg.n_heads = 2;
        let weights = LossWeights::default();
        let opt = OptimizerConfig::default();
        let tcfg = tiny_train_config(6, 3);

        let mut runs = Vec::new();
        let mut params = Vec::new();
        for _ in 0..2 {
            let mut model = Model::new(cfg.clone(), 9).unwrap();
            let run = train(&mut model, &dataset, &weights, &opt, &tcfg, 13, None).unwrap();
            runs.push(run);
            let sum: f64 = model.store().tensors().iter().map(|t| t.sum()).sum();
            params.push(sum);
        }
        let totals: Vec<Vec<f64>> = runs
            .iter()
            .map(|r| r.history.iter().map(|h| h.report.total).collect())
            .collect();
        assert_eq!(totals[0], totals[1]);
        assert_eq!(params[0], params[1]);
        let grads: Vec<Vec<f64>> = runs
            .iter()
            .map(|r| r.history.iter().map(|h| h.grad_norm).collect())
            .collect();
        assert_eq!(grads[0], grads[1]);
    }

    #[test]
    fn checkpoint_roundtrip_evaluation_is_identical() {
        let dcfg = smoke_data_config();
        let dataset = Dataset::new(48, dcfg, 61).unwrap();
        let mut cfg = smoke_encoder_config();
        cfg.hidden = 32;
        cfg.n_layers = 1;
        cfg.n_heads = 2;
        let mut model = Model::new(cfg, 3).unwrap();
        let weights = LossWeights::default();
        let tcfg = tiny_train_config(4, 2);
        train(
            &mut model,
            &dataset,
            &weights,
            &OptimizerConfig::default(),
            &tcfg,
            5,
            None,
        )
        .unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        model.save(&path).unwrap();
        let loaded = Model::load(&path).unwrap();

        let ecfg = EvalConfig {
            max_scenes: 4,
            probe_scenes: 16,
            ridge_lambda: 1e-2,
        };
        let a = evaluate(&model, &dataset, Split::Val, &ecfg).unwrap();
        let b = evaluate(&loaded, &dataset, Split::Val, &ecfg).unwrap();
        assert!((a.abs_rel - b.abs_rel).abs() <= 1e-12);
        assert!((a.delta1 - b.delta1).abs() <= 1e-12);
        assert!((a.sq_rel - b.sq_rel).abs() <= 1e-12);
        assert!((a.rmse_log - b.rmse_log).abs() <= 1e-12);
        assert!((a.ate - b.ate).abs() <= 1e-12);
        assert!((a.feature_cos - b.feature_cos).abs() <= 1e-12);
    }

    #[test]
    fn nonfinite_forward_aborts_and_keeps_last_checkpoint() {
        let dcfg = smoke_data_config();
        let dataset = Dataset::new(24, dcfg, 71).unwrap();
        let mut cfg = smoke_encoder_config();
        cfg.hidden = 32;
        cfg.n_layers = 1;
        cfg.n_heads = 2;
        let mut model = Model::new(cfg, 3).unwrap();
        for v in model.store_mut().tensors_mut()[0].data_mut() {
            *v = f64::NAN;
        }
        let dir = tempfile::tempdir().unwrap();
        let tcfg = tiny_train_config(3, 2);
        let err = train(
            &mut model,
            &dataset,
            &LossWeights::default(),
            &OptimizerConfig::default(),
            &tcfg,
            5,
            Some(dir.path()),
        )
        .unwrap_err();
        match err {
            Error::NonFiniteLoss { step, .. } => assert_eq!(step, 0),
            other => panic!("expected NonFiniteLoss, got {other:?}"),
        }
        assert!(dir.path().join("checkpoint_last.bin").exists());
        assert!(dir.path().join("metrics.csv").exists());
    }

    #[test]
    fn ablation_emits_three_rows_under_matched_budget() {
        let dcfg = smoke_data_config();
        let dataset = Dataset::new(32, dcfg, 81).unwrap();
        let mut cfg = smoke_encoder_config();
        cfg.hidden = 32;
        cfg.n_layers = 1;
        cfg.n_heads = 2;
        let tcfg = TrainConfig {
            steps: 3,
            batch_size: 2,
            eval_every: 0,
            checkpoint_every: 0,
            kappa_cap: 1e4,
            eval: EvalConfig {
                max_scenes: 3,
                probe_scenes: 10,
                ridge_lambda: 1e-2,
            },
        };
        let table = run_ablation(
            &cfg,
            &dataset,
            &LossWeights::default(),
            &OptimizerConfig::default(),
            &tcfg,
            17,
            None,
        )
        .unwrap();
        assert_eq!(table.arms.len(), 3);
        for name in ["product", "gaussian", "single_sphere"] {
            let arm = table.arm(name).unwrap();
            assert!(arm.error.is_none(), "{name}: {:?}", arm.error);
            assert!(arm.metrics.is_some());
        }
        assert!(table.arm("gaussian").unwrap().kappa_grad_variance.is_none());
        assert!(table.arm("product").unwrap().kappa_grad_variance.is_some());
    }
}
