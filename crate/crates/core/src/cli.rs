//! Command implementations behind the `hsvae` binary. Each command
//! takes a resolved [`RunConfig`], writes artifacts only under its
//! output directory, and returns a serializable report so integration
//! tests can drive everything in-process.
//!
//! Artifact protocol per command: the resolved config is echoed to
//! `config.json` first, outputs accumulate, and an empty `DONE` marker
//! is written last; a directory without the marker holds a partial
//! run.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::config::RunConfig;
use crate::dataio::{write_bars, write_done_marker, write_json, write_pgm, write_xy};
use crate::diagnostics::{
    active_dimensions, norm_cv_profile, probe_latents, shell_outside_fraction,
    sphere_specialization, slerp_sweep, DimensionReport, ProbeConfig, ProbeMetrics,
    SpecializationReport,
};
use crate::error::{Error, Result};
use crate::nn::{Bottleneck, Model};
use crate::oracle::{
    circle_uniformity, log_normalizer_quadrature, mc_divergences, mc_mean_resultant,
};
use crate::power_spherical::{
    entropy, grad_check_rsample, kl_to_uniform, log_normalizer, normalizer_stability,
    LinearFunctional, PowerSphericalParams,
};
use crate::rng::derive_seed;
use crate::special::log_gamma;
use crate::sphere::{project_to_sphere, SpherePoint};
use crate::synthetic::{export_dataset, Dataset, Split, SyntheticScene};
use crate::tensor::Tensor;
use crate::train::{evaluate, run_ablation, train, AblationTable, EvalMetrics, TrainRun};
use crate::util::parallel_map;

const MODEL_TAG: u64 = 0x6d6f646c;
const SELFTEST_SEED: u64 = 0x73656c66;

/// Variance threshold below which a latent dimension counts as
/// collapsed.
pub const ACTIVE_DIM_THRESHOLD: f64 = 0.1;
/// Per-dimension variance floor for the shell check; tokens below it
/// are excluded, matching the bound's hypothesis.
pub const SHELL_SIGMA_MIN: f64 = 1e-4;
/// The shell membership is asserted at twice the analytic thickness
/// bound.
pub const SHELL_SLACK: f64 = 2.0;

// ---------------------------------------------------------------------------
// selftest

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
    pub ms: u128,
}

#[derive(Debug, Clone, Serialize)]
pub struct SelftestReport {
    pub checks: Vec<CheckResult>,
    pub all_pass: bool,
    pub total_ms: u128,
}

/// Distribution-level oracle suite: quadrature vs closed-form
/// normalizer, Monte-Carlo entropy/KL, sampler moments and uniformity,
/// reparameterization gradients, and the log-space stability
/// demonstration.
///
/// `fault` is a test hook that corrupts one named dependency so the
/// suite can prove it notices; `Some("log_gamma")` biases every
/// `log_gamma` call inside the normalizer cross-check.
pub fn run_selftest(fault: Option<&str>) -> Result<SelftestReport> {
    if let Some(f) = fault {
        if f != "log_gamma" {
            return Err(Error::ConfigError(format!(
                "unknown fault '{f}'; supported: log_gamma"
            )));
        }
    }
    let lg_bias = if fault == Some("log_gamma") { 1e-3 } else { 0.0 };
    let start = Instant::now();
    let mut checks = Vec::new();

    let timed = |name: &'static str, f: &mut dyn FnMut() -> Result<(bool, String)>| -> CheckResult {
        let t0 = Instant::now();
        let (pass, detail) = match f() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        CheckResult {
            name,
            pass,
            detail,
            ms: t0.elapsed().as_millis(),
        }
    };

    let grid_d = [2usize, 3, 4, 8];
    let grid_kappa = [0.1f64, 1.0, 10.0, 30.0, 100.0];

    checks.push(timed("normalizer_quadrature", &mut || {
        let mut worst: f64 = 0.0;
        for &d in &grid_d {
            for &kappa in &grid_kappa {
                let quad = log_normalizer_quadrature(d, kappa)?;
                let lib = log_normalizer(d, kappa)?;
                let beta = (d as f64 - 1.0) / 2.0;
                let alpha = kappa + beta;
                let closed = (alpha + beta) * std::f64::consts::LN_2
                    + beta * std::f64::consts::PI.ln()
                    + (log_gamma(alpha)? + lg_bias)
                    - (log_gamma(alpha + beta)? + lg_bias * 1.5);
                let denom = quad.abs().max(1e-12);
                worst = worst
                    .max((lib - quad).abs() / denom)
                    .max((closed - quad).abs() / denom);
            }
        }
        Ok((
            worst <= 1e-6,
            format!(
                "worst rel err {worst:.2e} over {} grid points (tol 1e-6)",
                grid_d.len() * grid_kappa.len()
            ),
        ))
    }));

    checks.push(timed("entropy_kl_mc", &mut || {
        let cases = [(4usize, 5.0f64), (8, 30.0), (16, 100.0)];
        let n = 200_000;
        let mut worst: f64 = 0.0;
        for (i, &(d, kappa)) in cases.iter().enumerate() {
            let p = PowerSphericalParams::new(SpherePoint::north_pole(d)?, kappa)?;
            let mc = mc_divergences(&p, n, derive_seed(SELFTEST_SEED, &[1, i as u64]))?;
            worst = worst
                .max((entropy(&p)? - mc.entropy).abs())
                .max((kl_to_uniform(&p)? - mc.kl_to_uniform).abs());
        }
        Ok((
            worst <= 1e-2,
            format!("worst abs err {worst:.2e} at n={n} (tol 1e-2)"),
        ))
    }));

    checks.push(timed("sampler_moments", &mut || {
        let n = 100_000;
        let mut worst: f64 = 0.0;
        for (i, &d) in grid_d.iter().enumerate() {
            for (j, &kappa) in grid_kappa.iter().enumerate() {
                let p = PowerSphericalParams::new(SpherePoint::north_pole(d)?, kappa)?;
                let che = mc_mean_resultant(&p, n, derive_seed(SELFTEST_SEED, &[2, i as u64, j as u64]))?;
                worst = worst.max(che.sigmas);
            }
        }
        let uni = circle_uniformity(n, 16, derive_seed(SELFTEST_SEED, &[3]))?;
        let pass = worst <= 4.0 && uni.passes();
        Ok((
            pass,
            format!(
                "worst |z| {worst:.2} sigma (cap 4); kappa=0 chi2 {:.1} < {:.1}",
                uni.chi_squared, uni.critical_99
            ),
        ))
    }));

    checks.push(timed("rsample_gradients", &mut || {
        // generic direction: the exact north pole is the Householder
        // fallback's degenerate point where the mu-path is constant
        let mu = project_to_sphere(&[0.6, -0.3, 0.7, 0.25])?;
        let p = PowerSphericalParams::new(mu, 10.0)?;
        let c = LinearFunctional(vec![0.3, -0.5, 0.8, 0.1]);
        let rep = grad_check_rsample(&p, &c, 50_000, 0.05, derive_seed(SELFTEST_SEED, &[4]))?;
        let worst = rep.rel_err_kappa.max(rep.rel_err_mu);
        Ok((
            worst <= 0.02,
            format!(
                "kappa rel err {:.2e}, mu rel err {:.2e} (tol 2e-2)",
                rep.rel_err_kappa, rep.rel_err_mu
            ),
        ))
    }));

    checks.push(timed("log_space_stability", &mut || {
        let s = normalizer_stability(128, 30.0)?;
        let quad = log_normalizer_quadrature(128, 30.0)?;
        let rel = (s.log_space - quad).abs() / quad.abs().max(1e-12);
        let pass = s.log_space.is_finite() && rel <= 1e-8 && !s.linear_f32.is_finite();
        Ok((
            pass,
            format!(
                "log C_128(30) = {:.6} (rel err {rel:.2e}); f32 linear form = {}",
                s.log_space, s.linear_f32
            ),
        ))
    }));

    let all_pass = checks.iter().all(|c| c.pass);
    Ok(SelftestReport {
        checks,
        all_pass,
        total_ms: start.elapsed().as_millis(),
    })
}

impl SelftestReport {
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let tag = if c.pass { "PASS" } else { "FAIL" };
            out.push_str(&format!(
                "[{tag}] {:<24} {}  ({} ms)\n",
                c.name, c.detail, c.ms
            ));
        }
        out.push_str(&format!(
            "{} in {} ms\n",
            if self.all_pass { "all checks passed" } else { "FAILURES present" },
            self.total_ms
        ));
        out
    }
}

// ---------------------------------------------------------------------------
// shared command plumbing

fn prepare_out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let out = cfg.out_dir.clone();
    std::fs::create_dir_all(&out)?;
    std::fs::write(out.join("config.json"), cfg.to_pretty_json()?)?;
    Ok(out)
}

fn build_dataset(cfg: &RunConfig) -> Result<Dataset> {
    Dataset::new(cfg.dataset_scenes, cfg.data.clone(), cfg.seed)
}

fn load_model(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<(Model, PathBuf)> {
    let path = checkpoint
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.out_dir.join("checkpoint_last.bin"));
    let model = Model::load(&path)?;
    Ok((model, path))
}

fn step_curve(run: &TrainRun, f: impl Fn(&crate::train::StepRecord) -> Option<f64>) -> (Vec<f64>, Vec<f64>) {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for r in &run.history {
        if let Some(v) = f(r) {
            xs.push(r.step as f64);
            ys.push(v);
        }
    }
    (xs, ys)
}

// ---------------------------------------------------------------------------
// gen-data

#[derive(Debug, Serialize)]
pub struct GenDataReport {
    pub scenes: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub dataset_dir: PathBuf,
    pub preview_images: Vec<PathBuf>,
}

/// Materializes the synthetic dataset under `<out>/dataset` and writes
/// depth previews for the first few scenes.
pub fn cmd_gen_data(cfg: &RunConfig) -> Result<GenDataReport> {
    let out = prepare_out_dir(cfg)?;
    let dataset = build_dataset(cfg)?;
    let dir = out.join("dataset");
    export_dataset(&dataset, &dir)?;

    let mut previews = Vec::new();
    for i in 0..dataset.len().min(4) {
        let scene = dataset.scene(i);
        let path = out.join(format!("depth_scene_{i}.pgm"));
        write_pgm(&path, &scene.depth_map)?;
        previews.push(path);
    }
    let report = GenDataReport {
        scenes: dataset.len(),
        train: dataset.split_indices(Split::Train).len(),
        val: dataset.split_indices(Split::Val).len(),
        test: dataset.split_indices(Split::Test).len(),
        dataset_dir: dir,
        preview_images: previews,
    };
    write_json(&out.join("gen_data.json"), &report)?;
    write_done_marker(&out)?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// train

#[derive(Debug, Serialize)]
pub struct TrainSummary {
    pub seed: u64,
    pub steps: usize,
    pub param_count: usize,
    pub initial_recon: Option<f64>,
    pub final_recon: Option<f64>,
    /// 1 - final/initial reconstruction loss.
    pub recon_reduction: Option<f64>,
    pub kappa_audit_ok: bool,
    pub evals: Vec<crate::train::EvalRecord>,
    pub checkpoint: PathBuf,
}

/// Trains a fresh model and emits metrics, plot curves, checkpoints,
/// and a summary report.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainSummary> {
    let out = prepare_out_dir(cfg)?;
    let dataset = build_dataset(cfg)?;
    let mut model = Model::new(cfg.encoder_config(), derive_seed(cfg.seed, &[MODEL_TAG]))?;
    let param_count = model.param_count();
    let run = train(
        &mut model,
        &dataset,
        &cfg.losses,
        &cfg.optimizer,
        &cfg.train,
        cfg.seed,
        Some(&out),
    )?;
    write_train_curves(&out, &run)?;

    let initial = run.initial_recon();
    let fin = run.final_recon();
    let summary = TrainSummary {
        seed: cfg.seed,
        steps: run.history.len(),
        param_count,
        initial_recon: initial,
        final_recon: fin,
        recon_reduction: initial
            .zip(fin)
            .map(|(a, b)| if a > 0.0 { 1.0 - b / a } else { 0.0 }),
        kappa_audit_ok: run.kappa_audit_ok,
        evals: run.evals.clone(),
        checkpoint: out.join("checkpoint_last.bin"),
    };
    write_json(&out.join("train_report.json"), &summary)?;
    write_done_marker(&out)?;
    Ok(summary)
}

fn write_train_curves(out: &Path, run: &TrainRun) -> Result<()> {
    let (xs, ys) = step_curve(run, |r| Some(r.report.total));
    write_xy(&out.join("loss_total.dat"), &xs, &ys)?;
    let (xs, ys) = step_curve(run, |r| Some(r.recon));
    write_xy(&out.join("loss_recon.dat"), &xs, &ys)?;
    let (xs, ys) = step_curve(run, |r| Some(r.grad_norm));
    write_xy(&out.join("grad_norm.dat"), &xs, &ys)?;
    let (xs, ys) = step_curve(run, |r| Some(r.lr));
    write_xy(&out.join("lr.dat"), &xs, &ys)?;
    let (xs, ys) = step_curve(run, |r| r.kappa_min);
    if !xs.is_empty() {
        write_xy(&out.join("kappa_min.dat"), &xs, &ys)?;
        let (xs, ys) = step_curve(run, |r| r.kappa_max);
        write_xy(&out.join("kappa_max.dat"), &xs, &ys)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// eval

#[derive(Debug, Serialize)]
pub struct EvalReport {
    pub checkpoint: PathBuf,
    pub split: Split,
    pub metrics: EvalMetrics,
}

/// Evaluates a checkpoint on the test split.
pub fn cmd_eval(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<EvalReport> {
    let out = prepare_out_dir(cfg)?;
    let (model, path) = load_model(cfg, checkpoint)?;
    let dataset = build_dataset(cfg)?;
    let metrics = evaluate(&model, &dataset, Split::Test, &cfg.train.eval)?;
    let report = EvalReport {
        checkpoint: path,
        split: Split::Test,
        metrics,
    };
    write_json(&out.join("eval.json"), &report)?;
    write_done_marker(&out)?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// ablate

#[derive(Debug, Serialize)]
pub struct AblationSummary {
    pub table: AblationTable,
    /// product feature cosine >= gaussian feature cosine.
    pub product_beats_gaussian: bool,
    /// single-sphere arm failed the concentration audit, errored out,
    /// or underperformed both other arms on feature cosine.
    pub single_sphere_degraded: bool,
    pub verdict: String,
}

/// Runs the three bottleneck arms under a matched budget and reports
/// the ordering verdict.
pub fn cmd_ablate(cfg: &RunConfig) -> Result<AblationSummary> {
    let out = prepare_out_dir(cfg)?;
    let dataset = build_dataset(cfg)?;
    let table = run_ablation(
        &cfg.encoder_config(),
        &dataset,
        &cfg.losses,
        &cfg.optimizer,
        &cfg.train,
        cfg.seed,
        Some(&out),
    )?;

    let cos = |name: &str| -> Option<f64> {
        table
            .arm(name)
            .and_then(|a| a.metrics.as_ref())
            .map(|m| m.feature_cos)
    };
    let (pc, gc, sc) = (cos("product"), cos("gaussian"), cos("single_sphere"));
    let product_beats_gaussian = matches!((pc, gc), (Some(p), Some(g)) if p >= g);
    let single = table.arm("single_sphere");
    let single_sphere_degraded = match single {
        None => true,
        Some(arm) => {
            !arm.kappa_audit_ok
                || arm.error.is_some()
                || match (sc, pc, gc) {
                    (Some(s), Some(p), Some(g)) => s <= p && s <= g,
                    _ => true,
                }
        }
    };
    let verdict = format!(
        "product {} gaussian on feature cosine; single sphere {}",
        if product_beats_gaussian { ">=" } else { "<" },
        if single_sphere_degraded {
            "degraded (audit failure, error, or underperformance)"
        } else {
            "held up"
        }
    );

    let labels: Vec<&str> = table.arms.iter().map(|a| a.name.as_str()).collect();
    let values: Vec<f64> = table
        .arms
        .iter()
        .map(|a| a.metrics.as_ref().map_or(f64::NAN, |m| m.feature_cos))
        .collect();
    write_bars(&out.join("ablation_feature_cos.dat"), &labels, &values)?;

    let summary = AblationSummary {
        table,
        product_beats_gaussian,
        single_sphere_degraded,
        verdict,
    };
    write_json(&out.join("ablation.json"), &summary)?;
    write_done_marker(&out)?;
    Ok(summary)
}

// ---------------------------------------------------------------------------
// diagnose

#[derive(Debug, Serialize)]
pub struct DiagnosticsReport {
    pub checkpoint: PathBuf,
    /// Latent-dimension variance profile over eval-mode latents.
    pub dimensions: DimensionReport,
    pub latents_used: usize,
    /// Per-layer coefficient of variation of token norms, averaged
    /// over sampled scenes.
    pub norm_cv: Vec<f64>,
    /// Per-layer fraction of qualifying tokens outside the shell
    /// bound.
    pub shell_outside: Vec<f64>,
    pub shell_sigma_min: f64,
    pub shell_slack: f64,
    /// Present only for spherical bottlenecks with enough scenes.
    pub specialization: Option<SpecializationReport>,
    pub probe: ProbeMetrics,
}

/// Post-training diagnostic battery over a checkpoint: active latent
/// dimensions, data-shell statistics, per-sphere specialization, and
/// the depth probe.
pub fn cmd_diagnose(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<DiagnosticsReport> {
    let out = prepare_out_dir(cfg)?;
    let (model, path) = load_model(cfg, checkpoint)?;
    let dataset = build_dataset(cfg)?;

    let n_latents = dataset.len().min(1000);
    let latents = collect_mean_latents(&model, &dataset, &(0..n_latents).collect::<Vec<_>>())?;
    let dimensions = active_dimensions(&latents, ACTIVE_DIM_THRESHOLD)?;
    let dims: Vec<f64> = (0..dimensions.per_dimension_variance.len())
        .map(|i| i as f64)
        .collect();
    write_xy(
        &out.join("active_dims.dat"),
        &dims,
        &dimensions.per_dimension_variance,
    )?;

    let probe_scenes = dataset.len().min(cfg.train.eval.probe_scenes.max(10));
    let (norm_cv, shell_outside) = shell_stats(cfg, &dataset)?;
    let specialization = match model.config().bottleneck {
        Bottleneck::Spherical { .. } if n_latents >= 80 => Some(sphere_specialization(
            &model,
            &dataset,
            &(0..n_latents).collect::<Vec<_>>(),
        )?),
        _ => None,
    };

    let idx: Vec<usize> = (0..probe_scenes).collect();
    let probe_inputs = per_scene_latents(&model, &dataset, &idx)?;
    let depth_maps: Vec<Tensor> = idx.iter().map(|&i| dataset.scene(i).depth_map.clone()).collect();
    let probe = probe_latents(&probe_inputs, &depth_maps, &ProbeConfig::default())?;

    let report = DiagnosticsReport {
        checkpoint: path,
        dimensions,
        latents_used: n_latents,
        norm_cv,
        shell_outside,
        shell_sigma_min: SHELL_SIGMA_MIN,
        shell_slack: SHELL_SLACK,
        specialization,
        probe,
    };
    write_json(&out.join("diagnostics.json"), &report)?;
    write_done_marker(&out)?;
    Ok(report)
}

/// Token-averaged eval-mode latents stacked into one row per scene.
pub fn collect_mean_latents(model: &Model, dataset: &Dataset, indices: &[usize]) -> Result<Tensor> {
    let rows = per_scene_latents(model, dataset, indices)?;
    let d = rows[0].cols();
    let mut out = Tensor::zeros(rows.len(), d);
    for (r, t) in rows.iter().enumerate() {
        if t.cols() != d || t.rows() != 1 {
            return Err(Error::ShapeMismatch {
                op: "collect_mean_latents",
                detail: format!("expected 1x{d}, got {}x{}", t.rows(), t.cols()),
            });
        }
        out.row_mut(r).copy_from_slice(t.data());
    }
    Ok(out)
}

/// Per-scene eval-mode latents, one `1 x D` tensor each, averaged over
/// latent tokens.
pub fn per_scene_latents(model: &Model, dataset: &Dataset, indices: &[usize]) -> Result<Vec<Tensor>> {
    let scenes: Vec<SyntheticScene> = indices.iter().map(|&i| dataset.scene(i)).collect();
    parallel_map(scenes.len(), |i| mean_latent_row(model, &scenes[i]))
        .into_iter()
        .collect()
}

fn mean_latent_row(model: &Model, scene: &SyntheticScene) -> Result<Tensor> {
    let latent = crate::train::scene_mean_latent(model, scene)?;
    let (rows, d) = (latent.rows(), latent.cols());
    let mut avg = Tensor::zeros(1, d);
    for r in 0..rows {
        for (j, v) in latent.row(r).iter().enumerate() {
            avg.data_mut()[j] += v / rows as f64;
        }
    }
    Ok(avg)
}

fn shell_stats(cfg: &RunConfig, dataset: &Dataset) -> Result<(Vec<f64>, Vec<f64>)> {
    let n_scenes = dataset.len().min(8);
    let n_layers = cfg.data.layer_dims.len();
    let mut cv_acc = vec![0.0; n_layers];
    let mut layer_tokens: Vec<Vec<f64>> = vec![Vec::new(); n_layers];
    for i in 0..n_scenes {
        let scene = dataset.scene(i);
        for (l, cv) in norm_cv_profile(&scene.features)?.iter().enumerate() {
            cv_acc[l] += cv / n_scenes as f64;
        }
        for (l, layer) in scene.features.layers.iter().enumerate() {
            layer_tokens[l].extend_from_slice(layer.data());
        }
    }
    let mut shell = Vec::with_capacity(n_layers);
    for (l, flat) in layer_tokens.into_iter().enumerate() {
        let d = cfg.data.layer_dims[l];
        let tokens = Tensor::from_vec(flat.len() / d, d, flat)?;
        shell.push(shell_outside_fraction(
            &tokens,
            cfg.encoder.ln_eps,
            SHELL_SIGMA_MIN,
            SHELL_SLACK,
        )?);
    }
    Ok((cv_acc, shell))
}

// ---------------------------------------------------------------------------
// interp

#[derive(Debug, Serialize)]
pub struct InterpReport {
    pub checkpoint: PathBuf,
    pub scene_a: usize,
    pub scene_b: usize,
    pub ts: Vec<f64>,
    pub adjacent_distances: Vec<f64>,
    pub smoothness_ratio: f64,
    /// Largest |norm - 1| over all per-part latent chunks in the sweep.
    pub max_unit_error: f64,
    pub images: Vec<PathBuf>,
}

/// Spherical interpolation between two scenes' latents, with decoded
/// feature heatmaps along the path.
pub fn cmd_interp(
    cfg: &RunConfig,
    checkpoint: Option<&Path>,
    scene_a: usize,
    scene_b: usize,
    steps: usize,
) -> Result<InterpReport> {
    let out = prepare_out_dir(cfg)?;
    let (model, path) = load_model(cfg, checkpoint)?;
    let dataset = build_dataset(cfg)?;
    let n = dataset.len();
    if scene_a >= n || scene_b >= n {
        return Err(Error::ConfigError(format!(
            "scene indices ({scene_a}, {scene_b}) out of range for {n} scenes"
        )));
    }
    let sa = dataset.scene(scene_a);
    let sb = dataset.scene(scene_b);
    let sweep = slerp_sweep(&model, &sa, &sb, steps)?;

    let spec = model
        .config()
        .bottleneck
        .spec()
        .ok_or_else(|| Error::ConfigError("interp requires a spherical bottleneck".into()))?;
    let mut max_unit_err: f64 = 0.0;
    for latent in &sweep.latents {
        for row in 0..latent.rows() {
            for chunk in latent.row(row).chunks(spec.sphere_dim()) {
                let norm: f64 = chunk.iter().map(|v| v * v).sum::<f64>().sqrt();
                max_unit_err = max_unit_err.max((norm - 1.0).abs());
            }
        }
    }

    let mut images = Vec::new();
    for (k, recons) in sweep.recons.iter().enumerate() {
        for (l, layer) in recons.iter().enumerate() {
            let p = out.join(format!("sweep_t{k:02}_layer{l}.pgm"));
            write_pgm(&p, layer)?;
            images.push(p);
        }
    }
    write_xy(
        &out.join("sweep_distances.dat"),
        &sweep.ts[1..],
        &sweep.adjacent_distances,
    )?;

    let report = InterpReport {
        checkpoint: path,
        scene_a,
        scene_b,
        ts: sweep.ts,
        adjacent_distances: sweep.adjacent_distances,
        smoothness_ratio: sweep.smoothness_ratio,
        max_unit_error: max_unit_err,
        images,
    };
    write_json(&out.join("interp.json"), &report)?;
    write_done_marker(&out)?;
    Ok(report)
}
