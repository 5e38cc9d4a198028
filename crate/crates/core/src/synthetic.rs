//! Synthetic scene generator: multi-layer token features on thin
//! anisotropic shells, plus depth-map and pose targets that are smooth
//! noise-free functions of the generating factors.
//!
//! Features per layer: a frozen two-stage nonlinear map from (factors,
//! per-token code) through a tanh expansion into the layer width, scaled by
//! a decaying spectrum, perturbed by small noise, then token-wise
//! renormalized onto the layer shell with bounded jitter. Everything is a
//! pure function of (seed, config).

use crate::error::{Error, Result};
use crate::rng::{derive_seed, sub_rng, Rng};
use crate::tensor::Tensor;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

const FACTOR_TAG: u64 = 0x66616374;
const NOISE_TAG: u64 = 0x6e6f6973;
const JITTER_TAG: u64 = 0x6a697474;
const MAP_TAG: u64 = 0x6d617073;

/// Generator configuration. `feature_seed` freezes the factor-to-feature
/// maps independently of per-scene seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub layer_dims: Vec<usize>,
    pub layer_radii: Vec<f64>,
    pub tokens: usize,
    /// Generative factor count K.
    pub n_factors: usize,
    /// Calibration ceiling for the per-layer CV of token norms.
    pub cv_target: f64,
    /// Smallest spectrum entry relative to the largest; columns of each
    /// layer map decay geometrically down to this floor.
    pub anisotropy_floor: f64,
    #[serde(default = "default_expansion")]
    pub expansion: usize,
    #[serde(default = "default_token_code_dim")]
    pub token_code_dim: usize,
    #[serde(default = "default_noise_scale")]
    pub noise_scale: f64,
    #[serde(default = "default_depth_resolution")]
    pub depth_resolution: usize,
    #[serde(default = "default_feature_seed")]
    pub feature_seed: u64,
}

fn default_expansion() -> usize {
    48
}
fn default_token_code_dim() -> usize {
    8
}
fn default_noise_scale() -> f64 {
    0.05
}
fn default_depth_resolution() -> usize {
    16
}
fn default_feature_seed() -> u64 {
    7
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            layer_dims: vec![128, 128],
            layer_radii: vec![1.0, 1.5],
            tokens: 32,
            n_factors: 10,
            cv_target: 0.15,
            anisotropy_floor: 0.05,
            expansion: default_expansion(),
            token_code_dim: default_token_code_dim(),
            noise_scale: default_noise_scale(),
            depth_resolution: default_depth_resolution(),
            feature_seed: default_feature_seed(),
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layer_dims.is_empty() || self.layer_dims.iter().any(|&d| d < 2) {
            return Err(Error::ConfigError(
                "layer_dims must be nonempty with widths >= 2".into(),
            ));
        }
        if self.layer_radii.len() != self.layer_dims.len()
            || self.layer_radii.iter().any(|&r| !(r > 0.0))
        {
            return Err(Error::ConfigError(
                "layer_radii must match layer_dims with positive entries".into(),
            ));
        }
        if self.tokens < 2 {
            return Err(Error::ConfigError("tokens must be >= 2".into()));
        }
        if self.n_factors == 0 {
            return Err(Error::ConfigError("n_factors must be >= 1".into()));
        }
        if !(self.cv_target > 0.0 && self.cv_target <= 0.15) {
            return Err(Error::ConfigError(format!(
                "cv_target {} outside (0, 0.15]",
                self.cv_target
            )));
        }
        if !(self.anisotropy_floor > 0.0 && self.anisotropy_floor <= 1.0) {
            return Err(Error::ConfigError("anisotropy_floor outside (0, 1]".into()));
        }
        if self.expansion == 0 || self.token_code_dim == 0 {
            return Err(Error::ConfigError(
                "expansion and token_code_dim must be >= 1".into(),
            ));
        }
        if !(self.noise_scale >= 0.0) {
            return Err(Error::ConfigError("noise_scale must be >= 0".into()));
        }
        if self.depth_resolution < 2 {
            return Err(Error::ConfigError("depth_resolution must be >= 2".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims.iter().sum()
    }
}

/// One layer's frozen map: token codes, factor/code mixing, output lift,
/// and the anisotropy spectrum baked into the lift columns.
struct LayerMap {
    // tokens x code_dim
    codes: Tensor,
    // n_factors x expansion
    factor_w: Tensor,
    // code_dim x expansion
    code_w: Tensor,
    // 1 x expansion
    bias: Tensor,
    // expansion x layer_dim, columns scaled by the decay spectrum
    lift: Tensor,
}

struct FrozenMaps {
    layers: Vec<LayerMap>,
}

fn gaussian_tensor(rows: usize, cols: usize, scale: f64, rng: &mut Rng) -> Tensor {
    Tensor::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect(),
    )
    .expect("shape by construction")
}

fn build_maps(cfg: &DataConfig) -> FrozenMaps {
    let layers = cfg
        .layer_dims
        .iter()
        .enumerate()
        .map(|(li, &d)| {
            let mut rng = sub_rng(cfg.feature_seed, &[MAP_TAG, li as u64]);
            let e = cfg.expansion;
            let codes = gaussian_tensor(cfg.tokens, cfg.token_code_dim, 1.0, &mut rng);
            let factor_w = gaussian_tensor(cfg.n_factors, e, 1.0 / (cfg.n_factors as f64).sqrt(), &mut rng);
            let code_w = gaussian_tensor(cfg.token_code_dim, e, 1.0 / (cfg.token_code_dim as f64).sqrt(), &mut rng);
            let bias = gaussian_tensor(1, e, 0.3, &mut rng);
            let mut lift = gaussian_tensor(e, d, 1.0 / (e as f64).sqrt(), &mut rng);
            // geometric decay across output dimensions down to the floor
            for r in 0..e {
                for (j, v) in lift.row_mut(r).iter_mut().enumerate() {
                    let t = if d > 1 { j as f64 / (d - 1) as f64 } else { 0.0 };
                    *v *= cfg.anisotropy_floor.powf(t);
                }
            }
            LayerMap {
                codes,
                factor_w,
                code_w,
                bias,
                lift,
            }
        })
        .collect();
    FrozenMaps { layers }
}

/// Per-layer token features plus shell metadata and the generating factors.
#[derive(Debug, Clone)]
pub struct FeatureBatch {
    pub layers: Vec<Tensor>,
    pub layer_radii: Vec<f64>,
    pub factors: Vec<f64>,
}

/// A full sample: features with known factors and the two task targets.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub factors: Vec<f64>,
    pub features: FeatureBatch,
    /// Strictly positive depth on a P x P grid.
    pub depth_map: Tensor,
    /// Translation (3) followed by a unit quaternion (4).
    pub pose: [f64; 7],
}

fn factor(f: &[f64], i: usize) -> f64 {
    f[i % f.len()]
}

/// Smooth positive depth field driven by four factor slots.
fn depth_from_factors(f: &[f64], p: usize) -> Tensor {
    let s_scale = factor(f, 0);
    let s_amp = factor(f, 1);
    let s_px = factor(f, 2);
    let s_py = factor(f, 3);
    let mut out = Tensor::zeros(p, p);
    for r in 0..p {
        let u = r as f64 / (p - 1) as f64;
        for c in 0..p {
            let v = c as f64 / (p - 1) as f64;
            let field = s_amp
                * (std::f64::consts::PI * u + 0.6 * s_px).sin()
                * (std::f64::consts::PI * v + 0.6 * s_py).cos()
                + 0.5 * s_px * (u - 0.5) * (v - 0.5);
            out.set(r, c, (0.5 * s_scale + 0.45 * field).exp());
        }
    }
    out
}

/// Translation from three factor slots; rotation as a unit quaternion from
/// an axis-angle pair in three more.
fn pose_from_factors(f: &[f64]) -> [f64; 7] {
    let t = [0.8 * factor(f, 0), 0.8 * factor(f, 1), 0.8 * factor(f, 2)];
    let raw = [factor(f, 4) + 1.2, factor(f, 5), factor(f, 6)];
    let norm = (raw[0] * raw[0] + raw[1] * raw[1] + raw[2] * raw[2]).sqrt();
    let axis = [raw[0] / norm, raw[1] / norm, raw[2] / norm];
    let angle = 0.9 * factor(f, 3);
    let (s, c) = (0.5 * angle).sin_cos();
    [t[0], t[1], t[2], c, axis[0] * s, axis[1] * s, axis[2] * s]
}

fn generate_with_maps(seed: u64, cfg: &DataConfig, maps: &FrozenMaps) -> SyntheticScene {
    let mut frng = sub_rng(seed, &[FACTOR_TAG]);
    let factors: Vec<f64> = (0..cfg.n_factors).map(|_| frng.gen_range(-1.0..1.0)).collect();
    let factor_row = Tensor::from_vec(1, cfg.n_factors, factors.clone()).expect("shape");

    let mut layers = Vec::with_capacity(cfg.layer_dims.len());
    // jitter amplitude sized so the realized CV sits below the target:
    // uniform jitter of amplitude a has std a/sqrt(3)
    let jitter_amp = cfg.cv_target * 3f64.sqrt() * 0.8;
    for (li, map) in maps.layers.iter().enumerate() {
        let d = cfg.layer_dims[li];
        let radius = cfg.layer_radii[li];
        let mut nrng = sub_rng(seed, &[NOISE_TAG, li as u64]);
        let mut jrng = sub_rng(seed, &[JITTER_TAG, li as u64]);

        // hidden = tanh(f A + q_t B + b), per token
        let f_part = factor_row.matmul(&map.factor_w).expect("shapes fixed");
        let q_part = map.codes.matmul(&map.code_w).expect("shapes fixed");
        let mut hidden = q_part;
        for r in 0..hidden.rows() {
            for ((h, &fp), &b) in hidden
                .row_mut(r)
                .iter_mut()
                .zip(f_part.row(0))
                .zip(map.bias.row(0))
            {
                *h = (*h + fp + b).tanh();
            }
        }
        let mut feats = hidden.matmul(&map.lift).expect("shapes fixed");
        for r in 0..feats.rows() {
            for (j, v) in feats.row_mut(r).iter_mut().enumerate() {
                let spec = cfg
                    .anisotropy_floor
                    .powf(if d > 1 { j as f64 / (d - 1) as f64 } else { 0.0 });
                *v += cfg.noise_scale * spec * nrng.sample::<f64, _>(StandardNormal);
            }
        }
        // shell renormalization with bounded jitter
        for r in 0..feats.rows() {
            let target = radius * (1.0 + jitter_amp * jrng.gen_range(-1.0..1.0));
            let row = feats.row_mut(r);
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            let scale = target / norm;
            for v in row {
                *v *= scale;
            }
        }
        layers.push(feats);
    }

    SyntheticScene {
        depth_map: depth_from_factors(&factors, cfg.depth_resolution),
        pose: pose_from_factors(&factors),
        features: FeatureBatch {
            layers,
            layer_radii: cfg.layer_radii.clone(),
            factors: factors.clone(),
        },
        factors,
    }
}

/// Pure scene construction from (seed, cfg).
pub fn generate_scene(seed: u64, cfg: &DataConfig) -> Result<SyntheticScene> {
    cfg.validate()?;
    let maps = build_maps(cfg);
    Ok(generate_with_maps(seed, cfg, &maps))
}

/// Index split assignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Deterministic, index-addressable scene collection with hashed 80/10/10
/// splits. Scenes are regenerated on demand; the frozen maps are cached.
pub struct Dataset {
    cfg: DataConfig,
    seed: u64,
    n: usize,
    maps: FrozenMaps,
}

impl Dataset {
    pub fn new(n: usize, cfg: DataConfig, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::ConfigError("dataset size must be >= 1".into()));
        }
        cfg.validate()?;
        let maps = build_maps(&cfg);
        Ok(Self { cfg, seed, n, maps })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn config(&self) -> &DataConfig {
        &self.cfg
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn scene_seed(&self, index: usize) -> u64 {
        derive_seed(self.seed, &[0x7363656e, index as u64])
    }

    pub fn scene(&self, index: usize) -> SyntheticScene {
        generate_with_maps(self.scene_seed(index), &self.cfg, &self.maps)
    }

    pub fn split_of(&self, index: usize) -> Split {
        match derive_seed(self.seed, &[0x73706c69, index as u64]) % 10 {
            0..=7 => Split::Train,
            8 => Split::Val,
            _ => Split::Test,
        }
    }

    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        (0..self.n).filter(|&i| self.split_of(i) == split).collect()
    }
}

const MANIFEST_NAME: &str = "manifest.json";
const EXPORT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    n: usize,
    seed: u64,
    config: DataConfig,
}

fn scene_file_name(index: usize) -> String {
    format!("scene_{index:06}.bin")
}

fn write_f64s<W: Write>(w: &mut W, vals: &[f64]) -> Result<()> {
    for v in vals {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n);
    let mut buf = [0u8; 8];
    for _ in 0..n {
        r.read_exact(&mut buf)?;
        out.push(f64::from_le_bytes(buf));
    }
    Ok(out)
}

/// Writes the dataset as one flat binary record per scene plus a JSON
/// manifest. Record layout (all f64 little-endian, in order): factors,
/// each feature layer row-major, depth map row-major, pose.
pub fn export_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let manifest = Manifest {
        format_version: EXPORT_VERSION,
        n: ds.n,
        seed: ds.seed,
        config: ds.cfg.clone(),
    };
    let f = std::fs::File::create(dir.join(MANIFEST_NAME))?;
    serde_json::to_writer_pretty(BufWriter::new(f), &manifest)?;
    for i in 0..ds.n {
        let scene = ds.scene(i);
        let f = std::fs::File::create(dir.join(scene_file_name(i)))?;
        let mut w = BufWriter::new(f);
        write_f64s(&mut w, &scene.factors)?;
        for layer in &scene.features.layers {
            write_f64s(&mut w, layer.data())?;
        }
        write_f64s(&mut w, scene.depth_map.data())?;
        write_f64s(&mut w, &scene.pose)?;
        w.flush()?;
    }
    Ok(())
}

/// Scene collection read back from an exported directory. Also serves as
/// the ingestion point for externally produced feature records in the same
/// layout.
pub struct LoadedDataset {
    cfg: DataConfig,
    seed: u64,
    scenes: Vec<SyntheticScene>,
    dir: PathBuf,
}

impl LoadedDataset {
    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }

    pub fn config(&self) -> &DataConfig {
        &self.cfg
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn scene(&self, index: usize) -> &SyntheticScene {
        &self.scenes[index]
    }
}

pub fn import_dataset(dir: &Path) -> Result<LoadedDataset> {
    let f = std::fs::File::open(dir.join(MANIFEST_NAME))?;
    let manifest: Manifest = serde_json::from_reader(BufReader::new(f))?;
    if manifest.format_version != EXPORT_VERSION {
        return Err(Error::CheckpointFormat(format!(
            "unsupported dataset format version {}",
            manifest.format_version
        )));
    }
    manifest.config.validate()?;
    let cfg = manifest.config;
    let p = cfg.depth_resolution;
    let mut scenes = Vec::with_capacity(manifest.n);
    for i in 0..manifest.n {
        let f = std::fs::File::open(dir.join(scene_file_name(i)))?;
        let mut r = BufReader::new(f);
        let factors = read_f64s(&mut r, cfg.n_factors)?;
        let mut layers = Vec::with_capacity(cfg.layer_dims.len());
        for &d in &cfg.layer_dims {
            let data = read_f64s(&mut r, cfg.tokens * d)?;
            layers.push(Tensor::from_vec(cfg.tokens, d, data)?);
        }
        let depth = Tensor::from_vec(p, p, read_f64s(&mut r, p * p)?)?;
        let pose_v = read_f64s(&mut r, 7)?;
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(Error::CheckpointFormat(format!(
                "scene {i}: trailing bytes after the expected record"
            )));
        }
        let mut pose = [0.0; 7];
        pose.copy_from_slice(&pose_v);
        scenes.push(SyntheticScene {
            depth_map: depth,
            pose,
            features: FeatureBatch {
                layers,
                layer_radii: cfg.layer_radii.clone(),
                factors: factors.clone(),
            },
            factors,
        });
    }
    Ok(LoadedDataset {
        cfg,
        seed: manifest.seed,
        scenes,
        dir: dir.to_path_buf(),
    })
}
