//! Encoder/decoder networks around the spherical (or Gaussian) bottleneck.
//!
//! Tokens are rows. Input features arrive as per-layer token matrices, are
//! layer-normalized independently, concatenated along the feature axis,
//! gated-projected into the hidden width, and refined by pre-norm attention
//! blocks. Heads emit per-token bottleneck parameters; in register mode only
//! M learned register tokens reach the bottleneck and the decoder rebuilds
//! the full token set from its own learned query tokens.

use crate::autodiff::{softplus_inverse, Graph, Var};
use crate::error::{Error, Result};
use crate::product::ProductSphereSpec;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

/// Index of a parameter inside a [`ParamStore`], stable across the life of
/// the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub usize);

/// Named parameter tensors in deterministic registration order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: &str, tensor: Tensor) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::ConfigError(format!("duplicate parameter {name}")));
        }
        self.index.insert(name.to_string(), self.names.len());
        self.names.push(name.to_string());
        self.tensors.push(tensor);
        Ok(ParamId(self.names.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Total scalar count across all parameters.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter())
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }
}

/// Bottleneck family selector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Bottleneck {
    /// Product of `n_spheres` spheres of ambient dimension `sphere_dim`.
    Spherical { n_spheres: usize, sphere_dim: usize },
    /// Diagonal Gaussian of dimension `dim`.
    Gaussian { dim: usize },
}

impl Bottleneck {
    pub fn latent_dim(&self) -> usize {
        match self {
            Bottleneck::Spherical {
                n_spheres,
                sphere_dim,
            } => n_spheres * sphere_dim,
            Bottleneck::Gaussian { dim } => *dim,
        }
    }

    pub fn spec(&self) -> Option<ProductSphereSpec> {
        match self {
            Bottleneck::Spherical {
                n_spheres,
                sphere_dim,
            } => ProductSphereSpec::new(*n_spheres, *sphere_dim).ok(),
            Bottleneck::Gaussian { .. } => None,
        }
    }
}

/// Architecture hyperparameters shared by encoder and decoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Feature width of each input layer; total input dim is the sum.
    pub layer_dims: Vec<usize>,
    /// Tokens per scene.
    pub tokens: usize,
    /// Hidden width H.
    pub hidden: usize,
    /// Attention blocks in the encoder; the decoder mirrors this depth.
    pub n_layers: usize,
    pub n_heads: usize,
    /// Register-token count M; None keeps one latent per input token.
    pub registers: Option<usize>,
    pub bottleneck: Bottleneck,
    pub kappa_init: f64,
    /// Learned positions added to projected feature tokens.
    pub learned_positions: bool,
    pub ln_eps: f64,
}

impl EncoderConfig {
    pub fn input_dim(&self) -> usize {
        self.layer_dims.iter().sum()
    }

    /// Token count entering the bottleneck heads.
    pub fn latent_tokens(&self) -> usize {
        self.registers.unwrap_or(self.tokens)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_dims.is_empty() || self.layer_dims.iter().any(|&d| d < 2) {
            return Err(Error::ConfigError(
                "layer_dims must be nonempty with every width >= 2".into(),
            ));
        }
        if self.tokens == 0 {
            return Err(Error::ConfigError("tokens must be >= 1".into()));
        }
        if self.hidden == 0 || self.n_heads == 0 || !self.hidden.is_multiple_of(self.n_heads) {
            return Err(Error::ConfigError(format!(
                "hidden {} must be a positive multiple of n_heads {}",
                self.hidden, self.n_heads
            )));
        }
        if self.n_layers == 0 {
            return Err(Error::ConfigError("n_layers must be >= 1".into()));
        }
        if let Some(m) = self.registers {
            if m == 0 {
                return Err(Error::ConfigError("registers must be >= 1 when set".into()));
            }
        }
        if !(self.kappa_init > 0.0) {
            return Err(Error::ConfigError(format!(
                "kappa_init {} must be > 0",
                self.kappa_init
            )));
        }
        if !(self.ln_eps >= 0.0) {
            return Err(Error::ConfigError("ln_eps must be >= 0".into()));
        }
        if let Bottleneck::Spherical {
            n_spheres,
            sphere_dim,
        } = self.bottleneck
        {
            if n_spheres == 0 || sphere_dim < 2 {
                return Err(Error::ConfigError(format!(
                    "spherical bottleneck needs n_spheres >= 1 and sphere_dim >= 2, got {n_spheres}x{sphere_dim}"
                )));
            }
        } else if self.bottleneck.latent_dim() == 0 {
            return Err(Error::ConfigError("latent dim must be >= 1".into()));
        }
        Ok(())
    }
}

struct BlockIds {
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
    bo: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

struct HeadIds {
    mu_w: ParamId,
    mu_b: ParamId,
    // kappa head for spherical, log-variance head for Gaussian
    scale_w: ParamId,
    scale_b: ParamId,
}

struct Layout {
    proj_wg: ParamId,
    proj_bg: ParamId,
    proj_wh: ParamId,
    proj_bh: ParamId,
    positions: Option<ParamId>,
    enc_registers: Option<ParamId>,
    enc_blocks: Vec<BlockIds>,
    heads: HeadIds,
    unproj_w: ParamId,
    unproj_b: ParamId,
    dec_registers: Option<ParamId>,
    dec_blocks: Vec<BlockIds>,
    out_w: ParamId,
    out_b: ParamId,
}

/// Bottleneck parameter nodes produced by [`Model::encode`]. Shapes are per
/// latent token (rows).
pub enum BottleneckVars {
    /// `mu`: rows x (N*d') with unit chunks; `kappa`: rows x N, positive.
    Spherical { mu: Var, kappa: Var },
    /// `mu`, `log_var`: rows x D. `log_var` is raw; sampling clamps it.
    Gaussian { mu: Var, log_var: Var },
}

impl BottleneckVars {
    /// Deterministic (eval-mode) latent: mean directions or the mean itself.
    pub fn mean_latent(&self) -> Var {
        match self {
            BottleneckVars::Spherical { mu, .. } => *mu,
            BottleneckVars::Gaussian { mu, .. } => *mu,
        }
    }
}

/// The full VAE: parameter store plus forward builders.
pub struct Model {
    cfg: EncoderConfig,
    store: ParamStore,
    layout: Layout,
}

fn init_uniform(rows: usize, cols: usize, fan_in: usize, rng: &mut crate::rng::Rng) -> Tensor {
    use rand::Rng as _;
    let bound = 1.0 / (fan_in as f64).sqrt();
    Tensor::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| rng.gen_range(-bound..bound))
            .collect(),
    )
    .expect("shape by construction")
}

impl Model {
    /// Builds a freshly initialized model. Weights are uniform with scale
    /// reciprocal to the square root of fan-in; biases start at zero.
    pub fn new(cfg: EncoderConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = crate::rng::sub_rng(seed, &[0x6d6f64656c]);
        let mut store = ParamStore::new();
        let d_in = cfg.input_dim();
        let h = cfg.hidden;
        let ff = 4 * h;
        let d_lat = cfg.bottleneck.latent_dim();

        let weight = |store: &mut ParamStore, name: &str, rows: usize, cols: usize, rng: &mut crate::rng::Rng| {
            store.register(name, init_uniform(rows, cols, rows, rng))
        };
        let bias = |store: &mut ParamStore, name: &str, cols: usize| {
            store.register(name, Tensor::zeros(1, cols))
        };

        let proj_wg = weight(&mut store, "enc.proj.wg", d_in, h, &mut rng)?;
        let proj_bg = bias(&mut store, "enc.proj.bg", h)?;
        let proj_wh = weight(&mut store, "enc.proj.wh", d_in, h, &mut rng)?;
        let proj_bh = bias(&mut store, "enc.proj.bh", h)?;

        let positions = if cfg.learned_positions {
            Some(store.register("enc.positions", init_uniform(cfg.tokens, h, h, &mut rng))?)
        } else {
            None
        };
        let enc_registers = match cfg.registers {
            Some(m) => Some(store.register("enc.registers", init_uniform(m, h, h, &mut rng))?),
            None => None,
        };

        let block = |store: &mut ParamStore, prefix: &str, rng: &mut crate::rng::Rng| -> Result<BlockIds> {
            Ok(BlockIds {
                wq: store.register(&format!("{prefix}.attn.wq"), init_uniform(h, h, h, rng))?,
                wk: store.register(&format!("{prefix}.attn.wk"), init_uniform(h, h, h, rng))?,
                wv: store.register(&format!("{prefix}.attn.wv"), init_uniform(h, h, h, rng))?,
                wo: store.register(&format!("{prefix}.attn.wo"), init_uniform(h, h, h, rng))?,
                bo: store.register(&format!("{prefix}.attn.bo"), Tensor::zeros(1, h))?,
                w1: store.register(&format!("{prefix}.ff.w1"), init_uniform(h, ff, h, rng))?,
                b1: store.register(&format!("{prefix}.ff.b1"), Tensor::zeros(1, ff))?,
                w2: store.register(&format!("{prefix}.ff.w2"), init_uniform(ff, h, ff, rng))?,
                b2: store.register(&format!("{prefix}.ff.b2"), Tensor::zeros(1, h))?,
            })
        };

        let mut enc_blocks = Vec::with_capacity(cfg.n_layers);
        for i in 0..cfg.n_layers {
            enc_blocks.push(block(&mut store, &format!("enc.block{i}"), &mut rng)?);
        }

        let scale_cols = match cfg.bottleneck {
            Bottleneck::Spherical { n_spheres, .. } => n_spheres,
            Bottleneck::Gaussian { dim } => dim,
        };
        let heads = HeadIds {
            mu_w: weight(&mut store, "enc.head.mu.w", h, d_lat, &mut rng)?,
            mu_b: bias(&mut store, "enc.head.mu.b", d_lat)?,
            scale_w: weight(&mut store, "enc.head.scale.w", h, scale_cols, &mut rng)?,
            scale_b: bias(&mut store, "enc.head.scale.b", scale_cols)?,
        };

        let unproj_w = weight(&mut store, "dec.unproj.w", d_lat, h, &mut rng)?;
        let unproj_b = bias(&mut store, "dec.unproj.b", h)?;
        let dec_registers = match cfg.registers {
            Some(_) => Some(store.register("dec.registers", init_uniform(cfg.tokens, h, h, &mut rng))?),
            None => None,
        };
        let mut dec_blocks = Vec::with_capacity(cfg.n_layers);
        for i in 0..cfg.n_layers {
            dec_blocks.push(block(&mut store, &format!("dec.block{i}"), &mut rng)?);
        }
        let out_w = weight(&mut store, "dec.out.w", h, d_in, &mut rng)?;
        let out_b = bias(&mut store, "dec.out.b", d_in)?;

        Ok(Self {
            cfg,
            store,
            layout: Layout {
                proj_wg,
                proj_bg,
                proj_wh,
                proj_bh,
                positions,
                enc_registers,
                enc_blocks,
                heads,
                unproj_w,
                unproj_b,
                dec_registers,
                dec_blocks,
                out_w,
                out_b,
            },
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn param_count(&self) -> usize {
        self.store.scalar_count()
    }

    /// Inserts every parameter into `g` as a leaf, in store order. Forward
    /// builders index into the returned vector; gradients come back through
    /// the same handles.
    pub fn param_vars(&self, g: &mut Graph) -> Vec<Var> {
        self.store
            .tensors()
            .iter()
            .map(|t| g.leaf(t.clone()))
            .collect()
    }

    fn block_forward(&self, g: &mut Graph, vars: &[Var], ids: &BlockIds, x: Var) -> Result<Var> {
        let dh = self.cfg.hidden / self.cfg.n_heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let ln1 = g.layer_norm_rows(x, self.cfg.ln_eps);
        let q = g.matmul(ln1, vars[ids.wq.0])?;
        let k = g.matmul(ln1, vars[ids.wk.0])?;
        let v = g.matmul(ln1, vars[ids.wv.0])?;
        let mut heads = Vec::with_capacity(self.cfg.n_heads);
        for hh in 0..self.cfg.n_heads {
            let qh = g.slice_cols(q, hh * dh, dh)?;
            let kh = g.slice_cols(k, hh * dh, dh)?;
            let vh = g.slice_cols(v, hh * dh, dh)?;
            let kt = g.transpose(kh);
            let scores = g.matmul(qh, kt)?;
            let scaled = g.scale(scores, scale);
            let attn = g.softmax_rows(scaled);
            heads.push(g.matmul(attn, vh)?);
        }
        let cat = g.concat_cols(&heads)?;
        let proj = g.matmul(cat, vars[ids.wo.0])?;
        let proj = g.add_bias(proj, vars[ids.bo.0])?;
        let x = g.add(x, proj)?;
        let ln2 = g.layer_norm_rows(x, self.cfg.ln_eps);
        let h1 = g.matmul(ln2, vars[ids.w1.0])?;
        let h1 = g.add_bias(h1, vars[ids.b1.0])?;
        let act = g.gelu(h1);
        let h2 = g.matmul(act, vars[ids.w2.0])?;
        let h2 = g.add_bias(h2, vars[ids.b2.0])?;
        g.add(x, h2)
    }

    /// Feature layers to bottleneck parameters. `layers` holds one
    /// tokens x layer_dim matrix per configured layer.
    pub fn encode(&self, g: &mut Graph, vars: &[Var], layers: &[Tensor]) -> Result<BottleneckVars> {
        if layers.len() != self.cfg.layer_dims.len() {
            return Err(Error::ConfigMismatch(format!(
                "expected {} feature layers, got {}",
                self.cfg.layer_dims.len(),
                layers.len()
            )));
        }
        let mut normed = Vec::with_capacity(layers.len());
        for (li, layer) in layers.iter().enumerate() {
            if layer.rows() != self.cfg.tokens || layer.cols() != self.cfg.layer_dims[li] {
                return Err(Error::ConfigMismatch(format!(
                    "layer {li}: expected {}x{}, got {}x{}",
                    self.cfg.tokens,
                    self.cfg.layer_dims[li],
                    layer.rows(),
                    layer.cols()
                )));
            }
            let leaf = g.leaf(layer.clone());
            normed.push(g.layer_norm_rows(leaf, self.cfg.ln_eps));
        }
        let x = g.concat_cols(&normed)?;
        let mut tokens = gated_projection(
            g,
            x,
            vars[self.layout.proj_wg.0],
            vars[self.layout.proj_bg.0],
            vars[self.layout.proj_wh.0],
            vars[self.layout.proj_bh.0],
        )?;
        if let Some(pid) = self.layout.positions {
            tokens = g.add(tokens, vars[pid.0])?;
        }
        let mut seq = match self.layout.enc_registers {
            Some(rid) => g.concat_rows(&[vars[rid.0], tokens])?,
            None => tokens,
        };
        for ids in &self.layout.enc_blocks {
            seq = self.block_forward(g, vars, ids, seq)?;
        }
        let pooled = match self.cfg.registers {
            Some(m) => g.slice_rows(seq, 0, m)?,
            None => seq,
        };
        let mu_raw = g.matmul(pooled, vars[self.layout.heads.mu_w.0])?;
        let mu_raw = g.add_bias(mu_raw, vars[self.layout.heads.mu_b.0])?;
        let scale_raw = g.matmul(pooled, vars[self.layout.heads.scale_w.0])?;
        let scale_raw = g.add_bias(scale_raw, vars[self.layout.heads.scale_b.0])?;
        match self.cfg.bottleneck {
            Bottleneck::Spherical { sphere_dim, .. } => {
                let mu = g.normalize_row_chunks(mu_raw, sphere_dim)?;
                let shifted = g.add_const(scale_raw, softplus_inverse(self.cfg.kappa_init));
                let kappa = g.softplus(shifted);
                Ok(BottleneckVars::Spherical { mu, kappa })
            }
            Bottleneck::Gaussian { .. } => Ok(BottleneckVars::Gaussian {
                mu: mu_raw,
                log_var: scale_raw,
            }),
        }
    }

    /// Latent tokens (rows x latent_dim) to reconstructed feature layers.
    pub fn decode(&self, g: &mut Graph, vars: &[Var], z: Var) -> Result<Vec<Var>> {
        let zv = g.value(z);
        let expected_rows = self.cfg.latent_tokens();
        if zv.rows() != expected_rows || zv.cols() != self.cfg.bottleneck.latent_dim() {
            return Err(Error::ConfigMismatch(format!(
                "latent: expected {}x{}, got {}x{}",
                expected_rows,
                self.cfg.bottleneck.latent_dim(),
                zv.rows(),
                zv.cols()
            )));
        }
        let h = g.matmul(z, vars[self.layout.unproj_w.0])?;
        let h = g.add_bias(h, vars[self.layout.unproj_b.0])?;
        let mut seq = match self.layout.dec_registers {
            Some(rid) => g.concat_rows(&[vars[rid.0], h])?,
            None => h,
        };
        for ids in &self.layout.dec_blocks {
            seq = self.block_forward(g, vars, ids, seq)?;
        }
        let out_tokens = match self.layout.dec_registers {
            Some(_) => g.slice_rows(seq, 0, self.cfg.tokens)?,
            None => seq,
        };
        let flat = g.matmul(out_tokens, vars[self.layout.out_w.0])?;
        let flat = g.add_bias(flat, vars[self.layout.out_b.0])?;
        let mut outs = Vec::with_capacity(self.cfg.layer_dims.len());
        let mut offset = 0;
        for &w in &self.cfg.layer_dims {
            outs.push(g.slice_cols(flat, offset, w)?);
            offset += w;
        }
        Ok(outs)
    }

    /// Writes the checkpoint container: magic, version, config JSON, then
    /// named row-major f64 little-endian arrays in store order.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = BufWriter::new(file);
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        let cfg = serde_json::to_vec(&self.cfg)?;
        w.write_all(&(cfg.len() as u64).to_le_bytes())?;
        w.write_all(&cfg)?;
        w.write_all(&(self.store.len() as u64).to_le_bytes())?;
        for (name, t) in self.store.iter() {
            w.write_all(&(name.len() as u64).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.rows() as u64).to_le_bytes())?;
            w.write_all(&(t.cols() as u64).to_le_bytes())?;
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a checkpoint written by [`Model::save`], validating name and
    /// shape agreement with the stored config.
    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut r = BufReader::new(file);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if magic != *CHECKPOINT_MAGIC {
            return Err(Error::CheckpointFormat("bad magic".into()));
        }
        let mut v4 = [0u8; 4];
        r.read_exact(&mut v4)?;
        let version = u32::from_le_bytes(v4);
        if version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointFormat(format!(
                "unsupported version {version}"
            )));
        }
        let cfg_len = read_u64(&mut r)? as usize;
        let mut cfg_bytes = vec![0u8; cfg_len];
        r.read_exact(&mut cfg_bytes)?;
        let cfg: EncoderConfig = serde_json::from_slice(&cfg_bytes)?;
        // seed is irrelevant here: every tensor is overwritten below
        let mut model = Model::new(cfg, 0)?;
        let n = read_u64(&mut r)? as usize;
        if n != model.store.len() {
            return Err(Error::CheckpointFormat(format!(
                "parameter count {} does not match config-derived layout {}",
                n,
                model.store.len()
            )));
        }
        for _ in 0..n {
            let name_len = read_u64(&mut r)? as usize;
            let mut name_bytes = vec![0u8; name_len];
            r.read_exact(&mut name_bytes)?;
            let name = String::from_utf8(name_bytes)
                .map_err(|_| Error::CheckpointFormat("non-utf8 parameter name".into()))?;
            let rows = read_u64(&mut r)? as usize;
            let cols = read_u64(&mut r)? as usize;
            let id = model
                .store
                .lookup(&name)
                .ok_or_else(|| Error::CheckpointFormat(format!("unknown parameter {name}")))?;
            let slot = model.store.tensor_mut(id);
            if slot.rows() != rows || slot.cols() != cols {
                return Err(Error::CheckpointFormat(format!(
                    "{name}: expected {}x{}, got {rows}x{cols}",
                    slot.rows(),
                    slot.cols()
                )));
            }
            let mut buf = [0u8; 8];
            for v in slot.data_mut() {
                r.read_exact(&mut buf)?;
                *v = f64::from_le_bytes(buf);
            }
        }
        Ok(model)
    }
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"HSVAECK\0";
const CHECKPOINT_VERSION: u32 = 1;

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// sigmoid(x W_g + b_g) * (x W_h + b_h), elementwise.
pub fn gated_projection(
    g: &mut Graph,
    x: Var,
    wg: Var,
    bg: Var,
    wh: Var,
    bh: Var,
) -> Result<Var> {
    let gate_lin = g.matmul(x, wg)?;
    let gate_lin = g.add_bias(gate_lin, bg)?;
    let gate = g.sigmoid(gate_lin);
    let val = g.matmul(x, wh)?;
    let val = g.add_bias(val, bh)?;
    g.mul(gate, val)
}

/// Per-token standardization with optional affine gain and bias rows.
pub fn layer_norm(
    g: &mut Graph,
    x: Var,
    gain: Option<Var>,
    bias: Option<Var>,
    eps: f64,
) -> Result<Var> {
    let mut y = g.layer_norm_rows(x, eps);
    if let Some(gain) = gain {
        y = g.mul_row(y, gain)?;
    }
    if let Some(bias) = bias {
        y = g.add_bias(y, bias)?;
    }
    Ok(y)
}
