//! Feature transforms that change (or probe) spatial structure: spatial
//! normalisation, global-vector mixing, the 3x3 convolutional projection, the
//! 3-layer MLP projection it replaces, and the patch-wise cosine alignment
//! loss used to exercise them.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_io::{load_tensor, save_tensor, write_atomic};
use crate::grid::{ChannelVector, PatchGrid};
use crate::similarity::{dot, norm, ZERO_NORM};

/// Denominator used by [`spatial_normalize`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormVariant {
    /// `(x - γμ) / (σ + ε)`
    #[default]
    StdPlusEps,
    /// `(x - γμ) / sqrt(σ² + ε)`
    SqrtVarPlusEps,
}

impl FromStr for NormVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "std_plus_eps" | "std-plus-eps" => Ok(NormVariant::StdPlusEps),
            "sqrt_var_plus_eps" | "sqrt-var-plus-eps" => Ok(NormVariant::SqrtVarPlusEps),
            other => Err(Error::Config(format!(
                "unknown normalisation variant {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizeConfig {
    pub gamma: f64,
    pub epsilon: f64,
    pub variant: NormVariant,
}

impl Default for NormalizeConfig {
    fn default() -> Self {
        NormalizeConfig {
            gamma: 0.7,
            epsilon: 1e-6,
            variant: NormVariant::StdPlusEps,
        }
    }
}

impl NormalizeConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.gamma.is_finite() {
            return Err(Error::Config(format!(
                "gamma must be finite, got {}",
                self.gamma
            )));
        }
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(Error::Config(format!(
                "epsilon must be finite and non-negative, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// Per-channel mean and population standard deviation over the tokens.
pub fn channel_stats(grid: &PatchGrid) -> (Vec<f64>, Vec<f64>) {
    let d = grid.dim();
    let t = grid.tokens() as f64;
    let mut mean = vec![0.0; d];
    for tok in grid.iter_tokens() {
        for (m, v) in mean.iter_mut().zip(tok) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= t);
    let mut var = vec![0.0; d];
    for tok in grid.iter_tokens() {
        for ((s, v), m) in var.iter_mut().zip(tok).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std = var.into_iter().map(|s| (s / t).sqrt()).collect();
    (mean, std)
}

/// Centres each channel by `γ` times its spatial mean and divides by its
/// spatial spread, as selected by `cfg.variant`.
pub fn spatial_normalize(grid: &PatchGrid, cfg: &NormalizeConfig) -> Result<PatchGrid> {
    cfg.validate()?;
    if grid.tokens() < 2 {
        return Err(Error::Degenerate(
            "spatial normalisation needs at least 2 tokens".into(),
        ));
    }
    let (mean, std) = channel_stats(grid);
    let denom: Vec<f64> = std
        .iter()
        .map(|&s| match cfg.variant {
            NormVariant::StdPlusEps => s + cfg.epsilon,
            NormVariant::SqrtVarPlusEps => (s * s + cfg.epsilon).sqrt(),
        })
        .collect();
    if let Some(c) = denom.iter().position(|&d| d == 0.0) {
        return Err(Error::Degenerate(format!(
            "channel {c} is constant and epsilon is 0"
        )));
    }
    grid.map_tokens(grid.dim(), |_, src, dst| {
        for (k, out) in dst.iter_mut().enumerate() {
            *out = (src[k] - cfg.gamma * mean[k]) / denom[k];
        }
    })
}

/// Adds `alpha * vector` to every token.
pub fn mix_global(grid: &PatchGrid, vector: &ChannelVector, alpha: f64) -> Result<PatchGrid> {
    if vector.dim() != grid.dim() {
        return Err(Error::DimMismatch {
            expected: grid.dim(),
            found: vector.dim(),
        });
    }
    if !alpha.is_finite() {
        return Err(Error::Config(format!("alpha must be finite, got {alpha}")));
    }
    if alpha == 0.0 {
        return Ok(grid.clone());
    }
    let c = vector.values();
    grid.map_tokens(grid.dim(), |_, src, dst| {
        for ((o, p), ck) in dst.iter_mut().zip(src).zip(c) {
            *o = p + alpha * ck;
        }
    })
}

/// Channel-wise mean over all tokens.
pub fn mean_patch_vector(grid: &PatchGrid) -> ChannelVector {
    ChannelVector::new(channel_stats(grid).0).expect("mean of finite values is finite")
}

fn seeded_uniform(rng: &mut ChaCha8Rng, n: usize, fan_in: usize) -> Vec<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    (0..n).map(|_| rng.random_range(-bound..=bound)).collect()
}

fn check_finite(name: &str, v: &[f64]) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(Error::Config(format!(
            "{name}: non-finite value at element {i}"
        ))),
        None => Ok(()),
    }
}

/// Parameters of a 3x3, padding 1, stride 1 convolution.
///
/// `kernel` has shape `(3, 3, in_dim, out_dim)` in C order.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvWeights {
    in_dim: usize,
    out_dim: usize,
    kernel: Vec<f64>,
    bias: Vec<f64>,
}

impl ConvWeights {
    pub fn new(in_dim: usize, out_dim: usize, kernel: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::Config("conv dims must be positive".into()));
        }
        if kernel.len() != 9 * in_dim * out_dim {
            return Err(Error::Shape(format!(
                "conv kernel must have 3*3*{in_dim}*{out_dim} elements, got {}",
                kernel.len()
            )));
        }
        if bias.len() != out_dim {
            return Err(Error::DimMismatch {
                expected: out_dim,
                found: bias.len(),
            });
        }
        check_finite("conv kernel", &kernel)?;
        check_finite("conv bias", &bias)?;
        Ok(ConvWeights {
            in_dim,
            out_dim,
            kernel,
            bias,
        })
    }

    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` with `fan_in = 9 * in_dim`.
    pub fn init_seeded(in_dim: usize, out_dim: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fan_in = 9 * in_dim.max(1);
        let kernel = seeded_uniform(&mut rng, 9 * in_dim * out_dim, fan_in);
        let bias = seeded_uniform(&mut rng, out_dim, fan_in);
        Self::new(in_dim, out_dim, kernel, bias)
    }

    /// Kernel whose centre tap is the identity and all other taps are zero.
    pub fn identity(dim: usize) -> Result<Self> {
        let mut kernel = vec![0.0; 9 * dim * dim];
        for i in 0..dim {
            kernel[(4 * dim + i) * dim + i] = 1.0;
        }
        Self::new(dim, dim, kernel, vec![0.0; dim])
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn kernel(&self) -> &[f64] {
        &self.kernel
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    /// Weight for tap `(ky, kx)`, input channel `i`, output channel `o`.
    pub fn tap(&self, ky: usize, kx: usize, i: usize, o: usize) -> f64 {
        self.kernel[((ky * 3 + kx) * self.in_dim + i) * self.out_dim + o]
    }
}

/// Zero-padded 3x3 cross-correlation over the patch lattice.
pub fn conv_project(grid: &PatchGrid, w: &ConvWeights) -> Result<PatchGrid> {
    if grid.dim() != w.in_dim {
        return Err(Error::DimMismatch {
            expected: w.in_dim,
            found: grid.dim(),
        });
    }
    let (h, wd) = (grid.height() as isize, grid.width() as isize);
    let (din, dout) = (w.in_dim, w.out_dim);
    let mut out = Vec::with_capacity(grid.tokens() * dout);
    for r in 0..h {
        for c in 0..wd {
            let mut acc = w.bias.clone();
            for ky in 0..3 {
                let rr = r + ky as isize - 1;
                if rr < 0 || rr >= h {
                    continue;
                }
                for kx in 0..3 {
                    let cc = c + kx as isize - 1;
                    if cc < 0 || cc >= wd {
                        continue;
                    }
                    let x = grid.token_at(rr as usize, cc as usize);
                    let base = (ky * 3 + kx) * din;
                    for (i, &xi) in x.iter().enumerate() {
                        let row = &w.kernel[(base + i) * dout..(base + i + 1) * dout];
                        for (a, &k) in acc.iter_mut().zip(row) {
                            *a += xi * k;
                        }
                    }
                }
            }
            out.extend_from_slice(&acc);
        }
    }
    PatchGrid::new(grid.height(), grid.width(), dout, out)
}

/// A dense layer `y = x W + b` with `W` stored `(in_dim, out_dim)` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn new(in_dim: usize, out_dim: usize, weight: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::Config("layer dims must be positive".into()));
        }
        if weight.len() != in_dim * out_dim {
            return Err(Error::Shape(format!(
                "layer weight must have {in_dim}*{out_dim} elements, got {}",
                weight.len()
            )));
        }
        if bias.len() != out_dim {
            return Err(Error::DimMismatch {
                expected: out_dim,
                found: bias.len(),
            });
        }
        check_finite("layer weight", &weight)?;
        check_finite("layer bias", &bias)?;
        Ok(DenseLayer {
            in_dim,
            out_dim,
            weight,
            bias,
        })
    }

    fn forward(&self, x: &[f64], y: &mut [f64]) {
        y.copy_from_slice(&self.bias);
        for (i, &xi) in x.iter().enumerate() {
            let row = &self.weight[i * self.out_dim..(i + 1) * self.out_dim];
            for (a, &w) in y.iter_mut().zip(row) {
                *a += xi * w;
            }
        }
    }
}

/// SiLU: `u * sigmoid(u)`.
pub fn silu(u: f64) -> f64 {
    u / (1.0 + (-u).exp())
}

/// Three dense layers `D_in -> h -> h -> D_out` with SiLU after the first two.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpWeights {
    layers: [DenseLayer; 3],
}

impl MlpWeights {
    pub fn new(layers: [DenseLayer; 3]) -> Result<Self> {
        let [l1, l2, l3] = &layers;
        if l1.out_dim != l2.in_dim || l2.in_dim != l2.out_dim || l2.out_dim != l3.in_dim {
            return Err(Error::Config(format!(
                "MLP dims must chain D_in -> h -> h -> D_out, got {}->{}, {}->{}, {}->{}",
                l1.in_dim, l1.out_dim, l2.in_dim, l2.out_dim, l3.in_dim, l3.out_dim
            )));
        }
        Ok(MlpWeights { layers })
    }

    pub fn init_seeded(in_dim: usize, hidden: usize, out_dim: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layer = |i: usize, o: usize| {
            let w = seeded_uniform(&mut rng, i * o, i.max(1));
            let b = seeded_uniform(&mut rng, o, i.max(1));
            DenseLayer::new(i, o, w, b)
        };
        Self::new([
            layer(in_dim, hidden)?,
            layer(hidden, hidden)?,
            layer(hidden, out_dim)?,
        ])
    }

    pub fn layers(&self) -> &[DenseLayer; 3] {
        &self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn hidden(&self) -> usize {
        self.layers[0].out_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers[2].out_dim
    }
}

/// Default hidden width when none is given.
pub fn default_mlp_hidden(in_dim: usize, out_dim: usize) -> usize {
    in_dim.max(out_dim)
}

/// Applies the MLP independently to every token.
pub fn mlp_project(grid: &PatchGrid, w: &MlpWeights) -> Result<PatchGrid> {
    if grid.dim() != w.in_dim() {
        return Err(Error::DimMismatch {
            expected: w.in_dim(),
            found: grid.dim(),
        });
    }
    let [l1, l2, l3] = &w.layers;
    let mut h1 = vec![0.0; l1.out_dim];
    let mut h2 = vec![0.0; l2.out_dim];
    grid.map_tokens(l3.out_dim, |_, x, y| {
        l1.forward(x, &mut h1);
        h1.iter_mut().for_each(|v| *v = silu(*v));
        l2.forward(&h1, &mut h2);
        h2.iter_mut().for_each(|v| *v = silu(*v));
        l3.forward(&h2, y);
    })
}

/// Negative mean patch-wise cosine similarity and its gradient with respect
/// to `pred`.
pub fn alignment_loss_and_grad(pred: &PatchGrid, target: &PatchGrid) -> Result<(f64, PatchGrid)> {
    if (pred.height(), pred.width()) != (target.height(), target.width()) {
        return Err(Error::Shape(format!(
            "pred is {}x{} but target is {}x{}",
            pred.height(),
            pred.width(),
            target.height(),
            target.width()
        )));
    }
    if pred.dim() != target.dim() {
        return Err(Error::DimMismatch {
            expected: target.dim(),
            found: pred.dim(),
        });
    }
    let t_count = pred.tokens() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(pred.data().len());
    for (t, (p, y)) in pred.iter_tokens().zip(target.iter_tokens()).enumerate() {
        let (np, ny) = (norm(p), norm(y));
        if np < ZERO_NORM || ny < ZERO_NORM {
            return Err(Error::ZeroToken { index: t });
        }
        let cos = dot(p, y) / (np * ny);
        loss -= cos;
        grad.extend(
            p.iter()
                .zip(y)
                .map(|(pk, yk)| -(yk / (np * ny) - cos * pk / (np * np)) / t_count),
        );
    }
    Ok((
        loss / t_count,
        PatchGrid::new(pred.height(), pred.width(), pred.dim(), grad)?,
    ))
}

/// Either projection, as loaded from a weights manifest.
#[derive(Debug, Clone, PartialEq)]
pub enum ProjectionWeights {
    Conv(ConvWeights),
    Mlp(MlpWeights),
}

#[derive(Debug, Serialize, Deserialize)]
struct WeightsManifest {
    #[serde(rename = "type")]
    kind: String,
    tensors: std::collections::BTreeMap<String, PathBuf>,
    dims: std::collections::BTreeMap<String, usize>,
}

fn manifest_dir(path: &Path) -> &Path {
    path.parent().unwrap_or(Path::new("."))
}

fn tensor_of(m: &WeightsManifest, dir: &Path, name: &str, shape: &[usize]) -> Result<Vec<f64>> {
    let rel = m
        .tensors
        .get(name)
        .ok_or_else(|| Error::Config(format!("weights manifest lacks tensor {name:?}")))?;
    let t = load_tensor(&dir.join(rel))?;
    if t.shape != shape {
        return Err(Error::Shape(format!(
            "tensor {name:?} has shape {:?}, expected {shape:?}",
            t.shape
        )));
    }
    Ok(t.data)
}

fn dim_of(m: &WeightsManifest, name: &str) -> Result<usize> {
    m.dims
        .get(name)
        .copied()
        .ok_or_else(|| Error::Config(format!("weights manifest lacks dim {name:?}")))
}

/// Loads projection weights from a JSON manifest
/// `{"type": "conv"|"mlp", "tensors": {name: path}, "dims": {...}}`.
/// Tensor paths are relative to the manifest's directory.
pub fn load_weights(manifest: &Path) -> Result<ProjectionWeights> {
    let text = std::fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
    let m: WeightsManifest = serde_json::from_str(&text).map_err(|source| Error::Json {
        context: format!("parsing weights manifest {}", manifest.display()),
        source,
    })?;
    let dir = manifest_dir(manifest);
    match m.kind.as_str() {
        "conv" => {
            let (i, o) = (dim_of(&m, "in_dim")?, dim_of(&m, "out_dim")?);
            let kernel = tensor_of(&m, dir, "kernel", &[3, 3, i, o])?;
            let bias = tensor_of(&m, dir, "bias", &[o])?;
            Ok(ProjectionWeights::Conv(ConvWeights::new(
                i, o, kernel, bias,
            )?))
        }
        "mlp" => {
            let (i, h, o) = (
                dim_of(&m, "in_dim")?,
                dim_of(&m, "hidden")?,
                dim_of(&m, "out_dim")?,
            );
            let shapes = [(i, h), (h, h), (h, o)];
            let mut layers = Vec::with_capacity(3);
            for (n, &(a, b)) in shapes.iter().enumerate() {
                let w = tensor_of(&m, dir, &format!("w{}", n + 1), &[a, b])?;
                let bias = tensor_of(&m, dir, &format!("b{}", n + 1), &[b])?;
                layers.push(DenseLayer::new(a, b, w, bias)?);
            }
            let layers: [DenseLayer; 3] = layers.try_into().expect("three layers");
            Ok(ProjectionWeights::Mlp(MlpWeights::new(layers)?))
        }
        other => Err(Error::Config(format!("unknown weights type {other:?}"))),
    }
}

/// Writes the weights as NPY tensors next to `manifest` plus the manifest itself.
pub fn save_weights(weights: &ProjectionWeights, manifest: &Path) -> Result<()> {
    let dir = manifest_dir(manifest);
    let stem = manifest
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "weights".into());
    let mut tensors = std::collections::BTreeMap::new();
    let mut dims = std::collections::BTreeMap::new();
    let mut put = |name: &str, shape: &[usize], data: &[f64]| -> Result<()> {
        let file = PathBuf::from(format!("{stem}.{name}.npy"));
        save_tensor(&dir.join(&file), shape, data)?;
        tensors.insert(name.to_string(), file);
        Ok(())
    };
    let kind = match weights {
        ProjectionWeights::Conv(w) => {
            put("kernel", &[3, 3, w.in_dim, w.out_dim], &w.kernel)?;
            put("bias", &[w.out_dim], &w.bias)?;
            dims.insert("in_dim".to_string(), w.in_dim);
            dims.insert("out_dim".to_string(), w.out_dim);
            "conv"
        }
        ProjectionWeights::Mlp(w) => {
            for (n, l) in w.layers.iter().enumerate() {
                put(&format!("w{}", n + 1), &[l.in_dim, l.out_dim], &l.weight)?;
                put(&format!("b{}", n + 1), &[l.out_dim], &l.bias)?;
            }
            dims.insert("in_dim".to_string(), w.in_dim());
            dims.insert("hidden".to_string(), w.hidden());
            dims.insert("out_dim".to_string(), w.out_dim());
            "mlp"
        }
    };
    let m = WeightsManifest {
        kind: kind.into(),
        tensors,
        dims,
    };
    let text = crate::report::to_json_pretty(&m, "serialising weights manifest")?;
    write_atomic(manifest, text.as_bytes())
}
