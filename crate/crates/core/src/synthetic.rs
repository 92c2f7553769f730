//! Deterministic synthetic patch grids with a planted amount of spatial
//! structure.
//!
//! The lattice is split into 2–4 contiguous blocks, each with its own
//! direction; all block directions and a shared overlay direction are
//! mutually orthonormal. A token is
//! `normalize(s * block_dir + (1 - s) * noise) + overlay_norm * overlay_dir`
//! where `s` is the structure level and `noise` is a seeded unit vector.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ChannelVector, PatchGrid, SegmentMask};
use crate::similarity::norm;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub height: usize,
    pub width: usize,
    pub dim: usize,
    pub structure_level: f64,
    #[serde(default)]
    pub overlay_norm: f64,
    #[serde(default)]
    pub seed: u64,
    /// Number of blocks (2–4); drawn from the seed when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blocks: Option<usize>,
}

impl SyntheticSpec {
    pub fn new(height: usize, width: usize, dim: usize, structure_level: f64) -> Self {
        SyntheticSpec {
            height,
            width,
            dim,
            structure_level,
            overlay_norm: 0.0,
            seed: 0,
            blocks: None,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_overlay(mut self, overlay_norm: f64) -> Self {
        self.overlay_norm = overlay_norm;
        self
    }

    pub fn with_blocks(mut self, blocks: usize) -> Self {
        self.blocks = Some(blocks);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.dim == 0 {
            return Err(Error::Config("synthetic dims must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.structure_level) {
            return Err(Error::Config(format!(
                "structure_level must be in [0, 1], got {}",
                self.structure_level
            )));
        }
        if !(self.overlay_norm.is_finite() && self.overlay_norm >= 0.0) {
            return Err(Error::Config(format!(
                "overlay_norm must be finite and non-negative, got {}",
                self.overlay_norm
            )));
        }
        if let Some(k) = self.blocks {
            if !(2..=4).contains(&k) {
                return Err(Error::Config(format!("blocks must be 2..=4, got {k}")));
            }
        }
        Ok(())
    }
}

/// A generated grid together with the ground truth used to build it.
#[derive(Debug, Clone)]
pub struct SyntheticImage {
    pub grid: PatchGrid,
    /// Block index of every token.
    pub labels: Vec<usize>,
    pub blocks: usize,
    pub block_dirs: Vec<Vec<f64>>,
    pub overlay_dir: Vec<f64>,
}

impl SyntheticImage {
    /// Mask selecting block 0.
    pub fn mask(&self) -> SegmentMask {
        let bits = self.labels.iter().map(|&l| l == 0).collect();
        SegmentMask::new(self.grid.height(), self.grid.width(), bits)
            .expect("labels cover the lattice")
    }

    /// The overlay direction scaled to `norm`, usable as a CLS-like global vector.
    pub fn global_vector(&self, norm: f64) -> ChannelVector {
        ChannelVector::new(self.overlay_dir.iter().map(|v| v * norm).collect()).expect("finite")
    }
}

/// SplitMix64 finaliser, used to derive independent per-image seeds.
pub fn derive_seed(base: u64, counter: u64) -> u64 {
    let mut z = base ^ counter.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn gaussian_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = norm(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// `count` orthonormal vectors via Gram-Schmidt on Gaussian draws.
fn orthonormal_set(rng: &mut ChaCha8Rng, dim: usize, count: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v = gaussian_unit(rng, dim);
        for _ in 0..2 {
            for b in &basis {
                let p: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
            }
        }
        let n = norm(&v);
        if n > 1e-6 {
            basis.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    basis
}

/// Cut points splitting `len` cells into `k` non-empty stripes, jittered by one cell.
fn stripe_cuts(rng: &mut ChaCha8Rng, len: usize, k: usize) -> Vec<usize> {
    let mut cuts = Vec::with_capacity(k - 1);
    let mut prev = 0;
    for i in 1..k {
        let nominal = (len * i) / k;
        let jitter = rng.random_range(-1i64..=1) as isize;
        let hi = len - (k - i);
        let c = (nominal as isize + jitter).clamp((prev + 1) as isize, hi as isize) as usize;
        cuts.push(c);
        prev = c;
    }
    cuts
}

fn stripe_index(cuts: &[usize], x: usize) -> usize {
    cuts.iter().take_while(|&&c| x >= c).count()
}

fn block_layout(rng: &mut ChaCha8Rng, h: usize, w: usize, k: usize) -> Result<Vec<usize>> {
    let infeasible = || {
        Error::Config(format!(
            "a {h}x{w} lattice cannot hold {k} contiguous blocks"
        ))
    };
    let quadrants = k == 4 && h >= 2 && w >= 2;
    if quadrants {
        let rc = stripe_cuts(rng, h, 2)[0];
        let cc = stripe_cuts(rng, w, 2)[0];
        return Ok((0..h * w)
            .map(|t| {
                let (r, c) = (t / w, t % w);
                usize::from(r >= rc) * 2 + usize::from(c >= cc)
            })
            .collect());
    }
    let vertical_ok = w >= k;
    let horizontal_ok = h >= k;
    let along_cols = match (vertical_ok, horizontal_ok) {
        (true, true) => rng.random_bool(0.5),
        (true, false) => true,
        (false, true) => false,
        (false, false) => return Err(infeasible()),
    };
    let len = if along_cols { w } else { h };
    let cuts = stripe_cuts(rng, len, k);
    Ok((0..h * w)
        .map(|t| {
            let x = if along_cols { t % w } else { t / w };
            stripe_index(&cuts, x)
        })
        .collect())
}

pub fn generate_image(spec: &SyntheticSpec) -> Result<SyntheticImage> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let k = match spec.blocks {
        Some(k) => k,
        None => rng.random_range(2..=4),
    };
    if spec.dim < k + 1 {
        return Err(Error::Config(format!(
            "dim {} is too small for {k} orthogonal block directions plus an overlay",
            spec.dim
        )));
    }
    let labels = block_layout(&mut rng, spec.height, spec.width, k)?;
    let mut dirs = orthonormal_set(&mut rng, spec.dim, k + 1);
    let overlay_dir = dirs.pop().expect("k + 1 directions");
    let s = spec.structure_level;
    let mut data = Vec::with_capacity(spec.height * spec.width * spec.dim);
    for &label in &labels {
        let noise = gaussian_unit(&mut rng, spec.dim);
        let mut v: Vec<f64> = dirs[label]
            .iter()
            .zip(&noise)
            .map(|(b, n)| s * b + (1.0 - s) * n)
            .collect();
        let n = norm(&v);
        if n < 1e-12 {
            // s * b and (1 - s) * n cancelled; fall back to the block direction
            v.clone_from(&dirs[label]);
        } else {
            v.iter_mut().for_each(|x| *x /= n);
        }
        data.extend(
            v.iter()
                .zip(&overlay_dir)
                .map(|(x, o)| x + spec.overlay_norm * o),
        );
    }
    let grid = PatchGrid::new(spec.height, spec.width, spec.dim, data)?;
    Ok(SyntheticImage {
        grid,
        labels,
        blocks: k,
        block_dirs: dirs,
        overlay_dir,
    })
}

pub fn generate(spec: &SyntheticSpec) -> Result<PatchGrid> {
    Ok(generate_image(spec)?.grid)
}

/// `count` images sharing `base` except for counter-derived seeds.
pub fn image_set(
    base: &SyntheticSpec,
    count: usize,
    set_index: u64,
) -> Result<Vec<SyntheticImage>> {
    (0..count as u64)
        .map(|i| {
            let spec = SyntheticSpec {
                seed: derive_seed(derive_seed(base.seed, set_index), i),
                ..*base
            };
            generate_image(&spec)
        })
        .collect()
}

/// One image set per structure level, seeds derived by counter from `base.seed`.
pub fn sweep(
    base: &SyntheticSpec,
    levels: &[f64],
    images_per_level: usize,
) -> Result<Vec<(f64, Vec<SyntheticImage>)>> {
    if levels.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Config(
            "sweep levels must be sorted ascending".into(),
        ));
    }
    levels
        .iter()
        .enumerate()
        .map(|(i, &level)| {
            let spec = SyntheticSpec {
                structure_level: level,
                ..*base
            };
            Ok((level, image_set(&spec, images_per_level, i as u64)?))
        })
        .collect()
}

/// Block-structured images with no overlay, used for the global-mixing probe.
pub fn clustered_suite() -> Vec<SyntheticImage> {
    let base = SyntheticSpec::new(8, 8, 16, 0.8).with_seed(0xC1A5);
    image_set(&base, 16, 0).expect("bundled suite spec is valid")
}

/// Block-structured images carrying a shared overlay of norm 1–3.
pub fn overlay_suite() -> Vec<SyntheticImage> {
    [1.0, 1.5, 2.0, 3.0]
        .iter()
        .enumerate()
        .flat_map(|(i, &overlay)| {
            let base = SyntheticSpec::new(8, 8, 16, 0.8)
                .with_seed(0x0E7A)
                .with_overlay(overlay);
            image_set(&base, 4, i as u64).expect("bundled suite spec is valid")
        })
        .collect()
}
