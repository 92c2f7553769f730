use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;
use ssm_core::feature_io::{list_feature_files, load_channel_vector, npy::encode_f64};
use ssm_core::transforms::{
    conv_project, default_mlp_hidden, load_weights, mean_patch_vector, mix_global, mlp_project,
    save_weights, spatial_normalize, ConvWeights, MlpWeights, NormVariant, NormalizeConfig,
    ProjectionWeights,
};
use ssm_core::{ChannelVector, PatchGrid, RunManifest};

use super::{load_grid, parse_grid_size};
use crate::output::{display_path, Outputs};
use crate::Globals;

#[derive(clap::Args, Debug)]
pub struct Args {
    #[command(subcommand)]
    pub op: Op,
}

#[derive(clap::Args, Debug)]
pub struct Input {
    /// Feature grid (`.npy`) or a directory of them
    pub input: PathBuf,

    /// Lattice size for flat (T, D) feature files
    #[arg(long, value_parser = parse_grid_size)]
    pub grid: Option<(usize, usize)>,
}

#[derive(clap::Subcommand, Debug)]
pub enum Op {
    /// Per-channel spatial normalisation
    Normalize {
        #[command(flatten)]
        input: Input,
        #[arg(long, default_value_t = 0.7)]
        gamma: f64,
        #[arg(long, default_value_t = 1e-6)]
        eps: f64,
        /// std-plus-eps or sqrt-var-plus-eps
        #[arg(long, default_value = "std-plus-eps")]
        variant: NormVariant,
    },
    /// Add `alpha * vector` to every token
    Mix {
        #[command(flatten)]
        input: Input,
        /// Mixing strength
        #[arg(long)]
        alpha: f64,
        /// `.npy` vector of length D, or `mean` for each grid's mean patch token
        #[arg(long)]
        vector: String,
    },
    /// 3x3 convolutional projection with zero padding
    ConvProject {
        #[command(flatten)]
        input: Input,
        /// Weights manifest; seeded initialisation when absent
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Output dim for seeded initialisation (default: input dim)
        #[arg(long)]
        out_dim: Option<usize>,
        /// Also write the weights used to this manifest path
        #[arg(long)]
        save_weights: Option<PathBuf>,
    },
    /// Token-wise 3-layer MLP projection
    MlpProject {
        #[command(flatten)]
        input: Input,
        /// Weights manifest; seeded initialisation when absent
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Output dim for seeded initialisation (default: input dim)
        #[arg(long)]
        out_dim: Option<usize>,
        /// Hidden width for seeded initialisation (default: max(in, out))
        #[arg(long)]
        hidden: Option<usize>,
        /// Also write the weights used to this manifest path
        #[arg(long)]
        save_weights: Option<PathBuf>,
    },
}

impl Op {
    fn input(&self) -> &Input {
        match self {
            Op::Normalize { input, .. }
            | Op::Mix { input, .. }
            | Op::ConvProject { input, .. }
            | Op::MlpProject { input, .. } => input,
        }
    }
}

#[derive(Serialize)]
#[serde(tag = "op", rename_all = "kebab-case")]
enum ResolvedConfig {
    Normalize {
        normalize: NormalizeConfig,
        grid: Option<(usize, usize)>,
    },
    Mix {
        alpha: f64,
        vector: String,
        grid: Option<(usize, usize)>,
    },
    ConvProject {
        weights: Option<String>,
        init_seed: Option<u64>,
        in_dim: usize,
        out_dim: usize,
        grid: Option<(usize, usize)>,
    },
    MlpProject {
        weights: Option<String>,
        init_seed: Option<u64>,
        in_dim: usize,
        hidden: usize,
        out_dim: usize,
        grid: Option<(usize, usize)>,
    },
}

enum Vector {
    Fixed(ChannelVector),
    MeanPatch,
}

enum Prepared {
    Normalize(NormalizeConfig),
    Mix(f64, Vector),
    Project(ProjectionWeights),
}

impl Prepared {
    fn apply(&self, grid: &PatchGrid) -> ssm_core::Result<PatchGrid> {
        match self {
            Prepared::Normalize(cfg) => spatial_normalize(grid, cfg),
            Prepared::Mix(alpha, Vector::Fixed(v)) => mix_global(grid, v, *alpha),
            Prepared::Mix(alpha, Vector::MeanPatch) => {
                mix_global(grid, &mean_patch_vector(grid), *alpha)
            }
            Prepared::Project(ProjectionWeights::Conv(w)) => conv_project(grid, w),
            Prepared::Project(ProjectionWeights::Mlp(w)) => mlp_project(grid, w),
        }
    }
}

fn load_projection(path: &Path) -> Result<ProjectionWeights> {
    load_weights(path).with_context(|| format!("loading weights {}", path.display()))
}

/// Resolves the operation against the input dim `in_dim`.
fn prepare(
    op: &Op,
    in_dim: usize,
    seed: u64,
) -> Result<(Prepared, ResolvedConfig, Vec<u64>, Option<PathBuf>)> {
    let grid = op.input().grid;
    Ok(match op {
        Op::Normalize {
            gamma,
            eps,
            variant,
            ..
        } => {
            let cfg = NormalizeConfig {
                gamma: *gamma,
                epsilon: *eps,
                variant: *variant,
            };
            cfg.validate()?;
            (
                Prepared::Normalize(cfg),
                ResolvedConfig::Normalize {
                    normalize: cfg,
                    grid,
                },
                vec![],
                None,
            )
        }
        Op::Mix { alpha, vector, .. } => {
            let v = if vector == "mean" {
                Vector::MeanPatch
            } else {
                let p = Path::new(vector);
                Vector::Fixed(
                    load_channel_vector(p).with_context(|| format!("loading vector {vector}"))?,
                )
            };
            let resolved = ResolvedConfig::Mix {
                alpha: *alpha,
                vector: vector.clone(),
                grid,
            };
            (Prepared::Mix(*alpha, v), resolved, vec![], None)
        }
        Op::ConvProject {
            weights,
            out_dim,
            save_weights,
            ..
        } => {
            let (w, init_seed) = match weights {
                Some(p) => match load_projection(p)? {
                    ProjectionWeights::Conv(w) => (w, None),
                    ProjectionWeights::Mlp(_) => {
                        bail!("{} holds MLP weights, expected conv", p.display())
                    }
                },
                None => (
                    ConvWeights::init_seeded(in_dim, out_dim.unwrap_or(in_dim), seed)?,
                    Some(seed),
                ),
            };
            let resolved = ResolvedConfig::ConvProject {
                weights: weights.as_deref().map(display_path),
                init_seed,
                in_dim: w.in_dim(),
                out_dim: w.out_dim(),
                grid,
            };
            let seeds = init_seed.into_iter().collect();
            (
                Prepared::Project(ProjectionWeights::Conv(w)),
                resolved,
                seeds,
                save_weights.clone(),
            )
        }
        Op::MlpProject {
            weights,
            out_dim,
            hidden,
            save_weights,
            ..
        } => {
            let (w, init_seed) = match weights {
                Some(p) => match load_projection(p)? {
                    ProjectionWeights::Mlp(w) => (w, None),
                    ProjectionWeights::Conv(_) => {
                        bail!("{} holds conv weights, expected mlp", p.display())
                    }
                },
                None => {
                    let out = out_dim.unwrap_or(in_dim);
                    let h = hidden.unwrap_or_else(|| default_mlp_hidden(in_dim, out));
                    (MlpWeights::init_seeded(in_dim, h, out, seed)?, Some(seed))
                }
            };
            let resolved = ResolvedConfig::MlpProject {
                weights: weights.as_deref().map(display_path),
                init_seed,
                in_dim: w.in_dim(),
                hidden: w.hidden(),
                out_dim: w.out_dim(),
                grid,
            };
            let seeds = init_seed.into_iter().collect();
            (
                Prepared::Project(ProjectionWeights::Mlp(w)),
                resolved,
                seeds,
                save_weights.clone(),
            )
        }
    })
}

fn command_name(op: &Op) -> &'static str {
    match op {
        Op::Normalize { .. } => "transform normalize",
        Op::Mix { .. } => "transform mix",
        Op::ConvProject { .. } => "transform conv-project",
        Op::MlpProject { .. } => "transform mlp-project",
    }
}

fn grid_bytes(g: &PatchGrid) -> Vec<u8> {
    encode_f64(&[g.height(), g.width(), g.dim()], g.data())
}

pub fn run(args: &Args, g: &Globals) -> Result<()> {
    let out = g.out()?;
    let input = args.op.input();
    let seed = g.seed.unwrap_or(0);
    let is_dir = input.input.is_dir();
    let sources: Vec<(String, PathBuf)> = if is_dir {
        let files = list_feature_files(&input.input)
            .with_context(|| format!("listing {}", input.input.display()))?;
        if files.is_empty() {
            bail!("no .npy files in {}", input.input.display());
        }
        files
    } else {
        vec![(String::new(), input.input.clone())]
    };

    let pool = g.pool()?;
    let grids: Vec<PatchGrid> = pool.install(|| {
        sources
            .par_iter()
            .map(|(_, p)| load_grid(p, input.grid))
            .collect::<Result<_>>()
    })?;
    let (prepared, resolved, seeds, weights_out) = prepare(&args.op, grids[0].dim(), seed)?;
    let results: Vec<PatchGrid> = pool.install(|| {
        grids
            .par_iter()
            .zip(&sources)
            .map(|(grid, (_, p))| {
                prepared
                    .apply(grid)
                    .with_context(|| format!("transforming {}", p.display()))
            })
            .collect::<Result<_>>()
    })?;

    let manifest = RunManifest::new(command_name(&args.op), &resolved)?
        .with_inputs(sources.iter().map(|(_, p)| display_path(p)))
        .with_seeds(seeds);
    let mut outputs = Outputs::new();
    if is_dir {
        for ((stem, _), grid) in sources.iter().zip(&results) {
            outputs.add(out.join(format!("{stem}.npy")), grid_bytes(grid));
        }
        outputs.add(out.join("manifest.json"), manifest.to_json()?);
    } else {
        outputs.add_with_sidecar(out, grid_bytes(&results[0]), &manifest)?;
    }
    if let (Some(path), Prepared::Project(w)) = (weights_out, &prepared) {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)
                .with_context(|| format!("creating directory {}", dir.display()))?;
        }
        save_weights(w, &path).with_context(|| format!("saving weights {}", path.display()))?;
    }
    outputs.commit()
}
