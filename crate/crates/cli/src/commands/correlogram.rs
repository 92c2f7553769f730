use std::path::PathBuf;

use anyhow::{Context, Result};
use serde::Serialize;
use ssm_core::{correlogram, RunManifest};

use super::{load_grid, parse_grid_size};
use crate::output::{display_path, Outputs};
use crate::Globals;

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Feature grid (`.npy`)
    pub features: PathBuf,

    /// Lattice size for a flat (T, D) feature file
    #[arg(long, value_parser = parse_grid_size)]
    pub grid: Option<(usize, usize)>,
}

#[derive(Serialize)]
struct ResolvedConfig {
    grid: Option<(usize, usize)>,
}

/// Writes `delta,g,count` rows to `--out` plus a manifest sidecar.
pub fn run(args: &Args, g: &Globals) -> Result<()> {
    let out = g.out()?;
    let grid = load_grid(&args.features, args.grid)?;
    let corr = correlogram(&grid)
        .with_context(|| format!("correlogram of {}", args.features.display()))?;
    let manifest = RunManifest::new("correlogram", &ResolvedConfig { grid: args.grid })?
        .with_inputs([display_path(&args.features)]);
    let mut outputs = Outputs::new();
    outputs.add_with_sidecar(out, corr.to_csv(), &manifest)?;
    outputs.commit()
}
