use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::info;
use rayon::prelude::*;
use serde::Serialize;
use ssm_core::feature_io::{list_feature_files, load_mask};
use ssm_core::metrics::{cds_from_correlogram, lds_from_correlogram, rmsc, srss};
use ssm_core::{
    aggregate_metric, correlogram, MetricConfig, MetricName, PatchGrid, RunManifest, SegmentMask,
};

use super::{load_grid, parse_grid_size};
use crate::output::{display_path, Outputs};
use crate::Globals;

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Directory of `.npy` feature grids; image id = file stem
    pub features_dir: PathBuf,

    /// Comma-separated metrics: lds, cds, srss, rmsc
    #[arg(long, value_delimiter = ',', default_value = "lds,cds,rmsc")]
    pub metrics: Vec<MetricName>,

    /// Directory of `.npy` masks named like the feature files (needed for srss)
    #[arg(long)]
    pub masks: Option<PathBuf>,

    /// Lattice size for flat (T, D) feature files
    #[arg(long, value_parser = parse_grid_size)]
    pub grid: Option<(usize, usize)>,

    /// Near-band radius (default: ceil(min(H, W) / 2))
    #[arg(long)]
    pub r_near: Option<usize>,

    /// Far-band radius (default: same as r-near)
    #[arg(long)]
    pub r_far: Option<usize>,

    /// Largest distance in the decay fit (default: H + W - 2)
    #[arg(long)]
    pub cds_delta_max: Option<usize>,

    /// SRSS triplets per image (default: 1024)
    #[arg(long)]
    pub srss_triplets: Option<usize>,

    /// Encoder id recorded in the reports (default: features_dir basename)
    #[arg(long)]
    pub encoder_id: Option<String>,
}

#[derive(Serialize)]
struct ResolvedConfig<'a> {
    encoder_id: &'a str,
    metrics: &'a [MetricName],
    grid: Option<(usize, usize)>,
    masks: Option<String>,
    metric_config: MetricConfig,
}

struct Image {
    id: String,
    grid: PatchGrid,
    mask: Option<SegmentMask>,
}

fn encoder_id(args: &Args) -> Result<String> {
    if let Some(id) = &args.encoder_id {
        return Ok(id.clone());
    }
    let dir = args
        .features_dir
        .canonicalize()
        .unwrap_or_else(|_| args.features_dir.clone());
    dir.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .context("cannot derive an encoder id from the features directory; pass --encoder-id")
}

fn load_image(
    id: &str,
    path: &Path,
    masks: Option<&Path>,
    hint: Option<(usize, usize)>,
) -> Result<Image> {
    let grid = load_grid(path, hint)?;
    let mask = match masks {
        Some(dir) => {
            let mpath = dir.join(format!("{id}.npy"));
            let m =
                load_mask(&mpath).with_context(|| format!("loading mask {}", mpath.display()))?;
            if (m.height(), m.width()) != (grid.height(), grid.width()) {
                bail!(
                    "mask {} is {}x{} but features {} are {}x{}",
                    mpath.display(),
                    m.height(),
                    m.width(),
                    path.display(),
                    grid.height(),
                    grid.width()
                );
            }
            Some(m)
        }
        None => None,
    };
    Ok(Image {
        id: id.to_string(),
        grid,
        mask,
    })
}

fn evaluate_image(img: &Image, metrics: &[MetricName], cfg: &MetricConfig) -> Result<Vec<f64>> {
    let corr = if metrics
        .iter()
        .any(|m| matches!(m, MetricName::Lds | MetricName::Cds))
    {
        Some(correlogram(&img.grid)?)
    } else {
        None
    };
    metrics
        .iter()
        .map(|&m| {
            let v = match m {
                MetricName::Lds => {
                    lds_from_correlogram(corr.as_ref().expect("computed above"), cfg)
                }
                MetricName::Cds => {
                    cds_from_correlogram(corr.as_ref().expect("computed above"), cfg)
                }
                MetricName::Rmsc => rmsc(&img.grid),
                MetricName::Srss => srss(&img.grid, img.mask.as_ref().expect("masks checked"), cfg),
            };
            v.with_context(|| format!("{m} on image {}", img.id))
        })
        .collect()
}

pub fn run(args: &Args, g: &Globals) -> Result<()> {
    let out_dir = g.out()?;
    let mut metrics: Vec<MetricName> = Vec::new();
    for &m in &args.metrics {
        if !metrics.contains(&m) {
            metrics.push(m);
        }
    }
    if metrics.is_empty() {
        bail!("no metrics requested");
    }
    if metrics.contains(&MetricName::Srss) && args.masks.is_none() {
        bail!("srss requires --masks");
    }
    let files = list_feature_files(&args.features_dir)
        .with_context(|| format!("listing {}", args.features_dir.display()))?;
    if files.is_empty() {
        bail!("no .npy files in {}", args.features_dir.display());
    }
    let masks = metrics
        .contains(&MetricName::Srss)
        .then_some(args.masks.as_deref())
        .flatten();
    let pool = g.pool()?;

    let images: Vec<Image> = pool.install(|| {
        files
            .par_iter()
            .map(|(id, path)| load_image(id, path, masks, args.grid))
            .collect::<Result<_>>()
    })?;
    let (h, w) = (images[0].grid.height(), images[0].grid.width());
    if let Some(bad) = images
        .iter()
        .find(|i| (i.grid.height(), i.grid.width()) != (h, w))
    {
        bail!(
            "image {} is {}x{} but {} is {h}x{w}; all grids of one run must share a lattice",
            bad.id,
            bad.grid.height(),
            bad.grid.width(),
            images[0].id
        );
    }

    let mut cfg = MetricConfig::for_lattice(h, w);
    cfg.r_near = args.r_near.unwrap_or(cfg.r_near);
    cfg.r_far = args.r_far.unwrap_or(cfg.r_far);
    cfg.cds_delta_max = args.cds_delta_max.unwrap_or(cfg.cds_delta_max);
    cfg.srss_triplets = args.srss_triplets.unwrap_or(cfg.srss_triplets);
    cfg.srss_seed = g.seed.unwrap_or(0);
    cfg.validate()?;
    info!("{} images, {h}x{w} lattice, config {cfg:?}", images.len());

    let values: Vec<Vec<f64>> = pool.install(|| {
        images
            .par_iter()
            .map(|img| evaluate_image(img, &metrics, &cfg))
            .collect::<Result<_>>()
    })?;

    let encoder = encoder_id(args)?;
    let resolved = ResolvedConfig {
        encoder_id: &encoder,
        metrics: &metrics,
        grid: args.grid,
        masks: masks.map(display_path),
        metric_config: cfg,
    };
    let mut inputs: Vec<String> = files.iter().map(|(_, p)| display_path(p)).collect();
    if let Some(dir) = masks {
        inputs.extend(
            files
                .iter()
                .map(|(id, _)| display_path(&dir.join(format!("{id}.npy")))),
        );
    }
    let manifest = RunManifest::new("metrics", &resolved)?
        .with_inputs(inputs)
        .with_seeds(metrics.contains(&MetricName::Srss).then_some(cfg.srss_seed));

    let mut outputs = Outputs::new();
    for (k, &m) in metrics.iter().enumerate() {
        let per_image = images
            .iter()
            .zip(&values)
            .map(|(img, v)| (img.id.clone(), v[k]))
            .collect();
        let report = aggregate_metric(per_image, &encoder, m, &cfg)?;
        info!(
            "{m}: mean {} std {}",
            report.aggregate_mean, report.aggregate_std
        );
        let name = format!("{}.json", m.as_str().to_ascii_lowercase());
        outputs.add(out_dir.join(name), report.to_json(Some(&manifest))?);
    }
    outputs.commit()
}
