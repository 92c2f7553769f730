//! Spatial-structure metrics over a single patch grid, and their aggregation
//! across an image set.
//!
//! - **LDS**: mean similarity of near pairs (`0 < d < r_near`) minus mean
//!   similarity of far pairs (`d >= r_far`).
//! - **CDS**: negated least-squares slope of the correlogram over
//!   `δ ∈ {1, …, cds_delta_max}`, one equally weighted point per class.
//! - **SRSS**: expected cosine gap between (anchor, positive) pairs inside an
//!   object mask and (anchor, negative) pairs across it.
//! - **RMSC**: RMS deviation of unit-normalised tokens from their mean.
//!
//! Self-pairs never contribute to any metric.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::linfit;
use crate::error::{Error, Result};
use crate::grid::{PatchGrid, SegmentMask};
use crate::report::{to_json_pretty, RunManifest, F17};
use crate::similarity::{correlogram, dot, unit_tokens, Correlogram};

/// Rejected draws allowed per SRSS triplet before giving up.
pub const SRSS_MAX_REJECTIONS: usize = 10_000;
pub const DEFAULT_SRSS_TRIPLETS: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MetricName {
    #[serde(rename = "LDS")]
    Lds,
    #[serde(rename = "CDS")]
    Cds,
    #[serde(rename = "SRSS")]
    Srss,
    #[serde(rename = "RMSC")]
    Rmsc,
}

impl MetricName {
    pub const ALL: [MetricName; 4] = [
        MetricName::Lds,
        MetricName::Cds,
        MetricName::Srss,
        MetricName::Rmsc,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MetricName::Lds => "LDS",
            MetricName::Cds => "CDS",
            MetricName::Srss => "SRSS",
            MetricName::Rmsc => "RMSC",
        }
    }

    pub fn needs_mask(self) -> bool {
        self == MetricName::Srss
    }
}

impl fmt::Display for MetricName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetricName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lds" => Ok(MetricName::Lds),
            "cds" => Ok(MetricName::Cds),
            "srss" => Ok(MetricName::Srss),
            "rmsc" => Ok(MetricName::Rmsc),
            other => Err(Error::Config(format!("unknown metric {other:?}"))),
        }
    }
}

/// Radii, line-fit range and SRSS sampling parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub r_near: usize,
    pub r_far: usize,
    pub cds_delta_max: usize,
    pub srss_triplets: usize,
    pub srss_seed: u64,
}

impl MetricConfig {
    /// Defaults for an `H x W` lattice: `r_near = r_far = ⌈min(H, W) / 2⌉`,
    /// the full distance range for CDS, 1024 SRSS triplets, seed 0.
    pub fn for_lattice(height: usize, width: usize) -> Self {
        let r = height.min(width).div_ceil(2).max(1);
        MetricConfig {
            r_near: r,
            r_far: r,
            cds_delta_max: (height.saturating_sub(1) + width.saturating_sub(1)).max(2),
            srss_triplets: DEFAULT_SRSS_TRIPLETS,
            srss_seed: 0,
        }
    }

    pub fn with_radii(mut self, r_near: usize, r_far: usize) -> Self {
        self.r_near = r_near;
        self.r_far = r_far;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.r_near < 1 || self.r_far < 1 {
            return Err(Error::Config(format!(
                "radii must be >= 1 (r_near = {}, r_far = {})",
                self.r_near, self.r_far
            )));
        }
        if self.cds_delta_max < 2 {
            return Err(Error::Config(format!(
                "cds_delta_max must be >= 2, got {}",
                self.cds_delta_max
            )));
        }
        if self.srss_triplets < 1 {
            return Err(Error::Config("srss_triplets must be >= 1".into()));
        }
        Ok(())
    }
}

/// Local-vs-distant similarity computed from an existing correlogram.
pub fn lds_from_correlogram(c: &Correlogram, cfg: &MetricConfig) -> Result<f64> {
    let (r_near, r_far) = (cfg.r_near, cfg.r_far);
    let near = c.band_mean(|d| d < r_near).ok_or(Error::EmptyBand {
        band: "near",
        r_near,
        r_far,
    })?;
    let far = c.band_mean(|d| d >= r_far).ok_or(Error::EmptyBand {
        band: "far",
        r_near,
        r_far,
    })?;
    Ok(near - far)
}

pub fn lds(grid: &PatchGrid, cfg: &MetricConfig) -> Result<f64> {
    cfg.validate()?;
    lds_from_correlogram(&correlogram(grid)?, cfg)
}

/// Correlation decay slope computed from an existing correlogram.
pub fn cds_from_correlogram(c: &Correlogram, cfg: &MetricConfig) -> Result<f64> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = c
        .present()
        .filter(|&(d, _, _)| d <= cfg.cds_delta_max)
        .map(|(d, g, _)| (d as f64, g))
        .unzip();
    if xs.len() < 2 {
        return Err(Error::TooFewClasses {
            delta_max: cfg.cds_delta_max,
            found: xs.len(),
        });
    }
    Ok(-linfit(&xs, &ys)?.slope)
}

pub fn cds(grid: &PatchGrid, cfg: &MetricConfig) -> Result<f64> {
    cfg.validate()?;
    cds_from_correlogram(&correlogram(grid)?, cfg)
}

/// Root-mean-square spatial contrast of the unit-normalised tokens.
pub fn rmsc(grid: &PatchGrid) -> Result<f64> {
    let unit = unit_tokens(grid)?;
    let d = grid.dim();
    let t = grid.tokens() as f64;
    let mut mean = vec![0.0; d];
    for tok in unit.chunks_exact(d) {
        for (m, v) in mean.iter_mut().zip(tok) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= t);
    let ss: f64 = unit
        .chunks_exact(d)
        .map(|tok| {
            tok.iter()
                .zip(&mean)
                .map(|(v, m)| (v - m) * (v - m))
                .sum::<f64>()
        })
        .sum();
    Ok((ss / t).sqrt())
}

/// One SRSS draw: anchor and positive inside the mask, negative outside.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TripletSample {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

impl TripletSample {
    pub fn is_valid(&self, grid: &PatchGrid, mask: &SegmentMask, cfg: &MetricConfig) -> bool {
        let dp = grid.lattice_distance(self.anchor, self.positive);
        mask.get(self.anchor)
            && mask.get(self.positive)
            && !mask.get(self.negative)
            && dp > 0
            && dp <= cfg.r_near
            && grid.lattice_distance(self.anchor, self.negative) >= cfg.r_far
    }
}

fn check_mask(grid: &PatchGrid, mask: &SegmentMask) -> Result<(Vec<usize>, Vec<usize>)> {
    if (mask.height(), mask.width()) != (grid.height(), grid.width()) {
        return Err(Error::Mask(format!(
            "mask is {}x{} but grid is {}x{}",
            mask.height(),
            mask.width(),
            grid.height(),
            grid.width()
        )));
    }
    let (inside, outside): (Vec<usize>, Vec<usize>) =
        (0..grid.tokens()).partition(|&t| mask.get(t));
    if inside.is_empty() {
        return Err(Error::NoValidTriplet(
            "mask has no foreground tokens".into(),
        ));
    }
    if outside.is_empty() {
        return Err(Error::NoValidTriplet(
            "mask has no background tokens".into(),
        ));
    }
    Ok((inside, outside))
}

/// Draws SRSS triplets by rejection from uniform (inside, inside, outside)
/// index draws, which is uniform over the valid triplets.
pub fn sample_triplets(
    grid: &PatchGrid,
    mask: &SegmentMask,
    cfg: &MetricConfig,
) -> Result<Vec<TripletSample>> {
    cfg.validate()?;
    let (inside, outside) = check_mask(grid, mask)?;
    let feasible = inside.iter().any(|&a| {
        inside.iter().any(|&p| {
            let d = grid.lattice_distance(a, p);
            d > 0 && d <= cfg.r_near
        }) && outside
            .iter()
            .any(|&n| grid.lattice_distance(a, n) >= cfg.r_far)
    });
    if !feasible {
        return Err(Error::NoValidTriplet(format!(
            "no anchor admits a positive within {} and a negative at >= {}",
            cfg.r_near, cfg.r_far
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.srss_seed);
    let mut out = Vec::with_capacity(cfg.srss_triplets);
    for _ in 0..cfg.srss_triplets {
        let mut rejections = 0;
        loop {
            let s = TripletSample {
                anchor: inside[rng.random_range(0..inside.len())],
                positive: inside[rng.random_range(0..inside.len())],
                negative: outside[rng.random_range(0..outside.len())],
            };
            if s.is_valid(grid, mask, cfg) {
                out.push(s);
                break;
            }
            rejections += 1;
            if rejections > SRSS_MAX_REJECTIONS {
                return Err(Error::NoValidTriplet(format!(
                    "exceeded {SRSS_MAX_REJECTIONS} rejections for one triplet"
                )));
            }
        }
    }
    Ok(out)
}

/// Semantic-region self-similarity: mean of `cos(a, p) - cos(a, n)` over
/// `cfg.srss_triplets` seeded draws.
pub fn srss(grid: &PatchGrid, mask: &SegmentMask, cfg: &MetricConfig) -> Result<f64> {
    let triplets = sample_triplets(grid, mask, cfg)?;
    let unit = unit_tokens(grid)?;
    let d = grid.dim();
    let tok = |t: usize| &unit[t * d..(t + 1) * d];
    let total: f64 = triplets
        .iter()
        .map(|s| dot(tok(s.anchor), tok(s.positive)) - dot(tok(s.anchor), tok(s.negative)))
        .sum();
    Ok(total / triplets.len() as f64)
}

/// Evaluates one metric on one image. `mask` is required for SRSS only.
pub fn evaluate(
    metric: MetricName,
    grid: &PatchGrid,
    mask: Option<&SegmentMask>,
    cfg: &MetricConfig,
) -> Result<f64> {
    match metric {
        MetricName::Lds => lds(grid, cfg),
        MetricName::Cds => cds(grid, cfg),
        MetricName::Rmsc => rmsc(grid),
        MetricName::Srss => {
            let mask = mask.ok_or_else(|| Error::Mask("SRSS requires a segment mask".into()))?;
            srss(grid, mask, cfg)
        }
    }
}

/// Per-image values and their aggregate for one encoder and one metric.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub encoder_id: String,
    pub metric: MetricName,
    /// `(image_id, value)` sorted by image id.
    pub per_image: Vec<(String, f64)>,
    pub aggregate_mean: f64,
    pub aggregate_std: f64,
    pub config: MetricConfig,
}

/// Folds per-image values (in image-id order) into a report with the
/// arithmetic mean and population standard deviation.
pub fn aggregate_metric(
    values: Vec<(String, f64)>,
    encoder_id: &str,
    metric: MetricName,
    cfg: &MetricConfig,
) -> Result<MetricReport> {
    if values.is_empty() {
        return Err(Error::Empty("no per-image values to aggregate".into()));
    }
    if let Some((id, _)) = values.iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFiniteValue { id: id.clone() });
    }
    let mut per_image = values;
    per_image.sort_by(|a, b| a.0.cmp(&b.0));
    if let Some(w) = per_image.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::DuplicateId(w[0].0.clone()));
    }
    let n = per_image.len() as f64;
    let mean = per_image.iter().map(|(_, v)| v).sum::<f64>() / n;
    let var = per_image
        .iter()
        .map(|(_, v)| (v - mean) * (v - mean))
        .sum::<f64>()
        / n;
    Ok(MetricReport {
        encoder_id: encoder_id.to_string(),
        metric,
        per_image,
        aggregate_mean: mean,
        aggregate_std: var.sqrt(),
        config: *cfg,
    })
}

#[derive(Serialize, Deserialize)]
struct ImageValue {
    id: String,
    value: F17,
}

#[derive(Serialize, Deserialize)]
struct MetricReportWire {
    encoder_id: String,
    metric: MetricName,
    config: MetricConfig,
    per_image: Vec<ImageValue>,
    mean: F17,
    std: F17,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    manifest: Option<RunManifest>,
}

impl MetricReport {
    pub fn to_json(&self, manifest: Option<&RunManifest>) -> Result<String> {
        let wire = MetricReportWire {
            encoder_id: self.encoder_id.clone(),
            metric: self.metric,
            config: self.config,
            per_image: self
                .per_image
                .iter()
                .map(|(id, v)| ImageValue {
                    id: id.clone(),
                    value: F17(*v),
                })
                .collect(),
            mean: F17(self.aggregate_mean),
            std: F17(self.aggregate_std),
            manifest: manifest.cloned(),
        };
        to_json_pretty(&wire, "serialising metric report")
    }

    /// Parses a report, returning its embedded manifest if present.
    pub fn from_json(text: &str) -> Result<(MetricReport, Option<RunManifest>)> {
        let wire: MetricReportWire = serde_json::from_str(text).map_err(|source| Error::Json {
            context: "parsing metric report".into(),
            source,
        })?;
        if wire.per_image.is_empty() {
            return Err(Error::Empty("metric report has no per-image values".into()));
        }
        let report = MetricReport {
            encoder_id: wire.encoder_id,
            metric: wire.metric,
            per_image: wire
                .per_image
                .into_iter()
                .map(|iv| (iv.id, iv.value.0))
                .collect(),
            aggregate_mean: wire.mean.0,
            aggregate_std: wire.std.0,
            config: wire.config,
        };
        Ok((report, wire.manifest))
    }
}
