//! Pearson correlation, least-squares line fits and the join of metric
//! reports against external per-encoder scores.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{MetricName, MetricReport};
use crate::report::{fmt_f64, to_json_pretty, RunManifest, F17};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub n: usize,
}

fn check_series(xs: &[f64], ys: &[f64]) -> Result<()> {
    if xs.len() != ys.len() {
        return Err(Error::DimMismatch {
            expected: xs.len(),
            found: ys.len(),
        });
    }
    if xs.len() < 2 {
        return Err(Error::Degenerate(format!(
            "need at least 2 points, got {}",
            xs.len()
        )));
    }
    if let Some(i) = xs.iter().chain(ys).position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            index: i % xs.len(),
        });
    }
    Ok(())
}

fn is_constant(v: &[f64]) -> bool {
    v.iter().all(|&x| x == v[0])
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Ordinary least-squares fit `y ≈ intercept + slope * x`.
pub fn linfit(xs: &[f64], ys: &[f64]) -> Result<LineFit> {
    check_series(xs, ys)?;
    if is_constant(xs) {
        return Err(Error::Degenerate("xs have zero variance".into()));
    }
    let (mx, my) = (mean(xs), mean(ys));
    let (sxy, sxx) = xs.iter().zip(ys).fold((0.0, 0.0), |(sxy, sxx), (x, y)| {
        (sxy + (x - mx) * (y - my), sxx + (x - mx) * (x - mx))
    });
    let slope = sxy / sxx;
    Ok(LineFit {
        slope,
        intercept: my - slope * mx,
        n: xs.len(),
    })
}

/// Pearson product-moment correlation.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    check_series(xs, ys)?;
    if is_constant(xs) || is_constant(ys) {
        return Err(Error::Degenerate(
            "constant series has no correlation".into(),
        ));
    }
    let (mx, my) = (mean(xs), mean(ys));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    let r = sxy / (sxx.sqrt() * syy.sqrt());
    if r.is_nan() || r.abs() > 1.0 + 1e-12 {
        return Err(Error::Degenerate(format!(
            "correlation {r} outside [-1, 1]"
        )));
    }
    Ok(r.clamp(-1.0, 1.0))
}

/// External per-encoder scores (gFID, accuracy, ...). Never computed here.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSeries {
    pub score_name: String,
    pub entries: Vec<(String, f64)>,
}

impl ScoreSeries {
    pub fn new(score_name: impl Into<String>, entries: Vec<(String, f64)>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for (id, v) in &entries {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateId(id.clone()));
            }
            if !v.is_finite() {
                return Err(Error::NonFiniteValue { id: id.clone() });
            }
        }
        Ok(ScoreSeries {
            score_name: score_name.into(),
            entries,
        })
    }

    /// Parses CSV with header `encoder_id,score`.
    pub fn from_csv(score_name: impl Into<String>, text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let headers = reader
            .headers()
            .map_err(|e| Error::Config(format!("score CSV: {e}")))?;
        if headers.iter().collect::<Vec<_>>() != ["encoder_id", "score"] {
            return Err(Error::Config(format!(
                "score CSV header must be \"encoder_id,score\", found {:?}",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut entries = Vec::new();
        for (line, record) in reader.records().enumerate() {
            let record = record.map_err(|e| Error::Config(format!("score CSV: {e}")))?;
            let score = record[1].parse::<f64>().map_err(|_| {
                Error::Config(format!(
                    "score CSV row {}: cannot parse score {:?}",
                    line + 2,
                    &record[1]
                ))
            })?;
            entries.push((record[0].to_string(), score));
        }
        Self::new(score_name, entries)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JoinedPoint {
    pub encoder_id: String,
    pub metric: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationResult {
    pub metric_name: MetricName,
    pub score_name: String,
    pub n: usize,
    pub pearson_r: f64,
    /// Least-squares fit of score against metric.
    pub fit: LineFit,
    pub pairs: Vec<JoinedPoint>,
    /// Encoder ids present in only one of the inputs.
    pub dropped: Vec<String>,
}

/// Inner-joins report means with scores on encoder id (sorted) and
/// correlates them.
pub fn correlate_reports(
    reports: &[MetricReport],
    scores: &ScoreSeries,
) -> Result<CorrelationResult> {
    let first = reports
        .first()
        .ok_or_else(|| Error::Empty("no metric reports".into()))?;
    let mut by_encoder = BTreeMap::new();
    for r in reports {
        if r.metric != first.metric {
            return Err(Error::Config(format!(
                "reports mix metrics {} and {}",
                first.metric, r.metric
            )));
        }
        if by_encoder
            .insert(r.encoder_id.as_str(), r.aggregate_mean)
            .is_some()
        {
            return Err(Error::DuplicateId(r.encoder_id.clone()));
        }
    }
    let score_map: BTreeMap<&str, f64> = scores
        .entries
        .iter()
        .map(|(k, v)| (k.as_str(), *v))
        .collect();

    let pairs: Vec<JoinedPoint> = by_encoder
        .iter()
        .filter_map(|(id, &m)| {
            score_map.get(id).map(|&s| JoinedPoint {
                encoder_id: id.to_string(),
                metric: m,
                score: s,
            })
        })
        .collect();
    let dropped: Vec<String> = by_encoder
        .keys()
        .filter(|id| !score_map.contains_key(*id))
        .chain(score_map.keys().filter(|id| !by_encoder.contains_key(*id)))
        .map(|s| s.to_string())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if pairs.len() < 2 {
        return Err(Error::TooFewJoined { found: pairs.len() });
    }
    if !dropped.is_empty() {
        log::info!(
            "dropped {} encoder(s) not present in both inputs",
            dropped.len()
        );
    }
    let xs: Vec<f64> = pairs.iter().map(|p| p.metric).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.score).collect();
    Ok(CorrelationResult {
        metric_name: first.metric,
        score_name: scores.score_name.clone(),
        n: pairs.len(),
        pearson_r: pearson(&xs, &ys)?,
        fit: linfit(&xs, &ys)?,
        pairs,
        dropped,
    })
}

#[derive(Serialize, Deserialize)]
struct PointWire {
    encoder_id: String,
    metric: F17,
    score: F17,
}

#[derive(Serialize, Deserialize)]
struct CorrelationWire {
    metric: MetricName,
    score: String,
    n: usize,
    pearson_r: F17,
    slope: F17,
    intercept: F17,
    pairs: Vec<PointWire>,
    dropped: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    manifest: Option<RunManifest>,
}

impl CorrelationResult {
    pub fn to_json(&self, manifest: Option<&RunManifest>) -> Result<String> {
        let wire = CorrelationWire {
            metric: self.metric_name,
            score: self.score_name.clone(),
            n: self.n,
            pearson_r: F17(self.pearson_r),
            slope: F17(self.fit.slope),
            intercept: F17(self.fit.intercept),
            pairs: self
                .pairs
                .iter()
                .map(|p| PointWire {
                    encoder_id: p.encoder_id.clone(),
                    metric: F17(p.metric),
                    score: F17(p.score),
                })
                .collect(),
            dropped: self.dropped.clone(),
            manifest: manifest.cloned(),
        };
        to_json_pretty(&wire, "serialising correlation result")
    }

    pub fn from_json(text: &str) -> Result<CorrelationResult> {
        let w: CorrelationWire = serde_json::from_str(text).map_err(|source| Error::Json {
            context: "parsing correlation result".into(),
            source,
        })?;
        Ok(CorrelationResult {
            metric_name: w.metric,
            score_name: w.score,
            n: w.n,
            pearson_r: w.pearson_r.0,
            fit: LineFit {
                slope: w.slope.0,
                intercept: w.intercept.0,
                n: w.n,
            },
            pairs: w
                .pairs
                .into_iter()
                .map(|p| JoinedPoint {
                    encoder_id: p.encoder_id,
                    metric: p.metric.0,
                    score: p.score.0,
                })
                .collect(),
            dropped: w.dropped,
        })
    }

    /// Scatter points as CSV with header `metric,score,encoder_id`.
    pub fn plot_csv(&self) -> String {
        let mut out = String::from("metric,score,encoder_id\n");
        for p in &self.pairs {
            out.push_str(&format!(
                "{},{},{}\n",
                fmt_f64(p.metric),
                fmt_f64(p.score),
                p.encoder_id
            ));
        }
        out
    }
}
