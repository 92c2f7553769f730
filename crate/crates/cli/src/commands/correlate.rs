use std::fs;
use std::path::PathBuf;

use anyhow::{Context, Result};
use log::warn;
use serde::Serialize;
use ssm_core::{correlate_reports, MetricReport, RunManifest, ScoreSeries};

use crate::output::{display_path, Outputs};
use crate::Globals;

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Metric report JSON files, one per encoder
    #[arg(required = true)]
    pub reports: Vec<PathBuf>,

    /// CSV with header `encoder_id,score`
    #[arg(long)]
    pub scores: PathBuf,

    /// Name of the score column in the result (default: scores file stem)
    #[arg(long)]
    pub score_name: Option<String>,

    /// Also write scatter points as CSV (`metric,score,encoder_id`)
    #[arg(long)]
    pub emit_plot_data: Option<PathBuf>,
}

#[derive(Serialize)]
struct ResolvedConfig<'a> {
    score_name: &'a str,
    emit_plot_data: Option<String>,
}

pub fn run(args: &Args, g: &Globals) -> Result<()> {
    let out = g.out()?;
    let reports = args
        .reports
        .iter()
        .map(|p| {
            let text =
                fs::read_to_string(p).with_context(|| format!("reading report {}", p.display()))?;
            let (report, _) = MetricReport::from_json(&text)
                .with_context(|| format!("parsing report {}", p.display()))?;
            Ok(report)
        })
        .collect::<Result<Vec<_>>>()?;
    let score_name = match &args.score_name {
        Some(n) => n.clone(),
        None => args
            .scores
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "score".into()),
    };
    let text = fs::read_to_string(&args.scores)
        .with_context(|| format!("reading scores {}", args.scores.display()))?;
    let scores = ScoreSeries::from_csv(&score_name, &text)
        .with_context(|| format!("parsing scores {}", args.scores.display()))?;

    let result = correlate_reports(&reports, &scores).context("correlating reports with scores")?;
    if !result.dropped.is_empty() {
        warn!("encoders without a match: {}", result.dropped.join(", "));
    }

    let resolved = ResolvedConfig {
        score_name: &score_name,
        emit_plot_data: args.emit_plot_data.as_deref().map(display_path),
    };
    let manifest = RunManifest::new("correlate", &resolved)?.with_inputs(
        args.reports
            .iter()
            .chain(std::iter::once(&args.scores))
            .map(|p| display_path(p)),
    );
    let mut outputs = Outputs::new();
    outputs.add(out, result.to_json(Some(&manifest))?);
    if let Some(plot) = &args.emit_plot_data {
        outputs.add_with_sidecar(plot, result.plot_csv(), &manifest)?;
    }
    outputs.commit()
}
