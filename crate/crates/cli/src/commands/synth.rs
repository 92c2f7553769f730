use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use ssm_core::feature_io::npy::encode_f64;
use ssm_core::report::fmt_f64;
use ssm_core::synthetic::{
    clustered_suite, image_set, overlay_suite, sweep, SyntheticImage, SyntheticSpec,
};
use ssm_core::RunManifest;

use crate::output::{display_path, Outputs};
use crate::Globals;

#[derive(clap::Args, Debug)]
pub struct Args {
    /// JSON spec: generator fields plus `images` and optional `levels`
    #[arg(long, required_unless_present = "bundled", conflicts_with = "bundled")]
    pub spec: Option<PathBuf>,

    /// Write one of the bundled suites instead of a spec
    #[arg(long, value_enum)]
    pub bundled: Option<Bundled>,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Bundled {
    Clustered,
    Overlay,
}

/// On-disk synthesis request.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthFile {
    #[serde(flatten)]
    pub spec: SyntheticSpec,
    #[serde(default = "one")]
    pub images: usize,
    /// Structure levels for a sweep; one feature directory per level.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<f64>>,
}

fn one() -> usize {
    1
}

#[derive(Serialize)]
#[serde(untagged)]
enum ResolvedConfig {
    Spec(SynthFile),
    Bundled { bundled: Bundled },
}

fn image_name(i: usize) -> String {
    format!("img_{i:04}.npy")
}

fn add_set(outputs: &mut Outputs, features: &Path, masks: &Path, images: &[SyntheticImage]) {
    for (i, img) in images.iter().enumerate() {
        let g = &img.grid;
        outputs.add(
            features.join(image_name(i)),
            encode_f64(&[g.height(), g.width(), g.dim()], g.data()),
        );
        let m = img.mask();
        let bits: Vec<f64> = m
            .bits()
            .iter()
            .map(|&b| if b { 1.0 } else { 0.0 })
            .collect();
        outputs.add(
            masks.join(image_name(i)),
            encode_f64(&[m.height(), m.width()], &bits),
        );
    }
}

pub fn run(args: &Args, g: &Globals) -> Result<()> {
    let out = g.out()?;
    let mut outputs = Outputs::new();
    let (resolved, inputs, seeds) = if let Some(which) = args.bundled {
        let images = match which {
            Bundled::Clustered => clustered_suite(),
            Bundled::Overlay => overlay_suite(),
        };
        add_set(
            &mut outputs,
            &out.join("features"),
            &out.join("masks"),
            &images,
        );
        (ResolvedConfig::Bundled { bundled: which }, vec![], vec![])
    } else {
        let path = args
            .spec
            .as_ref()
            .expect("clap enforces --spec or --bundled");
        let text =
            fs::read_to_string(path).with_context(|| format!("reading spec {}", path.display()))?;
        let mut file: SynthFile = serde_json::from_str(&text)
            .with_context(|| format!("parsing spec {}", path.display()))?;
        if let Some(seed) = g.seed {
            file.spec.seed = seed;
        }
        file.spec
            .validate()
            .with_context(|| format!("invalid spec {}", path.display()))?;
        if file.images == 0 {
            bail!("spec {} asks for zero images", path.display());
        }
        match &file.levels {
            None => {
                let images = image_set(&file.spec, file.images, 0)?;
                add_set(
                    &mut outputs,
                    &out.join("features"),
                    &out.join("masks"),
                    &images,
                );
            }
            Some(levels) => {
                let sets = sweep(&file.spec, levels, file.images)?;
                let mut scores = String::from("encoder_id,score\n");
                for (i, (level, images)) in sets.iter().enumerate() {
                    let id = format!("level_{i:02}");
                    add_set(
                        &mut outputs,
                        &out.join("features").join(&id),
                        &out.join("masks").join(&id),
                        images,
                    );
                    scores.push_str(&format!("{id},{}\n", fmt_f64(*level)));
                }
                outputs.add(out.join("structure_level.csv"), scores);
            }
        }
        let seed = file.spec.seed;
        (
            ResolvedConfig::Spec(file),
            vec![display_path(path)],
            vec![seed],
        )
    };
    let manifest = RunManifest::new("synth", &resolved)?
        .with_inputs(inputs)
        .with_seeds(seeds);
    outputs.add(out.join("manifest.json"), manifest.to_json()?);
    outputs.commit()
}
