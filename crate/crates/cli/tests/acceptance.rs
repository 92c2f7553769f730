//! Acceptance gate. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any criterion fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use common::*;
use rand::Rng;
use ssm_core::metrics::{cds, lds, rmsc, srss, MetricConfig};
use ssm_core::similarity::correlogram;
use ssm_core::synthetic::{clustered_suite, overlay_suite, sweep, SyntheticSpec};
use ssm_core::transforms::{
    alignment_loss_and_grad, channel_stats, conv_project, mix_global, spatial_normalize,
    ConvWeights, NormVariant, NormalizeConfig,
};
use ssm_core::{pearson, PatchGrid, SegmentMask};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut r = rng(0xACCE);
    let mut worst = 0.0f64;
    for case in 0..100 {
        let h = r.random_range(1..=8);
        let w = r.random_range(1..=8);
        let d = r.random_range(1..=16);
        let g = random_grid(&mut r, h, w, d);
        let cfg = MetricConfig::for_lattice(h, w);
        let fast = correlogram(&g).map_err(|e| e.to_string())?;
        for (delta, expect) in naive_correlogram(&g).into_iter().enumerate() {
            match (fast.g(delta), expect) {
                (Some(a), Some(b)) => worst = worst.max((a - b).abs()),
                (None, None) => {}
                _ => return Err(format!("case {case}: class {delta} presence differs")),
            }
        }
        match (lds(&g, &cfg), naive_lds(&g, cfg.r_near, cfg.r_far)) {
            (Ok(a), Some(b)) => worst = worst.max((a - b).abs()),
            (Err(_), None) => {}
            (a, b) => return Err(format!("case {case}: LDS {a:?} vs oracle {b:?}")),
        }
        match (cds(&g, &cfg), naive_cds(&g, cfg.cds_delta_max)) {
            (Ok(a), Some(b)) => worst = worst.max((a - b).abs()),
            (Err(_), None) => {}
            (a, b) => return Err(format!("case {case}: CDS {a:?} vs oracle {b:?}")),
        }
        worst = worst.max((rmsc(&g).map_err(|e| e.to_string())? - naive_rmsc(&g)).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst < 1e-10,
        format!("max abs deviation {worst:.3e} >= 1e-10"),
    )?;
    check(secs < 10.0, format!("took {secs:.2} s >= 10 s"))?;
    Ok(format!("max abs deviation {worst:.2e}, {secs:.2} s"))
}

fn basis(d: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; d];
    v[i] = 1.0;
    v
}

fn hand_examples() -> Outcome {
    let g = PatchGrid::from_tokens(1, 4, &[basis(2, 0), basis(2, 0), basis(2, 1), basis(2, 1)])
        .unwrap();
    let c = correlogram(&g).unwrap();
    let expect = [2.0 / 3.0, 0.0, 0.0];
    for (i, e) in expect.iter().enumerate() {
        let v = c.g(i + 1).ok_or("missing class")?;
        check(
            (v - e).abs() < 1e-12,
            format!("g({}) = {v}, expected {e}", i + 1),
        )?;
    }
    let cfg = MetricConfig::for_lattice(1, 4).with_radii(2, 2);
    let l = lds(&g, &cfg).map_err(|e| e.to_string())?;
    check((l - 2.0 / 3.0).abs() < 1e-12, format!("LDS = {l}"))?;
    let mut cfg3 = cfg;
    cfg3.cds_delta_max = 3;
    let s = cds(&g, &cfg3).map_err(|e| e.to_string())?;
    check((s - 1.0 / 3.0).abs() < 1e-12, format!("CDS = {s}"))?;
    let two = PatchGrid::from_tokens(1, 2, &[basis(2, 0), basis(2, 1)]).unwrap();
    let m = rmsc(&two).unwrap();
    check((m - 0.5f64.sqrt()).abs() < 1e-12, format!("RMSC = {m}"))?;
    Ok("g, LDS, CDS, RMSC exact".into())
}

fn two_region(noise: f64, seed: u64) -> (PatchGrid, SegmentMask) {
    let mut r = rng(seed);
    let inside = |row: usize, col: usize| row < 4 && col < 5;
    let mask = SegmentMask::from_fn(8, 8, inside).unwrap();
    let g = PatchGrid::from_fn(8, 8, 4, |row, col, k| {
        let base = if inside(row, col) {
            basis(4, 0)
        } else {
            basis(4, 1)
        };
        base[k] + noise * r.random_range(-1.0..1.0)
    })
    .unwrap();
    (g, mask)
}

fn srss_criterion() -> Outcome {
    let mut cfg = MetricConfig::for_lattice(8, 8);
    cfg.srss_triplets = 1024;
    cfg.srss_seed = 2024;

    let (designed, mask) = two_region(0.0, 0);
    let exact =
        exhaustive_srss(&designed, mask.bits(), cfg.r_near, cfg.r_far).ok_or("no valid triplet")?;
    check(
        (exact - 1.0).abs() < 1e-12,
        format!("designed grid exhaustive SRSS = {exact}"),
    )?;
    let sampled = srss(&designed, &mask, &cfg).map_err(|e| e.to_string())?;
    check(
        (sampled - exact).abs() < 0.05,
        format!("designed grid sampled {sampled} vs {exact}"),
    )?;

    let (noisy, mask) = two_region(0.6, 1);
    let exact_noisy =
        exhaustive_srss(&noisy, mask.bits(), cfg.r_near, cfg.r_far).ok_or("no valid triplet")?;
    let a = srss(&noisy, &mask, &cfg).map_err(|e| e.to_string())?;
    let b = srss(&noisy, &mask, &cfg).map_err(|e| e.to_string())?;
    check(
        (a - exact_noisy).abs() < 0.05,
        format!("noisy grid sampled {a} vs exhaustive {exact_noisy}"),
    )?;
    check(a.to_bits() == b.to_bits(), "reruns differ")?;
    Ok(format!(
        "designed {exact:.12}, noisy sampled {a:.4} vs exhaustive {exact_noisy:.4}, reruns bit-identical"
    ))
}

fn planted_sweep() -> Outcome {
    let start = Instant::now();
    let levels: Vec<f64> = (0..20).map(|i| i as f64 / 19.0).collect();
    let base = SyntheticSpec::new(8, 8, 16, 0.0).with_seed(0x5A11);
    let cfg = MetricConfig::for_lattice(8, 8);
    let sets = sweep(&base, &levels, 32).map_err(|e| e.to_string())?;
    let means: Vec<f64> = sets
        .iter()
        .map(|(_, imgs)| {
            mean(
                &imgs
                    .iter()
                    .map(|i| lds(&i.grid, &cfg).unwrap())
                    .collect::<Vec<_>>(),
            )
        })
        .collect();
    let r = pearson(&means, &levels).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    check(r.abs() > 0.9, format!("|r| = {:.4}", r.abs()))?;
    check(secs < 60.0, format!("took {secs:.2} s"))?;
    Ok(format!("r = {r:.4}, {secs:.2} s"))
}

fn cls_mixing() -> Outcome {
    let alphas = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5];
    let suite = clustered_suite();
    let mut lds_means = Vec::new();
    let mut rmsc_means = Vec::new();
    for &a in &alphas {
        let mut l = Vec::new();
        let mut m = Vec::new();
        for img in &suite {
            let cfg = MetricConfig::for_lattice(img.grid.height(), img.grid.width());
            let mixed =
                mix_global(&img.grid, &img.global_vector(2.0), a).map_err(|e| e.to_string())?;
            l.push(lds(&mixed, &cfg).map_err(|e| e.to_string())?);
            m.push(rmsc(&mixed).map_err(|e| e.to_string())?);
        }
        lds_means.push(mean(&l));
        rmsc_means.push(mean(&m));
    }
    let non_increasing = |v: &[f64]| v.windows(2).all(|w| w[1] <= w[0]);
    check(
        non_increasing(&lds_means),
        format!("LDS means {lds_means:?}"),
    )?;
    check(
        non_increasing(&rmsc_means),
        format!("RMSC means {rmsc_means:?}"),
    )?;
    check(
        lds_means[5] < lds_means[0] && rmsc_means[5] < rmsc_means[0],
        "no strict decrease",
    )?;
    Ok(format!(
        "LDS {:.4} -> {:.4}, RMSC {:.4} -> {:.4}",
        lds_means[0], lds_means[5], rmsc_means[0], rmsc_means[5]
    ))
}

fn spatial_normalization() -> Outcome {
    let eps = 1e-6;
    let cfg = NormalizeConfig {
        gamma: 1.0,
        epsilon: eps,
        variant: NormVariant::StdPlusEps,
    };
    let mut r = rng(0x0A11);
    let mut notes = Vec::new();
    let mut failures = Vec::new();

    // feature-like grids with channel spread of order one
    let grids: Vec<PatchGrid> = (0..20)
        .map(|_| {
            let (h, w, d) = (
                r.random_range(4..=8),
                r.random_range(4..=8),
                r.random_range(1..=16),
            );
            PatchGrid::from_fn(h, w, d, |_, _, _| r.random_range(-2.0..2.0)).unwrap()
        })
        .collect();

    let mut bounds_ok = true;
    for g in &grids {
        let (_, s_in) = channel_stats(g);
        if s_in.iter().any(|&s| s < 0.5) {
            continue;
        }
        let (m, s) = channel_stats(&spatial_normalize(g, &cfg).unwrap());
        bounds_ok &= m.iter().all(|v| v.abs() < 1e-9);
        bounds_ok &= s.iter().all(|&v| v >= 1.0 / (1.0 + 2.0 * eps) && v <= 1.0);
    }
    if bounds_ok {
        notes.push("mean/std bounds hold".to_string());
    } else {
        failures.push("mean/std bounds violated".to_string());
    }

    let mut worst_factor_dev = 0.0f64;
    let mut worst_exact_dev = 0.0f64;
    for g in &grids {
        let once = spatial_normalize(g, &cfg).unwrap();
        let twice = spatial_normalize(&once, &cfg).unwrap();
        let (_, s) = channel_stats(g);
        for (i, (a, b)) in once.data().iter().zip(twice.data()).enumerate() {
            worst_factor_dev = worst_factor_dev.max((b - a / (1.0 + eps)).abs());
            // per-channel factor implied by the first pass leaving std sigma/(sigma+eps)
            let sigma = s[i % g.dim()];
            let exact = 1.0 / (sigma / (sigma + eps) + eps);
            worst_exact_dev = worst_exact_dev.max((b - a * exact).abs());
        }
    }
    if worst_factor_dev < 1e-9 {
        notes.push(format!(
            "second pass = 1/(1+eps) within {worst_factor_dev:.1e}"
        ));
    } else {
        failures.push(format!(
            "second pass deviates from x/(1+eps) by {worst_factor_dev:.3e} (limit 1e-9); \
             the factor 1/(sigma/(sigma+eps)+eps) matches within {worst_exact_dev:.1e}"
        ));
    }

    let mut overlay_ok = true;
    for img in overlay_suite() {
        let mcfg = MetricConfig::for_lattice(img.grid.height(), img.grid.width());
        let out = spatial_normalize(&img.grid, &cfg).unwrap();
        overlay_ok &= rmsc(&out).unwrap() > rmsc(&img.grid).unwrap();
        overlay_ok &= lds(&out, &mcfg).unwrap() > lds(&img.grid, &mcfg).unwrap();
    }
    if overlay_ok {
        notes.push("overlay suite RMSC and LDS increase".to_string());
    } else {
        failures.push("overlay suite did not increase everywhere".to_string());
    }

    if failures.is_empty() {
        Ok(notes.join("; "))
    } else {
        Err(failures
            .into_iter()
            .chain(notes)
            .collect::<Vec<_>>()
            .join("; "))
    }
}

fn crop(g: &PatchGrid, r0: usize, c0: usize, h: usize, w: usize) -> PatchGrid {
    PatchGrid::from_fn(h, w, g.dim(), |r, c, k| g.token_at(r0 + r, c0 + c)[k]).unwrap()
}

fn conv_projection() -> Outcome {
    let mut r = rng(0xC0);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let (h, w) = (r.random_range(4..=8), r.random_range(4..=8));
        let (din, dout) = (r.random_range(1..=8), r.random_range(1..=8));
        let big = random_grid(&mut r, h + 1, w + 1, din);

        let same = crop(&big, 0, 0, h, w);
        let id = conv_project(&same, &ConvWeights::identity(din).unwrap()).unwrap();
        check(id == same, "identity kernel changed the input")?;

        let weights = ConvWeights::init_seeded(din, dout, r.random()).unwrap();
        let base = conv_project(&same, &weights).unwrap();
        let right = conv_project(&crop(&big, 0, 1, h, w), &weights).unwrap();
        let down = conv_project(&crop(&big, 1, 0, h, w), &weights).unwrap();
        for row in 1..h - 1 {
            for col in 1..w - 2 {
                for (a, b) in right
                    .token_at(row, col)
                    .iter()
                    .zip(base.token_at(row, col + 1))
                {
                    worst = worst.max((a - b).abs());
                }
            }
        }
        for row in 1..h - 2 {
            for col in 1..w - 1 {
                for (a, b) in down
                    .token_at(row, col)
                    .iter()
                    .zip(base.token_at(row + 1, col))
                {
                    worst = worst.max((a - b).abs());
                }
            }
        }
    }
    check(
        worst < 1e-12,
        format!("interior shift deviation {worst:.3e}"),
    )?;
    Ok(format!(
        "identity exact, interior shift deviation {worst:.1e}"
    ))
}

fn alignment_gradient() -> Outcome {
    let mut r = rng(0xA1);
    let step = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (h, w, d) = (
            r.random_range(1..=4),
            r.random_range(1..=4),
            r.random_range(2..=8),
        );
        let pred = random_grid(&mut r, h, w, d);
        let target = random_grid(&mut r, h, w, d);
        let (_, grad) = alignment_loss_and_grad(&pred, &target).map_err(|e| e.to_string())?;
        let fd: Vec<f64> = (0..pred.data().len())
            .map(|i| {
                let mut plus = pred.data().to_vec();
                let mut minus = pred.data().to_vec();
                plus[i] += step;
                minus[i] -= step;
                (naive_alignment_loss(&plus, target.data(), d)
                    - naive_alignment_loss(&minus, target.data(), d))
                    / (2.0 * step)
            })
            .collect();
        let diff = grad
            .data()
            .iter()
            .zip(&fd)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let scale = fd.iter().map(|v| v * v).sum::<f64>().sqrt();
        worst = worst.max(diff / scale);
    }
    check(worst < 1e-5, format!("relative error {worst:.3e}"))?;

    let g = random_grid(&mut r, 3, 3, 6);
    let (loss, grad) = alignment_loss_and_grad(&g, &g).map_err(|e| e.to_string())?;
    check((loss + 1.0).abs() < 1e-12, format!("aligned loss {loss}"))?;
    let gnorm = grad.data().iter().map(|v| v * v).sum::<f64>().sqrt();
    check(gnorm < 1e-12, format!("aligned gradient norm {gnorm:.3e}"))?;
    Ok(format!("max relative error {worst:.2e}, aligned loss -1"))
}

fn run_ssm(cwd: &Path, jobs: usize, args: &[&str]) -> Result<(), String> {
    let jobs = jobs.to_string();
    let out = Command::new(env!("CARGO_BIN_EXE_ssm"))
        .arg("--jobs")
        .arg(&jobs)
        .args(args)
        .current_dir(cwd)
        .output()
        .map_err(|e| e.to_string())?;
    check(
        out.status.success(),
        format!(
            "ssm {args:?}: {}",
            String::from_utf8_lossy(&out.stderr).trim()
        ),
    )
}

fn pipeline(cwd: &Path, jobs: usize) -> Result<Vec<(String, Vec<u8>)>, String> {
    fs::write(
        cwd.join("sweep.json"),
        r#"{"height": 8, "width": 8, "dim": 16, "structure_level": 0.0, "seed": 17,
            "images": 8, "levels": [0.0, 0.25, 0.5, 0.75, 1.0]}"#,
    )
    .map_err(|e| e.to_string())?;
    run_ssm(
        cwd,
        jobs,
        &["synth", "--spec", "sweep.json", "--out", "data"],
    )?;
    let mut reports = Vec::new();
    for i in 0..5 {
        let level = format!("level_{i:02}");
        let feats = format!("data/features/{level}");
        let masks = format!("data/masks/{level}");
        let out = format!("reports/{level}");
        run_ssm(
            cwd,
            jobs,
            &[
                "--seed",
                "5",
                "metrics",
                &feats,
                "--metrics",
                "lds,cds,srss,rmsc",
                "--masks",
                &masks,
                "--out",
                &out,
            ],
        )?;
        reports.push(format!("{out}/lds.json"));
    }
    let mut args = vec!["correlate"];
    args.extend(reports.iter().map(String::as_str));
    args.extend(["--scores", "data/structure_level.csv", "--out", "corr.json"]);
    run_ssm(cwd, jobs, &args)?;

    let mut files = Vec::new();
    let mut stack = vec![cwd.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).map_err(|e| e.to_string())? {
            let p = entry.map_err(|e| e.to_string())?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(cwd).unwrap().to_string_lossy().into_owned();
                files.push((rel, fs::read(&p).map_err(|e| e.to_string())?));
            }
        }
    }
    files.sort();
    Ok(files)
}

fn cli_determinism() -> Outcome {
    let runs: Vec<Vec<(String, Vec<u8>)>> = [1usize, 4, 2]
        .iter()
        .map(|&jobs| {
            let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
            pipeline(dir.path(), jobs)
        })
        .collect::<Result<_, _>>()?;
    let json_count = runs[0].iter().filter(|(n, _)| n.ends_with(".json")).count();
    check(json_count >= 21, format!("only {json_count} JSON outputs"))?;
    for (other, jobs) in runs[1..].iter().zip([4, 2]) {
        check(
            other.len() == runs[0].len(),
            format!("--jobs {jobs} produced a different file set"),
        )?;
        for ((na, a), (nb, b)) in runs[0].iter().zip(other) {
            check(
                na == nb && a == b,
                format!("{na} differs between --jobs 1 and --jobs {jobs}"),
            )?;
        }
    }
    Ok(format!(
        "{} files ({json_count} JSON) byte-identical for --jobs 1, 4, 2",
        runs[0].len()
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("oracle equivalence", oracle_equivalence),
        ("hand examples", hand_examples),
        ("SRSS", srss_criterion),
        ("planted correlation sweep", planted_sweep),
        ("CLS-mixing direction", cls_mixing),
        ("spatial normalization", spatial_normalization),
        ("conv projection", conv_projection),
        ("alignment gradient", alignment_gradient),
        ("CLI determinism", cli_determinism),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(format!("panic: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance criterion(s) failed");
        ExitCode::FAILURE
    }
}
