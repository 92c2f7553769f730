//! Definition-literal reference implementations used as test oracles.
//!
//! Nothing here calls into the library's numeric paths: every quantity is
//! recomputed from raw token vectors with the most direct loop available.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ssm_core::PatchGrid;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Tokens as plain vectors, in row-major order.
pub fn tokens(g: &PatchGrid) -> Vec<Vec<f64>> {
    (0..g.tokens()).map(|t| g.token(t).to_vec()).collect()
}

pub fn random_grid(rng: &mut ChaCha8Rng, h: usize, w: usize, d: usize) -> PatchGrid {
    let data: Vec<f64> = (0..h * w * d)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    PatchGrid::new(h, w, d, data).unwrap()
}

/// Random grid whose dims are drawn from the given ranges.
pub fn random_sized_grid(rng: &mut ChaCha8Rng, max_hw: usize, max_d: usize) -> PatchGrid {
    let h = rng.random_range(1..=max_hw);
    let w = rng.random_range(1..=max_hw);
    let d = rng.random_range(1..=max_d);
    random_grid(rng, h, w, d)
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut ab = 0.0;
    let mut aa = 0.0;
    let mut bb = 0.0;
    for i in 0..a.len() {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    ab / (aa.sqrt() * bb.sqrt())
}

pub fn manhattan(w: usize, a: usize, b: usize) -> usize {
    let (ra, ca) = (a / w, a % w);
    let (rb, cb) = (b / w, b % w);
    ra.abs_diff(rb) + ca.abs_diff(cb)
}

/// All unordered pairs `t < u` with their distance and cosine.
pub fn all_pairs(g: &PatchGrid) -> Vec<(usize, f64)> {
    let toks = tokens(g);
    let mut out = Vec::new();
    for t in 0..toks.len() {
        for u in t + 1..toks.len() {
            out.push((manhattan(g.width(), t, u), cosine(&toks[t], &toks[u])));
        }
    }
    out
}

/// `g[δ]` for δ in 0..=max (index 0 unused, `None` where no pairs).
pub fn naive_correlogram(g: &PatchGrid) -> Vec<Option<f64>> {
    let max = g.height() - 1 + g.width() - 1;
    let mut sums = vec![0.0; max + 1];
    let mut counts = vec![0usize; max + 1];
    for (d, k) in all_pairs(g) {
        sums[d] += k;
        counts[d] += 1;
    }
    (0..=max)
        .map(|d| (d > 0 && counts[d] > 0).then(|| sums[d] / counts[d] as f64))
        .collect()
}

fn band_mean(pairs: &[(usize, f64)], keep: impl Fn(usize) -> bool) -> Option<f64> {
    let sel: Vec<f64> = pairs
        .iter()
        .filter(|(d, _)| keep(*d))
        .map(|(_, k)| *k)
        .collect();
    (!sel.is_empty()).then(|| sel.iter().sum::<f64>() / sel.len() as f64)
}

pub fn naive_lds(g: &PatchGrid, r_near: usize, r_far: usize) -> Option<f64> {
    let pairs = all_pairs(g);
    let near = band_mean(&pairs, |d| d > 0 && d < r_near)?;
    let far = band_mean(&pairs, |d| d >= r_far)?;
    Some(near - far)
}

/// Negated two-pass least-squares slope of the naive correlogram.
pub fn naive_cds(g: &PatchGrid, delta_max: usize) -> Option<f64> {
    let corr = naive_correlogram(g);
    let pts: Vec<(f64, f64)> = corr
        .iter()
        .enumerate()
        .filter(|(d, v)| *d >= 1 && *d <= delta_max && v.is_some())
        .map(|(d, v)| (d as f64, v.unwrap()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    Some(-two_pass_slope(&pts))
}

pub fn two_pass_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let num: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let den: f64 = pts.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    num / den
}

pub fn two_pass_pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for i in 0..xs.len() {
        sxy += (xs[i] - mx) * (ys[i] - my);
        sxx += (xs[i] - mx) * (xs[i] - mx);
        syy += (ys[i] - my) * (ys[i] - my);
    }
    sxy / (sxx * syy).sqrt()
}

pub fn naive_rmsc(g: &PatchGrid) -> f64 {
    let toks = tokens(g);
    let t = toks.len() as f64;
    let unit: Vec<Vec<f64>> = toks
        .iter()
        .map(|x| {
            let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            x.iter().map(|v| v / n).collect()
        })
        .collect();
    let d = g.dim();
    let mean: Vec<f64> = (0..d)
        .map(|k| unit.iter().map(|u| u[k]).sum::<f64>() / t)
        .collect();
    let ss: f64 = unit
        .iter()
        .map(|u| (0..d).map(|k| (u[k] - mean[k]).powi(2)).sum::<f64>())
        .sum();
    (ss / t).sqrt()
}

/// Mean of `cos(a,p) - cos(a,n)` over every valid triplet, equally weighted.
pub fn exhaustive_srss(g: &PatchGrid, mask: &[bool], r_near: usize, r_far: usize) -> Option<f64> {
    let toks = tokens(g);
    let w = g.width();
    let mut sum = 0.0;
    let mut count = 0usize;
    for a in 0..toks.len() {
        if !mask[a] {
            continue;
        }
        for p in 0..toks.len() {
            let dp = manhattan(w, a, p);
            if !mask[p] || dp == 0 || dp > r_near {
                continue;
            }
            let cp = cosine(&toks[a], &toks[p]);
            for n in 0..toks.len() {
                if mask[n] || manhattan(w, a, n) < r_far {
                    continue;
                }
                sum += cp - cosine(&toks[a], &toks[n]);
                count += 1;
            }
        }
    }
    (count > 0).then(|| sum / count as f64)
}

/// Literal zero-padded 3x3 cross-correlation; kernel index ((ky*3+kx)*din+i)*dout+o.
pub fn naive_conv(g: &PatchGrid, kernel: &[f64], bias: &[f64], dout: usize) -> Vec<f64> {
    let (h, w, din) = (g.height() as isize, g.width() as isize, g.dim());
    let pad = |r: isize, c: isize, i: usize| -> f64 {
        if r < 0 || c < 0 || r >= h || c >= w {
            0.0
        } else {
            g.token_at(r as usize, c as usize)[i]
        }
    };
    let mut out = Vec::new();
    for r in 0..h {
        for c in 0..w {
            for o in 0..dout {
                let mut acc = bias[o];
                for dr in -1isize..=1 {
                    for dc in -1isize..=1 {
                        for i in 0..din {
                            let ky = (dr + 1) as usize;
                            let kx = (dc + 1) as usize;
                            acc += pad(r + dr, c + dc, i)
                                * kernel[((ky * 3 + kx) * din + i) * dout + o];
                        }
                    }
                }
                out.push(acc);
            }
        }
    }
    out
}

pub fn matvec(x: &[f64], w: &[f64], b: &[f64], dout: usize) -> Vec<f64> {
    (0..dout)
        .map(|o| b[o] + (0..x.len()).map(|i| x[i] * w[i * dout + o]).sum::<f64>())
        .collect()
}

/// Negative mean cosine between matching tokens.
pub fn naive_alignment_loss(pred: &[f64], target: &[f64], dim: usize) -> f64 {
    let t = pred.len() / dim;
    let total: f64 = (0..t)
        .map(|i| {
            cosine(
                &pred[i * dim..(i + 1) * dim],
                &target[i * dim..(i + 1) * dim],
            )
        })
        .sum();
    -total / t as f64
}

/// Fisher-Yates permutation of `0..n`.
pub fn random_permutation(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        p.swap(i, j);
    }
    p
}

/// Random orthogonal matrix (row-major d x d) via Gram-Schmidt.
pub fn random_rotation(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    while rows.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        for _ in 0..2 {
            for r in &rows {
                let p: f64 = v.iter().zip(r).map(|(a, b)| a * b).sum();
                for k in 0..d {
                    v[k] -= p * r[k];
                }
            }
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-3 {
            rows.push(v.iter().map(|x| x / n).collect());
        }
    }
    rows.concat()
}

pub fn rotate(g: &PatchGrid, rot: &[f64]) -> PatchGrid {
    let d = g.dim();
    let data: Vec<f64> = (0..g.tokens())
        .flat_map(|t| {
            let x = g.token(t);
            (0..d).map(move |i| (0..d).map(|k| rot[i * d + k] * x[k]).sum::<f64>())
        })
        .collect();
    PatchGrid::new(g.height(), g.width(), d, data).unwrap()
}
