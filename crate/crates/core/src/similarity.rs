//! Cosine self-similarity between patch tokens and its organisation by
//! Manhattan lattice distance.
//!
//! The correlogram `g(δ)` is the mean cosine similarity over all unordered
//! token pairs at lattice distance `δ >= 1`. Every metric in
//! [`crate::metrics`] except RMSC is a functional of it.

use crate::error::{Error, Result};
use crate::grid::PatchGrid;
use crate::report::fmt_f64;

/// Tokens with a Euclidean norm below this are treated as zero.
pub const ZERO_NORM: f64 = 1e-30;

#[derive(Debug, Clone)]
pub struct NormalizedTokens {
    pub grid: PatchGrid,
    /// Indices of tokens whose norm fell below [`ZERO_NORM`]; they are left as zero vectors.
    pub degenerate: Vec<usize>,
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Scales every token to unit Euclidean norm. Zero tokens stay zero and are
/// reported in [`NormalizedTokens::degenerate`].
pub fn normalize_tokens(grid: &PatchGrid) -> NormalizedTokens {
    let mut degenerate = Vec::new();
    let grid = grid
        .map_tokens(grid.dim(), |t, src, dst| {
            let n = norm(src);
            if n < ZERO_NORM {
                degenerate.push(t);
                dst.fill(0.0);
            } else {
                for (d, s) in dst.iter_mut().zip(src) {
                    *d = s / n;
                }
            }
        })
        .expect("normalisation preserves shape and finiteness");
    if !degenerate.is_empty() {
        log::warn!(
            "{} degenerate (zero-norm) token(s), first at {}",
            degenerate.len(),
            degenerate[0]
        );
    }
    NormalizedTokens { grid, degenerate }
}

/// Unit-normalised token buffer, failing on the first zero token.
pub(crate) fn unit_tokens(grid: &PatchGrid) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(grid.data().len());
    for (t, tok) in grid.iter_tokens().enumerate() {
        let n = norm(tok);
        if n < ZERO_NORM {
            return Err(Error::ZeroToken { index: t });
        }
        out.extend(tok.iter().map(|v| v / n));
    }
    Ok(out)
}

/// Dense `T x T` cosine similarity matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    tokens: usize,
    values: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn tokens(&self) -> usize {
        self.tokens
    }

    pub fn get(&self, t: usize, u: usize) -> f64 {
        self.values[t * self.tokens + u]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Computes `K(t, t') = <x_t, x_t'> / (|x_t| |x_t'|)` for every token pair.
pub fn cosine_kernel(grid: &PatchGrid) -> Result<SimilarityMatrix> {
    let unit = unit_tokens(grid)?;
    let n = grid.tokens();
    let d = grid.dim();
    let mut values = vec![0.0; n * n];
    for t in 0..n {
        values[t * n + t] = 1.0;
        for u in t + 1..n {
            let k = dot(&unit[t * d..(t + 1) * d], &unit[u * d..(u + 1) * d]).clamp(-1.0, 1.0);
            values[t * n + u] = k;
            values[u * n + t] = k;
        }
    }
    Ok(SimilarityMatrix { tokens: n, values })
}

/// Pair counts per Manhattan distance class on an `H x W` lattice.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DistanceClassIndex {
    pub height: usize,
    pub width: usize,
    pub max_distance: usize,
    /// `pair_counts[δ]` = number of unordered pairs at distance `δ`; index 0 counts self-pairs.
    pub pair_counts: Vec<usize>,
}

/// Displacements `(dy, dx)` representing each unordered pair exactly once,
/// grouped by `δ = dy + |dx|`. Index 0 is empty.
pub(crate) fn offsets_by_distance(height: usize, width: usize) -> Vec<Vec<(usize, isize)>> {
    let max = (height - 1) + (width - 1);
    let mut by_delta = vec![Vec::new(); max + 1];
    let w = width as isize;
    for dy in 0..height {
        for dx in -(w - 1)..w {
            if dy == 0 && dx <= 0 {
                continue;
            }
            by_delta[dy + dx.unsigned_abs()].push((dy, dx));
        }
    }
    by_delta
}

pub fn distance_classes(height: usize, width: usize) -> Result<DistanceClassIndex> {
    if height == 0 || width == 0 {
        return Err(Error::Shape(format!(
            "lattice dimensions must be positive, got {height}x{width}"
        )));
    }
    let offsets = offsets_by_distance(height, width);
    let mut pair_counts: Vec<usize> = offsets
        .iter()
        .map(|offs| {
            offs.iter()
                .map(|&(dy, dx)| (height - dy) * (width - dx.unsigned_abs()))
                .sum()
        })
        .collect();
    pair_counts[0] = height * width;
    Ok(DistanceClassIndex {
        height,
        width,
        max_distance: offsets.len() - 1,
        pair_counts,
    })
}

/// Mean cosine similarity per lattice distance class.
#[derive(Debug, Clone, PartialEq)]
pub struct Correlogram {
    max_distance: usize,
    sums: Vec<f64>,
    counts: Vec<usize>,
}

impl Correlogram {
    pub fn max_distance(&self) -> usize {
        self.max_distance
    }

    /// `g(δ)`, or `None` when no pair sits at distance `δ` (and for `δ = 0`).
    pub fn g(&self, delta: usize) -> Option<f64> {
        match self.counts.get(delta) {
            Some(&c) if c > 0 && delta > 0 => Some((self.sums[delta] / c as f64).clamp(-1.0, 1.0)),
            _ => None,
        }
    }

    pub fn count(&self, delta: usize) -> usize {
        self.counts.get(delta).copied().unwrap_or(0)
    }

    /// Present classes as `(δ, g(δ), count)` in increasing `δ`.
    pub fn present(&self) -> impl Iterator<Item = (usize, f64, usize)> + '_ {
        (1..=self.max_distance).filter_map(|d| self.g(d).map(|g| (d, g, self.counts[d])))
    }

    /// Pair-weighted mean of the kernel over all classes with `keep(δ)`, or
    /// `None` if those classes hold no pairs.
    pub fn band_mean(&self, keep: impl Fn(usize) -> bool) -> Option<f64> {
        let (sum, count) = (1..=self.max_distance)
            .filter(|&d| keep(d))
            .fold((0.0, 0usize), |(s, c), d| {
                (s + self.sums[d], c + self.counts[d])
            });
        (count > 0).then(|| sum / count as f64)
    }

    /// CSV with header `delta,g,count`, one row per present class.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("delta,g,count\n");
        for (d, g, c) in self.present() {
            out.push_str(&format!("{d},{},{c}\n", fmt_f64(g)));
        }
        out
    }
}

/// Computes the correlogram by iterating the displacement vectors of each
/// distance class, so every unordered pair is visited exactly once.
pub fn correlogram(grid: &PatchGrid) -> Result<Correlogram> {
    let unit = unit_tokens(grid)?;
    Ok(correlogram_from_unit(
        grid.height(),
        grid.width(),
        grid.dim(),
        &unit,
    ))
}

pub(crate) fn correlogram_from_unit(h: usize, w: usize, d: usize, unit: &[f64]) -> Correlogram {
    let offsets = offsets_by_distance(h, w);
    let max = offsets.len() - 1;
    let mut sums = vec![0.0; max + 1];
    let mut counts = vec![0usize; max + 1];
    let tok = |r: usize, c: usize| &unit[(r * w + c) * d..(r * w + c + 1) * d];
    for (delta, offs) in offsets.iter().enumerate().skip(1) {
        let mut s = 0.0;
        let mut n = 0;
        for &(dy, dx) in offs {
            let (c_lo, c_hi) = if dx >= 0 {
                (0, w - dx as usize)
            } else {
                (dx.unsigned_abs(), w)
            };
            for r in 0..h - dy {
                for c in c_lo..c_hi {
                    let c2 = (c as isize + dx) as usize;
                    s += dot(tok(r, c), tok(r + dy, c2));
                    n += 1;
                }
            }
        }
        sums[delta] = s;
        counts[delta] = n;
    }
    Correlogram {
        max_distance: max,
        sums,
        counts,
    }
}
