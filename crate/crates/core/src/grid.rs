//! In-memory containers for patch-token feature maps, segment masks and
//! per-channel vectors.

use crate::error::{Error, Result};

/// One image's patch tokens laid out on an `height x width` lattice.
///
/// Storage is row-major with the channel axis innermost, so token
/// `t = row * width + col` occupies `data[t * dim..(t + 1) * dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    height: usize,
    width: usize,
    dim: usize,
    data: Vec<f64>,
}

impl PatchGrid {
    pub fn new(height: usize, width: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || dim == 0 {
            return Err(Error::Shape(format!(
                "dimensions must be positive, got ({height}, {width}, {dim})"
            )));
        }
        let expected = height
            .checked_mul(width)
            .and_then(|t| t.checked_mul(dim))
            .ok_or_else(|| Error::Shape("element count overflows".into()))?;
        if data.len() != expected {
            return Err(Error::Shape(format!(
                "({height}, {width}, {dim}) needs {expected} elements, got {}",
                data.len()
            )));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(PatchGrid {
            height,
            width,
            dim,
            data,
        })
    }

    /// Builds a grid from a closure evaluated at every `(row, col, channel)`.
    pub fn from_fn(
        height: usize,
        width: usize,
        dim: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * dim);
        for r in 0..height {
            for c in 0..width {
                for k in 0..dim {
                    data.push(f(r, c, k));
                }
            }
        }
        Self::new(height, width, dim, data)
    }

    /// Builds a grid from one vector per token, in row-major token order.
    pub fn from_tokens(height: usize, width: usize, tokens: &[Vec<f64>]) -> Result<Self> {
        let dim = tokens.first().map_or(0, Vec::len);
        if tokens.len() != height * width {
            return Err(Error::Shape(format!(
                "{height}x{width} lattice needs {} tokens, got {}",
                height * width,
                tokens.len()
            )));
        }
        if let Some(bad) = tokens.iter().find(|t| t.len() != dim) {
            return Err(Error::DimMismatch {
                expected: dim,
                found: bad.len(),
            });
        }
        Self::new(height, width, dim, tokens.concat())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of tokens `T = H * W`.
    pub fn tokens(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn token(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn token_at(&self, row: usize, col: usize) -> &[f64] {
        self.token(row * self.width + col)
    }

    pub fn iter_tokens(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.dim)
    }

    /// Lattice coordinates `(row, col)` of token `t`.
    pub fn position(&self, t: usize) -> (usize, usize) {
        (t / self.width, t % self.width)
    }

    /// Manhattan distance between tokens `a` and `b` on the lattice.
    pub fn lattice_distance(&self, a: usize, b: usize) -> usize {
        let (ra, ca) = self.position(a);
        let (rb, cb) = self.position(b);
        ra.abs_diff(rb) + ca.abs_diff(cb)
    }

    /// Applies `f` to every token, producing a grid with `out_dim` channels.
    pub(crate) fn map_tokens(
        &self,
        out_dim: usize,
        mut f: impl FnMut(usize, &[f64], &mut [f64]),
    ) -> Result<PatchGrid> {
        let mut out = vec![0.0; self.tokens() * out_dim];
        for (t, (src, dst)) in self
            .iter_tokens()
            .zip(out.chunks_exact_mut(out_dim))
            .enumerate()
        {
            f(t, src, dst);
        }
        PatchGrid::new(self.height, self.width, out_dim, out)
    }

    /// Returns a new grid whose token at position `t` is the input token `perm[t]`.
    pub fn permute_tokens(&self, perm: &[usize]) -> Result<PatchGrid> {
        if perm.len() != self.tokens() {
            return Err(Error::DimMismatch {
                expected: self.tokens(),
                found: perm.len(),
            });
        }
        let mut data = Vec::with_capacity(self.data.len());
        for &src in perm {
            if src >= self.tokens() {
                return Err(Error::Shape(format!(
                    "permutation index {src} out of range"
                )));
            }
            data.extend_from_slice(self.token(src));
        }
        PatchGrid::new(self.height, self.width, self.dim, data)
    }
}

/// Binary object mask over the patch lattice.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl SegmentMask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Shape(format!(
                "mask dimensions must be positive, got ({height}, {width})"
            )));
        }
        if bits.len() != height * width {
            return Err(Error::Shape(format!(
                "{height}x{width} mask needs {} bits, got {}",
                height * width,
                bits.len()
            )));
        }
        Ok(SegmentMask {
            height,
            width,
            bits,
        })
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> bool,
    ) -> Result<Self> {
        let bits = (0..height * width)
            .map(|t| f(t / width, t % width))
            .collect();
        Self::new(height, width, bits)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, t: usize) -> bool {
        self.bits[t]
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// A single per-channel vector, e.g. a CLS token or the mean patch token.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelVector {
    values: Vec<f64>,
}

impl ChannelVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Shape("channel vector must be non-empty".into()));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(ChannelVector { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}
