pub mod correlate;
pub mod correlogram;
pub mod metrics;
pub mod synth;
pub mod transform;

use std::path::Path;

use anyhow::{Context, Result};
use ssm_core::feature_io::load_patch_grid;
use ssm_core::PatchGrid;

/// Parses `HxW` into a lattice size for flat `(T, D)` feature files.
pub fn parse_grid_size(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HxW, got {s:?}"))?;
    let h: usize = h
        .trim()
        .parse()
        .map_err(|_| format!("bad height in {s:?}"))?;
    let w: usize = w
        .trim()
        .parse()
        .map_err(|_| format!("bad width in {s:?}"))?;
    if h == 0 || w == 0 {
        return Err(format!("grid size must be positive, got {s:?}"));
    }
    Ok((h, w))
}

pub fn load_grid(path: &Path, hint: Option<(usize, usize)>) -> Result<PatchGrid> {
    load_patch_grid(path, hint).with_context(|| format!("loading features {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_size_parsing() {
        assert_eq!(parse_grid_size("16x16"), Ok((16, 16)));
        assert_eq!(parse_grid_size("3X5"), Ok((3, 5)));
        assert!(parse_grid_size("16").is_err());
        assert!(parse_grid_size("0x4").is_err());
    }
}
