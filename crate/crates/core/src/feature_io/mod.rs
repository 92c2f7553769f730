//! Loading and saving patch grids, masks and auxiliary tensors as NPY files.
//!
//! A feature directory is a flat folder of `.npy` files, one per image. The
//! image id is the file stem; masks pair with features by identical stem in a
//! sibling folder.

pub mod npy;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::grid::{ChannelVector, PatchGrid, SegmentMask};
use npy::{NpyArray, Payload};

/// A float tensor of arbitrary rank, as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

pub fn read_npy(path: &Path) -> Result<NpyArray> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    npy::decode(&bytes).map_err(|reason| Error::npy(path, reason))
}

/// Reads a float tensor, rejecting integer/boolean payloads and non-finite values.
pub fn load_tensor(path: &Path) -> Result<Tensor> {
    let arr = read_npy(path)?;
    let data = match arr.payload {
        Payload::Float(v) => v,
        other => {
            return Err(Error::npy(
                path,
                format!("expected a float payload, found {}", other.kind()),
            ))
        }
    };
    if let Some(index) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::npy(
            path,
            format!("non-finite value at element {index}"),
        ));
    }
    Ok(Tensor {
        shape: arr.shape,
        data,
    })
}

pub fn save_tensor(path: &Path, shape: &[usize], data: &[f64]) -> Result<()> {
    if shape.iter().product::<usize>() != data.len() {
        return Err(Error::Shape(format!(
            "shape {shape:?} does not match {} elements",
            data.len()
        )));
    }
    write_atomic(path, &npy::encode_f64(shape, data))
}

/// Loads a patch grid stored as `(H, W, D)`, or as `(T, D)` together with an
/// `(H, W)` hint satisfying `H * W = T`.
pub fn load_patch_grid(path: &Path, grid_hint: Option<(usize, usize)>) -> Result<PatchGrid> {
    let Tensor { shape, data } = load_tensor(path)?;
    let (h, w, d) = match (shape.as_slice(), grid_hint) {
        (&[h, w, d], None) => (h, w, d),
        (&[h, w, d], Some(hint)) => {
            if hint != (h, w) {
                return Err(Error::npy(
                    path,
                    format!("hint {hint:?} contradicts stored shape ({h}, {w}, {d})"),
                ));
            }
            (h, w, d)
        }
        (&[t, d], Some((h, w))) => {
            if h.checked_mul(w) != Some(t) {
                return Err(Error::npy(
                    path,
                    format!("hint ({h}, {w}) gives {} tokens but file holds {t}", h * w),
                ));
            }
            (h, w, d)
        }
        (&[_, _], None) => return Err(Error::npy(path, "shape (T, D) needs an (H, W) grid hint")),
        (other, _) => {
            return Err(Error::npy(
                path,
                format!("expected shape (H, W, D) or (T, D), found {other:?}"),
            ))
        }
    };
    PatchGrid::new(h, w, d, data).map_err(|e| Error::npy(path, e.to_string()))
}

/// Writes `grid` as a `(H, W, D)` little-endian `f64` C-order array.
pub fn save_patch_grid(grid: &PatchGrid, path: &Path) -> Result<()> {
    save_tensor(
        path,
        &[grid.height(), grid.width(), grid.dim()],
        grid.data(),
    )
}

/// Loads an `(H, W)` mask whose entries are all 0 or 1 (any numeric or boolean dtype).
pub fn load_mask(path: &Path) -> Result<SegmentMask> {
    let arr = read_npy(path)?;
    let (h, w) = match arr.shape.as_slice() {
        &[h, w] => (h, w),
        other => {
            return Err(Error::npy(
                path,
                format!("mask must have shape (H, W), found {other:?}"),
            ))
        }
    };
    let bits = match arr.payload {
        Payload::Bool(b) => b,
        Payload::Int(v) => v
            .into_iter()
            .enumerate()
            .map(|(i, x)| match x {
                0 => Ok(false),
                1 => Ok(true),
                _ => Err(Error::npy(
                    path,
                    format!("mask value {x} at element {i} is not 0 or 1"),
                )),
            })
            .collect::<Result<_>>()?,
        Payload::Float(v) => v
            .into_iter()
            .enumerate()
            .map(|(i, x)| {
                if x == 0.0 {
                    Ok(false)
                } else if x == 1.0 {
                    Ok(true)
                } else {
                    Err(Error::npy(
                        path,
                        format!("mask value {x} at element {i} is not 0 or 1"),
                    ))
                }
            })
            .collect::<Result<_>>()?,
    };
    SegmentMask::new(h, w, bits).map_err(|e| Error::npy(path, e.to_string()))
}

pub fn save_mask(mask: &SegmentMask, path: &Path) -> Result<()> {
    let data: Vec<f64> = mask
        .bits()
        .iter()
        .map(|&b| if b { 1.0 } else { 0.0 })
        .collect();
    save_tensor(path, &[mask.height(), mask.width()], &data)
}

/// Loads a 1-D vector of length D.
pub fn load_channel_vector(path: &Path) -> Result<ChannelVector> {
    let t = load_tensor(path)?;
    if t.shape.len() != 1 {
        return Err(Error::npy(
            path,
            format!("expected a 1-D vector, found shape {:?}", t.shape),
        ));
    }
    ChannelVector::new(t.data).map_err(|e| Error::npy(path, e.to_string()))
}

pub fn save_channel_vector(v: &ChannelVector, path: &Path) -> Result<()> {
    save_tensor(path, &[v.dim()], v.values())
}

/// Lists the `.npy` files of a feature directory as `(stem, path)`, sorted by stem.
pub fn list_feature_files(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == "npy") {
            let stem = path
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| Error::npy(&path, "file stem is not valid UTF-8"))?
                .to_string();
            files.push((stem, path));
        }
    }
    files.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(files)
}

/// Writes `bytes` to a temporary sibling of `path` and renames it into place,
/// so readers never observe a partially written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| Error::io(path, std::io::Error::other("path has no file name")))?;
    let tmp = dir.join(format!(
        ".{}.{}.tmp",
        name.to_string_lossy(),
        std::process::id()
    ));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}
