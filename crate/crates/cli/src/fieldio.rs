//! Raw sample files with JSON sidecars, PGM input, and atomic writes.
//!
//! A field `name` is stored as `name.f32` (or `name.u8` for masks), raw
//! little-endian samples in row-major order with the last axis fastest,
//! next to `name.json`:
//!
//! ```json
//! {"shape": [256, 256], "dtype": "f32", "axes": ["y", "x"]}
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stscale::ScalarField;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    U8,
}

impl Dtype {
    pub fn extension(self) -> &'static str {
        match self {
            Dtype::F32 => "f32",
            Dtype::U8 => "u8",
        }
    }

    fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::U8 => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub shape: Vec<usize>,
    pub dtype: Dtype,
    pub axes: Vec<String>,
}

impl Sidecar {
    pub fn new(shape: &[usize], dtype: Dtype) -> Self {
        let names: &[&str] = if shape.len() == 3 { &["z", "y", "x"] } else { &["y", "x"] };
        Self { shape: shape.to_vec(), dtype, axes: names.iter().map(|s| s.to_string()).collect() }
    }
}

pub fn sidecar_path(payload: &Path) -> PathBuf {
    payload.with_extension("json")
}

/// Writes `bytes` to a temporary sibling and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let name = path
        .file_name()
        .ok_or_else(|| CliError::format(path, "not a file path"))?
        .to_string_lossy();
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    let mut f = fs::File::create(&tmp).map_err(|e| CliError::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| CliError::io(&tmp, e))?;
    f.sync_all().map_err(|e| CliError::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::format(path, e.to_string()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Writes `dir/name.<ext>` and its sidecar; returns the payload path.
pub fn write_field(dir: &Path, name: &str, field: &ScalarField, dtype: Dtype) -> CliResult<PathBuf> {
    let path = dir.join(format!("{name}.{}", dtype.extension()));
    let bytes: Vec<u8> = match dtype {
        Dtype::F32 => field.data().iter().flat_map(|&v| (v as f32).to_le_bytes()).collect(),
        Dtype::U8 => field.data().iter().map(|&v| v.round().clamp(0.0, 255.0) as u8).collect(),
    };
    write_atomic(&path, &bytes)?;
    write_json(&sidecar_path(&path), &Sidecar::new(field.shape(), dtype))?;
    Ok(path)
}

/// Reads a raw field through its sidecar.
pub fn read_field(path: &Path) -> CliResult<ScalarField> {
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|e| CliError::io(&side, e))?;
    let meta: Sidecar = serde_json::from_str(&text).map_err(|e| CliError::format(&side, e.to_string()))?;
    if meta.axes.len() != meta.shape.len() {
        return Err(CliError::format(&side, "axes and shape differ in length"));
    }
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    let count: usize = meta.shape.iter().product();
    if bytes.len() != count * meta.dtype.size() {
        return Err(CliError::format(
            path,
            format!("{} bytes, sidecar shape {:?} needs {}", bytes.len(), meta.shape, count * meta.dtype.size()),
        ));
    }
    let data = match meta.dtype {
        Dtype::F32 => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect(),
        Dtype::U8 => bytes.iter().map(|&b| b as f64).collect(),
    };
    ScalarField::new(meta.shape, data).map_err(|e| CliError::format(path, e.to_string()))
}

/// Reads a P2 or P5 graymap scaled to [0, 1].
pub fn read_pgm(path: &Path) -> CliResult<ScalarField> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    let bad = |msg: &str| CliError::format(path, msg.to_string());
    let mut pos = 0;
    let mut token = || -> Option<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        (pos > start).then(|| String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = token().ok_or_else(|| bad("empty file"))?;
    let mut num = |what: &str| -> CliResult<usize> {
        token().and_then(|t| t.parse().ok()).ok_or_else(|| bad(&format!("missing or invalid {what}")))
    };
    let (w, h, maxval) = (num("width")?, num("height")?, num("maxval")?);
    if w == 0 || h == 0 || maxval == 0 || maxval > 65535 {
        return Err(bad("width, height and maxval must be positive, maxval <= 65535"));
    }
    let n = w * h;
    let raw: Vec<usize> = match magic.as_str() {
        "P2" => (0..n).map(|_| num("sample")).collect::<CliResult<_>>()?,
        "P5" => {
            // one whitespace byte separates the header from the samples
            let start = pos + 1;
            let size = if maxval < 256 { 1 } else { 2 };
            let body = bytes.get(start..start + n * size).ok_or_else(|| bad("truncated sample data"))?;
            if size == 1 {
                body.iter().map(|&b| b as usize).collect()
            } else {
                body.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]]) as usize).collect()
            }
        }
        _ => return Err(bad("not a P2/P5 graymap")),
    };
    if raw.iter().any(|&v| v > maxval) {
        return Err(bad("sample exceeds maxval"));
    }
    let scale = maxval as f64;
    ScalarField::new(vec![h, w], raw.into_iter().map(|v| v as f64 / scale).collect())
        .map_err(|e| CliError::format(path, e.to_string()))
}

/// Reads a `.pgm` graymap or a raw field with sidecar.
pub fn read_input(path: &Path) -> CliResult<ScalarField> {
    match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("pgm") => read_pgm(path),
        _ => read_field(path),
    }
}

/// Binary P6 image from 8-bit RGB triples.
pub fn write_ppm(path: &Path, width: usize, height: usize, rgb: &[[u8; 3]]) -> CliResult<()> {
    let mut bytes = format!("P6\n{width} {height}\n255\n").into_bytes();
    bytes.extend(rgb.iter().flatten());
    write_atomic(path, &bytes)
}
