//! Binary PPM/PGM export. Grids go out as 16-bit P5, min-max normalized,
//! with the raw range recorded in a JSON sidecar next to the file.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Tensor;

/// Raw range (and optional extra fields) accompanying a 16-bit PGM.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridSidecar {
    pub min: f64,
    pub max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub yaw_range: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pitch_range: Option<[f64; 2]>,
}

/// 8-bit binary PPM (P6) from a [3, H, W] tensor in [0, 1].
pub fn write_ppm(path: &Path, rgb: &Tensor) -> Result<()> {
    let s = rgb.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::ShapeMismatch {
            op: "write-ppm".into(),
            shapes: format!("{:?}", s),
        });
    }
    let (h, w) = (s[1], s[2]);
    let mut buf = Vec::with_capacity(h * w * 3 + 32);
    write!(buf, "P6\n{} {}\n255\n", w, h)?;
    let v = rgb.values();
    for i in 0..h {
        for j in 0..w {
            for c in 0..3 {
                let x = v[c * h * w + i * w + j].clamp(0.0, 1.0);
                buf.push((x * 255.0).round() as u8);
            }
        }
    }
    fs::write(path, buf)?;
    Ok(())
}

/// 16-bit binary PGM (P5, big-endian) with min-max normalization; the raw
/// range is written to `<path>.json`.
pub fn write_pgm16(path: &Path, grid: &Tensor, sidecar: Option<GridSidecar>) -> Result<()> {
    let s = grid.shape();
    if s.len() != 2 {
        return Err(Error::ShapeMismatch {
            op: "write-pgm".into(),
            shapes: format!("{:?}", s),
        });
    }
    let (h, w) = (s[0], s[1]);
    let vals = grid.values();
    let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;

    let mut buf = Vec::with_capacity(h * w * 2 + 32);
    write!(buf, "P5\n{} {}\n65535\n", w, h)?;
    for &x in vals {
        let t = if span > 0.0 { (x - min) / span } else { 0.0 };
        let q = (t * 65535.0).round() as u16;
        buf.extend_from_slice(&q.to_be_bytes());
    }
    fs::write(path, buf)?;

    let side = GridSidecar {
        min,
        max,
        ..sidecar.unwrap_or(GridSidecar {
            min,
            max,
            yaw_range: None,
            pitch_range: None,
        })
    };
    let json = serde_json::to_string_pretty(&side)?;
    fs::write(sidecar_path(path), json)?;
    Ok(())
}

/// Read back a 16-bit PGM and its sidecar, denormalizing to raw values.
pub fn read_pgm16(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path)?;
    let text_end = header_end(&bytes)?;
    let header = std::str::from_utf8(&bytes[..text_end])
        .map_err(|_| Error::CheckpointFormat("pgm header not utf-8".into()))?;
    let mut it = header.split_ascii_whitespace();
    if it.next() != Some("P5") {
        return Err(Error::CheckpointFormat("not a P5 pgm".into()));
    }
    let w: usize = it
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::CheckpointFormat("pgm width".into()))?;
    let h: usize = it
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::CheckpointFormat("pgm height".into()))?;
    let maxval: usize = it
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::CheckpointFormat("pgm maxval".into()))?;
    if maxval != 65535 {
        return Err(Error::CheckpointFormat("expected 16-bit pgm".into()));
    }
    let data = &bytes[text_end + 1..];
    if data.len() != h * w * 2 {
        return Err(Error::CheckpointFormat(format!(
            "pgm payload {} bytes, expected {}",
            data.len(),
            h * w * 2
        )));
    }
    let side: GridSidecar = serde_json::from_str(&fs::read_to_string(sidecar_path(path))?)?;
    let span = side.max - side.min;
    let vals: Vec<f64> = data
        .chunks_exact(2)
        .map(|c| {
            let q = u16::from_be_bytes([c[0], c[1]]) as f64 / 65535.0;
            side.min + q * span
        })
        .collect();
    Tensor::new(vec![h, w], vals)
}

pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".json");
    s.into()
}

/// Offset of the last header byte: P5, width, height, maxval are separated
/// by single whitespace bytes; payload starts right after the maxval's
/// terminating whitespace.
fn header_end(bytes: &[u8]) -> Result<usize> {
    let mut fields = 0;
    let mut in_field = false;
    for (i, &b) in bytes.iter().enumerate() {
        let ws = b == b' ' || b == b'\n' || b == b'\r' || b == b'\t';
        if ws && in_field {
            fields += 1;
            in_field = false;
            if fields == 4 {
                return Ok(i);
            }
        } else if !ws {
            in_field = true;
        }
    }
    Err(Error::CheckpointFormat("truncated pgm header".into()))
}
