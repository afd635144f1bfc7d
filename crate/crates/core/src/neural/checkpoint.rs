//! Textual checkpoint format: a version header, the layer dims line, then
//! one decimal value per line at 17 significant digits (bit-exact for
//! 64-bit floats on reload).

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

use super::mlp::MlpParams;

const HEADER: &str = "SAMRL-CKPT v1";

pub fn checkpoint_save(params: &MlpParams, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str(HEADER);
    out.push('\n');
    let dims: Vec<String> = params.dims.iter().map(|d| d.to_string()).collect();
    out.push_str(&dims.join(" "));
    out.push('\n');
    for v in params.flatten() {
        writeln!(out, "{:.16e}", v).expect("string write");
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn checkpoint_load(path: &Path) -> Result<MlpParams> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == HEADER => {}
        Some(h) => {
            return Err(Error::CheckpointFormat(format!(
                "bad header {h:?}, expected {HEADER:?}"
            )))
        }
        None => return Err(Error::CheckpointFormat("empty file".into())),
    }
    let dims: Vec<usize> = lines
        .next()
        .ok_or_else(|| Error::CheckpointFormat("missing dims line".into()))?
        .split_ascii_whitespace()
        .map(|t| {
            t.parse::<usize>()
                .map_err(|_| Error::CheckpointFormat(format!("bad dim {t:?}")))
        })
        .collect::<Result<_>>()?;
    if dims.len() < 2 {
        return Err(Error::CheckpointFormat("need at least two dims".into()));
    }
    let expected: usize = dims.windows(2).map(|p| p[0] * p[1] + p[1]).sum();
    let mut values = Vec::with_capacity(expected);
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        values.push(
            line.trim()
                .parse::<f64>()
                .map_err(|_| Error::CheckpointFormat(format!("bad value {line:?}")))?,
        );
    }
    if values.len() != expected {
        return Err(Error::CheckpointFormat(format!(
            "expected {} values, found {}",
            expected,
            values.len()
        )));
    }
    MlpParams::from_flat(&dims, &values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_bit_exact() {
        let params = MlpParams::init_xavier(&[7, 5, 3], 9);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("net.ckpt");
        checkpoint_save(&params, &p).unwrap();
        let back = checkpoint_load(&p).unwrap();
        assert_eq!(back.dims, params.dims);
        let a = params.flatten();
        let b = back.flatten();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn truncated_file_reports_counts() {
        let params = MlpParams::init_xavier(&[4, 2], 1);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("net.ckpt");
        checkpoint_save(&params, &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let truncated: Vec<&str> = text.lines().take(6).collect();
        std::fs::write(&p, truncated.join("\n")).unwrap();
        let err = checkpoint_load(&p).unwrap_err().to_string();
        assert!(err.contains("expected 10") && err.contains("found 4"), "{err}");
    }

    #[test]
    fn wrong_header_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("net.ckpt");
        std::fs::write(&p, "SAMRL-CKPT v2\n2 2\n0\n0\n0\n0\n0\n0\n").unwrap();
        assert!(matches!(
            checkpoint_load(&p),
            Err(Error::CheckpointFormat(_))
        ));
    }
}
