//! Point-cloud files for evaluation.
//!
//! Binary form (any extension other than `.xyz`/`.txt`): a little-endian u64
//! point count followed by `count * 3` little-endian f64 coordinates.
//! Text form (`.xyz`, `.txt`): one `x y z` triple per line; blank lines and
//! lines starting with `#` are ignored.

use std::fs;
use std::path::{Path, PathBuf};

use distillcache_core::eval::Point3;
use distillcache_core::Error as CoreError;

use crate::error::{CliError, CliResult};

const COUNT_LEN: usize = 8;

fn is_text(path: &Path) -> bool {
    path.extension().and_then(|e| e.to_str()).is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "xyz" | "txt"))
}

pub fn encode_binary(points: &[Point3]) -> Vec<u8> {
    let mut out = Vec::with_capacity(COUNT_LEN + points.len() * 24);
    out.extend_from_slice(&(points.len() as u64).to_le_bytes());
    for p in points {
        for v in p {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_binary(bytes: &[u8]) -> Result<Vec<Point3>, CoreError> {
    if bytes.len() < COUNT_LEN {
        return Err(CoreError::Corrupt { offset: bytes.len() as u64, reason: "truncated point count".into() });
    }
    let count = u64::from_le_bytes(bytes[..COUNT_LEN].try_into().expect("eight bytes"));
    let want = count.checked_mul(24).and_then(|b| b.checked_add(COUNT_LEN as u64));
    if want != Some(bytes.len() as u64) {
        let offset = want.map_or(COUNT_LEN as u64, |w| w.min(bytes.len() as u64));
        return Err(CoreError::Corrupt { offset, reason: format!("{count} points need {want:?} bytes, file has {}", bytes.len()) });
    }
    let coords: Vec<f64> =
        bytes[COUNT_LEN..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes"))).collect();
    Ok(coords.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
}

pub fn parse_xyz(text: &str) -> Result<Vec<Point3>, String> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals = line
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
            .map(str::parse::<f64>)
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| format!("line {}: {e}", i + 1))?;
        match vals.as_slice() {
            [x, y, z] => out.push([*x, *y, *z]),
            _ => return Err(format!("line {}: expected 3 coordinates, found {}", i + 1, vals.len())),
        }
    }
    Ok(out)
}

pub fn format_xyz(points: &[Point3]) -> String {
    points.iter().map(|p| format!("{:?} {:?} {:?}\n", p[0], p[1], p[2])).collect()
}

pub fn read_cloud(path: &Path) -> CliResult<Vec<Point3>> {
    if is_text(path) {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        parse_xyz(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
    } else {
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        decode_binary(&bytes).map_err(|e| CliError::corrupt(path, e))
    }
}

pub fn write_cloud(path: &Path, points: &[Point3]) -> CliResult<()> {
    let bytes = if is_text(path) { format_xyz(points).into_bytes() } else { encode_binary(points) };
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

/// Cloud files of a directory (one per view), sorted by file name.
pub fn list_clouds(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| CliError::io(dir, e))? {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        let cloud_ext = path.extension().and_then(|e| e.to_str()).is_some_and(|e| matches!(e, "bin" | "xyz" | "txt"));
        if path.is_file() && cloud_ext {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}
