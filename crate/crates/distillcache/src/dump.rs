//! Teacher dump exchange format.
//!
//! A dump is one directory per sample:
//!
//! ```text
//! descriptor.json     {"sample_id", "n_views", "height", "width", "dtype": "float32-le"}
//! pts_global.f32      n_views * height * width * 3 float32, view-major, row-major
//! pts_local.f32       same layout
//! conf_global.f32     n_views * height * width float32
//! conf_local.f32      same layout
//! ```
//!
//! All floats are little-endian. `tools/write_teacher_dump.py` writes the
//! same layout from NumPy arrays.

use std::fs;
use std::path::{Path, PathBuf};

use distillcache_core::teacher::TeacherSample;
use distillcache_core::{ConfidenceMap, Error as CoreError, Frame, PointMap, Resolution, ViewMaps};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const DESCRIPTOR_FILE: &str = "descriptor.json";
pub const DTYPE: &str = "float32-le";

/// Array files in the order they are read, with their channel counts.
pub const ARRAYS: [(&str, usize); 4] = [("pts_global.f32", 3), ("pts_local.f32", 3), ("conf_global.f32", 1), ("conf_local.f32", 1)];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DumpDescriptor {
    pub sample_id: String,
    pub n_views: usize,
    pub height: usize,
    pub width: usize,
    pub dtype: String,
}

impl DumpDescriptor {
    pub fn resolution(&self) -> Resolution {
        Resolution::new(self.height, self.width)
    }

    /// Raw float32 bytes of all four arrays.
    pub fn payload_bytes(&self) -> u64 {
        ARRAYS.iter().map(|(_, c)| (self.n_views * self.height * self.width * c * 4) as u64).sum()
    }
}

/// Directory holding the dump of `sample_id` under `root`.
pub fn dump_dir(root: &Path, sample_id: &str) -> PathBuf {
    root.join(crate::sample_file_stem(sample_id))
}

pub fn read_descriptor(dir: &Path) -> CliResult<DumpDescriptor> {
    let path = dir.join(DESCRIPTOR_FILE);
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let d: DumpDescriptor = serde_json::from_str(&text).map_err(|e| CliError::json(&path, e))?;
    if d.dtype != DTYPE {
        return Err(CliError::corrupt(&path, CoreError::Format(format!("unsupported dtype `{}`, expected `{DTYPE}`", d.dtype))));
    }
    if d.n_views == 0 || d.height == 0 || d.width == 0 {
        return Err(CliError::corrupt(
            &path,
            CoreError::InvalidData(format!("descriptor declares an empty sample ({} views of {}x{})", d.n_views, d.height, d.width)),
        ));
    }
    Ok(d)
}

fn read_f32s(path: &Path, expected_values: usize) -> CliResult<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    let want = expected_values * 4;
    if bytes.len() != want {
        let offset = bytes.len().min(want) as u64;
        return Err(CliError::corrupt(
            path,
            CoreError::Corrupt { offset, reason: format!("array holds {} bytes, descriptor implies {want}", bytes.len()) },
        ));
    }
    Ok(bytes.chunks_exact(4).map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]]))).collect())
}

/// Reads a dump into float32-precision teacher maps (no masks yet).
pub fn read_teacher_dump(dir: &Path) -> CliResult<(DumpDescriptor, TeacherSample)> {
    let d = read_descriptor(dir)?;
    let res = d.resolution();
    let per_view = res.pixels();
    let mut arrays = Vec::with_capacity(4);
    for (name, channels) in ARRAYS {
        let path = dir.join(name);
        arrays.push((path.clone(), read_f32s(&path, d.n_views * per_view * channels)?, channels));
    }
    let slice = |i: usize, k: usize| {
        let (_, data, c) = &arrays[i];
        data[k * per_view * c..(k + 1) * per_view * c].to_vec()
    };
    let at = |i: usize| arrays[i].0.clone();
    let mut views = Vec::with_capacity(d.n_views);
    for k in 0..d.n_views {
        views.push(ViewMaps::new(
            PointMap::new(res, Frame::Global, slice(0, k)).map_err(|e| CliError::from_core_at(at(0), e))?,
            PointMap::new(res, Frame::Local, slice(1, k)).map_err(|e| CliError::from_core_at(at(1), e))?,
            ConfidenceMap::new(res, slice(2, k)).map_err(|e| CliError::from_core_at(at(2), e))?,
            ConfidenceMap::new(res, slice(3, k)).map_err(|e| CliError::from_core_at(at(3), e))?,
        )?);
    }
    Ok((d, TeacherSample::new(views)?))
}

/// Writes a dump; values are stored as float32.
pub fn write_teacher_dump(dir: &Path, sample_id: &str, teacher: &TeacherSample) -> CliResult<DumpDescriptor> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let res = teacher.resolution();
    let d = DumpDescriptor {
        sample_id: sample_id.to_string(),
        n_views: teacher.len(),
        height: res.height,
        width: res.width,
        dtype: DTYPE.to_string(),
    };
    let path = dir.join(DESCRIPTOR_FILE);
    let text = serde_json::to_string_pretty(&d).map_err(|e| CliError::json(&path, e))?;
    fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))?;
    let fields: [fn(&ViewMaps) -> &[f64]; 4] =
        [|v| v.global.as_slice(), |v| v.local.as_slice(), |v| v.conf_global.as_slice(), |v| v.conf_local.as_slice()];
    for ((name, _), field) in ARRAYS.iter().zip(fields) {
        let mut bytes = Vec::new();
        for v in teacher.views() {
            for x in field(v) {
                bytes.extend_from_slice(&(*x as f32).to_le_bytes());
            }
        }
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use distillcache_core::teacher::{synth_teacher, SyntheticScene};

    fn teacher() -> TeacherSample {
        synth_teacher(&SyntheticScene::new(5, 2, Resolution::new(6, 9))).unwrap()
    }

    #[test]
    fn roundtrips_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let t = teacher();
        let d = write_teacher_dump(dir.path(), "ds/scene/0", &t).unwrap();
        assert_eq!(d.payload_bytes(), 2 * 54 * 8 * 4);
        let (back_d, back) = read_teacher_dump(dir.path()).unwrap();
        assert_eq!(back_d, d);
        assert_eq!(back.views(), t.views());
    }

    #[test]
    fn short_array_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        write_teacher_dump(dir.path(), "s", &teacher()).unwrap();
        let mut d = read_descriptor(dir.path()).unwrap();
        d.n_views = 3;
        fs::write(dir.path().join(DESCRIPTOR_FILE), serde_json::to_string(&d).unwrap()).unwrap();
        let err = read_teacher_dump(dir.path()).unwrap_err();
        assert_eq!(err.exit_code(), 4);
        assert_eq!(err.offset(), Some(2 * 54 * 3 * 4));
    }

    #[test]
    fn negative_confidence_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_teacher_dump(dir.path(), "s", &teacher()).unwrap();
        let path = dir.path().join("conf_local.f32");
        let mut bytes = fs::read(&path).unwrap();
        bytes[8..12].copy_from_slice(&(-0.5f32).to_le_bytes());
        fs::write(&path, bytes).unwrap();
        let err = read_teacher_dump(dir.path()).unwrap_err();
        assert!(matches!(err, CliError::Corrupt { source: CoreError::InvalidData(_), .. }), "{err}");
    }

    #[test]
    fn missing_descriptor_is_io() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(read_teacher_dump(dir.path()).unwrap_err().exit_code(), 2);
    }
}
