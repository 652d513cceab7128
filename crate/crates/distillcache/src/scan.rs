//! Dataset directory scanning and the JSON Lines manifest/sample files.
//!
//! Layout: `<root>/<scene>/<frame image>`. Frames sort lexicographically by
//! file name unless the scene directory holds a `frames.txt` listing file
//! names in temporal order, one per line. Only image headers are read.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use distillcache_core::manifest::{check_unique, sort_manifest, ManifestEntry, SampleSpec};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const FRAME_ORDER_FILE: &str = "frames.txt";
pub const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

/// A dataset id with its root directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRoot {
    pub id: String,
    pub path: PathBuf,
}

impl std::str::FromStr for DatasetRoot {
    type Err = CliError;

    /// `id=path`, or a bare path whose last component becomes the id.
    fn from_str(s: &str) -> CliResult<Self> {
        let (id, path) = match s.split_once('=') {
            Some((id, path)) => (id.trim().to_string(), PathBuf::from(path.trim())),
            None => {
                let path = PathBuf::from(s.trim());
                let id = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
                (id, path)
            }
        };
        if id.is_empty() || id.contains('/') {
            return Err(CliError::input(format!("dataset root `{s}` needs an id without `/` (use id=path)")));
        }
        Ok(DatasetRoot { id, path })
    }
}

/// Forward-slash form of a path, so manifests do not depend on the host.
pub fn normalize_path(path: &Path) -> String {
    path.to_string_lossy().replace('\\', "/")
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

fn sorted_dir(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let mut out = fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| CliError::io(dir, err)))
        .collect::<CliResult<Vec<_>>>()?;
    out.sort();
    Ok(out)
}

/// Frame files of one scene in temporal order.
fn scene_frames(scene: &Path) -> CliResult<Vec<PathBuf>> {
    let order = scene.join(FRAME_ORDER_FILE);
    if order.is_file() {
        let text = fs::read_to_string(&order).map_err(|e| CliError::io(&order, e))?;
        return Ok(text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')).map(|l| scene.join(l)).collect());
    }
    Ok(sorted_dir(scene)?.into_iter().filter(|p| p.is_file() && is_image(p)).collect())
}

/// Result of a scan: entries plus per-file warnings for skipped images.
#[derive(Debug, Clone, Default)]
pub struct ScanOutput {
    pub entries: Vec<ManifestEntry>,
    pub warnings: Vec<String>,
}

/// Scans every root; scenes are processed in parallel and merged into the
/// canonical (dataset, scene, frame) order.
pub fn build_manifest(roots: &[DatasetRoot]) -> CliResult<ScanOutput> {
    let mut scenes = Vec::new();
    for root in roots {
        for path in sorted_dir(&root.path)? {
            if path.is_dir() {
                scenes.push((root.id.clone(), path));
            }
        }
    }
    let per_scene: Vec<CliResult<ScanOutput>> = scenes
        .par_iter()
        .map(|(dataset, dir)| {
            let scene_id = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            let mut out = ScanOutput::default();
            for path in scene_frames(dir)? {
                match image::image_dimensions(&path) {
                    Ok((width, height)) => {
                        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                        out.entries.push(ManifestEntry {
                            dataset_id: dataset.clone(),
                            scene_id: scene_id.clone(),
                            sample_id: format!("{dataset}/{scene_id}/{stem}"),
                            frame_index: out.entries.len() as u64,
                            width,
                            height,
                            image_path: normalize_path(&path),
                        });
                    }
                    Err(e) => out.warnings.push(format!("skipping {}: {e}", path.display())),
                }
            }
            Ok(out)
        })
        .collect();
    let mut merged = ScanOutput::default();
    for scene in per_scene {
        let scene = scene?;
        merged.entries.extend(scene.entries);
        merged.warnings.extend(scene.warnings);
    }
    sort_manifest(&mut merged.entries);
    check_unique(&merged.entries)?;
    Ok(merged)
}

/// One line of the sample list file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: String,
    pub image_paths: Vec<String>,
}

impl From<&SampleSpec> for SampleRecord {
    fn from(s: &SampleSpec) -> Self {
        SampleRecord { sample_id: s.sample_id.clone(), image_paths: s.image_paths().map(str::to_string).collect() }
    }
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    let file = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for row in rows {
        serde_json::to_writer(&mut w, row).map_err(|e| CliError::json(path, e))?;
        w.write_all(b"\n").map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> CliResult<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(serde_json::from_str(&line).map_err(|e| CliError::input(format!("{}:{}: {e}", path.display(), i + 1)))?);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_png(path: &Path, w: u32, h: u32) {
        image::save_buffer(path, &vec![128u8; (w * h) as usize], w, h, image::ExtendedColorType::L8).unwrap();
    }

    fn tree(scenes: usize, frames: usize) -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        for s in 0..scenes {
            let scene = dir.path().join(format!("scene_{s}"));
            fs::create_dir_all(&scene).unwrap();
            for f in 0..frames {
                tiny_png(&scene.join(format!("{f:03}.png")), 8, 6);
            }
        }
        dir
    }

    fn root(dir: &Path) -> DatasetRoot {
        DatasetRoot { id: "ds".into(), path: dir.to_path_buf() }
    }

    #[test]
    fn two_scenes_of_five() {
        let dir = tree(2, 5);
        let out = build_manifest(&[root(dir.path())]).unwrap();
        assert_eq!(out.entries.len(), 10);
        assert!(out.warnings.is_empty());
        let e = &out.entries[6];
        assert_eq!((e.scene_id.as_str(), e.frame_index, e.width, e.height), ("scene_1", 1, 8, 6));
        assert_eq!(e.sample_id, "ds/scene_1/001");
        assert!(e.image_path.ends_with("scene_1/001.png"));
    }

    #[test]
    fn empty_root_and_missing_root() {
        let dir = tempfile::tempdir().unwrap();
        assert!(build_manifest(&[root(dir.path())]).unwrap().entries.is_empty());
        let err = build_manifest(&[root(&dir.path().join("nope"))]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("nope"));
    }

    #[test]
    fn unreadable_image_is_skipped_with_warning() {
        let dir = tree(1, 3);
        fs::write(dir.path().join("scene_0/001.png"), b"not a png").unwrap();
        let out = build_manifest(&[root(dir.path())]).unwrap();
        assert_eq!(out.entries.len(), 2);
        assert_eq!(out.warnings.len(), 1);
        assert_eq!(out.entries.iter().map(|e| e.frame_index).collect::<Vec<_>>(), vec![0, 1]);
    }

    #[test]
    fn frame_order_file_overrides_names() {
        let dir = tree(1, 3);
        fs::write(dir.path().join("scene_0").join(FRAME_ORDER_FILE), "002.png\n000.png\n001.png\n").unwrap();
        let out = build_manifest(&[root(dir.path())]).unwrap();
        let stems: Vec<_> = out.entries.iter().map(|e| e.sample_id.rsplit('/').next().unwrap().to_string()).collect();
        assert_eq!(stems, vec!["002", "000", "001"]);
    }

    #[test]
    fn jsonl_roundtrip_and_determinism() {
        let dir = tree(2, 4);
        let a = build_manifest(&[root(dir.path())]).unwrap().entries;
        let b = build_manifest(&[root(dir.path())]).unwrap().entries;
        let out = tempfile::tempdir().unwrap();
        let (pa, pb) = (out.path().join("a.jsonl"), out.path().join("b.jsonl"));
        write_jsonl(&pa, &a).unwrap();
        write_jsonl(&pb, &b).unwrap();
        assert_eq!(fs::read(&pa).unwrap(), fs::read(&pb).unwrap());
        let back: Vec<ManifestEntry> = read_jsonl(&pa).unwrap();
        assert_eq!(back, a);
        let first = fs::read_to_string(&pa).unwrap().lines().next().unwrap().to_string();
        assert!(first.starts_with("{\"dataset_id\":\"ds\",\"scene_id\":\"scene_0\",\"sample_id\""));
    }

    #[test]
    fn root_parsing() {
        let r: DatasetRoot = "co3d=/data/co3d".parse().unwrap();
        assert_eq!((r.id.as_str(), r.path.as_path()), ("co3d", Path::new("/data/co3d")));
        let r: DatasetRoot = "/data/scannet".parse().unwrap();
        assert_eq!(r.id, "scannet");
        assert!("a/b=/x".parse::<DatasetRoot>().is_err());
    }
}
