#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;

pub struct Run {
    pub code: i32,
    pub json: Value,
    pub stderr: String,
}

/// Runs the binary in `cwd` and parses its JSON output.
pub fn run(cwd: &Path, args: &[&str]) -> Run {
    let out = Command::new(env!("CARGO_BIN_EXE_distillcache"))
        .args(args)
        .current_dir(cwd)
        .env("DISTILLCACHE_LOG", "warn")
        .output()
        .expect("binary runs");
    let stdout = String::from_utf8(out.stdout).expect("utf-8 output");
    let json = serde_json::from_str(&stdout).unwrap_or_else(|e| panic!("stdout is not JSON ({e}): {stdout}"));
    Run { code: out.status.code().expect("exit code"), json, stderr: String::from_utf8_lossy(&out.stderr).into_owned() }
}

pub fn ok(cwd: &Path, args: &[&str]) -> Value {
    let r = run(cwd, args);
    assert_eq!(r.code, 0, "{args:?} failed: {}\n{}", r.stderr, r.json);
    r.json
}

pub fn tiny_png(path: &Path, shade: u8) {
    image::save_buffer(path, &[shade; 8 * 6], 8, 6, image::ExtendedColorType::L8).unwrap();
}

/// `<dir>/data/scene_XX/NNN.png`, `scenes` x `frames` tiny images.
pub fn image_tree(dir: &Path, scenes: usize, frames: usize) -> PathBuf {
    let data = dir.join("data");
    for s in 0..scenes {
        let scene = data.join(format!("scene_{s:02}"));
        fs::create_dir_all(&scene).unwrap();
        for f in 0..frames {
            tiny_png(&scene.join(format!("{f:03}.png")), (f * 7 % 256) as u8);
        }
    }
    data
}

/// All files below `dir` (relative path, bytes), sorted.
pub fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(String, Vec<u8>)>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out.sort();
    out
}
