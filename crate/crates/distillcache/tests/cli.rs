//! Subcommand behaviour through the real binary: outputs, exit codes and
//! determinism.

use std::fs;
use std::path::Path;

use distillcache::cloud::write_cloud;
use distillcache::core::archive::{ArchiveHeader, Section};
use distillcache::core::teacher::{synth_teacher, SyntheticScene};
use distillcache::core::Resolution;
use distillcache::dump::{dump_dir, write_teacher_dump};
use distillcache::scan::{read_jsonl, SampleRecord};

mod common;
use common::{image_tree, ok, run, snapshot};

const SMALL: &[&str] = &["--res", "28x56", "--workers", "2"];

/// Uniform sampling at stride 1: every frame is kept.
fn uniform_config(dir: &Path) {
    fs::write(
        dir.join("run.toml"),
        "dataset_roots = [\"ds=data\"]\ncategory = \"uniform\"\nresolution = \"28x56\"\nworkers = 2\ncache_dir = \"out/cache\"\nmanifest_path = \"out/manifest.jsonl\"\nsamples_path = \"out/samples.jsonl\"\ndump_dir = \"dumps\"\n",
    )
    .unwrap();
}

fn args<'a>(extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec!["--config", "run.toml"];
    v.extend_from_slice(extra);
    v
}

#[test]
fn manifest_of_two_scenes_of_forty_frames() {
    let dir = tempfile::tempdir().unwrap();
    image_tree(dir.path(), 2, 40);
    uniform_config(dir.path());
    let out = ok(dir.path(), &args(&["manifest"]));
    assert_eq!((out["entries"].as_u64(), out["samples"].as_u64(), out["scenes"].as_u64()), (Some(80), Some(4), Some(2)));
    let samples: Vec<SampleRecord> = read_jsonl(&dir.path().join("out/samples.jsonl")).unwrap();
    assert_eq!(samples.iter().map(|s| s.sample_id.as_str()).collect::<Vec<_>>(), ["ds/scene_00/0", "ds/scene_00/20", "ds/scene_01/0", "ds/scene_01/20"]);
    assert!(samples.iter().all(|s| s.image_paths.len() == 20));
    assert_eq!(fs::read_to_string(dir.path().join("out/manifest.jsonl")).unwrap().lines().count(), 80);
}

#[test]
fn manifest_edge_cases() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir_all(dir.path().join("empty")).unwrap();
    let out = ok(dir.path(), &["--dataset-root", "e=empty", "manifest"]);
    assert_eq!(out["entries"], 0);
    assert_eq!(out["warnings"].as_array().unwrap().len(), 1);

    let r = run(dir.path(), &["--dataset-root", "m=missing_root", "manifest"]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("missing_root"), "{}", r.stderr);
    assert_eq!(run(dir.path(), &["manifest"]).code, 2);
    assert_eq!(run(dir.path(), &["--res", "225x518", "manifest"]).code, 2);
    assert_eq!(run(dir.path(), &["--mode", "fast", "manifest"]).code, 2);
}

#[test]
fn synthetic_cache_verifies_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    image_tree(dir.path(), 2, 40);
    uniform_config(dir.path());
    ok(dir.path(), &args(&["manifest"]));
    let first = ok(dir.path(), &args(&["cache", "--synthetic", "--seed", "0"]));
    assert_eq!(first["totals"]["samples"], 4);
    let frac = first["totals"]["masked_fraction"].as_f64().unwrap();
    assert!(frac > 0.1 && frac < 0.9, "{frac}");
    let snap = snapshot(&dir.path().join("out"));
    assert_eq!(snap.iter().filter(|(n, _)| n.ends_with(".d3rc")).count(), 4);
    let verified = ok(dir.path(), &args(&["verify", "--deep"]));
    assert_eq!(verified["archives"].as_array().unwrap().len(), 4);
    assert!(verified["archives"].as_array().unwrap().iter().all(|a| a["regenerated_identical"] == true));

    let second = ok(dir.path(), &args(&["cache", "--synthetic", "--seed", "0"]));
    assert_eq!(snapshot(&dir.path().join("out")), snap);
    let strip = |mut v: serde_json::Value| {
        v.as_object_mut().unwrap().remove("timing");
        v
    };
    assert_eq!(strip(first), strip(second));

    ok(dir.path(), &args(&["cache", "--synthetic", "--seed", "1"]));
    assert_ne!(snapshot(&dir.path().join("out")), snap);
}

#[test]
fn huge_threshold_masks_everything() {
    let dir = tempfile::tempdir().unwrap();
    image_tree(dir.path(), 1, 20);
    uniform_config(dir.path());
    ok(dir.path(), &args(&["manifest"]));
    let out = ok(dir.path(), &args(&["cache", "--synthetic", "--tau", "1e9"]));
    assert_eq!(out["totals"]["masked_fraction"], 1.0);
    assert_eq!(out["totals"]["degenerate_views"], 20);
    ok(dir.path(), &args(&["verify"]));
}

#[test]
fn dumps_missing_present_and_corrupt() {
    let dir = tempfile::tempdir().unwrap();
    image_tree(dir.path(), 2, 20);
    uniform_config(dir.path());
    ok(dir.path(), &args(&["manifest"]));

    let r = run(dir.path(), &args(&["cache"]));
    assert_eq!(r.code, 3);
    assert!(r.stderr.contains("ds/scene_00/0") && r.stderr.contains("ds/scene_01/0"), "{}", r.stderr);

    let dumps = dir.path().join("dumps");
    for (i, id) in ["ds/scene_00/0", "ds/scene_01/0"].iter().enumerate() {
        let teacher = synth_teacher(&SyntheticScene::new(i as u64, 20, Resolution::new(30, 60))).unwrap();
        write_teacher_dump(&dump_dir(&dumps, id), id, &teacher).unwrap();
    }
    let out = ok(dir.path(), &args(&["cache"]));
    assert_eq!(out["settings"]["synthetic"], false);
    assert_eq!(out["totals"]["bytes_in"], 2 * 20 * 30 * 60 * 8 * 4);
    ok(dir.path(), &args(&["verify", "--deep"]));

    let arr = dump_dir(&dumps, "ds/scene_01/0").join("pts_local.f32");
    let bytes = fs::read(&arr).unwrap();
    fs::write(&arr, &bytes[..bytes.len() - 4]).unwrap();
    let r = run(dir.path(), &args(&["cache"]));
    assert_eq!(r.code, 4, "{}", r.stderr);
    assert_eq!(r.json["offset"], bytes.len() as u64 - 4);
}

fn cached(dir: &Path) -> std::path::PathBuf {
    image_tree(dir, 1, 20);
    uniform_config(dir);
    ok(dir, &args(&["manifest"]));
    ok(dir, &args(&["cache", "--synthetic"]));
    dir.join("out/cache/ds__scene_00__0.d3rc")
}

#[test]
fn verify_reports_truncation_with_offset() {
    let dir = tempfile::tempdir().unwrap();
    let path = cached(dir.path());
    let bytes = fs::read(&path).unwrap();
    fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
    let r = run(dir.path(), &args(&["verify"]));
    assert_eq!(r.code, 4);
    assert_eq!(r.json["offset"], bytes.len() as u64 - 5);
    assert!(r.stderr.contains("ds__scene_00__0.d3rc"));
}

#[test]
fn deep_verify_catches_value_level_flips() {
    let dir = tempfile::tempdir().unwrap();
    let path = cached(dir.path());
    let clean = fs::read(&path).unwrap();
    let header = ArchiveHeader::parse(&clean).unwrap();
    // low mantissa bit of a global point: still a finite half, so only the
    // rebuild comparison can notice it
    let at = header.section(Section::PointsGlobal).offset as usize + 2 * 100;
    let mut flipped = clean.clone();
    flipped[at] ^= 1;
    fs::write(&path, &flipped).unwrap();
    assert_eq!(run(dir.path(), &args(&["verify"])).code, 0);
    let r = run(dir.path(), &args(&["verify", "--deep"]));
    assert_eq!(r.code, 4);
    assert_eq!(r.json["offset"], at as u64);

    // a flip into the exponent of a confidence makes it non-finite
    let at = header.section(Section::ConfLocal).offset as usize + 1;
    let mut bad = clean.clone();
    bad[at] = 0x7C;
    fs::write(&path, &bad).unwrap();
    let r = run(dir.path(), &args(&["verify"]));
    assert_eq!(r.code, 4);
    assert_eq!(r.json["offset"], at as u64 - 1);
}

#[test]
fn losscheck_all_modes_and_failure_exit() {
    let dir = tempfile::tempdir().unwrap();
    for mode in ["full", "labels-only", "no-weighting"] {
        let out = ok(dir.path(), &["--mode", mode, "losscheck", "--samples", "4"]);
        assert_eq!(out["source"], "synthetic");
        assert_eq!(out["mode"], mode);
        assert!(out["max_rel_err"].as_f64().unwrap() <= 1e-4);
        assert_eq!(out["samples"].as_array().unwrap().len(), 4);
    }
    let r = run(dir.path(), &["losscheck", "--samples", "2", "--tolerance", "1e-300"]);
    assert_eq!(r.code, 1);
    assert_eq!(r.json["passed"], false);
    assert_eq!(run(dir.path(), &["losscheck", "--step", "1e-9"]).code, 2);
}

#[test]
fn losscheck_reads_cached_archives() {
    let dir = tempfile::tempdir().unwrap();
    cached(dir.path());
    let out = ok(dir.path(), &args(&["losscheck", "--samples", "3"]));
    assert_eq!(out["source"], "cache");
    assert!(out["max_rel_err"].as_f64().unwrap() <= 1e-4);
}

#[test]
fn eval_fixtures() {
    let dir = tempfile::tempdir().unwrap();
    let [gt, same, half, one] = ["gt", "same", "half", "one"].map(|n| dir.path().join(n));
    for d in [&gt, &same, &half, &one] {
        fs::create_dir_all(d).unwrap();
    }
    for v in 0..3 {
        let pts: Vec<[f64; 3]> = (0..50).map(|i| [i as f64 * 0.1, (i * i % 7) as f64, v as f64 + 1.0]).collect();
        let halved: Vec<[f64; 3]> = pts.iter().map(|p| [p[0] * 0.5, p[1] * 0.5, p[2] * 0.5]).collect();
        write_cloud(&gt.join(format!("v{v}.bin")), &pts).unwrap();
        write_cloud(&same.join(format!("v{v}.xyz")), &pts).unwrap();
        write_cloud(&half.join(format!("v{v}.bin")), &halved).unwrap();
        if v == 0 {
            write_cloud(&one.join("v0.bin"), &pts).unwrap();
        }
    }
    let out = ok(dir.path(), &["eval", "--pred", "same", "--gt", "gt"]);
    assert_eq!(out["views"], 3);
    for m in ["cross_view_median", "pooled"] {
        assert_eq!((out[m]["accuracy"].as_f64(), out[m]["completeness"].as_f64()), (Some(0.0), Some(0.0)));
        assert_eq!(out[m]["scale_factor"], 1.0);
    }
    let out = ok(dir.path(), &["eval", "--pred", "half", "--gt", "gt", "--median", "midpoint"]);
    assert_eq!(out["median_rule"], "midpoint");
    for v in out["per_view"].as_array().unwrap() {
        assert!((v["scale_factor"].as_f64().unwrap() - 2.0).abs() <= 1e-9);
        assert!(v["accuracy"].as_f64().unwrap() <= 1e-9);
    }
    let r = run(dir.path(), &["eval", "--pred", "one", "--gt", "gt"]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("mismatch"), "{}", r.stderr);
}

#[test]
fn eval_of_archive_against_its_own_points() {
    let dir = tempfile::tempdir().unwrap();
    let path = cached(dir.path());
    let set = distillcache::archive_io::read_archive(&path).unwrap().to_view_set().unwrap();
    let gt = dir.path().join("gt");
    fs::create_dir_all(&gt).unwrap();
    for (k, v) in set.views().iter().enumerate() {
        let pts = distillcache::core::eval::masked_points(&v.maps.global, Some(&v.mask)).unwrap();
        write_cloud(&gt.join(format!("v{k:02}.bin")), &pts).unwrap();
    }
    let pred = path.to_str().unwrap();
    let out = ok(dir.path(), &["eval", "--pred", pred, "--gt", "gt", "--masked"]);
    assert_eq!(out["views"], 20);
    assert_eq!(out["pooled"]["accuracy"], 0.0);
    assert_eq!(out["pooled"]["scale_factor"], 1.0);
    let unmasked = ok(dir.path(), &["eval", "--pred", pred, "--gt", "gt"]);
    // extra (masked-out) points shift the scale alignment away from 1
    assert_eq!(unmasked["masked"], false);
    assert_ne!(unmasked["pooled"]["scale_factor"], 1.0);
}

#[test]
fn bench_report_matches_schema() {
    let dir = tempfile::tempdir().unwrap();
    let mut a = SMALL.to_vec();
    a.extend(["--cache-dir", "c", "bench", "--samples", "3", "--views", "2"]);
    let out = ok(dir.path(), &a);
    let schema: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../schemas/bench_report.schema.json")).unwrap()).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let errors: Vec<String> = validator.iter_errors(&out).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{errors:?}");
    assert_eq!(out["archive_bytes"].as_u64().unwrap() % 2, 0);
    assert!(!dir.path().join("c/bench").exists());
    let mut broken = out.clone();
    broken["workers"] = serde_json::json!(0);
    assert!(!validator.is_valid(&broken));
}

#[test]
fn report_dir_receives_a_copy() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["--report-dir", "reports", "losscheck", "--samples", "1"]);
    let saved: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("reports/losscheck.json")).unwrap()).unwrap();
    assert_eq!(saved["max_rel_err"], out["max_rel_err"]);
}
