//! Run configuration: a flat TOML file whose keys mirror the fields below,
//! overridden by command-line flags. Relative paths in a config file are
//! resolved against the file's directory.
//!
//! ```toml
//! dataset_roots = ["co3d=data/co3d"]
//! cache_dir = "cache"
//! resolution = "224x518"
//! tau = 0.3
//! category = "navigation"
//! views_per_sample = 20
//! mode = "full"
//! workers = 8
//! seed = 0
//! ```

use std::path::{Path, PathBuf};

use distillcache_core::loss::{LossConfig, LossMode};
use distillcache_core::manifest::{SamplingPolicy, SceneCategory};
use distillcache_core::teacher::CacheConfig;
use distillcache_core::{Resolution, DEFAULT_TARGET_RES, DEFAULT_TAU, DEFAULT_VIEWS_PER_SAMPLE};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::scan::DatasetRoot;

pub const LOG_ENV: &str = "DISTILLCACHE_LOG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// `id=path` entries (or bare paths, whose last component is the id).
    pub dataset_roots: Vec<String>,
    pub manifest_path: PathBuf,
    pub samples_path: PathBuf,
    pub dump_dir: PathBuf,
    pub cache_dir: PathBuf,
    /// When set, every command also writes its JSON report here.
    pub report_dir: Option<PathBuf>,
    /// Cache resolution, `HxW`.
    pub resolution: String,
    /// Teacher resolution of synthetic samples; defaults to 1.5x the cache
    /// resolution so the alignment stage really resamples.
    pub synthetic_resolution: Option<String>,
    pub tau: f64,
    pub category: SceneCategory,
    pub views_per_sample: usize,
    pub target_count: Option<usize>,
    pub uniform_stride: usize,
    pub overlap: bool,
    pub mode: String,
    pub alpha_g: f64,
    pub alpha_l: f64,
    pub gamma: f64,
    pub scale_epsilon: f64,
    pub workers: usize,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let loss = LossConfig::default();
        RunConfig {
            dataset_roots: Vec::new(),
            manifest_path: "manifest.jsonl".into(),
            samples_path: "samples.jsonl".into(),
            dump_dir: "dumps".into(),
            cache_dir: "cache".into(),
            report_dir: None,
            resolution: DEFAULT_TARGET_RES.to_string(),
            synthetic_resolution: None,
            tau: DEFAULT_TAU,
            category: SceneCategory::Navigation,
            views_per_sample: DEFAULT_VIEWS_PER_SAMPLE,
            target_count: None,
            uniform_stride: 1,
            overlap: false,
            mode: LossMode::Full.to_string(),
            alpha_g: loss.alpha_g,
            alpha_l: loss.alpha_l,
            gamma: loss.gamma,
            scale_epsilon: loss.scale_epsilon,
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
            seed: 0,
        }
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub tau: Option<f64>,
    pub resolution: Option<String>,
    pub mode: Option<String>,
    /// Replaces the configured roots when non-empty.
    pub dataset_roots: Vec<String>,
    pub manifest_path: Option<PathBuf>,
    pub samples_path: Option<PathBuf>,
    pub dump_dir: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub report_dir: Option<PathBuf>,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::input(format!("config: {e}")))
    }

    /// Loads a config file (or the defaults) and applies overrides.
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> CliResult<Self> {
        let mut cfg = match path {
            None => RunConfig::default(),
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
                let mut cfg = RunConfig::from_toml(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
                let base = path.parent().unwrap_or(Path::new(""));
                for p in [&mut cfg.manifest_path, &mut cfg.samples_path, &mut cfg.dump_dir, &mut cfg.cache_dir] {
                    resolve(base, p);
                }
                if let Some(p) = cfg.report_dir.as_mut() {
                    resolve(base, p);
                }
                for root in &mut cfg.dataset_roots {
                    let mut r: DatasetRoot = root.parse()?;
                    resolve(base, &mut r.path);
                    *root = format!("{}={}", r.id, r.path.display());
                }
                cfg
            }
        };
        cfg.apply(overrides);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.workers {
            self.workers = v;
        }
        if let Some(v) = o.tau {
            self.tau = v;
        }
        if let Some(v) = &o.resolution {
            self.resolution = v.clone();
        }
        if let Some(v) = &o.mode {
            self.mode = v.clone();
        }
        if !o.dataset_roots.is_empty() {
            self.dataset_roots = o.dataset_roots.clone();
        }
        for (dst, src) in [
            (&mut self.manifest_path, &o.manifest_path),
            (&mut self.samples_path, &o.samples_path),
            (&mut self.dump_dir, &o.dump_dir),
            (&mut self.cache_dir, &o.cache_dir),
        ] {
            if let Some(v) = src {
                *dst = v.clone();
            }
        }
        if o.report_dir.is_some() {
            self.report_dir = o.report_dir.clone();
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        self.cache_config()?;
        self.synthetic_res()?;
        self.sampling_policy()?;
        self.loss_config()?;
        self.roots()?;
        if self.workers == 0 {
            return Err(CliError::input("workers must be >= 1"));
        }
        Ok(())
    }

    pub fn target_res(&self) -> CliResult<Resolution> {
        self.resolution.parse().map_err(|e| CliError::input(format!("resolution: {e}")))
    }

    pub fn cache_config(&self) -> CliResult<CacheConfig> {
        let cfg = CacheConfig { target: self.target_res()?, tau: self.tau };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn synthetic_res(&self) -> CliResult<Resolution> {
        match &self.synthetic_resolution {
            Some(s) => s.parse().map_err(|e| CliError::input(format!("synthetic_resolution: {e}"))),
            None => {
                let t = self.target_res()?;
                Ok(Resolution::new(t.height * 3 / 2, t.width * 3 / 2))
            }
        }
    }

    pub fn sampling_policy(&self) -> CliResult<SamplingPolicy> {
        let p = SamplingPolicy {
            category: self.category,
            views_per_sample: self.views_per_sample,
            target_count: self.target_count,
            uniform_stride: self.uniform_stride,
            overlap: self.overlap,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn loss_mode(&self) -> CliResult<LossMode> {
        self.mode.parse().map_err(|e| CliError::input(format!("mode: {e}")))
    }

    pub fn loss_config(&self) -> CliResult<LossConfig> {
        let cfg = LossConfig {
            alpha_g: self.alpha_g,
            alpha_l: self.alpha_l,
            gamma: self.gamma,
            scale_epsilon: self.scale_epsilon,
            ..LossConfig::default()
        }
        .with_mode(self.loss_mode()?);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn roots(&self) -> CliResult<Vec<DatasetRoot>> {
        self.dataset_roots.iter().map(|r| r.parse()).collect()
    }

    /// Runs `f` on a pool of `workers` threads.
    pub fn with_pool<T: Send>(&self, f: impl FnOnce() -> T + Send) -> CliResult<T> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| CliError::input(format!("cannot start {} workers: {e}", self.workers)))?;
        Ok(pool.install(f))
    }
}

/// Logging to stderr, filtered by `DISTILLCACHE_LOG` (default `warn`).
pub fn init_logging() {
    let env = env_logger::Env::new().filter_or(LOG_ENV, "warn");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

#[cfg(test)]
mod tests {
    use super::*;
    use distillcache_core::loss::Weighting;

    #[test]
    fn defaults_follow_the_pipeline_constants() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.target_res().unwrap(), Resolution::new(224, 518));
        assert_eq!(cfg.tau, 0.3);
        assert_eq!(cfg.views_per_sample, 20);
        assert_eq!(cfg.synthetic_res().unwrap(), Resolution::new(336, 777));
        let loss = cfg.loss_config().unwrap();
        assert_eq!((loss.alpha_g, loss.alpha_l, loss.gamma), (2.0, 1.0, 0.001));
    }

    #[test]
    fn toml_file_with_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(
            &path,
            "dataset_roots = [\"ds=data\"]\ncache_dir = \"out/cache\"\nresolution = \"28x56\"\nmode = \"labels-only\"\ncategory = \"large_outdoor\"\n",
        )
        .unwrap();
        let o = Overrides { tau: Some(0.5), seed: Some(9), ..Overrides::default() };
        let cfg = RunConfig::load(Some(&path), &o).unwrap();
        assert_eq!(cfg.cache_dir, dir.path().join("out/cache"));
        assert_eq!(cfg.roots().unwrap()[0].path, dir.path().join("data"));
        assert_eq!((cfg.tau, cfg.seed), (0.5, 9));
        assert_eq!(cfg.sampling_policy().unwrap().target_count(), 10);
        assert_eq!(cfg.loss_config().unwrap().weighting, Weighting::Unit);
    }

    #[test]
    fn invalid_values_are_input_errors() {
        for text in ["resolution = \"225x518\"", "tau = -1.0", "mode = \"fast\"", "workers = 0", "bogus = 1", "views_per_sample = 1"] {
            let err = RunConfig::from_toml(text).and_then(|c| c.validate().map(|_| c)).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{text}");
        }
    }
}
