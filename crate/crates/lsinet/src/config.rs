//! Run configuration: a flat `key = value` text format covering the model,
//! the optimizer, and the dataset, with per-dataset presets and an exact
//! echo of the fully-resolved values next to every run's outputs.

use std::path::{Path, PathBuf};

use crate::data::{SplitSpec, ETT_HOURLY, ETT_QUARTER_HOURLY};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::patch::derive_patch_geometry;
use crate::train::TrainConfig;

/// Defaults per known dataset. `n` values are the best found from the sweep
/// set {256, 384, 512, 768, 1024, 1536, 2048}; unknown datasets get the
/// `generic` row and a 70/10/20 split.
#[derive(Debug, Clone, Copy)]
pub struct DatasetPreset {
    pub name: &'static str,
    pub n: usize,
    pub batch_size: usize,
    pub split: SplitSpec,
}

pub const PRESETS: &[DatasetPreset] = &[
    DatasetPreset { name: "etth1", n: 512, batch_size: 128, split: ETT_HOURLY },
    DatasetPreset { name: "etth2", n: 512, batch_size: 128, split: ETT_HOURLY },
    DatasetPreset { name: "ettm1", n: 1024, batch_size: 128, split: ETT_QUARTER_HOURLY },
    DatasetPreset { name: "ettm2", n: 1024, batch_size: 128, split: ETT_QUARTER_HOURLY },
    DatasetPreset { name: "weather", n: 512, batch_size: 64, split: SplitSpec::Ratios(0.7, 0.1, 0.2) },
    DatasetPreset { name: "electricity", n: 512, batch_size: 32, split: SplitSpec::Ratios(0.7, 0.1, 0.2) },
    DatasetPreset { name: "synthetic", n: 256, batch_size: 32, split: SplitSpec::Ratios(0.7, 0.1, 0.2) },
];

pub fn preset(dataset: &str) -> Option<&'static DatasetPreset> {
    PRESETS.iter().find(|p| p.name == dataset.to_ascii_lowercase())
}

/// Everything one run needs; `to_text()` round-trips through `apply_text()`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Dataset name; selects the preset table row.
    pub dataset: String,
    /// CSV path. Empty means `<data_dir>/<Dataset>.csv` is looked up at load
    /// time; the built-in `synthetic` dataset needs no file.
    pub data: PathBuf,
    pub out: PathBuf,
    /// History length.
    pub n: usize,
    /// Forecast horizon.
    pub pred_len: usize,
    /// Patch-count target the patch length is derived from.
    pub patch_target: usize,
    pub heads: usize,
    pub d_model: usize,
    pub depth: usize,
    pub memory_dim: usize,
    pub hidden: usize,
    pub train: TrainConfig,
    /// Ablation: replace learned gates with the identity matrix.
    pub no_msim: bool,
    /// Ablation: use connection probabilities directly, no sampling.
    pub use_dense_gates: bool,
    /// Ablation: drop the sparsity regularizer.
    pub no_asrl: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: "etth1".into(),
            data: PathBuf::new(),
            out: PathBuf::from("runs"),
            n: 512,
            pred_len: 96,
            patch_target: 64,
            heads: 4,
            d_model: 128,
            depth: 1,
            memory_dim: 128,
            hidden: 128,
            train: TrainConfig::default(),
            no_msim: false,
            use_dense_gates: false,
            no_asrl: false,
        }
    }
}

impl RunConfig {
    /// Default config for a named dataset with its preset row applied.
    pub fn for_dataset(dataset: &str) -> Self {
        let mut cfg = RunConfig { dataset: dataset.to_ascii_lowercase(), ..Default::default() };
        if let Some(p) = preset(dataset) {
            cfg.n = p.n;
            cfg.train.batch_size = p.batch_size;
        }
        cfg
    }

    pub fn split_spec(&self) -> SplitSpec {
        preset(&self.dataset)
            .map(|p| p.split)
            .unwrap_or(SplitSpec::Ratios(0.7, 0.1, 0.2))
    }

    /// Checks every module precondition up front. The published tuning sets
    /// for n and the horizon are advisory, not enforced, so reduced-size
    /// smoke runs stay expressible.
    pub fn validate(&self) -> Result<()> {
        if self.dataset.is_empty() {
            return Err(Error::Config("dataset name must not be empty".into()));
        }
        self.train.validate()?;
        self.model_config()?.validate()
    }

    /// Derives the model geometry; fails if n is too short for the patch
    /// target or the head count does not divide the embedding width.
    pub fn model_config(&self) -> Result<ModelConfig> {
        let patch = derive_patch_geometry(self.n, self.patch_target, self.d_model)?;
        Ok(ModelConfig {
            patch,
            heads: self.heads,
            depth: self.depth,
            horizon: self.pred_len,
            memory_dim: self.memory_dim,
            hidden: self.hidden,
        })
    }

    /// Fully-resolved `key = value` text; every field appears.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let seeds = t.seeds.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(",");
        let clip = t.clip_norm.map_or("none".to_string(), |c| c.to_string());
        format!(
            "dataset = {}\n\
             data = {}\n\
             out = {}\n\
             n = {}\n\
             pred_len = {}\n\
             patch_target = {}\n\
             heads = {}\n\
             d_model = {}\n\
             depth = {}\n\
             memory_dim = {}\n\
             hidden = {}\n\
             epochs = {}\n\
             lr = {}\n\
             batch_size = {}\n\
             eta = {}\n\
             delta = {}\n\
             lambda = {}\n\
             tau = {}\n\
             beta1 = {}\n\
             beta2 = {}\n\
             eps = {}\n\
             clip_norm = {}\n\
             freeze_topk = {}\n\
             seeds = {}\n\
             no_msim = {}\n\
             use_dense_gates = {}\n\
             no_asrl = {}\n",
            self.dataset,
            self.data.display(),
            self.out.display(),
            self.n,
            self.pred_len,
            self.patch_target,
            self.heads,
            self.d_model,
            self.depth,
            self.memory_dim,
            self.hidden,
            t.epochs,
            t.lr,
            t.batch_size,
            t.eta,
            t.delta,
            t.lambda,
            t.tau,
            t.beta1,
            t.beta2,
            t.eps,
            clip,
            t.freeze_topk_per_epoch,
            seeds,
            self.no_msim,
            self.use_dense_gates,
            self.no_asrl,
        )
    }

    /// Applies `key = value` lines on top of the current values. `#` starts
    /// a comment; unknown keys are errors.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "config line {}: expected 'key = value', got '{raw}'",
                    lineno + 1
                )));
            };
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("config line {}: {e}", lineno + 1)))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    /// Parses a full config, seeding presets from the dataset line first so
    /// they do not clobber explicit keys.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("").trim();
            if let Some(rest) = line.strip_prefix("dataset") {
                if let Some((_, v)) = rest.split_once('=') {
                    cfg = RunConfig::for_dataset(v.trim());
                    break;
                }
            }
        }
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    /// Sets one field from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value.parse().map_err(|_| {
                Error::Config(format!("invalid value '{value}' for key '{key}'"))
            })
        }
        match key {
            "dataset" => self.dataset = value.to_ascii_lowercase(),
            "data" => self.data = PathBuf::from(value),
            "out" => self.out = PathBuf::from(value),
            "n" => self.n = parse(key, value)?,
            "pred_len" => self.pred_len = parse(key, value)?,
            "patch_target" => self.patch_target = parse(key, value)?,
            "heads" => self.heads = parse(key, value)?,
            "d_model" => self.d_model = parse(key, value)?,
            "depth" => self.depth = parse(key, value)?,
            "memory_dim" => self.memory_dim = parse(key, value)?,
            "hidden" => self.hidden = parse(key, value)?,
            "epochs" => self.train.epochs = parse(key, value)?,
            "lr" => self.train.lr = parse(key, value)?,
            "batch_size" => self.train.batch_size = parse(key, value)?,
            "eta" => self.train.eta = parse(key, value)?,
            "delta" => self.train.delta = parse(key, value)?,
            "lambda" => self.train.lambda = parse(key, value)?,
            "tau" => self.train.tau = parse(key, value)?,
            "beta1" => self.train.beta1 = parse(key, value)?,
            "beta2" => self.train.beta2 = parse(key, value)?,
            "eps" => self.train.eps = parse(key, value)?,
            "clip_norm" => {
                self.train.clip_norm = match value {
                    "none" | "" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "freeze_topk" => self.train.freeze_topk_per_epoch = parse(key, value)?,
            "seeds" => {
                let seeds: Result<Vec<u64>> =
                    value.split(',').map(|s| parse(key, s.trim())).collect();
                self.train.seeds = seeds?;
            }
            "no_msim" => self.no_msim = parse(key, value)?,
            "use_dense_gates" => self.use_dense_gates = parse(key, value)?,
            "no_asrl" => self.no_asrl = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// CSV location: the explicit path if given, else `<dir>/<Name>.csv`
    /// using the canonical capitalization of the known benchmarks.
    pub fn resolve_data_path(&self, data_dir: &Path) -> PathBuf {
        if !self.data.as_os_str().is_empty() {
            return self.data.clone();
        }
        let canonical = match self.dataset.as_str() {
            "etth1" => "ETTh1",
            "etth2" => "ETTh2",
            "ettm1" => "ETTm1",
            "ettm2" => "ETTm2",
            "weather" => "weather",
            "electricity" => "electricity",
            other => other,
        };
        data_dir.join(format!("{canonical}.csv"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn presets_pick_batch_size_and_history() {
        let cfg = RunConfig::for_dataset("electricity");
        assert_eq!(cfg.train.batch_size, 32);
        assert_eq!(cfg.n, 512);
        let cfg = RunConfig::for_dataset("Weather");
        assert_eq!(cfg.train.batch_size, 64);
        assert!(matches!(cfg.split_spec(), SplitSpec::Ratios(0.7, 0.1, 0.2)));
        let cfg = RunConfig::for_dataset("etth2");
        assert_eq!(cfg.split_spec(), ETT_HOURLY);
    }

    #[test]
    fn text_round_trips_every_field() {
        let mut cfg = RunConfig::for_dataset("ettm2");
        cfg.pred_len = 336;
        cfg.no_asrl = true;
        cfg.train.clip_norm = Some(5.0);
        cfg.train.seeds = vec![7, 8];
        let mut parsed = RunConfig::default();
        parsed.apply_text(&cfg.to_text()).unwrap();
        assert_eq!(parsed, cfg);
    }

    #[test]
    fn overrides_win_over_file_values() {
        let mut cfg = RunConfig::default();
        cfg.apply_text("n = 256\nlr = 0.001 # inline comment\n\n# full comment\n").unwrap();
        assert_eq!(cfg.n, 256);
        assert_eq!(cfg.train.lr, 0.001);
        cfg.set("n", "1024").unwrap();
        assert_eq!(cfg.n, 1024);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_labeled() {
        let mut cfg = RunConfig::default();
        let err = cfg.apply_text("bogus = 1").unwrap_err().to_string();
        assert!(err.contains("unknown config key 'bogus'"), "{err}");
        let err = cfg.apply_text("\nn = twelve").unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
        assert!(err.contains("invalid value 'twelve'"), "{err}");
        let err = cfg.apply_text("n 12").unwrap_err().to_string();
        assert!(err.contains("expected 'key = value'"), "{err}");
    }

    #[test]
    fn validation_rejects_short_histories() {
        let mut cfg = RunConfig::default();
        cfg.n = 100; // patch_target 64 needs n >= 128
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("128"), "{err}");
    }

    #[test]
    fn model_config_carries_the_derived_geometry() {
        let cfg = RunConfig::for_dataset("etth1");
        let mc = cfg.model_config().unwrap();
        assert_eq!(mc.patch.count, 64);
        assert_eq!(mc.patch.k, 8);
        assert_eq!(mc.patch.l, 16);
        assert_eq!(mc.horizon, 96);
        assert_eq!(mc.heads, 4);
    }

    #[test]
    fn data_path_resolution_uses_benchmark_capitalization() {
        let cfg = RunConfig::for_dataset("etth1");
        assert_eq!(
            cfg.resolve_data_path(Path::new("data")),
            PathBuf::from("data/ETTh1.csv")
        );
        let mut cfg = RunConfig::for_dataset("etth2");
        cfg.data = PathBuf::from("/tmp/custom.csv");
        assert_eq!(cfg.resolve_data_path(Path::new("data")), PathBuf::from("/tmp/custom.csv"));
    }

    #[test]
    fn seed_lists_parse_from_commas() {
        let mut cfg = RunConfig::default();
        cfg.set("seeds", "0, 1, 2").unwrap();
        assert_eq!(cfg.train.seeds, vec![0, 1, 2]);
        assert!(cfg.set("seeds", "a,b").is_err());
    }
}
