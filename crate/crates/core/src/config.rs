//! Flat `key = value` run configuration.
//!
//! Keys are grouped by prefix: `net.*` for the architecture, `train.*` for
//! optimization, `data.*` for the generator, and unprefixed keys for paths
//! and the split. Later settings override earlier ones, so command-line
//! overrides are applied after the file.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::data::{parse_kv, GeneratorConfig};
use crate::error::{Error, Result};
use crate::network::NetworkConfig;
use crate::tensor::Precision;
use crate::training::TrainConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub generator: GeneratorConfig,
    pub dataset_dir: Option<PathBuf>,
    pub checkpoint_dir: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// Share of identities placed in the training split.
    pub split_fraction: f64,
    pub split_seed: u64,
    pub threads: usize,
    /// Element type used for training and evaluation.
    pub precision: Precision,
}

impl Default for RunConfig {
    fn default() -> Self {
        let network = NetworkConfig { height: 56, width: 28, ..NetworkConfig::default() };
        RunConfig {
            network,
            train: TrainConfig::default(),
            generator: GeneratorConfig::default(),
            dataset_dir: None,
            checkpoint_dir: None,
            output_dir: PathBuf::from("out"),
            split_fraction: 0.5,
            split_seed: 0,
            threads: 1,
            precision: Precision::F32,
        }
    }
}

impl GeneratorConfig {
    pub fn to_kv(&self) -> Vec<(&'static str, String)> {
        vec![
            ("num_identities", self.num_identities.to_string()),
            ("clips_per_camera", self.clips_per_camera.to_string()),
            ("min_frames", self.frame_count_range.0.to_string()),
            ("max_frames", self.frame_count_range.1.to_string()),
            ("height", self.height.to_string()),
            ("width", self.width.to_string()),
            ("occluder_density", self.occluder_density.to_string()),
            ("seed", self.seed.to_string()),
        ]
    }

    /// Applies one `key = value` setting. Returns `Ok(false)` for unknown keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        fn num<N: std::str::FromStr>(key: &str, v: &str) -> Result<N> {
            v.trim().parse().map_err(|_| Error::InvalidConfig(format!("{key}: cannot parse '{v}'")))
        }
        match key {
            "num_identities" => self.num_identities = num(key, value)?,
            "clips_per_camera" => self.clips_per_camera = num(key, value)?,
            "min_frames" => self.frame_count_range.0 = num(key, value)?,
            "max_frames" => self.frame_count_range.1 = num(key, value)?,
            "height" => self.height = num(key, value)?,
            "width" => self.width = num(key, value)?,
            "occluder_density" => self.occluder_density = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = RunConfig::default();
        for (k, v) in parse_kv(path, &text)? {
            cfg.set(&k, &v)?;
        }
        Ok(cfg)
    }

    /// Applies one setting; unknown keys are an error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let known = if let Some(k) = key.strip_prefix("net.") {
            self.network.set(k, value)?
        } else if let Some(k) = key.strip_prefix("train.") {
            self.train.set(k, value)?
        } else if let Some(k) = key.strip_prefix("data.") {
            self.generator.set(k, value)?
        } else {
            fn num<N: std::str::FromStr>(key: &str, v: &str) -> Result<N> {
                v.parse().map_err(|_| Error::InvalidConfig(format!("{key}: cannot parse '{v}'")))
            }
            let path = |v: &str| (!v.is_empty()).then(|| PathBuf::from(v));
            match key {
                "dataset_dir" => self.dataset_dir = path(value),
                "checkpoint_dir" => self.checkpoint_dir = path(value),
                "output_dir" => self.output_dir = PathBuf::from(value),
                "split_fraction" => self.split_fraction = num(key, value)?,
                "split_seed" => self.split_seed = num(key, value)?,
                "threads" => self.threads = num(key, value)?,
                "precision" => {
                    self.precision = Precision::parse(value)
                        .ok_or_else(|| Error::InvalidConfig(format!("precision must be f32 or f64, got '{value}'")))?
                }
                _ => return Err(Error::InvalidConfig(format!("unknown configuration key '{key}'"))),
            }
            true
        };
        if !known {
            return Err(Error::InvalidConfig(format!("unknown configuration key '{key}'")));
        }
        Ok(())
    }

    /// Applies `key=value` overrides in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let (k, v) = o
                .as_ref()
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("override '{}' is not key=value", o.as_ref())))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    /// Checks every section. Crop extents and network input extents must
    /// agree, and crops must fit the generated frames.
    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.train.validate()?;
        self.generator.validate()?;
        if (self.train.crop_height, self.train.crop_width) != (self.network.height, self.network.width) {
            return Err(Error::InvalidConfig(format!(
                "train crop {}x{} must equal net input {}x{}",
                self.train.crop_height, self.train.crop_width, self.network.height, self.network.width
            )));
        }
        if self.train.crop_height > self.generator.height || self.train.crop_width > self.generator.width {
            return Err(Error::InvalidConfig(format!(
                "train crop {}x{} exceeds frame {}x{}",
                self.train.crop_height, self.train.crop_width, self.generator.height, self.generator.width
            )));
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "split_fraction must lie in (0, 1), got {}",
                self.split_fraction
            )));
        }
        if self.threads == 0 {
            return Err(Error::InvalidConfig("threads must be positive".into()));
        }
        Ok(())
    }

    /// The fully resolved configuration in loadable form.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let opt = |p: &Option<PathBuf>| p.as_ref().map_or(String::new(), |p| p.display().to_string());
        let _ = writeln!(s, "dataset_dir = {}", opt(&self.dataset_dir));
        let _ = writeln!(s, "checkpoint_dir = {}", opt(&self.checkpoint_dir));
        let _ = writeln!(s, "output_dir = {}", self.output_dir.display());
        let _ = writeln!(s, "split_fraction = {}", self.split_fraction);
        let _ = writeln!(s, "split_seed = {}", self.split_seed);
        let _ = writeln!(s, "threads = {}", self.threads);
        let _ = writeln!(s, "precision = {}", self.precision.as_str());
        for (k, v) in self.network.to_kv() {
            let _ = writeln!(s, "net.{k} = {v}");
        }
        for (k, v) in self.train.to_kv() {
            let _ = writeln!(s, "train.{k} = {v}");
        }
        for (k, v) in self.generator.to_kv() {
            let _ = writeln!(s, "data.{k} = {v}");
        }
        s
    }

    /// Writes [`RunConfig::to_text`] to `dir/resolved_config.txt`.
    pub fn echo_to(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("resolved_config.txt");
        fs::write(&path, self.to_text()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}
