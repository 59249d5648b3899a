//! Flat `section.key=value` run configuration.
//!
//! Every field has a default; parsing rejects unknown keys and reports
//! all validation problems at once. The fully resolved config echoes
//! back to text so a run directory carries exactly what produced it.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::eval::ProbeConfig;
use crate::losses::LossWeights;
use crate::model::{Activation, ArchitectureSpec};
use crate::trainer::TrainConfig;

/// Writes `bytes` to a temporary sibling and renames it over `path`, so a
/// failed run never leaves a partial file behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("invalid output path {}", path.display())))?;
    let mut tmp_name = file_name.to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// All knobs of one reproducible run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    /// Path to the dataset manifest (required for training commands).
    pub data_manifest: Option<PathBuf>,
    /// Name of the manifest set used for training.
    pub data_train_set: String,

    pub encoder_hidden: Vec<usize>,
    pub dim_e1: usize,
    pub dim_e2: usize,
    pub predictor_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub decoder_output: Activation,
    pub dis_hidden: Vec<usize>,
    pub psi_rate: f32,

    pub alpha: f32,
    pub beta: f32,
    pub gamma: f32,
    pub k: u32,
    pub epochs: u32,
    pub batch_size: usize,
    pub lr_m1: f32,
    pub lr_m2: f32,
    pub clip_norm: f32,
    pub detach_targets: bool,

    pub probe_hidden: usize,
    pub probe_epochs: u32,
    pub probe_lr: f32,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            data_manifest: None,
            data_train_set: "train".into(),
            encoder_hidden: vec![512],
            dim_e1: 128,
            dim_e2: 128,
            predictor_hidden: vec![256],
            decoder_hidden: vec![512],
            decoder_output: Activation::Sigmoid,
            dis_hidden: vec![],
            psi_rate: 0.5,
            alpha: 100.0,
            beta: 0.1,
            gamma: 1.0,
            k: 5,
            epochs: 50,
            batch_size: 128,
            lr_m1: 1e-3,
            lr_m2: 1e-3,
            clip_norm: 5.0,
            detach_targets: true,
            probe_hidden: 64,
            probe_epochs: 30,
            probe_lr: 1e-3,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut problems: Vec<String> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                problems.push(format!("line {}: not key=value: {raw}", lineno + 1));
                continue;
            };
            let (key, value) = (key.trim(), value.trim());
            if let Err(e) = cfg.apply(key, value) {
                problems.push(format!("line {}: {e}", lineno + 1));
            }
        }
        if let Err(e) = cfg.validate() {
            problems.push(e.to_string());
        }
        if problems.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse::<T>()
                .map_err(|_| Error::Config(format!("{key}: cannot parse '{value}'")))
        }
        fn widths(key: &str, value: &str) -> Result<Vec<usize>> {
            if value.is_empty() {
                return Ok(vec![]);
            }
            value
                .split(',')
                .map(|v| {
                    v.trim()
                        .parse::<usize>()
                        .map_err(|_| Error::Config(format!("{key}: bad width '{v}'")))
                })
                .collect()
        }
        match key {
            "seed" => self.seed = num(key, value)?,
            "data.manifest" => self.data_manifest = Some(PathBuf::from(value)),
            "data.train_set" => self.data_train_set = value.to_string(),
            "arch.encoder_hidden" => self.encoder_hidden = widths(key, value)?,
            "arch.dim_e1" => self.dim_e1 = num(key, value)?,
            "arch.dim_e2" => self.dim_e2 = num(key, value)?,
            "arch.predictor_hidden" => self.predictor_hidden = widths(key, value)?,
            "arch.decoder_hidden" => self.decoder_hidden = widths(key, value)?,
            "arch.decoder_output" => self.decoder_output = Activation::parse(value)?,
            "arch.dis_hidden" => self.dis_hidden = widths(key, value)?,
            "arch.psi_rate" => self.psi_rate = num(key, value)?,
            "train.alpha" => self.alpha = num(key, value)?,
            "train.beta" => self.beta = num(key, value)?,
            "train.gamma" => self.gamma = num(key, value)?,
            "train.k" => self.k = num(key, value)?,
            "train.epochs" => self.epochs = num(key, value)?,
            "train.batch_size" => self.batch_size = num(key, value)?,
            "train.lr_m1" => self.lr_m1 = num(key, value)?,
            "train.lr_m2" => self.lr_m2 = num(key, value)?,
            "train.clip_norm" => self.clip_norm = num(key, value)?,
            "train.detach_targets" => {
                self.detach_targets = match value {
                    "true" => true,
                    "false" => false,
                    _ => return Err(Error::Config(format!("{key}: expected true/false"))),
                }
            }
            "probe.hidden" => self.probe_hidden = num(key, value)?,
            "probe.epochs" => self.probe_epochs = num(key, value)?,
            "probe.lr" => self.probe_lr = num(key, value)?,
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.dim_e1 == 0 || self.dim_e2 == 0 {
            problems.push("arch.dim_e1/arch.dim_e2 must be positive".to_string());
        }
        if !(0.0..1.0).contains(&self.psi_rate) {
            problems.push(format!("arch.psi_rate {} outside [0, 1)", self.psi_rate));
        }
        if let Err(e) = self.weights().validate() {
            problems.push(e.to_string());
        }
        if self.k == 0 {
            problems.push("train.k must be at least 1".to_string());
        }
        if self.batch_size == 0 {
            problems.push("train.batch_size must be at least 1".to_string());
        }
        if self.lr_m1 <= 0.0 || self.lr_m2 <= 0.0 || self.probe_lr <= 0.0 {
            problems.push("learning rates must be positive".to_string());
        }
        if self.probe_hidden == 0 || self.probe_epochs == 0 {
            problems.push("probe.hidden and probe.epochs must be positive".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    /// Fully resolved text form; parsing it back reproduces this config.
    pub fn to_text(&self) -> String {
        let mut kv: Vec<(String, String)> = vec![
            ("seed".into(), self.seed.to_string()),
            ("data.train_set".into(), self.data_train_set.clone()),
            ("arch.encoder_hidden".into(), join_widths(&self.encoder_hidden)),
            ("arch.dim_e1".into(), self.dim_e1.to_string()),
            ("arch.dim_e2".into(), self.dim_e2.to_string()),
            ("arch.predictor_hidden".into(), join_widths(&self.predictor_hidden)),
            ("arch.decoder_hidden".into(), join_widths(&self.decoder_hidden)),
            ("arch.decoder_output".into(), self.decoder_output.name().into()),
            ("arch.dis_hidden".into(), join_widths(&self.dis_hidden)),
            ("arch.psi_rate".into(), format_f32(self.psi_rate)),
            ("train.alpha".into(), format_f32(self.alpha)),
            ("train.beta".into(), format_f32(self.beta)),
            ("train.gamma".into(), format_f32(self.gamma)),
            ("train.k".into(), self.k.to_string()),
            ("train.epochs".into(), self.epochs.to_string()),
            ("train.batch_size".into(), self.batch_size.to_string()),
            ("train.lr_m1".into(), format_f32(self.lr_m1)),
            ("train.lr_m2".into(), format_f32(self.lr_m2)),
            ("train.clip_norm".into(), format_f32(self.clip_norm)),
            ("train.detach_targets".into(), self.detach_targets.to_string()),
            ("probe.hidden".into(), self.probe_hidden.to_string()),
            ("probe.epochs".into(), self.probe_epochs.to_string()),
            ("probe.lr".into(), format_f32(self.probe_lr)),
        ];
        if let Some(m) = &self.data_manifest {
            kv.insert(1, ("data.manifest".into(), m.display().to_string()));
        }
        let mut out = String::new();
        for (k, v) in kv {
            out.push_str(&format!("{k}={v}\n"));
        }
        out
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights { alpha: self.alpha, beta: self.beta, gamma: self.gamma }
    }

    /// Realizes the architecture for a dataset's feature dim and classes.
    pub fn architecture(&self, input_dim: usize, num_classes: usize) -> ArchitectureSpec {
        ArchitectureSpec::dense(
            input_dim,
            &self.encoder_hidden,
            self.dim_e1,
            self.dim_e2,
            &self.predictor_hidden,
            num_classes,
            &self.decoder_hidden,
            self.decoder_output,
            &self.dis_hidden,
            self.psi_rate,
        )
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            weights: self.weights(),
            k: self.k,
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr_m1: self.lr_m1,
            lr_m2: self.lr_m2,
            psi_rate: self.psi_rate,
            seed: self.seed,
            clip_norm: self.clip_norm,
            detach_dis_targets: self.detach_targets,
        }
    }

    pub fn probe_config(&self) -> ProbeConfig {
        ProbeConfig {
            hidden: self.probe_hidden,
            epochs: self.probe_epochs,
            lr: self.probe_lr,
            seed: self.seed,
        }
    }
}

fn join_widths(widths: &[usize]) -> String {
    widths.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(",")
}

/// Shortest decimal that round-trips through f32.
pub fn format_f32(v: f32) -> String {
    let s = format!("{v}");
    debug_assert_eq!(s.parse::<f32>().ok(), Some(v));
    s
}

/// Parses generic `key=value` text into a map (checkpoint headers,
/// evaluation reports).
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Data(format!("line {} is not key=value: {raw}", lineno + 1)))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip_through_text() {
        let cfg = RunConfig::default();
        let parsed = RunConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(parsed, cfg);
    }

    #[test]
    fn overrides_and_unknown_keys() {
        let cfg = RunConfig::parse("train.alpha=7.5\nseed=9\narch.dim_e1=32").unwrap();
        assert_eq!(cfg.alpha, 7.5);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.dim_e1, 32);
        let err = RunConfig::parse("train.alfa=1").unwrap_err();
        assert!(err.to_string().contains("unknown key"), "{err}");
    }

    #[test]
    fn all_validation_problems_reported_together() {
        let err = RunConfig::parse("train.k=0\ntrain.batch_size=0\narch.psi_rate=1.5")
            .unwrap_err()
            .to_string();
        assert!(err.contains("train.k"), "{err}");
        assert!(err.contains("batch_size"), "{err}");
        assert!(err.contains("psi_rate"), "{err}");
    }

    #[test]
    fn write_atomic_leaves_no_temp_on_success() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.txt");
        write_atomic(&path, b"hello").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"hello");
        let names: Vec<_> = std::fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        assert_eq!(names.len(), 1);
    }
}
