use std::fs;
use std::path::Path;

use clap::{Args, ValueEnum};
use diffclass::data::SplitOptions;
use diffclass::experiment::EvalConfig;
use diffclass::model::{ModelConfig, ScheduleConfig};
use diffclass::trainer::TrainConfig;
use diffclass::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// 224 px, ResNet18-style encoders, T = 1000.
    #[default]
    Full,
    /// 32 px, small encoders, T = 100.
    Desk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSettings {
    pub seed: u64,
    pub stratify: bool,
    pub group_by: bool,
}

impl Default for SplitSettings {
    fn default() -> Self {
        Self {
            seed: 0,
            stratify: true,
            group_by: false,
        }
    }
}

impl SplitSettings {
    pub fn options(&self) -> SplitOptions {
        SplitOptions {
            stratify: self.stratify,
            group_by: self.group_by,
        }
    }
}

/// Everything a run depends on besides the data. Resolved from defaults,
/// then the config file, then flags, and written next to the outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub preset: Preset,
    pub schedule: Option<ScheduleConfig>,
    pub latent: Option<usize>,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub split: SplitSettings,
}

impl Settings {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Malformed {
            what: "run config",
            reason: e.to_string(),
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("settings serialize to TOML")
    }

    pub fn model_config(&self, classes: Vec<String>) -> Result<ModelConfig> {
        let mut cfg = match self.preset {
            Preset::Full => ModelConfig::full(classes),
            Preset::Desk => ModelConfig::desk(classes),
        };
        if let Some(s) = self.schedule {
            cfg.schedule = s;
        }
        if let Some(l) = self.latent {
            cfg.denoiser.latent = l;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Flags shared by the commands that train or sample; each one overrides
/// the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// TOML run config (sections: train, eval, split, schedule).
    #[arg(long)]
    pub config: Option<std::path::PathBuf>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Training seed (also the base of per-image sampling seeds).
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lambda_dcg: Option<f64>,
    #[arg(long)]
    pub freeze_dcg: bool,
    #[arg(long)]
    pub warmup_epochs: Option<usize>,
    /// Diffusion steps T of the linear schedule (betas rescaled by 1000/T).
    #[arg(long)]
    pub diffusion_steps: Option<usize>,
    /// Sampling steps at inference.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub chains: Option<usize>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub split_seed: Option<u64>,
    /// Keep going past unreadable images, listing them in failures.csv.
    #[arg(long)]
    pub keep_going: bool,
}

impl Overrides {
    pub fn resolve(&self) -> Result<Settings> {
        let mut s = match &self.config {
            Some(p) => Settings::from_file(p)?,
            None => Settings::default(),
        };
        if let Some(p) = self.preset {
            s.preset = p;
        }
        if let Some(v) = self.seed {
            s.train.seed = v;
            s.eval.run.seed = v;
        }
        if let Some(v) = self.epochs {
            s.train.epochs = v;
        }
        if let Some(v) = self.batch_size {
            s.train.batch_size = v;
        }
        if let Some(v) = self.lr {
            s.train.optimizer.learning_rate = v;
        }
        if let Some(v) = self.lambda_dcg {
            s.train.lambda_dcg = v;
        }
        if self.freeze_dcg {
            s.train.freeze_dcg = true;
        }
        if let Some(v) = self.warmup_epochs {
            s.train.dcg_warmup_epochs = v;
        }
        if let Some(v) = self.diffusion_steps {
            s.schedule = Some(ScheduleConfig::scaled(v));
        }
        if let Some(v) = self.steps {
            s.eval.run.steps = v;
        }
        if let Some(v) = self.chains {
            s.eval.run.chains = v;
        }
        if let Some(v) = self.temperature {
            s.eval.run.temperature = v;
        }
        if let Some(v) = self.split_seed {
            s.split.seed = v;
        }
        if self.keep_going {
            s.eval.run.fail_fast = false;
        }
        s.train.validate()?;
        s.eval.run.validate()?;
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_override_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        fs::write(
            &p,
            "preset = \"desk\"\n[train]\nepochs = 7\nbatch_size = 5\n",
        )
        .unwrap();
        let o = Overrides {
            config: Some(p),
            epochs: Some(3),
            ..Default::default()
        };
        let s = o.resolve().unwrap();
        assert_eq!(s.preset, Preset::Desk);
        assert_eq!(s.train.epochs, 3);
        assert_eq!(s.train.batch_size, 5);
        assert_eq!(s.train.optimizer.learning_rate, 1e-3);
        let back: Settings = toml::from_str(&s.to_toml()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn unknown_keys_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        fs::write(&p, "[train]\nepoch = 7\n").unwrap();
        assert!(Settings::from_file(&p).is_err());
    }
}
