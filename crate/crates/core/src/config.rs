//! Run configuration: a flat TOML table of typed keys.
//!
//! ```toml
//! dataset = "data/ETTh1.csv"
//! input_len = 336
//! horizon = 96
//! lr = 1e-4
//! checkpoint = "runs/etth1.ckpt"
//! ```
//!
//! Missing keys take their defaults. Unknown keys are errors.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::block::Mode;
use crate::data::SplitRule;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::numeric::{Precision, NORM_EPS};
use crate::training::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    /// Chosen from the dataset file name: ETT month rule for `ETTh*` and
    /// `ETTm*`, fractions otherwise.
    Auto,
    EttHourly,
    EttMinute,
    Fractions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input_len: usize,
    pub horizon: usize,
    pub patch_len: usize,
    pub stride: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub ffn_mult: usize,
    pub eps: f64,
    pub mode: Mode,
    pub precision: Precision,
    pub seed: u64,

    pub dataset: Option<PathBuf>,
    pub split: SplitKind,
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    /// Step between consecutive training windows.
    pub window_stride: usize,

    pub lr: f64,
    pub epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; absent disables clipping.
    pub clip_norm: Option<f64>,

    pub checkpoint: PathBuf,
    /// Training report path; defaults to the checkpoint path with a
    /// `.report.json` extension.
    pub report: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        let t = TrainConfig::default();
        RunConfig {
            input_len: m.input_len,
            horizon: m.horizon,
            patch_len: m.patch_len,
            stride: m.stride,
            d_model: m.d_model,
            n_heads: m.n_heads,
            n_layers: m.n_layers,
            ffn_mult: m.ffn_mult,
            eps: NORM_EPS,
            mode: m.mode,
            precision: m.precision,
            seed: m.seed,
            dataset: None,
            split: SplitKind::Auto,
            train_fraction: 0.7,
            val_fraction: 0.1,
            test_fraction: 0.2,
            window_stride: 1,
            lr: t.lr,
            epochs: t.epochs,
            patience: t.patience,
            batch_size: t.batch_size,
            beta1: t.beta1,
            beta2: t.beta2,
            adam_eps: t.adam_eps,
            weight_decay: t.weight_decay,
            clip_norm: t.clip_norm,
            checkpoint: PathBuf::from("model.ckpt"),
            report: None,
        }
    }
}

/// Values given on the command line that replace config keys.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub precision: Option<Precision>,
    pub mode: Option<Mode>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config is always representable")
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(p) = o.precision {
            self.precision = p;
        }
        if let Some(m) = o.mode {
            self.mode = m;
        }
        if let Some(out) = &o.out {
            self.checkpoint = out.clone();
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        self.model().validate()?;
        self.train().validate()?;
        if self.window_stride == 0 {
            return Err(Error::config("window_stride must be at least 1"));
        }
        if self.split == SplitKind::Fractions {
            let sum = self.train_fraction + self.val_fraction + self.test_fraction;
            let fr = [self.train_fraction, self.val_fraction, self.test_fraction];
            if fr.iter().any(|f| !(0.0..=1.0).contains(f)) || sum > 1.0 + 1e-12 {
                return Err(Error::config(format!("split fractions {fr:?} must lie in [0, 1] and sum to at most 1")));
            }
        }
        Ok(())
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            input_len: self.input_len,
            horizon: self.horizon,
            patch_len: self.patch_len,
            stride: self.stride,
            d_model: self.d_model,
            n_heads: self.n_heads,
            n_layers: self.n_layers,
            ffn_mult: self.ffn_mult,
            eps: self.eps,
            mode: self.mode,
            precision: self.precision,
            seed: self.seed,
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            epochs: self.epochs,
            patience: self.patience,
            batch_size: self.batch_size,
            beta1: self.beta1,
            beta2: self.beta2,
            adam_eps: self.adam_eps,
            weight_decay: self.weight_decay,
            clip_norm: self.clip_norm,
            seed: self.seed,
        }
    }

    /// The split rule for a dataset stored at `path`.
    pub fn split_rule(&self, path: &Path) -> SplitRule {
        let fractions = SplitRule::Fractions {
            train: self.train_fraction,
            val: self.val_fraction,
            test: self.test_fraction,
        };
        match self.split {
            SplitKind::Auto => match SplitRule::for_dataset(&dataset_name(path)) {
                SplitRule::Fractions { .. } => fractions,
                ett => ett,
            },
            SplitKind::EttHourly => SplitRule::EttHourly,
            SplitKind::EttMinute => SplitRule::EttMinute,
            SplitKind::Fractions => fractions,
        }
    }

    pub fn report_path(&self) -> PathBuf {
        self.report
            .clone()
            .unwrap_or_else(|| self.checkpoint.with_extension("report.json"))
    }
}

/// File stem of a dataset path, used as its display name.
pub fn dataset_name(path: &Path) -> String {
    path.file_stem().map_or_else(|| "dataset".to_string(), |s| s.to_string_lossy().into_owned())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_settings() {
        let c = RunConfig::from_toml("").unwrap();
        assert_eq!((c.lr, c.n_heads, c.n_layers, c.d_model), (1e-4, 2, 2, 128));
        assert_eq!((c.epochs, c.patience, c.batch_size), (10, 3, 32));
        assert_eq!(c.weight_decay, 0.0);
        assert!(c.clip_norm.is_none());
    }

    #[test]
    fn unknown_keys_rejected() {
        let e = RunConfig::from_toml("learning_rate = 0.1").unwrap_err();
        assert!(matches!(e, Error::Config(_)));
        assert!(e.to_string().contains("learning_rate"), "{e}");
    }

    #[test]
    fn invalid_values_rejected_before_work() {
        assert!(RunConfig::from_toml("d_model = 10\nn_heads = 4").is_err());
        assert!(RunConfig::from_toml("patch_len = 400").is_err());
        assert!(RunConfig::from_toml("n_layers = 0").is_err());
        assert!(RunConfig::from_toml("batch_size = 0").is_err());
        assert!(RunConfig::from_toml("mode = \"sideways\"").is_err());
    }

    #[test]
    fn toml_round_trip_and_overrides() {
        let mut c = RunConfig::from_toml("dataset = \"x/ETTm2.csv\"\nclip_norm = 1.5\nprecision = \"f64\"").unwrap();
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
        assert_eq!(c.split_rule(c.dataset.clone().unwrap().as_path()), SplitRule::EttMinute);
        c.apply(&Overrides {
            seed: Some(9),
            mode: Some(Mode::Recurrent),
            ..Overrides::default()
        })
        .unwrap();
        assert_eq!((c.seed, c.mode, c.precision), (9, Mode::Recurrent, Precision::F64));
        assert_eq!(c.report_path(), PathBuf::from("model.report.json"));
    }
}
