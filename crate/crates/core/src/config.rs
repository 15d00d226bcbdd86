//! Flat `key = value` run configuration.
//!
//! Every key has a default. The resolved configuration is echoed verbatim
//! into checkpoints and reports via [`RunConfig::to_text`].

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{PunError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Detection,
    Location,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderKind {
    Toy,
    Precomputed,
}

/// How per-token salience is derived in the self-attentive encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttnVariant {
    /// Per-dimension softmax across tokens.
    Vector,
    /// One scalar weight per token from the mean of its attended row.
    Scalar,
}

/// Normalization of phoneme attention scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlphaPVariant {
    Softmax,
    /// Scores divided by their sum, no exponentiation.
    RawRatio,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LocateMode {
    Argmax,
    Threshold,
}

macro_rules! text_enum {
    ($ty:ty, $($variant:path => $name:literal),+ $(,)?) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($variant => $name),+ })
            }
        }
        impl FromStr for $ty {
            type Err = PunError;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($variant),)+
                    _ => Err(PunError::Usage(format!(
                        "invalid value {s:?}; expected one of: {}",
                        [$($name),+].join(", ")
                    ))),
                }
            }
        }
    };
}

text_enum!(Task, Task::Detection => "detection", Task::Location => "location");
text_enum!(EncoderKind, EncoderKind::Toy => "toy", EncoderKind::Precomputed => "precomputed");
text_enum!(AttnVariant, AttnVariant::Vector => "vector", AttnVariant::Scalar => "scalar");
text_enum!(AlphaPVariant, AlphaPVariant::Softmax => "softmax", AlphaPVariant::RawRatio => "raw-ratio");
text_enum!(LocateMode, LocateMode::Argmax => "argmax", LocateMode::Threshold => "threshold");

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub task: Task,
    pub encoder: EncoderKind,
    pub d_c: usize,
    pub d_p: usize,
    pub d_a: usize,
    pub layers: usize,
    pub heads: usize,
    /// Feed-forward width of the toy encoder; 0 resolves to `4 * d_c`.
    pub ff_width: usize,
    pub max_len: usize,
    pub min_count: usize,
    pub lr: f64,
    pub dropout: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub strip_stress: bool,
    pub use_phonemes: bool,
    pub freeze_encoder: bool,
    pub attn_variant: AttnVariant,
    pub alpha_p_variant: AlphaPVariant,
    pub locate_mode: LocateMode,
    pub folds: usize,
    pub dev_fraction: f64,
    pub cmudict: String,
    pub dataset: String,
    pub phoneme_init: String,
    pub checkpoint: String,
    pub embeddings: String,
    pub out: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            task: Task::Detection,
            encoder: EncoderKind::Toy,
            d_c: 64,
            d_p: 64,
            d_a: 32,
            layers: 2,
            heads: 4,
            ff_width: 256,
            max_len: 128,
            min_count: 1,
            lr: 5e-5,
            dropout: 0.1,
            batch_size: 32,
            epochs: 10,
            seed: 42,
            strip_stress: true,
            use_phonemes: true,
            freeze_encoder: false,
            attn_variant: AttnVariant::Vector,
            alpha_p_variant: AlphaPVariant::Softmax,
            locate_mode: LocateMode::Argmax,
            folds: 10,
            dev_fraction: 0.1,
            cmudict: String::new(),
            dataset: String::new(),
            phoneme_init: String::new(),
            checkpoint: String::new(),
            embeddings: String::new(),
            out: "out".to_string(),
        }
    }
}

pub const KEYS: &[&str] = &[
    "task",
    "encoder",
    "d_c",
    "d_p",
    "d_a",
    "layers",
    "heads",
    "ff_width",
    "max_len",
    "min_count",
    "lr",
    "dropout",
    "batch_size",
    "epochs",
    "seed",
    "strip_stress",
    "use_phonemes",
    "freeze_encoder",
    "attn_variant",
    "alpha_p_variant",
    "locate_mode",
    "folds",
    "dev_fraction",
    "cmudict",
    "dataset",
    "phoneme_init",
    "checkpoint",
    "embeddings",
    "out",
];

fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| PunError::Usage(format!("invalid value {v:?} for {key}")))
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let key = key.trim().replace('-', "_");
        match key.as_str() {
            "task" => self.task = v.parse()?,
            "encoder" => self.encoder = v.parse()?,
            "d_c" => self.d_c = num(&key, v)?,
            "d_p" => self.d_p = num(&key, v)?,
            "d_a" => self.d_a = num(&key, v)?,
            "layers" => self.layers = num(&key, v)?,
            "heads" => self.heads = num(&key, v)?,
            "ff_width" => self.ff_width = num(&key, v)?,
            "max_len" => self.max_len = num(&key, v)?,
            "min_count" => self.min_count = num(&key, v)?,
            "lr" => self.lr = num(&key, v)?,
            "dropout" => self.dropout = num(&key, v)?,
            "batch_size" => self.batch_size = num(&key, v)?,
            "epochs" => self.epochs = num(&key, v)?,
            "seed" => self.seed = num(&key, v)?,
            "strip_stress" => self.strip_stress = num(&key, v)?,
            "use_phonemes" => self.use_phonemes = num(&key, v)?,
            "freeze_encoder" => self.freeze_encoder = num(&key, v)?,
            "attn_variant" => self.attn_variant = v.parse()?,
            "alpha_p_variant" => self.alpha_p_variant = v.parse()?,
            "locate_mode" => self.locate_mode = v.parse()?,
            "folds" => self.folds = num(&key, v)?,
            "dev_fraction" => self.dev_fraction = num(&key, v)?,
            "cmudict" => self.cmudict = v.to_string(),
            "dataset" => self.dataset = v.to_string(),
            "phoneme_init" => self.phoneme_init = v.to_string(),
            "checkpoint" => self.checkpoint = v.to_string(),
            "embeddings" => self.embeddings = v.to_string(),
            "out" => self.out = v.to_string(),
            other => {
                return Err(PunError::Usage(format!(
                    "unknown key {other:?}; valid keys: {}",
                    KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "task" => self.task.to_string(),
            "encoder" => self.encoder.to_string(),
            "d_c" => self.d_c.to_string(),
            "d_p" => self.d_p.to_string(),
            "d_a" => self.d_a.to_string(),
            "layers" => self.layers.to_string(),
            "heads" => self.heads.to_string(),
            "ff_width" => self.ff_width.to_string(),
            "max_len" => self.max_len.to_string(),
            "min_count" => self.min_count.to_string(),
            "lr" => self.lr.to_string(),
            "dropout" => self.dropout.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "epochs" => self.epochs.to_string(),
            "seed" => self.seed.to_string(),
            "strip_stress" => self.strip_stress.to_string(),
            "use_phonemes" => self.use_phonemes.to_string(),
            "freeze_encoder" => self.freeze_encoder.to_string(),
            "attn_variant" => self.attn_variant.to_string(),
            "alpha_p_variant" => self.alpha_p_variant.to_string(),
            "locate_mode" => self.locate_mode.to_string(),
            "folds" => self.folds.to_string(),
            "dev_fraction" => self.dev_fraction.to_string(),
            "cmudict" => self.cmudict.clone(),
            "dataset" => self.dataset.clone(),
            "phoneme_init" => self.phoneme_init.clone(),
            "checkpoint" => self.checkpoint.clone(),
            "embeddings" => self.embeddings.clone(),
            "out" => self.out.clone(),
            _ => return None,
        })
    }

    /// Applies `key = value` lines. `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| PunError::Usage(format!("expected key = value, got {line:?}")))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn apply_file(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| PunError::path(path, e))?;
        self.apply_text(&text)
    }

    /// `key=value` override as given on the command line.
    pub fn apply_assignment(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| PunError::Usage(format!("expected key=value, got {kv:?}")))?;
        self.set(k, v)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for k in KEYS {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&self.get(k).expect("every key readable"));
            s.push('\n');
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PunError::Validation(m));
        if self.d_c == 0 || self.d_p == 0 || self.d_a == 0 {
            return bad("d_c, d_p and d_a must be positive".into());
        }
        if self.heads == 0 || !self.d_c.is_multiple_of(self.heads) {
            return bad(format!(
                "d_c {} not divisible by heads {}",
                self.d_c, self.heads
            ));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!(
                "lr {} must be a finite non-negative number",
                self.lr
            ));
        }
        if self.folds < 2 {
            return bad("folds must be at least 2".into());
        }
        if !(0.0..1.0).contains(&self.dev_fraction) {
            return bad(format!("dev_fraction {} outside [0, 1)", self.dev_fraction));
        }
        if self.max_len == 0 {
            return bad("max_len must be positive".into());
        }
        Ok(())
    }

    /// Fills derived values so the echoed text is complete.
    pub fn resolved(mut self) -> Self {
        if self.ff_width == 0 {
            self.ff_width = 4 * self.d_c;
        }
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::default();
        c.set("task", "location").unwrap();
        c.set("alpha_p_variant", "raw-ratio").unwrap();
        c.set("lr", "0.003").unwrap();
        c.set("cmudict", "/tmp/x.dict").unwrap();
        let back = RunConfig::from_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_key_lists_valid_keys() {
        let err = RunConfig::default().set("colour", "red").unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, PunError::Usage(_)));
        assert!(msg.contains("d_p") && msg.contains("locate_mode"), "{msg}");
    }

    #[test]
    fn dashes_accepted_and_comments_ignored() {
        let c =
            RunConfig::from_text("# comment\nbatch-size = 8 # trailing\n\nattn_variant=scalar\n")
                .unwrap();
        assert_eq!(c.batch_size, 8);
        assert_eq!(c.attn_variant, AttnVariant::Scalar);
    }

    #[test]
    fn validation() {
        assert!(RunConfig::default().validate().is_ok());
        let c = RunConfig {
            heads: 3,
            ..RunConfig::default()
        };
        assert!(c.validate().is_err());
        let c = RunConfig {
            dropout: 1.0,
            ..RunConfig::default()
        };
        assert!(c.validate().is_err());
        let c = RunConfig {
            batch_size: 0,
            ..RunConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn every_key_has_default_and_is_listed() {
        let c = RunConfig::default();
        for k in KEYS {
            assert!(c.get(k).is_some(), "{k}");
        }
        assert_eq!(c.to_text().lines().count(), KEYS.len());
        assert_eq!(RunConfig { ff_width: 0, ..c }.resolved().ff_width, 256);
    }
}
