//! Flat `key = value` run configuration.
//!
//! The key set is closed: every key below must parse, unknown keys are
//! rejected. A `preset` line picks the base values and is applied before
//! any other key regardless of where it appears. The canonical rendering
//! lists every key in schema order and its SHA-256 is the config hash.

use std::fmt::Write as _;
use std::path::Path;

use hieralign_core::dataset::DataConfig;
use hieralign_core::pyramid::Level;
use hieralign_core::trainer::TrainConfig;

use crate::error::{Error, Result};
use crate::hash::sha256_hex;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// batch 64, 50 epochs on the default corpus
    Full,
    /// full settings with batch 32
    Batch32,
    /// the default benchmark at a schedule one CPU core finishes quickly
    Desk,
    /// 2 classes, 16 slides, 100 steps
    Smoke,
}

impl Preset {
    pub const ALL: [Preset; 4] = [Preset::Full, Preset::Batch32, Preset::Desk, Preset::Smoke];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Full => "full",
            Preset::Batch32 => "batch32",
            Preset::Desk => "desk",
            Preset::Smoke => "smoke",
        }
    }

    pub fn parse(s: &str) -> Option<Preset> {
        Preset::ALL.into_iter().find(|p| p.name() == s)
    }
}

/// Names the config key a core validation message starts with, falling
/// back to the first section.
fn field_error(sections: &[&str], e: hieralign_core::Error) -> Error {
    let msg = match &e {
        hieralign_core::Error::InvalidArgument(m) => m.clone(),
        other => other.to_string(),
    };
    let first = msg
        .split(|c: char| !(c.is_alphanumeric() || c == '_'))
        .next()
        .unwrap_or("");
    let key = sections
        .iter()
        .map(|s| format!("{s}.{first}"))
        .find(|k| RunConfig::keys().any(|known| known == k))
        .unwrap_or_else(|| sections[0].to_string());
    Error::Config { key, msg }
}

impl RunConfig {
    pub fn preset(p: Preset) -> RunConfig {
        let data = DataConfig::default();
        match p {
            Preset::Full => RunConfig {
                seed: 0,
                data,
                train: TrainConfig::default(),
            },
            Preset::Batch32 => RunConfig {
                seed: 0,
                data,
                train: TrainConfig::batch32(),
            },
            Preset::Desk => RunConfig {
                seed: 0,
                data,
                train: TrainConfig::desk(),
            },
            Preset::Smoke => {
                let mut c = RunConfig {
                    seed: 0,
                    data,
                    train: TrainConfig::desk(),
                };
                c.data.gen.n_classes = 2;
                c.data.vocab.n_classes = 2;
                c.data.n_slides = 16;
                c.data.n_train_slides = 8;
                c.data.anchors_per_slide = 4;
                c.train.epochs = 100;
                c.train.max_steps = 100;
                c.train.batch_size = 4;
                c
            }
        }
    }

    /// Parses config text on top of the desk preset (or the preset the text
    /// names).
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut pairs = Vec::new();
        let mut preset = Preset::Desk;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Config {
                key: line.to_string(),
                msg: format!("line {} is not key = value", n + 1),
            })?;
            let (k, v) = (k.trim(), v.trim());
            if pairs.iter().any(|(seen, _): &(&str, &str)| *seen == k) {
                return Err(Error::Config {
                    key: k.into(),
                    msg: "given twice".into(),
                });
            }
            if k == "preset" {
                preset = Preset::parse(v).ok_or_else(|| Error::Config {
                    key: k.into(),
                    msg: format!("unknown preset {v:?}"),
                })?;
            }
            pairs.push((k, v));
        }
        let mut cfg = RunConfig::preset(preset);
        for (k, v) in pairs {
            if k != "preset" {
                cfg.set(k, v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.data
            .validate()
            .map_err(|e| field_error(&["data", "gen", "vocab"], e))?;
        self.train.validate().map_err(|e| field_error(&["train", "model"], e))?;
        if self.train.model.vocab != self.data.vocab.size {
            return Err(Error::Config {
                key: "vocab.size".into(),
                msg: "model and vocabulary sizes differ".into(),
            });
        }
        if self.train.seed != self.seed {
            return Err(Error::Config {
                key: "seed".into(),
                msg: "training seed differs from the run seed".into(),
            });
        }
        Ok(())
    }

    /// Overrides the run seed everywhere it is used.
    pub fn with_seed(mut self, seed: u64) -> RunConfig {
        self.seed = seed;
        self.train.seed = seed;
        self
    }

    /// Applies one key. Keys that span two structs (class count, vocabulary
    /// size, seed) set both.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let field = FIELDS.iter().find(|f| f.key == key).ok_or_else(|| Error::Config {
            key: key.into(),
            msg: "unknown key".into(),
        })?;
        (field.set)(self, value).map_err(|msg| Error::Config { key: key.into(), msg })
    }

    pub fn get(&self, key: &str) -> Option<String> {
        FIELDS.iter().find(|f| f.key == key).map(|f| (f.get)(self))
    }

    /// Every key in schema order, one `key = value` line each.
    pub fn canonical(&self) -> String {
        let mut out = String::new();
        for f in FIELDS {
            let _ = writeln!(out, "{} = {}", f.key, (f.get)(self));
        }
        out
    }

    pub fn hash(&self) -> String {
        sha256_hex(self.canonical().as_bytes())
    }

    /// Hash of the keys that determine the generated corpus.
    pub fn data_hash(&self) -> String {
        let mut out = String::new();
        for f in FIELDS.iter().filter(|f| f.data) {
            let _ = writeln!(out, "{} = {}", f.key, (f.get)(self));
        }
        sha256_hex(out.as_bytes())
    }

    pub fn keys() -> impl Iterator<Item = &'static str> {
        FIELDS.iter().map(|f| f.key)
    }
}

struct Field {
    key: &'static str,
    /// part of the corpus definition
    data: bool,
    get: fn(&RunConfig) -> String,
    set: fn(&mut RunConfig, &str) -> std::result::Result<(), String>,
}

fn num<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse().map_err(|_| format!("cannot parse {v:?}"))
}

fn flag(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        _ => Err(format!("expected true or false, got {v:?}")),
    }
}

fn level(v: &str) -> std::result::Result<Level, String> {
    let m: u32 = num(v.trim_end_matches('x'))?;
    Level::from_magnification(m).map_err(|e| e.to_string())
}

fn levels(v: &str) -> std::result::Result<Vec<Level>, String> {
    let mut out: Vec<Level> = v
        .split(',')
        .map(|s| level(s.trim()))
        .collect::<std::result::Result<_, _>>()?;
    out.sort();
    out.dedup();
    Ok(out)
}

fn render_levels(l: &[Level]) -> String {
    l.iter()
        .map(|l| l.magnification().to_string())
        .collect::<Vec<_>>()
        .join(",")
}

macro_rules! field {
    ($key:literal, $data:literal, |$c:ident| $path:expr, $parse:expr) => {
        Field {
            key: $key,
            data: $data,
            get: |$c| $path.to_string(),
            set: |$c, v| {
                $path = $parse(v)?;
                Ok(())
            },
        }
    };
}

const FIELDS: &[Field] = &[
    Field {
        key: "seed",
        data: true,
        get: |c| c.seed.to_string(),
        set: |c, v| {
            c.seed = num(v)?;
            c.train.seed = c.seed;
            Ok(())
        },
    },
    Field {
        key: "n_classes",
        data: true,
        get: |c| c.data.gen.n_classes.to_string(),
        set: |c, v| {
            c.data.gen.n_classes = num(v)?;
            c.data.vocab.n_classes = c.data.gen.n_classes;
            Ok(())
        },
    },
    field!("data.n_slides", true, |c| c.data.n_slides, num),
    field!("data.n_train_slides", true, |c| c.data.n_train_slides, num),
    field!("data.anchors_per_slide", true, |c| c.data.anchors_per_slide, num),
    field!("data.min_coverage", true, |c| c.data.min_coverage, num),
    Field {
        key: "data.eval_level",
        data: true,
        get: |c| c.data.eval_level.magnification().to_string(),
        set: |c, v| {
            c.data.eval_level = level(v)?;
            Ok(())
        },
    },
    field!("data.eval_tiles_per_slide", true, |c| c.data.eval_tiles_per_slide, num),
    field!("data.caption_flip", true, |c| c.data.caption_flip, num),
    field!("gen.n_fine", true, |c| c.data.gen.n_fine, num),
    field!("gen.side_multiple", true, |c| c.data.gen.side_multiple, num),
    field!("gen.cell_size", true, |c| c.data.gen.cell_size, num),
    field!("gen.p_major", true, |c| c.data.gen.p_major, num),
    field!("gen.background_prob", true, |c| c.data.gen.background_prob, num),
    field!("gen.background", true, |c| c.data.gen.background, num),
    field!("gen.tissue_level", true, |c| c.data.gen.tissue_level, num),
    field!("gen.texture_amplitude", true, |c| c.data.gen.texture_amplitude, num),
    field!("gen.coarse_amp", true, |c| c.data.gen.coarse_amp, num),
    field!("gen.fine_amp", true, |c| c.data.gen.fine_amp, num),
    field!("gen.noise_amp", true, |c| c.data.gen.noise_amp, num),
    field!("gen.coarse_period", true, |c| c.data.gen.coarse_period, num),
    field!("gen.fine_period", true, |c| c.data.gen.fine_period, num),
    field!("gen.phase_jitter", true, |c| c.data.gen.phase_jitter, num),
    field!("gen.tissue_darker", true, |c| c.data.gen.tissue_darker, flag),
    Field {
        key: "vocab.size",
        data: true,
        get: |c| c.data.vocab.size.to_string(),
        set: |c, v| {
            c.data.vocab.size = num(v)?;
            c.train.model.vocab = c.data.vocab.size;
            Ok(())
        },
    },
    field!("vocab.coarse_per_class", true, |c| c.data.vocab.coarse_per_class, num),
    field!("vocab.fine_per_class", true, |c| c.data.vocab.fine_per_class, num),
    field!(
        "vocab.signal_per_caption",
        true,
        |c| c.data.vocab.signal_per_caption,
        num
    ),
    field!("vocab.noise_rate", true, |c| c.data.vocab.noise_rate, num),
    field!("vocab.cross_rate", true, |c| c.data.vocab.cross_rate, num),
    field!("vocab.noise_pool", true, |c| c.data.vocab.noise_pool, num),
    field!("train.epochs", false, |c| c.train.epochs, num),
    field!("train.max_steps", false, |c| c.train.max_steps, num),
    field!("train.batch_size", false, |c| c.train.batch_size, num),
    field!("train.k_o", false, |c| c.train.k_o, num),
    field!("train.lr_peak", false, |c| c.train.lr_peak, num),
    field!("train.warmup_steps", false, |c| c.train.warmup_steps, num),
    field!("train.weight_decay", false, |c| c.train.weight_decay, num),
    field!("train.beta1", false, |c| c.train.beta1, num),
    field!("train.beta2", false, |c| c.train.beta2, num),
    field!("train.adam_epsilon", false, |c| c.train.adam_epsilon, num),
    field!("train.queue_capacity", false, |c| c.train.queue_capacity, num),
    field!("train.mask_rate", false, |c| c.train.mask_rate, num),
    field!("train.enable_cvta", false, |c| c.train.enable_cvta, flag),
    field!("train.enable_mrtva", false, |c| c.train.enable_mrtva, flag),
    field!(
        "train.enable_parent_child",
        false,
        |c| c.train.enable_parent_child,
        flag
    ),
    Field {
        key: "train.levels",
        data: false,
        get: |c| render_levels(&c.train.levels),
        set: |c, v| {
            c.train.levels = levels(v)?;
            Ok(())
        },
    },
    field!("model.d", false, |c| c.train.model.d, num),
    field!("model.d_proj", false, |c| c.train.model.d_proj, num),
    field!("model.vision_hidden", false, |c| c.train.model.vision_hidden, num),
    field!("model.fusion_blocks", false, |c| c.train.model.fusion_blocks, num),
    field!("model.mlp_hidden", false, |c| c.train.model.mlp_hidden, num),
    field!("model.init_tau", false, |c| c.train.model.init_tau, num),
];
