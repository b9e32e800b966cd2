//! Training config files: `key = value` lines grouped into `[model]`,
//! `[train]`, and `[weights]` sections. `#` starts a comment. Every key is
//! optional (defaults apply), but unknown sections or keys are errors.

use std::path::Path;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use lead_core::kb::DefinitionStrategy;
use lead_core::objectives::DefinitionScoreMode;
use lead_core::trainer::{LossScope, TrainConfig};

/// Architecture fields not covered by the training config.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ModelSettings {
    pub hidden_size: usize,
    pub layers: usize,
    pub heads: usize,
}

impl Default for ModelSettings {
    fn default() -> Self {
        ModelSettings {
            hidden_size: 64,
            layers: 2,
            heads: 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FileConfig {
    pub model: ModelSettings,
    pub train: TrainConfig,
}

pub fn load_config(path: impl AsRef<Path>) -> Result<FileConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config file {}", path.display()))?;
    parse_config(&text).with_context(|| format!("in config file {}", path.display()))
}

pub fn parse_config(text: &str) -> Result<FileConfig> {
    let mut model = ModelSettings::default();
    let mut train = TrainConfig::default();
    let mut section = String::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .with_context(|| format!("line {lineno}: malformed section header `{line}`"))?;
            match name {
                "model" | "train" | "weights" => section = name.to_string(),
                other => bail!("line {lineno}: unknown section `[{other}]`"),
            }
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .with_context(|| format!("line {lineno}: expected `key = value`, found `{line}`"))?;
        if section.is_empty() {
            bail!("line {lineno}: key `{key}` appears before any section header");
        }
        apply_key(&mut model, &mut train, &section, key, value)
            .with_context(|| format!("line {lineno}"))?;
    }
    Ok(FileConfig { model, train })
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse::<T>()
        .map_err(|e| anyhow::anyhow!("invalid value `{value}` for `{key}`: {e}"))
}

fn apply_key(
    model: &mut ModelSettings,
    train: &mut TrainConfig,
    section: &str,
    key: &str,
    value: &str,
) -> Result<()> {
    match section {
        "model" => match key {
            "hidden_size" => model.hidden_size = parse_value(key, value)?,
            "layers" => model.layers = parse_value(key, value)?,
            "heads" => model.heads = parse_value(key, value)?,
            other => bail!("unknown key `model.{other}`"),
        },
        "train" => match key {
            "epochs" => train.epochs = parse_value(key, value)?,
            "batch_size" => train.batch_size = parse_value(key, value)?,
            "negatives" => train.negatives = parse_value(key, value)?,
            "learning_rate" => train.learning_rate = parse_value(key, value)?,
            "warmup_steps" => train.warmup_steps = Some(parse_value(key, value)?),
            "max_length" => train.max_length = parse_value(key, value)?,
            "seed" => train.seed = parse_value(key, value)?,
            "per_sample_error_cap" => train.per_sample_error_cap = parse_value(key, value)?,
            "contrastive_interval" => train.contrastive_interval = parse_value(key, value)?,
            "definition_strategy" => {
                train.definition_strategy = parse_value::<DefinitionStrategy>(key, value)?
            }
            "definition_score_mode" => {
                train.definition_score_mode = match value {
                    "exp_cosine" => DefinitionScoreMode::ExpCosine { temperature: 1.0 },
                    "clamped_cosine" => DefinitionScoreMode::ClampedCosine { floor: 1e-4 },
                    other => bail!(
                        "invalid value `{other}` for `definition_score_mode` \
                         (expected exp_cosine or clamped_cosine)"
                    ),
                }
            }
            "csc_loss_scope" => train.csc_loss_scope = parse_value::<LossScope>(key, value)?,
            other => bail!("unknown key `train.{other}`"),
        },
        "weights" => match key {
            "csc" => train.weights.csc = parse_value(key, value)?,
            "phonetics" => train.weights.phonetics = parse_value(key, value)?,
            "vision" => train.weights.vision = parse_value(key, value)?,
            "definition" => train.weights.definition = parse_value(key, value)?,
            other => bail!("unknown key `weights.{other}`"),
        },
        _ => unreachable!("section names are validated"),
    }
    Ok(())
}

/// Resolved config as recorded in run manifests.
pub fn config_json(config: &FileConfig) -> serde_json::Value {
    let train = &config.train;
    serde_json::json!({
        "model": {
            "hidden_size": config.model.hidden_size,
            "layers": config.model.layers,
            "heads": config.model.heads,
        },
        "train": {
            "epochs": train.epochs,
            "batch_size": train.batch_size,
            "negatives": train.negatives,
            "learning_rate": train.learning_rate,
            "warmup_steps": train.warmup_steps,
            "max_length": train.max_length,
            "seed": train.seed,
            "per_sample_error_cap": train.per_sample_error_cap,
            "contrastive_interval": train.contrastive_interval,
            "definition_strategy": train.definition_strategy.to_string(),
            "csc_loss_scope": match train.csc_loss_scope {
                LossScope::AllPositions => "all_positions",
                LossScope::ErrorPositionsOnly => "error_positions_only",
            },
        },
        "weights": {
            "csc": train.weights.csc,
            "phonetics": train.weights.phonetics,
            "vision": train.weights.vision,
            "definition": train.weights.definition,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_full_config() {
        let text = "
[model]
hidden_size = 32
layers = 1
heads = 2

[train]
epochs = 3           # short run
batch_size = 4
negatives = 2
learning_rate = 1e-3
warmup_steps = 5
max_length = 16
seed = 9
definition_strategy = similar

[weights]
csc = 1.0
phonetics = 0.5
vision = 0
definition = 2
";
        let config = parse_config(text).unwrap();
        assert_eq!(config.model.hidden_size, 32);
        assert_eq!(config.train.epochs, 3);
        assert_eq!(config.train.warmup_steps, Some(5));
        assert_eq!(config.train.learning_rate, 1e-3);
        assert_eq!(config.train.definition_strategy, DefinitionStrategy::Similar);
        assert_eq!(config.train.weights.phonetics, 0.5);
        assert_eq!(config.train.weights.definition, 2.0);
    }

    #[test]
    fn defaults_apply_when_keys_are_omitted() {
        let config = parse_config("[train]\nepochs = 2\n").unwrap();
        assert_eq!(config.train.epochs, 2);
        assert_eq!(config.train.batch_size, 32);
        assert_eq!(config.train.negatives, 8);
        assert_eq!(config.train.learning_rate, 5e-5);
        assert_eq!(config.train.warmup_steps, None);
        assert_eq!(config.model.hidden_size, 64);
    }

    #[test]
    fn unknown_keys_are_errors_naming_the_key() {
        let err = parse_config("[train]\nepoch = 2\n").unwrap_err();
        assert!(format!("{err:#}").contains("train.epoch"), "{err:#}");

        let err = parse_config("[weights]\ncsc_weight = 2\n").unwrap_err();
        assert!(format!("{err:#}").contains("weights.csc_weight"));

        let err = parse_config("[optimizer]\nlr = 2\n").unwrap_err();
        assert!(format!("{err:#}").contains("optimizer"));
    }

    #[test]
    fn malformed_lines_are_errors() {
        assert!(parse_config("[train]\nepochs 2\n").is_err());
        assert!(parse_config("epochs = 2\n").is_err()); // key before section
        assert!(parse_config("[train\nepochs = 2\n").is_err());
    }
}
