use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{invalid, CliError, CompletionKind, TranslatorKind};
use crate::dataset::SyntheticSpec;
use crate::encoder::TrainConfig;
use crate::eval::FewShotMethod;
use crate::icl::{Strategy, DEFAULT_TEMPERATURE};
use crate::textaug::{EdaOp, Language};

/// Contents of `--config`. Every section is optional; unknown keys anywhere
/// are rejected.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    /// Fills `seed` in every section that does not set it.
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub rewrite: Option<toml::Table>,
    pub augment_eda: Option<toml::Table>,
    pub backtranslate: Option<toml::Table>,
    pub synth: Option<toml::Table>,
    pub train: Option<toml::Table>,
    pub eval: Option<toml::Table>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("config {}: {e}", path.display())))?;
        let file: Self = toml::from_str(&text).map_err(|e| invalid(format!("config {}: {e}", path.display())))?;
        file.check_sections()?;
        Ok(file)
    }

    /// Parses every section so a bad key fails any command, not only the
    /// one that reads it.
    fn check_sections(&self) -> Result<(), CliError> {
        self.section::<RewriteConfig>("rewrite", &self.rewrite, true)?;
        self.section::<EdaConfig>("augment_eda", &self.augment_eda, true)?;
        self.section::<BacktranslateConfig>("backtranslate", &self.backtranslate, false)?;
        self.section::<TrainConfig>("train", &self.train, true)?;
        self.section::<EvalConfig>("eval", &self.eval, true)?;
        let mut synth = self.synth.clone().unwrap_or_default();
        synth.remove("seed");
        self.section::<SyntheticSpec>("synth", &Some(synth), false)?;
        Ok(())
    }

    /// Deserializes a section over the defaults of `T`.
    pub fn section<T: DeserializeOwned>(
        &self,
        name: &str,
        table: &Option<toml::Table>,
        with_seed: bool,
    ) -> Result<T, CliError> {
        let mut table = table.clone().unwrap_or_default();
        if with_seed && !table.contains_key("seed") {
            if let Some(seed) = self.seed {
                table.insert("seed".into(), toml::Value::Integer(seed as i64));
            }
        }
        toml::Value::Table(table)
            .try_into()
            .map_err(|e| invalid(format!("config section [{name}]: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewriteConfig {
    pub strategies: Vec<Strategy>,
    pub temperature: f64,
    pub concurrency: usize,
    pub max_retries: u32,
    pub backoff_ms: u64,
    pub max_tokens: u32,
    pub seed: u64,
    pub cache: Option<PathBuf>,
    pub backend: CompletionKind,
}

impl Default for RewriteConfig {
    fn default() -> Self {
        Self {
            strategies: Strategy::ALL.to_vec(),
            temperature: DEFAULT_TEMPERATURE,
            concurrency: 4,
            max_retries: 3,
            backoff_ms: 200,
            max_tokens: 64,
            seed: 0,
            cache: None,
            backend: CompletionKind::Http,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EdaConfig {
    pub op: EdaOp,
    pub n_aug: usize,
    pub alpha_sr: f64,
    pub alpha_ri: f64,
    pub alpha_rs: f64,
    pub p_rd: f64,
    pub synonyms: Option<PathBuf>,
    pub seed: u64,
}

impl Default for EdaConfig {
    fn default() -> Self {
        Self {
            op: EdaOp::Composite,
            n_aug: 4,
            alpha_sr: 0.1,
            alpha_ri: 0.1,
            alpha_rs: 0.1,
            p_rd: 0.1,
            synonyms: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BacktranslateConfig {
    pub languages: Vec<Language>,
    pub backend: TranslatorKind,
}

impl Default for BacktranslateConfig {
    fn default() -> Self {
        Self {
            languages: Language::PIVOTS.to_vec(),
            backend: TranslatorKind::Http,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Overrides `template_set` when present.
    pub templates: Option<Vec<String>>,
    /// `default`, `training` or `paraphrase`.
    pub template_set: String,
    pub episodes: usize,
    pub way: usize,
    pub shot: usize,
    pub n_query: usize,
    pub method: FewShotMethod,
    pub val_fraction: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            templates: None,
            template_set: "default".into(),
            episodes: crate::eval::DEFAULT_EPISODES,
            way: 5,
            shot: 5,
            n_query: 15,
            method: FewShotMethod::Prototypical,
            val_fraction: 0.2,
            max_iter: 500,
            seed: 0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::TrainConfig;

    #[test]
    fn sections_merge_over_defaults() {
        let cfg: FileConfig = toml::from_str("seed = 9\n[train]\nepochs = 3\n[eval]\nseed = 1\n").unwrap();
        let t: TrainConfig = cfg.section("train", &cfg.train, true).unwrap();
        assert_eq!((t.epochs, t.seed, t.batch_size), (3, 9, 256));
        let e: EvalConfig = cfg.section("eval", &cfg.eval, true).unwrap();
        assert_eq!(e.seed, 1);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<FileConfig>("[trian]\nepochs = 3\n").is_err());
        let cfg: FileConfig = toml::from_str("[train]\nepoch = 3\n").unwrap();
        assert!(cfg.section::<TrainConfig>("train", &cfg.train, true).is_err());
    }
}
