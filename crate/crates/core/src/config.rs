//! Run configuration: one sectioned TOML file, overridable per key.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::car::CarConfig;
use crate::corpus::IngestOptions;
use crate::crm::{CrmConfig, EmbeddingMode};
use crate::error::{Error, Result};
use crate::recommender::{InferenceConfig, PromptBundle};
use crate::sare::SareConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub interactions: PathBuf,
    pub items: PathBuf,
    pub artifacts: PathBuf,
    /// Defaults to `report.json` inside the artifacts directory.
    pub report: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            interactions: "interactions.tsv".into(),
            items: "items.tsv".into(),
            artifacts: "artifacts".into(),
            report: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    /// Tab-separated interactions and metadata.
    Tsv,
    /// `ratings.dat` / `movies.dat` with the windowed temporal protocol.
    Movielens,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub format: DataFormat,
    pub binarize_threshold: u8,
    pub window_start: Option<i64>,
    pub min_interactions: Option<usize>,
    /// Split boundaries; derived from the data for the MovieLens format.
    pub train_end: Option<i64>,
    pub val_end: Option<i64>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            format: DataFormat::Tsv,
            binarize_threshold: 4,
            window_start: None,
            min_interactions: None,
            train_end: None,
            val_end: None,
        }
    }
}

impl DataConfig {
    pub fn ingest_options(&self) -> IngestOptions {
        IngestOptions {
            binarize_threshold: self.binarize_threshold,
            window_start: self.window_start,
            min_interactions: self.min_interactions,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Stub,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProvidersConfig {
    pub kind: ProviderKind,
    pub embed_endpoint: Option<String>,
    pub llm_endpoint: Option<String>,
    pub model: String,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub concurrency: usize,
}

impl Default for ProvidersConfig {
    fn default() -> Self {
        ProvidersConfig {
            kind: ProviderKind::Stub,
            embed_endpoint: None,
            llm_endpoint: None,
            model: "default".into(),
            timeout_secs: 60,
            max_retries: 2,
            concurrency: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub dim: usize,
    pub max_items: usize,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            dim: 256,
            max_items: 15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrmSection {
    pub dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub mode: String,
}

impl Default for CrmSection {
    fn default() -> Self {
        let c = CrmConfig::default();
        CrmSection {
            dim: c.dim,
            epochs: c.epochs,
            learning_rate: c.learning_rate,
            l2: c.l2,
            mode: "mean-of-items".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CarSection {
    pub k_c: usize,
    pub tau_car: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for CarSection {
    fn default() -> Self {
        let c = CarConfig::default();
        CarSection {
            k_c: c.k_c,
            tau_car: c.tau,
            epochs: c.epochs,
            learning_rate: c.learning_rate,
            batch_size: c.batch_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SareSection {
    pub tau_sare: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub rank_threshold: usize,
    pub neg_count: usize,
    pub sample_users: usize,
}

impl Default for SareSection {
    fn default() -> Self {
        let c = SareConfig::default();
        SareSection {
            tau_sare: c.tau,
            epochs: c.epochs,
            learning_rate: c.learning_rate,
            rank_threshold: c.rank_threshold,
            neg_count: c.neg_count,
            sample_users: c.sample_users,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceSection {
    pub k_e: usize,
    pub k_s: usize,
}

impl Default for InferenceSection {
    fn default() -> Self {
        let c = InferenceConfig::default();
        InferenceSection { k_e: c.k_e, k_s: c.k_s }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: PathsConfig,
    pub data: DataConfig,
    pub providers: ProvidersConfig,
    pub embedding: EmbeddingConfig,
    pub crm: CrmSection,
    pub car: CarSection,
    pub sare: SareSection,
    pub inference: InferenceSection,
    pub prompts: PromptBundle,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            paths: PathsConfig::default(),
            data: DataConfig::default(),
            providers: ProvidersConfig::default(),
            embedding: EmbeddingConfig::default(),
            crm: CrmSection::default(),
            car: CarSection::default(),
            sare: SareSection::default(),
            inference: InferenceSection::default(),
            prompts: PromptBundle::default(),
        }
    }
}

/// Parses the right-hand side of a `key=value` override as a TOML value,
/// falling back to a bare string.
fn override_value(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match wrapped.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, value) = assignment
        .split_once('=')
        .ok_or_else(|| Error::config(assignment, "override must look like key=value"))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::config(key, "malformed key"));
    }
    let mut table = root;
    for part in &parts[..parts.len() - 1] {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::config(key, format!("`{part}` is not a section")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), override_value(value.trim()));
    Ok(())
}

fn field_from_toml_error(message: &str) -> String {
    // serde messages name the offending key in backticks
    message
        .split('`')
        .nth(1)
        .map(str::to_string)
        .unwrap_or_else(|| "config".to_string())
}

impl RunConfig {
    /// Parses `text`, applies `key=value` overrides, resolves relative paths
    /// against `base_dir` and validates.
    pub fn from_toml(text: &str, overrides: &[String], base_dir: &Path) -> Result<Self> {
        let mut root: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::config("config", e.message().to_string()))?;
        for o in overrides {
            apply_override(&mut root, o)?;
        }
        let mut cfg: RunConfig = toml::Value::Table(root).try_into().map_err(|e: toml::de::Error| {
            let msg = e.message().to_string();
            Error::config(field_from_toml_error(&msg), msg)
        })?;
        cfg.resolve_paths(base_dir);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>, overrides: &[String]) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, overrides, base)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.paths.interactions);
        fix(&mut self.paths.items);
        fix(&mut self.paths.artifacts);
        if let Some(r) = self.paths.report.as_mut() {
            fix(r);
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.crm_config()?.validate()?;
        self.car_config().validate()?;
        self.sare_config().validate()?;
        self.inference_config().validate()?;
        self.prompts.validate()?;
        if self.embedding.dim < 2 {
            return Err(Error::config("embedding_dim", "must be at least 2"));
        }
        if let (Some(t), Some(v)) = (self.data.train_end, self.data.val_end) {
            crate::corpus::SplitSpec { train_end: t, val_end: v }.validate()?;
        }
        if self.providers.kind == ProviderKind::Remote {
            if self.providers.embed_endpoint.is_none() {
                return Err(Error::config("embed_endpoint", "required for remote providers"));
            }
            if self.providers.llm_endpoint.is_none() {
                return Err(Error::config("llm_endpoint", "required for remote providers"));
            }
        }
        if self.providers.concurrency == 0 {
            return Err(Error::config("concurrency", "must be at least 1"));
        }
        Ok(())
    }

    pub fn report_path(&self) -> PathBuf {
        self.paths
            .report
            .clone()
            .unwrap_or_else(|| self.paths.artifacts.join("report.json"))
    }

    pub fn crm_mode(&self) -> Result<EmbeddingMode> {
        self.crm.mode.parse()
    }

    pub fn crm_config(&self) -> Result<CrmConfig> {
        self.crm_mode()?;
        Ok(CrmConfig {
            dim: self.crm.dim,
            epochs: self.crm.epochs,
            learning_rate: self.crm.learning_rate,
            l2: self.crm.l2,
            seed: self.seed,
        })
    }

    pub fn car_config(&self) -> CarConfig {
        CarConfig {
            k_c: self.car.k_c,
            tau: self.car.tau_car,
            epochs: self.car.epochs,
            learning_rate: self.car.learning_rate,
            batch_size: self.car.batch_size,
            max_items: self.embedding.max_items,
            seed: self.seed.wrapping_add(1),
        }
    }

    pub fn sare_config(&self) -> SareConfig {
        SareConfig {
            tau: self.sare.tau_sare,
            epochs: self.sare.epochs,
            learning_rate: self.sare.learning_rate,
            rank_threshold: self.sare.rank_threshold,
            neg_count: self.sare.neg_count,
            sample_users: self.sare.sample_users,
            seed: self.seed.wrapping_add(2),
        }
    }

    pub fn inference_config(&self) -> InferenceConfig {
        InferenceConfig {
            k_e: self.inference.k_e,
            k_s: self.inference.k_s,
            max_items: self.embedding.max_items,
            concurrency: self.providers.concurrency,
        }
    }

    /// SHA-256 of the canonical JSON form of every setting except paths.
    pub fn digest(&self) -> String {
        let mut canonical = self.clone();
        canonical.paths = PathsConfig::default();
        let bytes = serde_json::to_vec(&canonical).expect("config serialises");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str, overrides: &[&str]) -> Result<RunConfig> {
        let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
        RunConfig::from_toml(text, &o, Path::new("/base"))
    }

    #[test]
    fn defaults_validate_and_match_documented_values() {
        let c = parse("", &[]).unwrap();
        assert_eq!((c.car.k_c, c.inference.k_e, c.inference.k_s), (5, 10, 2));
        assert_eq!((c.car.tau_car, c.sare.tau_sare), (0.1, 0.02));
        assert_eq!((c.sare.rank_threshold, c.sare.neg_count, c.car.batch_size), (5, 3, 16));
        assert_eq!((c.embedding.dim, c.embedding.max_items), (256, 15));
        assert_eq!(c.paths.artifacts, PathBuf::from("/base/artifacts"));
    }

    #[test]
    fn zero_temperature_names_the_field() {
        let err = parse("[car]\ntau_car = 0.0\n", &[]).unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "tau_car"), "{err}");
        let err = parse("", &["sare.tau_sare=-1"]).unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "tau_sare"));
    }

    #[test]
    fn overrides_take_precedence() {
        let c = parse("seed = 1\n[inference]\nk_s = 2\n", &["inference.k_s=0", "seed=9", "crm.mode=user-factor"]).unwrap();
        assert_eq!((c.inference.k_s, c.seed), (0, 9));
        assert_eq!(c.crm_mode().unwrap(), EmbeddingMode::UserFactor);
    }

    #[test]
    fn unknown_keys_are_rejected_by_name() {
        let err = parse("[car]\ntemperature = 0.1\n", &[]).unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "temperature"), "{err}");
    }

    #[test]
    fn digest_ignores_paths_but_not_hyperparameters() {
        let a = parse("", &[]).unwrap();
        let b = parse("[paths]\nartifacts = \"/elsewhere\"\n", &[]).unwrap();
        let c = parse("", &["inference.k_s=1"]).unwrap();
        assert_eq!(a.digest(), b.digest());
        assert_ne!(a.digest(), c.digest());
        assert_eq!(a.digest().len(), 64);
    }

    #[test]
    fn round_trips_through_toml() {
        let a = parse("", &[]).unwrap();
        let back = RunConfig::from_toml(&a.to_toml(), &[], Path::new("/")).unwrap();
        assert_eq!(back, a);
    }
}
