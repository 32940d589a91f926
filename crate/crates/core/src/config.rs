//! Run configuration: defaults, JSON loading and validation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cohort::CohortSpec;
use crate::error::{Result, UpmiError};
use crate::forest::RfConfig;
use crate::gmm::{check_scenario, GmmConfig, STANDARD_SCENARIOS};
use crate::logistic::LogisticConfig;
use crate::meta::{BaseConfig, InnerScheme};
use crate::selection::SelectionConfig;
use crate::table::TableSchema;

pub const SCHEMA_VERSION: u32 = 1;
/// Environment variable consulted for the default output directory.
pub const OUTPUT_DIR_ENV: &str = "UPMI_OUTPUT_DIR";
pub const DEFAULT_OUTPUT_DIR: &str = "upmi-out";

/// Paths of the two modality CSVs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputPaths {
    pub t1: PathBuf,
    pub t2: PathBuf,
    #[serde(default)]
    pub schema: TableSchema,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    /// Modality CSVs; when absent a cohort is generated from `cohort`.
    pub input: Option<InputPaths>,
    pub cohort: CohortSpec,
    pub outer_folds: usize,
    pub inner: InnerScheme,
    pub selection: SelectionConfig,
    pub logistic: LogisticConfig,
    pub gmm: GmmConfig,
    pub forest: RfConfig,
    pub scenarios: Vec<u32>,
    pub allow_custom_scenarios: bool,
    pub seed: u64,
    pub n_boot: usize,
    pub ci_level: f64,
    /// FPR grid size of the fold-averaged ROC curve.
    pub roc_grid: usize,
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            input: None,
            cohort: CohortSpec::default(),
            outer_folds: 5,
            inner: InnerScheme::KFold(5),
            selection: SelectionConfig::default(),
            logistic: LogisticConfig::default(),
            gmm: GmmConfig::default(),
            forest: RfConfig::meta_learner(),
            scenarios: STANDARD_SCENARIOS.to_vec(),
            allow_custom_scenarios: false,
            seed: 42,
            n_boot: 10_000,
            ci_level: 0.95,
            roc_grid: 101,
            output_dir: None,
        }
    }
}

impl RunConfig {
    pub fn from_json_str(text: &str) -> Result<RunConfig> {
        let config: RunConfig =
            serde_json::from_str(text).map_err(|e| UpmiError::Config(format!("invalid run config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|source| UpmiError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        RunConfig::from_json_str(&text).map_err(|e| match e {
            UpmiError::Config(msg) => UpmiError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn base(&self) -> BaseConfig {
        BaseConfig {
            selection: self.selection.clone(),
            logistic: self.logistic.clone(),
        }
    }

    /// Explicit setting, else `$UPMI_OUTPUT_DIR`, else `./upmi-out`.
    pub fn resolved_output_dir(&self) -> PathBuf {
        self.output_dir
            .clone()
            .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(UpmiError::Config(msg));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.outer_folds < 2 {
            return bad(format!("outer_folds must be at least 2, got {}", self.outer_folds));
        }
        if let InnerScheme::KFold(k) = self.inner {
            if k < 2 {
                return bad(format!("inner k_fold must be at least 2, got {k}"));
            }
        }
        if self.scenarios.is_empty() {
            return bad("scenarios must not be empty".into());
        }
        let mut seen = std::collections::BTreeSet::new();
        for &pct in &self.scenarios {
            if !seen.insert(pct) {
                return bad(format!("scenario {pct} is listed twice"));
            }
            check_scenario(pct, self.allow_custom_scenarios)?;
        }
        if self.n_boot == 0 {
            return bad("n_boot must be positive".into());
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return bad(format!("ci_level must lie in (0, 1), got {}", self.ci_level));
        }
        if self.roc_grid < 2 {
            return bad(format!("roc_grid must be at least 2, got {}", self.roc_grid));
        }
        if self.input.is_none() {
            self.cohort.validate()?;
        }
        self.selection.validate()?;
        self.logistic.validate()?;
        self.gmm.validate()?;
        self.forest.validate()?;
        Ok(())
    }
}
