//! Evaluation manifests: which snapshots make up which runs.

use std::fs;
use std::path::{Path, PathBuf};

use backupdiff_core::contentx::{builtin_recipes, load_recipes, ExtractionRecipe};
use backupdiff_core::ingest::SourceSpec;
use backupdiff_core::pathmap::MappingRules;
use backupdiff_core::simdiff::WeightSide;
use backupdiff_core::{Digest, Platform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// `recipes_file` value selecting the bundled Android recipes.
pub const BUILTIN_RECIPES: &str = "builtin";

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("cannot read manifest {path}: {message}")]
    Read { path: String, message: String },
    #[error("malformed manifest: {0}")]
    Parse(String),
    #[error("manifest lists no runs")]
    NoRuns,
    #[error("run ids must be 1..={expected} without gaps or repeats, found {found:?}")]
    RunIds { expected: usize, found: Vec<u32> },
    #[error("mapping rules: {0}")]
    Rules(String),
    #[error("recipes: {0}")]
    Recipes(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub run_id: u32,
    pub pre: SourceSpec,
    pub backup: SourceSpec,
    pub post: SourceSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationManifest {
    pub dataset_label: String,
    /// Heading the dataset is listed under in the report.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub section: Option<String>,
    pub platform: Platform,
    pub runs: Vec<RunSpec>,
    /// JSON recipes for content-based evaluation, or `"builtin"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recipes_file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mapping_rules: Option<PathBuf>,
    #[serde(default)]
    pub weight_side: WeightSide,
    pub output_dir: PathBuf,
    /// Name prefixes kept in all three snapshots of the file-based
    /// evaluation; empty keeps everything.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub scope: Vec<String>,
    /// Add the row of P-class names shared by every run.
    #[serde(default)]
    pub overlap_row: bool,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl EvaluationManifest {
    pub fn parse(text: &str) -> Result<Self, ManifestError> {
        serde_json::from_str(text).map_err(|e| ManifestError::Parse(e.to_string()))
    }

    /// Reads a manifest; relative paths are taken from the manifest's
    /// directory.
    pub fn load(path: &Path) -> Result<Self, ManifestError> {
        let text = fs::read_to_string(path).map_err(|e| ManifestError::Read {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let mut m = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for run in &mut m.runs {
            for spec in [&mut run.pre, &mut run.backup, &mut run.post] {
                resolve(base, &mut spec.path);
            }
        }
        if let Some(p) = m.recipes_file.as_mut().filter(|p| p.as_os_str() != BUILTIN_RECIPES) {
            resolve(base, p);
        }
        if let Some(p) = m.mapping_rules.as_mut() {
            resolve(base, p);
        }
        resolve(base, &mut m.output_dir);
        Ok(m)
    }

    /// Checks run ids and loads the rule and recipe files. Missing
    /// snapshot sources are not an error here; those runs fail later.
    pub fn validate(&self) -> Result<Resources, ManifestError> {
        if self.runs.is_empty() {
            return Err(ManifestError::NoRuns);
        }
        let mut ids: Vec<u32> = self.runs.iter().map(|r| r.run_id).collect();
        ids.sort_unstable();
        if ids.iter().enumerate().any(|(i, id)| *id as usize != i + 1) {
            return Err(ManifestError::RunIds {
                expected: ids.len(),
                found: ids,
            });
        }
        let (rules, rules_source) = match &self.mapping_rules {
            None => (MappingRules::builtin(), "builtin".to_string()),
            Some(p) => (
                MappingRules::load(p).map_err(|e| ManifestError::Rules(e.to_string()))?,
                p.display().to_string(),
            ),
        };
        let (recipes, recipes_digest) = match &self.recipes_file {
            None => (Vec::new(), None),
            Some(p) if p.as_os_str() == BUILTIN_RECIPES => {
                let recipes = builtin_recipes();
                let text = serde_json::to_vec(&recipes).expect("recipes serialize");
                (recipes, Some(Digest::of(&text)))
            }
            Some(p) => {
                let recipes = load_recipes(p).map_err(|e| ManifestError::Recipes(e.to_string()))?;
                let bytes = fs::read(p).map_err(|e| ManifestError::Recipes(e.to_string()))?;
                (recipes, Some(Digest::of(&bytes)))
            }
        };
        let mut labels: Vec<&str> = recipes.iter().map(|r| r.label.as_str()).collect();
        labels.sort_unstable();
        if let Some(w) = labels.windows(2).find(|w| w[0] == w[1]) {
            return Err(ManifestError::Recipes(format!("label {:?} used twice", w[0])));
        }
        Ok(Resources {
            rules,
            rules_source,
            recipes,
            recipes_digest,
        })
    }

    /// Runs in id order.
    pub fn sorted_runs(&self) -> Vec<&RunSpec> {
        let mut runs: Vec<&RunSpec> = self.runs.iter().collect();
        runs.sort_by_key(|r| r.run_id);
        runs
    }
}

/// Rule and recipe tables a validated manifest refers to.
#[derive(Debug, Clone)]
pub struct Resources {
    pub rules: MappingRules,
    pub rules_source: String,
    pub recipes: Vec<ExtractionRecipe>,
    pub recipes_digest: Option<Digest>,
}
