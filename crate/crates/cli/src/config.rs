//! Run configuration: built-in defaults, then the JSON config file, then
//! command-line flags, each layer overriding the previous one.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Deserialize;

use eqforge::design::EqDesignConfig;
use eqforge::experiment::{CohortSource, ExperimentSpec, DEFAULT_DELAYS};
use eqforge::metrics::EvalSettings;
use eqforge::simulation::{Condition, SynthCohortParams};

/// Contents of `--config <path>`. Every field is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub synth: Option<SynthCohortParams>,
    pub conditions: Option<Vec<Condition>>,
    pub delays: Option<Vec<usize>>,
    pub design: Option<EqDesignConfig>,
    pub eval: Option<EvalSettings>,
    pub rtf_ridge: Option<f64>,
    pub workers: Option<usize>,
    pub exclude_subject: Option<String>,
    pub write_responses: Option<bool>,
}

impl FileConfig {
    /// Reads the file; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: FileConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.out, &mut cfg.manifest].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }
}

/// Flag values shared by the subcommands; `None` means "not given".
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub conditions: Option<Vec<Condition>>,
    pub delays: Option<Vec<usize>>,
    pub lambda: Option<f64>,
    pub filter_length: Option<usize>,
    pub lead: Option<usize>,
    pub device_delay: Option<usize>,
    pub workers: Option<usize>,
    pub exclude_subject: Option<String>,
}

/// Fully resolved parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub out: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub synth: SynthCohortParams,
    pub conditions: Vec<Condition>,
    pub delays: Vec<usize>,
    pub design: EqDesignConfig,
    pub eval: EvalSettings,
    pub rtf_ridge: f64,
    pub workers: usize,
    pub exclude_subject: Option<String>,
    pub write_responses: bool,
}

impl RunConfig {
    pub fn resolve(file: Option<FileConfig>, flags: &Overrides) -> Self {
        let file = file.unwrap_or_default();
        let mut synth = file.synth.unwrap_or_default();
        if let Some(seed) = flags.seed.or(file.seed) {
            synth.seed = seed;
        }
        let mut design = file.design.unwrap_or_default();
        if let Some(v) = flags.lambda {
            design.lambda = v;
        }
        if let Some(v) = flags.filter_length {
            design.filter_length = v;
        }
        if let Some(v) = flags.lead {
            design.acausal_lead = v;
        }
        if let Some(v) = flags.device_delay {
            design.device_delay = v;
        }
        Self {
            out: flags.out.clone().or(file.out),
            manifest: flags.manifest.clone().or(file.manifest),
            synth,
            conditions: flags
                .conditions
                .clone()
                .or(file.conditions)
                .unwrap_or_else(|| Condition::ALL.to_vec()),
            delays: flags
                .delays
                .clone()
                .or(file.delays)
                .unwrap_or_else(|| DEFAULT_DELAYS.to_vec()),
            design,
            eval: file.eval.unwrap_or_default(),
            rtf_ridge: file.rtf_ridge.unwrap_or(0.0),
            workers: flags.workers.or(file.workers).unwrap_or(0),
            exclude_subject: flags.exclude_subject.clone().or(file.exclude_subject),
            write_responses: file.write_responses.unwrap_or(true),
        }
    }

    pub fn cohort_source(&self) -> CohortSource {
        match &self.manifest {
            Some(path) => CohortSource::Manifest(path.clone()),
            None => CohortSource::Synth(self.synth.clone()),
        }
    }

    pub fn experiment_spec(&self) -> ExperimentSpec {
        ExperimentSpec {
            cohort: self.cohort_source(),
            conditions: self.conditions.clone(),
            delays: self.delays.clone(),
            design: self.design.clone(),
            eval: self.eval,
            rtf_ridge: self.rtf_ridge,
            exclude_subject: self.exclude_subject.clone(),
            write_responses: self.write_responses,
        }
    }
}
