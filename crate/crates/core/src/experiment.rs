//! Batch runner for the (subject x condition x delay) grid.
//!
//! Output layout under the chosen directory:
//!
//! ```text
//! runs/<condition>/dG<d>/<subject>.json   one ConditionReport per run
//! runs/<condition>/dG<d>/<subject>.csv    frequency_hz, desired_db, aided_db, occluded_db
//! runs.csv                                one record per run, failures included
//! summary.csv                             condition, d_G, mean_lsd_db, sd_lsd_db, n_subjects
//! ranking.csv                             conditions ordered by mean LSD per delay
//! report.json                             spec, run records and summaries
//! ```
//!
//! Runs execute on a rayon pool; results are gathered and written in grid
//! order, so outputs do not depend on scheduling or worker count. A failing
//! run is recorded and the grid continues.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::EqDesignConfig;
use crate::error::{Error, Result};
use crate::metrics::{rank_conditions, ConditionReport, EvalSettings};
use crate::simulation::{
    load_manifest, Cohort, Condition, ConditionRun, PreparedCohort, ResponseSet, SynthCohortParams,
};

pub const DEFAULT_DELAYS: [usize; 4] = [0, 1, 16, 96];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CohortSource {
    Manifest(PathBuf),
    Synth(SynthCohortParams),
}

impl Default for CohortSource {
    fn default() -> Self {
        CohortSource::Synth(SynthCohortParams::default())
    }
}

impl CohortSource {
    pub fn load(&self) -> Result<Cohort<f64>> {
        match self {
            CohortSource::Manifest(path) => Ok(load_manifest(path)?.1),
            CohortSource::Synth(params) => Cohort::synthetic(params),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSpec {
    pub cohort: CohortSource,
    pub conditions: Vec<Condition>,
    pub delays: Vec<usize>,
    /// `d_G` inside is ignored; each run takes its delay from `delays`.
    pub design: EqDesignConfig,
    pub eval: EvalSettings,
    /// Ridge for the relative transfer estimates.
    pub rtf_ridge: f64,
    /// Subject dropped from the cohort before the grid runs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exclude_subject: Option<String>,
    pub write_responses: bool,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            cohort: CohortSource::default(),
            conditions: Condition::ALL.to_vec(),
            delays: DEFAULT_DELAYS.to_vec(),
            design: EqDesignConfig::default(),
            eval: EvalSettings::default(),
            rtf_ridge: 0.0,
            exclude_subject: None,
            write_responses: true,
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.conditions.is_empty() {
            return Err(Error::invalid("experiment needs at least one condition"));
        }
        if self.delays.is_empty() {
            return Err(Error::invalid("experiment needs at least one delay"));
        }
        if !(self.rtf_ridge >= 0.0) {
            return Err(Error::invalid("rtf_ridge must be non-negative"));
        }
        self.design.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Failed,
}

/// Outcome of one grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub subject_id: String,
    pub condition: Condition,
    #[serde(rename = "d_G")]
    pub device_delay: usize,
    pub status: RunStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lsd_db: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub condition: String,
    #[serde(rename = "d_G")]
    pub device_delay: usize,
    pub mean_lsd_db: f64,
    pub sd_lsd_db: f64,
    pub n_subjects: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingRow {
    #[serde(rename = "d_G")]
    pub device_delay: usize,
    pub rank: usize,
    pub condition: String,
    pub mean_lsd_db: f64,
    pub sd_lsd_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub spec: ExperimentSpec,
    pub subjects: Vec<String>,
    pub runs: Vec<RunRecord>,
    pub reports: Vec<ConditionReport>,
    /// In condition order as given, then delay order.
    pub summary: Vec<SummaryRow>,
    pub ranking: Vec<RankingRow>,
}

impl ExperimentReport {
    pub fn failures(&self) -> usize {
        self.runs.iter().filter(|r| r.status == RunStatus::Failed).count()
    }

    pub fn mean_lsd(&self, condition: Condition, delay: usize) -> Option<f64> {
        self.summary
            .iter()
            .find(|s| s.condition == condition.name() && s.device_delay == delay)
            .map(|s| s.mean_lsd_db)
    }
}

struct Cell<'a> {
    subject: &'a str,
    condition: Condition,
    delay: usize,
}

fn run_dir(out: &Path, condition: Condition, delay: usize) -> PathBuf {
    out.join("runs").join(condition.name()).join(format!("dG{delay}"))
}

#[derive(Serialize)]
struct MagnitudeRow {
    frequency_hz: f64,
    desired_db: f64,
    aided_db: f64,
    occluded_db: f64,
}

fn write_rows<S: Serialize>(path: &Path, rows: impl IntoIterator<Item = S>) -> Result<()> {
    let csv_err = |e: csv::Error| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for row in rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_magnitudes(path: &Path, m: &ResponseSet) -> Result<()> {
    let rows = (0..m.desired.len()).map(|k| MagnitudeRow {
        frequency_hz: m.desired.frequencies_hz[k],
        desired_db: m.desired.magnitude_db[k],
        aided_db: m.aided.magnitude_db[k],
        occluded_db: m.occluded.magnitude_db[k],
    });
    write_rows(path, rows)
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn store_run(out: &Path, cell: &Cell<'_>, run: &mut ConditionRun<f64>) -> Result<()> {
    let dir = run_dir(out, cell.condition, cell.delay);
    let csv_path = dir.join(format!("{}.csv", cell.subject));
    write_magnitudes(&csv_path, &run.magnitudes)?;
    run.report.responses = Some(
        csv_path
            .strip_prefix(out)
            .unwrap_or(&csv_path)
            .to_string_lossy()
            .replace('\\', "/"),
    );
    write_json(&dir.join(format!("{}.json", cell.subject)), &run.report)
}

fn summarize(spec: &ExperimentSpec, reports: &[ConditionReport]) -> Result<(Vec<SummaryRow>, Vec<RankingRow>)> {
    let mut summary = Vec::new();
    let mut ranking = Vec::new();
    for &delay in &spec.delays {
        let at_delay: Vec<ConditionReport> = reports.iter().filter(|r| r.device_delay == delay).cloned().collect();
        if at_delay.is_empty() {
            continue;
        }
        let ranked = rank_conditions(&at_delay)?;
        for (i, s) in ranked.iter().enumerate() {
            ranking.push(RankingRow {
                device_delay: delay,
                rank: i + 1,
                condition: s.condition.clone(),
                mean_lsd_db: s.mean_lsd_db,
                sd_lsd_db: s.sd_lsd_db,
            });
        }
        for c in &spec.conditions {
            if let Some(s) = ranked.iter().find(|s| s.condition == c.name()) {
                summary.push(SummaryRow {
                    condition: s.condition.clone(),
                    device_delay: delay,
                    mean_lsd_db: s.mean_lsd_db,
                    sd_lsd_db: s.sd_lsd_db,
                    n_subjects: s.n_subjects,
                });
            }
        }
    }
    // Put summary rows in condition-major order.
    summary.sort_by_key(|s| {
        let c = spec.conditions.iter().position(|c| c.name() == s.condition);
        let d = spec.delays.iter().position(|&d| d == s.device_delay);
        (c, d)
    });
    Ok((summary, ranking))
}

/// Runs the full grid and writes every output file under `out` (when given).
/// `workers = 0` uses the rayon default.
pub fn run_experiment(spec: &ExperimentSpec, out: Option<&Path>, workers: usize) -> Result<ExperimentReport> {
    spec.validate()?;
    let mut cohort = spec.cohort.load()?;
    if let Some(ex) = &spec.exclude_subject {
        cohort = cohort.without(ex)?;
    }
    let subjects: Vec<String> = cohort.subjects.iter().map(|e| e.subject_id.clone()).collect();
    let prepared = PreparedCohort::new(cohort, spec.design.acausal_lead, spec.rtf_ridge);

    let mut cells = Vec::with_capacity(spec.conditions.len() * spec.delays.len() * subjects.len());
    for &condition in &spec.conditions {
        for &delay in &spec.delays {
            for s in &subjects {
                cells.push(Cell {
                    subject: s,
                    condition,
                    delay,
                });
            }
        }
    }

    if let Some(out) = out {
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        if spec.write_responses {
            for &c in &spec.conditions {
                for &d in &spec.delays {
                    let dir = run_dir(out, c, d);
                    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                }
            }
        }
    }

    let work = |cell: &Cell<'_>| -> Result<ConditionReport> {
        let cfg = spec.design.with_delay(cell.delay);
        let mut run = prepared.run_condition(cell.subject, cell.condition, &cfg, &spec.eval)?;
        if let (Some(out), true) = (out, spec.write_responses) {
            store_run(out, cell, &mut run)?;
        }
        Ok(run.report)
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::invalid(format!("worker pool: {e}")))?;
    let results: Vec<Result<ConditionReport>> = pool.install(|| cells.par_iter().map(work).collect());

    let mut runs = Vec::with_capacity(cells.len());
    let mut reports = Vec::new();
    for (cell, result) in cells.iter().zip(results) {
        let (status, lsd_db, error) = match result {
            Ok(report) => {
                let lsd = report.lsd_db;
                reports.push(report);
                (RunStatus::Ok, Some(lsd), None)
            }
            Err(e) => {
                log::warn!("{} {} d_G={}: {e}", cell.subject, cell.condition, cell.delay);
                (RunStatus::Failed, None, Some(e.to_string()))
            }
        };
        runs.push(RunRecord {
            subject_id: cell.subject.to_string(),
            condition: cell.condition,
            device_delay: cell.delay,
            status,
            lsd_db,
            error,
        });
    }
    let (summary, ranking) = summarize(spec, &reports)?;
    let report = ExperimentReport {
        spec: spec.clone(),
        subjects: subjects.clone(),
        runs,
        reports,
        summary,
        ranking,
    };

    if let Some(out) = out {
        #[derive(Serialize)]
        struct RunRow<'a> {
            subject_id: &'a str,
            condition: &'a str,
            #[serde(rename = "d_G")]
            device_delay: usize,
            status: RunStatus,
            lsd_db: Option<f64>,
            error: Option<&'a str>,
        }
        write_rows(
            &out.join("runs.csv"),
            report.runs.iter().map(|r| RunRow {
                subject_id: &r.subject_id,
                condition: r.condition.name(),
                device_delay: r.device_delay,
                status: r.status,
                lsd_db: r.lsd_db,
                error: r.error.as_deref(),
            }),
        )?;
        write_rows(&out.join("summary.csv"), &report.summary)?;
        write_rows(&out.join("ranking.csv"), &report.ranking)?;
        write_json(&out.join("report.json"), &report)?;
    }
    Ok(report)
}
