//! Cohort manifests: a JSON index of per-ear response files.
//!
//! ```json
//! {
//!   "sample_rate_hz": 16000,
//!   "subjects": [
//!     { "subject_id": "S01", "h_m": "S01/h_m.csv", "h_open": "S01/h_open.csv",
//!       "h_occ": "S01/h_occ.csv", "d_true": "S01/d_true.csv", ... }
//!   ],
//!   "dummy_head": { "subject_id": "DH", ... }
//! }
//! ```
//!
//! Relative paths resolve against the manifest's directory. Files may be
//! CSV or WAV. When `d_inear` or `d_model` is missing the ear falls back to
//! `d_true` for that role.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::signal::{load_impulse_response, write_csv, ImpulseResponse};

use super::{Cohort, EarDataset};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub subject_id: String,
    pub h_m: PathBuf,
    pub h_open: PathBuf,
    pub h_occ: PathBuf,
    pub d_true: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_inear: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_model: Option<PathBuf>,
    /// Roles whose samples equal `d_true` exactly.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub identical_to_d_true: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortManifest {
    pub sample_rate_hz: u32,
    pub subjects: Vec<ManifestEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dummy_head: Option<ManifestEntry>,
}

impl CohortManifest {
    pub fn subject_ids(&self) -> Vec<&str> {
        self.subjects.iter().map(|s| s.subject_id.as_str()).collect()
    }
}

fn read_manifest(path: &Path) -> Result<CohortManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn load_entry<T: Real>(entry: &ManifestEntry, base: &Path, rate: u32) -> Result<EarDataset<T>> {
    let load = |p: &Path| load_impulse_response::<T>(&base.join(p), rate);
    let d_true_path = entry
        .d_true
        .as_ref()
        .ok_or_else(|| Error::invalid(format!("{}: simulation needs a d_true response", entry.subject_id)))?;
    let d_true = load(d_true_path)?;
    let optional = |p: &Option<PathBuf>| -> Result<ImpulseResponse<T>> {
        match p {
            Some(p) => load(p),
            None => Ok(d_true.clone()),
        }
    };
    let d_inear = optional(&entry.d_inear)?;
    let d_model = optional(&entry.d_model)?;
    EarDataset::new(
        entry.subject_id.clone(),
        load(&entry.h_m)?,
        load(&entry.h_open)?,
        load(&entry.h_occ)?,
        d_true,
        d_inear,
        d_model,
    )
}

/// Loads every ear listed in the manifest.
pub fn load_manifest<T: Real>(path: &Path) -> Result<(CohortManifest, Cohort<T>)> {
    let manifest = read_manifest(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let rate = manifest.sample_rate_hz;
    let subjects = manifest
        .subjects
        .iter()
        .map(|e| load_entry(e, base, rate))
        .collect::<Result<Vec<_>>>()?;
    let dummy_head = manifest
        .dummy_head
        .as_ref()
        .map(|e| load_entry(e, base, rate))
        .transpose()?;
    let cohort = Cohort::new(subjects, dummy_head)?;
    Ok((manifest, cohort))
}

fn write_ear<T: Real>(ear: &EarDataset<T>, dir: &Path) -> Result<ManifestEntry> {
    let sub = dir.join(&ear.subject_id);
    fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
    let mut rel = Vec::with_capacity(6);
    for (name, h) in ear.responses() {
        let file = PathBuf::from(&ear.subject_id).join(format!("{name}.csv"));
        write_csv(&dir.join(&file), h)?;
        rel.push(file);
    }
    let mut identical = Vec::new();
    if ear.d_inear == ear.d_true {
        identical.push("d_inear".to_string());
    }
    if ear.d_model == ear.d_true {
        identical.push("d_model".to_string());
    }
    let mut rel = rel.into_iter();
    let mut next = || rel.next().expect("six responses");
    Ok(ManifestEntry {
        subject_id: ear.subject_id.clone(),
        h_m: next(),
        h_open: next(),
        h_occ: next(),
        d_true: Some(next()),
        d_inear: Some(next()),
        d_model: Some(next()),
        identical_to_d_true: identical,
    })
}

/// Writes `<dir>/<subject>/<role>.csv` for every ear plus
/// `<dir>/manifest.json`, and returns the manifest path.
pub fn write_cohort<T: Real>(cohort: &Cohort<T>, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = CohortManifest {
        sample_rate_hz: cohort.sample_rate_hz(),
        subjects: cohort
            .subjects
            .iter()
            .map(|e| write_ear(e, dir))
            .collect::<Result<_>>()?,
        dummy_head: cohort.dummy_head.as_ref().map(|e| write_ear(e, dir)).transpose()?,
    };
    let path = dir.join("manifest.json");
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulation::SynthCohortParams;

    fn params() -> SynthCohortParams {
        SynthCohortParams {
            n_subjects: 3,
            ir_length: 48,
            model_error_db: 0.0,
            ..Default::default()
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let cohort = Cohort::<f64>::synthetic(&params()).unwrap();
        let path = write_cohort(&cohort, dir.path()).unwrap();
        let (manifest, back) = load_manifest::<f64>(&path).unwrap();
        assert_eq!(manifest.subject_ids(), ["S01", "S02", "S03"]);
        assert_eq!(back.subjects, cohort.subjects);
        assert_eq!(back.dummy_head, cohort.dummy_head);
        assert!(manifest.subjects.iter().all(|e| e.identical_to_d_true == ["d_model"]));
    }

    #[test]
    fn missing_estimates_fall_back_to_truth() {
        let dir = tempfile::tempdir().unwrap();
        let cohort = Cohort::<f64>::synthetic(&params()).unwrap();
        let path = write_cohort(&cohort, dir.path()).unwrap();
        let mut manifest = read_manifest(&path).unwrap();
        for e in &mut manifest.subjects {
            e.d_inear = None;
            e.d_model = None;
        }
        manifest.dummy_head = None;
        fs::write(&path, serde_json::to_string(&manifest).unwrap()).unwrap();
        let (_, back) = load_manifest::<f64>(&path).unwrap();
        for (a, b) in back.subjects.iter().zip(&cohort.subjects) {
            assert_eq!(a.d_true, b.d_true);
            assert_eq!(a.d_inear, b.d_true);
            assert_eq!(a.d_model, b.d_true);
        }
        assert!(back.dummy_head.is_none());
    }

    #[test]
    fn missing_file_names_path() {
        let dir = tempfile::tempdir().unwrap();
        let cohort = Cohort::<f64>::synthetic(&params()).unwrap();
        let path = write_cohort(&cohort, dir.path()).unwrap();
        fs::remove_file(dir.path().join("S02/h_occ.csv")).unwrap();
        let err = load_manifest::<f64>(&path).unwrap_err().to_string();
        assert!(err.contains("h_occ.csv"), "{err}");
    }
}
