//! Aided-ear simulation and the experiment conditions.
//!
//! The aided response of an ear is the device path plus the passive leak,
//! `h_m * g * a * d_true + h_occ`; the desired response is `h_open * g`.
//! Designs may use estimated receiver responses, but evaluation always runs
//! through the true one.
//!
//! Equalizer targets carry an acausal lead of `L_d` samples, so the designed
//! filter realizes the equalizer delayed by `L_d`. The device path is
//! advanced by the same amount before it is summed with the leak; samples
//! that would fall before time zero are dropped.

mod manifest;
mod synth;

pub use manifest::{load_manifest, write_cohort, CohortManifest, ManifestEntry};
pub use synth::{
    subject_id, synth_cohort, synth_dummy_head, DelayRange, Range, ResonanceRange, SynthCohortParams, DUMMY_HEAD_ID,
};

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::design::{build_target, design_filter_pooled, DesignTerm, EqDesignConfig, EqFilter};
use crate::error::{Error, Result};
use crate::estimators::{average_rtfs, default_rtf_length, individual_rtfs, EarMeasurement, RtfPair, RtfSettings};
use crate::metrics::{band_error_profile, log_spectral_distance, ConditionReport, EvalSettings};
use crate::scalar::Real;
use crate::signal::{add_aligned, convolve_all, magnitude_response, unit_delay, ImpulseResponse, MagnitudeResponse};

/// Measured and estimated responses of one ear.
#[derive(Debug, Clone, PartialEq)]
pub struct EarDataset<T> {
    pub subject_id: String,
    pub h_m: ImpulseResponse<T>,
    pub h_open: ImpulseResponse<T>,
    pub h_occ: ImpulseResponse<T>,
    pub d_true: ImpulseResponse<T>,
    pub d_inear: ImpulseResponse<T>,
    pub d_model: ImpulseResponse<T>,
}

impl<T: Real> EarDataset<T> {
    pub fn new(
        subject_id: String,
        h_m: ImpulseResponse<T>,
        h_open: ImpulseResponse<T>,
        h_occ: ImpulseResponse<T>,
        d_true: ImpulseResponse<T>,
        d_inear: ImpulseResponse<T>,
        d_model: ImpulseResponse<T>,
    ) -> Result<Self> {
        let ear = Self {
            subject_id,
            h_m,
            h_open,
            h_occ,
            d_true,
            d_inear,
            d_model,
        };
        for (name, h) in ear.responses() {
            ear.h_m.check_rate(h)?;
            if h.is_all_zero() {
                return Err(Error::invalid(format!(
                    "{}: response {name} is all zeros",
                    ear.subject_id
                )));
            }
        }
        Ok(ear)
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.h_m.sample_rate_hz()
    }

    /// `(name, response)` for all six responses, in manifest order.
    pub fn responses(&self) -> [(&'static str, &ImpulseResponse<T>); 6] {
        [
            ("h_m", &self.h_m),
            ("h_open", &self.h_open),
            ("h_occ", &self.h_occ),
            ("d_true", &self.d_true),
            ("d_inear", &self.d_inear),
            ("d_model", &self.d_model),
        ]
    }

    pub fn measurement(&self) -> EarMeasurement<'_, T> {
        EarMeasurement {
            h_m: &self.h_m,
            h_open: &self.h_open,
            h_occ: &self.h_occ,
        }
    }

    fn receiver(&self, source: DSource) -> &ImpulseResponse<T> {
        match source {
            DSource::True | DSource::DummyHead => &self.d_true,
            DSource::InEar => &self.d_inear,
            DSource::Model => &self.d_model,
        }
    }
}

/// Test subjects plus an optional non-individual reference ear.
#[derive(Debug, Clone)]
pub struct Cohort<T> {
    pub subjects: Vec<EarDataset<T>>,
    pub dummy_head: Option<EarDataset<T>>,
}

impl<T: Real> Cohort<T> {
    pub fn new(subjects: Vec<EarDataset<T>>, dummy_head: Option<EarDataset<T>>) -> Result<Self> {
        let first = subjects
            .first()
            .ok_or_else(|| Error::invalid("cohort has no subjects"))?;
        let rate = first.sample_rate_hz();
        for ear in subjects.iter().chain(dummy_head.as_ref()) {
            if ear.sample_rate_hz() != rate {
                return Err(Error::RateMismatch {
                    left: rate,
                    right: ear.sample_rate_hz(),
                });
            }
        }
        for (i, ear) in subjects.iter().enumerate() {
            if subjects[..i].iter().any(|e| e.subject_id == ear.subject_id) {
                return Err(Error::invalid(format!("duplicate subject id {}", ear.subject_id)));
            }
        }
        Ok(Self { subjects, dummy_head })
    }

    /// Synthetic cohort with a median-parameter dummy head.
    pub fn synthetic(params: &SynthCohortParams) -> Result<Self> {
        Self::new(synth_cohort(params)?, Some(synth_dummy_head(params)?))
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.subjects[0].sample_rate_hz()
    }

    pub fn index_of(&self, subject: &str) -> Result<usize> {
        self.subjects
            .iter()
            .position(|e| e.subject_id == subject)
            .ok_or_else(|| Error::invalid(format!("unknown subject {subject}")))
    }

    pub fn without(&self, subject: &str) -> Result<Self> {
        let idx = self.index_of(subject)?;
        let mut subjects = self.subjects.clone();
        subjects.remove(idx);
        Self::new(subjects, self.dummy_head.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Condition {
    Optimal,
    GenericDH,
    NaiveInEar,
    ModelBased,
    GenericAV,
    PracticalModelBased,
    PracticalOptimal,
}

/// Where the relative transfer function estimates come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RtfSource {
    /// The test subject's own measurements.
    Individual,
    /// Pooled over the cohort without the test subject.
    LeaveOneOut,
    /// The dummy head's measurements.
    DummyHead,
}

/// Which receiver-to-eardrum response the design uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DSource {
    True,
    InEar,
    Model,
    DummyHead,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionSpec {
    pub name: Condition,
    pub rtf_source: RtfSource,
    pub d_source: DSource,
    /// One filter fitted to all leave-one-out members at once.
    pub pooled_design: bool,
}

impl ConditionSpec {
    pub fn uses_individual_rtf(&self) -> bool {
        self.rtf_source == RtfSource::Individual
    }

    pub fn needs_leave_one_out(&self) -> bool {
        self.rtf_source == RtfSource::LeaveOneOut || self.pooled_design
    }
}

impl Condition {
    pub const ALL: [Condition; 7] = [
        Condition::Optimal,
        Condition::GenericDH,
        Condition::NaiveInEar,
        Condition::ModelBased,
        Condition::GenericAV,
        Condition::PracticalModelBased,
        Condition::PracticalOptimal,
    ];

    pub fn spec(self) -> ConditionSpec {
        use Condition::*;
        let (rtf_source, d_source, pooled_design) = match self {
            Optimal => (RtfSource::Individual, DSource::True, false),
            GenericDH => (RtfSource::DummyHead, DSource::DummyHead, false),
            NaiveInEar => (RtfSource::Individual, DSource::InEar, false),
            ModelBased => (RtfSource::Individual, DSource::Model, false),
            GenericAV => (RtfSource::LeaveOneOut, DSource::True, true),
            PracticalModelBased => (RtfSource::LeaveOneOut, DSource::Model, false),
            PracticalOptimal => (RtfSource::LeaveOneOut, DSource::True, false),
        };
        ConditionSpec {
            name: self,
            rtf_source,
            d_source,
            pooled_design,
        }
    }

    pub fn name(self) -> &'static str {
        use Condition::*;
        match self {
            Optimal => "Optimal",
            GenericDH => "GenericDH",
            NaiveInEar => "NaiveInEar",
            ModelBased => "ModelBased",
            GenericAV => "GenericAV",
            PracticalModelBased => "PracticalModelBased",
            PracticalOptimal => "PracticalOptimal",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Condition::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::invalid(format!("unknown condition `{s}`")))
    }
}

/// Device path advanced by the acausal lead, plus the occluded leak.
pub fn aided_response<T: Real>(
    ear: &EarDataset<T>,
    g: &ImpulseResponse<T>,
    a: &EqFilter<T>,
) -> Result<ImpulseResponse<T>> {
    let filter = a.as_impulse_response(ear.sample_rate_hz())?;
    let device = convolve_all(&[&ear.h_m, g, &filter, &ear.d_true])?;
    let lead = a.config.acausal_lead;
    let device = device.samples().get(lead..).unwrap_or(&[]);
    ImpulseResponse::new(add_aligned(device, ear.h_occ.samples()), ear.sample_rate_hz())
}

pub fn desired_response<T: Real>(ear: &EarDataset<T>, g: &ImpulseResponse<T>) -> Result<ImpulseResponse<T>> {
    crate::signal::convolve(&ear.h_open, g)
}

/// Device processing `q^{-d}` as an impulse response.
pub fn device_gain<T: Real>(delay: usize, sample_rate_hz: u32) -> Result<ImpulseResponse<T>> {
    unit_delay(delay, delay + 1, sample_rate_hz)
}

type Cached<T> = OnceLock<std::result::Result<RtfPair<T>, String>>;

/// A cohort with lazily cached relative transfer estimates for a fixed
/// lead and ridge. Safe to share between worker threads.
pub struct PreparedCohort<T: Real> {
    cohort: Cohort<T>,
    settings: RtfSettings<T>,
    individual: Vec<Cached<T>>,
    leave_one_out: Vec<Cached<T>>,
    dummy: Cached<T>,
}

impl<T: Real> PreparedCohort<T> {
    pub fn new(cohort: Cohort<T>, lead: usize, ridge: T) -> Self {
        let target_len = cohort
            .subjects
            .iter()
            .chain(cohort.dummy_head.as_ref())
            .map(|e| e.h_open.len().max(e.h_occ.len()))
            .max()
            .unwrap_or(1);
        let n = cohort.subjects.len();
        Self {
            settings: RtfSettings {
                length: default_rtf_length(lead, target_len),
                lead,
                ridge,
            },
            individual: (0..n).map(|_| OnceLock::new()).collect(),
            leave_one_out: (0..n).map(|_| OnceLock::new()).collect(),
            dummy: OnceLock::new(),
            cohort,
        }
    }

    pub fn cohort(&self) -> &Cohort<T> {
        &self.cohort
    }

    pub fn settings(&self) -> &RtfSettings<T> {
        &self.settings
    }

    fn cached<'a>(
        &self,
        slot: &'a Cached<T>,
        who: &str,
        f: impl FnOnce() -> Result<RtfPair<T>>,
    ) -> Result<&'a RtfPair<T>> {
        slot.get_or_init(|| f().map_err(|e| e.to_string()))
            .as_ref()
            .map_err(|msg| Error::invalid(format!("relative transfer estimate for {who} failed: {msg}")))
    }

    pub fn individual(&self, idx: usize) -> Result<&RtfPair<T>> {
        let ear = &self.cohort.subjects[idx];
        self.cached(&self.individual[idx], &ear.subject_id, || {
            individual_rtfs(&ear.measurement(), &self.settings)
        })
    }

    /// Pooled estimate over every subject except `idx`.
    pub fn leave_one_out(&self, idx: usize) -> Result<&RtfPair<T>> {
        let ear = &self.cohort.subjects[idx];
        self.cached(&self.leave_one_out[idx], &ear.subject_id, || {
            let others: Vec<_> = self.others(idx).map(|e| e.measurement()).collect();
            if others.is_empty() {
                return Err(Error::invalid("leave-one-out needs at least two subjects"));
            }
            average_rtfs(&others, &self.settings)
        })
    }

    pub fn dummy(&self) -> Result<(&EarDataset<T>, &RtfPair<T>)> {
        let ear = self
            .cohort
            .dummy_head
            .as_ref()
            .ok_or_else(|| Error::invalid("GenericDH requires a dummy-head ear in the cohort"))?;
        let rtf = self.cached(&self.dummy, &ear.subject_id, || {
            individual_rtfs(&ear.measurement(), &self.settings)
        })?;
        Ok((ear, rtf))
    }

    fn others(&self, idx: usize) -> impl Iterator<Item = &EarDataset<T>> {
        self.cohort
            .subjects
            .iter()
            .enumerate()
            .filter(move |(i, _)| *i != idx)
            .map(|(_, e)| e)
    }

    /// The `(d_hat, target)` members whose summed cost the condition's
    /// equalizer minimizes. Leave-one-out pools exclude `exclude` (normally
    /// the subject itself).
    pub fn design_problem(
        &self,
        subject: &str,
        exclude: &str,
        condition: Condition,
        cfg: &EqDesignConfig,
    ) -> Result<Vec<(ImpulseResponse<T>, Vec<T>)>> {
        cfg.validate()?;
        if cfg.acausal_lead != self.settings.lead {
            return Err(Error::invalid(format!(
                "design lead {} differs from the prepared estimate lead {}",
                cfg.acausal_lead, self.settings.lead
            )));
        }
        let idx = self.cohort.index_of(subject)?;
        let ear = &self.cohort.subjects[idx];
        let spec = condition.spec();
        let g = device_gain::<T>(cfg.device_delay, self.cohort.sample_rate_hz())?;
        let pool_idx = || -> Result<usize> {
            let ex = self.cohort.index_of(exclude)?;
            if self.cohort.subjects.len() < 2 {
                return Err(Error::invalid("leave-one-out needs at least two subjects"));
            }
            Ok(ex)
        };

        if spec.pooled_design {
            let ex = pool_idx()?;
            let mut members = Vec::new();
            for (i, member) in self.cohort.subjects.iter().enumerate() {
                if i == ex {
                    continue;
                }
                let rtf = self.individual(i)?;
                let target = build_target(&rtf.open, &rtf.occluded, &g)?;
                members.push((member.receiver(spec.d_source).clone(), target));
            }
            return Ok(members);
        }

        let (rtf, d_hat) = match spec.rtf_source {
            RtfSource::Individual => (self.individual(idx)?, ear.receiver(spec.d_source)),
            RtfSource::LeaveOneOut => (self.leave_one_out(pool_idx()?)?, ear.receiver(spec.d_source)),
            RtfSource::DummyHead => {
                let (dummy, rtf) = self.dummy()?;
                (rtf, &dummy.d_true)
            }
        };
        Ok(vec![(d_hat.clone(), build_target(&rtf.open, &rtf.occluded, &g)?)])
    }

    /// Designs the equalizer for `subject` under `condition`.
    pub fn design(
        &self,
        subject: &str,
        exclude: &str,
        condition: Condition,
        cfg: &EqDesignConfig,
    ) -> Result<EqFilter<T>> {
        let members = self.design_problem(subject, exclude, condition, cfg)?;
        let terms: Vec<_> = members
            .iter()
            .map(|(d_hat, target)| DesignTerm { d_hat, target })
            .collect();
        design_filter_pooled(&terms, cfg)
    }

    /// Designs per the condition and evaluates it on the subject's true
    /// acoustics.
    pub fn run_condition(
        &self,
        subject: &str,
        condition: Condition,
        cfg: &EqDesignConfig,
        eval: &EvalSettings,
    ) -> Result<ConditionRun<T>> {
        let filter = self.design(subject, subject, condition, cfg)?;
        let ear = &self.cohort.subjects[self.cohort.index_of(subject)?];
        evaluate_filter(ear, condition.name(), filter, eval)
    }
}

/// Magnitude responses of one evaluated run.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseSet {
    pub desired: MagnitudeResponse,
    pub aided: MagnitudeResponse,
    pub occluded: MagnitudeResponse,
}

#[derive(Debug, Clone)]
pub struct ConditionRun<T> {
    pub report: ConditionReport,
    pub filter: EqFilter<T>,
    pub aided: ImpulseResponse<T>,
    pub desired: ImpulseResponse<T>,
    pub magnitudes: ResponseSet,
}

/// Scores an existing filter on one ear.
pub fn evaluate_filter<T: Real>(
    ear: &EarDataset<T>,
    condition: &str,
    filter: EqFilter<T>,
    eval: &EvalSettings,
) -> Result<ConditionRun<T>> {
    let g = device_gain::<T>(filter.config.device_delay, ear.sample_rate_hz())?;
    let aided = aided_response(ear, &g, &filter)?;
    let desired = desired_response(ear, &g)?;
    let magnitudes = ResponseSet {
        desired: magnitude_response(&desired, eval.n_fft)?,
        aided: magnitude_response(&aided, eval.n_fft)?,
        occluded: magnitude_response(&ear.h_occ, eval.n_fft)?,
    };
    let lsd_db = log_spectral_distance(&magnitudes.aided, &magnitudes.desired, eval.band_hz)?;
    let band_errors = band_error_profile(&magnitudes.aided, &magnitudes.desired)?;
    Ok(ConditionRun {
        report: ConditionReport {
            subject_id: ear.subject_id.clone(),
            condition: condition.to_string(),
            device_delay: filter.config.device_delay,
            lsd_db,
            band_errors,
            responses: None,
        },
        filter,
        aided,
        desired,
        magnitudes,
    })
}

/// One-shot convenience wrapper; prefer [`PreparedCohort`] for grids.
pub fn run_condition<T: Real>(
    cohort: &Cohort<T>,
    subject: &str,
    condition: Condition,
    cfg: &EqDesignConfig,
    eval: &EvalSettings,
) -> Result<ConditionRun<T>> {
    PreparedCohort::new(cohort.clone(), cfg.acausal_lead, T::zero()).run_condition(subject, condition, cfg, eval)
}
