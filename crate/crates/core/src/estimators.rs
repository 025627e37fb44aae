//! Relative transfer function estimation by least-squares deconvolution.
//!
//! A relative transfer function relates an eardrum path (open or occluded)
//! to the source-to-microphone path. Estimates are FIR vectors `r` that
//! minimize `||H_m r - h~||`, where `h~` is the eardrum impulse response
//! delayed by an acausal lead. The pooled estimator solves the summed
//! normal equations of several measurements at once.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{solve_normal, OnSingular};
use crate::scalar::Real;
use crate::signal::{zero_pad_leading, ConvolutionMatrix, ImpulseResponse};

/// Upper bound on the default estimate length.
pub const MAX_DEFAULT_RTF_LENGTH: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimateKind {
    Individual,
    Average,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransferRole {
    Occluded,
    Open,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelativeTransferEstimate<T> {
    pub coefficients: Vec<T>,
    pub acausal_lead: usize,
    pub kind: EstimateKind,
    pub role: TransferRole,
    pub sample_rate_hz: u32,
}

impl<T: Real> RelativeTransferEstimate<T> {
    pub fn len(&self) -> usize {
        self.coefficients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coefficients.is_empty()
    }
}

/// Source-to-microphone response paired with one source-to-eardrum response.
#[derive(Debug, Clone)]
pub struct MeasurementPair<T> {
    pub h_m: ImpulseResponse<T>,
    pub h_target: ImpulseResponse<T>,
    pub subject_id: String,
}

impl<T: Real> MeasurementPair<T> {
    pub fn new(h_m: ImpulseResponse<T>, h_target: ImpulseResponse<T>, subject_id: impl Into<String>) -> Result<Self> {
        h_m.check_rate(&h_target)?;
        Ok(Self {
            h_m,
            h_target,
            subject_id: subject_id.into(),
        })
    }
}

/// One ear's microphone, open-ear and occluded-ear responses.
#[derive(Debug, Clone, Copy)]
pub struct EarMeasurement<'a, T> {
    pub h_m: &'a ImpulseResponse<T>,
    pub h_open: &'a ImpulseResponse<T>,
    pub h_occ: &'a ImpulseResponse<T>,
}

/// Open and occluded estimates computed from one factorization.
#[derive(Debug, Clone, PartialEq)]
pub struct RtfPair<T> {
    pub open: RelativeTransferEstimate<T>,
    pub occluded: RelativeTransferEstimate<T>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RtfSettings<T> {
    pub length: usize,
    pub lead: usize,
    pub ridge: T,
}

/// `L_d + target_len`, capped at [`MAX_DEFAULT_RTF_LENGTH`].
pub fn default_rtf_length(lead: usize, target_len: usize) -> usize {
    (lead + target_len).clamp(1, MAX_DEFAULT_RTF_LENGTH)
}

fn check_ridge<T: Real>(ridge: T) -> Result<()> {
    if !(ridge >= T::zero()) {
        return Err(Error::invalid("ridge must be non-negative"));
    }
    Ok(())
}

/// Accumulates `sum H^T H` and `sum H^T t` over several convolution systems.
struct PooledSystem<T: Real> {
    gram: DMatrix<T>,
    rhs: Vec<DVector<T>>,
}

impl<T: Real> PooledSystem<T> {
    fn new(n: usize, n_rhs: usize) -> Self {
        Self {
            gram: DMatrix::zeros(n, n),
            rhs: vec![DVector::zeros(n); n_rhs],
        }
    }

    fn add(&mut self, h: &[T], targets: &[&[T]]) -> Result<()> {
        let m = ConvolutionMatrix::new(h.to_vec(), self.gram.nrows())?;
        self.gram += m.gram();
        for (acc, t) in self.rhs.iter_mut().zip(targets) {
            *acc += DVector::from_vec(m.transpose_apply(t));
        }
        Ok(())
    }

    fn solve(mut self, ridge: T, context: &str) -> Result<Vec<Vec<T>>> {
        if ridge > T::zero() {
            for i in 0..self.gram.nrows() {
                self.gram[(i, i)] += ridge;
            }
        }
        let sol = solve_normal(self.gram, &self.rhs, OnSingular::MinimumNorm, context)?;
        Ok(sol.solutions.into_iter().map(|v| v.as_slice().to_vec()).collect())
    }
}

/// Minimizes `||H x - target||^2 + ridge ||x||^2` over `x` of the given
/// length, where `H` is the full convolution matrix of `h_den`. With zero
/// ridge and a rank-deficient system the minimum-norm minimizer is returned.
pub fn ls_deconvolve<T: Real>(h_den: &ImpulseResponse<T>, target: &[T], length: usize, ridge: T) -> Result<Vec<T>> {
    if length == 0 {
        return Err(Error::invalid("deconvolution length must be at least 1"));
    }
    check_ridge(ridge)?;
    let mut sys = PooledSystem::new(length, 1);
    sys.add(h_den.samples(), &[target])?;
    Ok(sys.solve(ridge, "least-squares deconvolution")?.remove(0))
}

fn padded<T: Real>(h: &ImpulseResponse<T>, lead: usize) -> Vec<T> {
    zero_pad_leading(h, lead).into_samples()
}

fn make_estimate<T: Real>(
    coefficients: Vec<T>,
    lead: usize,
    kind: EstimateKind,
    role: TransferRole,
    sample_rate_hz: u32,
) -> Result<RelativeTransferEstimate<T>> {
    if coefficients.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("relative transfer estimate".into()));
    }
    Ok(RelativeTransferEstimate {
        coefficients,
        acausal_lead: lead,
        kind,
        role,
        sample_rate_hz,
    })
}

fn check_denominator<T: Real>(h_m: &ImpulseResponse<T>, who: &str) -> Result<()> {
    if h_m.is_all_zero() {
        return Err(Error::Singular {
            context: format!("relative transfer estimate for {who}: all-zero microphone response"),
            condition: f64::INFINITY,
        });
    }
    Ok(())
}

/// Individual estimate: pseudo-inverse of the microphone convolution matrix
/// applied to the lead-padded eardrum response.
pub fn estimate_individual<T: Real>(
    pair: &MeasurementPair<T>,
    role: TransferRole,
    length: usize,
    lead: usize,
) -> Result<RelativeTransferEstimate<T>> {
    if length == 0 {
        return Err(Error::invalid("estimate length must be at least 1"));
    }
    check_denominator(&pair.h_m, &pair.subject_id)?;
    let target = padded(&pair.h_target, lead);
    let r = ls_deconvolve(&pair.h_m, &target, length, T::zero())?;
    make_estimate(r, lead, EstimateKind::Individual, role, pair.h_m.sample_rate_hz())
}

/// Pooled estimate over several measurements (uniform weighting).
pub fn estimate_average<T: Real>(
    pairs: &[MeasurementPair<T>],
    role: TransferRole,
    length: usize,
    lead: usize,
) -> Result<RelativeTransferEstimate<T>> {
    let first = pairs
        .first()
        .ok_or_else(|| Error::invalid("average estimate needs at least one measurement"))?;
    if length == 0 {
        return Err(Error::invalid("estimate length must be at least 1"));
    }
    let mut sys = PooledSystem::new(length, 1);
    for pair in pairs {
        first.h_m.check_rate(&pair.h_m)?;
        pair.h_m.check_rate(&pair.h_target)?;
        let target = padded(&pair.h_target, lead);
        sys.add(pair.h_m.samples(), &[&target])?;
    }
    let r = sys.solve(T::zero(), "pooled relative transfer estimate")?.remove(0);
    make_estimate(r, lead, EstimateKind::Average, role, first.h_m.sample_rate_hz())
}

fn rtf_pair<T: Real>(sols: Vec<Vec<T>>, lead: usize, kind: EstimateKind, rate: u32) -> Result<RtfPair<T>> {
    let mut it = sols.into_iter();
    let open = it.next().expect("two right-hand sides");
    let occluded = it.next().expect("two right-hand sides");
    Ok(RtfPair {
        open: make_estimate(open, lead, kind, TransferRole::Open, rate)?,
        occluded: make_estimate(occluded, lead, kind, TransferRole::Occluded, rate)?,
    })
}

fn check_ear<T: Real>(ear: &EarMeasurement<'_, T>) -> Result<()> {
    ear.h_m.check_rate(ear.h_open)?;
    ear.h_m.check_rate(ear.h_occ)
}

/// Individual open and occluded estimates sharing one factorization.
pub fn individual_rtfs<T: Real>(ear: &EarMeasurement<'_, T>, settings: &RtfSettings<T>) -> Result<RtfPair<T>> {
    check_ear(ear)?;
    check_ridge(settings.ridge)?;
    if settings.length == 0 {
        return Err(Error::invalid("estimate length must be at least 1"));
    }
    check_denominator(ear.h_m, "ear")?;
    let open = padded(ear.h_open, settings.lead);
    let occ = padded(ear.h_occ, settings.lead);
    let mut sys = PooledSystem::new(settings.length, 2);
    sys.add(ear.h_m.samples(), &[&open, &occ])?;
    let sols = sys.solve(settings.ridge, "individual relative transfer estimate")?;
    rtf_pair(sols, settings.lead, EstimateKind::Individual, ear.h_m.sample_rate_hz())
}

/// Pooled open and occluded estimates over a set of ears, summed in order.
pub fn average_rtfs<T: Real>(ears: &[EarMeasurement<'_, T>], settings: &RtfSettings<T>) -> Result<RtfPair<T>> {
    let first = ears
        .first()
        .ok_or_else(|| Error::invalid("average estimate needs at least one ear"))?;
    check_ridge(settings.ridge)?;
    if settings.length == 0 {
        return Err(Error::invalid("estimate length must be at least 1"));
    }
    let mut sys = PooledSystem::new(settings.length, 2);
    for ear in ears {
        check_ear(ear)?;
        first.h_m.check_rate(ear.h_m)?;
        let open = padded(ear.h_open, settings.lead);
        let occ = padded(ear.h_occ, settings.lead);
        sys.add(ear.h_m.samples(), &[&open, &occ])?;
    }
    let sols = sys.solve(settings.ridge, "pooled relative transfer estimate")?;
    rtf_pair(sols, settings.lead, EstimateKind::Average, first.h_m.sample_rate_hz())
}
