//! Regularized least-squares equalizer design.
//!
//! The equalizer `a` minimizes
//!
//! ```text
//! J(a) = ||D a - t||^2 + lambda ||W a||^2,     t = r_open - G^+ r_occ
//! ```
//!
//! where `D` and `W` are full-shape convolution matrices of the receiver
//! response estimate and the weighting taps. The minimizer solves
//! `(D^T D + lambda W^T W) a = D^T t`. Rows of `D` cover the longer of the
//! full convolution and the target; the shorter sequence is zero-extended.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{ls_deconvolve, RelativeTransferEstimate};
use crate::linalg::{solve_normal, OnSingular};
use crate::scalar::Real;
use crate::signal::{ConvolutionMatrix, ImpulseResponse};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum WeightingSpec {
    Identity,
    Fir { fir_taps: Vec<f64> },
}

impl Default for WeightingSpec {
    fn default() -> Self {
        WeightingSpec::Identity
    }
}

impl WeightingSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            WeightingSpec::Identity => Ok(()),
            WeightingSpec::Fir { fir_taps } if fir_taps.is_empty() => {
                Err(Error::invalid("fir weighting needs at least one tap"))
            }
            WeightingSpec::Fir { fir_taps } if fir_taps.iter().any(|t| !t.is_finite()) => {
                Err(Error::NonFinite("weighting taps".into()))
            }
            WeightingSpec::Fir { .. } => Ok(()),
        }
    }
}

/// Design parameters. Defaults are `L_a = 99`, `lambda = 0.1`, `L_d = 32`,
/// `d_G = 0` and identity weighting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EqDesignConfig {
    #[serde(rename = "L_a")]
    pub filter_length: usize,
    pub lambda: f64,
    #[serde(rename = "L_d")]
    pub acausal_lead: usize,
    #[serde(rename = "d_G")]
    pub device_delay: usize,
    pub weighting: WeightingSpec,
}

impl Default for EqDesignConfig {
    fn default() -> Self {
        Self {
            filter_length: 99,
            lambda: 0.1,
            acausal_lead: 32,
            device_delay: 0,
            weighting: WeightingSpec::Identity,
        }
    }
}

impl EqDesignConfig {
    pub fn validate(&self) -> Result<()> {
        if self.filter_length == 0 {
            return Err(Error::invalid("filter length L_a must be at least 1"));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::invalid("lambda must be a finite non-negative number"));
        }
        self.weighting.validate()
    }

    pub fn with_delay(&self, device_delay: usize) -> Self {
        Self {
            device_delay,
            ..self.clone()
        }
    }
}

/// Designed equalizer with audit norms.
#[derive(Debug, Clone, PartialEq)]
pub struct EqFilter<T> {
    pub coefficients: Vec<T>,
    pub config: EqDesignConfig,
    /// `||D a - t||_2` (summed in quadrature over members for pooled designs).
    pub residual_norm: f64,
    /// `||W a||_2`.
    pub penalty_norm: f64,
}

/// JSON form of an [`EqFilter`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EqFilterRecord {
    pub config: EqDesignConfig,
    pub coefficients: Vec<f64>,
    pub residual_norm: f64,
    pub penalty_norm: f64,
}

impl<T: Real> EqFilter<T> {
    pub fn to_record(&self) -> EqFilterRecord {
        EqFilterRecord {
            config: self.config.clone(),
            coefficients: self.coefficients.iter().map(|c| c.as_f64()).collect(),
            residual_norm: self.residual_norm,
            penalty_norm: self.penalty_norm,
        }
    }

    pub fn from_record(rec: &EqFilterRecord) -> Result<Self> {
        rec.config.validate()?;
        if rec.coefficients.len() != rec.config.filter_length {
            return Err(Error::invalid(format!(
                "filter has {} coefficients but L_a = {}",
                rec.coefficients.len(),
                rec.config.filter_length
            )));
        }
        if rec.coefficients.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("filter coefficients".into()));
        }
        Ok(Self {
            coefficients: rec.coefficients.iter().map(|&c| T::of(c)).collect(),
            config: rec.config.clone(),
            residual_norm: rec.residual_norm,
            penalty_norm: rec.penalty_norm,
        })
    }

    /// An all-zero filter (muted device).
    pub fn zeros(config: EqDesignConfig) -> Self {
        Self {
            coefficients: vec![T::zero(); config.filter_length],
            config,
            residual_norm: f64::NAN,
            penalty_norm: 0.0,
        }
    }

    pub fn as_impulse_response(&self, sample_rate_hz: u32) -> Result<ImpulseResponse<T>> {
        ImpulseResponse::new(self.coefficients.clone(), sample_rate_hz)
    }
}

pub fn weighting_matrix<T: Real>(spec: &WeightingSpec, n_cols: usize) -> Result<ConvolutionMatrix<T>> {
    spec.validate()?;
    match spec {
        WeightingSpec::Identity => ConvolutionMatrix::identity(n_cols),
        WeightingSpec::Fir { fir_taps } => ConvolutionMatrix::new(fir_taps.iter().map(|&t| T::of(t)).collect(), n_cols),
    }
}

/// `t = r_open - G^+ r_occ`, with `G^+` applied by least-squares
/// deconvolution against the device processing `g`.
pub fn build_target<T: Real>(
    r_open: &RelativeTransferEstimate<T>,
    r_occ: &RelativeTransferEstimate<T>,
    g: &ImpulseResponse<T>,
) -> Result<Vec<T>> {
    if r_open.acausal_lead != r_occ.acausal_lead {
        return Err(Error::invalid(format!(
            "estimates use different acausal leads ({} vs {})",
            r_open.acausal_lead, r_occ.acausal_lead
        )));
    }
    for r in [r_open, r_occ] {
        if r.sample_rate_hz != g.sample_rate_hz() {
            return Err(Error::RateMismatch {
                left: r.sample_rate_hz,
                right: g.sample_rate_hz(),
            });
        }
    }
    let occ_through_g = if r_occ.coefficients.iter().all(|c| *c == T::zero()) {
        vec![T::zero(); r_occ.len()]
    } else if let Some((d, gain)) = pure_delay(g) {
        // q^{-d} inverts exactly to an advance: drop d leading samples.
        (0..r_occ.len())
            .map(|i| r_occ.coefficients.get(i + d).map_or_else(T::zero, |&c| c / gain))
            .collect()
    } else {
        ls_deconvolve(g, &r_occ.coefficients, r_occ.len(), T::zero())?
    };
    let n = r_open.len().max(occ_through_g.len());
    Ok((0..n)
        .map(|i| {
            let o = r_open.coefficients.get(i).copied().unwrap_or_else(T::zero);
            let c = occ_through_g.get(i).copied().unwrap_or_else(T::zero);
            o - c
        })
        .collect())
}

/// `(d, c)` when `g = c q^{-d}`.
fn pure_delay<T: Real>(g: &ImpulseResponse<T>) -> Option<(usize, T)> {
    let mut nz = g.samples().iter().enumerate().filter(|(_, v)| **v != T::zero());
    let (d, &c) = nz.next()?;
    nz.next().is_none().then_some((d, c))
}

fn l2<T: Real>(v: &[T]) -> f64 {
    v.iter().map(|x| x.as_f64().powi(2)).sum::<f64>().sqrt()
}

fn residual_vec<T: Real>(d: &ConvolutionMatrix<T>, a: &[T], target: &[T]) -> Result<Vec<T>> {
    let fit = d.apply(a)?;
    let n = fit.len().max(target.len());
    Ok((0..n)
        .map(|i| fit.get(i).copied().unwrap_or_else(T::zero) - target.get(i).copied().unwrap_or_else(T::zero))
        .collect())
}

/// One `(D_i, t_i)` member of a design problem.
#[derive(Debug, Clone, Copy)]
pub struct DesignTerm<'a, T> {
    pub d_hat: &'a ImpulseResponse<T>,
    pub target: &'a [T],
}

/// Minimizes the sum of per-member costs with a shared filter:
/// `sum_i ||D_i a - t_i||^2 + n lambda ||W a||^2`.
pub fn design_filter_pooled<T: Real>(terms: &[DesignTerm<'_, T>], config: &EqDesignConfig) -> Result<EqFilter<T>> {
    config.validate()?;
    if terms.is_empty() {
        return Err(Error::invalid("pooled design needs at least one member"));
    }
    let la = config.filter_length;
    let w = weighting_matrix::<T>(&config.weighting, la)?;
    let lambda = T::of(config.lambda * terms.len() as f64);

    let mut normal = w.gram() * lambda;
    let mut rhs = DVector::zeros(la);
    let mut mats = Vec::with_capacity(terms.len());
    for term in terms {
        let d = ConvolutionMatrix::new(term.d_hat.samples().to_vec(), la)?;
        normal += d.gram();
        rhs += DVector::from_vec(d.transpose_apply(term.target));
        mats.push(d);
    }
    let context = format!("equalizer design (lambda = {})", config.lambda);
    let sol = solve_normal(normal, &[rhs], OnSingular::Error, &context)?;
    log::trace!("{context}: condition estimate {:.3e}", sol.condition);
    let coefficients = sol.solutions[0].as_slice().to_vec();
    if coefficients.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("equalizer coefficients".into()));
    }

    let mut res_sq = 0.0;
    for (d, term) in mats.iter().zip(terms) {
        res_sq += l2(&residual_vec(d, &coefficients, term.target)?).powi(2);
    }
    let penalty_norm = l2(&w.apply(&coefficients)?);
    Ok(EqFilter {
        coefficients,
        config: config.clone(),
        residual_norm: res_sq.sqrt(),
        penalty_norm,
    })
}

/// `a = (D^T D + lambda W^T W)^{-1} D^T t`.
pub fn design_filter<T: Real>(
    d_hat: &ImpulseResponse<T>,
    target: &[T],
    config: &EqDesignConfig,
) -> Result<EqFilter<T>> {
    design_filter_pooled(&[DesignTerm { d_hat, target }], config)
}

/// `sqrt(sum_i ||D_i a - t_i||^2)`, recomputed from the coefficients.
pub fn residual_norm<T: Real>(a: &[T], terms: &[DesignTerm<'_, T>]) -> Result<f64> {
    let mut sq = 0.0;
    for term in terms {
        let d = ConvolutionMatrix::new(term.d_hat.samples().to_vec(), a.len())?;
        sq += l2(&residual_vec(&d, a, term.target)?).powi(2);
    }
    Ok(sq.sqrt())
}

/// `||D a - t||^2 + lambda ||W a||^2`.
pub fn cost<T: Real>(a: &[T], d_hat: &ImpulseResponse<T>, target: &[T], config: &EqDesignConfig) -> Result<f64> {
    config.validate()?;
    if a.len() != config.filter_length {
        return Err(Error::invalid(format!(
            "filter has {} taps, expected {}",
            a.len(),
            config.filter_length
        )));
    }
    let d = ConvolutionMatrix::new(d_hat.samples().to_vec(), a.len())?;
    let w = weighting_matrix::<T>(&config.weighting, a.len())?;
    let res = l2(&residual_vec(&d, a, target)?);
    let pen = l2(&w.apply(a)?);
    Ok(res * res + config.lambda * pen * pen)
}

/// `||D^T (D a - t) + lambda W^T W a||_inf` together with `||D^T t||_inf`.
pub fn normal_equation_residual<T: Real>(
    a: &[T],
    d_hat: &ImpulseResponse<T>,
    target: &[T],
    config: &EqDesignConfig,
) -> Result<(f64, f64)> {
    let d = ConvolutionMatrix::new(d_hat.samples().to_vec(), a.len())?;
    let w = weighting_matrix::<T>(&config.weighting, a.len())?;
    let grad_fit = d.transpose_apply(&residual_vec(&d, a, target)?);
    let grad_pen = w.transpose_apply(&w.apply(a)?);
    let lambda = T::of(config.lambda);
    let worst = grad_fit
        .iter()
        .zip(&grad_pen)
        .map(|(&f, &p)| (f + lambda * p).as_f64().abs())
        .fold(0.0, f64::max);
    let scale = d
        .transpose_apply(target)
        .iter()
        .map(|v| v.as_f64().abs())
        .fold(0.0, f64::max);
    Ok((worst, scale))
}
