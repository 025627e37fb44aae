//! Synthetic ear cohorts.
//!
//! Each ear is assembled from cascaded second-order peaking resonators and
//! integer delays:
//!
//! * `h_m`    microphone path: delay and concha-like resonances
//! * `h_open` `h_m` followed by the open ear-canal path
//! * `h_occ`  `h_open` through an attenuated low-pass leak
//! * `d_true` receiver path: broadband gain, delay and canal resonances
//! * `d_inear` `d_true` with resonance gains alternately raised and lowered
//!   by `inear_mismatch_db` and centers shifted upward
//! * `d_model` `d_true` with random-sign perturbations of `model_error_db`
//!
//! The dummy head uses the midpoint of every parameter range.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::signal::{convolve_slices, ImpulseResponse};

use super::EarDataset;

/// Closed parameter interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range(pub f64, pub f64);

impl Range {
    fn validate(&self, what: &str) -> Result<()> {
        if !(self.0.is_finite() && self.1.is_finite() && self.0 <= self.1) {
            return Err(Error::invalid(format!("invalid {what} range [{}, {}]", self.0, self.1)));
        }
        Ok(())
    }

    fn mid(&self) -> f64 {
        0.5 * (self.0 + self.1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayRange(pub usize, pub usize);

impl DelayRange {
    fn mid(&self) -> usize {
        (self.0 + self.1) / 2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResonanceRange {
    pub center_hz: Range,
    pub q: Range,
    pub gain_db: Range,
}

impl ResonanceRange {
    const fn new(center: (f64, f64), q: (f64, f64), gain: (f64, f64)) -> Self {
        Self {
            center_hz: Range(center.0, center.1),
            q: Range(q.0, q.1),
            gain_db: Range(gain.0, gain.1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthCohortParams {
    pub n_subjects: usize,
    pub seed: u64,
    pub sample_rate_hz: u32,
    /// Length of each elementary path response.
    pub ir_length: usize,
    pub mic_resonances: Vec<ResonanceRange>,
    pub open_resonances: Vec<ResonanceRange>,
    pub receiver_resonances: Vec<ResonanceRange>,
    pub mic_delay: DelayRange,
    pub canal_delay: DelayRange,
    pub receiver_delay: DelayRange,
    pub receiver_gain_db: Range,
    pub leak_attenuation_db: Range,
    pub leak_cutoff_hz: Range,
    pub leak_delay: DelayRange,
    pub inear_mismatch_db: f64,
    pub model_error_db: f64,
}

impl Default for SynthCohortParams {
    fn default() -> Self {
        Self {
            n_subjects: 12,
            seed: 42,
            sample_rate_hz: 16_000,
            ir_length: 128,
            mic_resonances: vec![ResonanceRange::new((3000.0, 5000.0), (1.0, 2.0), (2.0, 6.0))],
            open_resonances: vec![
                ResonanceRange::new((2200.0, 3400.0), (1.5, 3.0), (6.0, 16.0)),
                ResonanceRange::new((4800.0, 6500.0), (2.0, 4.0), (2.0, 10.0)),
            ],
            receiver_resonances: vec![
                ResonanceRange::new((1400.0, 3000.0), (2.0, 6.0), (0.0, 16.0)),
                ResonanceRange::new((3200.0, 5400.0), (2.0, 6.0), (0.0, 16.0)),
                ResonanceRange::new((5600.0, 7400.0), (2.0, 5.0), (0.0, 10.0)),
            ],
            // Inter-ear delay spread is well under a sample at 16 kHz.
            mic_delay: DelayRange(2, 2),
            canal_delay: DelayRange(4, 4),
            receiver_delay: DelayRange(2, 2),
            receiver_gain_db: Range(2.0, 22.0),
            leak_attenuation_db: Range(20.0, 30.0),
            leak_cutoff_hz: Range(500.0, 1500.0),
            leak_delay: DelayRange(1, 1),
            inear_mismatch_db: 6.0,
            model_error_db: 1.0,
        }
    }
}

impl SynthCohortParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_subjects < 2 {
            return Err(Error::invalid("a cohort needs at least two subjects"));
        }
        if self.sample_rate_hz == 0 || self.ir_length == 0 {
            return Err(Error::invalid("sample rate and ir_length must be positive"));
        }
        if !(self.model_error_db >= 0.0 && self.model_error_db < self.inear_mismatch_db) {
            return Err(Error::invalid(
                "model_error_db must be non-negative and smaller than inear_mismatch_db",
            ));
        }
        let nyquist = self.sample_rate_hz as f64 / 2.0;
        for r in self
            .mic_resonances
            .iter()
            .chain(&self.open_resonances)
            .chain(&self.receiver_resonances)
        {
            r.center_hz.validate("center")?;
            r.q.validate("Q")?;
            r.gain_db.validate("gain")?;
            if r.center_hz.0 <= 0.0 || r.center_hz.1 >= nyquist || r.q.0 <= 0.0 {
                return Err(Error::invalid("resonance centers must lie in (0, fs/2) with Q > 0"));
            }
        }
        self.receiver_gain_db.validate("receiver gain")?;
        self.leak_attenuation_db.validate("leak attenuation")?;
        self.leak_cutoff_hz.validate("leak cutoff")?;
        if self.leak_cutoff_hz.0 <= 0.0 || self.leak_cutoff_hz.1 >= nyquist {
            return Err(Error::invalid("leak cutoff must lie in (0, fs/2)"));
        }
        for (d, what) in [
            (self.mic_delay, "mic"),
            (self.canal_delay, "canal"),
            (self.receiver_delay, "receiver"),
            (self.leak_delay, "leak"),
        ] {
            if d.0 > d.1 || d.1 >= self.ir_length {
                return Err(Error::invalid(format!("invalid {what} delay range")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Resonance {
    center_hz: f64,
    q: f64,
    gain_db: f64,
}

#[derive(Debug, Clone, Copy)]
struct Biquad {
    b: [f64; 3],
    a: [f64; 3],
}

impl Biquad {
    fn peaking(fs: f64, r: Resonance) -> Self {
        let amp = 10f64.powf(r.gain_db / 40.0);
        let w0 = 2.0 * std::f64::consts::PI * r.center_hz / fs;
        let alpha = w0.sin() / (2.0 * r.q);
        let c = w0.cos();
        Self {
            b: [1.0 + alpha * amp, -2.0 * c, 1.0 - alpha * amp],
            a: [1.0 + alpha / amp, -2.0 * c, 1.0 - alpha / amp],
        }
    }

    fn lowpass(fs: f64, cutoff_hz: f64) -> Self {
        let w0 = 2.0 * std::f64::consts::PI * cutoff_hz / fs;
        let alpha = w0.sin() / std::f64::consts::SQRT_2;
        let c = w0.cos();
        Self {
            b: [(1.0 - c) / 2.0, 1.0 - c, (1.0 - c) / 2.0],
            a: [1.0 + alpha, -2.0 * c, 1.0 - alpha],
        }
    }

    fn filter_in_place(&self, x: &mut [f64]) {
        let (b, a) = (self.b, self.a);
        let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
        for v in x.iter_mut() {
            let x0 = *v;
            let y0 = (b[0] * x0 + b[1] * x1 + b[2] * x2 - a[1] * y1 - a[2] * y2) / a[0];
            x2 = x1;
            x1 = x0;
            y2 = y1;
            y1 = y0;
            *v = y0;
        }
    }
}

fn path(len: usize, delay: usize, gain: f64, filters: &[Biquad]) -> Vec<f64> {
    let mut x = vec![0.0; len];
    x[delay] = gain;
    for f in filters {
        f.filter_in_place(&mut x);
    }
    x
}

fn peaks(fs: f64, rs: &[Resonance]) -> Vec<Biquad> {
    rs.iter().map(|&r| Biquad::peaking(fs, r)).collect()
}

/// Parameters of one ear after drawing from the cohort ranges.
#[derive(Debug, Clone)]
struct EarDraw {
    mic: Vec<Resonance>,
    open: Vec<Resonance>,
    receiver: Vec<Resonance>,
    mic_delay: usize,
    canal_delay: usize,
    receiver_delay: usize,
    receiver_gain_db: f64,
    leak_attenuation_db: f64,
    leak_cutoff_hz: f64,
    leak_delay: usize,
    model_gain_signs: Vec<f64>,
    model_freq_signs: Vec<f64>,
}

fn draw_resonances(rng: &mut ChaCha8Rng, ranges: &[ResonanceRange]) -> Vec<Resonance> {
    ranges
        .iter()
        .map(|r| Resonance {
            center_hz: uniform(rng, r.center_hz),
            q: uniform(rng, r.q),
            gain_db: uniform(rng, r.gain_db),
        })
        .collect()
}

fn uniform(rng: &mut ChaCha8Rng, r: Range) -> f64 {
    let u: f64 = rng.random();
    r.0 + u * (r.1 - r.0)
}

fn uniform_delay(rng: &mut ChaCha8Rng, r: DelayRange) -> usize {
    rng.random_range(r.0..=r.1)
}

fn sign(rng: &mut ChaCha8Rng) -> f64 {
    if rng.random::<bool>() {
        1.0
    } else {
        -1.0
    }
}

impl EarDraw {
    fn random(p: &SynthCohortParams, rng: &mut ChaCha8Rng) -> Self {
        let mic = draw_resonances(rng, &p.mic_resonances);
        let open = draw_resonances(rng, &p.open_resonances);
        let receiver = draw_resonances(rng, &p.receiver_resonances);
        let mic_delay = uniform_delay(rng, p.mic_delay);
        let canal_delay = uniform_delay(rng, p.canal_delay);
        let receiver_delay = uniform_delay(rng, p.receiver_delay);
        let receiver_gain_db = uniform(rng, p.receiver_gain_db);
        let leak_attenuation_db = uniform(rng, p.leak_attenuation_db);
        let leak_cutoff_hz = uniform(rng, p.leak_cutoff_hz);
        let leak_delay = uniform_delay(rng, p.leak_delay);
        let model_gain_signs = receiver.iter().map(|_| sign(rng)).collect();
        let model_freq_signs = receiver.iter().map(|_| sign(rng)).collect();
        Self {
            mic,
            open,
            receiver,
            mic_delay,
            canal_delay,
            receiver_delay,
            receiver_gain_db,
            leak_attenuation_db,
            leak_cutoff_hz,
            leak_delay,
            model_gain_signs,
            model_freq_signs,
        }
    }

    fn median(p: &SynthCohortParams) -> Self {
        let mid = |rs: &[ResonanceRange]| -> Vec<Resonance> {
            rs.iter()
                .map(|r| Resonance {
                    center_hz: r.center_hz.mid(),
                    q: r.q.mid(),
                    gain_db: r.gain_db.mid(),
                })
                .collect()
        };
        let receiver = mid(&p.receiver_resonances);
        Self {
            mic: mid(&p.mic_resonances),
            open: mid(&p.open_resonances),
            model_gain_signs: vec![0.0; receiver.len()],
            model_freq_signs: vec![0.0; receiver.len()],
            receiver,
            mic_delay: p.mic_delay.mid(),
            canal_delay: p.canal_delay.mid(),
            receiver_delay: p.receiver_delay.mid(),
            receiver_gain_db: p.receiver_gain_db.mid(),
            leak_attenuation_db: p.leak_attenuation_db.mid(),
            leak_cutoff_hz: p.leak_cutoff_hz.mid(),
            leak_delay: p.leak_delay.mid(),
        }
    }
}

/// Frequency factor applied per dB of perturbation.
const SHIFT_OCTAVES_PER_DB: f64 = 1.0 / 48.0;

fn perturbed(rs: &[Resonance], gain_signs: &[f64], freq_signs: &[f64], db: f64, nyquist: f64) -> Vec<Resonance> {
    rs.iter()
        .zip(gain_signs.iter().zip(freq_signs))
        .map(|(r, (gs, fs))| {
            let factor = 2f64.powf(fs * db * SHIFT_OCTAVES_PER_DB);
            let center_hz = if factor == 1.0 {
                r.center_hz
            } else {
                (r.center_hz * factor).min(0.95 * nyquist)
            };
            Resonance {
                center_hz,
                q: r.q,
                gain_db: r.gain_db + gs * db,
            }
        })
        .collect()
}

fn build_ear<T: Real>(id: String, p: &SynthCohortParams, draw: &EarDraw) -> Result<EarDataset<T>> {
    let fs = p.sample_rate_hz as f64;
    let n = p.ir_length;
    let h_m = path(n, draw.mic_delay, 1.0, &peaks(fs, &draw.mic));
    let canal = path(n, draw.canal_delay, 1.0, &peaks(fs, &draw.open));
    let h_open = convolve_slices(&h_m, &canal);
    let leak = path(
        n,
        draw.leak_delay,
        10f64.powf(-draw.leak_attenuation_db / 20.0),
        &[Biquad::lowpass(fs, draw.leak_cutoff_hz)],
    );
    let mut h_occ = convolve_slices(&h_open, &leak);
    h_occ.truncate(h_open.len());

    let receiver_gain = 10f64.powf(draw.receiver_gain_db / 20.0);
    let d_of = |rs: &[Resonance]| path(n, draw.receiver_delay, receiver_gain, &peaks(fs, rs));
    let d_true = d_of(&draw.receiver);

    let alternating: Vec<f64> = (0..draw.receiver.len())
        .map(|i| if i % 2 == 0 { 1.0 } else { -1.0 })
        .collect();
    let upward = vec![1.0; draw.receiver.len()];
    let d_inear = d_of(&perturbed(
        &draw.receiver,
        &alternating,
        &upward,
        p.inear_mismatch_db,
        fs / 2.0,
    ));
    let d_model = d_of(&perturbed(
        &draw.receiver,
        &draw.model_gain_signs,
        &draw.model_freq_signs,
        p.model_error_db,
        fs / 2.0,
    ));

    let ir = |v: &[f64]| ImpulseResponse::<T>::from_f64(v, p.sample_rate_hz);
    EarDataset::new(
        id,
        ir(&h_m)?,
        ir(&h_open)?,
        ir(&h_occ)?,
        ir(&d_true)?,
        ir(&d_inear)?,
        ir(&d_model)?,
    )
}

/// Subject identifiers are `S01`, `S02`, ...; the dummy head is `DH`.
pub fn subject_id(index: usize) -> String {
    format!("S{:02}", index + 1)
}

pub const DUMMY_HEAD_ID: &str = "DH";

/// Deterministic cohort for the given parameters.
pub fn synth_cohort<T: Real>(params: &SynthCohortParams) -> Result<Vec<EarDataset<T>>> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    (0..params.n_subjects)
        .map(|i| {
            let draw = EarDraw::random(params, &mut rng);
            build_ear(subject_id(i), params, &draw)
        })
        .collect()
}

/// Non-individual reference ear built from the midpoint of every range.
pub fn synth_dummy_head<T: Real>(params: &SynthCohortParams) -> Result<EarDataset<T>> {
    params.validate()?;
    build_ear(DUMMY_HEAD_ID.to_string(), params, &EarDraw::median(params))
}
