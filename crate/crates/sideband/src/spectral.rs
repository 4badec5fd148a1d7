//! Power spectra of ±1 records, Lorentzian fits, calibration-tone
//! normalization, and the closed-form spectra they are compared against.
//!
//! Spectra use S(ω_r) = (T/N)|Σ_k m_k e^{−iω_r kT}|² averaged over
//! non-overlapping rectangular batches, with ω_r = 2πr/(NT). Areas are taken
//! in the ∫dω/2π measure, so a white record has S = T and unit area per
//! Brillouin zone.

use nalgebra::{Matrix4, Vector4};
use rand::Rng;
use rayon::prelude::*;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::fock::OscillatorParams;
use crate::measurement::{
    rates_with_extra, schedule_backaction, time_kernels, InteractionParams, MeasurementError, Prep,
    QubitModel, Schedule,
};
use crate::protocol::{CalibrationTone, MeasurementRecord, ProtocolConfig};
use crate::rng::substream;

/// Smallest fit window accepted by [`fit_lorentzian`].
pub const MIN_FIT_BINS: usize = 8;
/// Calibration peaks weaker than this many standard errors are rejected.
pub const CALIBRATION_MIN_SNR: f64 = 5.0;
/// Bins on each side of the calibration bin summed into its area.
pub const CALIBRATION_HALF_WIDTH: usize = 2;
const MAX_FIT_ITERATIONS: usize = 500;

#[derive(Debug, thiserror::Error)]
pub enum SpectralError {
    #[error("record of {len} samples is too short; need at least {needed}")]
    InsufficientData { len: usize, needed: usize },
    #[error("record has no preparation labels")]
    MissingLabels,
    #[error("preparation labels do not alternate (first violation at cycle {cycle})")]
    NotAlternating { cycle: usize },
    #[error("fit window holds {bins} bins; need at least {MIN_FIT_BINS}")]
    WindowTooSmall { bins: usize },
    #[error("Lorentzian fit failed after {iterations} iterations (reduced chi2 {chi2_red:.3e}): {reason}")]
    FitFailure { iterations: usize, chi2_red: f64, reason: String },
    #[error("calibration peak at {omega:.4e} rad/s is only {snr:.2} standard errors above the model")]
    CalibrationNotFound { omega: f64, snr: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Measurement(#[from] MeasurementError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PsdMethod {
    /// Batched squared-magnitude DFT.
    Periodogram,
    /// Per-batch empirical autocorrelation with the triangular (1 − |l|/N)
    /// lag weight, then a cosine transform.
    Autocorr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerSpectrum {
    /// ω_r = 2πr/(NT), r = 0…N−1 (rad/s).
    pub omega: Vec<f64>,
    /// PSD (s).
    pub psd: Vec<f64>,
    /// Standard error of the batch mean.
    pub stderr: Vec<f64>,
    pub n_batches: usize,
    pub batch_len: usize,
    pub period: f64,
}

impl PowerSpectrum {
    /// Bin spacing in the ∫dω/2π measure, 1/(NT).
    pub fn bin_measure(&self) -> f64 {
        1.0 / (self.batch_len as f64 * self.period)
    }

    pub fn bin_width(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.bin_measure()
    }

    /// Index of the bin nearest to ω (folded into one period of the DFT).
    pub fn nearest_bin(&self, omega: f64) -> usize {
        let n = self.batch_len as i64;
        let r = (omega / self.bin_width()).round() as i64;
        r.rem_euclid(n) as usize
    }

    /// Bins with ω_r in [lo, hi].
    pub fn window(&self, lo: f64, hi: f64) -> Vec<usize> {
        (0..self.omega.len()).filter(|&r| self.omega[r] >= lo && self.omega[r] <= hi).collect()
    }

    /// (1/(NT))·Σ_r S(ω_r); equals the mean of m_k² for any record.
    pub fn parseval_sum(&self) -> f64 {
        self.psd.iter().sum::<f64>() * self.bin_measure()
    }

    /// Batch-weighted mean of spectra with the same binning.
    pub fn combine(parts: &[PowerSpectrum]) -> Result<PowerSpectrum, SpectralError> {
        let first = parts.first().ok_or_else(|| SpectralError::InvalidArgument("no spectra".into()))?;
        if parts.iter().any(|p| p.batch_len != first.batch_len || p.period != first.period) {
            return Err(SpectralError::InvalidArgument("spectra have different binning".into()));
        }
        let total: usize = parts.iter().map(|p| p.n_batches).sum();
        let nb = first.batch_len;
        let mut psd = vec![0.0; nb];
        for p in parts {
            for (s, v) in psd.iter_mut().zip(&p.psd) {
                *s += v * p.n_batches as f64 / total as f64;
            }
        }
        // pooled batch variance: within-part scatter plus between-part offsets
        let mut stderr = vec![0.0; nb];
        if total > 1 {
            for r in 0..nb {
                let mut ss = 0.0;
                for p in parts {
                    let n = p.n_batches as f64;
                    let var = p.stderr[r] * p.stderr[r] * n;
                    ss += (n - 1.0) * var + n * (p.psd[r] - psd[r]).powi(2);
                }
                stderr[r] = (ss / (total as f64 - 1.0) / total as f64).sqrt();
            }
        }
        Ok(PowerSpectrum {
            omega: first.omega.clone(),
            psd,
            stderr,
            n_batches: total,
            batch_len: nb,
            period: first.period,
        })
    }
}

fn bin_frequencies(n: usize, period: f64) -> Vec<f64> {
    (0..n).map(|r| 2.0 * std::f64::consts::PI * r as f64 / (n as f64 * period)).collect()
}

/// Per-batch spectra of a ±1 sequence, folded into mean and scatter.
fn batched_spectrum(
    outcomes: &[i8],
    n: usize,
    period: f64,
    method: PsdMethod,
) -> Result<PowerSpectrum, SpectralError> {
    if n < 2 {
        return Err(SpectralError::InvalidArgument(format!("batch length {n}")));
    }
    if outcomes.len() < 2 * n {
        return Err(SpectralError::InsufficientData { len: outcomes.len(), needed: 2 * n });
    }
    let n_batches = outcomes.len() / n;
    let mut planner = FftPlanner::<f64>::new();
    let fft_n = planner.plan_fft_forward(n);
    let fft_2n = planner.plan_fft_forward(2 * n);
    let ifft_2n = planner.plan_fft_inverse(2 * n);
    let scale = period / n as f64;
    let zero = || (vec![0.0; n], vec![0.0; n]);
    let (sum, sum_sq) = outcomes[..n_batches * n]
        .par_chunks_exact(n)
        .fold(
            || (zero(), Vec::<Complex<f64>>::new(), Vec::<Complex<f64>>::new()),
            |((mut s, mut s2), mut buf, mut wide), batch| {
                let spec: Vec<f64> = match method {
                    PsdMethod::Periodogram => {
                        buf.clear();
                        buf.extend(batch.iter().map(|&m| Complex::new(m as f64, 0.0)));
                        fft_n.process(&mut buf);
                        buf.iter().map(|z| z.norm_sqr() * scale).collect()
                    }
                    PsdMethod::Autocorr => {
                        // lag sums R_l = Σ_k m_k m_{k+l} from a zero-padded FFT
                        wide.clear();
                        wide.extend(batch.iter().map(|&m| Complex::new(m as f64, 0.0)));
                        wide.resize(2 * n, Complex::new(0.0, 0.0));
                        fft_2n.process(&mut wide);
                        wide.iter_mut().for_each(|z| *z = Complex::new(z.norm_sqr(), 0.0));
                        ifft_2n.process(&mut wide);
                        let lag = |l: usize| wide[l].re / (2 * n) as f64;
                        // (1 − l/N)·ĉ_l = R_l/N with ĉ_l = R_l/(N − l)
                        buf.clear();
                        buf.push(Complex::new(lag(0) / n as f64, 0.0));
                        buf.extend((1..n).map(|l| Complex::new((lag(l) + lag(n - l)) / n as f64, 0.0)));
                        fft_n.process(&mut buf);
                        buf.iter().map(|z| z.re * period).collect()
                    }
                };
                for r in 0..n {
                    s[r] += spec[r];
                    s2[r] += spec[r] * spec[r];
                }
                ((s, s2), buf, wide)
            },
        )
        .map(|(acc, _, _)| acc)
        .reduce(zero, |(mut a, mut a2), (b, b2)| {
            for r in 0..n {
                a[r] += b[r];
                a2[r] += b2[r];
            }
            (a, a2)
        });
    let nbf = n_batches as f64;
    let psd: Vec<f64> = sum.iter().map(|s| s / nbf).collect();
    let stderr = psd
        .iter()
        .zip(&sum_sq)
        .map(|(m, s2)| {
            if n_batches > 1 {
                ((s2 / nbf - m * m).max(0.0) * nbf / (nbf - 1.0) / nbf).sqrt()
            } else {
                // a single periodogram ordinate is exponential: sd = mean
                m.abs()
            }
        })
        .collect();
    Ok(PowerSpectrum { omega: bin_frequencies(n, period), psd, stderr, n_batches, batch_len: n, period })
}

pub fn estimate_psd(
    record: &MeasurementRecord,
    n: usize,
    method: PsdMethod,
) -> Result<PowerSpectrum, SpectralError> {
    batched_spectrum(&record.outcomes, n, record.period, method)
}

/// Spectra of `groups` contiguous runs of batches, for bootstrap resampling.
pub fn estimate_psd_groups(
    record: &MeasurementRecord,
    n: usize,
    groups: usize,
) -> Result<Vec<PowerSpectrum>, SpectralError> {
    let n_batches = record.outcomes.len() / n.max(1);
    if groups == 0 || n_batches < 2 * groups {
        return Err(SpectralError::InsufficientData { len: record.outcomes.len(), needed: 2 * groups * n });
    }
    (0..groups)
        .map(|g| {
            let lo = g * n_batches / groups * n;
            let hi = (g + 1) * n_batches / groups * n;
            batched_spectrum(&record.outcomes[lo..hi], n, record.period, PsdMethod::Periodogram)
        })
        .collect()
}

/// Unbiased empirical autocorrelation ĉ_l = (1/(N − l))Σ_k m_k m_{k+l},
/// l = 0…N−1, averaged over batches of length N.
pub fn autocorrelation(record: &MeasurementRecord, n: usize) -> Result<Vec<f64>, SpectralError> {
    if record.outcomes.len() < 2 * n {
        return Err(SpectralError::InsufficientData { len: record.outcomes.len(), needed: 2 * n });
    }
    let n_batches = record.outcomes.len() / n;
    let mut c = vec![0.0; n];
    for batch in record.outcomes.chunks_exact(n) {
        for (l, cl) in c.iter_mut().enumerate() {
            let s: i64 = (0..n - l).map(|k| (batch[k] * batch[k + l]) as i64).sum();
            *cl += s as f64 / (n - l) as f64;
        }
    }
    c.iter_mut().for_each(|v| *v /= n_batches as f64);
    Ok(c)
}

/// Sub-records of the g and e preparations of a strictly alternating record;
/// each has period 2T.
pub fn split_by_prep(
    record: &MeasurementRecord,
) -> Result<(MeasurementRecord, MeasurementRecord), SpectralError> {
    let preps = record.preps.as_ref().ok_or(SpectralError::MissingLabels)?;
    if preps.len() != record.outcomes.len() {
        return Err(SpectralError::InvalidArgument(format!(
            "{} labels for {} outcomes",
            preps.len(),
            record.outcomes.len()
        )));
    }
    if let Some(cycle) = preps.windows(2).position(|w| w[0] == w[1]) {
        return Err(SpectralError::NotAlternating { cycle: cycle + 1 });
    }
    let mut g = Vec::with_capacity(record.len() / 2 + 1);
    let mut e = Vec::with_capacity(record.len() / 2 + 1);
    for (&m, &p) in record.outcomes.iter().zip(preps) {
        match p {
            Prep::Ground => g.push(m),
            Prep::Excited => e.push(m),
        }
    }
    let sub = |outcomes: Vec<i8>, prep: Prep| {
        let len = outcomes.len();
        MeasurementRecord {
            outcomes,
            preps: Some(vec![prep; len]),
            period: 2.0 * record.period,
            fingerprint: record.fingerprint.clone(),
            seed: record.seed,
            diagnostics: record.diagnostics.clone(),
        }
    };
    Ok((sub(g, Prep::Ground), sub(e, Prep::Excited)))
}

/// S(ω) = B + A·(γ/2)²/((ω − ω₀)² + (γ/2)²).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lorentzian {
    pub background: f64,
    pub amplitude: f64,
    pub center: f64,
    pub fwhm: f64,
}

impl Lorentzian {
    pub fn eval(&self, omega: f64) -> f64 {
        let h = 0.5 * self.fwhm;
        let d = omega - self.center;
        self.background + self.amplitude * h * h / (d * d + h * h)
    }

    /// Peak area in the ∫dω/2π measure: A·γ/4.
    pub fn area(&self) -> f64 {
        0.25 * self.amplitude * self.fwhm
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LorentzianFit {
    pub model: Lorentzian,
    pub center: f64,
    pub fwhm: f64,
    pub area: f64,
    pub background: f64,
    /// Covariance of (B, ln A, ω₀, ln γ).
    pub covariance: [[f64; 4]; 4],
    pub center_err: f64,
    pub fwhm_err: f64,
    pub area_err: f64,
    pub background_err: f64,
    pub chi2_red: f64,
    pub dof: usize,
    pub iterations: usize,
}

fn lorentzian_from(p: &Vector4<f64>) -> Lorentzian {
    Lorentzian { background: p[0], amplitude: p[1].exp(), center: p[2], fwhm: p[3].exp() }
}

/// Value and gradient with respect to (B, ln A, ω₀, ln γ).
fn model_and_gradient(p: &Vector4<f64>, omega: f64) -> (f64, Vector4<f64>) {
    let a = p[1].exp();
    let g = p[3].exp();
    let h = 0.5 * g;
    let d = omega - p[2];
    let den = d * d + h * h;
    let l = h * h / den;
    let val = p[0] + a * l;
    let grad = Vector4::new(1.0, a * l, a * h * h * 2.0 * d / (den * den), a * g * h * d * d / (den * den));
    (val, grad)
}

/// Weighted Levenberg–Marquardt fit of a Lorentzian on a constant background
/// over bins with ω in [lo, hi]. Weights are 1/stderr² (unit if stderr is 0).
pub fn fit_lorentzian(spec: &PowerSpectrum, lo: f64, hi: f64) -> Result<LorentzianFit, SpectralError> {
    let bins = spec.window(lo, hi);
    if bins.len() < MIN_FIT_BINS {
        return Err(SpectralError::WindowTooSmall { bins: bins.len() });
    }
    let xs: Vec<f64> = bins.iter().map(|&r| spec.omega[r]).collect();
    let ys: Vec<f64> = bins.iter().map(|&r| spec.psd[r]).collect();
    let unit = bins.iter().all(|&r| spec.stderr[r] == 0.0);
    let ws: Vec<f64> = bins
        .iter()
        .map(|&r| if unit { 1.0 } else { 1.0 / spec.stderr[r].max(f64::MIN_POSITIVE).powi(2) })
        .collect();
    if !unit && bins.iter().any(|&r| spec.stderr[r] == 0.0) {
        return Err(SpectralError::InvalidArgument("zero standard error inside the fit window".into()));
    }

    let p0 = initial_guess(&xs, &ys, spec.bin_width());
    let chi2 = |p: &Vector4<f64>| -> f64 {
        xs.iter().zip(&ys).zip(&ws).map(|((&x, &y), &w)| w * (y - model_and_gradient(p, x).0).powi(2)).sum()
    };
    let normal = |p: &Vector4<f64>| -> (Matrix4<f64>, Vector4<f64>) {
        let mut jtj = Matrix4::zeros();
        let mut jtr = Vector4::zeros();
        for ((&x, &y), &w) in xs.iter().zip(&ys).zip(&ws) {
            let (v, g) = model_and_gradient(p, x);
            jtj += g * g.transpose() * w;
            jtr += g * (w * (y - v));
        }
        (jtj, jtr)
    };

    let dof = xs.len() - 4;
    let mut p = p0;
    let mut c = chi2(&p);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_FIT_ITERATIONS {
        iterations += 1;
        let (jtj, jtr) = normal(&p);
        let mut accepted = false;
        for _ in 0..40 {
            let mut a = jtj;
            for i in 0..4 {
                a[(i, i)] += lambda * jtj[(i, i)].max(f64::MIN_POSITIVE);
            }
            let Some(step) = a.cholesky().map(|ch| ch.solve(&jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let trial = p + step;
            let ct = chi2(&trial);
            if ct.is_finite() && ct <= c {
                let small = (c - ct) <= 1e-14 * c.max(f64::MIN_POSITIVE)
                    || step.iter().zip(trial.iter()).all(|(s, t)| s.abs() <= 1e-12 * t.abs().max(1e-300));
                p = trial;
                c = ct;
                lambda = (lambda * 0.3).max(1e-12);
                accepted = true;
                converged = small;
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // no downhill step at any damping: at a minimum to working precision
            converged = true;
        }
        if converged {
            break;
        }
    }
    let chi2_red = c / dof.max(1) as f64;
    if !converged {
        return Err(SpectralError::FitFailure { iterations, chi2_red, reason: "iteration limit".into() });
    }
    let model = lorentzian_from(&p);
    if !(model.fwhm > 0.0 && model.fwhm.is_finite() && model.amplitude.is_finite()) {
        return Err(SpectralError::FitFailure { iterations, chi2_red, reason: "degenerate width".into() });
    }
    let (jtj, _) = normal(&p);
    let mut cov = jtj
        .try_inverse()
        .ok_or_else(|| SpectralError::FitFailure { iterations, chi2_red, reason: "singular normal matrix".into() })?;
    if unit {
        // no error bars supplied: scale by the residual variance
        cov *= chi2_red;
    }
    let mut covariance = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            covariance[i][j] = cov[(i, j)];
        }
    }
    let area = model.area();
    let rel_area_var = cov[(1, 1)] + cov[(3, 3)] + 2.0 * cov[(1, 3)];
    Ok(LorentzianFit {
        model,
        center: model.center,
        fwhm: model.fwhm,
        area,
        background: model.background,
        covariance,
        center_err: cov[(2, 2)].max(0.0).sqrt(),
        fwhm_err: model.fwhm * cov[(3, 3)].max(0.0).sqrt(),
        area_err: area * rel_area_var.max(0.0).sqrt(),
        background_err: cov[(0, 0)].max(0.0).sqrt(),
        chi2_red,
        dof,
        iterations,
    })
}

/// Peak bin for the center, median for the background, max − median for the
/// height and the second moment of the positive excess for the width.
fn initial_guess(xs: &[f64], ys: &[f64], bin_width: f64) -> Vector4<f64> {
    let mut sorted = ys.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    let (imax, &ymax) = ys.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).expect("non-empty window");
    let center = xs[imax];
    let mut w = 0.0;
    let mut m2 = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        let e = (y - median).max(0.0);
        w += e;
        m2 += e * (x - center).powi(2);
    }
    let span = xs[xs.len() - 1] - xs[0];
    let sigma = if w > 0.0 { (m2 / w).sqrt() } else { span / 4.0 };
    let fwhm = (2.0 * sigma).clamp(bin_width, span.max(bin_width));
    let amp = (ymax - median).max(1e-12 * ymax.abs().max(f64::MIN_POSITIVE));
    Vector4::new(median, amp.ln(), center, fwhm.ln())
}

/// A value with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub err: f64,
}

impl Estimate {
    pub fn new(value: f64, err: f64) -> Self {
        Self { value, err }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratedPeak {
    /// (S − B)/A_cal.
    pub normalized: PowerSpectrum,
    /// Calibration peak area (∫dω/2π measure) and its error.
    pub calibration_area: Estimate,
    pub calibration_snr: f64,
    /// Thermal peak area in units of the calibration peak area.
    pub area: Estimate,
}

/// Normalizes a spectrum by the area of its calibration peak at `cal_freq`.
///
/// The calibration area is the excess over the fitted model summed over the
/// bins within ±[`CALIBRATION_HALF_WIDTH`] of the nearest bin, which holds
/// all of the tone's power when it sits on a bin.
pub fn normalize_and_area(
    spec: &PowerSpectrum,
    fit: &LorentzianFit,
    cal_freq: f64,
) -> Result<CalibratedPeak, SpectralError> {
    let n = spec.batch_len;
    let rc = spec.nearest_bin(cal_freq);
    let mut excess = 0.0;
    let mut var = 0.0;
    for off in -(CALIBRATION_HALF_WIDTH as i64)..=CALIBRATION_HALF_WIDTH as i64 {
        let r = (rc as i64 + off).rem_euclid(n as i64) as usize;
        excess += spec.psd[r] - fit.model.eval(spec.omega[r]);
        var += spec.stderr[r].powi(2);
    }
    let centre_excess = spec.psd[rc] - fit.model.eval(spec.omega[rc]);
    let snr = if spec.stderr[rc] > 0.0 { centre_excess / spec.stderr[rc] } else { f64::INFINITY };
    if !(snr >= CALIBRATION_MIN_SNR) || !(excess > 0.0) {
        return Err(SpectralError::CalibrationNotFound { omega: cal_freq, snr });
    }
    let dm = spec.bin_measure();
    let cal = Estimate::new(excess * dm, var.sqrt() * dm);
    let normalized = PowerSpectrum {
        psd: spec.psd.iter().map(|s| (s - fit.background) / cal.value).collect(),
        stderr: spec.stderr.iter().map(|s| s / cal.value).collect(),
        ..spec.clone()
    };
    let value = fit.area / cal.value;
    let err = value * ((fit.area_err / fit.area).powi(2) + (cal.err / cal.value).powi(2)).sqrt();
    Ok(CalibratedPeak { normalized, calibration_area: cal, calibration_snr: snr, area: Estimate::new(value, err) })
}

/// Phonon number from a calibrated area: n̄ = A·(c·z_r)²/(θ_eff²·γ²), with c
/// the calibration rotation amplitude, z_r the qubit polarization at readout,
/// θ_eff = Ωτ_Σ and γ the tone's mean contrast factor.
pub fn phonons_from_area(area: Estimate, tone: &CalibrationTone, lever: f64, theta_eff: f64) -> Estimate {
    let k = (tone.amplitude * lever / (theta_eff * tone.contrast_factor())).powi(2);
    Estimate::new(area.value * k, area.err * k)
}

/// Polarization ⟨σ_z⟩ the calibration rotation acts on: the prepared
/// polarization decayed over the interaction.
pub fn readout_lever(q: &QubitModel, ip: &InteractionParams, prep: Prep) -> f64 {
    q.polarization(prep) * (-q.kappa_1 * ip.tau).exp()
}

/// Effective interaction angle Ωτ_Σ of a decaying probe.
pub fn effective_angle(q: &QubitModel, ip: &InteractionParams) -> f64 {
    ip.omega * time_kernels(q.kappa_1, q.kappa_2, ip.tau).tau_sigma
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Asymmetry {
    pub measured: Estimate,
    /// (τ_2/τ_Σ)·(η_g + η_e)/(2η_gη_e).
    pub predicted: f64,
}

impl Asymmetry {
    /// |measured − predicted| in units of the measurement error.
    pub fn pull(&self) -> f64 {
        (self.measured.value - self.predicted) / self.measured.err
    }
}

/// Measured n̄_e − n̄_g against the imperfect-probe prediction.
pub fn asymmetry_analysis(n_g: Estimate, n_e: Estimate, q: &QubitModel, tau: f64) -> Asymmetry {
    Asymmetry {
        measured: Estimate::new(n_e.value - n_g.value, n_e.err.hypot(n_g.err)),
        predicted: predicted_asymmetry(q, tau),
    }
}

pub fn predicted_asymmetry(q: &QubitModel, tau: f64) -> f64 {
    let k = time_kernels(q.kappa_1, q.kappa_2, tau);
    k.tau_2 / k.tau_sigma * (q.eta_g + q.eta_e) / (2.0 * q.eta_g * q.eta_e)
}

/// Closed-form outcome spectrum of one preparation's (sub-)record.
///
/// The outcome covariance is C_0 = 1 − (ε_g − ε_e)² and, for k ≠ 0,
/// C_k = c²(θ_eff²/4)·z[(z + r)n' + (z − r)(n' + 1)]·ρ^{|k|}cos(ΔkT_s)
/// with c the readout contrast, z the polarization, r = τ_2/τ_Σ,
/// ρ = e^{−κ'T_s/2} and T_s the sub-record period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheorySpectrum {
    pub prep: Prep,
    /// Sampling period of the (sub-)record.
    pub period: f64,
    pub center: f64,
    pub kappa_eff: f64,
    pub n_eff: f64,
    /// Prefactor of ρ^{|k|}cos(ΔkT_s) in C_k.
    pub amplitude: f64,
    /// C_0.
    pub variance: f64,
}

impl TheorySpectrum {
    pub fn covariance(&self, lag: u64) -> f64 {
        if lag == 0 {
            return self.variance;
        }
        let k = lag as f64;
        self.amplitude * (-0.5 * self.kappa_eff * k * self.period).exp() * (self.center * k * self.period).cos()
    }

    /// T_s·Σ_k C_k e^{−iωkT_s}, summed in closed form.
    pub fn density(&self, omega: f64) -> f64 {
        let t = self.period;
        let rho = (-0.5 * self.kappa_eff * t).exp();
        let geo = |phase: f64| {
            let q = num_complex::Complex64::from_polar(rho, phase);
            (q / (1.0 - q)).re
        };
        t * (self.variance + self.amplitude * (geo((self.center - omega) * t) + geo(-(self.center + omega) * t)))
    }

    /// Expectation of the batch-N periodogram: the lag sum with the
    /// triangular weight (1 − |k|/N).
    pub fn expected_periodogram(&self, omega: f64, n: usize) -> f64 {
        let t = self.period;
        let mut s = self.variance;
        for k in 1..n {
            let w = 1.0 - k as f64 / n as f64;
            s += 2.0 * w * self.covariance(k as u64) * (omega * k as f64 * t).cos();
        }
        t * s
    }

    /// Area of the peak at +Δ above the background (∫dω/2π measure).
    pub fn peak_area(&self) -> f64 {
        0.5 * self.amplitude
    }

    /// Lorentzian height of the peak at +Δ, neglecting the mirror peak.
    pub fn peak_height(&self) -> f64 {
        4.0 * self.peak_area() / self.kappa_eff
    }
}

/// Spectra for each preparation present in `schedule`. Alternating records
/// yield two sub-records at period 2T sharing the averaged backaction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheorySpectra {
    pub g: Option<TheorySpectrum>,
    pub e: Option<TheorySpectrum>,
}

impl TheorySpectra {
    pub fn get(&self, prep: Prep) -> Option<&TheorySpectrum> {
        match prep {
            Prep::Ground => self.g.as_ref(),
            Prep::Excited => self.e.as_ref(),
        }
    }
}

pub fn theory_spectrum(
    schedule: Schedule,
    p: &OscillatorParams,
    ip: &InteractionParams,
    q: &QubitModel,
) -> Result<TheorySpectra, SpectralError> {
    let (down, up) = schedule_backaction(schedule, q, ip)?;
    let (kappa_eff, n_eff) = rates_with_extra(p, down, up);
    if !(kappa_eff > 0.0) {
        return Err(SpectralError::InvalidArgument(format!(
            "net damping {kappa_eff:.3e} is not positive; no stationary spectrum"
        )));
    }
    let k = time_kernels(q.kappa_1, q.kappa_2, ip.tau);
    let theta = ip.omega * k.tau_sigma;
    let r = if k.tau_sigma > 0.0 { k.tau_2 / k.tau_sigma } else { 1.0 };
    let c = q.contrast();
    let variance = 1.0 - (q.eps_g - q.eps_e).powi(2);
    let period = match schedule {
        Schedule::Alternating => 2.0 * ip.period,
        _ => ip.period,
    };
    let make = |prep: Prep| {
        let z = q.polarization(prep);
        TheorySpectrum {
            prep,
            period,
            center: p.delta,
            kappa_eff,
            n_eff,
            amplitude: c * c * theta * theta / 4.0 * z * ((z + r) * n_eff + (z - r) * (n_eff + 1.0)),
            variance,
        }
    };
    Ok(match schedule {
        Schedule::Ground => TheorySpectra { g: Some(make(Prep::Ground)), e: None },
        Schedule::Excited => TheorySpectra { g: None, e: Some(make(Prep::Excited)) },
        Schedule::Alternating => TheorySpectra { g: Some(make(Prep::Ground)), e: Some(make(Prep::Excited)) },
    })
}

/// Settings of the spectrum → fit → calibration pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakSettings {
    pub batch_len: usize,
    pub method: PsdMethod,
    /// Fit window (rad/s).
    pub window: (f64, f64),
}

/// One preparation's spectrum, Lorentzian fit and, with a calibration tone,
/// the calibrated area and phonon number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakAnalysis {
    pub prep: Prep,
    pub spectrum: PowerSpectrum,
    pub fit: LorentzianFit,
    pub calibrated: Option<CalibratedPeak>,
    pub phonons: Option<Estimate>,
}

/// Per-preparation sub-records: the two halves of an alternating record, or
/// the whole record for a single preparation.
pub fn prep_records(record: &MeasurementRecord, schedule: Schedule) -> Result<Vec<(Prep, MeasurementRecord)>, SpectralError> {
    Ok(match schedule {
        Schedule::Alternating => {
            let (g, e) = split_by_prep(record)?;
            vec![(Prep::Ground, g), (Prep::Excited, e)]
        }
        Schedule::Ground => vec![(Prep::Ground, record.clone())],
        Schedule::Excited => vec![(Prep::Excited, record.clone())],
    })
}

/// Runs the peak pipeline on every preparation of `record`, which was
/// generated with `cfg`.
pub fn analyze_peaks(
    record: &MeasurementRecord,
    cfg: &ProtocolConfig,
    settings: &PeakSettings,
) -> Result<Vec<PeakAnalysis>, SpectralError> {
    let theta = effective_angle(&cfg.qubit, &cfg.interaction);
    prep_records(record, cfg.interaction.schedule)?
        .into_iter()
        .map(|(prep, sub)| {
            let spectrum = estimate_psd(&sub, settings.batch_len, settings.method)?;
            let fit = fit_lorentzian(&spectrum, settings.window.0, settings.window.1)?;
            let (calibrated, phonons) = match &cfg.calibration {
                Some(tone) => {
                    let cal = normalize_and_area(&spectrum, &fit, tone.frequency)?;
                    let lever = readout_lever(&cfg.qubit, &cfg.interaction, prep);
                    let n = phonons_from_area(cal.area, tone, lever, theta);
                    (Some(cal), Some(n))
                }
                None => (None, None),
            };
            Ok(PeakAnalysis { prep, spectrum, fit, calibrated, phonons })
        })
        .collect()
}

/// Bootstrap over batch groups: each replica averages `groups.len()` groups
/// drawn with replacement and evaluates `stat`; failed evaluations are skipped.
pub fn bootstrap<F>(
    groups: &[PowerSpectrum],
    replicas: usize,
    seed: u64,
    stat: F,
) -> Result<Vec<f64>, SpectralError>
where
    F: Fn(&PowerSpectrum) -> Option<f64> + Sync,
{
    if groups.len() < 2 {
        return Err(SpectralError::InvalidArgument("bootstrap needs at least two groups".into()));
    }
    let out: Vec<Option<f64>> = (0..replicas)
        .into_par_iter()
        .map(|b| {
            let mut rng = substream(seed, b as u64);
            let pick: Vec<PowerSpectrum> =
                (0..groups.len()).map(|_| groups[rng.random_range(0..groups.len())].clone()).collect();
            PowerSpectrum::combine(&pick).ok().and_then(|s| stat(&s))
        })
        .collect();
    Ok(out.into_iter().flatten().collect())
}

/// Sample mean and standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var.sqrt())
}
