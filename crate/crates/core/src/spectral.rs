//! Frequency-domain metrics of recorded force traces.
//!
//! Power is the squared DFT magnitude, first divided by the squared trace
//! length (so the one-sided bins sum to the mean-removed mean-square force)
//! and then rescaled so the bins above DC sum to one. The DC bin carries
//! static offsets such as load support and is excluded from both the
//! normalization and every metric.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::dynamics::{ForceSample, BALL_RESONANCE_HZ};
use crate::error::AnalysisError;
use crate::sim::TrialLog;

/// Shortest analysable trial: 5.2 s at 100 Hz.
pub const MIN_TRACE_SAMPLES: usize = 520;
pub const RESONANCE_WINDOW_HZ: f64 = 1.0;
pub const HIGH_LOW_CUTOFF_HZ: f64 = 1.0;
/// Common grid used when averaging spectra of different lengths.
pub const AGGREGATE_GRID_HZ: f64 = 0.05;

const FREQ_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
}

impl Axis {
    pub const BOTH: [Axis; 2] = [Axis::X, Axis::Y];

    pub fn component(self, s: &ForceSample) -> f64 {
        match self {
            Axis::X => s.fx,
            Axis::Y => s.fy,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Axis::X => "x",
            Axis::Y => "y",
        }
    }
}

/// One-sided spectrum, bins from DC up to (at most) Nyquist.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub axis: Axis,
    pub frequencies: Vec<f64>,
    pub power: Vec<f64>,
}

impl Spectrum {
    pub fn resolution(&self) -> f64 {
        self.frequencies.get(1).copied().unwrap_or(0.0) - self.frequencies[0]
    }

    /// Sum of power over the bins above DC.
    pub fn non_dc_total(&self) -> f64 {
        self.power.iter().skip(1).sum()
    }
}

fn sample_rate(trace: &[ForceSample]) -> Result<f64, AnalysisError> {
    let dt = trace[1].t - trace[0].t;
    if !(dt > 0.0) {
        return Err(AnalysisError::NonUniformSampling(1));
    }
    for (i, w) in trace.windows(2).enumerate() {
        if ((w[1].t - w[0].t) - dt).abs() > 1e-6 * dt {
            return Err(AnalysisError::NonUniformSampling(i + 1));
        }
    }
    Ok(1.0 / dt)
}

/// Length-normalized one-sided power spectrum, before energy normalization.
///
/// Bins strictly between DC and Nyquist are doubled so the non-DC bins sum
/// to the mean-removed mean square of the signal.
pub fn raw_spectrum(trace: &[ForceSample], axis: Axis) -> Result<Spectrum, AnalysisError> {
    let n = trace.len();
    if n < MIN_TRACE_SAMPLES {
        return Err(AnalysisError::TraceTooShort { samples: n, required: MIN_TRACE_SAMPLES });
    }
    let fs = sample_rate(trace)?;
    let mut buf: Vec<Complex<f64>> = trace.iter().map(|s| Complex::new(axis.component(s), 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);

    let nf = n as f64;
    let bins = n / 2 + 1;
    let mut frequencies = Vec::with_capacity(bins);
    let mut power = Vec::with_capacity(bins);
    for (k, c) in buf.iter().take(bins).enumerate() {
        let mirrored = k != 0 && !(n % 2 == 0 && k == n / 2);
        let p = c.norm_sqr() / (nf * nf);
        frequencies.push(k as f64 * fs / nf);
        power.push(if mirrored { 2.0 * p } else { p });
    }
    Ok(Spectrum { axis, frequencies, power })
}

/// Energy-normalized spectrum of one force axis.
pub fn fft_spectrum(trace: &[ForceSample], axis: Axis) -> Result<Spectrum, AnalysisError> {
    let mut spec = raw_spectrum(trace, axis)?;
    let total = spec.non_dc_total();
    // relative to the DC-inclusive energy so float dust on a constant trace counts as zero
    let scale = spec.power.iter().sum::<f64>().max(f64::MIN_POSITIVE);
    if !(total > 1e-24 * scale) || !total.is_finite() {
        return Err(AnalysisError::DegenerateSpectrum);
    }
    for p in spec.power.iter_mut() {
        *p /= total;
    }
    Ok(spec)
}

/// Largest single-bin power within ±1 Hz of `f_res`.
pub fn peak_near_resonance(spec: &Spectrum, f_res: f64) -> Result<f64, AnalysisError> {
    spec.frequencies
        .iter()
        .zip(&spec.power)
        .skip(1)
        .filter(|(f, _)| (**f - f_res).abs() <= RESONANCE_WINDOW_HZ + FREQ_EPS)
        .map(|(_, p)| *p)
        .reduce(f64::max)
        .ok_or(AnalysisError::EmptyWindow { center: f_res, window: RESONANCE_WINDOW_HZ })
}

/// Power at or above `cutoff` divided by power strictly between DC and `cutoff`.
pub fn high_low_ratio(spec: &Spectrum, cutoff: f64) -> Result<f64, AnalysisError> {
    let (mut high, mut low) = (0.0, 0.0);
    for (f, p) in spec.frequencies.iter().zip(&spec.power).skip(1) {
        if *f >= cutoff - FREQ_EPS {
            high += p;
        } else {
            low += p;
        }
    }
    // transform round-off leaves ~1e-30 in empty bins; treat that as nothing
    if !(low > 1e-24 * (high + low)) {
        return Err(AnalysisError::RatioUndefined { cutoff });
    }
    Ok(high / low)
}

pub fn time_per_target(log: &TrialLog) -> Result<f64, AnalysisError> {
    if !log.valid {
        return Err(AnalysisError::InvalidTrial);
    }
    match log.flags_collected() {
        0 => Err(AnalysisError::NoFlagsCollected),
        n => Ok(log.task_time() / n as f64),
    }
}

/// Linearly interpolate a spectrum onto a uniform grid from 0 Hz up to its
/// highest bin rounded up to the grid; points past the last bin hold its value.
pub fn resample(spec: &Spectrum, step: f64, max_freq: f64) -> Spectrum {
    let native = spec.resolution();
    let last = spec.power.len() - 1;
    let count = (max_freq / step + FREQ_EPS).floor() as usize + 1;
    let mut frequencies = Vec::with_capacity(count);
    let mut power = Vec::with_capacity(count);
    for k in 0..count {
        let f = k as f64 * step;
        let mut pos = f / native;
        if (pos - pos.round()).abs() < 1e-9 {
            pos = pos.round();
        }
        let i = pos.floor() as usize;
        let p = if i >= last {
            spec.power[last]
        } else {
            let frac = pos - i as f64;
            if frac == 0.0 {
                spec.power[i]
            } else {
                spec.power[i] * (1.0 - frac) + spec.power[i + 1] * frac
            }
        };
        frequencies.push(f);
        power.push(p);
    }
    Spectrum { axis: spec.axis, frequencies, power }
}

/// Per-bin mean of spectra after resampling onto the common 0.05 Hz grid.
pub fn aggregate_spectra(spectra: &[Spectrum]) -> Result<Spectrum, AnalysisError> {
    let first = spectra.first().ok_or(AnalysisError::EmptyGroup)?;
    if spectra.iter().any(|s| s.axis != first.axis) {
        return Err(AnalysisError::GridMismatch);
    }
    let max_freq = spectra
        .iter()
        .map(|s| *s.frequencies.last().unwrap_or(&0.0))
        .fold(0.0, f64::max);
    let max_freq = (max_freq / AGGREGATE_GRID_HZ - FREQ_EPS).ceil() * AGGREGATE_GRID_HZ;
    let resampled: Vec<Spectrum> = spectra.iter().map(|s| resample(s, AGGREGATE_GRID_HZ, max_freq)).collect();
    let bins = resampled[0].power.len();
    let n = resampled.len() as f64;
    let power = (0..bins)
        .map(|k| resampled.iter().map(|s| s.power[k]).sum::<f64>() / n)
        .collect();
    Ok(Spectrum { axis: first.axis, frequencies: resampled[0].frequencies.clone(), power })
}

/// Metrics for one trial; `None` entries are undefined for this trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialMetrics {
    pub time_per_target: Option<f64>,
    pub peak_near_resonance_x: Option<f64>,
    pub peak_near_resonance_y: Option<f64>,
    pub high_low_ratio_x: Option<f64>,
    pub high_low_ratio_y: Option<f64>,
    pub flags_collected: usize,
    pub task_time: f64,
    /// Why metrics were left undefined.
    pub exclusions: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct TrialAnalysis {
    pub metrics: TrialMetrics,
    pub spectra: Vec<Spectrum>,
}

pub fn analyze_trial(log: &TrialLog) -> TrialAnalysis {
    analyze_trial_with(log, BALL_RESONANCE_HZ, HIGH_LOW_CUTOFF_HZ)
}

pub fn analyze_trial_with(log: &TrialLog, f_res: f64, cutoff: f64) -> TrialAnalysis {
    let mut exclusions = Vec::new();
    let time_per_target = time_per_target(log)
        .map_err(|e| exclusions.push(format!("time_per_target: {e}")))
        .ok();
    let mut peaks = [None, None];
    let mut ratios = [None, None];
    let mut spectra = Vec::new();
    if log.valid {
        for (i, axis) in Axis::BOTH.into_iter().enumerate() {
            match fft_spectrum(&log.samples, axis) {
                Ok(spec) => {
                    peaks[i] = peak_near_resonance(&spec, f_res)
                        .map_err(|e| exclusions.push(format!("peak_{}: {e}", axis.as_str())))
                        .ok();
                    ratios[i] = high_low_ratio(&spec, cutoff)
                        .map_err(|e| exclusions.push(format!("ratio_{}: {e}", axis.as_str())))
                        .ok();
                    spectra.push(spec);
                }
                Err(e) => exclusions.push(format!("spectrum_{}: {e}", axis.as_str())),
            }
        }
    } else {
        exclusions.push("spectra: trial log is marked invalid".into());
    }
    TrialAnalysis {
        metrics: TrialMetrics {
            time_per_target,
            peak_near_resonance_x: peaks[0],
            peak_near_resonance_y: peaks[1],
            high_low_ratio_x: ratios[0],
            high_low_ratio_y: ratios[1],
            flags_collected: log.flags_collected(),
            task_time: log.task_time(),
            exclusions,
        },
        spectra,
    }
}
