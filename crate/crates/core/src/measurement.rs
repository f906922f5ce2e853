// SPDX-License-Identifier: Apache-2.0

//! Test measurement: the differential interconnect comparator, DC, duty and
//! spectrum measurements, and detectability classification.

use std::fmt;
use std::str::FromStr;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use thiserror::Error;

use crate::analog_fabric::NoiseSource;
use crate::signals::{EdgeDirection, SignalError, Waveform};

/// One ADC conversion.
pub const ADC_CAPTURE: f64 = 7e-6;
/// Floor on the cost of a low-frequency spectrum.
pub const FOURIER_COST: f64 = 0.100;
/// Fundamentals at or below this pay [`FOURIER_COST`].
pub const LOW_FREQUENCY_LIMIT: f64 = 100.0;

const SPECTRUM_POINTS: usize = 1 << 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeasureError {
    #[error("signal has no edges in the window")]
    NoEdges,
    #[error("window holds fewer than two full periods")]
    TooFewPeriods,
    #[error("no spectral line above the noise floor")]
    NoSignal,
    #[error("window [{0}, {1}] is shorter than one ADC capture or badly ordered")]
    BadWindow(f64, f64),
    #[error("detectability needs at least one observation")]
    EmptyHistory,
    #[error("comparator threshold must exceed the noise bound")]
    BadComparator,
    #[error(transparent)]
    Signal(#[from] SignalError),
}

pub type Result<T> = std::result::Result<T, MeasureError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TestKind {
    Dc,
    Interconnect,
    Duty,
    Spectrum,
}

impl TestKind {
    pub fn name(self) -> &'static str {
        match self {
            TestKind::Dc => "dc",
            TestKind::Interconnect => "interconnect",
            TestKind::Duty => "duty",
            TestKind::Spectrum => "spectrum",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            TestKind::Dc => "V",
            TestKind::Interconnect => "V",
            TestKind::Duty => "",
            TestKind::Spectrum => "Hz",
        }
    }

    /// Measurement window used when a test declares none.
    pub fn default_window(self) -> f64 {
        match self {
            TestKind::Dc => ADC_CAPTURE,
            TestKind::Interconnect | TestKind::Duty => 0.010,
            TestKind::Spectrum => 1.0,
        }
    }
}

impl fmt::Display for TestKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TestKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        [
            TestKind::Dc,
            TestKind::Interconnect,
            TestKind::Duty,
            TestKind::Spectrum,
        ]
        .into_iter()
        .find(|k| k.name() == s)
        .ok_or_else(|| format!("unknown test kind `{s}`"))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementResult {
    pub test_id: String,
    pub kind: TestKind,
    /// Volts, duty fraction or Hz. For interconnect tests, the peak filtered
    /// difference.
    pub value: f64,
    pub triggered: bool,
    pub window: (f64, f64),
    /// Measurement time consumed, in seconds.
    pub cost: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ComparatorConfig {
    pub threshold: f64,
    pub hf_filter_cutoff: f64,
}

impl Default for ComparatorConfig {
    fn default() -> Self {
        ComparatorConfig {
            threshold: 0.1,
            hf_filter_cutoff: 100e3,
        }
    }
}

impl ComparatorConfig {
    pub fn validate(&self, noise_bound: f64) -> Result<()> {
        if self.threshold > noise_bound && self.hf_filter_cutoff > 0.0 {
            Ok(())
        } else {
            Err(MeasureError::BadComparator)
        }
    }
}

/// Outcome of one comparator window.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Comparison {
    pub triggered: bool,
    /// Largest filtered |difference| seen in the window.
    pub peak: f64,
}

/// Runs the AT1-AT2 difference through the comparator's first-order filter
/// and reports whether it stays past the threshold for longer than one
/// filter period.
pub fn diff_compare_detail(
    at1: &Waveform,
    at2: &Waveform,
    cfg: &ComparatorConfig,
    window: (f64, f64),
) -> Result<Comparison> {
    let (t0, t1) = window;
    if !(t1 > t0) {
        return Err(MeasureError::BadWindow(t0, t1));
    }
    let fc = cfg.hf_filter_cutoff;
    let dt = 1.0 / (20.0 * fc);
    let alpha = 1.0 - (-2.0 * std::f64::consts::PI * fc * dt).exp();
    let hold = 1.0 / fc;
    // Settle the filter on the signal just before the window.
    let pre = (t0 - 10.0 / (2.0 * std::f64::consts::PI * fc)).max(0.0);
    let steps = ((t1 - pre) / dt).ceil() as u64;
    let mut y = 0.0;
    let mut run = 0.0;
    let mut peak: f64 = 0.0;
    for k in 0..=steps {
        let t = (pre + k as f64 * dt).min(t1);
        let d = at1.sample(t)? - at2.sample(t)?;
        y += alpha * (d - y);
        if t < t0 {
            continue;
        }
        peak = peak.max(y.abs());
        if y.abs() > cfg.threshold {
            run += dt;
            if run > hold {
                return Ok(Comparison {
                    triggered: true,
                    peak,
                });
            }
        } else {
            run = 0.0;
        }
    }
    Ok(Comparison {
        triggered: false,
        peak,
    })
}

pub fn diff_compare(
    at1: &Waveform,
    at2: &Waveform,
    cfg: &ComparatorConfig,
    window: (f64, f64),
) -> Result<bool> {
    Ok(diff_compare_detail(at1, at2, cfg, window)?.triggered)
}

/// Mean over the window plus one ADC noise draw. Returns `(volts, cost)`.
pub fn measure_dc(
    w: &Waveform,
    window: (f64, f64),
    noise: &mut NoiseSource,
    noise_bound: f64,
) -> Result<(f64, f64)> {
    let (t0, t1) = window;
    if !(t1 - t0 >= ADC_CAPTURE * (1.0 - 1e-9)) {
        return Err(MeasureError::BadWindow(t0, t1));
    }
    Ok((w.mean(t0, t1)? + noise.draw(noise_bound), ADC_CAPTURE))
}

/// Duty cycle from exact edge times, over the whole periods in the window.
pub fn measure_duty(w: &Waveform, window: (f64, f64)) -> Result<f64> {
    let edges = w.edges_in(window.0, window.1);
    if edges.is_empty() {
        return Err(MeasureError::NoEdges);
    }
    let rises: Vec<usize> = edges
        .iter()
        .enumerate()
        .filter(|(_, e)| e.direction == EdgeDirection::Rising)
        .map(|(i, _)| i)
        .collect();
    if rises.len() < 3 {
        return Err(MeasureError::TooFewPeriods);
    }
    let (first, last) = (rises[0], rises[rises.len() - 1]);
    let mut high = 0.0;
    let mut rise_at = edges[first].time;
    for e in &edges[first + 1..=last] {
        match e.direction {
            EdgeDirection::Falling => high += e.time - rise_at,
            EdgeDirection::Rising => rise_at = e.time,
        }
    }
    Ok(high / (edges[last].time - edges[first].time))
}

/// Dominant non-DC frequency of the sampled signal. Returns
/// `(fundamental, cost)`.
pub fn measure_spectrum(
    w: &Waveform,
    window: (f64, f64),
    noise: &mut NoiseSource,
    noise_bound: f64,
) -> Result<(f64, f64)> {
    let (t0, t1) = window;
    let span = t1 - t0;
    if !(span > 0.0) {
        return Err(MeasureError::BadWindow(t0, t1));
    }
    let n = SPECTRUM_POINTS;
    let dt = span / n as f64;
    let clean: Vec<f64> = (0..n)
        .map(|k| w.sample(t0 + k as f64 * dt))
        .collect::<std::result::Result<_, _>>()?;
    let (lo, hi) = clean
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
            (a.min(*v), b.max(*v))
        });
    if (hi - lo) / 2.0 < 2.0 * noise_bound {
        return Err(MeasureError::NoSignal);
    }
    let samples: Vec<f64> = clean.iter().map(|v| v + noise.draw(noise_bound)).collect();
    let mean = samples.iter().sum::<f64>() / n as f64;
    let mut buf: Vec<Complex<f64>> = samples
        .iter()
        .enumerate()
        .map(|(k, v)| {
            let hann = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * k as f64 / n as f64).cos();
            Complex::new((v - mean) * hann, 0.0)
        })
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let mag: Vec<f64> = buf[..n / 2].iter().map(|c| c.norm()).collect();
    let k = (1..mag.len() - 1)
        .max_by(|a, b| mag[*a].total_cmp(&mag[*b]))
        .unwrap_or(1);
    let (a, b, c) = (mag[k - 1].ln(), mag[k].ln(), mag[k + 1].ln());
    let denom = a - 2.0 * b + c;
    let offset = if denom.abs() > f64::EPSILON && denom.is_finite() {
        0.5 * (a - c) / denom
    } else {
        0.0
    };
    let fundamental = (k as f64 + offset) / span;
    let cost = if fundamental <= LOW_FREQUENCY_LIMIT {
        span.max(FOURIER_COST)
    } else {
        span
    };
    Ok((fundamental, cost))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Detectability {
    Detectable,
    Intermittent,
    NotDetectable,
}

impl fmt::Display for Detectability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Detectability::Detectable => "Yes",
            Detectability::Intermittent => "Intermittent",
            Detectability::NotDetectable => "No",
        })
    }
}

pub fn classify_detectability(history: &[bool]) -> Result<Detectability> {
    if history.is_empty() {
        return Err(MeasureError::EmptyHistory);
    }
    Ok(if history.iter().all(|t| *t) {
        Detectability::Detectable
    } else if history.iter().any(|t| *t) {
        Detectability::Intermittent
    } else {
        Detectability::NotDetectable
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analog_fabric::AbmTransferModel;

    const WIN: (f64, f64) = (0.0, 0.010);

    fn cmp(a: &Waveform, b: &Waveform) -> bool {
        diff_compare(a, b, &ComparatorConfig::default(), WIN).unwrap()
    }

    #[test]
    fn comparator_table_rows() {
        let hi = Waveform::dc(3.5);
        assert!(!cmp(&hi, &hi));
        assert!(cmp(&hi, &Waveform::dc(0.0)));
        assert!(!cmp(&Waveform::dc(0.0), &Waveform::dc(0.0)));
        // Biased digital low against a floating receiver.
        assert!(cmp(&Waveform::dc(0.5), &Waveform::dc(0.0)));
    }

    #[test]
    fn comparator_ignores_skew() {
        let a = Waveform::pwm(0.0, 3.5, 1000.0, 0.6).unwrap();
        let skew = 2e-6;
        let edges: Vec<f64> = (0..12)
            .flat_map(|k| [k as f64 * 1e-3 + skew, (k as f64 + 0.6) * 1e-3 + skew])
            .collect();
        let b = Waveform::pulses(0.0, 3.5, edges).unwrap();
        // b is low until its first edge, so begin after that.
        let r =
            diff_compare_detail(&a, &b, &ComparatorConfig::default(), (0.0005, 0.0105)).unwrap();
        assert!(!r.triggered, "{r:?}");
        assert!(r.peak > 0.1);
        let r2 =
            diff_compare_detail(&b, &a, &ComparatorConfig::default(), (0.0005, 0.0105)).unwrap();
        assert_eq!(r.triggered, r2.triggered);
    }

    #[test]
    fn dc_within_noise() {
        let mut noise = NoiseSource::new(1);
        let m = AbmTransferModel::default();
        for (level, lo, hi) in [(1.0, 0.99, 1.01), (0.0, -0.01, 0.01), (5.0, 3.91, 3.93)] {
            let w = m.transfer(&Waveform::dc(level)).unwrap();
            let (v, cost) = measure_dc(&w, (0.0, ADC_CAPTURE), &mut noise, 0.01).unwrap();
            assert!(v >= lo && v <= hi, "{level}: {v}");
            assert_eq!(cost, ADC_CAPTURE);
        }
        assert!(measure_dc(&Waveform::dc(1.0), (0.0, 1e-6), &mut noise, 0.01).is_err());
    }

    #[test]
    fn duty_exact_and_resolving() {
        let a = Waveform::pwm(0.0, 3.5, 1000.0, 0.6).unwrap();
        let b = Waveform::pwm(0.0, 3.5, 1000.0, 0.60001).unwrap();
        let da = measure_duty(&a, WIN).unwrap();
        let db = measure_duty(&b, WIN).unwrap();
        assert!((da - 0.6).abs() < 1e-9);
        assert!((db - 0.60001).abs() < 1e-9);
        assert!(db > da);
        assert_eq!(
            measure_duty(&Waveform::dc(1.0), WIN),
            Err(MeasureError::NoEdges)
        );
    }

    #[test]
    fn duty_through_abm() {
        let m = AbmTransferModel::default();
        let w = m
            .transfer(&Waveform::pwm(0.0, 3.5, 1000.0, 0.6).unwrap())
            .unwrap();
        assert!((measure_duty(&w, WIN).unwrap() - 0.6).abs() < 1e-9);
    }

    #[test]
    fn spectrum_lines() {
        let mut noise = NoiseSource::new(3);
        let (f, cost) = measure_spectrum(
            &Waveform::sine(1.0, 10.0, 0.0, 1.5),
            (0.0, 1.0),
            &mut noise,
            0.01,
        )
        .unwrap();
        assert!((f - 10.0).abs() < 0.05, "{f}");
        assert!(cost >= 0.1);
        let pwm = Waveform::pwm(0.0, 3.5, 1000.0, 0.6).unwrap();
        let (f, cost) = measure_spectrum(&pwm, (0.0, 0.05), &mut noise, 0.01).unwrap();
        assert!((f - 1000.0).abs() < 2.0, "{f}");
        assert_eq!(cost, 0.05);
        assert_eq!(
            measure_spectrum(&Waveform::dc(2.0), (0.0, 1.0), &mut noise, 0.01),
            Err(MeasureError::NoSignal)
        );
    }

    #[test]
    fn classification() {
        assert_eq!(
            classify_detectability(&[true, true]),
            Ok(Detectability::Detectable)
        );
        assert_eq!(
            classify_detectability(&[true, false]),
            Ok(Detectability::Intermittent)
        );
        assert_eq!(
            classify_detectability(&[false]),
            Ok(Detectability::NotDetectable)
        );
        assert_eq!(classify_detectability(&[]), Err(MeasureError::EmptyHistory));
    }
}
