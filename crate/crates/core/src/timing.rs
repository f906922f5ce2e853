// SPDX-License-Identifier: Apache-2.0

//! Test-loop timing: `T_total = T_con + T_test`, sweep rates and scan cycle
//! counts against chain length.

use std::fmt;
use std::str::FromStr;

use crate::measurement::{TestKind, ADC_CAPTURE, FOURIER_COST};
use crate::tap_engine::{configure_cost, ScanChain};

pub const DEFAULT_TCK: f64 = 16e6;
/// Sweep-rate endpoints the calibration targets, in Hz.
pub const BEST_RATE: f64 = 153.0;
pub const WORST_RATE: f64 = 0.949;
pub const CALIBRATION_NODES: u32 = 10;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Configure once per sweep.
    Best,
    /// Reconfigure the whole chain before every test.
    #[default]
    Worst,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Best => "best",
            Mode::Worst => "worst",
        })
    }
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "best" => Ok(Mode::Best),
            "worst" => Ok(Mode::Worst),
            _ => Err(format!("unknown timing mode `{s}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimingParams {
    pub f_tck: f64,
    pub adc_capture: f64,
    pub fourier_cost: f64,
    pub n_nodes: u32,
    pub config_cycles_full: f64,
    pub config_cycles_initial: f64,
    pub mode: Mode,
}

impl Default for TimingParams {
    fn default() -> Self {
        TimingParams {
            f_tck: DEFAULT_TCK,
            adc_capture: ADC_CAPTURE,
            fourier_cost: FOURIER_COST,
            n_nodes: CALIBRATION_NODES,
            config_cycles_full: calibrate_full(
                WORST_RATE,
                CALIBRATION_NODES,
                FOURIER_COST,
                DEFAULT_TCK,
            ),
            config_cycles_initial: calibrate_initial(
                BEST_RATE,
                CALIBRATION_NODES,
                ADC_CAPTURE,
                DEFAULT_TCK,
            ),
            mode: Mode::Worst,
        }
    }
}

/// Set-up cycles that make a best-mode sweep of `n` DC captures run at
/// `rate`, rounded to whole cycles.
pub fn calibrate_initial(rate: f64, n: u32, adc: f64, f_tck: f64) -> f64 {
    (f_tck * (1.0 / rate - n as f64 * adc)).round()
}

/// Per-test reconfiguration cycles that make a worst-mode sweep of `n`
/// Fourier tests run at `rate`, rounded to whole cycles.
pub fn calibrate_full(rate: f64, n: u32, fourier: f64, f_tck: f64) -> f64 {
    (f_tck * (1.0 / (n as f64 * rate) - fourier)).round()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimingReport {
    pub t_con: f64,
    pub t_test: f64,
    pub t_total: f64,
    pub loop_rate: f64,
}

impl TimingParams {
    /// Configuration time charged to one test.
    pub fn t_con(&self) -> f64 {
        match self.mode {
            Mode::Worst => self.config_cycles_full / self.f_tck,
            Mode::Best => self.config_cycles_initial / (self.f_tck * self.n_nodes as f64),
        }
    }

    /// Measurement time of one test of `kind`. Spectrum tests are taken at
    /// the low-frequency cost.
    pub fn t_test(&self, kind: TestKind) -> f64 {
        match kind {
            TestKind::Dc => self.adc_capture,
            TestKind::Spectrum => self.fourier_cost,
            TestKind::Duty | TestKind::Interconnect => kind.default_window(),
        }
    }
}

/// Timing of one test given an explicit measurement time.
pub fn report(p: &TimingParams, t_con: f64, t_test: f64) -> TimingReport {
    let t_total = t_con + t_test;
    TimingReport {
        t_con,
        t_test,
        t_total,
        loop_rate: 1.0 / (p.n_nodes as f64 * t_total),
    }
}

pub fn t_total(p: &TimingParams, kind: TestKind) -> TimingReport {
    report(p, p.t_con(), p.t_test(kind))
}

/// Full sweeps per second: DC captures in best mode, Fourier tests with full
/// reconfiguration in worst mode.
pub fn loop_rate(p: &TimingParams) -> f64 {
    let n = p.n_nodes as f64;
    match p.mode {
        Mode::Best => 1.0 / (p.config_cycles_initial / p.f_tck + n * p.adc_capture),
        Mode::Worst => 1.0 / (n * (p.config_cycles_full / p.f_tck + p.fourier_cost)),
    }
}

/// TCK cycles spent configuring a chain for `n_tests` tests.
pub fn cycles_vs_chain_length(chain: &ScanChain, mode: Mode, n_tests: u64) -> u64 {
    let once = configure_cost(chain).0;
    match mode {
        Mode::Best => once,
        Mode::Worst => n_tests * once,
    }
}
