// SPDX-License-Identifier: Apache-2.0

//! Test Access Engine: the 16-state TAP controller, a cycle-level scan chain
//! and TCK cost accounting for chain configurations.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, AddAssign};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TapError {
    #[error("scan of {got} bits does not match the {expected}-bit {path:?} path")]
    LengthMismatch {
        path: ScanPath,
        expected: usize,
        got: usize,
    },
    #[error("unknown chain device `{0}`")]
    UnknownDevice(String),
    #[error("target vector for `{device}` has {got} bits, device has {expected} boundary cells")]
    TargetLength {
        device: String,
        expected: usize,
        got: usize,
    },
    #[error("controller must be in Run-Test/Idle to start a scan, found {0:?}")]
    NotIdle(TapState),
    #[error("instruction register of `{0}` is too short to encode the instruction set")]
    IrTooShort(String),
}

pub type Result<T> = std::result::Result<T, TapError>;

/// IEEE 1149.1 TAP controller states.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TapState {
    TestLogicReset,
    RunTestIdle,
    SelectDrScan,
    CaptureDr,
    ShiftDr,
    Exit1Dr,
    PauseDr,
    Exit2Dr,
    UpdateDr,
    SelectIrScan,
    CaptureIr,
    ShiftIr,
    Exit1Ir,
    PauseIr,
    Exit2Ir,
    UpdateIr,
}

impl TapState {
    pub const ALL: [TapState; 16] = [
        TapState::TestLogicReset,
        TapState::RunTestIdle,
        TapState::SelectDrScan,
        TapState::CaptureDr,
        TapState::ShiftDr,
        TapState::Exit1Dr,
        TapState::PauseDr,
        TapState::Exit2Dr,
        TapState::UpdateDr,
        TapState::SelectIrScan,
        TapState::CaptureIr,
        TapState::ShiftIr,
        TapState::Exit1Ir,
        TapState::PauseIr,
        TapState::Exit2Ir,
        TapState::UpdateIr,
    ];

    /// Successor state on a rising TCK edge with the given TMS value.
    pub fn step(self, tms: bool) -> TapState {
        use TapState::*;
        match (self, tms) {
            (TestLogicReset, false) => RunTestIdle,
            (TestLogicReset, true) => TestLogicReset,
            (RunTestIdle, false) => RunTestIdle,
            (RunTestIdle, true) => SelectDrScan,
            (SelectDrScan, false) => CaptureDr,
            (SelectDrScan, true) => SelectIrScan,
            (CaptureDr, false) => ShiftDr,
            (CaptureDr, true) => Exit1Dr,
            (ShiftDr, false) => ShiftDr,
            (ShiftDr, true) => Exit1Dr,
            (Exit1Dr, false) => PauseDr,
            (Exit1Dr, true) => UpdateDr,
            (PauseDr, false) => PauseDr,
            (PauseDr, true) => Exit2Dr,
            (Exit2Dr, false) => ShiftDr,
            (Exit2Dr, true) => UpdateDr,
            (UpdateDr, false) => RunTestIdle,
            (UpdateDr, true) => SelectDrScan,
            (SelectIrScan, false) => CaptureIr,
            (SelectIrScan, true) => TestLogicReset,
            (CaptureIr, false) => ShiftIr,
            (CaptureIr, true) => Exit1Ir,
            (ShiftIr, false) => ShiftIr,
            (ShiftIr, true) => Exit1Ir,
            (Exit1Ir, false) => PauseIr,
            (Exit1Ir, true) => UpdateIr,
            (PauseIr, false) => PauseIr,
            (PauseIr, true) => Exit2Ir,
            (Exit2Ir, false) => ShiftIr,
            (Exit2Ir, true) => UpdateIr,
            (UpdateIr, false) => RunTestIdle,
            (UpdateIr, true) => SelectDrScan,
        }
    }
}

pub fn step_tms(s: TapState, tms: bool) -> TapState {
    s.step(tms)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ScanPath {
    Ir,
    Dr,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Instruction {
    Bypass,
    SamplePreload,
    Extest,
    /// Analog access through the ABM switches.
    Probe,
}

/// Per-device opcode assignment.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InstructionCodes {
    pub bypass: u64,
    pub sample_preload: u64,
    pub extest: u64,
    pub probe: u64,
}

impl InstructionCodes {
    /// BYPASS is all ones; the rest are numbered from zero.
    pub fn standard(ir_length: usize) -> Self {
        InstructionCodes {
            bypass: all_ones(ir_length),
            extest: 0,
            sample_preload: 1,
            probe: 2,
        }
    }

    pub fn code(&self, instruction: Instruction) -> u64 {
        match instruction {
            Instruction::Bypass => self.bypass,
            Instruction::SamplePreload => self.sample_preload,
            Instruction::Extest => self.extest,
            Instruction::Probe => self.probe,
        }
    }

    /// Unassigned opcodes behave as BYPASS.
    pub fn decode(&self, code: u64) -> Instruction {
        if code == self.extest {
            Instruction::Extest
        } else if code == self.probe {
            Instruction::Probe
        } else if code == self.sample_preload {
            Instruction::SamplePreload
        } else {
            Instruction::Bypass
        }
    }
}

fn all_ones(bits: usize) -> u64 {
    if bits >= 64 {
        u64::MAX
    } else {
        (1u64 << bits) - 1
    }
}

/// One device on the chain. Register vectors are indexed from the TDI end.
#[derive(Clone, Debug, PartialEq)]
pub struct DeviceScanModel {
    pub name: String,
    pub ir_length: usize,
    pub boundary_cells: usize,
    pub codes: InstructionCodes,
    current_instruction: u64,
    ir_shift: Vec<bool>,
    boundary_shift: Vec<bool>,
    boundary_register: Vec<bool>,
    bypass_bit: bool,
}

impl DeviceScanModel {
    pub fn new(name: impl Into<String>, ir_length: usize, boundary_cells: usize) -> Result<Self> {
        Self::with_codes(
            name,
            ir_length,
            boundary_cells,
            InstructionCodes::standard(ir_length),
        )
    }

    pub fn with_codes(
        name: impl Into<String>,
        ir_length: usize,
        boundary_cells: usize,
        codes: InstructionCodes,
    ) -> Result<Self> {
        let name = name.into();
        let distinct = [
            codes.bypass,
            codes.extest,
            codes.sample_preload,
            codes.probe,
        ];
        let fits = distinct.iter().all(|c| *c <= all_ones(ir_length));
        let unique = (0..4).all(|i| (i + 1..4).all(|j| distinct[i] != distinct[j]));
        if ir_length < 2 || !fits || !unique {
            return Err(TapError::IrTooShort(name));
        }
        Ok(DeviceScanModel {
            name,
            ir_length,
            boundary_cells,
            codes,
            current_instruction: codes.bypass,
            ir_shift: vec![false; ir_length],
            boundary_shift: vec![false; boundary_cells],
            boundary_register: vec![false; boundary_cells],
            bypass_bit: false,
        })
    }

    pub fn instruction(&self) -> Instruction {
        self.codes.decode(self.current_instruction)
    }

    pub fn bypass_selected(&self) -> bool {
        self.instruction() == Instruction::Bypass
    }

    /// Latched (updated) boundary register contents.
    pub fn boundary_register(&self) -> &[bool] {
        &self.boundary_register
    }

    fn dr_length(&self) -> usize {
        if self.bypass_selected() {
            1
        } else {
            self.boundary_cells
        }
    }

    fn path_len(&self, path: ScanPath) -> usize {
        match path {
            ScanPath::Ir => self.ir_length,
            ScanPath::Dr => self.dr_length(),
        }
    }

    fn capture(&mut self, path: ScanPath) {
        match path {
            ScanPath::Ir => {
                // Standard capture pattern: ...01 with the 1 nearest TDO.
                self.ir_shift.iter_mut().for_each(|b| *b = false);
                let n = self.ir_length;
                self.ir_shift[n - 1] = true;
            }
            ScanPath::Dr => {
                if self.bypass_selected() {
                    self.bypass_bit = false;
                } else {
                    self.boundary_shift.clone_from(&self.boundary_register);
                }
            }
        }
    }

    fn shift(&mut self, path: ScanPath, input: bool) -> bool {
        let reg: &mut Vec<bool> = match path {
            ScanPath::Ir => &mut self.ir_shift,
            ScanPath::Dr if self.bypass_selected() => {
                let out = self.bypass_bit;
                self.bypass_bit = input;
                return out;
            }
            ScanPath::Dr => &mut self.boundary_shift,
        };
        match reg.pop() {
            Some(out) => {
                reg.insert(0, input);
                out
            }
            None => input,
        }
    }

    fn update(&mut self, path: ScanPath) {
        match path {
            ScanPath::Ir => {
                let n = self.ir_length;
                self.current_instruction = (0..n)
                    .filter(|i| self.ir_shift[n - 1 - i])
                    .fold(0u64, |acc, i| acc | (1 << i));
            }
            ScanPath::Dr => {
                if !self.bypass_selected() {
                    self.boundary_register.clone_from(&self.boundary_shift);
                }
            }
        }
    }

    fn reset(&mut self) {
        self.current_instruction = self.codes.bypass;
    }

    /// IR register contents (TDI-end first) that decode to `instruction`.
    fn ir_bits(&self, instruction: Instruction) -> Vec<bool> {
        let code = self.codes.code(instruction);
        let n = self.ir_length;
        (0..n).map(|idx| code >> (n - 1 - idx) & 1 == 1).collect()
    }
}

/// Devices in chain order: TDI enters device 0, TDO leaves the last device.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScanChain {
    pub devices: Vec<DeviceScanModel>,
}

impl ScanChain {
    pub fn new(devices: Vec<DeviceScanModel>) -> Self {
        ScanChain { devices }
    }

    pub fn path_length(&self, path: ScanPath) -> usize {
        self.devices.iter().map(|d| d.path_len(path)).sum()
    }

    pub fn device(&self, name: &str) -> Option<&DeviceScanModel> {
        self.devices.iter().find(|d| d.name == name)
    }

    pub fn total_boundary_cells(&self) -> usize {
        self.devices.iter().map(|d| d.boundary_cells).sum()
    }
}

/// TCK cycle count.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CycleCount(pub u64);

impl Add for CycleCount {
    type Output = CycleCount;
    fn add(self, rhs: CycleCount) -> CycleCount {
        CycleCount(self.0 + rhs.0)
    }
}

impl AddAssign for CycleCount {
    fn add_assign(&mut self, rhs: CycleCount) {
        self.0 += rhs.0;
    }
}

impl CycleCount {
    pub fn seconds(self, f_tck: f64) -> f64 {
        self.0 as f64 / f_tck
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TraceRecord {
    pub cycle: u64,
    pub tms: bool,
    pub tdi: bool,
    pub tdo: bool,
}

impl fmt::Display for TraceRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{}",
            self.cycle, self.tms as u8, self.tdi as u8, self.tdo as u8
        )
    }
}

/// Instruction and boundary vector for one device in a configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfigTarget {
    pub instruction: Instruction,
    pub cells: Vec<bool>,
}

/// A TAP controller driving one scan chain, clock by clock.
#[derive(Clone, Debug)]
pub struct TapController {
    state: TapState,
    chain: ScanChain,
    cycles: u64,
    trace: Option<Vec<TraceRecord>>,
}

impl TapController {
    /// A controller parked in Run-Test/Idle. The power-up reset walk is not
    /// counted.
    pub fn new(chain: ScanChain) -> Self {
        let mut chain = chain;
        chain.devices.iter_mut().for_each(DeviceScanModel::reset);
        TapController {
            state: TapState::RunTestIdle,
            chain,
            cycles: 0,
            trace: None,
        }
    }

    pub fn enable_trace(&mut self) {
        self.trace.get_or_insert_with(Vec::new);
    }

    pub fn trace(&self) -> &[TraceRecord] {
        self.trace.as_deref().unwrap_or(&[])
    }

    pub fn state(&self) -> TapState {
        self.state
    }

    pub fn chain(&self) -> &ScanChain {
        &self.chain
    }

    /// Total TCK cycles clocked so far.
    pub fn cycles(&self) -> CycleCount {
        CycleCount(self.cycles)
    }

    /// One TCK period: act on the current state, then move on TMS. Returns TDO
    /// (low outside the shift states).
    pub fn clock(&mut self, tms: bool, tdi: bool) -> bool {
        let mut tdo = false;
        match self.state {
            TapState::CaptureDr => self
                .chain
                .devices
                .iter_mut()
                .for_each(|d| d.capture(ScanPath::Dr)),
            TapState::CaptureIr => self
                .chain
                .devices
                .iter_mut()
                .for_each(|d| d.capture(ScanPath::Ir)),
            TapState::ShiftDr | TapState::ShiftIr => {
                let path = if self.state == TapState::ShiftDr {
                    ScanPath::Dr
                } else {
                    ScanPath::Ir
                };
                let mut carry = tdi;
                for dev in self.chain.devices.iter_mut() {
                    carry = dev.shift(path, carry);
                }
                tdo = carry;
            }
            TapState::UpdateDr => self
                .chain
                .devices
                .iter_mut()
                .for_each(|d| d.update(ScanPath::Dr)),
            TapState::UpdateIr => self
                .chain
                .devices
                .iter_mut()
                .for_each(|d| d.update(ScanPath::Ir)),
            _ => {}
        }
        self.state = self.state.step(tms);
        if self.state == TapState::TestLogicReset {
            self.chain
                .devices
                .iter_mut()
                .for_each(DeviceScanModel::reset);
        }
        if let Some(trace) = self.trace.as_mut() {
            trace.push(TraceRecord {
                cycle: self.cycles,
                tms,
                tdi,
                tdo,
            });
        }
        self.cycles += 1;
        tdo
    }

    /// Five TMS=1 clocks then one TMS=0: back to Run-Test/Idle from anywhere.
    pub fn reset_to_idle(&mut self) -> CycleCount {
        for _ in 0..5 {
            self.clock(true, false);
        }
        self.clock(false, false);
        CycleCount(6)
    }

    /// Full scan from Run-Test/Idle back to Run-Test/Idle. `tdi[0]` is shifted
    /// first and ends up nearest TDO.
    pub fn scan(&mut self, path: ScanPath, tdi: &[bool]) -> Result<(Vec<bool>, CycleCount)> {
        if self.state != TapState::RunTestIdle {
            return Err(TapError::NotIdle(self.state));
        }
        let expected = self.chain.path_length(path);
        if tdi.len() != expected {
            return Err(TapError::LengthMismatch {
                path,
                expected,
                got: tdi.len(),
            });
        }
        let start = self.cycles;
        self.clock(true, false);
        if path == ScanPath::Ir {
            self.clock(true, false);
        }
        self.clock(false, false); // into Capture
                                  // An empty path goes Capture -> Exit1 without shifting.
        self.clock(tdi.is_empty(), false);
        let mut tdo = Vec::with_capacity(tdi.len());
        for (i, bit) in tdi.iter().enumerate() {
            let last = i + 1 == tdi.len();
            tdo.push(self.clock(last, *bit));
        }
        self.clock(true, false); // Exit1 -> Update
        self.clock(false, false); // Update -> Idle
        Ok((tdo, CycleCount(self.cycles - start)))
    }

    /// One IR scan selecting each device's instruction, then one DR scan
    /// loading every boundary register. Devices without a target reload their
    /// current contents under EXTEST, so the cost always covers the whole
    /// chain.
    pub fn configure(&mut self, targets: &BTreeMap<String, ConfigTarget>) -> Result<CycleCount> {
        for (name, target) in targets {
            let dev = self
                .chain
                .device(name)
                .ok_or_else(|| TapError::UnknownDevice(name.clone()))?;
            if target.cells.len() != dev.boundary_cells {
                return Err(TapError::TargetLength {
                    device: name.clone(),
                    expected: dev.boundary_cells,
                    got: target.cells.len(),
                });
            }
        }
        let plan: Vec<(Instruction, Vec<bool>)> = self
            .chain
            .devices
            .iter()
            .map(|d| match targets.get(&d.name) {
                Some(t) if t.instruction != Instruction::Bypass => (t.instruction, t.cells.clone()),
                _ => (Instruction::Extest, d.boundary_register.clone()),
            })
            .collect();

        let ir_concat: Vec<bool> = self
            .chain
            .devices
            .iter()
            .zip(&plan)
            .flat_map(|(d, (ins, _))| d.ir_bits(*ins))
            .collect();
        let (_, ir_cost) = self.scan(ScanPath::Ir, &reversed(ir_concat))?;

        let dr_concat: Vec<bool> = plan.into_iter().flat_map(|(_, cells)| cells).collect();
        let (_, dr_cost) = self.scan(ScanPath::Dr, &reversed(dr_concat))?;
        Ok(ir_cost + dr_cost)
    }
}

/// After a full-length shift the chain holds the input reversed, so the TDI
/// stream for a desired chain image is that image reversed.
fn reversed(mut bits: Vec<bool>) -> Vec<bool> {
    bits.reverse();
    bits
}

/// TCK cycles of one scan of `bits` from Run-Test/Idle back to Run-Test/Idle.
pub fn scan_cost(path: ScanPath, bits: usize) -> CycleCount {
    CycleCount(match path {
        ScanPath::Ir => bits as u64 + 6,
        ScanPath::Dr => bits as u64 + 5,
    })
}

/// Cost of [`TapController::configure`] on a chain, computed without
/// clocking it.
pub fn configure_cost(chain: &ScanChain) -> CycleCount {
    let ir: usize = chain.devices.iter().map(|d| d.ir_length).sum();
    scan_cost(ScanPath::Ir, ir) + scan_cost(ScanPath::Dr, chain.total_boundary_cells())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(specs: &[(usize, usize)]) -> TapController {
        let devices = specs
            .iter()
            .enumerate()
            .map(|(i, (ir, cells))| DeviceScanModel::new(format!("d{i}"), *ir, *cells).unwrap())
            .collect();
        TapController::new(ScanChain::new(devices))
    }

    #[test]
    fn standard_edges() {
        assert_eq!(
            step_tms(TapState::TestLogicReset, false),
            TapState::RunTestIdle
        );
        assert_eq!(step_tms(TapState::ShiftDr, true), TapState::Exit1Dr);
    }

    #[test]
    fn five_ones_reset_from_every_state() {
        for s in TapState::ALL {
            let end = (0..5).fold(s, |acc, _| acc.step(true));
            assert_eq!(end, TapState::TestLogicReset, "from {s:?}");
        }
    }

    #[test]
    fn bypass_chain_delays_by_device_count() {
        let mut tap = chain(&[(4, 8), (4, 8)]);
        let (tdo, _) = tap.scan(ScanPath::Dr, &[true, false]).unwrap();
        assert_eq!(tdo, vec![false, false]);
        // The bits just shifted in come out on the next scan.
        let (tdo, _) = tap.scan(ScanPath::Dr, &[false, false]).unwrap();
        assert_eq!(tdo, vec![false, false]); // capture clears bypass bits
    }

    #[test]
    fn ir_scan_of_four_bits_costs_ten() {
        let mut tap = chain(&[(4, 8)]);
        let (tdo, cost) = tap.scan(ScanPath::Ir, &[true; 4]).unwrap();
        assert_eq!(cost, CycleCount(10));
        // Captured pattern ...01 appears LSB first on TDO.
        assert_eq!(tdo, vec![true, false, false, false]);
        assert_eq!(tap.state(), TapState::RunTestIdle);
    }

    #[test]
    fn dr_scan_costs_length_plus_five() {
        let mut tap = chain(&[(4, 8)]);
        let ir = tap.chain.devices[0].ir_bits(Instruction::Extest);
        tap.scan(ScanPath::Ir, &reversed(ir)).unwrap();
        let (_, cost) = tap.scan(ScanPath::Dr, &[false; 8]).unwrap();
        assert_eq!(cost, CycleCount(13));
    }

    #[test]
    fn length_mismatch() {
        let mut tap = chain(&[(4, 8)]);
        assert!(matches!(
            tap.scan(ScanPath::Ir, &[true; 3]),
            Err(TapError::LengthMismatch {
                expected: 4,
                got: 3,
                ..
            })
        ));
    }

    #[test]
    fn configure_single_device_costs_23() {
        let mut tap = chain(&[(4, 8)]);
        let mut targets = BTreeMap::new();
        let cells = vec![true, false, true, true, false, false, true, false];
        targets.insert(
            "d0".to_string(),
            ConfigTarget {
                instruction: Instruction::Probe,
                cells: cells.clone(),
            },
        );
        assert_eq!(tap.configure(&targets).unwrap(), CycleCount(23));
        assert_eq!(tap.chain().devices[0].boundary_register(), &cells[..]);
        assert_eq!(tap.chain().devices[0].instruction(), Instruction::Probe);
    }

    #[test]
    fn empty_configure_still_scans_everything() {
        let mut tap = chain(&[(4, 8), (3, 5)]);
        let cost = tap.configure(&BTreeMap::new()).unwrap();
        assert_eq!(cost, configure_cost(tap.chain()));
        assert_eq!(cost, CycleCount(7 + 6 + 13 + 5));
    }

    #[test]
    fn configure_is_idempotent_and_places_vectors() {
        let mut tap = chain(&[(4, 3), (5, 4)]);
        let mut targets = BTreeMap::new();
        targets.insert(
            "d0".into(),
            ConfigTarget {
                instruction: Instruction::Extest,
                cells: vec![true, false, false],
            },
        );
        targets.insert(
            "d1".into(),
            ConfigTarget {
                instruction: Instruction::Probe,
                cells: vec![false, true, true, false],
            },
        );
        tap.configure(&targets).unwrap();
        let first = tap.chain().clone();
        tap.configure(&targets).unwrap();
        assert_eq!(tap.chain(), &first);
        assert_eq!(first.devices[0].boundary_register(), &[true, false, false]);
        assert_eq!(
            first.devices[1].boundary_register(),
            &[false, true, true, false]
        );
        assert_eq!(first.devices[1].instruction(), Instruction::Probe);
    }

    #[test]
    fn unknown_device() {
        let mut tap = chain(&[(4, 8)]);
        let mut targets = BTreeMap::new();
        targets.insert(
            "nope".into(),
            ConfigTarget {
                instruction: Instruction::Extest,
                cells: vec![],
            },
        );
        assert_eq!(
            tap.configure(&targets),
            Err(TapError::UnknownDevice("nope".into()))
        );
    }

    #[test]
    fn doubling_cells_increases_cost() {
        let a = configure_cost(&chain(&[(4, 8)]).chain);
        let b = configure_cost(&chain(&[(4, 16)]).chain);
        assert!(b > a);
    }

    #[test]
    fn trace_lines() {
        let mut tap = chain(&[(2, 1)]);
        tap.enable_trace();
        tap.scan(ScanPath::Ir, &[true, true]).unwrap();
        assert_eq!(tap.trace().len(), 8);
        assert_eq!(tap.trace()[0].to_string(), "0,1,0,0");
    }

    #[test]
    fn ir_too_short() {
        assert!(matches!(
            DeviceScanModel::new("x", 1, 4),
            Err(TapError::IrTooShort(_))
        ));
    }
}
