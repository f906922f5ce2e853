// SPDX-License-Identifier: Apache-2.0

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use bscan_olm::harness::scenario::{parse_scenario, Scenario};
use bscan_olm::harness::sim::{self, Options, SimOutcome};
use bscan_olm::tap_engine::{ConfigTarget, DeviceScanModel, Instruction, ScanChain, TapState};

pub fn scenario_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios")
}

pub fn bundled() -> Vec<String> {
    let mut names: Vec<String> = std::fs::read_dir(scenario_dir())
        .unwrap()
        .filter_map(|e| {
            let p = e.ok()?.path();
            (p.extension()? == "scn").then(|| p.file_stem().unwrap().to_string_lossy().into_owned())
        })
        .collect();
    names.sort();
    names
}

pub fn load(name: &str) -> Scenario {
    let text = std::fs::read_to_string(scenario_dir().join(format!("{name}.scn"))).unwrap();
    parse_scenario(&text).unwrap()
}

pub fn run(name: &str) -> SimOutcome {
    sim::run(&load(name), &Options::default()).unwrap()
}

// ---------------------------------------------------------------------------
// Independent TAP oracle: the 16-state table written out by name.

pub fn oracle_next(state: &str, tms: bool) -> &'static str {
    match (state, tms) {
        ("TestLogicReset", true) => "TestLogicReset",
        ("TestLogicReset", false) => "RunTestIdle",
        ("RunTestIdle", true) => "SelectDrScan",
        ("RunTestIdle", false) => "RunTestIdle",
        ("SelectDrScan", true) => "SelectIrScan",
        ("SelectDrScan", false) => "CaptureDr",
        ("CaptureDr", true) => "Exit1Dr",
        ("CaptureDr", false) => "ShiftDr",
        ("ShiftDr", true) => "Exit1Dr",
        ("ShiftDr", false) => "ShiftDr",
        ("Exit1Dr", true) => "UpdateDr",
        ("Exit1Dr", false) => "PauseDr",
        ("PauseDr", true) => "Exit2Dr",
        ("PauseDr", false) => "PauseDr",
        ("Exit2Dr", true) => "UpdateDr",
        ("Exit2Dr", false) => "ShiftDr",
        ("UpdateDr", true) => "SelectDrScan",
        ("UpdateDr", false) => "RunTestIdle",
        ("SelectIrScan", true) => "TestLogicReset",
        ("SelectIrScan", false) => "CaptureIr",
        ("CaptureIr", true) => "Exit1Ir",
        ("CaptureIr", false) => "ShiftIr",
        ("ShiftIr", true) => "Exit1Ir",
        ("ShiftIr", false) => "ShiftIr",
        ("Exit1Ir", true) => "UpdateIr",
        ("Exit1Ir", false) => "PauseIr",
        ("PauseIr", true) => "Exit2Ir",
        ("PauseIr", false) => "PauseIr",
        ("Exit2Ir", true) => "UpdateIr",
        ("Exit2Ir", false) => "ShiftIr",
        ("UpdateIr", true) => "SelectDrScan",
        ("UpdateIr", false) => "RunTestIdle",
        _ => unreachable!("unknown state {state}"),
    }
}

pub fn name(s: TapState) -> String {
    format!("{s:?}")
}

/// Clocks needed to shift `bits` through the IR or DR path from Run-Test/Idle
/// and return there, found by walking the oracle table.
pub fn oracle_scan_cycles(ir: bool, bits: usize) -> u64 {
    let mut tms: Vec<bool> = if ir {
        vec![true, true, false]
    } else {
        vec![true, false]
    };
    if bits == 0 {
        // Capture straight to Exit1.
        tms.push(true);
    } else {
        tms.push(false);
        for i in 0..bits {
            tms.push(i + 1 == bits);
        }
    }
    tms.extend([true, false]);
    let shift = if ir { "ShiftIr" } else { "ShiftDr" };
    let mut state = "RunTestIdle";
    let mut shifted = 0;
    for t in &tms {
        if state == shift {
            shifted += 1;
        }
        state = oracle_next(state, *t);
    }
    assert_eq!(state, "RunTestIdle");
    assert_eq!(shifted, bits);
    tms.len() as u64
}

pub fn chain_of(specs: &[(usize, usize)]) -> ScanChain {
    ScanChain::new(
        specs
            .iter()
            .enumerate()
            .map(|(i, (ir, cells))| DeviceScanModel::new(format!("d{i}"), *ir, *cells).unwrap())
            .collect(),
    )
}

pub fn targets_for(chain: &ScanChain, bits: &[bool]) -> BTreeMap<String, ConfigTarget> {
    let mut k = 0;
    chain
        .devices
        .iter()
        .map(|d| {
            let cells: Vec<bool> = (0..d.boundary_cells)
                .map(|_| {
                    k += 1;
                    bits[(k - 1) % bits.len()]
                })
                .collect();
            let instruction = if k % 2 == 0 {
                Instruction::Extest
            } else {
                Instruction::Probe
            };
            (d.name.clone(), ConfigTarget { instruction, cells })
        })
        .collect()
}
