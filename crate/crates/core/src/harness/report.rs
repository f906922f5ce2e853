// SPDX-License-Identifier: Apache-2.0

//! Run summaries computed from an event log alone.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use indexmap::IndexMap;

use super::log::{Category, EventLog, Record};
use crate::measurement::{classify_detectability, Detectability};

#[derive(Clone, Debug, PartialEq)]
pub struct FaultOutcome {
    pub target: String,
    pub kind: String,
    pub onset: u64,
    /// First failing test that looked at what the fault disturbs.
    pub detected_at: Option<u64>,
    pub detected_by: Option<String>,
}

impl FaultOutcome {
    pub fn latency(&self) -> Option<f64> {
        self.detected_at.map(|t| (t - self.onset) as f64 * 1e-9)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    pub start_decision: Option<String>,
    pub tests_run: usize,
    pub tests_failed: usize,
    pub faults: Vec<FaultOutcome>,
    pub false_alarms: usize,
    pub bypasses: usize,
    pub unmet_demands: usize,
    pub critical_alerts: usize,
    pub localized: Vec<(u64, String)>,
    /// Starts per second of each monitored test, averaged over tests.
    pub achieved_loop_rate: Option<f64>,
    /// Per tagged class: detectability of failures over its tests.
    pub detectability: IndexMap<String, Detectability>,
}

impl Report {
    pub fn detections(&self) -> usize {
        self.faults
            .iter()
            .filter(|f| f.detected_at.is_some())
            .count()
    }
}

struct ActiveFault {
    index: usize,
    affects: Vec<String>,
}

fn split(v: Option<&str>) -> Vec<String> {
    v.map(|s| s.split('|').map(str::to_string).collect())
        .unwrap_or_default()
}

fn is_fail(r: &Record) -> bool {
    r.field("result") == Some("fail")
}

pub fn summarize(log: &EventLog) -> Report {
    let mut rep = Report::default();
    let mut active: Vec<ActiveFault> = Vec::new();
    let mut starts: BTreeMap<&str, Vec<u64>> = BTreeMap::new();
    let mut class_history: IndexMap<String, Vec<bool>> = IndexMap::new();

    for r in &log.records {
        match r.category {
            Category::Fault => {
                let affects = split(r.field("affects"));
                if r.verb() == "repair" {
                    active.retain(|a| !a.affects.contains(&r.subject));
                } else {
                    active.push(ActiveFault {
                        index: rep.faults.len(),
                        affects,
                    });
                    rep.faults.push(FaultOutcome {
                        target: r.subject.clone(),
                        kind: r.verb().to_string(),
                        onset: r.time,
                        detected_at: None,
                        detected_by: None,
                    });
                }
            }
            Category::Test => {
                let phase = r.field("phase").unwrap_or("run");
                if phase == "remote" {
                    continue;
                }
                rep.tests_run += 1;
                if phase == "run" {
                    starts.entry(&r.subject).or_default().push(r.time);
                }
                let failed = is_fail(r);
                if let Some(c) = r.field("class") {
                    class_history.entry(c.to_string()).or_default().push(failed);
                }
                if !failed {
                    continue;
                }
                rep.tests_failed += 1;
                let on = split(r.field("on"));
                let mut explained = false;
                for a in &active {
                    if a.affects.iter().any(|x| on.contains(x)) {
                        explained = true;
                        let f = &mut rep.faults[a.index];
                        if f.detected_at.is_none() {
                            f.detected_at = Some(r.time);
                            f.detected_by = Some(r.subject.clone());
                        }
                    }
                }
                if !explained {
                    rep.false_alarms += 1;
                }
            }
            Category::Bypass => match r.verb() {
                "applied" => rep.bypasses += 1,
                "UnmetDemand" => rep.unmet_demands += 1,
                _ => {}
            },
            Category::Alert => {
                if r.verb() == "CriticalAlert" {
                    rep.critical_alerts += 1;
                }
            }
            Category::Idr => {
                if r.verb() == "localized" {
                    rep.localized.push((r.time, r.subject.clone()));
                    for a in active.iter().filter(|a| a.affects.contains(&r.subject)) {
                        let f = &mut rep.faults[a.index];
                        if f.detected_at.is_none() {
                            f.detected_at = Some(r.time);
                            f.detected_by = Some(r.subject.clone());
                        }
                    }
                }
            }
            Category::Decision => {
                if let Some(d) = r.detail.strip_prefix("StartDecision=") {
                    rep.start_decision = Some(d.to_string());
                }
            }
        }
    }

    let gaps: Vec<u64> = starts
        .values()
        .flat_map(|s| s.windows(2).map(|w| w[1] - w[0]))
        .collect();
    if !gaps.is_empty() {
        let mean = gaps.iter().sum::<u64>() as f64 * 1e-9 / gaps.len() as f64;
        rep.achieved_loop_rate = Some(1.0 / mean);
    }
    for (class, hist) in class_history {
        if let Ok(d) = classify_detectability(&hist) {
            rep.detectability.insert(class, d);
        }
    }
    rep
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "start_decision: {}",
            self.start_decision.as_deref().unwrap_or("-")
        );
        let _ = writeln!(s, "tests_run: {}", self.tests_run);
        let _ = writeln!(s, "tests_failed: {}", self.tests_failed);
        let _ = writeln!(s, "faults: {}", self.faults.len());
        let _ = writeln!(s, "detections: {}", self.detections());
        let _ = writeln!(s, "false_alarms: {}", self.false_alarms);
        let _ = writeln!(s, "bypasses: {}", self.bypasses);
        let _ = writeln!(s, "unmet_demands: {}", self.unmet_demands);
        let _ = writeln!(s, "critical_alerts: {}", self.critical_alerts);
        match self.achieved_loop_rate {
            Some(r) => {
                let _ = writeln!(s, "achieved_loop_rate_hz: {r:.3}");
            }
            None => {
                let _ = writeln!(s, "achieved_loop_rate_hz: -");
            }
        }
        for fo in &self.faults {
            let lat = fo
                .latency()
                .map(|l| format!("{l:.9}"))
                .unwrap_or_else(|| "undetected".into());
            let _ = writeln!(
                s,
                "fault {} {} at {}: latency {} by {}",
                fo.target,
                fo.kind,
                super::log::format_time(fo.onset),
                lat,
                fo.detected_by.as_deref().unwrap_or("-")
            );
        }
        for (t, d) in &self.localized {
            let _ = writeln!(s, "localized {d} at {}", super::log::format_time(*t));
        }
        if !self.detectability.is_empty() {
            let _ = writeln!(s, "detectability:");
            for (c, d) in &self.detectability {
                let _ = writeln!(s, "  {c}: {d}");
            }
        }
        f.write_str(&s)
    }
}
