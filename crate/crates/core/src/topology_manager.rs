// SPDX-License-Identifier: Apache-2.0

//! Circuit topology manager: test master, scan configuration per test,
//! measurement, result evaluation, startup BIST and bus injection.

use std::collections::BTreeMap;
use std::fmt;

use indexmap::IndexMap;
use thiserror::Error;

use crate::analog_fabric::{
    AbmSwitchState, AnalogBus, BusLine, Connection, FabricError, NoiseSource, Sta400Block,
    Sta400Routing,
};
use crate::ecu_model::{EcuError, EcuNetlist, SignalClass};
use crate::measurement::{
    diff_compare_detail, measure_dc, measure_duty, measure_spectrum, ComparatorConfig,
    MeasureError, MeasurementResult, TestKind,
};
use crate::reconfigure::{BypassAssignment, BypassOutcome, Hold, ReconfError, Reconfigurator};
use crate::signals::Waveform;
use crate::tap_engine::{ConfigTarget, Instruction, TapController, TapError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TmError {
    #[error("segment `{0}` has its bus pair in use")]
    SegmentBusy(String),
    #[error("`{0}` has no ABM access")]
    NoAbmAccess(String),
    #[error("test `{0}` is not declared")]
    UnknownTest(String),
    #[error("test `{test}`: {reason}")]
    BadDescriptor { test: String, reason: String },
    #[error("node `{0}` has no slot on the scan chain")]
    Unmapped(String),
    #[error(transparent)]
    Tap(#[from] TapError),
    #[error(transparent)]
    Fabric(#[from] FabricError),
    #[error(transparent)]
    Ecu(#[from] EcuError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Reconf(#[from] ReconfError),
}

pub type Result<T> = std::result::Result<T, TmError>;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum TestTarget {
    Node(String),
    /// Both ends of an interconnect, driver on AT1 and receiver on AT2.
    Link(String),
}

impl fmt::Display for TestTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TestTarget::Node(n) | TestTarget::Link(n) => f.write_str(n),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TestDescriptor {
    pub id: String,
    pub kind: TestKind,
    pub target: TestTarget,
    /// Expected value and tolerance.
    pub reference: Option<(f64, f64)>,
    pub period: f64,
    pub segment: String,
    pub window: f64,
    /// Signal class this test is reporting on, for detectability tables.
    pub class: Option<SignalClass>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum StartDecision {
    #[default]
    NotStarted,
    Refused,
    Degraded,
    Running,
}

impl fmt::Display for StartDecision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StartDecision::NotStarted => "NotStarted",
            StartDecision::Refused => "Refused",
            StartDecision::Degraded => "Degraded",
            StartDecision::Running => "Running",
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum LinkStatus {
    #[default]
    Healthy,
    Failed,
    Bypassed,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct HealthState {
    pub last: IndexMap<String, MeasurementResult>,
    pub links: IndexMap<String, LinkStatus>,
    pub start: StartDecision,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Action {
    NoAction,
    RequestBypass {
        link: String,
    },
    CriticalAlert {
        subject: String,
        link: Option<String>,
    },
    /// Non-critical failure with nothing to bypass.
    Anomaly {
        subject: String,
    },
}

/// Where each ABM node sits on the chain: device name and first cell.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ChainLayout {
    pub slots: IndexMap<String, (String, usize)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Execution {
    pub result: MeasurementResult,
    pub t_con: f64,
    pub t_test: f64,
    pub cycles: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BistReport {
    pub decision: StartDecision,
    pub executions: Vec<(String, Execution)>,
    pub failed: Vec<String>,
    pub bypasses: Vec<(String, BypassOutcome)>,
    /// Time at which startup finished.
    pub end: f64,
}

pub struct TopologyManager {
    pub net: EcuNetlist,
    pub bus: AnalogBus,
    pub tap: TapController,
    pub layout: ChainLayout,
    pub reconf: Reconfigurator,
    pub noise: NoiseSource,
    pub comparator: ComparatorConfig,
    pub f_tck: f64,
    /// Replaces the scan cost of one configuration when set.
    pub config_cycles: Option<u64>,
    /// When false, failures are reported but never bypassed.
    pub reconfigure: bool,
    pub tests: IndexMap<String, TestDescriptor>,
    pub health: HealthState,
}

impl TopologyManager {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        net: EcuNetlist,
        bus: AnalogBus,
        tap: TapController,
        layout: ChainLayout,
        tests: Vec<TestDescriptor>,
        f_tck: f64,
        seed: u64,
    ) -> Result<Self> {
        let mut mgr = TopologyManager {
            health: HealthState {
                links: net
                    .links()
                    .map(|l| (l.name.clone(), LinkStatus::Healthy))
                    .collect(),
                ..Default::default()
            },
            net,
            bus,
            tap,
            layout,
            reconf: Reconfigurator::default(),
            noise: NoiseSource::new(seed),
            comparator: ComparatorConfig::default(),
            f_tck,
            config_cycles: None,
            reconfigure: true,
            tests: IndexMap::new(),
        };
        for d in tests {
            mgr.check_descriptor(&d)?;
            mgr.tests.insert(d.id.clone(), d);
        }
        Ok(mgr)
    }

    fn bad(d: &TestDescriptor, reason: impl Into<String>) -> TmError {
        TmError::BadDescriptor {
            test: d.id.clone(),
            reason: reason.into(),
        }
    }

    fn check_descriptor(&self, d: &TestDescriptor) -> Result<()> {
        if !(d.period > 0.0) || !(d.window > 0.0) {
            return Err(Self::bad(d, "period and window must be positive"));
        }
        let nodes = self.target_nodes(&d.target)?;
        match (&d.target, d.kind) {
            (TestTarget::Link(_), TestKind::Interconnect)
            | (TestTarget::Node(_), TestKind::Dc)
            | (TestTarget::Node(_), TestKind::Duty)
            | (TestTarget::Node(_), TestKind::Spectrum) => {}
            _ => {
                return Err(Self::bad(
                    d,
                    "interconnect tests target links, other tests target nodes",
                ))
            }
        }
        for n in &nodes {
            match self.bus.segment_of(n) {
                Some((seg, _)) if seg == d.segment => {}
                Some((seg, _)) => {
                    return Err(Self::bad(
                        d,
                        format!("node `{n}` is in segment `{seg}`, not `{}`", d.segment),
                    ))
                }
                None => return Err(TmError::NoAbmAccess(n.clone())),
            }
            if !self.layout.slots.contains_key(n) {
                return Err(TmError::Unmapped(n.clone()));
            }
        }
        Ok(())
    }

    /// Nodes a target attaches to the bus.
    pub fn target_nodes(&self, target: &TestTarget) -> Result<Vec<String>> {
        match target {
            TestTarget::Node(n) => {
                self.net
                    .node(n)
                    .ok_or_else(|| EcuError::UnknownNode(n.clone()))?;
                Ok(vec![n.clone()])
            }
            TestTarget::Link(l) => {
                let link = self
                    .net
                    .link(l)
                    .ok_or_else(|| ReconfError::UnknownLink(l.clone()))?;
                if !link.has_abm {
                    return Err(TmError::NoAbmAccess(l.clone()));
                }
                Ok(vec![link.from.clone(), link.to.clone()])
            }
        }
    }

    /// The interconnect a test speaks for, if it has one.
    pub fn link_of(&self, d: &TestDescriptor) -> Option<String> {
        match &d.target {
            TestTarget::Link(l) => Some(l.clone()),
            TestTarget::Node(n) => self
                .net
                .link_into(n)
                .filter(|l| l.has_abm)
                .map(|l| l.name.clone()),
        }
    }

    pub fn is_critical(&self, d: &TestDescriptor) -> bool {
        let crit = |n: &str| self.net.node(n).is_some_and(|n| n.critical);
        match &d.target {
            TestTarget::Node(n) => crit(n),
            TestTarget::Link(l) => self
                .net
                .link(l)
                .is_some_and(|l| crit(&l.from) || crit(&l.to)),
        }
    }

    pub fn segment_pair(&self, segment: &str) -> Option<usize> {
        self.bus.segments().get(segment).map(|s| s.pair)
    }

    pub fn segment_busy(&self, segment: &str) -> bool {
        self.segment_pair(segment)
            .is_some_and(|p| self.reconf.is_pair_held(p) || self.bus.is_linked(p))
    }

    /// Switch pattern of every ABM for a test on `taps` (AT1 first), keeping
    /// whatever bypasses and injections hold their pairs.
    fn routing(&self, taps: &[String]) -> IndexMap<String, Sta400Routing> {
        let mut r: IndexMap<String, Sta400Routing> = self
            .layout
            .slots
            .keys()
            .map(|n| (n.clone(), Sta400Routing::CorePath))
            .collect();
        for (_, hold) in self.reconf.holds() {
            match hold {
                Hold::Bypass(BypassAssignment { interconnect, .. }) => {
                    if let Some(l) = self.net.link(interconnect) {
                        r.insert(l.from.clone(), Sta400Routing::TapAt1);
                        r.insert(l.to.clone(), Sta400Routing::Inject(BusLine::At2));
                    }
                }
                Hold::Injection { node, .. } => {
                    r.insert(node.clone(), Sta400Routing::Inject(BusLine::At2));
                }
            }
        }
        let lines = [Sta400Routing::TapAt1, Sta400Routing::TapAt2];
        for (n, mode) in taps.iter().zip(lines) {
            r.insert(n.clone(), mode);
        }
        r
    }

    /// Scans the routing for `taps` into the chain. Returns TCK cycles.
    fn configure_for(&mut self, taps: &[String]) -> Result<u64> {
        let routing = self.routing(taps);
        let mut targets: BTreeMap<String, ConfigTarget> = BTreeMap::new();
        for dev in &self.tap.chain().devices {
            targets.insert(
                dev.name.clone(),
                ConfigTarget {
                    instruction: Instruction::Extest,
                    cells: vec![false; dev.boundary_cells],
                },
            );
        }
        // STA400 blocks carry two channels; pair consecutive ABMs of a device.
        let mut blocks: BTreeMap<(String, usize), Sta400Block> = BTreeMap::new();
        for (node, (dev, offset)) in &self.layout.slots {
            let mode = routing.get(node).copied().unwrap_or_default();
            let abm_index = offset / AbmSwitchState::CELLS;
            let block = blocks.entry((dev.clone(), abm_index / 2)).or_default();
            *block = block.route(abm_index % 2, mode)?;
            let state = mode.abm_state();
            state.validate(false)?;
            let t = targets
                .get_mut(dev)
                .ok_or_else(|| TapError::UnknownDevice(dev.clone()))?;
            t.cells[*offset..offset + AbmSwitchState::CELLS].copy_from_slice(&state.to_cells());
            if mode != Sta400Routing::CorePath {
                t.instruction = Instruction::Probe;
            }
        }
        let cycles = self.tap.configure(&targets)?.0;
        Ok(self.config_cycles.unwrap_or(cycles))
    }

    /// Configures the chain, attaches the target to its segment's pair and
    /// measures. `charge_config` is false when the configuration cost has
    /// already been paid this sweep.
    pub fn execute_test(&mut self, id: &str, t: f64, charge_config: bool) -> Result<Execution> {
        let d = self
            .tests
            .get(id)
            .ok_or_else(|| TmError::UnknownTest(id.to_string()))?
            .clone();
        let pair = self
            .segment_pair(&d.segment)
            .ok_or_else(|| TmError::SegmentBusy(d.segment.clone()))?;
        if self.segment_busy(&d.segment) {
            return Err(TmError::SegmentBusy(d.segment.clone()));
        }
        let taps = self.target_nodes(&d.target)?;
        let cycles = self.configure_for(&taps)?;
        let t_con = if charge_config {
            cycles as f64 / self.f_tck
        } else {
            0.0
        };
        let start = t + t_con;
        let window = (start, start + d.window);

        self.bus.release(pair)?;
        for (n, line) in taps.iter().zip([BusLine::At1, BusLine::At2]) {
            self.bus.connect(pair, line, Connection::Tap(n.clone()))?;
        }
        let net = &self.net;
        let resolved = self
            .bus
            .bus_resolve(pair, |n| net.node_waveform(n, window).ok());
        self.bus.release(pair)?;
        let (at1, at2) = resolved?;

        let bound = self.bus.model.dc_noise_bound;
        let (value, triggered, t_test) = match d.kind {
            TestKind::Interconnect => {
                let c = diff_compare_detail(&at1, &at2, &self.comparator, window)?;
                (c.peak, c.triggered, d.window)
            }
            TestKind::Dc => {
                let (v, cost) = measure_dc(&at1, window, &mut self.noise, bound)?;
                (v, false, cost)
            }
            TestKind::Duty => match measure_duty(&at1, window) {
                Ok(v) => (v, false, d.window),
                Err(MeasureError::NoEdges | MeasureError::TooFewPeriods) => {
                    (f64::NAN, true, d.window)
                }
                Err(e) => return Err(e.into()),
            },
            TestKind::Spectrum => match measure_spectrum(&at1, window, &mut self.noise, bound) {
                Ok((f, cost)) => (f, false, cost),
                Err(MeasureError::NoSignal) => (f64::NAN, true, d.window),
                Err(e) => return Err(e.into()),
            },
        };
        let result = MeasurementResult {
            test_id: d.id.clone(),
            kind: d.kind,
            value,
            triggered,
            window,
            cost: t_con + t_test,
        };
        self.health.last.insert(d.id.clone(), result.clone());
        Ok(Execution {
            result,
            t_con,
            t_test,
            cycles,
        })
    }

    /// Pass/fail of a result against its descriptor. A measurement that
    /// could not be taken (no edges, no spectral line) fails.
    pub fn evaluate(d: &TestDescriptor, r: &MeasurementResult) -> bool {
        if r.triggered {
            return false;
        }
        match d.reference {
            Some((v, tol)) if d.kind != TestKind::Interconnect => (r.value - v).abs() <= tol,
            _ => true,
        }
    }

    pub fn handle_result(&mut self, r: &MeasurementResult) -> Action {
        let Some(d) = self.tests.get(&r.test_id).cloned() else {
            return Action::NoAction;
        };
        let link = self.link_of(&d);
        if Self::evaluate(&d, r) {
            if let Some(l) = &link {
                if self.health.links.get(l) == Some(&LinkStatus::Failed) {
                    self.health.links.insert(l.clone(), LinkStatus::Healthy);
                    self.reconf.forget_queued(l);
                }
            }
            return Action::NoAction;
        }
        if let Some(l) = &link {
            if self
                .health
                .links
                .get(l)
                .is_some_and(|s| *s != LinkStatus::Healthy)
            {
                return Action::NoAction;
            }
            self.health.links.insert(l.clone(), LinkStatus::Failed);
        }
        if self.is_critical(&d) {
            Action::CriticalAlert {
                subject: d.target.to_string(),
                link,
            }
        } else if let Some(link) = link {
            Action::RequestBypass { link }
        } else {
            Action::Anomaly {
                subject: d.target.to_string(),
            }
        }
    }

    /// Bypass a failed interconnect, or queue it if no pair is free.
    pub fn request_bypass(&mut self, link: &str, t: f64) -> Result<BypassOutcome> {
        let out =
            self.reconf
                .request_bypass(&mut self.bus, &mut self.net, link, t, &mut self.noise)?;
        if matches!(out, BypassOutcome::Applied(_)) {
            self.health
                .links
                .insert(link.to_string(), LinkStatus::Bypassed);
        }
        Ok(out)
    }

    /// Drops a bypass whose fault has been repaired, then serves the queue.
    pub fn release_bypass(&mut self, link: &str, t: f64) -> Result<Vec<BypassAssignment>> {
        if self
            .reconf
            .release_bypass(&mut self.bus, &mut self.net, link, t)?
        {
            self.health
                .links
                .insert(link.to_string(), LinkStatus::Healthy);
        }
        let applied = self
            .reconf
            .retry_queue(&mut self.bus, &mut self.net, t, &mut self.noise)?;
        for a in &applied {
            self.health
                .links
                .insert(a.interconnect.clone(), LinkStatus::Bypassed);
        }
        Ok(applied)
    }

    pub fn inject_signal(&mut self, node: &str, w: Waveform, t: f64) -> Result<()> {
        if self.bus.segment_of(node).is_none() {
            return Err(TmError::NoAbmAccess(node.to_string()));
        }
        match self
            .reconf
            .inject(&mut self.bus, &mut self.net, node, w, t, &mut self.noise)
        {
            Err(ReconfError::SegmentBusy(s)) => Err(TmError::SegmentBusy(s)),
            Err(ReconfError::NoAbmAccess(n)) => Err(TmError::NoAbmAccess(n)),
            other => Ok(other?),
        }
    }

    pub fn release_injection(&mut self, node: &str, t: f64) -> Result<bool> {
        Ok(self
            .reconf
            .release_injection(&mut self.bus, &mut self.net, node, t)?)
    }

    /// Runs every interconnect test once from `t`, back to back, and decides
    /// whether the system may start.
    pub fn run_startup_bist(&mut self, t: f64) -> Result<BistReport> {
        let ids: Vec<String> = self
            .tests
            .values()
            .filter(|d| d.kind == TestKind::Interconnect)
            .map(|d| d.id.clone())
            .collect();
        let mut now = t;
        let mut executions = Vec::new();
        let mut failed = Vec::new();
        let mut critical = false;
        for id in ids {
            let ex = self.execute_test(&id, now, true)?;
            now += ex.result.cost;
            let d = &self.tests[&id];
            if !Self::evaluate(d, &ex.result) {
                critical |= self.is_critical(d);
                failed.push(id.clone());
                if let Some(l) = self.link_of(d) {
                    self.health.links.insert(l, LinkStatus::Failed);
                }
            }
            executions.push((id, ex));
        }
        let decision = if critical {
            StartDecision::Refused
        } else if failed.is_empty() {
            StartDecision::Running
        } else {
            StartDecision::Degraded
        };
        let mut bypasses = Vec::new();
        if decision == StartDecision::Degraded && self.reconfigure {
            for id in &failed {
                if let Some(l) = self.link_of(&self.tests[id].clone()) {
                    let out = self.request_bypass(&l, now)?;
                    bypasses.push((l, out));
                }
            }
        }
        self.health.start = decision;
        Ok(BistReport {
            decision,
            executions,
            failed,
            bypasses,
            end: now,
        })
    }
}
