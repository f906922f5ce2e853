// SPDX-License-Identifier: Apache-2.0

//! Discrete-event run of a scenario: startup BIST, periodic test scheduling,
//! reactions to failures, indicator rotation and remote operation.

use std::collections::{BTreeMap, HashSet};

use indexmap::IndexMap;
use thiserror::Error;

use super::log::{Category, EventLog};
use super::scenario::{Scenario, ScenarioError, TestSpec};
use crate::analog_fabric::{AbmSwitchState, AnalogBus, Segment};
use crate::ecu_model::{DeviceKind, EcuNetlist, FaultKind, LOGIC_THRESHOLD};
use crate::idr::{IdrError, Observation, RotationSchedule};
use crate::measurement::TestKind;
use crate::reconfigure::{capacity, plan_segments, BypassOutcome, ReconfError};
use crate::tap_engine::{DeviceScanModel, InstructionCodes, ScanChain, TapController};
use crate::timing::Mode;
use crate::topology_manager::{
    Action, BistReport, ChainLayout, StartDecision, TestDescriptor, TestTarget, TmError,
    TopologyManager,
};

const REMOTE_TRIGGER: &str = "remote.trigger";
const REMOTE_STOP: &str = "remote.stop";

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error(transparent)]
    Runtime(#[from] TmError),
}

impl SimError {
    /// 1 for a bad scenario, 2 for anything that went wrong while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            SimError::Scenario(_) => 1,
            SimError::Invariant(_) | SimError::Runtime(_) => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, SimError>;

#[derive(Clone, Debug, Default)]
pub struct Options {
    /// Overrides the scenario seed.
    pub seed: Option<u64>,
    pub tap_trace: bool,
}

pub struct SimOutcome {
    pub log: EventLog,
    pub manager: TopologyManager,
    pub bist: BistReport,
    pub rotation: Option<RotationSchedule>,
}

pub fn secs_to_ns(s: f64) -> u64 {
    (s * 1e9).round().max(0.0) as u64
}

fn invalid(msg: impl Into<String>) -> SimError {
    SimError::Scenario(ScenarioError::Invalid(msg.into()))
}

fn at_line(line: usize, msg: impl Into<String>) -> SimError {
    SimError::Scenario(ScenarioError::Parse {
        line,
        msg: msg.into(),
    })
}

/// Nodes that need a bus segment when the scenario does not list them.
fn abm_candidates(sc: &Scenario) -> Vec<String> {
    let mut wanted: HashSet<&str> = HashSet::new();
    for l in sc.links.iter().filter(|l| l.item.has_abm) {
        wanted.insert(&l.item.from);
        wanted.insert(&l.item.to);
    }
    for t in sc
        .tests
        .iter()
        .filter(|t| t.item.kind != TestKind::Interconnect)
    {
        wanted.insert(&t.item.target);
    }
    if let Some(r) = &sc.remote {
        wanted.extend([
            r.item.trigger.as_str(),
            r.item.actuate.as_str(),
            r.item.stop.as_str(),
        ]);
    }
    sc.node_names()
        .filter(|n| wanted.contains(n))
        .map(str::to_string)
        .collect()
}

fn build_bus(sc: &Scenario, net: &EcuNetlist) -> Result<AnalogBus> {
    let (pairs, segments) = if sc.segments.is_empty() {
        let pairs = sc.pairs.unwrap_or(1);
        let nodes = abm_candidates(sc);
        let segs = match plan_segments(net, &nodes, pairs) {
            Ok(s) => s,
            Err(ReconfError::NoAbmNodes) => IndexMap::new(),
            Err(e) => return Err(invalid(e.to_string())),
        };
        (pairs, segs)
    } else {
        let segs: IndexMap<String, Segment> = sc.segments.iter().map(|s| s.item.clone()).collect();
        let highest = segs.values().map(|s| s.pair + 1).max().unwrap_or(1);
        (sc.pairs.unwrap_or(highest), segs)
    };
    AnalogBus::new(pairs, segments).map_err(|e| invalid(e.to_string()))
}

fn build_chain(sc: &Scenario, bus: &AnalogBus) -> Result<(ScanChain, ChainLayout)> {
    let abm_nodes: Vec<String> = bus
        .segments()
        .values()
        .flat_map(|s| s.nodes.iter().cloned())
        .collect();
    let width = AbmSwitchState::CELLS;
    let mut layout = ChainLayout::default();
    if sc.chain.is_empty() {
        for (i, n) in abm_nodes.iter().enumerate() {
            layout
                .slots
                .insert(n.clone(), ("sta400".to_string(), i * width));
        }
        let dev = DeviceScanModel::new("sta400", 4, (abm_nodes.len() * width).max(1))
            .map_err(|e| invalid(e.to_string()))?;
        return Ok((ScanChain::new(vec![dev]), layout));
    }

    let mut used: Vec<usize> = vec![0; sc.chain.len()];
    for (i, c) in sc.chain.iter().enumerate() {
        for n in c.item.abms.iter().flatten() {
            if !abm_nodes.contains(n) {
                return Err(at_line(
                    c.line,
                    format!("`{n}` is listed as an ABM but is in no bus segment"),
                ));
            }
            if layout.slots.contains_key(n) {
                return Err(at_line(c.line, format!("`{n}` has two ABM slots")));
            }
            if used[i] + width > c.item.cells {
                return Err(at_line(
                    c.line,
                    format!("`{}` has too few cells for its ABMs", c.item.name),
                ));
            }
            layout
                .slots
                .insert(n.clone(), (c.item.name.clone(), used[i]));
            used[i] += width;
        }
    }
    let mut dev = 0;
    for n in &abm_nodes {
        if layout.slots.contains_key(n) {
            continue;
        }
        while dev < sc.chain.len() && used[dev] + width > sc.chain[dev].item.cells {
            dev += 1;
        }
        let Some(c) = sc.chain.get(dev) else {
            return Err(invalid(format!(
                "scan chain is too short for {} ABMs of {width} cells",
                abm_nodes.len()
            )));
        };
        layout
            .slots
            .insert(n.clone(), (c.item.name.clone(), used[dev]));
        used[dev] += width;
    }

    let mut devices = Vec::new();
    for c in &sc.chain {
        let d = &c.item;
        let std = InstructionCodes::standard(d.ir);
        let codes = InstructionCodes {
            bypass: d.bypass.unwrap_or(std.bypass),
            sample_preload: d.sample.unwrap_or(std.sample_preload),
            extest: d.extest.unwrap_or(std.extest),
            probe: d.probe.unwrap_or(std.probe),
        };
        devices.push(
            DeviceScanModel::with_codes(&d.name, d.ir, d.cells, codes)
                .map_err(|e| at_line(c.line, e.to_string()))?,
        );
    }
    Ok((ScanChain::new(devices), layout))
}

fn descriptor(sc: &Scenario, bus: &AnalogBus, line: usize, t: &TestSpec) -> Result<TestDescriptor> {
    let (target, first) = match t.kind {
        TestKind::Interconnect => {
            let l = sc
                .links
                .iter()
                .find(|l| l.item.name == t.target)
                .map(|l| l.item.from.clone());
            (TestTarget::Link(t.target.clone()), l.unwrap_or_default())
        }
        _ => (TestTarget::Node(t.target.clone()), t.target.clone()),
    };
    let segment = bus
        .segment_of(&first)
        .map(|(s, _)| s.to_string())
        .ok_or_else(|| at_line(line, format!("`{}` has no ABM access", t.target)))?;
    Ok(TestDescriptor {
        id: t.id.clone(),
        kind: t.kind,
        target,
        reference: t.reference.map(|r| (r, t.tol.unwrap_or(0.0))),
        period: t.period,
        segment,
        window: t.window.unwrap_or(t.kind.default_window()),
        class: t.class,
    })
}

/// Builds the netlist, bus, scan chain and topology manager for a scenario.
pub fn build(sc: &Scenario, opts: &Options) -> Result<TopologyManager> {
    let mut net = EcuNetlist::new(
        sc.nodes.iter().map(|n| n.item.clone()).collect(),
        sc.links.iter().map(|l| l.item.clone()).collect(),
        sc.devices.iter().map(|d| d.item.clone()).collect(),
    )
    .map_err(|e| invalid(e.to_string()))?;
    let mut faults: Vec<_> = sc.faults.iter().collect();
    faults.sort_by(|a, b| a.item.onset.total_cmp(&b.item.onset));
    for f in faults {
        net.inject_fault(f.item.clone())
            .map_err(|e| at_line(f.line, e.to_string()))?;
    }

    let bus = build_bus(sc, &net)?;
    let (chain, layout) = build_chain(sc, &bus)?;
    let mut tests = Vec::new();
    for t in &sc.tests {
        tests.push(descriptor(sc, &bus, t.line, &t.item)?);
    }
    if let Some(r) = &sc.remote {
        for (id, node) in [
            (REMOTE_TRIGGER, &r.item.trigger),
            (REMOTE_STOP, &r.item.stop),
        ] {
            if tests.iter().any(|t| t.id == id) {
                return Err(at_line(r.line, format!("test id `{id}` is reserved")));
            }
            let spec = TestSpec {
                id: id.to_string(),
                kind: TestKind::Dc,
                target: node.clone(),
                reference: None,
                tol: None,
                period: r.item.poll,
                window: None,
                class: None,
            };
            tests.push(descriptor(sc, &bus, r.line, &spec)?);
        }
    }

    let mut tap = TapController::new(chain);
    if opts.tap_trace {
        tap.enable_trace();
    }
    let seed = opts.seed.unwrap_or(sc.run.seed);
    let mut mgr = TopologyManager::new(net, bus, tap, layout, tests, sc.run.tck, seed).map_err(
        |e| match &e {
            TmError::BadDescriptor { test, .. } => {
                match sc.tests.iter().find(|t| &t.item.id == test) {
                    Some(t) => at_line(t.line, e.to_string()),
                    None => invalid(e.to_string()),
                }
            }
            _ => invalid(e.to_string()),
        },
    )?;
    mgr.config_cycles = sc.run.config_cycles;
    mgr.reconfigure = sc.run.reconfigure;
    Ok(mgr)
}

struct Entry {
    id: String,
    period: u64,
    last_start: Option<u64>,
    /// Not scheduled before this time; `None` while disabled.
    from: Option<u64>,
}

impl Entry {
    fn due(&self) -> Option<u64> {
        let from = self.from?;
        Some(match self.last_start {
            Some(s) => (s + self.period).max(from),
            None => from,
        })
    }
}

enum Pending {
    Action(Action),
    Remote { stop: bool, value: f64 },
}

#[derive(Clone, Copy, PartialEq)]
enum Remote {
    Idle,
    Armed(Option<bool>),
    Actuating(Option<bool>),
    Done,
}

#[derive(Default, Clone)]
struct IdrStats {
    steps: u64,
    served: u64,
    shown: u64,
    post_steps: u64,
    post_served: u64,
    open_steps: u64,
    open_served: u64,
}

struct IdrRun {
    sched: RotationSchedule,
    demand: Vec<bool>,
    log_every: u64,
    window: Vec<Observation>,
    stats: Vec<IdrStats>,
    excluded_any: bool,
    ambiguous_logged: bool,
    next_step: u64,
}

struct Sim<'a> {
    sc: &'a Scenario,
    mgr: TopologyManager,
    log: EventLog,
    entries: Vec<Entry>,
    cursor: usize,
    sweep: HashSet<String>,
    pending: Vec<(u64, Pending)>,
    idr: Option<IdrRun>,
    remote: Remote,
    motors: BTreeMap<String, bool>,
}

fn fmt_value(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        format!("{v:.6}")
    }
}

impl<'a> Sim<'a> {
    fn s(ns: u64) -> f64 {
        ns as f64 * 1e-9
    }

    /// Names a fault can disturb: its target plus adjacent nodes and links.
    fn affects(&self, target: &str) -> Vec<String> {
        let net = &self.mgr.net;
        let mut out = vec![target.to_string()];
        let mut push = |s: &str| {
            if !out.iter().any(|o| o == s) {
                out.push(s.to_string());
            }
        };
        if let Some(l) = net.link(target) {
            push(&l.to.clone());
        }
        let mut nodes = vec![target.to_string()];
        if let Some(d) = net.device(target) {
            nodes.extend(d.ports.iter().cloned());
        }
        for d in net
            .devices()
            .filter(|d| d.ports.iter().any(|p| p == target))
        {
            push(&d.name);
        }
        for n in &nodes {
            push(n);
            for l in net.links().filter(|l| &l.from == n || &l.to == n) {
                push(&l.name);
                if &l.from == n {
                    push(&l.to);
                }
            }
        }
        out
    }

    fn on_set(d: &TestDescriptor) -> String {
        d.target.to_string()
    }

    fn check_capacity(&self) -> Result<()> {
        let cap = capacity(self.mgr.bus.bus_lines());
        let n = self.mgr.reconf.active_bypasses();
        if n > cap {
            return Err(SimError::Invariant(format!(
                "{n} bypasses exceed capacity {cap}"
            )));
        }
        // Every segment is either accepting tests or held by exactly one owner.
        let segs: Vec<String> = self.mgr.bus.segments().keys().cloned().collect();
        let busy = segs.iter().filter(|s| self.mgr.segment_busy(s)).count();
        let held = segs
            .iter()
            .filter(|s| {
                self.mgr
                    .segment_pair(s)
                    .is_some_and(|p| self.mgr.reconf.is_pair_held(p))
            })
            .count();
        if busy != held {
            return Err(SimError::Invariant(format!(
                "{busy} segments busy but {held} held"
            )));
        }
        Ok(())
    }

    fn log_bypass(&mut self, t: u64, link: &str, out: &BypassOutcome) -> Result<()> {
        match out {
            BypassOutcome::Applied(a) => {
                self.log.push(
                    t,
                    Category::Bypass,
                    link,
                    format!("applied pair={}", a.pair_index),
                );
            }
            BypassOutcome::UnmetDemand { reason } => {
                let why = match reason {
                    ReconfError::SegmentBusy(_) => "segment_busy",
                    ReconfError::CapacityExhausted(_) => "capacity",
                    _ => "other",
                };
                self.log.push(
                    t,
                    Category::Bypass,
                    link,
                    format!("UnmetDemand reason={why}"),
                );
            }
        }
        self.check_capacity()
    }

    fn try_bypass(&mut self, t: u64, link: &str) -> Result<()> {
        match self.mgr.request_bypass(link, Self::s(t)) {
            Ok(out) => self.log_bypass(t, link, &out),
            Err(TmError::Reconf(e)) => {
                self.log.push(
                    t,
                    Category::Alert,
                    link,
                    format!("BypassImpossible reason={}", reason_code(&e)),
                );
                Ok(())
            }
            Err(e) => Err(e.into()),
        }
    }

    fn log_motors(&mut self, t: u64) -> Result<()> {
        let names: Vec<String> = self.motors.keys().cloned().collect();
        for m in names {
            let running = self
                .mgr
                .net
                .motor_running(&m, Self::s(t))
                .map_err(TmError::from)?;
            if self.motors.insert(m.clone(), running) != Some(running) {
                let state = if running { "running" } else { "stopped" };
                self.log
                    .push(t, Category::Decision, &m, format!("motor {state}"));
            }
        }
        Ok(())
    }

    fn set_entry(&mut self, id: &str, from: Option<u64>) {
        if let Some(e) = self.entries.iter_mut().find(|e| e.id == id) {
            e.from = from;
            e.last_start = None;
        }
    }

    fn handle_fault(&mut self, t: u64, idx: usize) -> Result<()> {
        let f = self.sc.faults[idx].item.clone();
        let affects = self.affects(&f.target).join("|");
        self.log.push(
            t,
            Category::Fault,
            &f.target,
            format!("{} affects={affects}", f.kind),
        );
        match f.kind {
            FaultKind::Repair => {
                if self.mgr.reconf.bypass_of(&f.target).is_some() {
                    let applied = self.mgr.release_bypass(&f.target, Self::s(t))?;
                    self.log.push(t, Category::Bypass, &f.target, "released");
                    for a in applied {
                        let link = a.interconnect.clone();
                        self.log_bypass(t, &link, &BypassOutcome::Applied(a))?;
                    }
                }
            }
            FaultKind::PowerLoss => {
                let is_mcu = self
                    .mgr
                    .net
                    .device(&f.target)
                    .is_some_and(|d| d.kind == DeviceKind::Mcu);
                if is_mcu && self.remote == Remote::Idle && self.sc.remote.is_some() {
                    self.remote = Remote::Armed(None);
                    self.set_entry(REMOTE_TRIGGER, Some(t));
                    self.log.push(
                        t,
                        Category::Decision,
                        "remote",
                        format!("engaged by={}", f.target),
                    );
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Output a driver actually produces at `t`, if a fault forces it.
    fn forced_driver(&self, driver: &str, t: f64) -> Option<bool> {
        let net = &self.mgr.net;
        let mut nodes: Vec<&str> = vec![driver];
        let mut devices: Vec<&str> = Vec::new();
        if let Some(d) = net.device(driver) {
            devices.push(&d.name);
            nodes.extend(d.ports.iter().map(String::as_str));
        }
        for d in net
            .devices()
            .filter(|d| d.ports.iter().any(|p| p == driver))
        {
            devices.push(&d.name);
        }
        let mut forced = None;
        for f in net.faults().iter().filter(|f| f.active_at(t)) {
            let on_node = nodes.contains(&f.target.as_str());
            match f.kind {
                FaultKind::PowerLoss if devices.contains(&f.target.as_str()) => return Some(false),
                FaultKind::StuckLow | FaultKind::ShortToGround if on_node => return Some(false),
                FaultKind::StuckHigh if on_node => forced = Some(true),
                _ => {}
            }
        }
        forced
    }

    fn idr_step(&mut self, t: u64) -> Result<()> {
        let Some(mut run) = self.idr.take() else {
            return Ok(());
        };
        let step = run.next_step;
        run.next_step += 1;
        let mid = (step as f64 + 0.5) / run.sched.frequency();
        let mapping: Vec<Option<String>> = run
            .sched
            .mapping_at_step(step)
            .into_iter()
            .map(|(_, d)| d.map(str::to_string))
            .collect();
        let mut expected = Vec::with_capacity(mapping.len());
        let mut shown = Vec::with_capacity(mapping.len());
        for (i, d) in mapping.iter().enumerate() {
            let want = run.demand[i];
            let on = match d {
                Some(d) => self.forced_driver(d, mid).unwrap_or(want),
                None => false,
            };
            expected.push(want && d.is_some());
            shown.push(on);
            let s = &mut run.stats[i];
            s.steps += 1;
            s.served += d.is_some() as u64;
            s.shown += on as u64;
            if run.excluded_any {
                s.open_steps += 1;
                s.open_served += d.is_some() as u64;
            }
        }
        // Post-exclusion service is counted over whole rotation periods.
        let p = run.sched.period_steps() as u64;
        if run.excluded_any && run.stats[0].open_steps == p {
            for s in &mut run.stats {
                s.post_steps += s.open_steps;
                s.post_served += s.open_served;
                s.open_steps = 0;
                s.open_served = 0;
            }
        }
        if run.log_every > 0 && step % run.log_every == 0 {
            let map: Vec<String> = run
                .sched
                .logicals()
                .iter()
                .zip(&mapping)
                .map(|(l, d)| format!("{l}>{}", d.as_deref().unwrap_or("-")))
                .collect();
            self.log.push(
                t,
                Category::Idr,
                "rotation",
                format!("rotate step={step} map={}", map.join("|")),
            );
        }
        run.window.push(Observation {
            step,
            expected,
            shown,
        });
        let need = run.sched.period_steps();
        if run.window.len() > need {
            run.window.remove(0);
        }
        if run.window.len() == need {
            match run.sched.detect_and_localize(&run.window) {
                Ok(Some(d)) => {
                    self.log
                        .push(t, Category::Idr, &d, format!("localized step={step}"));
                    match run.sched.exclude(&d) {
                        Ok(next) => {
                            run.sched = next;
                            run.excluded_any = true;
                            for s in &mut run.stats {
                                s.open_steps = 0;
                                s.open_served = 0;
                            }
                            self.log.push(
                                t,
                                Category::Idr,
                                &d,
                                format!("excluded active={}", run.sched.active().len()),
                            );
                        }
                        Err(e) => {
                            self.log
                                .push(t, Category::Alert, &d, format!("ExclusionRefused {e}"))
                        }
                    }
                    run.window.clear();
                }
                Ok(None) => {}
                Err(IdrError::AmbiguousProfile) => {
                    if !run.ambiguous_logged {
                        run.ambiguous_logged = true;
                        self.log
                            .push(t, Category::Alert, "rotation", "AmbiguousProfile");
                    }
                    run.window.clear();
                }
                Err(_) => run.window.clear(),
            }
        }
        self.idr = Some(run);
        Ok(())
    }

    fn idr_time(&self) -> Option<u64> {
        self.idr
            .as_ref()
            .map(|r| secs_to_ns(r.next_step as f64 / r.sched.frequency()))
    }

    fn handle_pending(&mut self, t: u64, p: Pending) -> Result<()> {
        match p {
            Pending::Action(Action::NoAction) => {}
            Pending::Action(Action::RequestBypass { link }) => {
                if self.mgr.reconfigure {
                    self.try_bypass(t, &link)?;
                }
            }
            Pending::Action(Action::CriticalAlert { subject, link }) => {
                self.log.push(
                    t,
                    Category::Alert,
                    &subject,
                    format!("CriticalAlert link={}", link.as_deref().unwrap_or("-")),
                );
                if let (Some(l), true) = (link, self.mgr.reconfigure) {
                    self.try_bypass(t, &l)?;
                }
            }
            Pending::Action(Action::Anomaly { subject }) => {
                self.log.push(t, Category::Alert, &subject, "Anomaly");
            }
            Pending::Remote { stop, value } => self.remote_poll(t, stop, value)?,
        }
        Ok(())
    }

    fn remote_poll(&mut self, t: u64, stop: bool, value: f64) -> Result<()> {
        let Some(r) = self.sc.remote.as_ref().map(|r| r.item.clone()) else {
            return Ok(());
        };
        let high = value >= LOGIC_THRESHOLD;
        match (self.remote, stop) {
            (Remote::Armed(None), false) => self.remote = Remote::Armed(Some(high)),
            (Remote::Armed(Some(b)), false) if b != high => {
                self.log.push(
                    t,
                    Category::Decision,
                    &r.trigger,
                    format!("transition high={high}"),
                );
                match self
                    .mgr
                    .inject_signal(&r.actuate, r.drive.clone(), Self::s(t))
                {
                    Ok(()) => {
                        self.log.push(t, Category::Decision, &r.actuate, "inject");
                        self.remote = Remote::Actuating(None);
                        self.set_entry(REMOTE_TRIGGER, None);
                        self.set_entry(REMOTE_STOP, Some(t));
                        self.log_motors(t)?;
                    }
                    Err(
                        e
                        @ (TmError::SegmentBusy(_) | TmError::NoAbmAccess(_) | TmError::Reconf(_)),
                    ) => {
                        self.log.push(
                            t,
                            Category::Alert,
                            &r.actuate,
                            format!("InjectionRefused {e}"),
                        );
                    }
                    Err(e) => return Err(e.into()),
                }
            }
            (Remote::Actuating(None), true) => self.remote = Remote::Actuating(Some(high)),
            (Remote::Actuating(Some(b)), true) if b != high => {
                self.log.push(
                    t,
                    Category::Decision,
                    &r.stop,
                    format!("transition high={high}"),
                );
                self.mgr.release_injection(&r.actuate, Self::s(t))?;
                self.log.push(t, Category::Decision, &r.actuate, "release");
                self.remote = Remote::Done;
                self.set_entry(REMOTE_STOP, None);
                self.log_motors(t)?;
            }
            _ => {}
        }
        Ok(())
    }

    fn next_test(&self, now_free: u64) -> Option<(u64, usize)> {
        let earliest = self.entries.iter().filter_map(Entry::due).min()?;
        let t = earliest.max(now_free);
        let n = self.entries.len();
        (0..n)
            .map(|k| (self.cursor + k) % n)
            .find(|&i| self.entries[i].due().is_some_and(|d| d <= t))
            .map(|i| (t, i))
    }

    fn run_test(&mut self, t: u64, i: usize, now_free: &mut u64) -> Result<()> {
        self.cursor = (i + 1) % self.entries.len();
        let id = self.entries[i].id.clone();
        let d = self.mgr.tests[&id].clone();
        if self.mgr.segment_busy(&d.segment) {
            self.entries[i].last_start = Some(t);
            return Ok(());
        }
        let charge = match self.sc.run.mode {
            Mode::Worst => true,
            Mode::Best => {
                let fresh = self.sweep.is_empty() || self.sweep.contains(&id);
                if self.sweep.contains(&id) {
                    self.sweep.clear();
                }
                self.sweep.insert(id.clone());
                fresh
            }
        };
        let ex = match self.mgr.execute_test(&id, Self::s(t), charge) {
            Err(TmError::SegmentBusy(_)) => {
                self.entries[i].last_start = Some(t);
                return Ok(());
            }
            other => other?,
        };
        self.entries[i].last_start = Some(t);
        let r = &ex.result;
        let remote = id == REMOTE_TRIGGER || id == REMOTE_STOP;
        let pass = TopologyManager::evaluate(&d, r);
        let class = d.class.map(|c| format!(" class={c}")).unwrap_or_default();
        self.log.push(
            t,
            Category::Test,
            &id,
            format!(
                "result={} kind={} value={} triggered={} t_con={:.9} cost={:.9} on={} phase={}{class}",
                if pass { "pass" } else { "fail" },
                d.kind.name(),
                fmt_value(r.value),
                r.triggered,
                ex.t_con,
                r.cost,
                Self::on_set(&d),
                if remote { "remote" } else { "run" },
            ),
        );
        let end = t + secs_to_ns(r.cost).max(1);
        *now_free = end;
        if remote {
            let p = Pending::Remote {
                stop: id == REMOTE_STOP,
                value: r.value,
            };
            self.pending.push((end, p));
        } else {
            let action = self.mgr.handle_result(r);
            if action != Action::NoAction {
                self.pending.push((end, Pending::Action(action)));
            }
        }
        Ok(())
    }

    fn log_bist(&mut self, bist: &BistReport) -> Result<()> {
        for (id, ex) in &bist.executions {
            let d = self.mgr.tests[id].clone();
            let start = secs_to_ns(ex.result.window.0 - ex.t_con);
            let pass = !bist.failed.contains(id);
            let class = d.class.map(|c| format!(" class={c}")).unwrap_or_default();
            self.log.push(
                start,
                Category::Test,
                id,
                format!(
                    "result={} kind={} value={} triggered={} t_con={:.9} cost={:.9} on={} phase=bist{class}",
                    if pass { "pass" } else { "fail" },
                    d.kind.name(),
                    fmt_value(ex.result.value),
                    ex.result.triggered,
                    ex.t_con,
                    ex.result.cost,
                    Self::on_set(&d),
                ),
            );
        }
        let end = secs_to_ns(bist.end);
        for id in &bist.failed {
            let d = self.mgr.tests[id].clone();
            if self.mgr.is_critical(&d) {
                let link = self.mgr.link_of(&d);
                self.log.push(
                    end,
                    Category::Alert,
                    &d.target.to_string(),
                    format!("CriticalAlert link={}", link.as_deref().unwrap_or("-")),
                );
            }
        }
        for (link, out) in &bist.bypasses {
            self.log_bypass(end, link, out)?;
        }
        self.log.push(
            end,
            Category::Decision,
            "startup",
            format!("StartDecision={}", bist.decision),
        );
        Ok(())
    }

    fn finish_idr(&mut self, end: u64) {
        let Some(run) = &self.idr else { return };
        let lines: Vec<(String, String)> = run
            .sched
            .logicals()
            .iter()
            .zip(&run.stats)
            .zip(&run.demand)
            .map(|((l, s), want)| {
                (
                    l.clone(),
                    format!(
                        "summary demand={} steps={} served={} shown={} steps_after_exclusion={} served_after_exclusion={}",
                        if *want { "on" } else { "off" },
                        s.steps,
                        s.served,
                        s.shown,
                        s.post_steps,
                        s.post_served
                    ),
                )
            })
            .collect();
        for (l, detail) in lines {
            self.log.push(end, Category::Idr, &l, detail);
        }
    }
}

fn reason_code(e: &ReconfError) -> &'static str {
    match e {
        ReconfError::NoAbmAccess(_) => "no_abm_access",
        ReconfError::CrossSegment(_) => "cross_segment",
        ReconfError::UnknownLink(_) => "unknown_link",
        ReconfError::SegmentBusy(_) => "segment_busy",
        ReconfError::CapacityExhausted(_) => "capacity",
        _ => "other",
    }
}

/// Runs a scenario to completion and returns its event log.
pub fn run(sc: &Scenario, opts: &Options) -> Result<SimOutcome> {
    let mut mgr = build(sc, opts)?;
    let end = secs_to_ns(sc.run.duration);

    let idr = match &sc.idr {
        Some(b) => {
            let sched =
                RotationSchedule::new(b.item.drivers.clone(), b.item.logicals.clone(), b.item.freq)
                    .map_err(|e| at_line(b.line, e.to_string()))?;
            Some(IdrRun {
                demand: b.item.demand.clone(),
                log_every: b.item.log_every,
                window: Vec::new(),
                stats: vec![IdrStats::default(); b.item.logicals.len()],
                excluded_any: false,
                ambiguous_logged: false,
                next_step: 0,
                sched,
            })
        }
        None => None,
    };
    let motors: BTreeMap<String, bool> = sc
        .devices
        .iter()
        .filter(|d| d.item.kind == DeviceKind::Motor)
        .map(|d| {
            Ok((
                d.item.name.clone(),
                mgr.net.motor_running(&d.item.name, 0.0)?,
            ))
        })
        .collect::<std::result::Result<_, crate::ecu_model::EcuError>>()
        .map_err(TmError::from)?;

    let mut fault_order: Vec<usize> = (0..sc.faults.len()).collect();
    fault_order.sort_by(|a, b| {
        sc.faults[*a]
            .item
            .onset
            .total_cmp(&sc.faults[*b].item.onset)
    });

    let bist = mgr.run_startup_bist(0.0)?;
    let bist_end = secs_to_ns(bist.end);
    // Faults up to the end of startup are merged with the startup records.
    let mut fi = 0;
    let mut pre = Vec::new();
    while fi < fault_order.len() && secs_to_ns(sc.faults[fault_order[fi]].item.onset) <= bist_end {
        pre.push(fault_order[fi]);
        fi += 1;
    }
    let entries = mgr
        .tests
        .values()
        .map(|d| Entry {
            id: d.id.clone(),
            period: secs_to_ns(d.period).max(1),
            last_start: None,
            from: (d.id != REMOTE_TRIGGER && d.id != REMOTE_STOP).then_some(bist_end),
        })
        .collect();

    let mut sim = Sim {
        sc,
        mgr,
        log: EventLog::default(),
        entries,
        cursor: 0,
        sweep: HashSet::new(),
        pending: Vec::new(),
        idr,
        remote: Remote::Idle,
        motors,
    };
    for idx in pre {
        sim.handle_fault(secs_to_ns(sc.faults[idx].item.onset), idx)?;
    }
    sim.log_bist(&bist)?;
    sim.log.records.sort_by_key(|r| r.time);
    // Indicators rotate once the system has started.
    if let Some(run) = &mut sim.idr {
        run.next_step = (bist_end as f64 * 1e-9 * run.sched.frequency()).ceil() as u64;
    }

    if bist.decision != StartDecision::Refused {
        let mut now_free = bist_end;
        loop {
            let t_fault = fault_order
                .get(fi)
                .map(|&i| secs_to_ns(sc.faults[i].item.onset));
            let t_idr = sim.idr_time();
            let t_pending = sim.pending.iter().map(|(t, _)| *t).min();
            let next_test = sim.next_test(now_free);
            let t = [t_fault, t_idr, t_pending, next_test.map(|(t, _)| t)]
                .into_iter()
                .flatten()
                .min();
            let Some(t) = t.filter(|t| *t < end) else {
                break;
            };
            if t_fault == Some(t) {
                sim.handle_fault(t, fault_order[fi])?;
                fi += 1;
            } else if t_idr == Some(t) {
                sim.idr_step(t)?;
            } else if t_pending == Some(t) {
                let k = sim.pending.iter().position(|(pt, _)| *pt == t).unwrap_or(0);
                let (_, p) = sim.pending.remove(k);
                sim.handle_pending(t, p)?;
            } else if let Some((t, i)) = next_test {
                sim.run_test(t, i, &mut now_free)?;
            }
        }
        sim.finish_idr(end.max(bist_end));
    }

    if !sim.log.is_time_ordered() {
        return Err(SimError::Invariant("event log is not in time order".into()));
    }
    let rotation = sim.idr.as_ref().map(|r| r.sched.clone());
    Ok(SimOutcome {
        log: sim.log,
        manager: sim.mgr,
        bist,
        rotation,
    })
}
