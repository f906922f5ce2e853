// SPDX-License-Identifier: Apache-2.0

//! The ECU under test: nodes, interconnects, devices, criticality ranks and
//! scheduled faults.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use thiserror::Error;

use crate::signals::{SignalError, Waveform};

/// Logic rail of the demonstrator.
pub const LOGIC_HIGH: f64 = 3.5;
/// Decision level for reading a node as logic high.
pub const LOGIC_THRESHOLD: f64 = LOGIC_HIGH / 2.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EcuError {
    #[error("duplicate name `{0}`")]
    Duplicate(String),
    #[error("{what} `{name}` is not declared")]
    Dangling { what: &'static str, name: String },
    #[error("fault target `{0}` does not exist")]
    UnknownTarget(String),
    #[error("fault kind {kind} cannot target `{target}`")]
    FaultKindMismatch { kind: String, target: String },
    #[error("node `{0}` is not declared")]
    UnknownNode(String),
    #[error("device `{0}` is not a smart driver")]
    NotADriver(String),
    #[error("device `{0}` is not a motor")]
    NotAMotor(String),
    #[error("node `{0}` is the receiver of more than one interconnect")]
    DoubleDriven(String),
    #[error("interconnects form a loop through `{0}`")]
    LinkCycle(String),
    #[error("fault onset must be a finite time >= 0")]
    BadOnset,
    #[error(transparent)]
    Signal(#[from] SignalError),
}

pub type Result<T> = std::result::Result<T, EcuError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SignalClass {
    DigitalHigh,
    DigitalLow,
    PullUp,
    PullDown,
    Pwm,
    AnalogGround,
    Hall,
}

impl SignalClass {
    pub const ALL: [SignalClass; 7] = [
        SignalClass::DigitalHigh,
        SignalClass::DigitalLow,
        SignalClass::PullUp,
        SignalClass::PullDown,
        SignalClass::Pwm,
        SignalClass::AnalogGround,
        SignalClass::Hall,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SignalClass::DigitalHigh => "digital_high",
            SignalClass::DigitalLow => "digital_low",
            SignalClass::PullUp => "pull_up",
            SignalClass::PullDown => "pull_down",
            SignalClass::Pwm => "pwm",
            SignalClass::AnalogGround => "analog_ground",
            SignalClass::Hall => "hall",
        }
    }

    /// Level a floating node of this class settles to.
    pub fn pull(self) -> Option<f64> {
        match self {
            SignalClass::PullUp => Some(LOGIC_HIGH),
            SignalClass::PullDown => Some(0.0),
            _ => None,
        }
    }

    pub fn float_level(self) -> f64 {
        self.pull().unwrap_or(0.0)
    }

    /// Source used when a node declares none. Hall lines have no sensible
    /// default: their edge times must come from the scenario.
    pub fn default_source(self) -> Option<Waveform> {
        match self {
            SignalClass::DigitalHigh => Some(Waveform::dc(LOGIC_HIGH)),
            SignalClass::DigitalLow | SignalClass::AnalogGround => Some(Waveform::dc(0.0)),
            SignalClass::Pwm => Waveform::pwm(0.0, LOGIC_HIGH, 1000.0, 0.6).ok(),
            SignalClass::PullUp | SignalClass::PullDown => Some(Waveform::HighZ),
            SignalClass::Hall => None,
        }
    }

    /// Sensor lines go to the monitoring segment, everything else is treated
    /// as actuation.
    pub fn is_sensor(self) -> bool {
        matches!(self, SignalClass::Hall)
    }
}

impl fmt::Display for SignalClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SignalClass {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        SignalClass::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown signal class `{s}`"))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub name: String,
    pub class: SignalClass,
    pub source: Waveform,
    pub critical: bool,
    /// Standing bias added to the source (digital-low monitoring aid).
    pub bias: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Link {
    pub name: String,
    pub from: String,
    pub to: String,
    pub has_abm: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DeviceKind {
    Lamp,
    Buzzer,
    HsDriver,
    LsDriver,
    Hall,
    Switch,
    Mcu,
    Motor,
}

impl DeviceKind {
    pub const ALL: [DeviceKind; 8] = [
        DeviceKind::Lamp,
        DeviceKind::Buzzer,
        DeviceKind::HsDriver,
        DeviceKind::LsDriver,
        DeviceKind::Hall,
        DeviceKind::Switch,
        DeviceKind::Mcu,
        DeviceKind::Motor,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DeviceKind::Lamp => "lamp",
            DeviceKind::Buzzer => "buzzer",
            DeviceKind::HsDriver => "hs_driver",
            DeviceKind::LsDriver => "ls_driver",
            DeviceKind::Hall => "hall",
            DeviceKind::Switch => "switch",
            DeviceKind::Mcu => "mcu",
            DeviceKind::Motor => "motor",
        }
    }
}

impl FromStr for DeviceKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        DeviceKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown device kind `{s}`"))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Device {
    pub name: String,
    pub kind: DeviceKind,
    pub ports: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FaultKind {
    Open,
    StuckLow,
    StuckHigh,
    ShortToGround,
    Drift(f64),
    PowerLoss,
    /// Clears earlier faults on the same target.
    Repair,
}

impl fmt::Display for FaultKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FaultKind::Open => f.write_str("open"),
            FaultKind::StuckLow => f.write_str("stuck0"),
            FaultKind::StuckHigh => f.write_str("stuck1"),
            FaultKind::ShortToGround => f.write_str("short_gnd"),
            FaultKind::Drift(g) => write!(f, "drift:{g}"),
            FaultKind::PowerLoss => f.write_str("power_loss"),
            FaultKind::Repair => f.write_str("repair"),
        }
    }
}

impl FromStr for FaultKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ok(match s {
            "open" => FaultKind::Open,
            "stuck0" => FaultKind::StuckLow,
            "stuck1" => FaultKind::StuckHigh,
            "short_gnd" => FaultKind::ShortToGround,
            "power_loss" => FaultKind::PowerLoss,
            "repair" => FaultKind::Repair,
            other => {
                let gain = other
                    .strip_prefix("drift:")
                    .ok_or_else(|| format!("unknown fault kind `{other}`"))?;
                let g: f64 = gain
                    .parse()
                    .map_err(|_| format!("bad drift gain `{gain}`"))?;
                if !g.is_finite() {
                    return Err(format!("bad drift gain `{gain}`"));
                }
                FaultKind::Drift(g)
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Fault {
    pub onset: f64,
    pub kind: FaultKind,
    pub target: String,
    /// Set when a later repair clears the fault.
    pub repaired_at: Option<f64>,
}

impl Fault {
    pub fn new(onset: f64, kind: FaultKind, target: impl Into<String>) -> Self {
        Fault {
            onset,
            kind,
            target: target.into(),
            repaired_at: None,
        }
    }

    pub fn active_at(&self, t: f64) -> bool {
        t >= self.onset && self.repaired_at.is_none_or(|r| t < r)
    }

    fn touches(&self, t0: f64, t1: f64) -> bool {
        self.onset <= t1 && self.repaired_at.is_none_or(|r| r > t0)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DriverDiagnostics {
    pub over_current: bool,
    pub over_voltage: bool,
    pub status_pin: bool,
}

/// A node driven from the test bus (bypass or injection) for a time span.
#[derive(Clone, Debug, PartialEq)]
struct DriveSpan {
    since: f64,
    until: Option<f64>,
    waveform: Waveform,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EcuNetlist {
    nodes: IndexMap<String, Node>,
    links: IndexMap<String, Link>,
    devices: IndexMap<String, Device>,
    faults: Vec<Fault>,
    drives: IndexMap<String, Vec<DriveSpan>>,
}

/// Holds `base` before `onset`, `faulted` while the fault is active and
/// `base` again after a repair, simplified for the query window.
fn gate(
    base: Waveform,
    faulted: Waveform,
    onset: f64,
    repaired: Option<f64>,
    win: (f64, f64),
) -> Waveform {
    let covers_start = onset <= win.0;
    let covers_end = repaired.is_none_or(|r| r >= win.1);
    let tail = match repaired {
        Some(r) if !covers_end => Waveform::switched(r, faulted, base.clone()),
        _ => faulted,
    };
    if covers_start {
        tail
    } else {
        Waveform::switched(onset, base, tail)
    }
}

impl EcuNetlist {
    pub fn new(nodes: Vec<Node>, links: Vec<Link>, devices: Vec<Device>) -> Result<Self> {
        let mut names = HashSet::new();
        let mut net = EcuNetlist::default();
        for n in nodes {
            if !names.insert(n.name.clone()) {
                return Err(EcuError::Duplicate(n.name));
            }
            net.nodes.insert(n.name.clone(), n);
        }
        let mut receivers = HashSet::new();
        for l in links {
            if !names.insert(l.name.clone()) {
                return Err(EcuError::Duplicate(l.name));
            }
            for end in [&l.from, &l.to] {
                if !net.nodes.contains_key(end) {
                    return Err(EcuError::Dangling {
                        what: "node",
                        name: end.clone(),
                    });
                }
            }
            if !receivers.insert(l.to.clone()) {
                return Err(EcuError::DoubleDriven(l.to));
            }
            net.links.insert(l.name.clone(), l);
        }
        for d in devices {
            if !names.insert(d.name.clone()) {
                return Err(EcuError::Duplicate(d.name));
            }
            if let Some(p) = d.ports.iter().find(|p| !net.nodes.contains_key(*p)) {
                return Err(EcuError::Dangling {
                    what: "node",
                    name: p.clone(),
                });
            }
            net.devices.insert(d.name.clone(), d);
        }
        for name in net.nodes.keys() {
            let mut cur = name.as_str();
            for _ in 0..=net.links.len() {
                match net.link_into(cur) {
                    Some(l) => cur = &l.from,
                    None => break,
                }
                if cur == name {
                    return Err(EcuError::LinkCycle(name.clone()));
                }
            }
        }
        Ok(net)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.values()
    }

    pub fn links(&self) -> impl Iterator<Item = &Link> {
        self.links.values()
    }

    pub fn devices(&self) -> impl Iterator<Item = &Device> {
        self.devices.values()
    }

    pub fn faults(&self) -> &[Fault] {
        &self.faults
    }

    pub fn node(&self, name: &str) -> Option<&Node> {
        self.nodes.get(name)
    }

    pub fn link(&self, name: &str) -> Option<&Link> {
        self.links.get(name)
    }

    pub fn device(&self, name: &str) -> Option<&Device> {
        self.devices.get(name)
    }

    pub fn link_into(&self, node: &str) -> Option<&Link> {
        self.links.values().find(|l| l.to == node)
    }

    /// Names any fault may target, with the target's role.
    fn target_role(&self, name: &str) -> Option<&'static str> {
        if self.nodes.contains_key(name) {
            Some("node")
        } else if self.links.contains_key(name) {
            Some("link")
        } else if self.devices.contains_key(name) {
            Some("device")
        } else {
            None
        }
    }

    /// Schedules a fault. A repair closes every earlier open fault on its
    /// target.
    pub fn inject_fault(&mut self, f: Fault) -> Result<()> {
        if !f.onset.is_finite() || f.onset < 0.0 {
            return Err(EcuError::BadOnset);
        }
        let role = self
            .target_role(&f.target)
            .ok_or_else(|| EcuError::UnknownTarget(f.target.clone()))?;
        let fits = match f.kind {
            FaultKind::Open => role == "link",
            FaultKind::PowerLoss => role == "device",
            FaultKind::Repair => true,
            _ => role == "node",
        };
        if !fits {
            return Err(EcuError::FaultKindMismatch {
                kind: f.kind.to_string(),
                target: f.target,
            });
        }
        if f.kind == FaultKind::Repair {
            for g in self.faults.iter_mut() {
                if g.target == f.target && g.onset <= f.onset && g.repaired_at.is_none() {
                    g.repaired_at = Some(f.onset);
                }
            }
            return Ok(());
        }
        self.faults.push(f);
        Ok(())
    }

    /// Drive a node from the test bus starting at `since`.
    pub fn start_drive(&mut self, node: &str, since: f64, w: Waveform) -> Result<()> {
        if !self.nodes.contains_key(node) {
            return Err(EcuError::UnknownNode(node.to_string()));
        }
        self.drives
            .entry(node.to_string())
            .or_default()
            .push(DriveSpan {
                since,
                until: None,
                waveform: w,
            });
        Ok(())
    }

    pub fn end_drive(&mut self, node: &str, at: f64) {
        if let Some(spans) = self.drives.get_mut(node) {
            for s in spans.iter_mut().filter(|s| s.until.is_none()) {
                s.until = Some(at);
            }
        }
    }

    pub fn is_driven(&self, node: &str, t: f64) -> bool {
        self.drives.get(node).is_some_and(|v| {
            v.iter()
                .any(|s| t >= s.since && s.until.is_none_or(|u| t < u))
        })
    }

    /// Effective waveform of a node over `window` with every fault, bus drive
    /// and pull network applied.
    pub fn node_waveform(&self, node: &str, window: (f64, f64)) -> Result<Waveform> {
        let n = self
            .nodes
            .get(node)
            .ok_or_else(|| EcuError::UnknownNode(node.to_string()))?;
        Ok(self.raw(n, window)?.resolve_high_z(n.class.float_level()))
    }

    fn raw(&self, n: &Node, win: (f64, f64)) -> Result<Waveform> {
        let active = |target: &str| -> Vec<&Fault> {
            self.faults
                .iter()
                .filter(|f| f.target == target && f.touches(win.0, win.1))
                .collect()
        };

        let mut w = if let Some(link) = self.link_into(&n.name) {
            let mut w = self.node_waveform(&link.from, win)?;
            for f in active(&link.name) {
                w = gate(w, Waveform::HighZ, f.onset, f.repaired_at, win);
            }
            w
        } else {
            let mut w = n.source.clone();
            if let Some(b) = n.bias {
                w = Waveform::sum(w, Waveform::dc(b));
            }
            for d in self.devices.values().filter(|d| d.ports.contains(&n.name)) {
                for f in active(&d.name)
                    .into_iter()
                    .filter(|f| f.kind == FaultKind::PowerLoss)
                {
                    w = gate(w, Waveform::HighZ, f.onset, f.repaired_at, win);
                }
            }
            w
        };

        if let Some(spans) = self.drives.get(&n.name) {
            for s in spans
                .iter()
                .filter(|s| s.since <= win.1 && s.until.is_none_or(|u| u > win.0))
            {
                w = gate(w, s.waveform.clone(), s.since, s.until, win);
            }
        }

        for f in active(&n.name) {
            let faulted = match f.kind {
                FaultKind::StuckLow | FaultKind::ShortToGround => Waveform::dc(0.0),
                FaultKind::StuckHigh => Waveform::dc(LOGIC_HIGH),
                FaultKind::Drift(g) => Waveform::scaled(g, w.clone()),
                _ => continue,
            };
            w = gate(w, faulted, f.onset, f.repaired_at, win);
        }
        Ok(w)
    }

    pub fn driver_diagnostic(&self, device: &str, t: f64) -> Result<DriverDiagnostics> {
        let d = self
            .devices
            .get(device)
            .ok_or_else(|| EcuError::UnknownTarget(device.to_string()))?;
        if !matches!(d.kind, DeviceKind::HsDriver | DeviceKind::LsDriver) {
            return Err(EcuError::NotADriver(device.to_string()));
        }
        let hit = |kind: FaultKind| {
            self.faults
                .iter()
                .any(|f| f.kind == kind && f.active_at(t) && d.ports.contains(&f.target))
        };
        let over_current = hit(FaultKind::ShortToGround);
        let over_voltage = hit(FaultKind::StuckHigh);
        Ok(DriverDiagnostics {
            over_current,
            over_voltage,
            status_pin: over_current || over_voltage,
        })
    }

    /// A motor runs while every one of its port nodes reads logic high.
    pub fn motor_running(&self, device: &str, t: f64) -> Result<bool> {
        let d = self
            .devices
            .get(device)
            .ok_or_else(|| EcuError::UnknownTarget(device.to_string()))?;
        if d.kind != DeviceKind::Motor {
            return Err(EcuError::NotAMotor(device.to_string()));
        }
        for p in &d.ports {
            if self.node_waveform(p, (t, t))?.sample(t)? < LOGIC_THRESHOLD {
                return Ok(false);
            }
        }
        Ok(!d.ports.is_empty())
    }
}
