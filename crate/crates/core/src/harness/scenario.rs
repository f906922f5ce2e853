// SPDX-License-Identifier: Apache-2.0

//! Line-oriented scenario files.
//!
//! ```text
//! [netlist]
//! node lamp_drv class=digital_high critical=no source=dc(3.5)
//! link lamp from=lamp_drv to=lamp_rcv abm=yes
//! device mcu kind=mcu ports=lamp_drv
//! [buses]
//! pairs=1
//! [tests]
//! test t1 kind=interconnect target=lamp period=0.05
//! [run]
//! duration=1 seed=7 tck=16e6
//! ```

use std::collections::HashSet;

use indexmap::IndexMap;
use thiserror::Error;

use crate::analog_fabric::Segment;
use crate::ecu_model::{Device, DeviceKind, Fault, FaultKind, Link, Node, SignalClass};
use crate::measurement::TestKind;
use crate::signals::Waveform;
use crate::timing::Mode;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: {what} `{name}` is not declared")]
    DanglingReference {
        line: usize,
        what: &'static str,
        name: String,
    },
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, ScenarioError>;

/// A parsed item with the line it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct Decl<T> {
    pub line: usize,
    pub item: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChainDevice {
    pub name: String,
    pub ir: usize,
    pub cells: usize,
    pub abms: Option<Vec<String>>,
    pub extest: Option<u64>,
    pub sample: Option<u64>,
    pub probe: Option<u64>,
    pub bypass: Option<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IdrBlock {
    pub drivers: Vec<String>,
    pub logicals: Vec<String>,
    pub freq: f64,
    /// Demanded state per logical; all on unless given.
    pub demand: Vec<bool>,
    /// Log one rotation event every this many steps (0: none).
    pub log_every: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TestSpec {
    pub id: String,
    pub kind: TestKind,
    pub target: String,
    pub reference: Option<f64>,
    pub tol: Option<f64>,
    pub period: f64,
    pub window: Option<f64>,
    pub class: Option<SignalClass>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunBlock {
    pub duration: f64,
    pub seed: u64,
    pub tck: f64,
    pub mode: Mode,
    /// When false the run only monitors: no bypasses are attempted.
    pub reconfigure: bool,
    pub config_cycles: Option<u64>,
}

impl Default for RunBlock {
    fn default() -> Self {
        RunBlock {
            duration: 1.0,
            seed: 0,
            tck: crate::timing::DEFAULT_TCK,
            mode: Mode::Worst,
            reconfigure: true,
            config_cycles: None,
        }
    }
}

/// Remote operation while the processor is unpowered: watch `trigger`,
/// drive `actuate` with `drive` when it changes, release when `stop` changes.
#[derive(Clone, Debug, PartialEq)]
pub struct RemoteBlock {
    pub trigger: String,
    pub actuate: String,
    pub drive: Waveform,
    pub stop: String,
    pub poll: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Scenario {
    pub nodes: Vec<Decl<Node>>,
    pub links: Vec<Decl<Link>>,
    pub devices: Vec<Decl<Device>>,
    pub chain: Vec<Decl<ChainDevice>>,
    pub pairs: Option<usize>,
    pub segments: Vec<Decl<(String, Segment)>>,
    pub idr: Option<Decl<IdrBlock>>,
    pub faults: Vec<Decl<Fault>>,
    pub tests: Vec<Decl<TestSpec>>,
    pub run: RunBlock,
    pub remote: Option<Decl<RemoteBlock>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Section {
    None,
    Netlist,
    Chain,
    Buses,
    Idr,
    Faults,
    Tests,
    Run,
    Remote,
}

/// Splits on whitespace outside parentheses.
fn tokens(line: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut start = None;
    for (i, c) in line.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => depth -= 1,
            _ => {}
        }
        if c.is_whitespace() && depth <= 0 {
            if let Some(s) = start.take() {
                out.push(&line[s..i]);
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        out.push(&line[s..]);
    }
    out
}

struct Line<'a> {
    no: usize,
    keys: IndexMap<&'a str, &'a str>,
}

impl<'a> Line<'a> {
    fn err<T>(&self, msg: impl Into<String>) -> Result<T> {
        Err(ScenarioError::Parse {
            line: self.no,
            msg: msg.into(),
        })
    }

    fn parse(no: usize, toks: &[&'a str], allowed: &[&str]) -> Result<Self> {
        let mut keys = IndexMap::new();
        for t in toks {
            let Some((k, v)) = t.split_once('=') else {
                return Err(ScenarioError::Parse {
                    line: no,
                    msg: format!("expected key=value, found `{t}`"),
                });
            };
            if !allowed.contains(&k) {
                return Err(ScenarioError::Parse {
                    line: no,
                    msg: format!("unknown key `{k}`"),
                });
            }
            if keys.insert(k, v).is_some() {
                return Err(ScenarioError::Parse {
                    line: no,
                    msg: format!("key `{k}` given twice"),
                });
            }
        }
        Ok(Line { no, keys })
    }

    fn opt(&self, k: &str) -> Option<&'a str> {
        self.keys.get(k).copied()
    }

    fn req(&self, k: &str) -> Result<&'a str> {
        match self.opt(k) {
            Some(v) => Ok(v),
            None => self.err(format!("missing `{k}=`")),
        }
    }

    fn num(&self, k: &str) -> Result<Option<f64>> {
        match self.opt(k) {
            None => Ok(None),
            Some(v) => match v.parse::<f64>() {
                Ok(x) if x.is_finite() => Ok(Some(x)),
                _ => self.err(format!("`{k}` is not a number: `{v}`")),
            },
        }
    }

    fn req_num(&self, k: &str) -> Result<f64> {
        match self.num(k)? {
            Some(x) => Ok(x),
            None => self.err(format!("missing `{k}=`")),
        }
    }

    fn int(&self, k: &str) -> Result<Option<u64>> {
        match self.opt(k) {
            None => Ok(None),
            Some(v) => {
                let parsed = match v.strip_prefix("0b") {
                    Some(bits) => u64::from_str_radix(bits, 2),
                    None => v.parse::<u64>(),
                };
                match parsed {
                    Ok(x) => Ok(Some(x)),
                    Err(_) => self.err(format!("`{k}` is not an unsigned integer: `{v}`")),
                }
            }
        }
    }

    fn flag(&self, k: &str, default: bool) -> Result<bool> {
        match self.opt(k) {
            None => Ok(default),
            Some("yes") => Ok(true),
            Some("no") => Ok(false),
            Some(v) => self.err(format!("`{k}` must be yes or no, found `{v}`")),
        }
    }

    fn list(&self, k: &str) -> Option<Vec<String>> {
        self.opt(k).map(|v| {
            v.split(',')
                .filter(|s| !s.is_empty())
                .map(str::to_string)
                .collect()
        })
    }

    fn parsed<T: std::str::FromStr<Err = String>>(&self, k: &str) -> Result<T> {
        self.req(k)?.parse::<T>().or_else(|e| self.err(e))
    }
}

/// Parses `dc(v)`, `sine(amp,hz[,offset])`, `pwm(lo,hi,hz,duty)`,
/// `pulses(lo,hi,t1,...)` or `hiz`.
pub fn parse_waveform(expr: &str) -> std::result::Result<Waveform, String> {
    let expr = expr.trim();
    if expr == "hiz" {
        return Ok(Waveform::HighZ);
    }
    let (name, rest) = expr
        .split_once('(')
        .ok_or_else(|| format!("bad waveform `{expr}`"))?;
    let body = rest
        .strip_suffix(')')
        .ok_or_else(|| format!("unclosed waveform `{expr}`"))?;
    let args: Vec<f64> = body
        .split(',')
        .map(|a| {
            a.trim()
                .parse::<f64>()
                .map_err(|_| format!("bad number `{a}` in `{expr}`"))
        })
        .collect::<std::result::Result<_, _>>()?;
    if args.iter().any(|a| !a.is_finite()) {
        return Err(format!("non-finite number in `{expr}`"));
    }
    let arity = |ok: bool| {
        if ok {
            Ok(())
        } else {
            Err(format!("wrong argument count in `{expr}`"))
        }
    };
    match name.trim() {
        "dc" => {
            arity(args.len() == 1)?;
            Ok(Waveform::dc(args[0]))
        }
        "sine" => {
            arity(args.len() == 2 || args.len() == 3)?;
            if args[1] <= 0.0 {
                return Err(format!("sine frequency must be positive in `{expr}`"));
            }
            Ok(Waveform::sine(
                args[0],
                args[1],
                0.0,
                args.get(2).copied().unwrap_or(0.0),
            ))
        }
        "pwm" => {
            arity(args.len() == 4)?;
            Waveform::pwm(args[0], args[1], args[2], args[3])
                .map_err(|e| format!("{e} in `{expr}`"))
        }
        "pulses" => {
            arity(args.len() >= 2)?;
            Waveform::pulses(args[0], args[1], args[2..].to_vec())
                .map_err(|e| format!("{e} in `{expr}`"))
        }
        other => Err(format!("unknown waveform `{other}`")),
    }
}

fn ident<'a>(no: usize, toks: &[&'a str], what: &str) -> Result<&'a str> {
    match toks.get(1) {
        Some(n) if !n.contains('=') && !n.contains(',') => Ok(n),
        _ => Err(ScenarioError::Parse {
            line: no,
            msg: format!("{what} needs a name"),
        }),
    }
}

pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let mut sc = Scenario::default();
    let mut section = Section::None;
    let mut names: HashSet<String> = HashSet::new();
    let mut test_ids: HashSet<String> = HashSet::new();
    let mut seen_sections: HashSet<&'static str> = HashSet::new();

    for (idx, raw) in text.lines().enumerate() {
        let no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(h) = line.strip_prefix('[') {
            let (sec, key) = match h.strip_suffix(']').map(str::trim) {
                Some("netlist") => (Section::Netlist, "netlist"),
                Some("chain") => (Section::Chain, "chain"),
                Some("buses") => (Section::Buses, "buses"),
                Some("idr") => (Section::Idr, "idr"),
                Some("faults") => (Section::Faults, "faults"),
                Some("tests") => (Section::Tests, "tests"),
                Some("run") => (Section::Run, "run"),
                Some("remote") => (Section::Remote, "remote"),
                _ => {
                    return Err(ScenarioError::Parse {
                        line: no,
                        msg: format!("unknown section `{line}`"),
                    })
                }
            };
            if !seen_sections.insert(key) {
                return Err(ScenarioError::Parse {
                    line: no,
                    msg: format!("section [{key}] appears twice"),
                });
            }
            section = sec;
            continue;
        }
        let toks = tokens(line);
        let mut unique = |n: &str| -> Result<()> {
            if names.insert(n.to_string()) {
                Ok(())
            } else {
                Err(ScenarioError::Parse {
                    line: no,
                    msg: format!("duplicate name `{n}`"),
                })
            }
        };
        match (section, toks[0]) {
            (Section::Netlist, "node") => {
                let name = ident(no, &toks, "node")?;
                unique(name)?;
                let l = Line::parse(no, &toks[2..], &["class", "critical", "source", "bias"])?;
                let class: SignalClass = l.parsed("class")?;
                let source = match l.opt("source") {
                    Some(s) => parse_waveform(s).or_else(|e| l.err(e))?,
                    None => match class.default_source() {
                        Some(w) => w,
                        None => return l.err(format!("class {class} needs an explicit source")),
                    },
                };
                sc.nodes.push(Decl {
                    line: no,
                    item: Node {
                        name: name.to_string(),
                        class,
                        source,
                        critical: l.flag("critical", false)?,
                        bias: l.num("bias")?,
                    },
                });
            }
            (Section::Netlist, "link") => {
                let name = ident(no, &toks, "link")?;
                unique(name)?;
                let l = Line::parse(no, &toks[2..], &["from", "to", "abm"])?;
                sc.links.push(Decl {
                    line: no,
                    item: Link {
                        name: name.to_string(),
                        from: l.req("from")?.to_string(),
                        to: l.req("to")?.to_string(),
                        has_abm: l.flag("abm", true)?,
                    },
                });
            }
            (Section::Netlist, "device") => {
                let name = ident(no, &toks, "device")?;
                unique(name)?;
                let l = Line::parse(no, &toks[2..], &["kind", "ports"])?;
                let kind: DeviceKind = l.parsed("kind")?;
                sc.devices.push(Decl {
                    line: no,
                    item: Device {
                        name: name.to_string(),
                        kind,
                        ports: l.list("ports").unwrap_or_default(),
                    },
                });
            }
            (Section::Chain, "device") => {
                let name = ident(no, &toks, "chain device")?;
                if sc.chain.iter().any(|d| d.item.name == name) {
                    return Err(ScenarioError::Parse {
                        line: no,
                        msg: format!("duplicate chain device `{name}`"),
                    });
                }
                let l = Line::parse(
                    no,
                    &toks[2..],
                    &["ir", "cells", "abms", "extest", "sample", "probe", "bypass"],
                )?;
                let ir = l.int("ir")?.map(|v| v as usize);
                let cells = l.int("cells")?.map(|v| v as usize);
                let (Some(ir), Some(cells)) = (ir, cells) else {
                    return l.err("chain device needs ir= and cells=");
                };
                sc.chain.push(Decl {
                    line: no,
                    item: ChainDevice {
                        name: name.to_string(),
                        ir,
                        cells,
                        abms: l.list("abms"),
                        extest: l.int("extest")?,
                        sample: l.int("sample")?,
                        probe: l.int("probe")?,
                        bypass: l.int("bypass")?,
                    },
                });
            }
            (Section::Buses, "segment") => {
                let name = ident(no, &toks, "segment")?;
                if sc.segments.iter().any(|s| s.item.0 == name) {
                    return Err(ScenarioError::Parse {
                        line: no,
                        msg: format!("duplicate segment `{name}`"),
                    });
                }
                let l = Line::parse(no, &toks[2..], &["pair", "nodes"])?;
                let pair = l.int("pair")?.ok_or(ScenarioError::Parse {
                    line: no,
                    msg: "missing `pair=`".into(),
                })? as usize;
                sc.segments.push(Decl {
                    line: no,
                    item: (
                        name.to_string(),
                        Segment {
                            pair,
                            nodes: l.list("nodes").unwrap_or_default(),
                        },
                    ),
                });
            }
            (Section::Buses, _) => {
                let l = Line::parse(no, &toks, &["pairs"])?;
                match l.int("pairs")? {
                    Some(p) if p >= 1 => sc.pairs = Some(p as usize),
                    _ => return l.err("pairs must be at least 1"),
                }
            }
            (Section::Idr, _) => {
                if sc.idr.is_some() {
                    return Err(ScenarioError::Parse {
                        line: no,
                        msg: "only one idr block is allowed".into(),
                    });
                }
                let l = Line::parse(
                    no,
                    &toks,
                    &["drivers", "logicals", "freq", "demand", "log_every"],
                )?;
                let drivers = l.list("drivers").unwrap_or_default();
                let logicals = l.list("logicals").unwrap_or_default();
                if drivers.is_empty() || logicals.is_empty() {
                    return l.err("idr needs drivers= and logicals=");
                }
                let demand = match l.list("demand") {
                    None => vec![true; logicals.len()],
                    Some(d) => d
                        .iter()
                        .map(|s| match s.as_str() {
                            "on" | "1" => Ok(true),
                            "off" | "0" => Ok(false),
                            other => l.err(format!("demand entries are on/off, found `{other}`")),
                        })
                        .collect::<Result<Vec<_>>>()?,
                };
                if demand.len() != logicals.len() {
                    return l.err("demand= needs one entry per logical");
                }
                sc.idr = Some(Decl {
                    line: no,
                    item: IdrBlock {
                        drivers,
                        logicals,
                        freq: l.num("freq")?.unwrap_or(crate::idr::DEFAULT_FREQUENCY),
                        demand,
                        log_every: l.int("log_every")?.unwrap_or(100),
                    },
                });
            }
            (Section::Faults, _) => {
                let l = Line::parse(no, &toks, &["at", "kind", "target"])?;
                let at = l.req_num("at")?;
                if at < 0.0 {
                    return l.err("fault time must be >= 0");
                }
                let kind: FaultKind = l.parsed("kind")?;
                sc.faults.push(Decl {
                    line: no,
                    item: Fault::new(at, kind, l.req("target")?),
                });
            }
            (Section::Tests, "test") => {
                let id = ident(no, &toks, "test")?;
                if !test_ids.insert(id.to_string()) {
                    return Err(ScenarioError::Parse {
                        line: no,
                        msg: format!("duplicate test `{id}`"),
                    });
                }
                let l = Line::parse(
                    no,
                    &toks[2..],
                    &["kind", "target", "ref", "tol", "period", "window", "class"],
                )?;
                let period = l.req_num("period")?;
                if period <= 0.0 {
                    return l.err("period must be positive");
                }
                let window = l.num("window")?;
                if window.is_some_and(|w| w <= 0.0) {
                    return l.err("window must be positive");
                }
                let class = match l.opt("class") {
                    Some(c) => Some(c.parse::<SignalClass>().or_else(|e| l.err(e))?),
                    None => None,
                };
                sc.tests.push(Decl {
                    line: no,
                    item: TestSpec {
                        id: id.to_string(),
                        kind: l.parsed("kind")?,
                        target: l.req("target")?.to_string(),
                        reference: l.num("ref")?,
                        tol: l.num("tol")?,
                        period,
                        window,
                        class,
                    },
                });
            }
            (Section::Run, _) => {
                let l = Line::parse(
                    no,
                    &toks,
                    &[
                        "duration",
                        "seed",
                        "tck",
                        "mode",
                        "reconfigure",
                        "config_cycles",
                    ],
                )?;
                if let Some(d) = l.num("duration")? {
                    if d <= 0.0 {
                        return l.err("duration must be positive");
                    }
                    sc.run.duration = d;
                }
                if let Some(s) = l.int("seed")? {
                    sc.run.seed = s;
                }
                if let Some(f) = l.num("tck")? {
                    if f <= 0.0 {
                        return l.err("tck must be positive");
                    }
                    sc.run.tck = f;
                }
                if l.opt("mode").is_some() {
                    sc.run.mode = l.parsed("mode")?;
                }
                sc.run.reconfigure = l.flag("reconfigure", sc.run.reconfigure)?;
                if let Some(c) = l.int("config_cycles")? {
                    sc.run.config_cycles = Some(c);
                }
            }
            (Section::Remote, _) => {
                let l = Line::parse(no, &toks, &["trigger", "actuate", "drive", "stop", "poll"])?;
                let poll = l.req_num("poll")?;
                if poll <= 0.0 {
                    return l.err("poll must be positive");
                }
                sc.remote = Some(Decl {
                    line: no,
                    item: RemoteBlock {
                        trigger: l.req("trigger")?.to_string(),
                        actuate: l.req("actuate")?.to_string(),
                        drive: parse_waveform(l.req("drive")?).or_else(|e| l.err(e))?,
                        stop: l.req("stop")?.to_string(),
                        poll,
                    },
                });
            }
            (Section::None, _) => {
                return Err(ScenarioError::Parse {
                    line: no,
                    msg: "content before the first section".into(),
                })
            }
            (_, other) => {
                return Err(ScenarioError::Parse {
                    line: no,
                    msg: format!("unexpected `{other}` here"),
                })
            }
        }
    }
    sc.validate()?;
    Ok(sc)
}

impl Scenario {
    pub fn node_names(&self) -> impl Iterator<Item = &str> {
        self.nodes.iter().map(|n| n.item.name.as_str())
    }

    fn has_node(&self, n: &str) -> bool {
        self.nodes.iter().any(|d| d.item.name == n)
    }

    fn has_link(&self, n: &str) -> bool {
        self.links.iter().any(|d| d.item.name == n)
    }

    fn has_device(&self, n: &str) -> bool {
        self.devices.iter().any(|d| d.item.name == n)
    }

    /// Cross-reference checks.
    fn validate(&self) -> Result<()> {
        let dangling = |line, what, name: &str| ScenarioError::DanglingReference {
            line,
            what,
            name: name.to_string(),
        };
        for l in &self.links {
            for end in [&l.item.from, &l.item.to] {
                if !self.has_node(end) {
                    return Err(dangling(l.line, "node", end));
                }
            }
        }
        for d in &self.devices {
            if let Some(p) = d.item.ports.iter().find(|p| !self.has_node(p)) {
                return Err(dangling(d.line, "node", p));
            }
        }
        for s in &self.segments {
            if let Some(n) = s.item.1.nodes.iter().find(|n| !self.has_node(n)) {
                return Err(dangling(s.line, "node", n));
            }
        }
        for c in &self.chain {
            if let Some(n) = c.item.abms.iter().flatten().find(|n| !self.has_node(n)) {
                return Err(dangling(c.line, "node", n));
            }
        }
        if let Some(idr) = &self.idr {
            if let Some(d) = idr
                .item
                .drivers
                .iter()
                .find(|d| !self.has_node(d) && !self.has_device(d))
            {
                return Err(dangling(idr.line, "driver", d));
            }
        }
        for f in &self.faults {
            let t = &f.item.target;
            if !self.has_node(t) && !self.has_link(t) && !self.has_device(t) {
                return Err(dangling(f.line, "fault target", t));
            }
        }
        for t in &self.tests {
            let ok = match t.item.kind {
                TestKind::Interconnect => self.has_link(&t.item.target),
                _ => self.has_node(&t.item.target),
            };
            if !ok {
                let what = if t.item.kind == TestKind::Interconnect {
                    "link"
                } else {
                    "node"
                };
                return Err(dangling(t.line, what, &t.item.target));
            }
        }
        if let Some(r) = &self.remote {
            for n in [&r.item.trigger, &r.item.actuate, &r.item.stop] {
                if !self.has_node(n) {
                    return Err(dangling(r.line, "node", n));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "
[netlist]
node a class=digital_high critical=no source=dc(3.5)
[tests]
test t kind=dc target=a ref=3.5 tol=0.05 period=0.01
[run]
duration=0.1 seed=1 tck=16e6
";

    #[test]
    fn minimal() {
        let s = parse_scenario(MINIMAL).unwrap();
        assert_eq!(s.nodes.len(), 1);
        assert_eq!(s.tests[0].item.reference, Some(3.5));
        assert_eq!(s.run.seed, 1);
    }

    #[test]
    fn dangling_fault() {
        let text = format!("{MINIMAL}[faults]\nat=0 kind=open target=ghost\n");
        assert!(matches!(
            parse_scenario(&text),
            Err(ScenarioError::DanglingReference { line: 9, .. })
        ));
    }

    #[test]
    fn duplicate_node() {
        let text = "[netlist]\nnode a class=digital_high\nnode a class=digital_low\n";
        assert!(matches!(
            parse_scenario(text),
            Err(ScenarioError::Parse { line: 3, .. })
        ));
    }

    #[test]
    fn tokenizer_keeps_parentheses() {
        assert_eq!(
            tokens("node h class=hall source=pulses(0, 3.5, 1e-3, 2e-3) critical=no"),
            [
                "node",
                "h",
                "class=hall",
                "source=pulses(0, 3.5, 1e-3, 2e-3)",
                "critical=no"
            ]
        );
    }

    #[test]
    fn waveforms() {
        assert_eq!(parse_waveform("dc(1.5)"), Ok(Waveform::dc(1.5)));
        assert_eq!(parse_waveform("hiz"), Ok(Waveform::HighZ));
        assert_eq!(
            parse_waveform("sine(1,10,2)"),
            Ok(Waveform::sine(1.0, 10.0, 0.0, 2.0))
        );
        assert!(parse_waveform("pwm(0,3.5,1000)").is_err());
        assert!(parse_waveform("pulses(0,1,2,1)").is_err());
        assert!(parse_waveform("ramp(1)").is_err());
    }

    #[test]
    fn hall_needs_source() {
        assert!(matches!(
            parse_scenario("[netlist]\nnode h class=hall\n"),
            Err(ScenarioError::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn unknown_key() {
        assert!(parse_scenario("[run]\nduration=1 speed=2\n").is_err());
    }
}
