// SPDX-License-Identifier: Apache-2.0

//! Analogue boundary modules, the AT1/AT2 bus pairs and the STA400
//! multiplexer blocks used to emulate 1149.4 access on plain pins.

use indexmap::IndexMap;
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::signals::{SignalError, Waveform};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FabricError {
    #[error("bus pair {0} does not exist")]
    NoSuchPair(usize),
    #[error("bus pair {pair} line {line:?} has more than one driver")]
    BusConflict { pair: usize, line: BusLine },
    #[error("STA400 channel {0} does not exist")]
    BadChannel(usize),
    #[error("invalid ABM switch state: {0}")]
    InvalidSwitchState(&'static str),
    #[error("segment `{0}` is declared twice or shares a bus pair")]
    SegmentClash(String),
    #[error("node `{0}` belongs to more than one segment")]
    NodeInTwoSegments(String),
    #[error("node `{0}` has no waveform")]
    UnknownNode(String),
    #[error(transparent)]
    Signal(#[from] SignalError),
}

pub type Result<T> = std::result::Result<T, FabricError>;

/// Switches of one ABM.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct AbmSwitchState {
    /// SD
    pub core_disconnect: bool,
    /// SB1
    pub to_at1: bool,
    /// SB2
    pub to_at2: bool,
    /// SH
    pub to_vh: bool,
    /// SL
    pub to_vl: bool,
    /// SG
    pub to_ground: bool,
}

impl AbmSwitchState {
    pub const CELLS: usize = 6;

    pub fn validate(&self, bypass_link: bool) -> Result<()> {
        let rails = [self.to_vh, self.to_vl, self.to_ground]
            .iter()
            .filter(|b| **b)
            .count();
        if rails > 1 {
            return Err(FabricError::InvalidSwitchState(
                "more than one of VH, VL and ground closed",
            ));
        }
        if self.to_at1 && self.to_at2 && !bypass_link {
            return Err(FabricError::InvalidSwitchState(
                "AT1 and AT2 both closed outside bypass",
            ));
        }
        Ok(())
    }

    /// Boundary cell image in SD, SB1, SB2, SH, SL, SG order.
    pub fn to_cells(self) -> [bool; Self::CELLS] {
        [
            self.core_disconnect,
            self.to_at1,
            self.to_at2,
            self.to_vh,
            self.to_vl,
            self.to_ground,
        ]
    }

    pub fn from_cells(c: [bool; Self::CELLS]) -> Self {
        AbmSwitchState {
            core_disconnect: c[0],
            to_at1: c[1],
            to_at2: c[2],
            to_vh: c[3],
            to_vl: c[4],
            to_ground: c[5],
        }
    }
}

/// Behavioural ABM path: one low-pass pole followed by the output clamp.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AbmTransferModel {
    pub v_max: f64,
    pub v_min: f64,
    pub cutoff: f64,
    pub dc_noise_bound: f64,
}

impl Default for AbmTransferModel {
    fn default() -> Self {
        AbmTransferModel {
            v_max: 3.92,
            v_min: -0.640,
            cutoff: 1e6,
            dc_noise_bound: 0.010,
        }
    }
}

impl AbmTransferModel {
    /// Noise-free transfer. Measurement noise is drawn separately, at the
    /// point of sampling, from a [`NoiseSource`].
    pub fn transfer(&self, w: &Waveform) -> Result<Waveform> {
        if w.contains_high_z() {
            return Err(SignalError::UnresolvedHighZ.into());
        }
        Ok(w.clone()
            .lowpass(self.cutoff)
            .clipped(self.v_min, self.v_max))
    }

    pub fn gain_at(&self, frequency: f64) -> f64 {
        let r = frequency / self.cutoff;
        1.0 / (1.0 + r * r).sqrt()
    }

    /// Phase of the response in radians (negative: lag).
    pub fn phase_at(&self, frequency: f64) -> f64 {
        -(frequency / self.cutoff).atan()
    }
}

pub fn abm_transfer(w: &Waveform, model: &AbmTransferModel) -> Result<Waveform> {
    model.transfer(w)
}

/// Seeded uniform noise generator shared by all measurement points of a run.
#[derive(Clone, Debug)]
pub struct NoiseSource {
    rng: ChaCha8Rng,
}

impl NoiseSource {
    pub fn new(seed: u64) -> Self {
        NoiseSource {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// One draw, uniform in `[-bound, bound]`.
    pub fn draw(&mut self, bound: f64) -> f64 {
        if bound <= 0.0 {
            return 0.0;
        }
        Uniform::new_inclusive(-bound, bound).sample(&mut self.rng)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BusLine {
    At1,
    At2,
}

impl BusLine {
    fn index(self) -> usize {
        match self {
            BusLine::At1 => 0,
            BusLine::At2 => 1,
        }
    }
}

/// How a node ABM is attached to a bus line.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Connection {
    /// The node's signal is driven onto the line.
    Tap(String),
    /// The line drives the node (core disconnected).
    Load(String),
}

#[derive(Clone, Debug, Default, PartialEq)]
struct PairState {
    lines: [Vec<Connection>; 2],
    master: [Option<Waveform>; 2],
    linked: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub pair: usize,
    pub nodes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnalogBus {
    pairs: Vec<PairState>,
    segments: IndexMap<String, Segment>,
    pub model: AbmTransferModel,
}

impl AnalogBus {
    pub fn new(pairs: usize, segments: IndexMap<String, Segment>) -> Result<Self> {
        let mut used_pairs = vec![false; pairs];
        let mut seen = std::collections::HashSet::new();
        for (name, seg) in &segments {
            match used_pairs.get_mut(seg.pair) {
                None => return Err(FabricError::NoSuchPair(seg.pair)),
                Some(true) => return Err(FabricError::SegmentClash(name.clone())),
                Some(slot) => *slot = true,
            }
            for n in &seg.nodes {
                if !seen.insert(n.as_str()) {
                    return Err(FabricError::NodeInTwoSegments(n.clone()));
                }
            }
        }
        Ok(AnalogBus {
            pairs: vec![PairState::default(); pairs],
            segments,
            model: AbmTransferModel::default(),
        })
    }

    pub fn pair_count(&self) -> usize {
        self.pairs.len()
    }

    pub fn bus_lines(&self) -> usize {
        2 * self.pairs.len()
    }

    pub fn segments(&self) -> &IndexMap<String, Segment> {
        &self.segments
    }

    pub fn segment_of(&self, node: &str) -> Option<(&str, &Segment)> {
        self.segments
            .iter()
            .find(|(_, s)| s.nodes.iter().any(|n| n == node))
            .map(|(k, s)| (k.as_str(), s))
    }

    fn pair_mut(&mut self, pair: usize) -> Result<&mut PairState> {
        self.pairs
            .get_mut(pair)
            .ok_or(FabricError::NoSuchPair(pair))
    }

    fn pair(&self, pair: usize) -> Result<&PairState> {
        self.pairs.get(pair).ok_or(FabricError::NoSuchPair(pair))
    }

    pub fn connect(&mut self, pair: usize, line: BusLine, c: Connection) -> Result<()> {
        let p = self.pair_mut(pair)?;
        if !p.lines[line.index()].contains(&c) {
            p.lines[line.index()].push(c);
        }
        Ok(())
    }

    /// Test master output onto a line (or `None` to release it).
    pub fn drive(&mut self, pair: usize, line: BusLine, w: Option<Waveform>) -> Result<()> {
        self.pair_mut(pair)?.master[line.index()] = w;
        Ok(())
    }

    pub fn set_linked(&mut self, pair: usize, linked: bool) -> Result<()> {
        self.pair_mut(pair)?.linked = linked;
        Ok(())
    }

    pub fn is_linked(&self, pair: usize) -> bool {
        self.pairs.get(pair).is_some_and(|p| p.linked)
    }

    /// Opens every switch on the pair and unlinks it.
    pub fn release(&mut self, pair: usize) -> Result<()> {
        *self.pair_mut(pair)? = PairState::default();
        Ok(())
    }

    pub fn connections(&self, pair: usize, line: BusLine) -> &[Connection] {
        self.pairs
            .get(pair)
            .map(|p| p.lines[line.index()].as_slice())
            .unwrap_or(&[])
    }

    /// Nodes currently driven from the pair.
    pub fn loads(&self, pair: usize) -> Vec<(BusLine, &str)> {
        let Some(p) = self.pairs.get(pair) else {
            return Vec::new();
        };
        [BusLine::At1, BusLine::At2]
            .into_iter()
            .flat_map(|l| {
                p.lines[l.index()].iter().filter_map(move |c| match c {
                    Connection::Load(n) => Some((l, n.as_str())),
                    Connection::Tap(_) => None,
                })
            })
            .collect()
    }

    /// Waveforms on AT1 and AT2. Tapped nodes pass through their ABM on the
    /// way in; undriven lines idle at 0 V.
    pub fn bus_resolve<F>(&self, pair: usize, node_waveform: F) -> Result<(Waveform, Waveform)>
    where
        F: Fn(&str) -> Option<Waveform>,
    {
        let p = self.pair(pair)?;
        let mut drivers: [Vec<Waveform>; 2] = [Vec::new(), Vec::new()];
        for (idx, line) in p.lines.iter().enumerate() {
            for c in line {
                if let Connection::Tap(n) = c {
                    let w = node_waveform(n).ok_or_else(|| FabricError::UnknownNode(n.clone()))?;
                    drivers[idx].push(self.model.transfer(&w)?);
                }
            }
            if let Some(m) = &p.master[idx] {
                drivers[idx].push(m.clone());
            }
        }
        let pick = |ds: Vec<Waveform>, line: BusLine| -> Result<Waveform> {
            match ds.len() {
                0 => Ok(Waveform::dc(0.0)),
                1 => Ok(ds.into_iter().next().unwrap_or(Waveform::dc(0.0))),
                _ => Err(FabricError::BusConflict { pair, line }),
            }
        };
        let [d1, d2] = drivers;
        if p.linked {
            let all: Vec<Waveform> = d1.into_iter().chain(d2).collect();
            let w = pick(all, BusLine::At1)?;
            Ok((w.clone(), w))
        } else {
            Ok((pick(d1, BusLine::At1)?, pick(d2, BusLine::At2)?))
        }
    }

    /// What a node attached as a load sees: the line behind its own ABM.
    pub fn received(&self, line_waveform: &Waveform) -> Result<Waveform> {
        self.model.transfer(line_waveform)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Sta400Routing {
    #[default]
    CorePath,
    TapAt1,
    TapAt2,
    /// Load side disconnected from the core and driven from a bus line.
    Inject(BusLine),
}

impl Sta400Routing {
    /// Equivalent 1149.4 switch pattern.
    pub fn abm_state(self) -> AbmSwitchState {
        let mut s = AbmSwitchState::default();
        match self {
            Sta400Routing::CorePath => {}
            Sta400Routing::TapAt1 => s.to_at1 = true,
            Sta400Routing::TapAt2 => s.to_at2 = true,
            Sta400Routing::Inject(BusLine::At1) => {
                s.core_disconnect = true;
                s.to_at1 = true;
            }
            Sta400Routing::Inject(BusLine::At2) => {
                s.core_disconnect = true;
                s.to_at2 = true;
            }
        }
        s
    }
}

/// Dual multiplexer spliced into two signal paths.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Sta400Block {
    pub channels: [Sta400Routing; 2],
}

impl Sta400Block {
    pub fn route(mut self, channel: usize, mode: Sta400Routing) -> Result<Self> {
        *self
            .channels
            .get_mut(channel)
            .ok_or(FabricError::BadChannel(channel))? = mode;
        Ok(self)
    }

    /// Signal delivered to the load side of a channel.
    pub fn load_signal(
        &self,
        channel: usize,
        core: &Waveform,
        bus: &AnalogBus,
        lines: (&Waveform, &Waveform),
    ) -> Result<Waveform> {
        match self
            .channels
            .get(channel)
            .ok_or(FabricError::BadChannel(channel))?
        {
            Sta400Routing::Inject(BusLine::At1) => bus.received(lines.0),
            Sta400Routing::Inject(BusLine::At2) => bus.received(lines.1),
            _ => Ok(core.clone()),
        }
    }
}

pub fn route_sta400(
    block: Sta400Block,
    channel: usize,
    mode: Sta400Routing,
) -> Result<Sta400Block> {
    block.route(channel, mode)
}
