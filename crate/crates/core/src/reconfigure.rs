// SPDX-License-Identifier: Apache-2.0

//! Fault avoidance through the analogue bus: segment planning, interconnect
//! bypass by linking AT1 to AT2, capacity accounting and signal injection.

use std::collections::VecDeque;

use indexmap::IndexMap;
use thiserror::Error;

use crate::analog_fabric::{AnalogBus, BusLine, Connection, FabricError, NoiseSource, Segment};
use crate::ecu_model::{DeviceKind, EcuError, EcuNetlist};
use crate::signals::Waveform;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReconfError {
    #[error("no node has ABM access")]
    NoAbmNodes,
    #[error("at least one bus pair is required")]
    ZeroPairs,
    #[error("all {0} bypass slots are in use")]
    CapacityExhausted(usize),
    #[error("`{0}` is outside the reconfiguration matrix")]
    NoAbmAccess(String),
    #[error("segment `{0}` has its bus pair in use")]
    SegmentBusy(String),
    #[error("interconnect `{0}` is not declared")]
    UnknownLink(String),
    #[error("interconnect `{0}` spans two bus segments")]
    CrossSegment(String),
    #[error(transparent)]
    Fabric(#[from] FabricError),
    #[error(transparent)]
    Ecu(#[from] EcuError),
}

pub type Result<T> = std::result::Result<T, ReconfError>;

/// Maximum simultaneous bypasses on `buses` individual bus lines.
pub fn capacity(buses: usize) -> usize {
    buses / 2
}

fn is_sensor(net: &EcuNetlist, node: &str) -> bool {
    net.node(node).is_some_and(|n| n.class.is_sensor())
        || net.devices().any(|d| {
            matches!(d.kind, DeviceKind::Hall | DeviceKind::Switch)
                && d.ports.iter().any(|p| p == node)
        })
}

/// Splits ABM nodes into one segment per pair. With two or more pairs,
/// sensor lines get pair 0 and actuation lines share the rest.
pub fn plan_segments(
    net: &EcuNetlist,
    abm_nodes: &[String],
    pairs: usize,
) -> Result<IndexMap<String, Segment>> {
    if pairs == 0 {
        return Err(ReconfError::ZeroPairs);
    }
    if abm_nodes.is_empty() {
        return Err(ReconfError::NoAbmNodes);
    }
    let mut groups: Vec<Vec<String>> = vec![Vec::new(); pairs];
    if pairs == 1 {
        groups[0] = abm_nodes.to_vec();
    } else {
        let mut next_actuator = 0;
        for n in abm_nodes {
            if is_sensor(net, n) {
                groups[0].push(n.clone());
            } else {
                groups[1 + next_actuator % (pairs - 1)].push(n.clone());
                next_actuator += 1;
            }
        }
    }
    Ok(groups
        .into_iter()
        .enumerate()
        .filter(|(_, nodes)| !nodes.is_empty())
        .map(|(pair, nodes)| (format!("segment{pair}"), Segment { pair, nodes }))
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct BypassAssignment {
    pub interconnect: String,
    pub pair_index: usize,
    pub since: f64,
}

/// What currently holds a bus pair.
#[derive(Clone, Debug, PartialEq)]
pub enum Hold {
    Bypass(BypassAssignment),
    Injection { node: String, since: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub enum BypassOutcome {
    Applied(BypassAssignment),
    /// Queued for a free pair.
    UnmetDemand {
        reason: ReconfError,
    },
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Reconfigurator {
    holds: IndexMap<usize, Hold>,
    queue: VecDeque<String>,
}

impl Reconfigurator {
    pub fn holds(&self) -> impl Iterator<Item = (&usize, &Hold)> {
        self.holds.iter()
    }

    pub fn active_bypasses(&self) -> usize {
        self.holds
            .values()
            .filter(|h| matches!(h, Hold::Bypass(_)))
            .count()
    }

    pub fn is_pair_held(&self, pair: usize) -> bool {
        self.holds.contains_key(&pair)
    }

    pub fn bypass_of(&self, link: &str) -> Option<&BypassAssignment> {
        self.holds.values().find_map(|h| match h {
            Hold::Bypass(a) if a.interconnect == link => Some(a),
            _ => None,
        })
    }

    pub fn queued(&self) -> impl Iterator<Item = &str> {
        self.queue.iter().map(String::as_str)
    }

    fn segment_for<'b>(bus: &'b AnalogBus, node: &str) -> Result<(&'b str, usize)> {
        bus.segment_of(node)
            .map(|(name, s)| (name, s.pair))
            .ok_or_else(|| ReconfError::NoAbmAccess(node.to_string()))
    }

    /// Links the segment's pair so the receiver is driven from the driver
    /// through two ABM paths.
    pub fn apply_bypass(
        &mut self,
        bus: &mut AnalogBus,
        net: &mut EcuNetlist,
        link: &str,
        t: f64,
        noise: &mut NoiseSource,
    ) -> Result<BypassAssignment> {
        let l = net
            .link(link)
            .ok_or_else(|| ReconfError::UnknownLink(link.to_string()))?
            .clone();
        if !l.has_abm {
            return Err(ReconfError::NoAbmAccess(link.to_string()));
        }
        let (seg, pair) = Self::segment_for(bus, &l.from)?;
        let (_, pair_to) = Self::segment_for(bus, &l.to)?;
        if pair != pair_to {
            return Err(ReconfError::CrossSegment(link.to_string()));
        }
        if self.holds.contains_key(&pair) || bus.is_linked(pair) {
            return Err(ReconfError::SegmentBusy(seg.to_string()));
        }
        let cap = capacity(bus.bus_lines());
        if self.active_bypasses() >= cap {
            return Err(ReconfError::CapacityExhausted(cap));
        }

        let source = net.node_waveform(&l.from, (t, f64::INFINITY))?;
        bus.release(pair)?;
        bus.connect(pair, BusLine::At1, Connection::Tap(l.from.clone()))?;
        bus.connect(pair, BusLine::At2, Connection::Load(l.to.clone()))?;
        bus.set_linked(pair, true)?;
        let (_, at2) = bus.bus_resolve(pair, |_| Some(source.clone()))?;
        let bound = bus.model.dc_noise_bound;
        let offset = noise.draw(bound) + noise.draw(bound);
        let seen = Waveform::sum(bus.received(&at2)?, Waveform::dc(offset));
        net.start_drive(&l.to, t, seen)?;

        let a = BypassAssignment {
            interconnect: link.to_string(),
            pair_index: pair,
            since: t,
        };
        self.holds.insert(pair, Hold::Bypass(a.clone()));
        Ok(a)
    }

    /// Like [`Self::apply_bypass`], but a busy segment or exhausted capacity
    /// queues the request instead of failing it.
    pub fn request_bypass(
        &mut self,
        bus: &mut AnalogBus,
        net: &mut EcuNetlist,
        link: &str,
        t: f64,
        noise: &mut NoiseSource,
    ) -> Result<BypassOutcome> {
        match self.apply_bypass(bus, net, link, t, noise) {
            Ok(a) => Ok(BypassOutcome::Applied(a)),
            Err(e @ (ReconfError::SegmentBusy(_) | ReconfError::CapacityExhausted(_))) => {
                if !self.queue.iter().any(|q| q == link) {
                    self.queue.push_back(link.to_string());
                }
                Ok(BypassOutcome::UnmetDemand { reason: e })
            }
            Err(e) => Err(e),
        }
    }

    /// Drops a bypass and frees its pair. Queued requests are not retried
    /// here; see [`Self::retry_queue`].
    pub fn release_bypass(
        &mut self,
        bus: &mut AnalogBus,
        net: &mut EcuNetlist,
        link: &str,
        t: f64,
    ) -> Result<bool> {
        let Some(pair) = self.bypass_of(link).map(|a| a.pair_index) else {
            return Ok(false);
        };
        self.holds.shift_remove(&pair);
        bus.release(pair)?;
        if let Some(l) = net.link(link) {
            let to = l.to.clone();
            net.end_drive(&to, t);
        }
        Ok(true)
    }

    pub fn forget_queued(&mut self, link: &str) {
        self.queue.retain(|q| q != link);
    }

    /// Applies queued bypasses in FIFO order where a pair has become free.
    pub fn retry_queue(
        &mut self,
        bus: &mut AnalogBus,
        net: &mut EcuNetlist,
        t: f64,
        noise: &mut NoiseSource,
    ) -> Result<Vec<BypassAssignment>> {
        let mut applied = Vec::new();
        let pending: Vec<String> = self.queue.drain(..).collect();
        for link in pending {
            match self.apply_bypass(bus, net, &link, t, noise) {
                Ok(a) => applied.push(a),
                Err(ReconfError::SegmentBusy(_) | ReconfError::CapacityExhausted(_)) => {
                    self.queue.push_back(link)
                }
                Err(e) => return Err(e),
            }
        }
        Ok(applied)
    }

    /// Drives `node` from the test master over AT2 of its segment.
    pub fn inject(
        &mut self,
        bus: &mut AnalogBus,
        net: &mut EcuNetlist,
        node: &str,
        w: Waveform,
        t: f64,
        noise: &mut NoiseSource,
    ) -> Result<()> {
        if net.node(node).is_none() {
            return Err(EcuError::UnknownNode(node.to_string()).into());
        }
        let (seg, pair) = Self::segment_for(bus, node)?;
        if self.holds.contains_key(&pair) || bus.is_linked(pair) {
            return Err(ReconfError::SegmentBusy(seg.to_string()));
        }
        bus.release(pair)?;
        bus.drive(pair, BusLine::At2, Some(w))?;
        bus.connect(pair, BusLine::At2, Connection::Load(node.to_string()))?;
        let (_, at2) = bus.bus_resolve(pair, |_| None)?;
        let offset = noise.draw(bus.model.dc_noise_bound);
        net.start_drive(
            node,
            t,
            Waveform::sum(bus.received(&at2)?, Waveform::dc(offset)),
        )?;
        self.holds.insert(
            pair,
            Hold::Injection {
                node: node.to_string(),
                since: t,
            },
        );
        Ok(())
    }

    pub fn release_injection(
        &mut self,
        bus: &mut AnalogBus,
        net: &mut EcuNetlist,
        node: &str,
        t: f64,
    ) -> Result<bool> {
        let pair = self.holds.iter().find_map(|(p, h)| match h {
            Hold::Injection { node: n, .. } if n == node => Some(*p),
            _ => None,
        });
        let Some(pair) = pair else { return Ok(false) };
        self.holds.shift_remove(&pair);
        bus.release(pair)?;
        net.end_drive(node, t);
        Ok(true)
    }
}
