// SPDX-License-Identifier: Apache-2.0

//! Analytic waveform descriptors.
//!
//! Every node source and bus signal is a closed-form [`Waveform`] rather than a
//! sample buffer. Sampling is exact, and rectangular signals expose their edge
//! instants directly, so duty-cycle measurement is limited only by floating
//! point precision.
//!
//! Linear filtering is pushed into the descriptor wherever a closed form
//! exists: a sine stays a sine with scaled amplitude and shifted phase, and a
//! rectangular wave behind a cascade of first-order poles is evaluated as a
//! sum of step responses over its recent edges.

use std::f64::consts::PI;
use std::sync::Arc;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SignalError {
    #[error("high-impedance waveform sampled without a pull network")]
    UnresolvedHighZ,
    #[error("pulse train edge times must be finite, non-negative and strictly increasing")]
    NonMonotonicEdges,
    #[error("invalid waveform parameter: {0}")]
    InvalidParameter(&'static str),
}

pub type Result<T> = std::result::Result<T, SignalError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EdgeDirection {
    Rising,
    Falling,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub time: f64,
    pub direction: EdgeDirection,
}

/// A time-domain signal descriptor.
///
/// Build values through the constructor functions ([`Waveform::pwm`],
/// [`Waveform::sum`], ...) rather than the variants: the constructors fold
/// constant offsets and gains into the primitive shapes, which keeps edges and
/// clip decisions exact.
#[derive(Clone, Debug, PartialEq)]
pub enum Waveform {
    Dc(f64),
    Sine {
        amplitude: f64,
        frequency: f64,
        phase: f64,
        offset: f64,
    },
    /// Rectangular wave: `high` during `[k/f, (k+duty)/f)`, `low` otherwise.
    Pwm {
        low: f64,
        high: f64,
        frequency: f64,
        duty: f64,
    },
    /// Starts at `low` and toggles between `low` and `high` at every edge.
    PulseTrain {
        low: f64,
        high: f64,
        edges: Arc<[f64]>,
    },
    HighZ,
    Sum(Box<Waveform>, Box<Waveform>),
    Scaled {
        gain: f64,
        inner: Box<Waveform>,
    },
    /// `before` for `t < at`, `after` from `at` onward.
    Switched {
        at: f64,
        before: Box<Waveform>,
        after: Box<Waveform>,
    },
    /// Rectangular signal behind a cascade of first-order low-pass poles,
    /// given as cutoff frequencies in Hz.
    Lowpass {
        inner: Box<Waveform>,
        poles: Vec<f64>,
    },
    Clipped {
        inner: Box<Waveform>,
        min: f64,
        max: f64,
    },
}

impl Waveform {
    pub fn dc(level: f64) -> Self {
        Waveform::Dc(level)
    }

    pub fn sine(amplitude: f64, frequency: f64, phase: f64, offset: f64) -> Self {
        if amplitude == 0.0 {
            return Waveform::Dc(offset);
        }
        Waveform::Sine {
            amplitude,
            frequency,
            phase,
            offset,
        }
    }

    /// PWM wave. Duty 0 or 1 collapses to the corresponding DC level.
    pub fn pwm(low: f64, high: f64, frequency: f64, duty: f64) -> Result<Self> {
        if !(frequency > 0.0 && frequency.is_finite()) {
            return Err(SignalError::InvalidParameter(
                "pwm frequency must be positive",
            ));
        }
        if !(0.0..=1.0).contains(&duty) {
            return Err(SignalError::InvalidParameter("pwm duty must lie in [0, 1]"));
        }
        Ok(if duty == 0.0 || low == high {
            Waveform::Dc(low)
        } else if duty == 1.0 {
            Waveform::Dc(high)
        } else {
            Waveform::Pwm {
                low,
                high,
                frequency,
                duty,
            }
        })
    }

    pub fn pulses(low: f64, high: f64, edges: Vec<f64>) -> Result<Self> {
        let ordered = edges.windows(2).all(|w| w[0] < w[1]);
        if !ordered || edges.iter().any(|e| !e.is_finite() || *e < 0.0) {
            return Err(SignalError::NonMonotonicEdges);
        }
        if edges.is_empty() || low == high {
            return Ok(Waveform::Dc(low));
        }
        Ok(Waveform::PulseTrain {
            low,
            high,
            edges: edges.into(),
        })
    }

    pub fn sum(a: Waveform, b: Waveform) -> Self {
        match (a, b) {
            (Waveform::Dc(x), Waveform::Dc(y)) => Waveform::Dc(x + y),
            (Waveform::Dc(x), other) | (other, Waveform::Dc(x)) => other.offset_by(x),
            (a, b) => Waveform::Sum(Box::new(a), Box::new(b)),
        }
    }

    fn offset_by(self, dv: f64) -> Self {
        if dv == 0.0 {
            return self;
        }
        match self {
            Waveform::Dc(v) => Waveform::Dc(v + dv),
            Waveform::Sine {
                amplitude,
                frequency,
                phase,
                offset,
            } => Waveform::Sine {
                amplitude,
                frequency,
                phase,
                offset: offset + dv,
            },
            Waveform::Pwm {
                low,
                high,
                frequency,
                duty,
            } => Waveform::Pwm {
                low: low + dv,
                high: high + dv,
                frequency,
                duty,
            },
            Waveform::PulseTrain { low, high, edges } => Waveform::PulseTrain {
                low: low + dv,
                high: high + dv,
                edges,
            },
            // Unity DC gain: an offset passes straight through the poles.
            Waveform::Lowpass { inner, poles } => Waveform::Lowpass {
                inner: Box::new(inner.offset_by(dv)),
                poles,
            },
            Waveform::Switched { at, before, after } => Waveform::Switched {
                at,
                before: Box::new(before.offset_by(dv)),
                after: Box::new(after.offset_by(dv)),
            },
            other => Waveform::Sum(Box::new(other), Box::new(Waveform::Dc(dv))),
        }
    }

    pub fn scaled(gain: f64, w: Waveform) -> Self {
        if gain == 1.0 {
            return w;
        }
        match w {
            Waveform::Dc(v) => Waveform::Dc(gain * v),
            Waveform::Sine {
                amplitude,
                frequency,
                phase,
                offset,
            } => Waveform::sine(gain * amplitude, frequency, phase, gain * offset),
            Waveform::Pwm {
                low,
                high,
                frequency,
                duty,
            } => Waveform::Pwm {
                low: gain * low,
                high: gain * high,
                frequency,
                duty,
            },
            Waveform::PulseTrain { low, high, edges } => Waveform::PulseTrain {
                low: gain * low,
                high: gain * high,
                edges,
            },
            Waveform::HighZ => Waveform::HighZ,
            Waveform::Sum(a, b) => {
                Waveform::sum(Waveform::scaled(gain, *a), Waveform::scaled(gain, *b))
            }
            Waveform::Switched { at, before, after } => Waveform::Switched {
                at,
                before: Box::new(Waveform::scaled(gain, *before)),
                after: Box::new(Waveform::scaled(gain, *after)),
            },
            Waveform::Lowpass { inner, poles } => Waveform::Lowpass {
                inner: Box::new(Waveform::scaled(gain, *inner)),
                poles,
            },
            other => Waveform::Scaled {
                gain,
                inner: Box::new(other),
            },
        }
    }

    pub fn switched(at: f64, before: Waveform, after: Waveform) -> Self {
        if before == after {
            return before;
        }
        Waveform::Switched {
            at,
            before: Box::new(before),
            after: Box::new(after),
        }
    }

    /// Apply one first-order low-pass pole with the given cutoff.
    pub fn lowpass(self, cutoff: f64) -> Self {
        match self {
            Waveform::Dc(_) | Waveform::HighZ => self,
            Waveform::Sine {
                amplitude,
                frequency,
                phase,
                offset,
            } => {
                let ratio = frequency / cutoff;
                Waveform::Sine {
                    amplitude: amplitude / (1.0 + ratio * ratio).sqrt(),
                    frequency,
                    phase: phase - ratio.atan(),
                    offset,
                }
            }
            rect @ (Waveform::Pwm { .. } | Waveform::PulseTrain { .. }) => Waveform::Lowpass {
                inner: Box::new(rect),
                poles: vec![cutoff],
            },
            Waveform::Lowpass { inner, mut poles } => {
                poles.push(cutoff);
                Waveform::Lowpass { inner, poles }
            }
            Waveform::Sum(a, b) => Waveform::sum(a.lowpass(cutoff), b.lowpass(cutoff)),
            Waveform::Scaled { gain, inner } => Waveform::scaled(gain, inner.lowpass(cutoff)),
            // Filter transients across a switch instant are not modeled.
            Waveform::Switched { at, before, after } => {
                Waveform::switched(at, before.lowpass(cutoff), after.lowpass(cutoff))
            }
            // Exact when the clip is inactive; an overdriven input is filtered
            // before clipping rather than after.
            Waveform::Clipped { inner, min, max } => inner.lowpass(cutoff).clipped(min, max),
        }
    }

    /// Saturate to `[min, max]`. Leaves the waveform untouched if its range
    /// already lies inside the bounds.
    pub fn clipped(self, min: f64, max: f64) -> Self {
        if let Some((lo, hi)) = self.bounds() {
            if lo >= min && hi <= max {
                return self;
            }
        }
        match self {
            Waveform::Dc(v) => Waveform::Dc(v.clamp(min, max)),
            Waveform::Pwm {
                low,
                high,
                frequency,
                duty,
            } => {
                let (low, high) = (low.clamp(min, max), high.clamp(min, max));
                if low == high {
                    Waveform::Dc(low)
                } else {
                    Waveform::Pwm {
                        low,
                        high,
                        frequency,
                        duty,
                    }
                }
            }
            Waveform::PulseTrain { low, high, edges } => {
                let (low, high) = (low.clamp(min, max), high.clamp(min, max));
                if low == high {
                    Waveform::Dc(low)
                } else {
                    Waveform::PulseTrain { low, high, edges }
                }
            }
            Waveform::Switched { at, before, after } => {
                Waveform::switched(at, before.clipped(min, max), after.clipped(min, max))
            }
            Waveform::Clipped {
                inner,
                min: m0,
                max: m1,
            } => Waveform::Clipped {
                inner,
                min: m0.max(min),
                max: m1.min(max),
            },
            other => Waveform::Clipped {
                inner: Box::new(other),
                min,
                max,
            },
        }
    }

    pub fn is_high_z(&self) -> bool {
        matches!(self, Waveform::HighZ)
    }

    /// True if any part of the descriptor is high impedance.
    pub fn contains_high_z(&self) -> bool {
        match self {
            Waveform::HighZ => true,
            Waveform::Sum(a, b) => a.contains_high_z() || b.contains_high_z(),
            Waveform::Scaled { inner, .. }
            | Waveform::Lowpass { inner, .. }
            | Waveform::Clipped { inner, .. } => inner.contains_high_z(),
            Waveform::Switched { before, after, .. } => {
                before.contains_high_z() || after.contains_high_z()
            }
            _ => false,
        }
    }

    /// Replace every high-impedance leaf with a constant level.
    pub fn resolve_high_z(self, level: f64) -> Self {
        if !self.contains_high_z() {
            return self;
        }
        match self {
            Waveform::HighZ => Waveform::Dc(level),
            Waveform::Sum(a, b) => Waveform::sum(a.resolve_high_z(level), b.resolve_high_z(level)),
            Waveform::Scaled { gain, inner } => Waveform::scaled(gain, inner.resolve_high_z(level)),
            Waveform::Switched { at, before, after } => Waveform::switched(
                at,
                before.resolve_high_z(level),
                after.resolve_high_z(level),
            ),
            Waveform::Lowpass { inner, poles } => {
                let mut w = inner.resolve_high_z(level);
                for p in poles {
                    w = w.lowpass(p);
                }
                w
            }
            Waveform::Clipped { inner, min, max } => inner.resolve_high_z(level).clipped(min, max),
            other => other,
        }
    }

    /// Closed-range bounds `(min, max)` over all time; `None` if the waveform
    /// contains an unresolved high-impedance part.
    pub fn bounds(&self) -> Option<(f64, f64)> {
        match self {
            Waveform::Dc(v) => Some((*v, *v)),
            Waveform::Sine {
                amplitude, offset, ..
            } => Some((offset - amplitude.abs(), offset + amplitude.abs())),
            Waveform::Pwm { low, high, .. } | Waveform::PulseTrain { low, high, .. } => {
                Some((low.min(*high), low.max(*high)))
            }
            Waveform::HighZ => None,
            Waveform::Sum(a, b) => {
                let (a0, a1) = a.bounds()?;
                let (b0, b1) = b.bounds()?;
                Some((a0 + b0, a1 + b1))
            }
            Waveform::Scaled { gain, inner } => {
                let (lo, hi) = inner.bounds()?;
                let (x, y) = (gain * lo, gain * hi);
                Some((x.min(y), x.max(y)))
            }
            Waveform::Switched { before, after, .. } => {
                let (a0, a1) = before.bounds()?;
                let (b0, b1) = after.bounds()?;
                Some((a0.min(b0), a1.max(b1)))
            }
            // Real-pole cascades have a monotone step response: no overshoot.
            Waveform::Lowpass { inner, .. } => inner.bounds(),
            Waveform::Clipped { inner, min, max } => {
                let (lo, hi) = inner.bounds()?;
                Some((lo.clamp(*min, *max), hi.clamp(*min, *max)))
            }
        }
    }

    /// Exact value at time `t`.
    pub fn sample(&self, t: f64) -> Result<f64> {
        Ok(match self {
            Waveform::Dc(v) => *v,
            Waveform::Sine {
                amplitude,
                frequency,
                phase,
                offset,
            } => offset + amplitude * (2.0 * PI * frequency * t + phase).sin(),
            Waveform::Pwm {
                low,
                high,
                frequency,
                duty,
            } => {
                if pwm_is_high(t, *frequency, *duty) {
                    *high
                } else {
                    *low
                }
            }
            Waveform::PulseTrain { low, high, edges } => {
                if edges.partition_point(|e| *e <= t) % 2 == 0 {
                    *low
                } else {
                    *high
                }
            }
            Waveform::HighZ => return Err(SignalError::UnresolvedHighZ),
            Waveform::Sum(a, b) => a.sample(t)? + b.sample(t)?,
            Waveform::Scaled { gain, inner } => gain * inner.sample(t)?,
            Waveform::Switched { at, before, after } => {
                if t < *at {
                    before.sample(t)?
                } else {
                    after.sample(t)?
                }
            }
            Waveform::Lowpass { inner, poles } => sample_filtered_rect(inner, poles, t)?,
            Waveform::Clipped { inner, min, max } => inner.sample(t)?.clamp(*min, *max),
        })
    }

    /// The two levels of a rectangular waveform, in `(before first edge, after)` order.
    fn rect_levels(&self) -> Option<(f64, f64)> {
        match self {
            Waveform::Pwm { low, high, .. } => Some((*low, *high)),
            Waveform::PulseTrain { low, high, .. } => Some((*low, *high)),
            Waveform::Lowpass { inner, .. } => inner.rect_levels(),
            Waveform::Clipped { inner, min, max } => {
                let (a, b) = inner.rect_levels()?;
                Some((a.clamp(*min, *max), b.clamp(*min, *max)))
            }
            _ => None,
        }
    }

    /// Transition instants in `[t0, t1)`, sorted ascending.
    ///
    /// Only rectangular signals have edges. For PWM the rising edges sit at
    /// `k/f` and the falling edges at `(k + duty)/f`, so a window starting on a
    /// period boundary includes that rising edge. Filtered rectangular signals
    /// report their mid-level crossings, which lag the source edges by the
    /// cascade's median step delay.
    pub fn edges_in(&self, t0: f64, t1: f64) -> Vec<Edge> {
        let mut out = Vec::new();
        if t1 > t0 {
            self.collect_edges(t0, t1, &mut out);
        }
        out
    }

    fn collect_edges(&self, t0: f64, t1: f64, out: &mut Vec<Edge>) {
        match self {
            Waveform::Pwm {
                low,
                high,
                frequency,
                duty,
            } => {
                let (up, down) = if high > low {
                    (EdgeDirection::Rising, EdgeDirection::Falling)
                } else {
                    (EdgeDirection::Falling, EdgeDirection::Rising)
                };
                let mut k = (t0 * frequency).floor() - 1.0;
                loop {
                    let rise = k / frequency;
                    if rise >= t1 {
                        break;
                    }
                    let fall = (k + duty) / frequency;
                    if rise >= t0 {
                        out.push(Edge {
                            time: rise,
                            direction: up,
                        });
                    }
                    if fall >= t0 && fall < t1 {
                        out.push(Edge {
                            time: fall,
                            direction: down,
                        });
                    }
                    k += 1.0;
                }
            }
            Waveform::PulseTrain { low, high, edges } => {
                let start = edges.partition_point(|e| *e < t0);
                let end = edges.partition_point(|e| *e < t1);
                for (i, &time) in edges.iter().enumerate().take(end).skip(start) {
                    let rising = (i % 2 == 0) == (high > low);
                    out.push(Edge {
                        time,
                        direction: if rising {
                            EdgeDirection::Rising
                        } else {
                            EdgeDirection::Falling
                        },
                    });
                }
            }
            Waveform::Lowpass { inner, poles } => {
                let delay = median_step_delay(poles);
                for e in inner.edges_in(t0 - delay, t1 - delay) {
                    out.push(Edge {
                        time: e.time + delay,
                        direction: e.direction,
                    });
                }
            }
            Waveform::Clipped { inner, .. } => {
                if let Some((a, b)) = self.rect_levels() {
                    if a != b {
                        inner.collect_edges(t0, t1, out);
                    }
                }
            }
            Waveform::Switched { at, before, after } => {
                if t0 < *at {
                    before.collect_edges(t0, t1.min(*at), out);
                }
                if *at >= t0 && *at < t1 {
                    if let (Ok(a), Ok(b)) = (before.sample(*at), after.sample(*at)) {
                        let rect_like = |w: &Waveform| {
                            matches!(w, Waveform::Dc(_)) || w.rect_levels().is_some()
                        };
                        if a != b && rect_like(before) && rect_like(after) {
                            out.push(Edge {
                                time: *at,
                                direction: if b > a {
                                    EdgeDirection::Rising
                                } else {
                                    EdgeDirection::Falling
                                },
                            });
                        }
                    }
                }
                if t1 > *at {
                    after.collect_edges(t0.max(*at), t1, out);
                }
            }
            _ => {}
        }
    }

    /// Exact mean over `[t0, t1]`.
    pub fn mean(&self, t0: f64, t1: f64) -> Result<f64> {
        if t1 <= t0 {
            return self.sample(t0);
        }
        Ok(self.integral(t0, t1)? / (t1 - t0))
    }

    fn integral(&self, t0: f64, t1: f64) -> Result<f64> {
        Ok(match self {
            Waveform::Dc(v) => v * (t1 - t0),
            Waveform::Sine {
                amplitude,
                frequency,
                phase,
                offset,
            } => {
                let w = 2.0 * PI * frequency;
                offset * (t1 - t0)
                    - amplitude / w * ((w * t1 + phase).cos() - (w * t0 + phase).cos())
            }
            Waveform::Pwm { .. } | Waveform::PulseTrain { .. } => {
                let mut acc = 0.0;
                let mut t = t0;
                for e in self.edges_in(t0, t1) {
                    acc += self.sample(t)? * (e.time - t);
                    t = e.time;
                }
                acc + self.sample(t)? * (t1 - t)
            }
            Waveform::HighZ => return Err(SignalError::UnresolvedHighZ),
            Waveform::Sum(a, b) => a.integral(t0, t1)? + b.integral(t0, t1)?,
            Waveform::Scaled { gain, inner } => gain * inner.integral(t0, t1)?,
            Waveform::Switched { at, before, after } => {
                if t1 <= *at {
                    before.integral(t0, t1)?
                } else if t0 >= *at {
                    after.integral(t0, t1)?
                } else {
                    before.integral(t0, *at)? + after.integral(*at, t1)?
                }
            }
            Waveform::Lowpass { inner, poles } => {
                let horizon = settle_horizon(poles);
                let (a, b) = inner.rect_levels().ok_or(SignalError::InvalidParameter(
                    "low-pass cascade over a non-rectangular source",
                ))?;
                let swing = (a - b).abs();
                let mut acc = inner.integral(t0, t1)?;
                for e in inner.edges_in((t0 - horizon).max(0.0), t1) {
                    let step = match e.direction {
                        EdgeDirection::Rising => swing,
                        EdgeDirection::Falling => -swing,
                    };
                    let lo = (t0 - e.time).max(0.0);
                    let hi = t1 - e.time;
                    acc -= step * (tail_integral(poles, hi) - tail_integral(poles, lo));
                }
                acc
            }
            Waveform::Clipped { inner, .. } => {
                // Piecewise Simpson, refined over the settling span after each
                // source edge where the integrand bends sharply.
                let mut breaks = vec![t0, t1];
                let mut leaf: &Waveform = inner;
                let mut settle = 0.0;
                loop {
                    match leaf {
                        Waveform::Lowpass { inner, poles } => {
                            settle = settle_horizon(poles);
                            leaf = inner;
                        }
                        Waveform::Clipped { inner, .. } => leaf = inner,
                        _ => break,
                    }
                }
                for e in leaf.edges_in(t0, t1) {
                    breaks.push(e.time);
                    if settle > 0.0 && e.time + settle < t1 {
                        breaks.push(e.time + settle);
                    }
                }
                breaks.sort_by(f64::total_cmp);
                breaks.dedup();
                let mut acc = 0.0;
                for w in breaks.windows(2) {
                    acc += simpson(|t| self.sample(t), w[0], w[1], 256)?;
                }
                acc
            }
        })
    }
}

fn pwm_is_high(t: f64, frequency: f64, duty: f64) -> bool {
    // Compare against the same expressions used for edge times so that
    // sampling and edges_in never disagree by a rounding step.
    let mut k = (t * frequency).floor();
    if t < k / frequency {
        k -= 1.0;
    } else if t >= (k + 1.0) / frequency {
        k += 1.0;
    }
    t < (k + duty) / frequency
}

fn simpson(f: impl Fn(f64) -> Result<f64>, a: f64, b: f64, n: usize) -> Result<f64> {
    if b <= a {
        return Ok(0.0);
    }
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut acc = f(a)? + f(b)?;
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + i as f64 * h)?;
    }
    Ok(acc * h / 3.0)
}

/// Time constant of a pole given as a cutoff in Hz.
fn tau(cutoff: f64) -> f64 {
    1.0 / (2.0 * PI * cutoff)
}

fn poles_equal(poles: &[f64]) -> bool {
    poles
        .iter()
        .all(|p| ((p - poles[0]) / poles[0]).abs() < 1e-9)
}

fn poles_distinct(poles: &[f64]) -> bool {
    poles.iter().enumerate().all(|(i, a)| {
        poles[i + 1..]
            .iter()
            .all(|b| ((a - b) / a.max(*b)).abs() > 1e-3)
    })
}

/// `1 - step_response(x)` of the pole cascade, `x` in seconds since the step.
fn step_tail(poles: &[f64], x: f64) -> f64 {
    if x < 0.0 {
        return 1.0;
    }
    if poles_equal(poles) {
        let z = x / tau(poles[0]);
        let mut term = 1.0;
        let mut acc = 1.0;
        for k in 1..poles.len() {
            term *= z / k as f64;
            acc += term;
        }
        (-z).exp() * acc
    } else if poles_distinct(poles) {
        let rates: Vec<f64> = poles.iter().map(|p| 2.0 * PI * p).collect();
        rates
            .iter()
            .enumerate()
            .map(|(i, ai)| {
                let coeff: f64 = rates
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, aj)| aj / (aj - ai))
                    .product();
                coeff * (-ai * x).exp()
            })
            .sum()
    } else {
        1.0 - integrate_cascade(poles, x)
    }
}

/// RK4 step response for pole sets that are neither all-equal nor well separated.
fn integrate_cascade(poles: &[f64], x: f64) -> f64 {
    let rates: Vec<f64> = poles.iter().map(|p| 2.0 * PI * p).collect();
    let fastest = rates.iter().cloned().fold(0.0, f64::max);
    let steps = ((x * fastest * 50.0).ceil() as usize).max(1);
    let dt = x / steps as f64;
    let deriv = |y: &[f64]| -> Vec<f64> {
        let mut d = Vec::with_capacity(y.len());
        let mut input = 1.0;
        for (yi, a) in y.iter().zip(&rates) {
            d.push(a * (input - yi));
            input = *yi;
        }
        d
    };
    let mut y = vec![0.0; rates.len()];
    for _ in 0..steps {
        let k1 = deriv(&y);
        let y2: Vec<f64> = y.iter().zip(&k1).map(|(a, k)| a + 0.5 * dt * k).collect();
        let k2 = deriv(&y2);
        let y3: Vec<f64> = y.iter().zip(&k2).map(|(a, k)| a + 0.5 * dt * k).collect();
        let k3 = deriv(&y3);
        let y4: Vec<f64> = y.iter().zip(&k3).map(|(a, k)| a + dt * k).collect();
        let k4 = deriv(&y4);
        for i in 0..y.len() {
            y[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    *y.last().unwrap_or(&1.0)
}

/// Integral of [`step_tail`] over `[0, u]`.
fn tail_integral(poles: &[f64], u: f64) -> f64 {
    if u <= 0.0 {
        return 0.0;
    }
    if poles_equal(poles) {
        let tc = tau(poles[0]);
        let z = u / tc;
        let ez = (-z).exp();
        // Each term of the Erlang tail integrates to a regularized lower
        // incomplete gamma value.
        let mut acc = 0.0;
        let mut partial = 0.0;
        let mut term = 1.0;
        for k in 0..poles.len() {
            if k > 0 {
                term *= z / k as f64;
            }
            partial += term;
            acc += 1.0 - ez * partial;
        }
        tc * acc
    } else if poles_distinct(poles) {
        let rates: Vec<f64> = poles.iter().map(|p| 2.0 * PI * p).collect();
        rates
            .iter()
            .enumerate()
            .map(|(i, ai)| {
                let coeff: f64 = rates
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, aj)| aj / (aj - ai))
                    .product();
                coeff * (1.0 - (-ai * u).exp()) / ai
            })
            .sum()
    } else {
        let span = u.min(settle_horizon(poles));
        let head = simpson(|s| Ok(step_tail(poles, s)), 0.0, span, 512).unwrap_or(0.0);
        head
    }
}

/// Past this age an edge's residual is below 1e-16 of its step.
fn settle_horizon(poles: &[f64]) -> f64 {
    let slowest = poles.iter().cloned().fold(f64::INFINITY, f64::min);
    (40.0 + 6.0 * poles.len() as f64) * tau(slowest)
}

fn median_step_delay(poles: &[f64]) -> f64 {
    let (mut lo, mut hi) = (0.0, settle_horizon(poles));
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if step_tail(poles, mid) > 0.5 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn sample_filtered_rect(inner: &Waveform, poles: &[f64], t: f64) -> Result<f64> {
    let (first, second) = inner.rect_levels().ok_or(SignalError::InvalidParameter(
        "low-pass cascade over a non-rectangular source",
    ))?;
    let horizon = settle_horizon(poles);
    let current = inner.sample(t)?;
    let mut y = current;
    // Edges in (t - horizon, t]: each contributes its unsettled residual.
    let window_start = (t - horizon).max(0.0);
    let mut edges = inner.edges_in(window_start, t);
    if let Some(e) = inner.edges_in(t, t + f64::EPSILON * t.max(1.0)).first() {
        if e.time == t {
            edges.push(*e);
        }
    }
    for e in edges {
        let step = match e.direction {
            EdgeDirection::Rising => first.max(second) - first.min(second),
            EdgeDirection::Falling => first.min(second) - first.max(second),
        };
        y -= step * step_tail(poles, t - e.time);
    }
    Ok(y)
}
