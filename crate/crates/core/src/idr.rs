// SPDX-License-Identifier: Apache-2.0

//! Integrated diagnostic reconfiguration over identical indicator drivers:
//! continuous rotation, fault-profile localization and exclusion.

use std::collections::HashSet;

use thiserror::Error;

/// Rotation must stay above the flicker-fusion limit.
pub const MIN_FREQUENCY: f64 = 85.0;
pub const DEFAULT_FREQUENCY: f64 = 100.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IdrError {
    #[error("rotation frequency {0} Hz must exceed 85 Hz")]
    FrequencyTooLow(f64),
    #[error("rotation needs at least one driver and one logical indicator")]
    Empty,
    #[error("duplicate name `{0}` in rotation")]
    Duplicate(String),
    #[error("`{0}` is not a rotation driver")]
    UnknownDriver(String),
    #[error("driver `{0}` is already excluded")]
    AlreadyExcluded(String),
    #[error("excluding `{0}` would leave no active driver")]
    LastDriver(String),
    #[error("anomalies do not match any single driver")]
    AmbiguousProfile,
    #[error("need {need} rotation steps of observations, got {got}")]
    InsufficientObservations { need: usize, got: usize },
    #[error("observation at step {0} does not cover every logical indicator")]
    ObservationShape(u64),
}

pub type Result<T> = std::result::Result<T, IdrError>;

#[derive(Clone, Debug, PartialEq)]
pub struct RotationSchedule {
    drivers: Vec<String>,
    logicals: Vec<String>,
    frequency: f64,
    excluded: Vec<String>,
}

/// What each logical indicator showed during one rotation step, against
/// what it was asked to show.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Observation {
    pub step: u64,
    pub expected: Vec<bool>,
    pub shown: Vec<bool>,
}

impl RotationSchedule {
    pub fn new(drivers: Vec<String>, logicals: Vec<String>, frequency: f64) -> Result<Self> {
        if !(frequency > MIN_FREQUENCY) || !frequency.is_finite() {
            return Err(IdrError::FrequencyTooLow(frequency));
        }
        if drivers.is_empty() || logicals.is_empty() {
            return Err(IdrError::Empty);
        }
        let mut seen = HashSet::new();
        for n in drivers.iter().chain(&logicals) {
            if !seen.insert(n.as_str()) {
                return Err(IdrError::Duplicate(n.clone()));
            }
        }
        Ok(RotationSchedule {
            drivers,
            logicals,
            frequency,
            excluded: Vec::new(),
        })
    }

    pub fn drivers(&self) -> &[String] {
        &self.drivers
    }

    pub fn logicals(&self) -> &[String] {
        &self.logicals
    }

    pub fn frequency(&self) -> f64 {
        self.frequency
    }

    pub fn excluded(&self) -> &[String] {
        &self.excluded
    }

    pub fn active(&self) -> Vec<&str> {
        self.drivers
            .iter()
            .filter(|d| !self.excluded.contains(d))
            .map(String::as_str)
            .collect()
    }

    /// Steps in one rotation period: every logical visits every slot once.
    pub fn period_steps(&self) -> usize {
        self.logicals.len().max(self.active().len())
    }

    pub fn period(&self) -> f64 {
        self.period_steps() as f64 / self.frequency
    }

    pub fn step_at(&self, t: f64) -> u64 {
        (t * self.frequency).floor() as u64
    }

    pub fn step_start(&self, step: u64) -> f64 {
        step as f64 / self.frequency
    }

    /// Driver index (into the active list) serving each logical at `step`.
    /// With more logicals than drivers some logicals sit out the step.
    pub fn slots_at_step(&self, step: u64) -> Vec<Option<usize>> {
        let a = self.active().len();
        let p = self.period_steps() as u64;
        (0..self.logicals.len() as u64)
            .map(|i| {
                let slot = ((i + step % p) % p) as usize;
                (slot < a).then_some(slot)
            })
            .collect()
    }

    pub fn mapping_at_step(&self, step: u64) -> Vec<(&str, Option<&str>)> {
        let active = self.active();
        self.logicals
            .iter()
            .zip(self.slots_at_step(step))
            .map(|(l, s)| (l.as_str(), s.map(|k| active[k])))
            .collect()
    }

    pub fn rotate_mapping(&self, t: f64) -> Vec<(&str, Option<&str>)> {
        self.mapping_at_step(self.step_at(t))
    }

    pub fn exclude(&self, driver: &str) -> Result<RotationSchedule> {
        if !self.drivers.iter().any(|d| d == driver) {
            return Err(IdrError::UnknownDriver(driver.to_string()));
        }
        if self.excluded.iter().any(|d| d == driver) {
            return Err(IdrError::AlreadyExcluded(driver.to_string()));
        }
        if self.active().len() == 1 {
            return Err(IdrError::LastDriver(driver.to_string()));
        }
        let mut next = self.clone();
        next.excluded.push(driver.to_string());
        Ok(next)
    }

    /// Names the single driver behind every anomaly, if there is one.
    pub fn detect_and_localize(&self, obs: &[Observation]) -> Result<Option<String>> {
        let need = self.period_steps();
        let steps: HashSet<u64> = obs.iter().map(|o| o.step).collect();
        if steps.len() < need {
            return Err(IdrError::InsufficientObservations {
                need,
                got: steps.len(),
            });
        }
        let m = self.logicals.len();
        let mut suspect: Option<&str> = None;
        for o in obs {
            if o.expected.len() != m || o.shown.len() != m {
                return Err(IdrError::ObservationShape(o.step));
            }
            for (i, (_, driver)) in self.mapping_at_step(o.step).into_iter().enumerate() {
                let Some(d) = driver else { continue };
                if o.expected[i] == o.shown[i] {
                    continue;
                }
                match suspect {
                    None => suspect = Some(d),
                    Some(s) if s == d => {}
                    Some(_) => return Err(IdrError::AmbiguousProfile),
                }
            }
        }
        Ok(suspect.map(str::to_string))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(p: &str, n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{p}{i}")).collect()
    }

    fn sched() -> RotationSchedule {
        RotationSchedule::new(names("driver", 4), names("ind", 4), 100.0).unwrap()
    }

    /// Brute force: logical i shows `demand && driver healthy`.
    fn observe(s: &RotationSchedule, dead: &[&str], from: u64, n: u64) -> Vec<Observation> {
        (from..from + n)
            .map(|step| {
                let map = s.mapping_at_step(step);
                Observation {
                    step,
                    expected: vec![true; map.len()],
                    shown: map
                        .iter()
                        .map(|(_, d)| d.is_some_and(|d| !dead.contains(&d)))
                        .collect(),
                }
            })
            .collect()
    }

    #[test]
    fn identity_then_shift() {
        let s = sched();
        let m0: Vec<_> = s
            .rotate_mapping(0.0)
            .into_iter()
            .map(|(_, d)| d.unwrap())
            .collect();
        assert_eq!(m0, ["driver0", "driver1", "driver2", "driver3"]);
        let m1: Vec<_> = s
            .rotate_mapping(0.01)
            .into_iter()
            .map(|(_, d)| d.unwrap())
            .collect();
        assert_eq!(m1, ["driver1", "driver2", "driver3", "driver0"]);
    }

    #[test]
    fn closed_form_step() {
        let s = sched();
        assert_eq!(s.step_at(0.25), 25);
        assert_eq!(s.rotate_mapping(0.25), s.mapping_at_step(1));
    }

    #[test]
    fn localize_stuck_off() {
        let s = sched();
        assert_eq!(
            s.detect_and_localize(&observe(&s, &["driver2"], 7, 4)),
            Ok(Some("driver2".into()))
        );
        assert_eq!(s.detect_and_localize(&observe(&s, &[], 0, 4)), Ok(None));
        assert_eq!(
            s.detect_and_localize(&observe(&s, &["driver1", "driver2"], 0, 4)),
            Err(IdrError::AmbiguousProfile)
        );
        assert!(matches!(
            s.detect_and_localize(&observe(&s, &[], 0, 3)),
            Err(IdrError::InsufficientObservations { need: 4, got: 3 })
        ));
    }

    #[test]
    fn exclusion_serves_three_quarters() {
        let s = sched().exclude("driver2").unwrap();
        let p = s.period_steps() as u64;
        assert_eq!(p, 4);
        for i in 0..4 {
            let served = (0..p).filter(|k| s.slots_at_step(*k)[i].is_some()).count();
            assert_eq!(served, 3);
        }
        for k in 0..100 {
            assert!(s
                .mapping_at_step(k)
                .iter()
                .all(|(_, d)| *d != Some("driver2")));
        }
    }

    #[test]
    fn exclusion_guards() {
        let s = sched().exclude("driver2").unwrap();
        assert_eq!(
            s.exclude("driver2"),
            Err(IdrError::AlreadyExcluded("driver2".into()))
        );
        let one = RotationSchedule::new(names("d", 1), names("l", 2), 100.0).unwrap();
        assert_eq!(one.exclude("d0"), Err(IdrError::LastDriver("d0".into())));
        assert!(matches!(s.exclude("nope"), Err(IdrError::UnknownDriver(_))));
    }

    #[test]
    fn frequency_guard() {
        assert_eq!(
            RotationSchedule::new(names("d", 2), names("l", 2), 85.0),
            Err(IdrError::FrequencyTooLow(85.0))
        );
    }
}
