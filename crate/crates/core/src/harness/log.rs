// SPDX-License-Identifier: Apache-2.0

//! CSV event log: `time,category,subject,detail`.

use std::fmt;
use std::str::FromStr;

pub const HEADER: &str = "time,category,subject,detail";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Category {
    Test,
    Fault,
    Bypass,
    Idr,
    Alert,
    Decision,
}

impl Category {
    pub fn name(self) -> &'static str {
        match self {
            Category::Test => "test",
            Category::Fault => "fault",
            Category::Bypass => "bypass",
            Category::Idr => "idr",
            Category::Alert => "alert",
            Category::Decision => "decision",
        }
    }
}

impl FromStr for Category {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        [
            Category::Test,
            Category::Fault,
            Category::Bypass,
            Category::Idr,
            Category::Alert,
            Category::Decision,
        ]
        .into_iter()
        .find(|c| c.name() == s)
        .ok_or_else(|| format!("unknown category `{s}`"))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Record {
    /// Nanoseconds of simulation time.
    pub time: u64,
    pub category: Category,
    pub subject: String,
    /// Space-separated `key=value` pairs, possibly led by a bare word.
    pub detail: String,
}

impl Record {
    pub fn seconds(&self) -> f64 {
        self.time as f64 * 1e-9
    }

    /// Value of `key=` in the detail field.
    pub fn field(&self, key: &str) -> Option<&str> {
        self.detail
            .split(' ')
            .find_map(|kv| kv.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
    }

    /// Leading bare word of the detail field.
    pub fn verb(&self) -> &str {
        self.detail
            .split(' ')
            .next()
            .filter(|w| !w.contains('='))
            .unwrap_or("")
    }
}

pub fn format_time(ns: u64) -> String {
    format!("{}.{:09}", ns / 1_000_000_000, ns % 1_000_000_000)
}

fn parse_time(s: &str) -> Option<u64> {
    let (secs, frac) = s.split_once('.')?;
    if frac.len() != 9 {
        return None;
    }
    Some(secs.parse::<u64>().ok()? * 1_000_000_000 + frac.parse::<u64>().ok()?)
}

/// Keeps the CSV shape intact whatever a caller passes in.
fn clean(s: &str) -> String {
    s.replace([',', '\n', '\r'], ";")
}

impl fmt::Display for Record {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{}",
            format_time(self.time),
            self.category.name(),
            self.subject,
            self.detail
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EventLog {
    pub records: Vec<Record>,
}

impl EventLog {
    pub fn push(&mut self, time: u64, category: Category, subject: &str, detail: impl AsRef<str>) {
        self.records.push(Record {
            time,
            category,
            subject: clean(subject),
            detail: clean(detail.as_ref()),
        });
    }

    pub fn is_time_ordered(&self) -> bool {
        self.records.windows(2).all(|w| w[0].time <= w[1].time)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.records.len() + 1));
        out.push_str(HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&r.to_string());
            out.push('\n');
        }
        out
    }

    pub fn parse_csv(text: &str) -> Result<EventLog, String> {
        let mut log = EventLog::default();
        for (i, line) in text.lines().enumerate() {
            if i == 0 && line == HEADER || line.is_empty() {
                continue;
            }
            let mut parts = line.splitn(4, ',');
            let (Some(t), Some(c), Some(s), Some(d)) =
                (parts.next(), parts.next(), parts.next(), parts.next())
            else {
                return Err(format!("line {}: expected four fields", i + 1));
            };
            log.records.push(Record {
                time: parse_time(t).ok_or_else(|| format!("line {}: bad time `{t}`", i + 1))?,
                category: c.parse().map_err(|e| format!("line {}: {e}", i + 1))?,
                subject: s.to_string(),
                detail: d.to_string(),
            });
        }
        Ok(log)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut log = EventLog::default();
        log.push(1_500_000_000, Category::Fault, "l1", "open affects=l1|a|b");
        log.push(2_000_000_007, Category::Test, "t1", "result=fail value=3.5");
        let csv = log.to_csv();
        assert!(csv.contains("1.500000000,fault,l1,open affects=l1|a|b"));
        assert!(csv.contains("2.000000007,test,t1,"));
        assert_eq!(EventLog::parse_csv(&csv).unwrap(), log);
        assert_eq!(log.records[0].field("affects"), Some("l1|a|b"));
        assert_eq!(log.records[0].verb(), "open");
        assert_eq!(log.records[1].verb(), "");
    }

    #[test]
    fn commas_are_replaced() {
        let mut log = EventLog::default();
        log.push(0, Category::Alert, "a,b", "x,y");
        assert_eq!(log.records[0].to_string(), "0.000000000,alert,a;b,x;y");
    }
}
