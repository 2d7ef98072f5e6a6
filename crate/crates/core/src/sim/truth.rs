use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::ParseError;
use crate::model::ActivityRef;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Request(u64),
    Noise,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestTruth {
    pub class: String,
    /// Logged activities of the request (dropped ones excluded).
    pub refs: BTreeSet<ActivityRef>,
    /// Activities that were generated but never logged.
    pub dropped: u32,
}

/// Which request (if any) each logged activity belongs to.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub labels: BTreeMap<ActivityRef, Label>,
    pub requests: BTreeMap<u64, RequestTruth>,
}

impl GroundTruth {
    pub fn insert(&mut self, r: ActivityRef, label: Label) {
        if let Label::Request(id) = label {
            self.requests.entry(id).or_default().refs.insert(r.clone());
        }
        self.labels.insert(r, label);
    }

    pub fn noise_count(&self) -> usize {
        self.labels.values().filter(|l| **l == Label::Noise).count()
    }

    pub fn dropped_total(&self) -> u64 {
        self.requests.values().map(|r| u64::from(r.dropped)).sum()
    }

    /// Text sidecar: `node seq request_id|NOISE` per activity, then
    /// `#class id name` and `#dropped id count` lines.
    pub fn to_sidecar(&self) -> String {
        let mut out = String::new();
        for (r, label) in &self.labels {
            match label {
                Label::Request(id) => writeln!(out, "{} {} {id}", r.node, r.seq),
                Label::Noise => writeln!(out, "{} {} NOISE", r.node, r.seq),
            }
            .expect("write to string");
        }
        for (id, req) in &self.requests {
            if !req.class.is_empty() {
                writeln!(out, "#class {id} {}", req.class).expect("write to string");
            }
            if req.dropped > 0 {
                writeln!(out, "#dropped {id} {}", req.dropped).expect("write to string");
            }
        }
        out
    }
}

impl FromStr for GroundTruth {
    type Err = ParseError;

    fn from_str(text: &str) -> Result<Self, ParseError> {
        let mut gt = GroundTruth::default();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let fields: Vec<&str> = line.split_whitespace().collect();
            let num = |s: &str| s.parse::<u64>().map_err(|_| ParseError::malformed(line));
            match fields.as_slice() {
                ["#class", id, name] => gt.requests.entry(num(id)?).or_default().class = (*name).to_string(),
                ["#dropped", id, n] => {
                    let n = u32::try_from(num(n)?).map_err(|_| ParseError::malformed(line))?;
                    gt.requests.entry(num(id)?).or_default().dropped = n;
                }
                [node, seq, label] if !node.starts_with('#') => {
                    let r = ActivityRef::new(*node, num(seq)?);
                    let label = if *label == "NOISE" { Label::Noise } else { Label::Request(num(label)?) };
                    gt.insert(r, label);
                }
                _ => return Err(ParseError::malformed(line)),
            }
        }
        Ok(gt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sidecar_round_trip() {
        let mut gt = GroundTruth::default();
        gt.insert(ActivityRef::new("web", 0), Label::Request(0));
        gt.insert(ActivityRef::new("web", 1), Label::Noise);
        gt.insert(ActivityRef::new("db", 0), Label::Request(1));
        gt.requests.get_mut(&0).unwrap().class = "browse".into();
        gt.requests.get_mut(&1).unwrap().dropped = 2;
        let text = gt.to_sidecar();
        assert!(text.contains("web 1 NOISE\n"));
        assert!(text.contains("#dropped 1 2\n"));
        assert_eq!(text.parse::<GroundTruth>().unwrap(), gt);
        assert_eq!(gt.noise_count(), 1);
        assert_eq!(gt.dropped_total(), 2);
    }

    #[test]
    fn rejects_bad_lines() {
        assert!("web x 0".parse::<GroundTruth>().is_err());
        assert!("#bogus 1 2".parse::<GroundTruth>().is_err());
    }
}
