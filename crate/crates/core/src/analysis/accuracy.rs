use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::cag::Cag;
use crate::model::ActivityRef;
use crate::sim::{GroundTruth, Label};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MismatchReason {
    /// The simulator dropped at least one of the request's activities.
    ActivitiesDropped,
    /// No CAG is rooted at the request's BEGIN.
    NoCag,
    /// The CAG never reached an END.
    Incomplete,
    /// The CAG holds activities of other requests or noise.
    ExtraActivities,
    /// Some of the request's activities are not in its CAG.
    MissingActivities,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mismatch {
    pub request: u64,
    pub cag: Option<String>,
    pub reasons: Vec<MismatchReason>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub requests: usize,
    pub correct: usize,
    /// `correct / requests`; 1 when there are no requests.
    pub accuracy: f64,
    /// True when there were no requests to score.
    pub vacuous: bool,
    /// CAGs whose root is not the first activity of any request.
    pub spurious_cags: Vec<String>,
    pub mismatches: Vec<Mismatch>,
}

/// A request is correct when exactly one complete CAG holds all of its
/// logged activities and nothing else.
pub fn score_accuracy(cags: &[Cag], truth: &GroundTruth) -> AccuracyReport {
    let mut by_request: BTreeMap<u64, Vec<&Cag>> = BTreeMap::new();
    let mut spurious = Vec::new();
    for cag in cags {
        let owner = cag
            .root()
            .and_then(|r| cag.vertices[r].parts.first())
            .and_then(|p| truth.labels.get(p))
            .and_then(|l| match l {
                Label::Request(id) => Some(*id),
                Label::Noise => None,
            });
        match owner {
            Some(id) => by_request.entry(id).or_default().push(cag),
            None => spurious.push(cag.id.clone()),
        }
    }

    let mut correct = 0;
    let mut mismatches = Vec::new();
    for (&id, req) in &truth.requests {
        let candidates = by_request.get(&id).map(Vec::as_slice).unwrap_or(&[]);
        let mut reasons = BTreeSet::new();
        if req.dropped > 0 {
            reasons.insert(MismatchReason::ActivitiesDropped);
        }
        let found = candidates.iter().find(|c| {
            c.is_complete() && c.activity_refs().collect::<BTreeSet<&ActivityRef>>() == req.refs.iter().collect()
        });
        match (found, req.dropped) {
            (Some(_), 0) => {
                correct += 1;
                continue;
            }
            (Some(_), _) => {}
            (None, _) => match candidates.first() {
                None => {
                    reasons.insert(MismatchReason::NoCag);
                }
                Some(c) => {
                    if !c.is_complete() {
                        reasons.insert(MismatchReason::Incomplete);
                    }
                    let got: BTreeSet<&ActivityRef> = c.activity_refs().collect();
                    if got.iter().any(|r| !req.refs.contains(*r)) {
                        reasons.insert(MismatchReason::ExtraActivities);
                    }
                    if req.refs.iter().any(|r| !got.contains(r)) {
                        reasons.insert(MismatchReason::MissingActivities);
                    }
                }
            },
        }
        mismatches.push(Mismatch {
            request: id,
            cag: found.or(candidates.first()).map(|c| c.id.clone()),
            reasons: reasons.into_iter().collect(),
        });
    }
    let requests = truth.requests.len();
    AccuracyReport {
        requests,
        correct,
        accuracy: if requests == 0 { 1.0 } else { correct as f64 / requests as f64 },
        vacuous: requests == 0,
        spurious_cags: spurious,
        mismatches,
    }
}
