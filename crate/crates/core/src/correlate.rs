//! Ranker + engine wired together over per-node logs.

use std::cell::Cell;
use std::collections::{BTreeSet, VecDeque};
use std::fs::File;
use std::io::{self, BufRead, BufReader};
use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::cag::{AnomalyCounts, Cag, CagStatus};
use crate::engine::Engine;
use crate::model::{parse_activity, Activity, BoundaryRule};
use crate::ranker::{ActivityStream, Ranker, RankerConfig, RankerStats};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorrelatorConfig {
    pub ranker: RankerConfig,
    pub boundary: BoundaryRule,
}

/// Counters for one correlation run.
///
/// `activities_read == absorbed + ranker.filtered + ranker.discarded() + anomalies.dropped_activities()`
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrelationSummary {
    pub activities_read: u64,
    pub malformed_lines: u64,
    pub absorbed: u64,
    pub cags_complete: u64,
    pub cags_incomplete: u64,
    pub ranker: RankerStats,
    pub anomalies: AnomalyCounts,
}

impl CorrelationSummary {
    pub fn is_consistent(&self) -> bool {
        self.activities_read
            == self.absorbed + self.ranker.filtered + self.ranker.discarded() + self.anomalies.dropped_activities()
    }
}

/// Streaming correlation: yields each CAG as soon as its END is seen, then
/// the unfinished ones once the logs are drained.
pub struct Correlation {
    ranker: Ranker,
    engine: Engine,
    flushed: Option<VecDeque<Cag>>,
    complete: u64,
    incomplete: u64,
    malformed: Option<Rc<Cell<u64>>>,
}

impl Correlation {
    pub fn new(ranker: Ranker) -> Self {
        Correlation {
            ranker,
            engine: Engine::new(),
            flushed: None,
            complete: 0,
            incomplete: 0,
            malformed: None,
        }
    }

    pub fn summary(&self) -> CorrelationSummary {
        let stats = self.ranker.stats().clone();
        CorrelationSummary {
            activities_read: stats.fetched,
            malformed_lines: self.malformed.as_ref().map_or(0, |m| m.get()),
            absorbed: self.engine.absorbed(),
            cags_complete: self.complete,
            cags_incomplete: self.incomplete,
            ranker: stats,
            anomalies: self.engine.anomalies().clone(),
        }
    }
}

impl Iterator for Correlation {
    type Item = Cag;

    fn next(&mut self) -> Option<Cag> {
        if self.flushed.is_none() {
            while let Some(candidate) = self.ranker.rank(&self.engine) {
                if let Some(cag) = self.engine.process(candidate) {
                    self.complete += 1;
                    return Some(cag);
                }
            }
            let rest: VecDeque<Cag> = self.engine.flush().into();
            self.incomplete = rest.iter().filter(|c| c.status != CagStatus::Complete).count() as u64;
            self.flushed = Some(rest);
        }
        self.flushed.as_mut().and_then(VecDeque::pop_front)
    }
}

pub struct CorrelationOutput {
    pub cags: Vec<Cag>,
    pub summary: CorrelationSummary,
}

/// Correlate in-memory per-node logs of raw SEND/RECEIVE activities.
pub fn correlate_logs(config: &CorrelatorConfig, logs: Vec<(String, Vec<Activity>)>) -> CorrelationOutput {
    let rule = config.boundary.clone();
    let streams: Vec<(String, ActivityStream)> = logs
        .into_iter()
        .map(|(node, acts)| {
            let rule = rule.clone();
            (node, Box::new(acts.into_iter().map(move |a| rule.classify(a))) as ActivityStream)
        })
        .collect();
    let mut run = Correlation::new(Ranker::new(config.ranker.clone(), streams));
    let cags: Vec<Cag> = run.by_ref().collect();
    CorrelationOutput {
        cags,
        summary: run.summary(),
    }
}

/// Parses a node log line by line, numbering lines from zero and skipping
/// (and counting) malformed ones.
pub struct LogReader<R> {
    lines: io::Lines<R>,
    line_no: u64,
    malformed: Rc<Cell<u64>>,
    rule: BoundaryRule,
    source: String,
}

impl<R: BufRead> LogReader<R> {
    pub fn new(reader: R, rule: BoundaryRule, malformed: Rc<Cell<u64>>, source: impl Into<String>) -> Self {
        LogReader {
            lines: reader.lines(),
            line_no: 0,
            malformed,
            rule,
            source: source.into(),
        }
    }
}

impl<R: BufRead> Iterator for LogReader<R> {
    type Item = Activity;

    fn next(&mut self) -> Option<Activity> {
        loop {
            let line = match self.lines.next()? {
                Ok(line) => line,
                Err(e) => {
                    log::error!("{}: read error after line {}: {e}", self.source, self.line_no);
                    return None;
                }
            };
            let seq = self.line_no;
            self.line_no += 1;
            match parse_activity(&line) {
                Ok(mut a) => {
                    a.seq = seq;
                    return Some(self.rule.classify(a));
                }
                Err(e) => {
                    log::debug!("{}:{seq}: {e}", self.source);
                    self.malformed.set(self.malformed.get() + 1);
                }
            }
        }
    }
}

/// `*.log` files in `dir`, sorted, paired with their node names (file stems).
pub fn log_files(dir: &Path) -> io::Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "log") && path.is_file() {
            let node = path.file_stem().expect("has stem").to_string_lossy().into_owned();
            out.push((node, path));
        }
    }
    out.sort();
    Ok(out)
}

/// Local IP of each node, taken from the first parsable line of its log.
pub fn discover_node_ips(files: &[(String, PathBuf)]) -> io::Result<BTreeSet<Ipv4Addr>> {
    let mut ips = BTreeSet::new();
    for (_, path) in files {
        for line in BufReader::new(File::open(path)?).lines() {
            if let Ok(a) = parse_activity(&line?) {
                ips.insert(a.local_ip());
                break;
            }
        }
    }
    Ok(ips)
}

/// Set up streaming correlation over a directory of node logs.
pub fn open_log_dir(dir: &Path, config: &CorrelatorConfig) -> io::Result<Correlation> {
    let files = log_files(dir)?;
    let mut rule = config.boundary.clone();
    if rule.internal_hosts.is_empty() {
        rule.internal_hosts = discover_node_ips(&files)?;
    }
    let malformed = Rc::new(Cell::new(0));
    let mut streams: Vec<(String, ActivityStream)> = Vec::with_capacity(files.len());
    for (node, path) in files {
        let reader = LogReader::new(BufReader::new(File::open(&path)?), rule.clone(), malformed.clone(), path.display().to_string());
        streams.push((node, Box::new(reader)));
    }
    let mut run = Correlation::new(Ranker::new(config.ranker.clone(), streams));
    run.malformed = Some(malformed);
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reader_numbers_lines_and_skips_garbage() {
        let text = "1 web httpd 1 1 RECEIVE 172.16.0.1:5000-10.0.0.1:80 10\ngarbage\n\n3 web httpd 1 1 SEND 10.0.0.1:80-172.16.0.1:5000 10\n";
        let malformed = Rc::new(Cell::new(0));
        let rule = BoundaryRule::new([80], ["10.0.0.1".parse().unwrap()]);
        let acts: Vec<Activity> = LogReader::new(text.as_bytes(), rule, malformed.clone(), "web").collect();
        assert_eq!(acts.len(), 2);
        assert_eq!(acts[0].seq, 0);
        assert_eq!(acts[1].seq, 3);
        assert_eq!(malformed.get(), 2);
        assert_eq!(acts[0].kind, crate::model::ActivityType::Begin);
        assert_eq!(acts[1].kind, crate::model::ActivityType::End);
    }

    #[test]
    fn empty_input_gives_no_cags() {
        let out = correlate_logs(&CorrelatorConfig::default(), vec![]);
        assert!(out.cags.is_empty());
        assert_eq!(out.summary, CorrelationSummary::default());
        assert!(out.summary.is_consistent());
    }
}
