use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::patterns::{average_path, classify, latency_breakdown, AveragePath, ClassifyConfig, LatencyBreakdown};
use crate::cag::Cag;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternReport {
    pub id: String,
    pub signature: String,
    pub members: usize,
    pub frequency: f64,
    pub deformed: bool,
    pub cag_ids: Vec<String>,
    pub average: Option<AveragePath>,
    pub latency: Option<LatencyBreakdown>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub total_cags: usize,
    pub normal_patterns: usize,
    pub deformed_patterns: usize,
    pub patterns: Vec<PatternReport>,
}

/// Classify CAGs and compute average paths and latency shares for every pattern.
pub fn analyze(cags: &[Cag], config: &ClassifyConfig) -> AnalysisReport {
    let classes = classify(cags, config);
    let patterns: Vec<PatternReport> = classes
        .patterns
        .iter()
        .map(|p| {
            let members: Vec<&Cag> = p.members.iter().map(|&i| &cags[i]).collect();
            let average = average_path(&members).ok();
            let latency = average.as_ref().and_then(|a| latency_breakdown(a).ok());
            PatternReport {
                id: p.id.clone(),
                signature: p.signature.clone(),
                members: p.members.len(),
                frequency: p.frequency,
                deformed: p.deformed,
                cag_ids: members.iter().map(|c| c.id.clone()).collect(),
                average,
                latency,
            }
        })
        .collect();
    AnalysisReport {
        total_cags: classes.total,
        normal_patterns: patterns.iter().filter(|p| !p.deformed).count(),
        deformed_patterns: patterns.iter().filter(|p| p.deformed).count(),
        patterns,
    }
}

impl AnalysisReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{} CAGs, {} normal patterns, {} deformed",
            self.total_cags, self.normal_patterns, self.deformed_patterns
        );
        for p in &self.patterns {
            let _ = writeln!(
                out,
                "\npattern {}  members {:>6}  freq {:>7.3}%  {}",
                p.id,
                p.members,
                p.frequency * 100.0,
                if p.deformed { "DEFORMED" } else { "normal" }
            );
            let Some(lat) = &p.latency else { continue };
            let _ = writeln!(out, "  end-to-end {:.1} us", lat.total_ns / 1e3);
            for s in &lat.segments {
                let _ = writeln!(
                    out,
                    "  {:<24} {:>12.1} us {:>7.2}%{}",
                    s.label,
                    s.mean_ns / 1e3,
                    s.percent,
                    if s.skew_afflicted { "  (clock skew)" } else { "" }
                );
            }
        }
        out
    }

    pub fn to_csv(&self) -> Result<String, csv::Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["pattern", "members", "deformed", "segment", "label", "kind", "mean_ns", "percent", "skew_afflicted"])?;
        for p in &self.patterns {
            let Some(lat) = &p.latency else { continue };
            for (i, s) in lat.segments.iter().enumerate() {
                w.write_record([
                    p.id.clone(),
                    p.members.to_string(),
                    p.deformed.to_string(),
                    i.to_string(),
                    s.label.clone(),
                    format!("{:?}", s.kind).to_lowercase(),
                    format!("{:.1}", s.mean_ns),
                    format!("{:.3}", s.percent),
                    s.skew_afflicted.to_string(),
                ])?;
            }
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}
