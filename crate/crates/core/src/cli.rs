//! `cagtrace` subcommands. Every command reads and writes plain files and
//! leaves a `manifest.json` next to its outputs.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::analysis::{analyze, score_accuracy, AccuracyReport, ClassifyConfig};
use crate::cag::Cag;
use crate::correlate::{open_log_dir, CorrelationSummary, CorrelatorConfig};
use crate::ranker::AttributeFilter;
use crate::sim::{generate, GroundTruth, SimConfig, SimManifest, MANIFEST_FILE};

pub const CAG_FILE: &str = "cags.jsonl";

#[derive(Debug, Parser)]
#[command(name = "cagtrace", version, about = "Reconstruct request causal paths from kernel-level send/receive logs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a multi-tier service and write per-node logs plus ground truth.
    Generate(GenerateArgs),
    /// Correlate a directory of node logs into CAGs.
    Correlate(CorrelateArgs),
    /// Classify CAGs into patterns and report latency shares.
    Analyze(AnalyzeArgs),
    /// Compare CAGs against simulator ground truth.
    Score(ScoreArgs),
    /// Write Graphviz files for CAGs.
    ExportDot(ExportDotArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Simulator configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct CorrelateArgs {
    /// Directory of `<node>.log` files.
    #[arg(long)]
    pub logs: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Correlator configuration (TOML); flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Sliding window, e.g. `10ms` or `1s`.
    #[arg(long, value_parser = parse_window)]
    pub window: Option<Duration>,
    /// Ports whose inbound traffic from outside starts a request.
    #[arg(long, value_delimiter = ',')]
    pub entry_ports: Vec<u16>,
    /// Drop activities matching `program=NAME`, `ip=ADDR` or `port=N`.
    #[arg(long)]
    pub filter: Vec<AttributeFilter>,
    /// How far into a queue the stall resolver may look.
    #[arg(long)]
    pub lookahead: Option<usize>,
    /// Disable head swapping when every queue head waits on a SEND.
    #[arg(long)]
    pub no_resolve_stalls: bool,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub cags: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Patterns rarer than this share may be reported as deformed.
    #[arg(long, default_value_t = 0.01)]
    pub deformed_frequency: f64,
    /// Flag rare patterns as deformed even when their shape looks sound.
    #[arg(long)]
    pub ignore_shape: bool,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub cags: PathBuf,
    #[arg(long)]
    pub ground_truth: PathBuf,
    /// Where to write `mismatches.txt`; defaults to the directory of the CAG file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportDotArgs {
    #[arg(long)]
    pub cags: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Only these CAG ids (`node:seq`).
    #[arg(long)]
    pub id: Vec<String>,
}

fn parse_window(s: &str) -> Result<Duration, String> {
    let d = humantime::parse_duration(s).map_err(|e| e.to_string())?;
    if d.is_zero() {
        return Err("window must be larger than zero".into());
    }
    Ok(d)
}

/// What a command read, what it was configured with and what it counted.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub command: String,
    pub config_path: Option<PathBuf>,
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimManifest>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub correlator: Option<CorrelatorConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub correlation: Option<CorrelationSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub counters_consistent: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cags_emitted: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
}

impl RunManifest {
    fn new(command: &str) -> Self {
        RunManifest {
            tool: format!("cagtrace {}", env!("CARGO_PKG_VERSION")),
            command: command.into(),
            ..RunManifest::default()
        }
    }

    fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, serde_json::to_string_pretty(self)? + "\n").with_context(|| format!("writing {}", path.display()))
    }
}

pub fn write_cags<'a>(path: &Path, cags: impl IntoIterator<Item = &'a Cag>) -> Result<u64> {
    let mut w = BufWriter::new(fs::File::create(path).with_context(|| format!("creating {}", path.display()))?);
    let mut n = 0;
    for cag in cags {
        serde_json::to_writer(&mut w, cag)?;
        w.write_all(b"\n")?;
        n += 1;
    }
    w.flush()?;
    Ok(n)
}

pub fn read_cags(path: &Path) -> Result<Vec<Cag>> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).with_context(|| format!("{}:{}: bad CAG record", path.display(), i + 1))?);
    }
    Ok(out)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(a) => cmd_generate(&a),
        Command::Correlate(a) => cmd_correlate(&a).map(|_| ()),
        Command::Analyze(a) => cmd_analyze(&a),
        Command::Score(a) => cmd_score(&a).map(|_| ()),
        Command::ExportDot(a) => cmd_export_dot(&a),
    }
}

pub fn cmd_generate(args: &GenerateArgs) -> Result<()> {
    let text = fs::read_to_string(&args.config).with_context(|| format!("reading {}", args.config.display()))?;
    let mut config = SimConfig::from_toml(&text)?;
    if let Some(seed) = args.seed {
        config.workload.seed = seed;
    }
    let sim = generate(&config)?;
    sim.write_to(&args.out).with_context(|| format!("writing logs to {}", args.out.display()))?;
    let mut manifest = RunManifest::new("generate");
    manifest.config_path = Some(args.config.clone());
    manifest.seed = Some(config.workload.seed);
    manifest.simulation = Some(SimManifest::new(&config, &sim));
    manifest.write(&args.out)?;
    log::info!(
        "wrote {} activities for {} requests on {} nodes",
        sim.activity_count(),
        sim.request_count(),
        sim.logs.len()
    );
    Ok(())
}

pub fn correlator_config(args: &CorrelateArgs) -> Result<CorrelatorConfig> {
    let mut config = match &args.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => CorrelatorConfig::default(),
    };
    if let Some(w) = args.window {
        config.ranker.window_ns = u64::try_from(w.as_nanos()).context("window too large")?;
    }
    if !args.entry_ports.is_empty() {
        config.boundary.entry_ports = args.entry_ports.iter().copied().collect();
    }
    if config.boundary.entry_ports.is_empty() {
        config.boundary.entry_ports.insert(80);
    }
    config.ranker.filters.extend(args.filter.iter().cloned());
    if let Some(l) = args.lookahead {
        config.ranker.lookahead = l;
    }
    if args.no_resolve_stalls {
        config.ranker.resolve_stalls = false;
    }
    if config.ranker.window_ns == 0 {
        bail!("window must be larger than zero");
    }
    Ok(config)
}

pub fn cmd_correlate(args: &CorrelateArgs) -> Result<CorrelationSummary> {
    let config = correlator_config(args)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let mut run = open_log_dir(&args.logs, &config).with_context(|| format!("reading logs in {}", args.logs.display()))?;
    let emitted = write_cags(&args.out.join(CAG_FILE), run.by_ref().collect::<Vec<_>>().iter())?;
    let summary = run.summary();
    if !summary.is_consistent() {
        log::warn!("activity counters do not add up: {summary:?}");
    }
    let mut manifest = RunManifest::new("correlate");
    manifest.config_path = args.config.clone();
    manifest.inputs = vec![args.logs.clone()];
    manifest.correlator = Some(config);
    manifest.counters_consistent = Some(summary.is_consistent());
    manifest.cags_emitted = Some(emitted);
    manifest.correlation = Some(summary.clone());
    manifest.write(&args.out)?;
    log::info!(
        "{} CAGs ({} complete) from {} activities",
        emitted,
        summary.cags_complete,
        summary.activities_read
    );
    Ok(summary)
}

pub fn cmd_analyze(args: &AnalyzeArgs) -> Result<()> {
    let cags = read_cags(&args.cags)?;
    let config = ClassifyConfig {
        deformed_frequency: args.deformed_frequency,
        require_shape_anomaly: !args.ignore_shape,
    };
    let report = analyze(&cags, &config);
    let patterns_dir = args.out.join("patterns");
    fs::create_dir_all(&patterns_dir).with_context(|| format!("creating {}", patterns_dir.display()))?;
    fs::write(args.out.join("patterns.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    fs::write(args.out.join("report.txt"), report.to_text())?;
    fs::write(args.out.join("latency.csv"), report.to_csv()?)?;
    let by_id: std::collections::HashMap<&str, &Cag> = cags.iter().map(|c| (c.id.as_str(), c)).collect();
    for p in &report.patterns {
        if let Some(rep) = p.cag_ids.first().and_then(|id| by_id.get(id.as_str())) {
            fs::write(patterns_dir.join(format!("{}.dot", p.id)), rep.to_dot())?;
        }
    }
    let mut manifest = RunManifest::new("analyze");
    manifest.inputs = vec![args.cags.clone()];
    manifest.cags_emitted = Some(cags.len() as u64);
    manifest.write(&args.out)?;
    print!("{}", report.to_text());
    Ok(())
}

pub fn cmd_score(args: &ScoreArgs) -> Result<AccuracyReport> {
    let cags = read_cags(&args.cags)?;
    let text = fs::read_to_string(&args.ground_truth).with_context(|| format!("reading {}", args.ground_truth.display()))?;
    let truth: GroundTruth = text.parse().with_context(|| format!("parsing {}", args.ground_truth.display()))?;
    let report = score_accuracy(&cags, &truth);
    let out = match &args.out {
        Some(d) => d.clone(),
        None => args.cags.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    fs::create_dir_all(&out)?;
    let mut lines = String::new();
    for m in &report.mismatches {
        let reasons: Vec<String> = m.reasons.iter().map(|r| serde_json::to_string(r).expect("enum").replace('"', "")).collect();
        lines.push_str(&format!("{} {} {}\n", m.request, m.cag.as_deref().unwrap_or("-"), reasons.join(",")));
    }
    for id in &report.spurious_cags {
        lines.push_str(&format!("- {id} spurious\n"));
    }
    fs::write(out.join("mismatches.txt"), lines)?;
    let mut manifest = RunManifest::new("score");
    manifest.inputs = vec![args.cags.clone(), args.ground_truth.clone()];
    manifest.accuracy = Some(report.accuracy);
    manifest.write(&out)?;
    println!("accuracy {:.3}", report.accuracy);
    if report.vacuous {
        log::warn!("no requests in ground truth; accuracy is vacuous");
    }
    Ok(report)
}

pub fn cmd_export_dot(args: &ExportDotArgs) -> Result<()> {
    let cags = read_cags(&args.cags)?;
    fs::create_dir_all(&args.out)?;
    let mut written = 0;
    for cag in cags.iter().filter(|c| args.id.is_empty() || args.id.contains(&c.id)) {
        let name: String = cag.id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect();
        fs::write(args.out.join(format!("{name}.dot")), cag.to_dot())?;
        written += 1;
    }
    if written == 0 && !args.id.is_empty() {
        bail!("none of the requested CAG ids were found");
    }
    Ok(())
}
