//! Config-driven sweeps: analytic operating points for each protocol over a
//! delay or SNR grid, optionally checked against Monte Carlo, written as CSV.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::TradeoffPoint;
use crate::channel::{ChannelConfig, ChannelSampler, ChannelSpec};
use crate::error::{Error, Result};
use crate::mc::{self, McOptions, Verdict};
use crate::powerdp::DpOptions;
use crate::protocols::{run_episode, Feedback};
use crate::registry::{Artifact, Registry, Solution, SolverOptions};
use crate::rng;

pub const CSV_HEADER: &str = "protocol,param,snr_db,target_T,analytic_T,analytic_eta,mc_eta,mc_eta_se,mc_T,mc_T_se,verdict";

/// Fewest episodes for a run that reports verdicts.
pub const MIN_VERDICT_EPISODES: u64 = 10_000;

/// Episodes written per row by `--dump-traces`.
pub const TRACE_EPISODES: u64 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FigureKind {
    /// Throughput against mean decoding time at one SNR.
    ThroughputVsDelay,
    /// Throughput against SNR at one mean decoding time.
    ThroughputVsSnr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    pub episodes: u64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default)]
    pub fredholm_nodes: Option<usize>,
    #[serde(default)]
    pub dp_nodes: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub channel: ChannelConfig,
    pub figure: FigureKind,
    pub protocols: Vec<String>,
    /// Mean decoding times for a delay sweep.
    #[serde(default)]
    pub t_grid: Vec<f64>,
    /// SNRs in dB for an SNR sweep.
    #[serde(default)]
    pub snr_grid_db: Vec<f64>,
    /// Fixed mean decoding time of an SNR sweep.
    #[serde(default)]
    pub target_t: Option<f64>,
    #[serde(default)]
    pub mc: Option<McConfig>,
    #[serde(default)]
    pub solver: Option<SolverConfig>,
    /// CSV file name, relative to the output directory.
    #[serde(default = "default_output")]
    pub output: String,
}

fn default_output() -> String {
    "sweep.csv".into()
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn check_grid(name: &str, g: &[f64]) -> Result<()> {
    if g.is_empty() {
        return Err(config_err(format!("{name} is empty")));
    }
    if g.iter().any(|x| !x.is_finite()) {
        return Err(config_err(format!("{name} has non-finite entries")));
    }
    if g.windows(2).any(|w| w[1] <= w[0]) {
        return Err(config_err(format!("{name} must be strictly increasing")));
    }
    Ok(())
}

impl SweepConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: SweepConfig = serde_json::from_str(text).map_err(|e| config_err(format!("bad sweep config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        match self.figure {
            FigureKind::ThroughputVsDelay => {
                check_grid("t_grid", &self.t_grid)?;
                if self.t_grid[0] <= 1.0 {
                    return Err(config_err("t_grid entries must exceed 1"));
                }
                if !self.snr_grid_db.is_empty() || self.target_t.is_some() {
                    return Err(config_err("snr_grid_db and target_t belong to throughput_vs_snr"));
                }
            }
            FigureKind::ThroughputVsSnr => {
                check_grid("snr_grid_db", &self.snr_grid_db)?;
                match self.target_t {
                    Some(t) if t > 1.0 && t.is_finite() => {}
                    _ => return Err(config_err("throughput_vs_snr needs target_t > 1")),
                }
                if !self.t_grid.is_empty() {
                    return Err(config_err("t_grid belongs to throughput_vs_delay"));
                }
            }
        }
        if let Some(mc) = &self.mc {
            if mc.episodes < MIN_VERDICT_EPISODES {
                return Err(config_err(format!("mc.episodes must be at least {MIN_VERDICT_EPISODES}")));
            }
        }
        if let Some(s) = &self.solver {
            if s.fredholm_nodes.is_some_and(|n| n < 16) || s.dp_nodes.is_some_and(|n| n < 16) {
                return Err(config_err("solver grids need at least 16 nodes"));
            }
        }
        if self.output.is_empty() || Path::new(&self.output).file_name().is_none() {
            return Err(config_err("output must name a file"));
        }
        let reg = self.registry();
        for p in &self.protocols {
            reg.get(p).map_err(|e| config_err(e.to_string()))?;
        }
        self.channel.build().map_err(|e| config_err(format!("bad channel: {e}")))?;
        Ok(())
    }

    pub fn registry(&self) -> Registry {
        let mut opts = SolverOptions::default();
        if let Some(s) = &self.solver {
            if let Some(n) = s.fredholm_nodes {
                opts.fredholm_nodes = n;
            }
            if let Some(n) = s.dp_nodes {
                opts.dp = DpOptions { nodes: n, ..opts.dp };
            }
        }
        Registry::with_builtins(opts)
    }

    /// `(snr_db, target_T)` for every grid point, in output order.
    fn grid_points(&self) -> Vec<(f64, f64)> {
        let ChannelConfig::Rayleigh { snr_db } = self.channel;
        match self.figure {
            FigureKind::ThroughputVsDelay => self.t_grid.iter().map(|&t| (snr_db, t)).collect(),
            FigureKind::ThroughputVsSnr => {
                let t = self.target_t.expect("validated");
                self.snr_grid_db.iter().map(|&s| (s, t)).collect()
            }
        }
    }
}

/// Run-time switches that do not change the CSV.
#[derive(Debug, Clone, Default)]
pub struct SweepOptions {
    pub out_dir: PathBuf,
    pub workers: usize,
    /// Replaces the config's MC seed.
    pub seed: Option<u64>,
    pub dump_traces: bool,
    pub dump_kernels: bool,
    pub dump_policy: bool,
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub protocol: String,
    pub snr_db: f64,
    pub target_t: f64,
    pub point: Option<TradeoffPoint>,
    pub verdict: Option<Verdict>,
    pub error: Option<String>,
}

impl SweepRow {
    fn csv_line(&self) -> String {
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        let p = self.point.as_ref();
        let v = self.verdict.as_ref();
        let status = match (&self.error, v) {
            (Some(_), _) => "error",
            (None, Some(v)) if v.pass => "pass",
            (None, Some(_)) => "fail",
            (None, None) => "",
        };
        [
            self.protocol.clone(),
            opt(p.map(|p| p.param.scalar())),
            self.snr_db.to_string(),
            self.target_t.to_string(),
            opt(p.map(|p| p.avg_decoding_time)),
            opt(p.map(|p| p.throughput)),
            opt(v.map(|v| v.mc_eta)),
            opt(v.map(|v| v.mc_eta_se)),
            opt(v.map(|v| v.mc_tau)),
            opt(v.map(|v| v.mc_tau_se)),
            status.to_string(),
        ]
        .join(",")
    }
}

#[derive(Debug, Clone)]
pub struct SweepSummary {
    pub csv: PathBuf,
    pub rows: Vec<SweepRow>,
}

impl SweepSummary {
    pub fn errors(&self) -> usize {
        self.rows.iter().filter(|r| r.error.is_some()).count()
    }

    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.verdict.as_ref().is_some_and(|v| !v.pass)).count()
    }
}

// MC seed of a row: the master seed shifted by a fixed odd multiple of the
// row index, so rows never share streams and reordering rows is harmless.
fn row_seed(master: u64, row: usize) -> u64 {
    master.wrapping_add((row as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn feedback_text(f: &Feedback) -> String {
    match f {
        Feedback::Ack => "ack".into(),
        Feedback::Nack => "nack".into(),
        Feedback::Gain(g) => g.to_string(),
        Feedback::Symbol(s) => s.to_string(),
    }
}

fn stem(row: usize, protocol: &str, snr_db: f64, t: f64) -> String {
    format!("{row:04}_{protocol}_snr{snr_db}_T{t}")
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(fs::File::create(path)?))
}

fn write_traces(sol: &Solution, ch: &ChannelSpec, seed: u64, path: &Path) -> Result<()> {
    let mut out = create(path)?;
    writeln!(out, "episode,slot,gain,rate,power,feedback")?;
    for e in 0..TRACE_EPISODES {
        let mut gains = ChannelSampler::new(ch, rng::substream(seed, e));
        let tr = run_episode(&sol.policy, &mut gains)?;
        for t in 0..tr.tau {
            writeln!(out, "{e},{},{},{},{},{}", t + 1, tr.gains[t], tr.rates[t], tr.powers[t], feedback_text(&tr.feedback[t]))?;
        }
    }
    out.flush()?;
    Ok(())
}

fn write_artifacts(sol: &Solution, opts: &SweepOptions, name: &str) -> Result<()> {
    for a in &sol.artifacts {
        match a {
            Artifact::Kernels(k) if opts.dump_kernels => {
                let mut out = create(&opts.out_dir.join("kernels").join(format!("{name}.csv")))?;
                k.write_kernels_csv(&mut out)?;
                out.flush()?;
            }
            Artifact::Policy(g) if opts.dump_policy => {
                let mut out = create(&opts.out_dir.join("policy").join(format!("{name}.csv")))?;
                g.write_policy_csv(&mut out)?;
                out.flush()?;
            }
            _ => {}
        }
    }
    Ok(())
}

fn run_row(cfg: &SweepConfig, reg: &Registry, opts: &SweepOptions, idx: usize, protocol: &str, snr_db: f64, t: f64) -> SweepRow {
    let mut row = SweepRow { protocol: protocol.to_ascii_lowercase(), snr_db, target_t: t, point: None, verdict: None, error: None };
    let result = (|| -> Result<()> {
        let ch = ChannelSpec::rayleigh_db(snr_db)?;
        let sol = reg.get(protocol)?.solve(&ch, t)?;
        row.protocol = sol.point.protocol.clone();
        row.point = Some(sol.point.clone());
        let name = stem(idx, &row.protocol, snr_db, t);
        write_artifacts(&sol, opts, &name)?;
        if let Some(mcfg) = &cfg.mc {
            let seed = row_seed(opts.seed.unwrap_or(mcfg.seed), idx);
            if opts.dump_traces {
                write_traces(&sol, &ch, seed, &opts.out_dir.join("traces").join(format!("{name}.csv")))?;
            }
            let est = mc::estimate_with(&sol.policy, &ch, mcfg.episodes, seed, &McOptions::default(), &|_, _| Ok(()))?;
            row.verdict = Some(mc::compare(&est, &sol.point)?);
        }
        Ok(())
    })();
    if let Err(e) = result {
        row.error = Some(e.to_string());
    }
    row
}

/// Solves every `(grid point, protocol)` pair, one worker per pair, and
/// writes the rows in grid order. Failures are recorded per row.
pub fn run_sweep(cfg: &SweepConfig, opts: &SweepOptions) -> Result<SweepSummary> {
    cfg.validate()?;
    let reg = cfg.registry();
    let jobs: Vec<(usize, &str, f64, f64)> = cfg
        .grid_points()
        .into_iter()
        .flat_map(|(s, t)| cfg.protocols.iter().map(move |p| (p.as_str(), s, t)))
        .enumerate()
        .map(|(i, (p, s, t))| (i, p, s, t))
        .collect();
    let work = |&(i, p, s, t): &(usize, &str, f64, f64)| run_row(cfg, &reg, opts, i, p, s, t);
    let rows: Vec<SweepRow> = if opts.workers <= 1 {
        jobs.iter().map(work).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.workers)
            .build()
            .map_err(|e| config_err(format!("cannot start worker pool: {e}")))?;
        pool.install(|| jobs.par_iter().map(work).collect())
    };

    let csv = opts.out_dir.join(&cfg.output);
    let mut out = create(&csv)?;
    writeln!(out, "{CSV_HEADER}")?;
    for r in &rows {
        writeln!(out, "{}", r.csv_line())?;
    }
    out.flush()?;
    Ok(SweepSummary { csv, rows })
}
