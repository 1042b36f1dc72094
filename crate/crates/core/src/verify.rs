//! The verification suite: ten checks that tie the Monte Carlo engine, the
//! closed forms, the integral-equation solver and the dynamic programs
//! together. Each check reports a one-line verdict and never panics.

use std::fs;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

use serde::Serialize;

use crate::analysis::{
    brq_optimality_lhs, brq_point, brq_threshold, ergodic_capacity, eta_brq, eta_harq_inr, harq_expected_tau,
    t_eta_central_difference, t_eta_second_derivative, ProtocolParam,
};
use crate::channel::ChannelSpec;
use crate::error::{Error, Result};
use crate::fredholm::{ems_for_target, ems_metrics, EmsSolution, Interpolation, DEFAULT_NODES};
use crate::mc::{self, McOptions};
use crate::powerdp::{dual_solve, value_iterate_with, DpOptions};
use crate::protocols::{RatePolicy, DECODABILITY_TOL};
use crate::ratedp::linear_form_check;
use crate::registry::Registry;
use crate::sweep::{run_sweep, FigureKind, McConfig, SweepConfig, SweepOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Fast,
    Full,
}

impl Suite {
    pub fn episodes(self) -> u64 {
        match self {
            Suite::Fast => 100_000,
            Suite::Full => 10_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    pub episodes: u64,
    pub seed: u64,
    pub workers: usize,
    /// Relative bias added to the BRQ throughput prediction. Nonzero only
    /// when checking that the suite can fail.
    pub tamper_brq: f64,
}

impl VerifyOptions {
    pub fn suite(s: Suite) -> Self {
        VerifyOptions { episodes: s.episodes(), seed: 2024, workers: 1, tamper_brq: 0.0 }
    }
}

pub const CRITERIA: [&str; 10] = [
    "BRQ throughput and decoding time match simulation",
    "EMS integral-equation solution matches simulation",
    "EMS with one feedback symbol reduces to HARQ-INR",
    "BRQ optimality condition and concavity",
    "decodability invariant over simulated episodes",
    "protocol ordering at equal decoding time",
    "capacity limits",
    "power-adapted HARQ-INR dynamic program",
    "rate-selection value function is linear",
    "sweep output independent of worker count",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriterionResult {
    pub id: usize,
    pub name: String,
    pub pass: bool,
    pub detail: String,
    pub seconds: f64,
}

impl CriterionResult {
    pub fn line(&self) -> String {
        let tag = if self.pass { "PASS" } else { "FAIL" };
        format!("[{tag}] {:>2}. {} ({:.1}s): {}", self.id, self.name, self.seconds, self.detail)
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Report {
    pub criteria: Vec<CriterionResult>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.criteria.iter().all(|c| c.pass)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("reports always serialize")
    }
}

// Accumulates the sub-checks of one criterion.
struct Checks {
    pass: bool,
    notes: Vec<String>,
}

impl Checks {
    fn new() -> Self {
        Checks { pass: true, notes: vec![] }
    }

    fn check(&mut self, ok: bool, note: String) {
        self.pass &= ok;
        if ok {
            self.notes.push(note);
        } else {
            self.notes.push(format!("!! {note}"));
        }
    }
}

fn channel() -> ChannelSpec {
    ChannelSpec::rayleigh_db(10.0).expect("10 dB is a valid SNR")
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn mc_opts(o: &VerifyOptions) -> McOptions {
    McOptions { workers: o.workers, ..McOptions::default() }
}

fn brq_mc(o: &VerifyOptions, c: &mut Checks) -> Result<()> {
    let ch = channel();
    for (k, t) in [1.5, 2.0, 3.0, 5.0].into_iter().enumerate() {
        let mut p = brq_point(&ch, t)?;
        p.throughput *= 1.0 + o.tamper_brq;
        let ProtocolParam::Threshold { h_t } = p.param else { unreachable!() };
        let est = mc::estimate_with(&RatePolicy::brq(h_t)?, &ch, o.episodes, o.seed + k as u64, &mc_opts(o), &|_, _| Ok(()))?;
        let v = mc::compare(&est, &p)?;
        c.check(v.pass, format!("T={t}: z_eta={:+.2} z_T={:+.2}", v.z_eta, v.z_tau));
    }
    Ok(())
}

fn ems_mc(o: &VerifyOptions, c: &mut Checks) -> Result<()> {
    let ch = channel();
    let mut k = 10;
    for f in [2u32, 3] {
        for t in [2.0, 4.0] {
            let sol = ems_for_target(&ch, f, t, DEFAULT_NODES)?;
            let p = sol.metrics();
            let top = sol.r * f as f64;
            let probes: Vec<f64> = (0..32).map(|i| top * (i as f64 + 0.5) / 32.0).collect();
            let res = sol.residual(&ch, &probes, Interpolation::Linear)?;
            let fine = EmsSolution::solve(&ch, sol.r, f, 2 * DEFAULT_NODES)?.metrics();
            let drift = rel(fine.throughput, p.throughput).max(rel(fine.avg_decoding_time, p.avg_decoding_time));
            k += 1;
            let est = mc::estimate_with(&RatePolicy::ems(sol.r, f)?, &ch, o.episodes, o.seed + k, &mc_opts(o), &|_, _| Ok(()))?;
            let v = mc::compare(&est, &p)?;
            c.check(
                v.pass && res <= 1e-6 && drift < 1e-5,
                format!("f={f} T={t}: z_eta={:+.2} z_T={:+.2} residual={res:.1e} drift={drift:.1e}", v.z_eta, v.z_tau),
            );
        }
    }
    Ok(())
}

fn f1_reduction(c: &mut Checks) -> Result<()> {
    let ch = channel();
    let law = ch.capacity_law();
    for q in [0.2, 0.5, 0.8] {
        let r = law.quantile(q)?;
        let p = ems_metrics(r, 1, &ch)?;
        let tau = harq_expected_tau(&ch, r)?;
        let e = rel(p.avg_decoding_time, tau).max(rel(p.throughput, r / tau));
        c.check(e <= 5e-3, format!("F_C(r)={q}: rel err {e:.1e}"));
    }
    Ok(())
}

fn optimality(c: &mut Checks) -> Result<()> {
    let ch = channel();
    let mut worst = 0.0f64;
    for h in [0.0, 0.5, 1.0, 5.0, 20.0] {
        worst = worst.max((brq_optimality_lhs(&ch, h)? - 1.0 / (1.0 + h)).abs());
    }
    c.check(worst <= 1e-9, format!("lhs vs 1/(1+h) max err {worst:.1e}"));
    for t in [1.2, 2.0, 5.0, 20.0] {
        let d2 = t_eta_second_derivative(&ch, t)?;
        let fd = t_eta_central_difference(&ch, t, 1e-3)?;
        let e = rel(fd, d2);
        c.check(d2 <= 0.0 && e <= 1e-4, format!("T={t}: d2={d2:.4e} fd err {e:.1e}"));
    }
    Ok(())
}

fn decodability(o: &VerifyOptions, c: &mut Checks) -> Result<()> {
    let ch = channel();
    let h_t = brq_threshold(&ch, 2.0)?;
    let ems = ems_for_target(&ch, 2, 2.0, DEFAULT_NODES)?;
    for (name, policy) in [("BRQ", RatePolicy::brq(h_t)?), ("EMS3", RatePolicy::ems(ems.r, 2)?)] {
        let bad = AtomicU64::new(0);
        let est = mc::estimate_with(&policy, &ch, o.episodes, o.seed + 20, &mc_opts(o), &|_, s| {
            if s.max_unresolved_at_stop > DECODABILITY_TOL {
                bad.fetch_add(1, Ordering::Relaxed);
            }
            Ok(())
        })?;
        let bad = bad.into_inner();
        c.check(
            bad == 0 && est.max_unresolved <= DECODABILITY_TOL,
            format!("{name}: {} episodes, max u at stop {:.1e}, violations {bad}", est.n_episodes, est.max_unresolved),
        );
    }
    Ok(())
}

fn ordering(c: &mut Checks) -> Result<()> {
    let ch = channel();
    let c_erg = ergodic_capacity(&ch)?;
    let reg = Registry::default();
    let names = ["brq", "ems4", "ems3", "harq-inr-p", "harq-inr"];
    let slack = 1e-6;
    for t in [2.0, 3.0, 4.5] {
        let mut eta = Vec::with_capacity(names.len());
        for n in names {
            eta.push(reg.get(n)?.solve(&ch, t)?.point.throughput);
        }
        let sorted = eta.windows(2).all(|w| w[0] + slack >= w[1]) && eta[0] <= c_erg;
        let gap = (eta[0] - eta[2]) / eta[0];
        let list: Vec<String> = names.iter().zip(&eta).map(|(n, e)| format!("{n}={e:.4}")).collect();
        c.check(sorted && gap <= 0.05, format!("T={t}: {} gap={:.2}%", list.join(" "), 100.0 * gap));
    }
    Ok(())
}

fn capacity_limits(c: &mut Checks) -> Result<()> {
    let ch = channel();
    let c_erg = ergodic_capacity(&ch)?;
    let b = rel(eta_brq(&ch, 1e6)?, c_erg);
    c.check(b <= 1e-3, format!("BRQ at T=1e6 off by {b:.1e}"));
    let h = rel(eta_harq_inr(&ch, 1e3)?.throughput, c_erg);
    c.check(h <= 0.05, format!("HARQ-INR at T=1e3 off by {h:.1e}"));
    Ok(())
}

fn power_dp(o: &VerifyOptions, c: &mut Checks) -> Result<()> {
    let ch = channel();
    let r = ch.capacity_law().quantile(0.6)?;
    let d = dual_solve(r, &ch)?;
    let est = mc::estimate_with(&d.policy()?, &ch, o.episodes, o.seed + 30, &mc_opts(o), &|_, _| Ok(()))?;
    let power = est.power_per_slot();
    c.check(power <= 1.005, format!("power per slot {power:.5}"));
    let gap = rel(est.mean_tau, d.value);
    c.check(gap <= 0.02, format!("E[tau]={:.5} vs J*={:.5} ({:.2}%)", est.mean_tau, d.value, 100.0 * gap));
    let unit = DpOptions { unit_power: true, ..DpOptions::default() };
    let j1 = value_iterate_with(d.lambda, r, &ch, &unit, None)?.at_rate();
    let harq = harq_expected_tau(&ch, r)?;
    let e = rel(j1, harq);
    c.check(e <= 1e-3, format!("unit-power J={j1:.5} vs HARQ {harq:.5}"));
    Ok(())
}

fn linear_value(c: &mut Checks) -> Result<()> {
    let ch = channel();
    for t in [1.5, 2.0, 4.0] {
        let (i, _, err) = linear_form_check(&ch, t, 1024)?;
        c.check(err <= 5e-3, format!("T={t}: lambda={:.4} A={:.4} r_A={:.4} rel err {err:.1e}", i.lambda, i.a, i.r_a));
    }
    Ok(())
}

fn scratch_dir(tag: &str) -> PathBuf {
    static NEXT: AtomicU64 = AtomicU64::new(0);
    let n = NEXT.fetch_add(1, Ordering::Relaxed);
    std::env::temp_dir().join(format!("harqlab-verify-{}-{tag}-{n}", std::process::id()))
}

fn determinism(o: &VerifyOptions, c: &mut Checks) -> Result<()> {
    let cfg = SweepConfig {
        channel: crate::channel::ChannelConfig::Rayleigh { snr_db: 10.0 },
        figure: FigureKind::ThroughputVsDelay,
        protocols: vec!["brq".into(), "ems3".into(), "harq-inr".into()],
        t_grid: vec![2.0, 3.0],
        snr_grid_db: vec![],
        target_t: None,
        mc: Some(McConfig { episodes: o.episodes.clamp(10_000, 1_000_000), seed: o.seed }),
        solver: None,
        output: "determinism.csv".into(),
    };
    let mut bytes = Vec::new();
    for workers in [1, 8] {
        let dir = scratch_dir(&format!("w{workers}"));
        let opts = SweepOptions { out_dir: dir.clone(), workers, ..SweepOptions::default() };
        let s = run_sweep(&cfg, &opts);
        let read = s.and_then(|s| fs::read(&s.csv).map_err(Error::from));
        let _ = fs::remove_dir_all(&dir);
        bytes.push(read?);
    }
    c.check(bytes[0] == bytes[1], format!("{} bytes, 1 vs 8 workers identical: {}", bytes[0].len(), bytes[0] == bytes[1]));
    Ok(())
}

/// Runs criterion `id` (1-based).
pub fn run_criterion(id: usize, o: &VerifyOptions) -> CriterionResult {
    let start = Instant::now();
    let mut c = Checks::new();
    let out = match id {
        1 => brq_mc(o, &mut c),
        2 => ems_mc(o, &mut c),
        3 => f1_reduction(&mut c),
        4 => optimality(&mut c),
        5 => decodability(o, &mut c),
        6 => ordering(&mut c),
        7 => capacity_limits(&mut c),
        8 => power_dp(o, &mut c),
        9 => linear_value(&mut c),
        10 => determinism(o, &mut c),
        _ => Err(Error::Config(format!("no criterion {id}"))),
    };
    if let Err(e) = out {
        c.check(false, format!("error: {e}"));
    }
    CriterionResult {
        id,
        name: CRITERIA.get(id.wrapping_sub(1)).copied().unwrap_or("unknown").to_string(),
        pass: c.pass,
        detail: c.notes.join("; "),
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Runs every criterion in order, calling `progress` after each.
pub fn run_suite(o: &VerifyOptions, progress: impl FnMut(&CriterionResult)) -> Report {
    run_selected(o, &(1..=CRITERIA.len()).collect::<Vec<_>>(), progress)
}

/// Runs the listed criteria in the given order.
pub fn run_selected(o: &VerifyOptions, ids: &[usize], mut progress: impl FnMut(&CriterionResult)) -> Report {
    let mut report = Report::default();
    for &id in ids {
        let r = run_criterion(id, o);
        progress(&r);
        report.criteria.push(r);
    }
    report
}
