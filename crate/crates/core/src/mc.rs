//! Renewal-reward Monte Carlo: every episode is a renewal cycle whose reward
//! is the total rate it appended, so the throughput estimate is the ratio of
//! the mean reward to the mean decoding time.
//!
//! Episode `i` always draws from substream `i` of the master seed and the
//! per-chunk partial sums are merged in chunk order, so an estimate does not
//! depend on the number of workers.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::TradeoffPoint;
use crate::channel::{ChannelSampler, ChannelSpec};
use crate::error::{Error, Result};
use crate::protocols::{run_summary, EpisodeSummary, RatePolicy, DEFAULT_SLOT_CAP};
use crate::rng;

/// Episodes per work unit.
pub const CHUNK: u64 = 4096;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McOptions {
    pub workers: usize,
    pub slot_cap: usize,
}

impl Default for McOptions {
    fn default() -> Self {
        McOptions { workers: 1, slot_cap: DEFAULT_SLOT_CAP }
    }
}

/// Summary of a batch of renewal episodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenewalEstimate {
    pub protocol: String,
    pub n_episodes: u64,
    pub seed: u64,
    pub mean_reward: f64,
    pub mean_reward_se: f64,
    pub mean_tau: f64,
    pub mean_tau_se: f64,
    pub throughput: f64,
    pub throughput_se: f64,
    /// Mean total transmit power per episode.
    pub mean_power: f64,
    /// Largest `max_k u_{k,τ}` seen in any episode.
    pub max_unresolved: f64,
}

impl RenewalEstimate {
    /// Long-run average power per slot, `E[Σρ]/E[τ]`.
    pub fn power_per_slot(&self) -> f64 {
        self.mean_power / self.mean_tau
    }
}

// Means and centered second moments of (reward, tau, power), merged with
// the pairwise update of Chan et al.
#[derive(Debug, Clone, Copy)]
struct Moments {
    n: f64,
    mr: f64,
    mt: f64,
    mp: f64,
    srr: f64,
    stt: f64,
    srt: f64,
    max_u: f64,
}

impl Moments {
    const EMPTY: Moments = Moments { n: 0.0, mr: 0.0, mt: 0.0, mp: 0.0, srr: 0.0, stt: 0.0, srt: 0.0, max_u: f64::NEG_INFINITY };

    fn push(&mut self, e: &EpisodeSummary) {
        let (r, t, p) = (e.cum_rate, e.tau as f64, e.power_sum);
        self.n += 1.0;
        let dr = r - self.mr;
        let dt = t - self.mt;
        self.mr += dr / self.n;
        self.mt += dt / self.n;
        self.mp += (p - self.mp) / self.n;
        self.srr += dr * (r - self.mr);
        self.stt += dt * (t - self.mt);
        self.srt += dr * (t - self.mt);
        self.max_u = self.max_u.max(e.max_unresolved_at_stop);
    }

    fn merge(a: Moments, b: Moments) -> Moments {
        if a.n == 0.0 {
            return b;
        }
        if b.n == 0.0 {
            return a;
        }
        let n = a.n + b.n;
        let dr = b.mr - a.mr;
        let dt = b.mt - a.mt;
        let f = a.n * b.n / n;
        Moments {
            n,
            mr: a.mr + dr * b.n / n,
            mt: a.mt + dt * b.n / n,
            mp: a.mp + (b.mp - a.mp) * b.n / n,
            srr: a.srr + b.srr + dr * dr * f,
            stt: a.stt + b.stt + dt * dt * f,
            srt: a.srt + b.srt + dr * dt * f,
            max_u: a.max_u.max(b.max_u),
        }
    }
}

fn pairwise(mut parts: Vec<Moments>) -> Moments {
    while parts.len() > 1 {
        parts = parts.chunks(2).map(|c| if c.len() == 2 { Moments::merge(c[0], c[1]) } else { c[0] }).collect();
    }
    parts.pop().unwrap_or(Moments::EMPTY)
}

fn run_chunk<F>(policy: &RatePolicy, ch: &ChannelSpec, seed: u64, lo: u64, hi: u64, cap: usize, inspect: &F) -> Result<Moments>
where
    F: Fn(u64, &EpisodeSummary) -> Result<()> + Sync,
{
    let mut m = Moments::EMPTY;
    for i in lo..hi {
        let mut src = ChannelSampler::new(ch, rng::substream(seed, i));
        let e = run_summary(policy, &mut src, cap)?;
        inspect(i, &e)?;
        m.push(&e);
    }
    Ok(m)
}

/// Runs `n` episodes of `policy` and summarizes them.
pub fn estimate(policy: &RatePolicy, ch: &ChannelSpec, n: u64, seed: u64, workers: usize) -> Result<RenewalEstimate> {
    estimate_with(policy, ch, n, seed, &McOptions { workers, ..McOptions::default() }, &|_, _| Ok(()))
}

/// As [`estimate`], calling `inspect` on every episode summary.
pub fn estimate_with<F>(
    policy: &RatePolicy,
    ch: &ChannelSpec,
    n: u64,
    seed: u64,
    opts: &McOptions,
    inspect: &F,
) -> Result<RenewalEstimate>
where
    F: Fn(u64, &EpisodeSummary) -> Result<()> + Sync,
{
    if n == 0 {
        return Err(Error::Domain("need at least one episode".into()));
    }
    let chunks = n.div_ceil(CHUNK);
    let work = |c: u64| run_chunk(policy, ch, seed, c * CHUNK, ((c + 1) * CHUNK).min(n), opts.slot_cap, inspect);
    let parts: Vec<Result<Moments>> = if opts.workers <= 1 {
        (0..chunks).map(work).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.workers)
            .build()
            .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
        pool.install(|| (0..chunks).into_par_iter().map(work).collect())
    };
    let parts = parts.into_iter().collect::<Result<Vec<_>>>()?;
    let m = pairwise(parts);

    let nf = m.n;
    let var = |s: f64| if nf > 1.0 { s / (nf - 1.0) } else { 0.0 };
    let (vr, vt, cov) = (var(m.srr), var(m.stt), var(m.srt));
    let eta = m.mr / m.mt;
    // Delta method for the ratio of means:
    // Var(R̄/τ̄) ≈ (σ_R² − 2η σ_Rτ + η² σ_τ²) / (n τ̄²).
    let var_eta = ((vr - 2.0 * eta * cov + eta * eta * vt) / (nf * m.mt * m.mt)).max(0.0);
    Ok(RenewalEstimate {
        protocol: policy.label(),
        n_episodes: n,
        seed,
        mean_reward: m.mr,
        mean_reward_se: (vr / nf).sqrt(),
        mean_tau: m.mt,
        mean_tau_se: (vt / nf).sqrt(),
        throughput: eta,
        throughput_se: var_eta.sqrt(),
        mean_power: m.mp,
        max_unresolved: m.max_u,
    })
}

/// Agreement of a simulation with an analytic prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub protocol: String,
    pub predicted_eta: f64,
    pub predicted_tau: f64,
    pub mc_eta: f64,
    pub mc_eta_se: f64,
    pub mc_tau: f64,
    pub mc_tau_se: f64,
    pub z_eta: f64,
    pub z_tau: f64,
    pub pass: bool,
}

impl Verdict {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("verdicts always serialize")
    }
}

/// Largest |z| that still passes.
pub const Z_PASS: f64 = 3.0;

fn z_score(est: f64, se: f64, pred: f64) -> f64 {
    if se > 0.0 {
        (est - pred) / se
    } else if est == pred {
        0.0
    } else {
        f64::INFINITY.copysign(est - pred)
    }
}

/// z-scores of throughput and mean decoding time; passes when both are
/// within three standard errors.
pub fn compare(est: &RenewalEstimate, pred: &TradeoffPoint) -> Result<Verdict> {
    if est.protocol != pred.protocol {
        return Err(Error::LabelMismatch { estimate: est.protocol.clone(), prediction: pred.protocol.clone() });
    }
    let z_eta = z_score(est.throughput, est.throughput_se, pred.throughput);
    let z_tau = z_score(est.mean_tau, est.mean_tau_se, pred.avg_decoding_time);
    Ok(Verdict {
        protocol: est.protocol.clone(),
        predicted_eta: pred.throughput,
        predicted_tau: pred.avg_decoding_time,
        mc_eta: est.throughput,
        mc_eta_se: est.throughput_se,
        mc_tau: est.mean_tau,
        mc_tau_se: est.mean_tau_se,
        z_eta,
        z_tau,
        pass: z_eta.abs() <= Z_PASS && z_tau.abs() <= Z_PASS,
    })
}
