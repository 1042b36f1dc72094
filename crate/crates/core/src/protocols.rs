//! Slot-by-slot protocol policies and the renewal-episode engine.
//!
//! An episode starts with an empty buffer, picks the rate of slot `t` from
//! whatever the transmitter learned through feedback after slot `t − 1`, and
//! stops at the protocol's decoding time `τ`. Along the way the engine tracks
//! the unresolved information `u_{1,t} = Σ_{i≤t} (R_i − C(H_i))`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::channel::{cap, GainSource};
use crate::error::{domain, Error, Result};

/// Hard cap on episode length.
pub const DEFAULT_SLOT_CAP: usize = 1_000_000;

/// Absolute tolerance of the decodability checks.
pub const DECODABILITY_TOL: f64 = 1e-9;

/// Tolerance of the BRQ stopping identity `u_{1,τ} = C(h_T) − C(H_τ)`.
pub const BRQ_IDENTITY_TOL: f64 = 1e-12;

/// Transmit power as a function of the information still missing at the
/// receiver, linearly interpolated between nodes and held constant outside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerSchedule {
    u: Vec<f64>,
    rho: Vec<f64>,
}

impl PowerSchedule {
    pub fn new(u: Vec<f64>, rho: Vec<f64>) -> Result<Self> {
        if u.is_empty() || u.len() != rho.len() {
            return Err(domain("power schedule needs matching, nonempty node and power vectors"));
        }
        if u.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(domain("power schedule nodes must be strictly increasing"));
        }
        if rho.iter().any(|p| !(*p > 0.0 && p.is_finite())) {
            return Err(domain("power levels must be positive and finite"));
        }
        Ok(PowerSchedule { u, rho })
    }

    /// Unit power everywhere.
    pub fn constant(rho: f64, top: f64) -> Result<Self> {
        Self::new(vec![0.0, top.max(f64::MIN_POSITIVE)], vec![rho, rho])
    }

    pub fn nodes(&self) -> &[f64] {
        &self.u
    }

    pub fn powers(&self) -> &[f64] {
        &self.rho
    }

    pub fn power_at(&self, u: f64) -> f64 {
        let n = self.u.len();
        if u <= self.u[0] {
            return self.rho[0];
        }
        if u >= self.u[n - 1] {
            return self.rho[n - 1];
        }
        let i = self.u.partition_point(|&x| x <= u) - 1;
        let w = (u - self.u[i]) / (self.u[i + 1] - self.u[i]);
        self.rho[i] + w * (self.rho[i + 1] - self.rho[i])
    }
}

/// A protocol's rate selection, feedback and stopping rule.
#[derive(Debug, Clone, PartialEq)]
pub enum RatePolicy {
    /// Backtrack retransmission with gain threshold `h_t`.
    Brq { h_t: f64 },
    /// Expandable message space with step `r` and `f + 1` feedback symbols.
    EmsFinite { r: f64, f: u32 },
    /// Incremental redundancy at first-slot rate `r`.
    HarqInr { r: f64 },
    /// Incremental redundancy with power driven by the missing information.
    PowerAdaptedHarq { r: f64, schedule: Arc<PowerSchedule> },
}

impl RatePolicy {
    pub fn brq(h_t: f64) -> Result<Self> {
        if !(h_t > 0.0 && h_t.is_finite()) {
            return Err(domain(format!("BRQ threshold must be positive, got {h_t}")));
        }
        Ok(RatePolicy::Brq { h_t })
    }

    pub fn ems(r: f64, f: u32) -> Result<Self> {
        if !(r > 0.0 && r.is_finite()) || f == 0 {
            return Err(domain(format!("EMS needs r > 0 and f >= 1, got r={r}, f={f}")));
        }
        Ok(RatePolicy::EmsFinite { r, f })
    }

    pub fn harq_inr(r: f64) -> Result<Self> {
        if !(r > 0.0 && r.is_finite()) {
            return Err(domain(format!("HARQ-INR rate must be positive, got {r}")));
        }
        Ok(RatePolicy::HarqInr { r })
    }

    pub fn power_adapted(r: f64, schedule: PowerSchedule) -> Result<Self> {
        if !(r > 0.0 && r.is_finite()) {
            return Err(domain(format!("HARQ-INR rate must be positive, got {r}")));
        }
        Ok(RatePolicy::PowerAdaptedHarq { r, schedule: Arc::new(schedule) })
    }

    /// Protocol name; EMS carries its feedback cost, e.g. `ems3` for `f = 2`.
    pub fn label(&self) -> String {
        match self {
            RatePolicy::Brq { .. } => "brq".into(),
            RatePolicy::EmsFinite { f, .. } => format!("ems{}", f + 1),
            RatePolicy::HarqInr { .. } => "harq-inr".into(),
            RatePolicy::PowerAdaptedHarq { .. } => "harq-inr-p".into(),
        }
    }

    /// Whether the zero-outage decodability condition is enforced.
    fn checks_decodability(&self) -> bool {
        matches!(self, RatePolicy::Brq { .. } | RatePolicy::EmsFinite { .. })
    }
}

/// What the receiver reports after a slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feedback {
    /// Decoded; the episode ends.
    Ack,
    /// Not decoded yet, no further information.
    Nack,
    /// Delayed gain of the slot just finished.
    Gain(f64),
    /// Quantized feedback symbol in `0..f`.
    Symbol(i64),
}

/// `u_{k,t} = Σ_{i=k}^{t} (r_i − C(h_i))` with 1-based slot indices; zero for
/// `t < k`.
pub fn unresolved(rates: &[f64], gains: &[f64], k: usize, t: usize) -> Result<f64> {
    if k == 0 {
        return Err(domain("slot indices start at 1"));
    }
    if t < k {
        return Ok(0.0);
    }
    if t > rates.len() || t > gains.len() {
        return Err(domain(format!("slot {t} beyond the {} recorded slots", rates.len().min(gains.len()))));
    }
    Ok((k - 1..t).map(|i| rates[i] - cap(gains[i])).sum())
}

/// BRQ rate of slot `t` given the previous slot's gain `v`.
pub fn brq_rate(t: usize, v: f64, h_t: f64) -> f64 {
    let top = cap(h_t);
    if t <= 1 {
        top
    } else {
        cap(v.max(0.0)).min(top)
    }
}

/// EMS feedback for unresolved information `u`: `−1` once decodable,
/// otherwise `⌊f − u/r⌋`.
pub fn ems_feedback(u: f64, r: f64, f: u32) -> i64 {
    if u <= 0.0 {
        -1
    } else {
        // u > 0 keeps the symbol below f; rounding at u = rf must not give -1.
        ((f as f64 - u / r).floor() as i64).clamp(0, f as i64 - 1)
    }
}

/// EMS rate of slot `t` after feedback symbol `v`.
pub fn ems_rate(t: usize, v: i64, r: f64, f: u32) -> Result<f64> {
    if t <= 1 {
        return Ok(r * f as f64);
    }
    if v < -1 || v > f as i64 - 1 {
        return Err(domain(format!("feedback symbol {v} outside [-1, {}]", f as i64 - 1)));
    }
    if v == -1 {
        return Ok(0.0);
    }
    Ok((r * (f - 1) as f64).min(r * v as f64))
}

/// HARQ-INR rate of slot `t`: all new information goes out in slot 1.
pub fn harq_inr_rate(t: usize, r: f64) -> f64 {
    if t <= 1 {
        r
    } else {
        0.0
    }
}

/// One renewal episode, slot by slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub protocol: String,
    pub gains: Vec<f64>,
    pub rates: Vec<f64>,
    pub feedback: Vec<Feedback>,
    /// Transmit power per slot; all ones unless power adaptation is on.
    pub powers: Vec<f64>,
    pub tau: usize,
    pub cum_rate: f64,
    pub max_unresolved_at_stop: f64,
}

/// Aggregates of an episode without the per-slot record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub tau: usize,
    pub cum_rate: f64,
    pub power_sum: f64,
    pub max_unresolved_at_stop: f64,
}

struct Slot {
    gain: f64,
    rate: f64,
    power: f64,
    feedback: Feedback,
}

fn next_gain<G: GainSource + ?Sized>(src: &mut G) -> Result<f64> {
    src.next_gain().ok_or_else(|| domain("gain stream exhausted before the episode ended"))
}

fn drive<G, F>(policy: &RatePolicy, gains: &mut G, slot_cap: usize, mut record: F) -> Result<EpisodeSummary>
where
    G: GainSource + ?Sized,
    F: FnMut(Slot),
{
    // u is u_{1,t}; min_prefix is min_{0 <= j < t} u_{1,j} with u_{1,0} = 0.
    let mut u = 0.0f64;
    let mut min_prefix = 0.0f64;
    let mut cum_rate = 0.0;
    let mut power_sum = 0.0;
    let mut t = 0usize;
    let mut prev_gain = 0.0;
    let mut prev_symbol = 0i64;
    loop {
        t += 1;
        if t > slot_cap {
            return Err(Error::Runaway { cap: slot_cap });
        }
        let rate = match policy {
            RatePolicy::Brq { h_t } => brq_rate(t, prev_gain, *h_t),
            RatePolicy::EmsFinite { r, f } => {
                let rate = ems_rate(t, prev_symbol, *r, *f)?;
                if t > 1 {
                    let s = u + rate;
                    let (lo, hi) = (r * (f - 1) as f64, r * *f as f64);
                    if !(s > lo - DECODABILITY_TOL && s <= hi + DECODABILITY_TOL) {
                        return Err(Error::Invariant(format!(
                            "EMS slot {t}: u + rate = {s} outside ({lo}, {hi}]"
                        )));
                    }
                }
                rate
            }
            RatePolicy::HarqInr { r } | RatePolicy::PowerAdaptedHarq { r, .. } => harq_inr_rate(t, *r),
        };
        let power = match policy {
            RatePolicy::PowerAdaptedHarq { r, schedule } => schedule.power_at(if t == 1 { *r } else { u }),
            _ => 1.0,
        };
        let h = next_gain(gains)?;
        let c = cap(h * power);
        if t > 1 {
            min_prefix = min_prefix.min(u);
        }
        u += rate - c;
        cum_rate += rate;
        power_sum += power;

        let (feedback, done) = match policy {
            RatePolicy::Brq { h_t } => {
                if h > *h_t {
                    (Feedback::Ack, true)
                } else {
                    (Feedback::Gain(h), false)
                }
            }
            RatePolicy::EmsFinite { r, f } => {
                let v = ems_feedback(u, *r, *f);
                prev_symbol = v;
                if v == -1 {
                    (Feedback::Ack, true)
                } else {
                    (Feedback::Symbol(v), false)
                }
            }
            RatePolicy::HarqInr { .. } | RatePolicy::PowerAdaptedHarq { .. } => {
                if u <= 0.0 {
                    (Feedback::Ack, true)
                } else {
                    (Feedback::Nack, false)
                }
            }
        };
        prev_gain = h;
        record(Slot { gain: h, rate, power, feedback });
        if done {
            break;
        }
    }

    let max_unresolved = u - min_prefix;
    if policy.checks_decodability() && max_unresolved > DECODABILITY_TOL {
        return Err(Error::Invariant(format!(
            "{} episode stopped at slot {t} with unresolved information {max_unresolved}",
            policy.label()
        )));
    }
    if let RatePolicy::Brq { h_t } = policy {
        let expect = cap(*h_t) - cap(prev_gain);
        if (u - expect).abs() > BRQ_IDENTITY_TOL {
            return Err(Error::Invariant(format!(
                "BRQ stop identity off by {} at slot {t}",
                (u - expect).abs()
            )));
        }
    }
    Ok(EpisodeSummary {
        tau: t,
        cum_rate,
        power_sum,
        max_unresolved_at_stop: max_unresolved,
    })
}

/// Runs one episode and keeps the per-slot record.
pub fn run_episode<G: GainSource + ?Sized>(policy: &RatePolicy, gains: &mut G) -> Result<EpisodeTrace> {
    run_episode_capped(policy, gains, DEFAULT_SLOT_CAP)
}

pub fn run_episode_capped<G: GainSource + ?Sized>(
    policy: &RatePolicy,
    gains: &mut G,
    slot_cap: usize,
) -> Result<EpisodeTrace> {
    let mut tr = EpisodeTrace {
        protocol: policy.label(),
        gains: Vec::new(),
        rates: Vec::new(),
        feedback: Vec::new(),
        powers: Vec::new(),
        tau: 0,
        cum_rate: 0.0,
        max_unresolved_at_stop: 0.0,
    };
    let s = drive(policy, gains, slot_cap, |slot| {
        tr.gains.push(slot.gain);
        tr.rates.push(slot.rate);
        tr.powers.push(slot.power);
        tr.feedback.push(slot.feedback);
    })?;
    tr.tau = s.tau;
    tr.cum_rate = s.cum_rate;
    tr.max_unresolved_at_stop = s.max_unresolved_at_stop;
    Ok(tr)
}

/// Runs one episode keeping only the aggregates.
pub fn run_summary<G: GainSource + ?Sized>(policy: &RatePolicy, gains: &mut G, slot_cap: usize) -> Result<EpisodeSummary> {
    drive(policy, gains, slot_cap, |_| {})
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{gain_of, ChannelSampler, ChannelSpec, FixedGains};
    use crate::rng;
    use proptest::prelude::*;

    #[test]
    fn unresolved_examples() {
        let g = [gain_of(0.7)];
        assert_eq!(unresolved(&[0.5], &g, 2, 1).unwrap(), 0.0);
        assert!((unresolved(&[0.5], &g, 1, 1).unwrap() + 0.2).abs() < 1e-12);
        assert!(unresolved(&[0.5], &g, 1, 2).is_err());
        assert!(unresolved(&[0.5], &g, 0, 1).is_err());
    }

    #[test]
    fn brq_rate_examples() {
        let h_t = 5.0;
        assert_eq!(brq_rate(1, 123.0, h_t), cap(h_t));
        assert_eq!(brq_rate(2, 0.0, h_t), 0.0);
        assert_eq!(brq_rate(2, h_t, h_t), cap(h_t));
        assert_eq!(brq_rate(3, 50.0, h_t), cap(h_t));
    }

    #[test]
    fn ems_feedback_examples() {
        let r = 0.4;
        assert_eq!(ems_feedback(-0.1, r, 3), -1);
        assert_eq!(ems_feedback(0.0, r, 3), -1);
        assert_eq!(ems_feedback(0.3 * r, r, 3), 2);
        assert_eq!(ems_feedback(r * 3.0, r, 3), 0);
    }

    #[test]
    fn ems_rate_examples() {
        let r = 0.4;
        assert_eq!(ems_rate(1, 0, r, 3).unwrap(), r * 3.0);
        assert_eq!(ems_rate(2, -1, r, 3).unwrap(), 0.0);
        assert_eq!(ems_rate(2, 2, r, 3).unwrap(), 2.0 * r);
        assert_eq!(ems_rate(2, 0, r, 3).unwrap(), 0.0);
        assert!(ems_rate(2, 3, r, 3).is_err());
        assert!(ems_rate(2, -2, r, 3).is_err());
    }

    #[test]
    fn harq_rate_examples() {
        assert_eq!(harq_inr_rate(1, 1.3), 1.3);
        assert_eq!(harq_inr_rate(2, 1.3), 0.0);
        assert_eq!(harq_inr_rate(17, 1.3), 0.0);
    }

    #[test]
    fn brq_stops_on_first_good_slot() {
        let p = RatePolicy::brq(2.0).unwrap();
        let tr = run_episode(&p, &mut FixedGains::new(vec![2.5])).unwrap();
        assert_eq!(tr.tau, 1);
        assert_eq!(tr.cum_rate, cap(2.0));
        assert_eq!(tr.feedback, vec![Feedback::Ack]);
    }

    #[test]
    fn brq_backtracks_to_the_last_gain() {
        let p = RatePolicy::brq(2.0).unwrap();
        let tr = run_episode(&p, &mut FixedGains::new(vec![0.5, 1.5, 3.0])).unwrap();
        assert_eq!(tr.tau, 3);
        assert_eq!(tr.rates, vec![cap(2.0), cap(0.5), cap(1.5)]);
        assert!((tr.cum_rate - tr.rates.iter().sum::<f64>()).abs() < 1e-15);
        let u = unresolved(&tr.rates, &tr.gains, 1, 3).unwrap();
        assert!((u - (cap(2.0) - cap(3.0))).abs() < 1e-12);
        assert!(tr.max_unresolved_at_stop <= DECODABILITY_TOL);
    }

    #[test]
    fn harq_stops_when_information_suffices() {
        let p = RatePolicy::harq_inr(1.0).unwrap();
        let tr = run_episode(&p, &mut FixedGains::new(vec![3.5])).unwrap();
        assert_eq!((tr.tau, tr.cum_rate), (1, 1.0));
        // 0.5 + 0.25 + 0.25 bits.
        let g = vec![1.0, gain_of(0.25), gain_of(0.25), 100.0];
        let tr = run_episode(&p, &mut FixedGains::new(g)).unwrap();
        assert_eq!(tr.tau, 3);
    }

    #[test]
    fn ems_episode_respects_band_and_alphabet() {
        let ch = ChannelSpec::rayleigh(10.0).unwrap();
        let p = RatePolicy::ems(0.9, 3).unwrap();
        let mut symbols = std::collections::BTreeSet::new();
        for i in 0..2000 {
            let mut src = ChannelSampler::new(&ch, rng::substream(11, i));
            let tr = run_episode(&p, &mut src).unwrap();
            for fb in &tr.feedback {
                symbols.insert(match fb {
                    Feedback::Symbol(v) => *v,
                    Feedback::Ack => -1,
                    _ => panic!("unexpected feedback"),
                });
            }
            assert!(tr.max_unresolved_at_stop <= DECODABILITY_TOL);
        }
        assert!(symbols.len() <= 4);
        assert!(symbols.iter().all(|v| (-1..=2).contains(v)));
    }

    #[test]
    fn ems_single_step_matches_harq_on_shared_streams() {
        let ch = ChannelSpec::rayleigh(10.0).unwrap();
        let r = 2.1;
        let ems = RatePolicy::ems(r, 1).unwrap();
        let harq = RatePolicy::harq_inr(r).unwrap();
        for i in 0..5000 {
            let a = run_summary(&ems, &mut ChannelSampler::new(&ch, rng::substream(5, i)), DEFAULT_SLOT_CAP).unwrap();
            let b = run_summary(&harq, &mut ChannelSampler::new(&ch, rng::substream(5, i)), DEFAULT_SLOT_CAP).unwrap();
            assert_eq!(a.tau, b.tau);
            assert_eq!(a.cum_rate, b.cum_rate);
        }
    }

    #[test]
    fn runaway_is_an_error() {
        let p = RatePolicy::harq_inr(1.0).unwrap();
        let err = run_episode_capped(&p, &mut FixedGains::new(vec![0.0; 100]), 10).unwrap_err();
        assert_eq!(err, Error::Runaway { cap: 10 });
    }

    #[test]
    fn exhausted_stream_is_an_error() {
        let p = RatePolicy::harq_inr(1.0).unwrap();
        assert!(run_episode(&p, &mut FixedGains::new(vec![0.1])).is_err());
    }

    #[test]
    fn power_schedule_scales_the_gain() {
        let sched = PowerSchedule::constant(3.0, 1.0).unwrap();
        let p = RatePolicy::power_adapted(1.0, sched).unwrap();
        // Gain 1 at power 3 supports exactly one bit.
        let tr = run_episode(&p, &mut FixedGains::new(vec![1.0])).unwrap();
        assert_eq!(tr.tau, 1);
        assert_eq!(tr.powers, vec![3.0]);
    }

    #[test]
    fn power_schedule_interpolates() {
        let s = PowerSchedule::new(vec![0.0, 1.0, 2.0], vec![1.0, 3.0, 2.0]).unwrap();
        assert_eq!(s.power_at(-1.0), 1.0);
        assert_eq!(s.power_at(0.5), 2.0);
        assert_eq!(s.power_at(1.5), 2.5);
        assert_eq!(s.power_at(9.0), 2.0);
        assert!(PowerSchedule::new(vec![0.0, 0.0], vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn trace_serializes() {
        let p = RatePolicy::brq(2.0).unwrap();
        let tr = run_episode(&p, &mut FixedGains::new(vec![0.5, 3.0])).unwrap();
        let s = serde_json::to_string(&tr).unwrap();
        assert!(s.contains("\"tau\":2"));
        let back: EpisodeTrace = serde_json::from_str(&s).unwrap();
        assert_eq!(back, tr);
    }

    proptest! {
        #[test]
        fn unresolved_telescopes(
            rates in proptest::collection::vec(0.0f64..3.0, 1..20),
            gains in proptest::collection::vec(0.0f64..50.0, 20),
            k in 1usize..20,
        ) {
            let t = rates.len();
            let k = k.min(t);
            let lhs = unresolved(&rates, &gains, k, t).unwrap();
            let rhs = unresolved(&rates, &gains, 1, t).unwrap() - unresolved(&rates, &gains, 1, k - 1).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-9);
        }

        #[test]
        fn brq_episodes_are_decodable(seed in 0u64..1000, t_target in 1.1f64..20.0) {
            let ch = ChannelSpec::rayleigh(10.0).unwrap();
            let h_t = ch.quantile(1.0 - 1.0 / t_target).unwrap();
            let p = RatePolicy::brq(h_t).unwrap();
            let tr = run_episode(&p, &mut ChannelSampler::new(&ch, rng::sequential(seed))).unwrap();
            prop_assert_eq!(tr.gains.len(), tr.tau);
            prop_assert_eq!(tr.rates.len(), tr.tau);
            let u = unresolved(&tr.rates, &tr.gains, 1, tr.tau).unwrap();
            prop_assert!(u < 0.0);
            for k in 1..=tr.tau {
                prop_assert!(unresolved(&tr.rates, &tr.gains, k, tr.tau).unwrap() <= 1e-9);
            }
        }
    }
}
