//! Fading laws for the per-slot gain `H` and the induced law of the per-slot
//! capacity `C(H) = ½·log2(1 + H)`.
//!
//! A [`ChannelSpec`] is immutable once built and can be shared freely between
//! workers; sampling state always lives in the caller's generator.

use std::f64::consts::LN_2;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::numeric::{integrate_tol, QuadTol};
use crate::rng;

/// Probability mass left beyond the upper integration limit used by every
/// quadrature over the gain law.
pub const TAIL_MASS: f64 = 1e-12;

/// Minimum knot count accepted for a tabulated law.
pub const MIN_TABLE_KNOTS: usize = 4096;

/// `C(h) = ½·log2(1 + h)` in bits per channel use.
pub fn capacity(h: f64) -> Result<f64> {
    if !(h >= 0.0) {
        return Err(domain(format!("gain must be nonnegative, got {h}")));
    }
    Ok(cap(h))
}

/// Inverse of [`capacity`]: `2^{2c} − 1`.
pub fn gain_from_capacity(c: f64) -> Result<f64> {
    if !(c >= 0.0) {
        return Err(domain(format!("capacity must be nonnegative, got {c}")));
    }
    Ok(gain_of(c))
}

#[inline]
pub(crate) fn cap(h: f64) -> f64 {
    0.5 * h.ln_1p() / LN_2
}

#[inline]
pub(crate) fn gain_of(c: f64) -> f64 {
    (2.0 * c * LN_2).exp_m1()
}

/// `dC/dh`.
#[inline]
pub(crate) fn cap_slope(h: f64) -> f64 {
    0.5 / (LN_2 * (1.0 + h))
}

/// Antiderivative of `C` on the gain axis.
fn cap_antiderivative(h: f64) -> f64 {
    ((1.0 + h) * h.ln_1p() - h) / (2.0 * LN_2)
}

/// SNR in dB to linear mean gain.
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// A law given by its quantile function at a set of probability knots,
/// interpolated linearly in between.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedLaw {
    probs: Arc<[f64]>,
    gains: Arc<[f64]>,
}

impl TabulatedLaw {
    pub fn knots(&self) -> usize {
        self.probs.len()
    }

    // Largest i with gains[i] <= h, or None when h is below the support.
    fn segment_of_gain(&self, h: f64) -> Option<usize> {
        let idx = self.gains.partition_point(|&g| g <= h);
        idx.checked_sub(1)
    }

    fn cdf(&self, h: f64) -> f64 {
        let n = self.gains.len();
        match self.segment_of_gain(h) {
            None => 0.0,
            Some(i) if i + 1 >= n => 1.0,
            Some(i) => {
                let (g0, g1) = (self.gains[i], self.gains[i + 1]);
                let (p0, p1) = (self.probs[i], self.probs[i + 1]);
                p0 + (h - g0) / (g1 - g0) * (p1 - p0)
            }
        }
    }

    fn pdf(&self, h: f64) -> f64 {
        match self.segment_of_gain(h) {
            Some(i) if i + 1 < self.gains.len() => {
                let dg = self.gains[i + 1] - self.gains[i];
                (self.probs[i + 1] - self.probs[i]) / dg
            }
            _ => 0.0,
        }
    }

    fn quantile(&self, p: f64) -> f64 {
        let n = self.probs.len();
        let idx = self.probs.partition_point(|&q| q <= p);
        if idx >= n {
            return self.gains[n - 1];
        }
        let i = idx.saturating_sub(1);
        let (p0, p1) = (self.probs[i], self.probs[i + 1]);
        let (g0, g1) = (self.gains[i], self.gains[i + 1]);
        g0 + (p - p0) / (p1 - p0) * (g1 - g0)
    }

    fn mean(&self) -> f64 {
        self.probs
            .windows(2)
            .zip(self.gains.windows(2))
            .map(|(p, g)| 0.5 * (g[0] + g[1]) * (p[1] - p[0]))
            .sum()
    }

    // ∫ C(x) dF(x) over x ≤ h, exact for the piecewise-uniform law.
    fn partial_capacity_mean(&self, h: f64) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.gains.len() - 1 {
            let (g0, g1) = (self.gains[i], self.gains[i + 1]);
            if g0 > h {
                break;
            }
            let dp = self.probs[i + 1] - self.probs[i];
            if g1 == g0 {
                acc += dp * cap(g0);
            } else {
                let top = g1.min(h);
                acc += dp / (g1 - g0) * (cap_antiderivative(top) - cap_antiderivative(g0));
            }
        }
        acc
    }
}

/// The fading law of the slot gains.
#[derive(Debug, Clone, PartialEq)]
pub enum ChannelSpec {
    /// Exponentially distributed power gain with mean `gamma`.
    Rayleigh { gamma: f64 },
    /// Arbitrary law through a monotone quantile table.
    TabulatedInverseCdf(TabulatedLaw),
}

/// JSON form of a channel as accepted by the sweep configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum ChannelConfig {
    Rayleigh { snr_db: f64 },
}

impl ChannelConfig {
    pub fn build(&self) -> Result<ChannelSpec> {
        match *self {
            ChannelConfig::Rayleigh { snr_db } => ChannelSpec::rayleigh_db(snr_db),
        }
    }
}

impl ChannelSpec {
    pub fn rayleigh(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(domain(format!("Rayleigh mean gain must be positive, got {gamma}")));
        }
        Ok(ChannelSpec::Rayleigh { gamma })
    }

    pub fn rayleigh_db(snr_db: f64) -> Result<Self> {
        Self::rayleigh(db_to_linear(snr_db))
    }

    /// Tabulated law with knots at equally spaced probabilities `i/(n-1)`.
    pub fn tabulated(gains: Vec<f64>) -> Result<Self> {
        let n = gains.len();
        let probs = (0..n).map(|i| i as f64 / (n - 1).max(1) as f64).collect();
        Self::tabulated_with_probs(probs, gains)
    }

    /// Tabulated law from explicit `(probability, gain)` knots. Probabilities
    /// must rise strictly from 0 to 1 and gains must be nondecreasing and
    /// nonnegative.
    pub fn tabulated_with_probs(probs: Vec<f64>, gains: Vec<f64>) -> Result<Self> {
        if probs.len() != gains.len() {
            return Err(domain("probability and gain tables differ in length"));
        }
        if probs.len() < MIN_TABLE_KNOTS {
            return Err(domain(format!(
                "tabulated law needs at least {MIN_TABLE_KNOTS} knots, got {}",
                probs.len()
            )));
        }
        if probs[0] != 0.0 || *probs.last().unwrap() != 1.0 {
            return Err(domain("probability knots must span [0, 1]"));
        }
        if probs.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(domain("probability knots must be strictly increasing"));
        }
        if gains.iter().any(|g| !(g.is_finite() && *g >= 0.0)) || gains.windows(2).any(|w| w[1] < w[0]) {
            return Err(domain("gain knots must be finite, nonnegative and nondecreasing"));
        }
        Ok(ChannelSpec::TabulatedInverseCdf(TabulatedLaw {
            probs: probs.into(),
            gains: gains.into(),
        }))
    }

    /// Mean gain Γ, which is also the mean SNR under unit transmit power.
    pub fn mean_gain(&self) -> f64 {
        match self {
            ChannelSpec::Rayleigh { gamma } => *gamma,
            ChannelSpec::TabulatedInverseCdf(t) => t.mean(),
        }
    }

    pub fn snr_db(&self) -> f64 {
        10.0 * self.mean_gain().log10()
    }

    pub fn pdf(&self, h: f64) -> f64 {
        if h < 0.0 {
            return 0.0;
        }
        match self {
            ChannelSpec::Rayleigh { gamma } => (-h / gamma).exp() / gamma,
            ChannelSpec::TabulatedInverseCdf(t) => t.pdf(h),
        }
    }

    /// Derivative of the density; zero inside the segments of a tabulated law.
    pub fn pdf_derivative(&self, h: f64) -> f64 {
        match self {
            ChannelSpec::Rayleigh { gamma } => -self.pdf(h) / gamma,
            ChannelSpec::TabulatedInverseCdf(_) => 0.0,
        }
    }

    pub fn cdf(&self, h: f64) -> f64 {
        if h < 0.0 {
            return 0.0;
        }
        match self {
            ChannelSpec::Rayleigh { gamma } => -(-h / gamma).exp_m1(),
            ChannelSpec::TabulatedInverseCdf(t) => t.cdf(h),
        }
    }

    /// `1 − F_H(h)` without cancellation in the tail.
    pub fn survival(&self, h: f64) -> f64 {
        if h < 0.0 {
            return 1.0;
        }
        match self {
            ChannelSpec::Rayleigh { gamma } => (-h / gamma).exp(),
            ChannelSpec::TabulatedInverseCdf(t) => 1.0 - t.cdf(h),
        }
    }

    /// Inverse CDF on `[0, 1)`.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(0.0..1.0).contains(&p) {
            return Err(domain(format!("quantile needs p in [0, 1), got {p}")));
        }
        Ok(self.quantile_unchecked(p))
    }

    #[inline]
    pub(crate) fn quantile_unchecked(&self, p: f64) -> f64 {
        match self {
            ChannelSpec::Rayleigh { gamma } => -gamma * (-p).ln_1p(),
            ChannelSpec::TabulatedInverseCdf(t) => t.quantile(p),
        }
    }

    /// Gain `h` with `1 − F_H(h) = q`, accurate for tiny `q`.
    pub fn survival_quantile(&self, q: f64) -> Result<f64> {
        if !(q > 0.0 && q <= 1.0) {
            return Err(domain(format!("survival quantile needs q in (0, 1], got {q}")));
        }
        Ok(match self {
            ChannelSpec::Rayleigh { gamma } => -gamma * q.ln(),
            ChannelSpec::TabulatedInverseCdf(t) => t.quantile(1.0 - q),
        })
    }

    /// Upper limit of every integral over the gain law: `F_H^{-1}(1 − 1e-12)`.
    pub fn upper_limit(&self) -> f64 {
        self.survival_quantile(TAIL_MASS).expect("constant in range")
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.quantile_unchecked(rng.random::<f64>())
    }

    /// `count` i.i.d. gains from the generator seeded by `seed`.
    pub fn sample_gains(&self, seed: u64, count: usize) -> Vec<f64> {
        let mut r = rng::sequential(seed);
        (0..count).map(|_| self.sample(&mut r)).collect()
    }

    /// `∫_0^h C(x) P_H(x) dx`.
    pub fn partial_capacity_mean(&self, h: f64) -> Result<f64> {
        self.capacity_mass_between(0.0, h, QuadTol { abs: 1e-15, rel: 1e-13 })
    }

    /// `∫_a^b C(x) P_H(x) dx` with a caller-chosen tolerance.
    pub fn capacity_mass_between(&self, a: f64, b: f64, tol: QuadTol) -> Result<f64> {
        let a = a.max(0.0);
        if b <= a {
            return Ok(0.0);
        }
        match self {
            ChannelSpec::Rayleigh { .. } => {
                let top = self.upper_limit();
                if a >= top {
                    return Ok(0.0);
                }
                integrate_tol(|x| cap(x) * self.pdf(x), a, b.min(top), tol)
            }
            ChannelSpec::TabulatedInverseCdf(t) => {
                Ok(t.partial_capacity_mean(b) - if a > 0.0 { t.partial_capacity_mean(a) } else { 0.0 })
            }
        }
    }

    /// View of the law in the rate domain.
    pub fn capacity_law(&self) -> CapacityLaw<'_> {
        CapacityLaw { channel: self }
    }
}

/// Law of `C(H)`: every quantity is an exact composition with the gain law.
#[derive(Debug, Clone, Copy)]
pub struct CapacityLaw<'a> {
    channel: &'a ChannelSpec,
}

impl CapacityLaw<'_> {
    /// `F_C(r) = F_H(2^{2r} − 1)`.
    pub fn cdf(&self, r: f64) -> f64 {
        if r < 0.0 {
            return 0.0;
        }
        self.channel.cdf(gain_of(r))
    }

    pub fn survival(&self, r: f64) -> f64 {
        if r < 0.0 {
            return 1.0;
        }
        self.channel.survival(gain_of(r))
    }

    /// Density of `C(H)`. With `h = 2^{2c} − 1`, `dh/dc = 2·ln2·2^{2c}`, so
    /// `P_C(c) = P_H(2^{2c} − 1)·2^{2c+1}·ln 2`.
    #[inline]
    pub fn pdf(&self, c: f64) -> f64 {
        if c < 0.0 {
            return 0.0;
        }
        let h = gain_of(c);
        self.channel.pdf(h) * 2.0 * LN_2 * (1.0 + h)
    }

    pub fn quantile(&self, p: f64) -> Result<f64> {
        self.channel.quantile(p).map(cap)
    }

    /// `C̄(r) = ∫_0^r x P_C(x) dx = E[C(H) 1{C(H) ≤ r}]`.
    pub fn partial_mean(&self, r: f64) -> Result<f64> {
        self.channel.partial_capacity_mean(gain_of(r.max(0.0)))
    }

    /// Upper edge of the rate support used by the solvers.
    pub fn upper_limit(&self) -> f64 {
        cap(self.channel.upper_limit())
    }
}

/// Source of slot gains for the episode engine.
pub trait GainSource {
    /// Next gain, or `None` when a finite stream is exhausted.
    fn next_gain(&mut self) -> Option<f64>;
}

/// Draws i.i.d. gains from a channel with the given generator.
pub struct ChannelSampler<'a, R> {
    channel: &'a ChannelSpec,
    rng: R,
}

impl<'a, R: Rng> ChannelSampler<'a, R> {
    pub fn new(channel: &'a ChannelSpec, rng: R) -> Self {
        ChannelSampler { channel, rng }
    }
}

impl<R: Rng> GainSource for ChannelSampler<'_, R> {
    #[inline]
    fn next_gain(&mut self) -> Option<f64> {
        Some(self.channel.sample(&mut self.rng))
    }
}

/// A fixed, finite gain sequence.
#[derive(Debug, Clone)]
pub struct FixedGains {
    gains: Vec<f64>,
    pos: usize,
}

impl FixedGains {
    pub fn new(gains: Vec<f64>) -> Self {
        FixedGains { gains, pos: 0 }
    }
}

impl GainSource for FixedGains {
    fn next_gain(&mut self) -> Option<f64> {
        let g = self.gains.get(self.pos).copied();
        self.pos += 1;
        g
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::integrate;
    use proptest::prelude::*;

    fn ray(g: f64) -> ChannelSpec {
        ChannelSpec::rayleigh(g).unwrap()
    }

    #[test]
    fn capacity_examples() {
        assert_eq!(capacity(0.0).unwrap(), 0.0);
        assert!((capacity(1.0).unwrap() - 0.5).abs() < 1e-15);
        assert!((capacity(3.0).unwrap() - 1.0).abs() < 1e-15);
        assert!(capacity(-1e-3).is_err());
        assert!(capacity(f64::NAN).is_err());
    }

    #[test]
    fn gain_from_capacity_examples() {
        assert_eq!(gain_from_capacity(0.0).unwrap(), 0.0);
        assert!((gain_from_capacity(0.5).unwrap() - 1.0).abs() < 1e-15);
        assert!((gain_from_capacity(1.0).unwrap() - 3.0).abs() < 1e-14);
        assert!(gain_from_capacity(-0.1).is_err());
    }

    #[test]
    fn capacity_round_trip_up_to_60db() {
        for i in 0..=600 {
            let h = 10f64.powf(i as f64 / 100.0) - 1.0 + 1e-3;
            let back = gain_from_capacity(capacity(h).unwrap()).unwrap();
            assert!((back - h).abs() <= 1e-12 * h.max(1e-3), "h={h} back={back}");
        }
    }

    #[test]
    fn cap_cdf_examples() {
        let ch = ray(1.0);
        let law = ch.capacity_law();
        assert_eq!(law.cdf(0.0), 0.0);
        assert!((law.cdf(0.5) - (1.0 - (-1f64).exp())).abs() < 1e-15);
        for p in [0.01, 0.3, 0.5, 0.9, 0.999] {
            assert!((law.cdf(law.quantile(p).unwrap()) - p).abs() < 1e-12);
        }
        for r in [0.0, 0.1, 0.7, 2.0, 4.5] {
            assert!((law.cdf(r) - ch.cdf(gain_from_capacity(r).unwrap())).abs() <= 1e-14);
        }
    }

    #[test]
    fn cap_pdf_examples() {
        let ch = ray(1.0);
        let law = ch.capacity_law();
        assert!((law.pdf(0.0) - 2.0 * LN_2).abs() < 1e-15);
        // adaptive quadrature oracle for the normalization
        let top = law.upper_limit();
        let mass = integrate(|c| law.pdf(c), 0.0, top).unwrap();
        assert!((mass - 1.0).abs() < 1e-8, "mass {mass}");
        let ch10 = ray(10.0);
        let law10 = ch10.capacity_law();
        let mass10 = integrate(|c| law10.pdf(c), 0.0, law10.upper_limit()).unwrap();
        assert!((mass10 - 1.0).abs() < 1e-8);
        // finite-difference derivative of the cdf
        for c in [0.05, 0.4, 1.0, 1.7, 2.5] {
            let d = 1e-5;
            let fd = (law10.cdf(c + d) - law10.cdf(c - d)) / (2.0 * d);
            assert!((fd - law10.pdf(c)).abs() < 1e-6, "c={c}");
        }
    }

    #[test]
    fn quantile_examples() {
        let ch = ray(1.0);
        assert_eq!(ch.quantile(0.0).unwrap(), 0.0);
        assert!((ch.quantile(0.5).unwrap() - LN_2).abs() < 1e-15);
        assert!(ch.quantile(1.0).is_err());
        assert!(ch.quantile(-0.1).is_err());
    }

    #[test]
    fn rayleigh_density_normalized() {
        let ch = ray(10.0);
        let top = ch.upper_limit();
        let mass = integrate(|h| ch.pdf(h), 0.0, top).unwrap();
        assert!((mass - 1.0).abs() < 1e-8);
    }

    #[test]
    fn sampling_is_deterministic() {
        let ch = ray(10.0);
        assert_eq!(ch.sample_gains(42, 1000), ch.sample_gains(42, 1000));
        assert_ne!(ch.sample_gains(42, 10), ch.sample_gains(43, 10));
        assert!(ch.sample_gains(1, 0).is_empty());
    }

    #[test]
    fn sample_mean_within_clt_bound() {
        let ch = ray(10.0);
        let n = 1_000_000;
        let xs = ch.sample_gains(2024, n);
        let mean = xs.iter().sum::<f64>() / n as f64;
        // Exponential: sd = mean, so se = 10 / sqrt(n).
        let se = 10.0 / (n as f64).sqrt();
        assert!((mean - 10.0).abs() < 4.0 * se, "mean {mean}");
    }

    fn ks_statistic(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
        xs.sort_by(f64::total_cmp);
        let n = xs.len() as f64;
        xs.iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = cdf(x);
                (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn ks_gain_and_capacity_samples() {
        let ch = ray(10.0);
        let n = 100_000;
        let xs = ch.sample_gains(99, n);
        // 1% critical value of the one-sample KS statistic.
        let crit = 1.628 / (n as f64).sqrt();
        let d = ks_statistic(xs.clone(), |x| ch.cdf(x));
        assert!(d < crit, "KS {d} vs {crit}");
        let law = ch.capacity_law();
        let caps: Vec<f64> = xs.iter().map(|&h| cap(h)).collect();
        let d = ks_statistic(caps, |c| law.cdf(c));
        assert!(d < crit, "KS {d} vs {crit}");
    }

    fn tab_rayleigh(gamma: f64, n: usize) -> ChannelSpec {
        // Knots equally spaced in probability on [0, 1 - 1e-9], then one at 1.
        let mut probs: Vec<f64> = (0..n - 1).map(|i| (1.0 - 1e-9) * i as f64 / (n - 2) as f64).collect();
        probs.push(1.0);
        let mut gains: Vec<f64> = probs[..n - 1].iter().map(|&p| -gamma * (-p).ln_1p()).collect();
        gains.push(gains[n - 2] * 1.01);
        ChannelSpec::tabulated_with_probs(probs, gains).unwrap()
    }

    #[test]
    fn tabulated_validation() {
        assert!(ChannelSpec::tabulated(vec![1.0; 10]).is_err());
        let mut g: Vec<f64> = (0..5000).map(|i| i as f64).collect();
        assert!(ChannelSpec::tabulated(g.clone()).is_ok());
        g[10] = 0.5;
        assert!(ChannelSpec::tabulated(g).is_err());
    }

    #[test]
    fn tabulated_round_trips() {
        let ch = tab_rayleigh(3.0, 8192);
        for p in [0.0, 0.1, 0.25, 0.5, 0.77, 0.99, 0.999_999] {
            let h = ch.quantile(p).unwrap();
            assert!((ch.cdf(h) - p).abs() < 1e-10, "p={p}");
        }
        for h in [0.01, 0.5, 1.0, 5.0, 20.0] {
            assert!((ch.quantile(ch.cdf(h)).unwrap() - h).abs() < 1e-10 * h.max(1.0));
        }
        // Piecewise-constant density, so integrate segment by segment.
        let exact_mass: f64 = {
            let ChannelSpec::TabulatedInverseCdf(t) = &ch else { unreachable!() };
            (0..t.knots() - 1)
                .map(|i| t.pdf(0.5 * (t.gains[i] + t.gains[i + 1])) * (t.gains[i + 1] - t.gains[i]))
                .sum()
        };
        assert!((exact_mass - 1.0).abs() < 1e-8);
    }

    #[test]
    fn degenerate_table_has_point_mass() {
        let ch = ChannelSpec::tabulated(vec![3.0; MIN_TABLE_KNOTS]).unwrap();
        assert_eq!(ch.cdf(2.999), 0.0);
        assert_eq!(ch.cdf(3.0), 1.0);
        assert!(ch.sample_gains(5, 100).iter().all(|&h| h == 3.0));
        assert!((ch.partial_capacity_mean(10.0).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn partial_capacity_mean_matches_quadrature_on_table() {
        let tab = tab_rayleigh(10.0, 16384);
        let ray10 = ray(10.0);
        for h in [0.5, 5.0, 23.0] {
            let a = tab.partial_capacity_mean(h).unwrap();
            let b = ray10.partial_capacity_mean(h).unwrap();
            assert!((a - b).abs() < 1e-6, "h={h}: {a} vs {b}");
        }
    }

    proptest! {
        #[test]
        fn capacity_inverse_pair(h in 0.0f64..1e6) {
            let c = capacity(h).unwrap();
            let back = gain_from_capacity(c).unwrap();
            prop_assert!((back - h).abs() <= 1e-12 * h.max(1e-3));
        }

        #[test]
        fn rayleigh_quantile_cdf_inverse(p in 0.0f64..0.999_999, g in 0.01f64..1000.0) {
            let ch = ray(g);
            let h = ch.quantile(p).unwrap();
            prop_assert!((ch.cdf(h) - p).abs() < 1e-10);
        }

        #[test]
        fn cap_cdf_is_composition(r in 0.0f64..6.0, g in 0.1f64..1000.0) {
            let ch = ray(g);
            let law = ch.capacity_law();
            prop_assert_eq!(law.cdf(r), ch.cdf(gain_of(r)));
        }
    }
}
