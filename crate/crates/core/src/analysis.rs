//! Closed-form and quadrature evaluation of the BRQ trade-off, its optimality
//! condition, and the HARQ-INR baseline.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::channel::{cap, cap_slope, ChannelSpec};
use crate::error::{domain, numeric, Result};
use crate::numeric::{integrate_tol, scan_then_golden_max, QuadTol};

/// Parameter that places a protocol on its trade-off curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProtocolParam {
    Threshold { h_t: f64 },
    Ems { r: f64, f: u32 },
    Rate { r: f64 },
    PoweredRate { r: f64, lambda: f64 },
}

impl ProtocolParam {
    /// Scalar used in CSV output.
    pub fn scalar(&self) -> f64 {
        match *self {
            ProtocolParam::Threshold { h_t } => h_t,
            ProtocolParam::Ems { r, .. } | ProtocolParam::Rate { r } | ProtocolParam::PoweredRate { r, .. } => r,
        }
    }
}

/// One `(T, η)` point of a protocol's throughput versus decoding-time curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffPoint {
    pub protocol: String,
    pub avg_decoding_time: f64,
    pub throughput: f64,
    pub param: ProtocolParam,
}

/// `C_erg = E[C(H)]`.
pub fn ergodic_capacity(ch: &ChannelSpec) -> Result<f64> {
    ch.partial_capacity_mean(ch.upper_limit())
}

fn check_t(t: f64) -> Result<()> {
    if !(t > 1.0) || t.is_nan() {
        return Err(domain(format!("average decoding time must exceed 1, got {t}")));
    }
    Ok(())
}

/// `h_T = F_H^{-1}(1 − 1/T)`, the gain threshold that makes BRQ's mean
/// decoding time `1/(1 − F_H(h_T))` equal to `T`.
pub fn brq_threshold(ch: &ChannelSpec, t: f64) -> Result<f64> {
    check_t(t)?;
    if t.is_infinite() {
        return Err(domain("average decoding time must be finite"));
    }
    ch.survival_quantile(1.0 / t)
}

/// Mean BRQ decoding time for a threshold.
pub fn brq_expected_tau(ch: &ChannelSpec, h_t: f64) -> f64 {
    1.0 / ch.survival(h_t)
}

/// The two terms of the BRQ throughput: the ARQ part `∫_0^{h_T} P_H C` and
/// the threshold part `C(h_T)/T`.
pub fn eta_brq_terms(ch: &ChannelSpec, t: f64) -> Result<(f64, f64)> {
    let h = brq_threshold(ch, t)?;
    Ok((ch.partial_capacity_mean(h)?, cap(h) / t))
}

/// BRQ throughput at mean decoding time `T`.
pub fn eta_brq(ch: &ChannelSpec, t: f64) -> Result<f64> {
    let (arq, top) = eta_brq_terms(ch, t)?;
    Ok(arq + top)
}

pub fn brq_point(ch: &ChannelSpec, t: f64) -> Result<TradeoffPoint> {
    let h_t = brq_threshold(ch, t)?;
    Ok(TradeoffPoint {
        protocol: "brq".into(),
        avg_decoding_time: t,
        throughput: eta_brq(ch, t)?,
        param: ProtocolParam::Threshold { h_t },
    })
}

/// `P_H(h)/(1 − F_H(h)) + 1/(1 + h) + P_H'(h)/P_H(h)`. BRQ is throughput
/// optimal when this is nonnegative for every `h`.
pub fn brq_optimality_lhs(ch: &ChannelSpec, h: f64) -> Result<f64> {
    if !(h >= 0.0) {
        return Err(domain(format!("gain must be nonnegative, got {h}")));
    }
    let p = ch.pdf(h);
    if !(p > 0.0) {
        return Err(domain(format!("density vanishes at h={h}")));
    }
    Ok(p / ch.survival(h) + 1.0 / (1.0 + h) + ch.pdf_derivative(h) / p)
}

/// Smallest value of [`brq_optimality_lhs`] over a gain grid spanning the
/// bulk of the law. A negative value means `η_BRQ` is only a lower bound.
pub fn brq_condition_min(ch: &ChannelSpec, points: usize) -> Result<f64> {
    let top = ch.survival_quantile(1e-9)?;
    let mut worst = f64::INFINITY;
    for i in 0..points.max(2) {
        let p = i as f64 / (points.max(2) - 1) as f64;
        let h = ch.quantile_unchecked(p * (1.0 - 1e-9)).min(top);
        if ch.pdf(h) > 0.0 {
            worst = worst.min(brq_optimality_lhs(ch, h)?);
        }
    }
    Ok(worst)
}

/// Second derivative of `T·η_BRQ(T)`:
/// `[−1/((1+h)T³P) − 1/((1+h)²T⁴P²) − P'/((1+h)T⁴P³)] / (2 ln 2)` at
/// `h = h_T`, `P = P_H(h_T)`.
pub fn t_eta_second_derivative(ch: &ChannelSpec, t: f64) -> Result<f64> {
    let h = brq_threshold(ch, t)?;
    let p = ch.pdf(h);
    if !(p > 0.0) {
        return Err(domain(format!("density vanishes at the threshold h={h}")));
    }
    let dp = ch.pdf_derivative(h);
    let a = 1.0 + h;
    let terms = -1.0 / (a * t.powi(3) * p) - 1.0 / (a * a * t.powi(4) * p * p) - dp / (a * t.powi(4) * p.powi(3));
    Ok(terms / (2.0 * LN_2))
}

/// Central second difference of `f(T) = T·η_BRQ(T) = T·G(h_T) + C(h_T)`,
/// with `G(h) = ∫_0^h C P_H`. The increments `f(T ± d) − f(T)` are built from
/// the integral of `C P_H` over the short threshold shift, which avoids the
/// cancellation of differencing `f` directly.
pub fn t_eta_central_difference(ch: &ChannelSpec, t: f64, d: f64) -> Result<f64> {
    if !(d > 0.0 && t - d > 1.0) {
        return Err(domain(format!("step {d} must be positive and keep T − d above 1 at T={t}")));
    }
    let tol = QuadTol { abs: 1e-18, rel: 1e-13 };
    let h = brq_threshold(ch, t)?;
    let g = ch.partial_capacity_mean(h)?;
    let shift = |s: f64| -> Result<f64> {
        let hs = brq_threshold(ch, t + s)?;
        let dg = integrate_tol(|x| cap(x) * ch.pdf(x), h, hs, tol)?;
        let dc = 0.5 * ((hs - h) / (1.0 + h)).ln_1p() / LN_2;
        Ok(dc + t * dg + s * (g + dg))
    };
    Ok((shift(d)? + shift(-d)?) / (d * d))
}

/// First derivative of `T·η_BRQ(T)`, used by tests and diagnostics.
pub fn t_eta_first_derivative(ch: &ChannelSpec, t: f64) -> Result<f64> {
    let h = brq_threshold(ch, t)?;
    let (arq, top) = eta_brq_terms(ch, t)?;
    Ok(arq + top + cap_slope(h) / (t * t * ch.pdf(h)))
}

/// Cells of the convolution grid for outage probabilities.
pub const OUTAGE_CELLS: usize = 4096;

/// Terms below this stop the decoding-time series.
pub const SERIES_CUTOFF: f64 = 1e-9;

const MAX_SERIES_TERMS: usize = 100_000;

/// Upper edge of the capacity kernel; mass beyond it is below 1e-15.
pub(crate) fn kernel_edge(ch: &ChannelSpec) -> f64 {
    cap(ch.survival_quantile(1e-15).expect("constant in range"))
}

/// Iterated convolution of the capacity density on a uniform grid over
/// `[0, R]`. Each call to [`OutageSeries::next`] yields the next `p_out^m`.
struct OutageSeries {
    n: usize,
    dx: f64,
    kernel: Vec<f64>,
    density: Vec<f64>,
    m: usize,
    exact_first: f64,
}

impl OutageSeries {
    fn new(ch: &ChannelSpec, r: f64, cells: usize) -> Self {
        let law = ch.capacity_law();
        let edge = kernel_edge(ch);
        let dx = r / cells as f64;
        let kernel: Vec<f64> = (0..=cells)
            .map(|i| {
                let x = i as f64 * dx;
                if x <= edge {
                    law.pdf(x)
                } else {
                    0.0
                }
            })
            .collect();
        OutageSeries {
            n: cells,
            dx,
            density: Vec::new(),
            kernel,
            m: 0,
            exact_first: law.cdf(r),
        }
    }

    fn trapezoid(&self, v: &[f64]) -> f64 {
        let s: f64 = v.iter().sum();
        self.dx * (s - 0.5 * (v[0] + v[v.len() - 1]))
    }

    fn next(&mut self) -> f64 {
        self.m += 1;
        if self.m == 1 {
            self.density = self.kernel.clone();
            return self.exact_first;
        }
        let prev = std::mem::take(&mut self.density);
        let k = &self.kernel;
        let mut out = vec![0.0; self.n + 1];
        for (i, o) in out.iter_mut().enumerate().skip(1) {
            // ∫_0^{x_i} k(x_i − y) prev(y) dy, trapezoid.
            let mut s = 0.0;
            for j in 1..i {
                s += k[i - j] * prev[j];
            }
            s += 0.5 * (k[i] * prev[0] + k[0] * prev[i]);
            *o = s * self.dx;
        }
        self.density = out;
        self.trapezoid(&self.density).clamp(0.0, 1.0)
    }
}

/// `p_out^m(R) = Pr{C(H_1) + … + C(H_m) < R}`.
pub fn harq_outage(ch: &ChannelSpec, m: usize, r: f64) -> Result<f64> {
    harq_outage_cells(ch, m, r, OUTAGE_CELLS)
}

pub fn harq_outage_cells(ch: &ChannelSpec, m: usize, r: f64, cells: usize) -> Result<f64> {
    if m == 0 {
        return Err(domain("outage needs at least one slot"));
    }
    if !(r >= 0.0) {
        return Err(domain(format!("rate must be nonnegative, got {r}")));
    }
    if r == 0.0 {
        return Ok(0.0);
    }
    let mut s = OutageSeries::new(ch, r, cells);
    let mut p = 0.0;
    for _ in 0..m {
        p = s.next();
    }
    Ok(p)
}

/// Expected HARQ-INR decoding time together with its truncation record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpectedTau {
    pub value: f64,
    /// Number of outage terms summed.
    pub terms: usize,
    /// Geometric bound on the discarded tail, already added to `value`.
    pub tail_bound: f64,
}

/// `E[τ] = 1 + Σ_{m≥1} p_out^m(R)`.
pub fn harq_expected_tau(ch: &ChannelSpec, r: f64) -> Result<f64> {
    harq_expected_tau_detail(ch, r, OUTAGE_CELLS).map(|e| e.value)
}

pub fn harq_expected_tau_detail(ch: &ChannelSpec, r: f64, cells: usize) -> Result<ExpectedTau> {
    if !(r >= 0.0) || !r.is_finite() {
        return Err(domain(format!("rate must be nonnegative and finite, got {r}")));
    }
    if r == 0.0 {
        return Ok(ExpectedTau { value: 1.0, terms: 0, tail_bound: 0.0 });
    }
    let mut s = OutageSeries::new(ch, r, cells);
    let mut sum = 1.0;
    let mut prev = f64::NAN;
    for m in 1..=MAX_SERIES_TERMS {
        let p = s.next();
        sum += p;
        if p < SERIES_CUTOFF {
            let q = if prev > 0.0 { p / prev } else { 0.0 };
            if q >= 1.0 {
                return Err(numeric(format!("outage series stalled at m={m} (ratio {q})")));
            }
            let tail = p * q / (1.0 - q);
            return Ok(ExpectedTau { value: sum + tail, terms: m, tail_bound: tail });
        }
        prev = p;
    }
    Err(numeric(format!("outage series did not decay below {SERIES_CUTOFF} at R={r}")))
}

/// Renewal function `U(x) = 1 + Σ_{m≥1} Pr{S_m < x}` on a uniform grid over
/// `[0, x_max]`, from the renewal equation `U(x) = 1 + ∫_0^x P_C(y) U(x − y) dy`
/// marched with the trapezoid rule. `U(R)` is the HARQ-INR mean decoding time
/// at rate `R`; one solve covers every rate up to `x_max`.
#[derive(Debug, Clone)]
pub struct RenewalCurve {
    step: f64,
    values: Vec<f64>,
}

impl RenewalCurve {
    pub fn solve(ch: &ChannelSpec, x_max: f64, step: f64) -> Result<Self> {
        if !(x_max > 0.0 && step > 0.0) {
            return Err(domain("renewal curve needs a positive range and step"));
        }
        let law = ch.capacity_law();
        let n = (x_max / step).ceil() as usize;
        let edge = kernel_edge(ch);
        let kn = ((edge / step).ceil() as usize).min(n) + 1;
        let mut k: Vec<f64> = (0..kn).map(|j| law.pdf(j as f64 * step)).collect();
        // Keep the discretized kernel a probability density so that the
        // long-run slope of U stays 1/E[C].
        let mass = step * (k.iter().sum::<f64>() - 0.5 * (k[0] + k[kn - 1]));
        let scale = if kn > n { 1.0 } else { law.cdf(edge) / mass };
        k.iter_mut().for_each(|v| *v *= scale);
        let mut u = vec![0.0; n + 1];
        u[0] = 1.0;
        let diag = 1.0 - 0.5 * step * k[0];
        for i in 1..=n {
            let top = i.min(kn - 1);
            let mut s = 0.0;
            for j in 1..top {
                s += k[j] * u[i - j];
            }
            s += if top == i { 0.5 * k[i] * u[0] } else { k[top] * u[i - top] * 0.5 };
            u[i] = (1.0 + step * s) / diag;
        }
        Ok(RenewalCurve { step, values: u })
    }

    pub fn x_max(&self) -> f64 {
        self.step * (self.values.len() - 1) as f64
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Linear interpolation of `U` at `x`.
    pub fn at(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 1.0;
        }
        let pos = x / self.step;
        let i = (pos.floor() as usize).min(self.values.len() - 2);
        let w = pos - i as f64;
        self.values[i] * (1.0 - w) + self.values[i + 1] * w
    }
}

/// Largest rate for which the series route of [`harq_expected_tau`] is used
/// inside [`eta_harq_inr`]; beyond it the renewal curve alone is used.
const SERIES_RATE_LIMIT: f64 = 16.0;

/// Best HARQ-INR throughput `max R/E[τ(R)]` subject to `E[τ(R)] ≤ T`.
pub fn eta_harq_inr(ch: &ChannelSpec, t: f64) -> Result<TradeoffPoint> {
    if !(t >= 1.0) {
        return Err(domain(format!("average decoding time must be at least 1, got {t}")));
    }
    let zero = TradeoffPoint {
        protocol: "harq-inr".into(),
        avg_decoding_time: 1.0,
        throughput: 0.0,
        param: ProtocolParam::Rate { r: 0.0 },
    };
    if t == 1.0 {
        return Ok(zero);
    }
    let c_erg = ergodic_capacity(ch)?;
    // U(R) ≥ R/E[C] by Wald's identity, so E[τ] ≤ T forces R ≤ T·C_erg.
    let r_hi = t * c_erg * 1.05 + kernel_edge(ch);
    let step = if r_hi <= 64.0 { 1e-3 } else { 5e-3 };
    let curve = RenewalCurve::solve(ch, r_hi, step)?;
    let vals = curve.values();
    let mut best = 0usize;
    let mut best_eta = 0.0;
    for (i, &u) in vals.iter().enumerate().skip(1) {
        if u > t {
            break;
        }
        let eta = i as f64 * step / u;
        if eta > best_eta {
            best_eta = eta;
            best = i;
        }
    }
    if best == 0 {
        return Ok(zero);
    }
    let r0 = best as f64 * step;
    if r0 > SERIES_RATE_LIMIT {
        let tau = curve.at(r0);
        return Ok(TradeoffPoint {
            protocol: "harq-inr".into(),
            avg_decoding_time: tau,
            throughput: r0 / tau,
            param: ProtocolParam::Rate { r: r0 },
        });
    }
    // Refine near the grid optimum with the series route.
    let binding = best + 1 < vals.len() && vals[best + 1] > t;
    let r_star = if binding {
        let lo = (r0 - 4.0 * step).max(step * 0.5);
        let hi = r0 + 4.0 * step;
        crate::numeric::bracketed_root(|r| Ok(harq_expected_tau(ch, r)? - t), lo, hi, 1e-10, 1e-10)
            .or_else(|_| {
                crate::numeric::bracketed_root(|r| Ok(harq_expected_tau(ch, r)? - t), step * 0.5, r_hi.min(SERIES_RATE_LIMIT * 1.5), 1e-10, 1e-10)
            })?
    } else {
        let grid: Vec<f64> = (0..=8).map(|k| r0 - 4.0 * step + k as f64 * step).filter(|r| *r > 0.0).collect();
        let g = scan_then_golden_max(
            |r| match harq_expected_tau(ch, r) {
                Ok(tau) if tau <= t => r / tau,
                _ => f64::NEG_INFINITY,
            },
            &grid,
            1e-9,
        );
        g.x
    };
    let tau = harq_expected_tau(ch, r_star)?;
    Ok(TradeoffPoint {
        protocol: "harq-inr".into(),
        avg_decoding_time: tau,
        throughput: r_star / tau,
        param: ProtocolParam::Rate { r: r_star },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{gain_of, ChannelSpec, MIN_TABLE_KNOTS};

    fn ray(g: f64) -> ChannelSpec {
        ChannelSpec::rayleigh(g).unwrap()
    }

    /// E_1(x) by its convergent power series (x small to moderate).
    fn exp_int_e1(x: f64) -> f64 {
        const EULER: f64 = 0.577_215_664_901_532_9;
        let mut term = 1.0;
        let mut sum = 0.0;
        for k in 1..200 {
            term *= -x / k as f64;
            let add = -term / k as f64;
            sum += add;
            if add.abs() < 1e-18 {
                break;
            }
        }
        -EULER - x.ln() + sum
    }

    #[test]
    fn ergodic_capacity_examples() {
        let deg = ChannelSpec::tabulated(vec![3.0; MIN_TABLE_KNOTS]).unwrap();
        assert!((ergodic_capacity(&deg).unwrap() - 1.0).abs() < 1e-12);
        let g: f64 = 10.0;
        let oracle = (1.0 / g).exp() * exp_int_e1(1.0 / g) / (2.0 * LN_2);
        let c = ergodic_capacity(&ray(g)).unwrap();
        assert!((c - oracle).abs() < 1e-6, "{c} vs {oracle}");
        assert!(ergodic_capacity(&ray(31.62)).unwrap() > c);
    }

    #[test]
    fn brq_threshold_examples() {
        let ch = ray(1.0);
        assert!((brq_threshold(&ch, 2.0).unwrap() - LN_2).abs() < 1e-15);
        assert!(brq_threshold(&ch, 1.0 + 1e-12).unwrap() < 1e-11);
        assert!(brq_threshold(&ch, 1.0).is_err());
        assert!(brq_threshold(&ch, 0.5).is_err());
        for t in [1.01, 1.5, 3.0, 100.0, 1e6] {
            let h = brq_threshold(&ch, t).unwrap();
            assert!((ch.cdf(h) - (1.0 - 1.0 / t)).abs() < 1e-10);
            assert!((brq_expected_tau(&ch, h) - t).abs() < 1e-9 * t);
        }
    }

    #[test]
    fn eta_brq_limits() {
        let ch = ray(10.0);
        let c = ergodic_capacity(&ch).unwrap();
        let e = eta_brq(&ch, 1e6).unwrap();
        assert!((e - c).abs() < 1e-3 && e <= c + 1e-9);
        assert!(eta_brq(&ch, 1.0 + 1e-9).unwrap() < 1e-6);
    }

    #[test]
    fn eta_brq_monotone_and_bounded() {
        let ch = ray(10.0);
        let c = ergodic_capacity(&ch).unwrap();
        let mut prev = 0.0;
        for i in 1..60 {
            let t = 1.0 + 0.25 * i as f64;
            let e = eta_brq(&ch, t).unwrap();
            assert!(e >= prev && e <= c + 1e-9);
            prev = e;
        }
    }

    #[test]
    fn eta_brq_two_term_assembly() {
        let ch = ray(10.0);
        for t in [1.5, 2.0, 7.0] {
            let (arq, top) = eta_brq_terms(&ch, t).unwrap();
            let h = brq_threshold(&ch, t).unwrap();
            let e = eta_brq(&ch, t).unwrap();
            assert!((e - cap(h) / t - arq).abs() < 1e-12);
            assert_eq!(top, cap(h) / t);
        }
    }

    #[test]
    fn optimality_lhs_rayleigh() {
        for g in [0.3, 1.0, 10.0, 100.0] {
            let ch = ray(g);
            for h in [0.0, 0.5, 1.0, 5.0, 20.0] {
                let v = brq_optimality_lhs(&ch, h).unwrap();
                assert!((v - 1.0 / (1.0 + h)).abs() < 1e-9);
            }
        }
        assert!((brq_optimality_lhs(&ray(1.0), 0.0).unwrap() - 1.0).abs() < 1e-15);
        assert!(brq_condition_min(&ray(10.0), 200).unwrap() > 0.0);
    }

    #[test]
    fn optimality_lhs_from_tabulated_differences() {
        // Density and slope by differences of a fine quantile table of Rayleigh(2).
        let g = 2.0;
        let n = 1 << 20;
        let probs: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        let mut gains: Vec<f64> = probs[..n - 1].iter().map(|&p| -g * (-p).ln_1p()).collect();
        gains.push(gains[n - 2] + 1.0);
        let tab = ChannelSpec::tabulated_with_probs(probs, gains).unwrap();
        let ch = ray(g);
        for h in [0.5, 1.0, 3.0] {
            let d1 = 1e-3;
            let p = (tab.cdf(h + d1) - tab.cdf(h - d1)) / (2.0 * d1);
            let d2 = 5e-3;
            let dp = (tab.cdf(h + d2) - 2.0 * tab.cdf(h) + tab.cdf(h - d2)) / (d2 * d2);
            let lhs = p / (1.0 - tab.cdf(h)) + 1.0 / (1.0 + h) + dp / p;
            let exact = brq_optimality_lhs(&ch, h).unwrap();
            assert!((lhs - exact).abs() < 1e-6, "h={h}: {lhs} vs {exact}");
        }
    }

    #[test]
    fn second_derivative_sign_and_differences() {
        let ch = ray(10.0);
        for t in [1.2, 1.5, 2.0, 5.0, 20.0] {
            let d2 = t_eta_second_derivative(&ch, t).unwrap();
            assert!(d2 <= 0.0);
            let fd = t_eta_central_difference(&ch, t, 1e-3).unwrap();
            assert!(((fd - d2) / d2).abs() < 1e-4, "T={t}: {fd} vs {d2}");
            // Same sign as −lhs(h_T), with a positive scale factor.
            let h = brq_threshold(&ch, t).unwrap();
            let lhs = brq_optimality_lhs(&ch, h).unwrap();
            let scale = 2.0 * LN_2 * (1.0 + h) * t.powi(4) * ch.pdf(h).powi(2);
            assert!((d2 * scale + lhs).abs() < 1e-9 * lhs.abs().max(1.0));
        }
    }

    #[test]
    fn first_derivative_matches_differences() {
        let ch = ray(10.0);
        for t in [1.5, 3.0] {
            let d = 1e-4;
            let tol = QuadTol { abs: 1e-18, rel: 1e-13 };
            let h0 = brq_threshold(&ch, t - d).unwrap();
            let h1 = brq_threshold(&ch, t + d).unwrap();
            let f = |tt: f64, hh: f64, gg: f64| tt * gg + cap(hh);
            let g0 = ch.partial_capacity_mean(h0).unwrap();
            let g1 = g0 + integrate_tol(|x| cap(x) * ch.pdf(x), h0, h1, tol).unwrap();
            let fd = (f(t + d, h1, g1) - f(t - d, h0, g0)) / (2.0 * d);
            let exact = t_eta_first_derivative(&ch, t).unwrap();
            assert!(((fd - exact) / exact).abs() < 1e-6);
        }
    }

    #[test]
    fn outage_examples() {
        let ch = ray(10.0);
        assert_eq!(harq_outage(&ch, 1, 1.3).unwrap(), ch.capacity_law().cdf(1.3));
        for m in 1..5 {
            assert_eq!(harq_outage(&ch, m, 0.0).unwrap(), 0.0);
        }
        assert!(harq_outage(&ch, 0, 1.0).is_err());
    }

    #[test]
    fn outage_two_slots_against_direct_quadrature() {
        // Pr{C1 + C2 < R} = ∫ P_C(x) F_C(R − x) dx over [0, R].
        let ch = ray(10.0);
        let law = ch.capacity_law();
        let r = 2.0;
        let direct = integrate_tol(|x| law.pdf(x) * law.cdf(r - x), 0.0, r, QuadTol { abs: 1e-14, rel: 1e-12 }).unwrap();
        let grid = harq_outage(&ch, 2, r).unwrap();
        assert!((grid - direct).abs() < 1e-6, "{grid} vs {direct}");
    }

    #[test]
    fn outage_monotone() {
        let ch = ray(10.0);
        let mut prev_m = 1.0;
        for m in 1..6 {
            let p = harq_outage_cells(&ch, m, 3.0, 1024).unwrap();
            assert!(p <= prev_m + 1e-12);
            prev_m = p;
        }
        let mut prev_r = 0.0;
        for i in 0..10 {
            let p = harq_outage_cells(&ch, 3, 0.5 * i as f64, 1024).unwrap();
            assert!(p + 1e-12 >= prev_r);
            prev_r = p;
        }
    }

    #[test]
    fn expected_tau_examples() {
        let ch = ray(10.0);
        assert_eq!(harq_expected_tau(&ch, 0.0).unwrap(), 1.0);
        let mut prev = 1.0;
        for i in 1..12 {
            let v = harq_expected_tau(&ch, 0.5 * i as f64).unwrap();
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn expected_tau_grid_doubling() {
        let ch = ray(10.0);
        for r in [1.0, 2.0, 3.5] {
            let a = harq_expected_tau_detail(&ch, r, OUTAGE_CELLS).unwrap();
            let b = harq_expected_tau_detail(&ch, r, 2 * OUTAGE_CELLS).unwrap();
            assert!((a.value - b.value).abs() < 1e-6, "R={r}");
            assert!(a.tail_bound < 1e-8);
        }
    }

    #[test]
    fn renewal_curve_agrees_with_series() {
        let ch = ray(10.0);
        let curve = RenewalCurve::solve(&ch, 6.0, 1e-3).unwrap();
        for r in [0.5, 1.7, 2.0, 4.25, 6.0] {
            let a = curve.at(r);
            let b = harq_expected_tau(&ch, r).unwrap();
            assert!((a - b).abs() < 2e-5, "R={r}: {a} vs {b}");
        }
    }

    #[test]
    fn degenerate_law_tau() {
        // Every slot carries exactly one bit.
        let ch = ChannelSpec::tabulated(vec![gain_of(1.0); MIN_TABLE_KNOTS]).unwrap();
        assert_eq!(ch.capacity_law().cdf(0.999), 0.0);
        assert_eq!(ch.capacity_law().cdf(1.0), 1.0);
    }

    #[test]
    fn harq_search_examples() {
        let ch = ray(10.0);
        let p = eta_harq_inr(&ch, 1.0).unwrap();
        assert_eq!(p.throughput, 0.0);
        assert!(eta_harq_inr(&ch, 0.9).is_err());
        for t in [1.5, 2.0, 3.0, 5.0] {
            let p = eta_harq_inr(&ch, t).unwrap();
            assert!(p.avg_decoding_time <= t + 1e-8);
            assert!(p.throughput <= eta_brq(&ch, t).unwrap());
            let ProtocolParam::Rate { r } = p.param else { panic!() };
            // Constraint binds at the optimum.
            assert!((harq_expected_tau(&ch, r).unwrap() - t).abs() < 1e-6);
        }
    }
}
