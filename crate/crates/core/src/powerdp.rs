//! HARQ-INR with power adaptation under a long-run average power of one.
//!
//! The transmitter sends everything at rate `R` in the first slot and then
//! picks the power of each slot from the information `u` the receiver still
//! misses. Pricing the power constraint with a multiplier `λ` gives the
//! per-slot cost `1 + λ(ρ − 1)` and the Bellman equation
//!
//! ```text
//! J_λ(u) = min_ρ { 1 + λ(ρ − 1) + ∫_0^{(2^{2u}−1)/ρ} P_H(h) J_λ(u − C(hρ)) dh },   J_λ(u ≤ 0) = 0
//! ```
//!
//! The minimal mean decoding time is `max_λ J_λ(R)`.
//!
//! The integral is taken in the probability domain, `p = F_H(h)`:
//! `∫_0^{F_H((2^{2u}−1)/ρ)} J_λ(u − C(ρ F_H^{-1}(p))) dp`. The integrand is
//! bounded and smooth in `p` for every `ρ`, whereas on the gain or capacity
//! axis small powers squeeze the kernel into a spike.
//!
//! `J_λ(u)` only depends on values at smaller `u`, so each sweep updates the
//! nodes in ascending order and reuses the values it has just computed.

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::analysis::{eta_harq_inr, ProtocolParam, TradeoffPoint};
use crate::channel::{cap, gain_of, ChannelSpec};
use crate::error::{domain, numeric, Result};
use crate::numeric::{bracketed_root, gauss_legendre, golden_max, golden_min};
use crate::protocols::{PowerSchedule, RatePolicy};

/// Solver settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DpOptions {
    pub nodes: usize,
    /// Clustering of the geometric grid toward `u = 0`.
    pub clustering: f64,
    pub gl_points: usize,
    pub rho_min: f64,
    pub rho_max: f64,
    pub rho_scan: usize,
    /// Golden-section tolerance on `ln ρ`.
    pub rho_tol: f64,
    pub tol: f64,
    pub max_sweeps: usize,
    /// Ablation switch: transmit at unit power in every slot.
    pub unit_power: bool,
}

impl Default for DpOptions {
    fn default() -> Self {
        DpOptions {
            nodes: 1024,
            clustering: 5.0,
            gl_points: 16,
            rho_min: 1e-6,
            rho_max: 64.0,
            rho_scan: 64,
            rho_tol: 1e-6,
            tol: 1e-7,
            max_sweeps: 10_000,
            unit_power: false,
        }
    }
}

/// `J_λ` and the minimizing power on a grid over `(0, R]` that clusters
/// toward zero: `u_i = R(e^{a t_i} − 1)/(e^a − 1)` with `t_i = (i + 1)/N`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueFunctionGrid {
    pub lambda: f64,
    pub rate: f64,
    clustering: f64,
    nodes: Arc<[f64]>,
    pub values: Vec<f64>,
    pub rho: Vec<f64>,
    /// Sup-norm change of the last sweep.
    pub last_change: f64,
    pub sweeps: usize,
}

impl ValueFunctionGrid {
    /// `J ≡ 0`, unit power.
    pub fn zero(lambda: f64, rate: f64, opts: &DpOptions) -> Result<Self> {
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(domain(format!("rate must be positive, got {rate}")));
        }
        if !(0.0..1.0).contains(&lambda) {
            return Err(domain(format!("multiplier must lie in [0, 1), got {lambda}")));
        }
        let n = opts.nodes.max(2);
        let a = opts.clustering;
        let denom = a.exp_m1();
        let nodes: Vec<f64> = (0..n)
            .map(|i| {
                if i + 1 == n {
                    rate
                } else {
                    rate * (a * (i + 1) as f64 / n as f64).exp_m1() / denom
                }
            })
            .collect();
        Ok(ValueFunctionGrid {
            lambda,
            rate,
            clustering: a,
            nodes: nodes.into(),
            values: vec![0.0; n],
            rho: vec![1.0; n],
            last_change: f64::INFINITY,
            sweeps: 0,
        })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// `J` at the top of the grid, i.e. at the full rate `R`.
    pub fn at_rate(&self) -> f64 {
        *self.values.last().unwrap()
    }

    // Index i with nodes[i] <= u < nodes[i+1], for u in [nodes[0], R).
    fn cell(&self, u: f64) -> usize {
        let n = self.nodes.len();
        let a = self.clustering;
        let t = (u / self.rate * a.exp_m1()).ln_1p() / a;
        let mut i = ((t * n as f64).floor() as isize - 1).clamp(0, n as isize - 2) as usize;
        while i > 0 && self.nodes[i] > u {
            i -= 1;
        }
        while i + 2 < n && self.nodes[i + 1] <= u {
            i += 1;
        }
        i
    }

    fn interp(&self, values: &[f64], u: f64) -> f64 {
        if u <= 0.0 {
            return 0.0;
        }
        if u <= self.nodes[0] {
            return values[0];
        }
        if u >= self.rate {
            return *values.last().unwrap();
        }
        let i = self.cell(u);
        let (x0, x1) = (self.nodes[i], self.nodes[i + 1]);
        let w = (u - x0) / (x1 - x0);
        values[i] + w * (values[i + 1] - values[i])
    }

    // interp(values, u) written as a + b·values[own].
    fn interp_split(&self, values: &[f64], u: f64, own: usize) -> (f64, f64) {
        let n = self.nodes.len();
        let pick = |k: usize, w: f64| if k == own { (0.0, w) } else { (w * values[k], 0.0) };
        if u <= 0.0 {
            return (0.0, 0.0);
        }
        if u <= self.nodes[0] {
            return pick(0, 1.0);
        }
        if u >= self.rate {
            return pick(n - 1, 1.0);
        }
        let i = self.cell(u);
        let w = (u - self.nodes[i]) / (self.nodes[i + 1] - self.nodes[i]);
        let (a0, b0) = pick(i, 1.0 - w);
        let (a1, b1) = pick(i + 1, w);
        (a0 + a1, b0 + b1)
    }

    /// `J_λ` at any `u`: zero for `u ≤ 0`, held constant below the first node,
    /// linear in between nodes.
    pub fn value_at(&self, u: f64) -> f64 {
        self.interp(&self.values, u)
    }

    pub fn rho_at(&self, u: f64) -> f64 {
        if u <= self.nodes[0] {
            return self.rho[0];
        }
        self.interp(&self.rho, u)
    }

    /// The extracted power policy.
    pub fn schedule(&self) -> Result<PowerSchedule> {
        PowerSchedule::new(self.nodes.to_vec(), self.rho.clone())
    }

    /// Writes `u,J,rho_star` rows.
    pub fn write_policy_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "u,J,rho_star")?;
        for ((u, j), p) in self.nodes.iter().zip(&self.values).zip(&self.rho) {
            writeln!(out, "{u:.17e},{j:.17e},{p:.17e}")?;
        }
        Ok(())
    }
}

/// `∫_0^{F_H(g(u)/ρ)} values(u − C(ρ F_H^{-1}(p))) dp` split as `a + b·values[own]`:
/// the slot can leave `u` inside the cell just below node `own`, whose
/// interpolant involves the value being solved for.
fn continuation(
    ch: &ChannelSpec,
    grid: &ValueFunctionGrid,
    values: &[f64],
    own: usize,
    rho: f64,
    gl_points: usize,
) -> (f64, f64) {
    let u = grid.nodes[own];
    let p_max = ch.cdf(gain_of(u) / rho);
    if p_max <= 0.0 {
        return (0.0, 0.0);
    }
    let gl = gauss_legendre(gl_points);
    let half = 0.5 * p_max;
    let (mut a, mut b) = (0.0, 0.0);
    for (x, w) in gl.nodes.iter().zip(&gl.weights) {
        let p = half * (x + 1.0);
        let v = u - cap(ch.quantile_unchecked(p) * rho);
        let (va, vb) = grid.interp_split(values, v, own);
        a += w * va;
        b += w * vb;
    }
    (a * half, b * half)
}

fn stage(lambda: f64, rho: f64) -> f64 {
    (1.0 - lambda) + lambda * rho
}

// Value of node `own` under power `rho`: the fixed point of
// J = stage + a + b·J.
fn node_value(ch: &ChannelSpec, grid: &ValueFunctionGrid, values: &[f64], own: usize, rho: f64, opts: &DpOptions) -> f64 {
    let (a, b) = continuation(ch, grid, values, own, rho, opts.gl_points);
    if b >= 1.0 - 1e-15 {
        return f64::INFINITY;
    }
    (stage(grid.lambda, rho) + a) / (1.0 - b)
}

/// Minimizing power at node `own` and the resulting value.
fn minimize_rho(
    ch: &ChannelSpec,
    grid: &ValueFunctionGrid,
    values: &[f64],
    own: usize,
    hint: Option<f64>,
    opts: &DpOptions,
) -> (f64, f64) {
    if opts.unit_power {
        return (1.0, node_value(ch, grid, values, own, 1.0, opts));
    }
    let obj = |x: f64| node_value(ch, grid, values, own, x.exp(), opts);
    let (lo, hi) = (opts.rho_min.ln(), opts.rho_max.ln());
    if let Some(prev) = hint {
        // Local refinement around the previous minimizer; fall back to the
        // full scan if the optimum sits on the window edge.
        let c = prev.ln();
        let (a, b) = ((c - 0.5).max(lo), (c + 0.5).min(hi));
        let g = golden_min(obj, a, b, opts.rho_tol);
        let near_edge = (g.x - a < 2.0 * opts.rho_tol && a > lo) || (b - g.x < 2.0 * opts.rho_tol && b < hi);
        // A few probes across the whole range guard against a stale basin.
        let probes = 8;
        let beaten = (0..probes).any(|k| obj(lo + (hi - lo) * k as f64 / (probes - 1) as f64) < g.value);
        if !near_edge && !beaten {
            return (g.x.exp(), g.value);
        }
    }
    let n = opts.rho_scan.max(3);
    let step = (hi - lo) / (n - 1) as f64;
    let mut best = 0;
    let mut best_v = f64::INFINITY;
    for k in 0..n {
        let v = obj(lo + k as f64 * step);
        if v < best_v {
            best_v = v;
            best = k;
        }
    }
    let a = lo + best.saturating_sub(1) as f64 * step;
    let b = (lo + (best + 1) as f64 * step).min(hi);
    let g = golden_min(obj, a, b, opts.rho_tol);
    if g.value <= best_v {
        (g.x.exp(), g.value)
    } else {
        ((lo + best as f64 * step).exp(), best_v)
    }
}

/// One ascending sweep of the Bellman operator over all nodes. Each node is
/// solved together with the self-transition into the cell below it, so a
/// sweep from any start already lands close to the fixed point. Returns the
/// updated grid; its `last_change` is the sup-norm change of the sweep.
pub fn bellman_backup(grid: &ValueFunctionGrid, ch: &ChannelSpec, opts: &DpOptions) -> ValueFunctionGrid {
    let mut next = grid.clone();
    let warm = grid.sweeps > 0;
    let mut change = 0.0f64;
    for i in 0..next.nodes.len() {
        let hint = warm.then(|| grid.rho[i]);
        let values = std::mem::take(&mut next.values);
        let (rho, v) = minimize_rho(ch, &next, &values, i, hint, opts);
        next.values = values;
        change = change.max((v - next.values[i]).abs());
        next.values[i] = v;
        next.rho[i] = rho;
    }
    next.last_change = change;
    next.sweeps = grid.sweeps + 1;
    next
}

/// Value iteration from `J ≡ 0` until a sweep changes no node by more than
/// `opts.tol`.
pub fn value_iterate(lambda: f64, rate: f64, ch: &ChannelSpec) -> Result<ValueFunctionGrid> {
    value_iterate_with(lambda, rate, ch, &DpOptions::default(), None)
}

/// Value iteration with explicit options, optionally starting from the
/// values and powers of an earlier solve on the same grid.
pub fn value_iterate_with(
    lambda: f64,
    rate: f64,
    ch: &ChannelSpec,
    opts: &DpOptions,
    warm: Option<&ValueFunctionGrid>,
) -> Result<ValueFunctionGrid> {
    let mut g = ValueFunctionGrid::zero(lambda, rate, opts)?;
    if let Some(w) = warm {
        if w.nodes.len() == g.nodes.len() && w.rate == rate {
            g.values.clone_from(&w.values);
            g.rho.clone_from(&w.rho);
            g.sweeps = 1;
        }
    }
    for _ in 0..opts.max_sweeps {
        g = bellman_backup(&g, ch, opts);
        if !g.values.iter().all(|v| v.is_finite()) {
            return Err(numeric(format!("value iteration diverged at λ={lambda}, R={rate}")));
        }
        if g.last_change < opts.tol {
            return Ok(g);
        }
    }
    Err(numeric(format!(
        "value iteration at λ={lambda}, R={rate} still moving by {:.3e} after {} sweeps",
        g.last_change, opts.max_sweeps
    )))
}

/// Mean decoding time and mean total power of a fixed power policy, by the
/// same quadrature as the Bellman backup.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyCost {
    pub tau: f64,
    pub power: f64,
}

impl PolicyCost {
    pub fn power_per_slot(&self) -> f64 {
        self.power / self.tau
    }
}

pub fn evaluate_policy(grid: &ValueFunctionGrid, ch: &ChannelSpec, opts: &DpOptions) -> Result<PolicyCost> {
    let n = grid.nodes.len();
    let mut tau = vec![0.0; n];
    let mut pow = vec![0.0; n];
    for _ in 0..opts.max_sweeps {
        let mut change = 0.0f64;
        for i in 0..n {
            let rho = grid.rho[i];
            let (at, bt) = continuation(ch, grid, &tau, i, rho, opts.gl_points);
            let (ap, bp) = continuation(ch, grid, &pow, i, rho, opts.gl_points);
            let t_new = (1.0 + at) / (1.0 - bt);
            let p_new = (rho + ap) / (1.0 - bp);
            change = change.max((t_new - tau[i]).abs()).max((p_new - pow[i]).abs());
            tau[i] = t_new;
            pow[i] = p_new;
        }
        if !(change.is_finite()) {
            return Err(numeric("policy evaluation diverged"));
        }
        if change < opts.tol {
            return Ok(PolicyCost { tau: tau[n - 1], power: pow[n - 1] });
        }
    }
    Err(numeric("policy evaluation did not converge"))
}

/// Result of the dual maximization at one rate.
#[derive(Debug, Clone)]
pub struct DualSolution {
    pub rate: f64,
    pub lambda: f64,
    /// `max_λ J_λ(R)`, the minimal mean decoding time.
    pub value: f64,
    pub grid: ValueFunctionGrid,
    /// Cost of the extracted policy on the DP grid.
    pub policy_cost: PolicyCost,
}

impl DualSolution {
    pub fn policy(&self) -> Result<RatePolicy> {
        RatePolicy::power_adapted(self.rate, self.grid.schedule()?)
    }
}

/// Largest multiplier tried; the stage cost `(1 − λ) + λρ` must stay positive.
const LAMBDA_CAP: f64 = 1.0 - 1e-6;
const LAMBDA_MIN: f64 = 1e-6;

/// `max_{λ>0} J_λ(R)` by golden-section over `λ`. The bracket starts at
/// `[1e-6, 2^{-10}]` and doubles its upper end while the dual still rises.
pub fn dual_solve(rate: f64, ch: &ChannelSpec) -> Result<DualSolution> {
    dual_solve_with(rate, ch, &DpOptions::default(), None)
}

pub fn dual_solve_with(rate: f64, ch: &ChannelSpec, opts: &DpOptions, lambda_hint: Option<f64>) -> Result<DualSolution> {
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(domain(format!("rate must be positive, got {rate}")));
    }
    let mut warm: Option<ValueFunctionGrid> = None;
    let mut failure: Option<crate::Error> = None;
    let mut eval = |lambda: f64| -> f64 {
        match value_iterate_with(lambda, rate, ch, opts, warm.as_ref()) {
            Ok(g) => {
                let v = g.at_rate();
                warm = Some(g);
                v
            }
            Err(e) => {
                failure.get_or_insert(e);
                f64::NEG_INFINITY
            }
        }
    };

    let (lo, hi) = match lambda_hint {
        Some(l) if l > LAMBDA_MIN && l < LAMBDA_CAP => {
            // Verify the hint window brackets the maximum, else widen.
            let (mut a, mut b) = ((l * 0.8).max(LAMBDA_MIN), (l * 1.25).min(LAMBDA_CAP));
            let (fa, fm, fb) = (eval(a), eval(l), eval(b));
            if fa > fm {
                a = LAMBDA_MIN;
            }
            if fb > fm {
                b = LAMBDA_CAP;
            }
            (a, b)
        }
        _ => {
            let mut pts = vec![(LAMBDA_MIN, eval(LAMBDA_MIN))];
            let mut x = 1.0 / 1024.0;
            let mut doublings = 0;
            loop {
                let v = eval(x);
                pts.push((x, v));
                if v < pts[pts.len() - 2].1 || x >= LAMBDA_CAP {
                    break;
                }
                doublings += 1;
                if doublings > 16 {
                    return Err(numeric("dual bracket expansion exceeded 2^16"));
                }
                x = (2.0 * x).min(LAMBDA_CAP);
            }
            let k = pts.len() - 1;
            (pts[k.saturating_sub(2)].0, pts[k].0)
        }
    };
    // J_λ is flat at the maximizer, so a loose λ tolerance costs only O(xtol²)
    // in the value.
    let g = golden_max(&mut eval, lo, hi, 1e-3);
    if let Some(e) = failure {
        return Err(e);
    }
    let grid = value_iterate_with(g.x, rate, ch, opts, warm.as_ref())?;
    let value = grid.at_rate();
    let policy_cost = evaluate_policy(&grid, ch, opts)?;
    Ok(DualSolution { rate, lambda: g.x, value, grid, policy_cost })
}

/// Best throughput `R / max_λ J_λ(R)` subject to `max_λ J_λ(R) ≤ T`.
pub fn eta_harq_inr_p(t: f64, ch: &ChannelSpec) -> Result<(TradeoffPoint, DualSolution)> {
    eta_harq_inr_p_with(t, ch, &DpOptions::default())
}

pub fn eta_harq_inr_p_with(t: f64, ch: &ChannelSpec, opts: &DpOptions) -> Result<(TradeoffPoint, DualSolution)> {
    if !(t > 1.0) {
        return Err(domain(format!("average decoding time must exceed 1, got {t}")));
    }
    // Unit power is feasible, so the constrained optimum sits at or above the
    // HARQ-INR rate for the same T.
    let base = eta_harq_inr(ch, t)?;
    let r0 = base.param.scalar();
    if !(r0 > 0.0) {
        return Err(numeric(format!("no feasible HARQ-INR rate at T={t}")));
    }
    let mut hint: Option<f64> = None;
    let mut best: Option<DualSolution> = None;
    let solve = |r: f64, hint: &mut Option<f64>| -> Result<DualSolution> {
        let s = dual_solve_with(r, ch, opts, *hint)?;
        *hint = Some(s.lambda);
        Ok(s)
    };
    let keep = |s: &DualSolution, best: &mut Option<DualSolution>| {
        if s.value <= t && best.as_ref().is_none_or(|b| s.rate > b.rate) {
            *best = Some(s.clone());
        }
    };

    let mut lo = r0;
    let s_lo = solve(lo, &mut hint)?;
    keep(&s_lo, &mut best);
    let mut f_lo = s_lo.value - t;
    while f_lo > 0.0 {
        lo *= 0.95;
        let s = solve(lo, &mut hint)?;
        keep(&s, &mut best);
        f_lo = s.value - t;
    }
    let mut hi = lo * 1.08;
    loop {
        let s = solve(hi, &mut hint)?;
        keep(&s, &mut best);
        if s.value > t {
            break;
        }
        lo = hi;
        hi *= 1.08;
    }
    let root = bracketed_root(
        |r| {
            let s = solve(r, &mut hint)?;
            keep(&s, &mut best);
            Ok(s.value - t)
        },
        lo,
        hi,
        1e-6 * lo,
        1e-6,
    );
    root?;
    let sol = best.ok_or_else(|| numeric(format!("no feasible power-adapted rate at T={t}")))?;
    let point = TradeoffPoint {
        protocol: "harq-inr-p".into(),
        avg_decoding_time: sol.value,
        throughput: sol.rate / sol.value,
        param: ProtocolParam::PoweredRate { r: sol.rate, lambda: sol.lambda },
    };
    Ok((point, sol))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::harq_expected_tau;

    fn ray(g: f64) -> ChannelSpec {
        ChannelSpec::rayleigh(g).unwrap()
    }

    fn coarse() -> DpOptions {
        DpOptions { nodes: 256, ..DpOptions::default() }
    }

    #[test]
    fn grid_shape_and_lookup() {
        let g = ValueFunctionGrid::zero(0.5, 2.0, &DpOptions::default()).unwrap();
        let n = g.nodes();
        assert_eq!(n.len(), 1024);
        assert_eq!(*n.last().unwrap(), 2.0);
        assert!(n[0] > 0.0 && n[0] < 1e-3);
        assert!(n.windows(2).all(|w| w[1] > w[0]));
        for i in [0usize, 1, 17, 500, 1022] {
            let mid = 0.5 * (n[i] + n[i + 1]);
            assert_eq!(g.cell(mid), i);
            assert_eq!(g.cell(n[i]), i);
        }
        assert_eq!(g.value_at(-1.0), 0.0);
        assert!(ValueFunctionGrid::zero(1.0, 2.0, &DpOptions::default()).is_err());
    }

    #[test]
    fn boundary_and_small_u_limit() {
        let ch = ray(10.0);
        let g = value_iterate_with(1e-6, 1.5, &ch, &coarse(), None).unwrap();
        assert_eq!(g.value_at(0.0), 0.0);
        assert_eq!(g.value_at(-0.3), 0.0);
        assert!((g.values[0] - 1.0).abs() < 1e-3, "{}", g.values[0]);
        let unit = DpOptions { unit_power: true, ..coarse() };
        let g = value_iterate_with(0.4, 1.5, &ch, &unit, None).unwrap();
        assert!((g.values[0] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn value_function_monotone_in_u_and_iterates() {
        let ch = ray(10.0);
        let opts = coarse();
        let mut g = ValueFunctionGrid::zero(0.3, 2.0, &opts).unwrap();
        for _ in 0..6 {
            let next = bellman_backup(&g, &ch, &opts);
            for (i, (a, b)) in g.values.iter().zip(&next.values).enumerate() {
                assert!(*b >= *a - 1e-9, "sweep {} node {i}: {a} -> {b}, rho {} -> {}", g.sweeps, g.rho[i], next.rho[i]);
            }
            g = next;
        }
        let g = value_iterate_with(0.3, 2.0, &ch, &opts, None).unwrap();
        assert!(g.values.windows(2).all(|w| w[1] >= w[0] - 1e-9));
        assert!(g.rho.iter().all(|&p| p >= opts.rho_min));
        // Fixed-point residual.
        assert!(bellman_backup(&g, &ch, &opts).last_change <= 1e-6);
    }

    #[test]
    fn unit_power_reproduces_harq() {
        let ch = ray(10.0);
        let r = ch.capacity_law().quantile(0.6).unwrap();
        let opts = DpOptions { unit_power: true, ..DpOptions::default() };
        let tau = harq_expected_tau(&ch, r).unwrap();
        for lambda in [0.1, 0.7] {
            let g = value_iterate_with(lambda, r, &ch, &opts, None).unwrap();
            assert!((g.at_rate() - tau).abs() < 1e-3, "{} vs {tau}", g.at_rate());
        }
    }

    #[test]
    fn policy_csv_rows() {
        let g = ValueFunctionGrid::zero(0.5, 1.0, &coarse()).unwrap();
        let mut buf = Vec::new();
        g.write_policy_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("u,J,rho_star\n"));
        assert_eq!(s.lines().count(), 257);
    }
}
