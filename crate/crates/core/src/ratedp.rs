//! Rate-selection dynamic program behind the BRQ converse.
//!
//! For a multiplier `λ` the value of holding `u` bits of unresolved
//! information is
//! `V(u) = max_{r̄ ≥ u} { r̄ − λF_C(r̄) + ∫_0^{r̄} P_C(c) V(r̄ − c) dc } − u`,
//! and on `[0, r_A]` it is exactly `A − u` with
//! `A = max_r { r + (C̄(r) − λF_C(r)) / (1 − F_C(r)) }`.
//! The solver here works on a grid and is used to check that closed form.

use serde::{Deserialize, Serialize};

use crate::analysis::{brq_threshold, ergodic_capacity, t_eta_first_derivative};
use crate::channel::{cap, ChannelSpec};
use crate::error::{domain, numeric, Result};
use crate::numeric::{golden_min, scan_then_golden_max};

const NU_MAX: f64 = 1e9;
const NU_SCAN: usize = 256;

/// `A(λ)` and the rate `r_A` attaining it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intercept {
    pub lambda: f64,
    pub a: f64,
    pub r_a: f64,
}

/// Maximizes `r + (C̄(r) − λF_C(r))/(1 − F_C(r))`. Writing `1 − F_C(r) = 1/ν`
/// turns the objective into `r(ν) + νC̄(r(ν)) − λ(ν − 1)`, which is searched
/// over `log ν`.
pub fn intercept(ch: &ChannelSpec, lambda: f64) -> Result<Intercept> {
    let c_erg = ergodic_capacity(ch)?;
    if !(lambda > c_erg) {
        // The objective grows without bound as r → ∞.
        return Err(domain(format!("A(λ) is infinite for λ={lambda} ≤ C_erg={c_erg}")));
    }
    let law = ch.capacity_law();
    let mut failure = None;
    let mut obj = |x: f64| {
        let nu = x.exp();
        let r = match law.quantile(1.0 - 1.0 / nu) {
            Ok(r) => r,
            Err(e) => {
                failure.get_or_insert(e);
                return f64::NEG_INFINITY;
            }
        };
        match law.partial_mean(r) {
            Ok(m) => r + nu * m - lambda * (nu - 1.0),
            Err(e) => {
                failure.get_or_insert(e);
                f64::NEG_INFINITY
            }
        }
    };
    let top = NU_MAX.ln();
    let grid: Vec<f64> = (0..NU_SCAN).map(|k| top * k as f64 / (NU_SCAN - 1) as f64).collect();
    let g = scan_then_golden_max(&mut obj, &grid, 1e-10);
    if let Some(e) = failure {
        return Err(e);
    }
    let r_a = law.quantile(1.0 - (-g.x).exp())?;
    Ok(Intercept { lambda, a: g.value, r_a })
}

/// `argmin_λ { λ(T − 1) + A(λ) }` found numerically, with its value.
pub fn dual_multiplier(ch: &ChannelSpec, t: f64) -> Result<(Intercept, f64)> {
    if !(t > 1.0 && t.is_finite()) {
        return Err(domain(format!("average decoding time must be finite and exceed 1, got {t}")));
    }
    let c_erg = ergodic_capacity(ch)?;
    // λ(T−1) + A(λ) is convex in λ; bracket by doubling above C_erg.
    let obj = |l: f64| match intercept(ch, l) {
        Ok(i) => l * (t - 1.0) + i.a,
        Err(_) => f64::INFINITY,
    };
    let lo = c_erg * (1.0 + 1e-9);
    let mut hi = 2.0 * c_erg;
    let mut prev = obj(lo + 0.5 * (hi - lo));
    for _ in 0..60 {
        let next = obj(hi);
        if next > prev {
            break;
        }
        prev = next;
        hi *= 2.0;
    }
    let g = golden_min(obj, lo, hi, 1e-9 * hi);
    let i = intercept(ch, g.x)?;
    Ok((i, g.value))
}

/// Closed form of the optimal multiplier: the slope of `T·η_BRQ(T)`.
pub fn multiplier_closed_form(ch: &ChannelSpec, t: f64) -> Result<f64> {
    t_eta_first_derivative(ch, t)
}

/// The rate attaining `A(λ*)`, in closed form: `C(h_T)`.
pub fn intercept_rate_closed_form(ch: &ChannelSpec, t: f64) -> Result<f64> {
    Ok(cap(brq_threshold(ch, t)?))
}

/// Value function on a uniform grid over `[0, upper]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateValueGrid {
    pub lambda: f64,
    pub step: f64,
    pub values: Vec<f64>,
    /// Maximizing `r̄` at each node.
    pub target: Vec<f64>,
    pub sweeps: usize,
}

impl RateValueGrid {
    pub fn node(&self, i: usize) -> f64 {
        i as f64 * self.step
    }

    /// `sup |V(u) − (A − u)| / sup |A − u|` over the nodes in `[0, r_a]`.
    pub fn linear_form_error(&self, a: f64, r_a: f64) -> f64 {
        let mut err = 0.0f64;
        let mut scale = 0.0f64;
        for (i, v) in self.values.iter().enumerate() {
            let u = self.node(i);
            if u > r_a {
                break;
            }
            err = err.max((v - (a - u)).abs());
            scale = scale.max((a - u).abs());
        }
        err / scale
    }
}

pub const RATE_DP_TOL: f64 = 1e-10;
const RATE_DP_MAX_SWEEPS: usize = 100_000;

/// Value iteration for the rate DP. The integral uses the exact capacity mass
/// of each grid cell and the trapezoid average of `V` across it; the outer
/// maximization runs over grid rates `r̄ ∈ [u, upper]`.
pub fn solve_rate_dp(ch: &ChannelSpec, lambda: f64, upper: f64, nodes: usize) -> Result<RateValueGrid> {
    if !(upper > 0.0 && upper.is_finite()) || nodes < 2 {
        return Err(domain(format!("need upper > 0 and at least two nodes, got {upper}, {nodes}")));
    }
    let law = ch.capacity_law();
    let step = upper / (nodes - 1) as f64;
    let cdf: Vec<f64> = (0..nodes).map(|k| law.cdf(k as f64 * step)).collect();
    let mass: Vec<f64> = cdf.windows(2).map(|w| w[1] - w[0]).collect();
    // Per-sweep contraction is at most F_C(upper).
    if cdf[nodes - 1] >= 1.0 {
        return Err(domain("grid extends past the support of C(H)"));
    }

    let mut v = vec![0.0; nodes];
    let mut g = vec![0.0; nodes];
    let mut target = vec![0.0; nodes];
    for sweep in 1..=RATE_DP_MAX_SWEEPS {
        for j in 0..nodes {
            let mut acc = 0.0;
            for k in 0..j {
                acc += mass[k] * 0.5 * (v[j - k] + v[j - k - 1]);
            }
            g[j] = j as f64 * step - lambda * cdf[j] + acc;
        }
        let mut change = 0.0f64;
        let mut best = f64::NEG_INFINITY;
        let mut arg = nodes - 1;
        for i in (0..nodes).rev() {
            if g[i] > best {
                best = g[i];
                arg = i;
            }
            let next = best - i as f64 * step;
            change = change.max((next - v[i]).abs());
            v[i] = next;
            target[i] = arg as f64 * step;
        }
        if !change.is_finite() {
            return Err(numeric("rate value iteration diverged"));
        }
        if change < RATE_DP_TOL {
            return Ok(RateValueGrid { lambda, step, values: v, target, sweeps: sweep });
        }
    }
    Err(numeric(format!("rate value iteration did not settle within {RATE_DP_MAX_SWEEPS} sweeps")))
}

/// Solves the rate DP at the optimal multiplier for `T` on `[0, 1.5·r_A]` and
/// returns the relative deviation from `A − u` on `[0, r_A]`.
pub fn linear_form_check(ch: &ChannelSpec, t: f64, nodes: usize) -> Result<(Intercept, RateValueGrid, f64)> {
    let (i, _) = dual_multiplier(ch, t)?;
    let grid = solve_rate_dp(ch, i.lambda, 1.5 * i.r_a, nodes)?;
    let err = grid.linear_form_error(i.a, i.r_a);
    Ok((i, grid, err))
}
