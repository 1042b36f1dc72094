//! Renewal integral equations of the finite-feedback EMS protocol.
//!
//! With `s(u) = u + r̄v̄(u)` the expected future reward and decoding time
//! from unresolved information `u` satisfy
//!
//! ```text
//! W(u) = r̄v̄(u) + ∫_0^{s(u)} P_C(x) W(s(u) − x) dx
//! M(u) = 1      + ∫_0^{s(u)} P_C(x) M(s(u) − x) dx
//! ```
//!
//! On the band `((j−1)r, jr]` the composite rate is `r(f − j)`, so `s(u)`
//! always falls in the top band `(r(f−1), rf]` at the same offset as `u`
//! in its own band. Writing `Ψ(s) = ∫_0^s P_C(s − v) W(v) dv`, every band of
//! `W` is a shifted copy of `Ψ` on the top band:
//!
//! ```text
//! W((j−1)r + θ) = r(f − j) + Ψ(r(f−1) + θ),   θ ∈ (0, r]
//! ```
//!
//! and `u = 0` joins band 1 at `θ = 0`. Discretizing `θ` with `m + 1`
//! uniformly spaced offsets per band (breakpoints duplicated, one copy per
//! side) puts every shifted argument `s − v` on the lattice `i·r/m`, so the
//! Nyström system closes on the `m + 1` top-band values of `Ψ` with no
//! interpolation. `W` and `M` share the matrix and differ in their source.

use std::io::Write;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::analysis::{ProtocolParam, TradeoffPoint};
use crate::channel::ChannelSpec;
use crate::error::{domain, numeric, Result};
use crate::numeric::{bracketed_root, gauss_legendre};

/// Total Nyström nodes over `[0, rf]`, split evenly across the bands.
pub const DEFAULT_NODES: usize = 2048;

/// Parameters whose transmission never ends, `F_C(rf) ≥ 1 − REJECT_MASS`,
/// are refused.
pub const REJECT_MASS: f64 = 1e-12;

/// How a [`GriddedFunction`] is evaluated between its nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    #[default]
    Linear,
    /// Three-point Lagrange on each band; nodes never straddle a breakpoint.
    Quadratic,
}

/// `r · min{f − 1, ⌊f − u⁺/r⌋}` on `[0, rf]`.
pub fn composite_rate_feedback(u: f64, r: f64, f: u32) -> Result<f64> {
    if !(r > 0.0) || f == 0 {
        return Err(domain(format!("need r > 0 and f >= 1, got r={r}, f={f}")));
    }
    let top = r * f as f64;
    if !(0.0..=top).contains(&u) {
        return Err(domain(format!("u={u} outside [0, {top}]")));
    }
    let fl = (f as f64 - u.max(0.0) / r).floor();
    Ok(r * fl.min((f - 1) as f64))
}

/// A function on `[0, rf]` stored band by band. The first node of each band
/// after the first sits one ulp above the breakpoint and holds the right
/// limit; the breakpoint itself holds the value of the band it closes.
#[derive(Debug, Clone, PartialEq)]
pub struct GriddedFunction {
    nodes: Vec<f64>,
    values: Vec<f64>,
    per_band: usize,
    interpolation: Interpolation,
}

impl GriddedFunction {
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.nodes[0], *self.nodes.last().unwrap())
    }

    pub fn with_interpolation(mut self, rule: Interpolation) -> Self {
        self.interpolation = rule;
        self
    }

    pub fn eval(&self, u: f64) -> Result<f64> {
        let (lo, hi) = self.domain();
        if !(u >= lo && u <= hi) {
            return Err(domain(format!("u={u} outside [{lo}, {hi}]")));
        }
        let i = self.nodes.partition_point(|&x| x <= u) - 1;
        if self.nodes[i] == u {
            return Ok(self.values[i]);
        }
        // Cell [i, i+1] lies inside one band; find that band's node range.
        let band_len = self.per_band + 1;
        let band = i / band_len;
        let first = band * band_len;
        let last = first + self.per_band;
        match self.interpolation {
            Interpolation::Linear => {
                let w = (u - self.nodes[i]) / (self.nodes[i + 1] - self.nodes[i]);
                Ok(self.values[i] + w * (self.values[i + 1] - self.values[i]))
            }
            Interpolation::Quadratic => {
                let a = if i + 2 <= last { i } else { (i - 1).max(first) };
                let (x0, x1, x2) = (self.nodes[a], self.nodes[a + 1], self.nodes[a + 2]);
                let (y0, y1, y2) = (self.values[a], self.values[a + 1], self.values[a + 2]);
                let l0 = (u - x1) * (u - x2) / ((x0 - x1) * (x0 - x2));
                let l1 = (u - x0) * (u - x2) / ((x1 - x0) * (x1 - x2));
                let l2 = (u - x0) * (u - x1) / ((x2 - x0) * (x2 - x1));
                Ok(y0 * l0 + y1 * l1 + y2 * l2)
            }
        }
    }

    /// Writes `node,u,value` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "node,u,value")?;
        for (i, (u, v)) in self.nodes.iter().zip(&self.values).enumerate() {
            writeln!(out, "{i},{u:.17e},{v:.17e}")?;
        }
        Ok(())
    }
}

/// Solved `W` and `M` for one `(r, f)`.
#[derive(Debug, Clone)]
pub struct EmsSolution {
    pub r: f64,
    pub f: u32,
    /// Offsets per band, so each band carries `m + 1` nodes.
    pub m: usize,
    psi_w: Vec<f64>,
    psi_m: Vec<f64>,
    /// Largest row sum of the discretized kernel.
    pub kernel_norm: f64,
    /// `F_C(rf)`, the operator-norm bound of the continuous kernel.
    pub escape_bound: f64,
}

impl EmsSolution {
    pub fn solve(ch: &ChannelSpec, r: f64, f: u32, nodes: usize) -> Result<Self> {
        if !(r > 0.0 && r.is_finite()) || f == 0 {
            return Err(domain(format!("need r > 0 and f >= 1, got r={r}, f={f}")));
        }
        let law = ch.capacity_law();
        let top = r * f as f64;
        let escape = law.cdf(top);
        if escape >= 1.0 - REJECT_MASS {
            return Err(domain(format!(
                "F_C(rf) = {escape} at r={r}, f={f}: transmissions would never end"
            )));
        }
        let fu = f as usize;
        let m = (nodes / fu).max(2);
        let h = r / m as f64;
        let p: Vec<f64> = (0..=fu * m).map(|i| law.pdf(i as f64 * h)).collect();

        // Full-band sums over q = f − j ∈ 1..f−1 of P[q·m + d], d ∈ [−m, m],
        // plain and weighted by q.
        let mut full = vec![0.0; 2 * m + 1];
        let mut full_q = vec![0.0; 2 * m + 1];
        for q in 1..fu {
            for (di, d) in (-(m as isize)..=m as isize).enumerate() {
                let v = p[((q * m) as isize + d) as usize];
                full[di] += v;
                full_q[di] += q as f64 * v;
            }
        }
        let n = m + 1;
        let tw = |l: usize, end: usize| if l == 0 || l == end { 0.5 * h } else { h };
        let mut a = DMatrix::<f64>::identity(n, n);
        let mut b = DMatrix::<f64>::zeros(n, 2);
        let mut kernel_norm = 0.0f64;
        for k in 0..n {
            let mut row = 0.0;
            let (mut bw, mut bm) = (0.0, 0.0);
            for l in 0..n {
                let di = (k as isize - l as isize + m as isize) as usize;
                let w = tw(l, m);
                let mut kv = w * full[di];
                bw += w * r * full_q[di];
                bm += w * full[di];
                if l <= k && k > 0 {
                    let part = tw(l, k) * p[k - l];
                    kv += part;
                    bm += part;
                }
                a[(k, l)] -= kv;
                row += kv;
            }
            b[(k, 0)] = bw;
            b[(k, 1)] = bm;
            kernel_norm = kernel_norm.max(row);
        }
        let lu = a.lu();
        let x = lu
            .solve(&b)
            .ok_or_else(|| numeric(format!("singular EMS system at r={r}, f={f}")))?;
        let psi_w: Vec<f64> = x.column(0).iter().copied().collect();
        let psi_m: Vec<f64> = x.column(1).iter().copied().collect();
        if psi_w.iter().chain(&psi_m).any(|v| !v.is_finite()) {
            return Err(numeric(format!("non-finite EMS solution at r={r}, f={f}")));
        }
        Ok(EmsSolution { r, f, m, psi_w, psi_m, kernel_norm, escape_bound: escape })
    }

    fn gridded(&self, psi: &[f64], source: impl Fn(usize) -> f64) -> GriddedFunction {
        let fu = self.f as usize;
        let h = self.r / self.m as f64;
        let mut nodes = Vec::with_capacity(fu * (self.m + 1));
        let mut values = Vec::with_capacity(fu * (self.m + 1));
        for j in 1..=fu {
            let base = (j - 1) as f64 * self.r;
            for (k, &ps) in psi.iter().enumerate() {
                let u = if k == 0 {
                    if j == 1 {
                        0.0
                    } else {
                        base.next_up()
                    }
                } else if k == self.m {
                    j as f64 * self.r
                } else {
                    base + k as f64 * h
                };
                nodes.push(u);
                values.push(source(j) + ps);
            }
        }
        GriddedFunction { nodes, values, per_band: self.m, interpolation: Interpolation::Linear }
    }

    /// Expected reward still to come from unresolved information `u`.
    pub fn w(&self) -> GriddedFunction {
        let (r, f) = (self.r, self.f as usize);
        self.gridded(&self.psi_w, |j| r * (f - j) as f64)
    }

    /// Expected number of slots still to come from unresolved information `u`.
    pub fn m_fn(&self) -> GriddedFunction {
        self.gridded(&self.psi_m, |_| 1.0)
    }

    /// `(η, T)` of the protocol.
    pub fn metrics(&self) -> TradeoffPoint {
        let top = self.r * self.f as f64;
        let t = 1.0 + self.psi_m[self.m];
        TradeoffPoint {
            protocol: format!("ems{}", self.f + 1),
            avg_decoding_time: t,
            throughput: (top + self.psi_w[self.m]) / t,
            param: ProtocolParam::Ems { r: self.r, f: self.f },
        }
    }

    /// Largest absolute residual of both integral equations at the given
    /// probe points, with the solution evaluated through `rule` and the
    /// integrals done cell by cell with an 8-point Gauss–Legendre rule.
    pub fn residual(&self, ch: &ChannelSpec, probes: &[f64], rule: Interpolation) -> Result<f64> {
        let law = ch.capacity_law();
        let gl = gauss_legendre(8);
        let mut worst = 0.0f64;
        for (func, src) in [(self.w(), true), (self.m_fn(), false)] {
            let func = func.with_interpolation(rule);
            let nodes = func.nodes().to_vec();
            for &u in probes {
                let rv = composite_rate_feedback(u, self.r, self.f)?;
                let s = u + rv;
                let mut integral = 0.0;
                for c in 0..nodes.len() - 1 {
                    let (a, b) = (nodes[c], nodes[c + 1].min(s));
                    if a >= s {
                        break;
                    }
                    if b - a <= 1e-300 {
                        continue;
                    }
                    integral += gl.apply(a, b, |v| law.pdf(s - v) * func.eval(v).unwrap_or(0.0));
                }
                let lhs = func.eval(u)?;
                let source = if src { rv } else { 1.0 };
                worst = worst.max((lhs - source - integral).abs());
            }
        }
        Ok(worst)
    }

    /// Writes the kernels as CSV: `function,node,u,value`.
    pub fn write_kernels_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "function,node,u,value")?;
        for (name, g) in [("W", self.w()), ("M", self.m_fn())] {
            for (i, (u, v)) in g.nodes().iter().zip(g.values()).enumerate() {
                writeln!(out, "{name},{i},{u:.17e},{v:.17e}")?;
            }
        }
        Ok(())
    }
}

/// `W` on the default grid.
pub fn solve_w(r: f64, f: u32, ch: &ChannelSpec) -> Result<GriddedFunction> {
    Ok(EmsSolution::solve(ch, r, f, DEFAULT_NODES)?.w())
}

/// `M` on the default grid.
pub fn solve_m(r: f64, f: u32, ch: &ChannelSpec) -> Result<GriddedFunction> {
    Ok(EmsSolution::solve(ch, r, f, DEFAULT_NODES)?.m_fn())
}

/// `(η, T)` of EMS with step `r` and `f + 1` feedback symbols.
pub fn ems_metrics(r: f64, f: u32, ch: &ChannelSpec) -> Result<TradeoffPoint> {
    Ok(EmsSolution::solve(ch, r, f, DEFAULT_NODES)?.metrics())
}

/// Tolerance on `T` when tuning `r` to a target decoding time.
pub const TARGET_T_TOL: f64 = 1e-4;

/// Finds the step `r` at which EMS reaches mean decoding time `t`.
pub fn ems_for_target(ch: &ChannelSpec, f: u32, t: f64, nodes: usize) -> Result<EmsSolution> {
    if !(t > 1.0) {
        return Err(domain(format!("target decoding time must exceed 1, got {t}")));
    }
    if f == 0 {
        return Err(domain("f must be at least 1"));
    }
    let law = ch.capacity_law();
    // Largest admissible step, then a coarse bracket on T(r).
    let r_max = law.upper_limit() / f as f64;
    let coarse = (nodes / 4).max(64 * f as usize);
    let t_of = |r: f64, n: usize| -> Result<f64> { Ok(EmsSolution::solve(ch, r, f, n)?.metrics().avg_decoding_time) };
    let mut lo = 1e-3;
    let mut hi = law.quantile(0.5)? / f as f64;
    while t_of(hi, coarse)? < t {
        lo = hi;
        hi *= 1.5;
        if hi >= r_max {
            return Err(numeric(format!("no EMS step reaches T={t}")));
        }
    }
    let r0 = bracketed_root(|r| Ok(t_of(r, coarse)? - t), lo, hi, 1e-9, TARGET_T_TOL * 0.1)?;
    // Polish on the full grid from a tight bracket around the coarse root.
    let mut a = r0 * (1.0 - 1e-3);
    let mut b = r0 * (1.0 + 1e-3);
    let mut widen = 0;
    while (t_of(a, nodes)? - t) * (t_of(b, nodes)? - t) > 0.0 {
        a = (a * 0.98).max(lo);
        b = (b * 1.02).min(hi.max(b));
        widen += 1;
        if widen > 50 {
            return Err(numeric(format!("EMS target search lost its bracket at T={t}")));
        }
    }
    let r = bracketed_root(|r| Ok(t_of(r, nodes)? - t), a, b, 1e-12, TARGET_T_TOL * 0.01)?;
    EmsSolution::solve(ch, r, f, nodes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{ergodic_capacity, harq_expected_tau};

    fn ray(g: f64) -> ChannelSpec {
        ChannelSpec::rayleigh(g).unwrap()
    }

    #[test]
    fn composite_examples() {
        let r = 0.7;
        assert_eq!(composite_rate_feedback(0.0, r, 3).unwrap(), 2.0 * r);
        assert_eq!(composite_rate_feedback(3.0 * r, r, 3).unwrap(), 0.0);
        assert_eq!(composite_rate_feedback(0.3 * r, r, 3).unwrap(), 2.0 * r);
        assert_eq!(composite_rate_feedback(1.5 * r, r, 3).unwrap(), r);
        assert!(composite_rate_feedback(-0.1, r, 3).is_err());
        assert!(composite_rate_feedback(3.1 * r, r, 3).is_err());
    }

    #[test]
    fn single_step_w_vanishes() {
        let ch = ray(10.0);
        let sol = EmsSolution::solve(&ch, 1.2, 1, 512).unwrap();
        assert!(sol.w().values().iter().all(|v| v.abs() < 1e-10));
        assert!(sol.residual(&ch, &[0.1, 0.55, 1.1], Interpolation::Linear).unwrap() < 1e-5);
    }

    #[test]
    fn kernels_are_positive_and_certified() {
        let ch = ray(10.0);
        let sol = EmsSolution::solve(&ch, 0.9, 3, 768).unwrap();
        assert!(sol.w().values().iter().all(|&v| v >= 0.0));
        assert!(sol.m_fn().values().iter().all(|&v| v >= 1.0));
        assert!(sol.kernel_norm <= sol.escape_bound + 1e-4);
        let g = sol.w();
        let n = g.nodes();
        assert!(n.windows(2).all(|w| w[1] > w[0]));
        for (i, &u) in n.iter().enumerate() {
            assert_eq!(g.eval(u).unwrap(), g.values()[i]);
        }
    }

    #[test]
    fn single_step_reduces_to_harq() {
        let ch = ray(10.0);
        let r = 1.8;
        let p = EmsSolution::solve(&ch, r, 1, 1024).unwrap().metrics();
        let tau = harq_expected_tau(&ch, r).unwrap();
        assert!(((p.avg_decoding_time - tau) / tau).abs() < 1e-4);
        assert!(((p.throughput - r / tau) / (r / tau)).abs() < 1e-4);
    }

    #[test]
    fn rejects_never_ending_parameters() {
        let ch = ray(1.0);
        assert!(EmsSolution::solve(&ch, 40.0, 2, 256).is_err());
    }

    #[test]
    fn throughput_below_ergodic_and_t_monotone() {
        let ch = ray(10.0);
        let c = ergodic_capacity(&ch).unwrap();
        let mut prev_t = 1.0;
        for i in 1..8 {
            let r = 0.25 * i as f64;
            let p = EmsSolution::solve(&ch, r, 2, 512).unwrap().metrics();
            assert!(p.throughput <= c + 1e-6);
            assert!(p.avg_decoding_time >= prev_t);
            prev_t = p.avg_decoding_time;
        }
    }

    #[test]
    fn csv_dump_has_header_and_rows() {
        let ch = ray(10.0);
        let sol = EmsSolution::solve(&ch, 0.8, 2, 64).unwrap();
        let mut buf = Vec::new();
        sol.write_kernels_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("function,node,u,value\n"));
        assert_eq!(text.lines().count(), 1 + 2 * 2 * 33);
    }
}
