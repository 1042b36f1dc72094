//! Protocols by name. Each entry knows how to reach a target mean decoding
//! time analytically and which slot policy realizes that point, so the sweep
//! runner treats all of them alike.

use std::collections::BTreeMap;

use crate::analysis::{brq_point, eta_harq_inr, ProtocolParam, TradeoffPoint};
use crate::channel::ChannelSpec;
use crate::error::{domain, Error, Result};
use crate::fredholm::{ems_for_target, EmsSolution, DEFAULT_NODES};
use crate::powerdp::{eta_harq_inr_p_with, DpOptions, ValueFunctionGrid};
use crate::protocols::RatePolicy;

/// Solver knobs shared by the registered protocols.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub fredholm_nodes: usize,
    pub dp: DpOptions,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { fredholm_nodes: DEFAULT_NODES, dp: DpOptions::default() }
    }
}

/// Intermediate objects worth dumping next to a sweep row.
#[derive(Debug, Clone)]
pub enum Artifact {
    Kernels(EmsSolution),
    Policy(ValueFunctionGrid),
}

/// An analytic operating point together with the policy that attains it.
#[derive(Debug, Clone)]
pub struct Solution {
    pub point: TradeoffPoint,
    pub policy: RatePolicy,
    pub artifacts: Vec<Artifact>,
}

pub trait Protocol: Send + Sync {
    fn name(&self) -> String;

    /// Operating point with mean decoding time `t`.
    fn solve(&self, ch: &ChannelSpec, t: f64) -> Result<Solution>;
}

pub struct Brq;

impl Protocol for Brq {
    fn name(&self) -> String {
        "brq".into()
    }

    fn solve(&self, ch: &ChannelSpec, t: f64) -> Result<Solution> {
        let point = brq_point(ch, t)?;
        let ProtocolParam::Threshold { h_t } = point.param else { unreachable!() };
        Ok(Solution { policy: RatePolicy::brq(h_t)?, point, artifacts: vec![] })
    }
}

/// EMS with `f` nonzero feedback symbols; its feedback cost is `f + 1`.
pub struct Ems {
    pub f: u32,
    pub nodes: usize,
}

impl Protocol for Ems {
    fn name(&self) -> String {
        format!("ems{}", self.f + 1)
    }

    fn solve(&self, ch: &ChannelSpec, t: f64) -> Result<Solution> {
        let sol = ems_for_target(ch, self.f, t, self.nodes)?;
        Ok(Solution { point: sol.metrics(), policy: RatePolicy::ems(sol.r, sol.f)?, artifacts: vec![Artifact::Kernels(sol)] })
    }
}

pub struct HarqInr;

impl Protocol for HarqInr {
    fn name(&self) -> String {
        "harq-inr".into()
    }

    fn solve(&self, ch: &ChannelSpec, t: f64) -> Result<Solution> {
        let point = eta_harq_inr(ch, t)?;
        Ok(Solution { policy: RatePolicy::harq_inr(point.param.scalar())?, point, artifacts: vec![] })
    }
}

pub struct HarqInrPower {
    pub dp: DpOptions,
}

impl Protocol for HarqInrPower {
    fn name(&self) -> String {
        "harq-inr-p".into()
    }

    fn solve(&self, ch: &ChannelSpec, t: f64) -> Result<Solution> {
        let (point, dual) = eta_harq_inr_p_with(t, ch, &self.dp)?;
        Ok(Solution { policy: dual.policy()?, point, artifacts: vec![Artifact::Policy(dual.grid)] })
    }
}

pub type Factory = fn(&SolverOptions) -> Box<dyn Protocol>;

/// Name to constructor table. Besides the fixed entries, any `ems<k>` with
/// `k ≥ 2` resolves to EMS with feedback cost `k`.
pub struct Registry {
    entries: BTreeMap<String, Factory>,
    options: SolverOptions,
}

impl Registry {
    pub fn empty(options: SolverOptions) -> Self {
        Registry { entries: BTreeMap::new(), options }
    }

    pub fn with_builtins(options: SolverOptions) -> Self {
        let mut r = Registry::empty(options);
        r.register("brq", |_| Box::new(Brq));
        r.register("harq-inr", |_| Box::new(HarqInr));
        r.register("harq-inr-p", |o| Box::new(HarqInrPower { dp: o.dp }));
        r.register("ems3", |o| Box::new(Ems { f: 2, nodes: o.fredholm_nodes }));
        r.register("ems4", |o| Box::new(Ems { f: 3, nodes: o.fredholm_nodes }));
        r
    }

    pub fn register(&mut self, name: &str, factory: Factory) {
        self.entries.insert(name.to_ascii_lowercase(), factory);
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.keys().cloned().collect()
    }

    pub fn options(&self) -> &SolverOptions {
        &self.options
    }

    pub fn get(&self, name: &str) -> Result<Box<dyn Protocol>> {
        let key = name.trim().to_ascii_lowercase();
        if let Some(f) = self.entries.get(&key) {
            return Ok(f(&self.options));
        }
        if let Some(k) = key.strip_prefix("ems").and_then(|s| s.parse::<u32>().ok()) {
            if k < 2 {
                return Err(domain(format!("EMS feedback cost must be at least 2, got {k}")));
            }
            return Ok(Box::new(Ems { f: k - 1, nodes: self.options.fredholm_nodes }));
        }
        Err(Error::Config(format!("unknown protocol '{name}' (known: {}, ems<k>)", self.names().join(", "))))
    }
}

impl Default for Registry {
    fn default() -> Self {
        Registry::with_builtins(SolverOptions::default())
    }
}
