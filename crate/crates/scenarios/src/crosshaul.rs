//! Fronthaul (FH) and backhaul (BH) traffic sharing N tandem crosshaul
//! packet forwarding elements (XPFEs).
//!
//! FH is a Poisson stream of 80-byte CPRI basic frames that crosses every
//! XPFE in order. Each XPFE also carries its own local Poisson BH stream
//! with trimodal packet sizes. Three scheduling policies are compared:
//! FIFO, strict priority for FH, and strict priority with preemption of BH.

use std::fmt;
use std::str::FromStr;

use trajsim_core::rng::{sample_trimodal, TRIMODAL_MEAN_BYTES, TRIMODAL_SIZES, TRIMODAL_WEIGHTS};
use trajsim_core::{
    boxplot, queueing_delay, wait_time, Environment, Exponential, Generator, MonitorStore, PreemptFate,
    ResourceSpec, Result, SimError, TrafficClass, Trajectory,
};

use crate::{CaseOutput, SummaryTable};

/// FH frame length in bits (80-byte CPRI basic frame).
pub const FH_FRAME_BITS: f64 = 640.0;

pub const FH_PREFIX: &str = "fh";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Policy {
    /// No service differentiation.
    Fifo,
    /// Non-preemptive strict priority for FH.
    Sp,
    /// Strict priority where FH evicts the BH packet in transmission.
    SpPreempt,
}

impl Policy {
    pub const ALL: [Policy; 3] = [Policy::Fifo, Policy::Sp, Policy::SpPreempt];

    pub fn as_str(&self) -> &'static str {
        match self {
            Policy::Fifo => "fifo",
            Policy::Sp => "sp",
            Policy::SpPreempt => "sp_preempt",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Policy {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fifo" => Ok(Policy::Fifo),
            "sp" => Ok(Policy::Sp),
            "sp_preempt" => Ok(Policy::SpPreempt),
            other => Err(SimError::Config(format!(
                "unknown crosshaul policy `{other}` (expected fifo, sp or sp_preempt)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct XhaulConfig {
    pub line_rate_bps: f64,
    pub total_load: f64,
    /// Fraction of the load carried by FH.
    pub fh_share: f64,
    pub n_xpfe: usize,
    pub policy: Policy,
    pub horizon_s: f64,
    pub seed: u64,
}

impl Default for XhaulConfig {
    fn default() -> Self {
        Self {
            line_rate_bps: 40e9,
            total_load: 0.75,
            fh_share: 0.5,
            n_xpfe: 1,
            policy: Policy::Fifo,
            // About 1.05 million FH frames at the default rates.
            horizon_s: 0.045,
            seed: 1,
        }
    }
}

impl XhaulConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SimError::Config(m));
        if !(self.total_load > 0.0 && self.total_load < 1.0) {
            return bad(format!("total_load must be in (0, 1), got {}", self.total_load));
        }
        if !(self.fh_share >= 0.0 && self.fh_share <= 1.0) {
            return bad(format!("fh_share must be in [0, 1], got {}", self.fh_share));
        }
        if !(self.line_rate_bps > 0.0 && self.line_rate_bps.is_finite()) {
            return bad(format!("line_rate_bps must be positive, got {}", self.line_rate_bps));
        }
        if self.n_xpfe == 0 {
            return bad("n_xpfe must be at least 1".into());
        }
        if !(self.horizon_s > 0.0 && self.horizon_s.is_finite()) {
            return bad(format!("horizon_s must be positive, got {}", self.horizon_s));
        }
        Ok(())
    }

    /// FH frames per second.
    pub fn fh_rate(&self) -> f64 {
        self.total_load * self.fh_share * self.line_rate_bps / FH_FRAME_BITS
    }

    /// BH packets per second at each XPFE.
    pub fn bh_rate(&self) -> f64 {
        self.total_load * (1.0 - self.fh_share) * self.line_rate_bps / (TRIMODAL_MEAN_BYTES * 8.0)
    }

    /// FH transmission time per hop.
    pub fn fh_service(&self) -> f64 {
        FH_FRAME_BITS / self.line_rate_bps
    }

    /// FH as a queueing class (deterministic service).
    pub fn fh_class(&self) -> Result<TrafficClass<f64>> {
        let prio = if self.policy == Policy::Fifo { 0 } else { 1 };
        TrafficClass::deterministic(self.fh_rate(), self.fh_service(), prio)
    }

    /// BH at one XPFE as a queueing class (trimodal service).
    pub fn bh_class(&self) -> Result<TrafficClass<f64>> {
        let law: Vec<(f64, f64)> = TRIMODAL_SIZES
            .iter()
            .zip(TRIMODAL_WEIGHTS)
            .map(|(&s, w)| (f64::from(w) / 12.0, f64::from(s) * 8.0 / self.line_rate_bps))
            .collect();
        TrafficClass::discrete(self.bh_rate(), &law, 0)
    }
}

pub fn xpfe_name(hop: usize) -> String {
    format!("xpfe{hop}")
}

pub fn bh_prefix(hop: usize) -> String {
    format!("bh{hop}_")
}

/// Builds the environment: N XPFEs, one FH generator crossing all of them
/// and one local BH generator per XPFE.
pub fn build_crosshaul(cfg: &XhaulConfig) -> Result<Environment> {
    cfg.validate()?;
    let mut env = Environment::new(format!("xhaul-{}-{}", cfg.policy, cfg.n_xpfe), cfg.seed);
    let preemptive = cfg.policy == Policy::SpPreempt;
    for hop in 1..=cfg.n_xpfe {
        env.add_resource(
            ResourceSpec::new(xpfe_name(hop), 1)
                .preemptive(preemptive)
                .preempt_fate(PreemptFate::Drop),
        )?;
    }

    let service = cfg.fh_service();
    let mut fh = Trajectory::new("fh_traffic");
    for hop in 1..=cfg.n_xpfe {
        let x = xpfe_name(hop);
        fh = fh.seize(x.as_str(), 1).timeout(service).release(x.as_str(), 1);
    }
    let fh_gap = Exponential::new(cfg.fh_rate())?;
    let fh_prio = if cfg.policy == Policy::Fifo { 0 } else { 1 };
    env.add_generator(
        Generator::new(FH_PREFIX, fh, move |s| fh_gap.sample(s))
            .priority(fh_prio)
            .preemptible(false),
    )?;

    if cfg.bh_rate() > 0.0 {
        let rate = cfg.line_rate_bps;
        for hop in 1..=cfg.n_xpfe {
            let x = xpfe_name(hop);
            let bh = Trajectory::new(format!("bh_traffic{hop}"))
                .seize(x.as_str(), 1)
                .timeout_fn(move |ctx| sample_trimodal(ctx.rng()).tx_time(rate))
                .release(x.as_str(), 1);
            let gap = Exponential::new(cfg.bh_rate())?;
            env.add_generator(
                Generator::new(bh_prefix(hop), bh, move |s| gap.sample(s))
                    .priority(0)
                    .preemptible(true),
            )?;
        }
    }
    Ok(env)
}

/// Builds and runs one case and summarizes it.
pub fn run_case(cfg: &XhaulConfig) -> Result<CaseOutput> {
    let mut env = build_crosshaul(cfg)?;
    let report = env.run(cfg.horizon_s)?;
    let monitor = env.finalize();
    let summary = summarize(&monitor, cfg.n_xpfe)?;
    Ok(CaseOutput {
        monitor,
        events: report.events,
        summary,
    })
}

/// Delay samples of one run, split by class and hop.
#[derive(Debug, Clone, Default)]
pub struct XhaulDelays {
    /// `fh_hop[h]`: FH waits at XPFE h+1.
    pub fh_hop: Vec<Vec<f64>>,
    /// `bh_hop[h]`: BH waits at XPFE h+1.
    pub bh_hop: Vec<Vec<f64>>,
    /// Accumulated FH wait over all XPFEs, one per finished FH frame.
    pub fh_total: Vec<f64>,
    /// BH packets evicted from a transmission line, per hop.
    pub bh_dropped: Vec<u64>,
}

impl XhaulDelays {
    pub fn from_monitor(monitor: &MonitorStore, n_xpfe: usize) -> Result<Self> {
        let mut out = Self::default();
        let lifecycle = monitor.get_mon_arrivals(false);
        // Arrivals cut by the end of the run are unfinished too; they all end
        // at the final clock value.
        let end = lifecycle.iter().map(|r| r.end_time).fold(0.0, f64::max);
        for hop in 1..=n_xpfe {
            let visits = monitor.visits_of(&xpfe_name(hop));
            let (fh, bh): (Vec<_>, Vec<_>) = visits.into_iter().partition(|r| r.name.starts_with(FH_PREFIX));
            out.bh_dropped.push(bh.iter().filter(|r| !r.finished && r.end_time < end).count() as u64);
            out.fh_hop.push(queueing_delay(&fh, false)?);
            out.bh_hop.push(queueing_delay(&bh, false)?);
        }
        out.fh_total = lifecycle
            .iter()
            .filter(|r| r.finished && r.name.starts_with(FH_PREFIX))
            .map(|r| wait_time(r.start_time, r.end_time, r.activity_time))
            .collect();
        Ok(out)
    }
}

fn mean(xs: &[f64]) -> f64 {
    trajsim_core::stats::mean(xs).unwrap_or(f64::NAN)
}

fn describe(table: &mut SummaryTable, groups: &[&str], xs: &[f64]) -> Result<()> {
    table.push(groups, "count", xs.len() as f64);
    if xs.is_empty() {
        return Ok(());
    }
    table.push(groups, "mean", mean(xs));
    table.push_boxplot(groups, &boxplot(xs)?);
    Ok(())
}

/// Per class and hop: count, mean and boxplot percentiles of the queueing
/// delay in seconds. Hop `all` is the FH delay accumulated over the path.
pub fn summarize(monitor: &MonitorStore, n_xpfe: usize) -> Result<SummaryTable> {
    let d = XhaulDelays::from_monitor(monitor, n_xpfe)?;
    let mut t = SummaryTable::new(["class", "hop"]);
    for hop in 0..n_xpfe {
        let h = (hop + 1).to_string();
        describe(&mut t, &["fh", &h], &d.fh_hop[hop])?;
        describe(&mut t, &["bh", &h], &d.bh_hop[hop])?;
        t.push(&["bh", &h], "dropped", d.bh_dropped[hop] as f64);
    }
    describe(&mut t, &["fh", "all"], &d.fh_total)?;
    Ok(t)
}
