//! Single-server queue with Poisson arrivals and exponential service, used
//! to validate the engine against the closed-form M/M/1 mean wait.

use std::cell::Cell;
use std::rc::Rc;

use trajsim_core::{
    mm1_wq, queueing_delay, Environment, Exponential, Generator, MonitorStore, ResourceSpec, Result,
    SimError, Trajectory,
};

use crate::{CaseOutput, SummaryTable};

pub const SERVER: &str = "server";

#[derive(Debug, Clone, PartialEq)]
pub struct Mm1Config {
    pub lambda: f64,
    pub mu: f64,
    /// Number of customers generated; the run ends when all have left.
    pub arrivals: u64,
    pub seed: u64,
}

impl Default for Mm1Config {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            mu: 2.0,
            arrivals: 1_000_000,
            seed: 1,
        }
    }
}

impl Mm1Config {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite() && self.mu > 0.0 && self.mu.is_finite()) {
            return Err(SimError::Config(format!(
                "lambda and mu must be positive, got {} and {}",
                self.lambda, self.mu
            )));
        }
        if self.arrivals == 0 {
            return Err(SimError::Config("arrivals must be at least 1".into()));
        }
        mm1_wq(self.lambda, self.mu).map(|_| ())
    }
}

pub fn build_mm1(cfg: &Mm1Config) -> Result<Environment> {
    cfg.validate()?;
    let mut env = Environment::new("mm1", cfg.seed);
    env.add_resource(ResourceSpec::new(SERVER, 1))?;
    let service = Exponential::new(cfg.mu)?;
    let traj = Trajectory::new("customer")
        .seize(SERVER, 1)
        .timeout_fn(move |ctx| service.sample(ctx.rng()))
        .release(SERVER, 1);
    let gap = Exponential::new(cfg.lambda)?;
    let left = Rc::new(Cell::new(cfg.arrivals));
    env.add_generator(Generator::new("customer", traj, move |s| {
        if left.get() == 0 {
            return -1.0;
        }
        left.set(left.get() - 1);
        gap.sample(s)
    }))?;
    Ok(env)
}

/// Empirical mean wait next to the closed-form value.
pub fn summarize(monitor: &MonitorStore, cfg: &Mm1Config) -> Result<SummaryTable> {
    let waits = queueing_delay(&monitor.visits_of(SERVER), false)?;
    let mean = trajsim_core::stats::mean(&waits).unwrap_or(f64::NAN);
    let mut t = SummaryTable::new(["resource"]);
    t.push(&[SERVER], "count", waits.len() as f64);
    t.push(&[SERVER], "wq_mean", mean);
    t.push(&[SERVER], "wq_oracle", mm1_wq(cfg.lambda, cfg.mu)?);
    Ok(t)
}

pub fn run_case(cfg: &Mm1Config) -> Result<CaseOutput> {
    let mut env = build_mm1(cfg)?;
    let report = env.run(f64::INFINITY)?;
    let monitor = env.finalize();
    let summary = summarize(&monitor, cfg)?;
    Ok(CaseOutput {
        monitor,
        events: report.events,
        summary,
    })
}
