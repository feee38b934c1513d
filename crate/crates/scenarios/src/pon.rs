//! Upstream channel of a TDM-PON shared by residential ONUs and either a
//! small cell or a radio head (RRH) carrying MAC-PHY split fronthaul.
//!
//! Each source is a token-bucket resource whose capacity, in bytes, is
//! raised by the OLT at the start of the source's transmission window.
//! Packets seize their bucket, consume the tokens and then queue for the
//! shared upstream link. The OLT is a single worker looping forever over
//! the sources in round-robin order; every source reports its queued bytes
//! at the end of its window and is granted them (up to the per-cycle limit
//! for residential ONUs) in the next cycle. In RRH mode the fronthaul owns
//! fixed periodic reservations of the link and ONU windows are placed in
//! the gaps between them.

use std::cell::{Cell, RefCell};
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;
use std::str::FromStr;

use trajsim_core::rng::{sample_trimodal, BurstLength};
use trajsim_core::{
    boxplot, Environment, Exponential, Generator, MonitorLevel, MonitorStore, Repeat, ResourceRef,
    ResourceSpec, Result, SelectPolicy, SimError, Trajectory, Value, wait_time,
};

use crate::{CaseOutput, SummaryTable};

pub const LINK: &str = "link";
pub const CELL: &str = "cell";
pub const OLT: &str = "olt";
pub const RRH: &str = "rrh";
/// Attribute holding the fronthaul wait for the link at each reservation.
pub const FH_WAIT: &str = "fh_wait";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PonMode {
    SmallCell,
    Rrh,
}

impl PonMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            PonMode::SmallCell => "smallcell",
            PonMode::Rrh => "rrh",
        }
    }
}

impl fmt::Display for PonMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PonMode {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "smallcell" => Ok(PonMode::SmallCell),
            "rrh" => Ok(PonMode::Rrh),
            other => Err(SimError::Config(format!(
                "unknown PON mode `{other}` (expected smallcell or rrh)"
            ))),
        }
    }
}

/// Formats a grant limit, `None` being unlimited.
pub fn limit_label(limit: Option<u64>) -> String {
    limit.map_or_else(|| "Inf".to_owned(), |l| l.to_string())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PonConfig {
    pub mode: PonMode,
    pub upstream_rate_bps: f64,
    pub n_onus: usize,
    pub onu_rate_bps: f64,
    /// Small cell offered rate; only valid in small-cell mode.
    pub cell_rate_bps: Option<f64>,
    /// Per-cycle grant limit for residential ONUs; `None` is unlimited.
    pub grant_limit_bytes: Option<u64>,
    pub guard_time_s: f64,
    pub rrh_burst_bytes: u64,
    pub rrh_period_s: f64,
    pub mean_burst_len: f64,
    pub horizon_s: f64,
    pub seed: u64,
    /// Record resource rows for the link (two per packet).
    pub monitor_link: bool,
}

impl PonConfig {
    pub fn smallcell(limit: Option<u64>) -> Self {
        Self {
            mode: PonMode::SmallCell,
            upstream_rate_bps: 1.25e9,
            n_onus: 31,
            onu_rate_bps: 20e6,
            cell_rate_bps: Some(150e6),
            grant_limit_bytes: limit,
            guard_time_s: 1e-6,
            rrh_burst_bytes: 6000,
            rrh_period_s: 66.67e-6,
            mean_burst_len: 20.0,
            horizon_s: 2.0,
            seed: 1,
            monitor_link: false,
        }
    }

    pub fn rrh(limit: Option<u64>) -> Self {
        Self {
            mode: PonMode::Rrh,
            n_onus: 7,
            cell_rate_bps: None,
            ..Self::smallcell(limit)
        }
    }

    pub fn for_mode(mode: PonMode, limit: Option<u64>) -> Self {
        match mode {
            PonMode::SmallCell => Self::smallcell(limit),
            PonMode::Rrh => Self::rrh(limit),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SimError::Config(m));
        if self.mode == PonMode::Rrh && self.cell_rate_bps.is_some() {
            return bad("cell_rate_bps is only meaningful in smallcell mode".into());
        }
        if self.n_onus == 0 && self.cell_rate_bps.is_none() {
            return bad("the PON needs at least one traffic source".into());
        }
        if self.grant_limit_bytes == Some(0) {
            return bad("grant limit must be positive (use Inf for no limit)".into());
        }
        for (name, v) in [
            ("upstream_rate_bps", self.upstream_rate_bps),
            ("onu_rate_bps", self.onu_rate_bps),
            ("rrh_period_s", self.rrh_period_s),
            ("mean_burst_len", self.mean_burst_len),
            ("horizon_s", self.horizon_s),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.guard_time_s >= 0.0) {
            return bad(format!("guard_time_s must be non-negative, got {}", self.guard_time_s));
        }
        if let Some(c) = self.cell_rate_bps {
            if !(c > 0.0 && c.is_finite()) {
                return bad(format!("cell_rate_bps must be positive, got {c}"));
            }
        }
        if self.mode == PonMode::Rrh && self.rrh_reservation_s() + 2.0 * self.guard_time_s >= self.rrh_period_s {
            return bad("fronthaul reservation leaves no room for the ONUs".into());
        }
        if self.offered_load() >= 1.0 {
            return Err(SimError::Unstable {
                load: self.offered_load(),
            });
        }
        Ok(())
    }

    /// Link time taken by one fronthaul symbol.
    pub fn rrh_reservation_s(&self) -> f64 {
        self.rrh_burst_bytes as f64 * 8.0 / self.upstream_rate_bps
    }

    pub fn rrh_rate_bps(&self) -> f64 {
        match self.mode {
            PonMode::Rrh => self.rrh_burst_bytes as f64 * 8.0 / self.rrh_period_s,
            PonMode::SmallCell => 0.0,
        }
    }

    /// Nominal offered load on the upstream link.
    pub fn offered_load(&self) -> f64 {
        let sources = self.n_onus as f64 * self.onu_rate_bps + self.cell_rate_bps.unwrap_or(0.0);
        (sources + self.rrh_rate_bps()) / self.upstream_rate_bps
    }

    /// Bursts per second for a source of `rate_bps`.
    pub fn burst_rate(&self, rate_bps: f64) -> Result<f64> {
        Ok(rate_bps / (8.0 * BurstLength::new(self.mean_burst_len)?.mean_bytes()))
    }

    /// Token-bucket resource names, in polling order.
    pub fn sources(&self) -> Vec<String> {
        let mut s: Vec<String> = (0..self.n_onus).map(|i| format!("onu{i}")).collect();
        if self.cell_rate_bps.is_some() {
            s.push(CELL.to_owned());
        }
        s
    }
}

/// The transmission window currently being served.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub source: usize,
    pub start: f64,
    pub grant: u64,
}

/// IPACT-like allocation state: round-robin windows separated by guard
/// times, optionally placed around periodic fronthaul reservations.
#[derive(Debug, Clone)]
pub struct Dba {
    rate_bps: f64,
    guard: f64,
    limit: Option<u64>,
    exempt: Vec<bool>,
    /// `(period, duration)` of fronthaul reservations starting at t = 0.
    reservation: Option<(f64, f64)>,
    prev_end: f64,
    requests: Vec<u64>,
    current: Option<Window>,
    used: u64,
}

impl Dba {
    /// `exempt[i]` marks sources that are always granted their full request.
    pub fn new(rate_bps: f64, guard: f64, limit: Option<u64>, exempt: Vec<bool>) -> Self {
        let n = exempt.len();
        Self {
            rate_bps,
            guard,
            limit,
            exempt,
            reservation: None,
            prev_end: f64::NEG_INFINITY,
            requests: vec![0; n],
            current: None,
            used: 0,
        }
    }

    pub fn with_reservations(mut self, period: f64, duration: f64) -> Self {
        self.reservation = Some((period, duration));
        self
    }

    pub fn request(&self, source: usize) -> u64 {
        self.requests[source]
    }

    /// Stores the bytes a source reported at the end of its window.
    pub fn report(&mut self, source: usize, bytes: u64) {
        self.requests[source] = bytes;
    }

    pub fn current(&self) -> Option<Window> {
        self.current
    }

    fn bytes_in(&self, seconds: f64) -> u64 {
        (seconds * self.rate_bps / 8.0).max(0.0).floor() as u64
    }

    /// Places the next window for `source`: it starts one guard time after
    /// the previous window (or now, if later) and carries
    /// `min(request, limit)` bytes, or the full request for exempt sources.
    pub fn next_window(&mut self, now: f64, source: usize, request: u64) -> (f64, u64) {
        let mut start = now.max(self.prev_end + self.guard);
        let mut grant = match self.limit {
            Some(l) if !self.exempt[source] => request.min(l),
            _ => request,
        };
        if let Some((period, duration)) = self.reservation {
            let mut k = (start / period).floor();
            loop {
                let free_from = k * period + duration + self.guard;
                let fresh = start <= free_from;
                if fresh {
                    start = free_from;
                }
                let free_to = (k + 1.0) * period - self.guard;
                if start >= free_to + self.guard {
                    // Past this gap entirely (inside the next reservation).
                    k += 1.0;
                    continue;
                }
                let room = self.bytes_in(free_to - start);
                if grant <= room {
                    break;
                }
                if fresh {
                    grant = room;
                    break;
                }
                k += 1.0;
                start = k * period + duration + self.guard;
            }
        }
        self.current = Some(Window {
            source,
            start,
            grant,
        });
        (start, grant)
    }

    /// Ends the current window after `used` bytes were sent; returns the
    /// time its last bit leaves the ONU.
    pub fn close_window(&mut self, used: u64) -> f64 {
        let w = self.current.expect("an open window");
        self.used = used;
        let end = w.start + used as f64 * 8.0 / self.rate_bps;
        self.prev_end = end;
        end
    }

    pub fn window_end(&self) -> f64 {
        self.prev_end
    }
}

/// Bytes offered by every source, filled in while the model runs.
#[derive(Debug, Default)]
pub struct OfferedTraffic {
    pub bytes: Vec<Cell<u64>>,
    pub fh_bytes: Cell<u64>,
}

/// A built PON model plus the shared counters its closures update.
pub struct PonModel {
    pub env: Environment,
    pub offered: Rc<OfferedTraffic>,
    pub dba: Rc<RefCell<Dba>>,
}

impl fmt::Debug for PonModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PonModel").field("env", &self.env).finish_non_exhaustive()
    }
}

fn packet_trajectory(src: &str, rate_bps: f64, counter: Rc<OfferedTraffic>, idx: usize) -> Trajectory {
    let bucket = src.to_owned();
    let size = |ctx: &mut trajsim_core::ActivityCtx<'_>| ctx.attr_or("size", 0.0);
    Trajectory::new(src)
        .set_attribute(
            "size",
            Value::func(move |ctx| {
                let p = sample_trimodal(ctx.rng());
                let c = &counter.bytes[idx];
                c.set(c.get() + u64::from(p.size));
                f64::from(p.size)
            }),
        )
        .seize(src, Value::func(size))
        .add_capacity(
            src,
            Value::func(move |ctx| {
                let cap = ctx.resource(&bucket).map_or(0, |r| r.capacity()) as f64;
                -size(ctx).min(cap)
            }),
        )
        .release(src, Value::func(size))
        .seize(LINK, 1)
        .timeout_fn(move |ctx| size(ctx) * 8.0 / rate_bps)
        .release(LINK, 1)
}

fn olt_trajectory(sources: &[String], dba: &Rc<RefCell<Dba>>) -> Trajectory {
    let index: Rc<HashMap<String, usize>> =
        Rc::new(sources.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect());
    let selected_idx = move |ctx: &trajsim_core::ActivityCtx<'_>| -> usize {
        let name = ctx.selected().expect("OLT selected a source").name();
        index[name]
    };
    let (d1, d2, d3, d4, d5) = (dba.clone(), dba.clone(), dba.clone(), dba.clone(), dba.clone());
    let idx1 = selected_idx.clone();
    Trajectory::new(OLT)
        .select(sources.iter().map(String::as_str), SelectPolicy::RoundRobin)
        .timeout_fn(move |ctx| {
            let i = idx1(ctx);
            let mut d = d1.borrow_mut();
            let req = d.request(i);
            let (start, _) = d.next_window(ctx.now(), i, req);
            start - ctx.now()
        })
        .set_capacity(
            ResourceRef::Selected,
            Value::func(move |_| d2.borrow().current().map_or(0, |w| w.grant) as f64),
        )
        // Let the granted packets take their tokens.
        .timeout(0.0)
        .set_capacity(
            ResourceRef::Selected,
            Value::func(move |ctx| {
                let left = ctx.selected().map_or(0, |r| r.capacity());
                let mut d = d3.borrow_mut();
                let grant = d.current().map_or(0, |w| w.grant);
                d.close_window(grant.saturating_sub(left));
                0.0
            }),
        )
        .timeout_fn(move |ctx| (d4.borrow().window_end() - ctx.now()).max(0.0))
        // Gated report: the bytes still queued when the window closes.
        .set_attribute(
            "report",
            Value::func(move |ctx| {
                let i = selected_idx(ctx);
                let queued = ctx.selected().map_or(0, |r| r.queue_count());
                d5.borrow_mut().report(i, queued);
                queued as f64
            }),
        )
        .rollback(7, Repeat::Forever)
}

fn rrh_trajectory(cfg: &PonConfig, offered: Rc<OfferedTraffic>) -> Trajectory {
    let period = cfg.rrh_period_s;
    let burst = cfg.rrh_burst_bytes;
    Trajectory::new(RRH)
        .set_attribute(
            "req",
            Value::func(move |ctx| {
                offered.fh_bytes.set(offered.fh_bytes.get() + burst);
                ctx.now()
            }),
        )
        .seize(LINK, 1)
        .set_attribute(FH_WAIT, Value::func(|ctx| ctx.now() - ctx.attr_or("req", 0.0)))
        .timeout(cfg.rrh_reservation_s())
        .release(LINK, 1)
        .add_attribute("k", 1.0)
        .timeout_fn(move |ctx| ctx.attr_or("k", 0.0) * period - ctx.now())
        .rollback(7, Repeat::Forever)
}

/// Builds the PON environment for one case.
pub fn build_pon(cfg: &PonConfig) -> Result<PonModel> {
    cfg.validate()?;
    let mut env = Environment::new(
        format!("pon-{}-{}", cfg.mode, limit_label(cfg.grant_limit_bytes)),
        cfg.seed,
    );
    let sources = cfg.sources();
    env.add_resource(ResourceSpec::new(LINK, 1).monitored(cfg.monitor_link))?;
    for s in &sources {
        env.add_resource(ResourceSpec::new(s.as_str(), 0).monitored(false))?;
    }
    let exempt: Vec<bool> = sources.iter().map(|s| s == CELL).collect();
    let mut dba = Dba::new(cfg.upstream_rate_bps, cfg.guard_time_s, cfg.grant_limit_bytes, exempt);
    if cfg.mode == PonMode::Rrh {
        dba = dba.with_reservations(cfg.rrh_period_s, cfg.rrh_reservation_s());
    }
    let dba = Rc::new(RefCell::new(dba));
    let offered = Rc::new(OfferedTraffic {
        bytes: sources.iter().map(|_| Cell::new(0)).collect(),
        fh_bytes: Cell::new(0),
    });

    if cfg.mode == PonMode::Rrh {
        env.add_generator(
            Generator::new(RRH, rrh_trajectory(cfg, offered.clone()), |_| -1.0)
                .initial_batch(1)
                .priority(1)
                .monitor_keys([FH_WAIT]),
        )?;
    }
    env.add_generator(
        Generator::new(OLT, olt_trajectory(&sources, &dba), |_| -1.0)
            .initial_batch(1)
            .monitor(MonitorLevel::Off),
    )?;
    for (i, s) in sources.iter().enumerate() {
        let rate = if s == CELL {
            cfg.cell_rate_bps.expect("cell source implies a cell rate")
        } else {
            cfg.onu_rate_bps
        };
        let burst = BurstLength::new(cfg.mean_burst_len)?;
        let gap = Exponential::new(cfg.burst_rate(rate)?)?;
        let mut left = 0u64;
        let interarrival = move |st: &mut trajsim_core::RngStream| {
            if left > 0 {
                left -= 1;
                0.0
            } else {
                left = burst.sample(st) - 1;
                gap.sample(st)
            }
        };
        let traj = packet_trajectory(s, cfg.upstream_rate_bps, offered.clone(), i);
        env.add_generator(Generator::new(format!("{s}_"), traj, interarrival))?;
    }
    Ok(PonModel { env, offered, dba })
}

/// Measured offered load of a finished run.
pub fn measured_load(cfg: &PonConfig, offered: &OfferedTraffic, duration: f64) -> f64 {
    let bytes: u64 = offered.bytes.iter().map(Cell::get).sum::<u64>() + offered.fh_bytes.get();
    bytes as f64 * 8.0 / (cfg.upstream_rate_bps * duration)
}

pub fn run_case(cfg: &PonConfig) -> Result<CaseOutput> {
    let mut model = build_pon(cfg)?;
    let report = model.env.run(cfg.horizon_s)?;
    let load = measured_load(cfg, &model.offered, cfg.horizon_s);
    let monitor = model.env.finalize();
    let mut summary = summarize(&monitor, cfg.grant_limit_bytes)?;
    summary.push(&["all", &limit_label(cfg.grant_limit_bytes)], "offered_load", load);
    Ok(CaseOutput {
        monitor,
        events: report.events,
        summary,
    })
}

/// Upstream queueing delays of one run, in seconds.
#[derive(Debug, Clone, Default)]
pub struct PonDelays {
    pub onu: Vec<f64>,
    pub cell: Vec<f64>,
    /// Wait of the fronthaul for the link at each reservation.
    pub fh: Vec<f64>,
    /// Bytes carried on the link (from transmission times).
    pub carried_bits_time: f64,
}

impl PonDelays {
    pub fn from_monitor(monitor: &MonitorStore) -> Self {
        let mut d = Self::default();
        for r in monitor.get_mon_arrivals(false) {
            if !r.finished {
                continue;
            }
            let wait = wait_time(r.start_time, r.end_time, r.activity_time);
            if r.name.starts_with("onu") {
                d.onu.push(wait);
            } else if r.name.starts_with(CELL) {
                d.cell.push(wait);
            } else {
                continue;
            }
            d.carried_bits_time += r.activity_time;
        }
        d.fh = monitor.attributes_with_key(FH_WAIT).iter().map(|a| a.value).collect();
        d
    }
}

/// Per source class: count, mean and boxplot of the delay from packet
/// arrival at the ONU to the start of its upstream transmission.
pub fn summarize(monitor: &MonitorStore, limit: Option<u64>) -> Result<SummaryTable> {
    let d = PonDelays::from_monitor(monitor);
    let lim = limit_label(limit);
    let mut t = SummaryTable::new(["source", "limit"]);
    for (name, xs) in [("onu", &d.onu), (CELL, &d.cell), ("fh", &d.fh)] {
        if xs.is_empty() && name != "onu" {
            continue;
        }
        t.push(&[name, &lim], "count", xs.len() as f64);
        if xs.is_empty() {
            continue;
        }
        t.push(&[name, &lim], "mean", trajsim_core::stats::mean(xs).unwrap_or(f64::NAN));
        t.push_boxplot(&[name, &lim], &boxplot(xs)?);
        if name == "fh" {
            t.push(&[name, &lim], "max", xs.iter().copied().fold(0.0, f64::max));
        }
    }
    Ok(t)
}
