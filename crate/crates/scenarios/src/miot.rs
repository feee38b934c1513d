//! Massive IoT: N NB-IoT smart meters woken every reading period by a
//! broadcast signal. Each one spreads its first random-access (RA) attempt
//! uniformly over a synchronization window, contends for one of the
//! preambles at the next random-access opportunity (RAO), and either
//! connects, backs off and retries, or drops the reading. The power level
//! of every device is kept in attribute `P`, so the energy per reading
//! follows from integrating the attribute trace.

use std::collections::HashMap;

use trajsim_core::{
    AttributeRecord, Environment, Generator, MonitorStore, Repeat, ResourceRef, ResourceSpec,
    Result, SelectPolicy, SimError, SubTrajectory, Trajectory,
};

use crate::{CaseOutput, SummaryTable};

pub const READING: &str = "reading";
pub const POWER: &str = "P";
pub const READINGS: &str = "readings";
pub const COLLISIONS: &str = "collisions";
pub const DROPPED: &str = "dropped";
pub const METER_PREFIX: &str = "meter";

/// Power drawn in each device state, in watts.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerTable {
    /// RRC idle, waiting for the next reading.
    pub off: f64,
    /// Waiting out the synchronization delay.
    pub sync: f64,
    /// Listening for the next RAO, including random backoff.
    pub backoff: f64,
    /// Preamble transmission and response window.
    pub ra: f64,
    /// Connected, sending the reading.
    pub tx: f64,
    /// Connected but idle until the connection is released.
    pub inactive: f64,
}

/// Phase durations in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct Durations {
    pub ra: f64,
    pub tx: f64,
    pub inactive: f64,
}

impl Default for PowerTable {
    /// Example values, not measurements; see `configs/miot.conf`.
    fn default() -> Self {
        Self {
            off: 0.0,
            sync: 0.0,
            backoff: 0.09,
            ra: 0.545,
            tx: 0.545,
            inactive: 0.015,
        }
    }
}

impl Default for Durations {
    fn default() -> Self {
        Self {
            ra: 0.1,
            tx: 0.2,
            inactive: 10.0,
        }
    }
}

impl PowerTable {
    pub const KEYS: [&'static str; 6] = ["off", "sync", "backoff", "ra", "tx", "inactive"];

    pub fn get_mut(&mut self, key: &str) -> Option<&mut f64> {
        Some(match key {
            "off" => &mut self.off,
            "sync" => &mut self.sync,
            "backoff" => &mut self.backoff,
            "ra" => &mut self.ra,
            "tx" => &mut self.tx,
            "inactive" => &mut self.inactive,
            _ => return None,
        })
    }

    pub fn values(&self) -> [f64; 6] {
        [self.off, self.sync, self.backoff, self.ra, self.tx, self.inactive]
    }
}

impl Durations {
    pub const KEYS: [&'static str; 3] = ["ra", "tx", "inactive"];

    pub fn get_mut(&mut self, key: &str) -> Option<&mut f64> {
        Some(match key {
            "ra" => &mut self.ra,
            "tx" => &mut self.tx,
            "inactive" => &mut self.inactive,
            _ => return None,
        })
    }

    pub fn values(&self) -> [f64; 3] {
        [self.ra, self.tx, self.inactive]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiotConfig {
    pub n_devices: usize,
    pub reading_period_s: f64,
    pub sync_window_s: f64,
    pub n_preambles: usize,
    /// Backoff window in slots.
    pub w: u64,
    /// Retries allowed after the first attempt.
    pub m: u64,
    pub rao_period_s: f64,
    pub backoff_slot_s: f64,
    pub power: PowerTable,
    pub durations: Durations,
    pub horizon_s: f64,
    pub seed: u64,
    /// Count `m` as total attempts instead of retries.
    pub retries_are_total: bool,
    /// Draw backoff from `1..W-1` instead of `0..=W`.
    pub exclusive_backoff: bool,
}

impl Default for MiotConfig {
    fn default() -> Self {
        Self {
            n_devices: 5000,
            reading_period_s: 3600.0,
            sync_window_s: 60.0,
            n_preambles: 54,
            w: 20,
            m: 9,
            rao_period_s: 0.002,
            backoff_slot_s: 0.05,
            power: PowerTable::default(),
            durations: Durations::default(),
            horizon_s: 86400.0,
            seed: 1,
            retries_are_total: false,
            exclusive_backoff: false,
        }
    }
}

impl MiotConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SimError::Config(m));
        if self.n_devices < 1 {
            return bad("n_devices must be at least 1".into());
        }
        if self.n_preambles < 1 {
            return bad("n_preambles must be at least 1".into());
        }
        if !(self.sync_window_s > 0.0 && self.sync_window_s.is_finite()) {
            return bad(format!("sync_window_s must be positive, got {}", self.sync_window_s));
        }
        for (k, v) in [
            ("reading_period_s", self.reading_period_s),
            ("rao_period_s", self.rao_period_s),
            ("backoff_slot_s", self.backoff_slot_s),
            ("horizon_s", self.horizon_s),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{k} must be positive, got {v}"));
            }
        }
        for (k, v) in PowerTable::KEYS.iter().zip(self.power.values()) {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("power.{k} must be non-negative, got {v}"));
            }
        }
        for (k, v) in Durations::KEYS.iter().zip(self.durations.values()) {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("durations.{k} must be non-negative, got {v}"));
            }
        }
        if self.retries_are_total && self.m == 0 {
            return bad("m must be at least 1 when it counts total attempts".into());
        }
        if self.exclusive_backoff && self.w < 2 {
            return bad("exclusive backoff needs W >= 2".into());
        }
        Ok(())
    }

    /// Retries allowed after the first failed attempt.
    pub fn max_retries(&self) -> u64 {
        if self.retries_are_total {
            self.m - 1
        } else {
            self.m
        }
    }

    pub fn backoff_range(&self) -> (u64, u64) {
        if self.exclusive_backoff {
            (1, self.w - 1)
        } else {
            (0, self.w)
        }
    }

    /// Number of reading signals sent before the horizon.
    pub fn signals(&self) -> u64 {
        (self.horizon_s / self.reading_period_s).ceil() as u64
    }
}

pub fn preamble_name(i: usize) -> String {
    format!("preamble{i}")
}

/// First RAO boundary strictly after `now`.
pub fn next_rao(now: f64, period: f64) -> f64 {
    // The small slack keeps a device sitting exactly on a boundary (up to
    // rounding) from being sent to that same boundary again.
    let k = (now / period + 1e-9).floor();
    (k + 1.0) * period
}

/// Outcome of one RAO: device `i` succeeds iff no other device picked
/// `choices[i]`.
pub fn ra_round(choices: &[usize], n_preambles: usize) -> Vec<bool> {
    let mut count = vec![0u32; n_preambles];
    for &c in choices {
        count[c] += 1;
    }
    choices.iter().map(|&c| count[c] == 1).collect()
}

/// Expected successes when `k` devices pick uniformly among `n` preambles.
pub fn expected_successes(k: usize, n: usize) -> f64 {
    if k == 0 {
        return 0.0;
    }
    k as f64 * ((n as f64 - 1.0) / n as f64).powi(k as i32 - 1)
}

fn meter_trajectory(cfg: &MiotConfig) -> Trajectory {
    let p = cfg.power.clone();
    let d = cfg.durations.clone();
    let preambles: Vec<String> = (0..cfg.n_preambles).map(preamble_name).collect();
    let window = cfg.sync_window_s;
    let rao = cfg.rao_period_s;
    let slot = cfg.backoff_slot_s;
    let (lo, hi) = cfg.backoff_range();
    let max_retries = cfg.max_retries() as f64;

    // A seize that found the preamble free still fails if someone else
    // tried the same preamble at this RAO.
    let collided = SubTrajectory::new(
        Trajectory::new("collided").set_attribute("ok", 0.0).release(ResourceRef::Selected, 1),
    );
    let alone = SubTrajectory::new(
        Trajectory::new("alone").set_attribute("ok", 1.0).release(ResourceRef::Selected, 1),
    );
    let post = SubTrajectory::new(Trajectory::new("seized").timeout(0.0).branch(
        |ctx| {
            let now = ctx.now();
            let hit = ctx.selected().is_some_and(|r| r.last_reject_time() == now);
            if hit {
                1
            } else {
                2
            }
        },
        vec![collided, alone],
    ));
    let reject = SubTrajectory::new(Trajectory::new("rejected").set_attribute("ok", 0.0));

    let success = SubTrajectory::new(
        Trajectory::new("connected")
            .set_attribute(POWER, p.tx)
            .timeout(d.tx)
            .set_attribute(POWER, p.inactive)
            .timeout(d.inactive)
            .set_attribute("done", 1.0),
    );
    let retry = SubTrajectory::new(
        Trajectory::new("backoff")
            .add_attribute("retries", 1.0)
            .add_global(COLLISIONS, 1.0)
            .set_attribute(POWER, p.backoff)
            .timeout_fn(move |ctx| ctx.rng().uniform_int(lo, hi) as f64 * slot)
            .set_attribute("done", 0.0),
    );
    let drop = SubTrajectory::new(
        Trajectory::new("drop")
            .add_global(COLLISIONS, 1.0)
            .add_global(DROPPED, 1.0)
            .set_attribute("done", 1.0),
    );

    Trajectory::new("meter")
        .trap(READING) // 0
        .set_attribute(POWER, p.off) // 1
        .wait() // 2
        .add_global(READINGS, 1.0) // 3
        .set_attribute(POWER, p.sync) // 4
        .set_attribute("retries", 0.0) // 5
        .timeout_fn(move |ctx| ctx.rng().uniform_range(0.0, window)) // 6
        .set_attribute(POWER, p.backoff) // 7
        .timeout_fn(move |ctx| next_rao(ctx.now(), rao) - ctx.now()) // 8
        .set_attribute(POWER, p.ra) // 9
        .select(preambles, SelectPolicy::Random) // 10
        .seize_with(ResourceRef::Selected, 1, Some(post), Some(reject)) // 11
        .timeout(d.ra) // 12
        .branch(
            move |ctx| {
                if ctx.attr_or("ok", 0.0) == 1.0 {
                    1
                } else if ctx.attr_or("retries", 0.0) < max_retries {
                    2
                } else {
                    3
                }
            },
            vec![success, retry, drop],
        ) // 13
        .rollback_while(6, |ctx| ctx.attr_or("done", 1.0) == 0.0) // 14 -> 8
        .rollback(14, Repeat::Forever) // 15 -> 1
}

/// Builds the environment: preambles, N meters started at t=0 and the
/// trigger that broadcasts a reading signal every period.
pub fn build_miot(cfg: &MiotConfig) -> Result<Environment> {
    cfg.validate()?;
    let mut env = Environment::new(
        format!("miot-{}-{}", cfg.n_devices, trajsim_core::fmt_real(cfg.sync_window_s)),
        cfg.seed,
    );
    for i in 0..cfg.n_preambles {
        env.add_resource(ResourceSpec::new(preamble_name(i), 1).queue_size(Some(0)).monitored(false))?;
    }
    env.add_generator(
        Generator::new(METER_PREFIX, meter_trajectory(cfg), |_| -1.0)
            .initial_batch(cfg.n_devices)
            .monitor_keys([POWER, READINGS, COLLISIONS, DROPPED]),
    )?;
    let trigger = Trajectory::new("trigger")
        .send(READING, 0.0)
        .timeout(cfg.reading_period_s)
        .rollback(2, Repeat::Forever);
    env.add_generator(
        Generator::new("trigger", trigger, |_| -1.0)
            .initial_batch(1)
            .monitor(trajsim_core::MonitorLevel::Off),
    )?;
    Ok(env)
}

/// Integrates each device's power trace; the last segment of a device is
/// closed at `horizon`. Returns the total energy in joules.
pub fn trace_energy(rows: &[AttributeRecord], horizon: f64) -> f64 {
    let mut last: HashMap<&str, (f64, f64)> = HashMap::new();
    let mut total = 0.0;
    for r in rows.iter().filter(|r| r.key == POWER) {
        if let Some((t, p)) = last.insert(r.name.as_str(), (r.time, r.value)) {
            total += p * (r.time - t);
        }
    }
    total + last.values().map(|&(t, p)| p * (horizon - t).max(0.0)).sum::<f64>()
}

/// Totals of one mIoT run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MiotTotals {
    pub energy_j: f64,
    pub readings: f64,
    pub collisions: f64,
    pub dropped: f64,
}

impl MiotTotals {
    pub fn from_monitor(monitor: &MonitorStore, horizon: f64) -> Self {
        let rows = monitor.get_mon_attributes();
        let global = |key: &str| {
            rows.iter()
                .filter(|r| r.key == key && r.name.is_empty())
                .map(|r| r.value)
                .next_back()
                .unwrap_or(0.0)
        };
        Self {
            energy_j: trace_energy(&rows, horizon),
            readings: global(READINGS),
            collisions: global(COLLISIONS),
            dropped: global(DROPPED),
        }
    }

    /// Energy divided by readings attempted, dropped ones included.
    pub fn energy_per_reading(&self) -> f64 {
        if self.readings > 0.0 {
            self.energy_j / self.readings
        } else {
            0.0
        }
    }
}

pub fn summarize(monitor: &MonitorStore, cfg: &MiotConfig) -> SummaryTable {
    let t = MiotTotals::from_monitor(monitor, cfg.horizon_s);
    let n = cfg.n_devices.to_string();
    let w = trajsim_core::fmt_real(cfg.sync_window_s);
    let g = [n.as_str(), w.as_str()];
    let mut table = SummaryTable::new(["n_devices", "sync_window"]);
    table.push(&g, "energy_J_per_reading", t.energy_per_reading());
    table.push(&g, "rao_collisions", t.collisions);
    table.push(&g, "readings", t.readings);
    table.push(&g, "dropped", t.dropped);
    table
}

pub fn run_case(cfg: &MiotConfig) -> Result<CaseOutput> {
    let mut env = build_miot(cfg)?;
    let report = env.run(cfg.horizon_s)?;
    let monitor = env.finalize();
    let summary = summarize(&monitor, cfg);
    Ok(CaseOutput {
        monitor,
        events: report.events,
        summary,
    })
}

/// Runs `k` devices that contend at every one of `n_raos` consecutive RAOs
/// through the same preamble resources as the meters, and returns the
/// number of successful devices at each RAO.
pub fn rao_bench(k: usize, n_preambles: usize, n_raos: usize, seed: u64) -> Result<Vec<u32>> {
    let period = 1.0;
    let mut env = Environment::new("rao-bench", seed);
    for i in 0..n_preambles {
        env.add_resource(ResourceSpec::new(preamble_name(i), 1).queue_size(Some(0)).monitored(false))?;
    }
    let won = SubTrajectory::new(Trajectory::new("won").add_global("success", 1.0));
    let held = Trajectory::new("held")
        .timeout(0.0)
        .branch(
            |ctx| {
                let now = ctx.now();
                usize::from(!ctx.selected().is_some_and(|r| r.last_reject_time() == now))
            },
            vec![won],
        )
        .release(ResourceRef::Selected, 1);
    let device = Trajectory::new("device")
        .timeout_fn(move |ctx| next_rao(ctx.now(), period) - ctx.now())
        .select((0..n_preambles).map(preamble_name), SelectPolicy::Random)
        .seize_with(
            ResourceRef::Selected,
            1,
            Some(SubTrajectory::new(held)),
            Some(SubTrajectory::new(Trajectory::new("lost").set_attribute("ok", 0.0))),
        )
        .rollback(3, Repeat::Forever);
    env.add_generator(
        Generator::new("dev", device, |_| -1.0)
            .initial_batch(k)
            .monitor_keys(["success"]),
    )?;
    env.run((n_raos as f64 + 0.5) * period)?;
    let mut counts = vec![0u32; n_raos];
    for r in env.finalize().attributes_with_key("success") {
        let rao = (r.time / period).round() as usize;
        counts[rao - 1] += 1;
    }
    Ok(counts)
}
