//! Mapping between flat parameters and the scenario configs.

use std::fmt;
use std::str::FromStr;

use trajsim_core::{fmt_real, MonitorStore, SimError};
use trajsim_scenarios::crosshaul::{self, Policy, XhaulConfig};
use trajsim_scenarios::miot::{self, Durations, MiotConfig, PowerTable};
use trajsim_scenarios::mm1::{self, Mm1Config};
use trajsim_scenarios::pon::{self, PonConfig, PonMode};
use trajsim_scenarios::{CaseOutput, SummaryTable};

use crate::config::Params;
use crate::CliError;

/// Manifest key carrying the offered load measured during a PON run; it
/// cannot be recovered from the monitor files.
pub const PON_LOAD_KEY: &str = "measured_offered_load";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    Mm1,
    Xhaul,
    Pon,
    Miot,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [Scenario::Mm1, Scenario::Xhaul, Scenario::Pon, Scenario::Miot];

    pub fn as_str(&self) -> &'static str {
        match self {
            Scenario::Mm1 => "mm1",
            Scenario::Xhaul => "xhaul",
            Scenario::Pon => "pon",
            Scenario::Miot => "miot",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scenario {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        Scenario::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| CliError::Usage(format!("unknown scenario `{s}` (expected mm1, xhaul, pon or miot)")))
    }
}

fn parse_enum<T: FromStr<Err = SimError>>(s: &str) -> Result<T, CliError> {
    s.parse().map_err(|e: SimError| CliError::Usage(e.to_string()))
}

/// A fully resolved case.
#[derive(Debug, Clone, PartialEq)]
pub enum CaseConfig {
    Mm1(Mm1Config),
    Xhaul(XhaulConfig),
    Pon(PonConfig),
    Miot(MiotConfig),
}

impl CaseConfig {
    /// Builds a config from parameters over the scenario defaults. All keys
    /// must be known to the scenario.
    pub fn from_params(scenario: Scenario, mut p: Params) -> Result<Self, CliError> {
        let cfg = match scenario {
            Scenario::Mm1 => {
                let d = Mm1Config::default();
                CaseConfig::Mm1(Mm1Config {
                    lambda: p.take_f64("lambda", d.lambda)?,
                    mu: p.take_f64("mu", d.mu)?,
                    arrivals: p.take_u64("arrivals", d.arrivals)?,
                    seed: p.take_u64("seed", d.seed)?,
                })
            }
            Scenario::Xhaul => {
                let d = XhaulConfig::default();
                CaseConfig::Xhaul(XhaulConfig {
                    policy: parse_enum::<Policy>(&p.take_string("policy", d.policy.as_str())?)?,
                    n_xpfe: p.take_usize("n_xpfe", d.n_xpfe)?,
                    total_load: p.take_f64("total_load", d.total_load)?,
                    fh_share: p.take_f64("fh_share", d.fh_share)?,
                    line_rate_bps: p.take_f64("line_rate_bps", d.line_rate_bps)?,
                    horizon_s: p.take_f64("horizon_s", d.horizon_s)?,
                    seed: p.take_u64("seed", d.seed)?,
                })
            }
            Scenario::Pon => {
                let mode = parse_enum::<PonMode>(&p.take_string("mode", "smallcell")?)?;
                let mut d = PonConfig::for_mode(mode, None);
                d.grant_limit_bytes = p.take_limit("grant_limit_bytes", None)?;
                d.n_onus = p.take_usize("n_onus", d.n_onus)?;
                d.onu_rate_bps = p.take_f64("onu_rate_bps", d.onu_rate_bps)?;
                if p.get("cell_rate_bps").is_some() {
                    d.cell_rate_bps = Some(p.take_f64("cell_rate_bps", 0.0)?);
                }
                d.upstream_rate_bps = p.take_f64("upstream_rate_bps", d.upstream_rate_bps)?;
                d.guard_time_s = p.take_f64("guard_time_s", d.guard_time_s)?;
                d.rrh_burst_bytes = p.take_u64("rrh_burst_bytes", d.rrh_burst_bytes)?;
                d.rrh_period_s = p.take_f64("rrh_period_s", d.rrh_period_s)?;
                d.mean_burst_len = p.take_f64("mean_burst_len", d.mean_burst_len)?;
                d.horizon_s = p.take_f64("horizon_s", d.horizon_s)?;
                d.monitor_link = p.take_bool("monitor_link", d.monitor_link)?;
                d.seed = p.take_u64("seed", d.seed)?;
                CaseConfig::Pon(d)
            }
            Scenario::Miot => {
                let d = MiotConfig::default();
                let mut power = PowerTable::default();
                for k in PowerTable::KEYS {
                    let v = p.take_f64(&format!("power.{k}"), *power.get_mut(k).expect("known key"))?;
                    *power.get_mut(k).expect("known key") = v;
                }
                let mut durations = Durations::default();
                for k in Durations::KEYS {
                    let v = p.take_f64(&format!("durations.{k}"), *durations.get_mut(k).expect("known key"))?;
                    *durations.get_mut(k).expect("known key") = v;
                }
                CaseConfig::Miot(MiotConfig {
                    n_devices: p.take_usize("n_devices", d.n_devices)?,
                    reading_period_s: p.take_f64("reading_period_s", d.reading_period_s)?,
                    sync_window_s: p.take_f64("sync_window_s", d.sync_window_s)?,
                    n_preambles: p.take_usize("n_preambles", d.n_preambles)?,
                    w: p.take_u64("W", d.w)?,
                    m: p.take_u64("m", d.m)?,
                    rao_period_s: p.take_f64("rao_period_s", d.rao_period_s)?,
                    backoff_slot_s: p.take_f64("backoff_slot_s", d.backoff_slot_s)?,
                    power,
                    durations,
                    horizon_s: p.take_f64("horizon_s", d.horizon_s)?,
                    seed: p.take_u64("seed", d.seed)?,
                    retries_are_total: p.take_bool("retries_are_total", d.retries_are_total)?,
                    exclusive_backoff: p.take_bool("exclusive_backoff", d.exclusive_backoff)?,
                })
            }
        };
        p.finish(scenario.as_str())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn scenario(&self) -> Scenario {
        match self {
            CaseConfig::Mm1(_) => Scenario::Mm1,
            CaseConfig::Xhaul(_) => Scenario::Xhaul,
            CaseConfig::Pon(_) => Scenario::Pon,
            CaseConfig::Miot(_) => Scenario::Miot,
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            CaseConfig::Mm1(c) => c.seed,
            CaseConfig::Xhaul(c) => c.seed,
            CaseConfig::Pon(c) => c.seed,
            CaseConfig::Miot(c) => c.seed,
        }
    }

    fn validate(&self) -> Result<(), CliError> {
        let r = match self {
            CaseConfig::Mm1(c) => c.validate(),
            CaseConfig::Xhaul(c) => c.validate(),
            CaseConfig::Pon(c) => c.validate(),
            CaseConfig::Miot(c) => c.validate(),
        };
        r.map_err(|e| CliError::Usage(e.to_string()))
    }

    /// Every parameter that affects the results, as rendered key/values
    /// that `from_params` reads back to the same config.
    pub fn entries(&self) -> Vec<(String, String)> {
        let r = |x: f64| fmt_real(x);
        let mut e: Vec<(&str, String)> = Vec::new();
        match self {
            CaseConfig::Mm1(c) => {
                e.push(("lambda", r(c.lambda)));
                e.push(("mu", r(c.mu)));
                e.push(("arrivals", c.arrivals.to_string()));
            }
            CaseConfig::Xhaul(c) => {
                e.push(("policy", c.policy.to_string()));
                e.push(("n_xpfe", c.n_xpfe.to_string()));
                e.push(("total_load", r(c.total_load)));
                e.push(("fh_share", r(c.fh_share)));
                e.push(("line_rate_bps", r(c.line_rate_bps)));
                e.push(("horizon_s", r(c.horizon_s)));
            }
            CaseConfig::Pon(c) => {
                e.push(("mode", c.mode.to_string()));
                e.push(("grant_limit_bytes", pon::limit_label(c.grant_limit_bytes)));
                e.push(("n_onus", c.n_onus.to_string()));
                e.push(("onu_rate_bps", r(c.onu_rate_bps)));
                if let Some(cell) = c.cell_rate_bps {
                    e.push(("cell_rate_bps", r(cell)));
                }
                e.push(("upstream_rate_bps", r(c.upstream_rate_bps)));
                e.push(("guard_time_s", r(c.guard_time_s)));
                e.push(("rrh_burst_bytes", c.rrh_burst_bytes.to_string()));
                e.push(("rrh_period_s", r(c.rrh_period_s)));
                e.push(("mean_burst_len", r(c.mean_burst_len)));
                e.push(("horizon_s", r(c.horizon_s)));
                e.push(("monitor_link", c.monitor_link.to_string()));
            }
            CaseConfig::Miot(c) => {
                e.push(("n_devices", c.n_devices.to_string()));
                e.push(("sync_window_s", r(c.sync_window_s)));
                e.push(("reading_period_s", r(c.reading_period_s)));
                e.push(("n_preambles", c.n_preambles.to_string()));
                e.push(("W", c.w.to_string()));
                e.push(("m", c.m.to_string()));
                e.push(("rao_period_s", r(c.rao_period_s)));
                e.push(("backoff_slot_s", r(c.backoff_slot_s)));
                e.push(("horizon_s", r(c.horizon_s)));
                e.push(("retries_are_total", c.retries_are_total.to_string()));
                e.push(("exclusive_backoff", c.exclusive_backoff.to_string()));
                let mut out: Vec<(String, String)> = e.into_iter().map(|(k, v)| (k.to_owned(), v)).collect();
                for (k, v) in PowerTable::KEYS.iter().zip(c.power.values()) {
                    out.push((format!("power.{k}"), r(v)));
                }
                for (k, v) in Durations::KEYS.iter().zip(c.durations.values()) {
                    out.push((format!("durations.{k}"), r(v)));
                }
                out.push(("seed".into(), c.seed.to_string()));
                return out;
            }
        }
        e.push(("seed", self.seed().to_string()));
        e.into_iter().map(|(k, v)| (k.to_owned(), v)).collect()
    }

    pub fn run(&self) -> Result<CaseOutput, SimError> {
        match self {
            CaseConfig::Mm1(c) => mm1::run_case(c),
            CaseConfig::Xhaul(c) => crosshaul::run_case(c),
            CaseConfig::Pon(c) => pon::run_case(c),
            CaseConfig::Miot(c) => miot::run_case(c),
        }
    }

    /// Summary table from monitor records. `pon_load` restores the offered
    /// load row of PON cases.
    pub fn summarize(&self, monitor: &MonitorStore, pon_load: Option<f64>) -> Result<SummaryTable, SimError> {
        match self {
            CaseConfig::Mm1(c) => mm1::summarize(monitor, c),
            CaseConfig::Xhaul(c) => crosshaul::summarize(monitor, c.n_xpfe),
            CaseConfig::Pon(c) => {
                let mut t = pon::summarize(monitor, c.grant_limit_bytes)?;
                if let Some(load) = pon_load {
                    t.push(&["all", &pon::limit_label(c.grant_limit_bytes)], "offered_load", load);
                }
                Ok(t)
            }
            CaseConfig::Miot(c) => Ok(miot::summarize(monitor, c)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{parse_config, ConfigValue};

    fn params(text: &str) -> Params {
        let mut p = Params::new();
        for (k, v) in parse_config(text, "t").unwrap() {
            p.set(k, v);
        }
        p
    }

    #[test]
    fn entries_round_trip_for_every_scenario() {
        let cases = [
            (Scenario::Mm1, "lambda = 0.5\narrivals = 10\n"),
            (Scenario::Xhaul, "policy = sp_preempt\nn_xpfe = 5\nseed = 42\n"),
            (Scenario::Pon, "mode = rrh\ngrant_limit_bytes = 0\n"),
            (Scenario::Pon, "grant_limit_bytes = 1500\n"),
            (Scenario::Miot, "W = 10\npower.tx = 0.3\nsync_window_s = 5\n"),
        ];
        for (s, text) in cases {
            let cfg = CaseConfig::from_params(s, params(text)).unwrap();
            let rendered = crate::config::render(&cfg.entries());
            let back = CaseConfig::from_params(s, params(&rendered)).unwrap();
            assert_eq!(back, cfg, "{s}");
        }
    }

    #[test]
    fn variant_mismatch_and_unknown_keys() {
        let e = CaseConfig::from_params(Scenario::Pon, params("mode = rrh\ncell_rate_bps = 1e8\n"));
        assert!(matches!(e, Err(CliError::Usage(_))));
        let e = CaseConfig::from_params(Scenario::Xhaul, params("colour = red\n"));
        assert!(matches!(e, Err(CliError::Usage(_))));
        let mut p = Params::new();
        p.set("policy", ConfigValue::Str("wfq".into()));
        assert!(CaseConfig::from_params(Scenario::Xhaul, p).is_err());
        assert!("nope".parse::<Scenario>().is_err());
    }
}
