//! Running cases into per-case directories and re-summarizing them.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use trajsim_core::monitor::missing_files;
use trajsim_core::{fmt_real, MonitorStore, SimError};

use crate::config::{parse_config, render, ConfigValue, Params};
use crate::scenario::{CaseConfig, Scenario, PON_LOAD_KEY};
use crate::CliError;

pub const MANIFEST: &str = "manifest";
pub const SUMMARY: &str = "summary.csv";

/// Manifest keys that describe the run rather than the config.
const RUN_KEYS: [&str; 4] = ["scenario", "case", "events", "wall_time_s"];

#[derive(Debug, Clone, PartialEq)]
pub struct CaseReport {
    pub index: usize,
    pub dir: PathBuf,
    pub events: u64,
    pub wall_s: f64,
}

pub fn case_dir(out: &Path, index: usize) -> PathBuf {
    out.join(format!("case-{index}"))
}

fn io_err(e: SimError) -> CliError {
    match e {
        SimError::Io { .. } | SimError::Csv { .. } => CliError::Io(e.to_string()),
        other => CliError::Sim(other),
    }
}

/// Runs one case and writes its monitor files, summary and manifest.
pub fn execute(index: usize, cfg: &CaseConfig, out: &Path) -> Result<CaseReport, CliError> {
    let dir = case_dir(out, index);
    fs::create_dir_all(&dir).map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
    let t = Instant::now();
    let output = cfg.run()?;
    let wall_s = t.elapsed().as_secs_f64();
    output.monitor.export_csv(&dir).map_err(io_err)?;
    output.summary.write_csv(dir.join(SUMMARY)).map_err(io_err)?;

    let mut entries = vec![
        ("scenario".to_owned(), cfg.scenario().to_string()),
        ("case".to_owned(), index.to_string()),
    ];
    entries.extend(cfg.entries());
    if let CaseConfig::Pon(p) = cfg {
        let lim = trajsim_scenarios::pon::limit_label(p.grant_limit_bytes);
        if let Some(load) = output.summary.get(&["all", &lim], "offered_load") {
            entries.push((PON_LOAD_KEY.to_owned(), fmt_real(load)));
        }
    }
    entries.push(("events".to_owned(), output.events.to_string()));
    entries.push(("wall_time_s".to_owned(), format!("{wall_s:.3}")));
    let path = dir.join(MANIFEST);
    fs::write(&path, render(&entries)).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
    log::info!("case-{index}: {} events in {wall_s:.3} s", output.events);
    Ok(CaseReport {
        index,
        dir,
        events: output.events,
        wall_s,
    })
}

/// Runs every case on a pool of `workers` threads. Reports come back in case
/// order; the first failing case (by index) is returned as the error.
pub fn run_all(cases: &[CaseConfig], out: &Path, workers: usize) -> Result<Vec<CaseReport>, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| CliError::Io(format!("cannot start worker pool: {e}")))?;
    let results: Vec<Result<CaseReport, CliError>> = pool.install(|| {
        cases
            .par_iter()
            .enumerate()
            .map(|(i, c)| execute(i, c, out))
            .collect()
    });
    results.into_iter().collect()
}

/// Cartesian product of the grid axes; the first axis varies slowest.
pub fn expand_grid(axes: &[(String, Vec<ConfigValue>)]) -> Vec<Vec<(String, ConfigValue)>> {
    let mut cases: Vec<Vec<(String, ConfigValue)>> = vec![Vec::new()];
    for (key, values) in axes {
        cases = cases
            .into_iter()
            .flat_map(|prefix| {
                values.iter().map(move |v| {
                    let mut c = prefix.clone();
                    c.push((key.clone(), v.clone()));
                    c
                })
            })
            .collect();
    }
    cases
}

/// Reads a case manifest back into its config and the stored PON load.
pub fn read_manifest(dir: &Path) -> Result<(CaseConfig, Option<f64>), CliError> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
    let mut params = Params::new();
    let mut scenario = None;
    let mut load = None;
    for (k, v) in parse_config(&text, &path.display().to_string())? {
        match k.as_str() {
            "scenario" => scenario = Some(v.to_string().parse::<Scenario>()?),
            PON_LOAD_KEY => {
                if let ConfigValue::Real(x) = v {
                    load = Some(x);
                }
            }
            k if RUN_KEYS.contains(&k) => {}
            _ => params.set(k, v),
        }
    }
    let scenario =
        scenario.ok_or_else(|| CliError::Io(format!("{} does not name a scenario", path.display())))?;
    Ok((CaseConfig::from_params(scenario, params)?, load))
}

/// Case directories under `dir`: `dir` itself if it holds a manifest,
/// otherwise its `case-N` children in index order.
pub fn case_dirs(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    if dir.join(MANIFEST).is_file() {
        return Ok(vec![dir.to_owned()]);
    }
    let entries = fs::read_dir(dir).map_err(|e| CliError::Io(format!("cannot read {}: {e}", dir.display())))?;
    let mut found: Vec<(usize, PathBuf)> = entries
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().to_string_lossy().into_owned();
            let idx = name.strip_prefix("case-")?.parse().ok()?;
            e.path().is_dir().then(|| (idx, e.path()))
        })
        .collect();
    found.sort();
    if found.is_empty() {
        return Err(CliError::Io(format!("{} holds no manifest and no case directories", dir.display())));
    }
    Ok(found.into_iter().map(|(_, p)| p).collect())
}

/// Recomputes `summary.csv` of every case under `dir` from its monitor
/// files.
pub fn summarize_dir(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut written = Vec::new();
    for d in case_dirs(dir)? {
        let missing = missing_files(&d);
        if !missing.is_empty() {
            let list: Vec<String> = missing.iter().map(|p| p.display().to_string()).collect();
            return Err(CliError::Io(format!("missing monitor files: {}", list.join(", "))));
        }
        let (cfg, load) = read_manifest(&d)?;
        let store = MonitorStore::read_csv(&d).map_err(io_err)?;
        let table = cfg.summarize(&store, load)?;
        let path = d.join(SUMMARY);
        table.write_csv(&path).map_err(io_err)?;
        written.push(path);
    }
    Ok(written)
}
