//! Command-line front end: run single cases, sweep parameter grids on a
//! worker pool, and rebuild summaries from exported monitor files.
//!
//! Each case gets its own `case-N` directory holding `arrivals.csv`,
//! `resources.csv`, `attributes.csv`, `summary.csv` and a `manifest` with
//! the resolved parameters, seed, event count and wall time. Case `N` of a
//! sweep runs with seed `base_seed + N`.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use trajsim_core::SimError;

pub mod config;
pub mod runner;
pub mod scenario;

use config::{read_config, ConfigValue, Params};
use scenario::{CaseConfig, Scenario};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad arguments or config values.
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Sim(#[from] SimError),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io(_) | CliError::Sim(_) => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "trajsim", version, about = "Run trajectory-based discrete-event scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a single case.
    Run(CaseArgs),
    /// Run the cartesian product of parameter lists.
    Sweep(SweepArgs),
    /// Rebuild summary.csv from the monitor files of one case or a sweep.
    Summarize {
        dir: PathBuf,
    },
}

#[derive(Debug, Args)]
struct CaseArgs {
    /// mm1, xhaul, pon or miot.
    scenario: String,
    /// Flat key = value file; lists in it become grid axes for sweeps.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base seed (case N uses base + N).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Override one parameter.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Scenario parameters as `--key value`, e.g. `--n-xpfe 5`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    params: Vec<String>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// Grid axes, e.g. `policy=fifo,sp n_xpfe=1,2,5`.
    #[arg(long, num_args = 1.., value_name = "KEY=V1,V2")]
    grid: Vec<String>,
    /// Worker threads (default: available cores).
    #[arg(long)]
    workers: Option<usize>,
    #[command(flatten)]
    case: CaseArgs,
}

/// Everything a run or sweep needs after argument parsing.
#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub scenario: Scenario,
    pub cases: Vec<CaseConfig>,
    pub out: PathBuf,
    pub workers: usize,
}

fn parse_pair(s: &str) -> Result<(String, ConfigValue), CliError> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("expected KEY=VALUE, got `{s}`")))?;
    Ok((k.trim().replace('-', "_"), ConfigValue::parse(v)))
}

fn parse_num<T: std::str::FromStr>(flag: &str, v: &str) -> Result<T, CliError> {
    v.parse().map_err(|_| CliError::Usage(format!("`--{flag}` expects an integer, got `{v}`")))
}

/// Builds the case list from parsed arguments. `sweep` allows lists.
fn plan(mut a: CaseArgs, mut grid: Vec<String>, mut workers: Option<usize>, sweep: bool) -> Result<Plan, CliError> {
    let scenario: Scenario = a.scenario.parse()?;
    let mut flags: Vec<(String, ConfigValue)> = Vec::new();
    let mut sets = std::mem::take(&mut a.set);

    // `--grid` values run up to the next flag; an unknown flag right after
    // them is swallowed by clap, so hand it back to the parameter list.
    let mut rest = Vec::new();
    if let Some(cut) = grid.iter().position(|g| g.starts_with("--")) {
        rest = grid.split_off(cut);
    }
    // Leftover `--key value` pairs, which may also repeat the named options.
    rest.append(&mut a.params);
    let mut i = 0;
    while i < rest.len() {
        let tok = &rest[i];
        let flag = tok
            .strip_prefix("--")
            .ok_or_else(|| CliError::Usage(format!("unexpected argument `{tok}`")))?;
        let (name, inline) = match flag.split_once('=') {
            Some((n, v)) => (n.to_owned(), Some(v.to_owned())),
            None => (flag.to_owned(), None),
        };
        i += 1;
        if name == "grid" {
            grid.extend(inline);
            while i < rest.len() && !rest[i].starts_with("--") {
                grid.push(rest[i].clone());
                i += 1;
            }
            continue;
        }
        let value = match inline {
            Some(v) => v,
            None => {
                let v = rest
                    .get(i)
                    .cloned()
                    .ok_or_else(|| CliError::Usage(format!("`--{name}` needs a value")))?;
                i += 1;
                v
            }
        };
        match name.as_str() {
            "seed" => a.seed = Some(parse_num("seed", &value)?),
            "out" => a.out = PathBuf::from(value),
            "config" => a.config = Some(PathBuf::from(value)),
            "workers" => workers = Some(parse_num("workers", &value)?),
            "set" => sets.push(value),
            _ => flags.push((name.replace('-', "_"), ConfigValue::parse(&value))),
        }
    }
    if !sweep && !grid.is_empty() {
        return Err(CliError::Usage("--grid is only valid for sweep".into()));
    }

    // Precedence: config file, then --set, then --key flags.
    let mut base = Params::new();
    if let Some(path) = &a.config {
        for (k, v) in read_config(path)? {
            if k == "scenario" {
                if v.to_string() != scenario.as_str() {
                    return Err(CliError::Usage(format!(
                        "{} is a `{v}` config, not `{scenario}`",
                        path.display()
                    )));
                }
                continue;
            }
            base.set(k, v);
        }
    }
    for s in &sets {
        let (k, v) = parse_pair(s)?;
        base.set(k, v);
    }
    for (k, v) in flags {
        base.set(k, v);
    }

    let mut axes: Vec<(String, Vec<ConfigValue>)> = Vec::new();
    for g in &grid {
        let (k, v) = parse_pair(g)?;
        base.remove(&k);
        axes.push((k, v.items()));
    }
    let list_keys: Vec<String> = base
        .keys()
        .filter(|k| base.get(k).is_some_and(ConfigValue::is_list))
        .map(str::to_owned)
        .collect();
    for k in list_keys {
        if !sweep {
            return Err(CliError::Usage(format!("`{k}` is a list; use sweep for several values")));
        }
        let v = base.remove(&k).expect("listed key");
        axes.push((k, v.items()));
    }
    if axes.iter().any(|(k, _)| k == "seed") {
        return Err(CliError::Usage("seed cannot be a grid axis; cases get base seed + index".into()));
    }
    if let Some((k, _)) = axes.iter().find(|(_, v)| v.is_empty()) {
        return Err(CliError::Usage(format!("grid axis `{k}` has no values")));
    }

    let seed_base = match (a.seed, base.remove("seed")) {
        (Some(s), _) => s,
        (None, Some(v)) => {
            let mut p = Params::new();
            p.set("seed", v);
            p.take_u64("seed", 1)?
        }
        (None, None) => 1,
    };
    let mut cases = Vec::new();
    for (idx, overrides) in runner::expand_grid(&axes).into_iter().enumerate() {
        let mut p = base.clone();
        for (k, v) in overrides {
            p.set(k, v);
        }
        p.set("seed", ConfigValue::Int((seed_base + idx as u64) as i64));
        cases.push(CaseConfig::from_params(scenario, p)?);
    }
    let workers = workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if workers == 0 {
        return Err(CliError::Usage("--workers must be at least 1".into()));
    }
    Ok(Plan {
        scenario,
        cases,
        out: a.out,
        workers,
    })
}

enum Parsed {
    Plan(Plan),
    Summarize(PathBuf),
}

fn parse(args: Vec<OsString>) -> Result<Parsed, CliError> {
    let cli = Cli::try_parse_from(args).map_err(|e| CliError::Usage(e.render().to_string()))?;
    Ok(match cli.command {
        Command::Run(a) => Parsed::Plan(plan(a, Vec::new(), Some(1), false)?),
        Command::Sweep(s) => Parsed::Plan(plan(s.case, s.grid, s.workers, true)?),
        Command::Summarize { dir } => Parsed::Summarize(dir),
    })
}

/// Parses a command line into a plan without running anything.
pub fn plan_from_args<I, T>(args: I) -> Result<Plan, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    match parse(args.into_iter().map(Into::into).collect())? {
        Parsed::Plan(p) => Ok(p),
        Parsed::Summarize(_) => Err(CliError::Usage("summarize has no case plan".into())),
    }
}

/// Entry point shared by the binary and the tests; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    // Help and version requests are not errors.
    if let Err(e) = Cli::try_parse_from(&args) {
        if !e.use_stderr() {
            let _ = write!(std::io::stdout(), "{}", e.render());
            return 0;
        }
    }
    let mut out = std::io::stdout().lock();
    let result = parse(args).and_then(|p| match p {
        Parsed::Plan(plan) => runner::run_all(&plan.cases, &plan.out, plan.workers).map(|reports| {
            for r in reports {
                let _ = writeln!(out, "{} ({} events, {:.3} s)", r.dir.display(), r.events, r.wall_s);
            }
        }),
        Parsed::Summarize(dir) => runner::summarize_dir(&dir).map(|paths| {
            for p in paths {
                let _ = writeln!(out, "{}", p.display());
            }
        }),
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("trajsim: {}", e.to_string().trim_end());
            e.exit_code()
        }
    }
}
