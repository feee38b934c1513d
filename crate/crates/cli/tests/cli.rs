use std::fs;
use std::path::{Path, PathBuf};

use proptest::prelude::*;
use trajsim_cli::config::{parse_config, ConfigValue};
use trajsim_cli::runner::{expand_grid, read_manifest, MANIFEST};
use trajsim_cli::scenario::CaseConfig;
use trajsim_cli::{main_with_args, plan_from_args};
use trajsim_scenarios::miot::MiotConfig;

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str]) -> u8 {
    let mut v = vec!["trajsim"];
    v.extend_from_slice(args);
    main_with_args(v)
}

fn out_arg(dir: &Path) -> String {
    dir.to_str().unwrap().to_owned()
}

#[test]
fn run_writes_the_case_files() {
    let tmp = tempfile::tempdir().unwrap();
    let out = out_arg(tmp.path());
    let code = run(&[
        "run", "xhaul", "--policy", "sp_preempt", "--n-xpfe", "5", "--seed", "42", "--horizon-s", "0.0002",
        "--out", &out,
    ]);
    assert_eq!(code, 0);
    let case = tmp.path().join("case-0");
    for f in ["arrivals.csv", "resources.csv", "attributes.csv", "summary.csv", MANIFEST] {
        assert!(case.join(f).is_file(), "{f}");
    }
    let (cfg, _) = read_manifest(&case).unwrap();
    let CaseConfig::Xhaul(x) = cfg else { panic!("wrong scenario") };
    assert_eq!((x.n_xpfe, x.seed, x.policy.as_str()), (5, 42, "sp_preempt"));
    let manifest = fs::read_to_string(case.join(MANIFEST)).unwrap();
    assert!(manifest.contains("events = "));
    assert!(manifest.contains("wall_time_s = "));
}

/// Every file of every case, with the wall time line dropped from manifests.
fn snapshot(root: &Path) -> Vec<(String, String)> {
    let mut files = Vec::new();
    for case in fs::read_dir(root).unwrap() {
        let case = case.unwrap().path();
        for f in fs::read_dir(&case).unwrap() {
            let f = f.unwrap().path();
            let mut text = fs::read_to_string(&f).unwrap();
            if f.ends_with(MANIFEST) {
                text = text.lines().filter(|l| !l.starts_with("wall_time_s")).collect::<Vec<_>>().join("\n");
            }
            files.push((f.strip_prefix(root).unwrap().display().to_string(), text));
        }
    }
    files.sort();
    files
}

#[test]
fn parallel_and_serial_sweeps_match() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let common = ["--grid", "policy=fifo,sp,sp_preempt", "n_xpfe=1,2,5", "--horizon-s", "0.0001"];
    let mut par = vec!["sweep", "xhaul"];
    par.extend(common);
    let (oa, ob) = (out_arg(a.path()), out_arg(b.path()));
    par.extend(["--workers", "4", "--out", &oa]);
    let mut ser = vec!["sweep", "xhaul"];
    ser.extend(common);
    ser.extend(["--workers", "1", "--out", &ob]);
    assert_eq!(run(&par), 0);
    assert_eq!(run(&ser), 0);
    let (sa, sb) = (snapshot(a.path()), snapshot(b.path()));
    assert_eq!(sa.len(), 9 * 5);
    assert_eq!(sa, sb);
}

#[test]
fn mm1_summary_reports_oracle() {
    let tmp = tempfile::tempdir().unwrap();
    let out = out_arg(tmp.path());
    assert_eq!(run(&["run", "mm1", "--lambda", "1", "--mu", "2", "--arrivals", "2e5", "--out", &out]), 0);
    let text = fs::read_to_string(tmp.path().join("case-0/summary.csv")).unwrap();
    let get = |stat: &str| -> f64 {
        let line = text.lines().find(|l| l.starts_with(&format!("server,{stat},"))).unwrap();
        line.rsplit(',').next().unwrap().parse().unwrap()
    };
    assert_eq!(get("wq_oracle"), 0.5);
    assert!((get("wq_mean") - 0.5).abs() < 0.05, "{}", get("wq_mean"));
    assert_eq!(get("count"), 2e5);
}

#[test]
fn summarize_rebuilds_identical_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let cases: [(&str, &[&str]); 3] = [
        ("xhaul", &["--n-xpfe", "2", "--horizon-s", "0.0002"]),
        ("pon", &["--grant-limit-bytes", "1500", "--horizon-s", "0.02"]),
        ("miot", &["--n-devices", "50", "--horizon-s", "4000", "--sync-window-s", "5"]),
    ];
    for (scenario, extra) in cases {
        let dir = tmp.path().join(scenario);
        let out = out_arg(&dir);
        let mut args = vec!["run", scenario, "--out", &out];
        args.extend_from_slice(extra);
        assert_eq!(run(&args), 0, "{scenario}");
        let summary = dir.join("case-0/summary.csv");
        let before = fs::read_to_string(&summary).unwrap();
        fs::remove_file(&summary).unwrap();
        assert_eq!(run(&["summarize", &out]), 0);
        assert_eq!(fs::read_to_string(&summary).unwrap(), before, "{scenario}");
    }
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = out_arg(tmp.path());
    assert_eq!(run(&["run", "nope", "--out", &out]), 2);
    assert_eq!(run(&["run", "xhaul", "--colour", "red", "--out", &out]), 2);
    assert_eq!(run(&["run", "pon", "--mode", "rrh", "--cell-rate-bps", "1e8", "--out", &out]), 2);
    assert_eq!(run(&["run", "xhaul", "--n-xpfe", "1,2", "--out", &out]), 2);
    assert_eq!(run(&["frobnicate"]), 2);
    // Output below a regular file cannot be created.
    let blocker = tmp.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let bad = out_arg(&blocker.join("sub"));
    assert_eq!(run(&["run", "mm1", "--arrivals", "10", "--out", &bad]), 1);
    // Missing monitor files.
    assert_eq!(run(&["run", "mm1", "--arrivals", "10", "--out", &out]), 0);
    fs::remove_file(tmp.path().join("case-0/resources.csv")).unwrap();
    assert_eq!(run(&["summarize", &out]), 1);
    assert_eq!(run(&["summarize", &out_arg(&tmp.path().join("absent"))]), 1);
}

#[test]
fn sweep_seeds_are_base_plus_index() {
    let plan = plan_from_args([
        "trajsim", "sweep", "pon", "--grid", "grant_limit_bytes=1500,Inf", "mode=smallcell,rrh", "--seed", "10",
    ])
    .unwrap();
    let seeds: Vec<u64> = plan.cases.iter().map(CaseConfig::seed).collect();
    assert_eq!(seeds, [10, 11, 12, 13]);
    let CaseConfig::Pon(third) = &plan.cases[2] else { panic!() };
    assert_eq!(third.grant_limit_bytes, None);
    assert_eq!(third.mode.as_str(), "smallcell");
}

#[test]
fn flags_override_config_and_set() {
    let cfg = configs_dir().join("xhaul.conf");
    let plan = plan_from_args([
        "trajsim",
        "run",
        "xhaul",
        "--config",
        cfg.to_str().unwrap(),
        "--set",
        "n_xpfe=3",
        "--set",
        "policy=sp",
        "--policy",
        "sp_preempt",
    ])
    .unwrap();
    let CaseConfig::Xhaul(x) = &plan.cases[0] else { panic!() };
    assert_eq!((x.n_xpfe, x.policy.as_str()), (3, "sp_preempt"));
    // A config for another scenario is refused.
    let other = configs_dir().join("pon.conf");
    assert!(plan_from_args(["trajsim", "run", "xhaul", "--config", other.to_str().unwrap()]).is_err());
}

#[test]
fn shipped_configs_load() {
    let expect = [
        ("mm1.conf", "mm1", 1),
        ("xhaul.conf", "xhaul", 1),
        ("xhaul-grid.conf", "xhaul", 15),
        ("pon.conf", "pon", 1),
        ("pon-grid.conf", "pon", 4),
        ("miot.conf", "miot", 1),
        ("miot-grid.conf", "miot", 12),
    ];
    for (file, scenario, n) in expect {
        let path = configs_dir().join(file);
        let plan =
            plan_from_args(["trajsim", "sweep", scenario, "--config", path.to_str().unwrap()]).unwrap();
        assert_eq!(plan.cases.len(), n, "{file}");
    }
    // The library defaults mirror the shipped assumption file.
    let path = configs_dir().join("miot.conf");
    let plan = plan_from_args(["trajsim", "run", "miot", "--config", path.to_str().unwrap()]).unwrap();
    assert_eq!(plan.cases[0], CaseConfig::Miot(MiotConfig::default()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn grid_expansion_is_a_full_product(sizes in proptest::collection::vec(1usize..4, 0..4)) {
        let axes: Vec<(String, Vec<ConfigValue>)> = sizes
            .iter()
            .enumerate()
            .map(|(i, &n)| (format!("k{i}"), (0..n as i64).map(ConfigValue::Int).collect()))
            .collect();
        let cases = expand_grid(&axes);
        prop_assert_eq!(cases.len(), sizes.iter().product::<usize>());
        let mut rendered: Vec<String> = cases.iter().map(|c| format!("{c:?}")).collect();
        rendered.sort();
        rendered.dedup();
        prop_assert_eq!(rendered.len(), cases.len());
    }

    #[test]
    fn rendered_reals_parse_back(x in -1e12f64..1e12) {
        let text = format!("x = {}\n", trajsim_core::fmt_real(x));
        let back = parse_config(&text, "t").unwrap();
        let v = match &back[0].1 {
            ConfigValue::Real(r) => *r,
            ConfigValue::Int(i) => *i as f64,
            other => panic!("{other:?}"),
        };
        prop_assert_eq!(v, x);
    }
}
