use proptest::prelude::*;
use trajsim_scenarios::crosshaul::{build_crosshaul, run_case, summarize, xpfe_name, Policy, XhaulConfig, XhaulDelays};

fn short(policy: Policy, n: usize, horizon: f64, seed: u64) -> XhaulConfig {
    XhaulConfig {
        policy,
        n_xpfe: n,
        horizon_s: horizon,
        seed,
        ..Default::default()
    }
}

/// Pollaczek-Khinchine mean wait of the FH+BH mix, written out from the
/// packet laws.
fn pk_fifo_wait() -> f64 {
    let rate = 40e9;
    let lam_fh = 0.375 * rate / 640.0;
    let mean_bytes = (7.0 * 40.0 + 4.0 * 576.0 + 1500.0) / 12.0;
    let lam_bh = 0.375 * rate / (8.0 * mean_bytes);
    let s_fh = 640.0 / rate;
    let bh_s2: f64 = [(7.0, 40.0), (4.0, 576.0), (1.0, 1500.0)]
        .iter()
        .map(|&(w, b): &(f64, f64)| w / 12.0 * (b * 8.0 / rate).powi(2))
        .sum();
    let rho = 0.75;
    (lam_fh * s_fh * s_fh + lam_bh * bh_s2) / (2.0 * (1.0 - rho))
}

#[test]
fn fifo_single_hop_tracks_pk_and_classes_agree() {
    let out = run_case(&short(Policy::Fifo, 1, 0.01, 3)).unwrap();
    let d = XhaulDelays::from_monitor(&out.monitor, 1).unwrap();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (fh, bh) = (mean(&d.fh_hop[0]), mean(&d.bh_hop[0]));
    let oracle = pk_fifo_wait();
    assert!((oracle - 143.8e-9).abs() < 0.5e-9, "oracle {oracle}");
    assert!((fh - oracle).abs() / oracle < 0.15, "fh {fh} vs {oracle}");
    assert!((bh - oracle).abs() / oracle < 0.15, "bh {bh} vs {oracle}");
    assert_eq!(d.bh_dropped, [0]);
}

#[test]
fn tandem_frames_visit_every_hop() {
    let n = 3;
    let out = run_case(&short(Policy::Sp, n, 0.001, 5)).unwrap();
    let finished_frames = out
        .monitor
        .get_mon_arrivals(false)
        .iter()
        .filter(|r| r.finished && r.name.starts_with("fh"))
        .count();
    let visits: usize = (1..=n)
        .map(|h| {
            out.monitor
                .visits_of(&xpfe_name(h))
                .iter()
                .filter(|r| r.finished && r.name.starts_with("fh"))
                .count()
        })
        .sum();
    // Frames still in flight at the end have finished some hops already.
    assert!(visits >= n * finished_frames);
    assert!(visits < n * finished_frames + 3 * n);
}

#[test]
fn preemption_drops_only_backhaul() {
    let out = run_case(&short(Policy::SpPreempt, 1, 0.002, 9)).unwrap();
    let visits = out.monitor.visits_of(&xpfe_name(1));
    let end = visits.iter().map(|r| r.end_time).fold(0.0, f64::max);
    let dropped: Vec<_> = visits.iter().filter(|r| !r.finished && r.end_time < end).collect();
    assert!(!dropped.is_empty());
    assert!(dropped.iter().all(|r| r.name.starts_with("bh")));
    let reported = out.summary.get(&["bh", "1"], "dropped").unwrap();
    assert_eq!(reported, dropped.len() as f64);
}

#[test]
fn non_preemptive_policies_never_drop() {
    for p in [Policy::Fifo, Policy::Sp] {
        let out = run_case(&short(p, 2, 0.001, 2)).unwrap();
        for h in ["1", "2"] {
            assert_eq!(out.summary.get(&["bh", h], "dropped"), Some(0.0));
        }
    }
}

#[test]
fn summary_rows_cover_each_hop_and_path() {
    let out = run_case(&short(Policy::Fifo, 2, 0.0005, 1)).unwrap();
    for g in [["fh", "1"], ["bh", "1"], ["fh", "2"], ["bh", "2"], ["fh", "all"]] {
        let p: Vec<f64> = ["p5", "p25", "p50", "p75", "p95"]
            .iter()
            .map(|s| out.summary.get(&g, s).unwrap())
            .collect();
        assert!(p.windows(2).all(|w| w[0] <= w[1]), "{g:?} {p:?}");
    }
    assert_eq!(summarize(&out.monitor, 2).unwrap().to_csv(), out.summary.to_csv());
}

#[test]
fn same_seed_same_summary() {
    let a = run_case(&short(Policy::SpPreempt, 2, 0.0005, 77)).unwrap();
    let b = run_case(&short(Policy::SpPreempt, 2, 0.0005, 77)).unwrap();
    assert_eq!(a.events, b.events);
    assert_eq!(a.summary.to_csv(), b.summary.to_csv());
}

#[test]
fn invalid_config_is_rejected() {
    assert!(build_crosshaul(&XhaulConfig { fh_share: 1.5, ..Default::default() }).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn waits_are_non_negative_and_frames_conserved(
        pi in 0usize..3,
        n in 1usize..4,
        seed in 0u64..10_000,
    ) {
        let cfg = short(Policy::ALL[pi], n, 0.0002, seed);
        let mut env = build_crosshaul(&cfg).unwrap();
        env.run(cfg.horizon_s).unwrap();
        let generated = env.generated("fh").unwrap();
        let mon = env.finalize();
        let fh_rows = mon.get_mon_arrivals(false).iter().filter(|r| r.name.starts_with("fh")).count();
        prop_assert_eq!(fh_rows as u64, generated);
        let d = XhaulDelays::from_monitor(&mon, n).unwrap();
        for v in d.fh_hop.iter().chain(&d.bh_hop).chain(std::iter::once(&d.fh_total)) {
            prop_assert!(v.iter().all(|&w| w >= 0.0));
        }
    }
}
