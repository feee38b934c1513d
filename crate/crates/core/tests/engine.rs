use std::cell::RefCell;
use std::rc::Rc;

use proptest::prelude::*;
use trajsim_core::{
    Environment, Exponential, Generator, MonitorLevel, Repeat, ResourceSpec, SimError, SubTrajectory,
    Trajectory,
};

fn fixed_gap(gap: f64) -> impl FnMut(&mut trajsim_core::RngStream) -> f64 {
    move |_| gap
}

fn batch_only() -> impl FnMut(&mut trajsim_core::RngStream) -> f64 {
    |_| -1.0
}

type Log = Rc<RefCell<Vec<(f64, String)>>>;

fn logger(log: &Log, tag: &str) -> impl FnOnce(&mut Environment) -> trajsim_core::Result<()> {
    let log = log.clone();
    let tag = tag.to_owned();
    move |env| {
        log.borrow_mut().push((env.now(), tag));
        Ok(())
    }
}

#[test]
fn single_event_fires_at_its_time() {
    let log: Log = Default::default();
    let mut env = Environment::new("t", 1);
    env.schedule(5.0, 0, logger(&log, "a")).unwrap();
    env.run(10.0).unwrap();
    assert_eq!(*log.borrow(), vec![(5.0, "a".to_owned())]);
    assert_eq!(env.now(), 5.0);
}

#[test]
fn higher_event_priority_fires_first() {
    let log: Log = Default::default();
    let mut env = Environment::new("t", 1);
    env.schedule(3.0, 0, logger(&log, "low")).unwrap();
    env.schedule(3.0, 1, logger(&log, "high")).unwrap();
    env.run(10.0).unwrap();
    let order: Vec<_> = log.borrow().iter().map(|(_, t)| t.clone()).collect();
    assert_eq!(order, ["high", "low"]);
}

#[test]
fn scheduling_in_the_past_is_rejected() {
    let mut env = Environment::new("t", 1);
    env.schedule(2.0, 0, |_| Ok(())).unwrap();
    env.run(3.0).unwrap();
    let err = env.schedule(1.0, 0, |_| Ok(())).unwrap_err();
    assert!(matches!(err, SimError::ScheduleInPast { at, now, .. } if at == 1.0 && now == 2.0));
}

#[test]
fn run_with_empty_horizon_processes_nothing() {
    let log: Log = Default::default();
    let mut env = Environment::new("t", 1);
    env.schedule(1.0, 0, logger(&log, "a")).unwrap();
    let report = env.run(0.0).unwrap();
    assert_eq!(report.events, 0);
    assert!(log.borrow().is_empty());
    assert_eq!(env.now(), 0.0);
}

#[test]
fn run_without_events_leaves_clock() {
    let mut env = Environment::new("t", 1);
    let report = env.run(100.0).unwrap();
    assert_eq!(report.events, 0);
    assert_eq!(env.now(), 0.0);
}

#[test]
fn clock_stops_at_horizon_when_events_remain() {
    let mut env = Environment::new("t", 1);
    env.schedule(1.0, 0, |_| Ok(())).unwrap();
    env.schedule(20.0, 0, |_| Ok(())).unwrap();
    env.run(10.0).unwrap();
    assert_eq!(env.now(), 10.0);
    assert_eq!(env.pending_events(), 1);
}

proptest! {
    // Reference oracle: sort (time, -priority, insertion) triples.
    #[test]
    fn event_order_matches_reference_sort(
        events in proptest::collection::vec((0u8..5, -2i32..3), 1..60)
    ) {
        let log: Rc<RefCell<Vec<usize>>> = Default::default();
        let mut env = Environment::new("t", 1);
        for (i, &(t, p)) in events.iter().enumerate() {
            let log = log.clone();
            env.schedule(f64::from(t), p, move |_| {
                log.borrow_mut().push(i);
                Ok(())
            })
            .unwrap();
        }
        env.run(f64::INFINITY).unwrap();
        let mut expected: Vec<(u8, i32, usize)> =
            events.iter().enumerate().map(|(i, &(t, p))| (t, -p, i)).collect();
        expected.sort();
        let expected: Vec<usize> = expected.into_iter().map(|(_, _, i)| i).collect();
        prop_assert_eq!(&*log.borrow(), &expected);
    }
}

#[test]
fn deterministic_generator_emits_on_the_grid() {
    let mut env = Environment::new("t", 1);
    env.add_generator(Generator::new("g", Trajectory::new("idle").timeout(0.0), fixed_gap(1.0)))
        .unwrap();
    env.run(5.5).unwrap();
    let mon = env.finalize();
    let starts: Vec<f64> = mon.get_mon_arrivals(false).iter().map(|r| r.start_time).collect();
    assert_eq!(starts, [1.0, 2.0, 3.0, 4.0, 5.0]);
    let names: Vec<String> = mon.get_mon_arrivals(false).into_iter().map(|r| r.name).collect();
    assert_eq!(names, ["g0", "g1", "g2", "g3", "g4"]);
}

#[test]
fn initial_batch_then_halt() {
    let mut env = Environment::new("t", 1);
    env.add_generator(Generator::new("w", Trajectory::new("w").timeout(1.0), batch_only()).initial_batch(3))
        .unwrap();
    env.run(100.0).unwrap();
    let mon = env.finalize();
    let rows = mon.get_mon_arrivals(false);
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r.start_time == 0.0 && r.end_time == 1.0 && r.finished));
}

#[test]
fn duplicate_generator_is_a_build_error() {
    let mut env = Environment::new("t", 1);
    env.add_generator(Generator::new("g", Trajectory::new("a"), batch_only())).unwrap();
    let err = env.add_generator(Generator::new("g", Trajectory::new("b"), batch_only())).unwrap_err();
    assert!(matches!(err, SimError::DuplicateGenerator(n) if n == "g"));
}

#[test]
fn unknown_resource_is_a_build_error() {
    let mut env = Environment::new("t", 1);
    let err = env
        .add_generator(Generator::new("g", Trajectory::new("a").seize("nope", 1), batch_only()))
        .unwrap_err();
    assert!(matches!(err, SimError::UnknownResource(n) if n == "nope"));
}

#[test]
fn rollback_beyond_start_is_a_build_error() {
    let mut env = Environment::new("t", 1);
    let traj = Trajectory::new("bad").timeout(1.0).rollback(3, Repeat::Times(1));
    let err = env.add_generator(Generator::new("g", traj, batch_only())).unwrap_err();
    assert!(matches!(err, SimError::InvalidTrajectory { .. }));
}

#[test]
fn poisson_arrival_count_within_three_sigma() {
    let mut env = Environment::new("t", 2024);
    let exp = Exponential::new(1.0).unwrap();
    env.add_generator(
        Generator::new("p", Trajectory::new("p"), move |s| exp.sample(s)).monitor(MonitorLevel::Off),
    )
    .unwrap();
    env.run(1e4).unwrap();
    let n = env.generated("p").unwrap() as f64;
    assert!((n - 1e4).abs() <= 300.0, "count {n}");
}

#[test]
fn signal_wakes_waiter_at_same_instant() {
    let mut env = Environment::new("t", 1);
    let meter = Trajectory::new("meter").trap("reading").wait().set_attribute("woke", 1.0);
    env.add_generator(Generator::new("m", meter, batch_only()).initial_batch(2).monitor(MonitorLevel::Full))
        .unwrap();
    let trigger = Trajectory::new("trigger").timeout(7.0).send("reading", 0.0);
    env.add_generator(Generator::new("t", trigger, batch_only()).initial_batch(1)).unwrap();
    env.run(100.0).unwrap();
    let mon = env.finalize();
    let woke = mon.attributes_with_key("woke");
    assert_eq!(woke.len(), 2);
    assert!(woke.iter().all(|r| r.time == 7.0));
}

#[test]
fn signal_without_trap_does_not_wake() {
    let mut env = Environment::new("t", 1);
    let sleeper = Trajectory::new("s").wait().set_attribute("woke", 1.0);
    env.add_generator(Generator::new("s", sleeper, batch_only()).initial_batch(1)).unwrap();
    env.send_signal("reading", 1.0).unwrap();
    env.run(10.0).unwrap();
    assert_eq!(env.arrivals_in_system(), 1);
}

#[test]
fn repeated_signals_resume_each_time() {
    let mut env = Environment::new("t", 1);
    let meter = Trajectory::new("meter")
        .trap("tick")
        .wait()
        .add_global("wakes", 1.0)
        .rollback(2, Repeat::Forever);
    env.add_generator(Generator::new("m", meter, batch_only()).initial_batch(1)).unwrap();
    let trigger = Trajectory::new("trigger")
        .send("tick", 0.0)
        .timeout(3600.0)
        .rollback(2, Repeat::Forever);
    env.add_generator(Generator::new("t", trigger, batch_only()).initial_batch(1)).unwrap();
    env.run(86400.0).unwrap();
    assert_eq!(env.global("wakes"), Some(24.0));
}

#[test]
fn finite_rollback_repeats_exactly() {
    let mut env = Environment::new("t", 1);
    let traj = Trajectory::new("r")
        .add_global("n", 1.0)
        .timeout(1.0)
        .rollback(2, Repeat::Times(3));
    env.add_generator(Generator::new("g", traj, batch_only()).initial_batch(1)).unwrap();
    env.run(100.0).unwrap();
    assert_eq!(env.global("n"), Some(4.0));
    assert_eq!(env.now(), 4.0);
}

#[test]
fn infinite_rollback_runs_until_horizon() {
    let mut env = Environment::new("t", 1);
    let traj = Trajectory::new("loop")
        .add_global("n", 1.0)
        .timeout(1.0)
        .rollback(2, Repeat::Forever);
    env.add_generator(Generator::new("g", traj, batch_only()).initial_batch(1)).unwrap();
    env.run(10.5).unwrap();
    assert_eq!(env.global("n"), Some(11.0));
    assert_eq!(env.now(), 10.5);
}

#[test]
fn zero_timeout_yields_to_queued_same_time_events() {
    let log: Log = Default::default();
    let mut env = Environment::new("t", 1);
    let l2 = log.clone();
    let traj = Trajectory::new("z")
        .timeout(1.0)
        .timeout(0.0)
        .timeout_fn(move |ctx| {
            l2.borrow_mut().push((ctx.now(), "arrival".into()));
            0.0
        });
    env.add_generator(Generator::new("g", traj, batch_only()).initial_batch(1)).unwrap();
    // Inserted after the arrival's first wake-up but before its zero
    // timeout re-enters the queue, so it must run in between.
    let cb = logger(&log, "callback");
    env.schedule(0.5, 0, move |env| {
        env.schedule(1.0, 0, cb)?;
        Ok(())
    })
    .unwrap();
    env.run(10.0).unwrap();
    let order: Vec<_> = log.borrow().iter().map(|(_, t)| t.clone()).collect();
    assert_eq!(order, ["callback", "arrival"]);
    assert!(log.borrow().iter().all(|(t, _)| *t == 1.0));
}

#[test]
fn branch_selects_path_and_skips_on_zero() {
    let mut env = Environment::new("t", 1);
    let traj = Trajectory::new("b")
        .set_attribute("k", 2.0)
        .branch(
            |ctx| ctx.attr_or("k", 0.0) as usize,
            vec![
                SubTrajectory::new(Trajectory::new("one").set_global("path", 1.0)),
                SubTrajectory::new(Trajectory::new("two").set_global("path", 2.0)),
            ],
        )
        .set_attribute("k", 0.0)
        .branch(
            |ctx| ctx.attr_or("k", 0.0) as usize,
            vec![SubTrajectory::new(Trajectory::new("never").set_global("path", 9.0))],
        )
        .set_global("after", 1.0);
    env.add_generator(Generator::new("g", traj, batch_only()).initial_batch(1)).unwrap();
    env.run(1.0).unwrap();
    assert_eq!(env.global("path"), Some(2.0));
    assert_eq!(env.global("after"), Some(1.0));
}

#[test]
fn terminal_branch_ends_the_arrival() {
    let mut env = Environment::new("t", 1);
    let traj = Trajectory::new("b")
        .branch(|_| 1, vec![SubTrajectory::terminal(Trajectory::new("x").timeout(1.0))])
        .set_global("after", 1.0);
    env.add_generator(Generator::new("g", traj, batch_only()).initial_batch(1)).unwrap();
    env.run(10.0).unwrap();
    assert_eq!(env.global("after"), None);
    let mon = env.finalize();
    assert!(mon.get_mon_arrivals(false)[0].finished);
}

#[test]
fn zero_time_loop_is_reported() {
    let mut env = Environment::new("t", 1);
    let traj = Trajectory::new("spin").add_global("n", 1.0).rollback(1, Repeat::Forever);
    env.add_generator(Generator::new("g", traj, batch_only()).initial_batch(1)).unwrap();
    assert!(matches!(env.run(1.0), Err(SimError::InvalidTrajectory { .. })));
}

#[test]
fn mm1_clerk_records_are_consistent() {
    let mut env = Environment::new("bank", 42);
    env.add_resource(ResourceSpec::new("clerk", 1)).unwrap();
    let service = Exponential::new(2.0).unwrap();
    let arrivals = Exponential::new(1.0).unwrap();
    let cust = Trajectory::new("customer")
        .seize("clerk", 1)
        .timeout_fn(move |ctx| service.sample(ctx.rng()))
        .release("clerk", 1);
    env.add_generator(Generator::new("cust", cust, move |s| arrivals.sample(s))).unwrap();
    env.run(1000.0).unwrap();
    let mon = env.finalize();
    let rows = mon.get_mon_arrivals(false);
    assert!(!rows.is_empty());
    for r in rows.iter().filter(|r| r.finished) {
        assert!(r.end_time - r.start_time >= r.activity_time - 1e-12, "{r:?}");
    }
    let visits = mon.get_mon_arrivals(true);
    let done = |rs: &[trajsim_core::ArrivalRecord]| rs.iter().filter(|r| r.finished).count();
    assert_eq!(done(&visits), done(&rows));
    assert_eq!(visits.len() - done(&visits), 1, "one customer in service at the horizon");
}

fn mm1_env(seed: u64, horizon: f64) -> trajsim_core::MonitorStore {
    let mut env = Environment::new("bank", seed);
    env.add_resource(ResourceSpec::new("clerk", 1)).unwrap();
    let service = Exponential::new(2.0).unwrap();
    let arrivals = Exponential::new(1.0).unwrap();
    let cust = Trajectory::new("customer")
        .seize("clerk", 1)
        .timeout_fn(move |ctx| service.sample(ctx.rng()))
        .release("clerk", 1);
    env.add_generator(Generator::new("cust", cust, move |s| arrivals.sample(s))).unwrap();
    env.run(horizon).unwrap();
    env.finalize()
}

#[test]
fn same_seed_gives_byte_identical_exports() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    mm1_env(9, 500.0).export_csv(a.path()).unwrap();
    mm1_env(9, 500.0).export_csv(b.path()).unwrap();
    for f in ["arrivals.csv", "resources.csv", "attributes.csv"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert_eq!(x, y, "{f} differs");
    }
    let c = tempfile::tempdir().unwrap();
    mm1_env(10, 500.0).export_csv(c.path()).unwrap();
    assert_ne!(
        std::fs::read(a.path().join("arrivals.csv")).unwrap(),
        std::fs::read(c.path().join("arrivals.csv")).unwrap()
    );
}

#[test]
fn mm1_mean_wait_converges_to_oracle() {
    let mon = mm1_env(1, 1.0e6);
    let visits = mon.visits_of("clerk");
    assert!(visits.len() >= 990_000);
    let waits = trajsim_core::queueing_delay(&visits, false).unwrap();
    let mean = waits.iter().sum::<f64>() / waits.len() as f64;
    let oracle = trajsim_core::mm1_wq(1.0, 2.0).unwrap();
    assert!((mean - oracle).abs() / oracle < 0.05, "mean wait {mean}");
}

#[test]
fn adding_a_generator_does_not_perturb_others() {
    fn starts(extra: bool) -> Vec<f64> {
        let mut env = Environment::new("t", 5);
        let e = Exponential::new(1.0).unwrap();
        env.add_generator(Generator::new("a", Trajectory::new("a"), move |s| e.sample(s))).unwrap();
        if extra {
            let e2 = Exponential::new(3.0).unwrap();
            env.add_generator(Generator::new("b", Trajectory::new("b"), move |s| e2.sample(s))).unwrap();
        }
        env.run(50.0).unwrap();
        env.finalize()
            .get_mon_arrivals(false)
            .into_iter()
            .filter(|r| r.name.starts_with('a'))
            .map(|r| r.start_time)
            .collect()
    }
    assert_eq!(starts(false), starts(true));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    // Every generated arrival shows up in the lifecycle table exactly once.
    #[test]
    fn arrivals_are_conserved(
        seed in 0u64..1000,
        cap in 1u64..3,
        qs in proptest::option::of(0u64..4),
        horizon in 1.0f64..40.0,
    ) {
        let mut env = Environment::new("c", seed);
        env.add_resource(ResourceSpec::new("r", cap).queue_size(qs)).unwrap();
        let svc = Exponential::new(1.0).unwrap();
        let arr = Exponential::new(1.5).unwrap();
        let traj = Trajectory::new("j")
            .seize("r", 1)
            .timeout_fn(move |ctx| svc.sample(ctx.rng()))
            .release("r", 1);
        env.add_generator(Generator::new("j", traj, move |s| arr.sample(s))).unwrap();
        env.run(horizon).unwrap();
        let generated = env.generated("j").unwrap() as usize;
        let mon = env.finalize();
        let rows = mon.get_mon_arrivals(false);
        prop_assert_eq!(rows.len(), generated);
        let mut names: Vec<_> = rows.iter().map(|r| r.name.clone()).collect();
        names.sort();
        names.dedup();
        prop_assert_eq!(names.len(), generated);
        for r in &rows {
            prop_assert!(r.end_time >= r.start_time);
            prop_assert!(r.activity_time <= r.end_time - r.start_time + 1e-9);
        }
    }
}
