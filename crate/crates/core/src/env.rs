//! The simulation environment: clock, future event list, arrivals stepping
//! through compiled trajectories, generators and broadcast signals.
//!
//! Events are totally ordered by `(time asc, priority desc, insertion asc)`.
//! Everything that happens "at the same instant" goes through the event
//! list, including zero-length timeouts and wake-ups after a grant, so the
//! interleaving of simultaneous actions is governed by that single rule.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::fmt;
use std::rc::Rc;

use crate::error::{Result, SimError};
use crate::monitor::MonitorStore;
use crate::resource::{ArrivalKey, PreemptFate, QueueKey, RequestOutcome, Resource, ResourceSpec, ServiceSlot};
use crate::rng::{stream_key, RngStream};
use crate::trajectory::{
    Activity, AttributeMode, CapacityMode, Predicate, Repeat, ResourceRef, SelectPolicy, Selector,
    Trajectory, Value,
};
use crate::SimTime;

/// Ops executed inline by one arrival without suspending before the
/// environment assumes a zero-time loop.
const INLINE_BUDGET: u64 = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EventId(pub u64);

type Callback = Box<dyn FnOnce(&mut Environment) -> Result<()>>;

enum Action {
    Resume { slot: u32, token: u64 },
    Generate { gen: u32, batch: bool },
    Deliver { signal: u32 },
    Callback(Callback),
}

struct Event {
    at: SimTime,
    priority: i32,
    seq: u64,
    action: Action,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    // BinaryHeap pops the greatest element, so "fires first" must compare greatest.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .at
            .total_cmp(&self.at)
            .then(self.priority.cmp(&other.priority))
            .then(other.seq.cmp(&self.seq))
    }
}

/// How much a generator's arrivals report to the monitor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default)]
pub enum MonitorLevel {
    Off,
    /// Lifecycle and per-resource arrival records.
    #[default]
    Arrivals,
    /// Arrival records plus every attribute change.
    Full,
}

/// A source of arrivals that all follow one trajectory.
pub struct Generator {
    name: String,
    trajectory: Trajectory,
    interarrival: Box<dyn FnMut(&mut RngStream) -> f64>,
    initial_batch: usize,
    priority: i32,
    preemptible: bool,
    restart: bool,
    monitor: MonitorLevel,
    attribute_keys: Option<Vec<String>>,
}

impl Generator {
    /// `interarrival` is called with the generator's own stream; a negative
    /// (or non-finite) value stops the generator.
    pub fn new(
        name: impl Into<String>,
        trajectory: Trajectory,
        interarrival: impl FnMut(&mut RngStream) -> f64 + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            trajectory,
            interarrival: Box::new(interarrival),
            initial_batch: 0,
            priority: 0,
            preemptible: true,
            restart: true,
            monitor: MonitorLevel::Arrivals,
            attribute_keys: None,
        }
    }

    /// Emit `n` arrivals at the instant the generator is added.
    pub fn initial_batch(mut self, n: usize) -> Self {
        self.initial_batch = n;
        self
    }

    pub fn priority(mut self, priority: i32) -> Self {
        self.priority = priority;
        self
    }

    pub fn preemptible(mut self, preemptible: bool) -> Self {
        self.preemptible = preemptible;
        self
    }

    /// Whether a preempted and requeued arrival restarts its interrupted
    /// timeout from scratch (`true`) or resumes the remainder.
    pub fn restart(mut self, restart: bool) -> Self {
        self.restart = restart;
        self
    }

    pub fn monitor(mut self, level: MonitorLevel) -> Self {
        self.monitor = level;
        self
    }

    /// Only record these attribute keys (implies [`MonitorLevel::Full`]).
    pub fn monitor_keys<S: Into<String>>(mut self, keys: impl IntoIterator<Item = S>) -> Self {
        self.monitor = MonitorLevel::Full;
        self.attribute_keys = Some(keys.into_iter().map(Into::into).collect());
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }
}

impl fmt::Debug for Generator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Generator")
            .field("name", &self.name)
            .field("trajectory", &self.trajectory.name())
            .field("initial_batch", &self.initial_batch)
            .field("priority", &self.priority)
            .finish_non_exhaustive()
    }
}

#[derive(Clone, Copy)]
enum Res {
    Idx(usize),
    Selected,
}

type Branch = (Rc<Program>, bool);

enum Op {
    Timeout(Value),
    Seize {
        res: Res,
        amount: Value,
        post: Option<Branch>,
        reject: Option<Branch>,
    },
    Release {
        res: Res,
        amount: Value,
    },
    SetCapacity {
        res: Res,
        value: Value,
        mode: CapacityMode,
    },
    SetAttribute {
        key: u32,
        value: Value,
        mode: AttributeMode,
        global: bool,
    },
    SetPrioritization {
        priority: i32,
        preemptible: bool,
        restart: bool,
    },
    Rollback {
        steps: usize,
        times: Repeat,
        check: Option<Predicate>,
        slot: u32,
    },
    Branch {
        selector: Selector,
        paths: Vec<Branch>,
    },
    Select {
        resources: Vec<usize>,
        selector: usize,
    },
    Trap(u32),
    Wait,
    Send {
        signal: u32,
        delay: Value,
    },
    Log(Rc<str>),
}

struct Program {
    name: Rc<str>,
    ops: Vec<Op>,
}

struct Frame {
    program: Rc<Program>,
    pc: usize,
    continue_after: bool,
}

struct Held {
    res: usize,
    amount: u64,
    requested_at: SimTime,
    activity: SimTime,
}

struct Pending {
    res: usize,
    key: QueueKey,
    amount: u64,
    requested_at: SimTime,
    activity: SimTime,
    post: Option<Branch>,
}

#[derive(Clone, Copy)]
struct RunningTimeout {
    start: SimTime,
    duration: SimTime,
}

struct Arrival {
    uid: u64,
    name: u32,
    gen: u32,
    created: SimTime,
    priority: i32,
    preemptible: bool,
    restart: bool,
    attrs: Vec<(u32, f64)>,
    frames: Vec<Frame>,
    held: Vec<Held>,
    pending: Option<Pending>,
    selected: Option<usize>,
    activity_time: SimTime,
    timeout: Option<RunningTimeout>,
    paused: Option<SimTime>,
    waiting_signal: bool,
    trapped: Vec<u32>,
    rollbacks: Vec<(u32, u64)>,
}

impl Arrival {
    fn attr(&self, key: u32) -> Option<f64> {
        self.attrs.iter().find(|(k, _)| *k == key).map(|&(_, v)| v)
    }

    fn set_attr(&mut self, key: u32, value: f64) {
        match self.attrs.iter_mut().find(|(k, _)| *k == key) {
            Some(e) => e.1 = value,
            None => self.attrs.push((key, value)),
        }
    }
}

struct Slot {
    token: u64,
    uid: u64,
    arrival: Option<Arrival>,
}

struct GenState {
    prefix: String,
    program: Rc<Program>,
    interarrival: Box<dyn FnMut(&mut RngStream) -> f64>,
    initial_batch: usize,
    priority: i32,
    preemptible: bool,
    restart: bool,
    level: MonitorLevel,
    key_filter: Option<Vec<u32>>,
    stream: RngStream,
    activity_rng: RngStream,
    emitted: u64,
    active: bool,
}

struct SelectState {
    policy: SelectPolicy,
    next: usize,
    rng: RngStream,
}

struct SignalState {
    name: String,
    subscribers: Vec<ArrivalKey>,
}

enum Flow {
    Continue,
    Suspend,
    Gone,
}

/// Read-only view of the simulation handed to dynamic activity values,
/// branch selectors and rollback checks.
pub struct ActivityCtx<'a> {
    now: SimTime,
    name: &'a str,
    attrs: &'a [(u32, f64)],
    globals: &'a [Option<f64>],
    monitor: &'a MonitorStore,
    resources: &'a [Resource],
    resource_index: &'a HashMap<String, usize>,
    selected: Option<usize>,
    rng: &'a mut RngStream,
}

impl ActivityCtx<'_> {
    pub fn now(&self) -> SimTime {
        self.now
    }

    /// Name of the arrival executing the activity.
    pub fn name(&self) -> &str {
        self.name
    }

    pub fn attr(&self, key: &str) -> Option<f64> {
        let id = self.monitor.lookup_key(key)?;
        self.attrs.iter().find(|(k, _)| *k == id).map(|&(_, v)| v)
    }

    pub fn attr_or(&self, key: &str, default: f64) -> f64 {
        self.attr(key).unwrap_or(default)
    }

    pub fn global(&self, key: &str) -> Option<f64> {
        let id = self.monitor.lookup_key(key)?;
        self.globals.get(id as usize).copied().flatten()
    }

    pub fn resource(&self, name: &str) -> Option<&Resource> {
        self.resource_index.get(name).map(|&i| &self.resources[i])
    }

    /// The resource picked by the arrival's latest `Select`.
    pub fn selected(&self) -> Option<&Resource> {
        self.selected.map(|i| &self.resources[i])
    }

    /// The random stream of the arrival's generator.
    pub fn rng(&mut self) -> &mut RngStream {
        self.rng
    }
}

/// Summary of one call to [`Environment::run`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunReport {
    pub events: u64,
    pub now: SimTime,
}

pub struct Environment {
    name: String,
    seed: u64,
    now: SimTime,
    seq: u64,
    events: BinaryHeap<Event>,
    processed: u64,
    resources: Vec<Resource>,
    resource_index: HashMap<String, usize>,
    resource_mon: Vec<u32>,
    gens: Vec<GenState>,
    gen_index: HashMap<String, usize>,
    slab: Vec<Slot>,
    free: Vec<u32>,
    next_uid: u64,
    selectors: Vec<SelectState>,
    rollback_slots: u32,
    signals: Vec<SignalState>,
    signal_index: HashMap<String, u32>,
    globals: Vec<Option<f64>>,
    monitor: MonitorStore,
}

impl fmt::Debug for Environment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Environment")
            .field("name", &self.name)
            .field("seed", &self.seed)
            .field("now", &self.now)
            .field("pending_events", &self.events.len())
            .field("processed", &self.processed)
            .finish_non_exhaustive()
    }
}

impl Environment {
    pub fn new(name: impl Into<String>, seed: u64) -> Self {
        Self {
            name: name.into(),
            seed,
            now: 0.0,
            seq: 0,
            events: BinaryHeap::new(),
            processed: 0,
            resources: Vec::new(),
            resource_index: HashMap::new(),
            resource_mon: Vec::new(),
            gens: Vec::new(),
            gen_index: HashMap::new(),
            slab: Vec::new(),
            free: Vec::new(),
            next_uid: 0,
            selectors: Vec::new(),
            rollback_slots: 0,
            signals: Vec::new(),
            signal_index: HashMap::new(),
            globals: Vec::new(),
            monitor: MonitorStore::new(0),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    /// Events executed so far (cancelled wake-ups are not counted).
    pub fn events_processed(&self) -> u64 {
        self.processed
    }

    pub fn pending_events(&self) -> usize {
        self.events.len()
    }

    pub fn monitor(&self) -> &MonitorStore {
        &self.monitor
    }

    pub fn set_replication(&mut self, replication: u32) {
        self.monitor.set_replication(replication);
    }

    pub fn resource(&self, name: &str) -> Option<&Resource> {
        self.resource_index.get(name).map(|&i| &self.resources[i])
    }

    pub fn global(&self, key: &str) -> Option<f64> {
        let id = self.monitor.lookup_key(key)?;
        self.globals.get(id as usize).copied().flatten()
    }

    /// Number of arrivals a generator has emitted.
    pub fn generated(&self, generator: &str) -> Option<u64> {
        self.gen_index.get(generator).map(|&g| self.gens[g].emitted)
    }

    /// Arrivals currently in the system.
    pub fn arrivals_in_system(&self) -> usize {
        self.slab.len() - self.free.len()
    }

    pub fn add_resource(&mut self, spec: ResourceSpec) -> Result<&mut Self> {
        if self.resource_index.contains_key(&spec.name) {
            return Err(SimError::DuplicateResource(spec.name));
        }
        let idx = self.resources.len();
        self.resource_index.insert(spec.name.clone(), idx);
        self.resource_mon.push(self.monitor.resource_id(&spec.name));
        self.resources.push(Resource::new(spec));
        self.record_resource(idx);
        Ok(self)
    }

    /// Registers a generator. Its trajectory is compiled now, so references
    /// to unknown resources fail here rather than during the run.
    pub fn add_generator(&mut self, gen: Generator) -> Result<&mut Self> {
        if self.gen_index.contains_key(&gen.name) {
            return Err(SimError::DuplicateGenerator(gen.name));
        }
        let g = self.gens.len() as u32;
        let mut resized = HashSet::new();
        let mut select_ordinal = 2u32;
        let program = self.compile(&gen.trajectory, g, &mut select_ordinal, &mut resized)?;
        self.warn_oversized(&program, &resized);
        let key_filter = gen
            .attribute_keys
            .as_ref()
            .map(|keys| keys.iter().map(|k| self.monitor.key_id(k)).collect());
        let mut state = GenState {
            prefix: gen.name.clone(),
            program,
            interarrival: gen.interarrival,
            initial_batch: gen.initial_batch,
            priority: gen.priority,
            preemptible: gen.preemptible,
            restart: gen.restart,
            level: gen.monitor,
            key_filter,
            stream: RngStream::new(self.seed, stream_key(g, 0)),
            activity_rng: RngStream::new(self.seed, stream_key(g, 1)),
            emitted: 0,
            active: true,
        };
        let first = if state.initial_batch > 0 {
            Some((self.now, true))
        } else {
            let d = (state.interarrival)(&mut state.stream);
            (d >= 0.0 && d.is_finite()).then_some((self.now + d, false))
        };
        state.active = first.is_some();
        self.gen_index.insert(gen.name, g as usize);
        self.gens.push(state);
        if let Some((at, batch)) = first {
            self.push_event(at, 0, Action::Generate { gen: g, batch });
        }
        Ok(self)
    }

    fn compile(
        &mut self,
        traj: &Trajectory,
        gen: u32,
        select_ordinal: &mut u32,
        resized: &mut HashSet<usize>,
    ) -> Result<Rc<Program>> {
        let invalid = |reason: String| SimError::InvalidTrajectory {
            trajectory: traj.name().to_owned(),
            reason,
        };
        let mut ops = Vec::with_capacity(traj.len());
        for (pos, act) in traj.activities().iter().enumerate() {
            let op = match act {
                Activity::Timeout(v) => Op::Timeout(v.clone()),
                Activity::Seize {
                    resource,
                    amount,
                    post_seize,
                    reject,
                } => {
                    let mut sub = |s: &Option<crate::trajectory::SubTrajectory>| -> Result<Option<Branch>> {
                        s.as_ref()
                            .map(|s| {
                                Ok((
                                    self.compile(&s.trajectory, gen, select_ordinal, resized)?,
                                    s.continue_after,
                                ))
                            })
                            .transpose()
                    };
                    let post = sub(post_seize)?;
                    let reject = sub(reject)?;
                    Op::Seize {
                        res: self.resolve(resource)?,
                        amount: amount.clone(),
                        post,
                        reject,
                    }
                }
                Activity::Release { resource, amount } => Op::Release {
                    res: self.resolve(resource)?,
                    amount: amount.clone(),
                },
                Activity::SetCapacity {
                    resource,
                    value,
                    mode,
                } => {
                    let res = self.resolve(resource)?;
                    if let Res::Idx(i) = res {
                        resized.insert(i);
                    }
                    Op::SetCapacity {
                        res,
                        value: value.clone(),
                        mode: *mode,
                    }
                }
                Activity::SetAttribute {
                    key,
                    value,
                    mode,
                    global,
                } => Op::SetAttribute {
                    key: self.monitor.key_id(key),
                    value: value.clone(),
                    mode: *mode,
                    global: *global,
                },
                Activity::SetPrioritization {
                    priority,
                    preemptible,
                    restart,
                } => Op::SetPrioritization {
                    priority: *priority,
                    preemptible: *preemptible,
                    restart: *restart,
                },
                Activity::Rollback {
                    steps,
                    times,
                    check,
                } => {
                    if *steps > pos {
                        return Err(invalid(format!(
                            "rollback at position {pos} goes back {steps} activities"
                        )));
                    }
                    let slot = self.rollback_slots;
                    self.rollback_slots += 1;
                    Op::Rollback {
                        steps: *steps,
                        times: *times,
                        check: check.clone(),
                        slot,
                    }
                }
                Activity::Branch { selector, paths } => {
                    if paths.is_empty() {
                        return Err(invalid("branch without paths".into()));
                    }
                    let paths = paths
                        .iter()
                        .map(|p| {
                            Ok((
                                self.compile(&p.trajectory, gen, select_ordinal, resized)?,
                                p.continue_after,
                            ))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    Op::Branch {
                        selector: selector.clone(),
                        paths,
                    }
                }
                Activity::Select { resources, policy } => {
                    if resources.is_empty() {
                        return Err(invalid("select from an empty resource list".into()));
                    }
                    let resources = resources
                        .iter()
                        .map(|r| {
                            self.resource_index
                                .get(r)
                                .copied()
                                .ok_or_else(|| SimError::UnknownResource(r.clone()))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    let selector = self.selectors.len();
                    self.selectors.push(SelectState {
                        policy: *policy,
                        next: 0,
                        rng: RngStream::new(self.seed, stream_key(gen, *select_ordinal)),
                    });
                    *select_ordinal += 1;
                    Op::Select {
                        resources,
                        selector,
                    }
                }
                Activity::Trap(s) => Op::Trap(self.signal_id(s)),
                Activity::WaitSignal => Op::Wait,
                Activity::Send { signal, delay } => Op::Send {
                    signal: self.signal_id(signal),
                    delay: delay.clone(),
                },
                Activity::Log(m) => Op::Log(Rc::from(m.as_str())),
            };
            ops.push(op);
        }
        Ok(Rc::new(Program {
            name: Rc::from(traj.name()),
            ops,
        }))
    }

    fn warn_oversized(&self, program: &Program, resized: &HashSet<usize>) {
        for op in &program.ops {
            if let Op::Seize {
                res: Res::Idx(i),
                amount: Value::Fixed(a),
                ..
            } = op
            {
                let r = &self.resources[*i];
                if *a > r.capacity() as f64 && !resized.contains(i) {
                    log::warn!(
                        "trajectory `{}` seizes {a} units of `{}` whose capacity is {}",
                        program.name,
                        r.name(),
                        r.capacity()
                    );
                }
            }
        }
    }

    fn resolve(&self, r: &ResourceRef) -> Result<Res> {
        match r {
            ResourceRef::Selected => Ok(Res::Selected),
            ResourceRef::Named(n) => self
                .resource_index
                .get(n)
                .map(|&i| Res::Idx(i))
                .ok_or_else(|| SimError::UnknownResource(n.clone())),
        }
    }

    fn signal_id(&mut self, name: &str) -> u32 {
        if let Some(&id) = self.signal_index.get(name) {
            return id;
        }
        let id = self.signals.len() as u32;
        self.signals.push(SignalState {
            name: name.to_owned(),
            subscribers: Vec::new(),
        });
        self.signal_index.insert(name.to_owned(), id);
        id
    }

    fn push_event(&mut self, at: SimTime, priority: i32, action: Action) -> EventId {
        let seq = self.seq;
        self.seq += 1;
        self.events.push(Event {
            at,
            priority,
            seq,
            action,
        });
        EventId(seq)
    }

    /// Schedules a callback. Higher `priority` fires first among events at
    /// the same time; equal priorities fire in insertion order.
    pub fn schedule(
        &mut self,
        at: SimTime,
        priority: i32,
        action: impl FnOnce(&mut Environment) -> Result<()> + 'static,
    ) -> Result<EventId> {
        if !(at >= self.now) {
            return Err(SimError::ScheduleInPast {
                event: format!("#{} (priority {priority})", self.seq),
                at,
                now: self.now,
            });
        }
        Ok(self.push_event(at, priority, Action::Callback(Box::new(action))))
    }

    /// Delivers `signal` to its waiting subscribers after `delay`.
    pub fn send_signal(&mut self, signal: &str, delay: SimTime) -> Result<EventId> {
        if !(delay >= 0.0) {
            return Err(SimError::InvalidArgument(format!("negative signal delay {delay}")));
        }
        let id = self.signal_id(signal);
        Ok(self.push_event(self.now + delay, 0, Action::Deliver { signal: id }))
    }

    /// Processes every event firing strictly before `until`. Afterwards the
    /// clock reads `until` if later events remain, or the time of the last
    /// processed event otherwise.
    pub fn run(&mut self, until: SimTime) -> Result<RunReport> {
        let start = self.processed;
        while let Some(ev) = self.events.peek() {
            if !(ev.at < until) {
                break;
            }
            let ev = self.events.pop().expect("peeked");
            self.now = ev.at;
            self.dispatch(ev.action)?;
        }
        if !self.events.is_empty() && until.is_finite() && until > self.now {
            self.now = until;
        }
        Ok(RunReport {
            events: self.processed - start,
            now: self.now,
        })
    }

    /// Processes a single event. Returns false when none is left.
    pub fn step(&mut self) -> Result<bool> {
        let Some(ev) = self.events.pop() else {
            return Ok(false);
        };
        self.now = ev.at;
        self.dispatch(ev.action)?;
        Ok(true)
    }

    fn dispatch(&mut self, action: Action) -> Result<()> {
        match action {
            Action::Resume { slot, token } => {
                let s = &mut self.slab[slot as usize];
                if s.token != token || s.arrival.is_none() {
                    return Ok(());
                }
                self.processed += 1;
                let now = self.now;
                let a = s.arrival.as_mut().expect("checked");
                if let Some(t) = a.timeout.take() {
                    let _ = now;
                    a.activity_time += t.duration;
                    for h in &mut a.held {
                        h.activity += t.duration;
                    }
                }
                self.advance(slot)
            }
            Action::Generate { gen, batch } => {
                self.processed += 1;
                self.generate(gen, batch)
            }
            Action::Deliver { signal } => {
                self.processed += 1;
                self.deliver(signal);
                Ok(())
            }
            Action::Callback(f) => {
                self.processed += 1;
                f(self)
            }
        }
    }

    fn generate(&mut self, g: u32, batch: bool) -> Result<()> {
        let n = if batch {
            self.gens[g as usize].initial_batch
        } else {
            1
        };
        let created: Vec<u32> = (0..n).map(|_| self.create_arrival(g)).collect();
        let gs = &mut self.gens[g as usize];
        let d = (gs.interarrival)(&mut gs.stream);
        if d >= 0.0 && d.is_finite() {
            let at = self.now + d;
            self.push_event(at, 0, Action::Generate { gen: g, batch: false });
        } else {
            gs.active = false;
        }
        for slot in created {
            self.advance(slot)?;
        }
        Ok(())
    }

    fn create_arrival(&mut self, g: u32) -> u32 {
        let gs = &mut self.gens[g as usize];
        let name = format!("{}{}", gs.prefix, gs.emitted);
        gs.emitted += 1;
        let frame = Frame {
            program: gs.program.clone(),
            pc: 0,
            continue_after: false,
        };
        let (priority, preemptible, restart) = (gs.priority, gs.preemptible, gs.restart);
        let name = self.monitor.add_arrival_name(name);
        let uid = self.next_uid;
        self.next_uid += 1;
        let arrival = Arrival {
            uid,
            name,
            gen: g,
            created: self.now,
            priority,
            preemptible,
            restart,
            attrs: Vec::new(),
            frames: vec![frame],
            held: Vec::new(),
            pending: None,
            selected: None,
            activity_time: 0.0,
            timeout: None,
            paused: None,
            waiting_signal: false,
            trapped: Vec::new(),
            rollbacks: Vec::new(),
        };
        match self.free.pop() {
            Some(slot) => {
                let s = &mut self.slab[slot as usize];
                s.token += 1;
                s.uid = uid;
                s.arrival = Some(arrival);
                slot
            }
            None => {
                self.slab.push(Slot {
                    token: 0,
                    uid,
                    arrival: Some(arrival),
                });
                (self.slab.len() - 1) as u32
            }
        }
    }

    fn arrival(&self, slot: u32) -> &Arrival {
        self.slab[slot as usize].arrival.as_ref().expect("live arrival")
    }

    fn arrival_mut(&mut self, slot: u32) -> &mut Arrival {
        self.slab[slot as usize].arrival.as_mut().expect("live arrival")
    }

    fn key_of(&self, slot: u32) -> ArrivalKey {
        ArrivalKey {
            slot,
            uid: self.slab[slot as usize].uid,
        }
    }

    fn is_alive(&self, key: ArrivalKey) -> bool {
        let s = &self.slab[key.slot as usize];
        s.uid == key.uid && s.arrival.is_some()
    }

    fn arrival_label(&self, slot: u32) -> String {
        self.monitor.arrival_name(self.arrival(slot).name).to_owned()
    }

    fn eval(&mut self, slot: u32, value: &Value) -> f64 {
        match value {
            Value::Fixed(v) => *v,
            Value::Dynamic(f) => {
                let a = self.slab[slot as usize].arrival.as_ref().expect("live arrival");
                let mut ctx = ActivityCtx {
                    now: self.now,
                    name: self.monitor.arrival_name(a.name),
                    attrs: &a.attrs,
                    globals: &self.globals,
                    monitor: &self.monitor,
                    resources: &self.resources,
                    resource_index: &self.resource_index,
                    selected: a.selected,
                    rng: &mut self.gens[a.gen as usize].activity_rng,
                };
                f(&mut ctx)
            }
        }
    }

    fn with_ctx<R>(&mut self, slot: u32, f: impl FnOnce(&mut ActivityCtx<'_>) -> R) -> R {
        let a = self.slab[slot as usize].arrival.as_ref().expect("live arrival");
        let mut ctx = ActivityCtx {
            now: self.now,
            name: self.monitor.arrival_name(a.name),
            attrs: &a.attrs,
            globals: &self.globals,
            monitor: &self.monitor,
            resources: &self.resources,
            resource_index: &self.resource_index,
            selected: a.selected,
            rng: &mut self.gens[a.gen as usize].activity_rng,
        };
        f(&mut ctx)
    }

    fn record_resource(&mut self, res: usize) {
        let r = &self.resources[res];
        if r.spec().monitored {
            self.monitor.record_resource(
                self.resource_mon[res],
                self.now,
                r.server_count(),
                r.queue_count(),
                r.capacity(),
                r.queue_size(),
            );
        }
    }

    fn monitors_arrivals(&self, a: &Arrival) -> bool {
        self.gens[a.gen as usize].level >= MonitorLevel::Arrivals
    }

    fn record_visit(&mut self, a_name: u32, gen: u32, h: &Held, finished: bool) {
        if self.gens[gen as usize].level >= MonitorLevel::Arrivals {
            self.monitor.record_visit(
                a_name,
                self.resource_mon[h.res],
                h.requested_at,
                self.now,
                h.activity,
                finished,
            );
        }
    }

    fn schedule_resume(&mut self, slot: u32, at: SimTime) {
        let token = self.slab[slot as usize].token;
        self.push_event(at, 0, Action::Resume { slot, token });
    }

    fn cancel_wakeup(&mut self, slot: u32) {
        self.slab[slot as usize].token += 1;
    }

    fn advance(&mut self, slot: u32) -> Result<()> {
        let mut budget = INLINE_BUDGET;
        loop {
            if budget == 0 {
                return Err(SimError::InvalidTrajectory {
                    trajectory: self.arrival(slot).frames.last().map_or_else(String::new, |f| f.program.name.to_string()),
                    reason: format!(
                        "arrival `{}` executed {INLINE_BUDGET} activities at t={} without suspending",
                        self.arrival_label(slot),
                        self.now
                    ),
                });
            }
            budget -= 1;
            let a = self.arrival_mut(slot);
            let Some(frame) = a.frames.last_mut() else {
                self.finish(slot, true)?;
                return Ok(());
            };
            if frame.pc >= frame.program.ops.len() {
                let done = a.frames.pop().expect("non-empty");
                if a.frames.is_empty() || !done.continue_after {
                    self.finish(slot, true)?;
                    return Ok(());
                }
                continue;
            }
            let pc = frame.pc;
            frame.pc += 1;
            let program = frame.program.clone();
            match self.exec(slot, &program, pc)? {
                Flow::Continue => {}
                Flow::Suspend | Flow::Gone => return Ok(()),
            }
        }
    }

    fn target(&self, slot: u32, res: Res) -> Result<usize> {
        match res {
            Res::Idx(i) => Ok(i),
            Res::Selected => self.arrival(slot).selected.ok_or_else(|| SimError::NothingSelected {
                arrival: self.arrival_label(slot),
            }),
        }
    }

    fn exec(&mut self, slot: u32, program: &Program, pc: usize) -> Result<Flow> {
        match &program.ops[pc] {
            Op::Timeout(v) => {
                let d = self.eval(slot, v);
                if !(d >= 0.0 && d.is_finite()) {
                    return Err(SimError::InvalidArgument(format!(
                        "arrival `{}`: timeout of {d} in `{}`",
                        self.arrival_label(slot),
                        program.name
                    )));
                }
                self.arrival_mut(slot).timeout = Some(RunningTimeout {
                    start: self.now,
                    duration: d,
                });
                self.schedule_resume(slot, self.now + d);
                Ok(Flow::Suspend)
            }
            Op::Seize {
                res,
                amount,
                post,
                reject,
            } => {
                let res = self.target(slot, *res)?;
                let raw = self.eval(slot, amount);
                let amount = self.units(res, raw)?;
                self.seize(slot, res, amount, post, reject)
            }
            Op::Release { res, amount } => {
                let res = self.target(slot, *res)?;
                let raw = self.eval(slot, amount);
                let amount = self.units(res, raw)?;
                self.release(slot, res, amount)?;
                Ok(Flow::Continue)
            }
            Op::SetCapacity { res, value, mode } => {
                let res = self.target(slot, *res)?;
                let v = self.eval(slot, value);
                let new = match mode {
                    CapacityMode::Absolute => v,
                    CapacityMode::Delta => self.resources[res].capacity() as f64 + v,
                };
                self.set_capacity(res, new)?;
                Ok(Flow::Continue)
            }
            Op::SetAttribute {
                key,
                value,
                mode,
                global,
            } => {
                let v = self.eval(slot, value);
                let key = *key;
                let a = self.slab[slot as usize].arrival.as_mut().expect("live arrival");
                let v = match (mode, global) {
                    (AttributeMode::Set, _) => v,
                    (AttributeMode::Add, false) => a.attr(key).unwrap_or(0.0) + v,
                    (AttributeMode::Add, true) => {
                        self.globals.get(key as usize).copied().flatten().unwrap_or(0.0) + v
                    }
                };
                let (name, gen) = (a.name, a.gen);
                if *global {
                    if self.globals.len() <= key as usize {
                        self.globals.resize(key as usize + 1, None);
                    }
                    self.globals[key as usize] = Some(v);
                } else {
                    a.set_attr(key, v);
                }
                let gs = &self.gens[gen as usize];
                let wanted = gs.level == MonitorLevel::Full
                    && gs.key_filter.as_ref().is_none_or(|f| f.contains(&key));
                if wanted {
                    let who = (!*global).then_some(name);
                    self.monitor.record_attribute(self.now, who, key, v);
                }
                Ok(Flow::Continue)
            }
            Op::SetPrioritization {
                priority,
                preemptible,
                restart,
            } => {
                let a = self.arrival_mut(slot);
                a.priority = *priority;
                a.preemptible = *preemptible;
                a.restart = *restart;
                Ok(Flow::Continue)
            }
            Op::Rollback {
                steps,
                times,
                check,
                slot: rb,
            } => {
                if let Some(check) = check {
                    if !self.with_ctx(slot, |ctx| check(ctx)) {
                        return Ok(Flow::Continue);
                    }
                }
                let a = self.arrival_mut(slot);
                let jump = match times {
                    Repeat::Forever => true,
                    Repeat::Times(n) => {
                        match a.rollbacks.iter().position(|(s, _)| s == rb) {
                            Some(i) if a.rollbacks[i].1 == 0 => {
                                // Exhausted: reset for the next pass and fall through.
                                a.rollbacks.swap_remove(i);
                                false
                            }
                            Some(i) => {
                                a.rollbacks[i].1 -= 1;
                                true
                            }
                            None if *n == 0 => false,
                            None => {
                                a.rollbacks.push((*rb, n - 1));
                                true
                            }
                        }
                    }
                };
                if jump {
                    a.frames.last_mut().expect("running frame").pc = pc - steps;
                }
                Ok(Flow::Continue)
            }
            Op::Branch { selector, paths } => {
                let k = self.with_ctx(slot, |ctx| selector(ctx));
                if k == 0 {
                    return Ok(Flow::Continue);
                }
                let Some((prog, cont)) = paths.get(k - 1) else {
                    return Err(SimError::InvalidArgument(format!(
                        "branch selector returned {k} but only {} paths exist",
                        paths.len()
                    )));
                };
                self.arrival_mut(slot).frames.push(Frame {
                    program: prog.clone(),
                    pc: 0,
                    continue_after: *cont,
                });
                Ok(Flow::Continue)
            }
            Op::Select {
                resources,
                selector,
            } => {
                let s = &mut self.selectors[*selector];
                let i = match s.policy {
                    SelectPolicy::Random => s.rng.index(resources.len()),
                    SelectPolicy::RoundRobin => {
                        let i = s.next % resources.len();
                        s.next = (i + 1) % resources.len();
                        i
                    }
                };
                self.arrival_mut(slot).selected = Some(resources[i]);
                Ok(Flow::Continue)
            }
            Op::Trap(sig) => {
                let key = self.key_of(slot);
                let a = self.arrival_mut(slot);
                if !a.trapped.contains(sig) {
                    a.trapped.push(*sig);
                    self.signals[*sig as usize].subscribers.push(key);
                }
                Ok(Flow::Continue)
            }
            Op::Wait => {
                self.arrival_mut(slot).waiting_signal = true;
                Ok(Flow::Suspend)
            }
            Op::Send { signal, delay } => {
                let d = self.eval(slot, delay);
                if !(d >= 0.0 && d.is_finite()) {
                    return Err(SimError::InvalidArgument(format!(
                        "signal `{}` sent with delay {d}",
                        self.signals[*signal as usize].name
                    )));
                }
                self.push_event(self.now + d, 0, Action::Deliver { signal: *signal });
                Ok(Flow::Continue)
            }
            Op::Log(msg) => {
                log::info!("{}: {}: {}", self.now, self.arrival_label(slot), msg);
                Ok(Flow::Continue)
            }
        }
    }

    fn units(&self, res: usize, raw: f64) -> Result<u64> {
        let v = raw.round();
        if !(v >= 1.0 && v.is_finite()) {
            return Err(SimError::InvalidAmount {
                resource: self.resources[res].name().to_owned(),
                value: raw,
            });
        }
        Ok(v as u64)
    }

    fn seize(
        &mut self,
        slot: u32,
        res: usize,
        amount: u64,
        post: &Option<Branch>,
        reject: &Option<Branch>,
    ) -> Result<Flow> {
        let key = self.key_of(slot);
        let (priority, preemptible) = {
            let a = self.arrival(slot);
            (a.priority, a.preemptible)
        };
        let now = self.now;
        match self.resources[res].request(key, priority, preemptible, amount, now) {
            RequestOutcome::Granted => {
                self.add_held(slot, res, amount, now, 0.0);
                self.record_resource(res);
                self.enter_branch(slot, post);
                Ok(Flow::Continue)
            }
            RequestOutcome::GrantedByPreemption(victims) => {
                self.add_held(slot, res, amount, now, 0.0);
                for v in victims {
                    self.preempt(res, v)?;
                }
                self.record_resource(res);
                self.enter_branch(slot, post);
                Ok(Flow::Continue)
            }
            RequestOutcome::Enqueued(qkey) => {
                self.arrival_mut(slot).pending = Some(Pending {
                    res,
                    key: qkey,
                    amount,
                    requested_at: now,
                    activity: 0.0,
                    post: post.clone(),
                });
                self.record_resource(res);
                Ok(Flow::Suspend)
            }
            RequestOutcome::Rejected => match reject {
                Some(_) => {
                    self.enter_branch(slot, reject);
                    Ok(Flow::Continue)
                }
                None => {
                    self.finish(slot, false)?;
                    Ok(Flow::Gone)
                }
            },
        }
    }

    fn enter_branch(&mut self, slot: u32, branch: &Option<Branch>) {
        if let Some((prog, cont)) = branch {
            self.arrival_mut(slot).frames.push(Frame {
                program: prog.clone(),
                pc: 0,
                continue_after: *cont,
            });
        }
    }

    fn add_held(&mut self, slot: u32, res: usize, amount: u64, requested_at: SimTime, activity: SimTime) {
        let a = self.arrival_mut(slot);
        match a.held.iter_mut().find(|h| h.res == res) {
            Some(h) => h.amount += amount,
            None => a.held.push(Held {
                res,
                amount,
                requested_at,
                activity,
            }),
        }
    }

    fn preempt(&mut self, res: usize, victim: ServiceSlot) -> Result<()> {
        let vslot = victim.who.slot;
        if !self.is_alive(victim.who) {
            return Ok(());
        }
        let now = self.now;
        let mut fate = self.resources[res].spec().preempt_fate;
        {
            let a = self.arrival(vslot);
            if a.pending.is_some() || a.waiting_signal {
                fate = PreemptFate::Drop;
            }
        }
        self.cancel_wakeup(vslot);
        let a = self.arrival_mut(vslot);
        let mut remaining = None;
        if let Some(t) = a.timeout.take() {
            let elapsed = now - t.start;
            a.activity_time += elapsed;
            for h in &mut a.held {
                h.activity += elapsed;
            }
            remaining = Some(if a.restart {
                t.duration
            } else {
                (t.start + t.duration - now).max(0.0)
            });
        }
        let i = a
            .held
            .iter()
            .position(|h| h.res == res)
            .expect("victim holds the resource");
        let held = a.held.swap_remove(i);
        let (name, gen) = (a.name, a.gen);
        match fate {
            PreemptFate::Drop => {
                self.record_visit(name, gen, &held, false);
                self.finish(vslot, false)?;
            }
            PreemptFate::RequeueHead => {
                let qkey = self.resources[res].requeue_front(&victim, now);
                let a = self.arrival_mut(vslot);
                a.pending = Some(Pending {
                    res,
                    key: qkey,
                    amount: held.amount,
                    requested_at: held.requested_at,
                    activity: held.activity,
                    post: None,
                });
                a.paused = Some(remaining.unwrap_or(0.0));
            }
        }
        Ok(())
    }

    fn release(&mut self, slot: u32, res: usize, amount: u64) -> Result<()> {
        let key = self.key_of(slot);
        if let Err(held) = self.resources[res].release(key, amount) {
            return Err(SimError::ReleaseExceedsHeld {
                arrival: self.arrival_label(slot),
                resource: self.resources[res].name().to_owned(),
                amount,
                held,
            });
        }
        let a = self.arrival_mut(slot);
        let i = a.held.iter().position(|h| h.res == res).expect("bookkeeping in sync");
        a.held[i].amount -= amount;
        if a.held[i].amount == 0 {
            let h = a.held.swap_remove(i);
            let (name, gen) = (a.name, a.gen);
            self.record_visit(name, gen, &h, true);
        }
        self.record_resource(res);
        self.serve(res);
        Ok(())
    }

    fn set_capacity(&mut self, res: usize, value: f64) -> Result<()> {
        let v = value.round();
        if !(v >= 0.0 && v.is_finite()) {
            return Err(SimError::InvalidCapacity {
                resource: self.resources[res].name().to_owned(),
                value,
            });
        }
        self.resources[res].set_capacity(v as u64);
        self.record_resource(res);
        self.serve(res);
        Ok(())
    }

    fn serve(&mut self, res: usize) {
        let granted = self.resources[res].serve_queue(self.now);
        if granted.is_empty() {
            return;
        }
        for (_, entry) in granted {
            self.wake_granted(entry.who, res);
        }
        self.record_resource(res);
    }

    fn wake_granted(&mut self, who: ArrivalKey, res: usize) {
        debug_assert!(self.is_alive(who));
        let slot = who.slot;
        let now = self.now;
        let a = self.arrival_mut(slot);
        let p = a.pending.take().expect("granted arrival was queued");
        debug_assert_eq!(p.res, res);
        let paused = a.paused.take();
        self.add_held(slot, res, p.amount, p.requested_at, p.activity);
        self.enter_branch(slot, &p.post);
        match paused {
            Some(rem) => {
                self.arrival_mut(slot).timeout = Some(RunningTimeout {
                    start: now,
                    duration: rem,
                });
                self.schedule_resume(slot, now + rem);
            }
            None => self.schedule_resume(slot, now),
        }
    }

    fn deliver(&mut self, signal: u32) {
        let subs = std::mem::take(&mut self.signals[signal as usize].subscribers);
        let mut kept = Vec::with_capacity(subs.len());
        for key in subs {
            if !self.is_alive(key) {
                continue;
            }
            kept.push(key);
            let a = self.arrival_mut(key.slot);
            if a.waiting_signal {
                a.waiting_signal = false;
                self.schedule_resume(key.slot, self.now);
            }
        }
        self.signals[signal as usize].subscribers = kept;
    }

    /// Removes an arrival, releasing whatever it still holds.
    fn finish(&mut self, slot: u32, finished: bool) -> Result<()> {
        self.cancel_wakeup(slot);
        let key = self.key_of(slot);
        let a = self.slab[slot as usize].arrival.take().expect("live arrival");
        self.free.push(slot);
        if let Some(p) = &a.pending {
            self.resources[p.res].remove_queued(&p.key);
            self.record_resource(p.res);
        }
        for h in &a.held {
            self.resources[h.res].remove_holder(key);
            self.record_visit(a.name, a.gen, h, finished);
            self.record_resource(h.res);
            self.serve(h.res);
        }
        if self.monitors_arrivals(&a) {
            self.monitor
                .record_lifecycle(a.name, a.created, self.now, a.activity_time, finished);
        }
        Ok(())
    }

    /// Ends the simulation: arrivals still in the system are recorded as
    /// unfinished at the current time, and the monitor is returned.
    pub fn finalize(mut self) -> MonitorStore {
        let mut live: Vec<(u64, u32)> = self
            .slab
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.arrival.as_ref().map(|a| (a.uid, i as u32)))
            .collect();
        live.sort_unstable();
        for (_, slot) in live {
            let a = self.slab[slot as usize].arrival.take().expect("live arrival");
            let mut activity = a.activity_time;
            let mut held_activity = 0.0;
            if let Some(t) = a.timeout {
                held_activity = self.now - t.start;
                activity += held_activity;
            }
            for h in &a.held {
                let h = Held {
                    activity: h.activity + held_activity,
                    ..*h
                };
                self.record_visit(a.name, a.gen, &h, false);
            }
            if self.monitors_arrivals(&a) {
                self.monitor
                    .record_lifecycle(a.name, a.created, self.now, activity, false);
            }
        }
        self.monitor
    }
}

impl Clone for Held {
    fn clone(&self) -> Self {
        *self
    }
}

impl Copy for Held {}
