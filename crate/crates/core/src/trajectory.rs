//! Trajectories: ordered programs of activities that arrivals execute.

use std::fmt;
use std::rc::Rc;

use crate::env::ActivityCtx;

/// A number consumed by an activity: either fixed, or computed when the
/// activity runs (sampled, or read from attributes and resource state).
#[derive(Clone)]
pub enum Value {
    Fixed(f64),
    Dynamic(Rc<dyn Fn(&mut ActivityCtx<'_>) -> f64>),
}

impl Value {
    pub fn func(f: impl Fn(&mut ActivityCtx<'_>) -> f64 + 'static) -> Self {
        Value::Dynamic(Rc::new(f))
    }

    pub fn as_fixed(&self) -> Option<f64> {
        match self {
            Value::Fixed(v) => Some(*v),
            Value::Dynamic(_) => None,
        }
    }
}

impl fmt::Debug for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Fixed(v) => write!(f, "{v}"),
            Value::Dynamic(_) => f.write_str("<fn>"),
        }
    }
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Fixed(v)
    }
}

impl From<u32> for Value {
    fn from(v: u32) -> Self {
        Value::Fixed(f64::from(v))
    }
}

impl From<i32> for Value {
    fn from(v: i32) -> Self {
        Value::Fixed(f64::from(v))
    }
}

pub type Predicate = Rc<dyn Fn(&mut ActivityCtx<'_>) -> bool>;
/// Returns 0 to skip the branch, or the 1-based index of the path to take.
pub type Selector = Rc<dyn Fn(&mut ActivityCtx<'_>) -> usize>;

/// Which resource an activity acts on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ResourceRef {
    Named(String),
    /// The resource most recently picked by a `Select` activity.
    Selected,
}

impl From<&str> for ResourceRef {
    fn from(s: &str) -> Self {
        ResourceRef::Named(s.to_owned())
    }
}

impl From<String> for ResourceRef {
    fn from(s: String) -> Self {
        ResourceRef::Named(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Repeat {
    Times(u64),
    Forever,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectPolicy {
    Random,
    RoundRobin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CapacityMode {
    Absolute,
    Delta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttributeMode {
    Set,
    Add,
}

/// A sub-trajectory plus whether the arrival returns to the parent
/// trajectory once it completes (otherwise the arrival leaves).
#[derive(Debug, Clone)]
pub struct SubTrajectory {
    pub trajectory: Trajectory,
    pub continue_after: bool,
}

impl SubTrajectory {
    pub fn new(trajectory: Trajectory) -> Self {
        Self {
            trajectory,
            continue_after: true,
        }
    }

    pub fn terminal(trajectory: Trajectory) -> Self {
        Self {
            trajectory,
            continue_after: false,
        }
    }
}

#[derive(Clone)]
pub enum Activity {
    Timeout(Value),
    Seize {
        resource: ResourceRef,
        amount: Value,
        post_seize: Option<SubTrajectory>,
        reject: Option<SubTrajectory>,
    },
    Release {
        resource: ResourceRef,
        amount: Value,
    },
    SetCapacity {
        resource: ResourceRef,
        value: Value,
        mode: CapacityMode,
    },
    SetAttribute {
        key: String,
        value: Value,
        mode: AttributeMode,
        global: bool,
    },
    SetPrioritization {
        priority: i32,
        preemptible: bool,
        restart: bool,
    },
    /// Jump back `steps` activities within the current trajectory. When a
    /// check is given, the jump only happens while it holds and does not
    /// consume a repetition otherwise.
    Rollback {
        steps: usize,
        times: Repeat,
        check: Option<Predicate>,
    },
    Branch {
        selector: Selector,
        paths: Vec<SubTrajectory>,
    },
    Select {
        resources: Vec<String>,
        policy: SelectPolicy,
    },
    Trap(String),
    WaitSignal,
    Send {
        signal: String,
        delay: Value,
    },
    Log(String),
}

impl Activity {
    pub fn kind(&self) -> &'static str {
        match self {
            Activity::Timeout(_) => "timeout",
            Activity::Seize { .. } => "seize",
            Activity::Release { .. } => "release",
            Activity::SetCapacity { .. } => "set_capacity",
            Activity::SetAttribute { .. } => "set_attribute",
            Activity::SetPrioritization { .. } => "set_prioritization",
            Activity::Rollback { .. } => "rollback",
            Activity::Branch { .. } => "branch",
            Activity::Select { .. } => "select",
            Activity::Trap(_) => "trap",
            Activity::WaitSignal => "wait",
            Activity::Send { .. } => "send",
            Activity::Log(_) => "log",
        }
    }
}

impl fmt::Debug for Activity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activity::Timeout(v) => write!(f, "Timeout({v:?})"),
            Activity::Seize {
                resource, amount, ..
            } => write!(f, "Seize({resource:?}, {amount:?})"),
            Activity::Release { resource, amount } => write!(f, "Release({resource:?}, {amount:?})"),
            Activity::SetCapacity {
                resource,
                value,
                mode,
            } => write!(f, "SetCapacity({resource:?}, {value:?}, {mode:?})"),
            Activity::SetAttribute {
                key, value, global, ..
            } => write!(f, "SetAttribute({key}, {value:?}, global={global})"),
            Activity::Rollback { steps, times, .. } => write!(f, "Rollback({steps}, {times:?})"),
            Activity::Branch { paths, .. } => write!(f, "Branch({} paths)", paths.len()),
            Activity::Select { resources, policy } => write!(f, "Select({resources:?}, {policy:?})"),
            Activity::Trap(s) => write!(f, "Trap({s})"),
            Activity::Send { signal, delay } => write!(f, "Send({signal}, {delay:?})"),
            Activity::Log(m) => write!(f, "Log({m})"),
            other => f.write_str(other.kind()),
        }
    }
}

/// The recipe followed by every arrival attached to it.
///
/// ```
/// use trajsim_core::{Exponential, Trajectory, Value};
///
/// let service = Exponential::new(2.0).unwrap();
/// let customer = Trajectory::new("customer")
///     .seize("clerk", 1)
///     .timeout(Value::func(move |ctx| service.sample(ctx.rng())))
///     .release("clerk", 1);
/// assert_eq!(customer.len(), 3);
/// ```
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    name: String,
    activities: Vec<Activity>,
}

impl Trajectory {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            activities: Vec::new(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn activities(&self) -> &[Activity] {
        &self.activities
    }

    pub fn len(&self) -> usize {
        self.activities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.activities.is_empty()
    }

    pub fn push(mut self, activity: Activity) -> Self {
        self.activities.push(activity);
        self
    }

    pub fn timeout(self, duration: impl Into<Value>) -> Self {
        self.push(Activity::Timeout(duration.into()))
    }

    pub fn timeout_fn(self, f: impl Fn(&mut ActivityCtx<'_>) -> f64 + 'static) -> Self {
        self.timeout(Value::func(f))
    }

    pub fn seize(self, resource: impl Into<ResourceRef>, amount: impl Into<Value>) -> Self {
        self.push(Activity::Seize {
            resource: resource.into(),
            amount: amount.into(),
            post_seize: None,
            reject: None,
        })
    }

    pub fn seize_with(
        self,
        resource: impl Into<ResourceRef>,
        amount: impl Into<Value>,
        post_seize: Option<SubTrajectory>,
        reject: Option<SubTrajectory>,
    ) -> Self {
        self.push(Activity::Seize {
            resource: resource.into(),
            amount: amount.into(),
            post_seize,
            reject,
        })
    }

    pub fn seize_selected(self, amount: impl Into<Value>) -> Self {
        self.seize(ResourceRef::Selected, amount)
    }

    pub fn release(self, resource: impl Into<ResourceRef>, amount: impl Into<Value>) -> Self {
        self.push(Activity::Release {
            resource: resource.into(),
            amount: amount.into(),
        })
    }

    pub fn release_selected(self, amount: impl Into<Value>) -> Self {
        self.release(ResourceRef::Selected, amount)
    }

    pub fn set_capacity(self, resource: impl Into<ResourceRef>, value: impl Into<Value>) -> Self {
        self.push(Activity::SetCapacity {
            resource: resource.into(),
            value: value.into(),
            mode: CapacityMode::Absolute,
        })
    }

    pub fn add_capacity(self, resource: impl Into<ResourceRef>, delta: impl Into<Value>) -> Self {
        self.push(Activity::SetCapacity {
            resource: resource.into(),
            value: delta.into(),
            mode: CapacityMode::Delta,
        })
    }

    pub fn set_attribute(self, key: impl Into<String>, value: impl Into<Value>) -> Self {
        self.push(Activity::SetAttribute {
            key: key.into(),
            value: value.into(),
            mode: AttributeMode::Set,
            global: false,
        })
    }

    pub fn add_attribute(self, key: impl Into<String>, delta: impl Into<Value>) -> Self {
        self.push(Activity::SetAttribute {
            key: key.into(),
            value: delta.into(),
            mode: AttributeMode::Add,
            global: false,
        })
    }

    pub fn set_global(self, key: impl Into<String>, value: impl Into<Value>) -> Self {
        self.push(Activity::SetAttribute {
            key: key.into(),
            value: value.into(),
            mode: AttributeMode::Set,
            global: true,
        })
    }

    pub fn add_global(self, key: impl Into<String>, delta: impl Into<Value>) -> Self {
        self.push(Activity::SetAttribute {
            key: key.into(),
            value: delta.into(),
            mode: AttributeMode::Add,
            global: true,
        })
    }

    pub fn set_prioritization(self, priority: i32, preemptible: bool, restart: bool) -> Self {
        self.push(Activity::SetPrioritization {
            priority,
            preemptible,
            restart,
        })
    }

    pub fn rollback(self, steps: usize, times: Repeat) -> Self {
        self.push(Activity::Rollback {
            steps,
            times,
            check: None,
        })
    }

    pub fn rollback_while(
        self,
        steps: usize,
        check: impl Fn(&mut ActivityCtx<'_>) -> bool + 'static,
    ) -> Self {
        self.push(Activity::Rollback {
            steps,
            times: Repeat::Forever,
            check: Some(Rc::new(check)),
        })
    }

    pub fn branch(
        self,
        selector: impl Fn(&mut ActivityCtx<'_>) -> usize + 'static,
        paths: Vec<SubTrajectory>,
    ) -> Self {
        self.push(Activity::Branch {
            selector: Rc::new(selector),
            paths,
        })
    }

    pub fn select<S: Into<String>>(
        self,
        resources: impl IntoIterator<Item = S>,
        policy: SelectPolicy,
    ) -> Self {
        self.push(Activity::Select {
            resources: resources.into_iter().map(Into::into).collect(),
            policy,
        })
    }

    pub fn trap(self, signal: impl Into<String>) -> Self {
        self.push(Activity::Trap(signal.into()))
    }

    pub fn wait(self) -> Self {
        self.push(Activity::WaitSignal)
    }

    pub fn send(self, signal: impl Into<String>, delay: impl Into<Value>) -> Self {
        self.push(Activity::Send {
            signal: signal.into(),
            delay: delay.into(),
        })
    }

    pub fn log(self, message: impl Into<String>) -> Self {
        self.push(Activity::Log(message.into()))
    }
}
