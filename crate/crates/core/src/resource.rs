//! Server pools: grant, queue or reject requests, with priority ordering,
//! optional preemption and capacity that can change at run time.
//!
//! A [`Resource`] only tracks who holds what and who waits where. Waking
//! arrivals up, cancelling their pending events and writing monitor rows is
//! left to the environment, which acts on the outcomes returned here.

use std::cmp::Reverse;
use std::collections::BTreeMap;

use crate::SimTime;

/// Identifies one arrival for as long as it lives. `slot` is reused after
/// the arrival leaves; `uid` never is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ArrivalKey {
    pub slot: u32,
    pub uid: u64,
}

/// What happens to an arrival evicted by a higher-priority request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PreemptFate {
    /// The victim leaves the system unfinished.
    #[default]
    Drop,
    /// The victim goes back to the head of the queue.
    RequeueHead,
}

/// Configuration of a resource before it is added to an environment.
#[derive(Debug, Clone, PartialEq)]
pub struct ResourceSpec {
    pub name: String,
    pub capacity: u64,
    /// `None` means unbounded.
    pub queue_size: Option<u64>,
    pub preemptive: bool,
    pub preempt_fate: PreemptFate,
    /// Emit resource monitor rows for this resource.
    pub monitored: bool,
}

impl ResourceSpec {
    pub fn new(name: impl Into<String>, capacity: u64) -> Self {
        Self {
            name: name.into(),
            capacity,
            queue_size: None,
            preemptive: false,
            preempt_fate: PreemptFate::Drop,
            monitored: true,
        }
    }

    pub fn queue_size(mut self, queue_size: Option<u64>) -> Self {
        self.queue_size = queue_size;
        self
    }

    pub fn preemptive(mut self, preemptive: bool) -> Self {
        self.preemptive = preemptive;
        self
    }

    pub fn preempt_fate(mut self, fate: PreemptFate) -> Self {
        self.preempt_fate = fate;
        self
    }

    pub fn monitored(mut self, monitored: bool) -> Self {
        self.monitored = monitored;
        self
    }
}

/// A unit of work in service.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServiceSlot {
    pub who: ArrivalKey,
    pub amount: u64,
    pub priority: i32,
    pub preemptible: bool,
    pub since: SimTime,
    /// Grant order, breaks ties between equal `since` values.
    pub order: u64,
}

/// Queue position: priority descending, then position ascending.
pub type QueueKey = (Reverse<i32>, i64);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueueEntry {
    pub who: ArrivalKey,
    pub amount: u64,
    pub priority: i32,
    pub preemptible: bool,
    pub enqueued_at: SimTime,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RequestOutcome {
    Granted,
    Enqueued(QueueKey),
    Rejected,
    /// Granted after evicting the listed holders, lowest priority first.
    GrantedByPreemption(Vec<ServiceSlot>),
}

#[derive(Debug, Clone)]
pub struct Resource {
    spec: ResourceSpec,
    server: u64,
    queue_amount: u64,
    in_service: Vec<ServiceSlot>,
    queue: BTreeMap<QueueKey, QueueEntry>,
    next_pos: i64,
    next_front: i64,
    next_order: u64,
    last_reject: SimTime,
    rejections: u64,
}

impl Resource {
    pub fn new(spec: ResourceSpec) -> Self {
        Self {
            spec,
            server: 0,
            queue_amount: 0,
            in_service: Vec::new(),
            queue: BTreeMap::new(),
            next_pos: 0,
            next_front: -1,
            next_order: 0,
            last_reject: SimTime::NEG_INFINITY,
            rejections: 0,
        }
    }

    pub fn spec(&self) -> &ResourceSpec {
        &self.spec
    }

    pub fn name(&self) -> &str {
        &self.spec.name
    }

    pub fn capacity(&self) -> u64 {
        self.spec.capacity
    }

    pub fn queue_size(&self) -> Option<u64> {
        self.spec.queue_size
    }

    /// Units currently in service.
    pub fn server_count(&self) -> u64 {
        self.server
    }

    /// Units requested by queued arrivals.
    pub fn queue_count(&self) -> u64 {
        self.queue_amount
    }

    pub fn queue_len(&self) -> usize {
        self.queue.len()
    }

    pub fn in_service(&self) -> &[ServiceSlot] {
        &self.in_service
    }

    pub fn queue(&self) -> impl Iterator<Item = &QueueEntry> {
        self.queue.values()
    }

    pub fn last_reject_time(&self) -> SimTime {
        self.last_reject
    }

    pub fn rejections(&self) -> u64 {
        self.rejections
    }

    pub fn held_by(&self, who: ArrivalKey) -> u64 {
        self.in_service
            .iter()
            .find(|s| s.who == who)
            .map_or(0, |s| s.amount)
    }

    fn queue_has_room(&self, amount: u64) -> bool {
        self.spec
            .queue_size
            .is_none_or(|q| self.queue_amount + amount <= q)
    }

    /// True when no queued request outranks (or ties) a request of `priority`.
    fn first_in_line(&self, priority: i32) -> bool {
        self.queue
            .keys()
            .next()
            .is_none_or(|(Reverse(p), _)| *p < priority)
    }

    fn grant(&mut self, who: ArrivalKey, amount: u64, priority: i32, preemptible: bool, now: SimTime) {
        self.server += amount;
        let order = self.next_order;
        self.next_order += 1;
        if let Some(slot) = self.in_service.iter_mut().find(|s| s.who == who) {
            slot.amount += amount;
            slot.priority = priority;
            slot.preemptible = preemptible;
            return;
        }
        self.in_service.push(ServiceSlot {
            who,
            amount,
            priority,
            preemptible,
            since: now,
            order,
        });
    }

    fn pick_victims(&self, priority: i32, amount: u64) -> Option<Vec<usize>> {
        let mut candidates: Vec<usize> = (0..self.in_service.len())
            .filter(|&i| {
                let s = &self.in_service[i];
                s.preemptible && s.priority < priority
            })
            .collect();
        // Lowest priority first; among equals, the latest service start.
        candidates.sort_by(|&a, &b| {
            let (sa, sb) = (&self.in_service[a], &self.in_service[b]);
            sa.priority
                .cmp(&sb.priority)
                .then(sb.since.total_cmp(&sa.since))
                .then(sb.order.cmp(&sa.order))
        });
        let mut in_use = self.server;
        let mut chosen = Vec::new();
        for i in candidates {
            if in_use + amount <= self.spec.capacity {
                break;
            }
            in_use -= self.in_service[i].amount;
            chosen.push(i);
        }
        (in_use + amount <= self.spec.capacity).then_some(chosen)
    }

    /// Ask for `amount` units on behalf of `who`.
    pub fn request(
        &mut self,
        who: ArrivalKey,
        priority: i32,
        preemptible: bool,
        amount: u64,
        now: SimTime,
    ) -> RequestOutcome {
        let first = self.first_in_line(priority);
        if first && self.server + amount <= self.spec.capacity {
            self.grant(who, amount, priority, preemptible, now);
            return RequestOutcome::Granted;
        }
        if first && self.spec.preemptive {
            if let Some(idx) = self.pick_victims(priority, amount) {
                let mut victims: Vec<ServiceSlot> =
                    idx.iter().map(|&i| self.in_service[i]).collect();
                let mut sorted = idx;
                sorted.sort_unstable_by(|a, b| b.cmp(a));
                for i in sorted {
                    let slot = self.in_service.remove(i);
                    self.server -= slot.amount;
                }
                victims.sort_by(|a, b| a.priority.cmp(&b.priority).then(b.since.total_cmp(&a.since)));
                self.grant(who, amount, priority, preemptible, now);
                return RequestOutcome::GrantedByPreemption(victims);
            }
        }
        if self.queue_has_room(amount) {
            let key = (Reverse(priority), self.next_pos);
            self.next_pos += 1;
            self.queue.insert(
                key,
                QueueEntry {
                    who,
                    amount,
                    priority,
                    preemptible,
                    enqueued_at: now,
                },
            );
            self.queue_amount += amount;
            return RequestOutcome::Enqueued(key);
        }
        self.last_reject = now;
        self.rejections += 1;
        RequestOutcome::Rejected
    }

    /// Put an evicted holder back at the front of its priority level.
    pub fn requeue_front(&mut self, slot: &ServiceSlot, now: SimTime) -> QueueKey {
        let key = (Reverse(slot.priority), self.next_front);
        self.next_front -= 1;
        self.queue.insert(
            key,
            QueueEntry {
                who: slot.who,
                amount: slot.amount,
                priority: slot.priority,
                preemptible: slot.preemptible,
                enqueued_at: now,
            },
        );
        self.queue_amount += slot.amount;
        key
    }

    /// Return `amount` units held by `who`. On failure yields the amount
    /// actually held.
    pub fn release(&mut self, who: ArrivalKey, amount: u64) -> Result<(), u64> {
        let Some(i) = self.in_service.iter().position(|s| s.who == who) else {
            return Err(0);
        };
        let held = self.in_service[i].amount;
        if amount > held {
            return Err(held);
        }
        if amount == held {
            self.in_service.remove(i);
        } else {
            self.in_service[i].amount -= amount;
        }
        self.server -= amount;
        Ok(())
    }

    /// Drop everything `who` holds here, returning the amount.
    pub fn remove_holder(&mut self, who: ArrivalKey) -> u64 {
        match self.in_service.iter().position(|s| s.who == who) {
            Some(i) => {
                let slot = self.in_service.remove(i);
                self.server -= slot.amount;
                slot.amount
            }
            None => 0,
        }
    }

    pub fn remove_queued(&mut self, key: &QueueKey) -> Option<QueueEntry> {
        let e = self.queue.remove(key)?;
        self.queue_amount -= e.amount;
        Some(e)
    }

    /// Grant queued requests in order while the head fits.
    pub fn serve_queue(&mut self, now: SimTime) -> Vec<(QueueKey, QueueEntry)> {
        let mut granted = Vec::new();
        while let Some((&key, &entry)) = self.queue.iter().next() {
            if self.server + entry.amount > self.spec.capacity {
                break;
            }
            self.queue.remove(&key);
            self.queue_amount -= entry.amount;
            self.grant(entry.who, entry.amount, entry.priority, entry.preemptible, now);
            granted.push((key, entry));
        }
        granted
    }

    /// Change the capacity. Holders are never interrupted by a decrease;
    /// call [`Resource::serve_queue`] afterwards to admit waiters.
    pub fn set_capacity(&mut self, capacity: u64) {
        self.spec.capacity = capacity;
    }
}
