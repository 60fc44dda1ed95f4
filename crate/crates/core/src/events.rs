//! Publish/subscribe dispatch of dataset lifecycle notifications.
//!
//! Dispatch is synchronous: `publish` runs every matching handler before it
//! returns, in subscription order. A publish issued while a dispatch is
//! already running (from inside a handler, or from another thread) is queued
//! and delivered once the current event has reached all of its subscribers.
//! Handlers must be quick; anything slow should be handed to a worker.

use std::collections::{BTreeSet, HashSet, VecDeque};
use std::fmt;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};

use serde::{Deserialize, Serialize};

use crate::ids::{DatasetId, InstanceId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EventKind {
    DatasetAdded,
    DatasetDataChanged,
    DatasetSelectionChanged,
    DatasetRemoved,
    DatasetRenamed,
}

impl EventKind {
    pub const ALL: [EventKind; 5] = [
        EventKind::DatasetAdded,
        EventKind::DatasetDataChanged,
        EventKind::DatasetSelectionChanged,
        EventKind::DatasetRemoved,
        EventKind::DatasetRenamed,
    ];

    /// Short name used on the wire (`"SelectionChanged"` etc).
    pub fn wire_name(self) -> &'static str {
        match self {
            EventKind::DatasetAdded => "Added",
            EventKind::DatasetDataChanged => "DataChanged",
            EventKind::DatasetSelectionChanged => "SelectionChanged",
            EventKind::DatasetRemoved => "Removed",
            EventKind::DatasetRenamed => "Renamed",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoreEvent {
    pub kind: EventKind,
    pub dataset: DatasetId,
    /// Assigned by the bus; strictly increasing in emission order.
    pub seq: u64,
}

/// Selects which events a subscriber receives. `None` on either axis means
/// "everything".
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EventFilter {
    pub kinds: Option<BTreeSet<EventKind>>,
    pub datasets: Option<BTreeSet<DatasetId>>,
}

impl EventFilter {
    pub fn all() -> Self {
        Self::default()
    }

    pub fn kind(kind: EventKind) -> Self {
        Self::default().with_kind(kind)
    }

    pub fn dataset(dataset: DatasetId) -> Self {
        Self::default().with_dataset(dataset)
    }

    pub fn with_kind(mut self, kind: EventKind) -> Self {
        self.kinds.get_or_insert_with(BTreeSet::new).insert(kind);
        self
    }

    pub fn with_dataset(mut self, dataset: DatasetId) -> Self {
        self.datasets.get_or_insert_with(BTreeSet::new).insert(dataset);
        self
    }

    pub fn matches(&self, event: &CoreEvent) -> bool {
        self.kinds.as_ref().is_none_or(|k| k.contains(&event.kind))
            && self.datasets.as_ref().is_none_or(|d| d.contains(&event.dataset))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SubscriptionId(u64);

impl fmt::Display for SubscriptionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "sub#{}", self.0)
    }
}

pub type EventHandler = Box<dyn FnMut(&CoreEvent) + Send>;

struct Subscription {
    id: SubscriptionId,
    owner: Option<InstanceId>,
    filter: EventFilter,
    active: AtomicBool,
    handler: Mutex<EventHandler>,
}

#[derive(Default)]
struct BusState {
    subscribers: Vec<Arc<Subscription>>,
    queue: VecDeque<(CoreEvent, Vec<Arc<Subscription>>)>,
    dispatching: bool,
    next_seq: u64,
    next_subscription: u64,
    retired: HashSet<DatasetId>,
}

#[derive(Default)]
pub struct EventBus {
    state: Mutex<BusState>,
}

impl EventBus {
    pub fn new() -> Self {
        Self::default()
    }

    fn lock(&self) -> MutexGuard<'_, BusState> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn subscribe(
        &self,
        filter: EventFilter,
        handler: impl FnMut(&CoreEvent) + Send + 'static,
    ) -> SubscriptionId {
        self.subscribe_inner(None, filter, Box::new(handler))
    }

    /// Registers a handler on behalf of a plugin instance so that
    /// [`EventBus::unsubscribe_owner`] can tear it down.
    pub fn subscribe_owned(
        &self,
        owner: InstanceId,
        filter: EventFilter,
        handler: impl FnMut(&CoreEvent) + Send + 'static,
    ) -> SubscriptionId {
        self.subscribe_inner(Some(owner), filter, Box::new(handler))
    }

    fn subscribe_inner(
        &self,
        owner: Option<InstanceId>,
        filter: EventFilter,
        handler: EventHandler,
    ) -> SubscriptionId {
        let mut state = self.lock();
        state.next_subscription += 1;
        let id = SubscriptionId(state.next_subscription);
        state.subscribers.push(Arc::new(Subscription {
            id,
            owner,
            filter,
            active: AtomicBool::new(true),
            handler: Mutex::new(handler),
        }));
        id
    }

    /// Unknown ids are ignored.
    pub fn unsubscribe(&self, id: SubscriptionId) {
        let mut state = self.lock();
        state.subscribers.retain(|s| {
            if s.id == id {
                s.active.store(false, Ordering::SeqCst);
                false
            } else {
                true
            }
        });
    }

    /// Removes every subscription registered for `owner`, returning how many
    /// were dropped.
    pub fn unsubscribe_owner(&self, owner: InstanceId) -> usize {
        let mut state = self.lock();
        let before = state.subscribers.len();
        state.subscribers.retain(|s| {
            if s.owner == Some(owner) {
                s.active.store(false, Ordering::SeqCst);
                false
            } else {
                true
            }
        });
        before - state.subscribers.len()
    }

    pub fn subscription_count(&self) -> usize {
        self.lock().subscribers.len()
    }

    pub fn owned_subscription_count(&self, owner: InstanceId) -> usize {
        self.lock()
            .subscribers
            .iter()
            .filter(|s| s.owner == Some(owner))
            .count()
    }

    /// Publishes an event and returns its sequence number.
    ///
    /// Returns `None` when `dataset` has already been retired by a
    /// `DatasetRemoved` event: removal is always the last word on a dataset.
    pub fn publish(&self, kind: EventKind, dataset: DatasetId) -> Option<u64> {
        let mut state = self.lock();
        if state.retired.contains(&dataset) {
            return None;
        }
        if kind == EventKind::DatasetRemoved {
            state.retired.insert(dataset);
        }
        state.next_seq += 1;
        let event = CoreEvent {
            kind,
            dataset,
            seq: state.next_seq,
        };
        let targets = state
            .subscribers
            .iter()
            .filter(|s| s.filter.matches(&event))
            .cloned()
            .collect();
        state.queue.push_back((event, targets));
        if state.dispatching {
            return Some(event.seq);
        }
        state.dispatching = true;
        drop(state);
        self.drain();
        Some(event.seq)
    }

    fn drain(&self) {
        struct Reset<'a>(&'a EventBus);
        impl Drop for Reset<'_> {
            fn drop(&mut self) {
                let mut state = self.0.lock();
                state.dispatching = false;
            }
        }
        let _reset = Reset(self);
        loop {
            let next = self.lock().queue.pop_front();
            let Some((event, targets)) = next else { break };
            for sub in targets {
                if !sub.active.load(Ordering::SeqCst) {
                    continue;
                }
                let mut handler = sub.handler.lock().unwrap_or_else(|e| e.into_inner());
                handler(&event);
            }
        }
    }
}
