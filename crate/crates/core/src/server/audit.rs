//! Dynamic audit trails: subscribers receive every update attempt on a
//! handle or its descendants, accepted or not, in arrival order.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::Timestamp;
use crate::handle::Handle;

use super::message::{UpdateMessage, Verdict};

pub const DEFAULT_AUDIT_CAP: usize = 8;
pub const DEFAULT_QUEUE_CAP: usize = 1024;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEvent {
    pub seq: u64,
    pub arrival: Timestamp,
    pub message: UpdateMessage,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "kebab-case")]
pub enum AuditError {
    #[error("subscription limit reached for {handle}")]
    SubscriptionLimit { handle: String },
    #[error("owner proof does not verify")]
    BadOwnerProof,
}

#[derive(Debug)]
struct Queue {
    events: Mutex<VecDeque<AuditEvent>>,
    ready: Condvar,
    cap: usize,
    dropped: AtomicU64,
    closed: AtomicBool,
}

impl Queue {
    fn push(&self, event: AuditEvent) {
        let mut q = self.events.lock().expect("audit queue poisoned");
        if q.len() >= self.cap {
            q.pop_front();
            self.dropped.fetch_add(1, Ordering::Relaxed);
        }
        q.push_back(event);
        self.ready.notify_all();
    }

    fn close(&self) {
        self.closed.store(true, Ordering::SeqCst);
        let _guard = self.events.lock().expect("audit queue poisoned");
        self.ready.notify_all();
    }
}

/// Receiving side of one subscription.
#[derive(Debug, Clone)]
pub struct AuditTrail {
    id: u64,
    handle: Handle,
    endpoint: String,
    owner: bool,
    queue: Arc<Queue>,
}

impl AuditTrail {
    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn handle(&self) -> &Handle {
        &self.handle
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    pub fn is_owner(&self) -> bool {
        self.owner
    }

    /// Events discarded because the queue was full.
    pub fn dropped(&self) -> u64 {
        self.queue.dropped.load(Ordering::Relaxed)
    }

    pub fn is_closed(&self) -> bool {
        self.queue.closed.load(Ordering::SeqCst)
    }

    pub fn try_recv(&self) -> Option<AuditEvent> {
        self.queue.events.lock().expect("audit queue poisoned").pop_front()
    }

    /// Waits up to `timeout` for the next event. `None` on timeout or once
    /// the trail is closed and drained.
    pub fn recv_timeout(&self, timeout: Duration) -> Option<AuditEvent> {
        let q = self.queue.events.lock().expect("audit queue poisoned");
        let (mut q, _) = self
            .queue
            .ready
            .wait_timeout_while(q, timeout, |q| q.is_empty() && !self.is_closed())
            .expect("audit queue poisoned");
        q.pop_front()
    }

    pub fn drain(&self) -> Vec<AuditEvent> {
        self.queue
            .events
            .lock()
            .expect("audit queue poisoned")
            .drain(..)
            .collect()
    }
}

#[derive(Debug)]
struct Subscription {
    id: u64,
    handle: Handle,
    owner: bool,
    queue: Arc<Queue>,
}

#[derive(Debug)]
pub struct AuditHub {
    subs: Mutex<Vec<Subscription>>,
    next_id: AtomicU64,
    seq: AtomicU64,
    cap: usize,
    queue_cap: usize,
}

impl Default for AuditHub {
    fn default() -> Self {
        AuditHub::new(DEFAULT_AUDIT_CAP, DEFAULT_QUEUE_CAP)
    }
}

impl AuditHub {
    /// `cap` bounds non-owner subscriptions per handle; owners always get in.
    pub fn new(cap: usize, queue_cap: usize) -> Self {
        AuditHub {
            subs: Mutex::new(Vec::new()),
            next_id: AtomicU64::new(1),
            seq: AtomicU64::new(0),
            cap,
            queue_cap: queue_cap.max(1),
        }
    }

    pub fn subscribe(&self, handle: &Handle, endpoint: &str, owner: bool) -> Result<AuditTrail, AuditError> {
        let mut subs = self.subs.lock().expect("audit hub poisoned");
        if !owner {
            let others = subs.iter().filter(|s| !s.owner && &s.handle == handle).count();
            if others >= self.cap {
                return Err(AuditError::SubscriptionLimit {
                    handle: handle.to_fqdn(),
                });
            }
        }
        let queue = Arc::new(Queue {
            events: Mutex::new(VecDeque::new()),
            ready: Condvar::new(),
            cap: self.queue_cap,
            dropped: AtomicU64::new(0),
            closed: AtomicBool::new(false),
        });
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        subs.push(Subscription {
            id,
            handle: handle.clone(),
            owner,
            queue: queue.clone(),
        });
        Ok(AuditTrail {
            id,
            handle: handle.clone(),
            endpoint: endpoint.to_string(),
            owner,
            queue,
        })
    }

    pub fn unsubscribe(&self, id: u64) {
        let mut subs = self.subs.lock().expect("audit hub poisoned");
        if let Some(pos) = subs.iter().position(|s| s.id == id) {
            subs.remove(pos).queue.close();
        }
    }

    /// Queues an event for every subscription covering the target. Never
    /// blocks on slow subscribers.
    pub fn publish(&self, message: &UpdateMessage, verdict: &Verdict, arrival: Timestamp) {
        let subs = self.subs.lock().expect("audit hub poisoned");
        let matching: Vec<&Subscription> = subs
            .iter()
            .filter(|s| message.target.is_descendant_of(&s.handle))
            .collect();
        if matching.is_empty() {
            return;
        }
        let event = AuditEvent {
            seq: self.seq.fetch_add(1, Ordering::Relaxed),
            arrival,
            message: message.clone(),
            verdict: verdict.clone(),
        };
        for s in matching {
            s.queue.push(event.clone());
        }
    }

    pub fn close_all(&self) {
        let mut subs = self.subs.lock().expect("audit hub poisoned");
        for s in subs.drain(..) {
            s.queue.close();
        }
    }

    pub fn subscriber_count(&self) -> usize {
        self.subs.lock().expect("audit hub poisoned").len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{AlgorithmCode, KeyPair};
    use crate::server::message::{Payload, Signer};

    fn setup() -> (KeyPair, Handle, Timestamp) {
        let key = KeyPair::generate(AlgorithmCode::ED25519).unwrap();
        let label = crate::crypto::derive_pk_label(&key.public, 16).unwrap();
        let apex = Handle::apex_of(label, "r.example").unwrap();
        (key, apex, Timestamp::parse("20050405000000").unwrap())
    }

    #[test]
    fn delivers_descendant_events_in_order() {
        let (key, apex, now) = setup();
        let child = apex.child(crate::handle::HandleLabel::ia("1").unwrap()).unwrap();
        let signer = Signer::new(&key, now, 3600);
        let hub = AuditHub::default();
        let on_apex = hub.subscribe(&apex, "a", false).unwrap();
        let on_child = hub.subscribe(&child, "b", false).unwrap();
        let claim = signer.claim(&apex).unwrap();
        let create = signer.message(&child, Payload::CreateChild, 1).unwrap();
        hub.publish(&claim, &Verdict::Accepted, now);
        hub.publish(&create, &Verdict::Accepted, now);
        let seen: Vec<_> = on_apex.drain().into_iter().map(|e| e.message.target).collect();
        assert_eq!(seen, vec![apex.clone(), child.clone()]);
        assert_eq!(on_child.drain().len(), 1);
    }

    #[test]
    fn cap_spares_owners_and_queue_drops_oldest() {
        let (key, apex, now) = setup();
        let hub = AuditHub::new(1, 2);
        let first = hub.subscribe(&apex, "a", false).unwrap();
        assert!(matches!(
            hub.subscribe(&apex, "b", false),
            Err(AuditError::SubscriptionLimit { .. })
        ));
        assert!(hub.subscribe(&apex, "owner", true).is_ok());
        let msg = Signer::new(&key, now, 3600).claim(&apex).unwrap();
        for _ in 0..3 {
            hub.publish(&msg, &Verdict::Accepted, now);
        }
        assert_eq!(first.dropped(), 1);
        let seqs: Vec<u64> = first.drain().iter().map(|e| e.seq).collect();
        assert_eq!(seqs, vec![1, 2]);
        hub.unsubscribe(first.id());
        assert!(first.is_closed());
        assert_eq!(hub.subscriber_count(), 1);
    }
}
