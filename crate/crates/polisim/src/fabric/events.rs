//! Structured broker events, written as JSON lines to the event log and
//! optionally streamed to an in-process tap. Tests lean on this log to
//! prove delivery-uniqueness and ordering claims that are otherwise
//! invisible from outside the broker.

use serde::{Deserialize, Serialize};

use super::broker::ConnId;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum BrokerEvent {
    Connected {
        conn: ConnId,
    },
    Disconnected {
        conn: ConnId,
        /// In-flight deliveries returned to their queues.
        requeued: u32,
    },
    Subscribed {
        conn: ConnId,
        channel: String,
    },
    Published {
        conn: ConnId,
        channel: String,
    },
    Delivered {
        conn: ConnId,
        channel: String,
        delivery_id: u64,
    },
    Acked {
        conn: ConnId,
        channel: String,
        delivery_id: u64,
    },
    /// An unacked delivery went back to the head of its queue; the next
    /// delivery of that payload gets a fresh id.
    Requeued {
        channel: String,
        delivery_id: u64,
        reason: RequeueReason,
    },
    ProtocolError {
        conn: ConnId,
        reason: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequeueReason {
    VisibilityTimeout,
    ConsumerDisconnect,
}

/// One event-log line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    /// Milliseconds since the Unix epoch.
    pub ts_ms: u64,
    #[serde(flatten)]
    pub event: BrokerEvent,
}
