//! The message fabric: a framed-JSON work-queue broker and its client.
//!
//! Processes exchange length-prefixed JSON frames (see [`frame`]) carrying
//! the small message vocabulary in [`message`]. The broker gives AMQP-style
//! work-queue semantics — named channels, competing consumers, prefetch 1,
//! acknowledgements, and at-least-once redelivery — with its entire state
//! machine in [`broker`], pure and clock-parameterized; [`server`] runs it
//! over TCP and [`client`] talks to it. Everything the broker does is
//! journaled as [`events`].

pub mod broker;
pub mod client;
pub mod events;
pub mod frame;
pub mod message;
pub mod server;

pub use broker::ConnId;
pub use client::{BrokerClient, ClientError, Delivery};
pub use events::{BrokerEvent, EventRecord, RequeueReason};
pub use server::{serve, BrokerConfig, BrokerHandle};

/// Channel carrying scenario documents to workers.
pub const TASKS_CHANNEL: &str = "tasks";
/// Channel carrying evaluation results back.
pub const RESULTS_CHANNEL: &str = "results";
