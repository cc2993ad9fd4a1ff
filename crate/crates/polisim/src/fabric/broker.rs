//! The broker's state machine, isolated from sockets and clocks.
//!
//! Everything observable about the broker — work-queue semantics, prefetch,
//! redelivery, protocol errors — is a fold over [`Input`]s at explicit
//! times, producing [`Action`]s for the hosting server to execute. The
//! server in [`super::server`] owns the sockets and feeds this machine from
//! a single thread, which is what serializes all channel mutations.
//!
//! Semantics: competing consumers with prefetch 1 (a consumer holding an
//! unacked delivery receives nothing more), round-robin assignment among
//! idle subscribers, and at-least-once delivery — unacked payloads return
//! to the *head* of their queue on consumer disconnect or visibility
//! timeout, and every (re)delivery carries a delivery id that is unique and
//! strictly increasing for the broker's lifetime.

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;
use std::time::{Duration, Instant};

use super::events::{BrokerEvent, RequeueReason};
use super::message::{raw_json, Command};

pub type ConnId = u64;

/// Deliveries a single consumer may hold unacked.
const PREFETCH: u32 = 1;

#[derive(Debug)]
pub enum Input {
    Connected(ConnId),
    Disconnected(ConnId),
    Command(ConnId, Command),
    /// The connection reader hit a frame or JSON violation.
    Malformed(ConnId, String),
    /// Time passed; expire overdue deliveries.
    Tick,
}

#[derive(Debug)]
pub enum Action {
    Send(ConnId, Command),
    Close(ConnId),
    Event(BrokerEvent),
}

#[derive(Debug, Default)]
struct ConnState {
    unacked: u32,
}

#[derive(Debug)]
struct InFlight {
    payload: Arc<str>,
    conn: ConnId,
    deadline: Instant,
}

#[derive(Debug, Default)]
struct ChannelState {
    pending: VecDeque<Arc<str>>,
    in_flight: BTreeMap<u64, InFlight>,
    subscribers: Vec<ConnId>,
    rr_cursor: usize,
}

#[derive(Debug)]
pub struct BrokerCore {
    channels: BTreeMap<String, ChannelState>,
    conns: BTreeMap<ConnId, ConnState>,
    delivery_channel: BTreeMap<u64, String>,
    next_delivery_id: u64,
    visibility_timeout: Duration,
}

impl BrokerCore {
    pub fn new(visibility_timeout: Duration) -> Self {
        BrokerCore {
            channels: BTreeMap::new(),
            conns: BTreeMap::new(),
            delivery_channel: BTreeMap::new(),
            next_delivery_id: 1,
            visibility_timeout,
        }
    }

    /// `(pending, in_flight)` depth per channel.
    pub fn channel_depths(&self) -> BTreeMap<String, (usize, usize)> {
        self.channels
            .iter()
            .map(|(name, ch)| (name.clone(), (ch.pending.len(), ch.in_flight.len())))
            .collect()
    }

    pub fn step(&mut self, input: Input, now: Instant) -> Vec<Action> {
        let mut actions = Vec::new();
        match input {
            Input::Connected(conn) => {
                self.conns.insert(conn, ConnState::default());
                actions.push(Action::Event(BrokerEvent::Connected { conn }));
            }
            Input::Disconnected(conn) => {
                self.drop_connection(conn, &mut actions, now);
            }
            Input::Malformed(conn, reason) => {
                actions.push(Action::Send(conn, Command::error(reason.clone())));
                actions.push(Action::Event(BrokerEvent::ProtocolError { conn, reason }));
                self.drop_connection(conn, &mut actions, now);
                actions.push(Action::Close(conn));
            }
            Input::Command(conn, command) => self.handle_command(conn, command, now, &mut actions),
            Input::Tick => self.expire_overdue(now, &mut actions),
        }
        actions
    }

    fn handle_command(&mut self, conn: ConnId, command: Command, now: Instant, actions: &mut Vec<Action>) {
        self.conns.entry(conn).or_default();
        match command {
            Command::Subscribe { channel } => {
                let state = self.channels.entry(channel.clone()).or_default();
                if !state.subscribers.contains(&conn) {
                    state.subscribers.push(conn);
                    actions.push(Action::Event(BrokerEvent::Subscribed {
                        conn,
                        channel: channel.clone(),
                    }));
                }
                self.dispatch(&channel, now, actions);
            }
            Command::Publish { channel, payload } => {
                let state = self.channels.entry(channel.clone()).or_default();
                state.pending.push_back(Arc::from(payload.get()));
                actions.push(Action::Event(BrokerEvent::Published {
                    conn,
                    channel: channel.clone(),
                }));
                self.dispatch(&channel, now, actions);
            }
            Command::Ack { delivery_id } => self.handle_ack(conn, delivery_id, now, actions),
            Command::Ping => actions.push(Action::Send(conn, Command::Pong)),
            Command::Pong => {}
            Command::Deliver { .. } => {
                let reason = "deliver frames flow broker-to-client only".to_string();
                actions.push(Action::Send(conn, Command::error(reason.clone())));
                actions.push(Action::Event(BrokerEvent::ProtocolError { conn, reason }));
            }
            Command::Error { reason } => {
                actions.push(Action::Event(BrokerEvent::ProtocolError {
                    conn,
                    reason: format!("client-reported error: {reason}"),
                }));
            }
        }
    }

    fn handle_ack(&mut self, conn: ConnId, delivery_id: u64, now: Instant, actions: &mut Vec<Action>) {
        let owned = self
            .delivery_channel
            .get(&delivery_id)
            .and_then(|name| {
                let entry = self.channels.get(name)?.in_flight.get(&delivery_id)?;
                Some((name.clone(), entry.conn))
            });
        match owned {
            Some((channel, owner)) if owner == conn => {
                self.delivery_channel.remove(&delivery_id);
                self.channels
                    .get_mut(&channel)
                    .expect("channel existed above")
                    .in_flight
                    .remove(&delivery_id);
                if let Some(state) = self.conns.get_mut(&conn) {
                    state.unacked = state.unacked.saturating_sub(1);
                }
                actions.push(Action::Event(BrokerEvent::Acked {
                    conn,
                    channel: channel.clone(),
                    delivery_id,
                }));
                self.dispatch(&channel, now, actions);
            }
            Some((_, owner)) => {
                let reason =
                    format!("delivery_id {delivery_id} belongs to another consumer (conn {owner})");
                actions.push(Action::Send(conn, Command::error(reason.clone())));
                actions.push(Action::Event(BrokerEvent::ProtocolError { conn, reason }));
            }
            None => {
                let reason = format!("unknown delivery_id {delivery_id}");
                actions.push(Action::Send(conn, Command::error(reason.clone())));
                actions.push(Action::Event(BrokerEvent::ProtocolError { conn, reason }));
            }
        }
    }

    /// Removes a connection, requeues whatever it held, and redistributes.
    fn drop_connection(&mut self, conn: ConnId, actions: &mut Vec<Action>, now: Instant) {
        if self.conns.remove(&conn).is_none() {
            return; // reader threads and close actions can race; be idempotent
        }
        let mut requeued = 0u32;
        let mut touched = Vec::new();
        for (name, channel) in self.channels.iter_mut() {
            if let Some(pos) = channel.subscribers.iter().position(|&c| c == conn) {
                channel.subscribers.remove(pos);
                if pos < channel.rr_cursor {
                    channel.rr_cursor -= 1;
                }
                if !channel.subscribers.is_empty() {
                    channel.rr_cursor %= channel.subscribers.len();
                } else {
                    channel.rr_cursor = 0;
                }
            }
            let held: Vec<u64> = channel
                .in_flight
                .iter()
                .filter(|(_, e)| e.conn == conn)
                .map(|(&id, _)| id)
                .collect();
            if held.is_empty() {
                continue;
            }
            // Oldest delivery ends up at the very head.
            for &id in held.iter().rev() {
                let entry = channel.in_flight.remove(&id).expect("collected above");
                self.delivery_channel.remove(&id);
                channel.pending.push_front(entry.payload);
                requeued += 1;
                actions.push(Action::Event(BrokerEvent::Requeued {
                    channel: name.clone(),
                    delivery_id: id,
                    reason: RequeueReason::ConsumerDisconnect,
                }));
            }
            touched.push(name.clone());
        }
        actions.push(Action::Event(BrokerEvent::Disconnected { conn, requeued }));
        for name in touched {
            self.dispatch(&name, now, actions);
        }
    }

    fn expire_overdue(&mut self, now: Instant, actions: &mut Vec<Action>) {
        let mut touched = Vec::new();
        for (name, channel) in self.channels.iter_mut() {
            let overdue: Vec<u64> = channel
                .in_flight
                .iter()
                .filter(|(_, e)| e.deadline <= now)
                .map(|(&id, _)| id)
                .collect();
            if overdue.is_empty() {
                continue;
            }
            for &id in overdue.iter().rev() {
                let entry = channel.in_flight.remove(&id).expect("collected above");
                self.delivery_channel.remove(&id);
                if let Some(state) = self.conns.get_mut(&entry.conn) {
                    state.unacked = state.unacked.saturating_sub(1);
                }
                channel.pending.push_front(entry.payload);
                actions.push(Action::Event(BrokerEvent::Requeued {
                    channel: name.clone(),
                    delivery_id: id,
                    reason: RequeueReason::VisibilityTimeout,
                }));
            }
            touched.push(name.clone());
        }
        for name in touched {
            self.dispatch(&name, now, actions);
        }
    }

    /// Hands pending payloads to idle subscribers, round-robin, until one
    /// side runs out.
    fn dispatch(&mut self, name: &str, now: Instant, actions: &mut Vec<Action>) {
        let Some(channel) = self.channels.get_mut(name) else {
            return;
        };
        loop {
            if channel.pending.is_empty() || channel.subscribers.is_empty() {
                return;
            }
            let count = channel.subscribers.len();
            let mut chosen = None;
            for offset in 0..count {
                let idx = (channel.rr_cursor + offset) % count;
                let conn = channel.subscribers[idx];
                let idle = self
                    .conns
                    .get(&conn)
                    .is_some_and(|state| state.unacked < PREFETCH);
                if idle {
                    chosen = Some((idx, conn));
                    break;
                }
            }
            let Some((idx, conn)) = chosen else { return };
            channel.rr_cursor = (idx + 1) % count;
            let payload = channel.pending.pop_front().expect("checked nonempty");
            let delivery_id = self.next_delivery_id;
            self.next_delivery_id += 1;
            channel.in_flight.insert(
                delivery_id,
                InFlight {
                    payload: payload.clone(),
                    conn,
                    deadline: now + self.visibility_timeout,
                },
            );
            self.delivery_channel.insert(delivery_id, name.to_string());
            self.conns
                .get_mut(&conn)
                .expect("idle check found it")
                .unacked += 1;
            actions.push(Action::Send(
                conn,
                Command::Deliver {
                    channel: name.to_string(),
                    delivery_id,
                    payload: raw_json(&payload),
                },
            ));
            actions.push(Action::Event(BrokerEvent::Delivered {
                conn,
                channel: name.to_string(),
                delivery_id,
            }));
        }
    }
}
