//! The message vocabulary carried inside frames.
//!
//! On the wire every message is a JSON object with a string `type` plus the
//! fields that type requires; unknown fields are ignored on receipt so old
//! peers tolerate newer senders. [`Command`] is the validated, typed form;
//! [`WireMessage`] is the permissive carrier it serializes through.
//! Payloads stay as raw JSON end to end — the broker routes them without
//! ever parsing scenario documents or results.

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageType {
    Subscribe,
    Publish,
    Deliver,
    Ack,
    Ping,
    Pong,
    Error,
}

/// Carrier struct mirroring the wire shape: every field optional except
/// `type`. `RawValue` keeps payload bytes intact through the broker.
#[derive(Debug, Serialize, Deserialize)]
pub struct WireMessage {
    #[serde(rename = "type")]
    pub message_type: MessageType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delivery_id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<Box<RawValue>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

/// A validated message: required fields for its type are present.
#[derive(Debug)]
pub enum Command {
    Subscribe {
        channel: String,
    },
    Publish {
        channel: String,
        payload: Box<RawValue>,
    },
    Deliver {
        channel: String,
        delivery_id: u64,
        payload: Box<RawValue>,
    },
    Ack {
        delivery_id: u64,
    },
    Ping,
    Pong,
    Error {
        reason: String,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum MessageError {
    #[error("frame body is not a message object: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{message_type:?} message missing required field `{field}`")]
    MissingField {
        message_type: MessageType,
        field: &'static str,
    },
}

impl Command {
    pub fn error(reason: impl Into<String>) -> Command {
        Command::Error {
            reason: reason.into(),
        }
    }

    /// Parses and validates one frame body.
    pub fn decode(body: &[u8]) -> Result<Command, MessageError> {
        let wire: WireMessage = serde_json::from_slice(body)?;
        let missing = |field| MessageError::MissingField {
            message_type: wire.message_type,
            field,
        };
        Ok(match wire.message_type {
            MessageType::Subscribe => Command::Subscribe {
                channel: wire.channel.ok_or(missing("channel"))?,
            },
            MessageType::Publish => Command::Publish {
                channel: wire.channel.ok_or(missing("channel"))?,
                payload: wire.payload.ok_or(missing("payload"))?,
            },
            MessageType::Deliver => Command::Deliver {
                channel: wire.channel.ok_or(missing("channel"))?,
                delivery_id: wire.delivery_id.ok_or(missing("delivery_id"))?,
                payload: wire.payload.ok_or(missing("payload"))?,
            },
            MessageType::Ack => Command::Ack {
                delivery_id: wire.delivery_id.ok_or(missing("delivery_id"))?,
            },
            MessageType::Ping => Command::Ping,
            MessageType::Pong => Command::Pong,
            MessageType::Error => Command::Error {
                reason: wire.reason.ok_or(missing("reason"))?,
            },
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let wire = match self {
            Command::Subscribe { channel } => WireMessage {
                message_type: MessageType::Subscribe,
                channel: Some(channel.clone()),
                delivery_id: None,
                payload: None,
                reason: None,
            },
            Command::Publish { channel, payload } => WireMessage {
                message_type: MessageType::Publish,
                channel: Some(channel.clone()),
                delivery_id: None,
                payload: Some(payload.clone()),
                reason: None,
            },
            Command::Deliver {
                channel,
                delivery_id,
                payload,
            } => WireMessage {
                message_type: MessageType::Deliver,
                channel: Some(channel.clone()),
                delivery_id: Some(*delivery_id),
                payload: Some(payload.clone()),
                reason: None,
            },
            Command::Ack { delivery_id } => WireMessage {
                message_type: MessageType::Ack,
                channel: None,
                delivery_id: Some(*delivery_id),
                payload: None,
                reason: None,
            },
            Command::Ping => WireMessage {
                message_type: MessageType::Ping,
                channel: None,
                delivery_id: None,
                payload: None,
                reason: None,
            },
            Command::Pong => WireMessage {
                message_type: MessageType::Pong,
                channel: None,
                delivery_id: None,
                payload: None,
                reason: None,
            },
            Command::Error { reason } => WireMessage {
                message_type: MessageType::Error,
                channel: None,
                delivery_id: None,
                payload: None,
                reason: Some(reason.clone()),
            },
        };
        serde_json::to_vec(&wire).expect("message serialization cannot fail")
    }
}

/// JSON raw value from a string already known to be valid JSON.
pub fn raw_json(json: &str) -> Box<RawValue> {
    RawValue::from_string(json.to_owned()).expect("caller promised valid JSON")
}
