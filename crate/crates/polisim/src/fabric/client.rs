//! Broker client: one TCP connection, driven by one thread at a time.
//!
//! Reads go through a [`FrameDecoder`] so a read timeout can fire mid-frame
//! without losing stream position. Deliveries that arrive while the caller
//! is waiting for something else (a pong, say) are queued and handed out by
//! the next [`next_delivery`] call.
//!
//! [`next_delivery`]: BrokerClient::next_delivery

use std::collections::VecDeque;
use std::io::Read;
use std::net::TcpStream;
use std::time::{Duration, Instant, SystemTime};

use polisim_core::SplitMix64;

use super::frame::{write_frame, FrameDecoder, FrameError};
use super::message::{raw_json, Command, MessageError};

pub const BACKOFF_BASE: Duration = Duration::from_millis(200);
pub const BACKOFF_CAP: Duration = Duration::from_secs(10);

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Message(#[from] MessageError),
    #[error("broker reported: {reason}")]
    Broker { reason: String },
    #[error("broker sent an unexpected {0} frame")]
    Unexpected(&'static str),
    #[error("timed out waiting for the broker")]
    TimedOut,
    #[error("connection closed by the broker")]
    Closed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delivery {
    pub channel: String,
    pub delivery_id: u64,
    /// Raw payload JSON, byte-identical to what was published.
    pub payload: String,
}

enum Incoming {
    Delivery(Delivery),
    Pong,
}

pub struct BrokerClient {
    stream: TcpStream,
    decoder: FrameDecoder,
    queued: VecDeque<Delivery>,
}

impl BrokerClient {
    /// Single connection attempt.
    pub fn connect(addr: &str) -> std::io::Result<BrokerClient> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(BrokerClient {
            stream,
            decoder: FrameDecoder::new(),
            queued: VecDeque::new(),
        })
    }

    /// Retries with jittered exponential backoff (base 200 ms, doubling,
    /// capped at 10 s) until a connection succeeds or `give_up_after` has
    /// elapsed; returns the last error in that case.
    pub fn connect_with_backoff(addr: &str, give_up_after: Duration) -> std::io::Result<BrokerClient> {
        let started = Instant::now();
        let mut jitter = SplitMix64::new(backoff_seed());
        let mut delay = BACKOFF_BASE;
        loop {
            match Self::connect(addr) {
                Ok(client) => return Ok(client),
                Err(e) => {
                    if started.elapsed() >= give_up_after {
                        return Err(e);
                    }
                    // Sleep between half and the full current delay.
                    let jittered = delay.mul_f64(0.5 + 0.5 * jitter.uniform());
                    let remaining = give_up_after.saturating_sub(started.elapsed());
                    std::thread::sleep(jittered.min(remaining));
                    delay = (delay * 2).min(BACKOFF_CAP);
                }
            }
        }
    }

    pub fn publish(&mut self, channel: &str, payload_json: &str) -> Result<(), ClientError> {
        let command = Command::Publish {
            channel: channel.to_string(),
            payload: raw_json(payload_json),
        };
        write_frame(&mut self.stream, &command.encode())?;
        Ok(())
    }

    pub fn subscribe(&mut self, channel: &str) -> Result<(), ClientError> {
        let command = Command::Subscribe {
            channel: channel.to_string(),
        };
        write_frame(&mut self.stream, &command.encode())?;
        Ok(())
    }

    pub fn ack(&mut self, delivery_id: u64) -> Result<(), ClientError> {
        write_frame(&mut self.stream, &Command::Ack { delivery_id }.encode())?;
        Ok(())
    }

    /// Blocks until a delivery arrives. `None` waits forever.
    pub fn next_delivery(&mut self, timeout: Option<Duration>) -> Result<Delivery, ClientError> {
        if let Some(delivery) = self.queued.pop_front() {
            return Ok(delivery);
        }
        let deadline = timeout.map(|t| Instant::now() + t);
        loop {
            match self.read_incoming(deadline)? {
                Incoming::Delivery(d) => return Ok(d),
                Incoming::Pong => continue,
            }
        }
    }

    /// Round-trips a ping. Because the broker handles each connection's
    /// frames in order, a pong also proves every earlier frame on this
    /// connection has been processed — usable as a write barrier.
    pub fn ping(&mut self, timeout: Duration) -> Result<(), ClientError> {
        write_frame(&mut self.stream, &Command::Ping.encode())?;
        let deadline = Some(Instant::now() + timeout);
        loop {
            match self.read_incoming(deadline)? {
                Incoming::Pong => return Ok(()),
                Incoming::Delivery(d) => self.queued.push_back(d),
            }
        }
    }

    fn read_incoming(&mut self, deadline: Option<Instant>) -> Result<Incoming, ClientError> {
        let mut buf = [0u8; 16 * 1024];
        loop {
            if let Some(frame) = self.decoder.next_frame()? {
                match Command::decode(&frame)? {
                    Command::Deliver {
                        channel,
                        delivery_id,
                        payload,
                    } => {
                        return Ok(Incoming::Delivery(Delivery {
                            channel,
                            delivery_id,
                            payload: payload.get().to_string(),
                        }))
                    }
                    Command::Pong => return Ok(Incoming::Pong),
                    Command::Error { reason } => return Err(ClientError::Broker { reason }),
                    Command::Ping => {
                        write_frame(&mut self.stream, &Command::Pong.encode())?;
                    }
                    Command::Subscribe { .. } => return Err(ClientError::Unexpected("subscribe")),
                    Command::Publish { .. } => return Err(ClientError::Unexpected("publish")),
                    Command::Ack { .. } => return Err(ClientError::Unexpected("ack")),
                }
                continue;
            }
            let remaining = match deadline {
                Some(d) => {
                    let left = d.saturating_duration_since(Instant::now());
                    if left.is_zero() {
                        return Err(ClientError::TimedOut);
                    }
                    Some(left)
                }
                None => None,
            };
            self.stream.set_read_timeout(remaining)?;
            match self.stream.read(&mut buf) {
                Ok(0) => return Err(ClientError::Closed),
                Ok(n) => self.decoder.extend(&buf[..n]),
                Err(e)
                    if e.kind() == std::io::ErrorKind::WouldBlock
                        || e.kind() == std::io::ErrorKind::TimedOut =>
                {
                    return Err(ClientError::TimedOut)
                }
                Err(e) => return Err(ClientError::Io(e)),
            }
        }
    }
}

fn backoff_seed() -> u64 {
    let nanos = SystemTime::now()
        .duration_since(SystemTime::UNIX_EPOCH)
        .map(|d| d.subsec_nanos() as u64)
        .unwrap_or(0);
    nanos ^ (std::process::id() as u64) << 32
}
