//! The broker service: sockets, threads, and the event log around
//! [`BrokerCore`].
//!
//! One reader thread per connection turns frames into [`Input`]s; a single
//! core thread folds them (plus periodic ticks) through the state machine
//! and executes the resulting actions. Only the core thread touches broker
//! state or writes frames, so channel mutations are totally ordered and the
//! event log is an exact serialization of what the broker did.

use std::collections::{HashMap, VecDeque};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant, SystemTime};

use super::broker::{Action, BrokerCore, ConnId, Input};
use super::events::EventRecord;
use super::frame::{read_frame, write_frame, FrameError};
use super::message::Command;

const TICK_INTERVAL: Duration = Duration::from_millis(100);
const WRITE_TIMEOUT: Duration = Duration::from_secs(10);

pub struct BrokerConfig {
    pub listen: SocketAddr,
    pub visibility_timeout: Duration,
    /// JSONL event log path; appended to if it exists.
    pub event_log: Option<PathBuf>,
    /// In-process event stream for tests and embedding.
    pub event_tap: Option<Sender<EventRecord>>,
}

impl BrokerConfig {
    pub fn new(listen: SocketAddr) -> Self {
        BrokerConfig {
            listen,
            visibility_timeout: Duration::from_secs(60),
            event_log: None,
            event_tap: None,
        }
    }
}

/// A running broker. Stops (and joins every thread) on [`shutdown`] or drop.
///
/// [`shutdown`]: BrokerHandle::shutdown
pub struct BrokerHandle {
    addr: SocketAddr,
    stopping: Arc<AtomicBool>,
    threads: Vec<JoinHandle<()>>,
    reader_threads: Arc<Mutex<Vec<JoinHandle<()>>>>,
    writers: Arc<Mutex<HashMap<ConnId, TcpStream>>>,
}

impl BrokerHandle {
    /// The bound address — resolves port 0 requests.
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        if self.stopping.swap(true, Ordering::SeqCst) {
            return;
        }
        // Unblock the accept loop; it checks the flag after every accept.
        let _ = TcpStream::connect(self.addr);
        // Closing every socket unblocks the per-connection readers.
        for (_, stream) in self.writers.lock().expect("writers lock").drain() {
            let _ = stream.shutdown(Shutdown::Both);
        }
        for handle in self.threads.drain(..) {
            let _ = handle.join();
        }
        let readers: Vec<_> = self.reader_threads.lock().expect("readers lock").drain(..).collect();
        for handle in readers {
            let _ = handle.join();
        }
    }
}

impl Drop for BrokerHandle {
    fn drop(&mut self) {
        self.stop();
    }
}

/// Binds and starts a broker, returning once it accepts connections.
pub fn serve(config: BrokerConfig) -> std::io::Result<BrokerHandle> {
    let listener = TcpListener::bind(config.listen)?;
    let addr = listener.local_addr()?;
    let event_log = match &config.event_log {
        Some(path) => Some(File::options().create(true).append(true).open(path)?),
        None => None,
    };

    let stopping = Arc::new(AtomicBool::new(false));
    let writers: Arc<Mutex<HashMap<ConnId, TcpStream>>> = Arc::new(Mutex::new(HashMap::new()));
    let reader_threads: Arc<Mutex<Vec<JoinHandle<()>>>> = Arc::new(Mutex::new(Vec::new()));
    let (input_tx, input_rx) = mpsc::channel::<Input>();

    let core_thread = {
        let stopping = Arc::clone(&stopping);
        let writers = Arc::clone(&writers);
        let tap = config.event_tap;
        let visibility_timeout = config.visibility_timeout;
        std::thread::Builder::new()
            .name("broker-core".into())
            .spawn(move || core_loop(input_rx, stopping, writers, event_log, tap, visibility_timeout))
            .expect("spawn broker core thread")
    };

    let accept_thread = {
        let stopping = Arc::clone(&stopping);
        let writers = Arc::clone(&writers);
        let reader_threads = Arc::clone(&reader_threads);
        std::thread::Builder::new()
            .name("broker-accept".into())
            .spawn(move || accept_loop(listener, stopping, writers, reader_threads, input_tx))
            .expect("spawn broker accept thread")
    };

    Ok(BrokerHandle {
        addr,
        stopping,
        threads: vec![core_thread, accept_thread],
        reader_threads,
        writers,
    })
}

fn accept_loop(
    listener: TcpListener,
    stopping: Arc<AtomicBool>,
    writers: Arc<Mutex<HashMap<ConnId, TcpStream>>>,
    reader_threads: Arc<Mutex<Vec<JoinHandle<()>>>>,
    input_tx: Sender<Input>,
) {
    let next_conn = AtomicU64::new(1);
    for stream in listener.incoming() {
        if stopping.load(Ordering::SeqCst) {
            return;
        }
        let stream = match stream {
            Ok(s) => s,
            Err(e) => {
                eprintln!("broker: accept failed: {e}");
                continue;
            }
        };
        let conn = next_conn.fetch_add(1, Ordering::SeqCst);
        let _ = stream.set_nodelay(true);
        let _ = stream.set_write_timeout(Some(WRITE_TIMEOUT));
        let write_half = match stream.try_clone() {
            Ok(w) => w,
            Err(e) => {
                eprintln!("broker: could not clone connection {conn}: {e}");
                continue;
            }
        };
        writers.lock().expect("writers lock").insert(conn, write_half);
        if input_tx.send(Input::Connected(conn)).is_err() {
            return; // core gone; we are shutting down
        }
        let tx = input_tx.clone();
        let reader = std::thread::Builder::new()
            .name(format!("broker-conn-{conn}"))
            .spawn(move || reader_loop(conn, stream, tx))
            .expect("spawn connection reader");
        reader_threads.lock().expect("readers lock").push(reader);
    }
}

fn reader_loop(conn: ConnId, mut stream: TcpStream, input_tx: Sender<Input>) {
    loop {
        let input = match read_frame(&mut stream) {
            Ok(Some(body)) => match Command::decode(&body) {
                Ok(command) => Input::Command(conn, command),
                Err(e) => {
                    let _ = input_tx.send(Input::Malformed(conn, e.to_string()));
                    return;
                }
            },
            Ok(None) => {
                let _ = input_tx.send(Input::Disconnected(conn));
                return;
            }
            Err(e @ FrameError::Oversize { .. }) => {
                let _ = input_tx.send(Input::Malformed(conn, e.to_string()));
                return;
            }
            Err(_) => {
                // Truncation and socket errors are disconnects, not protocol
                // violations — the peer is simply gone.
                let _ = input_tx.send(Input::Disconnected(conn));
                return;
            }
        };
        if input_tx.send(input).is_err() {
            return;
        }
    }
}

fn core_loop(
    input_rx: Receiver<Input>,
    stopping: Arc<AtomicBool>,
    writers: Arc<Mutex<HashMap<ConnId, TcpStream>>>,
    event_log: Option<File>,
    tap: Option<Sender<EventRecord>>,
    visibility_timeout: Duration,
) {
    let mut core = BrokerCore::new(visibility_timeout);
    let mut log = event_log.map(BufWriter::new);
    let mut last_tick = Instant::now();
    loop {
        if stopping.load(Ordering::SeqCst) {
            return;
        }
        let mut queue: VecDeque<Input> = match input_rx.recv_timeout(TICK_INTERVAL) {
            Ok(input) => VecDeque::from([input]),
            Err(RecvTimeoutError::Timeout) => VecDeque::new(),
            Err(RecvTimeoutError::Disconnected) => return,
        };
        if last_tick.elapsed() >= TICK_INTERVAL {
            queue.push_back(Input::Tick);
            last_tick = Instant::now();
        }
        while let Some(input) = queue.pop_front() {
            let actions = core.step(input, Instant::now());
            for action in actions {
                match action {
                    Action::Send(conn, command) => {
                        let failed = {
                            let mut writers = writers.lock().expect("writers lock");
                            match writers.get_mut(&conn) {
                                Some(stream) => write_frame(stream, &command.encode()).is_err(),
                                None => false, // already closed
                            }
                        };
                        if failed {
                            queue.push_back(Input::Disconnected(conn));
                        }
                    }
                    Action::Close(conn) => {
                        if let Some(stream) = writers.lock().expect("writers lock").remove(&conn) {
                            let _ = stream.shutdown(Shutdown::Both);
                        }
                    }
                    Action::Event(event) => {
                        let record = EventRecord {
                            ts_ms: wall_clock_ms(),
                            event,
                        };
                        if let Some(log) = log.as_mut() {
                            if let Ok(line) = serde_json::to_string(&record) {
                                let _ = writeln!(log, "{line}");
                                let _ = log.flush();
                            }
                        }
                        if let Some(tap) = &tap {
                            let _ = tap.send(record);
                        }
                    }
                }
            }
        }
    }
}

fn wall_clock_ms() -> u64 {
    SystemTime::now()
        .duration_since(SystemTime::UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}
