//! Live broker integration: real sockets, real threads, competing
//! consumers, crash redelivery, and the event log.

use std::collections::HashSet;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use polisim::fabric::{
    serve, BrokerClient, BrokerConfig, BrokerEvent, BrokerHandle, ClientError, EventRecord,
    TASKS_CHANNEL,
};

fn broker() -> BrokerHandle {
    serve(BrokerConfig::new("127.0.0.1:0".parse().unwrap())).unwrap()
}

fn broker_with(config: impl FnOnce(&mut BrokerConfig)) -> BrokerHandle {
    let mut c = BrokerConfig::new("127.0.0.1:0".parse().unwrap());
    config(&mut c);
    serve(c).unwrap()
}

const WAIT: Option<Duration> = Some(Duration::from_secs(2));

#[test]
fn published_work_reaches_a_later_subscriber() {
    let broker = broker();
    let addr = broker.addr().to_string();

    let mut producer = BrokerClient::connect(&addr).unwrap();
    producer.publish(TASKS_CHANNEL, r#"{"job":1}"#).unwrap();
    producer.publish(TASKS_CHANNEL, r#"{"job":2}"#).unwrap();

    let mut consumer = BrokerClient::connect(&addr).unwrap();
    consumer.subscribe(TASKS_CHANNEL).unwrap();
    let first = consumer.next_delivery(WAIT).unwrap();
    assert_eq!(first.payload, r#"{"job":1}"#);
    assert_eq!(first.channel, TASKS_CHANNEL);
    consumer.ack(first.delivery_id).unwrap();
    let second = consumer.next_delivery(WAIT).unwrap();
    assert_eq!(second.payload, r#"{"job":2}"#);
    assert!(second.delivery_id > first.delivery_id);
    consumer.ack(second.delivery_id).unwrap();

    broker.shutdown();
}

#[test]
fn four_competing_consumers_split_the_queue_exactly_once() {
    let broker = broker();
    let addr = broker.addr().to_string();
    let total = 100usize;

    let mut producer = BrokerClient::connect(&addr).unwrap();
    for i in 0..total {
        producer.publish(TASKS_CHANNEL, &format!(r#"{{"n":{i}}}"#)).unwrap();
    }

    let seen: Mutex<Vec<(usize, String)>> = Mutex::new(Vec::new());
    let done = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for consumer_index in 0..4 {
            let addr = addr.clone();
            let seen = &seen;
            let done = &done;
            scope.spawn(move || {
                let mut client = BrokerClient::connect(&addr).unwrap();
                client.subscribe(TASKS_CHANNEL).unwrap();
                loop {
                    match client.next_delivery(Some(Duration::from_millis(300))) {
                        Ok(delivery) => {
                            seen.lock().unwrap().push((consumer_index, delivery.payload));
                            client.ack(delivery.delivery_id).unwrap();
                            done.fetch_add(1, Ordering::SeqCst);
                        }
                        Err(ClientError::TimedOut) => {
                            if done.load(Ordering::SeqCst) >= total {
                                return;
                            }
                        }
                        Err(e) => panic!("consumer {consumer_index}: {e}"),
                    }
                }
            });
        }
    });

    let seen = seen.into_inner().unwrap();
    assert_eq!(seen.len(), total, "every payload consumed exactly once");
    let unique: HashSet<&str> = seen.iter().map(|(_, p)| p.as_str()).collect();
    assert_eq!(unique.len(), total, "no payload delivered twice");
    for consumer_index in 0..4 {
        let share = seen.iter().filter(|(c, _)| *c == consumer_index).count();
        assert!(share > 0, "consumer {consumer_index} starved");
    }
    broker.shutdown();
}

#[test]
fn unacked_work_outlives_its_consumer() {
    let broker = broker();
    let addr = broker.addr().to_string();

    let mut producer = BrokerClient::connect(&addr).unwrap();
    producer.publish(TASKS_CHANNEL, r#"{"fragile":true}"#).unwrap();

    let mut doomed = BrokerClient::connect(&addr).unwrap();
    doomed.subscribe(TASKS_CHANNEL).unwrap();
    let delivery = doomed.next_delivery(WAIT).unwrap();
    assert_eq!(delivery.payload, r#"{"fragile":true}"#);
    let dead_id = delivery.delivery_id;
    drop(doomed); // crash without ack

    let mut survivor = BrokerClient::connect(&addr).unwrap();
    survivor.subscribe(TASKS_CHANNEL).unwrap();
    let redelivery = survivor.next_delivery(WAIT).unwrap();
    assert_eq!(redelivery.payload, r#"{"fragile":true}"#);
    assert_ne!(redelivery.delivery_id, dead_id, "redelivery gets a fresh id");
    survivor.ack(redelivery.delivery_id).unwrap();
    broker.shutdown();
}

#[test]
fn visibility_timeout_redelivers_to_a_slow_consumer() {
    let broker = broker_with(|c| c.visibility_timeout = Duration::from_millis(400));
    let addr = broker.addr().to_string();

    let mut producer = BrokerClient::connect(&addr).unwrap();
    producer.publish(TASKS_CHANNEL, r#"{"slow":1}"#).unwrap();

    let mut consumer = BrokerClient::connect(&addr).unwrap();
    consumer.subscribe(TASKS_CHANNEL).unwrap();
    let first = consumer.next_delivery(WAIT).unwrap();

    // Sit on it past the visibility timeout; the broker takes it back and
    // redelivers, and the stale ack is rejected.
    let redelivery = consumer.next_delivery(WAIT).unwrap();
    assert_eq!(redelivery.payload, first.payload);
    assert_ne!(redelivery.delivery_id, first.delivery_id);

    let stale = consumer.ack(first.delivery_id);
    // The error arrives on the next read, not at write time.
    assert!(stale.is_ok());
    let err = consumer.next_delivery(Some(Duration::from_millis(500))).unwrap_err();
    match err {
        ClientError::Broker { reason } => assert!(reason.contains("unknown delivery_id")),
        other => panic!("expected broker error, got {other}"),
    }
    consumer.ack(redelivery.delivery_id).unwrap();
    consumer.ping(Duration::from_secs(2)).unwrap();
    broker.shutdown();
}

#[test]
fn double_ack_is_reported_but_not_fatal() {
    let broker = broker();
    let addr = broker.addr().to_string();

    let mut producer = BrokerClient::connect(&addr).unwrap();
    producer.publish(TASKS_CHANNEL, r#"{"x":1}"#).unwrap();

    let mut consumer = BrokerClient::connect(&addr).unwrap();
    consumer.subscribe(TASKS_CHANNEL).unwrap();
    let delivery = consumer.next_delivery(WAIT).unwrap();
    consumer.ack(delivery.delivery_id).unwrap();
    consumer.ack(delivery.delivery_id).unwrap();
    let err = consumer.next_delivery(Some(Duration::from_millis(500))).unwrap_err();
    assert!(matches!(err, ClientError::Broker { .. }));
    // The connection is still usable afterwards.
    consumer.ping(Duration::from_secs(2)).unwrap();
    broker.shutdown();
}

#[test]
fn event_log_captures_the_full_task_lifecycle() {
    let dir = tempfile::tempdir().unwrap();
    let log_path = dir.path().join("events.jsonl");
    let broker = broker_with(|c| c.event_log = Some(log_path.clone()));
    let addr = broker.addr().to_string();

    let mut producer = BrokerClient::connect(&addr).unwrap();
    producer.publish(TASKS_CHANNEL, r#"{"evt":1}"#).unwrap();
    let mut consumer = BrokerClient::connect(&addr).unwrap();
    consumer.subscribe(TASKS_CHANNEL).unwrap();
    let delivery = consumer.next_delivery(WAIT).unwrap();
    consumer.ack(delivery.delivery_id).unwrap();
    consumer.ping(Duration::from_secs(2)).unwrap();
    broker.shutdown(); // joins the core thread, flushing the log

    let text = std::fs::read_to_string(&log_path).unwrap();
    let events: Vec<EventRecord> = text
        .lines()
        .map(|line| serde_json::from_str(line).unwrap())
        .collect();
    let position = |pred: &dyn Fn(&BrokerEvent) -> bool| events.iter().position(|r| pred(&r.event));

    let published = position(&|e| matches!(e, BrokerEvent::Published { .. })).expect("published");
    let delivered = position(&|e| {
        matches!(e, BrokerEvent::Delivered { delivery_id, .. } if *delivery_id == delivery.delivery_id)
    })
    .expect("delivered");
    let acked = position(&|e| {
        matches!(e, BrokerEvent::Acked { delivery_id, .. } if *delivery_id == delivery.delivery_id)
    })
    .expect("acked");
    assert!(published < delivered && delivered < acked);
    assert!(position(&|e| matches!(e, BrokerEvent::Connected { .. })).unwrap() < published);
}

#[test]
fn connect_backoff_gives_up_after_its_window() {
    // Bind-then-drop to get a port with nothing listening.
    let vacant = {
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        listener.local_addr().unwrap().to_string()
    };
    let started = Instant::now();
    let err = BrokerClient::connect_with_backoff(&vacant, Duration::from_millis(400));
    assert!(err.is_err());
    let waited = started.elapsed();
    assert!(waited >= Duration::from_millis(200), "retried at least once: {waited:?}");
    assert!(waited < Duration::from_secs(5), "gave up promptly: {waited:?}");
}

#[test]
fn clean_shutdown_closes_client_connections() {
    let broker = broker();
    let addr = broker.addr().to_string();
    let mut consumer = BrokerClient::connect(&addr).unwrap();
    consumer.subscribe(TASKS_CHANNEL).unwrap();
    broker.shutdown();
    let err = consumer.next_delivery(WAIT).unwrap_err();
    assert!(
        matches!(err, ClientError::Closed | ClientError::Io(_) | ClientError::Frame(_)),
        "expected a connection-loss error, got {err}"
    );
}
