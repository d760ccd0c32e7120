use std::net::TcpStream;
use std::time::{Duration, Instant};

use tungstenite::stream::MaybeTlsStream;
use tungstenite::{connect, Message, WebSocket};
use wvn_telemetry::{decode, encode, Body, Envelope, OperatorCommand, StateSnapshot, TelemetryServer};

type Client = WebSocket<MaybeTlsStream<TcpStream>>;

fn client(server: &TelemetryServer) -> Client {
    let (ws, _) = connect(format!("ws://{}", server.local_addr())).unwrap();
    if let MaybeTlsStream::Plain(s) = ws.get_ref() {
        s.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
    }
    ws
}

fn next(ws: &mut Client) -> Envelope {
    loop {
        if let Message::Text(t) = ws.read().unwrap() {
            return decode(t.as_str()).unwrap();
        }
    }
}

fn wait_for(mut pred: impl FnMut() -> bool) {
    let start = Instant::now();
    while !pred() {
        assert!(start.elapsed() < Duration::from_secs(5), "timed out");
        std::thread::sleep(Duration::from_millis(5));
    }
}

fn send(ws: &mut Client, seq: u64, command: OperatorCommand) {
    let text = encode(&Envelope { seq, body: Body::Command(command) }).unwrap();
    ws.send(Message::text(text)).unwrap();
}

#[test]
fn operator_commands_and_read_only_clients() {
    let server = TelemetryServer::bind("127.0.0.1:0").unwrap();
    let mut op = client(&server);
    wait_for(|| server.operator().is_some());
    let mut viewer = client(&server);
    wait_for(|| server.client_count() == 2);

    let snap = StateSnapshot { tick: 9, ..Default::default() };
    server.publish(&snap).unwrap();
    for ws in [&mut op, &mut viewer] {
        match next(ws).body {
            Body::Snapshot(s) => assert_eq!(s.tick, 9),
            other => panic!("expected snapshot, got {other:?}"),
        }
    }

    send(&mut op, 11, OperatorCommand::SetParam { key: "k_sigma".into(), value: 3.0 });
    let mut cmds = Vec::new();
    wait_for(|| {
        cmds.extend(server.drain_commands());
        !cmds.is_empty()
    });
    assert_eq!(cmds[0].seq, 11);
    server.ack(cmds[0].client, 11, 10);
    match next(&mut op).body {
        Body::Ack(a) => assert_eq!((a.command_seq, a.tick), (11, 10)),
        other => panic!("expected ack, got {other:?}"),
    }

    send(&mut viewer, 3, OperatorCommand::Pause);
    match next(&mut viewer).body {
        Body::Nack(n) => {
            assert_eq!(n.command_seq, 3);
            assert!(n.reason.contains("read-only"));
        }
        other => panic!("expected nack, got {other:?}"),
    }

    viewer.send(Message::text(r#"{"type":"command","seq":4,"v":1,"payload":{"kind":"warp"}}"#)).unwrap();
    match next(&mut viewer).body {
        Body::Nack(n) => assert_eq!(n.command_seq, 4),
        other => panic!("expected nack, got {other:?}"),
    }
    assert!(server.drain_commands().is_empty());
}

#[test]
fn lagging_client_gets_only_latest_snapshot() {
    let server = TelemetryServer::bind("127.0.0.1:0").unwrap();
    let mut ws = client(&server);
    wait_for(|| server.client_count() == 1);
    // Publish faster than anyone could read; the last one must arrive and
    // nothing in between may be queued behind it.
    for tick in 0..200 {
        server.publish(&StateSnapshot { tick, ..Default::default() }).unwrap();
    }
    let mut seen = Vec::new();
    while seen.last() != Some(&199) {
        if let Body::Snapshot(s) = next(&mut ws).body {
            seen.push(s.tick);
        }
    }
    assert!(seen.windows(2).all(|w| w[0] < w[1]));
    assert!(seen.len() < 200);
}

#[test]
fn operator_slot_is_released_on_disconnect() {
    let server = TelemetryServer::bind("127.0.0.1:0").unwrap();
    let op = client(&server);
    wait_for(|| server.operator().is_some());
    let first = server.operator();
    drop(op);
    wait_for(|| server.operator().is_none());
    let _second = client(&server);
    wait_for(|| server.operator().is_some());
    assert_ne!(server.operator(), first);
}

#[test]
fn command_queue_is_bounded() {
    let server = TelemetryServer::bind("127.0.0.1:0").unwrap();
    let mut op = client(&server);
    wait_for(|| server.operator().is_some());
    for seq in 0..20 {
        send(&mut op, seq, OperatorCommand::Resume);
    }
    wait_for(|| server.dropped_commands() == 4);
    let seqs: Vec<u64> = server.drain_commands().iter().map(|c| c.seq).collect();
    assert_eq!(seqs, (4..20).collect::<Vec<_>>());
}
