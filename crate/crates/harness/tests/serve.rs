use std::net::TcpStream;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant};

use tungstenite::stream::MaybeTlsStream;
use tungstenite::{connect, Message, WebSocket};
use wvn_harness::serve::serve;
use wvn_harness::ExperimentConfig;
use wvn_telemetry::{decode, encode, Body, Envelope, OperatorCommand, StateSnapshot, TelemetryServer};

type Client = WebSocket<MaybeTlsStream<TcpStream>>;

fn next(ws: &mut Client) -> Envelope {
    loop {
        if let Message::Text(t) = ws.read().unwrap() {
            return decode(t.as_str()).unwrap();
        }
    }
}

fn next_snapshot(ws: &mut Client) -> StateSnapshot {
    loop {
        if let Body::Snapshot(s) = next(ws).body {
            return *s;
        }
    }
}

fn send(ws: &mut Client, seq: u64, command: OperatorCommand) {
    ws.send(Message::text(encode(&Envelope { seq, body: Body::Command(command) }).unwrap())).unwrap();
}

#[test]
fn teleop_over_websocket_with_deadman() {
    let text = "[run]\nworld = \"builtin:park\"\n\n[segmentation]\nn_segments = 16\n\n[serve]\ntick_hz = 20\nsnapshot_hz = 20\n";
    let cfg = ExperimentConfig::parse(text, ".").unwrap();
    let server = TelemetryServer::bind("127.0.0.1:0").unwrap();
    let stop = AtomicBool::new(false);
    std::thread::scope(|scope| {
        let runner = scope.spawn(|| serve(&cfg, &server, &stop));
        let (mut ws, _) = connect(format!("ws://{}", server.local_addr())).unwrap();
        if let MaybeTlsStream::Plain(s) = ws.get_ref() {
            s.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
        }

        let first = next_snapshot(&mut ws);
        assert!(first.layers.validate().is_ok());
        assert!(first.layers.width > 0 && first.layers.height > 0);

        // Hold the key for a second.
        let mut moving = false;
        let mut acked = 0;
        for seq in 1..=20 {
            send(&mut ws, seq, OperatorCommand::Twist { vx: 0.8, vy: 0.0, yaw_rate: 0.0 });
            match next(&mut ws).body {
                Body::Snapshot(s) => moving |= s.velocity[0] > 0.3 && s.drive_mode == "teleop",
                Body::Ack(_) => acked += 1,
                other => panic!("unexpected {other:?}"),
            }
        }
        assert!(moving, "held twist never moved the robot");
        assert!(acked > 0);

        // Release: the robot must stop within one second.
        let released = Instant::now();
        loop {
            let s = next_snapshot(&mut ws);
            if s.velocity == [0.0, 0.0] {
                break;
            }
            assert!(released.elapsed() < Duration::from_secs(1), "still moving after release");
        }

        send(&mut ws, 99, OperatorCommand::SetParam { key: "lr".into(), value: 0.1 });
        loop {
            match next(&mut ws).body {
                Body::Nack(n) => {
                    assert_eq!(n.command_seq, 99);
                    break;
                }
                Body::Ack(a) => assert_ne!(a.command_seq, 99),
                _ => {}
            }
        }

        stop.store(true, Ordering::SeqCst);
        let ticks = runner.join().unwrap().unwrap();
        assert!(ticks > 0);
    });
}
