//! Websocket fan-out. Each client has its own thread; the simulation side only
//! touches the latest encoded snapshot, the bounded command queue and the
//! per-client reply channels.
//!
//! A client that is still writing an old snapshot when newer ones arrive
//! skips the intermediate ones: only the latest is ever sent.

use std::collections::HashMap;
use std::io::{self, ErrorKind};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use tungstenite::{Message, WebSocket};

use crate::protocol::{decode, decode_seq, encode, Ack, Body, Envelope, Nack, OperatorCommand, ProtocolError, StateSnapshot};
use crate::session::{CommandQueue, QUEUE_CAPACITY};

pub type ClientId = u64;

const POLL: Duration = Duration::from_millis(10);
const HANDSHAKE_TIMEOUT: Duration = Duration::from_secs(2);
const WRITE_TIMEOUT: Duration = Duration::from_secs(2);

/// A command from the operator connection, in arrival order.
#[derive(Debug, Clone, PartialEq)]
pub struct Incoming {
    pub client: ClientId,
    pub seq: u64,
    pub command: OperatorCommand,
}

#[derive(Default)]
struct Shared {
    snapshot: Mutex<Option<(u64, Arc<str>)>>,
    commands: Mutex<CommandQueue<Incoming>>,
    outboxes: Mutex<HashMap<ClientId, Sender<String>>>,
    operator: Mutex<Option<ClientId>>,
    shutdown: AtomicBool,
    next_client: AtomicU64,
    seq: AtomicU64,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

impl Shared {
    fn next_seq(&self) -> u64 {
        self.seq.fetch_add(1, Ordering::Relaxed)
    }

    fn reply(&self, client: ClientId, body: Body) {
        let env = Envelope { seq: self.next_seq(), body };
        if let Ok(text) = encode(&env) {
            if let Some(tx) = lock(&self.outboxes).get(&client) {
                let _ = tx.send(text);
            }
        }
    }
}

pub struct TelemetryServer {
    shared: Arc<Shared>,
    addr: SocketAddr,
    acceptor: Option<JoinHandle<()>>,
}

impl TelemetryServer {
    /// Binds and starts accepting clients in the background.
    pub fn bind(addr: impl ToSocketAddrs) -> io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let shared = Arc::new(Shared { commands: Mutex::new(CommandQueue::new(QUEUE_CAPACITY)), ..Default::default() });
        let s = Arc::clone(&shared);
        let acceptor = thread::Builder::new().name("telemetry-accept".into()).spawn(move || accept_loop(listener, s))?;
        Ok(Self { shared, addr, acceptor: Some(acceptor) })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Replaces the snapshot offered to clients. On error nothing is
    /// published and the previous snapshot stays current.
    pub fn publish(&self, snapshot: &StateSnapshot) -> Result<u64, ProtocolError> {
        let seq = self.shared.next_seq();
        let text = encode(&Envelope { seq, body: Body::Snapshot(Box::new(snapshot.clone())) })?;
        *lock(&self.shared.snapshot) = Some((seq, text.into()));
        Ok(seq)
    }

    pub fn drain_commands(&self) -> Vec<Incoming> {
        lock(&self.shared.commands).drain()
    }

    pub fn ack(&self, client: ClientId, command_seq: u64, tick: u64) {
        self.shared.reply(client, Body::Ack(Ack { command_seq, tick }));
    }

    pub fn nack(&self, client: ClientId, command_seq: u64, reason: impl Into<String>) {
        self.shared.reply(client, Body::Nack(Nack { command_seq, reason: reason.into() }));
    }

    pub fn client_count(&self) -> usize {
        lock(&self.shared.outboxes).len()
    }

    pub fn operator(&self) -> Option<ClientId> {
        *lock(&self.shared.operator)
    }

    pub fn dropped_commands(&self) -> u64 {
        lock(&self.shared.commands).dropped()
    }
}

impl Drop for TelemetryServer {
    fn drop(&mut self) {
        self.shared.shutdown.store(true, Ordering::SeqCst);
        if let Some(h) = self.acceptor.take() {
            let _ = h.join();
        }
    }
}

fn accept_loop(listener: TcpListener, shared: Arc<Shared>) {
    let mut workers: Vec<JoinHandle<()>> = Vec::new();
    while !shared.shutdown.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                let s = Arc::clone(&shared);
                if let Ok(h) = thread::Builder::new().name("telemetry-client".into()).spawn(move || serve_client(stream, s)) {
                    workers.push(h);
                }
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(POLL),
            Err(_) => thread::sleep(POLL),
        }
        workers.retain(|h| !h.is_finished());
    }
    for h in workers {
        let _ = h.join();
    }
}

fn serve_client(stream: TcpStream, shared: Arc<Shared>) {
    if stream.set_nonblocking(false).is_err() || stream.set_read_timeout(Some(HANDSHAKE_TIMEOUT)).is_err() {
        return;
    }
    let _ = stream.set_write_timeout(Some(WRITE_TIMEOUT));
    let _ = stream.set_nodelay(true);
    let Ok(mut ws) = tungstenite::accept(stream) else {
        return;
    };
    if ws.get_ref().set_read_timeout(Some(POLL)).is_err() {
        return;
    }

    let id = shared.next_client.fetch_add(1, Ordering::Relaxed) + 1;
    let (tx, rx) = mpsc::channel();
    lock(&shared.outboxes).insert(id, tx);
    let is_operator = {
        let mut op = lock(&shared.operator);
        if op.is_none() {
            *op = Some(id);
        }
        *op == Some(id)
    };

    let _ = client_loop(&mut ws, &shared, id, is_operator, &rx);

    lock(&shared.outboxes).remove(&id);
    let mut op = lock(&shared.operator);
    if *op == Some(id) {
        *op = None;
    }
    drop(op);
    let _ = ws.close(None);
    let _ = ws.flush();
}

fn client_loop(
    ws: &mut WebSocket<TcpStream>,
    shared: &Shared,
    id: ClientId,
    is_operator: bool,
    outbox: &Receiver<String>,
) -> Result<(), tungstenite::Error> {
    let mut sent_version: Option<u64> = None;
    while !shared.shutdown.load(Ordering::SeqCst) {
        match ws.read() {
            Ok(Message::Text(text)) => handle_text(shared, id, is_operator, text.as_str()),
            Ok(Message::Close(_)) => return Ok(()),
            Ok(_) => {}
            Err(tungstenite::Error::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
            Err(e) => return Err(e),
        }
        while let Ok(text) = outbox.try_recv() {
            ws.send(Message::text(text))?;
        }
        let latest = lock(&shared.snapshot).clone();
        if let Some((version, text)) = latest {
            if sent_version != Some(version) {
                ws.send(Message::text(text.as_ref()))?;
                sent_version = Some(version);
            }
        }
    }
    Ok(())
}

fn handle_text(shared: &Shared, id: ClientId, is_operator: bool, text: &str) {
    let seq = decode_seq(text).unwrap_or(0);
    let nack = |reason: String| shared.reply(id, Body::Nack(Nack { command_seq: seq, reason }));
    match decode(text) {
        Ok(Envelope { seq, body: Body::Command(command) }) => {
            if is_operator {
                lock(&shared.commands).push(Incoming { client: id, seq, command });
            } else {
                nack("read-only connection: another operator is connected".into());
            }
        }
        Ok(env) => nack(format!("clients may only send commands, got `{}`", env.body.type_name())),
        Err(e) => nack(e.to_string()),
    }
}
