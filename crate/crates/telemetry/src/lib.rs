//! Live telemetry for the simulator: the versioned JSON wire protocol, the
//! operator command session (whitelist, deadman, bounded queue), and a
//! websocket server that fans snapshots out to clients.

pub mod protocol;
pub mod server;
pub mod session;

pub use protocol::{
    decode, encode, Ack, Body, Envelope, Layer, MapLayers, MetricPoint, Nack, OperatorCommand, Params, ProtocolError,
    SegmentOverlay, StateSnapshot, PROTOCOL_VERSION,
};
pub use protocol::decode_seq;
pub use server::{ClientId, Incoming, TelemetryServer};
pub use session::{validate_param, CommandQueue, Deadman, DEADMAN_SECS, QUEUE_CAPACITY, SETTABLE_PARAMS};
