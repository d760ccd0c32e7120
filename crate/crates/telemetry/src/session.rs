//! Operator-side rules independent of the transport.

use std::collections::VecDeque;

/// Teleop twist lifetime without renewal, seconds.
pub const DEADMAN_SECS: f64 = 0.5;

/// Pending commands beyond this are dropped oldest first.
pub const QUEUE_CAPACITY: usize = 16;

pub const SETTABLE_PARAMS: [&str; 4] = ["k_sigma", "target_fpr", "sigmoid_k", "sigmoid_vthr"];

/// Checks key and range of a `set_param` request.
pub fn validate_param(key: &str, value: f64) -> Result<(), String> {
    if !SETTABLE_PARAMS.contains(&key) {
        return Err(format!("parameter `{key}` is not settable; allowed: {}", SETTABLE_PARAMS.join(", ")));
    }
    if !value.is_finite() {
        return Err(format!("{key} must be finite"));
    }
    let ok = match key {
        "target_fpr" => value > 0.0 && value < 1.0,
        "sigmoid_vthr" => value >= 0.0,
        _ => value > 0.0,
    };
    if ok {
        Ok(())
    } else {
        Err(format!("{key} = {value} is out of range"))
    }
}

/// Bounded FIFO that drops its oldest entry when full.
#[derive(Debug, Clone)]
pub struct CommandQueue<T> {
    items: VecDeque<T>,
    capacity: usize,
    dropped: u64,
}

impl<T> CommandQueue<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "queue capacity must be positive");
        Self { items: VecDeque::with_capacity(capacity), capacity, dropped: 0 }
    }

    /// Returns the entry evicted to make room, if any.
    pub fn push(&mut self, item: T) -> Option<T> {
        let evicted = if self.items.len() == self.capacity {
            self.dropped += 1;
            self.items.pop_front()
        } else {
            None
        };
        self.items.push_back(item);
        evicted
    }

    pub fn drain(&mut self) -> Vec<T> {
        self.items.drain(..).collect()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn dropped(&self) -> u64 {
        self.dropped
    }
}

impl<T> Default for CommandQueue<T> {
    fn default() -> Self {
        Self::new(QUEUE_CAPACITY)
    }
}

/// Holds the latest teleop twist; it expires `timeout` seconds after it was
/// set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Deadman {
    timeout: f64,
    latest: Option<([f64; 3], f64)>,
}

impl Deadman {
    pub fn new(timeout: f64) -> Self {
        Self { timeout, latest: None }
    }

    pub fn set(&mut self, twist: [f64; 3], now: f64) {
        self.latest = Some((twist, now));
    }

    pub fn clear(&mut self) {
        self.latest = None;
    }

    /// True while a twist has been received and not yet expired.
    pub fn is_live(&self, now: f64) -> bool {
        self.latest.is_some_and(|(_, t)| now - t <= self.timeout)
    }

    /// Current twist, or zero once expired or never set.
    pub fn twist(&self, now: f64) -> [f64; 3] {
        match self.latest {
            Some((tw, t)) if now - t <= self.timeout => tw,
            _ => [0.0; 3],
        }
    }
}

impl Default for Deadman {
    fn default() -> Self {
        Self::new(DEADMAN_SECS)
    }
}
