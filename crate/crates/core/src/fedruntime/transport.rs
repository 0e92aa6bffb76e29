use std::collections::VecDeque;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

/// In-process queue of serialized messages with byte accounting.
///
/// Anything that moves `Vec<u8>` frames could stand in for it.
#[derive(Debug, Default)]
pub struct Link {
    queue: Mutex<VecDeque<Vec<u8>>>,
    bytes: AtomicU64,
}

impl Link {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn send(&self, frame: Vec<u8>) {
        self.bytes.fetch_add(frame.len() as u64, Ordering::Relaxed);
        self.queue
            .lock()
            .expect("link mutex poisoned")
            .push_back(frame);
    }

    pub fn drain(&self) -> Vec<Vec<u8>> {
        self.queue
            .lock()
            .expect("link mutex poisoned")
            .drain(..)
            .collect()
    }

    pub fn bytes_sent(&self) -> u64 {
        self.bytes.load(Ordering::Relaxed)
    }
}
