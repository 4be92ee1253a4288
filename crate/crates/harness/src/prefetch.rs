//! Bounded producer-consumer queue.

use std::sync::mpsc::{sync_channel, Receiver};
use std::thread::JoinHandle;

/// Runs `items` on a worker thread, holding at most `capacity` finished
/// items; the producer blocks while the queue is full. Items arrive in
/// production order. Dropping the prefetcher stops the producer.
pub struct Prefetcher<T> {
    rx: Option<Receiver<T>>,
    worker: Option<JoinHandle<()>>,
}

impl<T: Send + 'static> Prefetcher<T> {
    pub fn spawn<I>(capacity: usize, items: I) -> Self
    where
        I: Iterator<Item = T> + Send + 'static,
    {
        let (tx, rx) = sync_channel(capacity.max(1));
        let worker = std::thread::spawn(move || {
            for item in items {
                if tx.send(item).is_err() {
                    break;
                }
            }
        });
        Prefetcher { rx: Some(rx), worker: Some(worker) }
    }
}

impl<T> Iterator for Prefetcher<T> {
    type Item = T;

    fn next(&mut self) -> Option<T> {
        self.rx.as_ref()?.recv().ok()
    }
}

impl<T> Drop for Prefetcher<T> {
    fn drop(&mut self) {
        self.rx.take();
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}
