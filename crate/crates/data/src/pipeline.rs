//! Host-side input pipeline: buffered shuffling, batching, and prefetch.

use std::sync::mpsc::{sync_channel, Receiver};
use std::thread::JoinHandle;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Buffered shuffle: keeps up to `buffer_size` pending items and yields a
/// uniformly chosen one, refilling from the source. `buffer_size == 1`
/// degenerates to the original order. Deterministic per seed.
pub struct ShuffleIter<I: Iterator> {
    inner: I,
    buffer: Vec<I::Item>,
    buffer_size: usize,
    rng: ChaCha8Rng,
}

pub fn shuffle<I: Iterator>(inner: I, buffer_size: usize, seed: u64) -> ShuffleIter<I> {
    assert!(buffer_size >= 1, "shuffle buffer must hold at least one item");
    ShuffleIter {
        inner,
        buffer: Vec::with_capacity(buffer_size),
        buffer_size,
        rng: ChaCha8Rng::seed_from_u64(seed),
    }
}

impl<I: Iterator> Iterator for ShuffleIter<I> {
    type Item = I::Item;

    fn next(&mut self) -> Option<Self::Item> {
        while self.buffer.len() < self.buffer_size {
            match self.inner.next() {
                Some(item) => self.buffer.push(item),
                None => break,
            }
        }
        if self.buffer.is_empty() {
            return None;
        }
        let j = self.rng.random_range(0..self.buffer.len());
        let item = self.buffer.swap_remove(j);
        Some(item)
    }
}

/// Groups items into vectors of `batch_size`; with `drop_last` a trailing
/// partial batch is discarded.
pub struct BatchIter<I: Iterator> {
    inner: I,
    batch_size: usize,
    drop_last: bool,
    done: bool,
}

pub fn batch<I: Iterator>(inner: I, batch_size: usize, drop_last: bool) -> BatchIter<I> {
    assert!(batch_size >= 1);
    BatchIter {
        inner,
        batch_size,
        drop_last,
        done: false,
    }
}

impl<I: Iterator> Iterator for BatchIter<I> {
    type Item = Vec<I::Item>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let mut out = Vec::with_capacity(self.batch_size);
        while out.len() < self.batch_size {
            match self.inner.next() {
                Some(item) => out.push(item),
                None => {
                    self.done = true;
                    break;
                }
            }
        }
        if out.is_empty() || (self.drop_last && out.len() < self.batch_size) {
            None
        } else {
            Some(out)
        }
    }
}

/// Shuffle-then-batch, the host-side preparation step.
pub fn shuffle_batch<I: Iterator>(
    inner: I,
    buffer_size: usize,
    batch_size: usize,
    seed: u64,
    drop_last: bool,
) -> BatchIter<ShuffleIter<I>> {
    batch(shuffle(inner, buffer_size, seed), batch_size, drop_last)
}

enum Message<T> {
    Item(T),
    End,
    Panicked(String),
}

/// Runs the source iterator on a producer thread feeding a bounded queue of
/// `depth` items; order and multiplicity are preserved exactly. A producer
/// panic resurfaces on the consumer's next call.
pub struct PrefetchIter<T: Send + 'static> {
    rx: Option<Receiver<Message<T>>>,
    handle: Option<JoinHandle<()>>,
}

pub fn prefetch<T, I>(iter: I, depth: usize) -> PrefetchIter<T>
where
    T: Send + 'static,
    I: Iterator<Item = T> + Send + 'static,
{
    assert!(depth >= 1, "prefetch depth must be at least 1");
    let (tx, rx) = sync_channel(depth);
    let handle = std::thread::spawn(move || {
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
            for item in iter {
                if tx.send(Message::Item(item)).is_err() {
                    // Consumer went away; stop producing.
                    return false;
                }
            }
            true
        }));
        match outcome {
            Ok(true) => {
                let _ = tx.send(Message::End);
            }
            Ok(false) => {}
            Err(payload) => {
                let msg = payload
                    .downcast_ref::<&str>()
                    .map(|s| s.to_string())
                    .or_else(|| payload.downcast_ref::<String>().cloned())
                    .unwrap_or_else(|| "opaque panic payload".into());
                let _ = tx.send(Message::Panicked(msg));
            }
        }
    });
    PrefetchIter {
        rx: Some(rx),
        handle: Some(handle),
    }
}

impl<T: Send + 'static> Iterator for PrefetchIter<T> {
    type Item = T;

    fn next(&mut self) -> Option<Self::Item> {
        let rx = self.rx.as_ref()?;
        match rx.recv() {
            Ok(Message::Item(t)) => Some(t),
            Ok(Message::End) => {
                self.shutdown();
                None
            }
            Ok(Message::Panicked(msg)) => {
                self.shutdown();
                panic!("prefetch producer panicked: {msg}");
            }
            Err(_) => {
                self.shutdown();
                panic!("prefetch producer vanished without finishing");
            }
        }
    }
}

impl<T: Send + 'static> PrefetchIter<T> {
    fn shutdown(&mut self) {
        self.rx = None;
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

impl<T: Send + 'static> Drop for PrefetchIter<T> {
    fn drop(&mut self) {
        self.rx = None; // unblocks a producer stuck in send
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}
