//! Deterministic fan-out over task indices.
//!
//! Results depend only on the task index, never on which worker ran it.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

static WORKERS: AtomicUsize = AtomicUsize::new(0);

/// Sets the worker count used by [`map_indexed`]; 0 means one per core.
pub fn set_workers(n: usize) {
    WORKERS.store(n, Ordering::Relaxed);
}

pub fn workers() -> usize {
    match WORKERS.load(Ordering::Relaxed) {
        0 => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
        n => n,
    }
}

/// Evaluates `f(0), ..., f(count - 1)` on the configured workers, in order.
pub fn map_indexed<T, F>(count: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let w = workers().min(count.max(1));
    if w <= 1 {
        return (0..count).map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<T>>> = Mutex::new((0..count).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..w {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= count {
                    break;
                }
                let out = f(i);
                slots.lock().expect("no worker panicked")[i] = Some(out);
            });
        }
    });
    slots.into_inner().expect("no worker panicked").into_iter().map(|x| x.expect("every index ran")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        set_workers(3);
        let v = map_indexed(100, |i| i * i);
        set_workers(0);
        assert_eq!(v, (0..100).map(|i| i * i).collect::<Vec<_>>());
        assert!(map_indexed(0, |i| i).is_empty());
    }
}
