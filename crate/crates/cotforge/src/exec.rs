//! Bounded fan-out over a work list with a single collector, plus
//! cooperative cancellation.
//!
//! Workers pull items from a shared queue; results flow back to the
//! caller's thread, which is the only place checkpoint writes happen.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{mpsc, Arc, Mutex};

/// Cooperative stop signal checked between units of work.
///
/// A token can be tripped directly ([`CancelToken::cancel`]) or armed to
/// trip itself after a number of recorded events, which tests use to
/// interrupt a run at a chosen point.
#[derive(Debug, Clone, Default)]
pub struct CancelToken {
    cancelled: Arc<AtomicBool>,
    trip_after: Arc<AtomicUsize>,
    armed: bool,
}

impl CancelToken {
    pub fn new() -> Self {
        Self::default()
    }

    /// Token that cancels itself after `n` recorded events; `n = 0`
    /// starts cancelled.
    pub fn cancel_after_records(n: usize) -> Self {
        Self {
            cancelled: Arc::new(AtomicBool::new(n == 0)),
            trip_after: Arc::new(AtomicUsize::new(n)),
            armed: true,
        }
    }

    pub fn cancel(&self) {
        self.cancelled.store(true, Ordering::SeqCst);
    }

    pub fn is_cancelled(&self) -> bool {
        self.cancelled.load(Ordering::SeqCst)
    }

    /// Count one completed event toward an armed trip threshold.
    pub fn record_event(&self) {
        if !self.armed {
            return;
        }
        let prev = self.trip_after.fetch_update(Ordering::SeqCst, Ordering::SeqCst, |v| {
            Some(v.saturating_sub(1))
        });
        if prev == Ok(1) {
            self.cancel();
        }
    }
}

/// Run `task` over `items` on up to `workers` threads, feeding each
/// result to `collect` on the calling thread.
///
/// When the token cancels, no new items are started; in-flight items
/// finish and their results are still collected. An error from `collect`
/// cancels the pool and is returned after the drain.
pub(crate) fn fan_out<T, R, E>(
    items: Vec<T>,
    workers: usize,
    cancel: &CancelToken,
    task: impl Fn(T) -> R + Sync,
    mut collect: impl FnMut(R) -> Result<(), E>,
) -> Result<(), E>
where
    T: Send,
    R: Send,
{
    let total = items.len();
    if total == 0 {
        return Ok(());
    }
    let workers = workers.clamp(1, total);
    let queue = Mutex::new(items.into_iter().collect::<VecDeque<T>>());
    let (tx, rx) = mpsc::channel::<R>();
    let mut first_err: Option<E> = None;

    std::thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let queue = &queue;
            let task = &task;
            let cancel = cancel.clone();
            scope.spawn(move || loop {
                if cancel.is_cancelled() {
                    break;
                }
                let item = queue.lock().unwrap().pop_front();
                let Some(item) = item else { break };
                if tx.send(task(item)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for result in rx {
            if first_err.is_none() {
                if let Err(e) = collect(result) {
                    first_err = Some(e);
                    cancel.cancel();
                }
            }
        }
    });

    match first_err {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn processes_every_item_once() {
        let items: Vec<u32> = (0..100).collect();
        let mut seen = Vec::new();
        fan_out::<_, _, ()>(items, 8, &CancelToken::new(), |x| x * 2, |r| {
            seen.push(r);
            Ok(())
        })
        .unwrap();
        seen.sort_unstable();
        assert_eq!(seen, (0..100).map(|x| x * 2).collect::<Vec<_>>());
    }

    #[test]
    fn cancellation_stops_new_work() {
        let token = CancelToken::cancel_after_records(5);
        let mut collected = 0usize;
        fan_out::<_, _, ()>((0..1000).collect(), 2, &token, |x: u32| x, |_| {
            collected += 1;
            token.record_event();
            Ok(())
        })
        .unwrap();
        assert!(token.is_cancelled());
        // In-flight items may land after the trip, but the bulk is cut.
        assert!(collected < 1000, "collected {collected}");
        assert!(collected >= 5);
    }

    #[test]
    fn collector_error_aborts_pool() {
        let token = CancelToken::new();
        let res = fan_out((0..1000).collect(), 4, &token, |x: u32| x, |_| Err("boom"));
        assert_eq!(res, Err("boom"));
    }

    #[test]
    fn empty_input_is_a_no_op() {
        fan_out::<u32, u32, ()>(vec![], 4, &CancelToken::new(), |x| x, |_| Ok(())).unwrap();
    }
}
