use rtrb::{Consumer, Producer, RingBuffer};

use crate::wire::{PartitionId, PaxosMessage};

pub const DEFAULT_BATCH_SIZE: usize = 32;

/// Worker that owns partition `pid` among `workers`.
pub fn worker_for(pid: PartitionId, workers: usize) -> usize {
    pid as usize % workers
}

/// The I/O side of the replica: one single-producer/single-consumer ring per
/// worker, messages assigned by `pid mod workers`.
pub struct WorkerRouter {
    queues: Vec<Producer<PaxosMessage>>,
}

/// Consumer end of one worker's queue.
pub struct WorkerQueue {
    index: usize,
    queue: Consumer<PaxosMessage>,
    batch_size: usize,
}

impl WorkerRouter {
    pub fn new(
        workers: usize,
        capacity: usize,
        batch_size: usize,
    ) -> (WorkerRouter, Vec<WorkerQueue>) {
        assert!(workers > 0, "at least one worker");
        let (producers, consumers): (Vec<_>, Vec<_>) =
            (0..workers).map(|_| RingBuffer::new(capacity)).unzip();
        let queues = consumers
            .into_iter()
            .enumerate()
            .map(|(index, queue)| WorkerQueue {
                index,
                queue,
                batch_size: batch_size.max(1),
            })
            .collect();
        (WorkerRouter { queues: producers }, queues)
    }

    pub fn workers(&self) -> usize {
        self.queues.len()
    }

    /// Enqueues `m` on its worker's ring; a full ring hands the message back.
    pub fn route(&mut self, m: PaxosMessage) -> Result<usize, QueueFull> {
        let w = worker_for(m.pid, self.queues.len());
        match self.queues[w].push(m) {
            Ok(()) => Ok(w),
            Err(rtrb::PushError::Full(m)) => Err(QueueFull { worker: w, msg: m }),
        }
    }
}

#[derive(Debug)]
pub struct QueueFull {
    pub worker: usize,
    pub msg: PaxosMessage,
}

impl WorkerQueue {
    pub fn index(&self) -> usize {
        self.index
    }

    /// Moves up to one batch into `out`; returns how many were read.
    pub fn pop_batch(&mut self, out: &mut Vec<PaxosMessage>) -> usize {
        let n = self.queue.slots().min(self.batch_size);
        if n == 0 {
            return 0;
        }
        let chunk = self.queue.read_chunk(n).expect("slots checked");
        out.extend(chunk);
        n
    }

    /// True once the router is gone and the ring is drained.
    pub fn is_finished(&self) -> bool {
        self.queue.is_abandoned() && self.queue.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use std::collections::BTreeMap;

    fn m(pid: PartitionId) -> PaxosMessage {
        PaxosMessage::request(pid, &b"x"[..])
    }

    #[test]
    fn modulo_assignment() {
        let (mut r, _q) = WorkerRouter::new(4, 8, 32);
        assert_eq!(r.route(m(6)).unwrap(), 2);
        let (mut one, _q) = WorkerRouter::new(1, 8, 32);
        for pid in [0, 5, 999] {
            assert_eq!(one.route(m(pid)).unwrap(), 0);
        }
    }

    #[test]
    fn full_queue_returns_message() {
        let (mut r, _q) = WorkerRouter::new(1, 2, 32);
        r.route(m(0)).unwrap();
        r.route(m(0)).unwrap();
        let err = r.route(m(7)).unwrap_err();
        assert_eq!((err.worker, err.msg.pid), (0, 7));
    }

    #[test]
    fn each_pid_lands_on_one_worker() {
        let workers = 5;
        let (mut r, mut qs) = WorkerRouter::new(workers, 1 << 17, 32);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100_000 {
            r.route(m(rng.random_range(0..64))).unwrap();
        }
        let mut owner: BTreeMap<PartitionId, usize> = BTreeMap::new();
        let mut buf = Vec::new();
        for q in &mut qs {
            while q.pop_batch(&mut buf) > 0 {
                assert!(buf.len() <= 32);
                for msg in buf.drain(..) {
                    let prev = owner.insert(msg.pid, q.index());
                    assert!(prev.is_none_or(|w| w == q.index()));
                }
            }
        }
        assert_eq!(owner.len(), 64);
    }

    #[test]
    fn batches_are_bounded() {
        let (mut r, mut qs) = WorkerRouter::new(1, 100, 8);
        for _ in 0..20 {
            r.route(m(0)).unwrap();
        }
        let mut buf = Vec::new();
        assert_eq!(qs[0].pop_batch(&mut buf), 8);
        drop(r);
        assert!(!qs[0].is_finished());
        while qs[0].pop_batch(&mut buf) > 0 {}
        assert!(qs[0].is_finished());
        assert_eq!(buf.len(), 20);
    }
}
