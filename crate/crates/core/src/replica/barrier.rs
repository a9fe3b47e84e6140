use std::collections::{BTreeMap, HashMap};
use std::sync::{Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use super::ReplicaError;

struct Slot<S> {
    deposited: BTreeMap<u16, S>,
    returned: BTreeMap<u16, S>,
    done: bool,
}

impl<S> Default for Slot<S> {
    fn default() -> Self {
        Slot {
            deposited: BTreeMap::new(),
            returned: BTreeMap::new(),
            done: false,
        }
    }
}

/// Rendezvous for multi-shard commands.
///
/// Every involved worker arrives with its shard state. Non-lowest workers
/// hand their state to the slot and block; the lowest-id worker waits for
/// all of them, executes once against every involved shard, then gives the
/// states back and releases the others. No shard state is shared: it moves
/// through the slot.
pub struct MultiShardBarrier<S> {
    slots: Mutex<HashMap<u64, Slot<S>>>,
    cv: Condvar,
    timeout: Duration,
}

impl<S> MultiShardBarrier<S> {
    pub fn new(timeout: Duration) -> Self {
        MultiShardBarrier {
            slots: Mutex::new(HashMap::new()),
            cv: Condvar::new(),
            timeout,
        }
    }

    fn wait<'a, F>(
        &self,
        mut guard: MutexGuard<'a, HashMap<u64, Slot<S>>>,
        deadline: Instant,
        mut blocked: F,
    ) -> (MutexGuard<'a, HashMap<u64, Slot<S>>>, bool)
    where
        F: FnMut(&HashMap<u64, Slot<S>>) -> bool,
    {
        while blocked(&guard) {
            let now = Instant::now();
            if now >= deadline {
                return (guard, false);
            }
            guard = self.cv.wait_timeout(guard, deadline - now).unwrap().0;
        }
        (guard, true)
    }

    /// Joins the rendezvous `key` as worker `me`. `involved` lists every
    /// participating worker. Returns this worker's state together with the
    /// execution result on the lowest worker (`Some`) or `None` elsewhere.
    pub fn rendezvous<R>(
        &self,
        key: u64,
        me: u16,
        involved: &[u16],
        state: S,
        exec: impl FnOnce(&mut Vec<(u16, S)>) -> R,
    ) -> (S, Result<Option<R>, ReplicaError>) {
        let mut ids = involved.to_vec();
        ids.sort_unstable();
        ids.dedup();
        assert!(ids.contains(&me), "worker {me} not among {ids:?}");
        if ids.len() == 1 {
            let mut states = vec![(me, state)];
            let r = exec(&mut states);
            return (states.pop().unwrap().1, Ok(Some(r)));
        }
        let deadline = Instant::now() + self.timeout;
        let guard = self.slots.lock().unwrap();
        // A previous occurrence of the same key may still be draining.
        let (mut guard, ok) = self.wait(guard, deadline, |s| s.get(&key).is_some_and(|x| x.done));
        if !ok {
            return (state, Err(self.timeout_error(key, me, &ids, &guard)));
        }
        let lowest = ids[0];
        if me != lowest {
            guard.entry(key).or_default().deposited.insert(me, state);
            self.cv.notify_all();
            let (mut guard, ok) = self.wait(guard, deadline, |s| {
                s.get(&key).is_none_or(|x| !x.returned.contains_key(&me))
            });
            if !ok {
                let err = self.timeout_error(key, me, &ids, &guard);
                let slot = guard.get_mut(&key).expect("our state is deposited");
                let state = slot.deposited.remove(&me).expect("lowest never took it");
                if slot.deposited.is_empty() && !slot.done {
                    guard.remove(&key);
                }
                return (state, Err(err));
            }
            let slot = guard.get_mut(&key).unwrap();
            let state = slot.returned.remove(&me).unwrap();
            if slot.returned.is_empty() {
                guard.remove(&key);
                self.cv.notify_all();
            }
            return (state, Ok(None));
        }
        guard.entry(key).or_default();
        let others = ids.len() - 1;
        let (mut guard, ok) = self.wait(guard, deadline, |s| s[&key].deposited.len() < others);
        if !ok {
            let err = self.timeout_error(key, me, &ids, &guard);
            if guard[&key].deposited.is_empty() {
                guard.remove(&key);
            }
            return (state, Err(err));
        }
        let mut states = vec![(me, state)];
        states.extend(std::mem::take(&mut guard.get_mut(&key).unwrap().deposited));
        drop(guard);
        let r = exec(&mut states);
        let mut guard = self.slots.lock().unwrap();
        let slot = guard.get_mut(&key).unwrap();
        let mine = states.remove(0).1;
        slot.returned.extend(states);
        slot.done = true;
        self.cv.notify_all();
        (mine, Ok(Some(r)))
    }

    fn timeout_error(
        &self,
        key: u64,
        me: u16,
        ids: &[u16],
        slots: &HashMap<u64, Slot<S>>,
    ) -> ReplicaError {
        let arrived: Vec<u16> = slots
            .get(&key)
            .map(|s| s.deposited.keys().copied().collect())
            .unwrap_or_default();
        ReplicaError::BarrierTimeout {
            key,
            missing: ids
                .iter()
                .copied()
                .filter(|i| *i != me && !arrived.contains(i))
                .collect(),
        }
    }
}
