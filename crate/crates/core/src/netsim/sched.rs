use crate::time::SimTime;
use std::cmp::Reverse;
use std::collections::BinaryHeap;

/// Deterministic event queue: events fire in timestamp order, ties in
/// insertion order.
pub struct Scheduler<E> {
    now: SimTime,
    next_id: u64,
    heap: BinaryHeap<Reverse<(SimTime, u64)>>,
    payloads: std::collections::HashMap<u64, E>,
}

impl<E> Default for Scheduler<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> Scheduler<E> {
    pub fn new() -> Self {
        Scheduler {
            now: SimTime::ZERO,
            next_id: 0,
            heap: BinaryHeap::new(),
            payloads: std::collections::HashMap::new(),
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    /// Schedules `event` at `at`; times in the past are clamped to now.
    pub fn schedule(&mut self, at: SimTime, event: E) -> u64 {
        let at = at.max(self.now);
        let id = self.next_id;
        self.next_id += 1;
        self.heap.push(Reverse((at, id)));
        self.payloads.insert(id, event);
        id
    }

    pub fn cancel(&mut self, id: u64) -> Option<E> {
        self.payloads.remove(&id)
    }

    pub fn peek_time(&mut self) -> Option<SimTime> {
        while let Some(Reverse((t, id))) = self.heap.peek().copied() {
            if self.payloads.contains_key(&id) {
                return Some(t);
            }
            self.heap.pop();
        }
        None
    }

    /// Pops the next event if it is due at or before `until`, moving the
    /// clock to its timestamp.
    pub fn pop_until(&mut self, until: SimTime) -> Option<(SimTime, E)> {
        loop {
            let Reverse((t, id)) = *self.heap.peek()?;
            if t > until {
                return None;
            }
            self.heap.pop();
            if let Some(e) = self.payloads.remove(&id) {
                self.now = t;
                return Some((t, e));
            }
        }
    }

    /// Fires every event due by `until` and leaves the clock at `until`.
    pub fn advance(&mut self, until: SimTime) -> Vec<(SimTime, E)> {
        let mut out = Vec::new();
        while let Some(ev) = self.pop_until(until) {
            out.push(ev);
        }
        self.now = self.now.max(until);
        out
    }

    pub fn set_now(&mut self, t: SimTime) {
        self.now = self.now.max(t);
    }

    pub fn len(&self) -> usize {
        self.payloads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.payloads.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_advance_moves_clock() {
        let mut s: Scheduler<u32> = Scheduler::new();
        assert!(s.advance(SimTime(500)).is_empty());
        assert_eq!(s.now(), SimTime(500));
    }

    #[test]
    fn ties_fire_in_insertion_order() {
        let mut s = Scheduler::new();
        s.schedule(SimTime(10), "b");
        s.schedule(SimTime(5), "a");
        s.schedule(SimTime(10), "c");
        s.schedule(SimTime(11), "late");
        let fired: Vec<_> = s.advance(SimTime(10)).into_iter().map(|(_, e)| e).collect();
        assert_eq!(fired, vec!["a", "b", "c"]);
        assert_eq!(s.len(), 1);
    }

    #[test]
    fn cancelled_events_never_fire() {
        let mut s = Scheduler::new();
        let id = s.schedule(SimTime(1), 1);
        s.schedule(SimTime(2), 2);
        assert_eq!(s.cancel(id), Some(1));
        assert_eq!(s.advance(SimTime(3)), vec![(SimTime(2), 2)]);
    }
}
