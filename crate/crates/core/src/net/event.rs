use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::digest::NodeId;
use crate::time::SimTime;

#[derive(Debug)]
pub struct Event<E> {
    pub fire_time: SimTime,
    pub seq: u64,
    pub target: NodeId,
    pub payload: E,
}

impl<E> PartialEq for Event<E> {
    fn eq(&self, o: &Self) -> bool {
        (self.fire_time, self.seq) == (o.fire_time, o.seq)
    }
}

impl<E> Eq for Event<E> {}

impl<E> PartialOrd for Event<E> {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

impl<E> Ord for Event<E> {
    /// Reversed so the heap pops the earliest event first.
    fn cmp(&self, o: &Self) -> Ordering {
        (o.fire_time, o.seq).cmp(&(self.fire_time, self.seq))
    }
}

/// Pending events, fired in `(fire_time, seq)` order. `seq` is assigned at
/// scheduling time, so ties go to whatever was scheduled first.
pub struct EventQueue<E> {
    heap: BinaryHeap<Event<E>>,
    next_seq: u64,
    now: SimTime,
}

impl<E> Default for EventQueue<E> {
    fn default() -> Self {
        EventQueue {
            heap: BinaryHeap::new(),
            next_seq: 0,
            now: SimTime::ZERO,
        }
    }
}

impl<E> EventQueue<E> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Schedules `payload` for `target`. Times in the past are clamped to now.
    pub fn schedule(&mut self, at: SimTime, target: NodeId, payload: E) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Event {
            fire_time: at.max(self.now),
            seq,
            target,
            payload,
        });
    }

    pub fn pop(&mut self) -> Option<Event<E>> {
        let e = self.heap.pop()?;
        debug_assert!(e.fire_time >= self.now);
        self.now = e.fire_time;
        Some(e)
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.heap.peek().map(|e| e.fire_time)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fires_in_time_then_seq_order() {
        let mut q = EventQueue::new();
        q.schedule(SimTime(30), NodeId(0), "c");
        q.schedule(SimTime(10), NodeId(0), "a");
        q.schedule(SimTime(30), NodeId(1), "d");
        q.schedule(SimTime(10), NodeId(1), "b");
        let order: Vec<_> = std::iter::from_fn(|| q.pop()).map(|e| e.payload).collect();
        assert_eq!(order, ["a", "b", "c", "d"]);
    }

    #[test]
    fn past_times_are_clamped() {
        let mut q = EventQueue::new();
        q.schedule(SimTime(50), NodeId(0), 1);
        q.pop();
        q.schedule(SimTime(10), NodeId(0), 2);
        let e = q.pop().unwrap();
        assert_eq!(e.fire_time, SimTime(50));
        assert_eq!(q.now(), SimTime(50));
    }

    proptest::proptest! {
        #[test]
        fn pops_are_sorted_by_time_then_schedule_order(times in proptest::collection::vec(0u64..50, 1..200)) {
            let mut q = EventQueue::new();
            for (i, &t) in times.iter().enumerate() {
                q.schedule(SimTime(t), NodeId(0), i);
            }
            let got: Vec<(SimTime, usize)> = std::iter::from_fn(|| q.pop()).map(|e| (e.fire_time, e.payload)).collect();
            let mut want: Vec<(SimTime, usize)> = times.iter().enumerate().map(|(i, &t)| (SimTime(t), i)).collect();
            want.sort();
            proptest::prop_assert_eq!(got, want);
        }
    }
}
