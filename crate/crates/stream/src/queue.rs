use std::collections::VecDeque;

/// FIFO with a fixed capacity that evicts its oldest entry when full.
#[derive(Debug)]
pub struct DropOldest<T> {
    capacity: usize,
    items: VecDeque<T>,
    dropped: u64,
}

impl<T> DropOldest<T> {
    pub fn new(capacity: usize) -> Self {
        let capacity = capacity.max(1);
        DropOldest {
            capacity,
            items: VecDeque::with_capacity(capacity),
            dropped: 0,
        }
    }

    /// Appends `item`, returning the evicted entry if the queue was full.
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

    pub fn pop(&mut self) -> Option<T> {
        self.items.pop_front()
    }

    /// The entry that would be popped next.
    pub fn front_mut(&mut self) -> Option<&mut T> {
        self.items.front_mut()
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

    /// Empties the queue and resets the drop counter.
    pub fn reset(&mut self) {
        self.items.clear();
        self.dropped = 0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evicts_oldest_when_full() {
        let mut q = DropOldest::new(8);
        for i in 0..8 {
            assert_eq!(q.push(i), None);
        }
        assert_eq!(q.push(8), Some(0));
        assert_eq!(q.push(9), Some(1));
        assert_eq!(q.dropped(), 2);
        assert_eq!(q.len(), 8);
        let drained: Vec<_> = std::iter::from_fn(|| q.pop()).collect();
        assert_eq!(drained, (2..10).collect::<Vec<_>>());
        q.reset();
        assert_eq!(q.dropped(), 0);
        assert!(q.is_empty());
    }

    #[test]
    fn capacity_is_at_least_one() {
        let mut q = DropOldest::new(0);
        q.push(1);
        assert_eq!(q.push(2), Some(1));
    }
}
