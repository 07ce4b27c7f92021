//! Fixed-capacity windows over streamed items.
//!
//! [`SlidingWindow`] is a ring buffer: pushing at capacity evicts the oldest
//! item. [`FrozenWindow`] accepts items until full and then refuses further
//! pushes until reset; it models a reference window that is pinned once
//! filled.

use std::collections::VecDeque;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WindowError {
    #[error("push into a frozen window (capacity {capacity})")]
    Frozen { capacity: usize },
}

/// Order-preserving ring buffer. Iteration yields items oldest first.
#[derive(Debug, Clone)]
pub struct SlidingWindow<T> {
    capacity: usize,
    items: VecDeque<T>,
    pushed: u64,
}

impl<T> SlidingWindow<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "window capacity must be >= 1");
        Self {
            capacity,
            items: VecDeque::with_capacity(capacity),
            pushed: 0,
        }
    }

    /// Appends `item`, returning the evicted oldest item when at capacity.
    pub fn push(&mut self, item: T) -> Option<T> {
        self.pushed += 1;
        let evicted = if self.items.len() == self.capacity {
            self.items.pop_front()
        } else {
            None
        };
        self.items.push_back(item);
        evicted
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.items.len() == self.capacity
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Total number of pushes since creation or the last clear.
    pub fn total_pushed(&self) -> u64 {
        self.pushed
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.items.iter()
    }

    /// The most recent `k` items, oldest of those first.
    pub fn recent(&self, k: usize) -> impl Iterator<Item = &T> {
        let skip = self.items.len().saturating_sub(k);
        self.items.iter().skip(skip)
    }

    pub fn clear(&mut self) {
        self.items.clear();
        self.pushed = 0;
    }
}

impl<T: Clone> SlidingWindow<T> {
    /// Copies the contents in arrival order; later pushes do not affect it.
    pub fn snapshot(&self) -> Vec<T> {
        self.items.iter().cloned().collect()
    }
}

/// Window that becomes immutable once it reaches capacity.
#[derive(Debug, Clone)]
pub struct FrozenWindow<T> {
    capacity: usize,
    items: Vec<T>,
}

impl<T> FrozenWindow<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "window capacity must be >= 1");
        Self {
            capacity,
            items: Vec::with_capacity(capacity),
        }
    }

    pub fn push(&mut self, item: T) -> Result<(), WindowError> {
        if self.is_full() {
            return Err(WindowError::Frozen {
                capacity: self.capacity,
            });
        }
        self.items.push(item);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.items.len() == self.capacity
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.items.iter()
    }

    /// Empties the window and makes it mutable again.
    pub fn reset(&mut self) {
        self.items.clear();
    }
}

impl<T: Clone> FrozenWindow<T> {
    pub fn snapshot(&self) -> Vec<T> {
        self.items.clone()
    }
}
