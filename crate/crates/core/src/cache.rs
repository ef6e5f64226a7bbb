//! A small set-associative LRU container shared by the TLBs and private caches.

/// One way of a set.
#[derive(Debug, Clone)]
struct Way<V> {
    key: u64,
    value: V,
    stamp: u64,
}

/// Keys index sets by `key % sets`, so set counts need not be powers of two.
#[derive(Debug, Clone)]
pub struct SetAssoc<V> {
    sets: usize,
    ways: usize,
    slots: Vec<Option<Way<V>>>,
    clock: u64,
    len: usize,
}

impl<V> SetAssoc<V> {
    pub fn new(sets: usize, ways: usize) -> Self {
        assert!(sets > 0 && ways > 0);
        let mut slots = Vec::with_capacity(sets * ways);
        slots.resize_with(sets * ways, || None);
        SetAssoc { sets, ways, slots, clock: 0, len: 0 }
    }

    pub fn sets(&self) -> usize {
        self.sets
    }

    pub fn ways(&self) -> usize {
        self.ways
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    fn set_range(&self, key: u64) -> std::ops::Range<usize> {
        let set = (key % self.sets as u64) as usize;
        set * self.ways..(set + 1) * self.ways
    }

    fn find(&self, key: u64) -> Option<usize> {
        self.set_range(key)
            .find(|&i| matches!(&self.slots[i], Some(w) if w.key == key))
    }

    /// Looks `key` up and marks it most recently used.
    pub fn get(&mut self, key: u64) -> Option<&mut V> {
        let i = self.find(key)?;
        self.clock += 1;
        let way = self.slots[i].as_mut().unwrap();
        way.stamp = self.clock;
        Some(&mut way.value)
    }

    /// Looks `key` up without touching recency.
    pub fn peek(&self, key: u64) -> Option<&V> {
        self.find(key).map(|i| &self.slots[i].as_ref().unwrap().value)
    }

    pub fn peek_mut(&mut self, key: u64) -> Option<&mut V> {
        let i = self.find(key)?;
        Some(&mut self.slots[i].as_mut().unwrap().value)
    }

    pub fn contains(&self, key: u64) -> bool {
        self.find(key).is_some()
    }

    pub fn remove(&mut self, key: u64) -> Option<V> {
        let i = self.find(key)?;
        self.len -= 1;
        self.slots[i].take().map(|w| w.value)
    }

    fn victim_slot(&self, key: u64, evictable: impl Fn(&V) -> bool) -> Option<usize> {
        let range = self.set_range(key);
        if let Some(i) = range.clone().find(|&i| self.slots[i].is_none()) {
            return Some(i);
        }
        range
            .filter(|&i| evictable(&self.slots[i].as_ref().unwrap().value))
            .min_by_key(|&i| self.slots[i].as_ref().unwrap().stamp)
    }

    /// Whether `key` could be inserted without violating `evictable`.
    pub fn can_insert(&self, key: u64, evictable: impl Fn(&V) -> bool) -> bool {
        self.victim_slot(key, evictable).is_some()
    }

    /// Inserts an absent `key` as most recently used, taking a free way or
    /// else the least recently used way whose value is `evictable`.
    ///
    /// Returns the evicted entry, or gives `value` back if every way is pinned.
    pub fn insert_with(
        &mut self,
        key: u64,
        value: V,
        evictable: impl Fn(&V) -> bool,
    ) -> Result<Option<(u64, V)>, V> {
        debug_assert!(!self.contains(key), "duplicate key {key:#x}");
        let Some(i) = self.victim_slot(key, evictable) else {
            return Err(value);
        };
        self.clock += 1;
        let old = self.slots[i].replace(Way { key, value, stamp: self.clock });
        if old.is_none() {
            self.len += 1;
        }
        Ok(old.map(|w| (w.key, w.value)))
    }

    pub fn insert(&mut self, key: u64, value: V) -> Option<(u64, V)> {
        match self.insert_with(key, value, |_| true) {
            Ok(evicted) => evicted,
            Err(_) => unreachable!("unconstrained insert always finds a way"),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, &V)> {
        self.slots.iter().flatten().map(|w| (w.key, &w.value))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lru_eviction_order() {
        let mut c = SetAssoc::new(1, 2);
        assert!(c.insert(1, 'a').is_none());
        assert!(c.insert(2, 'b').is_none());
        c.get(1);
        assert_eq!(c.insert(3, 'c'), Some((2, 'b')));
        assert!(c.contains(1) && c.contains(3));
        assert_eq!(c.len(), 2);
    }

    #[test]
    fn pinned_ways_are_skipped() {
        let mut c = SetAssoc::new(1, 2);
        c.insert(1, true);
        c.insert(2, false);
        // Only `false` entries are evictable.
        assert_eq!(c.insert_with(3, false, |v| !*v), Ok(Some((2, false))));
        assert_eq!(c.insert_with(4, true, |v| *v && false), Err(true));
    }

    #[test]
    fn non_power_of_two_sets() {
        let mut c = SetAssoc::new(85, 12);
        for k in 0..1020u64 {
            assert!(c.insert(k, k).is_none());
        }
        assert_eq!(c.len(), 1020);
        assert!(c.insert(1020, 0).is_some());
    }
}
