//! Exact-key open-addressing index from block coordinates to dense block
//! handles.
//!
//! Slots hold handles into an insertion-ordered key array, so a probe
//! compares full coordinates and two distinct keys can never resolve to the
//! same handle. The table size is always prime and grows by rehashing once
//! the load factor would pass 0.75.

use super::BlockCoord;

const EMPTY: u32 = u32::MAX;
const MAX_LOAD: f64 = 0.75;

#[derive(Debug, Clone)]
pub struct BlockIndex {
    slots: Vec<u32>,
    keys: Vec<BlockCoord>,
}

impl Default for BlockIndex {
    fn default() -> Self {
        Self::with_capacity(0)
    }
}

impl BlockIndex {
    pub fn with_capacity(n: usize) -> Self {
        let size = next_prime(((n as f64 / MAX_LOAD) as usize + 1).max(17));
        Self {
            slots: vec![EMPTY; size],
            keys: Vec::with_capacity(n),
        }
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    /// Number of slots in the table.
    pub fn table_size(&self) -> usize {
        self.slots.len()
    }

    /// Keys in handle order.
    pub fn keys(&self) -> &[BlockCoord] {
        &self.keys
    }

    #[inline]
    pub fn get(&self, key: BlockCoord) -> Option<usize> {
        let n = self.slots.len();
        let mut i = (hash(key) % n as u64) as usize;
        loop {
            let s = self.slots[i];
            if s == EMPTY {
                return None;
            }
            if self.keys[s as usize] == key {
                return Some(s as usize);
            }
            i += 1;
            if i == n {
                i = 0;
            }
        }
    }

    /// Insert `key` if absent. Returns its handle and whether it was new.
    pub fn insert(&mut self, key: BlockCoord) -> (usize, bool) {
        if let Some(h) = self.get(key) {
            return (h, false);
        }
        if (self.keys.len() + 1) as f64 > MAX_LOAD * self.slots.len() as f64 {
            self.rehash(next_prime(self.slots.len() * 2 + 1));
        }
        let h = self.keys.len();
        assert!(h < EMPTY as usize, "block index is full");
        self.keys.push(key);
        self.place(key, h as u32);
        (h, true)
    }

    fn place(&mut self, key: BlockCoord, handle: u32) {
        let n = self.slots.len();
        let mut i = (hash(key) % n as u64) as usize;
        while self.slots[i] != EMPTY {
            i += 1;
            if i == n {
                i = 0;
            }
        }
        self.slots[i] = handle;
    }

    fn rehash(&mut self, size: usize) {
        self.slots = vec![EMPTY; size];
        for h in 0..self.keys.len() {
            let key = self.keys[h];
            self.place(key, h as u32);
        }
    }
}

/// Three-prime spatial hash followed by a 64-bit avalanche finalizer.
#[inline]
fn hash(c: BlockCoord) -> u64 {
    let mut h = (c.x as u32 as u64).wrapping_mul(73_856_093)
        ^ (c.y as u32 as u64).wrapping_mul(19_349_669)
        ^ (c.z as u32 as u64).wrapping_mul(83_492_791);
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^= h >> 33;
    h = h.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    h ^ (h >> 33)
}

fn next_prime(n: usize) -> usize {
    let mut c = n.max(2);
    loop {
        if is_prime(c) {
            return c;
        }
        c += 1;
    }
}

fn is_prime(n: usize) -> bool {
    if n < 4 {
        return n >= 2;
    }
    if n % 2 == 0 || n % 3 == 0 {
        return false;
    }
    let mut i = 5;
    while i * i <= n {
        if n % i == 0 || n % (i + 2) == 0 {
            return false;
        }
        i += 6;
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashMap;

    #[test]
    fn primes() {
        assert_eq!(next_prime(17), 17);
        assert_eq!(next_prime(18), 19);
        assert_eq!(next_prime(24), 29);
        assert!(!is_prime(1));
        assert!(is_prime(2));
    }

    #[test]
    fn growth_keeps_load_factor() {
        let mut idx = BlockIndex::default();
        for i in 0..10_000 {
            idx.insert(BlockCoord::new(i, -i, i * 3));
            assert!(idx.len() as f64 <= MAX_LOAD * idx.table_size() as f64);
        }
        assert!(is_prime(idx.table_size()));
    }

    proptest! {
        #[test]
        fn matches_std_hashmap(keys in prop::collection::vec((-50i32..50, -50i32..50, -50i32..50), 1..400)) {
            let mut idx = BlockIndex::default();
            let mut reference = HashMap::new();
            for (x, y, z) in keys {
                let k = BlockCoord::new(x, y, z);
                let (h, fresh) = idx.insert(k);
                let expect_fresh = !reference.contains_key(&k);
                prop_assert_eq!(fresh, expect_fresh);
                let stored = *reference.entry(k).or_insert(h);
                prop_assert_eq!(stored, h);
            }
            for (k, h) in &reference {
                prop_assert_eq!(idx.get(*k), Some(*h));
                prop_assert_eq!(idx.keys()[*h], *k);
            }
            prop_assert_eq!(idx.len(), reference.len());
        }
    }
}
