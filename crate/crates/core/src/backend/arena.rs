//! First-fit arena allocator backing an emulated device.
//!
//! Offsets handed out are multiples of the requested alignment, and the
//! backing store itself is page aligned, so an offset aligned to `a` is also
//! an address aligned to `a` for every `a <= PAGE_SIZE`.
//!
//! Storage grows lazily up to the high-water mark of live allocations; the
//! configured capacity only bounds the address space.

use std::collections::HashMap;

use bytemuck::{Pod, Zeroable};

pub const PAGE_SIZE: usize = 4096;

/// Byte pattern written into freshly allocated device memory.
pub const DEBUG_FILL: u8 = 0xCD;

#[derive(Clone, Copy, Pod, Zeroable)]
#[repr(C, align(4096))]
struct Page([u8; PAGE_SIZE]);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Block {
    pub base: usize,
    pub len: usize,
    pub reserved: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ArenaStats {
    pub capacity: usize,
    pub bytes_in_use: usize,
    pub live_allocations: usize,
    pub high_water: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ArenaError {
    Exhausted { requested: usize, available: usize },
    UnknownAllocation,
    DuplicateAllocation,
}

pub struct Arena {
    capacity: usize,
    // Sorted by start, coalesced, non-empty ranges [start, end).
    free: Vec<(usize, usize)>,
    live: HashMap<u64, Block>,
    storage: Vec<Page>,
    in_use: usize,
}

fn round_up(x: usize, align: usize) -> usize {
    x.div_ceil(align) * align
}

impl Arena {
    pub fn new(capacity: usize) -> Self {
        Arena {
            capacity,
            free: if capacity > 0 { vec![(0, capacity)] } else { Vec::new() },
            live: HashMap::new(),
            storage: Vec::new(),
            in_use: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn stats(&self) -> ArenaStats {
        ArenaStats {
            capacity: self.capacity,
            bytes_in_use: self.in_use,
            live_allocations: self.live.len(),
            high_water: self.storage.len() * PAGE_SIZE,
        }
    }

    pub fn allocate(&mut self, id: u64, len: usize, align: usize) -> Result<Block, ArenaError> {
        debug_assert!(align.is_power_of_two() && align <= PAGE_SIZE);
        if self.live.contains_key(&id) {
            return Err(ArenaError::DuplicateAllocation);
        }
        let reserved = round_up(len.max(1), align);
        let slot = self.free.iter().enumerate().find_map(|(i, &(s, e))| {
            let start = round_up(s, align);
            (start.checked_add(reserved)? <= e).then_some((i, start))
        });
        let Some((i, start)) = slot else {
            return Err(ArenaError::Exhausted {
                requested: reserved,
                available: self.capacity - self.in_use,
            });
        };
        let (s, e) = self.free.remove(i);
        let end = start + reserved;
        if end < e {
            self.free.insert(i, (end, e));
        }
        if s < start {
            self.free.insert(i, (s, start));
        }

        let pages = end.div_ceil(PAGE_SIZE);
        if self.storage.len() < pages {
            self.storage.resize(pages, Page::zeroed());
        }
        self.bytes_mut_unchecked(start, reserved).fill(DEBUG_FILL);

        let block = Block { base: start, len, reserved };
        self.live.insert(id, block);
        self.in_use += reserved;
        Ok(block)
    }

    pub fn free(&mut self, id: u64) -> Result<Block, ArenaError> {
        let block = self.live.remove(&id).ok_or(ArenaError::UnknownAllocation)?;
        self.in_use -= block.reserved;
        let (s, e) = (block.base, block.base + block.reserved);
        let i = self.free.partition_point(|&(fs, _)| fs < s);
        self.free.insert(i, (s, e));
        // Merge with the right neighbour, then the left one.
        if i + 1 < self.free.len() && self.free[i + 1].0 == e {
            self.free[i].1 = self.free[i + 1].1;
            self.free.remove(i + 1);
        }
        if i > 0 && self.free[i - 1].1 == s {
            self.free[i - 1].1 = self.free[i].1;
            self.free.remove(i);
        }
        Ok(block)
    }

    pub fn block(&self, id: u64) -> Option<Block> {
        self.live.get(&id).copied()
    }

    pub fn is_empty(&self) -> bool {
        self.live.is_empty()
    }

    /// Drops every allocation and resizes the address space.
    pub fn reset(&mut self, capacity: usize) {
        *self = Arena::new(capacity);
    }

    pub fn bytes(&self, start: usize, len: usize) -> &[u8] {
        &bytemuck::cast_slice(&self.storage)[start..start + len]
    }

    pub fn bytes_mut(&mut self, start: usize, len: usize) -> &mut [u8] {
        self.bytes_mut_unchecked(start, len)
    }

    fn bytes_mut_unchecked(&mut self, start: usize, len: usize) -> &mut [u8] {
        &mut bytemuck::cast_slice_mut(&mut self.storage)[start..start + len]
    }

    /// Whole backing store, for handing several argument regions to a kernel.
    pub fn storage_mut(&mut self) -> &mut [u8] {
        bytemuck::cast_slice_mut(&mut self.storage)
    }

    /// Checks allocator bookkeeping: live and free ranges are pairwise
    /// disjoint, aligned blocks lie inside the capacity, and the accounting
    /// adds up.
    pub fn audit(&self) -> Result<(), String> {
        let mut ranges: Vec<(usize, usize, &str)> = self
            .live
            .values()
            .map(|b| (b.base, b.base + b.reserved, "live"))
            .chain(self.free.iter().map(|&(s, e)| (s, e, "free")))
            .collect();
        ranges.sort_unstable();
        for w in ranges.windows(2) {
            if w[0].1 > w[1].0 {
                return Err(format!("overlap: {:?} and {:?}", w[0], w[1]));
            }
        }
        let covered: usize = ranges.iter().map(|r| r.1 - r.0).sum();
        if covered != self.capacity {
            return Err(format!("{covered} bytes accounted of {}", self.capacity));
        }
        let used: usize = self.live.values().map(|b| b.reserved).sum();
        if used != self.in_use {
            return Err(format!("in_use {} but live blocks sum to {used}", self.in_use));
        }
        Ok(())
    }
}
