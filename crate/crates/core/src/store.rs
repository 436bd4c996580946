//! Append-only chunked array of atom records.
//!
//! Block `k` holds `2^k` records covering indices `[2^k, 2^(k+1))`, so the
//! record for index `i` lives in block `msb(i)`. Blocks are never moved or
//! freed while the array is alive, which gives every record a stable address
//! for the lifetime of the table.

use std::ptr;
use std::sync::atomic::{AtomicPtr, AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::error::AtomError;
use crate::handle::{AtomHandle, RefWord, TAG_BITS, RESERVED, VALID, WORD_BITS};

const DIR_LEN: usize = (WORD_BITS - TAG_BITS) as usize;

/// Blocks 0..=2 are allocated up front: indices 1..=7 (index 0 is null).
pub const PREALLOCATED_BLOCKS: usize = 3;
pub const PREALLOCATED_SLOTS: usize = (1 << PREALLOCATED_BLOCKS) - 1;

/// Position of the highest set bit. `index` must be non-zero.
#[inline]
pub fn msb(index: usize) -> usize {
    debug_assert!(index != 0);
    (usize::BITS - 1 - index.leading_zeros()) as usize
}

/// One interned symbol slot.
#[derive(Debug)]
pub struct AtomRecord {
    pub(crate) next: AtomicUsize,
    name_ptr: AtomicPtr<u8>,
    name_len: AtomicUsize,
    pub(crate) references: AtomicUsize,
    pub(crate) next_invalid: AtomicUsize,
}

impl AtomRecord {
    fn new() -> Self {
        AtomRecord {
            next: AtomicUsize::new(0),
            name_ptr: AtomicPtr::new(ptr::null_mut()),
            name_len: AtomicUsize::new(0),
            references: AtomicUsize::new(0),
            next_invalid: AtomicUsize::new(0),
        }
    }

    pub fn references(&self) -> RefWord {
        RefWord::from_raw(self.references.load(Ordering::SeqCst))
    }

    pub fn has_name(&self) -> bool {
        !self.name_ptr.load(Ordering::Acquire).is_null()
    }

    /// Chain successor as a raw handle word (0 for end of chain).
    pub fn next_raw(&self) -> usize {
        self.next.load(Ordering::SeqCst)
    }

    pub fn on_invalid_list(&self) -> bool {
        self.next_invalid.load(Ordering::Relaxed) != 0
    }

    /// # Safety
    /// The name must be present and must not be released while the returned
    /// slice is alive. Holding a count, seeing the valid bit under a bucket
    /// guard, or holding the agc lock all satisfy this.
    pub(crate) unsafe fn name(&self) -> &[u8] {
        let len = self.name_len.load(Ordering::Relaxed);
        let p = self.name_ptr.load(Ordering::Acquire);
        debug_assert!(!p.is_null());
        std::slice::from_raw_parts(p, len)
    }

    /// Installs the name of a reserved, not yet published record.
    pub(crate) fn set_name(&self, name: &[u8]) {
        let boxed: Box<[u8]> = name.into();
        let len = boxed.len();
        let p = Box::into_raw(boxed) as *mut u8;
        self.name_len.store(len, Ordering::Relaxed);
        let old = self.name_ptr.swap(p, Ordering::Release);
        debug_assert!(old.is_null());
    }

    fn take_name(&self) -> Option<Box<[u8]>> {
        let p = self.name_ptr.swap(ptr::null_mut(), Ordering::AcqRel);
        if p.is_null() {
            return None;
        }
        let len = self.name_len.swap(0, Ordering::Relaxed);
        // SAFETY: `p`/`len` came from `Box::into_raw` in `set_name`, and the
        // swap above gives this call exclusive ownership.
        Some(unsafe { Box::from_raw(ptr::slice_from_raw_parts_mut(p, len)) })
    }
}

/// The chunked record array plus the reservation protocol.
pub struct AtomArray {
    blocks: [AtomicPtr<AtomRecord>; DIR_LEN],
    capacity: AtomicUsize,
    highest: AtomicUsize,
    hint: AtomicUsize,
    growth: Mutex<()>,
}

// SAFETY: blocks are only ever read through shared references; every mutable
// field of a record is an atomic.
unsafe impl Send for AtomArray {}
unsafe impl Sync for AtomArray {}

impl Default for AtomArray {
    fn default() -> Self {
        Self::new()
    }
}

impl AtomArray {
    pub fn new() -> Self {
        let array = AtomArray {
            blocks: std::array::from_fn(|_| AtomicPtr::new(ptr::null_mut())),
            capacity: AtomicUsize::new(0),
            highest: AtomicUsize::new(0),
            hint: AtomicUsize::new(1),
            growth: Mutex::new(()),
        };
        for _ in 0..PREALLOCATED_BLOCKS {
            let cap = array.capacity();
            array.grow(cap).expect("preallocating the first blocks");
        }
        array
    }

    /// Number of addressable record slots (the highest published index).
    pub fn capacity(&self) -> usize {
        self.capacity.load(Ordering::Acquire)
    }

    /// High-water mark of indices ever handed out by `reserve_atom`.
    pub fn highest_index(&self) -> usize {
        self.highest.load(Ordering::SeqCst)
    }

    /// Record for `index` if its block is published, without the
    /// high-water-mark check.
    #[inline]
    pub(crate) fn slot(&self, index: usize) -> Option<&AtomRecord> {
        if index == 0 || index > self.capacity() {
            return None;
        }
        let k = msb(index);
        let base = self.blocks[k].load(Ordering::Acquire);
        debug_assert!(!base.is_null());
        // SAFETY: block k is published (capacity covers index) and holds
        // 2^k records starting at index 2^k. Blocks live as long as `self`.
        Some(unsafe { &*base.add(index - (1 << k)) })
    }

    #[inline]
    pub(crate) fn record(&self, handle: AtomHandle) -> &AtomRecord {
        self.slot(handle.index()).expect("handle refers to an unpublished block")
    }

    /// The record at `index`, for `1 <= index <= highest_index()`.
    pub fn atom_at(&self, index: usize) -> Result<&AtomRecord, AtomError> {
        if index == 0 || index > self.highest_index() {
            return Err(AtomError::NoSuchIndex(index));
        }
        self.slot(index).ok_or(AtomError::NoSuchIndex(index))
    }

    /// Claims a free slot by moving its reference word from FREE to
    /// reserved-only. Appends a block when every published slot is taken.
    pub fn reserve_atom(&self) -> Result<AtomHandle, AtomError> {
        loop {
            let cap = self.capacity();
            let start = self.hint.load(Ordering::Relaxed).clamp(1, cap);
            for index in (start..=cap).chain(1..start) {
                let rec = self.slot(index).expect("index within capacity");
                if rec.references.load(Ordering::Relaxed) == 0
                    && rec
                        .references
                        .compare_exchange(0, RESERVED, Ordering::SeqCst, Ordering::Relaxed)
                        .is_ok()
                {
                    self.hint.store(index + 1, Ordering::Relaxed);
                    self.highest.fetch_max(index, Ordering::SeqCst);
                    return AtomHandle::from_index(index);
                }
            }
            self.grow(cap)?;
        }
    }

    /// Appends the next block unless another thread already did.
    fn grow(&self, seen_capacity: usize) -> Result<(), AtomError> {
        let _lock = self.growth.lock().unwrap_or_else(|e| e.into_inner());
        if self.capacity() != seen_capacity {
            return Ok(());
        }
        let k = msb(seen_capacity + 1);
        if k >= DIR_LEN {
            return Err(AtomError::CapacityExhausted);
        }
        let len = 1usize << k;
        let mut records = Vec::new();
        records
            .try_reserve_exact(len)
            .map_err(|_| AtomError::CapacityExhausted)?;
        records.extend((0..len).map(|_| AtomRecord::new()));
        let base = Box::into_raw(records.into_boxed_slice()) as *mut AtomRecord;
        self.blocks[k].store(base, Ordering::Release);
        self.capacity.store((len << 1) - 1, Ordering::Release);
        Ok(())
    }

    /// Returns a record to the FREE state and drops its name.
    ///
    /// Only for records that are unreachable: a reserved slot whose insert
    /// lost, or an invalidated atom that passed the guard check.
    pub(crate) fn release_record(&self, handle: AtomHandle) -> Result<usize, AtomError> {
        let rec = self
            .slot(handle.index())
            .ok_or(AtomError::NoSuchIndex(handle.index()))?;
        if rec.references.load(Ordering::SeqCst) & VALID != 0 {
            return Err(AtomError::ContractViolation("release of a valid atom"));
        }
        let freed = rec.take_name().map_or(0, |n| n.len());
        rec.next.store(0, Ordering::Relaxed);
        rec.next_invalid.store(0, Ordering::Relaxed);
        rec.references.store(0, Ordering::SeqCst);
        Ok(freed)
    }
}

impl Drop for AtomArray {
    fn drop(&mut self) {
        for (k, block) in self.blocks.iter_mut().enumerate() {
            let base = *block.get_mut();
            if base.is_null() {
                continue;
            }
            // SAFETY: allocated in `grow` as a boxed slice of 2^k records.
            let records = unsafe { Box::from_raw(ptr::slice_from_raw_parts_mut(base, 1 << k)) };
            for rec in records.iter() {
                drop(rec.take_name());
            }
        }
    }
}
