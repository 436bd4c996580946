//! Thread registry, scan arenas and explicit reference counting.
//!
//! Each registered thread owns a [`ThreadContext`]. Its published guards
//! (table snapshot, bucket guard and the unregistering slot) and its scan
//! arenas are what the collector reads while the thread keeps running.

use std::cell::{Cell, UnsafeCell};
use std::marker::PhantomData;
use std::ptr;
use std::sync::atomic::{fence, AtomicPtr, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use crate::collector::mark_record;
use crate::error::AtomError;
use crate::handle::{classify_word, AtomHandle, WordClass, COUNT_MASK};
use crate::table::{AtomTable, BucketTable};

/// Word value treated as an explicitly dead arena slot by compaction.
pub const DEAD_WORD: usize = 0;

const MIN_ARENA_CAPACITY: usize = 16;

/// Growable array of machine words that the marker may read while the
/// owning thread keeps writing. Reallocation happens only under
/// `relocation`.
pub(crate) struct ArenaShared {
    relocation: Mutex<()>,
    storage: UnsafeCell<Box<[AtomicUsize]>>,
    len: AtomicUsize,
}

// SAFETY: the storage box is replaced only by the owning thread while it
// holds `relocation`; the marker only dereferences it under the same lock.
// All element access is atomic.
unsafe impl Sync for ArenaShared {}
unsafe impl Send for ArenaShared {}

fn alloc_words(n: usize) -> Box<[AtomicUsize]> {
    (0..n).map(|_| AtomicUsize::new(DEAD_WORD)).collect()
}

impl ArenaShared {
    fn new() -> Self {
        ArenaShared {
            relocation: Mutex::new(()),
            storage: UnsafeCell::new(alloc_words(MIN_ARENA_CAPACITY)),
            len: AtomicUsize::new(0),
        }
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, ()> {
        self.relocation.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Owner-side view of the storage.
    ///
    /// # Safety
    /// Only the owning thread may call this, and it must not hold the
    /// returned slice across a call that replaces the storage.
    unsafe fn owner_words(&self) -> &[AtomicUsize] {
        &*self.storage.get()
    }

    /// Replaces the storage with `words`, keeping `len` entries.
    ///
    /// # Safety
    /// Owner only.
    unsafe fn relocate(&self, words: Vec<usize>, capacity: usize) {
        let _lock = self.lock();
        let fresh = alloc_words(capacity.max(MIN_ARENA_CAPACITY));
        for (slot, w) in fresh.iter().zip(&words) {
            slot.store(*w, Ordering::Relaxed);
        }
        *self.storage.get() = fresh;
        self.len.store(words.len(), Ordering::SeqCst);
    }

    /// Calls `f` on every live word while holding the relocation lock.
    pub(crate) fn scan(&self, mut f: impl FnMut(usize)) {
        let _lock = self.lock();
        // SAFETY: the storage cannot be replaced while we hold the lock.
        let words = unsafe { &*self.storage.get() };
        let len = self.len.load(Ordering::SeqCst).min(words.len());
        for w in &words[..len] {
            f(w.load(Ordering::SeqCst));
        }
    }

    #[cfg(test)]
    /// Holds the relocation lock for the duration of `f`.
    pub(crate) fn with_relocation_lock<R>(&self, f: impl FnOnce() -> R) -> R {
        let _lock = self.lock();
        f()
    }
}

/// The part of a thread context other threads may read.
pub(crate) struct ContextShared {
    pub(crate) table_snapshot: AtomicPtr<BucketTable>,
    pub(crate) bucket_guard: AtomicUsize,
    pub(crate) unregistering: AtomicUsize,
    pub(crate) arenas: Mutex<Vec<Arc<ArenaShared>>>,
}

impl ContextShared {
    pub(crate) fn arenas(&self) -> Vec<Arc<ArenaShared>> {
        self.arenas.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }
}

/// Identifies one of a thread's scan arenas.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ArenaId(usize);

impl ArenaId {
    /// The arena every context starts with.
    pub const DEFAULT: ArenaId = ArenaId(0);
}

/// A registered thread's handle on the atom table.
///
/// Owned by one thread at a time (`Send` but not `Sync`). Dropping it
/// deregisters the thread.
pub struct ThreadContext {
    table: Arc<AtomTable>,
    shared: Arc<ContextShared>,
    arenas: Vec<Arc<ArenaShared>>,
    registered: bool,
    _not_sync: PhantomData<Cell<()>>,
}

impl ThreadContext {
    pub(crate) fn register(table: &Arc<AtomTable>) -> ThreadContext {
        let arena = Arc::new(ArenaShared::new());
        let shared = Arc::new(ContextShared {
            table_snapshot: AtomicPtr::new(ptr::null_mut()),
            bucket_guard: AtomicUsize::new(0),
            unregistering: AtomicUsize::new(0),
            arenas: Mutex::new(vec![Arc::clone(&arena)]),
        });
        table
            .registry
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .push(Arc::clone(&shared));
        ThreadContext {
            table: Arc::clone(table),
            shared,
            arenas: vec![arena],
            registered: true,
            _not_sync: PhantomData,
        }
    }

    pub fn table(&self) -> &Arc<AtomTable> {
        &self.table
    }

    pub(crate) fn shared(&self) -> &ContextShared {
        &self.shared
    }

    /// Returns the unique handle for `name`, creating the atom if needed.
    /// The caller owns one explicit reference on the result.
    pub fn intern(&self, name: &[u8]) -> Result<AtomHandle, AtomError> {
        let h = self.table.intern_in(&self.shared, name)?;
        self.table.maybe_trigger_agc();
        Ok(h)
    }

    /// Like [`intern`](Self::intern) but never creates an atom.
    pub fn find_existing(&self, name: &[u8]) -> Option<AtomHandle> {
        self.table.find_in(&self.shared, name)
    }

    /// Drops one explicit reference.
    ///
    /// When this may be the last reference, the handle is parked in the
    /// context's unregistering slot before the collector flag is read, so a
    /// collection that is starting concurrently marks it from one side or
    /// the other.
    pub fn unregister_atom(&self, handle: AtomHandle) -> Result<(), AtomError> {
        let rec = self
            .table
            .store
            .slot(handle.index())
            .ok_or(AtomError::NoSuchIndex(handle.index()))?;
        let mut cur = rec.references.load(Ordering::SeqCst);
        let mut handed_off = false;
        loop {
            let count = cur & COUNT_MASK;
            if count == 0 {
                return Err(AtomError::CountUnderflow(handle));
            }
            if count == 1 && !handed_off {
                self.publish_unregistering(handle);
                self.table.conditional_mark(handle);
                handed_off = true;
                cur = rec.references.load(Ordering::SeqCst);
                continue;
            }
            match rec
                .references
                .compare_exchange(cur, cur - 1, Ordering::SeqCst, Ordering::SeqCst)
            {
                Ok(_) => break,
                Err(actual) => cur = actual,
            }
        }
        if handed_off {
            self.clear_unregistering_if_idle();
        }
        Ok(())
    }

    /// First step of the unregister hand-off: park `handle` where the
    /// marker will see it. The fence orders the store before any later read
    /// of the collector flag.
    #[doc(hidden)]
    pub fn publish_unregistering(&self, handle: AtomHandle) {
        self.shared.unregistering.store(handle.raw(), Ordering::SeqCst);
        fence(Ordering::SeqCst);
    }

    /// Last step of the hand-off. The slot is only cleared while no
    /// collection is running; otherwise it stays for the marker and is
    /// overwritten by the next hand-off.
    #[doc(hidden)]
    pub fn clear_unregistering_if_idle(&self) {
        if !self.table.running.load(Ordering::SeqCst) {
            self.shared.unregistering.store(0, Ordering::SeqCst);
        }
    }

    /// Raw contents of the unregistering slot.
    pub fn unregistering(&self) -> Option<AtomHandle> {
        AtomHandle::from_raw(self.shared.unregistering.load(Ordering::SeqCst))
    }

    pub fn add_arena(&mut self) -> ArenaId {
        let arena = Arc::new(ArenaShared::new());
        self.shared
            .arenas
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .push(Arc::clone(&arena));
        self.arenas.push(arena);
        ArenaId(self.arenas.len() - 1)
    }

    fn arena(&self, id: ArenaId) -> Result<&ArenaShared, AtomError> {
        self.arenas
            .get(id.0)
            .map(|a| &**a)
            .ok_or(AtomError::NoSuchArena(id.0))
    }

    /// Marks the atom `word` may refer to if a collection is running.
    fn mark_if_running(&self, word: usize) -> bool {
        if !self.table.running.load(Ordering::SeqCst) {
            return false;
        }
        if let WordClass::AtomLike(index) = classify_word(word, self.table.store.highest_index()) {
            if let Some(rec) = self.table.store.slot(index) {
                mark_record(rec);
            }
        }
        true
    }

    /// Appends `word` to an arena and returns its slot.
    ///
    /// While a collection runs, an atom-like word marks its atom before it
    /// is stored; the flag is read again after the store so a collection
    /// that started in between cannot miss it.
    pub fn arena_push(&self, id: ArenaId, word: usize) -> Result<usize, AtomError> {
        let arena = self.arena(id)?;
        let marked = self.mark_if_running(word);
        let len = arena.len.load(Ordering::Relaxed);
        // SAFETY: we are the owner.
        let cap = unsafe { arena.owner_words() }.len();
        if len == cap {
            let words: Vec<usize> = unsafe { arena.owner_words() }[..len]
                .iter()
                .map(|w| w.load(Ordering::Relaxed))
                .collect();
            unsafe { arena.relocate(words, cap * 2) };
        }
        (unsafe { arena.owner_words() })[len].store(word, Ordering::SeqCst);
        arena.len.store(len + 1, Ordering::SeqCst);
        if !marked {
            self.mark_if_running(word);
        }
        Ok(len)
    }

    pub fn arena_overwrite(&self, id: ArenaId, slot: usize, word: usize) -> Result<(), AtomError> {
        let arena = self.arena(id)?;
        let len = arena.len.load(Ordering::Relaxed);
        if slot >= len {
            return Err(AtomError::SlotOutOfBounds { slot, len });
        }
        let marked = self.mark_if_running(word);
        // SAFETY: we are the owner.
        (unsafe { arena.owner_words() })[slot].store(word, Ordering::SeqCst);
        if !marked {
            self.mark_if_running(word);
        }
        Ok(())
    }

    /// Removes and returns the last word.
    pub fn arena_pop(&self, id: ArenaId) -> Result<usize, AtomError> {
        let arena = self.arena(id)?;
        let len = arena.len.load(Ordering::Relaxed);
        if len == 0 {
            return Err(AtomError::EmptyArena);
        }
        // SAFETY: we are the owner.
        let word = unsafe { arena.owner_words() }[len - 1].load(Ordering::Relaxed);
        arena.len.store(len - 1, Ordering::SeqCst);
        Ok(word)
    }

    /// Drops dead slots (`DEAD_WORD`) and reallocates the backing storage
    /// to fit. Waits while the marker is scanning this arena.
    pub fn arena_compact(&self, id: ArenaId) -> Result<(), AtomError> {
        let arena = self.arena(id)?;
        let len = arena.len.load(Ordering::Relaxed);
        if len == 0 {
            return Ok(());
        }
        // SAFETY: we are the owner.
        let live: Vec<usize> = unsafe { arena.owner_words() }[..len]
            .iter()
            .map(|w| w.load(Ordering::Relaxed))
            .filter(|&w| w != DEAD_WORD)
            .collect();
        let cap = live.len().next_power_of_two();
        unsafe { arena.relocate(live, cap) };
        Ok(())
    }

    pub fn arena_len(&self, id: ArenaId) -> Result<usize, AtomError> {
        Ok(self.arena(id)?.len.load(Ordering::Relaxed))
    }

    pub fn arena_words(&self, id: ArenaId) -> Result<Vec<usize>, AtomError> {
        let arena = self.arena(id)?;
        let len = arena.len.load(Ordering::Relaxed);
        // SAFETY: we are the owner.
        Ok(unsafe { arena.owner_words() }[..len]
            .iter()
            .map(|w| w.load(Ordering::Relaxed))
            .collect())
    }

    fn remove_from_registry(&mut self) -> Result<(), AtomError> {
        if !self.registered {
            return Err(AtomError::UnknownThread);
        }
        let mut registry = self.table.registry.write().unwrap_or_else(|e| e.into_inner());
        let pos = registry
            .iter()
            .position(|c| Arc::ptr_eq(c, &self.shared))
            .ok_or(AtomError::UnknownThread)?;
        registry.swap_remove(pos);
        self.registered = false;
        Ok(())
    }
}

impl Drop for ThreadContext {
    fn drop(&mut self) {
        if self.registered {
            let _ = self.remove_from_registry();
        }
    }
}

impl AtomTable {
    /// Removes `ctx` from the registry. Blocks while a mark phase runs.
    pub fn deregister_thread(&self, mut ctx: ThreadContext) -> Result<(), AtomError> {
        if !ptr::eq(Arc::as_ptr(&ctx.table), self) {
            return Err(AtomError::UnknownThread);
        }
        ctx.remove_from_registry()
    }

    pub fn registered_threads(&self) -> usize {
        self.registry.read().unwrap_or_else(|e| e.into_inner()).len()
    }

    /// Second step of the unregister hand-off: mark `handle` if a
    /// collection is running. Returns whether the flag was set.
    #[doc(hidden)]
    pub fn conditional_mark(&self, handle: AtomHandle) -> bool {
        if self.running.load(Ordering::SeqCst) {
            if let Some(rec) = self.store.slot(handle.index()) {
                mark_record(rec);
            }
            true
        } else {
            false
        }
    }
}
