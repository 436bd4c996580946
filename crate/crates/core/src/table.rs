//! Lock-free open hash table mapping byte strings to atoms.
//!
//! The table is a chain of bucket-array generations. Readers snapshot the
//! current generation and the bucket they walk into their thread context;
//! the collector consults those guards before recycling a record. A resize
//! builds a table twice as large under the agc lock and publishes it with a
//! single pointer store; the old generation stays linked through `prev`
//! until no thread holds a snapshot of it.

use std::collections::HashMap;
use std::ptr;
use std::sync::atomic::{AtomicBool, AtomicPtr, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use crate::collector::{AgcStats, CollectorState, Hooks};
use crate::error::AtomError;
use crate::handle::{AtomHandle, RefWord, COUNT_MASK, RESERVED, VALID};
use crate::roots::{ContextShared, ThreadContext};
use crate::store::{AtomArray, AtomRecord};

/// Set on every slot of a generation that is being replaced. Inserts whose
/// CAS expected an unfrozen head fail, and readers wait for the new table.
pub(crate) const FROZEN: usize = 0b010;

#[cfg(target_pointer_width = "64")]
const FNV_OFFSET: usize = 0xcbf2_9ce4_8422_2325;
#[cfg(target_pointer_width = "64")]
const FNV_PRIME: usize = 0x0000_0100_0000_01b3;
#[cfg(target_pointer_width = "32")]
const FNV_OFFSET: usize = 0x811c_9dc5;
#[cfg(target_pointer_width = "32")]
const FNV_PRIME: usize = 0x0100_0193;

/// FNV-1a over the bytes of `s`, word-sized. Seed-free so that bucket
/// placement is reproducible across runs.
pub fn hash(s: &[u8]) -> usize {
    s.iter().fold(FNV_OFFSET, |h, &b| (h ^ b as usize).wrapping_mul(FNV_PRIME))
}

/// One generation of the bucket array.
pub(crate) struct BucketTable {
    pub(crate) mask: usize,
    pub(crate) slots: Box<[AtomicUsize]>,
    pub(crate) prev: AtomicPtr<BucketTable>,
}

impl BucketTable {
    fn alloc(buckets: usize) -> Result<Box<BucketTable>, AtomError> {
        debug_assert!(buckets.is_power_of_two());
        let mut slots = Vec::new();
        slots
            .try_reserve_exact(buckets)
            .map_err(|_| AtomError::CapacityExhausted)?;
        slots.extend((0..buckets).map(|_| AtomicUsize::new(0)));
        Ok(Box::new(BucketTable {
            mask: buckets - 1,
            slots: slots.into_boxed_slice(),
            prev: AtomicPtr::new(ptr::null_mut()),
        }))
    }

    #[inline]
    pub(crate) fn buckets(&self) -> usize {
        self.mask + 1
    }

    #[inline]
    pub(crate) fn slot_for(&self, key: usize) -> &AtomicUsize {
        &self.slots[key & self.mask]
    }
}

#[derive(Clone)]
pub struct TableConfig {
    /// Bucket count of the first generation; rounded up to a power of two.
    pub initial_buckets: usize,
    /// Resize once valid atoms per bucket exceed this.
    pub max_load: f64,
    /// Run a collection from an interning thread once this many atoms were
    /// created since the previous cycle. `None` leaves collection to the host.
    pub agc_trigger: Option<usize>,
    pub hooks: Hooks,
}

impl Default for TableConfig {
    fn default() -> Self {
        TableConfig {
            initial_buckets: 1024,
            max_load: 2.0,
            agc_trigger: Some(10_000),
            hooks: Hooks::default(),
        }
    }
}

impl TableConfig {
    /// Defaults without the automatic collection trigger.
    pub fn manual() -> Self {
        TableConfig {
            agc_trigger: None,
            ..TableConfig::default()
        }
    }
}

/// The atom table: record store, bucket generations, thread registry and
/// collector state.
pub struct AtomTable {
    pub(crate) store: AtomArray,
    pub(crate) current: AtomicPtr<BucketTable>,
    /// Valid atoms linked into the table.
    pub(crate) live: AtomicUsize,
    pub(crate) created_since_agc: AtomicUsize,
    /// The agc lock. Held for a whole collection cycle and for resizes.
    pub(crate) agc: Mutex<CollectorState>,
    pub(crate) running: AtomicBool,
    pub(crate) registry: RwLock<Vec<Arc<ContextShared>>>,
    pub(crate) stats: Mutex<AgcStats>,
    pub(crate) config: TableConfig,
}

/// Result of a full walk over the current generation.
#[derive(Debug, Default)]
pub struct AuditReport {
    pub valid_atoms: usize,
    /// Valid atoms per name.
    pub names: HashMap<Vec<u8>, Vec<AtomHandle>>,
    /// Valid atoms found in a bucket that does not match their hash.
    pub misplaced: usize,
}

impl AuditReport {
    pub fn duplicates(&self) -> impl Iterator<Item = (&[u8], &[AtomHandle])> {
        self.names
            .iter()
            .filter(|(_, hs)| hs.len() > 1)
            .map(|(n, hs)| (n.as_slice(), hs.as_slice()))
    }

    pub fn is_clean(&self) -> bool {
        self.misplaced == 0 && self.duplicates().next().is_none()
    }
}

/// Adds one to the count of `rec` unless it stops being valid.
///
/// `observed` is the reference word the caller last read. Returns false as
/// soon as a reload shows the valid bit cleared.
pub fn bump_ref(rec: &AtomRecord, observed: RefWord) -> bool {
    let mut cur = observed.raw();
    loop {
        assert!(cur & COUNT_MASK != COUNT_MASK, "atom reference count overflow");
        match rec
            .references
            .compare_exchange(cur, cur + 1, Ordering::SeqCst, Ordering::SeqCst)
        {
            Ok(_) => return true,
            Err(actual) => {
                if actual & VALID == 0 {
                    return false;
                }
                cur = actual;
            }
        }
    }
}

/// Clears the thread's published guards on every exit path of a lookup.
struct GuardScope<'a>(&'a ContextShared);

impl Drop for GuardScope<'_> {
    fn drop(&mut self) {
        self.0.bucket_guard.store(0, Ordering::SeqCst);
        self.0.table_snapshot.store(ptr::null_mut(), Ordering::SeqCst);
    }
}

impl AtomTable {
    pub fn new(config: TableConfig) -> Arc<AtomTable> {
        let buckets = config.initial_buckets.max(1).next_power_of_two();
        let first = BucketTable::alloc(buckets).expect("allocating the initial bucket table");
        Arc::new(AtomTable {
            store: AtomArray::new(),
            current: AtomicPtr::new(Box::into_raw(first)),
            live: AtomicUsize::new(0),
            created_since_agc: AtomicUsize::new(0),
            agc: Mutex::new(CollectorState::default()),
            running: AtomicBool::new(false),
            registry: RwLock::new(Vec::new()),
            stats: Mutex::new(AgcStats::default()),
            config,
        })
    }

    pub fn with_defaults() -> Arc<AtomTable> {
        Self::new(TableConfig::default())
    }

    pub fn config(&self) -> &TableConfig {
        &self.config
    }

    pub fn store(&self) -> &AtomArray {
        &self.store
    }

    /// Bucket count of the current generation.
    pub fn buckets(&self) -> usize {
        self.current_table().buckets()
    }

    /// Number of generations reachable from the current one, including it.
    pub fn generations(&self) -> usize {
        let _lock = self.agc_lock();
        let mut n = 0;
        let mut t = self.current.load(Ordering::SeqCst);
        while !t.is_null() {
            n += 1;
            // SAFETY: generations are only freed under the agc lock.
            t = unsafe { &*t }.prev.load(Ordering::SeqCst);
        }
        n
    }

    /// Valid atoms currently linked into the table.
    pub fn live_atoms(&self) -> usize {
        self.live.load(Ordering::SeqCst)
    }

    pub(crate) fn current_table(&self) -> &BucketTable {
        // SAFETY: the current generation is never freed while it is current,
        // and it is only replaced under the agc lock. Callers holding a
        // reference across a resize must hold the lock or a snapshot.
        unsafe { &*self.current.load(Ordering::SeqCst) }
    }

    pub(crate) fn agc_lock(&self) -> std::sync::MutexGuard<'_, CollectorState> {
        self.agc.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn overfull(&self, table: &BucketTable) -> bool {
        self.live.load(Ordering::SeqCst) as f64 > self.config.max_load * table.buckets() as f64
    }

    /// Looks `name` up and inserts it when absent. Returns a handle carrying
    /// one new explicit reference owned by the caller.
    pub(crate) fn intern_in(&self, ctx: &ContextShared, name: &[u8]) -> Result<AtomHandle, AtomError> {
        let handle = self
            .lookup(ctx, name, true)?
            .expect("insert path always yields a handle");
        Ok(handle)
    }

    pub(crate) fn find_in(&self, ctx: &ContextShared, name: &[u8]) -> Option<AtomHandle> {
        self.lookup(ctx, name, false).ok().flatten()
    }

    fn lookup(&self, ctx: &ContextShared, name: &[u8], insert: bool) -> Result<Option<AtomHandle>, AtomError> {
        let key = hash(name);
        let _guards = GuardScope(ctx);
        loop {
            // Publish the generation, then confirm it is still current so
            // the collector cannot have freed it in between.
            let table_ptr = loop {
                let p = self.current.load(Ordering::SeqCst);
                ctx.table_snapshot.store(p, Ordering::SeqCst);
                if self.current.load(Ordering::SeqCst) == p {
                    break p;
                }
            };
            // SAFETY: published in our snapshot and confirmed current.
            let table = unsafe { &*table_ptr };
            let slot = table.slot_for(key);
            ctx.bucket_guard
                .store(slot as *const AtomicUsize as usize, Ordering::SeqCst);
            let head = slot.load(Ordering::SeqCst);
            if head & FROZEN != 0 {
                std::thread::yield_now();
                continue;
            }

            let mut cur = head;
            while let Some(h) = AtomHandle::from_raw(cur) {
                let rec = self.store.record(h);
                if let Some(visit) = &self.config.hooks.on_chain_visit {
                    visit(h);
                }
                let refs = rec.references();
                // SAFETY: valid atom reached under our bucket guard.
                if refs.is_valid() && unsafe { rec.name() } == name && bump_ref(rec, refs) {
                    return Ok(Some(h));
                }
                cur = rec.next.load(Ordering::SeqCst);
            }

            if !insert {
                // A resize may have rewritten the chain under us.
                if self.current.load(Ordering::SeqCst) != table_ptr
                    || slot.load(Ordering::SeqCst) & FROZEN != 0
                {
                    continue;
                }
                return Ok(None);
            }

            if self.overfull(table) {
                self.try_resize();
            }
            if self.current.load(Ordering::SeqCst) != table_ptr || slot.load(Ordering::SeqCst) != head {
                continue;
            }

            let fresh = self.store.reserve_atom()?;
            let rec = self.store.record(fresh);
            rec.set_name(name);
            rec.next.store(head, Ordering::SeqCst);
            if slot
                .compare_exchange(head, fresh.raw(), Ordering::SeqCst, Ordering::SeqCst)
                .is_ok()
            {
                rec.references.store(RESERVED | VALID | 1, Ordering::SeqCst);
                self.live.fetch_add(1, Ordering::SeqCst);
                self.created_since_agc.fetch_add(1, Ordering::Relaxed);
                return Ok(Some(fresh));
            }
            self.store.release_record(fresh)?;
        }
    }

    /// Runs a collection from the interning thread when the creation
    /// threshold is reached and no cycle or resize holds the agc lock.
    ///
    /// If another thread's cycle is in progress and the backlog has reached
    /// twice the threshold, the caller yields once so the collecting thread
    /// can finish. It never waits for the lock.
    pub(crate) fn maybe_trigger_agc(&self) {
        if let Some(threshold) = self.config.agc_trigger {
            let created = self.created_since_agc.load(Ordering::Relaxed);
            if created >= threshold
                && self.try_run_agc().is_none()
                && created >= threshold.saturating_mul(2)
            {
                std::thread::yield_now();
            }
        }
    }

    fn try_resize(&self) {
        if let Ok(_lock) = self.agc.try_lock() {
            // Errors leave the current table in place; the next lookup retries.
            let _ = self.resize_locked();
        }
    }

    /// Doubles the bucket array if the table is still overfull. Returns
    /// whether a new generation was published.
    pub fn resize_atom_table(&self) -> Result<bool, AtomError> {
        let _lock = self.agc_lock();
        self.resize_locked()
    }

    /// Caller holds the agc lock.
    fn resize_locked(&self) -> Result<bool, AtomError> {
        let old_ptr = self.current.load(Ordering::SeqCst);
        // SAFETY: current generation, stable under the agc lock.
        let old = unsafe { &*old_ptr };
        if !self.overfull(old) {
            return Ok(false);
        }
        let new = BucketTable::alloc(old.buckets() * 2)?;

        for slot in old.slots.iter() {
            slot.fetch_or(FROZEN, Ordering::SeqCst);
        }
        // Chains are stable once frozen: no insert can land, and unlinking
        // needs the lock we hold.
        let mut members = Vec::with_capacity(self.live.load(Ordering::Relaxed));
        for slot in old.slots.iter() {
            let mut cur = slot.load(Ordering::SeqCst) & !FROZEN;
            while let Some(h) = AtomHandle::from_raw(cur) {
                let rec = self.store.record(h);
                let refs = rec.references();
                // Valid atoms, plus inserts that won their CAS but have not
                // stored the valid bit yet. Invalidated atoms stay behind.
                if refs.is_valid() || (refs.is_reserved() && !rec.on_invalid_list()) {
                    members.push(h);
                }
                cur = rec.next.load(Ordering::SeqCst);
            }
        }
        for h in members {
            let rec = self.store.record(h);
            // SAFETY: linked atoms keep their names while we hold the lock.
            let key = hash(unsafe { rec.name() });
            let slot = new.slot_for(key);
            rec.next.store(slot.load(Ordering::Relaxed), Ordering::SeqCst);
            slot.store(h.raw(), Ordering::Relaxed);
        }
        new.prev.store(old_ptr, Ordering::SeqCst);
        self.current.store(Box::into_raw(new), Ordering::SeqCst);
        Ok(true)
    }

    /// Adds an explicit reference to a valid atom.
    pub fn register_atom(&self, handle: AtomHandle) -> Result<(), AtomError> {
        let rec = self
            .store
            .slot(handle.index())
            .ok_or(AtomError::NoSuchIndex(handle.index()))?;
        let refs = rec.references();
        if refs.is_valid() && bump_ref(rec, refs) {
            Ok(())
        } else {
            Err(AtomError::StaleHandle(handle))
        }
    }

    /// Copy of the atom's name. The caller must hold a reference on the atom.
    ///
    /// A transient reference is taken while copying, so a stale handle
    /// yields `StaleHandle` or, if the slot was reused, the new occupant's
    /// name, never freed memory.
    pub fn name_of(&self, handle: AtomHandle) -> Result<Vec<u8>, AtomError> {
        let rec = self
            .store
            .slot(handle.index())
            .ok_or(AtomError::NoSuchIndex(handle.index()))?;
        let refs = rec.references();
        if !refs.is_valid() || !bump_ref(rec, refs) {
            return Err(AtomError::StaleHandle(handle));
        }
        // SAFETY: our transient count keeps the atom from being invalidated.
        let name = unsafe { rec.name() }.to_vec();
        self.drop_transient(rec);
        Ok(name)
    }

    /// Undoes a transient count without a thread context. Dropping the
    /// last count marks the atom so it survives the current cycle.
    fn drop_transient(&self, rec: &AtomRecord) {
        let prev = rec.references.fetch_sub(1, Ordering::SeqCst);
        debug_assert!(prev & COUNT_MASK != 0);
        if prev & COUNT_MASK == 1 {
            crate::collector::mark_record(rec);
        }
    }

    /// Walks every chain of the current generation. Intended for quiescent
    /// checks; holds the agc lock for the duration.
    pub fn audit(&self) -> AuditReport {
        let _lock = self.agc_lock();
        let table = self.current_table();
        let mut report = AuditReport::default();
        for (bucket, slot) in table.slots.iter().enumerate() {
            let mut cur = slot.load(Ordering::SeqCst) & !FROZEN;
            while let Some(h) = AtomHandle::from_raw(cur) {
                let rec = self.store.record(h);
                if rec.references().is_valid() {
                    // SAFETY: valid atoms cannot be released while we hold the lock.
                    let name = unsafe { rec.name() };
                    if hash(name) & table.mask != bucket {
                        report.misplaced += 1;
                    }
                    report.valid_atoms += 1;
                    report.names.entry(name.to_vec()).or_default().push(h);
                }
                cur = rec.next.load(Ordering::SeqCst);
            }
        }
        report
    }

    pub fn register_thread(self: &Arc<Self>) -> ThreadContext {
        ThreadContext::register(self)
    }
}

impl Drop for AtomTable {
    fn drop(&mut self) {
        let mut t = *self.current.get_mut();
        while !t.is_null() {
            // SAFETY: every generation was created by `Box::into_raw` and is
            // owned by the prev chain.
            let table = unsafe { Box::from_raw(t) };
            t = table.prev.load(Ordering::Relaxed);
        }
    }
}
