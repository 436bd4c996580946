//! Conservative, concurrent atom garbage collection.
//!
//! A cycle runs under the agc lock and proceeds in four phases:
//!
//! 1. **mark**: with the collector flag set, scan every registered thread's
//!    arenas and unregistering slot, setting the marked bit of anything that
//!    looks like a handle. Interning and arena writes continue meanwhile.
//! 2. **collect**: walk the store; clear marks on marked atoms and
//!    invalidate (CAS off the valid bit) valid atoms with a zero count.
//! 3. **destroy**: unlink invalidated atoms from the bucket chains, snapshot
//!    all bucket guards, and release every atom none of whose possible
//!    buckets is guarded. Guarded atoms wait for a later cycle.
//! 4. **reclaim tables**: free retired bucket generations no thread has
//!    snapshotted.
//!
//! The collect and destroy phases exclude resizing (same lock) but never
//! block lookups.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::sync::atomic::{fence, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use crate::error::AtomError;
use crate::handle::{AtomHandle, RefWord, WordClass, classify_word, COUNT_MASK, MARKED, RESERVED, VALID};
use crate::roots::{ContextShared, ThreadContext};
use crate::store::AtomRecord;
use crate::table::{hash, AtomTable, FROZEN};

/// `next_invalid` value of the last element of the invalid list, so that
/// list membership is simply `next_invalid != 0`.
const LIST_END: usize = 1;

/// State owned by the agc lock.
#[derive(Debug, Default)]
pub(crate) struct CollectorState {
    /// Head of the invalidated-but-not-destroyed list (raw handle, 0 = empty).
    invalid_head: usize,
}

/// Collection statistics. Accumulated per table and returned per cycle.
///
/// `bytes_reclaimed` counts the name payload of each destroyed atom plus the
/// fixed size of its record.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AgcStats {
    pub invocations: u64,
    pub atoms_reclaimed: u64,
    pub bytes_reclaimed: u64,
    pub tables_reclaimed: u64,
    pub mark_time: Duration,
    pub collect_time: Duration,
}

impl AgcStats {
    fn accumulate(&mut self, delta: &AgcStats) {
        self.invocations += delta.invocations;
        self.atoms_reclaimed += delta.atoms_reclaimed;
        self.bytes_reclaimed += delta.bytes_reclaimed;
        self.tables_reclaimed += delta.tables_reclaimed;
        self.mark_time += delta.mark_time;
        self.collect_time += delta.collect_time;
    }

    pub fn total_time(&self) -> Duration {
        self.mark_time + self.collect_time
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AgcPhase {
    /// Entered with the registry latched: thread (de)registration blocks.
    Mark,
    Collect,
    Destroy,
    ReclaimTables,
}

type PhaseHook = Arc<dyn Fn(AgcPhase) + Send + Sync>;
type VisitHook = Arc<dyn Fn(AtomHandle) + Send + Sync>;
type InvalidateHook = Arc<dyn Fn(AtomHandle, RefWord) + Send + Sync>;
type CycleHook = Arc<dyn Fn(&AgcStats) + Send + Sync>;

/// Observation and fault-injection points.
#[derive(Clone, Default)]
pub struct Hooks {
    /// Called by the collector at the start of each phase.
    pub on_phase: Option<PhaseHook>,
    /// Called by lookups for every chain entry they visit.
    pub on_chain_visit: Option<VisitHook>,
    /// Called after a successful invalidation with the word it replaced.
    pub on_invalidate: Option<InvalidateHook>,
    /// Called at the end of every cycle with that cycle's statistics.
    pub on_cycle: Option<CycleHook>,
}

impl fmt::Debug for Hooks {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Hooks")
            .field("on_phase", &self.on_phase.is_some())
            .field("on_chain_visit", &self.on_chain_visit.is_some())
            .field("on_invalidate", &self.on_invalidate.is_some())
            .field("on_cycle", &self.on_cycle.is_some())
            .finish()
    }
}

/// Bucket-slot and generation identities published by all threads at one
/// point in time.
#[derive(Debug, Default)]
pub struct GuardSet {
    buckets: HashSet<usize>,
    tables: HashSet<usize>,
}

impl GuardSet {
    pub fn bucket_count(&self) -> usize {
        self.buckets.len()
    }
}

/// Sets the marked bit of a reserved record. Returns whether the record is
/// now marked.
pub(crate) fn mark_record(rec: &AtomRecord) -> bool {
    let mut cur = rec.references.load(Ordering::SeqCst);
    loop {
        if cur & RESERVED == 0 {
            return false;
        }
        if cur & MARKED != 0 {
            return true;
        }
        match rec
            .references
            .compare_exchange(cur, cur | MARKED, Ordering::SeqCst, Ordering::SeqCst)
        {
            Ok(_) => return true,
            Err(actual) => cur = actual,
        }
    }
}

impl AtomTable {
    /// Runs one collection cycle in the calling thread and returns its
    /// statistics. Returns zeroed statistics at once if a cycle is already
    /// in progress.
    pub fn run_agc(&self) -> AgcStats {
        if self.running.load(Ordering::SeqCst) {
            return AgcStats::default();
        }
        let mut state = self.agc_lock();
        self.cycle(&mut state)
    }

    /// Like [`run_agc`](Self::run_agc) but gives up if the agc lock is busy.
    pub(crate) fn try_run_agc(&self) -> Option<AgcStats> {
        if self.running.load(Ordering::SeqCst) {
            return None;
        }
        let mut state = self.agc.try_lock().ok()?;
        Some(self.cycle(&mut state))
    }

    /// Accumulated statistics over the table's lifetime.
    pub fn agc_stats(&self) -> AgcStats {
        *self.stats.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn agc_running(&self) -> bool {
        self.running.load(Ordering::SeqCst)
    }

    fn phase(&self, phase: AgcPhase) {
        if let Some(hook) = &self.config.hooks.on_phase {
            hook(phase);
        }
    }

    fn cycle(&self, state: &mut CollectorState) -> AgcStats {
        if self.running.load(Ordering::SeqCst) {
            return AgcStats::default();
        }
        self.running.store(true, Ordering::SeqCst);
        self.created_since_agc.store(0, Ordering::Relaxed);
        let mut delta = AgcStats {
            invocations: 1,
            ..AgcStats::default()
        };

        let started = Instant::now();
        {
            let registry = self.registry.read().unwrap_or_else(|e| e.into_inner());
            self.phase(AgcPhase::Mark);
            for ctx in registry.iter() {
                self.mark_volatile(ctx);
            }
        }
        delta.mark_time = started.elapsed();

        let started = Instant::now();
        self.phase(AgcPhase::Collect);
        self.collect_phase(state);
        self.phase(AgcPhase::Destroy);
        let (atoms, bytes) = self.destroy_atoms(state);
        delta.atoms_reclaimed = atoms as u64;
        delta.bytes_reclaimed = bytes as u64;
        self.phase(AgcPhase::ReclaimTables);
        delta.tables_reclaimed = self.reclaim_tables() as u64;
        delta.collect_time = started.elapsed();

        self.running.store(false, Ordering::SeqCst);
        self.stats
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .accumulate(&delta);
        if let Some(hook) = &self.config.hooks.on_cycle {
            hook(&delta);
        }
        delta
    }

    /// Marks every atom-like word in the thread's arenas, each arena under
    /// its relocation lock, and the thread's unregistering slot.
    pub(crate) fn mark_volatile(&self, ctx: &ContextShared) {
        let max_index = self.store.highest_index();
        for arena in ctx.arenas() {
            arena.scan(|word| {
                if let WordClass::AtomLike(index) = classify_word(word, max_index) {
                    if let Some(rec) = self.store.slot(index) {
                        mark_record(rec);
                    }
                }
            });
        }
        self.mark_unregistering(ctx);
    }

    fn mark_unregistering(&self, ctx: &ContextShared) {
        if let Some(h) = AtomHandle::from_raw(ctx.unregistering.load(Ordering::SeqCst)) {
            if let Some(rec) = self.store.slot(h.index()) {
                mark_record(rec);
            }
        }
    }

    fn collect_phase(&self, state: &mut CollectorState) {
        let highest = self.store.highest_index();
        for index in 1..=highest {
            let rec = self.store.slot(index).expect("published index");
            let mut cur = rec.references.load(Ordering::SeqCst);
            loop {
                if cur & MARKED != 0 {
                    match rec.references.compare_exchange(
                        cur,
                        cur & !MARKED,
                        Ordering::SeqCst,
                        Ordering::SeqCst,
                    ) {
                        Ok(_) => break,
                        Err(actual) => {
                            cur = actual;
                            continue;
                        }
                    }
                }
                if cur & VALID != 0 && cur & COUNT_MASK == 0 {
                    let h = AtomHandle::from_index(index).expect("published index");
                    // a lost CAS means a lookup or marker got there first
                    self.invalidate_atom(state, h, RefWord::from_raw(cur));
                }
                break;
            }
        }
    }

    /// Clears the valid bit with a single CAS against `observed` and puts
    /// the atom on the invalid list. Fails if the word changed.
    pub(crate) fn invalidate_atom(&self, state: &mut CollectorState, handle: AtomHandle, observed: RefWord) -> bool {
        let rec = self.store.record(handle);
        let cleared = observed.raw() & !VALID;
        if rec
            .references
            .compare_exchange(observed.raw(), cleared, Ordering::SeqCst, Ordering::SeqCst)
            .is_err()
        {
            return false;
        }
        let next = if state.invalid_head == 0 { LIST_END } else { state.invalid_head };
        rec.next_invalid.store(next, Ordering::SeqCst);
        state.invalid_head = handle.raw();
        self.live.fetch_sub(1, Ordering::SeqCst);
        if let Some(hook) = &self.config.hooks.on_invalidate {
            hook(handle, observed);
        }
        true
    }

    fn invalid_list(&self, state: &CollectorState) -> Vec<AtomHandle> {
        let mut out = Vec::new();
        let mut cur = state.invalid_head;
        while let Some(h) = AtomHandle::from_raw(cur) {
            out.push(h);
            cur = self.store.record(h).next_invalid.load(Ordering::SeqCst);
        }
        out
    }

    fn set_invalid_list(&self, state: &mut CollectorState, atoms: &[AtomHandle]) {
        let mut next = LIST_END;
        for h in atoms.iter().rev() {
            self.store.record(*h).next_invalid.store(next, Ordering::SeqCst);
            next = h.raw();
        }
        state.invalid_head = if atoms.is_empty() { 0 } else { next };
    }

    /// Snapshot of every thread's bucket guard and table snapshot.
    pub(crate) fn collect_guards(&self) -> GuardSet {
        let registry = self.registry.read().unwrap_or_else(|e| e.into_inner());
        let mut guards = GuardSet::default();
        for ctx in registry.iter() {
            let bucket = ctx.bucket_guard.load(Ordering::SeqCst);
            if bucket != 0 {
                guards.buckets.insert(bucket);
            }
            let table = ctx.table_snapshot.load(Ordering::SeqCst);
            if !table.is_null() {
                guards.tables.insert(table as usize);
            }
        }
        guards
    }

    /// Destroys every invalidated atom whose buckets are unguarded. Returns
    /// the number of atoms destroyed and the bytes reclaimed.
    fn destroy_atoms(&self, state: &mut CollectorState) -> (usize, usize) {
        let listed = self.invalid_list(state);
        if listed.is_empty() {
            return (0, 0);
        }
        // Unlink before taking the guard snapshot: a thread that publishes a
        // guard after the snapshot reads its bucket head after the unlink
        // and cannot reach these atoms.
        for &h in &listed {
            let key = self.key_of(h);
            self.unlink(h, key);
        }
        fence(Ordering::SeqCst);
        let guards = self.collect_guards();

        let mut destroyed = 0;
        let mut bytes = 0;
        let mut survivors = Vec::new();
        for h in listed {
            match self.destroy_atom(h, &guards) {
                Some(freed) => {
                    destroyed += 1;
                    bytes += freed;
                }
                None => survivors.push(h),
            }
        }
        self.set_invalid_list(state, &survivors);
        (destroyed, bytes)
    }

    fn key_of(&self, h: AtomHandle) -> usize {
        // SAFETY: invalidated atoms keep their name until destroyed, which
        // only happens under the agc lock our caller holds.
        hash(unsafe { self.store.record(h).name() })
    }

    /// Releases one invalidated atom unless a thread guards the bucket it
    /// maps to in any live generation. Returns the bytes reclaimed.
    pub(crate) fn destroy_atom(&self, h: AtomHandle, guards: &GuardSet) -> Option<usize> {
        let key = self.key_of(h);
        let mut t = self.current.load(Ordering::SeqCst);
        while !t.is_null() {
            // SAFETY: generations are freed only under the agc lock.
            let table = unsafe { &*t };
            let slot = table.slot_for(key) as *const _ as usize;
            if guards.buckets.contains(&slot) {
                return None;
            }
            t = table.prev.load(Ordering::SeqCst);
        }
        self.unlink(h, key);
        let name_len = self
            .store
            .release_record(h)
            .expect("invalidated atoms are releasable");
        Some(name_len + std::mem::size_of::<AtomRecord>())
    }

    /// Removes `h` from its chain in the current generation and from the
    /// frozen head slots of older ones. No-op where it is not linked.
    pub(crate) fn unlink(&self, h: AtomHandle, key: usize) {
        let rec = self.store.record(h);
        let table = self.current_table();
        let slot = table.slot_for(key);
        loop {
            let head = slot.load(Ordering::SeqCst);
            if head == h.raw() {
                let next = rec.next.load(Ordering::SeqCst);
                if slot
                    .compare_exchange(head, next, Ordering::SeqCst, Ordering::SeqCst)
                    .is_ok()
                {
                    break;
                }
                // an insert landed on top of us; retry from the new head
                continue;
            }
            let mut cur = head;
            while let Some(c) = AtomHandle::from_raw(cur) {
                let crec = self.store.record(c);
                let next = crec.next.load(Ordering::SeqCst);
                if next == h.raw() {
                    crec.next
                        .store(rec.next.load(Ordering::SeqCst), Ordering::SeqCst);
                    break;
                }
                cur = next;
            }
            break;
        }
        let mut t = table.prev.load(Ordering::SeqCst);
        while !t.is_null() {
            // SAFETY: generations are freed only under the agc lock.
            let old = unsafe { &*t };
            let slot = old.slot_for(key);
            if slot.load(Ordering::SeqCst) & !FROZEN == h.raw() {
                slot.store(rec.next.load(Ordering::SeqCst) | FROZEN, Ordering::SeqCst);
            }
            t = old.prev.load(Ordering::SeqCst);
        }
    }

    /// Frees retired generations that no thread has snapshotted. The
    /// current generation is never freed.
    fn reclaim_tables(&self) -> usize {
        let guards = self.collect_guards();
        let current = self.current_table();
        let mut link = &current.prev;
        let mut freed = 0;
        let mut t = link.load(Ordering::SeqCst);
        while !t.is_null() {
            // SAFETY: retired generations are owned by the prev chain and
            // only touched under the agc lock.
            let older = unsafe { &*t }.prev.load(Ordering::SeqCst);
            if guards.tables.contains(&(t as usize)) {
                link = &unsafe { &*t }.prev;
            } else {
                link.store(older, Ordering::SeqCst);
                drop(unsafe { Box::from_raw(t) });
                freed += 1;
            }
            t = older;
        }
        freed
    }

    /// Number of atoms invalidated but not yet destroyed.
    pub fn pending_invalid(&self) -> usize {
        let state = self.agc_lock();
        self.invalid_list(&state).len()
    }

    pub fn references(&self, h: AtomHandle) -> Result<RefWord, AtomError> {
        self.store
            .slot(h.index())
            .map(|r| r.references())
            .ok_or(AtomError::NoSuchIndex(h.index()))
    }

    /// Straight-line mark and sweep for a single-threaded table, used as an
    /// oracle for [`run_agc`](Self::run_agc). Returns the reclaimed handles.
    pub fn oracle_agc_single_threaded(&self) -> Result<BTreeSet<AtomHandle>, AtomError> {
        let _state = self.agc_lock();
        let registry = self.registry.read().unwrap_or_else(|e| e.into_inner());
        if registry.len() > 1 {
            return Err(AtomError::TooManyThreads(registry.len()));
        }
        let highest = self.store.highest_index();

        // mark
        for ctx in registry.iter() {
            for arena in ctx.arenas() {
                arena.scan(|word| {
                    if word & 0b111 == 0b101 {
                        let index = word >> 3;
                        if (1..=highest).contains(&index) {
                            let rec = self.store.slot(index).unwrap();
                            let refs = rec.references.load(Ordering::SeqCst);
                            if refs & RESERVED != 0 {
                                rec.references.store(refs | MARKED, Ordering::SeqCst);
                            }
                        }
                    }
                });
            }
        }

        // sweep
        let mut reclaimed = BTreeSet::new();
        for index in 1..=highest {
            let rec = self.store.slot(index).unwrap();
            let refs = rec.references.load(Ordering::SeqCst);
            if refs & VALID == 0 {
                continue;
            }
            if refs & (MARKED | COUNT_MASK) == 0 {
                let h = AtomHandle::from_index(index)?;
                rec.references.store(refs & !VALID, Ordering::SeqCst);
                self.live.fetch_sub(1, Ordering::SeqCst);
                let key = self.key_of(h);
                self.unlink(h, key);
                self.store.release_record(h)?;
                reclaimed.insert(h);
            } else {
                rec.references.store(refs & !MARKED, Ordering::SeqCst);
            }
        }
        Ok(reclaimed)
    }

    // Single steps of the collector, for scripted interleaving tests.

    #[doc(hidden)]
    pub fn set_agc_running(&self, running: bool) {
        self.running.store(running, Ordering::SeqCst);
    }

    #[doc(hidden)]
    pub fn mark_unregistering_of(&self, ctx: &ThreadContext) {
        self.mark_unregistering(ctx.shared());
    }

    /// Invalidation step under the agc lock.
    #[doc(hidden)]
    pub fn invalidate_observed(&self, h: AtomHandle, observed: RefWord) -> bool {
        let mut state = self.agc_lock();
        self.invalidate_atom(&mut state, h, observed)
    }

    /// Bare count decrement, without the unregistering hand-off.
    #[doc(hidden)]
    pub fn decrement_count(&self, h: AtomHandle) -> Result<(), AtomError> {
        let rec = self
            .store
            .slot(h.index())
            .ok_or(AtomError::NoSuchIndex(h.index()))?;
        let mut cur = rec.references.load(Ordering::SeqCst);
        loop {
            if cur & COUNT_MASK == 0 {
                return Err(AtomError::CountUnderflow(h));
            }
            match rec
                .references
                .compare_exchange(cur, cur - 1, Ordering::SeqCst, Ordering::SeqCst)
            {
                Ok(_) => return Ok(()),
                Err(actual) => cur = actual,
            }
        }
    }

    #[doc(hidden)]
    pub fn bump_observed(&self, h: AtomHandle, observed: RefWord) -> bool {
        crate::table::bump_ref(self.store.record(h), observed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::roots::ArenaId;
    use crate::table::TableConfig;
    use std::sync::atomic::AtomicBool;
    use std::sync::mpsc;

    fn table() -> Arc<AtomTable> {
        AtomTable::new(TableConfig::manual())
    }

    #[test]
    fn empty_table_cycle_is_zero() {
        let table = table();
        let delta = table.run_agc();
        assert_eq!(delta.invocations, 1);
        assert_eq!(delta.atoms_reclaimed, 0);
        assert!(!table.agc_running());
    }

    #[test]
    fn unreferenced_atom_is_reclaimed() {
        let table = table();
        let ctx = table.register_thread();
        let h = ctx.intern(b"lonely").unwrap();
        ctx.unregister_atom(h).unwrap();
        let delta = table.run_agc();
        assert_eq!(delta.atoms_reclaimed, 1);
        assert_eq!(
            delta.bytes_reclaimed as usize,
            6 + std::mem::size_of::<AtomRecord>()
        );
        assert!(table.references(h).unwrap().is_free());
        assert_eq!(ctx.find_existing(b"lonely"), None);
        assert_eq!(table.agc_stats().atoms_reclaimed, 1);
    }

    #[test]
    fn referenced_and_arena_atoms_survive() {
        let table = table();
        let ctx = table.register_thread();
        let counted = ctx.intern(b"counted").unwrap();
        table.register_atom(counted).unwrap();
        table.register_atom(counted).unwrap();
        let scanned = ctx.intern(b"scanned").unwrap();
        ctx.arena_push(ArenaId::DEFAULT, scanned.raw()).unwrap();
        ctx.unregister_atom(scanned).unwrap();
        assert_eq!(table.run_agc().atoms_reclaimed, 0);
        assert_eq!(table.references(counted).unwrap().count(), 3);
        let refs = table.references(scanned).unwrap();
        assert!(refs.is_valid() && !refs.is_marked());
    }

    #[test]
    fn accidental_bit_pattern_keeps_atom_alive() {
        let table = table();
        let ctx = table.register_thread();
        let h = ctx.intern(b"lucky").unwrap();
        ctx.unregister_atom(h).unwrap();
        // a "float" whose bits happen to carry the tag and a live index
        let float_bits = f64::from_bits(h.raw() as u64).to_bits() as usize;
        ctx.arena_push(ArenaId::DEFAULT, float_bits).unwrap();
        assert_eq!(table.run_agc().atoms_reclaimed, 0);
        assert!(table.references(h).unwrap().is_valid());
    }

    #[test]
    fn unregistering_slot_is_marked() {
        let table = table();
        let ctx = table.register_thread();
        let h = ctx.intern(b"handoff").unwrap();
        ctx.unregister_atom(h).unwrap();
        ctx.publish_unregistering(h);
        assert_eq!(table.run_agc().atoms_reclaimed, 0);
        ctx.clear_unregistering_if_idle();
        assert_eq!(table.run_agc().atoms_reclaimed, 1);
    }

    #[test]
    fn invalidate_examples() {
        let table = table();
        let ctx = table.register_thread();
        let h = ctx.intern(b"inv").unwrap();
        ctx.unregister_atom(h).unwrap();
        let observed = table.references(h).unwrap();
        assert!(table.invalidate_observed(h, observed));
        let now = table.references(h).unwrap();
        assert!(!now.is_valid() && now.is_reserved());
        assert_eq!(table.pending_invalid(), 1);

        // lookup bumps between observation and CAS: invalidation loses
        let g = ctx.intern(b"race").unwrap();
        ctx.unregister_atom(g).unwrap();
        let seen = table.references(g).unwrap();
        assert!(table.bump_observed(g, seen));
        assert!(!table.invalidate_observed(g, seen));
        assert!(table.references(g).unwrap().is_valid());
    }

    #[test]
    fn invalidated_name_gets_fresh_atom() {
        let table = table();
        let ctx = table.register_thread();
        let h = ctx.intern(b"phoenix").unwrap();
        ctx.unregister_atom(h).unwrap();
        assert!(table.invalidate_observed(h, table.references(h).unwrap()));
        let fresh = ctx.intern(b"phoenix").unwrap();
        assert_ne!(fresh, h);
        // both records exist until the next destroy pass
        assert!(table.references(h).unwrap().is_reserved());
        assert_eq!(table.run_agc().atoms_reclaimed, 1);
        assert_eq!(table.name_of(fresh).unwrap(), b"phoenix");
        assert!(table.audit().is_clean());
    }

    #[test]
    fn destroy_respects_guards_in_every_generation() {
        let table = AtomTable::new(TableConfig {
            initial_buckets: 2,
            ..TableConfig::manual()
        });
        let ctx = table.register_thread();
        let hs: Vec<_> = (0..8).map(|i| ctx.intern(format!("g{i}").as_bytes()).unwrap()).collect();
        assert!(table.generations() >= 2);
        let victim = hs[3];
        ctx.unregister_atom(victim).unwrap();
        let key = hash(b"g3");
        let mut state = table.agc_lock();
        assert!(table.invalidate_atom(&mut state, victim, table.references(victim).unwrap()));

        // guard on the victim's bucket in the oldest generation only
        let mut oldest = table.current.load(Ordering::SeqCst);
        loop {
            let prev = unsafe { &*oldest }.prev.load(Ordering::SeqCst);
            if prev.is_null() {
                break;
            }
            oldest = prev;
        }
        let old_slot = unsafe { &*oldest }.slot_for(key) as *const _ as usize;
        let mut guards = GuardSet::default();
        guards.buckets.insert(old_slot);
        assert_eq!(table.destroy_atom(victim, &guards), None);

        // a guard on a different bucket does not matter
        let cur = table.current_table();
        let other = cur.slot_for(key.wrapping_add(1)) as *const _ as usize;
        let mut guards = GuardSet::default();
        guards.buckets.insert(other);
        assert!(table.destroy_atom(victim, &guards).is_some());
        assert!(table.references(victim).unwrap().is_free());
        drop(state);
    }

    #[test]
    fn retired_generations_are_reclaimed_unless_snapshotted() {
        let table = AtomTable::new(TableConfig {
            initial_buckets: 2,
            ..TableConfig::manual()
        });
        let ctx = table.register_thread();
        for i in 0..8 {
            ctx.intern(format!("t{i}").as_bytes()).unwrap();
        }
        let gens = table.generations();
        assert!(gens >= 2);

        // pin the oldest generation through the thread's snapshot
        let mut oldest = table.current.load(Ordering::SeqCst);
        loop {
            let prev = unsafe { &*oldest }.prev.load(Ordering::SeqCst);
            if prev.is_null() {
                break;
            }
            oldest = prev;
        }
        ctx.shared().table_snapshot.store(oldest, Ordering::SeqCst);
        let delta = table.run_agc();
        assert_eq!(delta.tables_reclaimed as usize, gens - 2);
        assert_eq!(table.generations(), 2);
        ctx.shared().table_snapshot.store(std::ptr::null_mut(), Ordering::SeqCst);
        assert_eq!(table.run_agc().tables_reclaimed, 1);
        assert_eq!(table.generations(), 1);
    }

    #[test]
    fn reentrant_run_returns_immediately() {
        let table_slot: Arc<std::sync::OnceLock<std::sync::Weak<AtomTable>>> = Arc::default();
        let inner_result = Arc::new(std::sync::Mutex::new(None));
        let hook_slot = Arc::clone(&table_slot);
        let hook_result = Arc::clone(&inner_result);
        let table = AtomTable::new(TableConfig {
            hooks: Hooks {
                on_phase: Some(Arc::new(move |phase| {
                    if phase == AgcPhase::Collect {
                        let t = hook_slot.get().unwrap().upgrade().unwrap();
                        *hook_result.lock().unwrap() = Some(t.run_agc());
                    }
                })),
                ..Hooks::default()
            },
            ..TableConfig::manual()
        });
        table_slot.set(Arc::downgrade(&table)).unwrap();
        let delta = table.run_agc();
        assert_eq!(delta.invocations, 1);
        assert_eq!(inner_result.lock().unwrap().unwrap(), AgcStats::default());
        assert_eq!(table.agc_stats().invocations, 1);
    }

    #[test]
    fn registration_blocks_during_mark() {
        let (entered_tx, entered_rx) = mpsc::channel();
        let (release_tx, release_rx) = mpsc::channel::<()>();
        let release_rx = std::sync::Mutex::new(release_rx);
        let table = AtomTable::new(TableConfig {
            hooks: Hooks {
                on_phase: Some(Arc::new(move |phase| {
                    if phase == AgcPhase::Mark {
                        entered_tx.send(()).unwrap();
                        release_rx.lock().unwrap().recv().unwrap();
                    }
                })),
                ..Hooks::default()
            },
            ..TableConfig::manual()
        });
        let collector = {
            let table = Arc::clone(&table);
            std::thread::spawn(move || table.run_agc())
        };
        entered_rx.recv().unwrap();
        let registered = Arc::new(AtomicBool::new(false));
        let registrar = {
            let table = Arc::clone(&table);
            let registered = Arc::clone(&registered);
            std::thread::spawn(move || {
                let ctx = table.register_thread();
                registered.store(true, Ordering::SeqCst);
                drop(ctx);
            })
        };
        std::thread::sleep(Duration::from_millis(100));
        assert!(!registered.load(Ordering::SeqCst));
        release_tx.send(()).unwrap();
        registrar.join().unwrap();
        assert!(registered.load(Ordering::SeqCst));
        collector.join().unwrap();
    }

    #[test]
    fn oracle_rejects_multiple_threads() {
        let table = table();
        let _a = table.register_thread();
        let _b = table.register_thread();
        assert_eq!(table.oracle_agc_single_threaded(), Err(AtomError::TooManyThreads(2)));
    }

    #[test]
    fn oracle_examples() {
        let table = table();
        let ctx = table.register_thread();
        let loose = ctx.intern(b"loose").unwrap();
        ctx.unregister_atom(loose).unwrap();
        let held = ctx.intern(b"held").unwrap();
        table.register_atom(held).unwrap();
        table.register_atom(held).unwrap();
        let stacked = ctx.intern(b"stacked").unwrap();
        ctx.arena_push(ArenaId::DEFAULT, stacked.raw()).unwrap();
        ctx.unregister_atom(stacked).unwrap();
        let reclaimed = table.oracle_agc_single_threaded().unwrap();
        assert_eq!(reclaimed, BTreeSet::from([loose]));
        assert!(!table.references(stacked).unwrap().is_marked());
        assert_eq!(table.references(held).unwrap().count(), 3);
    }
}
