//! C ABI for the atom table.
//!
//! Tables and thread contexts are opaque pointers. Every fallible call
//! returns an [`AtomtabStatus`]; results go through out-pointers. Handles
//! are passed as their raw word value.
//!
//! A thread context must only be used by one thread at a time, and must be
//! deregistered before its table is freed.

use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;

use atomtab::{AgcStats, ArenaId, AtomError, AtomHandle, AtomTable, TableConfig, ThreadContext};

/// Opaque table handle.
pub struct AtomtabTable {
    inner: Arc<AtomTable>,
}

/// Opaque per-thread context.
pub struct AtomtabThread {
    inner: ThreadContext,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AtomtabStatus {
    Ok = 0,
    NullArgument,
    NotFound,
    BufferTooSmall,
    IndexOutOfRange,
    CountOverflow,
    NoSuchIndex,
    CapacityExhausted,
    StaleHandle,
    CountUnderflow,
    ContractViolation,
    UnknownThread,
    NoSuchArena,
    SlotOutOfBounds,
    EmptyArena,
    TooManyThreads,
    InvalidHandle,
    Panic,
}

impl From<&AtomError> for AtomtabStatus {
    fn from(e: &AtomError) -> Self {
        match e {
            AtomError::IndexOutOfRange(_) => AtomtabStatus::IndexOutOfRange,
            AtomError::CountOverflow(_) => AtomtabStatus::CountOverflow,
            AtomError::NoSuchIndex(_) => AtomtabStatus::NoSuchIndex,
            AtomError::CapacityExhausted => AtomtabStatus::CapacityExhausted,
            AtomError::StaleHandle(_) => AtomtabStatus::StaleHandle,
            AtomError::CountUnderflow(_) => AtomtabStatus::CountUnderflow,
            AtomError::ContractViolation(_) => AtomtabStatus::ContractViolation,
            AtomError::UnknownThread => AtomtabStatus::UnknownThread,
            AtomError::NoSuchArena(_) => AtomtabStatus::NoSuchArena,
            AtomError::SlotOutOfBounds { .. } => AtomtabStatus::SlotOutOfBounds,
            AtomError::EmptyArena => AtomtabStatus::EmptyArena,
            AtomError::TooManyThreads(_) => AtomtabStatus::TooManyThreads,
        }
    }
}

/// Collection statistics, times in nanoseconds.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AtomtabAgcStats {
    pub invocations: u64,
    pub atoms_reclaimed: u64,
    pub bytes_reclaimed: u64,
    pub tables_reclaimed: u64,
    pub mark_ns: u64,
    pub collect_ns: u64,
}

impl From<AgcStats> for AtomtabAgcStats {
    fn from(s: AgcStats) -> Self {
        AtomtabAgcStats {
            invocations: s.invocations,
            atoms_reclaimed: s.atoms_reclaimed,
            bytes_reclaimed: s.bytes_reclaimed,
            tables_reclaimed: s.tables_reclaimed,
            mark_ns: s.mark_time.as_nanos() as u64,
            collect_ns: s.collect_time.as_nanos() as u64,
        }
    }
}

/// Runs `f`, mapping library errors and panics to status codes.
fn guarded(f: impl FnOnce() -> Result<(), AtomtabStatus>) -> AtomtabStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AtomtabStatus::Ok,
        Ok(Err(status)) => status,
        Err(_) => AtomtabStatus::Panic,
    }
}

fn lib<T>(r: Result<T, AtomError>) -> Result<T, AtomtabStatus> {
    r.map_err(|e| AtomtabStatus::from(&e))
}

unsafe fn table_ref<'a>(table: *const AtomtabTable) -> Result<&'a AtomtabTable, AtomtabStatus> {
    table.as_ref().ok_or(AtomtabStatus::NullArgument)
}

unsafe fn thread_ref<'a>(thread: *const AtomtabThread) -> Result<&'a AtomtabThread, AtomtabStatus> {
    thread.as_ref().ok_or(AtomtabStatus::NullArgument)
}

unsafe fn bytes<'a>(name: *const u8, len: usize) -> Result<&'a [u8], AtomtabStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if name.is_null() {
        return Err(AtomtabStatus::NullArgument);
    }
    Ok(std::slice::from_raw_parts(name, len))
}

fn handle(raw: usize) -> Result<AtomHandle, AtomtabStatus> {
    AtomHandle::from_raw(raw).ok_or(AtomtabStatus::InvalidHandle)
}

unsafe fn write<T>(out: *mut T, value: T) -> Result<(), AtomtabStatus> {
    if out.is_null() {
        return Err(AtomtabStatus::NullArgument);
    }
    out.write(value);
    Ok(())
}

/// Creates a table. `initial_buckets` of 0 picks the default;
/// `agc_trigger` of 0 disables automatic collection, otherwise a cycle runs
/// after that many atoms were created. Returns NULL on failure.
#[no_mangle]
pub extern "C" fn atomtab_table_new(initial_buckets: usize, agc_trigger: usize) -> *mut AtomtabTable {
    catch_unwind(|| {
        let defaults = TableConfig::default();
        let config = TableConfig {
            initial_buckets: if initial_buckets == 0 { defaults.initial_buckets } else { initial_buckets },
            agc_trigger: (agc_trigger != 0).then_some(agc_trigger),
            ..defaults
        };
        Box::into_raw(Box::new(AtomtabTable {
            inner: AtomTable::new(config),
        }))
    })
    .unwrap_or(ptr::null_mut())
}

/// Frees a table. NULL is ignored.
///
/// # Safety
/// `table` must come from `atomtab_table_new` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn atomtab_table_free(table: *mut AtomtabTable) {
    if !table.is_null() {
        drop(Box::from_raw(table));
    }
}

/// Registers the calling thread. Returns NULL on failure.
///
/// # Safety
/// `table` must be a live table.
#[no_mangle]
pub unsafe extern "C" fn atomtab_thread_register(table: *const AtomtabTable) -> *mut AtomtabThread {
    let Some(table) = table.as_ref() else {
        return ptr::null_mut();
    };
    catch_unwind(AssertUnwindSafe(|| {
        Box::into_raw(Box::new(AtomtabThread {
            inner: table.inner.register_thread(),
        }))
    }))
    .unwrap_or(ptr::null_mut())
}

/// Deregisters and frees a thread context.
///
/// # Safety
/// `thread` must come from `atomtab_thread_register` and not be used
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn atomtab_thread_deregister(thread: *mut AtomtabThread) -> AtomtabStatus {
    if thread.is_null() {
        return AtomtabStatus::NullArgument;
    }
    let thread = Box::from_raw(thread);
    guarded(|| {
        let table = Arc::clone(thread.inner.table());
        lib(table.deregister_thread(thread.inner))
    })
}

/// Interns `len` bytes at `name`. The handle written to `out_handle`
/// carries one reference owned by the caller.
///
/// # Safety
/// `thread` must be live; `name` must point to `len` readable bytes.
#[no_mangle]
pub unsafe extern "C" fn atomtab_intern(
    thread: *const AtomtabThread,
    name: *const u8,
    len: usize,
    out_handle: *mut usize,
) -> AtomtabStatus {
    guarded(|| {
        let thread = thread_ref(thread)?;
        let h = lib(thread.inner.intern(bytes(name, len)?))?;
        write(out_handle, h.raw())
    })
}

/// Looks a name up without creating it. Returns `NotFound` when absent; on
/// success the handle carries one reference owned by the caller.
///
/// # Safety
/// As for `atomtab_intern`.
#[no_mangle]
pub unsafe extern "C" fn atomtab_find_existing(
    thread: *const AtomtabThread,
    name: *const u8,
    len: usize,
    out_handle: *mut usize,
) -> AtomtabStatus {
    guarded(|| {
        let thread = thread_ref(thread)?;
        match thread.inner.find_existing(bytes(name, len)?) {
            Some(h) => write(out_handle, h.raw()),
            None => Err(AtomtabStatus::NotFound),
        }
    })
}

/// Adds one reference to a valid atom.
///
/// # Safety
/// `table` must be live.
#[no_mangle]
pub unsafe extern "C" fn atomtab_register_atom(table: *const AtomtabTable, handle_raw: usize) -> AtomtabStatus {
    guarded(|| lib(table_ref(table)?.inner.register_atom(handle(handle_raw)?)))
}

/// Drops one reference.
///
/// # Safety
/// `thread` must be live.
#[no_mangle]
pub unsafe extern "C" fn atomtab_unregister_atom(thread: *const AtomtabThread, handle_raw: usize) -> AtomtabStatus {
    guarded(|| lib(thread_ref(thread)?.inner.unregister_atom(handle(handle_raw)?)))
}

/// Copies the atom's name into `buf`. The name length is always written to
/// `out_len`; if it exceeds `cap`, nothing is copied and `BufferTooSmall`
/// is returned.
///
/// # Safety
/// `table` must be live; `buf` must be writable for `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn atomtab_name(
    table: *const AtomtabTable,
    handle_raw: usize,
    buf: *mut u8,
    cap: usize,
    out_len: *mut usize,
) -> AtomtabStatus {
    guarded(|| {
        let name = lib(table_ref(table)?.inner.name_of(handle(handle_raw)?))?;
        write(out_len, name.len())?;
        if name.len() > cap {
            return Err(AtomtabStatus::BufferTooSmall);
        }
        if !name.is_empty() {
            if buf.is_null() {
                return Err(AtomtabStatus::NullArgument);
            }
            ptr::copy_nonoverlapping(name.as_ptr(), buf, name.len());
        }
        Ok(())
    })
}

/// Appends a word to the thread's default scan arena.
///
/// # Safety
/// `thread` must be live; `out_slot` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn atomtab_arena_push(
    thread: *const AtomtabThread,
    word: usize,
    out_slot: *mut usize,
) -> AtomtabStatus {
    guarded(|| {
        let slot = lib(thread_ref(thread)?.inner.arena_push(ArenaId::DEFAULT, word))?;
        if !out_slot.is_null() {
            out_slot.write(slot);
        }
        Ok(())
    })
}

/// Removes the last word of the default scan arena.
///
/// # Safety
/// `thread` must be live; `out_word` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn atomtab_arena_pop(thread: *const AtomtabThread, out_word: *mut usize) -> AtomtabStatus {
    guarded(|| {
        let word = lib(thread_ref(thread)?.inner.arena_pop(ArenaId::DEFAULT))?;
        if !out_word.is_null() {
            out_word.write(word);
        }
        Ok(())
    })
}

/// Runs one collection cycle in the calling thread. `out_stats`, if not
/// NULL, receives the cycle's statistics.
///
/// # Safety
/// `table` must be live.
#[no_mangle]
pub unsafe extern "C" fn atomtab_run_agc(table: *const AtomtabTable, out_stats: *mut AtomtabAgcStats) -> AtomtabStatus {
    guarded(|| {
        let stats = table_ref(table)?.inner.run_agc();
        if !out_stats.is_null() {
            out_stats.write(stats.into());
        }
        Ok(())
    })
}

/// Lifetime statistics of the table.
///
/// # Safety
/// `table` must be live.
#[no_mangle]
pub unsafe extern "C" fn atomtab_agc_stats(table: *const AtomtabTable, out_stats: *mut AtomtabAgcStats) -> AtomtabStatus {
    guarded(|| write(out_stats, table_ref(table)?.inner.agc_stats().into()))
}

/// Walks the table. Writes the number of valid atoms and the number of
/// names held by more than one valid atom.
///
/// # Safety
/// `table` must be live; out-pointers may be NULL.
#[no_mangle]
pub unsafe extern "C" fn atomtab_audit(
    table: *const AtomtabTable,
    out_valid: *mut usize,
    out_duplicates: *mut usize,
) -> AtomtabStatus {
    guarded(|| {
        let report = table_ref(table)?.inner.audit();
        if !out_valid.is_null() {
            out_valid.write(report.valid_atoms);
        }
        if !out_duplicates.is_null() {
            out_duplicates.write(report.duplicates().count());
        }
        Ok(())
    })
}

/// Number of valid atoms, or 0 for NULL.
///
/// # Safety
/// `table` must be live or NULL.
#[no_mangle]
pub unsafe extern "C" fn atomtab_live_atoms(table: *const AtomtabTable) -> usize {
    table.as_ref().map_or(0, |t| t.inner.live_atoms())
}

/// Static, NUL-terminated description of a status code.
#[no_mangle]
pub extern "C" fn atomtab_status_message(status: AtomtabStatus) -> *const c_char {
    let msg: &'static CStr = match status {
        AtomtabStatus::Ok => c"ok",
        AtomtabStatus::NullArgument => c"required pointer argument was NULL",
        AtomtabStatus::NotFound => c"no such atom",
        AtomtabStatus::BufferTooSmall => c"buffer too small",
        AtomtabStatus::IndexOutOfRange => c"index cannot be encoded as a handle",
        AtomtabStatus::CountOverflow => c"reference count overflow",
        AtomtabStatus::NoSuchIndex => c"no atom record at that index",
        AtomtabStatus::CapacityExhausted => c"atom index space exhausted",
        AtomtabStatus::StaleHandle => c"handle no longer refers to a valid atom",
        AtomtabStatus::CountUnderflow => c"reference count would drop below zero",
        AtomtabStatus::ContractViolation => c"contract violation",
        AtomtabStatus::UnknownThread => c"thread is not registered with this table",
        AtomtabStatus::NoSuchArena => c"no such arena",
        AtomtabStatus::SlotOutOfBounds => c"arena slot out of bounds",
        AtomtabStatus::EmptyArena => c"arena is empty",
        AtomtabStatus::TooManyThreads => c"too many registered threads",
        AtomtabStatus::InvalidHandle => c"word is not an atom handle",
        AtomtabStatus::Panic => c"internal panic",
    };
    msg.as_ptr()
}
