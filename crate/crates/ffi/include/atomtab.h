#ifndef ATOMTAB_H
#define ATOMTAB_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum AtomtabStatus {
  ATOMTAB_STATUS_OK = 0,
  ATOMTAB_STATUS_NULL_ARGUMENT,
  ATOMTAB_STATUS_NOT_FOUND,
  ATOMTAB_STATUS_BUFFER_TOO_SMALL,
  ATOMTAB_STATUS_INDEX_OUT_OF_RANGE,
  ATOMTAB_STATUS_COUNT_OVERFLOW,
  ATOMTAB_STATUS_NO_SUCH_INDEX,
  ATOMTAB_STATUS_CAPACITY_EXHAUSTED,
  ATOMTAB_STATUS_STALE_HANDLE,
  ATOMTAB_STATUS_COUNT_UNDERFLOW,
  ATOMTAB_STATUS_CONTRACT_VIOLATION,
  ATOMTAB_STATUS_UNKNOWN_THREAD,
  ATOMTAB_STATUS_NO_SUCH_ARENA,
  ATOMTAB_STATUS_SLOT_OUT_OF_BOUNDS,
  ATOMTAB_STATUS_EMPTY_ARENA,
  ATOMTAB_STATUS_TOO_MANY_THREADS,
  ATOMTAB_STATUS_INVALID_HANDLE,
  ATOMTAB_STATUS_PANIC,
} AtomtabStatus;

/**
 * Opaque table handle.
 */
typedef struct AtomtabTable AtomtabTable;

/**
 * Opaque per-thread context.
 */
typedef struct AtomtabThread AtomtabThread;

/**
 * Collection statistics, times in nanoseconds.
 */
typedef struct AtomtabAgcStats {
  uint64_t invocations;
  uint64_t atoms_reclaimed;
  uint64_t bytes_reclaimed;
  uint64_t tables_reclaimed;
  uint64_t mark_ns;
  uint64_t collect_ns;
} AtomtabAgcStats;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Creates a table. `initial_buckets` of 0 picks the default;
 * `agc_trigger` of 0 disables automatic collection, otherwise a cycle runs
 * after that many atoms were created. Returns NULL on failure.
 */
struct AtomtabTable *atomtab_table_new(size_t initial_buckets, size_t agc_trigger);

/**
 * Frees a table. NULL is ignored.
 *
 * # Safety
 * `table` must come from `atomtab_table_new` and not be used afterwards.
 */
void atomtab_table_free(struct AtomtabTable *table);

/**
 * Registers the calling thread. Returns NULL on failure.
 *
 * # Safety
 * `table` must be a live table.
 */
struct AtomtabThread *atomtab_thread_register(const struct AtomtabTable *table);

/**
 * Deregisters and frees a thread context.
 *
 * # Safety
 * `thread` must come from `atomtab_thread_register` and not be used
 * afterwards.
 */
enum AtomtabStatus atomtab_thread_deregister(struct AtomtabThread *thread);

/**
 * Interns `len` bytes at `name`. The handle written to `out_handle`
 * carries one reference owned by the caller.
 *
 * # Safety
 * `thread` must be live; `name` must point to `len` readable bytes.
 */
enum AtomtabStatus atomtab_intern(const struct AtomtabThread *thread, const uint8_t *name, size_t len, size_t *out_handle);

/**
 * Looks a name up without creating it. Returns `NotFound` when absent; on
 * success the handle carries one reference owned by the caller.
 *
 * # Safety
 * As for `atomtab_intern`.
 */
enum AtomtabStatus atomtab_find_existing(const struct AtomtabThread *thread, const uint8_t *name, size_t len, size_t *out_handle);

/**
 * Adds one reference to a valid atom.
 *
 * # Safety
 * `table` must be live.
 */
enum AtomtabStatus atomtab_register_atom(const struct AtomtabTable *table, size_t handle_raw);

/**
 * Drops one reference.
 *
 * # Safety
 * `thread` must be live.
 */
enum AtomtabStatus atomtab_unregister_atom(const struct AtomtabThread *thread, size_t handle_raw);

/**
 * Copies the atom's name into `buf`. The name length is always written to
 * `out_len`; if it exceeds `cap`, nothing is copied and `BufferTooSmall`
 * is returned.
 *
 * # Safety
 * `table` must be live; `buf` must be writable for `cap` bytes.
 */
enum AtomtabStatus atomtab_name(const struct AtomtabTable *table, size_t handle_raw, uint8_t *buf, size_t cap, size_t *out_len);

/**
 * Appends a word to the thread's default scan arena.
 *
 * # Safety
 * `thread` must be live; `out_slot` may be NULL.
 */
enum AtomtabStatus atomtab_arena_push(const struct AtomtabThread *thread, size_t word, size_t *out_slot);

/**
 * Removes the last word of the default scan arena.
 *
 * # Safety
 * `thread` must be live; `out_word` may be NULL.
 */
enum AtomtabStatus atomtab_arena_pop(const struct AtomtabThread *thread, size_t *out_word);

/**
 * Runs one collection cycle in the calling thread. `out_stats`, if not
 * NULL, receives the cycle's statistics.
 *
 * # Safety
 * `table` must be live.
 */
enum AtomtabStatus atomtab_run_agc(const struct AtomtabTable *table, struct AtomtabAgcStats *out_stats);

/**
 * Lifetime statistics of the table.
 *
 * # Safety
 * `table` must be live.
 */
enum AtomtabStatus atomtab_agc_stats(const struct AtomtabTable *table, struct AtomtabAgcStats *out_stats);

/**
 * Walks the table. Writes the number of valid atoms and the number of
 * names held by more than one valid atom.
 *
 * # Safety
 * `table` must be live; out-pointers may be NULL.
 */
enum AtomtabStatus atomtab_audit(const struct AtomtabTable *table, size_t *out_valid, size_t *out_duplicates);

/**
 * Number of valid atoms, or 0 for NULL.
 *
 * # Safety
 * `table` must be live or NULL.
 */
size_t atomtab_live_atoms(const struct AtomtabTable *table);

/**
 * Static, NUL-terminated description of a status code.
 */
const char *atomtab_status_message(enum AtomtabStatus status);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ATOMTAB_H */
