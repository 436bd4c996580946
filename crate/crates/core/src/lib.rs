//! A concurrent, garbage-collected atom table.
//!
//! Atoms are interned byte strings identified by tagged, word-sized handles.
//! Lookups and inserts are lock-free with respect to each other and to the
//! collector; the collector finds unreferenced atoms by combining explicit
//! reference counts with a conservative scan of each thread's registered
//! arenas.
//!
//! ```
//! use atomtab::{AtomTable, ArenaId};
//!
//! let table = AtomTable::with_defaults();
//! let ctx = table.register_thread();
//! let a = ctx.intern(b"hello").unwrap();
//! assert_eq!(ctx.intern(b"hello").unwrap(), a);
//! ctx.arena_push(ArenaId::DEFAULT, a.raw()).unwrap();
//! ctx.unregister_atom(a).unwrap();
//! ctx.unregister_atom(a).unwrap();
//! table.run_agc();
//! assert_eq!(table.name_of(a).unwrap(), b"hello");
//! ```

pub mod bench;
pub mod collector;
pub mod error;
pub mod handle;
pub mod roots;
pub mod store;
pub mod table;

pub use collector::{AgcPhase, AgcStats, Hooks};
pub use error::AtomError;
pub use handle::{classify_word, encode_handle, AtomHandle, RefWord, WordClass, MAX_INDEX};
pub use roots::{ArenaId, ThreadContext};
pub use store::AtomArray;
pub use table::{hash, AtomTable, AuditReport, TableConfig};
