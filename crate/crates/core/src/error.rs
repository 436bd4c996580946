use thiserror::Error;

use crate::handle::AtomHandle;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AtomError {
    #[error("index {0} cannot be encoded as an atom handle")]
    IndexOutOfRange(usize),

    #[error("reference count {0} does not fit in a reference word")]
    CountOverflow(usize),

    #[error("no published atom record at index {0}")]
    NoSuchIndex(usize),

    #[error("atom index space exhausted")]
    CapacityExhausted,

    #[error("{0:?} no longer refers to a valid atom")]
    StaleHandle(AtomHandle),

    #[error("reference count of {0:?} would drop below zero")]
    CountUnderflow(AtomHandle),

    #[error("contract violation: {0}")]
    ContractViolation(&'static str),

    #[error("thread context is not registered with this table")]
    UnknownThread,

    #[error("arena {0} does not exist")]
    NoSuchArena(usize),

    #[error("arena slot {slot} is out of bounds (length {len})")]
    SlotOutOfBounds { slot: usize, len: usize },

    #[error("pop from an empty arena")]
    EmptyArena,

    #[error("the single-threaded collector requires at most one registered thread, found {0}")]
    TooManyThreads(usize),
}
