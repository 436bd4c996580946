//! Bit-level encoding of atom handles and the packed reference word.
//!
//! A handle is `(index << 3) | 0b101`. The low tag bits make every handle
//! odd, so no word-aligned address can ever be mistaken for a handle when
//! thread arenas are scanned conservatively.
//!
//! The reference word keeps three lifecycle flags in its top bits and the
//! explicit reference count in the remaining low bits:
//!
//! ```text
//!  W-1       W-2     W-3     W-4 ..................... 0
//! +--------+-------+--------+------------------------------+
//! |reserved| valid | marked |            count             |
//! +--------+-------+--------+------------------------------+
//! ```

use std::fmt;

use crate::error::AtomError;

/// Width of a machine word in bits.
pub const WORD_BITS: u32 = usize::BITS;

/// Number of low bits used by the handle tag.
pub const TAG_BITS: u32 = 3;

/// Tag carried in the low bits of every handle.
pub const TAG: usize = 0b101;

const TAG_MASK: usize = (1 << TAG_BITS) - 1;

/// Largest index that fits in a handle.
pub const MAX_INDEX: usize = (1 << (WORD_BITS - TAG_BITS)) - 1;

/// Tagged, word-sized identifier of an interned atom.
///
/// Handles are indices into the atom store rather than pointers, so checking
/// whether an arbitrary word could be a handle is a bounded range test.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(transparent)]
pub struct AtomHandle(usize);

impl AtomHandle {
    /// Encodes `index` as a handle. Index 0 is the null index and is rejected.
    pub fn from_index(index: usize) -> Result<Self, AtomError> {
        if index == 0 || index > MAX_INDEX {
            return Err(AtomError::IndexOutOfRange(index));
        }
        Ok(AtomHandle((index << TAG_BITS) | TAG))
    }

    /// Reinterprets a raw word as a handle if it carries the tag and a
    /// non-null index.
    pub fn from_raw(raw: usize) -> Option<Self> {
        if raw & TAG_MASK == TAG && raw >> TAG_BITS != 0 {
            Some(AtomHandle(raw))
        } else {
            None
        }
    }

    #[inline]
    pub const fn index(self) -> usize {
        self.0 >> TAG_BITS
    }

    #[inline]
    pub const fn raw(self) -> usize {
        self.0
    }
}

impl fmt::Debug for AtomHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "AtomHandle({})", self.index())
    }
}

/// Encodes a store index as an atom handle.
pub fn encode_handle(index: usize) -> Result<AtomHandle, AtomError> {
    AtomHandle::from_index(index)
}

/// Result of conservatively classifying a machine word.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WordClass {
    /// The word could be a handle for the given index.
    AtomLike(usize),
    NotAtom,
}

/// Decides whether `word` looks like a handle for an index in `1..=max_index`.
///
/// Total over all bit patterns. A float or string fragment that happens to
/// carry the tag is reported as atom-like; that is the conservative part.
#[inline]
pub fn classify_word(word: usize, max_index: usize) -> WordClass {
    if word & TAG_MASK != TAG {
        return WordClass::NotAtom;
    }
    let index = word >> TAG_BITS;
    if index >= 1 && index <= max_index {
        WordClass::AtomLike(index)
    } else {
        WordClass::NotAtom
    }
}

pub const RESERVED: usize = 1 << (WORD_BITS - 1);
pub const VALID: usize = 1 << (WORD_BITS - 2);
pub const MARKED: usize = 1 << (WORD_BITS - 3);
pub const COUNT_MASK: usize = MARKED - 1;

/// Packed reference word of an atom record.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
#[repr(transparent)]
pub struct RefWord(usize);

impl RefWord {
    /// The free state: no flags and a zero count.
    pub const FREE: RefWord = RefWord(0);

    pub fn pack(reserved: bool, valid: bool, marked: bool, count: usize) -> Result<Self, AtomError> {
        if count > COUNT_MASK {
            return Err(AtomError::CountOverflow(count));
        }
        let mut raw = count;
        if reserved {
            raw |= RESERVED;
        }
        if valid {
            raw |= VALID;
        }
        if marked {
            raw |= MARKED;
        }
        Ok(RefWord(raw))
    }

    #[inline]
    pub const fn from_raw(raw: usize) -> Self {
        RefWord(raw)
    }

    #[inline]
    pub const fn raw(self) -> usize {
        self.0
    }

    #[inline]
    pub const fn is_free(self) -> bool {
        self.0 == 0
    }

    #[inline]
    pub const fn is_reserved(self) -> bool {
        self.0 & RESERVED != 0
    }

    #[inline]
    pub const fn is_valid(self) -> bool {
        self.0 & VALID != 0
    }

    #[inline]
    pub const fn is_marked(self) -> bool {
        self.0 & MARKED != 0
    }

    #[inline]
    pub const fn count(self) -> usize {
        self.0 & COUNT_MASK
    }
}

impl fmt::Debug for RefWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RefWord")
            .field("reserved", &self.is_reserved())
            .field("valid", &self.is_valid())
            .field("marked", &self.is_marked())
            .field("count", &self.count())
            .finish()
    }
}

pub fn is_reserved(word: RefWord) -> bool {
    word.is_reserved()
}

pub fn is_valid(word: RefWord) -> bool {
    word.is_valid()
}

pub fn is_marked(word: RefWord) -> bool {
    word.is_marked()
}

pub fn count_of(word: RefWord) -> usize {
    word.count()
}
