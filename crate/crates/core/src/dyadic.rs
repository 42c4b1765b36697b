//! Dyadic intervals of `[0,1)` and the finite tree of depth `N`.
//!
//! Intervals are addressed by `(level, position)`; internally every interval of
//! the tree also has a flat heap index `2^level - 1 + position`, which is what
//! the per-interval tables in the other modules are keyed by.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{LabError, Result};

/// Largest supported depth. Cell counts are `2^N`, so this is far beyond
/// anything that fits in memory, but keeps the shift arithmetic in range.
pub const MAX_DEPTH: u32 = 40;

/// The dyadic interval `[p 2^-k, (p+1) 2^-k)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DyadicIndex {
    level: u32,
    position: u64,
}

impl DyadicIndex {
    pub const ROOT: DyadicIndex = DyadicIndex {
        level: 0,
        position: 0,
    };

    pub fn new(level: u32, position: u64) -> Result<Self> {
        if level > MAX_DEPTH {
            return Err(LabError::InvalidIndex(format!(
                "level {level} exceeds the supported maximum {MAX_DEPTH}"
            )));
        }
        if position >= 1u64 << level {
            return Err(LabError::InvalidIndex(format!(
                "position {position} out of range for level {level}"
            )));
        }
        Ok(Self { level, position })
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn position(&self) -> u64 {
        self.position
    }

    /// `|I| = 2^-level`, exact in binary floating point.
    pub fn measure(&self) -> f64 {
        (-(self.level as f64)).exp2()
    }

    pub fn left(&self) -> f64 {
        self.position as f64 * self.measure()
    }

    pub fn right(&self) -> f64 {
        (self.position + 1) as f64 * self.measure()
    }

    pub fn parent(&self) -> Option<DyadicIndex> {
        (self.level > 0).then(|| DyadicIndex {
            level: self.level - 1,
            position: self.position >> 1,
        })
    }

    /// Both halves, without checking against any tree depth.
    pub fn halves(&self) -> (DyadicIndex, DyadicIndex) {
        let level = self.level + 1;
        (
            DyadicIndex {
                level,
                position: 2 * self.position,
            },
            DyadicIndex {
                level,
                position: 2 * self.position + 1,
            },
        )
    }

    /// `other ⊆ self`.
    pub fn contains(&self, other: &DyadicIndex) -> bool {
        other.level >= self.level && (other.position >> (other.level - self.level)) == self.position
    }

    /// `other ⊊ self`.
    pub fn strictly_contains(&self, other: &DyadicIndex) -> bool {
        other.level > self.level && self.contains(other)
    }

    pub fn is_disjoint(&self, other: &DyadicIndex) -> bool {
        !self.contains(other) && !other.contains(self)
    }

    /// Ancestor at `level` (`level <= self.level`).
    pub fn ancestor_at(&self, level: u32) -> DyadicIndex {
        debug_assert!(level <= self.level);
        DyadicIndex {
            level,
            position: self.position >> (self.level - level),
        }
    }

    /// Heap index `2^level - 1 + position`.
    pub fn flat(&self) -> usize {
        ((1usize << self.level) - 1) + self.position as usize
    }

    pub fn from_flat(flat: usize) -> DyadicIndex {
        let level = usize::BITS - 1 - (flat + 1).leading_zeros();
        DyadicIndex {
            level,
            position: (flat + 1 - (1usize << level)) as u64,
        }
    }
}

impl fmt::Display for DyadicIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.level, self.position)
    }
}

impl FromStr for DyadicIndex {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self> {
        let (k, p) = s
            .split_once(':')
            .ok_or_else(|| LabError::InvalidIndex(format!("expected \"k:p\", got {s:?}")))?;
        let level = k
            .trim()
            .parse::<u32>()
            .map_err(|e| LabError::InvalidIndex(format!("{s:?}: {e}")))?;
        let position = p
            .trim()
            .parse::<u64>()
            .map_err(|e| LabError::InvalidIndex(format!("{s:?}: {e}")))?;
        DyadicIndex::new(level, position)
    }
}

impl Serialize for DyadicIndex {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for DyadicIndex {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// The dyadic intervals of `[0,1)` with level at most `depth`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DyadicTree {
    depth: u32,
}

impl DyadicTree {
    pub fn new(depth: u32) -> Result<Self> {
        if depth > MAX_DEPTH {
            return Err(LabError::InvalidSpec(format!(
                "depth {depth} exceeds the supported maximum {MAX_DEPTH}"
            )));
        }
        Ok(Self { depth })
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn num_cells(&self) -> usize {
        1usize << self.depth
    }

    /// `2^(N+1) - 1`.
    pub fn num_intervals(&self) -> usize {
        (1usize << (self.depth + 1)) - 1
    }

    pub fn cell(&self, j: usize) -> DyadicIndex {
        debug_assert!(j < self.num_cells());
        DyadicIndex {
            level: self.depth,
            position: j as u64,
        }
    }

    pub fn check(&self, index: &DyadicIndex) -> Result<()> {
        if index.level > self.depth {
            return Err(LabError::InvalidIndex(format!(
                "{index} is finer than the tree depth {}",
                self.depth
            )));
        }
        Ok(())
    }

    pub fn children(&self, index: &DyadicIndex) -> Result<(DyadicIndex, DyadicIndex)> {
        self.check(index)?;
        if index.level == self.depth {
            return Err(LabError::LevelOverflow {
                index: index.to_string(),
                depth: self.depth,
            });
        }
        Ok(index.halves())
    }

    /// Intervals containing `index`, ordered root first and ending with `index`.
    pub fn ancestors(&self, index: &DyadicIndex) -> Result<Vec<DyadicIndex>> {
        self.check(index)?;
        Ok((0..=index.level).map(|k| index.ancestor_at(k)).collect())
    }

    /// Every `J ⊆ index` with `level(J) <= max_level`, level by level.
    pub fn descendants(
        &self,
        index: DyadicIndex,
        max_level: u32,
    ) -> impl Iterator<Item = DyadicIndex> {
        let max_level = max_level.min(self.depth);
        (index.level..=max_level).flat_map(move |level| {
            let shift = level - index.level;
            let first = index.position << shift;
            (first..first + (1u64 << shift)).map(move |position| DyadicIndex { level, position })
        })
    }

    /// All intervals of the tree in flat (heap) order.
    pub fn intervals(&self) -> impl Iterator<Item = DyadicIndex> {
        (0..self.num_intervals()).map(DyadicIndex::from_flat)
    }

    /// Range of cell indices covered by `index`.
    pub fn cell_range(&self, index: &DyadicIndex) -> std::ops::Range<usize> {
        debug_assert!(index.level <= self.depth);
        let shift = self.depth - index.level;
        let start = (index.position as usize) << shift;
        start..start + (1usize << shift)
    }

    /// Flat indices of the intervals containing cell `j`, root first.
    pub fn cell_ancestors_flat(&self, j: usize) -> impl Iterator<Item = usize> + '_ {
        (0..=self.depth).map(move |k| ((1usize << k) - 1) + (j >> (self.depth - k)))
    }

    /// Cell measure `2^-N`.
    pub fn cell_measure(&self) -> f64 {
        (-(self.depth as f64)).exp2()
    }
}
