//! Bitmask sets over the vertices of the target digraph.

use std::fmt;
use std::ops::{BitAnd, BitAndAssign, BitOr, BitOrAssign, Not};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Largest target digraph supported by [`ValueSet`].
pub const MAX_VALUES: usize = 64;

/// A subset of `{0, .., 63}` stored as a bitmask.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct ValueSet(u64);

impl ValueSet {
    pub const EMPTY: ValueSet = ValueSet(0);

    pub fn from_bits(bits: u64) -> Self {
        ValueSet(bits)
    }

    pub fn bits(self) -> u64 {
        self.0
    }

    /// `{0, .., n-1}`.
    pub fn full(n: usize) -> Self {
        assert!(n <= MAX_VALUES, "value domain of size {n} exceeds {MAX_VALUES}");
        if n == MAX_VALUES {
            ValueSet(u64::MAX)
        } else {
            ValueSet((1u64 << n) - 1)
        }
    }

    pub fn singleton(v: usize) -> Self {
        debug_assert!(v < MAX_VALUES);
        ValueSet(1u64 << v)
    }

    #[inline]
    pub fn contains(self, v: usize) -> bool {
        v < MAX_VALUES && self.0 & (1u64 << v) != 0
    }

    #[inline]
    pub fn insert(&mut self, v: usize) -> bool {
        let had = self.contains(v);
        self.0 |= 1u64 << v;
        !had
    }

    #[inline]
    pub fn remove(&mut self, v: usize) -> bool {
        let had = self.contains(v);
        self.0 &= !(1u64 << v);
        had
    }

    #[inline]
    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    #[inline]
    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn is_subset(self, other: ValueSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn min(self) -> Option<usize> {
        (self.0 != 0).then(|| self.0.trailing_zeros() as usize)
    }

    pub fn iter(self) -> ValueIter {
        ValueIter(self.0)
    }

    pub fn to_vec(self) -> Vec<usize> {
        self.iter().collect()
    }
}

impl FromIterator<usize> for ValueSet {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        let mut s = ValueSet::EMPTY;
        for v in iter {
            s.insert(v);
        }
        s
    }
}

impl IntoIterator for ValueSet {
    type Item = usize;
    type IntoIter = ValueIter;
    fn into_iter(self) -> ValueIter {
        self.iter()
    }
}

/// Ascending iterator over a [`ValueSet`].
pub struct ValueIter(u64);

impl Iterator for ValueIter {
    type Item = usize;
    #[inline]
    fn next(&mut self) -> Option<usize> {
        if self.0 == 0 {
            return None;
        }
        let v = self.0.trailing_zeros() as usize;
        self.0 &= self.0 - 1;
        Some(v)
    }
}

impl BitAnd for ValueSet {
    type Output = ValueSet;
    fn bitand(self, rhs: ValueSet) -> ValueSet {
        ValueSet(self.0 & rhs.0)
    }
}

impl BitOr for ValueSet {
    type Output = ValueSet;
    fn bitor(self, rhs: ValueSet) -> ValueSet {
        ValueSet(self.0 | rhs.0)
    }
}

impl BitAndAssign for ValueSet {
    fn bitand_assign(&mut self, rhs: ValueSet) {
        self.0 &= rhs.0;
    }
}

impl BitOrAssign for ValueSet {
    fn bitor_assign(&mut self, rhs: ValueSet) {
        self.0 |= rhs.0;
    }
}

impl Not for ValueSet {
    type Output = ValueSet;
    fn not(self) -> ValueSet {
        ValueSet(!self.0)
    }
}

impl fmt::Debug for ValueSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

// Serialized as a sorted array of values.
impl Serialize for ValueSet {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(self.iter())
    }
}

impl<'de> Deserialize<'de> for ValueSet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let values = Vec::<usize>::deserialize(d)?;
        if let Some(&bad) = values.iter().find(|&&v| v >= MAX_VALUES) {
            return Err(serde::de::Error::custom(format!("value {bad} out of range")));
        }
        Ok(values.into_iter().collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basic_ops() {
        let mut s = ValueSet::EMPTY;
        assert!(s.insert(3));
        assert!(!s.insert(3));
        s.insert(0);
        assert_eq!(s.to_vec(), vec![0, 3]);
        assert_eq!(s.len(), 2);
        assert_eq!(s.min(), Some(0));
        assert!(s.remove(0));
        assert_eq!(s, ValueSet::singleton(3));
        assert_eq!(ValueSet::full(64).len(), 64);
        assert_eq!(ValueSet::full(0), ValueSet::EMPTY);
    }

    #[test]
    fn serde_sorted_array() {
        let s: ValueSet = [5, 1, 2].into_iter().collect();
        assert_eq!(serde_json::to_string(&s).unwrap(), "[1,2,5]");
        let back: ValueSet = serde_json::from_str("[2,1,5]").unwrap();
        assert_eq!(back, s);
        assert!(serde_json::from_str::<ValueSet>("[64]").is_err());
    }
}
