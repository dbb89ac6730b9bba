//! Sorted sets of coordinate indices (0-based), used for supports and active sets.

use std::fmt;

use serde::{Deserialize, Serialize};

/// A sorted, duplicate-free set of coordinate indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IndexSet(Vec<usize>);

impl IndexSet {
    pub fn empty() -> Self {
        IndexSet(Vec::new())
    }

    /// `{0, 1, ..., d-1}`.
    pub fn full(d: usize) -> Self {
        IndexSet((0..d).collect())
    }

    pub fn from_indices<I: IntoIterator<Item = usize>>(indices: I) -> Self {
        let mut v: Vec<usize> = indices.into_iter().collect();
        v.sort_unstable();
        v.dedup();
        IndexSet(v)
    }

    /// Bit `i` of `mask` set means index `i` belongs to the set.
    pub fn from_mask(mask: u64, d: usize) -> Self {
        IndexSet((0..d).filter(|&i| mask >> i & 1 == 1).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.0.binary_search(&i).is_ok()
    }

    pub fn insert(&mut self, i: usize) {
        if let Err(pos) = self.0.binary_search(&i) {
            self.0.insert(pos, i);
        }
    }

    pub fn remove(&mut self, i: usize) {
        if let Ok(pos) = self.0.binary_search(&i) {
            self.0.remove(pos);
        }
    }

    pub fn is_subset(&self, other: &IndexSet) -> bool {
        self.0.iter().all(|&i| other.contains(i))
    }

    pub fn is_strict_subset(&self, other: &IndexSet) -> bool {
        self.len() < other.len() && self.is_subset(other)
    }

    /// Indices in `0..d` not in the set.
    pub fn complement(&self, d: usize) -> IndexSet {
        IndexSet((0..d).filter(|&i| !self.contains(i)).collect())
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }
}

impl fmt::Display for IndexSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (n, i) in self.0.iter().enumerate() {
            if n > 0 {
                write!(f, ",")?;
            }
            write!(f, "{i}")?;
        }
        write!(f, "}}")
    }
}

impl FromIterator<usize> for IndexSet {
    fn from_iter<T: IntoIterator<Item = usize>>(iter: T) -> Self {
        IndexSet::from_indices(iter)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_round_trip() {
        let s = IndexSet::from_mask(0b1011, 4);
        assert_eq!(s.as_slice(), &[0, 1, 3]);
        assert_eq!(s.complement(4).as_slice(), &[2]);
    }

    #[test]
    fn subset_relations() {
        let a = IndexSet::from_indices([2, 0]);
        let b = IndexSet::full(3);
        assert!(a.is_strict_subset(&b));
        assert!(!b.is_strict_subset(&b));
        assert!(b.is_subset(&b));
        assert_eq!(a.to_string(), "{0,2}");
    }
}
