use super::StorageError;

/// How a value is merged into an existing workspace entry.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Combine {
    Assign,
    Add,
    Mul,
}

/// Dense workspace with a coordinate list and guard flags.
///
/// `list` holds every flat coordinate inserted since the last reset, once;
/// `flags[c]` is set exactly for those coordinates. Resetting walks `list`
/// so it costs O(nnz) rather than O(size).
#[derive(Clone, Debug)]
pub struct Workspace {
    dims: Vec<usize>,
    strides: Vec<usize>,
    vals: Vec<f64>,
    flags: Vec<bool>,
    list: Vec<usize>,
    last_reset_touched: usize,
}

impl Workspace {
    pub fn new(dims: &[usize]) -> Self {
        let size: usize = dims.iter().product();
        let mut strides = vec![1usize; dims.len()];
        for m in (0..dims.len().saturating_sub(1)).rev() {
            strides[m] = strides[m + 1] * dims[m + 1];
        }
        Workspace {
            dims: dims.to_vec(),
            strides,
            vals: vec![0.0; size],
            flags: vec![false; size],
            list: Vec::new(),
            last_reset_touched: 0,
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn size(&self) -> usize {
        self.vals.len()
    }

    pub fn nnz(&self) -> usize {
        self.list.len()
    }

    pub fn list(&self) -> &[usize] {
        &self.list
    }

    pub fn vals(&self) -> &[f64] {
        &self.vals
    }

    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    /// Entries written by the most recent reset.
    pub fn last_reset_touched(&self) -> usize {
        self.last_reset_touched
    }

    /// Bytes held by the value, flag and list arrays.
    pub fn bytes(&self) -> usize {
        self.vals.len() * 8 + self.flags.len() + self.list.capacity() * std::mem::size_of::<usize>()
    }

    pub fn flat_index(&self, coord: &[usize]) -> Result<usize, StorageError> {
        if coord.len() != self.dims.len() {
            return Err(StorageError::OrderMismatch { expected: self.dims.len(), found: coord.len() });
        }
        let mut flat = 0;
        for (m, (&c, &d)) in coord.iter().zip(&self.dims).enumerate() {
            if c >= d {
                return Err(StorageError::OutOfRange { mode: m, coord: c, dim: d });
            }
            flat += c * self.strides[m];
        }
        Ok(flat)
    }

    pub fn insert(&mut self, coord: &[usize], value: f64, combine: Combine) -> Result<(), StorageError> {
        let flat = self.flat_index(coord)?;
        self.insert_flat(flat, value, combine);
        Ok(())
    }

    /// Merges `value` into the entry at `flat`; a first insert stores the
    /// value as-is (the entry starts at the identity of `combine`). Returns
    /// true when the coordinate was newly added to the list.
    #[inline]
    pub fn insert_flat(&mut self, flat: usize, value: f64, combine: Combine) -> bool {
        if self.flags[flat] {
            let v = &mut self.vals[flat];
            match combine {
                Combine::Assign => *v = value,
                Combine::Add => *v += value,
                Combine::Mul => *v *= value,
            }
            false
        } else {
            self.flags[flat] = true;
            self.vals[flat] = value;
            self.list.push(flat);
            true
        }
    }

    /// Marks `flat` as present without touching its value.
    #[inline]
    pub fn mark_flat(&mut self, flat: usize) -> bool {
        if self.flags[flat] {
            false
        } else {
            self.flags[flat] = true;
            self.list.push(flat);
            true
        }
    }

    #[inline]
    pub fn get_flat(&self, flat: usize) -> Option<f64> {
        if self.flags[flat] {
            Some(self.vals[flat])
        } else {
            None
        }
    }

    pub fn sort_list(&mut self) {
        self.list.sort_unstable();
    }

    /// Returns the inserted `(flat coordinate, value)` pairs, ascending when
    /// `sort` is set and in insertion order otherwise, then resets.
    pub fn drain(&mut self, sort: bool) -> Vec<(usize, f64)> {
        if sort {
            self.sort_list();
        }
        let out = self.list.iter().map(|&c| (c, self.vals[c])).collect();
        self.reset();
        out
    }

    /// Clears every listed entry. Cost is proportional to `nnz`.
    pub fn reset(&mut self) {
        self.last_reset_touched = self.list.len();
        for &c in &self.list {
            self.flags[c] = false;
            self.vals[c] = 0.0;
        }
        self.list.clear();
    }

    /// True when no flag is set, the list is empty, and every value is zero.
    pub fn is_clear(&self) -> bool {
        self.list.is_empty() && self.flags.iter().all(|f| !f) && self.vals.iter().all(|&v| v == 0.0)
    }

    /// Checks that the list holds each flagged coordinate exactly once.
    pub fn check_invariants(&self) -> Result<(), StorageError> {
        let mut seen = vec![false; self.flags.len()];
        for &c in &self.list {
            if c >= self.flags.len() || seen[c] || !self.flags[c] {
                return Err(StorageError::Invariant(format!("workspace list entry {c} is not a unique flagged coordinate")));
            }
            seen[c] = true;
        }
        if self.flags.iter().filter(|f| **f).count() != self.list.len() {
            return Err(StorageError::Invariant("flag set for a coordinate missing from the list".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn insert_examples() {
        let mut ws = Workspace::new(&[4]);
        ws.insert(&[2], 1.5, Combine::Add).unwrap();
        assert_eq!(ws.vals()[2], 1.5);
        assert_eq!(ws.list(), &[2]);
        ws.insert(&[2], 2.0, Combine::Add).unwrap();
        assert_eq!(ws.vals()[2], 3.5);
        assert_eq!(ws.list(), &[2]);

        let mut ws = Workspace::new(&[4]);
        ws.insert(&[0], 1.0, Combine::Assign).unwrap();
        ws.insert(&[0], 5.0, Combine::Assign).unwrap();
        assert_eq!(ws.vals()[0], 5.0);
        assert_eq!(ws.list(), &[0]);
        assert!(matches!(ws.insert(&[4], 1.0, Combine::Add), Err(StorageError::OutOfRange { .. })));
    }

    #[test]
    fn drain_examples() {
        let build = || {
            let mut ws = Workspace::new(&[4]);
            ws.insert(&[2], 3.5, Combine::Add).unwrap();
            ws.insert(&[0], 1.0, Combine::Add).unwrap();
            ws
        };
        let mut ws = build();
        assert_eq!(ws.drain(true), vec![(0, 1.0), (2, 3.5)]);
        assert!(ws.is_clear());
        let mut ws = build();
        assert_eq!(ws.drain(false), vec![(2, 3.5), (0, 1.0)]);
        assert!(ws.is_clear());
        let mut ws = Workspace::new(&[3]);
        assert!(ws.drain(true).is_empty());
    }

    #[test]
    fn reset_touches_only_listed_entries() {
        let mut ws = Workspace::new(&[1000]);
        for c in [5, 17, 5, 999] {
            ws.insert(&[c], 1.0, Combine::Add).unwrap();
        }
        ws.check_invariants().unwrap();
        ws.drain(false);
        assert_eq!(ws.last_reset_touched(), 3);
        assert!(ws.is_clear());
    }

    #[test]
    fn multi_dimensional_flat_index() {
        let ws = Workspace::new(&[3, 4]);
        assert_eq!(ws.flat_index(&[2, 1]).unwrap(), 9);
    }
}
