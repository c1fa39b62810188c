//! Tensor value storage: dense and compressed level hierarchies, assembly by
//! appending, and the dense workspace used by workspace-optimized kernels.

mod format;
mod workspace;

pub use format::{LevelKind, ModeFormat, TensorFormat};
pub use workspace::{Combine, Workspace};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StorageError {
    #[error("format has order {expected} but {found} were given")]
    OrderMismatch { expected: usize, found: usize },
    #[error("mode ordering {0:?} is not a permutation")]
    InvalidModeOrdering(Vec<usize>),
    #[error("dimensions must be positive, got {0:?}")]
    InvalidDimension(Vec<usize>),
    #[error("coordinate {coord} out of range for mode {mode} of size {dim}")]
    OutOfRange { mode: usize, coord: usize, dim: usize },
    #[error("level {level} does not exist (tensor has {levels} levels)")]
    InvalidLevel { level: usize, levels: usize },
    #[error("position {position} is not valid at level {level}")]
    InvalidPosition { level: usize, position: usize },
    #[error("append at level {level} for parent {parent}, coordinate {coord} comes before an earlier append")]
    OutOfOrderAppend { level: usize, parent: usize, coord: usize },
    #[error("append_row needs a compressed last level")]
    LastLevelNotCompressed,
    #[error("storage has open appends; call finalize first")]
    NotFinalized,
    #[error("unknown format `{name}` for a tensor of order {order}")]
    UnknownFormat { name: String, order: usize },
    #[error("invariant violated: {0}")]
    Invariant(String),
}

/// One storage level. Compressed levels keep `pos` (one range per parent
/// position plus a sentinel) and `idx` (the stored coordinates).
#[derive(Clone, Debug, PartialEq)]
pub enum Level {
    Dense { size: usize },
    Compressed { pos: Vec<u64>, idx: Vec<u64> },
}

/// A tensor stored as a hierarchy of levels plus a value array aligned with
/// the positions of the last level.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorStorage {
    dims: Vec<usize>,
    format: TensorFormat,
    levels: Vec<Level>,
    vals: Vec<f64>,
    // compressed `pos` arrays are kept open (no trailing sentinels) while appending
    open: bool,
}

impl TensorStorage {
    /// Empty storage: zero stored values for compressed formats, zero-filled
    /// values for all-dense formats.
    pub fn new(dims: &[usize], format: TensorFormat) -> Result<Self, StorageError> {
        if dims.len() != format.order() {
            return Err(StorageError::OrderMismatch { expected: format.order(), found: dims.len() });
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(StorageError::InvalidDimension(dims.to_vec()));
        }
        let mut levels = Vec::with_capacity(dims.len());
        let mut parents = 1usize;
        for l in 0..format.order() {
            let size = dims[format.mode_ordering()[l]];
            match format.level(l).kind {
                LevelKind::Dense => {
                    levels.push(Level::Dense { size });
                    parents *= size;
                }
                LevelKind::Compressed => {
                    levels.push(Level::Compressed { pos: vec![0; parents + 1], idx: Vec::new() });
                    parents = 0;
                }
            }
        }
        Ok(TensorStorage { dims: dims.to_vec(), format, levels, vals: vec![0.0; parents], open: false })
    }

    /// Builds storage from coordinate/value pairs given in mode order.
    /// Duplicate coordinates are summed.
    pub fn from_entries<I>(dims: &[usize], format: TensorFormat, entries: I) -> Result<Self, StorageError>
    where
        I: IntoIterator<Item = (Vec<usize>, f64)>,
    {
        let mut storage = Self::new(dims, format)?;
        let order = dims.len();
        let ordering = storage.format.mode_ordering().to_vec();
        let mut list: Vec<(Vec<usize>, f64)> = Vec::new();
        for (coords, v) in entries {
            if coords.len() != order {
                return Err(StorageError::OrderMismatch { expected: order, found: coords.len() });
            }
            for (m, &c) in coords.iter().enumerate() {
                if c >= dims[m] {
                    return Err(StorageError::OutOfRange { mode: m, coord: c, dim: dims[m] });
                }
            }
            // permute into storage order so a lexicographic sort matches level order
            list.push((ordering.iter().map(|&m| coords[m]).collect(), v));
        }
        list.sort_by(|a, b| a.0.cmp(&b.0));

        // positions of every entry at the current level
        let mut positions = vec![0usize; list.len()];
        let mut parents = 1usize;
        for l in 0..order {
            match &mut storage.levels[l] {
                Level::Dense { size } => {
                    for (p, e) in positions.iter_mut().zip(&list) {
                        *p = *p * *size + e.0[l];
                    }
                    parents *= *size;
                }
                Level::Compressed { pos, idx } => {
                    pos.clear();
                    pos.resize(parents + 1, 0);
                    idx.clear();
                    let mut last: Option<(usize, usize)> = None;
                    for (p, e) in positions.iter_mut().zip(&list) {
                        let key = (*p, e.0[l]);
                        if last != Some(key) {
                            idx.push(key.1 as u64);
                            pos[key.0 + 1] += 1;
                            last = Some(key);
                        }
                        *p = idx.len() - 1;
                    }
                    for k in 0..parents {
                        pos[k + 1] += pos[k];
                    }
                    parents = idx.len();
                }
            }
        }
        storage.vals = vec![0.0; parents];
        for (p, e) in positions.iter().zip(&list) {
            storage.vals[*p] += e.1;
        }
        Ok(storage)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn format(&self) -> &TensorFormat {
        &self.format
    }

    pub fn levels(&self) -> &[Level] {
        &self.levels
    }

    pub fn level(&self, level: usize) -> Result<&Level, StorageError> {
        self.levels.get(level).ok_or(StorageError::InvalidLevel { level, levels: self.levels.len() })
    }

    pub fn vals(&self) -> &[f64] {
        &self.vals
    }

    pub fn vals_mut(&mut self) -> &mut [f64] {
        &mut self.vals
    }

    /// Number of stored values (explicit zeros included).
    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Size of the mode stored at `level`.
    pub fn level_dim(&self, level: usize) -> usize {
        self.dims[self.format.mode_ordering()[level]]
    }

    pub fn pos(&self, level: usize) -> Option<&[u64]> {
        match self.levels.get(level)? {
            Level::Compressed { pos, .. } => Some(pos),
            Level::Dense { .. } => None,
        }
    }

    pub fn idx(&self, level: usize) -> Option<&[u64]> {
        match self.levels.get(level)? {
            Level::Compressed { idx, .. } => Some(idx),
            Level::Dense { .. } => None,
        }
    }

    /// Number of positions at `level` (the number of parents of `level + 1`).
    pub fn positions(&self, level: usize) -> usize {
        let mut parents = 1usize;
        for l in 0..=level {
            parents = match &self.levels[l] {
                Level::Dense { size } => parents * size,
                Level::Compressed { idx, .. } => idx.len(),
            };
        }
        parents
    }

    /// Position of the value at `coords` (mode order), or `None` when not stored.
    pub fn locate(&self, coords: &[usize]) -> Result<Option<usize>, StorageError> {
        self.ensure_closed()?;
        if coords.len() != self.order() {
            return Err(StorageError::OrderMismatch { expected: self.order(), found: coords.len() });
        }
        for (m, &c) in coords.iter().enumerate() {
            if c >= self.dims[m] {
                return Err(StorageError::OutOfRange { mode: m, coord: c, dim: self.dims[m] });
            }
        }
        let mut p = 0usize;
        for l in 0..self.order() {
            let c = coords[self.format.mode_ordering()[l]];
            match self.locate_in_level(l, p, c) {
                Some(q) => p = q,
                None => return Ok(None),
            }
        }
        Ok(Some(p))
    }

    /// Child position of coordinate `coord` under `parent` at one level.
    #[inline]
    pub fn locate_in_level(&self, level: usize, parent: usize, coord: usize) -> Option<usize> {
        match &self.levels[level] {
            Level::Dense { size } => Some(parent * size + coord),
            Level::Compressed { pos, idx } => {
                let lo = pos[parent] as usize;
                let hi = pos[parent + 1] as usize;
                let row = &idx[lo..hi];
                let c = coord as u64;
                if self.format.level(level).ordered {
                    row.binary_search(&c).ok().map(|k| lo + k)
                } else {
                    row.iter().position(|&x| x == c).map(|k| lo + k)
                }
            }
        }
    }

    /// Stored `(coordinate, position)` pairs of one level under `parent_position`.
    pub fn iterate_level(&self, level: usize, parent_position: usize) -> Result<LevelIter<'_>, StorageError> {
        self.ensure_closed()?;
        let lvl = self.level(level)?;
        let parents = if level == 0 { 1 } else { self.positions(level - 1) };
        if parent_position >= parents {
            return Err(StorageError::InvalidPosition { level, position: parent_position });
        }
        Ok(match lvl {
            Level::Dense { size } => LevelIter::Dense { base: parent_position * size, next: 0, size: *size },
            Level::Compressed { pos, idx } => {
                let lo = pos[parent_position] as usize;
                let hi = pos[parent_position + 1] as usize;
                LevelIter::Compressed { idx: &idx[lo..hi], base: lo, next: 0 }
            }
        })
    }

    /// All stored entries as (mode-order coordinates, value), in storage order.
    pub fn entries(&self) -> Vec<(Vec<usize>, f64)> {
        let mut out = Vec::with_capacity(self.nnz());
        if self.open {
            return out;
        }
        let mut coords = vec![0usize; self.order()];
        self.collect_entries(0, 0, &mut coords, &mut out);
        out
    }

    fn collect_entries(&self, level: usize, parent: usize, coords: &mut Vec<usize>, out: &mut Vec<(Vec<usize>, f64)>) {
        if level == self.order() {
            out.push((coords.clone(), self.vals[parent]));
            return;
        }
        let mode = self.format.mode_ordering()[level];
        let iter = self.iterate_level(level, parent).expect("closed storage");
        for (c, p) in iter {
            coords[mode] = c;
            self.collect_entries(level + 1, p, coords, out);
        }
    }

    /// Appends one fiber: `outer_coords` name the coordinates of every level
    /// but the last (in storage level order) and `entries` are stored, in the
    /// given order, in the last level.
    pub fn append_row(&mut self, outer_coords: &[usize], entries: &[(usize, f64)]) -> Result<(), StorageError> {
        let n = self.order();
        if !matches!(self.levels.last(), Some(Level::Compressed { .. })) {
            return Err(StorageError::LastLevelNotCompressed);
        }
        if outer_coords.len() + 1 != n {
            return Err(StorageError::OrderMismatch { expected: n - 1, found: outer_coords.len() });
        }
        for (l, &c) in outer_coords.iter().enumerate() {
            let dim = self.level_dim(l);
            if c >= dim {
                return Err(StorageError::OutOfRange { mode: self.format.mode_ordering()[l], coord: c, dim });
            }
        }
        let last_dim = self.level_dim(n - 1);
        for &(c, _) in entries {
            if c >= last_dim {
                return Err(StorageError::OutOfRange { mode: self.format.mode_ordering()[n - 1], coord: c, dim: last_dim });
            }
        }
        self.reopen();
        let mut parent = 0usize;
        for (l, &c) in outer_coords.iter().enumerate() {
            parent = self.find_or_push(l, parent, c)?;
        }
        for &(c, v) in entries {
            let p = self.push_coord(n - 1, parent, c)?;
            debug_assert_eq!(p, self.vals.len());
            self.vals.push(v);
        }
        Ok(())
    }

    /// Closes all open `pos` arrays so every parent position has a range.
    pub fn finalize(&mut self) {
        if !self.open {
            return;
        }
        let mut parents = 1usize;
        for level in &mut self.levels {
            match level {
                Level::Dense { size } => parents *= *size,
                Level::Compressed { pos, idx } => {
                    let end = idx.len() as u64;
                    while pos.len() <= parents {
                        pos.push(end);
                    }
                    parents = idx.len();
                }
            }
        }
        self.open = false;
    }

    pub fn is_finalized(&self) -> bool {
        !self.open
    }

    fn ensure_closed(&self) -> Result<(), StorageError> {
        if self.open {
            Err(StorageError::NotFinalized)
        } else {
            Ok(())
        }
    }

    // Open form: `pos.len() - 1` is the last parent that may still receive
    // coordinates; its range ends at `idx.len()`.
    fn reopen(&mut self) {
        if self.open {
            return;
        }
        for level in &mut self.levels {
            if let Level::Compressed { pos, idx } = level {
                let end = idx.len() as u64;
                pos.pop();
                while pos.len() > 1 && pos[pos.len() - 1] == end {
                    pos.pop();
                }
                if pos.is_empty() {
                    pos.push(0);
                }
            }
        }
        self.open = true;
    }

    /// Position of `coord` under `parent`, appending it when it is not the
    /// most recently appended coordinate of that parent.
    pub(crate) fn find_or_push(&mut self, level: usize, parent: usize, coord: usize) -> Result<usize, StorageError> {
        if let Level::Dense { size } = &self.levels[level] {
            return Ok(parent * size + coord);
        }
        if let Level::Compressed { pos, idx } = &self.levels[level] {
            if pos.len() == parent + 1 && idx.len() as u64 > pos[parent] && idx.last() == Some(&(coord as u64)) {
                return Ok(idx.len() - 1);
            }
        }
        self.push_coord(level, parent, coord)
    }

    /// Appends `coord` under `parent` at a compressed level of open storage.
    pub(crate) fn push_coord(&mut self, level: usize, parent: usize, coord: usize) -> Result<usize, StorageError> {
        self.open = true;
        let ordered = self.format.level(level).ordered;
        let Level::Compressed { pos, idx } = &mut self.levels[level] else {
            return Err(StorageError::InvalidLevel { level, levels: self.format.order() });
        };
        let current = pos.len() - 1;
        if parent < current {
            return Err(StorageError::OutOfOrderAppend { level, parent, coord });
        }
        if parent == current && ordered && idx.len() as u64 > pos[current] {
            if let Some(&last) = idx.last() {
                if last >= coord as u64 {
                    return Err(StorageError::OutOfOrderAppend { level, parent, coord });
                }
            }
        }
        while pos.len() <= parent {
            pos.push(idx.len() as u64);
        }
        grow_for_push(idx);
        idx.push(coord as u64);
        Ok(idx.len() - 1)
    }

    pub(crate) fn open_empty(dims: &[usize], format: TensorFormat) -> Result<Self, StorageError> {
        let mut s = Self::new(dims, format)?;
        if s.format.has_compressed() {
            s.reopen();
        }
        Ok(s)
    }

    pub(crate) fn vals_vec_mut(&mut self) -> &mut Vec<f64> {
        &mut self.vals
    }

    /// Checks every structural invariant: pos monotone and anchored at zero,
    /// sentinel equal to `idx` length, coordinates in bounds, strict ordering
    /// within ranges of ordered levels, and value count equal to positions.
    pub fn check_invariants(&self) -> Result<(), StorageError> {
        self.ensure_closed()?;
        let bad = |msg: String| Err(StorageError::Invariant(msg));
        let mut parents = 1usize;
        for (l, level) in self.levels.iter().enumerate() {
            let dim = self.level_dim(l);
            match level {
                Level::Dense { size } => {
                    if *size != dim {
                        return bad(format!("dense level {l} size {size} != dimension {dim}"));
                    }
                    parents *= size;
                }
                Level::Compressed { pos, idx } => {
                    if pos.len() != parents + 1 {
                        return bad(format!("level {l}: pos has {} entries, expected {}", pos.len(), parents + 1));
                    }
                    if pos[0] != 0 {
                        return bad(format!("level {l}: pos[0] = {}", pos[0]));
                    }
                    if pos.windows(2).any(|w| w[0] > w[1]) {
                        return bad(format!("level {l}: pos is not monotone"));
                    }
                    if pos[parents] as usize != idx.len() {
                        return bad(format!("level {l}: pos sentinel {} != idx length {}", pos[parents], idx.len()));
                    }
                    if let Some(&e) = idx.iter().find(|&&e| e as usize >= dim) {
                        return bad(format!("level {l}: coordinate {e} out of range {dim}"));
                    }
                    if self.format.level(l).ordered {
                        for p in 0..parents {
                            let row = &idx[pos[p] as usize..pos[p + 1] as usize];
                            if row.windows(2).any(|w| w[0] >= w[1]) {
                                return bad(format!("level {l}: coordinates of parent {p} not strictly increasing"));
                            }
                        }
                    }
                    parents = idx.len();
                }
            }
        }
        if self.vals.len() != parents {
            return bad(format!("{} values for {} positions", self.vals.len(), parents));
        }
        Ok(())
    }
}

/// Iterator over `(coordinate, position)` pairs of one level range.
pub enum LevelIter<'a> {
    Dense { base: usize, next: usize, size: usize },
    Compressed { idx: &'a [u64], base: usize, next: usize },
}

impl Iterator for LevelIter<'_> {
    type Item = (usize, usize);

    fn next(&mut self) -> Option<(usize, usize)> {
        match self {
            LevelIter::Dense { base, next, size } => {
                if *next >= *size {
                    return None;
                }
                let c = *next;
                *next += 1;
                Some((c, *base + c))
            }
            LevelIter::Compressed { idx, base, next } => {
                let c = *idx.get(*next)?;
                let p = *base + *next;
                *next += 1;
                Some((c as usize, p))
            }
        }
    }
}

/// Grows `v` so one more element fits, doubling capacity from an initial
/// 1024 entries. Returns the number of bytes newly reserved.
pub(crate) fn grow_for_push<T>(v: &mut Vec<T>) -> usize {
    if v.len() < v.capacity() {
        return 0;
    }
    let extra = v.capacity().max(1024);
    v.reserve_exact(extra);
    extra * std::mem::size_of::<T>()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_csr(n: usize) -> TensorStorage {
        TensorStorage::from_entries(&[n, n], TensorFormat::csr(), (0..n).map(|i| (vec![i, i], 1.0))).unwrap()
    }

    #[test]
    fn new_storage_examples() {
        let d = TensorStorage::new(&[2, 2], TensorFormat::dense(2)).unwrap();
        assert_eq!(d.vals(), &[0.0; 4]);
        let v = TensorStorage::new(&[3], TensorFormat::sparse_vector()).unwrap();
        assert_eq!(v.pos(0).unwrap(), &[0, 0]);
        assert!(v.idx(0).unwrap().is_empty());
        assert!(v.vals().is_empty());
        let csr = TensorStorage::new(&[2, 3], TensorFormat::csr()).unwrap();
        assert_eq!(csr.pos(1).unwrap(), &[0, 0, 0]);
    }

    #[test]
    fn new_storage_errors() {
        assert!(matches!(
            TensorStorage::new(&[2], TensorFormat::csr()),
            Err(StorageError::OrderMismatch { .. })
        ));
        assert!(matches!(
            TensorStorage::new(&[0, 2], TensorFormat::csr()),
            Err(StorageError::InvalidDimension(_))
        ));
    }

    #[test]
    fn identity_structure_by_hand() {
        let id = identity_csr(2);
        assert_eq!(id.pos(1).unwrap(), &[0, 1, 2]);
        assert_eq!(id.idx(1).unwrap(), &[0, 1]);
        assert_eq!(id.locate(&[1, 1]).unwrap(), Some(1));
        assert_eq!(id.locate(&[0, 1]).unwrap(), None);
        assert!(matches!(id.locate(&[2, 0]), Err(StorageError::OutOfRange { .. })));
    }

    #[test]
    fn dense_locate_is_row_major() {
        let d = TensorStorage::new(&[2, 3], TensorFormat::dense(2)).unwrap();
        assert_eq!(d.locate(&[1, 2]).unwrap(), Some(5));
    }

    #[test]
    fn iterate_level_examples() {
        let id = identity_csr(2);
        assert_eq!(id.iterate_level(1, 0).unwrap().collect::<Vec<_>>(), vec![(0, 0)]);
        let d = TensorStorage::new(&[3], TensorFormat::dense(1)).unwrap();
        let coords: Vec<usize> = d.iterate_level(0, 0).unwrap().map(|(c, _)| c).collect();
        assert_eq!(coords, vec![0, 1, 2]);
        let empty = TensorStorage::new(&[2, 2], TensorFormat::csr()).unwrap();
        assert_eq!(empty.iterate_level(1, 1).unwrap().count(), 0);
        assert!(matches!(id.iterate_level(2, 0), Err(StorageError::InvalidLevel { .. })));
        assert!(matches!(id.iterate_level(1, 5), Err(StorageError::InvalidPosition { .. })));
    }

    #[test]
    fn append_rows_in_order() {
        let mut s = TensorStorage::new(&[2, 2], TensorFormat::csr()).unwrap();
        s.append_row(&[0], &[(1, 3.0)]).unwrap();
        s.finalize();
        assert_eq!(s.pos(1).unwrap(), &[0, 1, 1]);
        s.append_row(&[1], &[(0, 2.0), (1, 4.0)]).unwrap();
        s.finalize();
        assert_eq!(s.pos(1).unwrap(), &[0, 1, 3]);
        assert_eq!(s.idx(1).unwrap(), &[1, 0, 1]);
        assert_eq!(s.vals(), &[3.0, 2.0, 4.0]);
        s.check_invariants().unwrap();
        assert!(matches!(s.append_row(&[0], &[(0, 1.0)]), Err(StorageError::OutOfOrderAppend { .. })));
    }

    #[test]
    fn append_requires_finalize_before_reads() {
        let mut s = TensorStorage::new(&[2, 2], TensorFormat::csr()).unwrap();
        s.append_row(&[0], &[(0, 1.0)]).unwrap();
        assert_eq!(s.locate(&[0, 0]), Err(StorageError::NotFinalized));
        s.finalize();
        assert_eq!(s.locate(&[0, 0]).unwrap(), Some(0));
    }

    #[test]
    fn append_csf_fibers() {
        let mut s = TensorStorage::new(&[2, 3, 4], TensorFormat::csf(3)).unwrap();
        s.append_row(&[0, 1], &[(0, 1.0), (3, 2.0)]).unwrap();
        s.append_row(&[0, 2], &[(1, 3.0)]).unwrap();
        s.append_row(&[1, 0], &[(2, 4.0)]).unwrap();
        s.finalize();
        s.check_invariants().unwrap();
        assert_eq!(s.pos(1).unwrap(), &[0, 2, 3]);
        assert_eq!(s.idx(1).unwrap(), &[1, 2, 0]);
        assert_eq!(s.pos(2).unwrap(), &[0, 2, 3, 4]);
        assert_eq!(s.locate(&[0, 2, 1]).unwrap(), Some(2));
    }

    #[test]
    fn duplicates_are_summed() {
        let s = TensorStorage::from_entries(&[2, 2], TensorFormat::csr(), vec![(vec![0, 1], 1.0), (vec![0, 1], 2.5)])
            .unwrap();
        assert_eq!(s.nnz(), 1);
        assert_eq!(s.vals(), &[3.5]);
    }

    #[test]
    fn explicit_zeros_are_stored() {
        let s = TensorStorage::from_entries(&[2, 2], TensorFormat::csr(), vec![(vec![1, 0], 0.0)]).unwrap();
        assert_eq!(s.nnz(), 1);
        assert_eq!(s.locate(&[1, 0]).unwrap(), Some(0));
    }

    #[test]
    fn csc_stores_columns() {
        let s = TensorStorage::from_entries(
            &[2, 3],
            TensorFormat::csc(),
            vec![(vec![0, 2], 1.0), (vec![1, 0], 2.0), (vec![0, 0], 3.0)],
        )
        .unwrap();
        assert_eq!(s.pos(1).unwrap(), &[0, 2, 2, 3]);
        assert_eq!(s.idx(1).unwrap(), &[0, 1, 0]);
        assert_eq!(s.vals(), &[3.0, 2.0, 1.0]);
        let mut e = s.entries();
        e.sort_by(|a, b| a.0.cmp(&b.0));
        assert_eq!(e, vec![(vec![0, 0], 3.0), (vec![0, 2], 1.0), (vec![1, 0], 2.0)]);
    }

    #[test]
    fn invariant_checker_catches_broken_pos() {
        let mut s = identity_csr(3);
        if let Level::Compressed { pos, .. } = &mut s.levels[1] {
            pos[1] = 3;
        }
        assert!(s.check_invariants().is_err());
    }
}
