use std::fmt;

use super::StorageError;

/// How one storage level holds its coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LevelKind {
    /// Every coordinate in `0..dim` has a position; located by arithmetic.
    Dense,
    /// Only stored coordinates are kept, in `pos`/`idx` arrays.
    Compressed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ModeFormat {
    pub kind: LevelKind,
    /// Coordinates within each position range of a compressed level strictly increase.
    pub ordered: bool,
}

impl ModeFormat {
    pub const DENSE: ModeFormat = ModeFormat { kind: LevelKind::Dense, ordered: true };
    pub const COMPRESSED: ModeFormat = ModeFormat { kind: LevelKind::Compressed, ordered: true };

    pub fn unordered_compressed() -> Self {
        ModeFormat { kind: LevelKind::Compressed, ordered: false }
    }

    pub fn is_dense(&self) -> bool {
        self.kind == LevelKind::Dense
    }

    pub fn is_compressed(&self) -> bool {
        self.kind == LevelKind::Compressed
    }
}

/// Per-level formats plus the order in which tensor modes are stored.
///
/// `mode_formats[l]` describes storage level `l`, which holds tensor mode
/// `mode_ordering[l]`. CSR is `{Dense, Compressed}` with ordering `[0, 1]`;
/// CSC is the same level formats with ordering `[1, 0]`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TensorFormat {
    mode_formats: Vec<ModeFormat>,
    mode_ordering: Vec<usize>,
}

impl TensorFormat {
    pub fn new(mode_formats: Vec<ModeFormat>, mode_ordering: Vec<usize>) -> Result<Self, StorageError> {
        if mode_formats.len() != mode_ordering.len() {
            return Err(StorageError::OrderMismatch {
                expected: mode_formats.len(),
                found: mode_ordering.len(),
            });
        }
        let mut seen = vec![false; mode_ordering.len()];
        for &m in &mode_ordering {
            if m >= seen.len() || seen[m] {
                return Err(StorageError::InvalidModeOrdering(mode_ordering.clone()));
            }
            seen[m] = true;
        }
        Ok(TensorFormat { mode_formats, mode_ordering })
    }

    /// Levels stored in natural mode order.
    pub fn with_levels(mode_formats: Vec<ModeFormat>) -> Self {
        let n = mode_formats.len();
        TensorFormat { mode_formats, mode_ordering: (0..n).collect() }
    }

    pub fn dense(order: usize) -> Self {
        Self::with_levels(vec![ModeFormat::DENSE; order])
    }

    pub fn csr() -> Self {
        Self::with_levels(vec![ModeFormat::DENSE, ModeFormat::COMPRESSED])
    }

    pub fn csc() -> Self {
        TensorFormat {
            mode_formats: vec![ModeFormat::DENSE, ModeFormat::COMPRESSED],
            mode_ordering: vec![1, 0],
        }
    }

    pub fn dcsr() -> Self {
        Self::with_levels(vec![ModeFormat::COMPRESSED; 2])
    }

    pub fn sparse_vector() -> Self {
        Self::with_levels(vec![ModeFormat::COMPRESSED])
    }

    /// Compressed sparse fiber: a dense outer level followed by compressed levels.
    pub fn csf(order: usize) -> Self {
        let mut levels = vec![ModeFormat::COMPRESSED; order];
        if order > 1 {
            levels[0] = ModeFormat::DENSE;
        }
        Self::with_levels(levels)
    }

    /// All levels compressed.
    pub fn all_compressed(order: usize) -> Self {
        Self::with_levels(vec![ModeFormat::COMPRESSED; order])
    }

    /// Resolves a format name (`dense`, `csr`, `csc`, `dcsr`, `csf`, `sparse`)
    /// for a tensor of the given order.
    pub fn from_name(name: &str, order: usize) -> Result<Self, StorageError> {
        let unknown = || StorageError::UnknownFormat { name: name.to_string(), order };
        match name {
            "dense" => Ok(Self::dense(order)),
            "csr" | "csf" => Ok(Self::csf(order)),
            "csc" if order == 2 => Ok(Self::csc()),
            "dcsr" | "sparse" => Ok(Self::all_compressed(order)),
            _ => Err(unknown()),
        }
    }

    pub fn order(&self) -> usize {
        self.mode_formats.len()
    }

    pub fn mode_formats(&self) -> &[ModeFormat] {
        &self.mode_formats
    }

    pub fn mode_ordering(&self) -> &[usize] {
        &self.mode_ordering
    }

    pub fn level(&self, level: usize) -> ModeFormat {
        self.mode_formats[level]
    }

    /// Storage level that holds tensor mode `mode`.
    pub fn level_of_mode(&self, mode: usize) -> usize {
        self.mode_ordering.iter().position(|&m| m == mode).expect("mode in range")
    }

    pub fn is_all_dense(&self) -> bool {
        self.mode_formats.iter().all(ModeFormat::is_dense)
    }

    pub fn has_compressed(&self) -> bool {
        self.mode_formats.iter().any(ModeFormat::is_compressed)
    }

    pub fn is_ordered(&self) -> bool {
        self.mode_formats.iter().all(|m| m.ordered)
    }

    pub(crate) fn set_ordered(&mut self, ordered: bool) {
        for m in &mut self.mode_formats {
            if m.is_compressed() {
                m.ordered = ordered;
            }
        }
    }
}

impl fmt::Display for TensorFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (l, m) in self.mode_formats.iter().enumerate() {
            if l > 0 {
                write!(f, ",")?;
            }
            match (m.kind, m.ordered) {
                (LevelKind::Dense, _) => write!(f, "dense")?,
                (LevelKind::Compressed, true) => write!(f, "compressed")?,
                (LevelKind::Compressed, false) => write!(f, "compressed-unordered")?,
            }
        }
        write!(f, "}}")?;
        if self.mode_ordering.iter().enumerate().any(|(l, &m)| l != m) {
            write!(f, " order {:?}", self.mode_ordering)?;
        }
        Ok(())
    }
}
