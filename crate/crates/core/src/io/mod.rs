//! Matrix Market and FROSTT `.tns` readers and writers.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use crate::storage::{StorageError, TensorFormat, TensorStorage};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Storage(#[from] StorageError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FileKind {
    MatrixMarket,
    Tns,
}

impl FileKind {
    /// `.mtx` is Matrix Market, anything else `.tns`.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("mtx") => FileKind::MatrixMarket,
            _ => FileKind::Tns,
        }
    }
}

type Entries = Vec<(Vec<usize>, f64)>;

fn parse_err(line: usize, message: impl Into<String>) -> IoError {
    IoError::Parse { line, message: message.into() }
}

fn parse_index(tok: &str, line: usize) -> Result<usize, IoError> {
    let v: usize = tok.parse().map_err(|_| parse_err(line, format!("`{tok}` is not a coordinate")))?;
    if v == 0 {
        return Err(parse_err(line, "coordinates are 1-based; found 0"));
    }
    Ok(v - 1)
}

fn parse_value(tok: &str, line: usize) -> Result<f64, IoError> {
    tok.parse().map_err(|_| parse_err(line, format!("`{tok}` is not a number")))
}

/// Reads a coordinate Matrix Market matrix, expanding symmetric storage.
pub fn read_matrix_market(reader: impl BufRead) -> Result<(Vec<usize>, Entries), IoError> {
    let mut lines = reader.lines().enumerate().map(|(k, l)| (k + 1, l));
    let (n, header) = match lines.next() {
        Some((n, l)) => (n, l?),
        None => return Err(parse_err(1, "empty file")),
    };
    let words: Vec<String> = header.split_whitespace().map(str::to_ascii_lowercase).collect();
    if words.len() != 5 || words[0] != "%%matrixmarket" || words[1] != "matrix" {
        return Err(parse_err(n, "expected `%%MatrixMarket matrix coordinate <field> <symmetry>`"));
    }
    if words[2] != "coordinate" {
        return Err(parse_err(n, format!("only coordinate matrices are supported, found `{}`", words[2])));
    }
    let pattern = match words[3].as_str() {
        "real" | "integer" | "double" => false,
        "pattern" => true,
        f => return Err(parse_err(n, format!("unsupported field `{f}`"))),
    };
    let symmetric = match words[4].as_str() {
        "general" => false,
        "symmetric" => true,
        s => return Err(parse_err(n, format!("unsupported symmetry `{s}`"))),
    };

    let mut size: Option<(usize, usize, usize)> = None;
    let mut entries = Vec::new();
    let mut read = 0usize;
    for (n, l) in lines {
        let l = l?;
        let t = l.trim();
        if t.is_empty() || t.starts_with('%') {
            continue;
        }
        let toks: Vec<&str> = t.split_whitespace().collect();
        let Some((rows, cols, nnz)) = size else {
            if toks.len() != 3 {
                return Err(parse_err(n, "expected `rows cols entries`"));
            }
            let num = |s: &str| s.parse::<usize>().map_err(|_| parse_err(n, format!("`{s}` is not a count")));
            let (r, c) = (num(toks[0])?, num(toks[1])?);
            if r == 0 || c == 0 {
                return Err(parse_err(n, "dimensions must be positive"));
            }
            size = Some((r, c, num(toks[2])?));
            continue;
        };
        let want = if pattern { 2 } else { 3 };
        if toks.len() != want {
            return Err(parse_err(n, format!("expected {want} fields, found {}", toks.len())));
        }
        let (i, j) = (parse_index(toks[0], n)?, parse_index(toks[1], n)?);
        if i >= rows || j >= cols {
            return Err(parse_err(n, format!("entry ({}, {}) outside {rows}x{cols}", i + 1, j + 1)));
        }
        let v = if pattern { 1.0 } else { parse_value(toks[2], n)? };
        read += 1;
        if read > nnz {
            return Err(parse_err(n, format!("more than the declared {nnz} entries")));
        }
        entries.push((vec![i, j], v));
        if symmetric && i != j {
            entries.push((vec![j, i], v));
        }
    }
    let Some((rows, cols, nnz)) = size else {
        return Err(parse_err(n + 1, "missing size line"));
    };
    if read != nnz {
        return Err(parse_err(n, format!("declared {nnz} entries but found {read}")));
    }
    Ok((vec![rows, cols], entries))
}

/// Reads `.tns` text: one entry per line, 1-based coordinates then the
/// value. A `# dims: d1 d2 ...` comment fixes the extents; otherwise they
/// are the largest coordinates seen.
pub fn read_tns(reader: impl BufRead) -> Result<(Vec<usize>, Entries), IoError> {
    let mut dims: Option<Vec<usize>> = None;
    let mut order: Option<usize> = None;
    let mut entries: Entries = Vec::new();
    let mut last = 0;
    for (k, l) in reader.lines().enumerate() {
        let n = k + 1;
        last = n;
        let l = l?;
        let t = l.trim();
        if let Some(c) = t.strip_prefix('#') {
            if let Some(rest) = c.trim().strip_prefix("dims:") {
                let d: Vec<usize> = rest
                    .split_whitespace()
                    .map(|s| s.parse().map_err(|_| parse_err(n, format!("`{s}` is not a dimension"))))
                    .collect::<Result<_, _>>()?;
                if d.is_empty() || d.contains(&0) {
                    return Err(parse_err(n, "dimensions must be positive"));
                }
                dims = Some(d);
            }
            continue;
        }
        if t.is_empty() {
            continue;
        }
        let toks: Vec<&str> = t.split_whitespace().collect();
        if toks.len() < 2 {
            return Err(parse_err(n, "expected coordinates followed by a value"));
        }
        let o = toks.len() - 1;
        if *order.get_or_insert(o) != o {
            return Err(parse_err(n, format!("expected {} coordinates, found {o}", order.unwrap())));
        }
        let coords = toks[..o].iter().map(|s| parse_index(s, n)).collect::<Result<Vec<_>, _>>()?;
        let v = parse_value(toks[o], n)?;
        if let Some(d) = &dims {
            if d.len() != o {
                return Err(parse_err(n, format!("entry has {o} coordinates but dims declare {}", d.len())));
            }
            if let Some(m) = (0..o).find(|&m| coords[m] >= d[m]) {
                return Err(parse_err(n, format!("coordinate {} exceeds dimension {}", coords[m] + 1, d[m])));
            }
        }
        entries.push((coords, v));
    }
    let dims = match (dims, order) {
        (Some(d), _) => d,
        (None, Some(o)) => (0..o).map(|m| entries.iter().map(|e| e.0[m] + 1).max().unwrap_or(1)).collect(),
        (None, None) => return Err(parse_err(last.max(1), "no entries and no `# dims:` comment")),
    };
    Ok((dims, entries))
}

pub fn load_matrix_market(path: impl AsRef<Path>) -> Result<TensorStorage, IoError> {
    load_matrix_market_as(path, TensorFormat::csr())
}

pub fn load_matrix_market_as(path: impl AsRef<Path>, format: TensorFormat) -> Result<TensorStorage, IoError> {
    let (dims, entries) = read_matrix_market(BufReader::new(File::open(path)?))?;
    Ok(TensorStorage::from_entries(&dims, format, entries)?)
}

/// Loads a `.tns` file; duplicate coordinates are summed.
pub fn load_tns(path: impl AsRef<Path>, format: TensorFormat) -> Result<TensorStorage, IoError> {
    let (dims, entries) = read_tns(BufReader::new(File::open(path)?))?;
    Ok(TensorStorage::from_entries(&dims, format, entries)?)
}

/// Loads either file kind, chosen by extension.
pub fn load(path: impl AsRef<Path>, format: TensorFormat) -> Result<TensorStorage, IoError> {
    match FileKind::from_path(path.as_ref()) {
        FileKind::MatrixMarket => load_matrix_market_as(path, format),
        FileKind::Tns => load_tns(path, format),
    }
}

pub fn write_matrix_market(mut w: impl Write, s: &TensorStorage) -> Result<(), IoError> {
    if s.order() != 2 {
        return Err(StorageError::OrderMismatch { expected: 2, found: s.order() }.into());
    }
    writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
    writeln!(w, "{} {} {}", s.dims()[0], s.dims()[1], s.nnz())?;
    for (c, v) in s.entries() {
        writeln!(w, "{} {} {v:?}", c[0] + 1, c[1] + 1)?;
    }
    Ok(())
}

pub fn write_tns(mut w: impl Write, s: &TensorStorage) -> Result<(), IoError> {
    let dims: Vec<String> = s.dims().iter().map(|d| d.to_string()).collect();
    writeln!(w, "# dims: {}", dims.join(" "))?;
    for (c, v) in s.entries() {
        let coords: Vec<String> = c.iter().map(|x| (x + 1).to_string()).collect();
        writeln!(w, "{} {v:?}", coords.join(" "))?;
    }
    Ok(())
}

pub fn store(path: impl AsRef<Path>, s: &TensorStorage, kind: FileKind) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path)?);
    match kind {
        FileKind::MatrixMarket => write_matrix_market(&mut w, s)?,
        FileKind::Tns => write_tns(&mut w, s)?,
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mtx(text: &str) -> Result<TensorStorage, IoError> {
        let (d, e) = read_matrix_market(text.as_bytes())?;
        Ok(TensorStorage::from_entries(&d, TensorFormat::csr(), e)?)
    }

    #[test]
    fn matrix_market_examples() {
        let eye = mtx("%%MatrixMarket matrix coordinate real general\n% c\n2 2 2\n1 1 1.0\n2 2 1\n").unwrap();
        assert_eq!(eye.pos(1).unwrap(), &[0, 1, 2]);
        assert_eq!(eye.idx(1).unwrap(), &[0, 1]);
        assert_eq!(eye.vals(), &[1.0, 1.0]);
        let sym = mtx("%%MatrixMarket matrix coordinate real symmetric\n3 3 1\n3 1 2.5\n").unwrap();
        assert_eq!(sym.nnz(), 2);
        let pat = mtx("%%MatrixMarket matrix coordinate pattern general\n2 2 1\n1 2\n").unwrap();
        assert_eq!(pat.vals(), &[1.0]);
        let int = mtx("%%MatrixMarket matrix coordinate integer general\n2 2 1\n1 2 7\n").unwrap();
        assert_eq!(int.vals(), &[7.0]);
    }

    #[test]
    fn matrix_market_errors() {
        let err = mtx("%%MatrixMarket matrix array real general\n2 2\n").unwrap_err();
        assert!(matches!(err, IoError::Parse { line: 1, .. }), "{err}");
        let err = mtx("%%MatrixMarket matrix coordinate real general\n2 2 1\n0 1 1.0\n").unwrap_err();
        assert!(matches!(err, IoError::Parse { line: 3, .. }), "{err}");
        let err = mtx("%%MatrixMarket matrix coordinate real general\n2 2 2\n1 1 x\n").unwrap_err();
        assert!(matches!(err, IoError::Parse { line: 3, .. }), "{err}");
        assert!(mtx("%%MatrixMarket matrix coordinate real general\n2 2 2\n1 1 1\n").is_err());
        assert!(mtx("hello\n").is_err());
    }

    #[test]
    fn tns_examples() {
        let (d, e) = read_tns("1 1 1 1.0\n2 3 1 2.0\n2 3 2 3.0\n".as_bytes()).unwrap();
        assert_eq!(d, vec![2, 3, 2]);
        let s = TensorStorage::from_entries(&d, TensorFormat::csf(3), e).unwrap();
        assert_eq!(s.nnz(), 3);
        let (d, e) = read_tns("# dims: 4 4\n1 2 1.0\n1 2 2.0\n".as_bytes()).unwrap();
        assert_eq!(d, vec![4, 4]);
        let s = TensorStorage::from_entries(&d, TensorFormat::csr(), e).unwrap();
        assert_eq!(s.vals(), &[3.0]);
        assert!(matches!(read_tns("1 0 1.0\n".as_bytes()), Err(IoError::Parse { line: 1, .. })));
        assert!(read_tns("1 1 1.0\n1 1\n1 1 1 1\n".as_bytes()).is_err());
        assert!(read_tns("".as_bytes()).is_err());
    }

    #[test]
    fn store_and_load_files() {
        let dir = std::env::temp_dir().join(format!("cin-io-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let s = TensorStorage::from_entries(&[3, 4], TensorFormat::csr(), [(vec![0, 3], 0.1), (vec![2, 0], -2.0)]).unwrap();
        let p = dir.join("a.mtx");
        store(&p, &s, FileKind::MatrixMarket).unwrap();
        assert_eq!(load(&p, TensorFormat::csr()).unwrap(), s);
        let empty = TensorStorage::new(&[2, 2, 2], TensorFormat::csf(3)).unwrap();
        let p = dir.join("e.tns");
        store(&p, &empty, FileKind::Tns).unwrap();
        assert_eq!(load(&p, TensorFormat::csf(3)).unwrap(), empty);
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
