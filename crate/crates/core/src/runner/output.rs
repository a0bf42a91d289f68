//! CSV, metadata and snapshot writers.

use std::fmt::Write as _;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub(crate) fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

/// CSV text with a leading `# config_hash=` comment and a header row.
#[derive(Debug, Clone)]
pub struct Csv {
    text: String,
    columns: usize,
}

impl Csv {
    pub fn new(config_hash: &str, header: &[&str]) -> Self {
        let mut text = format!("# config_hash={config_hash}\n");
        text.push_str(&header.join(","));
        text.push('\n');
        Self {
            text,
            columns: header.len(),
        }
    }

    /// Appends a row; floats use the shortest round-trip representation.
    pub fn row(&mut self, cells: &[Cell]) {
        debug_assert_eq!(cells.len(), self.columns);
        for (i, c) in cells.iter().enumerate() {
            if i > 0 {
                self.text.push(',');
            }
            match c {
                Cell::F(v) => write!(self.text, "{v:?}").unwrap(),
                Cell::I(v) => write!(self.text, "{v}").unwrap(),
                Cell::U(v) => write!(self.text, "{v}").unwrap(),
            }
        }
        self.text.push('\n');
    }

    pub fn text(&self) -> &str {
        &self.text
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Cell {
    F(f64),
    I(i64),
    U(u64),
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::F(v)
    }
}
impl From<i64> for Cell {
    fn from(v: i64) -> Self {
        Cell::I(v)
    }
}
impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::U(v as u64)
    }
}

#[macro_export]
#[doc(hidden)]
macro_rules! cells {
    ($($x:expr),* $(,)?) => { &[$($crate::runner::output::Cell::from($x)),*] };
}

#[derive(Debug, Clone, Serialize, PartialEq, Eq)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| io_err(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

/// Output directory plus the manifest of files written into it.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    pub files: Vec<FileEntry>,
}

impl OutputDir {
    pub fn create(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| io_err(&root, e))?;
        Ok(Self {
            root,
            files: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.root.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        }
        fs::write(&path, bytes).map_err(|e| io_err(&path, e))?;
        self.files.retain(|f| f.path != name);
        self.files.push(FileEntry {
            path: name.to_string(),
            bytes: bytes.len() as u64,
            sha256: sha256_hex(bytes),
        });
        Ok(path)
    }

    pub fn write_csv(&mut self, name: &str, csv: &Csv) -> Result<PathBuf> {
        self.write(name, csv.text().as_bytes())
    }
}

pub const SNAPSHOT_MAGIC: &str = "ONSIGMA-SNAP";
pub const SNAPSHOT_VERSION: u32 = 1;

/// Real-space field snapshot: `N` components of `M×M` values.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSnapshot {
    pub modes: usize,
    pub mass: f64,
    pub coupling: f64,
    pub time: f64,
    /// `fields[i][j1 * M + j2]`.
    pub fields: Vec<Vec<f64>>,
}

impl FieldSnapshot {
    /// One ASCII header line
    /// `ONSIGMA-SNAP <version> <M> <N> <m> <λ> <time> <count>` followed by
    /// `count = N·M²` little-endian `f64`, component-major, row-major within
    /// a component.
    pub fn encode(&self) -> Vec<u8> {
        let count: usize = self.fields.iter().map(Vec::len).sum();
        let header = format!(
            "{SNAPSHOT_MAGIC} {SNAPSHOT_VERSION} {} {} {:?} {:?} {:?} {count}\n",
            self.modes,
            self.fields.len(),
            self.mass,
            self.coupling,
            self.time
        );
        let mut out = header.into_bytes();
        out.reserve(8 * count);
        for f in &self.fields {
            for v in f {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let bad = |why: &str| Error::Config(format!("malformed snapshot: {why}"));
        let nl = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| bad("no header line"))?;
        let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| bad("header is not ASCII"))?;
        let fields: Vec<&str> = header.split(' ').collect();
        if fields.len() != 8 || fields[0] != SNAPSHOT_MAGIC {
            return Err(bad("header must have 8 fields starting with the magic"));
        }
        if fields[1] != SNAPSHOT_VERSION.to_string() {
            return Err(bad("unsupported version"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad("bad number"));
        let int = |s: &str| s.parse::<usize>().map_err(|_| bad("bad integer"));
        let (m, n, count) = (int(fields[2])?, int(fields[3])?, int(fields[7])?);
        let data = &bytes[nl + 1..];
        if count != n * m * m || data.len() != 8 * count {
            return Err(bad("payload size does not match the header"));
        }
        let values: Vec<f64> = data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        Ok(Self {
            modes: m,
            mass: num(fields[4])?,
            coupling: num(fields[5])?,
            time: num(fields[6])?,
            fields: values.chunks(m * m).map(<[f64]>::to_vec).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let mut csv = Csv::new("abc", &["N", "x"]);
        csv.row(cells![8usize, 0.1]);
        csv.row(cells![-3i64, 1e-20]);
        assert_eq!(csv.text(), "# config_hash=abc\nN,x\n8,0.1\n-3,1e-20\n");
    }

    #[test]
    fn snapshot_round_trip() {
        let snap = FieldSnapshot {
            modes: 2,
            mass: 1.0,
            coupling: 0.5,
            time: 3.25,
            fields: vec![vec![1.0, -2.0, 3.5, 0.0], vec![0.1, 0.2, 0.3, 0.4]],
        };
        let bytes = snap.encode();
        let header_end = bytes.iter().position(|&b| b == b'\n').unwrap();
        assert_eq!(
            std::str::from_utf8(&bytes[..header_end]).unwrap(),
            "ONSIGMA-SNAP 1 2 2 1.0 0.5 3.25 8"
        );
        assert_eq!(bytes.len(), header_end + 1 + 64);
        assert_eq!(&bytes[header_end + 1..header_end + 9], &1.0f64.to_le_bytes());
        assert_eq!(FieldSnapshot::decode(&bytes).unwrap(), snap);
        assert!(FieldSnapshot::decode(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn manifest_checksums() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutputDir::create(dir.path()).unwrap();
        let p = out.write("a/b.txt", b"hello").unwrap();
        assert_eq!(out.files[0].sha256, sha256_file(&p).unwrap());
        assert_eq!(
            out.files[0].sha256,
            "2cf24dba5fb0a30e26e83b2ac5b9e29e1b161e5c1fa7425e73043362938b9824"
        );
    }
}
