//! Persistent best-choice database.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use super::TuneError;
use crate::variants::{TuneParams, Variant};

pub const DB_HEADER: &str = "boda-tunedb v1";

/// Best known implementation of one operation signature.
#[derive(Debug, Clone, PartialEq)]
pub struct TuneRecord {
    pub signature: String,
    pub variant: Variant,
    pub params: Option<TuneParams>,
    pub cost: f64,
    /// How `cost` was obtained, e.g. `model:interp`.
    pub objective: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TuneDb {
    records: BTreeMap<String, TuneRecord>,
}

impl TuneDb {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, signature: &str) -> Option<&TuneRecord> {
        self.records.get(signature)
    }

    /// Keeps `rec` unless an equal-or-cheaper record under the same
    /// objective is already stored.
    pub fn insert(&mut self, rec: TuneRecord) {
        match self.records.get(&rec.signature) {
            Some(old) if old.objective == rec.objective && old.cost <= rec.cost => {}
            _ => {
                self.records.insert(rec.signature.clone(), rec);
            }
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> impl Iterator<Item = &TuneRecord> {
        self.records.values()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{DB_HEADER}").unwrap();
        for r in self.records.values() {
            let params = r.params.map(|p| p.to_string()).unwrap_or_else(|| "-".into());
            writeln!(s, "{}\t{}\t{params}\t{}\t{}", r.signature, r.variant, r.cost, r.objective).unwrap();
        }
        s
    }

    /// Parses the whole text or nothing.
    pub fn from_text(text: &str) -> Result<Self, TuneError> {
        let mut lines = text.lines();
        let bad = |detail: String| TuneError::FormatVersionMismatch { detail };
        match lines.next() {
            Some(h) if h == DB_HEADER => {}
            Some(h) => return Err(bad(format!("header `{h}`, expected `{DB_HEADER}`"))),
            None => return Err(bad("empty file".into())),
        }
        let mut db = TuneDb::new();
        for (i, line) in lines.enumerate() {
            let lineno = i + 2;
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 5 {
                return Err(bad(format!("line {lineno}: expected 5 fields, got {}", f.len())));
            }
            let variant: Variant = f[1].parse().map_err(|e| bad(format!("line {lineno}: {e}")))?;
            let params = match f[2] {
                "-" => None,
                p => Some(p.parse::<TuneParams>().map_err(|e| bad(format!("line {lineno}: {e}")))?),
            };
            let cost: f64 = f[3].parse().map_err(|_| bad(format!("line {lineno}: bad cost `{}`", f[3])))?;
            if !(cost.is_finite() && cost >= 0.0) || params.is_some() != variant.is_tunable() {
                return Err(bad(format!("line {lineno}: inconsistent record")));
            }
            if db.records.contains_key(f[0]) {
                return Err(bad(format!("line {lineno}: duplicate signature `{}`", f[0])));
            }
            db.records.insert(
                f[0].to_string(),
                TuneRecord { signature: f[0].to_string(), variant, params, cost, objective: f[4].to_string() },
            );
        }
        Ok(db)
    }

    /// Writes atomically: a sibling temp file renamed over `path`.
    pub fn save(&self, path: &Path) -> Result<(), TuneError> {
        let io = |e: std::io::Error| TuneError::Io(format!("{}: {e}", path.display()));
        let dir = match path.parent() {
            Some(d) if !d.as_os_str().is_empty() => d,
            _ => Path::new("."),
        };
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
        tmp.write_all(self.to_text().as_bytes()).map_err(io)?;
        tmp.as_file().sync_all().map_err(io)?;
        tmp.persist(path).map_err(|e| io(e.error))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TuneError> {
        let text = std::fs::read_to_string(path).map_err(|e| TuneError::Io(format!("{}: {e}", path.display())))?;
        Self::from_text(&text)
    }
}
