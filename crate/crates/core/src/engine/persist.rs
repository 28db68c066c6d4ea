//! On-disk corpus directory:
//!
//! ```text
//! <dir>/<coverage-hash>.stc
//! <dir>/crashes/<dedup-key>/{original.stc, minimized.stc, report.json}
//! <dir>/stats.json
//! <dir>/spec.json        snapshot of the spec the entries were written for
//! ```

use std::collections::HashSet;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;

use super::crash::CrashReport;
use super::migrate::{migrate_corpus, MigrationError, MigrationReport};
use super::stats::CampaignStats;
use crate::spec::{parse_spec, SpecError, Specification};
use crate::testcase::Testcase;
use crate::wire::{self, WireError};

pub const ENTRY_EXT: &str = "stc";
pub const SNAPSHOT: &str = "spec.json";
pub const STATS: &str = "stats.json";
pub const CRASHES: &str = "crashes";

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Wire { path: PathBuf, source: WireError },
    #[error("{path}: {source}")]
    Snapshot { path: PathBuf, source: SpecError },
    #[error(transparent)]
    Migration(#[from] MigrationError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> PersistError + '_ {
    move |source| PersistError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Handle on a corpus directory. Tracks entry names written so far so that
/// entries with equal coverage get distinct files.
#[derive(Debug)]
pub struct CorpusDir {
    root: PathBuf,
    names: HashSet<String>,
}

/// Testcases read back from a directory.
#[derive(Debug, Default)]
pub struct Loaded {
    pub testcases: Vec<Testcase>,
    pub migration: Option<MigrationReport>,
}

impl CorpusDir {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, PersistError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(io_err(&root))?;
        Ok(CorpusDir {
            root,
            names: HashSet::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn entry_paths(&self) -> Result<Vec<PathBuf>, PersistError> {
        let mut paths = Vec::new();
        for e in fs::read_dir(&self.root).map_err(io_err(&self.root))? {
            let p = e.map_err(io_err(&self.root))?.path();
            if p.extension().and_then(|x| x.to_str()) == Some(ENTRY_EXT) {
                paths.push(p);
            }
        }
        paths.sort();
        Ok(paths)
    }

    pub fn snapshot(&self) -> Result<Option<Specification>, PersistError> {
        let p = self.root.join(SNAPSHOT);
        match fs::read_to_string(&p) {
            Ok(text) => parse_spec(&text)
                .map(Some)
                .map_err(|source| PersistError::Snapshot { path: p, source }),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(io_err(&p)(e)),
        }
    }

    pub fn write_snapshot(&self, spec: &Specification) -> Result<(), PersistError> {
        let p = self.root.join(SNAPSHOT);
        fs::write(&p, spec.inlined().to_json()).map_err(io_err(&p))
    }

    /// Reads every entry, migrating from the stored snapshot when the spec
    /// changed since it was written.
    pub fn load(&self, spec: &Specification) -> Result<Loaded, PersistError> {
        let snapshot = self.snapshot()?;
        let written_for = snapshot.as_ref().unwrap_or(spec);
        let mut testcases = Vec::new();
        for p in self.entry_paths()? {
            let bytes = fs::read(&p).map_err(io_err(&p))?;
            let t = wire::deserialize_unchecked(&bytes).map_err(|source| PersistError::Wire {
                path: p.clone(),
                source,
            })?;
            if t.is_well_formed(written_for) {
                testcases.push(t);
            } else {
                log::warn!("{}: not well formed, skipped", p.display());
            }
        }
        match snapshot {
            Some(old) if old.to_json() != spec.inlined().to_json() => {
                let (kept, report) = migrate_corpus(&testcases, &old, spec)?;
                Ok(Loaded {
                    testcases: kept,
                    migration: Some(report),
                })
            }
            _ => Ok(Loaded {
                testcases,
                migration: None,
            }),
        }
    }

    /// Removes every entry file.
    pub fn clear_entries(&mut self) -> Result<(), PersistError> {
        for p in self.entry_paths()? {
            fs::remove_file(&p).map_err(io_err(&p))?;
        }
        self.names.clear();
        Ok(())
    }

    /// Writes an entry named after its coverage fingerprint; a `-N` suffix
    /// separates entries with identical coverage. Returns the file name.
    pub fn write_entry(&mut self, fingerprint: u64, t: &Testcase) -> Result<String, PersistError> {
        let base = format!("{fingerprint:016x}");
        let mut name = format!("{base}.{ENTRY_EXT}");
        let mut n = 1;
        while self.names.contains(&name) {
            name = format!("{base}-{n}.{ENTRY_EXT}");
            n += 1;
        }
        let p = self.root.join(&name);
        fs::write(&p, wire::serialize(t)).map_err(io_err(&p))?;
        self.names.insert(name.clone());
        Ok(name)
    }

    pub fn write_crash(&self, spec: &Specification, r: &CrashReport) -> Result<PathBuf, PersistError> {
        let dir = self.root.join(CRASHES).join(r.key.slug());
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let files = [
            ("original.stc", wire::serialize(&r.original)),
            ("minimized.stc", wire::serialize(&r.minimized)),
            (
                "report.json",
                serde_json::to_vec_pretty(&r.to_json(spec)).expect("plain data"),
            ),
        ];
        for (name, bytes) in files {
            let p = dir.join(name);
            fs::write(&p, bytes).map_err(io_err(&p))?;
        }
        Ok(dir)
    }

    pub fn write_stats(&self, stats: &CampaignStats) -> Result<(), PersistError> {
        let p = self.root.join(STATS);
        let tmp = self.root.join(".stats.json.tmp");
        fs::write(&tmp, stats.to_json()).map_err(io_err(&tmp))?;
        fs::rename(&tmp, &p).map_err(io_err(&p))
    }
}

/// Hash of the corpus as stored: sorted (file name, content digest) pairs.
pub fn corpus_digest(dir: &Path) -> Result<String, PersistError> {
    let d = CorpusDir {
        root: dir.to_path_buf(),
        names: HashSet::new(),
    };
    let mut h = Sha256::new();
    for p in d.entry_paths()? {
        let bytes = fs::read(&p).map_err(io_err(&p))?;
        h.update(p.file_name().expect("entry has a name").as_encoded_bytes());
        h.update(Sha256::digest(&bytes));
    }
    Ok(hex::encode(h.finalize()))
}
