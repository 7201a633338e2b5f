//! Run directory layout, provenance stamps and artifact writers.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anno_audit_core::pipeline::{sha256_hex, RunManifest};
use anno_audit_core::{Error, Result};
use serde::Serialize;

pub fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| io_err(root, e))?;
        Ok(Self { root: root.to_path_buf() })
    }

    /// `root/<parts...>`, creating parent directories.
    pub fn file(&self, parts: &[&str]) -> Result<PathBuf> {
        let path = parts.iter().fold(self.root.clone(), |p, s| p.join(s));
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        }
        Ok(path)
    }

    pub fn dir(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn covariates(&self) -> PathBuf {
        self.root.join("data").join("covariates.csv")
    }

    pub fn codebook(&self) -> PathBuf {
        self.root.join("data").join("codebook.json")
    }

    pub fn data_manifest(&self) -> PathBuf {
        self.root.join("data_manifest.json")
    }

    pub fn model(&self, code: &str) -> PathBuf {
        self.root.join("models").join(format!("{code}.json"))
    }

    pub fn annotations(&self, source: &str) -> PathBuf {
        self.root.join("annotations").join(format!("{source}.json"))
    }

    pub fn augmented_units(&self) -> PathBuf {
        self.root.join("augmented").join("units.jsonl")
    }

    /// Annotation sources present in the run, sorted by name.
    pub fn annotation_sources(&self) -> Result<Vec<String>> {
        let dir = self.dir("annotations");
        if !dir.exists() {
            return Ok(Vec::new());
        }
        let mut out: Vec<String> = fs::read_dir(&dir)
            .map_err(|e| io_err(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .filter_map(|p| p.file_stem().and_then(|s| s.to_str()).map(str::to_string))
            .collect();
        out.sort();
        Ok(out)
    }

    pub fn write_manifest(&self, manifest: &RunManifest) -> Result<PathBuf> {
        let path = self.file(&["manifests", &format!("{}.json", manifest.command)])?;
        write_json(&path, manifest)?;
        Ok(path)
    }
}

/// Hashes of the configuration and data a report was produced from.
#[derive(Clone, Debug, Serialize)]
pub struct Stamp {
    pub config_sha256: String,
    pub data_manifest_sha256: String,
}

impl Stamp {
    pub fn comments(&self) -> Vec<String> {
        vec![
            format!("config_sha256={}", self.config_sha256),
            format!("data_manifest_sha256={}", self.data_manifest_sha256),
        ]
    }

    pub fn write_comments(&self, w: &mut impl Write) -> Result<()> {
        for c in self.comments() {
            writeln!(w, "# {c}").map_err(|e| io_err(Path::new("<report>"), e))?;
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct Stamped<'a, T: Serialize> {
    #[serde(flatten)]
    stamp: &'a Stamp,
    report: &'a T,
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s).map_err(|e| io_err(path, e))
}

pub fn write_stamped_json<T: Serialize>(path: &Path, stamp: &Stamp, report: &T) -> Result<()> {
    write_json(path, &Stamped { stamp, report })
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Counts and input hashes recorded by `ingest`.
#[derive(Clone, Debug, Serialize)]
pub struct DataManifest {
    pub inputs: BTreeMap<String, String>,
    pub interviews_by_split: BTreeMap<String, usize>,
    pub qa_pairs: usize,
    pub codes: usize,
    pub gold_cells: usize,
    pub gold_positives_by_code: BTreeMap<String, usize>,
    pub covariate_records: usize,
    pub incomplete_covariate_records: usize,
    pub holdout_seed: u64,
    pub holdout_assigned: bool,
}
