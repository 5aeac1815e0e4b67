use std::collections::HashSet;
use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_CLASSES: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Class {
    Negative,
    Positive,
    Surprise,
}

impl Class {
    pub const ALL: [Class; NUM_CLASSES] = [Class::Negative, Class::Positive, Class::Surprise];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Class> {
        Class::ALL.get(index).copied()
    }

    /// Maps a dataset emotion label onto the three merged classes.
    /// Labels outside the merged protocol (e.g. "others") give `None`.
    pub fn from_emotion(raw: &str) -> Option<Class> {
        match raw.trim().to_ascii_lowercase().as_str() {
            "happiness" | "happy" | "positive" => Some(Class::Positive),
            "surprise" => Some(Class::Surprise),
            "sadness" | "sad" | "disgust" | "contempt" | "fear" | "anger" | "angry" | "repression" | "negative" => {
                Some(Class::Negative)
            }
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Class::Negative => "negative",
            Class::Positive => "positive",
            Class::Surprise => "surprise",
        }
    }
}

impl fmt::Display for Class {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Dataset {
    #[serde(rename = "SAMM")]
    Samm,
    #[serde(rename = "SMIC")]
    Smic,
    #[serde(rename = "CASME2")]
    Casme2,
    #[serde(rename = "CASME3")]
    Casme3,
    #[serde(rename = "SYNTH")]
    Synth,
}

impl Dataset {
    pub fn tag(self) -> &'static str {
        match self {
            Dataset::Samm => "SAMM",
            Dataset::Smic => "SMIC",
            Dataset::Casme2 => "CASME2",
            Dataset::Casme3 => "CASME3",
            Dataset::Synth => "SYNTH",
        }
    }
}

impl fmt::Display for Dataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// One manifest row. Paths are kept as written; relative paths resolve
/// against the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub sample_id: String,
    pub subject_id: String,
    pub dataset: Dataset,
    pub frames_dir: PathBuf,
    pub onset: usize,
    pub apex: Option<usize>,
    pub offset: usize,
    pub raw_label: String,
    pub class: Class,
    pub landmarks_path: PathBuf,
}

impl ManifestEntry {
    /// Subject id namespaced by dataset, e.g. `SAMM/006`.
    pub fn subject_key(&self) -> String {
        format!("{}/{}", self.dataset, self.subject_id)
    }
}

#[derive(Debug, Deserialize)]
struct Row {
    sample_id: String,
    subject_id: String,
    dataset: Dataset,
    frames_dir: PathBuf,
    onset: usize,
    apex: Option<usize>,
    offset: usize,
    raw_label: String,
    class: Option<usize>,
    landmarks_path: PathBuf,
}

#[derive(Debug, Serialize)]
struct OutRow<'a> {
    sample_id: &'a str,
    subject_id: &'a str,
    dataset: Dataset,
    frames_dir: &'a Path,
    onset: usize,
    apex: Option<usize>,
    offset: usize,
    raw_label: &'a str,
    class: usize,
    landmarks_path: &'a Path,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    /// Directory that relative paths are resolved against.
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn new(entries: Vec<ManifestEntry>, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let m = Manifest {
            entries,
            base_dir: base_dir.into(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)
            .map_err(|e| Error::Manifest(format!("cannot open {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_reader(file, base)
    }

    pub fn from_reader(reader: impl Read, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut entries = Vec::new();
        for (line, row) in rdr.deserialize::<Row>().enumerate() {
            let row = row.map_err(|e| Error::Manifest(format!("row {}: {e}", line + 1)))?;
            let mapped = Class::from_emotion(&row.raw_label);
            let class = match (row.class, mapped) {
                (Some(c), m) => {
                    let c = Class::from_index(c)
                        .ok_or_else(|| Error::Manifest(format!("sample {}: class {c} out of range", row.sample_id)))?;
                    if m.is_some_and(|m| m != c) {
                        return Err(Error::Manifest(format!(
                            "sample {}: class {c} contradicts label `{}`",
                            row.sample_id, row.raw_label
                        )));
                    }
                    c
                }
                (None, Some(m)) => m,
                (None, None) => {
                    return Err(Error::Manifest(format!(
                        "sample {}: label `{}` has no class mapping",
                        row.sample_id, row.raw_label
                    )))
                }
            };
            entries.push(ManifestEntry {
                sample_id: row.sample_id,
                subject_id: row.subject_id,
                dataset: row.dataset,
                frames_dir: row.frames_dir,
                onset: row.onset,
                apex: row.apex,
                offset: row.offset,
                raw_label: row.raw_label,
                class,
                landmarks_path: row.landmarks_path,
            });
        }
        Self::new(entries, base_dir)
    }

    pub fn to_writer(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for e in &self.entries {
            w.serialize(OutRow {
                sample_id: &e.sample_id,
                subject_id: &e.subject_id,
                dataset: e.dataset,
                frames_dir: &e.frames_dir,
                onset: e.onset,
                apex: e.apex,
                offset: e.offset,
                raw_label: &e.raw_label,
                class: e.class.index(),
                landmarks_path: &e.landmarks_path,
            })?;
        }
        if self.entries.is_empty() {
            w.write_record([
                "sample_id",
                "subject_id",
                "dataset",
                "frames_dir",
                "onset",
                "apex",
                "offset",
                "raw_label",
                "class",
                "landmarks_path",
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.to_writer(std::io::BufWriter::new(file))
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if e.sample_id.is_empty() || e.subject_id.is_empty() {
                return Err(Error::Manifest("empty sample or subject id".into()));
            }
            if !seen.insert(e.sample_id.as_str()) {
                return Err(Error::Manifest(format!("duplicate sample id {}", e.sample_id)));
            }
            if e.onset > e.offset || e.apex.is_some_and(|a| a < e.onset || a > e.offset) {
                return Err(Error::Manifest(format!(
                    "sample {}: frame indices onset {} apex {:?} offset {} are out of order",
                    e.sample_id, e.onset, e.apex, e.offset
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn class_counts(&self) -> [usize; NUM_CLASSES] {
        let mut counts = [0; NUM_CLASSES];
        for e in &self.entries {
            counts[e.class.index()] += 1;
        }
        counts
    }

    /// Distinct namespaced subjects in sorted order.
    pub fn subjects(&self) -> Vec<String> {
        let mut s: Vec<String> = self.entries.iter().map(ManifestEntry::subject_key).collect();
        s.sort();
        s.dedup();
        s
    }
}
