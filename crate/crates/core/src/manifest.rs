//! Dataset manifests: CSV with a `path,label,split[,condition]` header.
//!
//! Relative paths resolve against the manifest's own directory.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Manifest(format!("unknown split {other:?}"))),
        }
    }
}

/// Acoustic condition applied to a clip when building a perturbed corpus.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Condition {
    Clean,
    Babble,
    Music,
    Loudness,
}

impl Condition {
    pub const ALL: [Condition; 4] = [Condition::Clean, Condition::Babble, Condition::Music, Condition::Loudness];
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Condition::Clean => "clean",
            Condition::Babble => "babble",
            Condition::Music => "music",
            Condition::Loudness => "loudness",
        })
    }
}

impl FromStr for Condition {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "clean" => Ok(Condition::Clean),
            "babble" => Ok(Condition::Babble),
            "music" => Ok(Condition::Music),
            "loudness" => Ok(Condition::Loudness),
            other => Err(Error::Manifest(format!("unknown condition {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestRow {
    pub path: PathBuf,
    pub label: usize,
    pub split: Split,
    pub condition: Option<Condition>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    pub rows: Vec<ManifestRow>,
    /// Directory that relative row paths are resolved against.
    pub root: PathBuf,
}

impl Manifest {
    pub fn new(rows: Vec<ManifestRow>, root: impl Into<PathBuf>) -> Self {
        Self { rows, root: root.into() }
    }

    /// Parses and validates a manifest, checking that every path exists.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let text = std::fs::read_to_string(path)?;
        let m = Self::parse(&text, root)?;
        for row in &m.rows {
            let p = m.resolve(row);
            if !p.is_file() {
                return Err(Error::Manifest(format!("path {} does not exist", p.display())));
            }
        }
        Ok(m)
    }

    pub fn parse(text: &str, root: impl Into<PathBuf>) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let headers = reader.headers()?.clone();
        let col = |name: &str| headers.iter().position(|h| h == name);
        let (Some(pc), Some(lc), Some(sc)) = (col("path"), col("label"), col("split")) else {
            return Err(Error::Manifest("header must contain path,label,split".into()));
        };
        let cc = col("condition");
        let mut rows = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let rec = rec?;
            let field = |c: usize| {
                rec.get(c).ok_or_else(|| Error::Manifest(format!("row {}: missing column {c}", i + 1)))
            };
            let label = field(lc)?
                .parse::<usize>()
                .map_err(|e| Error::Manifest(format!("row {}: label: {e}", i + 1)))?;
            let condition = match cc {
                Some(c) if !field(c)?.is_empty() => Some(field(c)?.parse()?),
                _ => None,
            };
            rows.push(ManifestRow { path: PathBuf::from(field(pc)?), label, split: field(sc)?.parse()?, condition });
        }
        let m = Self { rows, root: root.into() };
        m.validate_labels()?;
        Ok(m)
    }

    fn validate_labels(&self) -> Result<()> {
        let labels: BTreeSet<usize> = self.rows.iter().map(|r| r.label).collect();
        if let Some(&max) = labels.iter().next_back() {
            if labels.len() != max + 1 {
                return Err(Error::Manifest(format!("class ids are not contiguous from 0 (max {max})")));
            }
        }
        Ok(())
    }

    pub fn n_classes(&self) -> usize {
        self.rows.iter().map(|r| r.label + 1).max().unwrap_or(0)
    }

    pub fn resolve(&self, row: &ManifestRow) -> PathBuf {
        if row.path.is_absolute() {
            row.path.clone()
        } else {
            self.root.join(&row.path)
        }
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestRow> {
        self.rows.iter().filter(move |r| r.split == split)
    }

    pub fn to_csv(&self) -> String {
        let with_condition = self.rows.iter().any(|r| r.condition.is_some());
        let mut w = csv::Writer::from_writer(Vec::new());
        if with_condition {
            w.write_record(["path", "label", "split", "condition"]).unwrap();
        } else {
            w.write_record(["path", "label", "split"]).unwrap();
        }
        for r in &self.rows {
            let mut rec = vec![r.path.to_string_lossy().into_owned(), r.label.to_string(), r.split.to_string()];
            if with_condition {
                rec.push(r.condition.map(|c| c.to_string()).unwrap_or_default());
            }
            w.write_record(&rec).unwrap();
        }
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_serialize() {
        let text = "path,label,split\na.wav,0,train\nb.wav,1,val\nc.wav,1,test\n";
        let m = Manifest::parse(text, "/data").unwrap();
        assert_eq!(m.n_classes(), 2);
        assert_eq!(m.split(Split::Train).count(), 1);
        assert_eq!(m.resolve(&m.rows[0]), PathBuf::from("/data/a.wav"));
        assert_eq!(m.to_csv(), text);
    }

    #[test]
    fn condition_column_round_trips() {
        let text = "path,label,split,condition\na.wav,0,train,babble\n";
        let m = Manifest::parse(text, "").unwrap();
        assert_eq!(m.rows[0].condition, Some(Condition::Babble));
        assert_eq!(m.to_csv(), text);
    }

    #[test]
    fn gaps_in_labels_rejected() {
        let text = "path,label,split\na.wav,0,train\nb.wav,2,train\n";
        assert!(matches!(Manifest::parse(text, ""), Err(Error::Manifest(_))));
    }

    #[test]
    fn unknown_split_rejected() {
        assert!(Manifest::parse("path,label,split\na.wav,0,dev\n", "").is_err());
    }

    #[test]
    fn missing_file_rejected_at_load() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        std::fs::write(&p, "path,label,split\nnope.wav,0,train\n").unwrap();
        assert!(matches!(Manifest::load(&p), Err(Error::Manifest(_))));
    }
}
