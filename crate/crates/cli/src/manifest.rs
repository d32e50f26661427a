//! JSON-lines dataset manifest and per-paper artifact locations.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use reviewgraph_core::graph::Decision;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
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

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArtifactPaths {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub paper: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transcript: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub triples: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dims: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub graph: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub paper_id: String,
    pub split: Split,
    pub label: Decision,
    /// Used when no paper file is listed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    #[serde(default)]
    pub paths: ArtifactPaths,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Artifact {
    Paper,
    Transcript,
    Triples,
    Dims,
    Graph,
    Embeddings,
}

impl Artifact {
    fn dir_and_ext(self) -> (&'static str, &'static str) {
        match self {
            Artifact::Paper => ("papers", "json"),
            Artifact::Transcript => ("transcripts", "json"),
            Artifact::Triples => ("triples", "json"),
            Artifact::Dims => ("dims", "jsonl"),
            Artifact::Graph => ("graphs", "json"),
            Artifact::Embeddings => ("embeddings", "jsonl"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub records: Vec<ManifestRecord>,
    /// Directory that relative record paths resolve against.
    pub base: PathBuf,
    pub work_dir: PathBuf,
}

impl Manifest {
    pub fn parse(text: &str, base: &Path, work_dir: Option<PathBuf>) -> Result<Manifest, CliError> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: ManifestRecord =
                serde_json::from_str(line).map_err(|e| CliError::Data(format!("manifest line {}: {e}", i + 1)))?;
            records.push(rec);
        }
        let mut seen = HashSet::new();
        let dups: Vec<&str> = records
            .iter()
            .filter(|r| !seen.insert(r.paper_id.as_str()))
            .map(|r| r.paper_id.as_str())
            .collect();
        if !dups.is_empty() {
            return Err(CliError::Data(format!(
                "duplicate paper_id(s) in manifest: {}",
                dups.join(", ")
            )));
        }
        Ok(Manifest {
            records,
            base: base.to_path_buf(),
            work_dir: work_dir.unwrap_or_else(|| base.join("work")),
        })
    }

    pub fn load(path: &Path, work_dir: Option<PathBuf>) -> Result<Manifest, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read manifest {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Manifest::parse(&text, &base, work_dir)
    }

    pub fn to_jsonl(records: &[ManifestRecord]) -> String {
        records
            .iter()
            .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
            .collect()
    }

    pub fn split(&self, split: Split) -> Vec<&ManifestRecord> {
        self.records.iter().filter(|r| r.split == split).collect()
    }

    /// Listed location if any, else `<work_dir>/<stage dir>/<paper_id>.<ext>`.
    pub fn path(&self, rec: &ManifestRecord, artifact: Artifact) -> PathBuf {
        let listed = match artifact {
            Artifact::Paper => &rec.paths.paper,
            Artifact::Transcript => &rec.paths.transcript,
            Artifact::Triples => &rec.paths.triples,
            Artifact::Dims => &rec.paths.dims,
            Artifact::Graph => &rec.paths.graph,
            Artifact::Embeddings => &rec.paths.embeddings,
        };
        match listed {
            Some(p) if p.is_relative() => self.base.join(p),
            Some(p) => p.clone(),
            None => {
                let (dir, ext) = artifact.dir_and_ext();
                self.work_dir.join(dir).join(format!("{}.{ext}", rec.paper_id))
            }
        }
    }

    pub fn stage_dir(&self, name: &str) -> PathBuf {
        self.work_dir.join(name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_records_and_resolves_paths() {
        let text = r#"{"paper_id":"p1","split":"train","label":"accept","paths":{"triples":"t/p1.json"}}
{"paper_id":"p2","split":"val","label":"reject"}
"#;
        let m = Manifest::parse(text, Path::new("/data"), None).unwrap();
        assert_eq!(m.records.len(), 2);
        assert_eq!(
            m.path(&m.records[0], Artifact::Triples),
            PathBuf::from("/data/t/p1.json")
        );
        assert_eq!(
            m.path(&m.records[1], Artifact::Graph),
            PathBuf::from("/data/work/graphs/p2.json")
        );
        assert_eq!(m.split(Split::Val).len(), 1);
    }

    #[test]
    fn rejects_duplicates_and_missing_labels() {
        let dup = "{\"paper_id\":\"a\",\"split\":\"train\",\"label\":\"accept\"}\n".repeat(2);
        assert!(matches!(
            Manifest::parse(&dup, Path::new("."), None),
            Err(CliError::Data(_))
        ));
        let unlabeled = "{\"paper_id\":\"a\",\"split\":\"train\"}\n";
        assert!(Manifest::parse(unlabeled, Path::new("."), None).is_err());
    }

    #[test]
    fn jsonl_round_trip() {
        let rec = ManifestRecord {
            paper_id: "x".into(),
            split: Split::Test,
            label: Decision::Reject,
            title: Some("T".into()),
            paths: ArtifactPaths::default(),
        };
        let m = Manifest::parse(&Manifest::to_jsonl(std::slice::from_ref(&rec)), Path::new("."), None).unwrap();
        assert_eq!(m.records, vec![rec]);
    }
}
