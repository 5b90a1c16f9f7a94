//! Line-delimited claim corpus.
//!
//! One JSON object per line:
//!
//! ```json
//! {"version": 1, "id": "c1", "claim": "...", "label": "SUPPORTS",
//!  "candidates": [{"doc_id": "d1", "sent_id": 0, "text": "..."}],
//!  "gold_sets": [[["d1", 0]]]}
//! ```
//!
//! `version` is optional and must be 1 when present. `candidates` and
//! `gold_sets` default to empty. Blank lines are skipped.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::capsule::Label;
use crate::error::{Error, Result};

pub const CORPUS_VERSION: u32 = 1;

/// `(doc_id, sent_id)`, written as a two-element array.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EvidenceId(pub String, pub usize);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub doc_id: String,
    pub sent_id: usize,
    pub text: String,
}

impl Candidate {
    pub fn evidence_id(&self) -> EvidenceId {
        EvidenceId(self.doc_id.clone(), self.sent_id)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClaimInstance {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub version: Option<u32>,
    pub id: String,
    pub claim: String,
    pub label: Label,
    #[serde(default)]
    pub candidates: Vec<Candidate>,
    #[serde(default)]
    pub gold_sets: Vec<Vec<EvidenceId>>,
}

impl ClaimInstance {
    /// Whether candidate `c` belongs to any gold set.
    pub fn is_gold(&self, c: &Candidate) -> bool {
        let id = c.evidence_id();
        self.gold_sets.iter().any(|set| set.contains(&id))
    }

    pub fn gold_ids(&self) -> BTreeSet<EvidenceId> {
        self.gold_sets.iter().flatten().cloned().collect()
    }
}

/// Result of loading a corpus: the instances and any non-fatal warnings.
#[derive(Debug, Default)]
pub struct Loaded {
    pub instances: Vec<ClaimInstance>,
    pub warnings: Vec<String>,
}

/// Parse and validate corpus text. `origin` is used in error messages.
pub fn parse_corpus(text: &str, origin: &Path) -> Result<Loaded> {
    let mut out = Loaded::default();
    let mut seen = HashSet::new();
    let err = |line: usize, msg: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        msg,
    };
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let mut inst: ClaimInstance = serde_json::from_str(raw).map_err(|e| err(line, e.to_string()))?;
        if let Some(v) = inst.version {
            if v != CORPUS_VERSION {
                return Err(err(line, format!("unsupported record version {v}")));
            }
        }
        if inst.id.is_empty() {
            return Err(err(line, "empty id".into()));
        }
        if !seen.insert(inst.id.clone()) {
            return Err(err(line, format!("duplicate id `{}`", inst.id)));
        }
        if inst.label == Label::NotEnoughInfo && !inst.gold_sets.is_empty() {
            out.warnings.push(format!(
                "{}:{line}: NOT ENOUGH INFO instance `{}` has gold evidence; cleared",
                origin.display(),
                inst.id
            ));
            inst.gold_sets.clear();
        }
        if inst.gold_sets.iter().any(Vec::is_empty) {
            return Err(err(line, "empty gold evidence set".into()));
        }
        out.instances.push(inst);
    }
    Ok(out)
}

/// Read and validate a corpus file; warnings are logged.
pub fn load_corpus(path: &Path) -> Result<Vec<ClaimInstance>> {
    let text = fs::read_to_string(path)?;
    let loaded = parse_corpus(&text, path)?;
    for w in &loaded.warnings {
        log::warn!("{w}");
    }
    Ok(loaded.instances)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(raw).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            msg: e.to_string(),
        })?);
    }
    Ok(out)
}

/// A document: its id and sentences, as stored in the documents file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub sentences: Vec<String>,
}

/// Text the topic model is fitted on: every claim and candidate sentence of
/// `instances`, then every sentence of `documents`.
pub fn topic_texts(instances: &[ClaimInstance], documents: &[Document]) -> Vec<String> {
    let mut out = Vec::new();
    for inst in instances {
        out.push(inst.claim.clone());
        out.extend(inst.candidates.iter().map(|c| c.text.clone()));
    }
    for doc in documents {
        out.extend(doc.sentences.iter().cloned());
    }
    out
}
