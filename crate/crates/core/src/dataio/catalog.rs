use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Seen,
    Unseen,
}

/// An entity's description embedding, lead-image embeddings and split tag.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityCatalogEntry {
    pub qid: String,
    pub description_embedding_id: String,
    pub lead_image_embedding_ids: Vec<String>,
    pub split: Split,
}

/// Parses JSON lines, reporting the 1-based line number on failure. Blank
/// lines are skipped.
pub(super) fn parse_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<(usize, T)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value: T = serde_json::from_str(line).map_err(|e| Error::parse(path, i + 1, strip_position(&e)))?;
        out.push((i + 1, value));
    }
    Ok(out)
}

fn strip_position(e: &serde_json::Error) -> String {
    let s = e.to_string();
    match s.find(" at line ") {
        Some(i) => s[..i].to_owned(),
        None => s,
    }
}

pub(super) fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut buf = String::new();
    for item in items {
        buf.push_str(&serde_json::to_string(item).expect("serializable"));
        buf.push('\n');
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_catalog(path: impl AsRef<Path>) -> Result<Vec<EntityCatalogEntry>> {
    let path = path.as_ref();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (line, entry) in parse_jsonl::<EntityCatalogEntry>(path)? {
        if entry.qid.is_empty() {
            return Err(Error::parse(path, line, "empty qid"));
        }
        if !seen.insert(entry.qid.clone()) {
            return Err(Error::parse(path, line, format!("duplicate qid {}", entry.qid)));
        }
        out.push(entry);
    }
    Ok(out)
}

pub fn save_catalog(path: impl AsRef<Path>, entries: &[EntityCatalogEntry]) -> Result<()> {
    write_jsonl(path.as_ref(), entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(content: &str) -> tempfile::NamedTempFile {
        let f = tempfile::NamedTempFile::new().unwrap();
        fs::write(f.path(), content).unwrap();
        f
    }

    fn line(qid: &str, split: &str) -> String {
        format!(
            r#"{{"qid":"{qid}","description_embedding_id":"t:{qid}","lead_image_embedding_ids":[],"split":"{split}"}}"#
        )
    }

    #[test]
    fn single_entry_with_no_leads() {
        let f = write(&line("Q1", "seen"));
        let c = load_catalog(f.path()).unwrap();
        assert_eq!(c.len(), 1);
        assert!(c[0].lead_image_embedding_ids.is_empty());
        assert_eq!(c[0].split, Split::Seen);
    }

    #[test]
    fn order_is_preserved() {
        let f = write(&[line("Q3", "seen"), line("Q1", "unseen"), line("Q2", "seen")].join("\n"));
        let qids: Vec<_> = load_catalog(f.path()).unwrap().into_iter().map(|e| e.qid).collect();
        assert_eq!(qids, vec!["Q3", "Q1", "Q2"]);
    }

    #[test]
    fn duplicate_qid_reports_second_line() {
        let lines: Vec<String> = (1..=7)
            .map(|i| {
                line(
                    if i == 7 {
                        "Q3"
                    } else {
                        ["Q1", "Q2", "Q3", "Q4", "Q5", "Q6"][i - 1]
                    },
                    "seen",
                )
            })
            .collect();
        let f = write(&lines.join("\n"));
        let err = load_catalog(f.path()).unwrap_err().to_string();
        assert!(err.contains("line 7: duplicate qid Q3"), "{err}");
    }

    #[test]
    fn missing_key_and_bad_split() {
        let f = write(r#"{"qid":"Q1","lead_image_embedding_ids":[],"split":"seen"}"#);
        let err = load_catalog(f.path()).unwrap_err().to_string();
        assert!(
            err.contains("line 1") && err.contains("description_embedding_id"),
            "{err}"
        );

        let f = write(&format!("{}\n{}", line("Q1", "seen"), line("Q2", "maybe")));
        let err = load_catalog(f.path()).unwrap_err().to_string();
        assert!(err.contains("line 2") && err.contains("maybe"), "{err}");
    }
}
