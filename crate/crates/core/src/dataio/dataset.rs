use std::path::Path;

use serde::{Deserialize, Serialize};

use super::catalog::{parse_jsonl, write_jsonl};
use crate::error::{Error, Result};

/// One labelled (or, for inference queries, unlabelled) example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub image_embedding_id: String,
    pub text_query_embedding_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl DatasetRecord {
    pub fn labelled(image: impl Into<String>, text: impl Into<String>, label: impl Into<String>) -> Self {
        Self {
            image_embedding_id: image.into(),
            text_query_embedding_id: text.into(),
            label: Some(label.into()),
        }
    }

    pub fn label(&self) -> &str {
        self.label.as_deref().unwrap_or_default()
    }
}

/// Loads a dataset. With `require_labels`, a record without `label` is an
/// error carrying its line number.
pub fn load_dataset(path: impl AsRef<Path>, require_labels: bool) -> Result<Vec<DatasetRecord>> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for (line, rec) in parse_jsonl::<DatasetRecord>(path)? {
        if require_labels && rec.label.as_deref().is_none_or(str::is_empty) {
            return Err(Error::parse(path, line, "missing field `label`"));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn save_dataset(path: impl AsRef<Path>, records: &[DatasetRecord]) -> Result<()> {
    write_jsonl(path.as_ref(), records)
}
