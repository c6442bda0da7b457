use std::collections::HashSet;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::RetrievalError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    #[serde(default)]
    pub title: String,
    pub text: String,
}

/// Documents in input order with unique ids.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Document>", into = "Vec<Document>")]
pub struct Corpus {
    docs: Vec<Document>,
}

#[derive(Deserialize)]
struct CorpusRecord {
    doc_id: String,
    title: Option<String>,
    text: String,
}

impl Corpus {
    pub fn new(docs: Vec<Document>) -> Result<Self, RetrievalError> {
        let mut seen = HashSet::with_capacity(docs.len());
        for d in &docs {
            if !seen.insert(d.doc_id.as_str()) {
                return Err(RetrievalError::DuplicateId {
                    doc_id: d.doc_id.clone(),
                    line: None,
                });
            }
        }
        Ok(Self { docs })
    }

    /// Reads line-delimited JSON records `{doc_id, title?, text}`. Blank lines
    /// are skipped; line numbers in errors are 1-based.
    pub fn ingest<R: BufRead>(reader: R) -> Result<Self, RetrievalError> {
        let mut docs = Vec::new();
        let mut seen = HashSet::new();
        for (idx, line) in reader.lines().enumerate() {
            let line_no = idx + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: CorpusRecord =
                serde_json::from_str(&line).map_err(|e| RetrievalError::Malformed {
                    line: line_no,
                    message: e.to_string(),
                })?;
            if !seen.insert(rec.doc_id.clone()) {
                return Err(RetrievalError::DuplicateId {
                    doc_id: rec.doc_id,
                    line: Some(line_no),
                });
            }
            docs.push(Document {
                doc_id: rec.doc_id,
                title: rec.title.unwrap_or_default(),
                text: rec.text,
            });
        }
        Ok(Self { docs })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RetrievalError> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| RetrievalError::Open {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::ingest(std::io::BufReader::new(file))
    }

    pub fn docs(&self) -> &[Document] {
        &self.docs
    }

    pub fn doc_count(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn get(&self, ordinal: usize) -> Option<&Document> {
        self.docs.get(ordinal)
    }
}

impl TryFrom<Vec<Document>> for Corpus {
    type Error = RetrievalError;

    fn try_from(docs: Vec<Document>) -> Result<Self, Self::Error> {
        Corpus::new(docs)
    }
}

impl From<Corpus> for Vec<Document> {
    fn from(c: Corpus) -> Self {
        c.docs
    }
}
