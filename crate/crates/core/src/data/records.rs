//! Line-delimited JSON corpus files.
//!
//! The first line is a header `{"dims":{"image_dim":D}}`; every following
//! non-empty line is one [`RawRecord`].

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawSentence {
    #[serde(default)]
    pub tokens: Vec<String>,
    /// `[relation, word1, word2]`
    #[serde(default)]
    pub triplets: Vec<[String; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub image_id: String,
    pub image_fragments: Vec<Vec<f64>>,
    pub sentences: Vec<RawSentence>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusDims {
    pub image_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    dims: CorpusDims,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawCorpus {
    pub dims: CorpusDims,
    pub records: Vec<RawRecord>,
}

impl RawCorpus {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let parse_err = |line: usize, message: String| Error::Parse {
            path: path.to_owned(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (hline, header) = lines.next().ok_or_else(|| parse_err(1, "missing dims header".into()))?;
        let header: Header =
            serde_json::from_str(header).map_err(|e| parse_err(hline + 1, format!("bad header: {e}")))?;
        if header.dims.image_dim == 0 {
            return Err(parse_err(hline + 1, "image_dim must be positive".into()));
        }

        let mut records = Vec::new();
        for (lineno, line) in lines {
            let record: RawRecord = serde_json::from_str(line).map_err(|e| parse_err(lineno + 1, e.to_string()))?;
            if record.image_fragments.is_empty() {
                return Err(parse_err(
                    lineno + 1,
                    format!("record `{}` has no image fragments", record.image_id),
                ));
            }
            if let Some(f) = record.image_fragments.iter().find(|f| f.len() != header.dims.image_dim) {
                return Err(parse_err(
                    lineno + 1,
                    format!(
                        "fragment width {} does not match image_dim {}",
                        f.len(),
                        header.dims.image_dim
                    ),
                ));
            }
            if record.image_fragments.iter().flatten().any(|x| !x.is_finite()) {
                return Err(parse_err(lineno + 1, "non-finite image feature".into()));
            }
            records.push(record);
        }
        if records.is_empty() {
            return Err(parse_err(hline + 1, "corpus has no records".into()));
        }
        Ok(RawCorpus {
            dims: header.dims,
            records,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RawCorpus::parse(&text, path)
    }

    pub fn to_text(&self) -> String {
        let mut out = serde_json::to_string(&Header { dims: self.dims }).expect("header serializes");
        out.push('\n');
        for r in &self.records {
            writeln!(out, "{}", serde_json::to_string(r).expect("record serializes")).unwrap();
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}
