//! Raw input parsing: interactions TSV, item texts JSONL, triples TSV.

use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};

/// One line of `interactions.tsv`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawInteraction {
    pub user_id: String,
    pub item_id: String,
    pub rating: f64,
    pub timestamp: Option<i64>,
    /// 1-based source line, used for error messages and as the recency key
    /// when no timestamp is present.
    pub line: usize,
}

impl RawInteraction {
    /// Recency key: timestamp when present, otherwise the source line.
    pub fn order_key(&self) -> i64 {
        self.timestamp.unwrap_or(self.line as i64)
    }
}

/// One line of `items.jsonl`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct RawItemText {
    pub item_id: String,
    pub title: String,
    pub description: String,
}

/// One line of `triples.tsv`; ids are still strings at this stage.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct RawTriple {
    pub head: String,
    pub relation: String,
    pub tail: String,
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(str::to_string).collect())
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

/// Load `user_id \t item_id \t rating [\t timestamp]` records. Empty lines
/// are skipped; anything else malformed is an error naming the line.
pub fn load_interactions(path: &Path) -> Result<Vec<RawInteraction>> {
    let mut out = Vec::new();
    for (i, raw) in read_lines(path)?.iter().enumerate() {
        let line = i + 1;
        if raw.is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split('\t').collect();
        if fields.len() != 3 && fields.len() != 4 {
            return Err(parse_err(
                path,
                line,
                format!("expected 3 or 4 tab-separated fields, got {}", fields.len()),
            ));
        }
        let (user_id, item_id) = (fields[0], fields[1]);
        if user_id.is_empty() || item_id.is_empty() {
            return Err(parse_err(path, line, "empty user or item id"));
        }
        let rating: f64 = fields[2]
            .parse()
            .map_err(|_| parse_err(path, line, format!("bad rating {:?}", fields[2])))?;
        if !rating.is_finite() {
            return Err(parse_err(path, line, format!("non-finite rating {rating}")));
        }
        let timestamp = match fields.get(3) {
            Some(f) => Some(
                f.parse::<i64>()
                    .map_err(|_| parse_err(path, line, format!("bad timestamp {f:?}")))?,
            ),
            None => None,
        };
        out.push(RawInteraction {
            user_id: user_id.to_string(),
            item_id: item_id.to_string(),
            rating,
            timestamp,
            line,
        });
    }
    Ok(out)
}

/// Load one JSON object per line with fields item_id, title, description.
/// The first occurrence of a duplicated item_id wins.
pub fn load_items_jsonl(path: &Path) -> Result<Vec<RawItemText>> {
    let mut out: Vec<RawItemText> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, raw) in read_lines(path)?.iter().enumerate() {
        let line = i + 1;
        if raw.is_empty() {
            continue;
        }
        let row: RawItemText = serde_json::from_str(raw)
            .map_err(|e| parse_err(path, line, format!("bad item json: {e}")))?;
        if row.item_id.is_empty() {
            return Err(parse_err(path, line, "empty item_id"));
        }
        if seen.insert(row.item_id.clone()) {
            out.push(row);
        }
    }
    Ok(out)
}

/// Load `head_id \t relation_name \t tail_id` triples.
pub fn load_triples(path: &Path) -> Result<Vec<RawTriple>> {
    let mut out = Vec::new();
    for (i, raw) in read_lines(path)?.iter().enumerate() {
        let line = i + 1;
        if raw.is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split('\t').collect();
        if fields.len() != 3 || fields.iter().any(|f| f.is_empty()) {
            return Err(parse_err(
                path,
                line,
                "expected 3 nonempty tab-separated fields",
            ));
        }
        out.push(RawTriple {
            head: fields[0].to_string(),
            relation: fields[1].to_string(),
            tail: fields[2].to_string(),
        });
    }
    Ok(out)
}

/// Lowercased alphanumeric tokenization shared by vocabulary building and
/// encoding.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}
