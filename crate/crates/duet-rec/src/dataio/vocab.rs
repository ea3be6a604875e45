//! Word vocabulary with reserved PAD/UNK ids and fixed-length encoding.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use crate::dataio::parse::tokenize;
use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;

#[derive(Debug, Clone)]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    /// Build from a token stream: words with count ≥ `min_count` get ids
    /// from 2 up, assigned by descending frequency then lexicographic order.
    pub fn build<'a>(texts: impl Iterator<Item = &'a str>, min_count: usize) -> Vocab {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for text in texts {
            for tok in tokenize(text) {
                *counts.entry(tok).or_insert(0) += 1;
            }
        }
        let mut ranked: Vec<(usize, String)> = counts
            .into_iter()
            .filter(|(_, c)| *c >= min_count)
            .map(|(w, c)| (c, w))
            .collect();
        ranked.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
        let mut words = vec!["<pad>".to_string(), "<unk>".to_string()];
        words.extend(ranked.into_iter().map(|(_, w)| w));
        Vocab::from_words(words)
    }

    fn from_words(words: Vec<String>) -> Vocab {
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32))
            .collect();
        Vocab { words, index }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        false // always holds PAD and UNK
    }

    pub fn id(&self, word: &str) -> u32 {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    pub fn word(&self, id: u32) -> Option<&str> {
        self.words.get(id as usize).map(String::as_str)
    }

    /// Tokenize, map through the vocabulary (UNK for out-of-vocabulary),
    /// then truncate or right-pad with PAD to exactly `length` ids.
    pub fn encode(&self, text: &str, length: usize) -> Result<Vec<u32>> {
        if length == 0 {
            return Err(Error::Argument("encode length must be ≥ 1".into()));
        }
        let mut ids: Vec<u32> = tokenize(text)
            .into_iter()
            .take(length)
            .map(|t| self.id(&t))
            .collect();
        ids.resize(length, PAD);
        Ok(ids)
    }

    /// Write `word \t id` lines in id order.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(
            std::fs::File::create(path).map_err(|e| Error::io(path, e))?,
        );
        for (i, w) in self.words.iter().enumerate() {
            writeln!(f, "{w}\t{i}").map_err(|e| Error::io(path, e))?;
        }
        f.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Vocab> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut words = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let Some((word, id)) = line.split_once('\t') else {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: i + 1,
                    msg: "expected `word \\t id`".into(),
                });
            };
            if id.parse::<u32>() != Ok(i as u32) {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: i + 1,
                    msg: format!("id column {id:?} does not match position {i}"),
                });
            }
            words.push(word.to_string());
        }
        if words.len() < 2 || words[0] != "<pad>" || words[1] != "<unk>" {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: 1,
                msg: "vocab must start with <pad>, <unk>".into(),
            });
        }
        Ok(Vocab::from_words(words))
    }
}
