//! Splitting blobs into documents and documents into words.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How a blob is unwrapped into documents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DocParser {
    /// Each maximal run of non-newline bytes is a document.
    #[default]
    Newline,
    /// The entire blob is one document.
    WholeBlob,
    /// Records of a little-endian `u32` length followed by that many bytes.
    LengthPrefixed,
}

impl DocParser {
    pub fn tag(self) -> u8 {
        match self {
            DocParser::Newline => 0,
            DocParser::WholeBlob => 1,
            DocParser::LengthPrefixed => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        Ok(match tag {
            0 => DocParser::Newline,
            1 => DocParser::WholeBlob,
            2 => DocParser::LengthPrefixed,
            t => return Err(Error::corrupt(format!("unknown document parser tag {t}"))),
        })
    }

    /// Byte ranges `(offset, length)` of the documents in `blob`; empty
    /// documents are skipped.
    pub fn split(self, blob: &[u8]) -> Result<Vec<(u64, u64)>> {
        match self {
            DocParser::Newline => {
                let mut out = Vec::new();
                let mut start = 0usize;
                for (i, &b) in blob.iter().enumerate() {
                    if b == b'\n' {
                        if i > start {
                            out.push((start as u64, (i - start) as u64));
                        }
                        start = i + 1;
                    }
                }
                if blob.len() > start {
                    out.push((start as u64, (blob.len() - start) as u64));
                }
                Ok(out)
            }
            DocParser::WholeBlob => Ok(if blob.is_empty() {
                vec![]
            } else {
                vec![(0, blob.len() as u64)]
            }),
            DocParser::LengthPrefixed => {
                let mut out = Vec::new();
                let mut pos = 0usize;
                while pos < blob.len() {
                    let header = blob
                        .get(pos..pos + 4)
                        .ok_or_else(|| Error::corrupt(format!("truncated record header at byte {pos}")))?;
                    let len = u32::from_le_bytes(header.try_into().expect("4 bytes")) as usize;
                    let start = pos + 4;
                    if start + len > blob.len() {
                        return Err(Error::corrupt(format!("record at byte {pos} runs past the blob end")));
                    }
                    if len > 0 {
                        out.push((start as u64, len as u64));
                    }
                    pos = start + len;
                }
                Ok(out)
            }
        }
    }
}

/// How a document is split into words.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WordParser {
    #[default]
    Whitespace,
    /// Split on any of these characters.
    Delimiters(String),
}

impl WordParser {
    pub fn tag(&self) -> u8 {
        match self {
            WordParser::Whitespace => 0,
            WordParser::Delimiters(_) => 1,
        }
    }
}

/// Word parser plus normalization; recorded in the index so queries
/// filter documents exactly as they were indexed.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Tokenizer {
    pub word_parser: WordParser,
    pub lowercase: bool,
}

impl Tokenizer {
    pub fn new(word_parser: WordParser, lowercase: bool) -> Self {
        Self { word_parser, lowercase }
    }

    pub fn words(&self, doc: &[u8]) -> Vec<String> {
        let text = String::from_utf8_lossy(doc);
        let pieces: Vec<&str> = match &self.word_parser {
            WordParser::Whitespace => text.split_whitespace().collect(),
            WordParser::Delimiters(d) => text
                .split(|c: char| d.contains(c))
                .filter(|s| !s.is_empty())
                .collect(),
        };
        pieces
            .into_iter()
            .map(|w| if self.lowercase { w.to_lowercase() } else { w.to_string() })
            .collect()
    }

    pub fn distinct_words(&self, doc: &[u8]) -> BTreeSet<String> {
        self.words(doc).into_iter().collect()
    }

    /// Applies the same normalization to a query word.
    pub fn normalize(&self, word: &str) -> String {
        if self.lowercase {
            word.to_lowercase()
        } else {
            word.to_string()
        }
    }
}
