//! Header-addressed CSV tables shared by the tabular releases.

use super::{decode_text, CorpusError};

pub(crate) struct Table {
    pub file: String,
    headers: Vec<String>,
    /// (1-based source line, decoded fields)
    pub rows: Vec<(usize, Vec<String>)>,
}

impl Table {
    pub fn parse(bytes: &[u8], file: &str, delimiter: u8) -> Result<Table, CorpusError> {
        let mut reader = csv::ReaderBuilder::new()
            .delimiter(delimiter)
            .has_headers(true)
            .flexible(false)
            .from_reader(bytes);
        let malformed = |line: usize, reason: String| CorpusError::Malformed { file: file.to_string(), line, reason };

        let headers: Vec<String> = reader
            .byte_headers()
            .map_err(|e| malformed(1, e.to_string()))?
            .iter()
            .map(|h| decode_text(h).trim().to_string())
            .collect();

        let mut rows = Vec::new();
        let mut record = csv::ByteRecord::new();
        loop {
            match reader.read_byte_record(&mut record) {
                Ok(false) => break,
                Ok(true) => {
                    let line = record.position().map_or(0, |p| p.line() as usize);
                    rows.push((line, record.iter().map(decode_text).collect()));
                }
                Err(e) => {
                    let line = e.position().map_or(0, |p| p.line() as usize);
                    return Err(malformed(line, e.to_string()));
                }
            }
        }
        Ok(Table { file: file.to_string(), headers, rows })
    }

    pub fn column(&self, name: &str) -> Result<usize, CorpusError> {
        self.headers.iter().position(|h| h == name).ok_or_else(|| CorpusError::Malformed {
            file: self.file.clone(),
            line: 1,
            reason: format!("missing column '{name}'"),
        })
    }

    pub fn malformed(&self, line: usize, reason: impl Into<String>) -> CorpusError {
        CorpusError::Malformed { file: self.file.clone(), line, reason: reason.into() }
    }
}

/// Groups utterances into conversations in order of first appearance.
pub(crate) struct ConversationBuilder {
    dataset: super::Dataset,
    split: super::Split,
    index: std::collections::HashMap<String, usize>,
    pub conversations: Vec<super::Conversation>,
}

impl ConversationBuilder {
    pub fn new(dataset: super::Dataset, split: super::Split) -> Self {
        ConversationBuilder { dataset, split, index: Default::default(), conversations: Vec::new() }
    }

    pub fn conversation(&mut self, id: String) -> &mut super::Conversation {
        let idx = match self.index.get(&id) {
            Some(&i) => i,
            None => {
                self.conversations.push(super::Conversation::new(id.clone(), self.dataset, self.split));
                self.index.insert(id, self.conversations.len() - 1);
                self.conversations.len() - 1
            }
        };
        &mut self.conversations[idx]
    }
}

/// Output of parsing one split file.
pub(crate) struct SplitOutput {
    pub conversations: Vec<super::Conversation>,
    pub rejected: Vec<super::RejectedRow>,
}
