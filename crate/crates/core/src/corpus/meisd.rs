use std::path::Path;

use super::format::MeisdFormat;
use super::table::{ConversationBuilder, SplitOutput, Table};
use super::{canonical_text, Conversation, CorpusError, Dataset, ParseSink, RejectedRow, Split};
use crate::par::{self, Execution};

pub(crate) fn parse(root: &Path, fmt: &MeisdFormat, sink: &mut ParseSink) -> Result<Vec<Conversation>, CorpusError> {
    let mut inputs = Vec::new();
    for (split, file) in fmt.files.iter() {
        let path = root.join(file);
        let bytes = sink.read(&path)?;
        inputs.push((split, sink.relative(&path), bytes));
    }
    let outputs = par::try_map(Execution::Parallel, &inputs, |(split, name, bytes)| {
        parse_split(fmt, *split, name, bytes)
    })?;
    let mut conversations = Vec::new();
    for out in outputs {
        conversations.extend(out.conversations);
        sink.rejected.extend(out.rejected);
    }
    Ok(conversations)
}

fn parse_split(fmt: &MeisdFormat, split: Split, file: &str, bytes: &[u8]) -> Result<SplitOutput, CorpusError> {
    let table = Table::parse(bytes, file, fmt.delimiter.as_bytes()[0])?;
    let c = &fmt.columns;
    let (text_col, speaker_col, label_col) = (table.column(&c.text)?, table.column(&c.speaker)?, table.column(&c.label)?);
    let (series_col, dialogue_col) = (table.column(&c.series)?, table.column(&c.dialogue)?);

    let mut builder = ConversationBuilder::new(Dataset::Meisd, split);
    let mut rejected = Vec::new();
    for (line, fields) in &table.rows {
        let series = canonical_text(&fields[series_col]);
        let dialogue = fields[dialogue_col].trim();
        if series.is_empty() || dialogue.is_empty() {
            return Err(table.malformed(*line, "empty series/dialogue key"));
        }
        let text = canonical_text(&fields[text_col]);
        let speaker = canonical_text(&fields[speaker_col]);
        let label = fields[label_col].trim();
        if text.is_empty() {
            rejected.push(RejectedRow { file: file.to_string(), line: *line, reason: "empty text".into() });
            continue;
        }
        if speaker.is_empty() {
            rejected.push(RejectedRow { file: file.to_string(), line: *line, reason: "empty speaker".into() });
            continue;
        }
        if label.is_empty() {
            return Err(table.malformed(*line, "empty emotion label"));
        }
        builder
            .conversation(format!("{split}/{series}_{dialogue}"))
            .push(speaker, text, label.to_string(), None);
    }
    Ok(SplitOutput { conversations: builder.conversations, rejected })
}
