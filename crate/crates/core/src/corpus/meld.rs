use std::path::Path;

use super::format::MeldFormat;
use super::table::{ConversationBuilder, SplitOutput, Table};
use super::{canonical_text, Conversation, CorpusError, Dataset, ParseSink, RejectedRow, Split};
use crate::par::{self, Execution};

pub(crate) fn parse(root: &Path, fmt: &MeldFormat, sink: &mut ParseSink) -> Result<Vec<Conversation>, CorpusError> {
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

fn parse_split(fmt: &MeldFormat, split: Split, file: &str, bytes: &[u8]) -> Result<SplitOutput, CorpusError> {
    let table = Table::parse(bytes, file, fmt.delimiter.as_bytes()[0])?;
    let c = &fmt.columns;
    let (text_col, speaker_col, label_col, dia_col, utt_col) = (
        table.column(&c.text)?,
        table.column(&c.speaker)?,
        table.column(&c.label)?,
        table.column(&c.dialogue)?,
        table.column(&c.utterance)?,
    );
    let video_dir = fmt.video_dirs.as_ref().and_then(|d| d.get(split));

    let mut builder = ConversationBuilder::new(Dataset::Meld, split);
    let mut rejected = Vec::new();
    for (line, fields) in &table.rows {
        let dialogue: u64 = fields[dia_col]
            .trim()
            .parse()
            .map_err(|_| table.malformed(*line, format!("{} is not an integer: {:?}", c.dialogue, fields[dia_col])))?;
        let utterance: u64 = fields[utt_col]
            .trim()
            .parse()
            .map_err(|_| table.malformed(*line, format!("{} is not an integer: {:?}", c.utterance, fields[utt_col])))?;
        let text = canonical_text(&fields[text_col]);
        let speaker = canonical_text(&fields[speaker_col]);
        if text.is_empty() {
            rejected.push(RejectedRow { file: file.to_string(), line: *line, reason: "empty text".into() });
            continue;
        }
        if speaker.is_empty() {
            rejected.push(RejectedRow { file: file.to_string(), line: *line, reason: "empty speaker".into() });
            continue;
        }
        let video_ref = video_dir.map(|d| format!("{d}/dia{dialogue}_utt{utterance}.{}", fmt.video_ext));
        builder
            .conversation(format!("{split}/dia{dialogue}"))
            .push(speaker, text, fields[label_col].trim().to_string(), video_ref);
    }
    Ok(SplitOutput { conversations: builder.conversations, rejected })
}
