use std::path::Path;

use super::format::EmoryFormat;
use super::table::{ConversationBuilder, SplitOutput, Table};
use super::{canonical_text, Conversation, CorpusError, Dataset, ParseSink, RejectedRow, Split};
use crate::par::{self, Execution};

pub(crate) fn parse(root: &Path, fmt: &EmoryFormat, sink: &mut ParseSink) -> Result<Vec<Conversation>, CorpusError> {
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

/// `"['Monica Geller', 'Rachel Green']"` becomes `"Monica Geller & Rachel Green"`;
/// a plain name passes through.
fn speaker_names(cell: &str) -> String {
    let trimmed = cell.trim();
    let Some(inner) = trimmed.strip_prefix('[').and_then(|s| s.strip_suffix(']')) else {
        return canonical_text(trimmed);
    };
    inner
        .split(',')
        .map(|n| canonical_text(n.trim().trim_matches(|c| c == '\'' || c == '"')))
        .filter(|n| !n.is_empty())
        .collect::<Vec<_>>()
        .join(" & ")
}

fn parse_split(fmt: &EmoryFormat, split: Split, file: &str, bytes: &[u8]) -> Result<SplitOutput, CorpusError> {
    let table = Table::parse(bytes, file, fmt.delimiter.as_bytes()[0])?;
    let c = &fmt.columns;
    let (text_col, speaker_col, label_col) = (table.column(&c.text)?, table.column(&c.speaker)?, table.column(&c.label)?);
    let (season_col, episode_col, scene_col) =
        (table.column(&c.season)?, table.column(&c.episode)?, table.column(&c.scene)?);

    let mut builder = ConversationBuilder::new(Dataset::EmoryNlp, split);
    let mut rejected = Vec::new();
    for (line, fields) in &table.rows {
        let key: Vec<&str> = [season_col, episode_col, scene_col].iter().map(|&i| fields[i].trim()).collect();
        if key.iter().any(|k| k.is_empty()) {
            return Err(table.malformed(*line, "empty season/episode/scene key"));
        }
        let text = canonical_text(&fields[text_col]);
        let speaker = speaker_names(&fields[speaker_col]);
        if text.is_empty() {
            rejected.push(RejectedRow { file: file.to_string(), line: *line, reason: "empty text".into() });
            continue;
        }
        if speaker.is_empty() {
            rejected.push(RejectedRow { file: file.to_string(), line: *line, reason: "empty speaker".into() });
            continue;
        }
        builder
            .conversation(format!("{split}/s{}e{}c{}", key[0], key[1], key[2]))
            .push(speaker, text, fields[label_col].trim().to_string(), None);
    }
    Ok(SplitOutput { conversations: builder.conversations, rejected })
}

#[cfg(test)]
mod tests {
    use super::speaker_names;

    #[test]
    fn speaker_list_literals() {
        assert_eq!(speaker_names("['Joey Tribbiani']"), "Joey Tribbiani");
        assert_eq!(speaker_names("['Monica Geller', 'Rachel Green']"), "Monica Geller & Rachel Green");
        assert_eq!(speaker_names(" Ross Geller "), "Ross Geller");
        assert_eq!(speaker_names("[]"), "");
    }
}
