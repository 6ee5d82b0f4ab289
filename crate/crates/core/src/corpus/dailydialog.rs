use std::path::Path;

use super::format::DailyDialogFormat;
use super::{canonical_text, decode_text, Conversation, CorpusError, Dataset, ParseSink};

pub(crate) fn parse(
    root: &Path,
    fmt: &DailyDialogFormat,
    sink: &mut ParseSink,
) -> Result<Vec<Conversation>, CorpusError> {
    let mut conversations = Vec::new();
    for (split, files) in fmt.files.iter() {
        let text_path = root.join(&files.text);
        let label_path = root.join(&files.labels);
        let text = decode_text(&sink.read(&text_path)?);
        let labels = decode_text(&sink.read(&label_path)?);
        let text_name = sink.relative(&text_path);
        let label_name = sink.relative(&label_path);

        let text_lines: Vec<&str> = text.lines().collect();
        let label_lines: Vec<&str> = labels.lines().collect();
        let trailing_blank = |lines: &[&str]| lines.iter().rev().take_while(|l| l.trim().is_empty()).count();
        let n_text = text_lines.len() - trailing_blank(&text_lines);
        let n_label = label_lines.len() - trailing_blank(&label_lines);
        if n_text != n_label {
            return Err(CorpusError::Malformed {
                file: label_name,
                line: n_text.min(n_label) + 1,
                reason: format!("{n_text} dialogues in {text_name} but {n_label} label lines"),
            });
        }

        for (i, (dialogue, codes)) in text_lines.iter().zip(&label_lines).take(n_text).enumerate() {
            let line = i + 1;
            let mut turns: Vec<&str> = dialogue.split(fmt.turn_delimiter.as_str()).collect();
            if turns.last().is_some_and(|t| t.trim().is_empty()) {
                turns.pop();
            }
            let codes: Vec<&str> = codes.split_whitespace().collect();
            if turns.len() != codes.len() {
                return Err(CorpusError::Malformed {
                    file: label_name.clone(),
                    line,
                    reason: format!("{} turns but {} labels", turns.len(), codes.len()),
                });
            }
            let mut conv = Conversation::new(format!("{split}/dlg{i}"), Dataset::DailyDialog, split);
            for (j, (turn, code)) in turns.iter().zip(&codes).enumerate() {
                let text = canonical_text(turn);
                if text.is_empty() {
                    sink.reject(&text_name, line, format!("empty text in turn {j}"));
                    continue;
                }
                let speaker = fmt.speakers[j % fmt.speakers.len()].clone();
                conv.push(speaker, text, code.to_string(), None);
            }
            if !conv.utterances.is_empty() {
                conversations.push(conv);
            }
        }
    }
    Ok(conversations)
}
