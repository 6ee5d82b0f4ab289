use std::collections::HashMap;
use std::path::{Path, PathBuf};

use super::format::IemocapFormat;
use super::{canonical_text, decode_text, Conversation, CorpusError, Dataset, ParseSink, Split};

struct Line<'a> {
    id: &'a str,
    start: f64,
    end: f64,
    text: &'a str,
}

/// `Ses01F_impro01_F000 [006.2901-008.2357]: Excuse me.`
fn parse_transcription_line(line: &str) -> Option<Result<Line<'_>, String>> {
    let (id, rest) = line.split_once(" [")?;
    let (span, text) = rest.split_once("]:")?;
    if id.contains(' ') || !id.starts_with("Ses") {
        return None;
    }
    let (s, e) = match span.split_once('-') {
        Some(p) => p,
        None => return Some(Err(format!("bad time span [{span}]"))),
    };
    match (s.trim().parse::<f64>(), e.trim().parse::<f64>()) {
        (Ok(start), Ok(end)) => Some(Ok(Line { id, start, end, text })),
        _ => Some(Err(format!("bad time span [{span}]"))),
    }
}

/// Gender letter of a segmented utterance id (`..._F000` -> `F`), or `None`
/// for unsegmented ids such as `..._MXX0`.
fn speaker_of(id: &str) -> Option<&str> {
    let last = id.rsplit('_').next()?;
    let (gender, num) = last.split_at_checked(1)?;
    if (gender == "F" || gender == "M") && !num.is_empty() && num.bytes().all(|b| b.is_ascii_digit()) {
        Some(gender)
    } else {
        None
    }
}

fn sorted_entries(dir: &Path, want_dir: bool) -> Result<Vec<PathBuf>, CorpusError> {
    let read = std::fs::read_dir(dir).map_err(|source| CorpusError::Io { path: dir.to_path_buf(), source })?;
    let mut out: Vec<PathBuf> = read
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() == want_dir)
        .filter(|p| !p.file_name().is_some_and(|n| n.to_string_lossy().starts_with('.')))
        .collect();
    out.sort();
    Ok(out)
}

pub(crate) fn parse(root: &Path, fmt: &IemocapFormat, sink: &mut ParseSink) -> Result<Vec<Conversation>, CorpusError> {
    let mut conversations = Vec::new();
    for session in sorted_entries(root, true)? {
        let session_name = session.file_name().unwrap_or_default().to_string_lossy().to_string();
        if !session_name.starts_with(&fmt.session_prefix) {
            continue;
        }
        let split = if fmt.test_sessions.contains(&session_name) { Split::Test } else { Split::Train };
        let trans_dir = session.join(&fmt.transcriptions);
        if !trans_dir.is_dir() {
            return Err(CorpusError::MissingFile(trans_dir));
        }
        for trans_path in sorted_entries(&trans_dir, false)? {
            if trans_path.extension().is_none_or(|e| e != "txt") {
                continue;
            }
            let dialog = trans_path.file_stem().unwrap_or_default().to_string_lossy().to_string();
            let eval_path = session.join(&fmt.evaluations).join(trans_path.file_name().unwrap_or_default());
            let labels = read_labels(&eval_path, sink)?;
            let trans_name = sink.relative(&trans_path);
            let text = decode_text(&sink.read(&trans_path)?);

            let mut rows = Vec::new();
            for (i, raw) in text.lines().enumerate() {
                let line_no = i + 1;
                if raw.trim().is_empty() {
                    continue;
                }
                let parsed = match parse_transcription_line(raw) {
                    None => {
                        sink.reject(&trans_name, line_no, "no utterance id");
                        continue;
                    }
                    Some(Err(reason)) => {
                        return Err(CorpusError::Malformed { file: trans_name, line: line_no, reason });
                    }
                    Some(Ok(l)) => l,
                };
                let Some(speaker) = speaker_of(parsed.id) else {
                    sink.reject(&trans_name, line_no, format!("unsegmented utterance {}", parsed.id));
                    continue;
                };
                let Some(label) = labels.get(parsed.id) else {
                    sink.reject(&trans_name, line_no, format!("no evaluation label for {}", parsed.id));
                    continue;
                };
                if fmt.skip_labels.iter().any(|s| s.eq_ignore_ascii_case(label)) {
                    sink.reject(&trans_name, line_no, format!("label '{label}' skipped"));
                    continue;
                }
                let utterance_text = canonical_text(parsed.text);
                if utterance_text.is_empty() {
                    sink.reject(&trans_name, line_no, "empty text");
                    continue;
                }
                let video_ref = fmt.video_dir.as_ref().map(|d| {
                    format!("{session_name}/{d}/{dialog}.{}#t={},{}", fmt.video_ext, parsed.start, parsed.end)
                });
                rows.push((parsed.start, speaker.to_string(), utterance_text, label.clone(), video_ref));
            }
            rows.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut conv = Conversation::new(dialog, Dataset::Iemocap, split);
            for (_, speaker, text, label, video_ref) in rows {
                conv.push(speaker, text, label, video_ref);
            }
            if !conv.utterances.is_empty() {
                conversations.push(conv);
            }
        }
    }
    Ok(conversations)
}

/// `[6.2901 - 8.2357]\tSes01F_impro01_F000\tneu\t[2.5000, 2.5000, 2.5000]`
fn read_labels(path: &Path, sink: &mut ParseSink) -> Result<HashMap<String, String>, CorpusError> {
    let text = decode_text(&sink.read(path)?);
    let name = sink.relative(path);
    let mut out = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        if !line.starts_with('[') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 3 {
            return Err(CorpusError::Malformed {
                file: name,
                line: i + 1,
                reason: "expected [span], id and label separated by tabs".into(),
            });
        }
        out.insert(fields[1].trim().to_string(), fields[2].trim().to_string());
    }
    Ok(out)
}
