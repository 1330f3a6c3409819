use std::collections::BTreeMap;
use std::path::Path;

use super::trials::strip_comment;
use super::IoError;

/// Phone sequences keyed by utterance id, one `utt_id phone1 phone2 ...` per line.
pub type Transcripts = BTreeMap<String, Vec<String>>;

pub fn parse_transcripts(text: &str) -> Result<Transcripts, IoError> {
    let mut out = Transcripts::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = strip_comment(raw);
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let utt = fields.next().unwrap().to_string();
        let phones: Vec<String> = fields.map(str::to_string).collect();
        if phones.is_empty() {
            return Err(IoError::Parse {
                line: idx + 1,
                message: format!("utterance `{utt}` has an empty transcript"),
            });
        }
        if out.insert(utt.clone(), phones).is_some() {
            return Err(IoError::Parse {
                line: idx + 1,
                message: format!("duplicate utterance `{utt}`"),
            });
        }
    }
    Ok(out)
}

pub fn load_transcripts(path: impl AsRef<Path>) -> Result<Transcripts, IoError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    parse_transcripts(&text)
}

pub fn format_transcripts<'a>(entries: impl IntoIterator<Item = (&'a str, &'a [String])>) -> String {
    entries
        .into_iter()
        .map(|(utt, phones)| format!("{} {}\n", utt, phones.join(" ")))
        .collect()
}
