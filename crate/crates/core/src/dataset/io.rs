use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{AugmentedRecord, CaptionRecord, DatasetError};
use crate::FORMAT_HEADER;

/// Parses a JSON-lines body, skipping the version header and `#` comments.
/// Line numbers in errors are 1-based file lines.
fn parse_lines<T: DeserializeOwned>(text: &str) -> Result<Vec<T>, DatasetError> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if idx == 0 && line.starts_with("#laclip-kit") {
            if line != FORMAT_HEADER {
                return Err(DatasetError::UnsupportedVersion(line.to_string()));
            }
            continue;
        }
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let value = serde_json::from_str(line).map_err(|e| DatasetError::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        out.push(value);
    }
    Ok(out)
}

fn render<T: Serialize>(items: &[T]) -> String {
    let mut out = String::with_capacity(64 * items.len() + FORMAT_HEADER.len() + 1);
    out.push_str(FORMAT_HEADER);
    out.push('\n');
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("records serialize"));
        out.push('\n');
    }
    out
}

/// Writes via a sibling temp file and rename, so readers never see a partial file.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), DatasetError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| DatasetError::io(parent, e))?;
    }
    let tmp = path.with_extension("tmp-write");
    let mut f = fs::File::create(&tmp).map_err(|e| DatasetError::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| DatasetError::io(&tmp, e))?;
    f.sync_all().map_err(|e| DatasetError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| DatasetError::io(path, e))
}

fn read(path: &Path) -> Result<String, DatasetError> {
    fs::read_to_string(path).map_err(|e| DatasetError::io(path, e))
}

pub fn read_caption_lines(text: &str) -> Result<Vec<AugmentedRecord>, DatasetError> {
    let raw: Vec<CaptionRecord> = parse_lines(text)?;
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(raw.len());
    for r in raw {
        if !seen.insert(r.id.clone()) {
            return Err(DatasetError::DuplicateId(r.id));
        }
        let rec = AugmentedRecord::from(r);
        rec.validate()?;
        out.push(rec);
    }
    Ok(out)
}

/// Reads a caption file (`{id, image_ref, caption}` per line) into records with `M = 0`.
pub fn ingest_captions(path: impl AsRef<Path>) -> Result<Vec<AugmentedRecord>, DatasetError> {
    read_caption_lines(&read(path.as_ref())?)
}

pub fn write_captions(path: impl AsRef<Path>, records: &[CaptionRecord]) -> Result<(), DatasetError> {
    write_atomic(path.as_ref(), render(records).as_bytes())
}

pub fn read_augmented(path: impl AsRef<Path>) -> Result<Vec<AugmentedRecord>, DatasetError> {
    let records: Vec<AugmentedRecord> = parse_lines(&read(path.as_ref())?)?;
    let mut seen = HashSet::new();
    for r in &records {
        r.validate()?;
        if !seen.insert(r.id.as_str()) {
            return Err(DatasetError::DuplicateId(r.id.clone()));
        }
    }
    Ok(records)
}

/// Canonical bytes of an augmented dataset.
pub fn write_augmented_to(records: &[AugmentedRecord]) -> String {
    render(records)
}

pub fn write_augmented(path: impl AsRef<Path>, records: &[AugmentedRecord]) -> Result<(), DatasetError> {
    write_atomic(path.as_ref(), render(records).as_bytes())
}
