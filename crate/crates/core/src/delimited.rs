use std::fs::File;
use std::path::Path;

use crate::error::{Error, Result};

/// Tab for `.tsv`/`.tab` files, comma otherwise.
pub(crate) fn delimiter_for(path: &Path) -> u8 {
    match path.extension().and_then(|e| e.to_str()) {
        Some("tsv") | Some("tab") => b'\t',
        _ => b',',
    }
}

/// Header-aware reader with `#` comment lines and trimmed fields.
pub(crate) fn reader(path: &Path) -> Result<csv::Reader<File>> {
    csv::ReaderBuilder::new()
        .delimiter(delimiter_for(path))
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::parse(path.display().to_string(), format!("{other:?}")),
        })
}
