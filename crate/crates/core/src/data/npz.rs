//! `.npz` containers: ZIP archives whose members are `.npy` payloads.

use std::collections::BTreeMap;
use std::io::{Cursor, Read, Write};

use zip::write::SimpleFileOptions;
use zip::{CompressionMethod, ZipArchive, ZipWriter};

use super::npy::{parse_npy, write_npy, NpyArray, NpyError};
use super::DataError;

/// Decodes every `.npy` member, keyed by member name without the extension.
pub fn parse_npz(bytes: &[u8]) -> Result<BTreeMap<String, NpyArray>, DataError> {
    let mut archive =
        ZipArchive::new(Cursor::new(bytes)).map_err(|e| DataError::Archive(e.to_string()))?;
    let mut out = BTreeMap::new();
    for i in 0..archive.len() {
        let mut file = archive.by_index(i).map_err(|e| DataError::Archive(e.to_string()))?;
        if file.is_dir() {
            continue;
        }
        let name = file.name().to_string();
        let key = name.strip_suffix(".npy").unwrap_or(&name).to_string();
        let mut buf = Vec::with_capacity(file.size() as usize);
        file.read_to_end(&mut buf).map_err(|e| DataError::Archive(format!("{name}: {e}")))?;
        let array = parse_npy(&buf).map_err(|e: NpyError| DataError::Member { name, source: e })?;
        out.insert(key, array);
    }
    Ok(out)
}

/// Writes members as `<name>.npy`, either stored or deflated.
pub fn write_npz(members: &[(&str, &NpyArray)], compress: bool) -> Result<Vec<u8>, DataError> {
    let mut zip = ZipWriter::new(Cursor::new(Vec::new()));
    let method = if compress { CompressionMethod::Deflated } else { CompressionMethod::Stored };
    let options = SimpleFileOptions::default()
        .compression_method(method)
        .last_modified_time(zip::DateTime::default());
    for (name, array) in members {
        zip.start_file(format!("{name}.npy"), options)
            .map_err(|e| DataError::Archive(e.to_string()))?;
        zip.write_all(&write_npy(array))?;
    }
    let cursor = zip.finish().map_err(|e| DataError::Archive(e.to_string()))?;
    Ok(cursor.into_inner())
}
