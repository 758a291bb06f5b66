//! Benchmark archive import.
//!
//! The published benchmark container is a ZIP archive holding two serialized
//! NumPy arrays: `x` (unsigned 8-bit, shape N x sector_size) and `y` (integer
//! labels, shape N). The archive stores only label indices, so class names
//! come from a side-car JSON file: a list of names in index order.

use std::io::Read;
use std::path::Path;

use super::{CorpusError, Sector, SectorDataset, Split};

/// Build a dataset from a benchmark ZIP archive plus a label-map JSON file.
/// Records keep archive order.
pub fn import_benchmark(
    archive_path: &Path,
    label_map_path: &Path,
    sector_size: usize,
) -> Result<SectorDataset, CorpusError> {
    let label_json = std::fs::read(label_map_path)?;
    let class_names: Vec<String> = serde_json::from_slice(&label_json)
        .map_err(|e| CorpusError::FormatError(format!("label map: {e}")))?;
    if class_names.is_empty() {
        return Err(CorpusError::FormatError("label map is empty".into()));
    }

    let file = std::fs::File::open(archive_path)?;
    let mut zip = zip::ZipArchive::new(file)
        .map_err(|e| CorpusError::FormatError(format!("zip: {e}")))?;
    let x = read_entry(&mut zip, "x")?;
    let y = read_entry(&mut zip, "y")?;

    let (x_shape, x_descr, x_data) = parse_npy(&x)?;
    let (y_shape, y_descr, y_data) = parse_npy(&y)?;

    if x_shape.len() != 2 || x_shape[1] != sector_size {
        return Err(CorpusError::FormatError(format!(
            "array x has shape {x_shape:?}, want (N, {sector_size})"
        )));
    }
    if x_descr != "|u1" {
        return Err(CorpusError::FormatError(format!(
            "array x has dtype {x_descr}, want |u1"
        )));
    }
    if y_shape.len() != 1 || y_shape[0] != x_shape[0] {
        return Err(CorpusError::FormatError(format!(
            "array y has shape {y_shape:?}, x has {} rows",
            x_shape[0]
        )));
    }
    let labels = decode_labels(&y_descr, &y_data, y_shape[0])?;

    let mut records = Vec::with_capacity(x_shape[0]);
    for (row, &label) in x_data.chunks_exact(sector_size).zip(&labels) {
        if label >= class_names.len() {
            return Err(CorpusError::LabelMapMismatch {
                label,
                map_len: class_names.len(),
            });
        }
        records.push(Sector {
            bytes: row.to_vec(),
            label: label as u16,
        });
    }
    SectorDataset::new(sector_size, class_names, records, Split::Train)
}

fn read_entry<R: Read + std::io::Seek>(
    zip: &mut zip::ZipArchive<R>,
    name: &str,
) -> Result<Vec<u8>, CorpusError> {
    // benchmark archives name entries either bare or with the .npy suffix
    let idx = zip
        .index_for_name(name)
        .or_else(|| zip.index_for_name(&format!("{name}.npy")))
        .ok_or_else(|| CorpusError::FormatError(format!("archive is missing array {name:?}")))?;
    let mut entry = zip
        .by_index(idx)
        .map_err(|e| CorpusError::FormatError(format!("zip entry {name}: {e}")))?;
    let mut buf = Vec::new();
    entry
        .read_to_end(&mut buf)
        .map_err(|e| CorpusError::FormatError(format!("zip entry {name}: {e}")))?;
    Ok(buf)
}

/// Minimal NPY reader: supports version 1/2, C-order arrays. Returns
/// (shape, descr, raw data bytes).
fn parse_npy(bytes: &[u8]) -> Result<(Vec<usize>, String, Vec<u8>), CorpusError> {
    let err = |m: &str| CorpusError::FormatError(format!("npy: {m}"));
    if bytes.len() < 10 || &bytes[..6] != b"\x93NUMPY" {
        return Err(err("bad magic"));
    }
    let major = bytes[6];
    let (header_len, header_start) = match major {
        1 => (
            u16::from_le_bytes([bytes[8], bytes[9]]) as usize,
            10usize,
        ),
        2 | 3 => {
            if bytes.len() < 12 {
                return Err(err("truncated header length"));
            }
            (
                u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize,
                12usize,
            )
        }
        v => return Err(err(&format!("unsupported format version {v}"))),
    };
    let data_start = header_start + header_len;
    if bytes.len() < data_start {
        return Err(err("truncated header"));
    }
    let header = std::str::from_utf8(&bytes[header_start..data_start])
        .map_err(|_| err("header is not UTF-8"))?;

    let descr = dict_str_value(header, "descr").ok_or_else(|| err("missing descr"))?;
    if dict_raw_value(header, "fortran_order").as_deref().map(str::trim) != Some("False") {
        return Err(err("only C-order arrays are supported"));
    }
    let shape_raw = dict_raw_value(header, "shape").ok_or_else(|| err("missing shape"))?;
    let shape_inner = shape_raw
        .trim()
        .strip_prefix('(')
        .and_then(|s| s.strip_suffix(')'))
        .ok_or_else(|| err("malformed shape"))?;
    let mut shape = Vec::new();
    for part in shape_inner.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        shape.push(part.parse::<usize>().map_err(|_| err("malformed shape"))?);
    }
    Ok((shape, descr, bytes[data_start..].to_vec()))
}

/// Value of a `'key': <value>` entry in the NPY header dict, raw text up to
/// the next top-level comma (tuples keep their parentheses).
fn dict_raw_value(header: &str, key: &str) -> Option<String> {
    let pat = format!("'{key}':");
    let start = header.find(&pat)? + pat.len();
    let rest = &header[start..];
    let mut depth = 0i32;
    let mut end = rest.len();
    for (i, c) in rest.char_indices() {
        match c {
            '(' | '[' => depth += 1,
            ')' | ']' => depth -= 1,
            ',' | '}' if depth <= 0 => {
                end = i;
                break;
            }
            _ => {}
        }
    }
    Some(rest[..end].to_string())
}

fn dict_str_value(header: &str, key: &str) -> Option<String> {
    let raw = dict_raw_value(header, key)?;
    let t = raw.trim();
    let t = t.strip_prefix('\'').or_else(|| t.strip_prefix('"'))?;
    let t = t.strip_suffix('\'').or_else(|| t.strip_suffix('"'))?;
    Some(t.to_string())
}

fn decode_labels(descr: &str, data: &[u8], n: usize) -> Result<Vec<usize>, CorpusError> {
    let err = |m: String| CorpusError::FormatError(m);
    let width = match descr {
        "|u1" | "|i1" => 1,
        "<u2" | "<i2" => 2,
        "<u4" | "<i4" => 4,
        "<u8" | "<i8" => 8,
        d => return Err(err(format!("unsupported label dtype {d}"))),
    };
    if data.len() < n * width {
        return Err(err(format!(
            "label array holds {} bytes, {} expected",
            data.len(),
            n * width
        )));
    }
    let signed = descr.contains('i');
    let mut out = Vec::with_capacity(n);
    for chunk in data[..n * width].chunks_exact(width) {
        let mut v: u64 = 0;
        for (i, &b) in chunk.iter().enumerate() {
            v |= (b as u64) << (8 * i);
        }
        if signed {
            let shift = 64 - 8 * width as u32;
            let sv = ((v << shift) as i64) >> shift;
            if sv < 0 {
                return Err(err(format!("negative label {sv}")));
            }
            v = sv as u64;
        }
        out.push(v as usize);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn npy_bytes(descr: &str, shape: &str, data: &[u8]) -> Vec<u8> {
        let mut header = format!("{{'descr': '{descr}', 'fortran_order': False, 'shape': {shape}, }}");
        let pad = 64 - (10 + header.len() + 1) % 64;
        header.push_str(&" ".repeat(pad));
        header.push('\n');
        let mut out = b"\x93NUMPY\x01\x00".to_vec();
        out.extend_from_slice(&(header.len() as u16).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        out.extend_from_slice(data);
        out
    }

    fn write_archive(
        dir: &Path,
        x: &[u8],
        x_shape: &str,
        y: &[u8],
        y_descr: &str,
        y_shape: &str,
    ) -> std::path::PathBuf {
        let path = dir.join("bench.zip");
        let file = std::fs::File::create(&path).unwrap();
        let mut zip = zip::ZipWriter::new(file);
        let opts = zip::write::SimpleFileOptions::default();
        zip.start_file("x.npy", opts).unwrap();
        zip.write_all(&npy_bytes("|u1", x_shape, x)).unwrap();
        zip.start_file("y.npy", opts).unwrap();
        zip.write_all(&npy_bytes(y_descr, y_shape, y)).unwrap();
        zip.finish().unwrap();
        path
    }

    fn write_labels(dir: &Path, names: &[&str]) -> std::path::PathBuf {
        let path = dir.join("labels.json");
        std::fs::write(&path, serde_json::to_vec(names).unwrap()).unwrap();
        path
    }

    #[test]
    fn imports_records_in_archive_order() {
        let dir = tempfile::tempdir().unwrap();
        let x: Vec<u8> = (0..10 * 512).map(|i| (i % 256) as u8) .collect();
        let y: Vec<u8> = (0..10u8).map(|i| i % 3).collect();
        let archive = write_archive(dir.path(), &x, "(10, 512)", &y, "|u1", "(10,)");
        let labels = write_labels(dir.path(), &["jpg", "png", "pdf"]);
        let ds = import_benchmark(&archive, &labels, 512).unwrap();
        assert_eq!(ds.len(), 10);
        assert_eq!(ds.records[3].label, 0);
        assert_eq!(ds.records[3].bytes, x[3 * 512..4 * 512]);
        assert_eq!(ds.class_names, vec!["jpg", "png", "pdf"]);
    }

    #[test]
    fn wide_little_endian_labels_decode() {
        let dir = tempfile::tempdir().unwrap();
        let x = vec![0u8; 2 * 16];
        let y: Vec<u8> = [1i64, 0]
            .iter()
            .flat_map(|v| v.to_le_bytes())
            .collect();
        let archive = write_archive(dir.path(), &x, "(2, 16)", &y, "<i8", "(2,)");
        let labels = write_labels(dir.path(), &["a", "b"]);
        let ds = import_benchmark(&archive, &labels, 16).unwrap();
        assert_eq!(ds.records[0].label, 1);
        assert_eq!(ds.records[1].label, 0);
    }

    #[test]
    fn row_count_mismatch_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let x = vec![0u8; 10 * 512];
        let y = vec![0u8; 9];
        let archive = write_archive(dir.path(), &x, "(10, 512)", &y, "|u1", "(9,)");
        let labels = write_labels(dir.path(), &["a", "b"]);
        assert!(matches!(
            import_benchmark(&archive, &labels, 512),
            Err(CorpusError::FormatError(_))
        ));
    }

    #[test]
    fn out_of_range_label_is_label_map_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let x = vec![0u8; 2 * 16];
        let y = vec![0u8, 2]; // map has indices 0..=1
        let archive = write_archive(dir.path(), &x, "(2, 16)", &y, "|u1", "(2,)");
        let labels = write_labels(dir.path(), &["a", "b"]);
        assert!(matches!(
            import_benchmark(&archive, &labels, 16),
            Err(CorpusError::LabelMapMismatch { label: 2, map_len: 2 })
        ));
    }

    #[test]
    fn missing_array_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.zip");
        let mut zip = zip::ZipWriter::new(std::fs::File::create(&path).unwrap());
        let opts = zip::write::SimpleFileOptions::default();
        zip.start_file("x.npy", opts).unwrap();
        zip.write_all(&npy_bytes("|u1", "(1, 4)", &[0, 0, 0, 0]))
            .unwrap();
        zip.finish().unwrap();
        let labels = write_labels(dir.path(), &["a", "b"]);
        assert!(matches!(
            import_benchmark(&path, &labels, 4),
            Err(CorpusError::FormatError(_))
        ));
    }
}
