//! Sector dataset container (`.sds`).
//!
//! Layout, all integers little-endian:
//! magic `SDS1` | u32 sector_size | u32 num_classes | u64 record_count |
//! u32 json_len | JSON header {class_names, group_tags, split} |
//! record_count x (u16 label, sector_size raw bytes).

use std::collections::BTreeMap;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CorpusError, Sector, SectorDataset, Split};

const MAGIC: &[u8; 4] = b"SDS1";

#[derive(Serialize, Deserialize)]
struct Header {
    class_names: Vec<String>,
    group_tags: Option<BTreeMap<String, String>>,
    split: Split,
}

pub fn save_dataset(ds: &SectorDataset, path: &Path) -> Result<(), CorpusError> {
    ds.validate()?;
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(ds.sector_size as u32).to_le_bytes())?;
    w.write_all(&(ds.num_classes() as u32).to_le_bytes())?;
    w.write_all(&(ds.records.len() as u64).to_le_bytes())?;
    let header = serde_json::to_vec(&Header {
        class_names: ds.class_names.clone(),
        group_tags: ds.group_tags.clone(),
        split: ds.split,
    })
    .map_err(|e| CorpusError::FormatError(e.to_string()))?;
    w.write_all(&(header.len() as u32).to_le_bytes())?;
    w.write_all(&header)?;
    for rec in &ds.records {
        w.write_all(&rec.label.to_le_bytes())?;
        w.write_all(&rec.bytes)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<SectorDataset, CorpusError> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| CorpusError::FormatError("truncated header".into()))?;
    if &magic != MAGIC {
        if magic[..3] == *b"SDS" {
            return Err(CorpusError::VersionMismatch(magic[3]));
        }
        return Err(CorpusError::BadMagic);
    }
    let sector_size = read_u32(&mut r)? as usize;
    let num_classes = read_u32(&mut r)? as usize;
    let record_count = read_u64(&mut r)? as usize;
    let json_len = read_u32(&mut r)? as usize;
    let mut json = vec![0u8; json_len];
    r.read_exact(&mut json)
        .map_err(|_| CorpusError::FormatError("truncated JSON header".into()))?;
    let header: Header = serde_json::from_slice(&json)
        .map_err(|e| CorpusError::FormatError(format!("bad JSON header: {e}")))?;
    if header.class_names.len() != num_classes {
        return Err(CorpusError::FormatError(format!(
            "header declares {} classes, JSON lists {}",
            num_classes,
            header.class_names.len()
        )));
    }
    let mut records = Vec::with_capacity(record_count);
    for i in 0..record_count {
        let mut label = [0u8; 2];
        let mut bytes = vec![0u8; sector_size];
        r.read_exact(&mut label)
            .and_then(|_| r.read_exact(&mut bytes))
            .map_err(|_| CorpusError::FormatError(format!("truncated at record {i}")))?;
        records.push(Sector {
            bytes,
            label: u16::from_le_bytes(label),
        });
    }
    let ds = SectorDataset {
        sector_size,
        class_names: header.class_names,
        group_tags: header.group_tags,
        records,
        split: header.split,
    };
    ds.validate()?;
    Ok(ds)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, CorpusError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| CorpusError::FormatError("truncated header".into()))?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, CorpusError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)
        .map_err(|_| CorpusError::FormatError("truncated header".into()))?;
    Ok(u64::from_le_bytes(b))
}
