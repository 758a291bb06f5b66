//! Labeled sector datasets: carving, synthesis, persistence, batching.

mod npz;
mod sds;
mod synth;

pub use npz::import_benchmark;
pub use sds::{load_dataset, save_dataset};
pub use synth::{derive_rng, generate_sector, generate_synthetic, GeneratorKind, SynthSpec};

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("file shorter than one sector ({file_len} < {sector_size})")]
    EmptyFile { file_len: u64, sector_size: usize },
    #[error("invalid synthesis spec: {0}")]
    InvalidSpec(String),
    #[error("format error: {0}")]
    FormatError(String),
    #[error("label {label} not covered by {map_len}-entry label map")]
    LabelMapMismatch { label: usize, map_len: usize },
    #[error("bad magic bytes (not a sector dataset file)")]
    BadMagic,
    #[error("unsupported dataset version {0}")]
    VersionMismatch(u8),
}

/// A fixed-size labeled byte fragment, the atomic classification unit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sector {
    pub bytes: Vec<u8>,
    pub label: u16,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Immutable collection of labeled sectors sharing one sector size.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SectorDataset {
    pub sector_size: usize,
    pub class_names: Vec<String>,
    /// Optional class name -> superclass tag, for grouped confusion matrices.
    pub group_tags: Option<BTreeMap<String, String>>,
    pub records: Vec<Sector>,
    pub split: Split,
}

impl SectorDataset {
    pub fn new(
        sector_size: usize,
        class_names: Vec<String>,
        records: Vec<Sector>,
        split: Split,
    ) -> Result<Self, CorpusError> {
        let ds = SectorDataset {
            sector_size,
            class_names,
            group_tags: None,
            records,
            split,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let mut seen = std::collections::HashSet::new();
        for name in &self.class_names {
            if !seen.insert(name) {
                return Err(CorpusError::FormatError(format!(
                    "duplicate class name {name:?}"
                )));
            }
        }
        for (i, rec) in self.records.iter().enumerate() {
            if rec.bytes.len() != self.sector_size {
                return Err(CorpusError::FormatError(format!(
                    "record {i} has {} bytes, dataset sector size is {}",
                    rec.bytes.len(),
                    self.sector_size
                )));
            }
            if rec.label as usize >= self.class_names.len() {
                return Err(CorpusError::FormatError(format!(
                    "record {i} label {} out of range for {} classes",
                    rec.label,
                    self.class_names.len()
                )));
            }
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_classes()];
        for rec in &self.records {
            counts[rec.label as usize] += 1;
        }
        counts
    }

    /// Batches of (sector bytes, label). One pass visits every record exactly
    /// once; the final short batch is emitted. `shuffle_seed: None` keeps
    /// dataset order; a fixed seed gives a reproducible permutation.
    pub fn batch_iter(
        &self,
        batch_size: usize,
        shuffle_seed: Option<u64>,
    ) -> impl Iterator<Item = (Vec<&[u8]>, Vec<usize>)> + '_ {
        assert!(batch_size >= 1, "batch_size must be >= 1");
        let mut order: Vec<usize> = (0..self.records.len()).collect();
        if let Some(seed) = shuffle_seed {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            order.shuffle(&mut rng);
        }
        BatchIter {
            ds: self,
            order,
            pos: 0,
            batch_size,
        }
    }

    /// Seeded split into two datasets; `holdout_fraction` of records go to
    /// the second (used for carving a validation split out of train data).
    pub fn split_holdout(&self, holdout_fraction: f64, seed: u64) -> (SectorDataset, SectorDataset) {
        let mut order: Vec<usize> = (0..self.records.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        order.shuffle(&mut rng);
        let n_holdout = ((self.records.len() as f64) * holdout_fraction).round() as usize;
        let (held, kept) = order.split_at(n_holdout);
        let mut kept = kept.to_vec();
        let mut held = held.to_vec();
        kept.sort_unstable();
        held.sort_unstable();
        let take = |idx: &[usize], split: Split| SectorDataset {
            sector_size: self.sector_size,
            class_names: self.class_names.clone(),
            group_tags: self.group_tags.clone(),
            records: idx.iter().map(|&i| self.records[i].clone()).collect(),
            split,
        };
        (take(&kept, self.split), take(&held, Split::Val))
    }
}

struct BatchIter<'a> {
    ds: &'a SectorDataset,
    order: Vec<usize>,
    pos: usize,
    batch_size: usize,
}

impl<'a> Iterator for BatchIter<'a> {
    type Item = (Vec<&'a [u8]>, Vec<usize>);

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let idx = &self.order[self.pos..end];
        self.pos = end;
        let bytes = idx.iter().map(|&i| self.ds.records[i].bytes.as_slice()).collect();
        let labels = idx.iter().map(|&i| self.ds.records[i].label as usize).collect();
        Some((bytes, labels))
    }
}

/// Carve a file into contiguous sectors from offset 0; a trailing partial
/// sector is discarded, never zero-padded.
pub fn carve_file(path: &Path, sector_size: usize, label: u16) -> Result<Vec<Sector>, CorpusError> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < sector_size {
        return Err(CorpusError::EmptyFile {
            file_len: bytes.len() as u64,
            sector_size,
        });
    }
    Ok(bytes
        .chunks_exact(sector_size)
        .map(|chunk| Sector {
            bytes: chunk.to_vec(),
            label,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(len: usize) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.bin");
        let data: Vec<u8> = (0..len).map(|i| (i % 251) as u8).collect();
        std::fs::write(&path, data).unwrap();
        (dir, path)
    }

    #[test]
    fn carve_exact_division() {
        let (_d, p) = write_tmp(1536);
        let sectors = carve_file(&p, 512, 0).unwrap();
        assert_eq!(sectors.len(), 3);
    }

    #[test]
    fn carve_drops_trailing_partial() {
        let (_d, p) = write_tmp(1600);
        let sectors = carve_file(&p, 512, 2).unwrap();
        assert_eq!(sectors.len(), 3);
        // byte 1535 is the last carved byte
        assert_eq!(sectors[2].bytes[511], (1535 % 251) as u8);
    }

    #[test]
    fn carve_too_small_file_is_empty_file_error() {
        let (_d, p) = write_tmp(100);
        assert!(matches!(
            carve_file(&p, 512, 0),
            Err(CorpusError::EmptyFile { .. })
        ));
    }

    #[test]
    fn carve_unreadable_path_is_io_error() {
        assert!(matches!(
            carve_file(Path::new("/no/such/file"), 512, 0),
            Err(CorpusError::Io(_))
        ));
    }

    fn tiny_dataset(n: usize) -> SectorDataset {
        let records = (0..n)
            .map(|i| Sector {
                bytes: vec![i as u8; 8],
                label: (i % 2) as u16,
            })
            .collect();
        SectorDataset::new(8, vec!["a".into(), "b".into()], records, Split::Train).unwrap()
    }

    #[test]
    fn batch_sizes_cover_all_records() {
        let ds = tiny_dataset(10);
        let sizes: Vec<usize> = ds.batch_iter(4, None).map(|(b, _)| b.len()).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
    }

    #[test]
    fn unshuffled_batches_follow_dataset_order() {
        let ds = tiny_dataset(5);
        let (bytes, _) = ds.batch_iter(5, None).next().unwrap();
        for (i, b) in bytes.iter().enumerate() {
            assert_eq!(b[0], i as u8);
        }
    }

    #[test]
    fn same_seed_gives_same_permutation() {
        let ds = tiny_dataset(32);
        let run = |seed| -> Vec<u8> {
            ds.batch_iter(7, Some(seed))
                .flat_map(|(b, _)| b.into_iter().map(|s| s[0]).collect::<Vec<_>>())
                .collect()
        };
        assert_eq!(run(42), run(42));
        assert_ne!(run(42), run(43));
    }

    #[test]
    fn epoch_visits_every_record_once() {
        let ds = tiny_dataset(13);
        let mut seen: Vec<u8> = ds
            .batch_iter(4, Some(1))
            .flat_map(|(b, _)| b.into_iter().map(|s| s[0]).collect::<Vec<_>>())
            .collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..13).collect::<Vec<u8>>());
    }

    #[test]
    fn class_counts_sum_to_total() {
        let ds = tiny_dataset(9);
        assert_eq!(ds.class_counts().iter().sum::<usize>(), ds.len());
    }

    #[test]
    fn mismatched_sector_size_rejected() {
        let bad = SectorDataset::new(
            16,
            vec!["a".into()],
            vec![Sector {
                bytes: vec![0; 8],
                label: 0,
            }],
            Split::Train,
        );
        assert!(bad.is_err());
    }

    #[test]
    fn holdout_split_partitions_records() {
        let ds = tiny_dataset(20);
        let (train, val) = ds.split_holdout(0.25, 7);
        assert_eq!(val.len(), 5);
        assert_eq!(train.len() + val.len(), 20);
        assert_eq!(val.split, Split::Val);
    }
}
