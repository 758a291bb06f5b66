//! Synthetic sector generators for desk-scale experiments.
//!
//! Five generator kinds with clearly different byte- and bit-level
//! statistics. The `vlc_stream` kind emulates a variable-length-coded
//! bitstream: symbols of a fixed 8-symbol source are Huffman-encoded with a
//! fixed canonical code table and packed MSB-first, so code words routinely
//! cross byte boundaries.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CorpusError, Sector, SectorDataset, Split};

/// Canonical Huffman table for the 8-symbol source, MSB-first:
///
/// | symbol | code      | length |
/// |--------|-----------|--------|
/// | 0      | 0         | 1      |
/// | 1      | 10        | 2      |
/// | 2      | 110       | 3      |
/// | 3      | 1110      | 4      |
/// | 4      | 11110     | 5      |
/// | 5      | 111110    | 6      |
/// | 6      | 1111110   | 7      |
/// | 7      | 1111111   | 7      |
///
/// Symbols are drawn uniformly, so the code is deliberately mismatched to the
/// source distribution and the packed bit stream carries strong structure.
const VLC_CODES: [(u32, u32); 8] = [
    (0b0, 1),
    (0b10, 2),
    (0b110, 3),
    (0b1110, 4),
    (0b11110, 5),
    (0b111110, 6),
    (0b1111110, 7),
    (0b1111111, 7),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    VlcStream,
    AsciiText,
    Periodic,
    UniformRandom,
    ZeroRuns,
}

impl GeneratorKind {
    pub fn name(&self) -> &'static str {
        match self {
            GeneratorKind::VlcStream => "vlc_stream",
            GeneratorKind::AsciiText => "ascii_text",
            GeneratorKind::Periodic => "periodic",
            GeneratorKind::UniformRandom => "uniform_random",
            GeneratorKind::ZeroRuns => "zero_runs",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub classes: Vec<GeneratorKind>,
    pub per_class_count: usize,
    pub sector_size: usize,
    pub seed: u64,
}

/// Generate one sector of the given kind.
pub fn generate_sector(kind: GeneratorKind, sector_size: usize, rng: &mut ChaCha8Rng) -> Vec<u8> {
    match kind {
        GeneratorKind::VlcStream => vlc_sector(sector_size, rng),
        GeneratorKind::AsciiText => ascii_sector(sector_size, rng),
        GeneratorKind::Periodic => periodic_sector(sector_size, rng),
        GeneratorKind::UniformRandom => (0..sector_size).map(|_| rng.gen()).collect(),
        GeneratorKind::ZeroRuns => zero_runs_sector(sector_size, rng),
    }
}

fn vlc_sector(sector_size: usize, rng: &mut ChaCha8Rng) -> Vec<u8> {
    let mut out = Vec::with_capacity(sector_size);
    let mut acc: u32 = 0;
    let mut nbits: u32 = 0;
    while out.len() < sector_size {
        let sym = rng.gen_range(0..8usize);
        let (code, len) = VLC_CODES[sym];
        acc = (acc << len) | code;
        nbits += len;
        while nbits >= 8 && out.len() < sector_size {
            nbits -= 8;
            out.push((acc >> nbits) as u8);
        }
    }
    out
}

fn ascii_sector(sector_size: usize, rng: &mut ChaCha8Rng) -> Vec<u8> {
    // word-structured text, every byte within [0x09, 0x7E]
    let mut out = Vec::with_capacity(sector_size);
    while out.len() < sector_size {
        let word_len = rng.gen_range(2..10usize);
        for _ in 0..word_len {
            if out.len() >= sector_size {
                break;
            }
            out.push(rng.gen_range(b'a'..=b'z'));
        }
        if out.len() < sector_size {
            out.push(if rng.gen_ratio(1, 12) { b'\n' } else { b' ' });
        }
    }
    out
}

fn periodic_sector(sector_size: usize, rng: &mut ChaCha8Rng) -> Vec<u8> {
    let period = rng.gen_range(4..=32usize);
    let pattern: Vec<u8> = (0..period).map(|_| rng.gen()).collect();
    let phase = rng.gen_range(0..period);
    (0..sector_size)
        .map(|i| pattern[(i + phase) % period])
        .collect()
}

fn zero_runs_sector(sector_size: usize, rng: &mut ChaCha8Rng) -> Vec<u8> {
    // alternate zero runs and shorter data runs; every prefix has at least as
    // many zeros as non-zeros, so >= 50% zero bytes holds after truncation
    let mut out = Vec::with_capacity(sector_size);
    while out.len() < sector_size {
        let zero_len = rng.gen_range(8..=64usize);
        let data_len = rng.gen_range(1..=zero_len.min(8));
        for _ in 0..zero_len {
            if out.len() >= sector_size {
                break;
            }
            out.push(0);
        }
        for _ in 0..data_len {
            if out.len() >= sector_size {
                break;
            }
            out.push(rng.gen_range(1..=255u8) as u8);
        }
    }
    out
}

/// Deterministic synthetic dataset: a pure function of the spec. Records are
/// laid out class-major, `per_class_count` sectors per class.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<SectorDataset, CorpusError> {
    if spec.classes.len() < 2 {
        return Err(CorpusError::InvalidSpec(
            "at least 2 generator classes required".into(),
        ));
    }
    if spec.per_class_count == 0 {
        return Err(CorpusError::InvalidSpec("per_class_count must be > 0".into()));
    }
    if spec.sector_size == 0 {
        return Err(CorpusError::InvalidSpec("sector_size must be > 0".into()));
    }
    {
        let mut seen = std::collections::HashSet::new();
        for k in &spec.classes {
            if !seen.insert(k.name()) {
                return Err(CorpusError::InvalidSpec(format!(
                    "duplicate generator kind {}",
                    k.name()
                )));
            }
        }
    }
    let mut records = Vec::with_capacity(spec.classes.len() * spec.per_class_count);
    for (label, kind) in spec.classes.iter().enumerate() {
        for i in 0..spec.per_class_count {
            // per-record stream so generation order never matters
            let mut rng = derive_rng(spec.seed, &[label as u64, i as u64]);
            records.push(Sector {
                bytes: generate_sector(*kind, spec.sector_size, &mut rng),
                label: label as u16,
            });
        }
    }
    SectorDataset::new(
        spec.sector_size,
        spec.classes.iter().map(|k| k.name().to_string()).collect(),
        records,
        Split::Train,
    )
}

/// Counter-derived RNG stream: splitmix-style mixing of a base seed and tags.
pub fn derive_rng(base: u64, tags: &[u64]) -> ChaCha8Rng {
    let mut state = base ^ 0x9e37_79b9_7f4a_7c15;
    for &t in tags {
        state = state.wrapping_add(t).wrapping_add(0x9e37_79b9_7f4a_7c15);
        state = (state ^ (state >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        state = (state ^ (state >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        state ^= state >> 31;
    }
    ChaCha8Rng::seed_from_u64(state)
}
