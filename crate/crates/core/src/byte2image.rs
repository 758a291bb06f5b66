//! Byte2Image: reinterpret a byte sector as a 2D grayscale image.
//!
//! A sliding byte window with 1-bit stride exposes intrabyte structure: row j,
//! column i of the byte matrix is the 8-bit window of the sector's bit stream
//! starting at bit offset `8j + i`, with bits past the end of the stream read
//! as 0. Stacking n consecutive rows side by side widens the image to `8n`
//! columns (the intrabyte n-gram), giving an `(N_s - n + 1) x 8n` image.
//!
//! 4,096-byte sectors are split into eight consecutive 512-byte segments,
//! each converted independently and stacked as channels in segment order.

use std::io::Write;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("empty input")]
    EmptyInput,
    #[error("n-gram order {n} out of range for sector of {len} bytes")]
    BadNGram { n: usize, len: usize },
    #[error("unsupported sector size {0} (expected 512 or 4096)")]
    BadSectorSize(usize),
    #[error("zero-size image")]
    FormatError,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// `N_s x 8` matrix of bit-shifted byte windows. Column 0 is the raw sector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ByteMatrix {
    /// Row-major `n_s x 8`.
    pub data: Vec<u8>,
    pub n_s: usize,
}

impl ByteMatrix {
    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.data[row * 8 + col]
    }

    pub fn row(&self, row: usize) -> &[u8] {
        &self.data[row * 8..row * 8 + 8]
    }
}

/// Grayscale n-gram image, `height x width x channels`, HWC interleaved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NGramImage {
    pub pixels: Vec<u8>,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub n: usize,
}

impl NGramImage {
    pub fn get(&self, h: usize, w: usize, c: usize) -> u8 {
        self.pixels[(h * self.width + w) * self.channels + c]
    }
}

/// Build the bit-window matrix: entry `(j, i)` is
/// `((x[j] << i) | (x[j+1] >> (8-i))) & 0xFF` with `x[N_s]` read as 0, i.e.
/// column i is the whole sector left-shifted by i bits as one bit stream.
pub fn bit_window_matrix(sector: &[u8]) -> Result<ByteMatrix, ImageError> {
    if sector.is_empty() {
        return Err(ImageError::EmptyInput);
    }
    let n_s = sector.len();
    let mut data = vec![0u8; n_s * 8];
    for j in 0..n_s {
        let cur = sector[j] as u16;
        let next = if j + 1 < n_s { sector[j + 1] as u16 } else { 0 };
        let window = (cur << 8) | next;
        let row = &mut data[j * 8..j * 8 + 8];
        for (i, out) in row.iter_mut().enumerate() {
            *out = (window >> (8 - i)) as u8;
        }
    }
    Ok(ByteMatrix { data, n_s })
}

/// Concatenate n consecutive matrix rows per image row: `(N_s - n + 1) x 8n`.
pub fn ngram_image(m: &ByteMatrix, n: usize) -> Result<NGramImage, ImageError> {
    if n == 0 || n > m.n_s {
        return Err(ImageError::BadNGram { n, len: m.n_s });
    }
    let height = m.n_s - n + 1;
    let width = 8 * n;
    let mut pixels = vec![0u8; height * width];
    for h in 0..height {
        let dst = &mut pixels[h * width..(h + 1) * width];
        dst.copy_from_slice(&m.data[h * 8..(h + n) * 8]);
    }
    Ok(NGramImage {
        pixels,
        height,
        width,
        channels: 1,
        n,
    })
}

/// Full conversion. 512-byte sectors give a single-channel image; 4,096-byte
/// sectors give eight channels, one per consecutive 512-byte segment.
pub fn sector_to_image(sector: &[u8], n: usize) -> Result<NGramImage, ImageError> {
    match sector.len() {
        512 => ngram_image(&bit_window_matrix(sector)?, n),
        4096 => {
            let parts: Vec<NGramImage> = sector
                .chunks(512)
                .map(|seg| ngram_image(&bit_window_matrix(seg)?, n))
                .collect::<Result<_, _>>()?;
            let (height, width) = (parts[0].height, parts[0].width);
            let channels = parts.len();
            let mut pixels = vec![0u8; height * width * channels];
            for (ch, part) in parts.iter().enumerate() {
                for h in 0..height {
                    for w in 0..width {
                        pixels[(h * width + w) * channels + ch] = part.pixels[h * width + w];
                    }
                }
            }
            Ok(NGramImage {
                pixels,
                height,
                width,
                channels,
                n,
            })
        }
        other => Err(ImageError::BadSectorSize(other)),
    }
}

/// Write a binary PGM (`P5`, maxval 255). Multi-channel images are written as
/// one file per channel with a `_c<k>` suffix before the extension.
pub fn emit_pgm(img: &NGramImage, path: &Path) -> Result<(), ImageError> {
    if img.height == 0 || img.width == 0 || img.channels == 0 {
        return Err(ImageError::FormatError);
    }
    if img.channels == 1 {
        write_pgm_plane(img, 0, path)
    } else {
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let ext = path
            .extension()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "pgm".to_string());
        let dir = path.parent().unwrap_or_else(|| Path::new("."));
        for ch in 0..img.channels {
            let name = format!("{stem}_c{ch}.{ext}");
            write_pgm_plane(img, ch, &dir.join(name))?;
        }
        Ok(())
    }
}

fn write_pgm_plane(img: &NGramImage, ch: usize, path: &Path) -> Result<(), ImageError> {
    let mut buf = Vec::with_capacity(img.height * img.width + 32);
    write!(buf, "P5\n{} {}\n255\n", img.width, img.height)?;
    for h in 0..img.height {
        for w in 0..img.width {
            buf.push(img.get(h, w, ch));
        }
    }
    std::fs::write(path, buf)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Naive oracle: materialize the sector as a bit string padded with zeros
    /// and slice 8-bit windows at arbitrary bit offsets.
    pub fn bit_string_window(sector: &[u8], bit_offset: usize) -> u8 {
        let mut bits: Vec<u8> = Vec::with_capacity(sector.len() * 8 + 7);
        for &b in sector {
            for i in (0..8).rev() {
                bits.push((b >> i) & 1);
            }
        }
        bits.extend_from_slice(&[0; 7]);
        bits[bit_offset..bit_offset + 8]
            .iter()
            .fold(0u8, |acc, &b| (acc << 1) | b)
    }

    #[test]
    fn all_zero_sector_gives_all_zero_matrix() {
        let m = bit_window_matrix(&[0u8; 512]).unwrap();
        assert_eq!(m.n_s, 512);
        assert!(m.data.iter().all(|&v| v == 0));
    }

    #[test]
    fn worked_two_byte_example_rows() {
        // bit string 1011010001100001 + zero padding
        let m = bit_window_matrix(&[0xB4, 0x61]).unwrap();
        assert_eq!(m.row(0), &[0xB4, 0x68, 0xD1, 0xA3, 0x46, 0x8C, 0x18, 0x30]);
        assert_eq!(m.row(1), &[0x61, 0xC2, 0x84, 0x08, 0x10, 0x20, 0x40, 0x80]);
    }

    #[test]
    fn matrix_matches_bit_string_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let sector: Vec<u8> = (0..64).map(|_| rng.gen()).collect();
            let m = bit_window_matrix(&sector).unwrap();
            for j in 0..sector.len() {
                for i in 0..8 {
                    assert_eq!(m.get(j, i), bit_string_window(&sector, 8 * j + i));
                }
            }
        }
    }

    #[test]
    fn column_zero_is_the_raw_sector() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sector: Vec<u8> = (0..512).map(|_| rng.gen()).collect();
        let m = bit_window_matrix(&sector).unwrap();
        for (j, &b) in sector.iter().enumerate() {
            assert_eq!(m.get(j, 0), b);
        }
    }

    #[test]
    fn shift_composition_one_byte() {
        // matrix of x[1..] + [0]: column i equals original column i moved up a row
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sector: Vec<u8> = (0..64).map(|_| rng.gen()).collect();
        let mut shifted = sector[1..].to_vec();
        shifted.push(0);
        let m0 = bit_window_matrix(&sector).unwrap();
        let m1 = bit_window_matrix(&shifted).unwrap();
        for j in 0..sector.len() - 2 {
            for i in 0..8 {
                assert_eq!(m1.get(j, i), m0.get(j + 1, i));
            }
        }
    }

    #[test]
    fn ngram_shapes_match_formula() {
        let sector = vec![0xABu8; 512];
        let m = bit_window_matrix(&sector).unwrap();
        let img = ngram_image(&m, 16).unwrap();
        assert_eq!((img.height, img.width), (497, 128));
        let uni = ngram_image(&m, 1).unwrap();
        assert_eq!((uni.height, uni.width), (512, 8));
        assert_eq!(uni.pixels, m.data);
    }

    #[test]
    fn ngram_duplication_invariant_exhaustive_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let sector: Vec<u8> = (0..40).map(|_| rng.gen()).collect();
        let m = bit_window_matrix(&sector).unwrap();
        for n in [2usize, 4, 8] {
            let img = ngram_image(&m, n).unwrap();
            for h in 0..img.height {
                for k in 0..n {
                    if h + k >= img.height {
                        continue;
                    }
                    for c in 0..8 {
                        assert_eq!(img.get(h, 8 * k + c, 0), img.get(h + k, c, 0));
                    }
                }
            }
        }
    }

    #[test]
    fn bad_ngram_rejected() {
        let m = bit_window_matrix(&[1, 2, 3]).unwrap();
        assert!(matches!(ngram_image(&m, 0), Err(ImageError::BadNGram { .. })));
        assert!(matches!(ngram_image(&m, 4), Err(ImageError::BadNGram { .. })));
    }

    #[test]
    fn sector_4096_channels_match_per_segment_conversion() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let sector: Vec<u8> = (0..4096).map(|_| rng.gen()).collect();
        let img = sector_to_image(&sector, 16).unwrap();
        assert_eq!((img.height, img.width, img.channels), (497, 128, 8));
        for k in 0..8 {
            let seg = sector_to_image(&sector[512 * k..512 * (k + 1)], 16).unwrap();
            for h in 0..img.height {
                for w in 0..img.width {
                    assert_eq!(img.get(h, w, k), seg.get(h, w, 0));
                }
            }
        }
    }

    #[test]
    fn zero_4096_sector_gives_zero_image() {
        let img = sector_to_image(&[0u8; 4096], 16).unwrap();
        assert_eq!((img.height, img.width, img.channels), (497, 128, 8));
        assert!(img.pixels.iter().all(|&p| p == 0));
    }

    #[test]
    fn bad_sector_size_rejected() {
        assert!(matches!(
            sector_to_image(&[0u8; 100], 16),
            Err(ImageError::BadSectorSize(100))
        ));
    }

    #[test]
    fn pgm_header_and_payload() {
        let dir = tempfile::tempdir().unwrap();
        let img = NGramImage {
            pixels: vec![0, 255, 128, 64],
            height: 2,
            width: 2,
            channels: 1,
            n: 1,
        };
        let path = dir.path().join("out.pgm");
        emit_pgm(&img, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(bytes, b"P5\n2 2\n255\n\x00\xFF\x80\x40");
    }

    #[test]
    fn multichannel_pgm_emits_one_file_per_channel() {
        let dir = tempfile::tempdir().unwrap();
        let sector = vec![7u8; 4096];
        let img = sector_to_image(&sector, 16).unwrap();
        emit_pgm(&img, &dir.path().join("sec.pgm")).unwrap();
        for ch in 0..8 {
            assert!(dir.path().join(format!("sec_c{ch}.pgm")).exists());
        }
    }

    #[test]
    fn zero_size_image_rejected() {
        let img = NGramImage {
            pixels: vec![],
            height: 0,
            width: 0,
            channels: 1,
            n: 1,
        };
        assert!(matches!(
            emit_pgm(&img, Path::new("/tmp/na.pgm")),
            Err(ImageError::FormatError)
        ));
    }
}
