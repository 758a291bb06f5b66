//! Training-time image augmentation: normalization, horizontal flip, random
//! erase, and the CutMix / Mixup label-mixing pair.
//!
//! All randomness comes from an explicit caller-supplied RNG, so a fixed seed
//! reproduces the full augmented batch. Mixing turns one-hot labels into soft
//! labels with at most two nonzero entries.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::byte2image::NGramImage;

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("normalization stats missing or wrong length: {0}")]
    MissingStats(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("batch of {0} too small for sample mixing (need >= 2)")]
    BatchTooSmall(usize),
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
}

/// Real-valued H x W x C image (channel-interleaved, like [`NGramImage`]).
#[derive(Debug, Clone, PartialEq)]
pub struct RealImage {
    pub pixels: Vec<f32>,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl RealImage {
    fn same_shape(&self, other: &RealImage) -> bool {
        self.height == other.height
            && self.width == other.width
            && self.channels == other.channels
    }
}

/// An augmented image plus its (possibly mixed) soft label.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSample {
    pub image: RealImage,
    /// Probability vector over classes; at most two nonzero entries.
    pub soft_label: Vec<f32>,
}

/// Application probabilities and normalization stats for the pipeline.
///
/// CutMix and Mixup are mutually exclusive per sample by default: one of the
/// two is selected with probability proportional to its `p_*`, then applied
/// with that probability. Set `exclusive_mix: false` to run both in sequence
/// instead, each gated by its own probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentPolicy {
    pub p_normalize: f64,
    pub p_hflip: f64,
    pub p_erase: f64,
    pub p_cutmix: f64,
    pub p_mixup: f64,
    pub mixup_alpha: f64,
    pub exclusive_mix: bool,
    /// Per-channel mean/std of pixel/255 over the training split.
    pub norm_mean: Vec<f32>,
    pub norm_std: Vec<f32>,
    pub rng_seed: u64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        AugmentPolicy {
            p_normalize: 1.0,
            p_hflip: 0.5,
            p_erase: 0.5,
            p_cutmix: 1.0,
            p_mixup: 0.8,
            mixup_alpha: 0.8,
            exclusive_mix: true,
            norm_mean: Vec::new(),
            norm_std: Vec::new(),
            rng_seed: 0,
        }
    }
}

impl AugmentPolicy {
    pub fn validate(&self) -> Result<(), AugmentError> {
        for (name, p) in [
            ("p_normalize", self.p_normalize),
            ("p_hflip", self.p_hflip),
            ("p_erase", self.p_erase),
            ("p_cutmix", self.p_cutmix),
            ("p_mixup", self.p_mixup),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(AugmentError::InvalidPolicy(format!("{name} = {p}")));
            }
        }
        if self.mixup_alpha <= 0.0 {
            return Err(AugmentError::InvalidPolicy(format!(
                "mixup_alpha = {}",
                self.mixup_alpha
            )));
        }
        if self.norm_std.iter().any(|&s| s <= 0.0) {
            return Err(AugmentError::InvalidPolicy("norm_std must be > 0".into()));
        }
        Ok(())
    }
}

/// Minimum allowed per-channel std, so constant datasets stay normalizable.
pub const STD_CLAMP: f32 = 1e-3;

/// Streaming accumulator for per-channel mean/std of pixel/255.
#[derive(Debug, Clone, Default)]
pub struct NormAccumulator {
    sum: Vec<f64>,
    sumsq: Vec<f64>,
    count: u64,
}

impl NormAccumulator {
    pub fn new() -> Self {
        NormAccumulator::default()
    }

    pub fn add(&mut self, img: &NGramImage) -> Result<(), AugmentError> {
        let c = img.channels;
        if self.sum.is_empty() {
            self.sum = vec![0.0; c];
            self.sumsq = vec![0.0; c];
        } else if self.sum.len() != c {
            return Err(AugmentError::ShapeMismatch(format!(
                "channel count {} vs {}",
                c,
                self.sum.len()
            )));
        }
        for px in img.pixels.chunks_exact(c) {
            for (ch, &p) in px.iter().enumerate() {
                let v = p as f64 / 255.0;
                self.sum[ch] += v;
                self.sumsq[ch] += v * v;
            }
        }
        self.count += img.pixels.len() as u64 / c as u64;
        Ok(())
    }

    /// Per-channel (mean, std) with std clamped to [`STD_CLAMP`].
    pub fn finish(&self) -> Result<(Vec<f32>, Vec<f32>), AugmentError> {
        if self.count == 0 {
            return Err(AugmentError::MissingStats("no images".into()));
        }
        let n = self.count as f64;
        let mut mean = Vec::with_capacity(self.sum.len());
        let mut std = Vec::with_capacity(self.sum.len());
        for (s, sq) in self.sum.iter().zip(&self.sumsq) {
            let m = s / n;
            let var = (sq / n - m * m).max(0.0);
            mean.push(m as f32);
            std.push((var.sqrt() as f32).max(STD_CLAMP));
        }
        Ok((mean, std))
    }
}

/// Per-channel mean and clamped std of pixel/255 over a set of images.
pub fn norm_stats(images: &[NGramImage]) -> Result<(Vec<f32>, Vec<f32>), AugmentError> {
    let mut acc = NormAccumulator::new();
    for img in images {
        acc.add(img)?;
    }
    acc.finish()
}

/// `(pixel/255 - mean) / std` per channel.
pub fn normalize(
    img: &NGramImage,
    mean: &[f32],
    std: &[f32],
) -> Result<RealImage, AugmentError> {
    if mean.len() != img.channels || std.len() != img.channels {
        return Err(AugmentError::MissingStats(format!(
            "stats for {}/{} channels, image has {}",
            mean.len(),
            std.len(),
            img.channels
        )));
    }
    let c = img.channels;
    let pixels = img
        .pixels
        .chunks_exact(c)
        .flat_map(|px| {
            px.iter()
                .enumerate()
                .map(|(ch, &p)| (p as f32 / 255.0 - mean[ch]) / std[ch])
                .collect::<Vec<_>>()
        })
        .collect();
    Ok(RealImage {
        pixels,
        height: img.height,
        width: img.width,
        channels: c,
    })
}

/// Reverse column order in place (flip across the width axis).
pub fn hflip(img: &mut RealImage) {
    let (w, c) = (img.width, img.channels);
    for row in img.pixels.chunks_mut(w * c) {
        for x in 0..w / 2 {
            for ch in 0..c {
                row.swap(x * c + ch, (w - 1 - x) * c + ch);
            }
        }
    }
}

/// Fill one random rectangle (2%-33% of area, aspect in [1/3, 3]) with
/// normalized i.i.d. uniform byte values. Identity if no valid rectangle is
/// found within the attempt budget.
pub fn random_erase(img: &mut RealImage, mean: &[f32], std: &[f32], rng: &mut ChaCha8Rng) {
    let (h, w, c) = (img.height, img.width, img.channels);
    if let Some((y0, x0, rh, rw)) = sample_erase_rect(h, w, rng) {
        for y in y0..y0 + rh {
            for x in x0..x0 + rw {
                for ch in 0..c {
                    let raw: u8 = rng.gen();
                    img.pixels[(y * w + x) * c + ch] =
                        (raw as f32 / 255.0 - mean[ch]) / std[ch];
                }
            }
        }
    }
}

/// Rectangle sampler for [`random_erase`]: resamples until the integer
/// rectangle's true area fraction lands in [0.02, 0.33], up to 20 attempts.
fn sample_erase_rect(
    h: usize,
    w: usize,
    rng: &mut ChaCha8Rng,
) -> Option<(usize, usize, usize, usize)> {
    let area = (h * w) as f64;
    for _ in 0..20 {
        let frac = rng.gen_range(0.02..=0.33);
        let aspect = rng.gen_range((1.0f64 / 3.0)..=3.0);
        let target = area * frac;
        let rh = (target * aspect).sqrt().round() as usize;
        let rw = (target / aspect).sqrt().round() as usize;
        if rh == 0 || rw == 0 || rh > h || rw > w {
            continue;
        }
        let real_frac = (rh * rw) as f64 / area;
        if !(0.02..=0.33).contains(&real_frac) {
            continue;
        }
        let y0 = rng.gen_range(0..=h - rh);
        let x0 = rng.gen_range(0..=w - rw);
        return Some((y0, x0, rh, rw));
    }
    None
}

/// Paste a random rectangle of `b` into `a` at the same coordinates.
/// The label mix uses the exact pasted-area fraction: λ = 1 - area/(H·W).
pub fn cutmix(
    a: &AugmentedSample,
    b: &AugmentedSample,
    rng: &mut ChaCha8Rng,
) -> Result<AugmentedSample, AugmentError> {
    check_pair(a, b)?;
    let (h, w, c) = (a.image.height, a.image.width, a.image.channels);
    // Beta(1,1) target area, center-cropped square-root side lengths as in
    // the original CutMix formulation, clipped to the image bounds.
    let lam: f64 = rng.gen_range(0.0..=1.0);
    let cut = (1.0 - lam).sqrt();
    let rh = ((h as f64) * cut).floor() as usize;
    let rw = ((w as f64) * cut).floor() as usize;
    let cy = rng.gen_range(0..h);
    let cx = rng.gen_range(0..w);
    let y0 = cy.saturating_sub(rh / 2);
    let x0 = cx.saturating_sub(rw / 2);
    let y1 = (y0 + rh).min(h);
    let x1 = (x0 + rw).min(w);
    let mut out = a.clone();
    for y in y0..y1 {
        let base = (y * w + x0) * c;
        let len = (x1 - x0) * c;
        out.image.pixels[base..base + len].copy_from_slice(&b.image.pixels[base..base + len]);
    }
    let pasted = (y1 - y0) * (x1 - x0);
    let lam_exact = 1.0 - pasted as f32 / (h * w) as f32;
    out.soft_label = mix_labels(&a.soft_label, &b.soft_label, lam_exact);
    Ok(out)
}

/// Elementwise convex combination of two samples, λ ~ Beta(α, α).
pub fn mixup(
    a: &AugmentedSample,
    b: &AugmentedSample,
    alpha: f64,
    rng: &mut ChaCha8Rng,
) -> Result<AugmentedSample, AugmentError> {
    check_pair(a, b)?;
    let beta = rand_distr::Beta::new(alpha, alpha)
        .map_err(|e| AugmentError::InvalidPolicy(format!("beta({alpha}): {e}")))?;
    let lam = rng.sample(beta) as f32;
    let mut out = a.clone();
    for (o, (&av, &bv)) in out
        .image
        .pixels
        .iter_mut()
        .zip(a.image.pixels.iter().zip(&b.image.pixels))
    {
        *o = lam * av + (1.0 - lam) * bv;
    }
    out.soft_label = mix_labels(&a.soft_label, &b.soft_label, lam);
    Ok(out)
}

fn check_pair(a: &AugmentedSample, b: &AugmentedSample) -> Result<(), AugmentError> {
    if !a.image.same_shape(&b.image) || a.soft_label.len() != b.soft_label.len() {
        return Err(AugmentError::ShapeMismatch(format!(
            "mix of {}x{}x{} ({} classes) with {}x{}x{} ({} classes)",
            a.image.height,
            a.image.width,
            a.image.channels,
            a.soft_label.len(),
            b.image.height,
            b.image.width,
            b.image.channels,
            b.soft_label.len()
        )));
    }
    Ok(())
}

fn mix_labels(a: &[f32], b: &[f32], lam: f32) -> Vec<f32> {
    a.iter()
        .zip(b)
        .map(|(&av, &bv)| lam * av + (1.0 - lam) * bv)
        .collect()
}

fn one_hot(label: usize, num_classes: usize) -> Vec<f32> {
    let mut v = vec![0.0; num_classes];
    v[label] = 1.0;
    v
}

/// Run the full pipeline over a batch.
///
/// Training order per sample: normalize → hflip → random_erase → one of
/// CutMix/Mixup with the partner drawn from a shuffled copy of the already
/// processed batch. Evaluation mode normalizes only and keeps one-hot labels.
pub fn apply_policy(
    batch: &[NGramImage],
    labels: &[usize],
    num_classes: usize,
    policy: &AugmentPolicy,
    training: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<AugmentedSample>, AugmentError> {
    policy.validate()?;
    if batch.len() != labels.len() {
        return Err(AugmentError::ShapeMismatch(format!(
            "{} images, {} labels",
            batch.len(),
            labels.len()
        )));
    }
    let mixing = training && policy.p_cutmix + policy.p_mixup > 0.0;
    if mixing && batch.len() < 2 {
        return Err(AugmentError::BatchTooSmall(batch.len()));
    }

    let mut processed = Vec::with_capacity(batch.len());
    for (img, &label) in batch.iter().zip(labels) {
        let mut real = normalize(img, &policy.norm_mean, &policy.norm_std)?;
        if training {
            if rng.gen_bool(policy.p_hflip) {
                hflip(&mut real);
            }
            if rng.gen_bool(policy.p_erase) {
                random_erase(&mut real, &policy.norm_mean, &policy.norm_std, rng);
            }
        }
        processed.push(AugmentedSample {
            image: real,
            soft_label: one_hot(label, num_classes),
        });
    }
    if !mixing {
        return Ok(processed);
    }

    // Partners come from a shuffled copy so self-pairing stays possible but
    // rare, and every sample is an equally likely partner.
    let mut perm: Vec<usize> = (0..processed.len()).collect();
    use rand::seq::SliceRandom;
    perm.shuffle(rng);

    let mut out = Vec::with_capacity(processed.len());
    for (i, sample) in processed.iter().enumerate() {
        let partner = &processed[perm[i]];
        let mixed = if policy.exclusive_mix {
            let total = policy.p_cutmix + policy.p_mixup;
            let pick_cutmix = rng.gen_bool(policy.p_cutmix / total);
            if pick_cutmix {
                if rng.gen_bool(policy.p_cutmix) {
                    cutmix(sample, partner, rng)?
                } else {
                    sample.clone()
                }
            } else if rng.gen_bool(policy.p_mixup) {
                mixup(sample, partner, policy.mixup_alpha, rng)?
            } else {
                sample.clone()
            }
        } else {
            let mut s = sample.clone();
            if rng.gen_bool(policy.p_cutmix) {
                s = cutmix(&s, partner, rng)?;
            }
            if rng.gen_bool(policy.p_mixup) {
                s = mixup(&s, partner, policy.mixup_alpha, rng)?;
            }
            s
        };
        out.push(mixed);
    }
    Ok(out)
}
