//! The dual-branch classifier: byte-branch linear features, image-branch
//! hierarchical features (residual conv or pooling-transformer), linear
//! fusion head, log-softmax output.

use super::blocks::{PoolFormerBlock, ResNetBlock};
use super::layers::{trunc_normal, BatchNorm2d, Conv2d, Linear, NamedBuffers, NamedParams};
use super::{ModelConfig, ModelError, Variant};
use crate::augment::RealImage;
use crate::corpus::derive_rng;
use crate::tensor::{conv_out_dim, Real, Tensor};

/// Branch ablation switch: the disabled branch contributes a zero feature
/// block to the fusion input and its compute is skipped entirely.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchMode {
    Both,
    ByteOnly,
    ImageOnly,
}

enum Embedding<T: Real> {
    /// Wide 1xW convolution bank, then 7x7 stride-2 conv + 3x3 stride-2 pool.
    NGram {
        wide: Conv2d<T>,
        stem: Conv2d<T>,
        stem_bn: BatchNorm2d<T>,
    },
    /// PxP patch projection plus a learnable position map.
    Patch { proj: Conv2d<T>, pos: Tensor<T> },
}

enum Block<T: Real> {
    Res(ResNetBlock<T>),
    Pool(PoolFormerBlock<T>),
}

pub struct ByteNetModel<T: Real> {
    pub config: ModelConfig,
    bbfe: Linear<T>,
    embedding: Embedding<T>,
    stages: Vec<Vec<Block<T>>>,
    /// Between-stage 3x3 stride-2 channel-expanding convs (byte_former only;
    /// the residual variant downsamples inside each stage's first block).
    downsamples: Vec<Conv2d<T>>,
    fusion: Linear<T>,
}

impl<T: Real> ByteNetModel<T> {
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        crate::tensor::tune_allocator();
        let mut rng = derive_rng(seed, &[0x6d6f64]);
        let (h, w, img_c) = config.image_dims();
        let c = config.stage_channels;

        let bbfe = Linear::new(config.sector_size, config.shallow_dim, &mut rng);

        let (embedding, mut stage_in) = match config.variant {
            Variant::ByteResnet => {
                let k = config.ngram_embed_k;
                let emb = Embedding::NGram {
                    wide: Conv2d::new(img_c, k, 1, w, 1, 0, true, &mut rng),
                    stem: Conv2d::new(1, config.embed_dim, 7, 7, 2, 3, true, &mut rng),
                    stem_bn: BatchNorm2d::new(config.embed_dim),
                };
                (emb, config.embed_dim)
            }
            Variant::ByteFormer => {
                let p = config.patch_size;
                let (th, tw) = (h.div_ceil(p), w.div_ceil(p));
                let emb = Embedding::Patch {
                    proj: Conv2d::new(img_c, config.embed_dim, p, p, p, 0, true, &mut rng),
                    pos: trunc_normal(&[config.embed_dim, th, tw], 0.02, &mut rng),
                };
                (emb, config.embed_dim)
            }
        };

        let mut stages = Vec::with_capacity(4);
        let mut downsamples = Vec::new();
        for s in 0..4 {
            let mut blocks: Vec<Block<T>> = Vec::with_capacity(config.stage_depths[s]);
            match config.variant {
                Variant::ByteResnet => {
                    // downsampling lives in the first block of stages 2-4
                    let stride = if s == 0 { 1 } else { 2 };
                    blocks.push(Block::Res(ResNetBlock::new(stage_in, c[s], stride, &mut rng)));
                    for _ in 1..config.stage_depths[s] {
                        blocks.push(Block::Res(ResNetBlock::new(c[s], c[s], 1, &mut rng)));
                    }
                }
                Variant::ByteFormer => {
                    for _ in 0..config.stage_depths[s] {
                        blocks.push(Block::Pool(PoolFormerBlock::new(
                            c[s],
                            config.mlp_ratio,
                            config.pool_subtract_input,
                            &mut rng,
                        )));
                    }
                    if s < 3 {
                        downsamples.push(Conv2d::new(c[s], c[s + 1], 3, 3, 2, 1, true, &mut rng));
                    }
                }
            }
            stages.push(blocks);
            stage_in = c[s];
        }
        if config.variant == Variant::ByteFormer && config.embed_dim != c[0] {
            return Err(ModelError::InvalidConfig(format!(
                "byte_former embed_dim {} must equal first stage channels {}",
                config.embed_dim, c[0]
            )));
        }

        let fusion = Linear::new_head(config.shallow_dim + c[3], config.num_classes);

        Ok(ByteNetModel {
            config: config.clone(),
            bbfe,
            embedding,
            stages,
            downsamples,
            fusion,
        })
    }

    /// Shallow byte-branch features: `(B, N_s)/255 -> (B, F0)`, no activation.
    pub fn bbfe_forward(&self, bytes: &Tensor<T>) -> Result<Tensor<T>, ModelError> {
        if bytes.shape().len() != 2 || bytes.shape()[1] != self.config.sector_size {
            return Err(ModelError::ShapeMismatch(format!(
                "byte batch {:?}, want (B, {})",
                bytes.shape(),
                self.config.sector_size
            )));
        }
        Ok(self.bbfe.forward(bytes)?)
    }

    fn embed(&self, images: &Tensor<T>, training: bool) -> Result<Tensor<T>, ModelError> {
        match &self.embedding {
            Embedding::NGram { wide, stem, stem_bn } => {
                // (B,C,H,W) --1xW kernels--> (B,K,H,1); re-read the K feature
                // columns as one H x K single-channel image
                let bank = wide.forward(images)?;
                let map = bank.permute(&[0, 3, 2, 1])?;
                let stemmed = stem_bn.forward(&stem.forward(&map)?, training)?.relu();
                Ok(stemmed.max_pool2d(3, 2, 1)?)
            }
            Embedding::Patch { proj, pos } => {
                let p = self.config.patch_size;
                let (h, w) = (images.shape()[2], images.shape()[3]);
                let padded = images.pad_bottom_right(h.next_multiple_of(p) - h, w.next_multiple_of(p) - w)?;
                let tokens = proj.forward(&padded)?;
                let (b, cl) = (tokens.shape()[0], tokens.len() / tokens.shape()[0]);
                let shape = tokens.shape().to_vec();
                let flat = tokens.reshape(&[b, cl])?;
                let with_pos = flat.add_row_bias(&pos.reshape(&[cl])?)?;
                Ok(with_pos.reshape(&shape)?)
            }
        }
    }

    /// Deep image-branch features: image batch (NCHW) -> `(B, C4)`.
    pub fn ibfe_forward(&self, images: &Tensor<T>, training: bool) -> Result<Tensor<T>, ModelError> {
        let (eh, ew, ec) = self.config.image_dims();
        if images.shape().len() != 4
            || images.shape()[1] != ec
            || images.shape()[2] != eh
            || images.shape()[3] != ew
        {
            return Err(ModelError::ShapeMismatch(format!(
                "image batch {:?}, want (B, {ec}, {eh}, {ew})",
                images.shape()
            )));
        }
        let mut x = self.embed(images, training)?;
        for (s, blocks) in self.stages.iter().enumerate() {
            for block in blocks {
                x = match block {
                    Block::Res(b) => b.forward(&x, training)?,
                    Block::Pool(b) => b.forward(&x)?,
                };
            }
            if let Some(down) = self.downsamples.get(s) {
                x = down.forward(&x)?;
            }
        }
        Ok(x.global_avg_pool()?)
    }

    /// Full forward pass to log-probabilities `(B, T)`.
    pub fn forward(
        &self,
        bytes: &Tensor<T>,
        images: &Tensor<T>,
        training: bool,
        mode: BranchMode,
    ) -> Result<Tensor<T>, ModelError> {
        let b = match mode {
            BranchMode::ImageOnly => images.shape()[0],
            _ => bytes.shape()[0],
        };
        let shallow = match mode {
            BranchMode::ImageOnly => Tensor::zeros(&[b, self.config.shallow_dim]),
            _ => self.bbfe_forward(bytes)?,
        };
        let deep = match mode {
            BranchMode::ByteOnly => Tensor::zeros(&[b, self.config.stage_channels[3]]),
            _ => self.ibfe_forward(images, training)?,
        };
        let fused = Tensor::concat(&[shallow, deep], 1)?;
        let logits = self.fusion.forward(&fused)?;
        Ok(logits.log_softmax_rows()?)
    }

    /// Trainable tensors in fixed traversal order (checkpoint order).
    pub fn parameters(&self) -> NamedParams<T> {
        let mut out = Vec::new();
        self.bbfe.collect_params("bbfe", &mut out);
        match &self.embedding {
            Embedding::NGram { wide, stem, stem_bn } => {
                wide.collect_params("embed.wide", &mut out);
                stem.collect_params("embed.stem", &mut out);
                stem_bn.collect_params("embed.stem_bn", &mut out);
            }
            Embedding::Patch { proj, pos } => {
                proj.collect_params("embed.proj", &mut out);
                out.push(("embed.pos".into(), pos.clone()));
            }
        }
        for (s, blocks) in self.stages.iter().enumerate() {
            for (i, block) in blocks.iter().enumerate() {
                let prefix = format!("stage{s}.block{i}");
                match block {
                    Block::Res(b) => b.collect_params(&prefix, &mut out),
                    Block::Pool(b) => b.collect_params(&prefix, &mut out),
                }
            }
            if let Some(down) = self.downsamples.get(s) {
                down.collect_params(&format!("stage{s}.down"), &mut out);
            }
        }
        self.fusion.collect_params("fusion", &mut out);
        out
    }

    /// Non-trainable state (batch-norm running statistics), checkpoint order.
    pub fn buffers(&self) -> NamedBuffers<T> {
        let mut out = Vec::new();
        if let Embedding::NGram { stem_bn, .. } = &self.embedding {
            stem_bn.collect_buffers("embed.stem_bn", &mut out);
        }
        for (s, blocks) in self.stages.iter().enumerate() {
            for (i, block) in blocks.iter().enumerate() {
                if let Block::Res(b) = block {
                    b.collect_buffers(&format!("stage{s}.block{i}"), &mut out);
                }
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.parameters().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn zero_grads(&self) {
        for (_, p) in self.parameters() {
            p.zero_grad();
        }
    }
}

/// Byte batch to a `(B, N_s)` tensor scaled to [0, 1].
pub fn bytes_to_tensor<T: Real>(batch: &[&[u8]]) -> Tensor<T> {
    let n = batch.first().map_or(0, |s| s.len());
    let scale = T::from_f64(1.0 / 255.0);
    let data = batch
        .iter()
        .flat_map(|s| s.iter().map(|&b| T::from_f64(b as f64) * scale))
        .collect();
    Tensor::from_vec(&[batch.len(), n], data)
}

/// Normalized image batch (HWC each) to an NCHW tensor.
pub fn images_to_tensor<T: Real>(images: &[RealImage]) -> Tensor<T> {
    let (h, w, c) = images
        .first()
        .map_or((0, 0, 0), |i| (i.height, i.width, i.channels));
    let mut data = Vec::with_capacity(images.len() * c * h * w);
    for img in images {
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    data.push(T::from_f64(img.pixels[(y * w + x) * c + ch] as f64));
                }
            }
        }
    }
    Tensor::from_vec(&[images.len(), c, h, w], data)
}

/// Spatial shape after the embedding, from the documented formulas.
pub(super) fn embed_out_dims(config: &ModelConfig) -> (usize, usize) {
    let (h, w, _) = config.image_dims();
    match config.variant {
        Variant::ByteResnet => {
            let ch = conv_out_dim(h, 7, 2, 3);
            let cw = conv_out_dim(config.ngram_embed_k, 7, 2, 3);
            (conv_out_dim(ch, 3, 2, 1), conv_out_dim(cw, 3, 2, 1))
        }
        Variant::ByteFormer => (h.div_ceil(config.patch_size), w.div_ceil(config.patch_size)),
    }
}
