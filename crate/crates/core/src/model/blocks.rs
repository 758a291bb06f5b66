//! Residual visual feature extractor blocks: the two-conv batch-norm
//! residual block and the pooling-mixer transformer block.

use rand_chacha::ChaCha8Rng;

use super::layers::{BatchNorm2d, Conv2d, GroupNorm, NamedBuffers, NamedParams};
use crate::tensor::{Real, Tensor, TensorError};

/// `y = ReLU(BN(W2 * ReLU(BN(W1 * x))) + shortcut(x))`, 3x3 convs.
///
/// The first conv carries the block's stride; when stride or channel count
/// changes, the shortcut is a 1x1 projection conv + BN, otherwise identity.
pub struct ResNetBlock<T: Real> {
    conv1: Conv2d<T>,
    bn1: BatchNorm2d<T>,
    conv2: Conv2d<T>,
    bn2: BatchNorm2d<T>,
    projection: Option<(Conv2d<T>, BatchNorm2d<T>)>,
}

impl<T: Real> ResNetBlock<T> {
    pub fn new(cin: usize, cout: usize, stride: usize, rng: &mut ChaCha8Rng) -> Self {
        let projection = (cin != cout || stride != 1)
            .then(|| (Conv2d::new(cin, cout, 1, 1, stride, 0, false, rng), BatchNorm2d::new(cout)));
        ResNetBlock {
            conv1: Conv2d::new(cin, cout, 3, 3, stride, 1, false, rng),
            bn1: BatchNorm2d::new(cout),
            conv2: Conv2d::new(cout, cout, 3, 3, 1, 1, false, rng),
            bn2: BatchNorm2d::new(cout),
            projection,
        }
    }

    pub fn forward(&self, x: &Tensor<T>, training: bool) -> Result<Tensor<T>, TensorError> {
        let branch = self
            .bn1
            .forward(&self.conv1.forward(x)?, training)?
            .relu();
        let branch = self.bn2.forward(&self.conv2.forward(&branch)?, training)?;
        let shortcut = match &self.projection {
            Some((conv, bn)) => bn.forward(&conv.forward(x)?, training)?,
            None => x.clone(),
        };
        Ok(branch.add(&shortcut)?.relu())
    }

    pub fn collect_params(&self, prefix: &str, out: &mut NamedParams<T>) {
        self.conv1.collect_params(&format!("{prefix}.conv1"), out);
        self.bn1.collect_params(&format!("{prefix}.bn1"), out);
        self.conv2.collect_params(&format!("{prefix}.conv2"), out);
        self.bn2.collect_params(&format!("{prefix}.bn2"), out);
        if let Some((conv, bn)) = &self.projection {
            conv.collect_params(&format!("{prefix}.proj.conv"), out);
            bn.collect_params(&format!("{prefix}.proj.bn"), out);
        }
    }

    pub fn collect_buffers(&self, prefix: &str, out: &mut NamedBuffers<T>) {
        self.bn1.collect_buffers(&format!("{prefix}.bn1"), out);
        self.bn2.collect_buffers(&format!("{prefix}.bn2"), out);
        if let Some((_, bn)) = &self.projection {
            bn.collect_buffers(&format!("{prefix}.proj.bn"), out);
        }
    }
}

/// Pooling token mixer block:
/// `z = AvgPool3x3(Norm(x)) + x`, `y = W2 GELU(W1 Norm(z)) + z`,
/// with `Norm` = single-group group norm and W1/W2 as 1x1 convs (C -> rC -> C).
///
/// `subtract_input` switches the mixer to `(Pool - id)(Norm(x)) + x`, the
/// original formulation of pooling attention replacements.
pub struct PoolFormerBlock<T: Real> {
    norm1: GroupNorm<T>,
    norm2: GroupNorm<T>,
    w1: Conv2d<T>,
    w2: Conv2d<T>,
    subtract_input: bool,
}

impl<T: Real> PoolFormerBlock<T> {
    pub fn new(channels: usize, mlp_ratio: usize, subtract_input: bool, rng: &mut ChaCha8Rng) -> Self {
        let hidden = channels * mlp_ratio;
        PoolFormerBlock {
            norm1: GroupNorm::new(channels, 1),
            norm2: GroupNorm::new(channels, 1),
            w1: Conv2d::new(channels, hidden, 1, 1, 1, 0, true, rng),
            w2: Conv2d::new(hidden, channels, 1, 1, 1, 0, true, rng),
            subtract_input,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        let normed = self.norm1.forward(x)?;
        let pooled = normed.avg_pool2d(3, 1, 1)?;
        let mixed = if self.subtract_input {
            pooled.add(&normed.mul_scalar(-T::one()))?
        } else {
            pooled
        };
        let z = mixed.add(x)?;
        let mlp = self
            .w2
            .forward(&self.w1.forward(&self.norm2.forward(&z)?)?.gelu())?;
        mlp.add(&z)
    }

    pub fn collect_params(&self, prefix: &str, out: &mut NamedParams<T>) {
        self.norm1.collect_params(&format!("{prefix}.norm1"), out);
        self.w1.collect_params(&format!("{prefix}.mlp1"), out);
        self.w2.collect_params(&format!("{prefix}.mlp2"), out);
        self.norm2.collect_params(&format!("{prefix}.norm2"), out);
    }
}
