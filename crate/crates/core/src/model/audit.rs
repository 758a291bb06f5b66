//! Closed-form parameter and multiply-accumulate audit of a model config,
//! independent of the runtime layer objects (used to cross-check them).

use super::bytenet::embed_out_dims;
use super::{ModelConfig, Variant};
use crate::tensor::conv_out_dim;

#[derive(Debug, Clone, PartialEq)]
pub struct AuditReport {
    pub param_count: usize,
    /// Multiply-accumulates for one forward sample (convs + linears).
    pub mac_count: usize,
    /// Spatial dims after the embedding and after each of the 4 stages.
    pub shape_chain: Vec<(usize, usize)>,
}

/// Spatial shape chain: embedding output, then the map after each stage.
pub fn stage_shape_chain(config: &ModelConfig) -> Vec<(usize, usize)> {
    let mut chain = vec![embed_out_dims(config)];
    let (mut h, mut w) = chain[0];
    for s in 0..4 {
        let downsampled = match config.variant {
            // stages 2-4 downsample in their first block
            Variant::ByteResnet => s > 0,
            // a separate conv follows stages 1-3
            Variant::ByteFormer => s < 3,
        };
        if downsampled {
            h = conv_out_dim(h, 3, 2, 1);
            w = conv_out_dim(w, 3, 2, 1);
        }
        chain.push((h, w));
    }
    chain
}

pub fn count_params_and_macs(config: &ModelConfig) -> AuditReport {
    let (img_h, img_w, img_c) = config.image_dims();
    let c = config.stage_channels;
    let t = config.num_classes;
    let f0 = config.shallow_dim;
    let chain = stage_shape_chain(config);

    struct Counter {
        params: usize,
        macs: usize,
    }
    impl Counter {
        #[allow(clippy::too_many_arguments)]
        fn conv(&mut self, cin: usize, cout: usize, kh: usize, kw: usize, oh: usize, ow: usize, bias: bool) {
            self.params += cout * cin * kh * kw + if bias { cout } else { 0 };
            self.macs += cout * oh * ow * cin * kh * kw;
        }
    }
    let mut acc = Counter { params: 0, macs: 0 };

    match config.variant {
        Variant::ByteResnet => {
            let k = config.ngram_embed_k;
            acc.conv(img_c, k, 1, img_w, img_h, 1, true);
            let (sh, sw) = (conv_out_dim(img_h, 7, 2, 3), conv_out_dim(k, 7, 2, 3));
            acc.conv(1, config.embed_dim, 7, 7, sh, sw, true);
            acc.params += 2 * config.embed_dim; // stem batch-norm affine
            let mut cin = config.embed_dim;
            for s in 0..4 {
                let (oh, ow) = chain[s + 1];
                for b in 0..config.stage_depths[s] {
                    let (bin, stride_block) = if b == 0 { (cin, true) } else { (c[s], false) };
                    acc.conv(bin, c[s], 3, 3, oh, ow, false);
                    acc.conv(c[s], c[s], 3, 3, oh, ow, false);
                    acc.params += 4 * c[s]; // two batch-norm affines
                    if stride_block && (bin != c[s] || s > 0) {
                        acc.conv(bin, c[s], 1, 1, oh, ow, false); // projection
                        acc.params += 2 * c[s];
                    }
                }
                cin = c[s];
            }
        }
        Variant::ByteFormer => {
            let p = config.patch_size;
            let (th, tw) = chain[0];
            acc.conv(img_c, config.embed_dim, p, p, th, tw, true);
            acc.params += config.embed_dim * th * tw; // position embedding
            for s in 0..4 {
                let (bh, bw) = if s == 0 { chain[0] } else { chain[s] };
                let hidden = c[s] * config.mlp_ratio;
                for _ in 0..config.stage_depths[s] {
                    acc.conv(c[s], hidden, 1, 1, bh, bw, true);
                    acc.conv(hidden, c[s], 1, 1, bh, bw, true);
                    acc.params += 4 * c[s]; // two group-norm affines
                }
                if s < 3 {
                    let (oh, ow) = chain[s + 1];
                    acc.conv(c[s], c[s + 1], 3, 3, oh, ow, true);
                }
            }
        }
    }

    // byte branch and fusion head
    acc.params += config.sector_size * f0 + f0;
    acc.macs += config.sector_size * f0;
    acc.params += (f0 + c[3]) * t + t;
    acc.macs += (f0 + c[3]) * t;

    AuditReport {
        param_count: acc.params,
        mac_count: acc.macs,
        shape_chain: chain,
    }
}
