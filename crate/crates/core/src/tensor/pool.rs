//! Pooling ops: average, max, and global average.

use super::conv::conv_out_dim;
use super::{Real, Tensor, TensorError};

/// Window-offset range `[lo, hi)` whose input positions `o*stride + k - pad`
/// fall inside `[0, limit)` — hoists bounds checks out of pooling loops.
fn window_range(o: usize, stride: usize, window: usize, pad: usize, limit: usize) -> (usize, usize) {
    let base = o * stride;
    let lo = pad.saturating_sub(base);
    let hi = window.min((limit + pad).saturating_sub(base));
    (lo.min(hi), hi)
}

impl<T: Real> Tensor<T> {
    /// Average pooling over `window`x`window` with symmetric zero padding.
    /// The divisor is always `window*window` (count includes padding), so a
    /// stride-1 window-3 pad-1 pool preserves spatial dims.
    pub fn avg_pool2d(
        &self,
        window: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Tensor<T>, TensorError> {
        let (b, c, h, w) = match self.shape() {
            [b, c, h, w] => (*b, *c, *h, *w),
            s => return Err(TensorError::ShapeMismatch(format!("avg_pool2d input {s:?}"))),
        };
        if h + 2 * pad < window || w + 2 * pad < window {
            return Err(TensorError::ShapeMismatch(format!(
                "avg_pool2d window {window} larger than padded {}x{}",
                h + 2 * pad,
                w + 2 * pad
            )));
        }
        let oh = conv_out_dim(h, window, stride, pad);
        let ow = conv_out_dim(w, window, stride, pad);
        let inv = T::one() / T::from_f64((window * window) as f64);
        let d = self.data();
        let mut out = vec![T::zero(); b * c * oh * ow];
        for bc in 0..b * c {
            let xoff = bc * h * w;
            let ooff = bc * oh * ow;
            for i in 0..oh {
                let (ki_lo, ki_hi) = window_range(i, stride, window, pad, h);
                for j in 0..ow {
                    let (kj_lo, kj_hi) = window_range(j, stride, window, pad, w);
                    let iw_lo = j * stride + kj_lo - pad;
                    let mut acc = T::zero();
                    for ki in ki_lo..ki_hi {
                        let ih = i * stride + ki - pad;
                        for &v in &d[xoff + ih * w + iw_lo..][..kj_hi - kj_lo] {
                            acc += v;
                        }
                    }
                    out[ooff + i * ow + j] = acc * inv;
                }
            }
        }
        drop(d);
        Ok(Tensor::from_op(
            vec![b, c, oh, ow],
            out,
            vec![self.clone()],
            Box::new(move |g, parents| {
                if !parents[0].needs_grad() {
                    return;
                }
                let mut dx = vec![T::zero(); b * c * h * w];
                for bc in 0..b * c {
                    let xoff = bc * h * w;
                    let ooff = bc * oh * ow;
                    for i in 0..oh {
                        let (ki_lo, ki_hi) = window_range(i, stride, window, pad, h);
                        for j in 0..ow {
                            let (kj_lo, kj_hi) = window_range(j, stride, window, pad, w);
                            let iw_lo = j * stride + kj_lo - pad;
                            let gv = g[ooff + i * ow + j] * inv;
                            for ki in ki_lo..ki_hi {
                                let ih = i * stride + ki - pad;
                                for v in &mut dx[xoff + ih * w + iw_lo..][..kj_hi - kj_lo] {
                                    *v += gv;
                                }
                            }
                        }
                    }
                }
                parents[0].accum_grad_owned(dx);
            }),
        ))
    }

    /// Max pooling; padding positions never win (treated as -inf).
    pub fn max_pool2d(
        &self,
        window: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Tensor<T>, TensorError> {
        let (b, c, h, w) = match self.shape() {
            [b, c, h, w] => (*b, *c, *h, *w),
            s => return Err(TensorError::ShapeMismatch(format!("max_pool2d input {s:?}"))),
        };
        if h + 2 * pad < window || w + 2 * pad < window {
            return Err(TensorError::ShapeMismatch(format!(
                "max_pool2d window {window} larger than padded {}x{}",
                h + 2 * pad,
                w + 2 * pad
            )));
        }
        let oh = conv_out_dim(h, window, stride, pad);
        let ow = conv_out_dim(w, window, stride, pad);
        let d = self.data();
        let mut out = vec![T::zero(); b * c * oh * ow];
        let mut argmax = vec![usize::MAX; b * c * oh * ow];
        for bc in 0..b * c {
            let xoff = bc * h * w;
            let ooff = bc * oh * ow;
            for i in 0..oh {
                let (ki_lo, ki_hi) = window_range(i, stride, window, pad, h);
                for j in 0..ow {
                    let (kj_lo, kj_hi) = window_range(j, stride, window, pad, w);
                    let iw_lo = j * stride + kj_lo - pad;
                    let mut best = T::neg_infinity();
                    let mut best_idx = usize::MAX;
                    for ki in ki_lo..ki_hi {
                        let row0 = xoff + (i * stride + ki - pad) * w + iw_lo;
                        for (dj, &v) in d[row0..row0 + kj_hi - kj_lo].iter().enumerate() {
                            if v > best {
                                best = v;
                                best_idx = row0 + dj;
                            }
                        }
                    }
                    out[ooff + i * ow + j] = best;
                    argmax[ooff + i * ow + j] = best_idx;
                }
            }
        }
        drop(d);
        Ok(Tensor::from_op(
            vec![b, c, oh, ow],
            out,
            vec![self.clone()],
            Box::new(move |g, parents| {
                if !parents[0].needs_grad() {
                    return;
                }
                let mut dx = vec![T::zero(); b * c * h * w];
                for (gi, &idx) in g.iter().zip(&argmax) {
                    if idx != usize::MAX {
                        dx[idx] += *gi;
                    }
                }
                parents[0].accum_grad_owned(dx);
            }),
        ))
    }

    /// Global average pool `B×C×H×W -> B×C` (spatial mean).
    pub fn global_avg_pool(&self) -> Result<Tensor<T>, TensorError> {
        let (b, c, h, w) = match self.shape() {
            [b, c, h, w] => (*b, *c, *h, *w),
            s => {
                return Err(TensorError::ShapeMismatch(format!(
                    "global_avg_pool input {s:?}"
                )))
            }
        };
        let inv = T::one() / T::from_f64((h * w) as f64);
        let d = self.data();
        let out: Vec<T> = d
            .chunks(h * w)
            .map(|plane| plane.iter().copied().sum::<T>() * inv)
            .collect();
        drop(d);
        Ok(Tensor::from_op(
            vec![b, c],
            out,
            vec![self.clone()],
            Box::new(move |g, parents| {
                if !parents[0].needs_grad() {
                    return;
                }
                let mut dx = vec![T::zero(); b * c * h * w];
                for (plane, gv) in dx.chunks_mut(h * w).zip(g) {
                    let spread = *gv * inv;
                    for v in plane {
                        *v += spread;
                    }
                }
                parents[0].accum_grad_owned(dx);
            }),
        ))
    }
}
