//! Softmax, log-softmax, and the soft-label negative log-likelihood loss.

use super::{Real, Tensor, TensorError};

impl<T: Real> Tensor<T> {
    /// Row softmax of a `(B, T)` tensor.
    pub fn softmax_rows(&self) -> Result<Tensor<T>, TensorError> {
        let (b, t) = match self.shape() {
            [b, t] => (*b, *t),
            s => return Err(TensorError::ShapeMismatch(format!("softmax input {s:?}"))),
        };
        let d = self.data();
        if d.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFiniteInput("softmax"));
        }
        let mut out = vec![T::zero(); d.len()];
        for (orow, row) in out.chunks_mut(t).zip(d.chunks(t)) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for (o, &v) in orow.iter_mut().zip(row) {
                *o = (v - max).exp();
                sum += *o;
            }
            for o in orow.iter_mut() {
                *o = *o / sum;
            }
        }
        drop(d);
        Ok(Tensor::from_op(
            vec![b, t],
            out.clone(),
            vec![self.clone()],
            Box::new(move |g, parents| {
                if !parents[0].needs_grad() {
                    return;
                }
                // dxi = si * (gi - sum_j gj*sj)
                let mut dx = vec![T::zero(); out.len()];
                for ((dxrow, srow), grow) in dx.chunks_mut(t).zip(out.chunks(t)).zip(g.chunks(t)) {
                    let dot: T = srow.iter().zip(grow).map(|(s, gv)| *s * *gv).sum();
                    for ((d, s), gv) in dxrow.iter_mut().zip(srow).zip(grow) {
                        *d = *s * (*gv - dot);
                    }
                }
                parents[0].accum_grad_owned(dx);
            }),
        ))
    }

    /// Row log-softmax of a `(B, T)` tensor, numerically stable.
    pub fn log_softmax_rows(&self) -> Result<Tensor<T>, TensorError> {
        let (b, t) = match self.shape() {
            [b, t] => (*b, *t),
            s => return Err(TensorError::ShapeMismatch(format!("log_softmax input {s:?}"))),
        };
        let d = self.data();
        if d.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFiniteInput("log_softmax"));
        }
        let mut out = vec![T::zero(); d.len()];
        for (orow, row) in out.chunks_mut(t).zip(d.chunks(t)) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let logsum = row.iter().map(|v| (*v - max).exp()).sum::<T>().ln() + max;
            for (o, &v) in orow.iter_mut().zip(row) {
                *o = v - logsum;
            }
        }
        drop(d);
        Ok(Tensor::from_op(
            vec![b, t],
            out.clone(),
            vec![self.clone()],
            Box::new(move |g, parents| {
                if !parents[0].needs_grad() {
                    return;
                }
                // dxi = gi - softmax_i * sum_j gj
                let mut dx = vec![T::zero(); out.len()];
                for ((dxrow, lrow), grow) in dx.chunks_mut(t).zip(out.chunks(t)).zip(g.chunks(t)) {
                    let gsum: T = grow.iter().copied().sum();
                    for ((d, l), gv) in dxrow.iter_mut().zip(lrow).zip(grow) {
                        *d = *gv - l.exp() * gsum;
                    }
                }
                parents[0].accum_grad_owned(dx);
            }),
        ))
    }

    /// Soft-label NLL: mean over the batch of `-sum_t y_t * log_probs_t`.
    /// `soft_targets` rows must be probability vectors; they carry no gradient.
    pub fn nll_loss(&self, soft_targets: &[T]) -> Result<Tensor<T>, TensorError> {
        let (b, t) = match self.shape() {
            [b, t] => (*b, *t),
            s => return Err(TensorError::ShapeMismatch(format!("nll_loss input {s:?}"))),
        };
        if soft_targets.len() != b * t {
            return Err(TensorError::ShapeMismatch(format!(
                "nll_loss targets len {}, want {}",
                soft_targets.len(),
                b * t
            )));
        }
        let tol = T::from_f64(1e-4);
        for row in soft_targets.chunks(t) {
            let s: T = row.iter().copied().sum();
            if (s - T::one()).abs() > tol || row.iter().any(|v| *v < T::zero()) {
                return Err(TensorError::NonFiniteInput("nll_loss soft targets"));
            }
        }
        let d = self.data();
        let mut acc = T::zero();
        for (row, trow) in d.chunks(t).zip(soft_targets.chunks(t)) {
            for (&lp, &y) in row.iter().zip(trow) {
                if y != T::zero() {
                    acc -= y * lp;
                }
            }
        }
        drop(d);
        let loss = acc / T::from_f64(b as f64);
        let targets = soft_targets.to_vec();
        Ok(Tensor::from_op(
            vec![1],
            vec![loss],
            vec![self.clone()],
            Box::new(move |g, parents| {
                if !parents[0].needs_grad() {
                    return;
                }
                let scale = g[0] / T::from_f64(b as f64);
                let dx: Vec<T> = targets.iter().map(|y| -*y * scale).collect();
                parents[0].accum_grad_owned(dx);
            }),
        ))
    }
}
