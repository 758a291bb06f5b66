//! Batch and group normalization.

use std::cell::RefCell;
use std::rc::Rc;

use super::{Real, Tensor, TensorError};

/// 8-lane partial sum with a fixed combine order: autovectorizes while
/// keeping results run-to-run deterministic.
fn sum8<T: Real>(v: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let chunks = v.chunks_exact(8);
    let rem = chunks.remainder();
    for ch in chunks {
        for (a, &x) in acc.iter_mut().zip(ch) {
            *a += x;
        }
    }
    let mut tail = T::zero();
    for &x in rem {
        tail += x;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// 8-lane sum of squared deviations from `m`, same combine order as [`sum8`].
fn sqsum8<T: Real>(v: &[T], m: T) -> T {
    let mut acc = [T::zero(); 8];
    let chunks = v.chunks_exact(8);
    let rem = chunks.remainder();
    for ch in chunks {
        for (a, &x) in acc.iter_mut().zip(ch) {
            let d = x - m;
            *a += d * d;
        }
    }
    let mut tail = T::zero();
    for &x in rem {
        let d = x - m;
        tail += d * d;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// Paired 8-lane reduction of `(sum g, sum g*xhat)` with `xhat = (x-m)*is`.
fn grad_sums8<T: Real>(g: &[T], x: &[T], m: T, is: T) -> (T, T) {
    let mut ag = [T::zero(); 8];
    let mut agx = [T::zero(); 8];
    let gc = g.chunks_exact(8);
    let grem = gc.remainder();
    let xrem = &x[x.len() - grem.len()..];
    for (gch, xch) in gc.zip(x.chunks_exact(8)) {
        for l in 0..8 {
            ag[l] += gch[l];
            agx[l] += gch[l] * (xch[l] - m) * is;
        }
    }
    let mut tg = T::zero();
    let mut tgx = T::zero();
    for (&gv, &xv) in grem.iter().zip(xrem) {
        tg += gv;
        tgx += gv * (xv - m) * is;
    }
    (
        ((ag[0] + ag[4]) + (ag[1] + ag[5])) + ((ag[2] + ag[6]) + (ag[3] + ag[7])) + tg,
        ((agx[0] + agx[4]) + (agx[1] + agx[5])) + ((agx[2] + agx[6]) + (agx[3] + agx[7])) + tgx,
    )
}

/// Batch normalization over `B×C×H×W`, per channel.
///
/// Train mode normalizes with batch statistics (biased variance) and updates
/// the shared running buffers with momentum; eval mode uses the running
/// statistics, making the output independent of batch composition.
#[allow(clippy::too_many_arguments)]
pub fn batch_norm<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &Rc<RefCell<Vec<T>>>,
    running_var: &Rc<RefCell<Vec<T>>>,
    momentum: f64,
    eps: f64,
    training: bool,
) -> Result<Tensor<T>, TensorError> {
    let (b, c, h, w) = match x.shape() {
        [b, c, h, w] => (*b, *c, *h, *w),
        s => return Err(TensorError::ShapeMismatch(format!("batch_norm input {s:?}"))),
    };
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(TensorError::ShapeMismatch(format!(
            "batch_norm affine {:?}/{:?}, want [{c}]",
            gamma.shape(),
            beta.shape()
        )));
    }
    let n = b * h * w;
    let plane = h * w;
    let epst = T::from_f64(eps);
    let (mean, var) = if training {
        let d = x.data();
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for ch in 0..c {
            let mut acc = T::zero();
            for bi in 0..b {
                let off = (bi * c + ch) * plane;
                acc += sum8(&d[off..off + plane]);
            }
            let m = acc / T::from_f64(n as f64);
            let mut vacc = T::zero();
            for bi in 0..b {
                let off = (bi * c + ch) * plane;
                vacc += sqsum8(&d[off..off + plane], m);
            }
            mean[ch] = m;
            var[ch] = vacc / T::from_f64(n as f64);
        }
        drop(d);
        // running update uses the unbiased variance estimate
        let mom = T::from_f64(momentum);
        let unbias = if n > 1 {
            T::from_f64(n as f64 / (n as f64 - 1.0))
        } else {
            T::one()
        };
        let mut rm = running_mean.borrow_mut();
        let mut rv = running_var.borrow_mut();
        for ch in 0..c {
            rm[ch] = (T::one() - mom) * rm[ch] + mom * mean[ch];
            rv[ch] = (T::one() - mom) * rv[ch] + mom * var[ch] * unbias;
        }
        (mean, var)
    } else {
        (running_mean.borrow().clone(), running_var.borrow().clone())
    };

    let invstd: Vec<T> = var.iter().map(|v| T::one() / (*v + epst).sqrt()).collect();
    let d = x.data();
    let gd = gamma.data();
    let bd = beta.data();
    let mut out = vec![T::zero(); d.len()];
    for bi in 0..b {
        for ch in 0..c {
            let off = (bi * c + ch) * plane;
            let (m, is, g, be) = (mean[ch], invstd[ch], gd[ch], bd[ch]);
            for (o, &v) in out[off..off + plane].iter_mut().zip(&d[off..off + plane]) {
                *o = (v - m) * is * g + be;
            }
        }
    }
    drop(d);
    drop(gd);
    drop(bd);

    Ok(Tensor::from_op(
        vec![b, c, h, w],
        out,
        vec![x.clone(), gamma.clone(), beta.clone()],
        Box::new(move |g, parents| {
            let xd = parents[0].data();
            let gad = parents[1].data();
            let nf = T::from_f64(n as f64);
            let mut dx = vec![T::zero(); xd.len()];
            let mut dgamma = vec![T::zero(); c];
            let mut dbeta = vec![T::zero(); c];
            for ch in 0..c {
                let (m, is) = (mean[ch], invstd[ch]);
                let mut sum_g = T::zero();
                let mut sum_gx = T::zero();
                for bi in 0..b {
                    let off = (bi * c + ch) * plane;
                    let (sg, sgx) =
                        grad_sums8(&g[off..off + plane], &xd[off..off + plane], m, is);
                    sum_g += sg;
                    sum_gx += sgx;
                }
                dgamma[ch] = sum_gx;
                dbeta[ch] = sum_g;
                if parents[0].needs_grad() {
                    let ga = gad[ch];
                    if training {
                        let mg = sum_g / nf;
                        let mgx = sum_gx / nf;
                        for bi in 0..b {
                            let off = (bi * c + ch) * plane;
                            let dst = &mut dx[off..off + plane];
                            let gs = &g[off..off + plane];
                            let xs = &xd[off..off + plane];
                            for ((o, &gv), &xv) in dst.iter_mut().zip(gs).zip(xs) {
                                let xhat = (xv - m) * is;
                                *o = ga * is * (gv - mg - xhat * mgx);
                            }
                        }
                    } else {
                        for bi in 0..b {
                            let off = (bi * c + ch) * plane;
                            for (o, &gv) in dx[off..off + plane].iter_mut().zip(&g[off..off + plane]) {
                                *o = gv * ga * is;
                            }
                        }
                    }
                }
            }
            drop(xd);
            drop(gad);
            if parents[0].needs_grad() {
                parents[0].accum_grad_owned(dx);
            }
            if parents[1].needs_grad() {
                parents[1].accum_grad_owned(dgamma);
            }
            if parents[2].needs_grad() {
                parents[2].accum_grad_owned(dbeta);
            }
        }),
    ))
}

/// Group normalization over `B×C×H×W`: statistics per (sample, group),
/// affine per channel.
pub fn group_norm<T: Real>(
    x: &Tensor<T>,
    groups: usize,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: f64,
) -> Result<Tensor<T>, TensorError> {
    let (b, c, h, w) = match x.shape() {
        [b, c, h, w] => (*b, *c, *h, *w),
        s => return Err(TensorError::ShapeMismatch(format!("group_norm input {s:?}"))),
    };
    if groups == 0 || c % groups != 0 {
        return Err(TensorError::ShapeMismatch(format!(
            "group_norm: {c} channels not divisible into {groups} groups"
        )));
    }
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(TensorError::ShapeMismatch(format!(
            "group_norm affine {:?}/{:?}, want [{c}]",
            gamma.shape(),
            beta.shape()
        )));
    }
    let cg = c / groups;
    let plane = h * w;
    let gsize = cg * plane;
    let epst = T::from_f64(eps);
    let d = x.data();
    let mut mean = vec![T::zero(); b * groups];
    let mut invstd = vec![T::zero(); b * groups];
    for bi in 0..b {
        for gi in 0..groups {
            let off = (bi * c + gi * cg) * plane;
            let slice = &d[off..off + gsize];
            let m = slice.iter().copied().sum::<T>() / T::from_f64(gsize as f64);
            let v = slice
                .iter()
                .map(|x| (*x - m) * (*x - m))
                .sum::<T>()
                / T::from_f64(gsize as f64);
            mean[bi * groups + gi] = m;
            invstd[bi * groups + gi] = T::one() / (v + epst).sqrt();
        }
    }
    let gd = gamma.data();
    let bd = beta.data();
    let mut out = vec![T::zero(); d.len()];
    for bi in 0..b {
        for ch in 0..c {
            let gi = ch / cg;
            let (m, is) = (mean[bi * groups + gi], invstd[bi * groups + gi]);
            let off = (bi * c + ch) * plane;
            for i in 0..plane {
                out[off + i] = (d[off + i] - m) * is * gd[ch] + bd[ch];
            }
        }
    }
    drop(d);
    drop(gd);
    drop(bd);

    Ok(Tensor::from_op(
        vec![b, c, h, w],
        out,
        vec![x.clone(), gamma.clone(), beta.clone()],
        Box::new(move |g, parents| {
            let xd = parents[0].data();
            let gad = parents[1].data();
            let nf = T::from_f64(gsize as f64);
            let mut dx = vec![T::zero(); xd.len()];
            let mut dgamma = vec![T::zero(); c];
            let mut dbeta = vec![T::zero(); c];
            for bi in 0..b {
                for gi in 0..groups {
                    let (m, is) = (mean[bi * groups + gi], invstd[bi * groups + gi]);
                    // dxhat = g * gamma; reduce over the group
                    let mut sum_dh = T::zero();
                    let mut sum_dhx = T::zero();
                    for cc in 0..cg {
                        let ch = gi * cg + cc;
                        let off = (bi * c + ch) * plane;
                        for i in 0..plane {
                            let xhat = (xd[off + i] - m) * is;
                            let dh = g[off + i] * gad[ch];
                            sum_dh += dh;
                            sum_dhx += dh * xhat;
                            dgamma[ch] += g[off + i] * xhat;
                            dbeta[ch] += g[off + i];
                        }
                    }
                    if parents[0].needs_grad() {
                        let mdh = sum_dh / nf;
                        let mdhx = sum_dhx / nf;
                        for cc in 0..cg {
                            let ch = gi * cg + cc;
                            let off = (bi * c + ch) * plane;
                            for i in 0..plane {
                                let xhat = (xd[off + i] - m) * is;
                                let dh = g[off + i] * gad[ch];
                                dx[off + i] = is * (dh - mdh - xhat * mdhx);
                            }
                        }
                    }
                }
            }
            drop(xd);
            drop(gad);
            if parents[0].needs_grad() {
                parents[0].accum_grad_owned(dx);
            }
            if parents[1].needs_grad() {
                parents[1].accum_grad_owned(dgamma);
            }
            if parents[2].needs_grad() {
                parents[2].accum_grad_owned(dbeta);
            }
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rc(v: Vec<f64>) -> Rc<RefCell<Vec<f64>>> {
        Rc::new(RefCell::new(v))
    }

    #[test]
    fn zero_variance_batch_outputs_beta() {
        let x = Tensor::from_vec(&[2, 1, 2, 2], vec![5.0f64; 8]);
        let gamma = Tensor::from_vec(&[1], vec![1.0]);
        let beta = Tensor::from_vec(&[1], vec![0.25]);
        let rm = rc(vec![0.0]);
        let rv = rc(vec![1.0]);
        let y = batch_norm(&x, &gamma, &beta, &rm, &rv, 0.1, 1e-5, true).unwrap();
        for v in y.to_vec() {
            assert!((v - 0.25).abs() < 1e-9);
        }
    }

    #[test]
    fn eval_mode_is_independent_of_batch_composition() {
        let gamma = Tensor::from_vec(&[1], vec![2.0f64]);
        let beta = Tensor::from_vec(&[1], vec![0.5]);
        let rm = rc(vec![1.0]);
        let rv = rc(vec![4.0]);
        let single = Tensor::from_vec(&[1, 1, 1, 2], vec![3.0, -1.0]);
        let mixed = Tensor::from_vec(&[2, 1, 1, 2], vec![3.0, -1.0, 100.0, -50.0]);
        let y1 = batch_norm(&single, &gamma, &beta, &rm, &rv, 0.1, 1e-5, false).unwrap();
        let y2 = batch_norm(&mixed, &gamma, &beta, &rm, &rv, 0.1, 1e-5, false).unwrap();
        assert_eq!(y1.to_vec()[..2], y2.to_vec()[..2]);
    }

    #[test]
    fn group_norm_output_statistics_match_affine() {
        // gamma=2, beta=3 -> per-group mean ~3, std ~2
        let data: Vec<f64> = (0..32).map(|i| (i as f64) * 0.7 - 3.0).collect();
        let x = Tensor::from_vec(&[1, 2, 4, 4], data);
        let gamma = Tensor::from_vec(&[2], vec![2.0, 2.0]);
        let beta = Tensor::from_vec(&[2], vec![3.0, 3.0]);
        let y = group_norm(&x, 1, &gamma, &beta, 1e-5).unwrap();
        let out = y.to_vec();
        let m: f64 = out.iter().sum::<f64>() / 32.0;
        let sd = (out.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / 32.0).sqrt();
        assert!((m - 3.0).abs() < 1e-6);
        assert!((sd - 2.0).abs() < 1e-3);
    }

    #[test]
    fn running_stats_update_with_momentum() {
        let x = Tensor::from_vec(&[1, 1, 1, 2], vec![0.0f64, 2.0]);
        let gamma = Tensor::from_vec(&[1], vec![1.0]);
        let beta = Tensor::from_vec(&[1], vec![0.0]);
        let rm = rc(vec![0.0]);
        let rv = rc(vec![1.0]);
        batch_norm(&x, &gamma, &beta, &rm, &rv, 0.1, 1e-5, true).unwrap();
        // batch mean 1.0, biased var 1.0, unbiased 2.0
        assert!((rm.borrow()[0] - 0.1).abs() < 1e-12);
        assert!((rv.borrow()[0] - (0.9 + 0.1 * 2.0)).abs() < 1e-12);
    }
}
