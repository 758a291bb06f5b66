//! Matrix multiplication and layout ops.
//!
//! All kernels accumulate with a fixed sequential reduction order, so results
//! are bitwise reproducible run to run.

use super::{Real, Tensor, TensorError};

/// `out += a (m,k) * b (k,n)`, row-major.
///
/// Register-blocked 4×16 micro-kernel: four output rows share each pass over a
/// `b` column block, so `b` traffic drops fourfold and the 64 accumulators
/// stay in vector registers. Per output element the reduction runs over `p`
/// ascending, so results are reproducible run to run.
pub(crate) fn gemm<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], out: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    // Pack b into 16-column panels (each k*16 contiguous) so the micro-kernel
    // streams instead of striding a full row length per k-step.
    let panels = n / 16;
    let mut bp = vec![T::zero(); panels * k * 16];
    for p in 0..k {
        let brow = &b[p * n..(p + 1) * n];
        for (pi, chunk) in brow.chunks_exact(16).enumerate() {
            bp[(pi * k + p) * 16..][..16].copy_from_slice(chunk);
        }
    }
    let mut i = 0;
    while i + 4 <= m {
        let (ar0, ar1, ar2, ar3) = (
            &a[i * k..(i + 1) * k],
            &a[(i + 1) * k..(i + 2) * k],
            &a[(i + 2) * k..(i + 3) * k],
            &a[(i + 3) * k..(i + 4) * k],
        );
        let (o0, rest) = out[i * n..].split_at_mut(n);
        let (o1, rest) = rest.split_at_mut(n);
        let (o2, rest) = rest.split_at_mut(n);
        let o3 = &mut rest[..n];
        for pi in 0..panels {
            let panel = &bp[pi * k * 16..(pi + 1) * k * 16];
            let j = pi * 16;
            let mut acc = [[T::zero(); 16]; 4];
            for p in 0..k {
                let bv: &[T; 16] = panel[p * 16..][..16].try_into().unwrap();
                let (x0, x1, x2, x3) = (ar0[p], ar1[p], ar2[p], ar3[p]);
                for l in 0..16 {
                    acc[0][l] += x0 * bv[l];
                    acc[1][l] += x1 * bv[l];
                    acc[2][l] += x2 * bv[l];
                    acc[3][l] += x3 * bv[l];
                }
            }
            for l in 0..16 {
                o0[j + l] += acc[0][l];
                o1[j + l] += acc[1][l];
                o2[j + l] += acc[2][l];
                o3[j + l] += acc[3][l];
            }
        }
        let mut j = panels * 16;
        while j < n {
            let (mut s0, mut s1, mut s2, mut s3) =
                (T::zero(), T::zero(), T::zero(), T::zero());
            for p in 0..k {
                let bv = b[p * n + j];
                s0 += ar0[p] * bv;
                s1 += ar1[p] * bv;
                s2 += ar2[p] * bv;
                s3 += ar3[p] * bv;
            }
            o0[j] += s0;
            o1[j] += s1;
            o2[j] += s2;
            o3[j] += s3;
            j += 1;
        }
        i += 4;
    }
    while i < m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for pi in 0..panels {
            let panel = &bp[pi * k * 16..(pi + 1) * k * 16];
            let j = pi * 16;
            let mut acc = [T::zero(); 16];
            for p in 0..k {
                let bv: &[T; 16] = panel[p * 16..][..16].try_into().unwrap();
                let x = arow[p];
                for l in 0..16 {
                    acc[l] += x * bv[l];
                }
            }
            for l in 0..16 {
                orow[j + l] += acc[l];
            }
        }
        let mut j = panels * 16;
        while j < n {
            let mut s = T::zero();
            for p in 0..k {
                s += arow[p] * b[p * n + j];
            }
            orow[j] += s;
            j += 1;
        }
        i += 1;
    }
}

/// `out += a (m,k) * b^T` where `b` is `(n,k)` row-major.
///
/// Transposes `b` up front so the hot loop is the same contiguous axpy as
/// `gemm`; a scalar dot-product form is several times slower because the
/// serial accumulator chain defeats vectorization.
pub(crate) fn gemm_nt<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], out: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    let mut bt = vec![T::zero(); k * n];
    for j in 0..n {
        for p in 0..k {
            bt[p * n + j] = b[j * k + p];
        }
    }
    gemm(m, k, n, a, &bt, out);
}

/// `out += a^T * b` where `a` is `(m,k)` and `b` is `(m,n)`; result `(k,n)`.
/// Four input rows are fused per pass over each output row, as in [`gemm`].
pub(crate) fn gemm_tn<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], out: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(out.len(), k * n);
    let zero = T::zero();
    let mut i = 0;
    while i + 4 <= m {
        let (ar0, ar1, ar2, ar3) = (
            &a[i * k..(i + 1) * k],
            &a[(i + 1) * k..(i + 2) * k],
            &a[(i + 2) * k..(i + 3) * k],
            &a[(i + 3) * k..(i + 4) * k],
        );
        let b0 = &b[i * n..(i + 1) * n];
        let b1 = &b[(i + 1) * n..(i + 2) * n];
        let b2 = &b[(i + 2) * n..(i + 3) * n];
        let b3 = &b[(i + 3) * n..(i + 4) * n];
        for p in 0..k {
            let (a0, a1, a2, a3) = (ar0[p], ar1[p], ar2[p], ar3[p]);
            if a0 != zero || a1 != zero || a2 != zero || a3 != zero {
                let orow = &mut out[p * n..(p + 1) * n];
                for (o, (((&v0, &v1), &v2), &v3)) in
                    orow.iter_mut().zip(b0.iter().zip(b1).zip(b2).zip(b3))
                {
                    *o += a0 * v0 + a1 * v1 + a2 * v2 + a3 * v3;
                }
            }
        }
        i += 4;
    }
    while i < m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av != zero {
                let orow = &mut out[p * n..(p + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
        i += 1;
    }
}

impl<T: Real> Tensor<T> {
    /// 2D matrix product `(m,k) x (k,n) -> (m,n)`.
    pub fn matmul(&self, rhs: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        let (m, k) = match self.shape() {
            [m, k] => (*m, *k),
            s => return Err(TensorError::ShapeMismatch(format!("matmul lhs {s:?}"))),
        };
        let (k2, n) = match rhs.shape() {
            [k2, n] => (*k2, *n),
            s => return Err(TensorError::ShapeMismatch(format!("matmul rhs {s:?}"))),
        };
        if k != k2 {
            return Err(TensorError::ShapeMismatch(format!(
                "matmul inner dims {k} vs {k2}"
            )));
        }
        let mut out = vec![T::zero(); m * n];
        gemm(m, k, n, &self.data(), &rhs.data(), &mut out);
        Ok(Tensor::from_op(
            vec![m, n],
            out,
            vec![self.clone(), rhs.clone()],
            Box::new(move |g, parents| {
                if parents[0].needs_grad() {
                    // dA = dOut * B^T
                    let mut da = vec![T::zero(); m * k];
                    gemm_nt(m, n, k, g, &parents[1].data(), &mut da);
                    parents[0].accum_grad_owned(da);
                }
                if parents[1].needs_grad() {
                    // dB = A^T * dOut
                    let mut db = vec![T::zero(); k * n];
                    gemm_tn(m, k, n, &parents[0].data(), g, &mut db);
                    parents[1].accum_grad_owned(db);
                }
            }),
        ))
    }

    /// 2D transpose.
    pub fn transpose(&self) -> Result<Tensor<T>, TensorError> {
        let (m, n) = match self.shape() {
            [m, n] => (*m, *n),
            s => return Err(TensorError::ShapeMismatch(format!("transpose {s:?}"))),
        };
        let d = self.data();
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = d[i * n + j];
            }
        }
        drop(d);
        Ok(Tensor::from_op(
            vec![n, m],
            out,
            vec![self.clone()],
            Box::new(move |g, parents| {
                if parents[0].needs_grad() {
                    let mut gt = vec![T::zero(); m * n];
                    for j in 0..n {
                        for i in 0..m {
                            gt[i * n + j] = g[j * m + i];
                        }
                    }
                    parents[0].accum_grad_owned(gt);
                }
            }),
        ))
    }

    /// Reorder axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Tensor<T>, TensorError> {
        let rank = self.shape().len();
        {
            let mut seen = vec![false; rank];
            if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
                return Err(TensorError::ShapeMismatch(format!(
                    "permute axes {axes:?} for rank {rank}"
                )));
            }
        }
        let in_shape = self.shape().to_vec();
        let out_shape: Vec<usize> = axes.iter().map(|&a| in_shape[a]).collect();
        let out = permute_data(&self.data(), &in_shape, axes);
        let axes_owned = axes.to_vec();
        Ok(Tensor::from_op(
            out_shape.clone(),
            out,
            vec![self.clone()],
            Box::new(move |g, parents| {
                if parents[0].needs_grad() {
                    // inverse permutation routes the gradient back
                    let mut inv = vec![0usize; axes_owned.len()];
                    for (i, &a) in axes_owned.iter().enumerate() {
                        inv[a] = i;
                    }
                    parents[0].accum_grad_owned(permute_data(g, &out_shape, &inv));
                }
            }),
        ))
    }

    /// Concatenate tensors along `axis`. All other dimensions must agree.
    pub fn concat(tensors: &[Tensor<T>], axis: usize) -> Result<Tensor<T>, TensorError> {
        if tensors.is_empty() {
            return Err(TensorError::EmptyInput);
        }
        let rank = tensors[0].shape().len();
        if axis >= rank {
            return Err(TensorError::ShapeMismatch(format!(
                "concat axis {axis} for rank {rank}"
            )));
        }
        for t in tensors {
            if t.shape().len() != rank {
                return Err(TensorError::ShapeMismatch("concat rank mismatch".into()));
            }
            for (d, (a, b)) in tensors[0].shape().iter().zip(t.shape()).enumerate() {
                if d != axis && a != b {
                    return Err(TensorError::ShapeMismatch(format!(
                        "concat dim {d}: {a} vs {b}"
                    )));
                }
            }
        }
        let mut out_shape = tensors[0].shape().to_vec();
        out_shape[axis] = tensors.iter().map(|t| t.shape()[axis]).sum();
        // outer = dims before axis, inner = dims after axis
        let outer: usize = out_shape[..axis].iter().product();
        let inner: usize = out_shape[axis + 1..].iter().product();
        let total_axis = out_shape[axis];
        let mut out = vec![T::zero(); outer * total_axis * inner];
        let mut offset = 0;
        for t in tensors {
            let ax = t.shape()[axis];
            let d = t.data();
            for o in 0..outer {
                let src = &d[o * ax * inner..(o + 1) * ax * inner];
                let dst_start = (o * total_axis + offset) * inner;
                out[dst_start..dst_start + ax * inner].copy_from_slice(src);
            }
            offset += ax;
        }
        let sizes: Vec<usize> = tensors.iter().map(|t| t.shape()[axis]).collect();
        Ok(Tensor::from_op(
            out_shape,
            out,
            tensors.to_vec(),
            Box::new(move |g, parents| {
                let mut offset = 0;
                for (p, &ax) in parents.iter().zip(&sizes) {
                    if p.needs_grad() {
                        let mut contrib = vec![T::zero(); outer * ax * inner];
                        for o in 0..outer {
                            let src_start = (o * total_axis + offset) * inner;
                            contrib[o * ax * inner..(o + 1) * ax * inner]
                                .copy_from_slice(&g[src_start..src_start + ax * inner]);
                        }
                        p.accum_grad_owned(contrib);
                    }
                    offset += ax;
                }
            }),
        ))
    }
}

fn permute_data<T: Real>(data: &[T], in_shape: &[usize], axes: &[usize]) -> Vec<T> {
    let rank = in_shape.len();
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank - 1).rev() {
        in_strides[i] = in_strides[i + 1] * in_shape[i + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| in_shape[a]).collect();
    let out_src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let mut out = vec![T::zero(); data.len()];
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    for o in out.iter_mut() {
        *o = data[src];
        // odometer increment over the output index space
        for d in (0..rank).rev() {
            idx[d] += 1;
            src += out_src_strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            src -= out_src_strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    out
}
