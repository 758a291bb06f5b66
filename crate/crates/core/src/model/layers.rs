//! Parameterized layers: linear, 2D convolution, batch norm, group norm.
//!
//! Each layer exposes its trainable tensors through `collect_params` (and
//! running statistics through `collect_buffers`) under a dotted name prefix;
//! the checkpoint format serializes tensors in exactly this order.

use std::cell::RefCell;
use std::rc::Rc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::{batch_norm, group_norm, Real, Tensor, TensorError};

pub type NamedParams<T> = Vec<(String, Tensor<T>)>;
pub type NamedBuffers<T> = Vec<(String, Rc<RefCell<Vec<T>>>)>;

/// Kaiming-uniform draw: U(-b, b) with b = sqrt(6 / fan_in) (ReLU gain).
pub fn kaiming_uniform<T: Real>(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    let data = (0..shape.iter().product())
        .map(|_| T::from_f64(rng.gen_range(-bound..bound)))
        .collect();
    Tensor::param(shape, data)
}

/// Normal(0, sigma) truncated to two standard deviations, for embeddings.
pub fn trunc_normal<T: Real>(shape: &[usize], sigma: f64, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let normal = rand_distr::Normal::new(0.0, sigma).expect("sigma > 0");
    let data = (0..shape.iter().product())
        .map(|_| loop {
            let v: f64 = rng.sample(normal);
            if v.abs() <= 2.0 * sigma {
                break T::from_f64(v);
            }
        })
        .collect();
    Tensor::param(shape, data)
}

pub struct Linear<T: Real> {
    /// Weight stored (in, out) so forward is a plain row-major matmul.
    pub w: Tensor<T>,
    pub b: Tensor<T>,
}

impl<T: Real> Linear<T> {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        Linear {
            w: kaiming_uniform(&[in_dim, out_dim], in_dim, rng),
            b: Tensor::param(&[out_dim], vec![T::zero(); out_dim]),
        }
    }

    /// Zero-initialized classifier head: the untrained model predicts
    /// uniformly (initial NLL = ln T). The final linear layer needs no
    /// symmetry breaking — its weight gradient is already nonzero.
    pub fn new_head(in_dim: usize, out_dim: usize) -> Self {
        Linear {
            w: Tensor::param(&[in_dim, out_dim], vec![T::zero(); in_dim * out_dim]),
            b: Tensor::param(&[out_dim], vec![T::zero(); out_dim]),
        }
    }

    /// `(B, in) -> (B, out)`.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        x.matmul(&self.w)?.add_row_bias(&self.b)
    }

    pub fn collect_params(&self, prefix: &str, out: &mut NamedParams<T>) {
        out.push((format!("{prefix}.w"), self.w.clone()));
        out.push((format!("{prefix}.b"), self.b.clone()));
    }
}

pub struct Conv2d<T: Real> {
    /// Kernel `(out, in, kh, kw)`.
    pub w: Tensor<T>,
    pub b: Option<Tensor<T>>,
    pub stride: usize,
    pub pad: usize,
}

impl<T: Real> Conv2d<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        cin: usize,
        cout: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = cin * kh * kw;
        Conv2d {
            w: kaiming_uniform(&[cout, cin, kh, kw], fan_in, rng),
            b: bias.then(|| Tensor::param(&[cout], vec![T::zero(); cout])),
            stride,
            pad,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        x.conv2d(&self.w, self.b.as_ref(), self.stride, self.pad)
    }

    pub fn collect_params(&self, prefix: &str, out: &mut NamedParams<T>) {
        out.push((format!("{prefix}.w"), self.w.clone()));
        if let Some(b) = &self.b {
            out.push((format!("{prefix}.b"), b.clone()));
        }
    }
}

pub struct BatchNorm2d<T: Real> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Rc<RefCell<Vec<T>>>,
    pub running_var: Rc<RefCell<Vec<T>>>,
    pub momentum: f64,
    pub eps: f64,
}

impl<T: Real> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            gamma: Tensor::param(&[channels], vec![T::one(); channels]),
            beta: Tensor::param(&[channels], vec![T::zero(); channels]),
            running_mean: Rc::new(RefCell::new(vec![T::zero(); channels])),
            running_var: Rc::new(RefCell::new(vec![T::one(); channels])),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn forward(&self, x: &Tensor<T>, training: bool) -> Result<Tensor<T>, TensorError> {
        batch_norm(
            x,
            &self.gamma,
            &self.beta,
            &self.running_mean,
            &self.running_var,
            self.momentum,
            self.eps,
            training,
        )
    }

    pub fn collect_params(&self, prefix: &str, out: &mut NamedParams<T>) {
        out.push((format!("{prefix}.gamma"), self.gamma.clone()));
        out.push((format!("{prefix}.beta"), self.beta.clone()));
    }

    pub fn collect_buffers(&self, prefix: &str, out: &mut NamedBuffers<T>) {
        out.push((format!("{prefix}.running_mean"), Rc::clone(&self.running_mean)));
        out.push((format!("{prefix}.running_var"), Rc::clone(&self.running_var)));
    }
}

/// Group normalization with a fixed group count (1 in this architecture).
pub struct GroupNorm<T: Real> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub groups: usize,
    pub eps: f64,
}

impl<T: Real> GroupNorm<T> {
    pub fn new(channels: usize, groups: usize) -> Self {
        GroupNorm {
            gamma: Tensor::param(&[channels], vec![T::one(); channels]),
            beta: Tensor::param(&[channels], vec![T::zero(); channels]),
            groups,
            eps: 1e-5,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        group_norm(x, self.groups, &self.gamma, &self.beta, self.eps)
    }

    pub fn collect_params(&self, prefix: &str, out: &mut NamedParams<T>) {
        out.push((format!("{prefix}.gamma"), self.gamma.clone()));
        out.push((format!("{prefix}.beta"), self.beta.clone()));
    }
}
