//! Batched 1-D cross-correlation with zero "same" padding or no padding.
//!
//! Activations are laid out `[batch, time, channel]`; kernels are
//! `[c_out, kernel, c_in]` so that a padded input row window read with row
//! stride `c_in` is directly an im2col matrix.

use crate::gemm::{gemm, Layout};
use crate::tensor::Tensor;
use crate::{NnError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding, `(k - 1) / 2` on the left, output length equals input length.
    Same,
    /// No padding, output length `t - k + 1`.
    Valid,
}

impl Padding {
    fn left(self, kernel: usize) -> usize {
        match self {
            Padding::Same => (kernel - 1) / 2,
            Padding::Valid => 0,
        }
    }

    pub fn out_len(self, t: usize, kernel: usize) -> Option<usize> {
        match self {
            Padding::Same => Some(t),
            Padding::Valid => (kernel <= t).then(|| t - kernel + 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    pub weight: Tensor,
    pub bias: Tensor,
    pub padding: Padding,
}

/// Saved forward state needed by `Conv1d::backward`.
#[derive(Debug, Clone)]
pub struct ConvCache {
    padded: Vec<f64>,
    batch: usize,
    t_in: usize,
    t_pad: usize,
}

impl Conv1d {
    pub fn new(c_in: usize, c_out: usize, kernel: usize, padding: Padding) -> Self {
        assert!(c_in > 0 && c_out > 0 && kernel > 0, "empty convolution");
        Self { weight: Tensor::param(&[c_out, kernel, c_in]), bias: Tensor::param(&[c_out]), padding }
    }

    pub fn c_out(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn c_in(&self) -> usize {
        self.weight.shape()[2]
    }

    pub fn num_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    /// `input` is `[batch, t, c_in]` flattened; returns `[batch, t_out, c_out]`.
    pub fn forward(&self, input: &[f64], batch: usize, t: usize) -> Result<(Vec<f64>, ConvCache)> {
        let (c_in, c_out, k) = (self.c_in(), self.c_out(), self.kernel());
        if input.len() != batch * t * c_in {
            return Err(NnError::Shape(format!(
                "conv input has {} values, expected {batch}x{t}x{c_in}",
                input.len()
            )));
        }
        let t_out = self
            .padding
            .out_len(t, k)
            .ok_or_else(|| NnError::Shape(format!("kernel {k} longer than input {t}")))?;
        let left = self.padding.left(k);
        let t_pad = t_out + k - 1;
        let mut padded = vec![0.0; batch * t_pad * c_in];
        for b in 0..batch {
            let dst = b * t_pad * c_in + left * c_in;
            padded[dst..dst + t * c_in].copy_from_slice(&input[b * t * c_in..(b + 1) * t * c_in]);
        }
        let mut out = vec![0.0; batch * t_out * c_out];
        for b in 0..batch {
            let row = &mut out[b * t_out * c_out..(b + 1) * t_out * c_out];
            for chunk in row.chunks_exact_mut(c_out) {
                chunk.copy_from_slice(&self.bias.data);
            }
        }
        let w_t = Layout::dense(0, c_out, k * c_in).t();
        for b in 0..batch {
            gemm(
                1.0,
                &padded,
                Layout::strided(b * t_pad * c_in, t_out, k * c_in, c_in),
                &self.weight.data,
                w_t,
                1.0,
                &mut out,
                Layout::dense(b * t_out * c_out, t_out, c_out),
            );
        }
        Ok((out, ConvCache { padded, batch, t_in: t, t_pad }))
    }

    /// Accumulates parameter gradients and returns the input gradient when
    /// `need_input_grad` is set.
    pub fn backward(&mut self, cache: &ConvCache, d_out: &[f64], need_input_grad: bool) -> Option<Vec<f64>> {
        let (c_in, c_out, k) = (self.c_in(), self.c_out(), self.kernel());
        let (batch, t_pad) = (cache.batch, cache.t_pad);
        let t_out = t_pad + 1 - k;
        assert_eq!(d_out.len(), batch * t_out * c_out, "conv output gradient shape");

        let db = self.bias.grad_mut();
        for row in d_out.chunks_exact(c_out) {
            for (g, v) in db.iter_mut().zip(row) {
                *g += v;
            }
        }
        let dw = self.weight.grad_mut();
        for b in 0..batch {
            gemm(
                1.0,
                d_out,
                Layout::dense(b * t_out * c_out, t_out, c_out).t(),
                &cache.padded,
                Layout::strided(b * t_pad * c_in, t_out, k * c_in, c_in),
                1.0,
                dw,
                Layout::dense(0, c_out, k * c_in),
            );
        }
        if !need_input_grad {
            return None;
        }

        // Input gradient as a correlation of the zero-extended output
        // gradient with the time-flipped, transposed kernel.
        let ext = t_out + 2 * (k - 1);
        let mut d_ext = vec![0.0; batch * ext * c_out];
        for b in 0..batch {
            let dst = b * ext * c_out + (k - 1) * c_out;
            d_ext[dst..dst + t_out * c_out].copy_from_slice(&d_out[b * t_out * c_out..(b + 1) * t_out * c_out]);
        }
        let mut flipped = vec![0.0; c_in * k * c_out];
        for o in 0..c_out {
            for kk in 0..k {
                for c in 0..c_in {
                    flipped[c * k * c_out + (k - 1 - kk) * c_out + o] = self.weight.data[(o * k + kk) * c_in + c];
                }
            }
        }
        let mut d_pad = vec![0.0; batch * t_pad * c_in];
        for b in 0..batch {
            gemm(
                1.0,
                &d_ext,
                Layout::strided(b * ext * c_out, t_pad, k * c_out, c_out),
                &flipped,
                Layout::dense(0, c_in, k * c_out).t(),
                0.0,
                &mut d_pad,
                Layout::dense(b * t_pad * c_in, t_pad, c_in),
            );
        }
        let left = self.padding.left(k);
        let t = cache.t_in;
        let mut d_in = vec![0.0; batch * t * c_in];
        for b in 0..batch {
            let src = b * t_pad * c_in + left * c_in;
            d_in[b * t * c_in..(b + 1) * t * c_in].copy_from_slice(&d_pad[src..src + t * c_in]);
        }
        Some(d_in)
    }
}
