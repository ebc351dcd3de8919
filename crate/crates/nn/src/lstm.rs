//! Bidirectional LSTM layer with backpropagation through time.
//!
//! Gate blocks inside the `4 n_h` axis are ordered input, forget, cell,
//! output. The forward-direction hidden state fills the first `n_h` output
//! channels of each time step, the reversed direction the last `n_h`.

use crate::gemm::{gemm, Layout};
use crate::tensor::Tensor;
use crate::{NnError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LstmDirection {
    /// `[4 n_h, c_in]`
    pub w: Tensor,
    /// `[4 n_h, n_h]`
    pub u: Tensor,
    /// `[4 n_h]`
    pub b: Tensor,
}

impl LstmDirection {
    fn new(c_in: usize, n_h: usize) -> Self {
        Self {
            w: Tensor::param(&[4 * n_h, c_in]),
            u: Tensor::param(&[4 * n_h, n_h]),
            b: Tensor::param(&[4 * n_h]),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiLstm {
    pub c_in: usize,
    pub n_h: usize,
    /// Index 0 runs forward in time, index 1 backward.
    pub dirs: [LstmDirection; 2],
}

#[derive(Debug, Clone)]
pub struct LstmCache {
    input: Vec<f64>,
    batch: usize,
    t: usize,
    /// Output `[batch, t, 2 n_h]`; doubles as the stored hidden states.
    hidden: Vec<f64>,
    /// Activated gates per direction `[batch, t, 4 n_h]`.
    gates: [Vec<f64>; 2],
    /// Cell states per direction `[batch, t, n_h]`.
    cells: [Vec<f64>; 2],
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl BiLstm {
    pub fn new(c_in: usize, n_h: usize) -> Self {
        assert!(c_in > 0 && n_h > 0, "empty LSTM");
        Self { c_in, n_h, dirs: [LstmDirection::new(c_in, n_h), LstmDirection::new(c_in, n_h)] }
    }

    pub fn num_params(&self) -> usize {
        self.dirs.iter().map(|d| d.w.len() + d.u.len() + d.b.len()).sum()
    }

    /// `input` is `[batch, t, c_in]`; returns `[batch, t, 2 n_h]`.
    pub fn forward(&self, input: &[f64], batch: usize, t: usize) -> Result<(Vec<f64>, LstmCache)> {
        let (c_in, h) = (self.c_in, self.n_h);
        if t == 0 || input.len() != batch * t * c_in {
            return Err(NnError::Shape(format!(
                "LSTM input has {} values, expected {batch}x{t}x{c_in} with t >= 1",
                input.len()
            )));
        }
        let g4 = 4 * h;
        let mut hidden = vec![0.0; batch * t * 2 * h];
        let mut gates = [vec![0.0; batch * t * g4], vec![0.0; batch * t * g4]];
        let mut cells = [vec![0.0; batch * t * h], vec![0.0; batch * t * h]];
        for (d, dir) in self.dirs.iter().enumerate() {
            let pre = &mut gates[d];
            for row in pre.chunks_exact_mut(g4) {
                row.copy_from_slice(&dir.b.data);
            }
            gemm(
                1.0,
                input,
                Layout::dense(0, batch * t, c_in),
                &dir.w.data,
                Layout::dense(0, g4, c_in).t(),
                1.0,
                pre,
                Layout::dense(0, batch * t, g4),
            );
            let cell = &mut cells[d];
            for step in 0..t {
                let (ts, prev) = if d == 0 {
                    (step, step.checked_sub(1))
                } else {
                    (t - 1 - step, (step > 0).then(|| t - step))
                };
                if let Some(tp) = prev {
                    gemm(
                        1.0,
                        &hidden,
                        Layout::strided(tp * 2 * h + d * h, batch, h, t * 2 * h),
                        &dir.u.data,
                        Layout::dense(0, g4, h).t(),
                        1.0,
                        pre,
                        Layout::strided(ts * g4, batch, g4, t * g4),
                    );
                }
                for b in 0..batch {
                    let gi = (b * t + ts) * g4;
                    let ci = (b * t + ts) * h;
                    let hi = (b * t + ts) * 2 * h + d * h;
                    for j in 0..h {
                        let i_g = sigmoid(pre[gi + j]);
                        let f_g = sigmoid(pre[gi + h + j]);
                        let g_g = pre[gi + 2 * h + j].tanh();
                        let o_g = sigmoid(pre[gi + 3 * h + j]);
                        pre[gi + j] = i_g;
                        pre[gi + h + j] = f_g;
                        pre[gi + 2 * h + j] = g_g;
                        pre[gi + 3 * h + j] = o_g;
                        let c_prev = prev.map_or(0.0, |tp| cell[(b * t + tp) * h + j]);
                        let c = f_g * c_prev + i_g * g_g;
                        cell[ci + j] = c;
                        hidden[hi + j] = o_g * c.tanh();
                    }
                }
            }
        }
        Ok((
            hidden.clone(),
            LstmCache { input: input.to_vec(), batch, t, hidden, gates, cells },
        ))
    }

    /// Accumulates parameter gradients; returns the input gradient when requested.
    pub fn backward(&mut self, cache: &LstmCache, d_out: &[f64], need_input_grad: bool) -> Option<Vec<f64>> {
        let (c_in, h) = (self.c_in, self.n_h);
        let (batch, t) = (cache.batch, cache.t);
        let g4 = 4 * h;
        assert_eq!(d_out.len(), batch * t * 2 * h, "LSTM output gradient shape");
        let mut d_in = need_input_grad.then(|| vec![0.0; batch * t * c_in]);

        for d in 0..2 {
            let gates = &cache.gates[d];
            let cells = &cache.cells[d];
            let dir = &mut self.dirs[d];
            let mut d_pre = vec![0.0; batch * t * g4];
            let mut dh_rec = vec![0.0; batch * h];
            let mut dc_next = vec![0.0; batch * h];
            for step in (0..t).rev() {
                let (ts, prev) = if d == 0 {
                    (step, step.checked_sub(1))
                } else {
                    (t - 1 - step, (step > 0).then(|| t - step))
                };
                for b in 0..batch {
                    let gi = (b * t + ts) * g4;
                    let ci = (b * t + ts) * h;
                    let hi = (b * t + ts) * 2 * h + d * h;
                    for j in 0..h {
                        let (i_g, f_g, g_g, o_g) =
                            (gates[gi + j], gates[gi + h + j], gates[gi + 2 * h + j], gates[gi + 3 * h + j]);
                        let c = cells[ci + j];
                        let tc = c.tanh();
                        let dh = d_out[hi + j] + dh_rec[b * h + j];
                        let dc = dh * o_g * (1.0 - tc * tc) + dc_next[b * h + j];
                        let c_prev = prev.map_or(0.0, |tp| cells[(b * t + tp) * h + j]);
                        d_pre[gi + j] = dc * g_g * i_g * (1.0 - i_g);
                        d_pre[gi + h + j] = dc * c_prev * f_g * (1.0 - f_g);
                        d_pre[gi + 2 * h + j] = dc * i_g * (1.0 - g_g * g_g);
                        d_pre[gi + 3 * h + j] = dh * tc * o_g * (1.0 - o_g);
                        dc_next[b * h + j] = dc * f_g;
                    }
                }
                if prev.is_some() {
                    gemm(
                        1.0,
                        &d_pre,
                        Layout::strided(ts * g4, batch, g4, t * g4),
                        &dir.u.data,
                        Layout::dense(0, g4, h),
                        0.0,
                        &mut dh_rec,
                        Layout::dense(0, batch, h),
                    );
                }
            }

            let db = dir.b.grad_mut();
            for row in d_pre.chunks_exact(g4) {
                for (g, v) in db.iter_mut().zip(row) {
                    *g += v;
                }
            }
            gemm(
                1.0,
                &d_pre,
                Layout::dense(0, batch * t, g4).t(),
                &cache.input,
                Layout::dense(0, batch * t, c_in),
                1.0,
                dir.w.grad_mut(),
                Layout::dense(0, g4, c_in),
            );
            if t > 1 {
                // Pair each step with the hidden state it consumed.
                let (pre_off, hid_off) = if d == 0 { (1, 0) } else { (0, 1) };
                let du = dir.u.grad_mut();
                for b in 0..batch {
                    gemm(
                        1.0,
                        &d_pre,
                        Layout::dense((b * t + pre_off) * g4, t - 1, g4).t(),
                        &cache.hidden,
                        Layout::strided((b * t + hid_off) * 2 * h + d * h, t - 1, h, 2 * h),
                        1.0,
                        du,
                        Layout::dense(0, g4, h),
                    );
                }
            }
            if let Some(dx) = d_in.as_mut() {
                gemm(
                    1.0,
                    &d_pre,
                    Layout::dense(0, batch * t, g4),
                    &dir.w.data,
                    Layout::dense(0, g4, c_in),
                    1.0,
                    dx,
                    Layout::dense(0, batch * t, c_in),
                );
            }
        }
        d_in
    }
}
