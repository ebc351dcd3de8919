//! The two equalizer architectures and their batched forward/backward passes.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::conv1d::{Conv1d, ConvCache, Padding};
use crate::lstm::{BiLstm, LstmCache};
use crate::tensor::Tensor;
use crate::{NnError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ArchKind {
    Bilstm,
    DeepCnn,
}

impl ArchKind {
    /// Numeric identifier used in weight files.
    pub fn id(self) -> u32 {
        match self {
            ArchKind::Bilstm => 1,
            ArchKind::DeepCnn => 2,
        }
    }

    pub fn from_id(id: u32) -> Option<Self> {
        match id {
            1 => Some(ArchKind::Bilstm),
            2 => Some(ArchKind::DeepCnn),
            _ => None,
        }
    }
}

impl fmt::Display for ArchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ArchKind::Bilstm => "BILSTM",
            ArchKind::DeepCnn => "DEEP_CNN",
        })
    }
}

/// Window geometry and layer sizes of an equalizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EqArch {
    pub kind: ArchKind,
    pub n_in_symbols: usize,
    pub n_out_symbols: usize,
    /// LSTM units per direction.
    pub n_hidden: usize,
    pub hidden_filters: [usize; 2],
    pub hidden_kernel: usize,
    pub out_filters: usize,
    pub out_kernel: usize,
    pub in_channels: usize,
}

impl EqArch {
    pub fn bilstm() -> Self {
        Self {
            kind: ArchKind::Bilstm,
            n_in_symbols: 81,
            n_out_symbols: 61,
            n_hidden: 35,
            hidden_filters: [35, 35],
            hidden_kernel: 21,
            out_filters: 2,
            out_kernel: 21,
            in_channels: 4,
        }
    }

    pub fn deep_cnn() -> Self {
        Self { kind: ArchKind::DeepCnn, ..Self::bilstm() }
    }

    pub fn of_kind(kind: ArchKind) -> Self {
        match kind {
            ArchKind::Bilstm => Self::bilstm(),
            ArchKind::DeepCnn => Self::deep_cnn(),
        }
    }

    /// Symbols skipped at the head of each window.
    pub fn margin(&self) -> usize {
        (self.n_in_symbols - self.n_out_symbols) / 2
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [self.n_in_symbols, self.n_out_symbols, self.out_filters, self.out_kernel, self.in_channels];
        if sizes.contains(&0) {
            return Err(NnError::Arch("zero-sized dimension".into()));
        }
        if self.out_kernel > self.n_in_symbols || self.n_out_symbols != self.n_in_symbols - self.out_kernel + 1 {
            return Err(NnError::Arch(format!(
                "{} output symbols cannot come from {} inputs with kernel {}",
                self.n_out_symbols, self.n_in_symbols, self.out_kernel
            )));
        }
        match self.kind {
            ArchKind::Bilstm if self.n_hidden == 0 => Err(NnError::Arch("no LSTM units".into())),
            ArchKind::DeepCnn if self.hidden_kernel == 0 || self.hidden_filters.contains(&0) => {
                Err(NnError::Arch("empty hidden convolution".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Net {
    Bilstm { lstm: BiLstm, out: Conv1d },
    DeepCnn { hidden: [Conv1d; 2], out: Conv1d },
}

/// A trainable equalizer recovering one polarization.
#[derive(Debug, Clone, PartialEq)]
pub struct EqModel {
    arch: EqArch,
    net: Net,
}

/// Intermediate activations of a training forward pass.
pub struct ForwardCache {
    batch: usize,
    layers: CacheLayers,
}

enum CacheLayers {
    Bilstm { lstm: LstmCache, out: ConvCache },
    DeepCnn { c1: ConvCache, a1: Vec<f64>, c2: ConvCache, a2: Vec<f64>, out: ConvCache },
}

fn glorot(t: &mut Tensor, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for v in &mut t.data {
        *v = rng.random_range(-a..a);
    }
}

fn glorot_conv(c: &mut Conv1d, rng: &mut ChaCha8Rng) {
    let (k, ci, co) = (c.kernel(), c.c_in(), c.c_out());
    glorot(&mut c.weight, k * ci, k * co, rng);
}

fn tanh_inplace(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = x.tanh());
}

/// Multiplies an upstream gradient by `1 - tanh^2` given the activations.
fn tanh_backward(grad: &mut [f64], act: &[f64]) {
    for (g, a) in grad.iter_mut().zip(act) {
        *g *= 1.0 - a * a;
    }
}

/// Builds an equalizer with Glorot-uniform weights, zero biases and unit
/// LSTM forget-gate bias, drawn from `init_seed`.
pub fn build_model(arch: EqArch, init_seed: u64) -> Result<EqModel> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
    let net = match arch.kind {
        ArchKind::Bilstm => {
            let h = arch.n_hidden;
            let mut lstm = BiLstm::new(arch.in_channels, h);
            for dir in &mut lstm.dirs {
                glorot(&mut dir.w, arch.in_channels, 4 * h, &mut rng);
                glorot(&mut dir.u, h, 4 * h, &mut rng);
                dir.b.data[h..2 * h].iter_mut().for_each(|v| *v = 1.0);
            }
            let mut out = Conv1d::new(2 * h, arch.out_filters, arch.out_kernel, Padding::Valid);
            glorot_conv(&mut out, &mut rng);
            Net::Bilstm { lstm, out }
        }
        ArchKind::DeepCnn => {
            let [f1, f2] = arch.hidden_filters;
            let k = arch.hidden_kernel;
            let mut hidden =
                [Conv1d::new(arch.in_channels, f1, k, Padding::Same), Conv1d::new(f1, f2, k, Padding::Same)];
            for c in &mut hidden {
                glorot_conv(c, &mut rng);
            }
            let mut out = Conv1d::new(f2, arch.out_filters, arch.out_kernel, Padding::Valid);
            glorot_conv(&mut out, &mut rng);
            Net::DeepCnn { hidden, out }
        }
    };
    Ok(EqModel { arch, net })
}

impl EqModel {
    pub fn arch(&self) -> &EqArch {
        &self.arch
    }

    /// Parameter tensors in a fixed order (also the weight-file order).
    pub fn params(&self) -> Vec<&Tensor> {
        match &self.net {
            Net::Bilstm { lstm, out } => {
                let mut v: Vec<&Tensor> = lstm.dirs.iter().flat_map(|d| [&d.w, &d.u, &d.b]).collect();
                v.extend([&out.weight, &out.bias]);
                v
            }
            Net::DeepCnn { hidden, out } => hidden
                .iter()
                .chain(std::iter::once(out))
                .flat_map(|c| [&c.weight, &c.bias])
                .collect(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match &mut self.net {
            Net::Bilstm { lstm, out } => {
                let mut v: Vec<&mut Tensor> =
                    lstm.dirs.iter_mut().flat_map(|d| [&mut d.w, &mut d.u, &mut d.b]).collect();
                v.extend([&mut out.weight, &mut out.bias]);
                v
            }
            Net::DeepCnn { hidden, out } => hidden
                .iter_mut()
                .chain(std::iter::once(out))
                .flat_map(|c| [&mut c.weight, &mut c.bias])
                .collect(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Tensor::zero_grad);
    }

    /// Inference on `[batch, n_in, in_channels]`, returning `[batch, n_out, out_filters]`.
    pub fn forward(&self, input: &[f64], batch: usize) -> Result<Vec<f64>> {
        Ok(self.forward_train(input, batch)?.0)
    }

    pub fn forward_train(&self, input: &[f64], batch: usize) -> Result<(Vec<f64>, ForwardCache)> {
        let t = self.arch.n_in_symbols;
        if input.len() != batch * t * self.arch.in_channels {
            return Err(NnError::Shape(format!(
                "model input has {} values, expected {batch}x{t}x{}",
                input.len(),
                self.arch.in_channels
            )));
        }
        match &self.net {
            Net::Bilstm { lstm, out } => {
                let (h, lc) = lstm.forward(input, batch, t)?;
                let (y, oc) = out.forward(&h, batch, t)?;
                Ok((y, ForwardCache { batch, layers: CacheLayers::Bilstm { lstm: lc, out: oc } }))
            }
            Net::DeepCnn { hidden, out } => {
                let (mut a1, c1) = hidden[0].forward(input, batch, t)?;
                tanh_inplace(&mut a1);
                let (mut a2, c2) = hidden[1].forward(&a1, batch, t)?;
                tanh_inplace(&mut a2);
                let (y, oc) = out.forward(&a2, batch, t)?;
                Ok((y, ForwardCache { batch, layers: CacheLayers::DeepCnn { c1, a1, c2, a2, out: oc } }))
            }
        }
    }

    /// Accumulates parameter gradients for the upstream output gradient.
    pub fn backward(&mut self, cache: &ForwardCache, d_out: &[f64]) -> Result<()> {
        let expect = cache.batch * self.arch.n_out_symbols * self.arch.out_filters;
        if d_out.len() != expect {
            return Err(NnError::Shape(format!("output gradient has {} values, expected {expect}", d_out.len())));
        }
        match (&mut self.net, &cache.layers) {
            (Net::Bilstm { lstm, out }, CacheLayers::Bilstm { lstm: lc, out: oc }) => {
                let dh = out.backward(oc, d_out, true).expect("input gradient requested");
                lstm.backward(lc, &dh, false);
            }
            (Net::DeepCnn { hidden, out }, CacheLayers::DeepCnn { c1, a1, c2, a2, out: oc }) => {
                let mut d2 = out.backward(oc, d_out, true).expect("input gradient requested");
                tanh_backward(&mut d2, a2);
                let mut d1 = hidden[1].backward(c2, &d2, true).expect("input gradient requested");
                tanh_backward(&mut d1, a1);
                hidden[0].backward(c1, &d1, false);
            }
            _ => return Err(NnError::Shape("cache from a different architecture".into())),
        }
        Ok(())
    }

    /// Rebuilds a model of `arch` around the given parameter values,
    /// which must match `params()` in order and shape.
    pub fn from_params(arch: EqArch, values: Vec<Tensor>) -> Result<Self> {
        let mut model = build_model(arch, 0)?;
        let slots = model.params_mut();
        if slots.len() != values.len() {
            return Err(NnError::Shape(format!("{} tensors for {} parameters", values.len(), slots.len())));
        }
        for (slot, v) in slots.into_iter().zip(values) {
            if slot.shape() != v.shape() {
                return Err(NnError::Shape(format!("tensor shape {:?} where {:?} expected", v.shape(), slot.shape())));
            }
            slot.data = v.data;
        }
        model.zero_grad();
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_counts_match_closed_forms() {
        let b = build_model(EqArch::bilstm(), 1).unwrap();
        assert_eq!(b.num_params(), 2 * (4 * 35 * (4 + 35 + 1)) + (2 * 21 * 70 + 2));
        assert_eq!(b.num_params(), 14_142);
        let c = build_model(EqArch::deep_cnn(), 1).unwrap();
        assert_eq!(c.num_params(), (35 * 21 * 4 + 35) + (35 * 21 * 35 + 35) + (2 * 21 * 35 + 2));
        assert_eq!(c.num_params(), 30_207);
    }

    #[test]
    fn seeding() {
        let a = build_model(EqArch::bilstm(), 9).unwrap();
        assert_eq!(a, build_model(EqArch::bilstm(), 9).unwrap());
        assert_ne!(a, build_model(EqArch::bilstm(), 10).unwrap());
    }

    #[test]
    fn output_shape_is_61_by_2() {
        for arch in [EqArch::bilstm(), EqArch::deep_cnn()] {
            let m = build_model(arch, 3).unwrap();
            let x: Vec<f64> = (0..2 * 81 * 4).map(|i| (i as f64 * 0.13).cos()).collect();
            let y = m.forward(&x, 2).unwrap();
            assert_eq!(y.len(), 2 * 61 * 2);
            assert!(y.iter().all(|v| v.is_finite()));
            assert!(m.forward(&x[..80 * 4], 1).is_err());
        }
    }

    #[test]
    fn inconsistent_geometry_is_rejected() {
        let bad = EqArch { n_out_symbols: 60, ..EqArch::bilstm() };
        assert!(build_model(bad, 0).is_err());
        let bad = EqArch { out_kernel: 100, ..EqArch::deep_cnn() };
        assert!(build_model(bad, 0).is_err());
    }
}
