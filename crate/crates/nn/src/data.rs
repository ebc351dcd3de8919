//! Windowing of soft-symbol streams and stream-level inference.

use coheq_core::Complex64;

use crate::model::{EqArch, EqModel};
use crate::{NnError, Result};

/// Input/target pairs: inputs `[n, n_in, 4]`, targets `[n, n_out, 2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Windows {
    pub n: usize,
    pub n_in: usize,
    pub n_out: usize,
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
}

impl Windows {
    pub fn input(&self, i: usize) -> &[f64] {
        let w = self.n_in * 4;
        &self.inputs[i * w..(i + 1) * w]
    }

    pub fn target(&self, i: usize) -> &[f64] {
        let w = self.n_out * 2;
        &self.targets[i * w..(i + 1) * w]
    }
}

pub fn window_starts(len: usize, arch: &EqArch) -> Vec<usize> {
    if len < arch.n_in_symbols {
        return Vec::new();
    }
    (0..=(len - arch.n_in_symbols) / arch.n_out_symbols).map(|k| k * arch.n_out_symbols).collect()
}

fn check_stream(rx: [&[Complex64]; 2], arch: &EqArch) -> Result<()> {
    if rx[0].len() != rx[1].len() {
        return Err(NnError::Shape(format!("polarizations have {} and {} symbols", rx[0].len(), rx[1].len())));
    }
    if rx[0].len() < arch.n_in_symbols {
        return Err(NnError::TooShort { len: rx[0].len(), need: arch.n_in_symbols });
    }
    if arch.in_channels != 4 {
        return Err(NnError::Arch(format!("{} input channels, dual-pol windows need 4", arch.in_channels)));
    }
    Ok(())
}

fn push_inputs(dst: &mut Vec<f64>, rx: [&[Complex64]; 2], start: usize, n: usize) {
    for (x, y) in rx[0][start..start + n].iter().zip(&rx[1][start..start + n]) {
        dst.extend([x.re, x.im, y.re, y.im]);
    }
}

/// Stride-`n_out` windows over `rx` with targets taken from `tx`, the
/// transmitted symbols of the polarization being recovered.
pub fn make_windows(rx: [&[Complex64]; 2], tx: &[Complex64], arch: &EqArch) -> Result<Windows> {
    check_stream(rx, arch)?;
    if tx.len() != rx[0].len() {
        return Err(NnError::Shape(format!("{} targets for {} received symbols", tx.len(), rx[0].len())));
    }
    let starts = window_starts(rx[0].len(), arch);
    let margin = arch.margin();
    let mut inputs = Vec::with_capacity(starts.len() * arch.n_in_symbols * 4);
    let mut targets = Vec::with_capacity(starts.len() * arch.n_out_symbols * 2);
    for &s in &starts {
        push_inputs(&mut inputs, rx, s, arch.n_in_symbols);
        for sym in &tx[s + margin..s + margin + arch.n_out_symbols] {
            targets.extend([sym.re, sym.im]);
        }
    }
    Ok(Windows { n: starts.len(), n_in: arch.n_in_symbols, n_out: arch.n_out_symbols, inputs, targets })
}

/// Windows per inference call.
const CHUNK: usize = 128;

/// Runs the model over `rx` with stride `n_out`. Symbols no window reaches
/// keep the soft value of the first polarization.
pub fn equalize(model: &EqModel, rx: [&[Complex64]; 2]) -> Result<Vec<Complex64>> {
    let arch = *model.arch();
    check_stream(rx, &arch)?;
    let starts = window_starts(rx[0].len(), &arch);
    let margin = arch.margin();
    let mut out = rx[0].to_vec();
    let mut inputs = Vec::with_capacity(CHUNK * arch.n_in_symbols * 4);
    for group in starts.chunks(CHUNK) {
        inputs.clear();
        for &s in group {
            push_inputs(&mut inputs, rx, s, arch.n_in_symbols);
        }
        let y = model.forward(&inputs, group.len())?;
        for (w, &s) in group.iter().enumerate() {
            for j in 0..arch.n_out_symbols {
                let k = (w * arch.n_out_symbols + j) * 2;
                out[s + margin + j] = Complex64::new(y[k], y[k + 1]);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_model;

    fn ramp(n: usize, scale: f64) -> Vec<Complex64> {
        (1..=n).map(|i| Complex64::new(i as f64 * scale, -(i as f64))).collect()
    }

    #[test]
    fn window_arithmetic() {
        let arch = EqArch::bilstm();
        assert_eq!(window_starts(81, &arch), [0]);
        assert_eq!(window_starts(203, &arch), [0, 61, 122]);
        assert_eq!(window_starts(80, &arch), Vec::<usize>::new());
        let (x, y) = (ramp(203, 1.0), ramp(203, 2.0));
        let tx = ramp(203, 3.0);
        let w = make_windows([&x, &y], &tx, &arch).unwrap();
        assert_eq!(w.n, 3);
        for k in 0..3 {
            let t = w.target(k);
            for j in 0..61 {
                assert_eq!(t[2 * j], tx[61 * k + 10 + j].re);
                assert_eq!(t[2 * j + 1], tx[61 * k + 10 + j].im);
            }
            let inp = w.input(k);
            assert_eq!(&inp[..4], &[x[61 * k].re, x[61 * k].im, y[61 * k].re, y[61 * k].im]);
        }
    }

    #[test]
    fn too_short_streams_fail() {
        let arch = EqArch::bilstm();
        let x = ramp(80, 1.0);
        assert!(make_windows([&x, &x], &x, &arch).is_err());
        let m = build_model(arch, 0).unwrap();
        assert!(equalize(&m, [&x, &x]).is_err());
    }

    #[test]
    fn equalize_covers_interior_and_passes_margins() {
        let arch = EqArch::deep_cnn();
        let mut m = build_model(arch, 5).unwrap();
        // zero output layer: every reachable symbol becomes exactly zero
        let n = m.params_mut().len();
        for p in m.params_mut().into_iter().skip(n - 2) {
            p.data.iter_mut().for_each(|v| *v = 0.0);
        }
        let x = ramp(81 + 61, 0.5);
        let y = ramp(81 + 61, 0.25);
        let out = equalize(&m, [&x, &y]).unwrap();
        assert_eq!(out.len(), 142);
        let zeros = out.iter().filter(|c| c.norm() == 0.0).count();
        assert_eq!(zeros, 122);
        assert!(out[10..132].iter().all(|c| c.norm() == 0.0));
        assert_eq!(&out[..10], &x[..10]);
        assert_eq!(&out[132..], &x[132..]);
        assert_eq!(out, equalize(&m, [&x, &y]).unwrap());
    }
}
