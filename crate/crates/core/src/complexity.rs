//! Real-multiplication counts, throughput and FPGA-count arithmetic.
//!
//! Conventions: a complex multiply costs 4 real multiplications;
//! activations and `exp` are table/LUT based and not counted.

use serde::{Deserialize, Serialize};

use crate::modem::EqualizerId;

pub const TARGET_RATE_BPS: f64 = 400e9;
pub const SAFE_UTILIZATION: f64 = 0.8;

/// Time-domain CDC: per recovered symbol and polarization.
pub fn rm_cdc(n_taps: usize, sps: f64) -> f64 {
    4.0 * n_taps as f64 * sps
}

/// biLSTM layer followed by a valid output convolution, per recovered symbol.
pub fn rm_bilstm(
    n_h: usize,
    c_in: usize,
    time_steps: usize,
    out_kernel: usize,
    out_filters: usize,
    n_out: usize,
) -> f64 {
    let (h, c, t) = (n_h as f64, c_in as f64, time_steps as f64);
    let recurrent = 2.0 * t * (4.0 * h * (c + h) + 3.0 * h);
    let conv = (n_out * out_filters * out_kernel * 2 * n_h) as f64;
    (recurrent + conv) / n_out as f64
}

/// One convolutional layer: output length, output channels, kernel, input channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvLayerShape {
    pub t_out: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub c_in: usize,
}

pub fn rm_cnn(layers: &[ConvLayerShape], n_out: usize) -> f64 {
    let total: usize = layers.iter().map(|l| l.t_out * l.c_out * l.kernel * l.c_in).sum();
    total as f64 / n_out as f64
}

/// Split-step DBP: per step two FFTs at `2 log2 N` real mults per sample,
/// 4 for the dispersion phase multiply and 4 for the power/phase products.
pub fn rm_dbp(n_spans: usize, steps_per_span: usize, sps: f64, fft_size: usize) -> f64 {
    assert!(fft_size.is_power_of_two(), "fft_size must be a power of two");
    let log2n = fft_size.trailing_zeros() as f64;
    (n_spans * steps_per_span) as f64 * sps * (4.0 * log2n + 8.0)
}

/// One inference per clock cycle over `n_out_symbols` symbols.
pub fn throughput_bps(n_out_symbols: usize, bits_per_symbol: usize, clock_hz: f64) -> f64 {
    (n_out_symbols * bits_per_symbol) as f64 * clock_hz
}

/// Number of devices needed for 400 Gb/s when each may only be filled to
/// `safe_util`, rounded to nearest and at least one.
pub fn fpgas_for_400g(throughput_bps: f64, max_util_fraction: f64, safe_util: f64) -> usize {
    let devices = TARGET_RATE_BPS / throughput_bps * (max_util_fraction / safe_util);
    (devices.round() as usize).max(1)
}

/// Measured clock and peak utilization of one equalizer implementation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardwareFigures {
    pub equalizer: EqualizerId,
    pub clock_hz: f64,
    pub max_util_fraction: f64,
}

impl HardwareFigures {
    /// Post-implementation clock and DSP-slice utilization of the three
    /// VCK190 designs (biLSTM, deep CNN, CDC).
    pub fn reference_designs() -> Vec<HardwareFigures> {
        vec![
            HardwareFigures { equalizer: EqualizerId::Bilstm, clock_hz: 270e6, max_util_fraction: 0.64 },
            HardwareFigures { equalizer: EqualizerId::Cnn, clock_hz: 244e6, max_util_fraction: 0.30 },
            HardwareFigures { equalizer: EqualizerId::Cdc, clock_hz: 524e6, max_util_fraction: 0.54 },
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResourceReport {
    pub equalizer: EqualizerId,
    pub real_mults_per_symbol: f64,
    pub clock_hz: f64,
    pub throughput_bps: f64,
    pub max_util_fraction: f64,
    pub fpgas_for_400g: usize,
}

impl ResourceReport {
    pub const CSV_HEADER: &'static str =
        "equalizer,real_mults_per_symbol,clock_hz,throughput_bps,max_util_fraction,fpgas_for_400g";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.2},{:.0},{:.0},{:.2},{}",
            self.equalizer,
            self.real_mults_per_symbol,
            self.clock_hz,
            self.throughput_bps,
            self.max_util_fraction,
            self.fpgas_for_400g
        )
    }
}

/// Equalizer dimensions feeding the multiplication counts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComplexityInputs {
    pub n_in: usize,
    pub n_out: usize,
    pub in_channels: usize,
    pub n_hidden: usize,
    pub hidden_filters: [usize; 2],
    pub hidden_kernel: usize,
    pub out_kernel: usize,
    pub out_filters: usize,
    pub cdc_taps: usize,
    pub cdc_sps: f64,
    pub bits_per_symbol: usize,
}

impl Default for ComplexityInputs {
    fn default() -> Self {
        Self {
            n_in: 81,
            n_out: 61,
            in_channels: 4,
            n_hidden: 35,
            hidden_filters: [35, 35],
            hidden_kernel: 21,
            out_kernel: 21,
            out_filters: 2,
            cdc_taps: 556,
            cdc_sps: 2.0,
            bits_per_symbol: 4,
        }
    }
}

impl ComplexityInputs {
    pub fn real_mults(&self, eq: EqualizerId) -> Option<f64> {
        match eq {
            EqualizerId::Cdc => Some(rm_cdc(self.cdc_taps, self.cdc_sps)),
            EqualizerId::Bilstm => Some(rm_bilstm(
                self.n_hidden,
                self.in_channels,
                self.n_in,
                self.out_kernel,
                self.out_filters,
                self.n_out,
            )),
            EqualizerId::Cnn => {
                let [f1, f2] = self.hidden_filters;
                let layers = [
                    ConvLayerShape { t_out: self.n_in, c_out: f1, kernel: self.hidden_kernel, c_in: self.in_channels },
                    ConvLayerShape { t_out: self.n_in, c_out: f2, kernel: self.hidden_kernel, c_in: f1 },
                    ConvLayerShape { t_out: self.n_out, c_out: self.out_filters, kernel: self.out_kernel, c_in: f2 },
                ];
                Some(rm_cnn(&layers, self.n_out))
            }
            EqualizerId::Dbp => None,
        }
    }
}

pub fn resource_reports(inputs: &ComplexityInputs, hardware: &[HardwareFigures]) -> Vec<ResourceReport> {
    hardware
        .iter()
        .map(|hw| {
            let tp = throughput_bps(inputs.n_out, inputs.bits_per_symbol, hw.clock_hz);
            ResourceReport {
                equalizer: hw.equalizer,
                real_mults_per_symbol: inputs.real_mults(hw.equalizer).unwrap_or(0.0),
                clock_hz: hw.clock_hz,
                throughput_bps: tp,
                max_util_fraction: hw.max_util_fraction,
                fpgas_for_400g: fpgas_for_400g(tp, hw.max_util_fraction, SAFE_UTILIZATION),
            }
        })
        .collect()
}

pub fn resource_csv(reports: &[ResourceReport]) -> String {
    let mut out = String::from(ResourceReport::CSV_HEADER);
    out.push('\n');
    for r in reports {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}
