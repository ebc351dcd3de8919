//! Signal containers, root-raised-cosine shaping, rational resampling and the
//! CEQW1 waveform file format.
//!
//! Simulated frames are periodic: pulse shaping, matched filtering and the
//! split-step propagator all treat a waveform as one period of a cyclic
//! signal. That keeps every stage delay-free and lets FFT-based operations
//! run without guard intervals.

use std::f64::consts::PI;
use std::io::{Read, Write};

use num_complex::Complex64;
use num_rational::Ratio;

use crate::error::{invalid, Error, Result};
use crate::fft;

/// Samples per symbol, kept as an exact ratio.
pub type Sps = Ratio<u32>;

/// Oversampled dual-polarization baseband field, samples in sqrt(W).
#[derive(Debug, Clone, PartialEq)]
pub struct DualPolWaveform {
    pub x: Vec<Complex64>,
    pub y: Vec<Complex64>,
    symbol_rate: f64,
    sps: Sps,
}

impl DualPolWaveform {
    pub fn new(x: Vec<Complex64>, y: Vec<Complex64>, symbol_rate: f64, sps: Sps) -> Result<Self> {
        if x.is_empty() || x.len() != y.len() {
            return Err(Error::LengthMismatch { left: x.len(), right: y.len() });
        }
        if !(symbol_rate.is_finite() && symbol_rate > 0.0) || *sps.numer() == 0 {
            return invalid("symbol rate and samples per symbol must be positive");
        }
        let wave = Self { x, y, symbol_rate, sps };
        wave.check_finite("DualPolWaveform::new")?;
        Ok(wave)
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn symbol_rate(&self) -> f64 {
        self.symbol_rate
    }

    pub fn sps(&self) -> Sps {
        self.sps
    }

    pub fn sample_rate(&self) -> f64 {
        self.symbol_rate * *self.sps.numer() as f64 / *self.sps.denom() as f64
    }

    /// Mean of |x|^2 + |y|^2 per sample.
    pub fn mean_power(&self) -> f64 {
        let total: f64 = self.x.iter().chain(&self.y).map(|s| s.norm_sqr()).sum();
        total / self.len() as f64
    }

    pub fn check_finite(&self, stage: &'static str) -> Result<()> {
        let finite = self.x.iter().chain(&self.y).all(|s| s.re.is_finite() && s.im.is_finite());
        if finite {
            Ok(())
        } else {
            Err(Error::NonFinite(stage))
        }
    }

    pub(crate) fn with_samples(&self, x: Vec<Complex64>, y: Vec<Complex64>) -> Self {
        Self { x, y, symbol_rate: self.symbol_rate, sps: self.sps }
    }

    pub fn pols(&self) -> [&[Complex64]; 2] {
        [&self.x, &self.y]
    }

    pub fn pols_mut(&mut self) -> [&mut Vec<Complex64>; 2] {
        [&mut self.x, &mut self.y]
    }

    pub fn swapped(&self) -> Self {
        self.with_samples(self.y.clone(), self.x.clone())
    }
}

pub fn dbm_to_watts(p_dbm: f64) -> f64 {
    1e-3 * 10f64.powf(p_dbm / 10.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RrcFilter {
    pub rolloff: f64,
    pub span_symbols: usize,
    pub sps: usize,
    pub taps: Vec<f64>,
}

impl RrcFilter {
    pub fn new(rolloff: f64, span_symbols: usize, sps: usize) -> Result<Self> {
        let taps = rrc_taps(rolloff, span_symbols, sps)?;
        Ok(Self { rolloff, span_symbols, sps, taps })
    }

    fn center(&self) -> usize {
        self.taps.len() / 2
    }
}

/// Root-raised-cosine impulse response at `t` symbol periods (unit symbol
/// period, unnormalized).
pub(crate) fn rrc_value(rolloff: f64, t: f64) -> f64 {
    let b = rolloff;
    if t == 0.0 {
        return 1.0 - b + 4.0 * b / PI;
    }
    let singular = 1.0 / (4.0 * b);
    if (t.abs() - singular).abs() < 1e-9 {
        let arg = PI / (4.0 * b);
        return b / 2f64.sqrt() * ((1.0 + 2.0 / PI) * arg.sin() + (1.0 - 2.0 / PI) * arg.cos());
    }
    let num = (PI * t * (1.0 - b)).sin() + 4.0 * b * t * (PI * t * (1.0 + b)).cos();
    let den = PI * t * (1.0 - (4.0 * b * t).powi(2));
    num / den
}

/// Energy-normalized RRC taps, `span_symbols * sps + 1` long and centered.
pub fn rrc_taps(rolloff: f64, span_symbols: usize, sps: usize) -> Result<Vec<f64>> {
    if !(rolloff > 0.0 && rolloff <= 1.0) {
        return invalid(format!("rolloff {rolloff} outside (0, 1]"));
    }
    if span_symbols == 0 || !span_symbols.is_multiple_of(2) {
        return invalid(format!("span_symbols {span_symbols} must be even and positive"));
    }
    if sps == 0 {
        return invalid("sps must be at least 1");
    }
    let n = span_symbols * sps + 1;
    let center = (n / 2) as isize;
    let mut taps: Vec<f64> = (0..n)
        .map(|i| rrc_value(rolloff, (i as isize - center) as f64 / sps as f64))
        .collect();
    // fold the tiny asymmetry left by floating point into exact symmetry
    for i in 0..n / 2 {
        let avg = 0.5 * (taps[i] + taps[n - 1 - i]);
        taps[i] = avg;
        taps[n - 1 - i] = avg;
    }
    let energy: f64 = taps.iter().map(|t| t * t).sum();
    let norm = energy.sqrt();
    taps.iter_mut().for_each(|t| *t /= norm);
    Ok(taps)
}

/// Cyclic convolution of `signal` with centered real taps (zero delay).
fn cyclic_filter(signal: &[Complex64], taps: &[f64], center: usize) -> Vec<Complex64> {
    let n = signal.len();
    let mut out = vec![Complex64::new(0.0, 0.0); n];
    for (k, &h) in taps.iter().enumerate() {
        if h == 0.0 {
            continue;
        }
        // out[i] += h * s[i - k + center]
        let shift = (center as isize - k as isize).rem_euclid(n as isize) as usize;
        for (i, o) in out.iter_mut().enumerate() {
            let j = i + shift;
            let j = if j >= n { j - n } else { j };
            *o += signal[j] * h;
        }
    }
    out
}

/// Zero-stuffs each polarization by `filter.sps`, shapes with the RRC filter
/// and scales so that the mean of |x|^2 + |y|^2 equals `target_power` (W).
pub fn pulse_shape(
    symbols: [&[Complex64]; 2],
    filter: &RrcFilter,
    symbol_rate: f64,
    target_power: f64,
) -> Result<DualPolWaveform> {
    let [sx, sy] = symbols;
    if sx.is_empty() || sy.is_empty() {
        return invalid("empty symbol frame");
    }
    if sx.len() != sy.len() {
        return Err(Error::LengthMismatch { left: sx.len(), right: sy.len() });
    }
    if filter.sps < 2 {
        return invalid("pulse shaping needs at least 2 samples per symbol");
    }
    let sps = filter.sps;
    let upsample = |s: &[Complex64]| {
        let mut up = vec![Complex64::new(0.0, 0.0); s.len() * sps];
        for (i, &v) in s.iter().enumerate() {
            up[i * sps] = v;
        }
        cyclic_filter(&up, &filter.taps, filter.center())
    };
    let mut x = upsample(sx);
    let mut y = upsample(sy);
    let n = x.len() as f64;
    let power: f64 = x.iter().chain(&y).map(|s| s.norm_sqr()).sum::<f64>() / n;
    if power > 0.0 {
        let scale = (target_power / power).sqrt();
        x.iter_mut().chain(y.iter_mut()).for_each(|s| *s *= scale);
    }
    DualPolWaveform::new(x, y, symbol_rate, Sps::from_integer(sps as u32))
}

/// RRC matched filter followed by decimation at `phase_offset + k * sps`.
pub fn matched_filter_downsample(
    wave: &DualPolWaveform,
    filter: &RrcFilter,
    phase_offset: usize,
) -> Result<[Vec<Complex64>; 2]> {
    if !wave.sps().is_integer() || *wave.sps().numer() as usize != filter.sps {
        return invalid(format!(
            "waveform at {} samples/symbol does not match filter at {}",
            wave.sps(),
            filter.sps
        ));
    }
    if phase_offset >= filter.sps {
        return invalid("phase offset must lie within one symbol");
    }
    let sps = filter.sps;
    let n_sym = wave.len() / sps;
    let run = |s: &[Complex64]| {
        let filtered = cyclic_filter(s, &filter.taps, filter.center());
        (0..n_sym).map(|k| filtered[phase_offset + k * sps]).collect::<Vec<_>>()
    };
    Ok([run(&wave.x), run(&wave.y)])
}

/// Band-limited rational resampling by `p/q` through spectral zero-padding or
/// truncation of a whole-frame DFT. The frame length times `p` must be a
/// multiple of `q`.
pub fn resample_rational(wave: &DualPolWaveform, p: u32, q: u32) -> Result<DualPolWaveform> {
    if p == 0 || q == 0 {
        return invalid("resampling factors must be positive");
    }
    if num_integer_gcd(p, q) != 1 {
        return invalid(format!("resampling factors {p}/{q} are not coprime"));
    }
    let n = wave.len();
    let scaled = n as u64 * p as u64;
    if !scaled.is_multiple_of(q as u64) {
        return invalid(format!("frame of {n} samples cannot be resampled by {p}/{q} exactly"));
    }
    let m = (scaled / q as u64) as usize;
    if m == 0 {
        return invalid("resampled frame would be empty");
    }
    let sps = wave.sps() * Ratio::new(p, q);
    if p == q {
        return Ok(wave.clone());
    }
    let x = resample_spectrum(&wave.x, m);
    let y = resample_spectrum(&wave.y, m);
    DualPolWaveform::new(x, y, wave.symbol_rate(), sps)
}

fn num_integer_gcd(mut a: u32, mut b: u32) -> u32 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn resample_spectrum(signal: &[Complex64], m: usize) -> Vec<Complex64> {
    let n = signal.len();
    let mut spec = signal.to_vec();
    fft::forward(&mut spec);
    let mut out = vec![Complex64::new(0.0, 0.0); m];
    let k = n.min(m);
    let half = (k - 1) / 2;
    out[..=half].copy_from_slice(&spec[..=half]);
    for i in 1..=half {
        out[m - i] = spec[n - i];
    }
    if k.is_multiple_of(2) {
        let nyq = k / 2;
        if m > n {
            // split the source Nyquist bin between both signed frequencies
            out[nyq] = spec[nyq] * 0.5;
            out[m - nyq] = spec[nyq] * 0.5;
        } else {
            out[nyq] = spec[nyq] + spec[n - nyq];
        }
    }
    let scale = m as f64 / n as f64;
    out.iter_mut().for_each(|v| *v *= scale);
    fft::inverse(&mut out);
    out
}

const CEQW_MAGIC: &[u8; 4] = b"CEQW";
const CEQW_VERSION: u32 = 1;

/// Writes a waveform in the CEQW1 layout (little-endian throughout).
pub fn write_ceqw<W: Write>(wave: &DualPolWaveform, mut w: W) -> Result<()> {
    w.write_all(CEQW_MAGIC)?;
    w.write_all(&CEQW_VERSION.to_le_bytes())?;
    w.write_all(&(wave.len() as u64).to_le_bytes())?;
    w.write_all(&wave.symbol_rate().to_le_bytes())?;
    w.write_all(&wave.sps().numer().to_le_bytes())?;
    w.write_all(&wave.sps().denom().to_le_bytes())?;
    let mut buf = Vec::with_capacity(wave.len() * 32);
    for (a, b) in wave.x.iter().zip(&wave.y) {
        for v in [a.re, a.im, b.re, b.im] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_ceqw<R: Read>(mut r: R) -> Result<DualPolWaveform> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CEQW_MAGIC {
        return Err(Error::Format("bad CEQW magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != CEQW_VERSION {
        return Err(Error::Format(format!("unsupported CEQW version {version}")));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let n = u64::from_le_bytes(b8) as usize;
    r.read_exact(&mut b8)?;
    let symbol_rate = f64::from_le_bytes(b8);
    let num = read_u32(&mut r)?;
    let den = read_u32(&mut r)?;
    if den == 0 {
        return Err(Error::Format("zero sps denominator".into()));
    }
    let mut raw = vec![0u8; n * 32];
    r.read_exact(&mut raw)?;
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for chunk in raw.chunks_exact(32) {
        let f = |i: usize| f64::from_le_bytes(chunk[i * 8..i * 8 + 8].try_into().unwrap());
        x.push(Complex64::new(f(0), f(1)));
        y.push(Complex64::new(f(2), f(3)));
    }
    DualPolWaveform::new(x, y, symbol_rate, Ratio::new_raw(num, den))
        .map_err(|e| Error::Format(e.to_string()))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modem::{evm, map_16qam, mt19937_bits};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn dbm_conversion() {
        assert_eq!(dbm_to_watts(0.0), 1e-3);
        assert!((dbm_to_watts(3.0) - 1.9953e-3).abs() < 1e-7);
        assert!((dbm_to_watts(-1.0) - 7.9433e-4).abs() < 1e-8);
    }

    #[test]
    fn rrc_rejects_bad_arguments() {
        assert!(rrc_taps(0.0, 32, 2).is_err());
        assert!(rrc_taps(1.1, 32, 2).is_err());
        assert!(rrc_taps(0.1, 31, 2).is_err());
        assert!(rrc_taps(0.1, 32, 0).is_err());
    }

    #[test]
    fn rrc_symmetric_and_unit_energy() {
        let taps = rrc_taps(0.1, 32, 2).unwrap();
        assert_eq!(taps.len(), 65);
        for i in 0..taps.len() {
            assert!((taps[i] - taps[taps.len() - 1 - i]).abs() < 1e-12);
        }
        let e: f64 = taps.iter().map(|t| t * t).sum();
        assert!((e - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rrc_singular_points_are_continuous() {
        // rolloff 0.25 puts t = 1 exactly on the removable singularity
        let b = 0.25;
        let at = rrc_value(b, 1.0);
        let near = 0.5 * (rrc_value(b, 1.0 - 1e-6) + rrc_value(b, 1.0 + 1e-6));
        assert!((at - near).abs() < 1e-6, "{at} vs {near}");
        let near0 = rrc_value(b, 1e-7);
        assert!((rrc_value(b, 0.0) - near0).abs() < 1e-6);
    }

    #[test]
    fn impulse_response_of_pulse_shaper() {
        let filter = RrcFilter::new(0.1, 32, 4).unwrap();
        let n = 64;
        let mut s = vec![c(0.0, 0.0); n];
        s[n / 2] = c(1.0, 0.0);
        let zeros = vec![c(0.0, 0.0); n];
        let wave = pulse_shape([&s, &zeros], &filter, 34e9, 1e-3).unwrap();
        let scale = (1e-3 * (n * 4) as f64).sqrt();
        let start = n / 2 * 4 - filter.center();
        for (k, &h) in filter.taps.iter().enumerate() {
            assert!((wave.x[start + k].re - h * scale).abs() < 1e-12);
        }
        assert!(wave.y.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn zero_frame_stays_zero() {
        let filter = RrcFilter::new(0.1, 32, 2).unwrap();
        let zeros = vec![c(0.0, 0.0); 100];
        let wave = pulse_shape([&zeros, &zeros], &filter, 34e9, 1e-3).unwrap();
        assert!(wave.x.iter().chain(&wave.y).all(|v| v.norm() == 0.0));
        let rx = matched_filter_downsample(&wave, &filter, 0).unwrap();
        assert!(rx[0].iter().all(|v| v.norm() == 0.0));
        assert!(pulse_shape([&[], &[]], &filter, 34e9, 1e-3).is_err());
    }

    fn qam_frame(n: usize, seed: u32) -> [Vec<Complex64>; 2] {
        let bits = mt19937_bits(seed, 8 * n);
        [map_16qam(&bits[..4 * n]).unwrap(), map_16qam(&bits[4 * n..]).unwrap()]
    }

    #[test]
    fn shaped_power_hits_target() {
        let filter = RrcFilter::new(0.1, 32, 2).unwrap();
        let [sx, sy] = qam_frame(512, 3);
        let target = dbm_to_watts(2.0);
        let wave = pulse_shape([&sx, &sy], &filter, 34e9, target).unwrap();
        assert!((wave.mean_power() / target - 1.0).abs() < 1e-9);
    }

    #[test]
    fn loopback_recovers_symbols() {
        let filter = RrcFilter::new(0.1, 32, 2).unwrap();
        let [sx, sy] = qam_frame(2048, 11);
        let wave = pulse_shape([&sx, &sy], &filter, 34e9, 1.0).unwrap();
        let [rx, ry] = matched_filter_downsample(&wave, &filter, 0).unwrap();
        // unit mean power over 2 samples/symbol, both pols: 2 W per symbol pair
        let gain = (2.0f64 / 2.0).sqrt();
        let rx: Vec<_> = rx.iter().map(|v| v / gain).collect();
        let ry: Vec<_> = ry.iter().map(|v| v / gain).collect();
        assert!(evm(&rx, &sx).unwrap() < 0.01);
        assert!(evm(&ry, &sy).unwrap() < 0.01);
    }

    #[test]
    fn full_symbol_shift_commutes_with_decimation() {
        let filter = RrcFilter::new(0.1, 32, 2).unwrap();
        let [sx, sy] = qam_frame(256, 5);
        let wave = pulse_shape([&sx, &sy], &filter, 34e9, 1.0).unwrap();
        let mut x = wave.x.clone();
        x.rotate_right(2);
        let mut y = wave.y.clone();
        y.rotate_right(2);
        let shifted = wave.with_samples(x, y);
        let a = matched_filter_downsample(&wave, &filter, 0).unwrap();
        let b = matched_filter_downsample(&shifted, &filter, 0).unwrap();
        for k in 0..a[0].len() {
            let j = (k + 1) % a[0].len();
            assert!((a[0][k] - b[0][j]).norm() < 1e-12);
        }
    }

    #[test]
    fn resample_identity_and_errors() {
        let filter = RrcFilter::new(0.1, 32, 2).unwrap();
        let [sx, sy] = qam_frame(100, 1);
        let wave = pulse_shape([&sx, &sy], &filter, 34e9, 1.0).unwrap();
        assert_eq!(resample_rational(&wave, 1, 1).unwrap(), wave);
        assert!(resample_rational(&wave, 2, 4).is_err());
        assert!(resample_rational(&wave, 0, 1).is_err());
        // 200 samples * 23 / 7 is not an integer
        assert!(resample_rational(&wave, 23, 7).is_err());
    }

    #[test]
    fn resample_round_trip() {
        let filter = RrcFilter::new(0.1, 32, 2).unwrap();
        let [sx, sy] = qam_frame(1000, 9);
        let wave = pulse_shape([&sx, &sy], &filter, 34e9, 1.0).unwrap();
        let up = resample_rational(&wave, 23, 20).unwrap();
        assert_eq!(up.sps(), Ratio::new(23, 10));
        assert_eq!(up.len(), 2300);
        assert!((up.sample_rate() - 34e9 * 2.3).abs() < 1e-3);
        let back = resample_rational(&up, 20, 23).unwrap();
        let err = wave
            .x
            .iter()
            .zip(&back.x)
            .chain(wave.y.iter().zip(&back.y))
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(err < 1e-9, "round trip error {err}");
    }

    #[test]
    fn tone_keeps_frequency() {
        let n = 1000;
        let fs = 68e9;
        let f0 = 0.1 * fs;
        let tone: Vec<_> = (0..n)
            .map(|i| Complex64::from_polar(1.0, 2.0 * PI * f0 * i as f64 / fs))
            .collect();
        let wave = DualPolWaveform::new(tone.clone(), tone, 34e9, Sps::from_integer(2)).unwrap();
        let up = resample_rational(&wave, 23, 20).unwrap();
        let mut spec = up.x.clone();
        fft::forward(&mut spec);
        let peak = spec
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
            .unwrap()
            .0;
        let f_peak = peak as f64 * up.sample_rate() / up.len() as f64;
        assert!((f_peak - f0).abs() < 1e-6 * f0);
    }

    #[test]
    fn ceqw_round_trip() {
        let wave = DualPolWaveform::new(
            vec![c(1.0, -2.0), c(0.5, 0.25)],
            vec![c(3.0, 4.0), c(-1e-300, 7.0)],
            34e9,
            Ratio::new(23, 10),
        )
        .unwrap();
        let mut bytes = Vec::new();
        write_ceqw(&wave, &mut bytes).unwrap();
        assert_eq!(&bytes[..4], b"CEQW");
        assert_eq!(bytes.len(), 4 + 4 + 8 + 8 + 4 + 4 + 2 * 32);
        let back = read_ceqw(bytes.as_slice()).unwrap();
        assert_eq!(back, wave);
        bytes[0] = b'X';
        assert!(read_ceqw(bytes.as_slice()).is_err());
    }

    #[test]
    fn waveform_invariants_enforced() {
        assert!(DualPolWaveform::new(vec![], vec![], 1.0, Sps::from_integer(1)).is_err());
        assert!(DualPolWaveform::new(vec![c(0.0, 0.0)], vec![], 1.0, Sps::from_integer(1)).is_err());
        assert!(
            DualPolWaveform::new(vec![c(f64::NAN, 0.0)], vec![c(0.0, 0.0)], 1.0, Sps::from_integer(1))
                .is_err()
        );
    }
}
