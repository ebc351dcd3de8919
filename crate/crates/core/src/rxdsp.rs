//! Receiver DSP: time-domain dispersion compensation, digital
//! backpropagation, least-squares normalization and transceiver noise.

use num_complex::Complex64;
use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fft;
use crate::fiberlink::{split_step, LinkConfig, Section, MANAKOV_FACTOR};
use crate::modem::{self, SymbolFrame};
use crate::rng::{self, Stream};
use crate::sigkit::{matched_filter_downsample, resample_rational, DualPolWaveform, RrcFilter, Sps};

/// Centered complex FIR inverting the accumulated link dispersion.
#[derive(Debug, Clone, PartialEq)]
pub struct CdcFilter {
    pub taps: Vec<Complex64>,
    pub design_sample_rate: f64,
    /// Accumulated dispersion being inverted, ps/nm.
    pub total_dispersion: f64,
}

impl CdcFilter {
    /// Frequency response on an `n`-point grid spanning the design rate.
    pub fn frequency_response(&self, n: usize) -> Vec<Complex64> {
        let c = self.taps.len() / 2;
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for (k, &t) in self.taps.iter().enumerate() {
            let idx = (k as isize - c as isize).rem_euclid(n as isize) as usize;
            buf[idx] += t;
        }
        fft::forward(&mut buf);
        buf
    }

    /// Dumps the taps as a single-polarization CEQW waveform (Y is zero).
    pub fn to_waveform(&self, symbol_rate: f64, sps: Sps) -> Result<DualPolWaveform> {
        DualPolWaveform::new(
            self.taps.clone(),
            vec![Complex64::new(0.0, 0.0); self.taps.len()],
            symbol_rate,
            sps,
        )
    }
}

/// Designs the CDC filter: the all-pass `exp(-i beta2/2 w^2 L)` sampled on a
/// grid of at least eight times the tap count, inverse transformed, centered
/// and cut to `n_taps` with raised-cosine edges.
pub fn cdc_design(cfg: &LinkConfig, sample_rate: f64, n_taps: usize) -> Result<CdcFilter> {
    if n_taps < 3 {
        return invalid(format!("CDC needs at least 3 taps, got {n_taps}"));
    }
    let grid = (8 * n_taps).next_power_of_two();
    if n_taps > grid {
        return invalid("tap count exceeds design grid");
    }
    let beta2 = cfg.beta2();
    let length = cfg.total_length_km();
    let omega = fft::angular_frequencies(grid, sample_rate);
    let mut h: Vec<Complex64> = omega
        .iter()
        .map(|w| Complex64::new(0.0, -0.5 * beta2 * w * w * length).exp())
        .collect();
    fft::inverse(&mut h);

    let center = n_taps / 2;
    let edge = (n_taps / 10).max(1);
    let taps = (0..n_taps)
        .map(|j| {
            let lag = (j as isize - center as isize).rem_euclid(grid as isize) as usize;
            let from_edge = j.min(n_taps - 1 - j);
            let w = if from_edge < edge {
                0.5 * (1.0 - (std::f64::consts::PI * (from_edge as f64 + 0.5) / edge as f64).cos())
            } else {
                1.0
            };
            h[lag] * w
        })
        .collect();
    Ok(CdcFilter {
        taps,
        design_sample_rate: sample_rate,
        total_dispersion: cfg.dispersion_d * length,
    })
}

/// Linear convolution with centered taps (`c = len / 2` is lag zero):
/// `y[n] = sum_k taps[k] x[n - k + c]`, with x zero outside the frame.
/// Computed by overlap-save.
pub fn fir_overlap_save(x: &[Complex64], taps: &[Complex64]) -> Vec<Complex64> {
    let n = x.len();
    let l = taps.len();
    let c = l / 2;
    let fft_len = (4 * l).max(256).next_power_of_two();
    let hop = fft_len - (l - 1);
    let mut h = vec![Complex64::new(0.0, 0.0); fft_len];
    h[..l].copy_from_slice(taps);
    fft::forward(&mut h);

    // z[m] = sum_k taps[k] x[m - k]; we need z[c .. c + n]
    let needed = n + c;
    let mut padded = vec![Complex64::new(0.0, 0.0); l - 1];
    padded.extend_from_slice(x);
    let blocks = needed.div_ceil(hop);
    padded.resize(blocks * hop + fft_len, Complex64::new(0.0, 0.0));

    let mut z = Vec::with_capacity(blocks * hop);
    let mut buf = vec![Complex64::new(0.0, 0.0); fft_len];
    for b in 0..blocks {
        buf.copy_from_slice(&padded[b * hop..b * hop + fft_len]);
        fft::forward(&mut buf);
        buf.iter_mut().zip(&h).for_each(|(v, k)| *v *= k);
        fft::inverse(&mut buf);
        z.extend_from_slice(&buf[l - 1..]);
    }
    z[c..c + n].to_vec()
}

/// Direct-form reference for [`fir_overlap_save`].
pub fn fir_direct(x: &[Complex64], taps: &[Complex64]) -> Vec<Complex64> {
    let n = x.len() as isize;
    let c = (taps.len() / 2) as isize;
    (0..n)
        .map(|i| {
            taps.iter()
                .enumerate()
                .filter_map(|(k, &t)| {
                    let j = i - k as isize + c;
                    (0..n).contains(&j).then(|| t * x[j as usize])
                })
                .sum()
        })
        .collect()
}

/// Applies the FIR to both polarizations, zero delay for centered taps.
pub fn apply_fir(wave: &DualPolWaveform, taps: &[Complex64]) -> Result<DualPolWaveform> {
    if taps.is_empty() {
        return invalid("empty FIR");
    }
    Ok(wave.with_samples(fir_overlap_save(&wave.x, taps), fir_overlap_save(&wave.y, taps)))
}

/// As [`apply_fir`] but treating the frame as one period of a cyclic
/// signal, so no samples at the frame edges are lost.
pub fn apply_fir_periodic(wave: &DualPolWaveform, taps: &[Complex64]) -> Result<DualPolWaveform> {
    if taps.is_empty() {
        return invalid("empty FIR");
    }
    let n = wave.len();
    let c = taps.len() / 2;
    let pre = taps.len() - 1 - c;
    let run = |x: &[Complex64]| {
        let ext: Vec<Complex64> = (0..n + pre + c)
            .map(|j| x[(j as isize - pre as isize).rem_euclid(n as isize) as usize])
            .collect();
        fir_overlap_save(&ext, taps)[pre..pre + n].to_vec()
    };
    Ok(wave.with_samples(run(&wave.x), run(&wave.y)))
}

/// Ideal frequency-domain dispersion compensation of the whole link.
pub fn cdc_frequency_domain(wave: &DualPolWaveform, cfg: &LinkConfig) -> DualPolWaveform {
    let omega = fft::angular_frequencies(wave.len(), wave.sample_rate());
    let phase = -0.5 * cfg.beta2() * cfg.total_length_km();
    let mut out = wave.clone();
    for pol in out.pols_mut() {
        fft::forward(pol);
        pol.iter_mut()
            .zip(&omega)
            .for_each(|(v, w)| *v *= Complex64::new(0.0, phase * w * w).exp());
        fft::inverse(pol);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DbpConfig {
    pub steps_per_span: usize,
    #[serde(with = "ratio_serde")]
    pub sa_per_symbol: Sps,
    /// Scaling of the back-propagated nonlinearity.
    pub xi: f64,
}

impl Default for DbpConfig {
    fn default() -> Self {
        Self { steps_per_span: 1, sa_per_symbol: Ratio::new(23, 10), xi: 1.0 }
    }
}

mod ratio_serde {
    use num_rational::Ratio;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(r: &Ratio<u32>, s: S) -> Result<S::Ok, S::Error> {
        [*r.numer(), *r.denom()].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Ratio<u32>, D::Error> {
        let [n, den] = <[u32; 2]>::deserialize(d)?;
        if n == 0 || den == 0 {
            return Err(serde::de::Error::custom("ratio terms must be positive"));
        }
        Ok(Ratio::new(n, den))
    }
}

/// Back-propagates span by span in reverse: the amplifier gain is removed,
/// then the fiber is traversed with negated loss, dispersion and
/// (xi-scaled) nonlinearity.
pub fn dbp(wave: &DualPolWaveform, cfg: &LinkConfig, dbp_cfg: &DbpConfig) -> Result<DualPolWaveform> {
    cfg.validate()?;
    if dbp_cfg.steps_per_span == 0 {
        return invalid("DBP needs at least one step per span");
    }
    if wave.sps() != dbp_cfg.sa_per_symbol {
        return invalid(format!(
            "DBP configured for {} samples/symbol but waveform has {}",
            dbp_cfg.sa_per_symbol,
            wave.sps()
        ));
    }
    let undo_gain = 10f64.powf(-cfg.span_loss_db() / 20.0);
    let section = Section {
        length_km: cfg.span_km,
        steps: dbp_cfg.steps_per_span,
        alpha: -cfg.alpha_per_km(),
        beta2: -cfg.beta2(),
        gamma: -dbp_cfg.xi * MANAKOV_FACTOR * cfg.gamma,
    };
    let mut field = wave.clone();
    for _ in 0..cfg.n_spans {
        for pol in field.pols_mut() {
            pol.iter_mut().for_each(|v| *v *= undo_gain);
        }
        split_step(&mut field, section);
    }
    field.check_finite("dbp output")?;
    Ok(field)
}

/// One-tap least-squares fit of `rx` onto `tx`.
pub fn normalize_to_reference(rx: &[Complex64], tx: &[Complex64]) -> Result<Vec<Complex64>> {
    if rx.len() != tx.len() {
        return Err(Error::LengthMismatch { left: rx.len(), right: tx.len() });
    }
    if rx.is_empty() {
        return invalid("cannot normalize an empty sequence");
    }
    let energy: f64 = rx.iter().map(|v| v.norm_sqr()).sum();
    if energy == 0.0 {
        return invalid("received sequence is all zero");
    }
    let corr: Complex64 = rx.iter().zip(tx).map(|(r, t)| r.conj() * t).sum();
    let a = corr / energy;
    Ok(rx.iter().map(|v| v * a).collect())
}

/// Adds circular complex Gaussian noise of variance `sigma2` per symbol.
/// The stream is consumed in symbol order, so for a given stream the noise
/// scales as `sqrt(sigma2)` times a fixed unit-variance realization.
pub fn add_transceiver_noise(symbols: &[Complex64], sigma2: f64, stream: &mut Stream) -> Result<Vec<Complex64>> {
    if !(sigma2 >= 0.0 && sigma2.is_finite()) {
        return invalid(format!("noise variance {sigma2} must be non-negative"));
    }
    let s = sigma2.sqrt();
    Ok(symbols.iter().map(|v| v + rng::complex_gaussian(stream, 1.0) * s).collect())
}

/// Seed and variance of the receiver-side noise loading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrxNoise {
    pub sigma2: f64,
    pub seed: u64,
}

impl TrxNoise {
    pub fn apply(&self, soft: &[Vec<Complex64>; 2]) -> Result<[Vec<Complex64>; 2]> {
        let mut stream = rng::substream(self.seed, 0);
        let x = add_transceiver_noise(&soft[0], self.sigma2, &mut stream)?;
        let y = add_transceiver_noise(&soft[1], self.sigma2, &mut stream)?;
        Ok([x, y])
    }
}

/// Receiver processing from the link-output field to normalized soft
/// symbols at one sample per symbol: resample, CDC or DBP, matched filter,
/// downsample, normalize.
#[derive(Debug, Clone)]
pub struct ReceiverChain {
    pub link: LinkConfig,
    pub rrc: RrcFilter,
    pub cdc: CdcFilter,
    pub dbp: DbpConfig,
}

impl ReceiverChain {
    pub fn new(link: LinkConfig, rrc: RrcFilter, cdc_taps: usize, dbp: DbpConfig, symbol_rate: f64) -> Result<Self> {
        let rate = symbol_rate * rrc.sps as f64;
        let cdc = cdc_design(&link, rate, cdc_taps)?;
        Ok(Self { link, rrc, cdc, dbp })
    }

    fn rx_sps(&self) -> Sps {
        Sps::from_integer(self.rrc.sps as u32)
    }

    pub fn cdc_soft(&self, wave: &DualPolWaveform, frame: &SymbolFrame) -> Result<[Vec<Complex64>; 2]> {
        let at_rx = resample_to(wave, self.rx_sps())?;
        let compensated = apply_fir_periodic(&at_rx, &self.cdc.taps)?;
        self.finish(&compensated, frame)
    }

    pub fn dbp_soft(&self, wave: &DualPolWaveform, frame: &SymbolFrame, xi: f64) -> Result<[Vec<Complex64>; 2]> {
        let cfg = DbpConfig { xi, ..self.dbp };
        let at_dbp = resample_to(wave, cfg.sa_per_symbol)?;
        let back = dbp(&at_dbp, &self.link, &cfg)?;
        let at_rx = resample_to(&back, self.rx_sps())?;
        self.finish(&at_rx, frame)
    }

    fn finish(&self, wave: &DualPolWaveform, frame: &SymbolFrame) -> Result<[Vec<Complex64>; 2]> {
        let [x, y] = matched_filter_downsample(wave, &self.rrc, 0)?;
        Ok([normalize_to_reference(&x, &frame.tx_x)?, normalize_to_reference(&y, &frame.tx_y)?])
    }
}

/// Resamples by whatever exact ratio takes `wave` to `target` samples/symbol.
pub fn resample_to(wave: &DualPolWaveform, target: Sps) -> Result<DualPolWaveform> {
    let factor = target / wave.sps();
    resample_rational(wave, *factor.numer(), *factor.denom())
}

/// (BER averaged over polarizations, EVM) of soft symbols.
pub fn score(soft: &[Vec<Complex64>; 2], frame: &SymbolFrame) -> Result<(f64, f64)> {
    let view = [soft[0].as_slice(), soft[1].as_slice()];
    Ok((modem::dual_pol_ber(view, frame)?, modem::dual_pol_evm(view, frame)?))
}

/// Grid search of the DBP nonlinear scaling. Candidates are ranked by Q
/// (after noise loading), then by lower EVM, then by smaller xi.
pub fn optimize_dbp_xi(
    validation_wave: &DualPolWaveform,
    frame: &SymbolFrame,
    chain: &ReceiverChain,
    grid: &[f64],
    noise: &TrxNoise,
) -> Result<f64> {
    if grid.is_empty() {
        return invalid("empty xi grid");
    }
    let mut best: Option<(f64, f64, f64)> = None;
    for &xi in grid {
        let soft = noise.apply(&chain.dbp_soft(validation_wave, frame, xi)?)?;
        let (b, e) = score(&soft, frame)?;
        let q = modem::q_factor_db_saturating(b);
        let better = match best {
            None => true,
            Some((bq, be, bxi)) => {
                q > bq || (q == bq && (e < be || (e == be && xi < bxi)))
            }
        };
        if better {
            best = Some((q, e, xi));
        }
    }
    Ok(best.expect("grid non-empty").2)
}

/// Finds the transceiver noise variance that brings the pipeline's Q to
/// `target_q_db` within `tolerance_db`. `pipeline` maps a variance to a Q
/// in dB and must be non-increasing in it.
pub fn calibrate_transceiver_noise<F>(target_q_db: f64, tolerance_db: f64, mut pipeline: F) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let q0 = pipeline(0.0)?;
    if (q0 - target_q_db).abs() <= tolerance_db {
        return Ok(0.0);
    }
    if q0 < target_q_db {
        return Err(Error::NotBracketed(format!(
            "noiseless Q {q0:.3} dB is already below the {target_q_db:.3} dB target"
        )));
    }
    let mut lo = 0.0;
    let mut hi = 1e-3;
    let mut q_hi = pipeline(hi)?;
    let mut guard = 0;
    while q_hi > target_q_db {
        lo = hi;
        hi *= 2.0;
        q_hi = pipeline(hi)?;
        guard += 1;
        if guard > 60 {
            return Err(Error::NotBracketed("Q never fell below target".into()));
        }
    }
    if (q_hi - target_q_db).abs() <= tolerance_db {
        return Ok(hi);
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        let q = pipeline(mid)?;
        if (q - target_q_db).abs() <= tolerance_db {
            return Ok(mid);
        }
        if q > target_q_db {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::NotBracketed(format!("bisection did not reach {target_q_db:.3} dB")))
}
