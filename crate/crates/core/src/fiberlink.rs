//! Manakov split-step propagation over an amplified multi-span link.
//!
//! Units inside the propagator: time in ps, distance in km, power in W,
//! angular frequency in rad/ps.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::fft;
use crate::rng::{self, Stream};
use crate::sigkit::DualPolWaveform;

pub const SPEED_OF_LIGHT: f64 = 2.997_924_58e8;
pub const PLANCK: f64 = 6.626_070_15e-34;
/// Polarization-averaged nonlinearity factor of the Manakov equation.
pub const MANAKOV_FACTOR: f64 = 8.0 / 9.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkConfig {
    pub alpha_db_km: f64,
    /// ps/(nm km)
    pub dispersion_d: f64,
    /// 1/(W km)
    pub gamma: f64,
    pub span_km: f64,
    pub n_spans: usize,
    pub nf_db: f64,
    pub wavelength_nm: f64,
    pub steps_per_span_sim: usize,
    pub launch_power_dbm: f64,
    pub noise_seed: u64,
    /// Switches amplifier ASE on or off.
    #[serde(default = "default_true")]
    pub ase_noise: bool,
}

fn default_true() -> bool {
    true
}

impl Default for LinkConfig {
    /// 17 x 70 km LEAF with 4.5 dB noise-figure amplifiers at 1550 nm.
    fn default() -> Self {
        Self {
            alpha_db_km: 0.225,
            dispersion_d: 4.2,
            gamma: 2.0,
            span_km: 70.0,
            n_spans: 17,
            nf_db: 4.5,
            wavelength_nm: 1550.0,
            steps_per_span_sim: 50,
            launch_power_dbm: 0.0,
            noise_seed: 1,
            ase_noise: true,
        }
    }
}

impl LinkConfig {
    /// Attenuation and nonlinearity may be zero (linear or lossless test
    /// links); dispersion may take either sign.
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha_db_km", self.alpha_db_km), ("gamma", self.gamma)] {
            if !(v.is_finite() && v >= 0.0) {
                return invalid(format!("{name} must be non-negative, got {v}"));
            }
        }
        for (name, v) in [("span_km", self.span_km), ("wavelength_nm", self.wavelength_nm)] {
            if !(v.is_finite() && v > 0.0) {
                return invalid(format!("{name} must be positive, got {v}"));
            }
        }
        if ![self.dispersion_d, self.launch_power_dbm, self.nf_db].iter().all(|v| v.is_finite()) {
            return invalid("dispersion, noise figure and launch power must be finite");
        }
        if self.n_spans == 0 || self.steps_per_span_sim == 0 {
            return invalid("n_spans and steps_per_span_sim must be at least 1");
        }
        Ok(())
    }

    pub fn beta2(&self) -> f64 {
        beta2_from_d(self.dispersion_d, self.wavelength_nm)
    }

    /// Power attenuation coefficient in 1/km.
    pub fn alpha_per_km(&self) -> f64 {
        self.alpha_db_km * std::f64::consts::LN_10 / 10.0
    }

    pub fn span_loss_db(&self) -> f64 {
        self.alpha_db_km * self.span_km
    }

    pub fn total_length_km(&self) -> f64 {
        self.span_km * self.n_spans as f64
    }

    pub fn carrier_hz(&self) -> f64 {
        SPEED_OF_LIGHT / (self.wavelength_nm * 1e-9)
    }
}

/// Group-velocity dispersion in ps^2/km from D in ps/(nm km).
pub fn beta2_from_d(d: f64, wavelength_nm: f64) -> f64 {
    let c_nm_per_ps = SPEED_OF_LIGHT * 1e9 * 1e-12;
    -d * wavelength_nm * wavelength_nm / (2.0 * std::f64::consts::PI * c_nm_per_ps)
}

/// Fiber section parameters with signs already applied; back-propagation
/// reuses the same integrator with negated values.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Section {
    pub length_km: f64,
    pub steps: usize,
    pub alpha: f64,
    pub beta2: f64,
    /// Nonlinear coefficient including the Manakov factor.
    pub gamma: f64,
}

/// Nonlinear interaction length referred to the mid-step power:
/// `L_eff(h) * exp(alpha h / 2)` with `L_eff = (1 - exp(-alpha h)) / alpha`.
fn nonlinear_length(alpha: f64, h: f64) -> f64 {
    if (alpha * h).abs() < 1e-12 {
        h
    } else {
        (1.0 - (-alpha * h).exp()) / alpha * (0.5 * alpha * h).exp()
    }
}

fn linear_operator(omega: &[f64], beta2: f64, alpha: f64, dz: f64) -> Vec<Complex64> {
    omega
        .iter()
        .map(|w| Complex64::new(-0.5 * alpha * dz, 0.5 * beta2 * w * w * dz).exp())
        .collect()
}

/// Symmetric split-step integration of the Manakov equation over one section.
pub(crate) fn split_step(wave: &mut DualPolWaveform, section: Section) {
    let n = wave.len();
    let omega = fft::angular_frequencies(n, wave.sample_rate());
    let Section { length_km, steps, alpha, beta2, gamma } = section;

    if gamma == 0.0 {
        let op = linear_operator(&omega, beta2, alpha, length_km);
        for pol in wave.pols_mut() {
            fft::forward(pol);
            pol.iter_mut().zip(&op).for_each(|(v, h)| *v *= h);
            fft::inverse(pol);
        }
        return;
    }

    let h = length_km / steps as f64;
    let half = linear_operator(&omega, beta2, alpha, 0.5 * h);
    let full: Vec<Complex64> = half.iter().map(|v| v * v).collect();
    let nl_len = nonlinear_length(alpha, h);

    for pol in wave.pols_mut() {
        fft::forward(pol);
        pol.iter_mut().zip(&half).for_each(|(v, k)| *v *= k);
    }
    for step in 0..steps {
        for pol in wave.pols_mut() {
            fft::inverse(pol);
        }
        let (x, y) = (&mut wave.x, &mut wave.y);
        for (a, b) in x.iter_mut().zip(y.iter_mut()) {
            let phi = gamma * (a.norm_sqr() + b.norm_sqr()) * nl_len;
            let rot = Complex64::new(0.0, phi).exp();
            *a *= rot;
            *b *= rot;
        }
        let op = if step + 1 == steps { &half } else { &full };
        for pol in wave.pols_mut() {
            fft::forward(pol);
            pol.iter_mut().zip(op).for_each(|(v, k)| *v *= k);
        }
    }
    for pol in wave.pols_mut() {
        fft::inverse(pol);
    }
}

/// Propagates one fiber span (no amplification).
pub fn ssfm_span(wave: &DualPolWaveform, cfg: &LinkConfig) -> Result<DualPolWaveform> {
    cfg.validate()?;
    wave.check_finite("ssfm_span input")?;
    let mut out = wave.clone();
    split_step(
        &mut out,
        Section {
            length_km: cfg.span_km,
            steps: cfg.steps_per_span_sim,
            alpha: cfg.alpha_per_km(),
            beta2: cfg.beta2(),
            gamma: MANAKOV_FACTOR * cfg.gamma,
        },
    );
    out.check_finite("ssfm_span output")?;
    Ok(out)
}

/// Variance per complex sample of the ASE added in each polarization.
pub fn ase_variance_per_pol(gain_db: f64, nf_db: f64, carrier_hz: f64, sample_rate: f64) -> f64 {
    let g = 10f64.powf(gain_db / 10.0);
    let nf = 10f64.powf(nf_db / 10.0);
    (g - 1.0) * PLANCK * carrier_hz * nf / 2.0 * sample_rate
}

/// Amplifies by `gain_db` and adds circular Gaussian ASE to each polarization.
/// Passing `None` for the stream amplifies noiselessly.
pub fn edfa(
    wave: &DualPolWaveform,
    gain_db: f64,
    nf_db: f64,
    carrier_hz: f64,
    rng_stream: Option<&mut Stream>,
) -> Result<DualPolWaveform> {
    if gain_db.is_nan() || gain_db < 0.0 {
        return invalid(format!("EDFA gain {gain_db} dB must be non-negative"));
    }
    let amp = 10f64.powf(gain_db / 20.0);
    let mut out = wave.clone();
    for pol in out.pols_mut() {
        pol.iter_mut().for_each(|v| *v *= amp);
    }
    if let Some(rng) = rng_stream {
        let var = ase_variance_per_pol(gain_db, nf_db, carrier_hz, wave.sample_rate());
        if var > 0.0 {
            for pol in out.pols_mut() {
                pol.iter_mut().for_each(|v| *v += rng::complex_gaussian(rng, var));
            }
        }
    }
    Ok(out)
}

/// Full link: every span is fiber followed by an amplifier that restores the
/// span loss. Span `s` draws its ASE from substream `s` of `cfg.noise_seed`.
pub fn propagate_link(wave: &DualPolWaveform, cfg: &LinkConfig) -> Result<DualPolWaveform> {
    cfg.validate()?;
    let mut field = wave.clone();
    for span in 0..cfg.n_spans {
        field = ssfm_span(&field, cfg)?;
        let mut stream = cfg.ase_noise.then(|| rng::substream(cfg.noise_seed, span as u64));
        field = edfa(&field, cfg.span_loss_db(), cfg.nf_db, cfg.carrier_hz(), stream.as_mut())?;
    }
    Ok(field)
}
