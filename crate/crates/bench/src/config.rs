//! Run configuration (JSON, unknown keys rejected) and its validation.

use std::path::{Path, PathBuf};

use coheq_core::complexity::{ComplexityInputs, HardwareFigures};
use coheq_core::fiberlink::LinkConfig;
use coheq_core::modem::EqualizerId;
use coheq_core::rng::derive_seed;
use coheq_core::rxdsp::DbpConfig;
use coheq_nn::model::ArchKind;
use coheq_nn::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::{BenchError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransmitterConfig {
    pub symbol_rate: f64,
    /// Simulation oversampling (integer samples per symbol).
    pub sim_sps: usize,
    pub rolloff: f64,
    pub rrc_span_symbols: usize,
}

impl Default for TransmitterConfig {
    fn default() -> Self {
        Self { symbol_rate: 34e9, sim_sps: 4, rolloff: 0.1, rrc_span_symbols: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationConfig {
    pub power_dbm: f64,
    pub target_q_db: f64,
    pub tolerance_db: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self { power_dbm: -1.0, target_q_db: 3.91, tolerance_db: 0.005 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReceiverConfig {
    pub cdc_taps: usize,
    /// Matched-filter and CDC rate (integer samples per symbol).
    pub rx_sps: usize,
    pub dbp: DbpConfig,
    pub xi_grid: Vec<f64>,
    /// `null` disables transceiver noise altogether.
    #[serde(default = "default_calibration")]
    pub calibration: Option<CalibrationConfig>,
}

fn default_calibration() -> Option<CalibrationConfig> {
    Some(CalibrationConfig::default())
}

impl Default for ReceiverConfig {
    fn default() -> Self {
        Self {
            cdc_taps: 556,
            rx_sps: 2,
            dbp: DbpConfig::default(),
            xi_grid: (0..=15).map(|i| i as f64 * 0.1).collect(),
            calibration: default_calibration(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    /// Source bits of the training, validation and test frames.
    pub data: u64,
    /// Amplifier and transceiver noise.
    pub noise: u64,
    /// Network weight initialization.
    pub init: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self { data: 2024, noise: 77, init: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub link: LinkConfig,
    pub sweep_powers: Vec<f64>,
    pub equalizers: Vec<EqualizerId>,
    pub train: TrainConfig,
    pub transfer_epochs: usize,
    pub val_symbols: usize,
    pub test_symbols: usize,
    pub seeds: Seeds,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub transmitter: TransmitterConfig,
    #[serde(default)]
    pub receiver: ReceiverConfig,
    #[serde(default = "HardwareFigures::reference_designs")]
    pub hardware: Vec<HardwareFigures>,
}

/// The three symbol frames of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FrameKind {
    Pool,
    Val,
    Test,
}

impl FrameKind {
    pub const ALL: [FrameKind; 3] = [FrameKind::Pool, FrameKind::Val, FrameKind::Test];

    pub fn name(self) -> &'static str {
        match self {
            FrameKind::Pool => "pool",
            FrameKind::Val => "val",
            FrameKind::Test => "test",
        }
    }

    fn label(self) -> u64 {
        self as u64 + 1
    }
}

/// Launch power as an integer key (hundredths of a dBm) for seeding and file names.
pub fn power_key(power_dbm: f64) -> i64 {
    (power_dbm * 100.0).round() as i64
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| BenchError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BenchError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(BenchError::Config(m));
        self.link.validate()?;
        if self.sweep_powers.is_empty() {
            return bad("sweep_powers is empty".into());
        }
        let mut keys: Vec<i64> = self.sweep_powers.iter().map(|&p| power_key(p)).collect();
        if self.sweep_powers.iter().any(|p| !p.is_finite()) {
            return bad("non-finite sweep power".into());
        }
        keys.sort_unstable();
        keys.dedup();
        if keys.len() != self.sweep_powers.len() {
            return bad("duplicate sweep powers".into());
        }
        if self.equalizers.is_empty() {
            return bad("no equalizers selected".into());
        }
        let tx = &self.transmitter;
        if tx.sim_sps < 2 || tx.symbol_rate.is_nan() || tx.symbol_rate <= 0.0 || tx.rrc_span_symbols == 0 {
            return bad("transmitter needs sim_sps >= 2, positive symbol rate and RRC span".into());
        }
        let rx = &self.receiver;
        if rx.rx_sps < 2 || rx.rx_sps > tx.sim_sps || rx.cdc_taps < 3 || rx.xi_grid.is_empty() {
            return bad("receiver needs 2 <= rx_sps <= sim_sps, cdc_taps >= 3 and a xi grid".into());
        }
        let dbp_den = *rx.dbp.sa_per_symbol.denom() as usize;
        for (name, n) in [("pool", self.train.pool_size), ("val", self.val_symbols), ("test", self.test_symbols)] {
            if n < 81 {
                return bad(format!("{name} frame of {n} symbols is shorter than one window"));
            }
            if name != "pool" && n % dbp_den != 0 {
                return bad(format!("{name} frame length {n} must be a multiple of {dbp_den} for DBP resampling"));
            }
        }
        if self.transfer_epochs > coheq_nn::train::MAX_TRANSFER_EPOCHS {
            return bad(format!("transfer_epochs {} exceeds 5", self.transfer_epochs));
        }
        for kind in self.nn_archs() {
            let arch = coheq_nn::EqArch::of_kind(kind);
            self.train
                .validate(arch.n_in_symbols, arch.n_out_symbols)
                .map_err(|e| BenchError::Config(e.to_string()))?;
        }
        let seeds: Vec<u32> = FrameKind::ALL.iter().map(|&k| self.frame_seed(k)).collect();
        if seeds[0] == seeds[1] || seeds[0] == seeds[2] || seeds[1] == seeds[2] {
            return bad("frame seeds collide; pick another data seed".into());
        }
        Ok(())
    }

    /// Neural architectures requested by `equalizers`, in a fixed order.
    pub fn nn_archs(&self) -> Vec<ArchKind> {
        let mut out = Vec::new();
        if self.equalizers.contains(&EqualizerId::Bilstm) {
            out.push(ArchKind::Bilstm);
        }
        if self.equalizers.contains(&EqualizerId::Cnn) {
            out.push(ArchKind::DeepCnn);
        }
        out
    }

    pub fn max_power(&self) -> f64 {
        self.sweep_powers.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn frame_len(&self, kind: FrameKind) -> usize {
        match kind {
            FrameKind::Pool => self.train.pool_size,
            FrameKind::Val => self.val_symbols,
            FrameKind::Test => self.test_symbols,
        }
    }

    /// MT19937 seed of each frame's source bits.
    pub fn frame_seed(&self, kind: FrameKind) -> u32 {
        derive_seed(self.seeds.data, kind.label()) as u32
    }

    pub fn ase_seed(&self, kind: FrameKind, power_dbm: f64) -> u64 {
        derive_seed(derive_seed(self.seeds.noise, kind.label()), power_key(power_dbm) as u64)
    }

    pub fn trx_seed(&self, kind: FrameKind, power_dbm: f64) -> u64 {
        derive_seed(derive_seed(self.seeds.noise, 100 + kind.label()), power_key(power_dbm) as u64)
    }

    pub fn complexity_inputs(&self) -> ComplexityInputs {
        ComplexityInputs {
            cdc_taps: self.receiver.cdc_taps,
            cdc_sps: self.receiver.rx_sps as f64,
            ..ComplexityInputs::default()
        }
    }

    /// Powers that must be simulated: the sweep plus the calibration point.
    pub fn simulated_powers(&self) -> Vec<f64> {
        let mut p = self.sweep_powers.clone();
        if let Some(cal) = &self.receiver.calibration {
            if !p.iter().any(|&q| power_key(q) == power_key(cal.power_dbm)) {
                p.push(cal.power_dbm);
            }
        }
        p.sort_by(f64::total_cmp);
        p
    }
}

pub const DESK_PRESET: &str = include_str!("../presets/desk_sim.json");
pub const PAPER_PRESET: &str = include_str!("../presets/paper_sim.json");
