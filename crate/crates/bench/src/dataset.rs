//! Simulated datasets: symbol frames, link propagation, receiver DSP,
//! transceiver-noise calibration, and their on-disk form.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use coheq_core::fiberlink::{propagate_link, LinkConfig};
use coheq_core::modem::{demap_16qam_hard, q_factor_db_saturating, SymbolFrame};
use coheq_core::rxdsp::{
    calibrate_transceiver_noise, optimize_dbp_xi, score, ReceiverChain, TrxNoise,
};
use coheq_core::sigkit::{dbm_to_watts, pulse_shape, read_ceqw, write_ceqw, DualPolWaveform, RrcFilter, Sps};
use coheq_core::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{power_key, FrameKind, RunConfig};
use crate::{BenchError, Result};

pub type Soft = [Vec<Complex64>; 2];

#[derive(Debug, Clone, PartialEq)]
pub struct Frames {
    pub pool: SymbolFrame,
    pub val: SymbolFrame,
    pub test: SymbolFrame,
}

impl Frames {
    pub fn generate(cfg: &RunConfig) -> Self {
        let make = |k| SymbolFrame::generate(cfg.frame_seed(k), cfg.frame_len(k));
        Self { pool: make(FrameKind::Pool), val: make(FrameKind::Val), test: make(FrameKind::Test) }
    }

    pub fn get(&self, kind: FrameKind) -> &SymbolFrame {
        match kind {
            FrameKind::Pool => &self.pool,
            FrameKind::Val => &self.val,
            FrameKind::Test => &self.test,
        }
    }
}

/// DBP soft symbols at one power with the nonlinear scaling chosen on the
/// validation frame.
#[derive(Debug, Clone, PartialEq)]
pub struct DbpData {
    pub xi: f64,
    pub val: Soft,
    pub test: Soft,
}

/// Noise-loaded receiver outputs at one launch power.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerData {
    pub power_dbm: f64,
    pub cdc_pool: Soft,
    pub cdc_val: Soft,
    pub cdc_test: Soft,
    pub dbp: Option<DbpData>,
}

impl PowerData {
    pub fn cdc(&self, kind: FrameKind) -> &Soft {
        match kind {
            FrameKind::Pool => &self.cdc_pool,
            FrameKind::Val => &self.cdc_val,
            FrameKind::Test => &self.cdc_test,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub frames: Frames,
    /// Transceiver noise variance per complex symbol and polarization.
    pub sigma2: f64,
    /// CDC Q reached on the calibration realization, if noise was calibrated.
    pub calibration_q_db: Option<f64>,
    /// Sorted by launch power; includes the calibration power.
    pub powers: Vec<PowerData>,
}

impl Dataset {
    pub fn at(&self, power_dbm: f64) -> Option<&PowerData> {
        self.powers.iter().find(|p| power_key(p.power_dbm) == power_key(power_dbm))
    }
}

/// Noise-free receiver outputs plus the link-output fields DBP needs.
struct RawPower {
    power_dbm: f64,
    clean: [Soft; 3],
    val_field: Option<DualPolWaveform>,
    test_field: Option<DualPolWaveform>,
}

pub fn receiver_chain(cfg: &RunConfig) -> Result<ReceiverChain> {
    let rx = &cfg.receiver;
    let tx = &cfg.transmitter;
    let rrc = RrcFilter::new(tx.rolloff, tx.rrc_span_symbols, rx.rx_sps)?;
    Ok(ReceiverChain::new(cfg.link.clone(), rrc, rx.cdc_taps, rx.dbp, tx.symbol_rate)?)
}

/// Transmits `frame` at `power_dbm` over the configured link and returns the field at the receiver.
pub fn link_output(cfg: &RunConfig, frame: &SymbolFrame, kind: FrameKind, power_dbm: f64) -> Result<DualPolWaveform> {
    let tx = &cfg.transmitter;
    let rrc = RrcFilter::new(tx.rolloff, tx.rrc_span_symbols, tx.sim_sps)?;
    let wave = pulse_shape(frame.symbols(), &rrc, tx.symbol_rate, dbm_to_watts(power_dbm))?;
    let link = LinkConfig { launch_power_dbm: power_dbm, noise_seed: cfg.ase_seed(kind, power_dbm), ..cfg.link.clone() };
    Ok(propagate_link(&wave, &link)?)
}

fn simulate_power(cfg: &RunConfig, frames: &Frames, chain: &ReceiverChain, power_dbm: f64) -> Result<RawPower> {
    let keep = cfg.equalizers.contains(&coheq_core::modem::EqualizerId::Dbp);
    let mut clean: Vec<Soft> = Vec::with_capacity(3);
    let mut fields = Vec::new();
    for kind in FrameKind::ALL {
        let frame = frames.get(kind);
        let field = link_output(cfg, frame, kind, power_dbm)?;
        clean.push(chain.cdc_soft(&field, frame)?);
        if keep && kind != FrameKind::Pool {
            fields.push(field);
        }
    }
    let mut fields = fields.into_iter();
    let clean: [Soft; 3] = clean.try_into().expect("three frames");
    Ok(RawPower { power_dbm, clean, val_field: fields.next(), test_field: fields.next() })
}

fn trx(cfg: &RunConfig, kind: FrameKind, power_dbm: f64, sigma2: f64) -> TrxNoise {
    TrxNoise { sigma2, seed: cfg.trx_seed(kind, power_dbm) }
}

fn q_of(soft: &Soft, frame: &SymbolFrame) -> Result<f64> {
    Ok(q_factor_db_saturating(score(soft, frame)?.0))
}

fn finish_power(cfg: &RunConfig, frames: &Frames, chain: &ReceiverChain, raw: RawPower, sigma2: f64) -> Result<PowerData> {
    let p = raw.power_dbm;
    let [pool, val, test] = raw.clean;
    let noisy = |kind, soft: &Soft| trx(cfg, kind, p, sigma2).apply(soft);
    let dbp = match (raw.val_field, raw.test_field) {
        (Some(vf), Some(tf)) => {
            let noise = trx(cfg, FrameKind::Val, p, sigma2);
            let xi = optimize_dbp_xi(&vf, &frames.val, chain, &cfg.receiver.xi_grid, &noise)?;
            Some(DbpData {
                xi,
                val: noise.apply(&chain.dbp_soft(&vf, &frames.val, xi)?)?,
                test: noisy(FrameKind::Test, &chain.dbp_soft(&tf, &frames.test, xi)?)?,
            })
        }
        _ => None,
    };
    Ok(PowerData {
        power_dbm: p,
        cdc_pool: noisy(FrameKind::Pool, &pool)?,
        cdc_val: noisy(FrameKind::Val, &val)?,
        cdc_test: noisy(FrameKind::Test, &test)?,
        dbp,
    })
}

/// Simulates every sweep power (and the calibration power), calibrates the
/// transceiver noise on the validation frame at the calibration power, and
/// applies it everywhere.
pub fn generate_dataset(cfg: &RunConfig) -> Result<Dataset> {
    cfg.validate()?;
    let frames = Frames::generate(cfg);
    let chain = receiver_chain(cfg)?;
    let raw: Vec<RawPower> = cfg
        .simulated_powers()
        .into_par_iter()
        .map(|p| simulate_power(cfg, &frames, &chain, p))
        .collect::<Result<_>>()?;
    let (sigma2, calibration_q_db) = match &cfg.receiver.calibration {
        Some(cal) => {
            let cal_raw = raw
                .iter()
                .find(|r| power_key(r.power_dbm) == power_key(cal.power_dbm))
                .expect("calibration power is simulated");
            let cal_soft = &cal_raw.clean[1];
            let q_at = |s2: f64| q_of(&trx(cfg, FrameKind::Val, cal.power_dbm, s2).apply(cal_soft)?, &frames.val);
            let sigma2 = calibrate_transceiver_noise(cal.target_q_db, cal.tolerance_db, |s2| q_at(s2).map_err(to_core))?;
            (sigma2, Some(q_at(sigma2)?))
        }
        None => (0.0, None),
    };
    let powers = raw
        .into_par_iter()
        .map(|r| finish_power(cfg, &frames, &chain, r, sigma2))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { frames, sigma2, calibration_q_db, powers })
}

fn to_core(e: BenchError) -> coheq_core::Error {
    match e {
        BenchError::Core(c) => c,
        other => coheq_core::Error::InvalidArgument(other.to_string()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PowerMeta {
    power_dbm: f64,
    xi: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetMeta {
    sigma2: f64,
    calibration_q_db: Option<f64>,
    symbol_rate: f64,
    frame_seeds: [u32; 3],
    powers: Vec<PowerMeta>,
}

fn power_dir(dir: &Path, power_dbm: f64) -> PathBuf {
    dir.join(format!("p{:+05}", power_key(power_dbm)))
}

fn save_soft(path: &Path, soft: &Soft, symbol_rate: f64) -> Result<()> {
    let wave = DualPolWaveform::new(soft[0].clone(), soft[1].clone(), symbol_rate, Sps::from_integer(1))?;
    let mut w = BufWriter::new(File::create(path)?);
    write_ceqw(&wave, &mut w)?;
    std::io::Write::flush(&mut w)?;
    Ok(())
}

fn load_soft(path: &Path) -> Result<Soft> {
    let wave = read_ceqw(BufReader::new(File::open(path)?))?;
    Ok([wave.x, wave.y])
}

impl Dataset {
    /// Writes CEQW files per frame and power plus a JSON index.
    pub fn save(&self, dir: &Path, symbol_rate: f64) -> Result<()> {
        fs::create_dir_all(dir)?;
        for kind in FrameKind::ALL {
            let f = self.frames.get(kind);
            save_soft(&dir.join(format!("tx_{}.ceqw", kind.name())), &[f.tx_x.clone(), f.tx_y.clone()], symbol_rate)?;
        }
        for p in &self.powers {
            let pd = power_dir(dir, p.power_dbm);
            fs::create_dir_all(&pd)?;
            for kind in FrameKind::ALL {
                save_soft(&pd.join(format!("cdc_{}.ceqw", kind.name())), p.cdc(kind), symbol_rate)?;
            }
            if let Some(d) = &p.dbp {
                save_soft(&pd.join("dbp_val.ceqw"), &d.val, symbol_rate)?;
                save_soft(&pd.join("dbp_test.ceqw"), &d.test, symbol_rate)?;
            }
        }
        let meta = DatasetMeta {
            sigma2: self.sigma2,
            calibration_q_db: self.calibration_q_db,
            symbol_rate,
            frame_seeds: FrameKind::ALL.map(|k| self.frames.get(k).seed),
            powers: self.powers.iter().map(|p| PowerMeta { power_dbm: p.power_dbm, xi: p.dbp.as_ref().map(|d| d.xi) }).collect(),
        };
        fs::write(dir.join("dataset.json"), serde_json::to_string_pretty(&meta)? + "\n")?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: DatasetMeta = serde_json::from_str(&fs::read_to_string(dir.join("dataset.json"))?)?;
        let mut frames = Vec::new();
        for (kind, seed) in FrameKind::ALL.into_iter().zip(meta.frame_seeds) {
            let [x, y] = load_soft(&dir.join(format!("tx_{}.ceqw", kind.name())))?;
            frames.push(frame_from_symbols(seed, x, y));
        }
        let [pool, val, test]: [SymbolFrame; 3] = frames.try_into().expect("three frames");
        let mut powers = Vec::new();
        for pm in &meta.powers {
            let pd = power_dir(dir, pm.power_dbm);
            let dbp = match pm.xi {
                Some(xi) => Some(DbpData { xi, val: load_soft(&pd.join("dbp_val.ceqw"))?, test: load_soft(&pd.join("dbp_test.ceqw"))? }),
                None => None,
            };
            powers.push(PowerData {
                power_dbm: pm.power_dbm,
                cdc_pool: load_soft(&pd.join("cdc_pool.ceqw"))?,
                cdc_val: load_soft(&pd.join("cdc_val.ceqw"))?,
                cdc_test: load_soft(&pd.join("cdc_test.ceqw"))?,
                dbp,
            });
        }
        Ok(Self { frames: Frames { pool, val, test }, sigma2: meta.sigma2, calibration_q_db: meta.calibration_q_db, powers })
    }
}

/// Rebuilds a frame from stored constellation points; hard decisions on
/// exact points recover the source bits.
pub fn frame_from_symbols(seed: u32, tx_x: Vec<Complex64>, tx_y: Vec<Complex64>) -> SymbolFrame {
    let bits_x = demap_16qam_hard(&tx_x);
    let bits_y = demap_16qam_hard(&tx_y);
    SymbolFrame { n_symbols: tx_x.len(), bits_x, bits_y, tx_x, tx_y, seed }
}
