//! Equalizer training, transfer to other launch powers, evaluation and
//! the full launch-power sweep.

use std::fs;
use std::path::Path;

use coheq_core::modem::{reports_to_csv, EqualizerId, QReport, SymbolFrame};
use coheq_core::rng::derive_seed;
use coheq_core::rxdsp::score;
use coheq_nn::fixedpoint::{quantize_weights, read_ceqn, write_ceqn, dequantize, DEFAULT_FRACTION_BITS};
use coheq_nn::model::ArchKind;
use coheq_nn::train::{history_csv, EpochRecord};
use coheq_nn::{build_model, equalize, train, transfer_fit, EqArch, EqModel, PolDataset, TrainConfig};
use rayon::prelude::*;

use crate::config::{power_key, FrameKind, RunConfig};
use crate::dataset::{generate_dataset, Dataset, PowerData, Soft};
use crate::{BenchError, Result};

pub const POLS: [&str; 2] = ["x", "y"];

pub fn equalizer_of(kind: ArchKind) -> EqualizerId {
    match kind {
        ArchKind::Bilstm => EqualizerId::Bilstm,
        ArchKind::DeepCnn => EqualizerId::Cnn,
    }
}

/// Training data for the model recovering polarization `pol` (0 = X, 1 = Y);
/// the Y model sees the polarizations swapped.
pub fn pol_dataset(soft: &Soft, frame: &SymbolFrame, pol: usize) -> Result<PolDataset> {
    Ok(match pol {
        0 => PolDataset::new(soft.clone(), frame.tx_x.clone())?,
        _ => PolDataset::for_pol_y(soft, &frame.tx_y)?,
    })
}

/// The pair of per-polarization models of one architecture at one power.
#[derive(Debug, Clone)]
pub struct NnResult {
    pub kind: ArchKind,
    pub power_dbm: f64,
    pub models: [EqModel; 2],
    pub histories: [Vec<EpochRecord>; 2],
}

fn job_label(kind: ArchKind, pol: usize) -> u64 {
    kind.id() as u64 * 2 + pol as u64
}

fn power_data(ds: &Dataset, power_dbm: f64) -> Result<&PowerData> {
    ds.at(power_dbm).ok_or_else(|| BenchError::Missing(format!("no data at {power_dbm} dBm")))
}

fn fit_one(
    cfg: &RunConfig,
    ds: &Dataset,
    kind: ArchKind,
    pol: usize,
    power_dbm: f64,
    start: Option<&EqModel>,
) -> Result<(EqModel, Vec<EpochRecord>)> {
    let pd = power_data(ds, power_dbm)?;
    let pool = pol_dataset(&pd.cdc_pool, &ds.frames.pool, pol)?;
    let val = pol_dataset(&pd.cdc_val, &ds.frames.val, pol)?;
    let label = job_label(kind, pol);
    let out = match start {
        None => {
            let model = build_model(EqArch::of_kind(kind), derive_seed(cfg.seeds.init, label))?;
            let tc = TrainConfig { seed: derive_seed(cfg.train.seed, label), ..cfg.train.clone() };
            train(model, &pool, &val, &tc)?
        }
        Some(m) => {
            let seed = derive_seed(derive_seed(cfg.train.seed, 1000 + label), power_key(power_dbm) as u64);
            let tc = TrainConfig { seed, ..cfg.train.clone() };
            transfer_fit(m.clone(), &pool, &val, &tc, cfg.transfer_epochs)?
        }
    };
    Ok((out.model, out.history))
}

fn pair(results: Vec<(EqModel, Vec<EpochRecord>)>) -> ([EqModel; 2], [Vec<EpochRecord>; 2]) {
    let mut it = results.into_iter();
    let (mx, hx) = it.next().expect("x model");
    let (my, hy) = it.next().expect("y model");
    ([mx, my], [hx, hy])
}

/// Trains both polarization models of every requested architecture from
/// scratch at `power_dbm`.
pub fn train_models(cfg: &RunConfig, ds: &Dataset, power_dbm: f64) -> Result<Vec<NnResult>> {
    let jobs: Vec<(ArchKind, usize)> = cfg.nn_archs().into_iter().flat_map(|k| [(k, 0), (k, 1)]).collect();
    let fitted = jobs
        .par_iter()
        .map(|&(k, pol)| fit_one(cfg, ds, k, pol, power_dbm, None))
        .collect::<Result<Vec<_>>>()?;
    Ok(group(jobs, fitted, power_dbm))
}

fn group(jobs: Vec<(ArchKind, usize)>, fitted: Vec<(EqModel, Vec<EpochRecord>)>, power_dbm: f64) -> Vec<NnResult> {
    let mut out = Vec::new();
    let mut it = jobs.into_iter().zip(fitted);
    while let (Some(((kind, _), a)), Some((_, b))) = (it.next(), it.next()) {
        let (models, histories) = pair(vec![a, b]);
        out.push(NnResult { kind, power_dbm, models, histories });
    }
    out
}

/// Fine-tunes each base model pair to every other sweep power.
pub fn transfer_models(cfg: &RunConfig, ds: &Dataset, base: &[NnResult]) -> Result<Vec<NnResult>> {
    let mut jobs = Vec::new();
    for b in base {
        for &p in &cfg.sweep_powers {
            if power_key(p) != power_key(b.power_dbm) {
                jobs.push((b, p, 0usize));
                jobs.push((b, p, 1usize));
            }
        }
    }
    let fitted = jobs
        .par_iter()
        .map(|&(b, p, pol)| fit_one(cfg, ds, b.kind, pol, p, Some(&b.models[pol])))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::new();
    let mut it = jobs.iter().zip(fitted);
    while let (Some((&(b, p, _), x)), Some((_, y))) = (it.next(), it.next()) {
        let (models, histories) = pair(vec![x, y]);
        out.push(NnResult { kind: b.kind, power_dbm: p, models, histories });
    }
    Ok(out)
}

/// Recovered symbols of both polarizations.
pub fn nn_equalize(models: &[EqModel; 2], soft: &Soft) -> Result<Soft> {
    let x = equalize(&models[0], [&soft[0], &soft[1]])?;
    let y = equalize(&models[1], [&soft[1], &soft[0]])?;
    Ok([x, y])
}

fn report(eq: EqualizerId, power_dbm: f64, soft: &Soft, frame: &SymbolFrame) -> Result<QReport> {
    let (ber, evm) = score(soft, frame)?;
    Ok(QReport::new(eq, power_dbm, ber, evm, frame.n_symbols)?)
}

pub fn nn_report(ds: &Dataset, r: &NnResult) -> Result<QReport> {
    let pd = power_data(ds, r.power_dbm)?;
    report(equalizer_of(r.kind), r.power_dbm, &nn_equalize(&r.models, &pd.cdc_test)?, &ds.frames.test)
}

/// CDC and DBP reports on the test frame at every sweep power.
pub fn classical_reports(cfg: &RunConfig, ds: &Dataset) -> Result<Vec<QReport>> {
    let mut out = Vec::new();
    for &p in &cfg.sweep_powers {
        let pd = power_data(ds, p)?;
        if cfg.equalizers.contains(&EqualizerId::Cdc) {
            out.push(report(EqualizerId::Cdc, p, &pd.cdc_test, &ds.frames.test)?);
        }
        if cfg.equalizers.contains(&EqualizerId::Dbp) {
            let d = pd.dbp.as_ref().ok_or_else(|| BenchError::Missing(format!("no DBP data at {p} dBm")))?;
            out.push(report(EqualizerId::Dbp, p, &d.test, &ds.frames.test)?);
        }
    }
    Ok(out)
}

pub fn nn_reports(ds: &Dataset, results: &[NnResult]) -> Result<Vec<QReport>> {
    results.par_iter().map(|r| nn_report(ds, r)).collect()
}

fn file_stem(kind: ArchKind, pol: usize, power_dbm: f64) -> String {
    format!("{}_{}_p{:+05}", kind, POLS[pol], power_key(power_dbm))
}

pub fn model_path(dir: &Path, kind: ArchKind, pol: usize, power_dbm: f64) -> std::path::PathBuf {
    dir.join("models").join(file_stem(kind, pol, power_dbm) + ".ceqn")
}

/// Writes both models (as CEQN weight files) and their training histories.
pub fn save_nn(dir: &Path, r: &NnResult) -> Result<()> {
    fs::create_dir_all(dir.join("models"))?;
    fs::create_dir_all(dir.join("history"))?;
    for pol in 0..2 {
        let blob = quantize_weights(&r.models[pol], DEFAULT_FRACTION_BITS)?;
        if !blob.clipped.is_empty() {
            return Err(BenchError::Missing(format!("{} weights exceed the fixed-point range", blob.clipped.len())));
        }
        let mut f = fs::File::create(model_path(dir, r.kind, pol, r.power_dbm))?;
        write_ceqn(&blob, &mut f)?;
        let stem = file_stem(r.kind, pol, r.power_dbm);
        fs::write(dir.join("history").join(stem + ".csv"), history_csv(&r.histories[pol]))?;
    }
    Ok(())
}

pub fn load_nn(dir: &Path, kind: ArchKind, power_dbm: f64) -> Result<NnResult> {
    let mut models = Vec::new();
    for pol in 0..2 {
        let path = model_path(dir, kind, pol, power_dbm);
        let f = fs::File::open(&path).map_err(|e| BenchError::Missing(format!("{}: {e}", path.display())))?;
        let model = dequantize(&read_ceqn(std::io::BufReader::new(f))?)?;
        if model.arch().kind != kind {
            return Err(BenchError::Missing(format!("{} holds a different architecture", path.display())));
        }
        models.push(model);
    }
    let [mx, my]: [EqModel; 2] = models.try_into().expect("two models");
    Ok(NnResult { kind, power_dbm, models: [mx, my], histories: [Vec::new(), Vec::new()] })
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub dataset: Dataset,
    pub reports: Vec<QReport>,
    pub csv: String,
    pub nn: Vec<NnResult>,
}

impl SweepOutcome {
    pub fn curve(&self, eq: EqualizerId) -> Vec<(f64, f64)> {
        self.reports.iter().filter(|r| r.equalizer == eq).map(|r| (r.power_dbm, r.q_db)).collect()
    }
}

/// Generates the data, trains the neural equalizers at the highest sweep
/// power (or at every power with `retrain_all`), transfers them to the
/// other powers, evaluates everything on the test frame and writes the
/// outputs to `cfg.out_dir`.
pub fn run_sweep(cfg: &RunConfig, retrain_all: bool, progress: &dyn Fn(&str)) -> Result<SweepOutcome> {
    cfg.validate()?;
    let dir = &cfg.out_dir;
    progress("simulating link and receiver DSP");
    let ds = generate_dataset(cfg)?;
    ds.save(&dir.join("data"), cfg.transmitter.symbol_rate)?;
    if let (Some(cal), Some(q)) = (&cfg.receiver.calibration, ds.calibration_q_db) {
        progress(&format!(
            "transceiver noise variance {:.4e} gives CDC Q {q:.3} dB at {} dBm",
            ds.sigma2, cal.power_dbm
        ));
    }
    let mut reports = classical_reports(cfg, &ds)?;
    let mut nn = Vec::new();
    if !cfg.nn_archs().is_empty() {
        if retrain_all {
            for &p in &cfg.sweep_powers {
                progress(&format!("training at {p} dBm"));
                nn.extend(train_models(cfg, &ds, p)?);
            }
        } else {
            let pmax = cfg.max_power();
            progress(&format!("training at {pmax} dBm"));
            let base = train_models(cfg, &ds, pmax)?;
            progress("transferring to the other powers");
            let moved = transfer_models(cfg, &ds, &base)?;
            nn.extend(base);
            nn.extend(moved);
        }
        for r in &nn {
            save_nn(dir, r)?;
        }
        reports.extend(nn_reports(&ds, &nn)?);
    }
    let csv = reports_to_csv(&reports);
    fs::write(dir.join("qreport.csv"), &csv)?;
    let mut sorted = reports;
    sorted.sort_by(|a, b| a.equalizer.cmp(&b.equalizer).then(a.power_dbm.total_cmp(&b.power_dbm)));
    Ok(SweepOutcome { dataset: ds, reports: sorted, csv, nn })
}

/// Frames whose windows are used for training never reappear in evaluation.
pub fn frames_disjoint(ds: &Dataset) -> bool {
    let seeds: Vec<u32> = FrameKind::ALL.iter().map(|&k| ds.frames.get(k).seed).collect();
    seeds[0] != seeds[1] && seeds[0] != seeds[2] && seeds[1] != seeds[2]
}
