use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use coheq_bench::config::RunConfig;
use coheq_bench::dataset::{generate_dataset, Dataset};
use coheq_bench::sweep::{
    classical_reports, load_nn, nn_reports, pol_dataset, run_sweep, save_nn, train_models,
    transfer_models, NnResult, POLS,
};
use coheq_core::complexity::{resource_csv, resource_reports};
use coheq_core::modem::reports_to_csv;
use coheq_core::rng::derive_seed;
use coheq_nn::fixedpoint::{dequantize, quantize_weights, read_ceqn, write_ceqn};
use coheq_nn::model::ArchKind;
use coheq_nn::train::evaluate_q_db;

#[derive(Parser)]
#[command(name = "coheq", version, about = "Coherent-link equalizer testbench")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Run configuration (JSON)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Replaces every seed of the configuration with ones derived from this value
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Worker threads (CEQ_THREADS takes precedence)
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Fixed-order reductions everywhere; results are reproducible bit for bit
    #[arg(long, global = true)]
    deterministic: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the link at every sweep power and store the datasets
    Generate,
    /// Train the neural equalizers at the highest sweep power
    Train {
        #[arg(long)]
        retrain_all: bool,
    },
    /// Fine-tune the trained equalizers to the other sweep powers
    Transfer,
    /// Evaluate all equalizers on the test frames and write qreport.csv
    Evaluate,
    /// Generate, train, transfer and evaluate in one go
    Sweep {
        #[arg(long)]
        retrain_all: bool,
    },
    /// Print multiplications, throughput and FPGA counts as CSV
    Complexity,
    /// Write a stored model as a CEQN file with the given fraction bits
    ExportWeights {
        #[arg(long, value_parser = parse_arch)]
        arch: ArchKind,
        #[arg(long, default_value = "x", value_parser = ["x", "y"])]
        pol: String,
        #[arg(long)]
        power: f64,
        #[arg(long, default_value_t = 24)]
        fraction_bits: u32,
        #[arg(long)]
        output: PathBuf,
    },
    /// Load a CEQN file and report its Q on the test frame at a power
    ImportWeights {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "x", value_parser = ["x", "y"])]
        pol: String,
        #[arg(long)]
        power: f64,
    },
}

fn parse_arch(s: &str) -> std::result::Result<ArchKind, String> {
    match s.to_ascii_uppercase().as_str() {
        "BILSTM" => Ok(ArchKind::Bilstm),
        "CNN" | "DEEP_CNN" => Ok(ArchKind::DeepCnn),
        other => Err(format!("unknown architecture '{other}'")),
    }
}

fn pol_index(p: &str) -> usize {
    POLS.iter().position(|&q| q == p).expect("validated by clap")
}

fn load_config(g: &Global) -> Result<RunConfig> {
    let Some(path) = &g.config else { bail!("--config <file> is required") };
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = g.seed {
        cfg.seeds.data = derive_seed(s, 1);
        cfg.seeds.noise = derive_seed(s, 2);
        cfg.seeds.init = derive_seed(s, 3);
        cfg.train.seed = derive_seed(s, 4);
    }
    if let Some(d) = &g.out_dir {
        cfg.out_dir = d.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn thread_count(g: &Global) -> Result<Option<usize>> {
    match std::env::var("CEQ_THREADS") {
        Ok(v) => Ok(Some(v.trim().parse().with_context(|| format!("CEQ_THREADS='{v}' is not a count"))?)),
        Err(_) => Ok(g.threads),
    }
}

fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let dir = cfg.out_dir.join("data");
    Dataset::load(&dir).with_context(|| format!("no dataset in {} (run `generate` first)", dir.display()))
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    let cfg = load_config(g)?;
    if let Some(n) = thread_count(g)? {
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global()?;
    }
    let progress = |m: &str| eprintln!("[coheq] {m}");
    match cli.command {
        Command::Generate => {
            let ds = generate_dataset(&cfg)?;
            ds.save(&cfg.out_dir.join("data"), cfg.transmitter.symbol_rate)?;
            if let (Some(cal), Some(q)) = (&cfg.receiver.calibration, ds.calibration_q_db) {
                println!("transceiver noise variance {:.6e}, CDC Q {q:.3} dB at {} dBm", ds.sigma2, cal.power_dbm);
            }
            println!("{} powers written to {}", ds.powers.len(), cfg.out_dir.join("data").display());
        }
        Command::Train { retrain_all } => {
            let ds = load_dataset(&cfg)?;
            let powers = if retrain_all { cfg.sweep_powers.clone() } else { vec![cfg.max_power()] };
            for p in powers {
                progress(&format!("training at {p} dBm"));
                for r in train_models(&cfg, &ds, p)? {
                    save_nn(&cfg.out_dir, &r)?;
                }
            }
        }
        Command::Transfer => {
            let ds = load_dataset(&cfg)?;
            let base: Vec<NnResult> =
                cfg.nn_archs().into_iter().map(|k| load_nn(&cfg.out_dir, k, cfg.max_power())).collect::<Result<_, _>>()?;
            for r in transfer_models(&cfg, &ds, &base)? {
                save_nn(&cfg.out_dir, &r)?;
            }
        }
        Command::Evaluate => {
            let ds = load_dataset(&cfg)?;
            let mut reports = classical_reports(&cfg, &ds)?;
            let mut nn = Vec::new();
            for k in cfg.nn_archs() {
                for &p in &cfg.sweep_powers {
                    nn.push(load_nn(&cfg.out_dir, k, p)?);
                }
            }
            reports.extend(nn_reports(&ds, &nn)?);
            let csv = reports_to_csv(&reports);
            fs::write(cfg.out_dir.join("qreport.csv"), &csv)?;
            print!("{csv}");
        }
        Command::Sweep { retrain_all } => {
            let out = run_sweep(&cfg, retrain_all, &progress)?;
            print!("{}", out.csv);
        }
        Command::Complexity => {
            print!("{}", resource_csv(&resource_reports(&cfg.complexity_inputs(), &cfg.hardware)));
        }
        Command::ExportWeights { arch, pol, power, fraction_bits, output } => {
            let pol = pol_index(&pol);
            let r = load_nn(&cfg.out_dir, arch, power)?;
            let blob = quantize_weights(&r.models[pol], fraction_bits)?;
            for c in &blob.clipped {
                eprintln!("warning: tensor {} element {} = {} saturated", c.tensor, c.index, c.value);
            }
            write_ceqn(&blob, fs::File::create(&output)?)?;
            println!("wrote {} ({} tensors) to {}", arch, blob.tensors.len(), output.display());
        }
        Command::ImportWeights { input, pol, power } => {
            let blob = read_ceqn(std::io::BufReader::new(fs::File::open(&input)?))?;
            let model = dequantize(&blob)?;
            let ds = load_dataset(&cfg)?;
            let pd = ds.at(power).with_context(|| format!("no dataset at {power} dBm"))?;
            let test = pol_dataset(&pd.cdc_test, &ds.frames.test, pol_index(&pol))?;
            println!(
                "{} with {} parameters: Q {:.3} dB on the {pol} test frame at {power} dBm",
                model.arch().kind,
                model.num_params(),
                evaluate_q_db(&model, &test)?
            );
        }
    }
    if g.deterministic {
        progress("deterministic mode: all reductions ran in fixed order");
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
