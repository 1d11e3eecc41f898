mod config;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dhsa::harness::{
    audit_colluding_view, bench, run_session, run_session_in, toy_fedavg, write_csv, BenchConfig,
    CaptureMode, Colluders, FedAvgMode, SessionOptions, TrainerConfig, UniformUpdates,
};
use dhsa::protocol::{schedule, SessionContext};
use dhsa::ring::RingParams;
use dhsa::shprg::Setting;
use dhsa::{Error, Result};
use serde_json::json;

use config::FileConfig;

#[derive(Parser, Debug)]
#[command(name = "dhsa", version, about = "Seed-homomorphic secure aggregation simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Flat key = value session file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Report destination; stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    setting: Option<Setting>,
    #[arg(long, global = true)]
    n_clients: Option<usize>,
    #[arg(long, global = true)]
    model_size: Option<usize>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    tau: Option<usize>,
    /// Quantization bit width.
    #[arg(long, global = true)]
    w: Option<u32>,
    /// log2 of the rounding modulus p.
    #[arg(long, global = true)]
    log_p: Option<u32>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print resolved parameters and derived quantities.
    Params,
    /// Simulate a session and emit its report as JSON.
    Run {
        /// Also write the binary transcript log here.
        #[arg(long)]
        transcript: Option<PathBuf>,
    },
    /// Time mask expansion and seed agreement; emits CSV.
    Bench {
        #[arg(long)]
        reps: Option<usize>,
    },
    /// Run a session and report what a colluding coalition can compute.
    Audit {
        /// "server,3,5", "2,4" or "none".
        #[arg(long)]
        collude: Option<String>,
    },
    /// Toy FedAvg with and without masking; emits an accuracy CSV.
    Train,
}

impl Cli {
    fn resolve(&self) -> Result<FileConfig> {
        let mut cfg = match &self.config {
            Some(path) => FileConfig::load(path)?,
            None => FileConfig::default(),
        };
        let s = &mut cfg.session;
        if let Some(v) = self.setting {
            s.setting = v;
        }
        if let Some(v) = self.n_clients {
            s.n_clients = v;
        }
        if let Some(v) = self.model_size {
            s.model_size = v;
        }
        if let Some(v) = self.epochs {
            s.max_epochs = v;
        }
        if let Some(v) = self.tau {
            s.tau = v;
        }
        if let Some(v) = self.w {
            s.w = v;
        }
        if self.log_p.is_some() {
            s.log_p = self.log_p;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        match &self.command {
            Command::Bench { reps: Some(r) } => cfg.reps = *r,
            Command::Audit { collude: Some(c) } => cfg.collude = c.clone(),
            _ => {}
        }
        Ok(cfg)
    }
}

fn params(cfg: &FileConfig) -> Result<String> {
    let s = &cfg.session;
    let shprg = s.shprg_params()?;
    shprg.validate()?;
    let quant = s.quant_params()?;
    quant.validate()?;
    let ring = RingParams::default_params();
    let seeds_fit = s.validate();
    let plan = schedule(s.tau, s.max_epochs);
    let report = json!({
        "setting": s.setting.label(),
        "security_bits": s.setting.security_bits(),
        "shprg": {
            "mu": shprg.mu,
            "log_q": shprg.log_q,
            "log_p": shprg.log_p,
            "p": shprg.p(),
        },
        "quantization": {
            "w": s.w,
            "m_min": s.m_min,
            "m_max": s.m_max,
            "step": (s.m_max - s.m_min) / ((1u64 << s.w) - 1) as f64,
        },
        "max_clients": quant.max_clients(),
        "n_clients": s.n_clients,
        "model_size": s.model_size,
        "bfv": {
            "n": ring.degree(),
            "log2_q": ring.log2_q(),
            "t": ring.plaintext_modulus().to_string(),
            "delta": ring.delta().to_string(),
        },
        "tau": s.tau,
        "epochs": s.max_epochs,
        "ciphertexts_per_client_run": s.ciphertexts_per_run()?,
        "total_rounds": plan.total_rounds(),
        "seed_agreement": match seeds_fit {
            Ok(()) => "supported".to_string(),
            Err(e) => e.to_string(),
        },
    });
    Ok(serde_json::to_string_pretty(&report).expect("json values serialize") + "\n")
}

fn execute(cli: &Cli) -> Result<Vec<u8>> {
    let cfg = cli.resolve()?;
    let s = cfg.session.clone();
    match &cli.command {
        Command::Params => Ok(params(&cfg)?.into_bytes()),
        Command::Run { transcript } => {
            let opts = SessionOptions { master_seed: cfg.seed, ..Default::default() };
            let mut updates = UniformUpdates::new(cfg.seed, s.m_min, s.m_max);
            let out = run_session(s, &mut updates, &opts)?;
            if let Some(path) = transcript {
                let file = File::create(path).map_err(io_err)?;
                out.transcript.write_binary(BufWriter::new(file)).map_err(io_err)?;
            }
            Ok((out.report.to_json() + "\n").into_bytes())
        }
        Command::Bench { .. } => {
            let mut bc = BenchConfig {
                n_clients: s.n_clients,
                tau: s.tau,
                reps: cfg.reps,
                seed: cfg.seed,
                ..Default::default()
            };
            if cli.setting.is_some() || cli.config.is_some() {
                bc.settings = vec![s.setting];
            }
            if cli.model_size.is_some() || cli.config.is_some() {
                bc.model_sizes = vec![s.model_size];
            }
            let rows = bench(&bc)?;
            let mut buf = Vec::new();
            write_csv(&rows, &mut buf)?;
            Ok(buf)
        }
        Command::Audit { .. } => {
            let colluders: Colluders = cfg.collude.parse()?;
            let ctx = SessionContext::new(s.clone())?;
            let opts = SessionOptions {
                master_seed: cfg.seed,
                capture: CaptureMode::Full,
                record_views: colluders.clients.clone(),
                ..Default::default()
            };
            let mut updates = UniformUpdates::new(cfg.seed, s.m_min, s.m_max);
            let out = run_session_in(ctx.clone(), &mut updates, &opts)?;
            let report = audit_colluding_view(&ctx, &out.transcript, &out.views, &colluders)?;
            Ok((serde_json::to_string_pretty(&report).expect("report serializes") + "\n").into_bytes())
        }
        Command::Train => {
            let trainer = TrainerConfig::default();
            s.validate()?;
            let plain = toy_fedavg(&s, &trainer, FedAvgMode::Plain, cfg.seed)?;
            let masked = toy_fedavg(&s, &trainer, FedAvgMode::Dhsa, cfg.seed)?;
            let mut wtr = csv::Writer::from_writer(Vec::new());
            wtr.write_record(["epoch", "plain", "dhsa"]).map_err(csv_err)?;
            for (i, (a, b)) in plain.accuracy.iter().zip(&masked.accuracy).enumerate() {
                wtr.write_record([(i + 1).to_string(), a.to_string(), b.to_string()]).map_err(csv_err)?;
            }
            wtr.into_inner().map_err(|e| Error::InvalidParams(e.to_string()))
        }
    }
}

fn io_err(e: std::io::Error) -> Error {
    Error::InvalidParams(format!("io: {e}"))
}

fn csv_err(e: csv::Error) -> Error {
    Error::InvalidParams(format!("csv: {e}"))
}

fn emit(out: &Option<PathBuf>, bytes: &[u8]) -> std::io::Result<()> {
    match out {
        Some(path) => std::fs::write(path, bytes),
        None => std::io::stdout().lock().write_all(bytes),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(bytes) => match emit(&cli.out, &bytes) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("dhsa: cannot write report: {e}");
                ExitCode::FAILURE
            }
        },
        Err(e) => {
            eprintln!("dhsa: {e}");
            let body = serde_json::to_string_pretty(&json!({ "error": e.to_string() })).unwrap() + "\n";
            let _ = emit(&cli.out, body.as_bytes());
            ExitCode::FAILURE
        }
    }
}
