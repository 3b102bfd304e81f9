use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use evote_core::forest::{feature_importance, ForestParams, SplitSpec};
use evote_core::{turnout, violence};
use evote_service::config::ServiceConfig;
use evote_service::http::router;
use evote_service::journal::FileJournal;
use evote_service::service::{EnrollRequest, Service, SystemClock};
use evote_service::simulate::{self, SimulationParams};
use serde::Deserialize;

#[derive(Parser)]
#[command(name = "evote", version, about = "Election management service and operator tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Turnout,
    Violence,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP API.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides `listen` from the config file.
        #[arg(long)]
        listen: Option<std::net::SocketAddr>,
    },
    /// Write a synthetic training corpus as CSV.
    GenerateData {
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long, default_value_t = 500)]
        n: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Defaults to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Violence only: label by `prior_incident_count > 5` instead of the logistic draw.
        #[arg(long)]
        separable: bool,
    },
    /// Train a forest on a CSV corpus, save it and print held-out metrics.
    Train {
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out_model: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        trees: Option<usize>,
    },
    /// Run a full synthetic election day in process.
    SimulateElection {
        #[arg(long, default_value_t = 1000)]
        voters: usize,
        #[arg(long, default_value_t = 5)]
        areas: usize,
        #[arg(long, default_value_t = 3)]
        candidates: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Verify the audit chain stored in a data directory.
    VerifyAudit {
        #[arg(long)]
        data_dir: PathBuf,
    },
    /// Enroll voters from a CSV with columns nic,full_name,area_code,fingerprint_b64,face_b64.
    EnrollBatch {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides `data_dir` from the config file.
        #[arg(long)]
        data_dir: Option<PathBuf>,
        /// Recorded as the enrolling officer.
        #[arg(long, default_value = "batch")]
        operator: String,
    },
}

type CmdResult = Result<ExitCode, Box<dyn std::error::Error>>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Serve { config, listen } => serve(config.as_deref(), listen),
        Command::GenerateData {
            kind,
            n,
            seed,
            out,
            separable,
        } => generate(kind, n, seed, out.as_deref(), separable),
        Command::Train {
            kind,
            input,
            out_model,
            seed,
            trees,
        } => train(kind, &input, &out_model, seed, trees),
        Command::SimulateElection {
            voters,
            areas,
            candidates,
            seed,
        } => simulate_election(voters, areas, candidates, seed),
        Command::VerifyAudit { data_dir } => verify_audit(&data_dir),
        Command::EnrollBatch {
            csv,
            config,
            data_dir,
            operator,
        } => enroll_batch(&csv, config.as_deref(), data_dir, &operator),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn serve(config: Option<&Path>, listen: Option<std::net::SocketAddr>) -> CmdResult {
    let mut config = ServiceConfig::load(config)?;
    if let Some(l) = listen {
        config.listen = l;
    }
    let service = Arc::new(Service::open(&config, Arc::new(SystemClock), None)?);
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let warm = service.clone();
        tokio::task::spawn_blocking(move || {
            if let Err(e) = warm.predictors.turnout().and(warm.predictors.violence()) {
                log::error!("model warm-up failed: {e}");
            }
        });
        let listener = tokio::net::TcpListener::bind(config.listen).await?;
        log::info!("listening on {}", listener.local_addr()?);
        eprintln!("listening on {}", listener.local_addr()?);
        axum::serve(listener, router(service.clone()))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        io::Result::Ok(())
    })?;
    service.write_snapshot()?;
    Ok(ExitCode::SUCCESS)
}

fn output(out: Option<&Path>) -> io::Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn generate(kind: Kind, n: usize, seed: u64, out: Option<&Path>, separable: bool) -> CmdResult {
    let mut w = output(out)?;
    match kind {
        Kind::Turnout => turnout::write_csv(&turnout::generate_training_data(n, seed), &mut w)?,
        Kind::Violence => {
            let rows = if separable {
                violence::generate_separable_data(n, seed)
            } else {
                violence::generate_training_data(n, seed)
            };
            violence::write_csv(&rows, &mut w)?;
        }
    }
    w.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn train(kind: Kind, input: &Path, out_model: &Path, seed: u64, trees: Option<usize>) -> CmdResult {
    let split = SplitSpec::new(0.7, 0.15, 0.15, seed);
    let mut params = ForestParams::with_seed(seed);
    if let Some(t) = trees {
        params.n_trees = t;
    }
    let file = File::open(input)?;
    let (forest, report) = match kind {
        Kind::Turnout => {
            let r = turnout::train_turnout_model(&turnout::read_csv(file)?, &split, &params)?;
            let report = serde_json::json!({
                "kind": "turnout",
                "model_id": r.model.model_id,
                "test": r.test,
                "holdout": r.holdout,
            });
            (r.model.forest, report)
        }
        Kind::Violence => {
            let r = violence::train_violence_model(&violence::read_csv(file)?, &split, &params)?;
            let report = serde_json::json!({
                "kind": "violence",
                "model_id": r.model.model_id,
                "test": r.test,
                "holdout": r.holdout,
            });
            (r.model.forest, report)
        }
    };
    std::fs::write(out_model, forest.to_json())?;
    let mut report = report;
    report["feature_importance"] = feature_importance(&forest)
        .into_iter()
        .map(|(name, v)| serde_json::json!({ "feature": name, "importance": v }))
        .collect();
    writeln!(io::stdout().lock(), "{}", serde_json::to_string_pretty(&report)?)?;
    Ok(ExitCode::SUCCESS)
}

fn simulate_election(voters: usize, areas: usize, candidates: usize, seed: u64) -> CmdResult {
    let params = SimulationParams {
        voters,
        areas,
        candidates,
        seed,
        ..SimulationParams::default()
    };
    let report = simulate::run(&params)?;
    print!("{}", report.render());
    Ok(if report.chain_valid {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn verify_audit(data_dir: &Path) -> CmdResult {
    if !data_dir.is_dir() {
        return Err(format!("{} is not a directory", data_dir.display()).into());
    }
    let recovered = FileJournal::load(data_dir)?;
    let verdict = recovered.state.unwrap_or_default().audit.verify();
    if verdict.valid {
        println!("chain valid ({} entries)", verdict.entries);
        Ok(ExitCode::SUCCESS)
    } else {
        let at = verdict.first_bad_index.map_or("?".to_string(), |i| i.to_string());
        println!("chain INVALID at entry {at} ({} entries)", verdict.entries);
        Ok(ExitCode::from(2))
    }
}

#[derive(Deserialize)]
struct BatchRow {
    nic: String,
    full_name: String,
    area_code: String,
    fingerprint_b64: String,
    face_b64: String,
}

fn enroll_batch(csv_path: &Path, config: Option<&Path>, data_dir: Option<PathBuf>, operator: &str) -> CmdResult {
    let mut config = ServiceConfig::load(config)?;
    if let Some(d) = data_dir {
        config.data_dir = d;
    }
    let service = Service::open(&config, Arc::new(SystemClock), None)?;
    let mut reader = csv::Reader::from_path(csv_path)?;
    let (mut enrolled, mut failed) = (0usize, 0usize);
    for (i, row) in reader.deserialize::<BatchRow>().enumerate() {
        let line = i + 2;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                eprintln!("line {line}: {e}");
                failed += 1;
                continue;
            }
        };
        let req = EnrollRequest {
            nic: row.nic,
            full_name: row.full_name,
            area_code: row.area_code,
            fingerprint: row.fingerprint_b64,
            face: row.face_b64,
        };
        match service.enroll_as_operator(&req, operator) {
            Ok(_) => enrolled += 1,
            Err(e) => {
                eprintln!("line {line} ({}): {}", req.nic, e.message);
                failed += 1;
            }
        }
    }
    println!("enrolled {enrolled}, failed {failed}");
    Ok(if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}
