use std::fs;
use std::io::Write;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use qndk_core::document::{import, Bundle, ValidationError};
use qndk_core::{CompiledPlan, RunOptions, Toolkit};
use serde_json::json;

/// Exit status for success.
const OK: u8 = 0;
/// A simulation ran but at least one run failed.
const RUNTIME_FAILURE: u8 = 1;
/// Bad arguments, unreadable files or invalid documents.
const INVALID_INPUT: u8 = 2;

#[derive(Parser)]
#[command(name = "qndk", version, about = "Quantum network simulation documents: validate, compile, run, share, serve")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a document; prints nothing when it is valid.
    Validate { file: PathBuf },
    /// Compile a document into a runnable plan.
    Compile {
        file: PathBuf,
        /// Plan path; stdout when omitted.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Run a document (or a compiled plan) and write the report.
    Run {
        file: PathBuf,
        /// Base seed, replacing the document's.
        #[arg(long)]
        seed: Option<u64>,
        /// Number of runs, replacing the document's.
        #[arg(long)]
        runs: Option<u64>,
        /// Report path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Execute independent runs in parallel.
        #[arg(long)]
        parallel: bool,
    },
    /// Start the job service.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        bind: IpAddr,
        #[arg(long, env = "QNDK_DATA_DIR", default_value = "./qndk-data")]
        data_dir: PathBuf,
        /// Concurrent jobs; defaults to the number of cores.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Write a shareable bundle (canonical document plus its compiled plan).
    Export {
        file: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Read a bundle, check its hash and print the canonical document.
    Import {
        bundle: PathBuf,
        /// Document path; stdout when omitted.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

/// A failure reported as JSON lines on stderr.
struct Failure {
    exit: u8,
    errors: Vec<serde_json::Value>,
}

impl Failure {
    fn input(code: &str, message: impl Into<String>) -> Self {
        Self {
            exit: INVALID_INPUT,
            errors: vec![json!({"code": code, "path": "", "message": message.into()})],
        }
    }

    fn validation(errors: Vec<ValidationError>) -> Self {
        Self {
            exit: INVALID_INPUT,
            errors: errors.into_iter().map(|e| json!(e)).collect(),
        }
    }
}

type Outcome = Result<u8, Failure>;

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path).map_err(|e| Failure::input("E_IO", format!("cannot read {}: {e}", path.display())))
}

fn write(path: Option<&Path>, bytes: &[u8]) -> Result<(), Failure> {
    let result = match path {
        Some(p) => fs::write(p, bytes),
        None => std::io::stdout().write_all(bytes),
    };
    result.map_err(|e| Failure::input("E_IO", format!("cannot write output: {e}")))
}

fn compile(toolkit: &Toolkit, file: &Path) -> Result<CompiledPlan, Failure> {
    let doc = import(&read(file)?).map_err(|e| Failure::validation(vec![e.to_validation_error()]))?;
    toolkit
        .compile(&doc)
        .map_err(|e| Failure::validation(e.errors()))
}

/// Accepts a document or an already compiled plan.
fn load_plan(toolkit: &Toolkit, file: &Path) -> Result<CompiledPlan, Failure> {
    let bytes = read(file)?;
    let is_plan = serde_json::from_slice::<serde_json::Value>(&bytes)
        .map(|v| v.get("plan_version").is_some())
        .unwrap_or(false);
    if !is_plan {
        return compile(toolkit, file);
    }
    let plan: CompiledPlan = serde_json::from_slice(&bytes)
        .map_err(|e| Failure::input("E_MALFORMED", format!("invalid plan: {e}")))?;
    if plan.engine != qndk_core::document::NATIVE_ENGINE {
        return Err(Failure::input(
            "E_ENGINE_UNKNOWN",
            format!("plans for engine {:?} cannot run here", plan.engine),
        ));
    }
    Ok(plan)
}

fn execute(command: Command) -> Outcome {
    let toolkit = Toolkit::standard();
    match command {
        Command::Validate { file } => {
            let doc = import(&read(&file)?)
                .map_err(|e| Failure::validation(vec![e.to_validation_error()]))?;
            toolkit.validate(&doc).map_err(Failure::validation)?;
            Ok(OK)
        }
        Command::Compile { file, output } => {
            let plan = compile(&toolkit, &file)?;
            for warning in &plan.warnings {
                eprintln!("{}", json!({"level": "warning", "message": warning}));
            }
            write(output.as_deref(), &plan.to_canonical_bytes())?;
            Ok(OK)
        }
        Command::Run {
            file,
            seed,
            runs,
            out,
            parallel,
        } => {
            let mut plan = load_plan(&toolkit, &file)?;
            if let Some(runs) = runs {
                if runs == 0 {
                    return Err(Failure::input("E_RUN_CONFIG", "--runs must be at least 1"));
                }
                plan.run_config.runs = runs;
            }
            let report = toolkit.run_plan(
                &plan,
                &RunOptions {
                    seed_override: seed,
                    parallel,
                },
            );
            write(out.as_deref(), &report.to_canonical_bytes())?;
            for run in report.runs.iter().filter(|r| r.error.is_some()) {
                eprintln!(
                    "{}",
                    json!({"level": "error", "run_index": run.run_index, "seed": run.seed, "message": run.error})
                );
            }
            Ok(if report.succeeded() { OK } else { RUNTIME_FAILURE })
        }
        Command::Serve {
            port,
            bind,
            data_dir,
            workers,
        } => {
            tracing_subscriber::fmt().with_writer(std::io::stderr).init();
            let mut config = qndk_service::ServiceConfig::new(data_dir);
            if let Some(w) = workers {
                config.workers = w.max(1);
            }
            let runtime = tokio::runtime::Runtime::new()
                .map_err(|e| Failure::input("E_IO", format!("cannot start runtime: {e}")))?;
            runtime
                .block_on(qndk_service::serve(config, SocketAddr::new(bind, port)))
                .map_err(|e| Failure {
                    exit: RUNTIME_FAILURE,
                    errors: vec![json!({"code": "E_IO", "path": "", "message": e.to_string()})],
                })?;
            Ok(OK)
        }
        Command::Export { file, output } => {
            let doc = import(&read(&file)?)
                .map_err(|e| Failure::validation(vec![e.to_validation_error()]))?;
            let plan = toolkit
                .compile(&doc)
                .map_err(|e| Failure::validation(e.errors()))?;
            let bundle = Bundle::new(&doc).with_plan(plan);
            write(Some(&output), &bundle.to_canonical_bytes())?;
            Ok(OK)
        }
        Command::Import { bundle, output } => {
            let bundle = Bundle::from_bytes(&read(&bundle)?)
                .map_err(|e| Failure::validation(vec![e.to_validation_error()]))?;
            if !bundle.verify() {
                return Err(Failure::input(
                    "E_INTEGRITY",
                    "bundle document does not match its document_hash",
                ));
            }
            let doc = bundle
                .document()
                .map_err(|e| Failure::validation(vec![e.to_validation_error()]))?;
            toolkit.validate(&doc).map_err(Failure::validation)?;
            write(output.as_deref(), bundle.document.as_bytes())?;
            Ok(OK)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { INVALID_INPUT } else { OK });
        }
    };
    match execute(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(failure) => {
            for error in failure.errors {
                eprintln!("{error}");
            }
            ExitCode::from(failure.exit)
        }
    }
}
