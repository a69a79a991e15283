//! Command-line front door: solve a model, certify the solve
//! interactively (in-process or across two processes), and report
//! machine-readable statistics.

use std::fs;
use std::io::Write;
use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use certikit::circuit::{parse_trace, serialize_trace, CompiledTrace, Trace};
use certikit::modelcheck::{check_all, final_answers, parse_model, Model};
use certikit::protocol::{
    flip_assertion, run_verification, LocalChannel, ProverSession, Retention, TamperClass,
    TamperPlan, TcpChannel, VerifyOptions, VerifyOutcome,
};

/// Exit statuses: the property holding or failing only counts once the
/// certification accepted.
const EXIT_HOLDS: u8 = 0;
const EXIT_FAILS: u8 = 1;
const EXIT_REJECTED: u8 = 2;
const EXIT_USAGE: u8 = 3;

#[derive(Parser)]
#[command(
    name = "certikit",
    version,
    about = "Symbolic CTL model checking with interactive certification"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Parse a model, evaluate its properties, and record the trace.
    Solve {
        /// Model file (VAR/INIT/TRANS/LABEL/CTLSPEC statements).
        model: PathBuf,
        /// Write the recorded trace to this path.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the stats block to this path.
        #[arg(long)]
        stats: Option<PathBuf>,
    },
    /// Solve, then certify the recorded trace in-process.
    Certify(CertifyArgs),
    /// `certify` with incremental certification and a collecting prover.
    CertifyGc(CertifyArgs),
    /// Solve, publish the trace, and answer one verifier over TCP.
    ServeProver {
        model: PathBuf,
        /// Address to listen on, e.g. 127.0.0.1:0.
        #[arg(long)]
        listen: String,
        /// Where to write the trace for the verifier to pick up.
        #[arg(long)]
        trace_out: PathBuf,
        /// Also write the stats block to this path.
        #[arg(long)]
        stats: Option<PathBuf>,
    },
    /// Certify a published trace against a remote prover.
    RunVerifier {
        model: PathBuf,
        /// Trace file published by serve-prover.
        #[arg(long)]
        trace: PathBuf,
        /// Prover address, e.g. 127.0.0.1:4070.
        #[arg(long)]
        connect: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1)]
        repetitions: u32,
        /// Certify fragment-by-fragment with anchored randomness.
        #[arg(long)]
        gc: bool,
        #[arg(long)]
        stats: Option<PathBuf>,
        /// Write the raw message transcript to this path.
        #[arg(long)]
        transcript: Option<PathBuf>,
    },
}

#[derive(Args)]
struct CertifyArgs {
    model: PathBuf,
    /// Verifier randomness; defaults to an entropy draw (echoed in stats).
    #[arg(long)]
    seed: Option<u64>,
    /// Independent repetitions of the whole protocol.
    #[arg(long, default_value_t = 1)]
    repetitions: u32,
    /// Certify fragment-by-fragment with anchored randomness so the
    /// prover can drop per-fragment state.
    #[arg(long)]
    gc: bool,
    /// Also write the stats block to this path.
    #[arg(long)]
    stats: Option<PathBuf>,
    /// Corrupt one answer for soundness experiments, as `class:index`
    /// with class one of flip-assert, poly, point, distinct.
    #[arg(long)]
    tamper: Option<String>,
    /// Write the raw message transcript to this path.
    #[arg(long)]
    transcript: Option<PathBuf>,
}

/// Ordered key=value lines; wall-time keys are appended last so stats
/// blocks diff cleanly across runs of the same seed.
#[derive(Default)]
struct StatsBlock {
    fields: Vec<(String, String)>,
    times: Vec<(String, String)>,
}

impl StatsBlock {
    fn put(&mut self, key: &str, value: impl ToString) {
        self.fields.push((key.to_string(), value.to_string()));
    }

    fn put_time(&mut self, key: &str, start: Instant) {
        self.times
            .push((key.to_string(), start.elapsed().as_millis().to_string()));
    }

    fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.fields.iter().chain(&self.times) {
            out.push_str(k);
            out.push('=');
            out.push_str(v);
            out.push('\n');
        }
        out
    }

    fn emit(&self, path: &Option<PathBuf>) -> Result<(), CliError> {
        let text = self.render();
        print!("{text}");
        if let Some(p) = path {
            fs::write(p, &text).map_err(|e| CliError::new(format!("writing {p:?}: {e}")))?;
        }
        Ok(())
    }
}

struct CliError {
    message: String,
}

impl CliError {
    fn new(message: impl Into<String>) -> CliError {
        CliError {
            message: message.into(),
        }
    }
}

fn load_model(path: &PathBuf) -> Result<Model, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::new(format!("reading {path:?}: {e}")))?;
    parse_model(&text).map_err(|e| CliError::new(format!("{}: {e}", path.display())))
}

fn bools_csv(bs: &[bool]) -> String {
    bs.iter()
        .map(|b| b.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn effective_seed(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(rand::random)
}

/// Everything a certification run reports, independent of transport.
fn certification_stats(
    stats: &mut StatsBlock,
    compiled: &CompiledTrace,
    answers: &[bool],
    seed: u64,
    repetitions: u32,
    gc: bool,
    outcome: &VerifyOutcome,
) {
    let answer = answers.iter().all(|&a| a);
    stats.put("answer", answer);
    stats.put("answers", bools_csv(answers));
    stats.put("specs", answers.len());
    stats.put("trace_len", compiled.trace.steps.len());
    stats.put("plain_gates", compiled.plain.len());
    stats.put("circuit_gates", compiled.circuit.len());
    stats.put("n", compiled.n_vars);
    stats.put("seed", seed);
    stats.put("repetitions", repetitions);
    stats.put("gc", gc);
    stats.put("messages", outcome.stats.messages);
    stats.put("bytes", outcome.stats.bytes);
    stats.put("verifier_field_ops", outcome.stats.field_ops);
    stats.put("error_bound", format!("{:e}", outcome.stats.error_bound));
    stats.put("verdict", &outcome.verdict.reason);
    stats.put("accepted", outcome.verdict.accept);
}

fn write_transcript(path: &Option<PathBuf>, outcome: &VerifyOutcome) -> Result<(), CliError> {
    if let Some(p) = path {
        fs::write(p, &outcome.transcript)
            .map_err(|e| CliError::new(format!("writing {p:?}: {e}")))?;
    }
    Ok(())
}

fn exit_for(outcome: &VerifyOutcome, answers: &[bool]) -> u8 {
    if !outcome.verdict.accept {
        EXIT_REJECTED
    } else if answers.iter().all(|&a| a) {
        EXIT_HOLDS
    } else {
        EXIT_FAILS
    }
}

fn cmd_solve(
    model_path: PathBuf,
    out: Option<PathBuf>,
    stats_path: Option<PathBuf>,
) -> Result<u8, CliError> {
    let total = Instant::now();
    let mut stats = StatsBlock::default();

    let parse_start = Instant::now();
    let model = load_model(&model_path)?;
    stats.put_time("time_parse_ms", parse_start);

    let solve_start = Instant::now();
    let (answers, trace) = check_all(&model);
    stats.put_time("time_solve_ms", solve_start);

    let answer = answers.iter().all(|&a| a);
    stats.put("answer", answer);
    stats.put("answers", bools_csv(&answers));
    stats.put("specs", answers.len());
    stats.put("trace_len", trace.steps.len());
    stats.put("n", trace.n_vars);
    if let Some(p) = &out {
        fs::write(p, serialize_trace(&trace))
            .map_err(|e| CliError::new(format!("writing {p:?}: {e}")))?;
    }
    stats.put_time("time_total_ms", total);
    stats.emit(&stats_path)?;
    Ok(if answer { EXIT_HOLDS } else { EXIT_FAILS })
}

fn cmd_certify(args: CertifyArgs, force_gc: bool) -> Result<u8, CliError> {
    let total = Instant::now();
    let mut stats = StatsBlock::default();
    let gc = args.gc || force_gc;
    let seed = effective_seed(args.seed);

    let parse_start = Instant::now();
    let model = load_model(&args.model)?;
    stats.put_time("time_parse_ms", parse_start);

    let solve_start = Instant::now();
    let (answers, trace) = check_all(&model);
    stats.put_time("time_solve_ms", solve_start);
    let inputs = model.macro_inputs();

    // A flipped-assertion experiment corrupts the verifier's copy of the
    // trace; every other tamper class corrupts the prover's answers.
    let tamper = match &args.tamper {
        None => None,
        Some(s) => Some(
            TamperPlan::parse(s)
                .ok_or_else(|| CliError::new(format!("bad --tamper spec `{s}`")))?,
        ),
    };
    let (prover_tamper, verifier_trace) = match tamper {
        Some(plan) if plan.class == TamperClass::FlipAssert => {
            let lying = flip_assertion(&trace, plan.index as usize).ok_or_else(|| {
                CliError::new(format!(
                    "--tamper flip-assert:{} is out of range",
                    plan.index
                ))
            })?;
            (None, lying)
        }
        other => (other, trace.clone()),
    };

    let prover_start = Instant::now();
    let retention = if gc {
        Retention::FragmentGc
    } else {
        Retention::KeepAll
    };
    let mut prover = ProverSession::new(&trace, &inputs, retention, prover_tamper)
        .map_err(|e| CliError::new(format!("prover: {e}")))?;
    stats.put_time("time_prover_ms", prover_start);

    let verify_start = Instant::now();
    let compiled = CompiledTrace::build(&verifier_trace, &inputs)
        .map_err(|e| CliError::new(format!("compiling trace: {e}")))?;
    let opts = VerifyOptions {
        seed,
        repetitions: args.repetitions,
        gc,
    };
    let outcome = {
        let mut channel = LocalChannel::new(&mut prover);
        run_verification(&compiled, &mut channel, &opts)
            .map_err(|e| CliError::new(format!("verification transport: {e}")))?
    };
    stats.put_time("time_verify_ms", verify_start);

    certification_stats(
        &mut stats,
        &compiled,
        &answers,
        seed,
        args.repetitions,
        gc,
        &outcome,
    );
    stats.put("prover_peak_nodes", prover.peak_nodes());
    stats.put("prover_replays", prover.replays());
    write_transcript(&args.transcript, &outcome)?;
    stats.put_time("time_total_ms", total);
    stats.emit(&args.stats)?;
    Ok(exit_for(&outcome, &answers))
}

fn cmd_serve_prover(
    model_path: PathBuf,
    listen: String,
    trace_out: PathBuf,
    stats_path: Option<PathBuf>,
) -> Result<u8, CliError> {
    let model = load_model(&model_path)?;
    let (answers, trace) = check_all(&model);
    let inputs = model.macro_inputs();
    fs::write(&trace_out, serialize_trace(&trace))
        .map_err(|e| CliError::new(format!("writing {trace_out:?}: {e}")))?;

    // The server always keeps full state: it cannot know whether the
    // remote verifier will certify incrementally, and answers are
    // identical either way.
    let mut prover = ProverSession::new(&trace, &inputs, Retention::KeepAll, None)
        .map_err(|e| CliError::new(format!("prover: {e}")))?;

    let listener = TcpListener::bind(&listen)
        .map_err(|e| CliError::new(format!("binding {listen}: {e}")))?;
    let local = listener
        .local_addr()
        .map_err(|e| CliError::new(e.to_string()))?;
    println!("listening={local}");
    std::io::stdout().flush().ok();

    let (mut stream, peer) = listener
        .accept()
        .map_err(|e| CliError::new(format!("accept: {e}")))?;
    let verdict = certikit::protocol::serve_connection(&mut prover, &mut stream)
        .map_err(|e| CliError::new(format!("serving {peer}: {e}")))?
        .ok_or_else(|| CliError::new(format!("{peer} disconnected before a verdict")))?;

    let mut stats = StatsBlock::default();
    stats.put("answer", answers.iter().all(|&a| a));
    stats.put("answers", bools_csv(&answers));
    stats.put("trace_len", trace.steps.len());
    stats.put("n", trace.n_vars);
    stats.put("verdict", &verdict.reason);
    stats.put("accepted", verdict.accept);
    stats.put("prover_peak_nodes", prover.peak_nodes());
    stats.put("prover_replays", prover.replays());
    stats.emit(&stats_path)?;
    if !verdict.accept {
        return Ok(EXIT_REJECTED);
    }
    Ok(if answers.iter().all(|&a| a) {
        EXIT_HOLDS
    } else {
        EXIT_FAILS
    })
}

#[allow(clippy::too_many_arguments)]
fn cmd_run_verifier(
    model_path: PathBuf,
    trace_path: PathBuf,
    connect: String,
    seed: Option<u64>,
    repetitions: u32,
    gc: bool,
    stats_path: Option<PathBuf>,
    transcript: Option<PathBuf>,
) -> Result<u8, CliError> {
    let total = Instant::now();
    let mut stats = StatsBlock::default();
    let seed = effective_seed(seed);

    let parse_start = Instant::now();
    let model = load_model(&model_path)?;
    let trace_text = fs::read_to_string(&trace_path)
        .map_err(|e| CliError::new(format!("reading {trace_path:?}: {e}")))?;
    let trace: Trace = parse_trace(&trace_text)
        .map_err(|e| CliError::new(format!("{}: {e}", trace_path.display())))?;
    let inputs = model.macro_inputs();
    let compiled = CompiledTrace::build(&trace, &inputs)
        .map_err(|e| CliError::new(format!("compiling trace: {e}")))?;
    stats.put_time("time_parse_ms", parse_start);

    let answers = final_answers(&trace);
    let verify_start = Instant::now();
    let stream = TcpStream::connect(&connect)
        .map_err(|e| CliError::new(format!("connecting {connect}: {e}")))?;
    let mut channel = TcpChannel::new(stream);
    let opts = VerifyOptions {
        seed,
        repetitions,
        gc,
    };
    let outcome = run_verification(&compiled, &mut channel, &opts)
        .map_err(|e| CliError::new(format!("verification transport: {e}")))?;
    stats.put_time("time_verify_ms", verify_start);

    certification_stats(&mut stats, &compiled, &answers, seed, repetitions, gc, &outcome);
    write_transcript(&transcript, &outcome)?;
    stats.put_time("time_total_ms", total);
    stats.emit(&stats_path)?;
    Ok(exit_for(&outcome, &answers))
}

fn run() -> Result<u8, CliError> {
    // clap reserves exit status 2 for usage errors, but this tool reports
    // rejected certifications there; route flag problems to 3 instead.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e)
            if matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            ) =>
        {
            let _ = e.print();
            return Ok(EXIT_HOLDS);
        }
        Err(e) => {
            let _ = e.print();
            return Err(CliError::new("invalid usage"));
        }
    };
    match cli.cmd {
        Cmd::Solve { model, out, stats } => cmd_solve(model, out, stats),
        Cmd::Certify(args) => cmd_certify(args, false),
        Cmd::CertifyGc(args) => cmd_certify(args, true),
        Cmd::ServeProver {
            model,
            listen,
            trace_out,
            stats,
        } => cmd_serve_prover(model, listen, trace_out, stats),
        Cmd::RunVerifier {
            model,
            trace,
            connect,
            seed,
            repetitions,
            gc,
            stats,
            transcript,
        } => cmd_run_verifier(
            model, trace, connect, seed, repetitions, gc, stats, transcript,
        ),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            if e.message != "invalid usage" {
                eprintln!("certikit: {}", e.message);
            }
            ExitCode::from(EXIT_USAGE)
        }
    }
}
