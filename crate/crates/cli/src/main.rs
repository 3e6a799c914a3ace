// SPDX-License-Identifier: Apache-2.0
// Copyright The amrt Authors

//! `amrt`: verify and assemble functions, build region images, run
//! scenarios and summarize their metrics.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};

use amrt_core::apps;
use amrt_core::fabric::{build_dataset, run_scenario, ConfigError, MetricsBundle, Scenario};
use amrt_core::verifier::verify;
use amrt_core::vm::isa::{decode_program, encode_program, Instruction};
use amrt_core::vm::{assemble, disassemble};

const EXIT_REJECTED: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_VIOLATION: u8 = 3;

#[derive(Parser)]
#[command(name = "amrt", version, about = "Active-message runtime simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Verify a function and print the JSON report. Exits 1 if rejected.
    Verify {
        /// Assembly (`.s`) or encoded bytecode (`.bin`).
        file: Option<PathBuf>,
        /// Verify a bundled app instead of a file.
        #[arg(long, conflicts_with = "file")]
        app: Option<String>,
        /// Region id for bundled apps and `.default REGION`.
        #[arg(long, default_value_t = 1)]
        region: u8,
    },
    /// Assemble to encoded bytecode, or disassemble with `--reverse`.
    Assemble {
        file: PathBuf,
        #[arg(long, short)]
        out: Option<PathBuf>,
        #[arg(long)]
        reverse: bool,
    },
    /// Write the image of one region declared in a scenario.
    Mkregion {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        region: u8,
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = ImageFormat::Bin)]
        format: ImageFormat,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a scenario and write its metrics bundle and trace.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, short)]
        out: PathBuf,
        /// Skip the event trace.
        #[arg(long)]
        no_trace: bool,
    },
    /// Print the summary table of a metrics bundle.
    Report {
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ImageFormat {
    Bin,
    Hex,
}

/// An error with its exit status.
struct Failure(u8, anyhow::Error);

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast_ref::<ConfigError>() {
            Some(_) => Failure(EXIT_CONFIG, e),
            None => Failure(1, e),
        }
    }
}

type Res<T> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let r = match cli.cmd {
        Cmd::Verify { file, app, region } => cmd_verify(file.as_deref(), app.as_deref(), region),
        Cmd::Assemble { file, out, reverse } => cmd_assemble(&file, out.as_deref(), reverse).map_err(Into::into),
        Cmd::Mkregion { scenario, region, out, format, seed } => cmd_mkregion(&scenario, region, &out, format, seed).map_err(Into::into),
        Cmd::Run { scenario, seed, out, no_trace } => cmd_run(&scenario, seed, &out, !no_trace),
        Cmd::Report { out, json } => cmd_report(&out, json).map_err(Into::into),
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure(code, e)) => {
            eprintln!("amrt: {e:#}");
            ExitCode::from(code)
        }
    }
}

/// Writes to stdout; a reader that went away is not an error.
fn emit(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn load_program(path: &Path, region: u8) -> anyhow::Result<Vec<Instruction>> {
    if path.extension().is_some_and(|e| e == "bin") {
        let b = fs::read(path).with_context(|| path.display().to_string())?;
        return Ok(decode_program(&b)?);
    }
    let text = fs::read_to_string(path).with_context(|| path.display().to_string())?;
    Ok(assemble(&format!(".default REGION, {region}\n{text}")).with_context(|| path.display().to_string())?)
}

fn cmd_verify(file: Option<&Path>, app: Option<&str>, region: u8) -> Res<()> {
    let code = match (file, app) {
        (Some(p), _) => load_program(p, region)?,
        (None, Some(name)) => {
            let src = apps::source(name).with_context(|| format!("unknown app {name}"))?;
            apps::assemble_app(src, &[("REGION", region as i64)]).map_err(anyhow::Error::from)?
        }
        (None, None) => return Err(anyhow::anyhow!("give a file or --app").into()),
    };
    let report = verify(&code);
    emit(&format!("{:#}\n", report.to_json()));
    if report.is_accepted() {
        Ok(())
    } else {
        Err(Failure(EXIT_REJECTED, anyhow::anyhow!("rejected")))
    }
}

fn cmd_assemble(file: &Path, out: Option<&Path>, reverse: bool) -> anyhow::Result<()> {
    if reverse {
        let b = fs::read(file).with_context(|| file.display().to_string())?;
        let text = disassemble(&decode_program(&b)?)?;
        return match out {
            Some(o) => Ok(fs::write(o, text)?),
            None => Ok(emit(&text)),
        };
    }
    let code = load_program(file, 1)?;
    let out = out.map_or_else(|| file.with_extension("bin"), Path::to_path_buf);
    fs::write(&out, encode_program(&code))?;
    eprintln!("{}: {} instructions", out.display(), code.len());
    Ok(())
}

fn load_scenario(path: &Path, seed: Option<u64>) -> anyhow::Result<Scenario> {
    let mut s = Scenario::load(path)?;
    if let Some(seed) = seed {
        s.seed = seed;
    }
    s.validate()?;
    Ok(s)
}

fn cmd_mkregion(scenario: &Path, region: u8, out: &Path, format: ImageFormat, seed: Option<u64>) -> anyhow::Result<()> {
    let s = load_scenario(scenario, seed)?;
    let Some(spec) = s.regions.iter().find(|r| r.id == region) else {
        bail!(ConfigError::Invalid(format!("scenario declares no region {region}")));
    };
    let (bytes, keys) = build_dataset(&spec.data, s.seed)?;
    match format {
        ImageFormat::Bin => fs::write(out, &bytes)?,
        ImageFormat::Hex => {
            let mut w = BufWriter::new(fs::File::create(out)?);
            writeln!(w, "# region {region}, {} bytes", bytes.len())?;
            for line in bytes.chunks(32) {
                writeln!(w, "{}", hex::encode(line))?;
            }
            w.flush()?;
        }
    }
    eprintln!("{}: {} bytes, {} keys", out.display(), bytes.len(), keys.count);
    Ok(())
}

fn cmd_run(scenario: &Path, seed: Option<u64>, out: &Path, trace: bool) -> Res<()> {
    let mut s = load_scenario(scenario, seed)?;
    s.metrics.trace |= trace;
    let run = run_scenario(&s).map_err(anyhow::Error::from)?;
    let write = || -> anyhow::Result<()> {
        run.metrics.write_dir(out).with_context(|| out.display().to_string())?;
        fs::write(out.join("scenario.toml"), s.to_toml())?;
        let mut w = BufWriter::new(fs::File::create(out.join("trace.jsonl"))?);
        run.trace.write_jsonl(&mut w)?;
        w.flush()?;
        Ok(())
    };
    write()?;
    emit(&run.metrics.summary());
    if run.trace.truncated > 0 {
        eprintln!("amrt: trace truncated, {} events not recorded", run.trace.truncated);
    }
    if !run.metrics.violations.is_empty() {
        return Err(Failure(EXIT_VIOLATION, anyhow::anyhow!("{} invariant violations", run.metrics.violations.len())));
    }
    Ok(())
}

fn cmd_report(out: &Path, json: bool) -> anyhow::Result<()> {
    let m = MetricsBundle::read_dir(out).with_context(|| out.display().to_string())?;
    if json {
        emit(&(m.to_json() + "\n"));
    } else {
        emit(&m.summary());
    }
    Ok(())
}
