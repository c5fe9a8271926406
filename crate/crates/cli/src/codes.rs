use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::PathBuf;

use clap::{Args, Subcommand};

use cvqkd::recon::{DegreeProfile, LdpcCode};

use crate::{runtime, CliError, ConfigArg};

#[derive(Debug, Subcommand)]
pub enum CodesCommand {
    /// Construct a PEG code and write it as text.
    #[command(args_override_self = true)]
    Build(BuildArgs),
    /// Check a code file for duplicate edges, 4-cycles and its degree profile.
    #[command(args_override_self = true)]
    Audit(AuditArgs),
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub rate: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    pub file: PathBuf,
    #[command(flatten)]
    pub config: ConfigArg,
}

pub fn run(cmd: &CodesCommand) -> Result<(), CliError> {
    match cmd {
        CodesCommand::Build(a) => build(a),
        CodesCommand::Audit(a) => audit(a),
    }
}

fn build(a: &BuildArgs) -> Result<(), CliError> {
    if !(0.0..1.0).contains(&a.rate) || a.n == 0 {
        return Err(CliError::Usage(format!("need n > 0 and 0 <= rate < 1, got {} {}", a.n, a.rate)));
    }
    let code = LdpcCode::build(a.n, a.rate, a.seed).map_err(runtime)?;
    let mut w = BufWriter::new(File::create(&a.out)?);
    code.write_text(&mut w).map_err(runtime)?;
    w.flush()?;
    println!(
        "wrote {}: n = {}, checks = {}, edges = {}, seed = {}",
        a.out.display(),
        code.n(),
        code.m(),
        code.edges(),
        code.seed()
    );
    Ok(())
}

fn audit(a: &AuditArgs) -> Result<(), CliError> {
    let code = LdpcCode::read_text(BufReader::new(File::open(&a.file)?)).map_err(runtime)?;
    let report = code.audit();
    let mut degrees = code.variable_degrees();
    degrees.sort_unstable();
    let profile_ok = degrees == DegreeProfile::for_rate(code.rate()).degree_sequence(code.n());
    let checks_ok = code.m() == LdpcCode::checks_for(code.n(), code.rate());
    println!("file            {}", a.file.display());
    println!("n / checks      {} / {}", code.n(), code.m());
    println!("rate / seed     {} / {}", code.rate(), code.seed());
    println!("duplicate edges {}", report.duplicate_edges);
    println!("4-cycles        {}", report.four_cycles);
    println!("degree profile  {}", if profile_ok { "ok" } else { "MISMATCH" });
    println!("check count     {}", if checks_ok { "ok" } else { "MISMATCH" });
    if report.is_clean() && profile_ok && checks_ok {
        println!("audit passed");
        Ok(())
    } else {
        Err(CliError::Runtime("audit failed".into()))
    }
}
