use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;

use clap::{Args, ValueEnum};

use cvqkd::rates::{linear_grid, sweep, Curve, RateReport};

use crate::{CliError, ConfigArg, PointArgs};

/// Bumped whenever the column set changes.
pub const CSV_VERSION: u32 = 1;

pub const CSV_COLUMNS: [&str; 8] = [
    "distance_km",
    "i_ab_bits",
    "i_be_bits",
    "chi_be_bits",
    "d_shannon_raw",
    "d_holevo_raw",
    "d_shannon_eff",
    "d_holevo_eff",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CurveKind {
    Distance,
}

#[derive(Debug, Args)]
pub struct RatesArgs {
    #[command(flatten)]
    pub point: PointArgs,
    /// Reconciliation efficiency.
    #[arg(long, default_value_t = 0.898)]
    pub beta: f64,
    /// Frame-failure probability.
    #[arg(long = "p-fail", default_value_t = 0.0)]
    pub p_fail: f64,
    /// Sweep instead of a single point.
    #[arg(long)]
    pub curve: Option<CurveKind>,
    #[arg(long, default_value_t = 0.0)]
    pub from: f64,
    #[arg(long, default_value_t = 100.0)]
    pub to: f64,
    #[arg(long, default_value_t = 1.0)]
    pub step: f64,
    /// Fiber attenuation for distance curves.
    #[arg(long = "loss-db-km", default_value_t = 0.2)]
    pub loss_db_km: f64,
    /// Write CSV here instead of standard output.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Recorded in the output; the rates themselves are deterministic.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub config: ConfigArg,
}

fn bits_row(distance: Option<f64>, r: &RateReport) -> Vec<String> {
    let mut row = vec![distance.map_or(String::new(), |d| format!("{d}"))];
    row.extend(
        [
            r.i_ab,
            r.i_be,
            r.chi_be,
            r.delta_shannon_raw,
            r.delta_holevo_raw,
            r.delta_shannon_eff,
            r.delta_holevo_eff,
        ]
        .iter()
        .map(|v| format!("{v:.6}")),
    );
    row
}

fn write_csv<W: Write>(
    mut out: W,
    args: &RatesArgs,
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<(), CliError> {
    writeln!(
        out,
        "# qkd-rates v{CSV_VERSION} seed={} beta={} p_fail={} loss_db_km={}",
        args.seed, args.beta, args.p_fail, args.loss_db_km
    )?;
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| CliError::Runtime(e.to_string());
    w.write_record(CSV_COLUMNS).map_err(csv_err)?;
    for row in rows {
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn print_table(r: &RateReport, seed: u64) {
    println!("# seed = {seed}");
    println!("{:<22} {:>12} {:>12}", "quantity", "bits/symbol", "kb/s");
    let kb = |b: f64| r.per_second(b) / 1e3;
    let rows = [
        ("I_AB", r.i_ab),
        ("I_BE (individual)", r.i_be),
        ("chi_BE (Holevo)", r.chi_be),
        ("dI Shannon raw", r.delta_shannon_raw),
        ("dI Holevo raw", r.delta_holevo_raw),
        ("dI Shannon effective", r.delta_shannon_eff),
        ("dI Holevo effective", r.delta_holevo_eff),
    ];
    for (name, bits) in rows {
        println!("{name:<22} {bits:>12.4} {:>12.2}", kb(bits));
    }
    println!("beta = {}, p_fail = {}, rep = {} Hz", r.beta, r.p_fail, r.rep_rate);
}

pub fn run(args: &RatesArgs) -> Result<(), CliError> {
    let op = args.point.operating_point(args.beta, args.p_fail)?;
    let bad = |e: cvqkd::rates::RateError| CliError::Usage(e.to_string());
    match args.curve {
        None => {
            let report = op.rates().map_err(bad)?;
            print_table(&report, args.seed);
            if let Some(path) = &args.csv {
                write_csv(File::create(path)?, args, [bits_row(None, &report)])?;
            }
        }
        Some(CurveKind::Distance) => {
            if !(args.step > 0.0) || args.to < args.from || args.from < 0.0 {
                return Err(CliError::Usage(format!(
                    "bad distance grid {}..{} step {}",
                    args.from, args.to, args.step
                )));
            }
            let curve = Curve::Distance {
                loss_db_per_km: args.loss_db_km,
            };
            let points = sweep(curve, &linear_grid(args.from, args.to, args.step), &op).map_err(bad)?;
            let rows = points.iter().map(|p| bits_row(Some(p.x), &p.report));
            match &args.csv {
                Some(path) => write_csv(File::create(path)?, args, rows)?,
                None => write_csv(io::stdout().lock(), args, rows)?,
            }
        }
    }
    Ok(())
}
