//! `sdelab` command-line front end.
//!
//! Exit codes: 0 success, 1 acceptance failure or analysis error,
//! 2 simulation fault, 3 quadrature accuracy fault, 4 configuration error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sdelab::acceptance::{run_all, AcceptanceOptions};
use sdelab::config::ExperimentConfig;
use sdelab::engine::{run_ensemble, Ensemble};
use sdelab::model::RegimeReport;
use sdelab::noise::make_noise;
use sdelab::oracle::ito_error_scan;
use sdelab::report::{
    compute_statistics, write_decade_csv, write_ito_csv, write_path_csv, write_report_csv,
    write_summary_csv, CsvMeta,
};
use sdelab::{LabError, Result};

#[derive(Debug, Parser)]
#[command(
    name = "sdelab",
    version,
    about = "Simulate and verify the stochastic difference equation x' = x(1 + h f(x) + sqrt(h) g(x) xi)"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Override the master seed of the noise streams.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Number of worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Run statistics even where the regime or noise law makes them
    /// meaningless.
    #[arg(long, global = true)]
    force: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Classify the model's regime and print the predicted asymptotics.
    Regime {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the ensemble and write path, decade and summary CSVs.
    Simulate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Scan the Itô expansion error over the configured step sizes.
    Ito {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the acceptance criteria.
    Accept {
        /// Run only the criterion with this id (e.g. A5).
        #[arg(long)]
        filter: Option<String>,
    },
    /// Run the ensemble and write the configured statistics to report.csv.
    Report {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 4 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(t.max(1))
            .build_global()
        {
            eprintln!("error: cannot configure {t} threads: {e}");
            return ExitCode::from(4);
        }
    }
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: &Cli) -> Result<u8> {
    match &cli.command {
        Command::Regime { config } => cmd_regime(&load(config, cli)?),
        Command::Simulate { config } => cmd_simulate(&load(config, cli)?),
        Command::Ito { config } => cmd_ito(&load(config, cli)?),
        Command::Report { config } => cmd_report(&load(config, cli)?),
        Command::Accept { filter } => cmd_accept(filter.as_deref(), cli),
    }
}

fn load(path: &Path, cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.noise.seed = seed;
    }
    cfg.force |= cli.force;
    Ok(cfg)
}

fn meta(cfg: &ExperimentConfig) -> Result<CsvMeta> {
    Ok(CsvMeta {
        config_hash: cfg.config_hash()?,
        seed: cfg.noise.seed,
    })
}

fn validated(cfg: &ExperimentConfig) -> Result<RegimeReport> {
    let (regime, warnings) = cfg.validate()?;
    for w in warnings {
        eprintln!("warning (forced): {w}");
    }
    Ok(regime)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_else(|| "none".into())
}

fn cmd_regime(cfg: &ExperimentConfig) -> Result<u8> {
    let r = validated(cfg)?;
    println!("case:            {}", r.case_tag.as_str());
    println!("beta:            {}", r.beta);
    println!("L:               {}", r.limit_l);
    println!("lambda:          {}", fmt_opt(r.lambda));
    println!("exact constant:  {}", fmt_opt(r.exact_constant));
    println!("oscillatory:     {}", r.oscillatory);
    println!("ratio_g limit:   {}", fmt_opt(r.ratio_g_limit));
    println!("ratio_f limit:   {}", fmt_opt(r.ratio_f_limit));
    for c in &r.citations {
        println!("cites:           {c}");
    }
    for n in &r.notes {
        println!("note:            {n}");
    }
    std::fs::create_dir_all(&cfg.output_dir)?;
    let text = toml::to_string(&r)
        .map_err(|e| LabError::analysis(format!("cannot serialise regime report: {e}")))?;
    std::fs::write(cfg.output_dir.join("regime.toml"), text)?;
    Ok(0)
}

fn simulate(cfg: &ExperimentConfig, regime: &RegimeReport) -> Result<Ensemble> {
    let source = make_noise(cfg.noise.spec(), cfg.noise.seed)?;
    run_ensemble(
        &cfg.model,
        &source,
        cfg.n_paths,
        cfg.n_steps,
        cfg.resolved_lambda(regime),
        cfg.resolved_mu(regime),
    )
}

fn cmd_simulate(cfg: &ExperimentConfig) -> Result<u8> {
    let regime = validated(cfg)?;
    let ens = simulate(cfg, &regime)?;
    let meta = meta(cfg)?;
    let dir = &cfg.output_dir;
    for p in &ens.paths {
        write_path_csv(
            &dir.join(format!("path_{:05}.csv", p.meta.stream)),
            p,
            &meta,
        )?;
        write_decade_csv(
            &dir.join(format!("decades_{:05}.csv", p.meta.stream)),
            p,
            &meta,
        )?;
    }
    write_summary_csv(&dir.join("summary.csv"), &ens.summary, &meta)?;
    let s = &ens.summary;
    println!("paths:                 {}", s.count());
    println!("median ln|x_N|:        {}", s.median(|t| t.log_abs_x));
    println!(
        "fraction |x_N| < {}: {}",
        cfg.threshold,
        s.frac_below(cfg.threshold)
    );
    println!("output:                {}", dir.display());
    Ok(0)
}

fn cmd_ito(cfg: &ExperimentConfig) -> Result<u8> {
    cfg.validate()?;
    let ito = cfg
        .ito
        .as_ref()
        .ok_or_else(|| LabError::config("ito", "missing [ito] section"))?;
    let scan = ito_error_scan(&ito.phi, ito.f, ito.g, &ito.h_grid, &cfg.noise.spec())?;
    write_ito_csv(&cfg.output_dir.join("ito.csv"), &scan.reports, &meta(cfg)?)?;
    for r in &scan.reports {
        println!(
            "h={:<10e} lhs={:<24e} rhs={:<24e} err={:<12e} norm_err={:e}",
            r.h, r.lhs, r.rhs, r.err, r.norm_err
        );
    }
    match scan.monotone {
        None => println!("trend check skipped: grid has a single step size"),
        Some(true) => println!("PASS: normalised error decreases along the grid"),
        Some(false) => println!("FAIL: normalised error does not decrease along the grid"),
    }
    Ok(0)
}

fn cmd_report(cfg: &ExperimentConfig) -> Result<u8> {
    let regime = validated(cfg)?;
    let ens = simulate(cfg, &regime)?;
    let source = make_noise(cfg.noise.spec(), cfg.noise.seed)?;
    let rows = compute_statistics(cfg, &regime, &ens.paths, &source)?;
    write_report_csv(&cfg.output_dir.join("report.csv"), &rows, &meta(cfg)?)?;
    for r in rows.iter().filter(|r| r.stream.is_none()) {
        println!(
            "{:<40} {:<24e} predicted {:<10}  [{}]",
            r.statistic,
            r.value,
            fmt_opt(r.predicted),
            r.citation
        );
    }
    Ok(0)
}

fn cmd_accept(filter: Option<&str>, cli: &Cli) -> Result<u8> {
    let opts = AcceptanceOptions {
        seed: cli.seed,
        threads: None,
    };
    let outcomes = run_all(filter, &opts)?;
    println!(
        "{:<4} | {:<42} | {:<22} | {:<13} | {:<10} | verdict",
        "id", "check", "target", "measured", "tolerance"
    );
    for o in &outcomes {
        for row in o.table_rows() {
            println!(
                "{:<4} | {:<42} | {:<22} | {:<13} | {:<10} | {}",
                row[0], row[1], row[2], row[3], row[4], row[5]
            );
        }
    }
    println!();
    for o in &outcomes {
        println!("{}", o.summary_line());
    }
    Ok(if outcomes.iter().all(|o| o.pass()) {
        0
    } else {
        1
    })
}
