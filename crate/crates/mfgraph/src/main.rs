use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mfgraph::config::{ConcentrationConfig, ExperimentConfig};
use mfgraph::harness::{run_experiment, write_outputs};
use mfgraph::io::{format_semimetric, read_edge_list, write_file};
use mfgraph::Result;
use mfgraph_core::graph::{graph_stats, verify_concentration, ConcentrationRow};
use mfgraph_core::models::BuiltinModel;
use mfgraph_core::semimetric::{build_semimetric, SemimetricOptions};

#[derive(Parser)]
#[command(name = "mfgraph", version, about = "Mean-field particle systems on graphs")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run an experiment config; writes CSVs and summary.json.
    Run {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Like `run`, plus plateau-vs-N table and log-log slope.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Degree statistics of an edge-list file.
    GraphStats {
        edge_list: PathBuf,
        #[arg(long)]
        p: f64,
    },
    /// Tabulate the semimetric of a builtin model.
    Semimetric {
        model: String,
        #[arg(long)]
        sigma: f64,
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Degree concentration table for a graph family config.
    VerifyConcentration { config: PathBuf },
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Run { config, out } => experiment(config, out, false),
        Cmd::Sweep { config, out } => experiment(config, out, true),
        Cmd::GraphStats { edge_list, p } => {
            let g = read_edge_list(&edge_list)?;
            let s = graph_stats(&g, p);
            println!("n_vertices {}", g.n_vertices());
            println!("edges {}", g.edge_count());
            println!("alpha {}", g.alpha());
            println!("d_ng {}", s.d_ng);
            println!("i_ng {}", s.i_ng);
            Ok(())
        }
        Cmd::Semimetric { model, sigma, dump } => {
            let m = model.parse::<BuiltinModel>()?.spec(sigma, 0.0)?;
            let kappa = |r: f64| m.kappa_at(r);
            let t = build_semimetric(&kappa, sigma, SemimetricOptions::default())?;
            let lemma = t.validate_lemma1(&kappa, sigma);
            println!("r0 {}\nr1 {}\nc {}\nc_f {}", t.r0, t.r1, t.c, t.c_f);
            println!("lemma1_max_residual {} passed {}", lemma.max_residual, lemma.passed);
            if let Some(path) = dump {
                write_file(&path, &format_semimetric(&t))?;
            }
            Ok(())
        }
        Cmd::VerifyConcentration { config } => {
            let cfg = ConcentrationConfig::load(&config)?;
            let rows = verify_concentration(cfg.family().as_ref(), &cfg.sizes, cfg.n_seeds, cfg.c, cfg.seed)?;
            println!("{}", ConcentrationRow::csv_header());
            for row in rows {
                println!("{row}");
            }
            Ok(())
        }
    }
}

fn experiment(config: PathBuf, out: Option<PathBuf>, sweep: bool) -> Result<()> {
    let cfg = ExperimentConfig::load(&config)?;
    let dir = out.or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let result = run_experiment(&cfg)?;
    let summary = write_outputs(&result, &dir, sweep)?;
    for p in &summary.plateaus {
        println!("N={} plateau={} se={} cells={}", p.param, p.plateau, p.se, p.n_cells);
    }
    if let Some(slope) = summary.sweep_slope {
        println!("log-log slope {slope}");
    }
    for f in &summary.failed_cells {
        eprintln!("blow-up: N={} seed={} step={}", f.n, f.seed, f.step);
    }
    println!("wrote {}", dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(k) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k).build_global() {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
