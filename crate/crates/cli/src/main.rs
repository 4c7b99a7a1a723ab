use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use opinf_sfom::costmodel::CostParams;
use opinf_sfom_cli::commands::{
    cmd_cost, cmd_decompose, cmd_diagnose, cmd_generate, cmd_infer, cmd_simulate, Mode,
};
use opinf_sfom_cli::config::PipelineConfig;
use opinf_sfom_cli::sweep::{sweep_interface, sweep_positions, write_sweep_csv};
use opinf_sfom_cli::CliError;

/// Learns coupled reduced/full-order dynamical models from snapshot data
/// and simulates them.
#[derive(Parser)]
#[command(name = "opinf-sfom", version, about)]
struct Cli {
    /// Pipeline configuration file (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory; overrides the config's `outputs` entry.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Seed for pooling and subsample selection.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the reference solver and write the snapshot data set.
    Generate,
    /// Write the domain decomposition derived from the config.
    Decompose,
    /// Train a model and write the bundle plus provenance report.
    Infer {
        /// coupled, global-opinf, or global-sfom.
        #[arg(long, default_value = "coupled")]
        mode: Mode,
    },
    /// Simulate a stored model bundle and report errors vs the reference.
    Simulate {
        /// Model bundle directory written by `infer`.
        #[arg(long)]
        model: PathBuf,
    },
    /// Export spectra, Gershgorin disks, and stability verdicts.
    Diagnose {
        #[arg(long)]
        model: PathBuf,
    },
    /// Retrain across interface positions; record error/time/stability.
    SweepInterface {
        #[arg(long)]
        from: f64,
        #[arg(long)]
        to: f64,
        #[arg(long, default_value_t = 0.01)]
        step: f64,
        #[arg(long, default_value_t = 10)]
        repeats: usize,
    },
    /// Evaluate the asymptotic cost expressions.
    Cost(CostArgs),
}

#[derive(Args)]
struct CostArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    n_fom: usize,
    #[arg(long, default_value_t = 0)]
    n_interface: usize,
    #[arg(long, default_value_t = 1)]
    n_train: usize,
    #[arg(long, default_value_t = 1)]
    n_steps: usize,
    #[arg(long)]
    r: usize,
    #[arg(long)]
    r_global: usize,
    #[arg(long)]
    stencil: usize,
    #[arg(long, default_value_t = 1)]
    poly_order: usize,
    #[arg(long, default_value_t = 1)]
    spatial_dim: usize,
    /// Also write speedup grids as CSV into the output directory.
    #[arg(long, default_value_t = false)]
    grids: bool,
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("this command requires --config".into()))?;
    PipelineConfig::from_file(path)
}

fn out_dir(cli: &Cli, cfg: Option<&PipelineConfig>) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| cfg.and_then(|c| c.outputs.clone()))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Generate => {
            let cfg = load_config(cli)?;
            cmd_generate(&cfg, &out_dir(cli, Some(&cfg)))
        }
        Command::Decompose => {
            let cfg = load_config(cli)?;
            cmd_decompose(&cfg, &out_dir(cli, Some(&cfg)))
        }
        Command::Infer { mode } => {
            let cfg = load_config(cli)?;
            cmd_infer(&cfg, &out_dir(cli, Some(&cfg)), *mode, cli.seed)
        }
        Command::Simulate { model } => {
            let cfg = load_config(cli)?;
            cmd_simulate(&cfg, model, &out_dir(cli, Some(&cfg)))
        }
        Command::Diagnose { model } => cmd_diagnose(model, &out_dir(cli, None)),
        Command::SweepInterface {
            from,
            to,
            step,
            repeats,
        } => {
            let cfg = load_config(cli)?;
            let positions = sweep_positions(*from, *to, *step)?;
            let parallel = cli.workers != 1;
            let rows = sweep_interface(&cfg, &positions, *repeats, cli.seed, parallel)?;
            let dir = out_dir(cli, Some(&cfg));
            std::fs::create_dir_all(&dir)
                .map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
            write_sweep_csv(&dir.join("sweep.csv"), &rows)
        }
        Command::Cost(args) => {
            let params = CostParams {
                n_total: args.n,
                n_fom: args.n_fom,
                n_interface: args.n_interface,
                n_train: args.n_train,
                n_steps: args.n_steps,
                rom_dim: args.r,
                global_rom_dim: args.r_global,
                stencil: args.stencil,
                poly_order: args.poly_order,
                spatial_dim: args.spatial_dim,
            };
            let grid_dir = args.grids.then(|| out_dir(cli, None));
            let text = cmd_cost(&params, grid_dir.as_deref())?;
            println!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if cli.workers > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.workers)
            .build_global()
        {
            eprintln!("error: cannot configure {} workers: {e}", cli.workers);
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
