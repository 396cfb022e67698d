use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use episens_cli::commands::{self, Context};
use episens_cli::config::LoadedConfig;
use episens_cli::CliError;

#[derive(Parser)]
#[command(name = "episens", version, about = "Two-regime SEIR fitting, forecasting, UQ and sensitivity analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory (default: config `out`, else ./out).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Fit both regimes to their observation windows.
    Fit(Common),
    /// Simulate the two-regime scenario at the configured delay.
    Forecast(Common),
    /// Score the two-regime scenario for each configured delay.
    DelaySweep(Common),
    /// Monte Carlo ensemble over the uncertain factors.
    Uq(Common),
    /// Sensitivity indices, interaction spectrum and conditional curves.
    Gsa(Common),
}

fn run(cli: Cli) -> Result<String, CliError> {
    let (name, common) = match &cli.command {
        Command::Fit(c) => ("fit", c),
        Command::Forecast(c) => ("forecast", c),
        Command::DelaySweep(c) => ("delay-sweep", c),
        Command::Uq(c) => ("uq", c),
        Command::Gsa(c) => ("gsa", c),
    };
    let loaded = LoadedConfig::load(&common.config)?;
    let ctx = Context::new(loaded, common.seed, common.out.clone());
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = common.threads {
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| CliError::Input(format!("thread pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Fit(_) => commands::cmd_fit(&ctx).map(|o| {
            format!("fit: pre r2_avg {:.4}, post r2_avg {:.4}", o.pre.result.r2_avg, o.post.result.r2_avg)
        }),
        Command::Forecast(_) => commands::cmd_forecast(&ctx)
            .map(|s| format!("forecast: {:.0} confirmed on {} (r2 {:.4})", s.total_at_horizon, s.horizon, s.r2)),
        Command::DelaySweep(_) => commands::cmd_delay_sweep(&ctx).map(|rows| {
            let best = rows.iter().max_by(|a, b| a.r2.total_cmp(&b.r2)).expect("non-empty sweep");
            format!("delay-sweep: {} delays, best r2 {:.4} at delay {}", rows.len(), best.r2, best.delay_days)
        }),
        Command::Uq(_) => commands::cmd_uq(&ctx)
            .map(|o| format!("uq: n {}, mean {:.1}, sd {:.1}", o.stats.n, o.stats.mean, o.stats.sd)),
        Command::Gsa(_) => commands::cmd_gsa(&ctx).map(|o| {
            let top = o.report.rank_first_order.iter().position(|&r| r == 1).unwrap_or(0);
            format!("gsa: top factor {}", o.report.factors[top])
        }),
    })
    .map(|msg| format!("{msg} -> {}", ctx.out.display()))
    .map_err(|e| {
        eprintln!("episens {name}: failed");
        e
    })
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
