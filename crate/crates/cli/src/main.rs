use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use orbitron_cli::config::{parse_override, RunConfig};
use orbitron_cli::search::SearchConfig;
use orbitron_cli::{execute, execute_search, Command, Outcome, EXIT_ERROR};

/// Equilibria, stability and Monte Carlo sheaves of a spinning dipole
/// levitating in the Orbitron field.
#[derive(Debug, Parser)]
#[command(name = "orbitron", version)]
struct Cli {
    /// Run configuration (TOML, SI units).
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random draw.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for reports and trajectories.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Orbital periods to integrate (simulate and sheaf).
    #[arg(long, global = true)]
    turns: Option<f64>,
    /// Sheaf sample count.
    #[arg(long, global = true)]
    samples: Option<usize>,
    /// Override any config value, e.g. `--set field.kappa=300`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Field value and Jacobian at the given points (default: the orbit point).
    FieldProbe {
        /// Point as `x,y,z` in metres; repeatable.
        #[arg(long = "point", value_parser = parse_point)]
        points: Vec<[f64; 3]>,
    },
    /// Relative equilibrium and its residuals.
    Equilibrium,
    /// Reduced second variation, Sylvester minors and analytic conditions.
    Stability,
    /// Single trajectory written to trajectory.csv.
    Simulate,
    /// Monte Carlo perturbation sheaf.
    Sheaf,
    /// All of the above in one report.
    FullReport,
    /// Seeded search for a stable configuration; `--config` names a search
    /// configuration here.
    Search,
}

fn parse_point(s: &str) -> Result<[f64; 3], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|c| c.trim().parse::<f64>().map_err(|e| format!("`{c}`: {e}")))
        .collect::<Result<_, _>>()?;
    <[f64; 3]>::try_from(v).map_err(|_| "expected x,y,z".to_string())
}

fn overrides(cli: &Cli) -> Result<Vec<(String, toml::Value)>> {
    let mut out = cli
        .overrides
        .iter()
        .map(|o| parse_override(o))
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(seed) = cli.seed {
        out.push(("seed".into(), toml::Value::Integer(i64::try_from(seed).context("seed too large")?)));
    }
    if let Some(t) = cli.turns {
        out.push(("integrator.turns".into(), toml::Value::Float(t)));
        out.push(("sheaf.turns".into(), toml::Value::Float(t)));
    }
    if let Some(n) = cli.samples {
        out.push(("sheaf.samples".into(), toml::Value::Integer(n as i64)));
    }
    if let Some(dir) = &cli.out {
        out.push(("output.dir".into(), toml::Value::String(dir.display().to_string())));
    }
    Ok(out)
}

fn load_search(cli: &Cli, ov: &[(String, toml::Value)]) -> Result<SearchConfig> {
    let mut table = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str::<toml::Table>(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => toml::Table::new(),
    };
    for (k, v) in ov {
        let k = match k.as_str() {
            "output.dir" | "integrator.turns" => continue,
            "seed" => {
                orbitron_cli::config::apply_override(&mut table, "sheaf.seed", v.clone())?;
                "seed"
            }
            "sheaf.turns" => "sheaf.n_turns",
            "sheaf.samples" => "sheaf.n_samples",
            other => other,
        };
        orbitron_cli::config::apply_override(&mut table, k, v.clone())?;
    }
    let cfg: SearchConfig = table.try_into().context("invalid search configuration")?;
    cfg.sheaf.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<Outcome> {
    let ov = overrides(cli)?;
    if let Cmd::Search = cli.command {
        let cfg = load_search(cli, &ov)?;
        let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
        return Ok(execute_search(&cfg, &out)?.1);
    }
    let Some(path) = &cli.config else {
        bail!("--config is required");
    };
    let cfg = RunConfig::load(path, &ov)?;
    let cmd = match &cli.command {
        Cmd::FieldProbe { points } => Command::FieldProbe { points: points.clone() },
        Cmd::Equilibrium => Command::Equilibrium,
        Cmd::Stability => Command::Stability,
        Cmd::Simulate => Command::Simulate,
        Cmd::Sheaf => Command::Sheaf,
        Cmd::FullReport => Command::FullReport,
        Cmd::Search => unreachable!(),
    };
    execute(&cmd, &cfg, &cfg.output.dir)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(outcome) => {
            println!("{}", serde_json::to_string_pretty(&outcome.report).expect("report serializes"));
            ExitCode::from(outcome.exit_code as u8)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR as u8)
        }
    }
}
