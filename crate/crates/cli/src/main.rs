use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ambc_qrl::harness::{self, AgentConfig, ExperimentConfig, ExperimentSummary, SweepParam};
use ambc_qrl::selftest;

#[derive(Parser)]
#[command(name = "ambc-qrl", version, about = "D2D spectrum access with backscatter: quantum-circuit RL, DQL and baselines")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment over every configured seed.
    Run(Overrides),
    /// Run a grid over p_access or p_protected for several agents.
    Sweep {
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long, value_enum, default_value = "p-access")]
        param: ParamArg,
        /// Comma-separated grid values.
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9")]
        values: Vec<f64>,
        /// Comma-separated agent names.
        #[arg(long, value_delimiter = ',', default_value = "quantum-3,dql-32,greedy,random")]
        agents: Vec<String>,
    },
    /// Parameter counts, iteration time and throughput for DQL-16/32 and
    /// the circuit with 1, 3 and 5 layers.
    Table1(Overrides),
    /// Oracle and invariant checks.
    Selftest {
        /// Smaller instance counts.
        #[arg(long)]
        quick: bool,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum ParamArg {
    PAccess,
    PProtected,
}

#[derive(Args)]
struct Overrides {
    /// TOML experiment file; unset fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    p_access: Option<f64>,
    #[arg(long)]
    p_protected: Option<f64>,
    /// random, greedy, dql-<width> or quantum-<layers>.
    #[arg(long)]
    agent: Option<String>,
    /// Run this single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of seeds 0..n, instead of the configured list.
    #[arg(long, conflicts_with = "seed")]
    seeds: Option<u64>,
    #[arg(long)]
    steps: Option<u64>,
    /// Directory for per-seed CSVs and the summary.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Record per-iteration wall-clock in the CSV.
    #[arg(long)]
    timing: bool,
}

impl Overrides {
    fn resolve(&self) -> ambc_qrl::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(p) = self.p_access {
            cfg.env.p_access = p;
        }
        if let Some(p) = self.p_protected {
            cfg.env.p_protected = p;
        }
        if let Some(name) = &self.agent {
            cfg.agent = AgentConfig::from_name(name)?;
        }
        if let Some(seed) = self.seed {
            cfg.seeds = vec![seed];
        }
        if let Some(n) = self.seeds {
            cfg.seeds = (0..n).collect();
        }
        if let Some(steps) = self.steps {
            cfg.total_steps = steps;
        }
        if let Some(out) = &self.out {
            cfg.output = Some(out.clone());
        }
        cfg.timing |= self.timing;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn print_summaries(rows: &[ExperimentSummary]) {
    println!("{:<12} {:>6} {:>10} {:>16} {:>10} {:>14}", "agent", "seeds", "params", "throughput_mbps", "std_mbps", "iter_seconds");
    for r in rows {
        let t = r.mean_iter_seconds.map_or("-".to_string(), |t| format!("{t:.3e}"));
        println!(
            "{:<12} {:>6} {:>10} {:>16.4} {:>10.4} {:>14}",
            r.label,
            r.seeds,
            r.param_count,
            r.mean_throughput / 1e6,
            r.std_throughput / 1e6,
            t
        );
    }
}

fn write_summary_file(cfg: &ExperimentConfig, name: &str, rows: &[ExperimentSummary]) -> ambc_qrl::Result<()> {
    if let Some(dir) = &cfg.output {
        std::fs::create_dir_all(dir)?;
        harness::write_summaries(std::fs::File::create(dir.join(name))?, rows)?;
    }
    Ok(())
}

fn execute(command: Command) -> ambc_qrl::Result<bool> {
    match command {
        Command::Run(o) => {
            let cfg = o.resolve()?;
            let result = harness::run_experiment(&cfg)?;
            for run in &result.runs {
                println!(
                    "seed {:>4}: running avg {:.4} Mbps, last {} slots {:.4} Mbps",
                    run.summary.seed,
                    run.summary.final_running_avg / 1e6,
                    cfg.eval_window,
                    run.summary.window_avg / 1e6
                );
            }
            let rows = [result.summary];
            print_summaries(&rows);
            write_summary_file(&cfg, "summary.csv", &rows)?;
        }
        Command::Sweep { overrides, param, values, agents } => {
            let cfg = overrides.resolve()?;
            // a name matching the configured agent keeps its configured hyperparameters
            let agents = agents
                .iter()
                .map(|a| if *a == cfg.agent.label() { Ok(cfg.agent.clone()) } else { AgentConfig::from_name(a) })
                .collect::<ambc_qrl::Result<Vec<_>>>()?;
            let param = match param {
                ParamArg::PAccess => SweepParam::PAccess,
                ParamArg::PProtected => SweepParam::PProtected,
            };
            let points = harness::sweep(&cfg, param, &values, &agents)?;
            println!("{:<12} {:>8} {:<12} {:>16} {:>10}", "param", "value", "agent", "throughput_mbps", "std_mbps");
            for p in &points {
                println!(
                    "{:<12} {:>8} {:<12} {:>16.4} {:>10.4}",
                    p.param,
                    p.value,
                    p.summary.label,
                    p.summary.mean_throughput / 1e6,
                    p.summary.std_throughput / 1e6
                );
            }
            if let Some(dir) = &cfg.output {
                std::fs::create_dir_all(dir)?;
                harness::write_sweep(std::fs::File::create(dir.join("sweep.csv"))?, &points)?;
            }
        }
        Command::Table1(o) => {
            let cfg = o.resolve()?;
            let rows = harness::table1(&cfg)?;
            print_summaries(&rows);
            write_summary_file(&cfg, "table1.csv", &rows)?;
        }
        Command::Selftest { quick } => {
            let checks = selftest::run_all(if quick { selftest::Level::Quick } else { selftest::Level::Full })?;
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            return Ok(checks.iter().all(|c| c.passed));
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 1 } else { 2 })
        }
    }
}
