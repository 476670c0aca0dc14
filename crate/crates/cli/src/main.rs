use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bearing_align::io::{read_scenario_file, write_json_file, write_trajectory_csv_file};
use bearing_align::{
    convergence_analysis, equilibrium_probe, iss_gain_experiment, monte_carlo, validate_scenario, Error, LandmarkMode,
    MonteCarloOptions, ProbeOptions, Scenario, Simulator,
};
use clap::{Args, Parser, Subcommand};

const EXIT_VALIDATION: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_PARSE: u8 = 3;
const EXIT_USAGE: u8 = 4;

#[derive(Debug, Parser)]
#[command(version, about = "Bearing-only orientation alignment for leader-follower networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a scenario against the network and geometry requirements
    Validate(Common),
    /// Simulate one scenario and write the trajectory and convergence report
    Run(Common),
    /// Monte Carlo over random initial orientations, plus the gain/spread table
    Sweep(Common),
    /// Enumerate and probe the critical points of one agent's error function
    Equilibria(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// Scenario JSON; the bundled eight-agent scenario when omitted
    #[arg(long)]
    scenario: Option<PathBuf>,

    /// Output directory
    #[arg(long, default_value = "out")]
    out: PathBuf,

    /// Random seed for sweeps and perturbations
    #[arg(long, default_value_t = 42)]
    seed: u64,

    /// Integration step, s
    #[arg(long, allow_negative_numbers = true)]
    dt: Option<f64>,

    /// Simulated time, s
    #[arg(long, allow_negative_numbers = true)]
    t_end: Option<f64>,

    /// Monte Carlo trials for sweep
    #[arg(long, default_value_t = 100)]
    trials: usize,

    #[arg(long, value_parser = parse_mode)]
    landmark_mode: Option<LandmarkMode>,

    /// Agent to probe for equilibria
    #[arg(long, default_value_t = 2)]
    agent: usize,

    /// Smallest spectral spread requested in the gain table
    #[arg(long, default_value_t = 0.1)]
    target_spread: f64,
}

fn parse_mode(s: &str) -> Result<LandmarkMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Exit status and message for a failed command.
struct Failure(u8, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InvalidScenario(_) => EXIT_VALIDATION,
            Error::Parse(_) => EXIT_PARSE,
            Error::InvalidArgument(_) => EXIT_USAGE,
            _ => EXIT_RUNTIME,
        };
        Failure(code, e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

impl Common {
    /// Scenario with command-line overrides merged in. Validation happens
    /// later, on the merged result.
    fn scenario(&self) -> Result<Scenario, Failure> {
        let mut s = match &self.scenario {
            Some(p) => read_scenario_file(p).map_err(|e| match e {
                Error::Io(m) => Failure(EXIT_PARSE, format!("cannot read {}: {m}", p.display())),
                other => other.into(),
            })?,
            None => Scenario::eight_agent_default(),
        };
        if let Some(dt) = self.dt {
            s.integration.dt = dt;
        }
        if let Some(t) = self.t_end {
            s.integration.t_end = t;
        }
        if let Some(m) = self.landmark_mode {
            s.landmark_mode = m;
        }
        Ok(s)
    }

    fn out_dir(&self) -> Result<&Path, Failure> {
        fs::create_dir_all(&self.out)
            .map_err(|e| Failure(EXIT_RUNTIME, format!("cannot create {}: {e}", self.out.display())))?;
        Ok(&self.out)
    }
}

fn validate(c: &Common) -> CmdResult {
    let s = c.scenario()?;
    let report = validate_scenario(&s);
    if report.passed() {
        println!("scenario ok: {} agents, {} landmarks, mode {}", s.n_agents(), s.landmarks.len(), s.landmark_mode);
        Ok(())
    } else {
        Err(Failure(EXIT_VALIDATION, report.to_string()))
    }
}

fn run(c: &Common) -> CmdResult {
    let s = c.scenario()?;
    log::info!("scenario digest {}", s.digest());
    let log = Simulator::new(&s)?.run()?;
    let report = convergence_analysis(&log, bearing_align::simulator::CONVERGENCE_THRESHOLD);
    let dir = c.out_dir()?;
    write_trajectory_csv_file(&log, &dir.join("trajectory.csv"))?;
    write_json_file(&report, &dir.join("convergence.json"))?;
    println!("t = {} s", log.final_time);
    for a in &report.agents {
        let rate = a.rate.map(|r| format!("  rate {r:.3}/s")).unwrap_or_default();
        println!("agent {}: error {:.3e}{rate}", a.agent, a.terminal_error);
    }
    println!("{}", if report.all_converged { "all agents converged" } else { "not converged" });
    Ok(())
}

fn sweep(c: &Common) -> CmdResult {
    let s = c.scenario()?;
    let defaults = MonteCarloOptions::default();
    let opts =
        MonteCarloOptions { t_end: c.t_end.unwrap_or(defaults.t_end), dt: c.dt.unwrap_or(defaults.dt), ..defaults };
    let dir = c.out_dir()?;
    let mc = monte_carlo(&s, c.trials, c.seed, opts)?;
    write_json_file(&mc, &dir.join("monte_carlo.json"))?;
    println!("monte carlo: {}/{} converged", mc.converged, mc.trials);
    let table = iss_gain_experiment(&s, &[c.target_spread, 1.0], &[0.5, 1.0, 10.0], c.trials, c.seed, opts)?;
    write_json_file(&table, &dir.join("iss_table.json"))?;
    for r in &table.rows {
        println!(
            "spread {:.3} (achieved {:.3}) scale {:>4}: {}/{} converged",
            r.target_spread, r.achieved_spread, r.gain_scale, r.converged, r.trials
        );
    }
    Ok(())
}

fn equilibria(c: &Common) -> CmdResult {
    let s = c.scenario()?;
    validate_scenario(&s).into_result()?;
    let opts = ProbeOptions { seed: c.seed, dt: c.dt.unwrap_or(ProbeOptions::default().dt), ..Default::default() };
    let rep = equilibrium_probe(&s, c.agent, opts)?;
    let dir = c.out_dir()?;
    write_json_file(&rep, &dir.join(format!("equilibria_agent{}.json", c.agent)))?;
    println!("agent {} eigenvalues {:?}", rep.agent, rep.eigenvalues);
    for p in &rep.points {
        println!(
            "{:<8} phi {:.6}  residual {:.1e}  escaped {}/{}  settled {}/{}",
            format!("{:?}", p.kind).to_lowercase(),
            p.phi,
            p.residual,
            p.escaped,
            p.trials,
            p.converged,
            p.trials
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("BEARING_ALIGN_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Validate(c) => validate(c),
        Command::Run(c) => run(c),
        Command::Sweep(c) => sweep(c),
        Command::Equilibria(c) => equilibria(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure(code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
