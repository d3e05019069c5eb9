mod bench;
mod output;
mod verify;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::Value;

use conebellman::engine::{ConvergenceTrace, Schedule, SolveConfig};
use conebellman::error::Error;
use conebellman::ldp::solve_ldp;
use conebellman::lqr::solve_lqr;
use conebellman::problem_file::{Problem, ProblemFile};
use conebellman::ssp::{solve_graph, solve_ssp};

const EXIT_OK: u8 = 0;
const EXIT_DIVERGED: u8 = 2;
const EXIT_INVALID: u8 = 3;
const EXIT_VERIFY: u8 = 4;

#[derive(Parser)]
#[command(
    name = "conebellman",
    version,
    about = "Bellman-equation solvers for SSP, LQR and LDP problems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScheduleArg {
    Jacobi,
    GaussSeidel,
}

impl From<ScheduleArg> for Schedule {
    fn from(s: ScheduleArg) -> Self {
        match s {
            ScheduleArg::Jacobi => Schedule::Jacobi,
            ScheduleArg::GaussSeidel => Schedule::GaussSeidel,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Solve a problem file and write solution.json (and trace.csv)
    Solve {
        file: PathBuf,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        #[arg(long, default_value_t = 100_000)]
        max_iter: usize,
        #[arg(long, value_enum, default_value_t = ScheduleArg::Jacobi)]
        schedule: ScheduleArg,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Also write the convergence trace
        #[arg(long)]
        trace: bool,
    },
    /// Compare the solver against the reference oracles
    Verify {
        file: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Monte Carlo trials per start state (LDP only)
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
    },
    /// Time solves of seeded random instances; CSV on stdout
    Bench {
        #[arg(long, value_enum)]
        class: bench::Class,
        /// Comma-separated instance sizes
        #[arg(long)]
        sizes: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Diverged { .. }
        | Error::MaxIterExceeded { .. }
        | Error::SingularSystem { .. }
        | Error::UnstableGain { .. }
        | Error::NotPositiveDefinite { .. }
        | Error::SingularInnerMatrix => EXIT_DIVERGED,
        Error::CertificationFailed(_) => EXIT_VERIFY,
        _ => EXIT_INVALID,
    }
}

fn fail(err: &Error) -> ExitCode {
    eprintln!("error: {err}");
    ExitCode::from(exit_code(err))
}

fn load(path: &Path) -> Result<Problem, ExitCode> {
    let text = fs::read_to_string(path).map_err(|e| {
        eprintln!("error: cannot read {}: {e}", path.display());
        ExitCode::from(EXIT_INVALID)
    })?;
    let file = ProblemFile::parse(&text).map_err(|e| {
        eprintln!("error: {}: {e}", path.display());
        ExitCode::from(EXIT_INVALID)
    })?;
    file.build().map_err(|e| fail(&e))
}

fn solve_to_json(problem: &Problem, cfg: &SolveConfig) -> Result<(Value, ConvergenceTrace), Error> {
    Ok(match problem {
        Problem::Ssp(p) => {
            let sol = solve_ssp(p, cfg)?;
            (output::ssp_json(&sol), sol.trace)
        }
        Problem::SspGraph(g) => {
            let sol = solve_graph(g, cfg)?;
            let trace = sol.solution.trace.clone();
            (output::graph_json(&sol), trace)
        }
        Problem::Lqr(p) => {
            let sol = solve_lqr(p, cfg)?;
            (output::lqr_json(&sol), sol.trace)
        }
        Problem::Ldp(p) => {
            let sol = solve_ldp(p, cfg)?;
            (output::ldp_json(&sol), sol.trace)
        }
    })
}

fn write_file(path: &Path, text: &str) -> Result<(), ExitCode> {
    fs::write(path, text).map_err(|e| {
        eprintln!("error: cannot write {}: {e}", path.display());
        ExitCode::from(EXIT_INVALID)
    })
}

fn run_solve(file: &Path, cfg: SolveConfig, out: &Path, trace: bool) -> Result<(), ExitCode> {
    cfg.validate().map_err(|e| fail(&e))?;
    let problem = load(file)?;
    log::info!("solving {} problem from {}", problem.kind(), file.display());
    let (json, records) = solve_to_json(&problem, &cfg).map_err(|e| fail(&e))?;
    log::info!("converged after {} iterations", records.len());
    fs::create_dir_all(out).map_err(|e| {
        eprintln!("error: cannot create {}: {e}", out.display());
        ExitCode::from(EXIT_INVALID)
    })?;
    let text = output::to_exact_json(&json).expect("solution serializes");
    write_file(&out.join("solution.json"), &text)?;
    if trace {
        write_file(&out.join("trace.csv"), &records.to_csv())?;
    }
    Ok(())
}

fn run_verify(file: &Path, opts: verify::VerifyOptions) -> Result<(), ExitCode> {
    if opts.trials == 0 {
        eprintln!("error: --trials must be positive");
        return Err(ExitCode::from(EXIT_INVALID));
    }
    let problem = load(file)?;
    let cfg = SolveConfig::default();
    let checks = verify::verify(&problem, &cfg, &opts).map_err(|e| fail(&e))?;
    let mut ok = true;
    for c in &checks {
        let verdict = if c.passed() { "ok" } else { "FAIL" };
        println!(
            "{verdict:4} {}: {:.3e} (limit {:.3e})",
            c.name, c.value, c.limit
        );
        ok &= c.passed();
    }
    if ok {
        Ok(())
    } else {
        Err(ExitCode::from(EXIT_VERIFY))
    }
}

fn run_bench(class: bench::Class, sizes: &str, seed: u64) -> Result<(), ExitCode> {
    let sizes = bench::parse_sizes(sizes).map_err(|e| fail(&e))?;
    let cfg = SolveConfig::default();
    println!("class,n,iters,wall_ns,residual");
    let label = class.to_possible_value().expect("named class");
    for n in sizes {
        let row = bench::run(class, n, seed, &cfg).map_err(|e| fail(&e))?;
        println!(
            "{},{},{},{},{:e}",
            label.get_name(),
            row.n,
            row.iters,
            row.wall_ns,
            row.residual
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CONEBELLMAN_LOG", "error"))
        .format_timestamp(None)
        .init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_INVALID)
            } else {
                ExitCode::SUCCESS
            };
        }
    };

    let result = match cli.command {
        Command::Solve {
            file,
            tol,
            max_iter,
            schedule,
            out,
            trace,
        } => {
            let cfg = SolveConfig {
                tol,
                max_iter,
                schedule: schedule.into(),
                ..SolveConfig::default()
            };
            run_solve(&file, cfg, &out, trace)
        }
        Command::Verify { file, seed, trials } => {
            run_verify(&file, verify::VerifyOptions { seed, trials })
        }
        Command::Bench { class, sizes, seed } => run_bench(class, &sizes, seed),
    };
    match result {
        Ok(()) => ExitCode::from(EXIT_OK),
        Err(code) => code,
    }
}
