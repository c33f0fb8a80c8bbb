//! `maxlod`: configuration-driven front end for solves and studies.
//!
//! Exit status: 0 on success, 1 on a computational failure (resonance,
//! singular system, a failed verify check), 2 on a configuration error.
//! The rayon pool size is read from `MAXLOD_THREADS`.

mod config;
mod verify;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use maxlod::analysis::{run_study, solve_case, MeshLevel, SolveOutput, StudyResult};
use maxlod::c64;
use maxlod::sparse::energy;
use maxlod::LodError;
use serde_json::json;

use config::{parse_config, Command, ConfigError, Overrides, RunConfig};

const THREADS_ENV: &str = "MAXLOD_THREADS";

#[derive(Parser, Debug)]
#[command(name = "maxlod", version, about = "Localized orthogonal decomposition for time-harmonic Maxwell problems")]
struct Args {
    /// TOML run configuration.
    config: PathBuf,
    #[arg(long, value_parser = parse_command)]
    command: Option<Command>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_coarse: Option<usize>,
    #[arg(long)]
    refine_factor: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    omega: Option<f64>,
    /// Fixed patch order (replaces the logarithmic schedule).
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    m_max: Option<usize>,
    /// Output root; results go to `<out>/<run_id>/`.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_command(s: &str) -> Result<Command, String> {
    serde_json::from_value(json!(s)).map_err(|_| format!("unknown command {s:?}"))
}

enum Failure {
    Config(String),
    Compute(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<LodError> for Failure {
    fn from(e: LodError) -> Self {
        if e.is_computational() || matches!(e, LodError::Io(_)) {
            Failure::Compute(e.to_string())
        } else {
            Failure::Config(e.to_string())
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Compute(e.to_string())
    }
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            return ExitCode::from(2);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("configuration error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Compute(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn run(args: &Args) -> Result<(), Failure> {
    let overrides = Overrides {
        command: args.command,
        seed: args.seed,
        n_coarse: args.n_coarse,
        refine_factor: args.refine_factor,
        omega: args.omega,
        m: args.m,
        m_max: args.m_max,
        out: args.out.clone(),
    };
    let cfg = parse_config(&args.config, &overrides)?;
    let threads = configure_threads()?;
    log_resolution(&cfg);
    let run_id = cfg.run_id();
    let dir = cfg.output.dir.join(&run_id);
    let env = environment(&cfg, &run_id, threads);
    match cfg.command {
        Command::Verify => verify::run(&cfg, &dir, env),
        Command::Solve => solve(&cfg, &dir, env),
        _ => study(&cfg, &dir, env),
    }
}

fn configure_threads() -> Result<usize, Failure> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| Failure::Config(format!("{THREADS_ENV}: expected a positive integer, got {v:?}")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Compute(format!("cannot start thread pool: {e}")))?;
    }
    Ok(rayon::current_num_threads())
}

fn log_resolution(cfg: &RunConfig) {
    for MeshLevel { n_coarse, .. } in cfg.levels() {
        for w in cfg.omegas() {
            let wh = w / n_coarse as f64;
            if wh > 1.0 {
                eprintln!("warning: omega*H = {wh:.3} > 1 (H = 1/{n_coarse}, omega = {w}); the coarse mesh may not resolve the frequency");
            } else {
                eprintln!("omega*H = {wh:.3} (H = 1/{n_coarse}, omega = {w})");
            }
        }
    }
}

fn environment(cfg: &RunConfig, run_id: &str, threads: usize) -> serde_json::Value {
    json!({
        "run_id": run_id,
        "command": cfg.command.name(),
        "run_config": cfg,
        "threads": threads,
        "threads_env": THREADS_ENV,
        "threads_env_value": std::env::var(THREADS_ENV).ok(),
        "version": env!("CARGO_PKG_VERSION"),
        "os": std::env::consts::OS,
        "arch": std::env::consts::ARCH,
    })
}

fn study(cfg: &RunConfig, dir: &Path, env: serde_json::Value) -> Result<(), Failure> {
    let sc = cfg.study_config().expect("study command");
    let result = run_study(&sc)?;
    result.write(dir, env)?;
    let failed: Vec<_> = result.rows.iter().filter(|r| !r.is_ok()).collect();
    println!("{}: {} rows written to {}", cfg.command.name(), result.rows.len(), dir.join("results.csv").display());
    for r in &failed {
        eprintln!("row H = {}, omega = {}, seed = {}: {}", r.h_coarse, r.omega, r.seed, r.status);
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Compute(format!("{} of {} rows failed", failed.len(), result.rows.len())))
    }
}

fn solve(cfg: &RunConfig, dir: &Path, env: serde_json::Value) -> Result<(), Failure> {
    let sc = cfg.study_config().expect("solve uses a convergence row");
    sc.validate()?;
    let level = cfg.levels()[0];
    let omega = cfg.omegas()[0];
    let (row, out) = solve_case(&sc, level, omega, cfg.seed);
    StudyResult { config: sc, rows: vec![row.clone()] }.write(dir, env)?;
    let out = out?;
    if cfg.output.vectors {
        export(&out, &dir.join("vectors"))?;
    }
    let n = out.disc.fine_norm_matrix()?;
    let norm = energy(&n, &out.solution.fine).max(0.0).sqrt();
    let reference = energy(&n, &out.reference).max(0.0).sqrt();
    println!("solve: H = 1/{}, h = 1/{}, m = {}", level.n_coarse, level.n_coarse * level.factor, row.m.unwrap_or(0));
    println!("  coarse DOFs {}, fine DOFs {}", out.disc.num_coarse(), out.disc.num_fine());
    println!("  |u_ms|_(curl,omega) = {norm:.6e}, |u_h|_(curl,omega) = {reference:.6e}");
    if let Some(e) = row.err_curl_omega {
        println!("  relative error {e:.6e}");
    }
    println!("  LOD residual {:.3e}, smallest singular value {:.3e}", out.solution.residual, out.solution.sigma_min);
    println!("  results in {}", dir.display());
    Ok(())
}

fn write_vector(path: &Path, v: &[c64]) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{}", v.len())?;
    for x in v {
        writeln!(f, "{:.17e} {:.17e}", x.re, x.im)?;
    }
    f.flush()
}

fn export(out: &SolveOutput, dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir)?;
    write_vector(&dir.join("coarse.txt"), &out.solution.coarse)?;
    write_vector(&dir.join("fine.txt"), &out.solution.fine)?;
    write_vector(&dir.join("reference.txt"), &out.reference)?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("correctors.txt"))?);
    out.basis.k.write_coordinate(&mut f)?;
    f.flush()?;
    let patches: Vec<_> = out
        .basis
        .patches
        .iter()
        .map(|p| {
            json!({
                "cell": p.cell,
                "patch_id": p.patch_id,
                "patch_cells": p.patch_cells,
                "free_dofs": p.free_dofs,
                "constraint_residual": p.report.constraint_residual,
                "saddle_residual": p.report.saddle_residual,
            })
        })
        .collect();
    let manifest = json!({
        "m": out.basis.m,
        "distinct_patches": out.basis.num_distinct_patches(),
        "max_constraint_residual": out.basis.max_constraint_residual(),
        "max_nonconformity": out.basis.max_nonconformity(),
        "nonconformity": out.basis.nonconformity,
        "patches": patches,
    });
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Failure::Compute(e.to_string()))?;
    std::fs::write(dir.join("correctors.json"), text + "\n")?;
    Ok(())
}
