//! `cb-lab`: command-line front end for cumulants, simulation, moments,
//! finiteness criteria and experiment specs.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use cbproc::cumulant::{scalar_tolerance, solve_v};
use cbproc::lab::{parse_toml, run_experiment, RunOptions};
use cbproc::moments::{self, MomentFunction};
use cbproc::simulator::{path_rng, simulate_cb, simulate_cbi, JumpSource, SimConfig};
use cbproc::{BranchingMechanism, ImmigrationMechanism};
use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "cb-lab", version, about = "Continuous-state branching process laboratory")]
struct Cli {
    /// Seed overriding the one in config or spec files.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory; tabular output goes to stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the cumulant flow v_t(λ) on an evenly spaced grid.
    SolveV {
        #[arg(long)]
        mechanism: PathBuf,
        #[arg(long)]
        lambda: f64,
        #[arg(long)]
        t_max: f64,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
        #[arg(long, default_value_t = 101)]
        points: usize,
    },
    /// Simulate an ensemble of CB or CBI paths.
    Simulate {
        #[arg(long)]
        mechanism: PathBuf,
        #[arg(long)]
        immigration: Option<PathBuf>,
        /// Simulation config (dt, eps, t_max, ...).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1.0)]
        x0: f64,
        #[arg(long, default_value_t = 1000)]
        paths: usize,
        /// Emit every recorded state instead of terminal states only.
        #[arg(long)]
        per_path: bool,
        /// Also write the log of jumps above 1.
        #[arg(long)]
        jumps: bool,
    },
    /// Integer moments E X_t^n from the sensitivity ODE.
    Moments {
        #[arg(long)]
        mechanism: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        x0: f64,
        #[arg(long)]
        t: f64,
        #[arg(long, default_value_t = 2)]
        order: usize,
    },
    /// Finiteness of E f(X_t) (or E f(Y_t) with immigration).
    Criterion {
        #[arg(long)]
        mechanism: PathBuf,
        #[arg(long)]
        immigration: Option<PathBuf>,
        /// Moment function file; `--power` is the shorthand for x^p.
        #[arg(long, conflicts_with = "power")]
        f: Option<PathBuf>,
        #[arg(long)]
        power: Option<f64>,
        /// Also search the shift f(a ∨ x) that meets condition B.
        #[arg(long)]
        shift: bool,
    },
    /// Run an experiment spec.
    Experiment { spec: PathBuf },
}

fn load<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let src = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(parse_toml(&src, &path.display().to_string())?)
}

/// Writes tabular output to `--out/<name>` or stdout.
fn emit(out: &Option<PathBuf>, name: &str, data: &[u8]) -> Result<()> {
    match out {
        Some(dir) => {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            let path = dir.join(name);
            fs::write(&path, data).with_context(|| format!("writing {}", path.display()))?;
            eprintln!("wrote {}", path.display());
        }
        None => std::io::stdout().write_all(data)?,
    }
    Ok(())
}

fn csv_bytes<T: Serialize>(rows: impl IntoIterator<Item = T>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row)?;
    }
    Ok(w.into_inner()?)
}

fn json_bytes(value: &serde_json::Value) -> Result<Vec<u8>> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(text.into_bytes())
}

#[derive(Serialize)]
struct VRow {
    t: f64,
    v: f64,
    est_error: f64,
}

fn solve_v_cmd(cli: &Cli, mechanism: &Path, lambda: f64, t_max: f64, tol: f64, points: usize) -> Result<()> {
    let mech: BranchingMechanism = load(mechanism)?;
    if points < 2 {
        bail!("--points must be >= 2");
    }
    let sol = solve_v(&mech, lambda, t_max, scalar_tolerance(tol))?;
    let rows = (0..points).map(|i| {
        let t = t_max * i as f64 / (points - 1) as f64;
        VRow { t, v: sol.v_at(t), est_error: sol.error_at(t) }
    });
    emit(&cli.out, "solve_v.csv", &csv_bytes(rows)?)
}

#[derive(Serialize)]
struct StateRow {
    path_id: usize,
    t: f64,
    state: f64,
}

#[derive(Serialize)]
struct TerminalRow {
    path_id: usize,
    state: f64,
}

#[derive(Serialize)]
struct JumpRow {
    path_id: usize,
    time: f64,
    size: f64,
    source: &'static str,
}

#[allow(clippy::too_many_arguments)]
fn simulate_cmd(
    cli: &Cli,
    mechanism: &Path,
    immigration: Option<&Path>,
    config: Option<&Path>,
    x0: f64,
    paths: usize,
    per_path: bool,
    jumps: bool,
) -> Result<()> {
    let mech: BranchingMechanism = load(mechanism)?;
    let imm: Option<ImmigrationMechanism> = immigration.map(load).transpose()?;
    let mut cfg: SimConfig = match config {
        Some(p) => load(p)?,
        None => SimConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.record_jumps = jumps;
    if !per_path {
        cfg.record_stride = usize::MAX;
    }
    let records = (0..paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_rng(cfg.seed, i as u64);
            match &imm {
                Some(imm) => simulate_cbi(&mech, imm, x0, &cfg, &mut rng),
                None => simulate_cb(&mech, x0, &cfg, &mut rng),
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    if per_path {
        let rows = records.iter().enumerate().flat_map(|(path_id, r)| {
            r.times.iter().zip(&r.states).map(move |(&t, &state)| StateRow { path_id, t, state })
        });
        emit(&cli.out, "paths.csv", &csv_bytes(rows)?)?;
    } else {
        let rows = records
            .iter()
            .enumerate()
            .map(|(path_id, r)| TerminalRow { path_id, state: *r.states.last().expect("nonempty path") });
        emit(&cli.out, "terminal.csv", &csv_bytes(rows)?)?;
    }
    if jumps {
        let rows = records.iter().enumerate().flat_map(|(path_id, r)| {
            r.big_jumps.iter().map(move |j| JumpRow {
                path_id,
                time: j.time,
                size: j.size,
                source: match j.source {
                    JumpSource::Branching => "branching",
                    JumpSource::Immigration => "immigration",
                },
            })
        });
        emit(&cli.out, "jumps.csv", &csv_bytes(rows)?)?;
    }
    Ok(())
}

fn moments_cmd(cli: &Cli, mechanism: &Path, x0: f64, t: f64, order: usize) -> Result<()> {
    let mech: BranchingMechanism = load(mechanism)?;
    let mut list = Vec::new();
    for n in 1..=order {
        let value = moments::integer_moment(&mech, x0, n, t)?;
        list.push(serde_json::json!({ "n": n, "value": value.value(), "finite": value.is_finite() }));
    }
    let mean = moments::mean_cb(&mech, x0, t).ok();
    let out = serde_json::json!({
        "x0": x0,
        "t": t,
        "mean": mean,
        "effective_drift_b": mech.effective_drift_b().ok(),
        "moments": list,
    });
    emit(&cli.out, "moments.json", &json_bytes(&out)?)
}

fn criterion_cmd(
    cli: &Cli,
    mechanism: &Path,
    immigration: Option<&Path>,
    f: Option<&Path>,
    power: Option<f64>,
    shift: bool,
) -> Result<()> {
    let mech: BranchingMechanism = load(mechanism)?;
    let imm: Option<ImmigrationMechanism> = immigration.map(load).transpose()?;
    let f: MomentFunction = match (f, power) {
        (Some(path), _) => load(path)?,
        (None, Some(p)) => MomentFunction::power(p),
        (None, None) => bail!("give --f FILE or --power P"),
    };
    f.validate()?;
    let result = match &imm {
        Some(imm) => moments::cbi_f_moment_finite(&mech, imm, &f, true),
        None => moments::cb_f_moment_finite(&mech, &f, true),
    };
    let mut out = result.to_json();
    out["function"] = serde_json::json!(f.label());
    if shift {
        out["condition_b"] = match moments::shift_to_condition_b(&f) {
            Ok(shifted) => {
                let report = moments::verify_condition_b(&shifted, 200);
                serde_json::json!({ "shift_a": shifted.shift_a, "k": shifted.cond_b_k, "report": report })
            }
            Err(e) => serde_json::json!({ "error": e.to_string() }),
        };
    }
    emit(&cli.out, "criterion.json", &json_bytes(&out)?)
}

fn experiment_cmd(cli: &Cli, spec: &Path) -> Result<bool> {
    let opts = RunOptions { seed: cli.seed, out_dir: cli.out.clone() };
    let outcome = run_experiment(spec, &opts)?;
    for a in &outcome.manifest.analyses {
        match &a.error {
            Some(e) => eprintln!("{}: error: {e}", a.name),
            None => eprintln!("{}: ok ({} files)", a.name, a.files.len()),
        }
    }
    println!("{}", outcome.out_dir.join("manifest.json").display());
    Ok(!outcome.failed)
}

fn run(cli: &Cli) -> Result<bool> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring the thread pool")?;
    }
    match &cli.command {
        Command::SolveV { mechanism, lambda, t_max, tol, points } => {
            solve_v_cmd(cli, mechanism, *lambda, *t_max, *tol, *points)?
        }
        Command::Simulate { mechanism, immigration, config, x0, paths, per_path, jumps } => simulate_cmd(
            cli,
            mechanism,
            immigration.as_deref(),
            config.as_deref(),
            *x0,
            *paths,
            *per_path,
            *jumps,
        )?,
        Command::Moments { mechanism, x0, t, order } => moments_cmd(cli, mechanism, *x0, *t, *order)?,
        Command::Criterion { mechanism, immigration, f, power, shift } => {
            criterion_cmd(cli, mechanism, immigration.as_deref(), f.as_deref(), *power, *shift)?
        }
        Command::Experiment { spec } => return experiment_cmd(cli, spec),
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
