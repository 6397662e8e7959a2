//! Orchestration: forward runs, two-phase identification runs, sweeps,
//! artifact emission and the command-line interface.

pub mod config;
pub mod output;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::loss::{
    ApfosIdentLoss, ApfosLoss, LossError, NonApIdentLoss, NonApLoss, Objective,
};
use crate::metrics::{self, ErrorTriple, SliceProfile};
use crate::network::{forward_values, init_params, LayerSpec, NetworkParams};
use crate::optim::{
    train, AdamParams, LossRecord, OptimizerChoice, StopRule, Termination, TrainConfig,
    TrainOutput,
};
use crate::problem::{Grid, ProblemInstance};

use config::{ConfigError, Mode, Resolved, RunConfig, SchemeKind, ValidatedRun};
use output::OutputError;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Output(#[from] OutputError),
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot decode {path}: {source}")]
    Decode {
        path: PathBuf,
        source: serde_json::Error,
    },
}

/// Everything needed to reproduce and interpret a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub config: RunConfig,
    pub resolved: Resolved,
    pub version: String,
    pub created_utc: String,
    pub scheme: SchemeKind,
    pub term_names: Vec<String>,
    pub frame_fallbacks: usize,
    pub termination: Termination,
    pub iterations: usize,
    pub final_loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_estimate: Option<f64>,
    /// Final parameter snapshot: flat theta with its layer sizes.
    pub params: NetworkParams,
}

/// Full run artifact: traces, final grids, slices, parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunResult {
    pub manifest: Manifest,
    pub loss_records: Vec<LossRecord>,
    pub error_trace: Vec<(usize, ErrorTriple)>,
    pub grid: Grid,
    pub grid_predicted: Vec<f64>,
    pub grid_exact: Vec<f64>,
    pub slices: Vec<(String, SliceProfile)>,
    /// Per-iteration exp(eps*) for identification runs; empty otherwise.
    pub eps_trace: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub hidden_layers: usize,
    pub neurons: usize,
    pub errors: ErrorTriple,
}

/// Network prediction (first output) on every grid node.
pub fn grid_predictions(spec: &LayerSpec, theta: &[f64], grid: &Grid) -> Vec<f64> {
    (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let p = grid.point(i);
            forward_values(spec, theta, &p[..grid.dim])[0]
        })
        .collect()
}

fn grid_exact(instance: &ProblemInstance, grid: &Grid) -> Vec<f64> {
    (0..grid.len())
        .into_par_iter()
        .map(|i| instance.exact_phi_value(&grid.point(i)))
        .collect()
}

fn default_slices(dim: usize) -> Vec<(String, Vec<(usize, f64)>)> {
    if dim == 2 {
        vec![("x0.5".to_string(), vec![(0, 0.5)])]
    } else {
        [0.0, 0.5, 1.0]
            .iter()
            .map(|&z| (format!("x0.5_z{z}"), vec![(0, 0.5), (2, z)]))
            .collect()
    }
}

struct LossSetup {
    objective: Box<dyn Objective>,
    term_names: Vec<String>,
    frame_fallbacks: usize,
}

fn build_forward_loss(run: &ValidatedRun) -> Result<LossSetup, LossError> {
    let colloc = run.instance.sample(
        run.config.problem.n_interior,
        run.config.problem.n_dirichlet,
        run.config.problem.n_neumann,
        run.resolved.collocation_seed,
    );
    match run.scheme {
        SchemeKind::Apfos => {
            let loss = ApfosLoss::new(
                &run.instance,
                run.spec.clone(),
                &colloc,
                run.forward_weights,
            )?;
            Ok(LossSetup {
                term_names: names(crate::loss::APFOS_FORWARD_TERMS),
                frame_fallbacks: loss.data().frame_fallbacks,
                objective: Box::new(loss),
            })
        }
        SchemeKind::Nonap => {
            let loss = NonApLoss::new(
                &run.instance,
                run.spec.clone(),
                &colloc,
                run.nonap_weights,
            )?;
            Ok(LossSetup {
                term_names: names(crate::loss::NONAP_FORWARD_TERMS),
                frame_fallbacks: 0,
                objective: Box::new(loss),
            })
        }
    }
}

fn names(n: &[&str]) -> Vec<String> {
    n.iter().map(|s| s.to_string()).collect()
}

fn manifest(
    run: &ValidatedRun,
    term_names: Vec<String>,
    frame_fallbacks: usize,
    out: &TrainOutput,
    iterations: usize,
    eps_estimate: Option<f64>,
    theta: &[f64],
) -> Manifest {
    Manifest {
        config: run.config.clone(),
        resolved: run.resolved.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        created_utc: chrono::Utc::now().to_rfc3339(),
        scheme: run.scheme,
        term_names,
        frame_fallbacks,
        termination: out.termination,
        iterations,
        final_loss: out.value,
        eps_estimate,
        params: NetworkParams {
            spec: run.spec.clone(),
            theta: theta.to_vec(),
        },
    }
}

fn finalize(
    run: &ValidatedRun,
    manifest: Manifest,
    loss_records: Vec<LossRecord>,
    mut error_trace: Vec<(usize, ErrorTriple)>,
    theta: &[f64],
    eps_trace: Vec<(usize, f64)>,
) -> RunResult {
    let grid = run.instance.eval_grid(run.config.problem.grid);
    let predicted = grid_predictions(&run.spec, theta, &grid);
    let exact = grid_exact(&run.instance, &grid);
    if error_trace.last().map(|(i, _)| *i) != Some(manifest.iterations) {
        if let Ok(t) = metrics::errors(&predicted, &exact) {
            error_trace.push((manifest.iterations, t));
        }
    }
    let slices = default_slices(grid.dim)
        .into_iter()
        .filter_map(|(name, constraints)| {
            metrics::slice(&grid, &predicted, &exact, &constraints)
                .ok()
                .map(|s| (name, s))
        })
        .collect();
    RunResult {
        manifest,
        loss_records,
        error_trace,
        grid,
        grid_predicted: predicted,
        grid_exact: exact,
        slices,
        eps_trace,
    }
}

/// Snapshot-error callback shared by both modes: at every configured
/// snapshot iteration, evaluate the prediction on the grid.
struct SnapshotTracker<'a> {
    run: &'a ValidatedRun,
    grid: Grid,
    exact: Vec<f64>,
    trace: Vec<(usize, ErrorTriple)>,
}

impl<'a> SnapshotTracker<'a> {
    fn new(run: &'a ValidatedRun) -> SnapshotTracker<'a> {
        let grid = run.instance.eval_grid(run.config.problem.grid);
        let exact = grid_exact(&run.instance, &grid);
        SnapshotTracker {
            run,
            grid,
            exact,
            trace: Vec::new(),
        }
    }

    fn observe(&mut self, iter: usize, theta: &[f64]) {
        if self.run.snapshots.contains(&iter) {
            let predicted = grid_predictions(&self.run.spec, theta, &self.grid);
            if let Ok(t) = metrics::errors(&predicted, &self.exact) {
                self.trace.push((iter, t));
            }
        }
    }
}

/// One forward run: sample, assemble the loss, train, evaluate on the grid.
pub fn run_forward(cfg: &RunConfig) -> Result<RunResult, RunError> {
    let run = cfg.validate(Mode::Forward)?;
    let setup = build_forward_loss(&run)?;
    let theta0 = init_params(&run.spec, run.resolved.init_seed).theta;
    let train_cfg = TrainConfig {
        optimizer: run.optimizer.clone(),
        stop: run.stop,
        log_every: run.log_every,
        snapshots: run.snapshots.clone(),
        frozen_prefix: 0,
    };
    let mut snaps = SnapshotTracker::new(&run);
    let out = train(
        setup.objective.as_ref(),
        theta0,
        &train_cfg,
        |iter, x, _e| snaps.observe(iter, x),
    );
    let m = manifest(
        &run,
        setup.term_names,
        setup.frame_fallbacks,
        &out,
        out.iterations,
        None,
        &out.x,
    );
    Ok(finalize(
        &run,
        m,
        out.records.clone(),
        snaps.trace,
        &out.x,
        vec![],
    ))
}

/// Two-phase identification: Adam on eps* with the network frozen, then
/// joint optimization; eps-hat = exp(eps*) is traced per iteration across
/// both phases.
pub fn run_identify(cfg: &RunConfig) -> Result<RunResult, RunError> {
    let run = cfg.validate(Mode::Identify)?;
    let ident = run.identify.clone().expect("validated identify block");
    let colloc = run.instance.sample(
        run.config.problem.n_interior,
        run.config.problem.n_dirichlet,
        run.config.problem.n_neumann,
        run.resolved.collocation_seed,
    );
    let observations = run.instance.observations(
        &colloc.interior,
        ident.noise,
        run.resolved.observation_seed,
    );
    let n_theta = run.spec.param_count();
    let (objective, term_names): (Box<dyn Objective>, Vec<String>) = match run.scheme {
        SchemeKind::Apfos => (
            Box::new(ApfosIdentLoss::new(
                &run.instance,
                run.spec.clone(),
                &colloc,
                &observations,
                run.ident_weights,
            )?),
            names(crate::loss::APFOS_IDENT_TERMS),
        ),
        SchemeKind::Nonap => (
            Box::new(NonApIdentLoss::new(
                &run.instance,
                run.spec.clone(),
                &colloc,
                &observations,
                run.nonap_ident_weights,
            )?),
            names(crate::loss::NONAP_IDENT_TERMS),
        ),
    };
    let frame_fallbacks = run.instance.point_data(&colloc).frame_fallbacks;

    let mut x0 = init_params(&run.spec, run.resolved.init_seed).theta;
    x0.push(ident.eps_star0);

    let mut eps_trace: Vec<(usize, f64)> = vec![(0, ident.eps_star0.exp())];
    let mut snaps = SnapshotTracker::new(&run);

    // Phase 1: the coefficient alone (Adam), network frozen at init.
    let phase1_cfg = TrainConfig {
        optimizer: OptimizerChoice::Adam(AdamParams {
            lr: ident.adam_lr.unwrap_or(AdamParams::default().lr),
            ..AdamParams::default()
        }),
        stop: StopRule {
            tol: run.stop.tol,
            max_iters: ident.iter1,
        },
        log_every: run.log_every,
        snapshots: vec![],
        frozen_prefix: if ident.phase1_update_network {
            0
        } else {
            n_theta
        },
    };
    let out1 = train(objective.as_ref(), x0, &phase1_cfg, |iter, x, _e| {
        eps_trace.push((iter, x[n_theta].exp()));
        snaps.observe(iter, &x[..n_theta]);
    });
    let offset = out1.iterations;

    // Phase 2: joint update of (theta, eps*).
    let phase2_cfg = TrainConfig {
        optimizer: run.optimizer.clone(),
        stop: StopRule {
            tol: run.stop.tol,
            max_iters: ident.iter2,
        },
        log_every: run.log_every,
        snapshots: run
            .snapshots
            .iter()
            .filter_map(|s| s.checked_sub(offset).filter(|v| *v > 0))
            .collect(),
        frozen_prefix: 0,
    };
    let out2 = train(objective.as_ref(), out1.x, &phase2_cfg, |iter, x, _e| {
        eps_trace.push((offset + iter, x[n_theta].exp()));
        snaps.observe(offset + iter, &x[..n_theta]);
    });

    let mut records = out1.records.clone();
    for r in &out2.records {
        if r.iter == 0 {
            continue;
        }
        records.push(LossRecord {
            iter: offset + r.iter,
            value: r.value,
            terms: r.terms.clone(),
        });
    }
    let iterations = offset + out2.iterations;
    let eps_estimate = out2.x[n_theta].exp();
    let theta = out2.x[..n_theta].to_vec();
    let m = manifest(
        &run,
        term_names,
        frame_fallbacks,
        &out2,
        iterations,
        Some(eps_estimate),
        &theta,
    );
    Ok(finalize(&run, m, records, snaps.trace, &theta, eps_trace))
}

/// One forward run per (hidden_layers, neurons) cell, shared seeds.
pub fn sweep(
    cfg: &RunConfig,
    layers: &[usize],
    neurons: &[usize],
) -> Result<Vec<SweepRow>, RunError> {
    let mut rows = Vec::new();
    for &l in layers {
        for &n in neurons {
            let mut cell = cfg.clone();
            cell.network.hidden_layers = l;
            cell.network.neurons = n;
            let result = run_forward(&cell)?;
            let errors = result
                .error_trace
                .last()
                .map(|(_, t)| *t)
                .unwrap_or(ErrorTriple {
                    e1: f64::NAN,
                    e2: f64::NAN,
                    einf: f64::NAN,
                });
            rows.push(SweepRow {
                hidden_layers: l,
                neurons: n,
                errors,
            });
        }
    }
    Ok(rows)
}

/// Reload a result payload and re-emit its artifacts.
pub fn export(dir: &Path, out: &Path, svg: bool) -> Result<(), RunError> {
    let path = dir.join("result.json");
    let text = std::fs::read_to_string(&path).map_err(|source| RunError::Read {
        path: path.clone(),
        source,
    })?;
    let result: RunResult =
        serde_json::from_str(&text).map_err(|source| RunError::Decode { path, source })?;
    output::write_all(out, &result, svg)?;
    Ok(())
}

// ── command-line interface ────────────────────────────────────────────

#[derive(Parser)]
#[command(
    name = "apfos",
    about = "Asymptotic-preserving first-order-system least-squares solver for anisotropic elliptic equations",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Forward run from a config file.
    Run {
        config: PathBuf,
        /// Override the global seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (overrides the config).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Two-phase anisotropy-strength identification run.
    Identify {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Hyper-parameter sweep over hidden layers x neurons.
    Sweep {
        config: PathBuf,
        /// Comma-separated hidden-layer counts, e.g. 3,4,5.
        #[arg(long, value_delimiter = ',', required = true)]
        layers: Vec<usize>,
        /// Comma-separated neuron counts, e.g. 40,60,80.
        #[arg(long, value_delimiter = ',', required = true)]
        neurons: Vec<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the finite-difference verification suites.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Cases per loss functional (20 gives 100 loss checks).
        #[arg(long, default_value_t = 20)]
        cases: usize,
    },
    /// Re-emit artifacts from a previous run directory.
    Export {
        dir: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated formats: csv, svg.
        #[arg(long, default_value = "csv,svg")]
        formats: String,
    },
}

fn load_config(
    path: &Path,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<(RunConfig, PathBuf), ConfigError> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
        cfg.problem.collocation_seed = None;
        cfg.problem.observation_seed = None;
        cfg.network.init_seed = None;
    }
    if let Some(o) = out {
        cfg.out_dir = Some(o);
    }
    let dir = cfg.out_dir.clone().ok_or_else(|| {
        ConfigError::Invalid("no output directory: set out_dir in the config or pass --out".into())
    })?;
    Ok((cfg, dir))
}

fn numeric_exit(t: Termination) -> i32 {
    match t {
        Termination::LineSearchFailed | Termination::NonFiniteLoss => 2,
        _ => 0,
    }
}

/// Entry point for the binary; returns the process exit code
/// (0 success, 1 config error, 2 numeric failure).
pub fn cli_main() -> i32 {
    let cli = Cli::parse();
    match run_command(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                RunError::Config(_) => 1,
                RunError::Loss(_) => 1,
                _ => 1,
            }
        }
    }
}

fn run_command(cli: Cli) -> Result<i32, RunError> {
    match cli.cmd {
        Cmd::Run { config, seed, out } => {
            let (cfg, dir) = load_config(&config, seed, out)?;
            let result = run_forward(&cfg)?;
            output::write_all(&dir, &result, cfg.svg)?;
            report_run(&result, &dir);
            Ok(numeric_exit(result.manifest.termination))
        }
        Cmd::Identify { config, seed, out } => {
            let (cfg, dir) = load_config(&config, seed, out)?;
            let result = run_identify(&cfg)?;
            output::write_all(&dir, &result, cfg.svg)?;
            report_run(&result, &dir);
            Ok(numeric_exit(result.manifest.termination))
        }
        Cmd::Sweep {
            config,
            layers,
            neurons,
            seed,
            out,
        } => {
            let (cfg, dir) = load_config(&config, seed, out)?;
            let rows = sweep(&cfg, &layers, &neurons)?;
            std::fs::create_dir_all(&dir).map_err(|source| RunError::Read {
                path: dir.clone(),
                source,
            })?;
            let path = dir.join("sweep.csv");
            std::fs::write(&path, output::sweep_csv(&rows)).map_err(|source| RunError::Read {
                path: path.clone(),
                source,
            })?;
            for r in &rows {
                println!(
                    "layers {:>2}  neurons {:>3}  E2 {:.3e}",
                    r.hidden_layers, r.neurons, r.errors.e2
                );
            }
            println!("sweep table written to {}", path.display());
            Ok(0)
        }
        Cmd::Gradcheck { seed, cases } => {
            let report = crate::gradcheck::run_all(seed, cases);
            report.print();
            Ok(if report.all_passed() { 0 } else { 2 })
        }
        Cmd::Export { dir, out, formats } => {
            let svg = formats.split(',').any(|f| f.trim() == "svg");
            let target = out.unwrap_or_else(|| dir.clone());
            export(&dir, &target, svg)?;
            println!("artifacts re-emitted to {}", target.display());
            Ok(0)
        }
    }
}

fn report_run(result: &RunResult, dir: &Path) {
    let m = &result.manifest;
    println!(
        "finished after {} iterations ({:?}); final loss {:.6e}",
        m.iterations, m.termination, m.final_loss
    );
    if let Some((iter, t)) = result.error_trace.last() {
        println!(
            "errors at iteration {iter}: E1 {:.3e}  E2 {:.3e}  Einf {:.3e}",
            t.e1, t.e2, t.einf
        );
    }
    if let Some(eps) = m.eps_estimate {
        println!("estimated anisotropy strength: {eps:.6e}");
    }
    println!("artifacts written to {}", dir.display());
}
