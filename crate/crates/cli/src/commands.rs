use std::path::{Path, PathBuf};

use lrgw::datasets_io::{
    generate, generate_isometric_pair, isometric_pair, save_coupling, save_low_rank, save_point_cloud, save_report, low_rank_paths,
    DatasetKind, DatasetSpec, Rotation,
};
use lrgw::entropic_gw::{SolveReport, StopReason};
use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::args::{BenchArgs, DatasetArgs, GenArgs, SolveArgs, SolverArgs, Sweep};
use crate::error::{CliError, EXIT_BUDGET, EXIT_OK};
use crate::manifest::RunManifest;
use crate::problem::{load_problem, problem_from_clouds, run_method, Solution};

pub const BENCH_HEADER: [&str; 8] = ["method", "param", "value", "rep", "final_loss", "total_ms", "outer_iters", "status"];

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// `dir/x.csv` -> `dir/x.<ext>`.
fn sibling(path: &Path, ext: &str) -> PathBuf {
    path.with_extension(ext)
}

fn dataset_spec(d: &DatasetArgs, seed: u64) -> DatasetSpec {
    let kind: DatasetKind = d.kind.into();
    DatasetSpec {
        kind,
        n: d.n,
        d: d.d.unwrap_or(kind.default_dim()),
        clusters: d.k,
        separation: d.beta,
        seed,
    }
}

pub fn cmd_gen(args: &GenArgs) -> Result<u8, CliError> {
    let spec = dataset_spec(&args.dataset, args.seed);
    let mut manifest = RunManifest::new("gen", args, args.seed, args.deterministic);
    if spec.kind == DatasetKind::IsometricPair {
        let pair = generate_isometric_pair(&spec)?;
        let target = args.out_target.clone().unwrap_or_else(|| sibling(&args.out, "target.csv"));
        save_point_cloud(&args.out, &pair.source)?;
        save_point_cloud(&target, &pair.target)?;
        manifest.output(&args.out);
        manifest.output(&target);
    } else {
        save_point_cloud(&args.out, &generate(&spec)?)?;
        manifest.output(&args.out);
    }
    manifest.detail("points", spec.n);
    manifest.detail("dimension", spec.d);
    manifest.write(&sibling(&args.out, "manifest.json"))?;
    println!("wrote {} points to {}", spec.n, args.out.display());
    Ok(EXIT_OK)
}

fn zero_clock(mut report: SolveReport) -> SolveReport {
    report.elapsed_ms.iter_mut().for_each(|t| *t = 0.0);
    report
}

pub fn cmd_solve(args: &SolveArgs) -> Result<u8, CliError> {
    let mut manifest = RunManifest::new("solve", args, args.solver.seed, args.deterministic);
    let problem = load_problem(args.source.as_deref(), args.target.as_deref(), args.method, &args.cost, args.solver.seed)?;
    let (solution, report) = run_method(args.method, &problem, &args.solver)?;
    let report = if args.deterministic { zero_clock(report) } else { report };

    let prefix = &args.out_prefix;
    match &solution {
        Solution::Dense(c) => {
            let path = with_suffix(prefix, ".coupling.csv");
            save_coupling(&path, c.plan.view())?;
            manifest.output(&path);
        }
        Solution::LowRank(t) => {
            save_low_rank(prefix, t)?;
            for p in low_rank_paths(prefix) {
                manifest.output(&p);
            }
        }
    }
    let report_path = with_suffix(prefix, ".report.csv");
    save_report(&report_path, &report)?;
    manifest.output(&report_path);

    manifest.detail("cost_scales", problem.scales);
    manifest.detail("initial_loss", report.initial_loss);
    manifest.detail("final_loss", report.final_loss());
    manifest.detail("outer_iterations", report.iterations());
    manifest.detail("stop_reason", report.stop_reason.as_str());
    manifest.detail("init_fallback", report.init_fallback);
    manifest.write(&with_suffix(prefix, ".manifest.json"))?;

    println!(
        "method={} final_loss={:.6e} initial_loss={:.6e} outer_iters={} stop={}",
        args.method.as_str(),
        report.final_loss(),
        report.initial_loss,
        report.iterations(),
        report.stop_reason.as_str()
    );
    Ok(if report.stop_reason == StopReason::MaxIter { EXIT_BUDGET } else { EXIT_OK })
}

/// Seed of repetition `rep`, shared by every grid value.
pub fn cell_seed(base: u64, rep: usize) -> u64 {
    base.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (rep as u64).wrapping_mul(0xbf58_476d_1ce4_e5b9).wrapping_add(rep as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub method: &'static str,
    pub param: &'static str,
    pub value: f64,
    pub rep: usize,
    pub final_loss: Option<f64>,
    pub total_ms: f64,
    pub outer_iters: usize,
    pub status: String,
}

fn swept(args: &BenchArgs, value: f64, seed: u64) -> Result<SolverArgs, String> {
    let mut s = SolverArgs { seed, ..args.solver.clone() };
    match args.sweep {
        Sweep::Gamma => s.gamma = value,
        Sweep::Rank => {
            if value < 1.0 || value.fract() != 0.0 {
                return Err(format!("rank must be a positive integer, got {value}"));
            }
            s.rank = value as usize;
        }
        Sweep::Epsilon if args.eps_from_gamma => {
            s.gamma = value;
            s.epsilon = Some(1.0 / value);
        }
        Sweep::Epsilon => s.epsilon = Some(value),
    }
    Ok(s)
}

fn bench_cell(args: &BenchArgs, value: f64, rep: usize) -> BenchRow {
    let seed = cell_seed(args.solver.seed, rep);
    let param = match args.sweep {
        Sweep::Epsilon if args.eps_from_gamma => "epsilon=1/gamma",
        s => s.as_str(),
    };
    let mut row = BenchRow {
        method: args.method.as_str(),
        param,
        value,
        rep,
        final_loss: None,
        total_ms: 0.0,
        outer_iters: 0,
        status: String::new(),
    };
    let outcome = (|| -> Result<SolveReport, String> {
        let solver = swept(args, value, seed)?;
        let x = generate(&dataset_spec(&args.dataset, seed)).map_err(|e| e.to_string())?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5851_f42d_4c95_7f2d);
        let theta = rng.random_range(0.0..std::f64::consts::TAU);
        let t = Array1::from_shape_fn(x.dim(), |_| rng.random_range(-1.0..1.0));
        let y = if x.dim() >= 2 {
            isometric_pair(&x, &Rotation::Angle(theta), t.view()).map_err(|e| e.to_string())?.target
        } else {
            x.clone()
        };
        let problem = problem_from_clouds(&x, &y, args.method, &args.cost, seed).map_err(|e| e.to_string())?;
        run_method(args.method, &problem, &solver).map(|(_, r)| r).map_err(|e| e.to_string())
    })();
    match outcome {
        Ok(report) => {
            row.final_loss = Some(report.final_loss());
            row.total_ms = if args.deterministic { 0.0 } else { report.total_ms() };
            row.outer_iters = report.iterations();
            row.status = if report.stop_reason == StopReason::MaxIter { "budget" } else { "ok" }.into();
        }
        Err(e) => row.status = e,
    }
    row
}

/// Runs every `(value, rep)` cell; failures are recorded in the row's status.
pub fn bench_rows(args: &BenchArgs) -> Vec<BenchRow> {
    let cells: Vec<(f64, usize)> = args.values.iter().flat_map(|&v| (0..args.reps).map(move |r| (v, r))).collect();
    if args.parallel {
        cells.par_iter().map(|&(v, r)| bench_cell(args, v, r)).collect()
    } else {
        cells.iter().map(|&(v, r)| bench_cell(args, v, r)).collect()
    }
}

pub fn cmd_bench(args: &BenchArgs) -> Result<u8, CliError> {
    if args.reps == 0 {
        return Err(CliError::Usage("--reps must be at least 1".into()));
    }
    if args.sweep == Sweep::Epsilon && args.method.is_low_rank() && !args.eps_from_gamma {
        log::info!("epsilon sweep on a low-rank method regularizes the low-rank objective");
    }
    if args.eps_from_gamma && args.sweep != Sweep::Epsilon {
        return Err(CliError::Usage("--eps-from-gamma only applies to --sweep epsilon".into()));
    }
    if let Some(bad) = args.values.iter().find(|v| !v.is_finite() || **v <= 0.0) {
        return Err(CliError::Usage(format!("sweep values must be positive and finite, got {bad}")));
    }
    let mut manifest = RunManifest::new("bench", args, args.solver.seed, args.deterministic);
    let rows = bench_rows(args);
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(&args.out)
        .map_err(|e| CliError::output(args.out.display(), e))?;
    let write_err = |e: csv::Error| CliError::output(args.out.display(), e);
    w.write_record(BENCH_HEADER).map_err(write_err)?;
    for r in &rows {
        w.write_record([
            r.method.to_string(),
            r.param.to_string(),
            format!("{:?}", r.value),
            r.rep.to_string(),
            r.final_loss.map(|l| format!("{l:?}")).unwrap_or_default(),
            format!("{:.3}", r.total_ms),
            r.outer_iters.to_string(),
            r.status.clone(),
        ])
        .map_err(write_err)?;
    }
    w.flush().map_err(|e| CliError::output(args.out.display(), e))?;
    manifest.output(&args.out);
    let failed = rows.iter().filter(|r| r.final_loss.is_none()).count();
    manifest.detail("cells", rows.len());
    manifest.detail("failed_cells", failed);
    manifest.write(&sibling(&args.out, "manifest.json"))?;
    println!("wrote {} rows to {} ({} failed)", rows.len(), args.out.display(), failed);
    Ok(EXIT_OK)
}
