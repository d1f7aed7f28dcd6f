use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use mcir_core::analysis::{fit_rate, rmse, ConvergenceRecord, DEFAULT_FIT_WINDOW};
use mcir_core::io::{
    read_dataset, read_saddle, write_csv_file, write_dataset, write_labelled_csv, write_pgm, write_primal_dual,
    write_raster, write_saddle, Manifest, StandIns,
};
use mcir_core::linops::LinearMap;
use mcir_core::motion::{MotionKind, WarpOperator, DEFAULT_DILATATION_MAGNITUDE, DEFAULT_RIGID_MAGNITUDE};
use mcir_core::pipeline::{estimate_norms, Setup};
use mcir_core::projector::Geometry;
use mcir_core::simulate::{make_phantom, DatasetSpec, GatedDataset, PhantomKind, Preset};
use mcir_core::solvers::{cg_reference, default_config, run, run_observed, Mode, SaddlePoint};
use mcir_core::theory::RateReport;
use mcir_core::Image;
use serde::{Deserialize, Serialize};

use crate::{
    ExperimentArgs, PhantomArgs, RatesArgs, ReconstructArgs, ReferenceArgs, SimulateArgs, UsageError,
};

const REFERENCE_FILE: &str = "reference.json";

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn load(dir: &Path) -> Result<(GatedDataset, Manifest)> {
    read_dataset(dir).with_context(|| format!("reading dataset --data {}", dir.display()))
}

pub fn phantom(args: PhantomArgs) -> Result<()> {
    let img = make_phantom(args.kind.into(), args.rows as usize, args.cols as usize)?;
    write_raster(&args.out, &img).with_context(|| format!("writing {}", args.out.display()))?;
    if let Some(p) = &args.pgm {
        write_pgm(p, &img).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn dataset_spec(args: &SimulateArgs) -> DatasetSpec {
    let mut spec = match (args.preset, args.phantom) {
        (Some(p), _) => DatasetSpec::preset(p.into(), args.fast),
        (None, Some(kind)) => {
            let kind: PhantomKind = kind.into();
            let base = match kind {
                PhantomKind::NestedShells => Preset::Rigid,
                PhantomKind::Thorax => Preset::Nonrigid,
            };
            DatasetSpec {
                phantom: kind,
                ..DatasetSpec::preset(base, args.fast)
            }
        }
        (None, None) => unreachable!("clap requires --preset or --phantom"),
    };
    if let Some(g) = args.gates {
        spec.num_gates = g as usize;
    }
    if let Some(m) = args.motion {
        spec.motion = m.into();
        spec.magnitude = match spec.motion {
            MotionKind::Rigid => DEFAULT_RIGID_MAGNITUDE,
            MotionKind::Dilatation => DEFAULT_DILATATION_MAGNITUDE,
        };
    }
    if let Some(m) = args.magnitude {
        spec.magnitude = m;
    }
    spec.sigma = args.sigma;
    spec.seed = args.seed;
    spec
}

fn simulate_into(spec: &DatasetSpec, out: &Path, power: (usize, u64), stand_ins: StandIns) -> Result<(GatedDataset, Manifest)> {
    let data = spec.build()?;
    let (projector, gates) = data.operators(true)?;
    let mut manifest = Manifest::for_dataset(&data);
    manifest.magnitude = Some(spec.magnitude);
    manifest.norms = Some(estimate_norms(&projector, &gates, power.0, power.1)?);
    manifest.stand_ins = stand_ins;
    write_dataset(out, &data, &manifest).with_context(|| format!("writing dataset to {}", out.display()))?;
    write_pgm(out.join("truth.pgm"), &data.truth)?;
    if let Some(last) = data.motion.last() {
        let warp = WarpOperator::new(*last, data.truth.shape())?;
        write_pgm(out.join("last_state.pgm"), &warp.apply(&data.truth)?)?;
    }
    Ok((data, manifest))
}

pub fn simulate(args: SimulateArgs) -> Result<()> {
    let spec = dataset_spec(&args);
    if spec.motion == MotionKind::Dilatation && spec.magnitude <= -1.0 {
        return Err(usage("--magnitude must exceed -1 for dilatation"));
    }
    let stand_ins = StandIns {
        phantom: true,
        sigma: args.sigma.is_none(),
        motion_magnitude: args.magnitude.is_none(),
    };
    let (data, _) = simulate_into(&spec, &args.out, (args.power_iterations, args.power_seed), stand_ins)?;
    println!(
        "wrote {} gates ({} phantom, {} motion, sigma {:.4e}) to {}",
        data.num_gates(),
        spec.phantom,
        spec.motion,
        data.noise.sigma,
        args.out.display()
    );
    Ok(())
}

/// Parameters a reference was computed with; `reconstruct --saddle` checks them.
#[derive(Debug, Serialize, Deserialize)]
struct ReferenceInfo {
    data: PathBuf,
    kappa: f64,
    alpha: f64,
    motion_compensated: bool,
    tol: f64,
    max_iter: usize,
    converged: bool,
    residual: f64,
    iterations: usize,
}

fn solve_reference(setup: &Setup, tol: f64, max_iter: usize) -> Result<SaddlePoint> {
    let sp = cg_reference(&setup.problem, tol, max_iter)?;
    if !sp.converged {
        eprintln!(
            "warning: CG stopped after {} iterations at relative residual {:.3e} (tol {tol:.1e})",
            sp.iterations, sp.residual
        );
    }
    Ok(sp)
}

pub fn reference(args: ReferenceArgs) -> Result<()> {
    let (data, manifest) = load(&args.data)?;
    let setup = Setup::new(&data, args.kappa, !args.no_mc, manifest.norms.as_ref())?;
    let sp = solve_reference(&setup, args.tol, args.max_iter)?;
    write_saddle(&args.out, &sp).with_context(|| format!("writing {}", args.out.display()))?;
    write_pgm(args.out.join("x.pgm"), &sp.x_star)?;
    let info = ReferenceInfo {
        data: args.data.clone(),
        kappa: args.kappa,
        alpha: setup.alpha(),
        motion_compensated: !args.no_mc,
        tol: args.tol,
        max_iter: args.max_iter,
        converged: sp.converged,
        residual: sp.residual,
        iterations: sp.iterations,
    };
    write_json(&args.out.join(REFERENCE_FILE), &info)?;
    println!(
        "reference: {} CG iterations, relative residual {:.3e}, rmse to truth {:.6e}",
        sp.iterations,
        sp.residual,
        rmse(&sp.x_star, &data.truth)?
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct RunInfo<'a> {
    data: &'a Path,
    saddle: Option<&'a Path>,
    kappa: f64,
    alpha: f64,
    motion_compensated: bool,
    config: &'a mcir_core::solvers::SolverConfig,
    forward_calls: u64,
    adjoint_calls: u64,
    final_objective: Option<f64>,
    final_dist_sq: Option<f64>,
    final_rmse_to_truth: Option<f64>,
}

fn load_saddle(dir: &Path, kappa: f64, motion_compensated: bool) -> Result<SaddlePoint> {
    let info_path = dir.join(REFERENCE_FILE);
    let text = fs::read_to_string(&info_path).with_context(|| format!("reading --saddle {}", info_path.display()))?;
    let info: ReferenceInfo = serde_json::from_str(&text).with_context(|| format!("parsing {}", info_path.display()))?;
    if (info.kappa - kappa).abs() > 1e-12 * kappa || info.motion_compensated != motion_compensated {
        return Err(usage(format!(
            "--saddle {} was computed with kappa {} ({}), but this run uses kappa {} ({})",
            dir.display(),
            info.kappa,
            if info.motion_compensated { "MC" } else { "no MC" },
            kappa,
            if motion_compensated { "MC" } else { "no MC" },
        )));
    }
    read_saddle(dir).with_context(|| format!("reading --saddle {}", dir.display()))
}

pub fn reconstruct(args: ReconstructArgs) -> Result<()> {
    let (data, manifest) = load(&args.data)?;
    let mc = !args.no_mc;
    let saddle = match &args.saddle {
        Some(dir) => Some(load_saddle(dir, args.kappa, mc)?),
        None => None,
    };
    let setup = Setup::new(&data, args.kappa, mc, manifest.norms.as_ref())?;
    let config = default_config(args.algo.into(), &setup.step_norms(), setup.alpha(), args.epochs, args.seed)?;
    let out = run(&config, &setup.problem, saddle.as_ref(), Some(&data.truth))?;
    create_dir(&args.out)?;
    write_raster(args.out.join("recon.f64"), out.image())?;
    write_pgm(args.out.join("recon.pgm"), out.image())?;
    write_csv_file(args.out.join("convergence.csv"), &out.record)?;
    if args.dump_state {
        write_primal_dual(args.out.join("state"), &out.state.x, &out.state.y)?;
    }
    let last = out.record.last();
    let finite = |v: f64| Some(v).filter(|v| v.is_finite());
    let info = RunInfo {
        data: &args.data,
        saddle: args.saddle.as_deref(),
        kappa: args.kappa,
        alpha: setup.alpha(),
        motion_compensated: mc,
        config: &config,
        forward_calls: out.counts.forward,
        adjoint_calls: out.counts.adjoint,
        final_objective: last.map(|r| r.objective),
        final_dist_sq: last.and_then(|r| finite(r.dist_sq)),
        final_rmse_to_truth: last.and_then(|r| finite(r.rmse_to_truth)),
    };
    write_json(&args.out.join("run.json"), &info)?;
    match last {
        Some(r) => println!(
            "{} after {} epochs: objective {:.10e}, dist_sq {:.3e}, rmse to truth {:.6e}",
            config.mode, args.epochs, r.objective, r.dist_sq, r.rmse_to_truth
        ),
        None => println!("{}: zero epochs, wrote the zero image", config.mode),
    }
    Ok(())
}

pub fn rates(args: RatesArgs) -> Result<()> {
    let (data, manifest) = load(&args.data)?;
    let setup = Setup::new(&data, args.kappa, true, manifest.norms.as_ref())?;
    let report = setup.rate_report()?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        print!("{}", report.to_table());
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct RunSummary {
    algo: Mode,
    seed: u64,
    rate: Option<f64>,
    r_squared: Option<f64>,
    rmse_to_mc_at_snapshot: Option<f64>,
    final_dist_sq: f64,
    forward_calls: u64,
    adjoint_calls: u64,
}

#[derive(Debug, Serialize)]
struct ExperimentSummary {
    preset: Preset,
    geometry: Geometry,
    epochs: u32,
    snapshot: u32,
    kappa: f64,
    alpha: f64,
    data_seed: u64,
    fit_window: (f64, f64),
    rates: RateReport,
    rmse_mc_to_truth: f64,
    rmse_no_mc_to_truth: f64,
    pdhg: RunSummary,
    spdhg: Vec<RunSummary>,
    spdhg_faster: usize,
    spdhg_closer_at_snapshot_median: Option<bool>,
}

struct Trajectory {
    summary: RunSummary,
    record: ConvergenceRecord,
    snapshot: Option<Image>,
}

fn trajectory(setup: &Setup, sp: &SaddlePoint, truth: &Image, mode: Mode, seed: u64, args: &ExperimentArgs, window: (f64, f64)) -> Result<Trajectory> {
    let config = default_config(mode, &setup.step_norms(), setup.alpha(), args.epochs as usize, seed)?;
    let mut snapshot = None;
    let out = run_observed(&config, &setup.problem, Some(sp), Some(truth), 1, |state, row| {
        if row.epoch == args.snapshot as f64 {
            snapshot = Some(state.x.clone());
        }
    })?;
    let fit = fit_rate(&out.record, window).ok();
    let rmse_snap = snapshot.as_ref().map(|x| rmse(x, &sp.x_star)).transpose()?;
    Ok(Trajectory {
        summary: RunSummary {
            algo: mode,
            seed,
            rate: fit.as_ref().map(|f| f.rate),
            r_squared: fit.as_ref().map(|f| f.r_squared),
            rmse_to_mc_at_snapshot: rmse_snap,
            final_dist_sq: out.record.last().map_or(f64::NAN, |r| r.dist_sq),
            forward_calls: out.counts.forward,
            adjoint_calls: out.counts.adjoint,
        },
        record: out.record,
        snapshot,
    })
}

fn median(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Option<Vec<f64>> = values.collect();
    mcir_core::analysis::median(&v?)
}

pub fn experiment(args: ExperimentArgs) -> Result<()> {
    if args.snapshot > args.epochs {
        return Err(usage(format!("--snapshot {} exceeds --epochs {}", args.snapshot, args.epochs)));
    }
    let preset: Preset = args.preset.into();
    let mut spec = DatasetSpec::preset(preset, args.fast);
    spec.seed = args.seed;
    create_dir(&args.out)?;
    let stand_ins = StandIns {
        phantom: true,
        sigma: true,
        motion_magnitude: true,
    };
    let (data, manifest) = simulate_into(
        &spec,
        &args.out.join("dataset"),
        (mcir_core::linops::DEFAULT_POWER_ITERATIONS, mcir_core::pipeline::DEFAULT_POWER_SEED),
        stand_ins,
    )?;
    eprintln!("simulated {} gates", data.num_gates());

    let mc = Setup::new(&data, args.kappa, true, manifest.norms.as_ref())?;
    let no_mc = Setup::new(&data, args.kappa, false, manifest.norms.as_ref())?;
    let sp = solve_reference(&mc, args.tol, 10_000)?;
    let sp_no_mc = solve_reference(&no_mc, args.tol, 10_000)?;
    write_saddle(args.out.join("reference_mc"), &sp)?;
    write_saddle(args.out.join("reference_no_mc"), &sp_no_mc)?;
    eprintln!("references solved ({} / {} CG iterations)", sp.iterations, sp_no_mc.iterations);

    let window = (DEFAULT_FIT_WINDOW.0, DEFAULT_FIT_WINDOW.1.min(args.epochs as f64));
    let pdhg = trajectory(&mc, &sp, &data.truth, Mode::Pdhg, 0, &args, window)?;
    let mut spdhg = Vec::with_capacity(args.seeds as usize);
    for seed in 0..args.seeds as u64 {
        spdhg.push(trajectory(&mc, &sp, &data.truth, Mode::Spdhg, seed, &args, window)?);
        eprintln!("spdhg seed {seed} done");
    }

    let mut csv = std::io::BufWriter::new(fs::File::create(args.out.join("trajectories.csv"))?);
    let labelled = std::iter::once((format!("pdhg,{}", pdhg.summary.seed), &pdhg.record))
        .chain(spdhg.iter().map(|t| (format!("spdhg,{}", t.summary.seed), &t.record)));
    write_labelled_csv(&mut csv, "algo,seed", labelled)?;
    std::io::Write::flush(&mut csv)?;

    let images: [(&str, Option<&Image>); 5] = [
        ("truth", Some(&data.truth)),
        ("converged_mc", Some(&sp.x_star)),
        ("converged_no_mc", Some(&sp_no_mc.x_star)),
        ("pdhg_snapshot", pdhg.snapshot.as_ref()),
        ("spdhg_snapshot", spdhg.first().and_then(|t| t.snapshot.as_ref())),
    ];
    for (name, img) in images {
        if let Some(img) = img {
            write_raster(args.out.join(format!("{name}.f64")), img)?;
            write_pgm(args.out.join(format!("{name}.pgm")), img)?;
        }
    }

    let spdhg_faster = spdhg
        .iter()
        .filter(|t| matches!((t.summary.rate, pdhg.summary.rate), (Some(s), Some(p)) if s < p))
        .count();
    let closer = median(spdhg.iter().map(|t| t.summary.rmse_to_mc_at_snapshot))
        .zip(pdhg.summary.rmse_to_mc_at_snapshot)
        .map(|(s, p)| s < p);
    let summary = ExperimentSummary {
        preset,
        geometry: data.geometry.clone(),
        epochs: args.epochs,
        snapshot: args.snapshot,
        kappa: args.kappa,
        alpha: mc.alpha(),
        data_seed: args.seed,
        fit_window: window,
        rates: mc.rate_report()?,
        rmse_mc_to_truth: rmse(&sp.x_star, &data.truth)?,
        rmse_no_mc_to_truth: rmse(&sp_no_mc.x_star, &data.truth)?,
        pdhg: pdhg.summary,
        spdhg: spdhg.into_iter().map(|t| t.summary).collect(),
        spdhg_faster,
        spdhg_closer_at_snapshot_median: closer,
    };
    write_json(&args.out.join("summary.json"), &summary)?;

    let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.4}"));
    println!("preset {preset}, kappa {}, {} epochs", args.kappa, args.epochs);
    println!("theory   r_spdhg {:.4}  r_pdhg {:.4}", summary.rates.r_spdhg, summary.rates.r_pdhg);
    println!("pdhg     rate {}  R^2 {}", fmt(summary.pdhg.rate), fmt(summary.pdhg.r_squared));
    for s in &summary.spdhg {
        println!("spdhg {:<2} rate {}  R^2 {}", s.seed, fmt(s.rate), fmt(s.r_squared));
    }
    println!("spdhg faster than pdhg for {} of {} seeds", summary.spdhg_faster, summary.spdhg.len());
    println!(
        "rmse to truth: MC {:.6e}, no MC {:.6e}",
        summary.rmse_mc_to_truth, summary.rmse_no_mc_to_truth
    );
    Ok(())
}
