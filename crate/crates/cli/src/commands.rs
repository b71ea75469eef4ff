use std::fs::File;
use std::path::Path;

use nalgebra::DMatrix;
use serde::Serialize;

use pls::data::{gen_synthetic, load_csv, read_matrix_csv, Dataset, SyntheticKind, Task};
use pls::model_selection::HyperparamGrid;
use pls::pipeline::{self, grid_1d, RunConfig, RunOutput};
use pls::sampler::{init_ensemble, Init, SdeConfig};
use pls::spectral::BasisDocument;
use pls::{Likelihood, PlsError, Result, SpectralBasis};

use crate::args::{DataArgs, FitArgs, LikelihoodArgs, ModelArgs, PredictArgs, RunArgs, ScalingArgs, SynthArgs};
use crate::output::{json_error, DataSource, Manifest, OutDir};

fn run_config(model: &ModelArgs, likelihood: Likelihood) -> Result<RunConfig> {
    let mut cfg = RunConfig::new(model.kernel.into(), likelihood);
    cfg.lengthscale = model.lengthscale;
    cfg.signal_variance = model.signal_var;
    cfg.inducing = model.inducing;
    cfg.selection = model.select.into();
    cfg.rank_floor = model.rank_floor;
    cfg.step_size = model.eta;
    cfg.curvature = model.curvature;
    cfg.n_steps = model.steps;
    cfg.n_particles = model.particles;
    cfg.init_scale = model.init_scale;
    cfg.seed = model.seed;
    cfg.tune = model.tune;
    cfg.kappa = model.kappa;
    if let Some(path) = &model.tune_grid {
        let grid: HyperparamGrid = serde_json::from_reader(File::open(path)?).map_err(json_error)?;
        cfg.tune_grid = Some(grid);
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Likelihood and validated configuration, built before any data is read.
fn prepare(data: &DataArgs, lik: &LikelihoodArgs, model: &ModelArgs) -> Result<RunConfig> {
    if data.synthetic.is_some() && data.n == 0 {
        return Err(PlsError::Input("--n must be at least 1".into()));
    }
    let likelihood = lik.build(data.synthetic.map(Into::into))?;
    run_config(model, likelihood)
}

fn load(data: &DataArgs, likelihood: &Likelihood, seed: u64) -> Result<(Dataset, String)> {
    match (&data.data, data.synthetic) {
        (Some(path), _) => Ok((load_csv(path, Task::for_likelihood(likelihood))?, path.display().to_string())),
        (None, Some(kind)) => {
            let kind: SyntheticKind = kind.into();
            let ds = gen_synthetic(kind, data.n, seed)?.data;
            for y in &ds.y {
                likelihood.check_target(*y)?;
            }
            Ok((ds, kind.name().to_string()))
        }
        (None, None) => Err(PlsError::Input("either --data or --synthetic is required".into())),
    }
}

fn empty_like(ds: &Dataset) -> Result<Dataset> {
    Dataset::new(DMatrix::zeros(0, ds.dim()), Vec::new(), ds.columns.clone(), ds.task)
}

fn write_fit_artifacts(out: &mut OutDir, res: &RunOutput) -> Result<()> {
    out.json("basis.json", &res.fit.basis.to_document())?;
    out.with("coeffs.csv", |w| res.fit.ensemble.write_csv(w))?;
    if let Some(draws) = &res.draws {
        out.with("predictions.csv", |w| draws.write_csv(w))?;
    }
    if let Some(m) = &res.metrics {
        out.json("metrics.json", m)?;
    }
    out.json("diagnostics.json", &res.diagnostics)
}

#[derive(Serialize)]
struct RunParams<'a> {
    config: &'a RunConfig,
    test_frac: f64,
    grid: Option<(f64, f64, usize)>,
}

pub fn run(args: &RunArgs) -> Result<()> {
    let cfg = prepare(&args.data, &args.likelihood, &args.model)?;
    if !(0.0..1.0).contains(&args.test_frac) {
        return Err(PlsError::Input(format!("--test-frac must lie in [0, 1), got {}", args.test_frac)));
    }
    let (ds, source) = load(&args.data, &cfg.likelihood, cfg.seed)?;
    if args.grid.is_some() && ds.dim() != 1 {
        return Err(PlsError::Input(format!("--grid needs one input column, data has {}", ds.dim())));
    }
    let (train, test) = ds.split(args.test_frac, cfg.seed)?;
    let res = pipeline::run(&cfg, &train, &test)?;

    let mut out = OutDir::create(&args.out)?;
    out.with("train.csv", |w| train.write_csv(w))?;
    if !test.is_empty() {
        out.with("test.csv", |w| test.write_csv(w))?;
    }
    write_fit_artifacts(&mut out, &res)?;
    if let Some((lo, hi, n)) = args.grid {
        let draws = pls::predict(&res.fit.basis, &grid_1d(lo, hi, n), &res.fit.ensemble, cfg.seed)?;
        out.with("grid_predictions.csv", |w| draws.write_csv(w))?;
    }
    if let Some(m) = &res.metrics {
        println!("nll {:.4}  mae {:.4}  interval_95 {:.4}", m.nll, m.mae, m.interval_width_95);
    }

    let params = RunParams {
        config: &cfg,
        test_frac: args.test_frac,
        grid: args.grid,
    };
    let mut manifest = Manifest::new("run", cfg.seed, &params);
    manifest.data = Some(DataSource {
        source,
        rows: ds.len(),
        n_train: train.len(),
        n_test: test.len(),
        test_frac: Some(args.test_frac),
    });
    manifest.kernel = Some(&res.fit.kernel);
    manifest.likelihood = Some(res.likelihood);
    manifest.step_size = Some(res.fit.step_size);
    manifest.factorization = res.diagnostics.factorization;
    manifest.write(&mut out)
}

pub fn fit(args: &FitArgs) -> Result<()> {
    let cfg = prepare(&args.data, &args.likelihood, &args.model)?;
    let (ds, source) = load(&args.data, &cfg.likelihood, cfg.seed)?;
    let res = pipeline::run(&cfg, &ds, &empty_like(&ds)?)?;
    let mut out = OutDir::create(&args.out)?;
    write_fit_artifacts(&mut out, &res)?;
    let mut manifest = Manifest::new("fit", cfg.seed, &cfg);
    manifest.data = Some(DataSource {
        source,
        rows: ds.len(),
        n_train: ds.len(),
        n_test: 0,
        test_frac: None,
    });
    manifest.kernel = Some(&res.fit.kernel);
    manifest.likelihood = Some(res.likelihood);
    manifest.step_size = Some(res.fit.step_size);
    manifest.write(&mut out)
}

#[derive(Serialize)]
struct PredictParams<'a> {
    basis: &'a Path,
    coeffs: &'a Path,
    data: Option<&'a Path>,
    grid: Option<(f64, f64, usize)>,
}

pub fn predict(args: &PredictArgs) -> Result<()> {
    let likelihood = args.likelihood.build(None)?;
    let doc: BasisDocument = serde_json::from_reader(File::open(&args.basis)?).map_err(json_error)?;
    let basis = SpectralBasis::from_document(&doc)?;
    let (header, coeffs) = read_matrix_csv(File::open(&args.coeffs)?)?;
    if header.len() != basis.rank() {
        return Err(PlsError::Input(format!(
            "{} has {} columns but the basis has rank {}",
            args.coeffs.display(),
            header.len(),
            basis.rank()
        )));
    }
    if coeffs.nrows() == 0 {
        return Err(PlsError::Input(format!("{} has no particles", args.coeffs.display())));
    }
    let sde = SdeConfig::new(1.0, 0, coeffs.nrows(), args.seed).with_init(Init::Custom(coeffs));
    let ens = init_ensemble(&sde, basis.eigenvalues().as_slice())?;

    let test = match &args.data {
        Some(path) => Some(load_csv(path, Task::for_likelihood(&likelihood))?),
        None => None,
    };
    let xstar = match (&test, args.grid) {
        (Some(ds), _) => ds.x.clone(),
        (None, Some((lo, hi, n))) => {
            if basis.kernel().dim() != 1 {
                return Err(PlsError::Input("--grid needs a basis over one input column".into()));
            }
            grid_1d(lo, hi, n)
        }
        (None, None) => return Err(PlsError::Input("either --data or --grid is required".into())),
    };
    let joint = pls::JointPriorCov::build(&basis, &xstar)?;
    let draws = joint.sample(&ens, args.seed)?;

    let mut out = OutDir::create(&args.out)?;
    out.with("predictions.csv", |w| draws.write_csv(w))?;
    if let Some(ds) = &test {
        if draws.n_draws() >= 2 {
            let m = pls::diagnostics::metrics(&draws, &ds.y, &likelihood, args.seed)?;
            println!("nll {:.4}  mae {:.4}  interval_95 {:.4}", m.nll, m.mae, m.interval_width_95);
            out.json("metrics.json", &m)?;
        } else {
            log::warn!("metrics need at least two particles; skipping");
        }
    }
    let params = PredictParams {
        basis: &args.basis,
        coeffs: &args.coeffs,
        data: args.data.as_deref(),
        grid: args.grid,
    };
    let mut manifest = Manifest::new("predict", args.seed, &params);
    manifest.kernel = Some(basis.kernel());
    manifest.likelihood = Some(likelihood);
    manifest.factorization = Some(joint.factorization());
    manifest.write(&mut out)
}

#[derive(Serialize)]
struct SynthParams {
    name: SyntheticKind,
    n: usize,
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    let kind: SyntheticKind = args.name.into();
    let s = gen_synthetic(kind, args.n, args.seed)?;
    let mut out = OutDir::create(&args.out)?;
    out.with("data.csv", |w| s.data.write_csv(w))?;
    out.with("truth.csv", |w| {
        let mut csv = csv::Writer::from_writer(w);
        let io = |e: csv::Error| PlsError::Io(std::io::Error::other(e));
        let mut header = vec!["x".to_string(), "f".to_string()];
        if s.shifted.is_some() {
            header.push("shifted".into());
        }
        csv.write_record(&header).map_err(io)?;
        for (i, f) in s.truth.iter().enumerate() {
            let mut rec = vec![format!("{:e}", s.data.x[(i, 0)]), format!("{f:e}")];
            if let Some(sh) = &s.shifted {
                rec.push(u8::from(sh[i]).to_string());
            }
            csv.write_record(&rec).map_err(io)?;
        }
        csv.flush()?;
        Ok(())
    })?;
    let params = SynthParams { name: kind, n: args.n };
    let mut manifest = Manifest::new("synth", args.seed, &params);
    manifest.likelihood = Some(kind.likelihood());
    manifest.write(&mut out)
}

#[derive(Serialize)]
struct ScalingParams<'a> {
    config: &'a RunConfig,
    axis: pls::pipeline::SweepAxis,
    values: &'a [usize],
    repeats: usize,
    test_frac: f64,
}

pub fn scaling(args: &ScalingArgs) -> Result<()> {
    let cfg = prepare(&args.data, &args.likelihood, &args.model)?;
    let (ds, source) = load(&args.data, &cfg.likelihood, cfg.seed)?;
    let (train, test) = ds.split(args.test_frac, cfg.seed)?;
    let rows = pipeline::scaling_report(&cfg, &train, &test, args.axis.into(), &args.values, args.repeats)?;
    let mut out = OutDir::create(&args.out)?;
    out.with("scaling.csv", |w| {
        let mut csv = csv::Writer::from_writer(w);
        for r in &rows {
            csv.serialize(r).map_err(|e| PlsError::Io(std::io::Error::other(e)))?;
        }
        csv.flush()?;
        Ok(())
    })?;
    for r in &rows {
        println!(
            "{:>8}  decompose {:.4}s  simulate {:.4}s  predict {:.4}s",
            r.value, r.decompose_s, r.simulate_s, r.predict_s
        );
    }
    let params = ScalingParams {
        config: &cfg,
        axis: args.axis.into(),
        values: &args.values,
        repeats: args.repeats,
        test_frac: args.test_frac,
    };
    let mut manifest = Manifest::new("scaling", cfg.seed, &params);
    manifest.data = Some(DataSource {
        source,
        rows: ds.len(),
        n_train: train.len(),
        n_test: test.len(),
        test_frac: Some(args.test_frac),
    });
    manifest.write(&mut out)
}
