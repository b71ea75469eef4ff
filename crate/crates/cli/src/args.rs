use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use pls::data::SyntheticKind;
use pls::pipeline::SweepAxis;
use pls::{KernelFamily, Likelihood, Selection};

#[derive(Debug, Parser)]
#[command(name = "pls", version, about = "Projected Langevin sampling for Gaussian-process posteriors")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split the data, fit on the training part and predict the rest.
    Run(RunArgs),
    /// Fit on all rows; writes the basis and the coefficient ensemble.
    Fit(FitArgs),
    /// Push a saved ensemble to new inputs.
    Predict(PredictArgs),
    /// Write one of the synthetic datasets.
    Synth(SynthArgs),
    /// Time each phase over a sweep of J, M or N.
    Scaling(ScalingArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KernelArg {
    Se,
    Matern12,
    Matern32,
    Matern52,
}

impl From<KernelArg> for KernelFamily {
    fn from(k: KernelArg) -> Self {
        match k {
            KernelArg::Se => KernelFamily::SquaredExponential,
            KernelArg::Matern12 => KernelFamily::Matern12,
            KernelArg::Matern32 => KernelFamily::Matern32,
            KernelArg::Matern52 => KernelFamily::Matern52,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LikelihoodArg {
    Gaussian,
    Bernoulli,
    Poisson,
    #[value(name = "student_t")]
    StudentT,
    Shift,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SelectArg {
    Greedy,
    Random,
}

impl From<SelectArg> for Selection {
    fn from(s: SelectArg) -> Self {
        match s {
            SelectArg::Greedy => Selection::Greedy,
            SelectArg::Random => Selection::Random,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SynthArg {
    #[value(name = "sine_regression")]
    SineRegression,
    #[value(name = "shift_mixture")]
    ShiftMixture,
    #[value(name = "shift_mixture_shared")]
    ShiftMixtureShared,
    #[value(name = "poisson_squared")]
    PoissonSquared,
}

impl From<SynthArg> for SyntheticKind {
    fn from(s: SynthArg) -> Self {
        match s {
            SynthArg::SineRegression => SyntheticKind::SineRegression,
            SynthArg::ShiftMixture => SyntheticKind::ShiftMixture,
            SynthArg::ShiftMixtureShared => SyntheticKind::ShiftMixtureShared,
            SynthArg::PoissonSquared => SyntheticKind::PoissonSquared,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AxisArg {
    Particles,
    Inducing,
    Data,
}

impl From<AxisArg> for SweepAxis {
    fn from(a: AxisArg) -> Self {
        match a {
            AxisArg::Particles => SweepAxis::Particles,
            AxisArg::Inducing => SweepAxis::Inducing,
            AxisArg::Data => SweepAxis::Data,
        }
    }
}

/// Where the observations come from.
#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// CSV with a header row; the last column is the target.
    #[arg(long, conflicts_with = "synthetic", required_unless_present = "synthetic")]
    pub data: Option<PathBuf>,
    /// Generate one of the synthetic datasets instead of reading a file.
    #[arg(long, value_enum)]
    pub synthetic: Option<SynthArg>,
    /// Rows to generate with --synthetic.
    #[arg(long, default_value_t = 200)]
    pub n: usize,
}

/// Observation model. Unset parameters default to the synthetic generator's
/// values, then to 1 (noise variance), 4 (dof), 20 (shift) and 0.5 (mix).
#[derive(Debug, Clone, Args)]
pub struct LikelihoodArgs {
    /// Defaults to the generator's likelihood with --synthetic, else gaussian.
    #[arg(long, value_enum)]
    pub likelihood: Option<LikelihoodArg>,
    /// Noise variance σ² (gaussian, shift) or squared scale (student_t).
    #[arg(long)]
    pub noise_var: Option<f64>,
    #[arg(long)]
    pub dof: Option<f64>,
    #[arg(long)]
    pub shift: Option<f64>,
    #[arg(long)]
    pub mix_alpha: Option<f64>,
}

impl LikelihoodArgs {
    pub fn build(&self, synthetic: Option<SyntheticKind>) -> pls::Result<Likelihood> {
        let base = synthetic.map(SyntheticKind::likelihood);
        let family = match (self.likelihood, base) {
            (Some(f), _) => f,
            (None, Some(Likelihood::Gaussian { .. })) | (None, None) => LikelihoodArg::Gaussian,
            (None, Some(Likelihood::BernoulliLogistic)) => LikelihoodArg::Bernoulli,
            (None, Some(Likelihood::PoissonSquared)) => LikelihoodArg::Poisson,
            (None, Some(Likelihood::StudentT { .. })) => LikelihoodArg::StudentT,
            (None, Some(Likelihood::ShiftMixture { .. })) => LikelihoodArg::Shift,
        };
        let base_nv = match base {
            Some(Likelihood::Gaussian { noise_variance }) | Some(Likelihood::ShiftMixture { noise_variance, .. }) => {
                Some(noise_variance)
            }
            _ => None,
        };
        let nv = self.noise_var.or(base_nv).unwrap_or(1.0);
        match family {
            LikelihoodArg::Gaussian => Likelihood::gaussian(nv),
            LikelihoodArg::Bernoulli => Ok(Likelihood::BernoulliLogistic),
            LikelihoodArg::Poisson => Ok(Likelihood::PoissonSquared),
            LikelihoodArg::StudentT => Likelihood::student_t(self.dof.unwrap_or(4.0), nv.sqrt()),
            LikelihoodArg::Shift => {
                let (s, a) = match base {
                    Some(Likelihood::ShiftMixture { shift, mix, .. }) => (shift, mix),
                    _ => (20.0, 0.5),
                };
                Likelihood::shift_mixture(self.shift.unwrap_or(s), self.mix_alpha.unwrap_or(a), nv)
            }
        }
    }
}

/// Kernel, basis and sampler settings.
#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[arg(long, value_enum, default_value = "se")]
    pub kernel: KernelArg,
    /// Shared lengthscale; the median heuristic when unset.
    #[arg(long)]
    pub lengthscale: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub signal_var: f64,
    /// Number of inducing points M; ⌈√N⌉ when unset.
    #[arg(long)]
    pub inducing: Option<usize>,
    #[arg(long, value_enum, default_value = "greedy")]
    pub select: SelectArg,
    /// Relative eigenvalue floor for the basis.
    #[arg(long, default_value_t = pls::pipeline::PIPELINE_RANK_FLOOR)]
    pub rank_floor: f64,
    /// Step size η; half the linear stability limit when unset.
    #[arg(long)]
    pub eta: Option<f64>,
    /// Curvature bound of the cost, used for the default step size.
    #[arg(long)]
    pub curvature: Option<f64>,
    #[arg(long, default_value_t = 2000)]
    pub steps: usize,
    /// Number of particles J.
    #[arg(long, default_value_t = 100)]
    pub particles: usize,
    /// Initial coefficients are N(0, s²λ̂) with this s.
    #[arg(long, default_value_t = 1.0)]
    pub init_scale: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Pick lengthscale, signal and noise variance by grid search.
    #[arg(long)]
    pub tune: bool,
    /// JSON file with `lengthscales`, `signal_variances`, `noise_variances`.
    #[arg(long, requires = "tune")]
    pub tune_grid: Option<PathBuf>,
    /// Lipschitz constant for the KL bound.
    #[arg(long)]
    pub kappa: Option<f64>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub likelihood: LikelihoodArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Fraction of rows held out for prediction.
    #[arg(long, default_value_t = 0.2)]
    pub test_frac: f64,
    /// Also predict on an even 1-D grid `LO,HI,COUNT`.
    #[arg(long, value_parser = parse_grid, allow_hyphen_values = true)]
    pub grid: Option<(f64, f64, usize)>,
    #[arg(long, default_value = "pls-out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub likelihood: LikelihoodArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value = "pls-out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// basis.json written by `fit` or `run`.
    #[arg(long)]
    pub basis: PathBuf,
    /// coeffs.csv written by `fit` or `run`.
    #[arg(long)]
    pub coeffs: PathBuf,
    /// Test CSV; metrics are reported against its last column.
    #[arg(long, required_unless_present = "grid", conflicts_with = "grid")]
    pub data: Option<PathBuf>,
    #[arg(long, value_parser = parse_grid, allow_hyphen_values = true)]
    pub grid: Option<(f64, f64, usize)>,
    #[command(flatten)]
    pub likelihood: LikelihoodArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "pls-out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(value_enum)]
    pub name: SynthArg,
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "pls-out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScalingArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub likelihood: LikelihoodArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 0.2)]
    pub test_frac: f64,
    #[arg(long, value_enum)]
    pub axis: AxisArg,
    /// Comma-separated sweep values.
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<usize>,
    /// Timings per value; the fastest is kept.
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
    #[arg(long, default_value = "pls-out")]
    pub out: PathBuf,
}

fn parse_grid(s: &str) -> Result<(f64, f64, usize), String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let [lo, hi, n] = parts.as_slice() else {
        return Err("expected LO,HI,COUNT".into());
    };
    let lo: f64 = lo.parse().map_err(|e| format!("LO: {e}"))?;
    let hi: f64 = hi.parse().map_err(|e| format!("HI: {e}"))?;
    let n: usize = n.parse().map_err(|e| format!("COUNT: {e}"))?;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) || n == 0 {
        return Err("need finite LO < HI and COUNT ≥ 1".into());
    }
    Ok((lo, hi, n))
}
