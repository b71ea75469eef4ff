//! Datasets: CSV input and output, train/test splits and the synthetic
//! experiments.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{PlsError, Result};
use crate::likelihoods::Likelihood;
use crate::rng::{stream, StreamDomain};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Regression,
    Classification,
    Count,
}

impl Task {
    pub fn for_likelihood(lik: &Likelihood) -> Task {
        match lik {
            Likelihood::BernoulliLogistic => Task::Classification,
            Likelihood::PoissonSquared => Task::Count,
            _ => Task::Regression,
        }
    }

    fn check(self, y: f64) -> bool {
        match self {
            Task::Regression => true,
            Task::Classification => y == 0.0 || y == 1.0,
            Task::Count => y >= 0.0 && y.fract() == 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: Vec<f64>,
    /// Feature names followed by the target name.
    pub columns: Vec<String>,
    pub task: Task,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: Vec<f64>, columns: Vec<String>, task: Task) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(PlsError::input(format!("{} feature rows but {} targets", x.nrows(), y.len())));
        }
        if columns.len() != x.ncols() + 1 {
            return Err(PlsError::input(format!("expected {} column names, got {}", x.ncols() + 1, columns.len())));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(PlsError::input("dataset contains non-finite values"));
        }
        if let Some((i, v)) = y.iter().enumerate().find(|(_, v)| !task.check(**v)) {
            return Err(PlsError::input(format!("target {v} in row {} is invalid for a {task:?} task", i + 1)));
        }
        Ok(Dataset { x, y, columns, task })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn select(&self, rows: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(rows.iter()),
            y: rows.iter().map(|i| self.y[*i]).collect(),
            columns: self.columns.clone(),
            task: self.task,
        }
    }

    /// Random split with stream `(seed, 0)`; the test part holds
    /// `round(N·test_frac)` rows, at least one when `test_frac > 0`, and the
    /// training part keeps at least one row. Both parts keep file order.
    pub fn split(&self, test_frac: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(0.0..1.0).contains(&test_frac) {
            return Err(PlsError::input(format!("test fraction must lie in [0, 1), got {test_frac}")));
        }
        let n = self.len();
        let mut n_test = (n as f64 * test_frac).round() as usize;
        if test_frac > 0.0 {
            n_test = n_test.max(1);
        }
        if n_test >= n {
            return Err(PlsError::input(format!("cannot hold out {n_test} of {n} rows")));
        }
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut stream(seed, StreamDomain::Split, 0));
        let mut test = idx[..n_test].to_vec();
        let mut train = idx[n_test..].to_vec();
        test.sort_unstable();
        train.sort_unstable();
        Ok((self.select(&train), self.select(&test)))
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| PlsError::Io(std::io::Error::other(e));
        w.write_record(&self.columns).map_err(io)?;
        for (row, y) in self.x.row_iter().zip(&self.y) {
            w.write_record(row.iter().chain(std::iter::once(y)).map(|v| format!("{v:e}"))).map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Reads a CSV with a header row; the last column is the target.
pub fn load_csv(path: &Path, task: Task) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    read_csv(file, task).map_err(|e| match e {
        PlsError::Input(msg) => PlsError::Input(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn read_csv<R: Read>(input: R, task: Task) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(input);
    let header = match reader.headers() {
        Ok(h) => h.clone(),
        Err(e) => return Err(csv_error(e)),
    };
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(PlsError::input("empty file: a header row is required"));
    }
    if header.len() < 2 {
        return Err(PlsError::input("need at least one feature column and a target column"));
    }
    let columns: Vec<String> = header.iter().map(str::to_string).collect();
    let d = columns.len() - 1;
    let mut feats = Vec::new();
    let mut y = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        for (c, field) in rec.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                PlsError::input(format!("line {line}: column '{}' has non-numeric value '{field}'", columns[c]))
            })?;
            if !v.is_finite() {
                return Err(PlsError::input(format!("line {line}: column '{}' has non-finite value '{field}'", columns[c])));
            }
            if c < d {
                feats.push(v);
            } else {
                if !task.check(v) {
                    return Err(PlsError::input(format!(
                        "line {line}: target '{}' = {v} is invalid for a {task:?} task",
                        columns[c]
                    )));
                }
                y.push(v);
            }
        }
    }
    if y.is_empty() {
        return Err(PlsError::input("no data rows"));
    }
    let x = DMatrix::from_row_slice(y.len(), d, &feats);
    Dataset::new(x, y, columns, task)
}

/// Reads a purely numeric CSV with a header row, such as `coeffs.csv` or
/// `predictions.csv`.
pub fn read_matrix_csv<R: Read>(input: R) -> Result<(Vec<String>, DMatrix<f64>)> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(input);
    let header: Vec<String> = reader.headers().map_err(csv_error)?.iter().map(str::to_string).collect();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(PlsError::input("empty file: a header row is required"));
    }
    let mut values = Vec::new();
    let mut rows = 0;
    for rec in reader.records() {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        for (c, field) in rec.iter().enumerate() {
            match field.parse::<f64>() {
                Ok(v) if v.is_finite() => values.push(v),
                _ => return Err(PlsError::input(format!("line {line}: column '{}' has invalid value '{field}'", header[c]))),
            }
        }
        rows += 1;
    }
    Ok((header.clone(), DMatrix::from_row_slice(rows, header.len(), &values)))
}

fn csv_error(e: csv::Error) -> PlsError {
    let line = e.position().map(|p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => PlsError::Io(io),
        csv::ErrorKind::UnequalLengths { expected_len, len, .. } => PlsError::input(format!(
            "line {}: expected {expected_len} fields, found {len}",
            line.unwrap_or(0)
        )),
        other => PlsError::input(format!("line {}: malformed CSV ({other:?})", line.unwrap_or(0))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    /// `y = 2 sin(0.35π x²) + ε`, `ε ~ N(0, 0.2)`, `x ~ U[−3, 3]`.
    SineRegression,
    /// `y = 2 sin(1.5π x) + 20 b_n + ε`, `b_n ~ Bernoulli(0.5)` per row,
    /// `ε ~ N(0, 1)`.
    ShiftMixture,
    /// As [`SyntheticKind::ShiftMixture`] with one switch `b` for the whole
    /// dataset, so the latent function is identified only up to the shift.
    ShiftMixtureShared,
    /// `y ~ Poisson(f(x)²)`, `f(x) = 2 sin(1.5 x)`.
    PoissonSquared,
}

impl SyntheticKind {
    pub const ALL: [SyntheticKind; 4] = [
        SyntheticKind::SineRegression,
        SyntheticKind::ShiftMixture,
        SyntheticKind::ShiftMixtureShared,
        SyntheticKind::PoissonSquared,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SyntheticKind::SineRegression => "sine_regression",
            SyntheticKind::ShiftMixture => "shift_mixture",
            SyntheticKind::ShiftMixtureShared => "shift_mixture_shared",
            SyntheticKind::PoissonSquared => "poisson_squared",
        }
    }

    pub fn truth(self, x: f64) -> f64 {
        match self {
            SyntheticKind::SineRegression => 2.0 * (0.35 * std::f64::consts::PI * x * x).sin(),
            SyntheticKind::ShiftMixture | SyntheticKind::ShiftMixtureShared => 2.0 * (1.5 * std::f64::consts::PI * x).sin(),
            SyntheticKind::PoissonSquared => 2.0 * (1.5 * x).sin(),
        }
    }

    /// Likelihood matching the generator.
    pub fn likelihood(self) -> Likelihood {
        match self {
            SyntheticKind::SineRegression => Likelihood::Gaussian { noise_variance: SINE_NOISE_VAR },
            SyntheticKind::ShiftMixture | SyntheticKind::ShiftMixtureShared => Likelihood::ShiftMixture {
                shift: SHIFT,
                mix: 0.5,
                noise_variance: 1.0,
            },
            SyntheticKind::PoissonSquared => Likelihood::PoissonSquared,
        }
    }

    pub fn task(self) -> Task {
        Task::for_likelihood(&self.likelihood())
    }
}

impl fmt::Display for SyntheticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SyntheticKind {
    type Err = PlsError;

    fn from_str(s: &str) -> Result<Self> {
        SyntheticKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = SyntheticKind::ALL.iter().map(|k| k.name()).collect();
                PlsError::input(format!("unknown synthetic dataset '{s}' (expected one of {})", names.join(", ")))
            })
    }
}

pub const SINE_NOISE_VAR: f64 = 0.2;
pub const SHIFT: f64 = 20.0;
pub const X_RANGE: (f64, f64) = (-3.0, 3.0);

/// A generated dataset and the noiseless latent function at its inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Synthetic {
    pub kind: SyntheticKind,
    pub data: Dataset,
    pub truth: Vec<f64>,
    /// Per-row shift indicators for the mixture generators.
    pub shifted: Option<Vec<bool>>,
}

/// Inputs from stream `(seed, 0)`, noise and switches from stream `(seed, 1)`.
pub fn gen_synthetic(kind: SyntheticKind, n: usize, seed: u64) -> Result<Synthetic> {
    if n == 0 {
        return Err(PlsError::input("n must be at least 1"));
    }
    let mut xr = stream(seed, StreamDomain::Synthetic, 0);
    let mut nr = stream(seed, StreamDomain::Synthetic, 1);
    let xs: Vec<f64> = (0..n).map(|_| xr.random_range(X_RANGE.0..X_RANGE.1)).collect();
    let truth: Vec<f64> = xs.iter().map(|x| kind.truth(*x)).collect();
    let mut shifted = None;
    let y: Vec<f64> = match kind {
        SyntheticKind::SineRegression => {
            let noise = Normal::new(0.0, SINE_NOISE_VAR.sqrt()).expect("valid normal");
            truth.iter().map(|f| f + noise.sample(&mut nr)).collect()
        }
        SyntheticKind::ShiftMixture | SyntheticKind::ShiftMixtureShared => {
            let flags: Vec<bool> = if kind == SyntheticKind::ShiftMixture {
                (0..n).map(|_| nr.random_bool(0.5)).collect()
            } else {
                vec![nr.random_bool(0.5); n]
            };
            let noise = Normal::new(0.0, 1.0).expect("valid normal");
            let y = truth
                .iter()
                .zip(&flags)
                .map(|(f, b)| f + if *b { SHIFT } else { 0.0 } + noise.sample(&mut nr))
                .collect();
            shifted = Some(flags);
            y
        }
        SyntheticKind::PoissonSquared => truth
            .iter()
            .map(|f| {
                let rate = f * f;
                if rate > 0.0 {
                    Poisson::new(rate).expect("positive rate").sample(&mut nr)
                } else {
                    0.0
                }
            })
            .collect(),
    };
    let data = Dataset::new(DMatrix::from_vec(n, 1, xs), y, vec!["x".into(), "y".into()], kind.task())?;
    Ok(Synthetic {
        kind,
        data,
        truth,
        shifted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_small_file() {
        let d = read_csv("x,y\n0,1\n1,2\n".as_bytes(), Task::Regression).unwrap();
        assert_eq!(d.x, DMatrix::from_row_slice(2, 1, &[0.0, 1.0]));
        assert_eq!(d.y, vec![1.0, 2.0]);
        assert_eq!(d.columns, vec!["x", "y"]);
    }

    #[test]
    fn rejects_bad_files() {
        assert!(matches!(read_csv("".as_bytes(), Task::Regression), Err(PlsError::Input(_))));
        assert!(read_csv("x,y\n".as_bytes(), Task::Regression).is_err());
        let err = read_csv("x,y\n0,1\nNaN,2\n".as_bytes(), Task::Regression).unwrap_err().to_string();
        assert!(err.contains("line 3") && err.contains("'x'"), "{err}");
        let err = read_csv("a,b,y\n0,1,1\n2,oops,1\n".as_bytes(), Task::Regression).unwrap_err().to_string();
        assert!(err.contains("'b'") && err.contains("line 3"), "{err}");
        let err = read_csv("x,y\n0,1\n1\n".as_bytes(), Task::Regression).unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
        let err = read_csv("x,y\n0,0.5\n".as_bytes(), Task::Classification).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
        assert!(read_csv("x,y\n0,-1\n".as_bytes(), Task::Count).is_err());
        assert!(read_csv("x,y\n0,3\n".as_bytes(), Task::Count).is_ok());
    }

    #[test]
    fn csv_round_trip() {
        let s = gen_synthetic(SyntheticKind::SineRegression, 7, 3).unwrap();
        let mut buf = Vec::new();
        s.data.write_csv(&mut buf).unwrap();
        let back = read_csv(buf.as_slice(), Task::Regression).unwrap();
        assert_eq!(back, s.data);
    }

    #[test]
    fn split_sizes_and_determinism() {
        let s = gen_synthetic(SyntheticKind::SineRegression, 50, 1).unwrap();
        let (train, test) = s.data.split(0.2, 4).unwrap();
        assert_eq!((train.len(), test.len()), (40, 10));
        assert_eq!(s.data.split(0.2, 4).unwrap().1, test);
        let mut all: Vec<f64> = train.y.iter().chain(&test.y).copied().collect();
        let mut orig = s.data.y.clone();
        all.sort_by(f64::total_cmp);
        orig.sort_by(f64::total_cmp);
        assert_eq!(all, orig);
        assert_eq!(s.data.split(0.0, 4).unwrap().1.len(), 0);
        assert!(s.data.split(1.0, 4).is_err());
    }

    #[test]
    fn sine_single_row() {
        let s = gen_synthetic(SyntheticKind::SineRegression, 1, 0).unwrap();
        let x = s.data.x[(0, 0)];
        assert!((-3.0..3.0).contains(&x));
        assert_eq!(s.truth[0], 2.0 * (0.35 * std::f64::consts::PI * x * x).sin());
        // Noise is N(0, 0.2); one draw beyond 6 sd would be a bug.
        assert!((s.data.y[0] - s.truth[0]).abs() < 6.0 * 0.2f64.sqrt());
    }

    #[test]
    fn sine_noise_variance() {
        let s = gen_synthetic(SyntheticKind::SineRegression, 20_000, 5).unwrap();
        let r: Vec<f64> = s.data.y.iter().zip(&s.truth).map(|(y, f)| y - f).collect();
        let var = r.iter().map(|v| v * v).sum::<f64>() / r.len() as f64;
        assert!((var - 0.2).abs() < 0.01, "{var}");
    }

    #[test]
    fn shift_rows_are_binomial() {
        let s = gen_synthetic(SyntheticKind::ShiftMixture, 100, 11).unwrap();
        let count = s.shifted.as_ref().unwrap().iter().filter(|b| **b).count();
        // Binomial(100, 0.5) within 4 sd.
        assert!((30..=70).contains(&count), "{count}");
        for ((y, f), b) in s.data.y.iter().zip(&s.truth).zip(s.shifted.unwrap()) {
            let resid = y - f - if b { 20.0 } else { 0.0 };
            assert!(resid.abs() < 6.0);
        }
    }

    #[test]
    fn shared_shift_is_all_or_nothing() {
        let mut seen = [false; 2];
        for seed in 0..20 {
            let s = gen_synthetic(SyntheticKind::ShiftMixtureShared, 30, seed).unwrap();
            let flags = s.shifted.unwrap();
            assert!(flags.iter().all(|b| *b == flags[0]));
            seen[flags[0] as usize] = true;
        }
        assert_eq!(seen, [true, true]);
    }

    #[test]
    fn poisson_counts() {
        let s = gen_synthetic(SyntheticKind::PoissonSquared, 5_000, 2).unwrap();
        assert!(s.data.y.iter().all(|y| *y >= 0.0 && y.fract() == 0.0));
        let mean_y = s.data.y.iter().sum::<f64>() / 5_000.0;
        let mean_rate = s.truth.iter().map(|f| f * f).sum::<f64>() / 5_000.0;
        assert!((mean_y - mean_rate).abs() < 0.1, "{mean_y} vs {mean_rate}");
    }

    #[test]
    fn names_parse() {
        for k in SyntheticKind::ALL {
            assert_eq!(k.name().parse::<SyntheticKind>().unwrap(), k);
        }
        assert!("moons".parse::<SyntheticKind>().is_err());
        assert!(gen_synthetic(SyntheticKind::PoissonSquared, 0, 0).is_err());
    }
}
