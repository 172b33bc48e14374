//! Experiment drivers behind the `subgqmc` CLI: error scaling against Monte
//! Carlo, the best-of-both envelope, invariant verification, point-set export
//! and split diagnostics.
//!
//! Raw rows are written as CSV and summaries as JSON. Every trial draws from
//! its own substream keyed by `(seed, estimator, n, trial)` and results are
//! reduced in a fixed order, so outputs do not depend on the thread count.

use crate::clock::Stopwatch;
use num_complex::Complex64;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::balancing::{empirical_subgaussian_constant, ColorVector};
use crate::discrepancy::{
    disc_csv, mgf_csv, parse_disc_csv, staircase_corner_sum, staircase_layout, star_disc,
    telescoping_check, StarMode,
};
use crate::dyadic::{build_p, build_p_bar, decompose_prefix_index, Corner, DecompositionMatrix};
use crate::error::{Error, Result};
use crate::rng::{substream, tag};
use crate::transference::{
    subg_transference, subg_transference_leaf, PairingOrder, PartitionTree, PointSet,
    TransferenceConfig, WalkThreshold,
};
use crate::variation::{
    err, fourier_orthogonality_analytic, hlawka_zaremba_error_1d, random_series, sigma,
    sigma_hk_unnormalized, sigma_so_fourier, structured_sum_with, FourierFunction,
};

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "SUBGQMC_THREADS";

/// Installs a global pool of `SUBGQMC_THREADS` workers if the variable is
/// set. Returns the effective thread count.
pub fn configure_threads() -> Result<usize> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v.trim().parse().map_err(|_| {
            Error::InvalidConfig(format!(
                "{THREADS_ENV} must be a positive integer, got {v:?}"
            ))
        })?;
        if n == 0 {
            return Err(Error::InvalidConfig(format!(
                "{THREADS_ENV} must be positive"
            )));
        }
        // A pool may already exist (tests, repeated calls); keep it.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    Ok(rayon::current_num_threads())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Scaling,
    Integrate,
    Diagnose,
    Verify,
    Generate,
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::InvalidConfig(format!("unknown mode {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Estimator {
    #[serde(rename = "mc")]
    Mc,
    #[serde(rename = "transference")]
    Transference,
    #[serde(rename = "grid")]
    Grid,
    #[serde(rename = "vdc_1d")]
    Vdc1d,
}

impl Estimator {
    pub const ALL: [Estimator; 4] = [
        Estimator::Mc,
        Estimator::Transference,
        Estimator::Grid,
        Estimator::Vdc1d,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Estimator::Mc => "mc",
            Estimator::Transference => "transference",
            Estimator::Grid => "grid",
            Estimator::Vdc1d => "vdc_1d",
        }
    }

    fn stream_id(self) -> u64 {
        self as u64 + 1
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown estimator {s:?}")))
    }
}

/// A function file path or an inline series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FunctionSpec {
    Path(PathBuf),
    Inline(FourierFunction),
}

impl FunctionSpec {
    /// Resolves relative paths against `base`.
    pub fn load(&self, base: Option<&Path>) -> Result<FourierFunction> {
        match self {
            FunctionSpec::Inline(f) => Ok(f.clone()),
            FunctionSpec::Path(p) => {
                let path = match base {
                    Some(b) if p.is_relative() => b.join(p),
                    _ => p.clone(),
                };
                FourierFunction::from_json(&std::fs::read_to_string(path)?)
            }
        }
    }
}

/// Deliberate corruption used to show that verification can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fault {
    /// Shift one run of the structured decomposition matrix.
    PbarRunTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    #[serde(default)]
    pub function_spec: Option<FunctionSpec>,
    #[serde(default = "default_n_list")]
    pub n_list: Vec<usize>,
    #[serde(default = "default_d")]
    pub d: usize,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<Estimator>,
    #[serde(default = "default_output")]
    pub output_path: PathBuf,
    /// Scaling mode only: run the mixed-frequency family with `k = n`
    /// instead of `function_spec`.
    #[serde(default)]
    pub best_of_both: bool,
    #[serde(default)]
    pub threshold: WalkThreshold,
    #[serde(default)]
    pub pairing: PairingOrder,
    #[serde(default)]
    pub inject_fault: Option<Fault>,
}

fn default_n_list() -> Vec<usize> {
    (4..=10).map(|p| 1 << p).collect()
}
fn default_d() -> usize {
    1
}
fn default_trials() -> usize {
    200
}
fn default_estimators() -> Vec<Estimator> {
    vec![Estimator::Mc, Estimator::Transference]
}
fn default_output() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    pub fn new(mode: Mode) -> Self {
        ExperimentConfig {
            mode,
            function_spec: None,
            n_list: default_n_list(),
            d: default_d(),
            trials: default_trials(),
            seed: 0,
            estimators: default_estimators(),
            output_path: default_output(),
            best_of_both: false,
            threshold: WalkThreshold::default(),
            pairing: PairingOrder::default(),
            inject_fault: None,
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidConfig("trials must be at least 1".into()));
        }
        if self.d == 0 {
            return Err(Error::InvalidConfig("d must be at least 1".into()));
        }
        if let Some(&bad) = self.n_list.iter().find(|n| !n.is_power_of_two()) {
            return Err(Error::InvalidConfig(format!(
                "n = {bad} is not a power of two"
            )));
        }
        if self.estimators.is_empty() && matches!(self.mode, Mode::Scaling | Mode::Integrate) {
            return Err(Error::InvalidConfig("no estimators selected".into()));
        }
        if let Some(FunctionSpec::Inline(f)) = &self.function_spec {
            if f.d != self.d {
                return Err(Error::DimensionMismatch {
                    expected: self.d,
                    got: f.d,
                });
            }
        }
        Ok(())
    }

    pub fn with_n_list(mut self, n_list: Vec<usize>) -> Self {
        self.n_list = n_list;
        self
    }

    pub fn with_trials(mut self, trials: usize) -> Self {
        self.trials = trials;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_estimators(mut self, estimators: Vec<Estimator>) -> Self {
        self.estimators = estimators;
        self
    }

    pub fn with_function(mut self, f: FourierFunction) -> Self {
        self.d = f.d;
        self.function_spec = Some(FunctionSpec::Inline(f));
        self
    }

    /// The configured integrand; relative paths resolve against `base`.
    pub fn load_function(&self, base: Option<&Path>) -> Result<FourierFunction> {
        let f = self
            .function_spec
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("function_spec is required for this mode".into()))?
            .load(base)?;
        if f.d != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                got: f.d,
            });
        }
        Ok(f)
    }
}

/// First `n` points of the base-2 van der Corput sequence.
pub fn van_der_corput(n: usize) -> PointSet {
    let coords = (0..n as u64)
        .map(|i| i.reverse_bits() as f64 / 2f64.powi(64))
        .collect();
    PointSet::new(1, coords)
}

/// Midpoint lattice with `n` points. For `n = 2^p` each axis gets
/// `2^{p_j}` cells with the `p_j` as equal as possible.
pub fn midpoint_grid(n: usize, d: usize) -> PointSet {
    assert!(n.is_power_of_two() && d > 0);
    let p = n.trailing_zeros() as usize;
    let sides: Vec<usize> = (0..d)
        .map(|j| 1 << (p / d + usize::from(j < p % d)))
        .collect();
    let mut coords = Vec::with_capacity(n * d);
    let mut p = vec![0.0; d];
    for i in 0..n {
        let mut r = i;
        for j in (0..d).rev() {
            p[j] = ((r % sides[j]) as f64 + 0.5) / sides[j] as f64;
            r /= sides[j];
        }
        coords.extend_from_slice(&p);
    }
    PointSet::new(d, coords)
}

/// The point set an estimator uses for one trial.
pub fn estimator_points(
    estimator: Estimator,
    n: usize,
    d: usize,
    seed: u64,
    trial: usize,
    threshold: WalkThreshold,
    pairing: PairingOrder,
) -> Result<PointSet> {
    let mut rng = substream(
        seed,
        &[tag::TRIAL, estimator.stream_id(), n as u64, trial as u64],
    );
    match estimator {
        Estimator::Mc => Ok(PointSet::new(
            d,
            (0..n * d).map(|_| rng.gen::<f64>()).collect(),
        )),
        Estimator::Transference => {
            let cfg = TransferenceConfig::new(n, d, rng.gen())?
                .with_threshold(threshold)
                .with_pairing(pairing);
            let leaf = rng.gen_range(0..n);
            let tree = subg_transference_leaf(&cfg, leaf)?;
            Ok(tree.leaf(leaf).expect("requested leaf is present"))
        }
        Estimator::Grid => Ok(midpoint_grid(n, d)),
        Estimator::Vdc1d if d == 1 => Ok(van_der_corput(n)),
        Estimator::Vdc1d => Err(Error::EstimatorDimension {
            estimator: estimator.name().into(),
            d,
        }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub estimator: Estimator,
    pub n: usize,
    pub trial: usize,
    pub error: f64,
    pub abs_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub estimator: Estimator,
    pub n: usize,
    pub trials: usize,
    pub rmse: f64,
    pub mean_error: f64,
    /// Standard error of the mean error.
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub estimator: Estimator,
    /// Whether the smallest `n` (16 and below) was left out.
    pub filtered: bool,
    pub points: usize,
    pub slope: f64,
    pub intercept: f64,
    /// 95% interval; absent with fewer than three points.
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
}

/// Predicted mean squared error of the best split `f = g + h`, where `g`
/// is charged `σ(g)²/n` and `h` is charged `σ_SO(h)²/n²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub n: usize,
    pub k: i64,
    pub mse: f64,
    pub predicted_rmse: f64,
    /// Frequencies assigned to `g`.
    pub to_g: Vec<Vec<i64>>,
    /// Frequencies assigned to `h`.
    pub to_h: Vec<Vec<i64>>,
    pub mse_all_g: f64,
    pub mse_all_h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingResult {
    pub rows: Vec<ScalingRow>,
    pub summary: Vec<SummaryRow>,
    pub slopes: Vec<SlopeFit>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub envelope: Vec<Envelope>,
}

impl ScalingResult {
    pub fn summary_for(&self, estimator: Estimator, n: usize) -> Option<&SummaryRow> {
        self.summary
            .iter()
            .find(|s| s.estimator == estimator && s.n == n)
    }

    pub fn slope_for(&self, estimator: Estimator, filtered: bool) -> Option<&SlopeFit> {
        self.slopes
            .iter()
            .find(|s| s.estimator == estimator && s.filtered == filtered)
    }

    pub fn rmse(&self, estimator: Estimator, n: usize) -> Option<f64> {
        self.summary_for(estimator, n).map(|s| s.rmse)
    }

    /// Summary JSON: everything except the raw rows.
    pub fn summary_json(&self) -> String {
        #[derive(Serialize)]
        struct View<'a> {
            summary: &'a [SummaryRow],
            slopes: &'a [SlopeFit],
            #[serde(skip_serializing_if = "<[Envelope]>::is_empty")]
            envelope: &'a [Envelope],
        }
        serde_json::to_string_pretty(&View {
            summary: &self.summary,
            slopes: &self.slopes,
            envelope: &self.envelope,
        })
        .expect("summary serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryFile {
    pub summary: Vec<SummaryRow>,
    pub slopes: Vec<SlopeFit>,
    #[serde(default)]
    pub envelope: Vec<Envelope>,
}

pub fn parse_summary_json(s: &str) -> Result<SummaryFile> {
    Ok(serde_json::from_str(s)?)
}

/// `estimator,n,trial,error,abs_error`.
pub fn rows_csv(rows: &[ScalingRow]) -> String {
    let mut out = String::from("estimator,n,trial,error,abs_error\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.estimator.name(),
            r.n,
            r.trial,
            r.error,
            r.abs_error
        );
    }
    out
}

pub fn parse_rows_csv(text: &str) -> Result<Vec<ScalingRow>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("estimator,n,trial,error,abs_error") {
        return Err(Error::Parse("missing scaling header".into()));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(Error::Parse(format!("bad row {line:?}")));
            }
            let num = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("{s:?}: {e}")))
            };
            let int = |s: &str| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|e| Error::Parse(format!("{s:?}: {e}")))
            };
            Ok(ScalingRow {
                estimator: Estimator::parse(f[0].trim())?,
                n: int(f[1])?,
                trial: int(f[2])?,
                error: num(f[3])?,
                abs_error: num(f[4])?,
            })
        })
        .collect()
}

/// Summary statistics per `(estimator, n)` in first-appearance order.
pub fn summarize(rows: &[ScalingRow]) -> Vec<SummaryRow> {
    let mut keys: Vec<(Estimator, usize)> = Vec::new();
    for r in rows {
        if !keys.contains(&(r.estimator, r.n)) {
            keys.push((r.estimator, r.n));
        }
    }
    keys.into_iter()
        .map(|(estimator, n)| {
            let errs: Vec<f64> = rows
                .iter()
                .filter(|r| r.estimator == estimator && r.n == n)
                .map(|r| r.error)
                .collect();
            let t = errs.len() as f64;
            let mean = errs.iter().sum::<f64>() / t;
            let mse = errs.iter().map(|e| e * e).sum::<f64>() / t;
            let var = if errs.len() > 1 {
                errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (t - 1.0)
            } else {
                0.0
            };
            SummaryRow {
                estimator,
                n,
                trials: errs.len(),
                rmse: mse.sqrt(),
                mean_error: mean,
                stderr: (var / t).sqrt(),
            }
        })
        .collect()
}

/// Least-squares fit of `ln y` against `ln x` with a 95% t-interval on the
/// slope. Non-positive values are skipped.
pub fn loglog_fit(xs: &[f64], ys: &[f64]) -> Option<(f64, f64, Option<(f64, f64)>)> {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(&x, &y)| x > 0.0 && y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    let k = pts.len();
    if k < 2 {
        return None;
    }
    let kf = k as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / kf;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / kf;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ci = (k > 2).then(|| {
        let rss: f64 = pts
            .iter()
            .map(|p| (p.1 - intercept - slope * p.0).powi(2))
            .sum();
        let se = (rss / (kf - 2.0) / sxx).sqrt();
        let t = StudentsT::new(0.0, 1.0, kf - 2.0)
            .expect("positive dof")
            .inverse_cdf(0.975);
        (slope - t * se, slope + t * se)
    });
    Some((slope, intercept, ci))
}

/// Smallest `n` excluded from the filtered slope.
pub const SLOPE_FILTER_MAX_N: usize = 16;

pub fn fit_slopes(summary: &[SummaryRow]) -> Vec<SlopeFit> {
    let mut estimators: Vec<Estimator> = Vec::new();
    for s in summary {
        if !estimators.contains(&s.estimator) {
            estimators.push(s.estimator);
        }
    }
    let mut out = Vec::new();
    for e in estimators {
        for filtered in [true, false] {
            let pts: Vec<&SummaryRow> = summary
                .iter()
                .filter(|s| s.estimator == e && (!filtered || s.n > SLOPE_FILTER_MAX_N))
                .collect();
            let xs: Vec<f64> = pts.iter().map(|s| s.n as f64).collect();
            let ys: Vec<f64> = pts.iter().map(|s| s.rmse).collect();
            if let Some((slope, intercept, ci)) = loglog_fit(&xs, &ys) {
                out.push(SlopeFit {
                    estimator: e,
                    filtered,
                    points: xs.len(),
                    slope,
                    intercept,
                    ci_low: ci.map(|c| c.0),
                    ci_high: ci.map(|c| c.1),
                });
            }
        }
    }
    out
}

fn trial_errors(
    cfg: &ExperimentConfig,
    f_for: &(dyn Fn(usize) -> FourierFunction + Sync),
) -> Result<Vec<ScalingRow>> {
    for &e in &cfg.estimators {
        if e == Estimator::Vdc1d && cfg.d != 1 {
            return Err(Error::EstimatorDimension {
                estimator: e.name().into(),
                d: cfg.d,
            });
        }
    }
    let jobs: Vec<(Estimator, usize, usize)> = cfg
        .estimators
        .iter()
        .flat_map(|&e| {
            cfg.n_list
                .iter()
                .flat_map(move |&n| (0..cfg.trials).map(move |t| (e, n, t)))
        })
        .collect();
    let funcs: Vec<(usize, FourierFunction)> = cfg.n_list.iter().map(|&n| (n, f_for(n))).collect();
    jobs.par_iter()
        .map(|&(estimator, n, trial)| {
            let f = &funcs.iter().find(|p| p.0 == n).expect("function per n").1;
            let pts = estimator_points(
                estimator,
                n,
                cfg.d,
                cfg.seed,
                trial,
                cfg.threshold,
                cfg.pairing,
            )?;
            let error = err(&pts, f)?;
            Ok(ScalingRow {
                estimator,
                n,
                trial,
                error,
                abs_error: error.abs(),
            })
        })
        .collect()
}

/// Error of every estimator for every `n` and trial, RMSE summaries and
/// log-log slopes.
pub fn run_scaling(config: &ExperimentConfig, f: &FourierFunction) -> Result<ScalingResult> {
    config.validate()?;
    if f.d != config.d {
        return Err(Error::DimensionMismatch {
            expected: config.d,
            got: f.d,
        });
    }
    let rows = trial_errors(config, &|_| f.clone())?;
    let summary = summarize(&rows);
    let slopes = fit_slopes(&summary);
    Ok(ScalingResult {
        rows,
        summary,
        slopes,
        envelope: Vec::new(),
    })
}

/// `sin(2πx₁) + k^{-1/2} sin(2πk x₁)` in `d` dimensions.
pub fn mixed_frequency(d: usize, k: i64) -> FourierFunction {
    let mut f = FourierFunction::new(d);
    let mut unit = vec![0; d];
    unit[0] = 1;
    f.add_sine(&unit, 1.0);
    unit[0] = k;
    f.add_sine(&unit, 1.0 / (k as f64).sqrt());
    f
}

/// Best split of `f` into a Monte Carlo part and a smooth part for `n`
/// points. A coefficient with weight `w = ∏ max(1,|k_j|)` costs
/// `|f̂|²/n` in `g` and `w|f̂|²/n²` in `h`; it goes to `g` when `w ≥ n`.
pub fn best_of_both_envelope(f: &FourierFunction, n: usize, k: i64) -> Envelope {
    let nf = n as f64;
    let (mut to_g, mut to_h) = (Vec::new(), Vec::new());
    let (mut mse, mut all_g, mut all_h) = (0.0, 0.0, 0.0);
    for (freq, c) in &f.terms {
        if freq.iter().all(|&x| x == 0) {
            continue;
        }
        let w: f64 = freq
            .iter()
            .map(|&x| (x.unsigned_abs() as f64).max(1.0))
            .product();
        let g_cost = c.norm_sqr() / nf;
        let h_cost = w * c.norm_sqr() / (nf * nf);
        all_g += g_cost;
        all_h += h_cost;
        if w >= nf {
            to_g.push(freq.clone());
            mse += g_cost;
        } else {
            to_h.push(freq.clone());
            mse += h_cost;
        }
    }
    Envelope {
        n,
        k,
        mse,
        predicted_rmse: mse.sqrt(),
        to_g,
        to_h,
        mse_all_g: all_g,
        mse_all_h: all_h,
    }
}

/// Scaling on the mixed-frequency family with `k = n` for each `n`, plus
/// the predicted envelope.
pub fn run_best_of_both(config: &ExperimentConfig) -> Result<ScalingResult> {
    config.validate()?;
    let d = config.d;
    let rows = trial_errors(config, &|n| mixed_frequency(d, n as i64))?;
    let summary = summarize(&rows);
    let slopes = fit_slopes(&summary);
    let envelope = config
        .n_list
        .iter()
        .map(|&n| best_of_both_envelope(&mixed_frequency(d, n as i64), n, n as i64))
        .collect();
    Ok(ScalingResult {
        rows,
        summary,
        slopes,
        envelope,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegrateRow {
    pub estimator: Estimator,
    pub n: usize,
    pub trial: usize,
    pub estimate: f64,
    pub exact: f64,
    pub error: f64,
}

/// `estimator,n,trial,estimate,exact,error`.
pub fn integrate_csv(rows: &[IntegrateRow]) -> String {
    let mut out = String::from("estimator,n,trial,estimate,exact,error\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.estimator.name(),
            r.n,
            r.trial,
            r.estimate,
            r.exact,
            r.error
        );
    }
    out
}

/// Integral estimates of `f` for every estimator, `n` and trial.
pub fn run_integrate(config: &ExperimentConfig, f: &FourierFunction) -> Result<Vec<IntegrateRow>> {
    let scaled = run_scaling(config, f)?;
    let exact = f.mean();
    Ok(scaled
        .rows
        .into_iter()
        .map(|r| IntegrateRow {
            estimator: r.estimator,
            n: r.n,
            trial: r.trial,
            estimate: exact + r.error,
            exact,
            error: r.error,
        })
        .collect())
}

/// Two-sample Kolmogorov–Smirnov statistic and asymptotic p-value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

pub fn ks_two_sample(a: &[f64], b: &[f64]) -> KsResult {
    assert!(!a.is_empty() && !b.is_empty());
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < x.len() && j < y.len() {
        let v = x[i].min(y[j]);
        while i < x.len() && x[i] <= v {
            i += 1;
        }
        while j < y.len() && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    let en = (n * m / (n + m)).sqrt();
    let lambda = (en + 0.12 + 0.11 / en) * d;
    KsResult {
        statistic: d,
        p_value: kolmogorov_tail(lambda),
    }
}

/// `Q(λ) = 2 Σ_{j≥1} (-1)^{j-1} exp(-2j²λ²)`.
fn kolmogorov_tail(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for j in 1..=100 {
        let jf = j as f64;
        let term = 2.0 * (-2.0 * jf * jf * lambda * lambda).exp();
        sum += if j % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub passed: bool,
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn failed(&self) -> Vec<&CheckResult> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }
}

fn check(name: &str, f: impl FnOnce() -> Result<(bool, String)>) -> CheckResult {
    match f() {
        Ok((passed, detail)) => CheckResult {
            name: name.into(),
            passed,
            detail,
        },
        Err(e) => CheckResult {
            name: name.into(),
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

/// Every module's invariants at desk-scale parameters. Statistical checks
/// use three-standard-error bands.
pub fn run_verify(config: &ExperimentConfig) -> VerifyReport {
    let seed = config.seed;
    let fault = config.inject_fault;
    let mut checks = Vec::new();

    checks.push(check("dyadic.structured_matrix", || {
        for h in 1..=8 {
            let mut pbar = build_p_bar(h);
            if fault == Some(Fault::PbarRunTable) && h == 4 {
                pbar.columns[3].run.start += 1;
            }
            if let Err(e) = pbar.check_structured() {
                return Ok((false, format!("h = {h}: {e}")));
            }
            if let Some(bad) = dense_mismatch(&pbar) {
                return Ok((false, format!("h = {h}: {bad}")));
            }
            if let Some(bad) = dense_mismatch(&build_p(h)) {
                return Ok((false, format!("h = {h}: {bad}")));
            }
        }
        Ok((true, "h ≤ 8".into()))
    }));

    checks.push(check("dyadic.prefix_norms", || {
        let mut rng = substream(seed, &[tag::DIAG, 1]);
        let h = 6;
        let (p, pbar) = (build_p(h), build_p_bar(h));
        for _ in 0..200 {
            let u: Vec<f64> = (0..p.rows()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let a: f64 = p.apply_transpose(&u).iter().map(|x| x * x).sum();
            let b: f64 = pbar.apply_transpose(&u).iter().map(|x| x * x).sum();
            if a > b * (1.0 + 1e-12) {
                return Ok((false, format!("‖Pᵀu‖² = {a} > ‖P̄ᵀu‖² = {b}")));
            }
        }
        for ell in 0..(1u64 << h) {
            let parts = decompose_prefix_index(ell, h)?;
            let len: f64 = parts.iter().map(|iv| iv.length()).sum();
            if (len - ell as f64 / 64.0).abs() > 1e-15 || parts.len() > h as usize {
                return Ok((false, format!("prefix {ell} decomposes badly")));
            }
        }
        Ok((true, "200 random u, all prefixes at h = 6".into()))
    }));

    checks.push(check("variation.ordering", || {
        let mut rng = substream(seed, &[tag::DIAG, 2]);
        for i in 0..200 {
            let f = random_series(1 + i % 3, 6, 8, &mut rng);
            let (s, so, hk) = (sigma(&f), sigma_so_fourier(&f), sigma_hk_unnormalized(&f));
            if !(s <= so && so <= hk && so * so <= s * hk * (1.0 + 1e-12)) {
                return Ok((false, format!("σ = {s}, σ_SO = {so}, σ_HK = {hk}")));
            }
        }
        Ok((true, "200 random series, d ≤ 3".into()))
    }));

    checks.push(check("variation.hlawka_zaremba_1d", || {
        let mut rng = substream(seed, &[tag::DIAG, 3]);
        let mut worst = 0.0f64;
        for _ in 0..20 {
            let f = random_series(1, 5, 12, &mut rng);
            let m = rng.gen_range(1..=64);
            let pts = PointSet::new(1, (0..m).map(|_| rng.gen::<f64>()).collect());
            worst = worst.max((err(&pts, &f)? - hlawka_zaremba_error_1d(&pts, &f)?).abs());
        }
        Ok((worst <= 1e-10, format!("max residual {worst:e}")))
    }));

    checks.push(check("variation.structured_sum", || {
        let h = 10;
        let pbar = build_p_bar(h);
        let bound = 8.0 * (1.0 + PI * PI);
        for k in (-64i64..=64).filter(|&k| k != 0) {
            let l = structured_sum_with(k, &pbar);
            if l.relative_gap() > 1e-9 || l.closed_form / k.unsigned_abs() as f64 > bound {
                return Ok((false, format!("k = {k}: {l:?}")));
            }
        }
        Ok((true, "|k| ≤ 64, h = 10".into()))
    }));

    checks.push(check("variation.orthogonality", || {
        let f = FourierFunction::new(1)
            .with_term(vec![1], Complex64::new(0.3, 0.1))
            .with_term(vec![2], Complex64::new(0.2, -0.4));
        let r = fourier_orthogonality_analytic(&f, &[1], &[2]).norm();
        Ok((r <= 1e-15, format!("|residual| = {r:e}")))
    }));

    checks.push(check("transference.partition", || {
        let cfg = TransferenceConfig::new(16, 2, seed)?;
        let tree = subg_transference(&cfg)?;
        let mut all: Vec<u32> = tree.levels[tree.depth()]
            .values()
            .flatten()
            .copied()
            .collect();
        let sizes_ok = tree.levels[tree.depth()].values().all(|m| m.len() == 16);
        all.sort_unstable();
        let ok = sizes_ok && all == (0..256).collect::<Vec<u32>>();
        let leaf = subg_transference_leaf(&cfg, 5)?.leaf(5);
        Ok((ok && leaf == tree.leaf(5), "n = 16, d = 2".into()))
    }));

    checks.push(check("transference.telescoping", || {
        let mut rng = substream(seed, &[tag::DIAG, 4]);
        let mut worst = 0.0f64;
        for d in 1..=2 {
            let cfg = TransferenceConfig::new(16, d, seed)?.with_recording(true);
            let tree = subg_transference(&cfg)?;
            let corners = random_grid_corners(&mut rng, 20, d, cfg.h);
            worst = worst.max(telescoping_check(&tree, &corners)?);
        }
        Ok((worst <= 1e-12 * 16.0, format!("max residual {worst:e}")))
    }));

    checks.push(check("transference.unbiased", || {
        let f = FourierFunction::sine(3, 1.0);
        let cfg = ExperimentConfig::new(Mode::Scaling)
            .with_n_list(vec![16])
            .with_trials(400)
            .with_seed(seed)
            .with_estimators(vec![Estimator::Transference])
            .with_function(f.clone());
        let res = run_scaling(&cfg, &f)?;
        let s = &res.summary[0];
        Ok((
            s.mean_error.abs() <= 3.0 * s.stderr,
            format!("mean {:e} ± {:e}", s.mean_error, s.stderr),
        ))
    }));

    checks.push(check("transference.split_subgaussian", || {
        let (n, d) = (16, 1);
        let sigma2 = split_subgaussian_constant(n, d, seed, 120, PairingOrder::default())?;
        let bound = 8.0 * (n as f64).ln().powi(2);
        Ok((
            sigma2 <= bound,
            format!("σ̂² = {sigma2:.3}, bound {bound:.1}"),
        ))
    }));

    checks.push(check("discrepancy.staircase_layout", || {
        let mut rng = substream(seed, &[tag::DIAG, 5]);
        let n = 8;
        let pts = staircase_layout(n, &mut rng);
        for mask in 0u32..1 << n {
            let colors = ColorVector {
                colors: (0..n)
                    .map(|i| if mask >> i & 1 == 1 { 1 } else { -1 })
                    .collect(),
            };
            let v = staircase_corner_sum(&pts, &colors)?;
            if v.unsigned_abs() as usize != n {
                return Ok((false, format!("coloring {mask:b} gives {v}")));
            }
        }
        Ok((true, "all 256 colorings, n = 8".into()))
    }));

    checks.push(check("discrepancy.star_1d", || {
        let mut rng = substream(seed, &[tag::DIAG, 6]);
        for _ in 0..50 {
            let m = rng.gen_range(1..40);
            let xs: Vec<f64> = (0..m)
                .map(|_| (rng.gen_range(0..32) as f64) / 32.0)
                .collect();
            let pts = PointSet::new(1, xs.clone());
            let exact = star_disc(&pts, StarMode::Exact)?;
            let brute = star_brute_1d(&xs);
            if (exact - brute).abs() > 1e-9 {
                return Ok((false, format!("exact {exact} vs brute {brute}")));
            }
        }
        Ok((true, "50 sets with ties".into()))
    }));

    checks.push(check("artifacts.round_trip", || {
        let mut rng = substream(seed, &[tag::DIAG, 7]);
        let pts = PointSet::new(2, (0..40).map(|_| rng.gen::<f64>()).collect());
        let f = random_series(2, 5, 6, &mut rng);
        let pbar = build_p_bar(5);
        let rows: Vec<(u128, usize, f64)> = (0..10)
            .map(|i| (i as u128 * 7, i % 3, rng.gen::<f64>() - 0.5))
            .collect();
        let scaling_rows: Vec<ScalingRow> = (0..5)
            .map(|t| {
                let e = rng.gen::<f64>() - 0.5;
                ScalingRow {
                    estimator: Estimator::Mc,
                    n: 16,
                    trial: t,
                    error: e,
                    abs_error: e.abs(),
                }
            })
            .collect();
        let ok = PointSet::from_csv(&pts.to_csv())? == pts
            && FourierFunction::from_json(&f.to_json())? == f
            && DecompositionMatrix::from_json(&pbar.to_json())? == pbar
            && parse_disc_csv(&disc_csv(&rows))? == rows
            && parse_rows_csv(&rows_csv(&scaling_rows))? == scaling_rows;
        Ok((
            ok,
            "points, function, matrix, discrepancy and scaling rows".into(),
        ))
    }));

    let passed = checks.iter().all(|c| c.passed);
    VerifyReport {
        seed,
        passed,
        checks,
    }
}

/// Corners with coordinates on the `2^-h` grid.
pub fn random_grid_corners(
    rng: &mut crate::rng::Rng,
    count: usize,
    d: usize,
    h: u32,
) -> Vec<Corner> {
    (0..count)
        .map(|_| {
            Corner::from_grid(
                &(0..d)
                    .map(|_| rng.gen_range(0..=1u64 << h))
                    .collect::<Vec<_>>(),
                h,
            )
        })
        .collect()
}

fn dense_mismatch(m: &DecompositionMatrix) -> Option<String> {
    let dense = m.to_dense();
    let u: Vec<i64> = (0..m.rows() as i64).map(|i| (i * 7919) % 23 - 11).collect();
    let fast = m.apply_transpose(&u);
    for c in 0..m.cols() {
        let slow: i64 = (0..m.rows()).map(|r| dense[r][c] as i64 * u[r]).sum();
        if slow != fast[c] {
            return Some(format!("column {c}: {slow} vs {}", fast[c]));
        }
    }
    None
}

fn star_brute_1d(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mut best = 0.0f64;
    let mut cands: Vec<f64> = xs.to_vec();
    cands.push(1.0);
    for &z in &cands {
        let closed = xs.iter().filter(|&&x| x > 0.0 && x <= z).count() as f64;
        let open = xs.iter().filter(|&&x| x > 0.0 && x < z).count() as f64;
        best = best.max((n * z - closed).abs()).max((n * z - open).abs());
    }
    best
}

/// Dyadic-box discrepancy vectors of the first split for `samples`
/// independent seeds, as dense vectors over the union of touched boxes.
pub fn split_discrepancy_samples(
    n: usize,
    d: usize,
    seed: u64,
    samples: usize,
    pairing: PairingOrder,
) -> Result<Vec<Vec<f64>>> {
    let records: Vec<Vec<(u128, i64)>> = (0..samples)
        .into_par_iter()
        .map(|s| {
            let sub = substream(seed, &[tag::DIAG, 100, s as u64]).gen::<u64>();
            let cfg = TransferenceConfig::new(n, d, sub)?
                .with_recording(true)
                .with_pairing(pairing);
            let tree = subg_transference_leaf(&cfg, 0)?;
            let rec = &tree.disc_records.as_ref().expect("recording on")[0][&0];
            Ok(rec.values.iter().map(|(&k, &v)| (k, v)).collect())
        })
        .collect::<Result<_>>()?;
    let keys: Vec<u128> = records
        .iter()
        .flatten()
        .map(|e| e.0)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    Ok(records
        .iter()
        .map(|r| {
            let mut v = vec![0.0; keys.len()];
            for &(k, x) in r {
                v[keys.binary_search(&k).expect("key collected")] = x as f64;
            }
            v
        })
        .collect())
}

/// Number of random directions added to the all-ones direction.
pub const MGF_DIRECTIONS: usize = 32;

pub fn split_subgaussian_constant(
    n: usize,
    d: usize,
    seed: u64,
    samples: usize,
    pairing: PairingOrder,
) -> Result<f64> {
    let data = split_discrepancy_samples(n, d, seed, samples, pairing)?;
    let mut rng = substream(seed, &[tag::DIAG, 101]);
    Ok(empirical_subgaussian_constant(&data, MGF_DIRECTIONS, &mut rng)?.sigma2)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len();
    if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    }
}

/// Star discrepancy of a point set: exact in 1-d, grid lower bound above.
pub fn star_discrepancy(points: &PointSet) -> Result<f64> {
    if points.d == 1 {
        star_disc(points, StarMode::Exact)
    } else {
        star_disc(points, StarMode::Grid { h: 8 })
    }
}

/// Median star discrepancy over `seeds` runs of one transference leaf and
/// of an i.i.d. set of the same size.
pub fn star_comparison(
    n: usize,
    d: usize,
    seed: u64,
    seeds: usize,
    pairing: PairingOrder,
) -> Result<(f64, f64)> {
    let pairs: Vec<(f64, f64)> = (0..seeds)
        .into_par_iter()
        .map(|s| {
            let leaf = estimator_points(
                Estimator::Transference,
                n,
                d,
                seed,
                s,
                WalkThreshold::default(),
                pairing,
            )?;
            let iid = estimator_points(
                Estimator::Mc,
                n,
                d,
                seed,
                s,
                WalkThreshold::default(),
                pairing,
            )?;
            Ok((star_discrepancy(&leaf)?, star_discrepancy(&iid)?))
        })
        .collect::<Result<_>>()?;
    Ok((
        median(pairs.iter().map(|p| p.0).collect()),
        median(pairs.iter().map(|p| p.1).collect()),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnoseReport {
    pub n: usize,
    pub d: usize,
    pub h: u32,
    pub seed: u64,
    pub subgaussian_constant: f64,
    pub subgaussian_bound: f64,
    pub median_star_leaf: f64,
    pub median_star_iid: f64,
    pub telescoping_residual: f64,
    pub retries: usize,
    pub max_lambda_over_c: f64,
}

/// Files written by [`run_diagnose`] for one `n`.
pub struct DiagnoseOutput {
    pub report: DiagnoseReport,
    /// `region_id,level_t,disc_value` along the path to leaf 0.
    pub disc_csv: String,
    /// `direction_id,scale,mgf_estimate` for first-split vectors.
    pub mgf_csv: String,
}

/// Split diagnostics for one `n`: discrepancy records along one path, the
/// empirical subgaussian constant of first splits over `trials` seeds
/// (at least 100), and star discrepancy of leaves against i.i.d. sets.
pub fn run_diagnose(
    n: usize,
    d: usize,
    seed: u64,
    trials: usize,
    pairing: PairingOrder,
) -> Result<DiagnoseOutput> {
    let cfg = TransferenceConfig::new(n, d, seed)?
        .with_recording(true)
        .with_pairing(pairing);
    let tree: PartitionTree = subg_transference_leaf(&cfg, 0)?;
    let records = tree.disc_records.as_ref().expect("recording on");
    let mut rows = Vec::new();
    for (t, level) in records.iter().enumerate() {
        for rec in level.values() {
            rows.extend(rec.values.iter().map(|(&k, &v)| (k, t, v as f64)));
        }
    }
    let mut rng = substream(seed, &[tag::DIAG, 102]);
    let corners = random_grid_corners(&mut rng, 50, d, cfg.h);
    let telescoping_residual = telescoping_check(&tree, &corners)?;

    let samples = trials.max(100);
    let data = split_discrepancy_samples(n, d, seed, samples, pairing)?;
    let est = empirical_subgaussian_constant(&data, MGF_DIRECTIONS, &mut rng)?;
    let (leaf_star, iid_star) = star_comparison(n, d, seed, trials.clamp(1, 200), pairing)?;
    let report = DiagnoseReport {
        n,
        d,
        h: cfg.h,
        seed,
        subgaussian_constant: est.sigma2,
        subgaussian_bound: 8.0 * (n as f64).ln().powi(2),
        median_star_leaf: leaf_star,
        median_star_iid: iid_star,
        telescoping_residual,
        retries: tree.stats.retries,
        max_lambda_over_c: tree.stats.max_lambda_over_c,
    };
    Ok(DiagnoseOutput {
        report,
        disc_csv: disc_csv(&rows),
        mgf_csv: mgf_csv(&est),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateSummary {
    pub n: usize,
    pub d: usize,
    pub h: u32,
    pub seed: u64,
    pub wall_seconds: f64,
    pub seconds_per_point: f64,
    pub ops: u64,
    pub ops_per_point: f64,
    pub retries: usize,
    pub files: usize,
    pub directory: PathBuf,
}

/// Refuses to reuse `path` unless `force`; a forced reuse removes an
/// earlier run's directory, recognised by its `meta.json`.
pub fn claim_output_dir(path: &Path, force: bool) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    if !force {
        return Err(Error::OutputExists(path.display().to_string()));
    }
    if path.is_dir() && path.join("meta.json").is_file() {
        std::fs::remove_dir_all(path)?;
        return Ok(());
    }
    if path.is_dir() && std::fs::read_dir(path)?.next().is_none() {
        return Ok(());
    }
    Err(Error::OutputExists(format!(
        "{} (not a previous run, left untouched)",
        path.display()
    )))
}

/// Builds the full partition for each `n` and writes its leaves under
/// `<out>/n_<n>/`.
pub fn run_generate(
    config: &ExperimentConfig,
    out: &Path,
    force: bool,
) -> Result<Vec<GenerateSummary>> {
    config.validate()?;
    let mut summaries = Vec::new();
    for &n in &config.n_list {
        let dir = out.join(format!("n_{n}"));
        claim_output_dir(&dir, force)?;
        let cfg = TransferenceConfig::new(n, config.d, config.seed)?
            .with_threshold(config.threshold)
            .with_pairing(config.pairing);
        let start = Stopwatch::start();
        let tree = subg_transference(&cfg)?;
        let wall = start.seconds();
        tree.write_dir(&dir, &[tree.depth()])?;
        let points = cfg.sample_size() as f64;
        summaries.push(GenerateSummary {
            n,
            d: cfg.d,
            h: cfg.h,
            seed: cfg.seed,
            wall_seconds: wall,
            seconds_per_point: wall / points,
            ops: tree.stats.ops,
            ops_per_point: tree.stats.ops as f64 / points,
            retries: tree.stats.retries,
            files: tree.leaf_indices().len(),
            directory: dir,
        });
    }
    Ok(summaries)
}

/// Wall time of a full partition.
pub fn time_full_tree(n: usize, d: usize, seed: u64) -> Result<f64> {
    let cfg = TransferenceConfig::new(n, d, seed)?;
    let start = Stopwatch::start();
    subg_transference(&cfg)?;
    Ok(start.seconds())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_and_validation() {
        let cfg = ExperimentConfig::from_json(r#"{"mode": "scaling"}"#).unwrap();
        assert_eq!(cfg.trials, 200);
        assert_eq!(cfg.n_list, vec![16, 32, 64, 128, 256, 512, 1024]);
        assert_eq!(cfg.estimators, vec![Estimator::Mc, Estimator::Transference]);
        assert!(ExperimentConfig::from_json(r#"{"mode": "scaling", "n_list": [24]}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"mode": "scaling", "trials": 0}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"mode": "bogus"}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"mode": "verify", "colour": 1}"#).is_err());
        let inline = r#"{"mode": "integrate", "function_spec": {"d": 1, "terms": [{"k": [1], "re": 0, "im": -0.5}]}}"#;
        let cfg = ExperimentConfig::from_json(inline).unwrap();
        assert!(matches!(cfg.function_spec, Some(FunctionSpec::Inline(_))));
        let path = r#"{"mode": "integrate", "function_spec": "f.json"}"#;
        assert!(matches!(
            ExperimentConfig::from_json(path).unwrap().function_spec,
            Some(FunctionSpec::Path(_))
        ));
        assert_eq!(ExperimentConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn vdc_and_grid() {
        assert_eq!(van_der_corput(4).coords, vec![0.0, 0.5, 0.25, 0.75]);
        assert_eq!(midpoint_grid(4, 1).coords, vec![0.125, 0.375, 0.625, 0.875]);
        let g = midpoint_grid(8, 2);
        assert_eq!(g.len(), 8);
        let xs: BTreeSet<u64> = g.iter().map(|p| p[0].to_bits()).collect();
        let ys: BTreeSet<u64> = g.iter().map(|p| p[1].to_bits()).collect();
        assert_eq!((xs.len(), ys.len()), (4, 2));
        let err = estimator_points(
            Estimator::Vdc1d,
            8,
            2,
            0,
            0,
            WalkThreshold::default(),
            PairingOrder::default(),
        );
        assert!(matches!(err, Err(Error::EstimatorDimension { .. })));
    }

    #[test]
    fn vdc_rejected_in_scaling_for_d2() {
        let f = FourierFunction::product(&[
            FourierFunction::sine(1, 1.0),
            FourierFunction::sine(1, 1.0),
        ]);
        let cfg = ExperimentConfig::new(Mode::Scaling)
            .with_function(f.clone())
            .with_estimators(vec![Estimator::Vdc1d]);
        assert!(matches!(
            run_scaling(&cfg, &f),
            Err(Error::EstimatorDimension { .. })
        ));
    }

    #[test]
    fn summary_recomputable_and_rows_round_trip() {
        let f = FourierFunction::sine(2, 1.0);
        let cfg = ExperimentConfig::new(Mode::Scaling)
            .with_function(f.clone())
            .with_n_list(vec![4, 8, 16, 32])
            .with_trials(12)
            .with_estimators(vec![
                Estimator::Mc,
                Estimator::Grid,
                Estimator::Transference,
                Estimator::Vdc1d,
            ]);
        let res = run_scaling(&cfg, &f).unwrap();
        assert_eq!(res.rows.len(), 4 * 4 * 12);
        let back = parse_rows_csv(&rows_csv(&res.rows)).unwrap();
        assert_eq!(back, res.rows);
        let again = summarize(&back);
        for (a, b) in again.iter().zip(&res.summary) {
            assert!((a.rmse - b.rmse).abs() <= 1e-12 * b.rmse.max(1.0));
            let ms: f64 = back
                .iter()
                .filter(|r| r.estimator == a.estimator && r.n == a.n)
                .map(|r| r.error * r.error)
                .sum::<f64>()
                / a.trials as f64;
            assert!((a.rmse * a.rmse - ms).abs() <= 1e-12);
        }
        let parsed = parse_summary_json(&res.summary_json()).unwrap();
        assert_eq!(parsed.summary, res.summary);
        assert_eq!(parsed.slopes, res.slopes);
        // Grid rows repeat one deterministic error.
        let grid: Vec<f64> = res
            .rows
            .iter()
            .filter(|r| r.estimator == Estimator::Grid && r.n == 8)
            .map(|r| r.error)
            .collect();
        assert!(grid.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn scaling_is_thread_independent() {
        let f = FourierFunction::sine(3, 1.0);
        let cfg = ExperimentConfig::new(Mode::Scaling)
            .with_function(f.clone())
            .with_n_list(vec![8, 16])
            .with_trials(6);
        let a = run_scaling(&cfg, &f).unwrap();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(3)
            .build()
            .unwrap();
        let b = pool.install(|| run_scaling(&cfg, &f)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn slope_fit_recovers_power_law() {
        let xs: Vec<f64> = (4..10).map(|p| 2f64.powi(p)).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x.powf(-0.75)).collect();
        let (slope, intercept, ci) = loglog_fit(&xs, &ys).unwrap();
        assert!((slope + 0.75).abs() < 1e-12);
        assert!((intercept - 3f64.ln()).abs() < 1e-12);
        let (lo, hi) = ci.unwrap();
        assert!((hi - lo).abs() < 1e-9);
        assert!(loglog_fit(&[2.0], &[1.0]).is_none());
        // Noisy data: the interval covers the truth.
        let noisy: Vec<f64> = ys
            .iter()
            .enumerate()
            .map(|(i, y)| y * if i % 2 == 0 { 1.1 } else { 0.9 })
            .collect();
        let (s, _, ci) = loglog_fit(&xs, &noisy).unwrap();
        let (lo, hi) = ci.unwrap();
        assert!(lo < -0.75 && -0.75 < hi && lo < s && s < hi);
    }

    #[test]
    fn slope_filter_drops_small_n() {
        let rows: Vec<SummaryRow> = [16usize, 32, 64, 128]
            .iter()
            .map(|&n| SummaryRow {
                estimator: Estimator::Mc,
                n,
                trials: 1,
                rmse: if n == 16 { 10.0 } else { 1.0 / n as f64 },
                mean_error: 0.0,
                stderr: 0.0,
            })
            .collect();
        let fits = fit_slopes(&rows);
        let filtered = fits.iter().find(|f| f.filtered).unwrap();
        let full = fits.iter().find(|f| !f.filtered).unwrap();
        assert_eq!((filtered.points, full.points), (3, 4));
        assert!((filtered.slope + 1.0).abs() < 1e-12);
        assert!(full.slope < -1.5);
    }

    #[test]
    fn envelope_assignments() {
        // High frequency to g, low to h.
        let env = best_of_both_envelope(&mixed_frequency(1, 64), 64, 64);
        assert_eq!(env.to_g, vec![vec![-64], vec![64]]);
        assert_eq!(env.to_h, vec![vec![-1], vec![1]]);
        let expect = 2.0 * 0.25 / 64.0 / 64.0 + 2.0 * (0.25 / 64.0) / 64.0;
        assert!((env.mse - expect).abs() < 1e-15);
        // Degenerate k = 1: everything is smooth.
        let f = FourierFunction::sine(1, 1.0);
        let env = best_of_both_envelope(&f, 64, 1);
        assert!(env.to_g.is_empty());
        assert_eq!(env.mse, env.mse_all_h);
        assert!((env.mse - sigma_so_fourier(&f).powi(2) / 4096.0).abs() < 1e-18);
        assert!(env.mse <= env.mse_all_g.min(env.mse_all_h));
    }

    #[test]
    fn ks_statistic() {
        let a: Vec<f64> = (0..100).map(|i| i as f64 / 100.0).collect();
        let r = ks_two_sample(&a, &a);
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
        let a: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let b: Vec<f64> = (50..150).map(|i| i as f64).collect();
        let r = ks_two_sample(&a, &b);
        assert!((r.statistic - 0.5).abs() < 1e-12);
        assert!(r.p_value < 1e-8);
        let r = ks_two_sample(&[0.0, 1.0], &[0.5]);
        assert!((r.statistic - 0.5).abs() < 1e-12);
        // Q(1.36) ≈ 0.049.
        assert!((kolmogorov_tail(1.36) - 0.0494).abs() < 1e-3);
    }

    #[test]
    fn verify_passes_and_detects_fault() {
        let report = run_verify(&ExperimentConfig::new(Mode::Verify));
        assert!(report.passed, "{:?}", report.failed());
        let mut cfg = ExperimentConfig::new(Mode::Verify);
        cfg.inject_fault = Some(Fault::PbarRunTable);
        let report = run_verify(&cfg);
        assert!(!report.passed);
        let failed: Vec<&str> = report.failed().iter().map(|c| c.name.as_str()).collect();
        assert_eq!(failed, vec!["dyadic.structured_matrix"]);
    }

    #[test]
    fn generate_layout_and_determinism() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ExperimentConfig::new(Mode::Generate).with_n_list(vec![8]);
        cfg.d = 2;
        let s = run_generate(&cfg, dir.path(), false).unwrap();
        assert_eq!(s[0].files, 8);
        let leaf_dir = dir.path().join("n_8/level_3");
        let files: Vec<_> = std::fs::read_dir(&leaf_dir).unwrap().collect();
        assert_eq!(files.len(), 8);
        let first = std::fs::read_to_string(leaf_dir.join("set_0.csv")).unwrap();
        let pts = PointSet::from_csv(&first).unwrap();
        assert_eq!((pts.len(), pts.d), (8, 2));
        assert!(matches!(
            run_generate(&cfg, dir.path(), false),
            Err(Error::OutputExists(_))
        ));
        run_generate(&cfg, dir.path(), true).unwrap();
        assert_eq!(
            std::fs::read_to_string(leaf_dir.join("set_0.csv")).unwrap(),
            first
        );
    }

    #[test]
    fn force_leaves_foreign_directories_alone() {
        let dir = tempfile::tempdir().unwrap();
        let target = dir.path().join("n_8");
        std::fs::create_dir_all(&target).unwrap();
        std::fs::write(target.join("notes.txt"), "keep").unwrap();
        assert!(claim_output_dir(&target, true).is_err());
        assert!(target.join("notes.txt").exists());
    }

    #[test]
    fn diagnose_outputs_parse() {
        let out = run_diagnose(8, 1, 3, 100, PairingOrder::default()).unwrap();
        assert!(out.report.telescoping_residual <= 1e-12 * 8.0);
        assert!(out.report.subgaussian_constant <= out.report.subgaussian_bound);
        let rows = parse_disc_csv(&out.disc_csv).unwrap();
        assert!(rows.iter().all(|r| r.1 < 3));
        let mgf = crate::discrepancy::parse_mgf_csv(&out.mgf_csv).unwrap();
        assert!(!mgf.is_empty());
    }
}
