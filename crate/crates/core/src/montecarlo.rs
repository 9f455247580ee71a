//! Monte Carlo experiments on synthetic scenes: estimator accuracy against the
//! bound, bias with and without elimination, variance estimation error and
//! runtime scaling.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::Serialize;

use crate::crb::crb_at;
use crate::error::{PoseError, Result};
use crate::pipeline::estimate;
use crate::so3::Pose;
use crate::solver::{EstimatorConfig, VarianceStrategy};
use crate::synth::{generate_scene, trial_rng, Family, SceneConfig};

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "AOPNPL_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Variant {
    /// First step with the variance forced to zero.
    #[serde(rename = "no-be")]
    NoBiasElimination,
    /// Bias-eliminated first step.
    #[serde(rename = "be")]
    BiasEliminated,
    /// Bias-eliminated first step followed by one Gauss-Newton step.
    #[serde(rename = "two-step")]
    TwoStep,
    /// Two-step estimator given the true noise variance.
    #[serde(rename = "oracle-sigma")]
    OracleSigma,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::NoBiasElimination,
        Variant::BiasEliminated,
        Variant::TwoStep,
        Variant::OracleSigma,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::NoBiasElimination => "no-be",
            Variant::BiasEliminated => "be",
            Variant::TwoStep => "two-step",
            Variant::OracleSigma => "oracle-sigma",
        }
    }

    pub fn config(self, sigma2: f64) -> EstimatorConfig {
        let base = EstimatorConfig::default();
        match self {
            Variant::NoBiasElimination => base.without_bias_elimination().first_step_only(),
            Variant::BiasEliminated => base.first_step_only(),
            Variant::TwoStep => base,
            Variant::OracleSigma => EstimatorConfig {
                variance: VarianceStrategy::Fixed(sigma2),
                ..base
            },
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = PoseError;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| PoseError::InvalidArgument(format!("unknown variant '{s}'")))
    }
}

/// One estimator run inside a trial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VariantOutcome {
    pub pose: Pose,
    /// Variance the estimator used.
    pub sigma2_used: f64,
    pub time_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub trial: usize,
    /// One entry per requested variant, `Err` holding the failure message.
    pub outcomes: Vec<std::result::Result<VariantOutcome, String>>,
    /// Constrained bound trace at the true pose, `None` if it could not be computed.
    pub crb_trace: Option<f64>,
}

/// Aggregate statistics of one variant over the trials of one grid cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialMetrics {
    pub size_n: usize,
    pub size_m: usize,
    pub sigma_px: f64,
    pub variant: Variant,
    pub mse_r: f64,
    pub mse_t: f64,
    pub bias_r: f64,
    pub bias_t: f64,
    pub sigma2_mse: f64,
    pub crb_trace: f64,
    #[serde(rename = "time_s")]
    pub wall_time: f64,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloResult {
    pub truth: Pose,
    pub sigma2: f64,
    pub variants: Vec<Variant>,
    pub trials: Vec<TrialRecord>,
    pub metrics: Vec<TrialMetrics>,
}

impl MonteCarloResult {
    pub fn metrics_for(&self, variant: Variant) -> Option<&TrialMetrics> {
        self.metrics.iter().find(|m| m.variant == variant)
    }

    /// Successful outcomes of one variant in trial order.
    pub fn outcomes(&self, variant: Variant) -> Vec<VariantOutcome> {
        let Some(k) = self.variants.iter().position(|v| *v == variant) else {
            return Vec::new();
        };
        self.trials
            .iter()
            .filter_map(|t| t.outcomes[k].as_ref().ok().copied())
            .collect()
    }
}

/// Worker count from `AOPNPL_THREADS`, if set to a positive integer.
pub fn thread_limit() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
}

fn with_pool<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    match thread_limit() {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        },
        None => f(),
    }
}

fn run_trial(cfg: &SceneConfig, cell: u64, trial: usize, variants: &[Variant], sigma2: f64) -> TrialRecord {
    let mut rng = trial_rng(cfg.seed, cell, trial as u64);
    let scene = match generate_scene(cfg, &mut rng) {
        Ok(s) => s,
        Err(e) => {
            return TrialRecord {
                trial,
                outcomes: variants.iter().map(|_| Err(e.to_string())).collect(),
                crb_trace: None,
            }
        }
    };
    let (points, lines) = scene.noisy(cfg.sigma_px, &mut rng);
    let outcomes = variants
        .iter()
        .map(|v| {
            let start = Instant::now();
            let report = estimate(&points, &lines, &v.config(sigma2)).map_err(|e| e.to_string())?;
            let time_s = start.elapsed().as_secs_f64();
            Ok(VariantOutcome {
                pose: *report.pose(),
                sigma2_used: report.sigma2_hat,
                time_s,
            })
        })
        .collect();
    let crb_trace = if sigma2 > 0.0 {
        crb_at(&scene.truth, &scene.points, &scene.lines, sigma2)
            .ok()
            .map(|c| c.trace_bound)
    } else {
        Some(0.0)
    };
    TrialRecord {
        trial,
        outcomes,
        crb_trace,
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

fn summarize(
    cfg: &SceneConfig,
    variant: Variant,
    k: usize,
    truth: &Pose,
    sigma2: f64,
    trials: &[TrialRecord],
) -> TrialMetrics {
    let ok: Vec<&VariantOutcome> = trials.iter().filter_map(|t| t.outcomes[k].as_ref().ok()).collect();
    let failures = trials.len() - ok.len();
    let count = ok.len().max(1) as f64;
    let mut sum_r = Matrix3::zeros();
    let mut sum_t = Vector3::zeros();
    for o in &ok {
        sum_r += o.pose.rotation;
        sum_t += o.pose.translation;
    }
    let (bias_r, bias_t) = if ok.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        (
            (sum_r / count - truth.rotation).abs().sum(),
            (sum_t / count - truth.translation).abs().sum(),
        )
    };
    TrialMetrics {
        size_n: cfg.n_points,
        size_m: cfg.n_lines,
        sigma_px: cfg.sigma_px,
        variant,
        mse_r: mean(ok.iter().map(|o| (o.pose.rotation - truth.rotation).norm_squared())),
        mse_t: mean(ok.iter().map(|o| (o.pose.translation - truth.translation).norm_squared())),
        bias_r,
        bias_t,
        sigma2_mse: mean(ok.iter().map(|o| (o.sigma2_used - sigma2).powi(2))),
        crb_trace: mean(trials.iter().filter_map(|t| t.crb_trace)),
        wall_time: mean(ok.iter().map(|o| o.time_s)),
        failures,
    }
}

/// Runs `k_trials` independent trials of every variant on scenes drawn from `cfg`.
///
/// `cell` distinguishes grid points sharing one master seed. All variants see
/// the same noisy data within a trial. Failed runs are counted, not retried.
pub fn run_monte_carlo(
    cfg: &SceneConfig,
    k_trials: usize,
    variants: &[Variant],
    cell: u64,
) -> Result<MonteCarloResult> {
    if k_trials == 0 {
        return Err(PoseError::InvalidArgument("k_trials must be at least 1".into()));
    }
    if variants.is_empty() {
        return Err(PoseError::InvalidArgument("no estimator variants requested".into()));
    }
    let sigma2 = cfg.sigma2(cfg.sigma_px);
    let truth = cfg.truth();
    let trials: Vec<TrialRecord> = with_pool(|| {
        (0..k_trials)
            .into_par_iter()
            .map(|i| run_trial(cfg, cell, i, variants, sigma2))
            .collect()
    });
    let metrics = variants
        .iter()
        .enumerate()
        .map(|(k, &v)| summarize(cfg, v, k, &truth, sigma2, &trials))
        .collect();
    Ok(MonteCarloResult {
        truth,
        sigma2,
        variants: variants.to_vec(),
        trials,
        metrics,
    })
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RuntimeRow {
    pub size: usize,
    pub n_points: usize,
    pub n_lines: usize,
    /// Median wall time of one full solve.
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RuntimeReport {
    pub rows: Vec<RuntimeRow>,
    pub slope: f64,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Sub-batches per timed run; the run reports the fastest.
const SUB_BATCHES: usize = 5;

/// Median solve time of the two-step estimator at each size.
///
/// Each of the `repeats` runs splits `min_batch_s` into sub-batches of
/// back-to-back solves on one scene and reports the lowest per-solve average.
pub fn runtime_scaling(
    cfg: &SceneConfig,
    family: Family,
    sizes: &[usize],
    repeats: usize,
    min_batch_s: f64,
) -> Result<RuntimeReport> {
    if sizes.is_empty() || repeats == 0 {
        return Err(PoseError::InvalidArgument("need at least one size and one repeat".into()));
    }
    if sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(PoseError::InvalidArgument("sizes must be strictly ascending".into()));
    }
    let config = EstimatorConfig::default();
    let mut rows = Vec::with_capacity(sizes.len());
    for (cell, &size) in sizes.iter().enumerate() {
        let c = cfg.clone().for_family(family, size);
        let mut times = Vec::with_capacity(repeats);
        for r in 0..repeats {
            let mut rng = trial_rng(cfg.seed, cell as u64, r as u64);
            let scene = generate_scene(&c, &mut rng)?;
            let (points, lines) = scene.noisy(c.sigma_px, &mut rng);
            let mut best = f64::INFINITY;
            for _ in 0..SUB_BATCHES {
                let start = Instant::now();
                let mut solves = 0usize;
                loop {
                    std::hint::black_box(estimate(&points, &lines, &config)?);
                    solves += 1;
                    if start.elapsed().as_secs_f64() >= min_batch_s / SUB_BATCHES as f64 {
                        break;
                    }
                }
                best = best.min(start.elapsed().as_secs_f64() / solves as f64);
            }
            times.push(best);
        }
        rows.push(RuntimeRow {
            size,
            n_points: c.n_points,
            n_lines: c.n_lines,
            seconds: median(times),
        });
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.size as f64).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.seconds).collect();
    let slope = if rows.len() > 1 { log_log_slope(&xs, &ys) } else { f64::NAN };
    Ok(RuntimeReport { rows, slope })
}

/// The experiment families exposed by the benchmark driver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    Variance,
    Bias,
    Mse,
    Runtime,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Variance => "variance",
            Experiment::Bias => "bias",
            Experiment::Mse => "mse",
            Experiment::Runtime => "runtime",
        }
    }

    pub fn default_grid(self) -> Vec<usize> {
        match self {
            Experiment::Runtime => vec![250, 1000, 4000],
            _ => vec![10, 30, 100, 300, 1000],
        }
    }

    pub fn default_sigma_px(self) -> Vec<f64> {
        match self {
            Experiment::Bias => vec![10.0],
            _ => vec![5.0],
        }
    }

    pub fn default_family(self) -> Family {
        match self {
            Experiment::Runtime => Family::Points,
            _ => Family::Combined,
        }
    }

    pub fn variants(self) -> Vec<Variant> {
        match self {
            Experiment::Variance => vec![Variant::BiasEliminated],
            Experiment::Bias => vec![Variant::NoBiasElimination, Variant::BiasEliminated],
            Experiment::Mse => Variant::ALL.to_vec(),
            Experiment::Runtime => vec![Variant::TwoStep],
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = PoseError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "variance" => Ok(Experiment::Variance),
            "bias" => Ok(Experiment::Bias),
            "mse" => Ok(Experiment::Mse),
            "runtime" => Ok(Experiment::Runtime),
            other => Err(PoseError::InvalidArgument(format!("unknown experiment '{other}'"))),
        }
    }
}

/// Full description of a benchmark run, echoed alongside its results.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchConfig {
    pub experiment: Experiment,
    pub families: Vec<String>,
    pub grid: Vec<usize>,
    pub sigma_px: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub variants: Vec<Variant>,
    pub euler: [f64; 3],
    pub translation: [f64; 3],
    pub intrinsics: [[f64; 3]; 3],
    pub image_size: (f64, f64),
    pub depth_range: (f64, f64),
    pub min_line_px: f64,
    pub threads: Option<usize>,
}

impl BenchConfig {
    pub fn new(
        experiment: Experiment,
        families: &[Family],
        grid: Vec<usize>,
        sigma_px: Vec<f64>,
        trials: usize,
        seed: u64,
    ) -> Self {
        let scene = SceneConfig::default();
        let k = scene.intrinsics.matrix();
        Self {
            experiment,
            families: families.iter().map(|f| f.name().to_string()).collect(),
            grid,
            sigma_px,
            trials,
            seed,
            variants: experiment.variants(),
            euler: scene.euler.into(),
            translation: scene.translation.into(),
            intrinsics: [
                [k[(0, 0)], k[(0, 1)], k[(0, 2)]],
                [k[(1, 0)], k[(1, 1)], k[(1, 2)]],
                [k[(2, 0)], k[(2, 1)], k[(2, 2)]],
            ],
            image_size: scene.image_size,
            depth_range: scene.depth_range,
            min_line_px: scene.min_line_px,
            threads: thread_limit(),
        }
    }

    fn family_list(&self) -> Result<Vec<Family>> {
        self.families.iter().map(|f| f.parse()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchOutput {
    pub config: BenchConfig,
    pub rows: Vec<TrialMetrics>,
    /// Median-of-five timings per family, filled only by the runtime experiment.
    pub runtime: Vec<FamilyRuntime>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FamilyRuntime {
    pub family: String,
    pub report: RuntimeReport,
}

/// Runs the Monte Carlo grid described by `config`: one cell per family,
/// noise level and size, in that nesting order.
pub fn run_bench(config: &BenchConfig) -> Result<BenchOutput> {
    if config.grid.is_empty() || config.sigma_px.is_empty() {
        return Err(PoseError::InvalidArgument("empty grid".into()));
    }
    if config.sigma_px.iter().any(|s| !(*s >= 0.0)) {
        return Err(PoseError::InvalidArgument("sigma_px must be non-negative".into()));
    }
    let families = config.family_list()?;
    let mut rows = Vec::new();
    let mut runtime = Vec::new();
    let mut cell = 0u64;
    for &family in &families {
        for &sigma_px in &config.sigma_px {
            for &size in &config.grid {
                let cfg = SceneConfig {
                    seed: config.seed,
                    ..SceneConfig::default()
                }
                .for_family(family, size)
                .with_sigma_px(sigma_px);
                let result = run_monte_carlo(&cfg, config.trials, &config.variants, cell)?;
                rows.extend(result.metrics);
                cell += 1;
            }
        }
        if config.experiment == Experiment::Runtime {
            let mut grid = config.grid.clone();
            grid.sort_unstable();
            grid.dedup();
            let cfg = SceneConfig {
                seed: config.seed,
                sigma_px: config.sigma_px[0],
                ..SceneConfig::default()
            };
            runtime.push(FamilyRuntime {
                family: family.name().to_string(),
                report: runtime_scaling(&cfg, family, &grid, 5, 0.01)?,
            });
        }
    }
    Ok(BenchOutput {
        config: config.clone(),
        rows,
        runtime,
    })
}
