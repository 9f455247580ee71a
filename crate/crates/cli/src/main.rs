//! `aopnpl`: solve camera poses from correspondence files, run the synthetic
//! benchmarks and evaluate the Cramér-Rao bound.

mod format;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aopnpl::montecarlo::{run_bench, BenchConfig, Experiment};
use aopnpl::synth::{generate_scene, trial_rng};
use aopnpl::{crb_at, estimate, EstimatorConfig, Family, PoseError, SceneConfig, VarianceStrategy};
use clap::{Parser, Subcommand};
use serde::Serialize;

use format::{CorrespondenceFile, CrbOutput, Diagnostics, GroundTruthError, PoseJson, SolveOutput};

#[derive(Parser)]
#[command(name = "aopnpl", version, about = "Camera pose from point and line correspondences")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the pose from a correspondence file.
    Solve {
        file: PathBuf,
        /// Stop after the consistent first step.
        #[arg(long)]
        no_refine: bool,
        /// Noise variance in normalized coordinates, replacing the estimate.
        #[arg(long)]
        sigma2: Option<f64>,
        /// Write the result here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a Monte Carlo experiment and write CSV and JSON results.
    Bench {
        #[arg(long, default_value = "mse")]
        experiment: String,
        /// Comma-separated sizes; defaults to the experiment's grid.
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<usize>>,
        /// Trials per grid point.
        #[arg(long)]
        k: Option<usize>,
        /// Use 1000 trials per grid point unless `--k` is given.
        #[arg(long)]
        full: bool,
        /// Comma-separated pixel noise levels.
        #[arg(long, value_delimiter = ',')]
        sigma_px: Option<Vec<f64>>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// points, lines, combined or all.
        #[arg(long)]
        family: Option<String>,
        #[arg(long, default_value = "bench-out")]
        out: PathBuf,
        /// Write zero timings so that repeated runs produce identical files.
        #[arg(long)]
        omit_timing: bool,
    },
    /// Constrained Cramér-Rao bound at a given pose.
    Crb {
        file: PathBuf,
        /// Pose JSON file, or 12 comma-separated numbers: row-major R then t.
        /// Defaults to the file's ground truth.
        #[arg(long)]
        pose: Option<String>,
        #[arg(long, default_value_t = 1.0)]
        sigma_px: f64,
    },
    /// Write a synthetic correspondence file with its ground truth.
    Generate {
        #[arg(long, default_value_t = 100)]
        points: usize,
        #[arg(long, default_value_t = 0)]
        lines: usize,
        #[arg(long, default_value_t = 0.0)]
        sigma_px: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ErrorKind {
    Parse,
    Underdetermined,
    Numerical,
}

#[derive(Debug)]
struct CliError {
    kind: ErrorKind,
    message: String,
}

impl CliError {
    fn parse(message: impl Into<String>) -> Self {
        Self {
            kind: ErrorKind::Parse,
            message: message.into(),
        }
    }

    fn exit_code(&self) -> u8 {
        match self.kind {
            ErrorKind::Parse => 2,
            ErrorKind::Underdetermined => 3,
            ErrorKind::Numerical => 4,
        }
    }
}

impl From<PoseError> for CliError {
    fn from(e: PoseError) -> Self {
        let kind = if e.is_underdetermined() {
            ErrorKind::Underdetermined
        } else {
            match e {
                PoseError::InvalidArgument(_) | PoseError::SingularIntrinsics | PoseError::DegenerateLine => {
                    ErrorKind::Parse
                }
                _ => ErrorKind::Numerical,
            }
        };
        Self {
            kind,
            message: e.to_string(),
        }
    }
}

#[derive(Serialize)]
struct ErrorJson<'a> {
    error: &'a str,
    code: u8,
    message: &'a str,
}

type CliResult<T> = std::result::Result<T, CliError>;

fn read_file(path: &Path) -> CliResult<CorrespondenceFile> {
    let text = fs::read_to_string(path).map_err(|e| CliError::parse(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::parse(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(value: &T, out: Option<&Path>) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::parse(e.to_string()))?;
    match out {
        Some(p) => fs::write(p, text + "\n").map_err(|e| CliError::parse(format!("{}: {e}", p.display()))),
        None => match writeln!(std::io::stdout().lock(), "{text}") {
            Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(CliError::parse(format!("stdout: {e}"))),
            _ => Ok(()),
        },
    }
}

fn solve(file: &Path, no_refine: bool, sigma2: Option<f64>, out: Option<&Path>) -> CliResult<()> {
    let input = read_file(file)?;
    if input.points.is_empty() && input.lines.is_empty() {
        return Err(PoseError::EmptyInput.into());
    }
    let prepared = input.prepare()?;
    let mut config = EstimatorConfig::default();
    if no_refine {
        config = config.first_step_only();
    }
    if let Some(s) = sigma2 {
        if !(s >= 0.0) {
            return Err(CliError::parse(format!("--sigma2 must be non-negative, got {s}")));
        }
        config.variance = VarianceStrategy::Fixed(s);
    }
    let report = estimate(&prepared.points, &prepared.lines, &config)?;
    let pose = report.pose();
    let ground_truth_error = input.ground_truth.as_ref().map(|gt| {
        let truth = aopnpl::Pose::from(gt);
        let (r, t) = pose.distance(&truth);
        let (r1, t1) = report.first_step.distance(&truth);
        GroundTruthError {
            rotation_fro: r,
            translation: t,
            first_step_rotation_fro: r1,
            first_step_translation: t1,
        }
    });
    let output = SolveOutput {
        rotation: format::from_matrix(&pose.rotation),
        translation: pose.translation.into(),
        sigma2_hat: report.sigma2_hat,
        mode: report.mode.name().to_string(),
        first_step_pose: PoseJson::from(&report.first_step),
        diagnostics: Diagnostics {
            n_points: prepared.points.len(),
            n_lines: prepared.lines.len(),
            refined: report.refined.is_some(),
            sigma2_point: report.noise.point,
            sigma2_line: report.noise.line,
            variance_clamped: report.variance.is_some_and(|v| v.clamped),
            scale_s: report.diagnostics.scale_s,
            sign_d: report.diagnostics.sign_d,
            smallest_eig: report.diagnostics.smallest_eig,
            eig_gap: report.diagnostics.eig_gap,
            skew_asymmetry: report.diagnostics.skew_asymmetry,
            gn_step_norm: report.gn_step_norm,
        },
        ground_truth_error,
    };
    write_json(&output, out)
}

fn parse_families(s: &str) -> CliResult<Vec<Family>> {
    if s == "all" {
        return Ok(Family::ALL.to_vec());
    }
    s.split(',')
        .map(|f| f.trim().parse::<Family>().map_err(|e| CliError::parse(e.to_string())))
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn bench(
    experiment: &str,
    grid: Option<Vec<usize>>,
    k: Option<usize>,
    full: bool,
    sigma_px: Option<Vec<f64>>,
    seed: u64,
    family: Option<&str>,
    out: &Path,
    omit_timing: bool,
) -> CliResult<()> {
    let experiment: Experiment = experiment.parse().map_err(|e: PoseError| CliError::parse(e.to_string()))?;
    let families = match family {
        Some(f) => parse_families(f)?,
        None => vec![experiment.default_family()],
    };
    let trials = k.unwrap_or(if full { 1000 } else { 200 });
    if trials == 0 {
        return Err(CliError::parse("--k must be at least 1"));
    }
    let grid = grid.unwrap_or_else(|| experiment.default_grid());
    if grid.is_empty() || grid.contains(&0) {
        return Err(CliError::parse("--grid needs positive sizes"));
    }
    let sigma_px = sigma_px.unwrap_or_else(|| experiment.default_sigma_px());
    let config = BenchConfig::new(experiment, &families, grid, sigma_px, trials, seed);
    let mut output = run_bench(&config).map_err(|e| match e {
        PoseError::InvalidArgument(m) => CliError::parse(m),
        other => other.into(),
    })?;
    if omit_timing {
        for row in &mut output.rows {
            row.wall_time = 0.0;
        }
        for fr in &mut output.runtime {
            for r in &mut fr.report.rows {
                r.seconds = 0.0;
            }
            fr.report.slope = 0.0;
        }
    }

    fs::create_dir_all(out).map_err(|e| CliError::parse(format!("{}: {e}", out.display())))?;
    let csv_path = out.join(format!("{experiment}.csv"));
    let io_err = |e: csv::Error| CliError::parse(format!("{}: {e}", csv_path.display()));
    let mut writer = csv::Writer::from_path(&csv_path).map_err(io_err)?;
    for row in &output.rows {
        writer.serialize(row).map_err(io_err)?;
    }
    writer
        .flush()
        .map_err(|e| CliError::parse(format!("{}: {e}", csv_path.display())))?;
    let json_path = out.join(format!("{experiment}.json"));
    write_json(&output, Some(&json_path))?;
    println!("{}", csv_path.display());
    println!("{}", json_path.display());
    Ok(())
}

fn parse_pose(arg: &str) -> CliResult<aopnpl::Pose> {
    let path = Path::new(arg);
    if path.is_file() {
        let text = fs::read_to_string(path).map_err(|e| CliError::parse(format!("{arg}: {e}")))?;
        let pose: PoseJson = serde_json::from_str(&text).map_err(|e| CliError::parse(format!("{arg}: {e}")))?;
        return Ok(aopnpl::Pose::from(&pose));
    }
    let values: Vec<f64> = arg
        .split(',')
        .map(|v| v.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::parse(format!("--pose: {e}")))?;
    if values.len() != 12 {
        return Err(CliError::parse(format!(
            "--pose needs 12 numbers or a pose file, got {} values",
            values.len()
        )));
    }
    let r = [
        [values[0], values[1], values[2]],
        [values[3], values[4], values[5]],
        [values[6], values[7], values[8]],
    ];
    Ok(aopnpl::Pose::from(&PoseJson {
        rotation: r,
        translation: [values[9], values[10], values[11]],
    }))
}

fn crb(file: &Path, pose: Option<&str>, sigma_px: f64) -> CliResult<()> {
    let input = read_file(file)?;
    let pose = match (pose, &input.ground_truth) {
        (Some(p), _) => parse_pose(p)?,
        (None, Some(gt)) => aopnpl::Pose::from(gt),
        (None, None) => return Err(CliError::parse("no --pose given and the file has no ground truth")),
    };
    if !aopnpl::so3::is_rotation(&pose.rotation) {
        return Err(CliError::parse("pose rotation is not a rotation matrix"));
    }
    if !(sigma_px > 0.0) {
        return Err(CliError::parse(format!("--sigma-px must be positive, got {sigma_px}")));
    }
    let prepared = input.prepare()?;
    let sigma2 = prepared.intrinsics.sigma2_from_pixels(sigma_px);
    let result = crb_at(&pose, &prepared.points, &prepared.lines, sigma2)?;
    write_json(
        &CrbOutput {
            trace: result.trace_bound,
            rotation_block_trace: result.rotation_trace,
            translation_block_trace: result.translation_trace,
            sigma2,
        },
        None,
    )
}

fn generate(points: usize, lines: usize, sigma_px: f64, seed: u64, out: Option<&Path>) -> CliResult<()> {
    let cfg = SceneConfig {
        seed,
        ..SceneConfig::default()
    }
    .with_counts(points, lines)
    .with_sigma_px(sigma_px);
    let mut rng = trial_rng(seed, 0, 0);
    let scene = generate_scene(&cfg, &mut rng).map_err(|e| CliError::parse(e.to_string()))?;
    let (p, l) = scene.noisy(sigma_px, &mut rng);
    let file = CorrespondenceFile::from_scene(&scene.intrinsics, &p, &l, Some(&scene.truth));
    write_json(&file, out)
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Solve {
            file,
            no_refine,
            sigma2,
            out,
        } => solve(&file, no_refine, sigma2, out.as_deref()),
        Command::Bench {
            experiment,
            grid,
            k,
            full,
            sigma_px,
            seed,
            family,
            out,
            omit_timing,
        } => bench(
            &experiment,
            grid,
            k,
            full,
            sigma_px,
            seed,
            family.as_deref(),
            &out,
            omit_timing,
        ),
        Command::Crb { file, pose, sigma_px } => crb(&file, pose.as_deref(), sigma_px),
        Command::Generate {
            points,
            lines,
            sigma_px,
            seed,
            out,
        } => generate(points, lines, sigma_px, seed, out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // help and version requests are not errors
            if !e.use_stderr() {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let msg = e.to_string();
            let err = ErrorJson {
                error: "parse",
                code: 2,
                message: msg.trim(),
            };
            eprintln!("{}", serde_json::to_string(&err).unwrap_or_default());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = match e.kind {
                ErrorKind::Parse => "parse",
                ErrorKind::Underdetermined => "underdetermined",
                ErrorKind::Numerical => "numerical",
            };
            let err = ErrorJson {
                error: kind,
                code: e.exit_code(),
                message: &e.message,
            };
            eprintln!("{}", serde_json::to_string(&err).unwrap_or_default());
            ExitCode::from(e.exit_code())
        }
    }
}
