//! Single entry-point binary: dataset generation, fitting, benchmarking,
//! rendering, inversion, phase evaluation, and experiment reproduction.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use num_complex::Complex64;
use serde::Serialize;
use sha2::{Digest, Sha256};

use scatterkit::fitting::{benchmark, fit, write_benchmark_csv, FitFamily, FitProblem};
use scatterkit::inverse::{ingest_profiles, invert, InversePhaseFamily, InversionConfig, SlabGeometry};
use scatterkit::mie::{mie_mono, mie_poly, MieConfig, MieResult};
use scatterkit::phase::{PhaseModel, TabulatedPhase};
use scatterkit::render::{render, SlabScene};

#[derive(Parser)]
#[command(name = "scatterkit", version, about = "Scattering phase functions, Mie reference data, slab rendering, and parameter estimation")]
struct Cli {
    /// Cap rayon parallelism; outputs are independent of this value.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a single-scattering reference table for spherical particles.
    Mie(MieArgs),
    /// Fit one phase family to a tabulated target.
    Fit(FitArgs),
    /// Fit every family in the standard set to every target in a directory.
    Benchmark(BenchmarkArgs),
    /// Render a 1-D intensity profile of a slab scene.
    Render(RenderArgs),
    /// Estimate slab parameters from measured or rendered profiles.
    Invert(InvertArgs),
    /// Evaluate a phase function at a single cosine.
    EvalPhase(EvalPhaseArgs),
    /// Reproduce a full experiment table from scratch.
    Repro(ReproArgs),
}

#[derive(Args)]
struct MieArgs {
    /// Particle diameter, micrometers (mean diameter when --sd > 0).
    #[arg(long)]
    diameter: f64,
    /// Diameter standard deviation, micrometers; 0 selects a single size.
    #[arg(long, default_value_t = 0.0)]
    sd: f64,
    /// Vacuum wavelength, micrometers.
    #[arg(long, default_value_t = 0.6)]
    wavelength: f64,
    #[arg(long, default_value_t = 1.59)]
    n_particle: f64,
    /// Imaginary part of the particle index (absorption).
    #[arg(long, default_value_t = 0.0)]
    n_particle_imag: f64,
    #[arg(long, default_value_t = 1.33)]
    n_medium: f64,
    /// Scattering-angle grid resolution for the tabulated phase.
    #[arg(long, default_value_t = 1801)]
    angles: usize,
    /// Quadrature nodes over the size distribution.
    #[arg(long, default_value_t = 21)]
    nodes: usize,
    /// Output CSV path; a JSON sidecar with g, Qsca, Qext is written next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    /// Target phase CSV.
    #[arg(long)]
    target: PathBuf,
    /// One of exp1|exp2|exp3|exp5|exp7, poly3|poly5|poly7, hg, tthg.
    #[arg(long)]
    family: String,
    #[arg(long, default_value_t = 16)]
    restarts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchmarkArgs {
    /// Directory of target phase CSVs (every *.csv is one target).
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value_t = 16)]
    restarts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RenderArgs {
    /// Scene description, TOML.
    #[arg(long)]
    scene: PathBuf,
    /// Overrides the seed stored in the scene file.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InvertArgs {
    /// Directory holding the profile CSVs.
    #[arg(long, default_value = ".")]
    profiles: PathBuf,
    /// Light-direction manifest (JSON); relative paths resolve against --profiles.
    #[arg(long, default_value = "lights.json")]
    manifest: PathBuf,
    /// exp3 or tthg.
    #[arg(long, default_value = "exp3")]
    family: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Slab thickness, mm.
    #[arg(long, default_value_t = 1.0)]
    thickness: f64,
    /// Beam radius, mm.
    #[arg(long, default_value_t = 0.2)]
    beam_radius: f64,
    #[arg(long, default_value_t = 1000)]
    max_bounces: usize,
    #[arg(long, default_value_t = 40)]
    max_outer_iters: usize,
    /// Comma-separated ascending samples-per-pixel schedule.
    #[arg(long)]
    spp_schedule: Option<String>,
    /// Comma-separated positive biases for the log loss.
    #[arg(long)]
    delta_pool: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalPhaseArgs {
    /// hg | tthg | rayleigh | isotropic | exp | poly.
    #[arg(long)]
    family: String,
    #[arg(long)]
    g: Option<f64>,
    #[arg(long)]
    g1: Option<f64>,
    #[arg(long)]
    g2: Option<f64>,
    #[arg(long)]
    w: Option<f64>,
    /// Comma-separated coefficients for exp (b1..bM) or poly (a0..aN).
    #[arg(long)]
    coeffs: Option<String>,
    #[arg(long)]
    mu: f64,
}

#[derive(Args)]
struct ReproArgs {
    /// Experiment name; currently `fig3` (full fitting-benchmark matrix).
    experiment: String,
    /// mono or poly.
    #[arg(long, default_value = "mono")]
    dispersion: String,
    #[arg(long, default_value_t = 16)]
    restarts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Serialize)]
struct RunManifest {
    command_line: Vec<String>,
    config_digest: String,
    seed: Option<u64>,
    tool_version: String,
    started: String,
    finished: String,
    outputs: Vec<String>,
}

struct ManifestBuilder {
    command_line: Vec<String>,
    started: chrono::DateTime<chrono::Utc>,
}

impl ManifestBuilder {
    fn start() -> Self {
        Self { command_line: std::env::args().collect(), started: chrono::Utc::now() }
    }

    /// Writes `<first output>.manifest.json` describing the finished run.
    fn finish<C: Serialize>(self, config: &C, seed: Option<u64>, outputs: &[&Path]) -> Result<(), CliError> {
        let digest = hex(&Sha256::digest(serde_json::to_vec(config).expect("config serializes")));
        let manifest = RunManifest {
            command_line: self.command_line,
            config_digest: digest,
            seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            started: self.started.to_rfc3339(),
            finished: chrono::Utc::now().to_rfc3339(),
            outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
        };
        let first = outputs.first().expect("at least one output");
        let path = manifest_path(first);
        std::fs::write(&path, serde_json::to_string_pretty(&manifest).expect("manifest serializes"))
            .map_err(|e| CliError(format!("writing {}: {e}", path.display())))?;
        Ok(())
    }
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

struct CliError(String);

impl<E: std::error::Error> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError(e.to_string())
    }
}

fn parse_fit_family(s: &str) -> Result<FitFamily, CliError> {
    let norm = s.to_ascii_lowercase();
    if let Some(m) = norm.strip_prefix("exponential").or_else(|| norm.strip_prefix("exp")) {
        let m: usize = m.parse().map_err(|_| CliError(format!("family: bad degree in {s:?}")))?;
        return Ok(FitFamily::Exponential(m));
    }
    if let Some(n) = norm.strip_prefix("polynomial").or_else(|| norm.strip_prefix("poly")) {
        let n: usize = n.parse().map_err(|_| CliError(format!("family: bad degree in {s:?}")))?;
        return Ok(FitFamily::RawPolynomial(n));
    }
    match norm.as_str() {
        "hg" => Ok(FitFamily::Hg),
        "tthg" | "two-term-hg" => Ok(FitFamily::TwoTermHg),
        _ => Err(CliError(format!("family: unknown family {s:?}"))),
    }
}

/// The nine families of the standard fitting benchmark.
fn benchmark_families() -> Vec<FitFamily> {
    vec![
        FitFamily::RawPolynomial(7),
        FitFamily::RawPolynomial(5),
        FitFamily::RawPolynomial(3),
        FitFamily::Hg,
        FitFamily::TwoTermHg,
        FitFamily::Exponential(7),
        FitFamily::Exponential(5),
        FitFamily::Exponential(3),
        FitFamily::Exponential(1),
    ]
}

/// Reference diameter set (micrometers) for the full benchmark matrix.
const TABLE_DIAMETERS: [f64; 13] = [30.0, 20.0, 15.0, 10.0, 5.0, 3.0, 2.0, 1.0, 0.5, 0.3, 0.2, 0.1, 0.01];

fn cmd_mie(args: &MieArgs) -> Result<(), CliError> {
    let m = ManifestBuilder::start();
    let cfg = MieConfig {
        diameter_mean: args.diameter,
        diameter_sd: args.sd,
        wavelength: args.wavelength,
        n_particle: Complex64::new(args.n_particle, args.n_particle_imag),
        n_medium: args.n_medium,
        n_angles: args.angles,
        n_quad_sizes: args.nodes,
    };
    let result: MieResult =
        if args.sd > 0.0 { mie_poly(&cfg)? } else { mie_mono(args.diameter, &cfg)? };
    result.phase.write_csv_path(&args.out)?;
    #[derive(Serialize)]
    struct Sidecar<'a> {
        g: f64,
        qsca: f64,
        qext: f64,
        config: &'a MieConfig,
    }
    let sidecar_path = args.out.with_extension("json");
    std::fs::write(
        &sidecar_path,
        serde_json::to_string_pretty(&Sidecar {
            g: result.g,
            qsca: result.qsca,
            qext: result.qext,
            config: &cfg,
        })
        .expect("sidecar serializes"),
    )?;
    m.finish(&cfg, None, &[&args.out, &sidecar_path])
}

fn cmd_fit(args: &FitArgs) -> Result<(), CliError> {
    let m = ManifestBuilder::start();
    let family = parse_fit_family(&args.family)?;
    let target = TabulatedPhase::from_csv_path(&args.target)?.normalize()?;
    let problem = FitProblem::new(target, family, args.restarts, args.seed);
    let report = fit(&problem)?;
    std::fs::write(&args.out, serde_json::to_string_pretty(&report).expect("report serializes"))?;
    m.finish(&(family, args.restarts, args.seed), Some(args.seed), &[&args.out])
}

fn load_dataset(dir: &Path) -> Result<Vec<(String, TabulatedPhase)>, CliError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError(format!("dataset: no CSV targets in {}", dir.display())));
    }
    let mut targets = Vec::new();
    for p in paths {
        let label = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        targets.push((label, TabulatedPhase::from_csv_path(&p)?.normalize()?));
    }
    Ok(targets)
}

fn cmd_benchmark(args: &BenchmarkArgs) -> Result<(), CliError> {
    let m = ManifestBuilder::start();
    let targets = load_dataset(&args.dataset)?;
    let families = benchmark_families();
    let matrix = benchmark(&targets, &families, args.restarts, args.seed);
    let mut buf = Vec::new();
    write_benchmark_csv(&mut buf, &targets, &families, &matrix)?;
    std::fs::write(&args.out, buf)?;
    let labels: Vec<&String> = targets.iter().map(|(l, _)| l).collect();
    m.finish(&(labels, args.restarts, args.seed), Some(args.seed), &[&args.out])
}

fn cmd_render(args: &RenderArgs) -> Result<(), CliError> {
    let m = ManifestBuilder::start();
    let mut scene = SlabScene::from_toml_path(&args.scene)?;
    if let Some(seed) = args.seed {
        scene.seed = seed;
    }
    let profile = render(&scene)?;
    profile.write_csv_path(&args.out, 1.0)?;
    m.finish(&scene, Some(scene.seed), &[&args.out])
}

fn cmd_invert(args: &InvertArgs) -> Result<(), CliError> {
    let m = ManifestBuilder::start();
    let manifest = if args.manifest.is_absolute() {
        args.manifest.clone()
    } else {
        args.profiles.join(&args.manifest)
    };
    let observed = ingest_profiles(&manifest)?;
    let family = match args.family.to_ascii_lowercase().as_str() {
        "exp3" | "exponential3" => InversePhaseFamily::Exponential3,
        "tthg" | "two-term-hg" => InversePhaseFamily::TwoTermHg,
        other => return Err(CliError(format!("family: expected exp3 or tthg, got {other:?}"))),
    };
    let geometry = SlabGeometry {
        thickness: args.thickness,
        beam_radius: args.beam_radius,
        pixel_line: observed.profiles[0].line.clone(),
        max_bounces: args.max_bounces,
    };
    let mut cfg = InversionConfig {
        family,
        seed: args.seed,
        max_outer_iters: args.max_outer_iters,
        ..Default::default()
    };
    if let Some(s) = &args.spp_schedule {
        cfg.spp_schedule = s
            .split(',')
            .map(|t| t.trim().parse::<usize>().map_err(|_| CliError(format!("spp-schedule: bad value {t:?}"))))
            .collect::<Result<_, _>>()?;
    }
    if let Some(s) = &args.delta_pool {
        cfg.delta_pool = parse_coeffs(s)?;
    }
    let report = invert(&observed, &geometry, &cfg)?;
    std::fs::write(&args.out, serde_json::to_string_pretty(&report).expect("report serializes"))?;
    m.finish(&(&geometry, &cfg), Some(args.seed), &[&args.out])
}

fn parse_coeffs(s: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| CliError(format!("coeffs: bad number {t:?}"))))
        .collect()
}

fn cmd_eval_phase(args: &EvalPhaseArgs) -> Result<(), CliError> {
    let missing = |flag: &str| CliError(format!("{}: --{flag} is required", args.family));
    let model = match args.family.to_ascii_lowercase().as_str() {
        "hg" => {
            let g = args.g.ok_or_else(|| missing("g"))?;
            if g == 0.0 { PhaseModel::Isotropic } else { PhaseModel::hg(g)? }
        }
        "tthg" | "two-term-hg" => PhaseModel::two_term_hg(
            args.g1.ok_or_else(|| missing("g1"))?,
            args.g2.ok_or_else(|| missing("g2"))?,
            args.w.ok_or_else(|| missing("w"))?,
        )?,
        "rayleigh" => PhaseModel::Rayleigh,
        "isotropic" => PhaseModel::Isotropic,
        "exp" | "exponential" => {
            let coeffs = parse_coeffs(args.coeffs.as_deref().ok_or_else(|| missing("coeffs"))?)?;
            PhaseModel::exponential(coeffs).normalize()?
        }
        "poly" | "polynomial" => {
            let coeffs = parse_coeffs(args.coeffs.as_deref().ok_or_else(|| missing("coeffs"))?)?;
            PhaseModel::raw_polynomial(coeffs).normalize()?
        }
        other => return Err(CliError(format!("family: unknown family {other:?}"))),
    };
    println!("{:.7}", model.eval(args.mu)?);
    Ok(())
}

fn cmd_repro(args: &ReproArgs) -> Result<(), CliError> {
    if args.experiment != "fig3" {
        return Err(CliError(format!("experiment: unknown experiment {:?} (expected fig3)", args.experiment)));
    }
    let poly = match args.dispersion.as_str() {
        "mono" => false,
        "poly" => true,
        other => return Err(CliError(format!("dispersion: expected mono or poly, got {other:?}"))),
    };
    let m = ManifestBuilder::start();
    let mut targets = Vec::new();
    for d in TABLE_DIAMETERS {
        let cfg = MieConfig {
            diameter_mean: d,
            diameter_sd: if poly { 0.1 * d } else { 0.0 },
            ..Default::default()
        };
        let result = if poly { mie_poly(&cfg)? } else { mie_mono(d, &cfg)? };
        targets.push((format!("d{d}"), result.phase));
    }
    let families = benchmark_families();
    let matrix = benchmark(&targets, &families, args.restarts, args.seed);
    let mut buf = Vec::new();
    write_benchmark_csv(&mut buf, &targets, &families, &matrix)?;
    std::fs::write(&args.out, buf)?;
    m.finish(&(&args.dispersion, args.restarts, args.seed), Some(args.seed), &[&args.out])
}

fn run(cli: &Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError(format!("threads: {e}")))?;
    }
    match &cli.command {
        Command::Mie(a) => cmd_mie(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Benchmark(a) => cmd_benchmark(a),
        Command::Render(a) => cmd_render(a),
        Command::Invert(a) => cmd_invert(a),
        Command::EvalPhase(a) => cmd_eval_phase(a),
        Command::Repro(a) => cmd_repro(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
