use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gmmu_core::endmembers::{estimate_pixel_endmembers, EndmemberEmOptions};
use gmmu_core::gem::{fit_library, run_supervised, run_unsupervised, GemConfig};
use gmmu_core::io::{evaluate, write_trace, Container, EvalInputs, ModelDocument};
use gmmu_core::synth::{gen_scene, preset, SceneSpec};
use gmmu_core::{Error, NoiseModel, SpectralCube};

const EXIT_USAGE: u8 = 2;
const EXIT_FORMAT: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

/// Hyperspectral unmixing with Gaussian-mixture endmember distributions.
///
/// Cubes, abundances and per-pixel endmembers are stored in binary
/// containers (JSON header line followed by little-endian f64 data); models
/// are JSON documents. Set GMMU_THREADS to cap the number of worker threads.
#[derive(Parser, Debug)]
#[command(name = "gmmu", version, about)]
struct Cli {
    /// More log output (-v info, -vv debug)
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit one mixture per file of pure spectra
    FitLibrary(FitLibrary),
    /// Estimate abundances with a known endmember library
    UnmixSupervised(UnmixSupervised),
    /// Segment, fit the endmember distributions and estimate abundances
    UnmixUnsupervised(UnmixUnsupervised),
    /// Estimate the endmember spectra of every pixel
    EstimateEndmembers(EstimateEndmembers),
    /// Generate a synthetic scene with ground truth
    Synth(Synth),
    /// Score estimates against a synthetic scene
    Eval(Eval),
}

#[derive(Args, Debug)]
struct Prior {
    /// Smoothness weight
    #[arg(long, default_value_t = 5.0)]
    beta1: f64,
    /// Laplacian bandwidth (median neighbour distance if omitted)
    #[arg(long)]
    eta: Option<f64>,
    /// PCA subspace dimension
    #[arg(long, default_value_t = 10)]
    dim: usize,
    /// Relative objective change that stops the optimizer
    #[arg(long, default_value_t = 1e-5)]
    tol: f64,
    #[arg(long, default_value_t = 200)]
    max_outer: usize,
    /// Trace CSV (iteration, objective, max_delta_alpha)
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FitLibrary {
    /// Containers of pure spectra, one per endmember
    #[arg(long, required = true, num_args = 1..)]
    pure: Vec<PathBuf>,
    /// Comma-separated endmember names
    #[arg(long, value_delimiter = ',')]
    names: Vec<String>,
    #[arg(long, default_value_t = 4)]
    kmax: usize,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Subspace dimension for component-count selection
    #[arg(long, default_value_t = 10)]
    dim: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct UnmixSupervised {
    #[arg(long)]
    cube: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Sparsity weight
    #[arg(long, default_value_t = 5.0)]
    beta2: f64,
    #[command(flatten)]
    prior: Prior,
    /// Isotropic noise level; defaults to the model's noise, else 0.001
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct UnmixUnsupervised {
    #[arg(long)]
    cube: PathBuf,
    /// Number of endmembers
    #[arg(short = 'M', long = "M")]
    m: usize,
    /// Erosion radius for pure-pixel extraction
    #[arg(long, default_value_t = 5)]
    rse: usize,
    /// Sparsity weight during segmentation
    #[arg(long, default_value_t = 50.0)]
    beta2: f64,
    /// Factor applied to beta2 after segmentation
    #[arg(long, default_value_t = 0.05)]
    zeta: f64,
    #[arg(long, default_value_t = 4)]
    kmax: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    prior: Prior,
    #[arg(long, default_value_t = 0.001)]
    noise_sigma: f64,
    /// Abundance container
    #[arg(long)]
    out: PathBuf,
    /// Fitted model document
    #[arg(long)]
    model_out: PathBuf,
}

#[derive(Args, Debug)]
struct EstimateEndmembers {
    #[arg(long)]
    cube: PathBuf,
    #[arg(long)]
    abundances: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Isotropic noise level; defaults to the model's noise, else 0.001
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 100)]
    max_iter: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct Synth {
    /// Scene description (TOML)
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    spec: Option<PathBuf>,
    /// Built-in scene: supervised or quadrant
    #[arg(long)]
    preset: Option<String>,
    /// Overrides the scene seed
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct Eval {
    #[arg(long)]
    abundances: PathBuf,
    /// Per-pixel endmember container
    #[arg(long)]
    endmembers: Option<PathBuf>,
    /// Fitted model document
    #[arg(long)]
    model: Option<PathBuf>,
    /// Directory written by `synth`
    #[arg(long)]
    truth: PathBuf,
    /// Match estimated columns to the truth by the best permutation
    #[arg(long)]
    match_columns: bool,
    #[arg(long, default_value_t = 0.99)]
    pure_threshold: f64,
    /// Report path (stdout if omitted)
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Core(e) if e.is_numerical() => EXIT_NUMERICAL,
            Failure::Core(Error::InvalidArgument(_) | Error::Unsupported(_)) => EXIT_USAGE,
            Failure::Core(Error::Io(e)) if e.kind() == std::io::ErrorKind::NotFound => EXIT_USAGE,
            Failure::Core(_) => EXIT_FORMAT,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) => f.write_str(m),
            Failure::Core(e) => e.fmt(f),
        }
    }
}

type Outcome<T = ()> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(e.exit_code());
    }
    let result = match cli.command {
        Command::FitLibrary(a) => fit_library_cmd(a),
        Command::UnmixSupervised(a) => unmix_supervised(a),
        Command::UnmixUnsupervised(a) => unmix_unsupervised(a),
        Command::EstimateEndmembers(a) => estimate_endmembers(a),
        Command::Synth(a) => synth(a),
        Command::Eval(a) => eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn configure_threads() -> Outcome {
    let Ok(v) = std::env::var("GMMU_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::Usage(format!("GMMU_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Usage(format!("cannot size the thread pool: {e}")))
}

fn input(path: &Path) -> Outcome<&Path> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(Failure::Usage(format!("no such file: {}", path.display())))
    }
}

fn read_cube(path: &Path) -> Outcome<SpectralCube> {
    Ok(Container::read_file(input(path)?)?.to_cube()?)
}

fn read_model(path: &Path) -> Outcome<ModelDocument> {
    Ok(ModelDocument::read_file(input(path)?)?)
}

fn noise_for(doc: &ModelDocument, sigma: Option<f64>, bands: usize) -> Outcome<NoiseModel> {
    Ok(match (sigma, doc.noise_model()?) {
        (Some(s), _) => NoiseModel::isotropic(bands, s)?,
        (None, Some(n)) => n,
        (None, None) => NoiseModel::isotropic(bands, 0.001)?,
    })
}

fn gem_config(p: &Prior, beta2: f64) -> GemConfig {
    GemConfig {
        beta1: p.beta1,
        beta2,
        eta: p.eta,
        dim: p.dim,
        tol: p.tol,
        max_outer: p.max_outer,
        ..GemConfig::default()
    }
}

fn fit_library_cmd(a: FitLibrary) -> Outcome {
    if !a.names.is_empty() && a.names.len() != a.pure.len() {
        return Err(Failure::Usage(format!("{} names for {} files", a.names.len(), a.pure.len())));
    }
    let samples = a
        .pure
        .iter()
        .map(|p| Ok(read_cube(p)?.data().clone()))
        .collect::<Outcome<Vec<_>>>()?;
    let cfg = GemConfig {
        k_max: a.kmax,
        folds: a.folds,
        seed: a.seed,
        dim: a.dim,
        ..GemConfig::default()
    };
    let fit = fit_library(&samples, &cfg)?;
    for w in &fit.warnings {
        log::warn!("{w}");
    }
    ModelDocument::from_model(&fit.model, &a.names).write_file(&a.out)?;
    eprintln!("components per endmember: {:?}", fit.model.component_counts());
    Ok(())
}

fn unmix_supervised(a: UnmixSupervised) -> Outcome {
    let cube = read_cube(&a.cube)?;
    let doc = read_model(&a.model)?;
    let library = doc.to_model()?;
    let noise = noise_for(&doc, a.noise_sigma, cube.n_bands())?;
    let fit = run_supervised(&cube, &library, &noise, &gem_config(&a.prior, a.beta2))?;
    Container::from_abundances(&fit.abundances, cube.rows(), cube.cols())?.write_file(&a.out)?;
    if let Some(t) = &a.prior.trace {
        write_trace(t, &fit.trace)?;
    }
    report_run(fit.trace.len(), fit.converged);
    Ok(())
}

fn unmix_unsupervised(a: UnmixUnsupervised) -> Outcome {
    let cube = read_cube(&a.cube)?;
    if a.m == 0 {
        return Err(Failure::Usage("--M must be at least 1".into()));
    }
    let cfg = GemConfig {
        r_se: a.rse,
        zeta: a.zeta,
        k_max: a.kmax,
        seed: a.seed,
        noise_sigma: a.noise_sigma,
        ..gem_config(&a.prior, a.beta2)
    };
    let fit = run_unsupervised(&cube, a.m, None, &cfg)?;
    for w in &fit.warnings {
        log::warn!("{w}");
    }
    Container::from_abundances(&fit.abundances, cube.rows(), cube.cols())?.write_file(&a.out)?;
    ModelDocument::from_model(&fit.model, &[])
        .with_pca(&fit.basis)
        .with_noise(&NoiseModel::isotropic(cube.n_bands(), a.noise_sigma)?)
        .write_file(&a.model_out)?;
    if let Some(t) = &a.prior.trace {
        write_trace(t, &fit.trace)?;
    }
    eprintln!(
        "components per endmember: {:?}; pure pixels: {:?}",
        fit.model.component_counts(),
        fit.pure_pixels.sets.iter().map(Vec::len).collect::<Vec<_>>()
    );
    report_run(fit.trace.len(), fit.converged);
    Ok(())
}

fn report_run(trace_len: usize, converged: bool) {
    let iterations = trace_len.saturating_sub(1);
    if converged {
        eprintln!("converged after {iterations} iterations");
    } else {
        eprintln!("stopped after {iterations} iterations without converging");
    }
}

fn estimate_endmembers(a: EstimateEndmembers) -> Outcome {
    let cube = read_cube(&a.cube)?;
    let abundances = Container::read_file(input(&a.abundances)?)?.to_abundances()?;
    let doc = read_model(&a.model)?;
    let theta = doc.to_model()?;
    let noise = noise_for(&doc, a.noise_sigma, cube.n_bands())?;
    let opts = EndmemberEmOptions {
        tol: a.tol,
        max_iter: a.max_iter,
    };
    let tensor = estimate_pixel_endmembers(&cube, &abundances, &theta, &noise, &opts)?;
    Container::from_tensor(&tensor, cube.rows(), cube.cols())?.write_file(&a.out)?;
    if tensor.n_failed() > 0 {
        log::warn!("{} pixels failed and keep their initial spectra", tensor.n_failed());
    }
    Ok(())
}

fn synth(a: Synth) -> Outcome {
    let mut spec = match (&a.spec, &a.preset) {
        (Some(p), _) => SceneSpec::from_toml(&fs::read_to_string(input(p)?).map_err(Error::from)?)?,
        (None, Some(name)) => preset(name, a.seed.unwrap_or(0))?,
        (None, None) => return Err(Failure::Usage("give --spec or --preset".into())),
    };
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    let bundle = gen_scene(&spec)?;
    fs::create_dir_all(&a.out).map_err(Error::from)?;
    let (rows, cols) = (spec.rows, spec.cols);
    fs::write(a.out.join("scene.toml"), spec.to_toml()).map_err(Error::from)?;
    Container::from_cube(&bundle.cube).write_file(a.out.join("cube.gmmu"))?;
    Container::from_abundances(&bundle.abundances, rows, cols)?.write_file(a.out.join("abundances.gmmu"))?;
    Container::from_endmembers(&bundle.spectra, rows, cols)?.write_file(a.out.join("endmembers.gmmu"))?;
    let names: Vec<String> = spec.endmembers.iter().map(|e| e.name.clone()).collect();
    ModelDocument::from_model(&bundle.theta, &names)
        .with_noise(&bundle.noise)
        .write_file(a.out.join("model.json"))?;
    Ok(())
}

fn eval(a: Eval) -> Outcome {
    let est = Container::read_file(input(&a.abundances)?)?.to_abundances()?;
    let truth = Container::read_file(input(&a.truth.join("abundances.gmmu"))?)?.to_abundances()?;
    let spectra = match &a.endmembers {
        Some(p) => Some((
            Container::read_file(input(p)?)?.to_endmembers()?,
            Container::read_file(input(&a.truth.join("endmembers.gmmu"))?)?.to_endmembers()?,
        )),
        None => None,
    };
    let models = match &a.model {
        Some(p) => Some((read_model(p)?.to_model()?, read_model(&a.truth.join("model.json"))?.to_model()?)),
        None => None,
    };
    let mut inputs = EvalInputs::new(&est, &truth);
    inputs.match_columns = a.match_columns;
    inputs.pure_threshold = a.pure_threshold;
    if let Some((e, t)) = &spectra {
        inputs.spectra = Some(e);
        inputs.true_spectra = Some(t);
    }
    if let Some((e, t)) = &models {
        inputs.model = Some(e);
        inputs.true_model = Some(t);
    }
    let report = evaluate(&inputs)?;
    let text = serde_json::to_string_pretty(&report).map_err(Error::from)? + "\n";
    match &a.report {
        Some(p) => fs::write(p, text).map_err(Error::from)?,
        None => print!("{text}"),
    }
    Ok(())
}
