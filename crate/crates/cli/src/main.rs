use std::fs;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thiserror::Error;

use octopus_core::config::{ConfigError, Mode, PipelineConfig, Roi};
use octopus_core::io::{self, IoError};
use octopus_core::phantom::{generate, random_spec, PhantomSpec, RandomPhantomOptions};
use octopus_core::pipeline::{run_pipeline, PipelineError, ReportMeta, ANALYSIS_DIR};
use octopus_core::registration::{register_auto, register_landmark, thickness_signal, RegistrationError};
use octopus_core::stent::corpus::{train_models, CorpusSpec};
use octopus_core::stent::StentError;
use octopus_service::state::Analysis;
use octopus_service::AppState;

#[derive(Debug, Parser)]
#[command(name = "octopus", version, about = "Intravascular OCT pullback analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the analysis pipeline on a pullback container.
    Analyze {
        dir: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// baseline, followup or stent
        #[arg(long, value_parser = parse_mode)]
        mode: Option<Mode>,
        /// Inclusive frame range, `start:end`.
        #[arg(long, value_parser = parse_roi)]
        roi: Option<Roi>,
    },
    /// Summarize the analysis stored in a container.
    Report {
        dir: PathBuf,
        /// Print report.json instead of the text summary.
        #[arg(long)]
        json: bool,
    },
    /// Write a synthetic pullback container with its ground truth.
    Phantom {
        /// Phantom description (JSON). Without it a random phantom is drawn from the seed.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        lesions: Option<usize>,
        #[arg(long)]
        struts: Option<usize>,
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Find the frame offset between two analyzed pullbacks.
    Register {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long = "float")]
        floating: PathBuf,
        /// Corresponding frames, `r1,r2:f1,f2`.
        #[arg(long, value_parser = parse_landmarks)]
        landmarks: Option<([usize; 2], [usize; 2])>,
        /// Defaults to `<float>/analysis/reg.json`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve pullbacks under a directory over HTTP.
    Serve {
        #[arg(long, default_value = ".")]
        root: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train the strut detector and coverage classifier on a phantom corpus.
    Train {
        /// Corpus description (JSON); the built-in corpus when omitted.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    Mode::parse(s).ok_or_else(|| format!("unknown mode {s:?} (baseline, followup, stent)"))
}

fn parse_roi(s: &str) -> Result<Roi, String> {
    Roi::parse(s).ok_or_else(|| format!("expected start:end with start <= end, got {s:?}"))
}

fn parse_landmarks(s: &str) -> Result<([usize; 2], [usize; 2]), String> {
    let pair = |p: &str| -> Option<[usize; 2]> {
        let (a, b) = p.split_once(',')?;
        Some([a.trim().parse().ok()?, b.trim().parse().ok()?])
    };
    s.split_once(':')
        .and_then(|(r, f)| Some((pair(r)?, pair(f)?)))
        .ok_or_else(|| format!("expected r1,r2:f1,f2, got {s:?}"))
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Format(String),
    #[error("{0}")]
    Pipeline(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Other(_) => 1,
            CliError::Format(_) => 2,
            CliError::Pipeline(_) => 3,
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        if e.is_format() {
            CliError::Format(e.to_string())
        } else {
            CliError::Other(e.to_string())
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { .. } => CliError::Other(e.to_string()),
            _ => CliError::Format(e.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Io(io) => io.into(),
            PipelineError::Config(c) => c.into(),
            other => CliError::Pipeline(other.to_string()),
        }
    }
}

impl From<StentError> for CliError {
    fn from(e: StentError) -> Self {
        CliError::Pipeline(e.to_string())
    }
}

impl From<RegistrationError> for CliError {
    fn from(e: RegistrationError) -> Self {
        CliError::Pipeline(e.to_string())
    }
}

fn other(e: impl std::fmt::Display) -> CliError {
    CliError::Other(e.to_string())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let bytes = fs::read(path).map_err(|e| other(format!("{}: {e}", path.display())))?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::Format(format!("{}: {e}", path.display())))
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig, CliError> {
    Ok(match path {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    })
}

fn analyze(dir: &Path, config: Option<&Path>, mode: Option<Mode>, roi: Option<Roi>) -> Result<(), CliError> {
    let mut cfg = load_config(config)?;
    if let Some(m) = mode {
        cfg.mode = m;
    }
    if roi.is_some() {
        cfg.roi = roi;
    }
    cfg.validate()?;
    let out = run_pipeline(dir, &cfg, &mut |e| {
        if e.finished {
            log::info!("{:?} done ({:.0}%)", e.stage, e.fraction * 100.0);
        }
    })?;
    for w in &out.warnings {
        eprintln!("warning: {w}");
    }
    let total: f64 = out.timings.iter().map(|t| t.seconds).sum();
    println!(
        "{}: {} frames analyzed, {} gated, {} lesions, {:.1} s -> {}",
        out.pullback_id,
        out.frames.len(),
        out.gate.gated.iter().filter(|&&g| g).count(),
        out.lesions.len(),
        total,
        dir.join(ANALYSIS_DIR).display()
    );
    Ok(())
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.digits$}"))
}

fn report(dir: &Path, json: bool) -> Result<(), CliError> {
    let out = dir.join(ANALYSIS_DIR);
    let path = out.join("report.json");
    if json {
        let text = fs::read_to_string(&path).map_err(|e| other(format!("{}: {e}", path.display())))?;
        print!("{text}");
        return Ok(());
    }
    let meta: ReportMeta = read_json(&path)?;
    let quant_path = out.join("quant.csv");
    let rows = io::parse_quant_csv(&fs::read(&quant_path).map_err(|e| other(format!("{}: {e}", quant_path.display())))?)?;
    println!(
        "pullback {} ({:?}), frames {}..={}, segmenter {} {}",
        meta.pullback_id, meta.mode, meta.roi.start, meta.roi.end, meta.segmenter.name, meta.segmenter.version
    );
    let areas: Vec<(usize, f64)> = rows.iter().filter_map(|q| Some((q.frame, q.lumen_area_mm2?))).collect();
    if let Some(&(f_min, a_min)) = areas.iter().min_by(|a, b| a.1.total_cmp(&b.1)) {
        let mean = areas.iter().map(|a| a.1).sum::<f64>() / areas.len() as f64;
        println!("lumen area: mean {mean:.2} mm2, minimum {a_min:.2} mm2 at frame {f_min}");
    }
    println!(
        "calcified frames: {} of {}; failed lumen frames: {}",
        meta.gated_frames,
        rows.len(),
        meta.failed_frames.len()
    );
    let lesions = fs::read_to_string(out.join("lesions.csv")).unwrap_or_default();
    for (i, line) in lesions.lines().skip(1).enumerate() {
        let c: Vec<&str> = line.split(',').collect();
        if c.len() == io::LESION_HEADER.len() {
            println!(
                "lesion {}: frames {}..={}, {} mm, arc {} deg, thickness {} mm, score {}",
                i + 1,
                c[1],
                c[2],
                fmt_opt(c[3].parse().ok(), 2),
                fmt_opt(c[4].parse().ok(), 0),
                fmt_opt(c[5].parse().ok(), 2),
                c[7]
            );
        }
    }
    if let Some(s) = &meta.stent {
        println!("stent: {}", serde_json::to_string(s).expect("serializes"));
    }
    for w in &meta.warnings {
        println!("warning: {w}");
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn phantom(
    spec: Option<&Path>,
    seed: u64,
    out: &Path,
    frames: Option<usize>,
    lesions: Option<usize>,
    struts: Option<usize>,
    noise: Option<f64>,
) -> Result<(), CliError> {
    let spec: PhantomSpec = match spec {
        Some(p) => read_json(p)?,
        None => {
            let mut opts = RandomPhantomOptions::default();
            opts.n_frames = frames.unwrap_or(opts.n_frames);
            opts.lesions = lesions.unwrap_or(opts.lesions);
            opts.struts_per_frame = struts.unwrap_or(opts.struts_per_frame);
            opts.noise = noise.unwrap_or(opts.noise);
            random_spec(seed, &opts)
        }
    };
    let (pb, truth) = generate(&spec, seed).map_err(|e| CliError::Format(e.to_string()))?;
    io::save_phantom(out, &pb, &truth)?;
    println!(
        "{}: {} frames of {}x{} -> {}",
        pb.id,
        pb.n_frames(),
        pb.n_alines(),
        pb.n_r(),
        out.display()
    );
    Ok(())
}

fn signal_of(dir: &Path) -> Result<(octopus_core::registration::ThicknessSignal, usize), CliError> {
    let meta = io::read_meta(dir)?;
    let analysis = Analysis::load(dir, &meta)?
        .ok_or_else(|| other(format!("{} has not been analyzed", dir.display())))?;
    Ok((
        thickness_signal(&analysis.labels, &meta.calibration(), &meta.id),
        meta.n_frames,
    ))
}

fn register(
    reference: &Path,
    floating: &Path,
    landmarks: Option<([usize; 2], [usize; 2])>,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let result = match landmarks {
        Some((r, f)) => {
            let (nr, nf) = (io::read_meta(reference)?.n_frames, io::read_meta(floating)?.n_frames);
            register_landmark(r, f, nr, nf)?
        }
        None => {
            let (r, _) = signal_of(reference)?;
            let (f, _) = signal_of(floating)?;
            register_auto(&r, &f, &PipelineConfig::default().registration)?
        }
    };
    for w in &result.warnings {
        eprintln!("warning: {w}");
    }
    let mut text = serde_json::to_string_pretty(&result).expect("serializes");
    text.push('\n');
    let path = out.map_or_else(|| floating.join(ANALYSIS_DIR).join("reg.json"), Path::to_path_buf);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(other)?;
    }
    fs::write(&path, &text).map_err(|e| other(format!("{}: {e}", path.display())))?;
    print!("{text}");
    Ok(())
}

fn serve(root: &Path, host: IpAddr, port: u16, config: Option<&Path>) -> Result<(), CliError> {
    let cfg = load_config(config)?;
    cfg.validate()?;
    let state = AppState::open(root, cfg)?;
    let runtime = tokio::runtime::Runtime::new().map_err(other)?;
    runtime
        .block_on(octopus_service::serve(SocketAddr::new(host, port), state))
        .map_err(other)
}

fn train(corpus: Option<&Path>, out: &Path) -> Result<(), CliError> {
    let spec: CorpusSpec = match corpus {
        Some(p) => read_json(p)?,
        None => CorpusSpec::default(),
    };
    let models = train_models(&spec, &Default::default())?;
    fs::create_dir_all(out).map_err(other)?;
    let det = out.join("detector.octm");
    let cov = out.join("coverage.octm");
    models.detector.save(&det)?;
    models.coverage.save(&cov)?;
    println!("corpus {}", spec.hash());
    println!("{}\n{}", det.display(), cov.display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Analyze { dir, config, mode, roi } => analyze(&dir, config.as_deref(), mode, roi),
        Command::Report { dir, json } => report(&dir, json),
        Command::Phantom {
            spec,
            seed,
            out,
            frames,
            lesions,
            struts,
            noise,
        } => phantom(spec.as_deref(), seed, &out, frames, lesions, struts, noise),
        Command::Register {
            reference,
            floating,
            landmarks,
            out,
        } => register(&reference, &floating, landmarks, out.as_deref()),
        Command::Serve {
            root,
            port,
            host,
            config,
        } => serve(&root, host, port, config.as_deref()),
        Command::Train { corpus, out } => train(corpus.as_deref(), &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
