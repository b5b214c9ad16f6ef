use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use kgas_core::cloud::read_gaussians;
use kgas_core::fisher::{parse_matrix, FisherParams};
use kgas_core::metrics::{format_metrics, format_sig9, image_parts, S3imParams};
use kgas_core::pipeline::{run_pipeline, scene_gen, ExperimentConfig, CONFIG_HELP, MANIFEST_FILE};
use kgas_core::render::{load_camera, read_image, render, write_image_set};
use kgas_core::so3::{Mat3, RotationMatrix};
use kgas_core::uid::{detect, read_points, DetectParams, DEFAULT_K, DEFAULT_THRESHOLD_DEG};
use kgas_core::{ply, Error, Result};

/// Motion-aware Gaussian splatting kernels and the desk-scale experiment loop.
///
/// Exit status: 0 on success, 2 on invalid input, 1 on internal failure.
/// KGAS_THREADS caps the worker pool (0 or unset = one per core).
#[derive(Parser)]
#[command(name = "kgas", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthetic scenes.
    #[command(subcommand)]
    Scene(SceneCommand),
    /// Run the densification loop described by a config file.
    #[command(after_long_help = CONFIG_HELP)]
    Run {
        config: PathBuf,
        /// Override the configured output directory.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Override the configured iteration count.
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Flag surface deformation in a PLY point set.
    Detect {
        ply: PathBuf,
        #[arg(long, default_value_t = DEFAULT_K)]
        k: usize,
        /// Normal-angle threshold in degrees.
        #[arg(long, default_value_t = DEFAULT_THRESHOLD_DEG)]
        threshold: f64,
        /// Compare oriented normals instead of folding n and -n together.
        #[arg(long)]
        unfolded: bool,
        /// Write the report here instead of stdout.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Also write points with normals, flags and angles as PLY.
        #[arg(long)]
        ply_out: Option<PathBuf>,
    },
    /// Render a Gaussian cloud PLY through a camera file.
    Render {
        ply: PathBuf,
        camera: PathBuf,
        /// Output PPM; mask and depth are written beside it.
        #[arg(long, default_value = "render.ppm")]
        out: PathBuf,
    },
    /// Compare a rendered image against a reference image.
    Metrics {
        image: PathBuf,
        reference: PathBuf,
        #[command(flatten)]
        s3im: S3imArgs,
    },
    /// Matrix-Fisher operations on a 3x3 parameter matrix.
    ///
    /// MATRIX is a file or inline text: `diag(a,b,c)` or nine row-major numbers.
    #[command(subcommand)]
    Fisher(FisherCommand),
}

#[derive(Subcommand)]
enum SceneCommand {
    /// Write rig, clouds, pose, camera and reference render for a named scene.
    Gen {
        /// arm2, chain4, humanoid24 or creased_sheet
        name: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory [default: ./<name>]
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct S3imArgs {
    /// S3IM shuffle seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = S3imParams::default().patches)]
    patches: usize,
    #[arg(long, default_value_t = S3imParams::default().kernel)]
    kernel: usize,
    #[arg(long, default_value_t = S3imParams::default().stride)]
    stride: usize,
}

#[derive(Subcommand)]
enum FisherCommand {
    /// Most probable rotation, one row per line.
    Mode { matrix: String },
    /// Draw rotations; one row-major rotation per line.
    Sample {
        matrix: String,
        #[arg(long, default_value_t = 1)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Negative log-likelihood of a rotation.
    Nll {
        matrix: String,
        /// Rotation to score [default: identity]
        #[arg(long)]
        rotation: Option<String>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(2);
    }
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 1 })
        }
    }
}

fn configure_threads() -> std::result::Result<(), String> {
    let Ok(raw) = std::env::var("KGAS_THREADS") else {
        return Ok(());
    };
    let raw = raw.trim();
    if raw.is_empty() {
        return Ok(());
    }
    let n: usize = raw.parse().map_err(|_| format!("KGAS_THREADS = '{raw}' is not a thread count"))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Scene(SceneCommand::Gen { name, seed, out }) => {
            let scene = scene_gen(&name, seed)?;
            let dir = out.unwrap_or_else(|| PathBuf::from(&name));
            scene.write(&dir)?;
            println!(
                "{}: {} joints, {} initial gaussians, {} reference gaussians -> {}",
                scene.name,
                scene.rig.tree.joint_count(),
                scene.initial.len(),
                scene.reference.len(),
                dir.display()
            );
        }
        Command::Run { config, output, iterations } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(o) = output {
                cfg.output = o;
            }
            if let Some(n) = iterations {
                cfg.iterations = n;
            }
            let out = run_pipeline(&cfg)?;
            for rec in &out.manifest.iterations {
                println!(
                    "iter {}: {} gaussians, {} uid flags, {} candidates, color_loss {}",
                    rec.iteration, rec.cloud_size, rec.uid_flagged, rec.candidates, rec.metrics["color_loss"]
                );
            }
            let s = &out.manifest.summary;
            println!(
                "color_loss {} -> {} (relative reduction {})",
                s.color_loss_initial, s.color_loss_final, s.relative_reduction
            );
            println!("manifest: {}", cfg.output.join(MANIFEST_FILE).display());
        }
        Command::Detect { ply, k, threshold, unfolded, report, ply_out } => {
            let points = read_points(&ply)?;
            let params = DetectParams { folded: !unfolded, ..DetectParams::new(k, threshold.to_radians()) };
            let rep = detect(&points, params)?;
            match report {
                Some(path) => {
                    write_text(&path, &rep.to_text())?;
                    println!("{} of {} points flagged", rep.flagged.len(), points.len());
                }
                None => print!("{}", rep.to_text()),
            }
            if let Some(path) = ply_out {
                ply::write_ply(&rep.to_table(&points), &path)?;
            }
        }
        Command::Render { ply, camera, out } => {
            let gaussians = read_gaussians(&ply)?;
            let cam = load_camera(&camera)?;
            let img = render(&gaussians, &cam);
            write_image_set(&img, &out)?;
            println!("{} gaussians -> {} ({}x{})", gaussians.len(), out.display(), img.width, img.height);
        }
        Command::Metrics { image, reference, s3im } => {
            let a = read_image(&image)?;
            let b = read_image(&reference)?;
            let params = S3imParams { patches: s3im.patches, kernel: s3im.kernel, stride: s3im.stride };
            let p = image_parts(&a, &b, params, s3im.seed)?;
            let table =
                [("color_loss", p.color), ("mask_loss", p.mask), ("ssim", p.ssim), ("s3im", p.s3im), ("psnr", p.psnr)];
            print!("{}", format_metrics(&table));
        }
        Command::Fisher(cmd) => fisher(cmd)?,
    }
    Ok(())
}

fn fisher(cmd: FisherCommand) -> Result<()> {
    match cmd {
        FisherCommand::Mode { matrix } => {
            let p = FisherParams::new(read_matrix(&matrix)?)?;
            print!("{}", format_rows(p.mode().matrix()));
        }
        FisherCommand::Sample { matrix, n, seed } => {
            let p = FisherParams::new(read_matrix(&matrix)?)?;
            for r in p.sample(seed, n)? {
                let m = r.matrix();
                let row: Vec<String> =
                    (0..3).flat_map(|i| (0..3).map(move |j| (i, j))).map(|(i, j)| fixed6(m[(i, j)])).collect();
                println!("{}", row.join(" "));
            }
        }
        FisherCommand::Nll { matrix, rotation } => {
            let p = FisherParams::new(read_matrix(&matrix)?)?;
            let r = match rotation {
                Some(text) => RotationMatrix::new(read_matrix(&text)?)?,
                None => RotationMatrix::identity(),
            };
            println!("nll = {}", format_sig9(p.nll(&r)?));
        }
    }
    Ok(())
}

/// A path to a matrix file, or the matrix text itself.
fn read_matrix(arg: &str) -> Result<Mat3> {
    let path = Path::new(arg);
    if path.is_file() {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.into(), source: e })?;
        parse_matrix(&text, arg)
    } else {
        parse_matrix(arg, "<argument>")
    }
}

fn fixed6(v: f64) -> String {
    // avoid printing -0.000000
    let v = if v.abs() < 5e-7 { 0.0 } else { v };
    format!("{v:.6}")
}

fn format_rows(m: &Mat3) -> String {
    (0..3).map(|i| format!("{} {} {}\n", fixed6(m[(i, 0)]), fixed6(m[(i, 1)]), fixed6(m[(i, 2)]))).collect()
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io { path: path.into(), source: e })
}
