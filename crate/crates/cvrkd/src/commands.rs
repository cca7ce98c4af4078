use std::fs;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use cvrkd_core::data::{build_synthetic_dataset, derive_seed, render_manifest, DatasetConfig, ManifestRow, PatchSet};
use cvrkd_core::metrics::{evaluate, EvalOptions};
use cvrkd_core::model::predict;
use cvrkd_core::train::{distill_student, train_teacher, NarMode, Stage};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::io;

#[derive(Debug, Parser)]
#[command(name = "cvrkd", version, about = "Reference-guided image quality assessment with teacher-student distillation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded synthetic dataset: pristine and distorted images, manifests and a reference pool.
    GenData(GenDataArgs),
    /// Train the full-reference teacher on pixel-aligned pairs.
    TrainTeacher(TrainTeacherArgs),
    /// Train a student against a frozen teacher, with non-aligned references.
    DistillStudent(DistillArgs),
    /// Score a test manifest several times with reshuffled references and report correlations.
    Evaluate(EvaluateArgs),
    /// Score one image, optionally against a high-quality reference image.
    Score(ScoreArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Pristine images to generate.
    #[arg(long)]
    pub images: usize,
    #[arg(long = "distortions-per")]
    pub distortions_per: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Image size as HEIGHTxWIDTH.
    #[arg(long, default_value = "64x64", value_parser = parse_size)]
    pub size: (usize, usize),
    /// Pristine images held out for test.csv; defaults to a quarter.
    #[arg(long = "test-images")]
    pub test_images: Option<usize>,
    #[arg(long = "pool-images", default_value_t = 20)]
    pub pool_images: usize,
    /// Image file format: png or ppm.
    #[arg(long, default_value = "png")]
    pub format: String,
}

#[derive(Debug, Args)]
pub struct TrainTeacherArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides `epochs` from the config.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Overrides `seed` from the config.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct DistillArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Directory of high-quality reference images.
    #[arg(long)]
    pub pool: Option<PathBuf>,
    #[arg(long)]
    pub teacher: PathBuf,
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Train on the label loss only.
    #[arg(long = "no-kd")]
    pub no_kd: bool,
    /// content_variant, content_similar, aligned_fr or none.
    #[arg(long = "nar-mode")]
    pub nar_mode: Option<NarMode>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub pool: Option<PathBuf>,
    /// When given, the checkpoint must match its architecture.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub shuffles: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Reference source; defaults to the mode the checkpoint was trained with.
    #[arg(long = "nar-mode")]
    pub nar_mode: Option<NarMode>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long = "ref")]
    pub reference: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected HEIGHTxWIDTH, got `{s}`"))?;
    let h = h.trim().parse().map_err(|_| format!("bad height in `{s}`"))?;
    let w = w.trim().parse().map_err(|_| format!("bad width in `{s}`"))?;
    Ok((h, w))
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::GenData(a) => gen_data(&a),
        Command::TrainTeacher(a) => cmd_train_teacher(&a),
        Command::DistillStudent(a) => cmd_distill(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Score(a) => cmd_score(&a),
    }
}

fn warn(msg: &str) {
    eprintln!("warning: {msg}");
}

fn gen_data(a: &GenDataArgs) -> CliResult<()> {
    let ext = match a.format.as_str() {
        "png" => "png",
        "ppm" => "ppm",
        other => return Err(CliError::Usage(format!("unknown image format `{other}` (png, ppm)"))),
    };
    if a.distortions_per == 0 {
        warn("--distortions-per 0 produces no samples; only pristine and pool images are written");
    }
    let cfg = DatasetConfig {
        images: a.images,
        test_images: a.test_images.unwrap_or(a.images / 4),
        distortions_per_image: a.distortions_per,
        pool_images: a.pool_images,
        height: a.size.0,
        width: a.size.1,
        seed: a.seed,
    };
    let ds = build_synthetic_dataset(&cfg)?;
    fs::create_dir_all(&a.out).map_err(|e| CliError::io(&a.out, e))?;

    for (id, img) in &ds.pristine {
        io::save_image(&a.out.join(format!("pristine/{id}.{ext}")), img)?;
    }
    for (id, img) in ds.pool.iter() {
        io::save_image(&a.out.join(format!("pool/{id}.{ext}")), img)?;
    }
    let rows = |samples: &[cvrkd_core::data::Sample]| -> CliResult<Vec<ManifestRow>> {
        samples
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let lq = format!("distorted/{}.{ext}", s.id);
                io::save_image(&a.out.join(&lq), &s.lq)?;
                Ok(ManifestRow {
                    id: s.id.clone(),
                    lq,
                    fr: Some(format!("pristine/{}.{ext}", s.source)),
                    mos: s.mos,
                    line: i + 2,
                })
            })
            .collect()
    };
    let train = rows(&ds.train)?;
    let test = rows(&ds.test)?;
    let all: Vec<ManifestRow> = train.iter().chain(&test).cloned().collect();
    io::write_bytes(&a.out.join("manifest.csv"), render_manifest(&all).as_bytes())?;
    io::write_bytes(&a.out.join("train.csv"), render_manifest(&train).as_bytes())?;
    io::write_bytes(&a.out.join("test.csv"), render_manifest(&test).as_bytes())?;
    println!(
        "wrote {} samples ({} train, {} test), {} pristine images, {} pool images to {}",
        all.len(),
        train.len(),
        test.len(),
        ds.pristine.len(),
        ds.pool.len(),
        a.out.display()
    );
    Ok(())
}

fn overrides(epochs: Option<usize>, seed: Option<u64>) -> Vec<(&'static str, String)> {
    let mut out = Vec::new();
    if let Some(e) = epochs {
        out.push(("epochs", e.to_string()));
    }
    if let Some(s) = seed {
        out.push(("seed", s.to_string()));
    }
    out
}

fn cmd_train_teacher(a: &TrainTeacherArgs) -> CliResult<()> {
    let cfg = RunConfig::load(&a.config, &overrides(a.epochs, a.seed))?;
    let samples = io::load_samples(&a.data)?;
    let (ckpt, report) = train_teacher(&samples, &cfg.train)?;
    io::save_checkpoint(&a.out, &ckpt)?;
    let csv = io::report_path(&a.out);
    io::write_bytes(&csv, report.to_csv().as_bytes())?;
    println!(
        "teacher: {} epochs on {} samples, final label loss {:.4}; wrote {} and {}",
        ckpt.epoch,
        samples.len(),
        ckpt.final_loss,
        a.out.display(),
        csv.display()
    );
    Ok(())
}

fn cmd_distill(a: &DistillArgs) -> CliResult<()> {
    let mut cfg = RunConfig::load(&a.config, &overrides(a.epochs, a.seed))?.train;
    match a.nar_mode {
        Some(NarMode::None) => cfg = cfg.no_reference(),
        Some(mode) => cfg.nar_mode = mode,
        None => {}
    }
    if a.no_kd {
        cfg.kd_enabled = false;
    }
    let teacher = io::load_checkpoint(&a.teacher)?;
    if teacher.stage != Stage::Teacher {
        return Err(CliError::Checkpoint(format!(
            "{}: expected a teacher checkpoint, found a {} checkpoint",
            a.teacher.display(),
            teacher.stage
        )));
    }
    if !teacher.arch.same_backbone_and_encoders(&cfg.arch) {
        return Err(CliError::Checkpoint(format!(
            "{}: teacher architecture does not match the configuration",
            a.teacher.display()
        )));
    }
    let samples = io::load_samples(&a.data)?;
    let pool = match (&a.pool, cfg.nar_mode) {
        (Some(dir), NarMode::ContentVariant) => Some(io::load_pool(dir)?),
        (Some(_), mode) => {
            warn(&format!("reference mode {mode} does not use --pool; ignoring it"));
            None
        }
        (None, _) => None,
    };
    let (ckpt, report) = distill_student(&samples, pool.as_ref(), &teacher, &cfg)?;
    io::save_checkpoint(&a.out, &ckpt)?;
    let csv = io::report_path(&a.out);
    io::write_bytes(&csv, report.to_csv().as_bytes())?;
    println!(
        "student ({}, kd {}): {} epochs on {} samples, final loss {:.4}; wrote {} and {}",
        cfg.nar_mode,
        if cfg.kd_enabled { "on" } else { "off" },
        ckpt.epoch,
        samples.len(),
        ckpt.final_loss,
        a.out.display(),
        csv.display()
    );
    Ok(())
}

fn cmd_evaluate(a: &EvaluateArgs) -> CliResult<()> {
    let ckpt = io::load_checkpoint(&a.ckpt)?;
    let mut opts = EvalOptions {
        reference: a.nar_mode.unwrap_or(ckpt.nar_mode),
        ..EvalOptions::default()
    };
    if let Some(path) = &a.config {
        let cfg = RunConfig::load(path, &[])?;
        if cfg.train.arch != ckpt.arch {
            return Err(CliError::Checkpoint(format!(
                "{}: architecture differs from {}",
                a.ckpt.display(),
                path.display()
            )));
        }
        opts.shuffles = cfg.shuffles;
        opts.seed = cfg.eval_seed;
    }
    if let Some(s) = a.shuffles {
        opts.shuffles = s;
    }
    if let Some(s) = a.seed {
        opts.seed = s;
    }
    let samples = io::load_samples(&a.data)?;
    let pool = if !ckpt.arch.reference_path {
        if a.pool.is_some() {
            warn("no-reference checkpoint; ignoring --pool");
        }
        None
    } else if opts.reference == NarMode::ContentVariant {
        let dir = a
            .pool
            .as_ref()
            .ok_or_else(|| CliError::Usage("content_variant evaluation needs --pool".into()))?;
        Some(io::load_pool(dir)?)
    } else {
        None
    };
    let report = evaluate(&ckpt.arch, &ckpt.params, &samples, pool.as_ref(), &opts)?;
    io::write_bytes(&a.out, report.to_csv().as_bytes())?;
    println!("{}", report.summary_line());
    Ok(())
}

fn format_coords(coords: &[(usize, usize)]) -> String {
    coords.iter().map(|(r, c)| format!("({r},{c})")).collect::<Vec<_>>().join(" ")
}

fn cmd_score(a: &ScoreArgs) -> CliResult<()> {
    let ckpt = io::load_checkpoint(&a.ckpt)?;
    let (m, p) = (ckpt.arch.patches, ckpt.arch.patch_size);
    let image = io::load_image(&a.image)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(a.seed, 0));
    let lq = PatchSet::crop_random(&image, &a.image.display().to_string(), m, p, &mut rng)
        .map_err(|e| CliError::Data(e.to_string()))?;
    let reference = match (&a.reference, ckpt.arch.reference_path) {
        (None, true) => {
            return Err(CliError::Usage("this checkpoint scores against a reference; pass --ref".into()));
        }
        (Some(_), false) => {
            warn("no-reference checkpoint; ignoring --ref");
            None
        }
        (None, false) => None,
        (Some(path), true) => {
            let img = io::load_image(path)?;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(a.seed, 1));
            let set = PatchSet::crop_random(&img, &path.display().to_string(), m, p, &mut rng)
                .map_err(|e| CliError::Data(e.to_string()))?;
            Some(set)
        }
    };
    let trace = predict(&ckpt.arch, &ckpt.params, &lq.patches, reference.as_ref().map(|r| &r.patches))?;
    println!("score: {:.3}", trace.score.clamp(0.0, 100.0));
    println!("crops: {}", format_coords(&lq.coords));
    if let Some(r) = &reference {
        println!("ref_crops: {}", format_coords(&r.coords));
    }
    Ok(())
}

/// Parses arguments, mapping clap failures to the usage exit code.
pub fn parse_args<I, T>(args: I) -> Result<Cli, i32>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    Cli::try_parse_from(args).map_err(|e| {
        let code = if e.use_stderr() { 6 } else { 0 };
        let _ = e.print();
        code
    })
}

