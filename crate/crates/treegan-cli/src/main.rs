mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use config::{Precision, RunConfig};
use treegan::data::{
    normalize_unit_sphere, read_pcb, write_pcb, write_ply, Dataset, PointCloud, ShapeKind,
};
use treegan::error::{Error, Result};
use treegan::metrics::{
    coverage, extract_stats, fpd, jsd_grid, mmd, read_features_csv, read_fpd_stats,
    train_feature_extractor, write_fpd_stats, FeatureExtractor, GaussianStats, MetricReport,
    SetDistance,
};
use treegan::scalar::{Dtype, Scalar};
use treegan::semantics::{extract_part, interpolate, PartSelection};
use treegan::tensor::Tensor;
use treegan::training::{Trainer, TELEMETRY_HEADER};

#[derive(Parser)]
#[command(
    name = "treegan",
    about = "Train, sample, and evaluate a tree-structured point-cloud GAN",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on synthetic shapes or a directory of PCB files
    Train(TrainArgs),
    /// Sample clouds from a checkpoint
    Generate(GenerateArgs),
    /// Compare a generated set against a reference set
    Evaluate(EvaluateArgs),
    /// Walk the latent space between two seeds
    Interpolate(InterpolateArgs),
    /// Export ancestor-selected parts as colored clouds
    Parts(PartsArgs),
    /// Train the feature extractor or compute cached Gaussian statistics
    FpdStats(FpdStatsArgs),
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// KEY=VALUE config file; flags override its entries
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra KEY=VALUE overrides (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Numeric precision: f32 or f64
    #[arg(long)]
    precision: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
}

impl CommonArgs {
    fn build(&self) -> Result<RunConfig> {
        let mut rc = RunConfig::default();
        if let Some(path) = &self.config {
            rc.apply_file(path)?;
        }
        for pair in &self.sets {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| Error::config(format!("--set wants KEY=VALUE, got '{pair}'")))?;
            rc.set(k.trim(), v.trim())?;
        }
        if let Some(p) = &self.precision {
            rc.set("precision", p)?;
        }
        if let Some(s) = self.seed {
            rc.set("seed", &s.to_string())?;
        }
        Ok(rc)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Dataset: synth:kind[,kind...] or a directory of <class>.pcb files
    #[arg(long)]
    data: Option<String>,
    #[arg(long)]
    points: Option<usize>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    degrees: Option<String>,
    /// Resume from an existing checkpoint instead of a fresh initialization
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    count: Option<usize>,
    /// ply (one file per cloud) or pcb (one container)
    #[arg(long, default_value = "ply")]
    format: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Reference set: synth:..., a directory, or a .pcb file
    #[arg(long)]
    reference: String,
    /// Generated set: a directory or .pcb file
    #[arg(long)]
    generated: Option<String>,
    /// Generate the comparison set from this checkpoint instead
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Comma list from jsd, mmd-cd, mmd-emd, cov-cd, cov-emd, fpd
    #[arg(long)]
    metrics: Option<String>,
    /// Trained extractor (TGN1) used when fpd is requested
    #[arg(long)]
    extractor: Option<PathBuf>,
    /// Cached reference statistics (FPDS); skips feature extraction
    #[arg(long)]
    fpd_stats_ref: Option<PathBuf>,
    /// Cached generated-set statistics (FPDS)
    #[arg(long)]
    fpd_stats_gen: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InterpolateArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    seed_a: u64,
    #[arg(long)]
    seed_b: u64,
    /// Comma list of interpolation coefficients in [0,1]
    #[arg(long)]
    alphas: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PartsArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Ancestor selection layer:index[,index...]
    #[arg(long)]
    select: String,
    /// Comma list of latent seeds, one colored cloud per seed
    #[arg(long, default_value = "0")]
    seeds: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FpdStatsArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Train an extractor on this set (synth:... or dir) and save it
    #[arg(long)]
    train_extractor: Option<String>,
    /// Where to save the trained extractor
    #[arg(long)]
    extractor_out: Option<PathBuf>,
    /// Clouds to compute statistics for (synth:..., dir, or .pcb)
    #[arg(long)]
    clouds: Option<String>,
    /// Extractor to run over --clouds
    #[arg(long)]
    extractor: Option<PathBuf>,
    /// Externally computed per-cloud features (headerless CSV)
    #[arg(long)]
    features: Option<PathBuf>,
    /// Output FPDS file for the statistics modes
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Generate(args) => cmd_generate(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Interpolate(args) => cmd_interpolate(args),
        Command::Parts(args) => cmd_parts(args),
        Command::FpdStats(args) => cmd_fpd_stats(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_)
        | Error::Contract(_)
        | Error::ShapeMismatch { .. }
        | Error::OutOfRange { .. } => 2,
        Error::NonFinite(_) => 4,
        Error::Io(_) | Error::Format(_) | Error::Parse { .. } => 3,
    }
}

/// Create the output directory and drop the effective-config echo into it.
fn prepare_out_dir(out: &Path, rc: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("config.txt"), rc.dump())?;
    Ok(())
}

fn parse_kinds(spec: &str) -> Result<Vec<ShapeKind>> {
    spec.split(',').map(|k| ShapeKind::parse(k.trim())).collect()
}

/// Load a dataset from a synth: spec or a directory of per-class PCB files.
fn load_dataset<T: Scalar>(spec: &str, rc: &RunConfig) -> Result<Dataset<T>> {
    if let Some(kinds) = spec.strip_prefix("synth:") {
        let kinds = parse_kinds(kinds)?;
        return Dataset::synthetic(
            &kinds,
            rc.clouds_per_class,
            rc.effective_points(),
            rc.noise_sigma,
            rc.seed,
        );
    }
    let path = Path::new(spec);
    if path.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "pcb"))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Error::config(format!("no .pcb files in {spec}")));
        }
        let mut clouds = Vec::new();
        let mut classes = Vec::new();
        for (ci, file) in files.iter().enumerate() {
            classes.push(
                file.file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| ci.to_string()),
            );
            for mut cloud in read_pcb::<T>(file)? {
                cloud.class = Some(ci as u16);
                clouds.push(cloud);
            }
        }
        return Dataset::new(clouds, classes);
    }
    if path.is_file() {
        let clouds = read_pcb::<T>(path)?;
        return Dataset::new(clouds, vec!["0".into()]);
    }
    Err(Error::config(format!("dataset path '{spec}' does not exist")))
}

/// Load a plain set of clouds for evaluation.
fn load_set<T: Scalar>(spec: &str, rc: &RunConfig) -> Result<Vec<Tensor<T>>> {
    Ok(load_dataset::<T>(spec, rc)?
        .clouds
        .into_iter()
        .map(|c| c.points)
        .collect())
}

fn draw_latents<T: Scalar>(dim: usize, count: usize, seed: u64) -> Tensor<T> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    Tensor::new(
        vec![count, dim],
        (0..count * dim)
            .map(|_| T::sample_normal(&mut rng))
            .collect(),
    )
    .unwrap()
}

fn generate_from_checkpoint<T: Scalar>(
    checkpoint: &Path,
    count: usize,
    seed: u64,
) -> Result<Vec<Tensor<T>>> {
    let trainer = Trainer::<T>::load(checkpoint)?;
    let dim = trainer.generator.config.latent_dim();
    let latents = draw_latents::<T>(dim, count, seed);
    let mut clouds = Vec::with_capacity(count);
    // Chunked so activation memory stays flat for large counts.
    let mut offset = 0usize;
    while offset < count {
        let take = (count - offset).min(16);
        let chunk = Tensor::new(
            vec![take, dim],
            latents.data()[offset * dim..(offset + take) * dim].to_vec(),
        )?;
        clouds.extend(trainer.generator.generate_batch(&chunk)?);
        offset += take;
    }
    Ok(clouds)
}

fn for_checkpoint_precision<R>(
    path: &Path,
    f32_case: impl FnOnce() -> Result<R>,
    f64_case: impl FnOnce() -> Result<R>,
) -> Result<R> {
    match treegan::checkpoint::peek_dtype(path)? {
        Dtype::F32 => f32_case(),
        Dtype::F64 => f64_case(),
    }
}

fn normalize_set<T: Scalar>(clouds: &[Tensor<T>]) -> Result<Vec<Tensor<T>>> {
    clouds
        .iter()
        .map(|c| {
            let pc = PointCloud::new(c.clone())?;
            Ok(normalize_unit_sphere(&pc).0.points)
        })
        .collect()
}

// ── train ───────────────────────────────────────────────────────────

fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut rc = args.common.build()?;
    if let Some(v) = &args.data {
        rc.set("data", v)?;
    }
    if let Some(v) = args.points {
        rc.set("points", &v.to_string())?;
    }
    if let Some(v) = args.steps {
        rc.set("steps", &v.to_string())?;
    }
    if let Some(v) = args.batch {
        rc.set("batch", &v.to_string())?;
    }
    if let Some(v) = &args.degrees {
        rc.set("degrees", v)?;
    }
    match rc.precision {
        Precision::F32 => train_impl::<f32>(&rc, &args),
        Precision::F64 => train_impl::<f64>(&rc, &args),
    }
}

fn train_impl<T: Scalar>(rc: &RunConfig, args: &TrainArgs) -> Result<()> {
    use std::io::Write;

    // Validate the whole configuration before any compute or output.
    let gen_config = rc.generator_config()?;
    let critic_config = rc.critic_config()?;
    let train_config = rc.train_config()?;
    prepare_out_dir(&args.out, rc)?;

    let dataset = load_dataset::<T>(&rc.data, rc)?;
    if dataset.points_per_cloud() != gen_config.point_count() {
        return Err(Error::config(format!(
            "dataset clouds have {} points but the generator produces {}",
            dataset.points_per_cloud(),
            gen_config.point_count()
        )));
    }
    if dataset.len() < train_config.batch_size {
        return Err(Error::config(format!(
            "dataset of {} clouds is smaller than batch size {}",
            dataset.len(),
            train_config.batch_size
        )));
    }

    let mut trainer = match &args.resume {
        Some(path) => Trainer::<T>::load(path)?,
        None => Trainer::new(gen_config, critic_config, train_config)?,
    };

    let samples_dir = args.out.join("samples");
    std::fs::create_dir_all(&samples_dir)?;
    let telemetry_path = args.out.join("telemetry.csv");
    let mut telemetry = std::io::BufWriter::new(std::fs::File::create(&telemetry_path)?);
    writeln!(telemetry, "{TELEMETRY_HEADER}")?;

    let total = rc.steps;
    let chunk = if rc.sample_every > 0 { rc.sample_every } else { total.max(1) };
    let probe_z = draw_latents::<T>(trainer.generator.config.latent_dim(), 1, rc.seed ^ 0xa5a5);

    let mut done = 0u64;
    loop {
        let take = chunk.min(total - done);
        trainer.run(&dataset, take, None, |rec| {
            let _ = writeln!(telemetry, "{}", rec.csv_line());
        })?;
        done += take;
        let cloud = trainer.generator.generate_batch(&probe_z)?.pop().unwrap();
        write_ply(
            &samples_dir.join(format!("step_{:06}.ply", trainer.gen_steps_done)),
            &PointCloud::new(cloud)?,
        )?;
        if done >= total {
            break;
        }
    }
    telemetry.flush()?;
    drop(telemetry);
    trainer.save(&args.out.join("checkpoint.tgn"))?;
    println!(
        "trained {} generator steps; checkpoint and telemetry in {}",
        trainer.gen_steps_done,
        args.out.display()
    );
    Ok(())
}

// ── generate ────────────────────────────────────────────────────────

fn cmd_generate(args: GenerateArgs) -> Result<()> {
    let mut rc = args.common.build()?;
    if let Some(v) = args.count {
        rc.set("count", &v.to_string())?;
    }
    for_checkpoint_precision(
        &args.checkpoint,
        || generate_impl::<f32>(&rc, &args),
        || generate_impl::<f64>(&rc, &args),
    )
}

fn generate_impl<T: Scalar>(rc: &RunConfig, args: &GenerateArgs) -> Result<()> {
    prepare_out_dir(&args.out, rc)?;
    let clouds = generate_from_checkpoint::<T>(&args.checkpoint, rc.count, rc.seed)?;
    match args.format.as_str() {
        "ply" => {
            for (i, cloud) in clouds.into_iter().enumerate() {
                write_ply(
                    &args.out.join(format!("gen_{i:04}.ply")),
                    &PointCloud::new(cloud)?,
                )?;
            }
        }
        "pcb" => {
            let clouds: Vec<PointCloud<T>> = clouds
                .into_iter()
                .map(PointCloud::new)
                .collect::<Result<_>>()?;
            write_pcb(&args.out.join("generated.pcb"), &clouds)?;
        }
        other => return Err(Error::config(format!("unknown format '{other}'"))),
    }
    println!("wrote {} clouds to {}", rc.count, args.out.display());
    Ok(())
}

// ── evaluate ────────────────────────────────────────────────────────

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let mut rc = args.common.build()?;
    if let Some(v) = &args.metrics {
        rc.set("metrics", v)?;
    }
    if args.generated.is_none() && args.checkpoint.is_none() {
        return Err(Error::config(
            "evaluate needs --generated or --checkpoint".to_string(),
        ));
    }
    // Precision follows the checkpoint when one is used; sets alone follow
    // the configured precision.
    match (&args.checkpoint, rc.precision) {
        (Some(ckpt), _) => {
            let ckpt = ckpt.clone();
            for_checkpoint_precision(
                &ckpt,
                || evaluate_impl::<f32>(&rc, &args),
                || evaluate_impl::<f64>(&rc, &args),
            )
        }
        (None, Precision::F32) => evaluate_impl::<f32>(&rc, &args),
        (None, Precision::F64) => evaluate_impl::<f64>(&rc, &args),
    }
}

/// Lazily loaded evaluation sets: a pure-FPD run over cached statistics
/// reads no clouds at all.
struct EvalSets<'a, T> {
    rc: &'a RunConfig,
    args: &'a EvaluateArgs,
    sets: Option<(Vec<Tensor<T>>, Vec<Tensor<T>>)>,
}

impl<'a, T: Scalar> EvalSets<'a, T> {
    fn get(&mut self) -> Result<&(Vec<Tensor<T>>, Vec<Tensor<T>>)> {
        if self.sets.is_none() {
            let reference = load_set::<T>(&self.args.reference, self.rc)?;
            let generated = match (&self.args.generated, &self.args.checkpoint) {
                (Some(spec), _) => load_set::<T>(spec, self.rc)?,
                (None, Some(ckpt)) => {
                    generate_from_checkpoint::<T>(ckpt, self.rc.count, self.rc.seed)?
                }
                (None, None) => unreachable!("validated in cmd_evaluate"),
            };
            self.sets = Some((reference, generated));
        }
        Ok(self.sets.as_ref().unwrap())
    }
}

fn evaluate_impl<T: Scalar>(rc: &RunConfig, args: &EvaluateArgs) -> Result<()> {
    prepare_out_dir(&args.out, rc)?;
    let gen_id = args
        .generated
        .clone()
        .or_else(|| args.checkpoint.as_ref().map(|p| p.display().to_string()))
        .unwrap();
    let mut report = MetricReport::new(&args.reference, &gen_id);
    report.echo("jsd_resolution", rc.jsd_resolution.to_string());
    report.echo("count", rc.count.to_string());
    report.echo("seed", rc.seed.to_string());

    let mut sets: EvalSets<T> = EvalSets { rc, args, sets: None };

    for metric in rc.metrics.clone() {
        match metric.as_str() {
            "jsd" => {
                let (r, g) = sets.get()?;
                let v = jsd_grid(&normalize_set(r)?, &normalize_set(g)?, rc.jsd_resolution)?;
                report.push("jsd", v);
            }
            "mmd-cd" => {
                let (r, g) = sets.get()?;
                report.push("mmd-cd", mmd(r, g, SetDistance::Chamfer)?);
            }
            "mmd-emd" => {
                let (r, g) = sets.get()?;
                report.push("mmd-emd", mmd(r, g, SetDistance::Emd)?);
            }
            "cov-cd" => {
                let (r, g) = sets.get()?;
                report.push("cov-cd", coverage(r, g, SetDistance::Chamfer)?);
            }
            "cov-emd" => {
                let (r, g) = sets.get()?;
                report.push("cov-emd", coverage(r, g, SetDistance::Emd)?);
            }
            "fpd" => {
                let ref_stats = stats_for_side(args, &mut sets, Side::Reference)?;
                let gen_stats = stats_for_side(args, &mut sets, Side::Generated)?;
                report.push("fpd", fpd(&ref_stats, &gen_stats)?);
            }
            other => return Err(Error::config(format!("unknown metric '{other}'"))),
        }
    }

    std::fs::write(args.out.join("report.csv"), report.to_csv())?;
    print!("{report}");
    Ok(())
}

enum Side {
    Reference,
    Generated,
}

fn stats_for_side<T: Scalar>(
    args: &EvaluateArgs,
    sets: &mut EvalSets<T>,
    side: Side,
) -> Result<GaussianStats> {
    let cached = match side {
        Side::Reference => &args.fpd_stats_ref,
        Side::Generated => &args.fpd_stats_gen,
    };
    if let Some(path) = cached {
        return read_fpd_stats(path);
    }
    let extractor_path = args.extractor.as_ref().ok_or_else(|| {
        Error::config("fpd needs --extractor (or cached --fpd-stats-* files)".to_string())
    })?;
    let extractor = FeatureExtractor::<T>::load(extractor_path)?;
    let (r, g) = sets.get()?;
    let clouds = match side {
        Side::Reference => r,
        Side::Generated => g,
    };
    let stats = extract_stats(&normalize_set(clouds)?, &extractor)?;
    let cache_name = match side {
        Side::Reference => "reference.fpds",
        Side::Generated => "generated.fpds",
    };
    write_fpd_stats(&args.out.join(cache_name), &stats)?;
    Ok(stats)
}

// ── interpolate ─────────────────────────────────────────────────────

fn cmd_interpolate(args: InterpolateArgs) -> Result<()> {
    let mut rc = args.common.build()?;
    if let Some(v) = &args.alphas {
        rc.set("alphas", v)?;
    }
    for_checkpoint_precision(
        &args.checkpoint,
        || interpolate_impl::<f32>(&rc, &args),
        || interpolate_impl::<f64>(&rc, &args),
    )
}

fn interpolate_impl<T: Scalar>(rc: &RunConfig, args: &InterpolateArgs) -> Result<()> {
    prepare_out_dir(&args.out, rc)?;
    let trainer = Trainer::<T>::load(&args.checkpoint)?;
    let dim = trainer.generator.config.latent_dim();
    let z1 = draw_latents::<T>(dim, 1, args.seed_a).reshaped(vec![dim])?;
    let z2 = draw_latents::<T>(dim, 1, args.seed_b).reshaped(vec![dim])?;
    let clouds = interpolate(&trainer.generator, &z1, &z2, &rc.alphas)?;
    for (i, (cloud, alpha)) in clouds.into_iter().zip(&rc.alphas).enumerate() {
        write_ply(
            &args.out.join(format!("alpha_{i:02}_{alpha}.ply")),
            &PointCloud::new(cloud)?,
        )?;
    }
    println!(
        "wrote {} interpolants to {}",
        rc.alphas.len(),
        args.out.display()
    );
    Ok(())
}

// ── parts ───────────────────────────────────────────────────────────

fn cmd_parts(args: PartsArgs) -> Result<()> {
    let rc = args.common.build()?;
    for_checkpoint_precision(
        &args.checkpoint,
        || parts_impl::<f32>(&rc, &args),
        || parts_impl::<f64>(&rc, &args),
    )
}

fn parts_impl<T: Scalar>(rc: &RunConfig, args: &PartsArgs) -> Result<()> {
    let selection = PartSelection::parse(&args.select)?;
    let seeds: Vec<u64> = args
        .seeds
        .split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::config(format!("bad seed '{s}'")))
        })
        .collect::<Result<_>>()?;
    prepare_out_dir(&args.out, rc)?;
    let trainer = Trainer::<T>::load(&args.checkpoint)?;
    let dim = trainer.generator.config.latent_dim();
    for seed in seeds {
        let z = draw_latents::<T>(dim, 1, seed).reshaped(vec![dim])?;
        let (cloud, tree) = trainer.generator.generate(&z)?;
        let part = extract_part(&cloud, &tree, &selection)?;
        write_ply(&args.out.join(format!("part_seed{seed}.ply")), &part)?;
    }
    println!("wrote part clouds to {}", args.out.display());
    Ok(())
}

// ── fpd-stats ───────────────────────────────────────────────────────

fn cmd_fpd_stats(args: FpdStatsArgs) -> Result<()> {
    let rc = args.common.build()?;
    match rc.precision {
        Precision::F32 => fpd_stats_impl::<f32>(&rc, &args),
        Precision::F64 => fpd_stats_impl::<f64>(&rc, &args),
    }
}

fn fpd_stats_impl<T: Scalar>(rc: &RunConfig, args: &FpdStatsArgs) -> Result<()> {
    if let Some(spec) = &args.train_extractor {
        let out = args.extractor_out.as_ref().ok_or_else(|| {
            Error::config("--train-extractor needs --extractor-out".to_string())
        })?;
        let dataset = load_dataset::<T>(spec, rc)?;
        let config = rc.extractor_config(dataset.classes.len())?;
        let (extractor, accuracy) =
            train_feature_extractor(&dataset, config, rc.extractor_epochs, rc.seed)?;
        extractor.save(out)?;
        println!(
            "extractor held-out accuracy {accuracy:.4}; saved to {}",
            out.display()
        );
        return Ok(());
    }

    let out = args
        .out
        .as_ref()
        .ok_or_else(|| Error::config("fpd-stats needs --out for the FPDS file".to_string()))?;

    let stats = if let Some(csv) = &args.features {
        GaussianStats::fit(&read_features_csv(csv)?)?
    } else {
        let spec = args.clouds.as_ref().ok_or_else(|| {
            Error::config("fpd-stats needs --clouds or --features".to_string())
        })?;
        let extractor_path = args
            .extractor
            .as_ref()
            .ok_or_else(|| Error::config("--clouds needs --extractor".to_string()))?;
        let extractor = FeatureExtractor::<T>::load(extractor_path)?;
        let clouds = load_set::<T>(spec, rc)?;
        extract_stats(&normalize_set(&clouds)?, &extractor)?
    };
    write_fpd_stats(out, &stats)?;
    println!(
        "wrote statistics ({} samples, dim {}) to {}",
        stats.sample_count,
        stats.dim(),
        out.display()
    );
    Ok(())
}
