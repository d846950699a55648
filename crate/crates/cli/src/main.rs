//! Command-line front end: dataset synthesis and acquisition, patch
//! extraction audits, training, evaluation, and the sweep experiments.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use zonetrain::datapipe::{build_dataset, frames_for_ids, split_frames, ExtractionMode};
use zonetrain::evalkit::{
    evaluate, parse_curve, repeat_experiment, sweep_offset_experiment, sweep_zone_center,
    write_curve, write_table, zone_width_experiment, ExperimentPlan, SweepCurve,
};
use zonetrain::geometry::{
    axial_line_starts, default_zones, depth_cm_of_line, FrameGeometry, UltrasoundFrame, ZoneName,
};
use zonetrain::ingest::{
    fetch_dataset, import_adapter, read_checkpoint, read_container, sha256_of_file,
    write_checkpoint, write_container, LayoutDescriptor, SampleType,
};
use zonetrain::model::{init_model, NetworkConfig};
use zonetrain::synthphantom::{default_class_profiles, default_diffraction, generate_dataset};
use zonetrain::trainer::{train, Strategy, StrategyConfig};
use zonetrain::{seeds, Error, Result};

use config::{DataSource, RunConfig};

#[derive(Parser)]
#[command(name = "zonetrain", version, about = "Depth-zone ultrasound patch classification")]
struct Cli {
    /// Force sequential execution; results are identical to parallel runs.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct ConfigArgs {
    /// Run configuration file (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root random seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Training images per class (overrides the config).
    #[arg(long)]
    n_train: Option<usize>,
    /// Repetition count (overrides the config).
    #[arg(long)]
    reps: Option<usize>,
    /// Training strategy: regular, zone, or depth_aware (overrides the config).
    #[arg(long)]
    strategy: Option<String>,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(n) = self.n_train {
            cfg.n_train_images = n;
        }
        if let Some(r) = self.reps {
            cfg.n_repetitions = r;
        }
        if let Some(s) = &self.strategy {
            cfg.strategy = match s.as_str() {
                "regular" => Strategy::Regular,
                "zone" => Strategy::Zone,
                "depth_aware" => Strategy::DepthAware,
                other => {
                    return Err(Error::InvalidConfig(format!(
                        "unknown strategy {other}; use regular, zone, or depth_aware"
                    )))
                }
            };
        }
        if let Some(o) = &self.out {
            cfg.output_dir = Some(o.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic frame container.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 30)]
        frames_per_class: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Geometry scale: desk or full.
        #[arg(long, default_value = "desk")]
        profile: String,
    },
    /// Download a dataset archive into the local cache.
    Fetch {
        #[arg(long)]
        url: String,
        /// Cache directory; falls back to ZONETRAIN_CACHE, then ./cache.
        #[arg(long)]
        cache: Option<PathBuf>,
    },
    /// Convert raw frame dumps into a container using a layout descriptor.
    Import {
        /// Layout descriptor (TOML) with dimensions and a [[files]] list.
        #[arg(long)]
        layout: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Report the patch grid: line starts, zone centers, patch counts.
    Extract {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train one strategy; writes checkpoints, histories, and a manifest.
    Train {
        /// Validate, log the resolved schedule, and write the manifest
        /// without training.
        #[arg(long)]
        dry_run: bool,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Evaluate a checkpoint: confusion matrix and accuracy.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Test zone: pre_focal, on_focus, post_focal, or all.
        #[arg(long, default_value = "all")]
        zone: String,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Full strategy-by-zone accuracy grid over repetitions.
    Table {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Accuracy vs testing-zone offset from the training depth.
    SweepOffset {
        #[arg(long, default_value_t = -0.8)]
        min: f64,
        #[arg(long, default_value_t = 0.8)]
        max: f64,
        #[arg(long, default_value_t = 0.2)]
        step: f64,
        /// Training zone center in cm; defaults to the focus depth.
        #[arg(long)]
        center: Option<f64>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Accuracy of zone models trained and tested across depths.
    SweepCenter {
        /// Comma-separated centers in cm; defaults to the grid line depths.
        #[arg(long)]
        centers: Option<String>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Accuracy vs zone width in axial lines.
    Width {
        /// Comma-separated widths; defaults to one, two, and three thirds
        /// of the grid.
        #[arg(long)]
        widths: Option<String>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Pretty-print a stored table or curve file.
    Report {
        #[arg(long)]
        input: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints help/version on stdout with a zero-ish intent
            let kind = e.kind();
            let _ = e.print();
            return if kind == clap::error::ErrorKind::DisplayHelp
                || kind == clap::error::ErrorKind::DisplayVersion
            {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            };
        }
    };
    if cli.sequential {
        zonetrain::par::force_sequential(true);
    }
    match run(cli.command, cli.sequential) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", serde_json::json!({ "error": e.to_string() }));
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 1 = usage or configuration, 2 = data, 3 = compute.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidConfig(_) | Error::UnknownSize(_) | Error::InvalidZone(_) => 1,
        Error::Io(_)
        | Error::Parse(_)
        | Error::BadMagic { .. }
        | Error::VersionUnsupported(_)
        | Error::TruncatedPayload(_)
        | Error::NetworkError { .. }
        | Error::DigestMismatch { .. }
        | Error::StorageError(_)
        | Error::LayoutMismatch { .. }
        | Error::EmptyDataset(_)
        | Error::InsufficientFrames { .. } => 2,
        _ => 3,
    }
}

fn run(command: Command, sequential: bool) -> Result<()> {
    match command {
        Command::Synth { out, frames_per_class, seed, profile } => {
            let geometry = match profile.as_str() {
                "desk" => zonetrain::synthphantom::small_geometry().0,
                "full" => FrameGeometry::default(),
                other => {
                    return Err(Error::InvalidConfig(format!(
                        "unknown profile {other}; use desk or full"
                    )))
                }
            };
            let frames = generate_dataset(
                frames_per_class,
                &default_class_profiles(),
                &default_diffraction(),
                &geometry,
                seed,
            )?;
            write_container(&frames, &out, SampleType::F32)?;
            println!("wrote {} frames ({} per class) to {}", frames.len(), frames_per_class, out.display());
            Ok(())
        }
        Command::Fetch { url, cache } => {
            let cache = cache
                .or_else(|| std::env::var_os("ZONETRAIN_CACHE").map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from("cache"));
            let manifest = fetch_dataset(&url, &cache)?;
            for f in &manifest.files {
                println!("{}  {}  {} bytes", f.sha256, f.name, f.size);
            }
            Ok(())
        }
        Command::Import { layout, out } => {
            let text = std::fs::read_to_string(&layout)?;
            let desc: ImportSpec =
                toml::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", layout.display())))?;
            let files: Vec<(PathBuf, usize)> =
                desc.files.iter().map(|f| (f.path.clone(), f.label)).collect();
            let frames = import_adapter(&files, &desc.layout)?;
            write_container(&frames, &out, desc.layout.sample_type)?;
            println!("imported {} frames to {}", frames.len(), out.display());
            Ok(())
        }
        Command::Extract { cfg } => {
            let cfg = cfg.resolve()?;
            let geometry = cfg.resolved_geometry();
            let grid = cfg.resolved_grid();
            let starts = axial_line_starts(&grid, &geometry)?;
            let zones = default_zones(&grid, &geometry)?;
            let per_zone = (grid.n_axial_lines / 3) * grid.n_lateral_lines;
            println!("axial line starts (px): {starts:?}");
            for (i, _) in starts.iter().enumerate() {
                let d = depth_cm_of_line(&grid, &geometry, i)?;
                println!("line {i}: center depth {d:.4} cm");
            }
            for z in &zones {
                println!("zone {}: center {:.4} cm, lines at {:?}", z.name, z.center_depth_cm, z.axial_starts_px);
            }
            println!(
                "{} regular / {} per zone",
                grid.n_axial_lines * grid.n_lateral_lines,
                per_zone
            );
            Ok(())
        }
        Command::Train { dry_run, cfg } => {
            let cfg = cfg.resolve()?;
            cmd_train(&cfg, sequential, dry_run)
        }
        Command::Eval { checkpoint, zone, cfg } => {
            let cfg = cfg.resolve()?;
            cmd_eval(&cfg, &checkpoint, &zone)
        }
        Command::Table { cfg } => {
            let cfg = cfg.resolve()?;
            let plan = build_plan(&cfg)?;
            let result =
                repeat_experiment(&plan, &[Strategy::Zone, Strategy::Regular, Strategy::DepthAware])?;
            let dir = prepare_output(&cfg, sequential)?;
            let path = dir.join("table.tsv");
            write_table(&result, &path)?;
            print_table_grid(&result);
            println!("wrote {}", path.display());
            Ok(())
        }
        Command::SweepOffset { min, max, step, center, cfg } => {
            let cfg = cfg.resolve()?;
            let plan = build_plan(&cfg)?;
            let center = center.unwrap_or(plan.geometry.focus_depth_cm);
            let mut offsets = Vec::new();
            let mut x = min;
            while x <= max + 1e-9 {
                offsets.push((x * 1e6).round() / 1e6);
                x += step;
            }
            let curve = sweep_offset_experiment(&plan, center, &offsets)?;
            finish_curve(&cfg, &curve, "sweep_offset.tsv", sequential)
        }
        Command::SweepCenter { centers, cfg } => {
            let cfg = cfg.resolve()?;
            let plan = build_plan(&cfg)?;
            let centers = match centers {
                Some(list) => parse_f64_list(&list)?,
                None => (0..plan.grid.n_axial_lines)
                    .map(|i| depth_cm_of_line(&plan.grid, &plan.geometry, i))
                    .collect::<Result<Vec<_>>>()?,
            };
            let curve = sweep_zone_center(&plan, &centers)?;
            finish_curve(&cfg, &curve, "sweep_center.tsv", sequential)
        }
        Command::Width { widths, cfg } => {
            let cfg = cfg.resolve()?;
            let plan = build_plan(&cfg)?;
            let per = plan.grid.n_axial_lines / 3;
            let widths = match widths {
                Some(list) => parse_f64_list(&list)?.into_iter().map(|v| v as usize).collect(),
                None => vec![per, 2 * per, 3 * per],
            };
            let curve = zone_width_experiment(&plan, &widths)?;
            finish_curve(&cfg, &curve, "zone_width.tsv", sequential)
        }
        Command::Report { input } => cmd_report(&input),
    }
}

#[derive(serde::Deserialize)]
struct ImportSpec {
    #[serde(flatten)]
    layout: LayoutDescriptor,
    files: Vec<ImportFile>,
}

#[derive(serde::Deserialize)]
struct ImportFile {
    path: PathBuf,
    label: usize,
}

fn parse_f64_list(list: &str) -> Result<Vec<f64>> {
    list.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidConfig(format!("bad numeric list entry {s}")))
        })
        .collect()
}

/// Loads frames per the config's data block; returns the frames and a
/// digest identifying the dataset.
fn load_frames(cfg: &RunConfig) -> Result<(Vec<UltrasoundFrame>, String)> {
    match cfg.data.source {
        DataSource::Container => {
            let path = cfg.data.container.as_ref().unwrap();
            let frames = read_container(path)?;
            Ok((frames, sha256_of_file(path)?))
        }
        DataSource::Synthetic => {
            let per_class = cfg.data.frames_per_class.unwrap_or(3 * cfg.n_train_images);
            let geometry = cfg.resolved_geometry();
            let frames = generate_dataset(
                per_class,
                &default_class_profiles(),
                &default_diffraction(),
                &geometry,
                cfg.seed,
            )?;
            let params = serde_json::json!({
                "per_class": per_class,
                "geometry": geometry,
                "seed": cfg.seed,
            });
            Ok((frames, digest_of(&params.to_string())))
        }
    }
}

fn digest_of(s: &str) -> String {
    use sha2::Digest;
    format!("{:x}", sha2::Sha256::digest(s.as_bytes()))
}

fn build_plan(cfg: &RunConfig) -> Result<ExperimentPlan> {
    let (frames, _) = load_frames(cfg)?;
    Ok(ExperimentPlan {
        frames,
        geometry: cfg.resolved_geometry(),
        grid: cfg.resolved_grid(),
        net_config: nets_single_channel(cfg),
        norm: cfg.resolved_norm(),
        hp: cfg.resolved_hyperparams()?,
        n_train_images: cfg.n_train_images,
        n_repetitions: cfg.n_repetitions,
        base_seed: cfg.seed,
    })
}

/// The experiment plan always carries the single-channel config; the
/// depth-aware row widens it internally.
fn nets_single_channel(cfg: &RunConfig) -> NetworkConfig {
    let mut net = cfg.resolved_net_config();
    net.input_channels = 1;
    net
}

/// Writes the run manifest and returns the output directory.
fn prepare_output(cfg: &RunConfig, sequential: bool) -> Result<PathBuf> {
    let dir = cfg.output_dir();
    std::fs::create_dir_all(&dir)?;
    let (_, digest) = load_frames(cfg)?;
    let manifest = serde_json::json!({
        "config": cfg,
        "resolved": {
            "geometry": cfg.resolved_geometry(),
            "grid": cfg.resolved_grid(),
            "net_config": cfg.resolved_net_config(),
            "hyperparams": cfg.resolved_hyperparams()?,
            "normalization": cfg.resolved_norm(),
        },
        "seed": cfg.seed,
        "dataset_digest": digest,
        "version": env!("CARGO_PKG_VERSION"),
        "sequential": sequential,
    });
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Parse(e.to_string()))?;
    std::fs::write(dir.join("run_manifest.json"), text)?;
    Ok(dir)
}

fn cmd_train(cfg: &RunConfig, sequential: bool, dry_run: bool) -> Result<()> {
    let geometry = cfg.resolved_geometry();
    let grid = cfg.resolved_grid();
    let norm = cfg.resolved_norm();
    let hp = cfg.resolved_hyperparams()?;
    println!("epochs={} lr={:e}", hp.epochs, hp.learning_rate);
    if dry_run {
        let dir = prepare_output(cfg, sequential)?;
        println!("dry run; wrote manifest to {}", dir.display());
        return Ok(());
    }
    let (frames, _) = load_frames(cfg)?;

    let mut ids_per_class = std::collections::BTreeMap::new();
    for f in &frames {
        if let Some(label) = f.label {
            ids_per_class.entry(label).or_insert_with(Vec::new).push(f.frame_id);
        }
    }
    let rep_seed = seeds::derive(cfg.seed, "rep", 0);
    let split = split_frames(&ids_per_class, cfg.n_train_images, rep_seed)?;
    let cut = |ids: &std::collections::BTreeMap<usize, Vec<u64>>,
               mode: &ExtractionMode,
               depth: bool|
     -> Result<_> {
        let fs: Vec<UltrasoundFrame> =
            frames_for_ids(&frames, ids).into_iter().cloned().collect();
        build_dataset(&fs, &grid, mode, &norm, depth)
    };

    let net_config = cfg.resolved_net_config();
    let depth = cfg.strategy == Strategy::DepthAware;
    let datasets = match cfg.strategy {
        Strategy::Zone => {
            let zones = default_zones(&grid, &geometry)?;
            zones
                .iter()
                .map(|z| {
                    let mode = ExtractionMode::Zone(z.clone());
                    Ok((
                        z.name.to_string(),
                        cut(&split.train_ids, &mode, false)?,
                        cut(&split.val_ids, &mode, false)?,
                    ))
                })
                .collect::<Result<Vec<_>>>()?
        }
        Strategy::Regular | Strategy::DepthAware => vec![(
            "all".to_string(),
            cut(&split.train_ids, &ExtractionMode::Regular, depth)?,
            cut(&split.val_ids, &ExtractionMode::Regular, depth)?,
        )],
    };

    let strategy_cfg = StrategyConfig { strategy: cfg.strategy, net_config: net_config.clone(), datasets };
    let bundle = train(&strategy_cfg, &hp, rep_seed)?;
    let dir = prepare_output(cfg, sequential)?;
    for (name, model) in &bundle.models {
        let meta = serde_json::json!({
            "net_config": net_config,
            "strategy": cfg.strategy,
            "dataset": name,
            "seed": cfg.seed,
            "hyperparams": hp,
        });
        let tensors = model.named_params();
        write_checkpoint(&dir.join(format!("{name}.ztck")), &meta, &tensors)?;
        let history = serde_json::to_string_pretty(&bundle.histories[name])
            .map_err(|e| Error::Parse(e.to_string()))?;
        std::fs::write(dir.join(format!("{name}.history.json")), history)?;
        let last = bundle.histories[name].last().unwrap();
        println!(
            "{name}: final train loss {:.4}, val accuracy {:.4}",
            last.train_loss, last.val_accuracy
        );
    }
    println!("wrote checkpoints to {}", dir.display());
    Ok(())
}

fn cmd_eval(cfg: &RunConfig, checkpoint: &Path, zone: &str) -> Result<()> {
    let (meta, tensors) = read_checkpoint(checkpoint)?;
    let net_config: NetworkConfig = serde_json::from_value(meta["net_config"].clone())
        .map_err(|e| Error::Parse(format!("checkpoint metadata: {e}")))?;
    let mut model = init_model(&net_config, 0)?;
    model.load_named_params(&tensors)?;

    let (frames, _) = load_frames(cfg)?;
    let geometry = cfg.resolved_geometry();
    let grid = cfg.resolved_grid();
    let mut ids_per_class = std::collections::BTreeMap::new();
    for f in &frames {
        if let Some(label) = f.label {
            ids_per_class.entry(label).or_insert_with(Vec::new).push(f.frame_id);
        }
    }
    let rep_seed = seeds::derive(cfg.seed, "rep", 0);
    let split = split_frames(&ids_per_class, cfg.n_train_images, rep_seed)?;
    let test_frames: Vec<UltrasoundFrame> =
        frames_for_ids(&frames, &split.test_ids).into_iter().cloned().collect();

    let mode = if zone == "all" {
        ExtractionMode::Regular
    } else {
        let name: ZoneName = zone.parse()?;
        let zones = default_zones(&grid, &geometry)?;
        let spec = zones
            .iter()
            .find(|z| z.name == name)
            .cloned()
            .ok_or_else(|| Error::InvalidZone(format!("no default zone named {zone}")))?;
        ExtractionMode::Zone(spec)
    };
    let depth = net_config.input_channels == 2;
    let set = build_dataset(&test_frames, &grid, &mode, &cfg.resolved_norm(), depth)?;
    let cm = evaluate(&mut model, &set)?;
    println!("confusion matrix (rows = true class):");
    for row in &cm.counts {
        println!("  {row:?}");
    }
    println!("accuracy {:.4} over {} patches", cm.accuracy(), cm.n_samples());
    Ok(())
}

fn print_table_grid(result: &zonetrain::evalkit::ExperimentResult) {
    let zones = ["pre_focal", "on_focus", "post_focal"];
    println!("{:<12} {:>20} {:>20} {:>20}", "train \\ test", zones[0], zones[1], zones[2]);
    for row in ["pre_focal", "on_focus", "post_focal", "regular", "depth_aware"] {
        let mut line = format!("{row:<12}");
        for zone in zones {
            match result.cell(row, zone) {
                Some(s) => line.push_str(&format!(" {:>12.2} ± {:>4.2}", s.mean * 100.0, s.std * 100.0)),
                None => line.push_str(&format!(" {:>19}", "-")),
            }
        }
        println!("{line}");
    }
}

fn finish_curve(cfg: &RunConfig, curve: &SweepCurve, file: &str, sequential: bool) -> Result<()> {
    let dir = prepare_output(cfg, sequential)?;
    let path = dir.join(file);
    write_curve(curve, &path)?;
    println!("{:>12} {:>10} {:>8}", curve.x_label, curve.y_label, "std");
    for ((x, y), e) in curve.x.iter().zip(&curve.y).zip(&curve.yerr) {
        println!("{x:>12.3} {y:>10.4} {e:>8.4}");
    }
    for o in &curve.omitted {
        println!("{o:>12.3} {:>10}", "omitted");
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_report(input: &Path) -> Result<()> {
    let text = std::fs::read_to_string(input)?;
    let header = text.lines().next().unwrap_or_default();
    if header.starts_with("# strategy") {
        println!("{:<12} {:<12} {:>8} {:>8} {:>6}", "strategy", "test_zone", "mean", "std", "reps");
        for line in text.lines().skip(1) {
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() >= 5 {
                println!("{:<12} {:<12} {:>8} {:>8} {:>6}", f[0], f[1], f[2], f[3], f[4]);
            }
        }
        Ok(())
    } else {
        let curve = parse_curve(input)?;
        println!("{:>12} {:>10} {:>8}", curve.x_label, curve.y_label, "std");
        for ((x, y), e) in curve.x.iter().zip(&curve.y).zip(&curve.yerr) {
            println!("{x:>12.3} {y:>10.4} {e:>8.4}");
        }
        Ok(())
    }
}
