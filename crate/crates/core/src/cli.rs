//! `reid` command-line entry point.
//!
//! Every subcommand takes its randomness from `--seed`. Child seeds:
//!
//! * `eval`: query selection uses `seed`, distance-pair sampling `seed + 1`.
//! * `crosseval`: every cell uses `seed`.
//! * `train`: `--seed` overrides the config file's `seed`.
//! * `synth`: the split generator uses `seed`.
//!
//! Output files are written only after all computation succeeds; the exit
//! status is nonzero iff an error was reported.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::error::{ReidError, Result};
use crate::evaluator::{self, CrossConditionMatrix, EvalReport, DEFAULT_K};
use crate::model::EmbeddingSet;
use crate::preprocess::{self, BinaryMask, PixelBox, RgbImage, TransformConfig};
use crate::store;
use crate::synthetic::{self, SyntheticConfig};
use crate::trainer::{self, LinearHead, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "reid", version, about = "Metric-learning re-identification toolkit")]
pub struct Cli {
    /// Seed for every random choice made by the subcommand.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Crop instances with their masks and letterbox them onto square canvases.
    Preprocess {
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        masks: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// `key = value` file: target, pad_value, crop_pad, mean, std.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Per-channel mean/std over a directory of canvases.
    Stats {
        #[arg(long)]
        canvases: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a projection head on frozen embeddings.
    Train {
        /// Training store name (`<name>.meta.jsonl` + `<name>.f32`).
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        val: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output head name (`<name>.json` + `<name>.f32`).
        #[arg(long)]
        out: PathBuf,
        /// History CSV path.
        #[arg(long)]
        history: PathBuf,
    },
    /// Single-pool query/gallery evaluation.
    Eval {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        head: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_K)]
        k: usize,
        /// Report JSON path.
        #[arg(long)]
        out: PathBuf,
        /// Distance samples CSV (`pair_type,distance`).
        #[arg(long)]
        distances: Option<PathBuf>,
        /// KDE curves CSV (`x,density_pos,density_neg`).
        #[arg(long)]
        kde: Option<PathBuf>,
        #[arg(long, default_value_t = 20_000)]
        max_pairs: usize,
    },
    /// All 16 query x gallery condition cells.
    Crosseval {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        head: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_K)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Merge evaluation reports into one comparison CSV.
    Report {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write synthetic train/val/test stores.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Preset::Separable)]
        preset: Preset,
        #[arg(long, default_value_t = 50)]
        train_ids: usize,
        #[arg(long, default_value_t = 20)]
        val_ids: usize,
        #[arg(long, default_value_t = 50)]
        test_ids: usize,
        #[arg(long, default_value_t = 20)]
        instances: usize,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Preset {
    Separable,
    Overlapping,
    Conditions,
}

pub fn main() -> i32 {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed.unwrap_or(0);
    match cli.command {
        Command::Preprocess {
            images,
            masks,
            out,
            config,
        } => cmd_preprocess(&images, &masks, &out, config.as_deref()),
        Command::Stats { canvases, out } => cmd_stats(&canvases, &out),
        Command::Train {
            train,
            val,
            config,
            out,
            history,
        } => cmd_train(&train, &val, config.as_deref(), cli.seed, &out, &history),
        Command::Eval {
            store,
            head,
            k,
            out,
            distances,
            kde,
            max_pairs,
        } => cmd_eval(&EvalArgs {
            store,
            head,
            seed,
            k,
            out,
            distances,
            kde,
            max_pairs,
        }),
        Command::Crosseval { store, head, k, out } => cmd_crosseval(&store, head.as_deref(), seed, k, &out),
        Command::Report { reports, out } => cmd_report(&reports, &out),
        Command::Synth {
            out,
            preset,
            train_ids,
            val_ids,
            test_ids,
            instances,
        } => cmd_synth(&out, preset, seed, train_ids, val_ids, test_ids, instances),
    }
}

fn require_dir(path: &Path) -> Result<()> {
    if !path.is_dir() {
        return Err(ReidError::Other(format!("{}: not a directory", path.display())));
    }
    Ok(())
}

fn require_store(name: &Path) -> Result<()> {
    let (meta, blob) = store::store_paths(name);
    for p in [meta, blob] {
        if !p.is_file() {
            return Err(ReidError::Other(format!("{}: no such file", p.display())));
        }
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| ReidError::io(path, e))
}

fn png_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| ReidError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    Ok(files)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessConfig {
    pub transform: TransformConfig,
    pub crop_pad: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            transform: TransformConfig::default(),
            crop_pad: 2,
        }
    }
}

impl PreprocessConfig {
    pub fn parse(text: &str) -> Result<Self> {
        fn triple(v: &str) -> std::result::Result<[f64; 3], String> {
            let parts: Vec<f64> = v
                .split(',')
                .map(|p| p.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| format!("invalid list {v:?}"))?;
            parts
                .try_into()
                .map_err(|_| format!("expected 3 comma-separated values, got {v:?}"))
        }
        let mut cfg = Self::default();
        let mut errors = Vec::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                errors.push(format!("line {}: expected `key = value`: {raw}", no + 1));
                continue;
            };
            let value = value.trim();
            let res: std::result::Result<(), String> = match key.trim() {
                "target" => value.parse().map(|v| cfg.transform.target = v).map_err(|_| "invalid value".into()),
                "pad_value" => value.parse().map(|v| cfg.transform.pad_value = v).map_err(|_| "invalid value".into()),
                "crop_pad" => value.parse().map(|v| cfg.crop_pad = v).map_err(|_| "invalid value".into()),
                "mean" => triple(value).map(|v| cfg.transform.mean = v),
                "std" => triple(value).map(|v| cfg.transform.std = v),
                other => Err(format!("unknown key {other:?}")),
            };
            if let Err(msg) = res {
                errors.push(format!("line {}: {msg}: {raw}", no + 1));
            }
        }
        if !errors.is_empty() {
            return Err(ReidError::ConfigParse(errors));
        }
        cfg.transform.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Serialize)]
struct ManifestLine {
    source: String,
    mask: String,
    canvas: String,
    crop: PixelBox,
    content: PixelBox,
}

fn find_mask(masks: &Path, stem: &str) -> Option<PathBuf> {
    ["png", "json"]
        .iter()
        .map(|ext| masks.join(format!("{stem}.{ext}")))
        .find(|p| p.is_file())
}

fn preprocess_one(image_path: &Path, mask_path: &Path, out: &Path, cfg: &PreprocessConfig) -> Result<ManifestLine> {
    let img = RgbImage::load_png(image_path)?;
    let mask = if mask_path.extension().is_some_and(|e| e == "json") {
        BinaryMask::load_polygon_json(mask_path)?
    } else {
        BinaryMask::load_png(mask_path)?
    };
    let crop_box = preprocess::crop_box(&mask, cfg.crop_pad)?;
    let crop = preprocess::crop_instance(&img, &mask, cfg.crop_pad)?;
    let content = preprocess::letterbox_geometry(crop.height(), crop.width(), cfg.transform.target);
    let canvas = preprocess::resize_pad_square(&crop, &cfg.transform)?;
    let name = image_path.file_name().expect("listed files have names");
    let canvas_path = out.join(name);
    canvas.save_png(&canvas_path)?;
    Ok(ManifestLine {
        source: image_path.display().to_string(),
        mask: mask_path.display().to_string(),
        canvas: canvas_path.display().to_string(),
        crop: crop_box,
        content,
    })
}

pub fn cmd_preprocess(images: &Path, masks: &Path, out: &Path, config: Option<&Path>) -> Result<()> {
    require_dir(images)?;
    require_dir(masks)?;
    let cfg = match config {
        Some(p) => PreprocessConfig::parse(&fs::read_to_string(p).map_err(|e| ReidError::io(p, e))?)?,
        None => PreprocessConfig::default(),
    };
    let files = png_files(images)?;
    if files.is_empty() {
        return Err(ReidError::Other(format!("{}: no PNG images", images.display())));
    }
    fs::create_dir_all(out).map_err(|e| ReidError::io(out, e))?;

    let mut manifest = String::new();
    let mut failures = 0;
    for f in &files {
        let stem = f.file_stem().unwrap_or_default().to_string_lossy();
        let result = match find_mask(masks, &stem) {
            Some(m) => preprocess_one(f, &m, out, &cfg),
            None => Err(ReidError::Other("missing mask".into())),
        };
        match result {
            Ok(line) => {
                manifest.push_str(&serde_json::to_string(&line).expect("manifest serializes"));
                manifest.push('\n');
            }
            Err(e) => {
                eprintln!("error: {}: {e}", f.display());
                failures += 1;
            }
        }
    }
    write_text(&out.join("manifest.jsonl"), &manifest)?;
    if failures > 0 {
        return Err(ReidError::Other(format!("{failures} of {} images failed", files.len())));
    }
    Ok(())
}

pub fn cmd_stats(canvases: &Path, out: &Path) -> Result<()> {
    require_dir(canvases)?;
    let files = png_files(canvases)?;
    let images = files
        .iter()
        .map(|f| RgbImage::load_png(f))
        .collect::<Result<Vec<_>>>()?;
    let stats = preprocess::compute_stats(&images)?;
    write_text(out, &serde_json::to_string_pretty(&stats).expect("stats serialize"))
}

pub fn cmd_train(
    train: &Path,
    val: &Path,
    config: Option<&Path>,
    seed: Option<u64>,
    out: &Path,
    history: &Path,
) -> Result<()> {
    require_store(train)?;
    require_store(val)?;
    let mut cfg = match config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let train_set = store::load(train)?;
    let val_set = store::load(val)?;
    let (head, hist) = trainer::train(&train_set, &val_set, &cfg)?;
    trainer::save_head(&head, out)?;
    write_text(history, &hist.to_csv())
}

fn load_projected(store_name: &Path, head: Option<&Path>) -> Result<EmbeddingSet> {
    require_store(store_name)?;
    let set = store::load(store_name)?;
    match head {
        Some(h) => {
            let head: LinearHead = trainer::load_head(h)?;
            head.embed_set(&set)
        }
        None => Ok(set),
    }
}

#[derive(Debug, Clone)]
pub struct EvalArgs {
    pub store: PathBuf,
    pub head: Option<PathBuf>,
    pub seed: u64,
    pub k: usize,
    pub out: PathBuf,
    pub distances: Option<PathBuf>,
    pub kde: Option<PathBuf>,
    pub max_pairs: usize,
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    if args.k == 0 {
        return Err(ReidError::InvalidConfig("k must be positive".into()));
    }
    let set = load_projected(&args.store, args.head.as_deref())?;
    let report = evaluator::evaluate(&set, args.seed, args.k)?;
    let dist = if args.distances.is_some() || args.kde.is_some() {
        Some(evaluator::distance_distributions(
            &set,
            args.seed.wrapping_add(1),
            args.max_pairs,
            args.kde.is_some(),
        )?)
    } else {
        None
    };
    write_text(&args.out, &report.to_json())?;
    if let (Some(path), Some(d)) = (&args.distances, &dist) {
        write_text(path, &d.to_csv())?;
    }
    if let (Some(path), Some(d)) = (&args.kde, &dist) {
        match d.kde_csv() {
            Some(csv) => write_text(path, &csv)?,
            None => return Err(ReidError::Other("KDE undefined: a distance sample has zero spread".into())),
        }
    }
    Ok(())
}

pub fn cmd_crosseval(store_name: &Path, head: Option<&Path>, seed: u64, k: usize, out: &Path) -> Result<()> {
    let set = load_projected(store_name, head)?;
    let matrix: CrossConditionMatrix = evaluator::cross_condition_eval(&set, &evaluator::full_grid(), seed, k)?;
    #[derive(Serialize)]
    struct ErrorRow {
        query_condition: String,
        intra: usize,
        inter: usize,
    }
    #[derive(Serialize)]
    struct Output<'a> {
        #[serde(flatten)]
        matrix: &'a CrossConditionMatrix,
        errors_by_query_condition: Vec<ErrorRow>,
    }
    let errors = matrix
        .errors_by_query_condition()
        .into_iter()
        .map(|(query_condition, intra, inter)| ErrorRow {
            query_condition,
            intra,
            inter,
        })
        .collect();
    let output = Output {
        matrix: &matrix,
        errors_by_query_condition: errors,
    };
    write_text(out, &serde_json::to_string_pretty(&output).expect("matrix serializes"))
}

/// One CSV row per report file, named by file stem and sorted by name.
pub fn cmd_report(reports: &[PathBuf], out: &Path) -> Result<()> {
    let mut rows: Vec<(String, EvalReport)> = Vec::with_capacity(reports.len());
    for p in reports {
        let text = fs::read_to_string(p).map_err(|e| ReidError::io(p, e))?;
        let report: EvalReport = serde_json::from_str(&text)
            .map_err(|e| ReidError::Other(format!("{}: not an evaluation report: {e}", p.display())))?;
        let name = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        rows.push((name, report));
    }
    if let Some((first, rest)) = rows.split_first() {
        if let Some((name, r)) = rest.iter().find(|(_, r)| r.k != first.1.k) {
            return Err(ReidError::Other(format!(
                "conflicting k: {} has k={}, {} has k={}",
                first.0, first.1.k, name, r.k
            )));
        }
    }
    rows.sort_by(|a, b| a.0.cmp(&b.0));
    let mut csv = String::from("name,scenario,k,num_queries,r1,map_at_k\n");
    for (name, r) in &rows {
        csv.push_str(&format!(
            "{name},{},{},{},{:.4},{:.4}\n",
            r.scenario, r.k, r.num_queries, r.r1, r.map_at_k
        ));
    }
    write_text(out, &csv)
}

pub fn cmd_synth(
    out: &Path,
    preset: Preset,
    seed: u64,
    train_ids: usize,
    val_ids: usize,
    test_ids: usize,
    instances: usize,
) -> Result<()> {
    let cfg = match preset {
        Preset::Separable => SyntheticConfig::separable(),
        Preset::Overlapping => SyntheticConfig::overlapping(),
        Preset::Conditions => SyntheticConfig::with_conditions(),
    };
    let splits = synthetic::make_splits(cfg, seed, train_ids, val_ids, test_ids, instances)?;
    fs::create_dir_all(out).map_err(|e| ReidError::io(out, e))?;
    store::save(&splits.train, out.join("train"))?;
    store::save(&splits.val, out.join("val"))?;
    store::save(&splits.test, out.join("test"))
}
