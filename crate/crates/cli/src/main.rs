//! `compcond`: extraction, mixing, masking, distances, planning and batch
//! runs from the command line.
//!
//! Output is `key=value` lines on stdout; diagnostics go to stderr.
//! Exit status: 0 success, 1 failure (including any failed batch record),
//! 2 usage error.

mod config;

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use compcond::batch::{self, BatchConfig, RecordStatus};
use compcond::condition::{self, MaskShape, MaskSynthParams, MaskTarget};
use compcond::planner::{self, ExemplarMode, ExemplarTriplet, HttpClient, HttpConfig, LvlmClient, PlanConfig, StubClient};
use compcond::{colordist, colorspace, filtering, imageio, metrics, structure, ConditionWeights, Mask};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{Map, Value};

use config::{Config, UsageError};

#[derive(Debug, Parser)]
#[command(name = "compcond", version, about = "Semantic-agnostic composition conditions")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Option<Command>,
}

/// Settings shared by all subcommands; each maps to a config key.
#[derive(Debug, Args)]
struct GlobalArgs {
    /// TOML file with config keys (see --print-config).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Print the resolved configuration and exit.
    #[arg(long, global = true)]
    print_config: bool,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Fixed structure window (odd, >= 3); replaces the schedule.
    #[arg(long, global = true)]
    k: Option<usize>,
    #[arg(long, global = true)]
    k_min: Option<usize>,
    #[arg(long, global = true)]
    k_max: Option<usize>,
    #[arg(long, global = true)]
    k_step: Option<usize>,
    /// SLIC grid spacing in pixels.
    #[arg(long, global = true)]
    slic_region: Option<usize>,
    #[arg(long, global = true)]
    slic_iters: Option<usize>,
    #[arg(long, global = true)]
    compactness: Option<f64>,
    /// Color pre-blur window; 0 disables it.
    #[arg(long, global = true)]
    blur_k: Option<usize>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Planner candidate count.
    #[arg(long, global = true)]
    candidates: Option<usize>,
    #[arg(long, global = true)]
    retries: Option<usize>,
    /// `stub:<fixture.json>` or `http` (endpoint from COMPCOND_LVLM_URL).
    #[arg(long, global = true)]
    llm: Option<String>,
    #[arg(long, global = true, value_parser = ["text", "images"])]
    exemplar_mode: Option<String>,
    /// More logging on stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

impl GlobalArgs {
    fn layer(&self) -> Map<String, Value> {
        let mut m = Map::new();
        let mut put = |k: &str, v: Option<Value>| {
            if let Some(v) = v {
                m.insert(k.to_string(), v);
            }
        };
        put("seed", self.seed.map(Value::from));
        put("k", self.k.map(Value::from));
        put("k_min", self.k_min.map(Value::from));
        put("k_max", self.k_max.map(Value::from));
        put("k_step", self.k_step.map(Value::from));
        put("slic_region", self.slic_region.map(Value::from));
        put("slic_iters", self.slic_iters.map(Value::from));
        put("compactness", self.compactness.map(Value::from));
        put("blur_k", self.blur_k.map(Value::from));
        put("workers", self.workers.map(Value::from));
        put("candidates", self.candidates.map(Value::from));
        put("retries", self.retries.map(Value::from));
        put("llm", self.llm.clone().map(Value::from));
        put("exemplar_mode", self.exemplar_mode.clone().map(Value::from));
        m
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Extract both maps from an image and save a condition bundle.
    Extract {
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the spatial-structure map as a 16-bit grayscale PNG.
    Structure {
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Global-mean variant, min-max normalized to [0, 1].
        #[arg(long)]
        global: bool,
    },
    /// Write the color-distribution map as an 8-bit RGB PNG.
    Colordist {
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract every record of a JSONL manifest.
    Batch {
        manifest: PathBuf,
        /// Bundles go to <out>/<id>/.
        #[arg(long)]
        out: PathBuf,
        /// Root for relative image paths [default: the manifest's directory].
        #[arg(long)]
        input_root: Option<PathBuf>,
        /// Also write the full report as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Combine the structure plane of one bundle with the color plane of another.
    Mix {
        struct_bundle: PathBuf,
        color_bundle: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        w_struct: Option<f64>,
        #[arg(long)]
        w_color: Option<f64>,
    },
    /// Attach a mask (from a file, or synthesized with --seed) to a bundle.
    Mask {
        bundle: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// 8-bit grayscale PNG; samples >= 128 are active.
        #[arg(long, value_name = "PNG")]
        mask: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = TargetArg::Both)]
        target: TargetArg,
        #[arg(long, value_enum, default_value_t = ShapeArg::Any)]
        shape: ShapeArg,
        #[arg(long, default_value_t = MaskSynthParams::default().min_fraction)]
        min_frac: f64,
        #[arg(long, default_value_t = MaskSynthParams::default().max_fraction)]
        max_frac: f64,
        #[arg(long, default_value_t = MaskSynthParams::default().invert_probability)]
        invert_prob: f64,
        /// Also write the applied mask as a PNG.
        #[arg(long, value_name = "PNG")]
        mask_out: Option<PathBuf>,
    },
    /// Cycle-consistency distances between a bundle and an image.
    Distance { bundle: PathBuf, image: PathBuf },
    /// Pick a composition reference for a theme.
    Plan {
        #[arg(long)]
        theme: String,
        /// Index manifest (JSONL).
        #[arg(long)]
        index: PathBuf,
        /// JSON array file, or an inline comma-separated vector.
        #[arg(long, allow_hyphen_values = true)]
        theme_embedding: String,
        /// JSON array of {theme, reference, result, reference_caption, result_caption}.
        #[arg(long)]
        exemplars: Option<PathBuf>,
        /// Also write the result, reply and candidate list as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TargetArg {
    Struct,
    Color,
    Both,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ShapeArg {
    Ellipse,
    Rectangle,
    Any,
}

fn kv(key: &str, value: impl Display) {
    println!("{key}={value}");
}

fn ms(d: Duration) -> String {
    format!("{:.3}", d.as_secs_f64() * 1e3)
}

fn resolve_config(g: &GlobalArgs) -> Result<Config> {
    let mut layers = vec![config::env_layer(|k| std::env::var(k).ok())?];
    if let Some(path) = &g.config {
        layers.push(config::file_layer(path)?);
    }
    layers.push(g.layer());
    config::resolve(&layers)
}

fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// The configured fixed window, or one drawn from the schedule with the
/// same generator extraction uses.
fn structure_window(cfg: &Config) -> Result<usize> {
    let schedule = cfg.schedule()?;
    Ok(filtering::sample_k(&schedule, &mut seeded(cfg.seed)))
}

fn cmd_extract(cfg: &Config, image: &Path, out: &Path) -> Result<()> {
    let img = imageio::read_rgb(image)?;
    let (bundle, t) = condition::extract_bundle_timed(&img, &cfg.schedule()?, &cfg.slic()?, cfg.seed)?;
    condition::save_bundle(&bundle, out)?;
    let (w, h) = bundle.dimensions();
    let rec = &bundle.provenance().structure;
    let slic = bundle.color_map().params();
    kv("bundle", out.display());
    kv("width", w);
    kv("height", h);
    kv("seed", cfg.seed);
    kv("k", rec.k.unwrap_or_default());
    kv("k_applied", bundle.struct_map().k());
    kv("sigma", bundle.struct_map().sigma());
    kv("slic_region", slic.region_size);
    kv("slic_iters", slic.iterations);
    kv("compactness", slic.compactness);
    kv("blur_k", slic.blur_k.unwrap_or(0));
    kv("source_hash", &rec.source_hash);
    kv("tool_version", &rec.tool_version);
    kv("time_to_lab_ms", ms(t.to_lab));
    kv("time_structure_ms", ms(t.structure));
    kv("time_color_ms", ms(t.color));
    Ok(())
}

fn cmd_structure(cfg: &Config, image: &Path, out: &Path, global: bool) -> Result<()> {
    let k = structure_window(cfg)?;
    let lab = colorspace::srgb_to_lab(&imageio::read_rgb(image)?);
    let t = Instant::now();
    let map = if global {
        structure::saliency_global(&lab, k, None)?
    } else {
        structure::saliency_local(&lab, k, None)?
    };
    let elapsed = t.elapsed();
    let scale = condition::struct_scale(&map);
    let plane: Vec<u16> = map.values().iter().map(|&v| condition::quantize_struct(v, scale)).collect();
    imageio::write_gray16(out, map.width(), map.height(), &plane)?;
    kv("output", out.display());
    kv("width", map.width());
    kv("height", map.height());
    kv("k", k);
    kv("k_applied", map.k());
    kv("sigma", map.sigma());
    kv("normalized", map.is_normalized());
    kv("scale", scale);
    kv("max", map.values().iter().copied().fold(0.0, f64::max));
    kv("time_ms", ms(elapsed));
    Ok(())
}

fn cmd_colordist(cfg: &Config, image: &Path, out: &Path) -> Result<()> {
    let slic = cfg.slic()?;
    let lab = colorspace::srgb_to_lab(&imageio::read_rgb(image)?);
    let t = Instant::now();
    let (map, seg, _) = colordist::color_distribution_map_with_segmentation(&lab, &slic)?;
    let elapsed = t.elapsed();
    imageio::write_rgb(out, &colorspace::lab_to_srgb(map.lab()))?;
    kv("output", out.display());
    kv("width", map.width());
    kv("height", map.height());
    kv("clusters", seg.num_clusters());
    kv("slic_region", slic.region_size);
    kv("slic_iters", slic.iterations);
    kv("compactness", slic.compactness);
    kv("blur_k", slic.blur_k.unwrap_or(0));
    kv("time_ms", ms(elapsed));
    Ok(())
}

fn cmd_batch(cfg: &Config, manifest: &Path, out: &Path, input_root: Option<&Path>, report: Option<&Path>) -> Result<bool> {
    let records = batch::read_manifest(manifest)?;
    let input_root = input_root
        .map(Path::to_path_buf)
        .or_else(|| manifest.parent().map(Path::to_path_buf));
    let bc = BatchConfig {
        input_root,
        output_root: out.to_path_buf(),
        workers: cfg.workers,
        schedule: cfg.schedule()?,
        slic: cfg.slic()?,
        seed: cfg.seed,
    };
    let rep = batch::run_batch(&records, &bc)?;
    for r in &rep.records {
        match &r.status {
            RecordStatus::Ok {
                bundle,
                seed,
                k,
                structure_ms,
                color_ms,
            } => println!(
                "record={} status=ok id={} seed={seed} k={k} structure_ms={structure_ms:.3} color_ms={color_ms:.3} bundle={}",
                r.index,
                r.id,
                bundle.display()
            ),
            RecordStatus::Failed { reason } => {
                println!("record={} status=failed id={} reason={reason}", r.index, r.id)
            }
        }
    }
    kv("records", rep.records.len());
    kv("succeeded", rep.succeeded);
    kv("failed", rep.failed);
    for (name, p) in [("structure", rep.structure), ("color", rep.color)] {
        if let Some(p) = p {
            kv(&format!("{name}_p50_ms"), format!("{:.3}", p.p50_ms));
            kv(&format!("{name}_p95_ms"), format!("{:.3}", p.p95_ms));
        }
    }
    if let Some(path) = report {
        let json = serde_json::to_vec_pretty(&rep)?;
        imageio::write_atomic(path, &json)?;
        kv("report", path.display());
    }
    Ok(rep.all_ok())
}

fn cmd_mix(struct_dir: &Path, color_dir: &Path, out: &Path, w_struct: Option<f64>, w_color: Option<f64>) -> Result<()> {
    let a = condition::load_bundle(struct_dir).with_context(|| format!("loading {}", struct_dir.display()))?;
    let b = condition::load_bundle(color_dir).with_context(|| format!("loading {}", color_dir.display()))?;
    let mut mixed = condition::mix_bundles(&a, &b);
    if w_struct.is_some() || w_color.is_some() {
        let base = mixed.weights();
        let w = ConditionWeights::new(w_struct.unwrap_or(base.w_struct), w_color.unwrap_or(base.w_color))?;
        mixed = mixed.with_weights(w)?;
    }
    condition::save_bundle(&mixed, out)?;
    let (w, h) = mixed.dimensions();
    kv("bundle", out.display());
    kv("width", w);
    kv("height", h);
    kv("struct_source", mixed.provenance().structure.source_hash.as_str());
    kv("color_source", mixed.provenance().color.source_hash.as_str());
    if let Some([cw, ch]) = mixed.provenance().color_resampled_from {
        kv("color_resampled_from", format!("{cw}x{ch}"));
    }
    kv("w_struct", mixed.weights().w_struct);
    kv("w_color", mixed.weights().w_color);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_mask(
    cfg: &Config,
    bundle_dir: &Path,
    out: &Path,
    mask_file: Option<&Path>,
    target: TargetArg,
    synth: MaskSynthParams,
    mask_out: Option<&Path>,
) -> Result<()> {
    let bundle = condition::load_bundle(bundle_dir).with_context(|| format!("loading {}", bundle_dir.display()))?;
    let (w, h) = bundle.dimensions();
    let (mask, source) = match mask_file {
        Some(path) => {
            let (mw, mh, data) = imageio::read_gray8(path)?;
            let mask = Mask::new(mw, mh, data.iter().map(|&v| v >= 128).collect())?;
            (mask, path.display().to_string())
        }
        None => (condition::synth_mask(w, h, &synth, &mut seeded(cfg.seed))?, "synthetic".to_string()),
    };
    let target = match target {
        TargetArg::Struct => MaskTarget::Struct,
        TargetArg::Color => MaskTarget::Color,
        TargetArg::Both => MaskTarget::Both,
    };
    let masked = condition::apply_mask(&bundle, &mask, target)?;
    condition::save_bundle(&masked, out)?;
    if let Some(path) = mask_out {
        imageio::write_gray8(path, w, h, &mask.to_bytes())?;
    }
    kv("bundle", out.display());
    kv("mask_source", source);
    if mask_file.is_none() {
        kv("seed", cfg.seed);
    }
    kv("target", format!("{target:?}").to_lowercase());
    kv("active_fraction", format!("{:.6}", mask.active_fraction()));
    Ok(())
}

fn cmd_distance(bundle_dir: &Path, image: &Path) -> Result<()> {
    let bundle = condition::load_bundle(bundle_dir).with_context(|| format!("loading {}", bundle_dir.display()))?;
    let img = imageio::read_rgb(image)?;
    let r = metrics::cycle_consistency(&bundle, &img)?;
    kv("l_struct", r.l_struct);
    kv("l_color", r.l_color);
    kv("k", r.params.k);
    kv("sigma", r.params.sigma.map_or("default".to_string(), |s| s.to_string()));
    kv("normalized", r.params.normalized);
    kv("slic_region", r.params.slic.region_size);
    kv("slic_iters", r.params.slic.iterations);
    kv("compactness", r.params.slic.compactness);
    kv("mask_struct", bundle.mask_struct().is_some());
    kv("mask_color", bundle.mask_color().is_some());
    Ok(())
}

fn parse_embedding(arg: &str) -> Result<Vec<f64>> {
    let path = Path::new(arg);
    if path.is_file() {
        let text = std::fs::read_to_string(path)?;
        return serde_json::from_str(&text).with_context(|| format!("{}: expected a JSON array of numbers", path.display()));
    }
    arg.split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| UsageError(format!("--theme-embedding {arg:?} is neither a file nor a comma-separated vector")).into())
}

fn read_exemplars(path: &Path) -> Result<Vec<ExemplarTriplet>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut ex: Vec<ExemplarTriplet> =
        serde_json::from_str(&text).with_context(|| format!("{}: expected a JSON array of exemplars", path.display()))?;
    let base = path.parent().unwrap_or(Path::new(""));
    for e in &mut ex {
        for p in [&mut e.reference, &mut e.result] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
    Ok(ex)
}

fn make_client(cfg: &Config) -> Result<Box<dyn LvlmClient>> {
    let choice = match (&cfg.llm, &cfg.lvlm_url) {
        (Some(s), _) => s.clone(),
        (None, Some(_)) => "http".to_string(),
        (None, None) => {
            return Err(UsageError("no endpoint: pass --llm stub:<fixture> or set COMPCOND_LVLM_URL".into()).into())
        }
    };
    if let Some(fixture) = choice.strip_prefix("stub:") {
        let stub = StubClient::from_path(Path::new(fixture)).with_context(|| format!("loading stub fixture {fixture}"))?;
        return Ok(Box::new(stub));
    }
    if choice != "http" {
        return Err(UsageError(format!("--llm must be `stub:<fixture>` or `http`, got {choice:?}")).into());
    }
    let Some(url) = &cfg.lvlm_url else {
        return Err(UsageError("--llm http needs COMPCOND_LVLM_URL (or lvlm_url in the config file)".into()).into());
    };
    let http = HttpConfig {
        token: std::env::var("COMPCOND_LVLM_TOKEN").ok().filter(|t| !t.is_empty()),
        model: cfg.lvlm_model.clone(),
        timeout: Duration::from_secs(cfg.lvlm_timeout_s),
        max_in_flight: cfg.lvlm_max_in_flight,
        ..HttpConfig::new(url.clone())
    };
    Ok(Box::new(HttpClient::new(http)))
}

fn cmd_plan(
    cfg: &Config,
    theme: &str,
    index_path: &Path,
    embedding: &str,
    exemplars: Option<&Path>,
    report: Option<&Path>,
) -> Result<()> {
    let theme_embedding = parse_embedding(embedding)?;
    let index = planner::read_index_manifest(index_path)?;
    let client = make_client(cfg)?;
    let pc = PlanConfig {
        n: cfg.candidates,
        exemplars: exemplars.map(read_exemplars).transpose()?.unwrap_or_default(),
        exemplar_mode: match cfg.exemplar_mode.as_str() {
            "images" => ExemplarMode::Images,
            "text" => ExemplarMode::Text,
            other => return Err(UsageError(format!("exemplar_mode must be text or images, got {other:?}")).into()),
        },
        retries: cfg.retries,
        ..PlanConfig::default()
    };
    let r = planner::plan_composition(theme, &theme_embedding, &index, client.as_ref(), &pc)?;
    kv("chosen_id", &r.chosen.id);
    kv("chosen_rank", r.rank);
    kv("chosen_image", r.chosen.image_path.display());
    kv("chosen_caption", &r.chosen.caption);
    kv("similarity", r.candidates[r.rank - 1].similarity);
    kv("method", r.method.as_str());
    kv("attempts", r.attempts);
    kv("candidates", r.candidates.len());
    if let Some(path) = report {
        let json = serde_json::json!({
            "theme": theme,
            "chosen": r.chosen.id,
            "image_path": r.chosen.image_path,
            "rank": r.rank,
            "method": r.method,
            "attempts": r.attempts,
            "response": r.response,
            "candidates": r.candidates,
        });
        imageio::write_atomic(path, &serde_json::to_vec_pretty(&json)?)?;
        kv("report", path.display());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    let cfg = resolve_config(&cli.global)?;
    if cli.global.print_config {
        print!("{}", cfg.to_toml());
        return Ok(true);
    }
    let Some(command) = cli.command else {
        return Err(UsageError("a subcommand is required (see --help)".into()).into());
    };
    config::check(&cfg)?;
    match command {
        Command::Extract { image, out } => cmd_extract(&cfg, &image, &out)?,
        Command::Structure { image, out, global } => cmd_structure(&cfg, &image, &out, global)?,
        Command::Colordist { image, out } => cmd_colordist(&cfg, &image, &out)?,
        Command::Batch {
            manifest,
            out,
            input_root,
            report,
        } => return cmd_batch(&cfg, &manifest, &out, input_root.as_deref(), report.as_deref()),
        Command::Mix {
            struct_bundle,
            color_bundle,
            out,
            w_struct,
            w_color,
        } => cmd_mix(&struct_bundle, &color_bundle, &out, w_struct, w_color)?,
        Command::Mask {
            bundle,
            out,
            mask,
            target,
            shape,
            min_frac,
            max_frac,
            invert_prob,
            mask_out,
        } => {
            let synth = MaskSynthParams {
                shape: match shape {
                    ShapeArg::Ellipse => MaskShape::Ellipse,
                    ShapeArg::Rectangle => MaskShape::Rectangle,
                    ShapeArg::Any => MaskShape::Any,
                },
                min_fraction: min_frac,
                max_fraction: max_frac,
                invert_probability: invert_prob,
            };
            cmd_mask(&cfg, &bundle, &out, mask.as_deref(), target, synth, mask_out.as_deref())?
        }
        Command::Distance { bundle, image } => cmd_distance(&bundle, &image)?,
        Command::Plan {
            theme,
            index,
            theme_embedding,
            exemplars,
            report,
        } => cmd_plan(&cfg, &theme, &index, &theme_embedding, exemplars.as_deref(), report.as_deref())?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error={e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

