//! `hlspot` — the full desk-scale pipeline as one binary: generate synthetic
//! map scenes, train and iteratively finetune the spotter, run inference with
//! overlays, score predictions, and run the numeric self-verification suites.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/config error, 3 verification
//! failure.

mod config;
mod overlay;

use clap::{Parser, Subcommand};
use config::{Preset, RunConfig};
use hlspot_core::geometry::vec2::Vec2;
use hlspot_core::model::SpotModel;
use hlspot_core::synthmap::{
    default_style_profiles, generate_scene, load_scene, save_scene, validate_scene, Raster,
};
use hlspot_core::tensor::{load_checkpoint, save_checkpoint, ParamStore};
use hlspot_core::training::{self, TrainSample};
use hlspot_core::{eval, parallel, verify, Error};
use serde::Serialize;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

/// Print to stdout, ignoring a closed pipe (`hlspot ... | head` must not
/// panic mid-report).
macro_rules! out {
    ($($arg:tt)*) => {
        let _ = writeln!(std::io::stdout(), $($arg)*);
    };
}

#[derive(Parser)]
#[command(
    name = "hlspot",
    version,
    about = "Hyper-local deformable text spotting on synthetic map rasters"
)]
struct Cli {
    /// TOML run configuration; flags below override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (overrides both generation and training seeds).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; created if missing.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Replace the model (and scene) configuration with a size preset.
    #[arg(long, global = true, value_enum)]
    preset: Option<Preset>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic map dataset (PNG scenes + JSONL annotations).
    Generate {
        /// Scene count (overrides the config value).
        #[arg(long)]
        scenes: Option<usize>,
    },
    /// Train a fresh model on a generated dataset.
    Train {
        /// Dataset directory produced by `generate`.
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Alternate character-center acceptance with finetuning rounds.
    FinetuneIterative {
        #[arg(long)]
        dataset: PathBuf,
        /// Starting checkpoint (from `train`).
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Run a checkpoint over PNG images; writes JSONL predictions + overlays.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Also dump final-layer character sampling base points and draw
        /// them on the overlays.
        #[arg(long)]
        debug_sampling: bool,
        /// Input images (8-bit RGB PNG).
        images: Vec<PathBuf>,
    },
    /// Score per-scene predictions against a generated dataset.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        /// Directory holding `scene_{i}.jsonl` prediction files.
        #[arg(long)]
        preds: PathBuf,
    },
    /// Run the numeric self-verification suites and print pass/fail.
    Verify {
        /// Smaller sample counts (seconds instead of minutes).
        #[arg(long)]
        quick: bool,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help/version requests are successes; everything else is usage.
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Data(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(CliError::Verification(msg)) => {
            eprintln!("verification failed: {msg}");
            ExitCode::from(3)
        }
    }
}

enum CliError {
    Data(Error),
    Verification(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Data(e)
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let scenes_flag = match &cli.cmd {
        Cmd::Generate { scenes } => *scenes,
        _ => None,
    };
    cfg.apply_flags(cli.preset, cli.seed, scenes_flag);
    cfg.validate()?;

    std::fs::create_dir_all(&cli.out).map_err(Error::from)?;
    cfg.echo_into(&cli.out)?;

    match cli.cmd {
        Cmd::Generate { .. } => cmd_generate(&cfg, &cli.out)?,
        Cmd::Train { dataset } => cmd_train(&cfg, &dataset, &cli.out)?,
        Cmd::FinetuneIterative { dataset, checkpoint } => {
            cmd_finetune_iterative(&cfg, &dataset, &checkpoint, &cli.out)?
        }
        Cmd::Infer { checkpoint, debug_sampling, images } => {
            cmd_infer(&cfg, &checkpoint, &images, debug_sampling, &cli.out)?
        }
        Cmd::Eval { dataset, preds } => cmd_eval(&cfg, &dataset, &preds, &cli.out)?,
        Cmd::Verify { quick } => cmd_verify(quick)?,
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

#[derive(Serialize, serde::Deserialize)]
struct Manifest {
    scenes: usize,
    generator: config::GenConfig,
}

fn cmd_generate(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let g = &cfg.synthmap;
    let styles = default_style_profiles(g.n_styles, g.style_seed)?;
    let scenes = parallel::par_map(g.scenes, |i| {
        generate_scene(g.seed.wrapping_add(i as u64), &styles, &g.scene)
    });
    for (i, scene) in scenes.iter().enumerate() {
        validate_scene(scene, g.scene.max_chars)
            .map_err(|e| Error::data(format!("scene {i} failed validation: {e}")))?;
        save_scene(scene, out, i)?;
    }
    let manifest = Manifest { scenes: g.scenes, generator: g.clone() };
    std::fs::write(
        out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).map_err(Error::from)?,
    )
    .map_err(Error::from)?;
    let n_annotations: usize = scenes.iter().map(|s| s.annotations.len()).sum();
    println!(
        "generated {} scenes ({}x{}, {} labels) into {}",
        g.scenes,
        g.scene.width,
        g.scene.height,
        n_annotations,
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// dataset loading shared by train / finetune / eval
// ---------------------------------------------------------------------------

fn read_manifest(dataset: &Path) -> Result<Manifest, Error> {
    let path = dataset.join("manifest.json");
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Error::data(format!("dataset manifest {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::data(format!("dataset manifest {}: {e}", path.display())))
}

fn load_samples(dataset: &Path) -> Result<Vec<TrainSample>, Error> {
    let manifest = read_manifest(dataset)?;
    (0..manifest.scenes)
        .map(|i| {
            let (image, instances) = load_scene(dataset, i)?;
            Ok(TrainSample { image, instances })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// train / finetune-iterative
// ---------------------------------------------------------------------------

fn snapshot_writer(out: &Path) -> impl FnMut(usize, &ParamStore) -> Result<(), Error> + '_ {
    move |iter, params| save_checkpoint(params, &out.join(format!("checkpoint_{iter}.ckpt")))
}

fn cmd_train(cfg: &RunConfig, dataset: &Path, out: &Path) -> Result<(), CliError> {
    let samples = load_samples(dataset)?;
    let mut model = SpotModel::new(cfg.model.clone(), cfg.train.seed)?;
    let start = Instant::now();
    let log = training::train(&samples, &mut model, &cfg.train, snapshot_writer(out))?;
    std::fs::write(out.join("loss.csv"), training::log_to_csv(&log)).map_err(Error::from)?;
    save_checkpoint(&model.params, &out.join("model.ckpt"))?;
    let last = log.last().expect("at least one iteration");
    println!(
        "trained {} iterations on {} samples in {:.1}s; final loss {:.4} -> {}",
        log.len(),
        samples.len(),
        start.elapsed().as_secs_f64(),
        last.total,
        out.join("model.ckpt").display()
    );
    Ok(())
}

#[derive(Serialize)]
struct AcceptanceSummary {
    rounds: usize,
    history: Vec<usize>,
    total_instances: usize,
    accepted_final: usize,
}

fn cmd_finetune_iterative(
    cfg: &RunConfig,
    dataset: &Path,
    checkpoint: &Path,
    out: &Path,
) -> Result<(), CliError> {
    let mut samples = load_samples(dataset)?;
    let params = load_checkpoint(checkpoint)
        .map_err(|e| Error::data(format!("checkpoint {}: {e}", checkpoint.display())))?;
    let mut model = SpotModel::from_parts(cfg.model.clone(), params)?;
    let start = Instant::now();
    let outcome =
        training::iterative_finetune(&mut samples, &mut model, &cfg.train, snapshot_writer(out))?;
    std::fs::write(out.join("loss.csv"), training::log_to_csv(&outcome.log))
        .map_err(Error::from)?;
    save_checkpoint(&model.params, &out.join("model.ckpt"))?;
    let summary = AcceptanceSummary {
        rounds: outcome.rounds,
        history: outcome.record.history.clone(),
        total_instances: outcome.record.total(&samples),
        accepted_final: outcome.record.accepted_count(),
    };
    std::fs::write(
        out.join("acceptance.json"),
        serde_json::to_string_pretty(&summary).map_err(Error::from)?,
    )
    .map_err(Error::from)?;
    println!(
        "finetuned for {} rounds in {:.1}s; accepted centers per round: {:?} (of {})",
        summary.rounds,
        start.elapsed().as_secs_f64(),
        summary.history,
        summary.total_instances
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// infer
// ---------------------------------------------------------------------------

fn cmd_infer(
    cfg: &RunConfig,
    checkpoint: &Path,
    images: &[PathBuf],
    debug_sampling: bool,
    out: &Path,
) -> Result<(), CliError> {
    let params = load_checkpoint(checkpoint)
        .map_err(|e| Error::data(format!("checkpoint {}: {e}", checkpoint.display())))?;
    let model = SpotModel::from_parts(cfg.model.clone(), params)?;
    let m = model.cfg.max_text_len;

    for path in images {
        let image = Raster::load_png(path)
            .map_err(|e| Error::data(format!("image {}: {e}", path.display())))?;
        let (w, h) = (image.width(), image.height());
        let output = model.run(&image)?;
        let decoded = model.decode(&output, w, h);
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::data(format!("image path {} has no stem", path.display())))?;

        let dets: Vec<_> = decoded.iter().map(|(_, d)| d.clone()).collect();
        std::fs::write(out.join(format!("{stem}.jsonl")), eval::predictions_to_jsonl(&dets))
            .map_err(Error::from)?;

        // Per-detection predicted character centers, in pixels.
        let views = output.layers.last().expect("decoder layers").views();
        let with_centers: Vec<_> = decoded
            .iter()
            .map(|(q, d)| {
                let centers: Vec<Vec2> =
                    views[*q].centers.iter().map(|c| [c[0] * w as f64, c[1] * h as f64]).collect();
                (d.clone(), centers)
            })
            .collect();

        // Final-layer character sampling bases for the kept queries.
        let sampling = output.sampling.last().expect("decoder layers");
        let debug_bases: Vec<Vec2> = decoded
            .iter()
            .flat_map(|(q, _)| sampling.char_bases[q * m..(q + 1) * m].iter())
            .map(|c| [c[0] * w as f64, c[1] * h as f64])
            .collect();
        if debug_sampling {
            std::fs::write(
                out.join(format!("{stem}.sampling.json")),
                serde_json::to_string_pretty(&debug_bases).map_err(Error::from)?,
            )
            .map_err(Error::from)?;
        }

        let overlay = overlay::render(
            &image,
            &with_centers,
            debug_sampling.then_some(debug_bases.as_slice()),
        );
        overlay.save_png(&out.join(format!("{stem}.overlay.png")))?;
        println!("{}: {} detections", path.display(), dets.len());
    }
    if images.is_empty() {
        println!("no input images");
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

fn cmd_eval(cfg: &RunConfig, dataset: &Path, preds: &Path, out: &Path) -> Result<(), CliError> {
    let manifest = read_manifest(dataset)?;
    let mut inputs = Vec::with_capacity(manifest.scenes);
    for i in 0..manifest.scenes {
        let (_, mut gts) = load_scene(dataset, i)?;
        eval::mark_numeric_dont_care(&mut gts);
        let pred_path = preds.join(format!("scene_{i}.jsonl"));
        let text = std::fs::read_to_string(&pred_path)
            .map_err(|e| Error::data(format!("predictions {}: {e}", pred_path.display())))?;
        let preds = eval::predictions_from_jsonl(&text)?;
        inputs.push(eval::EvalInput { preds, gts });
    }
    let report = eval::evaluate(&inputs, cfg.eval.iou_thresh)?;
    std::fs::write(out.join("report.json"), report.to_json()).map_err(Error::from)?;
    let table = report.to_table();
    std::fs::write(out.join("report.txt"), &table).map_err(Error::from)?;
    println!("{table}");
    Ok(())
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

fn cmd_verify(quick: bool) -> Result<(), CliError> {
    println!("worker threads: {}", parallel::effective_threads());
    let mut all_ok = true;
    let mut check = |name: &str, ok: bool, detail: String, secs: f64| {
        println!("{} {name}: {detail} ({secs:.1}s)", if ok { "PASS" } else { "FAIL" });
        all_ok &= ok;
    };

    let (op_seeds, e2e_seeds, attn_cfgs, h5, h6, iou_pairs) = if quick {
        (10, 1, 10, 100, 20, 50)
    } else {
        (100, 3, 50, 1000, 200, 500)
    };

    let t = Instant::now();
    let r = verify::op_grad_suite(op_seeds, 2024)?;
    check(
        "op gradients vs finite differences",
        r.worst < 1e-4,
        format!("{} checks, worst rel err {:.2e} at {}", r.checks, r.worst, r.worst_case),
        t.elapsed().as_secs_f64(),
    );

    let t = Instant::now();
    let r = verify::e2e_grad_suite(e2e_seeds, 7, 1e-3)?;
    check(
        "end-to-end loss gradients",
        r.worst < 1e-3,
        format!("{} coordinates, worst rel err {:.2e} at {}", r.coords, r.worst, r.worst_case),
        t.elapsed().as_secs_f64(),
    );

    let t = Instant::now();
    let worst = verify::msdeform_oracle_suite(attn_cfgs, 77)?;
    check(
        "deformable attention vs naive oracle",
        worst < 1e-12,
        format!("{attn_cfgs} configs, worst abs dev {worst:.2e}"),
        t.elapsed().as_secs_f64(),
    );

    let t = Instant::now();
    let worst = verify::hungarian_oracle_suite(h5, h6, 3)?;
    check(
        "hungarian vs brute force",
        worst == 0.0,
        format!("{h5}+{h6} matrices, worst cost dev {worst:.2e}"),
        t.elapsed().as_secs_f64(),
    );

    let t = Instant::now();
    let worst = verify::iou_oracle_suite(iou_pairs, 512, 4);
    check(
        "polygon IoU vs rasterization",
        worst < 1e-2,
        format!("{iou_pairs} pairs, worst abs dev {worst:.2e}"),
        t.elapsed().as_secs_f64(),
    );

    if all_ok {
        println!("all verification suites passed");
        Ok(())
    } else {
        Err(CliError::Verification("one or more suites failed; see output above".into()))
    }
}
