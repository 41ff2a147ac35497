use std::collections::BTreeMap;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde_json::{json, Value};

use nerdd::annotator::{auto_annotate, tracks_from_boxes, BlobParams, LinkMethod};
use nerdd::dataset::{dataset_stats, load_annotation_dir, load_annotations, load_manifest, save_annotations, write_atomic};
use nerdd::evaluation::{coco_map, video_split, Detection, FrameKey, GroundTruth, SplitSpec};
use nerdd::events::{accumulate, read_events_file, render_frame, AccumulationConfig, EventStream};
use nerdd::fusion::{
    forward_detect, grad_check, load_weights, save_weights, train_toy, Cutoff, FusionConfig, Strategy, TrainOptions,
    GRAD_CHECK_OPS,
};
use nerdd::{AnnotationFile, BBox};

#[derive(Parser)]
#[command(name = "nerdd", version, about = "Event/RGB drone detection toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct EventInput {
    /// `.nev` or `.csv` event file
    #[arg(long)]
    events: PathBuf,
    /// Sensor size for CSV input
    #[arg(long, default_value_t = 1280)]
    width: u16,
    #[arg(long, default_value_t = 720)]
    height: u16,
}

impl EventInput {
    fn load(&self) -> Result<EventStream> {
        read_events_file(&self.events, Some((self.width, self.height)))
            .with_context(|| format!("reading {}", self.events.display()))
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Subset {
    Train,
    Test,
    All,
}

#[derive(Subcommand)]
enum Cmd {
    /// Bin events into pseudo-frames; writes PNG renders and counts.json
    Accumulate {
        #[command(flatten)]
        input: EventInput,
        #[arg(long, default_value_t = 30.0)]
        fps: f64,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to just past the last event
        #[arg(long)]
        duration_us: Option<u64>,
    },
    /// Event stream statistics, or dataset statistics from a manifest
    Stats {
        #[arg(long, conflicts_with_all = ["manifest", "ann"])]
        events: Option<PathBuf>,
        #[arg(long, requires = "ann")]
        manifest: Option<PathBuf>,
        /// Directory of `<video_id>.json` annotation files
        #[arg(long, requires = "manifest")]
        ann: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Print registration offsets, or estimate and store them
    Sync {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        estimate_offset: bool,
        #[arg(long, default_value_t = 30)]
        max_lag: usize,
    },
    /// Automatic boxes from blob detection and tracking
    Annotate {
        #[command(flatten)]
        input: EventInput,
        #[arg(long, default_value_t = 30.0)]
        fps: f64,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to the event file stem
        #[arg(long)]
        video_id: Option<String>,
        #[arg(long, default_value_t = BlobParams::default().threshold)]
        threshold: u32,
        #[arg(long, default_value_t = BlobParams::default().min_area)]
        min_area: u32,
        #[arg(long, default_value_t = BlobParams::default().max_area)]
        max_area: u32,
        #[arg(long, default_value_t = BlobParams::default().link_distance)]
        link_distance: f64,
        #[arg(long, default_value_t = BlobParams::default().min_track_len)]
        min_track_len: usize,
        #[arg(long)]
        hungarian: bool,
    },
    /// Fill gaps between keyframes of every track (or one) in place
    Interpolate {
        #[arg(long)]
        ann: PathBuf,
        #[arg(long)]
        track: Option<u32>,
    },
    /// Analytic vs numerical gradients of the fusion blocks
    GradCheck {
        #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(GRAD_CHECK_OPS))]
        op: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Overfit the synthetic toy set
    TrainToy {
        #[arg(long, default_value = "pool")]
        strategy: Strategy,
        #[arg(long, default_value = "encoder")]
        cutoff: Cutoff,
        #[arg(long, default_value_t = 5)]
        queries: usize,
        #[arg(long, default_value_t = 500)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = FusionConfig::default().d)]
        d: usize,
        #[arg(long, default_value_t = FusionConfig::default().patch)]
        patch: usize,
        #[arg(long, default_value_t = TrainOptions::default().lr)]
        lr: f64,
        #[arg(long, default_value_t = 50)]
        log_every: usize,
        /// Write trained weights here
        #[arg(long)]
        save: Option<PathBuf>,
    },
    /// Run a trained detector over every frame of a manifest
    Detect {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        /// Must match the weights when given
        #[arg(long)]
        strategy: Option<Strategy>,
        #[arg(long)]
        cutoff: Option<Cutoff>,
        /// Box-filter factor applied to both inputs
        #[arg(long, default_value_t = 1)]
        downsample: usize,
        #[arg(long, default_value_t = 0.0)]
        min_score: f64,
        /// Defaults to stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// COCO-style AP of a detections file
    Eval {
        #[arg(long)]
        dets: PathBuf,
        #[arg(long)]
        ann: PathBuf,
        #[arg(long, value_enum, default_value = "all")]
        split: Subset,
        /// Output of `nerdd split`; required unless --split all
        #[arg(long)]
        split_file: Option<PathBuf>,
    },
    /// Video-wise train/test split
    Split {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.8)]
        ratio: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Review service over a manifest
    Serve {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
        /// Directory of UI assets
        #[arg(long = "static")]
        static_dir: Option<PathBuf>,
    },
}

fn end_of_stream(stream: &EventStream) -> u64 {
    stream.events().last().map_or(0, |e| e.t + 1)
}

fn write_json(path: &Path, v: &impl serde::Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(v)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

fn cmd_accumulate(input: &EventInput, fps: f64, out: &Path, duration: Option<u64>) -> Result<()> {
    let stream = input.load()?;
    let cfg = AccumulationConfig::from_fps_f64(fps)?;
    let acc = accumulate(&stream, &cfg, duration.unwrap_or_else(|| end_of_stream(&stream)));
    fs::create_dir_all(out)?;
    acc.frames.par_iter().try_for_each(|f| {
        render_frame(f)
            .save(out.join(format!("{:06}.png", f.index)))
            .context("writing frame")
    })?;
    let frames: Vec<Value> = acc
        .frames
        .iter()
        .map(|f| {
            let on: u64 = f.on_counts().iter().map(|&c| c as u64).sum();
            json!({"index": f.index, "events": f.event_count(), "on": on, "off": f.event_count() - on})
        })
        .collect();
    let (num, den) = cfg.fps_ratio();
    write_json(
        &out.join("counts.json"),
        &json!({
            "fps_num": num, "fps_den": den, "interval_us": cfg.interval_us(),
            "width": stream.width(), "height": stream.height(),
            "drops": acc.report, "frames": frames,
        }),
    )?;
    println!(
        "{} frames of {} us, {} events, {} dropped -> {}",
        acc.frames.len(),
        cfg.interval_us(),
        stream.len(),
        acc.report.dropped(),
        out.display()
    );
    Ok(())
}

fn cmd_stats(events: Option<PathBuf>, manifest: Option<PathBuf>, ann: Option<PathBuf>, as_json: bool) -> Result<()> {
    if let Some(path) = events {
        let s = read_events_file(&path, None)?;
        let st = s.stats();
        if as_json {
            println!("{}", serde_json::to_string_pretty(&st)?);
        } else {
            println!("Sensor       {}x{}", s.width(), s.height());
            println!("Events       {}", st.events);
            println!("ON / OFF     {} / {}", st.on, st.off);
            println!("Duration     {:.6} s", st.duration_us as f64 * 1e-6);
            println!("Mean rate    {:.1} ev/s", st.mean_rate_hz);
        }
        return Ok(());
    }
    let (Some(manifest), Some(ann)) = (manifest, ann) else {
        bail!("give --events, or --manifest with --ann");
    };
    let entries = load_manifest(&manifest)?;
    let anns = load_annotation_dir(&ann, &entries)?;
    let stats = dataset_stats(&entries, &anns);
    if as_json {
        println!("{}", serde_json::to_string_pretty(&stats)?);
    } else {
        println!("{stats}");
    }
    Ok(())
}

fn cmd_sync(manifest: &Path, estimate: bool, max_lag: usize) -> Result<()> {
    let entries = load_manifest(manifest)?;
    if !estimate {
        for m in &entries {
            println!("{}  t_offset_us {}  x_shift {}", m.video_id, m.registration.t_offset_us, m.registration.x_shift);
        }
        return Ok(());
    }
    let estimates = entries
        .par_iter()
        .map(|m| m.estimate_offset(max_lag))
        .collect::<Result<Vec<_>, _>>()?;
    // edit the raw document so relative paths and unknown formatting survive
    let text = fs::read_to_string(manifest)?;
    let mut doc: Value = serde_json::from_str(&text)?;
    let arr = doc.as_array_mut().context("manifest is not an array")?;
    for ((m, est), entry) in entries.iter().zip(&estimates).zip(arr.iter_mut()) {
        entry["registration"]["t_offset_us"] = json!(est.offset_us);
        println!(
            "{}  lag {} frames  t_offset_us {}  score {:.4}",
            m.video_id, est.lag_frames, est.offset_us, est.score
        );
    }
    write_json(manifest, &doc)
}

fn cmd_annotate(input: &EventInput, fps: f64, out: &Path, video_id: Option<String>, params: BlobParams, method: LinkMethod) -> Result<()> {
    params.validate().map_err(anyhow::Error::msg)?;
    let stream = input.load()?;
    let cfg = AccumulationConfig::from_fps_f64(fps)?;
    let acc = accumulate(&stream, &cfg, end_of_stream(&stream));
    let (boxes, linked) = auto_annotate(&acc.frames, &params, method);
    let video_id = video_id.unwrap_or_else(|| {
        input.events.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
    });
    let mut ann = AnnotationFile::new(video_id, fps, stream.width().into(), stream.height().into());
    ann.boxes = boxes;
    save_annotations(out, &ann)?;
    println!(
        "{} frames, {} tracks, {} boxes ({} discarded) -> {}",
        acc.frames.len(),
        linked.tracks.len(),
        ann.boxes.len(),
        linked.discarded,
        out.display()
    );
    Ok(())
}

fn cmd_interpolate(path: &Path, only: Option<u32>) -> Result<()> {
    let mut ann = load_annotations(path)?;
    let before = ann.boxes.len();
    let ids: Vec<u32> = match only {
        Some(t) => vec![t],
        None => tracks_from_boxes(&ann.boxes).iter().map(|t| t.track_id).collect(),
    };
    for id in ids {
        nerdd_review::apply_interpolation(&mut ann.boxes, id)?;
    }
    save_annotations(path, &ann)?;
    println!("{} boxes -> {} ({})", before, ann.boxes.len(), path.display());
    Ok(())
}

fn tolerance(op: &str) -> f64 {
    if op == "forward_detect" {
        1e-3
    } else {
        1e-4
    }
}

fn cmd_grad_check(op: Option<String>, seed: u64) -> Result<()> {
    let ops: Vec<String> = match op {
        Some(o) => vec![o],
        None => GRAD_CHECK_OPS.iter().map(|s| s.to_string()).collect(),
    };
    let mut failed = false;
    for op in ops {
        let err = grad_check(&op, seed)?;
        let ok = err < tolerance(&op);
        failed |= !ok;
        println!("{:<22} max rel err {err:.3e}  (< {:.0e})  {}", op, tolerance(&op), if ok { "ok" } else { "FAIL" });
    }
    if failed {
        bail!("gradient check failed");
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_train_toy(
    strategy: Strategy,
    cutoff: Cutoff,
    queries: usize,
    steps: usize,
    seed: u64,
    d: usize,
    patch: usize,
    lr: f64,
    log_every: usize,
    save: Option<PathBuf>,
) -> Result<()> {
    let cfg = FusionConfig {
        d,
        patch,
        n_queries: queries,
        ..FusionConfig::default()
    }
    .with_strategy(strategy, cutoff);
    let opts = TrainOptions {
        steps,
        seed,
        lr,
        ..TrainOptions::default()
    };
    let report = train_toy(&cfg, &opts, |step, loss| {
        if log_every > 0 && step % log_every == 0 {
            println!("step {step:5}  loss {loss:.6}");
        }
    })?;
    println!("step {steps:5}  loss {:.6}", report.final_loss);
    println!(
        "{strategy}@{cutoff}: loss {:.4} -> {:.4} ({:.1}% reduction)",
        report.initial_loss,
        report.final_loss,
        100.0 * report.loss_reduction()
    );
    print!("{}", report.eval.to_table());
    if let Some(path) = save {
        save_weights(&report.params, &path)?;
        println!("weights -> {}", path.display());
    }
    Ok(())
}

fn cmd_detect(
    manifest: &Path,
    weights: &Path,
    strategy: Option<Strategy>,
    cutoff: Option<Cutoff>,
    downsample: usize,
    min_score: f64,
    out: Option<PathBuf>,
) -> Result<()> {
    let ps = load_weights(weights)?;
    let cfg = ps.config();
    if strategy.is_some_and(|s| s != cfg.strategy) || cutoff.is_some_and(|c| c != cfg.cutoff) {
        bail!("weights were trained as {}@{}", cfg.strategy, cfg.cutoff);
    }
    let entries = load_manifest(manifest)?;
    let mut dets = Vec::new();
    for m in &entries {
        let synced = m.load_events_synced()?;
        let per_frame = (0..m.frames)
            .into_par_iter()
            .map(|f| {
                let (ev, rgb) = m.model_inputs(&synced, f, downsample)?;
                let det = forward_detect(&ev, &rgb, &ps)?;
                let key = FrameKey::new(&m.video_id, f);
                Ok((0..det.n_queries())
                    .filter(|&q| det.p_object(q) >= min_score)
                    .map(|q| {
                        let [cx, cy, w, h] = det.box_at(q);
                        let b = BBox::from_cxcywh(cx, cy, w, h).scaled(m.width as f64, m.height as f64);
                        Detection::new(&key, det.p_object(q), b)
                    })
                    .collect::<Vec<_>>())
            })
            .collect::<Result<Vec<_>>>()?;
        dets.extend(per_frame.into_iter().flatten());
    }
    match out {
        Some(path) => {
            write_json(&path, &dets)?;
            eprintln!("{} detections -> {}", dets.len(), path.display());
        }
        None => println!("{}", serde_json::to_string_pretty(&dets)?),
    }
    Ok(())
}

fn annotation_files(dir: &Path) -> Result<BTreeMap<String, AnnotationFile>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        if !name.ends_with(".json") || name.ends_with(".auto.json") {
            continue;
        }
        let ann = load_annotations(&path)?;
        out.insert(ann.video_id.clone(), ann);
    }
    Ok(out)
}

fn cmd_eval(dets: &Path, ann: &Path, subset: Subset, split_file: Option<PathBuf>) -> Result<()> {
    let all: Vec<Detection> = serde_json::from_str(&fs::read_to_string(dets)?).context("detections file")?;
    let anns = annotation_files(ann)?;
    let keep: Box<dyn Fn(&str) -> bool> = match subset {
        Subset::All => Box::new(|_| true),
        _ => {
            let path = split_file.context("--split-file is required with --split train|test")?;
            let spec: SplitSpec = serde_json::from_str(&fs::read_to_string(&path)?)?;
            let ids = match subset {
                Subset::Train => spec.train,
                _ => spec.test,
            };
            if let Some(missing) = ids.iter().find(|id| !anns.contains_key(*id)) {
                bail!("no annotation file for `{missing}` in {}", ann.display());
            }
            Box::new(move |id| ids.iter().any(|v| v == id))
        }
    };
    let gt = GroundTruth::from_annotations(anns.values().filter(|a| keep(&a.video_id)));
    let dets: Vec<Detection> = all.into_iter().filter(|d| keep(&d.video_id)).collect();
    let report = coco_map(&dets, &gt)?;
    print!("{}", report.to_table());
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn cmd_split(manifest: &Path, seed: u64, ratio: f64, out: Option<PathBuf>) -> Result<()> {
    let ids: Vec<String> = load_manifest(manifest)?.into_iter().map(|m| m.video_id).collect();
    let spec = video_split(&ids, ratio, seed)?;
    eprintln!("{} train / {} test", spec.train.len(), spec.test.len());
    match out {
        Some(path) => write_json(&path, &spec)?,
        None => println!("{}", serde_json::to_string_pretty(&spec)?),
    }
    Ok(())
}

fn cmd_serve(manifest: &Path, addr: SocketAddr, static_dir: Option<PathBuf>) -> Result<()> {
    let entries = load_manifest(manifest)?;
    let n = entries.len();
    let state = nerdd_review::AppState::new(entries)?;
    let rt = tokio::runtime::Runtime::new()?;
    eprintln!("serving {n} videos on http://{addr}");
    rt.block_on(nerdd_review::serve(state, addr, static_dir))?;
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Accumulate { input, fps, out, duration_us } => cmd_accumulate(&input, fps, &out, duration_us),
        Cmd::Stats { events, manifest, ann, json } => cmd_stats(events, manifest, ann, json),
        Cmd::Sync { manifest, estimate_offset, max_lag } => cmd_sync(&manifest, estimate_offset, max_lag),
        Cmd::Annotate {
            input,
            fps,
            out,
            video_id,
            threshold,
            min_area,
            max_area,
            link_distance,
            min_track_len,
            hungarian,
        } => {
            let params = BlobParams {
                threshold,
                min_area,
                max_area,
                link_distance,
                min_track_len,
                ..BlobParams::default()
            };
            let method = if hungarian { LinkMethod::Hungarian } else { LinkMethod::Greedy };
            cmd_annotate(&input, fps, &out, video_id, params, method)
        }
        Cmd::Interpolate { ann, track } => cmd_interpolate(&ann, track),
        Cmd::GradCheck { op, seed } => cmd_grad_check(op, seed),
        Cmd::TrainToy {
            strategy,
            cutoff,
            queries,
            steps,
            seed,
            d,
            patch,
            lr,
            log_every,
            save,
        } => cmd_train_toy(strategy, cutoff, queries, steps, seed, d, patch, lr, log_every, save),
        Cmd::Detect {
            manifest,
            weights,
            strategy,
            cutoff,
            downsample,
            min_score,
            out,
        } => cmd_detect(&manifest, &weights, strategy, cutoff, downsample, min_score, out),
        Cmd::Eval { dets, ann, split, split_file } => cmd_eval(&dets, &ann, split, split_file),
        Cmd::Split { manifest, seed, ratio, out } => cmd_split(&manifest, seed, ratio, out),
        Cmd::Serve {
            manifest,
            port,
            host,
            static_dir,
        } => cmd_serve(&manifest, SocketAddr::new(host, port), static_dir),
    }
}
