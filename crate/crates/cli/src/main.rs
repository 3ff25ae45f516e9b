//! Command-line front end for the hybrid multi-target tracker.
//!
//! Three subcommands are provided:
//!
//! * `track` — run the tracker over an image sequence with file-based
//!   detections and write a MOT-format results file.
//! * `eval`  — score a results file against ground truth with the CLEAR
//!   metrics (MOTA, MOTP, FP, FN, identity switches).
//! * `bench` — sweep the keyframe skip parameter over a sequence and report
//!   throughput and latency percentiles, with an optional modeled detector
//!   latency added on keyframes.
//!
//! Exit codes: 0 on success, 1 for I/O failures, 2 for malformed input
//! files, 3 for any other runtime error. Diagnostic logging is controlled
//! by the `HYBRID_MOT_LOG` environment variable (e.g. `HYBRID_MOT_LOG=info`).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hybrid_mot::{
    evaluate_sequence, mota, motp, read_mot_ground_truth, write_results, Error, FileDetections,
    FrameSource, SequenceFrames, TrackerConfig,
};

#[derive(Parser)]
#[command(
    name = "hybrid-mot",
    version,
    about = "Hybrid detection + optical-flow multi-target tracker"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Track a sequence and write a MOT-format results file.
    Track(TrackArgs),
    /// Evaluate a results file against ground truth (CLEAR metrics).
    Eval(EvalArgs),
    /// Sweep keyframe skips over a sequence and report throughput.
    Bench(BenchArgs),
}

#[derive(Args)]
struct TrackArgs {
    /// Sequence directory containing seqinfo.ini and the image folder.
    #[arg(long)]
    seq: PathBuf,
    /// Detection file; defaults to <seq>/det/det.txt.
    #[arg(long)]
    detections: Option<PathBuf>,
    /// Optional per-detection embedding file (frame,v1,...,vD rows).
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Number of flow-only frames between consecutive keyframes.
    #[arg(long, default_value_t = 0)]
    skip: u32,
    /// Confidence threshold separating high- from low-confidence detections.
    #[arg(long, default_value_t = 0.5)]
    tau: f64,
    /// Minimum confidence for starting a new track.
    #[arg(long, default_value_t = 0.6)]
    tau_init: f64,
    /// Base seed for all stochastic components.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output results file.
    #[arg(long, default_value = "results.txt")]
    output: PathBuf,
    /// Disable optical-flow propagation (skipped frames coast on the motion model).
    #[arg(long)]
    no_flow: bool,
    /// Keep detection confidences as-is instead of normalizing scores above 1.
    #[arg(long)]
    no_conf_normalize: bool,
    /// Print per-frame box rows (frame,id,x,y,w,h) to stdout as they are produced.
    #[arg(long)]
    dump_boxes: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Ground-truth file in MOT format.
    #[arg(long)]
    gt: PathBuf,
    /// Results file in MOT format.
    #[arg(long)]
    results: PathBuf,
    /// Minimum IoU for a ground-truth/hypothesis match.
    #[arg(long, default_value_t = 0.5)]
    iou_min: f64,
}

#[derive(Args)]
struct BenchArgs {
    /// Sequence directory containing seqinfo.ini and the image folder.
    #[arg(long)]
    seq: PathBuf,
    /// Comma-separated list of skip values to sweep.
    #[arg(long, default_value = "0,1,2,3,4")]
    skips: String,
    /// Modeled detector latency charged to every keyframe, in milliseconds.
    #[arg(long, default_value_t = 60.0)]
    detector_latency_ms: f64,
    /// Optional CSV output path for the sweep table.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Base seed for all stochastic components.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("HYBRID_MOT_LOG")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Track(args) => cmd_track(&args),
        Command::Eval(args) => cmd_eval(&args),
        Command::Bench(args) => cmd_bench(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Io { .. } => 1,
        Error::Format { .. } => 2,
        _ => 3,
    }
}

/// Formats a metric that may be undefined; NaN prints as plain `nan`.
fn metric(value: f64) -> String {
    if value.is_nan() {
        "nan".to_owned()
    } else {
        format!("{value:.6}")
    }
}

fn tracker_config(skip: u32, tau: f64, tau_init: f64, seed: u64, use_flow: bool) -> TrackerConfig {
    TrackerConfig {
        skip,
        tau,
        tau_init,
        seed,
        use_flow,
        ..TrackerConfig::default()
    }
}

fn cmd_track(args: &TrackArgs) -> Result<(), Error> {
    let mut frames = SequenceFrames::open(&args.seq)?;
    let det_path = args
        .detections
        .clone()
        .unwrap_or_else(|| args.seq.join("det").join("det.txt"));
    let mut detections = FileDetections::load(&det_path, !args.no_conf_normalize)?;
    let det_count: usize = detections.frames().values().map(Vec::len).sum();
    log::info!(
        "loaded {det_count} detections over {} frames from {}",
        frames.num_frames(),
        det_path.display()
    );
    if let Some(emb_path) = &args.embeddings {
        let attached = detections.attach_embeddings(emb_path)?;
        log::info!("attached {attached} embeddings from {}", emb_path.display());
    }

    let config = tracker_config(args.skip, args.tau, args.tau_init, args.seed, !args.no_flow);
    let start = std::time::Instant::now();
    let log = match hybrid_mot::run_sequence(&mut frames, &mut detections, &config) {
        Ok(log) => log,
        Err(run_err) => {
            // Preserve whatever was tracked before the failure, then report it.
            let partial = run_err.partial.frame_boxes();
            write_results(&args.output, &partial)?;
            eprintln!(
                "warning: run stopped at frame {}; partial results written to {}",
                run_err.frame,
                args.output.display()
            );
            return Err(run_err.source);
        }
    };
    let elapsed = start.elapsed().as_secs_f64();

    let boxes = log.frame_boxes();
    write_results(&args.output, &boxes)?;
    if args.dump_boxes {
        for (frame, rows) in &boxes {
            for (id, bbox) in rows {
                println!(
                    "{frame},{id},{:.2},{:.2},{:.2},{:.2}",
                    bbox.x, bbox.y, bbox.w, bbox.h
                );
            }
        }
    }
    let frames_done = log.frames.len();
    let fps = frames_done as f64 / elapsed.max(1e-9);
    println!(
        "frames={} tracks_created={} detector_calls={} fps={fps:.1}",
        frames_done, log.tracks_created, log.detector_invocations
    );
    println!("results written to {}", args.output.display());
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<(), Error> {
    let gt = read_mot_ground_truth(&args.gt)?;
    let hyp = read_mot_ground_truth(&args.results)?;
    let counts = evaluate_sequence(&gt, &hyp, args.iou_min)?;
    let mota_value = mota(&counts)?;
    let motp_value = match motp(&counts) {
        Ok(v) => v,
        Err(Error::UndefinedMetric { .. }) => f64::NAN,
        Err(err) => return Err(err),
    };
    println!("ground-truth boxes  {}", counts.gt_boxes);
    println!("matches             {}", counts.matches);
    println!("false positives     {}", counts.false_positives);
    println!("misses              {}", counts.misses);
    println!("identity switches   {}", counts.id_switches);
    println!("MOTA                {}", metric(mota_value));
    println!("MOTP                {}", metric(motp_value));
    println!(
        "MOTA={} MOTP={} FP={} FN={} IDS={} GT={}",
        metric(mota_value),
        metric(motp_value),
        counts.false_positives,
        counts.misses,
        counts.id_switches,
        counts.gt_boxes
    );
    Ok(())
}

/// Nearest-rank percentile (q in [0,1]) of an unsorted sample.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.saturating_sub(1).min(sorted.len() - 1)]
}

fn parse_skips(text: &str) -> Result<Vec<u32>, Error> {
    let mut skips = Vec::new();
    for part in text.split(',') {
        let trimmed = part.trim();
        if trimmed.is_empty() {
            continue;
        }
        skips.push(trimmed.parse::<u32>().map_err(|_| {
            Error::InvalidInput(format!("invalid skip value `{trimmed}` in --skips"))
        })?);
    }
    if skips.is_empty() {
        return Err(Error::InvalidInput(
            "--skips must name at least one skip value".to_owned(),
        ));
    }
    Ok(skips)
}

fn cmd_bench(args: &BenchArgs) -> Result<(), Error> {
    let skips = parse_skips(&args.skips)?;
    let mut frames = SequenceFrames::open(&args.seq)?;
    let mut detections = FileDetections::load(&args.seq.join("det").join("det.txt"), true)?;
    let gt_path = args.seq.join("gt").join("gt.txt");
    let gt = if gt_path.is_file() {
        Some(read_mot_ground_truth(&gt_path)?)
    } else {
        None
    };

    let mut rows = Vec::new();
    println!("skip      fps  lat_p50_ms  lat_p95_ms  det_calls      mota      motp");
    for &skip in &skips {
        let config = tracker_config(skip, 0.5, 0.6, args.seed, true);
        let log = hybrid_mot::run_sequence(&mut frames, &mut detections, &config)
            .map_err(|run_err| run_err.source)?;

        // Charge the modeled detector latency to every keyframe.
        let mut times: Vec<f64> = log
            .frame_times_ms
            .iter()
            .enumerate()
            .map(|(i, &ms)| {
                if i as u32 % (skip + 1) == 0 {
                    ms + args.detector_latency_ms
                } else {
                    ms
                }
            })
            .collect();
        let total_s: f64 = times.iter().sum::<f64>() / 1000.0;
        let fps = times.len() as f64 / total_s.max(1e-9);
        times.sort_by(|a, b| a.partial_cmp(b).expect("frame times are finite"));
        let p50 = percentile(&times, 0.50);
        let p95 = percentile(&times, 0.95);

        let (mota_value, motp_value) = match &gt {
            Some(gt) => {
                let counts = evaluate_sequence(gt, &log.frame_boxes(), 0.5)?;
                let motp_value = match motp(&counts) {
                    Ok(v) => v,
                    Err(Error::UndefinedMetric { .. }) => f64::NAN,
                    Err(err) => return Err(err),
                };
                (mota(&counts)?, motp_value)
            }
            None => (f64::NAN, f64::NAN),
        };
        println!(
            "{skip:>4}  {fps:>7.2}  {p50:>10.3}  {p95:>10.3}  {:>9}  {:>8}  {:>8}",
            log.detector_invocations,
            metric(mota_value),
            metric(motp_value)
        );
        rows.push((
            skip,
            fps,
            p50,
            p95,
            log.detector_invocations,
            mota_value,
            motp_value,
        ));
    }

    if let Some(csv_path) = &args.csv {
        let mut text = String::from("skip,fps,lat_p50_ms,lat_p95_ms,det_calls,mota,motp\n");
        for (skip, fps, p50, p95, det_calls, mota_value, motp_value) in &rows {
            text.push_str(&format!(
                "{skip},{fps:.2},{p50:.3},{p95:.3},{det_calls},{},{}\n",
                metric(*mota_value),
                metric(*motp_value)
            ));
        }
        std::fs::write(csv_path, text).map_err(|source| Error::io(csv_path, source))?;
        println!("sweep table written to {}", csv_path.display());
    }
    Ok(())
}
