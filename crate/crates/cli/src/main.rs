//! `breathvad`: respiration-based voice activity detection pipeline.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use breathvad::config::{derive_seed, RunConfig};
use breathvad::dataset::{
    chunk, class_weights, dataset_to_csv, label_from_intervals, parse_folds, read_dataset,
    render_folds, speaker_folds, LabeledSequence,
};
use breathvad::eval::{export_curves, export_transitions, metrics, transition_errors, Report, ReportBlock};
use breathvad::flow::build_flow_matrix_with;
use breathvad::models::{
    build_model, predict_sequence, predictions_from_csv, predictions_to_csv, train, Model,
    ModelSpec, THRESHOLD,
};
use breathvad::rp::{bandpass, extract_rp_with, RespirationPattern};
use breathvad::synth::{synth_rp_dataset, synth_video, SynthRpParams, SynthVideoParams};
use breathvad::video_io::{load_frames, write_frames, Manifest};
use breathvad::{format_sig, Exec};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "breathvad", version, about = "Voice activity detection from video-derived respiration patterns")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Run-config overrides shared by every subcommand. Precedence: flags, then
/// `--config`, then built-in defaults.
#[derive(Args, Clone, Debug, Default)]
struct Common {
    /// Key/value run-config file (a previous run_config.txt works).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override any run-config key, e.g. `--set epochs=10`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Top-level seed; stage seeds are derived from it. [default: 0]
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run single-threaded.
    #[arg(long, global = true)]
    sequential: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic breathing video (PGM frames + manifest).
    SynthVideo(SynthVideoArgs),
    /// Generate a labeled synthetic respiration dataset.
    SynthRp(SynthRpArgs),
    /// Extract the respiration pattern from a video manifest.
    ExtractRp(ExtractRpArgs),
    /// Collect labeled RPs, write the merged dataset, chunk layout and speaker folds.
    MakeDataset(MakeDatasetArgs),
    /// Train a model on the training speakers of one split.
    Train(TrainArgs),
    /// Predict per-sample speech probabilities.
    Predict(PredictArgs),
    /// Score predictions against labels.
    Eval(EvalArgs),
    /// Merge eval reports into mean ± std summaries.
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthVideoArgs {
    /// Output directory for frames, manifest.txt and displacement.csv.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 900)]
    frames: usize,
    #[arg(long, default_value_t = 30.0)]
    fps: f64,
    /// Peak vertical displacement in pixels.
    #[arg(long, default_value_t = 1.5)]
    amplitude: f64,
    /// Breathing frequency in Hz.
    #[arg(long, default_value_t = 0.2)]
    freq: f64,
    /// Texture blur sigma in pixels.
    #[arg(long, default_value_t = 3.0)]
    smoothness: f64,
    /// Additive intensity noise sigma.
    #[arg(long, default_value_t = 0.005)]
    noise: f64,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct SynthRpArgs {
    /// Output directory for dataset.csv.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 32)]
    speakers: usize,
    /// Seconds per speaker.
    #[arg(long, default_value_t = 60.0)]
    duration: f64,
    #[arg(long, default_value_t = 30.0)]
    fps: f64,
    #[arg(long, default_value_t = 0.35)]
    speech_fraction: f64,
    /// Speech distortion strength; 0 makes speech indistinguishable.
    #[arg(long, default_value_t = 1.0)]
    distortion: f64,
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct ExtractRpArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Output RP CSV.
    #[arg(long)]
    out: PathBuf,
    /// Skip the band-pass filter.
    #[arg(long)]
    raw: bool,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct MakeDatasetArgs {
    /// Labeled dataset CSV (speaker_id,index,rp_value,label). Repeatable.
    #[arg(long)]
    dataset: Vec<PathBuf>,
    /// RP CSV whose labels come from the matching `--manifest`. Repeatable;
    /// the speaker id is the file stem.
    #[arg(long)]
    rp: Vec<PathBuf>,
    #[arg(long)]
    manifest: Vec<PathBuf>,
    #[arg(long, default_value_t = 30.0)]
    fps: f64,
    /// Output directory for dataset.csv, chunks.csv and splits.txt.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset CSV (or a make-dataset output directory).
    #[arg(long)]
    dataset: PathBuf,
    /// Split file; without it every speaker is used for training.
    #[arg(long)]
    splits: Option<PathBuf>,
    /// Fold held out for testing.
    #[arg(long, default_value_t = 0)]
    fold: usize,
    /// Architecture: mlp, cnn1d, bilstm, convlstm.
    #[arg(long)]
    arch: Option<String>,
    /// Chunk mode: overlap or non_overlap.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, default_value_t = 30.0)]
    fps: f64,
    /// Output directory for model.ckpt, history.csv and run_config.txt.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// A single RP CSV.
    #[arg(long, conflicts_with = "dataset")]
    rp: Option<PathBuf>,
    /// Dataset CSV; writes one prediction file per speaker into `--out`.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// With `--dataset`: only the test speakers of this fold.
    #[arg(long, requires = "fold")]
    splits: Option<PathBuf>,
    #[arg(long)]
    fold: Option<usize>,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long, default_value_t = 30.0)]
    fps: f64,
    /// Output CSV (with `--rp`) or directory (with `--dataset`).
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct EvalArgs {
    /// A prediction CSV, or a directory of `<speaker>.csv` files.
    #[arg(long)]
    predictions: PathBuf,
    /// Dataset CSV holding the labels.
    #[arg(long, conflicts_with = "manifest")]
    dataset: Option<PathBuf>,
    /// Manifest whose speech intervals give the labels of a single prediction file.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Speaker id when `--predictions` is a single file and `--dataset` is used.
    #[arg(long)]
    speaker: Option<String>,
    #[arg(long, default_value_t = 30.0)]
    fps: f64,
    /// Report block name, e.g. `convlstm/overlap/fold0`.
    #[arg(long, default_value = "run")]
    name: String,
    /// Output directory for report.txt, roc.csv, pr.csv and transition CSVs.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct ReportArgs {
    /// Eval report files to merge.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

fn resolve(common: &Common, extra: &[(&str, Option<String>)]) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &common.config {
        cfg = RunConfig::load(path).with_context(|| format!("config {}", path.display()))?;
    }
    for o in &common.overrides {
        let (k, v) = o
            .split_once('=')
            .with_context(|| format!("config: --set expects KEY=VALUE, got {o:?}"))?;
        cfg.set(k.trim(), v.trim()).context("config")?;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    for (k, v) in extra {
        if let Some(v) = v {
            cfg.set(k, v).context("config")?;
        }
    }
    cfg.validate().context("config")?;
    Ok(cfg)
}

fn exec(common: &Common) -> Exec {
    if common.sequential {
        Exec::Sequential
    } else {
        Exec::Parallel
    }
}

/// Record the effective config (plus informational comments) next to outputs.
fn write_run_config(dir: &Path, cfg: &RunConfig, stage: &str, notes: &[(&str, String)]) -> Result<()> {
    let mut text = format!("# stage: {stage}\n");
    for (k, v) in notes {
        text.push_str(&format!("# {k}: {v}\n"));
    }
    text.push_str(&cfg.to_kv().render());
    let path = dir.join("run_config.txt");
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn dataset_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join("dataset.csv")
    } else {
        p.to_path_buf()
    }
}

fn synth_video_cmd(a: SynthVideoArgs) -> Result<()> {
    let cfg = resolve(&a.common, &[])?;
    let seed = derive_seed(cfg.seed, "synth-video");
    let p = SynthVideoParams {
        width: a.width,
        height: a.height,
        frames: a.frames,
        fps: a.fps,
        amplitude: a.amplitude,
        freq_hz: a.freq,
        smoothness: a.smoothness,
        noise_sigma: a.noise,
        seed,
    };
    let (seq, d) = synth_video(&p)?;
    create_dir(&a.out)?;
    let manifest = write_frames(&seq, &a.out)?;
    manifest.write(&a.out.join("manifest.txt"))?;
    let mut csv = String::from("index,time_s,displacement_px\n");
    for (i, v) in d.iter().enumerate() {
        csv.push_str(&format!("{i},{},{v}\n", i as f64 / a.fps));
    }
    fs::write(a.out.join("displacement.csv"), csv).context("writing displacement.csv")?;
    write_run_config(&a.out, &cfg, "synth-video", &[("video_seed", seed.to_string())])
}

fn synth_rp_cmd(a: SynthRpArgs) -> Result<()> {
    let cfg = resolve(&a.common, &[])?;
    let seed = derive_seed(cfg.seed, "synth-rp");
    let p = SynthRpParams {
        speakers: a.speakers,
        duration_s: a.duration,
        fps: a.fps,
        speech_fraction: a.speech_fraction,
        distortion: a.distortion,
        noise_sigma: a.noise,
        seed,
        ..SynthRpParams::default()
    };
    let data = synth_rp_dataset(&p)?;
    create_dir(&a.out)?;
    fs::write(a.out.join("dataset.csv"), dataset_to_csv(&data)?).context("writing dataset.csv")?;
    write_run_config(&a.out, &cfg, "synth-rp", &[("dataset_seed", seed.to_string())])
}

fn extract_rp_cmd(a: ExtractRpArgs) -> Result<()> {
    let cfg = resolve(&a.common, &[])?;
    let ex = exec(&a.common);
    let manifest = Manifest::read(&a.manifest)?;
    let seq = load_frames(&manifest)?;
    let f = build_flow_matrix_with(&seq, cfg.eps, ex)?;
    let seed = derive_seed(cfg.seed, "extract-rp");
    let (mut rp, diag) = extract_rp_with(&f, seq.fps(), cfg.tol, cfg.max_iter, seed, ex)?;
    if !a.raw {
        rp = bandpass(&rp, cfg.low_bpm, cfg.high_bpm)?;
    }
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    rp.write_csv(&a.out)?;
    let dir = a.out.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    write_run_config(
        dir,
        &cfg,
        "extract-rp",
        &[
            ("power_iteration_seed", seed.to_string()),
            ("sigma", diag.sigma.to_string()),
            ("iterations", diag.iterations.to_string()),
            ("residual", diag.residual.to_string()),
            ("gap_ratio", diag.gap_ratio.to_string()),
            ("sign_flipped", diag.sign_flipped.to_string()),
        ],
    )
}

fn make_dataset_cmd(a: MakeDatasetArgs) -> Result<()> {
    let cfg = resolve(&a.common, &[])?;
    let mut all: Vec<LabeledSequence> = Vec::new();
    for p in &a.dataset {
        all.extend(read_dataset(&dataset_path(p), a.fps, false)?);
    }
    if a.rp.len() != a.manifest.len() {
        bail!("--rp and --manifest must be given the same number of times");
    }
    for (rp_path, m_path) in a.rp.iter().zip(&a.manifest) {
        let manifest = Manifest::read(m_path)?;
        let rp = RespirationPattern::read_csv(rp_path, Some(manifest.fps))?;
        let labels = label_from_intervals(&manifest.speech_intervals, rp.len(), manifest.fps);
        let id = rp_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        all.push(LabeledSequence::new(rp, labels, id)?);
    }
    if all.is_empty() {
        bail!("no input sequences; pass --dataset or --rp/--manifest");
    }
    let ids: Vec<String> = all.iter().map(|s| s.speaker_id.clone()).collect();
    let seed = derive_seed(cfg.seed, "split");
    let folds = speaker_folds(&ids, cfg.folds, seed)?;
    create_dir(&a.out)?;
    fs::write(a.out.join("dataset.csv"), dataset_to_csv(&all)?).context("writing dataset.csv")?;
    fs::write(a.out.join("splits.txt"), render_folds(&folds)).context("writing splits.txt")?;
    let mut layout = String::from("speaker_id,chunk,source_offset,valid,mode\n");
    for s in &all {
        let set = chunk(s, cfg.w, cfg.chunk_mode)?;
        for (k, c) in set.chunks.iter().enumerate() {
            layout.push_str(&format!(
                "{},{k},{},{},{}\n",
                s.speaker_id, c.source_offset, c.valid, cfg.chunk_mode
            ));
        }
    }
    fs::write(a.out.join("chunks.csv"), layout).context("writing chunks.csv")?;
    write_run_config(&a.out, &cfg, "make-dataset", &[("split_seed", seed.to_string())])
}

/// Split the dataset into (train, test) by fold; everything trains without a split file.
fn select(
    data: Vec<LabeledSequence>,
    splits: Option<&Path>,
    fold: usize,
) -> Result<(Vec<LabeledSequence>, Vec<LabeledSequence>)> {
    let Some(path) = splits else {
        return Ok((data, Vec::new()));
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let folds = parse_folds(&text)?;
    let test_ids = folds
        .get(fold)
        .with_context(|| format!("fold {fold} not in split file ({} folds)", folds.len()))?;
    Ok(data.into_iter().partition(|s| !test_ids.contains(&s.speaker_id)))
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let cfg = resolve(
        &a.common,
        &[
            ("arch", a.arch.clone()),
            ("chunk_mode", a.mode.clone()),
            ("epochs", a.epochs.map(|e| e.to_string())),
        ],
    )?;
    let data = read_dataset(&dataset_path(&a.dataset), a.fps, false)?;
    let (train_set, _) = select(data, a.splits.as_deref(), a.fold)?;
    let (w_pos, w_neg) = class_weights(train_set.iter().flat_map(|s| s.labels.iter()))?;
    let mut chunks = Vec::new();
    for s in &train_set {
        chunks.extend(chunk(s, cfg.w, cfg.chunk_mode)?.chunks);
    }
    let spec = ModelSpec::new(cfg.arch, cfg.w).with_width_divisor(cfg.width_divisor);
    let init_seed = derive_seed(cfg.seed, "init");
    let train_seed = derive_seed(cfg.seed, "train");
    let mut model = build_model(spec, init_seed)?;
    let mut tc = cfg.train_config(train_seed, w_pos, w_neg);
    tc.exec = exec(&a.common);
    let history = train(&mut model, &chunks, &tc)?;
    create_dir(&a.out)?;
    model.save(&a.out.join("model.ckpt"))?;
    let mut hist = String::from("epoch,loss\n");
    for (e, l) in history.iter().enumerate() {
        hist.push_str(&format!("{},{l}\n", e + 1));
    }
    fs::write(a.out.join("history.csv"), hist).context("writing history.csv")?;
    write_run_config(
        &a.out,
        &cfg,
        "train",
        &[
            ("init_seed", init_seed.to_string()),
            ("train_seed", train_seed.to_string()),
            ("w_pos", w_pos.to_string()),
            ("w_neg", w_neg.to_string()),
            ("train_speakers", train_set.len().to_string()),
            ("chunks", chunks.len().to_string()),
        ],
    )
}

fn predict_cmd(a: PredictArgs) -> Result<()> {
    let cfg = resolve(&a.common, &[("chunk_mode", a.mode.clone())])?;
    let ex = exec(&a.common);
    let model = Model::load(&a.checkpoint)?;
    if let Some(rp_path) = &a.rp {
        let rp = RespirationPattern::read_csv(rp_path, None)?;
        let probs = predict_sequence(&model, &rp, cfg.chunk_mode, ex)?;
        if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
            create_dir(dir)?;
        }
        fs::write(&a.out, predictions_to_csv(&probs, rp.fps)?)
            .with_context(|| format!("writing {}", a.out.display()))?;
        return Ok(());
    }
    let Some(ds) = &a.dataset else {
        bail!("pass --rp or --dataset");
    };
    let data = read_dataset(&dataset_path(ds), a.fps, false)?;
    let targets = match (&a.splits, a.fold) {
        (Some(s), Some(k)) => select(data, Some(s), k)?.1,
        _ => data,
    };
    create_dir(&a.out)?;
    for s in &targets {
        let probs = predict_sequence(&model, &s.rp, cfg.chunk_mode, ex)?;
        let path = a.out.join(format!("{}.csv", s.speaker_id));
        fs::write(&path, predictions_to_csv(&probs, s.rp.fps)?)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    write_run_config(&a.out, &cfg, "predict", &[("speakers", targets.len().to_string())])
}

fn read_predictions(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(predictions_from_csv(&text)?)
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let cfg = resolve(&a.common, &[])?;
    // (probabilities, labels) per recording
    let mut pairs: Vec<(Vec<f64>, Vec<u8>)> = Vec::new();
    if let Some(m) = &a.manifest {
        let manifest = Manifest::read(m)?;
        let probs = read_predictions(&a.predictions)?;
        let labels = label_from_intervals(&manifest.speech_intervals, probs.len(), manifest.fps);
        pairs.push((probs, labels));
    } else {
        let Some(ds) = &a.dataset else {
            bail!("pass --dataset or --manifest for labels");
        };
        let data = read_dataset(&dataset_path(ds), a.fps, false)?;
        if a.predictions.is_dir() {
            for s in &data {
                let path = a.predictions.join(format!("{}.csv", s.speaker_id));
                if path.exists() {
                    pairs.push((read_predictions(&path)?, s.labels.clone()));
                }
            }
            if pairs.is_empty() {
                bail!("no prediction files match speakers in the dataset");
            }
        } else {
            let probs = read_predictions(&a.predictions)?;
            let s = match &a.speaker {
                Some(id) => data.iter().find(|s| &s.speaker_id == id),
                None if data.len() == 1 => data.first(),
                None => bail!("dataset holds several speakers; pass --speaker"),
            }
            .context("speaker not found in dataset")?;
            pairs.push((probs, s.labels.clone()));
        }
    }
    let (mut probs, mut labels) = (Vec::new(), Vec::new());
    let mut block = ReportBlock::new(a.name.clone());
    let mut all_transitions = breathvad::eval::TransitionErrors::default();
    for (p, y) in &pairs {
        if p.len() != y.len() {
            bail!("prediction length {} does not match label length {}", p.len(), y.len());
        }
        let binary: Vec<u8> = p.iter().map(|&v| u8::from(v >= THRESHOLD)).collect();
        let t = transition_errors(&binary, y, a.fps, cfg.match_window_s)?;
        all_transitions.onset_errors_s.extend(&t.onset_errors_s);
        all_transitions.offset_errors_s.extend(&t.offset_errors_s);
        all_transitions.onset_pairs.extend(&t.onset_pairs);
        all_transitions.offset_pairs.extend(&t.offset_pairs);
        all_transitions.onset_misses += t.onset_misses;
        all_transitions.offset_misses += t.offset_misses;
        probs.extend_from_slice(p);
        labels.extend_from_slice(y);
    }
    let m = metrics(&probs, &labels, THRESHOLD)?;
    block.push(&m, Some(&all_transitions));
    create_dir(&a.out)?;
    let report = Report {
        blocks: vec![block],
    };
    fs::write(a.out.join("report.txt"), report.render()).context("writing report.txt")?;
    if m.auroc.is_some() {
        export_curves(&probs, &labels, &a.out)?;
    }
    export_transitions(&all_transitions, a.fps, cfg.match_window_s, &a.out)?;
    for (name, v) in breathvad::eval::Metrics::NAMES.iter().zip(m.values()) {
        println!(
            "{name}: {}",
            v.map_or_else(|| breathvad::eval::UNDEFINED.to_string(), |x| format_sig(x, 4))
        );
    }
    Ok(())
}

fn report_cmd(a: ReportArgs) -> Result<()> {
    resolve(&a.common, &[])?;
    let mut reports = Vec::new();
    for p in &a.inputs {
        let path = if p.is_dir() { p.join("report.txt") } else { p.clone() };
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        reports.push(Report::parse(&text).with_context(|| path.display().to_string())?);
    }
    let merged = Report::merge(&reports);
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    fs::write(&a.out, merged.render()).with_context(|| format!("writing {}", a.out.display()))?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SynthVideo(a) => synth_video_cmd(a).context("synth-video"),
        Command::SynthRp(a) => synth_rp_cmd(a).context("synth-rp"),
        Command::ExtractRp(a) => extract_rp_cmd(a).context("extract-rp"),
        Command::MakeDataset(a) => make_dataset_cmd(a).context("make-dataset"),
        Command::Train(a) => train_cmd(a).context("train"),
        Command::Predict(a) => predict_cmd(a).context("predict"),
        Command::Eval(a) => eval_cmd(a).context("eval"),
        Command::Report(a) => report_cmd(a).context("report"),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
