use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use rayon::prelude::*;

use uwbhar::channel::{simulate_activity, Activity, FrameMatrix, RadioConfig, ScriptParams};
use uwbhar::config::RunConfig;
use uwbhar::dsp::{detect_windows, Preprocessor};
use uwbhar::features::{featurize, Spectrogram, WINDOW_FRAMES};
use uwbhar::harness::{
    ablation, bench_inference, check_disjoint, evaluate, format_ablation, generate_dataset, generate_sample,
    sample_specs, train_network, Dataset, Sample, Split,
};
use uwbhar::io::{read_frames, write_frames, Container, ContainerKind};
use uwbhar::nn::{format_layer_table, layer_table, read_weights, write_weights, Example, Network, Tensor};

#[derive(Parser)]
#[command(name = "uwbhar", version, about = "UWB radar activity recognition pipeline")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory (overrides paths.out_dir).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the configured scene and write `frames.uwbf`.
    Simulate,
    /// Phase correction, slow-time filtering and background subtraction.
    Preprocess {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Motion detection over consecutive windows of a preprocessed file.
    Detect {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Spectrograms of a preprocessed file, or the whole synthetic corpus without `--input`.
    Featurize {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Train on the train split of a featurized corpus.
    Train {
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Evaluate trained weights on the test split.
    Eval {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Classify a paired spectrogram file or every window of a preprocessed file.
    Infer {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Single-sample inference latency.
    Bench {
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Per-layer parameter and FLOP table.
    Params,
    /// Fused versus single-branch networks on the same corpus.
    Ablation {
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
}

struct Ctx {
    cfg: RunConfig,
    out: PathBuf,
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn ensure_out(&self) -> Result<()> {
        fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))
    }

    fn weights(&self, explicit: Option<PathBuf>) -> PathBuf {
        explicit.unwrap_or_else(|| self.path("weights.sanw"))
    }

    fn manifest(&self, explicit: Option<PathBuf>) -> PathBuf {
        explicit.unwrap_or_else(|| self.path("dataset/manifest.csv"))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let line = text.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("error: usage: {line}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let config = matches!(e.downcast_ref::<uwbhar::Error>(), Some(uwbhar::Error::Config(_)));
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::from(if config { 2 } else { 1 })
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(uwbhar::Error::Config("--threads must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let out = cli.out.clone().unwrap_or_else(|| cfg.paths.out_dir.clone());
    let ctx = Ctx { cfg, out };
    match cli.command {
        Command::Simulate => simulate(&ctx),
        Command::Preprocess { input } => preprocess(&ctx, input),
        Command::Detect { input } => detect(&ctx, input),
        Command::Featurize { input: Some(input) } => featurize_file(&ctx, &input),
        Command::Featurize { input: None } => featurize_corpus(&ctx),
        Command::Train { manifest } => train(&ctx, manifest),
        Command::Eval { manifest, weights } => eval(&ctx, manifest, weights),
        Command::Infer { input, weights } => infer(&ctx, &input, weights),
        Command::Bench { weights } => bench(&ctx, weights),
        Command::Params => params(&ctx),
        Command::Ablation { manifest } => run_ablation(&ctx, manifest),
    }
}

fn simulate(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.cfg;
    let scene = &cfg.scene;
    let data_cfg = cfg.dataset();
    let env = data_cfg.environment(scene.environment_id);
    let params = ScriptParams {
        start_range_m: scene.start_range_m,
        torso_attenuation: data_cfg.calibration.torso_amplitude(scene.start_range_m),
        lead_in_s: scene.lead_in_s,
        speed_scale: 1.0,
        duration_scale: 1.0,
        direction: scene.direction,
    };
    let profile = scene.activity.script_with(&params);
    let noise = env.noise(data_cfg.seed);
    let frames = simulate_activity(&cfg.radio, &env.static_paths, &profile, &noise, scene.duration_s)?;
    ctx.ensure_out()?;
    let path = ctx.path("frames.uwbf");
    write_frames(&path, &frames)?;
    println!(
        "wrote {} ({} frames x {} bins, {} at {:.2} m in environment {})",
        path.display(),
        frames.frames(),
        frames.bins(),
        scene.activity,
        scene.start_range_m,
        scene.environment_id
    );
    Ok(())
}

fn preprocess(ctx: &Ctx, input: Option<PathBuf>) -> Result<()> {
    let input = input.unwrap_or_else(|| ctx.path("frames.uwbf"));
    let frames = read_frames(&input).with_context(|| format!("reading {}", input.display()))?;
    let cleaned = Preprocessor::default().run(&frames)?;
    ctx.ensure_out()?;
    let path = ctx.path("preprocessed.uwbf");
    write_frames(&path, &cleaned)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn detection_lines(frames: &FrameMatrix, ctx: &Ctx) -> Result<Vec<(usize, bool, String)>> {
    Ok(detect_windows(frames, &ctx.cfg.detector)?
        .into_iter()
        .map(|(start, r)| {
            let line = format!("{start}, {}, {}, {:.6e}, {:.6e}", r.detected, r.peak_bin, r.peak_sd(), r.threshold);
            (start, r.detected, line)
        })
        .collect())
}

fn detect(ctx: &Ctx, input: Option<PathBuf>) -> Result<()> {
    let input = input.unwrap_or_else(|| ctx.path("preprocessed.uwbf"));
    let frames = read_frames(&input).with_context(|| format!("reading {}", input.display()))?;
    let mut text = String::from("window_start_frame, detected, peak_bin, peak_sd, threshold\n");
    for (_, _, line) in detection_lines(&frames, ctx)? {
        text.push_str(&line);
        text.push('\n');
    }
    print!("{text}");
    ctx.ensure_out()?;
    fs::write(ctx.path("detections.txt"), text)?;
    Ok(())
}

fn write_pair(path: &Path, time: &Spectrogram, freq: &Spectrogram, radio: &RadioConfig) -> Result<()> {
    Container::from_pair(time, freq, radio)?.write(path)?;
    Ok(())
}

fn featurize_file(ctx: &Ctx, input: &Path) -> Result<()> {
    let frames = read_frames(input).with_context(|| format!("reading {}", input.display()))?;
    let dir = ctx.path("windows");
    fs::create_dir_all(&dir)?;
    let mut count = 0;
    for (start, detected, line) in detection_lines(&frames, ctx)? {
        if !detected {
            continue;
        }
        let (time, freq) = featurize(&frames.window(start, WINDOW_FRAMES)?)?;
        let path = dir.join(format!("window-{start:06}.uwbf"));
        write_pair(&path, &time, &freq, &frames.radio)?;
        println!("{line} -> {}", path.display());
        count += 1;
    }
    println!("{count} windows with motion");
    Ok(())
}

fn featurize_corpus(ctx: &Ctx) -> Result<()> {
    let data_cfg = ctx.cfg.dataset();
    let pair = generate_dataset(&data_cfg)?;
    let dir = ctx.path("dataset");
    fs::create_dir_all(&dir)?;
    let radio = RadioConfig::default();
    let mut manifest = String::from("sample_path,label,environment_id,split\n");
    for set in [&pair.train, &pair.test] {
        set.samples.par_iter().try_for_each(|s| {
            write_pair(&dir.join(format!("{}.uwbf", s.file_stem(set.split))), &s.time, &s.freq, &radio)
        })?;
        let body = set.manifest(|s| format!("{}.uwbf", s.file_stem(set.split)));
        manifest.push_str(body.split_once('\n').map_or("", |(_, rest)| rest));
    }
    let path = dir.join("manifest.csv");
    fs::write(&path, manifest)?;
    println!("wrote {} train and {} test samples to {}", pair.train.len(), pair.test.len(), dir.display());
    Ok(())
}

struct ManifestRow {
    path: PathBuf,
    label: Activity,
    environment_id: u32,
    split: Split,
}

fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut lines = text.lines();
    if lines.next() != Some("sample_path,label,environment_id,split") {
        bail!("{}: unexpected manifest header", path.display());
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').collect();
            let [p, label, env, split] = f.as_slice() else {
                bail!("{}:{}: expected 4 fields", path.display(), i + 2);
            };
            let split = match *split {
                "train" => Split::Train,
                "test" => Split::Test,
                other => bail!("{}:{}: unknown split {other}", path.display(), i + 2),
            };
            Ok(ManifestRow {
                path: base.join(p),
                label: label.parse().map_err(|e| anyhow!("{}:{}: {e}", path.display(), i + 2))?,
                environment_id: env.parse().with_context(|| format!("{}:{}: bad environment id", path.display(), i + 2))?,
                split,
            })
        })
        .collect()
}

fn load_split(rows: &[ManifestRow], split: Split) -> Result<Dataset> {
    let selected: Vec<&ManifestRow> = rows.iter().filter(|r| r.split == split).collect();
    let samples = selected
        .par_iter()
        .enumerate()
        .map(|(index, r)| {
            let (time, freq) = Container::read(&r.path).and_then(|c| c.to_pair()).with_context(|| format!("reading {}", r.path.display()))?;
            Ok(Sample { time, freq, label: r.label, environment_id: r.environment_id, index })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { split, samples })
}

fn load_corpus(ctx: &Ctx, manifest: Option<PathBuf>) -> Result<(Dataset, Dataset)> {
    let rows = read_manifest(&ctx.manifest(manifest))?;
    let train = load_split(&rows, Split::Train)?;
    let test = load_split(&rows, Split::Test)?;
    check_disjoint(&train.environment_ids(), &test.environment_ids())?;
    Ok((train, test))
}

fn train(ctx: &Ctx, manifest: Option<PathBuf>) -> Result<()> {
    let (train_set, test_set) = load_corpus(ctx, manifest)?;
    if train_set.is_empty() {
        bail!("manifest has no training samples");
    }
    let spec = ctx.cfg.network.to_spec()?;
    let examples = train_set.examples::<f32>();
    let mut log = String::new();
    let (net, _) = train_network(&spec, &ctx.cfg.training(), ctx.cfg.network.init_seed, &examples, |epoch, loss| {
        let line = format!("epoch {} loss {loss:.6}", epoch + 1);
        println!("{line}");
        log.push_str(&line);
        log.push('\n');
    })?;
    ctx.ensure_out()?;
    write_weights(ctx.weights(None), &net)?;
    fs::write(ctx.path("train_log.txt"), log)?;
    if !test_set.is_empty() {
        println!("test macro_f1 {:.4}", evaluate(&net, &test_set)?.macro_f1);
    }
    println!("wrote {}", ctx.weights(None).display());
    Ok(())
}

fn eval(ctx: &Ctx, manifest: Option<PathBuf>, weights: Option<PathBuf>) -> Result<()> {
    let (_, test_set) = load_corpus(ctx, manifest)?;
    if test_set.is_empty() {
        bail!("manifest has no test samples");
    }
    let net = read_weights(ctx.weights(weights), &ctx.cfg.network.to_spec()?)?;
    let report = evaluate(&net, &test_set)?;
    ctx.ensure_out()?;
    let names: Vec<&str> = Activity::ALL.iter().map(|a| a.as_str()).collect();
    fs::write(ctx.path("metrics.txt"), report.to_table())?;
    fs::write(ctx.path("metrics.json"), report.to_json())?;
    fs::write(ctx.path("confusion.csv"), report.confusion.to_csv(&names))?;
    print!("{}", report.to_table());
    Ok(())
}

fn load_or_init(ctx: &Ctx, weights: Option<PathBuf>) -> Result<Network<f32>> {
    let spec = ctx.cfg.network.to_spec()?;
    let path = ctx.weights(weights.clone());
    if weights.is_some() || path.exists() {
        Ok(read_weights(&path, &spec)?)
    } else {
        Ok(Network::new(spec, ctx.cfg.network.init_seed)?)
    }
}

fn format_probs(p: &[f32]) -> String {
    p.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(" ")
}

fn infer(ctx: &Ctx, input: &Path, weights: Option<PathBuf>) -> Result<()> {
    let net = read_weights(ctx.weights(weights), &ctx.cfg.network.to_spec()?)?;
    let container = Container::read(input).with_context(|| format!("reading {}", input.display()))?;
    let classify = |time: &Spectrogram, freq: &Spectrogram| -> Result<(Activity, Vec<f32>)> {
        let p = net.forward(&Tensor::from_spectrogram(time), &Tensor::from_spectrogram(freq))?;
        let best = (0..p.len()).fold(0, |b, i| if p[i] > p[b] { i } else { b });
        Ok((Activity::from_index(best).expect("class index"), p))
    };
    match container.kind {
        ContainerKind::PairedSpectrogram => {
            let (time, freq) = container.to_pair()?;
            let (activity, p) = classify(&time, &freq)?;
            println!("{activity} {}", format_probs(&p));
        }
        ContainerKind::Frames => {
            let frames = container.to_frames()?;
            println!("window_start_frame, detected, activity, probabilities");
            for (start, detected, _) in detection_lines(&frames, ctx)? {
                if detected {
                    let (time, freq) = featurize(&frames.window(start, WINDOW_FRAMES)?)?;
                    let (activity, p) = classify(&time, &freq)?;
                    println!("{start}, true, {activity}, {}", format_probs(&p));
                } else {
                    println!("{start}, false, none, -");
                }
            }
        }
        other => bail!("cannot classify a {other:?} container"),
    }
    Ok(())
}

fn bench(ctx: &Ctx, weights: Option<PathBuf>) -> Result<()> {
    let net = load_or_init(ctx, weights)?;
    let data_cfg = ctx.cfg.dataset();
    let spec = sample_specs(&data_cfg, Split::Test)[0];
    let example: Example<f32> = generate_sample(&data_cfg, &spec)?.example();
    let stats = bench_inference(&net, &example, ctx.cfg.bench.runs)?;
    println!("{}", stats.summary());
    println!("p95/median {:.3}", stats.p95_s / stats.median_s);
    ctx.ensure_out()?;
    fs::write(ctx.path("bench.json"), serde_json::to_string_pretty(&stats)?)?;
    Ok(())
}

fn params(ctx: &Ctx) -> Result<()> {
    let spec = ctx.cfg.network.to_spec()?;
    print!("{}", format_layer_table(&layer_table(&spec)));
    Ok(())
}

fn run_ablation(ctx: &Ctx, manifest: Option<PathBuf>) -> Result<()> {
    let (train_set, test_set) = load_corpus(ctx, manifest)?;
    let spec = ctx.cfg.network.to_spec()?;
    let rows = ablation(&spec, &ctx.cfg.training(), ctx.cfg.network.init_seed, &train_set, &test_set)?;
    let table = format_ablation(&rows);
    print!("{table}");
    ctx.ensure_out()?;
    fs::write(ctx.path("ablation.txt"), table)?;
    fs::write(ctx.path("ablation.json"), serde_json::to_string_pretty(&rows)?)?;
    Ok(())
}
