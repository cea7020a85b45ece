//! Subcommand definitions and their implementations.

use std::fs;
use std::path::PathBuf;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use tpswarp::io::{read_frames, read_landmarks, write_frames, write_png};
use tpswarp::metrics::lip_aperture;
use tpswarp::norm::DEFAULT_EPS;
use tpswarp::{
    adain, build_bank, instance_norm, mouth_mask, photometric_error, ssiou, FeatureMap, KernelDistance, MaskImage,
    StyleParams, TextureBank,
};

use crate::config::{Overrides, PipelineConfig};
use crate::pipeline::{warp_clip, Mode};
use crate::synth::{generate, write_clip, SynthConfig};

#[derive(Debug, Parser)]
#[command(name = "tpswarp", version, about = "Landmark-driven mouth retrieval, temporal TPS warping and blending")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a texture bank from a clip's frames and landmarks.
    Bank(BankArgs),
    /// Retrieve, warp and composite mouth textures for a query clip.
    Warp(WarpArgs),
    /// Compare generated frames against ground truth.
    Metrics(MetricsArgs),
    /// Generate a deterministic synthetic clip.
    Synth(SynthArgs),
    /// Check instance normalization / AdaIN statistics on a feature map.
    AdainCheck(AdainArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct PipelineArgs {
    /// JSON pipeline configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub window_len: Option<usize>,
    /// Mouth crop side in pixels (even).
    #[arg(long)]
    pub crop: Option<usize>,
    #[arg(long)]
    pub alpha1: Option<f64>,
    #[arg(long)]
    pub alpha2: Option<f64>,
    #[arg(long)]
    pub alpha3: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Laplacian pyramid levels.
    #[arg(long)]
    pub levels: Option<usize>,
    /// Distance inside the TPS kernel: euclidean or l1.
    #[arg(long, value_parser = parse_distance)]
    pub tps_distance: Option<KernelDistance>,
    #[arg(long)]
    pub ridge: Option<f64>,
}

fn parse_distance(s: &str) -> std::result::Result<KernelDistance, String> {
    match s.to_ascii_lowercase().as_str() {
        "euclidean" => Ok(KernelDistance::Euclidean),
        "l1" => Ok(KernelDistance::L1),
        other => Err(format!("unknown distance '{other}', expected euclidean or l1")),
    }
}

impl PipelineArgs {
    pub fn resolve(&self) -> Result<PipelineConfig> {
        let o = Overrides {
            window_len: self.window_len,
            crop: self.crop,
            alpha1: self.alpha1,
            alpha2: self.alpha2,
            alpha3: self.alpha3,
            max_iters: self.max_iters,
            levels: self.levels,
            tps_distance: self.tps_distance,
            ridge: self.ridge,
        };
        PipelineConfig::load(self.config.as_deref(), &o)
    }
}

#[derive(Debug, Clone, Args)]
pub struct BankArgs {
    #[arg(long)]
    pub frames: PathBuf,
    #[arg(long)]
    pub landmarks: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Debug, Clone, Args)]
pub struct WarpArgs {
    #[arg(long)]
    pub bank: PathBuf,
    /// Query landmark JSON (full-frame coordinates).
    #[arg(long)]
    pub landmarks: PathBuf,
    /// Target face frames.
    #[arg(long)]
    pub frames: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Mode::Temporal)]
    pub mode: Mode,
    /// Also write the blending masks as 0/255 PNGs.
    #[arg(long)]
    pub masks: bool,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Debug, Clone, Args)]
pub struct MetricsArgs {
    #[arg(long)]
    pub gen: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    /// Landmarks of the generated clip; also used for the photometric mask.
    #[arg(long)]
    pub landmarks: Option<PathBuf>,
    /// Landmarks of the reference clip for SSIOU (defaults to --landmarks).
    #[arg(long)]
    pub gt_landmarks: Option<PathBuf>,
    #[arg(long)]
    pub ssiou: bool,
    #[arg(long)]
    pub photometric: bool,
    /// Restrict the photometric error to the union of per-frame mouth masks.
    #[arg(long)]
    pub mask: bool,
    /// Directory for metrics.json and the distance map.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0)]
    pub speaker: u64,
    #[arg(long, default_value_t = 36)]
    pub frames: usize,
    /// Landmark noise standard deviation in pixels.
    #[arg(long, default_value_t = 1.0)]
    pub jitter: f64,
    #[arg(long, default_value_t = 256)]
    pub width: usize,
    #[arg(long, default_value_t = 256)]
    pub height: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct AdainArgs {
    /// JSON with `content` (rows of values), `gamma`, `beta` and optional `eps`.
    /// Without it a random 8×256 map is checked.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Runs a command and returns the process exit code.
pub fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Bank(a) => cmd_bank(&a),
        Command::Warp(a) => cmd_warp(&a),
        Command::Metrics(a) => cmd_metrics(&a),
        Command::Synth(a) => cmd_synth(&a),
        Command::AdainCheck(a) => cmd_adain_check(&a),
    }
}

pub fn cmd_bank(a: &BankArgs) -> Result<i32> {
    let cfg = a.pipeline.resolve()?;
    let frames = read_frames(&a.frames).with_context(|| format!("reading frames from {}", a.frames.display()))?;
    let landmarks = read_landmarks(&a.landmarks).with_context(|| format!("reading {}", a.landmarks.display()))?;
    let bank = build_bank(&frames, &landmarks, cfg.window_len, cfg.crop_spec()?)?;
    bank.save(&a.out)?;
    println!("bank: {} entries of {} frames -> {}", bank.len(), bank.window_len(), a.out.display());
    Ok(0)
}

pub fn cmd_warp(a: &WarpArgs) -> Result<i32> {
    let cfg = a.pipeline.resolve()?;
    let bank = TextureBank::load(&a.bank).with_context(|| format!("loading bank {}", a.bank.display()))?;
    if a.pipeline.window_len.is_some() && cfg.window_len != bank.window_len() {
        bail!("--window-len {} does not match the bank's {}", cfg.window_len, bank.window_len());
    }
    let query = read_landmarks(&a.landmarks).with_context(|| format!("reading {}", a.landmarks.display()))?;
    let faces = read_frames(&a.frames).with_context(|| format!("reading frames from {}", a.frames.display()))?;
    let out = warp_clip(&bank, &query, &faces, a.mode, &cfg)?;

    write_frames(&a.out.join("frames"), &out.frames)?;
    if a.masks {
        let dir = a.out.join("masks");
        fs::create_dir_all(&dir)?;
        for (i, m) in out.masks.iter().enumerate() {
            if let Some(m) = m {
                write_png(&tpswarp::io::frame_path(&dir, i), &m.to_image())?;
            }
        }
    }
    fs::write(a.out.join("config.json"), serde_json::to_string_pretty(&cfg)?)?;
    fs::write(a.out.join("report.json"), serde_json::to_string_pretty(&out.report)?)?;
    for w in out.report.windows.iter().filter(|w| w.error.is_some()) {
        eprintln!("window {} (frames {}..{}): {}", w.window, w.start, w.start + w.len, w.error.as_deref().unwrap_or(""));
    }
    println!(
        "warp: {} windows, {} failed -> {}",
        out.report.windows.len(),
        out.report.failed,
        a.out.display()
    );
    Ok(if out.report.failed == 0 { 0 } else { 1 })
}

fn union_mask(landmarks: &tpswarp::LandmarkSequence, width: usize, height: usize) -> Result<MaskImage> {
    let mut values = vec![0u8; width * height];
    for (t, f) in landmarks.frames().iter().enumerate() {
        let m = mouth_mask(f, width, height).with_context(|| format!("mask for frame {t}"))?;
        for (v, &k) in values.iter_mut().zip(m.values()) {
            *v |= k;
        }
    }
    Ok(MaskImage::new(width, height, values)?)
}

pub fn cmd_metrics(a: &MetricsArgs) -> Result<i32> {
    ensure!(a.ssiou || a.photometric, "nothing to do: pass --ssiou and/or --photometric");
    let mut report = serde_json::Map::new();

    let landmarks = a.landmarks.as_deref().map(read_landmarks).transpose()?;
    if a.photometric {
        let gen = read_frames(&a.gen)?;
        let gt = read_frames(&a.gt)?;
        let mask = if a.mask {
            let lm = landmarks.as_ref().context("--mask needs --landmarks")?;
            ensure!(lm.len() == gen.len(), "{} landmark frames but {} generated frames", lm.len(), gen.len());
            let f = gen.frame(0);
            Some(union_mask(lm, f.width(), f.height())?)
        } else {
            None
        };
        let pe = photometric_error(&gen, &gt, mask.as_ref())?;
        let mut entry = json!({ "mean": pe.mean, "frames": gen.len(), "masked": mask.is_some() });
        if let Some(dir) = &a.out {
            fs::create_dir_all(dir)?;
            let (img, scale) = pe.map.to_image();
            write_png(&dir.join("distance_map.png"), &img)?;
            let side = json!({ "scale": scale, "max": pe.map.max(), "units": "mean absolute intensity difference, 0-255" });
            fs::write(dir.join("distance_map.json"), serde_json::to_string_pretty(&side)?)?;
            entry["map"] = json!("distance_map.png");
        }
        report.insert("photometric".into(), entry);
    }
    if a.ssiou {
        let gen_lm = landmarks.as_ref().context("--ssiou needs --landmarks")?;
        let gt_lm = match &a.gt_landmarks {
            Some(p) => read_landmarks(p)?,
            None => gen_lm.clone(),
        };
        let value = ssiou(&lip_aperture(gen_lm)?, &lip_aperture(&gt_lm)?)?;
        report.insert("ssiou".into(), json!(value));
    }

    let text = serde_json::to_string_pretty(&report)?;
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("metrics.json"), &text)?;
    }
    println!("{text}");
    Ok(0)
}

pub fn cmd_synth(a: &SynthArgs) -> Result<i32> {
    let cfg = SynthConfig {
        seed: a.seed,
        speaker: a.speaker,
        frames: a.frames,
        jitter: a.jitter,
        width: a.width,
        height: a.height,
    };
    let clip = generate(&cfg)?;
    write_clip(&clip, &a.out)?;
    fs::write(a.out.join("synth.json"), serde_json::to_string_pretty(&cfg)?)?;
    println!("synth: {} frames -> {}", clip.frames.len(), a.out.display());
    Ok(0)
}

#[derive(Debug, Deserialize)]
struct AdainInput {
    content: Vec<Vec<f64>>,
    gamma: Vec<f64>,
    beta: Vec<f64>,
    eps: Option<f64>,
}

#[derive(Debug, Serialize)]
struct ChannelCheck {
    mean: f64,
    std: f64,
    expected_mean: f64,
    expected_std: f64,
    ok: bool,
}

fn check(values: &[f64], expected_mean: f64, expected_std: f64) -> ChannelCheck {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let ok = (mean - expected_mean).abs() <= 1e-9 * expected_mean.abs().max(1.0)
        && (std - expected_std).abs() <= 1e-9 * expected_std.max(1.0);
    ChannelCheck {
        mean,
        std,
        expected_mean,
        expected_std,
        ok,
    }
}

/// Checks per-channel output moments against their closed forms.
pub fn adain_report(content: &FeatureMap, style: &StyleParams, eps: f64) -> Result<(serde_json::Value, bool)> {
    let normed = instance_norm(content, eps);
    let modulated = adain(content, style, eps)?;
    let mut norm_checks = Vec::new();
    let mut adain_checks = Vec::new();
    for c in 0..content.channels() {
        let (_, sigma) = content.moments(c);
        let shrink = sigma / (sigma + eps);
        norm_checks.push(check(normed.channel(c), 0.0, shrink));
        adain_checks.push(check(modulated.channel(c), style.beta[c], style.gamma[c].abs() * shrink));
    }
    let pass = norm_checks.iter().chain(&adain_checks).all(|c| c.ok);
    let value = json!({
        "channels": content.channels(),
        "length": content.length(),
        "eps": eps,
        "instance_norm": norm_checks,
        "adain": adain_checks,
        "pass": pass,
    });
    Ok((value, pass))
}

pub fn cmd_adain_check(a: &AdainArgs) -> Result<i32> {
    let (content, style, eps) = match &a.input {
        Some(p) => {
            let input: AdainInput = serde_json::from_str(&fs::read_to_string(p)?)?;
            (
                FeatureMap::from_rows(input.content)?,
                StyleParams::new(input.gamma, input.beta)?,
                input.eps.unwrap_or(DEFAULT_EPS),
            )
        }
        None => random_adain_input(a.seed)?,
    };
    let (report, pass) = adain_report(&content, &style, eps)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(if pass { 0 } else { 1 })
}

fn random_adain_input(seed: u64) -> Result<(FeatureMap, StyleParams, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = (0..8)
        .map(|_| {
            let s = rng.random_range(0.5..5.0);
            let m = rng.random_range(-3.0..3.0);
            (0..256).map(|_| m + s * rng.random_range(-1.0..1.0)).collect()
        })
        .collect();
    let gamma = (0..8).map(|_| rng.random_range(-2.0..2.0)).collect();
    let beta = (0..8).map(|_| rng.random_range(-2.0..2.0)).collect();
    Ok((FeatureMap::from_rows(rows)?, StyleParams::new(gamma, beta)?, DEFAULT_EPS))
}
