//! Command-line entry point.
//!
//! Exit codes: 0 success, 1 runtime error (a JSON object with the error
//! name is written to stderr), 2 usage error.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::analysis::{extract_regions, layer_range_stats, scaling_curve, token_heatmap};
use crate::io::{
    captures_csv, curve_csv, heatmap_pgm, mask_pgm, matrix_csv, parse_captures_csv, read_text,
    stats_csv, write_file,
};
use crate::masks::{build_sensitivity, MaskOptions, DEFAULT_GAMMA_IMAGE, DEFAULT_GAMMA_TEXT};
use crate::mini_dit::{
    i2t_mean, matrix_checksum, token_exchange, CaptureSpec, ExchangePlan, MiniDit, MiniDitConfig,
    RunOptions, StreamState, TuneMode, Tuning,
};
use crate::prompt::{classify_tokens, parse_prompt_spec, Lexicon, PromptSpec, TokenClass};
use crate::scheduler::{activation_at, builtin_profile, scale_profile, Activation, LayerRange, ScheduleProfile};
use crate::sketch::{load_sketch, parse_latent_dims, to_latent, SketchSet};
use crate::tensor::Matrix;
use crate::tuner::{tune_attention, NormScope, StepClock, TuneOptions};
use crate::Error;

pub const OUT_ENV: &str = "AST_ATTN_OUT";

#[derive(Debug, Parser)]
#[command(
    name = "ast-hslw",
    version,
    about = "Attention specialty tuning with step-layer-wise scheduling on a toy DiT",
    after_help = "Precedence: command-line flags override values read from profile files. \
A profile file or built-in is rescaled to the model's layer and step counts."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build T2T/I2I/I2T masks and sensitivity vectors.
    Masks(MasksArgs),
    /// Run the toy model end to end and export captured attention.
    Run(RunArgs),
    /// Swap token-class text rows between two prompts.
    Exchange(ExchangeArgs),
    /// Sample the tuning curve a * exp(beta * (m - a)).
    Curve(CurveArgs),
    /// Layer-range statistics from a capture CSV.
    Stats(StatsArgs),
    /// Tune one captured map and report before/after.
    TuneDemo(TuneDemoArgs),
}

#[derive(Debug, Clone, Args)]
pub struct OutArgs {
    /// Output directory.
    #[arg(long, env = OUT_ENV, default_value = "ast_out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct PromptArgs {
    /// Prompt spec file.
    #[arg(long)]
    pub prompt: PathBuf,
    /// Lexicon file with `word class` lines.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// Fail on words missing from the lexicon.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Clone, Args)]
pub struct LayoutArgs {
    /// Sketch file (PGM P2/P5 or integer grid).
    #[arg(long)]
    pub sketch: PathBuf,
    /// Latent grid as HxW.
    #[arg(long, default_value = "16x16", value_parser = parse_latent)]
    pub latent: (usize, usize),
    /// Share of source pixels a latent cell needs to take an id.
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[arg(long, default_value_t = crate::masks::DEFAULT_LAMBDA_CROSS)]
    pub lambda_cross: f64,
    #[arg(long, default_value_t = crate::masks::DEFAULT_LAMBDA_SELF)]
    pub lambda_self: f64,
    #[arg(long, default_value_t = DEFAULT_GAMMA_TEXT)]
    pub gamma_text: f64,
    #[arg(long, default_value_t = DEFAULT_GAMMA_IMAGE)]
    pub gamma_image: f64,
    /// Clamp sensitivities to [0, 1].
    #[arg(long)]
    pub clamp_g: bool,
    /// Treat the background complement as an I2I region.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub i2i_background: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 16)]
    pub d_model: usize,
    /// Double-stream blocks.
    #[arg(long, default_value_t = 2)]
    pub double: usize,
    /// Single-stream blocks.
    #[arg(long, default_value_t = 3)]
    pub single: usize,
    #[arg(long, default_value_t = 8)]
    pub steps: usize,
    /// Feed the text stream output into the next step.
    #[arg(long)]
    pub carry_text: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScopeArg {
    FullRow,
    PerRegion,
}

#[derive(Debug, Clone, Args)]
pub struct TuneArgs {
    /// Built-in profile (flux-dev-57, full-layer, off, toy-N) or a file.
    #[arg(long, default_value = "flux-dev-57")]
    pub profile: String,
    /// Disable tuning.
    #[arg(long)]
    pub no_tune: bool,
    /// Use the pre-softmax logit-bias baseline instead of post-softmax tuning.
    #[arg(long)]
    pub pre_softmax: bool,
    #[arg(long, value_enum, default_value = "full-row")]
    pub norm_scope: ScopeArg,
}

#[derive(Debug, Args)]
pub struct MasksArgs {
    #[command(flatten)]
    pub prompt: PromptArgs,
    #[command(flatten)]
    pub layout: LayoutArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub prompt: PromptArgs,
    #[command(flatten)]
    pub layout: LayoutArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub tune: TuneArgs,
    /// Only capture these layers (inclusive, 1-based), e.g. 2-4.
    #[arg(long, value_parser = parse_range)]
    pub capture_layers: Option<LayerRange>,
    /// Only capture these steps (inclusive, 0-based), e.g. 0-3.
    #[arg(long, value_parser = parse_range)]
    pub capture_steps: Option<LayerRange>,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct ExchangeArgs {
    #[arg(long)]
    pub prompt_a: PathBuf,
    #[arg(long)]
    pub prompt_b: PathBuf,
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// Comma-separated token classes to swap.
    #[arg(long, value_delimiter = ',', default_value = "instance")]
    pub classes: Vec<String>,
    /// Layers to swap at (inclusive, 1-based).
    #[arg(long, value_parser = parse_range, default_value = "1-1")]
    pub layers: LayerRange,
    /// Steps to swap at (inclusive, 0-based).
    #[arg(long, value_parser = parse_range, default_value = "0-0")]
    pub swap_steps: LayerRange,
    /// Latent grid as HxW.
    #[arg(long, default_value = "16x16", value_parser = parse_latent)]
    pub latent: (usize, usize),
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct CurveArgs {
    #[arg(long, default_value_t = 4.0)]
    pub lambda: f64,
    /// Total steps.
    #[arg(long = "T", default_value_t = 32)]
    pub total_steps: usize,
    /// Completed steps.
    #[arg(long, default_value_t = 0)]
    pub step: usize,
    /// Mask value, 0 or 1.
    #[arg(long, default_value_t = 1)]
    pub m: u8,
    #[arg(long, default_value_t = 101)]
    pub samples: usize,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Capture CSV written by `run`.
    #[arg(long)]
    pub captures: PathBuf,
    #[command(flatten)]
    pub prompt: PromptArgs,
    /// Comma-separated inclusive layer ranges.
    #[arg(long, value_delimiter = ',', value_parser = parse_range, default_value = "6-10,20-24,50-54")]
    pub ranges: Vec<LayerRange>,
    /// Only count these steps (inclusive, 0-based).
    #[arg(long, value_parser = parse_range)]
    pub steps: Option<LayerRange>,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct TuneDemoArgs {
    #[command(flatten)]
    pub prompt: PromptArgs,
    #[command(flatten)]
    pub layout: LayoutArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value = "flux-dev-57")]
    pub profile: String,
    #[arg(long, value_enum, default_value = "full-row")]
    pub norm_scope: ScopeArg,
    /// Layer to tune (1-based).
    #[arg(long, default_value_t = 1)]
    pub layer: usize,
    /// Completed steps.
    #[arg(long, default_value_t = 0)]
    pub step: usize,
    /// Tune every region and class regardless of the schedule.
    #[arg(long)]
    pub all_regions: bool,
    #[command(flatten)]
    pub out: OutArgs,
}

fn parse_latent(s: &str) -> Result<(usize, usize), String> {
    parse_latent_dims(s).map_err(|e| e.to_string())
}

fn parse_range(s: &str) -> Result<LayerRange, String> {
    s.parse()
}

/// Parses `argv` and runs; returns the process exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            let report = serde_json::json!({
                "error": e.kind(),
                "module": e.module(),
                "message": e.to_string(),
            });
            eprintln!("{report}");
            1
        }
    }
}

pub fn execute(command: Command) -> Result<(), Error> {
    match command {
        Command::Masks(a) => cmd_masks(a),
        Command::Run(a) => cmd_run(a),
        Command::Exchange(a) => cmd_exchange(a),
        Command::Curve(a) => cmd_curve(a),
        Command::Stats(a) => cmd_stats(a),
        Command::TuneDemo(a) => cmd_tune_demo(a),
    }
}

fn load_lexicon(path: Option<&Path>) -> Result<Lexicon, Error> {
    match path {
        Some(p) => Ok(Lexicon::parse(&read_text(p)?)?),
        None => Ok(Lexicon::new()),
    }
}

fn load_prompt(path: &Path, lexicon: &Lexicon, strict: bool) -> Result<PromptSpec, Error> {
    let spec = parse_prompt_spec(&read_text(path)?)?;
    Ok(classify_tokens(&spec, lexicon, strict)?)
}

fn load_prompt_args(a: &PromptArgs) -> Result<PromptSpec, Error> {
    let lex = load_lexicon(a.lexicon.as_deref())?;
    load_prompt(&a.prompt, &lex, a.strict)
}

fn load_layout(a: &LayoutArgs, spec: &PromptSpec) -> Result<SketchSet, Error> {
    let grid = load_sketch(&a.sketch)?;
    let (h, w) = a.latent;
    Ok(to_latent(&grid, h, w, a.threshold)?.bind_to(spec)?)
}

fn mask_options(a: &LayoutArgs) -> MaskOptions {
    MaskOptions {
        lambda_cross: a.lambda_cross,
        lambda_self: a.lambda_self,
        i2i_background: a.i2i_background,
    }
}

fn load_profile(name: &str, n_layers: usize, n_steps: usize) -> Result<ScheduleProfile, Error> {
    let base = match builtin_profile(name, n_layers, n_steps) {
        Ok(p) => p,
        Err(e) => {
            let path = Path::new(name);
            if !path.exists() {
                return Err(e.into());
            }
            ScheduleProfile::parse(&read_text(path)?)?
        }
    };
    Ok(scale_profile(&base, n_layers, n_steps))
}

fn model_config(m: &ModelArgs, d_c: usize, latent: (usize, usize)) -> MiniDitConfig {
    MiniDitConfig {
        d_c,
        h: latent.0,
        w: latent.1,
        d_model: m.d_model,
        n_double: m.double,
        n_single: m.single,
        n_steps: m.steps,
        seed: m.seed,
        carry_text: m.carry_text,
    }
}

fn scope(s: ScopeArg) -> NormScope {
    match s {
        ScopeArg::FullRow => NormScope::FullRow,
        ScopeArg::PerRegion => NormScope::PerRegion,
    }
}

fn fmt_vec(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(" ")
}

fn cmd_masks(a: MasksArgs) -> Result<(), Error> {
    let spec = load_prompt_args(&a.prompt)?;
    let sketch = load_layout(&a.layout, &spec)?;
    let fm = crate::masks::assemble(&spec, &sketch, mask_options(&a.layout))?;
    let g = build_sensitivity(&sketch, a.layout.gamma_text, a.layout.gamma_image, a.layout.clamp_g);
    let out = &a.out.out;
    write_file(&out.join("t2t.pgm"), mask_pgm(&fm.t2t).as_bytes())?;
    write_file(&out.join("i2i.pgm"), mask_pgm(&fm.i2i).as_bytes())?;
    write_file(&out.join("i2t.pgm"), mask_pgm(&fm.i2t).as_bytes())?;

    let mut meta = String::new();
    let _ = writeln!(meta, "d_c = {}", fm.d_c);
    let _ = writeln!(meta, "h = {}\nw = {}\nhw = {}", sketch.h(), sketch.w(), fm.hw);
    let _ = writeln!(meta, "lambda_t2t = {}", fm.lambdas.t2t);
    let _ = writeln!(meta, "lambda_i2i = {}", fm.lambdas.i2i);
    let _ = writeln!(meta, "lambda_i2t = {}", fm.lambdas.i2t);
    let _ = writeln!(meta, "i2i_background = {}", a.layout.i2i_background);
    let _ = writeln!(meta, "ones_t2t = {}", fm.t2t.count_ones());
    let _ = writeln!(meta, "ones_i2i = {}", fm.i2i.count_ones());
    let _ = writeln!(meta, "ones_i2t = {}", fm.i2t.count_ones());
    for (k, &sub) in sketch.binding().iter().enumerate() {
        let _ = writeln!(
            meta,
            "mask {k} -> sub {sub} \"{}\" area {}",
            spec.sub_prompts()[sub].label,
            sketch.area(k)?
        );
    }
    let classes: Vec<&str> = spec.token_classes().iter().map(|c| c.as_str()).collect();
    let _ = writeln!(meta, "token_classes = {}", classes.join(" "));
    write_file(&out.join("masks.txt"), meta.as_bytes())?;

    let mut sens = String::from("pixel,g_text,g_image\n");
    for j in 0..g.hw() {
        let _ = writeln!(sens, "{j},{},{}", g.g_text[j], g.g_image[j]);
    }
    write_file(&out.join("sensitivity.csv"), sens.as_bytes())?;
    println!("wrote masks for d_c={} hw={} to {}", fm.d_c, fm.hw, out.display());
    Ok(())
}

fn summarize_state(s: &mut String, label: &str, state: &StreamState) {
    let _ = writeln!(s, "{label}_latent_checksum = {}", matrix_checksum(&state.image));
    let _ = writeln!(s, "{label}_text_checksum = {}", matrix_checksum(&state.text));
    let _ = writeln!(s, "{label}_latent_norm = {}", state.image.frobenius_norm());
}

fn cmd_run(a: RunArgs) -> Result<(), Error> {
    let spec = load_prompt_args(&a.prompt)?;
    let sketch = load_layout(&a.layout, &spec)?;
    let cfg = model_config(&a.model, spec.d_c(), a.layout.latent);
    let model = MiniDit::new(cfg.clone())?;
    let profile = load_profile(&a.tune.profile, model.n_layers(), cfg.n_steps)?;
    let tuning = Tuning::new(
        &spec,
        &sketch,
        mask_options(&a.layout),
        a.layout.gamma_text,
        a.layout.gamma_image,
        a.layout.clamp_g,
    )?;
    let opts = RunOptions {
        tuning_on: !a.tune.no_tune,
        mode: if a.tune.pre_softmax {
            TuneMode::PreSoftmax
        } else {
            TuneMode::PostSoftmax
        },
        scope: scope(a.tune.norm_scope),
        capture: CaptureSpec {
            enabled: true,
            layers: a.capture_layers,
            steps: a.capture_steps.map(|r| r.start..r.end + 1),
            keep_raw: false,
        },
    };
    let out = model.run(&spec, Some(&tuning), &profile, &opts)?;
    let dir = &a.out.out;
    write_file(&dir.join("profile.txt"), profile.to_text().as_bytes())?;
    write_file(&dir.join("captures.csv"), captures_csv(&out.captures, spec.d_c()).as_bytes())?;
    write_file(&dir.join("final_latent.csv"), matrix_csv(&out.final_state.image).as_bytes())?;

    // Heatmaps of each token's I2T column, averaged over captures.
    if !out.captures.is_empty() {
        let n = cfg.n_tokens();
        let mut mean = Matrix::zeros(n, n);
        for c in &out.captures {
            for (m, v) in (0..n * n).zip(c.attention.data()) {
                let (r, col) = (m / n, m % n);
                mean.set(r, col, mean.get(r, col) + v);
            }
        }
        let mean = mean.scale(1.0 / out.captures.len() as f64);
        let view = extract_regions(&mean, spec.d_c(), cfg.hw())?;
        for t in 0..spec.d_c() {
            let hm = token_heatmap(&view, t, cfg.h, cfg.w)?;
            write_file(
                &dir.join("heatmaps").join(format!("token_{t:02}.pgm")),
                heatmap_pgm(&hm).as_bytes(),
            )?;
        }
    }

    let mut summary = String::new();
    let _ = writeln!(summary, "seed = {}", cfg.seed);
    let _ = writeln!(summary, "layers = {}", model.n_layers());
    let _ = writeln!(summary, "steps = {}", cfg.n_steps);
    let _ = writeln!(summary, "tuning = {}", opts.tuning_on);
    let _ = writeln!(summary, "captures = {}", out.captures.len());
    summarize_state(&mut summary, "final", &out.final_state);
    for (k, &sub) in sketch.binding().iter().enumerate() {
        let pixels = sketch.flatten(k)?;
        let outside: Vec<usize> = (0..cfg.hw()).filter(|p| !pixels.contains(p)).collect();
        for t in (0..spec.d_c()).filter(|&t| spec.sub_prompt_of(t) == Some(sub)) {
            let (mut inside_sum, mut outside_sum) = (0.0, 0.0);
            for c in &out.captures {
                inside_sum += i2t_mean(&c.attention, spec.d_c(), t, &pixels);
                outside_sum += i2t_mean(&c.attention, spec.d_c(), t, &outside);
            }
            let n = out.captures.len().max(1) as f64;
            let _ = writeln!(
                summary,
                "token {t} ({}) mask {k}: in_sketch {} out_sketch {}",
                spec.class_of(t),
                inside_sum / n,
                outside_sum / n
            );
        }
    }
    write_file(&dir.join("summary.txt"), summary.as_bytes())?;
    println!("ran {} layers x {} steps, {} captures -> {}", model.n_layers(), cfg.n_steps, out.captures.len(), dir.display());
    Ok(())
}

fn parse_classes(names: &[String]) -> Result<BTreeSet<TokenClass>, Error> {
    names
        .iter()
        .filter(|n| !n.trim().is_empty())
        .map(|n| n.trim().parse::<TokenClass>().map_err(Error::from))
        .collect()
}

fn cmd_exchange(a: ExchangeArgs) -> Result<(), Error> {
    let lex = load_lexicon(a.lexicon.as_deref())?;
    let spec_a = load_prompt(&a.prompt_a, &lex, false)?;
    let spec_b = load_prompt(&a.prompt_b, &lex, false)?;
    let cfg = model_config(&a.model, spec_a.d_c(), a.latent);
    let model = MiniDit::new(cfg.clone())?;
    let plan = ExchangePlan {
        classes: parse_classes(&a.classes)?,
        layers: a.layers,
        steps: a.swap_steps.start..a.swap_steps.end + 1,
    };
    let run = token_exchange(&model, &spec_a, &spec_b, &plan)?;
    let dir = &a.out.out;
    let mut traj = String::from("step,stream,latent_norm,checksum\n");
    for (label, t) in [("a", &run.a), ("b", &run.b)] {
        for (s, lat) in t.latents.iter().enumerate() {
            let _ = writeln!(traj, "{s},{label},{},{}", lat.frobenius_norm(), matrix_checksum(lat));
        }
    }
    write_file(&dir.join("trajectory.csv"), traj.as_bytes())?;
    write_file(&dir.join("final_a.csv"), matrix_csv(&run.a.final_state.image).as_bytes())?;
    write_file(&dir.join("final_b.csv"), matrix_csv(&run.b.final_state.image).as_bytes())?;
    let mut summary = String::new();
    let names: Vec<&str> = plan.classes.iter().map(|c| c.as_str()).collect();
    let _ = writeln!(summary, "classes = {}", names.join(","));
    let _ = writeln!(summary, "layers = {}", plan.layers);
    let _ = writeln!(summary, "steps = {}-{}", a.swap_steps.start, a.swap_steps.end);
    summarize_state(&mut summary, "a", &run.a.final_state);
    summarize_state(&mut summary, "b", &run.b.final_state);
    write_file(&dir.join("summary.txt"), summary.as_bytes())?;
    println!("exchange done -> {}", dir.display());
    Ok(())
}

fn cmd_curve(a: CurveArgs) -> Result<(), Error> {
    let points = scaling_curve(a.lambda, a.total_steps, a.step, a.m, a.samples)?;
    let csv = curve_csv(&points);
    write_file(&a.out.out.join("curve.csv"), csv.as_bytes())?;
    print!("{csv}");
    Ok(())
}

fn cmd_stats(a: StatsArgs) -> Result<(), Error> {
    let spec = load_prompt_args(&a.prompt)?;
    let text = read_text(&a.captures)?;
    let caps = parse_captures_csv(&text, spec.d_c()).map_err(|msg| Error::Io {
        path: a.captures.display().to_string(),
        source: std::io::Error::new(std::io::ErrorKind::InvalidData, msg),
    })?;
    let steps = a.steps.map(|r| r.start..r.end + 1);
    let stats = layer_range_stats(&caps, &a.ranges, &spec, steps)?;
    let csv = stats_csv(&stats);
    write_file(&a.out.out.join("stats.csv"), csv.as_bytes())?;
    print!("{csv}");
    Ok(())
}

fn cmd_tune_demo(a: TuneDemoArgs) -> Result<(), Error> {
    let spec = load_prompt_args(&a.prompt)?;
    let sketch = load_layout(&a.layout, &spec)?;
    let cfg = model_config(&a.model, spec.d_c(), a.layout.latent);
    let model = MiniDit::new(cfg.clone())?;
    let profile = load_profile(&a.profile, model.n_layers(), cfg.n_steps)?;
    let tuning = Tuning::new(
        &spec,
        &sketch,
        mask_options(&a.layout),
        a.layout.gamma_text,
        a.layout.gamma_image,
        a.layout.clamp_g,
    )?;
    if a.layer == 0 || a.layer > model.n_layers() {
        return Err(crate::mini_dit::ModelError::Config(format!(
            "layer {} outside [1,{}]",
            a.layer,
            model.n_layers()
        ))
        .into());
    }
    // Untuned run up to the requested step, then capture that layer.
    let opts = RunOptions {
        tuning_on: false,
        capture: CaptureSpec {
            enabled: true,
            layers: Some(LayerRange::new(a.layer, a.layer)),
            steps: Some(a.step..a.step + 1),
            keep_raw: false,
        },
        ..RunOptions::default()
    };
    let out = model.run(&spec, Some(&tuning), &profile, &opts)?;
    let before = out
        .captures
        .first()
        .map(|c| c.attention.clone())
        .ok_or_else(|| {
            crate::mini_dit::ModelError::Config(format!("step {} outside [0,{})", a.step, cfg.n_steps))
        })?;
    let act = if a.all_regions {
        Activation::all()
    } else {
        activation_at(&profile, a.layer, a.step)
    };
    let clock = StepClock {
        total_steps: cfg.n_steps,
        step: a.step,
    };
    let after = tune_attention(
        &before,
        &tuning.mask,
        &tuning.sensitivity,
        &act,
        clock,
        TuneOptions {
            scope: scope(a.norm_scope),
        },
    )?;
    let dir = &a.out.out;
    write_file(&dir.join("before.csv"), matrix_csv(&before).as_bytes())?;
    write_file(&dir.join("after.csv"), matrix_csv(&after).as_bytes())?;
    let vb = extract_regions(&before, spec.d_c(), cfg.hw())?;
    let va = extract_regions(&after, spec.d_c(), cfg.hw())?;
    let mut summary = String::new();
    let regions: Vec<&str> = act.regions.iter().map(|r| r.as_str()).collect();
    let classes: Vec<&str> = act.i2t_classes.iter().map(|c| c.as_str()).collect();
    let _ = writeln!(summary, "layer = {}\nstep = {}", a.layer, a.step);
    let _ = writeln!(summary, "active_regions = {}", regions.join(","));
    let _ = writeln!(summary, "active_i2t_classes = {}", classes.join(","));
    for ((r, mb), (_, ma)) in vb.region_means().iter().zip(va.region_means()) {
        let _ = writeln!(summary, "mean_{r} before {mb} after {ma}");
    }
    for t in 0..spec.d_c() {
        for (label, v) in [("before", &vb), ("after", &va)] {
            let hm = token_heatmap(v, t, cfg.h, cfg.w)?;
            write_file(
                &dir.join("heatmaps").join(format!("token_{t:02}_{label}.pgm")),
                heatmap_pgm(&hm).as_bytes(),
            )?;
        }
    }
    for (k, &sub) in sketch.binding().iter().enumerate() {
        let pixels = sketch.flatten(k)?;
        for t in (0..spec.d_c()).filter(|&t| spec.sub_prompt_of(t) == Some(sub)) {
            let _ = writeln!(
                summary,
                "token {t} ({}) in_sketch before {} after {}",
                spec.class_of(t),
                i2t_mean(&before, spec.d_c(), t, &pixels),
                i2t_mean(&after, spec.d_c(), t, &pixels)
            );
        }
    }
    let _ = writeln!(summary, "g_text = {}", fmt_vec(&tuning.sensitivity.g_text));
    write_file(&dir.join("summary.txt"), summary.as_bytes())?;
    print!("{summary}");
    Ok(())
}
