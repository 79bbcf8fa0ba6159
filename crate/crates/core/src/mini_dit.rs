//! Deterministic toy diffusion transformer.
//!
//! Text and image tokens are concatenated and attend jointly in every
//! block. The first `n_double` blocks keep separate projections per stream
//! (double-stream); the remaining `n_single` blocks share one set
//! (single-stream). Weights and embeddings are seeded pseudo-random values;
//! nothing here is trained. The latent follows a fixed-coefficient
//! relaxation `x <- x + (block_output - x) / n_steps` so that multi-step
//! schedules have something to act on.

use std::collections::BTreeSet;
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::masks::{
    assemble, build_sensitivity, FullMask, MaskError, MaskOptions, Region, SensitivityVector,
};
use crate::prompt::{PromptSpec, TokenClass};
use crate::scheduler::{activation_at, LayerRange, ScheduleProfile};
use crate::sketch::SketchSet;
use crate::tensor::{row_softmax, Matrix, TensorError};
use crate::tuner::{presoftmax_modulate, tune_attention, NormScope, StepClock, TuneError, TuneOptions};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("profile has {profile} layers but the model has {model}")]
    ProfileMismatch { profile: usize, model: usize },
    #[error("prompt layouts differ: {0}")]
    LayoutMismatch(String),
    #[error("tuning mask is for d_c={mask_d_c}, hw={mask_hw}; model has d_c={d_c}, hw={hw}")]
    MaskMismatch {
        mask_d_c: usize,
        mask_hw: usize,
        d_c: usize,
        hw: usize,
    },
    #[error(transparent)]
    Tune(#[from] TuneError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Mask(#[from] MaskError),
}

impl ModelError {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Config(_) => "ConfigError",
            Self::ProfileMismatch { .. } => "ProfileMismatch",
            Self::LayoutMismatch(_) => "LayoutMismatch",
            Self::MaskMismatch { .. } => "MaskMismatch",
            Self::Tune(e) => e.kind(),
            Self::Tensor(e) => e.kind(),
            Self::Mask(e) => e.kind(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MiniDitConfig {
    pub d_c: usize,
    pub h: usize,
    pub w: usize,
    pub d_model: usize,
    pub n_double: usize,
    pub n_single: usize,
    pub n_steps: usize,
    pub seed: u64,
    /// Feed the final text hidden state into the next step instead of
    /// re-injecting the original embeddings.
    pub carry_text: bool,
}

impl Default for MiniDitConfig {
    fn default() -> Self {
        Self {
            d_c: 7,
            h: 8,
            w: 8,
            d_model: 16,
            n_double: 2,
            n_single: 3,
            n_steps: 8,
            seed: 0,
            carry_text: false,
        }
    }
}

impl MiniDitConfig {
    pub fn n_layers(&self) -> usize {
        self.n_double + self.n_single
    }

    pub fn hw(&self) -> usize {
        self.h * self.w
    }

    pub fn n_tokens(&self) -> usize {
        self.d_c + self.hw()
    }

    fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: &str| Err(ModelError::Config(msg.to_string()));
        if self.d_model == 0 {
            return bad("d_model must be positive");
        }
        if self.n_layers() == 0 {
            return bad("model needs at least one block");
        }
        if self.n_steps == 0 {
            return bad("n_steps must be positive");
        }
        if self.h == 0 || self.w == 0 {
            return bad("latent grid must be non-empty");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Projections {
    q: Matrix,
    k: Matrix,
    v: Matrix,
    o: Matrix,
}

impl Projections {
    fn random(rng: &mut ChaCha8Rng, d: usize) -> Self {
        let s = (3.0 / d as f64).sqrt();
        let mut m = || Matrix::from_fn(d, d, |_, _| rng.gen_range(-s..s));
        Self {
            q: m(),
            k: m(),
            v: m(),
            o: m(),
        }
    }

    fn zeros(d: usize) -> Self {
        Self {
            q: Matrix::zeros(d, d),
            k: Matrix::zeros(d, d),
            v: Matrix::zeros(d, d),
            o: Matrix::zeros(d, d),
        }
    }

    fn hash_into(&self, h: &mut Sha256) {
        for m in [&self.q, &self.k, &self.v, &self.o] {
            for v in m.data() {
                h.update(v.to_le_bytes());
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Block {
    Double { text: Projections, image: Projections },
    Single(Projections),
}

impl Block {
    fn text(&self) -> &Projections {
        match self {
            Block::Double { text, .. } => text,
            Block::Single(p) => p,
        }
    }

    fn image(&self) -> &Projections {
        match self {
            Block::Double { image, .. } => image,
            Block::Single(p) => p,
        }
    }
}

/// Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct MiniDit {
    config: MiniDitConfig,
    blocks: Vec<Block>,
}

fn derive_seed(seed: u64, tag: &str, parts: &[u64]) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(tag.as_bytes());
    for p in parts {
        h.update(p.to_le_bytes());
    }
    let digest = h.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// SHA-256 over the little-endian bytes of a matrix.
pub fn matrix_checksum(m: &Matrix) -> String {
    let mut h = Sha256::new();
    h.update((m.rows() as u64).to_le_bytes());
    h.update((m.cols() as u64).to_le_bytes());
    for v in m.data() {
        h.update(v.to_le_bytes());
    }
    hex(&h.finalize())
}

/// Scales each row to unit root-mean-square.
fn rms_norm(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    let d = m.cols().max(1) as f64;
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let rms = (row.iter().map(|v| v * v).sum::<f64>() / d + 1e-12).sqrt();
        for v in row.iter_mut() {
            *v /= rms;
        }
    }
    out
}

/// Seeded per-token embeddings. Each token's vector depends on the seed,
/// its position, the word it carries and its offset inside that word.
pub fn embed_prompt(spec: &PromptSpec, d_model: usize, seed: u64) -> Matrix {
    let words = spec.token_words();
    let mut data = Vec::with_capacity(spec.d_c() * d_model);
    for (t, word) in words.iter().enumerate() {
        let (w, piece) = word
            .as_ref()
            .map_or(("<pad>", 0), |(w, p)| (w.as_str(), *p));
        let mut h = Sha256::new();
        h.update(w.as_bytes());
        let word_hash = u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"));
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
            seed,
            "token",
            &[t as u64, word_hash, piece as u64],
        ));
        data.extend((0..d_model).map(|_| rng.gen_range(-1.0..1.0)));
    }
    Matrix::from_fn(spec.d_c(), d_model, |i, j| data[i * d_model + j])
}

/// Everything the tuner needs, built once per (prompt, sketch).
#[derive(Debug, Clone, PartialEq)]
pub struct Tuning {
    pub mask: FullMask,
    pub sensitivity: SensitivityVector,
}

impl Tuning {
    pub fn new(
        spec: &PromptSpec,
        sketch: &SketchSet,
        mask_opts: MaskOptions,
        gamma_text: f64,
        gamma_image: f64,
        clamp_g: bool,
    ) -> Result<Self, ModelError> {
        Ok(Self {
            mask: assemble(spec, sketch, mask_opts)?,
            sensitivity: build_sensitivity(sketch, gamma_text, gamma_image, clamp_g),
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum TuneMode {
    /// Rescale after softmax.
    #[default]
    PostSoftmax,
    /// Dense-Diffusion-style logit bias before softmax; comparison only.
    PreSoftmax,
}

/// Which (layer, step) maps to keep.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CaptureSpec {
    pub enabled: bool,
    pub layers: Option<LayerRange>,
    pub steps: Option<Range<usize>>,
    /// Also keep the untuned softmax output.
    pub keep_raw: bool,
}

impl CaptureSpec {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn all() -> Self {
        Self {
            enabled: true,
            ..Self::default()
        }
    }

    pub fn with_raw(mut self) -> Self {
        self.keep_raw = true;
        self
    }

    fn wants(&self, layer: usize, step: usize) -> bool {
        self.enabled
            && self.layers.is_none_or(|r| r.contains(layer))
            && self.steps.as_ref().is_none_or(|r| r.contains(&step))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub tuning_on: bool,
    pub mode: TuneMode,
    pub scope: NormScope,
    pub capture: CaptureSpec,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            tuning_on: true,
            mode: TuneMode::PostSoftmax,
            scope: NormScope::FullRow,
            capture: CaptureSpec::none(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamState {
    pub text: Matrix,
    pub image: Matrix,
    pub step: usize,
}

/// Attention actually used at one (layer, step). `raw` is the softmax
/// output before tuning, when requested.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptureRecord {
    pub layer: usize,
    pub step: usize,
    pub attention: Matrix,
    pub raw: Option<Matrix>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub final_state: StreamState,
    /// Latent after each step.
    pub latents: Vec<Matrix>,
    pub captures: Vec<CaptureRecord>,
}

/// Tuning bundle plus schedule for one forward pass.
struct TuneCtx<'a> {
    tuning: &'a Tuning,
    profile: &'a ScheduleProfile,
    mode: TuneMode,
    scope: NormScope,
}

impl MiniDit {
    /// Seeded model; the same config always gives bit-identical weights.
    pub fn new(config: MiniDitConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "weights", &[]));
        let d = config.d_model;
        let mut blocks = Vec::with_capacity(config.n_layers());
        for _ in 0..config.n_double {
            blocks.push(Block::Double {
                text: Projections::random(&mut rng, d),
                image: Projections::random(&mut rng, d),
            });
        }
        for _ in 0..config.n_single {
            blocks.push(Block::Single(Projections::random(&mut rng, d)));
        }
        Ok(Self { config, blocks })
    }

    /// All projections zero; attention is uniform.
    pub fn zeroed(config: MiniDitConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let d = config.d_model;
        let blocks = (0..config.n_layers())
            .map(|i| {
                if i < config.n_double {
                    Block::Double {
                        text: Projections::zeros(d),
                        image: Projections::zeros(d),
                    }
                } else {
                    Block::Single(Projections::zeros(d))
                }
            })
            .collect();
        Ok(Self { config, blocks })
    }

    pub fn config(&self) -> &MiniDitConfig {
        &self.config
    }

    pub fn n_layers(&self) -> usize {
        self.blocks.len()
    }

    /// Checksum of one layer's weights (1-based).
    pub fn layer_checksum(&self, layer: usize) -> String {
        let mut h = Sha256::new();
        match &self.blocks[layer - 1] {
            Block::Double { text, image } => {
                text.hash_into(&mut h);
                image.hash_into(&mut h);
            }
            Block::Single(p) => p.hash_into(&mut h),
        }
        hex(&h.finalize())
    }

    pub fn initial_latent(&self) -> Matrix {
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(self.config.seed, "latent", &[]));
        Matrix::from_fn(self.config.hw(), self.config.d_model, |_, _| {
            rng.gen_range(-1.0..1.0)
        })
    }

    pub fn embed(&self, spec: &PromptSpec) -> Matrix {
        embed_prompt(spec, self.config.d_model, self.config.seed)
    }

    /// Q, K, V over the concatenated `[text; image]` tokens.
    fn project(&self, layer: usize, text: &Matrix, image: &Matrix) -> Result<(Matrix, Matrix, Matrix), ModelError> {
        let block = &self.blocks[layer - 1];
        let (tn, xn) = (rms_norm(text), rms_norm(image));
        let (tp, ip) = (block.text(), block.image());
        let q = tn.matmul(&tp.q)?.vstack(&xn.matmul(&ip.q)?)?;
        let k = tn.matmul(&tp.k)?.vstack(&xn.matmul(&ip.k)?)?;
        let v = tn.matmul(&tp.v)?.vstack(&xn.matmul(&ip.v)?)?;
        Ok((q, k, v))
    }

    fn logits(&self, q: &Matrix, k: &Matrix) -> Result<Matrix, ModelError> {
        let scale = 1.0 / (self.config.d_model as f64).sqrt();
        Ok(q.matmul(&k.transpose())?.scale(scale))
    }

    /// Residual update from `attn · V`, projected per stream and
    /// renormalized.
    fn apply(&self, layer: usize, attn: &Matrix, v: &Matrix, text: &Matrix, image: &Matrix) -> Result<(Matrix, Matrix), ModelError> {
        let block = &self.blocks[layer - 1];
        let mixed = attn.matmul(v)?;
        let d_c = text.rows();
        let t_out = mixed.slice_rows(0, d_c).matmul(&block.text().o)?;
        let i_out = mixed.slice_rows(d_c, mixed.rows()).matmul(&block.image().o)?;
        let add = |a: &Matrix, b: &Matrix| Matrix::from_fn(a.rows(), a.cols(), |i, j| a.get(i, j) + b.get(i, j));
        Ok((rms_norm(&add(text, &t_out)), rms_norm(&add(image, &i_out))))
    }

    /// One untuned attention block: returns the softmax map and the
    /// updated streams.
    pub fn unified_attention(&self, layer: usize, state: &StreamState) -> Result<(Matrix, StreamState), ModelError> {
        let (q, k, v) = self.project(layer, &state.text, &state.image)?;
        let attn = row_softmax(&self.logits(&q, &k)?);
        let (text, image) = self.apply(layer, &attn, &v, &state.text, &state.image)?;
        Ok((
            attn,
            StreamState {
                text,
                image,
                step: state.step,
            },
        ))
    }

    /// Full layer with optional tuning. Returns (raw softmax, used map).
    fn layer_forward(
        &self,
        layer: usize,
        step: usize,
        text: &mut Matrix,
        image: &mut Matrix,
        ctx: Option<&TuneCtx<'_>>,
    ) -> Result<(Matrix, Matrix), ModelError> {
        let (q, k, v) = self.project(layer, text, image)?;
        let logits = self.logits(&q, &k)?;
        let raw = row_softmax(&logits);
        let used = match ctx {
            None => raw.clone(),
            Some(ctx) => {
                let act = activation_at(ctx.profile, layer, step);
                let clock = StepClock {
                    total_steps: self.config.n_steps,
                    step,
                };
                let (mask, g) = (&ctx.tuning.mask, &ctx.tuning.sensitivity);
                match ctx.mode {
                    TuneMode::PostSoftmax => tune_attention(
                        &raw,
                        mask,
                        g,
                        &act,
                        clock,
                        TuneOptions { scope: ctx.scope },
                    )?,
                    TuneMode::PreSoftmax if act.is_empty() => raw.clone(),
                    TuneMode::PreSoftmax => {
                        row_softmax(&presoftmax_modulate(&logits, mask, g, &act, clock)?)
                    }
                }
            }
        };
        let (t, x) = self.apply(layer, &used, &v, text, image)?;
        *text = t;
        *image = x;
        Ok((raw, used))
    }

    fn check_run_inputs(
        &self,
        spec: &PromptSpec,
        tuning: Option<&Tuning>,
        profile: &ScheduleProfile,
    ) -> Result<(), ModelError> {
        if spec.d_c() != self.config.d_c {
            return Err(ModelError::Config(format!(
                "prompt has d_c={} but the model expects {}",
                spec.d_c(),
                self.config.d_c
            )));
        }
        if profile.n_layers != self.n_layers() {
            return Err(ModelError::ProfileMismatch {
                profile: profile.n_layers,
                model: self.n_layers(),
            });
        }
        if let Some(t) = tuning {
            if t.mask.d_c != self.config.d_c || t.mask.hw != self.config.hw() {
                return Err(ModelError::MaskMismatch {
                    mask_d_c: t.mask.d_c,
                    mask_hw: t.mask.hw,
                    d_c: self.config.d_c,
                    hw: self.config.hw(),
                });
            }
        }
        Ok(())
    }

    /// Runs every step through every layer, tuning per the schedule when
    /// `opts.tuning_on` is set and a tuning bundle is given.
    pub fn run(
        &self,
        spec: &PromptSpec,
        tuning: Option<&Tuning>,
        profile: &ScheduleProfile,
        opts: &RunOptions,
    ) -> Result<RunOutput, ModelError> {
        self.check_run_inputs(spec, tuning, profile)?;
        let ctx = tuning.filter(|_| opts.tuning_on).map(|tuning| TuneCtx {
            tuning,
            profile,
            mode: opts.mode,
            scope: opts.scope,
        });
        let text0 = self.embed(spec);
        let mut text_in = text0.clone();
        let mut latent = self.initial_latent();
        let mut latents = Vec::with_capacity(self.config.n_steps);
        let mut captures = Vec::new();
        let mut text_out = text0;
        let delta = 1.0 / self.config.n_steps as f64;
        for step in 0..self.config.n_steps {
            let (mut t, mut x) = (text_in.clone(), latent.clone());
            for layer in 1..=self.n_layers() {
                let (raw, used) = self.layer_forward(layer, step, &mut t, &mut x, ctx.as_ref())?;
                if opts.capture.wants(layer, step) {
                    captures.push(CaptureRecord {
                        layer,
                        step,
                        attention: used,
                        raw: opts.capture.keep_raw.then_some(raw),
                    });
                }
            }
            latent = relax(&latent, &x, delta);
            latents.push(latent.clone());
            if self.config.carry_text {
                text_in = t.clone();
            }
            text_out = t;
        }
        Ok(RunOutput {
            final_state: StreamState {
                text: text_out,
                image: latent,
                step: self.config.n_steps,
            },
            latents,
            captures,
        })
    }

    /// Runs two prompts in lockstep, untuned. `hook` sees both text
    /// streams before attention at every (layer, step) and may edit them.
    pub fn run_paired(
        &self,
        spec_a: &PromptSpec,
        spec_b: &PromptSpec,
        hook: &mut dyn FnMut(HookPoint, &mut Matrix, &mut Matrix),
    ) -> Result<PairedRun, ModelError> {
        for spec in [spec_a, spec_b] {
            if spec.d_c() != self.config.d_c {
                return Err(ModelError::LayoutMismatch(format!(
                    "prompt has d_c={} but the model expects {}",
                    spec.d_c(),
                    self.config.d_c
                )));
            }
        }
        let mut streams = [
            PairStream::new(self.embed(spec_a), self.initial_latent()),
            PairStream::new(self.embed(spec_b), self.initial_latent()),
        ];
        let delta = 1.0 / self.config.n_steps as f64;
        for step in 0..self.config.n_steps {
            let [a, b] = &mut streams;
            let (mut ta, mut xa) = (a.text_in.clone(), a.latent.clone());
            let (mut tb, mut xb) = (b.text_in.clone(), b.latent.clone());
            for layer in 1..=self.n_layers() {
                hook(HookPoint { layer, step }, &mut ta, &mut tb);
                self.layer_forward(layer, step, &mut ta, &mut xa, None)?;
                self.layer_forward(layer, step, &mut tb, &mut xb, None)?;
            }
            for (s, t, x) in [(&mut *a, ta, xa), (&mut *b, tb, xb)] {
                s.latent = relax(&s.latent, &x, delta);
                s.latents.push(s.latent.clone());
                if self.config.carry_text {
                    s.text_in = t.clone();
                }
                s.text_out = t;
            }
        }
        let [a, b] = streams;
        Ok(PairedRun {
            a: a.finish(self.config.n_steps),
            b: b.finish(self.config.n_steps),
        })
    }
}

fn relax(latent: &Matrix, target: &Matrix, delta: f64) -> Matrix {
    Matrix::from_fn(latent.rows(), latent.cols(), |i, j| {
        let x = latent.get(i, j);
        x + delta * (target.get(i, j) - x)
    })
}

struct PairStream {
    text_in: Matrix,
    text_out: Matrix,
    latent: Matrix,
    latents: Vec<Matrix>,
}

impl PairStream {
    fn new(text: Matrix, latent: Matrix) -> Self {
        Self {
            text_in: text.clone(),
            text_out: text,
            latent,
            latents: Vec::new(),
        }
    }

    fn finish(self, n_steps: usize) -> Trajectory {
        Trajectory {
            final_state: StreamState {
                text: self.text_out,
                image: self.latent,
                step: n_steps,
            },
            latents: self.latents,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HookPoint {
    pub layer: usize,
    pub step: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub final_state: StreamState,
    pub latents: Vec<Matrix>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairedRun {
    pub a: Trajectory,
    pub b: Trajectory,
}

/// Which token rows to swap, and where.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExchangePlan {
    pub classes: BTreeSet<TokenClass>,
    pub layers: LayerRange,
    /// Completed-step indices, half-open.
    pub steps: Range<usize>,
}

impl ExchangePlan {
    pub fn active_at(&self, point: HookPoint) -> bool {
        !self.classes.is_empty() && self.layers.contains(point.layer) && self.steps.contains(&point.step)
    }
}

/// Swaps rows of `a` and `b` whose token class is in `classes`.
pub fn swap_class_rows(
    a: &mut Matrix,
    b: &mut Matrix,
    token_classes: &[TokenClass],
    classes: &BTreeSet<TokenClass>,
) {
    for (t, class) in token_classes.iter().enumerate() {
        if classes.contains(class) {
            a.row_mut(t).swap_with_slice(b.row_mut(t));
        }
    }
}

/// Runs two prompts side by side, swapping text rows of the given token
/// classes before attention inside the plan's layer/step window.
pub fn token_exchange(
    model: &MiniDit,
    spec_a: &PromptSpec,
    spec_b: &PromptSpec,
    plan: &ExchangePlan,
) -> Result<PairedRun, ModelError> {
    if !spec_a.same_layout(spec_b) {
        return Err(ModelError::LayoutMismatch(format!(
            "d_c {} vs {}, classes {:?} vs {:?}",
            spec_a.d_c(),
            spec_b.d_c(),
            spec_a.token_classes(),
            spec_b.token_classes()
        )));
    }
    let classes = spec_a.token_classes().to_vec();
    model.run_paired(spec_a, spec_b, &mut |point, ta, tb| {
        if plan.active_at(point) {
            swap_class_rows(ta, tb, &classes, &plan.classes);
        }
    })
}

/// Mean I2T attention that `token` receives from the image queries in
/// `pixels`.
pub fn i2t_mean(attn: &Matrix, d_c: usize, token: usize, pixels: &[usize]) -> f64 {
    if pixels.is_empty() {
        return 0.0;
    }
    pixels.iter().map(|&p| attn.get(d_c + p, token)).sum::<f64>() / pixels.len() as f64
}

/// Region a `(row, col)` entry of the unified map belongs to.
pub fn region_of(d_c: usize, row: usize, col: usize) -> Region {
    match (row < d_c, col < d_c) {
        (true, true) => Region::T2T,
        (true, false) => Region::T2I,
        (false, true) => Region::I2T,
        (false, false) => Region::I2I,
    }
}
