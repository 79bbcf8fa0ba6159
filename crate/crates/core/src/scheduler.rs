//! Step-layer-wise activation table.
//!
//! Layers are 1-based and inclusive, steps are 0-based counts of completed
//! denoising steps. Everything outside the first `window_steps` steps is
//! left untuned.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::masks::Region;
use crate::prompt::TokenClass;

/// Reference layer count the built-in ranges are stated against.
pub const REFERENCE_LAYERS: usize = 57;
pub const REFERENCE_STEPS: usize = 32;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScheduleError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("range {name} = [{start},{end}] is outside [1,{n_layers}]")]
    Range {
        name: &'static str,
        start: usize,
        end: usize,
        n_layers: usize,
    },
    #[error("window {window} exceeds {n_steps} steps")]
    Window { window: usize, n_steps: usize },
    #[error("unknown built-in profile `{0}`")]
    UnknownProfile(String),
}

impl ScheduleError {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Syntax { .. } => "SyntaxError",
            Self::Range { .. } => "RangeError",
            Self::Window { .. } => "WindowError",
            Self::UnknownProfile(_) => "UnknownProfile",
        }
    }
}

/// Inclusive 1-based layer range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LayerRange {
    pub start: usize,
    pub end: usize,
}

impl LayerRange {
    pub const fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn contains(&self, layer: usize) -> bool {
        self.start <= layer && layer <= self.end
    }
}

impl fmt::Display for LayerRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.start, self.end)
    }
}

impl FromStr for LayerRange {
    type Err = String;

    /// Accepts `a-b`, `a..b` (both inclusive) or a single layer.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let (a, b) = s
            .split_once("..")
            .or_else(|| s.split_once('-'))
            .unwrap_or((s, s));
        let parse = |t: &str| t.trim().parse::<usize>().map_err(|_| format!("bad range `{s}`"));
        let (start, end) = (parse(a)?, parse(b)?);
        if start > end {
            return Err(format!("range `{s}` is reversed"));
        }
        Ok(Self { start, end })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScheduleProfile {
    pub n_layers: usize,
    pub n_steps: usize,
    pub window_steps: usize,
    pub i2t_instance: LayerRange,
    pub i2t_background: LayerRange,
    pub i2t_attribute: LayerRange,
    pub t2t: LayerRange,
    pub i2i: LayerRange,
}

/// What gets tuned at one (layer, step).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Activation {
    pub regions: BTreeSet<Region>,
    pub i2t_classes: BTreeSet<TokenClass>,
}

impl Activation {
    pub fn is_empty(&self) -> bool {
        self.regions.is_empty() && self.i2t_classes.is_empty()
    }

    pub fn has(&self, region: Region) -> bool {
        self.regions.contains(&region)
    }

    pub fn i2t_active(&self) -> bool {
        !self.i2t_classes.is_empty()
    }

    /// Every region and every tunable I2T class.
    pub fn all() -> Self {
        Self {
            regions: [Region::T2T, Region::I2I].into_iter().collect(),
            i2t_classes: [TokenClass::Attribute, TokenClass::Instance, TokenClass::Background]
                .into_iter()
                .collect(),
        }
    }
}

/// The reference 57-layer, 32-step table.
pub fn default_profile() -> ScheduleProfile {
    ScheduleProfile {
        n_layers: REFERENCE_LAYERS,
        n_steps: REFERENCE_STEPS,
        window_steps: 16,
        i2t_instance: LayerRange::new(6, 34),
        i2t_background: LayerRange::new(20, 24),
        i2t_attribute: LayerRange::new(25, 57),
        t2t: LayerRange::new(20, 57),
        i2i: LayerRange::new(11, 49),
    }
}

/// Every range spans all layers and the window covers every step.
pub fn full_layer_profile(n_layers: usize, n_steps: usize) -> ScheduleProfile {
    let all = LayerRange::new(1, n_layers.max(1));
    ScheduleProfile {
        n_layers,
        n_steps,
        window_steps: n_steps,
        i2t_instance: all,
        i2t_background: all,
        i2t_attribute: all,
        t2t: all,
        i2i: all,
    }
}

/// A profile whose activation is empty everywhere.
pub fn disabled_profile(n_layers: usize, n_steps: usize) -> ScheduleProfile {
    ScheduleProfile {
        window_steps: 0,
        ..full_layer_profile(n_layers, n_steps)
    }
}

/// Rescales a profile to `n_layers` and `n_steps`.
///
/// Each bound `b` maps to `max(1, round(b * n_layers / profile.n_layers))`;
/// the window scales by `n_steps / profile.n_steps`, floored, with a floor
/// of 1 unless the source window was already 0.
pub fn scale_profile(profile: &ScheduleProfile, n_layers: usize, n_steps: usize) -> ScheduleProfile {
    let n_layers = n_layers.max(1);
    let src = profile.n_layers.max(1) as f64;
    let bound = |b: usize| -> usize {
        let v = (b as f64 * n_layers as f64 / src).round() as usize;
        v.clamp(1, n_layers)
    };
    let range = |r: LayerRange| LayerRange::new(bound(r.start), bound(r.end));
    let window = if profile.window_steps == 0 {
        0
    } else {
        let w = profile.window_steps * n_steps / profile.n_steps.max(1);
        w.max(1).min(n_steps)
    };
    ScheduleProfile {
        n_layers,
        n_steps,
        window_steps: window,
        i2t_instance: range(profile.i2t_instance),
        i2t_background: range(profile.i2t_background),
        i2t_attribute: range(profile.i2t_attribute),
        t2t: range(profile.t2t),
        i2i: range(profile.i2i),
    }
}

/// Built-ins: `flux-dev-57`, `full-layer`, `toy-N`, `off`. Non-default
/// shapes are taken from `n_layers`/`n_steps`.
pub fn builtin_profile(
    name: &str,
    n_layers: usize,
    n_steps: usize,
) -> Result<ScheduleProfile, ScheduleError> {
    match name {
        "flux-dev-57" => Ok(default_profile()),
        "full-layer" => Ok(full_layer_profile(n_layers, n_steps)),
        "off" => Ok(disabled_profile(n_layers, n_steps)),
        other => {
            let n = other
                .strip_prefix("toy-")
                .and_then(|n| n.parse::<usize>().ok())
                .filter(|&n| n >= 1)
                .ok_or_else(|| ScheduleError::UnknownProfile(other.to_string()))?;
            Ok(scale_profile(&default_profile(), n, n_steps))
        }
    }
}

pub fn activation_at(profile: &ScheduleProfile, layer: usize, step: usize) -> Activation {
    let mut act = Activation::default();
    if step >= profile.window_steps || step >= profile.n_steps {
        return act;
    }
    if profile.t2t.contains(layer) {
        act.regions.insert(Region::T2T);
    }
    if profile.i2i.contains(layer) {
        act.regions.insert(Region::I2I);
    }
    for (range, class) in [
        (profile.i2t_instance, TokenClass::Instance),
        (profile.i2t_background, TokenClass::Background),
        (profile.i2t_attribute, TokenClass::Attribute),
    ] {
        if range.contains(layer) {
            act.i2t_classes.insert(class);
        }
    }
    act
}

impl ScheduleProfile {
    pub fn validate(&self) -> Result<(), ScheduleError> {
        for (name, r) in self.named_ranges() {
            if r.start < 1 || r.end > self.n_layers || r.start > r.end {
                return Err(ScheduleError::Range {
                    name,
                    start: r.start,
                    end: r.end,
                    n_layers: self.n_layers,
                });
            }
        }
        if self.window_steps > self.n_steps {
            return Err(ScheduleError::Window {
                window: self.window_steps,
                n_steps: self.n_steps,
            });
        }
        Ok(())
    }

    fn named_ranges(&self) -> [(&'static str, LayerRange); 5] {
        [
            ("i2t_instance", self.i2t_instance),
            ("i2t_background", self.i2t_background),
            ("i2t_attribute", self.i2t_attribute),
            ("t2t", self.t2t),
            ("i2i", self.i2i),
        ]
    }

    /// Serializes to the `key = value` profile format.
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "n_layers = {}\nn_steps = {}\nwindow_steps = {}\n",
            self.n_layers, self.n_steps, self.window_steps
        );
        for (name, r) in self.named_ranges() {
            s.push_str(&format!("{name} = {} {}\n", r.start, r.end));
        }
        s
    }

    /// Parses the format written by [`ScheduleProfile::to_text`]. Missing
    /// keys fall back to the reference profile.
    pub fn parse(source: &str) -> Result<Self, ScheduleError> {
        let mut p = default_profile();
        for (idx, raw) in source.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| ScheduleError::Syntax { line: line_no, msg };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err("expected `key = value`".into()))?;
            // ranges may be written `a b`, `a-b` or `a..b`
            let spaced = value.replace("..", " ").replace('-', " ");
            let nums: Vec<usize> = spaced
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| err(format!("bad number `{t}`"))))
                .collect::<Result<_, _>>()?;
            let key = key.trim();
            match (key, nums.as_slice()) {
                ("n_layers", [n]) => p.n_layers = *n,
                ("n_steps", [n]) => p.n_steps = *n,
                ("window_steps", [n]) => p.window_steps = *n,
                (
                    "i2t_instance" | "i2t_background" | "i2t_attribute" | "t2t" | "i2i",
                    [a, b],
                ) => {
                    let r = LayerRange::new(*a, *b);
                    match key {
                        "i2t_instance" => p.i2t_instance = r,
                        "i2t_background" => p.i2t_background = r,
                        "i2t_attribute" => p.i2t_attribute = r,
                        "t2t" => p.t2t = r,
                        _ => p.i2i = r,
                    }
                }
                _ => return Err(err(format!("bad entry for `{key}`"))),
            }
        }
        p.validate()?;
        Ok(p)
    }
}
