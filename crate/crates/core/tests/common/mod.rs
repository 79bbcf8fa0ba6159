//! Brute-force oracles and random instance generators shared by the
//! integration tests. Nothing here calls the library's builders.

#![allow(dead_code)]

use std::collections::BTreeMap;

use ast_hslw::masks::Region;
use ast_hslw::prompt::{PromptSpec, SubPrompt, TokenClass};
use ast_hslw::scheduler::Activation;
use ast_hslw::sketch::SketchSet;
use ast_hslw::tensor::Matrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub struct Instance {
    pub spec: PromptSpec,
    pub sketch: SketchSet,
}

/// Random prompt with gaps between sub-prompts, at most one background
/// range, and one random (possibly overlapping) mask per instance range.
pub fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    let d_c = rng.gen_range(1..=16);
    let mut subs = Vec::new();
    let mut t = 0;
    let mut have_bg = false;
    while t < d_c {
        if rng.gen_bool(0.25) {
            t += 1;
            continue;
        }
        let len = rng.gen_range(1..=(d_c - t).min(5));
        let bg = !have_bg && rng.gen_bool(0.3);
        have_bg |= bg;
        subs.push(SubPrompt {
            label: format!("s{}", subs.len()),
            start: t,
            end: t + len,
            is_background: bg,
        });
        t += len;
    }
    let mut overrides = BTreeMap::new();
    for sp in subs.iter().filter(|s| !s.is_background) {
        for tok in sp.start..sp.end {
            let class = if rng.gen_bool(0.5) {
                TokenClass::Instance
            } else {
                TokenClass::Attribute
            };
            overrides.insert(tok, class);
        }
    }
    let spec = PromptSpec::new(d_c, subs, overrides, false).unwrap();
    let h = rng.gen_range(1..=8);
    let w = rng.gen_range(1..=(64 / h).min(8));
    let n_inst = spec.sub_prompts().iter().filter(|s| !s.is_background).count();
    let masks = (0..n_inst)
        .map(|_| {
            let density = rng.gen_range(0.05..0.6);
            let mut m: Vec<bool> = (0..h * w).map(|_| rng.gen_bool(density)).collect();
            let forced = rng.gen_range(0..h * w);
            m[forced] = true;
            m
        })
        .collect();
    let sketch = SketchSet::new(h, w, masks).unwrap().bind_to(&spec).unwrap();
    Instance { spec, sketch }
}

fn owner(spec: &PromptSpec, tok: usize) -> Option<usize> {
    spec.sub_prompts()
        .iter()
        .position(|sp| sp.start <= tok && tok < sp.end)
}

fn in_mask(sketch: &SketchSet, k: usize, p: usize) -> bool {
    sketch.masks()[k][p]
}

fn in_complement(sketch: &SketchSet, p: usize) -> bool {
    (0..sketch.len()).all(|k| !in_mask(sketch, k, p))
}

pub fn oracle_t2t(spec: &PromptSpec, i: usize, j: usize) -> bool {
    spec.sub_prompts()
        .iter()
        .any(|sp| (sp.start..sp.end).contains(&i) && (sp.start..sp.end).contains(&j))
}

pub fn oracle_i2i(sketch: &SketchSet, background: bool, p: usize, q: usize) -> bool {
    let inst = (0..sketch.len()).any(|k| in_mask(sketch, k, p) && in_mask(sketch, k, q));
    inst || (background && in_complement(sketch, p) && in_complement(sketch, q))
}

pub fn oracle_i2t(spec: &PromptSpec, sketch: &SketchSet, p: usize, tok: usize) -> bool {
    let Some(sub) = owner(spec, tok) else {
        return false;
    };
    if spec.sub_prompts()[sub].is_background {
        return in_complement(sketch, p);
    }
    (0..sketch.len()).any(|k| sketch.binding()[k] == sub && in_mask(sketch, k, p))
}

/// Materializes `L = sum_k s_k s_k^T` and takes row sums.
pub fn oracle_sensitivity(sketch: &SketchSet, gamma_text: f64, gamma_image: f64) -> (Vec<f64>, Vec<f64>) {
    let hw = sketch.hw();
    let mut l = vec![vec![0.0f64; hw]; hw];
    for k in 0..sketch.len() {
        for i in 0..hw {
            for j in 0..hw {
                if in_mask(sketch, k, i) && in_mask(sketch, k, j) {
                    l[i][j] += 1.0;
                }
            }
        }
    }
    let rows: Vec<f64> = l.iter().map(|r| r.iter().sum()).collect();
    let g = |gamma: f64| rows.iter().map(|s| 1.0 - gamma * s / hw as f64).collect();
    (g(gamma_text), g(gamma_image))
}

pub struct OracleTuning<'a> {
    pub spec: &'a PromptSpec,
    pub sketch: &'a SketchSet,
    pub i2i_background: bool,
    pub lambda_cross: f64,
    pub lambda_self: f64,
    pub gamma_text: f64,
    pub gamma_image: f64,
}

/// One full-matrix evaluation of
/// `f_norm(A * exp(B * G * (M - A)))`, where `B` carries each live
/// region's beta and is zero elsewhere, and rows without any live entry
/// are left alone.
pub fn oracle_tune(
    o: &OracleTuning,
    attn: &Matrix,
    act: &Activation,
    total_steps: usize,
    step: usize,
) -> Matrix {
    let d_c = o.spec.d_c();
    let n = attn.rows();
    let (g_text, g_image) = oracle_sensitivity(o.sketch, o.gamma_text, o.gamma_image);
    let ratio = (total_steps - step) as f64 / total_steps as f64;
    let beta = |lambda: f64| lambda * ratio.powi(4);
    let mut out = attn.clone();
    for i in 0..n {
        let mut live_row = false;
        let mut row = vec![0.0; n];
        for j in 0..n {
            let a = attn.get(i, j);
            let (b, g, m) = match (i < d_c, j < d_c) {
                (true, true) if act.regions.contains(&Region::T2T) => {
                    (beta(o.lambda_self), 1.0, oracle_t2t(o.spec, i, j))
                }
                (false, true) if act.i2t_classes.contains(&o.spec.class_of(j)) => (
                    beta(o.lambda_cross),
                    g_text[i - d_c],
                    oracle_i2t(o.spec, o.sketch, i - d_c, j),
                ),
                (false, false) if act.regions.contains(&Region::I2I) => (
                    beta(o.lambda_self),
                    g_image[i - d_c],
                    oracle_i2i(o.sketch, o.i2i_background, i - d_c, j - d_c),
                ),
                _ => (0.0, 0.0, false),
            };
            live_row |= b != 0.0;
            let m = if m { 1.0 } else { 0.0 };
            row[j] = a * (b * g * (m - a)).exp();
        }
        if live_row {
            let s: f64 = row.iter().sum();
            for (j, v) in row.iter().enumerate() {
                out.set(i, j, v / s);
            }
        }
    }
    out
}

/// Random row-stochastic matrix.
pub fn random_stochastic(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
    let mut m = Matrix::from_fn(n, n, |_, _| rng.gen_range(0.0..1.0f64).powi(3) + 1e-6);
    for r in 0..n {
        let s: f64 = m.row(r).iter().sum();
        for v in m.row_mut(r) {
            *v /= s;
        }
    }
    m
}

pub fn random_activation(rng: &mut ChaCha8Rng) -> Activation {
    let mut act = Activation::default();
    for r in [Region::T2T, Region::I2I] {
        if rng.gen_bool(0.6) {
            act.regions.insert(r);
        }
    }
    for c in [TokenClass::Attribute, TokenClass::Instance, TokenClass::Background] {
        if rng.gen_bool(0.6) {
            act.i2t_classes.insert(c);
        }
    }
    act
}
