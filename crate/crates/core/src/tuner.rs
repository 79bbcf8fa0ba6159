//! Post-softmax attention specialty tuning.
//!
//! Each live region of a row-stochastic map is rescaled by
//! `a * exp(beta * g * (m - a))` and the row is renormalized, where `m` is
//! the binary region mask, `g` the per-query sensitivity and
//! `beta = lambda * ((T - s) / T)^4` with `s` completed steps out of `T`.
//! Entries under `m = 1` grow relative to entries under `m = 0`.

use thiserror::Error;

use crate::masks::{FullMask, Region, SensitivityVector};
use crate::scheduler::Activation;
use crate::tensor::{normalize_in_place, Matrix, TensorError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TuneError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid tuning parameters: {0}")]
    InvalidParams(String),
}

impl TuneError {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Tensor(e) => e.kind(),
            Self::InvalidParams(_) => "InvalidParams",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TuneParams {
    lambda: f64,
    total_steps: usize,
    step: usize,
}

impl TuneParams {
    pub fn new(lambda: f64, total_steps: usize, step: usize) -> Result<Self, TuneError> {
        if total_steps == 0 {
            return Err(TuneError::InvalidParams("T must be at least 1".into()));
        }
        if step >= total_steps {
            return Err(TuneError::InvalidParams(format!(
                "step {step} outside [0,{total_steps})"
            )));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(TuneError::InvalidParams(format!("lambda {lambda} must be >= 0")));
        }
        Ok(Self {
            lambda,
            total_steps,
            step,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    pub fn step(&self) -> usize {
        self.step
    }

    /// `lambda * (t / T)^4` with `t = T - s` remaining steps.
    pub fn beta(&self) -> f64 {
        let t = (self.total_steps - self.step) as f64 / self.total_steps as f64;
        self.lambda * t.powi(4)
    }
}

/// Position in the sampling loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepClock {
    pub total_steps: usize,
    pub step: usize,
}

impl StepClock {
    pub fn beta(&self, lambda: f64) -> Result<f64, TuneError> {
        Ok(TuneParams::new(lambda, self.total_steps, self.step)?.beta())
    }
}

/// Where the post-tuning renormalization is applied.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum NormScope {
    /// Whole `(d_c + hw)`-wide row.
    #[default]
    FullRow,
    /// Each tuned segment is rescaled back to its original mass; untouched
    /// segments keep their exact values.
    PerRegion,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TuneOptions {
    pub scope: NormScope,
}

#[inline]
fn multiplier(beta: f64, g: f64, m: f64, a: f64) -> f64 {
    (beta * g * (m - a)).exp()
}

/// Multiplies a block of attention by `exp(beta * g_row * (m - a))` without
/// normalizing. `mask` holds 0/1 values, `g` one value per row.
pub fn tune_region(a: &Matrix, mask: &Matrix, g: &[f64], beta: f64) -> Result<Matrix, TuneError> {
    if a.shape() != mask.shape() {
        return Err(TensorError::ShapeMismatch {
            left: a.shape(),
            right: mask.shape(),
        }
        .into());
    }
    if g.len() != a.rows() {
        return Err(TensorError::ShapeMismatch {
            left: a.shape(),
            right: (g.len(), 1),
        }
        .into());
    }
    let out = Matrix::from_fn(a.rows(), a.cols(), |i, j| {
        let v = a.get(i, j);
        v * multiplier(beta, g[i], mask.get(i, j), v)
    });
    if !out.is_finite() {
        return Err(TensorError::NonFinite { row: 0, col: 0 }.into());
    }
    Ok(out)
}

/// Per-row plan of which columns get which multiplier.
struct RowPlan {
    beta_t2t: Option<f64>,
    beta_i2i: Option<f64>,
    beta_i2t: Option<f64>,
    i2t_cols: Vec<bool>,
}

impl RowPlan {
    fn new(
        mask: &FullMask,
        activation: &Activation,
        clock: StepClock,
    ) -> Result<Self, TuneError> {
        let live = |region: Region, on: bool| -> Result<Option<f64>, TuneError> {
            if !on {
                return Ok(None);
            }
            let lambda = mask.lambdas.get(region).unwrap_or(0.0);
            let beta = clock.beta(lambda)?;
            Ok((beta != 0.0).then_some(beta))
        };
        let i2t_cols: Vec<bool> = mask
            .token_classes
            .iter()
            .map(|c| activation.i2t_classes.contains(c))
            .collect();
        Ok(Self {
            beta_t2t: live(Region::T2T, activation.has(Region::T2T))?,
            beta_i2i: live(Region::I2I, activation.has(Region::I2I))?,
            beta_i2t: live(Region::I2T, i2t_cols.iter().any(|&b| b))?,
            i2t_cols,
        })
    }

    fn is_noop(&self) -> bool {
        self.beta_t2t.is_none() && self.beta_i2i.is_none() && self.beta_i2t.is_none()
    }
}

fn check_inputs(attn: &Matrix, mask: &FullMask, g: &SensitivityVector) -> Result<(), TuneError> {
    let n = mask.n();
    if attn.shape() != (n, n) {
        return Err(TensorError::ShapeMismatch {
            left: attn.shape(),
            right: (n, n),
        }
        .into());
    }
    if g.g_text.len() != mask.hw || g.g_image.len() != mask.hw {
        return Err(TensorError::ShapeMismatch {
            left: (mask.hw, 1),
            right: (g.g_text.len(), g.g_image.len()),
        }
        .into());
    }
    Ok(())
}

/// Rescales `seg` (whose values were `orig` before tuning) back to the
/// original mass.
fn restore_mass(seg: &mut [f64], orig_mass: f64, row: usize) -> Result<(), TuneError> {
    if orig_mass == 0.0 {
        return Ok(());
    }
    normalize_in_place(seg, row)?;
    for v in seg.iter_mut() {
        *v *= orig_mass;
    }
    Ok(())
}

/// Tunes one row in place. `r` is the row index in the full map.
fn tune_row(
    row: &mut [f64],
    r: usize,
    mask: &FullMask,
    g: &SensitivityVector,
    plan: &RowPlan,
    scope: NormScope,
) -> Result<(), TuneError> {
    let d_c = mask.d_c;
    let mut touched = false;
    if r < d_c {
        if let Some(beta) = plan.beta_t2t {
            let seg = &mut row[..d_c];
            let mass: f64 = seg.iter().sum();
            for (j, v) in seg.iter_mut().enumerate() {
                *v *= multiplier(beta, 1.0, mask.t2t.value(r, j), *v);
            }
            if scope == NormScope::PerRegion {
                restore_mass(seg, mass, r)?;
            }
            touched = true;
        }
    } else {
        let i = r - d_c;
        if let Some(beta) = plan.beta_i2t {
            let gi = g.g_text[i];
            let mut mass = 0.0;
            let mut tuned = 0.0;
            for j in 0..d_c {
                if plan.i2t_cols[j] {
                    mass += row[j];
                    row[j] *= multiplier(beta, gi, mask.i2t.value(i, j), row[j]);
                    tuned += row[j];
                }
            }
            if scope == NormScope::PerRegion && mass != 0.0 {
                if tuned < crate::tensor::ZERO_ROW_EPS {
                    return Err(TensorError::ZeroRow { row: r, sum: tuned }.into());
                }
                for j in (0..d_c).filter(|&j| plan.i2t_cols[j]) {
                    row[j] = row[j] / tuned * mass;
                }
            }
            touched = true;
        }
        if let Some(beta) = plan.beta_i2i {
            let gi = g.g_image[i];
            let seg = &mut row[d_c..];
            let mass: f64 = seg.iter().sum();
            for (j, v) in seg.iter_mut().enumerate() {
                *v *= multiplier(beta, gi, mask.i2i.value(i, j), *v);
            }
            if scope == NormScope::PerRegion {
                restore_mass(seg, mass, r)?;
            }
            touched = true;
        }
    }
    if touched {
        if row.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { row: r, col: 0 }.into());
        }
        if scope == NormScope::FullRow {
            normalize_in_place(row, r)?;
        }
    }
    Ok(())
}

/// Applies the tuning to every region live under `activation`.
///
/// Rows with no live region are copied bit for bit. Inside a tuned row,
/// dead columns (T2I, inactive I2T classes) carry multiplier 1 and only
/// change through the renormalization.
pub fn tune_attention(
    attn: &Matrix,
    mask: &FullMask,
    g: &SensitivityVector,
    activation: &Activation,
    clock: StepClock,
    opts: TuneOptions,
) -> Result<Matrix, TuneError> {
    check_inputs(attn, mask, g)?;
    let mut out = attn.clone();
    if activation.is_empty() {
        return Ok(out);
    }
    let plan = RowPlan::new(mask, activation, clock)?;
    if plan.is_noop() {
        return Ok(out);
    }
    for r in 0..out.rows() {
        tune_row(out.row_mut(r), r, mask, g, &plan, opts.scope)?;
    }
    Ok(out)
}

/// Pre-softmax baseline in the style of Dense Diffusion: adds
/// `beta * g * m` to the logits of live regions. Returns modified logits;
/// softmax is left to the caller.
pub fn presoftmax_modulate(
    logits: &Matrix,
    mask: &FullMask,
    g: &SensitivityVector,
    activation: &Activation,
    clock: StepClock,
) -> Result<Matrix, TuneError> {
    check_inputs(logits, mask, g)?;
    let mut out = logits.clone();
    if activation.is_empty() {
        return Ok(out);
    }
    let plan = RowPlan::new(mask, activation, clock)?;
    let d_c = mask.d_c;
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        if r < d_c {
            if let Some(beta) = plan.beta_t2t {
                for (j, v) in row[..d_c].iter_mut().enumerate() {
                    *v += beta * mask.t2t.value(r, j);
                }
            }
        } else {
            let i = r - d_c;
            if let Some(beta) = plan.beta_i2t {
                for j in (0..d_c).filter(|&j| plan.i2t_cols[j]) {
                    row[j] += beta * g.g_text[i] * mask.i2t.value(i, j);
                }
            }
            if let Some(beta) = plan.beta_i2i {
                for (j, v) in row[d_c..].iter_mut().enumerate() {
                    *v += beta * g.g_image[i] * mask.i2i.value(i, j);
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::masks::{assemble, build_sensitivity, MaskOptions};
    use crate::prompt::{classify_tokens, parse_prompt_spec, Lexicon, TokenClass};
    use crate::sketch::SketchSet;
    use crate::tensor::row_softmax;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};

    #[test]
    fn beta_examples() {
        assert_eq!(TuneParams::new(5.0, 32, 0).unwrap().beta(), 5.0);
        assert_eq!(TuneParams::new(4.0, 32, 16).unwrap().beta(), 0.25);
        let late = TuneParams::new(7.0, 1000, 999).unwrap().beta();
        assert!(late < 1e-10);
    }

    #[test]
    fn beta_rejects_bad_params() {
        assert!(TuneParams::new(1.0, 0, 0).is_err());
        assert!(TuneParams::new(1.0, 4, 4).is_err());
        assert!(TuneParams::new(-1.0, 4, 0).is_err());
    }

    #[test]
    fn tune_region_hand_example() {
        let a = Matrix::from_rows(&[vec![0.5, 0.5]]).unwrap();
        let m = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let pre = tune_region(&a, &m, &[1.0], 1.0).unwrap();
        assert_abs_diff_eq!(pre.get(0, 0), 0.5 * 0.5f64.exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(pre.get(0, 1), 0.5 * (-0.5f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(pre.get(0, 0), 0.8244, epsilon = 5e-5);
        assert_abs_diff_eq!(pre.get(0, 1), 0.3033, epsilon = 5e-5);
        let post = crate::tensor::row_normalize(&pre).unwrap();
        // e^0.5 / (e^0.5 + e^-0.5) = 1 / (1 + e^-1)
        assert_abs_diff_eq!(post.get(0, 0), 1.0 / (1.0 + (-1.0f64).exp()), epsilon = 1e-15);
        assert_abs_diff_eq!(post.get(0, 0), 0.7311, epsilon = 5e-5);
        assert_abs_diff_eq!(post.get(0, 1), 0.2689, epsilon = 5e-5);
    }

    #[test]
    fn tune_region_beta_zero_and_fixed_point() {
        let a = Matrix::from_rows(&[vec![0.2, 0.3, 0.5]]).unwrap();
        let m = Matrix::from_rows(&[vec![1.0, 0.0, 1.0]]).unwrap();
        assert_eq!(tune_region(&a, &m, &[1.0], 0.0).unwrap(), a);
        let same = Matrix::from_rows(&[vec![1.0, 0.0, 0.0]]).unwrap();
        assert_eq!(tune_region(&same, &same, &[2.0], 3.0).unwrap(), same);
    }

    #[test]
    fn tune_region_shape_mismatch() {
        let a = Matrix::zeros(2, 2);
        assert_eq!(
            tune_region(&a, &Matrix::zeros(2, 3), &[1.0, 1.0], 1.0).unwrap_err().kind(),
            "ShapeMismatch"
        );
        assert!(tune_region(&a, &a, &[1.0], 1.0).is_err());
    }

    fn setup() -> (FullMask, SensitivityVector) {
        let spec = parse_prompt_spec(
            "d_c = 7\nsub = \"Red cube\" 0 3\nsub = \"in a forest\" 3 7 background\n",
        )
        .unwrap();
        let lex: Lexicon = [("red", TokenClass::Attribute), ("cube", TokenClass::Instance)]
            .into_iter()
            .collect();
        let spec = classify_tokens(&spec, &lex, false).unwrap();
        let set = SketchSet::from_rects(4, 4, &[(0, 0, 1, 2)]).unwrap();
        let fm = assemble(&spec, &set, MaskOptions::default()).unwrap();
        let g = build_sensitivity(&set, 4.0, 1.0, false);
        (fm, g)
    }

    fn random_map(n: usize, seed: u64) -> Matrix {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        row_softmax(&Matrix::from_fn(n, n, |_, _| rng.gen_range(-3.0..3.0)))
    }

    const CLOCK: StepClock = StepClock {
        total_steps: 32,
        step: 2,
    };

    #[test]
    fn empty_activation_is_bit_identical() {
        let (fm, g) = setup();
        let a = random_map(23, 1);
        let out = tune_attention(&a, &fm, &g, &Activation::default(), CLOCK, TuneOptions::default())
            .unwrap();
        assert!(out.bit_eq(&a));
    }

    #[test]
    fn instance_only_leaves_other_columns_at_multiplier_one() {
        let (fm, g) = setup();
        let a = random_map(23, 2);
        let act = Activation {
            i2t_classes: [TokenClass::Instance].into_iter().collect(),
            ..Activation::default()
        };
        let out = tune_attention(&a, &fm, &g, &act, CLOCK, TuneOptions::default()).unwrap();
        for r in 0..7 {
            assert!(out.row(r).iter().zip(a.row(r)).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        for r in 7..23 {
            // every non-instance column scales by the same renormalization factor
            let ratio = out.get(r, 7) / a.get(r, 7);
            for c in (0..23).filter(|&c| c != 1 && c != 2) {
                assert_abs_diff_eq!(out.get(r, c) / a.get(r, c), ratio, epsilon = 1e-12);
            }
            let s: f64 = out.row(r).iter().sum();
            assert_abs_diff_eq!(s, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn per_region_scope_keeps_untouched_segments() {
        let (fm, g) = setup();
        let a = random_map(23, 3);
        let opts = TuneOptions {
            scope: NormScope::PerRegion,
        };
        let out = tune_attention(&a, &fm, &g, &Activation::all(), CLOCK, opts).unwrap();
        for r in 0..7 {
            for c in 7..23 {
                assert_eq!(out.get(r, c).to_bits(), a.get(r, c).to_bits());
            }
            let t2t_before: f64 = a.row(r)[..7].iter().sum();
            let t2t_after: f64 = out.row(r)[..7].iter().sum();
            assert_abs_diff_eq!(t2t_before, t2t_after, epsilon = 1e-12);
        }
        for s in out.row_sums() {
            assert_abs_diff_eq!(s, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn negative_sensitivity_flips_direction() {
        let a = Matrix::from_rows(&[vec![0.5, 0.5]]).unwrap();
        let m = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let pre = tune_region(&a, &m, &[-3.0], 1.0).unwrap();
        assert!(pre.get(0, 0) < pre.get(0, 1));
    }

    #[test]
    fn zero_lambda_is_identity() {
        let (mut fm, g) = setup();
        fm.lambdas = crate::masks::RegionLambdas { t2t: 0.0, i2i: 0.0, i2t: 0.0 };
        let a = random_map(23, 4);
        let out = tune_attention(&a, &fm, &g, &Activation::all(), CLOCK, TuneOptions::default())
            .unwrap();
        assert!(out.bit_eq(&a));
    }

    #[test]
    fn wrong_map_size_is_rejected() {
        let (fm, g) = setup();
        let a = random_map(22, 5);
        assert!(tune_attention(&a, &fm, &g, &Activation::all(), CLOCK, TuneOptions::default())
            .is_err());
    }

    #[test]
    fn presoftmax_adds_to_masked_logits() {
        let (fm, g) = setup();
        let logits = Matrix::zeros(23, 23);
        let act = Activation {
            regions: [Region::T2T].into_iter().collect(),
            ..Activation::default()
        };
        let clock = StepClock { total_steps: 32, step: 0 };
        let out = presoftmax_modulate(&logits, &fm, &g, &act, clock).unwrap();
        assert_eq!(out.get(0, 1), 3.5);
        assert_eq!(out.get(0, 4), 0.0);
        assert_eq!(out.get(8, 8), 0.0);
    }
}
