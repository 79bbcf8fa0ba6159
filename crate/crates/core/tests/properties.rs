mod common;

use ast_hslw::masks::{assemble, build_sensitivity, MaskOptions};
use ast_hslw::scheduler::Activation;
use ast_hslw::tuner::{tune_attention, NormScope, StepClock, TuneOptions};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{oracle_tune, random_activation, random_instance, random_stochastic, OracleTuning};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tuning_matches_full_matrix_oracle(seed in any::<u64>(), lc in 0.0..8.0f64, ls in 0.0..8.0f64, step in 0usize..16) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_instance(&mut rng);
        let opts = MaskOptions { lambda_cross: lc, lambda_self: ls, i2i_background: seed % 2 == 0 };
        let fm = assemble(&inst.spec, &inst.sketch, opts).unwrap();
        let g = build_sensitivity(&inst.sketch, 4.0, 1.0, false);
        let attn = random_stochastic(&mut rng, fm.n());
        let act = random_activation(&mut rng);
        let got = tune_attention(&attn, &fm, &g, &act, StepClock { total_steps: 16, step }, TuneOptions::default()).unwrap();
        let o = OracleTuning {
            spec: &inst.spec, sketch: &inst.sketch, i2i_background: opts.i2i_background,
            lambda_cross: lc, lambda_self: ls, gamma_text: 4.0, gamma_image: 1.0,
        };
        let want = oracle_tune(&o, &attn, &act, 16, step);
        prop_assert!(got.max_abs_diff(&want).unwrap() <= 1e-12);
        for s in got.row_sums() {
            prop_assert!((s - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn per_region_scope_keeps_segment_mass(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_instance(&mut rng);
        let fm = assemble(&inst.spec, &inst.sketch, MaskOptions::default()).unwrap();
        let g = build_sensitivity(&inst.sketch, 4.0, 1.0, true);
        let attn = random_stochastic(&mut rng, fm.n());
        let got = tune_attention(&attn, &fm, &g, &Activation::all(), StepClock { total_steps: 8, step: 0 },
            TuneOptions { scope: NormScope::PerRegion }).unwrap();
        let d_c = fm.d_c;
        for r in 0..fm.n() {
            let (a, b) = (attn.row(r), got.row(r));
            let sum = |v: &[f64], lo: usize, hi: usize| v[lo..hi].iter().sum::<f64>();
            prop_assert!((sum(a, 0, d_c) - sum(b, 0, d_c)).abs() <= 1e-12);
            prop_assert!((sum(a, d_c, fm.n()) - sum(b, d_c, fm.n())).abs() <= 1e-12);
        }
    }

    #[test]
    fn zero_lambda_is_identity(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_instance(&mut rng);
        let opts = MaskOptions { lambda_cross: 0.0, lambda_self: 0.0, i2i_background: true };
        let fm = assemble(&inst.spec, &inst.sketch, opts).unwrap();
        let g = build_sensitivity(&inst.sketch, 4.0, 1.0, false);
        let attn = random_stochastic(&mut rng, fm.n());
        let got = tune_attention(&attn, &fm, &g, &Activation::all(), StepClock { total_steps: 4, step: 1 }, TuneOptions::default()).unwrap();
        prop_assert!(got.bit_eq(&attn));
    }
}
