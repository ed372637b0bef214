use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use holpower::analytics::{
    build_sigma_fixed, check_value_differences, gamma, gamma_for_pressure, semi_analytic_policy, sigma_bounds, t_operator,
};
use holpower::dp::solve;
use holpower::model::{PowerCost, SuccessFunction};
use holpower::verify::random_fixed_spec;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn t_operator_is_non_decreasing(seed in any::<u64>(), x in 0.0f64..50.0, dx in 0.0f64..50.0) {
        let spec = random_fixed_spec(&mut ChaCha8Rng::seed_from_u64(seed));
        let level = spec.interference.level(0);
        for b in 1..=spec.backlog {
            prop_assert!(t_operator(&spec, level, b, x + dx) >= t_operator(&spec, level, b, x) - 1e-12);
        }
    }

    #[test]
    fn value_differences_follow_sigma(seed in any::<u64>()) {
        let spec = random_fixed_spec(&mut ChaCha8Rng::seed_from_u64(seed));
        let (v, mu) = solve(&spec).unwrap();
        let st = build_sigma_fixed(&spec).unwrap();
        prop_assert!(check_value_differences(&spec, &v, &st).unwrap() <= 1e-9);
        prop_assert_eq!(semi_analytic_policy(&st, &spec), mu);
    }

    #[test]
    fn sigma_stays_within_its_bounds(seed in any::<u64>()) {
        let spec = random_fixed_spec(&mut ChaCha8Rng::seed_from_u64(seed));
        let st = build_sigma_fixed(&spec).unwrap();
        prop_assert!(sigma_bounds(&st, &spec).min_slack(&st) >= -1e-9);
    }

    #[test]
    fn gamma_never_exceeds_pressure_over_slope(
        family in 0usize..3,
        level in 0.1f64..10.0,
        k in 0.01f64..100.0,
        pressure in 0.0f64..1e6,
    ) {
        // k*gamma - s(gamma)*x <= -s(0)*x, so k*gamma <= x
        let s = [
            SuccessFunction::Ratio,
            SuccessFunction::exponential(1.5).unwrap(),
            SuccessFunction::sigmoid(1.0, 0.5, 8.0).unwrap(),
        ][family].clone();
        let g = gamma_for_pressure(&s, level, k, pressure).unwrap();
        prop_assert!(g >= 0.0);
        prop_assert!(g <= pressure / k * (1.0 + 1e-12) + 1e-12, "gamma {} pressure {} k {}", g, pressure, k);
    }
}

#[test]
fn gamma_grows_sublinearly_in_pressure() {
    let families = [
        SuccessFunction::Ratio,
        SuccessFunction::exponential(1.0).unwrap(),
        SuccessFunction::sigmoid(2.0, 0.0, 4.0).unwrap(),
    ];
    for s in &families {
        let ratios: Vec<f64> = [1e2, 1e4, 1e6]
            .iter()
            .map(|&x| gamma_for_pressure(s, 1.0, 1.0, x).unwrap() / x)
            .collect();
        for w in ratios.windows(2) {
            assert!(w[1] < w[0] / 5.0, "{s:?}: {ratios:?}");
        }
    }
}

#[test]
fn gamma_from_sigma_table_uses_drop_cost_plus_sigma() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut spec = random_fixed_spec(&mut rng);
    while !matches!(spec.costs.power, PowerCost::Linear { .. }) || spec.deadline < 2 {
        spec = random_fixed_spec(&mut rng);
    }
    let st = build_sigma_fixed(&spec).unwrap();
    let level = spec.interference.level(0);
    for b in 1..=spec.backlog {
        for d in 2..=spec.deadline {
            let pressure = spec.drop_cost() + st.sigma(b, d - 1);
            let direct = gamma_for_pressure(&spec.success, level, 0.7, pressure).unwrap();
            assert_eq!(gamma(&st, &spec, b, d, level, 0.7).unwrap(), direct);
        }
    }
}
