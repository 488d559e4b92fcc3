mod support;

use evr_core::dists::{self, Density1D, MuItem};
use evr_core::evr::{self, EvrOptions};
use evr_core::oracle;
use proptest::prelude::*;
use support::{affine_version, instance, point_mass_version, Class, CLASSES};

fn class() -> impl Strategy<Value = Class> {
    prop::sample::select(CLASSES.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 300, ..ProptestConfig::default() })]

    #[test]
    fn evr_is_nonnegative(c in class(), seed in any::<u64>()) {
        let (m, s) = instance(c, seed);
        let r = evr::evr(&m, &s).unwrap();
        prop_assert!(r.engine.is_exact());
        prop_assert!(r.evr >= -1e-9, "{c:?}: {}", r.evr);
        prop_assert_eq!(r.evr, r.value_with - r.value_without);
    }

    #[test]
    fn point_masses_are_worthless(c in class(), seed in any::<u64>()) {
        let (m, s) = instance(c, seed);
        let r = evr::evr(&m, &point_mass_version(&s)).unwrap();
        prop_assert_eq!(r.evr, 0.0);
    }

    #[test]
    fn affine_equivariance(c in class(), seed in any::<u64>(), a in 0.01f64..20.0, b in -5.0f64..5.0) {
        let (m, s) = instance(c, seed);
        let base = evr::evr(&m, &s).unwrap();
        let (m2, s2) = affine_version(&m, &s, a, b);
        let moved = evr::evr(&m2, &s2).unwrap();
        prop_assert!((moved.evr - a * base.evr).abs() <= 1e-9 * a.max(1.0),
            "{c:?}: {} vs {}", moved.evr, a * base.evr);
        prop_assert_eq!(moved.default_action, base.default_action);
    }

    #[test]
    fn structural_value_bounded_by_evpi(seed in any::<u64>()) {
        let (m, s) = instance(Class::S, seed);
        let r = evr::evr(&m, &s).unwrap();
        let op = evr::operative_model(&m, &s).unwrap();
        prop_assert!(r.evr <= op.evpi() + 1e-9);
    }

    #[test]
    fn e_max_dominates_means(seed in any::<u64>()) {
        let (m, s) = instance(Class::Ca, seed);
        let profile = evr::compile_mu(&m, &s).unwrap();
        let items = evr::profile_items(&profile).unwrap();
        let e = dists::e_max_indep(&items);
        let best_mean = items.iter().map(MuItem::mean).fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(e >= best_mean - 1e-12);
    }

    #[test]
    fn quantile_inverts_cdf(lo in -2.0f64..2.0, w in 0.01f64..3.0, u in 0.001f64..0.999) {
        let d = Density1D::triangular(lo, lo + 0.3 * w, lo + w).unwrap();
        prop_assert!((d.cdf(d.quantile(u)) - u).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn monte_carlo_agrees_with_exact(c in class(), seed in any::<u64>()) {
        let (m, s) = instance(c, seed);
        let exact = evr::value_with(&m, &s).unwrap().0;
        let est = oracle::mc_value_with(&m, &s, 40_000, seed).unwrap();
        prop_assert!((est.estimate - exact).abs() <= 5.0 * est.stderr + 1e-12,
            "{c:?}: {} ± {} vs {exact}", est.estimate, est.stderr);
    }

    #[test]
    fn forced_monte_carlo_is_reproducible(seed in any::<u64>()) {
        let (m, s) = instance(Class::Qp, seed);
        let opts = EvrOptions { engine: evr::EnginePreference::MonteCarlo, mc_samples: 10_000, seed };
        let a = evr::evr_with(&m, &s, &opts).unwrap();
        let b = evr::evr_with(&m, &s, &opts).unwrap();
        prop_assert_eq!(a, b);
    }
}
