use polyflam_core::copula;
use polyflam_core::dataset::{compute_fi, range_label, FeatureTable, FiLabel, LabelThresholds, RangeClass};
use polyflam_core::forest::{self, Hyperparams, MaxFeatures, Targets};
use polyflam_core::metrics::r2_score;
use proptest::prelude::*;

fn non_constant(v: &[f64]) -> bool {
    v.iter().any(|&x| (x - v[0]).abs() > 1e-3)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn r2_is_invariant_under_affine_rescaling(
        pairs in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 3..40),
        scale in prop_oneof![-50.0f64..-0.1, 0.1f64..50.0],
        shift in -1e3f64..1e3,
    ) {
        let (y, p): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        prop_assume!(non_constant(&y));
        let base = r2_score(&y, &p).unwrap();
        let ys: Vec<f64> = y.iter().map(|v| scale * v + shift).collect();
        let ps: Vec<f64> = p.iter().map(|v| scale * v + shift).collect();
        let moved = r2_score(&ys, &ps).unwrap();
        prop_assert!((base - moved).abs() <= 1e-8 * base.abs().max(1.0), "{} vs {}", base, moved);
        prop_assert!(base <= 1.0);
    }

    #[test]
    fn copula_samples_stay_in_observed_range(
        rows in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 3), 3..20),
        n in 1usize..200,
        seed in any::<u64>(),
    ) {
        let names = vec!["a".to_string(), "b".to_string(), "c".to_string()];
        let table = FeatureTable::new(names, rows.clone(), "test").unwrap();
        let model = copula::fit(&table).unwrap();
        let sample = copula::sample(&model, n, seed).unwrap();
        prop_assert_eq!(sample.n_rows(), n);
        for j in 0..3 {
            let lo = rows.iter().map(|r| r[j]).fold(f64::INFINITY, f64::min);
            let hi = rows.iter().map(|r| r[j]).fold(f64::NEG_INFINITY, f64::max);
            for r in &sample.rows {
                prop_assert!(r[j] >= lo && r[j] <= hi, "{} outside [{}, {}]", r[j], lo, hi);
            }
        }
        prop_assert_eq!(sample, copula::sample(&model, n, seed).unwrap());
    }

    #[test]
    fn copula_follows_positive_rescaling(
        rows in prop::collection::vec(prop::collection::vec(-1e2f64..1e2, 2), 4..15),
        factor in 0.5f64..20.0,
        seed in any::<u64>(),
    ) {
        let names = vec!["a".to_string(), "b".to_string()];
        let scaled: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|v| v * factor).collect()).collect();
        let plain = copula::sample(&copula::fit(&FeatureTable::new(names.clone(), rows, "t").unwrap()).unwrap(), 50, seed).unwrap();
        let stretched = copula::sample(&copula::fit(&FeatureTable::new(names, scaled, "t").unwrap()).unwrap(), 50, seed).unwrap();
        for (p, s) in plain.rows.iter().zip(&stretched.rows) {
            for (x, y) in p.iter().zip(s) {
                prop_assert!((x * factor - y).abs() <= 1e-6 * y.abs().max(1.0));
            }
        }
    }

    #[test]
    fn forest_is_deterministic_and_bounded(
        rows in prop::collection::vec((prop::collection::vec(-10.0f64..10.0, 3), -50.0f64..50.0), 5..40),
        probe in prop::collection::vec(-20.0f64..20.0, 3),
        seed in any::<u64>(),
    ) {
        let (x, y): (Vec<Vec<f64>>, Vec<f64>) = rows.into_iter().unzip();
        let hp = Hyperparams {
            n_trees: 15,
            max_features: MaxFeatures::Sqrt,
            seed,
            ..Hyperparams::default()
        };
        let targets = Targets::Regression(y.clone());
        let a = forest::fit(&x, &targets, &hp).unwrap();
        let b = forest::fit(&x, &targets, &hp).unwrap();
        let pa = a.predict_value(&probe).unwrap();
        prop_assert_eq!(pa.to_bits(), b.predict_value(&probe).unwrap().to_bits());
        let lo = y.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(pa >= lo - 1e-9 && pa <= hi + 1e-9);
    }

    #[test]
    fn range_label_is_total_and_consistent(fi in -0.1f64..0.3) {
        let t = LabelThresholds::default();
        let hits = [t.low, t.medium, t.high].iter().filter(|iv| iv.contains(fi)).count();
        prop_assert!(hits <= 1);
        match range_label(fi, &t) {
            RangeClass::Label(FiLabel::L) => prop_assert!(t.low.contains(fi)),
            RangeClass::Label(FiLabel::M) => prop_assert!(t.medium.contains(fi)),
            RangeClass::Label(FiLabel::H) => prop_assert!(t.high.contains(fi)),
            RangeClass::Unclassified => prop_assert_eq!(hits, 0),
        }
    }

    #[test]
    fn fi_is_homogeneous(
        cp in 10.0f64..500.0,
        mw in 10.0f64..300.0,
        tig in 200.0f64..900.0,
        hc in 5.0f64..60.0,
        k in 0.1f64..10.0,
    ) {
        let base = compute_fi(cp, mw, tig, hc).unwrap();
        let per_mass = compute_fi(cp * k, mw * k, tig, hc).unwrap();
        let ratio = compute_fi(cp, mw, tig * k, hc * k).unwrap();
        let linear = compute_fi(cp * k, mw, tig, hc).unwrap();
        prop_assert!((base - per_mass).abs() <= 1e-12 * base);
        prop_assert!((base - ratio).abs() <= 1e-12 * base);
        prop_assert!((base * k - linear).abs() <= 1e-12 * linear);
    }
}
