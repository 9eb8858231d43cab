use laglm::analysis::plot::{bnsl_fit_svg, pca_scatter_svg};
use laglm::analysis::{
    bnsl_eval, bnsl_fit, dataset_feature_matrix, feature_set_registry, pca_project, BnslParams, CoreFeatures,
    FeatureSet,
};
use laglm::data::synthetic::pretraining_corpus;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn shape_features_ignore_positive_affine_maps(
        xs in prop::collection::vec(-50.0f64..50.0, 32..200),
        scale in 0.01f64..100.0,
        shift in -1e3f64..1e3,
    ) {
        let f = CoreFeatures;
        let a = f.compute(&xs).unwrap();
        prop_assume!(!a.degenerate);
        let ys: Vec<f64> = xs.iter().map(|x| scale * x + shift).collect();
        let b = f.compute(&ys).unwrap();
        prop_assert!((b.values[0] - (scale * a.values[0] + shift)).abs() < 1e-8 * (1.0 + b.values[0].abs()));
        prop_assert!((b.values[1] - scale * a.values[1]).abs() < 1e-8 * (1.0 + b.values[1]));
        // Counting features may flip on exact ties; compare the continuous ones.
        for k in [2, 4, 5, 7, 9] {
            prop_assert!((a.values[k] - b.values[k]).abs() < 1e-6, "feature {} {} vs {}", k, a.values[k], b.values[k]);
        }
    }

    #[test]
    fn bnsl_eval_never_overflows(
        a in -10.0f64..10.0, b in -10.0f64..10.0, c0 in -2.0f64..2.0, c1 in -2.0f64..2.0,
        lnd in -90.0f64..20.0, f in prop_oneof![-50.0f64..-0.05, 0.05f64..50.0], lnx in 0.0f64..16.0,
    ) {
        let p = BnslParams::one_break(a, b, c0, c1, lnd.exp(), f);
        let y = bnsl_eval(&p, lnx.exp()).unwrap();
        prop_assert!(!y.is_nan());
    }
}

#[test]
fn constant_series_is_degenerate() {
    let v = CoreFeatures.compute(&[4.0; 40]).unwrap();
    assert!(v.degenerate);
    assert_eq!(v.values[0], 4.0);
    assert!(v.values[1..].iter().all(|&x| x == 0.0));
    assert!(CoreFeatures.compute(&[1.0; 5]).is_err());
    assert!(feature_set_registry().get("core12").is_ok());
    assert!(feature_set_registry().get("catch99").is_err());
}

#[test]
fn pca_on_isotropic_cloud_splits_variance_evenly() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let rows: Vec<Vec<f64>> = (0..4000)
        .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let pca = pca_project(&rows, 3).unwrap();
    for r in &pca.explained_ratio {
        assert!((r - 1.0 / 3.0).abs() < 0.03, "{r}");
    }
}

#[test]
fn full_rank_pca_reconstructs_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let rows: Vec<Vec<f64>> = (0..20)
        .map(|_| (0..4).map(|_| rng.random_range(-5.0..5.0)).collect())
        .collect();
    let pca = pca_project(&rows, 4).unwrap();
    for (row, proj) in rows.iter().zip(&pca.projections) {
        for c in 0..4 {
            let back: f64 = pca.means[c] + (0..4).map(|k| proj[k] * pca.components[k][c]).sum::<f64>();
            assert!((back - row[c]).abs() < 1e-9);
        }
    }
    assert!((pca.explained_ratio.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    // Requesting more components than features pads with zeros.
    let wide = pca_project(&rows, 6).unwrap();
    assert_eq!(wide.explained_ratio[5], 0.0);
}

#[test]
fn corpus_features_separate_generators() {
    let corpus: Vec<_> = pretraining_corpus(0).iter().map(|s| s.generate().unwrap()).collect();
    let m = dataset_feature_matrix(&corpus, &CoreFeatures).unwrap();
    assert_eq!(m.rows.len(), 5);
    assert_eq!(m.features.len(), 12);
    let pca = pca_project(&m.rows, 2).unwrap();
    let names: Vec<String> = m.datasets.clone();
    let domains: BTreeMap<String, String> = names.iter().map(|n| (n.clone(), n[..3].to_string())).collect();
    let svg = pca_scatter_svg(&names, &pca, &domains);
    assert!(svg.starts_with("<svg") && svg.contains("sine-hourly"));
    // Distinct generators do not collapse to a single point.
    let p = &pca.projections;
    assert!(p.iter().skip(1).any(|r| (r[0] - p[0][0]).abs() > 1e-6));
}

#[test]
fn power_law_is_recovered_as_nested_case() {
    let xs: Vec<f64> = (1..=40).map(|i| 10f64.powf(i as f64 / 8.0)).collect();
    let truth = BnslParams::one_break(0.5, 3.0, 0.4, 0.0, 1.0, 1.0);
    let ys: Vec<f64> = xs.iter().map(|&x| bnsl_eval(&truth, x).unwrap()).collect();
    let fit = bnsl_fit(&xs, &ys, 0).unwrap();
    for (&x, &y) in xs.iter().zip(&ys) {
        let yhat = bnsl_eval(&fit.params, x).unwrap();
        assert!((yhat - y).abs() < 1e-4 * y.abs(), "{x}: {yhat} vs {y}");
    }
    assert_eq!(fit.train_end, 24);
    assert_eq!(fit.val_end, 32);
    assert!(bnsl_fit_svg(&xs, &ys, &fit).contains("<polyline"));
}

#[test]
fn constant_curve_fits_flat() {
    let xs: Vec<f64> = (1..=20).map(|i| i as f64).collect();
    let fit = bnsl_fit(&xs, &[2.0; 20], 1).unwrap();
    for &x in &xs {
        assert!((bnsl_eval(&fit.params, x).unwrap() - 2.0).abs() < 1e-6);
    }
    assert_eq!(fit.params, bnsl_fit(&xs, &[2.0; 20], 1).unwrap().params);
    assert!(bnsl_fit(&xs[..5], &[1.0; 5], 0).is_err());
}
