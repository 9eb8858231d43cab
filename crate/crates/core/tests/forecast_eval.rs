use laglm::data::{make_splits, parse_timestamp, Dataset, Frequency, SplitMode, TimeSeriesRecord};
use laglm::eval::{average_rank, crps_samples, crps_sorted, evaluate, score_forecasts, SeedSummary};
use laglm::featurize::LagSet;
use laglm::forecast::{empirical_quantile, forecast_svg, predict, predict_uncached, quantiles, ForecastRecord};
use laglm::model::{Model, ModelConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn config(summary_stats: bool) -> ModelConfig {
    ModelConfig {
        n_layers: 2,
        n_heads: 2,
        dim_per_head: 4,
        context_length: 12,
        lag_set: LagSet::new(vec![1, 2, 7]).unwrap(),
        summary_stats,
        ..ModelConfig::table4_optimal()
    }
}

fn history(len: usize, scale: f64) -> TimeSeriesRecord {
    TimeSeriesRecord {
        item_id: "h".into(),
        start: parse_timestamp("2022-06-01").unwrap(),
        freq: Frequency::HOURLY,
        target: (0..len).map(|t| scale * (5.0 + (t as f64 * 0.7).sin())).collect(),
    }
}

fn crps_oracle(samples: &[f64], y: f64) -> f64 {
    let n = samples.len() as f64;
    let a: f64 = samples.iter().map(|x| (x - y).abs()).sum::<f64>() / n;
    let mut b = 0.0;
    for x in samples {
        for z in samples {
            b += (x - z).abs();
        }
    }
    a - b / (2.0 * n * n)
}

proptest! {
    #[test]
    fn crps_matches_quadratic_oracle(
        xs in prop::collection::vec(-1e3f64..1e3, 1..512),
        y in -1e3f64..1e3,
    ) {
        let fast = crps_samples(&xs, y).unwrap();
        let slow = crps_oracle(&xs, y);
        prop_assert!((fast - slow).abs() <= 1e-10 * slow.abs().max(1.0), "{} vs {}", fast, slow);
        let mut sorted = xs.clone();
        sorted.sort_by(f64::total_cmp);
        prop_assert_eq!(crps_sorted(&sorted, y), fast);
        prop_assert!(fast >= -1e-12);
    }

    #[test]
    fn rank_invariant_under_monotone_transform(
        table in prop::collection::vec(prop::collection::vec(0.01f64..10.0, 4), 2..8),
    ) {
        let opt: Vec<Vec<Option<f64>>> = table.iter().map(|r| r.iter().map(|&v| Some(v)).collect()).collect();
        let logged: Vec<Vec<Option<f64>>> = table.iter().map(|r| r.iter().map(|&v| Some(v.ln() * 3.0 + 1.0)).collect()).collect();
        let a = average_rank(&opt).unwrap();
        prop_assert_eq!(&a, &average_rank(&logged).unwrap());
        // Ranks of each column sum to m(m+1)/2, so averages sum to the same.
        let m = table.len() as f64;
        prop_assert!((a.iter().sum::<f64>() - m * (m + 1.0) / 2.0).abs() < 1e-9);
    }
}

#[test]
fn crps_of_a_point_mass_is_absolute_error() {
    assert_eq!(crps_samples(&[3.0; 10], 5.5).unwrap(), 2.5);
}

#[test]
fn sharper_gaussian_scores_better() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let draw = |sd: f64, rng: &mut ChaCha8Rng| -> Vec<f64> {
        let n = Normal::new(0.0, sd).unwrap();
        (0..2000).map(|_| n.sample(rng)).collect()
    };
    let sharp = draw(1.0, &mut rng);
    let wide = draw(3.0, &mut rng);
    let score = |s: &[f64], rng: &mut ChaCha8Rng| -> f64 {
        let n = Normal::new(0.0, 1.0).unwrap();
        (0..200).map(|_| crps_samples(s, n.sample(rng)).unwrap()).sum::<f64>() / 200.0
    };
    assert!(score(&sharp, &mut rng) < score(&wide, &mut rng));
    // Closed form for N(0,1) against itself: 1/√π ≈ 0.5642; sample estimate is close.
    let self_score = score(&sharp, &mut rng);
    assert!((self_score - 1.0 / std::f64::consts::PI.sqrt()).abs() < 0.08, "{self_score}");
}

#[test]
fn scored_two_by_two_by_hand() {
    let model = Model::init(config(true), 0).unwrap();
    let mut f1 = predict(&model, &history(40, 1.0), 2, 2, 0).unwrap();
    let mut f2 = f1.clone();
    f1.samples = vec![vec![0.0, 1.0], vec![2.0, 3.0]];
    f2.samples = vec![vec![4.0, 4.0], vec![4.0, 4.0]];
    let truths = vec![vec![1.0, 1.0], vec![2.0, -2.0]];
    let (per, mean, mean_abs, value) = score_forecasts(&[f1, f2], &truths, true).unwrap();
    // Series 1: {0,2} vs 1 -> 1 - 0.5 = 0.5; {1,3} vs 1 -> 1 - 0.5 = 0.5.
    // Series 2: point mass at 4 -> 2 and 6.
    assert_eq!(per[0].crps, vec![0.5, 0.5]);
    assert_eq!(per[1].crps, vec![2.0, 6.0]);
    assert_eq!(mean, 9.0 / 4.0);
    assert_eq!(mean_abs, 6.0 / 4.0);
    assert_eq!(value, 1.5);
}

#[test]
fn forecast_shape_and_determinism() {
    let model = Model::init(config(true), 2).unwrap();
    let h = history(60, 1.0);
    let a = predict(&model, &h, 5, 16, 9).unwrap();
    assert_eq!(a.samples.len(), 16);
    assert!(a.samples.iter().all(|s| s.len() == 5 && s.iter().all(|v| v.is_finite())));
    assert_eq!(a.start, h.timestamp(60));
    assert_eq!(a, predict(&model, &h, 5, 16, 9).unwrap());
    assert_ne!(a.samples, predict(&model, &h, 5, 16, 10).unwrap().samples);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    assert_eq!(a, pool.install(|| predict(&model, &h, 5, 16, 9).unwrap()));
}

#[test]
fn cached_and_uncached_decoding_agree() {
    let model = Model::init(config(true), 5).unwrap();
    let h = history(30, 1.0);
    let a = predict(&model, &h, 6, 8, 1).unwrap();
    let b = predict_uncached(&model, &h, 6, 8, 1).unwrap();
    for (x, y) in a.samples.iter().flatten().zip(b.samples.iter().flatten()) {
        assert!((x - y).abs() <= 1e-8 * x.abs().max(1.0), "{x} vs {y}");
    }
}

#[test]
fn forecasts_are_scale_equivariant_without_summary_stats() {
    let model = Model::init(config(false), 5).unwrap();
    let a = predict(&model, &history(50, 1.0), 4, 8, 3).unwrap();
    let b = predict(&model, &history(50, 1000.0), 4, 8, 3).unwrap();
    for (x, y) in a.samples.iter().flatten().zip(b.samples.iter().flatten()) {
        assert!((1000.0 * x - y).abs() <= 1e-9 * y.abs().max(1.0), "{x} vs {y}");
    }
}

#[test]
fn quantiles_follow_linear_interpolation() {
    let model = Model::init(config(true), 1).unwrap();
    let mut fs = predict(&model, &history(40, 1.0), 1, 5, 0).unwrap();
    fs.samples = vec![vec![5.0], vec![1.0], vec![3.0], vec![2.0], vec![4.0]];
    let q = quantiles(&fs, &[0.1, 0.25, 0.5, 0.9]).unwrap();
    let got: Vec<f64> = q.iter().map(|c| c[0]).collect();
    assert!(quantiles(&fs, &[1.0]).is_err());
    assert_eq!(got, vec![1.4, 2.0, 3.0, 4.6]);
    assert_eq!(empirical_quantile(&[2.0, 1.0], 0.25), 1.25);
    let rec = ForecastRecord::new(&fs, &[0.5], false).unwrap();
    assert_eq!(rec.mean, vec![3.0]);
    assert!(rec.to_json_line().unwrap().contains("\"item_id\":\"h\""));
    let svg = forecast_svg(&history(40, 1.0).target, &fs, Some(&[3.0])).unwrap();
    assert!(svg.contains("#40916c") && svg.contains("#b7e4c7"));
}

#[test]
fn evaluate_is_seeded() {
    let ds = Dataset {
        name: "e".into(),
        records: (0..3).map(|_| history(80, 1.0)).collect(),
        prediction_length: 4,
    };
    let splits = make_splits(&ds, SplitMode::Finetune);
    let model = Model::init(config(true), 1).unwrap();
    let a = evaluate(&model, "m", &splits, 20, 7, true).unwrap();
    assert_eq!(a, evaluate(&model, "m", &splits, 20, 7, true).unwrap());
    assert_eq!(a.per_series.len(), 3);
    // Identical series get different seeds, hence different scores.
    assert_ne!(a.per_series[0].crps, a.per_series[1].crps);
    assert!(a.value > 0.0 && a.value.is_finite());
}

#[test]
fn seed_summary_cell() {
    let s = SeedSummary::new(vec![0.1, 0.2, 0.3]).unwrap();
    assert_eq!(s.cell(), "0.200 ± 0.100");
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let _: f64 = rng.random();
}

#[test]
fn average_rank_ties_and_missing() {
    let t = vec![
        vec![Some(1.0), Some(2.0), None],
        vec![Some(1.0), Some(1.0), Some(5.0)],
        vec![Some(3.0), Some(f64::NAN), Some(4.0)],
    ];
    let r = average_rank(&t).unwrap();
    assert_eq!(r, vec![(1.5 + 2.0) / 2.0, (1.5 + 1.0 + 2.0) / 3.0, (3.0 + 1.0) / 2.0]);
    assert!(average_rank(&[vec![Some(1.0)], vec![None]]).is_err());
}
