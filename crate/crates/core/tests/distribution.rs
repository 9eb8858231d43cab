use laglm::distribution::{constrain, weighted_nll, StudentTParams};
use laglm_tensor::{Graph, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};

fn draws(p: StudentTParams, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| p.sample(&mut rng)).collect()
}

#[test]
fn ks_statistic_against_analytic_cdf() {
    let p = StudentTParams { df: 4.0, loc: 1.0, scale: 2.0 };
    let mut xs = draws(p, 1_000_000, 11);
    xs.sort_by(f64::total_cmp);
    let dist = StudentsT::new(1.0, 2.0, 4.0).unwrap();
    let n = xs.len() as f64;
    let d = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = dist.cdf(x);
            (f - i as f64 / n).abs().max((((i + 1) as f64) / n - f).abs())
        })
        .fold(0.0, f64::max);
    assert!(d < 0.005, "KS statistic {d}");
}

#[test]
fn sample_variance_matches_moment() {
    let p = StudentTParams { df: 5.0, loc: 0.0, scale: 1.0 };
    let xs = draws(p, 1_000_000, 12);
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
    let target = 5.0 / 3.0;
    assert!((var / target - 1.0).abs() < 0.02, "variance {var}");
    assert!((p.variance() - target).abs() < 1e-12);
}

#[test]
fn nll_matches_statrs_density() {
    let dist = StudentsT::new(0.5, 1.5, 7.0).unwrap();
    let p = StudentTParams { df: 7.0, loc: 0.5, scale: 1.5 };
    for y in [-3.0, 0.0, 0.5, 2.2, 10.0] {
        use statrs::distribution::Continuous;
        assert!((p.nll(y) + dist.ln_pdf(y)).abs() < 1e-10, "y={y}");
    }
}

fn total_nll(raw: &[f64], ys: &[f64]) -> f64 {
    raw.chunks(3)
        .zip(ys)
        .map(|(r, &y)| constrain([r[0], r[1], r[2]]).nll(y))
        .sum()
}

proptest! {
    #[test]
    fn nll_gradient_matches_finite_differences(
        raw in prop::collection::vec(-3.0f64..3.0, 6),
        ys in prop::collection::vec(-4.0f64..4.0, 2),
    ) {
        let g = Graph::new();
        let r = g.param(Tensor::new([2, 3], raw.clone()).unwrap());
        let loss = weighted_nll(&g, r, &ys, &[1.0, 1.0]).unwrap();
        let grads = g.backward(loss).unwrap();
        let analytic = grads.get(r).unwrap().data().to_vec();
        let h = 1e-6;
        for i in 0..6 {
            let (mut up, mut dn) = (raw.clone(), raw.clone());
            up[i] += h;
            dn[i] -= h;
            let fd = (total_nll(&up, &ys) - total_nll(&dn, &ys)) / (2.0 * h);
            let err = (analytic[i] - fd).abs() / analytic[i].abs().max(fd.abs()).max(1e-3);
            prop_assert!(err < 1e-5, "i={} analytic={} fd={}", i, analytic[i], fd);
        }
    }

    #[test]
    fn constrain_is_total(r0 in -1e6f64..1e6, r1 in -1e6f64..1e6, r2 in -1e6f64..1e6) {
        let p = constrain([r0, r1, r2]);
        prop_assert!(p.df > 2.0 && p.df.is_finite());
        prop_assert!(p.scale > 0.0 && p.scale.is_finite());
        prop_assert_eq!(p.loc, r1);
    }
}
