use super::*;
use proptest::prelude::*;

fn dv(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

fn dm(r: usize, c: usize, v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(r, c, v)
}

fn two_component() -> Gmm {
    Gmm::new(
        vec![0.3, 0.7],
        vec![dv(&[-2.0, 1.0]), dv(&[3.0, 0.5])],
        vec![dm(2, 2, &[1.0, 0.3, 0.3, 0.5]), dm(2, 2, &[0.4, -0.1, -0.1, 0.8])],
    )
    .unwrap()
}

fn sample_moments(x: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = x.nrows() as f64;
    let mean = x.row_mean().transpose();
    let centered = x - DVector::from_element(x.nrows(), 1.0) * mean.transpose();
    let cov = centered.transpose() * &centered / n;
    (mean, cov)
}

fn empirical_cdf(sorted: &[f64], t: f64) -> f64 {
    sorted.partition_point(|v| *v <= t) as f64 / sorted.len() as f64
}

#[test]
fn em_single_component_is_sample_moments() {
    let data = two_component().sample(2000, 1);
    let fit = em_fit(&data, 1, 5).unwrap();
    let (mean, cov) = sample_moments(&data);
    assert!((&fit.gmm.means()[0] - &mean).abs().max() < 1e-12);
    assert!((fit.gmm.covariance(0) - &cov).abs().max() < 1e-7 * cov.abs().max());
}

#[test]
fn em_recovers_separated_components() {
    let truth = Gmm::new(
        vec![0.4, 0.6],
        vec![dv(&[-5.0, 0.0]), dv(&[5.0, 2.0])],
        vec![DMatrix::identity(2, 2), dm(2, 2, &[2.0, 0.5, 0.5, 1.0])],
    )
    .unwrap();
    let n = 5000;
    let fit = em_fit(&truth.sample(n, 11), 2, 3).unwrap();
    let g = &fit.gmm;
    let (lo, hi) = if g.means()[0][0] < g.means()[1][0] { (0, 1) } else { (1, 0) };
    for (est, t) in [(lo, 0usize), (hi, 1)] {
        let nk = truth.weights()[t] * n as f64;
        for k in 0..2 {
            let se = (truth.covariance(t)[(k, k)] / nk).sqrt();
            assert!((g.means()[est][k] - truth.means()[t][k]).abs() < 3.0 * se);
        }
    }
    assert!(fit.converged);
}

#[test]
fn em_rejects_small_or_degenerate_data() {
    let data = DMatrix::from_element(5, 2, 1.0);
    assert!(matches!(em_fit(&data, 2, 0), Err(Error::TooFewSamples { .. })));
    let data = DMatrix::from_element(50, 2, 1.0);
    assert!(matches!(em_fit(&data, 1, 0), Err(Error::Degenerate(_))));
}

#[test]
fn em_log_likelihood_non_decreasing() {
    let data = two_component().sample(3000, 4);
    for seed in 0..4 {
        let fit = em_fit(&data, 3, seed).unwrap();
        for w in fit.log_likelihood.windows(2) {
            assert!(w[1] >= w[0] - 1e-9 * w[0].abs(), "{} -> {}", w[0], w[1]);
        }
    }
}

#[test]
fn sampling_point_mass_and_determinism() {
    let g = Gmm::point_mass(dv(&[1.0, -2.0]));
    let x = g.sample(10, 3);
    for r in 0..10 {
        assert_eq!(x[(r, 0)], 1.0);
        assert_eq!(x[(r, 1)], -2.0);
    }
    let g = two_component();
    assert_eq!(g.sample(100, 9), g.sample(100, 9));
    assert_ne!(g.sample(100, 9), g.sample(100, 10));
}

#[test]
fn sampling_component_frequencies() {
    // Far-apart unit-variance components: the sign of the first coordinate identifies the source.
    let g = Gmm::new(
        vec![0.2, 0.8],
        vec![dv(&[-50.0]), dv(&[50.0])],
        vec![dm(1, 1, &[1.0]), dm(1, 1, &[1.0])],
    )
    .unwrap();
    let n = 10_000;
    let x = g.sample(n, 21);
    let count = x.iter().filter(|v| **v < 0.0).count() as f64;
    let sd = (n as f64 * 0.2 * 0.8).sqrt();
    assert!((count - 0.2 * n as f64).abs() < 3.0 * sd);
}

#[test]
fn affine_identity_and_mean() {
    let g = two_component();
    let same = g.affine_map(&DMatrix::identity(2, 2), &DVector::zeros(2)).unwrap();
    assert_eq!(same, g);
    let a = dm(3, 2, &[1.0, 2.0, -1.0, 0.5, 0.0, 3.0]);
    let b = dv(&[0.1, 0.2, 0.3]);
    let mapped = g.affine_map(&a, &b).unwrap();
    let expect = &a * g.moments().mean + &b;
    assert!((mapped.moments().mean - expect).abs().max() < 1e-12);
    assert!(g.affine_map(&a, &dv(&[1.0])).is_err());
}

#[test]
fn affine_projection_matches_sampled_cdf() {
    let g = two_component();
    let a = dm(1, 2, &[0.7, -1.3]);
    let b = dv(&[0.2]);
    let mapped = g.affine_map(&a, &b).unwrap();
    let x = g.sample(50_000, 17);
    let mut z: Vec<f64> = (0..x.nrows()).map(|r| 0.7 * x[(r, 0)] - 1.3 * x[(r, 1)] + 0.2).collect();
    z.sort_by(f64::total_cmp);
    let m = mapped.marginal(0);
    let rmse = ((1..=1000)
        .map(|k| {
            let p = (k as f64 - 0.5) / 1000.0;
            let t = z[((p * z.len() as f64) as usize).min(z.len() - 1)];
            (m.cdf(t) - empirical_cdf(&z, t)).powi(2)
        })
        .sum::<f64>()
        / 1000.0)
        .sqrt();
    assert!(rmse < 1e-2, "rmse {rmse}");
}

#[test]
fn augment_structure() {
    let g = two_component();
    let zero = g.augment(&DVector::zeros(2)).unwrap();
    for j in 0..2 {
        assert_eq!(zero.means()[j][2], 0.0);
        assert_eq!(zero.covariance(j)[(2, 2)], 0.0);
    }
    let eps = dv(&[1.0, 2.0]);
    let aug = g.augment(&eps).unwrap();
    assert!((aug.moments().mean[2] - eps.dot(&g.moments().mean)).abs() < 1e-12);
    for j in 0..2 {
        let se = g.covariance(j) * &eps;
        for k in 0..2 {
            assert!((aug.covariance(j)[(k, 2)] - se[k]).abs() < 1e-12);
        }
    }
}

#[test]
fn conditioning_single_gaussian() {
    let g = Gmm::gaussian(dv(&[0.5, 2.0]), DMatrix::identity(2, 2)).unwrap();
    let c = g.condition_on_sum(&dv(&[1.0, 0.0]), 1.7).unwrap();
    assert!((&c.means()[0] - dv(&[1.7, 2.0])).abs().max() < 1e-12);
    assert!((c.covariance(0) - dm(2, 2, &[0.0, 0.0, 0.0, 1.0])).abs().max() < 1e-12);
}

#[test]
fn conditioning_is_consistent_with_the_functional() {
    let g = two_component();
    let eps = dv(&[1.0, 1.0]);
    for z in [-3.0, 0.0, 1.2, 4.0] {
        let c = g.condition_on_sum(&eps, z).unwrap();
        for j in 0..c.n_components() {
            assert!((eps.dot(&c.means()[j]) - z).abs() < 1e-12);
        }
    }
}

#[test]
fn conditioning_matches_rejection_sampling() {
    let g = two_component();
    let eps = dv(&[1.0, 1.0]);
    let z = 2.0;
    let proj = g.affine_map(&DMatrix::from_row_slice(1, 2, eps.as_slice()), &dv(&[0.0])).unwrap();
    let delta = 1e-2 * proj.moments().cov[(0, 0)].sqrt();
    let x = g.sample(3_000_000, 5);
    let accepted: Vec<f64> = (0..x.nrows())
        .filter(|&r| (x[(r, 0)] + x[(r, 1)] - z).abs() < delta)
        .map(|r| x[(r, 0)])
        .collect();
    let n = accepted.len() as f64;
    assert!(n > 1000.0);
    let mean = accepted.iter().sum::<f64>() / n;
    let var = accepted.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let c = g.condition_on_sum(&eps, z).unwrap().moments();
    assert!((mean - c.mean[0]).abs() < 3.0 * (c.cov[(0, 0)] / n).sqrt());
    // Standard error of a sample variance is about var * sqrt(2 / n) for near-normal data;
    // the mixture tails warrant a little more room.
    assert!((var - c.cov[(0, 0)]).abs() < 4.0 * c.cov[(0, 0)] * (2.0 / n).sqrt());
}

#[test]
fn conditioning_skips_or_pins_degenerate_components() {
    let flat = dm(2, 2, &[1.0, -1.0, -1.0, 1.0]); // no spread along (1, 1)
    let g = Gmm::new(
        vec![0.5, 0.5],
        vec![dv(&[0.0, 1.0]), dv(&[0.0, 0.0])],
        vec![flat, DMatrix::identity(2, 2)],
    )
    .unwrap();
    let eps = dv(&[1.0, 1.0]);
    let off = g.condition_on_sum(&eps, 0.3).unwrap();
    assert_eq!(off.n_components(), 1);
    let pinned = g.condition_on_sum(&eps, 1.0).unwrap();
    assert_eq!(pinned.n_components(), 1);
    assert_eq!(pinned.means()[0], dv(&[0.0, 1.0]));
    let only_flat = Gmm::gaussian(dv(&[0.0, 1.0]), dm(2, 2, &[1.0, -1.0, -1.0, 1.0])).unwrap();
    assert!(matches!(only_flat.condition_on_sum(&eps, 0.3), Err(Error::Degenerate(_))));
}

#[test]
fn moments_closed_forms() {
    let g = Gmm::gaussian(dv(&[1.0, 2.0]), dm(2, 2, &[2.0, 0.1, 0.1, 1.0])).unwrap();
    let m = g.moments();
    assert_eq!(m.mean, dv(&[1.0, 2.0]));
    assert_eq!(m.cov, dm(2, 2, &[2.0, 0.1, 0.1, 1.0]));
    let mm = dv(&[1.5, -0.5]);
    let sym = Gmm::new(
        vec![0.5, 0.5],
        vec![mm.clone(), -&mm],
        vec![DMatrix::zeros(2, 2), DMatrix::zeros(2, 2)],
    )
    .unwrap();
    let m = sym.moments();
    assert!(m.mean.abs().max() < 1e-15);
    assert!((m.cov - &mm * mm.transpose()).abs().max() < 1e-15);
}

#[test]
fn moments_match_samples() {
    let g = two_component();
    let n = 100_000;
    let (mean, cov) = sample_moments(&g.sample(n, 8));
    let m = g.moments();
    for k in 0..2 {
        assert!((mean[k] - m.mean[k]).abs() < 3.0 * (m.cov[(k, k)] / n as f64).sqrt());
        // Loose bound for variances of a bimodal law (kurtosis below 3).
        assert!((cov[(k, k)] - m.cov[(k, k)]).abs() < 3.0 * m.cov[(k, k)] * (2.0 / n as f64).sqrt());
    }
    let (mm, mv) = g.marginal_moments();
    assert!((mm - &m.mean).abs().max() < 1e-12);
    assert!((mv - m.cov.diagonal()).abs().max() < 1e-12);
}

#[test]
fn marginal_cdf_basics() {
    let g = Gmm::gaussian(dv(&[0.0]), dm(1, 1, &[1.0])).unwrap();
    assert_eq!(g.marginal_cdf(0, 0.0), 0.5);
    assert_eq!(g.marginal_cdf(0, f64::NEG_INFINITY), 0.0);
    assert_eq!(g.marginal_cdf(0, f64::INFINITY), 1.0);
    let g = two_component();
    let x = g.sample(50_000, 2);
    let mut col: Vec<f64> = x.column(1).iter().copied().collect();
    col.sort_by(f64::total_cmp);
    let median = col[col.len() / 2];
    let p = g.marginal_cdf(1, median);
    assert!((p - 0.5).abs() < 3.0 * (0.25 / 50_000.0_f64).sqrt());
}

#[test]
fn merge_cases() {
    let g = two_component();
    assert_eq!(Gmm::merge(&[(1.0, &g)]).unwrap(), g);
    let twice = Gmm::merge(&[(0.5, &g), (0.5, &g)]).unwrap();
    for t in [-3.0, 0.0, 0.7, 2.5] {
        assert!((twice.marginal_cdf(0, t) - g.marginal_cdf(0, t)).abs() < 1e-15);
    }
    let h = Gmm::gaussian(dv(&[10.0, -1.0]), dm(2, 2, &[0.5, 0.0, 0.0, 0.2])).unwrap();
    let merged = Gmm::merge(&[(0.25, &g), (0.75, &h)]).unwrap();
    let (mg, mh) = (g.moments(), h.moments());
    let mean = &mg.mean * 0.25 + &mh.mean * 0.75;
    let second = (&mg.cov + &mg.mean * mg.mean.transpose()) * 0.25
        + (&mh.cov + &mh.mean * mh.mean.transpose()) * 0.75;
    let cov = second - &mean * mean.transpose();
    let m = merged.moments();
    assert!((m.mean - mean).abs().max() < 1e-12);
    assert!((m.cov - cov).abs().max() < 1e-10);
    assert!(Gmm::merge(&[(0.5, &g), (0.4, &h)]).is_err());
}

#[test]
fn json_round_trip_keeps_sharing() {
    let g = two_component();
    let c = SumConditioner::new(&g, &dv(&[1.0, 0.5])).unwrap();
    let parts: Vec<Gmm> = [0.0, 1.0, 2.0].iter().map(|z| c.condition(*z).unwrap()).collect();
    let merged = Gmm::merge(&[(0.2, &parts[0]), (0.3, &parts[1]), (0.5, &parts[2])]).unwrap();
    assert_eq!(merged.distinct_covariances().0.len(), 2);
    let text = merged.to_json().unwrap();
    let back = Gmm::from_json(&text).unwrap();
    assert_eq!(back, merged);
    assert_eq!(back.distinct_covariances().0.len(), 2);
    assert_eq!(back.to_json().unwrap(), text);
}

#[test]
fn ks_distance_against_own_samples() {
    let g = two_component();
    let x = g.sample(10_000, 31);
    for k in 0..2 {
        let mut col: Vec<f64> = x.column(k).iter().copied().collect();
        col.sort_by(f64::total_cmp);
        let m = g.marginal(k);
        let n = col.len() as f64;
        let ks = col
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let f = m.cdf(*t);
                (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks < 0.02, "ks {ks}");
    }
}

#[test]
fn expanding_maps_store_factors() {
    let g = two_component();
    let a = dm(4, 2, &[1.0, 0.0, 0.5, 2.0, -1.0, 1.0, 0.0, 3.0]);
    let b = dv(&[0.1, 0.2, 0.3, 0.4]);
    let y = g.affine_map(&a, &b).unwrap();
    for j in 0..2 {
        assert!(y.covariance_factor(j).is_some());
        let direct = &a * g.covariance(j) * a.transpose();
        assert!((y.covariance(j) - direct).abs().max() < 1e-12);
    }
    let (_, var) = y.marginal_moments();
    let full = y.moments();
    for k in 0..4 {
        assert!((var[k] - full.cov[(k, k)]).abs() < 1e-12);
    }
    // Conditioning a factored mixture agrees with conditioning the full one.
    let eps = dv(&[1.0, 1.0, 0.0, 1.0]);
    let full_y = Gmm::new(
        y.weights().to_vec(),
        y.means().to_vec(),
        y.covariances().cloned().collect(),
    )
    .unwrap();
    let c1 = y.condition_on_sum(&eps, 2.0).unwrap();
    let c2 = full_y.condition_on_sum(&eps, 2.0).unwrap();
    for j in 0..c1.n_components() {
        assert!((c1.weights()[j] - c2.weights()[j]).abs() < 1e-12);
        assert!((&c1.means()[j] - &c2.means()[j]).abs().max() < 1e-10);
        assert!((c1.covariance(j) - c2.covariance(j)).abs().max() < 1e-10);
    }
    let back = Gmm::from_json(&y.to_json().unwrap()).unwrap();
    assert_eq!(back, y);
    assert!(back.covariance_factor(0).is_some());
    let x = y.sample(200, 3);
    assert_eq!(x.ncols(), 4);
}

fn arb_gmm(d: usize) -> impl Strategy<Value = Gmm> {
    let comp = (
        0.1f64..1.0,
        prop::collection::vec(-3.0f64..3.0, d),
        prop::collection::vec(-1.0f64..1.0, d * d),
    );
    prop::collection::vec(comp, 1..4).prop_map(move |cs| {
        let total: f64 = cs.iter().map(|c| c.0).sum();
        let weights = cs.iter().map(|c| c.0 / total).collect();
        let means = cs.iter().map(|c| DVector::from_vec(c.1.clone())).collect();
        let covs = cs
            .iter()
            .map(|c| {
                let f = DMatrix::from_row_slice(d, d, &c.2);
                &f * f.transpose() + DMatrix::identity(d, d) * 0.05
            })
            .collect();
        Gmm::new(weights, means, covs).unwrap()
    })
}

fn assert_valid(g: &Gmm) {
    let total: f64 = g.weights().iter().sum();
    assert!((total - 1.0).abs() < 1e-12);
    for c in g.covariances() {
        assert!((c - c.transpose()).abs().max() < 1e-12);
        if c.nrows() > 0 {
            let e = nalgebra::SymmetricEigen::new(c.clone()).eigenvalues.min();
            assert!(e > -1e-9 * c.abs().max().max(1.0));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn affine_composition(g in arb_gmm(3),
                          a in prop::collection::vec(-2.0f64..2.0, 6),
                          b in prop::collection::vec(-1.0f64..1.0, 2),
                          a2 in prop::collection::vec(-2.0f64..2.0, 4),
                          b2 in prop::collection::vec(-1.0f64..1.0, 2)) {
        let a = DMatrix::from_row_slice(2, 3, &a);
        let b = DVector::from_vec(b);
        let a2 = DMatrix::from_row_slice(2, 2, &a2);
        let b2 = DVector::from_vec(b2);
        let step = g.affine_map(&a, &b).unwrap().affine_map(&a2, &b2).unwrap();
        let once = g.affine_map(&(&a2 * &a), &(&a2 * &b + &b2)).unwrap();
        assert_valid(&step);
        for j in 0..g.n_components() {
            prop_assert!((&step.means()[j] - &once.means()[j]).abs().max() < 1e-10);
            prop_assert!((step.covariance(j) - once.covariance(j)).abs().max() < 1e-10);
        }
    }

    #[test]
    fn conditioning_projects_to_a_point(g in arb_gmm(3),
                                        eps in prop::collection::vec(0.2f64..1.5, 3),
                                        z in -4.0f64..4.0) {
        let eps = DVector::from_vec(eps);
        let c = g.condition_on_sum(&eps, z).unwrap();
        assert_valid(&c);
        let proj = c.affine_map(&DMatrix::from_row_slice(1, 3, eps.as_slice()), &DVector::zeros(1)).unwrap();
        for j in 0..proj.n_components() {
            prop_assert!((proj.means()[j][0] - z).abs() < 1e-10);
            prop_assert!(proj.covariance(j)[(0, 0)].abs() < 1e-10);
        }
    }

    #[test]
    fn operations_keep_invariants(g in arb_gmm(2), h in arb_gmm(2), w in 0.0f64..1.0) {
        assert_valid(&g.augment(&DVector::from_vec(vec![1.0, -1.0])).unwrap());
        let merged = Gmm::merge(&[(w, &g), (1.0 - w, &h)]).unwrap();
        assert_valid(&merged);
        let m = merged.moments();
        prop_assert!((&m.cov - m.cov.transpose()).abs().max() < 1e-12);
        let mut last = 0.0;
        for t in [-10.0, -1.0, 0.0, 0.5, 2.0, 10.0] {
            let p = merged.marginal_cdf(0, t);
            prop_assert!(p >= last - 1e-15);
            last = p;
        }
    }
}
