mod common;

use common::*;
use mssl_core::interp::*;
use mssl_core::moments::{DesignSource, GaussianDesign};
use mssl_core::stats::mean_se;
use mssl_core::{rng, DMatrix, DVector, Error, LabeledSet, ResampleSpec};
use proptest::prelude::*;

fn spiked(p: usize, n: usize) -> DMatrix<f64> {
    let k = (0.8 * p as f64).round() as usize;
    DMatrix::from_diagonal(&DVector::from_fn(p, |i, _| if i < k { 1.0 } else { 1.0 / n as f64 }))
}

/// One labeled draw with `w ~ N(0, τ²I)` and Gaussian noise.
fn draw(design: &GaussianDesign, n: usize, tau2: f64, sigma2: f64, seed: u64, i: u64) -> (LabeledSet, DVector<f64>) {
    let p = design.p();
    let x = design.draw(n, seed, i).unwrap();
    let mut r = rng::stream(seed, &[77, i]);
    let w = DVector::from_column_slice(rng::standard_normal_matrix(p, 1, &mut r).as_slice()) * tau2.sqrt();
    let e = DVector::from_column_slice(rng::standard_normal_matrix(n, 1, &mut r).as_slice()) * sigma2.sqrt();
    let y = &x * &w + e;
    (LabeledSet::new(x, y).unwrap(), w)
}

fn toy(y: f64) -> LabeledSet {
    LabeledSet::new(mat(1, 2, &[1.0, 1.0]), vecf(&[y])).unwrap()
}

#[test]
fn min_norm_examples() {
    assert_vec_close(&fit_min_norm(&toy(2.0)).unwrap(), &vecf(&[1.0, 1.0]), 1e-14);
    assert_eq!(fit_min_norm(&toy(0.0)).unwrap().norm(), 0.0);

    let mut r = rng::stream(3, &[0]);
    let x = rng::standard_normal_matrix(3, 8, &mut r);
    let y = DVector::from_column_slice(rng::standard_normal_matrix(3, 1, &mut r).as_slice());
    let d = LabeledSet::new(x.clone(), y.clone()).unwrap();
    let w = fit_min_norm(&d).unwrap();
    assert!((&x * &w - &y).norm() < 1e-10);
    // project random probes onto the null space of X; ŵ must be orthogonal to them
    let xxt = &x * x.transpose();
    let proj = x.transpose() * xxt.try_inverse().unwrap() * &x;
    for k in 0..5 {
        let v = DVector::from_column_slice(rng::standard_normal_matrix(8, 1, &mut rng::stream(3, &[1, k])).as_slice());
        let null = &v - &proj * &v;
        assert!(w.dot(&null).abs() < 1e-10 * null.norm());
    }
}

#[test]
fn min_norm_requires_overparameterization_and_full_rank() {
    let d = LabeledSet::new(mat(2, 2, &[1.0, 0.0, 0.0, 1.0]), vecf(&[1.0, 1.0])).unwrap();
    assert!(matches!(fit_min_norm(&d), Err(Error::Precondition(_))));
    let d = LabeledSet::new(mat(2, 3, &[1.0, 1.0, 1.0, 2.0, 2.0, 2.0]), vecf(&[1.0, 2.0])).unwrap();
    assert!(matches!(fit_min_norm(&d), Err(Error::RankDeficient { .. })));
}

#[test]
fn min_variance_examples() {
    let sigma = DMatrix::from_diagonal(&vecf(&[1.0, 0.25]));
    let wt = fit_min_variance(&toy(2.0), &sigma).unwrap();
    assert_vec_close(&wt, &vecf(&[0.4, 1.6]), 1e-14);
    let wh = fit_min_norm(&toy(2.0)).unwrap();
    assert!(close(wt.dot(&(&sigma * &wt)), 0.8, 1e-14));
    assert!(close(wh.dot(&(&sigma * &wh)), 1.25, 1e-14));
    assert_eq!(fit_min_variance(&toy(0.0), &sigma).unwrap().norm(), 0.0);

    let (d, _) = draw(&GaussianDesign::new(&DMatrix::identity(12, 12)).unwrap(), 5, 1.0, 1.0, 4, 0);
    let iso = DMatrix::identity(12, 12) * 3.7;
    assert_vec_close(&fit_min_variance(&d, &iso).unwrap(), &fit_min_norm(&d).unwrap(), 1e-12);
}

#[test]
fn non_pd_sigma_is_rejected() {
    let bad = DMatrix::from_diagonal(&vecf(&[1.0, -1.0]));
    assert!(matches!(fit_min_variance(&toy(1.0), &bad), Err(Error::Singular(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]
    #[test]
    fn min_variance_dominates_and_interpolates(seed in 0u64..10_000, n in 2usize..8, extra in 2usize..12) {
        let p = n + extra;
        let mut r = rng::stream(seed, &[5]);
        let a = rng::standard_normal_matrix(p, p, &mut r);
        let sigma = &a * a.transpose() + DMatrix::identity(p, p) * 0.1;
        let (d, _) = draw(&GaussianDesign::new(&sigma).unwrap(), n, 1.0, 0.5, seed, 1);
        let wh = fit_min_norm(&d).unwrap();
        let wt = fit_min_variance(&d, &sigma).unwrap();
        let scale = 1.0 + d.y().norm();
        prop_assert!((d.x() * &wh - d.y()).norm() <= 1e-8 * scale);
        prop_assert!((d.x() * &wt - d.y()).norm() <= 1e-8 * scale);
        let vh = wh.dot(&(&sigma * &wh));
        let vt = wt.dot(&(&sigma * &wt));
        prop_assert!(vt <= vh + 1e-10 * (1.0 + vh));
    }
}

fn spiked_with_minor(p: usize, p_tilde: usize, minor: f64) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_fn(p, |i, _| if i < p_tilde { 1.0 } else { minor }))
}

#[test]
fn risk_terms_match_wishart_closed_forms() {
    let (n, p) = (50, 100);
    // minor block small enough for the closed forms to apply
    let sigma = spiked_with_minor(p, 80, 1e-6);
    let design = GaussianDesign::new(&sigma).unwrap();
    let t = interp_risk_terms(&sigma, n, &design, ResampleSpec::new(n, 400, 21)).unwrap();
    assert_eq!(t.draws_used, 400);
    assert!((t.v_u / (50.0 / 49.0) - 1.0).abs() < 0.02, "{t:?}");
    assert!((t.v_l / (50.0 / 29.0) - 1.0).abs() < 0.05, "{t:?}");
    let closed = InterpRiskTerms::spiked_closed_form(n, p, 80, 1.0, sigma.trace()).unwrap();
    assert!((t.b_u / closed.b_u - 1.0).abs() < 0.02, "{} vs {}", t.b_u, closed.b_u);
    assert!((t.b_l / closed.b_l - 1.0).abs() < 0.05, "{} vs {}", t.b_l, closed.b_l);
}

/// Direct Monte Carlo of the min-norm prediction variance `E‖Σ^½ Xᵀ(XXᵀ)⁻¹ε‖²`
/// with unit noise, independent of the trace formula.
fn simulated_v_l(sigma: &DMatrix<f64>, n: usize, reps: u64) -> f64 {
    let design = GaussianDesign::new(sigma).unwrap();
    let mut acc = 0.0;
    for i in 0..reps {
        let x = design.draw(n, 99, i).unwrap();
        let e = DVector::from_column_slice(rng::standard_normal_matrix(n, 1, &mut rng::stream(98, &[i])).as_slice());
        let d = LabeledSet::new(x, e).unwrap();
        let w = fit_min_norm(&d).unwrap();
        acc += w.dot(&(sigma * &w));
    }
    acc / reps as f64
}

#[test]
fn risk_terms_on_spiked_design() {
    let (n, p) = (50, 100);
    let sigma = spiked(p, n);
    let design = GaussianDesign::new(&sigma).unwrap();
    let t = interp_risk_terms(&sigma, n, &design, ResampleSpec::new(n, 400, 21)).unwrap();
    assert!((t.v_u / (50.0 / 49.0) - 1.0).abs() < 0.02, "{t:?}");
    // the 1/n minor block acts as a ridge on XXᵀ and pulls v_l below 50/29
    assert!(t.v_l < 50.0 / 29.0);
    let sim = simulated_v_l(&sigma, n, 4000);
    assert!((t.v_l / sim - 1.0).abs() < 0.05, "{} vs {sim}", t.v_l);
    assert!(t.b_l <= t.b_u + 3.0 * t.se_b_u);
    assert!(t.v_l >= t.v_u - 3.0 * t.se_v_l);
}

#[test]
fn isotropic_terms_coincide() {
    let (n, p) = (10, 30);
    let sigma = DMatrix::identity(p, p) * 2.0;
    let design = GaussianDesign::new(&sigma).unwrap();
    let t = interp_risk_terms(&sigma, n, &design, ResampleSpec::new(n, 200, 22)).unwrap();
    assert!(close(t.b_l, t.b_u, 1e-9), "{t:?}");
    assert!(close(t.v_l, t.v_u, 1e-9), "{t:?}");
}

#[test]
fn ordering_on_correlated_design() {
    let (n, p) = (20, 45);
    let mut r = rng::stream(23, &[0]);
    let a = rng::standard_normal_matrix(p, p, &mut r);
    let sigma = (&a * a.transpose()) / p as f64 + DMatrix::identity(p, p) * 0.05;
    let design = GaussianDesign::new(&sigma).unwrap();
    let t = interp_risk_terms(&sigma, n, &design, ResampleSpec::new(n, 300, 24)).unwrap();
    assert!(t.b_l <= t.b_u + 3.0 * t.se_b_u, "{t:?}");
    assert!(t.v_l >= t.v_u - 3.0 * t.se_v_l, "{t:?}");
}

#[test]
fn risk_terms_need_p_above_n_plus_one() {
    let sigma = DMatrix::identity(11, 11);
    let design = GaussianDesign::new(&sigma).unwrap();
    assert!(interp_risk_terms(&sigma, 10, &design, ResampleSpec::new(10, 10, 1)).is_err());
}

fn terms(b_l: f64, v_l: f64, b_u: f64, v_u: f64) -> InterpRiskTerms {
    InterpRiskTerms { b_l, v_l, b_u, v_u, se_b_l: 0.0, se_v_l: 0.0, se_b_u: 0.0, se_v_u: 0.0, draws_used: 1, draws_skipped: 0 }
}

#[test]
fn alpha_star_examples() {
    let t = terms(1.0, 3.0, 2.0, 1.0);
    assert_eq!(alpha_star_interp(0.0, 1.0, &t).unwrap().0, 0.0);
    assert_eq!(alpha_star_interp(1.0, 0.0, &t).unwrap().0, 1.0);
    // σ²(v_l - v_u) = 2 = τ²(b_u - b_l)
    let (a, r) = alpha_star_interp(1.0, 2.0, &t).unwrap();
    assert!(close(a, 0.5, 1e-15));
    assert!(r <= t.r_min_norm(1.0, 2.0));
    // the attained value is the mixture risk evaluated at α*
    let mix = |x: f64| (1.0 - x).powi(2) * t.r_min_norm(1.0, 2.0) + x * x * t.r_min_variance(1.0, 2.0)
        + 2.0 * x * (1.0 - x) * (2.0 * t.b_l + 1.0 * t.v_u);
    assert!(close(mix(a), r, 1e-12), "{} vs {r}", mix(a));
    assert!(alpha_star_interp(1.0, 1.0, &terms(2.0, 3.0, 1.0, 1.0)).is_err());
    assert!(alpha_star_interp(1.0, 1.0, &terms(1.0, 1.0, 2.0, 3.0)).is_err());
}

#[test]
fn sigma2_known_tau_examples() {
    assert!(close(sigma2_known_tau(&toy(3.0), 0.0).unwrap(), 9.0, 1e-12));
    assert!(close(sigma2_known_tau(&toy(3.0), 1.0).unwrap(), 7.0, 1e-12));
}

#[test]
fn sigma2_known_tau_is_unbiased() {
    let (n, p, tau2, sigma2) = (30, 60, 1.0, 4.0);
    let design = GaussianDesign::new(&spiked(p, n)).unwrap();
    let est: Vec<f64> = (0..5000).map(|i| sigma2_known_tau(&draw(&design, n, tau2, sigma2, 31, i).0, tau2).unwrap()).collect();
    let s = mean_se(&est);
    assert!((s.mean - sigma2).abs() < 3.0 * s.se, "{s:?}");
}

#[test]
fn iterative_scheme_noiseless() {
    let (n, p) = (50, 100);
    let sigma = spiked(p, n);
    let design = GaussianDesign::new(&sigma).unwrap();
    let mut s2 = Vec::new();
    for i in 0..300 {
        let (d, _) = draw(&design, n, 1.0, 0.0, 41, i);
        let r = iterate_sigma_tau(&d, &sigma).unwrap();
        assert!(r.converged);
        s2.push(r.sigma2_hat);
    }
    // each estimate lies within three of its own standard errors of zero
    let sd = mean_se(&s2).se * (s2.len() as f64).sqrt();
    let near = s2.iter().filter(|&&v| v <= 3.0 * sd).count();
    assert!(near as f64 >= 0.95 * s2.len() as f64, "{near} of {}", s2.len());
    let mut sorted = s2.clone();
    sorted.sort_by(f64::total_cmp);
    assert!(sorted[s2.len() / 2] < 0.5 * sd, "median {}", sorted[s2.len() / 2]);
}

#[test]
fn iterative_scheme_recovers_noise_and_signal() {
    let (n, p, tau2) = (50, 100, 1.0);
    let sigma = spiked(p, n);
    let design = GaussianDesign::new(&sigma).unwrap();
    for sigma2 in [4.0, 16.0, 25.0] {
        let (mut s2, mut t2) = (Vec::new(), Vec::new());
        for i in 0..400 {
            let (d, _) = draw(&design, n, tau2, sigma2, 42, i);
            let r = iterate_sigma_tau(&d, &sigma).unwrap();
            assert!(r.converged && r.iterations < MAX_ITER);
            s2.push(r.sigma2_hat);
            t2.push(r.tau2_hat);
        }
        let (s, t) = (mean_se(&s2), mean_se(&t2));
        assert!((t.mean / tau2 - 1.0).abs() < 0.1, "σ² = {sigma2}: τ̂² {t:?}");
        if sigma2 >= 16.0 {
            assert!((s.mean / sigma2 - 1.0).abs() < 0.1, "σ² = {sigma2}: σ̂² {s:?}");
        } else {
            // clipping at zero biases small noise levels upward
            assert!(s.mean > sigma2, "σ² = {sigma2}: σ̂² {s:?}");
        }
    }
}
