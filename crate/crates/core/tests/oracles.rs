mod common;

use common::*;
use faer::Mat;
use plm_divide::datagen::{sample_dataset, stream_rng, Shard, SimDesign};
use plm_divide::debias::{self, debias_local, debias_with_score, nodewise};
use plm_divide::kernel::{self, smoother_pair, KernelSpec};
use plm_divide::lasso::LassoOptions;
use plm_divide::profiled_lasso::{self, fit_local, joint_objective, profiled_objective, LocalFit};
use plm_divide::tuning::{cv_select_with_gram, CvPlan, GridSpec};
use plm_divide::{PenaltyConfig, ProfiledSystem};
use rand::Rng;
use rand_distr::StandardNormal;

fn moments(shard: &Shard, gram: &Mat<f64>, lambda2: f64) -> (Dense, Vec<f64>, f64) {
    let m = residual_smoother(&dense(gram.as_ref()), lambda2);
    weighted_moments(&dense(shard.x.as_ref()), &shard.y, &m)
}

#[test]
fn profiled_lasso_matches_sign_enumeration_n20_p4() {
    let shard = random_shard(20, 4, 1);
    let gram = sobolev_gram(&shard);
    let (g, c, yy) = moments(&shard, &gram, 0.01);
    let lambda1 = 0.3 * c.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let cfg = PenaltyConfig::new(lambda1, 0.01).unwrap();
    let fit = fit_local(&shard, gram.as_ref(), &cfg).unwrap();
    let (best, _) = sign_enumeration(&g, &c, yy, lambda1);
    let ours = lasso_objective(&g, &c, yy, lambda1, &fit.beta_hat);
    assert!((ours - best).abs() < 1e-10, "{ours} vs {best}");
    assert!(kkt_violation(&g, &c, lambda1, &fit.beta_hat) < 1e-6);
    // Same number through the library's dense route.
    let q = profiled_objective(&shard, gram.as_ref(), &fit.beta_hat, &cfg).unwrap();
    assert!((q - ours).abs() < 1e-10);
}

#[test]
fn joint_objective_at_profiled_coefficients_equals_q() {
    for seed in 0..10 {
        let shard = random_shard(12, 3, 100 + seed);
        let gram = sobolev_gram(&shard);
        let cfg = PenaltyConfig::new(0.05, 0.003).unwrap();
        let fit = fit_local(&shard, gram.as_ref(), &cfg).unwrap();
        let joint = joint_objective(&shard, gram.as_ref(), &fit.beta_hat, &fit.a_hat, &cfg).unwrap();
        let q = profiled_objective(&shard, gram.as_ref(), &fit.beta_hat, &cfg).unwrap();
        assert!((joint - q).abs() < 1e-10, "seed {seed}: {joint} vs {q}");
    }
}

#[test]
fn huge_lambda2_reduces_to_plain_lasso() {
    let shard = random_shard(30, 5, 7);
    let gram = sobolev_gram(&shard);
    let x = dense(shard.x.as_ref());
    let ident: Dense = (0..30).map(|i| (0..30).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    let (g, c, yy) = weighted_moments(&x, &shard.y, &ident);
    let cfg = PenaltyConfig::new(0.1, 1e9).unwrap();
    let fit = fit_local(&shard, gram.as_ref(), &cfg).unwrap();
    let (_, plain) = sign_enumeration(&g, &c, yy, 0.1);
    let diff = fit.beta_hat.iter().zip(&plain).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(diff < 1e-4, "{diff}");
    // The kernel part vanishes with it.
    let ka = linalg_mat_vec(&gram, &fit.a_hat);
    assert!(ka.iter().all(|v| v.abs() < 1e-6));
}

fn linalg_mat_vec(a: &Mat<f64>, x: &[f64]) -> Vec<f64> {
    mat_vec(&dense(a.as_ref()), x)
}

#[test]
fn noiseless_one_step_debias_is_exact() {
    // Y = X beta*, exact inverse of the weighted covariance: one Newton step lands on beta*.
    let (n, p) = (40, 4);
    let mut rng = stream_rng(5, &[0]);
    let x = Mat::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let t: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let beta_star = [1.5, -0.5, 0.0, 2.0];
    let y: Vec<f64> = (0..n).map(|i| (0..p).map(|j| x[(i, j)] * beta_star[j]).sum()).collect();
    let shard = Shard::from_parts(y, x, t).unwrap();
    let gram = sobolev_gram(&shard);
    let lambda2 = 0.02;
    let sp = smoother_pair(gram.as_ref(), lambda2).unwrap();
    let (sigma, _, _) = moments(&shard, &gram, lambda2);
    let inv = invert(&sigma).unwrap();
    let theta = Mat::from_fn(p, p, |i, j| inv[i][j]);
    let fit = LocalFit {
        beta_hat: vec![0.3, 0.3, -0.7, 0.0],
        a_hat: vec![0.0; n],
        config: PenaltyConfig::new(0.0, lambda2).unwrap(),
        shard_id: 0,
        kkt_residual: 0.0,
        objective_value: 0.0,
        sweeps: 0,
    };
    let check = debias_local(&fit, &shard, &sp, theta.as_ref()).unwrap();
    for (a, b) in check.iter().zip(beta_star) {
        assert!((a - b).abs() < 1e-8, "{a} vs {b}");
    }
}

#[test]
fn debias_routes_agree() {
    let shard = random_shard(50, 6, 9);
    let gram = sobolev_gram(&shard);
    let cfg = PenaltyConfig::new(0.08, 0.004).unwrap();
    let system = ProfiledSystem::new(&shard, gram.as_ref()).unwrap();
    let fit = system.fit(cfg, None, &LassoOptions::default()).unwrap();
    let design = system.weighted_design(&shard, cfg.lambda2).unwrap();
    let nw = nodewise(design.as_ref(), 0.2).unwrap();

    // Through M.
    let sp = smoother_pair(gram.as_ref(), cfg.lambda2).unwrap();
    let via_m = debias_local(&fit, &shard, &sp, nw.theta_hat.as_ref()).unwrap();
    // Through the cached eigenbasis.
    let score = system.score(cfg.lambda2, &fit.beta_hat);
    let via_eigen = debias_with_score(&fit.beta_hat, &score, nw.theta_hat.as_ref()).unwrap();
    // Through M^{1/2}: (1/n) Theta X~'(y~ - X~ beta).
    let root = dense(sp.sqrt_m().unwrap().as_ref());
    let xt = mul(&root, &dense(shard.x.as_ref()));
    let yt = mat_vec(&root, &shard.y);
    let fitted = mat_vec(&xt, &fit.beta_hat);
    let resid: Vec<f64> = yt.iter().zip(&fitted).map(|(a, b)| a - b).collect();
    let s: Vec<f64> = mat_vec(&transpose(&xt), &resid).into_iter().map(|v| v / 50.0).collect();
    let corr = mat_vec(&dense(nw.theta_hat.as_ref()), &s);
    for j in 0..6 {
        let via_root = fit.beta_hat[j] + corr[j];
        assert!((via_m[j] - via_eigen[j]).abs() < 1e-10);
        assert!((via_m[j] - via_root).abs() < 1e-10);
    }
}

#[test]
fn nodewise_gap_bound_random_designs() {
    for seed in 0..10 {
        let mut rng = stream_rng(seed, &[4]);
        let x = Mat::from_fn(50, 10, |_, _| rng.sample::<f64, _>(StandardNormal));
        let nw = nodewise(x.as_ref(), debias::default_lambda0(10, 50)).unwrap();
        // Recompute the gap directly from Theta and Sigma.
        let sigma = mul(&transpose(&dense(x.as_ref())), &dense(x.as_ref()));
        let th = dense(nw.theta_hat.as_ref());
        let prod = mul(&th, &sigma);
        let mut gap = 0.0_f64;
        for j in 0..10 {
            for k in 0..10 {
                let target = if j == k { 1.0 } else { 0.0 };
                gap = gap.max((prod[j][k] / 50.0 - target).abs());
            }
            assert!((prod[j][j] / 50.0 - 1.0).abs() < 1e-8);
        }
        let bound = nw.tau2.iter().map(|t| nw.lambda0 / t).fold(0.0, f64::max);
        assert!(gap <= bound + 1e-12, "seed {seed}: {gap} > {bound}");
        assert!((gap - nw.gap).abs() < 1e-10);
    }
}

#[test]
fn prediction_at_training_point_reproduces_kernel_fit() {
    let shard = random_shard(25, 3, 21);
    let spec = KernelSpec::sobolev3();
    let gram = sobolev_gram(&shard);
    let fit = fit_local(&shard, gram.as_ref(), &PenaltyConfig::new(0.05, 0.01).unwrap()).unwrap();
    let ka = linalg_mat_vec(&gram, &fit.a_hat);
    for i in [0, 7, 24] {
        let xi: Vec<f64> = (0..3).map(|j| shard.x[(i, j)]).collect();
        let lin: f64 = xi.iter().zip(&fit.beta_hat).map(|(a, b)| a * b).sum();
        let pred = profiled_lasso::predict(&fit, &shard, &spec, &xi, &[shard.t[i]]).unwrap();
        assert!((pred - lin - ka[i]).abs() < 1e-10);
    }
    let pb = profiled_lasso::predict_batch(&fit, &shard, &spec, shard.x.as_ref(), &shard.t).unwrap();
    assert!((pb[7] - profiled_lasso::predict(&fit, &shard, &spec, &(0..3).map(|j| shard.x[(7, j)]).collect::<Vec<_>>(), &[shard.t[7]]).unwrap()).abs() < 1e-10);
}

#[test]
fn strong_signal_support_recovery() {
    let mut hits = 0;
    for seed in 0..100 {
        let design = SimDesign {
            noise_var: 0.25,
            ..SimDesign::new(60, 5, 1, 1000 + seed)
        };
        let shard = sample_dataset(&design).unwrap().as_shard();
        let gram = sobolev_gram(&shard);
        let system = ProfiledSystem::new(&shard, gram.as_ref()).unwrap();
        let plan = CvPlan::for_shard(&system, 60, &GridSpec::default(), seed).unwrap();
        let cfg = cv_select_with_gram(&shard, gram.as_ref(), &plan).unwrap().config;
        let fit = system.fit(cfg, None, &LassoOptions::default()).unwrap();
        if fit.beta_hat.iter().all(|b| *b != 0.0) {
            hits += 1;
        }
    }
    assert!(hits >= 90, "support recovered in {hits}/100");
}

#[test]
fn pure_noise_cv_prefers_heavy_penalty() {
    let mut top_tertile = 0;
    for seed in 0..50 {
        let mut rng = stream_rng(seed, &[8]);
        let (n, p) = (100, 10);
        let x = Mat::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let t: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let shard = Shard::from_parts(y, x, t).unwrap();
        let gram = sobolev_gram(&shard);
        let system = ProfiledSystem::new(&shard, gram.as_ref()).unwrap();
        let plan = CvPlan::for_shard(&system, n, &GridSpec::default(), seed).unwrap();
        let cfg = cv_select_with_gram(&shard, gram.as_ref(), &plan).unwrap().config;
        let cut = plan.lambda1_grid[plan.lambda1_grid.len().div_ceil(3) - 1];
        if cfg.lambda1 >= cut {
            top_tertile += 1;
        }
    }
    assert!(top_tertile >= 40, "{top_tertile}/50 in the top tertile");
}

#[test]
fn single_machine_pipeline_equals_centralized_fit() {
    let data = sample_dataset(&SimDesign::new(80, 8, 1, 3)).unwrap();
    let spec = KernelSpec::sobolev3();
    let cfg = PenaltyConfig::new(0.1, 0.002).unwrap();
    let cen = debias::centralized(&data, &spec, &cfg).unwrap();
    let shard = data.as_shard();
    let gram = kernel::gram_matrix(&spec, &shard.t).unwrap();
    let local = fit_local(&shard, gram.as_ref(), &cfg).unwrap();
    assert_eq!(cen, local.beta_hat);
}
