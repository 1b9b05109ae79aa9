use super::*;
use crate::data::{Column, ColumnMeta, Level, LongDataset, Role};
use crate::rng::stream;
use proptest::prelude::*;
use rand_distr::{Distribution, Normal};

/// Long dataset with response `y` and covariate `x`.
fn synthetic(n_schools: u32, per_school: u32, waves: &[u8], vc: [f64; 3], beta: [f64; 2], seed: u64) -> LongDataset {
    let mut rng = stream(seed);
    let z = Normal::new(0.0, 1.0).unwrap();
    let mut index = Vec::new();
    let (mut y, mut x) = (Vec::new(), Vec::new());
    for s in 1..=n_schools {
        let a = vc[0].sqrt() * z.sample(&mut rng);
        for c in 1..=per_school {
            let b = vc[1].sqrt() * z.sample(&mut rng);
            for &w in waves {
                let xv: f64 = z.sample(&mut rng);
                index.push(HierIndex { school: s, child: c, wave: Some(w) });
                x.push(Some(xv));
                y.push(Some(beta[0] + beta[1] * xv + a + b + vc[2].sqrt() * z.sample(&mut rng)));
            }
        }
    }
    LongDataset::new(
        index,
        vec![
            Column::new(ColumnMeta::new("y", Role::Outcome, Level::Occasion), y),
            Column::new(ColumnMeta::new("x", Role::Exposure, Level::Occasion), x),
        ],
    )
    .unwrap()
}

fn spec_xy(random: RandomIntercepts) -> LmmSpec {
    LmmSpec::new("y", vec![Term::Intercept, Term::main("x")], random)
}

/// Restricted log-likelihood from dense n x n matrices.
fn dense_reml(spec: &LmmSpec, data: &LongDataset, vc: [f64; 3]) -> f64 {
    let x = design_matrix(spec, data).unwrap();
    let y = DVector::from_vec(data.complete(&spec.response).unwrap());
    let n = y.len();
    let p = x.cols();
    let xm = DMatrix::from_row_slice(n, p, &x.entries);
    let idx = data.index();
    let v = DMatrix::from_fn(n, n, |a, b| {
        let (ha, hb) = (idx[a], idx[b]);
        let mut e = 0.0;
        if spec.random.school && ha.school == hb.school {
            e += vc[0];
        }
        if spec.random.child && ha.child_key() == hb.child_key() {
            e += vc[1];
        }
        if a == b {
            e += vc[2];
        }
        e
    });
    let Some(chol) = v.clone().cholesky() else { return f64::NEG_INFINITY };
    let vinv_x = chol.solve(&xm);
    let xtvx = xm.transpose() * &vinv_x;
    let xtvy = vinv_x.transpose() * &y;
    let c2 = xtvx.clone().cholesky().unwrap();
    let b = c2.solve(&xtvy);
    let r = &y - &xm * b;
    let quad = r.dot(&chol.solve(&r));
    let ld_v = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let ld_c = 2.0 * c2.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    -0.5 * ((n - p) as f64 * LN_2PI + ld_v + ld_c + quad)
}

#[test]
fn block_criterion_matches_dense_evaluation() {
    let d = synthetic(3, 4, &[3, 5, 7], [0.5, 1.0, 1.0], [1.0, 0.5], 11);
    let spec = spec_xy(RandomIntercepts::SCHOOL_CHILD);
    for vc in [[0.5, 1.0, 1.0], [0.0, 0.3, 2.0], [2.0, 0.0, 0.1], [0.01, 5.0, 0.7]] {
        let a = reml_objective(&spec, &d, vc).unwrap();
        let b = dense_reml(&spec, &d, vc);
        assert!((a - b).abs() < 1e-8 * b.abs().max(1.0), "{vc:?}: {a} vs {b}");
    }
}

#[test]
fn fit_matches_dense_grid_search() {
    let d = synthetic(3, 4, &[3, 5, 7], [0.6, 1.2, 0.8], [1.0, 0.5], 12);
    let spec = spec_xy(RandomIntercepts::SCHOOL_CHILD);
    let fit = fit_lmm(&spec, &d).unwrap();
    assert!(fit.converged);

    // zooming grid search over the dense criterion
    let mut center: [f64; 3] = [1.0, 1.0, 1.0];
    let mut half: [f64; 3] = [3.0, 3.0, 3.0];
    for _ in 0..16 {
        let mut best = (f64::NEG_INFINITY, center);
        let lo: Vec<f64> = (0..3).map(|k| (center[k] - half[k]).max(if k == 2 { 1e-6 } else { 0.0 })).collect();
        let hi: Vec<f64> = (0..3).map(|k| center[k] + half[k]).collect();
        let g = |k: usize, i: usize| lo[k] + (hi[k] - lo[k]) * i as f64 / 10.0;
        for i in 0..=10 {
            for j in 0..=10 {
                for l in 0..=10 {
                    let vc = [g(0, i), g(1, j), g(2, l)];
                    let v = dense_reml(&spec, &d, vc);
                    if v > best.0 {
                        best = (v, vc);
                    }
                }
            }
        }
        center = best.1;
        half = [half[0] / 3.0, half[1] / 3.0, half[2] / 3.0];
    }
    for k in 0..3 {
        assert!((fit.vc[k] - center[k]).abs() < 1e-3, "component {k}: fit {:?} grid {:?}", fit.vc, center);
    }
}

#[test]
fn balanced_one_way_matches_anova() {
    let (groups, n) = (10u32, 5usize);
    let mut rng = stream(13);
    let z = Normal::new(0.0, 1.0).unwrap();
    let mut index = Vec::new();
    let mut y = Vec::new();
    let mut by_group = vec![Vec::new(); groups as usize];
    for g in 1..=groups {
        let b = 1.5 * z.sample(&mut rng);
        for w in 0..n {
            let v = 3.0 + b + z.sample(&mut rng);
            index.push(HierIndex { school: 1, child: g, wave: Some(w as u8) });
            y.push(Some(v));
            by_group[g as usize - 1].push(v);
        }
    }
    let d = LongDataset::new(index, vec![Column::new(ColumnMeta::new("y", Role::Outcome, Level::Occasion), y)]).unwrap();
    let fit = fit_lmm(&LmmSpec::new("y", vec![Term::Intercept], RandomIntercepts::CHILD), &d).unwrap();

    let means: Vec<f64> = by_group.iter().map(|g| g.iter().sum::<f64>() / n as f64).collect();
    let grand = means.iter().sum::<f64>() / groups as f64;
    let msb = n as f64 * means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (groups as f64 - 1.0);
    let msw = by_group
        .iter()
        .zip(&means)
        .map(|(g, m)| g.iter().map(|v| (v - m).powi(2)).sum::<f64>())
        .sum::<f64>()
        / (groups as f64 * (n as f64 - 1.0));
    assert!(msb > msw);
    let sb = (msb - msw) / n as f64;
    assert!((fit.vc[1] - sb).abs() < 1e-6 * sb.max(1.0), "{} vs {sb}", fit.vc[1]);
    assert!((fit.vc[2] - msw).abs() < 1e-6 * msw.max(1.0), "{} vs {msw}", fit.vc[2]);
    assert_eq!(fit.vc[0], 0.0);
}

#[test]
fn constant_response_gives_zero_components() {
    let mut d = synthetic(2, 3, &[3, 5, 7], [0.1, 0.1, 0.1], [0.0, 0.0], 14);
    d.set_values("y", vec![Some(4.25); d.n_rows()]).unwrap();
    let fit = fit_lmm(&LmmSpec::new("y", vec![Term::Intercept], RandomIntercepts::SCHOOL_CHILD), &d).unwrap();
    assert!((fit.beta[0] - 4.25).abs() < 1e-12);
    assert_eq!(fit.vc, [0.0, 0.0, 0.0]);
}

#[test]
fn optimum_dominates_perturbations() {
    let d = synthetic(5, 6, &[3, 5, 7], [0.3, 0.8, 1.0], [0.0, 1.0], 15);
    let spec = spec_xy(RandomIntercepts::SCHOOL_CHILD);
    let fit = fit_lmm(&spec, &d).unwrap();
    let best = reml_objective(&spec, &d, fit.vc).unwrap();
    let mut rng = stream(16);
    let z = Normal::new(0.0, 0.2).unwrap();
    for _ in 0..100 {
        let vc = fit.vc.map(|v| (v * (1.0 + z.sample(&mut rng)) + 0.01 * z.sample(&mut rng)).max(0.0));
        assert!(reml_objective(&spec, &d, vc).unwrap() <= best + 1e-9);
    }
}

#[test]
fn six_row_criterion_matches_numeric_integration() {
    // Intercept-only model: REML likelihood = integral over beta of the
    // marginal Gaussian likelihood.
    let d = synthetic(1, 2, &[3, 5, 7], [0.0, 1.0, 1.0], [0.5, 0.0], 17);
    let spec = LmmSpec::new("y", vec![Term::Intercept], RandomIntercepts::CHILD);
    let y = d.complete("y").unwrap();
    let mut prev = f64::NEG_INFINITY;
    let mut increasing = true;
    for step in 0..12 {
        let s2 = 0.05 + 0.25 * step as f64;
        let vc = [0.0, s2, 1.0];
        let analytic = reml_objective(&spec, &d, vc).unwrap();
        // trapezoid integral over beta of N(y; beta 1, V)
        let v = DMatrix::from_fn(6, 6, |a, b| if a / 3 == b / 3 { s2 } else { 0.0 } + if a == b { 1.0 } else { 0.0 });
        let chol = v.clone().cholesky().unwrap();
        let ld = 2.0 * chol.l().diagonal().iter().map(|x| x.ln()).sum::<f64>();
        let dens = |b: f64| {
            let r = DVector::from_iterator(6, y.iter().map(|v| v - b));
            (-0.5 * (6.0 * LN_2PI + ld + r.dot(&chol.solve(&r)))).exp()
        };
        let (lo, hi, k) = (-30.0, 30.0, 60_000);
        let h = (hi - lo) / k as f64;
        let integral: f64 = (0..=k)
            .map(|i| {
                let w = if i == 0 || i == k { 0.5 } else { 1.0 };
                w * dens(lo + i as f64 * h)
            })
            .sum::<f64>()
            * h;
        assert!((analytic - integral.ln()).abs() < 1e-8, "{analytic} vs {}", integral.ln());
        if step > 0 && (analytic > prev) != increasing {
            // the path may turn over at most once (unimodal in s2)
            increasing = !increasing;
        }
        prev = analytic;
    }
}

#[test]
fn no_clustering_converges_to_ols() {
    let d = synthetic(40, 30, &[3, 5, 7], [0.0, 0.0, 1.0], [2.0, -0.3], 18);
    let spec = spec_xy(RandomIntercepts::SCHOOL_CHILD);
    let fit = fit_lmm(&spec, &d).unwrap();
    let x = design_matrix(&spec, &d).unwrap();
    let y = d.complete("y").unwrap();
    let g = DMatrix::from_row_slice(2, 2, &{
        let m = x.gram();
        [m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]]
    });
    let xty = DVector::from_iterator(2, (0..2).map(|k| (0..x.rows).map(|r| x.get(r, k) * y[r]).sum()));
    let ols = g.cholesky().unwrap().solve(&xty);
    assert_eq!(d.n_rows(), 3600);
    assert!((fit.beta[0] - ols[0]).abs() < 1e-2 && (fit.beta[1] - ols[1]).abs() < 1e-2);
}

#[test]
fn standard_errors_match_gls_covariance() {
    let d = synthetic(4, 5, &[3, 5, 7], [0.4, 0.9, 1.1], [0.2, 0.7], 19);
    let spec = spec_xy(RandomIntercepts::SCHOOL_CHILD);
    let fit = fit_lmm(&spec, &d).unwrap();
    // dense GLS covariance (X'V^-1X)^-1 at the fitted components
    let x = design_matrix(&spec, &d).unwrap();
    let n = d.n_rows();
    let xm = DMatrix::from_row_slice(n, 2, &x.entries);
    let idx = d.index();
    let v = DMatrix::from_fn(n, n, |a, b| {
        let mut e = 0.0;
        if idx[a].school == idx[b].school {
            e += fit.vc[0];
        }
        if idx[a].child_key() == idx[b].child_key() {
            e += fit.vc[1];
        }
        if a == b {
            e += fit.vc[2];
        }
        e
    });
    let cov = (xm.transpose() * v.cholesky().unwrap().solve(&xm)).try_inverse().unwrap();
    for k in 0..2 {
        assert!((fit.se[k] - cov[(k, k)].sqrt()).abs() < 1e-9, "{} vs {}", fit.se[k], cov[(k, k)].sqrt());
    }
}

#[test]
fn collinear_design_names_columns() {
    let d = synthetic(2, 3, &[3, 5, 7], [0.1, 0.1, 1.0], [0.0, 1.0], 20);
    let x2: Vec<Option<f64>> = d.complete("x").unwrap().iter().map(|v| Some(2.0 * v)).collect();
    let d = d
        .with_column(Column::new(ColumnMeta::new("x2", Role::Derived, Level::Occasion), x2))
        .unwrap();
    let spec = LmmSpec::new("y", vec![Term::Intercept, Term::main("x"), Term::main("x2")], RandomIntercepts::CHILD);
    match fit_lmm(&spec, &d) {
        Err(Error::Collinear { columns }) => assert!(columns.contains(&"x2".to_string())),
        other => panic!("expected collinearity error, got {other:?}"),
    }
}

#[test]
fn missing_response_is_rejected() {
    let d = synthetic(2, 2, &[3, 5], [0.1, 0.1, 1.0], [0.0, 1.0], 21);
    let mut y = d.cells("y").unwrap().into_owned();
    y[2] = None;
    let d = d.with_values("y", y).unwrap();
    assert!(matches!(fit_lmm(&spec_xy(RandomIntercepts::CHILD), &d), Err(Error::MissingValue { .. })));
}

#[test]
fn conditional_loglik_matches_hand_sum() {
    let d = synthetic(2, 2, &[3, 5], [0.1, 0.1, 1.0], [0.0, 1.0], 22);
    let spec = spec_xy(RandomIntercepts::SCHOOL_CHILD);
    let beta = [0.3, -0.4];
    let ll = conditional_loglik(&spec, &d, &beta, |s| 0.1 * s as f64, |s, c| 0.01 * (s * 10 + c) as f64, 0.8).unwrap();
    let (x, y) = (d.complete("x").unwrap(), d.complete("y").unwrap());
    let hand: f64 = d
        .index()
        .iter()
        .enumerate()
        .map(|(r, h)| {
            let mu = beta[0] + beta[1] * x[r] + 0.1 * h.school as f64 + 0.01 * (h.school * 10 + h.child) as f64;
            -0.5 * ((2.0 * std::f64::consts::PI * 0.8).ln() + (y[r] - mu).powi(2) / 0.8)
        })
        .sum();
    assert!((ll - hand).abs() < 1e-10);
}

#[test]
fn constant_shift_moves_only_intercept() {
    let d = synthetic(6, 5, &[3, 5, 7], [0.3, 0.6, 1.0], [1.0, 0.5], 23);
    let spec = spec_xy(RandomIntercepts::SCHOOL_CHILD);
    let a = fit_lmm(&spec, &d).unwrap();
    let shifted: Vec<Option<f64>> = d.complete("y").unwrap().iter().map(|v| Some(v + 3.0)).collect();
    let b = fit_lmm(&spec, &d.with_values("y", shifted).unwrap()).unwrap();
    assert!((b.beta[0] - a.beta[0] - 3.0).abs() < 1e-10);
    assert!((b.beta[1] - a.beta[1]).abs() < 1e-10);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn criterion_invariant_to_fixed_effect_translation(c0 in -5.0f64..5.0, c1 in -5.0f64..5.0, seed in 0u64..1000) {
        let d = synthetic(3, 3, &[3, 5, 7], [0.4, 0.7, 1.0], [0.0, 1.0], seed);
        let spec = spec_xy(RandomIntercepts::SCHOOL_CHILD);
        let x = d.complete("x").unwrap();
        let moved: Vec<Option<f64>> = d.complete("y").unwrap().iter().zip(&x).map(|(y, x)| Some(y + c0 + c1 * x)).collect();
        let e = d.with_values("y", moved).unwrap();
        let vc = [0.4, 0.7, 1.0];
        let a = reml_objective(&spec, &d, vc).unwrap();
        let b = reml_objective(&spec, &e, vc).unwrap();
        prop_assert!((a - b).abs() < 1e-7 * a.abs().max(1.0));
    }

    #[test]
    fn variance_components_non_negative(seed in 0u64..1000) {
        let d = synthetic(3, 3, &[3, 5, 7], [0.0, 0.05, 1.0], [0.0, 1.0], seed);
        let fit = fit_lmm(&spec_xy(RandomIntercepts::SCHOOL_CHILD), &d).unwrap();
        prop_assert!(fit.vc.iter().all(|v| *v >= 0.0));
        prop_assert!(fit.se.iter().all(|s| *s > 0.0));
    }
}
