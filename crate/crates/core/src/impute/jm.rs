//! Joint multivariate normal imputation of all incomplete wide columns,
//! single-level with school dummy indicators or with school random effects.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::data::{Frame, WideDataset};
use crate::error::Result;
use crate::linalg::{cholesky_jittered, inverse_wishart, standard_normals, Chol};
use crate::rng::{substream, Stream};

use super::ri::Nesting;
use super::{column_name, complete_wide, initial_fill, ImputationConfig, ImputedSet, SamplerDiagnostics, WideTask};

struct Pattern {
    missing: Vec<usize>,
    observed: Vec<usize>,
    rows: Vec<usize>,
}

fn patterns(data: &WideDataset, targets: &[usize]) -> Vec<Pattern> {
    let mut map: BTreeMap<Vec<bool>, Vec<usize>> = BTreeMap::new();
    for r in 0..data.n_rows() {
        let mask: Vec<bool> = targets.iter().map(|&k| data.columns()[k].values[r].is_none()).collect();
        if mask.iter().any(|&m| m) {
            map.entry(mask).or_default().push(r);
        }
    }
    map.into_iter()
        .map(|(mask, rows)| Pattern {
            missing: (0..mask.len()).filter(|&j| mask[j]).collect(),
            observed: (0..mask.len()).filter(|&j| !mask[j]).collect(),
            rows,
        })
        .collect()
}

fn sub(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

/// Redraw every missing cell from its normal conditional given the row's
/// observed cells, mean `mean` and residual covariance `sigma`.
fn impute_rows(y: &mut DMatrix<f64>, mean: &DMatrix<f64>, sigma: &DMatrix<f64>, pats: &[Pattern], rng: &mut Stream) -> Result<()> {
    for p in pats {
        let smm = sub(sigma, &p.missing, &p.missing);
        let (a, cond) = if p.observed.is_empty() {
            (None, smm)
        } else {
            let soo = cholesky_jittered(&sub(sigma, &p.observed, &p.observed), 10, "observed-block covariance")?;
            let smo = sub(sigma, &p.missing, &p.observed);
            let a = soo.solve(&smo.transpose()).transpose();
            let cond = &smm - &a * smo.transpose();
            (Some(a), cond)
        };
        let l = cholesky_jittered(&cond, 10, "conditional covariance")?.l();
        for &r in &p.rows {
            let mut mu = DVector::from_iterator(p.missing.len(), p.missing.iter().map(|&j| mean[(r, j)]));
            if let Some(a) = &a {
                let dev = DVector::from_iterator(p.observed.len(), p.observed.iter().map(|&j| y[(r, j)] - mean[(r, j)]));
                mu += a * dev;
            }
            let draw = mu + &l * standard_normals(p.missing.len(), rng);
            for (i, &j) in p.missing.iter().enumerate() {
                y[(r, j)] = draw[i];
            }
        }
    }
    Ok(())
}

/// `B ~ MN(bhat, G^{-1}, sigma)` with `chol_g` factoring `G`.
fn draw_matrix_normal(chol_g: &Chol, bhat: &DMatrix<f64>, sigma: &DMatrix<f64>, rng: &mut Stream) -> Result<DMatrix<f64>> {
    let (p, q) = bhat.shape();
    let z = DMatrix::from_iterator(p, q, standard_normals(p * q, rng).iter().copied());
    let left = chol_g.l_dirty().tr_solve_lower_triangular(&z).expect("triangular solve");
    let ls = cholesky_jittered(sigma, 10, "residual covariance")?.l();
    Ok(bhat + left * ls.transpose())
}

fn run(data: &WideDataset, cfg: &ImputationConfig, two_level: bool) -> Result<ImputedSet<WideDataset>> {
    cfg.validate()?;
    let task = WideTask::new(data);
    let names: Vec<String> = task.targets.iter().map(|&k| column_name(data, k)).collect();
    let mut rng = substream(cfg.seed, "jm");
    if task.targets.is_empty() {
        return Ok(ImputedSet { datasets: vec![data.clone(); cfg.m], diagnostics: SamplerDiagnostics::default() });
    }
    let design = task.predictor_design(data, !two_level)?;
    let (n, p, q) = (data.n_rows(), design.cols(), task.targets.len());
    let x = DMatrix::from_row_slice(n, p, &design.entries);
    let chol_g = cholesky_jittered(&design.gram(), 10, "predictor cross-product")?;
    let pats = patterns(data, &task.targets);

    let mut y = DMatrix::zeros(n, q);
    for (j, &k) in task.targets.iter().enumerate() {
        let filled = initial_fill(&data.columns()[k].values, &mut rng)?;
        y.set_column(j, &DVector::from_vec(filled));
    }

    let nest = two_level.then(|| Nesting::all(data.index()));
    let n_schools = nest.as_ref().map_or(0, Nesting::n_schools);
    let mut sigma = DMatrix::<f64>::identity(q, q);
    let mut psi = DMatrix::<f64>::identity(q, q);
    let mut u = DMatrix::<f64>::zeros(n_schools, q);
    let ident = DMatrix::<f64>::identity(q, q);

    let total = cfg.burn_in + (cfg.m - 1) * cfg.between;
    let mut datasets = Vec::with_capacity(cfg.m);
    let mut traces: Vec<Vec<f64>> = vec![Vec::with_capacity(total); q];
    for it in 1..=total {
        let mean = match &nest {
            None => {
                let bhat = chol_g.solve(&x.tr_mul(&y));
                let e = &y - &x * &bhat;
                sigma = inverse_wishart((n - p + q + 1) as f64, &(&ident + e.tr_mul(&e)), &mut rng)?;
                let b = draw_matrix_normal(&chol_g, &bhat, &sigma, &mut rng)?;
                &x * b
            }
            Some(nest) => {
                let u_rows = DMatrix::from_fn(n, q, |r, j| u[(nest.school_of[r], j)]);
                let bhat = chol_g.solve(&x.tr_mul(&(&y - &u_rows)));
                let b = draw_matrix_normal(&chol_g, &bhat, &sigma, &mut rng)?;
                let xb = &x * b;
                let d = &y - &xb;
                let sigma_inv = cholesky_jittered(&sigma, 10, "residual covariance")?.inverse();
                let psi_inv = cholesky_jittered(&psi, 10, "school covariance")?.inverse();
                for (s, kids) in nest.school_children.iter().enumerate() {
                    let mut sum = DVector::zeros(q);
                    for &c in kids {
                        for &r in &nest.child_rows[c] {
                            sum += d.row(r).transpose();
                        }
                    }
                    let prec = &psi_inv + &sigma_inv * kids.len() as f64;
                    let cp = cholesky_jittered(&prec, 10, "school effect precision")?;
                    let m = cp.solve(&(&sigma_inv * sum));
                    let dev = cp.l_dirty().tr_solve_lower_triangular(&standard_normals(q, &mut rng)).expect("triangular solve");
                    u.set_row(s, &(m + dev).transpose());
                }
                psi = inverse_wishart((q + 1 + n_schools) as f64, &(&ident + u.tr_mul(&u)), &mut rng)?;
                let u_rows = DMatrix::from_fn(n, q, |r, j| u[(nest.school_of[r], j)]);
                let e = &d - &u_rows;
                sigma = inverse_wishart((q + 1 + n) as f64, &(&ident + e.tr_mul(&e)), &mut rng)?;
                xb + u_rows
            }
        };
        impute_rows(&mut y, &mean, &sigma, &pats, &mut rng)?;
        for (j, miss) in task.missing.iter().enumerate() {
            traces[j].push(miss.iter().map(|&r| y[(r, j)]).sum::<f64>() / miss.len() as f64);
        }
        if it >= cfg.burn_in && (it - cfg.burn_in) % cfg.between == 0 {
            let values: Vec<Vec<f64>> = (0..q).map(|j| y.column(j).iter().copied().collect()).collect();
            datasets.push(complete_wide(data, &task.targets, &values)?);
        }
    }
    let diagnostics = SamplerDiagnostics { traces: vec![names.into_iter().zip(traces).collect()], ..Default::default() };
    Ok(ImputedSet { datasets, diagnostics })
}

/// Single-level joint model with school dummy indicators; one chain, an
/// imputation saved after burn-in and then every `between` iterations.
pub fn impute_jm_1l_di_wide(data: &WideDataset, cfg: &ImputationConfig) -> Result<ImputedSet<WideDataset>> {
    run(data, cfg, false)
}

/// Two-level joint model with correlated school random effects.
pub fn impute_jm_2l_wide(data: &WideDataset, cfg: &ImputationConfig) -> Result<ImputedSet<WideDataset>> {
    run(data, cfg, true)
}
