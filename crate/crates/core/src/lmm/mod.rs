//! REML fitting of nested random-intercept linear mixed models
//! (school and/or child intercepts).
//!
//! The marginal covariance is `sigma1^2 * H` with
//! `H = I + rho2 * Z2 Z2' + rho3 * Z3 Z3'`. Every quantity the criterion needs
//! (`X'H^-1 X`, `X'H^-1 y`, `y'H^-1 y`, `log|H|`) is assembled from per-child
//! and per-school sums, so one evaluation costs `O(groups * p^2 + p^3)`.

mod optim;

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::data::{require_complete, Frame, HierIndex};
use crate::error::{Error, Result};
use crate::linalg::{collinear_columns, log_det, syr, symmetrize, DesignMatrix, LN_2PI};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Term {
    Intercept,
    Main(String),
    Product(String, String),
    Square(String),
}

impl Term {
    pub fn main(name: &str) -> Self {
        Term::Main(name.to_string())
    }

    pub fn product(a: &str, b: &str) -> Self {
        Term::Product(a.to_string(), b.to_string())
    }

    pub fn square(a: &str) -> Self {
        Term::Square(a.to_string())
    }

    pub fn label(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Intercept => f.write_str("(Intercept)"),
            Term::Main(a) => f.write_str(a),
            Term::Product(a, b) => write!(f, "{a}:{b}"),
            Term::Square(a) => write!(f, "{a}^2"),
        }
    }
}

/// Which random intercepts the model carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RandomIntercepts {
    pub school: bool,
    pub child: bool,
}

impl RandomIntercepts {
    pub const NONE: Self = Self { school: false, child: false };
    pub const CHILD: Self = Self { school: false, child: true };
    pub const SCHOOL: Self = Self { school: true, child: false };
    pub const SCHOOL_CHILD: Self = Self { school: true, child: true };
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmmSpec {
    pub response: String,
    pub fixed: Vec<Term>,
    pub random: RandomIntercepts,
}

impl LmmSpec {
    pub fn new(response: &str, fixed: Vec<Term>, random: RandomIntercepts) -> Self {
        Self { response: response.to_string(), fixed, random }
    }

    pub fn labels(&self) -> Vec<String> {
        self.fixed.iter().map(Term::label).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmmFit {
    pub labels: Vec<String>,
    pub beta: Vec<f64>,
    pub se: Vec<f64>,
    /// (school, child, residual) variances; absent levels report 0.
    pub vc: [f64; 3],
    pub reml_loglik: f64,
    pub converged: bool,
    pub n_obs: usize,
    pub n_schools: usize,
    pub n_children: usize,
}

impl LmmFit {
    pub fn coef(&self, label: &str) -> Option<(f64, f64)> {
        self.labels.iter().position(|l| l == label).map(|k| (self.beta[k], self.se[k]))
    }

    /// Complete-data residual degrees of freedom.
    pub fn df_residual(&self) -> usize {
        self.n_obs.saturating_sub(self.beta.len())
    }
}

fn term_values<F: Frame + ?Sized>(data: &F, term: &Term) -> Result<Vec<f64>> {
    let col = |name: &str| -> Result<Vec<f64>> { require_complete(name, &data.cells(name)?) };
    Ok(match term {
        Term::Intercept => vec![1.0; data.n_rows()],
        Term::Main(a) => col(a)?,
        Term::Product(a, b) => col(a)?.iter().zip(col(b)?).map(|(x, y)| x * y).collect(),
        Term::Square(a) => col(a)?.iter().map(|x| x * x).collect(),
    })
}

/// Fixed-effects design for a spec.
pub fn design_matrix<F: Frame + ?Sized>(spec: &LmmSpec, data: &F) -> Result<DesignMatrix> {
    let n = data.n_rows();
    let mut x = DesignMatrix::zeros(n, spec.labels());
    for (k, t) in spec.fixed.iter().enumerate() {
        let v = term_values(data, t)?;
        for (r, val) in v.into_iter().enumerate() {
            x.row_mut(r)[k] = val;
        }
    }
    Ok(x)
}

/// Sufficient statistics of the augmented matrix `[X y]` by group.
#[derive(Debug, Clone)]
pub struct Blocks {
    n: usize,
    p: usize,
    m: DMatrix<f64>,
    /// Distinct child sizes and how many children have each.
    sizes: Vec<(f64, usize)>,
    /// Sum over children of each size of `s_j s_j'`.
    size_gram: Vec<DMatrix<f64>>,
    /// Per school: (size slot, child count, summed child totals).
    schools: Vec<Vec<(usize, usize, Vec<f64>)>>,
    random: RandomIntercepts,
    n_schools: usize,
    n_children: usize,
}

impl Blocks {
    pub fn new(x: &DesignMatrix, y: &[f64], index: &[HierIndex], random: RandomIntercepts) -> Result<Self> {
        let n = y.len();
        if x.rows != n || index.len() != n {
            return Err(Error::Structure("design, response and index lengths differ".into()));
        }
        let p = x.cols();
        let q = p + 1;
        let mut m = DMatrix::zeros(q, q);
        let mut row = vec![0.0; q];
        // child key -> (size, totals)
        let mut children: BTreeMap<(u32, u32, usize), (usize, Vec<f64>)> = BTreeMap::new();
        for r in 0..n {
            row[..p].copy_from_slice(x.row(r));
            row[p] = y[r];
            syr(&mut m, &row, 1.0);
            let h = index[r];
            let key = if random.child { (h.school, h.child, 0) } else { (h.school, h.child, r) };
            let e = children.entry(key).or_insert_with(|| (0, vec![0.0; q]));
            e.0 += 1;
            e.1.iter_mut().zip(&row).for_each(|(a, b)| *a += b);
        }
        symmetrize(&mut m);

        let mut size_slot: BTreeMap<usize, usize> = BTreeMap::new();
        for (size, _) in children.values() {
            let len = size_slot.len();
            size_slot.entry(*size).or_insert(len);
        }
        let mut sizes = vec![(0.0, 0usize); size_slot.len()];
        for (&s, &k) in &size_slot {
            sizes[k].0 = s as f64;
        }
        let mut size_gram = vec![DMatrix::zeros(q, q); sizes.len()];
        let mut schools: BTreeMap<u32, BTreeMap<usize, (usize, Vec<f64>)>> = BTreeMap::new();
        for (key, (size, tot)) in &children {
            let k = size_slot[size];
            sizes[k].1 += 1;
            syr(&mut size_gram[k], tot, 1.0);
            let e = schools.entry(key.0).or_default().entry(k).or_insert_with(|| (0, vec![0.0; q]));
            e.0 += 1;
            e.1.iter_mut().zip(tot).for_each(|(a, b)| *a += b);
        }
        size_gram.iter_mut().for_each(symmetrize);
        let n_schools = schools.len();
        let n_children = if random.child { children.len() } else { index.iter().map(|h| (h.school, h.child)).collect::<std::collections::BTreeSet<_>>().len() };
        let schools = schools.into_values().map(|m| m.into_iter().map(|(k, (c, t))| (k, c, t)).collect()).collect();
        Ok(Self { n, p, m, sizes, size_gram, schools, random, n_schools, n_children })
    }

    /// `[X y]' H^-1 [X y]` and `log|H|`.
    fn weighted(&self, rho2: f64, rho3: f64) -> (DMatrix<f64>, f64) {
        let q = self.p + 1;
        let mut qm = self.m.clone();
        let mut logdet = 0.0;
        let inv: Vec<f64> = self.sizes.iter().map(|(s, _)| 1.0 / (1.0 + rho2 * s)).collect();
        if rho2 > 0.0 {
            for (k, (s, count)) in self.sizes.iter().enumerate() {
                let w = rho2 * inv[k];
                qm -= &self.size_gram[k] * w;
                logdet += *count as f64 * (1.0 + rho2 * s).ln();
            }
        }
        if rho3 > 0.0 {
            let mut t = vec![0.0; q];
            for school in &self.schools {
                t.iter_mut().for_each(|v| *v = 0.0);
                let mut c = 0.0;
                for (k, count, tot) in school {
                    c += *count as f64 * self.sizes[*k].0 * inv[*k];
                    t.iter_mut().zip(tot).for_each(|(a, b)| *a += b * inv[*k]);
                }
                let v = rho3 / (1.0 + rho3 * c);
                syr(&mut qm, &t, -v);
                logdet += (1.0 + rho3 * c).ln();
            }
            // syr touched only the lower triangle
            for b in 0..q {
                for a in (b + 1)..q {
                    qm[(b, a)] = qm[(a, b)];
                }
            }
        }
        (qm, logdet)
    }

    fn gls(&self, rho2: f64, rho3: f64) -> Option<Gls> {
        let p = self.p;
        let (qm, logdet_h) = self.weighted(rho2, rho3);
        let c = qm.view((0, 0), (p, p)).into_owned();
        let xty = qm.view((0, p), (p, 1)).column(0).into_owned();
        let chol = c.cholesky()?;
        let beta = chol.solve(&xty);
        let rss = qm[(p, p)] - xty.dot(&beta);
        Some(Gls { logdet_h, logdet_c: log_det(&chol), beta, rss: rss.max(0.0), chol })
    }

    /// `-2 * profiled REML log-likelihood` at variance ratios.
    fn profiled_deviance(&self, rho2: f64, rho3: f64) -> f64 {
        let df = (self.n - self.p) as f64;
        match self.gls(rho2, rho3) {
            Some(g) if g.rss > 0.0 => df * (LN_2PI + (g.rss / df).ln()) + df + g.logdet_h + g.logdet_c,
            _ => f64::INFINITY,
        }
    }

    /// Restricted log-likelihood at `(sigma3^2, sigma2^2, sigma1^2)`.
    pub fn reml_loglik(&self, vc: [f64; 3]) -> f64 {
        let [s3, s2, s1] = vc;
        if s1 <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let rho2 = if self.random.child { s2 / s1 } else { 0.0 };
        let rho3 = if self.random.school { s3 / s1 } else { 0.0 };
        let df = (self.n - self.p) as f64;
        match self.gls(rho2, rho3) {
            Some(g) => -0.5 * (df * LN_2PI + df * s1.ln() + g.logdet_h + g.logdet_c + g.rss / s1),
            None => f64::NEG_INFINITY,
        }
    }
}

struct Gls {
    logdet_h: f64,
    logdet_c: f64,
    beta: DVector<f64>,
    rss: f64,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

const LOG_FLOOR: f64 = -25.0;
const LOG_CEIL: f64 = 15.0;
const BOUNDARY: f64 = -12.0;

fn prepare<F: Frame + ?Sized>(spec: &LmmSpec, data: &F) -> Result<(DesignMatrix, Vec<f64>)> {
    let y = require_complete(&spec.response, &data.cells(&spec.response)?)?;
    let x = design_matrix(spec, data)?;
    if x.cols() == 0 || x.rows <= x.cols() {
        return Err(Error::InvalidArgument("need more rows than fixed effects".into()));
    }
    let collinear = collinear_columns(&x.gram(), &x.labels);
    if !collinear.is_empty() {
        return Err(Error::Collinear { columns: collinear });
    }
    Ok((x, y))
}

/// Restricted log-likelihood of `spec` on `data` at the given variance
/// components `(sigma3^2, sigma2^2, sigma1^2)`. Components of absent
/// random effects are ignored. Returns `-inf` when the marginal covariance
/// is singular.
pub fn reml_objective<F: Frame + ?Sized>(spec: &LmmSpec, data: &F, vc: [f64; 3]) -> Result<f64> {
    if vc.iter().any(|v| *v < 0.0) {
        return Err(Error::InvalidArgument("variance components must be non-negative".into()));
    }
    let (x, y) = prepare(spec, data)?;
    Ok(Blocks::new(&x, &y, data.index(), spec.random)?.reml_loglik(vc))
}

/// Fit by REML. Rank-deficient designs are an error; optimizer trouble
/// returns a fit with `converged = false`.
pub fn fit_lmm<F: Frame + ?Sized>(spec: &LmmSpec, data: &F) -> Result<LmmFit> {
    let (x, y) = prepare(spec, data)?;
    // The criterion depends on y only through its OLS residual; fitting the
    // residual keeps the optimizer path identical under y -> y + Xc.
    let b0 = ols(&x, &y)?;
    let resid: Vec<f64> = (0..x.rows).map(|r| y[r] - crate::linalg::dot(x.row(r), &b0)).collect();
    let blocks = Blocks::new(&x, &resid, data.index(), spec.random)?;
    let mut fit = fit_blocks(&blocks, x.labels.clone())?;
    fit.beta.iter_mut().zip(&b0).for_each(|(b, o)| *b += o);
    Ok(fit)
}

fn ols(x: &DesignMatrix, y: &[f64]) -> Result<Vec<f64>> {
    let chol = crate::linalg::cholesky(x.gram(), "X'X")?;
    let mut xty = DVector::zeros(x.cols());
    for r in 0..x.rows {
        for (k, v) in x.row(r).iter().enumerate() {
            xty[k] += v * y[r];
        }
    }
    Ok(chol.solve(&xty).iter().copied().collect())
}

/// Which ratios are free: index 0 = rho2 (child), 1 = rho3 (school).
fn ratios(free: &[usize], theta: &[f64]) -> (f64, f64) {
    let mut r = [0.0, 0.0];
    for (k, &which) in free.iter().enumerate() {
        r[which] = if theta[k] == f64::NEG_INFINITY { 0.0 } else { theta[k].clamp(LOG_FLOOR, LOG_CEIL).exp() };
    }
    (r[0], r[1])
}

pub(crate) fn fit_blocks(blocks: &Blocks, labels: Vec<String>) -> Result<LmmFit> {
    let mut free: Vec<usize> = Vec::new();
    if blocks.random.child {
        free.push(0);
    }
    if blocks.random.school {
        free.push(1);
    }

    let ols = blocks.gls(0.0, 0.0).ok_or_else(|| Error::NotPositiveDefinite("X'X".into()))?;
    if ols.rss <= 1e-24 * blocks.m[(blocks.p, blocks.p)].max(1.0) {
        // exact fit: every variance component is zero
        return Ok(LmmFit {
            labels,
            beta: ols.beta.iter().copied().collect(),
            se: vec![0.0; blocks.p],
            vc: [0.0; 3],
            reml_loglik: f64::INFINITY,
            converged: true,
            n_obs: blocks.n,
            n_schools: blocks.n_schools,
            n_children: blocks.n_children,
        });
    }

    let (theta, converged) = optimize(blocks, &free);
    let (rho2, rho3) = ratios(&free, &theta);
    let g = blocks.gls(rho2, rho3).ok_or_else(|| Error::NotPositiveDefinite("X'H^-1 X".into()))?;
    let df = (blocks.n - blocks.p) as f64;
    let sigma1 = g.rss / df;
    let cinv = g.chol.inverse();
    let se = (0..blocks.p).map(|k| (sigma1 * cinv[(k, k)]).sqrt()).collect();
    let vc = [rho3 * sigma1, rho2 * sigma1, sigma1];
    Ok(LmmFit {
        labels,
        beta: g.beta.iter().copied().collect(),
        se,
        vc,
        reml_loglik: blocks.reml_loglik(vc),
        converged,
        n_obs: blocks.n,
        n_schools: blocks.n_schools,
        n_children: blocks.n_children,
    })
}

/// Minimize the profiled deviance over log variance ratios. Components that
/// drift toward zero are pinned to the boundary and the rest re-optimized.
fn optimize(blocks: &Blocks, free: &[usize]) -> (Vec<f64>, bool) {
    let run = |active: &[usize], start: Vec<f64>| {
        let obj = |t: &[f64]| {
            let (r2, r3) = ratios(active, t);
            blocks.profiled_deviance(r2, r3)
        };
        let b = optim::bfgs(&obj, start, 200);
        let polished = optim::nelder_mead(&obj, b.x.clone(), 0.05, 1e-8, 2000);
        let best = if polished.f <= b.f { polished } else { b };
        let grad = optim::fd_gradient(&obj, &best.x, 1e-5);
        let gnorm = grad.iter().map(|v| v * v).sum::<f64>().sqrt();
        let conv = best.converged || gnorm < 1e-6;
        (best.x, best.f, conv)
    };

    let mut active: Vec<usize> = free.to_vec();
    let (mut theta, mut fbest, mut converged) = run(&active, vec![0.0; active.len()]);
    loop {
        let pinned: Vec<usize> = (0..active.len()).filter(|&k| theta[k] < BOUNDARY).collect();
        if pinned.is_empty() {
            break;
        }
        let keep: Vec<usize> = (0..active.len()).filter(|k| !pinned.contains(k)).collect();
        let sub: Vec<usize> = keep.iter().map(|&k| active[k]).collect();
        let start: Vec<f64> = keep.iter().map(|&k| theta[k]).collect();
        let (t2, f2, c2) = run(&sub, start);
        if f2 <= fbest + 1e-9 {
            active = sub;
            theta = t2;
            fbest = f2;
            converged = c2;
        } else {
            break;
        }
    }
    // expand back to the full free set, pinned components at the floor
    let full: Vec<f64> = free
        .iter()
        .map(|which| match active.iter().position(|a| a == which) {
            Some(k) => theta[k],
            None => f64::NEG_INFINITY,
        })
        .collect();
    (full, converged)
}

/// Gaussian log-density of the response given fixed effects, random
/// intercepts (looked up per row) and residual variance.
pub fn conditional_loglik<F: Frame + ?Sized>(
    spec: &LmmSpec,
    data: &F,
    beta: &[f64],
    school_effect: impl Fn(u32) -> f64,
    child_effect: impl Fn(u32, u32) -> f64,
    sigma1_sq: f64,
) -> Result<f64> {
    let x = design_matrix(spec, data)?;
    let y = require_complete(&spec.response, &data.cells(&spec.response)?)?;
    let mut ll = 0.0;
    for (r, h) in data.index().iter().enumerate() {
        let mut mu = crate::linalg::dot(x.row(r), beta);
        if spec.random.school {
            mu += school_effect(h.school);
        }
        if spec.random.child {
            mu += child_effect(h.school, h.child);
        }
        ll += crate::linalg::normal_logpdf(y[r], mu, sigma1_sq);
    }
    Ok(ll)
}

#[cfg(test)]
mod tests;
