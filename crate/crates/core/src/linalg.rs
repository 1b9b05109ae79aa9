//! Dense linear algebra and conjugate sampling helpers shared by the
//! mixed-model fitter and the Gibbs samplers.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};

pub type Chol = Cholesky<f64, Dyn>;

/// Row-major dense design matrix with column labels.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub rows: usize,
    pub labels: Vec<String>,
    pub entries: Vec<f64>,
}

impl DesignMatrix {
    pub fn zeros(rows: usize, labels: Vec<String>) -> Self {
        let entries = vec![0.0; rows * labels.len()];
        Self { rows, labels, entries }
    }

    pub fn cols(&self) -> usize {
        self.labels.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.cols();
        &self.entries[i * p..(i + 1) * p]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let p = self.cols();
        &mut self.entries[i * p..(i + 1) * p]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.cols() + j]
    }

    /// `X'X` over all rows.
    pub fn gram(&self) -> DMatrix<f64> {
        let p = self.cols();
        let mut g = DMatrix::zeros(p, p);
        for i in 0..self.rows {
            syr(&mut g, self.row(i), 1.0);
        }
        symmetrize(&mut g);
        g
    }

    /// `X'X` restricted to the listed rows.
    pub fn gram_rows(&self, rows: &[usize]) -> DMatrix<f64> {
        let p = self.cols();
        let mut g = DMatrix::zeros(p, p);
        for &i in rows {
            syr(&mut g, self.row(i), 1.0);
        }
        symmetrize(&mut g);
        g
    }

    pub fn column_sums(&self) -> Vec<f64> {
        let p = self.cols();
        let mut s = vec![0.0; p];
        for i in 0..self.rows {
            for (acc, v) in s.iter_mut().zip(self.row(i)) {
                *acc += v;
            }
        }
        s
    }
}

/// Lower-triangle rank-one update `g += w * x x'`. Call [`symmetrize`] afterwards.
#[inline]
pub fn syr(g: &mut DMatrix<f64>, x: &[f64], w: f64) {
    let p = x.len();
    for b in 0..p {
        let xb = w * x[b];
        if xb == 0.0 {
            continue;
        }
        let col = &mut g.as_mut_slice()[b * p..(b + 1) * p];
        for a in b..p {
            col[a] += x[a] * xb;
        }
    }
}

/// Copy the lower triangle into the upper triangle.
pub fn symmetrize(g: &mut DMatrix<f64>) {
    let p = g.nrows();
    for b in 0..p {
        for a in (b + 1)..p {
            g[(b, a)] = g[(a, b)];
        }
    }
}

pub fn cholesky(m: DMatrix<f64>, what: &str) -> Result<Chol> {
    Cholesky::new(m).ok_or_else(|| Error::NotPositiveDefinite(what.to_string()))
}

/// Cholesky with escalating diagonal jitter, at most `tries` attempts.
pub fn cholesky_jittered(m: &DMatrix<f64>, tries: usize, what: &str) -> Result<Chol> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return Ok(c);
    }
    let scale = (0..m.nrows()).map(|i| m[(i, i)].abs()).fold(0.0, f64::max).max(1e-300);
    let mut jitter = scale * 1e-10;
    for _ in 0..tries {
        let mut mj = m.clone();
        for i in 0..mj.nrows() {
            mj[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(mj) {
            return Ok(c);
        }
        jitter *= 10.0;
    }
    Err(Error::NotPositiveDefinite(what.to_string()))
}

pub fn log_det(chol: &Chol) -> f64 {
    let l = chol.l_dirty();
    (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0
}

/// Columns whose residual after projection on the preceding retained
/// columns is numerically zero, judged on the correlation scale of `gram`.
pub fn collinear_columns(gram: &DMatrix<f64>, labels: &[String]) -> Vec<String> {
    let p = gram.nrows();
    let scale: Vec<f64> = (0..p).map(|i| gram[(i, i)].max(0.0).sqrt()).collect();
    let mut bad = Vec::new();
    let mut kept: Vec<usize> = Vec::new();
    for k in 0..p {
        if scale[k] == 0.0 {
            bad.push(labels[k].clone());
            continue;
        }
        let mut cand = kept.clone();
        cand.push(k);
        let q = cand.len();
        let mut sub = DMatrix::zeros(q, q);
        for (a, &ia) in cand.iter().enumerate() {
            for (b, &ib) in cand.iter().enumerate() {
                sub[(a, b)] = gram[(ia, ib)] / (scale[ia] * scale[ib]);
            }
        }
        // Schur complement of the new column given the retained ones.
        let ok = match Cholesky::new(sub) {
            Some(c) => {
                let d = c.l_dirty()[(q - 1, q - 1)];
                d * d > 1e-10
            }
            None => false,
        };
        if ok {
            kept.push(k);
        } else {
            bad.push(labels[k].clone());
        }
    }
    bad
}

pub fn standard_normals<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

#[inline]
pub fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Draw from `N(mean, sigma2 * G^{-1})` where `chol` factors `G`.
pub fn draw_precision_normal<R: Rng + ?Sized>(
    chol: &Chol,
    mean: &DVector<f64>,
    sigma2: f64,
    rng: &mut R,
) -> DVector<f64> {
    let z = standard_normals(mean.len(), rng);
    // G = L L'  =>  L'^{-1} z ~ N(0, G^{-1})
    let dev = chol
        .l_dirty()
        .tr_solve_lower_triangular(&z)
        .expect("triangular solve");
    mean + dev * sigma2.sqrt()
}

/// Flat-prior Gibbs draw of regression coefficients given `sigma2`:
/// `beta ~ N(G^{-1} X'y, sigma2 G^{-1})` with `G = X'X`.
pub fn draw_coefficients<R: Rng + ?Sized>(
    gram: &Chol,
    xty: &DVector<f64>,
    sigma2: f64,
    rng: &mut R,
) -> DVector<f64> {
    let mean = gram.solve(xty);
    draw_precision_normal(gram, &mean, sigma2, rng)
}

/// Inverse-gamma with shape/rate parameterisation.
pub fn inv_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> f64 {
    let g = Gamma::new(shape, 1.0 / rate).expect("valid gamma parameters");
    1.0 / g.sample(rng)
}

pub fn chi_squared<R: Rng + ?Sized>(df: f64, rng: &mut R) -> f64 {
    ChiSquared::new(df).expect("positive degrees of freedom").sample(rng)
}

/// Wishart draw `W(df, scale)` via the Bartlett decomposition, given the
/// Cholesky factor of `scale`.
pub fn wishart_from_chol<R: Rng + ?Sized>(df: f64, scale_chol: &DMatrix<f64>, rng: &mut R) -> DMatrix<f64> {
    let q = scale_chol.nrows();
    let mut a = DMatrix::zeros(q, q);
    for i in 0..q {
        a[(i, i)] = chi_squared(df - i as f64, rng).sqrt();
        for j in 0..i {
            a[(i, j)] = std_normal(rng);
        }
    }
    let la = scale_chol * a;
    &la * la.transpose()
}

/// Inverse-Wishart draw `IW(df, scale)`: the inverse of `W(df, scale^{-1})`.
pub fn inverse_wishart<R: Rng + ?Sized>(df: f64, scale: &DMatrix<f64>, rng: &mut R) -> Result<DMatrix<f64>> {
    let s_inv = cholesky_jittered(scale, 10, "inverse-Wishart scale")?.inverse();
    let s_inv_chol = cholesky_jittered(&s_inv, 10, "inverse-Wishart scale inverse")?;
    for _ in 0..10 {
        let w = wishart_from_chol(df, &s_inv_chol.l(), rng);
        if let Some(c) = Cholesky::new(w) {
            let mut out = c.inverse();
            symmetrize_average(&mut out);
            return Ok(out);
        }
    }
    Err(Error::NotPositiveDefinite("inverse-Wishart draw".into()))
}

fn symmetrize_average(m: &mut DMatrix<f64>) {
    let p = m.nrows();
    for a in 0..p {
        for b in (a + 1)..p {
            let v = 0.5 * (m[(a, b)] + m[(b, a)]);
            m[(a, b)] = v;
            m[(b, a)] = v;
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[inline]
pub fn normal_logpdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * (LN_2PI + var.ln() + d * d / var)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn collinear_detection_names_the_dependent_column() {
        let labels: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let mut x = DesignMatrix::zeros(5, labels.clone());
        for i in 0..5 {
            let r = x.row_mut(i);
            r[0] = 1.0;
            r[1] = i as f64;
            r[2] = 2.0 + 3.0 * i as f64;
        }
        assert_eq!(collinear_columns(&x.gram(), &labels), vec!["c".to_string()]);
    }

    #[test]
    fn inverse_wishart_mean_matches_closed_form() {
        // E[IW(df, S)] = S / (df - q - 1)
        let mut rng = stream(11);
        let s = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let df = 12.0;
        let n = 20000;
        let mut acc = DMatrix::zeros(2, 2);
        for _ in 0..n {
            acc += inverse_wishart(df, &s, &mut rng).unwrap();
        }
        acc /= n as f64;
        let expect = &s / (df - 3.0);
        for i in 0..2 {
            for j in 0..2 {
                assert!((acc[(i, j)] - expect[(i, j)]).abs() < 0.01, "{acc} vs {expect}");
            }
        }
    }

    #[test]
    fn coefficient_draws_center_on_least_squares() {
        let mut rng = stream(5);
        let g = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let chol = cholesky(g.clone(), "g").unwrap();
        let xty = DVector::from_vec(vec![1.0, 2.0]);
        let mean = chol.solve(&xty);
        let n = 40000;
        let mut acc = DVector::zeros(2);
        let mut acc2 = DMatrix::zeros(2, 2);
        for _ in 0..n {
            let b = draw_coefficients(&chol, &xty, 0.5, &mut rng);
            let d = &b - &mean;
            acc += &b;
            acc2 += &d * d.transpose();
        }
        acc /= n as f64;
        acc2 /= n as f64;
        let cov = chol.inverse() * 0.5;
        assert!((acc - mean).norm() < 0.01);
        assert!((acc2 - cov).norm() < 0.01);
    }

    #[test]
    fn expit_is_stable_in_the_tails() {
        assert_eq!(expit(-1000.0), 0.0);
        assert_eq!(expit(1000.0), 1.0);
        assert!((expit(logit(0.8)) - 0.8).abs() < 1e-15);
    }
}
