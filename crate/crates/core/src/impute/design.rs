use nalgebra::{DMatrix, DVector};

use crate::linalg::{syr, symmetrize, DesignMatrix};

/// Design whose leading columns are constant across sampler iterations and
/// whose trailing columns change. The constant block's gram is cached, so
/// re-forming `X'X` costs `O(n * f * v)` instead of `O(n * (f + v)^2)`.
#[derive(Debug, Clone)]
pub(crate) struct PartitionedDesign {
    pub fixed: DesignMatrix,
    fixed_gram: DMatrix<f64>,
    pub var: DesignMatrix,
}

impl PartitionedDesign {
    pub fn new(fixed: DesignMatrix, var_labels: Vec<String>) -> Self {
        let fixed_gram = fixed.gram();
        let var = DesignMatrix::zeros(fixed.rows, var_labels);
        Self { fixed, fixed_gram, var }
    }

    pub fn rows(&self) -> usize {
        self.fixed.rows
    }

    pub fn n_fixed(&self) -> usize {
        self.fixed.cols()
    }

    pub fn cols(&self) -> usize {
        self.fixed.cols() + self.var.cols()
    }

    pub fn labels(&self) -> Vec<String> {
        self.fixed.labels.iter().chain(&self.var.labels).cloned().collect()
    }

    pub fn gram(&self) -> DMatrix<f64> {
        let f = self.fixed.cols();
        let v = self.var.cols();
        let p = f + v;
        let mut g = DMatrix::zeros(p, p);
        g.view_mut((0, 0), (f, f)).copy_from(&self.fixed_gram);
        if v == 0 {
            return g;
        }
        let mut vv = DMatrix::zeros(v, v);
        let mut cross = vec![0.0; f * v];
        for r in 0..self.rows() {
            let xf = self.fixed.row(r);
            let xv = self.var.row(r);
            syr(&mut vv, xv, 1.0);
            for (b, &vb) in xv.iter().enumerate() {
                if vb == 0.0 {
                    continue;
                }
                let c = &mut cross[b * f..(b + 1) * f];
                for (a, &fa) in xf.iter().enumerate() {
                    c[a] += fa * vb;
                }
            }
        }
        symmetrize(&mut vv);
        g.view_mut((f, f), (v, v)).copy_from(&vv);
        for b in 0..v {
            for a in 0..f {
                g[(a, f + b)] = cross[b * f + a];
                g[(f + b, a)] = cross[b * f + a];
            }
        }
        g
    }

    pub fn xty(&self, y: &[f64]) -> DVector<f64> {
        let f = self.fixed.cols();
        let mut out = DVector::zeros(self.cols());
        for (r, &yr) in y.iter().enumerate() {
            for (a, v) in self.fixed.row(r).iter().enumerate() {
                out[a] += v * yr;
            }
            for (b, v) in self.var.row(r).iter().enumerate() {
                out[f + b] += v * yr;
            }
        }
        out
    }

    pub fn row_dot(&self, r: usize, beta: &[f64]) -> f64 {
        let f = self.fixed.cols();
        crate::linalg::dot(self.fixed.row(r), &beta[..f]) + crate::linalg::dot(self.var.row(r), &beta[f..])
    }

    /// Fixed-block linear predictor for every row.
    pub fn fixed_eta(&self, beta: &[f64]) -> Vec<f64> {
        let f = self.fixed.cols();
        (0..self.rows()).map(|r| crate::linalg::dot(self.fixed.row(r), &beta[..f])).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partitioned_gram_matches_direct() {
        let mut fixed = DesignMatrix::zeros(5, vec!["a".into(), "b".into()]);
        for r in 0..5 {
            fixed.row_mut(r).copy_from_slice(&[1.0, r as f64 * 0.5 - 1.0]);
        }
        let mut d = PartitionedDesign::new(fixed, vec!["v".into(), "w".into()]);
        for r in 0..5 {
            d.var.row_mut(r).copy_from_slice(&[(r * r) as f64, if r % 2 == 0 { 0.0 } else { 2.0 }]);
        }
        let mut full = DesignMatrix::zeros(5, d.labels());
        for r in 0..5 {
            let row: Vec<f64> = d.fixed.row(r).iter().chain(d.var.row(r)).copied().collect();
            full.row_mut(r).copy_from_slice(&row);
        }
        assert!((d.gram() - full.gram()).norm() < 1e-12);
        let y = [1.0, -2.0, 0.5, 3.0, 0.0];
        let direct: Vec<f64> = (0..4).map(|k| (0..5).map(|r| full.get(r, k) * y[r]).sum()).collect();
        assert!(d.xty(&y).iter().zip(&direct).all(|(a, b)| (a - b).abs() < 1e-12));
    }
}
