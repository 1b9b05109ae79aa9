//! Gibbs updates for a normal linear model with nested random intercepts
//! (school, child within school), either level optional.

use std::collections::BTreeMap;

use rand::Rng;

use crate::data::HierIndex;
use crate::linalg::{inv_gamma, std_normal};

/// Row to child to school nesting over a subset of data rows, with local
/// 0-based numbering.
#[derive(Debug, Clone)]
pub(crate) struct Nesting {
    pub child_of: Vec<usize>,
    pub school_of: Vec<usize>,
    pub child_rows: Vec<Vec<usize>>,
    pub school_of_child: Vec<usize>,
    pub school_children: Vec<Vec<usize>>,
}

impl Nesting {
    /// `rows` selects (and orders) the data rows; local row `k` is `rows[k]`.
    pub fn new(index: &[HierIndex], rows: &[usize]) -> Self {
        let mut schools: BTreeMap<u32, usize> = BTreeMap::new();
        let mut children: BTreeMap<(u32, u32), usize> = BTreeMap::new();
        for &r in rows {
            let h = &index[r];
            let ns = schools.len();
            schools.entry(h.school).or_insert(ns);
            let nc = children.len();
            children.entry(h.child_key()).or_insert(nc);
        }
        let mut child_of = Vec::with_capacity(rows.len());
        let mut school_of = Vec::with_capacity(rows.len());
        let mut child_rows = vec![Vec::new(); children.len()];
        let mut school_of_child = vec![0; children.len()];
        for (k, &r) in rows.iter().enumerate() {
            let h = &index[r];
            let c = children[&h.child_key()];
            let s = schools[&h.school];
            child_of.push(c);
            school_of.push(s);
            child_rows[c].push(k);
            school_of_child[c] = s;
        }
        let mut school_children = vec![Vec::new(); schools.len()];
        for (c, &s) in school_of_child.iter().enumerate() {
            school_children[s].push(c);
        }
        Self { child_of, school_of, child_rows, school_of_child, school_children }
    }

    pub fn all(index: &[HierIndex]) -> Self {
        Self::new(index, &(0..index.len()).collect::<Vec<_>>())
    }

    #[cfg(test)]
    pub fn n_rows(&self) -> usize {
        self.child_of.len()
    }

    pub fn n_children(&self) -> usize {
        self.child_rows.len()
    }

    pub fn n_schools(&self) -> usize {
        self.school_children.len()
    }
}

/// Random intercepts and variances of one model. Variances carry
/// inverse-gamma priors `IG(prior.0, prior.1)` (shape, rate).
#[derive(Debug, Clone)]
pub(crate) struct RandomEffects {
    pub school: Option<Vec<f64>>,
    pub child: Option<Vec<f64>>,
    pub tau_school: f64,
    pub tau_child: f64,
    pub sigma2: f64,
    pub prior: (f64, f64),
}

impl RandomEffects {
    pub fn new(nest: &Nesting, school: bool, child: bool, prior: (f64, f64), init_var: f64) -> Self {
        Self {
            school: school.then(|| vec![0.0; nest.n_schools()]),
            child: child.then(|| vec![0.0; nest.n_children()]),
            tau_school: init_var,
            tau_child: init_var,
            sigma2: init_var,
            prior,
        }
    }

    /// Sum of random intercepts for local row `k`.
    #[inline]
    pub fn offset(&self, nest: &Nesting, k: usize) -> f64 {
        let c = nest.child_of[k];
        self.school.as_ref().map_or(0.0, |a| a[nest.school_of[k]]) + self.child.as_ref().map_or(0.0, |b| b[c])
    }

    /// Draw the intercepts given fixed-part residuals `resid = y - X beta`.
    /// With both levels present the school effects are drawn with the child
    /// effects integrated out, then the child effects given the school's.
    pub fn draw_effects<R: Rng + ?Sized>(&mut self, nest: &Nesting, resid: &[f64], rng: &mut R) {
        self.draw_effects_with(nest, resid, None, rng)
    }

    /// As [`Self::draw_effects`], with additional Gaussian information on each
    /// child effect given as (precision, precision * mean) pairs.
    pub fn draw_effects_with<R: Rng + ?Sized>(
        &mut self,
        nest: &Nesting,
        resid: &[f64],
        child_extra: Option<&[(f64, f64)]>,
        rng: &mut R,
    ) {
        let s2 = self.sigma2;
        let child_sums: Vec<(f64, f64)> =
            nest.child_rows.iter().map(|rows| (rows.len() as f64, rows.iter().map(|&k| resid[k]).sum())).collect();
        let extra = |c: usize| child_extra.map_or((0.0, 0.0), |e| e[c]);
        match (&mut self.school, &mut self.child) {
            (Some(a), Some(b)) => {
                let (t3, t2) = (self.tau_school, self.tau_child);
                for (s, kids) in nest.school_children.iter().enumerate() {
                    let mut prec = 1.0 / t3;
                    let mut lin = 0.0;
                    for &c in kids {
                        let (n, sum) = child_sums[c];
                        let (pe, le) = extra(c);
                        let pc = 1.0 / t2 + n / s2 + pe;
                        prec += n / s2 - (n / s2) * (n / s2) / pc;
                        lin += sum / s2 - (n / s2) * (sum / s2 + le) / pc;
                    }
                    a[s] = lin / prec + std_normal(rng) / prec.sqrt();
                }
                for (c, &(n, sum)) in child_sums.iter().enumerate() {
                    let (pe, le) = extra(c);
                    let prec = 1.0 / t2 + n / s2 + pe;
                    let mean = ((sum - n * a[nest.school_of_child[c]]) / s2 + le) / prec;
                    b[c] = mean + std_normal(rng) / prec.sqrt();
                }
            }
            (Some(a), None) => {
                let t3 = self.tau_school;
                for (s, kids) in nest.school_children.iter().enumerate() {
                    let (n, sum) = kids.iter().fold((0.0, 0.0), |acc, &c| (acc.0 + child_sums[c].0, acc.1 + child_sums[c].1));
                    let prec = 1.0 / t3 + n / s2;
                    a[s] = sum / s2 / prec + std_normal(rng) / prec.sqrt();
                }
            }
            (None, Some(b)) => {
                let t2 = self.tau_child;
                for (c, &(n, sum)) in child_sums.iter().enumerate() {
                    let (pe, le) = extra(c);
                    let prec = 1.0 / t2 + n / s2 + pe;
                    b[c] = (sum / s2 + le) / prec + std_normal(rng) / prec.sqrt();
                }
            }
            (None, None) => {}
        }
    }

    /// Draw the variances given the intercepts and fixed-part residuals.
    pub fn draw_variances<R: Rng + ?Sized>(&mut self, nest: &Nesting, resid: &[f64], rng: &mut R) {
        let (a0, b0) = self.prior;
        if let Some(a) = &self.school {
            let ss: f64 = a.iter().map(|v| v * v).sum();
            self.tau_school = inv_gamma(a0 + a.len() as f64 / 2.0, b0 + ss / 2.0, rng);
        }
        if let Some(b) = &self.child {
            let ss: f64 = b.iter().map(|v| v * v).sum();
            self.tau_child = inv_gamma(a0 + b.len() as f64 / 2.0, b0 + ss / 2.0, rng);
        }
        let rss: f64 = resid.iter().enumerate().map(|(k, r)| (r - self.offset(nest, k)).powi(2)).sum();
        self.sigma2 = inv_gamma(a0 + resid.len() as f64 / 2.0, b0 + rss / 2.0, rng);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn index(schools: u32, kids: u32, waves: u8) -> Vec<HierIndex> {
        let mut out = Vec::new();
        for s in 1..=schools {
            for c in 1..=kids {
                for w in 1..=waves {
                    out.push(HierIndex { school: s, child: c, wave: Some(w) });
                }
            }
        }
        out
    }

    #[test]
    fn nesting_on_row_subset() {
        let idx = index(2, 2, 2);
        let n = Nesting::new(&idx, &[1, 2, 3, 7]);
        assert_eq!(n.n_rows(), 4);
        assert_eq!(n.n_children(), 3);
        assert_eq!(n.n_schools(), 2);
        assert_eq!(n.child_rows[1], vec![1, 2]);
        assert_eq!(n.school_children[1], vec![2]);
    }

    /// Draws of a single school effect match the conjugate normal posterior
    /// computed by brute-force marginalisation over the child effects.
    #[test]
    fn collapsed_school_draw_matches_conjugate_posterior() {
        let idx = index(1, 3, 2);
        let nest = Nesting::all(&idx);
        let resid = [0.5, 1.5, -0.2, 0.4, 2.0, 1.0];
        let mut re = RandomEffects::new(&nest, true, true, (1.0, 1.0), 1.0);
        re.tau_school = 0.7;
        re.tau_child = 0.3;
        re.sigma2 = 0.5;
        // Dense oracle: y = 1 a + Z b + e, a ~ N(0, t3). Marginal of y given a
        // has covariance V = t2 ZZ' + s2 I; posterior precision 1/t3 + 1'V^-1 1.
        let n = 6;
        let mut v = nalgebra::DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                if i / 2 == j / 2 {
                    v[(i, j)] += 0.3;
                }
                if i == j {
                    v[(i, j)] += 0.5;
                }
            }
        }
        let vinv = v.try_inverse().unwrap();
        let ones = nalgebra::DVector::from_element(n, 1.0);
        let y = nalgebra::DVector::from_column_slice(&resid);
        let prec = 1.0 / 0.7 + (ones.transpose() * &vinv * &ones)[0];
        let mean = (ones.transpose() * &vinv * &y)[0] / prec;

        let mut rng = stream(3);
        let draws: Vec<f64> = (0..40_000)
            .map(|_| {
                re.draw_effects(&nest, &resid, &mut rng);
                re.school.as_ref().unwrap()[0]
            })
            .collect();
        let m = crate::scalar::mean(&draws);
        let var = crate::scalar::sample_variance(&draws);
        let se = (1.0 / prec / draws.len() as f64).sqrt();
        assert!((m - mean).abs() < 4.0 * se, "{m} vs {mean}");
        assert!((var * prec - 1.0).abs() < 0.03, "{var} vs {}", 1.0 / prec);
    }

    #[test]
    fn variance_draws_center_on_conjugate_mean() {
        let idx = index(1, 200, 2);
        let nest = Nesting::all(&idx);
        let mut rng = stream(5);
        let resid: Vec<f64> = (0..400).map(|_| 2.0 * std_normal(&mut rng)).collect();
        let rss: f64 = resid.iter().map(|r| r * r).sum();
        let mut re = RandomEffects::new(&nest, false, false, (0.001, 0.001), 1.0);
        let draws: Vec<f64> = (0..5000)
            .map(|_| {
                re.draw_variances(&nest, &resid, &mut rng);
                re.sigma2
            })
            .collect();
        let expect = (0.001 + rss / 2.0) / (0.001 + 200.0 - 1.0);
        assert!((crate::scalar::mean(&draws) / expect - 1.0).abs() < 0.01);
    }

    /// Extra child information behaves like one more observation of the
    /// child effect alone; the collapsed school draw must account for it.
    #[test]
    fn child_information_acts_as_pseudo_observation() {
        let idx = index(1, 2, 2);
        let nest = Nesting::all(&idx);
        let resid = [1.0, 0.6, -0.3, 0.1];
        let (t3, t2, s2, pe, le) = (0.5, 0.4, 0.3, 2.0, 1.4);
        let mut re = RandomEffects::new(&nest, true, true, (1.0, 1.0), 1.0);
        re.tau_school = t3;
        re.tau_child = t2;
        re.sigma2 = s2;
        let n = 5;
        let child = [0, 0, 1, 1, 0];
        let mut v = nalgebra::DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                if child[i] == child[j] {
                    v[(i, j)] += t2;
                }
            }
            v[(i, i)] += if i < 4 { s2 } else { 1.0 / pe };
        }
        let vinv = v.try_inverse().unwrap();
        let x = nalgebra::DVector::from_column_slice(&[1.0, 1.0, 1.0, 1.0, 0.0]);
        let y = nalgebra::DVector::from_column_slice(&[1.0, 0.6, -0.3, 0.1, le / pe]);
        let prec = 1.0 / t3 + (x.transpose() * &vinv * &x)[0];
        let mean = (x.transpose() * &vinv * &y)[0] / prec;

        let extra = [(pe, le), (0.0, 0.0)];
        let mut rng = stream(8);
        let draws: Vec<f64> = (0..40_000)
            .map(|_| {
                re.draw_effects_with(&nest, &resid, Some(&extra), &mut rng);
                re.school.as_ref().unwrap()[0]
            })
            .collect();
        let m = crate::scalar::mean(&draws);
        let se = (1.0 / prec / draws.len() as f64).sqrt();
        assert!((m - mean).abs() < 4.0 * se, "{m} vs {mean}");
        assert!((crate::scalar::sample_variance(&draws) * prec - 1.0).abs() < 0.03);
    }
}
