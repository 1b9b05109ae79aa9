//! Small unconstrained minimizers for the variance-ratio search.

pub(crate) struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub converged: bool,
}

pub(crate) fn fd_gradient(f: &impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        xp[i] = x[i] + h;
        let fp = f(&xp);
        xp[i] = x[i] - h;
        let fm = f(&xp);
        xp[i] = x[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// BFGS with a finite-difference gradient and backtracking line search.
pub(crate) fn bfgs(f: &impl Fn(&[f64]) -> f64, x0: Vec<f64>, max_iter: usize) -> Minimum {
    let d = x0.len();
    let mut x = x0;
    let mut fx = f(&x);
    if d == 0 {
        return Minimum { x, f: fx, converged: true };
    }
    let h = 1e-5;
    let mut g = fd_gradient(f, &x, h);
    let mut hinv: Vec<f64> = (0..d * d).map(|k| if k % (d + 1) == 0 { 1.0 } else { 0.0 }).collect();
    for _ in 0..max_iter {
        if norm(&g) < 1e-6 {
            return Minimum { x, f: fx, converged: true };
        }
        let mut dir: Vec<f64> = (0..d).map(|i| -(0..d).map(|j| hinv[i * d + j] * g[j]).sum::<f64>()).collect();
        let mut slope: f64 = dir.iter().zip(&g).map(|(a, b)| a * b).sum();
        if slope >= 0.0 {
            dir = g.iter().map(|v| -v).collect();
            slope = -norm(&g).powi(2);
            hinv.iter_mut().enumerate().for_each(|(k, v)| *v = if k % (d + 1) == 0 { 1.0 } else { 0.0 });
        }
        // cap the step so one iteration moves at most 5 log-units
        let mut t = (5.0 / norm(&dir)).min(1.0);
        let mut accepted = None;
        for _ in 0..60 {
            let xn: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + t * b).collect();
            let fnew = f(&xn);
            if fnew.is_finite() && fnew <= fx + 1e-4 * t * slope {
                accepted = Some((xn, fnew));
                break;
            }
            t *= 0.5;
        }
        let Some((xn, fnew)) = accepted else {
            return Minimum { x, f: fx, converged: false };
        };
        let gn = fd_gradient(f, &xn, h);
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let step = norm(&s);
        x = xn;
        let df = fx - fnew;
        fx = fnew;
        g = gn;
        if sy > 1e-12 {
            let hy: Vec<f64> = (0..d).map(|i| (0..d).map(|j| hinv[i * d + j] * y[j]).sum()).collect();
            let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
            for i in 0..d {
                for j in 0..d {
                    hinv[i * d + j] += (sy + yhy) * s[i] * s[j] / (sy * sy) - (hy[i] * s[j] + s[i] * hy[j]) / sy;
                }
            }
        }
        if step < 1e-10 && df.abs() < 1e-12 {
            return Minimum { x, f: fx, converged: norm(&g) < 1e-6 };
        }
    }
    let converged = norm(&g) < 1e-6;
    Minimum { x, f: fx, converged }
}

/// Nelder-Mead simplex. Converges when the simplex diameter falls below
/// `xtol` and the spread of function values below `ftol`.
pub(crate) fn nelder_mead(f: &impl Fn(&[f64]) -> f64, x0: Vec<f64>, step: f64, xtol: f64, max_iter: usize) -> Minimum {
    let d = x0.len();
    if d == 0 {
        let fx = f(&x0);
        return Minimum { x: x0, f: fx, converged: true };
    }
    let mut pts: Vec<Vec<f64>> = vec![x0.clone()];
    for i in 0..d {
        let mut p = x0.clone();
        p[i] += step;
        pts.push(p);
    }
    let mut vals: Vec<f64> = pts.iter().map(|p| f(p)).collect();
    for _ in 0..max_iter {
        let mut order: Vec<usize> = (0..=d).collect();
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        pts = order.iter().map(|&i| pts[i].clone()).collect();
        vals = order.iter().map(|&i| vals[i]).collect();

        let diameter = pts[1..]
            .iter()
            .map(|p| p.iter().zip(&pts[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if diameter < xtol {
            return Minimum { x: pts[0].clone(), f: vals[0], converged: true };
        }
        let centroid: Vec<f64> = (0..d).map(|k| pts[..d].iter().map(|p| p[k]).sum::<f64>() / d as f64).collect();
        let along = |t: f64| -> Vec<f64> { (0..d).map(|k| centroid[k] + t * (pts[d][k] - centroid[k])).collect() };
        let xr = along(-1.0);
        let fr = f(&xr);
        if fr < vals[0] {
            let xe = along(-2.0);
            let fe = f(&xe);
            if fe < fr {
                pts[d] = xe;
                vals[d] = fe;
            } else {
                pts[d] = xr;
                vals[d] = fr;
            }
        } else if fr < vals[d - 1] {
            pts[d] = xr;
            vals[d] = fr;
        } else {
            let (xc, fc) = if fr < vals[d] {
                let xc = along(-0.5);
                let fc = f(&xc);
                (xc, fc)
            } else {
                let xc = along(0.5);
                let fc = f(&xc);
                (xc, fc)
            };
            if fc < vals[d].min(fr) {
                pts[d] = xc;
                vals[d] = fc;
            } else {
                for i in 1..=d {
                    pts[i] = (0..d).map(|k| pts[0][k] + 0.5 * (pts[i][k] - pts[0][k])).collect();
                    vals[i] = f(&pts[i]);
                }
            }
        }
    }
    let best = (0..=d).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap();
    Minimum { x: pts[best].clone(), f: vals[best], converged: false }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock_minimum() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let m = bfgs(&f, vec![-1.2, 1.0], 500);
        assert!((m.x[0] - 1.0).abs() < 1e-4 && (m.x[1] - 1.0).abs() < 1e-4, "{:?}", m.x);
        let p = nelder_mead(&f, m.x, 0.01, 1e-10, 2000);
        assert!(p.converged);
        assert!((p.x[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn one_dimensional_quadratic() {
        let f = |x: &[f64]| (x[0] - 3.0).powi(2) + 2.0;
        let m = bfgs(&f, vec![0.0], 100);
        assert!(m.converged && (m.x[0] - 3.0).abs() < 1e-6 && (m.f - 2.0).abs() < 1e-10);
    }
}
