use ndarray::{concatenate, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::Serialize;

use super::zeroshot::argmax;
use super::EvalError;

/// `10^(-6 + 11k/44)` for `k = 0..=44`. Integral exponents are computed
/// exactly so the endpoints are the literals `1e-6` and `1e5`.
pub fn lambda_grid() -> Vec<f64> {
    (0..=44)
        .map(|k| {
            if (11 * k) % 44 == 0 {
                let e: i32 = -6 + 11 * k / 44;
                let mag = 10f64.powi(e.abs());
                if e < 0 {
                    1.0 / mag
                } else {
                    mag
                }
            } else {
                10f64.powf(-6.0 + 11.0 * k as f64 / 44.0)
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRegModel {
    /// `d × C`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl LogRegModel {
    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Vec<usize> {
        let z = x.dot(&self.weights) + &self.bias;
        z.axis_iter(Axis(0)).map(|r| argmax(r.iter().copied())).collect()
    }

    pub fn accuracy(&self, x: ArrayView2<'_, f64>, y: &[usize]) -> f64 {
        let correct = self.predict(x).iter().zip(y).filter(|(p, l)| p == l).count();
        correct as f64 / y.len() as f64
    }

    fn from_flat(theta: &[f64], d: usize, c: usize) -> Self {
        Self {
            weights: Array2::from_shape_vec((d, c), theta[..d * c].to_vec()).expect("sized"),
            bias: Array1::from_vec(theta[d * c..].to_vec()),
        }
    }
}

/// Mean multinomial cross-entropy plus `lambda/2 * ||W||²` (bias not
/// penalized) and its gradient. `theta` is `W` row-major followed by `b`.
pub fn logreg_objective(
    x: ArrayView2<'_, f64>,
    y: &[usize],
    n_classes: usize,
    lambda: f64,
    theta: &[f64],
) -> (f64, Vec<f64>) {
    let (n, d) = x.dim();
    let c = n_classes;
    let w = ArrayView2::from_shape((d, c), &theta[..d * c]).expect("sized");
    let b = ArrayView1::from(&theta[d * c..]);
    let mut z = x.dot(&w) + b;
    let mut loss = 0.0;
    for (mut row, &label) in z.axis_iter_mut(Axis(0)).zip(y) {
        let m = row.fold(f64::NEG_INFINITY, |a, &v| a.max(v));
        row.mapv_inplace(|v| (v - m).exp());
        let sum = row.sum();
        loss += sum.ln() + m - (row[label].ln() + m);
        row.mapv_inplace(|v| v / sum);
        row[label] -= 1.0;
    }
    // z now holds P - Y.
    let inv_n = 1.0 / n as f64;
    let gw = x.t().dot(&z) * inv_n + &(&w * lambda);
    let gb = z.sum_axis(Axis(0)) * inv_n;
    let penalty = 0.5 * lambda * w.iter().map(|v| v * v).sum::<f64>();
    let mut grad = gw.into_raw_vec_and_offset().0;
    grad.extend(gb.iter());
    (loss * inv_n + penalty, grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LbfgsOptions {
    pub max_iter: usize,
    pub history: usize,
    /// Stop once the gradient infinity norm drops below this.
    pub grad_tol: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            history: 10,
            grad_tol: 1e-7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsResult {
    pub model: LogRegModel,
    pub iterations: usize,
    pub converged: bool,
    /// Set when the line search could not find an acceptable step; the model
    /// is the best iterate reached.
    pub line_search_failed: bool,
    /// Objective at the start and after every accepted step.
    pub objective_trace: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(x: &[f64], alpha: f64, p: &[f64]) -> Vec<f64> {
    x.iter().zip(p).map(|(a, b)| a + alpha * b).collect()
}

struct Point {
    alpha: f64,
    f: f64,
    g: Vec<f64>,
    dphi: f64,
}

const C1: f64 = 1e-4;
const C2: f64 = 0.9;

type Objective<'a> = dyn Fn(&[f64]) -> (f64, Vec<f64>) + 'a;

/// Strong-Wolfe line search (bracketing then zoom). Returns an accepted point
/// with `f < f0`, or `None`.
fn line_search(eval: &Objective<'_>, x: &[f64], p: &[f64], f0: f64, dphi0: f64, alpha0: f64) -> Option<Point> {
    let at = |alpha: f64| {
        let (f, g) = eval(&axpy(x, alpha, p));
        let dphi = dot(&g, p);
        Point { alpha, f, g, dphi }
    };
    let armijo = |pt: &Point| pt.f <= f0 + C1 * pt.alpha * dphi0;
    let curvature = |pt: &Point| pt.dphi.abs() <= -C2 * dphi0;

    let zoom = |mut lo: Point, mut hi_alpha: f64| -> Option<Point> {
        for _ in 0..40 {
            let a = 0.5 * (lo.alpha + hi_alpha);
            if (a - lo.alpha).abs() < 1e-16 * a.abs().max(1.0) {
                break;
            }
            let pt = at(a);
            if !pt.f.is_finite() || !armijo(&pt) || pt.f >= lo.f {
                hi_alpha = a;
            } else {
                if curvature(&pt) {
                    return Some(pt);
                }
                if pt.dphi * (hi_alpha - lo.alpha) >= 0.0 {
                    hi_alpha = lo.alpha;
                }
                lo = pt;
            }
        }
        // Wolfe curvature not met; keep the sufficient-decrease point if any.
        (lo.alpha > 0.0 && lo.f < f0).then_some(lo)
    };

    let origin = Point {
        alpha: 0.0,
        f: f0,
        g: Vec::new(),
        dphi: dphi0,
    };
    let mut prev = origin;
    let mut alpha = alpha0;
    for i in 0..30 {
        let pt = at(alpha);
        if !pt.f.is_finite() || !armijo(&pt) || (i > 0 && pt.f >= prev.f) {
            return zoom(prev, alpha);
        }
        if curvature(&pt) {
            return Some(pt);
        }
        if pt.dphi >= 0.0 {
            let hi = prev.alpha;
            return zoom(pt, hi);
        }
        prev = pt;
        alpha *= 2.0;
    }
    (prev.alpha > 0.0).then_some(prev)
}

/// Multinomial logistic regression fitted by L-BFGS (two-loop recursion,
/// strong-Wolfe line search) starting from zero weights.
pub fn lbfgs_logreg(
    x: ArrayView2<'_, f64>,
    y: &[usize],
    n_classes: usize,
    lambda: f64,
    opts: &LbfgsOptions,
) -> Result<LbfgsResult, EvalError> {
    let (n, d) = x.dim();
    if n != y.len() {
        return Err(EvalError::ShapeMismatch(format!("{n} rows vs {} labels", y.len())));
    }
    if n_classes < 2 || n < n_classes {
        return Err(EvalError::InvalidArgument(format!("need n >= C >= 2, got n={n}, C={n_classes}")));
    }
    if let Some(l) = y.iter().find(|&&l| l >= n_classes) {
        return Err(EvalError::ShapeMismatch(format!("label {l} out of range for {n_classes} classes")));
    }
    if !lambda.is_finite() || lambda < 0.0 || x.iter().any(|v| !v.is_finite()) {
        return Err(EvalError::InvalidArgument("lambda and features must be finite, lambda >= 0".into()));
    }
    let eval = |theta: &[f64]| logreg_objective(x, y, n_classes, lambda, theta);
    let mut theta = vec![0.0; d * n_classes + n_classes];
    let (mut f, mut g) = eval(&theta);
    let mut trace = vec![f];
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    let mut failed = false;
    let inf_norm = |v: &[f64]| v.iter().fold(0.0f64, |a, b| a.max(b.abs()));

    while iterations < opts.max_iter {
        if inf_norm(&g) < opts.grad_tol {
            converged = true;
            break;
        }
        // Two-loop recursion.
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(s_hist.len());
        for (s, yv) in s_hist.iter().zip(&y_hist).rev() {
            let rho = 1.0 / dot(yv, s);
            let a = rho * dot(s, &q);
            q = axpy(&q, -a, yv);
            alphas.push((a, rho));
        }
        if let (Some(s), Some(yv)) = (s_hist.last(), y_hist.last()) {
            let gamma = dot(s, yv) / dot(yv, yv);
            q.iter_mut().for_each(|v| *v *= gamma);
        }
        for ((s, yv), (a, rho)) in s_hist.iter().zip(&y_hist).zip(alphas.into_iter().rev()) {
            let b = rho * dot(yv, &q);
            q = axpy(&q, a - b, s);
        }
        let mut p: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut dphi0 = dot(&g, &p);
        if dphi0.is_nan() || dphi0 >= 0.0 {
            s_hist.clear();
            y_hist.clear();
            p = g.iter().map(|v| -v).collect();
            dphi0 = dot(&g, &p);
        }
        let alpha0 = if s_hist.is_empty() {
            (1.0 / g.iter().map(|v| v.abs()).sum::<f64>()).min(1.0)
        } else {
            1.0
        };
        let Some(pt) = line_search(&eval, &theta, &p, f, dphi0, alpha0) else {
            failed = true;
            log::debug!("line search failed at iteration {iterations}; returning best iterate");
            break;
        };
        assert!(pt.f <= f, "objective increased across an accepted step");
        let next = axpy(&theta, pt.alpha, &p);
        let s: Vec<f64> = next.iter().zip(&theta).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = pt.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        if dot(&s, &yv) > 1e-12 * dot(&yv, &yv).max(1e-300) {
            s_hist.push(s);
            y_hist.push(yv);
            if s_hist.len() > opts.history {
                s_hist.remove(0);
                y_hist.remove(0);
            }
        }
        theta = next;
        f = pt.f;
        g = pt.g;
        trace.push(f);
        iterations += 1;
    }
    if !converged && inf_norm(&g) < opts.grad_tol {
        converged = true;
    }
    Ok(LbfgsResult {
        model: LogRegModel::from_flat(&theta, d, n_classes),
        iterations,
        converged,
        line_search_failed: failed,
        objective_trace: trace,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct Split<'a> {
    pub x: ArrayView2<'a, f64>,
    pub y: &'a [usize],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeResult {
    pub best_lambda: f64,
    pub val_acc: f64,
    pub test_acc: f64,
    /// `(lambda, validation accuracy)` in grid order.
    pub sweep_table: Vec<(f64, f64)>,
}

/// Fits one probe per grid value on `train`, picks the best validation
/// accuracy (ties to the smaller lambda), refits on train + val and scores
/// `test`.
pub fn linear_probe_sweep(
    train: Split<'_>,
    val: Split<'_>,
    test: Split<'_>,
    grid: &[f64],
    n_classes: usize,
    opts: &LbfgsOptions,
) -> Result<ProbeResult, EvalError> {
    if grid.is_empty() {
        return Err(EvalError::InvalidArgument("empty lambda grid".into()));
    }
    let sweep_table = grid
        .par_iter()
        .map(|&lambda| {
            let fit = lbfgs_logreg(train.x, train.y, n_classes, lambda, opts)?;
            Ok((lambda, fit.model.accuracy(val.x, val.y)))
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    let (best_lambda, val_acc) = sweep_table
        .iter()
        .copied()
        .reduce(|best, cur| {
            if cur.1 > best.1 || (cur.1 == best.1 && cur.0 < best.0) {
                cur
            } else {
                best
            }
        })
        .expect("non-empty grid");
    let x = concatenate(Axis(0), &[train.x, val.x]).map_err(|e| EvalError::ShapeMismatch(e.to_string()))?;
    let y: Vec<usize> = train.y.iter().chain(val.y).copied().collect();
    let fit = lbfgs_logreg(x.view(), &y, n_classes, best_lambda, opts)?;
    Ok(ProbeResult {
        best_lambda,
        val_acc,
        test_acc: fit.model.accuracy(test.x, test.y),
        sweep_table,
    })
}
