//! Limited-memory BFGS with a strong-Wolfe line search.

use std::collections::VecDeque;

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsOptions {
    /// Number of curvature pairs kept.
    pub memory: usize,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
    /// Stop when the largest gradient component falls below this.
    pub grad_tol: f64,
    /// Stop when the largest step component falls below this.
    pub step_tol: f64,
    pub max_iter: usize,
    pub max_line_search: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        LbfgsOptions {
            memory: 10,
            c1: 1e-4,
            c2: 0.9,
            grad_tol: 1e-8,
            step_tol: 1e-12,
            max_iter: 200,
            max_line_search: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    GradientTolerance,
    StepTolerance,
    MaxIterations,
    LineSearchFailed,
}

/// One accepted step: `phi(alpha) = f(x + alpha d)` and its slope at both ends.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineStep {
    pub alpha: f64,
    pub f0: f64,
    pub slope0: f64,
    pub f: f64,
    pub slope: f64,
}

impl LineStep {
    pub fn satisfies_strong_wolfe(&self, c1: f64, c2: f64) -> bool {
        self.f <= self.f0 + c1 * self.alpha * self.slope0 && self.slope.abs() <= c2 * self.slope0.abs()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad_inf_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub reason: StopReason,
    pub steps: Vec<LineStep>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

struct Objective<'a, F: FnMut(&[f64], &mut [f64]) -> f64> {
    f: &'a mut F,
    evaluations: usize,
}

impl<F: FnMut(&[f64], &mut [f64]) -> f64> Objective<'_, F> {
    fn eval(&mut self, x: &[f64], g: &mut [f64]) -> f64 {
        self.evaluations += 1;
        (self.f)(x, g)
    }
}

/// Point on the search line with its value, gradient and directional slope.
#[derive(Clone)]
struct Probe {
    alpha: f64,
    f: f64,
    g: Vec<f64>,
    slope: f64,
}

fn probe<F: FnMut(&[f64], &mut [f64]) -> f64>(obj: &mut Objective<F>, x: &[f64], d: &[f64], alpha: f64) -> Probe {
    let xt: Vec<f64> = x.iter().zip(d).map(|(a, b)| a + alpha * b).collect();
    let mut g = vec![0.0; x.len()];
    let f = obj.eval(&xt, &mut g);
    let slope = dot(&g, d);
    Probe { alpha, f, g, slope }
}

/// Minimizer of the cubic matching values and slopes at `a` and `b`, or
/// `None` when it does not exist.
fn cubic_min(a: &Probe, b: &Probe) -> Option<f64> {
    let d1 = a.slope + b.slope - 3.0 * (a.f - b.f) / (a.alpha - b.alpha);
    let disc = d1 * d1 - a.slope * b.slope;
    if disc < 0.0 {
        return None;
    }
    let d2 = (b.alpha - a.alpha).signum() * disc.sqrt();
    let t = b.alpha - (b.alpha - a.alpha) * (b.slope + d2 - d1) / (b.slope - a.slope + 2.0 * d2);
    t.is_finite().then_some(t)
}

struct LineSearch<'o> {
    opts: &'o LbfgsOptions,
    f0: f64,
    slope0: f64,
}

impl LineSearch<'_> {
    fn armijo(&self, p: &Probe) -> bool {
        p.f.is_finite() && p.f <= self.f0 + self.opts.c1 * p.alpha * self.slope0
    }

    fn curvature(&self, p: &Probe) -> bool {
        p.slope.abs() <= -self.opts.c2 * self.slope0
    }

    fn zoom<F: FnMut(&[f64], &mut [f64]) -> f64>(
        &self,
        obj: &mut Objective<F>,
        x: &[f64],
        d: &[f64],
        mut lo: Probe,
        mut hi: Probe,
        budget: &mut usize,
    ) -> Option<Probe> {
        while *budget > 0 {
            *budget -= 1;
            let (a, b) = (lo.alpha.min(hi.alpha), lo.alpha.max(hi.alpha));
            let width = b - a;
            if width <= f64::EPSILON * b.max(1e-300) {
                return None;
            }
            let guard = 0.1 * width;
            let alpha = match (hi.f.is_finite(), cubic_min(&lo, &hi)) {
                (true, Some(t)) if t > a + guard && t < b - guard => t,
                _ => 0.5 * (a + b),
            };
            let p = probe(obj, x, d, alpha);
            if !self.armijo(&p) || p.f >= lo.f {
                hi = p;
            } else {
                if self.curvature(&p) {
                    return Some(p);
                }
                if p.slope * (hi.alpha - lo.alpha) >= 0.0 {
                    hi = lo;
                }
                lo = p;
            }
        }
        None
    }

    /// Strong-Wolfe step length along `d` starting from `alpha0`.
    fn search<F: FnMut(&[f64], &mut [f64]) -> f64>(
        &self,
        obj: &mut Objective<F>,
        x: &[f64],
        g0: &[f64],
        d: &[f64],
        alpha0: f64,
    ) -> Option<Probe> {
        let mut budget = self.opts.max_line_search;
        let mut prev = Probe {
            alpha: 0.0,
            f: self.f0,
            g: g0.to_vec(),
            slope: self.slope0,
        };
        let mut alpha = alpha0;
        let mut first = true;
        while budget > 0 {
            budget -= 1;
            let p = probe(obj, x, d, alpha);
            if !self.armijo(&p) || (!first && p.f >= prev.f) {
                return self.zoom(obj, x, d, prev, p, &mut budget);
            }
            if self.curvature(&p) {
                return Some(p);
            }
            if p.slope >= 0.0 {
                return self.zoom(obj, x, d, p, prev, &mut budget);
            }
            first = false;
            prev = p;
            alpha *= 2.0;
        }
        None
    }
}

/// Minimize a smooth function given as `f(x, grad_out) -> value`.
///
/// Each accepted step satisfies the strong Wolfe conditions. After the line
/// search finds such a step, the minimizer of the cubic through both ends of
/// the step is tried once and kept if it is also a strong-Wolfe point with a
/// lower value; on quadratics this makes every line search exact.
pub fn lbfgs_minimize<F>(mut f: F, x0: &[f64], opts: &LbfgsOptions) -> Result<LbfgsResult>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    if x0.is_empty() {
        return Err(invalid!("L-BFGS needs at least one variable"));
    }
    if opts.memory == 0 || !(0.0 < opts.c1 && opts.c1 < opts.c2 && opts.c2 < 1.0) {
        return Err(invalid!("L-BFGS options need memory >= 1 and 0 < c1 < c2 < 1"));
    }
    let mut obj = Objective {
        f: &mut f,
        evaluations: 0,
    };
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut fx = obj.eval(&x, &mut g);
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!("objective is not finite at the starting point (f = {fx})")));
    }
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut steps = Vec::new();
    let mut iterations = 0;
    let reason = loop {
        if inf_norm(&g) < opts.grad_tol {
            break StopReason::GradientTolerance;
        }
        if iterations >= opts.max_iter {
            break StopReason::MaxIterations;
        }
        // two-loop recursion
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(pairs.len());
        for (s, y, rho) in pairs.iter().rev() {
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
        if let Some((s, y, _)) = pairs.back() {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|v| *v *= gamma);
        }
        for ((s, y, rho), a) in pairs.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        let mut d: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope0 = dot(&g, &d);
        let mut alpha0 = 1.0;
        if !(slope0 < 0.0) || pairs.is_empty() {
            pairs.clear();
            d = g.iter().map(|v| -v).collect();
            slope0 = dot(&g, &d);
            alpha0 = (1.0 / inf_norm(&g).max(dot(&g, &g).sqrt())).min(1.0);
        }
        let ls = LineSearch { opts, f0: fx, slope0 };
        let Some(mut step) = ls.search(&mut obj, &x, &g, &d, alpha0) else {
            break StopReason::LineSearchFailed;
        };
        if step.slope.abs() > 1e-12 * slope0.abs() {
            let start = Probe {
                alpha: 0.0,
                f: fx,
                g: g.clone(),
                slope: slope0,
            };
            if let Some(t) = cubic_min(&start, &step).filter(|t| *t > 0.0 && *t != step.alpha) {
                let refined = probe(&mut obj, &x, &d, t);
                if ls.armijo(&refined) && ls.curvature(&refined) && refined.f <= step.f {
                    step = refined;
                }
            }
        }
        steps.push(LineStep {
            alpha: step.alpha,
            f0: fx,
            slope0,
            f: step.f,
            slope: step.slope,
        });
        let s: Vec<f64> = d.iter().map(|v| step.alpha * v).collect();
        let y: Vec<f64> = step.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        for (xi, si) in x.iter_mut().zip(&s) {
            *xi += si;
        }
        fx = step.f;
        g = step.g;
        iterations += 1;
        let sy = dot(&s, &y);
        if sy > f64::EPSILON * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            if pairs.len() == opts.memory {
                pairs.pop_front();
            }
            pairs.push_back((s.clone(), y, 1.0 / sy));
        }
        if inf_norm(&s) < opts.step_tol {
            break StopReason::StepTolerance;
        }
    };
    Ok(LbfgsResult {
        grad_inf_norm: inf_norm(&g),
        converged: matches!(reason, StopReason::GradientTolerance | StopReason::StepTolerance),
        x,
        f: fx,
        iterations,
        evaluations: obj.evaluations,
        reason,
        steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rosenbrock(x: &[f64], g: &mut [f64]) -> f64 {
        let (a, b) = (x[0], x[1]);
        g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
        g[1] = 200.0 * (b - a * a);
        (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
    }

    #[test]
    fn one_dimensional_quadratic() {
        let r = lbfgs_minimize(
            |x, g| {
                g[0] = 2.0 * (x[0] - 3.0);
                (x[0] - 3.0).powi(2)
            },
            &[0.0],
            &LbfgsOptions::default(),
        )
        .unwrap();
        assert!((r.x[0] - 3.0).abs() < 1e-8);
        assert!(r.iterations <= 3, "{}", r.iterations);
        assert!(r.converged);
    }

    #[test]
    fn rosenbrock_from_standard_start() {
        let opts = LbfgsOptions::default();
        let r = lbfgs_minimize(rosenbrock, &[-1.2, 1.0], &opts).unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] - 1.0).abs() < 1e-6, "{:?}", r.x);
        assert!(r.iterations <= 200);
        assert!(r.steps.iter().all(|s| s.satisfies_strong_wolfe(opts.c1, opts.c2)));
    }

    #[test]
    fn non_finite_start_is_an_error() {
        let r = lbfgs_minimize(|_, _| f64::NAN, &[0.0], &LbfgsOptions::default());
        assert!(matches!(r, Err(Error::Numerical(_))));
    }

    #[test]
    fn line_search_backs_off_from_infinite_region() {
        // finite only for x < 1
        let r = lbfgs_minimize(
            |x, g| {
                if x[0] >= 1.0 {
                    g[0] = f64::NAN;
                    return f64::INFINITY;
                }
                g[0] = 1.0 / (1.0 - x[0]) + 2.0 * x[0];
                -(1.0 - x[0]).ln() + x[0] * x[0]
            },
            &[-3.0],
            &LbfgsOptions::default(),
        )
        .unwrap();
        let expect = (2.0 - 12f64.sqrt()) / 4.0;
        assert!((r.x[0] - expect).abs() < 1e-8 && r.converged, "{r:?}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn convex_quadratic_terminates_in_dim_plus_one(
            dim in 1usize..=6,
            seed in any::<u64>(),
        ) {
            use rand::Rng;
            let mut rng = crate::rng::stream_rng(seed, 0);
            // A = M^T M + I, well conditioned
            let m: Vec<f64> = (0..dim * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut a = vec![0.0; dim * dim];
            for i in 0..dim {
                for j in 0..dim {
                    a[i * dim + j] = (0..dim).map(|k| m[k * dim + i] * m[k * dim + j]).sum::<f64>() + if i == j { 1.0 } else { 0.0 };
                }
            }
            let xstar: Vec<f64> = (0..dim).map(|_| rng.random_range(-5.0..5.0)).collect();
            let f = |x: &[f64], g: &mut [f64]| {
                let e: Vec<f64> = x.iter().zip(&xstar).map(|(a, b)| a - b).collect();
                let mut val = 0.0;
                for i in 0..dim {
                    g[i] = (0..dim).map(|j| a[i * dim + j] * e[j]).sum();
                    val += 0.5 * e[i] * g[i];
                }
                val
            };
            let r = lbfgs_minimize(f, &vec![0.0; dim], &LbfgsOptions::default()).unwrap();
            for (x, s) in r.x.iter().zip(&xstar) {
                prop_assert!((x - s).abs() < 1e-8, "{:?} vs {:?}", r.x, xstar);
            }
            prop_assert!(r.iterations <= dim + 1, "{} iterations in dim {}", r.iterations, dim);
        }
    }
}
