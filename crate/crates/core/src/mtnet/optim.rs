//! Full-batch optimizers over a flat parameter vector.
//!
//! L-BFGS uses the two-loop recursion with a strong-Wolfe line search
//! (bracketing + zoom with safeguarded cubic interpolation). If the line
//! search cannot satisfy the Wolfe conditions the step falls back to
//! steepest descent with Armijo backtracking and the curvature memory is
//! cleared.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

/// A differentiable scalar function of a parameter vector.
pub trait Objective {
    fn dim(&self) -> usize;
    /// Returns f(x) and writes ∇f(x) into `grad`.
    fn eval(&self, x: &[f64], grad: &mut [f64]) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LbfgsConfig {
    pub memory: usize,
    pub max_iterations: usize,
    pub grad_tol: f64,
    pub rel_loss_tol: f64,
    pub c1: f64,
    pub c2: f64,
    /// Function evaluations allowed per line search.
    pub max_linesearch: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        LbfgsConfig {
            memory: 10,
            max_iterations: 14_500,
            grad_tol: 1e-6,
            rel_loss_tol: 1e-10,
            c1: 1e-4,
            c2: 0.9,
            max_linesearch: 25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub max_iterations: usize,
    pub grad_tol: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            max_iterations: 14_500,
            grad_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxIterations,
    GradientTolerance,
    RelativeLossChange,
    /// Neither the Wolfe search nor the backtracking fallback found a
    /// decrease; `x` is the last accepted iterate.
    NoDescent,
}

/// What happened during a run. `losses[0]` is the loss at the start point,
/// followed by one entry per accepted iterate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimTrace {
    pub losses: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub fallbacks: usize,
    pub stop: StopReason,
    pub final_grad_norm: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

struct Probe<'a, O: Objective> {
    obj: &'a O,
    x: &'a [f64],
    d: &'a [f64],
    trial: Vec<f64>,
    evaluations: usize,
}

struct Sample {
    alpha: f64,
    f: f64,
    slope: f64,
    grad: Vec<f64>,
}

impl<O: Objective> Probe<'_, O> {
    fn at(&mut self, alpha: f64) -> Sample {
        for ((t, x), d) in self.trial.iter_mut().zip(self.x).zip(self.d) {
            *t = x + alpha * d;
        }
        let mut grad = vec![0.0; self.trial.len()];
        let f = self.obj.eval(&self.trial, &mut grad);
        self.evaluations += 1;
        let slope = dot(&grad, self.d);
        Sample {
            alpha,
            f,
            slope,
            grad,
        }
    }
}

/// Minimizer of the cubic interpolating (a, fa, da) and (b, fb, db),
/// clamped to the middle 80% of the interval; bisection if degenerate.
fn cubic_step(a: &Sample, b: &Sample) -> f64 {
    let (lo, hi) = if a.alpha < b.alpha { (a.alpha, b.alpha) } else { (b.alpha, a.alpha) };
    let width = hi - lo;
    let d1 = a.slope + b.slope - 3.0 * (a.f - b.f) / (a.alpha - b.alpha);
    let disc = d1 * d1 - a.slope * b.slope;
    let mid = 0.5 * (lo + hi);
    if !disc.is_finite() || disc < 0.0 {
        return mid;
    }
    let d2 = (b.alpha - a.alpha).signum() * disc.sqrt();
    let t = b.alpha
        - (b.alpha - a.alpha) * (b.slope + d2 - d1) / (b.slope - a.slope + 2.0 * d2);
    if !t.is_finite() {
        return mid;
    }
    t.clamp(lo + 0.1 * width, hi - 0.1 * width)
}

/// Strong-Wolfe line search along `d` from `x`. Returns the accepted sample
/// or `None` when the evaluation budget runs out.
fn strong_wolfe<O: Objective>(
    probe: &mut Probe<'_, O>,
    f0: f64,
    slope0: f64,
    alpha0: f64,
    cfg: &LbfgsConfig,
) -> Option<Sample> {
    let armijo = |s: &Sample| s.f <= f0 + cfg.c1 * s.alpha * slope0;
    let curvature = |s: &Sample| s.slope.abs() <= -cfg.c2 * slope0;
    let budget = cfg.max_linesearch;

    let mut prev = Sample {
        alpha: 0.0,
        f: f0,
        slope: slope0,
        grad: Vec::new(),
    };
    let mut alpha = alpha0;
    let start = probe.evaluations;
    let (mut lo, mut hi);
    let mut first = true;
    loop {
        if probe.evaluations - start >= budget {
            return None;
        }
        let cur = probe.at(alpha);
        if !cur.f.is_finite() {
            // Overshot into overflow: treat as a failed sufficient decrease.
            lo = prev;
            hi = Sample { f: f64::INFINITY, slope: f64::NAN, ..cur };
            break;
        }
        if !armijo(&cur) || (!first && cur.f >= prev.f) {
            lo = prev;
            hi = cur;
            break;
        }
        if curvature(&cur) {
            return Some(cur);
        }
        if cur.slope >= 0.0 {
            lo = cur;
            hi = prev;
            break;
        }
        first = false;
        alpha = (2.0 * cur.alpha).min(1e10);
        prev = cur;
    }

    // Zoom: `lo` satisfies Armijo with the lowest f seen so far; the
    // interval between lo and hi contains a Wolfe point.
    loop {
        if probe.evaluations - start >= budget {
            return None;
        }
        let a = if hi.slope.is_finite() && hi.f.is_finite() && lo.alpha > 0.0 {
            cubic_step(&lo, &hi)
        } else {
            0.5 * (lo.alpha + hi.alpha)
        };
        if (hi.alpha - lo.alpha).abs() <= 1e-16 * lo.alpha.abs().max(1.0) {
            return None;
        }
        let cur = probe.at(a);
        if !cur.f.is_finite() || !armijo(&cur) || cur.f >= lo.f {
            hi = cur;
            if !hi.f.is_finite() {
                hi.slope = f64::NAN;
            }
        } else {
            if curvature(&cur) {
                return Some(cur);
            }
            if cur.slope * (hi.alpha - lo.alpha) >= 0.0 {
                hi = lo;
            }
            lo = cur;
        }
    }
}

/// Steepest descent with Armijo backtracking. `None` if no decrease is
/// found within 60 halvings.
fn backtrack<O: Objective>(probe: &mut Probe<'_, O>, f0: f64, slope0: f64, c1: f64) -> Option<Sample> {
    let mut alpha = 1.0;
    for _ in 0..60 {
        let s = probe.at(alpha);
        if s.f.is_finite() && s.f <= f0 + c1 * alpha * slope0 && s.f < f0 {
            return Some(s);
        }
        alpha *= 0.5;
    }
    None
}

/// Minimizes `obj` from `x0` with L-BFGS.
pub fn minimize_lbfgs<O: Objective>(obj: &O, x0: &[f64], cfg: &LbfgsConfig) -> (Vec<f64>, OptimTrace) {
    let n = obj.dim();
    assert_eq!(x0.len(), n, "start point has the wrong dimension");
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut f = obj.eval(&x, &mut g);
    let mut trace = OptimTrace {
        losses: vec![f],
        iterations: 0,
        evaluations: 1,
        fallbacks: 0,
        stop: StopReason::MaxIterations,
        final_grad_norm: norm(&g),
    };
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(cfg.memory);
    let mut d = vec![0.0; n];
    let mut alpha_buf = vec![0.0; cfg.memory.max(1)];

    while trace.iterations < cfg.max_iterations {
        let gnorm = norm(&g);
        trace.final_grad_norm = gnorm;
        if gnorm < cfg.grad_tol {
            trace.stop = StopReason::GradientTolerance;
            return (x, trace);
        }

        // Two-loop recursion: d = -H g.
        d.iter_mut().zip(&g).for_each(|(d, g)| *d = -g);
        for (i, (s, y, rho)) in history.iter().enumerate().rev() {
            let a = rho * dot(s, &d);
            alpha_buf[i] = a;
            d.iter_mut().zip(y).for_each(|(d, y)| *d -= a * y);
        }
        if let Some((s, y, _)) = history.back() {
            let gamma = dot(s, y) / dot(y, y);
            d.iter_mut().for_each(|d| *d *= gamma);
        }
        for (i, (s, y, rho)) in history.iter().enumerate() {
            let b = rho * dot(y, &d);
            let a = alpha_buf[i];
            d.iter_mut().zip(s).for_each(|(d, s)| *d += (a - b) * s);
        }
        let mut slope = dot(&g, &d);
        if !slope.is_finite() || slope >= 0.0 {
            history.clear();
            d.iter_mut().zip(&g).for_each(|(d, g)| *d = -g);
            slope = -gnorm * gnorm;
        }
        let alpha0 = if history.is_empty() { (1.0 / norm(&d)).min(1.0) } else { 1.0 };

        let mut probe = Probe {
            obj,
            x: &x,
            d: &d,
            trial: vec![0.0; n],
            evaluations: 0,
        };
        let mut accepted = strong_wolfe(&mut probe, f, slope, alpha0, cfg);
        trace.evaluations += probe.evaluations;
        if accepted.is_none() {
            log::warn!(
                "line search failed at iteration {}; falling back to steepest descent",
                trace.iterations
            );
            trace.fallbacks += 1;
            history.clear();
            let scale = 1.0 / gnorm;
            d.iter_mut().zip(&g).for_each(|(d, g)| *d = -g * scale);
            let mut probe = Probe {
                obj,
                x: &x,
                d: &d,
                trial: vec![0.0; n],
                evaluations: 0,
            };
            accepted = backtrack(&mut probe, f, -gnorm, cfg.c1);
            trace.evaluations += probe.evaluations;
        }
        let Some(step) = accepted else {
            trace.stop = StopReason::NoDescent;
            return (x, trace);
        };

        let s: Vec<f64> = d.iter().map(|d| step.alpha * d).collect();
        let y: Vec<f64> = step.grad.iter().zip(&g).map(|(a, b)| a - b).collect();
        x.iter_mut().zip(&s).for_each(|(x, s)| *x += s);
        let sy = dot(&s, &y);
        if sy > 1e-10 * dot(&y, &y).sqrt() * norm(&s) && sy.is_finite() {
            if history.len() == cfg.memory {
                history.pop_front();
            }
            if cfg.memory > 0 {
                history.push_back((s, y, 1.0 / sy));
            }
        }
        let f_prev = f;
        f = step.f;
        g = step.grad;
        trace.iterations += 1;
        trace.losses.push(f);
        trace.final_grad_norm = norm(&g);
        if (f_prev - f).abs() / f_prev.abs().max(f.abs()).max(1.0) < cfg.rel_loss_tol {
            trace.stop = StopReason::RelativeLossChange;
            return (x, trace);
        }
    }
    trace.stop = StopReason::MaxIterations;
    (x, trace)
}

/// Full-batch Adam. The loss sequence is not monotone.
pub fn minimize_adam<O: Objective>(obj: &O, x0: &[f64], cfg: &AdamConfig) -> (Vec<f64>, OptimTrace) {
    let n = obj.dim();
    assert_eq!(x0.len(), n, "start point has the wrong dimension");
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut m = vec![0.0; n];
    let mut v = vec![0.0; n];
    let f = obj.eval(&x, &mut g);
    let mut trace = OptimTrace {
        losses: vec![f],
        iterations: 0,
        evaluations: 1,
        fallbacks: 0,
        stop: StopReason::MaxIterations,
        final_grad_norm: norm(&g),
    };
    while trace.iterations < cfg.max_iterations {
        if trace.final_grad_norm < cfg.grad_tol {
            trace.stop = StopReason::GradientTolerance;
            return (x, trace);
        }
        let t = (trace.iterations + 1) as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for i in 0..n {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            x[i] -= cfg.learning_rate * (m[i] / bc1) / ((v[i] / bc2).sqrt() + cfg.epsilon);
        }
        let f = obj.eval(&x, &mut g);
        trace.evaluations += 1;
        trace.iterations += 1;
        trace.losses.push(f);
        trace.final_grad_norm = norm(&g);
    }
    (x, trace)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Rosenbrock;
    impl Objective for Rosenbrock {
        fn dim(&self) -> usize {
            2
        }
        fn eval(&self, x: &[f64], g: &mut [f64]) -> f64 {
            let (a, b) = (x[0], x[1]);
            g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
            g[1] = 200.0 * (b - a * a);
            (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
        }
    }

    struct Quadratic(Vec<f64>);
    impl Objective for Quadratic {
        fn dim(&self) -> usize {
            self.0.len()
        }
        fn eval(&self, x: &[f64], g: &mut [f64]) -> f64 {
            let mut f = 0.0;
            for i in 0..x.len() {
                g[i] = self.0[i] * (x[i] - 1.0);
                f += 0.5 * self.0[i] * (x[i] - 1.0).powi(2);
            }
            f
        }
    }

    #[test]
    fn rosenbrock_converges_monotonically() {
        let cfg = LbfgsConfig { max_iterations: 500, ..Default::default() };
        let (x, trace) = minimize_lbfgs(&Rosenbrock, &[-1.2, 1.0], &cfg);
        assert!((x[0] - 1.0).abs() < 1e-5 && (x[1] - 1.0).abs() < 1e-5, "{x:?} {trace:?}");
        assert!(trace.losses.windows(2).all(|w| w[1] <= w[0]));
        assert_ne!(trace.stop, StopReason::MaxIterations);
    }

    #[test]
    fn ill_conditioned_quadratic() {
        let obj = Quadratic((0..50).map(|i| 10f64.powf(i as f64 / 49.0 * 4.0)).collect());
        let cfg = LbfgsConfig { max_iterations: 2000, rel_loss_tol: 1e-300, grad_tol: 1e-9, ..Default::default() };
        let (x, trace) = minimize_lbfgs(&obj, &vec![0.0; 50], &cfg);
        assert!(x.iter().all(|v| (v - 1.0).abs() < 1e-5), "{trace:?}");
        assert!(trace.losses.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn already_optimal_stops_immediately() {
        let obj = Quadratic(vec![1.0, 2.0]);
        let (x, trace) = minimize_lbfgs(&obj, &[1.0, 1.0], &LbfgsConfig::default());
        assert_eq!(x, vec![1.0, 1.0]);
        assert_eq!(trace.iterations, 0);
        assert_eq!(trace.stop, StopReason::GradientTolerance);
    }

    #[test]
    fn adam_descends_on_quadratic() {
        let obj = Quadratic(vec![1.0, 3.0, 0.5]);
        let cfg = AdamConfig { learning_rate: 0.05, max_iterations: 3000, ..Default::default() };
        let (x, trace) = minimize_adam(&obj, &[5.0, -2.0, 0.0], &cfg);
        assert!(x.iter().all(|v| (v - 1.0).abs() < 1e-3), "{x:?}");
        assert!(trace.losses.last().unwrap() < &trace.losses[0]);
    }
}
