//! Optimizers: bias-corrected Adam, L-BFGS with a strong-Wolfe line search,
//! and the training loop with its stopping rule.

use std::collections::VecDeque;

use crate::loss::{Evaluation, Objective};

/// Adam hyper-parameters; defaults lr 1e-3, betas (0.9, 0.999), eps 1e-8.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment state for Adam.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub hp: AdamParams,
    t: u32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(n: usize, hp: AdamParams) -> AdamState {
        AdamState {
            hp,
            t: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    /// One bias-corrected update step.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), grad.len(), "adam: length mismatch");
        assert_eq!(params.len(), self.m.len(), "adam: state length mismatch");
        self.t += 1;
        let hp = self.hp;
        let bc1 = 1.0 - hp.beta1.powi(self.t as i32);
        let bc2 = 1.0 - hp.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = hp.beta1 * self.m[i] + (1.0 - hp.beta1) * grad[i];
            self.v[i] = hp.beta2 * self.v[i] + (1.0 - hp.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= hp.lr * m_hat / (v_hat.sqrt() + hp.eps);
        }
    }
}

/// L-BFGS memory and strong-Wolfe line-search parameters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LbfgsConfig {
    pub memory: usize,
    pub c1: f64,
    pub c2: f64,
    pub max_line_steps: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        LbfgsConfig {
            memory: 10,
            c1: 1e-4,
            c2: 0.9,
            max_line_steps: 25,
        }
    }
}

/// Stop when |G(k) - G(k-1)| <= tol or k > max_iters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StopRule {
    pub tol: f64,
    pub max_iters: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Termination {
    IterationBudget,
    ToleranceReached,
    LineSearchFailed,
    NonFiniteLoss,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEntry {
    pub iter: usize,
    pub value: f64,
}

#[derive(Debug, Clone)]
pub struct MinimizeResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub trace: Vec<TraceEntry>,
    pub termination: Termination,
    pub evaluations: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

struct Wolfe<'a> {
    obj: &'a dyn Objective,
    x: &'a [f64],
    dir: &'a [f64],
    f0: f64,
    df0: f64,
    c1: f64,
    c2: f64,
    max_steps: usize,
    evals: usize,
}

struct Accepted {
    x: Vec<f64>,
    eval: Evaluation,
}

impl<'a> Wolfe<'a> {
    fn probe(&mut self, alpha: f64) -> (Vec<f64>, Evaluation, f64) {
        let xa: Vec<f64> = self
            .x
            .iter()
            .zip(self.dir)
            .map(|(xi, di)| xi + alpha * di)
            .collect();
        let e = self.obj.eval(&xa);
        self.evals += 1;
        let slope = if e.grad.iter().all(|g| g.is_finite()) {
            dot(&e.grad, self.dir)
        } else {
            f64::NAN
        };
        (xa, e, slope)
    }

    fn armijo(&self, alpha: f64, f: f64) -> bool {
        f.is_finite() && f <= self.f0 + self.c1 * alpha * self.df0
    }

    fn curvature(&self, slope: f64) -> bool {
        slope.is_finite() && slope.abs() <= -self.c2 * self.df0
    }

    /// Bracketing phase; returns the accepted point or None on failure.
    fn search(&mut self, alpha_init: f64) -> Option<Accepted> {
        let mut a_prev = 0.0;
        let mut f_prev = self.f0;
        let mut df_prev = self.df0;
        let mut alpha = alpha_init;
        for i in 0..self.max_steps {
            let (xa, ea, slope) = self.probe(alpha);
            if !ea.value.is_finite() || !self.armijo(alpha, ea.value) || (i > 0 && ea.value >= f_prev)
            {
                return self.zoom(a_prev, f_prev, df_prev, alpha, ea.value, slope);
            }
            if self.curvature(slope) {
                return Some(Accepted { x: xa, eval: ea });
            }
            if slope >= 0.0 {
                return self.zoom(alpha, ea.value, slope, a_prev, f_prev, df_prev);
            }
            a_prev = alpha;
            f_prev = ea.value;
            df_prev = slope;
            alpha = (2.0 * alpha).min(1e12);
        }
        None
    }

    /// Zoom phase on a bracket [lo, hi] with phi(lo) the best Armijo point.
    #[allow(clippy::too_many_arguments)]
    fn zoom(
        &mut self,
        mut lo: f64,
        mut f_lo: f64,
        mut df_lo: f64,
        mut hi: f64,
        mut f_hi: f64,
        mut df_hi: f64,
    ) -> Option<Accepted> {
        let mut best: Option<Accepted> = None;
        for _ in 0..self.max_steps {
            if (hi - lo).abs() <= 1e-16 * lo.abs().max(1.0) {
                break;
            }
            let alpha = cubic_step(lo, f_lo, df_lo, hi, f_hi, df_hi);
            let (xa, ea, slope) = self.probe(alpha);
            if !ea.value.is_finite() || !self.armijo(alpha, ea.value) || ea.value >= f_lo {
                hi = alpha;
                f_hi = ea.value;
                df_hi = slope;
            } else {
                if self.curvature(slope) {
                    return Some(Accepted { x: xa, eval: ea });
                }
                if slope * (hi - lo) >= 0.0 {
                    hi = lo;
                    f_hi = f_lo;
                    df_hi = df_lo;
                }
                lo = alpha;
                f_lo = ea.value;
                df_lo = slope;
                best = Some(Accepted { x: xa, eval: ea });
            }
        }
        // fall back to the best Armijo point seen, if any
        best
    }
}

/// Minimizer of a cubic model through (lo, f_lo, df_lo), (hi, f_hi, df_hi),
/// safeguarded to the interior of the bracket; bisection on breakdown.
fn cubic_step(lo: f64, f_lo: f64, df_lo: f64, hi: f64, f_hi: f64, df_hi: f64) -> f64 {
    let mid = 0.5 * (lo + hi);
    if !(f_lo.is_finite() && f_hi.is_finite() && df_lo.is_finite() && df_hi.is_finite()) {
        return mid;
    }
    let d1 = df_lo + df_hi - 3.0 * (f_lo - f_hi) / (lo - hi);
    let disc = d1 * d1 - df_lo * df_hi;
    if disc < 0.0 {
        return mid;
    }
    let d2 = (hi - lo).signum() * disc.sqrt();
    let alpha = hi - (hi - lo) * (df_hi + d2 - d1) / (df_hi - df_lo + 2.0 * d2);
    let (a, b) = if lo < hi { (lo, hi) } else { (hi, lo) };
    let margin = 0.1 * (b - a);
    if !alpha.is_finite() || alpha < a + margin || alpha > b - margin {
        mid
    } else {
        alpha
    }
}

/// L-BFGS with the two-loop recursion and a strong-Wolfe line search.
/// Accepted iterates never increase the loss; the trace records every
/// accepted (iter, value). Line-search failure terminates gracefully with
/// the best iterate and a flag.
pub fn lbfgs_minimize(
    obj: &dyn Objective,
    x0: Vec<f64>,
    cfg: &LbfgsConfig,
    stop: &StopRule,
    mut on_accept: impl FnMut(usize, &[f64], &Evaluation),
) -> MinimizeResult {
    let n = x0.len();
    let mut x = x0;
    let mut e = obj.eval(&x);
    let mut evals = 1;
    let mut trace = vec![TraceEntry {
        iter: 0,
        value: e.value,
    }];
    if !e.value.is_finite() {
        return MinimizeResult {
            value: e.value,
            x,
            trace,
            termination: Termination::NonFiniteLoss,
            evaluations: evals,
        };
    }

    let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut termination = Termination::IterationBudget;

    for k in 1..=stop.max_iters {
        let gnorm = norm(&e.grad);
        if gnorm == 0.0 {
            // nowhere to go; the value cannot change, so the tol rule fires
            trace.push(TraceEntry {
                iter: k,
                value: e.value,
            });
            on_accept(k, &x, &e);
            termination = Termination::ToleranceReached;
            break;
        }

        // two-loop recursion for d = -H g
        let mut q = e.grad.clone();
        let mut alphas = Vec::with_capacity(memory.len());
        for (s, y, rho) in memory.iter().rev() {
            let a = rho * dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        let gamma = memory
            .back()
            .map(|(s, y, _)| dot(s, y) / dot(y, y))
            .unwrap_or(1.0);
        for qi in q.iter_mut() {
            *qi *= gamma;
        }
        for ((s, y, rho), a) in memory.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            for (qi, si) in q.iter_mut().zip(s) {
                *qi += (a - b) * si;
            }
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut df0 = dot(&e.grad, &dir);
        if df0 >= 0.0 || df0.is_nan() {
            // not a descent direction; restart from steepest descent
            memory.clear();
            dir = e.grad.iter().map(|v| -v).collect();
            df0 = -gnorm * gnorm;
        }

        let alpha_init = if memory.is_empty() {
            (1.0 / gnorm).min(1.0)
        } else {
            1.0
        };
        let mut ls = Wolfe {
            obj,
            x: &x,
            dir: &dir,
            f0: e.value,
            df0,
            c1: cfg.c1,
            c2: cfg.c2,
            max_steps: cfg.max_line_steps,
            evals: 0,
        };
        let accepted = ls.search(alpha_init);
        evals += ls.evals;
        let Some(acc) = accepted else {
            termination = Termination::LineSearchFailed;
            break;
        };

        let s: Vec<f64> = acc.x.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = acc.eval.grad.iter().zip(&e.grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-10 * norm(&s) * norm(&y) {
            if memory.len() == cfg.memory {
                memory.pop_front();
            }
            memory.push_back((s, y, 1.0 / sy));
        }

        let prev = e.value;
        x = acc.x;
        e = acc.eval;
        trace.push(TraceEntry {
            iter: k,
            value: e.value,
        });
        on_accept(k, &x, &e);
        if !e.value.is_finite() {
            termination = Termination::NonFiniteLoss;
            break;
        }
        if (prev - e.value).abs() <= stop.tol {
            termination = Termination::ToleranceReached;
            break;
        }
        let _ = n;
    }

    MinimizeResult {
        value: e.value,
        x,
        trace,
        termination,
        evaluations: evals,
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum OptimizerChoice {
    Adam(AdamParams),
    Lbfgs(LbfgsConfig),
}

/// Training-loop settings: optimizer, stopping rule, logging cadence and
/// snapshot iterations. `frozen_prefix` masks the gradient of the leading
/// parameters (Adam only), which is how the identification phase updates
/// the trailing eps* alone.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub optimizer: OptimizerChoice,
    pub stop: StopRule,
    pub log_every: usize,
    pub snapshots: Vec<usize>,
    pub frozen_prefix: usize,
}

/// One logged loss row: iteration, total, weighted term values.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossRecord {
    pub iter: usize,
    pub value: f64,
    pub terms: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub x: Vec<f64>,
    pub value: f64,
    pub records: Vec<LossRecord>,
    pub termination: Termination,
    pub iterations: usize,
}

/// Run one optimization, logging the loss breakdown at the cadence plus
/// every snapshot iteration; `on_iter` fires at every accepted iteration.
pub fn train(
    obj: &dyn Objective,
    x0: Vec<f64>,
    cfg: &TrainConfig,
    mut on_iter: impl FnMut(usize, &[f64], &Evaluation),
) -> TrainOutput {
    let should_log = |iter: usize, last: bool| -> bool {
        iter == 0
            || last
            || (cfg.log_every > 0 && iter.is_multiple_of(cfg.log_every))
            || cfg.snapshots.contains(&iter)
    };
    let mut records: Vec<LossRecord> = Vec::new();
    let push_record = |iter: usize, e: &Evaluation, records: &mut Vec<LossRecord>| {
        records.push(LossRecord {
            iter,
            value: e.value,
            terms: e.breakdown.values.clone(),
        });
    };

    match &cfg.optimizer {
        OptimizerChoice::Lbfgs(lcfg) => {
            assert_eq!(
                cfg.frozen_prefix, 0,
                "parameter freezing is only supported with Adam"
            );
            let mut last_iter = 0;
            let mut pending: Option<(usize, Evaluation)> = None;
            let res = lbfgs_minimize(obj, x0, lcfg, &cfg.stop, |iter, x, e| {
                if iter > 0 && should_log(iter, false) {
                    push_record(iter, e, &mut records);
                }
                pending = Some((iter, e.clone()));
                last_iter = iter;
                on_iter(iter, x, e);
            });
            // initial value row, then make sure the final row is present
            records.insert(
                0,
                LossRecord {
                    iter: 0,
                    value: res.trace[0].value,
                    terms: vec![],
                },
            );
            if let Some((iter, e)) = pending {
                if records.last().map(|r| r.iter) != Some(iter) {
                    push_record(iter, &e, &mut records);
                }
            }
            TrainOutput {
                x: res.x,
                value: res.value,
                records,
                termination: res.termination,
                iterations: last_iter,
            }
        }
        OptimizerChoice::Adam(hp) => {
            let mut x = x0;
            let mut adam = AdamState::new(x.len(), *hp);
            let mut e = obj.eval(&x);
            push_record(0, &e, &mut records);
            let mut termination = Termination::IterationBudget;
            let mut iterations = 0;
            if !e.value.is_finite() {
                termination = Termination::NonFiniteLoss;
            } else {
                for k in 1..=cfg.stop.max_iters {
                    let mut g = e.grad.clone();
                    for gi in g.iter_mut().take(cfg.frozen_prefix) {
                        *gi = 0.0;
                    }
                    adam.step(&mut x, &g);
                    let prev = e.value;
                    e = obj.eval(&x);
                    iterations = k;
                    let last = k == cfg.stop.max_iters;
                    if should_log(k, last) {
                        push_record(k, &e, &mut records);
                    }
                    on_iter(k, &x, &e);
                    if !e.value.is_finite() {
                        termination = Termination::NonFiniteLoss;
                        break;
                    }
                    if (prev - e.value).abs() <= cfg.stop.tol {
                        termination = Termination::ToleranceReached;
                        if !should_log(k, true) {
                            push_record(k, &e, &mut records);
                        }
                        break;
                    }
                }
            }
            TrainOutput {
                x,
                value: e.value,
                records,
                termination,
                iterations,
            }
        }
    }
}
