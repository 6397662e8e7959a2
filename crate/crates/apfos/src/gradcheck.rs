//! Finite-difference verification suites.
//!
//! Central differences are the independent oracle for every derivative this
//! crate produces: tape gradients of random composite expressions, spatial
//! jet gradients and Hessians, and parameter gradients of all five loss
//! functionals (including the derivative in eps*). The CLI `gradcheck`
//! subcommand runs the same suites.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::jet::Jet;
use crate::loss::{
    ApfosIdentLoss, ApfosLoss, ForwardWeights, IdentWeights, NonApIdentLoss, NonApIdentWeights,
    NonApLoss, NonApWeights, Objective,
};
use crate::network::{forward_jets, forward_values, init_params, LayerSpec};
use crate::problem::{CaseParams, ProblemInstance, Setup};
use crate::scalar::Scalar;
use crate::tape::Tape;

/// |ad - fd| <= rel |fd| + abs
pub fn close(ad: f64, fd: f64, rel: f64, abs: f64) -> bool {
    (ad - fd).abs() <= rel * fd.abs() + abs
}

/// Central difference of a scalar function in every coordinate.
pub fn central_diff(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|k| {
            let mut xp = x.to_vec();
            xp[k] += h;
            let mut xm = x.to_vec();
            xm[k] -= h;
            (f(&xp) - f(&xm)) / (2.0 * h)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub checks: usize,
    pub max_rel: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Default)]
pub struct Report {
    pub results: Vec<CheckResult>,
}

impl Report {
    pub fn all_passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    pub fn print(&self) {
        for r in &self.results {
            println!(
                "{} {} ({} checks, worst relative deviation {:.2e})",
                if r.passed { "PASS" } else { "FAIL" },
                r.name,
                r.checks,
                r.max_rel
            );
        }
    }
}

struct Tally {
    name: &'static str,
    checks: usize,
    max_rel: f64,
    passed: bool,
}

impl Tally {
    fn new(name: &'static str) -> Tally {
        Tally {
            name,
            checks: 0,
            max_rel: 0.0,
            passed: true,
        }
    }

    fn record(&mut self, ad: f64, fd: f64, rel: f64, abs: f64) {
        self.checks += 1;
        let dev = (ad - fd).abs() / fd.abs().max(abs / rel);
        if dev > self.max_rel {
            self.max_rel = dev;
        }
        if !close(ad, fd, rel, abs) {
            self.passed = false;
        }
    }

    fn into_result(self) -> CheckResult {
        CheckResult {
            name: self.name.to_string(),
            checks: self.checks,
            max_rel: self.max_rel,
            passed: self.passed,
        }
    }
}

// ── random composite expressions ──────────────────────────────────────

#[derive(Clone, Copy)]
enum ExprOp {
    Param(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Tanh(usize),
    Sin(usize),
    Cos(usize),
    Exp(usize),
    Square(usize),
    Scale(usize, f64),
    Shift(usize, f64),
    SafeSqrt(usize),
    SafeDiv(usize, usize),
}

fn random_expression(rng: &mut ChaCha8Rng, n_params: usize, depth: usize) -> Vec<ExprOp> {
    let mut ops: Vec<ExprOp> = (0..n_params).map(ExprOp::Param).collect();
    for _ in 0..depth {
        let pick = |rng: &mut ChaCha8Rng, len: usize| rng.gen_range(0..len);
        let a = pick(rng, ops.len());
        let b = pick(rng, ops.len());
        let op = match rng.gen_range(0..10) {
            0 => ExprOp::Add(a, b),
            1 => ExprOp::Sub(a, b),
            2 => ExprOp::Mul(a, b),
            3 => ExprOp::Tanh(a),
            4 => ExprOp::Sin(a),
            5 => ExprOp::Cos(a),
            6 => ExprOp::Square(a),
            7 => ExprOp::Scale(a, rng.gen_range(-1.5..1.5)),
            8 => ExprOp::SafeSqrt(a),
            _ => ExprOp::Shift(a, rng.gen_range(-1.0..1.0)),
        };
        ops.push(op);
    }
    // keep one bounded division and exp in the mix
    let last = ops.len() - 1;
    ops.push(ExprOp::Tanh(last));
    let t = ops.len() - 1;
    ops.push(ExprOp::Square(t));
    let sq = ops.len() - 1;
    ops.push(ExprOp::Shift(sq, 2.0));
    let denom = ops.len() - 1;
    ops.push(ExprOp::SafeDiv(last, denom));
    let d = ops.len() - 1;
    ops.push(ExprOp::Scale(d, 0.5));
    let s = ops.len() - 1;
    ops.push(ExprOp::Exp(t));
    let e = ops.len() - 1;
    ops.push(ExprOp::Add(s, e));
    ops
}

fn eval_expr<S: Scalar>(ops: &[ExprOp], params: &[S]) -> S {
    let mut vals: Vec<S> = Vec::with_capacity(ops.len());
    for op in ops {
        let v = match *op {
            ExprOp::Param(i) => params[i],
            ExprOp::Add(a, b) => vals[a] + vals[b],
            ExprOp::Sub(a, b) => vals[a] - vals[b],
            ExprOp::Mul(a, b) => vals[a] * vals[b],
            ExprOp::Tanh(a) => vals[a].tanh(),
            ExprOp::Sin(a) => vals[a].sin(),
            ExprOp::Cos(a) => vals[a].cos(),
            ExprOp::Exp(a) => vals[a].tanh().exp(),
            ExprOp::Square(a) => vals[a].square(),
            ExprOp::Scale(a, c) => vals[a].scale(c),
            ExprOp::Shift(a, c) => vals[a].shift(c),
            ExprOp::SafeSqrt(a) => vals[a].square().shift(1.0).sqrt(),
            ExprOp::SafeDiv(a, b) => vals[a] / vals[b],
        };
        vals.push(v);
    }
    *vals.last().unwrap()
}

fn check_expressions(seed: u64, cases: usize) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tally = Tally::new("tape gradients of random composite expressions");
    let h = 1e-6;
    for _ in 0..cases {
        let n = rng.gen_range(2..6);
        let depth = rng.gen_range(5..=20);
        let ops = random_expression(&mut rng, n, depth);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.2..1.2)).collect();
        let tape = Tape::new(&x).unwrap();
        let loss = eval_expr(&ops, &tape.param_vars());
        let grad = tape.backward(loss).unwrap();
        let fd = central_diff(|p| eval_expr(&ops, p), &x, h);
        for (ad, fd) in grad.as_slice().iter().zip(&fd) {
            tally.record(*ad, *fd, 1e-5, 1e-8);
        }
    }
    tally.into_result()
}

// ── spatial jets ──────────────────────────────────────────────────────

fn check_network_jets(seed: u64, cases: usize) -> (CheckResult, CheckResult) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37);
    let mut grads = Tally::new("spatial jet gradients of network outputs");
    let mut hess = Tally::new("spatial jet Hessians of network outputs");
    // first differences are best near h ~ sqrt(eps), second differences
    // near h ~ eps^(1/4)
    let h = 1e-5;
    let h2 = 1e-4;
    for case in 0..cases {
        let dim = if case % 3 == 2 { 3 } else { 2 };
        let arity = if dim == 2 { 3 } else { 4 };
        let spec = LayerSpec::uniform(dim, 2, 5, arity).unwrap();
        let theta = init_params(&spec, rng.gen()).theta;
        let x: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.05..0.95)).collect();
        let jets: Vec<Jet<f64>> = (0..dim)
            .map(|k| Jet::seed_coordinate(k, x[k], dim, 2))
            .collect();
        let out = forward_jets(&spec, &theta, &jets);
        for (o, jet) in out.iter().enumerate() {
            let f = |p: &[f64]| forward_values(&spec, &theta, p)[o];
            for i in 0..dim {
                let mut xp = x.clone();
                xp[i] += h;
                let mut xm = x.clone();
                xm[i] -= h;
                grads.record(jet.grad(i), (f(&xp) - f(&xm)) / (2.0 * h), 1e-5, 1e-8);
                for j in i..dim {
                    let fd = if i == j {
                        let mut p2 = x.clone();
                        p2[i] += h2;
                        let mut m2 = x.clone();
                        m2[i] -= h2;
                        (f(&p2) - 2.0 * f(&x) + f(&m2)) / (h2 * h2)
                    } else {
                        let mut pp = x.clone();
                        pp[i] += h2;
                        pp[j] += h2;
                        let mut pm = x.clone();
                        pm[i] += h2;
                        pm[j] -= h2;
                        let mut mp = x.clone();
                        mp[i] -= h2;
                        mp[j] += h2;
                        let mut mm = x.clone();
                        mm[i] -= h2;
                        mm[j] -= h2;
                        (f(&pp) - f(&pm) - f(&mp) + f(&mm)) / (4.0 * h2 * h2)
                    };
                    hess.record(jet.hess(i, j), fd, 1e-4, 1e-7);
                }
            }
        }
    }
    (grads.into_result(), hess.into_result())
}

// ── loss gradients ────────────────────────────────────────────────────

fn check_loss_gradients(seed: u64, cases_per_loss: usize) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x51f1);
    let mut tally = Tally::new("parameter gradients of the five loss functionals");
    let h = 1e-6;

    let mut check_obj = |obj: &dyn Objective, x: &[f64], rng: &mut ChaCha8Rng| {
        let e = obj.eval(x);
        // central differences of a loss of magnitude L carry roundoff of
        // order machine-eps * L / h, so the near-zero floor scales with L
        let floor = 1e-8 * (1.0 + e.value.abs());
        // a spread of random components plus the trailing one (eps* when present)
        let mut picks: Vec<usize> = (0..6).map(|_| rng.gen_range(0..x.len())).collect();
        picks.push(x.len() - 1);
        for k in picks {
            let mut xp = x.to_vec();
            xp[k] += h;
            let mut xm = x.to_vec();
            xm[k] -= h;
            let fd = (obj.eval(&xp).value - obj.eval(&xm).value) / (2.0 * h);
            tally.record(e.grad[k], fd, 1e-5, floor);
        }
    };

    for c in 0..cases_per_loss {
        let eps = [1.0, 1e-2, 0.3][c % 3];
        let seed_c = rng.gen();

        // 2D shared data
        let p2 = ProblemInstance::new(Setup::TwoD, CaseParams::preset(1 + c % 3).unwrap(), eps);
        let colloc2 = p2.sample(6, 4, 4, seed_c);
        let obs2 = p2.observations(&colloc2.interior, 0.0, seed_c);
        let spec3 = LayerSpec::uniform(2, 2, 5, 3).unwrap();
        let spec1 = LayerSpec::uniform(2, 2, 5, 1).unwrap();
        let theta3 = init_params(&spec3, rng.gen()).theta;
        let theta1 = init_params(&spec1, rng.gen()).theta;

        let apfos =
            ApfosLoss::new(&p2, spec3.clone(), &colloc2, ForwardWeights::defaults(4)).unwrap();
        check_obj(&apfos, &theta3, &mut rng);

        let p3 = ProblemInstance::new(Setup::ThreeD, CaseParams::preset(2).unwrap(), eps);
        let colloc3 = p3.sample(5, 4, 4, seed_c);
        let spec4 = LayerSpec::uniform(3, 2, 5, 4).unwrap();
        let theta4 = init_params(&spec4, rng.gen()).theta;
        let apfos3 =
            ApfosLoss::new(&p3, spec4, &colloc3, ForwardWeights::defaults(4)).unwrap();
        check_obj(&apfos3, &theta4, &mut rng);

        let nonap =
            NonApLoss::new(&p2, spec1.clone(), &colloc2, NonApWeights::defaults(4)).unwrap();
        check_obj(&nonap, &theta1, &mut rng);

        let ident = ApfosIdentLoss::new(
            &p2,
            spec3,
            &colloc2,
            &obs2,
            IdentWeights::defaults(6, 4),
        )
        .unwrap();
        let mut xi = theta3.clone();
        xi.push(rng.gen_range(-3.0..1.0));
        check_obj(&ident, &xi, &mut rng);

        let nonap_ident = NonApIdentLoss::new(
            &p2,
            spec1,
            &colloc2,
            &obs2,
            NonApIdentWeights::defaults(6, 4),
        )
        .unwrap();
        let mut xn = theta1.clone();
        xn.push(rng.gen_range(-3.0..1.0));
        check_obj(&nonap_ident, &xn, &mut rng);
    }
    tally.into_result()
}

/// Run every finite-difference suite. `cases` scales the workload; the
/// acceptance setting is 20 (which yields 100 random loss cases across the
/// five functionals).
pub fn run_all(seed: u64, cases: usize) -> Report {
    let mut report = Report::default();
    report.results.push(check_expressions(seed, 5 * cases));
    let (g, h) = check_network_jets(seed, cases.max(6));
    report.results.push(g);
    report.results.push(h);
    report.results.push(check_loss_gradients(seed, cases));
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quick_gradcheck_passes() {
        let report = run_all(12345, 3);
        report.print();
        assert!(report.all_passed());
    }
}
