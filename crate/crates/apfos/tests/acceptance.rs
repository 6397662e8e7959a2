//! Acceptance suite: one test per criterion, each printing a PASS line with
//! the measured numbers (run with `--nocapture` to see them on success).
//!
//! Criteria 4-6 train seeded desk-scale networks and take a few minutes of
//! CPU each; everything else runs in seconds.

use apfos::gradcheck;
use apfos::loss::{exact_apfos_outputs, ApfosLoss, ForwardWeights, Objective};
use apfos::network::LayerSpec;
use apfos::optim::{lbfgs_minimize, AdamParams, AdamState, LbfgsConfig, StopRule};
use apfos::problem::{CaseParams, ProblemInstance, Setup};
use apfos::runner::config::RunConfig;
use apfos::runner::{output, run_forward, run_identify};

fn instance(setup: Setup, case: usize, eps: f64) -> ProblemInstance {
    ProblemInstance::new(setup, CaseParams::preset(case).unwrap(), eps)
}

/// Criterion 1: reverse-mode parameter gradients of all five functionals and
/// spatial jet derivatives agree with central finite differences
/// (100 random loss cases; gradients to 1e-5 relative, Hessians to 1e-4).
#[test]
fn acceptance_1_ad_correctness() {
    let report = gradcheck::run_all(20260811, 20);
    report.print();
    assert!(report.all_passed(), "finite-difference suites failed");
    let loss_checks: usize = report
        .results
        .iter()
        .find(|r| r.name.contains("loss"))
        .map(|r| r.checks)
        .unwrap_or(0);
    assert!(loss_checks >= 100 * 5, "expected >= 500 loss-gradient checks");
    println!("ACCEPTANCE 1 PASS: AD matches central finite differences ({loss_checks} loss checks)");
}

/// Criterion 2: with the exact solution substituted for the network outputs,
/// the first-order functionals vanish below 1e-16 uniformly in eps
/// (2D Cases 1-3 and the 3D case, eps in {1, 1e-2, 1e-20, 0}).
#[test]
fn acceptance_2_exact_solution_residual() {
    let mut worst: f64 = 0.0;
    for &(setup, case) in &[
        (Setup::TwoD, 1),
        (Setup::TwoD, 2),
        (Setup::TwoD, 3),
        (Setup::ThreeD, 2),
    ] {
        for &eps in &[1.0, 1e-2, 1e-20, 0.0] {
            let p = instance(setup, case, eps);
            let arity = p.dim() + 1;
            let colloc = p.sample(200, 40, 40, 99);
            let loss = ApfosLoss::new(
                &p,
                LayerSpec::uniform(p.dim(), 2, 5, arity).unwrap(),
                &colloc,
                ForwardWeights::defaults(40),
            )
            .unwrap();
            let b = loss.eval_outputs(|x| exact_apfos_outputs(&p, x));
            assert!(
                b.total < 1e-16,
                "{setup:?} case {case} eps {eps:e}: exact-solution loss {:e}",
                b.total
            );
            worst = worst.max(b.total);
        }
    }
    println!("ACCEPTANCE 2 PASS: exact-solution APFOS losses < 1e-16 (worst {worst:e})");
}

/// Criterion 3: the identity licensing the split forcing holds on the
/// evaluation grids, and the forcing is continuous down to eps = 0.
#[test]
fn acceptance_3_split_forcing_identity() {
    let mut worst_identity: f64 = 0.0;
    for &(setup, grid_n) in &[(Setup::TwoD, 100), (Setup::ThreeD, 50)] {
        for case in 1..=3 {
            let p = instance(setup, case, 1e-2);
            let grid = p.eval_grid(grid_n);
            let max = grid
                .points()
                .map(|x| p.b_dot_grad_phi0(&x).abs())
                .fold(0.0, f64::max);
            assert!(
                max < 1e-10,
                "{setup:?} case {case}: max |b.grad phi0| = {max:e} on the {grid_n} grid"
            );
            worst_identity = worst_identity.max(max);
        }
    }

    let mut worst_rel: f64 = 0.0;
    for &setup in &[Setup::TwoD, Setup::ThreeD] {
        for case in 1..=3 {
            let tiny = instance(setup, case, 1e-30);
            let zero = instance(setup, case, 0.0);
            let colloc = zero.sample(200, 0, 0, 7);
            for x in &colloc.interior {
                let (a, b) = (tiny.forcing(x), zero.forcing(x));
                let rel = (a - b).abs() / b.abs().max(1.0);
                assert!(rel < 1e-12, "{setup:?} case {case}: f mismatch {rel:e}");
                worst_rel = worst_rel.max(rel);
            }
        }
    }
    println!(
        "ACCEPTANCE 3 PASS: max grid |b.grad phi0| = {worst_identity:e}; \
         f(1e-30) vs f(0) relative difference {worst_rel:e}"
    );
}

fn desk_forward_toml(scheme: &str, eps: &str, tol: &str) -> String {
    format!(
        r#"
seed = 1
[problem]
setup = "2d"
case = 1
epsilon = "{eps}"
n_interior = 1000
n_dirichlet = 100
n_neumann = 100
grid = 100
[network]
hidden_layers = 3
neurons = 20
[scheme]
kind = "{scheme}"
[optimizer]
kind = "lbfgs"
max_iters = 2000
tol = {tol}
log_every = 200
snapshots = [1000]
"#
    )
}

/// Criterion 4: desk-scale AP uniformity. Seeded runs at eps in
/// {1, 1e-2, 1e-20} all reach E2 < 1e-2 with a max/min spread below 20.
#[test]
fn acceptance_4_ap_uniformity_desk_scale() {
    let mut e2 = Vec::new();
    for eps in ["1", "1e-2", "1e-20"] {
        let cfg = RunConfig::from_toml_str(&desk_forward_toml("apfos", eps, "0.0")).unwrap();
        let result = run_forward(&cfg).unwrap();
        let (_, t) = result.error_trace.last().unwrap();
        println!("  eps {eps}: E2 = {:.3e} (E1 {:.3e}, Einf {:.3e})", t.e2, t.e1, t.einf);
        assert!(t.e2 < 1e-2, "eps {eps}: E2 = {:e} >= 1e-2", t.e2);
        e2.push(t.e2);
    }
    let (min, max) = (
        e2.iter().cloned().fold(f64::INFINITY, f64::min),
        e2.iter().cloned().fold(0.0, f64::max),
    );
    let ratio = max / min;
    assert!(ratio < 20.0, "E2 spread across eps too large: {ratio}");
    println!(
        "ACCEPTANCE 4 PASS: E2 = {:.3e}/{:.3e}/{:.3e} for eps 1/1e-2/1e-20, spread {ratio:.2}",
        e2[0], e2[1], e2[2]
    );
}

/// Criterion 5: the second-order baseline at eps = 1e-20 lands on a wrong
/// solution of the ill-posed limit: the run terminates (stop rule or budget)
/// with E2 > 0.5 or a non-finite loss.
#[test]
fn acceptance_5_nonap_failure_mode() {
    let cfg = RunConfig::from_toml_str(&desk_forward_toml("nonap", "1e-20", "1e-10")).unwrap();
    let result = run_forward(&cfg).unwrap();
    let (_, t) = result.error_trace.last().unwrap();
    let failed = !result.manifest.final_loss.is_finite() || t.e2 > 0.5;
    assert!(
        failed,
        "non-AP run unexpectedly accurate: E2 = {:e}, loss {:e}",
        t.e2, result.manifest.final_loss
    );
    println!(
        "ACCEPTANCE 5 PASS: non-AP at eps=1e-20 terminated after {} iterations with E2 = {:.3} (loss {:.3e})",
        result.manifest.iterations, t.e2, result.manifest.final_loss
    );
}

fn desk_identify_toml(eps: &str) -> String {
    format!(
        r#"
seed = 1
[problem]
setup = "2d"
case = 1
epsilon = "{eps}"
n_interior = 1000
n_dirichlet = 0
n_neumann = 100
grid = 100
[network]
hidden_layers = 3
neurons = 20
[scheme]
kind = "apfos"
[optimizer]
kind = "lbfgs"
max_iters = 2000
log_every = 500
[identify]
eps_star0 = 0.0
iter1 = 500
iter2 = 2000
noise = 0.0
"#
    )
}

/// Criterion 6: desk-scale identification recovers the anisotropy strength
/// within the stated brackets for true eps = 1e-2 and eps = 1.
#[test]
fn acceptance_6_identification_desk_scale() {
    let cfg = RunConfig::from_toml_str(&desk_identify_toml("1e-2")).unwrap();
    let result = run_identify(&cfg).unwrap();
    let est = result.manifest.eps_estimate.unwrap();
    println!("  true 1e-2: estimated {est:.4e}");
    assert!(
        (5e-3..=2e-2).contains(&est),
        "estimate {est:e} outside [5e-3, 2e-2]"
    );

    let cfg1 = RunConfig::from_toml_str(&desk_identify_toml("1")).unwrap();
    let result1 = run_identify(&cfg1).unwrap();
    let est1 = result1.manifest.eps_estimate.unwrap();
    println!("  true 1: estimated {est1:.4e}");
    assert!(
        (0.5..=2.0).contains(&est1),
        "estimate {est1:e} outside [0.5, 2]"
    );
    println!("ACCEPTANCE 6 PASS: identified {est:.3e} (true 1e-2) and {est1:.3} (true 1)");
}

/// Criterion 7: positivity is structural through eps = exp(eps*): any real
/// initialization, however extreme, yields a positive estimate.
#[test]
fn acceptance_7_identified_eps_is_positive() {
    for eps_star0 in [-40.0, -3.0, 4.0] {
        let toml = format!(
            r#"
seed = 5
[problem]
setup = "2d"
case = 1
epsilon = "1e-2"
n_interior = 40
n_neumann = 10
grid = 9
[network]
hidden_layers = 2
neurons = 6
[scheme]
kind = "apfos"
[optimizer]
kind = "lbfgs"
max_iters = 30
[identify]
eps_star0 = {eps_star0}
iter1 = 10
iter2 = 30
"#
        );
        let cfg = RunConfig::from_toml_str(&toml).unwrap();
        let result = run_identify(&cfg).unwrap();
        let est = result.manifest.eps_estimate.unwrap();
        assert!(est > 0.0, "eps*0 = {eps_star0}: estimate {est} not positive");
        assert!(result.eps_trace.iter().all(|(_, e)| *e > 0.0));
    }
    println!("ACCEPTANCE 7 PASS: every identification estimate is positive by construction");
}

/// Criterion 8: optimizer unit targets — the diagonal quadratic to 1e-10 in
/// 20 iterations, Rosenbrock to (1,1) +- 1e-6 in 200, and Adam's first step
/// against the closed form to 1e-6.
#[test]
fn acceptance_8_optimizer_unit_targets() {
    use apfos::loss::{Evaluation, LossBreakdown};
    struct Fx(fn(&[f64]) -> (f64, Vec<f64>));
    impl Objective for Fx {
        fn dim(&self) -> usize {
            2
        }
        fn eval(&self, x: &[f64]) -> Evaluation {
            let (value, grad) = (self.0)(x);
            Evaluation {
                value,
                grad,
                breakdown: LossBreakdown::scalar(value),
            }
        }
    }

    let quad = Fx(|x| {
        let f = 0.5 * (x[0] * x[0] + 10.0 * x[1] * x[1]) - x[0] - x[1];
        (f, vec![x[0] - 1.0, 10.0 * x[1] - 1.0])
    });
    let res = lbfgs_minimize(
        &quad,
        vec![4.0, -2.0],
        &LbfgsConfig::default(),
        &StopRule {
            tol: 0.0,
            max_iters: 20,
        },
        |_, _, _| {},
    );
    let gap = res.value - (-0.55);
    assert!(gap < 1e-10, "quadratic gap {gap:e} after 20 iterations");

    let rosen = Fx(|x| {
        let f = (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let g = vec![
            -2.0 * (1.0 - x[0]) - 400.0 * (x[1] - x[0] * x[0]) * x[0],
            200.0 * (x[1] - x[0] * x[0]),
        ];
        (f, g)
    });
    let res2 = lbfgs_minimize(
        &rosen,
        vec![-1.2, 1.0],
        &LbfgsConfig::default(),
        &StopRule {
            tol: 0.0,
            max_iters: 200,
        },
        |_, _, _| {},
    );
    assert!(
        (res2.x[0] - 1.0).abs() < 1e-6 && (res2.x[1] - 1.0).abs() < 1e-6,
        "Rosenbrock endpoint {:?}",
        res2.x
    );

    let mut adam = AdamState::new(
        1,
        AdamParams {
            lr: 0.1,
            ..AdamParams::default()
        },
    );
    let mut theta = [1.0];
    adam.step(&mut theta, &[2.0]);
    assert!((theta[0] - 0.9).abs() < 1e-6);
    println!(
        "ACCEPTANCE 8 PASS: quadratic gap {gap:.1e} in 20 iters; Rosenbrock at {:?}; Adam first step {:.8}",
        res2.x, theta[0]
    );
}

/// Criterion 9: byte-identical losses.csv and errors.csv across repeated
/// executions of the same seeded config, forward and identification.
#[test]
fn acceptance_9_determinism() {
    let forward = r#"
seed = 21
[problem]
setup = "2d"
case = 2
epsilon = "1e-2"
n_interior = 300
n_dirichlet = 40
n_neumann = 40
grid = 21
[network]
hidden_layers = 2
neurons = 10
[scheme]
kind = "apfos"
[optimizer]
kind = "lbfgs"
max_iters = 60
log_every = 10
snapshots = [30]
"#;
    let cfg = RunConfig::from_toml_str(forward).unwrap();
    let a = run_forward(&cfg).unwrap();
    let b = run_forward(&cfg).unwrap();
    assert_eq!(output::losses_csv(&a), output::losses_csv(&b));
    assert_eq!(output::errors_csv(&a), output::errors_csv(&b));

    let ident = r#"
seed = 22
[problem]
setup = "2d"
case = 1
epsilon = "1e-2"
n_interior = 150
n_neumann = 20
grid = 11
[network]
hidden_layers = 2
neurons = 8
[scheme]
kind = "apfos"
[optimizer]
kind = "lbfgs"
max_iters = 50
log_every = 10
[identify]
iter1 = 30
iter2 = 50
noise = 0.01
"#;
    let cfg2 = RunConfig::from_toml_str(ident).unwrap();
    let c = run_identify(&cfg2).unwrap();
    let d = run_identify(&cfg2).unwrap();
    assert_eq!(output::losses_csv(&c), output::losses_csv(&d));
    assert_eq!(output::errors_csv(&c), output::errors_csv(&d));
    assert_eq!(output::eps_trace_csv(&c), output::eps_trace_csv(&d));
    assert_eq!(c.manifest.eps_estimate, d.manifest.eps_estimate);
    println!("ACCEPTANCE 9 PASS: repeated seeded runs emit byte-identical traces");
}

/// The identification mode must agree with the forward loss when the
/// coefficient is pinned: eps* = ln(eps), observation weight zero.
#[test]
fn forward_and_identification_losses_share_code_paths() {
    use apfos::loss::{ApfosIdentLoss, IdentWeights};
    use apfos::network::init_params;
    let p = instance(Setup::TwoD, 2, 1e-2);
    let colloc = p.sample(40, 10, 10, 3);
    let spec = LayerSpec::uniform(2, 2, 8, 3).unwrap();
    let theta = init_params(&spec, 1).theta;
    let forward = ApfosLoss::new(
        &p,
        spec.clone(),
        &colloc,
        ForwardWeights {
            dirichlet: 0.0,
            neumann: 1.0,
        },
    )
    .unwrap();
    let obs = p.observations(&colloc.interior, 0.0, 2);
    let ident = ApfosIdentLoss::new(
        &p,
        spec,
        &colloc,
        &obs,
        IdentWeights {
            obs: 0.0,
            f1: 1.0,
            f2: 1.0,
            f3: 1.0,
            n1: 1.0,
            n2: 1.0,
        },
    )
    .unwrap();
    let mut xi = theta.clone();
    xi.push(1e-2f64.ln());
    let (a, b) = (forward.eval(&theta).value, ident.eval(&xi).value);
    assert!((a - b).abs() <= 1e-14 * a.abs());
}
