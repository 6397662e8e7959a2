//! Artifact format checks: CSV headers, SVG content, export round-trip.

use apfos::runner::config::RunConfig;
use apfos::runner::{export, output, run_forward, run_identify};

fn tiny_forward() -> RunConfig {
    RunConfig::from_toml_str(
        r#"
seed = 9
[problem]
setup = "2d"
case = 1
epsilon = "1e-2"
n_interior = 40
n_dirichlet = 10
n_neumann = 10
grid = 100
[network]
hidden_layers = 2
neurons = 5
[scheme]
kind = "apfos"
[optimizer]
kind = "lbfgs"
max_iters = 5
log_every = 1
"#,
    )
    .unwrap()
}

#[test]
fn csv_headers_are_as_documented() {
    let result = run_forward(&tiny_forward()).unwrap();
    let losses = output::losses_csv(&result);
    assert!(losses.starts_with(
        "iter,total,divergence,grad_perp,grad_par,dirichlet,neumann_phi,neumann_flux\n"
    ));
    let errors = output::errors_csv(&result);
    assert!(errors.starts_with("iter,e1,e2,einf\n"));
    let grid = output::grid_csv(&result);
    assert!(grid.starts_with("x,z,predicted,exact\n"));
    let slice = output::slice_csv(&result.slices[0].1);
    assert!(slice.starts_with("coordinate,predicted,exact\n"));
}

#[test]
fn svg_has_two_polylines_per_slice() {
    let result = run_forward(&tiny_forward()).unwrap();
    for (name, profile) in &result.slices {
        let svg = output::slice_svg(name, profile);
        assert_eq!(svg.matches("<polyline").count(), 2, "slice {name}");
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }
}

#[test]
fn write_all_and_export_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("run");
    let result = run_forward(&tiny_forward()).unwrap();
    output::write_all(&run_dir, &result, true).unwrap();
    for f in [
        "manifest.json",
        "result.json",
        "losses.csv",
        "errors.csv",
        "solution_grid.csv",
        "slice_x0.5.csv",
        "slice_x0.5.svg",
    ] {
        assert!(run_dir.join(f).exists(), "{f} missing");
    }

    // slice x = 0.5 on a 100-node grid is off-node: a warning is recorded
    assert!(!result.slices[0].1.warnings.is_empty());

    let export_dir = dir.path().join("re-export");
    export(&run_dir, &export_dir, false).unwrap();
    let a = std::fs::read_to_string(run_dir.join("losses.csv")).unwrap();
    let b = std::fs::read_to_string(export_dir.join("losses.csv")).unwrap();
    assert_eq!(a, b);
    assert!(!export_dir.join("slice_x0.5.svg").exists());
}

#[test]
fn identify_emits_eps_trace_with_header() {
    let cfg = RunConfig::from_toml_str(
        r#"
seed = 2
[problem]
setup = "2d"
case = 1
epsilon = "1e-2"
n_interior = 30
n_neumann = 8
grid = 7
[network]
hidden_layers = 2
neurons = 5
[scheme]
kind = "apfos"
[optimizer]
kind = "lbfgs"
max_iters = 10
[identify]
iter1 = 5
iter2 = 10
"#,
    )
    .unwrap();
    let result = run_identify(&cfg).unwrap();
    let trace = output::eps_trace_csv(&result);
    assert!(trace.starts_with("iter,epsilon\n"));
    // initial guess plus one row per iteration of both phases
    assert_eq!(result.eps_trace.first().unwrap().0, 0);
    assert!(result.eps_trace.len() >= 6);
    assert!(result.manifest.eps_estimate.unwrap() > 0.0);
    let losses = output::losses_csv(&result);
    assert!(losses.starts_with(
        "iter,total,observation,divergence,grad_perp,grad_par,neumann_phi,neumann_flux\n"
    ));
}
