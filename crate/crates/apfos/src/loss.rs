//! Discrete least-squares functionals over collocation points.
//!
//! Four functionals are assembled here: the first-order-system (APFOS)
//! forward loss in 2D/3D, its identification variant with the anisotropy
//! reparameterized as eps = exp(eps*), and the second-order (non-AP)
//! baseline with its identification variant. All residual assembly is
//! generic over [`Scalar`], so the identical code path evaluates on plain
//! numbers (used by the exact-solution oracles) and on tape variables
//! (used for training).
//!
//! eps enters every first-order functional multiplicatively, so evaluation
//! at eps = 0 is finite and equals the eps -> 0 limit.
//!
//! Summation order is canonical: interior, Dirichlet, Neumann, each in
//! sample order, accumulated per fixed-size chunk with chunk subtotals
//! added in chunk order. Chunks evaluate on independent tapes, in parallel;
//! the fixed-order reduction keeps results identical for any thread count.

use std::ops::Range;

use rayon::prelude::*;

use crate::jet::{self, Jet};
use crate::network::{self, LayerSpec};
use crate::problem::{
    CollocationSet, FrameData, InteriorPoint, NeumannPoint, ObservationSet, PointData,
    ProblemInstance,
};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};

/// Points per evaluation chunk; fixed so results do not depend on the
/// number of worker threads.
const CHUNK: usize = 256;

/// Produces the scheme outputs as jets at a point, at the given jet order.
type OutputsAt<'a, S> = &'a mut dyn FnMut(&[f64; 3], usize) -> Vec<Jet<S>>;

#[derive(Debug, thiserror::Error)]
pub enum LossError {
    #[error("network outputs {got} values, this functional needs {expected}")]
    WrongArity { expected: usize, got: usize },
    #[error("network input dimension {got} does not match the problem ({expected})")]
    WrongDim { expected: usize, got: usize },
    #[error("the second-order baseline is 2D only")]
    NonApNeeds2d,
    #[error("observation set is empty or does not match the interior points ({got} values for {expected} points)")]
    BadObservations { expected: usize, got: usize },
}

/// Forward weights (beta_D, beta_N); defaults (N_d, 1).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ForwardWeights {
    pub dirichlet: f64,
    pub neumann: f64,
}

impl ForwardWeights {
    pub fn defaults(n_d: usize) -> ForwardWeights {
        ForwardWeights {
            dirichlet: n_d as f64,
            neumann: 1.0,
        }
    }
}

/// Identification weights (beta_e, beta_f1, beta_f2, beta_f3, beta_N1,
/// beta_N2); defaults (N_f, 1, 1, N_f, N_n, 1).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct IdentWeights {
    pub obs: f64,
    pub f1: f64,
    pub f2: f64,
    pub f3: f64,
    pub n1: f64,
    pub n2: f64,
}

impl IdentWeights {
    pub fn defaults(n_f: usize, n_n: usize) -> IdentWeights {
        IdentWeights {
            obs: n_f as f64,
            f1: 1.0,
            f2: 1.0,
            f3: n_f as f64,
            n1: n_n as f64,
            n2: 1.0,
        }
    }
}

/// Second-order baseline weights (alpha_D, alpha_N); defaults (N_d, 1).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NonApWeights {
    pub dirichlet: f64,
    pub neumann: f64,
}

impl NonApWeights {
    pub fn defaults(n_d: usize) -> NonApWeights {
        NonApWeights {
            dirichlet: n_d as f64,
            neumann: 1.0,
        }
    }
}

/// Second-order identification weights (alpha_e, alpha_f, alpha_N);
/// defaults (N_f, N_f, N_n).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NonApIdentWeights {
    pub obs: f64,
    pub interior: f64,
    pub neumann: f64,
}

impl NonApIdentWeights {
    pub fn defaults(n_f: usize, n_n: usize) -> NonApIdentWeights {
        NonApIdentWeights {
            obs: n_f as f64,
            interior: n_f as f64,
            neumann: n_n as f64,
        }
    }
}

pub const APFOS_FORWARD_TERMS: &[&str] = &[
    "divergence",
    "grad_perp",
    "grad_par",
    "dirichlet",
    "neumann_phi",
    "neumann_flux",
];
pub const APFOS_IDENT_TERMS: &[&str] = &[
    "observation",
    "divergence",
    "grad_perp",
    "grad_par",
    "neumann_phi",
    "neumann_flux",
];
pub const NONAP_FORWARD_TERMS: &[&str] = &["interior", "dirichlet", "neumann"];
pub const NONAP_IDENT_TERMS: &[&str] = &["observation", "interior", "neumann"];

/// Weighted contribution of every named term; the total is their sum.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub names: &'static [&'static str],
    pub values: Vec<f64>,
}

impl LossBreakdown {
    pub fn scalar(total: f64) -> LossBreakdown {
        LossBreakdown {
            total,
            names: &[],
            values: vec![],
        }
    }

    pub fn term(&self, name: &str) -> Option<f64> {
        self.names
            .iter()
            .position(|&n| n == name)
            .map(|i| self.values[i])
    }
}

/// Value, gradient and per-term breakdown at one parameter vector.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub value: f64,
    pub grad: Vec<f64>,
    pub breakdown: LossBreakdown,
}

/// A differentiable objective: the optimizers only see this.
pub trait Objective: Sync {
    fn dim(&self) -> usize;
    fn eval(&self, x: &[f64]) -> Evaluation;
}

// ── per-point residuals, generic over the scalar type ────────────────

/// Squared interior residuals of the first-order system at one point:
/// (divergence, perpendicular gradient match, parallel gradient match).
/// Divergences expand by the product rule against the jet-differentiated
/// frame: div(xi b_perp) = grad(xi).b_perp + xi div(b_perp).
fn apfos_interior<S: Scalar>(out: &[Jet<S>], pt: &InteriorPoint, eps: S) -> (S, S, S) {
    let fr = &pt.frame;
    let d = fr.dim();
    let psi = &out[0];
    let xi = &out[1];
    let zeta = &out[out.len() - 1];
    let kappa = (d == 3).then(|| &out[2]);

    let mut pairs: Vec<(S, f64)> = Vec::with_capacity(3 * d + 3);
    for i in 0..d {
        pairs.push((xi.grad(i), fr.perp1[i]));
    }
    pairs.push((xi.value(), fr.div_perp1));
    if let Some(k) = kappa {
        for i in 0..d {
            pairs.push((k.grad(i), fr.perp2[i]));
        }
        pairs.push((k.value(), fr.div_perp2));
    }
    for i in 0..d {
        pairs.push((zeta.grad(i), fr.b()[i]));
    }
    pairs.push((zeta.value(), fr.div_b()));
    let div_r = S::lincomb(&pairs, pt.f);

    let mut perp_pairs: Vec<(S, f64)> = Vec::with_capacity(d + 1);
    for i in 0..d {
        perp_pairs.push((psi.grad(i), fr.perp1[i]));
    }
    perp_pairs.push((xi.value(), -1.0));
    let mut perp_sq = S::lincomb(&perp_pairs, 0.0).square();
    if let Some(k) = kappa {
        let mut p2: Vec<(S, f64)> = Vec::with_capacity(d + 1);
        for i in 0..d {
            p2.push((psi.grad(i), fr.perp2[i]));
        }
        p2.push((k.value(), -1.0));
        perp_sq = perp_sq + S::lincomb(&p2, 0.0).square();
    }

    let ez = eps * zeta.value();
    let mut par_pairs: Vec<(S, f64)> = Vec::with_capacity(d + 1);
    for i in 0..d {
        par_pairs.push((psi.grad(i), fr.b()[i]));
    }
    par_pairs.push((ez, -1.0));
    let par_r = S::lincomb(&par_pairs, 0.0);

    (div_r.square(), perp_sq, par_r.square())
}

/// eps grad_perp(psi).n + grad_par(psi).n with the perpendicular part taken
/// as the complement grad(psi).n - (b.grad psi)(b.n).
fn flux_phi<S: Scalar>(psi: &Jet<S>, fr: &FrameData, normal: &[f64; 3], eps: S) -> S {
    let d = fr.dim();
    let b = fr.b();
    let bg_pairs: Vec<(S, f64)> = (0..d).map(|i| (psi.grad(i), b[i])).collect();
    let bg = S::lincomb(&bg_pairs, 0.0);
    let gn_pairs: Vec<(S, f64)> = (0..d).map(|i| (psi.grad(i), normal[i])).collect();
    let gn = S::lincomb(&gn_pairs, 0.0);
    let bn: f64 = (0..d).map(|i| b[i] * normal[i]).sum();
    let par_n = bg.scale(bn);
    eps * (gn - par_n) + par_n
}

/// Squared Neumann residuals: (phi-flux, auxiliary flux).
fn apfos_neumann<S: Scalar>(out: &[Jet<S>], pt: &NeumannPoint, eps: S) -> (S, S) {
    let fr = &pt.frame;
    let d = fr.dim();
    let phi_r = flux_phi(&out[0], fr, &pt.normal, eps);

    let bn: f64 = (0..d).map(|i| fr.b()[i] * pt.normal[i]).sum();
    let p1n: f64 = (0..d).map(|i| fr.perp1[i] * pt.normal[i]).sum();
    let mut pairs: Vec<(S, f64)> = vec![(out[1].value(), p1n)];
    if d == 3 {
        let p2n: f64 = (0..d).map(|i| fr.perp2[i] * pt.normal[i]).sum();
        pairs.push((out[2].value(), p2n));
    }
    pairs.push((out[out.len() - 1].value(), bn));
    let aux_r = S::lincomb(&pairs, 0.0);

    (phi_r.square(), aux_r.square())
}

/// Squared balanced second-order residual (eps lap_perp + lap_par + eps f)^2.
fn nonap_interior<S: Scalar>(psi: &Jet<S>, pt: &InteriorPoint, eps: S) -> S {
    let ops = jet::anisotropic_operators(psi, &pt.frame.frame);
    let r = eps * ops.lap_perp + ops.lap_par + eps.scale(pt.f);
    r.square()
}

// ── chunked assembly ──────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ChunkKind {
    Interior,
    Dirichlet,
    Neumann,
}

fn plan_chunks(data: &PointData) -> Vec<(ChunkKind, Range<usize>)> {
    let mut chunks = Vec::new();
    let mut push = |kind: ChunkKind, len: usize| {
        let mut start = 0;
        while start < len {
            let end = (start + CHUNK).min(len);
            chunks.push((kind, start..end));
            start = end;
        }
    };
    push(ChunkKind::Interior, data.interior.len());
    push(ChunkKind::Dirichlet, data.dirichlet.len());
    push(ChunkKind::Neumann, data.neumann.len());
    chunks
}

/// Per-term squared residual lists for one chunk, in breakdown order.
struct TermLists<S>(Vec<Vec<S>>);

impl<S: Scalar> TermLists<S> {
    fn new(n: usize) -> TermLists<S> {
        TermLists((0..n).map(|_| Vec::new()).collect())
    }

    /// Sum each non-empty list and combine with the per-term coefficients.
    /// Returns the (optional) combined scalar and the raw per-term sums.
    fn combine(self, coeffs: &[f64]) -> (Option<S>, Vec<f64>) {
        let mut raw = vec![0.0; self.0.len()];
        let mut pairs: Vec<(S, f64)> = Vec::new();
        for (i, list) in self.0.into_iter().enumerate() {
            if list.is_empty() {
                continue;
            }
            let s = S::sum(&list);
            raw[i] = s.val();
            pairs.push((s, coeffs[i]));
        }
        if pairs.is_empty() {
            (None, raw)
        } else {
            (Some(S::lincomb(&pairs, 0.0)), raw)
        }
    }
}

/// Collect squared residuals for one chunk into `lists`.
///
/// `slots` maps (observation, divergence/interior, perp, par, dirichlet,
/// neumann_phi, neumann_flux) onto term indices; `usize::MAX` drops a slot.
struct Slots {
    obs: usize,
    div: usize,
    perp: usize,
    par: usize,
    dir: usize,
    nphi: usize,
    nflux: usize,
}

const DROP: usize = usize::MAX;

#[allow(clippy::too_many_arguments)]
fn collect_chunk<S: Scalar>(
    data: &PointData,
    kind: ChunkKind,
    range: Range<usize>,
    eps: S,
    obs: Option<&[f64]>,
    order: usize,
    slots: &Slots,
    lists: &mut TermLists<S>,
    outputs_at: OutputsAt<'_, S>,
) {
    match kind {
        ChunkKind::Interior => {
            for i in range {
                let pt = &data.interior[i];
                let out = outputs_at(&pt.x, order);
                if slots.obs != DROP {
                    let values = obs.expect("observation term without observations");
                    let r = out[0].value().shift(-values[i]);
                    lists.0[slots.obs].push(r.square());
                }
                if order == 1 {
                    let (div_sq, perp_sq, par_sq) = apfos_interior(&out, pt, eps);
                    lists.0[slots.div].push(div_sq);
                    lists.0[slots.perp].push(perp_sq);
                    lists.0[slots.par].push(par_sq);
                } else {
                    lists.0[slots.div].push(nonap_interior(&out[0], pt, eps));
                }
            }
        }
        ChunkKind::Dirichlet => {
            if slots.dir == DROP {
                return;
            }
            for i in range {
                let pt = &data.dirichlet[i];
                let out = outputs_at(&pt.x, order);
                let r = out[0].value().shift(-pt.g);
                lists.0[slots.dir].push(r.square());
            }
        }
        ChunkKind::Neumann => {
            for i in range {
                let pt = &data.neumann[i];
                let out = outputs_at(&pt.x, order);
                if order == 1 {
                    let (phi_sq, aux_sq) = apfos_neumann(&out, pt, eps);
                    lists.0[slots.nphi].push(phi_sq);
                    lists.0[slots.nflux].push(aux_sq);
                } else {
                    let r = flux_phi(&out[0], &pt.frame, &pt.normal, eps);
                    lists.0[slots.nphi].push(r.square());
                }
            }
        }
    }
}

/// Everything fixed about one functional: scheme arity, jet order, term
/// names, per-term coefficients (weight / count) and slot mapping.
struct Plan {
    spec: LayerSpec,
    order: usize,
    names: &'static [&'static str],
    coeffs: Vec<f64>,
    slots: Slots,
    /// Some(eps) for forward losses; None when eps* is the trailing
    /// parameter (identification).
    fixed_eps: Option<f64>,
}

impl Plan {
    fn n_theta(&self) -> usize {
        self.spec.param_count()
    }

    fn n_params(&self) -> usize {
        self.n_theta() + usize::from(self.fixed_eps.is_none())
    }

    /// Rough tape size per point, for preallocation only.
    fn node_estimate(&self) -> (usize, usize) {
        let comps = 1 + self.spec.input_dim() * if self.order == 2 { 3 } else { 1 };
        let mut nodes = 8 * self.spec.input_dim() + 32;
        let mut edges = 64;
        for w in self.spec.sizes().windows(2) {
            nodes += w[1] * (comps + 6);
            edges += w[1] * (2 * w[0] + 2) * comps + w[1] * 12;
        }
        (nodes, edges)
    }

    fn eval(&self, x: &[f64], data: &PointData, obs: Option<&[f64]>) -> Evaluation {
        assert_eq!(x.len(), self.n_params(), "parameter vector length");
        if !x.iter().all(|v| v.is_finite()) {
            return Evaluation {
                value: f64::NAN,
                grad: vec![0.0; x.len()],
                breakdown: LossBreakdown {
                    total: f64::NAN,
                    names: self.names,
                    values: vec![f64::NAN; self.names.len()],
                },
            };
        }
        let chunks = plan_chunks(data);
        let (nodes_per_pt, edges_per_pt) = self.node_estimate();

        let outs: Vec<(f64, Vec<f64>, Vec<f64>)> = chunks
            .par_iter()
            .map(|(kind, range)| {
                let est = range.len();
                let tape =
                    Tape::with_estimate(x, est * nodes_per_pt + 64, est * edges_per_pt + 64)
                        .expect("finite parameters");
                let vars = tape.param_vars();
                let (theta, eps) = match self.fixed_eps {
                    Some(e) => (&vars[..], tape.constant(e)),
                    None => (&vars[..self.n_theta()], vars[self.n_theta()].exp()),
                };
                let dim = self.spec.input_dim();
                let mut outputs = |x: &[f64; 3], order: usize| -> Vec<Jet<Var>> {
                    let seeds: Vec<Jet<Var>> = (0..dim)
                        .map(|k| Jet::seed_coordinate(k, tape.constant(x[k]), dim, order))
                        .collect();
                    network::forward_jets(&self.spec, theta, &seeds)
                };
                let mut lists = TermLists::new(self.names.len());
                collect_chunk(
                    data,
                    *kind,
                    range.clone(),
                    eps,
                    obs,
                    self.order,
                    &self.slots,
                    &mut lists,
                    &mut outputs,
                );
                let (total, raw) = lists.combine(&self.coeffs);
                match total {
                    Some(t) => {
                        let grad = tape.backward(t).expect("loss node on tape");
                        (t.val(), grad.0, raw)
                    }
                    None => (0.0, vec![0.0; x.len()], raw),
                }
            })
            .collect();

        let mut value = 0.0;
        let mut grad = vec![0.0; x.len()];
        let mut sums = vec![0.0; self.names.len()];
        for (v, g, raw) in outs {
            value += v;
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += b;
            }
            for (a, b) in sums.iter_mut().zip(&raw) {
                *a += b;
            }
        }
        let values: Vec<f64> = sums
            .iter()
            .zip(&self.coeffs)
            .map(|(s, c)| c * s)
            .collect();
        Evaluation {
            value,
            grad,
            breakdown: LossBreakdown {
                total: value,
                names: self.names,
                values,
            },
        }
    }

    /// Evaluate the same functional on caller-supplied output jets (no
    /// network, no tape); used by the exact-solution oracles.
    fn eval_outputs(
        &self,
        eps: f64,
        data: &PointData,
        obs: Option<&[f64]>,
        outputs_at: OutputsAt<'_, f64>,
    ) -> LossBreakdown {
        let mut lists = TermLists::new(self.names.len());
        for (kind, range) in plan_chunks(data) {
            collect_chunk(
                data, kind, range, eps, obs, self.order, &self.slots, &mut lists, outputs_at,
            );
        }
        let (total, sums) = lists.combine(&self.coeffs);
        let values: Vec<f64> = sums
            .iter()
            .zip(&self.coeffs)
            .map(|(s, c)| c * s)
            .collect();
        LossBreakdown {
            total: total.unwrap_or(0.0),
            names: self.names,
            values,
        }
    }
}

fn check_shapes(
    instance: &ProblemInstance,
    spec: &LayerSpec,
    arity: usize,
) -> Result<(), LossError> {
    if spec.input_dim() != instance.dim() {
        return Err(LossError::WrongDim {
            expected: instance.dim(),
            got: spec.input_dim(),
        });
    }
    if spec.output_arity() != arity {
        return Err(LossError::WrongArity {
            expected: arity,
            got: spec.output_arity(),
        });
    }
    Ok(())
}

fn counts(data: &PointData) -> (f64, f64, f64) {
    let nz = |n: usize| if n == 0 { 1.0 } else { n as f64 };
    (
        nz(data.interior.len()),
        nz(data.dirichlet.len()),
        nz(data.neumann.len()),
    )
}

// ── the four functionals ──────────────────────────────────────────────

/// Discrete first-order-system forward functional (2D or 3D by instance).
pub struct ApfosLoss {
    plan: Plan,
    data: PointData,
}

impl ApfosLoss {
    pub fn new(
        instance: &ProblemInstance,
        spec: LayerSpec,
        colloc: &CollocationSet,
        weights: ForwardWeights,
    ) -> Result<ApfosLoss, LossError> {
        check_shapes(instance, &spec, instance.dim() + 1)?;
        let data = instance.point_data(colloc);
        Ok(ApfosLoss::from_data(instance.epsilon, spec, data, weights))
    }

    /// Build from precomputed point data (tests construct synthetic data).
    pub fn from_data(
        epsilon: f64,
        spec: LayerSpec,
        data: PointData,
        weights: ForwardWeights,
    ) -> ApfosLoss {
        let (n_f, n_d, n_n) = counts(&data);
        let plan = Plan {
            spec,
            order: 1,
            names: APFOS_FORWARD_TERMS,
            coeffs: vec![
                1.0 / n_f,
                1.0 / n_f,
                1.0 / n_f,
                weights.dirichlet / n_d,
                weights.neumann / n_n,
                weights.neumann / n_n,
            ],
            slots: Slots {
                obs: DROP,
                div: 0,
                perp: 1,
                par: 2,
                dir: 3,
                nphi: 4,
                nflux: 5,
            },
            fixed_eps: Some(epsilon),
        };
        ApfosLoss { plan, data }
    }

    pub fn data(&self) -> &PointData {
        &self.data
    }

    /// Evaluate on caller-supplied output jets (value + gradient per output).
    pub fn eval_outputs(
        &self,
        mut outputs_at: impl FnMut(&[f64; 3]) -> Vec<Jet<f64>>,
    ) -> LossBreakdown {
        let eps = self.plan.fixed_eps.unwrap();
        self.plan
            .eval_outputs(eps, &self.data, None, &mut |x, _| outputs_at(x))
    }
}

impl Objective for ApfosLoss {
    fn dim(&self) -> usize {
        self.plan.n_params()
    }

    fn eval(&self, x: &[f64]) -> Evaluation {
        self.plan.eval(x, &self.data, None)
    }
}

/// Identification variant: parameters are theta followed by eps*, with
/// eps = exp(eps*). The Dirichlet term is replaced by the observation term.
pub struct ApfosIdentLoss {
    plan: Plan,
    data: PointData,
    obs: Vec<f64>,
}

impl ApfosIdentLoss {
    pub fn new(
        instance: &ProblemInstance,
        spec: LayerSpec,
        colloc: &CollocationSet,
        observations: &ObservationSet,
        weights: IdentWeights,
    ) -> Result<ApfosIdentLoss, LossError> {
        check_shapes(instance, &spec, instance.dim() + 1)?;
        if observations.values.is_empty() || observations.values.len() != colloc.interior.len() {
            return Err(LossError::BadObservations {
                expected: colloc.interior.len(),
                got: observations.values.len(),
            });
        }
        let data = instance.point_data(colloc);
        let (n_f, _, n_n) = counts(&data);
        let plan = Plan {
            spec,
            order: 1,
            names: APFOS_IDENT_TERMS,
            coeffs: vec![
                weights.obs / n_f,
                weights.f1 / n_f,
                weights.f2 / n_f,
                weights.f3 / n_f,
                weights.n1 / n_n,
                weights.n2 / n_n,
            ],
            slots: Slots {
                obs: 0,
                div: 1,
                perp: 2,
                par: 3,
                dir: DROP,
                nphi: 4,
                nflux: 5,
            },
            fixed_eps: None,
        };
        Ok(ApfosIdentLoss {
            plan,
            data,
            obs: observations.values.clone(),
        })
    }

    pub fn n_theta(&self) -> usize {
        self.plan.n_theta()
    }

    pub fn eval_outputs(
        &self,
        eps_star: f64,
        mut outputs_at: impl FnMut(&[f64; 3]) -> Vec<Jet<f64>>,
    ) -> LossBreakdown {
        self.plan.eval_outputs(
            eps_star.exp(),
            &self.data,
            Some(&self.obs),
            &mut |x, _| outputs_at(x),
        )
    }
}

impl Objective for ApfosIdentLoss {
    fn dim(&self) -> usize {
        self.plan.n_params()
    }

    fn eval(&self, x: &[f64]) -> Evaluation {
        self.plan.eval(x, &self.data, Some(&self.obs))
    }
}

/// Second-order balanced baseline (eps lap_perp + lap_par + eps f)^2 with
/// Dirichlet and Neumann terms; 2D only, order-2 jets.
pub struct NonApLoss {
    plan: Plan,
    data: PointData,
}

impl NonApLoss {
    pub fn new(
        instance: &ProblemInstance,
        spec: LayerSpec,
        colloc: &CollocationSet,
        weights: NonApWeights,
    ) -> Result<NonApLoss, LossError> {
        if instance.dim() != 2 {
            return Err(LossError::NonApNeeds2d);
        }
        check_shapes(instance, &spec, 1)?;
        let data = instance.point_data(colloc);
        let (n_f, n_d, n_n) = counts(&data);
        let plan = Plan {
            spec,
            order: 2,
            names: NONAP_FORWARD_TERMS,
            coeffs: vec![1.0 / n_f, weights.dirichlet / n_d, weights.neumann / n_n],
            slots: Slots {
                obs: DROP,
                div: 0,
                perp: DROP,
                par: DROP,
                dir: 1,
                nphi: 2,
                nflux: DROP,
            },
            fixed_eps: Some(instance.epsilon),
        };
        Ok(NonApLoss { plan, data })
    }

    pub fn eval_outputs(
        &self,
        mut outputs_at: impl FnMut(&[f64; 3]) -> Vec<Jet<f64>>,
    ) -> LossBreakdown {
        let eps = self.plan.fixed_eps.unwrap();
        self.plan
            .eval_outputs(eps, &self.data, None, &mut |x, _| outputs_at(x))
    }
}

impl Objective for NonApLoss {
    fn dim(&self) -> usize {
        self.plan.n_params()
    }

    fn eval(&self, x: &[f64]) -> Evaluation {
        self.plan.eval(x, &self.data, None)
    }
}

/// Second-order identification baseline with eps = exp(eps*).
pub struct NonApIdentLoss {
    plan: Plan,
    data: PointData,
    obs: Vec<f64>,
}

impl NonApIdentLoss {
    pub fn new(
        instance: &ProblemInstance,
        spec: LayerSpec,
        colloc: &CollocationSet,
        observations: &ObservationSet,
        weights: NonApIdentWeights,
    ) -> Result<NonApIdentLoss, LossError> {
        if instance.dim() != 2 {
            return Err(LossError::NonApNeeds2d);
        }
        check_shapes(instance, &spec, 1)?;
        if observations.values.is_empty() || observations.values.len() != colloc.interior.len() {
            return Err(LossError::BadObservations {
                expected: colloc.interior.len(),
                got: observations.values.len(),
            });
        }
        let data = instance.point_data(colloc);
        let (n_f, _, n_n) = counts(&data);
        let plan = Plan {
            spec,
            order: 2,
            names: NONAP_IDENT_TERMS,
            coeffs: vec![
                weights.obs / n_f,
                weights.interior / n_f,
                weights.neumann / n_n,
            ],
            slots: Slots {
                obs: 0,
                div: 1,
                perp: DROP,
                par: DROP,
                dir: DROP,
                nphi: 2,
                nflux: DROP,
            },
            fixed_eps: None,
        };
        Ok(NonApIdentLoss {
            plan,
            data,
            obs: observations.values.clone(),
        })
    }

    pub fn n_theta(&self) -> usize {
        self.plan.n_theta()
    }

    pub fn eval_outputs(
        &self,
        eps_star: f64,
        mut outputs_at: impl FnMut(&[f64; 3]) -> Vec<Jet<f64>>,
    ) -> LossBreakdown {
        self.plan.eval_outputs(
            eps_star.exp(),
            &self.data,
            Some(&self.obs),
            &mut |x, _| outputs_at(x),
        )
    }
}

impl Objective for NonApIdentLoss {
    fn dim(&self) -> usize {
        self.plan.n_params()
    }

    fn eval(&self, x: &[f64]) -> Evaluation {
        self.plan.eval(x, &self.data, Some(&self.obs))
    }
}

/// Exact-solution output jets for the first-order schemes: (phi_e, tau_e,
/// [chi_e,] sigma_e) at a point.
pub fn exact_apfos_outputs(instance: &ProblemInstance, x: &[f64; 3]) -> Vec<Jet<f64>> {
    let sol = instance.exact_solution(x);
    let mut out = vec![sol.phi, sol.tau];
    if let Some(chi) = sol.chi {
        out.push(chi);
    }
    out.push(sol.sigma);
    out
}

/// Exact-solution output jet for the second-order baseline: order-2 phi_e.
pub fn exact_nonap_outputs(instance: &ProblemInstance, x: &[f64; 3]) -> Vec<Jet<f64>> {
    let d = instance.dim();
    let seeds: Vec<Jet<f64>> = (0..d)
        .map(|k| Jet::seed_coordinate(k, x[k], d, 2))
        .collect();
    vec![instance.exact_phi(&seeds)]
}
