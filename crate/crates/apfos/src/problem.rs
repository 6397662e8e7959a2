//! Problem-specific data: magnetic fields and orthonormal frames, exact
//! solutions, forcing and boundary data, collocation sampling, evaluation
//! grids and observations.
//!
//! Two manufactured configurations are built in. The 2D one lives on the
//! unit square with Dirichlet data on the x-faces and Neumann data on the
//! z-faces; the 3D one lives on the unit cube with Dirichlet data on the x-
//! and y-faces and Neumann data on the z-faces. In both, the background
//! potential phi0 is constant along field lines (b . grad phi0 = 0
//! identically), which licenses the epsilon-stable split of the forcing
//! f = -lap_perp(phi0) - eps lap_perp(p) - lap_par(p); no evaluation ever
//! divides by eps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::jet::{self, Jet, PointFrame};
use crate::scalar::Scalar;

/// Norm threshold below which the frame falls back to the z-axis.
pub const FRAME_GUARD: f64 = 1e-14;

#[derive(Debug, thiserror::Error)]
pub enum ProblemError {
    #[error("point {0:?} is not on the Dirichlet boundary")]
    NotOnDirichlet(Vec<f64>),
    #[error("unknown case preset {0}, expected 1..=3")]
    UnknownCase(usize),
}

/// Spatial configuration: 2D unit square or 3D unit cube.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Setup {
    #[serde(rename = "2d", alias = "I", alias = "i")]
    TwoD,
    #[serde(rename = "3d", alias = "II", alias = "ii")]
    ThreeD,
}

impl Setup {
    pub fn dim(self) -> usize {
        match self {
            Setup::TwoD => 2,
            Setup::ThreeD => 3,
        }
    }
}

/// Field distortion theta, field mode m, and solution frequency omega.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaseParams {
    pub theta: f64,
    pub m: u32,
    pub omega: f64,
}

impl CaseParams {
    /// The three named presets: 1 -> (0,1,2), 2 -> (2,1,2), 3 -> (10,2,2).
    pub fn preset(case: usize) -> Result<CaseParams, ProblemError> {
        match case {
            1 => Ok(CaseParams {
                theta: 0.0,
                m: 1,
                omega: 2.0,
            }),
            2 => Ok(CaseParams {
                theta: 2.0,
                m: 1,
                omega: 2.0,
            }),
            3 => Ok(CaseParams {
                theta: 10.0,
                m: 2,
                omega: 2.0,
            }),
            other => Err(ProblemError::UnknownCase(other)),
        }
    }
}

/// One concrete problem: setup, case parameters and anisotropy strength.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemInstance {
    pub setup: Setup,
    pub case: CaseParams,
    pub epsilon: f64,
}

/// Orthonormal direction frame as order-1 jets: unit b plus its
/// perpendicular vector(s). `fallback` marks points where a norm guard
/// replaced the nominal construction.
#[derive(Debug, Clone)]
pub struct FieldFrame<S> {
    pub dim: usize,
    pub b: Vec<Jet<S>>,
    pub perp1: Vec<Jet<S>>,
    /// 3D only; empty in 2D.
    pub perp2: Vec<Jet<S>>,
    pub fallback: bool,
}

impl FieldFrame<f64> {
    /// Direction plus Jacobian, the inputs of the directional operators.
    pub fn point_frame(&self) -> PointFrame {
        let mut b = [0.0; 3];
        let mut db = [[0.0; 3]; 3];
        for c in 0..self.dim {
            b[c] = self.b[c].value();
            for (i, slot) in db[c].iter_mut().enumerate().take(self.dim) {
                *slot = self.b[c].grad(i);
            }
        }
        PointFrame {
            dim: self.dim,
            b,
            db,
        }
    }

    /// Plain-number snapshot used by the loss assembly.
    pub fn data(&self) -> FrameData {
        let frame = self.point_frame();
        let vec_data = |v: &[Jet<f64>]| {
            let mut vals = [0.0; 3];
            let mut div = 0.0;
            for (c, jet) in v.iter().enumerate() {
                vals[c] = jet.value();
                div += jet.grad(c);
            }
            (vals, div)
        };
        let (perp1, div_perp1) = vec_data(&self.perp1);
        let (perp2, div_perp2) = if self.dim == 3 {
            vec_data(&self.perp2)
        } else {
            ([0.0; 3], 0.0)
        };
        FrameData {
            frame,
            perp1,
            div_perp1,
            perp2,
            div_perp2,
            fallback: self.fallback,
        }
    }
}

/// Frame values and divergences at one point, plain f64.
#[derive(Debug, Clone, Copy)]
pub struct FrameData {
    pub frame: PointFrame,
    pub perp1: [f64; 3],
    pub div_perp1: f64,
    pub perp2: [f64; 3],
    pub div_perp2: f64,
    pub fallback: bool,
}

impl FrameData {
    pub fn dim(&self) -> usize {
        self.frame.dim
    }

    pub fn b(&self) -> &[f64; 3] {
        &self.frame.b
    }

    pub fn div_b(&self) -> f64 {
        self.frame.div_b()
    }
}

/// Exact solution pieces at one point, each an order-1 jet so divergence
/// terms can be formed exactly.
#[derive(Debug, Clone)]
pub struct ExactSolution {
    pub phi: Jet<f64>,
    pub tau: Jet<f64>,
    /// 3D only.
    pub chi: Option<Jet<f64>>,
    pub sigma: Jet<f64>,
}

/// Seeded interior/Dirichlet/Neumann sample points with outward normals.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CollocationSet {
    pub dim: usize,
    pub interior: Vec<[f64; 3]>,
    pub dirichlet: Vec<[f64; 3]>,
    pub neumann: Vec<([f64; 3], [f64; 3])>,
    pub seed: u64,
}

/// Solution samples with optional additive Gaussian noise.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObservationSet {
    pub points: Vec<[f64; 3]>,
    pub values: Vec<f64>,
    pub noise: f64,
    pub seed: u64,
}

/// Uniform tensor grid on the closed unit square/cube, boundary nodes
/// included. Row-major with the last axis fastest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    pub dim: usize,
    pub n: usize,
}

impl Grid {
    pub fn new(dim: usize, n: usize) -> Grid {
        assert!(n >= 2, "grid needs at least 2 nodes per axis");
        assert!((2..=3).contains(&dim));
        Grid { dim, n }
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        1.0 / (self.n - 1) as f64
    }

    pub fn coord(&self, i: usize) -> f64 {
        i as f64 / (self.n - 1) as f64
    }

    /// Flat index of multi-index `ids` (last axis fastest).
    pub fn index(&self, ids: &[usize]) -> usize {
        debug_assert_eq!(ids.len(), self.dim);
        ids.iter().fold(0, |acc, &i| acc * self.n + i)
    }

    pub fn point(&self, mut idx: usize) -> [f64; 3] {
        let mut out = [0.0; 3];
        for axis in (0..self.dim).rev() {
            out[axis] = self.coord(idx % self.n);
            idx /= self.n;
        }
        out
    }

    pub fn points(&self) -> impl Iterator<Item = [f64; 3]> + '_ {
        (0..self.len()).map(move |i| self.point(i))
    }
}

/// Frame snapshot, forcing value and coordinates of an interior point.
#[derive(Debug, Clone)]
pub struct InteriorPoint {
    pub x: [f64; 3],
    pub frame: FrameData,
    pub f: f64,
}

#[derive(Debug, Clone)]
pub struct DirichletPoint {
    pub x: [f64; 3],
    pub g: f64,
}

#[derive(Debug, Clone)]
pub struct NeumannPoint {
    pub x: [f64; 3],
    pub normal: [f64; 3],
    pub frame: FrameData,
}

/// Everything the loss needs per collocation point, computed once per run.
#[derive(Debug, Clone)]
pub struct PointData {
    pub dim: usize,
    pub interior: Vec<InteriorPoint>,
    pub dirichlet: Vec<DirichletPoint>,
    pub neumann: Vec<NeumannPoint>,
    pub frame_fallbacks: usize,
}

fn seeds<S: Scalar>(x: &[f64], to_s: impl Fn(f64) -> S, dim: usize, order: usize) -> Vec<Jet<S>> {
    (0..dim)
        .map(|k| Jet::seed_coordinate(k, to_s(x[k]), dim, order))
        .collect()
}

fn seeds_f64(x: &[f64], dim: usize, order: usize) -> Vec<Jet<f64>> {
    seeds(x, |v| v, dim, order)
}

impl ProblemInstance {
    pub fn new(setup: Setup, case: CaseParams, epsilon: f64) -> ProblemInstance {
        assert!(epsilon >= 0.0, "anisotropy strength must be >= 0");
        ProblemInstance {
            setup,
            case,
            epsilon,
        }
    }

    pub fn dim(&self) -> usize {
        self.setup.dim()
    }

    /// The background field B as order-1 jets (exact first derivatives).
    pub fn bfield<S: Scalar>(&self, x: &[Jet<S>]) -> Vec<Jet<S>> {
        let m = self.case.m as f64;
        let th = self.case.theta;
        match self.setup {
            Setup::TwoD => {
                let (xx, z) = (x[0], x[1]);
                let x2x = xx * xx - xx;
                let bx = (x2x * z.scale(m * PI).sin()).scale(m * PI * th);
                let bz = (xx.scale(2.0).shift(-1.0) * z.scale(m * PI).cos())
                    .scale(th)
                    .shift(PI);
                vec![bx, bz]
            }
            Setup::ThreeD => {
                let (xx, y, z) = (x[0], x[1], x[2]);
                let x2x = xx * xx - xx;
                let sy = y.scale(3.0 * PI).sin();
                let cy = y.scale(3.0 * PI).cos();
                let sz = z.scale(PI).sin();
                let cz = z.scale(PI).cos();
                let bx = (x2x * sy * sz).scale(2.0 * PI);
                let by = (x2x * sy * sz).scale(PI);
                let bz = ((xx.scale(2.0).shift(-1.0) * sy * cz).scale(2.0)
                    + (x2x * cy * cz).scale(3.0 * PI))
                .shift(2.0 * PI);
                vec![bx, by, bz]
            }
        }
    }

    /// Normalized frame b = B/|B| with perpendicular unit vectors.
    ///
    /// When |B| < FRAME_GUARD the frame falls back to the z-axis; in 3D,
    /// when |b x e_z| < FRAME_GUARD (b parallel to the z-axis) the first
    /// perpendicular falls back to the unit projection of e_x onto the
    /// plane normal to b. Fallbacks are flagged, never NaN.
    pub fn frame<S: Scalar>(&self, x: &[Jet<S>]) -> FieldFrame<S> {
        let dim = self.dim();
        let b_field = self.bfield(x);
        let norm2 = jet::dot(&b_field, &b_field);
        let zero_s = norm2.value().scale(0.0);
        let zero = Jet::constant(zero_s, dim, 1);
        let one = Jet::constant(zero_s.shift(1.0), dim, 1);

        let mut fallback = false;
        let b: Vec<Jet<S>> = if norm2.value().val().sqrt() < FRAME_GUARD {
            fallback = true;
            match dim {
                2 => vec![zero, one],
                _ => vec![zero, zero, one],
            }
        } else {
            let norm = norm2.sqrt();
            b_field.iter().map(|c| *c / norm).collect()
        };

        match dim {
            2 => FieldFrame {
                dim,
                b: b.clone(),
                perp1: vec![-b[1], b[0]],
                perp2: vec![],
                fallback,
            },
            _ => {
                // B_perp1 = b x e_z = (b_y, -b_x, 0)
                let bp1 = [b[1], -b[0], zero];
                let n1sq = jet::dot(&bp1, &bp1);
                let perp1: Vec<Jet<S>> = if n1sq.value().val().sqrt() < FRAME_GUARD {
                    fallback = true;
                    // unit projection of e_x onto the plane normal to b
                    let v = [
                        (b[0] * b[0]).scale(-1.0).shift(1.0),
                        (b[0] * b[1]).scale(-1.0),
                        (b[0] * b[2]).scale(-1.0),
                    ];
                    let n = jet::dot(&v, &v).sqrt();
                    v.iter().map(|c| *c / n).collect()
                } else {
                    let n = n1sq.sqrt();
                    bp1.iter().map(|c| *c / n).collect()
                };
                let perp2 = jet::cross(&b, &perp1).to_vec();
                FieldFrame {
                    dim,
                    b,
                    perp1,
                    perp2,
                    fallback,
                }
            }
        }
    }

    /// Background potential, constant along field lines.
    pub fn phi0<S: Scalar>(&self, x: &[Jet<S>]) -> Jet<S> {
        let m = self.case.m as f64;
        let (th, om) = (self.case.theta, self.case.omega);
        match self.setup {
            Setup::TwoD => {
                let (xx, z) = (x[0], x[1]);
                let x2x = xx * xx - xx;
                let u = xx.scale(PI) + (x2x * z.scale(m * PI).cos()).scale(th);
                u.scale(om).sin()
            }
            Setup::ThreeD => {
                let (xx, y, z) = (x[0], x[1], x[2]);
                let x2x = xx * xx - xx;
                let u = xx.scale(PI) + x2x * y.scale(3.0 * PI).sin() * z.scale(PI).cos();
                u.scale(om).sin()
            }
        }
    }

    /// The eps-scaled perturbation profile p.
    pub fn perturbation<S: Scalar>(&self, x: &[Jet<S>]) -> Jet<S> {
        match self.setup {
            Setup::TwoD => x[1].scale(2.0 * PI).cos() * x[0].scale(PI).sin(),
            Setup::ThreeD => {
                x[2].scale(2.0 * PI).cos() * x[0].scale(PI).sin() * x[1].scale(PI).sin()
            }
        }
    }

    /// Exact solution phi_e = phi0 + eps p.
    pub fn exact_phi<S: Scalar>(&self, x: &[Jet<S>]) -> Jet<S> {
        self.phi0(x) + self.perturbation(x).scale(self.epsilon)
    }

    pub fn exact_phi_value(&self, x: &[f64]) -> f64 {
        self.exact_phi(&seeds_f64(x, self.dim(), 1)).value()
    }

    /// Exact auxiliaries (tau, [chi,] sigma) as order-1 jets.
    ///
    /// sigma = grad(p) . b carries no eps factor: together with the identity
    /// b . grad(phi0) = 0 it satisfies grad(phi_e) . b = eps sigma for every
    /// eps >= 0, including eps = 0.
    pub fn exact_solution(&self, x: &[f64]) -> ExactSolution {
        let d = self.dim();
        let x2 = seeds_f64(x, d, 2);
        let x1 = seeds_f64(x, d, 1);
        let frame = self.frame(&x1);
        let phi_e = self.exact_phi(&x2);
        let p = self.perturbation(&x2);
        let grad_phi: Vec<Jet<f64>> = (0..d).map(|i| phi_e.partial(i)).collect();
        let grad_p: Vec<Jet<f64>> = (0..d).map(|i| p.partial(i)).collect();
        let tau = jet::dot(&grad_phi, &frame.perp1);
        let chi = (d == 3).then(|| jet::dot(&grad_phi, &frame.perp2));
        let sigma = jet::dot(&grad_p, &frame.b);
        ExactSolution {
            phi: phi_e.lower(),
            tau,
            chi,
            sigma,
        }
    }

    /// Forcing via the eps-stable split f = -lap_perp(phi0) - eps
    /// lap_perp(p) - lap_par(p); valid because lap_par(phi0) = 0.
    pub fn forcing(&self, x: &[f64]) -> f64 {
        let d = self.dim();
        let x2 = seeds_f64(x, d, 2);
        let x1 = seeds_f64(x, d, 1);
        let pf = self.frame(&x1).point_frame();
        let a0 = jet::anisotropic_operators(&self.phi0(&x2), &pf);
        let ap = jet::anisotropic_operators(&self.perturbation(&x2), &pf);
        -a0.lap_perp - self.epsilon * ap.lap_perp - ap.lap_par
    }

    /// b . grad(phi0); identically zero in exact arithmetic.
    pub fn b_dot_grad_phi0(&self, x: &[f64]) -> f64 {
        let d = self.dim();
        let x1 = seeds_f64(x, d, 1);
        let frame = self.frame(&x1);
        let phi0 = self.phi0(&x1);
        (0..d).map(|i| frame.b[i].value() * phi0.grad(i)).sum()
    }

    pub fn on_dirichlet(&self, x: &[f64]) -> bool {
        let on_face = |v: f64| v.abs() < 1e-12 || (v - 1.0).abs() < 1e-12;
        match self.setup {
            Setup::TwoD => on_face(x[0]),
            Setup::ThreeD => on_face(x[0]) || on_face(x[1]),
        }
    }

    pub fn on_neumann(&self, x: &[f64]) -> bool {
        let z = x[self.dim() - 1];
        z.abs() < 1e-12 || (z - 1.0).abs() < 1e-12
    }

    /// Dirichlet trace g = phi_e restricted to the Dirichlet boundary.
    pub fn dirichlet_g(&self, x: &[f64]) -> Result<f64, ProblemError> {
        if !self.on_dirichlet(x) {
            return Err(ProblemError::NotOnDirichlet(x[..self.dim()].to_vec()));
        }
        Ok(self.exact_phi_value(x))
    }

    /// Random collocation points: interior uniform on the open domain,
    /// boundary counts split equally across the faces of each group (any
    /// remainder goes to the earlier faces), Neumann normals +-e_z.
    pub fn sample(&self, n_f: usize, n_d: usize, n_n: usize, seed: u64) -> CollocationSet {
        let d = self.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let open_unit = |rng: &mut ChaCha8Rng| loop {
            let v: f64 = rng.gen();
            if v > 0.0 {
                return v;
            }
        };

        let mut interior = Vec::with_capacity(n_f);
        for _ in 0..n_f {
            let mut p = [0.0; 3];
            for c in p.iter_mut().take(d) {
                *c = open_unit(&mut rng);
            }
            interior.push(p);
        }

        // Dirichlet faces: x-faces, then y-faces in 3D.
        let mut faces: Vec<(usize, f64)> = vec![(0, 0.0), (0, 1.0)];
        if d == 3 {
            faces.push((1, 0.0));
            faces.push((1, 1.0));
        }
        let mut dirichlet = Vec::with_capacity(n_d);
        for (i, &(axis, val)) in faces.iter().enumerate() {
            let count = n_d / faces.len() + usize::from(i < n_d % faces.len());
            for _ in 0..count {
                let mut p = [0.0; 3];
                for (c, coord) in p.iter_mut().enumerate().take(d) {
                    *coord = if c == axis { val } else { rng.gen() };
                }
                dirichlet.push(p);
            }
        }

        let z_axis = d - 1;
        let mut neumann = Vec::with_capacity(n_n);
        for (i, &zv) in [0.0, 1.0].iter().enumerate() {
            let count = n_n / 2 + usize::from(i < n_n % 2);
            for _ in 0..count {
                let mut p = [0.0; 3];
                for (c, coord) in p.iter_mut().enumerate().take(d) {
                    *coord = if c == z_axis { zv } else { rng.gen() };
                }
                let mut normal = [0.0; 3];
                normal[z_axis] = if zv == 0.0 { -1.0 } else { 1.0 };
                neumann.push((p, normal));
            }
        }

        CollocationSet {
            dim: d,
            interior,
            dirichlet,
            neumann,
            seed,
        }
    }

    pub fn eval_grid(&self, n: usize) -> Grid {
        Grid::new(self.dim(), n)
    }

    /// Exact solution at the given points plus additive Gaussian noise of
    /// absolute scale `noise`; zero noise reproduces exact values bit for
    /// bit.
    pub fn observations(&self, points: &[[f64; 3]], noise: f64, seed: u64) -> ObservationSet {
        assert!(noise >= 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = points
            .iter()
            .map(|p| {
                let exact = self.exact_phi_value(p);
                if noise > 0.0 {
                    let eta: f64 = rng.sample(StandardNormal);
                    exact + noise * eta
                } else {
                    exact
                }
            })
            .collect();
        ObservationSet {
            points: points.to_vec(),
            values,
            noise,
            seed,
        }
    }

    /// Frames, forcing and boundary data for a collocation set.
    pub fn point_data(&self, colloc: &CollocationSet) -> PointData {
        let d = self.dim();
        let mut fallbacks = 0;
        let mut frame_at = |x: &[f64; 3]| {
            let data = self.frame(&seeds_f64(x, d, 1)).data();
            fallbacks += usize::from(data.fallback);
            data
        };
        let interior = colloc
            .interior
            .iter()
            .map(|x| InteriorPoint {
                x: *x,
                frame: frame_at(x),
                f: self.forcing(x),
            })
            .collect();
        let neumann = colloc
            .neumann
            .iter()
            .map(|(x, normal)| NeumannPoint {
                x: *x,
                normal: *normal,
                frame: frame_at(x),
            })
            .collect();
        let dirichlet = colloc
            .dirichlet
            .iter()
            .map(|x| DirichletPoint {
                x: *x,
                g: self.dirichlet_g(x).expect("sampled point not on boundary"),
            })
            .collect();
        PointData {
            dim: d,
            interior,
            dirichlet,
            neumann,
            frame_fallbacks: fallbacks,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inst(setup: Setup, case: usize, eps: f64) -> ProblemInstance {
        ProblemInstance::new(setup, CaseParams::preset(case).unwrap(), eps)
    }

    fn bvals(inst: &ProblemInstance, x: &[f64]) -> Vec<f64> {
        inst.bfield(&seeds_f64(x, inst.dim(), 1))
            .iter()
            .map(|j| j.value())
            .collect()
    }

    #[test]
    fn case1_field_is_vertical() {
        let p = inst(Setup::TwoD, 1, 1.0);
        for x in [[0.1, 0.9, 0.0], [0.5, 0.5, 0.0], [0.77, 0.01, 0.0]] {
            let b = bvals(&p, &x);
            assert_eq!(b[0], 0.0);
            assert!((b[1] - PI).abs() < 1e-15);
        }
    }

    #[test]
    fn case2_field_on_left_edge() {
        let p = inst(Setup::TwoD, 2, 1.0);
        for z in [0.0, 0.3, 0.71] {
            let b = bvals(&p, &[0.0, z, 0.0]);
            assert!(b[0].abs() < 1e-15);
            let expect = PI - 2.0 * (PI * z).cos();
            assert!((b[1] - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn setup2_field_on_x0_face() {
        let p = inst(Setup::ThreeD, 2, 1.0);
        for (y, z) in [(0.2, 0.6), (0.9, 0.1)] {
            let b = bvals(&p, &[0.0, y, z]);
            assert!(b[0].abs() < 1e-15 && b[1].abs() < 1e-15);
            let expect = 2.0 * PI - 2.0 * (3.0 * PI * y).sin() * (PI * z).cos();
            assert!((b[2] - expect).abs() < 1e-13);
        }
    }

    #[test]
    fn frame_examples() {
        let p = inst(Setup::TwoD, 1, 1.0);
        let fr = p.frame(&seeds_f64(&[0.4, 0.6], 2, 1));
        assert!(!fr.fallback);
        assert!((fr.b[0].value()).abs() < 1e-15);
        assert!((fr.b[1].value() - 1.0).abs() < 1e-15);
        assert!((fr.perp1[0].value() + 1.0).abs() < 1e-15);
        assert!(fr.perp1[1].value().abs() < 1e-15);
    }

    #[test]
    fn frame_3d_cross_product() {
        // a synthetic check through the generic frame math: B = (1,0,0)
        // happens on no Setup II point, so drive the construction directly.
        let b = [
            Jet::<f64>::constant(1.0, 3, 1),
            Jet::constant(0.0, 3, 1),
            Jet::constant(0.0, 3, 1),
        ];
        let bp1 = [b[1], -b[0], b[2].scale(0.0)];
        let perp2 = jet::cross(&b, &bp1);
        assert_eq!(bp1[0].value(), 0.0);
        assert_eq!(bp1[1].value(), -1.0);
        assert_eq!(perp2[0].value(), 0.0);
        assert_eq!(perp2[1].value(), 0.0);
        assert_eq!(perp2[2].value(), -1.0);
    }

    #[test]
    fn frame_3d_parallel_fallback() {
        // On a z-face of Setup II the field is numerically parallel to e_z,
        // forcing the perpendicular fallback frame.
        let p = inst(Setup::ThreeD, 2, 1.0);
        let fr = p.frame(&seeds_f64(&[0.4, 0.6, 0.0], 3, 1));
        assert!(fr.fallback);
        let sign = fr.b[2].value().signum();
        assert!((fr.b[2].value().abs() - 1.0).abs() < 1e-12);
        assert!((fr.perp1[0].value() - 1.0).abs() < 1e-10);
        assert!(fr.perp1[1].value().abs() < 1e-10);
        assert!((fr.perp2[1].value() - sign).abs() < 1e-10);
    }

    #[test]
    fn frame_orthonormal_on_random_points() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for &(setup, case) in &[
            (Setup::TwoD, 1),
            (Setup::TwoD, 2),
            (Setup::TwoD, 3),
            (Setup::ThreeD, 2),
        ] {
            let p = inst(setup, case, 1e-2);
            let d = p.dim();
            for _ in 0..2500 {
                let x: [f64; 3] = [rng.gen(), rng.gen(), rng.gen()];
                let fr = p.frame(&seeds_f64(&x, d, 1));
                let val = |v: &[Jet<f64>], i: usize| v[i].value();
                let dotv = |a: &[Jet<f64>], b: &[Jet<f64>]| -> f64 {
                    (0..d).map(|i| val(a, i) * val(b, i)).sum()
                };
                assert!((dotv(&fr.b, &fr.b) - 1.0).abs() < 1e-12);
                assert!((dotv(&fr.perp1, &fr.perp1) - 1.0).abs() < 1e-12);
                assert!(dotv(&fr.b, &fr.perp1).abs() < 1e-12);
                if d == 3 {
                    assert!((dotv(&fr.perp2, &fr.perp2) - 1.0).abs() < 1e-12);
                    assert!(dotv(&fr.b, &fr.perp2).abs() < 1e-12);
                    assert!(dotv(&fr.perp1, &fr.perp2).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn exact_phi_examples() {
        let p = inst(Setup::TwoD, 1, 1.0);
        // phi0 = sin(2 pi x) vanishes at x=0.5; perturbation is 1 at (0.5, 0)
        assert!((p.exact_phi_value(&[0.5, 0.0, 0.0]) - 1.0).abs() < 1e-13);
        for z in [0.0, 0.4, 1.0] {
            assert!(p.exact_phi_value(&[0.0, z, 0.0]).abs() < 1e-13);
        }
        let p0 = inst(Setup::TwoD, 2, 0.0);
        let x = [0.3, 0.7, 0.0];
        let phi0 = p0.phi0(&seeds_f64(&x, 2, 1)).value();
        assert_eq!(p0.exact_phi_value(&x), phi0);
    }

    #[test]
    fn sigma_example_and_eps_independence() {
        let p = inst(Setup::TwoD, 1, 1.0);
        let sol = p.exact_solution(&[0.5, 0.25, 0.0]);
        assert!((sol.sigma.value() + 2.0 * PI).abs() < 1e-12);

        let tiny = inst(Setup::TwoD, 1, 1e-20);
        let a = p.exact_solution(&[0.37, 0.81, 0.0]).sigma.value();
        let b = tiny.exact_solution(&[0.37, 0.81, 0.0]).sigma.value();
        assert_eq!(a, b);
    }

    #[test]
    fn sigma_and_normal_derivative_vanish_on_neumann_boundary() {
        for &(setup, case) in &[(Setup::TwoD, 1), (Setup::TwoD, 3), (Setup::ThreeD, 2)] {
            let p = inst(setup, case, 1e-2);
            let d = p.dim();
            for i in 0..20 {
                let t = (i as f64 + 0.5) / 20.0;
                for zv in [0.0, 1.0] {
                    let mut x = [t, 0.37 * t + 0.1, 0.0];
                    x[d - 1] = zv;
                    let sol = p.exact_solution(&x);
                    assert!(sol.sigma.value().abs() < 1e-12);
                    assert!(sol.phi.grad(d - 1).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn forcing_case1_closed_form() {
        let p = inst(Setup::TwoD, 1, 0.0);
        for (x, z) in [(0.21, 0.55), (0.6, 0.9)] {
            let expect = 4.0 * PI * PI * (2.0 * PI * x).sin()
                + 4.0 * PI * PI * (2.0 * PI * z).cos() * (PI * x).sin();
            let got = p.forcing(&[x, z, 0.0]);
            assert!(
                (got - expect).abs() < 1e-10 * expect.abs().max(1.0),
                "f({x},{z}) = {got}, expected {expect}"
            );
        }
    }

    #[test]
    fn forcing_is_continuous_at_vanishing_eps() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for &(setup, case) in &[(Setup::TwoD, 2), (Setup::ThreeD, 2)] {
            let tiny = inst(setup, case, 1e-20);
            let zero = inst(setup, case, 0.0);
            for _ in 0..50 {
                let x = [rng.gen(), rng.gen(), rng.gen()];
                let (a, b) = (tiny.forcing(&x), zero.forcing(&x));
                assert!(a.is_finite());
                assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn forcing_matches_unsplit_finite_differences_at_eps_one() {
        // -lap_perp(phi_e) - (1/eps) lap_par(phi_e) by second differences of
        // phi_e along the frame directions, eps = 1 only.
        let p = inst(Setup::TwoD, 2, 1.0);
        let h = 1e-5;
        let phi = |x: f64, z: f64| p.exact_phi_value(&[x, z, 0.0]);
        for (x0, z0) in [(0.31, 0.42), (0.66, 0.18)] {
            // full Laplacian and directional second derivative via FD of the
            // directional first derivative of phi_e
            let fr = p.frame(&seeds_f64(&[x0, z0, 0.0], 2, 1));
            let dir_deriv = |x: f64, z: f64| -> f64 {
                let frx = p.frame(&seeds_f64(&[x, z, 0.0], 2, 1));
                let b = [frx.b[0].value(), frx.b[1].value()];
                let gx = (phi(x + h, z) - phi(x - h, z)) / (2.0 * h);
                let gz = (phi(x, z + h) - phi(x, z - h)) / (2.0 * h);
                b[0] * gx + b[1] * gz
            };
            let _ = fr;
            // lap_par = div(b (b.grad phi)) via FD divergence of the vector field
            let vec_field = |x: f64, z: f64| -> [f64; 2] {
                let frx = p.frame(&seeds_f64(&[x, z, 0.0], 2, 1));
                let g = dir_deriv(x, z);
                [frx.b[0].value() * g, frx.b[1].value() * g]
            };
            let lap_par = (vec_field(x0 + h, z0)[0] - vec_field(x0 - h, z0)[0]) / (2.0 * h)
                + (vec_field(x0, z0 + h)[1] - vec_field(x0, z0 - h)[1]) / (2.0 * h);
            let lap = (phi(x0 + h, z0) - 2.0 * phi(x0, z0) + phi(x0 - h, z0)) / (h * h)
                + (phi(x0, z0 + h) - 2.0 * phi(x0, z0) + phi(x0, z0 - h)) / (h * h);
            let fd = -(lap - lap_par) - lap_par;
            let got = p.forcing(&[x0, z0, 0.0]);
            assert!(
                (got - fd).abs() <= 1e-4 * fd.abs().max(1.0),
                "forcing {got} vs unsplit fd {fd}"
            );
        }
    }

    #[test]
    fn aligned_field_directional_split_matches_fd() {
        // Setup I Case 2 frame, psi = sin(pi x) cos(2 pi z)
        let p = inst(Setup::TwoD, 2, 1.0);
        let x0 = [0.3, 0.7, 0.0];
        let psi = |x: f64, z: f64| (PI * x).sin() * (2.0 * PI * z).cos();
        let h = 1e-5;
        let dir_deriv = |x: f64, z: f64| -> f64 {
            let fr = p.frame(&seeds_f64(&[x, z, 0.0], 2, 1));
            let gx = (psi(x + h, z) - psi(x - h, z)) / (2.0 * h);
            let gz = (psi(x, z + h) - psi(x, z - h)) / (2.0 * h);
            fr.b[0].value() * gx + fr.b[1].value() * gz
        };
        let field = |x: f64, z: f64| -> [f64; 2] {
            let fr = p.frame(&seeds_f64(&[x, z, 0.0], 2, 1));
            let g = dir_deriv(x, z);
            [fr.b[0].value() * g, fr.b[1].value() * g]
        };
        let fd_lap_par = (field(x0[0] + h, x0[1])[0] - field(x0[0] - h, x0[1])[0]) / (2.0 * h)
            + (field(x0[0], x0[1] + h)[1] - field(x0[0], x0[1] - h)[1]) / (2.0 * h);

        let x2 = seeds_f64(&x0, 2, 2);
        let psi_jet = x2[0].scale(PI).sin() * x2[1].scale(2.0 * PI).cos();
        let pf = p.frame(&seeds_f64(&x0, 2, 1)).point_frame();
        let ops = jet::anisotropic_operators(&psi_jet, &pf);
        assert!(
            (ops.lap_par - fd_lap_par).abs() <= 1e-5 * fd_lap_par.abs().max(1.0),
            "lap_par {} vs fd {}",
            ops.lap_par,
            fd_lap_par
        );
    }

    #[test]
    fn field_identity_on_grid() {
        // max |b . grad phi0| over the evaluation grid, all setups/cases
        for &(setup, case, n) in &[
            (Setup::TwoD, 1, 60),
            (Setup::TwoD, 2, 60),
            (Setup::TwoD, 3, 60),
            (Setup::ThreeD, 1, 16),
            (Setup::ThreeD, 2, 16),
            (Setup::ThreeD, 3, 16),
        ] {
            let p = inst(setup, case, 1e-2);
            let grid = p.eval_grid(n);
            let max = grid
                .points()
                .map(|x| p.b_dot_grad_phi0(&x).abs())
                .fold(0.0, f64::max);
            assert!(max < 1e-10, "{setup:?} case {case}: max |b.grad phi0| = {max}");
        }
    }

    #[test]
    fn dirichlet_trace_examples() {
        let p2 = inst(Setup::TwoD, 2, 1.0);
        for z in [0.0, 0.35, 1.0] {
            assert!(p2.dirichlet_g(&[1.0, z, 0.0]).unwrap().abs() < 1e-12);
        }
        assert!(p2.dirichlet_g(&[0.5, 0.5, 0.0]).is_err());

        let p3 = inst(Setup::ThreeD, 2, 1.0);
        assert!(p3.dirichlet_g(&[0.5, 0.0, 0.5]).unwrap().abs() < 1e-12);
        let g = p3.dirichlet_g(&[0.25, 1.0, 0.5]).unwrap();
        assert!((g - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sampling_is_seeded_and_split_equally() {
        let p = inst(Setup::TwoD, 1, 1.0);
        let a = p.sample(200, 100, 50, 7);
        let b = p.sample(200, 100, 50, 7);
        assert_eq!(a.interior, b.interior);
        assert_eq!(a.dirichlet, b.dirichlet);
        assert_eq!(a.neumann, b.neumann);

        assert_eq!(a.dirichlet.iter().filter(|p| p[0] == 0.0).count(), 50);
        assert_eq!(a.dirichlet.iter().filter(|p| p[0] == 1.0).count(), 50);
        assert!(a
            .interior
            .iter()
            .all(|p| p[0] > 0.0 && p[0] < 1.0 && p[1] > 0.0 && p[1] < 1.0));
        for (pt, n) in &a.neumann {
            assert!(pt[1] == 0.0 || pt[1] == 1.0);
            assert_eq!(n[1], if pt[1] == 0.0 { -1.0 } else { 1.0 });
        }

        let c = p.sample(200, 100, 50, 8);
        assert_ne!(a.interior, c.interior);
    }

    #[test]
    fn grid_examples() {
        let p = inst(Setup::TwoD, 1, 1.0);
        let g = p.eval_grid(2);
        assert_eq!(g.len(), 4);
        let pts: Vec<_> = g.points().collect();
        assert_eq!(pts[0][..2], [0.0, 0.0]);
        assert_eq!(pts[1][..2], [0.0, 1.0]);
        assert_eq!(pts[3][..2], [1.0, 1.0]);

        let g100 = p.eval_grid(100);
        assert_eq!(g100.len(), 10_000);
        assert!((g100.spacing() - 1.0 / 99.0).abs() < 1e-18);
        assert_eq!(g100.coord(99), 1.0);
    }

    #[test]
    fn observation_noise_statistics_and_determinism() {
        let p = inst(Setup::TwoD, 2, 1e-2);
        let colloc = p.sample(4000, 0, 0, 3);
        let clean = p.observations(&colloc.interior, 0.0, 11);
        for (pt, v) in clean.points.iter().zip(&clean.values) {
            assert_eq!(*v, p.exact_phi_value(pt));
        }
        let noisy1 = p.observations(&colloc.interior, 0.01, 11);
        let noisy2 = p.observations(&colloc.interior, 0.01, 11);
        assert_eq!(noisy1.values, noisy2.values);
        let diffs: Vec<f64> = noisy1
            .values
            .iter()
            .zip(&clean.values)
            .map(|(a, b)| a - b)
            .collect();
        let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
        let std = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>()
            / (diffs.len() - 1) as f64)
            .sqrt();
        assert!((std - 0.01).abs() < 0.001, "sample std {std}");
    }

    #[test]
    fn interior_apfos_residuals_vanish_with_exact_solution() {
        // RMS of the first-order system residuals with the exact triple
        // substituted, relative to 1 + RMS f.
        for &setup in &[Setup::TwoD, Setup::ThreeD] {
            for case in 1..=3 {
                for &eps in &[1.0, 1e-2, 1e-20, 0.0] {
                    let p = inst(setup, case, eps);
                    let d = p.dim();
                    let colloc = p.sample(60, 0, 0, 17);
                    let mut ss_res = 0.0;
                    let mut ss_f = 0.0;
                    for x in &colloc.interior {
                        let fr = p.frame(&seeds_f64(x, d, 1));
                        let sol = p.exact_solution(x);
                        let f = p.forcing(x);
                        let tau_n: Vec<Jet<f64>> =
                            (0..d).map(|i| sol.tau * fr.perp1[i]).collect();
                        let mut div = jet::divergence(&tau_n);
                        if let Some(chi) = sol.chi {
                            let chi_n: Vec<Jet<f64>> =
                                (0..d).map(|i| chi * fr.perp2[i]).collect();
                            div += jet::divergence(&chi_n);
                        }
                        let sig_n: Vec<Jet<f64>> = (0..d).map(|i| sol.sigma * fr.b[i]).collect();
                        div += jet::divergence(&sig_n);
                        let r1 = div + f;
                        let gb: f64 = (0..d).map(|i| sol.phi.grad(i) * fr.b[i].value()).sum();
                        let r2 = gb - eps * sol.sigma.value();
                        ss_res += r1 * r1 + r2 * r2;
                        ss_f += f * f;
                    }
                    let n = colloc.interior.len() as f64;
                    let rel = (ss_res / n).sqrt() / (1.0 + (ss_f / n).sqrt());
                    assert!(
                        rel < 1e-10,
                        "{setup:?} case {case} eps {eps:e}: relative residual {rel:e}"
                    );
                }
            }
        }
    }
}
