//! Forward-propagated spatial derivatives of tracked or plain scalars.
//!
//! A [`Jet`] carries a value, its spatial gradient, and (order 2 only) its
//! spatial Hessian with respect to the coordinates of a 2D or 3D point.
//! Arithmetic propagates derivatives exactly, so divergences and directional
//! Laplacians assemble without symbolic differentiation. Components are
//! ordinary [`Scalar`]s: with `S = Var` every component stays on the tape and
//! remains differentiable with respect to the network parameters.
//!
//! Only the upper triangle of the Hessian is stored; the mirrored entry is
//! the same component, so symmetry holds identically.

// Parallel fixed-size component arrays with a dim-bounded active prefix;
// indexed loops are the clear form here.
#![allow(clippy::needless_range_loop)]

use crate::scalar::Scalar;

/// Hessian slot count for the packed upper triangle.
const fn tri(dim: usize) -> usize {
    dim * (dim + 1) / 2
}

/// Packed upper-triangle index for i <= j.
#[inline]
fn tri_idx(dim: usize, i: usize, j: usize) -> usize {
    debug_assert!(i <= j && j < dim);
    i * dim - i * (i + 1) / 2 + j
}

/// Value plus spatial gradient plus (order 2) spatial Hessian at a point.
#[derive(Clone, Copy, Debug)]
pub struct Jet<S> {
    dim: u8,
    order: u8,
    v: S,
    g: [S; 3],
    h: [S; 6],
}

impl<S: Scalar> Jet<S> {
    /// Seed the k-th coordinate: value `x0`, gradient the k-th unit vector,
    /// Hessian zero. Panics when `k >= dim` or dim/order are out of range.
    pub fn seed_coordinate(k: usize, x0: S, dim: usize, order: usize) -> Jet<S> {
        assert!((2..=3).contains(&dim), "jet dim must be 2 or 3, got {dim}");
        assert!(
            (1..=2).contains(&order),
            "jet order must be 1 or 2, got {order}"
        );
        assert!(k < dim, "seed axis {k} out of range for dim {dim}");
        let zero = x0.scale(0.0);
        let one = zero.shift(1.0);
        let mut g = [zero; 3];
        g[k] = one;
        Jet {
            dim: dim as u8,
            order: order as u8,
            v: x0,
            g,
            h: [zero; 6],
        }
    }

    /// Assemble a jet from already-computed components. `g` holds the first
    /// `dim` gradient entries; `h` the packed upper triangle when order 2.
    pub fn from_parts(v: S, g: &[S], h: &[S], dim: usize, order: usize) -> Jet<S> {
        assert!((2..=3).contains(&dim) && (1..=2).contains(&order));
        assert_eq!(g.len(), dim);
        assert_eq!(h.len(), if order == 2 { tri(dim) } else { 0 });
        let mut ga = [v; 3];
        ga[..dim].copy_from_slice(g);
        let mut ha = [v; 6];
        ha[..h.len()].copy_from_slice(h);
        Jet {
            dim: dim as u8,
            order: order as u8,
            v,
            g: ga,
            h: ha,
        }
    }

    /// A constant with zero derivatives.
    pub fn constant(v: S, dim: usize, order: usize) -> Jet<S> {
        assert!((2..=3).contains(&dim) && (1..=2).contains(&order));
        let zero = v.scale(0.0);
        Jet {
            dim: dim as u8,
            order: order as u8,
            v,
            g: [zero; 3],
            h: [zero; 6],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    pub fn order(&self) -> usize {
        self.order as usize
    }

    pub fn value(&self) -> S {
        self.v
    }

    pub fn grad(&self, i: usize) -> S {
        assert!(i < self.dim(), "grad axis {i} out of range");
        self.g[i]
    }

    /// Hessian entry; the (j,i) read returns the identical component.
    pub fn hess(&self, i: usize, j: usize) -> S {
        assert_eq!(self.order, 2, "hess on an order-1 jet");
        assert!(i < self.dim() && j < self.dim(), "hess index out of range");
        let (lo, hi) = if i <= j { (i, j) } else { (j, i) };
        self.h[tri_idx(self.dim(), lo, hi)]
    }

    fn check_same(&self, other: &Jet<S>) {
        assert_eq!(self.dim, other.dim, "jet dim mismatch");
        assert_eq!(self.order, other.order, "jet order mismatch");
    }

    fn map2(
        &self,
        other: &Jet<S>,
        v: S,
        mut fg: impl FnMut(S, S) -> S,
        mut fh: impl FnMut(usize, usize, S, S) -> S,
    ) -> Jet<S> {
        let d = self.dim();
        let mut g = self.g;
        for i in 0..d {
            g[i] = fg(self.g[i], other.g[i]);
        }
        let mut h = self.h;
        if self.order == 2 {
            for i in 0..d {
                for j in i..d {
                    let k = tri_idx(d, i, j);
                    h[k] = fh(i, j, self.h[k], other.h[k]);
                }
            }
        }
        Jet {
            dim: self.dim,
            order: self.order,
            v,
            g,
            h,
        }
    }

    /// Multiply every component by a constant; exact for affine maps.
    pub fn scale(&self, c: f64) -> Jet<S> {
        let d = self.dim();
        let mut g = self.g;
        for gi in g.iter_mut().take(d) {
            *gi = gi.scale(c);
        }
        let mut h = self.h;
        if self.order == 2 {
            for hk in h.iter_mut().take(tri(d)) {
                *hk = hk.scale(c);
            }
        }
        Jet {
            dim: self.dim,
            order: self.order,
            v: self.v.scale(c),
            g,
            h,
        }
    }

    /// Add a constant to the value; derivatives unchanged.
    pub fn shift(&self, c: f64) -> Jet<S> {
        Jet {
            v: self.v.shift(c),
            ..*self
        }
    }

    /// Chain rule through a unary map with derivative `d1` and, at order 2,
    /// second derivative `d2`.
    fn chain(&self, v: S, d1: S, d2: impl FnOnce() -> S) -> Jet<S> {
        let d = self.dim();
        let mut g = self.g;
        for i in 0..d {
            g[i] = d1 * self.g[i];
        }
        let mut h = self.h;
        if self.order == 2 {
            let d2 = d2();
            for i in 0..d {
                for j in i..d {
                    let k = tri_idx(d, i, j);
                    h[k] = d1 * self.h[k] + d2 * self.g[i] * self.g[j];
                }
            }
        }
        Jet {
            dim: self.dim,
            order: self.order,
            v,
            g,
            h,
        }
    }

    pub fn tanh(&self) -> Jet<S> {
        let t = self.v.tanh();
        let d1 = t.square().scale(-1.0).shift(1.0);
        self.chain(t, d1, || (t * d1).scale(-2.0))
    }

    pub fn sin(&self) -> Jet<S> {
        let s = self.v.sin();
        let d1 = self.v.cos();
        self.chain(s, d1, || s.scale(-1.0))
    }

    pub fn cos(&self) -> Jet<S> {
        let c = self.v.cos();
        let d1 = self.v.sin().scale(-1.0);
        self.chain(c, d1, || c.scale(-1.0))
    }

    pub fn exp(&self) -> Jet<S> {
        let e = self.v.exp();
        self.chain(e, e, || e)
    }

    pub fn sqrt(&self) -> Jet<S> {
        let r = self.v.sqrt();
        let one = r.scale(0.0).shift(1.0);
        let d1 = one / r.scale(2.0);
        self.chain(r, d1, || (d1.square() / r).scale(-1.0))
    }

    pub fn square(&self) -> Jet<S> {
        *self * *self
    }

    /// Drop the Hessian of an order-2 jet, keeping value and gradient.
    pub fn lower(&self) -> Jet<S> {
        assert_eq!(self.order, 2, "lower requires an order-2 jet");
        Jet { order: 1, ..*self }
    }

    /// Order-1 jet of the i-th partial derivative of an order-2 jet.
    pub fn partial(&self, i: usize) -> Jet<S> {
        assert_eq!(self.order, 2, "partial requires an order-2 jet");
        let d = self.dim();
        assert!(i < d);
        let mut g = self.g;
        for (j, gj) in g.iter_mut().enumerate().take(d) {
            *gj = self.hess(i, j);
        }
        Jet {
            dim: self.dim,
            order: 1,
            v: self.g[i],
            g,
            h: self.h,
        }
    }

    /// Trace of the Hessian.
    pub fn laplacian(&self) -> S {
        assert_eq!(self.order, 2, "laplacian requires an order-2 jet");
        let d = self.dim();
        let diag: Vec<S> = (0..d).map(|i| self.hess(i, i)).collect();
        S::sum(&diag)
    }

    /// Gradient dotted with a constant vector.
    pub fn grad_dot(&self, w: &[f64]) -> S {
        let d = self.dim();
        assert_eq!(w.len(), d, "grad_dot: vector length mismatch");
        let pairs: Vec<(S, f64)> = (0..d).map(|i| (self.g[i], w[i])).collect();
        S::lincomb(&pairs, 0.0)
    }
}

impl<S: Scalar> std::ops::Add for Jet<S> {
    type Output = Jet<S>;
    fn add(self, rhs: Jet<S>) -> Jet<S> {
        self.check_same(&rhs);
        self.map2(&rhs, self.v + rhs.v, |a, b| a + b, |_, _, a, b| a + b)
    }
}

impl<S: Scalar> std::ops::Sub for Jet<S> {
    type Output = Jet<S>;
    fn sub(self, rhs: Jet<S>) -> Jet<S> {
        self.check_same(&rhs);
        self.map2(&rhs, self.v - rhs.v, |a, b| a - b, |_, _, a, b| a - b)
    }
}

impl<S: Scalar> std::ops::Mul for Jet<S> {
    type Output = Jet<S>;
    fn mul(self, rhs: Jet<S>) -> Jet<S> {
        self.check_same(&rhs);
        // product rule to second order
        let d = self.dim();
        let mut g = self.g;
        for i in 0..d {
            g[i] = self.g[i] * rhs.v + self.v * rhs.g[i];
        }
        let mut h = self.h;
        if self.order == 2 {
            for i in 0..d {
                for j in i..d {
                    let k = tri_idx(d, i, j);
                    h[k] = self.h[k] * rhs.v
                        + self.g[i] * rhs.g[j]
                        + self.g[j] * rhs.g[i]
                        + self.v * rhs.h[k];
                }
            }
        }
        Jet {
            dim: self.dim,
            order: self.order,
            v: self.v * rhs.v,
            g,
            h,
        }
    }
}

impl<S: Scalar> std::ops::Div for Jet<S> {
    type Output = Jet<S>;
    fn div(self, rhs: Jet<S>) -> Jet<S> {
        self.check_same(&rhs);
        let d = self.dim();
        let q = self.v / rhs.v;
        let mut g = self.g;
        for i in 0..d {
            g[i] = (self.g[i] - q * rhs.g[i]) / rhs.v;
        }
        let mut h = self.h;
        if self.order == 2 {
            for i in 0..d {
                for j in i..d {
                    let k = tri_idx(d, i, j);
                    h[k] = (self.h[k] - g[i] * rhs.g[j] - g[j] * rhs.g[i] - q * rhs.h[k]) / rhs.v;
                }
            }
        }
        Jet {
            dim: self.dim,
            order: self.order,
            v: q,
            g,
            h,
        }
    }
}

impl<S: Scalar> std::ops::Neg for Jet<S> {
    type Output = Jet<S>;
    fn neg(self) -> Jet<S> {
        self.scale(-1.0)
    }
}

/// Divergence of a vector field given as one jet per component.
pub fn divergence<S: Scalar>(v: &[Jet<S>]) -> S {
    let d = v.len();
    assert!((2..=3).contains(&d), "divergence needs 2 or 3 components");
    for c in v {
        assert_eq!(c.dim(), d, "divergence: component dim mismatch");
    }
    let parts: Vec<S> = (0..d).map(|i| v[i].grad(i)).collect();
    S::sum(&parts)
}

/// Dot product of two jet vectors.
pub fn dot<S: Scalar>(a: &[Jet<S>], b: &[Jet<S>]) -> Jet<S> {
    assert_eq!(a.len(), b.len());
    let mut acc = a[0] * b[0];
    for i in 1..a.len() {
        acc = acc + a[i] * b[i];
    }
    acc
}

/// Cross product of two 3-component jet vectors.
pub fn cross<S: Scalar>(a: &[Jet<S>], b: &[Jet<S>]) -> [Jet<S>; 3] {
    assert_eq!(a.len(), 3);
    assert_eq!(b.len(), 3);
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Unit field direction and its first derivatives at one point, the inputs
/// the directional operators need. `db[c][i]` is the i-th partial of the
/// c-th component.
#[derive(Clone, Copy, Debug)]
pub struct PointFrame {
    pub dim: usize,
    pub b: [f64; 3],
    pub db: [[f64; 3]; 3],
}

impl PointFrame {
    pub fn div_b(&self) -> f64 {
        (0..self.dim).map(|i| self.db[i][i]).sum()
    }
}

/// Directional split of gradient and Laplacian with respect to a frame.
#[derive(Clone, Copy, Debug)]
pub struct AnisoOps<S> {
    pub dim: usize,
    /// b . grad(psi)
    pub grad_b: S,
    pub grad_par: [S; 3],
    pub grad_perp: [S; 3],
    pub lap_par: S,
    pub lap_perp: S,
}

/// Parallel/perpendicular gradient and Laplacian of an order-2 jet.
///
/// lap_par assembles (div b)(b.grad psi) + b.grad(b.grad psi) from psi's
/// Hessian and the frame's first derivatives; lap_perp = lap - lap_par.
pub fn anisotropic_operators<S: Scalar>(psi: &Jet<S>, frame: &PointFrame) -> AnisoOps<S> {
    assert_eq!(psi.order(), 2, "anisotropic operators require order-2 jets");
    let d = psi.dim();
    assert_eq!(frame.dim, d, "frame dim mismatch");
    let b = &frame.b;
    let div_b = frame.div_b();

    let grad_b = psi.grad_dot(&b[..d]);
    let mut grad_par = [grad_b; 3];
    let mut grad_perp = [grad_b; 3];
    for i in 0..d {
        grad_par[i] = grad_b.scale(b[i]);
        grad_perp[i] = psi.grad(i) - grad_par[i];
    }

    // coefficient of psi_j: (div b) b_j + sum_i b_i d_i b_j
    let mut pairs: Vec<(S, f64)> = Vec::with_capacity(d + tri(d));
    for j in 0..d {
        let mut c = div_b * b[j];
        for i in 0..d {
            c += b[i] * frame.db[j][i];
        }
        pairs.push((psi.grad(j), c));
    }
    // coefficient of psi_ij: b_i b_j, doubled off the diagonal
    for i in 0..d {
        for j in i..d {
            let c = if i == j { b[i] * b[i] } else { 2.0 * b[i] * b[j] };
            pairs.push((psi.hess(i, j), c));
        }
    }
    let lap_par = S::lincomb(&pairs, 0.0);
    let lap_perp = psi.laplacian() - lap_par;

    AnisoOps {
        dim: d,
        grad_b,
        grad_par,
        grad_perp,
        lap_par,
        lap_perp,
    }
}
