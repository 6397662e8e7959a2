//! Reverse-mode automatic differentiation on a scalar tape.
//!
//! A [`Tape`] records every scalar operation as a node holding its value and
//! the local partial derivatives with respect to its inputs. [`Tape::backward`]
//! replays the nodes once, in strict reverse creation order, accumulating
//! adjoints into every slot; the leading slots are the tracked parameters.
//!
//! The accumulation order is fixed by construction, so repeated backward
//! passes over an unmodified tape are bit-identical, and two identically
//! built tapes produce bit-identical gradients.
//!
//! A tape is single-owner: it must not be shared across threads while nodes
//! are being added or a backward pass runs. Parallelism happens one level up,
//! with one tape per collocation batch and a fixed batch-order reduction.

use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::scalar::Scalar;

/// Operation kind, kept per node for provenance in error messages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum OpTag {
    Param,
    Const,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Tanh,
    Sin,
    Cos,
    Exp,
    Sqrt,
    Square,
    Scale,
    Shift,
    Lincomb,
    Dot,
    Sum,
}

#[derive(Debug, thiserror::Error)]
pub enum TapeError {
    #[error("non-finite parameter at index {index}: {value}")]
    NonFiniteParam { index: usize, value: f64 },
    #[error("node does not belong to this tape")]
    ForeignNode,
}

/// One weighted edge to a parent node: during backward, the parent's adjoint
/// receives `adjoint(child) * partial`.
#[derive(Clone, Copy)]
struct Edge {
    parent: u32,
    partial: f64,
}

struct TapeInner {
    vals: Vec<f64>,
    tags: Vec<OpTag>,
    /// Edge span start per node; node i owns edges[starts[i]..starts[i+1]]
    /// (edges.len() for the last node).
    starts: Vec<u32>,
    edges: Vec<Edge>,
}

impl TapeInner {
    fn push(&mut self, tag: OpTag, val: f64, edges: &[Edge]) -> u32 {
        let idx = self.vals.len() as u32;
        assert!(idx < u32::MAX, "tape node limit exceeded");
        self.vals.push(val);
        self.tags.push(tag);
        self.starts.push(self.edges.len() as u32);
        self.edges.extend_from_slice(edges);
        idx
    }
}

/// Gradient of a scalar loss with respect to the tracked parameters, in the
/// same layout as the parameter vector passed to [`Tape::new`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient(pub Vec<f64>);

impl Gradient {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Append-only tape of scalar operations.
pub struct Tape {
    inner: RefCell<TapeInner>,
    n_params: usize,
}

/// A tracked scalar: an index into its tape plus a cached value.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: u32,
    val: f64,
}

impl Tape {
    /// Start a tape with one tracked node per parameter.
    pub fn new(params: &[f64]) -> Result<Tape, TapeError> {
        for (index, &value) in params.iter().enumerate() {
            if !value.is_finite() {
                return Err(TapeError::NonFiniteParam { index, value });
            }
        }
        let tape = Tape::with_capacity(params.len(), params.len(), 0);
        {
            let mut inner = tape.inner.borrow_mut();
            for &value in params {
                inner.push(OpTag::Param, value, &[]);
            }
        }
        Ok(tape)
    }

    fn with_capacity(n_params: usize, nodes: usize, edges: usize) -> Tape {
        Tape {
            inner: RefCell::new(TapeInner {
                vals: Vec::with_capacity(nodes),
                tags: Vec::with_capacity(nodes),
                starts: Vec::with_capacity(nodes),
                edges: Vec::with_capacity(edges),
            }),
            n_params,
        }
    }

    /// As [`Tape::new`] but preallocating for an expected node/edge count.
    pub fn with_estimate(params: &[f64], nodes: usize, edges: usize) -> Result<Tape, TapeError> {
        for (index, &value) in params.iter().enumerate() {
            if !value.is_finite() {
                return Err(TapeError::NonFiniteParam { index, value });
            }
        }
        let tape = Tape::with_capacity(params.len(), params.len() + nodes, edges);
        {
            let mut inner = tape.inner.borrow_mut();
            for &value in params {
                inner.push(OpTag::Param, value, &[]);
            }
        }
        Ok(tape)
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().vals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The tracked parameter variables, in parameter order.
    pub fn param_vars(&self) -> Vec<Var<'_>> {
        let inner = self.inner.borrow();
        (0..self.n_params)
            .map(|i| Var {
                tape: self,
                idx: i as u32,
                val: inner.vals[i],
            })
            .collect()
    }

    /// An untracked constant node (zero adjoint contribution).
    pub fn constant(&self, val: f64) -> Var<'_> {
        let idx = self.inner.borrow_mut().push(OpTag::Const, val, &[]);
        Var {
            tape: self,
            idx,
            val,
        }
    }

    fn unary(&self, tag: OpTag, val: f64, parent: u32, partial: f64) -> Var<'_> {
        let idx = self
            .inner
            .borrow_mut()
            .push(tag, val, &[Edge { parent, partial }]);
        Var {
            tape: self,
            idx,
            val,
        }
    }

    fn binary(&self, tag: OpTag, val: f64, e0: Edge, e1: Edge) -> Var<'_> {
        let idx = self.inner.borrow_mut().push(tag, val, &[e0, e1]);
        Var {
            tape: self,
            idx,
            val,
        }
    }

    /// `sum_i c_i * x_i + bias` as a single node.
    pub fn lincomb<'t>(&'t self, pairs: &[(Var<'t>, f64)], bias: f64) -> Var<'t> {
        let mut acc = 0.0;
        let mut inner = self.inner.borrow_mut();
        let start = inner.edges.len();
        for (x, c) in pairs {
            debug_assert!(std::ptr::eq(x.tape, self), "lincomb: foreign node");
            acc += c * x.val;
            inner.edges.push(Edge {
                parent: x.idx,
                partial: *c,
            });
        }
        acc += bias;
        let idx = inner.vals.len() as u32;
        inner.vals.push(acc);
        inner.tags.push(OpTag::Lincomb);
        inner.starts.push(start as u32);
        Var {
            tape: self,
            idx,
            val: acc,
        }
    }

    /// `sum_i a_i * b_i` as a single node with both-sided partials.
    pub fn dot<'t>(&'t self, a: &[Var<'t>], b: &[Var<'t>]) -> Var<'t> {
        assert_eq!(a.len(), b.len(), "dot: length mismatch");
        let mut acc = 0.0;
        let mut inner = self.inner.borrow_mut();
        let start = inner.edges.len();
        for (x, y) in a.iter().zip(b) {
            debug_assert!(std::ptr::eq(x.tape, self) && std::ptr::eq(y.tape, self));
            acc += x.val * y.val;
            inner.edges.push(Edge {
                parent: x.idx,
                partial: y.val,
            });
            inner.edges.push(Edge {
                parent: y.idx,
                partial: x.val,
            });
        }
        let idx = inner.vals.len() as u32;
        inner.vals.push(acc);
        inner.tags.push(OpTag::Dot);
        inner.starts.push(start as u32);
        Var {
            tape: self,
            idx,
            val: acc,
        }
    }

    /// `sum_i a_i * b_i + bias` as a single node (neuron pre-activation).
    pub fn dot_bias<'t>(&'t self, a: &[Var<'t>], b: &[Var<'t>], bias: Var<'t>) -> Var<'t> {
        assert_eq!(a.len(), b.len(), "dot_bias: length mismatch");
        let mut acc = 0.0;
        let mut inner = self.inner.borrow_mut();
        let start = inner.edges.len();
        for (x, y) in a.iter().zip(b) {
            acc += x.val * y.val;
            inner.edges.push(Edge {
                parent: x.idx,
                partial: y.val,
            });
            inner.edges.push(Edge {
                parent: y.idx,
                partial: x.val,
            });
        }
        acc += bias.val;
        inner.edges.push(Edge {
            parent: bias.idx,
            partial: 1.0,
        });
        let idx = inner.vals.len() as u32;
        inner.vals.push(acc);
        inner.tags.push(OpTag::Dot);
        inner.starts.push(start as u32);
        Var {
            tape: self,
            idx,
            val: acc,
        }
    }

    /// Left-to-right sum of the given nodes as a single node.
    pub fn sum<'t>(&'t self, terms: &[Var<'t>]) -> Var<'t> {
        assert!(!terms.is_empty(), "sum: empty term list");
        let mut acc = 0.0;
        let mut inner = self.inner.borrow_mut();
        let start = inner.edges.len();
        for t in terms {
            debug_assert!(std::ptr::eq(t.tape, self), "sum: foreign node");
            acc += t.val;
            inner.edges.push(Edge {
                parent: t.idx,
                partial: 1.0,
            });
        }
        let idx = inner.vals.len() as u32;
        inner.vals.push(acc);
        inner.tags.push(OpTag::Sum);
        inner.starts.push(start as u32);
        Var {
            tape: self,
            idx,
            val: acc,
        }
    }

    /// Adjoints of `loss` with respect to the tracked parameters.
    ///
    /// Visits every node exactly once in reverse creation order; calling it
    /// again on the same tape returns bit-identical values.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradient, TapeError> {
        if !std::ptr::eq(loss.tape, self) {
            return Err(TapeError::ForeignNode);
        }
        let inner = self.inner.borrow();
        let n = inner.vals.len();
        debug_assert!((loss.idx as usize) < n);
        let mut adj = vec![0.0f64; n];
        adj[loss.idx as usize] = 1.0;
        let edges = &inner.edges;
        let starts = &inner.starts;
        for i in (self.n_params..n).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            let lo = starts[i] as usize;
            let hi = if i + 1 < n {
                starts[i + 1] as usize
            } else {
                edges.len()
            };
            for e in &edges[lo..hi] {
                adj[e.parent as usize] += a * e.partial;
            }
        }
        adj.truncate(self.n_params);
        Ok(Gradient(adj))
    }

    fn tag(&self, idx: u32) -> OpTag {
        self.inner.borrow().tags[idx as usize]
    }
}

impl<'t> Var<'t> {
    pub fn index(self) -> usize {
        self.idx as usize
    }

    pub fn op(self) -> OpTag {
        self.tape.tag(self.idx)
    }

    fn same_tape(self, other: Var<'t>) {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "operands from different tapes (nodes {} and {})",
            self.idx,
            other.idx
        );
    }

    pub fn recip(self) -> Var<'t> {
        assert!(
            self.val != 0.0,
            "division by zero at node {} ({:?})",
            self.idx,
            self.op()
        );
        let v = 1.0 / self.val;
        self.tape.unary(OpTag::Div, v, self.idx, -v * v)
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        self.same_tape(rhs);
        self.tape.binary(
            OpTag::Add,
            self.val + rhs.val,
            Edge {
                parent: self.idx,
                partial: 1.0,
            },
            Edge {
                parent: rhs.idx,
                partial: 1.0,
            },
        )
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        self.same_tape(rhs);
        self.tape.binary(
            OpTag::Sub,
            self.val - rhs.val,
            Edge {
                parent: self.idx,
                partial: 1.0,
            },
            Edge {
                parent: rhs.idx,
                partial: -1.0,
            },
        )
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        self.same_tape(rhs);
        self.tape.binary(
            OpTag::Mul,
            self.val * rhs.val,
            Edge {
                parent: self.idx,
                partial: rhs.val,
            },
            Edge {
                parent: rhs.idx,
                partial: self.val,
            },
        )
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Var<'t>) -> Var<'t> {
        self.same_tape(rhs);
        assert!(
            rhs.val != 0.0,
            "division by zero at node {} ({:?})",
            rhs.idx,
            rhs.op()
        );
        let v = self.val / rhs.val;
        self.tape.binary(
            OpTag::Div,
            v,
            Edge {
                parent: self.idx,
                partial: 1.0 / rhs.val,
            },
            Edge {
                parent: rhs.idx,
                partial: -v / rhs.val,
            },
        )
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.tape.unary(OpTag::Neg, -self.val, self.idx, -1.0)
    }
}

impl<'t> Scalar for Var<'t> {
    #[inline]
    fn val(self) -> f64 {
        self.val
    }

    fn scale(self, c: f64) -> Self {
        self.tape.unary(OpTag::Scale, c * self.val, self.idx, c)
    }

    fn shift(self, c: f64) -> Self {
        self.tape.unary(OpTag::Shift, self.val + c, self.idx, 1.0)
    }

    fn tanh(self) -> Self {
        let t = self.val.tanh();
        self.tape.unary(OpTag::Tanh, t, self.idx, 1.0 - t * t)
    }

    fn sin(self) -> Self {
        self.tape
            .unary(OpTag::Sin, self.val.sin(), self.idx, self.val.cos())
    }

    fn cos(self) -> Self {
        self.tape
            .unary(OpTag::Cos, self.val.cos(), self.idx, -self.val.sin())
    }

    fn exp(self) -> Self {
        let e = self.val.exp();
        self.tape.unary(OpTag::Exp, e, self.idx, e)
    }

    fn sqrt(self) -> Self {
        assert!(
            self.val >= 0.0,
            "sqrt of negative value {} at node {} ({:?})",
            self.val,
            self.idx,
            self.op()
        );
        let r = self.val.sqrt();
        self.tape.unary(OpTag::Sqrt, r, self.idx, 0.5 / r)
    }

    fn square(self) -> Self {
        self.tape
            .unary(OpTag::Square, self.val * self.val, self.idx, 2.0 * self.val)
    }

    fn sum(terms: &[Self]) -> Self {
        assert!(!terms.is_empty(), "sum: empty term list");
        terms[0].tape.sum(terms)
    }

    fn lincomb(pairs: &[(Self, f64)], bias: f64) -> Self {
        assert!(!pairs.is_empty(), "lincomb: empty term list");
        pairs[0].0.tape.lincomb(pairs, bias)
    }

    fn dot(a: &[Self], b: &[Self]) -> Self {
        assert!(!a.is_empty(), "dot: empty term list");
        a[0].tape.dot(a, b)
    }

    fn dot_bias(a: &[Self], b: &[Self], bias: Self) -> Self {
        bias.tape.dot_bias(a, b, bias)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tracked_nodes_per_param() {
        let tape = Tape::new(&[1.0, 2.0]).unwrap();
        assert_eq!(tape.len(), 2);
        assert_eq!(tape.n_params(), 2);
        let vars = tape.param_vars();
        assert_eq!(vars[0].val(), 1.0);
        assert_eq!(vars[1].val(), 2.0);
    }

    #[test]
    fn empty_tape_empty_gradient() {
        let tape = Tape::new(&[]).unwrap();
        let c = tape.constant(3.0);
        let g = tape.backward(c).unwrap();
        assert!(g.is_empty());
    }

    #[test]
    fn non_finite_param_rejected() {
        assert!(matches!(
            Tape::new(&[f64::NAN]),
            Err(TapeError::NonFiniteParam { index: 0, .. })
        ));
        assert!(Tape::new(&[1.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn product_rule() {
        let tape = Tape::new(&[2.0, 3.0]).unwrap();
        let v = tape.param_vars();
        let z = v[0] * v[1];
        let g = tape.backward(z).unwrap();
        assert_eq!(g.as_slice(), &[3.0, 2.0]);
    }

    #[test]
    fn tanh_derivative_at_zero() {
        let tape = Tape::new(&[0.0]).unwrap();
        let v = tape.param_vars();
        let y = v[0].tanh();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.as_slice(), &[1.0]);
    }

    #[test]
    fn square_derivative() {
        let tape = Tape::new(&[3.0]).unwrap();
        let v = tape.param_vars();
        let y = v[0].square();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.as_slice(), &[6.0]);
    }

    #[test]
    fn sum_of_squares_gradient() {
        let tape = Tape::new(&[1.0, -2.0]).unwrap();
        let v = tape.param_vars();
        let loss = v[0].square() + v[1].square();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.as_slice(), &[2.0, -4.0]);
    }

    #[test]
    fn tanh_affine_gradient() {
        // loss = tanh(w*x + b) at x = 0.5, w = 0, b = 0.
        let tape = Tape::new(&[0.0, 0.0]).unwrap();
        let v = tape.param_vars();
        let loss = (v[0].scale(0.5) + v[1]).tanh();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.as_slice(), &[0.5, 1.0]);
    }

    #[test]
    fn foreign_node_rejected() {
        let a = Tape::new(&[1.0]).unwrap();
        let b = Tape::new(&[1.0]).unwrap();
        let va = a.param_vars()[0];
        assert!(matches!(b.backward(va), Err(TapeError::ForeignNode)));
    }

    #[test]
    #[should_panic(expected = "division by zero")]
    fn division_by_zero_panics() {
        let tape = Tape::new(&[1.0, 0.0]).unwrap();
        let v = tape.param_vars();
        let _ = v[0] / v[1];
    }

    #[test]
    #[should_panic(expected = "sqrt of negative")]
    fn sqrt_of_negative_panics() {
        let tape = Tape::new(&[-1.0]).unwrap();
        let v = tape.param_vars();
        let _ = v[0].sqrt();
    }

    #[test]
    fn every_primitive_has_the_right_derivative() {
        type Case = (fn(Var) -> Var, fn(f64) -> f64);
        let x0 = 0.437;
        let checks: &[Case] = &[
            (|v| -v, |_| -1.0),
            (|v| v.tanh(), |x| 1.0 - x.tanh() * x.tanh()),
            (|v| v.sin(), f64::cos),
            (|v| v.cos(), |x| -x.sin()),
            (|v| v.exp(), f64::exp),
            (|v| v.sqrt(), |x| 0.5 / x.sqrt()),
            (|v| v.square(), |x| 2.0 * x),
            (|v| v.scale(3.25), |_| 3.25),
            (|v| v.shift(-1.5), |_| 1.0),
            (|v| v.recip(), |x| -1.0 / (x * x)),
        ];
        for (op, deriv) in checks {
            let tape = Tape::new(&[x0]).unwrap();
            let y = op(tape.param_vars()[0]);
            let g = tape.backward(y).unwrap();
            let expect = deriv(x0);
            assert!(
                (g.as_slice()[0] - expect).abs() <= 1e-14 * expect.abs().max(1.0),
                "{:?}: {} vs {}",
                y.op(),
                g.as_slice()[0],
                expect
            );
        }
        // binary ops against hand rules
        let tape = Tape::new(&[0.8, -2.5]).unwrap();
        let v = tape.param_vars();
        let sum = tape.backward(v[0] + v[1]).unwrap();
        assert_eq!(sum.as_slice(), &[1.0, 1.0]);
        let diff = tape.backward(v[0] - v[1]).unwrap();
        assert_eq!(diff.as_slice(), &[1.0, -1.0]);
        let quot = tape.backward(v[0] / v[1]).unwrap();
        assert!((quot.as_slice()[0] - 1.0 / -2.5).abs() < 1e-15);
        assert!((quot.as_slice()[1] - (-0.8 / (2.5 * 2.5))).abs() < 1e-15);
    }

    #[test]
    fn backward_is_repeatable_bit_for_bit() {
        let tape = Tape::new(&[0.3, -0.7, 1.1]).unwrap();
        let v = tape.param_vars();
        let e = (v[0] * v[1]).tanh() + v[2].sin().square();
        let g1 = tape.backward(e).unwrap();
        let g2 = tape.backward(e).unwrap();
        assert_eq!(g1, g2);
    }

    #[test]
    fn linearity_of_backward() {
        let tape = Tape::new(&[0.4, 0.9]).unwrap();
        let v = tape.param_vars();
        let f = (v[0] * v[1]).sin();
        let g = v[0].exp() + v[1].square();
        let gf = tape.backward(f).unwrap();
        let gg = tape.backward(g).unwrap();
        let (a, b) = (2.5, -1.25);
        let combo = f.scale(a) + g.scale(b);
        let gc = tape.backward(combo).unwrap();
        for i in 0..2 {
            let expect = a * gf.as_slice()[i] + b * gg.as_slice()[i];
            assert!((gc.as_slice()[i] - expect).abs() <= 1e-15 * expect.abs().max(1.0));
        }
    }

    #[test]
    fn fused_ops_match_primitive_chains() {
        let tape = Tape::new(&[0.2, -0.5, 0.8, 1.5]).unwrap();
        let v = tape.param_vars();
        let fused = tape.lincomb(&[(v[0], 2.0), (v[1], -3.0), (v[2], 0.5)], 1.0);
        let chained = v[0].scale(2.0) + v[1].scale(-3.0) + v[2].scale(0.5).shift(1.0);
        assert_eq!(fused.val(), chained.val());
        let gf = tape.backward(fused).unwrap();
        let gc = tape.backward(chained).unwrap();
        assert_eq!(gf, gc);

        let d = tape.dot(&[v[0], v[1]], &[v[2], v[3]]);
        let m = v[0] * v[2] + v[1] * v[3];
        assert_eq!(d.val(), m.val());
        let gd = tape.backward(d).unwrap();
        let gm = tape.backward(m).unwrap();
        assert_eq!(gd, gm);

        let s = tape.sum(&[v[0], v[1], v[2], v[3]]);
        let gs = tape.backward(s).unwrap();
        assert_eq!(gs.as_slice(), &[1.0, 1.0, 1.0, 1.0]);
    }
}
