//! Relative error norms between predicted and exact grid values, and 1D
//! slice extraction for figures.

use serde::{Deserialize, Serialize};

use crate::problem::Grid;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("value vectors differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("exact values are identically zero; relative errors undefined")]
    ZeroExact,
    #[error("slice needs exactly one free axis, got {0} constraints for dim {1}")]
    BadConstraints(usize, usize),
    #[error("constraint axis {0} out of range")]
    BadAxis(usize),
}

/// Relative l1/l2/linf errors on the evaluation grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorTriple {
    pub e1: f64,
    pub e2: f64,
    pub einf: f64,
}

fn norm1(v: impl Iterator<Item = f64>) -> f64 {
    v.map(f64::abs).sum()
}

fn norm2(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum::<f64>().sqrt()
}

fn norminf(v: impl Iterator<Item = f64>) -> f64 {
    v.map(f64::abs).fold(0.0, f64::max)
}

/// Plain discrete vector norms of (pred - exact), each divided by the same
/// norm of exact. No quadrature weights.
pub fn errors(pred: &[f64], exact: &[f64]) -> Result<ErrorTriple, MetricsError> {
    if pred.len() != exact.len() {
        return Err(MetricsError::LengthMismatch(pred.len(), exact.len()));
    }
    let d1 = norm1(exact.iter().copied());
    let d2 = norm2(exact.iter().copied());
    let dinf = norminf(exact.iter().copied());
    if dinf == 0.0 {
        return Err(MetricsError::ZeroExact);
    }
    let diff = || pred.iter().zip(exact).map(|(p, e)| p - e);
    Ok(ErrorTriple {
        e1: norm1(diff()) / d1,
        e2: norm2(diff()) / d2,
        einf: norminf(diff()) / dinf,
    })
}

/// Absolute (unnormalized) l2 distance; obeys the triangle inequality.
pub fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    norm2(a.iter().zip(b).map(|(x, y)| x - y))
}

/// Ordered (coordinate, predicted, exact) rows along the one free axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceProfile {
    /// Free axis index.
    pub axis: usize,
    pub coords: Vec<f64>,
    pub predicted: Vec<f64>,
    pub exact: Vec<f64>,
    /// Fixed (axis, requested value, node value actually used).
    pub fixed: Vec<(usize, f64, f64)>,
    /// One entry per constraint that had to snap to a grid node.
    pub warnings: Vec<String>,
}

/// Nearest grid node with ties rounding down.
fn nearest_node(grid: &Grid, value: f64) -> (usize, bool) {
    let t = value * (grid.n - 1) as f64;
    let idx = (t - 0.5).ceil().clamp(0.0, (grid.n - 1) as f64) as usize;
    let off_node = (t - idx as f64).abs() > 1e-9;
    (idx, off_node)
}

/// Extract a 1D profile by fixing all axes but one to the given values.
/// Off-node constraints snap to the nearest node (round half down) and
/// record a warning rather than interpolating.
pub fn slice(
    grid: &Grid,
    predicted: &[f64],
    exact: &[f64],
    constraints: &[(usize, f64)],
) -> Result<SliceProfile, MetricsError> {
    if constraints.len() + 1 != grid.dim {
        return Err(MetricsError::BadConstraints(constraints.len(), grid.dim));
    }
    if predicted.len() != grid.len() || exact.len() != grid.len() {
        return Err(MetricsError::LengthMismatch(predicted.len(), exact.len()));
    }
    let mut node = vec![usize::MAX; grid.dim];
    let mut fixed = Vec::new();
    let mut warnings = Vec::new();
    for &(axis, value) in constraints {
        if axis >= grid.dim || node[axis] != usize::MAX {
            return Err(MetricsError::BadAxis(axis));
        }
        let (idx, off_node) = nearest_node(grid, value);
        node[axis] = idx;
        fixed.push((axis, value, grid.coord(idx)));
        if off_node {
            warnings.push(format!(
                "axis {axis}: {value} is not a grid node; using nearest node {} (round half down)",
                grid.coord(idx)
            ));
        }
    }
    let free_axis = node
        .iter()
        .position(|&v| v == usize::MAX)
        .expect("one free axis");

    let mut coords = Vec::with_capacity(grid.n);
    let mut pred = Vec::with_capacity(grid.n);
    let mut exct = Vec::with_capacity(grid.n);
    let mut ids = node;
    for i in 0..grid.n {
        ids[free_axis] = i;
        let flat = grid.index(&ids);
        coords.push(grid.coord(i));
        pred.push(predicted[flat]);
        exct.push(exact[flat]);
    }
    Ok(SliceProfile {
        axis: free_axis,
        coords,
        predicted: pred,
        exact: exct,
        fixed,
        warnings,
    })
}
