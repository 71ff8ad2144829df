//! One-dimensional cell decompositions of an interval `[a, b]`.
//!
//! Cell `i` is the half-open control volume `[x_{i-1/2}, x_{i+1/2})` with
//! center `x_i` and width `Δx_i`. Interfaces between neighbouring centers
//! have spacing `Δx_{i+1/2} = x_{i+1} - x_i`. A mesh carries the regularity
//! parameter `ξ`, the largest value with `ξ h ≤ Δx_i` for all cells, where
//! `h` is the largest width.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Content fingerprint of a mesh. Equal geometry gives equal ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MeshId(pub u64);

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh1D {
    a: f64,
    b: f64,
    edges: Vec<f64>,
    centers: Vec<f64>,
    widths: Vec<f64>,
    half_widths: Vec<f64>,
    inv_widths: Vec<f64>,
    inv_half_widths: Vec<f64>,
    h: f64,
    xi: f64,
    uniform: bool,
    id: MeshId,
}

impl Mesh1D {
    /// Uniform mesh of `n_cells` equal cells on `[a, b]`.
    pub fn uniform(a: f64, b: f64, n_cells: usize) -> Result<Self> {
        check_interval(a, b)?;
        if n_cells < 2 {
            return Err(Error::InvalidMesh(format!(
                "need at least 2 cells, got {n_cells}"
            )));
        }
        let dx = (b - a) / n_cells as f64;
        let mut edges: Vec<f64> = (0..=n_cells).map(|i| a + i as f64 * dx).collect();
        edges[n_cells] = b;
        let centers = (0..n_cells).map(|i| a + (i as f64 + 0.5) * dx).collect();
        let widths = vec![dx; n_cells];
        let half_widths = vec![dx; n_cells - 1];
        Ok(Self::assemble(a, b, edges, centers, widths, half_widths, true))
    }

    /// Mesh whose cells have the given relative widths, rescaled to fill `[a, b]`.
    pub fn graded(a: f64, b: f64, widths: &[f64]) -> Result<Self> {
        check_interval(a, b)?;
        if widths.len() < 2 {
            return Err(Error::InvalidMesh(format!(
                "need at least 2 cells, got {}",
                widths.len()
            )));
        }
        if let Some(i) = widths.iter().position(|&w| !(w > 0.0 && w.is_finite())) {
            return Err(Error::InvalidMesh(format!(
                "width {} of cell {i} is not positive",
                widths[i]
            )));
        }
        if widths.iter().all(|&w| w == widths[0]) {
            return Self::uniform(a, b, widths.len());
        }
        let n = widths.len();
        let total: f64 = widths.iter().sum();
        let scale = (b - a) / total;
        let mut edges = Vec::with_capacity(n + 1);
        edges.push(a);
        let mut acc = a;
        for &w in &widths[..n - 1] {
            acc += w * scale;
            edges.push(acc);
        }
        edges.push(b);
        if edges.windows(2).any(|e| e[1] <= e[0]) {
            return Err(Error::InvalidMesh(
                "cell widths collapse below floating point resolution".into(),
            ));
        }
        let widths: Vec<f64> = edges.windows(2).map(|e| e[1] - e[0]).collect();
        let centers: Vec<f64> = edges.windows(2).map(|e| 0.5 * (e[0] + e[1])).collect();
        let half_widths = centers.windows(2).map(|c| c[1] - c[0]).collect();
        Ok(Self::assemble(a, b, edges, centers, widths, half_widths, false))
    }

    fn assemble(
        a: f64,
        b: f64,
        edges: Vec<f64>,
        centers: Vec<f64>,
        widths: Vec<f64>,
        half_widths: Vec<f64>,
        uniform: bool,
    ) -> Self {
        let h = widths.iter().copied().fold(0.0, f64::max);
        let min = widths.iter().copied().fold(f64::INFINITY, f64::min);
        let xi = min / h;
        let mut hasher = DefaultHasher::new();
        for e in &edges {
            e.to_bits().hash(&mut hasher);
        }
        let id = MeshId(hasher.finish());
        let inv_widths = widths.iter().map(|w| 1.0 / w).collect();
        let inv_half_widths = half_widths.iter().map(|w| 1.0 / w).collect();
        Self {
            a,
            b,
            edges,
            centers,
            widths,
            half_widths,
            inv_widths,
            inv_half_widths,
            h,
            xi,
            uniform,
            id,
        }
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn len(&self) -> usize {
        self.widths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.widths.is_empty()
    }

    /// Cell edges `x_{1/2}, …, x_{N+1/2}`.
    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    /// Cell widths `Δx_i`.
    pub fn widths(&self) -> &[f64] {
        &self.widths
    }

    /// Center spacings `Δx_{i+1/2}`, one per interior interface.
    pub fn half_widths(&self) -> &[f64] {
        &self.half_widths
    }

    /// `1 / Δx_i`.
    pub fn inv_widths(&self) -> &[f64] {
        &self.inv_widths
    }

    /// `1 / Δx_{i+1/2}`.
    pub fn inv_half_widths(&self) -> &[f64] {
        &self.inv_half_widths
    }

    /// Largest cell width.
    pub fn h(&self) -> f64 {
        self.h
    }

    /// Regularity parameter: smallest width divided by the largest.
    pub fn xi(&self) -> f64 {
        self.xi
    }

    /// True when every cell has exactly the same width.
    pub fn is_uniform(&self) -> bool {
        self.uniform
    }

    pub fn id(&self) -> MeshId {
        self.id
    }

    pub fn length(&self) -> f64 {
        self.b - self.a
    }

    /// Index of the cell `[x_{i-1/2}, x_{i+1/2})` containing `x`. The right
    /// endpoint `b` belongs to the last cell.
    pub fn locate(&self, x: f64) -> Option<usize> {
        if !(x >= self.a && x <= self.b) {
            return None;
        }
        let idx = self.edges.partition_point(|&e| e <= x);
        Some(idx.saturating_sub(1).min(self.len() - 1))
    }

    /// `Σ_i Δx_i u_i`.
    pub fn integrate(&self, u: &[f64]) -> f64 {
        self.widths.iter().zip(u).map(|(w, v)| w * v).sum()
    }
}

fn check_interval(a: f64, b: f64) -> Result<()> {
    if !(a.is_finite() && b.is_finite() && a < b) {
        return Err(Error::InvalidMesh(format!(
            "expected finite a < b, got a = {a}, b = {b}"
        )));
    }
    Ok(())
}

/// `build_uniform_mesh` in free-function form.
pub fn build_uniform_mesh(a: f64, b: f64, n_cells: usize) -> Result<Mesh1D> {
    Mesh1D::uniform(a, b, n_cells)
}

/// `build_graded_mesh` in free-function form.
pub fn build_graded_mesh(a: f64, b: f64, widths: &[f64]) -> Result<Mesh1D> {
    Mesh1D::graded(a, b, widths)
}
