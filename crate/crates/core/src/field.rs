//! Space-time samples on a lattice node set times the time mesh.

use crate::error::{Error, Result};
use crate::grid::SpaceGrid;
use crate::timefrac::TimeMesh;

/// Values on `nodes × (N_t + 1)`, stored time-major: `values[k * nodes + i]`.
///
/// `nodes` is either every box node or the Ω nodes in Ω ordering, depending
/// on what the field describes (solutions and data vs. interior coefficients).
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeField {
    nodes: usize,
    mesh: TimeMesh,
    values: Vec<f64>,
}

impl SpaceTimeField {
    pub fn zeros(nodes: usize, mesh: TimeMesh) -> Self {
        Self { nodes, mesh, values: vec![0.0; nodes * mesh.len()] }
    }

    pub fn new(nodes: usize, mesh: TimeMesh, values: Vec<f64>) -> Result<Self> {
        if values.len() != nodes * mesh.len() {
            return Err(Error::Domain(format!(
                "field needs {} values, got {}",
                nodes * mesh.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("field has non-finite values".into()));
        }
        Ok(Self { nodes, mesh, values })
    }

    /// Sample `f(x, t)` on every box node.
    pub fn on_grid(grid: &SpaceGrid, mesh: TimeMesh, f: impl Fn([f64; 2], f64) -> f64) -> Self {
        let mut out = Self::zeros(grid.len(), mesh);
        for k in 0..mesh.len() {
            let t = mesh.t(k);
            for i in 0..grid.len() {
                out.values[k * grid.len() + i] = f(grid.coord(i), t);
            }
        }
        out
    }

    /// Sample `f(x, t)` on Ω nodes.
    pub fn on_omega(grid: &SpaceGrid, mesh: TimeMesh, f: impl Fn([f64; 2], f64) -> f64) -> Self {
        let om = grid.omega();
        let mut out = Self::zeros(om.len(), mesh);
        for k in 0..mesh.len() {
            let t = mesh.t(k);
            for (a, &i) in om.iter().enumerate() {
                out.values[k * om.len() + a] = f(grid.coord(i), t);
            }
        }
        out
    }

    /// Separable `φ(x) θ(t)` on every box node.
    pub fn separable(spatial: &[f64], mesh: TimeMesh, temporal: &[f64]) -> Result<Self> {
        if temporal.len() != mesh.len() {
            return Err(Error::Domain("temporal profile length differs from the mesh".into()));
        }
        let mut values = Vec::with_capacity(spatial.len() * mesh.len());
        for th in temporal {
            values.extend(spatial.iter().map(|p| p * th));
        }
        Self::new(spatial.len(), mesh, values)
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn mesh(&self) -> &TimeMesh {
        &self.mesh
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn slice(&self, k: usize) -> &[f64] {
        &self.values[k * self.nodes..(k + 1) * self.nodes]
    }

    pub fn slice_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.values[k * self.nodes..(k + 1) * self.nodes]
    }

    pub fn get(&self, node: usize, k: usize) -> f64 {
        self.values[k * self.nodes + node]
    }

    /// Time history at one node.
    pub fn series(&self, node: usize) -> Vec<f64> {
        (0..self.mesh.len()).map(|k| self.get(node, k)).collect()
    }

    pub fn reversed_in_time(&self) -> Self {
        let mut values = Vec::with_capacity(self.values.len());
        for k in (0..self.mesh.len()).rev() {
            values.extend_from_slice(self.slice(k));
        }
        Self { values, ..self.clone() }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }

    /// Whether every time slice equals the first.
    pub fn is_time_invariant(&self) -> bool {
        let first = self.slice(0);
        (1..self.mesh.len()).all(|k| self.slice(k) == first)
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { values: self.values.iter().map(|v| c * v).collect(), ..self.clone() }
    }

    pub fn axpy(&mut self, c: f64, other: &Self) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += c * b;
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    /// Restrict a full-grid field to Ω nodes.
    pub fn restrict(&self, idx: &[usize]) -> Self {
        let mut values = Vec::with_capacity(idx.len() * self.mesh.len());
        for k in 0..self.mesh.len() {
            let s = self.slice(k);
            values.extend(idx.iter().map(|&i| s[i]));
        }
        Self { nodes: idx.len(), mesh: self.mesh, values }
    }

    /// Space-time `L²` norm with cell volume `vol` and trapezoid weights in time.
    pub fn l2_norm(&self, vol: f64) -> f64 {
        let w = self.mesh.trapezoid_weights();
        let mut acc = 0.0;
        for (k, wk) in w.iter().enumerate() {
            acc += wk * self.slice(k).iter().map(|v| v * v).sum::<f64>();
        }
        (acc * vol).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_and_reversal() {
        let mesh = TimeMesh::new(1.0, 2, 0.5).unwrap();
        let f = SpaceTimeField::new(2, mesh, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(f.slice(1), &[2.0, 3.0]);
        assert_eq!(f.series(1), vec![1.0, 3.0, 5.0]);
        assert_eq!(f.reversed_in_time().slice(0), &[4.0, 5.0]);
        assert!(SpaceTimeField::new(2, mesh, vec![0.0; 5]).is_err());
        assert!(SpaceTimeField::new(1, mesh, vec![0.0, f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn l2_of_constant() {
        let mesh = TimeMesh::new(2.0, 8, 0.5).unwrap();
        let f = SpaceTimeField::new(3, mesh, vec![1.0; 27]).unwrap();
        assert!((f.l2_norm(0.5) - (2.0 * 3.0 * 0.5f64).sqrt()).abs() < 1e-14);
    }
}
