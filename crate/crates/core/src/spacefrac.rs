//! Dense lattice realizations of the fractional Laplacian and of its magnetic
//! perturbation, the associated bilinear form, and spectral diagnostics.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{midpoint, SpaceGrid};
use crate::quad;
use crate::special::gamma;

/// `c_{n,s} = 4^s Γ(n/2 + s) / (π^{n/2} |Γ(-s)|)`, matching the Fourier symbol `|ξ|^{2s}`.
pub fn c_ns(dim: usize, s: f64) -> f64 {
    let n = dim as f64;
    4f64.powf(s) * gamma(0.5 * n + s) / (PI.powf(0.5 * n) * gamma(-s).abs())
}

/// Time-indexed magnetic potential stored on Ω nodes (zero elsewhere).
///
/// Off-node values (pair midpoints) are multilinear interpolants of the node
/// values, with non-Ω nodes contributing zero, and vanish outside `B_r(0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MagneticPotential {
    dim: usize,
    n_omega: usize,
    n_times: usize,
    /// `values[(k * n_omega + slot) * dim + d]`
    values: Vec<f64>,
}

impl MagneticPotential {
    pub fn zeros(grid: &SpaceGrid, n_times: usize) -> Self {
        let dim = grid.dim();
        let n_omega = grid.omega().len();
        Self { dim, n_omega, n_times, values: vec![0.0; n_times * n_omega * dim] }
    }

    /// Sample `A(x, t_k)` on Ω nodes.
    pub fn from_fn(grid: &SpaceGrid, times: &[f64], f: impl Fn([f64; 2], f64) -> [f64; 2]) -> Result<Self> {
        let mut a = Self::zeros(grid, times.len());
        for (k, &t) in times.iter().enumerate() {
            for (slot, &i) in grid.omega().iter().enumerate() {
                let v = f(grid.coord(i), t);
                for d in 0..a.dim {
                    a.values[(k * a.n_omega + slot) * a.dim + d] = v[d];
                }
            }
        }
        a.validate()?;
        Ok(a)
    }

    pub fn from_values(grid: &SpaceGrid, n_times: usize, values: Vec<f64>) -> Result<Self> {
        let dim = grid.dim();
        let n_omega = grid.omega().len();
        if values.len() != n_times * n_omega * dim {
            return Err(Error::Coefficient(format!(
                "magnetic potential expects {} values, got {}",
                n_times * n_omega * dim,
                values.len()
            )));
        }
        let a = Self { dim, n_omega, n_times, values };
        a.validate()?;
        Ok(a)
    }

    fn validate(&self) -> Result<()> {
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Coefficient("magnetic potential has non-finite values".into()));
        }
        Ok(())
    }

    pub fn n_times(&self) -> usize {
        self.n_times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn node_value(&self, k: usize, slot: usize) -> [f64; 2] {
        let mut v = [0.0; 2];
        for (d, vd) in v.iter_mut().enumerate().take(self.dim) {
            *vd = self.values[(k * self.n_omega + slot) * self.dim + d];
        }
        v
    }

    pub fn max_norm(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }

    /// `A ↦ -A`.
    pub fn negated(&self) -> Self {
        Self { values: self.values.iter().map(|v| -v).collect(), ..self.clone() }
    }

    /// Time reflection `t ↦ T - t`.
    pub fn time_reversed(&self) -> Self {
        let block = self.n_omega * self.dim;
        let mut values = Vec::with_capacity(self.values.len());
        for k in (0..self.n_times).rev() {
            values.extend_from_slice(&self.values[k * block..(k + 1) * block]);
        }
        Self { values, ..self.clone() }
    }

    /// `A(x, t_k)` at an arbitrary point.
    pub fn eval(&self, grid: &SpaceGrid, x: &[f64; 2], k: usize) -> [f64; 2] {
        let mut out = [0.0; 2];
        if !grid.in_omega_point(x) {
            return out;
        }
        let h = grid.h();
        let l = grid.half_width();
        let fx = (x[0] + l) / h - 0.5;
        let ix = fx.floor();
        let tx = fx - ix;
        let (fy, iy, ty) = if self.dim == 2 {
            let fy = (x[1] + l) / h - 0.5;
            let iy = fy.floor();
            (fy, iy, fy - iy)
        } else {
            (0.0, 0.0, 0.0)
        };
        let _ = fy;
        let corners: &[(isize, isize, f64)] = if self.dim == 1 {
            &[(0, 0, 1.0 - tx), (1, 0, tx)]
        } else {
            &[
                (0, 0, (1.0 - tx) * (1.0 - ty)),
                (1, 0, tx * (1.0 - ty)),
                (0, 1, (1.0 - tx) * ty),
                (1, 1, tx * ty),
            ]
        };
        for &(dx, dy, w) in corners {
            if w == 0.0 {
                continue;
            }
            let Some(node) = grid.node_at(ix as isize + dx, iy as isize + dy) else {
                continue;
            };
            if let Some(slot) = grid.omega_slot(node) {
                let v = self.node_value(k, slot);
                out[0] += w * v[0];
                out[1] += w * v[1];
            }
        }
        out
    }
}

/// Dense operator on all lattice nodes of the box.
#[derive(Debug, Clone, PartialEq)]
pub struct NonlocalOperator {
    pub matrix: DMatrix<f64>,
    /// Exterior contribution per row: the kernel mass outside the box plus
    /// stencil neighbours of the near-field correction that fall outside.
    pub tail: DVector<f64>,
    pub s: f64,
    pub c_ns: f64,
}

impl NonlocalOperator {
    pub fn len(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.nrows() == 0
    }

    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        let v = &self.matrix * DVector::from_column_slice(u);
        v.as_slice().to_vec()
    }

    /// `max |M - Mᵀ| / max |M|`.
    pub fn symmetry_error(&self) -> f64 {
        let m = &self.matrix;
        let scale = m.amax().max(f64::MIN_POSITIVE);
        let mut worst = 0.0_f64;
        for i in 0..m.nrows() {
            for j in (i + 1)..m.ncols() {
                worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
            }
        }
        worst / scale
    }

    /// Rows × columns sub-block.
    pub fn block(&self, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), cols.len(), |a, b| self.matrix[(rows[a], cols[b])])
    }

    /// Same operator with off-diagonal entries weighted by `R_{A(t_k)}`.
    pub fn with_magnetic(&self, grid: &SpaceGrid, a: &MagneticPotential, k: usize) -> Result<Self> {
        if k >= a.n_times() {
            return Err(Error::TimeIndex { index: k, len: a.n_times() });
        }
        let mut out = self.clone();
        if a.is_zero() {
            return Ok(out);
        }
        let n = grid.len();
        let dim = grid.dim();
        // Only pairs whose midpoint lies in Ω can carry R ≠ 1.
        let factors: Vec<Vec<(usize, f64)>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let xi = grid.coord(i);
                let mut row = Vec::new();
                for j in (i + 1)..n {
                    let xj = grid.coord(j);
                    let m = midpoint(&xi, &xj);
                    if !grid.in_omega_point(&m) {
                        continue;
                    }
                    let av = a.eval(grid, &m, k);
                    let phase: f64 = (0..dim).map(|d| (xi[d] - xj[d]) * av[d]).sum();
                    let r = phase.abs().cos();
                    if r != 1.0 {
                        row.push((j, r));
                    }
                }
                row
            })
            .collect();
        for (i, row) in factors.into_iter().enumerate() {
            for (j, r) in row {
                out.matrix[(i, j)] *= r;
                out.matrix[(j, i)] *= r;
            }
        }
        Ok(out)
    }
}

/// Kernel mass `∫_{R^n \ box} |x - y|^{-n-2s} dy` for a point inside the box.
fn exterior_kernel_mass(grid: &SpaceGrid, x: &[f64; 2], s: f64, rule: &(Vec<f64>, Vec<f64>)) -> f64 {
    let l = grid.half_width();
    if grid.dim() == 1 {
        return ((l - x[0]).powf(-2.0 * s) + (l + x[0]).powf(-2.0 * s)) / (2.0 * s);
    }
    // Polar coordinates about x: (1/2s) ∫ ρ(θ)^{-2s} dθ, one smooth piece per edge.
    let edges = [
        (l - x[0], l - x[1], l + x[1]),
        (l + x[0], l + x[1], l - x[1]),
        (l - x[1], l + x[0], l - x[0]),
        (l + x[1], l - x[0], l + x[0]),
    ];
    let mut total = 0.0;
    for (d, along_pos, along_neg) in edges {
        let lo = (-along_neg / d).atan();
        let hi = (along_pos / d).atan();
        let part = quad::gauss_legendre_on(|phi| phi.cos().powf(2.0 * s), lo, hi, rule);
        total += d.powf(-2.0 * s) * part;
    }
    total / (2.0 * s)
}

/// Second moment `∫_cell y_1² |y|^{-n-2s} dy` of the kernel over the own cell.
fn self_cell_moment(dim: usize, h: f64, s: f64, rule: &(Vec<f64>, Vec<f64>)) -> f64 {
    let half = 0.5 * h;
    let p = 2.0 - 2.0 * s;
    if dim == 1 {
        2.0 * half.powf(p) / p
    } else {
        let inner = quad::gauss_legendre_on(|th| (half / th.cos()).powf(p), 0.0, 0.25 * PI, rule);
        4.0 * inner / p
    }
}

/// Assemble `(-Δ)^s` on all box nodes.
///
/// Off-diagonal entries are `-c_{n,s} (h^n |x_i - x_j|^{-n-2s} + κ [j ~ i])`,
/// where `κ [j ~ i]` is the near-field correction coupling axis neighbours
/// (the kernel's second moment over the own cell against the 3-point second
/// difference). The diagonal is the negated off-diagonal row sum plus `tail`,
/// so `L·1 = tail` exactly and the operator is an M-matrix.
pub fn assemble_fractional_laplacian(grid: &SpaceGrid, s: f64) -> Result<NonlocalOperator> {
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::Domain(format!("fractional power s must lie in (0,1), got {s}")));
    }
    let diam = 2.0 * grid.half_width() * (grid.dim() as f64).sqrt();
    if grid.h() >= diam {
        return Err(Error::Geometry("lattice spacing exceeds the box diameter".into()));
    }
    let dim = grid.dim();
    let n = grid.len();
    let h = grid.h();
    let vol = grid.cell_volume();
    let c = c_ns(dim, s);
    let rule = quad::gauss_legendre(48);
    let kappa = self_cell_moment(dim, h, s, &rule) / (2.0 * h * h);
    let expo = -(dim as f64) - 2.0 * s;

    let rows: Vec<(Vec<f64>, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = grid.coord(i);
            let (ix, iy) = grid.lattice(i);
            let mut row = vec![0.0; n];
            for (j, r) in row.iter_mut().enumerate() {
                if j == i {
                    continue;
                }
                let xj = grid.coord(j);
                let d = (xi[0] - xj[0]).hypot(xi[1] - xj[1]);
                *r = -c * vol * d.powf(expo);
            }
            let mut missing = 0usize;
            let offsets: &[(isize, isize)] =
                if dim == 1 { &[(-1, 0), (1, 0)] } else { &[(-1, 0), (1, 0), (0, -1), (0, 1)] };
            for &(dx, dy) in offsets {
                match grid.node_at(ix + dx, iy + dy) {
                    Some(j) => row[j] -= c * kappa,
                    None => missing += 1,
                }
            }
            let tail = c * (exterior_kernel_mass(grid, &xi, s, &rule) + kappa * missing as f64);
            let off: f64 = row.iter().map(|v| -v).sum();
            row[i] = off + tail;
            (row, tail)
        })
        .collect();

    let mut matrix = DMatrix::zeros(n, n);
    let mut tail = DVector::zeros(n);
    for (i, (row, t)) in rows.into_iter().enumerate() {
        for (j, v) in row.into_iter().enumerate() {
            matrix[(i, j)] = v;
        }
        tail[i] = t;
    }
    // Symmetrize exactly: kernel distances agree but summation order can differ.
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (matrix[(i, j)] + matrix[(j, i)]);
            matrix[(i, j)] = v;
            matrix[(j, i)] = v;
        }
    }
    Ok(NonlocalOperator { matrix, tail, s, c_ns: c })
}

/// Assemble `R^s_{A(t_k)}`; the diagonal is that of the `A ≡ 0` operator.
pub fn assemble_magnetic_operator(
    grid: &SpaceGrid,
    s: f64,
    a: &MagneticPotential,
    t_index: usize,
) -> Result<NonlocalOperator> {
    if t_index >= a.n_times() {
        return Err(Error::TimeIndex { index: t_index, len: a.n_times() });
    }
    assemble_fractional_laplacian(grid, s)?.with_magnetic(grid, a, t_index)
}

/// `B_t[u, v] = ⟨R^s_{A(t)} u, v⟩ + ∫_Ω q(t) u v` on the lattice.
#[derive(Debug, Clone)]
pub struct BilinearForm<'a> {
    pub grid: &'a SpaceGrid,
    pub op: NonlocalOperator,
    /// Potential on Ω nodes, in Ω ordering.
    pub q: Vec<f64>,
}

impl<'a> BilinearForm<'a> {
    pub fn new(grid: &'a SpaceGrid, op: NonlocalOperator, q: Vec<f64>) -> Result<Self> {
        if q.len() != grid.omega().len() {
            return Err(Error::Coefficient(format!(
                "q has {} values, Omega has {} nodes",
                q.len(),
                grid.omega().len()
            )));
        }
        Ok(Self { grid, op, q })
    }

    /// Form matrix restricted to Ω dofs, including the cell volume.
    pub fn omega_matrix(&self) -> DMatrix<f64> {
        let om = self.grid.omega();
        let mut b = self.op.block(om, om);
        for (a, q) in self.q.iter().enumerate() {
            b[(a, a)] += q;
        }
        b * self.grid.cell_volume()
    }
}

/// `h^n (vᵀ L u + Σ_Ω q u v)` for fields on all box nodes.
pub fn bilinear_eval(form: &BilinearForm<'_>, u: &[f64], v: &[f64]) -> f64 {
    let lu = form.op.apply(u);
    let mut acc: f64 = lu.iter().zip(v).map(|(a, b)| a * b).sum();
    for (slot, &i) in form.grid.omega().iter().enumerate() {
        acc += form.q[slot] * u[i] * v[i];
    }
    acc * form.grid.cell_volume()
}

/// Uniform-in-time boundedness and coercivity constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FormConstants {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
}

/// Operator norm `‖L_A - L_0‖_2` on Ω dofs.
pub fn magnetic_perturbation_norm(grid: &SpaceGrid, l_a: &NonlocalOperator, l_0: &NonlocalOperator) -> f64 {
    let om = grid.omega();
    let d = l_a.block(om, om) - l_0.block(om, om);
    SymmetricEigen::new(d).eigenvalues.amax()
}

fn whitened(b: &DMatrix<f64>, gram: &DMatrix<f64>) -> Result<DVector<f64>> {
    let chol = gram
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Domain("H^s Gram matrix is not positive definite".into()))?;
    let l = chol.l();
    let linv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Domain("Gram factor is singular".into()))?;
    let mut w = &linv * b * linv.transpose();
    w = (&w + w.transpose()) * 0.5;
    Ok(SymmetricEigen::new(w).eigenvalues)
}

/// Estimate `C_0, c_1, c_2` over a family of forms (one per time node).
///
/// The discrete `H^s` Gram is `h^n (I + L_0)` with `L_0` the `A ≡ 0` operator on Ω;
/// the `L²` Gram is `h^n I`. `c_2 = max_t (‖q(t)‖_∞ + ‖L_{A(t)} - L_0‖_2) + 1`, and
/// `c_1` is the smallest generalized eigenvalue of `(B_t + c_2 M, G)` over `t`.
pub fn estimate_form_constants(forms: &[BilinearForm<'_>], l_0: &NonlocalOperator) -> Result<FormConstants> {
    let Some(first) = forms.first() else {
        return Err(Error::Domain("no forms supplied".into()));
    };
    let grid = first.grid;
    let om = grid.omega();
    let vol = grid.cell_volume();
    let n = om.len();
    let gram = (DMatrix::identity(n, n) + l_0.block(om, om)) * vol;
    let mut c2 = 0.0_f64;
    for f in forms {
        let qmax = f.q.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        c2 = c2.max(qmax + magnetic_perturbation_norm(grid, &f.op, l_0));
    }
    c2 += 1.0;
    let mut c0 = 0.0_f64;
    let mut c1 = f64::INFINITY;
    for f in forms {
        let b = f.omega_matrix();
        c0 = c0.max(whitened(&b, &gram)?.amax());
        let shifted = b + DMatrix::identity(n, n) * (c2 * vol);
        c1 = c1.min(whitened(&shifted, &gram)?.min());
    }
    Ok(FormConstants { c0, c1, c2 })
}

/// `‖u‖ / (‖u‖_W + ‖L u‖_W + ε_mach)` for a field on all box nodes.
pub fn ucp_witness(u: &[f64], w_nodes: &[usize], l: &NonlocalOperator) -> f64 {
    let norm_u = u.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm_u == 0.0 {
        return 0.0;
    }
    let lu = l.apply(u);
    let on_w = |v: &[f64]| w_nodes.iter().map(|&i| v[i] * v[i]).sum::<f64>().sqrt();
    norm_u / (on_w(u) + on_w(&lu) + f64::EPSILON)
}

/// Largest witness ratio over Ω-supported fields: `1 / σ_min(L_{W,Ω})`,
/// together with the maximizing field on all nodes.
pub fn ucp_condition(grid: &SpaceGrid, l: &NonlocalOperator, w_nodes: &[usize]) -> (f64, Vec<f64>) {
    let block = l.block(w_nodes, grid.omega());
    let svd = block.svd(false, true);
    let (idx, smin) = svd
        .singular_values
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, &v)| if v < acc.1 { (i, v) } else { acc });
    let vt = svd.v_t.expect("requested right singular vectors");
    let mut u = vec![0.0; grid.len()];
    for (slot, &i) in grid.omega().iter().enumerate() {
        u[i] = vt[(idx, slot)];
    }
    (1.0 / smin.max(f64::MIN_POSITIVE), u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;

    fn grid_1d(cells: usize) -> SpaceGrid {
        SpaceGrid::new(GridSpec::default_1d(cells)).unwrap()
    }

    #[test]
    fn normalization_constant_1d_half() {
        // c_{1,1/2} = 1/π
        assert!((c_ns(1, 0.5) - 1.0 / PI).abs() < 1e-14);
    }

    #[test]
    fn rejects_bad_power() {
        let g = grid_1d(32);
        assert!(assemble_fractional_laplacian(&g, 0.0).is_err());
        assert!(assemble_fractional_laplacian(&g, 1.0).is_err());
    }

    #[test]
    fn constants_are_annihilated_after_tail() {
        let g = grid_1d(64);
        let l = assemble_fractional_laplacian(&g, 0.3).unwrap();
        let ones = vec![1.0; g.len()];
        let lu = l.apply(&ones);
        for i in 0..g.len() {
            assert!((lu[i] - l.tail[i]).abs() < 1e-10 * l.matrix[(i, i)]);
        }
    }

    #[test]
    fn odd_fields_map_to_odd_fields() {
        let g = grid_1d(64);
        let l = assemble_fractional_laplacian(&g, 0.6).unwrap();
        let u: Vec<f64> = g.coords().iter().map(|x| x[0] * (1.0 - x[0] * x[0])).collect();
        let lu = l.apply(&u);
        let n = g.len();
        let scale = lu.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        for i in 0..n {
            assert!((lu[i] + lu[n - 1 - i]).abs() < 1e-10 * scale);
        }
    }

    #[test]
    fn zero_potential_is_bitwise_laplacian() {
        let g = grid_1d(32);
        let a = MagneticPotential::zeros(&g, 3);
        let l0 = assemble_fractional_laplacian(&g, 0.4).unwrap();
        let la = assemble_magnetic_operator(&g, 0.4, &a, 2).unwrap();
        assert_eq!(l0, la);
        assert!(matches!(
            assemble_magnetic_operator(&g, 0.4, &a, 3),
            Err(Error::TimeIndex { .. })
        ));
    }

    #[test]
    fn magnetic_locality_and_gauge() {
        let g = grid_1d(64);
        let a = MagneticPotential::from_fn(&g, &[0.0], |x, _| [2.0 + x[0], 0.0]).unwrap();
        let l0 = assemble_fractional_laplacian(&g, 0.5).unwrap();
        let la = l0.with_magnetic(&g, &a, 0).unwrap();
        let lm = l0.with_magnetic(&g, &a.negated(), 0).unwrap();
        assert_eq!(la, lm);
        assert!(la.symmetry_error() < 1e-12);
        for i in 0..g.len() {
            for j in 0..g.len() {
                let m = midpoint(&g.coord(i), &g.coord(j));
                if !g.in_omega_point(&m) {
                    assert_eq!(la.matrix[(i, j)], l0.matrix[(i, j)]);
                }
            }
        }
        // rows of Omega against window columns coincide with the plain operator
        for &i in g.omega() {
            for &j in g.w1().iter().chain(g.w2()) {
                assert_eq!(la.matrix[(i, j)], l0.matrix[(i, j)]);
            }
        }
    }

    #[test]
    fn hat_function_energy_is_positive() {
        let g = grid_1d(64);
        let l = assemble_fractional_laplacian(&g, 0.5).unwrap();
        let form = BilinearForm::new(&g, l, vec![0.0; g.omega().len()]).unwrap();
        let mut u = vec![0.0; g.len()];
        u[g.omega()[4]] = 1.0;
        assert!(bilinear_eval(&form, &u, &u) > 0.0);
    }

    #[test]
    fn form_constants_for_plain_operator() {
        let g = grid_1d(64);
        let l = assemble_fractional_laplacian(&g, 0.5).unwrap();
        let form = BilinearForm::new(&g, l.clone(), vec![0.0; g.omega().len()]).unwrap();
        let c = estimate_form_constants(&[form], &l).unwrap();
        assert!((c.c1 - 1.0).abs() < 1e-8, "{c:?}");
        assert!((c.c2 - 1.0).abs() < 1e-12);
        assert!(c.c0 > 0.0 && c.c0 <= 1.0 + 1e-10);
    }

    #[test]
    fn witness_of_zero_is_zero() {
        let g = grid_1d(32);
        let l = assemble_fractional_laplacian(&g, 0.5).unwrap();
        assert_eq!(ucp_witness(&vec![0.0; g.len()], g.w1(), &l), 0.0);
    }
}
