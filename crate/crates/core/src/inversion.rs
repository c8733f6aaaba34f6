//! Reconstruction from DN data: regularized Runge control synthesis and
//! Gauss–Newton / Tikhonov recovery of `q`, of `A` up to sign, and of the
//! coefficients of a power-type semilinearity.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dnmap::{measure, DNRecord, Flavor, SourceBasis};
use crate::error::{Error, Result};
use crate::field::SpaceTimeField;
use crate::forward::{ForwardModel, SemilinearSpec};
use crate::grid::SpaceGrid;
use crate::spacefrac::MagneticPotential;
use crate::timefrac::TimeMesh;

/// Piecewise-constant partition of `Ω × [0, T]` into recovery cells.
#[derive(Debug, Clone, PartialEq)]
pub struct CellPartition {
    per_axis: usize,
    dim: usize,
    r: f64,
    space_cells: usize,
    time_cells: usize,
    space_of_slot: Vec<usize>,
    time_of_node: Vec<usize>,
    mesh: TimeMesh,
    cell_volume: f64,
}

impl CellPartition {
    /// `per_axis` intervals of `[-r, r]` per spatial axis, `time_cells` intervals of `[0, T]`.
    pub fn new(grid: &SpaceGrid, mesh: TimeMesh, per_axis: usize, time_cells: usize) -> Result<Self> {
        if per_axis == 0 || time_cells == 0 || time_cells > mesh.steps() {
            return Err(Error::Domain("cell counts must be positive and resolvable by the mesh".into()));
        }
        let r = grid.r_omega();
        let bin = |x: f64| (((x + r) / (2.0 * r) * per_axis as f64).floor().max(0.0) as usize).min(per_axis - 1);
        let space_of_slot: Vec<usize> = grid
            .omega()
            .iter()
            .map(|&i| {
                let x = grid.coord(i);
                if grid.dim() == 1 {
                    bin(x[0])
                } else {
                    bin(x[1]) * per_axis + bin(x[0])
                }
            })
            .collect();
        let space_cells = per_axis.pow(grid.dim() as u32);
        for c in 0..space_cells {
            if !space_of_slot.contains(&c) {
                return Err(Error::Geometry(format!("recovery cell {c} contains no Omega node")));
            }
        }
        let tf = mesh.t_final();
        let time_of_node = mesh
            .times()
            .iter()
            .map(|&t| ((t / tf * time_cells as f64).floor() as usize).min(time_cells - 1))
            .collect();
        Ok(Self { per_axis, dim: grid.dim(), r, space_cells, time_cells, space_of_slot, time_of_node, mesh, cell_volume: grid.cell_volume() })
    }

    pub fn len(&self) -> usize {
        self.space_cells * self.time_cells
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn space_cells(&self) -> usize {
        self.space_cells
    }

    pub fn time_cells(&self) -> usize {
        self.time_cells
    }

    /// Cell of Ω slot `slot` at mesh node `k`.
    pub fn cell_of(&self, slot: usize, k: usize) -> usize {
        self.time_of_node[k] * self.space_cells + self.space_of_slot[slot]
    }

    pub fn space_cell_of(&self, slot: usize) -> usize {
        self.space_of_slot[slot]
    }

    pub fn time_cell_of(&self, k: usize) -> usize {
        self.time_of_node[k]
    }

    /// Piecewise-constant field on Ω nodes.
    pub fn field(&self, coeffs: &[f64]) -> SpaceTimeField {
        let n = self.space_of_slot.len();
        let mut f = SpaceTimeField::zeros(n, self.mesh);
        for k in 0..self.mesh.len() {
            let sl = f.slice_mut(k);
            for (slot, v) in sl.iter_mut().enumerate() {
                *v = coeffs[self.cell_of(slot, k)];
            }
        }
        f
    }

    /// Tensor piecewise-linear hats on `refine * per_axis + 1` nodes per space axis
    /// and `refine * time_cells + 1` time nodes, with their node multi-indices.
    pub fn hats(&self, refine: usize, coords: &[[f64; 2]]) -> Vec<SpaceTimeField> {
        let nx = refine * self.per_axis;
        let nt = refine * self.time_cells;
        let hx = 2.0 * self.r / nx as f64;
        let ht = self.mesh.t_final() / nt as f64;
        let hat = |x: f64, c: f64, w: f64| (1.0 - ((x - c) / w).abs()).max(0.0);
        let ny = if self.dim == 2 { nx } else { 0 };
        let mut out = Vec::new();
        for it in 0..=nt {
            for iy in 0..=ny {
                for ix in 0..=nx {
                    let mut v = Vec::with_capacity(coords.len() * self.mesh.len());
                    for t in self.mesh.times() {
                        let ft = hat(t, it as f64 * ht, ht);
                        v.extend(coords.iter().map(|x| {
                            let fy = if self.dim == 2 { hat(x[1], -self.r + iy as f64 * hx, hx) } else { 1.0 };
                            ft * fy * hat(x[0], -self.r + ix as f64 * hx, hx)
                        }));
                    }
                    out.push(SpaceTimeField::new(coords.len(), self.mesh, v).expect("consistent sizes"));
                }
            }
        }
        out
    }

    /// First-difference operator between neighbouring hat nodes (all axes).
    pub fn hat_gradient(&self, refine: usize) -> DMatrix<f64> {
        let nx = refine * self.per_axis + 1;
        let ny = if self.dim == 2 { nx } else { 1 };
        let nt = refine * self.time_cells + 1;
        let idx = |ix: usize, iy: usize, it: usize| (it * ny + iy) * nx + ix;
        let mut rows: Vec<(usize, usize)> = Vec::new();
        for it in 0..nt {
            for iy in 0..ny {
                for ix in 0..nx {
                    if ix + 1 < nx {
                        rows.push((idx(ix, iy, it), idx(ix + 1, iy, it)));
                    }
                    if iy + 1 < ny {
                        rows.push((idx(ix, iy, it), idx(ix, iy + 1, it)));
                    }
                    if it + 1 < nt {
                        rows.push((idx(ix, iy, it), idx(ix, iy, it + 1)));
                    }
                }
            }
        }
        let mut d = DMatrix::zeros(rows.len(), nx * ny * nt);
        for (r, (a, b)) in rows.into_iter().enumerate() {
            d[(r, a)] = -1.0;
            d[(r, b)] = 1.0;
        }
        d
    }

    pub fn indicator(&self, m: usize) -> SpaceTimeField {
        let mut c = vec![0.0; self.len()];
        c[m] = 1.0;
        self.field(&c)
    }

    /// Weighted cell averages (trapezoid in time, `h^n` in space).
    pub fn project(&self, f: &SpaceTimeField) -> Vec<f64> {
        let w = self.mesh.trapezoid_weights();
        let mut num = vec![0.0; self.len()];
        let mut den = vec![0.0; self.len()];
        for (k, wk) in w.iter().enumerate() {
            for slot in 0..self.space_of_slot.len() {
                let m = self.cell_of(slot, k);
                num[m] += wk * f.get(slot, k);
                den[m] += wk;
            }
        }
        num.iter().zip(&den).map(|(a, b)| if *b > 0.0 { a / b } else { 0.0 }).collect()
    }

    /// Relative `L²(Ω × (0,T))` errors of the cell estimate against the cell
    /// projection of `truth` and against `truth` itself.
    pub fn relative_errors(&self, coeffs: &[f64], truth: &SpaceTimeField) -> (f64, f64) {
        let proj = self.field(&self.project(truth));
        let est = self.field(coeffs);
        let vol = self.cell_volume;
        let rel = |a: &SpaceTimeField, b: &SpaceTimeField| {
            let nb = b.l2_norm(vol);
            let d = a.sub(b).l2_norm(vol);
            if nb == 0.0 {
                d
            } else {
                d / nb
            }
        };
        (rel(&est, &proj), rel(&est, truth))
    }
}

/// Outcome of one coefficient reconstruction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub target: String,
    pub space_cells: usize,
    pub time_cells: usize,
    /// Cell values, index `time_cell * space_cells + space_cell`.
    pub estimate: Vec<f64>,
    /// Relative data misfit `‖data - prediction‖ / ‖data‖`.
    pub residual: f64,
    /// Relative error against the cell projection of the truth.
    pub error_vs_truth: Option<f64>,
    /// Relative error against the truth sampled on nodes.
    pub error_vs_truth_nodes: Option<f64>,
    /// `Some("up to global sign")` for the magnetic potential.
    pub sign_resolved: Option<String>,
    pub flagged_cells: Vec<usize>,
    pub iterations: usize,
}

impl RecoveryReport {
    fn new(target: &str, cells: &CellPartition, estimate: Vec<f64>, residual: f64, iterations: usize) -> Self {
        Self {
            target: target.to_string(),
            space_cells: cells.space_cells(),
            time_cells: cells.time_cells(),
            estimate,
            residual,
            error_vs_truth: None,
            error_vs_truth_nodes: None,
            sign_resolved: None,
            flagged_cells: Vec::new(),
            iterations,
        }
    }

    fn with_truth(mut self, cells: &CellPartition, truth: Option<&SpaceTimeField>) -> Self {
        if let Some(t) = truth {
            let (p, n) = cells.relative_errors(&self.estimate, t);
            self.error_vs_truth = Some(p);
            self.error_vs_truth_nodes = Some(n);
        }
        self
    }

    /// Space cell holding the largest `|estimate|` (summed over time cells).
    pub fn peak_space_cell(&self) -> usize {
        let mut mass = vec![0.0; self.space_cells];
        for (m, v) in self.estimate.iter().enumerate() {
            mass[m % self.space_cells] += v.abs();
        }
        (0..self.space_cells).fold(0, |b, i| if mass[i] > mass[b] { i } else { b })
    }
}

/// Options for the regularized least-squares solves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TikhonovOptions {
    /// Regularization relative to the mean diagonal of `JᵀJ`.
    pub reg: f64,
    pub max_iter: usize,
    /// Stop when the update is below `tol` relative to the estimate.
    pub tol: f64,
    /// `0`: unknowns are cell values. `r > 0`: unknowns are piecewise-linear hat
    /// coefficients on a lattice `r` times finer than the cells, penalized by
    /// first differences; the estimate is their cell average.
    pub refine: usize,
    /// Weight of the identity term relative to the difference penalty when `refine > 0`.
    pub ridge: f64,
}

impl Default for TikhonovOptions {
    fn default() -> Self {
        Self { reg: 1e-4, max_iter: 10, tol: 1e-4, refine: 3, ridge: 1e-2 }
    }
}

/// Mean diagonal of `JᵀJ`.
fn mean_diagonal(j: &DMatrix<f64>) -> f64 {
    (j.norm_squared() / j.ncols().max(1) as f64).max(f64::MIN_POSITIVE)
}

/// Gauss–Newton step for `min ‖J δ - r‖² + lam ‖P (c + δ)‖²`, `P = I` by default.
fn tikhonov_solve_penalized(
    j: &DMatrix<f64>,
    r: &DVector<f64>,
    lam: f64,
    penalty: Option<&DMatrix<f64>>,
    current: &DVector<f64>,
) -> Result<DVector<f64>> {
    let jt = j.transpose();
    let mut n = &jt * j;
    let mut rhs = &jt * r;
    match penalty {
        Some(p) => {
            let ptp = p.transpose() * p;
            n += &ptp * lam;
            rhs -= &ptp * current * lam;
        }
        None => {
            for i in 0..n.nrows() {
                n[(i, i)] += lam;
            }
            rhs -= current * lam;
        }
    }
    n.cholesky()
        .map(|c| c.solve(&rhs))
        .ok_or_else(|| Error::Domain("regularized normal matrix is not positive definite".into()))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn check_record(model: &ForwardModel, data: &DNRecord, basis: &SourceBasis) -> Result<()> {
    if data.flavor != Flavor::Forward {
        return Err(Error::GeometryMismatch("recovery expects a forward DN record".into()));
    }
    if data.geometry != model.grid().fingerprint() || data.mesh != *model.mesh() || data.n_sources != basis.len() {
        return Err(Error::GeometryMismatch("DN record does not match the model and basis".into()));
    }
    Ok(())
}

pub fn predict(model: &ForwardModel, basis: &SourceBasis, receivers: &[usize]) -> Result<(Vec<SpaceTimeField>, Vec<f64>)> {
    let out: Vec<(SpaceTimeField, Vec<f64>)> = (0..basis.len())
        .into_par_iter()
        .map(|a| {
            let u = model
                .solve_caputo(&basis.element(a), None)
                .map_err(|e| Error::Source { index: a, source: Box::new(e) })?;
            let m = measure(model, &u, receivers);
            Ok((u, m))
        })
        .collect::<Result<_>>()?;
    let (us, ms): (Vec<_>, Vec<_>) = out.into_iter().unzip();
    Ok((us, ms.concat()))
}

/// Measurements of the responses `δu` to interior sources `-w_m u_a` for every
/// source `a` and weight `w_m`; columns follow `weights`.
fn sensitivity(
    model: &ForwardModel,
    states: &[SpaceTimeField],
    weights: &[SpaceTimeField],
    receivers: &[usize],
    transform: impl Fn(f64) -> f64 + Sync,
) -> Result<DMatrix<f64>> {
    let grid = model.grid();
    let mesh = *model.mesh();
    let om = grid.omega();
    let zero = SpaceTimeField::zeros(grid.len(), mesh);
    let per_source = receivers.len() * mesh.len();
    let blocks: Vec<Vec<Vec<f64>>> = states
        .par_iter()
        .map(|u| {
            let local = u.restrict(om);
            weights
                .iter()
                .map(|w| {
                    let mut src = SpaceTimeField::zeros(om.len(), mesh);
                    for ((s, a), b) in src.values_mut().iter_mut().zip(w.values()).zip(local.values()) {
                        *s = -a * transform(*b);
                    }
                    let du = model.solve_caputo(&zero, Some(&src))?;
                    Ok(measure(model, &du, receivers))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let mut j = DMatrix::zeros(states.len() * per_source, weights.len());
    for (a, cols) in blocks.into_iter().enumerate() {
        for (m, col) in cols.into_iter().enumerate() {
            for (r, v) in col.into_iter().enumerate() {
                j[(a * per_source + r, m)] = v;
            }
        }
    }
    Ok(j)
}

/// Gauss–Newton / Tikhonov recovery of `q - q_ref` on recovery cells from a
/// forward DN record generated with the unknown potential.
pub fn recover_q_linear(
    reference: &ForwardModel,
    data: &DNRecord,
    basis: &SourceBasis,
    cells: &CellPartition,
    opts: &TikhonovOptions,
    truth: Option<&SpaceTimeField>,
) -> Result<RecoveryReport> {
    recover_q_field(reference, data, basis, cells, opts, truth).map(|(r, _)| r)
}

fn recover_q_field(
    reference: &ForwardModel,
    data: &DNRecord,
    basis: &SourceBasis,
    cells: &CellPartition,
    opts: &TikhonovOptions,
    truth: Option<&SpaceTimeField>,
) -> Result<(RecoveryReport, SpaceTimeField)> {
    check_record(reference, data, basis)?;
    let receivers = data.receivers.clone();
    let param = Parametrization::new(reference.grid(), cells, opts);
    let combine = |c: &[f64]| param.combine(c);
    let data_norm = norm(&data.data).max(f64::MIN_POSITIVE);
    let mut c = vec![0.0; param.len()];
    let mut lam = None;
    let mut iterations = 0;
    for it in 0..opts.max_iter.max(1) {
        let mut q = reference.q().clone();
        q.axpy(1.0, &combine(&c));
        let model = reference.with_q(q)?;
        let (states, pred) = predict(&model, basis, &receivers)?;
        let r: Vec<f64> = data.data.iter().zip(&pred).map(|(d, p)| d - p).collect();
        if r.iter().all(|v| *v == 0.0) {
            break;
        }
        let j = sensitivity(&model, &states, &param.weights, &receivers, |u| u)?;
        let lam = *lam.get_or_insert_with(|| opts.reg * mean_diagonal(&j));
        let delta = tikhonov_solve_penalized(&j, &DVector::from_vec(r), lam, param.penalty.as_ref(), &DVector::from_column_slice(&c))?;
        for (ci, d) in c.iter_mut().zip(delta.iter()) {
            *ci += d;
        }
        iterations = it + 1;
        if delta.norm() <= opts.tol * (norm(&c) + f64::MIN_POSITIVE) {
            break;
        }
    }
    let field = combine(&c);
    let mut q = reference.q().clone();
    q.axpy(1.0, &field);
    let (_, pred) = predict(&reference.with_q(q)?, basis, &receivers)?;
    let r: Vec<f64> = data.data.iter().zip(&pred).map(|(d, p)| d - p).collect();
    let estimate = if opts.refine == 0 { c } else { cells.project(&field) };
    let report = RecoveryReport::new("q", cells, estimate, norm(&r) / data_norm, iterations).with_truth(cells, truth);
    Ok((report, field))
}

/// Regularized control synthesis: find window data `g = Σ c_i g_i` with
/// `P g ≈ target` on `Ω × (0, T)`.
#[derive(Debug, Clone)]
pub struct ControlProblem {
    /// Target on Ω nodes.
    pub target: SpaceTimeField,
    pub flavor: Flavor,
    pub reg: f64,
}

impl ControlProblem {
    pub fn new(target: SpaceTimeField, flavor: Flavor, reg: f64) -> Result<Self> {
        if !(reg > 0.0) {
            return Err(Error::Domain(format!("regularization must be positive, got {reg}")));
        }
        if target.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("target is not finite".into()));
        }
        Ok(Self { target, flavor, reg })
    }
}

/// Solutions of all basis elements restricted to Ω, with the weights of the
/// space-time `L²` inner products on Ω and on the window.
#[derive(Debug, Clone)]
pub struct ControlOperator {
    /// Weighted columns `W^{1/2} P g_i`.
    columns: DMatrix<f64>,
    /// Cholesky factor `R` of the basis Gram matrix, `‖g‖² = ‖R c‖²`.
    gram_factor: DMatrix<f64>,
    sqrt_weights: Vec<f64>,
    flavor: Flavor,
    n_slots: usize,
    mesh: TimeMesh,
}

impl ControlOperator {
    pub fn new(model: &ForwardModel, basis: &SourceBasis, flavor: Flavor) -> Result<Self> {
        let grid = model.grid();
        let mesh = *model.mesh();
        let om = grid.omega();
        let vol = grid.cell_volume();
        let w = mesh.trapezoid_weights();
        let sqrt_weights: Vec<f64> = w.iter().map(|wk| (wk * vol).sqrt()).collect();
        let cols: Vec<Vec<f64>> = (0..basis.len())
            .into_par_iter()
            .map(|a| {
                let g = basis.element(a);
                let u = match flavor {
                    Flavor::Forward => model.solve_caputo(&g, None),
                    Flavor::Dual => model.solve_dual(&g, None),
                }?;
                let mut col = Vec::with_capacity(om.len() * mesh.len());
                for k in 0..mesh.len() {
                    col.extend(om.iter().map(|&i| sqrt_weights[k] * u.get(i, k)));
                }
                Ok(col)
            })
            .collect::<Result<_>>()?;
        let rows = om.len() * mesh.len();
        let columns = DMatrix::from_fn(rows, basis.len(), |r, c| cols[c][r]);
        let window = basis.window();
        let mut gram = DMatrix::zeros(basis.len(), basis.len());
        let elements: Vec<SpaceTimeField> = (0..basis.len()).map(|a| basis.element(a)).collect();
        for a in 0..basis.len() {
            for b in a..basis.len() {
                let mut acc = 0.0;
                for k in 0..mesh.len() {
                    for &i in window {
                        acc += w[k] * elements[a].get(i, k) * elements[b].get(i, k);
                    }
                }
                gram[(a, b)] = acc * vol;
                gram[(b, a)] = acc * vol;
            }
        }
        let gram_factor = gram
            .cholesky()
            .ok_or_else(|| Error::Domain("source basis is linearly dependent".into()))?
            .l()
            .transpose();
        Ok(Self { columns, gram_factor, sqrt_weights, flavor, n_slots: om.len(), mesh })
    }

    pub fn basis_len(&self) -> usize {
        self.columns.ncols()
    }
}

/// Result of [`runge_control`].
#[derive(Debug, Clone)]
pub struct RungeControl {
    pub coeffs: Vec<f64>,
    /// `‖P g - target‖ / ‖target‖` in `L²(Ω × (0,T))`.
    pub achieved_error: f64,
    /// `‖g‖` in `L²(W × (0,T))`.
    pub control_norm: f64,
    /// Condition number of the regularized normal equations.
    pub condition: f64,
    /// Set when `condition` exceeds `1e12`.
    pub ill_conditioned: bool,
}

/// `argmin_c ‖P g_c - target‖² + ε ‖g_c‖²` through an SVD of the stacked system.
pub fn runge_control(problem: &ControlProblem, op: &ControlOperator) -> Result<RungeControl> {
    if problem.flavor != op.flavor {
        return Err(Error::Domain("control operator was built for the other flavor".into()));
    }
    if problem.target.nodes() != op.n_slots || *problem.target.mesh() != op.mesh {
        return Err(Error::GeometryMismatch("target must live on Omega nodes over the model mesh".into()));
    }
    let rows = op.columns.nrows();
    let n = op.columns.ncols();
    let mut y = DVector::zeros(rows + n);
    for k in 0..op.mesh.len() {
        for slot in 0..op.n_slots {
            y[k * op.n_slots + slot] = op.sqrt_weights[k] * problem.target.get(slot, k);
        }
    }
    let mut stacked = DMatrix::zeros(rows + n, n);
    stacked.rows_mut(0, rows).copy_from(&op.columns);
    stacked.rows_mut(rows, n).copy_from(&(&op.gram_factor * problem.reg.sqrt()));
    let svd = stacked.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let condition = (smax / smin.max(f64::MIN_POSITIVE)).powi(2);
    let c = svd
        .solve(&y, 0.0)
        .map_err(|e| Error::Domain(format!("control least squares failed: {e}")))?;
    let fit = &op.columns * &c;
    let target_norm = y.rows(0, rows).norm();
    let achieved_error = (fit - y.rows(0, rows)).norm() / target_norm.max(f64::MIN_POSITIVE);
    let control_norm = (&op.gram_factor * &c).norm();
    Ok(RungeControl {
        coeffs: c.iter().copied().collect(),
        achieved_error,
        control_norm,
        condition,
        ill_conditioned: condition > 1e12,
    })
}

/// Cellwise estimate of `q - q_ref` from the integral identity with Runge
/// controls: `u_1 ≈ cell indicator` (forward, reference model) and
/// `u*_2 ≈ 1` (dual, reference model as a stand-in for the unknown one).
///
/// Cells whose controls miss their targets by more than `0.3` are flagged and
/// reported as zero.
pub fn recover_q_runge(
    reference: &ForwardModel,
    data: &DNRecord,
    basis: &SourceBasis,
    dual_basis: &SourceBasis,
    cells: &CellPartition,
    reg: f64,
    truth: Option<&SpaceTimeField>,
) -> Result<RecoveryReport> {
    check_record(reference, data, basis)?;
    let (_, pred) = predict(reference, basis, &data.receivers)?;
    let diff = DNRecord { data: data.data.iter().zip(&pred).map(|(d, p)| d - p).collect(), ..data.clone() };
    // D_ab = ∫⟨(Λ_data - Λ_ref) g_a, h_b⟩
    let d = DMatrix::from_fn(basis.len(), dual_basis.len(), |a, b| diff.pairing(a, &dual_basis.element(b)));
    let fwd = ControlOperator::new(reference, basis, Flavor::Forward)?;
    let dual = ControlOperator::new(reference, dual_basis, Flavor::Dual)?;
    let ones = SpaceTimeField::new(
        reference.grid().omega().len(),
        *reference.mesh(),
        vec![1.0; reference.grid().omega().len() * reference.mesh().len()],
    )?;
    let h = runge_control(&ControlProblem::new(ones, Flavor::Dual, reg)?, &dual)?;
    let hd = DVector::from_vec(h.coeffs.clone());
    let mut est = vec![0.0; cells.len()];
    let mut flagged = Vec::new();
    let w = reference.mesh().trapezoid_weights();
    let vol = reference.grid().cell_volume();
    for (m, e) in est.iter_mut().enumerate() {
        let chi = cells.indicator(m);
        let measure_m: f64 = (0..reference.mesh().len())
            .map(|k| w[k] * chi.slice(k).iter().sum::<f64>())
            .sum::<f64>()
            * vol;
        let g = runge_control(&ControlProblem::new(chi, Flavor::Forward, reg)?, &fwd)?;
        if g.achieved_error > 0.3 || h.achieved_error > 0.3 {
            flagged.push(m);
            continue;
        }
        let gd = DVector::from_vec(g.coeffs);
        *e = gd.dot(&(&d * &hd)) / measure_m;
    }
    let residual = norm(&diff.data) / norm(&data.data).max(f64::MIN_POSITIVE);
    let mut report = RecoveryReport::new("q", cells, est, residual, 1).with_truth(cells, truth);
    report.flagged_cells = flagged;
    Ok(report)
}

/// Scalar potential with one value per recovery cell (1D).
pub fn cell_potential(grid: &SpaceGrid, cells: &CellPartition, values: &[f64]) -> Result<MagneticPotential> {
    let field = cells.field(values);
    let mesh = field.mesh();
    let mut v = Vec::with_capacity(field.values().len());
    for k in 0..mesh.len() {
        v.extend_from_slice(field.slice(k));
    }
    MagneticPotential::from_values(grid, mesh.len(), v)
}

/// Unknown parametrization shared by the recovery routines: cell indicators
/// (`refine = 0`) or refined hats with a first-difference penalty.
struct Parametrization {
    weights: Vec<SpaceTimeField>,
    penalty: Option<DMatrix<f64>>,
    n_slots: usize,
    mesh: TimeMesh,
}

impl Parametrization {
    fn new(grid: &SpaceGrid, cells: &CellPartition, opts: &TikhonovOptions) -> Self {
        let coords: Vec<[f64; 2]> = grid.omega().iter().map(|&i| grid.coord(i)).collect();
        let (weights, penalty) = if opts.refine == 0 {
            ((0..cells.len()).map(|m| cells.indicator(m)).collect::<Vec<_>>(), None)
        } else {
            let d = cells.hat_gradient(opts.refine);
            let n = d.ncols();
            let mut p = DMatrix::zeros(d.nrows() + n, n);
            p.rows_mut(0, d.nrows()).copy_from(&d);
            p.rows_mut(d.nrows(), n).copy_from(&(DMatrix::identity(n, n) * opts.ridge.sqrt()));
            (cells.hats(opts.refine, &coords), Some(p))
        };
        Self { weights, penalty, n_slots: coords.len(), mesh: cells.mesh }
    }

    fn len(&self) -> usize {
        self.weights.len()
    }

    fn combine(&self, c: &[f64]) -> SpaceTimeField {
        let mut f = SpaceTimeField::zeros(self.n_slots, self.mesh);
        for (w, &ci) in self.weights.iter().zip(c) {
            if ci != 0.0 {
                f.axpy(ci, w);
            }
        }
        f
    }

    fn penalty_norm2(&self, c: &[f64]) -> f64 {
        let v = DVector::from_column_slice(c);
        match &self.penalty {
            Some(p) => (p * v).norm_squared(),
            None => v.norm_squared(),
        }
    }
}

/// Recovery of a scalar (1D) magnetic potential on cells, up to global sign.
///
/// The DN map is even in `A`, so the unknown is `p = A²` (projected onto
/// `p ≥ 0`), fitted by Levenberg–Marquardt on the Tikhonov functional with
/// forward-difference Jacobians; the estimate is the cell average of `√p`.
/// The returned sign is the nonnegative branch, so the first nonzero cell value
/// is positive.
pub fn recover_a(
    reference: &ForwardModel,
    data: &DNRecord,
    basis: &SourceBasis,
    cells: &CellPartition,
    opts: &TikhonovOptions,
    truth: Option<&MagneticPotential>,
) -> Result<RecoveryReport> {
    check_record(reference, data, basis)?;
    let grid = reference.grid().clone();
    if grid.dim() != 1 {
        return Err(Error::Domain("potential recovery is implemented for n = 1".into()));
    }
    grid.check_magnetic_hypotheses()?;
    let mesh = *reference.mesh();
    let receivers = data.receivers.clone();
    let param = Parametrization::new(&grid, cells, opts);
    let amplitude = |c: &[f64]| {
        let mut f = param.combine(c);
        f.values_mut().iter_mut().for_each(|v| *v = v.max(0.0).sqrt());
        f
    };
    let forward_map = |c: &[f64]| -> Result<Vec<f64>> {
        let a = amplitude(c);
        let pot = if a.is_zero() { None } else { Some(MagneticPotential::from_values(&grid, mesh.len(), a.into_values())?) };
        let model = ForwardModel::with_base(&grid, mesh, reference.base().clone(), pot, reference.q().clone())?;
        Ok(predict(&model, basis, &receivers)?.1)
    };
    let misfit = |pred: &[f64]| data.data.iter().zip(pred).map(|(d, p)| (d - p).powi(2)).sum::<f64>();
    let n = param.len();
    let ptp = match &param.penalty {
        Some(p) => p.transpose() * p,
        None => DMatrix::identity(n, n),
    };
    let step = 1e-2;
    let mut c = vec![0.0; n];
    let mut pred = forward_map(&c)?;
    let mut lam = None;
    let mut damping = 1e-3;
    let mut iterations = 0;
    for it in 0..opts.max_iter.max(1) {
        let cols: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|m| {
                let mut v = c.clone();
                v[m] += step;
                let out = forward_map(&v)?;
                Ok(out.iter().zip(&pred).map(|(a, b)| (a - b) / step).collect())
            })
            .collect::<Result<_>>()?;
        let j = DMatrix::from_fn(pred.len(), n, |i, m| cols[m][i]);
        let lam = *lam.get_or_insert_with(|| opts.reg * mean_diagonal(&j));
        let objective = misfit(&pred) + lam * param.penalty_norm2(&c);
        let r = DVector::from_iterator(pred.len(), data.data.iter().zip(&pred).map(|(d, p)| d - p));
        let normal = j.transpose() * &j + &ptp * lam;
        let rhs = j.transpose() * r - &ptp * DVector::from_column_slice(&c) * lam;
        let mut accepted = None;
        for _ in 0..10 {
            let mut damped = normal.clone();
            for i in 0..n {
                damped[(i, i)] += damping * normal[(i, i)];
            }
            let delta = damped
                .cholesky()
                .ok_or_else(|| Error::Domain("damped normal matrix is not positive definite".into()))?
                .solve(&rhs);
            let trial: Vec<f64> = c.iter().zip(delta.iter()).map(|(a, b)| (a + b).max(0.0)).collect();
            let trial_pred = forward_map(&trial)?;
            if misfit(&trial_pred) + lam * param.penalty_norm2(&trial) < objective {
                accepted = Some((trial, trial_pred));
                damping = (damping / 3.0).max(1e-9);
                break;
            }
            damping *= 10.0;
        }
        let Some((trial, trial_pred)) = accepted else { break };
        let change = norm(&trial.iter().zip(&c).map(|(a, b)| a - b).collect::<Vec<_>>());
        c = trial;
        pred = trial_pred;
        iterations = it + 1;
        if change <= opts.tol * (norm(&c) + f64::MIN_POSITIVE) {
            break;
        }
    }
    let a_field = amplitude(&c);
    // Smallest offset inside Ω is h; beyond |h A| = π the cosine weights alias.
    if let Some(m) = a_field.values().iter().position(|a| (a * grid.h()).abs() > std::f64::consts::PI) {
        return Err(Error::BranchAmbiguity { midpoint: m % a_field.nodes() });
    }
    let estimate = cells.project(&a_field);
    let data_norm = norm(&data.data).max(f64::MIN_POSITIVE);
    let mut report = RecoveryReport::new("A", cells, estimate.clone(), misfit(&pred).sqrt() / data_norm, iterations);
    report.sign_resolved = Some("up to global sign".into());
    if let Some(a) = truth {
        let t = potential_field(&grid, a, mesh);
        let neg: Vec<f64> = estimate.iter().map(|v| -v).collect();
        let (p1, n1) = cells.relative_errors(&estimate, &t);
        let (p2, n2) = cells.relative_errors(&neg, &t);
        report.error_vs_truth = Some(p1.min(p2));
        report.error_vs_truth_nodes = Some(n1.min(n2));
    }
    Ok(report)
}

/// First component of a potential as an Ω field over `mesh`.
pub fn potential_field(grid: &SpaceGrid, a: &MagneticPotential, mesh: TimeMesh) -> SpaceTimeField {
    let n = grid.omega().len();
    let mut v = Vec::with_capacity(n * mesh.len());
    for k in 0..mesh.len() {
        v.extend((0..n).map(|slot| a.node_value(k, slot)[0]));
    }
    SpaceTimeField::new(n, mesh, v).expect("potential and mesh sizes agree")
}

/// DN record of the semilinear problem for data `λ g_a` (not divided by `λ`).
pub fn semilinear_dn(
    model: &ForwardModel,
    spec: &SemilinearSpec,
    basis: &SourceBasis,
    receivers: &[usize],
    lambda: f64,
) -> Result<DNRecord> {
    let rows: Vec<Vec<f64>> = (0..basis.len())
        .into_par_iter()
        .map(|a| {
            let g = basis.element(a).scaled(lambda);
            let u = model
                .solve_semilinear(spec, &g)
                .map_err(|e| Error::Source { index: a, source: Box::new(e) })?;
            Ok(measure(model, &u, receivers))
        })
        .collect::<Result<_>>()?;
    Ok(DNRecord {
        flavor: Flavor::Forward,
        n_sources: basis.len(),
        receivers: receivers.to_vec(),
        mesh: *model.mesh(),
        cell_volume: model.grid().cell_volume(),
        s: model.s(),
        geometry: model.grid().fingerprint(),
        data: rows.concat(),
    })
}

/// Successive-linearization recovery of `a_1, …, a_m` from DN records at a
/// ladder of scales `λ_0 > λ_0/2 > …` (each record holds `M(λ g)`).
///
/// With `D(λ) = (M(λg) - M_{k-1}(λg)) / λ`, where `M_{k-1}` is the prediction of
/// the already recovered terms (zero for `k = 1`), stage `k` uses
/// `N_k ≈ [D(λ) - D(λ/2)] / (λ^{b_k} (1 - 2^{-b_k}))` for `k ≥ 2` and a
/// Richardson combination of `D(λ), D(λ/2)` for `k = 1`. With three or more
/// rungs the stage-`k` estimates are Richardson-extrapolated once more.
pub fn recover_semilinear(
    reference: &ForwardModel,
    ladder: &[(f64, DNRecord)],
    basis: &SourceBasis,
    powers: &[f64],
    cells: &CellPartition,
    opts: &TikhonovOptions,
    truths: Option<&[SpaceTimeField]>,
) -> Result<Vec<RecoveryReport>> {
    if ladder.len() < 2 {
        return Err(Error::Domain("need at least two scales".into()));
    }
    for w in ladder.windows(2) {
        if (w[0].0 / w[1].0 - 2.0).abs() > 1e-12 {
            return Err(Error::Domain("scales must halve along the ladder".into()));
        }
    }
    for (_, rec) in ladder {
        check_record(reference, rec, basis)?;
    }
    if powers.is_empty() || powers[0] != 0.0 {
        return Err(Error::Domain("powers must start with 0".into()));
    }
    let receivers = ladder[0].1.receivers.clone();
    let mut estimates: Vec<SpaceTimeField> = Vec::new();
    let mut reports = Vec::new();

    for (k, &b) in powers.iter().enumerate() {
        // Prediction of the terms recovered so far, per rung.
        let prior: Vec<Vec<f64>> = if k == 0 {
            vec![vec![0.0; ladder[0].1.data.len()]; ladder.len()]
        } else {
            let coeffs: Vec<SpaceTimeField> = estimates.iter().map(|f: &SpaceTimeField| nonneg(f.clone())).collect();
            let spec = SemilinearSpec::new(coeffs, powers[..k].to_vec())?;
            ladder
                .iter()
                .map(|(lam, _)| Ok(semilinear_dn(reference, &spec, basis, &receivers, *lam)?.data))
                .collect::<Result<_>>()?
        };
        let d: Vec<Vec<f64>> = ladder
            .iter()
            .zip(&prior)
            .map(|((lam, rec), p)| rec.data.iter().zip(p).map(|(m, q)| (m - q) / lam).collect())
            .collect();
        // Two-rung estimates, then one more Richardson sweep when available.
        let next_power = powers.get(1).copied().unwrap_or(1.0);
        let pair = |i: usize| -> Vec<f64> {
            let lam = ladder[i].0;
            if k == 0 {
                let f = 2f64.powf(next_power);
                d[i].iter().zip(&d[i + 1]).map(|(a, bb)| (f * bb - a) / (f - 1.0)).collect()
            } else {
                let den = lam.powf(b) * (1.0 - 2f64.powf(-b));
                d[i].iter().zip(&d[i + 1]).map(|(a, bb)| (a - bb) / den).collect()
            }
        };
        let mut stage_data = pair(0);
        if ladder.len() >= 3 {
            let finer = pair(1);
            let f = 2f64.powf(if k == 0 { 2.0 * next_power } else { b.min(next_power_after(powers, k) - b) });
            stage_data = stage_data.iter().zip(&finer).map(|(a, bb)| (f * bb - a) / (f - 1.0)).collect();
        }
        let record = DNRecord { data: stage_data, ..ladder[0].1.clone() };
        let truth = truths.and_then(|t| t.get(k));
        let (report, field) = if k == 0 {
            recover_q_field(reference, &record, basis, cells, opts, truth)
        } else {
            let mut q = reference.q().clone();
            q.axpy(1.0, &nonneg(estimates[0].clone()));
            let lin = reference.with_q(q)?;
            recover_power_term(&lin, &record, basis, cells, b, opts, truth)
        }
        .map_err(|e| Error::Stage { stage: k + 1, reason: e.to_string() })?;
        let mut report = report;
        report.target = format!("a_{}", k + 1);
        estimates.push(field);
        reports.push(report);
    }
    Ok(reports)
}

fn next_power_after(powers: &[f64], k: usize) -> f64 {
    powers.get(k + 1).copied().unwrap_or(2.0 * powers[k])
}

fn nonneg(f: SpaceTimeField) -> SpaceTimeField {
    let mut f = f;
    f.values_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    f
}

/// Linear least squares for `a_k` from second-order response data: the column of
/// unknown `m` measures `δu` solving the linear problem with source `-w_m |u|^{b} u`.
fn recover_power_term(
    linear: &ForwardModel,
    data: &DNRecord,
    basis: &SourceBasis,
    cells: &CellPartition,
    b: f64,
    opts: &TikhonovOptions,
    truth: Option<&SpaceTimeField>,
) -> Result<(RecoveryReport, SpaceTimeField)> {
    let receivers = data.receivers.clone();
    let param = Parametrization::new(linear.grid(), cells, opts);
    let (states, _) = predict(linear, basis, &receivers)?;
    let j = sensitivity(linear, &states, &param.weights, &receivers, |u| u.abs().powf(b) * u)?;
    let y = DVector::from_vec(data.data.clone());
    let lam = opts.reg * mean_diagonal(&j);
    let c = tikhonov_solve_penalized(&j, &y, lam, param.penalty.as_ref(), &DVector::zeros(param.len()))?;
    let residual = (&j * &c - &y).norm() / y.norm().max(f64::MIN_POSITIVE);
    let c: Vec<f64> = c.iter().copied().collect();
    let field = param.combine(&c);
    let estimate = if opts.refine == 0 { c } else { cells.project(&field) };
    Ok((RecoveryReport::new("a", cells, estimate, residual, 1).with_truth(cells, truth), field))
}
