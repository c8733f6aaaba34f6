//! Implicit L1 time stepping for the exterior-value problems: Caputo and
//! Riemann–Liouville forward problems, the backward dual problem, and the
//! semilinear problem, plus the a-priori sup-norm certificate.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::field::SpaceTimeField;
use crate::grid::SpaceGrid;
use crate::spacefrac::{assemble_fractional_laplacian, MagneticPotential, NonlocalOperator};
use crate::special::gamma;
use crate::timefrac::{phi_kernel, ConvWeights, TimeMesh};

/// Coefficients and discretization of one linear exterior-value problem.
#[derive(Debug, Clone)]
pub struct ForwardModel {
    grid: SpaceGrid,
    mesh: TimeMesh,
    s: f64,
    base: Arc<NonlocalOperator>,
    ops: Vec<Arc<NonlocalOperator>>,
    potential: Option<MagneticPotential>,
    q: SpaceTimeField,
    l1: ConvWeights,
}

impl ForwardModel {
    pub fn new(
        grid: &SpaceGrid,
        mesh: TimeMesh,
        s: f64,
        potential: Option<MagneticPotential>,
        q: SpaceTimeField,
    ) -> Result<Self> {
        let base = Arc::new(assemble_fractional_laplacian(grid, s)?);
        Self::with_base(grid, mesh, base, potential, q)
    }

    /// Reuse an assembled `A ≡ 0` operator.
    pub fn with_base(
        grid: &SpaceGrid,
        mesh: TimeMesh,
        base: Arc<NonlocalOperator>,
        potential: Option<MagneticPotential>,
        q: SpaceTimeField,
    ) -> Result<Self> {
        if base.len() != grid.len() {
            return Err(Error::GeometryMismatch("operator size differs from the grid".into()));
        }
        if q.nodes() != grid.omega().len() || *q.mesh() != mesh {
            return Err(Error::Coefficient("q must live on Omega nodes over the model mesh".into()));
        }
        let potential = potential.filter(|a| !a.is_zero());
        let ops = match &potential {
            None => vec![base.clone(); mesh.len()],
            Some(a) => {
                if a.n_times() != mesh.len() {
                    return Err(Error::Coefficient(format!(
                        "magnetic potential has {} time slices, mesh has {}",
                        a.n_times(),
                        mesh.len()
                    )));
                }
                let mut ops: Vec<Arc<NonlocalOperator>> = Vec::with_capacity(mesh.len());
                for k in 0..mesh.len() {
                    let same = k > 0 && slice_eq(a, k, k - 1);
                    if same {
                        ops.push(ops[k - 1].clone());
                    } else {
                        ops.push(Arc::new(base.with_magnetic(grid, a, k)?));
                    }
                }
                ops
            }
        };
        let l1 = ConvWeights::caputo_l1(mesh.alpha(), mesh.steps(), mesh.tau())?;
        Ok(Self { grid: grid.clone(), mesh, s: base.s, base, ops, potential, q, l1 })
    }

    pub fn grid(&self) -> &SpaceGrid {
        &self.grid
    }

    pub fn mesh(&self) -> &TimeMesh {
        &self.mesh
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn base(&self) -> &Arc<NonlocalOperator> {
        &self.base
    }

    pub fn op(&self, k: usize) -> &NonlocalOperator {
        &self.ops[k]
    }

    pub fn potential(&self) -> Option<&MagneticPotential> {
        self.potential.as_ref()
    }

    pub fn q(&self) -> &SpaceTimeField {
        &self.q
    }

    /// Same operators with a different potential `q`.
    pub fn with_q(&self, q: SpaceTimeField) -> Result<Self> {
        if q.nodes() != self.q.nodes() || q.mesh() != self.q.mesh() {
            return Err(Error::Coefficient("replacement q has the wrong shape".into()));
        }
        Ok(Self { q, ..self.clone() })
    }

    /// Coefficients reflected in time, `t ↦ T - t`.
    pub fn time_reversed(&self) -> Self {
        let mut ops = self.ops.clone();
        ops.reverse();
        Self {
            ops,
            potential: self.potential.as_ref().map(|a| a.time_reversed()),
            q: self.q.reversed_in_time(),
            ..self.clone()
        }
    }

    /// `(L(t_k) u)` restricted to `rows`.
    pub fn apply_rows(&self, k: usize, u: &[f64], rows: &[usize]) -> Vec<f64> {
        let m = &self.ops[k].matrix;
        rows.iter()
            .map(|&i| (0..u.len()).filter(|&j| u[j] != 0.0).map(|j| m[(i, j)] * u[j]).sum())
            .collect()
    }

    fn step_matrix(&self, k: usize) -> DMatrix<f64> {
        let om = self.grid.omega();
        let mut m = self.ops[k].block(om, om);
        let q = self.q.slice(k);
        for a in 0..om.len() {
            m[(a, a)] += self.l1.scale + q[a];
        }
        m
    }

    fn check_exterior(&self, g: &SpaceTimeField, at_start: bool) -> Result<()> {
        if g.nodes() != self.grid.len() || *g.mesh() != self.mesh {
            return Err(Error::GeometryMismatch("exterior data does not match grid and mesh".into()));
        }
        for k in 0..self.mesh.len() {
            let sl = g.slice(k);
            if self.grid.omega().iter().any(|&i| sl[i] != 0.0) {
                return Err(Error::Domain("exterior data must vanish on Omega".into()));
            }
        }
        let edge = if at_start { 0 } else { self.mesh.steps() };
        if g.slice(edge).iter().any(|v| *v != 0.0) {
            let which = if at_start { "t = 0" } else { "t = T" };
            return Err(Error::Domain(format!("exterior data must vanish at {which}")));
        }
        Ok(())
    }

    fn check_source(&self, f: Option<&SpaceTimeField>) -> Result<()> {
        if let Some(f) = f {
            if f.nodes() != self.grid.omega().len() || *f.mesh() != self.mesh {
                return Err(Error::GeometryMismatch("interior source must live on Omega nodes".into()));
            }
        }
        Ok(())
    }

    /// `∂^α_t u + L_{A(t)} u + q u = f` in Ω, `u = g` outside Ω, `u(0) = 0`.
    pub fn solve_caputo(&self, g: &SpaceTimeField, f: Option<&SpaceTimeField>) -> Result<SpaceTimeField> {
        self.check_exterior(g, true)?;
        self.check_source(f)?;
        self.march(g, f, None, false)
    }

    /// `D^α_{0,t} w + L_{A(t)} w + q w = f` with `I^{1-α}_{0,t} w = 0` at `t = 0`.
    pub fn solve_rl(&self, g: &SpaceTimeField, f: Option<&SpaceTimeField>) -> Result<SpaceTimeField> {
        self.check_exterior(g, true)?;
        self.check_source(f)?;
        self.march(g, f, None, true)
    }

    /// Backward problem `D^α_{t,T} u* + L_{A(t)} u* + q u* = f`, `u* = h` outside Ω,
    /// `I^{1-α}_{t,T} u* = 0` at `t = T`, solved as the reflection of [`Self::solve_rl`].
    pub fn solve_dual(&self, h: &SpaceTimeField, f: Option<&SpaceTimeField>) -> Result<SpaceTimeField> {
        self.check_exterior(h, false)?;
        self.check_source(f)?;
        let reflected = self.time_reversed();
        let f_rev = f.map(SpaceTimeField::reversed_in_time);
        Ok(reflected.march(&h.reversed_in_time(), f_rev.as_ref(), None, true)?.reversed_in_time())
    }

    /// `∂^α_t u + L u + q u + a(x, t, u) = 0` in Ω, `u = g` outside.
    pub fn solve_semilinear(&self, spec: &SemilinearSpec, g: &SpaceTimeField) -> Result<SpaceTimeField> {
        self.check_exterior(g, true)?;
        spec.check_shape(&self.grid, &self.mesh)?;
        self.march(g, None, Some(spec), false)
    }

    fn march(
        &self,
        g: &SpaceTimeField,
        f: Option<&SpaceTimeField>,
        nonlinear: Option<&SemilinearSpec>,
        rl: bool,
    ) -> Result<SpaceTimeField> {
        let om = self.grid.omega();
        let n = om.len();
        let steps = self.mesh.steps();
        let d0 = self.l1.scale;
        let b = &self.l1.weights;
        let mut w: Vec<DVector<f64>> = vec![DVector::zeros(n); steps + 1];
        let invariant = self.q.is_time_invariant() && self.ops.iter().all(|o| Arc::ptr_eq(o, &self.ops[0]));
        let mut cached: Option<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>> = None;

        for k in 1..=steps {
            // L1 history: ∂^α w_k = d0 w_k + hist.
            let mut hist = -&w[k - 1];
            for j in 1..k {
                hist += (&w[k - j] - &w[k - j - 1]) * b[j];
            }
            hist *= d0;
            if rl {
                // D^α = ∂^α + w_0 φ_{1-α}; w_0 = 0 for compatible data but kept explicit.
                let phi = phi_kernel(1.0 - self.mesh.alpha(), self.mesh.t(k))?;
                hist += &w[0] * phi;
            }
            let gk = g.slice(k);
            let lg = self.apply_rows(k, gk, om);
            let mut rhs = -hist;
            for a in 0..n {
                rhs[a] -= lg[a];
                if let Some(f) = f {
                    rhs[a] += f.slice(k)[a];
                }
            }
            match nonlinear {
                None => {
                    let sol = if invariant {
                        if cached.is_none() {
                            cached = Some(self.step_matrix(k).lu());
                        }
                        cached.as_ref().expect("factored").solve(&rhs)
                    } else {
                        self.step_matrix(k).lu().solve(&rhs)
                    };
                    let sol = sol.ok_or(Error::SingularStep { step: k })?;
                    if sol.iter().any(|v| !v.is_finite()) {
                        return Err(Error::SingularStep { step: k });
                    }
                    w[k] = sol;
                }
                Some(spec) => {
                    w[k] = self.newton_step(k, spec, &rhs, &w[k - 1])?;
                }
            }
        }

        let mut u = g.clone();
        for (k, wk) in w.iter().enumerate() {
            let sl = u.slice_mut(k);
            for (a, &i) in om.iter().enumerate() {
                sl[i] = wk[a];
            }
        }
        Ok(u)
    }

    fn newton_step(&self, k: usize, spec: &SemilinearSpec, rhs: &DVector<f64>, start: &DVector<f64>) -> Result<DVector<f64>> {
        const MAX_ITER: usize = 50;
        const TOL: f64 = 1e-11;
        let m = self.step_matrix(k);
        let residual = |w: &DVector<f64>| {
            let mut r = &m * w - rhs;
            for a in 0..w.len() {
                r[a] += spec.eval(a, k, w[a]);
            }
            r
        };
        let target = TOL.min(1e-13 * rhs.amax().max(f64::MIN_POSITIVE));
        let mut w = start.clone();
        let mut r = residual(&w);
        let mut rn = r.amax();
        for _ in 0..MAX_ITER {
            if rn <= target {
                return Ok(w);
            }
            let mut jac = m.clone();
            for a in 0..w.len() {
                jac[(a, a)] += spec.derivative(a, k, w[a]);
            }
            let delta = jac.lu().solve(&r).ok_or(Error::SingularStep { step: k })?;
            let mut lam = 1.0;
            let mut trial = &w - &delta;
            let mut tr = residual(&trial);
            while tr.amax() > rn && lam > 1e-9 {
                lam *= 0.5;
                trial = &w - &delta * lam;
                tr = residual(&trial);
            }
            w = trial;
            r = tr;
            let prev = rn;
            rn = r.amax();
            // stagnation at the roundoff floor
            if rn <= TOL && rn > 0.5 * prev {
                break;
            }
        }
        if rn <= TOL {
            Ok(w)
        } else {
            Err(Error::NewtonDivergence { step: k, iterations: MAX_ITER, residual: rn })
        }
    }

    /// `sup |f|` of the interior forcing `f = -(L g)|_Ω` induced by exterior data.
    pub fn induced_forcing_sup(&self, g: &SpaceTimeField) -> f64 {
        (0..self.mesh.len())
            .map(|k| self.apply_rows(k, g.slice(k), self.grid.omega()))
            .flat_map(|v| v.into_iter())
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

fn slice_eq(a: &MagneticPotential, k: usize, j: usize) -> bool {
    let vals = a.values();
    let block = vals.len() / a.n_times();
    vals[k * block..(k + 1) * block] == vals[j * block..(j + 1) * block]
}

/// `a(x, t, z) = Σ_k a_k(x, t) |z|^{b_k} z` with `a_k ≥ 0`, `b_1 = 0 < b_2 < …`.
#[derive(Debug, Clone, PartialEq)]
pub struct SemilinearSpec {
    coeffs: Vec<SpaceTimeField>,
    powers: Vec<f64>,
}

impl SemilinearSpec {
    pub fn new(coeffs: Vec<SpaceTimeField>, powers: Vec<f64>) -> Result<Self> {
        if coeffs.is_empty() || coeffs.len() != powers.len() {
            return Err(Error::Coefficient("need one coefficient per power, at least one term".into()));
        }
        if powers[0] != 0.0 {
            return Err(Error::Coefficient("the first power must be 0".into()));
        }
        if powers.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Coefficient("powers must be strictly increasing".into()));
        }
        for (k, a) in coeffs.iter().enumerate() {
            if a.values().iter().any(|v| *v < 0.0) {
                return Err(Error::Coefficient(format!("coefficient a_{} has negative values", k + 1)));
            }
            if a.nodes() != coeffs[0].nodes() || a.mesh() != coeffs[0].mesh() {
                return Err(Error::Coefficient("coefficients must share one shape".into()));
            }
        }
        Ok(Self { coeffs, powers })
    }

    pub fn terms(&self) -> usize {
        self.coeffs.len()
    }

    pub fn coeffs(&self) -> &[SpaceTimeField] {
        &self.coeffs
    }

    pub fn powers(&self) -> &[f64] {
        &self.powers
    }

    fn check_shape(&self, grid: &SpaceGrid, mesh: &TimeMesh) -> Result<()> {
        if self.coeffs[0].nodes() != grid.omega().len() || self.coeffs[0].mesh() != mesh {
            return Err(Error::GeometryMismatch("semilinear coefficients must live on Omega over the mesh".into()));
        }
        Ok(())
    }

    /// `a(x_slot, t_k, z)`.
    pub fn eval(&self, slot: usize, k: usize, z: f64) -> f64 {
        self.coeffs
            .iter()
            .zip(&self.powers)
            .map(|(a, &b)| {
                let c = a.slice(k)[slot];
                if b == 0.0 {
                    c * z
                } else {
                    c * z.signum() * z.abs().powf(b + 1.0)
                }
            })
            .sum()
    }

    /// `∂_z a(x_slot, t_k, z)`, taking `|z|^b = 0` at `z = 0` for `b > 0`.
    pub fn derivative(&self, slot: usize, k: usize, z: f64) -> f64 {
        self.coeffs
            .iter()
            .zip(&self.powers)
            .map(|(a, &b)| {
                let c = a.slice(k)[slot];
                if b == 0.0 {
                    c
                } else if z == 0.0 {
                    0.0
                } else {
                    c * (b + 1.0) * z.abs().powf(b)
                }
            })
            .sum()
    }
}

/// Outcome of the barrier comparison `|u| ≤ (‖f‖_∞ t^α / Γ(α+1) + ‖g‖_∞) φ(x)` on Ω.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarrierCertificate {
    /// `max (|u| - barrier)` over `Ω × (0, T]`.
    pub margin: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Evaluate the sup-norm barrier on Ω nodes (where the cutoff equals 1).
pub fn linfinity_certificate(
    grid: &SpaceGrid,
    u: &SpaceTimeField,
    f_sup: f64,
    g_sup: f64,
) -> BarrierCertificate {
    let mesh = *u.mesh();
    let alpha = mesh.alpha();
    let mut margin = f64::NEG_INFINITY;
    let mut top = 0.0_f64;
    for k in 1..mesh.len() {
        let barrier = f_sup * mesh.t(k).powf(alpha) / gamma(alpha + 1.0) + g_sup;
        top = top.max(barrier);
        for &i in grid.omega() {
            margin = margin.max(u.get(i, k).abs() - barrier);
        }
    }
    let tolerance = 1e-8 * (1.0 + top);
    BarrierCertificate { margin, tolerance, passed: margin <= tolerance }
}

/// `‖u_g - u_{λg} / λ‖_∞` on Ω, with `u_g` the linearization (potential `a_1`).
pub fn linearization_gap(model: &ForwardModel, spec: &SemilinearSpec, g: &SpaceTimeField, lambda: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::Domain(format!("lambda must be positive, got {lambda}")));
    }
    let mut q = model.q().clone();
    q.axpy(1.0, &spec.coeffs()[0]);
    let linear = model.with_q(q)?.solve_caputo(g, None)?;
    let scaled = model.solve_semilinear(spec, &g.scaled(lambda))?;
    let mut gap = 0.0_f64;
    for k in 0..model.mesh().len() {
        for &i in model.grid().omega() {
            gap = gap.max((linear.get(i, k) - scaled.get(i, k) / lambda).abs());
        }
    }
    Ok(gap)
}
