//! Discrete fractional calculus on uniform time meshes.
//!
//! Left Riemann–Liouville integrals use product integration of the piecewise
//! linear interpolant, the Caputo derivative uses the L1 scheme, and every
//! right-sided operator is the time reflection of its left-sided twin.

use crate::error::{Error, Result};
use crate::special::gamma;

/// Uniform partition `0 = t_0 < … < t_N = T` carrying the fractional order.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TimeMesh {
    t_final: f64,
    steps: usize,
    alpha: f64,
}

impl TimeMesh {
    pub fn new(t_final: f64, steps: usize, alpha: f64) -> Result<Self> {
        if !(t_final > 0.0 && t_final.is_finite()) {
            return Err(Error::Domain(format!("final time must be positive, got {t_final}")));
        }
        if steps < 2 {
            return Err(Error::Domain(format!("need at least 2 time steps, got {steps}")));
        }
        check_order(alpha)?;
        Ok(Self { t_final, steps, alpha })
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn tau(&self) -> f64 {
        self.t_final / self.steps as f64
    }

    /// Number of stored nodes, `N_t + 1`.
    pub fn len(&self) -> usize {
        self.steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn t(&self, k: usize) -> f64 {
        if k == self.steps {
            self.t_final
        } else {
            k as f64 * self.tau()
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.t(k)).collect()
    }

    /// Same interval and order with twice as many steps.
    pub fn refined(&self) -> Self {
        Self { steps: 2 * self.steps, ..*self }
    }

    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        Self::new(self.t_final, self.steps, alpha)
    }

    /// Trapezoidal weights over the stored nodes.
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        let tau = self.tau();
        let mut w = vec![tau; self.len()];
        w[0] *= 0.5;
        w[self.steps] *= 0.5;
        w
    }
}

fn check_order(order: f64) -> Result<()> {
    if order > 0.0 && order < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("fractional order must lie in (0,1), got {order}")))
    }
}

/// A scalar function of time sampled at the mesh nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSignal {
    mesh: TimeMesh,
    values: Vec<f64>,
}

impl TimeSignal {
    pub fn new(mesh: TimeMesh, values: Vec<f64>) -> Result<Self> {
        if values.len() != mesh.len() {
            return Err(Error::Domain(format!(
                "signal has {} samples, mesh has {} nodes",
                values.len(),
                mesh.len()
            )));
        }
        Ok(Self { mesh, values })
    }

    pub fn from_fn(mesh: TimeMesh, f: impl Fn(f64) -> f64) -> Self {
        let values = mesh.times().into_iter().map(f).collect();
        Self { mesh, values }
    }

    pub fn zeros(mesh: TimeMesh) -> Self {
        Self { mesh, values: vec![0.0; mesh.len()] }
    }

    pub fn mesh(&self) -> &TimeMesh {
        &self.mesh
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Time reflection `t ↦ T − t`.
    pub fn reversed(&self) -> Self {
        let mut values = self.values.clone();
        values.reverse();
        Self { mesh: self.mesh, values }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Trapezoidal integral over `[0, T]`.
    pub fn integral(&self) -> f64 {
        self.mesh
            .trapezoid_weights()
            .iter()
            .zip(&self.values)
            .map(|(w, v)| w * v)
            .sum()
    }

    fn map_values(&self, values: Vec<f64>) -> Self {
        Self { mesh: self.mesh, values }
    }
}

/// Which discrete operator a weight table realizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    RiemannLiouvilleIntegral,
    CaputoL1,
    RightRLIntegral,
    RightRLDerivative,
}

/// Convolution weights of a discrete fractional operator on a uniform mesh.
///
/// For the integral schemes `weights[m]` multiplies `u_{k-m}` (with a separate
/// start correction for `u_0`); for the derivative schemes `weights[j]` is the
/// L1 coefficient `b_j` multiplying the increment `u_{k-j} - u_{k-j-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvWeights {
    pub order: f64,
    pub scheme: Scheme,
    pub weights: Vec<f64>,
    /// Coefficient of `u_0` at node `k` (integral schemes only).
    pub start: Vec<f64>,
    pub scale: f64,
}

impl ConvWeights {
    /// Product-integration weights of `I^β` for the piecewise linear interpolant.
    pub fn rl_integral(order: f64, steps: usize, tau: f64) -> Result<Self> {
        check_order(order)?;
        let p = order + 1.0;
        let pw = |m: f64| if m <= 0.0 { 0.0 } else { m.powf(p) };
        let mut weights = Vec::with_capacity(steps + 1);
        weights.push(1.0);
        for m in 1..=steps {
            let m = m as f64;
            weights.push(pw(m + 1.0) - 2.0 * pw(m) + pw(m - 1.0));
        }
        let mut start = vec![0.0; steps + 1];
        for (k, s) in start.iter_mut().enumerate().skip(1) {
            let kf = k as f64;
            *s = pw(kf - 1.0) - (kf - 1.0 - order) * kf.powf(order);
        }
        Ok(Self {
            order,
            scheme: Scheme::RiemannLiouvilleIntegral,
            weights,
            start,
            scale: tau.powf(order) / gamma(order + 2.0),
        })
    }

    /// L1 weights `b_j = (j+1)^{1-α} - j^{1-α}` for the Caputo derivative.
    pub fn caputo_l1(order: f64, steps: usize, tau: f64) -> Result<Self> {
        check_order(order)?;
        let e = 1.0 - order;
        let weights = (0..=steps)
            .map(|j| {
                let j = j as f64;
                (j + 1.0).powf(e) - if j > 0.0 { j.powf(e) } else { 0.0 }
            })
            .collect();
        Ok(Self {
            order,
            scheme: Scheme::CaputoL1,
            weights,
            start: Vec::new(),
            scale: 1.0 / (tau.powf(order) * gamma(2.0 - order)),
        })
    }

    fn apply_integral(&self, u: &[f64]) -> Vec<f64> {
        let n = u.len();
        let mut out = vec![0.0; n];
        for k in 1..n {
            let mut acc = self.start[k] * u[0];
            for j in 1..=k {
                acc += self.weights[k - j] * u[j];
            }
            out[k] = self.scale * acc;
        }
        out
    }

    fn apply_l1(&self, u: &[f64]) -> Vec<f64> {
        let n = u.len();
        let mut out = vec![0.0; n];
        for k in 1..n {
            let mut acc = 0.0;
            for j in 0..k {
                acc += self.weights[j] * (u[k - j] - u[k - j - 1]);
            }
            out[k] = self.scale * acc;
        }
        out
    }
}

/// `φ_α(t) = t^{α-1} / Γ(α)`.
pub fn phi_kernel(alpha: f64, t: f64) -> Result<f64> {
    check_order(alpha)?;
    if !(t > 0.0) {
        return Err(Error::Domain(format!("kernel needs t > 0, got {t}")));
    }
    Ok(t.powf(alpha - 1.0) / gamma(alpha))
}

/// Left Riemann–Liouville integral `I^β_{0,t} u`; zero at `t = 0`.
pub fn rl_integral_left(u: &TimeSignal, order: f64) -> Result<TimeSignal> {
    let m = u.mesh();
    let w = ConvWeights::rl_integral(order, m.steps(), m.tau())?;
    Ok(u.map_values(w.apply_integral(u.values())))
}

/// Caputo derivative by the L1 scheme; constants map to exactly zero.
pub fn caputo_derivative(u: &TimeSignal, order: f64) -> Result<TimeSignal> {
    let m = u.mesh();
    let w = ConvWeights::caputo_l1(order, m.steps(), m.tau())?;
    Ok(u.map_values(w.apply_l1(u.values())))
}

/// Left Riemann–Liouville derivative `D^β_{0,t} u = ∂^β_t u + u(0) φ_{1-β}(t)`.
///
/// The value at `t = 0` is not representable when `u(0) ≠ 0`; it is stored as 0.
pub fn rl_derivative_left(u: &TimeSignal, order: f64) -> Result<TimeSignal> {
    let mut d = caputo_derivative(u, order)?;
    let u0 = u.values()[0];
    if u0 != 0.0 {
        let mesh = *u.mesh();
        for k in 1..mesh.len() {
            d.values[k] += u0 * phi_kernel(1.0 - order, mesh.t(k))?;
        }
    }
    Ok(d)
}

/// Right Riemann–Liouville integral `I^β_{t,T} u`; zero at `t = T`.
pub fn rl_integral_right(u: &TimeSignal, order: f64) -> Result<TimeSignal> {
    Ok(rl_integral_left(&u.reversed(), order)?.reversed())
}

/// Right Riemann–Liouville derivative `D^β_{t,T} u = -∂_t I^{1-β}_{t,T} u`.
///
/// Built as the reflection of [`rl_derivative_left`], so on signals vanishing
/// at `T` its matrix is the transpose of the L1 Caputo matrix.
pub fn rl_derivative_right(u: &TimeSignal, order: f64) -> Result<TimeSignal> {
    Ok(rl_derivative_left(&u.reversed(), order)?.reversed())
}

/// Right-sided Caputo derivative (reflected L1), the bounded part of `D^β_{t,T}`.
pub fn caputo_derivative_right(u: &TimeSignal, order: f64) -> Result<TimeSignal> {
    Ok(caputo_derivative(&u.reversed(), order)?.reversed())
}

/// Running trapezoidal integral `∫_0^t u`.
pub fn cumulative_integral(u: &TimeSignal) -> TimeSignal {
    let tau = u.mesh().tau();
    let mut out = vec![0.0; u.values.len()];
    for k in 1..out.len() {
        out[k] = out[k - 1] + 0.5 * tau * (u.values[k] + u.values[k - 1]);
    }
    u.map_values(out)
}

/// Discrete residual of the fractional integration-by-parts formula
///
/// `∫ g ∂^α f = ∫ f D^α_{t,T} g + (f I^{1-α}_{t,T} g)|_{t=0}^{t=T}`.
///
/// The singular part `g(T) φ_{1-α}(T-t)` of the right derivative is integrated
/// against `f` exactly (it equals `g(T) · I^{1-α}_{0,T} f`), the bounded part
/// by the trapezoidal rule. The boundary term at `T` is the limit value 0.
pub fn ibp_residual(f: &TimeSignal, g: &TimeSignal, alpha: f64) -> Result<f64> {
    if f.mesh() != g.mesh() {
        return Err(Error::GeometryMismatch("signals live on different meshes".into()));
    }
    if f.values.iter().all(|v| *v == 0.0) {
        return Ok(0.0);
    }
    let mesh = *f.mesh();
    let w = mesh.trapezoid_weights();
    let cap_f = caputo_derivative(f, alpha)?;
    let lhs: f64 = (0..mesh.len()).map(|k| w[k] * g.values[k] * cap_f.values[k]).sum();

    let right_regular = caputo_derivative_right(g, alpha)?;
    let regular: f64 = (0..mesh.len())
        .map(|k| w[k] * f.values[k] * right_regular.values[k])
        .sum();
    let g_end = g.values[mesh.steps()];
    let singular = g_end * rl_integral_left(f, 1.0 - alpha)?.values[mesh.steps()];

    let boundary_at_zero = f.values[0] * rl_integral_right(g, 1.0 - alpha)?.values[0];
    Ok((lhs - (regular + singular) + boundary_at_zero).abs())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mesh(n: usize, alpha: f64) -> TimeMesh {
        TimeMesh::new(1.0, n, alpha).unwrap()
    }

    #[test]
    fn mesh_invariants() {
        let m = mesh(7, 0.4);
        assert_eq!(m.t(7), 1.0);
        assert_eq!(m.len(), 8);
        assert!(TimeMesh::new(1.0, 1, 0.5).is_err());
        assert!(TimeMesh::new(1.0, 4, 1.0).is_err());
        assert!(TimeMesh::new(0.0, 4, 0.5).is_err());
        assert!(TimeSignal::new(m, vec![0.0; 3]).is_err());
    }

    #[test]
    fn phi_kernel_domain() {
        assert!(phi_kernel(0.5, 0.0).is_err());
        assert!(phi_kernel(1.2, 1.0).is_err());
        let v = phi_kernel(0.3, 1.0).unwrap();
        assert!((v - 1.0 / gamma(0.3)).abs() < 1e-15);
    }

    #[test]
    fn integral_weights_nonnegative() {
        for order in [0.1, 0.5, 0.9] {
            let w = ConvWeights::rl_integral(order, 50, 0.02).unwrap();
            assert!(w.weights.iter().all(|x| *x >= 0.0));
            assert!(w.start.iter().all(|x| *x >= 0.0));
        }
    }

    #[test]
    fn integral_of_one_is_exact() {
        let m = mesh(32, 0.5);
        let one = TimeSignal::from_fn(m, |_| 1.0);
        let i = rl_integral_left(&one, 0.5).unwrap();
        for k in 0..m.len() {
            let exact = m.t(k).powf(0.5) / gamma(1.5);
            assert!((i.values()[k] - exact).abs() < 1e-13);
        }
        assert_eq!(i.values()[0], 0.0);
    }

    #[test]
    fn caputo_kills_constants_exactly() {
        let m = mesh(40, 0.3);
        let c = TimeSignal::from_fn(m, |_| 2.75);
        assert!(caputo_derivative(&c, 0.3).unwrap().values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn caputo_of_linear_is_exact_at_nodes() {
        let m = mesh(16, 0.4);
        let u = TimeSignal::from_fn(m, |t| t);
        let d = caputo_derivative(&u, 0.4).unwrap();
        for k in 1..m.len() {
            let exact = m.t(k).powf(0.6) / gamma(1.6);
            assert!((d.values()[k] - exact).abs() < 1e-12);
        }
    }

    #[test]
    fn right_operators_are_reflections() {
        let m = mesh(20, 0.6);
        let u = TimeSignal::from_fn(m, |t| (3.0 * t).sin() + t * t);
        let r = rl_integral_right(&u, 0.6).unwrap();
        let l = rl_integral_left(&u.reversed(), 0.6).unwrap().reversed();
        assert_eq!(r, l);
        assert_eq!(r.values()[m.steps()], 0.0);
        let zero = TimeSignal::zeros(m);
        assert!(rl_derivative_right(&zero, 0.6).unwrap().values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn right_derivative_of_constant() {
        let m = mesh(64, 0.5);
        let c = TimeSignal::from_fn(m, |_| 3.0);
        let d = rl_derivative_right(&c, 0.5).unwrap();
        for k in 0..m.steps() {
            let exact = 3.0 * (1.0 - m.t(k)).powf(-0.5) / gamma(0.5);
            assert!((d.values()[k] - exact).abs() < 1e-12 * exact.abs().max(1.0));
        }
    }

    #[test]
    fn ibp_zero_signal() {
        let m = mesh(16, 0.5);
        let g = TimeSignal::from_fn(m, |t| t.cos());
        assert_eq!(ibp_residual(&TimeSignal::zeros(m), &g, 0.5).unwrap(), 0.0);
    }
}
