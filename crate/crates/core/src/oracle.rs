//! Reference computations that share no code with the grid solvers: the
//! Mittag-Leffler function, eigen-expansion solutions of the fractional ODE
//! system, and brute-force principal-value quadrature of the fractional Laplacian.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::quad::{integrate, integrate_breaks};
use crate::special::{gamma, rgamma};
use crate::timefrac::TimeMesh;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MittagLefflerMethod {
    Exponential,
    TaylorSeries,
    IntegralRepresentation,
    AsymptoticTail,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MittagLefflerEval {
    pub alpha: f64,
    pub beta: f64,
    pub argument: f64,
    pub value: f64,
    pub method: MittagLefflerMethod,
}

/// `E_α(x)` for `x ≤ 0`.
pub fn mittag_leffler(alpha: f64, x: f64) -> Result<f64> {
    Ok(mittag_leffler2(alpha, 1.0, x)?.value)
}

/// Two-parameter `E_{α,β}(x)` for `x ≤ 0`, `0 < α ≤ 1`, `0 < β ≤ 1 + α`.
pub fn mittag_leffler2(alpha: f64, beta: f64, x: f64) -> Result<MittagLefflerEval> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Domain(format!("Mittag-Leffler order must lie in (0,1], got {alpha}")));
    }
    if !(beta > 0.0 && beta <= 1.0 + alpha) {
        return Err(Error::Domain(format!("second parameter must lie in (0, 1+alpha], got {beta}")));
    }
    if !(x <= 0.0) {
        return Err(Error::Domain(format!("argument must be nonpositive, got {x}")));
    }
    let eval = |value, method| MittagLefflerEval { alpha, beta, argument: x, value, method };
    if alpha == 1.0 && beta == 1.0 {
        return Ok(eval(x.exp(), MittagLefflerMethod::Exponential));
    }
    let z = -x;
    // The largest series term is about exp(z^{1/α}); keep it small enough for 1e-13.
    if z.powf(1.0 / alpha) <= 4.0 {
        return Ok(eval(taylor(alpha, beta, x), MittagLefflerMethod::TaylorSeries));
    }
    if alpha == 1.0 {
        // E_{1,β} off the exponential case: only β = 2 would be reachable, handled by series above
        // for small z; use the elementary closed form otherwise.
        if beta == 2.0 {
            return Ok(eval((x.exp() - 1.0) / x, MittagLefflerMethod::Exponential));
        }
        return Err(Error::Domain("E_{1,beta} only implemented for beta in {1,2}".into()));
    }
    if z > 1e6 {
        return Ok(eval(asymptotic(alpha, beta, x), MittagLefflerMethod::AsymptoticTail));
    }
    Ok(eval(integral_rep(alpha, beta, x)?, MittagLefflerMethod::IntegralRepresentation))
}

fn taylor(alpha: f64, beta: f64, x: f64) -> f64 {
    let mut sum = 0.0;
    let mut pow = 1.0;
    for k in 0..400 {
        let term = pow * rgamma(alpha * k as f64 + beta);
        sum += term;
        if k > 3 && term.abs() < 1e-17 * sum.abs().max(1e-300) {
            break;
        }
        pow *= x;
    }
    sum
}

fn asymptotic(alpha: f64, beta: f64, x: f64) -> f64 {
    let mut sum = 0.0;
    let mut p = 1.0;
    for k in 1..=8 {
        p /= x;
        sum -= p * rgamma(beta - alpha * k as f64);
    }
    sum
}

/// Real-axis integral representation, valid for `0 < α < 1`, `β < 1 + α`, `x < 0`.
fn integral_rep(alpha: f64, beta: f64, x: f64) -> Result<f64> {
    let s1 = (PI * (1.0 - beta)).sin();
    let s2 = (PI * (1.0 - beta + alpha)).sin();
    let c = (PI * alpha).cos();
    let kernel = |r: f64| {
        if r <= 0.0 {
            return 0.0;
        }
        let num = r * s1 - x * s2;
        let den = r * r - 2.0 * r * x * c + x * x;
        r.powf((1.0 - beta) / alpha) * (-r.powf(1.0 / alpha)).exp() * num / den / (alpha * PI)
    };
    let z = -x;
    let r_max = 60f64.powf(alpha);
    let mut breaks = vec![0.0, 0.1 * z.min(r_max), z.min(r_max), r_max];
    breaks.dedup_by(|a, b| (*a - *b).abs() < 1e-300);
    let res = integrate_breaks(kernel, &breaks, 1e-16, 1e-13);
    // Near α = 1 the kernel peaks sharply at r = -x and the tight tolerance
    // can stall short of convergence with an already negligible error.
    if !res.converged && res.error.abs() > 1e-10 * res.value.abs() {
        return Err(Error::Quadrature { last: res.value, previous: res.value + res.error });
    }
    Ok(res.value)
}

/// Solve `∂^α_t u + L u = φ θ(t)`, `u(0) = 0`, per eigenmode of the symmetric `L`:
/// `u_j(t) = ∫_0^t (t-τ)^{α-1} E_{α,α}(-λ_j (t-τ)^α) θ(τ) dτ · ⟨φ, v_j⟩`.
///
/// Returns one spatial vector per mesh node.
pub fn eigen_reference_solution(
    l: &DMatrix<f64>,
    spatial: &DVector<f64>,
    temporal: impl Fn(f64) -> f64 + Sync,
    mesh: &TimeMesh,
) -> Result<Vec<DVector<f64>>> {
    let n = l.nrows();
    if l.ncols() != n || spatial.len() != n {
        return Err(Error::Domain("matrix and forcing sizes disagree".into()));
    }
    let scale = l.amax().max(f64::MIN_POSITIVE);
    let asym = (l - l.transpose()).amax() / scale;
    if asym > 1e-12 {
        return Err(Error::NotSymmetric(asym));
    }
    let eig = SymmetricEigen::new(l.clone());
    let alpha = mesh.alpha();
    let coeffs = eig.eigenvectors.transpose() * spatial;
    let cmax = coeffs.amax();
    let mut out = vec![DVector::zeros(n); mesh.len()];
    for j in 0..n {
        let cj = coeffs[j];
        if cj == 0.0 || cj.abs() < 1e-15 * cmax {
            continue;
        }
        let lam = eig.eigenvalues[j];
        let v = eig.eigenvectors.column(j);
        for (k, slot) in out.iter_mut().enumerate().skip(1) {
            let t = mesh.t(k);
            let amp = scalar_mode_response(alpha, lam, t, &temporal)?;
            *slot += v * (cj * amp);
        }
    }
    Ok(out)
}

/// `∫_0^t (t-τ)^{α-1} E_{α,α}(-λ (t-τ)^α) θ(τ) dτ` via `v = (t-τ)^α`.
pub fn scalar_mode_response(alpha: f64, lambda: f64, t: f64, theta: impl Fn(f64) -> f64) -> Result<f64> {
    if t <= 0.0 {
        return Ok(0.0);
    }
    let top = t.powf(alpha);
    let failure = std::cell::RefCell::new(None);
    let res = integrate(
        |v| {
            let ml = match mittag_leffler2(alpha, alpha, -lambda * v) {
                Ok(e) => e.value,
                Err(e) => {
                    failure.borrow_mut().get_or_insert(e);
                    0.0
                }
            };
            let tau = (t - v.powf(1.0 / alpha)).max(0.0);
            ml * theta(tau)
        },
        0.0,
        top,
        1e-14,
        1e-11,
    );
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    if !res.converged {
        return Err(Error::Quadrature { last: res.value, previous: res.value + res.error });
    }
    Ok(res.value / alpha)
}

/// Options for [`brute_force_frac_laplacian`].
#[derive(Debug, Clone)]
pub struct BruteForceOptions {
    /// Relative tolerance of the inner adaptive integrals.
    pub rel_tol: f64,
    /// Largest excision radius; `ε, ε/2, ε/4` are used for extrapolation.
    pub epsilon: f64,
    /// Radial cutoff beyond which `u` is replaced by `far_mean`.
    pub far_radius: f64,
    /// Mean value of `u` at infinity used for the analytic far tail.
    pub far_mean: f64,
    /// Additional radial break points (kinks or jumps of `u` seen from `x`).
    pub breaks: Vec<f64>,
}

impl Default for BruteForceOptions {
    fn default() -> Self {
        Self { rel_tol: 1e-10, epsilon: 0.02, far_radius: 4.0, far_mean: 0.0, breaks: Vec::new() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BruteForce {
    pub value: f64,
    pub error: f64,
}

/// `c_{n,s} P.V.∫ (u(x) - u(y)) |x-y|^{-n-2s} dy` for `n ∈ {1, 2}`.
///
/// The integral is written radially with symmetric second differences,
/// excised on `|y - x| < ε`, and extrapolated in `ε` using the expansion
/// `I(ε) = I - a ε^{2-2s} - b ε^{4-2s} + …` valid for smooth `u` near `x`.
pub fn brute_force_frac_laplacian(
    u: impl Fn([f64; 2]) -> f64 + Sync,
    x: [f64; 2],
    dim: usize,
    s: f64,
    opts: &BruteForceOptions,
) -> Result<BruteForce> {
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::Domain(format!("s must lie in (0,1), got {s}")));
    }
    if dim != 1 && dim != 2 {
        return Err(Error::Domain(format!("dimension must be 1 or 2, got {dim}")));
    }
    let nf = dim as f64;
    let c = 4f64.powf(s) * gamma(0.5 * nf + s) / (PI.powf(0.5 * nf) * gamma(-s).abs());
    let ux = u(x);
    let big_r = opts.far_radius;
    let tol = opts.rel_tol;
    let mut failed = false;

    // ρ(r) = ∫ over the half sphere of (2u(x) - u(x+rθ) - u(x-rθ)).
    let rho = |r: f64| -> (f64, bool) {
        if dim == 1 {
            (2.0 * ux - u([x[0] + r, 0.0]) - u([x[0] - r, 0.0]), true)
        } else {
            let res = integrate(
                |th: f64| {
                    let (sn, cs) = th.sin_cos();
                    2.0 * ux - u([x[0] + r * cs, x[1] + r * sn]) - u([x[0] - r * cs, x[1] - r * sn])
                },
                0.0,
                PI,
                1e-13,
                tol,
            );
            (res.value, res.converged)
        }
    };
    let radial = |lo: f64, failed: &mut bool| -> f64 {
        let mut br = vec![lo];
        let mut extra: Vec<f64> = opts.breaks.iter().copied().filter(|b| *b > lo && *b < big_r).collect();
        extra.sort_by(f64::total_cmp);
        br.extend(extra);
        br.push(big_r);
        let flag = std::cell::Cell::new(false);
        let res = integrate_breaks(
            |r| {
                let (v, ok) = rho(r);
                if !ok {
                    flag.set(true);
                }
                v * r.powf(-1.0 - 2.0 * s)
            },
            &br,
            1e-13,
            tol,
        );
        if !res.converged || flag.get() {
            *failed = true;
        }
        res.value
    };
    // Far tail: u ≈ far_mean, sphere measure folded into the half-sphere integral.
    let half_sphere = if dim == 1 { 1.0 } else { PI };
    let tail = half_sphere * 2.0 * (ux - opts.far_mean) * big_r.powf(-2.0 * s) / (2.0 * s);

    let eps = opts.epsilon;
    let levels: Vec<f64> = (0..3).map(|k| radial(eps / f64::powi(2.0, k), &mut failed) + tail).collect();
    // Richardson in ε: remove ε^{2-2s} then ε^{4-2s}.
    let p1 = 2.0 - 2.0 * s;
    let p2 = 4.0 - 2.0 * s;
    let r1 = |a: f64, b: f64, p: f64| {
        let f = 2f64.powf(p);
        (f * b - a) / (f - 1.0)
    };
    let e01 = r1(levels[0], levels[1], p1);
    let e12 = r1(levels[1], levels[2], p1);
    let e = r1(e01, e12, p2);
    let value = c * e;
    let error = c * (e - e12).abs();
    if failed || !value.is_finite() {
        return Err(Error::Quadrature { last: c * e, previous: c * e12 });
    }
    Ok(BruteForce { value, error })
}

/// `(-Δ)^s (1 - |x|²)_+^s = 4^s Γ(1+s) Γ(n/2+s) / Γ(n/2)` inside the unit ball.
pub fn bump_power_closed_form(dim: usize, s: f64) -> f64 {
    let n = dim as f64;
    4f64.powf(s) * gamma(1.0 + s) * gamma(0.5 * n + s) / gamma(0.5 * n)
}
