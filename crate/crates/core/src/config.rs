//! Experiment configuration: one JSON document describing geometry, orders,
//! coefficients, bases, regularization and noise.

use serde::{Deserialize, Serialize};

use crate::dnmap::bump;
use crate::error::{Error, Result};
use crate::field::SpaceTimeField;
use crate::forward::SemilinearSpec;
use crate::grid::{GridSpec, SpaceGrid};
use crate::inversion::{CellPartition, TikhonovOptions};
use crate::spacefrac::MagneticPotential;
use crate::timefrac::TimeMesh;

/// Smooth space-time bump `amplitude · β(|x - center| / radius) · β((t - t_center) / t_radius)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BumpSpec {
    pub amplitude: f64,
    pub center: [f64; 2],
    pub radius: f64,
    pub t_center: f64,
    pub t_radius: f64,
}

impl BumpSpec {
    pub fn eval(&self, x: [f64; 2], t: f64, dim: usize) -> f64 {
        let r2: f64 = (0..dim).map(|d| (x[d] - self.center[d]).powi(2)).sum();
        self.amplitude * bump(r2.sqrt() / self.radius) * bump((t - self.t_center) / self.t_radius)
    }

    fn validate(&self, what: &str) -> Result<()> {
        let finite = self.amplitude.is_finite()
            && self.center.iter().all(|c| c.is_finite())
            && self.t_center.is_finite();
        if !finite || !(self.radius > 0.0) || !(self.t_radius > 0.0) {
            return Err(Error::Config(format!("{what}: bump needs finite data and positive radii")));
        }
        Ok(())
    }
}

/// Scalar coefficient `constant + Σ bumps`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientSpec {
    #[serde(default)]
    pub constant: f64,
    #[serde(default)]
    pub bumps: Vec<BumpSpec>,
}

impl CoefficientSpec {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn eval(&self, x: [f64; 2], t: f64, dim: usize) -> f64 {
        self.constant + self.bumps.iter().map(|b| b.eval(x, t, dim)).sum::<f64>()
    }

    /// Values on Ω nodes.
    pub fn field(&self, grid: &SpaceGrid, mesh: TimeMesh) -> SpaceTimeField {
        let dim = grid.dim();
        SpaceTimeField::on_omega(grid, mesh, |x, t| self.eval(x, t, dim))
    }

    fn validate(&self, what: &str) -> Result<()> {
        if !self.constant.is_finite() {
            return Err(Error::Config(format!("{what}: constant is not finite")));
        }
        self.bumps.iter().try_for_each(|b| b.validate(what))
    }
}

/// Magnetic potential `Σ direction_i · bump_i`, supported where the bumps are.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialSpec {
    #[serde(default)]
    pub terms: Vec<PotentialTerm>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialTerm {
    pub direction: [f64; 2],
    pub profile: BumpSpec,
}

impl PotentialSpec {
    pub fn is_zero(&self) -> bool {
        self.terms.iter().all(|t| t.profile.amplitude == 0.0 || t.direction == [0.0, 0.0])
    }

    pub fn potential(&self, grid: &SpaceGrid, mesh: &TimeMesh) -> Result<Option<MagneticPotential>> {
        if self.is_zero() {
            return Ok(None);
        }
        let dim = grid.dim();
        let a = MagneticPotential::from_fn(grid, &mesh.times(), |x, t| {
            let mut v = [0.0; 2];
            for term in &self.terms {
                let p = term.profile.eval(x, t, dim);
                v[0] += term.direction[0] * p;
                if dim == 2 {
                    v[1] += term.direction[1] * p;
                }
            }
            v
        })?;
        Ok(Some(a))
    }

    /// `sup |A|` bound from the term amplitudes.
    pub fn sup_bound(&self) -> f64 {
        self.terms
            .iter()
            .map(|t| t.profile.amplitude.abs() * (t.direction[0].powi(2) + t.direction[1].powi(2)).sqrt())
            .sum()
    }

    fn validate(&self) -> Result<()> {
        for t in &self.terms {
            t.profile.validate("potential")?;
            if t.direction.iter().any(|d| !d.is_finite()) {
                return Err(Error::Config("potential: direction is not finite".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisConfig {
    /// Spatial bumps per axis of each window.
    pub per_axis: usize,
    /// Temporal bumps.
    pub n_time: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellConfig {
    pub per_axis: usize,
    pub time_cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    /// Standard deviation relative to the RMS of the DN entries.
    pub level: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SemilinearConfig {
    /// `a_k`, one per power.
    pub coeffs: Vec<CoefficientSpec>,
    /// `b_1 = 0 < b_2 < …`.
    pub powers: Vec<f64>,
    /// Largest scale of the ladder.
    pub lambda0: f64,
    /// Number of halvings (`≥ 2`).
    pub rungs: usize,
    /// Scales for the linearization-gap sweep.
    pub gap_lambdas: Vec<f64>,
    /// Replaces the top-level Tikhonov options for this experiment.
    #[serde(default)]
    pub tikhonov: Option<TikhonovOptions>,
}

/// Regularized control experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RungeConfig {
    /// Target `1_{[a,b]}(t) φ(x)` with `φ` a bump of this centre and radius.
    pub center: [f64; 2],
    pub radius: f64,
    pub t_window: [f64; 2],
    /// Basis sizes per axis compared for the density trend.
    pub basis_sizes: Vec<usize>,
    /// Regularization sweep for the control-norm trend.
    pub regs: Vec<f64>,
}

/// Single JSON document describing an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub geometry: GridSpec,
    pub alpha: f64,
    pub s: f64,
    pub t_final: f64,
    pub steps: usize,
    /// Known or reference potential used by the forward problem and by `invert_q`.
    #[serde(default)]
    pub potential: PotentialSpec,
    /// Reference potential `q_1`.
    #[serde(default)]
    pub q_reference: CoefficientSpec,
    /// Twin potential `q_2` producing the synthetic data.
    #[serde(default)]
    pub q: CoefficientSpec,
    pub basis: BasisConfig,
    pub cells: CellConfig,
    pub tikhonov: TikhonovOptions,
    pub noise: NoiseConfig,
    #[serde(default)]
    pub semilinear: Option<SemilinearConfig>,
    #[serde(default)]
    pub runge: Option<RungeConfig>,
    pub output_dir: String,
}

impl ExperimentConfig {
    /// Twin experiment for `q` in 1D.
    pub fn potential_twin_1d() -> Self {
        Self {
            geometry: GridSpec::potential_1d(128),
            alpha: 0.5,
            s: 0.5,
            t_final: 1.0,
            steps: 32,
            potential: PotentialSpec::default(),
            q_reference: CoefficientSpec::zero(),
            q: CoefficientSpec {
                constant: 0.0,
                bumps: vec![BumpSpec { amplitude: 2.0, center: [0.08, 0.0], radius: 0.15, t_center: 0.45, t_radius: 0.35 }],
            },
            basis: BasisConfig { per_axis: 6, n_time: 6 },
            cells: CellConfig { per_axis: 4, time_cells: 4 },
            tikhonov: TikhonovOptions::default(),
            noise: NoiseConfig { level: 0.0, seed: 0 },
            semilinear: Some(SemilinearConfig {
                coeffs: vec![
                    CoefficientSpec {
                        constant: 0.0,
                        bumps: vec![BumpSpec { amplitude: 2.0, center: [-0.05, 0.0], radius: 0.2, t_center: 0.5, t_radius: 0.45 }],
                    },
                    CoefficientSpec {
                        constant: 0.0,
                        bumps: vec![BumpSpec { amplitude: 3.0, center: [0.05, 0.0], radius: 0.2, t_center: 0.5, t_radius: 0.45 }],
                    },
                ],
                powers: vec![0.0, 1.0],
                lambda0: 0.5,
                rungs: 3,
                gap_lambdas: vec![0.4, 0.2, 0.1, 0.05, 0.025],
                tikhonov: Some(TikhonovOptions { reg: 1e-3, ..TikhonovOptions::default() }),
            }),
            runge: Some(RungeConfig {
                center: [0.0, 0.0],
                radius: 0.25,
                t_window: [0.25, 0.75],
                basis_sizes: vec![4, 8],
                regs: vec![1e-4, 1e-6, 1e-8, 1e-10],
            }),
            output_dir: "out".into(),
        }
    }

    /// Magnetic twin in 1D: windows outside `B_{3r}`, `q` known.
    pub fn magnetic_twin_1d() -> Self {
        Self {
            geometry: GridSpec::default_1d(128),
            potential: PotentialSpec {
                terms: vec![PotentialTerm {
                    direction: [1.0, 0.0],
                    profile: BumpSpec { amplitude: 2.5, center: [0.0, 0.0], radius: 0.24, t_center: 0.5, t_radius: 0.45 },
                }],
            },
            q: CoefficientSpec::zero(),
            basis: BasisConfig { per_axis: 5, n_time: 4 },
            tikhonov: TikhonovOptions { reg: 1e-3, max_iter: 20, tol: 1e-4, refine: 2, ridge: 1e-2 },
            semilinear: None,
            runge: None,
            ..Self::potential_twin_1d()
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    /// Re-check every module invariant; returns the grid and mesh on success.
    pub fn validate(&self) -> Result<(SpaceGrid, TimeMesh)> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.s > 0.0 && self.s < 1.0) {
            return Err(Error::Config(format!("s must lie in (0, 1), got {}", self.s)));
        }
        let grid = SpaceGrid::new(self.geometry.clone()).map_err(|e| Error::Config(e.to_string()))?;
        let mesh = TimeMesh::new(self.t_final, self.steps, self.alpha).map_err(|e| Error::Config(e.to_string()))?;
        self.q.validate("q")?;
        self.q_reference.validate("q_reference")?;
        self.potential.validate()?;
        if !self.potential.is_zero() {
            grid.check_magnetic_hypotheses().map_err(|e| Error::Config(e.to_string()))?;
        }
        if self.basis.per_axis == 0 || self.basis.n_time == 0 {
            return Err(Error::Config("basis sizes must be positive".into()));
        }
        CellPartition::new(&grid, mesh, self.cells.per_axis, self.cells.time_cells)
            .map_err(|e| Error::Config(e.to_string()))?;
        let t = &self.tikhonov;
        if !(t.reg > 0.0) || !(t.ridge >= 0.0) || t.max_iter == 0 || !(t.tol > 0.0) {
            return Err(Error::Config("tikhonov: need reg > 0, ridge ≥ 0, max_iter ≥ 1, tol > 0".into()));
        }
        if !(self.noise.level >= 0.0) || !self.noise.level.is_finite() {
            return Err(Error::Config("noise level must be finite and nonnegative".into()));
        }
        if let Some(sl) = &self.semilinear {
            for (k, c) in sl.coeffs.iter().enumerate() {
                c.validate(&format!("semilinear a_{}", k + 1))?;
            }
            let fields: Vec<SpaceTimeField> = sl.coeffs.iter().map(|c| c.field(&grid, mesh)).collect();
            SemilinearSpec::new(fields, sl.powers.clone()).map_err(|e| Error::Config(e.to_string()))?;
            if !(sl.lambda0 > 0.0) || sl.rungs < 2 {
                return Err(Error::Config("semilinear: need lambda0 > 0 and at least two rungs".into()));
            }
            if sl.gap_lambdas.iter().any(|l| !(*l > 0.0)) {
                return Err(Error::Config("semilinear: gap scales must be positive".into()));
            }
        }
        if let Some(r) = &self.runge {
            if !(r.radius > 0.0) || r.center.iter().any(|c| !c.is_finite()) {
                return Err(Error::Config("runge: target needs a finite centre and positive radius".into()));
            }
            if r.basis_sizes.is_empty() || r.basis_sizes.contains(&0) {
                return Err(Error::Config("runge: basis sizes must be positive".into()));
            }
            if r.regs.iter().any(|e| !(*e > 0.0)) {
                return Err(Error::Config("runge: regularization must be positive".into()));
            }
            if !(r.t_window[0] < r.t_window[1]) {
                return Err(Error::Config("runge: empty time window".into()));
            }
        }
        Ok((grid, mesh))
    }

    pub fn q_field(&self, grid: &SpaceGrid, mesh: TimeMesh) -> SpaceTimeField {
        self.q.field(grid, mesh)
    }

    pub fn q_reference_field(&self, grid: &SpaceGrid, mesh: TimeMesh) -> SpaceTimeField {
        self.q_reference.field(grid, mesh)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_round_trip() {
        for cfg in [ExperimentConfig::potential_twin_1d(), ExperimentConfig::magnetic_twin_1d()] {
            cfg.validate().unwrap();
            let text = cfg.to_json();
            let back = ExperimentConfig::from_json(&text).unwrap();
            assert_eq!(back, cfg);
            assert_eq!(back.to_json(), text);
        }
    }

    #[test]
    fn overlapping_window_is_rejected_at_parse() {
        let mut cfg = ExperimentConfig::potential_twin_1d();
        cfg.geometry.w1 = crate::grid::Window::interval(0.1, 0.6);
        let err = ExperimentConfig::from_json(&cfg.to_json()).unwrap_err();
        assert!(err.to_string().contains("Omega"), "{err}");
    }

    #[test]
    fn magnetic_hypothesis_is_named() {
        let mut cfg = ExperimentConfig::magnetic_twin_1d();
        cfg.geometry.magnetic = false;
        cfg.geometry.w1 = crate::grid::Window::interval(0.5, 0.7);
        let err = ExperimentConfig::from_json(&cfg.to_json()).unwrap_err();
        assert!(err.to_string().contains("B_3r"), "{err}");
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let mut v: serde_json::Value = serde_json::from_str(&ExperimentConfig::potential_twin_1d().to_json()).unwrap();
        v["bogus"] = serde_json::json!(1);
        assert!(ExperimentConfig::from_json(&v.to_string()).is_err());
    }
}
