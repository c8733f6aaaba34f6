//! Experiment runner: each command validates the config, runs one stage,
//! persists artifacts under the output directory and writes a hashed manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::dnmap::{assemble_dn, bump, duality_residual, DNRecord, Flavor, SourceBasis};
use crate::error::{Error, Result};
use crate::field::SpaceTimeField;
use crate::forward::{linearization_gap, linfinity_certificate, ForwardModel, SemilinearSpec};
use crate::grid::SpaceGrid;
use crate::inversion::{
    potential_field, recover_a, recover_q_linear, recover_semilinear, runge_control, semilinear_dn, CellPartition,
    ControlOperator, ControlProblem, RecoveryReport,
};
use crate::io::{sha256_file, sha256_hex, write_csv, Container, ContainerKind};
use crate::oracle::eigen_reference_solution;
use crate::spacefrac::assemble_fractional_laplacian;
use crate::special::gamma;
use crate::timefrac::{
    caputo_derivative, ibp_residual, rl_integral_left, TimeMesh, TimeSignal,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Path relative to the output directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
    /// Manifests of the stages this run consumed.
    pub upstream: Vec<Artifact>,
    pub artifacts: Vec<Artifact>,
    pub stages: Vec<StageTiming>,
    pub checks: Vec<CheckResult>,
}

impl RunManifest {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn file_name(command: &str) -> String {
        format!("{command}.manifest.json")
    }

    pub fn load(dir: &Path, command: &str) -> Result<Self> {
        let path = dir.join(Self::file_name(command));
        let text = fs::read_to_string(&path)
            .map_err(|_| Error::MissingArtifact(format!("{} (run `{command}` first)", path.display())))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Every listed artifact exists and matches its hash.
    pub fn verify(&self, dir: &Path) -> Result<()> {
        for a in &self.artifacts {
            let path = dir.join(&a.path);
            if !path.exists() {
                return Err(Error::MissingArtifact(path.display().to_string()));
            }
            let hash = sha256_file(&path)?;
            if hash != a.sha256 {
                return Err(Error::MissingArtifact(format!("{} (hash mismatch: manifest {}, file {hash})", a.path, a.sha256)));
            }
        }
        Ok(())
    }

    pub fn artifact(&self, name: &str) -> Option<&Artifact> {
        self.artifacts.iter().find(|a| a.path == name)
    }
}

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

/// Runner state for one command.
pub struct Run {
    pub cfg: ExperimentConfig,
    pub grid: SpaceGrid,
    pub mesh: TimeMesh,
    pub out: PathBuf,
    manifest: RunManifest,
}

impl Run {
    pub fn new(command: &str, cfg: ExperimentConfig, opts: &RunOptions) -> Result<Self> {
        let mut cfg = cfg;
        if let Some(seed) = opts.seed {
            cfg.noise.seed = seed;
        }
        let (grid, mesh) = cfg.validate()?;
        let out = opts.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.output_dir));
        fs::create_dir_all(&out)?;
        let manifest = RunManifest {
            command: command.to_string(),
            config_sha256: sha256_hex(cfg.to_json().as_bytes()),
            seed: cfg.noise.seed,
            upstream: Vec::new(),
            artifacts: Vec::new(),
            stages: Vec::new(),
            checks: Vec::new(),
        };
        Ok(Self { cfg, grid, mesh, out, manifest })
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    fn record(&mut self, path: &str, sha256: String) {
        self.manifest.artifacts.retain(|a| a.path != path);
        self.manifest.artifacts.push(Artifact { path: path.to_string(), sha256 });
    }

    pub fn write_container(&mut self, name: &str, c: &Container) -> Result<()> {
        let hash = c.write(&self.out.join(name))?;
        self.record(name, hash);
        Ok(())
    }

    pub fn write_csv(&mut self, name: &str, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
        let hash = write_csv(&self.out.join(name), header, rows)?;
        self.record(name, hash);
        Ok(())
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> Result<()> {
        fs::write(self.out.join(name), text)?;
        self.record(name, sha256_hex(text.as_bytes()));
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let text = serde_json::to_string_pretty(value)?;
        self.write_text(name, &text)
    }

    pub fn check(&mut self, name: &str, value: f64, threshold: f64, passed: bool) {
        self.manifest.checks.push(CheckResult { name: name.to_string(), value, threshold, passed });
    }

    /// Time a stage and record its wall clock.
    pub fn stage<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let t0 = Instant::now();
        let out = f(self);
        self.manifest.stages.push(StageTiming { stage: name.to_string(), seconds: t0.elapsed().as_secs_f64() });
        out
    }

    /// Load a manifest from an earlier command, verify its artifacts and chain it.
    pub fn upstream(&mut self, command: &str) -> Result<RunManifest> {
        let m = RunManifest::load(&self.out, command)?;
        m.verify(&self.out)?;
        let name = RunManifest::file_name(command);
        let hash = sha256_file(&self.out.join(&name))?;
        self.manifest.upstream.push(Artifact { path: name, sha256: hash });
        Ok(m)
    }

    pub fn read_record(&self, upstream: &RunManifest, name: &str) -> Result<DNRecord> {
        if upstream.artifact(name).is_none() {
            return Err(Error::MissingArtifact(format!("{name} is not listed in the {} manifest", upstream.command)));
        }
        let path = self.out.join(name);
        if !path.exists() {
            return Err(Error::MissingArtifact(path.display().to_string()));
        }
        DNRecord::from_container(&Container::read(&path)?)
    }

    /// Write the manifest and return it.
    pub fn finish(mut self) -> Result<RunManifest> {
        let cfg_text = self.cfg.to_json();
        self.write_text(&format!("{}.config.json", self.manifest.command), &cfg_text)?;
        let path = self.out.join(RunManifest::file_name(&self.manifest.command));
        fs::write(path, serde_json::to_string_pretty(&self.manifest)?)?;
        Ok(self.manifest)
    }

    pub fn reference_model(&self) -> Result<ForwardModel> {
        let a = self.cfg.potential.potential(&self.grid, &self.mesh)?;
        ForwardModel::new(&self.grid, self.mesh, self.cfg.s, a, self.cfg.q_reference_field(&self.grid, self.mesh))
    }

    pub fn truth_model(&self, base: &ForwardModel) -> Result<ForwardModel> {
        base.with_q(self.cfg.q_field(&self.grid, self.mesh))
    }

    pub fn forward_basis(&self) -> Result<SourceBasis> {
        let spec = self.grid.spec();
        SourceBasis::new(&self.grid, &spec.w1, self.grid.w1(), self.cfg.basis.per_axis, self.mesh, self.cfg.basis.n_time)
    }

    pub fn dual_basis(&self) -> Result<SourceBasis> {
        let spec = self.grid.spec();
        SourceBasis::new(&self.grid, &spec.w2, self.grid.w2(), self.cfg.basis.per_axis, self.mesh, self.cfg.basis.n_time)
    }

    pub fn cells(&self) -> Result<CellPartition> {
        CellPartition::new(&self.grid, self.mesh, self.cfg.cells.per_axis, self.cfg.cells.time_cells)
    }
}

fn field_container(f: &SpaceTimeField, tag: &str) -> Container {
    let m = f.mesh();
    Container::new(
        ContainerKind::Field,
        vec![m.len() as u64, f.nodes() as u64],
        vec![m.t_final(), m.steps() as f64, m.alpha()],
        tag.to_string(),
        f.values().to_vec(),
    )
    .expect("field dimensions are consistent")
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Observed order `log2(e_coarse / e_fine)` averaged over successive halvings.
pub fn halving_rate(errors: &[f64]) -> f64 {
    let rates: Vec<f64> = errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    rates.iter().sum::<f64>() / rates.len() as f64
}

/// Errors of the composition identity `I^α I^{1-α} u = ∫_0^t u` and of the
/// fractional integration by parts on meshes `n, 2n, 4n, …`.
pub fn time_identity_errors(alpha: f64, t_final: f64, steps: &[usize]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut semigroup = Vec::new();
    let mut ibp = Vec::new();
    for &n in steps {
        let mesh = TimeMesh::new(t_final, n, alpha)?;
        let u = TimeSignal::from_fn(mesh, |t| t.cos() + t);
        let composed = rl_integral_left(&rl_integral_left(&u, 1.0 - alpha)?, alpha)?;
        let err = mesh
            .times()
            .iter()
            .zip(composed.values())
            .map(|(&t, v)| (v - (t.sin() + 0.5 * t * t)).abs())
            .fold(0.0_f64, f64::max);
        semigroup.push(err);
        let f = TimeSignal::from_fn(mesh, |t| 1.0 + t * t);
        let g = TimeSignal::from_fn(mesh, |t| (2.0 * t).cos());
        ibp.push(ibp_residual(&f, &g, alpha)?);
    }
    Ok((semigroup, ibp))
}

/// `max_{t_k ≥ T/4} |∂^α t^α / Γ(α+1) - 1|` at the given resolution.
pub fn caputo_power_error(alpha: f64, t_final: f64, steps: usize) -> Result<f64> {
    let mesh = TimeMesh::new(t_final, steps, alpha)?;
    let u = TimeSignal::from_fn(mesh, |t| t.powf(alpha));
    let d = caputo_derivative(&u, alpha)?;
    let target = gamma(alpha + 1.0);
    Ok(mesh
        .times()
        .iter()
        .zip(d.values())
        .filter(|(t, _)| **t >= 0.25 * t_final)
        .map(|(_, v)| (v / target - 1.0).abs())
        .fold(0.0_f64, f64::max))
}

/// Identity suite for the time and space discretizations.
pub fn cmd_verify(cfg: ExperimentConfig, opts: &RunOptions) -> Result<RunManifest> {
    let mut run = Run::new("verify", cfg, opts)?;
    run.stage("time identities", |run| {
        let mut alphas = vec![0.3, 0.5, 0.7];
        if !alphas.contains(&run.cfg.alpha) {
            alphas.push(run.cfg.alpha);
        }
        let steps = [16usize, 32, 64, 128];
        let mut rows = Vec::new();
        for &alpha in &alphas {
            let (sg, ibp) = time_identity_errors(alpha, 1.0, &steps)?;
            for (i, &n) in steps.iter().enumerate() {
                rows.push(vec![alpha, n as f64, sg[i], ibp[i]]);
            }
            // Near α = 1 the kernels approach the trapezoid limit and the composition
            // error sits at roundoff; the rate is then uninformative.
            let sg_rate = halving_rate(&sg);
            let sg_ok = sg_rate >= 0.9 || sg.iter().all(|e| *e <= 1e-12);
            run.check(&format!("composition rate alpha={alpha}"), sg_rate, 0.9, sg_ok);
            let ibp_rate = halving_rate(&ibp);
            let ibp_ok = ibp_rate >= 0.9 || ibp.iter().all(|e| *e <= 1e-12);
            run.check(&format!("integration-by-parts rate alpha={alpha}"), ibp_rate, 0.9, ibp_ok);
            let cp = caputo_power_error(alpha, 1.0, 64)?;
            run.check(&format!("caputo of t^alpha alpha={alpha}"), cp, 0.05, cp <= 0.05);
            let c = TimeSignal::from_fn(TimeMesh::new(1.0, 64, alpha)?, |_| 3.5);
            let dc = caputo_derivative(&c, alpha)?.max_abs();
            run.check(&format!("caputo of constant alpha={alpha}"), dc, 0.0, dc == 0.0);
        }
        run.write_csv("convergence.csv", &["alpha", "steps", "composition_error", "ibp_residual"], &rows)
    })?;
    run.stage("operator structure", |run| {
        let base = assemble_fractional_laplacian(&run.grid, run.cfg.s)?;
        let sym = base.symmetry_error();
        run.check("operator symmetry", sym, 1e-12, sym <= 1e-12);
        let ones = vec![1.0; base.len()];
        let l1 = base.apply(&ones);
        let scale = base.matrix.amax();
        let annihilation = l1.iter().zip(base.tail.iter()).map(|(a, b)| (a - b).abs()).fold(0.0_f64, f64::max) / scale;
        run.check("constants annihilated after tail correction", annihilation, 1e-12, annihilation <= 1e-12);
        let mut exact = true;
        let mut worst_sym = 0.0_f64;
        if let Some(a) = run.cfg.potential.potential(&run.grid, &run.mesh)? {
            let windows: Vec<usize> = run.grid.w1().iter().chain(run.grid.w2()).copied().collect();
            let b0 = base.block(run.grid.omega(), &windows);
            for k in 0..run.mesh.len() {
                let la = base.with_magnetic(&run.grid, &a, k)?;
                worst_sym = worst_sym.max(la.symmetry_error());
                exact &= la.block(run.grid.omega(), &windows) == b0;
            }
        }
        run.check("magnetic operator symmetry", worst_sym, 1e-12, worst_sym <= 1e-12);
        run.check("window rows unaffected by the potential", if exact { 0.0 } else { 1.0 }, 0.0, exact);
        Ok(())
    })?;
    let rows: Vec<String> = run
        .manifest
        .checks
        .iter()
        .map(|c| format!("{},{:?},{:?},{}", c.name, c.value, c.threshold, c.passed))
        .collect();
    run.write_text("verify_checks.csv", &format!("check,value,threshold,passed\n{}\n", rows.join("\n")))?;
    run.finish()
}

/// Solve the forward problem for the first window source, certify the sup-norm
/// barrier and compare against the eigen-expansion oracle on a manufactured mode.
pub fn cmd_forward(cfg: ExperimentConfig, opts: &RunOptions) -> Result<RunManifest> {
    let mut run = Run::new("forward", cfg, opts)?;
    let reference = run.reference_model()?;
    let truth = run.truth_model(&reference)?;
    run.stage("solve", |run| {
        let basis = run.forward_basis()?;
        let g = basis.combine(&vec![1.0; basis.len()]);
        let u = truth.solve_caputo(&g, None)?;
        run.write_container("forward_u.bin", &field_container(&u, "forward solution, all nodes"))?;
        let g_sup = g.max_abs();
        let cert = linfinity_certificate(&run.grid, &u, truth.induced_forcing_sup(&g), g_sup);
        run.check("sup-norm barrier", cert.margin, cert.tolerance, cert.passed);
        let om = run.grid.omega();
        let centre = om[om.len() / 2];
        let rows: Vec<Vec<f64>> = (0..run.mesh.len()).map(|k| vec![run.mesh.t(k), u.get(centre, k), g.get(basis.window()[0], k)]).collect();
        run.write_csv("forward_trace.csv", &["t", "u_omega_centre", "g_window"], &rows)?;
        let k = run.mesh.steps();
        let rows: Vec<Vec<f64>> = (0..run.grid.len()).map(|i| vec![run.grid.coord(i)[0], run.grid.coord(i)[1], u.get(i, k)]).collect();
        run.write_csv("forward_final_slice.csv", &["x", "y", "u_T"], &rows)
    })?;
    run.stage("oracle", |run| {
        let model = ForwardModel::new(&run.grid, run.mesh, run.cfg.s, None, SpaceTimeField::zeros(run.grid.omega().len(), run.mesh))?;
        let lom = model.base().block(run.grid.omega(), run.grid.omega());
        let eig = nalgebra::SymmetricEigen::new(lom.clone());
        let j = eig.eigenvalues.imin();
        let v: Vec<f64> = eig.eigenvectors.column(j).iter().copied().collect();
        let theta = |t: f64| (std::f64::consts::PI * t / run.mesh.t_final()).sin().powi(2);
        let temporal: Vec<f64> = run.mesh.times().iter().map(|&t| theta(t)).collect();
        let f = SpaceTimeField::separable(&v, run.mesh, &temporal)?;
        let u = model.solve_caputo(&SpaceTimeField::zeros(run.grid.len(), run.mesh), Some(&f))?;
        let r = eigen_reference_solution(&lom, &nalgebra::DVector::from_vec(v), theta, &run.mesh)?;
        let w = run.mesh.trapezoid_weights();
        let (mut num, mut den) = (0.0, 0.0);
        for k in 0..run.mesh.len() {
            for (slot, &i) in run.grid.omega().iter().enumerate() {
                num += w[k] * (u.get(i, k) - r[k][slot]).powi(2);
                den += w[k] * r[k][slot].powi(2);
            }
        }
        let err = (num / den).sqrt();
        run.check("eigen-oracle relative L2 error", err, 1e-2, err <= 1e-2);
        Ok(())
    })?;
    run.finish()
}

/// Assemble forward and dual DN records for the reference and twin models.
pub fn cmd_dnmap(cfg: ExperimentConfig, opts: &RunOptions) -> Result<RunManifest> {
    let mut run = Run::new("dnmap", cfg, opts)?;
    let reference = run.reference_model()?;
    let truth = run.truth_model(&reference)?;
    run.stage("assemble", |run| {
        let fb = run.forward_basis()?;
        let db = run.dual_basis()?;
        let w1 = run.grid.w1().to_vec();
        let w2 = run.grid.w2().to_vec();
        let fwd_ref = assemble_dn(&reference, &fb, &w2, Flavor::Forward)?;
        let fwd = assemble_dn(&truth, &fb, &w2, Flavor::Forward)?;
        let dual = assemble_dn(&truth, &db, &w1, Flavor::Dual)?;
        run.write_container("dn_reference.bin", &fwd_ref.to_container())?;
        run.write_container("dn_truth.bin", &fwd.to_container())?;
        run.write_container("dn_dual.bin", &dual.to_container())?;
        run.write_csv("dn_truth.csv", &["source", "receiver", "k", "t", "value"], &fwd.csv_rows())?;
        if run.cfg.noise.level > 0.0 {
            let noisy = fwd.with_noise(run.cfg.noise.level, run.cfg.noise.seed)?;
            run.write_container("dn_truth_noisy.bin", &noisy.to_container())?;
        }
        let dr = duality_residual(&fwd, &dual, &fb, &db)?;
        run.check("duality residual", dr, 5e-3, dr <= 5e-3);
        let diff = fwd.difference(&fwd_ref)?;
        let d = diff.rms();
        if run.cfg.q != run.cfg.q_reference {
            let floor = 1e3 * 1e-13 * fwd.rms();
            run.check("twin records differ", d, floor, d > floor);
        }
        Ok(())
    })?;
    run.finish()
}

fn report_rows(cells: &CellPartition, report: &RecoveryReport, truth: Option<&SpaceTimeField>) -> Vec<Vec<f64>> {
    let proj = truth.map(|t| cells.project(t));
    (0..cells.len())
        .map(|m| {
            vec![
                (m % cells.space_cells()) as f64,
                (m / cells.space_cells()) as f64,
                report.estimate[m],
                proj.as_ref().map_or(f64::NAN, |p| p[m]),
            ]
        })
        .collect()
}

/// Recover `q - q_reference` from the twin DN record.
pub fn cmd_invert_q(cfg: ExperimentConfig, opts: &RunOptions) -> Result<RunManifest> {
    let mut run = Run::new("invert_q", cfg, opts)?;
    let up = run.upstream("dnmap")?;
    let noisy = run.cfg.noise.level > 0.0;
    let data = run.read_record(&up, if noisy { "dn_truth_noisy.bin" } else { "dn_truth.bin" })?;
    let reference = run.reference_model()?;
    let truth = run.cfg.q_field(&run.grid, run.mesh).sub(&run.cfg.q_reference_field(&run.grid, run.mesh));
    run.stage("recover", |run| {
        let basis = run.forward_basis()?;
        let cells = run.cells()?;
        let report = recover_q_linear(&reference, &data, &basis, &cells, &run.cfg.tikhonov, Some(&truth))?;
        run.write_json("recovery_q.json", &report)?;
        run.write_csv("recovery_q.csv", &["space_cell", "time_cell", "estimate", "truth"], &report_rows(&cells, &report, Some(&truth)))?;
        let err = report.error_vs_truth.unwrap_or(f64::INFINITY);
        if noisy {
            let truth_report = RecoveryReport { estimate: cells.project(&truth), ..report.clone() };
            let d = (report.peak_space_cell() as f64 - truth_report.peak_space_cell() as f64).abs();
            run.check("peak within one cell", d, 1.0, d <= 1.0);
        } else {
            run.check("q relative L2 error", err, 0.2, err <= 0.2);
        }
        Ok(())
    })?;
    run.finish()
}

/// Recover the magnetic potential (up to sign) with `q` known.
pub fn cmd_invert_a(cfg: ExperimentConfig, opts: &RunOptions) -> Result<RunManifest> {
    let mut run = Run::new("invert_A", cfg, opts)?;
    run.grid.check_magnetic_hypotheses()?;
    let Some(a) = run.cfg.potential.potential(&run.grid, &run.mesh)? else {
        return Err(Error::Config("invert_A needs a nonzero potential".into()));
    };
    let up = run.upstream("dnmap")?;
    let noisy = run.cfg.noise.level > 0.0;
    let data = run.read_record(&up, if noisy { "dn_truth_noisy.bin" } else { "dn_truth.bin" })?;
    let q = run.cfg.q_field(&run.grid, run.mesh);
    let known_q = ForwardModel::new(&run.grid, run.mesh, run.cfg.s, None, q.clone())?;
    run.stage("gauge", |run| {
        let basis = run.forward_basis()?;
        let plus = ForwardModel::with_base(&run.grid, run.mesh, known_q.base().clone(), Some(a.clone()), q.clone())?;
        let minus = ForwardModel::with_base(&run.grid, run.mesh, known_q.base().clone(), Some(a.negated()), q.clone())?;
        let w2 = run.grid.w2().to_vec();
        let same = assemble_dn(&plus, &basis, &w2, Flavor::Forward)? == assemble_dn(&minus, &basis, &w2, Flavor::Forward)?;
        run.check("records for A and -A identical", if same { 0.0 } else { 1.0 }, 0.0, same);
        Ok(())
    })?;
    run.stage("recover", |run| {
        let basis = run.forward_basis()?;
        let cells = run.cells()?;
        let report = recover_a(&known_q, &data, &basis, &cells, &run.cfg.tikhonov, Some(&a))?;
        run.write_json("recovery_A.json", &report)?;
        let truth = potential_field(&run.grid, &a, run.mesh);
        run.write_csv("recovery_A.csv", &["space_cell", "time_cell", "estimate", "truth"], &report_rows(&cells, &report, Some(&truth)))?;
        let err = report.error_vs_truth.unwrap_or(f64::INFINITY);
        run.check("A relative L2 error (min over sign)", err, 0.25, err <= 0.25);
        Ok(())
    })?;
    run.finish()
}

/// Data ladder, linearization gap sweep and successive-linearization recovery.
pub fn cmd_invert_semilinear(cfg: ExperimentConfig, opts: &RunOptions) -> Result<RunManifest> {
    let mut run = Run::new("invert_semilinear", cfg, opts)?;
    let Some(sl) = run.cfg.semilinear.clone() else {
        return Err(Error::Config("invert_semilinear needs a semilinear section".into()));
    };
    let reference = run.reference_model()?;
    let coeffs: Vec<SpaceTimeField> = sl.coeffs.iter().map(|c| c.field(&run.grid, run.mesh)).collect();
    let spec = SemilinearSpec::new(coeffs.clone(), sl.powers.clone())?;
    let basis = run.forward_basis()?;
    run.stage("linearization gap", |run| {
        let g = basis.combine(&vec![1.0; basis.len()]);
        let mut rows = Vec::new();
        for &lam in &sl.gap_lambdas {
            rows.push(vec![lam, linearization_gap(&reference, &spec, &g, lam)?]);
        }
        run.write_csv("linearization_gap.csv", &["lambda", "gap"], &rows)?;
        if sl.powers.len() >= 2 && rows.len() >= 2 {
            let x: Vec<f64> = rows.iter().map(|r| r[0]).collect();
            let y: Vec<f64> = rows.iter().map(|r| r[1]).collect();
            let slope = log_slope(&x, &y);
            let b2 = sl.powers[1];
            let rel = (slope - b2).abs() / b2;
            run.check("gap exponent vs b_2", slope, b2, rel <= 0.1);
        }
        Ok(())
    })?;
    run.stage("recover", |run| {
        let w2 = run.grid.w2().to_vec();
        let mut ladder = Vec::new();
        for i in 0..sl.rungs {
            let lam = sl.lambda0 / 2f64.powi(i as i32);
            let mut rec = semilinear_dn(&reference, &spec, &basis, &w2, lam)?;
            if run.cfg.noise.level > 0.0 {
                rec = rec.with_noise(run.cfg.noise.level, run.cfg.noise.seed.wrapping_add(i as u64))?;
            }
            run.write_container(&format!("semilinear_dn_{i}.bin"), &rec.to_container())?;
            ladder.push((lam, rec));
        }
        let cells = run.cells()?;
        let opts = sl.tikhonov.clone().unwrap_or_else(|| run.cfg.tikhonov.clone());
        let reports = recover_semilinear(&reference, &ladder, &basis, &sl.powers, &cells, &opts, Some(&coeffs))?;
        for (k, r) in reports.iter().enumerate() {
            run.write_json(&format!("recovery_a{}.json", k + 1), r)?;
            run.write_csv(
                &format!("recovery_a{}.csv", k + 1),
                &["space_cell", "time_cell", "estimate", "truth"],
                &report_rows(&cells, r, Some(&coeffs[k])),
            )?;
            let err = r.error_vs_truth.unwrap_or(f64::INFINITY);
            run.check(&format!("a_{} relative L2 error", k + 1), err, 0.25, err <= 0.25);
        }
        Ok(())
    })?;
    run.finish()
}

/// Runge control trends: density in the basis size and Tikhonov growth in `ε`.
pub fn cmd_runge(cfg: ExperimentConfig, opts: &RunOptions) -> Result<RunManifest> {
    let mut run = Run::new("runge", cfg, opts)?;
    let Some(rc) = run.cfg.runge.clone() else {
        return Err(Error::Config("runge needs a runge section".into()));
    };
    let reference = run.reference_model()?;
    let dim = run.grid.dim();
    let target = SpaceTimeField::on_omega(&run.grid, run.mesh, |x, t| {
        let r2: f64 = (0..dim).map(|d| (x[d] - rc.center[d]).powi(2)).sum();
        let inside = t >= rc.t_window[0] && t <= rc.t_window[1];
        if inside {
            bump(r2.sqrt() / rc.radius)
        } else {
            0.0
        }
    });
    let reg0 = *rc.regs.last().expect("validated non-empty");
    run.stage("density", |run| {
        let mut rows = Vec::new();
        let mut errors = Vec::new();
        for &n in &rc.basis_sizes {
            let basis = SourceBasis::new(&run.grid, &run.grid.spec().w1, run.grid.w1(), n, run.mesh, n)?;
            let op = ControlOperator::new(&reference, &basis, Flavor::Forward)?;
            let c = runge_control(&ControlProblem::new(target.clone(), Flavor::Forward, reg0)?, &op)?;
            rows.push(vec![n as f64, basis.len() as f64, c.achieved_error, c.control_norm, c.condition]);
            errors.push(c.achieved_error);
        }
        run.write_csv("runge_density.csv", &["per_axis", "basis_len", "achieved_error", "control_norm", "condition"], &rows)?;
        let monotone = errors.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9));
        run.check("achieved error nonincreasing in basis size", errors[errors.len() - 1], errors[0], monotone);
        if errors.len() >= 2 {
            let drop = 1.0 - errors[errors.len() - 1] / errors[0];
            run.check("error drop when the basis doubles", drop, 0.3, drop >= 0.3);
        }
        Ok(())
    })?;
    run.stage("regularization", |run| {
        let basis = run.forward_basis()?;
        let op = ControlOperator::new(&reference, &basis, Flavor::Forward)?;
        let target_norm = {
            let w = run.mesh.trapezoid_weights();
            let vol = run.grid.cell_volume();
            (0..run.mesh.len()).map(|k| w[k] * target.slice(k).iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt() * vol.sqrt()
        };
        let mut regs = rc.regs.clone();
        regs.sort_by(|a, b| b.partial_cmp(a).expect("finite"));
        let mut rows = Vec::new();
        for &eps in &regs {
            let c = runge_control(&ControlProblem::new(target.clone(), Flavor::Forward, eps)?, &op)?;
            rows.push(vec![eps, c.achieved_error, c.control_norm, target_norm / eps.sqrt(), c.condition]);
        }
        run.write_csv("runge_regularization.csv", &["eps", "achieved_error", "control_norm", "tikhonov_bound", "condition"], &rows)?;
        let err_monotone = rows.windows(2).all(|w| w[1][1] <= w[0][1] * (1.0 + 1e-9));
        run.check("achieved error nondecreasing in eps", rows[rows.len() - 1][1], rows[0][1], err_monotone);
        let norm_growth = rows.windows(2).all(|w| w[1][2] >= w[0][2] * (1.0 - 1e-9));
        let bounded = rows.iter().all(|r| r[2] <= r[3] * (1.0 + 1e-9));
        run.check("control norm grows as eps decreases", rows[rows.len() - 1][2], rows[0][2], norm_growth);
        run.check("control norm within eps^(-1/2) bound", rows.iter().map(|r| r[2] / r[3]).fold(0.0, f64::max), 1.0, bounded);
        Ok(())
    })?;
    run.finish()
}

/// Dispatch by command name.
pub fn run_command(command: &str, cfg: ExperimentConfig, opts: &RunOptions) -> Result<RunManifest> {
    match command {
        "verify" => cmd_verify(cfg, opts),
        "forward" => cmd_forward(cfg, opts),
        "dnmap" => cmd_dnmap(cfg, opts),
        "invert_q" => cmd_invert_q(cfg, opts),
        "invert_A" => cmd_invert_a(cfg, opts),
        "invert_semilinear" => cmd_invert_semilinear(cfg, opts),
        "runge" => cmd_runge(cfg, opts),
        other => Err(Error::Config(format!("unknown command {other}"))),
    }
}
