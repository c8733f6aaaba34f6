//! Discrete Dirichlet-to-Neumann maps, their duality, and the integral identity
//! linking DN differences to interior coefficient differences.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::SpaceTimeField;
use crate::forward::ForwardModel;
use crate::grid::{SpaceGrid, Window};
use crate::io::{Container, ContainerKind};
use crate::timefrac::TimeMesh;

/// Which problem generates the record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Flavor {
    Forward,
    Dual,
}

/// `exp(1 - 1/(1 - r²))` on `|r| < 1`.
pub fn bump(r: f64) -> f64 {
    if r.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - r * r)).exp()
    }
}

/// Tensor-product bumps: spatial bumps on window nodes times temporal bumps in `(0, T)`.
///
/// With `n` bumps on an interval of width `w`, centres sit at `(i+1) w/(n+1)`
/// with radius `w/(n+1)`, so neighbours overlap and the outermost touch the ends.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceBasis {
    window: Vec<usize>,
    spatial: Vec<Vec<f64>>,
    temporal: Vec<Vec<f64>>,
    nodes: usize,
    mesh: TimeMesh,
}

impl SourceBasis {
    /// `per_axis` spatial bumps per axis (so `per_axis^dim` spatial functions) and `n_time` temporal bumps.
    pub fn new(grid: &SpaceGrid, window: &Window, nodes: &[usize], per_axis: usize, mesh: TimeMesh, n_time: usize) -> Result<Self> {
        if per_axis == 0 || n_time == 0 {
            return Err(Error::Domain("basis sizes must be positive".into()));
        }
        let dim = grid.dim();
        let axis = |d: usize, i: usize, x: f64| {
            let w = window.hi[d] - window.lo[d];
            let c = window.lo[d] + (i + 1) as f64 * w / (per_axis + 1) as f64;
            bump((x - c) / (w / (per_axis + 1) as f64))
        };
        let mut spatial = Vec::new();
        let combos: Vec<(usize, usize)> = if dim == 1 {
            (0..per_axis).map(|i| (i, 0)).collect()
        } else {
            (0..per_axis).flat_map(|j| (0..per_axis).map(move |i| (i, j))).collect()
        };
        for (i, j) in combos {
            let mut v = vec![0.0; grid.len()];
            for &node in nodes {
                let x = grid.coord(node);
                v[node] = axis(0, i, x[0]) * if dim == 2 { axis(1, j, x[1]) } else { 1.0 };
            }
            if v.iter().all(|x| *x == 0.0) {
                return Err(Error::Geometry("a spatial bump misses every window node; reduce the basis size".into()));
            }
            spatial.push(v);
        }
        let t_final = mesh.t_final();
        let temporal = (0..n_time)
            .map(|i| {
                let c = (i + 1) as f64 * t_final / (n_time + 1) as f64;
                let r = t_final / (n_time + 1) as f64;
                mesh.times().iter().map(|&t| bump((t - c) / r)).collect()
            })
            .collect();
        Ok(Self { window: nodes.to_vec(), spatial, temporal, nodes: grid.len(), mesh })
    }

    pub fn len(&self) -> usize {
        self.spatial.len() * self.temporal.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn window(&self) -> &[usize] {
        &self.window
    }

    pub fn spatial(&self) -> &[Vec<f64>] {
        &self.spatial
    }

    pub fn temporal(&self) -> &[Vec<f64>] {
        &self.temporal
    }

    pub fn mesh(&self) -> &TimeMesh {
        &self.mesh
    }

    /// Element `idx`, enumerated space-major: `idx = i_space * n_time + i_time`.
    pub fn element(&self, idx: usize) -> SpaceTimeField {
        let nt = self.temporal.len();
        SpaceTimeField::separable(&self.spatial[idx / nt], self.mesh, &self.temporal[idx % nt])
            .expect("basis shapes are consistent")
    }

    /// `Σ_i c_i g_i`.
    pub fn combine(&self, coeffs: &[f64]) -> SpaceTimeField {
        let mut out = SpaceTimeField::zeros(self.nodes, self.mesh);
        for (idx, &c) in coeffs.iter().enumerate() {
            if c != 0.0 {
                out.axpy(c, &self.element(idx));
            }
        }
        out
    }
}

/// `M[i][j][k] = (L(t_k) u_i(t_k))(x_j)` at receiver nodes `x_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct DNRecord {
    pub flavor: Flavor,
    pub n_sources: usize,
    pub receivers: Vec<usize>,
    pub mesh: TimeMesh,
    pub cell_volume: f64,
    pub s: f64,
    pub geometry: String,
    pub data: Vec<f64>,
}

impl DNRecord {
    pub fn n_receivers(&self) -> usize {
        self.receivers.len()
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[(i * self.receivers.len() + j) * self.mesh.len() + k]
    }

    /// Measurement of one source as a field on the receivers, `[j][k]`.
    pub fn row(&self, i: usize) -> &[f64] {
        let stride = self.receivers.len() * self.mesh.len();
        &self.data[i * stride..(i + 1) * stride]
    }

    /// `∫_0^T ⟨Λ g_i, h⟩ dt` against a field `h` on all nodes.
    pub fn pairing(&self, i: usize, h: &SpaceTimeField) -> f64 {
        let w = self.mesh.trapezoid_weights();
        let mut acc = 0.0;
        for (j, &node) in self.receivers.iter().enumerate() {
            for (k, wk) in w.iter().enumerate() {
                let hv = h.get(node, k);
                if hv != 0.0 {
                    acc += wk * self.get(i, j, k) * hv;
                }
            }
        }
        acc * self.cell_volume
    }

    fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.geometry != other.geometry || self.mesh != other.mesh || self.s != other.s {
            return Err(Error::GeometryMismatch("records come from different grids, meshes or orders".into()));
        }
        Ok(())
    }

    /// Entrywise difference `self - other`.
    pub fn difference(&self, other: &Self) -> Result<Self> {
        self.check_compatible(other)?;
        if self.receivers != other.receivers || self.n_sources != other.n_sources {
            return Err(Error::GeometryMismatch("records have different shapes".into()));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(Self { data, ..self.clone() })
    }

    pub fn rms(&self) -> f64 {
        (self.data.iter().map(|v| v * v).sum::<f64>() / self.data.len().max(1) as f64).sqrt()
    }

    /// Additive Gaussian noise with standard deviation `level · rms(entries)`.
    pub fn with_noise(&self, level: f64, seed: u64) -> Result<Self> {
        let sigma = level * self.rms();
        if !(sigma >= 0.0) {
            return Err(Error::Domain(format!("noise level must be nonnegative, got {level}")));
        }
        if sigma == 0.0 {
            return Ok(self.clone());
        }
        let normal = Normal::new(0.0, sigma).map_err(|e| Error::Domain(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = self.data.iter().map(|v| v + normal.sample(&mut rng)).collect();
        Ok(Self { data, ..self.clone() })
    }

    pub fn to_container(&self) -> Container {
        let flavor = match self.flavor {
            Flavor::Forward => 0.0,
            Flavor::Dual => 1.0,
        };
        let mut meta = vec![self.cell_volume, self.mesh.t_final(), self.mesh.steps() as f64, self.mesh.alpha(), self.s, flavor];
        meta.extend(self.receivers.iter().map(|&r| r as f64));
        let tag = format!("geometry={};measurement=node-restriction", self.geometry);
        Container::new(
            ContainerKind::DnRecord,
            vec![self.n_sources as u64, self.receivers.len() as u64, self.mesh.len() as u64],
            meta,
            tag,
            self.data.clone(),
        )
        .expect("record dimensions are consistent")
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.kind != ContainerKind::DnRecord || c.dims.len() != 3 || c.meta.len() < 6 {
            return Err(Error::Container("not a DN record".into()));
        }
        let n_rec = c.dims[1] as usize;
        if c.meta.len() != 6 + n_rec {
            return Err(Error::Container("receiver list length mismatch".into()));
        }
        let mesh = TimeMesh::new(c.meta[1], c.meta[2] as usize, c.meta[3])?;
        let geometry = c
            .tag
            .strip_prefix("geometry=")
            .and_then(|t| t.split(';').next())
            .ok_or_else(|| Error::Container("missing geometry tag".into()))?
            .to_string();
        Ok(Self {
            flavor: if c.meta[5] == 0.0 { Flavor::Forward } else { Flavor::Dual },
            n_sources: c.dims[0] as usize,
            receivers: c.meta[6..].iter().map(|&r| r as usize).collect(),
            mesh,
            cell_volume: c.meta[0],
            s: c.meta[4],
            geometry,
            data: c.payload.clone(),
        })
    }

    /// Rows `source, receiver_node, k, t, value`.
    pub fn csv_rows(&self) -> Vec<Vec<f64>> {
        let mut rows = Vec::with_capacity(self.data.len());
        for i in 0..self.n_sources {
            for (j, &node) in self.receivers.iter().enumerate() {
                for k in 0..self.mesh.len() {
                    rows.push(vec![i as f64, node as f64, k as f64, self.mesh.t(k), self.get(i, j, k)]);
                }
            }
        }
        rows
    }
}

/// Measure `(L(t_k) u(t_k))` at `receivers`, `[j][k]`.
pub fn measure(model: &ForwardModel, u: &SpaceTimeField, receivers: &[usize]) -> Vec<f64> {
    let nt = model.mesh().len();
    let mut out = vec![0.0; receivers.len() * nt];
    for k in 0..nt {
        let v = model.apply_rows(k, u.slice(k), receivers);
        for (j, val) in v.into_iter().enumerate() {
            out[j * nt + k] = val;
        }
    }
    out
}

/// Solve for every basis element and record its exterior measurement.
pub fn assemble_dn(model: &ForwardModel, basis: &SourceBasis, receivers: &[usize], flavor: Flavor) -> Result<DNRecord> {
    let rows: Vec<Vec<f64>> = (0..basis.len())
        .into_par_iter()
        .map(|idx| {
            let g = basis.element(idx);
            let u = match flavor {
                Flavor::Forward => model.solve_caputo(&g, None),
                Flavor::Dual => model.solve_dual(&g, None),
            }
            .map_err(|e| Error::Source { index: idx, source: Box::new(e) })?;
            Ok(measure(model, &u, receivers))
        })
        .collect::<Result<_>>()?;
    Ok(DNRecord {
        flavor,
        n_sources: basis.len(),
        receivers: receivers.to_vec(),
        mesh: *model.mesh(),
        cell_volume: model.grid().cell_volume(),
        s: model.s(),
        geometry: model.grid().fingerprint(),
        data: rows.concat(),
    })
}

/// `max_{g,h} |∫⟨Λg, h⟩ - ∫⟨Λ*h, g⟩| / (|∫⟨Λg, h⟩| + ε)` over basis pairs.
pub fn duality_residual(fwd: &DNRecord, dual: &DNRecord, fwd_basis: &SourceBasis, dual_basis: &SourceBasis) -> Result<f64> {
    fwd.check_compatible(dual)?;
    if fwd.flavor != Flavor::Forward || dual.flavor != Flavor::Dual {
        return Err(Error::GeometryMismatch("expected a forward record and a dual record".into()));
    }
    if fwd.n_sources != fwd_basis.len() || dual.n_sources != dual_basis.len() {
        return Err(Error::GeometryMismatch("record and basis sizes differ".into()));
    }
    let mut worst = 0.0_f64;
    let scale = (0..fwd.n_sources)
        .flat_map(|a| (0..dual.n_sources).map(move |b| (a, b)))
        .map(|(a, b)| fwd.pairing(a, &dual_basis.element(b)).abs())
        .fold(0.0_f64, f64::max);
    for a in 0..fwd.n_sources {
        let g = fwd_basis.element(a);
        for b in 0..dual.n_sources {
            let h = dual_basis.element(b);
            let p1 = fwd.pairing(a, &h);
            let p2 = dual.pairing(b, &g);
            worst = worst.max((p1 - p2).abs() / (p1.abs() + 1e-12 * scale + f64::MIN_POSITIVE));
        }
    }
    Ok(worst)
}

/// Both sides of the integral identity for `g1` on W1 and `g2` on W2:
///
/// `lhs = ∫⟨(Λ_1 - Λ_2) g1, g2⟩` from exterior measurements, and
/// `rhs = ∫ [u2*ᵀ (L_1 - L_2) u1 - Σ_Ω (q2 - q1) u1 u2*] h^n dt`
/// from `u1 = P_1 g1` and the dual solution `u2* = P_2* g2`.
pub fn integral_identity_gap(m1: &ForwardModel, m2: &ForwardModel, g1: &SpaceTimeField, g2: &SpaceTimeField) -> Result<(f64, f64)> {
    if m1.grid().fingerprint() != m2.grid().fingerprint() || m1.mesh() != m2.mesh() || m1.s() != m2.s() {
        return Err(Error::GeometryMismatch("models differ in grid, mesh or order".into()));
    }
    let grid = m1.grid();
    let mesh = *m1.mesh();
    let w = mesh.trapezoid_weights();
    let vol = grid.cell_volume();
    let support: Vec<usize> = (0..grid.len()).filter(|&i| (0..mesh.len()).any(|k| g2.get(i, k) != 0.0)).collect();

    let u1 = m1.solve_caputo(g1, None)?;
    let u2 = m2.solve_caputo(g1, None)?;
    let star = m2.solve_dual(g2, None)?;

    let mut lhs = 0.0;
    let mut rhs = 0.0;
    let om = grid.omega();
    for k in 0..mesh.len() {
        if w[k] == 0.0 {
            continue;
        }
        let a = m1.apply_rows(k, u1.slice(k), &support);
        let b = m2.apply_rows(k, u2.slice(k), &support);
        for (j, &node) in support.iter().enumerate() {
            lhs += w[k] * (a[j] - b[j]) * g2.get(node, k);
        }
        let d = &m1.op(k).matrix - &m2.op(k).matrix;
        let us = nalgebra::DVector::from_column_slice(star.slice(k));
        let uu = nalgebra::DVector::from_column_slice(u1.slice(k));
        let mut term = us.dot(&(d * uu));
        let (q1, q2) = (m1.q().slice(k), m2.q().slice(k));
        for (slot, &i) in om.iter().enumerate() {
            term -= (q2[slot] - q1[slot]) * u1.get(i, k) * star.get(i, k);
        }
        rhs += w[k] * term;
    }
    Ok((lhs * vol, rhs * vol))
}
