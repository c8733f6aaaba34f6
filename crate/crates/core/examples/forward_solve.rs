//! Exterior-data forward problem, sup-norm barrier and eigen-expansion check.
use nalgebra::{DVector, SymmetricEigen};
use stfrac::config::ExperimentConfig;
use stfrac::dnmap::SourceBasis;
use stfrac::field::SpaceTimeField;
use stfrac::forward::{linfinity_certificate, ForwardModel};
use stfrac::oracle::eigen_reference_solution;

fn main() -> stfrac::Result<()> {
    let cfg = ExperimentConfig::potential_twin_1d();
    let (grid, mesh) = cfg.validate()?;
    let model = ForwardModel::new(&grid, mesh, cfg.s, None, cfg.q_field(&grid, mesh))?;
    let basis = SourceBasis::new(&grid, &grid.spec().w1, grid.w1(), 4, mesh, 4)?;
    let g = basis.element(5);
    let u = model.solve_caputo(&g, None)?;
    let cert = linfinity_certificate(&grid, &u, model.induced_forcing_sup(&g), g.max_abs());
    println!("barrier margin {:.3e} (passed {})", cert.margin, cert.passed);

    let free = ForwardModel::new(&grid, mesh, cfg.s, None, SpaceTimeField::zeros(grid.omega().len(), mesh))?;
    let l = free.base().block(grid.omega(), grid.omega());
    let eig = SymmetricEigen::new(l.clone());
    let j = eig.eigenvalues.imin();
    let v: Vec<f64> = eig.eigenvectors.column(j).iter().copied().collect();
    let theta = |t: f64| t * (1.0 - t);
    let temporal: Vec<f64> = mesh.times().iter().map(|&t| theta(t)).collect();
    let f = SpaceTimeField::separable(&v, mesh, &temporal)?;
    let w = free.solve_caputo(&SpaceTimeField::zeros(grid.len(), mesh), Some(&f))?;
    let r = eigen_reference_solution(&l, &DVector::from_vec(v), theta, &mesh)?;
    let slot = grid.omega().len() / 2;
    for k in (0..mesh.len()).step_by(8) {
        println!("t {:.3}: scheme {:.6e} eigen {:.6e}", mesh.t(k), w.get(grid.omega()[slot], k), r[k][slot]);
    }
    Ok(())
}
