//! Forward and dual Dirichlet-to-Neumann records, duality and the integral identity.
use stfrac::config::ExperimentConfig;
use stfrac::dnmap::{assemble_dn, duality_residual, integral_identity_gap, Flavor, SourceBasis};
use stfrac::forward::ForwardModel;

fn main() -> stfrac::Result<()> {
    let cfg = ExperimentConfig::potential_twin_1d();
    let (grid, mesh) = cfg.validate()?;
    let reference = ForwardModel::new(&grid, mesh, cfg.s, None, cfg.q_reference_field(&grid, mesh))?;
    let truth = reference.with_q(cfg.q_field(&grid, mesh))?;
    let fb = SourceBasis::new(&grid, &grid.spec().w1, grid.w1(), 4, mesh, 4)?;
    let db = SourceBasis::new(&grid, &grid.spec().w2, grid.w2(), 4, mesh, 4)?;
    let fwd = assemble_dn(&truth, &fb, grid.w2(), Flavor::Forward)?;
    let dual = assemble_dn(&truth, &db, grid.w1(), Flavor::Dual)?;
    println!("duality residual {:.3e}", duality_residual(&fwd, &dual, &fb, &db)?);
    let base = assemble_dn(&reference, &fb, grid.w2(), Flavor::Forward)?;
    println!("record rms {:.3e}, twin difference rms {:.3e}", fwd.rms(), fwd.difference(&base)?.rms());
    let (lhs, rhs) = integral_identity_gap(&reference, &truth, &fb.element(0), &db.element(0))?;
    println!("integral identity: exterior {lhs:.6e} interior {rhs:.6e}");
    Ok(())
}
