//! Magnetic potential recovery up to global sign.
use stfrac::config::ExperimentConfig;
use stfrac::dnmap::{assemble_dn, Flavor, SourceBasis};
use stfrac::forward::ForwardModel;
use stfrac::inversion::{recover_a, CellPartition};

fn main() -> stfrac::Result<()> {
    let cfg = ExperimentConfig::magnetic_twin_1d();
    let (grid, mesh) = cfg.validate()?;
    let a = cfg.potential.potential(&grid, &mesh)?.expect("preset has a potential");
    let q = cfg.q_field(&grid, mesh);
    let known = ForwardModel::new(&grid, mesh, cfg.s, None, q.clone())?;
    let plus = ForwardModel::with_base(&grid, mesh, known.base().clone(), Some(a.clone()), q.clone())?;
    let minus = ForwardModel::with_base(&grid, mesh, known.base().clone(), Some(a.negated()), q)?;
    let basis = SourceBasis::new(&grid, &grid.spec().w1, grid.w1(), cfg.basis.per_axis, mesh, cfg.basis.n_time)?;
    let data = assemble_dn(&plus, &basis, grid.w2(), Flavor::Forward)?;
    println!("records for A and -A identical: {}", data == assemble_dn(&minus, &basis, grid.w2(), Flavor::Forward)?);
    let cells = CellPartition::new(&grid, mesh, cfg.cells.per_axis, cfg.cells.time_cells)?;
    let report = recover_a(&known, &data, &basis, &cells, &cfg.tikhonov, Some(&a))?;
    println!("min over sign relative error {:.3} after {} iterations", report.error_vs_truth.unwrap_or(f64::NAN), report.iterations);
    println!("estimate {:?}", report.estimate);
    Ok(())
}
