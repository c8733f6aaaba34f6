//! Cellwise recovery of q from a twin DN record, with and without noise.
use stfrac::config::ExperimentConfig;
use stfrac::dnmap::{assemble_dn, Flavor, SourceBasis};
use stfrac::forward::ForwardModel;
use stfrac::inversion::{recover_q_linear, CellPartition, TikhonovOptions};

fn main() -> stfrac::Result<()> {
    let cfg = ExperimentConfig::potential_twin_1d();
    let (grid, mesh) = cfg.validate()?;
    let reference = ForwardModel::new(&grid, mesh, cfg.s, None, cfg.q_reference_field(&grid, mesh))?;
    let truth = cfg.q_field(&grid, mesh);
    let basis = SourceBasis::new(&grid, &grid.spec().w1, grid.w1(), cfg.basis.per_axis, mesh, cfg.basis.n_time)?;
    let data = assemble_dn(&reference.with_q(truth.clone())?, &basis, grid.w2(), Flavor::Forward)?;
    let cells = CellPartition::new(&grid, mesh, cfg.cells.per_axis, cfg.cells.time_cells)?;
    let report = recover_q_linear(&reference, &data, &basis, &cells, &cfg.tikhonov, Some(&truth))?;
    println!("noiseless: relative error {:.3}, residual {:.2e}", report.error_vs_truth.unwrap_or(f64::NAN), report.residual);
    let noisy = data.with_noise(0.01, 0)?;
    let opts = TikhonovOptions { reg: 1e-3, ..cfg.tikhonov.clone() };
    let report = recover_q_linear(&reference, &noisy, &basis, &cells, &opts, Some(&truth))?;
    println!("1% noise: relative error {:.3}, peak cell {}", report.error_vs_truth.unwrap_or(f64::NAN), report.peak_space_cell());
    Ok(())
}
