//! Linearization gap and successive-linearization recovery of a semilinear term.
use stfrac::config::ExperimentConfig;
use stfrac::dnmap::SourceBasis;
use stfrac::field::SpaceTimeField;
use stfrac::forward::{linearization_gap, ForwardModel, SemilinearSpec};
use stfrac::inversion::{recover_semilinear, semilinear_dn, CellPartition};

fn main() -> stfrac::Result<()> {
    let cfg = ExperimentConfig::potential_twin_1d();
    let sl = cfg.semilinear.clone().expect("preset has a semilinear section");
    let (grid, mesh) = cfg.validate()?;
    let reference = ForwardModel::new(&grid, mesh, cfg.s, None, cfg.q_reference_field(&grid, mesh))?;
    let coeffs: Vec<SpaceTimeField> = sl.coeffs.iter().map(|c| c.field(&grid, mesh)).collect();
    let spec = SemilinearSpec::new(coeffs.clone(), sl.powers.clone())?;
    let basis = SourceBasis::new(&grid, &grid.spec().w1, grid.w1(), cfg.basis.per_axis, mesh, cfg.basis.n_time)?;
    let g = basis.combine(&vec![1.0; basis.len()]);
    for &lam in &sl.gap_lambdas {
        println!("lambda {lam:.4}: gap {:.4e}", linearization_gap(&reference, &spec, &g, lam)?);
    }
    let ladder: Vec<_> = (0..sl.rungs)
        .map(|i| {
            let lam = sl.lambda0 / 2f64.powi(i as i32);
            Ok((lam, semilinear_dn(&reference, &spec, &basis, grid.w2(), lam)?))
        })
        .collect::<stfrac::Result<_>>()?;
    let cells = CellPartition::new(&grid, mesh, cfg.cells.per_axis, cfg.cells.time_cells)?;
    for r in recover_semilinear(&reference, &ladder, &basis, &sl.powers, &cells, sl.tikhonov.as_ref().unwrap_or(&cfg.tikhonov), Some(&coeffs))? {
        println!("{}: relative error {:.3}", r.target, r.error_vs_truth.unwrap_or(f64::NAN));
    }
    Ok(())
}
