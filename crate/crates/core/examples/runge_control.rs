//! Runge approximation: window data steering the interior solution toward a bump.
use stfrac::config::ExperimentConfig;
use stfrac::dnmap::{bump, Flavor, SourceBasis};
use stfrac::field::SpaceTimeField;
use stfrac::forward::ForwardModel;
use stfrac::inversion::{runge_control, ControlOperator, ControlProblem};

fn main() -> stfrac::Result<()> {
    let cfg = ExperimentConfig::potential_twin_1d();
    let (grid, mesh) = cfg.validate()?;
    let model = ForwardModel::new(&grid, mesh, cfg.s, None, cfg.q_reference_field(&grid, mesh))?;
    let target = SpaceTimeField::on_omega(&grid, mesh, |x, t| if (0.25..=0.75).contains(&t) { bump(x[0].abs() / 0.25) } else { 0.0 });
    for n in [2, 4, 8] {
        let basis = SourceBasis::new(&grid, &grid.spec().w1, grid.w1(), n, mesh, n)?;
        let op = ControlOperator::new(&model, &basis, Flavor::Forward)?;
        for eps in [1e-4, 1e-8] {
            let c = runge_control(&ControlProblem::new(target.clone(), Flavor::Forward, eps)?, &op)?;
            println!("basis {:3} eps {eps:.0e}: error {:.3e} control norm {:.3e}", basis.len(), c.achieved_error, c.control_norm);
        }
    }
    Ok(())
}
