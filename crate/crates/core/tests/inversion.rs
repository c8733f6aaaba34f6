use stfrac::config::ExperimentConfig;
use stfrac::dnmap::{assemble_dn, bump, Flavor, SourceBasis};
use stfrac::field::SpaceTimeField;
use stfrac::forward::{ForwardModel, SemilinearSpec};
use stfrac::grid::SpaceGrid;
use stfrac::inversion::{
    recover_a, recover_q_linear, recover_q_runge, recover_semilinear, runge_control, semilinear_dn, CellPartition, ControlOperator, ControlProblem, TikhonovOptions,
};
use stfrac::timefrac::TimeMesh;

fn setup() -> (ExperimentConfig, SpaceGrid, TimeMesh, ForwardModel) {
    let cfg = ExperimentConfig::potential_twin_1d();
    let (grid, mesh) = cfg.validate().unwrap();
    let model = ForwardModel::new(&grid, mesh, cfg.s, None, cfg.q_reference_field(&grid, mesh)).unwrap();
    (cfg, grid, mesh, model)
}

fn basis(grid: &SpaceGrid, mesh: TimeMesh, n: usize) -> SourceBasis {
    SourceBasis::new(grid, &grid.spec().w1, grid.w1(), n, mesh, n).unwrap()
}

#[test]
fn runge_error_is_monotone_in_basis_and_eps() {
    let (_, grid, mesh, model) = setup();
    let target = SpaceTimeField::on_omega(&grid, mesh, |x, t| if (0.25..=0.75).contains(&t) { bump(x[0].abs() / 0.25) } else { 0.0 });
    let mut last = f64::INFINITY;
    for n in [2, 4, 8] {
        let op = ControlOperator::new(&model, &basis(&grid, mesh, n), Flavor::Forward).unwrap();
        let mut prev = 0.0;
        let mut prev_norm = f64::INFINITY;
        for eps in [1e-2, 1e-4, 1e-6, 1e-8] {
            let c = runge_control(&ControlProblem::new(target.clone(), Flavor::Forward, eps).unwrap(), &op).unwrap();
            if prev > 0.0 {
                assert!(c.achieved_error <= prev * (1.0 + 1e-9));
                assert!(c.control_norm >= prev_norm * (1.0 - 1e-9));
            }
            prev = c.achieved_error;
            prev_norm = c.control_norm;
        }
        assert!(prev <= last * (1.0 + 1e-9), "basis {n}: {prev} vs {last}");
        last = prev;
    }
}

#[test]
fn runge_reproduces_a_reachable_target() {
    let (_, grid, mesh, model) = setup();
    let b = basis(&grid, mesh, 4);
    let u = model.solve_caputo(&b.element(3), None).unwrap();
    let target = u.restrict(grid.omega());
    let op = ControlOperator::new(&model, &b, Flavor::Forward).unwrap();
    let c = runge_control(&ControlProblem::new(target, Flavor::Forward, 1e-12).unwrap(), &op).unwrap();
    assert!(c.achieved_error <= 1e-6, "{}", c.achieved_error);
    assert!((c.coeffs[3] - 1.0).abs() < 1e-3);
}

#[test]
fn distinct_potentials_give_distinct_records() {
    let (cfg, grid, mesh, model) = setup();
    let b = SourceBasis::new(&grid, &grid.spec().w1, grid.w1(), 4, mesh, 4).unwrap();
    let base = assemble_dn(&model, &b, grid.w2(), Flavor::Forward).unwrap();
    for scale in [1.0, 0.1] {
        let q = cfg.q_field(&grid, mesh).scaled(scale);
        let other = assemble_dn(&model.with_q(q).unwrap(), &b, grid.w2(), Flavor::Forward).unwrap();
        let diff = other.difference(&base).unwrap().rms();
        assert!(diff > 1e3 * 1e-13 * base.rms(), "scale {scale}: {diff}");
    }
}

#[test]
fn zero_data_difference_recovers_zero() {
    let (cfg, grid, mesh, model) = setup();
    let b = SourceBasis::new(&grid, &grid.spec().w1, grid.w1(), 3, mesh, 3).unwrap();
    let data = assemble_dn(&model, &b, grid.w2(), Flavor::Forward).unwrap();
    let cells = CellPartition::new(&grid, mesh, cfg.cells.per_axis, cfg.cells.time_cells).unwrap();
    let opts = TikhonovOptions { refine: 0, ..Default::default() };
    let r = recover_q_linear(&model, &data, &b, &cells, &opts, None).unwrap();
    assert!(r.estimate.iter().all(|v| *v == 0.0));
}

#[test]
fn cell_fields_project_back_to_their_values() {
    let (cfg, grid, mesh, _) = setup();
    let cells = CellPartition::new(&grid, mesh, cfg.cells.per_axis, cfg.cells.time_cells).unwrap();
    let c: Vec<f64> = (0..cells.len()).map(|m| (m as f64).sin()).collect();
    let back = cells.project(&cells.field(&c));
    for (a, b) in c.iter().zip(&back) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn linearization_bias_shrinks_with_the_scale() {
    // Stage-one data `M(λg)/λ` approach the linear record at rate `λ^{b_2}`.
    let (cfg, grid, mesh, model) = setup();
    let sl = cfg.semilinear.clone().unwrap();
    let coeffs: Vec<SpaceTimeField> = sl.coeffs.iter().map(|c| c.field(&grid, mesh)).collect();
    let spec = SemilinearSpec::new(coeffs.clone(), sl.powers.clone()).unwrap();
    let b = SourceBasis::new(&grid, &grid.spec().w1, grid.w1(), 3, mesh, 3).unwrap();
    let mut q = model.q().clone();
    q.axpy(1.0, &coeffs[0]);
    let linear = assemble_dn(&model.with_q(q).unwrap(), &b, grid.w2(), Flavor::Forward).unwrap();
    let mut biases = Vec::new();
    for lam in [0.4, 0.2, 0.1] {
        let rec = semilinear_dn(&model, &spec, &b, grid.w2(), lam).unwrap();
        let bias: f64 = rec.data.iter().zip(&linear.data).map(|(m, l)| (m / lam - l).powi(2)).sum::<f64>().sqrt();
        biases.push(bias);
    }
    for w in biases.windows(2) {
        let rate = (w[0] / w[1]).log2();
        assert!((rate - sl.powers[1]).abs() < 0.15, "{biases:?}");
    }
}

#[test]
fn runge_mode_recovery_reports_every_cell() {
    let (cfg, grid, mesh, model) = setup();
    let fb = SourceBasis::new(&grid, &grid.spec().w1, grid.w1(), 6, mesh, 6).unwrap();
    let db = SourceBasis::new(&grid, &grid.spec().w2, grid.w2(), 6, mesh, 6).unwrap();
    let truth = cfg.q_field(&grid, mesh);
    let data = assemble_dn(&model.with_q(truth.clone()).unwrap(), &fb, grid.w2(), Flavor::Forward).unwrap();
    let cells = CellPartition::new(&grid, mesh, cfg.cells.per_axis, cfg.cells.time_cells).unwrap();
    let r = recover_q_runge(&model, &data, &fb, &db, &cells, 1e-10, Some(&truth)).unwrap();
    // At this scale the controls miss every cell indicator, so all cells are flagged.
    assert_eq!(r.estimate.len(), cells.len());
    for &m in &r.flagged_cells {
        assert_eq!(r.estimate[m], 0.0);
    }
    assert!(r.error_vs_truth.is_some_and(f64::is_finite));
}

#[test]
fn equal_potentials_recover_zero_amplitude() {
    let cfg = ExperimentConfig::magnetic_twin_1d();
    let (grid, mesh) = cfg.validate().unwrap();
    let model = ForwardModel::new(&grid, mesh, cfg.s, None, cfg.q_field(&grid, mesh)).unwrap();
    let b = SourceBasis::new(&grid, &grid.spec().w1, grid.w1(), 3, mesh, 3).unwrap();
    let data = assemble_dn(&model, &b, grid.w2(), Flavor::Forward).unwrap();
    let cells = CellPartition::new(&grid, mesh, cfg.cells.per_axis, cfg.cells.time_cells).unwrap();
    let opts = TikhonovOptions { refine: 0, max_iter: 3, ..cfg.tikhonov.clone() };
    let r = recover_a(&model, &data, &b, &cells, &opts, None).unwrap();
    let norm = r.estimate.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(norm <= 1e-6, "{:?}", r.estimate);
}

#[test]
fn linear_truth_leaves_higher_stages_empty() {
    let (cfg, grid, mesh, model) = setup();
    let sl = cfg.semilinear.clone().unwrap();
    let a1 = sl.coeffs[0].field(&grid, mesh);
    let spec = SemilinearSpec::new(vec![a1.clone(), SpaceTimeField::zeros(a1.nodes(), mesh)], sl.powers.clone()).unwrap();
    let b = basis(&grid, mesh, 4);
    let ladder: Vec<_> = (0..3)
        .map(|i| {
            let lam = sl.lambda0 / 2f64.powi(i);
            (lam, semilinear_dn(&model, &spec, &b, grid.w2(), lam).unwrap())
        })
        .collect();
    let cells = CellPartition::new(&grid, mesh, cfg.cells.per_axis, cfg.cells.time_cells).unwrap();
    let opts = sl.tikhonov.clone().unwrap_or(cfg.tikhonov.clone());
    let reports = recover_semilinear(&model, &ladder, &b, &sl.powers, &cells, &opts, None).unwrap();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let first = norm(&reports[0].estimate);
    assert!(first > 0.1, "{first}");
    assert!(norm(&reports[1].estimate) <= 1e-3 * first, "{:?}", reports[1].estimate);
}

#[test]
fn swapping_the_potentials_negates_the_estimate() {
    let (cfg, grid, mesh, model) = setup();
    let q = cfg.q_field(&grid, mesh);
    let other = model.with_q(q).unwrap();
    let b = basis(&grid, mesh, 4);
    let cells = CellPartition::new(&grid, mesh, cfg.cells.per_axis, cfg.cells.time_cells).unwrap();
    let forward = recover_q_linear(&model, &assemble_dn(&other, &b, grid.w2(), Flavor::Forward).unwrap(), &b, &cells, &cfg.tikhonov, None).unwrap();
    let back = recover_q_linear(&other, &assemble_dn(&model, &b, grid.w2(), Flavor::Forward).unwrap(), &b, &cells, &cfg.tikhonov, None).unwrap();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    // The reference enters the linearization, so the negation is only approximate.
    let dot: f64 = forward.estimate.iter().zip(&back.estimate).map(|(a, b)| a * b).sum();
    let cosine = -dot / (norm(&forward.estimate) * norm(&back.estimate));
    assert!(cosine >= 0.8, "{cosine}");
}
