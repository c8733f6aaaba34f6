use approx::assert_relative_eq;
use nalgebra::SymmetricEigen;
use proptest::prelude::*;
use stfrac::config::ExperimentConfig;
use stfrac::dnmap::{measure, SourceBasis};
use stfrac::field::SpaceTimeField;
use stfrac::forward::ForwardModel;
use stfrac::grid::{GridSpec, SpaceGrid};
use stfrac::io::{Container, ContainerKind};
use stfrac::oracle::{mittag_leffler, mittag_leffler2};
use stfrac::spacefrac::{assemble_fractional_laplacian, MagneticPotential};
use stfrac::timefrac::{caputo_derivative, cumulative_integral, rl_integral_left, TimeMesh, TimeSignal};

fn trig(c: &[f64], t: f64) -> f64 {
    c.iter().enumerate().map(|(j, a)| a * ((j + 1) as f64 * t).sin()).sum()
}

fn trig_slope(c: &[f64], t: f64) -> f64 {
    c.iter().enumerate().map(|(j, a)| a * (j + 1) as f64 * ((j + 1) as f64 * t).cos()).sum()
}

fn small_grid() -> SpaceGrid {
    SpaceGrid::new(GridSpec::default_1d(32)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn semigroup_error_is_first_order(alpha in 0.05f64..0.95, steps in 8usize..96, c in prop::collection::vec(-1.0f64..1.0, 3)) {
        let mesh = TimeMesh::new(1.0, steps, alpha).unwrap();
        let u = TimeSignal::from_fn(mesh, |t| 0.5 + trig(&c, t));
        let composed = rl_integral_left(&rl_integral_left(&u, 1.0 - alpha).unwrap(), alpha).unwrap();
        let exact = cumulative_integral(&u);
        let err = composed.values().iter().zip(exact.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let slope = (0..=200).map(|i| trig_slope(&c, i as f64 / 200.0).abs()).fold(0.0, f64::max);
        prop_assert!(err <= mesh.tau() * (u.max_abs() + slope), "err {err}");
    }

    #[test]
    fn caputo_annihilates_constants(alpha in 0.01f64..0.99, steps in 2usize..200, c in -1e3f64..1e3) {
        let mesh = TimeMesh::new(2.0, steps, alpha).unwrap();
        let d = caputo_derivative(&TimeSignal::from_fn(mesh, |_| c), alpha).unwrap();
        prop_assert!(d.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn integral_preserves_sign(alpha in 0.01f64..0.99, values in prop::collection::vec(0.0f64..10.0, 3..64)) {
        let mesh = TimeMesh::new(1.0, values.len() - 1, alpha).unwrap();
        let i = rl_integral_left(&TimeSignal::new(mesh, values).unwrap(), alpha).unwrap();
        prop_assert!(i.values().iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn convexity_inequality(alpha in 0.05f64..0.95, steps in 8usize..64, c in prop::collection::vec(-2.0f64..2.0, 4)) {
        let mesh = TimeMesh::new(1.0, steps, alpha).unwrap();
        let u = TimeSignal::from_fn(mesh, |t| trig(&c, t));
        let hu = TimeSignal::from_fn(mesh, |t| 0.5 * trig(&c, t).max(0.0).powi(2));
        let du = caputo_derivative(&u, alpha).unwrap();
        let dh = caputo_derivative(&hu, alpha).unwrap();
        let scale = 1.0 + du.max_abs() * u.max_abs();
        for k in 0..mesh.len() {
            let stat = dh.values()[k] - u.values()[k].max(0.0) * du.values()[k];
            prop_assert!(stat <= 1e-12 * scale, "k {k}: {stat}");
        }
    }

    #[test]
    fn two_parameter_mittag_leffler_is_consistent(alpha in 0.1f64..1.0, x in -20.0f64..0.0) {
        let one = mittag_leffler(alpha, x).unwrap();
        let two = mittag_leffler2(alpha, 1.0, x).unwrap().value;
        prop_assert_eq!(one, two);
    }

    #[test]
    fn container_round_trip(payload in prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 1..64), meta in prop::collection::vec(-1e6f64..1e6, 0..4)) {
        let c = Container::new(ContainerKind::Field, vec![payload.len() as u64], meta, "probe".into(), payload).unwrap();
        let back = Container::from_bytes(&c.to_bytes()).unwrap();
        prop_assert_eq!(back, c);
    }

    #[test]
    fn config_round_trip_is_bit_exact(alpha in 0.01f64..0.99, s in 0.05f64..0.95, t_final in 0.1f64..4.0, amp in -5.0f64..5.0) {
        let mut cfg = ExperimentConfig::potential_twin_1d();
        cfg.alpha = alpha;
        cfg.s = s;
        cfg.t_final = t_final;
        cfg.q.bumps[0].amplitude = amp;
        let back = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
        prop_assert_eq!(back, cfg);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn magnetic_operator_structure(s in 0.1f64..0.9, amp in 0.1f64..4.0, width in 0.05f64..0.3, shift in -0.2f64..0.2) {
        let grid = small_grid();
        let base = assemble_fractional_laplacian(&grid, s).unwrap();
        let a = MagneticPotential::from_fn(&grid, &[0.0], |x, _| [amp * (-((x[0] - shift) / width).powi(2)).exp(), 0.0]).unwrap();
        let la = base.with_magnetic(&grid, &a, 0).unwrap();
        let lm = base.with_magnetic(&grid, &a.negated(), 0).unwrap();
        prop_assert!(la.symmetry_error() <= 1e-12);
        prop_assert!(la.matrix == lm.matrix);
        let sup = a.max_norm();
        for i in 0..grid.len() {
            for j in 0..grid.len() {
                if i == j {
                    continue;
                }
                let (xi, xj) = (grid.coord(i)[0], grid.coord(j)[0]);
                let mid = [0.5 * (xi + xj), 0.0];
                let k0 = base.matrix[(i, j)];
                if !grid.in_omega_point(&mid) {
                    prop_assert_eq!(la.matrix[(i, j)], k0);
                } else if k0 != 0.0 {
                    let r = la.matrix[(i, j)] / k0;
                    prop_assert!((-1.0..=1.0).contains(&r));
                    let d = xi - xj;
                    prop_assert!(1.0 - r <= (d * d * sup * sup / 2.0).min(2.0) + 1e-12);
                }
            }
        }
    }

    #[test]
    fn omega_block_is_positive_definite(s in 0.05f64..0.95) {
        let grid = small_grid();
        let base = assemble_fractional_laplacian(&grid, s).unwrap();
        let eig = SymmetricEigen::new(base.block(grid.omega(), grid.omega()));
        prop_assert!(eig.eigenvalues.min() > 0.0);
    }

    #[test]
    fn measurements_are_linear_in_the_source(c in prop::collection::vec(-2.0f64..2.0, 4), d in prop::collection::vec(-2.0f64..2.0, 4)) {
        let grid = small_grid();
        let mesh = TimeMesh::new(1.0, 8, 0.5).unwrap();
        let q = SpaceTimeField::on_omega(&grid, mesh, |x, t| 1.0 + x[0] * t);
        let model = ForwardModel::new(&grid, mesh, 0.5, None, q).unwrap();
        let basis = SourceBasis::new(&grid, &grid.spec().w1, grid.w1(), 2, mesh, 2).unwrap();
        let (g1, g2) = (basis.combine(&c), basis.combine(&d));
        let mut g = g1.clone();
        g.axpy(1.0, &g2);
        let m = |g: &SpaceTimeField| measure(&model, &model.solve_caputo(g, None).unwrap(), grid.w2());
        let (m1, m2, m12) = (m(&g1), m(&g2), m(&g));
        let scale = m12.iter().chain(&m1).chain(&m2).fold(0.0_f64, |a, v| a.max(v.abs())).max(1e-300);
        for i in 0..m12.len() {
            prop_assert!((m12[i] - m1[i] - m2[i]).abs() <= 1e-10 * scale);
        }
    }

    #[test]
    fn comparison_principle(c in prop::collection::vec(0.0f64..2.0, 4), qs in 0.0f64..3.0) {
        let grid = small_grid();
        let mesh = TimeMesh::new(1.0, 8, 0.4).unwrap();
        let q = SpaceTimeField::on_omega(&grid, mesh, |_, _| qs);
        let model = ForwardModel::new(&grid, mesh, 0.6, None, q).unwrap();
        let basis = SourceBasis::new(&grid, &grid.spec().w1, grid.w1(), 2, mesh, 2).unwrap();
        let g = basis.combine(&c);
        prop_assert!(g.values().iter().all(|v| *v >= 0.0));
        let u = model.solve_caputo(&g, None).unwrap();
        prop_assert!(u.values().iter().all(|v| *v >= -1e-14 * g.max_abs()));
    }

    #[test]
    fn solutions_are_even_in_the_potential(amp in 0.1f64..3.0) {
        let grid = small_grid();
        let mesh = TimeMesh::new(1.0, 6, 0.5).unwrap();
        let a = MagneticPotential::from_fn(&grid, &mesh.times(), |x, t| [amp * (1.0 + t) * (1.0 - 16.0 * x[0] * x[0]).max(0.0), 0.0]).unwrap();
        let q = SpaceTimeField::zeros(grid.omega().len(), mesh);
        let plus = ForwardModel::new(&grid, mesh, 0.5, Some(a.clone()), q.clone()).unwrap();
        let minus = ForwardModel::new(&grid, mesh, 0.5, Some(a.negated()), q).unwrap();
        let basis = SourceBasis::new(&grid, &grid.spec().w1, grid.w1(), 2, mesh, 2).unwrap();
        let g = basis.element(1);
        prop_assert_eq!(plus.solve_caputo(&g, None).unwrap(), minus.solve_caputo(&g, None).unwrap());
    }
}

#[test]
fn gamma_of_integers() {
    for n in 1..10u32 {
        let f: f64 = (1..n).map(f64::from).product();
        assert_relative_eq!(stfrac::special::gamma(n as f64), f, max_relative = 1e-13);
    }
}
