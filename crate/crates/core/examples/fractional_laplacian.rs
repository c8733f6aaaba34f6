//! Grid fractional Laplacian against adaptive singular quadrature.
use stfrac::grid::{GridSpec, SpaceGrid};
use stfrac::oracle::{brute_force_frac_laplacian, BruteForceOptions};
use stfrac::spacefrac::assemble_fractional_laplacian;

fn main() -> stfrac::Result<()> {
    let grid = SpaceGrid::new(GridSpec::default_1d(128))?;
    let s = 0.5;
    let op = assemble_fractional_laplacian(&grid, s)?;
    let probe = |x: [f64; 2]| if x[0].abs() < 1.0 { (1.0 - x[0] * x[0]).powf(s) } else { 0.0 };
    let u: Vec<f64> = grid.coords().iter().map(|&x| probe(x)).collect();
    let lu = op.apply(&u);
    println!("symmetry error {:.2e}", op.symmetry_error());
    for &i in grid.omega().iter().step_by(8) {
        let x = grid.coord(i);
        let bf = brute_force_frac_laplacian(probe, x, 1, s, &BruteForceOptions { breaks: vec![(1.0 - x[0]).abs(), (1.0 + x[0]).abs()], ..Default::default() })?;
        println!("x {:+.4}: grid {:.6} quadrature {:.6} (±{:.1e})", x[0], lu[i], bf.value, bf.error);
    }
    Ok(())
}
