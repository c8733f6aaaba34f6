//! Caputo and Riemann–Liouville operators on a uniform mesh.
use stfrac::special::gamma;
use stfrac::timefrac::{caputo_derivative, cumulative_integral, ibp_residual, rl_integral_left, TimeMesh, TimeSignal};

fn main() -> stfrac::Result<()> {
    for alpha in [0.3, 0.5, 0.7] {
        let mut prev: Option<f64> = None;
        for steps in [16, 32, 64, 128] {
            let mesh = TimeMesh::new(1.0, steps, alpha)?;
            let u = TimeSignal::from_fn(mesh, |t| t.cos() + t);
            let composed = rl_integral_left(&rl_integral_left(&u, 1.0 - alpha)?, alpha)?;
            let exact = cumulative_integral(&u);
            let err = composed.values().iter().zip(exact.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let f = TimeSignal::from_fn(mesh, |t| 1.0 + t * t);
            let g = TimeSignal::from_fn(mesh, |t| (2.0 * t).cos());
            let ibp = ibp_residual(&f, &g, alpha)?;
            let rate = prev.map(|p| (p / err).log2());
            println!("alpha {alpha} N {steps:4}: composition {err:.3e} ibp {ibp:.3e} rate {rate:?}");
            prev = Some(err);
        }
        let mesh = TimeMesh::new(1.0, 64, alpha)?;
        let d = caputo_derivative(&TimeSignal::from_fn(mesh, |t| t.powf(alpha)), alpha)?;
        println!("alpha {alpha}: caputo(t^alpha)(1) = {:.5}, gamma(alpha+1) = {:.5}", d.values()[64], gamma(alpha + 1.0));
    }
    Ok(())
}
