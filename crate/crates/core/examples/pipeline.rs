//! Full command chain in a temporary directory, with manifest verification.
use stfrac::config::ExperimentConfig;
use stfrac::pipeline::{run_command, RunManifest, RunOptions};

fn main() -> stfrac::Result<()> {
    let dir = std::env::temp_dir().join("stfrac-pipeline-example");
    let opts = RunOptions { out: Some(dir.clone()), seed: Some(0) };
    let cfg = ExperimentConfig::potential_twin_1d();
    for cmd in ["verify", "forward", "dnmap"] {
        let m = run_command(cmd, cfg.clone(), &opts)?;
        for c in &m.checks {
            println!("[{}] {cmd}: {} = {:.3e} (threshold {:.1e})", if c.passed { "PASS" } else { "FAIL" }, c.name, c.value, c.threshold);
        }
    }
    RunManifest::load(&dir, "dnmap")?.verify(&dir)?;
    println!("artifacts in {}", dir.display());
    Ok(())
}
