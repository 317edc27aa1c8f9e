//! Monte Carlo bias and √MSE for the nonlinear growth model with normal
//! errors at n = 20. Pass a replication count (default 200; the preset uses
//! 2000) and optionally another preset path.

use elliptic_bias::sim::{run_simulation, SimConfig};
use std::path::PathBuf;

fn main() -> elliptic_bias::Result<()> {
    let mut args = std::env::args().skip(1);
    let reps: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(200);
    let path = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("presets/table3_n20.toml"));
    let mut cfg = SimConfig::load(&path)?;
    cfg.reps = reps;
    let start = std::time::Instant::now();
    let report = run_simulation(&cfg)?;
    print!("{}", report.to_text());
    for est in ["mle", "bc", "br"] {
        if let Some(r) = report.row(cfg.n[0], "sigma2", est) {
            println!("sigma2 {est}: bias {:.3} +/- {:.3}", r.bias, r.bias_se);
        }
    }
    eprintln!("{:.1?}", start.elapsed());
    Ok(())
}
