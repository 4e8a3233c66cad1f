//! Small Monte Carlo study of Model 1: bias and spread of every estimator
//! over a few replications, with the from-data and true-τ fits side by side.
//!
//!     cargo run --release --example monte_carlo -- [replications] [N] [n]

use std::time::Instant;

use mesde::io::report::render_mc;
use mesde::{run_mc, Cell, McDesign, Preset};

fn main() -> mesde::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let replications = args.first().copied().unwrap_or(10);
    let n_individuals = args.get(1).copied().unwrap_or(200);
    let n_obs = args.get(2).copied().unwrap_or(1000);
    let design = McDesign {
        cells: vec![Cell::new(n_individuals, 5.0, n_obs)],
        replications,
        ..McDesign::desk(Preset::Model1, 2024)
    };
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    let started = Instant::now();
    let summary = run_mc(&design, workers)?;
    print!("{}", render_mc(&summary));

    let theory = 2.0 * 6f64.sqrt() / (5.0 * ((n_individuals * n_obs) as f64).sqrt());
    let (_, sd) = summary.stat(0, "eta").expect("eta column");
    println!("\nsd(eta) = {sd:.5}, asymptotic 2*sqrt(6)/(T*sqrt(nN)) = {theory:.5}");
    println!("{} replications in {:.1?}", replications, started.elapsed());
    Ok(())
}
