//! Simulate a group-1 grid dataset and fit it, printing posterior means.
//!
//! `cargo run --release --example recovery -- [n_burn] [n_keep] [c]`

use std::time::Instant;

use stgamma::gibbs::{run_chain, GibbsModel, McmcSettings};
use stgamma::model::{Hypara, ModelSpec};
use stgamma::simulate::{simulate_dataset, SimDesign, SimGroup};
use stgamma::RandomStream;

fn main() -> stgamma::Result<()> {
    let args: Vec<f64> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let n_burn = args.first().copied().unwrap_or(5000.0) as usize;
    let n_keep = args.get(1).copied().unwrap_or(5000.0) as usize;
    let c = args.get(2).copied().unwrap_or(5.0);
    let design = SimDesign::grid_design(SimGroup::Group1, 100, 0.4, 0.4, c);
    let sim = simulate_dataset(&design, &mut RandomStream::new(2024))?;
    let spec = ModelSpec::preset(Hypara::Hypara1);
    let model = GibbsModel::new(&spec, &sim.graph, &sim.data)?;
    let settings = McmcSettings {
        n_burn,
        n_keep_iterations: n_keep,
        store_loglik: false,
        store_fitted: false,
        ..McmcSettings::default()
    };
    let start = Instant::now();
    let chain = run_chain(&model, &settings, RandomStream::new(7), 0)?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let fitted = chain.cells.fitted_mean();
    let mae = sim.data.counts().iter().zip(&fitted).map(|(y, f)| (*y as f64 - f).abs()).sum::<f64>() / fitted.len() as f64;
    println!(
        "c {:.4} kappa {:.4} rho {:.4} mae {:.4} in {:.1}s",
        mean(&chain.c),
        mean(&chain.kappa),
        mean(&chain.rho),
        mae,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
