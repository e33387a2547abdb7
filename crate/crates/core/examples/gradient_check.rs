//! Compares analytic and autodiff gradients of the descriptor loss with
//! central finite differences.
//!
//! cargo run --example gradient_check -- [seed]

use ctxfeat::config::LossConfig;
use ctxfeat::losses::gradcheck::run_default_suite;

fn main() -> ctxfeat::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let report = run_default_suite(seed, &LossConfig::default())?;
    let p = &report.positive_gradient;
    println!(
        "positive-distance gradient: {} trials, max abs error {:.2e} (tolerance {:.0e})",
        p.trials, p.max_abs, p.tolerance
    );
    let l = &report.loss_gradient;
    println!("loss gradient: {} trials, N = {}, dim = {}", l.trials, l.n, l.dim);
    for g in &l.groups {
        println!("  {:<7} max abs {:.2e} max rel {:.2e}", g.group, g.max_abs, g.max_rel);
    }
    println!("worked example loss: {:.4}", report.worked_example_loss);
    println!("{}", if report.pass { "pass" } else { "FAIL" });
    Ok(())
}
