//! Final training loss against solver depth: more function evaluations help
//! until the loss plateaus.
//!
//! ```text
//! cargo run --release --example nfe_tradeoff
//! ```

use revdeq::grad::Engine;
use revdeq::lab::{nfe_sweep, TrainTask};

fn main() -> revdeq::Result<()> {
    let task = TrainTask::default();
    let rows = nfe_sweep(&task, Engine::Reversible, &[1, 2, 3, 4, 8], &[0, 1, 2])?;
    println!("{:>3} {:>4} {:>11} {:>9}", "N", "nfe", "final loss", "accuracy");
    for r in &rows {
        println!(
            "{:>3} {:>4} {:>11.4} {:>9.3}",
            r.n,
            r.nfe,
            r.final_loss,
            r.final_accuracy.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
