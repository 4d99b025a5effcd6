//! Train an equilibrium classifier on two spirals with the reversible
//! engine, checkpoint halfway and resume.
//!
//! ```text
//! cargo run --release --example train_spirals
//! ```

use revdeq::checkpoint::Checkpoint;
use revdeq::grad::Engine;
use revdeq::lab::{resume, train, TrainTask};

fn main() -> revdeq::Result<()> {
    let task = TrainTask::default();
    let half = TrainTask {
        steps: task.steps / 2,
        ..task.clone()
    };

    let first = train(&half, Engine::Reversible)?;
    for m in first.metrics.iter().filter(|m| m.loss.is_some()) {
        println!(
            "step {:>5}  loss {:.4}  accuracy {:.3}  lr {:.3}  nfe {}",
            m.step,
            m.loss.unwrap(),
            m.accuracy.unwrap_or(f64::NAN),
            m.lr,
            m.nfe_cumulative
        );
    }

    let path = std::env::temp_dir().join("revdeq-spirals.ckpt");
    Checkpoint::from_state(&first.state).save(&path)?;
    println!("checkpoint saved at step {}", first.state.step);

    let state = Checkpoint::load(&path)?.to_state()?;
    let done = resume(&task, Engine::Reversible, state)?;
    for m in done.metrics.iter().filter(|m| m.loss.is_some()) {
        println!(
            "step {:>5}  loss {:.4}  accuracy {:.3}  lr {:.3}  nfe {}",
            m.step,
            m.loss.unwrap(),
            m.accuracy.unwrap_or(f64::NAN),
            m.lr,
            m.nfe_cumulative
        );
    }
    println!(
        "final: loss {:.4}, accuracy {:.3}",
        done.final_loss,
        done.final_accuracy.unwrap_or(f64::NAN)
    );
    Ok(())
}
