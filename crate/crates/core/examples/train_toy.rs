//! Overfits the ten-pair toy set with one fusion configuration.
//!
//! `cargo run --release --example train_toy -- pool encoder`

use std::time::Instant;

use nerdd::fusion::{train_toy, Cutoff, FusionConfig, Strategy, TrainOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let strategy: Strategy = args.next().as_deref().unwrap_or("pool").parse()?;
    let cutoff: Cutoff = args.next().as_deref().unwrap_or("encoder").parse()?;
    let cfg = FusionConfig::default().with_strategy(strategy, cutoff);
    let opts = TrainOptions::default();
    let start = Instant::now();
    let report = train_toy(&cfg, &opts, |step, loss| {
        if step % 50 == 0 {
            println!("step {step:4}  loss {loss:.4}");
        }
    })?;
    println!(
        "{strategy}@{cutoff}: loss {:.4} -> {:.4} ({:.1}% drop), AP50 {:.3}, {:.1}s",
        report.initial_loss,
        report.final_loss,
        100.0 * report.loss_reduction(),
        report.eval.ap50,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
