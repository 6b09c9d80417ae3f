//! The full desk pipeline: generate data, train, evaluate the held-out
//! split and print the report.
//!
//! `cargo run --release --example train_and_eval -- [out_dir] [epochs]`

use std::path::PathBuf;

use lutfuse::data::{gen_synthetic, SyntheticSpec};
use lutfuse::metrics::EvalMode;
use lutfuse::trainer::{self, TrainConfig};

fn main() -> lutfuse::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("lutfuse-desk"));
    let epochs: usize = args.next().map_or(30, |s| s.parse().expect("epochs"));

    let spec = SyntheticSpec {
        groups: 4,
        photos_per_group: 6,
        test_per_group: 2,
        ..Default::default()
    };
    let data = gen_synthetic(&spec, out.join("data"))?;
    let config = TrainConfig {
        epochs,
        checkpoint_every: 10,
        ..TrainConfig::desk()
    };
    let run = out.join("run");
    let (_, report) = trainer::train(&config, &data.train, &run)?;
    let total = report.series("total");
    println!(
        "{} steps, total loss {:.4e} -> {:.4e}; log in {}",
        report.steps,
        total.first().copied().unwrap_or_default(),
        total.last().copied().unwrap_or_default(),
        run.join(trainer::LOSS_LOG).display()
    );

    let eval = trainer::evaluate(run.join(trainer::FINAL_CHECKPOINT), &data.test_path, EvalMode::Quantized8)?;
    print!("{}", eval.to_table());
    Ok(())
}
