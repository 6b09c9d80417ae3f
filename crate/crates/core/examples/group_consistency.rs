//! Trains twice on a ten-group synthetic set, once without and once with the
//! group-aware term, and compares held-out consistency and PSNR.
//!
//! `cargo run --release --example group_consistency -- [epochs] [lr] [lambda_gam] [seed]`

use lutfuse::context::Model;
use lutfuse::data::{synthesize, LoadedPhoto, PhotoRecord, Split, SyntheticSpec};
use lutfuse::metrics::EvalMode;
use lutfuse::trainer::{evaluate_samples, prepare_samples, train_model, TrainConfig, TrainOutput, TrainSample};

fn split(spec: &SyntheticSpec, k: usize) -> lutfuse::Result<(Vec<TrainSample>, Vec<TrainSample>)> {
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for p in synthesize(spec)? {
        let loaded = LoadedPhoto {
            record: PhotoRecord {
                photo_id: p.photo_id,
                group_id: p.group_id,
                input: Default::default(),
                target: Default::default(),
                mask: Default::default(),
            },
            input: p.input,
            target: p.target,
            mask: p.mask,
        };
        match p.split {
            Split::Train => train.push(loaded),
            Split::Test => test.push(loaded),
        }
    }
    Ok((prepare_samples(train, k)?, prepare_samples(test, k)?))
}

fn main() -> lutfuse::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().map_or(60, |s| s.parse().expect("epochs"));
    let lr: f64 = args.next().map_or(TrainConfig::desk().lr, |s| s.parse().expect("lr"));
    let lambda: f64 = args.next().map_or(1e-3, |s| s.parse().expect("lambda_gam"));
    let seed: u64 = args.next().map_or(7, |s| s.parse().expect("seed"));

    let spec = SyntheticSpec {
        groups: 10,
        photos_per_group: 6,
        test_per_group: 3,
        seed,
        ..Default::default()
    };
    let base = TrainConfig {
        epochs,
        lr,
        seed,
        ..TrainConfig::desk()
    };
    let (train, test) = split(&spec, base.model.k)?;

    let identity = Model::new(base.model, base.seed)?;
    let r = evaluate_samples(&identity, &test, EvalMode::Quantized8)?;
    println!(
        "identity   m_glc {:>8.4}  psnr {:>6.2}",
        r.mean_m_glc().unwrap_or(f64::NAN),
        r.mean_psnr().unwrap_or(f64::NAN)
    );

    for (name, gam) in [("no gam", false), ("gam", true)] {
        let mut config = base.clone();
        config.weights.gam = gam;
        config.weights.lambda_gam = lambda;
        let mut model = Model::new(config.model, config.seed)?;
        let start = std::time::Instant::now();
        train_model(&mut model, &train, &config, &TrainOutput::default())?;
        let r = evaluate_samples(&model, &test, EvalMode::Quantized8)?;
        println!(
            "{name:<10} m_glc {:>8.4}  psnr {:>6.2}  ({:.0}s)",
            r.mean_m_glc().unwrap_or(f64::NAN),
            r.mean_psnr().unwrap_or(f64::NAN),
            start.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
