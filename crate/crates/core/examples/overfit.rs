//! Fits the desk model to a single synthetic photo with the MSE term alone,
//! next to a LUT built by hand from the known degradation.
//!
//! `cargo run --release --example overfit -- [lr] [steps]`

use lutfuse::context::Model;
use lutfuse::data::{synthesize, LoadedPhoto, PhotoRecord, SyntheticSpec};
use lutfuse::losses::LossWeights;
use lutfuse::lut3d::{lookup, Lut3D};
use lutfuse::metrics::psnr;
use lutfuse::trainer::{prepare_samples, train_model, TrainConfig, TrainOutput};

fn mse(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (*x as f64 - *y as f64).powi(2)).sum::<f64>() / a.len() as f64
}

fn main() -> lutfuse::Result<()> {
    let mut args = std::env::args().skip(1);
    let lr: f64 = args.next().map_or(TrainConfig::desk().lr, |s| s.parse().expect("lr"));
    let steps: usize = args.next().map_or(200, |s| s.parse().expect("steps"));

    let spec = SyntheticSpec {
        groups: 1,
        photos_per_group: 1,
        test_per_group: 0,
        ..Default::default()
    };
    let photo = synthesize(&spec)?.remove(0);
    let config = TrainConfig {
        epochs: steps,
        lr,
        weights: LossWeights::mse_only(),
        ..TrainConfig::desk()
    };

    let hand = Lut3D::from_fn(config.model.lut_dim, |r, g, b| {
        photo.tone.apply(photo.degradation.invert([r, g, b]))
    })?;
    let fitted = lookup(&hand, &photo.input)?;
    println!("hand-fit LUT   mse {:.3e}", mse(fitted.data(), photo.target.data()));
    println!("input          mse {:.3e}", mse(photo.input.data(), photo.target.data()));

    let loaded = LoadedPhoto {
        record: PhotoRecord {
            photo_id: photo.photo_id.clone(),
            group_id: photo.group_id.clone(),
            input: Default::default(),
            target: Default::default(),
            mask: Default::default(),
        },
        input: photo.input.clone(),
        target: photo.target.clone(),
        mask: photo.mask.clone(),
    };
    let samples = prepare_samples(vec![loaded], config.model.k)?;
    let mut model = Model::new(config.model, config.seed)?;
    let start = std::time::Instant::now();
    let report = train_model(&mut model, &samples, &config, &TrainOutput::default())?;
    let out = model.retouch(&photo.input)?.image;
    let series = report.series("mse");
    for (i, v) in series.iter().enumerate().filter(|(i, _)| i % 25 == 0) {
        println!("step {:>4}  mse {v:.3e}", i + 1);
    }
    println!(
        "trained        mse {:.3e}  psnr {:.2} dB  ({} steps, {:.1}s)",
        mse(out.data(), photo.target.data()),
        psnr(&out, &photo.target)?,
        report.steps,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
