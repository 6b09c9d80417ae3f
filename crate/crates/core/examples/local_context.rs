//! Runs the local-context module and the predictor on a synthetic photo,
//! shows the attention at a portrait edge and checks that tiled inference
//! matches the whole-image pass.
//!
//! `cargo run --release --example local_context`

use lutfuse::context::{Model, ModelConfig};
use lutfuse::data::{synthesize, SyntheticSpec};
use lutfuse::losses::build_affinity;
use lutfuse::trainer::{prepare_samples, train_model, TrainConfig, TrainOutput};

fn main() -> lutfuse::Result<()> {
    let spec = SyntheticSpec {
        groups: 2,
        photos_per_group: 2,
        width: 32,
        height: 32,
        ..Default::default()
    };
    let photos = synthesize(&spec)?;
    let photo = &photos[0];
    let config = TrainConfig {
        epochs: 60,
        ..TrainConfig::desk()
    };
    let mut model = Model::new(ModelConfig::desk(), config.seed)?;

    let loaded = photos
        .iter()
        .map(|p| lutfuse::data::LoadedPhoto {
            record: lutfuse::data::PhotoRecord {
                photo_id: p.photo_id.clone(),
                group_id: p.group_id.clone(),
                input: Default::default(),
                target: Default::default(),
                mask: Default::default(),
            },
            input: p.input.clone(),
            target: p.target.clone(),
            mask: p.mask.clone(),
        })
        .collect();
    let samples = prepare_samples(loaded, config.model.k)?;
    train_model(&mut model, &samples, &config, &TrainOutput::default())?;

    let out = model.retouch(&photo.input)?;
    println!("image weights {:?}", out.image_weights.values());
    let aff = build_affinity(&photo.mask, 3)?;
    let (x, y) = (0..32 * 32)
        .map(|p| (p % 32, p / 32))
        .find(|&(x, y)| aff.is_edge(x, y))
        .expect("the portrait rectangle has an edge");
    println!("edge pixel ({x}, {y}): neighbour, same class, attention");
    for j in 0..9 {
        println!("  {j}  {}  {:.4}", aff.at(j, x, y) == 1.0, out.attention.at(j, x, y));
    }
    let wp: Vec<String> = (0..3).map(|n| format!("{:.4}", out.pixel_weights.at(n, x, y))).collect();
    println!("pixel weights there: {}", wp.join(" "));

    for tile in [4, 16] {
        let tiled = model.retouch_tiled(&photo.input, tile)?;
        println!("tile {tile:>2}: identical to whole image = {}", tiled == out.image);
    }
    Ok(())
}
