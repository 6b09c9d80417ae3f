//! Evaluates every term of the training objective for an untrained model
//! on one synthetic group.
//!
//! `cargo run --release --example loss_terms`

use lutfuse::context::{Model, ModelConfig};
use lutfuse::data::{synthesize, SyntheticSpec};
use lutfuse::losses::{build_affinity, total_loss, GroupStats, LossWeights, PhotoLoss};

fn main() -> lutfuse::Result<()> {
    let spec = SyntheticSpec {
        groups: 1,
        photos_per_group: 3,
        ..Default::default()
    };
    let photos = synthesize(&spec)?;
    let model = Model::new(ModelConfig::desk(), 0)?;
    let stats = photos
        .iter()
        .map(|p| GroupStats::of(&p.photo_id, &p.group_id, &p.target))
        .collect::<lutfuse::Result<Vec<_>>>()?;

    let mut outputs = Vec::new();
    for p in &photos {
        let others: Vec<GroupStats> = stats.iter().filter(|s| s.photo_id != p.photo_id).cloned().collect();
        outputs.push((model.retouch(&p.input)?, build_affinity(&p.mask, 3)?, others));
    }
    let batch: Vec<PhotoLoss> = photos
        .iter()
        .zip(&outputs)
        .map(|(p, (r, aff, others))| PhotoLoss {
            output: &r.image,
            target: &p.target,
            attention: &r.attention,
            affinity: Some(aff),
            group_others: others,
        })
        .collect();
    for (name, weights) in [("all terms", LossWeights::default()), ("mse only", LossWeights::mse_only())] {
        let terms = total_loss(&batch, &model.bank(), &weights)?;
        let row: Vec<String> = terms.named().iter().map(|(n, v)| format!("{n} {v:.4e}")).collect();
        println!("{name:<10} {}", row.join("  "));
    }
    Ok(())
}
