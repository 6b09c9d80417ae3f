//! Generates a seeded synthetic dataset of portrait groups and reloads the
//! manifests.
//!
//! `cargo run --example synthetic_data -- [out_dir]`

use std::path::PathBuf;

use lutfuse::data::{gen_synthetic, load_manifest, LoadedPhoto, SyntheticSpec};
use lutfuse::losses::mse_loss;
use lutfuse::metrics::m_glc;

fn main() -> lutfuse::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("lutfuse-synthetic"));
    let spec = SyntheticSpec {
        groups: 3,
        photos_per_group: 4,
        test_per_group: 1,
        ..Default::default()
    };
    let generated = gen_synthetic(&spec, &out)?;
    println!("train: {}", generated.train_path.display());
    println!("test:  {}", generated.test_path.display());

    let train = load_manifest(&generated.train_path)?;
    for (group, records) in train.groups() {
        let photos = records.iter().map(|r| LoadedPhoto::load(r)).collect::<lutfuse::Result<Vec<_>>>()?;
        let targets: Vec<_> = photos.iter().map(|p| p.target.clone()).collect();
        let gaps = photos
            .iter()
            .map(|p| mse_loss(&p.input, &p.target).map(|v| format!("{v:.4}")))
            .collect::<lutfuse::Result<Vec<_>>>()?;
        println!("{group}: {} photos, input/target MSE {}, target m_glc {:.2e}", photos.len(), gaps.join(" "), m_glc(&targets)?);
    }
    Ok(())
}
