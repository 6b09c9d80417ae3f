//! Seeded synthetic photo groups.
//!
//! Each group renders one base scene: a horizontal two-colour gradient with a
//! flat rectangle standing in for the portrait. Targets apply the group's
//! per-channel tone curve `x^τ_c`; each input applies its own degradation
//! `(gain_c · 2^e · x)^γ`. Both maps are per-channel and monotone, so the
//! input → target map is a 3D LUT.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::image_io::{write_image, write_mask, BitDepth};
use super::manifest::{GroupManifest, PhotoRecord, Split};
use crate::colorspace::{ColorSpace, Image};
use crate::config::FlatConfig;
use crate::error::{Error, IoContext, Result};
use crate::losses::{mse_loss, Mask};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub groups: usize,
    pub photos_per_group: usize,
    /// The last this-many photos of every group go to the test split.
    pub test_per_group: usize,
    pub width: usize,
    pub height: usize,
    pub seed: u64,
    pub base: (f64, f64),
    pub gamma: (f64, f64),
    pub gain: (f64, f64),
    pub exposure: (f64, f64),
    pub tone: (f64, f64),
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            groups: 4,
            photos_per_group: 3,
            test_per_group: 0,
            width: 64,
            height: 64,
            seed: 0,
            base: (0.3, 0.65),
            gamma: (0.6, 1.6),
            gain: (0.7, 1.3),
            exposure: (-0.2, 0.2),
            tone: (0.7, 1.0),
        }
    }
}

impl SyntheticSpec {
    pub fn from_config(mut c: FlatConfig) -> Result<Self> {
        let mut s = Self::default();
        c.take("groups", &mut s.groups)?;
        c.take("photos_per_group", &mut s.photos_per_group)?;
        c.take("test_per_group", &mut s.test_per_group)?;
        c.take("width", &mut s.width)?;
        c.take("height", &mut s.height)?;
        c.take("seed", &mut s.seed)?;
        c.take_range("base", &mut s.base)?;
        c.take_range("gamma", &mut s.gamma)?;
        c.take_range("gain", &mut s.gain)?;
        c.take_range("exposure", &mut s.exposure)?;
        c.take_range("tone", &mut s.tone)?;
        c.finish()?;
        s.validate()?;
        Ok(s)
    }

    /// Rejects empty sizes and ranges that would push samples outside [0, 1].
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Invalid(format!("synthetic spec: {msg}")));
        if self.groups == 0 || self.photos_per_group == 0 || self.width < 4 || self.height < 4 {
            return bad("groups, photos and a size of at least 4x4 are required");
        }
        if self.test_per_group > self.photos_per_group {
            return bad("test_per_group exceeds photos_per_group");
        }
        if self.base.0 <= 0.0 || self.base.1 > 1.0 || self.gamma.0 <= 0.0 || self.gain.0 <= 0.0 || self.tone.0 <= 0.0 {
            return bad("base must lie in (0, 1] and gamma, gain, tone must be positive");
        }
        if self.gain.1 * self.exposure.1.exp2() * self.base.1 > 1.0 {
            return bad("brightest gain and exposure push the base above 1");
        }
        Ok(())
    }
}

/// Per-photo input degradation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Degradation {
    pub gamma: f64,
    pub gains: [f64; 3],
    pub exposure: f64,
}

impl Degradation {
    pub fn apply(&self, rgb: [f64; 3]) -> [f64; 3] {
        let k = self.exposure.exp2();
        [0, 1, 2].map(|c| (self.gains[c] * k * rgb[c]).max(0.0).powf(self.gamma).min(1.0))
    }

    pub fn invert(&self, rgb: [f64; 3]) -> [f64; 3] {
        let k = self.exposure.exp2();
        [0, 1, 2].map(|c| rgb[c].max(0.0).powf(1.0 / self.gamma) / (self.gains[c] * k))
    }
}

/// Per-group target style.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToneCurve {
    pub exponents: [f64; 3],
}

impl ToneCurve {
    pub fn apply(&self, rgb: [f64; 3]) -> [f64; 3] {
        [0, 1, 2].map(|c| rgb[c].clamp(0.0, 1.0).powf(self.exponents[c]))
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticPhoto {
    pub photo_id: String,
    pub group_id: String,
    pub split: Split,
    pub input: Image,
    pub target: Image,
    pub mask: Mask,
    pub degradation: Degradation,
    pub tone: ToneCurve,
}

fn draw(rng: &mut ChaCha8Rng, r: (f64, f64)) -> f64 {
    if r.0 == r.1 {
        r.0
    } else {
        rng.gen_range(r.0..=r.1)
    }
}

fn map_image(base: &[[f64; 3]], w: usize, h: usize, f: impl Fn([f64; 3]) -> [f64; 3]) -> Image {
    let data = base.iter().flat_map(|&p| f(p).map(|v| v as f32)).collect();
    Image::new(w, h, ColorSpace::Srgb, data)
        .expect("maps stay within [0, 1]")
        .quantized_8bit()
}

/// Renders every photo in memory. Deterministic in the spec.
pub fn synthesize(spec: &SyntheticSpec) -> Result<Vec<SyntheticPhoto>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (w, h) = (spec.width, spec.height);
    let mut photos = Vec::with_capacity(spec.groups * spec.photos_per_group);
    for gi in 0..spec.groups {
        let mut colour = || [0; 3].map(|_| draw(&mut rng, spec.base));
        let (left, right, portrait) = (colour(), colour(), colour());
        let rw = rng.gen_range(w / 4..=w / 2);
        let rh = rng.gen_range(h / 3..=2 * h / 3);
        let rx = rng.gen_range(0..=w - rw);
        let ry = rng.gen_range(0..=h - rh);
        let inside = |x: usize, y: usize| (rx..rx + rw).contains(&x) && (ry..ry + rh).contains(&y);
        let mut base = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let s = x as f64 / (w - 1) as f64;
                base.push(if inside(x, y) {
                    portrait
                } else {
                    [0, 1, 2].map(|c| left[c] + s * (right[c] - left[c]))
                });
            }
        }
        let mask = Mask::from_fn(w, h, |x, y| if inside(x, y) { 1.0 } else { 0.0 })?;
        let tone = ToneCurve {
            exponents: [0; 3].map(|_| draw(&mut rng, spec.tone)),
        };
        let target = map_image(&base, w, h, |p| tone.apply(p));
        let group_id = format!("g{gi:03}");
        for pi in 0..spec.photos_per_group {
            // Redraw the rare near-identity degradation so every pair carries signal.
            let (degradation, input) = loop {
                let d = Degradation {
                    gamma: draw(&mut rng, spec.gamma),
                    gains: [0; 3].map(|_| draw(&mut rng, spec.gain)),
                    exposure: draw(&mut rng, spec.exposure),
                };
                let input = map_image(&base, w, h, |p| d.apply(p));
                if mse_loss(&input, &target)? > 1e-4 {
                    break (d, input);
                }
            };
            let split = if pi >= spec.photos_per_group - spec.test_per_group {
                Split::Test
            } else {
                Split::Train
            };
            photos.push(SyntheticPhoto {
                photo_id: format!("{group_id}_p{pi:02}"),
                group_id: group_id.clone(),
                split,
                input,
                target: target.clone(),
                mask: mask.clone(),
                degradation,
                tone,
            });
        }
    }
    Ok(photos)
}

/// Paths and manifests of a generated dataset.
#[derive(Debug, Clone)]
pub struct Generated {
    pub train_path: PathBuf,
    pub test_path: PathBuf,
    pub train: GroupManifest,
    pub test: GroupManifest,
}

/// Writes 8-bit PNG inputs, targets and masks under `out_dir/images` and the
/// `train.tsv` / `test.tsv` manifests.
pub fn gen_synthetic(spec: &SyntheticSpec, out_dir: impl AsRef<Path>) -> Result<Generated> {
    let out_dir = out_dir.as_ref();
    let photos = synthesize(spec)?;
    let images = out_dir.join("images");
    fs::create_dir_all(&images).at(&images)?;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for p in &photos {
        let record = PhotoRecord {
            photo_id: p.photo_id.clone(),
            group_id: p.group_id.clone(),
            input: images.join(format!("{}_in.png", p.photo_id)),
            target: images.join(format!("{}_gt.png", p.photo_id)),
            mask: images.join(format!("{}_mask.png", p.photo_id)),
        };
        write_image(&record.input, &p.input, BitDepth::Eight)?;
        write_image(&record.target, &p.target, BitDepth::Eight)?;
        write_mask(&record.mask, &p.mask)?;
        match p.split {
            Split::Train => train.push(record),
            Split::Test => test.push(record),
        }
    }
    let train = GroupManifest::new(Split::Train, train)?;
    let test = GroupManifest::new(Split::Test, test)?;
    let train_path = out_dir.join("train.tsv");
    let test_path = out_dir.join("test.tsv");
    train.save(&train_path)?;
    test.save(&test_path)?;
    Ok(Generated {
        train_path,
        test_path,
        train,
        test,
    })
}
