//! PSNR, CIE76 colour difference, their portrait-region variants and group
//! colour consistency.

use std::fmt::Write as _;

use crate::colorspace::{self, rgb_to_lab, ColorSpace, Image};
use crate::error::{Error, Result};
use crate::losses::{variance, Mask};

/// Reported when two images are identical.
pub const PSNR_CAP: f64 = 100.0;

/// How outputs are prepared before measuring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EvalMode {
    /// Clamped float samples.
    #[default]
    Float,
    /// Clamped and rounded to 8 bits, as when saving the photo.
    Quantized8,
}

impl EvalMode {
    pub fn prepare(self, img: &Image) -> Image {
        match self {
            EvalMode::Float => img.clamped(),
            EvalMode::Quantized8 => img.quantized_8bit(),
        }
    }
}

fn check_pair(out: &Image, target: &Image) -> Result<()> {
    out.expect_space(ColorSpace::Srgb)?;
    target.expect_space(ColorSpace::Srgb)?;
    if !out.same_shape(target) {
        return Err(Error::Shape(format!(
            "{}x{} vs {}x{}",
            out.width(),
            out.height(),
            target.width(),
            target.height()
        )));
    }
    Ok(())
}

fn check_mask(img: &Image, mask: &Mask) -> Result<()> {
    if (mask.width(), mask.height()) != (img.width(), img.height()) {
        return Err(Error::Shape(format!(
            "{}x{} mask for a {}x{} image",
            mask.width(),
            mask.height(),
            img.width(),
            img.height()
        )));
    }
    Ok(())
}

fn unit(v: f32) -> f64 {
    (v as f64).clamp(0.0, 1.0)
}

fn psnr_from(sum_sq: f64, samples: usize) -> f64 {
    if sum_sq == 0.0 {
        return PSNR_CAP;
    }
    (10.0 * (samples as f64 / sum_sq).log10()).min(PSNR_CAP)
}

/// Squared error and sample count over the pixels selected by `keep`.
fn sq_error(out: &Image, target: &Image, keep: impl Fn(usize) -> bool) -> (f64, usize) {
    let mut sum = 0.0;
    let mut n = 0;
    for (p, (a, b)) in out.data().chunks_exact(3).zip(target.data().chunks_exact(3)).enumerate() {
        if keep(p) {
            for c in 0..3 {
                sum += (unit(a[c]) - unit(b[c])).powi(2);
            }
            n += 3;
        }
    }
    (sum, n)
}

fn lab_error(out: &Image, target: &Image, keep: impl Fn(usize) -> bool) -> (f64, usize) {
    let mut sum = 0.0;
    let mut n = 0;
    for (p, (a, b)) in out.data().chunks_exact(3).zip(target.data().chunks_exact(3)).enumerate() {
        if keep(p) {
            let la = rgb_to_lab([unit(a[0]), unit(a[1]), unit(a[2])]);
            let lb = rgb_to_lab([unit(b[0]), unit(b[1]), unit(b[2])]);
            sum += ((la[0] - lb[0]).powi(2) + (la[1] - lb[1]).powi(2) + (la[2] - lb[2]).powi(2)).sqrt();
            n += 1;
        }
    }
    (sum, n)
}

/// Peak signal-to-noise ratio in dB over all samples, after clamping.
pub fn psnr(out: &Image, target: &Image) -> Result<f64> {
    check_pair(out, target)?;
    let (sum, n) = sq_error(out, target, |_| true);
    Ok(psnr_from(sum, n))
}

/// Mean per-pixel Euclidean distance in CIELAB.
pub fn delta_e(out: &Image, target: &Image) -> Result<f64> {
    check_pair(out, target)?;
    let (sum, n) = lab_error(out, target, |_| true);
    Ok(sum / n.max(1) as f64)
}

/// [`psnr`] over pixels with mask > 0.5; `None` when there are none.
pub fn psnr_hc(out: &Image, target: &Image, mask: &Mask) -> Result<Option<f64>> {
    check_pair(out, target)?;
    check_mask(out, mask)?;
    let (sum, n) = sq_error(out, target, |p| mask.values()[p] > 0.5);
    Ok((n > 0).then(|| psnr_from(sum, n)))
}

/// [`delta_e`] over pixels with mask > 0.5; `None` when there are none.
pub fn delta_e_hc(out: &Image, target: &Image, mask: &Mask) -> Result<Option<f64>> {
    check_pair(out, target)?;
    check_mask(out, mask)?;
    let (sum, n) = lab_error(out, target, |p| mask.values()[p] > 0.5);
    Ok((n > 0).then(|| sum / n as f64))
}

/// Group colour consistency: population variance of the members' mean a*
/// plus that of their mean b*.
pub fn m_glc(group: &[Image]) -> Result<f64> {
    if group.is_empty() {
        return Err(Error::Invalid("consistency of an empty group".into()));
    }
    let means = group
        .iter()
        .map(|img| {
            img.expect_space(ColorSpace::Srgb)?;
            Ok(colorspace::mean_ab(&img.clamped()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(m_glc_from_means(&means))
}

/// [`m_glc`] from precomputed `[mean a*, mean b*]` pairs.
pub fn m_glc_from_means(means: &[[f64; 2]]) -> f64 {
    let a: Vec<f64> = means.iter().map(|m| m[0]).collect();
    let b: Vec<f64> = means.iter().map(|m| m[1]).collect();
    variance(&a) + variance(&b)
}

/// Scores of one photo.
#[derive(Debug, Clone, PartialEq)]
pub struct PhotoMetrics {
    pub photo_id: String,
    pub group_id: String,
    pub psnr: f64,
    pub delta_e: f64,
    pub psnr_hc: Option<f64>,
    pub delta_e_hc: Option<f64>,
    /// Mean a* and b* of the measured output.
    pub mean_ab: [f64; 2],
}

impl PhotoMetrics {
    pub fn measure(
        photo_id: &str,
        group_id: &str,
        out: &Image,
        target: &Image,
        mask: &Mask,
        mode: EvalMode,
    ) -> Result<Self> {
        let out = mode.prepare(out);
        Ok(PhotoMetrics {
            photo_id: photo_id.to_string(),
            group_id: group_id.to_string(),
            psnr: psnr(&out, target)?,
            delta_e: delta_e(&out, target)?,
            psnr_hc: psnr_hc(&out, target, mask)?,
            delta_e_hc: delta_e_hc(&out, target, mask)?,
            mean_ab: colorspace::mean_ab(&out),
        })
    }
}

/// Per-photo scores, per-group consistency and their means.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub photos: Vec<PhotoMetrics>,
    /// `(group id, m_glc)` sorted by group id.
    pub groups: Vec<(String, f64)>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"))
}

impl EvalReport {
    /// Groups photos by id and computes each group's consistency from the
    /// photos' output means.
    pub fn new(photos: Vec<PhotoMetrics>) -> Self {
        let mut ids: Vec<&str> = photos.iter().map(|p| p.group_id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        let groups = ids
            .iter()
            .map(|&gid| {
                let means: Vec<[f64; 2]> = photos.iter().filter(|p| p.group_id == gid).map(|p| p.mean_ab).collect();
                (gid.to_string(), m_glc_from_means(&means))
            })
            .collect();
        EvalReport { photos, groups }
    }

    pub fn mean_psnr(&self) -> Option<f64> {
        mean(self.photos.iter().map(|p| p.psnr))
    }

    pub fn mean_delta_e(&self) -> Option<f64> {
        mean(self.photos.iter().map(|p| p.delta_e))
    }

    /// Mean over photos whose mask is non-empty.
    pub fn mean_psnr_hc(&self) -> Option<f64> {
        mean(self.photos.iter().filter_map(|p| p.psnr_hc))
    }

    pub fn mean_delta_e_hc(&self) -> Option<f64> {
        mean(self.photos.iter().filter_map(|p| p.delta_e_hc))
    }

    pub fn mean_m_glc(&self) -> Option<f64> {
        mean(self.groups.iter().map(|g| g.1))
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<16} {:<12} {:>9} {:>9} {:>9} {:>9}", "photo", "group", "psnr", "delta_e", "psnr_hc", "de_hc");
        for p in &self.photos {
            let _ = writeln!(
                s,
                "{:<16} {:<12} {:>9.4} {:>9.4} {:>9} {:>9}",
                p.photo_id,
                p.group_id,
                p.psnr,
                p.delta_e,
                fmt_opt(p.psnr_hc),
                fmt_opt(p.delta_e_hc)
            );
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<16} {:>9}", "group", "m_glc");
        for (gid, v) in &self.groups {
            let _ = writeln!(s, "{gid:<16} {v:>9.4}");
        }
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "mean psnr {}  delta_e {}  psnr_hc {}  delta_e_hc {}  m_glc {}",
            fmt_opt(self.mean_psnr()),
            fmt_opt(self.mean_delta_e()),
            fmt_opt(self.mean_psnr_hc()),
            fmt_opt(self.mean_delta_e_hc()),
            fmt_opt(self.mean_m_glc())
        );
        s
    }

    /// One `key=value` per line. Absent region metrics are omitted.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let mut put = |key: &str, v: Option<f64>| {
            if let Some(v) = v {
                let _ = writeln!(s, "{key}={v:.6}");
            }
        };
        for p in &self.photos {
            put(&format!("{}.psnr", p.photo_id), Some(p.psnr));
            put(&format!("{}.delta_e", p.photo_id), Some(p.delta_e));
            put(&format!("{}.psnr_hc", p.photo_id), p.psnr_hc);
            put(&format!("{}.delta_e_hc", p.photo_id), p.delta_e_hc);
        }
        for (gid, v) in &self.groups {
            put(&format!("group.{gid}.m_glc"), Some(*v));
        }
        put("mean.psnr", self.mean_psnr());
        put("mean.delta_e", self.mean_delta_e());
        put("mean.psnr_hc", self.mean_psnr_hc());
        put("mean.delta_e_hc", self.mean_delta_e_hc());
        put("mean.m_glc", self.mean_m_glc());
        s
    }
}
