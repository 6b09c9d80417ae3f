//! Training objective.
//!
//! `L = L_mse + λ_s·R_s + λ_m·R_m + L_edge + L_GAM`, where the edge term is a
//! binary cross-entropy between the local attention map and a mask-derived
//! affinity map on edge pixels, and the group term is the variance of mean
//! a*/b* over a retouched photo and the other targets of its group.

use crate::colorspace::{self, ab_with_jacobian, ColorSpace, Image};
use crate::context::AttentionMap;
use crate::error::{Error, Result};
use crate::lut3d::{self, LutBank};
use crate::tensor::{Backward, Graph, Tensor, Var};

const BCE_EPS: f64 = 1e-6;

/// Portrait probability per pixel, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    width: usize,
    height: usize,
    values: Vec<f32>,
}

impl Mask {
    pub fn new(width: usize, height: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::Shape(format!(
                "{width}x{height} mask needs {} values, got {}",
                width * height,
                values.len()
            )));
        }
        if let Some((i, &v)) = values.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(Error::OutOfRange { index: i, value: v });
        }
        Ok(Mask {
            width,
            height,
            values,
        })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f32) -> Result<Self> {
        let values = (0..height).flat_map(|y| (0..width).map(move |x| (x, y))).map(|(x, y)| f(x, y)).collect();
        Self::new(width, height, values)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn is_foreground(&self, x: usize, y: usize) -> bool {
        self.values[y * self.width + x] > 0.5
    }
}

/// Same-class indicator for every pixel and neighbour, planar `k² × H × W`
/// in the neighbour order of [`AttentionMap`].
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMap {
    k: usize,
    width: usize,
    height: usize,
    affinity: Vec<f64>,
    edge: Vec<bool>,
}

impl AffinityMap {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn affinity(&self) -> &[f64] {
        &self.affinity
    }

    pub fn at(&self, j: usize, x: usize, y: usize) -> f64 {
        self.affinity[(j * self.height + y) * self.width + x]
    }

    pub fn edge_mask(&self) -> &[bool] {
        &self.edge
    }

    pub fn is_edge(&self, x: usize, y: usize) -> bool {
        self.edge[y * self.width + x]
    }

    pub fn edge_count(&self) -> usize {
        self.edge.iter().filter(|&&e| e).count()
    }
}

/// Affinity targets from a binarised mask. Neighbours outside the image
/// count as background.
pub fn build_affinity(mask: &Mask, k: usize) -> Result<AffinityMap> {
    if k.is_multiple_of(2) {
        return Err(Error::Invalid(format!("neighbourhood size {k} must be odd")));
    }
    let (w, h) = (mask.width, mask.height);
    let r = (k / 2) as isize;
    let class = |x: isize, y: isize| -> bool {
        x >= 0 && y >= 0 && x < w as isize && y < h as isize && mask.is_foreground(x as usize, y as usize)
    };
    let mut affinity = vec![0.0; k * k * w * h];
    let mut edge = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let centre = class(x as isize, y as isize);
            for j in 0..k * k {
                let dy = (j / k) as isize - r;
                let dx = (j % k) as isize - r;
                let same = class(x as isize + dx, y as isize + dy) == centre;
                affinity[(j * h + y) * w + x] = if same { 1.0 } else { 0.0 };
                edge[y * w + x] |= !same;
            }
        }
    }
    Ok(AffinityMap {
        k,
        width: w,
        height: h,
        affinity,
        edge,
    })
}

fn check_affinity_shape(k: usize, h: usize, w: usize, aff: &AffinityMap) -> Result<()> {
    if (k, h, w) != (aff.k, aff.height, aff.width) {
        return Err(Error::Shape(format!(
            "attention {k}x{k} over {h}x{w}, affinity {0}x{0} over {1}x{2}",
            aff.k, aff.height, aff.width
        )));
    }
    Ok(())
}

/// Sum of per-entry BCE over edge pixels and the number of entries.
fn bce_sum(attn: &[f64], aff: &AffinityMap) -> (f64, usize) {
    let hw = aff.width * aff.height;
    let mut sum = 0.0;
    let mut count = 0;
    for (p, _) in aff.edge.iter().enumerate().filter(|(_, &e)| e) {
        for j in 0..aff.k * aff.k {
            let a = attn[j * hw + p].clamp(BCE_EPS, 1.0 - BCE_EPS);
            let y = aff.affinity[j * hw + p];
            sum -= y * a.ln() + (1.0 - y) * (1.0 - a).ln();
            count += 1;
        }
    }
    (sum, count)
}

/// Mean binary cross-entropy over the `k²` entries of edge pixels; zero when
/// there are none.
pub fn edge_loss(attn: &AttentionMap, aff: &AffinityMap) -> Result<f64> {
    check_affinity_shape(attn.k(), attn.height(), attn.width(), aff)?;
    let (sum, count) = bce_sum(attn.values(), aff);
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

fn check_pair(out: &Image, target: &Image) -> Result<()> {
    if !out.same_shape(target) {
        return Err(Error::Shape(format!(
            "{}x{} output vs {}x{} target",
            out.width(),
            out.height(),
            target.width(),
            target.height()
        )));
    }
    target.expect_space(ColorSpace::Srgb)
}

/// Mean squared difference over all samples.
pub fn mse_loss(out: &Image, target: &Image) -> Result<f64> {
    check_pair(out, target)?;
    let sum: f64 = out
        .data()
        .iter()
        .zip(target.data())
        .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
        .sum();
    Ok(sum / out.data().len().max(1) as f64)
}

/// Trade-off coefficients and per-term switches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_smooth: f64,
    pub lambda_mono: f64,
    pub lambda_gam: f64,
    pub mse: bool,
    pub smooth: bool,
    pub mono: bool,
    pub edge: bool,
    pub gam: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_smooth: 1e-4,
            lambda_mono: 10.0,
            lambda_gam: 1e-3,
            mse: true,
            smooth: true,
            mono: true,
            edge: true,
            gam: true,
        }
    }
}

impl LossWeights {
    pub fn mse_only() -> Self {
        LossWeights {
            smooth: false,
            mono: false,
            edge: false,
            gam: false,
            ..Self::default()
        }
    }

    pub fn none() -> Self {
        LossWeights {
            mse: false,
            ..Self::mse_only()
        }
    }

    fn smooth_coef(&self) -> f64 {
        if self.smooth {
            self.lambda_smooth
        } else {
            0.0
        }
    }

    fn mono_coef(&self) -> f64 {
        if self.mono {
            self.lambda_mono
        } else {
            0.0
        }
    }
}

/// `L_mse + λ_s·R_s + λ_m·R_m` with the regularizers summed over the bank.
pub fn lut_loss(out: &Image, target: &Image, bank: &LutBank, w: &LossWeights) -> Result<f64> {
    let mse = if w.mse { mse_loss(out, target)? } else { 0.0 };
    Ok(mse + w.smooth_coef() * lut3d::smooth_reg(bank) + w.mono_coef() * lut3d::mono_reg(bank))
}

/// Mean a*/b* of one target photo.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupStats {
    pub photo_id: String,
    pub group_id: String,
    pub mean_a: f64,
    pub mean_b: f64,
}

impl GroupStats {
    pub fn of(photo_id: &str, group_id: &str, target: &Image) -> Result<Self> {
        target.expect_space(ColorSpace::Srgb)?;
        let [mean_a, mean_b] = colorspace::mean_ab(target);
        Ok(GroupStats {
            photo_id: photo_id.to_string(),
            group_id: group_id.to_string(),
            mean_a,
            mean_b,
        })
    }

    pub fn means(&self) -> [f64; 2] {
        [self.mean_a, self.mean_b]
    }
}

/// Population variance.
pub fn variance(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

fn gam_value(retouched: [f64; 2], others: &[[f64; 2]], lambda: f64) -> f64 {
    let column = |c: usize| -> Vec<f64> {
        std::iter::once(retouched[c]).chain(others.iter().map(|o| o[c])).collect()
    };
    lambda * (variance(&column(0)) + variance(&column(1)))
}

/// `λ·(Var_a + Var_b)` over the retouched photo's mean a*/b* and those of
/// the other targets in its group. The photo may hold unclamped values.
pub fn gam_loss(retouched: &Image, others: &[GroupStats], lambda: f64) -> Result<f64> {
    retouched.expect_space(ColorSpace::Srgb)?;
    let means: Vec<[f64; 2]> = others.iter().map(GroupStats::means).collect();
    Ok(gam_value(colorspace::mean_ab(retouched), &means, lambda))
}

/// Per-term values of the objective; disabled terms are zero.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub mse: f64,
    pub smooth: f64,
    pub mono: f64,
    pub edge: f64,
    pub gam: f64,
}

impl LossBreakdown {
    pub const TERMS: [&'static str; 5] = ["mse", "smooth", "mono", "edge", "gam"];

    pub fn total(&self) -> f64 {
        self.mse + self.smooth + self.mono + self.edge + self.gam
    }

    /// `(name, value)` pairs, including `total` last.
    pub fn named(&self) -> [(&'static str, f64); 6] {
        [
            ("mse", self.mse),
            ("smooth", self.smooth),
            ("mono", self.mono),
            ("edge", self.edge),
            ("gam", self.gam),
            ("total", self.total()),
        ]
    }
}

/// Everything the per-photo terms need.
#[derive(Debug, Clone, Copy)]
pub struct PhotoLoss<'a> {
    pub output: &'a Image,
    pub target: &'a Image,
    pub attention: &'a AttentionMap,
    pub affinity: Option<&'a AffinityMap>,
    pub group_others: &'a [GroupStats],
}

/// Objective over a batch: per-photo terms are averaged, the regularizers
/// are counted once.
pub fn total_loss(photos: &[PhotoLoss<'_>], bank: &LutBank, w: &LossWeights) -> Result<LossBreakdown> {
    let mut terms = LossBreakdown {
        smooth: w.smooth_coef() * lut3d::smooth_reg(bank),
        mono: w.mono_coef() * lut3d::mono_reg(bank),
        ..Default::default()
    };
    let n = photos.len().max(1) as f64;
    for p in photos {
        if w.mse {
            terms.mse += mse_loss(p.output, p.target)? / n;
        }
        if w.edge {
            if let Some(aff) = p.affinity {
                terms.edge += edge_loss(p.attention, aff)? / n;
            }
        }
        if w.gam {
            terms.gam += gam_loss(p.output, p.group_others, w.lambda_gam)? / n;
        }
    }
    Ok(terms)
}

struct EdgeBceRule {
    affinity: AffinityMap,
}

impl Backward for EdgeBceRule {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &[f64], _: &[bool]) -> Vec<Option<Vec<f64>>> {
        let aff = &self.affinity;
        let attn = inputs[0].data();
        let hw = aff.width * aff.height;
        let count = aff.edge_count() * aff.k * aff.k;
        let mut grad = vec![0.0; attn.len()];
        if count == 0 {
            return vec![Some(grad)];
        }
        let scale = g[0] / count as f64;
        for (p, _) in aff.edge.iter().enumerate().filter(|(_, &e)| e) {
            for j in 0..aff.k * aff.k {
                let i = j * hw + p;
                let a = attn[i];
                if !(BCE_EPS..=1.0 - BCE_EPS).contains(&a) {
                    continue;
                }
                let y = aff.affinity[i];
                grad[i] = -scale * (y / a - (1.0 - y) / (1.0 - a));
            }
        }
        vec![Some(grad)]
    }
}

struct GamRule {
    jacobian: Vec<[[f64; 3]; 2]>,
    dmean: [f64; 2],
}

impl Backward for GamRule {
    fn backward(&self, _: &[&Tensor], _: &Tensor, g: &[f64], _: &[bool]) -> Vec<Option<Vec<f64>>> {
        let hw = self.jacobian.len();
        let mut grad = vec![0.0; 3 * hw];
        for (p, jac) in self.jacobian.iter().enumerate() {
            for c in 0..3 {
                grad[c * hw + p] = g[0] * (self.dmean[0] * jac[0][c] + self.dmean[1] * jac[1][c]);
            }
        }
        vec![Some(grad)]
    }
}

impl Graph {
    /// Mean squared difference between a node and a fixed target.
    pub fn mse_loss(&mut self, output: Var, target: &Tensor) -> Result<Var> {
        let t = self.constant(target.clone());
        let d = self.sub(output, t)?;
        let sq = self.square(d)?;
        self.mean(sq)
    }

    /// Edge-pixel BCE of a `[1, k², H, W]` attention node.
    pub fn edge_loss(&mut self, attention: Var, affinity: &AffinityMap) -> Result<Var> {
        let t = self.value(attention)?;
        let [_, k2, h, w] = t.dims4()?;
        check_affinity_shape(affinity.k, h, w, affinity)?;
        if k2 != affinity.k * affinity.k {
            return Err(Error::Shape(format!("{k2} attention channels for k = {}", affinity.k)));
        }
        let (sum, count) = bce_sum(t.data(), affinity);
        let value = if count == 0 { 0.0 } else { sum / count as f64 };
        self.apply(
            &[attention],
            Tensor::scalar(value),
            EdgeBceRule {
                affinity: affinity.clone(),
            },
        )
    }

    /// Group-style loss of a `[1, 3, H, W]` sRGB node against the mean a*/b*
    /// of the other targets in its group.
    pub fn gam_loss(&mut self, output: Var, others: &[[f64; 2]], lambda: f64) -> Result<Var> {
        let t = self.value(output)?;
        let [b, c, h, w] = t.dims4()?;
        if b != 1 || c != 3 {
            return Err(Error::Shape(format!("group loss needs [1, 3, H, W], got {:?}", t.shape())));
        }
        let hw = h * w;
        let x = t.data();
        let mut sum = [0.0; 2];
        let mut jacobian = Vec::with_capacity(hw);
        for p in 0..hw {
            let (ab, jac) = ab_with_jacobian([x[p], x[hw + p], x[2 * hw + p]]);
            sum[0] += ab[0];
            sum[1] += ab[1];
            jacobian.push(jac);
        }
        let mu = sum.map(|s| s / hw as f64);
        let n = (others.len() + 1) as f64;
        // d/dμ of λ·Var over {μ} ∪ others, divided by the pixel count.
        let mut dmean = [0.0; 2];
        for c in 0..2 {
            let mean = (mu[c] + others.iter().map(|o| o[c]).sum::<f64>()) / n;
            dmean[c] = lambda * 2.0 * (mu[c] - mean) / n / hw as f64;
        }
        let value = gam_value(mu, others, lambda);
        self.apply(&[output], Tensor::scalar(value), GamRule { jacobian, dmean })
    }
}

/// Graph handles of one photo's contribution.
#[derive(Debug, Clone, Copy)]
pub struct PhotoLossVars<'a> {
    pub output: Var,
    pub attention: Var,
    pub target: &'a Image,
    pub affinity: Option<&'a AffinityMap>,
    pub group_others: &'a [GroupStats],
}

/// Differentiable counterpart of [`total_loss`]: returns the total node and
/// the per-term breakdown.
pub fn total_loss_graph(
    g: &mut Graph,
    photos: &[PhotoLossVars<'_>],
    luts: &[Var],
    w: &LossWeights,
) -> Result<(Var, LossBreakdown)> {
    let mut terms = Vec::new();
    let mut breakdown = LossBreakdown::default();
    let n = photos.len().max(1) as f64;
    let mut push = |g: &mut Graph, v: Var, slot: &mut f64, scale: f64| -> Result<()> {
        let v = g.scale(v, scale)?;
        *slot += g.value(v)?.item();
        terms.push(v);
        Ok(())
    };
    for p in photos {
        if w.mse {
            let v = g.mse_loss(p.output, &p.target.to_tensor())?;
            push(g, v, &mut breakdown.mse, 1.0 / n)?;
        }
        if w.edge {
            if let Some(aff) = p.affinity {
                let v = g.edge_loss(p.attention, aff)?;
                push(g, v, &mut breakdown.edge, 1.0 / n)?;
            }
        }
        if w.gam {
            let means: Vec<[f64; 2]> = p.group_others.iter().map(GroupStats::means).collect();
            let v = g.gam_loss(p.output, &means, w.lambda_gam)?;
            push(g, v, &mut breakdown.gam, 1.0 / n)?;
        }
    }
    for &lut in luts {
        if w.smooth {
            let v = g.smooth_reg(lut)?;
            push(g, v, &mut breakdown.smooth, w.lambda_smooth)?;
        }
        if w.mono {
            let v = g.mono_reg(lut)?;
            push(g, v, &mut breakdown.mono, w.lambda_mono)?;
        }
    }
    let total = if terms.is_empty() {
        g.constant(Tensor::scalar(0.0))
    } else {
        g.add_all(&terms)?
    };
    Ok((total, breakdown))
}

#[cfg(test)]
pub(crate) mod oracle {
    use super::*;

    /// Brute-force per-pixel class comparison.
    pub fn affinity(mask: &Mask, k: usize) -> (Vec<f64>, Vec<bool>) {
        let (w, h) = (mask.width() as i64, mask.height() as i64);
        let r = (k / 2) as i64;
        let fg = |x: i64, y: i64| (0..w).contains(&x) && (0..h).contains(&y) && mask.values()[(y * w + x) as usize] > 0.5;
        let mut aff = vec![0.0; k * k * (w * h) as usize];
        let mut edge = vec![false; (w * h) as usize];
        for y in 0..h {
            for x in 0..w {
                let mut seen = [false; 2];
                for dy in -r..=r {
                    for dx in -r..=r {
                        let other = fg(x + dx, y + dy);
                        seen[other as usize] = true;
                        let j = ((dy + r) * k as i64 + dx + r) as usize;
                        aff[j * (w * h) as usize + (y * w + x) as usize] = (other == fg(x, y)) as u8 as f64;
                    }
                }
                edge[(y * w + x) as usize] = seen[0] && seen[1];
            }
        }
        (aff, edge)
    }

    pub fn bce(a: f64, y: f64) -> f64 {
        let a = a.clamp(1e-6, 1.0 - 1e-6);
        -(y * a.ln() + (1.0 - y) * (1.0 - a).ln())
    }

    /// Two-pass population variance.
    pub fn variance(xs: &[f64]) -> f64 {
        let mut mean = 0.0;
        for x in xs {
            mean += x;
        }
        mean /= xs.len() as f64;
        let mut acc = 0.0;
        for x in xs {
            acc += (x - mean) * (x - mean);
        }
        acc / xs.len() as f64
    }
}
