//! Trainable 3D lookup tables.
//!
//! A [`Lut3D`] stores `M³` RGB output triples with the red index varying
//! fastest (the `.cube` ordering): node `(r, g, b)` lives at
//! `((b·M + g)·M + r)·3`. Inputs are located in the lattice by
//! `s = p·(M−1)`, with the top cell reused at `p = 1` so lookups are exact at
//! every node.

mod diff;
mod io;
pub(crate) mod reg;

pub use diff::{LutFusionInputs, LUT_FUSION_MIN_DIM};
pub use io::{read_bank, read_bank_bytes, read_cube, write_bank, write_bank_bytes, write_cube};
pub use reg::{mono_reg, mono_reg_lut, smooth_reg, smooth_reg_lut};

use crate::colorspace::{ColorSpace, Image};
use crate::context::{ImageWeights, PixelWeights};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Lut3D {
    dim: usize,
    lattice: Vec<f64>,
}

impl Lut3D {
    pub fn from_lattice(dim: usize, lattice: Vec<f64>) -> Result<Self> {
        if dim < 2 {
            return Err(Error::Invalid(format!("LUT needs at least 2 bins, got {dim}")));
        }
        if lattice.len() != dim * dim * dim * 3 {
            return Err(Error::Shape(format!(
                "{dim}-bin LUT needs {} values, got {}",
                dim * dim * dim * 3,
                lattice.len()
            )));
        }
        if let Some(i) = lattice.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Lut3D { dim, lattice })
    }

    /// The lattice mapping every node to its own normalized coordinates.
    pub fn identity(dim: usize) -> Result<Self> {
        Self::from_fn(dim, |r, g, b| [r, g, b])
    }

    pub fn constant(dim: usize, rgb: [f64; 3]) -> Result<Self> {
        Self::from_fn(dim, |_, _, _| rgb)
    }

    /// Samples `f` at every node's normalized coordinates.
    pub fn from_fn(dim: usize, mut f: impl FnMut(f64, f64, f64) -> [f64; 3]) -> Result<Self> {
        if dim < 2 {
            return Err(Error::Invalid(format!("LUT needs at least 2 bins, got {dim}")));
        }
        let step = 1.0 / (dim - 1) as f64;
        let mut lattice = Vec::with_capacity(dim * dim * dim * 3);
        for b in 0..dim {
            for g in 0..dim {
                for r in 0..dim {
                    lattice.extend(f(r as f64 * step, g as f64 * step, b as f64 * step));
                }
            }
        }
        Self::from_lattice(dim, lattice)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lattice(&self) -> &[f64] {
        &self.lattice
    }

    pub fn lattice_mut(&mut self) -> &mut [f64] {
        &mut self.lattice
    }

    /// Number of scalar entries, `M³·3`.
    pub fn param_count(&self) -> usize {
        self.lattice.len()
    }

    pub fn node_offset(&self, r: usize, g: usize, b: usize) -> usize {
        ((b * self.dim + g) * self.dim + r) * 3
    }

    pub fn node(&self, r: usize, g: usize, b: usize) -> [f64; 3] {
        let i = self.node_offset(r, g, b);
        [self.lattice[i], self.lattice[i + 1], self.lattice[i + 2]]
    }

    pub fn set_node(&mut self, r: usize, g: usize, b: usize, rgb: [f64; 3]) {
        let i = self.node_offset(r, g, b);
        self.lattice[i..i + 3].copy_from_slice(&rgb);
    }

    /// Trilinear interpolation of one RGB triple in `[0, 1]`.
    pub fn apply(&self, rgb: [f64; 3]) -> [f64; 3] {
        let cell = Cell::locate(rgb, self.dim);
        let mut out = [0.0; 3];
        for (off, w) in cell.corners(self.dim) {
            for c in 0..3 {
                out[c] += w * self.lattice[off + c];
            }
        }
        out
    }

    /// `[M, M, M, 3]` tensor in lattice order.
    pub fn to_tensor(&self) -> Tensor {
        let m = self.dim;
        Tensor::new(vec![m, m, m, 3], self.lattice.clone()).expect("lattice length")
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        match t.shape() {
            &[m, m1, m2, 3] if m == m1 && m == m2 => Self::from_lattice(m, t.data().to_vec()),
            s => Err(Error::Shape(format!("expected an [M, M, M, 3] lattice, got {s:?}"))),
        }
    }
}

/// Identity lattice with `dim` bins per channel.
pub fn identity_lut(dim: usize) -> Result<Lut3D> {
    Lut3D::identity(dim)
}

/// The 8 corner weights of a lattice cell.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Cell {
    pub base: [usize; 3],
    pub frac: [f64; 3],
}

impl Cell {
    pub fn locate(rgb: [f64; 3], dim: usize) -> Cell {
        let top = (dim - 2) as f64;
        let scale = (dim - 1) as f64;
        let mut base = [0; 3];
        let mut frac = [0.0; 3];
        for c in 0..3 {
            let s = rgb[c] * scale;
            // Saturating cast: floor for s >= 0, and 0 below.
            let i = (s as usize as f64).min(top);
            base[c] = i as usize;
            frac[c] = s - i;
        }
        Cell { base, frac }
    }

    /// `(lattice offset, weight)` for each corner, `r` varying fastest.
    pub fn corners(&self, dim: usize) -> [(usize, f64); 8] {
        let [r0, g0, b0] = self.base;
        let [fr, fg, fb] = self.frac;
        let (wr, wg, wb) = ([1.0 - fr, fr], [1.0 - fg, fg], [1.0 - fb, fb]);
        let mut out = [(0, 0.0); 8];
        for db in 0..2 {
            for dg in 0..2 {
                let row = ((b0 + db) * dim + g0 + dg) * dim + r0;
                let wgb = wg[dg] * wb[db];
                for dr in 0..2 {
                    out[db * 4 + dg * 2 + dr] = ((row + dr) * 3, wr[dr] * wgb);
                }
            }
        }
        out
    }
}

/// `N ≥ 1` LUTs sharing one bin count.
#[derive(Debug, Clone, PartialEq)]
pub struct LutBank {
    luts: Vec<Lut3D>,
}

impl LutBank {
    pub fn new(luts: Vec<Lut3D>) -> Result<Self> {
        let first = luts
            .first()
            .ok_or_else(|| Error::Invalid("a LUT bank needs at least one LUT".into()))?;
        if let Some(bad) = luts.iter().find(|l| l.dim != first.dim) {
            return Err(Error::Shape(format!(
                "LUT bank mixes {} and {} bins",
                first.dim, bad.dim
            )));
        }
        Ok(LutBank { luts })
    }

    /// First LUT identity, the rest zero: a bank that starts as a no-op
    /// under weights `(1, 0, …, 0)`.
    pub fn identity_init(n: usize, dim: usize) -> Result<Self> {
        let mut luts = vec![Lut3D::identity(dim)?];
        for _ in 1..n {
            luts.push(Lut3D::constant(dim, [0.0; 3])?);
        }
        Self::new(luts)
    }

    pub fn len(&self) -> usize {
        self.luts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.luts.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.luts[0].dim
    }

    pub fn luts(&self) -> &[Lut3D] {
        &self.luts
    }

    pub fn luts_mut(&mut self) -> &mut [Lut3D] {
        &mut self.luts
    }

    /// Collapses the bank into one LUT with fixed per-LUT weights.
    pub fn collapse(&self, weights: &[f64]) -> Result<Lut3D> {
        if weights.len() != self.luts.len() {
            return Err(Error::Shape(format!(
                "{} weights for a bank of {} LUTs",
                weights.len(),
                self.luts.len()
            )));
        }
        let mut lattice = vec![0.0; self.luts[0].lattice.len()];
        for (lut, &w) in self.luts.iter().zip(weights) {
            for (o, v) in lattice.iter_mut().zip(&lut.lattice) {
                *o += w * v;
            }
        }
        Lut3D::from_lattice(self.dim(), lattice)
    }
}

fn expect_lut_input(img: &Image) -> Result<()> {
    img.expect_space(ColorSpace::Srgb)?;
    img.check_finite()?;
    img.check_unit_range()
}

/// Applies one LUT to every pixel. Samples must already lie in `[0, 1]`.
pub fn lookup(lut: &Lut3D, img: &Image) -> Result<Image> {
    expect_lut_input(img)?;
    let mut data = Vec::with_capacity(img.data().len());
    for p in img.pixels() {
        let out = lut.apply([p[0] as f64, p[1] as f64, p[2] as f64]);
        data.extend(out.map(|v| v.clamp(0.0, 1.0) as f32));
    }
    Image::new(img.width(), img.height(), ColorSpace::Srgb, data)
}

/// Emission path of the weighted fusion
/// `O(h, w) = Σₙ wIₙ · wPₙ(h, w) · φₙ(I(h, w))`, clamped to `[0, 1]`.
pub fn fused_transform(
    bank: &LutBank,
    img: &Image,
    image_weights: &ImageWeights,
    pixel_weights: &PixelWeights,
) -> Result<Image> {
    let mut out = vec![0.0f32; img.data().len()];
    fuse_into(bank, img, image_weights, pixel_weights, &mut out)?;
    for v in &mut out {
        *v = v.clamp(0.0, 1.0);
    }
    Image::new(img.width(), img.height(), ColorSpace::Srgb, out)
}

/// Unclamped fusion into `out` (interleaved RGB, same length as `img`).
pub fn fuse_into(
    bank: &LutBank,
    img: &Image,
    image_weights: &ImageWeights,
    pixel_weights: &PixelWeights,
    out: &mut [f32],
) -> Result<()> {
    expect_lut_input(img)?;
    let n = bank.len();
    let wi = image_weights.values();
    if wi.len() != n || pixel_weights.count() != n {
        return Err(Error::Shape(format!(
            "bank has {n} LUTs, weights have {} (image) and {} (pixel)",
            wi.len(),
            pixel_weights.count()
        )));
    }
    if pixel_weights.height() != img.height() || pixel_weights.width() != img.width() {
        return Err(Error::Shape(format!(
            "pixel weights are {}x{}, image is {}x{}",
            pixel_weights.width(),
            pixel_weights.height(),
            img.width(),
            img.height()
        )));
    }
    if out.len() != img.data().len() {
        return Err(Error::Shape("output buffer length".into()));
    }
    let dim = bank.dim();
    let hw = img.pixel_count();
    let wp = pixel_weights.values();
    let lattices: Vec<&[f64]> = bank.luts.iter().map(|l| l.lattice.as_slice()).collect();
    let mut coef = vec![0.0f64; n];
    for (p, (src, dst)) in img.data().chunks_exact(3).zip(out.chunks_exact_mut(3)).enumerate() {
        for (k, c) in coef.iter_mut().enumerate() {
            *c = wi[k] * wp[k * hw + p];
        }
        let corners = Cell::locate([src[0] as f64, src[1] as f64, src[2] as f64], dim).corners(dim);
        let mut acc = [0.0f64; 3];
        for (lat, &c) in lattices.iter().zip(&coef) {
            let mut v = [0.0f64; 3];
            for &(off, w) in &corners {
                let node = &lat[off..off + 3];
                v[0] += w * node[0];
                v[1] += w * node[1];
                v[2] += w * node[2];
            }
            acc[0] += c * v[0];
            acc[1] += c * v[1];
            acc[2] += c * v[2];
        }
        dst[0] = acc[0] as f32;
        dst[1] = acc[1] as f32;
        dst[2] = acc[2] as f32;
    }
    Ok(())
}
