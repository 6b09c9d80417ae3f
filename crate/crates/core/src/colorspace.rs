//! sRGB, linear RGB, CIE XYZ (D65, 2° observer) and CIE 1976 L*a*b*.
//!
//! Per-sample conversions run in `f64`; [`Image`] stores `f32` samples.

use std::fmt;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Color space tag carried by an [`Image`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ColorSpace {
    Srgb,
    Linear,
    Lab,
}

impl ColorSpace {
    pub fn name(self) -> &'static str {
        match self {
            ColorSpace::Srgb => "sRGB",
            ColorSpace::Linear => "linear",
            ColorSpace::Lab => "Lab",
        }
    }
}

impl fmt::Display for ColorSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Row-major, interleaved 3-channel image.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    space: ColorSpace,
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, space: ColorSpace, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::Shape(format!(
                "{width}x{height}x3 image needs {} samples, got {}",
                width * height * 3,
                data.len()
            )));
        }
        let img = Image {
            width,
            height,
            space,
            data,
        };
        img.check_finite()?;
        if space != ColorSpace::Lab {
            img.check_unit_range()?;
        }
        Ok(img)
    }

    /// An image whose samples may fall outside `[0, 1]`, e.g. an unclamped
    /// network output. Only finiteness is checked.
    pub fn new_unclamped(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::Shape(format!(
                "{width}x{height}x3 image needs {} samples, got {}",
                width * height * 3,
                data.len()
            )));
        }
        let img = Image {
            width,
            height,
            space: ColorSpace::Srgb,
            data,
        };
        img.check_finite()?;
        Ok(img)
    }

    pub fn filled(width: usize, height: usize, space: ColorSpace, value: [f32; 3]) -> Self {
        let data = (0..width * height).flat_map(|_| value).collect();
        Image {
            width,
            height,
            space,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn space(&self) -> ColorSpace {
        self.space
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn pixels(&self) -> impl Iterator<Item = [f32; 3]> + '_ {
        self.data.chunks_exact(3).map(|p| [p[0], p[1], p[2]])
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub(crate) fn expect_space(&self, expected: ColorSpace) -> Result<()> {
        if self.space != expected {
            return Err(Error::WrongColorSpace {
                expected: expected.name(),
                actual: self.space.name(),
            });
        }
        Ok(())
    }

    pub(crate) fn check_finite(&self) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(Error::NonFinite(i)),
            None => Ok(()),
        }
    }

    pub(crate) fn check_unit_range(&self) -> Result<()> {
        match self.data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            Some(index) => Err(Error::OutOfRange {
                index,
                value: self.data[index],
            }),
            None => Ok(()),
        }
    }

    /// Clamps every sample into `[0, 1]`.
    pub fn clamped(&self) -> Image {
        Image {
            data: self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
            ..self.clone()
        }
    }

    /// Rounds every sample to the nearest 8-bit code (half up) and back.
    pub fn quantized_8bit(&self) -> Image {
        let data = self
            .data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() / 255.0)
            .collect();
        Image {
            data,
            ..self.clone()
        }
    }

    /// Planar `[1, 3, H, W]` tensor.
    pub fn to_tensor(&self) -> Tensor {
        let hw = self.pixel_count();
        let mut out = vec![0.0f64; 3 * hw];
        for (i, p) in self.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[c * hw + i] = p[c] as f64;
            }
        }
        Tensor::new(vec![1, 3, self.height, self.width], out).expect("shape is consistent")
    }

    /// Inverse of [`Image::to_tensor`]; samples are not range-checked.
    pub fn from_tensor(t: &Tensor) -> Result<Image> {
        let shape = t.shape();
        if shape.len() != 4 || shape[0] != 1 || shape[1] != 3 {
            return Err(Error::Shape(format!("expected [1, 3, H, W], got {shape:?}")));
        }
        let (height, width) = (shape[2], shape[3]);
        let hw = height * width;
        let src = t.data();
        let mut data = vec![0.0f32; 3 * hw];
        for i in 0..hw {
            for c in 0..3 {
                data[i * 3 + c] = src[c * hw + i] as f32;
            }
        }
        Image::new_unclamped(width, height, data)
    }

    /// Crops the `[x0, x0 + w) × [y0, y0 + h)` window.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Image {
        let mut data = Vec::with_capacity(w * h * 3);
        for y in y0..y0 + h {
            let row = (y * self.width + x0) * 3;
            data.extend_from_slice(&self.data[row..row + w * 3]);
        }
        Image {
            width: w,
            height: h,
            space: self.space,
            data,
        }
    }
}

/// sRGB → XYZ, D65.
const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
];

// The reference white is the image of RGB (1, 1, 1), so white maps to a = b = 0 exactly.
const WHITE: [f64; 3] = [
    RGB_TO_XYZ[0][0] + RGB_TO_XYZ[0][1] + RGB_TO_XYZ[0][2],
    RGB_TO_XYZ[1][0] + RGB_TO_XYZ[1][1] + RGB_TO_XYZ[1][2],
    RGB_TO_XYZ[2][0] + RGB_TO_XYZ[2][1] + RGB_TO_XYZ[2][2],
];

const EPSILON: f64 = 216.0 / 24389.0;
const KAPPA: f64 = 24389.0 / 27.0;

/// sRGB electro-optical transfer function. Extends linearly below zero.
pub fn srgb_to_linear(v: f64) -> f64 {
    if v <= 0.04045 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

fn srgb_to_linear_deriv(v: f64) -> f64 {
    if v <= 0.04045 {
        1.0 / 12.92
    } else {
        2.4 / 1.055 * ((v + 0.055) / 1.055).powf(1.4)
    }
}

pub fn linear_to_srgb(v: f64) -> f64 {
    if v <= 0.0031308 {
        v * 12.92
    } else {
        1.055 * v.powf(1.0 / 2.4) - 0.055
    }
}

fn lab_f(t: f64) -> f64 {
    if t > EPSILON {
        t.cbrt()
    } else {
        (KAPPA * t + 16.0) / 116.0
    }
}

fn lab_f_deriv(t: f64) -> f64 {
    if t > EPSILON {
        1.0 / (3.0 * t.cbrt().powi(2))
    } else {
        KAPPA / 116.0
    }
}

fn lab_f_inv(f: f64) -> f64 {
    let t = f * f * f;
    if t > EPSILON {
        t
    } else {
        (116.0 * f - 16.0) / KAPPA
    }
}

fn invert3(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let inv = 1.0 / det;
    [
        [
            (m[1][1] * m[2][2] - m[1][2] * m[2][1]) * inv,
            (m[0][2] * m[2][1] - m[0][1] * m[2][2]) * inv,
            (m[0][1] * m[1][2] - m[0][2] * m[1][1]) * inv,
        ],
        [
            (m[1][2] * m[2][0] - m[1][0] * m[2][2]) * inv,
            (m[0][0] * m[2][2] - m[0][2] * m[2][0]) * inv,
            (m[0][2] * m[1][0] - m[0][0] * m[1][2]) * inv,
        ],
        [
            (m[1][0] * m[2][1] - m[1][1] * m[2][0]) * inv,
            (m[0][1] * m[2][0] - m[0][0] * m[2][1]) * inv,
            (m[0][0] * m[1][1] - m[0][1] * m[1][0]) * inv,
        ],
    ]
}

/// Single sRGB triple to L*a*b*. Inputs outside `[0, 1]` follow the
/// analytic extension of each stage, which keeps the map smooth for
/// unclamped training outputs.
pub fn rgb_to_lab(rgb: [f64; 3]) -> [f64; 3] {
    let lin = rgb.map(srgb_to_linear);
    let mut f = [0.0; 3];
    for (i, row) in RGB_TO_XYZ.iter().enumerate() {
        let xyz = row[0] * lin[0] + row[1] * lin[1] + row[2] * lin[2];
        f[i] = lab_f(xyz / WHITE[i]);
    }
    [
        116.0 * f[1] - 16.0,
        500.0 * (f[0] - f[1]),
        200.0 * (f[1] - f[2]),
    ]
}

/// Single L*a*b* triple to sRGB, unclamped.
pub fn lab_to_rgb(lab: [f64; 3]) -> [f64; 3] {
    let fy = (lab[0] + 16.0) / 116.0;
    let fx = fy + lab[1] / 500.0;
    let fz = fy - lab[2] / 200.0;
    let xyz = [
        lab_f_inv(fx) * WHITE[0],
        lab_f_inv(fy) * WHITE[1],
        lab_f_inv(fz) * WHITE[2],
    ];
    let m = invert3(&RGB_TO_XYZ);
    let mut out = [0.0; 3];
    for (o, row) in out.iter_mut().zip(m.iter()) {
        *o = linear_to_srgb(row[0] * xyz[0] + row[1] * xyz[1] + row[2] * xyz[2]);
    }
    out
}

/// The a* and b* values of an sRGB triple together with their gradients
/// with respect to the three input channels.
pub(crate) fn ab_with_jacobian(rgb: [f64; 3]) -> ([f64; 2], [[f64; 3]; 2]) {
    let lin = rgb.map(srgb_to_linear);
    let dlin = rgb.map(srgb_to_linear_deriv);
    let mut f = [0.0; 3];
    let mut df = [[0.0; 3]; 3];
    for (i, row) in RGB_TO_XYZ.iter().enumerate() {
        let t = (row[0] * lin[0] + row[1] * lin[1] + row[2] * lin[2]) / WHITE[i];
        f[i] = lab_f(t);
        let ft = lab_f_deriv(t) / WHITE[i];
        for c in 0..3 {
            df[i][c] = ft * row[c] * dlin[c];
        }
    }
    let mut jac = [[0.0; 3]; 2];
    for c in 0..3 {
        jac[0][c] = 500.0 * (df[0][c] - df[1][c]);
        jac[1][c] = 200.0 * (df[1][c] - df[2][c]);
    }
    ([500.0 * (f[0] - f[1]), 200.0 * (f[1] - f[2])], jac)
}

fn map_pixels(img: &Image, space: ColorSpace, f: impl Fn([f64; 3]) -> [f64; 3]) -> Image {
    let mut data = Vec::with_capacity(img.data.len());
    for p in img.data.chunks_exact(3) {
        let out = f([p[0] as f64, p[1] as f64, p[2] as f64]);
        data.extend(out.iter().map(|&v| v as f32));
    }
    Image {
        width: img.width,
        height: img.height,
        space,
        data,
    }
}

pub fn srgb_to_lab(img: &Image) -> Result<Image> {
    img.expect_space(ColorSpace::Srgb)?;
    img.check_finite()?;
    Ok(map_pixels(img, ColorSpace::Lab, rgb_to_lab))
}

/// Inverse of [`srgb_to_lab`]; out-of-gamut results are clamped to `[0, 1]`.
pub fn lab_to_srgb(img: &Image) -> Result<Image> {
    img.expect_space(ColorSpace::Lab)?;
    img.check_finite()?;
    Ok(map_pixels(img, ColorSpace::Srgb, |lab| {
        lab_to_rgb(lab).map(|v| v.clamp(0.0, 1.0))
    }))
}

pub fn srgb_to_linear_image(img: &Image) -> Result<Image> {
    img.expect_space(ColorSpace::Srgb)?;
    Ok(map_pixels(img, ColorSpace::Linear, |p| p.map(srgb_to_linear)))
}

pub fn linear_to_srgb_image(img: &Image) -> Result<Image> {
    img.expect_space(ColorSpace::Linear)?;
    Ok(map_pixels(img, ColorSpace::Srgb, |p| {
        p.map(|v| linear_to_srgb(v).clamp(0.0, 1.0))
    }))
}

/// Mean a* and b* over all pixels of an sRGB image, accumulated in `f64`.
pub fn mean_ab(img: &Image) -> [f64; 2] {
    let mut acc = [0.0f64; 2];
    for p in img.pixels() {
        let lab = rgb_to_lab([p[0] as f64, p[1] as f64, p[2] as f64]);
        acc[0] += lab[1];
        acc[1] += lab[2];
    }
    let n = img.pixel_count().max(1) as f64;
    [acc[0] / n, acc[1] / n]
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Straight-line transcription of the CIE formulas with published
    /// D65 constants, kept independent of the module's code path.
    pub(crate) fn oracle_lab(r: f64, g: f64, b: f64) -> [f64; 3] {
        fn lin(c: f64) -> f64 {
            if c > 0.04045 {
                ((c + 0.055) / 1.055).powf(2.4)
            } else {
                c / 12.92
            }
        }
        let (r, g, b) = (lin(r), lin(g), lin(b));
        let x = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b;
        let y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
        let z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b;
        fn f(t: f64) -> f64 {
            let e = 0.008856451679035631;
            let k = 903.2962962962963;
            if t > e {
                t.powf(1.0 / 3.0)
            } else {
                (k * t + 16.0) / 116.0
            }
        }
        let (fx, fy, fz) = (f(x / 0.95047), f(y / 1.0), f(z / 1.08883));
        [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
    }

    fn px(rgb: [f32; 3]) -> Image {
        Image::filled(1, 1, ColorSpace::Srgb, rgb)
    }

    #[test]
    fn white_and_black() {
        let w = srgb_to_lab(&px([1.0, 1.0, 1.0])).unwrap().pixel(0, 0);
        assert!((w[0] - 100.0).abs() < 1e-3 && w[1].abs() < 1e-3 && w[2].abs() < 1e-3);
        let k = srgb_to_lab(&px([0.0, 0.0, 0.0])).unwrap().pixel(0, 0);
        assert!(k.iter().all(|v| v.abs() < 1e-6), "{k:?}");
    }

    #[test]
    fn matches_oracle_on_reference_triple() {
        let got = rgb_to_lab([0.5, 0.25, 0.1]);
        let want = oracle_lab(0.5, 0.25, 0.1);
        for c in 0..3 {
            assert!((got[c] - want[c]).abs() < 1e-3, "{got:?} vs {want:?}");
        }
    }

    #[test]
    fn lab_white_to_srgb() {
        let lab = Image::filled(1, 1, ColorSpace::Lab, [100.0, 0.0, 0.0]);
        let rgb = lab_to_srgb(&lab).unwrap().pixel(0, 0);
        assert!(rgb.iter().all(|v| (v - 1.0).abs() < 1e-3), "{rgb:?}");
    }

    #[test]
    fn out_of_gamut_lab_is_clamped() {
        let lab = Image::filled(1, 1, ColorSpace::Lab, [50.0, 80.0, -80.0]);
        let rgb = lab_to_srgb(&lab).unwrap().pixel(0, 0);
        // Oracle: invert the transcription above by hand.
        let fy: f64 = (50.0 + 16.0) / 116.0;
        let (fx, fz) = (fy + 80.0 / 500.0, fy + 80.0 / 200.0);
        let inv = |f: f64| {
            if f.powi(3) > 0.008856451679035631 {
                f.powi(3)
            } else {
                (116.0 * f - 16.0) / 903.2962962962963
            }
        };
        let (x, y, z) = (inv(fx) * 0.95047, inv(fy), inv(fz) * 1.08883);
        let lin = [
            3.2404542 * x - 1.5371385 * y - 0.4985314 * z,
            -0.9692660 * x + 1.8760108 * y + 0.0415560 * z,
            0.0556434 * x - 0.2040259 * y + 1.0572252 * z,
        ];
        let enc = |v: f64| {
            let s = if v > 0.0031308 {
                1.055 * v.powf(1.0 / 2.4) - 0.055
            } else {
                12.92 * v
            };
            s.clamp(0.0, 1.0)
        };
        for c in 0..3 {
            assert!((rgb[c] as f64 - enc(lin[c])).abs() < 1e-3, "{rgb:?}");
        }
        // Linear blue lands above 1 and is clamped.
        assert_eq!(rgb[2], 1.0);
    }

    #[test]
    fn wrong_space_is_rejected() {
        let lab = Image::filled(1, 1, ColorSpace::Lab, [50.0, 0.0, 0.0]);
        assert!(matches!(srgb_to_lab(&lab), Err(Error::WrongColorSpace { .. })));
        assert!(matches!(lab_to_srgb(&px([0.5; 3])), Err(Error::WrongColorSpace { .. })));
    }

    #[test]
    fn non_finite_is_rejected() {
        let mut img = px([0.5; 3]);
        img.data_mut()[1] = f32::NAN;
        assert!(matches!(srgb_to_lab(&img), Err(Error::NonFinite(1))));
    }

    #[test]
    fn gray_ramp_is_monotone_in_lightness() {
        let mut prev = -1.0;
        for i in 0..=255 {
            let g = i as f64 / 255.0;
            let l = rgb_to_lab([g, g, g])[0];
            assert!(l > prev, "L not increasing at {i}");
            prev = l;
        }
    }

    #[test]
    fn constant_image_stays_constant() {
        let img = Image::filled(5, 4, ColorSpace::Srgb, [0.2, 0.6, 0.9]);
        let lab = srgb_to_lab(&img).unwrap();
        let first = lab.pixel(0, 0);
        assert!(lab.pixels().all(|p| p == first));
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let rgb = [0.3, 0.55, 0.8];
        let (_, jac) = ab_with_jacobian(rgb);
        let h = 1e-6;
        for c in 0..3 {
            let mut hi = rgb;
            let mut lo = rgb;
            hi[c] += h;
            lo[c] -= h;
            let (a, b) = (rgb_to_lab(hi), rgb_to_lab(lo));
            for k in 0..2 {
                let fd = (a[k + 1] - b[k + 1]) / (2.0 * h);
                assert!((fd - jac[k][c]).abs() < 1e-5 * fd.abs().max(1.0));
            }
        }
    }

    proptest! {
        #[test]
        fn round_trip_is_identity(r in 0.0f32..=1.0, g in 0.0f32..=1.0, b in 0.0f32..=1.0) {
            let back = lab_to_srgb(&srgb_to_lab(&px([r, g, b])).unwrap()).unwrap().pixel(0, 0);
            for (x, y) in back.iter().zip([r, g, b]) {
                prop_assert!((x - y).abs() < 1e-4, "{back:?} vs {:?}", [r, g, b]);
            }
        }

        #[test]
        fn agrees_with_oracle(r in 0.0f64..=1.0, g in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let got = rgb_to_lab([r, g, b]);
            let want = oracle_lab(r, g, b);
            for c in 0..3 {
                prop_assert!((got[c] - want[c]).abs() < 1e-3);
            }
        }
    }
}
