//! Differentiable LUT operations for the training graph.

use super::reg::{mono_value_grad, smooth_value_grad};
use super::Cell;
use crate::colorspace::Image;
use crate::error::{Error, Result};
use crate::tensor::{Backward, Graph, Tensor, Var};

/// Operands of [`Graph::lut_fusion`].
pub struct LutFusionInputs<'a> {
    /// `[M, M, M, 3]` lattices.
    pub luts: &'a [Var],
    /// Input photo; treated as data, never differentiated.
    pub image: &'a Image,
    /// `N` image-adaptive weights, any shape.
    pub image_weights: Var,
    /// `N × H × W` pixel-adaptive weights, e.g. `[1, N, H, W]`.
    pub pixel_weights: Var,
}

pub const LUT_FUSION_MIN_DIM: usize = 2;

struct FusionRule {
    n: usize,
    hw: usize,
    corners: Vec<[(usize, f64); 8]>,
    /// `φₙ(I)` laid out `[n][c][p]`.
    phi: Vec<f64>,
}

impl Backward for FusionRule {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &[f64], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let (n, hw) = (self.n, self.hw);
        let wi = inputs[n].data();
        let wp = inputs[n + 1].data();
        let mut out: Vec<Option<Vec<f64>>> = Vec::with_capacity(n + 2);
        for k in 0..n {
            if !needs[k] {
                out.push(None);
                continue;
            }
            let mut gl = vec![0.0; inputs[k].numel()];
            for (p, corners) in self.corners.iter().enumerate() {
                let coef = wi[k] * wp[k * hw + p];
                if coef == 0.0 {
                    continue;
                }
                let go = [g[p] * coef, g[hw + p] * coef, g[2 * hw + p] * coef];
                for &(off, w) in corners {
                    gl[off] += w * go[0];
                    gl[off + 1] += w * go[1];
                    gl[off + 2] += w * go[2];
                }
            }
            out.push(Some(gl));
        }
        // ∂O/∂wPₙ(p) = wIₙ · ⟨g(p), φₙ(p)⟩ and ∂O/∂wIₙ = Σₚ wPₙ(p) · ⟨g(p), φₙ(p)⟩.
        let mut gwi = vec![0.0; n];
        let mut gwp = vec![0.0; n * hw];
        for k in 0..n {
            let phi = &self.phi[k * 3 * hw..(k + 1) * 3 * hw];
            for p in 0..hw {
                let dot = g[p] * phi[p] + g[hw + p] * phi[hw + p] + g[2 * hw + p] * phi[2 * hw + p];
                gwi[k] += wp[k * hw + p] * dot;
                gwp[k * hw + p] = wi[k] * dot;
            }
        }
        out.push(needs[n].then_some(gwi));
        out.push(needs[n + 1].then_some(gwp));
        out
    }
}

struct RegRule {
    dim: usize,
    smooth: bool,
}

impl Backward for RegRule {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &[f64], _: &[bool]) -> Vec<Option<Vec<f64>>> {
        let lat = inputs[0].data();
        let mut grad = vec![0.0; lat.len()];
        if self.smooth {
            smooth_value_grad(lat, self.dim, Some(&mut grad));
        } else {
            mono_value_grad(lat, self.dim, Some(&mut grad));
        }
        grad.iter_mut().for_each(|v| *v *= g[0]);
        vec![Some(grad)]
    }
}

fn lattice_dim(t: &Tensor) -> Result<usize> {
    match t.shape() {
        &[m, m1, m2, 3] if m == m1 && m == m2 && m >= LUT_FUSION_MIN_DIM => Ok(m),
        s => Err(Error::Shape(format!("expected an [M, M, M, 3] lattice, got {s:?}"))),
    }
}

impl Graph {
    /// `O(h, w) = Σₙ wIₙ · wPₙ(h, w) · φₙ(I(h, w))` as a `[1, 3, H, W]` node,
    /// differentiable in the lattices and both weight sets. No clamping.
    pub fn lut_fusion(&mut self, inputs: LutFusionInputs<'_>) -> Result<Var> {
        let LutFusionInputs {
            luts,
            image,
            image_weights,
            pixel_weights,
        } = inputs;
        let n = luts.len();
        if n == 0 {
            return Err(Error::Invalid("LUT fusion needs at least one LUT".into()));
        }
        image.check_unit_range()?;
        let dim = lattice_dim(self.value(luts[0])?)?;
        for &l in &luts[1..] {
            if lattice_dim(self.value(l)?)? != dim {
                return Err(Error::Shape("LUT bank mixes bin counts".into()));
            }
        }
        let hw = image.pixel_count();
        let wi = self.value(image_weights)?.data().to_vec();
        let wp = self.value(pixel_weights)?.data().to_vec();
        if wi.len() != n || wp.len() != n * hw {
            return Err(Error::Shape(format!(
                "{n} LUTs over {hw} pixels, weights have {} (image) and {} (pixel) entries",
                wi.len(),
                wp.len()
            )));
        }

        let corners: Vec<[(usize, f64); 8]> = image
            .pixels()
            .map(|p| Cell::locate([p[0] as f64, p[1] as f64, p[2] as f64], dim).corners(dim))
            .collect();
        let mut phi = vec![0.0; n * 3 * hw];
        let mut out = vec![0.0; 3 * hw];
        for (k, &lv) in luts.iter().enumerate() {
            let lat = self.value(lv)?.data();
            let phi_k = &mut phi[k * 3 * hw..(k + 1) * 3 * hw];
            for (p, cs) in corners.iter().enumerate() {
                let mut acc = [0.0; 3];
                for &(off, w) in cs {
                    acc[0] += w * lat[off];
                    acc[1] += w * lat[off + 1];
                    acc[2] += w * lat[off + 2];
                }
                let coef = wi[k] * wp[k * hw + p];
                for c in 0..3 {
                    phi_k[c * hw + p] = acc[c];
                    out[c * hw + p] += coef * acc[c];
                }
            }
        }
        let out = Tensor::new(vec![1, 3, image.height(), image.width()], out)?;
        let mut all: Vec<Var> = luts.to_vec();
        all.push(image_weights);
        all.push(pixel_weights);
        self.apply(&all, out, FusionRule { n, hw, corners, phi })
    }

    /// Single-LUT trilinear lookup, `[1, 3, H, W]`.
    pub fn lut_lookup(&mut self, lut: Var, image: &Image) -> Result<Var> {
        let wi = self.constant(Tensor::full(vec![1], 1.0));
        let wp = self.constant(Tensor::full(vec![1, 1, image.height(), image.width()], 1.0));
        self.lut_fusion(LutFusionInputs {
            luts: &[lut],
            image,
            image_weights: wi,
            pixel_weights: wp,
        })
    }

    /// Squared forward differences over all three axes.
    pub fn smooth_reg(&mut self, lut: Var) -> Result<Var> {
        let t = self.value(lut)?;
        let dim = lattice_dim(t)?;
        let v = smooth_value_grad(t.data(), dim, None);
        self.apply(&[lut], Tensor::scalar(v), RegRule { dim, smooth: true })
    }

    /// Hinge on channel-aligned forward differences.
    pub fn mono_reg(&mut self, lut: Var) -> Result<Var> {
        let t = self.value(lut)?;
        let dim = lattice_dim(t)?;
        let v = mono_value_grad(t.data(), dim, None);
        self.apply(&[lut], Tensor::scalar(v), RegRule { dim, smooth: false })
    }
}
