use rand::Rng;

use super::{Backward, Graph, ParamId, ParamStore, Tensor, Var};
use crate::error::{Error, Result};

/// Handles to the weight (`out × in × kh × kw`) and bias (`out`) of a
/// convolution, plus its geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvParams {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvParams {
    /// Registers `<name>.weight` and `<name>.bias`, with weights drawn from
    /// `uniform(±1/√fan_in)` and zero biases.
    pub fn register(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if kernel.is_multiple_of(2) {
            return Err(Error::Invalid(format!("kernel size {kernel} must be odd")));
        }
        if stride == 0 {
            return Err(Error::Invalid("stride must be positive".into()));
        }
        let fan_in = in_channels * kernel * kernel;
        let bound = 1.0 / (fan_in as f64).sqrt();
        let n = out_channels * fan_in;
        let w = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
        let weight = store.add(
            format!("{name}.weight"),
            Tensor::new(vec![out_channels, in_channels, kernel, kernel], w)?,
        )?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(vec![out_channels]))?;
        Ok(ConvParams {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            stride,
        })
    }

    /// "Same" padding for stride 1.
    pub fn padding(&self) -> usize {
        self.kernel / 2
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.conv2d(x, w, b, self.stride, self.padding())
    }
}

fn out_len(len: usize, k: usize, stride: usize, pad: usize) -> usize {
    (len + 2 * pad - k) / stride + 1
}

/// Output positions `o` with `0 <= o*stride + koff - pad < len_in`.
fn valid(len_in: usize, len_out: usize, koff: usize, pad: usize, stride: usize) -> (usize, usize) {
    let lo = if pad > koff { (pad - koff).div_ceil(stride) } else { 0 };
    let hi = if len_in + pad > koff {
        (len_in + pad - koff).div_ceil(stride).min(len_out)
    } else {
        0
    };
    (lo.min(hi), hi)
}

#[derive(Clone, Copy)]
struct Geometry {
    batch: usize,
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    k: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

impl Geometry {
    /// Calls `f(x_index, w_index, out_index)` for every multiply-accumulate
    /// of the convolution, innermost over output columns.
    #[inline(always)]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize, usize)) {
        let Geometry {
            batch,
            cin,
            cout,
            h,
            w,
            k,
            oh,
            ow,
            stride,
            pad,
        } = *self;
        for n in 0..batch {
            for co in 0..cout {
                for ci in 0..cin {
                    for ky in 0..k {
                        let (ylo, yhi) = valid(h, oh, ky, pad, stride);
                        for kx in 0..k {
                            let (xlo, xhi) = valid(w, ow, kx, pad, stride);
                            if xlo >= xhi {
                                continue;
                            }
                            let widx = ((co * cin + ci) * k + ky) * k + kx;
                            for oy in ylo..yhi {
                                let iy = oy * stride + ky - pad;
                                let xrow = ((n * cin + ci) * h + iy) * w;
                                let orow = ((n * cout + co) * oh + oy) * ow;
                                f(widx, xrow + xlo * stride + kx - pad, orow + xlo, xhi - xlo);
                            }
                        }
                    }
                }
            }
        }
    }
}

struct ConvRule(Geometry);

impl Backward for ConvRule {
    fn backward(
        &self,
        inputs: &[&Tensor],
        _: &Tensor,
        g: &[f64],
        needs: &[bool],
    ) -> Vec<Option<Vec<f64>>> {
        let geo = self.0;
        let (x, w) = (inputs[0].data(), inputs[1].data());
        let s = geo.stride;
        let mut gx = needs[0].then(|| vec![0.0; x.len()]);
        let mut gw = needs[1].then(|| vec![0.0; w.len()]);
        geo.for_each_tap(|wi, xi, oi, n| {
            if let Some(gx) = gx.as_mut() {
                let wv = w[wi];
                for j in 0..n {
                    gx[xi + j * s] += wv * g[oi + j];
                }
            }
            if let Some(gw) = gw.as_mut() {
                let mut acc = 0.0;
                for j in 0..n {
                    acc += x[xi + j * s] * g[oi + j];
                }
                gw[wi] += acc;
            }
        });
        let gb = needs[2].then(|| {
            let plane = geo.oh * geo.ow;
            let mut gb = vec![0.0; geo.cout];
            for (i, chunk) in g.chunks_exact(plane).enumerate() {
                gb[i % geo.cout] += chunk.iter().sum::<f64>();
            }
            gb
        });
        vec![gx, gw, gb]
    }
}

impl Graph {
    /// Zero-padded 2D cross-correlation plus bias.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let xt = self.value(x)?;
        let wt = self.value(w)?;
        let bt = self.value(b)?;
        let [batch, cin, h, width] = xt.dims4()?;
        let [cout, wcin, kh, kw] = wt.dims4()?;
        if wcin != cin {
            return Err(Error::Shape(format!(
                "conv2d: input has {cin} channels, kernel expects {wcin}"
            )));
        }
        if kh != kw || kh % 2 == 0 {
            return Err(Error::Shape(format!("conv2d: kernel {kh}x{kw} must be square and odd")));
        }
        if bt.numel() != cout {
            return Err(Error::Shape(format!(
                "conv2d: bias has {} entries for {cout} output channels",
                bt.numel()
            )));
        }
        if h + 2 * pad < kh || width + 2 * pad < kw || stride == 0 {
            return Err(Error::Shape(format!(
                "conv2d: {h}x{width} input too small for kernel {kh} with padding {pad}"
            )));
        }
        let geo = Geometry {
            batch,
            cin,
            cout,
            h,
            w: width,
            k: kh,
            oh: out_len(h, kh, stride, pad),
            ow: out_len(width, kw, stride, pad),
            stride,
            pad,
        };
        let plane = geo.oh * geo.ow;
        let mut out = vec![0.0; batch * cout * plane];
        for (i, chunk) in out.chunks_exact_mut(plane).enumerate() {
            chunk.fill(bt.data()[i % cout]);
        }
        let (xd, wd) = (xt.data(), wt.data());
        geo.for_each_tap(|wi, xi, oi, n| {
            let wv = wd[wi];
            for j in 0..n {
                out[oi + j] += wv * xd[xi + j * stride];
            }
        });
        let out = Tensor::new(vec![batch, cout, geo.oh, geo.ow], out)?;
        self.apply(&[x, w, b], out, ConvRule(geo))
    }
}
