//! Weight producers and the full retouching forward pass.
//!
//! The local-context module turns each pixel's `k × k` neighbourhood into
//! per-LUT pixel weights:
//!
//! ```text
//! f_ctx = ReLU(conv_k×k(x))
//! a     = softmax over k² channels of conv_1×1(f_ctx)
//! v     = neighbours of each pixel, each scaled by its attention weight, flattened to 3k² channels
//! f_vox = ReLU(conv_1×1(v))
//! w^p   = conv_1×1(f_vox)
//! ```
//!
//! The predictor sees a 64×64 area-averaged copy of the photo and emits one
//! weight per LUT. Both weight sets multiply the LUT outputs, see
//! [`crate::lut3d::fused_transform`].

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::colorspace::{ColorSpace, Image};
use crate::error::{Error, Result};
use crate::lut3d::{self, Lut3D, LutBank, LutFusionInputs};
use crate::tensor::{self, Backward, ConvParams, Graph, ParamId, ParamStore, Tensor, Var};

/// Side of the square image the predictor runs on.
pub const PREDICTOR_INPUT: usize = 64;

/// One unbounded weight per LUT for the whole image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageWeights(Vec<f64>);

impl ImageWeights {
    pub fn new(values: Vec<f64>) -> Self {
        ImageWeights(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// Per-pixel weights, planar `N × H × W`.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelWeights {
    count: usize,
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl PixelWeights {
    pub fn new(count: usize, height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != count * height * width {
            return Err(Error::Shape(format!(
                "{count}x{height}x{width} pixel weights, got {} values",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(PixelWeights {
            count,
            height,
            width,
            values,
        })
    }

    pub fn ones(count: usize, height: usize, width: usize) -> Self {
        PixelWeights {
            count,
            height,
            width,
            values: vec![1.0; count * height * width],
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, n: usize, x: usize, y: usize) -> f64 {
        self.values[(n * self.height + y) * self.width + x]
    }
}

/// Softmax attention over each pixel's `k²` neighbours, planar `k² × H × W`.
/// Neighbour `j` is offset `(j / k − k/2, j % k − k/2)` in `(y, x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    k: usize,
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl AttentionMap {
    pub fn new(k: usize, height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != k * k * height * width {
            return Err(Error::Shape(format!(
                "{k}x{k} attention over {height}x{width} needs {} values, got {}",
                k * k * height * width,
                values.len()
            )));
        }
        Ok(AttentionMap {
            k,
            height,
            width,
            values,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, j: usize, x: usize, y: usize) -> f64 {
        self.values[(j * self.height + y) * self.width + x]
    }
}

/// Architecture of a retouching model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub luts: usize,
    pub lut_dim: usize,
    pub k: usize,
    pub ctx_channels: usize,
    pub vox_channels: usize,
    pub predictor_channels: [usize; 4],
}

impl ModelConfig {
    /// Five 33-bin LUTs.
    pub fn full() -> Self {
        ModelConfig {
            luts: 5,
            lut_dim: 33,
            ..Self::desk()
        }
    }

    /// Three 9-bin LUTs; the profile used for tests and quick experiments.
    pub fn desk() -> Self {
        ModelConfig {
            luts: 3,
            lut_dim: 9,
            k: 3,
            ctx_channels: 16,
            vox_channels: 32,
            predictor_channels: [16, 32, 32, 32],
        }
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::full()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LamParams {
    pub k: usize,
    pub ctx: ConvParams,
    pub attn: ConvParams,
    pub vox: ConvParams,
    pub head: ConvParams,
}

impl LamParams {
    fn validate(&self) -> Result<()> {
        let k2 = self.k * self.k;
        let ok = self.k % 2 == 1
            && self.ctx.kernel == self.k
            && self.ctx.in_channels == 3
            && self.attn.in_channels == self.ctx.out_channels
            && self.attn.out_channels == k2
            && self.vox.in_channels == 3 * k2
            && self.head.in_channels == self.vox.out_channels
            && [self.attn, self.vox, self.head].iter().all(|c| c.kernel == 1);
        if !ok {
            return Err(Error::Shape(format!(
                "local-context parameters do not chain for a {0}x{0} neighbourhood",
                self.k
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PredictorParams {
    pub layers: [ConvParams; 4],
    pub head: ConvParams,
}

/// Graph handles produced by one local-context forward pass.
#[derive(Debug, Clone, Copy)]
pub struct LamVars {
    pub f_ctx: Var,
    pub attention: Var,
    pub voxel: Var,
    pub pixel_weights: Var,
}

/// Graph handles of one full forward pass.
#[derive(Debug, Clone)]
pub struct ForwardVars {
    pub output: Var,
    pub lam: LamVars,
    pub image_weights: Var,
    pub luts: Vec<Var>,
}

struct GatherRule {
    k: usize,
}

fn gather_forward(img: &Tensor, attn: &Tensor, k: usize) -> Result<Tensor> {
    let [b, c, h, w] = img.dims4()?;
    let [ab, ak, ah, aw] = attn.dims4()?;
    if b != 1 || c != 3 || ab != 1 || ak != k * k || ah != h || aw != w {
        return Err(Error::Shape(format!(
            "gather: image {:?} with attention {:?} for k = {k}",
            img.shape(),
            attn.shape()
        )));
    }
    let hw = h * w;
    let r = (k / 2) as isize;
    let (x, a) = (img.data(), attn.data());
    let mut v = vec![0.0; 3 * k * k * hw];
    for j in 0..k * k {
        let dy = (j / k) as isize - r;
        let dx = (j % k) as isize - r;
        for y in 0..h {
            let sy = y as isize + dy;
            if sy < 0 || sy >= h as isize {
                continue;
            }
            for xx in 0..w {
                let sx = xx as isize + dx;
                if sx < 0 || sx >= w as isize {
                    continue;
                }
                let p = y * w + xx;
                let q = sy as usize * w + sx as usize;
                let weight = a[j * hw + p];
                for ch in 0..3 {
                    v[(j * 3 + ch) * hw + p] = weight * x[ch * hw + q];
                }
            }
        }
    }
    Tensor::new(vec![1, 3 * k * k, h, w], v)
}

impl Backward for GatherRule {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &[f64], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let k = self.k;
        let [_, _, h, w] = inputs[0].dims4().expect("checked in forward");
        let hw = h * w;
        let r = (k / 2) as isize;
        let (x, a) = (inputs[0].data(), inputs[1].data());
        let mut gx = needs[0].then(|| vec![0.0; x.len()]);
        let mut ga = needs[1].then(|| vec![0.0; a.len()]);
        for j in 0..k * k {
            let dy = (j / k) as isize - r;
            let dx = (j % k) as isize - r;
            for y in 0..h {
                let sy = y as isize + dy;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for xx in 0..w {
                    let sx = xx as isize + dx;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    let p = y * w + xx;
                    let q = sy as usize * w + sx as usize;
                    let mut dot = 0.0;
                    for ch in 0..3 {
                        let go = g[(j * 3 + ch) * hw + p];
                        dot += go * x[ch * hw + q];
                        if let Some(gx) = gx.as_mut() {
                            gx[ch * hw + q] += go * a[j * hw + p];
                        }
                    }
                    if let Some(ga) = ga.as_mut() {
                        ga[j * hw + p] = dot;
                    }
                }
            }
        }
        vec![gx, ga]
    }
}

impl Graph {
    /// Neighbourhood voxel: for every pixel, its `k²` zero-padded neighbours,
    /// each multiplied by that pixel's attention weight, as `[1, 3k², H, W]`
    /// with channel `3j + c` holding colour `c` of neighbour `j`.
    pub fn neighborhood_gather(&mut self, image: Var, attention: Var, k: usize) -> Result<Var> {
        let out = gather_forward(self.value(image)?, self.value(attention)?, k)?;
        self.apply(&[image, attention], out, GatherRule { k })
    }
}

/// Local-context forward pass on a `[1, 3, H, W]` image node.
pub fn lam_graph(g: &mut Graph, store: &ParamStore, p: &LamParams, image: Var) -> Result<LamVars> {
    p.validate()?;
    let ctx = p.ctx.forward(g, store, image)?;
    let f_ctx = g.relu(ctx)?;
    let logits = p.attn.forward(g, store, f_ctx)?;
    let attention = g.softmax_channels(logits)?;
    let voxel = g.neighborhood_gather(image, attention, p.k)?;
    let vox = p.vox.forward(g, store, voxel)?;
    let f_vox = g.relu(vox)?;
    let pixel_weights = p.head.forward(g, store, f_vox)?;
    Ok(LamVars {
        f_ctx,
        attention,
        voxel,
        pixel_weights,
    })
}

/// Predictor forward pass on an already resized `[1, 3, S, S]` node;
/// returns a `[1, N, 1, 1]` node.
pub fn predictor_graph(g: &mut Graph, store: &ParamStore, p: &PredictorParams, small: Var) -> Result<Var> {
    let mut x = small;
    for layer in &p.layers {
        let y = layer.forward(g, store, x)?;
        x = g.relu(y)?;
    }
    let pooled = g.global_avg_pool(x)?;
    p.head.forward(g, store, pooled)
}

/// Area-averaging resample to `width × height`. Each output pixel averages
/// the input over its footprint, with fractional coverage at the edges.
pub fn area_resize(img: &Image, width: usize, height: usize) -> Image {
    let (sw, sh) = (img.width(), img.height());
    if sw == width && sh == height {
        return img.clone();
    }
    // Per output index: (source index, coverage weight) pairs.
    let spans = |src: usize, dst: usize| -> Vec<Vec<(usize, f64)>> {
        let scale = src as f64 / dst as f64;
        (0..dst)
            .map(|o| {
                let (lo, hi) = (o as f64 * scale, (o + 1) as f64 * scale);
                let mut v = Vec::new();
                let mut i = lo.floor() as usize;
                while (i as f64) < hi && i < src {
                    let cover = (hi.min(i as f64 + 1.0) - lo.max(i as f64)).max(0.0);
                    if cover > 0.0 {
                        v.push((i, cover / scale));
                    }
                    i += 1;
                }
                v
            })
            .collect()
    };
    let xs = spans(sw, width);
    let ys = spans(sh, height);
    let src = img.data();
    let mut data = Vec::with_capacity(width * height * 3);
    for yspan in &ys {
        for xspan in &xs {
            let mut acc = [0.0f64; 3];
            for &(sy, wy) in yspan {
                for &(sx, wx) in xspan {
                    let i = (sy * sw + sx) * 3;
                    for c in 0..3 {
                        acc[c] += wy * wx * src[i + c] as f64;
                    }
                }
            }
            data.extend(acc.map(|v| v.clamp(0.0, 1.0) as f32));
        }
    }
    Image::new(width, height, ColorSpace::Srgb, data).expect("resampled image is valid")
}

/// Local-context weights for a photo.
pub fn lam_forward(store: &ParamStore, p: &LamParams, img: &Image) -> Result<(AttentionMap, PixelWeights)> {
    img.expect_space(ColorSpace::Srgb)?;
    img.check_unit_range()?;
    let mut g = Graph::new();
    let x = g.constant(img.to_tensor());
    let vars = lam_graph(&mut g, store, p, x)?;
    let (h, w) = (img.height(), img.width());
    let attn = AttentionMap::new(p.k, h, w, g.value(vars.attention)?.data().to_vec())?;
    let wp = g.value(vars.pixel_weights)?;
    let n = wp.shape()[1];
    Ok((attn, PixelWeights::new(n, h, w, wp.data().to_vec())?))
}

/// Image-adaptive weights for a photo.
pub fn predictor_forward(store: &ParamStore, p: &PredictorParams, img: &Image) -> Result<ImageWeights> {
    img.expect_space(ColorSpace::Srgb)?;
    let small = area_resize(img, PREDICTOR_INPUT, PREDICTOR_INPUT);
    let mut g = Graph::new();
    let x = g.constant(small.to_tensor());
    let out = predictor_graph(&mut g, store, p, x)?;
    Ok(ImageWeights::new(g.value(out)?.data().to_vec()))
}

/// Everything [`Model::retouch`] computes.
#[derive(Debug, Clone)]
pub struct Retouched {
    pub image: Image,
    pub attention: AttentionMap,
    pub pixel_weights: PixelWeights,
    pub image_weights: ImageWeights,
}

/// LUT bank, local-context module and predictor, with their parameters.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    store: ParamStore,
    luts: Vec<ParamId>,
    lam: LamParams,
    predictor: PredictorParams,
}

impl Model {
    /// A model whose retouch is the identity: first LUT identity, the rest
    /// zero, predictor emitting `(1, 0, …, 0)`, pixel weights all one.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        if config.luts == 0 {
            return Err(Error::Invalid("a model needs at least one LUT".into()));
        }
        if config.k.is_multiple_of(2) {
            return Err(Error::Invalid(format!("neighbourhood size {} must be odd", config.k)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let bank = LutBank::identity_init(config.luts, config.lut_dim)?;
        let luts = bank
            .luts()
            .iter()
            .enumerate()
            .map(|(i, l)| store.add(format!("lut.{i}"), l.to_tensor()))
            .collect::<Result<Vec<_>>>()?;

        let k2 = config.k * config.k;
        let lam = LamParams {
            k: config.k,
            ctx: ConvParams::register(&mut store, "lam.ctx", 3, config.ctx_channels, config.k, 1, &mut rng)?,
            attn: ConvParams::register(&mut store, "lam.attn", config.ctx_channels, k2, 1, 1, &mut rng)?,
            vox: ConvParams::register(&mut store, "lam.vox", 3 * k2, config.vox_channels, 1, 1, &mut rng)?,
            head: ConvParams::register(&mut store, "lam.head", config.vox_channels, config.luts, 1, 1, &mut rng)?,
        };
        store.get_mut(lam.head.weight).value.data_mut().fill(0.0);
        store.get_mut(lam.head.bias).value.data_mut().fill(1.0);

        let pc = config.predictor_channels;
        let chans = [3, pc[0], pc[1], pc[2], pc[3]];
        let mut layers = Vec::with_capacity(4);
        for i in 0..4 {
            layers.push(ConvParams::register(&mut store, &format!("pred.{i}"), chans[i], chans[i + 1], 3, 2, &mut rng)?);
        }
        let head = ConvParams::register(&mut store, "pred.fc", pc[3], config.luts, 1, 1, &mut rng)?;
        // Row 0 is zeroed so w^I₀ = 1 exactly; the other rows keep their
        // random init so the zero LUTs receive gradient from the first step.
        store.get_mut(head.weight).value.data_mut()[..pc[3]].fill(0.0);
        let bias = store.get_mut(head.bias).value.data_mut();
        bias.fill(0.0);
        bias[0] = 1.0;
        let predictor = PredictorParams {
            layers: layers.try_into().expect("four layers"),
            head,
        };
        Ok(Model {
            config,
            store,
            luts,
            lam,
            predictor,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn lam(&self) -> &LamParams {
        &self.lam
    }

    pub fn predictor(&self) -> &PredictorParams {
        &self.predictor
    }

    pub fn lut_params(&self) -> &[ParamId] {
        &self.luts
    }

    pub fn bank(&self) -> LutBank {
        let luts = self
            .luts
            .iter()
            .map(|&id| Lut3D::from_tensor(&self.store.get(id).value).expect("lattice shape"))
            .collect();
        LutBank::new(luts).expect("bank is consistent")
    }

    pub fn set_bank(&mut self, bank: &LutBank) -> Result<()> {
        if bank.len() != self.luts.len() || bank.dim() != self.config.lut_dim {
            return Err(Error::Shape(format!(
                "model holds {} LUTs of {} bins, bank has {} of {}",
                self.luts.len(),
                self.config.lut_dim,
                bank.len(),
                bank.dim()
            )));
        }
        for (&id, lut) in self.luts.iter().zip(bank.luts()) {
            self.store.get_mut(id).value = lut.to_tensor();
        }
        Ok(())
    }

    /// Records the differentiable forward pass; the output is unclamped.
    pub fn forward(&self, g: &mut Graph, img: &Image) -> Result<ForwardVars> {
        img.expect_space(ColorSpace::Srgb)?;
        img.check_unit_range()?;
        let x = g.constant(img.to_tensor());
        let lam = lam_graph(g, &self.store, &self.lam, x)?;
        let small = g.constant(area_resize(img, PREDICTOR_INPUT, PREDICTOR_INPUT).to_tensor());
        let image_weights = predictor_graph(g, &self.store, &self.predictor, small)?;
        let luts: Vec<Var> = self.luts.iter().map(|&id| g.param(&self.store, id)).collect();
        let output = g.lut_fusion(LutFusionInputs {
            luts: &luts,
            image: img,
            image_weights,
            pixel_weights: lam.pixel_weights,
        })?;
        Ok(ForwardVars {
            output,
            lam,
            image_weights,
            luts,
        })
    }

    /// Retouches a photo and returns the emitted (clamped) image together
    /// with the intermediate weights.
    pub fn retouch(&self, img: &Image) -> Result<Retouched> {
        let image_weights = predictor_forward(&self.store, &self.predictor, img)?;
        let (attention, pixel_weights) = lam_forward(&self.store, &self.lam, img)?;
        let image = lut3d::fused_transform(&self.bank(), img, &image_weights, &pixel_weights)?;
        Ok(Retouched {
            image,
            attention,
            pixel_weights,
            image_weights,
        })
    }

    /// Pixel weights computed tile by tile with a `k/2` halo; identical to
    /// the untiled result.
    pub fn pixel_weights_tiled(&self, img: &Image, tile: usize) -> Result<PixelWeights> {
        if tile == 0 {
            return Err(Error::Invalid("tile size must be positive".into()));
        }
        let (w, h) = (img.width(), img.height());
        let halo = self.lam.k / 2;
        let n = self.config.luts;
        let mut values = vec![0.0; n * w * h];
        for ty in (0..h).step_by(tile) {
            for tx in (0..w).step_by(tile) {
                let (tw, th) = (tile.min(w - tx), tile.min(h - ty));
                let (x0, y0) = (tx.saturating_sub(halo), ty.saturating_sub(halo));
                let (x1, y1) = ((tx + tw + halo).min(w), (ty + th + halo).min(h));
                let crop = img.crop(x0, y0, x1 - x0, y1 - y0);
                let (_, wp) = lam_forward(&self.store, &self.lam, &crop)?;
                for k in 0..n {
                    for y in ty..ty + th {
                        for x in tx..tx + tw {
                            values[(k * h + y) * w + x] = wp.at(k, x - x0, y - y0);
                        }
                    }
                }
            }
        }
        PixelWeights::new(n, h, w, values)
    }

    /// Like [`Model::retouch`] but runs the local-context module in tiles.
    pub fn retouch_tiled(&self, img: &Image, tile: usize) -> Result<Image> {
        let image_weights = predictor_forward(&self.store, &self.predictor, img)?;
        let pixel_weights = self.pixel_weights_tiled(img, tile)?;
        lut3d::fused_transform(&self.bank(), img, &image_weights, &pixel_weights)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        tensor::save_checkpoint(path, &self.store.entries())
    }

    /// Rebuilds a model from an `LFCK` checkpoint, inferring the
    /// architecture from the stored shapes.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_entries(&tensor::load_checkpoint(path)?)
    }

    pub fn from_entries(entries: &[(String, Tensor)]) -> Result<Self> {
        let shape = |name: &str| -> Result<&[usize]> {
            entries
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t.shape())
                .ok_or_else(|| Error::Shape(format!("checkpoint lacks `{name}`")))
        };
        let luts = entries.iter().filter(|(n, _)| n.starts_with("lut.")).count();
        let lut_dim = shape("lut.0")?[0];
        let ctx = shape("lam.ctx.weight")?;
        let vox = shape("lam.vox.weight")?;
        let pred = |i: usize| shape(&format!("pred.{i}.weight")).map(|s| s[0]);
        let config = ModelConfig {
            luts,
            lut_dim,
            k: ctx[2],
            ctx_channels: ctx[0],
            vox_channels: vox[0],
            predictor_channels: [pred(0)?, pred(1)?, pred(2)?, pred(3)?],
        };
        let mut model = Model::new(config, 0)?;
        model.store.load(entries)?;
        Ok(model)
    }
}
