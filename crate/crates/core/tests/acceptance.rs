//! Acceptance criteria. Runs without the libtest harness so every criterion
//! prints exactly one PASS/FAIL line; an optional argument filters by name.

use std::panic::{self, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lutfuse::colorspace::{srgb_to_lab, ColorSpace, Image};
use lutfuse::context::{AttentionMap, ImageWeights, Model, ModelConfig, PixelWeights};
use lutfuse::data::{encode_image, gen_synthetic, synthesize, BitDepth, ImageFormat, LoadedPhoto, PhotoRecord, Split, SyntheticPhoto, SyntheticSpec};
use lutfuse::losses::{build_affinity, edge_loss, variance, LossWeights, Mask};
use lutfuse::lut3d::{fused_transform, lookup, mono_reg_lut, smooth_reg_lut, Lut3D, LutBank};
use lutfuse::metrics::{psnr, EvalMode};
use lutfuse::tensor::{Graph, ParamId, Tensor};
use lutfuse::trainer::{self, evaluate_samples, prepare_samples, train_model, TrainConfig, TrainOutput, TrainSample};

type Check = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rel_close(got: f64, want: f64, tol: f64) -> bool {
    (got - want).abs() <= tol * got.abs().max(want.abs()) + 1e-12
}

fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Image {
    Image::new(w, h, ColorSpace::Srgb, (0..w * h * 3).map(|_| rng.gen_range(0.0f32..=1.0)).collect()).unwrap()
}

fn loaded(photos: Vec<SyntheticPhoto>) -> (Vec<LoadedPhoto>, Vec<LoadedPhoto>) {
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for p in photos {
        let l = LoadedPhoto {
            record: PhotoRecord {
                photo_id: p.photo_id,
                group_id: p.group_id,
                input: PathBuf::new(),
                target: PathBuf::new(),
                mask: PathBuf::new(),
            },
            input: p.input,
            target: p.target,
            mask: p.mask,
        };
        match p.split {
            Split::Train => train.push(l),
            Split::Test => test.push(l),
        }
    }
    (train, test)
}

fn perturb(model: &mut Model, rng: &mut ChaCha8Rng, scale: f64) {
    let ids: Vec<ParamId> = model.store().iter().map(|(id, _)| id).collect();
    for id in ids {
        for v in model.store_mut().get_mut(id).value.data_mut() {
            *v += rng.gen_range(-scale..scale);
        }
    }
}

// ---- independent oracles ----

fn oracle_trilinear(lattice: &[f64], m: usize, rgb: [f64; 3]) -> [f64; 3] {
    // Tensor-product hat basis summed over every node.
    let hat = |t: f64, i: usize| (1.0 - (t * (m - 1) as f64 - i as f64).abs()).max(0.0);
    let mut out = [0.0; 3];
    for b in 0..m {
        for g in 0..m {
            for r in 0..m {
                let w = hat(rgb[0], r) * hat(rgb[1], g) * hat(rgb[2], b);
                for c in 0..3 {
                    out[c] += w * lattice[((b * m + g) * m + r) * 3 + c];
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn oracle_conv(x: &[f64], cin: usize, h: usize, w: usize, k: &[f64], cout: usize, ks: usize, bias: &[f64], stride: usize) -> Vec<f64> {
    let pad = ks / 2;
    let oh = (h + 2 * pad - ks) / stride + 1;
    let ow = (w + 2 * pad - ks) / stride + 1;
    let mut y = vec![0.0; cout * oh * ow];
    for o in 0..cout {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = bias[o];
                for i in 0..cin {
                    for ky in 0..ks {
                        for kx in 0..ks {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                acc += k[((o * cin + i) * ks + ky) * ks + kx] * x[(i * h + iy as usize) * w + ix as usize];
                            }
                        }
                    }
                }
                y[(o * oh + oy) * ow + ox] = acc;
            }
        }
    }
    y
}

fn oracle_affinity(fg: &[bool], w: usize, h: usize, k: usize) -> (Vec<f64>, Vec<bool>) {
    let r = (k / 2) as isize;
    let class = |x: isize, y: isize| x >= 0 && y >= 0 && x < w as isize && y < h as isize && fg[y as usize * w + x as usize];
    let mut aff = vec![0.0; k * k * w * h];
    let mut edge = vec![false; w * h];
    for j in 0..k * k {
        let (dy, dx) = ((j / k) as isize - r, (j % k) as isize - r);
        for y in 0..h {
            for x in 0..w {
                let same = !(class(x as isize, y as isize) ^ class(x as isize + dx, y as isize + dy));
                aff[(j * h + y) * w + x] = same as u8 as f64;
                if !same {
                    edge[y * w + x] = true;
                }
            }
        }
    }
    (aff, edge)
}

fn oracle_variance(v: &[f64]) -> f64 {
    // Pairwise form: Σ_{i<j} (x_i − x_j)² / n².
    let n = v.len() as f64;
    let mut pairs = 0.0;
    for i in 0..v.len() {
        for j in i + 1..v.len() {
            pairs += (v[i] - v[j]).powi(2);
        }
    }
    pairs / (n * n)
}

fn oracle_lab(rgb: [f64; 3]) -> [f64; 3] {
    let lin = |c: f64| if c <= 0.04045 { c / 12.92 } else { ((c + 0.055) / 1.055).powf(2.4) };
    let (r, g, b) = (lin(rgb[0]), lin(rgb[1]), lin(rgb[2]));
    let x = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b;
    let y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
    let z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b;
    let f = |t: f64| {
        if t > (6.0f64 / 29.0).powi(3) {
            t.powf(1.0 / 3.0)
        } else {
            t / (3.0 * (6.0f64 / 29.0).powi(2)) + 4.0 / 29.0
        }
    };
    let (fx, fy, fz) = (f(x / 0.95047), f(y), f(z / 1.08883));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

// ---- criteria ----

fn c1_oracles() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let n = 120;
    let mut worst: Vec<(&str, f64)> = Vec::new();
    let mut fail = Vec::new();
    let mut record = |name: &'static str, got: f64, want: f64, tol: f64, fail: &mut Vec<String>| {
        let err = (got - want).abs() / got.abs().max(want.abs()).max(1e-300);
        match worst.iter_mut().find(|w| w.0 == name) {
            Some(w) => w.1 = w.1.max(if got == want { 0.0 } else { err }),
            None => worst.push((name, if got == want { 0.0 } else { err })),
        }
        if !rel_close(got, want, tol) && fail.len() < 5 {
            fail.push(format!("{name}: {got} vs {want}"));
        }
    };

    for _ in 0..n {
        let m = rng.gen_range(2..=6);
        let lattice: Vec<f64> = (0..m * m * m * 3).map(|_| rng.gen_range(0.0..1.0)).collect();
        let lut = Lut3D::from_lattice(m, lattice.clone()).unwrap();
        let img = random_image(&mut rng, 3, 2);
        let out = lookup(&lut, &img).unwrap();
        for (p, q) in img.pixels().zip(out.pixels()) {
            let want = oracle_trilinear(&lattice, m, p.map(|v| v as f64));
            for c in 0..3 {
                record("trilinear", q[c] as f64, want[c], 1e-5, &mut fail);
            }
        }
    }

    for _ in 0..n {
        let (cin, cout) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
        let ks = [1, 3, 5][rng.gen_range(0..3)];
        let stride = rng.gen_range(1..=2);
        let (h, w) = (rng.gen_range(1..=6), rng.gen_range(1..=6));
        let x: Vec<f64> = (0..cin * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let k: Vec<f64> = (0..cout * cin * ks * ks).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..cout).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut g = Graph::new();
        let xv = g.constant(Tensor::new(vec![1, cin, h, w], x.clone()).unwrap());
        let kv = g.constant(Tensor::new(vec![cout, cin, ks, ks], k.clone()).unwrap());
        let bv = g.constant(Tensor::new(vec![cout], b.clone()).unwrap());
        let y = g.conv2d(xv, kv, bv, stride, ks / 2).unwrap();
        let want = oracle_conv(&x, cin, h, w, &k, cout, ks, &b, stride);
        let got = g.value(y).unwrap().data();
        if got.len() != want.len() {
            fail.push(format!("conv: {} outputs vs {}", got.len(), want.len()));
        }
        for (a, e) in got.iter().zip(&want) {
            record("convolution", *a, *e, 1e-5, &mut fail);
        }
    }

    for _ in 0..n {
        let (c, h, w) = (rng.gen_range(1..=9), rng.gen_range(1..=4), rng.gen_range(1..=4));
        let x: Vec<f64> = (0..c * h * w).map(|_| rng.gen_range(-6.0..6.0)).collect();
        let mut g = Graph::new();
        let xv = g.constant(Tensor::new(vec![1, c, h, w], x.clone()).unwrap());
        let y = g.softmax_channels(xv).unwrap();
        let got = g.value(y).unwrap().data();
        for p in 0..h * w {
            let z: f64 = (0..c).map(|j| x[j * h * w + p].exp()).sum();
            for j in 0..c {
                record("softmax", got[j * h * w + p], x[j * h * w + p].exp() / z, 1e-5, &mut fail);
            }
        }
    }

    for _ in 0..n {
        let k = [1, 3, 5][rng.gen_range(0..3)];
        let (w, h) = (rng.gen_range(1..=7), rng.gen_range(1..=7));
        let vals: Vec<f32> = (0..w * h).map(|_| rng.gen_range(0.0f32..=1.0)).collect();
        let fg: Vec<bool> = vals.iter().map(|&v| v > 0.5).collect();
        let mask = Mask::new(w, h, vals).unwrap();
        let aff = build_affinity(&mask, k).unwrap();
        let (want_aff, want_edge) = oracle_affinity(&fg, w, h, k);
        for (a, e) in aff.affinity().iter().zip(&want_aff) {
            record("affinity", *a, *e, 1e-5, &mut fail);
        }
        for (a, e) in aff.edge_mask().iter().zip(&want_edge) {
            record("affinity", *a as u8 as f64, *e as u8 as f64, 1e-5, &mut fail);
        }

        let attn: Vec<f64> = (0..k * k * w * h).map(|_| rng.gen_range(0.001..0.999)).collect();
        let map = AttentionMap::new(k, h, w, attn.clone()).unwrap();
        let got = edge_loss(&map, &aff).unwrap();
        let mut terms = Vec::new();
        for p in 0..w * h {
            if want_edge[p] {
                for j in 0..k * k {
                    let (a, y) = (attn[j * w * h + p], want_aff[j * w * h + p]);
                    terms.push(if y == 1.0 { -a.ln() } else { -(1.0 - a).ln() });
                }
            }
        }
        let want = if terms.is_empty() { 0.0 } else { terms.iter().sum::<f64>() / terms.len() as f64 };
        record("bce", got, want, 1e-5, &mut fail);
    }

    for _ in 0..n {
        let len = rng.gen_range(1..=12);
        let v: Vec<f64> = (0..len).map(|_| rng.gen_range(-50.0..50.0)).collect();
        record("variance", variance(&v), oracle_variance(&v), 1e-5, &mut fail);
    }

    for _ in 0..n {
        let img = random_image(&mut rng, 2, 2);
        let lab = srgb_to_lab(&img).unwrap();
        for (p, q) in img.pixels().zip(lab.pixels()) {
            let want = oracle_lab(p.map(|v| v as f64));
            for c in 0..3 {
                record("lab", q[c] as f64, want[c], 1e-3, &mut fail);
            }
        }
    }

    let summary = worst.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect::<Vec<_>>().join(", ");
    let detail = format!("{n} instances each, worst rel err: {summary}");
    if fail.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{detail}; {}", fail.join("; ")))
    }
}

fn c2_gradients() -> Check {
    let h = 1e-3;
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut model = Model::new(ModelConfig::desk(), 5).unwrap();
    perturb(&mut model, &mut rng, 0.3);
    let img = random_image(&mut rng, 6, 6);
    let target = random_image(&mut rng, 6, 6).to_tensor();
    let mse = |m: &Model, g: &mut Graph| {
        let fv = m.forward(g, &img).unwrap();
        let t = g.constant(target.clone());
        let d = g.sub(fv.output, t).unwrap();
        let sq = g.square(d).unwrap();
        g.mean(sq).unwrap()
    };
    let loss = |m: &Model| {
        let mut g = Graph::new();
        let l = mse(m, &mut g);
        g.value(l).unwrap().item()
    };
    let mut g = Graph::new();
    let l = mse(&model, &mut g);
    g.backward(l).unwrap();
    let mut grads = model.clone();
    grads.store_mut().accumulate_grads(&g);
    let central = |id: ParamId, i: usize, h: f64| {
        let mut m = model.clone();
        let orig = m.store().get(id).value.data()[i];
        m.store_mut().get_mut(id).value.data_mut()[i] = orig + h;
        let hi = loss(&m);
        m.store_mut().get_mut(id).value.data_mut()[i] = orig - h;
        (hi - loss(&m)) / (2.0 * h)
    };
    let agrees = |a: f64, n: f64| a.abs().max(n.abs()) <= 1e-9 || rel_close(a, n, 1e-2);

    let ids: Vec<(ParamId, String, usize)> = model.store().iter().map(|(id, p)| (id, p.name.clone(), p.value.numel())).collect();
    let (mut checked, mut groups) = (0usize, [0usize; 3]);
    let (mut failures, mut fine_ok) = (Vec::new(), 0usize);
    for (id, name, numel) in ids {
        let analytic = grads.store().get(id).grad.as_ref().unwrap().data().to_vec();
        let picks: Vec<usize> = if numel <= 24 {
            (0..numel).collect()
        } else {
            (0..24).map(|_| rng.gen_range(0..numel)).collect()
        };
        for i in picks {
            let a = analytic[i];
            let numeric = central(id, i, h);
            if !agrees(a, numeric) {
                if agrees(a, central(id, i, 1e-6)) {
                    fine_ok += 1;
                }
                failures.push(format!("{name}[{i}] {a:.4e} vs {numeric:.4e}"));
            }
            checked += 1;
            groups[if name.starts_with("lut") { 0 } else if name.starts_with("lam") { 1 } else { 2 }] += 1;
        }
    }
    let detail = format!(
        "{checked} entries (lut {}, lam {}, predictor {}) at h = {h}: {} exceed rel err 1e-2",
        groups[0],
        groups[1],
        groups[2],
        failures.len()
    );
    if failures.is_empty() {
        Ok(detail)
    } else {
        Err(format!(
            "{detail} ({fine_ok} of them agree at h = 1e-6, so the window straddles ReLU kinks); e.g. {}",
            failures[..failures.len().min(3)].join("; ")
        ))
    }
}

fn c3_identity() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let (mut float_err, mut q_err) = (0.0f64, 0.0f64);
    let mut count = 0;
    for config in [ModelConfig::desk(), ModelConfig::full()] {
        for seed in 0..3 {
            let model = Model::new(config, seed).unwrap();
            for _ in 0..3 {
                let (w, h) = (rng.gen_range(1..=40), rng.gen_range(1..=40));
                let img = random_image(&mut rng, w, h);
                let out = model.retouch(&img).unwrap().image;
                for (a, b) in out.data().iter().zip(img.data()) {
                    float_err = float_err.max((a - b).abs() as f64);
                }
                let q = img.quantized_8bit();
                let out = model.retouch(&q).unwrap().image.quantized_8bit();
                for (a, b) in out.data().iter().zip(q.data()) {
                    q_err = q_err.max((a - b).abs() as f64);
                }
                count += 1;
            }
        }
    }
    ensure(
        float_err <= 1e-6 && q_err <= 1.0 / 255.0,
        format!("{count} images, max float err {float_err:.2e}, max 8-bit err {:.3}/255", q_err * 255.0),
    )
}

fn c4_overfit() -> Check {
    let spec = SyntheticSpec {
        groups: 1,
        photos_per_group: 1,
        ..Default::default()
    };
    let photo = synthesize(&spec).unwrap().remove(0);
    let config = TrainConfig {
        epochs: 200,
        weights: LossWeights::mse_only(),
        ..TrainConfig::desk()
    };
    let mse = |a: &Image, b: &Image| a.data().iter().zip(b.data()).map(|(x, y)| (*x as f64 - *y as f64).powi(2)).sum::<f64>() / a.data().len() as f64;
    let hand = Lut3D::from_fn(config.model.lut_dim, |r, g, b| photo.tone.apply(photo.degradation.invert([r, g, b]))).unwrap();
    let hand_mse = mse(&lookup(&hand, &photo.input).unwrap(), &photo.target);
    if hand_mse >= 1e-4 {
        return Err(format!("hand-fit LUT only reaches MSE {hand_mse:.2e}"));
    }
    let samples = prepare_samples(loaded(vec![photo.clone()]).0, config.model.k).unwrap();
    let mut model = Model::new(config.model, config.seed).unwrap();
    let report = train_model(&mut model, &samples, &config, &TrainOutput::default()).unwrap();
    let out = model.retouch(&photo.input).unwrap().image;
    let (m, p) = (mse(&out, &photo.target), psnr(&out, &photo.target).unwrap());
    ensure(
        report.steps == 200 && m < 1e-4 && p > 40.0,
        format!("hand-fit MSE {hand_mse:.2e}; {} steps → MSE {m:.2e}, PSNR {p:.2} dB", report.steps),
    )
}

fn c5_gam() -> Check {
    let spec = SyntheticSpec {
        groups: 10,
        photos_per_group: 6,
        test_per_group: 3,
        seed: 7,
        ..Default::default()
    };
    let base = TrainConfig {
        seed: 7,
        ..TrainConfig::desk()
    };
    let (train, test) = loaded(synthesize(&spec).unwrap());
    let train = prepare_samples(train, base.model.k).unwrap();
    let test = prepare_samples(test, base.model.k).unwrap();
    let run = |lambda: f64| {
        let mut config = base.clone();
        config.weights.lambda_gam = lambda;
        let mut model = Model::new(config.model, config.seed).unwrap();
        train_model(&mut model, &train, &config, &TrainOutput::default()).unwrap();
        let r = evaluate_samples(&model, &test, EvalMode::Quantized8).unwrap();
        (r.mean_m_glc().unwrap(), r.mean_psnr().unwrap())
    };
    let (m0, p0) = run(0.0);
    let (m1, p1) = run(1e-3);
    let reduction = 1.0 - m1 / m0;
    ensure(
        reduction >= 0.2 && p1 <= p0,
        format!(
            "test m_glc {m0:.2} → {m1:.2} ({:.1}% lower), PSNR {p0:.2} → {p1:.2} dB",
            reduction * 100.0
        ),
    )
}

fn attention_split(model: &Model, samples: &[TrainSample]) -> (f64, f64) {
    let (mut same, mut ns, mut cross, mut nc) = (0.0, 0usize, 0.0, 0usize);
    for s in samples {
        let a = model.retouch(&s.input).unwrap().attention;
        let aff = &s.affinity;
        let k2 = aff.k() * aff.k();
        for y in 0..aff.height() {
            for x in 0..aff.width() {
                if !aff.is_edge(x, y) {
                    continue;
                }
                for j in 0..k2 {
                    if aff.at(j, x, y) == 1.0 {
                        same += a.at(j, x, y);
                        ns += 1;
                    } else {
                        cross += a.at(j, x, y);
                        nc += 1;
                    }
                }
            }
        }
    }
    (same / ns as f64, cross / nc as f64)
}

fn c6_edge() -> Check {
    let spec = SyntheticSpec {
        groups: 4,
        photos_per_group: 2,
        width: 32,
        height: 32,
        seed: 6,
        ..Default::default()
    };
    let config = TrainConfig {
        seed: 6,
        ..TrainConfig::desk()
    };
    let samples = prepare_samples(loaded(synthesize(&spec).unwrap()).0, config.model.k).unwrap();
    let mut model = Model::new(config.model, config.seed).unwrap();
    let (s0, c0) = attention_split(&model, &samples);
    train_model(&mut model, &samples, &config, &TrainOutput::default()).unwrap();
    let (s1, c1) = attention_split(&model, &samples);
    ensure(
        s1 > c1,
        format!("edge-pixel attention same/cross class {s0:.4}/{c0:.4} at init → {s1:.4}/{c1:.4} after training"),
    )
}

fn c7_tiling() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let mut model = Model::new(ModelConfig::desk(), 7).unwrap();
    perturb(&mut model, &mut rng, 0.3);
    let mut differing = Vec::new();
    let mut changed = 0;
    for i in 0..10 {
        let (w, h) = (rng.gen_range(8..=80), rng.gen_range(8..=80));
        let tile = [1, 3, 8, 16, 33, 64][rng.gen_range(0..6)];
        let img = random_image(&mut rng, w, h);
        let whole = model.retouch(&img).unwrap().image;
        let tiled = model.retouch_tiled(&img, tile).unwrap();
        let a = encode_image(&whole, ImageFormat::Png, BitDepth::Eight).unwrap();
        let b = encode_image(&tiled, ImageFormat::Png, BitDepth::Eight).unwrap();
        if a != b {
            differing.push(format!("image {i} ({w}x{h}, tile {tile})"));
        }
        if whole.quantized_8bit() != img.quantized_8bit() {
            changed += 1;
        }
    }
    ensure(
        differing.is_empty() && changed == 10,
        format!("10 images, {changed} visibly retouched, byte mismatches: {}", if differing.is_empty() { "none".into() } else { differing.join(", ") }),
    )
}

fn c8_regularizers() -> Check {
    let m = 3;
    let levels = [0.0, 0.5, 1.0];
    let mut failures = Vec::new();
    let mut cases = 0;
    // Every line of 3 nodes, every output channel, every axis, all 27 level
    // patterns, embedded in the identity lattice.
    for channel in 0..3 {
        for axis in 0..3 {
            for u in 0..m {
                for v in 0..m {
                    for pattern in 0..27 {
                        let vals = [pattern % 3, (pattern / 3) % 3, pattern / 9].map(|i| levels[i]);
                        let mut lut = Lut3D::identity(m).unwrap();
                        for t in 0..m {
                            let mut coord = [0; 3];
                            coord[axis] = t;
                            coord[(axis + 1) % 3] = u;
                            coord[(axis + 2) % 3] = v;
                            let mut node = lut.node(coord[0], coord[1], coord[2]);
                            node[channel] = vals[t];
                            lut.set_node(coord[0], coord[1], coord[2], node);
                        }
                        let monotone = (0..m).all(|b| {
                            (0..m).all(|g| {
                                (0..m).all(|r| {
                                    let n = lut.node(r, g, b);
                                    (r + 1 >= m || lut.node(r + 1, g, b)[0] >= n[0])
                                        && (g + 1 >= m || lut.node(r, g + 1, b)[1] >= n[1])
                                        && (b + 1 >= m || lut.node(r, g, b + 1)[2] >= n[2])
                                })
                            })
                        });
                        let zero = mono_reg_lut(&lut) == 0.0;
                        if zero != monotone {
                            failures.push(format!("mono channel {channel} axis {axis} pattern {vals:?}"));
                        }
                        cases += 1;
                    }
                }
            }
        }
    }
    // Channel c rising along axis c plus any level pattern over the other
    // two axes: decreasing off-axis never costs anything.
    for channel in 0..3 {
        for pattern in 0..3usize.pow(9) {
            let mut lut = Lut3D::identity(m).unwrap();
            for b in 0..m {
                for g in 0..m {
                    for r in 0..m {
                        let coord = [r, g, b];
                        let (u, v) = (coord[(channel + 1) % 3], coord[(channel + 2) % 3]);
                        let level = levels[(pattern / 3usize.pow((u * m + v) as u32)) % 3];
                        let mut node = lut.node(r, g, b);
                        node[channel] = coord[channel] as f64 + level;
                        lut.set_node(r, g, b, node);
                    }
                }
            }
            if mono_reg_lut(&lut) != 0.0 {
                failures.push(format!("off-axis pattern {pattern} penalized on channel {channel}"));
            }
            cases += 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    for _ in 0..20 {
        let rgb = [0; 3].map(|_| rng.gen_range(-1.0..2.0));
        let constant = Lut3D::constant(m, rgb).unwrap();
        if smooth_reg_lut(&constant) != 0.0 {
            failures.push(format!("smooth of constant {rgb:?}"));
        }
        for node in 0..m * m * m {
            for c in 0..3 {
                let mut lut = constant.clone();
                lut.lattice_mut()[node * 3 + c] += [-1.0, 1.0][rng.gen_range(0..2)] * rng.gen_range(1e-3..1.0);
                if smooth_reg_lut(&lut) <= 0.0 {
                    failures.push(format!("smooth zero with node {node} channel {c} perturbed"));
                }
                cases += 1;
            }
        }
    }
    ensure(failures.is_empty(), format!("{cases} lattices at M = 3; {}", if failures.is_empty() { "all contracts hold".into() } else { failures[..failures.len().min(4)].join("; ") }))
}

fn c9_determinism() -> Check {
    let spec = SyntheticSpec {
        groups: 3,
        photos_per_group: 3,
        test_per_group: 1,
        width: 24,
        height: 24,
        seed: 9,
        ..Default::default()
    };
    let config = TrainConfig {
        epochs: 3,
        batch_size: 2,
        seed: 9,
        ..TrainConfig::desk()
    };
    let mut runs = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        let data = gen_synthetic(&spec, dir.path().join("data")).unwrap();
        let out = dir.path().join("run");
        trainer::train(&config, &data.train, &out).unwrap();
        let report = trainer::evaluate(out.join(trainer::FINAL_CHECKPOINT), &data.test_path, EvalMode::Float).unwrap();
        runs.push((
            std::fs::read(out.join(trainer::LOSS_LOG)).unwrap(),
            std::fs::read(out.join(trainer::FINAL_CHECKPOINT)).unwrap(),
            report.to_table(),
            report.to_kv(),
        ));
    }
    let (a, b) = (&runs[0], &runs[1]);
    ensure(
        a == b && !a.0.is_empty(),
        format!(
            "log {} B, checkpoint {} B, report {} B: {}",
            a.0.len(),
            a.1.len(),
            a.3.len(),
            if a == b { "identical" } else { "differ" }
        ),
    )
}

fn c10_throughput() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let config = ModelConfig::desk();
    let m = config.lut_dim;
    let luts = (0..config.luts)
        .map(|_| Lut3D::from_lattice(m, (0..m * m * m * 3).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap())
        .collect();
    let bank = LutBank::new(luts).unwrap();
    let (w, h) = (1024, 1024);
    let img = random_image(&mut rng, w, h);
    let wi = ImageWeights::new((0..config.luts).map(|_| rng.gen_range(0.0..0.5)).collect());
    let wp = PixelWeights::new(config.luts, h, w, (0..config.luts * w * h).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
    let mut best = f64::INFINITY;
    for _ in 0..5 {
        let t = Instant::now();
        let out = fused_transform(&bank, &img, &wi, &wp).unwrap();
        best = best.min(t.elapsed().as_secs_f64());
        std::hint::black_box(out);
    }
    let mps = (w * h) as f64 / best / 1e6;
    ensure(mps >= 10.0, format!("{mps:.1} MP/s on one thread ({} LUTs, {m} bins, {w}x{h})", config.luts))
}

fn main() {
    let criteria: [(&str, fn() -> Check); 10] = [
        ("oracle equivalence", c1_oracles),
        ("gradient suite", c2_gradients),
        ("identity at init", c3_identity),
        ("overfit", c4_overfit),
        ("group-aware loss direction", c5_gam),
        ("edge supervision", c6_edge),
        ("tiling", c7_tiling),
        ("regularizer contracts", c8_regularizers),
        ("determinism", c9_determinism),
        ("fusion throughput", c10_throughput),
    ];
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if filter.as_deref().is_some_and(|f| !name.contains(f)) {
            continue;
        }
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        let (status, detail) = match result {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {:>2} {status} {name} ({secs:.1}s): {detail}", i + 1);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
