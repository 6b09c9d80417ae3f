use super::{Backward, Graph, Tensor, Var};
use crate::error::{Error, Result};

struct AddRule;
struct SubRule;
struct MulRule;
struct ScaleRule(f64);
struct SquareRule;
struct SumRule;
struct MeanRule;
struct ReluRule;
struct SoftmaxRule;
struct AvgPoolRule;

impl Backward for AddRule {
    fn backward(&self, _: &[&Tensor], _: &Tensor, g: &[f64], _: &[bool]) -> Vec<Option<Vec<f64>>> {
        vec![Some(g.to_vec()), Some(g.to_vec())]
    }
}

impl Backward for SubRule {
    fn backward(&self, _: &[&Tensor], _: &Tensor, g: &[f64], _: &[bool]) -> Vec<Option<Vec<f64>>> {
        vec![Some(g.to_vec()), Some(g.iter().map(|v| -v).collect())]
    }
}

impl Backward for MulRule {
    fn backward(&self, x: &[&Tensor], _: &Tensor, g: &[f64], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let (a, b) = (x[0].data(), x[1].data());
        vec![
            needs[0].then(|| g.iter().zip(b).map(|(g, b)| g * b).collect()),
            needs[1].then(|| g.iter().zip(a).map(|(g, a)| g * a).collect()),
        ]
    }
}

impl Backward for ScaleRule {
    fn backward(&self, _: &[&Tensor], _: &Tensor, g: &[f64], _: &[bool]) -> Vec<Option<Vec<f64>>> {
        vec![Some(g.iter().map(|v| v * self.0).collect())]
    }
}

impl Backward for SquareRule {
    fn backward(&self, x: &[&Tensor], _: &Tensor, g: &[f64], _: &[bool]) -> Vec<Option<Vec<f64>>> {
        vec![Some(
            g.iter().zip(x[0].data()).map(|(g, x)| 2.0 * g * x).collect(),
        )]
    }
}

impl Backward for SumRule {
    fn backward(&self, x: &[&Tensor], _: &Tensor, g: &[f64], _: &[bool]) -> Vec<Option<Vec<f64>>> {
        vec![Some(vec![g[0]; x[0].numel()])]
    }
}

impl Backward for MeanRule {
    fn backward(&self, x: &[&Tensor], _: &Tensor, g: &[f64], _: &[bool]) -> Vec<Option<Vec<f64>>> {
        let n = x[0].numel();
        vec![Some(vec![g[0] / n as f64; n])]
    }
}

impl Backward for ReluRule {
    fn backward(&self, x: &[&Tensor], _: &Tensor, g: &[f64], _: &[bool]) -> Vec<Option<Vec<f64>>> {
        // Subgradient 0 at 0.
        vec![Some(
            g.iter()
                .zip(x[0].data())
                .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                .collect(),
        )]
    }
}

impl Backward for SoftmaxRule {
    fn backward(&self, x: &[&Tensor], y: &Tensor, g: &[f64], _: &[bool]) -> Vec<Option<Vec<f64>>> {
        let [b, c, h, w] = x[0].dims4().expect("checked in forward");
        let hw = h * w;
        let y = y.data();
        let mut out = vec![0.0; y.len()];
        for n in 0..b {
            let base = n * c * hw;
            for p in 0..hw {
                let dot: f64 = (0..c).map(|k| g[base + k * hw + p] * y[base + k * hw + p]).sum();
                for k in 0..c {
                    let i = base + k * hw + p;
                    out[i] = y[i] * (g[i] - dot);
                }
            }
        }
        vec![Some(out)]
    }
}

impl Backward for AvgPoolRule {
    fn backward(&self, x: &[&Tensor], _: &Tensor, g: &[f64], _: &[bool]) -> Vec<Option<Vec<f64>>> {
        let [b, c, h, w] = x[0].dims4().expect("checked in forward");
        let hw = h * w;
        let mut out = vec![0.0; b * c * hw];
        for (bc, chunk) in out.chunks_exact_mut(hw).enumerate() {
            chunk.fill(g[bc] / hw as f64);
        }
        vec![Some(out)]
    }
}

fn same_shape(a: &Tensor, b: &Tensor, op: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "{op}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

impl Graph {
    fn zip_with(&mut self, a: Var, b: Var, op: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a)?, self.value(b)?);
        same_shape(ta, tb, op)?;
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Result<Tensor> {
        let t = self.value(a)?;
        Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| f(v)).collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with(a, b, "add", |x, y| x + y)?;
        self.apply(&[a, b], out, AddRule)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with(a, b, "sub", |x, y| x - y)?;
        self.apply(&[a, b], out, SubRule)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with(a, b, "mul", |x, y| x * y)?;
        self.apply(&[a, b], out, MulRule)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let out = self.map(a, |v| v * factor)?;
        self.apply(&[a], out, ScaleRule(factor))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let out = self.map(a, |v| v * v)?;
        self.apply(&[a], out, SquareRule)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.map(a, |v| v.max(0.0))?;
        self.apply(&[a], out, ReluRule)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a)?.data().iter().sum();
        self.apply(&[a], Tensor::scalar(s), SumRule)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a)?;
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        self.apply(&[a], Tensor::scalar(s), MeanRule)
    }

    /// Sum of several scalars.
    pub fn add_all(&mut self, terms: &[Var]) -> Result<Var> {
        let (&first, rest) = terms
            .split_first()
            .ok_or_else(|| Error::Invalid("add_all of no terms".into()))?;
        rest.iter().try_fold(first, |acc, &t| self.add(acc, t))
    }

    /// Softmax over the channel axis of a `[B, C, H, W]` tensor, independently
    /// at every pixel.
    pub fn softmax_channels(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a)?;
        let [b, c, h, w] = t.dims4()?;
        let hw = h * w;
        let x = t.data();
        let mut y = vec![0.0; x.len()];
        for n in 0..b {
            let base = n * c * hw;
            for p in 0..hw {
                let max = (0..c)
                    .map(|k| x[base + k * hw + p])
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for k in 0..c {
                    let e = (x[base + k * hw + p] - max).exp();
                    y[base + k * hw + p] = e;
                    z += e;
                }
                for k in 0..c {
                    y[base + k * hw + p] /= z;
                }
            }
        }
        let out = Tensor::new(t.shape().to_vec(), y)?;
        self.apply(&[a], out, SoftmaxRule)
    }

    /// `[B, C, H, W]` → `[B, C, 1, 1]` spatial mean.
    pub fn global_avg_pool(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a)?;
        let [b, c, h, w] = t.dims4()?;
        let hw = h * w;
        let data = t
            .data()
            .chunks_exact(hw)
            .map(|ch| ch.iter().sum::<f64>() / hw as f64)
            .collect();
        let out = Tensor::new(vec![b, c, 1, 1], data)?;
        self.apply(&[a], out, AvgPoolRule)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::{assert_close, numeric_grad};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn relu_values_and_subgradient() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap(), true);
        let y = g.relu(x).unwrap();
        assert_eq!(g.value(y).unwrap().data(), &[0.0, 0.0, 2.0]);
        let s = g.sum(y).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().unwrap().data(), &[0.0, 0.0, 1.0]);

        let mut g = Graph::new();
        let x = g.leaf(Tensor::new(vec![2], vec![-1.0, 2.0]).unwrap(), true);
        let y = g.relu(x).unwrap();
        let s = g.sum(y).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn relu_of_nonnegative_is_identity() {
        let mut g = Graph::new();
        let data = vec![0.0, 0.5, 3.0, 7.25];
        let x = g.constant(Tensor::new(vec![4], data.clone()).unwrap());
        let y = g.relu(x).unwrap();
        assert_eq!(g.value(y).unwrap().data(), &data[..]);
    }

    #[test]
    fn softmax_constant_is_uniform() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::full(vec![1, 4, 2, 2], 3.5));
        let y = g.softmax_channels(x).unwrap();
        assert!(g.value(y).unwrap().data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn softmax_saturates() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![1, 3, 1, 1], vec![1000.0, 0.0, 0.0]).unwrap());
        let y = g.softmax_channels(x).unwrap();
        let v = g.value(y).unwrap().data();
        assert!((v[0] - 1.0).abs() < 1e-6 && v[1] < 1e-6 && v[2] < 1e-6);
    }

    #[test]
    fn softmax_matches_direct_formula() {
        let logits = [0.1f64, 0.7, 0.2];
        let z: f64 = logits.iter().map(|v| v.exp()).sum();
        let want: Vec<f64> = logits.iter().map(|v| v.exp() / z).collect();
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![1, 3, 1, 1], logits.to_vec()).unwrap());
        let y = g.softmax_channels(x).unwrap();
        for (a, b) in g.value(y).unwrap().data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn sum_grad_is_ones() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::full(vec![2, 3, 4], 0.3), true);
        let s = g.sum(x).unwrap();
        g.backward(s).unwrap();
        assert!(g.grad(x).unwrap().unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn mse_grad_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xt = rand_tensor(&mut rng, vec![2, 5]);
        let tt = rand_tensor(&mut rng, vec![2, 5]);
        let mut g = Graph::new();
        let x = g.leaf(xt.clone(), true);
        let t = g.constant(tt.clone());
        let d = g.sub(x, t).unwrap();
        let sq = g.square(d).unwrap();
        let loss = g.mean(sq).unwrap();
        g.backward(loss).unwrap();
        let grad = g.grad(x).unwrap().unwrap();
        for i in 0..10 {
            let want = 2.0 * (xt.data()[i] - tt.data()[i]) / 10.0;
            assert!((grad.data()[i] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn backward_accumulates_additively() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::new(vec![2], vec![1.0, -2.0]).unwrap(), true);
        let y = g.square(x).unwrap();
        let s = g.sum(y).unwrap();
        g.backward(s).unwrap();
        let once = g.grad(x).unwrap().unwrap().clone();
        g.backward(s).unwrap();
        let twice = g.grad(x).unwrap().unwrap();
        for (a, b) in once.data().iter().zip(twice.data()) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn backward_rejects_non_scalar_and_stale_handles() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::zeros(vec![3]), true);
        assert!(matches!(g.backward(x), Err(Error::NonScalarLoss(_))));
        let s = g.sum(x).unwrap();
        g.clear();
        assert!(matches!(g.backward(s), Err(Error::GraphConsumed)));
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(vec![2]));
        let b = g.constant(Tensor::zeros(vec![3]));
        assert!(matches!(g.add(a, b), Err(Error::Shape(_))));
    }

    #[test]
    fn elementwise_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a0 = rand_tensor(&mut rng, vec![1, 3, 2, 2]);
        let b0 = rand_tensor(&mut rng, vec![1, 3, 2, 2]);
        let w0 = rand_tensor(&mut rng, vec![1, 3, 2, 2]);
        let eval = |a: &Tensor, b: &Tensor| -> (f64, Graph, Var, Var) {
            let mut g = Graph::new();
            let va = g.leaf(a.clone(), true);
            let vb = g.leaf(b.clone(), true);
            let w = g.constant(w0.clone());
            let m = g.mul(va, vb).unwrap();
            let s = g.sub(m, vb).unwrap();
            let r = g.relu(s).unwrap();
            let sm = g.softmax_channels(r).unwrap();
            let sc = g.scale(sm, 1.7).unwrap();
            let p = g.mul(sc, w).unwrap();
            let pooled = g.global_avg_pool(p).unwrap();
            let q = g.square(pooled).unwrap();
            let l = g.sum(q).unwrap();
            let v = g.value(l).unwrap().item();
            (v, g, va, vb)
        };
        let (_, mut g, va, vb) = eval(&a0, &b0);
        let loss = Var {
            graph: va.graph,
            index: g.len() - 1,
        };
        g.backward(loss).unwrap();
        let ga = g.grad(va).unwrap().unwrap().data().to_vec();
        let gb = g.grad(vb).unwrap().unwrap().data().to_vec();
        let na = numeric_grad(&a0, 1e-6, |a| eval(a, &b0).0);
        let nb = numeric_grad(&b0, 1e-6, |b| eval(&a0, b).0);
        assert_close(&ga, &na, 1e-4, 1e-8, "a");
        assert_close(&gb, &nb, 1e-4, 1e-8, "b");
    }
}
