//! Reverse-mode autodiff on the tape graph, then a few Adam steps fitting a
//! 1×1 convolution.
//!
//! `cargo run --example autodiff`

use lutfuse::tensor::{Adam, AdamConfig, Graph, ParamStore, Tensor};

fn main() -> lutfuse::Result<()> {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::new(vec![3], vec![1.0, -2.0, 3.0])?, true);
    let y = g.leaf(Tensor::new(vec![3], vec![0.5, 0.5, 0.5])?, true);
    let xy = g.mul(x, y)?;
    let r = g.relu(xy)?;
    let loss = g.sum(r)?;
    g.backward(loss)?;
    println!("loss {}", g.value(loss)?.item());
    println!("d/dx {:?}", g.grad(x)?.map(|t| t.data().to_vec()));
    println!("d/dy {:?}", g.grad(y)?.map(|t| t.data().to_vec()));

    // Fit w, b so that conv1x1(x) = 2x + 1 on a 2x2 single-channel image.
    let mut store = ParamStore::new();
    let w = store.add("w", Tensor::new(vec![1, 1, 1, 1], vec![0.0])?)?;
    let b = store.add("b", Tensor::new(vec![1], vec![0.0])?)?;
    let input = Tensor::new(vec![1, 1, 2, 2], vec![0.0, 0.25, 0.5, 1.0])?;
    let target = Tensor::new(vec![1, 1, 2, 2], vec![1.0, 1.5, 2.0, 3.0])?;
    let mut adam = Adam::new(AdamConfig::with_lr(0.05));
    for step in 0..=400 {
        let mut g = Graph::new();
        let (xv, wv, bv) = (g.constant(input.clone()), g.param(&store, w), g.param(&store, b));
        let out = g.conv2d(xv, wv, bv, 1, 0)?;
        let t = g.constant(target.clone());
        let d = g.sub(out, t)?;
        let sq = g.square(d)?;
        let l = g.mean(sq)?;
        if step % 100 == 0 {
            println!(
                "step {step:>3}  loss {:.3e}  w {:.4}  b {:.4}",
                g.value(l)?.item(),
                store.get(w).value.item(),
                store.get(b).value.item()
            );
        }
        g.backward(l)?;
        store.accumulate_grads(&g);
        adam.step(&mut store)?;
    }
    Ok(())
}
