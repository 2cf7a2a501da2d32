//! Reverse-mode gradients on the tape, checked against central differences,
//! then the full gradient suite.
//!
//! `cargo run --example autodiff`

use lff::adapter::AdapterVariant;
use lff::gradcheck::{model_suite, numeric_gradient, op_suite, relative_error};
use lff::tensor::{GradTape, KeyMask, Rng, Tensor};

/// `sum(attention(norm(x), x, x) ⊙ w)` and its gradient in `x`.
fn loss(x: &Tensor, w: &Tensor) -> lff::Result<(f64, Tensor)> {
    let tape = GradTape::new();
    let xv = tape.param(x.clone());
    let q = xv.layer_norm(None, None, 1e-6)?;
    let att = q.attention(xv, xv, 2, &KeyMask::Full)?;
    let l = att.mul(tape.constant(w.clone()))?.sum();
    let grads = tape.backward(l)?;
    Ok((l.value().item()?, grads.get_or_zeros(xv)))
}

fn main() -> lff::Result<()> {
    let mut rng = Rng::new(3);
    let x = rng.gauss([4, 6]);
    let w = rng.gauss([4, 6]);
    let (value, grad) = loss(&x, &w)?;
    let numeric = numeric_gradient(&x, 1e-6, |p| loss(p, &w).map(|r| r.0))?;
    println!("loss {value:.6}; tape vs finite differences: {:.2e}", relative_error(&grad, &numeric));

    let mut results = op_suite(3)?;
    results.extend(model_suite(3, AdapterVariant::Full)?);
    for r in &results {
        println!("{:40} {:.2e}", r.name, r.rel_err);
    }
    Ok(())
}
