//! Build a computation graph, take gradients, then gradients of gradients.
//!
//! ```text
//! cargo run --example autodiff_basics
//! ```

use rankgan::autodiff::{finite_difference_check, grad, GradOrder, Tensor, Var};

fn main() -> rankgan::Result<()> {
    // f(x, w) = mean(tanh(x w)^2) for a small batch.
    let x = Var::constant(Tensor::matrix(&[
        vec![0.5, -1.0, 0.25],
        vec![1.5, 0.0, -0.75],
    ])?);
    let w = Var::leaf(Tensor::matrix(&[
        vec![0.2, -0.4],
        vec![0.7, 0.1],
        vec![-0.3, 0.9],
    ])?);

    let f = x.matmul(&w)?.tanh().square().mean();
    println!("f = {:.6}", f.value().item()?);

    let df = grad(&f, &[&w], true)?;
    println!("df/dw (first row) = {:?}", &df[0].value().data()[..2]);

    // The gradient norm is itself differentiable: double backpropagation.
    let norm = df[0].square().sum().sqrt();
    let ddf = grad(&norm, &[&w], false)?;
    println!("d|df/dw|/dw (first row) = {:?}", &ddf[0].value().data()[..2]);

    // Check the whole construction against central finite differences.
    let x_t = x.value().clone();
    let check = move |ps: &[Var]| -> rankgan::Result<Var> {
        Ok(Var::constant(x_t.clone()).matmul(&ps[0])?.tanh().square().mean())
    };
    let w_t = w.value().clone();
    let first = finite_difference_check(&check, std::slice::from_ref(&w_t), 1e-5, GradOrder::First)?;
    let second = finite_difference_check(&check, &[w_t], 1e-4, GradOrder::Second)?;
    println!("max relative error, first order:  {first:.3e}");
    println!("max relative error, second order: {second:.3e}");
    Ok(())
}
