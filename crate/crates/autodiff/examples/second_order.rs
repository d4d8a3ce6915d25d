//! Differentiates f(x) = sum(tanh(W x)) twice: once for the gradient and
//! again through it for the gradient norm, the step an R1 penalty needs.

use scarcegan_autodiff::{backward, Array, Tape};

fn main() -> scarcegan_autodiff::Result<()> {
    let tape = Tape::new();
    let w = tape.leaf(Array::new(vec![2, 3], vec![0.5, -1.0, 0.3, 0.8, 0.1, -0.4])?);
    let x = tape.leaf(Array::new(vec![3, 1], vec![1.0, 2.0, -1.0])?);
    let f = w.matmul(&x)?.tanh()?.sum()?;
    let gx = backward(&f, &[&x], true)?.remove(0);
    let penalty = gx.square()?.sum()?;
    let gw = backward(&penalty, &[&w], false)?.remove(0);
    println!("f = {:.6}", f.item());
    println!("df/dx = {:?}", gx.data());
    println!("d|df/dx|^2/dW = {:?}", gw.data());
    Ok(())
}
