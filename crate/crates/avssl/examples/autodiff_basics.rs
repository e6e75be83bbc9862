//! Tensors, the computation tape, and reverse-mode gradients.
//!
//! Run with: cargo run --release --example autodiff_basics

use avssl::tensor::check::{finite_difference, max_rel_err, DEFAULT_FD_STEP};
use avssl::tensor::{Tape, Tensor};

fn main() {
    // forward arithmetic on the tape
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::from_vec(vec![1.0, 2.0, 3.0]), true);
    let y = tape.leaf(Tensor::from_vec(vec![0.5, -1.0, 2.0]), true);
    let prod = tape.mul(x, y).unwrap();
    let activated = tape.relu(prod);
    let loss = tape.sum_all(activated);
    println!("forward: sum(relu(x ∘ y)) = {}", tape.value(loss).item());
    println!("recorded ops: {:?}", tape.record_ops());

    // gradients populate on backward
    tape.backward(loss).unwrap();
    println!("dx = {:?}", tape.grad(x).unwrap());
    println!("dy = {:?}", tape.grad(y).unwrap());

    // the same gradients from central finite differences
    let inputs = [
        Tensor::from_vec(vec![1.0, 2.0, 3.0]),
        Tensor::from_vec(vec![0.5, -1.0, 2.0]),
    ];
    let numeric = finite_difference(
        |ins: &[Tensor]| {
            let mut t = Tape::new();
            let a = t.leaf(ins[0].clone(), false);
            let b = t.leaf(ins[1].clone(), false);
            let p = t.mul(a, b).unwrap();
            let r = t.relu(p);
            let s = t.sum_all(r);
            t.value(s).item()
        },
        &inputs,
        DEFAULT_FD_STEP,
    );
    let err = max_rel_err(tape.grad(x).unwrap(), numeric[0].data(), 1e-8);
    println!("max relative error vs finite differences: {err:.2e}");

    // a convolution graph, gradient-checked the same way
    let image = Tensor::new(vec![1, 1, 5, 5], (0..25).map(|i| i as f64 / 25.0).collect()).unwrap();
    let kernel = Tensor::new(vec![2, 1, 3, 3], (0..18).map(|i| (i as f64 - 9.0) / 9.0).collect())
        .unwrap();
    let mut tape = Tape::new();
    let xi = tape.leaf(image.clone(), true);
    let ki = tape.leaf(kernel.clone(), true);
    let conv = tape.conv2d(xi, ki, (1, 1), (1, 1)).unwrap();
    let pooled = tape.spatial_mean(conv).unwrap();
    let loss = tape.sum_all(pooled);
    tape.backward(loss).unwrap();
    let numeric = finite_difference(
        |ins: &[Tensor]| {
            let mut t = Tape::new();
            let a = t.leaf(ins[0].clone(), false);
            let b = t.leaf(ins[1].clone(), false);
            let c = t.conv2d(a, b, (1, 1), (1, 1)).unwrap();
            let m = t.spatial_mean(c).unwrap();
            let s = t.sum_all(m);
            t.value(s).item()
        },
        &[image, kernel],
        DEFAULT_FD_STEP,
    );
    println!(
        "conv2d kernel gradient rel. err: {:.2e}",
        max_rel_err(tape.grad(ki).unwrap(), numeric[1].data(), 1e-8)
    );

    // stop-gradient blocks flow without changing values
    let mut tape = Tape::new();
    let a = tape.leaf(Tensor::from_vec(vec![1.0, 2.0]), true);
    let b = tape.leaf(Tensor::from_vec(vec![3.0, 4.0]), true);
    let stopped = tape.stop_gradient(a);
    let prod = tape.mul(stopped, b).unwrap();
    let loss = tape.sum_all(prod);
    tape.backward(loss).unwrap();
    println!(
        "stop_gradient: grad(a) = {:?}, grad(b) = {:?}",
        tape.grad(a),
        tape.grad(b).unwrap()
    );
}
