//! The four contrastive losses on toy embeddings.
//!
//! Run with: cargo run --release --example frameworks_tour

use avssl::frameworks::{
    byol_loss, cosine_similarity, infonce_loss, moco_loss, simsiam_loss, Queue,
};
use avssl::rng::substream;
use avssl::tensor::{Tape, Tensor};
use rand::Rng;

fn normalized(rows: usize, d: usize, seed: u64) -> Tensor {
    let mut rng = substream(seed, 0x60, 0, 0);
    let mut data = Vec::with_capacity(rows * d);
    for _ in 0..rows {
        let row: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm = row.iter().map(|&v| v * v).sum::<f64>().sqrt();
        data.extend(row.into_iter().map(|v| v / norm));
    }
    Tensor::new(vec![rows, d], data).unwrap()
}

fn main() {
    println!(
        "cosine([1,1],[1,0]) = {:.8}",
        cosine_similarity(
            &Tensor::from_vec(vec![1.0, 1.0]),
            &Tensor::from_vec(vec![1.0, 0.0])
        )
        .unwrap()
    );

    // SimCLR: InfoNCE over 2N embeddings, pairs (i, i+N)
    let n = 4;
    let z = normalized(2 * n, 16, 7);
    let mut tape = Tape::new();
    let zv = tape.leaf(z, true);
    let loss = infonce_loss(&mut tape, zv, 0.1).unwrap();
    println!("simclr: infonce over {} embeddings = {:.4}", 2 * n, tape.value(loss).item());
    tape.backward(loss).unwrap();
    println!("        gradient reaches the embeddings: {}", tape.grad(zv).is_some());

    // MoCo: queries vs momentum keys, queue negatives, keys carry no grad
    let mut queue = Queue::new(16, 64);
    queue.enqueue_batch(&normalized(32, 16, 8)).unwrap();
    let mut tape = Tape::new();
    let q = tape.leaf(normalized(n, 16, 9), true);
    let k = tape.constant(normalized(n, 16, 10));
    let loss = moco_loss(&mut tape, q, k, &queue, 0.1).unwrap();
    println!("moco:   loss with {} queue negatives = {:.4}", queue.len(), tape.value(loss).item());
    tape.backward(loss).unwrap();
    println!("        momentum keys get gradient: {}", tape.grad(k).is_some());

    // BYOL: only the positive term, symmetrized negative cosine
    let mut tape = Tape::new();
    let p1 = tape.leaf(normalized(n, 16, 11), true);
    let p2 = tape.leaf(normalized(n, 16, 12), true);
    let t1 = tape.constant(normalized(n, 16, 13));
    let t2 = tape.constant(normalized(n, 16, 14));
    let loss = byol_loss(&mut tape, p1, t2, p2, t1).unwrap();
    println!("byol:   symmetrized negative cosine = {:.4}", tape.value(loss).item());

    // SimSiam: one encoder, stop-gradient on each target branch
    let mut tape = Tape::new();
    let raw1 = tape.leaf(normalized(n, 16, 15), true);
    let raw2 = tape.leaf(normalized(n, 16, 16), true);
    let z1 = tape.l2_normalize_rows(raw1).unwrap();
    let z2 = tape.l2_normalize_rows(raw2).unwrap();
    let t1 = tape.stop_gradient(z1);
    let t2 = tape.stop_gradient(z2);
    let loss = simsiam_loss(&mut tape, raw1, t2, raw2, t1).unwrap();
    println!("simsiam: loss = {:.4}", tape.value(loss).item());
    tape.backward(loss).unwrap();
    println!(
        "        stop-gradient targets receive gradient: {}",
        tape.grad(t1).is_some() || tape.grad(t2).is_some()
    );

    // identical views at tau=1 give exactly zero InfoNCE for N=1
    let mut tape = Tape::new();
    let z = tape.leaf(Tensor::new(vec![2, 2], vec![1.0, 0.0, 1.0, 0.0]).unwrap(), true);
    let loss = infonce_loss(&mut tape, z, 1.0).unwrap();
    println!("degenerate N=1 identical pair: loss = {}", tape.value(loss).item());
}
