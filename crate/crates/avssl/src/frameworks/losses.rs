//! The contrastive loss variants.
//!
//! All losses consume ℓ2-normalized embedding rows, so cosine similarity is
//! a plain dot product. SimCLR uses the temperature-scaled cross-entropy
//! over all in-batch pairs; MoCo contrasts queries against momentum keys
//! with queue negatives; BYOL and SimSiam keep only the positive term as a
//! symmetrized negative cosine with a no-gradient target branch.

use super::{FrameworkError, Queue};
use crate::tensor::{Tape, Tensor, Var};

const NORM_TOLERANCE: f64 = 1e-6;

/// `uᵀv / (‖u‖‖v‖)`, in `[-1, 1]`. Zero vectors are an error.
pub fn cosine_similarity(u: &Tensor, v: &Tensor) -> Result<f64, FrameworkError> {
    if u.shape() != v.shape() {
        return Err(FrameworkError::Tensor(
            crate::tensor::TensorError::ShapeMismatch {
                op: "cosine_similarity",
                lhs: u.shape().to_vec(),
                rhs: v.shape().to_vec(),
            },
        ));
    }
    let nu = u.data().iter().map(|&x| x * x).sum::<f64>().sqrt();
    let nv = v.data().iter().map(|&x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(FrameworkError::ZeroVector);
    }
    let dot: f64 = u.data().iter().zip(v.data()).map(|(&a, &b)| a * b).sum();
    Ok(dot / (nu * nv))
}

fn check_rows_normalized(tape: &Tape, z: Var, op: &'static str) -> Result<(), FrameworkError> {
    let t = tape.value(z);
    let d = t.shape()[1];
    let mut worst = 0.0f64;
    for row in t.data().chunks(d) {
        let norm = row.iter().map(|&v| v * v).sum::<f64>().sqrt();
        worst = worst.max((norm - 1.0).abs());
    }
    if worst > NORM_TOLERANCE {
        return Err(FrameworkError::UnnormalizedRows {
            op,
            deviation: worst,
        });
    }
    Ok(())
}

/// The InfoNCE objective over `2N` normalized embeddings where rows `i` and
/// `i + N` are the two views of one video. For each ordered positive pair
/// the denominator spans all `2N` samples except the anchor itself; the
/// total is the mean over the `2N` ordered pairs.
pub fn infonce_loss(tape: &mut Tape, z: Var, temperature: f64) -> Result<Var, FrameworkError> {
    if temperature <= 0.0 {
        return Err(FrameworkError::BadTemperature(temperature));
    }
    let shape = tape.value(z).shape().to_vec();
    if shape.len() != 2 || shape[0] < 2 || shape[0] % 2 != 0 {
        return Err(FrameworkError::InvalidConfig(format!(
            "infonce expects [2N, d] embeddings with N ≥ 1, got {shape:?}"
        )));
    }
    check_rows_normalized(tape, z, "infonce_loss")?;
    let two_n = shape[0];
    let n = two_n / 2;

    let sim = tape.matmul_nt(z, z)?;
    let logits = tape.scale(sim, 1.0 / temperature);

    // denominator mask: every column except the anchor itself
    let mut denom_mask = Tensor::ones(&[two_n, two_n]);
    for i in 0..two_n {
        denom_mask.data_mut()[i * two_n + i] = 0.0;
    }
    let lse = tape.log_sum_exp_rows_masked(logits, &denom_mask)?;

    // positive positions: row i pairs with row (i + N) mod 2N
    let mut pos_mask = Tensor::zeros(&[two_n, two_n]);
    for i in 0..two_n {
        let j = (i + n) % two_n;
        pos_mask.data_mut()[i * two_n + j] = 1.0;
    }
    let pos_mask = tape.constant(pos_mask);
    let picked = tape.mul(logits, pos_mask)?;
    let pos = tape.row_sum(picked)?;

    let per_anchor = tape.sub(lse, pos)?;
    Ok(tape.mean_all(per_anchor))
}

/// MoCo loss: InfoNCE with positives `(query, its key)` and negatives drawn
/// from the queue. Keys must be momentum-encoder outputs carrying no
/// gradient. Until the queue holds entries, the other in-batch keys serve
/// as negatives.
pub fn moco_loss(
    tape: &mut Tape,
    queries: Var,
    keys: Var,
    queue: &Queue,
    temperature: f64,
) -> Result<Var, FrameworkError> {
    if temperature <= 0.0 {
        return Err(FrameworkError::BadTemperature(temperature));
    }
    if tape.requires_grad(keys) {
        return Err(FrameworkError::TargetRequiresGrad("moco key"));
    }
    let qs = tape.value(queries).shape().to_vec();
    let ks = tape.value(keys).shape().to_vec();
    if qs != ks || qs.len() != 2 {
        return Err(FrameworkError::InvalidConfig(format!(
            "moco expects matching [N, d] queries and keys, got {qs:?} and {ks:?}"
        )));
    }
    check_rows_normalized(tape, queries, "moco_loss")?;
    check_rows_normalized(tape, keys, "moco_loss")?;
    let n = qs[0];

    let qk = tape.mul(queries, keys)?;
    let l_pos = tape.row_sum(qk)?; // [N]
    let l_pos = tape.reshape(l_pos, &[n, 1])?;

    let (l_neg, neg_mask) = match queue.as_tensor() {
        Some(queue_tensor) => {
            let k = queue_tensor.shape()[0];
            let qv = tape.constant(queue_tensor);
            (tape.matmul_nt(queries, qv)?, Tensor::ones(&[n, k]))
        }
        None => {
            // queue not yet warm: other in-batch keys are the negatives
            let l = tape.matmul_nt(queries, keys)?;
            let mut mask = Tensor::ones(&[n, n]);
            for i in 0..n {
                mask.data_mut()[i * n + i] = 0.0;
            }
            (l, mask)
        }
    };

    let logits = tape.concat(1, &[l_pos, l_neg])?;
    let logits = tape.scale(logits, 1.0 / temperature);
    let neg_cols = neg_mask.shape()[1];
    let mut full_mask = Tensor::ones(&[n, 1 + neg_cols]);
    for i in 0..n {
        for j in 0..neg_cols {
            full_mask.data_mut()[i * (1 + neg_cols) + 1 + j] = neg_mask.data()[i * neg_cols + j];
        }
    }
    let lse = tape.log_sum_exp_rows_masked(logits, &full_mask)?;

    let l_pos_flat = tape.reshape(l_pos, &[n])?;
    let l_pos_scaled = tape.scale(l_pos_flat, 1.0 / temperature);
    let per_query = tape.sub(lse, l_pos_scaled)?;
    Ok(tape.mean_all(per_query))
}

/// One direction of a negative-cosine loss: `−mean_i cos(p_i, target_i)`.
/// The prediction rows are normalized here; the target must already be
/// normalized and carry no gradient.
pub fn negative_cosine_direction(
    tape: &mut Tape,
    prediction: Var,
    target: Var,
) -> Result<Var, FrameworkError> {
    if tape.requires_grad(target) {
        return Err(FrameworkError::TargetRequiresGrad("negative-cosine"));
    }
    let ps = tape.value(prediction).shape().to_vec();
    let ts = tape.value(target).shape().to_vec();
    if ps != ts || ps.len() != 2 {
        return Err(FrameworkError::InvalidConfig(format!(
            "negative cosine expects matching [N, d], got {ps:?} and {ts:?}"
        )));
    }
    check_rows_normalized(tape, target, "negative_cosine")?;
    let pn = tape.l2_normalize_rows(prediction)?;
    let prod = tape.mul(pn, target)?;
    let cos = tape.row_sum(prod)?;
    let mean = tape.mean_all(cos);
    Ok(tape.scale(mean, -1.0))
}

/// BYOL: symmetrized negative cosine between online predictions and
/// momentum-target projections — only the positive part of the contrastive
/// objective, no negative samples.
pub fn byol_loss(
    tape: &mut Tape,
    prediction_1: Var,
    target_2: Var,
    prediction_2: Var,
    target_1: Var,
) -> Result<Var, FrameworkError> {
    let d1 = negative_cosine_direction(tape, prediction_1, target_2)?;
    let d2 = negative_cosine_direction(tape, prediction_2, target_1)?;
    let sum = tape.add(d1, d2)?;
    Ok(tape.scale(sum, 0.5))
}

/// SimSiam: BYOL without the momentum encoder — both views share one
/// parameter set and each target branch is cut by stop-gradient.
pub fn simsiam_loss(
    tape: &mut Tape,
    prediction_1: Var,
    stopped_z2: Var,
    prediction_2: Var,
    stopped_z1: Var,
) -> Result<Var, FrameworkError> {
    byol_loss(tape, prediction_1, stopped_z2, prediction_2, stopped_z1)
}
