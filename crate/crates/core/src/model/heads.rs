//! Plain-value forms of the output heads and losses.
//!
//! The model computes the same quantities on the autograd tape; these
//! functions are the reference contract for a single decoding step and are
//! what the decoder-side diagnostics and tests are checked against.

use crate::tensor::{sigmoid, softmax_inplace, Tensor};

/// Probability floor applied before every log.
pub const LOG_FLOOR: f64 = 1e-12;

/// `softmax((h W_voc + b) / temperature)`.
pub fn vocab_distribution(h_dec: &[f64], w_voc: &Tensor, b_voc: &[f64], temperature: f64) -> Vec<f64> {
    let d = w_voc.rows();
    let v = w_voc.cols();
    debug_assert_eq!(h_dec.len(), d);
    let mut logits = b_voc.to_vec();
    for (i, &h) in h_dec.iter().enumerate() {
        for (l, w) in logits.iter_mut().zip(&w_voc.data()[i * v..(i + 1) * v]) {
            *l += h * w;
        }
    }
    if temperature != 1.0 {
        for l in &mut logits {
            *l /= temperature;
        }
    }
    softmax_inplace(&mut logits);
    logits
}

/// Head-averaged cross attention restricted to the Chae positions and
/// renormalized. Falls back to uniform over the mask if no mass survives.
pub fn average_attention(heads: &[Vec<f64>], chae_mask: &[bool]) -> Vec<f64> {
    assert!(!heads.is_empty(), "at least one attention head");
    let n = chae_mask.len();
    let mut avg = vec![0.0; n];
    for row in heads {
        for (a, x) in avg.iter_mut().zip(row) {
            *a += x;
        }
    }
    let h = heads.len() as f64;
    for a in &mut avg {
        *a /= h;
    }
    let mass: f64 = avg.iter().zip(chae_mask).filter(|(_, &m)| m).map(|(a, _)| a).sum();
    let on = chae_mask.iter().filter(|&&m| m).count();
    for (a, &m) in avg.iter_mut().zip(chae_mask) {
        *a = match (m, mass > 1e-300) {
            (false, _) => 0.0,
            (true, true) => *a / mass,
            (true, false) => 1.0 / on as f64,
        };
    }
    avg
}

/// Context vector over the Chae positions: `sum_j a_j * h_enc[j]`.
pub fn context_vector(attn: &[f64], h_enc: &Tensor) -> Vec<f64> {
    let mut out = vec![0.0; h_enc.cols()];
    for (j, &a) in attn.iter().enumerate() {
        if a == 0.0 {
            continue;
        }
        for (o, h) in out.iter_mut().zip(h_enc.row_slice(j)) {
            *o += a * h;
        }
    }
    out
}

/// `sigmoid(W_p . [h_dec; h_con; e_y])`.
pub fn copy_gate(h_dec: &[f64], h_con: &[f64], e_y: &[f64], w_p: &[f64]) -> f64 {
    debug_assert_eq!(w_p.len(), h_dec.len() + h_con.len() + e_y.len());
    let z: f64 = h_dec
        .iter()
        .chain(h_con)
        .chain(e_y)
        .zip(w_p)
        .map(|(x, w)| x * w)
        .sum();
    sigmoid(z)
}

/// `p_gen * P_voc(y) + (1 - p_gen) * sum_{j: id_j = y} a_j`.
/// `copy_ids[j]` is the vocabulary id at encoder position `j`, or `None`
/// off the Chae segment.
pub fn mixture_distribution(
    p_gen: f64,
    p_voc: &[f64],
    attn: &[f64],
    copy_ids: &[Option<usize>],
) -> Vec<f64> {
    let mut out: Vec<f64> = p_voc.iter().map(|p| p_gen * p).collect();
    let w = 1.0 - p_gen;
    for (&a, id) in attn.iter().zip(copy_ids) {
        if let Some(id) = *id {
            out[id] += w * a;
        }
    }
    out
}

/// The copy half of the mixture on its own: attention scattered to vocab ids.
pub fn copy_distribution(vocab_size: usize, attn: &[f64], copy_ids: &[Option<usize>]) -> Vec<f64> {
    let mut out = vec![0.0; vocab_size];
    for (&a, id) in attn.iter().zip(copy_ids) {
        if let Some(id) = *id {
            out[id] += a;
        }
    }
    out
}

/// `softmax(pooled W_emo + b)`.
pub fn emotion_distribution(pooled: &[f64], w_emo: &Tensor, b_emo: &[f64]) -> Vec<f64> {
    vocab_distribution(pooled, w_emo, b_emo, 1.0)
}

/// Class-weighted cross entropy averaged over active heads; zero when no
/// head is active.
pub fn emotion_loss(probs: &[Vec<f64>], labels: &[usize], active: &[bool], alpha: &[f64]) -> f64 {
    let mut total = 0.0;
    let mut n = 0usize;
    for ((p, &l), &on) in probs.iter().zip(labels).zip(active) {
        if on {
            total += -alpha[l] * p[l].max(LOG_FLOOR).ln();
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        total / n as f64
    }
}

/// Mean per-token negative log likelihood of `targets`.
pub fn nll_loss(step_probs: &[Vec<f64>], targets: &[usize]) -> f64 {
    assert_eq!(step_probs.len(), targets.len());
    let sum: f64 = step_probs
        .iter()
        .zip(targets)
        .map(|(p, &t)| -p[t].max(LOG_FLOOR).ln())
        .sum();
    sum / targets.len() as f64
}

/// `nll + lambda * emo`, or just `nll` when the emotion loss is disabled.
pub fn total_loss(nll: f64, emo: f64, lambda: f64, emotion_enabled: bool) -> f64 {
    if emotion_enabled {
        nll + lambda * emo
    } else {
        nll
    }
}
