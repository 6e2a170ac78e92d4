//! Scalar forward passes over named parameter arrays.
//!
//! Accumulation order follows the usual "bias, then inputs in index order"
//! convention so results are comparable bit for bit.

use maser_core::nn::{NetParams, Tensor};

fn arr<'a>(p: &'a NetParams, name: &str) -> &'a Tensor {
    p.get(name).unwrap_or_else(|| panic!("missing parameter array `{name}`"))
}

fn dense(x: &[f64], w: &Tensor, b: &Tensor) -> Vec<f64> {
    let inner = w.rows();
    assert_eq!(x.len(), inner, "input width");
    let mut out = b.data().to_vec();
    for (k, &xv) in x.iter().enumerate() {
        if xv == 0.0 {
            continue;
        }
        for (j, o) in out.iter_mut().enumerate() {
            *o += xv * w.get(k, j);
        }
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Q-vector at every step of an observation sequence, from a zero hidden state.
pub fn utility_q_sequence(p: &NetParams, obs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let hid = arr(p, "gru.wh").rows();
    let mut h = vec![0.0; hid];
    let mut out = Vec::with_capacity(obs.len());
    for o in obs {
        let a: Vec<f64> = dense(o, arr(p, "fc1.w"), arr(p, "fc1.b")).into_iter().map(|v| v.max(0.0)).collect();
        let gi = dense(&a, arr(p, "gru.wi"), arr(p, "gru.bi"));
        let gh = dense(&h, arr(p, "gru.wh"), arr(p, "gru.bh"));
        let mut next = vec![0.0; hid];
        for j in 0..hid {
            let r = sigmoid(gi[j] + gh[j]);
            let z = sigmoid(gi[hid + j] + gh[hid + j]);
            let n = (gi[2 * hid + j] + r * gh[2 * hid + j]).tanh();
            next[j] = (1.0 - z) * n + z * h[j];
        }
        h = next;
        out.push(dense(&h, arr(p, "fc2.w"), arr(p, "fc2.b")));
    }
    out
}

/// Monotonic mixer total for one joint input.
pub fn mixer_total(p: &NetParams, q: &[f64], state: &[f64]) -> f64 {
    let n = q.len();
    let w1: Vec<f64> = dense(state, arr(p, "hyper_w1.w"), arr(p, "hyper_w1.b")).iter().map(|v| v.abs()).collect();
    let e = w1.len() / n;
    let b1 = dense(state, arr(p, "hyper_b1.w"), arr(p, "hyper_b1.b"));
    let mut hidden = vec![0.0; e];
    for (i, &qi) in q.iter().enumerate() {
        if qi == 0.0 {
            continue;
        }
        for (j, hj) in hidden.iter_mut().enumerate() {
            *hj += qi * w1[i * e + j];
        }
    }
    let hidden: Vec<f64> = hidden
        .iter()
        .zip(&b1)
        .map(|(h, b)| h + b)
        .map(|x| if x > 0.0 { x } else { x.exp_m1() })
        .collect();
    let wf: Vec<f64> = dense(state, arr(p, "hyper_wf.w"), arr(p, "hyper_wf.b")).iter().map(|v| v.abs()).collect();
    let v1: Vec<f64> = dense(state, arr(p, "value1.w"), arr(p, "value1.b")).into_iter().map(|v| v.max(0.0)).collect();
    let v = dense(&v1, arr(p, "value2.w"), arr(p, "value2.b"))[0];
    let y: f64 = hidden.iter().zip(&wf).map(|(a, b)| a * b).sum();
    y + v
}

/// Embedding of one observation by a representation net.
pub fn repr_embed(p: &NetParams, obs: &[f64]) -> Vec<f64> {
    let h: Vec<f64> = dense(obs, arr(p, "fc1.w"), arr(p, "fc1.b")).into_iter().map(|v| v.max(0.0)).collect();
    dense(&h, arr(p, "fc2.w"), arr(p, "fc2.b"))
}
