//! Gated recurrent cell shared by the region encoder, the caption
//! decoder and the question encoder. Gate convention:
//!
//! ```text
//! z = sigmoid(Wz x + Uz h + bz)
//! r = sigmoid(Wr x + Ur h + br)
//! hcand = tanh(Wh x + Uh (r * h) + bh)
//! h' = (1 - z) * h + z * hcand
//! ```

use datn_core::{Graph, NodeId};
use datn_core::rng::ChaCha8Rng;

use crate::params::{glorot_matrix, Bound, ParamSet};
use crate::Result;

use datn_core::Tensor;

/// Registers the nine tensors of one GRU under `prefix`.
pub fn register_gru(
    params: &mut ParamSet,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    input_width: usize,
    hidden_width: usize,
) {
    for gate in ["z", "r", "h"] {
        params.insert(
            format!("{prefix}.w{gate}"),
            glorot_matrix(rng, hidden_width, input_width),
        );
        params.insert(
            format!("{prefix}.u{gate}"),
            glorot_matrix(rng, hidden_width, hidden_width),
        );
        params.insert(format!("{prefix}.b{gate}"), Tensor::zeros(&[hidden_width]));
    }
}

/// One step: consumes `x` and `h_prev`, returns the next hidden state.
pub fn gru_cell(
    g: &mut Graph,
    bound: &Bound,
    prefix: &str,
    x: NodeId,
    h_prev: NodeId,
) -> Result<NodeId> {
    let gate = |g: &mut Graph, w: &str, u: &str, b: &str, h: NodeId| -> Result<NodeId> {
        let wx = g.matmul(bound.id(w), x)?;
        let uh = g.matmul(bound.id(u), h)?;
        let s = g.add(wx, uh)?;
        Ok(g.add(s, bound.id(b))?)
    };
    let (wz, uz, bz) = (
        format!("{prefix}.wz"),
        format!("{prefix}.uz"),
        format!("{prefix}.bz"),
    );
    let (wr, ur, br) = (
        format!("{prefix}.wr"),
        format!("{prefix}.ur"),
        format!("{prefix}.br"),
    );
    let (wh, uh, bh) = (
        format!("{prefix}.wh"),
        format!("{prefix}.uh"),
        format!("{prefix}.bh"),
    );

    let z_pre = gate(g, &wz, &uz, &bz, h_prev)?;
    let z = g.sigmoid(z_pre);
    let r_pre = gate(g, &wr, &ur, &br, h_prev)?;
    let r = g.sigmoid(r_pre);

    let rh = g.mul(r, h_prev)?;
    let wx = g.matmul(bound.id(&wh), x)?;
    let urh = g.matmul(bound.id(&uh), rh)?;
    let cand_sum = g.add(wx, urh)?;
    let cand_pre = g.add(cand_sum, bound.id(&bh))?;
    let cand = g.tanh(cand_pre);

    let keep = g.affine(z, -1.0, 1.0); // 1 - z
    let kept = g.mul(keep, h_prev)?;
    let new = g.mul(z, cand)?;
    Ok(g.add(kept, new)?)
}
