//! Self-attention with a learned gating model for the image branch.
//!
//! Two sigmoid masks, one for queries and one for keys, are predicted per
//! position from the elementwise product of two projections of the input.
//! Each mask entry is tiled across the feature columns before the scaled
//! dot product. `Q = K = V = S`.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::diff::{Bound, Matrix, ParamId, ParamStore, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GatedSelfAttentionLayer {
    pub fc_q: ParamId,
    pub fc_k: ParamId,
    pub fc_gate: ParamId,
    /// Optional biases for the three gate layers (`1 x d_g`, `1 x d_g`, `1 x 2`).
    pub biases: Option<[ParamId; 3]>,
    pub d_model: usize,
    pub d_gate: usize,
}

impl GatedSelfAttentionLayer {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        d_model: usize,
        d_gate: usize,
        with_bias: bool,
        rng: &mut dyn RngCore,
    ) -> Self {
        let fc_q = store.add_glorot(format!("{prefix}.fc_q"), d_model, d_gate, rng);
        let fc_k = store.add_glorot(format!("{prefix}.fc_k"), d_model, d_gate, rng);
        let fc_gate = store.add_glorot(format!("{prefix}.fc_gate"), d_gate, 2, rng);
        let biases = with_bias.then(|| {
            [
                store.add_zeros(format!("{prefix}.b_q"), 1, d_gate),
                store.add_zeros(format!("{prefix}.b_k"), 1, d_gate),
                store.add_zeros(format!("{prefix}.b_gate"), 1, 2),
            ]
        });
        Self {
            fc_q,
            fc_k,
            fc_gate,
            biases,
            d_model,
            d_gate,
        }
    }
}

/// `M = σ(((Q·FC_q) ⊙ (K·FC_k))·FC_g)`, a `T x 2` matrix whose column 0 is
/// the query mask and column 1 the key mask.
pub fn gating_masks<'t>(q: Var<'t>, k: Var<'t>, layer: &GatedSelfAttentionLayer, params: &Bound<'t>) -> Result<Var<'t>> {
    if q.shape() != k.shape() {
        return Err(Error::dim("gating_masks", q.shape(), k.shape()));
    }
    let mut pq = q.matmul(params.get(layer.fc_q))?;
    let mut pk = k.matmul(params.get(layer.fc_k))?;
    if let Some([bq, bk, _]) = layer.biases {
        pq = pq.add_row(params.get(bq))?;
        pk = pk.add_row(params.get(bk))?;
    }
    let mut logits = pq.mul(pk)?.matmul(params.get(layer.fc_gate))?;
    if let Some([_, _, bg]) = layer.biases {
        logits = logits.add_row(params.get(bg))?;
    }
    Ok(logits.sigmoid())
}

#[derive(Debug, Clone, Copy)]
pub struct GatedAttentionOutput<'t> {
    pub output: Var<'t>,
    pub attention: Var<'t>,
    pub masks: Var<'t>,
}

/// `H = softmax((S ⊙ M̃_q)(S ⊙ M̃_k)ᵀ / √D)·S`.
///
/// `mask_override` (`T x 2`) replaces the predicted masks; an all-ones
/// override reduces the layer to plain scaled self-attention.
pub fn gated_attention<'t>(
    s: Var<'t>,
    layer: &GatedSelfAttentionLayer,
    params: &Bound<'t>,
    mask_override: Option<&Matrix>,
) -> Result<GatedAttentionOutput<'t>> {
    if s.cols() != layer.d_model {
        return Err(Error::dim("gated_attention", s.shape(), (s.rows(), layer.d_model)));
    }
    let masks = match mask_override {
        Some(m) => {
            if m.shape() != (s.rows(), 2) {
                return Err(Error::dim("gated_attention mask", m.shape(), (s.rows(), 2)));
            }
            s.tape().constant(m.clone())
        }
        None => gating_masks(s, s, layer, params)?,
    };
    let mq = masks.slice_cols(0, 1)?;
    let mk = masks.slice_cols(1, 2)?;
    let qm = s.mul_col(mq)?;
    let km = s.mul_col(mk)?;
    let scale = 1.0 / (s.cols() as f64).sqrt();
    let attention = qm.matmul(km.t())?.scale(scale).softmax_rows();
    let output = attention.matmul(s)?;
    Ok(GatedAttentionOutput {
        output,
        attention,
        masks,
    })
}

/// Plain scaled self-attention `softmax(S·Sᵀ / √D)·S`.
pub fn self_attention<'t>(s: Var<'t>) -> Result<Var<'t>> {
    let scale = 1.0 / (s.cols() as f64).sqrt();
    s.matmul(s.t())?.scale(scale).softmax_rows().matmul(s)
}
