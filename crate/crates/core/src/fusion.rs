//! Fusion of the self-attended and transported features of both branches.
//!
//! Both heads take the feature-axis concatenations `C = [F, X']` and
//! `S = [H, S']`, stored row-major as `n x d'` with `d' = 2·D`. The
//! co-attention head works in the column-major `d' x n` convention, so it
//! transposes at entry; the attention-reduction head works on rows directly.
//! Heads emit raw two-class logits.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::diff::{concat_cols, dropout, Bound, Mode, ParamId, ParamStore, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct FusedInputs<'t> {
    /// Text features `[F, X']`, `n x d'`.
    pub c: Var<'t>,
    /// Image features `[H, S']`, `n x d'`.
    pub s: Var<'t>,
}

impl FusedInputs<'_> {
    pub fn width(&self) -> usize {
        self.c.cols()
    }
}

/// `C = [F, X']`, `S = [H, S']`.
pub fn build_fused_inputs<'t>(f: Var<'t>, x_t: Var<'t>, h: Var<'t>, s_t: Var<'t>) -> Result<FusedInputs<'t>> {
    let shape = f.shape();
    for v in [x_t, h, s_t] {
        if v.shape() != shape {
            return Err(Error::dim("build_fused_inputs", shape, v.shape()));
        }
    }
    Ok(FusedInputs {
        c: concat_cols(&[f, x_t])?,
        s: concat_cols(&[h, s_t])?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionKind {
    CoAttention,
    AttnFusion,
    /// Mean-pool both inputs, concatenate, one dense layer. Ablation only.
    Concat,
}

impl std::str::FromStr for FusionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "co-attention" | "coattention" => Ok(FusionKind::CoAttention),
            "attn-fusion" | "attention-fusion" | "attention" => Ok(FusionKind::AttnFusion),
            "concat" | "concatenation" => Ok(FusionKind::Concat),
            other => Err(Error::Parameter(format!("unknown fusion head {other:?}"))),
        }
    }
}

impl std::fmt::Display for FusionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FusionKind::CoAttention => "co-attention",
            FusionKind::AttnFusion => "attn-fusion",
            FusionKind::Concat => "concat",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionDims {
    /// Co-attention hidden size `k`.
    pub k: usize,
    /// Width of the co-attention dense layer.
    pub hidden: usize,
    /// Width of the reduction MLPs.
    pub mlp_hidden: usize,
    /// Common fused dimension `d_z`.
    pub d_z: usize,
    pub dropout_concat: f64,
    pub dropout_hidden: f64,
    pub dropout_mlp: f64,
}

impl Default for FusionDims {
    fn default() -> Self {
        Self {
            k: 40,
            hidden: 128,
            mlp_hidden: 128,
            d_z: 128,
            dropout_concat: 0.5,
            dropout_hidden: 0.2,
            dropout_mlp: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Dense {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, output: usize, rng: &mut dyn RngCore) -> Self {
        Self {
            weight: store.add_glorot(format!("{name}.weight"), input, output, rng),
            bias: store.add_zeros(format!("{name}.bias"), 1, output),
        }
    }

    pub fn forward<'t>(&self, x: Var<'t>, params: &Bound<'t>) -> Result<Var<'t>> {
        x.matmul(params.get(self.weight))?.add_row(params.get(self.bias))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoAttentionHead {
    /// `d' x d'` affinity weight.
    pub w_l: ParamId,
    /// `k x d'`, shared by both attention-map equations.
    pub w_s: ParamId,
    pub w_c: ParamId,
    pub w_hs: ParamId,
    pub w_hc: ParamId,
    pub dense: Dense,
    pub out: Dense,
    pub dims: FusionDims,
}

impl CoAttentionHead {
    pub fn new(store: &mut ParamStore, prefix: &str, width: usize, dims: FusionDims, rng: &mut dyn RngCore) -> Self {
        Self {
            w_l: store.add_glorot(format!("{prefix}.w_l"), width, width, rng),
            w_s: store.add_glorot(format!("{prefix}.w_s"), dims.k, width, rng),
            w_c: store.add_glorot(format!("{prefix}.w_c"), dims.k, width, rng),
            w_hs: store.add_glorot(format!("{prefix}.w_hs"), dims.k, 1, rng),
            w_hc: store.add_glorot(format!("{prefix}.w_hc"), dims.k, 1, rng),
            dense: Dense::new(store, &format!("{prefix}.dense"), 2 * width, dims.hidden, rng),
            out: Dense::new(store, &format!("{prefix}.out"), dims.hidden, 2, rng),
            dims,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CoAttentionOutput<'t> {
    pub logits: Var<'t>,
    /// `n x T` affinity `tanh(Cᵀ W_l S)`.
    pub affinity: Var<'t>,
    /// `1 x T` attention over image positions.
    pub a_s: Var<'t>,
    /// `1 x n` attention over text positions.
    pub a_c: Var<'t>,
    pub s_hat: Var<'t>,
    pub c_hat: Var<'t>,
}

pub fn co_attention_forward<'t>(
    inputs: &FusedInputs<'t>,
    head: &CoAttentionHead,
    params: &Bound<'t>,
    mode: &mut Mode<'_>,
) -> Result<CoAttentionOutput<'t>> {
    let (c, s) = (inputs.c, inputs.s);
    if c.cols() != s.cols() {
        return Err(Error::dim("co_attention", c.shape(), s.shape()));
    }
    // Column-major views: d' x n and d' x T.
    let c_cm = c.t();
    let s_cm = s.t();
    let affinity = c.matmul(params.get(head.w_l))?.matmul(s_cm)?.tanh();
    let ws_s = params.get(head.w_s).matmul(s_cm)?;
    let wc_c = params.get(head.w_c).matmul(c_cm)?;
    let h_s = ws_s.add(wc_c.matmul(affinity)?)?.tanh();
    let h_c = wc_c.add(ws_s.matmul(affinity.t())?)?.tanh();
    let a_s = params.get(head.w_hs).t().matmul(h_s)?.softmax_rows();
    let a_c = params.get(head.w_hc).t().matmul(h_c)?.softmax_rows();
    let s_hat = a_s.matmul(s)?;
    let c_hat = a_c.matmul(c)?;
    let p = concat_cols(&[c_hat, s_hat])?;
    let p = dropout(p, head.dims.dropout_concat, mode)?;
    let hidden = head.dense.forward(p, params)?.relu();
    let hidden = dropout(hidden, head.dims.dropout_hidden, mode)?;
    let logits = head.out.forward(hidden, params)?;
    Ok(CoAttentionOutput {
        logits,
        affinity,
        a_s,
        a_c,
        s_hat,
        c_hat,
    })
}

/// `FC(h) - ReLU - Dropout - FC(1)` scoring each row.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ReductionMlp {
    pub fc1: Dense,
    pub fc2: Dense,
}

impl ReductionMlp {
    pub fn new(store: &mut ParamStore, prefix: &str, width: usize, hidden: usize, rng: &mut dyn RngCore) -> Self {
        Self {
            fc1: Dense::new(store, &format!("{prefix}.fc1"), width, hidden, rng),
            fc2: Dense::new(store, &format!("{prefix}.fc2"), hidden, 1, rng),
        }
    }

    /// Attention weights (`1 x n`) and the attended row (`1 x d'`).
    pub fn reduce<'t>(&self, x: Var<'t>, rate: f64, params: &Bound<'t>, mode: &mut Mode<'_>) -> Result<(Var<'t>, Var<'t>)> {
        let h = self.fc1.forward(x, params)?.relu();
        let h = dropout(h, rate, mode)?;
        let scores = self.fc2.forward(h, params)?;
        let weights = scores.t().softmax_rows();
        let attended = weights.matmul(x)?;
        Ok((weights, attended))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttnFusionHead {
    pub reduce_c: ReductionMlp,
    pub reduce_s: ReductionMlp,
    /// `d' x d_z` projections.
    pub w_c: ParamId,
    pub w_s: ParamId,
    pub ln_gain: ParamId,
    pub ln_bias: ParamId,
    pub out: Dense,
    pub dims: FusionDims,
}

impl AttnFusionHead {
    pub fn new(store: &mut ParamStore, prefix: &str, width: usize, dims: FusionDims, rng: &mut dyn RngCore) -> Self {
        let reduce_c = ReductionMlp::new(store, &format!("{prefix}.reduce_c"), width, dims.mlp_hidden, rng);
        let reduce_s = ReductionMlp::new(store, &format!("{prefix}.reduce_s"), width, dims.mlp_hidden, rng);
        Self {
            reduce_c,
            reduce_s,
            w_c: store.add_glorot(format!("{prefix}.w_c"), width, dims.d_z, rng),
            w_s: store.add_glorot(format!("{prefix}.w_s"), width, dims.d_z, rng),
            ln_gain: store.add(format!("{prefix}.ln_gain"), crate::diff::Matrix::ones(1, dims.d_z)),
            ln_bias: store.add_zeros(format!("{prefix}.ln_bias"), 1, dims.d_z),
            out: Dense::new(store, &format!("{prefix}.out"), dims.d_z, 2, rng),
            dims,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AttnFusionOutput<'t> {
    pub logits: Var<'t>,
    pub alpha_c: Var<'t>,
    pub alpha_s: Var<'t>,
    pub c_tilde: Var<'t>,
    pub s_tilde: Var<'t>,
    pub z: Var<'t>,
}

pub fn attn_fusion_forward<'t>(
    inputs: &FusedInputs<'t>,
    head: &AttnFusionHead,
    params: &Bound<'t>,
    mode: &mut Mode<'_>,
) -> Result<AttnFusionOutput<'t>> {
    let rate = head.dims.dropout_mlp;
    let (alpha_c, c_tilde) = head.reduce_c.reduce(inputs.c, rate, params, mode)?;
    let (alpha_s, s_tilde) = head.reduce_s.reduce(inputs.s, rate, params, mode)?;
    let mixed = c_tilde
        .matmul(params.get(head.w_c))?
        .add(s_tilde.matmul(params.get(head.w_s))?)?;
    let z = mixed.layer_norm(params.get(head.ln_gain), params.get(head.ln_bias))?;
    let logits = head.out.forward(z, params)?;
    Ok(AttnFusionOutput {
        logits,
        alpha_c,
        alpha_s,
        c_tilde,
        s_tilde,
        z,
    })
}

/// Mean of `C` and mean of `S`, concatenated, through one dense layer.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ConcatHead {
    pub out: Dense,
}

impl ConcatHead {
    pub fn new(store: &mut ParamStore, prefix: &str, width: usize, rng: &mut dyn RngCore) -> Self {
        Self {
            out: Dense::new(store, &format!("{prefix}.out"), 2 * width, 2, rng),
        }
    }
}

pub fn concat_forward<'t>(inputs: &FusedInputs<'t>, head: &ConcatHead, params: &Bound<'t>) -> Result<Var<'t>> {
    let pooled = concat_cols(&[inputs.c.mean_rows(), inputs.s.mean_rows()])?;
    head.out.forward(pooled, params)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum FusionHead {
    CoAttention(CoAttentionHead),
    AttnFusion(AttnFusionHead),
    Concat(ConcatHead),
}

impl FusionHead {
    pub fn new(
        kind: FusionKind,
        store: &mut ParamStore,
        width: usize,
        dims: FusionDims,
        rng: &mut dyn RngCore,
    ) -> Self {
        match kind {
            FusionKind::CoAttention => FusionHead::CoAttention(CoAttentionHead::new(store, "coatt", width, dims, rng)),
            FusionKind::AttnFusion => FusionHead::AttnFusion(AttnFusionHead::new(store, "attfuse", width, dims, rng)),
            FusionKind::Concat => FusionHead::Concat(ConcatHead::new(store, "concat", width, rng)),
        }
    }

    pub fn kind(&self) -> FusionKind {
        match self {
            FusionHead::CoAttention(_) => FusionKind::CoAttention,
            FusionHead::AttnFusion(_) => FusionKind::AttnFusion,
            FusionHead::Concat(_) => FusionKind::Concat,
        }
    }

    /// `1 x 2` logits.
    pub fn forward<'t>(&self, inputs: &FusedInputs<'t>, params: &Bound<'t>, mode: &mut Mode<'_>) -> Result<Var<'t>> {
        match self {
            FusionHead::CoAttention(h) => Ok(co_attention_forward(inputs, h, params, mode)?.logits),
            FusionHead::AttnFusion(h) => Ok(attn_fusion_forward(inputs, h, params, mode)?.logits),
            FusionHead::Concat(h) => concat_forward(inputs, h, params),
        }
    }
}
