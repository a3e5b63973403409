//! Context-based self-attention for the text branch.
//!
//! Queries and keys are mixed with projections of a context matrix through
//! learned sigmoid gates before scaled dot-product attention. The context is
//! built by one of three strategies:
//!
//! * `Global`: the mean over the layer input, stacked to every row.
//! * `Deep`: a projection of the feature-axis concatenation of every layer
//!   input seen so far.
//! * `DeepGlobal`: a projection of the concatenated per-layer means, stacked.
//!
//! Values are the layer input itself (`V = X`). There are no residual
//! connections or positional encodings.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::diff::{concat_cols, Bound, Matrix, ParamId, ParamStore, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContextKind {
    Global,
    Deep,
    DeepGlobal,
}

impl ContextKind {
    /// Layer count used when none is configured.
    pub fn default_layers(self) -> usize {
        match self {
            ContextKind::Global => 1,
            ContextKind::Deep => 3,
            ContextKind::DeepGlobal => 2,
        }
    }
}

impl std::str::FromStr for ContextKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "global" => Ok(ContextKind::Global),
            "deep" => Ok(ContextKind::Deep),
            "deep-global" | "deepglobal" => Ok(ContextKind::DeepGlobal),
            other => Err(Error::Parameter(format!("unknown context strategy {other:?}"))),
        }
    }
}

impl std::fmt::Display for ContextKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ContextKind::Global => "global",
            ContextKind::Deep => "deep",
            ContextKind::DeepGlobal => "deep-global",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextStrategy {
    pub kind: ContextKind,
    pub layers: usize,
}

impl ContextStrategy {
    pub fn new(kind: ContextKind, layers: usize) -> Result<Self> {
        if layers == 0 {
            return Err(Error::Parameter("context stack needs at least one layer".into()));
        }
        Ok(Self { kind, layers })
    }

    pub fn with_default_layers(kind: ContextKind) -> Self {
        Self {
            kind,
            layers: kind.default_layers(),
        }
    }
}

/// Parameters of one context-based self-attention layer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContextAttentionLayer {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_qc: ParamId,
    pub w_kc: ParamId,
    pub gate_q: ParamId,
    pub gate_qc: ParamId,
    pub gate_k: ParamId,
    pub gate_kc: ParamId,
    pub d_model: usize,
    pub d_context: usize,
    pub d_qk: usize,
}

impl ContextAttentionLayer {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        d_model: usize,
        d_context: usize,
        d_qk: usize,
        rng: &mut dyn RngCore,
    ) -> Self {
        Self {
            w_q: store.add_glorot(format!("{prefix}.w_q"), d_model, d_qk, rng),
            w_k: store.add_glorot(format!("{prefix}.w_k"), d_model, d_qk, rng),
            w_qc: store.add_glorot(format!("{prefix}.w_qc"), d_context, d_qk, rng),
            w_kc: store.add_glorot(format!("{prefix}.w_kc"), d_context, d_qk, rng),
            gate_q: store.add_glorot(format!("{prefix}.gate_q"), d_qk, 1, rng),
            gate_qc: store.add_glorot(format!("{prefix}.gate_qc"), d_qk, 1, rng),
            gate_k: store.add_glorot(format!("{prefix}.gate_k"), d_qk, 1, rng),
            gate_kc: store.add_glorot(format!("{prefix}.gate_kc"), d_qk, 1, rng),
            d_model,
            d_context,
            d_qk,
        }
    }
}

/// Result of a gated sum: the `n x 1` gate and the mixed matrix.
#[derive(Debug, Clone, Copy)]
pub struct GatedMix<'t> {
    pub gate: Var<'t>,
    pub mixed: Var<'t>,
}

/// `g = σ(A·w_a + A_c·w_ac)`, `mixed = (1 - g) ⊙ A + g ⊙ A_c` with `g`
/// broadcast over columns.
///
/// `gate_override` replaces the computed gate by a constant; it exists for
/// tests and the no-context ablation.
pub fn gated_sum<'t>(
    a: Var<'t>,
    a_c: Var<'t>,
    w_a: Var<'t>,
    w_ac: Var<'t>,
    gate_override: Option<f64>,
) -> Result<GatedMix<'t>> {
    if a.shape() != a_c.shape() {
        return Err(Error::dim("gated_sum", a.shape(), a_c.shape()));
    }
    let gate = match gate_override {
        Some(g) => a.tape().constant(Matrix::filled(a.rows(), 1, g)),
        None => a.matmul(w_a)?.add(a_c.matmul(w_ac)?)?.sigmoid(),
    };
    if gate.shape() != (a.rows(), 1) {
        return Err(Error::dim("gated_sum gate", gate.shape(), (a.rows(), 1)));
    }
    let mixed = a.mul_col(gate.one_minus())?.add(a_c.mul_col(gate)?)?;
    Ok(GatedMix { gate, mixed })
}

/// Mean over the sequence, stacked back to `n` rows.
pub fn global_context<'t>(x: Var<'t>) -> Result<Var<'t>> {
    x.mean_rows().repeat_rows(x.rows())
}

/// `concat(X⁰, …, X^{l-1}) · W`, with `W` of shape `(l·D) x D`.
pub fn deep_context<'t>(history: &[Var<'t>], projection: Var<'t>) -> Result<Var<'t>> {
    check_history(history)?;
    concat_cols(history)?.matmul(projection)
}

/// `concat(mean(X⁰), …, mean(X^{l-1})) · W`, stacked to `n` rows.
pub fn deep_global_context<'t>(history: &[Var<'t>], projection: Var<'t>) -> Result<Var<'t>> {
    check_history(history)?;
    let n = history[0].rows();
    let pooled: Vec<Var<'t>> = history.iter().map(|h| h.mean_rows()).collect();
    concat_cols(&pooled)?.matmul(projection)?.repeat_rows(n)
}

fn check_history(history: &[Var<'_>]) -> Result<()> {
    let first = history
        .first()
        .ok_or_else(|| Error::Input("context history is empty".into()))?;
    for h in history {
        if h.shape() != first.shape() {
            return Err(Error::dim("context history", first.shape(), h.shape()));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy)]
pub struct ContextAttentionOutput<'t> {
    pub output: Var<'t>,
    /// Row-stochastic `n x n` attention map.
    pub attention: Var<'t>,
    pub gate_q: Var<'t>,
    pub gate_k: Var<'t>,
}

/// One context-based self-attention layer:
/// `softmax(Q̄·K̄ᵀ / √D_k)·X`.
pub fn context_attention_forward<'t>(
    x: Var<'t>,
    context: Var<'t>,
    layer: &ContextAttentionLayer,
    params: &Bound<'t>,
    gate_override: Option<f64>,
) -> Result<ContextAttentionOutput<'t>> {
    if context.rows() != x.rows() {
        return Err(Error::dim("context_attention", x.shape(), context.shape()));
    }
    if x.cols() != layer.d_model || context.cols() != layer.d_context {
        return Err(Error::dim(
            "context_attention",
            (x.cols(), context.cols()),
            (layer.d_model, layer.d_context),
        ));
    }
    let q = x.matmul(params.get(layer.w_q))?;
    let k = x.matmul(params.get(layer.w_k))?;
    let q_c = context.matmul(params.get(layer.w_qc))?;
    let k_c = context.matmul(params.get(layer.w_kc))?;
    let gq = gated_sum(q, q_c, params.get(layer.gate_q), params.get(layer.gate_qc), gate_override)?;
    let gk = gated_sum(k, k_c, params.get(layer.gate_k), params.get(layer.gate_kc), gate_override)?;
    let scale = 1.0 / (layer.d_qk as f64).sqrt();
    let attention = gq.mixed.matmul(gk.mixed.t())?.scale(scale).softmax_rows();
    let output = attention.matmul(x)?;
    Ok(ContextAttentionOutput {
        output,
        attention,
        gate_q: gq.gate,
        gate_k: gk.gate,
    })
}

/// A stack of context-attention layers sharing one context strategy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContextStack {
    pub strategy: ContextStrategy,
    pub layers: Vec<ContextAttentionLayer>,
    /// Context projection per layer; `(j+1)·D x D` for layer `j` under the
    /// deep strategies, absent for `Global`.
    pub projections: Vec<Option<ParamId>>,
}

impl ContextStack {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        strategy: ContextStrategy,
        d_model: usize,
        d_qk: usize,
        rng: &mut dyn RngCore,
    ) -> Result<Self> {
        if strategy.layers == 0 {
            return Err(Error::Parameter("context stack needs at least one layer".into()));
        }
        let mut layers = Vec::with_capacity(strategy.layers);
        let mut projections = Vec::with_capacity(strategy.layers);
        for j in 0..strategy.layers {
            let p = format!("{prefix}.layer{j}");
            layers.push(ContextAttentionLayer::new(store, &p, d_model, d_model, d_qk, rng));
            projections.push(match strategy.kind {
                ContextKind::Global => None,
                ContextKind::Deep | ContextKind::DeepGlobal => {
                    Some(store.add_glorot(format!("{p}.w_context"), (j + 1) * d_model, d_model, rng))
                }
            });
        }
        Ok(Self {
            strategy,
            layers,
            projections,
        })
    }
}

#[derive(Debug, Clone)]
pub struct StackOutput<'t> {
    pub output: Var<'t>,
    pub layers: Vec<ContextAttentionOutput<'t>>,
}

/// Runs the stack. Layer `j` builds its context from `[X⁰, …, X^j]`, where
/// `X⁰` is the stack input and `X^j` is the input to layer `j`.
pub fn stack_forward<'t>(
    x: Var<'t>,
    stack: &ContextStack,
    params: &Bound<'t>,
    gate_override: Option<f64>,
) -> Result<StackOutput<'t>> {
    let mut history = vec![x];
    let mut current = x;
    let mut outputs = Vec::with_capacity(stack.layers.len());
    for (layer, projection) in stack.layers.iter().zip(&stack.projections) {
        let context = match (stack.strategy.kind, projection) {
            (ContextKind::Global, _) => global_context(current)?,
            (ContextKind::Deep, Some(p)) => deep_context(&history, params.get(*p))?,
            (ContextKind::DeepGlobal, Some(p)) => deep_global_context(&history, params.get(*p))?,
            (kind, None) => {
                return Err(Error::Parameter(format!("{kind} layer is missing its context projection")))
            }
        };
        let out = context_attention_forward(current, context, layer, params, gate_override)?;
        current = out.output;
        history.push(current);
        outputs.push(out);
    }
    Ok(StackOutput {
        output: current,
        layers: outputs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::Tape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn global_context_hand_case() {
        let tape = Tape::new();
        let x = tape.constant(Matrix::from_rows(&[[1.0, 1.0], [3.0, 3.0]]).unwrap());
        let c = global_context(x).unwrap().value();
        assert_eq!(c, Matrix::from_rows(&[[2.0, 2.0], [2.0, 2.0]]).unwrap());
    }

    #[test]
    fn global_context_single_row_is_identity() {
        let tape = Tape::new();
        let m = Matrix::from_rows(&[[0.3, -1.7, 2.5]]).unwrap();
        let c = global_context(tape.constant(m.clone())).unwrap().value();
        assert_eq!(c, m);
    }

    #[test]
    fn deep_context_identity_and_selector() {
        let tape = Tape::new();
        let x0 = Matrix::from_fn(3, 2, |i, j| (i * 2 + j) as f64 * 0.7 - 1.0);
        let x1 = Matrix::from_fn(3, 2, |i, j| (i + j) as f64);
        let v0 = tape.constant(x0.clone());
        let v1 = tape.constant(x1);
        let id = tape.constant(Matrix::identity(2));
        assert_eq!(deep_context(&[v0], id).unwrap().value(), x0);
        let selector = tape.constant(Matrix::concat_rows(&[&Matrix::identity(2), &Matrix::zeros(2, 2)]).unwrap());
        assert_eq!(deep_context(&[v0, v1], selector).unwrap().value(), x0);
    }

    #[test]
    fn deep_context_rejects_bad_projection() {
        let tape = Tape::new();
        let v0 = tape.constant(Matrix::ones(3, 2));
        let w = tape.constant(Matrix::ones(3, 2));
        assert!(matches!(deep_context(&[v0], w), Err(Error::Dimension { .. })));
        assert!(deep_context(&[], w).is_err());
    }

    #[test]
    fn deep_global_with_one_member_is_global() {
        let tape = Tape::new();
        let x = tape.constant(Matrix::from_fn(4, 3, |i, j| ((i * 3 + j) as f64).sin()));
        let id = tape.constant(Matrix::identity(3));
        let a = deep_global_context(&[x], id).unwrap().value();
        let b = global_context(x).unwrap().value();
        assert_eq!(a, b);
    }

    #[test]
    fn gate_overrides_select_inputs() {
        let tape = Tape::new();
        let a = tape.constant(Matrix::from_fn(3, 2, |i, j| (i + 2 * j) as f64));
        let ac = tape.constant(Matrix::from_fn(3, 2, |i, j| -((i * j) as f64) - 1.0));
        let w = tape.constant(Matrix::ones(2, 1));
        let zero = gated_sum(a, ac, w, w, Some(0.0)).unwrap();
        assert_eq!(zero.mixed.value(), a.value());
        let one = gated_sum(a, ac, w, w, Some(1.0)).unwrap();
        assert_eq!(one.mixed.value(), ac.value());
    }

    #[test]
    fn symmetric_gate_averages() {
        let tape = Tape::new();
        let a = tape.constant(Matrix::from_fn(2, 3, |i, j| (i + j) as f64));
        let ac = tape.constant(Matrix::from_fn(2, 3, |i, j| (i * j) as f64 + 0.5));
        let w = tape.constant(Matrix::zeros(3, 1));
        let mix = gated_sum(a, ac, w, w, None).unwrap();
        assert!(mix.gate.value().as_slice().iter().all(|g| *g == 0.5));
        let expected = a.value().add(&ac.value()).unwrap().scale(0.5);
        assert!(mix.mixed.value().max_abs_diff(&expected) < 1e-15);
    }

    #[test]
    fn single_row_attention_returns_input() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let layer = ContextAttentionLayer::new(&mut store, "l", 4, 4, 3, &mut rng);
        let tape = Tape::new();
        let b = store.bind(&tape);
        let x = tape.constant(Matrix::from_rows(&[[0.1, -0.4, 2.0, 0.7]]).unwrap());
        let c = global_context(x).unwrap();
        let out = context_attention_forward(x, c, &layer, &b, None).unwrap();
        assert_eq!(out.output.value(), x.value());
    }

    #[test]
    fn attention_rejects_row_mismatch() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let layer = ContextAttentionLayer::new(&mut store, "l", 4, 4, 3, &mut rng);
        let tape = Tape::new();
        let b = store.bind(&tape);
        let x = tape.constant(Matrix::ones(3, 4));
        let c = tape.constant(Matrix::ones(2, 4));
        assert!(matches!(
            context_attention_forward(x, c, &layer, &b, None),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn stack_shapes_and_projection_sizes() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let stack = ContextStack::new(&mut store, "text", ContextStrategy::with_default_layers(ContextKind::Deep), 5, 4, &mut rng).unwrap();
        assert_eq!(stack.layers.len(), 3);
        for (j, p) in stack.projections.iter().enumerate() {
            assert_eq!(store.get(p.unwrap()).value.shape(), ((j + 1) * 5, 5));
        }
        let tape = Tape::new();
        let b = store.bind(&tape);
        let x = tape.constant(Matrix::from_fn(6, 5, |i, j| ((i * 5 + j) as f64 * 0.37).cos()));
        let out = stack_forward(x, &stack, &b, None).unwrap();
        assert_eq!(out.output.shape(), (6, 5));
        assert!(out.output.value().is_finite());
    }

    #[test]
    fn strategy_parsing() {
        assert_eq!("deep-global".parse::<ContextKind>().unwrap(), ContextKind::DeepGlobal);
        assert_eq!("Deep".parse::<ContextKind>().unwrap(), ContextKind::Deep);
        assert!("wide".parse::<ContextKind>().is_err());
        assert!(ContextStrategy::new(ContextKind::Global, 0).is_err());
    }
}
