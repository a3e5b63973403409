//! The assembled classifier.
//!
//! Raw sequences pass through frozen random linear encoders. The image
//! sequence is aligned to the text length (OT kernel, repeated mean, or as
//! is), the text goes through the context-attention stack and the image
//! through gated self-attention, each modality is transported onto the other
//! by exact EMD, and the fusion head turns `[F, X']` and `[H, S']` into two
//! logits.

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::config::{Alignment, ModelConfig};
use crate::context::{stack_forward, ContextStack};
use crate::diff::{Bound, Matrix, Mode, ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::fusion::{build_fused_inputs, FusionHead};
use crate::gated::{gated_attention, self_attention, GatedSelfAttentionLayer};
use crate::transport::{barycentric_weights, init_references, otk_embed, ot_adapt_plan};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputShape {
    /// Text sequence length.
    pub n: usize,
    /// Image sequence length.
    pub t: usize,
    /// Raw feature width of both modalities.
    pub d_input: usize,
}

/// `rows x cols` matrix with orthonormal columns (or rows, whichever is the
/// shorter side), from Gram-Schmidt on Gaussian draws.
pub fn orthogonal_matrix(rows: usize, cols: usize, rng: &mut dyn RngCore) -> Matrix {
    let (long, short) = if rows >= cols { (rows, cols) } else { (cols, rows) };
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(short);
    while basis.len() < short {
        let mut v: Vec<f64> = (0..long).map(|_| rng.sample(StandardNormal)).collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            for (x, y) in v.iter_mut().zip(b) {
                *x -= dot * y;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    if rows >= cols {
        Matrix::from_fn(rows, cols, |i, j| basis[j][i])
    } else {
        Matrix::from_fn(rows, cols, |i, j| basis[i][j])
    }
}

/// Barycentric weights of the two cross-modal transports, `X' = W_text·X`
/// and `S' = W_image·S`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportWeights {
    pub to_text: Matrix,
    pub to_image: Matrix,
}

#[derive(Debug, Clone, Copy)]
pub struct ForwardOutput<'t> {
    pub logits: Var<'t>,
    /// Text features after the context stack.
    pub f: Var<'t>,
    /// Aligned image sequence.
    pub s: Var<'t>,
    /// Image features after gated attention.
    pub h: Var<'t>,
    pub x_transported: Var<'t>,
    pub s_transported: Var<'t>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Model {
    pub config: ModelConfig,
    pub shape: InputShape,
    pub store: ParamStore,
    text_encoder: Matrix,
    image_encoder: Matrix,
    references: Option<ParamId>,
    context: ContextStack,
    gated: GatedSelfAttentionLayer,
    head: FusionHead,
}

/// Builds a model with freshly initialized parameters.
pub fn assemble_model(cfg: &ModelConfig, shape: InputShape, rng: &mut dyn RngCore) -> Result<Model> {
    cfg.validate()?;
    if shape.n == 0 || shape.t == 0 || shape.d_input == 0 {
        return Err(Error::Parameter("input sequence lengths and width must be positive".into()));
    }
    if cfg.alignment == Alignment::Identity && shape.n != shape.t {
        return Err(Error::Parameter(format!(
            "identity alignment needs equal sequence lengths, got {} and {}",
            shape.n, shape.t
        )));
    }
    let d = cfg.d_model;
    let text_encoder = orthogonal_matrix(shape.d_input, d, rng);
    let image_encoder = orthogonal_matrix(shape.d_input, d, rng);
    let mut store = ParamStore::new();
    let references = (cfg.alignment == Alignment::Otk).then(|| store.add_glorot("otk.references", shape.n, d, rng));
    let context = ContextStack::new(&mut store, "context", cfg.context_strategy()?, d, cfg.d_qk, rng)?;
    let gated = GatedSelfAttentionLayer::new(&mut store, "gated", d, cfg.d_gate, cfg.gate_bias, rng);
    let head = FusionHead::new(cfg.fusion, &mut store, 2 * d, cfg.head, rng);
    Ok(Model {
        config: cfg.clone(),
        shape,
        store,
        text_encoder,
        image_encoder,
        references,
        context,
        gated,
        head,
    })
}

impl Model {
    pub fn parameter_count(&self) -> usize {
        self.store.entry_count()
    }

    pub fn references(&self) -> Option<ParamId> {
        self.references
    }

    pub fn encode_text(&self, x_raw: &Matrix) -> Result<Matrix> {
        self.check_input("text", x_raw, self.shape.n)?;
        x_raw.matmul(&self.text_encoder)
    }

    pub fn encode_image(&self, y_raw: &Matrix) -> Result<Matrix> {
        self.check_input("image", y_raw, self.shape.t)?;
        y_raw.matmul(&self.image_encoder)
    }

    fn check_input(&self, which: &str, m: &Matrix, rows: usize) -> Result<()> {
        if m.shape() != (rows, self.shape.d_input) {
            return Err(Error::Input(format!(
                "{which} input is {}x{}, expected {rows}x{}",
                m.rows(),
                m.cols(),
                self.shape.d_input
            )));
        }
        Ok(())
    }

    /// Re-initializes the OT-kernel references from encoded image rows of
    /// the given samples. No-op for other alignments.
    pub fn init_references_from(&mut self, images: &[&Matrix], rng: &mut dyn RngCore) -> Result<()> {
        let Some(id) = self.references else {
            return Ok(());
        };
        let encoded: Vec<Matrix> = images.iter().map(|y| self.encode_image(y)).collect::<Result<_>>()?;
        let refs: Vec<&Matrix> = encoded.iter().collect();
        self.store.get_mut(id).value = init_references(&refs, self.shape.n, rng)?;
        Ok(())
    }

    fn align<'t>(&self, y: Var<'t>, params: &Bound<'t>) -> Result<Var<'t>> {
        match (self.config.alignment, self.references) {
            (Alignment::Otk, Some(z)) => Ok(otk_embed(y, params.get(z), &self.config.otk)?.output),
            (Alignment::Otk, None) => Err(Error::Parameter("OT-kernel alignment without references".into())),
            (Alignment::Repeat, _) => y.mean_rows().repeat_rows(self.shape.n),
            (Alignment::Identity, _) => Ok(y),
        }
    }

    /// The transport weights the forward pass would use at the current
    /// parameter values. Passing them back to [`Model::forward`] freezes the
    /// plans, which makes the loss smooth for finite differences.
    pub fn transport_weights(&self, x_raw: &Matrix, y_raw: &Matrix) -> Result<Option<TransportWeights>> {
        if !self.config.transport {
            return Ok(None);
        }
        let tape = Tape::new();
        let params = self.store.bind(&tape);
        let x = self.encode_text(x_raw)?;
        let s = self.align(tape.constant(self.encode_image(y_raw)?), &params)?.value();
        Ok(Some(TransportWeights {
            to_text: barycentric_weights(&ot_adapt_plan(&s, &x)?)?,
            to_image: barycentric_weights(&ot_adapt_plan(&x, &s)?)?,
        }))
    }

    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        params: &Bound<'t>,
        x_raw: &Matrix,
        y_raw: &Matrix,
        mode: &mut Mode<'_>,
        frozen: Option<&TransportWeights>,
    ) -> Result<ForwardOutput<'t>> {
        let x = tape.constant(self.encode_text(x_raw)?);
        let y = tape.constant(self.encode_image(y_raw)?);
        let s = self.align(y, params)?;

        let gate_override = (!self.config.context).then_some(0.0);
        let f = stack_forward(x, &self.context, params, gate_override)?.output;
        let ones = (!self.config.gate_masks).then(|| Matrix::ones(s.rows(), 2));
        let h = gated_attention(s, &self.gated, params, ones.as_ref())?.output;

        let (x_t, s_t) = if self.config.transport {
            let weights = match frozen {
                Some(w) => w.clone(),
                None => {
                    let (xv, sv) = (x.value(), s.value());
                    TransportWeights {
                        to_text: barycentric_weights(&ot_adapt_plan(&sv, &xv)?)?,
                        to_image: barycentric_weights(&ot_adapt_plan(&xv, &sv)?)?,
                    }
                }
            };
            (
                tape.constant(weights.to_text).matmul(x)?,
                tape.constant(weights.to_image).matmul(s)?,
            )
        } else {
            (s, x)
        };

        let fused = build_fused_inputs(f, x_t, h, s_t)?;
        let logits = self.head.forward(&fused, params, mode)?;
        Ok(ForwardOutput {
            logits,
            f,
            s,
            h,
            x_transported: x_t,
            s_transported: s_t,
        })
    }

    /// Whether the image attention with all-ones masks reproduces plain
    /// self-attention bit for bit on this input.
    pub fn ones_mask_matches_plain_attention(&self, y_raw: &Matrix) -> Result<bool> {
        let tape = Tape::new();
        let params = self.store.bind(&tape);
        let s = self.align(tape.constant(self.encode_image(y_raw)?), &params)?;
        let ones = Matrix::ones(s.rows(), 2);
        let gated = gated_attention(s, &self.gated, &params, Some(&ones))?.output.value();
        Ok(gated == self_attention(s)?.value())
    }

    /// Class probabilities in eval mode.
    pub fn predict(&self, x_raw: &Matrix, y_raw: &Matrix) -> Result<Vec<f64>> {
        let tape = Tape::new();
        let params = self.store.bind(&tape);
        let out = self.forward(&tape, &params, x_raw, y_raw, &mut Mode::Eval, None)?;
        let probs = out.logits.softmax_rows().value();
        if !probs.is_finite() {
            return Err(Error::Numerical("non-finite class probabilities".into()));
        }
        Ok(probs.as_slice().to_vec())
    }
}
