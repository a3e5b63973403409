use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{ModelConfig, Optimizer, TrainConfig};
use super::metrics::{evaluate_predictions, Evaluation};
use super::model::{assemble_model, InputShape, Model, TransportWeights};
use super::synthetic::{stratified_split, Dataset, Sample};
use crate::calibration::{ls_cross_entropy_var, smooth_target_matrix, PredictionSet, SmoothingConfig};
use crate::diff::{Matrix, Mode, Tape};
use crate::error::{Error, Result};

const ADAM_BETAS: (f64, f64) = (0.9, 0.999);
const ADAM_EPS: f64 = 1e-8;

/// Smoothed cross-entropy of one sample, differentiable in `params`.
pub fn sample_loss<'t>(
    model: &Model,
    tape: &'t Tape,
    params: &crate::diff::Bound<'t>,
    sample: &Sample,
    mode: &mut Mode<'_>,
    frozen: Option<&TransportWeights>,
) -> Result<crate::diff::Var<'t>> {
    let smoothing = SmoothingConfig::new(model.config.label_smoothing_alpha, 2)?;
    let targets = smooth_target_matrix(&[sample.label], &smoothing)?;
    let out = model.forward(tape, params, &sample.x, &sample.y, mode, frozen)?;
    ls_cross_entropy_var(out.logits.softmax_rows(), &targets)
}

/// Mean eval-mode loss over a split.
pub fn split_loss(model: &Model, split: &[Sample]) -> Result<f64> {
    if split.is_empty() {
        return Err(Error::Input("loss over an empty split".into()));
    }
    let mut total = 0.0;
    for s in split {
        let tape = Tape::new();
        let params = model.store.bind(&tape);
        total += sample_loss(model, &tape, &params, s, &mut Mode::Eval, None)?.scalar();
    }
    Ok(total / split.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub epochs_run: usize,
    /// Epoch whose parameters were restored.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
    pub history: Vec<EpochLog>,
}

/// Tracks the best validation loss; stops once `patience` consecutive
/// epochs bring no new strict minimum.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            since_best: 0,
        }
    }

    /// Records `loss` for `epoch`; returns whether it is a new best.
    pub fn observe(&mut self, epoch: usize, loss: f64) -> bool {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = epoch;
            self.since_best = 0;
            true
        } else {
            self.since_best += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.since_best >= self.patience
    }

    pub fn best(&self) -> (usize, f64) {
        (self.best_epoch, self.best)
    }
}

struct OptimizerState {
    kind: Optimizer,
    momentum: f64,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
    steps: i32,
}

impl OptimizerState {
    fn new(kind: Optimizer, momentum: f64, model: &Model) -> Self {
        let zeros: Vec<Matrix> = model
            .store
            .iter()
            .map(|p| Matrix::zeros(p.value.rows(), p.value.cols()))
            .collect();
        Self {
            kind,
            momentum,
            second: if kind == Optimizer::Adam { zeros.clone() } else { Vec::new() },
            first: zeros,
            steps: 0,
        }
    }

    fn step(&mut self, model: &mut Model, lr: f64) {
        self.steps += 1;
        for (k, p) in model.store.iter_mut().enumerate() {
            let g = p.grad.as_slice();
            match self.kind {
                Optimizer::Sgd => {
                    let v = self.first[k].as_mut_slice();
                    for ((w, v), g) in p.value.as_mut_slice().iter_mut().zip(v).zip(g) {
                        *v = self.momentum * *v + g;
                        *w -= lr * *v;
                    }
                }
                Optimizer::Adam => {
                    let (b1, b2) = ADAM_BETAS;
                    let c1 = 1.0 - b1.powi(self.steps);
                    let c2 = 1.0 - b2.powi(self.steps);
                    let m = self.first[k].as_mut_slice();
                    let s = self.second[k].as_mut_slice();
                    for (((w, m), s), g) in p.value.as_mut_slice().iter_mut().zip(m).zip(s).zip(g) {
                        *m = b1 * *m + (1.0 - b1) * g;
                        *s = b2 * *s + (1.0 - b2) * g * g;
                        *w -= lr * (*m / c1) / ((*s / c2).sqrt() + ADAM_EPS);
                    }
                }
            }
        }
    }
}

/// Mini-batch training with step decay and early stopping. The parameters
/// with the lowest validation loss are restored before returning.
pub fn train(model: &mut Model, train: &[Sample], val: &[Sample], tc: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<TrainOutcome> {
    tc.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Input("training and validation splits must be nonempty".into()));
    }
    let mut opt = OptimizerState::new(tc.optimizer, tc.momentum, model);
    let mut stopper = EarlyStopping::new(tc.patience);
    let mut best_values = model.store.values();
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 0..tc.max_epochs {
        let lr = tc.lr_at(epoch);
        order.shuffle(rng);
        let mut train_loss = 0.0;
        for (b, batch) in order.chunks(tc.batch_size).enumerate() {
            model.store.zero_grads();
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let tape = Tape::new();
                let params = model.store.bind(&tape);
                let loss = sample_loss(model, &tape, &params, &train[i], &mut Mode::Train(rng), None)?;
                let value = loss.scalar();
                if !value.is_finite() {
                    return Err(Error::Numerical(format!(
                        "non-finite training loss at epoch {epoch}, batch {b}"
                    )));
                }
                train_loss += value;
                let grads = tape.backward(loss.scale(scale))?;
                model.store.accumulate(&params, &grads);
            }
            opt.step(model, lr);
        }
        let val_loss = split_loss(model, val)?;
        if !val_loss.is_finite() {
            return Err(Error::Numerical(format!("non-finite validation loss at epoch {epoch}")));
        }
        history.push(EpochLog {
            epoch,
            lr,
            train_loss: train_loss / train.len() as f64,
            val_loss,
        });
        if stopper.observe(epoch, val_loss) {
            best_values = model.store.values();
        }
        if stopper.should_stop() {
            break;
        }
    }
    model.store.set_values(best_values)?;
    let (best_epoch, best_val_loss) = stopper.best();
    Ok(TrainOutcome {
        epochs_run: history.len(),
        best_epoch,
        best_val_loss,
        stopped_early: history.len() < tc.max_epochs,
        history,
    })
}

/// Eval-mode predictions and metrics on a split.
pub fn evaluate(model: &Model, split: &[Sample], tc: &TrainConfig) -> Result<(PredictionSet, Evaluation)> {
    if split.is_empty() {
        return Err(Error::Input("cannot evaluate an empty split".into()));
    }
    let mut data = Vec::with_capacity(2 * split.len());
    for s in split {
        data.extend(model.predict(&s.x, &s.y)?);
    }
    let preds = PredictionSet::new(
        Matrix::from_vec(split.len(), 2, data)?,
        split.iter().map(|s| s.label).collect(),
    )?;
    let eval = evaluate_predictions(&preds, tc.ece_bins, tc.ace_ranges)?;
    Ok((preds, eval))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub evaluation: Evaluation,
    pub outcome: TrainOutcome,
}

/// One seeded run: split (when needed), initialize, train, evaluate on test.
pub fn run_single(mc: &ModelConfig, tc: &TrainConfig, data: &Dataset, seed: u64) -> Result<RunResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (train_set, val_set) = if data.val.is_empty() {
        stratified_split(data.train.clone(), tc.val_split, &mut rng)?
    } else {
        (data.train.clone(), data.val.clone())
    };
    let first = train_set
        .first()
        .ok_or_else(|| Error::Input("empty training split".into()))?;
    let shape = InputShape {
        n: first.x.rows(),
        t: first.y.rows(),
        d_input: first.x.cols(),
    };
    let mut model = assemble_model(mc, shape, &mut rng)?;
    let mut opening: Vec<&Sample> = train_set.iter().collect();
    opening.shuffle(&mut rng);
    let images: Vec<&Matrix> = opening.iter().take(tc.batch_size).map(|s| &s.y).collect();
    model.init_references_from(&images, &mut rng)?;
    let outcome = train(&mut model, &train_set, &val_set, tc, &mut rng)?;
    let (_, evaluation) = evaluate(&model, &data.test, tc)?;
    Ok(RunResult {
        seed,
        evaluation,
        outcome,
    })
}
