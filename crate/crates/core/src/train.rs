//! Adam, dataset splitting, the training loop and per-run metrics.

use std::fmt::Write as _;

use pst_tensor::{Tape, Tensor};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layout::{standardize, FeatureTensor4D};
use crate::model::{argmax_rows, loss, Model};
use crate::params::{stream_rng, ParamSet};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// train : test
    pub split_ratio: (usize, usize),
    pub shuffle: bool,
    /// Per-sample zero-mean, unit-variance scaling before the model.
    pub standardize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 32,
            epochs: 300,
            seed: 0,
            split_ratio: (9, 6),
            shuffle: true,
            standardize: true,
        }
    }
}

impl TrainConfig {
    /// `learning_rate == 0` is accepted so a run can be frozen on purpose.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be finite and >= 0", self.learning_rate));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} {b} outside [0, 1)"));
            }
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return bad(format!("epsilon {} must be positive", self.epsilon));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if self.split_ratio.0 == 0 {
            return bad("split ratio needs a nonzero train share".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        let zeros: Vec<Tensor> = params.values().iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

/// One bias-corrected Adam update. A non-finite gradient leaves parameters
/// and moments untouched and returns [`Error::NonFinite`].
pub fn adam_step(params: &mut ParamSet, grads: &[Tensor], adam: &mut AdamState, cfg: &TrainConfig) -> Result<()> {
    if grads.len() != params.len() {
        return Err(Error::Count {
            what: "gradients",
            expected: params.len(),
            actual: grads.len(),
        });
    }
    for (g, p) in grads.iter().zip(params.values()) {
        if g.shape() != p.shape() {
            return Err(Error::Config(format!(
                "gradient shape {:?} does not match parameter {:?}",
                g.shape(),
                p.shape()
            )));
        }
    }
    if !grads.iter().all(Tensor::all_finite) {
        return Err(Error::NonFinite("gradient"));
    }
    adam.t += 1;
    let t = adam.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (i, p) in params.values_mut().iter_mut().enumerate() {
        let g = grads[i].data();
        let m = adam.m[i].data_mut();
        let v = adam.v[i].data_mut();
        for (j, w) in p.data_mut().iter_mut().enumerate() {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            *w -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
    Ok(())
}

/// Shuffles (when asked) under `seed`, then puts the first
/// `ceil(train·N / (train + test))` items in the training set.
pub fn split<T: Clone>(items: &[T], ratio: (usize, usize), seed: u64, shuffle: bool) -> (Vec<T>, Vec<T>) {
    let mut order: Vec<usize> = (0..items.len()).collect();
    if shuffle {
        order.shuffle(&mut stream_rng(seed, "split"));
    }
    let total = ratio.0 + ratio.1;
    let n_train = (ratio.0 * items.len()).div_ceil(total.max(1));
    let pick = |idx: &[usize]| idx.iter().map(|&i| items[i].clone()).collect::<Vec<_>>();
    (pick(&order[..n_train]), pick(&order[n_train..]))
}

/// Stacks samples into one `(B, T, S, V, H)` tensor.
pub fn stack(samples: &[&FeatureTensor4D], standardized: bool) -> Result<Tensor> {
    let first = samples.first().ok_or(Error::Empty("batch"))?;
    let dims = first.dims();
    let mut data = Vec::with_capacity(samples.len() * first.data().len());
    for s in samples {
        if s.dims() != dims {
            return Err(Error::Config(format!(
                "sample dims {:?} differ from {:?} in the same batch",
                s.dims(),
                dims
            )));
        }
        if standardized {
            let mut x = s.data().clone();
            standardize(&mut x);
            data.extend_from_slice(x.data());
        } else {
            data.extend_from_slice(s.data().data());
        }
    }
    let [t, sb, v, h] = dims;
    Ok(Tensor::new(vec![samples.len(), t, sb, v, h], data)?)
}

const EVAL_CHUNK: usize = 64;

/// Mean cross-entropy and accuracy in evaluation mode.
pub fn loss_and_accuracy(
    model: &Model,
    state: &ParamSet,
    set: &[FeatureTensor4D],
    standardized: bool,
) -> Result<(f64, f64)> {
    if set.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let (mut total_loss, mut correct) = (0.0, 0usize);
    for chunk in set.chunks(EVAL_CHUNK) {
        let refs: Vec<&FeatureTensor4D> = chunk.iter().collect();
        let x = stack(&refs, standardized)?;
        let labels: Vec<usize> = chunk.iter().map(FeatureTensor4D::label).collect();
        let logits = model.logits(state, &x)?;
        let mut tape = Tape::new();
        let lv = tape.constant(logits.clone());
        let l = loss(&mut tape, lv, &labels)?;
        total_loss += tape.value(l).item() * chunk.len() as f64;
        correct += argmax_rows(&logits)
            .iter()
            .zip(&labels)
            .filter(|(p, y)| p == y)
            .count();
    }
    Ok((total_loss / set.len() as f64, correct as f64 / set.len() as f64))
}

/// Fraction of samples whose prediction matches the label.
pub fn evaluate(model: &Model, state: &ParamSet, set: &[FeatureTensor4D], standardized: bool) -> Result<f64> {
    loss_and_accuracy(model, state, set, standardized).map(|(_, acc)| acc)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub epochs_completed: usize,
    pub final_train_loss: Option<f64>,
    pub final_train_acc: Option<f64>,
    pub final_test_acc: Option<f64>,
    pub best_test_acc: Option<f64>,
    pub n_params: usize,
    pub aborted: bool,
    pub abort_reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub epochs: Vec<EpochMetrics>,
    pub n_params: usize,
    pub aborted: Option<String>,
}

impl RunMetrics {
    pub fn last(&self) -> Option<&EpochMetrics> {
        self.epochs.last()
    }

    pub fn summary(&self) -> RunSummary {
        let last = self.last();
        RunSummary {
            epochs_completed: self.epochs.len(),
            final_train_loss: last.map(|e| e.train_loss),
            final_train_acc: last.map(|e| e.train_acc),
            final_test_acc: last.and_then(|e| e.test_acc),
            best_test_acc: self.epochs.iter().filter_map(|e| e.test_acc).reduce(f64::max),
            n_params: self.n_params,
            aborted: self.aborted.is_some(),
            abort_reason: self.aborted.clone(),
        }
    }

    /// One JSON object per epoch followed by `{"summary": {...}}`.
    pub fn to_jsonl(&self) -> String {
        #[derive(Serialize)]
        struct Wrapped {
            summary: RunSummary,
        }
        let mut out = String::new();
        for e in &self.epochs {
            let _ = writeln!(out, "{}", serde_json::to_string(e).expect("plain struct serializes"));
        }
        let summary = Wrapped { summary: self.summary() };
        let _ = writeln!(out, "{}", serde_json::to_string(&summary).expect("plain struct serializes"));
        out
    }
}

/// Trained parameters plus the metric trajectory.
#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub state: ParamSet,
    pub metrics: RunMetrics,
}

/// Minibatch Adam on `train_set` for `cfg.epochs` epochs, evaluating both
/// sets with dropout off after every epoch. Shuffling and dropout draw from
/// RNG streams derived from `cfg.seed`. A non-finite loss or gradient stops
/// the run and is reported in `metrics.aborted`.
pub fn fit(
    model: &Model,
    init: ParamSet,
    train_set: &[FeatureTensor4D],
    test_set: &[FeatureTensor4D],
    cfg: &TrainConfig,
) -> Result<FitOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Empty("training set"));
    }
    model.check_state(&init)?;
    let mut state = init;
    let mut adam = AdamState::new(&state);
    let mut shuffle_rng = stream_rng(cfg.seed, "shuffle");
    let mut dropout_rng = stream_rng(cfg.seed, "dropout");
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut metrics = RunMetrics {
        epochs: Vec::with_capacity(cfg.epochs),
        n_params: state.n_scalars(),
        aborted: None,
    };
    'epochs: for epoch in 1..=cfg.epochs {
        if cfg.shuffle {
            order.shuffle(&mut shuffle_rng);
        }
        for batch in order.chunks(cfg.batch_size) {
            let samples: Vec<&FeatureTensor4D> = batch.iter().map(|&i| &train_set[i]).collect();
            let labels: Vec<usize> = samples.iter().map(|s| s.label()).collect();
            let x = stack(&samples, cfg.standardize)?;
            let mut tape = Tape::new();
            let p = state.bind(&mut tape);
            let xv = tape.constant(x);
            let logits = model.forward(&mut tape, &p, xv, Some(&mut dropout_rng))?;
            let l = loss(&mut tape, logits, &labels)?;
            if !tape.value(l).item().is_finite() {
                metrics.aborted = Some(format!("non-finite loss in epoch {epoch}"));
                break 'epochs;
            }
            tape.backward(l)?;
            match adam_step(&mut state, &p.grads(&tape), &mut adam, cfg) {
                Ok(()) => {}
                Err(Error::NonFinite(_)) => {
                    metrics.aborted = Some(format!("non-finite gradient in epoch {epoch}"));
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
        }
        let (train_loss, train_acc) = loss_and_accuracy(model, &state, train_set, cfg.standardize)?;
        let test_acc = if test_set.is_empty() {
            None
        } else {
            Some(evaluate(model, &state, test_set, cfg.standardize)?)
        };
        metrics.epochs.push(EpochMetrics {
            epoch,
            train_loss,
            train_acc,
            test_acc,
        });
    }
    Ok(FitOutcome { state, metrics })
}

/// Mean and population standard deviation; `(NaN, NaN)` for no values.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_counts_follow_ratio() {
        let items: Vec<usize> = (0..15).collect();
        let (tr, te) = split(&items, (9, 6), 3, true);
        assert_eq!((tr.len(), te.len()), (9, 6));
        let mut all: Vec<usize> = tr.iter().chain(&te).copied().collect();
        all.sort_unstable();
        assert_eq!(all, items);
        assert_eq!(split(&items, (9, 6), 3, true), (tr, te));
        let empty: (Vec<u8>, Vec<u8>) = split(&[], (9, 6), 0, true);
        assert_eq!(empty, (vec![], vec![]));
        // 9/15 of 10 is 6, of 11 is 6.6 -> 7
        assert_eq!(split(&items[..10], (9, 6), 0, false).0.len(), 6);
        assert_eq!(split(&items[..11], (9, 6), 0, false).0.len(), 7);
    }

    #[test]
    fn first_adam_step_moves_by_learning_rate() {
        let mut p = ParamSet::new();
        p.add("w", Tensor::scalar(0.0)).unwrap();
        let mut adam = AdamState::new(&p);
        let cfg = TrainConfig::default();
        adam_step(&mut p, &[Tensor::scalar(1.0)], &mut adam, &cfg).unwrap();
        let moved = -p.values()[0].item();
        assert!((moved - 0.001).abs() < 1e-10, "{moved}");
        assert_eq!(adam.t, 1);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = ParamSet::new();
        p.add("w", Tensor::from_fn(&[3], |i| i as f64)).unwrap();
        let before = p.clone();
        let mut adam = AdamState::new(&p);
        for _ in 0..5 {
            adam_step(&mut p, &[Tensor::zeros(&[3])], &mut adam, &TrainConfig::default()).unwrap();
        }
        assert_eq!(p, before);
        assert_eq!(adam.t, 5);
    }

    #[test]
    fn non_finite_gradient_rejected_without_change() {
        let mut p = ParamSet::new();
        p.add("w", Tensor::ones(&[2])).unwrap();
        let mut adam = AdamState::new(&p);
        let before = (p.clone(), adam.clone());
        let g = Tensor::new(vec![2], vec![1.0, f64::NAN]).unwrap();
        assert!(matches!(
            adam_step(&mut p, &[g], &mut adam, &TrainConfig::default()),
            Err(Error::NonFinite(_))
        ));
        assert_eq!((p, adam), before);
    }

    #[test]
    fn mean_std_population() {
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!((m, s), (2.0, 1.0));
    }
}
