//! 3D-CNN classifier with interleaved PST-Attention blocks.
//!
//! Input `(B, T, S, V, H)` is read with T as the convolution depth and S as
//! input channels. Each stage is conv3d (same padding) → ReLU →
//! attention block (first `n_attention_blocks` stages) → 2× spatial average
//! pooling. Inside a block the feature channels take the place of S. The
//! head is global average pooling → linear → ReLU → dropout → linear.

use pst_tensor::{Tape, Tensor, Var};
use rand::Rng;

use crate::attention::{AttentionToggles, BlockDims, PstAttentionBlock};
use crate::error::{Error, Result};
use crate::params::{uniform_init, Bound, ParamId, ParamSet};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub t: usize,
    pub s: usize,
    pub v: usize,
    pub h: usize,
    pub n_classes: usize,
    pub conv_channels: Vec<usize>,
    /// (kT, kV, kH)
    pub kernel: [usize; 3],
    pub n_attention_blocks: usize,
    pub attention: AttentionToggles,
    pub fc_hidden: usize,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            t: 9,
            s: 5,
            v: 8,
            h: 9,
            n_classes: 3,
            conv_channels: vec![32, 64],
            kernel: [3, 5, 5],
            n_attention_blocks: 2,
            attention: AttentionToggles::ALL,
            fc_hidden: 128,
            dropout: 0.5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if [self.t, self.s, self.v, self.h].contains(&0) {
            return bad(format!(
                "input extents must be positive, got T={} S={} V={} H={}",
                self.t, self.s, self.v, self.h
            ));
        }
        if self.n_classes < 2 {
            return bad(format!("n_classes must be >= 2, got {}", self.n_classes));
        }
        if self.conv_channels.is_empty() || self.conv_channels.contains(&0) {
            return bad(format!("conv_channels {:?} invalid", self.conv_channels));
        }
        if self.kernel.iter().any(|&k| k == 0 || k % 2 == 0) {
            return bad(format!("kernel {:?} must have odd extents", self.kernel));
        }
        if self.n_attention_blocks > self.conv_channels.len() {
            return bad(format!(
                "{} attention blocks but only {} conv stages",
                self.n_attention_blocks,
                self.conv_channels.len()
            ));
        }
        if self.fc_hidden == 0 {
            return bad("fc_hidden must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }

    pub fn input_shape(&self, batch: usize) -> [usize; 5] {
        [batch, self.t, self.s, self.v, self.h]
    }
}

#[derive(Debug, Clone)]
struct Stage {
    name: String,
    weight: ParamId,
    bias: ParamId,
    attention: Option<PstAttentionBlock>,
    pool: [usize; 3],
}

/// Layer structure; learnable tensors live in the [`ParamSet`] returned by
/// [`Model::new`].
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    stages: Vec<Stage>,
    fc1: (ParamId, ParamId),
    fc2: (ParamId, ParamId),
}

/// Name prefix shared by every attention parameter.
pub fn is_attention_param(name: &str) -> bool {
    name.contains(".attention.")
}

impl Model {
    /// Builds the layers and initializes parameters. Every tensor's initial
    /// value depends only on `(seed, parameter name)`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<(Self, ParamSet)> {
        config.validate()?;
        let mut params = ParamSet::new();
        let mut stages = Vec::with_capacity(config.conv_channels.len());
        let (mut c_in, mut v, mut h) = (config.s, config.v, config.h);
        let [kt, kv, kh] = config.kernel;
        for (i, &c_out) in config.conv_channels.iter().enumerate() {
            let name = format!("stage{}", i + 1);
            let wname = format!("{name}.conv.weight");
            let fan_in = c_in * kt * kv * kh;
            let weight = params.add(&wname, uniform_init(&[c_out, c_in, kt, kv, kh], fan_in, seed, &wname))?;
            let bias = params.add(format!("{name}.conv.bias"), Tensor::zeros(&[c_out]))?;
            let attention = if i < config.n_attention_blocks {
                let dims = BlockDims {
                    t: config.t,
                    s: c_out,
                    v,
                    h,
                };
                Some(PstAttentionBlock::new(
                    &format!("{name}.attention"),
                    dims,
                    config.attention,
                    &mut params,
                    seed,
                )?)
            } else {
                None
            };
            let pool = [1, v.min(2), h.min(2)];
            v /= pool[1];
            h /= pool[2];
            stages.push(Stage {
                name,
                weight,
                bias,
                attention,
                pool,
            });
            c_in = c_out;
        }
        let mut dense = |name: &str, n_out: usize, n_in: usize| -> Result<(ParamId, ParamId)> {
            let wname = format!("{name}.weight");
            let w = params.add(&wname, uniform_init(&[n_out, n_in], n_in, seed, &wname))?;
            let b = params.add(format!("{name}.bias"), Tensor::zeros(&[n_out]))?;
            Ok((w, b))
        };
        let fc1 = dense("fc1", config.fc_hidden, c_in)?;
        let fc2 = dense("fc2", config.n_classes, config.fc_hidden)?;
        Ok((
            Self {
                config,
                stages,
                fc1,
                fc2,
            },
            params,
        ))
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn attention_blocks(&self) -> impl Iterator<Item = &PstAttentionBlock> {
        self.stages.iter().filter_map(|s| s.attention.as_ref())
    }

    /// Switches attention branches on every block (see
    /// [`PstAttentionBlock::set_enabled`]).
    pub fn set_attention(&mut self, enabled: AttentionToggles) -> Result<()> {
        for stage in &mut self.stages {
            if let Some(block) = stage.attention.as_mut() {
                block.set_enabled(enabled)?;
            }
        }
        self.config.attention = enabled;
        Ok(())
    }

    /// Checks that `state` carries the parameter names and shapes this model
    /// expects, in order.
    pub fn check_state(&self, state: &ParamSet) -> Result<()> {
        let (_, fresh) = Model::new(self.config.clone(), 0)?;
        if fresh.names() != state.names() {
            return Err(Error::Config(format!(
                "state has parameters {:?}, model expects {:?}",
                state.names(),
                fresh.names()
            )));
        }
        for ((name, want), got) in fresh.iter().zip(state.values()) {
            if want.shape() != got.shape() {
                return Err(Error::Config(format!(
                    "{name}: shape {:?}, expected {:?}",
                    got.shape(),
                    want.shape()
                )));
            }
        }
        Ok(())
    }

    /// Records the forward pass and returns `[B, n_classes]` logits. Dropout
    /// is applied only when `dropout_rng` is given.
    pub fn forward<R: Rng>(
        &self,
        tape: &mut Tape,
        p: &Bound,
        x: Var,
        dropout_rng: Option<&mut R>,
    ) -> Result<Var> {
        let cfg = &self.config;
        let shape = tape.shape(x).to_vec();
        if shape.len() != 5 || shape[1..] != [cfg.t, cfg.s, cfg.v, cfg.h] {
            return Err(Error::Config(format!(
                "input: shape {shape:?} does not match (B, {}, {}, {}, {})",
                cfg.t, cfg.s, cfg.v, cfg.h
            )));
        }
        let b = shape[0];
        let pad = cfg.kernel.map(|k| k / 2);
        let mut act = tape
            .transpose(x, &[0, 2, 1, 3, 4])
            .map_err(Error::layer("input"))?;
        for stage in &self.stages {
            let conv_name = format!("{}.conv", stage.name);
            act = tape
                .conv3d(act, p[stage.weight], Some(p[stage.bias]), [1; 3], pad)
                .map_err(Error::layer(conv_name))?;
            act = tape.relu(act);
            if let Some(block) = stage.attention.as_ref().filter(|b| b.enabled().any()) {
                let swapped = tape.transpose(act, &[0, 2, 1, 3, 4])?;
                let recal = block.apply(tape, p, swapped)?;
                act = tape.transpose(recal, &[0, 2, 1, 3, 4])?;
            }
            if stage.pool != [1, 1, 1] {
                act = tape
                    .avg_pool(act, &stage.pool)
                    .map_err(Error::layer(format!("{}.pool", stage.name)))?;
            }
        }
        let s = tape.shape(act).to_vec();
        let channels = s[1];
        let flat = tape.reshape(act, &[b, channels, s[2] * s[3] * s[4]])?;
        let pooled = tape.adaptive_avg_pool(flat, 2)?;
        let pooled = tape.reshape(pooled, &[b, channels])?;
        let hidden = tape
            .linear(pooled, p[self.fc1.0], Some(p[self.fc1.1]))
            .map_err(Error::layer("fc1"))?;
        let mut hidden = tape.relu(hidden);
        if let Some(rng) = dropout_rng {
            if cfg.dropout > 0.0 {
                let keep = 1.0 - cfg.dropout;
                let mask = Tensor::from_fn(&[b, cfg.fc_hidden], |_| {
                    if rng.gen::<f64>() < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                });
                let mask = tape.constant(mask);
                hidden = tape.mul(hidden, mask)?;
            }
        }
        tape.linear(hidden, p[self.fc2.0], Some(p[self.fc2.1]))
            .map_err(Error::layer("fc2"))
    }

    /// Evaluation-mode logits for a `(B, T, S, V, H)` batch.
    pub fn logits(&self, state: &ParamSet, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let p = state.bind(&mut tape);
        let xv = tape.constant(x.clone());
        let out = self.forward::<rand_chacha::ChaCha8Rng>(&mut tape, &p, xv, None)?;
        Ok(tape.value(out).clone())
    }

    pub fn predict(&self, state: &ParamSet, x: &Tensor) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.logits(state, x)?))
    }
}

/// Index of the largest entry of every row of a `[B, C]` tensor; ties go to
/// the lowest index.
pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let c = logits.shape()[1];
    logits
        .data()
        .chunks(c)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
        .collect()
}

/// Cross-entropy loss of `logits` against `labels`.
pub fn loss(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    tape.softmax_cross_entropy(logits, labels)
        .map_err(Error::layer("loss"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_tie_goes_low() {
        let l = Tensor::new(vec![3, 3], vec![0.0, 0.0, 0.0, 1.0, 5.0, 5.0, -1.0, -2.0, 3.0]).unwrap();
        assert_eq!(argmax_rows(&l), vec![0, 1, 2]);
    }

    #[test]
    fn invalid_configs_rejected() {
        let ok = ModelConfig::default();
        assert!(ok.validate().is_ok());
        for bad in [
            ModelConfig { n_attention_blocks: 3, ..ok.clone() },
            ModelConfig { kernel: [2, 5, 5], ..ok.clone() },
            ModelConfig { conv_channels: vec![], ..ok.clone() },
            ModelConfig { dropout: 1.0, ..ok.clone() },
            ModelConfig { n_classes: 1, ..ok.clone() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn default_parameter_names() {
        let (_, p) = Model::new(ModelConfig::default(), 0).unwrap();
        let names: Vec<&str> = p.names().iter().map(String::as_str).collect();
        assert_eq!(names[0], "stage1.conv.weight");
        assert!(names.contains(&"stage2.attention.temporal.weight"));
        assert_eq!(*names.last().unwrap(), "fc2.bias");
        assert_eq!(p.by_name("stage1.conv.weight").unwrap().shape(), &[32, 5, 3, 5, 5]);
        assert_eq!(p.by_name("stage1.attention.positional.weight").unwrap().shape(), &[17, 17, 1, 1]);
        // stage 2 sees the pooled 4 x 4 grid
        assert_eq!(p.by_name("stage2.attention.positional.weight").unwrap().shape(), &[8, 8, 1, 1]);
        assert_eq!(p.by_name("stage2.attention.spectral.weight").unwrap().shape(), &[64, 1, 64, 1, 1]);
        assert_eq!(p.by_name("fc1.weight").unwrap().shape(), &[128, 64]);
    }

    #[test]
    fn wrong_input_names_layer() {
        let cfg = ModelConfig {
            t: 3,
            s: 2,
            v: 4,
            h: 4,
            conv_channels: vec![2, 2],
            fc_hidden: 4,
            ..ModelConfig::default()
        };
        let (m, p) = Model::new(cfg, 0).unwrap();
        let err = m.logits(&p, &Tensor::zeros(&[1, 3, 2, 4, 5])).unwrap_err();
        assert!(err.to_string().contains("input: shape [1, 3, 2, 4, 5]"), "{err}");
    }
}
