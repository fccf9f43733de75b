//! The fusion network.
//!
//! Two aligned `[L × d]` streams are fused by one of nine strategies,
//! encoded by `n_layers` pre-norm Transformer layers (cross-attention layers
//! for the cross strategies), pooled to a vector and fed to a one-hidden-layer
//! head. Parameters live in a [`ParamSet`]; every forward pass binds them to
//! a [`Tape`] so the same code serves training, inference and attribution.

mod checkpoint;
mod config;
mod layers;
mod params;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_VERSION};
pub use config::{FusionStrategy, Modality, ModelConfig, Pooling, Task};
pub use layers::{
    cross_layer, encoder_layer, feed_forward, gated_residual, linear, multi_head_attention, pool_sequence,
    Trace, LAYER_NORM_EPS,
};
pub use params::{
    check_params, init_params, AttnWeights, FeedForward, LayerWeights, Layout, Linear, Norm, ParamSet, PoolWeights,
};

use crate::alignment::AlignedPair;
use crate::error::{Error, Result};
use crate::tensor::{check_gradients, GradCheckOptions, GradCheckReport, Scalar, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct FusionModel<T: Scalar = f32> {
    config: ModelConfig,
    layout: Layout<usize>,
    params: ParamSet<T>,
}

/// Parameters placed on a tape.
#[derive(Clone, Debug)]
pub struct Bound {
    pub vars: Vec<Var>,
    pub layout: Layout<Var>,
}

impl<T: Scalar> FusionModel<T> {
    pub fn new(config: ModelConfig) -> Result<Self> {
        let (layout, params) = init_params(&config)?;
        Ok(FusionModel { config, layout, params })
    }

    pub fn from_params(config: ModelConfig, params: ParamSet<T>) -> Result<Self> {
        let layout = check_params(&config, &params)?;
        Ok(FusionModel { config, layout, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout<usize> {
        &self.layout
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn cast<U: Scalar>(&self) -> FusionModel<U> {
        FusionModel {
            config: self.config.clone(),
            layout: self.layout.clone(),
            params: self.params.cast(),
        }
    }

    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> Bound {
        let vars = self.params.bind(tape, trainable);
        let layout = self.layout.map(&|i| vars[i]);
        Bound { vars, layout }
    }

    /// Runs the network on two `[L × input_dim]` streams and returns the
    /// `[1 × out]` logits (or score).
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        audio: Var,
        text: Var,
        train: bool,
        trace: &mut Trace,
    ) -> Result<Var> {
        let cfg = &self.config;
        let w = &bound.layout;
        let drop = if train { cfg.dropout_rate } else { 0.0 };
        for (name, v) in [("audio", audio), ("text", text)] {
            let s = tape.shape(v);
            if s.len() != 2 || s[0] == 0 || s[1] != cfg.input_dim {
                return Err(Error::contract(format!(
                    "{name} input has shape {s:?}, expected [L, {}]",
                    cfg.input_dim
                )));
            }
        }
        let audio = match &w.input_audio {
            Some(l) => linear(tape, audio, l)?,
            None => audio,
        };
        let text = match &w.input_text {
            Some(l) => linear(tape, text, l)?,
            None => text,
        };
        let (la, lt) = (tape.value(audio).rows(), tape.value(text).rows());

        let pooled = if cfg.fusion.is_cross() {
            let (q, c) = match cfg.query_modality {
                Modality::Audio => (audio, text),
                Modality::Text => (text, audio),
            };
            let first = self.cross_branch(tape, w, 0, q, c, drop, trace)?;
            if cfg.fusion.is_bidirectional() {
                let second = self.cross_branch(tape, w, 1, c, q, drop, trace)?;
                let sum = tape.add(first, second)?;
                tape.scale(sum, 0.5)
            } else {
                first
            }
        } else {
            let elementwise = matches!(cfg.fusion, FusionStrategy::Mean | FusionStrategy::Sum | FusionStrategy::Prod);
            if elementwise && la != lt {
                return Err(Error::contract(format!(
                    "{:?} fusion requires equal sequence lengths, got audio {la} and text {lt}",
                    cfg.fusion
                )));
            }
            let fused = match cfg.fusion {
                FusionStrategy::Concat => tape.concat_rows(&[audio, text])?,
                FusionStrategy::Mean => {
                    let s = tape.add(audio, text)?;
                    tape.scale(s, 0.5)
                }
                FusionStrategy::Sum => tape.add(audio, text)?,
                FusionStrategy::Prod => tape.mul(audio, text)?,
                FusionStrategy::SelfAttn => {
                    let a = tape.mean_axis(audio, 0)?;
                    let t = tape.mean_axis(text, 0)?;
                    tape.concat_rows(&[a, t])?
                }
                _ => unreachable!("cross strategies handled above"),
            };
            let mut x = self.prepare(tape, w, fused)?;
            for layer in &w.branches[0] {
                x = encoder_layer(tape, x, layer, cfg.n_heads, drop, trace)?;
            }
            pool_sequence(tape, x, cfg.pooling, w.pool.as_ref(), trace)?
        };

        let h = linear(tape, pooled, &w.head_hidden)?;
        let h = tape.gelu(h);
        let h = tape.dropout(h, drop)?;
        linear(tape, h, &w.head_out)
    }

    #[allow(clippy::too_many_arguments)]
    fn cross_branch(
        &self,
        tape: &mut Tape<T>,
        w: &Layout<Var>,
        branch: usize,
        query: Var,
        context: Var,
        drop: f64,
        trace: &mut Trace,
    ) -> Result<Var> {
        let mut q = self.prepare(tape, w, query)?;
        let c = self.add_positions(tape, w, context)?;
        for layer in &w.branches[branch] {
            q = cross_layer(tape, q, c, layer, self.config.n_heads, drop, trace)?;
        }
        pool_sequence(tape, q, self.config.pooling, w.pool.as_ref(), trace)
    }

    /// Prepends the classification token when pooling uses it, then adds
    /// positional embeddings.
    fn prepare(&self, tape: &mut Tape<T>, w: &Layout<Var>, x: Var) -> Result<Var> {
        let x = match w.cls {
            Some(cls) => tape.concat_rows(&[cls, x])?,
            None => x,
        };
        self.add_positions(tape, w, x)
    }

    fn add_positions(&self, tape: &mut Tape<T>, w: &Layout<Var>, x: Var) -> Result<Var> {
        let l = tape.value(x).rows();
        if l > self.config.max_len {
            return Err(Error::contract(format!(
                "sequence of {l} tokens exceeds max_len {}",
                self.config.max_len
            )));
        }
        let idx: Vec<usize> = (0..l).collect();
        let pos = tape.gather_rows(w.positions, &idx)?;
        tape.add(x, pos)
    }

    /// Places a pair's streams on the tape as constants and runs the network.
    pub fn forward_pair(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        pair: &AlignedPair,
        train: bool,
        trace: &mut Trace,
    ) -> Result<Var> {
        let audio = tape.constant(pair.audio.cast());
        let text = tape.constant(pair.text.cast());
        self.forward(tape, bound, audio, text, train, trace)
    }

    /// Eval-mode output for one pair.
    pub fn predict(&self, pair: &AlignedPair) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let out = self.forward_pair(&mut tape, &bound, pair, false, &mut Trace::default())?;
        Ok(tape.value(out).data().iter().map(|v| v.as_f64()).collect())
    }

    /// Loss of one pair's output against its label (Classify) or MMSE
    /// (Regress).
    pub fn sample_loss(&self, tape: &mut Tape<T>, output: Var, pair: &AlignedPair) -> Result<Var> {
        match self.config.task {
            Task::Classify => {
                let label = pair
                    .label
                    .ok_or_else(|| Error::contract(format!("subject {} has no label", pair.subject_id)))?;
                tape.cross_entropy_logits(output, &[label.index()])
            }
            Task::Regress => {
                let mmse = pair
                    .mmse
                    .ok_or_else(|| Error::contract(format!("subject {} has no MMSE score", pair.subject_id)))?;
                tape.mse(output, &[T::of(mmse)])
            }
        }
    }
}

/// Finite-difference check of every parameter tensor of a model built from
/// `config` (dropout disabled), using the training loss on `pair`.
pub fn model_gradcheck(config: &ModelConfig, pair: &AlignedPair, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let m = FusionModel::<f64>::new(ModelConfig {
        dropout_rate: 0.0,
        ..config.clone()
    })?;
    let params: Vec<(String, Tensor<f64>)> = m.params().iter().map(|(n, t)| (n.to_string(), t.clone())).collect();
    check_gradients(
        &params,
        |tape, vars| {
            let bound = Bound {
                vars: vars.to_vec(),
                layout: m.layout().map(&|i| vars[i]),
            };
            let out = m.forward_pair(tape, &bound, pair, false, &mut Trace::default())?;
            m.sample_loss(tape, out, pair)
        },
        opts,
    )
}

/// Softmax of a logit vector, computed in `f64`.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mx = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|v| (v - mx).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Builds an input tensor for [`FusionModel::forward`] callers that work
/// with raw rows.
pub fn stream_tensor<T: Scalar>(rows: &[Vec<f64>]) -> Result<Tensor<T>> {
    let cast: Vec<Vec<T>> = rows.iter().map(|r| r.iter().map(|&v| T::of(v)).collect()).collect();
    Tensor::from_rows(&cast)
}
