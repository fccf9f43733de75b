use serde::{Deserialize, Serialize};

use crate::alignment::{AlignedPair, Label};
use crate::error::{Error, Result};
use crate::model::{FusionModel, Task, Trace};
use crate::tensor::{Tape, Tensor, Var};

/// A scalar function of the two aligned input streams, evaluated on an
/// `f64` tape.
pub trait Attributable {
    fn output(&self, tape: &mut Tape<f64>, audio: Var, text: Var) -> Result<Var>;
}

/// One output coordinate of a fusion model in eval mode.
pub struct ModelOutput<'a> {
    pub model: &'a FusionModel<f64>,
    pub index: usize,
}

impl Attributable for ModelOutput<'_> {
    fn output(&self, tape: &mut Tape<f64>, audio: Var, text: Var) -> Result<Var> {
        let bound = self.model.bind(tape, false);
        let out = self.model.forward(tape, &bound, audio, text, false, &mut Trace::default())?;
        tape.slice_cols(out, self.index, self.index + 1)
    }
}

/// `F(a, t) = Σ w_a ⊙ a + Σ w_t ⊙ t`.
pub struct LinearFunction {
    pub w_audio: Tensor<f64>,
    pub w_text: Tensor<f64>,
}

impl Attributable for LinearFunction {
    fn output(&self, tape: &mut Tape<f64>, audio: Var, text: Var) -> Result<Var> {
        let wa = tape.constant(self.w_audio.clone());
        let wt = tape.constant(self.w_text.clone());
        let pa = tape.mul(audio, wa)?;
        let pt = tape.mul(text, wt)?;
        let s = tape.add(pa, pt)?;
        let n = tape.value(s).numel() as f64;
        let m = tape.mean_all(s)?;
        Ok(tape.scale(m, n))
    }
}

/// Attributions per input element for both streams.
#[derive(Clone, Debug, PartialEq)]
pub struct PathIntegral {
    pub audio: Tensor<f64>,
    pub text: Tensor<f64>,
    pub output: f64,
    pub baseline_output: f64,
}

impl PathIntegral {
    pub fn total(&self) -> f64 {
        self.audio.data().iter().chain(self.text.data()).sum()
    }

    pub fn completeness_gap(&self) -> f64 {
        (self.total() - (self.output - self.baseline_output)).abs()
    }
}

fn eval_grad(f: &dyn Attributable, audio: &Tensor<f64>, text: &Tensor<f64>) -> Result<(f64, Tensor<f64>, Tensor<f64>)> {
    let mut tape = Tape::new();
    let a = tape.leaf(audio.clone(), true);
    let t = tape.leaf(text.clone(), true);
    let out = f.output(&mut tape, a, t)?;
    if tape.value(out).numel() != 1 {
        return Err(Error::contract("attribution target must be a single value"));
    }
    let value = tape.value(out).item();
    let g = tape.backward(out)?;
    let (ga, gt) = (g.wrt(a), g.wrt(t));
    if !(value.is_finite() && ga.is_finite() && gt.is_finite()) {
        return Err(Error::Numerical("non-finite output or gradient on the attribution path".into()));
    }
    Ok((value, ga, gt))
}

/// Placement of the `steps + 1` quadrature nodes on `[0, 1]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum PathGrid {
    /// `α_k = k / steps`.
    Uniform,
    /// `α_k = (k / steps)²`, dense near the baseline where layer norms of
    /// nearly-zero rows make the integrand change fastest.
    #[default]
    Quadratic,
}

/// Integrated gradients along the straight path from the baseline to the
/// input, trapezoid rule over `steps` intervals (`steps + 1` evaluations).
pub fn integrate_path(
    f: &dyn Attributable,
    audio: &Tensor<f64>,
    text: &Tensor<f64>,
    base_audio: &Tensor<f64>,
    base_text: &Tensor<f64>,
    steps: usize,
    grid: PathGrid,
) -> Result<PathIntegral> {
    if steps == 0 {
        return Err(Error::contract("integration needs at least one step"));
    }
    if audio.shape() != base_audio.shape() || text.shape() != base_text.shape() {
        return Err(Error::contract(format!(
            "baseline shapes {:?}/{:?} differ from inputs {:?}/{:?}",
            base_audio.shape(),
            base_text.shape(),
            audio.shape(),
            text.shape()
        )));
    }
    let lerp = |x: &Tensor<f64>, b: &Tensor<f64>, alpha: f64| -> Tensor<f64> {
        let data = x.data().iter().zip(b.data()).map(|(&xi, &bi)| bi + alpha * (xi - bi)).collect();
        Tensor::new(x.shape().to_vec(), data).expect("same shape")
    };
    let mut acc_a = vec![0.0; audio.numel()];
    let mut acc_t = vec![0.0; text.numel()];
    let (mut output, mut baseline_output) = (0.0, 0.0);
    let grid: Vec<f64> = (0..=steps)
        .map(|k| {
            let u = k as f64 / steps as f64;
            match grid {
                PathGrid::Uniform => u,
                PathGrid::Quadratic => u * u,
            }
        })
        .collect();
    for k in 0..=steps {
        let alpha = grid[k];
        let left = if k > 0 { grid[k] - grid[k - 1] } else { 0.0 };
        let right = if k < steps { grid[k + 1] - grid[k] } else { 0.0 };
        let weight = 0.5 * (left + right);
        let (v, ga, gt) = eval_grad(f, &lerp(audio, base_audio, alpha), &lerp(text, base_text, alpha))
            .map_err(|e| match e {
                Error::Numerical(m) => Error::Numerical(format!("{m} (alpha = {alpha})")),
                other => other,
            })?;
        if k == 0 {
            baseline_output = v;
        }
        if k == steps {
            output = v;
        }
        for (acc, g) in acc_a.iter_mut().zip(ga.data()) {
            *acc += weight * g;
        }
        for (acc, g) in acc_t.iter_mut().zip(gt.data()) {
            *acc += weight * g;
        }
    }
    let scale = |acc: Vec<f64>, x: &Tensor<f64>, b: &Tensor<f64>| -> Tensor<f64> {
        let data = acc
            .iter()
            .zip(x.data().iter().zip(b.data()))
            .map(|(g, (xi, bi))| (xi - bi) * g)
            .collect();
        Tensor::new(x.shape().to_vec(), data).expect("same shape")
    };
    Ok(PathIntegral {
        audio: scale(acc_a, audio, base_audio),
        text: scale(acc_t, text, base_text),
        output,
        baseline_output,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionMap {
    pub subject_id: String,
    pub tokens: Vec<String>,
    pub scores: Vec<f64>,
    /// Class whose logit was attributed; `None` for regression.
    pub predicted_class: Option<Label>,
    pub steps: usize,
    /// `F(x) − F(baseline)` of the attributed output.
    pub output_gap: f64,
    pub completeness_gap: f64,
}

impl AttributionMap {
    /// Completeness gap relative to the output gap.
    pub fn relative_gap(&self) -> f64 {
        if self.output_gap == 0.0 {
            if self.completeness_gap == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            self.completeness_gap / self.output_gap.abs()
        }
    }
}

/// Token attributions for one pair. The attributed output is the logit of
/// `target` (by default the predicted class) or the regression score. Each
/// token's score sums the attributions of its audio and text rows. The
/// baseline defaults to zeros on both streams.
pub fn integrated_gradients(
    model: &FusionModel<f32>,
    pair: &AlignedPair,
    target: Option<Label>,
    steps: usize,
    baseline: Option<(&Tensor<f32>, &Tensor<f32>)>,
) -> Result<AttributionMap> {
    if steps < 8 {
        return Err(Error::contract(format!("integrated gradients needs at least 8 steps, got {steps}")));
    }
    let m64 = model.cast::<f64>();
    let audio: Tensor<f64> = pair.audio.cast();
    let text: Tensor<f64> = pair.text.cast();
    let (ba, bt) = match baseline {
        Some((a, t)) => (a.cast(), t.cast()),
        None => (Tensor::zeros(audio.shape().to_vec()), Tensor::zeros(text.shape().to_vec())),
    };
    let (index, predicted_class) = match model.config().task {
        Task::Regress => (0, None),
        Task::Classify => {
            let class = match target {
                Some(c) => c,
                None => {
                    let out = m64.predict(pair)?;
                    if out[1] > out[0] {
                        Label::Alzheimers
                    } else {
                        Label::HealthyControl
                    }
                }
            };
            (class.index(), Some(class))
        }
    };
    let f = ModelOutput { model: &m64, index };
    let pi = integrate_path(&f, &audio, &text, &ba, &bt, steps, PathGrid::default())?;
    let scores = (0..pair.len())
        .map(|r| pi.audio.row(r).iter().sum::<f64>() + pi.text.row(r).iter().sum::<f64>())
        .collect();
    Ok(AttributionMap {
        subject_id: pair.subject_id.clone(),
        tokens: pair.tokens.iter().map(|t| t.text.clone()).collect(),
        scores,
        predicted_class,
        steps,
        output_gap: pi.output - pi.baseline_output,
        completeness_gap: pi.completeness_gap(),
    })
}
