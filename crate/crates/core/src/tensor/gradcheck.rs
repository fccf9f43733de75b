use rand::seq::index::sample;
use serde::Serialize;

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::stream_rng;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Relative perturbation: each coordinate moves by `step * max(1, |w|)`.
    pub step: f64,
    pub tolerance: f64,
    /// Denominator floor for the relative error, so coordinates whose true
    /// gradient is ~0 are compared absolutely.
    pub floor: f64,
    /// Check at most this many coordinates per tensor (sampled by `seed`).
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            tolerance: 1e-4,
            floor: 1e-6,
            max_coords: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub coords_checked: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.tensors.iter().all(|t| t.max_rel_error < self.tolerance)
    }
}

fn run<F>(params: &[(String, Tensor<f64>)], forward: &F) -> Result<(Tape<f64>, Vec<Var>, Var)>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|(_, t)| tape.param(t.clone())).collect();
    let loss = forward(&mut tape, &vars)?;
    if tape.value(loss).numel() != 1 {
        return Err(Error::contract("gradient check needs a scalar loss"));
    }
    Ok((tape, vars, loss))
}

/// Compares tape gradients against central finite differences in `f64`.
///
/// `forward` receives the tape and one leaf per entry of `params` and must
/// return a scalar loss. It is run twice up front; differing results are
/// reported as a contract error, since finite differences are meaningless
/// for a stochastic function.
pub fn check_gradients<F>(
    params: &[(String, Tensor<f64>)],
    forward: F,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let (tape, vars, loss) = run(params, &forward)?;
    let (tape2, _, loss2) = run(params, &forward)?;
    let l1 = tape.value(loss).item();
    let l2 = tape2.value(loss2).item();
    if l1.to_bits() != l2.to_bits() {
        return Err(Error::contract(format!(
            "forward is not deterministic ({l1} vs {l2}); disable dropout"
        )));
    }
    drop(tape2);
    let grads = tape.backward(loss)?;

    let eval = |perturbed: &[(String, Tensor<f64>)]| -> Result<f64> {
        let (t, _, l) = run(perturbed, &forward)?;
        Ok(t.value(l).item())
    };

    let mut rng = stream_rng(opts.seed, "gradcheck");
    let mut work: Vec<(String, Tensor<f64>)> = params.to_vec();
    let mut tensors = Vec::with_capacity(params.len());
    for (pi, (name, value)) in params.iter().enumerate() {
        let analytic = grads.wrt(vars[pi]);
        let n = value.numel();
        let coords: Vec<usize> = match opts.max_coords {
            Some(m) if m < n => {
                let mut c = sample(&mut rng, n, m).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..n).collect(),
        };
        let mut worst: f64 = 0.0;
        for &i in &coords {
            let w = value.data()[i];
            let h = opts.step * w.abs().max(1.0);
            work[pi].1.data_mut()[i] = w + h;
            let fp = eval(&work)?;
            work[pi].1.data_mut()[i] = w - h;
            let fm = eval(&work)?;
            work[pi].1.data_mut()[i] = w;
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic.data()[i];
            let denom = a.abs().max(numeric.abs()).max(opts.floor);
            let rel = (a - numeric).abs() / denom;
            if !rel.is_finite() {
                return Err(Error::Numerical(format!("non-finite gradient for {name}[{i}]")));
            }
            worst = worst.max(rel);
        }
        tensors.push(TensorCheck {
            name: name.clone(),
            max_rel_error: worst,
            coords_checked: coords.len(),
        });
    }
    Ok(GradCheckReport {
        tolerance: opts.tolerance,
        tensors,
    })
}
