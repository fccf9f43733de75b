use rand::Rng;
use rand_distr::StandardNormal;

use super::gradcheck::{check_gradients, GradCheckOptions, GradCheckReport};
use super::tape::{Fault, Tape, Var};
use super::Tensor;
use crate::error::Result;
use crate::rng::indexed_rng;

type Forward = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>;

struct Case {
    name: &'static str,
    params: Vec<(String, Tensor<f64>)>,
    forward: Forward,
}

/// Reduces any output to a scalar with fixed random weights, so every
/// output coordinate gets a distinct upstream gradient.
fn project(tape: &mut Tape<f64>, out: Var, weights: &Tensor<f64>) -> Result<Var> {
    let w = tape.constant(weights.clone());
    let p = tape.mul(out, w)?;
    tape.mean_all(p)
}

/// Gradient checks of every differentiable tape op, each on freshly drawn
/// inputs for `seed`. With `fault` set, that fault is injected into every
/// forward pass (a negative control).
pub fn op_gradcheck_suite(
    seed: u64,
    opts: &GradCheckOptions,
    fault: Option<Fault>,
) -> Result<Vec<(&'static str, GradCheckReport)>> {
    let mut rng = indexed_rng(seed, "op-suite", 0);
    let mut mat = |r: usize, c: usize| -> Tensor<f64> {
        let data = (0..r * c).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        Tensor::new(vec![r, c], data).expect("shape matches")
    };
    let p = |name: &str, t: Tensor<f64>| (name.to_string(), t);

    let mut cases: Vec<Case> = Vec::new();
    macro_rules! case {
        ($name:expr, [$($param:expr),*], $out_shape:expr, |$tape:ident, $v:ident| $body:expr) => {{
            let (r, c) = $out_shape;
            let w = mat(r, c);
            cases.push(Case {
                name: $name,
                params: vec![$($param),*],
                forward: Box::new(move |$tape: &mut Tape<f64>, $v: &[Var]| {
                    let out = $body?;
                    project($tape, out, &w)
                }),
            });
        }};
    }

    case!("matmul", [p("a", mat(3, 4)), p("b", mat(4, 5))], (3, 5), |t, v| t.matmul(v[0], v[1]));
    case!("matmul_t", [p("a", mat(3, 4)), p("b", mat(5, 4))], (3, 5), |t, v| t.matmul_t(v[0], v[1]));
    case!("add", [p("a", mat(3, 4)), p("b", mat(3, 4))], (3, 4), |t, v| t.add(v[0], v[1]));
    case!("add_row", [p("a", mat(3, 4)), p("b", mat(1, 4))], (3, 4), |t, v| t.add(v[0], v[1]));
    case!("add_scalar", [p("a", mat(3, 4)), p("b", mat(1, 1))], (3, 4), |t, v| t.add(v[0], v[1]));
    case!("sub", [p("a", mat(3, 4)), p("b", mat(1, 4))], (3, 4), |t, v| t.sub(v[0], v[1]));
    case!("mul", [p("a", mat(3, 4)), p("b", mat(3, 4))], (3, 4), |t, v| t.mul(v[0], v[1]));
    case!("mul_row", [p("a", mat(3, 4)), p("b", mat(1, 4))], (3, 4), |t, v| t.mul(v[0], v[1]));
    case!("scale", [p("a", mat(3, 4))], (3, 4), |t, v| Ok::<_, crate::Error>(t.scale(v[0], -0.7)));
    case!("sigmoid", [p("a", mat(3, 4))], (3, 4), |t, v| Ok::<_, crate::Error>(t.sigmoid(v[0])));
    case!("gelu", [p("a", mat(3, 4))], (3, 4), |t, v| Ok::<_, crate::Error>(t.gelu(v[0])));
    case!("softmax_rows", [p("a", mat(3, 5))], (3, 5), |t, v| Ok::<_, crate::Error>(t.softmax_rows(v[0])));
    case!(
        "layer_norm",
        [p("x", mat(3, 6)), p("gain", mat(1, 6)), p("bias", mat(1, 6))],
        (3, 6),
        |t, v| t.layer_norm(v[0], v[1], v[2], 1e-5)
    );
    case!("mean_rows", [p("a", mat(3, 4))], (1, 4), |t, v| t.mean_axis(v[0], 0));
    case!("mean_cols", [p("a", mat(3, 4))], (3, 1), |t, v| t.mean_axis(v[0], 1));
    case!("mean_all", [p("a", mat(3, 4))], (1, 1), |t, v| t.mean_all(v[0]));
    case!("concat_rows", [p("a", mat(2, 4)), p("b", mat(3, 4))], (5, 4), |t, v| t.concat_rows(&[v[0], v[1]]));
    case!("concat_cols", [p("a", mat(3, 2)), p("b", mat(3, 3))], (3, 5), |t, v| t.concat_cols(&[v[0], v[1]]));
    case!("slice_rows", [p("a", mat(5, 3))], (2, 3), |t, v| t.slice_rows(v[0], 1, 3));
    case!("slice_cols", [p("a", mat(3, 5))], (3, 3), |t, v| t.slice_cols(v[0], 2, 5));
    case!("gather_rows", [p("table", mat(4, 3))], (5, 3), |t, v| t.gather_rows(v[0], &[2, 0, 2, 3, 2]));
    case!("dropout", [p("a", mat(4, 5))], (4, 5), |t, v| {
        t.set_dropout_seed(11);
        t.dropout(v[0], 0.3)
    });
    case!("cross_entropy", [p("logits", mat(3, 4))], (1, 1), |t, v| t.cross_entropy_logits(v[0], &[1, 3, 0]));
    let targets: Vec<f64> = mat(3, 2).into_data();
    case!("mse", [p("pred", mat(3, 2))], (1, 1), |t, v| t.mse(v[0], &targets));

    cases
        .into_iter()
        .map(|c| {
            let f = &c.forward;
            let report = check_gradients(
                &c.params,
                |tape: &mut Tape<f64>, vars: &[Var]| {
                    if let Some(fault) = fault {
                        tape.inject_fault(fault);
                    }
                    f(tape, vars)
                },
                opts,
            )?;
            Ok((c.name, report))
        })
        .collect()
}
