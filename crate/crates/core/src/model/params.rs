use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::{ModelConfig, Pooling};
use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Named tensors in a fixed order. Indices into the set are what the
/// layout structs below hold.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T: Scalar = f32> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> Default for ParamSet<T> {
    fn default() -> Self {
        ParamSet {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }
}

impl<T: Scalar> ParamSet<T> {
    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> usize {
        self.names.push(name.into());
        self.tensors.push(tensor);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn get(&self, i: usize) -> &Tensor<T> {
        &self.tensors[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Tensor<T> {
        &mut self.tensors[i]
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    /// Places every tensor on `tape` as a leaf, in set order.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> Vec<Var> {
        self.tensors
            .iter()
            .map(|t| tape.leaf(t.clone(), trainable))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Linear<P> {
    /// `[in × out]`
    pub w: P,
    /// `[out]`
    pub b: P,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Norm<P> {
    pub gain: P,
    pub bias: P,
}

/// Full-width query/key/value/output projections; head `h` uses columns
/// `h·d_h .. (h+1)·d_h` of the first three.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttnWeights<P> {
    pub q: Linear<P>,
    pub k: Linear<P>,
    pub v: Linear<P>,
    pub o: Linear<P>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FeedForward<P> {
    pub up: Linear<P>,
    pub down: Linear<P>,
}

/// One encoder layer. Cross-attention layers carry a separate norm for the
/// context stream; gated ones carry the gate projection.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerWeights<P> {
    pub norm_attn: Norm<P>,
    pub norm_context: Option<Norm<P>>,
    pub attn: AttnWeights<P>,
    pub gate: Option<Linear<P>>,
    pub norm_ff: Norm<P>,
    pub ff: FeedForward<P>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolWeights<P> {
    /// `[1 × d]` attention scoring vector.
    pub w_a: P,
    /// Per-token gate, present for gated attention pooling.
    pub gate: Option<(P, P)>,
}

/// Where every parameter lives, either as set indices (`P = usize`) or as
/// tape variables (`P = Var`).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout<P> {
    pub input_audio: Option<Linear<P>>,
    pub input_text: Option<Linear<P>>,
    pub positions: P,
    pub cls: Option<P>,
    /// One stack per encoder branch; bidirectional fusion has two.
    pub branches: Vec<Vec<LayerWeights<P>>>,
    pub pool: Option<PoolWeights<P>>,
    pub head_hidden: Linear<P>,
    pub head_out: Linear<P>,
}

impl<P: Copy> Linear<P> {
    pub fn map<Q>(&self, f: &impl Fn(P) -> Q) -> Linear<Q> {
        Linear { w: f(self.w), b: f(self.b) }
    }
}

impl<P: Copy> Norm<P> {
    pub fn map<Q>(&self, f: &impl Fn(P) -> Q) -> Norm<Q> {
        Norm {
            gain: f(self.gain),
            bias: f(self.bias),
        }
    }
}

impl<P: Copy> AttnWeights<P> {
    pub fn map<Q>(&self, f: &impl Fn(P) -> Q) -> AttnWeights<Q> {
        AttnWeights {
            q: self.q.map(f),
            k: self.k.map(f),
            v: self.v.map(f),
            o: self.o.map(f),
        }
    }
}

impl<P: Copy> LayerWeights<P> {
    pub fn map<Q>(&self, f: &impl Fn(P) -> Q) -> LayerWeights<Q> {
        LayerWeights {
            norm_attn: self.norm_attn.map(f),
            norm_context: self.norm_context.map(|n| n.map(f)),
            attn: self.attn.map(f),
            gate: self.gate.map(|g| g.map(f)),
            norm_ff: self.norm_ff.map(f),
            ff: FeedForward {
                up: self.ff.up.map(f),
                down: self.ff.down.map(f),
            },
        }
    }
}

impl<P: Copy> Layout<P> {
    pub fn map<Q>(&self, f: &impl Fn(P) -> Q) -> Layout<Q> {
        Layout {
            input_audio: self.input_audio.map(|l| l.map(f)),
            input_text: self.input_text.map(|l| l.map(f)),
            positions: f(self.positions),
            cls: self.cls.map(f),
            branches: self
                .branches
                .iter()
                .map(|b| b.iter().map(|l| l.map(f)).collect())
                .collect(),
            pool: self.pool.map(|p| PoolWeights {
                w_a: f(p.w_a),
                gate: p.gate.map(|(w, b)| (f(w), f(b))),
            }),
            head_hidden: self.head_hidden.map(f),
            head_out: self.head_out.map(f),
        }
    }
}

enum Init {
    Xavier,
    Zeros,
    Ones,
    Normal(f64),
}

struct Builder<'a, T: Scalar> {
    set: ParamSet<T>,
    rng: &'a mut ChaCha8Rng,
}

impl<T: Scalar> Builder<'_, T> {
    fn add(&mut self, name: String, shape: Vec<usize>, init: Init) -> usize {
        let n: usize = shape.iter().product();
        let data: Vec<T> = match init {
            Init::Zeros => vec![T::zero(); n],
            Init::Ones => vec![T::one(); n],
            Init::Xavier => {
                let (fan_in, fan_out) = (shape[0], shape[shape.len() - 1]);
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                (0..n).map(|_| T::of(self.rng.random_range(-a..a))).collect()
            }
            Init::Normal(sd) => {
                let dist = Normal::new(0.0, sd).expect("positive sd");
                (0..n).map(|_| T::of(dist.sample(self.rng))).collect()
            }
        };
        self.set.push(name, Tensor::new(shape, data).expect("shape matches data"))
    }

    fn linear(&mut self, name: &str, input: usize, output: usize) -> Linear<usize> {
        Linear {
            w: self.add(format!("{name}.w"), vec![input, output], Init::Xavier),
            b: self.add(format!("{name}.b"), vec![output], Init::Zeros),
        }
    }

    fn norm(&mut self, name: &str, d: usize) -> Norm<usize> {
        Norm {
            gain: self.add(format!("{name}.gain"), vec![d], Init::Ones),
            bias: self.add(format!("{name}.bias"), vec![d], Init::Zeros),
        }
    }
}

/// Builds the parameter layout for `config` and initializes it from the
/// config's seed (Xavier-uniform matrices, zero biases, unit norm gains).
pub fn init_params<T: Scalar>(config: &ModelConfig) -> Result<(Layout<usize>, ParamSet<T>)> {
    config.validate()?;
    let d = config.d_model;
    let mut rng = stream_rng(config.seed, "init");
    let mut b = Builder {
        set: ParamSet::default(),
        rng: &mut rng,
    };

    let (input_audio, input_text) = if config.input_dim != d {
        (
            Some(b.linear("input.audio", config.input_dim, d)),
            Some(b.linear("input.text", config.input_dim, d)),
        )
    } else {
        (None, None)
    };
    let positions = b.add("positions".into(), vec![config.max_len, d], Init::Normal(0.02));
    let cls = (config.pooling == Pooling::Cls).then(|| b.add("cls".into(), vec![1, d], Init::Normal(0.02)));

    let n_branches = if config.fusion.is_bidirectional() { 2 } else { 1 };
    let cross = config.fusion.is_cross();
    let gated = config.fusion.is_gated();
    let mut branches = Vec::with_capacity(n_branches);
    for br in 0..n_branches {
        let mut layers = Vec::with_capacity(config.n_layers);
        for li in 0..config.n_layers {
            let p = format!("branch{br}.layer{li}");
            let norm_attn = b.norm(&format!("{p}.norm_attn"), d);
            let norm_context = cross.then(|| b.norm(&format!("{p}.norm_context"), d));
            let attn = AttnWeights {
                q: b.linear(&format!("{p}.attn.q"), d, d),
                k: b.linear(&format!("{p}.attn.k"), d, d),
                v: b.linear(&format!("{p}.attn.v"), d, d),
                o: b.linear(&format!("{p}.attn.o"), d, d),
            };
            let gate = gated.then(|| b.linear(&format!("{p}.gate"), d, d));
            let norm_ff = b.norm(&format!("{p}.norm_ff"), d);
            let ff = FeedForward {
                up: b.linear(&format!("{p}.ff.up"), d, config.d_ff),
                down: b.linear(&format!("{p}.ff.down"), config.d_ff, d),
            };
            layers.push(LayerWeights {
                norm_attn,
                norm_context,
                attn,
                gate,
                norm_ff,
                ff,
            });
        }
        branches.push(layers);
    }

    let pool = match config.pooling {
        Pooling::Attn => Some(PoolWeights {
            w_a: b.add("pool.w_a".into(), vec![1, d], Init::Zeros),
            gate: None,
        }),
        Pooling::GatedAttn => Some(PoolWeights {
            w_a: b.add("pool.w_a".into(), vec![1, d], Init::Zeros),
            gate: Some((
                b.add("pool.gate.w".into(), vec![1, d], Init::Zeros),
                b.add("pool.gate.b".into(), vec![1], Init::Zeros),
            )),
        }),
        Pooling::Mean | Pooling::Cls => None,
    };

    let hidden = d / 2;
    let head_hidden = b.linear("head.hidden", d, hidden);
    let head_out = b.linear("head.out", hidden, config.task.output_dim());

    let layout = Layout {
        input_audio,
        input_text,
        positions,
        cls,
        branches,
        pool,
        head_hidden,
        head_out,
    };
    Ok((layout, b.set))
}

/// Checks that `params` has exactly the names and shapes `config` implies.
pub fn check_params<T: Scalar>(config: &ModelConfig, params: &ParamSet<T>) -> Result<Layout<usize>> {
    let (layout, reference) = init_params::<f32>(config)?;
    if reference.len() != params.len() {
        return Err(Error::contract(format!(
            "expected {} parameter tensors, found {}",
            reference.len(),
            params.len()
        )));
    }
    for (i, ((rn, rt), (pn, pt))) in reference.iter().zip(params.iter()).enumerate() {
        if rn != pn || rt.shape() != pt.shape() {
            return Err(Error::contract(format!(
                "parameter {i}: expected {rn} {:?}, found {pn} {:?}",
                rt.shape(),
                pt.shape()
            )));
        }
        if !pt.is_finite() {
            return Err(Error::contract(format!("parameter {pn} has non-finite values")));
        }
    }
    Ok(layout)
}
