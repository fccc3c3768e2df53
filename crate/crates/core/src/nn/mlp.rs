use std::fmt;
use std::str::FromStr;

use super::NnError;
use crate::rng::Rng;
use crate::tensor::{Graph, Tensor, TensorError, UnaryOp, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Identity,
    Relu,
    LeakyRelu(f64),
    Sigmoid,
    Tanh,
}

impl Activation {
    pub fn apply(self, g: &mut Graph, x: Var) -> Result<Var, TensorError> {
        match self {
            Activation::Identity => Ok(x),
            Activation::Relu => g.unary(UnaryOp::Relu, x),
            Activation::LeakyRelu(s) => g.unary(UnaryOp::LeakyRelu(s), x),
            Activation::Sigmoid => g.unary(UnaryOp::Sigmoid, x),
            Activation::Tanh => g.unary(UnaryOp::Tanh, x),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activation::Identity => write!(f, "identity"),
            Activation::Relu => write!(f, "relu"),
            Activation::LeakyRelu(s) => write!(f, "leaky-relu:{s}"),
            Activation::Sigmoid => write!(f, "sigmoid"),
            Activation::Tanh => write!(f, "tanh"),
        }
    }
}

/// Parses `identity`, `relu`, `leaky-relu[:slope]` (default slope 0.2),
/// `sigmoid`, `tanh`.
impl FromStr for Activation {
    type Err = NnError;

    fn from_str(s: &str) -> Result<Self, NnError> {
        let bad = || NnError::UnknownActivation(s.to_string());
        match s {
            "identity" | "linear" => Ok(Activation::Identity),
            "relu" => Ok(Activation::Relu),
            "sigmoid" => Ok(Activation::Sigmoid),
            "tanh" => Ok(Activation::Tanh),
            "leaky-relu" => Ok(Activation::LeakyRelu(0.2)),
            _ => {
                let slope = s.strip_prefix("leaky-relu:").ok_or_else(bad)?;
                let slope: f64 = slope.parse().map_err(|_| bad())?;
                if slope > 0.0 && slope < 1.0 {
                    Ok(Activation::LeakyRelu(slope))
                } else {
                    Err(NnError::Tensor(TensorError::Slope(slope)))
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpSpec {
    /// Input width followed by each layer's output width.
    pub widths: Vec<usize>,
    pub hidden: Activation,
    pub output: Activation,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, hidden: Activation, output: Activation) -> Self {
        MlpSpec {
            widths,
            hidden,
            output,
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.widths.len() < 2 {
            return Err(NnError::TooFewWidths(self.widths.len()));
        }
        if let Some(layer) = self.widths.iter().position(|&w| w == 0) {
            return Err(NnError::ZeroWidth { layer });
        }
        for act in [self.hidden, self.output] {
            if let Activation::LeakyRelu(s) = act {
                if !(s > 0.0 && s < 1.0) {
                    return Err(TensorError::Slope(s).into());
                }
            }
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().expect("validated spec")
    }

    pub fn num_params(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearLayer {
    /// `[in × out]`
    pub weights: Tensor,
    /// `[out]`
    pub bias: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    spec: MlpSpec,
    layers: Vec<LinearLayer>,
}

/// Weights uniform in `±sqrt(6 / (in + out))`, biases zero.
pub fn init_mlp(spec: &MlpSpec, seed: u64) -> Result<Mlp, NnError> {
    Mlp::init(spec, &mut Rng::new(seed))
}

impl Mlp {
    pub fn init(spec: &MlpSpec, rng: &mut Rng) -> Result<Self, NnError> {
        spec.validate()?;
        let layers = spec
            .widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let weights = (0..fan_in * fan_out)
                    .map(|_| rng.uniform_range(-limit, limit))
                    .collect();
                Ok(LinearLayer {
                    weights: Tensor::matrix(fan_in, fan_out, weights)?,
                    bias: Tensor::zeros(vec![fan_out])?,
                })
            })
            .collect::<Result<Vec<_>, TensorError>>()?;
        Ok(Mlp {
            spec: spec.clone(),
            layers,
        })
    }

    /// Builds an MLP from explicit layers; shapes must chain.
    pub fn from_layers(spec: MlpSpec, layers: Vec<LinearLayer>) -> Result<Self, NnError> {
        spec.validate()?;
        if layers.len() != spec.widths.len() - 1 {
            return Err(NnError::TooFewWidths(layers.len() + 1));
        }
        for (layer, w) in layers.iter().zip(spec.widths.windows(2)) {
            if layer.weights.shape() != [w[0], w[1]] || layer.bias.shape() != [w[1]] {
                return Err(TensorError::Shape {
                    op: "from_layers",
                    lhs: layer.weights.shape().to_vec(),
                    rhs: vec![w[0], w[1]],
                }
                .into());
            }
        }
        Ok(Mlp { spec, layers })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[LinearLayer] {
        &self.layers
    }

    pub fn num_params(&self) -> usize {
        self.spec.num_params()
    }

    /// Parameter tensors in `w0, b0, w1, b1, ...` order.
    pub fn params(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weights, &l.bias])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weights, &mut l.bias])
            .collect()
    }

    pub fn param_lens(&self) -> Vec<usize> {
        self.params().iter().map(|t| t.len()).collect()
    }

    /// Registers the parameters as leaves of `g`; `trainable` selects
    /// gradient-tracked leaves or constants.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundMlp {
        let vars = self
            .layers
            .iter()
            .map(|l| {
                if trainable {
                    (g.param(&l.weights), g.param(&l.bias))
                } else {
                    (g.constant(&l.weights), g.constant(&l.bias))
                }
            })
            .collect();
        BoundMlp {
            vars,
            hidden: self.spec.hidden,
            output: self.spec.output,
            input_width: self.spec.input_width(),
        }
    }

    /// Forward pass without gradient tracking.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor, TensorError> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let xv = g.constant(x);
        let y = bound.forward(&mut g, xv)?;
        Ok(g.tensor(y))
    }
}

/// An [`Mlp`]'s parameters as they live inside one graph.
#[derive(Clone, Debug)]
pub struct BoundMlp {
    vars: Vec<(Var, Var)>,
    hidden: Activation,
    output: Activation,
    input_width: usize,
}

impl BoundMlp {
    /// Wraps existing graph leaves, ordered as [`Mlp::params`], as a network
    /// of shape `spec`.
    pub fn from_vars(spec: &MlpSpec, vars: &[Var]) -> Result<Self, NnError> {
        spec.validate()?;
        let layers = spec.widths.len() - 1;
        if vars.len() != 2 * layers {
            return Err(NnError::GradientMismatch(format!(
                "{} leaves for {layers} layers",
                vars.len()
            )));
        }
        Ok(BoundMlp {
            vars: vars.chunks(2).map(|c| (c[0], c[1])).collect(),
            hidden: spec.hidden,
            output: spec.output,
            input_width: spec.input_width(),
        })
    }

    /// Alternating affine + hidden activation, final affine + output activation.
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var, TensorError> {
        let shape = g.shape(x);
        if shape.len() != 2 || shape[1] != self.input_width {
            return Err(TensorError::Shape {
                op: "mlp input",
                lhs: shape.to_vec(),
                rhs: vec![self.input_width],
            });
        }
        let last = self.vars.len() - 1;
        let mut h = x;
        for (i, &(w, b)) in self.vars.iter().enumerate() {
            let z = g.matmul(h, w)?;
            let z = g.add_row(z, b)?;
            let act = if i == last { self.output } else { self.hidden };
            h = act.apply(g, z)?;
        }
        Ok(h)
    }

    pub fn vars(&self) -> impl Iterator<Item = Var> + '_ {
        self.vars.iter().flat_map(|&(w, b)| [w, b])
    }

    /// Gradients in the same order as [`Mlp::params`]; zeros where unreached.
    pub fn grads(&self, g: &Graph) -> Vec<Vec<f64>> {
        self.vars().map(|v| g.grad_or_zeros(v)).collect()
    }
}
