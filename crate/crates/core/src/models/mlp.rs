use rand::Rng;

use crate::diffcore::{DiffError, Graph, Mode, Tensor, Var};

/// Dense layer `y = x W + b`, with `W` stored `in x out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    /// Weights ~ Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)), zero bias.
    pub fn init<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        Self {
            weight: Tensor::matrix(fan_in, fan_out, data).expect("sized above"),
            bias: Tensor::zeros(1, fan_out),
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Tensor::zeros(fan_in, fan_out),
            bias: Tensor::zeros(1, fan_out),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.cols()
    }
}

/// Fully-connected stack with ReLU (then dropout) after every hidden layer.
///
/// When `activate_output` is set the last layer is treated as hidden too;
/// the body network uses this because its output feeds the head.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activate_output: bool,
}

/// Shared body `image_dim -> 256 -> 64` by default.
pub type BodyParams = Mlp;
/// Hypernetwork `text_dim -> 256 -> feature_dim + 1`.
pub type HyperParams = Mlp;

impl Mlp {
    pub fn new<R: Rng + ?Sized>(widths: &[usize], activate_output: bool, rng: &mut R) -> Self {
        assert!(widths.len() >= 2, "an mlp needs input and output widths");
        let layers = widths
            .windows(2)
            .map(|w| Linear::init(w[0], w[1], rng))
            .collect();
        Self {
            layers,
            activate_output,
        }
    }

    pub fn zeros(widths: &[usize], activate_output: bool) -> Self {
        let layers = widths.windows(2).map(|w| Linear::zeros(w[0], w[1])).collect();
        Self {
            layers,
            activate_output,
        }
    }

    pub fn body<R: Rng + ?Sized>(input_dim: usize, hidden: &[usize], rng: &mut R) -> Self {
        let mut widths = vec![input_dim];
        widths.extend_from_slice(hidden);
        Self::new(&widths, true, rng)
    }

    pub fn hypernet<R: Rng + ?Sized>(
        text_dim: usize,
        hidden: usize,
        feature_dim: usize,
        rng: &mut R,
    ) -> Self {
        Self::new(&[text_dim, hidden, feature_dim + 1], false, rng)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").fan_out()
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    /// `prefix.{i}.weight` / `prefix.{i}.bias` pairs, in layer order.
    pub fn named(&self, prefix: &str) -> Vec<(String, Tensor)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                [
                    (format!("{prefix}.{i}.weight"), l.weight.clone()),
                    (format!("{prefix}.{i}.bias"), l.bias.clone()),
                ]
            })
            .collect()
    }

    pub fn attach(&self, g: &mut Graph) -> MlpVars {
        MlpVars {
            layers: self
                .layers
                .iter()
                .map(|l| (g.leaf(l.weight.clone()), g.leaf(l.bias.clone())))
                .collect(),
            activate_output: self.activate_output,
        }
    }

    /// Overwrites the parameters with `values`, in [`Mlp::tensors`] order.
    pub fn assign(&mut self, values: &[Tensor]) {
        for (slot, v) in self.tensors_mut().into_iter().zip(values) {
            debug_assert_eq!(slot.dims(), v.dims());
            *slot = v.clone();
        }
    }
}

/// An [`Mlp`] whose parameters live on a graph.
#[derive(Clone, Debug)]
pub struct MlpVars {
    pub layers: Vec<(Var, Var)>,
    pub activate_output: bool,
}

impl MlpVars {
    pub fn vars(&self) -> Vec<Var> {
        self.layers.iter().flat_map(|&(w, b)| [w, b]).collect()
    }

    /// Same architecture with parameters replaced, in [`MlpVars::vars`] order.
    pub fn with_vars(&self, vars: &[Var]) -> Self {
        Self {
            layers: vars.chunks(2).map(|c| (c[0], c[1])).collect(),
            activate_output: self.activate_output,
        }
    }

    pub fn input_dim(&self, g: &Graph) -> usize {
        g.value(self.layers[0].0).rows()
    }

    pub fn forward<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        x: Var,
        mode: Mode,
        dropout: f64,
        rng: &mut R,
    ) -> Result<Var, DiffError> {
        let expected = self.input_dim(g);
        let got = g.value(x).cols();
        if got != expected {
            return Err(DiffError::ShapeMismatch {
                op: "mlp_forward",
                lhs: g.value(x).shape().to_vec(),
                rhs: vec![expected],
            });
        }
        let last = self.layers.len() - 1;
        let mut h = x;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            h = g.affine(h, w, b)?;
            if i < last || self.activate_output {
                h = g.relu(h);
                h = g.dropout(h, dropout, mode, rng)?;
            }
        }
        Ok(h)
    }
}
