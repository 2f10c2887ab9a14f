//! Trainable networks: the shared body, the per-class head, the
//! hypernetwork that writes head rows from class descriptions, and the
//! AM3 text/mixing networks.

mod checkpoint;
mod mlp;

use rand::Rng;

use crate::diffcore::{DiffError, Graph, Mode, Tensor, Var};

pub use checkpoint::{Algorithm, Checkpoint, CheckpointError, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use mlp::{BodyParams, HyperParams, Linear, Mlp, MlpVars};

pub const DEFAULT_BODY_HIDDEN: [usize; 2] = [256, 64];
pub const DEFAULT_HYPER_HIDDEN: usize = 256;
pub const DEFAULT_PROTOTYPE_DIM: usize = 512;
pub const DEFAULT_AM3_HIDDEN: usize = 512;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("missing {0}")]
    MissingInput(&'static str),
}

/// Final classification layer: one row of `feature_dim` weights plus a
/// trailing bias per class, stored as a `K x (feature_dim + 1)` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams {
    pub rows: Tensor,
}

impl HeadParams {
    pub fn init<R: Rng + ?Sized>(classes: usize, feature_dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (feature_dim as f64).sqrt();
        let mut rows = Tensor::zeros(classes, feature_dim + 1);
        for c in 0..classes {
            for j in 0..feature_dim {
                rows.data_mut()[c * (feature_dim + 1) + j] = rng.gen_range(-bound..bound);
            }
        }
        Self { rows }
    }

    pub fn from_partitions(parts: &[Vec<f64>]) -> Result<Self, DiffError> {
        Ok(Self {
            rows: Tensor::from_rows(parts)?,
        })
    }

    pub fn classes(&self) -> usize {
        self.rows.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.rows.cols() - 1
    }

    pub fn partition(&self, class: usize) -> &[f64] {
        self.rows.row_slice(class)
    }
}

/// Features of the shared body for a batch of image embeddings.
pub fn body_forward<R: Rng + ?Sized>(
    g: &mut Graph,
    body: &MlpVars,
    x: Var,
    mode: Mode,
    dropout: f64,
    rng: &mut R,
) -> Result<Var, DiffError> {
    body.forward(g, x, mode, dropout, rng)
}

/// `logit[b][i] = head_i.weights . features[b] + head_i.bias`.
pub fn head_forward(g: &mut Graph, head: Var, features: Var) -> Result<Var, DiffError> {
    let d = g.value(features).cols();
    let (_, width) = g.value(head).dims();
    if width != d + 1 {
        return Err(DiffError::ShapeMismatch {
            op: "head_forward",
            lhs: g.value(head).shape().to_vec(),
            rhs: g.value(features).shape().to_vec(),
        });
    }
    let weights = g.slice_cols(head, 0..d)?;
    let weights_t = g.transpose(weights);
    let logits = g.matmul(features, weights_t)?;
    let bias = g.slice_cols(head, d..d + 1)?;
    let bias = g.transpose(bias);
    let rows = g.value(logits).rows();
    let bias = g.broadcast_rows(bias, rows)?;
    g.add(logits, bias)
}

/// Head rows generated from class descriptions, one row per row of `text`.
pub fn hyper_forward<R: Rng + ?Sized>(
    g: &mut Graph,
    hyper: &MlpVars,
    text: Var,
    mode: Mode,
    dropout: f64,
    rng: &mut R,
) -> Result<Var, DiffError> {
    hyper.forward(g, text, mode, dropout, rng)
}

/// How AM3 chooses the image/text mixing coefficient.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MixMode {
    Learned,
    /// `lambda = 1`: the prototype ignores the text.
    ForceImageOnly,
    /// `lambda = 0`: the prototype ignores the support images.
    ForceTextOnly,
}

/// AM3 networks: an image projection into prototype space, the text
/// network `g` and the mixing network `h`.
#[derive(Clone, Debug, PartialEq)]
pub struct Am3Params {
    pub projection: Mlp,
    pub text: Mlp,
    pub mix: Mlp,
}

#[derive(Clone, Debug)]
pub struct Am3Vars {
    pub projection: MlpVars,
    pub text: MlpVars,
    pub mix: MlpVars,
}

impl Am3Params {
    pub fn new<R: Rng + ?Sized>(
        image_dim: usize,
        text_dim: usize,
        prototype_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            projection: Mlp::new(&[image_dim, prototype_dim], false, rng),
            text: Mlp::new(&[text_dim, hidden, prototype_dim], false, rng),
            mix: Mlp::new(&[prototype_dim, hidden, 1], false, rng),
        }
    }

    pub fn zeros(image_dim: usize, text_dim: usize, prototype_dim: usize, hidden: usize) -> Self {
        Self {
            projection: Mlp::zeros(&[image_dim, prototype_dim], false),
            text: Mlp::zeros(&[text_dim, hidden, prototype_dim], false),
            mix: Mlp::zeros(&[prototype_dim, hidden, 1], false),
        }
    }

    pub fn attach(&self, g: &mut Graph) -> Am3Vars {
        Am3Vars {
            projection: self.projection.attach(g),
            text: self.text.attach(g),
            mix: self.mix.attach(g),
        }
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = self.projection.tensors();
        out.extend(self.text.tensors());
        out.extend(self.mix.tensors());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.projection.tensors_mut();
        out.extend(self.text.tensors_mut());
        out.extend(self.mix.tensors_mut());
        out
    }

    pub fn named(&self) -> Vec<(String, Tensor)> {
        let mut out = self.projection.named("projection");
        out.extend(self.text.named("text"));
        out.extend(self.mix.named("mix"));
        out
    }
}

impl Am3Vars {
    pub fn vars(&self) -> Vec<Var> {
        let mut out = self.projection.vars();
        out.extend(self.text.vars());
        out.extend(self.mix.vars());
        out
    }
}

/// Convex combination `lambda * image_proto + (1 - lambda) * g(t)` per class.
///
/// `image_proto` is `K x P`, `text` is `K x text_dim`; returns the `K x P`
/// prototypes and the `K x 1` coefficients. Forced modes skip the unused
/// branch entirely, so the result equals that branch bit for bit.
#[allow(clippy::too_many_arguments)]
pub fn am3_mix<R: Rng + ?Sized>(
    g: &mut Graph,
    am3: &Am3Vars,
    image_proto: Option<Var>,
    text: Option<Var>,
    mode: MixMode,
    dropout_mode: Mode,
    dropout: f64,
    rng: &mut R,
) -> Result<(Var, Var), ModelError> {
    match mode {
        MixMode::ForceImageOnly => {
            let proto = image_proto.ok_or(ModelError::MissingInput("image prototype"))?;
            let k = g.value(proto).rows();
            let lambda = g.leaf(Tensor::full(k, 1, 1.0));
            Ok((proto, lambda))
        }
        MixMode::ForceTextOnly => {
            let text = text.ok_or(ModelError::MissingInput("text embedding"))?;
            let w = am3.text.forward(g, text, dropout_mode, dropout, rng)?;
            let k = g.value(w).rows();
            let lambda = g.leaf(Tensor::zeros(k, 1));
            Ok((w, lambda))
        }
        MixMode::Learned => {
            let proto = image_proto.ok_or(ModelError::MissingInput("image prototype"))?;
            let text = text.ok_or(ModelError::MissingInput("text embedding"))?;
            let w = am3.text.forward(g, text, dropout_mode, dropout, rng)?;
            if g.value(w).dims() != g.value(proto).dims() {
                return Err(DiffError::ShapeMismatch {
                    op: "am3_mix",
                    lhs: g.value(proto).shape().to_vec(),
                    rhs: g.value(w).shape().to_vec(),
                }
                .into());
            }
            let pre = am3.mix.forward(g, w, dropout_mode, dropout, rng)?;
            let lambda = g.sigmoid(pre);
            let width = g.value(proto).cols();
            let lam = g.broadcast_cols(lambda, width)?;
            // lambda * proto + (1 - lambda) * w  ==  w + lambda * (proto - w)
            let diff = g.sub(proto, w)?;
            let scaled = g.mul(lam, diff)?;
            let mixed = g.add(w, scaled)?;
            Ok((mixed, lambda))
        }
    }
}
