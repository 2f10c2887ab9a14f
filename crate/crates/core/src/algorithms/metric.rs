//! Prototype classifiers: ProtoNet and AM3.
//!
//! Logits are negative squared Euclidean distances from projected queries
//! to class prototypes. Both learners are trained end to end on query
//! cross-entropy; there is no inner loop.

use crate::diffcore::{Graph, Mode, Tensor, Var};
use crate::episodes::Task;
use crate::models::{am3_mix, Algorithm, Am3Params, Am3Vars, Checkpoint, MixMode, Mlp, MlpVars};
use crate::rng::Rng;

use super::{AlgoError, Adam, Learner, OuterLoopConfig, StepMetrics, METRIC_DROPOUT};

/// Per-class mean of class-major rows (`ways * shots` rows in, `ways` out).
fn class_means(g: &mut Graph, rows: Var, ways: usize, shots: usize) -> Result<Var, AlgoError> {
    let mut avg = Tensor::zeros(ways, ways * shots);
    let w = 1.0 / shots as f64;
    for k in 0..ways {
        for j in 0..shots {
            avg.data_mut()[k * ways * shots + k * shots + j] = w;
        }
    }
    let avg = g.leaf(avg);
    Ok(g.matmul(avg, rows)?)
}

/// `-(|q|^2 - 2 q.p + |p|^2)` for every query/prototype pair.
fn distance_logits(g: &mut Graph, queries: Var, protos: Var) -> Result<Var, AlgoError> {
    let rows = g.value(queries).rows();
    let ways = g.value(protos).rows();
    let qq = g.mul(queries, queries)?;
    let qq = g.sum_cols(qq);
    let qq = g.broadcast_cols(qq, ways)?;
    let pp = g.mul(protos, protos)?;
    let pp = g.sum_cols(pp);
    let pp = g.transpose(pp);
    let pp = g.broadcast_rows(pp, rows)?;
    let pt = g.transpose(protos);
    let cross = g.matmul(queries, pt)?;
    let cross = g.scale(cross, -2.0);
    let d = g.add(qq, pp)?;
    let d = g.add(d, cross)?;
    Ok(g.scale(d, -1.0))
}

fn image_prototypes(
    g: &mut Graph,
    projection: &MlpVars,
    task: &Task,
    mode: Mode,
    dropout: f64,
    rng: &mut Rng,
) -> Result<Var, AlgoError> {
    if task.shots == 0 {
        return Err(AlgoError::EmptySupport);
    }
    let support = g.leaf(task.support.clone());
    let z = projection.forward(g, support, mode, dropout, rng)?;
    class_means(g, z, task.ways(), task.shots)
}

/// Query logits `K*M x K` from prototypes of projected support images.
pub fn protonet_predict(
    g: &mut Graph,
    projection: &MlpVars,
    task: &Task,
    mode: Mode,
    dropout: f64,
    rng: &mut Rng,
) -> Result<Var, AlgoError> {
    let protos = image_prototypes(g, projection, task, mode, dropout, rng)?;
    let query = g.leaf(task.query.clone());
    let q = projection.forward(g, query, mode, dropout, rng)?;
    distance_logits(g, q, protos)
}

/// AM3 query logits: prototypes mix projected support means with the
/// text network's output. With [`MixMode::ForceTextOnly`] the support set
/// is never read and may be empty.
pub fn am3_predict(
    g: &mut Graph,
    am3: &Am3Vars,
    task: &Task,
    mix: MixMode,
    mode: Mode,
    dropout: f64,
    rng: &mut Rng,
) -> Result<Var, AlgoError> {
    let image = match mix {
        MixMode::ForceTextOnly => None,
        _ => Some(image_prototypes(g, &am3.projection, task, mode, dropout, rng)?),
    };
    let text = match mix {
        MixMode::ForceImageOnly => None,
        _ => Some(g.leaf(task.text.clone())),
    };
    let (protos, _) = am3_mix(g, am3, image, text, mix, mode, dropout, rng)?;
    let query = g.leaf(task.query.clone());
    let q = am3.projection.forward(g, query, mode, dropout, rng)?;
    distance_logits(g, q, protos)
}

fn mean_query_loss(
    g: &mut Graph,
    batch: &[Task],
    mut logits: impl FnMut(&mut Graph, &Task) -> Result<Var, AlgoError>,
) -> Result<(Var, StepMetrics), AlgoError> {
    if batch.is_empty() {
        return Err(AlgoError::EmptyBatch);
    }
    let mut total: Option<Var> = None;
    let mut accuracy = 0.0;
    for task in batch {
        let l = logits(g, task)?;
        accuracy += super::accuracy(g.value(l), &task.query_labels);
        let loss = g.softmax_cross_entropy(l, &task.query_labels)?;
        total = Some(match total {
            None => loss,
            Some(t) => g.add(t, loss)?,
        });
    }
    let n = batch.len() as f64;
    let mean = g.scale(total.expect("non-empty"), 1.0 / n);
    if !g.value(mean).is_finite() {
        return Err(AlgoError::NonFiniteLoss);
    }
    let metrics = StepMetrics {
        query_loss: g.value(mean).data()[0],
        query_accuracy: accuracy / n,
    };
    Ok((mean, metrics))
}

fn descend(g: &mut Graph, loss: Var, wrt: &[Var]) -> Result<Vec<Tensor>, AlgoError> {
    let grads = g.grad(loss, wrt, crate::diffcore::GradMode::FirstOrder)?;
    let out: Vec<Tensor> = grads.iter().map(|&v| g.value(v).clone()).collect();
    if out.iter().any(|t| !t.is_finite()) {
        return Err(AlgoError::NonFiniteLoss);
    }
    Ok(out)
}

/// Prototypical network over a learned affine image projection.
#[derive(Clone, Debug)]
pub struct ProtoNet {
    pub projection: Mlp,
    pub outer: OuterLoopConfig,
    pub dropout: f64,
    opt: Adam,
}

impl ProtoNet {
    pub fn new(projection: Mlp, outer: OuterLoopConfig) -> Self {
        let opt = outer.adam();
        Self {
            projection,
            outer,
            dropout: METRIC_DROPOUT,
            opt,
        }
    }
}

impl Learner for ProtoNet {
    fn algorithm(&self) -> Algorithm {
        Algorithm::ProtoNet
    }

    fn predict(&self, task: &Task) -> Result<Tensor, AlgoError> {
        let mut g = Graph::new();
        let proj = self.projection.attach(&mut g);
        let mut unused = crate::rng::stream(0, "unused");
        let l = protonet_predict(&mut g, &proj, task, Mode::Eval, 0.0, &mut unused)?;
        Ok(g.value(l).clone())
    }

    fn train_step(&mut self, batch: &[Task], rng: &mut Rng) -> Result<StepMetrics, AlgoError> {
        let mut g = Graph::new();
        let proj = self.projection.attach(&mut g);
        let p = self.dropout;
        let (loss, metrics) = mean_query_loss(&mut g, batch, |g, task| {
            protonet_predict(g, &proj, task, Mode::Train, p, rng)
        })?;
        let grads = descend(&mut g, loss, &proj.vars())?;
        self.opt.step(self.projection.tensors_mut(), &grads);
        Ok(metrics)
    }

    fn named_tensors(&self) -> Vec<(String, Tensor)> {
        self.projection.named("projection")
    }

    fn load(&mut self, checkpoint: &Checkpoint) -> Result<(), AlgoError> {
        checkpoint.fill(&self.projection.named("projection"), self.projection.tensors_mut())?;
        Ok(())
    }
}

/// AM3, in learned-mixing mode or with the mixing coefficient forced.
#[derive(Clone, Debug)]
pub struct Am3 {
    pub params: Am3Params,
    pub mix: MixMode,
    pub outer: OuterLoopConfig,
    pub dropout: f64,
    opt: Adam,
}

impl Am3 {
    pub fn new(params: Am3Params, mix: MixMode, outer: OuterLoopConfig) -> Self {
        let opt = outer.adam();
        Self {
            params,
            mix,
            outer,
            dropout: METRIC_DROPOUT,
            opt,
        }
    }
}

impl Learner for Am3 {
    fn algorithm(&self) -> Algorithm {
        match self.mix {
            MixMode::ForceTextOnly => Algorithm::Am3Zero,
            _ => Algorithm::Am3,
        }
    }

    fn predict(&self, task: &Task) -> Result<Tensor, AlgoError> {
        let mut g = Graph::new();
        let vars = self.params.attach(&mut g);
        let mut unused = crate::rng::stream(0, "unused");
        let l = am3_predict(&mut g, &vars, task, self.mix, Mode::Eval, 0.0, &mut unused)?;
        Ok(g.value(l).clone())
    }

    fn train_step(&mut self, batch: &[Task], rng: &mut Rng) -> Result<StepMetrics, AlgoError> {
        let mut g = Graph::new();
        let vars = self.params.attach(&mut g);
        let (p, mix) = (self.dropout, self.mix);
        let (loss, metrics) = mean_query_loss(&mut g, batch, |g, task| {
            am3_predict(g, &vars, task, mix, Mode::Train, p, rng)
        })?;
        let grads = descend(&mut g, loss, &vars.vars())?;
        self.opt.step(self.params.tensors_mut(), &grads);
        Ok(metrics)
    }

    fn named_tensors(&self) -> Vec<(String, Tensor)> {
        self.params.named()
    }

    fn load(&mut self, checkpoint: &Checkpoint) -> Result<(), AlgoError> {
        let named = self.params.named();
        checkpoint.fill(&named, self.params.tensors_mut())?;
        Ok(())
    }
}
