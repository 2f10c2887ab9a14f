//! FuMI and MAML.
//!
//! Both adapt `theta = (body, head)` with plain gradient descent on the
//! support loss and update their meta-parameters from the query loss of
//! the adapted model. MAML learns the head initialization directly; FuMI
//! writes each class's head row with a hypernetwork applied to that class's
//! description embedding, so its only head-related parameters are the
//! hypernetwork's.

use crate::diffcore::{GradMode, Graph, Mode, Tensor, Var};
use crate::episodes::Task;
use crate::models::{
    body_forward, head_forward, hyper_forward, Algorithm, Checkpoint, HeadParams, Mlp, MlpVars,
};
use crate::rng::Rng;

use super::{AlgoError, Adam, InnerLoopConfig, Learner, OuterLoopConfig, StepMetrics, GRADIENT_DROPOUT};

/// `theta = (body, head)` recorded on a graph.
#[derive(Clone, Debug)]
pub struct ModelVars {
    pub body: MlpVars,
    pub head: Var,
}

impl ModelVars {
    pub fn vars(&self) -> Vec<Var> {
        let mut v = self.body.vars();
        v.push(self.head);
        v
    }

    fn with_vars(&self, vars: &[Var]) -> Self {
        let (body, head) = vars.split_at(vars.len() - 1);
        Self {
            body: self.body.with_vars(body),
            head: head[0],
        }
    }

    pub fn logits(
        &self,
        g: &mut Graph,
        x: Var,
        mode: Mode,
        dropout: f64,
        rng: &mut Rng,
    ) -> Result<Var, AlgoError> {
        let features = body_forward(g, &self.body, x, mode, dropout, rng)?;
        Ok(head_forward(g, self.head, features)?)
    }
}

/// `theta` for a task: body shared, head row `i` = `g_phi(t_i)`.
pub fn fumi_init(
    g: &mut Graph,
    hyper: &MlpVars,
    body: &MlpVars,
    text: Var,
    mode: Mode,
    dropout: f64,
    rng: &mut Rng,
) -> Result<ModelVars, AlgoError> {
    let head = hyper_forward(g, hyper, text, mode, dropout, rng)?;
    Ok(ModelVars {
        body: body.clone(),
        head,
    })
}

fn finite_loss(g: &Graph, loss: Var) -> Result<(), AlgoError> {
    if g.value(loss).is_finite() {
        Ok(())
    } else {
        Err(AlgoError::NonFiniteLoss)
    }
}

/// `steps` full-batch descent updates `theta <- theta - alpha * grad L_S`.
///
/// Gradients are recorded according to `cfg.grad_mode`, so with
/// [`GradMode::SecondOrder`] the adapted parameters stay differentiable
/// with respect to everything `theta` was computed from.
#[allow(clippy::too_many_arguments)]
pub fn inner_adapt(
    g: &mut Graph,
    theta: &ModelVars,
    support: Var,
    labels: &[usize],
    cfg: &InnerLoopConfig,
    steps: usize,
    mode: Mode,
    dropout: f64,
    rng: &mut Rng,
) -> Result<ModelVars, AlgoError> {
    if steps == 0 {
        return Err(AlgoError::NoSteps);
    }
    if labels.is_empty() {
        return Err(AlgoError::EmptySupport);
    }
    let mut current = theta.clone();
    for _ in 0..steps {
        let logits = current.logits(g, support, mode, dropout, rng)?;
        let loss = g.softmax_cross_entropy(logits, labels)?;
        finite_loss(g, loss)?;
        let params = current.vars();
        let grads = g.grad(loss, &params, cfg.grad_mode)?;
        let mut next = Vec::with_capacity(params.len());
        for (&p, &dp) in params.iter().zip(&grads) {
            let step = g.scale(dp, cfg.alpha);
            next.push(g.sub(p, step)?);
        }
        current = current.with_vars(&next);
    }
    Ok(current)
}

/// Value-only inner loop in evaluation mode: the same updates as
/// [`inner_adapt`] without keeping any history.
pub fn adapt_values(
    body: &Mlp,
    head: &Tensor,
    support: &Tensor,
    labels: &[usize],
    alpha: f64,
    steps: usize,
) -> Result<(Mlp, Tensor), AlgoError> {
    if labels.is_empty() && steps > 0 {
        return Err(AlgoError::EmptySupport);
    }
    let mut body = body.clone();
    let mut head = head.clone();
    let mut unused = crate::rng::stream(0, "unused");
    for _ in 0..steps {
        let mut g = Graph::new();
        let theta = ModelVars {
            body: body.attach(&mut g),
            head: g.leaf(head.clone()),
        };
        let x = g.leaf(support.clone());
        let logits = theta.logits(&mut g, x, Mode::Eval, 0.0, &mut unused)?;
        let loss = g.softmax_cross_entropy(logits, labels)?;
        finite_loss(&g, loss)?;
        let params = theta.vars();
        let grads = g.grad(loss, &params, GradMode::FirstOrder)?;
        let mut values: Vec<Tensor> = params
            .iter()
            .zip(&grads)
            .map(|(&p, &dp)| {
                g.value(p)
                    .zip_with(g.value(dp), "adapt", |w, d| w - alpha * d)
                    .expect("gradient has parameter shape")
            })
            .collect();
        head = values.pop().expect("head is last");
        body.assign(&values);
    }
    Ok((body, head))
}

fn query_logits(body: &Mlp, head: &Tensor, query: &Tensor) -> Result<Tensor, AlgoError> {
    let mut g = Graph::new();
    let theta = ModelVars {
        body: body.attach(&mut g),
        head: g.leaf(head.clone()),
    };
    let x = g.leaf(query.clone());
    let logits = theta.logits(&mut g, x, Mode::Eval, 0.0, &mut crate::rng::stream(0, "unused"))?;
    Ok(g.value(logits).clone())
}

/// Mean query loss over a batch after inner adaptation from the
/// initialization produced by `init`.
#[allow(clippy::too_many_arguments)]
fn batch_query_loss(
    g: &mut Graph,
    batch: &[Task],
    inner: &InnerLoopConfig,
    mode: Mode,
    dropout: f64,
    rng: &mut Rng,
    mut init: impl FnMut(&mut Graph, &Task, &mut Rng) -> Result<ModelVars, AlgoError>,
) -> Result<(Var, StepMetrics), AlgoError> {
    if batch.is_empty() {
        return Err(AlgoError::EmptyBatch);
    }
    let mut total: Option<Var> = None;
    let mut accuracy = 0.0;
    for task in batch {
        let theta = init(g, task, rng)?;
        let support = g.leaf(task.support.clone());
        let adapted =
            inner_adapt(g, &theta, support, &task.support_labels, inner, inner.train_steps, mode, dropout, rng)?;
        let query = g.leaf(task.query.clone());
        let logits = adapted.logits(g, query, mode, dropout, rng)?;
        accuracy += super::accuracy(g.value(logits), &task.query_labels);
        let loss = g.softmax_cross_entropy(logits, &task.query_labels)?;
        total = Some(match total {
            None => loss,
            Some(t) => g.add(t, loss)?,
        });
    }
    let n = batch.len() as f64;
    let mean = g.scale(total.expect("non-empty batch"), 1.0 / n);
    finite_loss(g, mean)?;
    let metrics = StepMetrics {
        query_loss: g.value(mean).data()[0],
        query_accuracy: accuracy / n,
    };
    Ok((mean, metrics))
}

fn grad_values(g: &mut Graph, loss: Var, wrt: &[Var]) -> Result<Vec<Tensor>, AlgoError> {
    let grads = g.grad(loss, wrt, GradMode::FirstOrder)?;
    let out: Vec<Tensor> = grads.iter().map(|&v| g.value(v).clone()).collect();
    if out.iter().any(|t| !t.is_finite()) {
        return Err(AlgoError::NonFiniteLoss);
    }
    Ok(out)
}

/// Meta-gradients of one batch, plus the batch metrics.
#[derive(Clone, Debug)]
pub struct MetaGradients {
    pub body: Vec<Tensor>,
    /// Hypernetwork gradients for FuMI, the head-initialization gradient
    /// for MAML.
    pub init: Vec<Tensor>,
    pub metrics: StepMetrics,
}

/// Hypernetwork-initialized learner.
#[derive(Clone, Debug)]
pub struct Fumi {
    pub body: Mlp,
    pub hyper: Mlp,
    pub inner: InnerLoopConfig,
    pub outer: OuterLoopConfig,
    pub dropout: f64,
    body_opt: Adam,
    hyper_opt: Adam,
}

impl Fumi {
    pub fn new(
        body: Mlp,
        hyper: Mlp,
        inner: InnerLoopConfig,
        outer: OuterLoopConfig,
    ) -> Self {
        let body_opt = outer.body_adam();
        let hyper_opt = outer.adam();
        Self {
            body,
            hyper,
            inner,
            outer,
            dropout: GRADIENT_DROPOUT,
            body_opt,
            hyper_opt,
        }
    }

    /// Head rows generated for `task`, in evaluation mode.
    pub fn init_head(&self, task: &Task) -> Result<Tensor, AlgoError> {
        let mut g = Graph::new();
        let hyper = self.hyper.attach(&mut g);
        let text = g.leaf(task.text.clone());
        let head = hyper_forward(&mut g, &hyper, text, Mode::Eval, 0.0, &mut crate::rng::stream(0, "unused"))?;
        Ok(g.value(head).clone())
    }

    /// Query logits after `steps` evaluation-mode inner updates.
    pub fn predict_with_steps(&self, task: &Task, steps: usize) -> Result<Tensor, AlgoError> {
        let head = self.init_head(task)?;
        let (body, head) = adapt_values(
            &self.body,
            &head,
            &task.support,
            &task.support_labels,
            self.inner.alpha,
            steps,
        )?;
        query_logits(&body, &head, &task.query)
    }

    pub fn meta_gradients(&self, batch: &[Task], mode: Mode, rng: &mut Rng) -> Result<MetaGradients, AlgoError> {
        let mut g = Graph::new();
        let body = self.body.attach(&mut g);
        let hyper = self.hyper.attach(&mut g);
        let dropout = self.dropout;
        let (loss, metrics) = batch_query_loss(&mut g, batch, &self.inner, mode, dropout, rng, |g, task, rng| {
            let text = g.leaf(task.text.clone());
            fumi_init(g, &hyper, &body, text, mode, dropout, rng)
        })?;
        let body_vars = body.vars();
        let hyper_vars = hyper.vars();
        let mut wrt = body_vars.clone();
        wrt.extend(&hyper_vars);
        let mut grads = grad_values(&mut g, loss, &wrt)?;
        let init = grads.split_off(body_vars.len());
        Ok(MetaGradients {
            body: grads,
            init,
            metrics,
        })
    }
}

impl Learner for Fumi {
    fn algorithm(&self) -> Algorithm {
        Algorithm::Fumi
    }

    fn predict(&self, task: &Task) -> Result<Tensor, AlgoError> {
        self.predict_with_steps(task, self.inner.test_steps(task.shots))
    }

    fn predict_unadapted(&self, task: &Task) -> Result<Tensor, AlgoError> {
        self.predict_with_steps(task, 0)
    }

    fn train_step(&mut self, batch: &[Task], rng: &mut Rng) -> Result<StepMetrics, AlgoError> {
        let grads = self.meta_gradients(batch, Mode::Train, rng)?;
        self.body_opt.step(self.body.tensors_mut(), &grads.body);
        self.hyper_opt.step(self.hyper.tensors_mut(), &grads.init);
        Ok(grads.metrics)
    }

    fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = self.body.named("body");
        out.extend(self.hyper.named("hyper"));
        out
    }

    fn load(&mut self, checkpoint: &Checkpoint) -> Result<(), AlgoError> {
        checkpoint.fill(&self.body.named("body"), self.body.tensors_mut())?;
        checkpoint.fill(&self.hyper.named("hyper"), self.hyper.tensors_mut())?;
        Ok(())
    }
}

/// Learned-initialization learner that never reads class descriptions.
#[derive(Clone, Debug)]
pub struct Maml {
    pub body: Mlp,
    pub head: HeadParams,
    pub inner: InnerLoopConfig,
    pub outer: OuterLoopConfig,
    pub dropout: f64,
    body_opt: Adam,
    head_opt: Adam,
}

impl Maml {
    pub fn new(body: Mlp, head: HeadParams, inner: InnerLoopConfig, outer: OuterLoopConfig) -> Self {
        let body_opt = outer.body_adam();
        let head_opt = outer.adam();
        Self {
            body,
            head,
            inner,
            outer,
            dropout: GRADIENT_DROPOUT,
            body_opt,
            head_opt,
        }
    }

    pub fn predict_with_steps(&self, task: &Task, steps: usize) -> Result<Tensor, AlgoError> {
        let (body, head) = adapt_values(
            &self.body,
            &self.head.rows,
            &task.support,
            &task.support_labels,
            self.inner.alpha,
            steps,
        )?;
        query_logits(&body, &head, &task.query)
    }

    pub fn meta_gradients(&self, batch: &[Task], mode: Mode, rng: &mut Rng) -> Result<MetaGradients, AlgoError> {
        let mut g = Graph::new();
        let body = self.body.attach(&mut g);
        let head = g.leaf(self.head.rows.clone());
        let (loss, metrics) = batch_query_loss(&mut g, batch, &self.inner, mode, self.dropout, rng, |_, _, _| {
            Ok(ModelVars {
                body: body.clone(),
                head,
            })
        })?;
        let mut wrt = body.vars();
        wrt.push(head);
        let mut grads = grad_values(&mut g, loss, &wrt)?;
        let init = vec![grads.pop().expect("head gradient")];
        Ok(MetaGradients {
            body: grads,
            init,
            metrics,
        })
    }
}

impl Learner for Maml {
    fn algorithm(&self) -> Algorithm {
        Algorithm::Maml
    }

    fn predict(&self, task: &Task) -> Result<Tensor, AlgoError> {
        self.predict_with_steps(task, self.inner.test_steps(task.shots))
    }

    fn predict_unadapted(&self, task: &Task) -> Result<Tensor, AlgoError> {
        self.predict_with_steps(task, 0)
    }

    fn train_step(&mut self, batch: &[Task], rng: &mut Rng) -> Result<StepMetrics, AlgoError> {
        let grads = self.meta_gradients(batch, Mode::Train, rng)?;
        self.body_opt.step(self.body.tensors_mut(), &grads.body);
        self.head_opt.step(vec![&mut self.head.rows], &grads.init);
        Ok(grads.metrics)
    }

    fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = self.body.named("body");
        out.push(("head".into(), self.head.rows.clone()));
        out
    }

    fn load(&mut self, checkpoint: &Checkpoint) -> Result<(), AlgoError> {
        checkpoint.fill(&self.body.named("body"), self.body.tensors_mut())?;
        checkpoint.fill(&[("head".into(), self.head.rows.clone())], vec![&mut self.head.rows])?;
        Ok(())
    }
}
