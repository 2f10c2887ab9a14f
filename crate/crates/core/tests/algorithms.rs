mod common;

use common::*;
use fumi::algorithms::{
    adapt_values, evaluate, evaluate_with, inner_adapt, AlgoError, Am3, InnerLoopConfig, Learner, ModelVars,
    OuterLoopConfig, ProtoNet,
};
use fumi::diffcore::{softmax_rows, GradMode, Graph, Mode, Tensor};
use fumi::episodes::{SplitRole, Task};
use fumi::models::{Am3Params, HeadParams, Linear, MixMode, Mlp};
use fumi::rng;

fn support_loss(body: &Mlp, head: &Tensor, task: &Task) -> f64 {
    let mut g = Graph::new();
    let theta = ModelVars {
        body: body.attach(&mut g),
        head: g.leaf(head.clone()),
    };
    let x = g.leaf(task.support.clone());
    let logits = theta.logits(&mut g, x, Mode::Eval, 0.0, &mut rng::stream(0, "unused")).unwrap();
    let loss = g.softmax_cross_entropy(logits, &task.support_labels).unwrap();
    g.value(loss).data()[0]
}

#[test]
fn inner_loop_rejects_degenerate_input() {
    let data = small_dataset();
    let fumi = small_fumi(&data, &mut rng::stream(1, "init"));
    let task = &tasks(&data, SplitRole::Train, 1, 5, 1, 2, "t")[0];
    let mut g = Graph::new();
    let theta = ModelVars {
        body: fumi.body.attach(&mut g),
        head: g.leaf(fumi.init_head(task).unwrap()),
    };
    let x = g.leaf(task.support.clone());
    let cfg = InnerLoopConfig::default();
    let mut r = rng::stream(0, "d");
    let zero = inner_adapt(&mut g, &theta, x, &task.support_labels, &cfg, 0, Mode::Eval, 0.0, &mut r);
    assert!(matches!(zero, Err(AlgoError::NoSteps)));
    let empty = inner_adapt(&mut g, &theta, x, &[], &cfg, 1, Mode::Eval, 0.0, &mut r);
    assert!(matches!(empty, Err(AlgoError::EmptySupport)));
}

#[test]
fn graph_and_value_inner_loops_agree() {
    let data = small_dataset();
    let fumi = small_fumi(&data, &mut rng::stream(2, "init"));
    let task = &tasks(&data, SplitRole::Train, 1, 5, 3, 2, "t")[0];
    let head = fumi.init_head(task).unwrap();
    let (body_v, head_v) = adapt_values(&fumi.body, &head, &task.support, &task.support_labels, 0.01, 3).unwrap();

    let mut g = Graph::new();
    let theta = ModelVars {
        body: fumi.body.attach(&mut g),
        head: g.leaf(head.clone()),
    };
    let x = g.leaf(task.support.clone());
    let cfg = InnerLoopConfig::default();
    let adapted = inner_adapt(&mut g, &theta, x, &task.support_labels, &cfg, 3, Mode::Eval, 0.0, &mut rng::stream(0, "d")).unwrap();
    assert!(max_abs_diff(g.value(adapted.head), &head_v) < 1e-12);
    let body_graph: Vec<Tensor> = adapted.body.vars().iter().map(|&v| g.value(v).clone()).collect();
    for (a, b) in body_graph.iter().zip(body_v.tensors()) {
        assert!(max_abs_diff(a, b) < 1e-12);
    }
}

#[test]
fn one_step_then_one_step_equals_two_steps() {
    let data = small_dataset();
    let fumi = small_fumi(&data, &mut rng::stream(3, "init"));
    let task = &tasks(&data, SplitRole::Train, 1, 5, 1, 2, "t")[0];
    let head = fumi.init_head(task).unwrap();
    let s = &task.support;
    let l = &task.support_labels;
    let (b1, h1) = adapt_values(&fumi.body, &head, s, l, 0.01, 1).unwrap();
    let (b11, h11) = adapt_values(&b1, &h1, s, l, 0.01, 1).unwrap();
    let (b2, h2) = adapt_values(&fumi.body, &head, s, l, 0.01, 2).unwrap();
    assert_eq!(h11, h2);
    assert_eq!(b11, b2);
}

#[test]
fn adaptation_lowers_support_loss() {
    let data = small_dataset();
    let fumi = small_fumi(&data, &mut rng::stream(4, "init"));
    for task in tasks(&data, SplitRole::Train, 100, 5, 1, 1, "descent") {
        let head = fumi.init_head(&task).unwrap();
        let before = support_loss(&fumi.body, &head, &task);
        let (body, head) = adapt_values(&fumi.body, &head, &task.support, &task.support_labels, 0.01, 5).unwrap();
        let after = support_loss(&body, &head, &task);
        assert!(after < before, "{after} >= {before}");
    }
}

#[test]
fn fumi_head_depends_only_on_descriptions() {
    let data = small_dataset();
    let fumi = small_fumi(&data, &mut rng::stream(5, "init"));
    let task = &tasks(&data, SplitRole::Test, 1, 5, 5, 4, "t")[0];
    let swapped = with_noise_support(task, &mut rng::stream(5, "noise"));
    assert_eq!(fumi.init_head(task).unwrap(), fumi.init_head(&swapped).unwrap());

    let mut same = task.clone();
    let first = same.text.row_slice(0).to_vec();
    same.text = Tensor::from_rows(&vec![first; 5]).unwrap();
    let head = fumi.init_head(&same).unwrap();
    for k in 1..5 {
        assert_eq!(head.row_slice(k), head.row_slice(0));
    }
}

#[test]
fn zero_hypernetwork_predicts_uniformly_before_adaptation() {
    let data = small_dataset();
    let mut fumi = small_fumi(&data, &mut rng::stream(6, "init"));
    fumi.hyper = Mlp::zeros(&[data.text_dim, 16, 9], false);
    let task = &tasks(&data, SplitRole::Test, 1, 5, 1, 4, "t")[0];
    let probs = softmax_rows(&fumi.predict_with_steps(task, 0).unwrap());
    assert!(probs.data().iter().all(|&p| (p - 0.2).abs() < 1e-15));
}

#[test]
fn fumi_is_equivariant_to_class_order() {
    let data = small_dataset();
    let fumi = small_fumi(&data, &mut rng::stream(7, "init"));
    let task = &tasks(&data, SplitRole::Test, 1, 5, 1, 3, "t")[0];
    let perm = [3, 0, 4, 1, 2];
    let permuted = task.permuted(&perm);
    let a = fumi.predict_with_steps(task, 10).unwrap();
    let b = fumi.predict_with_steps(&permuted, 10).unwrap();
    let m = task.queries;
    for i in 0..5 {
        for r in 0..m {
            for j in 0..5 {
                let x = b.get(i * m + r, j);
                let y = a.get(perm[i] * m + r, perm[j]);
                assert!((x - y).abs() < 1e-9, "{x} vs {y}");
            }
        }
    }
}

#[test]
fn zero_step_size_leaves_the_initialization() {
    let data = small_dataset();
    let mut fumi = small_fumi(&data, &mut rng::stream(8, "init"));
    fumi.inner.alpha = 0.0;
    let task = &tasks(&data, SplitRole::Test, 1, 5, 1, 4, "t")[0];
    assert_eq!(fumi.predict(task).unwrap(), fumi.predict_with_steps(task, 0).unwrap());

    let batch = tasks(&data, SplitRole::Train, 2, 5, 1, 4, "b");
    fumi.inner.grad_mode = GradMode::SecondOrder;
    let second = fumi.meta_gradients(&batch, Mode::Eval, &mut rng::stream(0, "d")).unwrap();
    fumi.inner.grad_mode = GradMode::FirstOrder;
    let first = fumi.meta_gradients(&batch, Mode::Eval, &mut rng::stream(0, "d")).unwrap();
    for (a, b) in second.init.iter().zip(&first.init) {
        assert!(max_abs_diff(a, b) < 1e-12);
    }
}

#[test]
fn second_order_terms_change_the_hypernetwork_gradient() {
    let data = small_dataset();
    let mut fumi = small_fumi(&data, &mut rng::stream(9, "init"));
    fumi.inner.alpha = 0.5;
    let batch = tasks(&data, SplitRole::Train, 2, 5, 1, 4, "b");
    fumi.inner.grad_mode = GradMode::SecondOrder;
    let second = fumi.meta_gradients(&batch, Mode::Eval, &mut rng::stream(0, "d")).unwrap();
    fumi.inner.grad_mode = GradMode::FirstOrder;
    let first = fumi.meta_gradients(&batch, Mode::Eval, &mut rng::stream(0, "d")).unwrap();
    let diff = second.init.iter().zip(&first.init).map(|(a, b)| max_abs_diff(a, b)).fold(0.0, f64::max);
    assert!(diff > 1e-6, "{diff}");
    assert_eq!(second.metrics, first.metrics);
}

#[test]
fn maml_ignores_descriptions() {
    let data = small_dataset();
    let maml = small_maml(&data, 5, &mut rng::stream(10, "init"));
    let task = &tasks(&data, SplitRole::Test, 1, 5, 1, 4, "t")[0];
    let mut blank = task.clone();
    blank.text = Tensor::zeros(5, data.text_dim);
    assert_eq!(maml.predict(task).unwrap(), maml.predict(&blank).unwrap());
}

#[test]
fn constant_hypernetwork_reduces_fumi_to_maml() {
    let data = small_dataset();
    let mut r = rng::stream(11, "init");
    let mut fumi = small_fumi(&data, &mut r);
    let row: Vec<f64> = (0..9).map(|i| 0.1 * i as f64 - 0.3).collect();
    let last = fumi.hyper.layers.last_mut().unwrap();
    *last = Linear {
        weight: Tensor::zeros(16, 9),
        bias: Tensor::row(row.clone()),
    };
    let mut maml = small_maml(&data, 5, &mut r);
    maml.body = fumi.body.clone();
    maml.head = HeadParams::from_partitions(&vec![row; 5]).unwrap();

    let batch = tasks(&data, SplitRole::Train, 3, 5, 1, 4, "b");
    for task in &batch {
        assert_eq!(fumi.init_head(task).unwrap(), maml.head.rows);
        let a = fumi.predict_with_steps(task, 5).unwrap();
        let b = maml.predict_with_steps(task, 5).unwrap();
        assert!(max_abs_diff(&a, &b) < 1e-12);
    }
    let gf = fumi.meta_gradients(&batch, Mode::Eval, &mut rng::stream(0, "d")).unwrap();
    let gm = maml.meta_gradients(&batch, Mode::Eval, &mut rng::stream(0, "d")).unwrap();
    for (a, b) in gf.body.iter().zip(&gm.body) {
        assert!(max_abs_diff(a, b) < 1e-12);
    }
    assert!((gf.metrics.query_loss - gm.metrics.query_loss).abs() < 1e-12);
}

fn identity_projection() -> Mlp {
    Mlp {
        layers: vec![Linear {
            weight: Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
            bias: Tensor::zeros(1, 2),
        }],
        activate_output: false,
    }
}

fn hand_task(support: Vec<Vec<f64>>, shots: usize, query: Vec<Vec<f64>>) -> Task {
    let ways = support.len() / shots;
    let queries = query.len() / ways;
    Task {
        class_ids: (0..ways as u32).collect(),
        shots,
        queries,
        support_labels: (0..ways).flat_map(|k| vec![k; shots]).collect(),
        support: Tensor::from_rows(&support).unwrap(),
        text: Tensor::zeros(ways, 1),
        query_labels: (0..ways).flat_map(|k| vec![k; queries]).collect(),
        query: Tensor::from_rows(&query).unwrap(),
        support_index: vec![vec![]; ways],
        query_index: vec![vec![]; ways],
    }
}

#[test]
fn protonet_distances_by_hand() {
    let net = ProtoNet::new(identity_projection(), OuterLoopConfig::metric_based(2));
    let task = hand_task(
        vec![vec![1.0, 1.0], vec![3.0, 1.0], vec![1.0, 3.0], vec![3.0, 3.0]],
        2,
        vec![vec![2.0, 0.0], vec![2.0, 4.0]],
    );
    let logits = net.predict(&task).unwrap();
    assert_eq!(logits.row_slice(0), &[-1.0, -9.0]);
    assert_eq!(logits.row_slice(1), &[-9.0, -1.0]);
    let p = softmax_rows(&logits);
    assert!((p.get(0, 0) - 0.999665).abs() < 5e-7);

    let doubled = hand_task(
        vec![
            vec![1.0, 1.0],
            vec![3.0, 1.0],
            vec![1.0, 1.0],
            vec![3.0, 1.0],
            vec![1.0, 3.0],
            vec![3.0, 3.0],
            vec![1.0, 3.0],
            vec![3.0, 3.0],
        ],
        4,
        vec![vec![2.0, 0.0], vec![2.0, 4.0]],
    );
    assert_eq!(net.predict(&doubled).unwrap(), logits);
}

#[test]
fn forced_mixing_matches_its_unimodal_counterpart() {
    let data = small_dataset();
    let params = Am3Params::new(data.image_dim, data.text_dim, 16, 16, &mut rng::stream(12, "init"));
    let outer = OuterLoopConfig::metric_based(1);
    let image_only = Am3::new(params.clone(), MixMode::ForceImageOnly, outer.clone());
    let text_only = Am3::new(params.clone(), MixMode::ForceTextOnly, outer.clone());
    let proto = ProtoNet::new(params.projection.clone(), outer);
    let mut noise = rng::stream(12, "noise");
    for task in tasks(&data, SplitRole::Test, 10, 5, 1, 3, "t") {
        assert_eq!(image_only.predict(&task).unwrap(), proto.predict(&task).unwrap());
        let swapped = with_noise_support(&task, &mut noise);
        assert_eq!(text_only.predict(&task).unwrap(), text_only.predict(&swapped).unwrap());
    }
    let zero_shot = &tasks(&data, SplitRole::Test, 1, 5, 0, 3, "z")[0];
    assert_eq!(zero_shot.support.rows(), 0);
    assert_eq!(text_only.predict(zero_shot).unwrap().shape(), &[15, 5]);
    assert!(matches!(proto.predict(zero_shot), Err(AlgoError::EmptySupport)));
}

#[test]
fn single_class_tasks_are_certain() {
    let data = small_dataset();
    let params = Am3Params::new(data.image_dim, data.text_dim, 16, 16, &mut rng::stream(13, "init"));
    let am3 = Am3::new(params, MixMode::Learned, OuterLoopConfig::metric_based(1));
    let task = &tasks(&data, SplitRole::Test, 1, 1, 2, 5, "one")[0];
    let p = softmax_rows(&am3.predict(task).unwrap());
    assert!(p.data().iter().all(|&x| x == 1.0));
}

#[test]
fn evaluation_refuses_non_test_classes() {
    let data = small_dataset();
    let maml = small_maml(&data, 5, &mut rng::stream(14, "init"));
    let train = tasks(&data, SplitRole::Train, 1, 5, 1, 2, "t");
    assert!(matches!(
        evaluate(&maml, &train, &data.split),
        Err(AlgoError::SplitViolation(id)) if data.split.role_of(id) == Some(SplitRole::Train)
    ));
}

#[test]
fn evaluation_counts_every_query() {
    let data = small_dataset();
    let test = tasks(&data, SplitRole::Test, 1000, 5, 1, 20, "protocol");
    let oracle = |task: &Task| {
        let mut logits = Tensor::zeros(task.query_labels.len(), task.ways());
        for (r, &l) in task.query_labels.iter().enumerate() {
            logits.data_mut()[r * task.ways() + l] = 1.0;
        }
        Ok(logits)
    };
    let scores = evaluate_with(&test, &data.split, oracle).unwrap();
    assert_eq!(scores.len(), 1000);
    assert_eq!(scores.iter().map(|s| s.predictions).sum::<usize>(), 100_000);
    assert!(scores.iter().all(|s| s.accuracy == 1.0));
}

#[test]
fn meta_training_improves_query_accuracy() {
    let data = small_dataset();
    let base = small_fumi(&data, &mut rng::stream(15, "init"));
    let outer = OuterLoopConfig { lr: 1e-3, ..base.outer.clone() };
    let mut fumi = fumi::algorithms::Fumi::new(base.body, base.hyper, base.inner, outer);
    let val = tasks(&data, SplitRole::Val, 20, 5, 1, 5, "val");
    let score = |f: &fumi::algorithms::Fumi| val.iter().map(|t| f.score(t).unwrap().0).sum::<f64>();
    let before = score(&fumi);
    let mut r = rng::stream(15, "dropout");
    for batch in tasks(&data, SplitRole::Train, 200, 5, 1, 8, "train").chunks(4) {
        let m = fumi.train_step(batch, &mut r).unwrap();
        assert!(m.query_loss.is_finite());
    }
    assert!(score(&fumi) < before);
}
