#![allow(dead_code)]

use fumi::algorithms::{Fumi, InnerLoopConfig, Maml, OuterLoopConfig};
use fumi::diffcore::Tensor;
use fumi::episodes::{sample_task, synthetic_dataset, Dataset, SplitRole, SyntheticConfig, Task};
use fumi::models::{HeadParams, Mlp};
use fumi::rng::{self, Rng};

pub fn small_dataset() -> Dataset {
    synthetic_dataset(&SyntheticConfig {
        n_classes: 30,
        images_per_class: 40,
        split_sizes: Some((18, 6, 6)),
        ..Default::default()
    })
    .unwrap()
}

pub fn tasks(data: &Dataset, role: SplitRole, n: usize, ways: usize, shots: usize, queries: usize, label: &str) -> Vec<Task> {
    let classes = data.classes_in(role);
    let mut rng = rng::stream(7, label);
    (0..n).map(|_| sample_task(&classes, ways, shots, queries, &mut rng).unwrap()).collect()
}

pub fn small_fumi(data: &Dataset, rng: &mut Rng) -> Fumi {
    let body = Mlp::body(data.image_dim, &[16, 8], rng);
    let hyper = Mlp::hypernet(data.text_dim, 16, 8, rng);
    Fumi::new(body, hyper, InnerLoopConfig::default(), OuterLoopConfig::default())
}

pub fn small_maml(data: &Dataset, ways: usize, rng: &mut Rng) -> Maml {
    let body = Mlp::body(data.image_dim, &[16, 8], rng);
    let head = HeadParams::init(ways, 8, rng);
    Maml::new(body, head, InnerLoopConfig::default(), OuterLoopConfig::default())
}

pub fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// A copy of `task` whose support images are replaced by fresh noise.
pub fn with_noise_support(task: &Task, rng: &mut Rng) -> Task {
    use rand::Rng as _;
    let mut t = task.clone();
    for v in t.support.data_mut() {
        *v = rng.gen_range(-3.0..3.0);
    }
    t
}
