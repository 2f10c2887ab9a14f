//! Generating the synthetic multi-modal dataset and sampling episodes.

use fumi::episodes::{sample_task, synthetic_dataset, SplitRole, SyntheticConfig};
use fumi::rng;

fn main() {
    let config = SyntheticConfig::default();
    let data = synthetic_dataset(&config).unwrap();
    let (train, val, test) = data.split.sizes();
    println!(
        "{} classes ({train} train / {val} val / {test} test), image dim {}, text dim {}",
        data.classes.len(),
        data.image_dim,
        data.text_dim
    );

    let classes = data.classes_in(SplitRole::Train);
    let mut rng = rng::stream(0, "example.episodes");
    for (ways, shots, queries) in [(5, 1, 20), (5, 10, 20), (5, 0, 20)] {
        let task = sample_task(&classes, ways, shots, queries, &mut rng).unwrap();
        println!(
            "{ways}-way {shots}-shot: classes {:?}, support {:?}, text {:?}, query {:?}",
            task.class_ids,
            task.support.shape(),
            task.text.shape(),
            task.query.shape()
        );
    }
}
