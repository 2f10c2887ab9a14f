//! Few-shot tasks: class records, meta-splits, the episode sampler, the
//! synthetic multimodal generator and the MMFS v1 on-disk format.

mod mmfs;
mod synthetic;

use std::collections::HashSet;

use rand::seq::index;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::diffcore::Tensor;

pub use mmfs::{load_dataset, write_dataset, Manifest, ManifestClass, ManifestSplits};
pub use synthetic::{generate_synthetic, synthetic_dataset, SyntheticConfig};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("need at least 3 classes for a meta-split, got {0}")]
    TooFewClasses(usize),
    #[error("need {needed} classes, have {available}")]
    InsufficientClasses { needed: usize, available: usize },
    #[error("class {class} has {available} images, need {needed}")]
    InsufficientImages {
        class: u32,
        needed: usize,
        available: usize,
    },
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("payload truncated: need {needed} floats, file holds {available}")]
    TruncatedPayload { needed: u64, available: u64 },
    #[error("class {0} has no description embedding")]
    MissingDescription(u32),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// One class: its description embedding and its image embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassRecord {
    pub id: u32,
    pub name: String,
    pub text: Vec<f64>,
    pub images: Vec<Vec<f64>>,
}

/// Class-disjoint train/validation/test partition.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct MetaSplit {
    pub train: Vec<u32>,
    pub val: Vec<u32>,
    pub test: Vec<u32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitRole {
    Train,
    Val,
    Test,
}

impl MetaSplit {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.val.len(), self.test.len())
    }

    pub fn role_of(&self, id: u32) -> Option<SplitRole> {
        if self.train.contains(&id) {
            Some(SplitRole::Train)
        } else if self.val.contains(&id) {
            Some(SplitRole::Val)
        } else if self.test.contains(&id) {
            Some(SplitRole::Test)
        } else {
            None
        }
    }

    pub fn ids(&self, role: SplitRole) -> &[u32] {
        match role {
            SplitRole::Train => &self.train,
            SplitRole::Val => &self.val,
            SplitRole::Test => &self.test,
        }
    }

    pub fn is_disjoint(&self) -> bool {
        let mut seen = HashSet::new();
        self.train
            .iter()
            .chain(&self.val)
            .chain(&self.test)
            .all(|id| seen.insert(*id))
    }
}

/// Shuffles `class_ids` and cuts it by `ratios`; whatever the floors leave
/// over goes to the test split.
pub fn make_meta_split<R: Rng + ?Sized>(
    class_ids: &[u32],
    ratios: (f64, f64, f64),
    rng: &mut R,
) -> Result<MetaSplit, DataError> {
    let c = class_ids.len();
    if c < 3 {
        return Err(DataError::TooFewClasses(c));
    }
    let n_train = (ratios.0 * c as f64 + 1e-9).floor() as usize;
    let n_val = (ratios.1 * c as f64 + 1e-9).floor() as usize;
    split_by_sizes(class_ids, n_train, n_val, rng)
}

/// Shuffled split with explicit train and validation sizes; the rest is test.
pub fn split_by_sizes<R: Rng + ?Sized>(
    class_ids: &[u32],
    n_train: usize,
    n_val: usize,
    rng: &mut R,
) -> Result<MetaSplit, DataError> {
    if n_train + n_val > class_ids.len() {
        return Err(DataError::InsufficientClasses {
            needed: n_train + n_val,
            available: class_ids.len(),
        });
    }
    let mut ids = class_ids.to_vec();
    ids.shuffle(rng);
    let test = ids.split_off(n_train + n_val);
    let val = ids.split_off(n_train);
    Ok(MetaSplit {
        train: ids,
        val,
        test,
    })
}

/// A loaded collection of classes with its meta-split.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub image_dim: usize,
    pub text_dim: usize,
    pub classes: Vec<ClassRecord>,
    pub split: MetaSplit,
}

impl Dataset {
    pub fn classes_in(&self, role: SplitRole) -> Vec<&ClassRecord> {
        let ids = self.split.ids(role);
        self.classes.iter().filter(|c| ids.contains(&c.id)).collect()
    }
}

/// One episode. Support and query rows are class-major: the rows for
/// label `i` are contiguous and labels run `0..K` in order.
#[derive(Clone, Debug, PartialEq)]
pub struct Task {
    pub class_ids: Vec<u32>,
    pub shots: usize,
    pub queries: usize,
    /// `K*N x image_dim`.
    pub support: Tensor,
    pub support_labels: Vec<usize>,
    /// `K x text_dim`, row `i` describes label `i`.
    pub text: Tensor,
    /// `K*M x image_dim`.
    pub query: Tensor,
    pub query_labels: Vec<usize>,
    /// Source image indices within each class record.
    pub support_index: Vec<Vec<usize>>,
    pub query_index: Vec<Vec<usize>>,
}

impl Task {
    pub fn ways(&self) -> usize {
        self.class_ids.len()
    }

    /// The same episode with entries reordered: new label `i` is old label
    /// `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Task {
        let k = self.ways();
        assert_eq!(perm.len(), k);
        let pick = |t: &Tensor, per: usize| {
            let cols = t.cols();
            let mut data = Vec::with_capacity(t.len());
            for &p in perm {
                for r in p * per..(p + 1) * per {
                    data.extend_from_slice(t.row_slice(r));
                }
            }
            Tensor::matrix(k * per, cols, data).expect("same size")
        };
        Task {
            class_ids: perm.iter().map(|&p| self.class_ids[p]).collect(),
            shots: self.shots,
            queries: self.queries,
            support: pick(&self.support, self.shots),
            support_labels: self.support_labels.clone(),
            text: pick(&self.text, 1),
            query: pick(&self.query, self.queries),
            query_labels: self.query_labels.clone(),
            support_index: perm.iter().map(|&p| self.support_index[p].clone()).collect(),
            query_index: perm.iter().map(|&p| self.query_index[p].clone()).collect(),
        }
    }
}

fn labels(k: usize, per: usize) -> Vec<usize> {
    (0..k).flat_map(|i| std::iter::repeat_n(i, per)).collect()
}

/// Samples a `ways`-way `shots`-shot task with `queries` query images per class.
pub fn sample_task<R: Rng + ?Sized>(
    classes: &[&ClassRecord],
    ways: usize,
    shots: usize,
    queries: usize,
    rng: &mut R,
) -> Result<Task, DataError> {
    if classes.len() < ways || ways == 0 {
        return Err(DataError::InsufficientClasses {
            needed: ways.max(1),
            available: classes.len(),
        });
    }
    let chosen = index::sample(rng, classes.len(), ways).into_vec();
    let image_dim = classes[chosen[0]].images.first().map_or(0, Vec::len);
    let text_dim = classes[chosen[0]].text.len();
    let mut support = Vec::with_capacity(ways * shots * image_dim);
    let mut query = Vec::with_capacity(ways * queries * image_dim);
    let mut text = Vec::with_capacity(ways * text_dim);
    let mut support_index = Vec::with_capacity(ways);
    let mut query_index = Vec::with_capacity(ways);
    let mut class_ids = Vec::with_capacity(ways);
    for &c in &chosen {
        let class = classes[c];
        let needed = shots + queries;
        if class.images.len() < needed {
            return Err(DataError::InsufficientImages {
                class: class.id,
                needed,
                available: class.images.len(),
            });
        }
        let picks = index::sample(rng, class.images.len(), needed).into_vec();
        for &i in &picks[..shots] {
            support.extend_from_slice(&class.images[i]);
        }
        for &i in &picks[shots..] {
            query.extend_from_slice(&class.images[i]);
        }
        text.extend_from_slice(&class.text);
        support_index.push(picks[..shots].to_vec());
        query_index.push(picks[shots..].to_vec());
        class_ids.push(class.id);
    }
    let tensor = |rows, cols, data| Tensor::matrix(rows, cols, data).map_err(|e| DataError::DimMismatch(e.to_string()));
    Ok(Task {
        class_ids,
        shots,
        queries,
        support: tensor(ways * shots, image_dim, support)?,
        support_labels: labels(ways, shots),
        text: tensor(ways, text_dim, text)?,
        query: tensor(ways * queries, image_dim, query)?,
        query_labels: labels(ways, queries),
        support_index,
        query_index,
    })
}
