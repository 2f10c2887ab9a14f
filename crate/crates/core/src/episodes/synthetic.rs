use rand::Rng;
use rand_distr::StandardNormal;

use super::{make_meta_split, split_by_sizes, ClassRecord, DataError, Dataset};
use crate::rng;

/// Desk-scale stand-in for encoded image/description pairs.
///
/// Each class has a latent mean `mu ~ N(0, I)`. Two fixed random linear
/// maps (entries `N(0, 1/latent_dim)`) shared by all classes carry `mu`
/// into image space and text space; images get fresh noise each, the
/// description gets one noise draw per class.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub latent_dim: usize,
    pub image_dim: usize,
    pub text_dim: usize,
    pub image_noise: f64,
    pub text_noise: f64,
    pub n_classes: usize,
    pub images_per_class: usize,
    pub seed: u64,
    /// Explicit `(train, val, test)` class counts; `None` uses 60:20:20.
    pub split_sizes: Option<(usize, usize, usize)>,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            latent_dim: 8,
            image_dim: 32,
            text_dim: 24,
            image_noise: 0.5,
            text_noise: 0.1,
            n_classes: 80,
            images_per_class: 120,
            seed: 0,
            split_sizes: Some((50, 15, 15)),
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: &str| Err(DataError::InvalidConfig(m.to_owned()));
        if self.latent_dim == 0 || self.image_dim == 0 || self.text_dim == 0 {
            return bad("dimensions must be at least 1");
        }
        if !(self.image_noise >= 0.0 && self.text_noise >= 0.0) {
            return bad("noise scales must be non-negative");
        }
        if self.n_classes == 0 {
            return bad("need at least one class");
        }
        if let Some((a, b, c)) = self.split_sizes {
            if a + b + c != self.n_classes {
                return bad("split sizes must add up to n_classes");
            }
        }
        Ok(())
    }
}

/// The two shared latent-to-embedding maps.
#[derive(Clone, Debug)]
pub struct SyntheticWorld {
    config: SyntheticConfig,
    /// `image_dim x latent_dim`, row-major.
    image_map: Vec<f64>,
    /// `text_dim x latent_dim`, row-major.
    text_map: Vec<f64>,
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn apply(map: &[f64], latent: &[f64]) -> Vec<f64> {
    map.chunks(latent.len())
        .map(|row| row.iter().zip(latent).map(|(a, b)| a * b).sum())
        .collect()
}

impl SyntheticWorld {
    pub fn new(config: &SyntheticConfig) -> Result<Self, DataError> {
        config.validate()?;
        let mut r = rng::stream(config.seed, "synthetic.maps");
        let scale = 1.0 / (config.latent_dim as f64).sqrt();
        let image_map = gaussian(&mut r, config.image_dim * config.latent_dim, scale);
        let text_map = gaussian(&mut r, config.text_dim * config.latent_dim, scale);
        Ok(Self {
            config: config.clone(),
            image_map,
            text_map,
        })
    }

    pub fn sample_latent<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        gaussian(rng, self.config.latent_dim, 1.0)
    }

    pub fn class_record<R: Rng + ?Sized>(&self, id: u32, latent: &[f64], rng: &mut R) -> ClassRecord {
        let c = &self.config;
        let text_mean = apply(&self.text_map, latent);
        let text = text_mean
            .iter()
            .zip(gaussian(rng, c.text_dim, c.text_noise))
            .map(|(m, e)| m + e)
            .collect();
        let image_mean = apply(&self.image_map, latent);
        let images = (0..c.images_per_class)
            .map(|_| {
                image_mean
                    .iter()
                    .zip(gaussian(rng, c.image_dim, c.image_noise))
                    .map(|(m, e)| m + e)
                    .collect()
            })
            .collect();
        ClassRecord {
            id,
            name: format!("synthetic-{id}"),
            text,
            images,
        }
    }
}

pub fn generate_synthetic(config: &SyntheticConfig) -> Result<Vec<ClassRecord>, DataError> {
    let world = SyntheticWorld::new(config)?;
    let mut r = rng::stream(config.seed, "synthetic.classes");
    Ok((0..config.n_classes as u32)
        .map(|id| {
            let latent = world.sample_latent(&mut r);
            world.class_record(id, &latent, &mut r)
        })
        .collect())
}

/// Synthetic classes plus their meta-split.
pub fn synthetic_dataset(config: &SyntheticConfig) -> Result<Dataset, DataError> {
    let classes = generate_synthetic(config)?;
    let ids: Vec<u32> = classes.iter().map(|c| c.id).collect();
    let mut r = rng::stream(config.seed, "synthetic.split");
    let split = match config.split_sizes {
        Some((train, val, _)) => split_by_sizes(&ids, train, val, &mut r)?,
        None => make_meta_split(&ids, (0.6, 0.2, 0.2), &mut r)?,
    };
    Ok(Dataset {
        image_dim: config.image_dim,
        text_dim: config.text_dim,
        classes,
        split,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::episodes::{sample_task, SplitRole};

    #[test]
    fn zero_image_noise_collapses_classes() {
        let cfg = SyntheticConfig {
            image_noise: 0.0,
            n_classes: 3,
            images_per_class: 5,
            split_sizes: None,
            ..Default::default()
        };
        for class in generate_synthetic(&cfg).unwrap() {
            assert!(class.images.iter().all(|im| im == &class.images[0]));
        }
    }

    #[test]
    fn equal_latents_give_equal_descriptions() {
        let cfg = SyntheticConfig {
            text_noise: 0.0,
            ..Default::default()
        };
        let world = SyntheticWorld::new(&cfg).unwrap();
        let mut r = rng::stream(0, "t");
        let mu = world.sample_latent(&mut r);
        let a = world.class_record(0, &mu, &mut r);
        let b = world.class_record(1, &mu, &mut r);
        assert_eq!(a.text, b.text);
        assert_ne!(a.images, b.images);
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = SyntheticConfig::default();
        assert_eq!(generate_synthetic(&cfg).unwrap(), generate_synthetic(&cfg).unwrap());
        let other = SyntheticConfig { seed: 1, ..cfg.clone() };
        assert_ne!(generate_synthetic(&cfg).unwrap(), generate_synthetic(&other).unwrap());
    }

    #[test]
    fn invalid_configs() {
        for cfg in [
            SyntheticConfig { latent_dim: 0, ..Default::default() },
            SyntheticConfig { image_noise: -1.0, ..Default::default() },
            SyntheticConfig { split_sizes: Some((1, 1, 1)), ..Default::default() },
        ] {
            assert!(matches!(generate_synthetic(&cfg), Err(DataError::InvalidConfig(_))));
        }
    }

    #[test]
    fn default_dataset_split() {
        let ds = synthetic_dataset(&SyntheticConfig::default()).unwrap();
        assert_eq!(ds.split.sizes(), (50, 15, 15));
        assert!(ds.split.is_disjoint());
    }

    /// Brute-force nearest-class-mean classifier: 100 images per class
    /// estimate the means, the rest are classified.
    #[test]
    fn default_classes_are_separable() {
        let ds = synthetic_dataset(&SyntheticConfig::default()).unwrap();
        let test = ds.classes_in(SplitRole::Test);
        let mut r = rng::stream(5, "oracle");
        let (mut correct, mut total) = (0, 0);
        for _ in 0..50 {
            let task = sample_task(&test, 5, 100, 20, &mut r).unwrap();
            let means: Vec<Vec<f64>> = (0..5)
                .map(|k| {
                    let mut m = vec![0.0; ds.image_dim];
                    for row in k * 100..(k + 1) * 100 {
                        for (a, b) in m.iter_mut().zip(task.support.row_slice(row)) {
                            *a += b / 100.0;
                        }
                    }
                    m
                })
                .collect();
            for (q, &label) in task.query_labels.iter().enumerate() {
                let x = task.query.row_slice(q);
                let best = (0..5)
                    .min_by(|&a, &b| {
                        let da: f64 = means[a].iter().zip(x).map(|(m, v)| (m - v).powi(2)).sum();
                        let db: f64 = means[b].iter().zip(x).map(|(m, v)| (m - v).powi(2)).sum();
                        da.total_cmp(&db)
                    })
                    .unwrap();
                correct += usize::from(best == label);
                total += 1;
            }
        }
        let acc = correct as f64 / total as f64;
        assert!(acc > 0.95, "nearest-mean accuracy {acc}");
    }
}
