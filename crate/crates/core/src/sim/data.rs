//! Sample pools: synthetic Gaussian class clouds or IDX (MNIST-format) files.

use std::io::Read;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use super::config::{DataConfig, DataSource, ExperimentConfig};
use crate::dirichlet::{sample_multinomial, LabeledPool, UserDataset};
use crate::error::{Error, Result};
use crate::seed::{SeedTree, Stream};

#[derive(Debug, Clone)]
pub struct DataPools {
    pub train: LabeledPool,
    pub test: LabeledPool,
}

/// Isotropic Gaussian clouds around random class means.
pub fn synthetic_pools(cfg: &DataConfig, num_classes: usize, tree: &SeedTree) -> Result<DataPools> {
    let d = cfg.dim;
    let mut rng = tree.rng(Stream::Data, &[0]);
    let means: Vec<Vec<f64>> = (0..num_classes)
        .map(|_| (0..d).map(|_| cfg.separation * rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    let draw = |per_class: usize, key: u64| {
        let mut rng = tree.rng(Stream::Data, &[key]);
        let mut features = Vec::with_capacity(per_class * num_classes * d);
        let mut labels = Vec::with_capacity(per_class * num_classes);
        for (c, mu) in means.iter().enumerate() {
            for _ in 0..per_class {
                features.extend(mu.iter().map(|m| m + cfg.noise * rng.sample::<f64, _>(StandardNormal)));
                labels.push(c);
            }
        }
        LabeledPool::new(d, features, labels, num_classes)
    };
    Ok(DataPools {
        train: draw(cfg.train_per_class, 1)?,
        test: draw(cfg.test_per_class, 2)?,
    })
}

fn read_u32_be(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Parse("IDX header is truncated".into()))
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    Ok(buf)
}

/// Reads an unsigned-byte IDX image file; pixels are scaled to `[0, 1]`.
/// Returns `(pixels per image, features)`.
pub fn read_idx_images(path: &Path, limit: Option<usize>) -> Result<(usize, Vec<f64>)> {
    let bytes = read_all(path)?;
    let magic = read_u32_be(&bytes, 0)?;
    if magic >> 8 != 0x08 || magic & 0xff < 2 {
        return Err(Error::Parse(format!("{}: not an unsigned-byte IDX image file", path.display())));
    }
    let ndim = (magic & 0xff) as usize;
    let count = read_u32_be(&bytes, 4)? as usize;
    let mut dim = 1usize;
    for i in 1..ndim {
        dim *= read_u32_be(&bytes, 4 + 4 * i)? as usize;
    }
    let offset = 4 + 4 * ndim;
    let n = limit.map_or(count, |l| l.min(count));
    let body = bytes
        .get(offset..offset + n * dim)
        .ok_or_else(|| Error::Parse(format!("{}: image data is truncated", path.display())))?;
    Ok((dim, body.iter().map(|&b| b as f64 / 255.0).collect()))
}

pub fn read_idx_labels(path: &Path, limit: Option<usize>) -> Result<Vec<usize>> {
    let bytes = read_all(path)?;
    if read_u32_be(&bytes, 0)? != 0x0801 {
        return Err(Error::Parse(format!("{}: not an IDX label file", path.display())));
    }
    let count = read_u32_be(&bytes, 4)? as usize;
    let n = limit.map_or(count, |l| l.min(count));
    let body = bytes
        .get(8..8 + n)
        .ok_or_else(|| Error::Parse(format!("{}: label data is truncated", path.display())))?;
    Ok(body.iter().map(|&b| b as usize).collect())
}

fn idx_pool(images: &Path, labels: &Path, limit: Option<usize>, num_classes: usize) -> Result<LabeledPool> {
    let (dim, features) = read_idx_images(images, limit)?;
    let labels = read_idx_labels(labels, limit)?;
    if labels.len() * dim != features.len() {
        return Err(Error::shape(labels.len() * dim, features.len()));
    }
    LabeledPool::new(dim, features, labels, num_classes)
}

pub fn load_pools(cfg: &ExperimentConfig, tree: &SeedTree) -> Result<DataPools> {
    let c = cfg.partition.num_classes;
    match cfg.data.source {
        DataSource::Synthetic => synthetic_pools(&cfg.data, c, tree),
        DataSource::Idx => {
            let p = cfg
                .data
                .idx
                .as_ref()
                .ok_or_else(|| Error::domain("data.idx paths are required for IDX input"))?;
            Ok(DataPools {
                train: idx_pool(&p.train_images, &p.train_labels, cfg.data.max_train, c)?,
                test: idx_pool(&p.test_images, &p.test_labels, None, c)?,
            })
        }
    }
}

/// Per-user test sets drawn with replacement from `pool`, following each user's class proportions.
pub fn sample_test_sets(
    pool: &LabeledPool,
    proportions: &[Vec<f64>],
    per_user: usize,
    tree: &SeedTree,
) -> Result<Vec<UserDataset>> {
    let mut by_class = vec![Vec::new(); pool.num_classes];
    for (i, &y) in pool.labels.iter().enumerate() {
        by_class[y].push(i);
    }
    proportions
        .iter()
        .enumerate()
        .map(|(user, p)| {
            let mut rng = tree.rng(Stream::Data, &[3, user as u64]);
            let counts = sample_multinomial(per_user as u64, p, &mut rng);
            let mut rows = Vec::with_capacity(per_user);
            for (j, &n) in counts.iter().enumerate() {
                if n > 0 && by_class[j].is_empty() {
                    return Err(Error::domain(format!("test pool has no samples of class {j}")));
                }
                for _ in 0..n {
                    rows.push(by_class[j][rng.random_range(0..by_class[j].len())]);
                }
            }
            Ok(pool.gather(&rows))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_pools_have_every_class() {
        let cfg = DataConfig {
            dim: 4,
            train_per_class: 5,
            test_per_class: 3,
            ..DataConfig::default()
        };
        let p = synthetic_pools(&cfg, 3, &SeedTree::new(1)).unwrap();
        assert_eq!(p.train.len(), 15);
        assert_eq!(p.test.len(), 9);
        assert_eq!(p.train.dim, 4);
        let again = synthetic_pools(&cfg, 3, &SeedTree::new(1)).unwrap();
        assert_eq!(p.train, again.train);
    }

    #[test]
    fn idx_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img");
        let lab = dir.path().join("lab");
        let mut bytes = vec![0, 0, 8, 3, 0, 0, 0, 3, 0, 0, 0, 2, 0, 0, 0, 2];
        bytes.extend([0, 255, 51, 102, 1, 2, 3, 4, 9, 9, 9, 9]);
        std::fs::write(&img, &bytes).unwrap();
        std::fs::write(&lab, [0, 0, 8, 1, 0, 0, 0, 3, 2, 0, 1]).unwrap();
        let pool = idx_pool(&img, &lab, None, 3).unwrap();
        assert_eq!(pool.dim, 4);
        assert_eq!(pool.labels, vec![2, 0, 1]);
        assert_eq!(pool.row(0), &[0.0, 1.0, 0.2, 0.4]);
        assert_eq!(idx_pool(&img, &lab, Some(2), 3).unwrap().len(), 2);

        std::fs::write(&img, &bytes[..bytes.len() - 1]).unwrap();
        assert!(matches!(read_idx_images(&img, None), Err(Error::Parse(_))));
        assert!(matches!(read_idx_labels(&img, None), Err(Error::Parse(_))));
    }

    #[test]
    fn test_sets_follow_proportions() {
        let cfg = DataConfig {
            dim: 2,
            ..DataConfig::default()
        };
        let p = synthetic_pools(&cfg, 3, &SeedTree::new(2)).unwrap();
        let sets = sample_test_sets(&p.test, &[vec![1.0, 0.0, 0.0], vec![0.0, 0.5, 0.5]], 40, &SeedTree::new(3)).unwrap();
        assert!(sets[0].labels().iter().all(|&y| y == 0));
        assert_eq!(sets[1].len(), 40);
        assert!(sets[1].labels().iter().all(|&y| y != 0));
    }
}
