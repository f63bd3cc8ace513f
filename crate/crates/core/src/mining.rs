//! Batch construction and pair mining.
//!
//! Batches are seeded by inverse-subcategory-frequency weighted draws and
//! enriched with pose neighbours, so near-duplicate poses that need their
//! feature distance optimized actually co-occur. The miner then keeps only
//! the cross-modal (camera, rendering) pairs that violate the dynamic pose
//! margin; every other pair has zero loss and zero gradient and is dropped.

use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::loss::squared_distance;
use crate::pose::pose_distance;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Batch sampler parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub batch_size: usize,
    /// Pose neighbours appended per seed.
    pub neighbor_count: usize,
    /// Geodesic radius (radians) within which a sample counts as a pose
    /// neighbour.
    pub neighbor_threshold: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            neighbor_count: 1,
            neighbor_threshold: 5f64.to_radians(),
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::InvalidConfig("batch_size must be ≥ 2".into()));
        }
        if self.neighbor_count < 1 || self.neighbor_count >= self.batch_size {
            return Err(Error::InvalidConfig(format!(
                "neighbor_count must satisfy 1 ≤ N < batch_size, got {}",
                self.neighbor_count
            )));
        }
        if self.neighbor_threshold <= 0.0 {
            return Err(Error::InvalidConfig(
                "neighbor_threshold must be > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Index pairs that violate the dynamic margin. `(i, j)` pairs camera
/// embedding `i` with rendering embedding `j`; the pairing is ordered and
/// includes `i = j` (a sample with its own rendering is the always-available
/// positive at Δθ = 0).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MinedPairs {
    pub positives: Vec<(usize, usize)>,
    pub negatives: Vec<(usize, usize)>,
}

impl MinedPairs {
    pub fn len(&self) -> usize {
        self.positives.len() + self.negatives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positives.is_empty() && self.negatives.is_empty()
    }
}

/// Per-subcategory sampling weights: `1 / count(subcategory)`, normalized so
/// the weights summed over all samples equal 1.
pub fn subcategory_weights(samples: &[Sample]) -> Result<BTreeMap<String, f64>> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("subcategory_weights"));
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for s in samples {
        *counts.entry(s.subcategory.as_str()).or_insert(0) += 1;
    }
    // Σ_samples 1/count = number of distinct subcategories.
    let normalizer = counts.len() as f64;
    Ok(counts
        .into_iter()
        .map(|(k, c)| (k.to_owned(), 1.0 / (c as f64 * normalizer)))
        .collect())
}

/// Draw one batch of sample indices: weighted seeds without replacement,
/// each followed by up to `neighbor_count` of its in-threshold pose
/// neighbours, falling back to weighted draws when neighbours run out.
pub fn draw_batch<R: Rng + ?Sized>(
    samples: &[Sample],
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<Vec<usize>> {
    cfg.validate()?;
    if samples.len() < cfg.batch_size {
        return Err(Error::BatchTooLarge {
            batch: cfg.batch_size,
            dataset: samples.len(),
        });
    }

    let weights_by_sub = subcategory_weights(samples)?;
    let weights: Vec<f64> = samples
        .iter()
        .map(|s| weights_by_sub[&s.subcategory])
        .collect();

    let mut in_batch = vec![false; samples.len()];
    let mut batch = Vec::with_capacity(cfg.batch_size);

    while batch.len() < cfg.batch_size {
        let seed = weighted_draw(&weights, &in_batch, rng)
            .expect("batch_size ≤ dataset size leaves a candidate");
        in_batch[seed] = true;
        batch.push(seed);

        if batch.len() == cfg.batch_size {
            break;
        }

        let mut neighbours: Vec<usize> = (0..samples.len())
            .filter(|&j| {
                !in_batch[j]
                    && pose_distance(&samples[seed].pose, &samples[j].pose) < cfg.neighbor_threshold
            })
            .collect();
        for _ in 0..cfg.neighbor_count {
            if batch.len() == cfg.batch_size || neighbours.is_empty() {
                break;
            }
            let pick = neighbours.swap_remove(rng.random_range(0..neighbours.len()));
            in_batch[pick] = true;
            batch.push(pick);
        }
    }
    Ok(batch)
}

fn weighted_draw<R: Rng + ?Sized>(weights: &[f64], taken: &[bool], rng: &mut R) -> Option<usize> {
    let total: f64 = weights
        .iter()
        .zip(taken)
        .filter(|(_, &t)| !t)
        .map(|(w, _)| w)
        .sum();
    if total <= 0.0 {
        // Degenerate weights; fall back to the first free slot.
        return taken.iter().position(|&t| !t);
    }
    let mut pick = rng.random_range(0.0..total);
    let mut last_free = None;
    for (i, (&w, &t)) in weights.iter().zip(taken).enumerate() {
        if t {
            continue;
        }
        last_free = Some(i);
        if pick < w {
            return Some(i);
        }
        pick -= w;
    }
    last_free
}

/// Mine the margin-violating pairs of a batch.
///
/// All ordered cross-modal pairs (camera `i`, rendering `j`) are labelled
/// positive iff `Δθ(pose_i, pose_j) < t` and negative otherwise. A positive
/// is kept iff `‖f_c,i − f_r,j‖² > m·Δθ`; a negative iff
/// `‖f_c,i − f_r,j‖² < m·Δθ`. Pairs exactly on the margin carry zero loss
/// and are dropped.
pub fn mine_pairs(
    poses: &[crate::pose::EulerPose],
    embeddings_c: &[Vec<f64>],
    embeddings_r: &[Vec<f64>],
    threshold: f64,
    margin: f64,
) -> Result<MinedPairs> {
    if embeddings_c.len() != poses.len() || embeddings_r.len() != poses.len() {
        return Err(Error::DimMismatch {
            expected: poses.len(),
            got: embeddings_c.len().min(embeddings_r.len()),
        });
    }
    if threshold <= 0.0 {
        return Err(Error::InvalidConfig("pose threshold must be > 0".into()));
    }
    let dim = match embeddings_c.first() {
        Some(e) => e.len(),
        None => return Ok(MinedPairs::default()),
    };
    for e in embeddings_c.iter().chain(embeddings_r.iter()) {
        if e.len() != dim {
            return Err(Error::DimMismatch {
                expected: dim,
                got: e.len(),
            });
        }
    }

    let mut mined = MinedPairs::default();
    for i in 0..poses.len() {
        for j in 0..poses.len() {
            let dt = pose_distance(&poses[i], &poses[j]);
            let d2 = squared_distance(&embeddings_c[i], &embeddings_r[j]);
            if dt < threshold {
                if d2 > margin * dt {
                    mined.positives.push((i, j));
                }
            } else if d2 < margin * dt {
                mined.negatives.push((i, j));
            }
        }
    }
    Ok(mined)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_dataset, DatasetConfig, ViewingSphere};
    use crate::pose::EulerPose;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap as Map;

    fn sample_at(id: u64, subcategory: &str, pose: EulerPose) -> Sample {
        Sample {
            id,
            category: "car".into(),
            subcategory: subcategory.into(),
            pose,
            bbox: crate::dataset::BBox {
                x: 0.0,
                y: 0.0,
                w: 100.0,
                h: 100.0,
            },
            camera_feat: vec![0.0; 8],
            render_feat: vec![0.0; 8],
            occlusion_level: crate::dataset::OcclusionLevel::L0,
            occlusion_ratio: 0.0,
        }
    }

    #[test]
    fn weights_hand_example() {
        let samples = vec![
            sample_at(0, "sedan", EulerPose::from_degrees(0.0, 0.0, 0.0)),
            sample_at(1, "sedan", EulerPose::from_degrees(20.0, 0.0, 0.0)),
            sample_at(2, "sedan", EulerPose::from_degrees(40.0, 0.0, 0.0)),
            sample_at(3, "van", EulerPose::from_degrees(60.0, 0.0, 0.0)),
        ];
        let w = subcategory_weights(&samples).unwrap();
        assert!((w["sedan"] - 1.0 / 6.0).abs() < 1e-15);
        assert!((w["van"] - 0.5).abs() < 1e-15);
        let total: f64 = samples.iter().map(|s| w[&s.subcategory]).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn weights_single_and_symmetric() {
        let one = vec![
            sample_at(0, "sedan", EulerPose::from_degrees(0.0, 0.0, 0.0)),
            sample_at(1, "sedan", EulerPose::from_degrees(10.0, 0.0, 0.0)),
        ];
        let w = subcategory_weights(&one).unwrap();
        assert!((w["sedan"] - 0.5).abs() < 1e-15);

        let two = vec![
            sample_at(0, "a", EulerPose::from_degrees(0.0, 0.0, 0.0)),
            sample_at(1, "b", EulerPose::from_degrees(10.0, 0.0, 0.0)),
        ];
        let w = subcategory_weights(&two).unwrap();
        assert!((w["a"] - 0.5).abs() < 1e-15);
        assert!((w["b"] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn isolated_poses_give_pure_weighted_batches() {
        // Poses > 5° apart pairwise: azimuths 10° apart on the equator.
        let samples: Vec<Sample> = (0..8)
            .map(|i| {
                sample_at(
                    i,
                    "sedan",
                    EulerPose::from_degrees(10.0 * i as f64, 0.0, 0.0),
                )
            })
            .collect();
        let cfg = SamplerConfig {
            batch_size: 4,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let batch = draw_batch(&samples, &cfg, &mut rng).unwrap();
        assert_eq!(batch.len(), 4);
        let mut sorted = batch.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 4, "indices must be distinct");
    }

    #[test]
    fn copies_of_one_pose_fill_with_neighbours() {
        let samples: Vec<Sample> = (0..32)
            .map(|i| sample_at(i, "sedan", EulerPose::from_degrees(30.0, 10.0, 0.0)))
            .collect();
        let cfg = SamplerConfig {
            batch_size: 32,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let batch = draw_batch(&samples, &cfg, &mut rng).unwrap();
        assert_eq!(batch.len(), 32);
        for &i in &batch {
            for &j in &batch {
                assert!(pose_distance(&samples[i].pose, &samples[j].pose) < cfg.neighbor_threshold);
            }
        }
    }

    #[test]
    fn inverse_frequency_equalizes_subcategories() {
        let cfg = DatasetConfig {
            seed: 9,
            n_samples: 1000,
            subcategory_mix: Map::from([("sedan".to_owned(), 0.9), ("van".to_owned(), 0.1)]),
            sphere: ViewingSphere::default(),
            ..Default::default()
        };
        let samples = generate_dataset(&cfg).unwrap();
        let vans = samples.iter().filter(|s| s.subcategory == "van").count();
        assert!(vans > 50, "need a real minority class, got {vans}");

        // A tiny threshold disables neighbour enrichment so the test isolates
        // the weighting behaviour.
        let sampler = SamplerConfig {
            batch_size: 32,
            neighbor_count: 1,
            neighbor_threshold: 1e-12,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut van_draws = 0usize;
        let mut total = 0usize;
        for _ in 0..10_000 {
            let batch = draw_batch(&samples, &sampler, &mut rng).unwrap();
            for i in batch {
                if samples[i].subcategory == "van" {
                    van_draws += 1;
                }
                total += 1;
            }
        }
        let frac = van_draws as f64 / total as f64;
        assert!((frac - 0.5).abs() < 0.02, "van fraction {frac}");
    }

    #[test]
    fn seeds_bring_their_neighbours() {
        // Ten well-separated clusters of eight identical poses. With N = 1,
        // every seed that has free in-threshold neighbours must pull one in,
        // so every batch member has a pose neighbour inside the batch.
        let samples: Vec<Sample> = (0..80)
            .map(|i| {
                sample_at(
                    i,
                    "sedan",
                    EulerPose::from_degrees(30.0 * (i % 10) as f64, 0.0, 0.0),
                )
            })
            .collect();
        let cfg = SamplerConfig {
            batch_size: 8,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..200 {
            let batch = draw_batch(&samples, &cfg, &mut rng).unwrap();
            for &i in &batch {
                let has_neighbour = batch.iter().any(|&j| {
                    j != i
                        && pose_distance(&samples[i].pose, &samples[j].pose)
                            < cfg.neighbor_threshold
                });
                assert!(has_neighbour, "batch member {i} isolated in {batch:?}");
            }
        }
    }

    #[test]
    fn batch_larger_than_dataset_is_an_error() {
        let samples = [sample_at(
            0,
            "sedan",
            EulerPose::from_degrees(0.0, 0.0, 0.0),
        )];
        let cfg = SamplerConfig {
            batch_size: 2,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(matches!(
            draw_batch(&samples, &cfg, &mut rng),
            Err(Error::BatchTooLarge { .. })
        ));
    }

    #[test]
    fn candidate_labels_match_hand_enumeration() {
        let batch = [
            sample_at(0, "sedan", EulerPose::from_degrees(0.0, 0.0, 0.0)),
            sample_at(1, "sedan", EulerPose::from_degrees(3.0, 0.0, 0.0)),
            sample_at(2, "sedan", EulerPose::from_degrees(90.0, 0.0, 0.0)),
        ];
        let t = 5f64.to_radians();
        // Unordered off-diagonal candidate classification.
        let mut pos = vec![];
        let mut neg = vec![];
        for i in 0..3 {
            for j in (i + 1)..3 {
                if pose_distance(&batch[i].pose, &batch[j].pose) < t {
                    pos.push((i, j));
                } else {
                    neg.push((i, j));
                }
            }
        }
        assert_eq!(pos, vec![(0, 1)]);
        assert_eq!(neg, vec![(0, 2), (1, 2)]);
    }

    #[test]
    fn identical_embeddings_boundary() {
        let poses = vec![
            EulerPose::from_degrees(0.0, 0.0, 0.0),
            EulerPose::from_degrees(90.0, 0.0, 0.0),
        ];
        let emb = vec![vec![0.5, -0.5], vec![0.5, -0.5]];
        let mined = mine_pairs(&poses, &emb, &emb, 5f64.to_radians(), 1.0).unwrap();
        // All distances are zero: every negative (Δθ > 0) violates, while the
        // Δθ = 0 positives sit exactly on the margin and are dropped.
        assert!(mined.positives.is_empty());
        let mut negs = mined.negatives.clone();
        negs.sort_unstable();
        assert_eq!(negs, vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn miner_matches_brute_force_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let b = rng.random_range(2..=16);
            let dim = 4;
            let poses: Vec<EulerPose> = (0..b)
                .map(|_| {
                    EulerPose::from_degrees(
                        rng.random_range(0.0..360.0),
                        rng.random_range(-30.0..60.0),
                        rng.random_range(-30.0..30.0),
                    )
                })
                .collect();
            let emb = |rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
                (0..b)
                    .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
                    .collect()
            };
            let ec = emb(&mut rng);
            let er = emb(&mut rng);
            let t = 5f64.to_radians();
            let m = 1.0;
            let mined = mine_pairs(&poses, &ec, &er, t, m).unwrap();

            // Independent re-derivation.
            let mut oracle = MinedPairs::default();
            for i in 0..b {
                for j in 0..b {
                    let dt = pose_distance(&poses[i], &poses[j]);
                    let d2: f64 = ec[i]
                        .iter()
                        .zip(&er[j])
                        .map(|(a, c)| (a - c) * (a - c))
                        .sum();
                    match (dt < t, d2 > m * dt, d2 < m * dt) {
                        (true, true, _) => oracle.positives.push((i, j)),
                        (false, _, true) => oracle.negatives.push((i, j)),
                        _ => {}
                    }
                }
            }
            assert_eq!(mined, oracle);
        }
    }

    #[test]
    fn embedding_dim_mismatch_rejected() {
        let poses = vec![
            EulerPose::from_degrees(0.0, 0.0, 0.0),
            EulerPose::from_degrees(10.0, 0.0, 0.0),
        ];
        let ec = vec![vec![0.0, 0.0], vec![0.0, 0.0]];
        let er = vec![vec![0.0, 0.0], vec![0.0, 0.0, 0.0]];
        assert!(mine_pairs(&poses, &ec, &er, 0.1, 1.0).is_err());
    }

    #[test]
    fn kept_pairs_have_positive_loss_and_dropped_pairs_zero() {
        use crate::loss::{
            contrastive_pose_loss, LossConfig, PairBatch, PairItem, PairLabel,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = LossConfig::default();
        for _ in 0..50 {
            let b = rng.random_range(2..=12);
            let poses: Vec<EulerPose> = (0..b)
                .map(|_| {
                    EulerPose::from_degrees(
                        rng.random_range(0.0..360.0),
                        rng.random_range(-30.0..60.0),
                        rng.random_range(-30.0..30.0),
                    )
                })
                .collect();
            let emb = |rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
                (0..b)
                    .map(|_| (0..4).map(|_| rng.random_range(-0.6..0.6)).collect())
                    .collect()
            };
            let ec = emb(&mut rng);
            let er = emb(&mut rng);
            let mined =
                mine_pairs(&poses, &ec, &er, cfg.pose_threshold, cfg.margin).unwrap();

            let term = |i: usize, j: usize, label: PairLabel| -> f64 {
                let batch = PairBatch::new(vec![PairItem {
                    f_c: ec[i].clone(),
                    f_r: er[j].clone(),
                    delta_theta: pose_distance(&poses[i], &poses[j]),
                    label,
                }])
                .unwrap();
                contrastive_pose_loss(&batch, &cfg).unwrap()
            };

            // Every kept pair contributes strictly positive loss.
            for &(i, j) in &mined.positives {
                assert!(term(i, j, PairLabel::Positive) > 0.0);
            }
            for &(i, j) in &mined.negatives {
                assert!(term(i, j, PairLabel::Negative) > 0.0);
            }
            // Every dropped candidate contributes exactly zero.
            for i in 0..b {
                for j in 0..b {
                    let dt = pose_distance(&poses[i], &poses[j]);
                    let label = if dt < cfg.pose_threshold {
                        PairLabel::Positive
                    } else {
                        PairLabel::Negative
                    };
                    let kept = match label {
                        PairLabel::Positive => mined.positives.contains(&(i, j)),
                        PairLabel::Negative => mined.negatives.contains(&(i, j)),
                    };
                    if !kept {
                        assert_eq!(term(i, j, label), 0.0);
                    }
                }
            }
        }
    }
}
