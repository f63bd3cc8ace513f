//! Contrastive losses over (camera, rendering) embedding pairs.
//!
//! The central objective is the dynamic-margin contrastive loss
//!
//! ```text
//! L = 1/(2N) Σ [ positives: max(0, ‖f_c − f_r‖² − m·Δθ)
//!              + negatives: max(0, m·Δθ − ‖f_c − f_r‖²) ]
//! ```
//!
//! where Δθ is the geodesic pose distance of the pair, so the margin grows
//! with pose distance and embedding distance is trained to track it. A
//! fixed-margin variant and a dynamic-margin triplet variant are provided
//! for ablations. All gradients are exact subgradients of the hinge, with
//! the zero branch at the kink.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Which training objective to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossVariant {
    ContrastivePose,
    FixedContrastive,
    TripletDynamic,
}

impl std::str::FromStr for LossVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "contrastivepose" | "contrastive-pose" | "dynamic" => Ok(Self::ContrastivePose),
            "fixedcontrastive" | "fixed-contrastive" | "fixed" => Ok(Self::FixedContrastive),
            "tripletdynamic" | "triplet-dynamic" | "triplet" => Ok(Self::TripletDynamic),
            other => Err(Error::InvalidConfig(format!(
                "unknown loss variant `{other}`"
            ))),
        }
    }
}

impl std::fmt::Display for LossVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::ContrastivePose => "ContrastivePose",
            Self::FixedContrastive => "FixedContrastive",
            Self::TripletDynamic => "TripletDynamic",
        })
    }
}

/// Loss hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub margin: f64,
    /// Positive/negative pose threshold, radians.
    pub pose_threshold: f64,
    pub variant: LossVariant,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            margin: 1.0,
            pose_threshold: 5f64.to_radians(),
            variant: LossVariant::ContrastivePose,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.margin <= 0.0 {
            return Err(Error::InvalidConfig("margin must be > 0".into()));
        }
        if self.pose_threshold <= 0.0 {
            return Err(Error::InvalidConfig("pose threshold must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PairLabel {
    Positive,
    Negative,
}

/// One mined pair: camera embedding, rendering embedding, their pose
/// distance, and the mined label.
#[derive(Debug, Clone, PartialEq)]
pub struct PairItem {
    pub f_c: Vec<f64>,
    pub f_r: Vec<f64>,
    pub delta_theta: f64,
    pub label: PairLabel,
}

/// A batch of pairs with a consistent embedding dimension.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PairBatch {
    pub pairs: Vec<PairItem>,
}

impl PairBatch {
    pub fn new(pairs: Vec<PairItem>) -> Result<Self> {
        if let Some(first) = pairs.first() {
            let dim = first.f_c.len();
            for p in &pairs {
                if p.f_c.len() != dim || p.f_r.len() != dim {
                    return Err(Error::DimMismatch {
                        expected: dim,
                        got: p.f_c.len().max(p.f_r.len()),
                    });
                }
                if !(0.0..=std::f64::consts::PI + 1e-9).contains(&p.delta_theta) {
                    return Err(Error::InvalidConfig(format!(
                        "delta_theta out of [0, π]: {}",
                        p.delta_theta
                    )));
                }
            }
        }
        Ok(Self { pairs })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Per-pair gradients with respect to (`f_c`, `f_r`), in batch order.
pub type PairGrads = Vec<(Vec<f64>, Vec<f64>)>;

/// Per-triplet gradients with respect to (anchor, positive, negative).
pub type TripletGrads = Vec<(Vec<f64>, Vec<f64>, Vec<f64>)>;

/// Contrastive Pose Loss with dynamic margin `m·Δθ`.
pub fn contrastive_pose_loss(batch: &PairBatch, cfg: &LossConfig) -> Result<f64> {
    cfg.validate()?;
    if batch.is_empty() {
        return Err(Error::EmptyInput("loss batch"));
    }
    let n = batch.len() as f64;
    let mut total = 0.0;
    for p in &batch.pairs {
        let d2 = squared_distance(&p.f_c, &p.f_r);
        let bound = cfg.margin * p.delta_theta;
        total += match p.label {
            PairLabel::Positive => (d2 - bound).max(0.0),
            PairLabel::Negative => (bound - d2).max(0.0),
        };
    }
    Ok(total / (2.0 * n))
}

/// Exact subgradient of [`contrastive_pose_loss`] with respect to every
/// `f_c` and `f_r`, in batch order. Inactive hinge terms (including the
/// kink itself) contribute zero.
pub fn contrastive_pose_grad(batch: &PairBatch, cfg: &LossConfig) -> Result<PairGrads> {
    cfg.validate()?;
    if batch.is_empty() {
        return Err(Error::EmptyInput("loss batch"));
    }
    let n = batch.len() as f64;
    let mut grads = Vec::with_capacity(batch.len());
    for p in &batch.pairs {
        let d2 = squared_distance(&p.f_c, &p.f_r);
        let bound = cfg.margin * p.delta_theta;
        let scale = match p.label {
            PairLabel::Positive if d2 - bound > 0.0 => 1.0 / n,
            PairLabel::Negative if bound - d2 > 0.0 => -1.0 / n,
            _ => 0.0,
        };
        let gc: Vec<f64> = p
            .f_c
            .iter()
            .zip(&p.f_r)
            .map(|(c, r)| scale * (c - r))
            .collect();
        let gr: Vec<f64> = gc.iter().map(|g| -g).collect();
        grads.push((gc, gr));
    }
    Ok(grads)
}

/// Contrastive loss without the dynamic margin: the per-pair bound `m·Δθ`
/// collapses to the constant `m`, so positives are only pulled until
/// `d² ≤ m` and negatives pushed until `d² ≥ m`. This is the "without
/// dynamic margin" ablation; with no pose-proportional target the embedding
/// keeps no fine-grained pose ordering.
pub fn fixed_contrastive_loss(batch: &PairBatch, cfg: &LossConfig) -> Result<f64> {
    cfg.validate()?;
    if batch.is_empty() {
        return Err(Error::EmptyInput("loss batch"));
    }
    let n = batch.len() as f64;
    let mut total = 0.0;
    for p in &batch.pairs {
        let d2 = squared_distance(&p.f_c, &p.f_r);
        total += match p.label {
            PairLabel::Positive => (d2 - cfg.margin).max(0.0),
            PairLabel::Negative => (cfg.margin - d2).max(0.0),
        };
    }
    Ok(total / (2.0 * n))
}

/// Subgradient of [`fixed_contrastive_loss`].
pub fn fixed_contrastive_grad(batch: &PairBatch, cfg: &LossConfig) -> Result<PairGrads> {
    cfg.validate()?;
    if batch.is_empty() {
        return Err(Error::EmptyInput("loss batch"));
    }
    let n = batch.len() as f64;
    let mut grads = Vec::with_capacity(batch.len());
    for p in &batch.pairs {
        let d2 = squared_distance(&p.f_c, &p.f_r);
        let scale = match p.label {
            PairLabel::Positive if d2 - cfg.margin > 0.0 => 1.0 / n,
            PairLabel::Negative if cfg.margin - d2 > 0.0 => -1.0 / n,
            _ => 0.0,
        };
        let gc: Vec<f64> = p
            .f_c
            .iter()
            .zip(&p.f_r)
            .map(|(c, r)| scale * (c - r))
            .collect();
        let gr: Vec<f64> = gc.iter().map(|g| -g).collect();
        grads.push((gc, gr));
    }
    Ok(grads)
}

/// One triplet for the dynamic-margin triplet ablation: an anchor (camera),
/// a positive rendering, a negative rendering, and the anchor→negative pose
/// distance that sets the margin.
#[derive(Debug, Clone, PartialEq)]
pub struct Triplet {
    pub anchor: Vec<f64>,
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
    pub delta_theta_neg: f64,
}

/// Triplet loss with dynamic margin: mean of
/// `max(0, d²(a, p) − d²(a, n) + m·Δθ(a, n))` over triplets.
pub fn triplet_dynamic_loss(triplets: &[Triplet], cfg: &LossConfig) -> Result<f64> {
    cfg.validate()?;
    if triplets.is_empty() {
        return Err(Error::EmptyInput("triplet batch"));
    }
    let dim = triplets[0].anchor.len();
    let mut total = 0.0;
    for t in triplets {
        if t.positive.len() != dim || t.negative.len() != dim || t.anchor.len() != dim {
            return Err(Error::DimMismatch {
                expected: dim,
                got: t.positive.len().max(t.negative.len()),
            });
        }
        let dp = squared_distance(&t.anchor, &t.positive);
        let dn = squared_distance(&t.anchor, &t.negative);
        total += (dp - dn + cfg.margin * t.delta_theta_neg).max(0.0);
    }
    Ok(total / triplets.len() as f64)
}

/// Subgradient of [`triplet_dynamic_loss`] with respect to each anchor,
/// positive and negative embedding.
pub fn triplet_dynamic_grad(triplets: &[Triplet], cfg: &LossConfig) -> Result<TripletGrads> {
    cfg.validate()?;
    if triplets.is_empty() {
        return Err(Error::EmptyInput("triplet batch"));
    }
    let n = triplets.len() as f64;
    let mut grads = Vec::with_capacity(triplets.len());
    for t in triplets {
        let dp = squared_distance(&t.anchor, &t.positive);
        let dn = squared_distance(&t.anchor, &t.negative);
        let active = dp - dn + cfg.margin * t.delta_theta_neg > 0.0;
        let s = if active { 2.0 / n } else { 0.0 };
        let ga: Vec<f64> = t
            .anchor
            .iter()
            .zip(t.positive.iter().zip(&t.negative))
            .map(|(a, (p, ng))| s * ((a - p) - (a - ng)))
            .collect();
        let gp: Vec<f64> = t
            .anchor
            .iter()
            .zip(&t.positive)
            .map(|(a, p)| s * (p - a))
            .collect();
        let gn: Vec<f64> = t
            .anchor
            .iter()
            .zip(&t.negative)
            .map(|(a, ng)| s * (a - ng))
            .collect();
        grads.push((ga, gp, gn));
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pair(f_c: Vec<f64>, f_r: Vec<f64>, dt: f64, label: PairLabel) -> PairItem {
        PairItem {
            f_c,
            f_r,
            delta_theta: dt,
            label,
        }
    }

    fn cfg() -> LossConfig {
        LossConfig::default()
    }

    #[test]
    fn hinge_boundary_is_zero() {
        // Positive with d² = m·Δθ exactly.
        let b = PairBatch::new(vec![pair(
            vec![1.0, 0.0],
            vec![0.0, 0.0],
            1.0,
            PairLabel::Positive,
        )])
        .unwrap();
        assert_eq!(contrastive_pose_loss(&b, &cfg()).unwrap(), 0.0);
    }

    #[test]
    fn perfect_alignment_is_zero() {
        let b = PairBatch::new(vec![pair(
            vec![0.3, -0.7],
            vec![0.3, -0.7],
            0.0,
            PairLabel::Positive,
        )])
        .unwrap();
        assert_eq!(contrastive_pose_loss(&b, &cfg()).unwrap(), 0.0);
    }

    #[test]
    fn single_negative_at_zero_distance() {
        let b = PairBatch::new(vec![pair(
            vec![0.0, 0.0],
            vec![0.0, 0.0],
            1.0,
            PairLabel::Negative,
        )])
        .unwrap();
        assert_eq!(contrastive_pose_loss(&b, &cfg()).unwrap(), 0.5);
    }

    #[test]
    fn two_pair_hand_arithmetic() {
        // Positive d² = 2 vs bound 1, negative d² = 0 vs bound 1:
        // (1/4)·(1 + 1) = 0.5.
        let b = PairBatch::new(vec![
            pair(
                vec![2f64.sqrt(), 0.0],
                vec![0.0, 0.0],
                1.0,
                PairLabel::Positive,
            ),
            pair(vec![0.0, 0.0], vec![0.0, 0.0], 1.0, PairLabel::Negative),
        ])
        .unwrap();
        assert!((contrastive_pose_loss(&b, &cfg()).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn gradient_examples() {
        // Everything inactive ⇒ zero gradient.
        let b = PairBatch::new(vec![pair(
            vec![0.1, 0.0],
            vec![0.0, 0.0],
            1.0,
            PairLabel::Positive,
        )])
        .unwrap();
        let g = contrastive_pose_grad(&b, &cfg()).unwrap();
        assert_eq!(g[0].0, vec![0.0, 0.0]);

        // Single active positive: ∂L/∂f_c = (1/N)(f_c − f_r).
        let b = PairBatch::new(vec![pair(
            vec![2.0, 0.0],
            vec![0.0, 0.0],
            1.0,
            PairLabel::Positive,
        )])
        .unwrap();
        let g = contrastive_pose_grad(&b, &cfg()).unwrap();
        assert_eq!(g[0].0, vec![2.0, 0.0]);
        assert_eq!(g[0].1, vec![-2.0, 0.0]);
    }

    #[test]
    fn fixed_contrastive_examples() {
        let c = cfg();
        let b = PairBatch::new(vec![pair(
            vec![0.5, 0.5],
            vec![0.5, 0.5],
            0.0,
            PairLabel::Positive,
        )])
        .unwrap();
        assert_eq!(fixed_contrastive_loss(&b, &c).unwrap(), 0.0);

        let b = PairBatch::new(vec![pair(
            vec![1.0, 0.0],
            vec![0.0, 0.0],
            2.0,
            PairLabel::Negative,
        )])
        .unwrap();
        // d² = 1 ≥ m ⇒ push term zero.
        assert_eq!(fixed_contrastive_loss(&b, &c).unwrap(), 0.0);

        let b = PairBatch::new(vec![pair(
            vec![0.0, 0.0],
            vec![0.0, 0.0],
            2.0,
            PairLabel::Negative,
        )])
        .unwrap();
        assert_eq!(fixed_contrastive_loss(&b, &c).unwrap(), 0.5);
    }

    #[test]
    fn triplet_examples() {
        let c = cfg();
        let t = Triplet {
            anchor: vec![0.0, 0.0],
            positive: vec![0.0, 0.0],
            negative: vec![100.0, 0.0],
            delta_theta_neg: 1.0,
        };
        assert_eq!(triplet_dynamic_loss(&[t], &c).unwrap(), 0.0);

        let t = Triplet {
            anchor: vec![0.0, 0.0],
            positive: vec![1.0, 0.0],
            negative: vec![0.0, 1.0],
            delta_theta_neg: 1.0,
        };
        // d(a,p) = d(a,n) ⇒ hinge value m·Δθ = 1.
        assert_eq!(triplet_dynamic_loss(&[t], &c).unwrap(), 1.0);
    }

    #[test]
    fn margin_scaling_identity() {
        // loss(m = 2, Δθ) = loss(m = 1, 2·Δθ) for identical embeddings.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for k in 0..50 {
            let dim = 3;
            let dt = rng.random_range(0.0..1.5);
            let f_c: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let f_r: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let label = if k % 2 == 0 {
                PairLabel::Positive
            } else {
                PairLabel::Negative
            };
            let b1 = PairBatch::new(vec![pair(f_c.clone(), f_r.clone(), dt, label)]).unwrap();
            let b2 = PairBatch::new(vec![pair(f_c, f_r, dt * 2.0, label)]).unwrap();
            let m2 = LossConfig {
                margin: 2.0,
                ..cfg()
            };
            let l1 = contrastive_pose_loss(&b1, &m2).unwrap();
            let l2 = contrastive_pose_loss(&b2, &cfg()).unwrap();
            assert!((l1 - l2).abs() < 1e-12);
        }
    }

    #[test]
    fn permutation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pairs: Vec<PairItem> = (0..16)
            .map(|i| {
                pair(
                    (0..4).map(|_| rng.random_range(-1.0..1.0)).collect(),
                    (0..4).map(|_| rng.random_range(-1.0..1.0)).collect(),
                    rng.random_range(0.0..3.0),
                    if i % 2 == 0 {
                        PairLabel::Positive
                    } else {
                        PairLabel::Negative
                    },
                )
            })
            .collect();
        let mut shuffled = pairs.clone();
        shuffled.reverse();
        shuffled.swap(0, 5);
        let l1 = contrastive_pose_loss(&PairBatch::new(pairs).unwrap(), &cfg()).unwrap();
        let l2 = contrastive_pose_loss(&PairBatch::new(shuffled).unwrap(), &cfg()).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
    }

    #[test]
    fn empty_batch_is_an_error() {
        let b = PairBatch::default();
        assert!(contrastive_pose_loss(&b, &cfg()).is_err());
        assert!(fixed_contrastive_loss(&b, &cfg()).is_err());
        assert!(triplet_dynamic_loss(&[], &cfg()).is_err());
    }

    // Central finite differences of a scalar loss with respect to one flat
    // parameter vector.
    fn finite_diff<F>(f: F, x: &[f64], h: f64) -> Vec<f64>
    where
        F: Fn(&[f64]) -> f64,
    {
        let mut grad = vec![0.0; x.len()];
        let mut xp = x.to_vec();
        for i in 0..x.len() {
            xp[i] = x[i] + h;
            let up = f(&xp);
            xp[i] = x[i] - h;
            let down = f(&xp);
            xp[i] = x[i];
            grad[i] = (up - down) / (2.0 * h);
        }
        grad
    }

    fn assert_close(analytic: &[f64], numeric: &[f64]) {
        for (a, b) in analytic.iter().zip(numeric) {
            let denom = a.abs().max(b.abs()).max(1.0);
            assert!((a - b).abs() / denom < 1e-4, "analytic {a} vs fd {b}");
        }
    }

    fn random_batch(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> PairBatch {
        let pairs = (0..n)
            .map(|_| {
                let mut p = pair(
                    (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
                    (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
                    rng.random_range(0.0..3.0),
                    if rng.random::<bool>() {
                        PairLabel::Positive
                    } else {
                        PairLabel::Negative
                    },
                );
                // Nudge away from the hinge kink so finite differences are
                // well posed.
                let d2 = squared_distance(&p.f_c, &p.f_r);
                if (d2 - p.delta_theta).abs() < 1e-2 {
                    p.delta_theta = (p.delta_theta + 0.05).min(3.1);
                }
                p
            })
            .collect();
        PairBatch::new(pairs).unwrap()
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = cfg();
        for _ in 0..100 {
            let n = rng.random_range(1..=8);
            let dim = 4;
            let batch = random_batch(&mut rng, n, dim);

            for (which, loss_fn, grad_fn) in [
                (
                    0usize,
                    contrastive_pose_loss as fn(&PairBatch, &LossConfig) -> Result<f64>,
                    contrastive_pose_grad as fn(&PairBatch, &LossConfig) -> Result<PairGrads>,
                ),
                (1, fixed_contrastive_loss, fixed_contrastive_grad),
            ] {
                let _ = which;
                let analytic = grad_fn(&batch, &c).unwrap();
                for (k, pair_grad) in analytic.iter().enumerate() {
                    let f = |x: &[f64]| {
                        let mut b = batch.clone();
                        b.pairs[k].f_c = x.to_vec();
                        loss_fn(&b, &c).unwrap()
                    };
                    let fd = finite_diff(f, &batch.pairs[k].f_c, 1e-5);
                    assert_close(&pair_grad.0, &fd);

                    let f = |x: &[f64]| {
                        let mut b = batch.clone();
                        b.pairs[k].f_r = x.to_vec();
                        loss_fn(&b, &c).unwrap()
                    };
                    let fd = finite_diff(f, &batch.pairs[k].f_r, 1e-5);
                    assert_close(&pair_grad.1, &fd);
                }
            }
        }
    }

    #[test]
    fn triplet_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = cfg();
        for _ in 0..50 {
            let dim = 4;
            let triplets: Vec<Triplet> = (0..rng.random_range(1..=6))
                .map(|_| Triplet {
                    anchor: (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
                    positive: (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
                    negative: (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
                    delta_theta_neg: rng.random_range(0.2..3.0),
                })
                .collect();
            let analytic = triplet_dynamic_grad(&triplets, &c).unwrap();
            for k in 0..triplets.len() {
                for field in 0..3 {
                    let f = |x: &[f64]| {
                        let mut t = triplets.clone();
                        match field {
                            0 => t[k].anchor = x.to_vec(),
                            1 => t[k].positive = x.to_vec(),
                            _ => t[k].negative = x.to_vec(),
                        }
                        triplet_dynamic_loss(&t, &c).unwrap()
                    };
                    let base = match field {
                        0 => &triplets[k].anchor,
                        1 => &triplets[k].positive,
                        _ => &triplets[k].negative,
                    };
                    let fd = finite_diff(f, base, 1e-5);
                    let a = match field {
                        0 => &analytic[k].0,
                        1 => &analytic[k].1,
                        _ => &analytic[k].2,
                    };
                    assert_close(a, &fd);
                }
            }
        }
    }

    #[test]
    fn nonnegative_on_random_batches() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let n = rng.random_range(1..=8);
            let batch = random_batch(&mut rng, n, 3);
            assert!(contrastive_pose_loss(&batch, &cfg()).unwrap() >= 0.0);
            assert!(fixed_contrastive_loss(&batch, &cfg()).unwrap() >= 0.0);
        }
    }
}
