//! Training-time robustness augmentations.
//!
//! Two geometric augmentations are modelled:
//!
//! * bounding-box noise with a lower IoU boundary — each corner of the box
//!   is displaced independently and uniformly within ±n, where n is derived
//!   in closed form from `β = 1 − IoU_min`;
//! * synthetic occluders — rectangles in normalized coordinates placed over
//!   the (abstract) image, each corrupting the camera-feature dimensions
//!   whose footprint cell it covers.
//!
//! Both take an explicit random stream and own no state.

use crate::dataset::{BBox, OcclusionLevel, Sample};
use crate::error::{Error, Result};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Bounding-box noise scale `β = 1 − IoU_min ∈ [0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBoxNoiseConfig {
    pub beta_train: f64,
}

impl BBoxNoiseConfig {
    pub fn new(beta_train: f64) -> Result<Self> {
        validate_beta(beta_train)?;
        Ok(Self { beta_train })
    }
}

/// Occlusion augmentation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcclusionConfig {
    /// Occlusion scale multiplying a uniform `[0, 1]` draw.
    pub s_occ: f64,
    pub min_occluders: usize,
    pub max_occluders: usize,
    /// Occluders of this category are filtered out of the pool.
    pub excluded_category: String,
}

impl OcclusionConfig {
    pub fn new(s_occ: f64, excluded_category: impl Into<String>) -> Result<Self> {
        if !(0.0..=1.0).contains(&s_occ) {
            return Err(Error::InvalidConfig(format!(
                "s_occ must be in [0, 1], got {s_occ}"
            )));
        }
        Ok(Self {
            s_occ,
            min_occluders: 1,
            max_occluders: 8,
            excluded_category: excluded_category.into(),
        })
    }

    fn validate(&self) -> Result<()> {
        if self.min_occluders < 1
            || self.min_occluders > self.max_occluders
            || self.max_occluders > 8
        {
            return Err(Error::InvalidConfig(format!(
                "occluder count bounds must satisfy 1 ≤ min ≤ max ≤ 8, got {}..{}",
                self.min_occluders, self.max_occluders
            )));
        }
        if !(0.0..=1.0).contains(&self.s_occ) {
            return Err(Error::InvalidConfig(format!(
                "s_occ must be in [0, 1], got {}",
                self.s_occ
            )));
        }
        Ok(())
    }
}

/// Axis-aligned rectangle in normalized `[0, 1]²` coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskRect {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl MaskRect {
    pub fn area(&self) -> f64 {
        self.w * self.h
    }
}

/// An occluder template: its category, base mask, and the feature
/// perturbation it applies to the dimensions under its footprint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Occluder {
    pub category: String,
    pub mask: MaskRect,
    pub fill: Vec<f64>,
}

/// The 20 occluder source categories (PASCAL VOC classes).
pub const OCCLUDER_CATEGORIES: [&str; 20] = [
    "aeroplane",
    "bicycle",
    "bird",
    "boat",
    "bottle",
    "bus",
    "car",
    "cat",
    "chair",
    "cow",
    "diningtable",
    "dog",
    "horse",
    "motorbike",
    "person",
    "pottedplant",
    "sheep",
    "sofa",
    "train",
    "tvmonitor",
];

/// Deterministic default occluder pool: two templates per category with
/// varied base sizes and fixed fill patterns.
pub fn default_occluder_pool(feat_dim: usize) -> Vec<Occluder> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0cc1);
    let mut pool = Vec::with_capacity(OCCLUDER_CATEGORIES.len() * 2);
    for (c, category) in OCCLUDER_CATEGORIES.iter().enumerate() {
        for t in 0..2usize {
            let w = rng.random_range(0.4..1.0);
            let h = rng.random_range(0.4..1.0);
            let amplitude = rng.random_range(0.6..1.2);
            let phase = (c * 2 + t) as f64;
            let fill: Vec<f64> = (0..feat_dim)
                .map(|d| amplitude * (0.57 * d as f64 + 1.3 * phase).sin())
                .collect();
            pool.push(Occluder {
                category: (*category).to_owned(),
                mask: MaskRect {
                    x: 0.0,
                    y: 0.0,
                    w,
                    h,
                },
                fill,
            });
        }
    }
    pool
}

fn validate_beta(beta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::InvalidConfig(format!(
            "beta must be in [0, 1], got {beta}"
        )));
    }
    Ok(())
}

/// Maximum corner deviation `n` such that a box perturbed by at most ±n per
/// corner keeps `IoU ≥ 1 − beta`:
///
/// ```text
/// n = (h + w − √((h + w)² − 4·w·h·β)) / 4
/// ```
///
/// The discriminant is nonnegative for every β ≤ 1 since (h+w)² ≥ 4wh.
pub fn max_corner_deviation(w: f64, h: f64, beta: f64) -> Result<f64> {
    if w <= 0.0 || h <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "box extent must be positive, got w={w}, h={h}"
        )));
    }
    validate_beta(beta)?;
    let s = w + h;
    let disc = (s * s - 4.0 * w * h * beta).max(0.0);
    Ok((s - disc.sqrt()) / 4.0)
}

/// Intersection over union of two boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let ix = (a.x + a.w).min(b.x + b.w) - a.x.max(b.x);
    let iy = (a.y + a.h).min(b.y + b.h) - a.y.max(b.y);
    let inter = if ix > 0.0 && iy > 0.0 { ix * iy } else { 0.0 };
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Displace each corner of `b` independently and uniformly within ±n in x
/// and y, where `n = max_corner_deviation(w, h, beta)`. The result keeps
/// `IoU(original, perturbed) ≥ (1 − beta) − 1e-9`; degenerate extents are
/// clamped to a sliver so the box invariant holds.
pub fn perturb_bbox<R: Rng + ?Sized>(b: &BBox, beta: f64, rng: &mut R) -> Result<BBox> {
    let n = max_corner_deviation(b.w, b.h, beta)?;
    if n == 0.0 {
        return Ok(*b);
    }
    let left = b.x + rng.random_range(-n..=n);
    let top = b.y + rng.random_range(-n..=n);
    let right = b.x + b.w + rng.random_range(-n..=n);
    let bottom = b.y + b.h + rng.random_range(-n..=n);
    let w = (right - left).max(1e-9);
    let h = (bottom - top).max(1e-9);
    Ok(BBox {
        x: left,
        y: top,
        w,
        h,
    })
}

/// Resize factor for a random occluder: `f_x = f_y = s_occ · x` with
/// `x ~ U[0, 1]`.
pub fn occluder_resize_factor<R: Rng + ?Sized>(s_occ: f64, rng: &mut R) -> (f64, f64) {
    let x: f64 = rng.random();
    let f = s_occ * x;
    (f, f)
}

/// Exact area of the union of axis-aligned rectangles, by x-coordinate
/// compression and per-slab y-interval merging.
pub fn union_area(rects: &[MaskRect]) -> f64 {
    let live: Vec<&MaskRect> = rects.iter().filter(|r| r.w > 0.0 && r.h > 0.0).collect();
    if live.is_empty() {
        return 0.0;
    }
    let mut xs: Vec<f64> = live.iter().flat_map(|r| [r.x, r.x + r.w]).collect();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    xs.dedup();

    let mut total = 0.0;
    for pair in xs.windows(2) {
        let (x0, x1) = (pair[0], pair[1]);
        if x1 <= x0 {
            continue;
        }
        let mid = 0.5 * (x0 + x1);
        let mut spans: Vec<(f64, f64)> = live
            .iter()
            .filter(|r| r.x <= mid && mid < r.x + r.w)
            .map(|r| (r.y, r.y + r.h))
            .collect();
        spans.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut covered = 0.0;
        let mut cur: Option<(f64, f64)> = None;
        for (lo, hi) in spans {
            match cur {
                None => cur = Some((lo, hi)),
                Some((clo, chi)) => {
                    if lo <= chi {
                        cur = Some((clo, chi.max(hi)));
                    } else {
                        covered += chi - clo;
                        cur = Some((lo, hi));
                    }
                }
            }
        }
        if let Some((clo, chi)) = cur {
            covered += chi - clo;
        }
        total += covered * (x1 - x0);
    }
    total
}

/// Ratio → occlusion level. The bins are 0 % → L0, 20–40 % → L1, 40–60 % →
/// L2, 60–80 % → L3; ratios between bins round to the nearest edge
/// downward, ratios above 80 % stay L3.
pub fn level_for_ratio(ratio: f64) -> OcclusionLevel {
    if ratio < 0.2 {
        OcclusionLevel::L0
    } else if ratio < 0.4 {
        OcclusionLevel::L1
    } else if ratio < 0.6 {
        OcclusionLevel::L2
    } else {
        OcclusionLevel::L3
    }
}

/// Target coverage range for synthesizing a test set at a given level.
pub fn level_ratio_range(level: OcclusionLevel) -> (f64, f64) {
    match level {
        OcclusionLevel::L0 => (0.0, 0.0),
        OcclusionLevel::L1 => (0.2, 0.4),
        OcclusionLevel::L2 => (0.4, 0.6),
        OcclusionLevel::L3 => (0.6, 0.8),
    }
}

/// Unit-square footprint cell centre of a feature dimension. Dimensions are
/// laid out on a ⌈√D⌉ × ⌈√D⌉ grid, row-major.
pub fn footprint_point(dim_index: usize, feat_dim: usize) -> (f64, f64) {
    let g = (feat_dim as f64).sqrt().ceil() as usize;
    let col = dim_index % g;
    let row = dim_index / g;
    ((col as f64 + 0.5) / g as f64, (row as f64 + 0.5) / g as f64)
}

fn rect_contains(r: &MaskRect, p: (f64, f64)) -> bool {
    p.0 >= r.x && p.0 < r.x + r.w && p.1 >= r.y && p.1 < r.y + r.h
}

/// Output of [`apply_occlusions`].
#[derive(Debug, Clone)]
pub struct AppliedOcclusions {
    pub sample: Sample,
    pub occlusion_ratio: f64,
    /// Categories of the occluders that were placed.
    pub categories: Vec<String>,
}

/// Perturb camera features in place with `min..=max` randomly selected
/// occluders, each resized by [`occluder_resize_factor`] and placed
/// uniformly inside the unit box. Feature dimensions whose footprint cell
/// falls under an occluder receive that occluder's fill perturbation.
/// Returns the covered fraction of the unit box and the occluder categories
/// that were placed.
pub fn occlude_camera_features<R: Rng + ?Sized>(
    camera_feat: &mut [f64],
    cfg: &OcclusionConfig,
    pool: &[Occluder],
    rng: &mut R,
) -> Result<(f64, Vec<String>)> {
    cfg.validate()?;
    let usable: Vec<&Occluder> = pool
        .iter()
        .filter(|o| o.category != cfg.excluded_category)
        .collect();
    if usable.is_empty() {
        return Err(Error::EmptyOccluderPool(cfg.excluded_category.clone()));
    }

    let k = rng.random_range(cfg.min_occluders..=cfg.max_occluders);
    let feat_dim = camera_feat.len();
    let mut rects = Vec::with_capacity(k);
    let mut categories = Vec::with_capacity(k);

    for _ in 0..k {
        let template = usable[rng.random_range(0..usable.len())];
        let (fx, fy) = occluder_resize_factor(cfg.s_occ, rng);
        let w = (template.mask.w * fx).min(1.0);
        let h = (template.mask.h * fy).min(1.0);
        let x = if w < 1.0 {
            rng.random_range(0.0..(1.0 - w))
        } else {
            0.0
        };
        let y = if h < 1.0 {
            rng.random_range(0.0..(1.0 - h))
        } else {
            0.0
        };
        let rect = MaskRect { x, y, w, h };
        if rect.area() > 0.0 {
            for (d, feat) in camera_feat.iter_mut().enumerate() {
                if rect_contains(&rect, footprint_point(d, feat_dim)) {
                    *feat += template.fill.get(d).copied().unwrap_or(0.0);
                }
            }
        }
        categories.push(template.category.clone());
        rects.push(rect);
    }

    Ok((union_area(&rects).clamp(0.0, 1.0), categories))
}

/// Sample-level wrapper around [`occlude_camera_features`]: returns the
/// augmented sample relabelled from the covered fraction.
pub fn apply_occlusions<R: Rng + ?Sized>(
    sample: &Sample,
    cfg: &OcclusionConfig,
    pool: &[Occluder],
    rng: &mut R,
) -> Result<AppliedOcclusions> {
    let mut sample = sample.clone();
    let (ratio, categories) = occlude_camera_features(&mut sample.camera_feat, cfg, pool, rng)?;
    sample.occlusion_ratio = ratio;
    sample.occlusion_level = level_for_ratio(ratio);
    Ok(AppliedOcclusions {
        sample,
        occlusion_ratio: ratio,
        categories,
    })
}

/// Synthesize an occluded test sample at a target occlusion level by
/// placing a single occluder with coverage drawn uniformly inside the
/// level's range. Used to build the L1–L3 evaluation sets.
pub fn occlude_to_level<R: Rng + ?Sized>(
    sample: &Sample,
    level: OcclusionLevel,
    excluded_category: &str,
    pool: &[Occluder],
    rng: &mut R,
) -> Result<Sample> {
    if level == OcclusionLevel::L0 {
        return Ok(sample.clone());
    }
    let usable: Vec<&Occluder> = pool
        .iter()
        .filter(|o| o.category != excluded_category)
        .collect();
    if usable.is_empty() {
        return Err(Error::EmptyOccluderPool(excluded_category.to_owned()));
    }
    let (lo, hi) = level_ratio_range(level);
    let target = rng.random_range(lo..hi);
    let template = usable[rng.random_range(0..usable.len())];

    // Solve for a rectangle of exactly the target area at the template's
    // aspect ratio, clamping sides into the unit square.
    let aspect = template.mask.w / template.mask.h;
    let mut w = (target * aspect).sqrt();
    let mut h = target / w;
    if w > 1.0 {
        w = 1.0;
        h = target;
    }
    if h > 1.0 {
        h = 1.0;
        w = target;
    }
    let x = if w < 1.0 {
        rng.random_range(0.0..(1.0 - w))
    } else {
        0.0
    };
    let y = if h < 1.0 {
        rng.random_range(0.0..(1.0 - h))
    } else {
        0.0
    };
    let rect = MaskRect { x, y, w, h };

    let mut out = sample.clone();
    let feat_dim = out.camera_feat.len();
    for (d, feat) in out.camera_feat.iter_mut().enumerate() {
        if rect_contains(&rect, footprint_point(d, feat_dim)) {
            *feat += template.fill.get(d).copied().unwrap_or(0.0);
        }
    }
    let ratio = rect.area().clamp(0.0, 1.0);
    out.occlusion_ratio = ratio;
    out.occlusion_level = level_for_ratio(ratio);
    Ok(out)
}

/// Gain of the misalignment → feature coupling. Sized so that β = 0.5
/// query noise visibly degrades a model trained without bounding-box
/// augmentation.
const BBOX_SHIFT_GAIN: f64 = 3.0;

/// Feature-space effect of a bounding-box perturbation: the normalized edge
/// misalignment between the original and perturbed box, pushed through a
/// fixed linear map into feature space. A zero perturbation maps to a zero
/// shift.
pub fn bbox_feature_shift(original: &BBox, perturbed: &BBox, feat_dim: usize) -> Vec<f64> {
    let misalign = [
        (perturbed.x - original.x) / original.w,
        (perturbed.y - original.y) / original.h,
        ((perturbed.x + perturbed.w) - (original.x + original.w)) / original.w,
        ((perturbed.y + perturbed.h) - (original.y + original.h)) / original.h,
    ];
    (0..feat_dim)
        .map(|d| {
            BBOX_SHIFT_GAIN
                * misalign
                    .iter()
                    .enumerate()
                    .map(|(k, u)| u * ((d + 1) as f64 * 0.9 + (k + 1) as f64 * 1.7).sin())
                    .sum::<f64>()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit_sample() -> Sample {
        Sample {
            id: 0,
            category: "car".into(),
            subcategory: "sedan".into(),
            pose: crate::pose::EulerPose::new(0.0, 0.0, 0.0),
            bbox: BBox {
                x: 0.0,
                y: 0.0,
                w: 100.0,
                h: 100.0,
            },
            camera_feat: vec![0.0; 16],
            render_feat: vec![0.0; 16],
            occlusion_level: OcclusionLevel::L0,
            occlusion_ratio: 0.0,
        }
    }

    #[test]
    fn corner_deviation_examples() {
        assert_eq!(max_corner_deviation(100.0, 100.0, 0.0).unwrap(), 0.0);
        assert_eq!(max_corner_deviation(100.0, 100.0, 1.0).unwrap(), 50.0);
        let n = max_corner_deviation(100.0, 100.0, 0.25).unwrap();
        assert!((n - (200.0 - 30000f64.sqrt()) / 4.0).abs() < 1e-12);
        assert!((n - 6.698729810778069).abs() < 1e-9);
        // Inverse identity at this point.
        let recovered = (100.0 - 2.0 * n) * (100.0 - 2.0 * n) / 1e4;
        assert!((recovered - 0.75).abs() < 1e-9);
    }

    #[test]
    fn corner_deviation_inverse_identity_grid() {
        for w in (20..=400).step_by(60) {
            for h in (20..=400).step_by(60) {
                for b in 0..=10 {
                    let beta = b as f64 / 10.0;
                    let (w, h) = (w as f64, h as f64);
                    let n = max_corner_deviation(w, h, beta).unwrap();
                    assert!(n >= 0.0);
                    let iou_min = (w - 2.0 * n) * (h - 2.0 * n) / (w * h);
                    assert!(
                        (iou_min - (1.0 - beta)).abs() < 1e-9,
                        "w={w} h={h} beta={beta}"
                    );
                }
            }
        }
    }

    #[test]
    fn beta_out_of_range_rejected() {
        assert!(max_corner_deviation(10.0, 10.0, -0.1).is_err());
        assert!(max_corner_deviation(10.0, 10.0, 1.1).is_err());
        assert!(BBoxNoiseConfig::new(2.0).is_err());
    }

    #[test]
    fn perturb_identity_at_beta_zero() {
        let b = BBox {
            x: 3.0,
            y: 4.0,
            w: 50.0,
            h: 80.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(perturb_bbox(&b, 0.0, &mut rng).unwrap(), b);
    }

    #[test]
    fn perturb_respects_iou_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for &(w, h) in &[(100.0, 100.0), (240.0, 60.0), (35.0, 180.0)] {
            for &beta in &[0.1, 0.25, 0.5, 1.0] {
                let b = BBox {
                    x: 10.0,
                    y: 20.0,
                    w,
                    h,
                };
                for _ in 0..10_000 {
                    let p = perturb_bbox(&b, beta, &mut rng).unwrap();
                    assert!(p.w > 0.0 && p.h > 0.0);
                    let v = iou(&b, &p);
                    assert!(
                        v >= (1.0 - beta) - 1e-9,
                        "iou {v} < {} at w={w} h={h}",
                        1.0 - beta
                    );
                }
            }
        }
    }

    #[test]
    fn resize_factor_scales_uniform_draw() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (fx, fy) = occluder_resize_factor(0.0, &mut rng);
        assert_eq!((fx, fy), (0.0, 0.0));

        let mut sum = 0.0;
        let draws = 100_000;
        for _ in 0..draws {
            let (f, g) = occluder_resize_factor(0.5, &mut rng);
            assert_eq!(f, g);
            assert!((0.0..=0.5).contains(&f));
            sum += f;
        }
        let mean = sum / draws as f64;
        assert!((mean - 0.25).abs() < 0.005, "mean {mean}");
    }

    #[test]
    fn union_area_examples() {
        let quarter = MaskRect {
            x: 0.0,
            y: 0.0,
            w: 0.5,
            h: 0.5,
        };
        assert!((union_area(&[quarter]) - 0.25).abs() < 1e-12);

        // Two overlapping unit-half rectangles.
        let a = MaskRect {
            x: 0.0,
            y: 0.0,
            w: 0.6,
            h: 0.5,
        };
        let b = MaskRect {
            x: 0.3,
            y: 0.2,
            w: 0.5,
            h: 0.5,
        };
        // Inclusion–exclusion by hand: 0.3 + 0.25 − 0.3·0.3 = 0.46
        assert!((union_area(&[a, b]) - 0.46).abs() < 1e-12);
    }

    #[test]
    fn union_area_matches_raster_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let k = rng.random_range(1..=8);
            let rects: Vec<MaskRect> = (0..k)
                .map(|_| {
                    let w = rng.random_range(0.05..0.7);
                    let h = rng.random_range(0.05..0.7);
                    MaskRect {
                        x: rng.random_range(0.0..(1.0 - w)),
                        y: rng.random_range(0.0..(1.0 - h)),
                        w,
                        h,
                    }
                })
                .collect();
            let exact = union_area(&rects);

            const N: usize = 512;
            let mut covered = 0usize;
            for i in 0..N {
                let px = (i as f64 + 0.5) / N as f64;
                for j in 0..N {
                    let py = (j as f64 + 0.5) / N as f64;
                    if rects.iter().any(|r| rect_contains(r, (px, py))) {
                        covered += 1;
                    }
                }
            }
            let raster = covered as f64 / (N * N) as f64;
            assert!(
                (exact - raster).abs() < 0.01,
                "exact {exact} raster {raster}"
            );
        }
    }

    #[test]
    fn ratio_bins() {
        assert_eq!(level_for_ratio(0.0), OcclusionLevel::L0);
        assert_eq!(level_for_ratio(0.1), OcclusionLevel::L0);
        assert_eq!(level_for_ratio(0.25), OcclusionLevel::L1);
        assert_eq!(level_for_ratio(0.4), OcclusionLevel::L2);
        assert_eq!(level_for_ratio(0.59), OcclusionLevel::L2);
        assert_eq!(level_for_ratio(0.85), OcclusionLevel::L3);
    }

    #[test]
    fn zero_scale_occlusion_is_l0() {
        let cfg = OcclusionConfig::new(0.0, "car").unwrap();
        let pool = default_occluder_pool(16);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let out = apply_occlusions(&unit_sample(), &cfg, &pool, &mut rng).unwrap();
        assert_eq!(out.occlusion_ratio, 0.0);
        assert_eq!(out.sample.occlusion_level, OcclusionLevel::L0);
        assert_eq!(out.sample.camera_feat, vec![0.0; 16]);
    }

    #[test]
    fn exhausted_pool_is_an_error() {
        let cfg = OcclusionConfig::new(0.5, "car").unwrap();
        let pool = vec![Occluder {
            category: "car".into(),
            mask: MaskRect {
                x: 0.0,
                y: 0.0,
                w: 0.5,
                h: 0.5,
            },
            fill: vec![1.0; 16],
        }];
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        assert!(apply_occlusions(&unit_sample(), &cfg, &pool, &mut rng).is_err());
    }

    #[test]
    fn excluded_category_never_applied() {
        let cfg = OcclusionConfig::new(0.8, "person").unwrap();
        let pool = default_occluder_pool(16);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let out = apply_occlusions(&unit_sample(), &cfg, &pool, &mut rng).unwrap();
            assert!(out.categories.iter().all(|c| c != "person"));
            assert!((0.0..=1.0).contains(&out.occlusion_ratio));
            assert_eq!(out.sample.occlusion_ratio, out.occlusion_ratio);
        }
    }

    #[test]
    fn occlude_to_level_hits_target_bin() {
        let pool = default_occluder_pool(16);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for level in [OcclusionLevel::L1, OcclusionLevel::L2, OcclusionLevel::L3] {
            for _ in 0..100 {
                let s = occlude_to_level(&unit_sample(), level, "car", &pool, &mut rng).unwrap();
                assert_eq!(s.occlusion_level, level, "ratio {}", s.occlusion_ratio);
            }
        }
        let s =
            occlude_to_level(&unit_sample(), OcclusionLevel::L0, "car", &pool, &mut rng).unwrap();
        assert_eq!(s, unit_sample());
    }

    #[test]
    fn bbox_shift_zero_for_identity() {
        let b = BBox {
            x: 5.0,
            y: 5.0,
            w: 100.0,
            h: 50.0,
        };
        let shift = bbox_feature_shift(&b, &b, 16);
        assert!(shift.iter().all(|&v| v == 0.0));

        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let p = perturb_bbox(&b, 0.5, &mut rng).unwrap();
        let shift = bbox_feature_shift(&b, &p, 16);
        assert!(shift.iter().any(|&v| v != 0.0));
        assert!(shift.iter().all(|v| v.is_finite()));
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(256))]
        #[test]
        fn prop_corner_deviation_inverts_iou(
            w in 1.0f64..2000.0,
            h in 1.0f64..2000.0,
            beta in 0.0f64..=1.0,
            seed in 0u64..1000,
        ) {
            let n = max_corner_deviation(w, h, beta).unwrap();
            proptest::prop_assert!(n >= 0.0);
            let iou_min = (w - 2.0 * n) * (h - 2.0 * n) / (w * h);
            proptest::prop_assert!((iou_min - (1.0 - beta)).abs() < 1e-9);

            // Every draw honours the bound.
            let original = BBox { x: 0.0, y: 0.0, w, h };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..32 {
                let p = perturb_bbox(&original, beta, &mut rng).unwrap();
                proptest::prop_assert!(iou(&original, &p) >= (1.0 - beta) - 1e-9);
            }
        }
    }
}
