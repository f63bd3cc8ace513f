//! Deterministic synthetic stand-in for image datasets.
//!
//! Poses sampled over a viewing sphere are lifted to feature vectors through
//! fixed trigonometric maps, so the full training/retrieval pipeline can be
//! exercised and verified without images:
//!
//! * `render_feat = H(pose)` exactly — renderings are noiseless and carry no
//!   subcategory information, mirroring CAD renderings;
//! * `camera_feat = H(pose) + offset(subcategory) + N(0, σ)` — camera views
//!   of the same pose differ by subcategory appearance and sensor noise.
//!
//! `H` is injective over the viewing sphere (each angle appears through its
//! first harmonic sin/cos pair), so pose is recoverable in principle and the
//! retrieval task is well posed.

use crate::error::{Error, Result};
use crate::pose::EulerPose;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

/// Default feature dimensionality of the synthetic inputs.
pub const DEFAULT_FEAT_DIM: usize = 16;

/// Occlusion level of a sample: L0 is unoccluded, L1–L3 cover 20–40 %,
/// 40–60 % and 60–80 % of the object.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum OcclusionLevel {
    L0,
    L1,
    L2,
    L3,
}

impl OcclusionLevel {
    pub const ALL: [OcclusionLevel; 4] = [Self::L0, Self::L1, Self::L2, Self::L3];

    pub fn name(&self) -> &'static str {
        match self {
            Self::L0 => "L0",
            Self::L1 => "L1",
            Self::L2 => "L2",
            Self::L3 => "L3",
        }
    }
}

impl std::fmt::Display for OcclusionLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for OcclusionLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "L0" => Ok(Self::L0),
            "L1" => Ok(Self::L1),
            "L2" => Ok(Self::L2),
            "L3" => Ok(Self::L3),
            other => Err(Error::InvalidConfig(format!(
                "unknown occlusion level `{other}` (expected L0..L3)"
            ))),
        }
    }
}

/// Axis-aligned bounding box in pixels, top-left origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        if w <= 0.0 || h <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "bounding box must have positive extent, got w={w}, h={h}"
            )));
        }
        Ok(Self { x, y, w, h })
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }
}

/// Closed angle intervals (degrees) plus grid steps for the discretized
/// reference sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewingSphere {
    pub azimuth_range: [f64; 2],
    pub elevation_range: [f64; 2],
    pub inplane_range: [f64; 2],
    pub azimuth_step: f64,
    pub elevation_step: f64,
    pub inplane_step: f64,
}

impl Default for ViewingSphere {
    /// Azimuth 0°:360°, elevation −30°:60°, in-plane −30°:30°, 5° steps.
    fn default() -> Self {
        Self {
            azimuth_range: [0.0, 360.0],
            elevation_range: [-30.0, 60.0],
            inplane_range: [-30.0, 30.0],
            azimuth_step: 5.0,
            elevation_step: 5.0,
            inplane_step: 5.0,
        }
    }
}

impl ViewingSphere {
    pub fn validate(&self) -> Result<()> {
        for (name, r) in [
            ("azimuth", &self.azimuth_range),
            ("elevation", &self.elevation_range),
            ("inplane", &self.inplane_range),
        ] {
            if r[1] < r[0] {
                return Err(Error::InvalidConfig(format!(
                    "{name} range is empty: [{}, {}]",
                    r[0], r[1]
                )));
            }
        }
        for (name, range, step) in [
            ("azimuth", &self.azimuth_range, self.azimuth_step),
            ("elevation", &self.elevation_range, self.elevation_step),
            ("inplane", &self.inplane_range, self.inplane_step),
        ] {
            if step <= 0.0 {
                return Err(Error::InvalidConfig(format!("{name} step must be > 0")));
            }
            let span = range[1] - range[0];
            let ratio = span / step;
            if (ratio - ratio.round()).abs() > 1e-9 {
                return Err(Error::InvalidConfig(format!(
                    "{name} step {step} does not divide range span {span}"
                )));
            }
        }
        Ok(())
    }

    /// Sample a pose uniformly inside the ranges. Azimuth is periodic, so
    /// its right endpoint is excluded.
    pub fn sample_pose<R: Rng + ?Sized>(&self, rng: &mut R) -> EulerPose {
        let az = sample_interval(rng, self.azimuth_range);
        let el = sample_interval(rng, self.elevation_range);
        let ip = sample_interval(rng, self.inplane_range);
        EulerPose::from_degrees(az, el, ip)
    }

    /// Number of grid points per axis at the sphere's steps. A full 360°
    /// azimuth span is treated as periodic (right endpoint excluded); every
    /// other axis includes both endpoints.
    pub fn grid_counts(&self) -> Result<(usize, usize, usize)> {
        self.validate()?;
        let count = |range: &[f64; 2], step: f64, periodic: bool| -> usize {
            let span = range[1] - range[0];
            let steps = (span / step).round() as usize;
            if periodic && (span - 360.0).abs() < 1e-9 {
                steps
            } else {
                steps + 1
            }
        };
        Ok((
            count(&self.azimuth_range, self.azimuth_step, true),
            count(&self.elevation_range, self.elevation_step, false),
            count(&self.inplane_range, self.inplane_step, false),
        ))
    }

    /// Enumerate the pose grid in azimuth-major order.
    pub fn grid_poses(&self) -> Result<Vec<EulerPose>> {
        let (na, ne, ni) = self.grid_counts()?;
        let mut out = Vec::with_capacity(na * ne * ni);
        for a in 0..na {
            let az = self.azimuth_range[0] + a as f64 * self.azimuth_step;
            for e in 0..ne {
                let el = self.elevation_range[0] + e as f64 * self.elevation_step;
                for i in 0..ni {
                    let ip = self.inplane_range[0] + i as f64 * self.inplane_step;
                    out.push(EulerPose::from_degrees(az, el, ip));
                }
            }
        }
        Ok(out)
    }
}

fn sample_interval<R: Rng + ?Sized>(rng: &mut R, range: [f64; 2]) -> f64 {
    if range[0] == range[1] {
        range[0]
    } else {
        rng.random_range(range[0]..range[1])
    }
}

/// Which reference set to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReferenceSetKind {
    /// One rendering per training sample, at that sample's pose.
    TrainDb,
    /// Full viewing-sphere grid at 5°/5°/5° steps.
    CoarseDb,
    /// Full viewing-sphere grid at 1°/5°/5° steps.
    FineDb,
}

/// Reference-set design. Grid sets produce `renderings_per_pose` entries per
/// grid pose (one per CAD model at full scale; the synthetic renderer makes
/// them identical, which exercises duplicate handling in the index).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceSetDesign {
    pub kind: ReferenceSetKind,
    pub renderings_per_pose: usize,
}

impl ReferenceSetDesign {
    pub fn train_db() -> Self {
        Self {
            kind: ReferenceSetKind::TrainDb,
            renderings_per_pose: 1,
        }
    }

    pub fn coarse_db() -> Self {
        Self {
            kind: ReferenceSetKind::CoarseDb,
            renderings_per_pose: 1,
        }
    }

    pub fn fine_db() -> Self {
        Self {
            kind: ReferenceSetKind::FineDb,
            renderings_per_pose: 1,
        }
    }

    pub fn with_renderings_per_pose(mut self, n: usize) -> Self {
        self.renderings_per_pose = n;
        self
    }

    /// Canonical grid steps in degrees for the discretized designs.
    pub fn steps_deg(&self) -> Option<(f64, f64, f64)> {
        match self.kind {
            ReferenceSetKind::TrainDb => None,
            ReferenceSetKind::CoarseDb => Some((5.0, 5.0, 5.0)),
            ReferenceSetKind::FineDb => Some((1.0, 5.0, 5.0)),
        }
    }
}

impl std::str::FromStr for ReferenceSetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "traindb" | "train" => Ok(Self::TrainDb),
            "coarsedb" | "coarse" => Ok(Self::CoarseDb),
            "finedb" | "fine" => Ok(Self::FineDb),
            other => Err(Error::InvalidConfig(format!(
                "unknown reference set `{other}` (expected traindb|coarsedb|finedb)"
            ))),
        }
    }
}

/// One training or query datum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: u64,
    pub category: String,
    pub subcategory: String,
    pub pose: EulerPose,
    pub bbox: BBox,
    pub camera_feat: Vec<f64>,
    pub render_feat: Vec<f64>,
    pub occlusion_level: OcclusionLevel,
    pub occlusion_ratio: f64,
}

/// Configuration for [`generate_dataset`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub seed: u64,
    pub n_samples: usize,
    pub categories: Vec<String>,
    /// Subcategory name → sampling weight (nonnegative, sum > 0).
    pub subcategory_mix: BTreeMap<String, f64>,
    pub sphere: ViewingSphere,
    /// Std-dev of the gaussian noise added to camera features.
    pub noise_sigma: f64,
    /// Feature dimensionality D_in (even, ≥ 6).
    pub feat_dim: usize,
    /// Scale of the per-subcategory camera-feature offset. The first
    /// subcategory (sorted order) always has a zero offset, so a
    /// single-subcategory dataset has camera features equal to render
    /// features up to noise.
    pub subcategory_offset: f64,
    /// Rendering channel tag carried through to metadata. The synthetic
    /// renderer has a single realization regardless of the tag.
    pub channel: String,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_samples: 1000,
            categories: vec!["car".to_owned()],
            subcategory_mix: BTreeMap::from([("sedan".to_owned(), 1.0)]),
            sphere: ViewingSphere::default(),
            noise_sigma: 0.02,
            feat_dim: DEFAULT_FEAT_DIM,
            subcategory_offset: 0.25,
            channel: "normals".to_owned(),
        }
    }
}

/// Trigonometric feature lift of a pose: interleaved `sin`/`cos` of
/// successive harmonics, cycling azimuth → elevation → in-plane. Injective
/// over the viewing sphere for any even `dim ≥ 6`.
pub fn pose_features(pose: &EulerPose, dim: usize) -> Vec<f64> {
    let angles = [pose.azimuth, pose.elevation, pose.inplane];
    let mut out = Vec::with_capacity(dim);
    let mut pair = 0usize;
    while out.len() < dim {
        let angle = angles[pair % 3];
        let harmonic = (pair / 3 + 1) as f64;
        out.push((harmonic * angle).sin());
        if out.len() < dim {
            out.push((harmonic * angle).cos());
        }
        pair += 1;
    }
    out
}

/// Sign pattern `s` with `pose_features(p.mirrored(), dim) = s ⊙
/// pose_features(p, dim)`: the sine terms of azimuth harmonics negate under
/// a horizontal flip, everything else is even.
pub fn feature_flip_signs(dim: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(dim);
    let mut pair = 0usize;
    while out.len() < dim {
        let is_azimuth = pair.is_multiple_of(3);
        out.push(if is_azimuth { -1.0 } else { 1.0 });
        if out.len() < dim {
            out.push(1.0);
        }
        pair += 1;
    }
    out
}

/// Deterministic per-subcategory camera-feature offset. Supported only on
/// flip-even dimensions (the cosine slots) so horizontal flips commute with
/// subcategory appearance. Index 0 is the zero offset.
pub fn subcategory_offset(index: usize, dim: usize, scale: f64) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    if index == 0 || scale == 0.0 {
        return out;
    }
    for (d, v) in out.iter_mut().enumerate() {
        if !d.is_multiple_of(2) {
            *v = scale * ((index as f64) * (0.7 + 0.37 * d as f64)).sin();
        }
    }
    out
}

fn validate_feat_dim(dim: usize) -> Result<()> {
    if dim < 6 || !dim.is_multiple_of(2) {
        return Err(Error::InvalidConfig(format!(
            "feat_dim must be even and ≥ 6, got {dim}"
        )));
    }
    Ok(())
}

/// Generate a deterministic synthetic dataset. All samples start unoccluded
/// (level L0); augmentation assigns higher levels.
pub fn generate_dataset(cfg: &DatasetConfig) -> Result<Vec<Sample>> {
    if cfg.n_samples == 0 {
        return Err(Error::EmptyInput("n_samples must be > 0"));
    }
    if cfg.categories.is_empty() {
        return Err(Error::EmptyInput("category list"));
    }
    cfg.sphere.validate()?;
    validate_feat_dim(cfg.feat_dim)?;
    let mix: Vec<(&str, f64)> = cfg
        .subcategory_mix
        .iter()
        .map(|(k, &v)| (k.as_str(), v))
        .collect();
    if mix.iter().any(|(_, w)| *w < 0.0) {
        return Err(Error::InvalidConfig(
            "subcategory weights must be nonnegative".into(),
        ));
    }
    let total_weight: f64 = mix.iter().map(|(_, w)| w).sum();
    if total_weight <= 0.0 || total_weight.is_nan() {
        return Err(Error::InvalidConfig(
            "subcategory weights must sum to a positive value".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.noise_sigma.max(0.0))
        .map_err(|e| Error::InvalidConfig(format!("noise sigma: {e}")))?;

    let mut samples = Vec::with_capacity(cfg.n_samples);
    for id in 0..cfg.n_samples {
        let category = cfg.categories[rng.random_range(0..cfg.categories.len())].clone();

        let mut pick = rng.random_range(0.0..total_weight);
        let mut sub_index = mix.len() - 1;
        for (i, (_, w)) in mix.iter().enumerate() {
            if pick < *w {
                sub_index = i;
                break;
            }
            pick -= *w;
        }
        let subcategory = mix[sub_index].0.to_owned();

        let pose = cfg.sphere.sample_pose(&mut rng);
        let bbox = BBox {
            x: rng.random_range(0.0..200.0),
            y: rng.random_range(0.0..200.0),
            w: rng.random_range(40.0..240.0),
            h: rng.random_range(40.0..240.0),
        };

        let render_feat = pose_features(&pose, cfg.feat_dim);
        let offset = subcategory_offset(sub_index, cfg.feat_dim, cfg.subcategory_offset);
        let camera_feat: Vec<f64> = render_feat
            .iter()
            .zip(&offset)
            .map(|(&f, &o)| {
                let n = if cfg.noise_sigma > 0.0 {
                    noise.sample(&mut rng)
                } else {
                    0.0
                };
                f + o + n
            })
            .collect();

        samples.push(Sample {
            id: id as u64,
            category,
            subcategory,
            pose,
            bbox,
            camera_feat,
            render_feat,
            occlusion_level: OcclusionLevel::L0,
            occlusion_ratio: 0.0,
        });
    }
    Ok(samples)
}

/// A reference-set row before embedding: a pose and its rendering features.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePose {
    pub pose: EulerPose,
    pub render_feat: Vec<f64>,
}

/// Build the poses and rendering features of a reference set.
///
/// `TrainDb` yields exactly one entry per training sample with that sample's
/// pose and rendering. The grid designs enumerate the viewing sphere at
/// their canonical steps and need `feat_dim` to synthesize renderings
/// (`train` may then be empty).
pub fn build_reference_poses(
    design: &ReferenceSetDesign,
    train: &[Sample],
    sphere: &ViewingSphere,
    feat_dim: usize,
) -> Result<Vec<ReferencePose>> {
    match design.kind {
        ReferenceSetKind::TrainDb => {
            if train.is_empty() {
                return Err(Error::EmptyInput("TrainDb requires training samples"));
            }
            Ok(train
                .iter()
                .map(|s| ReferencePose {
                    pose: s.pose,
                    render_feat: s.render_feat.clone(),
                })
                .collect())
        }
        ReferenceSetKind::CoarseDb | ReferenceSetKind::FineDb => {
            validate_feat_dim(feat_dim)?;
            let (sa, se, si) = design.steps_deg().expect("grid design has steps");
            let grid_sphere = ViewingSphere {
                azimuth_step: sa,
                elevation_step: se,
                inplane_step: si,
                ..sphere.clone()
            };
            let poses = grid_sphere.grid_poses()?;
            let per_pose = design.renderings_per_pose.max(1);
            let mut out = Vec::with_capacity(poses.len() * per_pose);
            for pose in poses {
                let feat = pose_features(&pose, feat_dim);
                for _ in 0..per_pose {
                    out.push(ReferencePose {
                        pose,
                        render_feat: feat.clone(),
                    });
                }
            }
            Ok(out)
        }
    }
}

/// Closed-form size of [`build_reference_poses`] output for grid designs.
pub fn reference_grid_len(design: &ReferenceSetDesign, sphere: &ViewingSphere) -> Result<usize> {
    let (sa, se, si) = design
        .steps_deg()
        .ok_or_else(|| Error::InvalidConfig("TrainDb has no grid".into()))?;
    let grid_sphere = ViewingSphere {
        azimuth_step: sa,
        elevation_step: se,
        inplane_step: si,
        ..sphere.clone()
    };
    let (na, ne, ni) = grid_sphere.grid_counts()?;
    Ok(na * ne * ni * design.renderings_per_pose.max(1))
}

/// Write samples as JSON Lines, one sample per line, full float precision.
pub fn write_jsonl<P: AsRef<Path>>(path: P, samples: &[Sample]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    for s in samples {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Read a JSON Lines dataset written by [`write_jsonl`].
pub fn read_jsonl<P: AsRef<Path>>(path: P) -> Result<Vec<Sample>> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}
