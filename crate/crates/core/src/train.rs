//! Joint training of the camera/rendering encoder pair.
//!
//! Each step wires the full pipeline: weighted pose-neighbour batch →
//! camera-side augmentations (bounding-box noise, synthetic occlusions,
//! feature jitter, horizontal flip) → both encoders → margin-violation
//! mining → loss → Adam update with separate backbone and head learning
//! rates.
//!
//! Renderings stay clean: the horizontal flip mirrors the pose label and
//! swaps in the rendering of the mirrored pose, which under the
//! trigonometric feature lift is exactly the flip sign pattern. Every epoch
//! replays the same seeded batch and augmentation stream, so loss history
//! values are comparable epoch to epoch.

use crate::augment::{
    bbox_feature_shift, default_occluder_pool, occlude_camera_features, perturb_bbox,
    OcclusionConfig,
};
use crate::dataset::{feature_flip_signs, Sample};
use crate::error::{Error, Result};
use crate::loss::{
    contrastive_pose_grad, contrastive_pose_loss, fixed_contrastive_grad, fixed_contrastive_loss,
    squared_distance, triplet_dynamic_grad, triplet_dynamic_loss, LossConfig, LossVariant,
    PairBatch, PairItem, PairLabel, Triplet,
};
use crate::mining::{draw_batch, mine_pairs, SamplerConfig};
use crate::nn::{ForwardCache, Mlp};
use crate::optim::Adam;
use crate::pose::{pose_distance, EulerPose};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::io::{BufReader, Read, Write};
use std::path::Path;

/// Full training configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_backbone: f64,
    pub lr_head: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub loss: LossConfig,
    pub sampler: SamplerConfig,
    /// Bounding-box noise scale β during training.
    pub beta_train: f64,
    /// Occlusion scale during training.
    pub s_occ: f64,
    /// Std-dev of the additive camera-feature jitter.
    pub jitter_sigma: f64,
    /// Probability of the horizontal flip per sample.
    pub flip_prob: f64,
    /// Hidden widths of the encoder backbone.
    pub hidden: Vec<usize>,
    pub backbone_out: usize,
    pub embed_dim: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 32,
            lr_backbone: 1e-4,
            lr_head: 1e-3,
            weight_decay: 5e-4,
            seed: 0,
            loss: LossConfig::default(),
            sampler: SamplerConfig::default(),
            beta_train: 0.1,
            s_occ: 0.5,
            jitter_sigma: 0.02,
            flip_prob: 0.5,
            hidden: vec![64, 64],
            backbone_out: 32,
            embed_dim: 16,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be ≥ 1".into()));
        }
        if self.lr_backbone < 0.0 || self.lr_head < 0.0 || self.weight_decay < 0.0 {
            return Err(Error::InvalidConfig(
                "learning rates and weight decay must be ≥ 0".into(),
            ));
        }
        for (name, v) in [
            ("beta_train", self.beta_train),
            ("s_occ", self.s_occ),
            ("flip_prob", self.flip_prob),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidConfig(format!("{name} must be in [0, 1]")));
            }
        }
        if self.jitter_sigma < 0.0 {
            return Err(Error::InvalidConfig("jitter_sigma must be ≥ 0".into()));
        }
        if self.backbone_out == 0 || self.embed_dim == 0 {
            return Err(Error::InvalidConfig("zero-width layer".into()));
        }
        self.loss.validate()?;
        let effective = SamplerConfig {
            batch_size: self.batch_size,
            ..self.sampler.clone()
        };
        effective.validate()
    }

    /// Layer widths of one encoder for inputs of dimension `feat_dim`.
    pub fn encoder_dims(&self, feat_dim: usize) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 3);
        dims.push(feat_dim);
        dims.extend_from_slice(&self.hidden);
        dims.push(self.backbone_out);
        dims.push(self.embed_dim);
        dims
    }
}

/// The jointly trained encoders E_c (camera) and E_r (rendering). The two
/// networks share an architecture but never share weights.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderPair {
    pub camera: Mlp,
    pub render: Mlp,
}

impl EncoderPair {
    /// Seeded Glorot initialization; camera and render draw from separate
    /// streams of the config seed.
    pub fn init(cfg: &TrainConfig, feat_dim: usize) -> Result<Self> {
        Self::init_with_streams(cfg, feat_dim, 1, 2)
    }

    /// As [`Self::init`] with the camera/render init streams exchanged.
    /// Training swapped inputs from this initialization mirrors a normal run
    /// exactly, which is how the role-symmetry property is checked.
    pub fn init_role_swapped(cfg: &TrainConfig, feat_dim: usize) -> Result<Self> {
        Self::init_with_streams(cfg, feat_dim, 2, 1)
    }

    fn init_with_streams(
        cfg: &TrainConfig,
        feat_dim: usize,
        camera_stream: u64,
        render_stream: u64,
    ) -> Result<Self> {
        let dims = cfg.encoder_dims(feat_dim);
        let mut rng_c = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng_c.set_stream(camera_stream);
        let mut rng_r = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng_r.set_stream(render_stream);
        Ok(Self {
            camera: Mlp::init(&dims, 1, &mut rng_c)?,
            render: Mlp::init(&dims, 1, &mut rng_r)?,
        })
    }

    pub fn feat_dim(&self) -> usize {
        self.camera.in_dim()
    }

    pub fn embed_dim(&self) -> usize {
        self.camera.out_dim()
    }

    pub fn embed_camera(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.camera.forward(x)
    }

    pub fn embed_render(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.render.forward(x)
    }
}

/// Result of [`train`]: the trained encoders and the mean loss per epoch.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub encoders: EncoderPair,
    pub loss_history: Vec<f64>,
}

/// Train a fresh encoder pair on the dataset.
pub fn train(data: &[Sample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    let feat_dim = check_data(data)?;
    train_from(EncoderPair::init(cfg, feat_dim)?, data, cfg)
}

fn check_data(data: &[Sample]) -> Result<usize> {
    let first = data.first().ok_or(Error::EmptyInput("training data"))?;
    let feat_dim = first.camera_feat.len();
    for s in data {
        if s.camera_feat.len() != feat_dim || s.render_feat.len() != feat_dim {
            return Err(Error::DimMismatch {
                expected: feat_dim,
                got: s.camera_feat.len().min(s.render_feat.len()),
            });
        }
    }
    Ok(feat_dim)
}

/// Train a given encoder pair in place.
pub fn train_from(
    mut encoders: EncoderPair,
    data: &[Sample],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let feat_dim = check_data(data)?;
    if encoders.feat_dim() != feat_dim {
        return Err(Error::DimMismatch {
            expected: encoders.feat_dim(),
            got: feat_dim,
        });
    }
    if data.len() < cfg.batch_size {
        return Err(Error::BatchTooLarge {
            batch: cfg.batch_size,
            dataset: data.len(),
        });
    }

    let sampler = SamplerConfig {
        batch_size: cfg.batch_size,
        ..cfg.sampler.clone()
    };
    let pool = default_occluder_pool(feat_dim);
    let flip_signs = feature_flip_signs(feat_dim);
    let jitter =
        Normal::new(0.0, cfg.jitter_sigma.max(f64::MIN_POSITIVE)).expect("validated sigma");

    let mut adam_c = Adam::new(&encoders.camera);
    let mut adam_r = Adam::new(&encoders.render);
    let batches_per_epoch = (data.len() / cfg.batch_size).max(1);
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        // Same stream every epoch: epochs replay identical batches and
        // augmentation draws, keeping the history comparable.
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(0);
        let mut epoch_loss = 0.0;

        for batch_idx in 0..batches_per_epoch {
            let indices = draw_batch(data, &sampler, &mut rng)?;
            let b = indices.len();

            let mut poses: Vec<EulerPose> = Vec::with_capacity(b);
            let mut caches_c: Vec<ForwardCache> = Vec::with_capacity(b);
            let mut caches_r: Vec<ForwardCache> = Vec::with_capacity(b);
            let mut emb_c: Vec<Vec<f64>> = Vec::with_capacity(b);
            let mut emb_r: Vec<Vec<f64>> = Vec::with_capacity(b);

            for &idx in &indices {
                let s = &data[idx];
                let mut pose = s.pose;
                let mut cam = s.camera_feat.clone();
                let mut ren = s.render_feat.clone();

                if cfg.flip_prob > 0.0 && rng.random::<f64>() < cfg.flip_prob {
                    for (v, sgn) in cam.iter_mut().zip(&flip_signs) {
                        *v *= sgn;
                    }
                    for (v, sgn) in ren.iter_mut().zip(&flip_signs) {
                        *v *= sgn;
                    }
                    pose = pose.mirrored();
                }
                if cfg.beta_train > 0.0 {
                    let perturbed = perturb_bbox(&s.bbox, cfg.beta_train, &mut rng)?;
                    let shift = bbox_feature_shift(&s.bbox, &perturbed, feat_dim);
                    for (v, d) in cam.iter_mut().zip(&shift) {
                        *v += d;
                    }
                }
                if cfg.s_occ > 0.0 {
                    let occ = OcclusionConfig {
                        s_occ: cfg.s_occ,
                        min_occluders: 1,
                        max_occluders: 8,
                        excluded_category: s.category.clone(),
                    };
                    occlude_camera_features(&mut cam, &occ, &pool, &mut rng)?;
                }
                if cfg.jitter_sigma > 0.0 {
                    for v in cam.iter_mut() {
                        *v += jitter.sample(&mut rng);
                    }
                }

                let cache_c = encoders.camera.forward_cached(&cam)?;
                let cache_r = encoders.render.forward_cached(&ren)?;
                emb_c.push(cache_c.output().to_vec());
                emb_r.push(cache_r.output().to_vec());
                caches_c.push(cache_c);
                caches_r.push(cache_r);
                poses.push(pose);
            }

            let mut upstream_c = vec![vec![0.0; cfg.embed_dim]; b];
            let mut upstream_r = vec![vec![0.0; cfg.embed_dim]; b];

            let batch_loss = match cfg.loss.variant {
                LossVariant::ContrastivePose | LossVariant::FixedContrastive => {
                    let mined = match cfg.loss.variant {
                        // The miner keeps pairs that violate the margin the
                        // loss actually trains against: dynamic m·Δθ, or the
                        // constant m for the ablation variant.
                        LossVariant::ContrastivePose => mine_pairs(
                            &poses,
                            &emb_c,
                            &emb_r,
                            cfg.loss.pose_threshold,
                            cfg.loss.margin,
                        )?,
                        _ => mine_fixed_margin(
                            &poses,
                            &emb_c,
                            &emb_r,
                            cfg.loss.pose_threshold,
                            cfg.loss.margin,
                        ),
                    };
                    if mined.is_empty() {
                        0.0
                    } else {
                        let mut items = Vec::with_capacity(mined.len());
                        let mut pair_indices = Vec::with_capacity(mined.len());
                        for (&(i, j), label) in mined
                            .positives
                            .iter()
                            .map(|p| (p, PairLabel::Positive))
                            .chain(mined.negatives.iter().map(|p| (p, PairLabel::Negative)))
                        {
                            items.push(PairItem {
                                f_c: emb_c[i].clone(),
                                f_r: emb_r[j].clone(),
                                delta_theta: pose_distance(&poses[i], &poses[j]),
                                label,
                            });
                            pair_indices.push((i, j));
                        }
                        let pair_batch = PairBatch::new(items)?;
                        let (loss, grads) = match cfg.loss.variant {
                            LossVariant::ContrastivePose => (
                                contrastive_pose_loss(&pair_batch, &cfg.loss)?,
                                contrastive_pose_grad(&pair_batch, &cfg.loss)?,
                            ),
                            _ => (
                                fixed_contrastive_loss(&pair_batch, &cfg.loss)?,
                                fixed_contrastive_grad(&pair_batch, &cfg.loss)?,
                            ),
                        };
                        for ((i, j), (gc, gr)) in pair_indices.into_iter().zip(grads) {
                            for (u, g) in upstream_c[i].iter_mut().zip(&gc) {
                                *u += g;
                            }
                            for (u, g) in upstream_r[j].iter_mut().zip(&gr) {
                                *u += g;
                            }
                        }
                        loss
                    }
                }
                LossVariant::TripletDynamic => {
                    // Anchor with its own rendering as the positive, every
                    // margin-violating far rendering as a negative.
                    let mut triplets = Vec::new();
                    let mut triplet_indices = Vec::new();
                    for i in 0..b {
                        for j in 0..b {
                            let dt = pose_distance(&poses[i], &poses[j]);
                            if dt < cfg.loss.pose_threshold {
                                continue;
                            }
                            let dp = squared_distance(&emb_c[i], &emb_r[i]);
                            let dn = squared_distance(&emb_c[i], &emb_r[j]);
                            if dp - dn + cfg.loss.margin * dt > 0.0 {
                                triplets.push(Triplet {
                                    anchor: emb_c[i].clone(),
                                    positive: emb_r[i].clone(),
                                    negative: emb_r[j].clone(),
                                    delta_theta_neg: dt,
                                });
                                triplet_indices.push((i, j));
                            }
                        }
                    }
                    if triplets.is_empty() {
                        0.0
                    } else {
                        let loss = triplet_dynamic_loss(&triplets, &cfg.loss)?;
                        let grads = triplet_dynamic_grad(&triplets, &cfg.loss)?;
                        for ((i, j), (ga, gp, gn)) in triplet_indices.into_iter().zip(grads) {
                            for (u, g) in upstream_c[i].iter_mut().zip(&ga) {
                                *u += g;
                            }
                            for (u, g) in upstream_r[i].iter_mut().zip(&gp) {
                                *u += g;
                            }
                            for (u, g) in upstream_r[j].iter_mut().zip(&gn) {
                                *u += g;
                            }
                        }
                        loss
                    }
                }
            };

            if !batch_loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: batch_idx,
                    loss: batch_loss,
                });
            }
            epoch_loss += batch_loss;

            let grads_c = encoders
                .camera
                .backward(&caches_c, &upstream_c, cfg.weight_decay)?;
            let grads_r = encoders
                .render
                .backward(&caches_r, &upstream_r, cfg.weight_decay)?;
            adam_c.step(&mut encoders.camera, &grads_c, cfg.lr_backbone, cfg.lr_head)?;
            adam_r.step(&mut encoders.render, &grads_r, cfg.lr_backbone, cfg.lr_head)?;
        }

        history.push(epoch_loss / batches_per_epoch as f64);
    }

    Ok(TrainOutcome {
        encoders,
        loss_history: history,
    })
}

/// Margin-violation mining against the constant margin of the
/// fixed-contrastive ablation: positives kept iff `d² > m`, negatives iff
/// `d² < m`.
fn mine_fixed_margin(
    poses: &[EulerPose],
    emb_c: &[Vec<f64>],
    emb_r: &[Vec<f64>],
    threshold: f64,
    margin: f64,
) -> crate::mining::MinedPairs {
    let mut mined = crate::mining::MinedPairs::default();
    for i in 0..poses.len() {
        for j in 0..poses.len() {
            let dt = pose_distance(&poses[i], &poses[j]);
            let d2 = squared_distance(&emb_c[i], &emb_r[j]);
            if dt < threshold {
                if d2 > margin {
                    mined.positives.push((i, j));
                }
            } else if d2 < margin {
                mined.negatives.push((i, j));
            }
        }
    }
    mined
}

/// FNV-1a hash, used to fingerprint configs and checkpoint payloads.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// Hex fingerprint of a training configuration.
pub fn config_hash(cfg: &TrainConfig) -> String {
    let json = serde_json::to_string(cfg).expect("config serializes");
    format!("{:016x}", fnv1a64(json.as_bytes()))
}

const CHECKPOINT_FORMAT: &str = "pose-embed-checkpoint";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    /// Layer widths of each encoder, input first.
    pub dims: Vec<usize>,
    pub head_layers: usize,
    pub seed: u64,
    pub config_hash: String,
    /// f32 values in the blob: camera parameters then render parameters.
    pub param_count: usize,
}

/// Write encoders as a JSON header line followed by a little-endian f32
/// parameter blob in layer order (camera first, then render; weights before
/// bias within a layer).
pub fn save_checkpoint<P: AsRef<Path>>(
    path: P,
    encoders: &EncoderPair,
    cfg: &TrainConfig,
) -> Result<()> {
    let header = CheckpointHeader {
        format: CHECKPOINT_FORMAT.to_owned(),
        version: 1,
        dims: encoders.camera.layer_dims(),
        head_layers: encoders.camera.layers.len() - encoders.camera.head_start,
        seed: cfg.seed,
        config_hash: config_hash(cfg),
        param_count: encoders.camera.param_count() + encoders.render.param_count(),
    };
    let mut file = std::fs::File::create(path)?;
    serde_json::to_writer(&mut file, &header)?;
    file.write_all(b"\n")?;
    let mut blob = Vec::with_capacity(header.param_count * 4);
    for p in encoders
        .camera
        .flat_params()
        .iter()
        .chain(encoders.render.flat_params().iter())
    {
        blob.extend_from_slice(&(*p as f32).to_le_bytes());
    }
    file.write_all(&blob)?;
    Ok(())
}

/// Read a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint<P: AsRef<Path>>(path: P) -> Result<(EncoderPair, CheckpointHeader)> {
    let file = std::fs::File::open(path)?;
    let mut reader = BufReader::new(file);
    let mut header_line = String::new();
    std::io::BufRead::read_line(&mut reader, &mut header_line)?;
    let header: CheckpointHeader = serde_json::from_str(header_line.trim_end())?;
    if header.format != CHECKPOINT_FORMAT {
        return Err(Error::Corrupt(format!(
            "unexpected checkpoint format `{}`",
            header.format
        )));
    }

    let mut blob = Vec::new();
    reader.read_to_end(&mut blob)?;
    if blob.len() != header.param_count * 4 {
        return Err(Error::Corrupt(format!(
            "parameter blob holds {} bytes, expected {}",
            blob.len(),
            header.param_count * 4
        )));
    }
    let params: Vec<f64> = blob
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut camera = Mlp::init(&header.dims, header.head_layers, &mut rng)?;
    let mut render = camera.clone();
    let per_encoder = camera.param_count();
    if per_encoder * 2 != header.param_count {
        return Err(Error::Corrupt("parameter count does not match dims".into()));
    }
    camera.set_flat_params(&params[..per_encoder])?;
    render.set_flat_params(&params[per_encoder..])?;
    Ok((EncoderPair { camera, render }, header))
}
