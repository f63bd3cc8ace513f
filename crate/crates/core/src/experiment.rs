//! Evaluation pipeline and the sweep/ablation experiment driver.
//!
//! A grid point trains (or reuses) a model under one varied knob, builds
//! the reference index, corrupts a held-out query set at the requested
//! test conditions, and reports per-category metrics per occlusion level.
//! All grid points share seeds, so every model is scored on the identical
//! corrupted queries.

use crate::augment::{bbox_feature_shift, default_occluder_pool, occlude_to_level, perturb_bbox};
use crate::dataset::{
    build_reference_poses, OcclusionLevel, ReferenceSetDesign, ReferenceSetKind, Sample,
    ViewingSphere,
};
use crate::error::{Error, Result};
use crate::index::{build_index, Backend, ReferenceIndex};
use crate::loss::LossVariant;
use crate::metrics::{pose_error_deg, EvalReport};
use crate::train::{train, EncoderPair, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Deterministic train/query split: the leading fraction trains, the tail
/// is held out for querying.
pub fn split_dataset(data: &[Sample], holdout_fraction: f64) -> (Vec<Sample>, Vec<Sample>) {
    let n_hold = ((data.len() as f64) * holdout_fraction).round() as usize;
    let n_hold = n_hold.clamp(1, data.len().saturating_sub(1).max(1));
    let cut = data.len() - n_hold;
    (data[..cut].to_vec(), data[cut..].to_vec())
}

/// Test-time corruption of a query set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConditions {
    pub occlusion_level: OcclusionLevel,
    /// Bounding-box noise β applied to queries (0 disables).
    pub beta_test: f64,
    /// Seed of the corruption stream; identical conditions corrupt
    /// identically regardless of the model under test.
    pub eval_seed: u64,
}

impl EvalConditions {
    pub fn clean(eval_seed: u64) -> Self {
        Self {
            occlusion_level: OcclusionLevel::L0,
            beta_test: 0.0,
            eval_seed,
        }
    }
}

/// Embed corrupted queries, retrieve the nearest reference, and report
/// per-category metrics keyed by the evaluation's occlusion level.
pub fn evaluate_queries(
    encoders: &EncoderPair,
    index: &ReferenceIndex,
    queries: &[Sample],
    conditions: &EvalConditions,
) -> Result<EvalReport> {
    if queries.is_empty() {
        return Err(Error::EmptyInput("query set"));
    }
    let feat_dim = encoders.feat_dim();
    let pool = default_occluder_pool(feat_dim);
    let mut rng = ChaCha8Rng::seed_from_u64(conditions.eval_seed);
    rng.set_stream(conditions.occlusion_level as u64 + 16 * (conditions.beta_test != 0.0) as u64);

    let mut groups: BTreeMap<(String, OcclusionLevel), Vec<f64>> = BTreeMap::new();
    for q in queries {
        let mut feat = q.camera_feat.clone();
        if conditions.beta_test > 0.0 {
            let perturbed = perturb_bbox(&q.bbox, conditions.beta_test, &mut rng)?;
            let shift = bbox_feature_shift(&q.bbox, &perturbed, feat_dim);
            for (v, d) in feat.iter_mut().zip(&shift) {
                *v += d;
            }
        }
        if conditions.occlusion_level != OcclusionLevel::L0 {
            let mut scratch = q.clone();
            scratch.camera_feat = feat;
            scratch = occlude_to_level(
                &scratch,
                conditions.occlusion_level,
                &q.category,
                &pool,
                &mut rng,
            )?;
            feat = scratch.camera_feat;
        }
        let embedding = encoders.embed_camera(&feat)?;
        let hit = index.nearest(&embedding)?;
        let err = pose_error_deg(&hit.pose, &q.pose);
        groups
            .entry((q.category.clone(), conditions.occlusion_level))
            .or_default()
            .push(err);
    }
    EvalReport::from_errors(groups)
}

/// Train on the given data, build a TrainDb index, and evaluate the query
/// set at each condition. The workhorse behind grid points and the CLI
/// `train`/`eval` path.
pub fn train_index_eval(
    train_data: &[Sample],
    queries: &[Sample],
    cfg: &TrainConfig,
    design: &ReferenceSetDesign,
    sphere: &ViewingSphere,
    conditions: &[EvalConditions],
) -> Result<(EncoderPair, ReferenceIndex, EvalReport)> {
    let outcome = train(train_data, cfg)?;
    let feat_dim = outcome.encoders.feat_dim();
    let refs = build_reference_poses(design, train_data, sphere, feat_dim)?;
    let index = build_index(&refs, &outcome.encoders.render, Backend::KdTree)?;
    let mut merged = EvalReport::default();
    for c in conditions {
        let report = evaluate_queries(&outcome.encoders, &index, queries, c)?;
        merged.rows.extend(report.rows);
    }
    merged
        .rows
        .sort_by(|a, b| (&a.category, a.occlusion_level).cmp(&(&b.category, b.occlusion_level)));
    Ok((outcome.encoders, index, merged))
}

/// One experiment axis with its grid values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ExperimentGrid {
    SOcc(Vec<f64>),
    BetaTrain(Vec<f64>),
    BetaTest(Vec<f64>),
    LossVariant(Vec<LossVariant>),
    ReferenceDesign(Vec<ReferenceSetKind>),
}

impl ExperimentGrid {
    pub fn axis_name(&self) -> &'static str {
        match self {
            Self::SOcc(_) => "s_occ",
            Self::BetaTrain(_) => "beta_train",
            Self::BetaTest(_) => "beta_test",
            Self::LossVariant(_) => "loss_variant",
            Self::ReferenceDesign(_) => "reference_design",
        }
    }

    pub fn is_empty(&self) -> bool {
        match self {
            Self::SOcc(v) | Self::BetaTrain(v) | Self::BetaTest(v) => v.is_empty(),
            Self::LossVariant(v) => v.is_empty(),
            Self::ReferenceDesign(v) => v.is_empty(),
        }
    }
}

/// Shared context of an experiment run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSetup {
    pub train_cfg: TrainConfig,
    pub sphere: ViewingSphere,
    /// Held-out fraction of the dataset used as queries.
    pub holdout_fraction: f64,
    /// Occlusion levels every grid point is evaluated at.
    pub eval_levels: Vec<OcclusionLevel>,
    /// β applied at query time for every grid point (the BetaTest axis
    /// overrides this per value).
    pub eval_beta_test: f64,
    pub eval_seed: u64,
}

impl ExperimentSetup {
    pub fn new(train_cfg: TrainConfig, sphere: ViewingSphere) -> Self {
        Self {
            train_cfg,
            sphere,
            holdout_fraction: 0.2,
            eval_levels: vec![OcclusionLevel::L0],
            eval_beta_test: 0.0,
            eval_seed: 9000,
        }
    }

    fn conditions(&self, beta_test: f64) -> Vec<EvalConditions> {
        self.eval_levels
            .iter()
            .map(|&occlusion_level| EvalConditions {
                occlusion_level,
                beta_test,
                eval_seed: self.eval_seed,
            })
            .collect()
    }
}

/// One grid point's outcome; training failures are annotated rather than
/// aborting the table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub axis: String,
    pub value: String,
    pub report: Option<EvalReport>,
    pub error: Option<String>,
}

/// Flat experiment results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ExperimentTable {
    pub rows: Vec<ExperimentRow>,
}

impl ExperimentTable {
    pub fn report_for(&self, value: &str) -> Option<&EvalReport> {
        self.rows
            .iter()
            .find(|r| r.value == value)
            .and_then(|r| r.report.as_ref())
    }

    /// One CSV row per (grid value, category, occlusion level), fixed
    /// column order, errors annotated in the trailing column.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "axis,value,category,occlusion_level,n,acc_pi6,acc_pi18,med_err_deg,error\n",
        );
        for row in &self.rows {
            match &row.report {
                Some(report) => {
                    for r in &report.rows {
                        out.push_str(&format!(
                            "{},{},{},{},{},{},{},{},\n",
                            row.axis,
                            row.value,
                            r.category,
                            r.occlusion_level,
                            r.n,
                            r.metrics.acc_pi6,
                            r.metrics.acc_pi18,
                            r.metrics.med_err_deg
                        ));
                    }
                }
                None => {
                    out.push_str(&format!(
                        "{},{},,,,,,,{}\n",
                        row.axis,
                        row.value,
                        row.error.as_deref().unwrap_or("unknown")
                    ));
                }
            }
        }
        out
    }
}

/// Run a sweep or ablation over one axis. Training and evaluation seeds are
/// shared across grid points.
pub fn run_experiment(
    grid: &ExperimentGrid,
    data: &[Sample],
    setup: &ExperimentSetup,
) -> Result<ExperimentTable> {
    if grid.is_empty() {
        return Err(Error::EmptyInput("experiment grid values"));
    }
    let (train_data, queries) = split_dataset(data, setup.holdout_fraction);
    let mut table = ExperimentTable::default();

    // The BetaTest and ReferenceDesign axes evaluate one base model; the
    // training axes retrain per value.
    match grid {
        ExperimentGrid::SOcc(values) => {
            for &v in values {
                let cfg = TrainConfig {
                    s_occ: v,
                    ..setup.train_cfg.clone()
                };
                table.rows.push(grid_point(
                    grid.axis_name(),
                    format_float(v),
                    &train_data,
                    &queries,
                    &cfg,
                    setup,
                    setup.eval_beta_test,
                ));
            }
        }
        ExperimentGrid::BetaTrain(values) => {
            for &v in values {
                let cfg = TrainConfig {
                    beta_train: v,
                    ..setup.train_cfg.clone()
                };
                table.rows.push(grid_point(
                    grid.axis_name(),
                    format_float(v),
                    &train_data,
                    &queries,
                    &cfg,
                    setup,
                    setup.eval_beta_test,
                ));
            }
        }
        ExperimentGrid::LossVariant(values) => {
            for &v in values {
                let mut cfg = setup.train_cfg.clone();
                cfg.loss.variant = v;
                table.rows.push(grid_point(
                    grid.axis_name(),
                    v.to_string(),
                    &train_data,
                    &queries,
                    &cfg,
                    setup,
                    setup.eval_beta_test,
                ));
            }
        }
        ExperimentGrid::BetaTest(values) => {
            let shared = shared_model(&train_data, setup);
            for &v in values {
                table.rows.push(match &shared {
                    Ok((encoders, index)) => eval_point(
                        grid.axis_name(),
                        format_float(v),
                        encoders,
                        index,
                        &queries,
                        setup,
                        v,
                    ),
                    Err(e) => failed_point(grid.axis_name(), format_float(v), e),
                });
            }
        }
        ExperimentGrid::ReferenceDesign(values) => {
            let outcome = train(&train_data, &setup.train_cfg);
            for &kind in values {
                let value = format!("{kind:?}");
                table.rows.push(match &outcome {
                    Ok(out) => {
                        let design = ReferenceSetDesign {
                            kind,
                            renderings_per_pose: 1,
                        };
                        match build_reference_poses(
                            &design,
                            &train_data,
                            &setup.sphere,
                            out.encoders.feat_dim(),
                        )
                        .and_then(|refs| build_index(&refs, &out.encoders.render, Backend::KdTree))
                        {
                            Ok(index) => eval_point(
                                grid.axis_name(),
                                value,
                                &out.encoders,
                                &index,
                                &queries,
                                setup,
                                setup.eval_beta_test,
                            ),
                            Err(e) => failed_point(grid.axis_name(), value, &e),
                        }
                    }
                    Err(e) => failed_point(grid.axis_name(), value, e),
                });
            }
        }
    }
    Ok(table)
}

fn format_float(v: f64) -> String {
    format!("{v}")
}

fn shared_model(
    train_data: &[Sample],
    setup: &ExperimentSetup,
) -> Result<(EncoderPair, ReferenceIndex)> {
    let out = train(train_data, &setup.train_cfg)?;
    let refs = build_reference_poses(
        &ReferenceSetDesign::train_db(),
        train_data,
        &setup.sphere,
        out.encoders.feat_dim(),
    )?;
    let index = build_index(&refs, &out.encoders.render, Backend::KdTree)?;
    Ok((out.encoders, index))
}

#[allow(clippy::too_many_arguments)]
fn grid_point(
    axis: &str,
    value: String,
    train_data: &[Sample],
    queries: &[Sample],
    cfg: &TrainConfig,
    setup: &ExperimentSetup,
    beta_test: f64,
) -> ExperimentRow {
    let result = train_index_eval(
        train_data,
        queries,
        cfg,
        &ReferenceSetDesign::train_db(),
        &setup.sphere,
        &setup.conditions(beta_test),
    );
    match result {
        Ok((_, _, report)) => ExperimentRow {
            axis: axis.to_owned(),
            value,
            report: Some(report),
            error: None,
        },
        Err(e) => failed_point(axis, value, &e),
    }
}

fn eval_point(
    axis: &str,
    value: String,
    encoders: &EncoderPair,
    index: &ReferenceIndex,
    queries: &[Sample],
    setup: &ExperimentSetup,
    beta_test: f64,
) -> ExperimentRow {
    let mut merged = EvalReport::default();
    for c in setup.conditions(beta_test) {
        match evaluate_queries(encoders, index, queries, &c) {
            Ok(report) => merged.rows.extend(report.rows),
            Err(e) => return failed_point(axis, value, &e),
        }
    }
    merged
        .rows
        .sort_by(|a, b| (&a.category, a.occlusion_level).cmp(&(&b.category, b.occlusion_level)));
    ExperimentRow {
        axis: axis.to_owned(),
        value,
        report: Some(merged),
        error: None,
    }
}

fn failed_point(axis: &str, value: String, e: &Error) -> ExperimentRow {
    ExperimentRow {
        axis: axis.to_owned(),
        value,
        report: None,
        error: Some(e.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_dataset, DatasetConfig};
    use std::collections::BTreeMap as Map;

    fn tiny_data(seed: u64) -> Vec<Sample> {
        generate_dataset(&DatasetConfig {
            seed,
            n_samples: 200,
            subcategory_mix: Map::from([("sedan".to_owned(), 1.0)]),
            ..Default::default()
        })
        .unwrap()
    }

    fn tiny_setup() -> ExperimentSetup {
        ExperimentSetup::new(
            TrainConfig {
                epochs: 5,
                batch_size: 16,
                lr_backbone: 1e-3,
                lr_head: 1e-3,
                beta_train: 0.0,
                s_occ: 0.0,
                jitter_sigma: 0.0,
                flip_prob: 0.0,
                hidden: vec![32],
                ..Default::default()
            },
            ViewingSphere::default(),
        )
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let data = tiny_data(0);
        let (train, hold) = split_dataset(&data, 0.2);
        assert_eq!(train.len() + hold.len(), data.len());
        assert_eq!(hold.len(), 40);
        let (t2, h2) = split_dataset(&data, 0.2);
        assert_eq!(train, t2);
        assert_eq!(hold, h2);
    }

    #[test]
    fn evaluation_reports_have_consistent_accuracies() {
        let data = tiny_data(1);
        let setup = tiny_setup();
        let (train_data, queries) = split_dataset(&data, 0.2);
        let (_, _, report) = train_index_eval(
            &train_data,
            &queries,
            &setup.train_cfg,
            &ReferenceSetDesign::train_db(),
            &setup.sphere,
            &[
                EvalConditions::clean(7),
                EvalConditions {
                    occlusion_level: OcclusionLevel::L2,
                    beta_test: 0.0,
                    eval_seed: 7,
                },
            ],
        )
        .unwrap();
        assert!(!report.rows.is_empty());
        for r in &report.rows {
            assert!(r.metrics.acc_pi18 <= r.metrics.acc_pi6);
        }
        let levels = report.levels();
        assert!(levels.contains(&OcclusionLevel::L0));
        assert!(levels.contains(&OcclusionLevel::L2));
    }

    #[test]
    fn experiment_csv_is_deterministic() {
        let data = tiny_data(2);
        let setup = tiny_setup();
        let grid = ExperimentGrid::BetaTest(vec![0.0, 0.25]);
        let a = run_experiment(&grid, &data, &setup).unwrap();
        let b = run_experiment(&grid, &data, &setup).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        assert_eq!(a.rows.len(), 2);
        assert!(a.rows.iter().all(|r| r.report.is_some()));
        assert!(a.to_csv().starts_with("axis,value,category,"));
    }

    #[test]
    fn reference_design_axis_emits_a_row_per_design() {
        let data = tiny_data(3);
        let mut setup = tiny_setup();
        // Coarser sphere keeps the CoarseDb grid small.
        setup.sphere = ViewingSphere {
            azimuth_range: [0.0, 360.0],
            elevation_range: [0.0, 0.0],
            inplane_range: [0.0, 0.0],
            ..Default::default()
        };
        let grid = ExperimentGrid::ReferenceDesign(vec![
            ReferenceSetKind::TrainDb,
            ReferenceSetKind::CoarseDb,
        ]);
        let table = run_experiment(&grid, &data, &setup).unwrap();
        assert_eq!(table.rows.len(), 2);
        assert!(table.rows.iter().all(|r| r.report.is_some()));
    }

    #[test]
    fn empty_grid_is_an_error() {
        let data = tiny_data(4);
        assert!(run_experiment(&ExperimentGrid::SOcc(vec![]), &data, &tiny_setup()).is_err());
    }
}
