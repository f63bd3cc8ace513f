//! Command-line driver: generate data, train encoders, build reference
//! indexes, run retrieval evaluations, parameter sweeps, ablations and the
//! inference-speed benchmark.

use clap::{Parser, Subcommand};
use poseret_core::dataset::{
    build_reference_poses, generate_dataset, read_jsonl, write_jsonl, DatasetConfig,
    OcclusionLevel, ReferenceSetDesign, ReferenceSetKind, ViewingSphere,
};
use poseret_core::experiment::{
    evaluate_queries, run_experiment, EvalConditions, ExperimentGrid, ExperimentSetup,
};
use poseret_core::index::{benchmark, build_index, load_index, query, save_index, Backend};
use poseret_core::loss::LossVariant;
use poseret_core::metrics::EvalReport;
use poseret_core::train::{load_checkpoint, save_checkpoint, train, TrainConfig};
use poseret_core::Result;
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "poseret",
    about = "Contrastive pose-metric learning and nearest-neighbour pose retrieval"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a deterministic synthetic dataset as JSON Lines.
    GenerateData {
        /// DatasetConfig as JSON; omitted fields take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config sample count.
        #[arg(long)]
        n_samples: Option<usize>,
    },
    /// Train the encoder pair and write a checkpoint.
    Train {
        /// TrainConfig as JSON; omitted fields take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Optional CSV of per-epoch mean loss.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Embed a reference set with the render encoder and freeze an index.
    BuildIndex {
        #[arg(long)]
        model: PathBuf,
        /// Training samples (used directly by traindb, and for the sphere's
        /// feature dimension otherwise).
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "traindb")]
        design: String,
        #[arg(long, default_value = "kdtree")]
        backend: String,
        /// Renderings per grid pose (grid designs only).
        #[arg(long, default_value_t = 1)]
        renderings_per_pose: usize,
        /// ViewingSphere as JSON (grid designs); defaults to the standard
        /// sphere.
        #[arg(long)]
        sphere: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Retrieve the nearest reference pose for each query sample.
    Query {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// CSV destination (defaults to stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate retrieval accuracy on a query set.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        /// Occlusion level of the synthesized test set.
        #[arg(long, default_value = "L0")]
        level: String,
        /// Bounding-box noise β applied to queries.
        #[arg(long, default_value_t = 0.0)]
        beta_test: f64,
        #[arg(long, default_value_t = 9000)]
        eval_seed: u64,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Sweep one training/evaluation axis and emit the result table.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// One of: s_occ, beta_train, beta_test, reference_design.
        #[arg(long)]
        axis: String,
        /// Comma-separated grid values.
        #[arg(long)]
        values: String,
        /// Occlusion levels to evaluate at, comma separated.
        #[arg(long, default_value = "L0")]
        levels: String,
        #[arg(long, default_value_t = 0.0)]
        beta_test: f64,
        #[arg(long, default_value_t = 0.2)]
        holdout: f64,
        #[arg(long, default_value_t = 9000)]
        eval_seed: u64,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Loss-variant ablation (sweep over the loss axis).
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated variants (contrastivepose, fixedcontrastive,
        /// tripletdynamic).
        #[arg(long, default_value = "contrastivepose,fixedcontrastive")]
        variants: String,
        #[arg(long, default_value = "L0")]
        levels: String,
        #[arg(long, default_value_t = 0.2)]
        holdout: f64,
        #[arg(long, default_value_t = 9000)]
        eval_seed: u64,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Time the two inference stages (embedding, nearest-neighbour search).
    Bench {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long, default_value_t = 1000)]
        repetitions: usize,
        /// Also time a linear-scan index for comparison.
        #[arg(long, default_value_t = false)]
        compare_linear: bool,
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

fn read_config<T: serde::de::DeserializeOwned + Default>(path: &Option<PathBuf>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            Ok(serde_json::from_str(&text)?)
        }
    }
}

fn write_or_print(path: &Option<PathBuf>, content: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, content)?,
        None => print!("{content}"),
    }
    Ok(())
}

fn parse_levels(levels: &str) -> Result<Vec<OcclusionLevel>> {
    levels.split(',').map(|s| s.trim().parse()).collect()
}

fn eval_summary(report: &EvalReport) -> serde_json::Value {
    let weighted: serde_json::Map<String, serde_json::Value> = report
        .levels()
        .into_iter()
        .filter_map(|level| {
            report.weighted(level).map(|m| {
                (
                    level.to_string(),
                    serde_json::to_value(m).expect("metrics serialize"),
                )
            })
        })
        .collect();
    serde_json::json!({ "rows": report.rows, "weighted": weighted })
}

fn run() -> Result<()> {
    match Cli::parse().command {
        Command::GenerateData {
            config,
            out,
            seed,
            n_samples,
        } => {
            let mut cfg: DatasetConfig = read_config(&config)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if let Some(n) = n_samples {
                cfg.n_samples = n;
            }
            let samples = generate_dataset(&cfg)?;
            write_jsonl(&out, &samples)?;
            eprintln!("wrote {} samples to {}", samples.len(), out.display());
        }
        Command::Train {
            config,
            data,
            out,
            history,
        } => {
            let cfg: TrainConfig = read_config(&config)?;
            let samples = read_jsonl(&data)?;
            let outcome = train(&samples, &cfg)?;
            save_checkpoint(&out, &outcome.encoders, &cfg)?;
            if let Some(h) = history {
                let mut csv = String::from("epoch,mean_loss\n");
                for (e, l) in outcome.loss_history.iter().enumerate() {
                    csv.push_str(&format!("{e},{l}\n"));
                }
                std::fs::write(h, csv)?;
            }
            let first = outcome.loss_history.first().copied().unwrap_or(0.0);
            let last = outcome.loss_history.last().copied().unwrap_or(0.0);
            eprintln!(
                "trained {} epochs; mean loss {first:.6} -> {last:.6}; checkpoint {}",
                cfg.epochs,
                out.display()
            );
        }
        Command::BuildIndex {
            model,
            data,
            design,
            backend,
            renderings_per_pose,
            sphere,
            out,
        } => {
            let (encoders, _) = load_checkpoint(&model)?;
            let samples = read_jsonl(&data)?;
            let kind: ReferenceSetKind = design.parse()?;
            let design = ReferenceSetDesign {
                kind,
                renderings_per_pose,
            };
            let sphere: ViewingSphere = read_config(&sphere)?;
            let backend: Backend = backend.parse()?;
            let refs = build_reference_poses(&design, &samples, &sphere, encoders.feat_dim())?;
            let index = build_index(&refs, &encoders.render, backend)?;
            save_index(&out, &index)?;
            eprintln!("indexed {} references to {}", index.len(), out.display());
        }
        Command::Query {
            model,
            index,
            data,
            out,
        } => {
            let (encoders, _) = load_checkpoint(&model)?;
            let index = load_index(&index)?;
            let samples = read_jsonl(&data)?;
            let mut csv = String::from(
                "query_id,pred_azimuth_deg,pred_elevation_deg,pred_inplane_deg,distance,source_id\n",
            );
            for s in &samples {
                let hit = query(&index, &s.camera_feat, &encoders.camera)?;
                csv.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    s.id,
                    hit.pose.azimuth.to_degrees(),
                    hit.pose.elevation.to_degrees(),
                    hit.pose.inplane.to_degrees(),
                    hit.distance,
                    hit.source_id
                ));
            }
            write_or_print(&out, &csv)?;
        }
        Command::Eval {
            model,
            index,
            queries,
            level,
            beta_test,
            eval_seed,
            csv,
            json,
        } => {
            let (encoders, _) = load_checkpoint(&model)?;
            let index = load_index(&index)?;
            let query_samples = read_jsonl(&queries)?;
            let conditions = EvalConditions {
                occlusion_level: level.parse()?,
                beta_test,
                eval_seed,
            };
            let report = evaluate_queries(&encoders, &index, &query_samples, &conditions)?;
            write_or_print(&csv, &report.to_csv())?;
            if json.is_some() {
                let text = serde_json::to_string_pretty(&eval_summary(&report))?;
                write_or_print(&json, &(text + "\n"))?;
            }
        }
        Command::Sweep {
            config,
            data,
            axis,
            values,
            levels,
            beta_test,
            holdout,
            eval_seed,
            csv,
            json,
        } => {
            let cfg: TrainConfig = read_config(&config)?;
            let samples = read_jsonl(&data)?;
            let floats = |values: &str| -> Result<Vec<f64>> {
                values
                    .split(',')
                    .map(|v| {
                        v.trim().parse::<f64>().map_err(|e| {
                            poseret_core::Error::InvalidConfig(format!("bad value `{v}`: {e}"))
                        })
                    })
                    .collect()
            };
            let grid = match axis.as_str() {
                "s_occ" => ExperimentGrid::SOcc(floats(&values)?),
                "beta_train" => ExperimentGrid::BetaTrain(floats(&values)?),
                "beta_test" => ExperimentGrid::BetaTest(floats(&values)?),
                "reference_design" => ExperimentGrid::ReferenceDesign(
                    values
                        .split(',')
                        .map(|v| v.trim().parse())
                        .collect::<Result<Vec<_>>>()?,
                ),
                other => {
                    return Err(poseret_core::Error::InvalidConfig(format!(
                        "unknown sweep axis `{other}`"
                    )))
                }
            };
            let mut setup = ExperimentSetup::new(cfg, ViewingSphere::default());
            setup.holdout_fraction = holdout;
            setup.eval_levels = parse_levels(&levels)?;
            setup.eval_beta_test = beta_test;
            setup.eval_seed = eval_seed;
            let table = run_experiment(&grid, &samples, &setup)?;
            write_or_print(&csv, &table.to_csv())?;
            if json.is_some() {
                let text = serde_json::to_string_pretty(&table)?;
                write_or_print(&json, &(text + "\n"))?;
            }
        }
        Command::Ablate {
            config,
            data,
            variants,
            levels,
            holdout,
            eval_seed,
            csv,
            json,
        } => {
            let cfg: TrainConfig = read_config(&config)?;
            let samples = read_jsonl(&data)?;
            let variants: Vec<LossVariant> = variants
                .split(',')
                .map(|v| v.trim().parse())
                .collect::<Result<Vec<_>>>()?;
            let mut setup = ExperimentSetup::new(cfg, ViewingSphere::default());
            setup.holdout_fraction = holdout;
            setup.eval_levels = parse_levels(&levels)?;
            setup.eval_seed = eval_seed;
            let table = run_experiment(&ExperimentGrid::LossVariant(variants), &samples, &setup)?;
            write_or_print(&csv, &table.to_csv())?;
            if json.is_some() {
                let text = serde_json::to_string_pretty(&table)?;
                write_or_print(&json, &(text + "\n"))?;
            }
        }
        Command::Bench {
            model,
            index,
            queries,
            repetitions,
            compare_linear,
            json,
        } => {
            let (encoders, _) = load_checkpoint(&model)?;
            let index = load_index(&index)?;
            let samples = read_jsonl(&queries)?;
            let feats: Vec<Vec<f64>> = samples.iter().map(|s| s.camera_feat.clone()).collect();
            let report = benchmark(&index, &feats, &encoders.camera, repetitions)?;
            let mut summary = serde_json::json!({
                "backend": format!("{:?}", index.backend()),
                "rows": index.len(),
                "repetitions": report.repetitions,
                "n_queries": report.n_queries,
                "embed_mean_s": report.embed_mean_s,
                "search_mean_s": report.search_mean_s,
                "embed_fraction": report.embed_fraction(),
            });
            if compare_linear {
                let linear = poseret_core::index::ReferenceIndex::from_rows(
                    index.rows().to_vec(),
                    Backend::Linear,
                    index.encoder_hash().to_owned(),
                )?;
                let lin_report = benchmark(&linear, &feats, &encoders.camera, repetitions)?;
                summary["linear_search_mean_s"] = serde_json::json!(lin_report.search_mean_s);
            }
            let text = serde_json::to_string_pretty(&summary)? + "\n";
            write_or_print(&json, &text)?;
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
