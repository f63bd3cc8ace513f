//! Offline-embedded reference set and exact nearest-neighbour pose lookup.
//!
//! A [`ReferenceIndex`] is frozen by construction: rows go in once, the
//! backend structure is built, and the index is immutable (and freely
//! shareable) from then on. Linear scan and kd-tree backends return
//! identical rows, including on ties, which are resolved toward the lowest
//! `source_id`. Distances are compared squared; the reported distance is
//! the true L2.

use crate::dataset::ReferencePose;
use crate::error::{Error, Result};
use crate::kdtree::{dist_sq, KdTree};
use crate::nn::Mlp;
use crate::pose::EulerPose;
use crate::train::fnv1a64;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Backend {
    Linear,
    KdTree,
}

impl std::str::FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "linear" => Ok(Self::Linear),
            "kdtree" | "kd-tree" | "kd" => Ok(Self::KdTree),
            other => Err(Error::InvalidConfig(format!(
                "unknown backend `{other}` (expected linear|kdtree)"
            ))),
        }
    }
}

/// One stored reference row. Embeddings are quantized to f32, the
/// serialization precision; queries run against exactly these values so a
/// save/load round trip cannot change any result.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexRow {
    pub embedding: Vec<f32>,
    pub pose: EulerPose,
    pub source_id: u64,
}

/// Nearest-neighbour result.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryHit {
    pub pose: EulerPose,
    /// True L2 distance in embedding space.
    pub distance: f64,
    pub source_id: u64,
}

/// Frozen reference set supporting exact nearest-neighbour queries.
#[derive(Debug, Clone)]
pub struct ReferenceIndex {
    dim: usize,
    rows: Vec<IndexRow>,
    /// f64 mirror of the row embeddings; both backends measure distances on
    /// this matrix so their results agree bitwise.
    coords: Vec<f64>,
    backend: Backend,
    kdtree: Option<KdTree>,
    encoder_hash: String,
}

impl ReferenceIndex {
    /// Freeze a set of rows under the chosen backend.
    pub fn from_rows(rows: Vec<IndexRow>, backend: Backend, encoder_hash: String) -> Result<Self> {
        let first = rows.first().ok_or(Error::EmptyInput("reference rows"))?;
        let dim = first.embedding.len();
        if dim == 0 {
            return Err(Error::InvalidConfig("zero-dimensional embeddings".into()));
        }
        let mut coords = Vec::with_capacity(rows.len() * dim);
        for r in &rows {
            if r.embedding.len() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    got: r.embedding.len(),
                });
            }
            coords.extend(r.embedding.iter().map(|&v| v as f64));
        }
        let kdtree = match backend {
            Backend::Linear => None,
            Backend::KdTree => Some(KdTree::build(
                coords.clone(),
                dim,
                rows.iter().map(|r| r.source_id).collect(),
            )),
        };
        Ok(Self {
            dim,
            rows,
            coords,
            backend,
            kdtree,
            encoder_hash,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn backend(&self) -> Backend {
        self.backend
    }

    pub fn encoder_hash(&self) -> &str {
        &self.encoder_hash
    }

    pub fn rows(&self) -> &[IndexRow] {
        &self.rows
    }

    fn coord_row(&self, row: usize) -> &[f64] {
        &self.coords[row * self.dim..(row + 1) * self.dim]
    }

    /// Nearest row to an already-embedded query.
    pub fn nearest(&self, query: &[f64]) -> Result<QueryHit> {
        if query.len() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                got: query.len(),
            });
        }
        let (row, d2) = match (self.backend, &self.kdtree) {
            (Backend::KdTree, Some(tree)) => {
                tree.nearest(query).ok_or(Error::EmptyInput("index rows"))?
            }
            _ => {
                let mut best = (usize::MAX, f64::INFINITY, u64::MAX);
                for r in 0..self.rows.len() {
                    let d2 = dist_sq(query, self.coord_row(r));
                    let id = self.rows[r].source_id;
                    if d2 < best.1 || (d2 == best.1 && id < best.2) {
                        best = (r, d2, id);
                    }
                }
                (best.0, best.1)
            }
        };
        let hit = &self.rows[row];
        Ok(QueryHit {
            pose: hit.pose,
            distance: d2.sqrt(),
            source_id: hit.source_id,
        })
    }
}

/// Embed every reference rendering with the frozen render encoder and
/// freeze the index. Row `source_id`s follow the input order.
pub fn build_index(
    refs: &[ReferencePose],
    encoder_render: &Mlp,
    backend: Backend,
) -> Result<ReferenceIndex> {
    if refs.is_empty() {
        return Err(Error::EmptyInput("reference set"));
    }
    let mut rows = Vec::with_capacity(refs.len());
    for (i, r) in refs.iter().enumerate() {
        let embedding: Vec<f32> = encoder_render
            .forward(&r.render_feat)?
            .into_iter()
            .map(|v| v as f32)
            .collect();
        rows.push(IndexRow {
            embedding,
            pose: r.pose,
            source_id: i as u64,
        });
    }
    ReferenceIndex::from_rows(rows, backend, encoder_fingerprint(encoder_render))
}

/// Embed a camera feature vector with E_c and look up the nearest
/// reference: the predicted pose is the retrieved row's label.
pub fn query(
    index: &ReferenceIndex,
    camera_feat: &[f64],
    encoder_camera: &Mlp,
) -> Result<QueryHit> {
    let embedding = encoder_camera.forward(camera_feat)?;
    index.nearest(&embedding)
}

/// Fingerprint of an encoder's parameters at serialization precision.
pub fn encoder_fingerprint(net: &Mlp) -> String {
    let mut bytes = Vec::with_capacity(net.param_count() * 4);
    for p in net.flat_params() {
        bytes.extend_from_slice(&(p as f32).to_le_bytes());
    }
    format!("{:016x}", fnv1a64(&bytes))
}

const INDEX_FORMAT: &str = "pose-embed-index";

#[derive(Debug, Serialize, Deserialize)]
struct IndexHeader {
    format: String,
    version: u32,
    dim: usize,
    count: usize,
    backend: Backend,
    encoder_hash: String,
}

/// Serialize: JSON header line, little-endian f32 embedding matrix,
/// f64 pose table (azimuth, elevation, in-plane per row), u64 source ids.
pub fn save_index<P: AsRef<Path>>(path: P, index: &ReferenceIndex) -> Result<()> {
    let header = IndexHeader {
        format: INDEX_FORMAT.to_owned(),
        version: 1,
        dim: index.dim,
        count: index.rows.len(),
        backend: index.backend,
        encoder_hash: index.encoder_hash.clone(),
    };
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for row in &index.rows {
        for v in &row.embedding {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    for row in &index.rows {
        for v in [row.pose.azimuth, row.pose.elevation, row.pose.inplane] {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    for row in &index.rows {
        w.write_all(&row.source_id.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Load an index written by [`save_index`], rebuilding the backend
/// structure. Queries against the reloaded index match the original
/// bitwise.
pub fn load_index<P: AsRef<Path>>(path: P) -> Result<ReferenceIndex> {
    let mut reader = BufReader::new(std::fs::File::open(path)?);
    let mut header_line = String::new();
    reader.read_line(&mut header_line)?;
    let header: IndexHeader = serde_json::from_str(header_line.trim_end())?;
    if header.format != INDEX_FORMAT {
        return Err(Error::Corrupt(format!(
            "unexpected index format `{}`",
            header.format
        )));
    }

    let mut payload = Vec::new();
    reader.read_to_end(&mut payload)?;
    let emb_bytes = header.count * header.dim * 4;
    let pose_bytes = header.count * 3 * 8;
    let id_bytes = header.count * 8;
    if payload.len() != emb_bytes + pose_bytes + id_bytes {
        return Err(Error::Corrupt(format!(
            "index payload holds {} bytes, expected {}",
            payload.len(),
            emb_bytes + pose_bytes + id_bytes
        )));
    }

    let mut rows = Vec::with_capacity(header.count);
    let (emb, rest) = payload.split_at(emb_bytes);
    let (poses, ids) = rest.split_at(pose_bytes);
    for r in 0..header.count {
        let embedding: Vec<f32> = emb[r * header.dim * 4..(r + 1) * header.dim * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let p = &poses[r * 24..(r + 1) * 24];
        let read_f64 = |o: usize| {
            f64::from_le_bytes([
                p[o],
                p[o + 1],
                p[o + 2],
                p[o + 3],
                p[o + 4],
                p[o + 5],
                p[o + 6],
                p[o + 7],
            ])
        };
        let pose = EulerPose {
            azimuth: read_f64(0),
            elevation: read_f64(8),
            inplane: read_f64(16),
        };
        let i = &ids[r * 8..(r + 1) * 8];
        let source_id = u64::from_le_bytes([i[0], i[1], i[2], i[3], i[4], i[5], i[6], i[7]]);
        rows.push(IndexRow {
            embedding,
            pose,
            source_id,
        });
    }
    ReferenceIndex::from_rows(rows, header.backend, header.encoder_hash)
}

/// Wall-clock means of the two inference stages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub n_queries: usize,
    pub repetitions: usize,
    /// Mean seconds to embed one query with E_c.
    pub embed_mean_s: f64,
    /// Mean seconds for one nearest-neighbour search.
    pub search_mean_s: f64,
}

impl BenchReport {
    pub fn is_empty(&self) -> bool {
        self.n_queries == 0
    }

    /// Fraction of total per-query time spent embedding.
    pub fn embed_fraction(&self) -> f64 {
        let total = self.embed_mean_s + self.search_mean_s;
        if total == 0.0 {
            0.0
        } else {
            self.embed_mean_s / total
        }
    }
}

/// Time the two-stage inference (embed, then search) averaged over
/// `repetitions` passes over the query list.
pub fn benchmark(
    index: &ReferenceIndex,
    queries: &[Vec<f64>],
    encoder_camera: &Mlp,
    repetitions: usize,
) -> Result<BenchReport> {
    if queries.is_empty() || repetitions == 0 {
        return Ok(BenchReport {
            n_queries: 0,
            repetitions,
            embed_mean_s: 0.0,
            search_mean_s: 0.0,
        });
    }
    let mut embed_total = 0.0;
    let mut search_total = 0.0;
    let mut guard = 0.0f64;
    for _ in 0..repetitions {
        for q in queries {
            let t0 = Instant::now();
            let emb = encoder_camera.forward(q)?;
            let t1 = Instant::now();
            let hit = index.nearest(&emb)?;
            let t2 = Instant::now();
            embed_total += t1.duration_since(t0).as_secs_f64();
            search_total += t2.duration_since(t1).as_secs_f64();
            guard += hit.distance;
        }
    }
    std::hint::black_box(guard);
    let n = (repetitions * queries.len()) as f64;
    Ok(BenchReport {
        n_queries: queries.len(),
        repetitions,
        embed_mean_s: embed_total / n,
        search_mean_s: search_total / n,
    })
}
