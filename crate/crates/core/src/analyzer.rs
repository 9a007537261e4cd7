//! Overlap and functionality-coverage analysis of an instruction corpus
//! against a test set.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hashing::derive_seed;
use crate::providers::mock::parse_string_list;
use crate::providers::{
    cosine, prompts, reaches, ChatModel, Embedder, Embedding, GenerationRequest, ProviderError,
};
use crate::store::{read_jsonl, write_atomic, write_json, StoreError};

pub const HISTOGRAM_BIN_WIDTH: f64 = 0.05;
pub const TOP_PAIRS: usize = 20;
const EMBED_CHUNK: usize = 128;

#[derive(Debug, Error)]
pub enum AnalyzerError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("{0} corpus is empty")]
    EmptyCorpus(&'static str),
    #[error("removal ratio {0} is outside (0, 1)")]
    InvalidRatio(f64),
    #[error("invalid prefix sizes: {0}")]
    InvalidSizes(String),
    #[error("could not write CSV {path}: {message}")]
    Csv { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusItem {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub synthetic_id: String,
    pub test_id: String,
    pub cosine: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdFraction {
    pub threshold: f64,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    /// Best-matching test item for each synthetic item, in corpus order.
    pub pair_scores: Vec<PairScore>,
    pub histogram: Vec<HistogramBin>,
    pub fraction_above: Vec<ThresholdFraction>,
    pub top_pairs: Vec<PairScore>,
    /// Full synthetic-by-test cosine matrix.
    #[serde(skip)]
    pub matrix: Vec<Vec<f64>>,
}

impl SimilarityReport {
    pub fn fraction_above(&self, threshold: f64) -> Option<f64> {
        self.fraction_above
            .iter()
            .find(|f| f.threshold == threshold)
            .map(|f| f.fraction)
    }
}

/// Embeds `texts` in fixed-size chunks.
pub fn embed_all(
    texts: &[String],
    embedder: &dyn Embedder,
) -> Result<Vec<Embedding>, ProviderError> {
    let mut out = Vec::with_capacity(texts.len());
    for chunk in texts.chunks(EMBED_CHUNK) {
        out.extend(embedder.embed_texts(chunk)?);
    }
    Ok(out)
}

pub fn similarity_matrix(rows: &[Embedding], cols: &[Embedding]) -> Vec<Vec<f64>> {
    rows.par_iter()
        .map(|r| cols.iter().map(|c| cosine(r, c)).collect())
        .collect()
}

/// Bin counts over [0, 1]. Values below 0 land in the first bin and 1.0 in
/// the last.
pub fn histogram(values: &[f64], bin_width: f64) -> Vec<HistogramBin> {
    let n = (1.0 / bin_width).round() as usize;
    let mut bins: Vec<HistogramBin> = (0..n)
        .map(|i| HistogramBin {
            lo: i as f64 * bin_width,
            hi: (i + 1) as f64 * bin_width,
            count: 0,
        })
        .collect();
    for v in values {
        let idx = ((v.clamp(0.0, 1.0) / bin_width).floor() as usize).min(n - 1);
        bins[idx].count += 1;
    }
    bins
}

/// Fraction of `values` strictly greater than `threshold`.
pub fn fraction_above(values: &[f64], threshold: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().filter(|v| **v > threshold).count() as f64 / values.len() as f64
}

pub fn overlap_report(
    synthetic: &[CorpusItem],
    test: &[CorpusItem],
    embedder: &dyn Embedder,
    thresholds: &[f64],
) -> Result<SimilarityReport, AnalyzerError> {
    if synthetic.is_empty() {
        return Err(AnalyzerError::EmptyCorpus("synthetic"));
    }
    if test.is_empty() {
        return Err(AnalyzerError::EmptyCorpus("test"));
    }
    let texts = |items: &[CorpusItem]| items.iter().map(|i| i.text.clone()).collect::<Vec<_>>();
    let se = embed_all(&texts(synthetic), embedder)?;
    let te = embed_all(&texts(test), embedder)?;
    Ok(report_from_matrix(
        synthetic,
        test,
        similarity_matrix(&se, &te),
        thresholds,
    ))
}

/// Builds the report from a precomputed synthetic-by-test matrix.
pub fn report_from_matrix(
    synthetic: &[CorpusItem],
    test: &[CorpusItem],
    matrix: Vec<Vec<f64>>,
    thresholds: &[f64],
) -> SimilarityReport {
    let pair_scores: Vec<PairScore> = synthetic
        .iter()
        .zip(&matrix)
        .map(|(s, row)| {
            // First maximum wins, so ties resolve to the earlier test item.
            let (j, best) = row
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (j, v)| {
                    if *v > acc.1 {
                        (j, *v)
                    } else {
                        acc
                    }
                });
            PairScore {
                synthetic_id: s.id.clone(),
                test_id: test[j].id.clone(),
                cosine: best,
            }
        })
        .collect();
    let maxima: Vec<f64> = pair_scores.iter().map(|p| p.cosine).collect();
    let mut top_pairs = pair_scores.clone();
    top_pairs.sort_by(|a, b| {
        b.cosine
            .total_cmp(&a.cosine)
            .then_with(|| a.synthetic_id.cmp(&b.synthetic_id))
    });
    top_pairs.truncate(TOP_PAIRS);
    SimilarityReport {
        histogram: histogram(&maxima, HISTOGRAM_BIN_WIDTH),
        fraction_above: thresholds
            .iter()
            .map(|t| ThresholdFraction {
                threshold: *t,
                fraction: fraction_above(&maxima, *t),
            })
            .collect(),
        pair_scores,
        top_pairs,
        matrix,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemovalSubset {
    pub ratio: f64,
    pub removed: usize,
    /// Ids kept after dropping the most test-similar items.
    pub most_similar_removed: Vec<String>,
    /// Ids kept after dropping a seeded uniform sample of the same size.
    pub random_removed: Vec<String>,
}

/// Items to remove for ratio `r` out of `n`: ⌈r·n⌉, with a small tolerance
/// so that products like 0.1 × 30 are not rounded up past the exact value.
pub fn removal_count(ratio: f64, n: usize) -> usize {
    ((ratio * n as f64) - 1e-9).ceil().max(0.0) as usize
}

pub fn removal_subsets(
    synthetic: &[CorpusItem],
    report: &SimilarityReport,
    ratios: &[f64],
    seed: u64,
) -> Result<Vec<RemovalSubset>, AnalyzerError> {
    let score: BTreeMap<&str, f64> = report
        .pair_scores
        .iter()
        .map(|p| (p.synthetic_id.as_str(), p.cosine))
        .collect();
    let mut ranked: Vec<&CorpusItem> = synthetic.iter().collect();
    ranked.sort_by(|a, b| {
        let (sa, sb) = (
            score
                .get(a.id.as_str())
                .copied()
                .unwrap_or(f64::NEG_INFINITY),
            score
                .get(b.id.as_str())
                .copied()
                .unwrap_or(f64::NEG_INFINITY),
        );
        sb.total_cmp(&sa).then_with(|| a.id.cmp(&b.id))
    });
    let n = synthetic.len();
    ratios
        .iter()
        .map(|&r| {
            if !(r > 0.0 && r < 1.0) {
                return Err(AnalyzerError::InvalidRatio(r));
            }
            let m = removal_count(r, n);
            let dropped: BTreeSet<&str> = ranked[..m].iter().map(|i| i.id.as_str()).collect();
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive_seed(seed, &[b"removal", &r.to_le_bytes()]));
            let random_dropped: BTreeSet<usize> = sample(&mut rng, n, m).into_iter().collect();
            Ok(RemovalSubset {
                ratio: r,
                removed: m,
                most_similar_removed: synthetic
                    .iter()
                    .filter(|i| !dropped.contains(i.id.as_str()))
                    .map(|i| i.id.clone())
                    .collect(),
                random_removed: synthetic
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| !random_dropped.contains(k))
                    .map(|(_, i)| i.id.clone())
                    .collect(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomicFunctionality {
    pub text: String,
    #[serde(skip)]
    pub embedding: Embedding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub task: String,
    pub functionalities: Vec<AtomicFunctionality>,
    /// Set when the decomposer output could not be parsed or was empty.
    pub flagged: bool,
}

pub fn decompose_task(
    task: &str,
    decomposer: &dyn ChatModel,
    embedder: &dyn Embedder,
) -> Result<Decomposition, AnalyzerError> {
    let req = GenerationRequest::new(prompts::DECOMPOSE_SYSTEM).text(prompts::decompose_user(task));
    let raw = decomposer.chat_generate(&req)?;
    let phrases: Vec<String> = parse_string_list(&raw)
        .unwrap_or_default()
        .into_iter()
        .map(|p| p.trim().to_string())
        .filter(|p| !p.is_empty())
        .collect();
    if phrases.is_empty() {
        log::warn!("decomposer returned no functionalities for {task:?}");
        return Ok(Decomposition {
            task: task.to_string(),
            functionalities: Vec::new(),
            flagged: true,
        });
    }
    let embeddings = embed_all(&phrases, embedder)?;
    Ok(Decomposition {
        task: task.to_string(),
        functionalities: phrases
            .into_iter()
            .zip(embeddings)
            .map(|(text, embedding)| AtomicFunctionality { text, embedding })
            .collect(),
        flagged: false,
    })
}

/// Decomposes every task in parallel, preserving order.
pub fn decompose_all(
    tasks: &[String],
    decomposer: &dyn ChatModel,
    embedder: &dyn Embedder,
) -> Result<Vec<Decomposition>, AnalyzerError> {
    tasks
        .par_iter()
        .map(|t| decompose_task(t, decomposer, embedder))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskCoverage {
    pub task_id: String,
    pub required: usize,
    pub covered: usize,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridCell {
    /// Number of required functionalities.
    pub complexity: usize,
    pub covered: usize,
    pub tasks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub match_threshold: f64,
    pub per_task: Vec<TaskCoverage>,
    /// Tasks with no required functionality.
    pub skipped: Vec<String>,
    pub aggregate: f64,
    pub grid: Vec<GridCell>,
}

/// A required functionality counts as covered when some pool entry reaches
/// `match_threshold` cosine with it.
pub fn coverage(
    required: &[(String, Vec<AtomicFunctionality>)],
    pool: &[AtomicFunctionality],
    match_threshold: f64,
) -> CoverageReport {
    let mut per_task = Vec::new();
    let mut skipped = Vec::new();
    for (id, req) in required {
        if req.is_empty() {
            log::warn!("task {id} has no required functionalities; skipped");
            skipped.push(id.clone());
            continue;
        }
        let covered = req
            .iter()
            .filter(|r| {
                pool.iter()
                    .any(|p| reaches(cosine(&r.embedding, &p.embedding), match_threshold))
            })
            .count();
        per_task.push(TaskCoverage {
            task_id: id.clone(),
            required: req.len(),
            covered,
            fraction: covered as f64 / req.len() as f64,
        });
    }
    let aggregate = if per_task.is_empty() {
        0.0
    } else {
        per_task.iter().map(|t| t.fraction).sum::<f64>() / per_task.len() as f64
    };
    let mut cells: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for t in &per_task {
        *cells.entry((t.required, t.covered)).or_default() += 1;
    }
    CoverageReport {
        match_threshold,
        per_task,
        skipped,
        aggregate,
        grid: cells
            .into_iter()
            .map(|((complexity, covered), tasks)| GridCell {
                complexity,
                covered,
                tasks,
            })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub size: usize,
    pub coverage: f64,
}

/// Aggregate coverage of the functionalities of the first `k` synthetic
/// decompositions, for each `k` in `sizes`.
pub fn coverage_curve(
    synthetic: &[Decomposition],
    sizes: &[usize],
    required: &[(String, Vec<AtomicFunctionality>)],
    match_threshold: f64,
) -> Result<Vec<CurvePoint>, AnalyzerError> {
    if sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(AnalyzerError::InvalidSizes(
            "sizes must be strictly increasing".into(),
        ));
    }
    if let Some(&last) = sizes.last() {
        if last > synthetic.len() {
            return Err(AnalyzerError::InvalidSizes(format!(
                "size {last} exceeds the {} synthetic instructions",
                synthetic.len()
            )));
        }
    }
    Ok(sizes
        .iter()
        .map(|&k| {
            let pool: Vec<AtomicFunctionality> = synthetic[..k]
                .iter()
                .flat_map(|d| d.functionalities.iter().cloned())
                .collect();
            CurvePoint {
                size: k,
                coverage: coverage(required, &pool, match_threshold).aggregate,
            }
        })
        .collect())
}

/// Loads a corpus: JSONL rows with `id` and `text` (or `instruction`), or
/// plain text with one instruction per line.
pub fn load_corpus(path: &Path) -> Result<Vec<CorpusItem>, AnalyzerError> {
    #[derive(Deserialize)]
    struct Row {
        id: Option<String>,
        text: Option<String>,
        instruction: Option<String>,
    }
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("item")
        .to_string();
    if path.extension().is_some_and(|e| e == "jsonl") {
        let rows: Vec<Row> = read_jsonl(path)?;
        return Ok(rows
            .into_iter()
            .enumerate()
            .filter_map(|(i, r)| {
                let text = r.text.or(r.instruction)?;
                Some(CorpusItem {
                    id: r.id.unwrap_or_else(|| format!("{stem}-{i:04}")),
                    text,
                })
            })
            .collect());
    }
    let raw = std::fs::read_to_string(path).map_err(|e| StoreError::io(path, e))?;
    Ok(raw
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .enumerate()
        .map(|(i, l)| CorpusItem {
            id: format!("{stem}-{i:04}"),
            text: l.to_string(),
        })
        .collect())
}

fn write_csv<R: Serialize>(path: &Path, rows: &[R]) -> Result<(), AnalyzerError> {
    let csv_err = |e: csv::Error| AnalyzerError::Csv {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| AnalyzerError::Csv {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    Ok(write_atomic(path, &bytes)?)
}

/// Writes overlap.json, overlap_pairs.csv, overlap_histogram.csv and
/// removal_subsets.json under `dir`.
pub fn save_overlap(
    dir: &Path,
    report: &SimilarityReport,
    removal: &[RemovalSubset],
) -> Result<(), AnalyzerError> {
    write_json(&dir.join("overlap.json"), report)?;
    write_csv(&dir.join("overlap_pairs.csv"), &report.pair_scores)?;
    write_csv(&dir.join("overlap_histogram.csv"), &report.histogram)?;
    write_json(&dir.join("removal_subsets.json"), removal)?;
    Ok(())
}

/// Writes coverage.json, coverage_tasks.csv, coverage_grid.csv and
/// coverage_curve.csv under `dir`.
pub fn save_coverage(
    dir: &Path,
    report: &CoverageReport,
    curve: &[CurvePoint],
) -> Result<(), AnalyzerError> {
    #[derive(Serialize)]
    struct Out<'a> {
        report: &'a CoverageReport,
        curve: &'a [CurvePoint],
    }
    write_json(&dir.join("coverage.json"), &Out { report, curve })?;
    write_csv(&dir.join("coverage_tasks.csv"), &report.per_task)?;
    write_csv(&dir.join("coverage_grid.csv"), &report.grid)?;
    write_csv(&dir.join("coverage_curve.csv"), curve)?;
    Ok(())
}
