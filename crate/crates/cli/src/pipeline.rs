//! Per-sample alignment: saliency, weighting, flattening, cost, transport,
//! fusion and key-frame ranking, run over a manifest on a worker pool.

use std::path::Path;

use grace_core::io::{
    format_weight, load_manifest, read_embedding, render_span_svg, write_atomic, write_plan_csv,
    write_ranking_csv, write_span_csv, Embedding, IoError, SampleManifest,
};
use grace_core::motion::{apply_weights, saliency_map, MotionError, SaliencyMap};
use grace_core::ot::{
    cost_matrix, fuse, saliency_marginal, sinkhorn, transport_cost, uniform_marginal, OtError,
};
use grace_core::span::{aggregate_spans, rank_key_frames, Span, SpanError};
use grace_core::tensor::{flatten_visual, FeatureTensor, TensorError, TokenSequence};
use grace_core::PatchGrid;
use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::CliError;

/// Why a sample produced no plan.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleFailure {
    /// Error variant name, e.g. `ZeroNormVector`.
    pub kind: String,
    pub message: String,
    /// Numerical failures map to exit code 3 under `--strict`.
    pub numerical: bool,
}

impl SampleFailure {
    fn data(kind: &str, message: impl Into<String>) -> Self {
        Self {
            kind: kind.into(),
            message: message.into(),
            numerical: false,
        }
    }
}

impl From<OtError> for SampleFailure {
    fn from(e: OtError) -> Self {
        let (kind, numerical) = match &e {
            OtError::ZeroNormVector { .. } => ("ZeroNormVector", false),
            OtError::DimensionMismatch(_) => ("DimensionMismatch", false),
            OtError::InvalidMarginal(_) => ("InvalidMarginal", false),
            OtError::InvalidConfig(_) => ("InvalidConfig", false),
            OtError::NumericalUnderflow { .. } => ("NumericalUnderflow", true),
            OtError::NotConverged { .. } => ("NotConverged", true),
        };
        Self {
            kind: kind.into(),
            message: e.to_string(),
            numerical,
        }
    }
}

impl From<IoError> for SampleFailure {
    fn from(e: IoError) -> Self {
        let kind = match &e {
            IoError::Io { .. } => "Io",
            IoError::ParseError(_) => "ParseError",
            IoError::MissingField { .. } => "MissingField",
            IoError::SpanOutOfRange { .. } => "SpanOutOfRange",
            IoError::InvalidRecord { .. } => "InvalidRecord",
            IoError::BadMagic(_) => "BadMagic",
            IoError::BadVersion(_) => "BadVersion",
            IoError::BadRank(_) => "BadRank",
            IoError::TruncatedPayload { .. } => "TruncatedPayload",
            IoError::TrailingBytes(_) => "TrailingBytes",
            IoError::DimsMismatch { .. } => "DimsMismatch",
            IoError::Tensor(_) => "InvalidTensor",
            IoError::Inconsistent(_) => "Inconsistent",
        };
        Self::data(kind, e.to_string())
    }
}

impl From<TensorError> for SampleFailure {
    fn from(e: TensorError) -> Self {
        Self::data("InvalidTensor", e.to_string())
    }
}

impl From<MotionError> for SampleFailure {
    fn from(e: MotionError) -> Self {
        Self::data("Saliency", e.to_string())
    }
}

impl From<SpanError> for SampleFailure {
    fn from(e: SpanError) -> Self {
        Self::data("Span", e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Converged,
    NotConverged,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleReport {
    pub id: String,
    pub label: String,
    pub outcome: Outcome,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<SampleFailure>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub row_violation: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub col_violation: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transport_cost: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub key_frames: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub plan_csv: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ranking_csv: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub samples: usize,
    pub converged: usize,
    pub not_converged: usize,
    pub failed: usize,
    pub results: Vec<SampleReport>,
}

impl Summary {
    fn from_reports(results: Vec<SampleReport>) -> Self {
        let count = |o: Outcome| results.iter().filter(|r| r.outcome == o).count();
        Self {
            samples: results.len(),
            converged: count(Outcome::Converged),
            not_converged: count(Outcome::NotConverged),
            failed: count(Outcome::Failed),
            results,
        }
    }

    /// Exit status under `--strict`: numerical trouble first, then data errors.
    pub fn strict_error(&self) -> Option<CliError> {
        let numerical = self.not_converged
            + self
                .results
                .iter()
                .filter(|r| r.error.as_ref().is_some_and(|e| e.numerical))
                .count();
        if numerical > 0 {
            return Some(CliError::Numerical(format!(
                "{numerical} of {} samples had numerical problems",
                self.samples
            )));
        }
        if self.failed > 0 {
            return Some(CliError::Data(format!("{} of {} samples failed", self.failed, self.samples)));
        }
        None
    }
}

/// One sample's result: its summary row and, for converged plans, the
/// fused clip vector.
#[derive(Debug, Clone)]
pub struct Aligned {
    pub report: SampleReport,
    pub fused: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct AlignRun {
    pub summary: Summary,
    pub samples: Vec<Aligned>,
}

/// File-name-safe form of a sample id.
pub fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect()
}

struct Loaded {
    visual: FeatureTensor,
    text: TokenSequence,
}

fn load_sample(sample: &SampleManifest) -> Result<Loaded, SampleFailure> {
    let visual = match read_embedding(&sample.visual_file)? {
        Embedding::Tensor(t) => t,
        Embedding::Matrix(m) => {
            return Err(SampleFailure::data(
                "BadRank",
                format!("visual file holds a rank-2 {:?} matrix", m.dim()),
            ))
        }
    };
    if visual.dims().as_array() != sample.dims.visual {
        return Err(IoError::DimsMismatch {
            declared: sample.dims.visual.to_vec(),
            actual: visual.dims().as_array().to_vec(),
        }
        .into());
    }
    let text = match read_embedding(&sample.text_file)? {
        Embedding::Matrix(m) => m,
        Embedding::Tensor(t) => {
            return Err(SampleFailure::data(
                "BadRank",
                format!("text file holds a rank-4 {:?} tensor", t.dims().as_array()),
            ))
        }
    };
    if [text.nrows(), text.ncols()] != sample.dims.text {
        return Err(IoError::DimsMismatch {
            declared: sample.dims.text.to_vec(),
            actual: vec![text.nrows(), text.ncols()],
        }
        .into());
    }
    if text.ncols() != visual.dims().channels {
        return Err(OtError::DimensionMismatch(format!(
            "token width {} but visual channels {}",
            text.ncols(),
            visual.dims().channels
        ))
        .into());
    }
    let text = TokenSequence::new(sample.tokens.clone(), text)?;
    Ok(Loaded { visual, text })
}

fn saliency_for(cfg: &PipelineConfig, x: &FeatureTensor) -> Result<SaliencyMap, MotionError> {
    saliency_map(x, cfg.motion.mode, cfg.motion.floor)
}

fn align_sample(cfg: &PipelineConfig, sample: &SampleManifest, out: &Path) -> Result<Aligned, SampleFailure> {
    let Loaded { visual, text } = load_sample(sample)?;
    let grid = visual.grid();
    let weights = saliency_for(cfg, &visual)?;
    let weighted = apply_weights(&visual, &weights)?;
    let flat = flatten_visual(&weighted);
    let cost = cost_matrix(text.embeddings(), flat.vectors.view())?;
    let a = uniform_marginal(text.len());
    let b = if cfg.saliency_marginal {
        saliency_marginal(&weights.weights)?
    } else {
        uniform_marginal(flat.len())
    };
    let plan = sinkhorn(&cost, a.view(), b.view(), &cfg.sinkhorn)?;
    let total = transport_cost(&plan, &cost)?;
    let ranking = rank_key_frames(&plan, &grid, cfg.key_frames)?;

    let stem = file_stem(&sample.id);
    let plan_name = format!("{stem}.plan.csv");
    let ranking_name = format!("{stem}.ranking.csv");
    write_plan_csv(&plan, text.surfaces(), &grid, &out.join(&plan_name))?;
    write_ranking_csv(&ranking, &out.join(&ranking_name))?;

    let fused = if plan.converged {
        Some(fuse(&plan, flat.vectors.view(), a.view(), total)?.clip.to_vec())
    } else {
        log::warn!(
            "{}: plan not converged after {} iterations (violation {:.3e})",
            sample.id,
            plan.iterations,
            plan.max_violation()
        );
        None
    };
    Ok(Aligned {
        report: SampleReport {
            id: sample.id.clone(),
            label: sample.label.clone(),
            outcome: if plan.converged {
                Outcome::Converged
            } else {
                Outcome::NotConverged
            },
            error: None,
            iterations: Some(plan.iterations),
            row_violation: Some(plan.row_violation),
            col_violation: Some(plan.col_violation),
            transport_cost: Some(total),
            key_frames: ranking.selected_frames(),
            plan_csv: Some(plan_name),
            ranking_csv: Some(ranking_name),
        },
        fused,
    })
}

fn failed(sample: &SampleManifest, error: SampleFailure) -> Aligned {
    log::warn!("{}: {} ({})", sample.id, error.message, error.kind);
    Aligned {
        report: SampleReport {
            id: sample.id.clone(),
            label: sample.label.clone(),
            outcome: Outcome::Failed,
            error: Some(error),
            iterations: None,
            row_violation: None,
            col_violation: None,
            transport_cost: None,
            key_frames: Vec::new(),
            plan_csv: None,
            ranking_csv: None,
        },
        fused: None,
    }
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {jobs} workers: {e}")))
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut json = serde_json::to_string_pretty(value).map_err(|e| CliError::Data(e.to_string()))?;
    json.push('\n');
    write_atomic(path, json.as_bytes())?;
    Ok(())
}

/// Aligns every sample of `manifest`, writing per-sample CSVs and
/// `summary.json` under `out`. `jobs = 0` uses one worker per core.
pub fn run_align(cfg: &PipelineConfig, manifest: &Path, out: &Path, jobs: usize) -> Result<AlignRun, CliError> {
    cfg.validate()?;
    let samples = load_manifest(manifest)?;
    ensure_dir(out)?;
    let aligned: Vec<Aligned> = pool(jobs)?.install(|| {
        samples
            .par_iter()
            .map(|s| align_sample(cfg, s, out).unwrap_or_else(|e| failed(s, e)))
            .collect()
    });
    let summary = Summary::from_reports(aligned.iter().map(|a| a.report.clone()).collect());
    write_json(&out.join("summary.json"), &summary)?;
    Ok(AlignRun {
        summary,
        samples: aligned,
    })
}

/// `id,label,f0,…` for every sample with a fused vector.
pub fn write_fused_csv(run: &AlignRun, path: &Path) -> Result<usize, CliError> {
    let dim = run.samples.iter().find_map(|s| s.fused.as_ref().map(Vec::len));
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let err = |e: csv::Error| CliError::Data(e.to_string());
    let mut header = vec!["id".to_string(), "label".to_string()];
    header.extend((0..dim.unwrap_or(0)).map(|k| format!("f{k}")));
    w.write_record(&header).map_err(err)?;
    let mut rows = 0;
    for s in &run.samples {
        if let Some(f) = &s.fused {
            let mut record = vec![s.report.id.clone(), s.report.label.clone()];
            record.extend(f.iter().map(|&v| format_weight(v)));
            w.write_record(&record).map_err(err)?;
            rows += 1;
        }
    }
    let bytes = w.into_inner().map_err(|e| CliError::Data(e.to_string()))?;
    write_atomic(path, &bytes)?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedRow {
    pub id: String,
    pub label: String,
    pub vector: Vec<f64>,
}

pub fn read_fused_csv(path: &Path) -> Result<Vec<FusedRow>, CliError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (n, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        if record.len() < 3 {
            return Err(CliError::Data(format!("{}: row {} has no coordinates", path.display(), n + 1)));
        }
        let vector = record
            .iter()
            .skip(2)
            .map(|v| v.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::Data(format!("{}: row {}: {e}", path.display(), n + 1)))?;
        rows.push(FusedRow {
            id: record[0].to_string(),
            label: record[1].to_string(),
            vector,
        });
    }
    Ok(rows)
}

/// Outcome of a command that writes one file per sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileReport {
    pub id: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub files: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<SampleFailure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileSummary {
    pub samples: usize,
    pub failed: usize,
    pub results: Vec<FileReport>,
}

impl FileSummary {
    fn collect(samples: &[SampleManifest], results: Vec<Result<Vec<String>, SampleFailure>>) -> Self {
        let results: Vec<FileReport> = samples
            .iter()
            .zip(results)
            .map(|(s, r)| match r {
                Ok(files) => FileReport {
                    id: s.id.clone(),
                    files,
                    error: None,
                },
                Err(e) => {
                    log::warn!("{}: {} ({})", s.id, e.message, e.kind);
                    FileReport {
                        id: s.id.clone(),
                        files: Vec::new(),
                        error: Some(e),
                    }
                }
            })
            .collect();
        Self {
            samples: results.len(),
            failed: results.iter().filter(|r| r.error.is_some()).count(),
            results,
        }
    }
}

/// Writes `<id>.saliency.csv` (`frame,row,col,weight`) for every sample.
pub fn run_saliency(cfg: &PipelineConfig, manifest: &Path, out: &Path, jobs: usize) -> Result<FileSummary, CliError> {
    cfg.validate()?;
    let samples = load_manifest(manifest)?;
    ensure_dir(out)?;
    let results = pool(jobs)?.install(|| samples.par_iter().map(|s| saliency_sample(cfg, s, out)).collect());
    Ok(FileSummary::collect(&samples, results))
}

fn saliency_sample(cfg: &PipelineConfig, sample: &SampleManifest, out: &Path) -> Result<Vec<String>, SampleFailure> {
    let Loaded { visual, .. } = load_sample(sample)?;
    let map = saliency_for(cfg, &visual)?;
    let grid = map.grid;
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let csv_err = |e: csv::Error| SampleFailure::data("Io", e.to_string());
    w.write_record(["frame", "row", "col", "weight"]).map_err(csv_err)?;
    for j in 0..grid.len() {
        let (t, h, c) = grid.coords(j);
        w.write_record([t.to_string(), h.to_string(), c.to_string(), format_weight(map.weights[j])])
            .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| SampleFailure::data("Io", e.to_string()))?;
    let name = format!("{}.saliency.csv", file_stem(&sample.id));
    write_atomic(&out.join(&name), &bytes)?;
    Ok(vec![name])
}

/// Reads a plan CSV back into its `tokens × frames` mass matrix.
pub fn read_plan_csv(path: &Path, tokens: &[String]) -> Result<Array2<f64>, SampleFailure> {
    let bad = |m: String| SampleFailure::data("PlanCsv", format!("{}: {m}", path.display()));
    let mut reader = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let mut cells: Vec<(usize, usize, f64)> = Vec::new();
    let mut token_index = 0usize;
    let mut last_frame: Option<usize> = None;
    for record in reader.records() {
        let record = record.map_err(|e| bad(e.to_string()))?;
        if record.len() != 3 {
            return Err(bad(format!("expected 3 columns, got {}", record.len())));
        }
        let frame: usize = record[1].parse().map_err(|e| bad(format!("frame: {e}")))?;
        let weight: f64 = record[2].parse().map_err(|e| bad(format!("weight: {e}")))?;
        // rows are token-major: a frame index that restarts at 0 moves to the next token
        if frame == 0 && last_frame.is_some() {
            token_index += 1;
        }
        last_frame = Some(frame);
        if tokens.get(token_index).map(String::as_str) != Some(&record[0]) {
            return Err(bad(format!("row for token {:?} does not match the manifest", &record[0])));
        }
        cells.push((token_index, frame, weight));
    }
    let frames = cells.iter().map(|c| c.1 + 1).max().unwrap_or(0);
    if cells.is_empty() || token_index + 1 != tokens.len() || cells.len() != tokens.len() * frames {
        return Err(bad(format!("{} rows do not form a {}-token plan", cells.len(), tokens.len())));
    }
    let mut mass = Array2::zeros((tokens.len(), frames));
    for (i, t, w) in cells {
        mass[[i, t]] = w;
    }
    Ok(mass)
}

/// Span weights and stacked-bar SVGs from the plan CSVs of an earlier
/// `align` run in `align_dir`. Samples without spans report one span per
/// token.
pub fn run_report(manifest: &Path, align_dir: &Path, out: &Path) -> Result<FileSummary, CliError> {
    let samples = load_manifest(manifest)?;
    ensure_dir(out)?;
    let results = samples.iter().map(|s| report_sample(s, align_dir, out)).collect();
    Ok(FileSummary::collect(&samples, results))
}

fn report_sample(sample: &SampleManifest, align_dir: &Path, out: &Path) -> Result<Vec<String>, SampleFailure> {
    let stem = file_stem(&sample.id);
    let mass = read_plan_csv(&align_dir.join(format!("{stem}.plan.csv")), &sample.tokens)?;
    let frames = mass.ncols();
    let spans: Vec<Span> = if sample.spans.is_empty() {
        sample
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| Span::new(i, i + 1, t.clone()))
            .collect()
    } else {
        sample.spans.clone()
    };
    let frame_plan = grace_core::ot::TransportPlan::from_coupling(mass)?;
    let weights = aggregate_spans(&frame_plan, &spans, &PatchGrid::new(frames, 1, 1))?;
    let csv_name = format!("{stem}.spans.csv");
    let svg_name = format!("{stem}.spans.svg");
    write_span_csv(&weights, &out.join(&csv_name))?;
    let svg = render_span_svg(&weights, &format!("{} ({})", sample.id, sample.label));
    write_atomic(&out.join(&svg_name), svg.as_bytes())?;
    Ok(vec![csv_name, svg_name])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stems_are_filesystem_safe() {
        assert_eq!(file_stem("anger-001"), "anger-001");
        assert_eq!(file_stem("a/b c"), "a_b_c");
    }

    #[test]
    fn strict_prefers_numerical() {
        let mut s = Summary::from_reports(vec![]);
        assert!(s.strict_error().is_none());
        s.failed = 1;
        assert_eq!(s.strict_error().unwrap().exit_code(), 2);
        s.not_converged = 1;
        assert_eq!(s.strict_error().unwrap().exit_code(), 3);
    }
}
