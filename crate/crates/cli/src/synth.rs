//! Seeded synthetic clips that stand in for encoder outputs.
//!
//! Each category gets a prototype vector shared by its emotion token and by
//! the "expressive" cells of its planted frames. Every other cell carries one
//! shared neutral vector, every other token a per-position filler vector,
//! and everything gets Gaussian noise of scale `sigma`.

use std::path::{Path, PathBuf};

use grace_core::io::{write_atomic, write_embedding, write_manifest, DeclaredDims, SampleManifest};
use grace_core::span::Span;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub categories: usize,
    pub per_category: usize,
    pub frames: usize,
    pub rows: usize,
    pub cols: usize,
    /// Visual channels `D`.
    pub channels: usize,
    /// Tokens per caption `L`.
    pub tokens: usize,
    /// Token embedding width `d`; must equal `channels`.
    pub dim: usize,
    pub planted: usize,
    pub sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            categories: 7,
            per_category: 20,
            frames: 16,
            rows: 2,
            cols: 2,
            channels: 16,
            tokens: 6,
            dim: 16,
            planted: 3,
            sigma: 0.1,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), CliError> {
        let sizes = [
            ("categories", self.categories),
            ("per_category", self.per_category),
            ("frames", self.frames),
            ("rows", self.rows),
            ("cols", self.cols),
            ("channels", self.channels),
            ("tokens", self.tokens),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return Err(CliError::Usage(format!("synth {name} must be at least 1")));
        }
        if self.dim != self.channels {
            return Err(CliError::Usage(format!(
                "synth dim {} must equal channels {} (shared embedding space)",
                self.dim, self.channels
            )));
        }
        if self.planted > self.frames {
            return Err(CliError::Usage(format!(
                "{} planted frames exceed {} frames",
                self.planted, self.frames
            )));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(CliError::Usage(format!("sigma {} must be >= 0", self.sigma)));
        }
        Ok(())
    }

    /// Position of the emotion token in every caption.
    pub fn emotion_token(&self) -> usize {
        self.tokens / 2
    }

    /// Whether cell `(h, w)` of a planted frame carries the category vector:
    /// the bottom row, or the last column of a single-row grid.
    pub fn is_expressive_cell(&self, h: usize, w: usize) -> bool {
        if self.rows > 1 {
            h == self.rows - 1
        } else {
            w == self.cols - 1
        }
    }
}

/// Ground truth kept next to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedTruth {
    pub id: String,
    pub label: String,
    pub planted_frames: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub manifest: PathBuf,
    pub truth: PathBuf,
    pub samples: Vec<SampleManifest>,
    pub planted: Vec<PlantedTruth>,
}

const FILLERS: [&str; 12] = [
    "the", "person", "slowly", "shows", "a", "face", "while", "looking", "ahead", "and", "then", "pauses",
];

fn category_name(labels: &[String], c: usize) -> String {
    labels.get(c).cloned().unwrap_or_else(|| format!("class{c}"))
}

fn draw(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn noisy(base: &[f64], sigma: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    base.iter()
        .map(|b| b + sigma * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect()
}

fn spans_for(spec: &SyntheticSpec) -> Vec<Span> {
    let pos = spec.emotion_token();
    let mut spans = Vec::new();
    if pos > 0 {
        spans.push(Span::new(0, pos, "lead"));
    }
    spans.push(Span::new(pos, pos + 1, "emotion"));
    if pos + 1 < spec.tokens {
        spans.push(Span::new(pos + 1, spec.tokens, "trail"));
    }
    spans
}

/// Writes `manifest.json`, `truth.json` and `emb/*.grce` under `out`.
pub fn synth(spec: &SyntheticSpec, labels: &[String], out: &Path) -> Result<SynthOutput, CliError> {
    spec.validate()?;
    let emb = out.join("emb");
    std::fs::create_dir_all(&emb).map_err(|e| CliError::Data(format!("{}: {e}", emb.display())))?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let d = spec.channels;
    let prototypes: Vec<Vec<f64>> = (0..spec.categories).map(|_| draw(&mut rng, d)).collect();
    let neutral = draw(&mut rng, d);
    let fillers: Vec<Vec<f64>> = (0..spec.tokens).map(|_| draw(&mut rng, d)).collect();
    let pos = spec.emotion_token();
    let spans = spans_for(spec);

    let mut samples = Vec::new();
    let mut planted_truth = Vec::new();
    for c in 0..spec.categories {
        let label = category_name(labels, c);
        for s in 0..spec.per_category {
            let id = format!("{label}-{s:03}");
            let mut planted = rand::seq::index::sample(&mut rng, spec.frames, spec.planted).into_vec();
            planted.sort_unstable();

            let mut visual = Vec::with_capacity(spec.frames * spec.rows * spec.cols * d);
            for t in 0..spec.frames {
                for h in 0..spec.rows {
                    for w in 0..spec.cols {
                        let base = if planted.contains(&t) && spec.is_expressive_cell(h, w) {
                            &prototypes[c]
                        } else {
                            &neutral
                        };
                        visual.extend(noisy(base, spec.sigma, &mut rng));
                    }
                }
            }
            let mut text = Vec::with_capacity(spec.tokens * d);
            let mut tokens = Vec::with_capacity(spec.tokens);
            for k in 0..spec.tokens {
                let base = if k == pos { &prototypes[c] } else { &fillers[k] };
                text.extend(noisy(base, spec.sigma, &mut rng));
                tokens.push(if k == pos {
                    label.clone()
                } else {
                    FILLERS[k % FILLERS.len()].to_string()
                });
            }

            let visual_rel = PathBuf::from("emb").join(format!("{id}.visual.grce"));
            let text_rel = PathBuf::from("emb").join(format!("{id}.text.grce"));
            let visual_dims = [spec.frames, spec.rows, spec.cols, d];
            write_embedding(&out.join(&visual_rel), &visual_dims, &visual)?;
            write_embedding(&out.join(&text_rel), &[spec.tokens, d], &text)?;
            samples.push(SampleManifest {
                id: id.clone(),
                label: label.clone(),
                caption: tokens.join(" "),
                tokens,
                spans: spans.clone(),
                visual_file: visual_rel,
                text_file: text_rel,
                dims: DeclaredDims {
                    visual: visual_dims,
                    text: [spec.tokens, d],
                },
            });
            planted_truth.push(PlantedTruth {
                id,
                label: label.clone(),
                planted_frames: planted,
            });
        }
    }

    let manifest = out.join("manifest.json");
    write_manifest(&manifest, &samples)?;
    let truth = out.join("truth.json");
    let mut json = serde_json::to_string_pretty(&planted_truth).map_err(|e| CliError::Data(e.to_string()))?;
    json.push('\n');
    write_atomic(&truth, json.as_bytes())?;
    Ok(SynthOutput {
        manifest,
        truth,
        samples,
        planted: planted_truth,
    })
}

pub fn load_truth(path: &Path) -> Result<Vec<PlantedTruth>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}
