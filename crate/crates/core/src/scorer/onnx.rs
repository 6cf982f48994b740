use std::path::{Path, PathBuf};
use std::sync::Arc;

use tract_onnx::prelude::*;

use super::{preprocess, LabelSet, PreprocessSpec, ScoreError, ScoreRequest, ScoreVector, ScorerBackend};

/// How raw model outputs become probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputActivation {
    /// The graph already ends in a softmax.
    #[default]
    Probabilities,
    Softmax,
}

/// Classifier loaded from an ONNX file with a sidecar label file.
///
/// The model takes one `1x3xHxW` float tensor (H, W from the preprocess spec)
/// and returns one score per label.
pub struct OnnxBackend {
    plan: Arc<TypedRunnableModel>,
    labels: LabelSet,
    preprocess: PreprocessSpec,
    activation: OutputActivation,
    model_path: PathBuf,
}

impl std::fmt::Debug for OnnxBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OnnxBackend")
            .field("model_path", &self.model_path)
            .field("labels", &self.labels.len())
            .field("preprocess", &self.preprocess)
            .finish()
    }
}

impl OnnxBackend {
    pub fn load(
        model_path: &Path,
        labels: LabelSet,
        preprocess: PreprocessSpec,
        activation: OutputActivation,
    ) -> Result<Self, ScoreError> {
        let load_err = |e: TractError| ScoreError::Inference(format!("loading {}: {e:#}", model_path.display()));
        let shape = [1, 3, preprocess.target_height as usize, preprocess.target_width as usize];
        let typed = tract_onnx::onnx()
            .model_for_path(model_path)
            .and_then(|m| m.with_input_fact(0, f32::fact(shape).into()))
            .and_then(|m| m.into_optimized())
            .map_err(load_err)?;
        let outputs = typed
            .output_fact(0)
            .ok()
            .and_then(|fact| fact.shape.as_concrete().map(|dims| dims.iter().product::<usize>()));
        if let Some(outputs) = outputs {
            if outputs != labels.len() {
                return Err(ScoreError::LabelCountMismatch {
                    outputs,
                    labels: labels.len(),
                    labels_path: labels.source_name().to_string(),
                });
            }
        }
        let plan = typed.into_runnable().map_err(load_err)?;
        Ok(Self {
            plan,
            labels,
            preprocess,
            activation,
            model_path: model_path.to_path_buf(),
        })
    }

    /// Loads `model.onnx` with the labels from `model.labels` beside it.
    pub fn load_with_sidecar(model_path: &Path, preprocess: PreprocessSpec) -> Result<Self, ScoreError> {
        let labels = LabelSet::from_file(&sidecar_labels_path(model_path))?;
        Self::load(model_path, labels, preprocess, OutputActivation::default())
    }

    pub fn preprocess_spec(&self) -> &PreprocessSpec {
        &self.preprocess
    }

    /// Runs the model on an already preprocessed image.
    pub fn infer(&self, image: &crate::raster::RasterImage) -> Result<ScoreVector, ScoreError> {
        let (w, h) = (self.preprocess.target_width as usize, self.preprocess.target_height as usize);
        if image.width() as usize != w || image.height() as usize != h {
            return Err(ScoreError::Inference(format!(
                "input is {}x{}, model expects {w}x{h}",
                image.width(),
                image.height()
            )));
        }
        let data = self.preprocess.normalize(image);
        let input = Tensor::from_shape(&[1, 3, h, w], &data).map_err(|e| ScoreError::Inference(format!("{e:#}")))?;
        let outputs = self
            .plan
            .run(tvec!(input.into()))
            .map_err(|e| ScoreError::Inference(format!("{e:#}")))?;
        let view = outputs[0]
            .to_plain_array_view::<f32>()
            .map_err(|e| ScoreError::Inference(format!("{e:#}")))?;
        let raw: Vec<f32> = view.iter().copied().collect();
        if raw.len() != self.labels.len() {
            return Err(ScoreError::LabelCountMismatch {
                outputs: raw.len(),
                labels: self.labels.len(),
                labels_path: self.labels.source_name().to_string(),
            });
        }
        let scores = match self.activation {
            OutputActivation::Probabilities => raw,
            OutputActivation::Softmax => softmax(&raw),
        };
        ScoreVector::new(scores)
    }
}

impl ScorerBackend for OnnxBackend {
    fn labels(&self) -> &LabelSet {
        &self.labels
    }

    fn score(&mut self, request: &ScoreRequest<'_>) -> Result<ScoreVector, ScoreError> {
        let input = preprocess(request.image, &self.preprocess);
        self.infer(&input)
    }
}

pub fn sidecar_labels_path(model_path: &Path) -> PathBuf {
    model_path.with_extension("labels")
}

fn softmax(logits: &[f32]) -> Vec<f32> {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let exps: Vec<f32> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f32 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}
