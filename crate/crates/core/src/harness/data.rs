use std::path::Path;

use crate::autodiff::Tensor;
use crate::cellgraph::build_knn_graph;
use crate::encoders::GraphInput;
use crate::error::{invalid, Result};
use crate::moe::{InputDims, Modality, ModelInput, Variant};
use crate::synthbench::{load_dataset, MultimodalSample};

use super::folds::{make_folds, Fold, FoldPlan, Split};

/// Samples plus the label space and input widths they share.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub samples: Vec<MultimodalSample>,
    pub classes: usize,
    pub dims: InputDims,
}

impl Dataset {
    /// Infers classes (`max label + 1`, at least 2) and widths from the first sample.
    pub fn from_samples(samples: Vec<MultimodalSample>) -> Result<Self> {
        let first = samples.first().ok_or_else(|| invalid("dataset is empty"))?;
        let dims = InputDims {
            patch: first.patches.first().map_or(0, Vec::len),
            text: first.text.len(),
            node: first.nuclei.first().map_or(0, |n| n.features.len()),
        };
        let classes = samples.iter().map(|s| s.label + 1).max().unwrap_or(0).max(2);
        Ok(Self { samples, classes, dims })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (samples, manifest) = load_dataset(path)?;
        let mut data = Self::from_samples(samples)?;
        if let Some(m) = manifest {
            if m.classes < data.classes {
                return Err(invalid(format!("manifest declares {} classes but labels reach {}", m.classes, data.classes)));
            }
            data.classes = m.classes;
        }
        Ok(data)
    }

    pub fn patient_ids(&self) -> Vec<&str> {
        self.samples.iter().map(|s| s.patient_id.as_str()).collect()
    }

    pub fn fold_plan(&self, seed: u64) -> Result<FoldPlan> {
        make_folds(&self.patient_ids(), seed)
    }

    /// Indices of the samples whose patient falls in `split` of `fold`.
    pub fn indices(&self, fold: &Fold, split: Split) -> Vec<usize> {
        let ids: std::collections::HashSet<&str> = fold.patients(split).iter().map(String::as_str).collect();
        (0..self.samples.len()).filter(|&i| ids.contains(self.samples[i].patient_id.as_str())).collect()
    }
}

/// A sample converted to model input for one variant.
#[derive(Debug, Clone)]
pub struct Case {
    /// Position in the dataset; also keys the perturbation stream.
    pub index: usize,
    pub patient_id: String,
    pub label: usize,
    pub input: ModelInput,
}

/// Builds the inputs the variant reads; empty payloads count as absent.
pub fn prepare(sample: &MultimodalSample, index: usize, variant: &Variant, knn: usize) -> Result<Case> {
    let mut input = ModelInput::default();
    if variant.contains(Modality::Image) && !sample.patches.is_empty() {
        input.patches = Some(Tensor::from_rows(&sample.patches)?);
    }
    if variant.contains(Modality::Text) && !sample.text.is_empty() {
        input.text = Some(sample.text.clone());
    }
    if variant.contains(Modality::Graph) && !sample.nuclei.is_empty() {
        input.graph = Some(GraphInput::from(&build_knn_graph(sample.nuclei.clone(), knn)?));
    }
    Ok(Case { index, patient_id: sample.patient_id.clone(), label: sample.label, input })
}

pub fn prepare_all(data: &Dataset, indices: &[usize], variant: &Variant, knn: usize) -> Result<Vec<Case>> {
    indices.iter().map(|&i| prepare(&data.samples[i], i, variant, knn)).collect()
}
