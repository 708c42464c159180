//! Age approximation: likelihood over defect states, naive Bayes on defect
//! residuals, pixelwise KNN on local windows, and PRNU-based ordering.

mod knn;
mod ml;
mod nb;
mod prnu;

pub use knn::{
    lv_features, pixelwise_knn_classify, pixelwise_knn_train, KnnConfig, KnnPrediction, KnnSample,
    PixelClassifier, PixelwiseKNNModel, FEATURE_DIM,
};
pub use ml::{ml_approximate_age, ml_query_from_image, LikelihoodAgeModel, MlEstimate, MlImageClassifier};
pub use nb::{nb_classify, nb_train, Density, NBModel, NbImageClassifier, NbPrediction, NbVariant, HISTOGRAM_BINS};
pub use prnu::{iip_place, mi_order, prnu_estimate, IipResult, MiOrder, PRNUField, MAX_ORDER_LEN};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{AcquisitionMeta, RasterImage};

/// Anything that maps an image to an age class. External models (an SVM,
/// say) plug into the bias diagnostics through this trait.
pub trait ImageClassifier: Sync {
    fn n_classes(&self) -> usize;

    fn predict(&self, image: &RasterImage, meta: &AcquisitionMeta) -> Result<usize>;

    /// Whether `predict` may run concurrently on several inputs.
    fn reentrant(&self) -> bool {
        false
    }
}

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// On-disk model container.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "estimator", rename_all = "kebab-case")]
pub enum ModelFile {
    Ml {
        format_version: u32,
        model: LikelihoodAgeModel,
        /// Age class of each trusted index.
        class_of_index: Vec<usize>,
        n_classes: usize,
    },
    Nb {
        format_version: u32,
        model: NBModel,
        coords: Vec<crate::imaging::PixelCoord>,
        kernel: usize,
    },
    Knn {
        format_version: u32,
        model: PixelwiseKNNModel,
    },
}

impl ModelFile {
    pub fn format_version(&self) -> u32 {
        match self {
            ModelFile::Ml { format_version, .. }
            | ModelFile::Nb { format_version, .. }
            | ModelFile::Knn { format_version, .. } => *format_version,
        }
    }

    pub fn estimator_name(&self) -> &'static str {
        match self {
            ModelFile::Ml { .. } => "ml",
            ModelFile::Nb { .. } => "nb",
            ModelFile::Knn { .. } => "knn",
        }
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self).expect("model serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut model: ModelFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
            what: "model file",
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        if model.format_version() != MODEL_FORMAT_VERSION {
            return Err(Error::InvalidModel(format!(
                "{}: format_version {} is not supported (expected {MODEL_FORMAT_VERSION})",
                path.display(),
                model.format_version()
            )));
        }
        if let ModelFile::Knn { model, .. } = &mut model {
            model.prepare();
        }
        Ok(model)
    }
}
