//! Black-box predictors f(image) -> real.

mod bridge;
mod oracle;

pub use bridge::{
    serve, BridgeError, BridgeOptions, ExternalPredictor, Handshake, ImagePayload, Request, Response,
    PROTOCOL_VERSION,
};
pub use oracle::{OraclePredictor, SceneLookupOracle, DEFAULT_PRESENCE_THRESHOLD};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scene::Image;

#[derive(Debug, Error)]
pub enum PredictError {
    #[error("image is {got_w}x{got_h}, predictor expects {want_w}x{want_h}")]
    DimensionMismatch { want_w: usize, want_h: usize, got_w: usize, got_h: usize },
    #[error(transparent)]
    Bridge(#[from] BridgeError),
    #[error(transparent)]
    Attribution(#[from] crate::attribution::AttributionError),
    #[error("{0}")]
    Other(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorMeta {
    pub name: String,
    pub output_range: (f64, f64),
    pub is_classifier: bool,
    /// Classifier emits a pre-sigmoid logit instead of a hard label.
    pub raw_logit: bool,
}

/// Deterministic image scorer. Implementations must be safe to call from
/// several threads; stateful transports serialize internally.
pub trait Predictor: Send + Sync {
    fn meta(&self) -> &PredictorMeta;

    fn predict(&self, image: &Image) -> Result<f64, PredictError>;

    fn predict_batch(&self, images: &[Image]) -> Result<Vec<f64>, PredictError> {
        images.iter().map(|img| self.predict(img)).collect()
    }
}

impl<P: Predictor + ?Sized> Predictor for &P {
    fn meta(&self) -> &PredictorMeta {
        (**self).meta()
    }

    fn predict(&self, image: &Image) -> Result<f64, PredictError> {
        (**self).predict(image)
    }

    fn predict_batch(&self, images: &[Image]) -> Result<Vec<f64>, PredictError> {
        (**self).predict_batch(images)
    }
}
