//! Dense-matrix neural network primitives with hand-written reverse-mode
//! gradients, and the hybrid GRU + feedforward regressor built from them.

pub mod gru;
pub mod layers;
pub mod matrix;
pub mod model;
pub mod serialize;

pub use gru::{gru_backward, gru_forward, Gate, GruCache, GruGrads, GruParams};
pub use layers::{
    concat_backward, concat_forward, dense_backward, dense_forward, dropout_backward,
    dropout_forward, mse_loss, Activation, DenseCache, DenseParams, HIDDEN_ACTIVATION,
};
pub use matrix::Matrix;
pub use model::{init_params, model_forward, Batch, ForwardCache, HybridModel, ModelConfig};
pub use serialize::{load_model, save_model};
