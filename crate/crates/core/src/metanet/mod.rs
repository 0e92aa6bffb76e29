//! Server-side meta network: collaborative memory, item and layer generators,
//! and backpropagation of device gradients into the meta parameters.

mod backprop;
mod generate;
mod params;

pub use backprop::{
    accumulate, backprop_to_theta, regularization, user_theta_gradient, GradPiece,
    UserThetaGrad,
};
pub use generate::{
    collaborative_vector, embed_user, generate_item_embeddings, generate_model,
    generate_rp_layer, GenerationTape, ItemTape, LayerTape,
};
pub use params::{
    ItemGenerator, ItemParams, LayerGenerator, LayerParams, MetaParams, ModelDims, Variant,
    DEFAULT_MEMORY_BUDGET,
};
