//! Interaction-aware mixture of experts over fusion tokens.
//!
//! A bank of `M + 2` experts (one uniqueness expert per modality, then a
//! synergy and a redundancy expert) is fused by an input-dependent softmax
//! gate. During training every expert is also run on token sets where one
//! modality block has been replaced by random noise, and the interaction
//! loss rewards each expert for the sensitivity pattern of its role.

mod experts;
mod explain;
mod interaction;
mod modality;
mod model;

pub use experts::{
    expert_forward, Backbone, BackboneKind, EarlyFusionNet, ExpertNet, ExpertRole, SwitchGateNet, TokenLayout,
};
pub use explain::ExplainRow;
pub use interaction::{
    fuse, fuse_values, interaction_loss, perturb, perturb_nodes, total_loss, ExpertOutputs, GateNetwork, LossConfig,
    PerturbSeed,
};
pub use modality::{Modality, Variant};
pub use model::{
    argmax, ArchConfig, Head, InputDims, ModelConfig, ModelInput, ModelKind, PathMoe, PredictionRecord, Trace,
};
