//! Edge-featured graph neural network for binary subject classification.

mod graph;
mod layers;
mod loss;
mod metrics;
mod model;
mod scaler;
mod train;

pub use graph::{edge_drop, BrainGraph, GraphDataset, GraphRecord, MUTANT, WILD_TYPE};
pub use layers::{
    conv_backward, conv_forward, graph_conv, graph_conv_pre_activation, graph_embed, ChannelMode, ConvCache,
    ConvGrads, EdgeChannels, EmbedLayer, GraphConvLayer,
};
pub use loss::{class_weights, weighted_bce, weighted_bce_grad_logit, weighted_bce_logit};
pub use metrics::{evaluate, Metrics, DECISION_THRESHOLD};
pub use model::{mean_weighted_degree, DropoutMasks, GnnArchitecture, GnnForward, GnnGradients, GnnModel, CONV_LAYERS};
pub use scaler::FeatureScaler;
pub use train::{split_cohort, train_gnn, CohortSplit, EpochRecord, TrainConfig, TrainLog};
